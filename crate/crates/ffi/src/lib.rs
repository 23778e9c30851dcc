//! C ABI over `eit_ias`.
//!
//! Objects cross the boundary as opaque handles created by `*_new`/`*_load` functions and
//! released by the matching `*_free`. Every fallible call returns an [`EitStatus`]; on failure
//! [`eit_last_error`] gives a message for the calling thread. Arrays are passed as pointer plus
//! length and the length is always checked.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use eit_ias::cem::{CemModel, CurrentFrame, MeasurementPattern};
use eit_ias::hyperprior::{update_theta, HybridSchedule, HyperParams};
use eit_ias::ias::{run_hybrid, InverseProblem, Route};
use eit_ias::mesh::{generate_disk_mesh, ElectrodeLayout, Mesh};
use eit_ias::sim::ktc_injection_schedule;
use eit_ias::EitError;
use nalgebra::DVector;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EitStatus {
    Ok = 0,
    NullPointer = 1,
    Config = 2,
    Parse = 3,
    Validation = 4,
    Domain = 5,
    Numerical = 6,
    Io = 7,
    /// An array argument has the wrong length.
    Length = 8,
    /// A Rust panic was caught at the boundary.
    Panic = 9,
}

impl From<&EitError> for EitStatus {
    fn from(e: &EitError) -> Self {
        match e {
            EitError::Config(_) => EitStatus::Config,
            EitError::Parse { .. } => EitStatus::Parse,
            EitError::Validation(_) => EitStatus::Validation,
            EitError::Domain(_) => EitStatus::Domain,
            EitError::Numerical(_) => EitStatus::Numerical,
            EitError::Io { .. } => EitStatus::Io,
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = c);
}

struct Failure(EitStatus, String);

impl From<EitError> for Failure {
    fn from(e: EitError) -> Self {
        Failure((&e).into(), e.to_string())
    }
}

/// Runs `f`, recording any error or panic for [`eit_last_error`].
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> EitStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error(String::new());
            EitStatus::Ok
        }
        Ok(Err(Failure(status, message))) => {
            set_error(message);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            EitStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(EitStatus::NullPointer, format!("{what} is null"))
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn slice<'a>(p: *const f64, len: usize, want: usize, what: &str) -> Result<&'a [f64], Failure> {
    if len != want {
        return Err(Failure(EitStatus::Length, format!("{what} has length {len}, expected {want}")));
    }
    if want == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a>(p: *mut f64, len: usize, want: usize, what: &str) -> Result<&'a mut [f64], Failure> {
    if len != want {
        return Err(Failure(EitStatus::Length, format!("{what} has length {len}, expected {want}")));
    }
    if want == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn store<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null("output handle pointer"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

/// Message for the most recent failure on this thread; empty after a success. The pointer
/// stays valid until the next call into this library from the same thread.
#[no_mangle]
pub extern "C" fn eit_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Triangulated disk with electrodes and interior/boundary node labels.
pub struct EitMesh(Mesh);

/// Unit-disk mesh with 32 electrodes in the challenge layout and target edge length `h`.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn eit_mesh_generate(h: f64, out: *mut *mut EitMesh) -> EitStatus {
    guard(|| {
        let mesh = generate_disk_mesh(1.0, h, &ElectrodeLayout::ktc())?;
        store(out, EitMesh(mesh))
    })
}

/// Reads a mesh in the text format written by the `eit-ias mesh` command.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` as for [`eit_mesh_generate`].
#[no_mangle]
pub unsafe extern "C" fn eit_mesh_load(path: *const c_char, out: *mut *mut EitMesh) -> EitStatus {
    guard(|| {
        if path.is_null() {
            return Err(null("path"));
        }
        let path = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| Failure(EitStatus::Config, "path is not valid UTF-8".into()))?;
        store(out, EitMesh(Mesh::load(Path::new(path))?))
    })
}

/// # Safety
/// `mesh` must be null or a handle from this library that has not been freed.
#[no_mangle]
pub unsafe extern "C" fn eit_mesh_free(mesh: *mut EitMesh) {
    if !mesh.is_null() {
        drop(Box::from_raw(mesh));
    }
}

/// # Safety
/// `mesh` must be a live handle; `nodes`, `interior` and `electrodes` may each be null.
#[no_mangle]
pub unsafe extern "C" fn eit_mesh_sizes(
    mesh: *const EitMesh,
    nodes: *mut usize,
    interior: *mut usize,
    electrodes: *mut usize,
) -> EitStatus {
    guard(|| {
        let m = &deref(mesh, "mesh")?.0;
        for (p, v) in [(nodes, m.nodes().len()), (interior, m.n_interior()), (electrodes, m.n_electrodes())] {
            if let Some(p) = p.as_mut() {
                *p = v;
            }
        }
        Ok(())
    })
}

/// Forward model with the injection and measurement schedule of one electrode level.
pub struct EitForward {
    model: CemModel,
    currents: CurrentFrame,
    meas: MeasurementPattern,
}

impl EitForward {
    fn data_len(&self) -> usize {
        self.currents.n_injections() * self.meas.n_rows()
    }
}

/// Complete electrode model on `mesh` (copied) with background `sigma0`, one contact
/// impedance per electrode, and the schedule for `level` active electrodes
/// (32, 30, 28, 26, 24, 22 or 20) at current `amplitude`.
///
/// # Safety
/// `mesh` must be live; `z` must point to `n_z` doubles; `out` as for [`eit_mesh_generate`].
#[no_mangle]
pub unsafe extern "C" fn eit_forward_new(
    mesh: *const EitMesh,
    sigma0: f64,
    z: *const f64,
    n_z: usize,
    level: usize,
    amplitude: f64,
    out: *mut *mut EitForward,
) -> EitStatus {
    guard(|| {
        let m = &deref(mesh, "mesh")?.0;
        let z = slice(z, n_z, m.n_electrodes(), "contact impedances")?;
        let model = CemModel::new(m, sigma0, z.to_vec())?;
        let (currents, meas, _) = ktc_injection_schedule(level, amplitude)?;
        if currents.n_electrodes() != model.n_electrodes() {
            return Err(Failure(
                EitStatus::Config,
                format!("schedule needs {} electrodes, mesh has {}", currents.n_electrodes(), model.n_electrodes()),
            ));
        }
        store(out, EitForward { model, currents, meas })
    })
}

/// # Safety
/// `forward` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn eit_forward_free(forward: *mut EitForward) {
    if !forward.is_null() {
        drop(Box::from_raw(forward));
    }
}

/// Number of measurements `m` and of conductivity unknowns `n` (interior nodes).
///
/// # Safety
/// `forward` must be live; `m` and `n` may be null.
#[no_mangle]
pub unsafe extern "C" fn eit_forward_sizes(forward: *const EitForward, m: *mut usize, n: *mut usize) -> EitStatus {
    guard(|| {
        let f = deref(forward, "forward model")?;
        if let Some(m) = m.as_mut() {
            *m = f.data_len();
        }
        if let Some(n) = n.as_mut() {
            *n = f.model.n_interior();
        }
        Ok(())
    })
}

/// Predicted measurements at conductivity `sigma0 + xi`.
///
/// # Safety
/// `xi` must hold `n` doubles and `data` must have room for `m`, with sizes from
/// [`eit_forward_sizes`].
#[no_mangle]
pub unsafe extern "C" fn eit_forward_eval(
    forward: *const EitForward,
    xi: *const f64,
    n: usize,
    data: *mut f64,
    m: usize,
) -> EitStatus {
    guard(|| {
        let f = deref(forward, "forward model")?;
        let xi = DVector::from_column_slice(slice(xi, n, f.model.n_interior(), "xi")?);
        let out = slice_mut(data, m, f.data_len(), "data")?;
        let v = f.model.forward(&xi, &f.currents, &f.meas)?;
        out.copy_from_slice(v.as_slice());
        Ok(())
    })
}

/// Measurements and their Jacobian, written column-major into `jacobian` (`m * n` doubles).
/// `data` may be null when only the Jacobian is wanted.
///
/// # Safety
/// As for [`eit_forward_eval`]; `jacobian` must have room for `m * n` doubles.
#[no_mangle]
pub unsafe extern "C" fn eit_forward_jacobian(
    forward: *const EitForward,
    xi: *const f64,
    n: usize,
    data: *mut f64,
    m: usize,
    jacobian: *mut f64,
    jacobian_len: usize,
) -> EitStatus {
    guard(|| {
        let f = deref(forward, "forward model")?;
        let xi = DVector::from_column_slice(slice(xi, n, f.model.n_interior(), "xi")?);
        let jac = slice_mut(jacobian, jacobian_len, f.data_len() * n, "jacobian")?;
        let r = f.model.forward_with_jacobian(&xi, &f.currents, &f.meas)?;
        jac.copy_from_slice(r.jacobian.as_slice());
        if !data.is_null() {
            slice_mut(data, m, f.data_len(), "data")?.copy_from_slice(r.voltages.as_slice());
        }
        Ok(())
    })
}

/// Closed-form or Newton variance update `θ_j = argmin` of the per-increment Gibbs energy
/// for hyperprior exponent `r`, focality `eta` and scales `vartheta`.
///
/// # Safety
/// `zeta`, `vartheta` and `theta` must each hold `n` doubles.
#[no_mangle]
pub unsafe extern "C" fn eit_theta_update(
    zeta: *const f64,
    vartheta: *const f64,
    n: usize,
    r: f64,
    eta: f64,
    theta: *mut f64,
) -> EitStatus {
    guard(|| {
        let zeta = DVector::from_column_slice(slice(zeta, n, n, "zeta")?);
        let vartheta = DVector::from_column_slice(slice(vartheta, n, n, "vartheta")?);
        let out = slice_mut(theta, n, n, "theta")?;
        let params = HyperParams::new(r, eta, vartheta)?;
        out.copy_from_slice(update_theta(&zeta, &params)?.as_slice());
        Ok(())
    })
}

/// Two-phase schedule; obtain defaults from [`eit_schedule_default`].
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct EitSchedule {
    pub eta1: f64,
    pub r2: f64,
    pub vartheta_star: f64,
    pub k_max1: usize,
    pub k_max2: usize,
    pub tol: f64,
    pub inner_linearizations: usize,
}

impl From<EitSchedule> for HybridSchedule {
    fn from(s: EitSchedule) -> Self {
        HybridSchedule {
            eta1: s.eta1,
            r2: s.r2,
            vartheta_star: s.vartheta_star,
            k_max1: s.k_max1,
            k_max2: s.k_max2,
            tol: s.tol,
            inner_linearizations: s.inner_linearizations,
        }
    }
}

#[no_mangle]
pub extern "C" fn eit_schedule_default() -> EitSchedule {
    let s = HybridSchedule::default();
    EitSchedule {
        eta1: s.eta1,
        r2: s.r2,
        vartheta_star: s.vartheta_star,
        k_max1: s.k_max1,
        k_max2: s.k_max2,
        tol: s.tol,
        inner_linearizations: s.inner_linearizations,
    }
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct EitReport {
    pub iterations: usize,
    /// 0 for the primal normal equations, 1 for the adjoint route.
    pub route: u32,
    pub final_delta_theta: f64,
    pub seconds: f64,
}

/// Hybrid IAS reconstruction of `xi` from `data` with noise level `omega`.
/// `schedule` and `report` may be null; null selects the default schedule.
///
/// # Safety
/// `data` must hold `m` and `xi` `n` doubles, with sizes from [`eit_forward_sizes`].
#[no_mangle]
pub unsafe extern "C" fn eit_reconstruct(
    forward: *const EitForward,
    data: *const f64,
    m: usize,
    omega: f64,
    schedule: *const EitSchedule,
    xi: *mut f64,
    n: usize,
    report: *mut EitReport,
) -> EitStatus {
    guard(|| {
        let f = deref(forward, "forward model")?;
        let data = DVector::from_column_slice(slice(data, m, f.data_len(), "data")?);
        let out = slice_mut(xi, n, f.model.n_interior(), "xi")?;
        let schedule: HybridSchedule = schedule.as_ref().copied().map_or_else(HybridSchedule::default, Into::into);
        let model = CemModel::new(f.model.mesh(), f.model.sigma0(), f.model.contact_impedance().to_vec())?;
        let problem = InverseProblem::new(model, f.currents.clone(), f.meas.clone(), data, omega)?;
        let r = run_hybrid(&schedule, &problem)?;
        out.copy_from_slice(r.xi.as_slice());
        if let Some(rep) = report.as_mut() {
            *rep = EitReport {
                iterations: r.history.len(),
                route: match r.route {
                    Route::Primal => 0,
                    Route::Adjoint => 1,
                },
                final_delta_theta: r.history.last().map_or(f64::NAN, |h| h.delta_theta),
                seconds: r.timings.total.as_secs_f64(),
            };
        }
        Ok(())
    })
}
