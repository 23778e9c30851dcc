//! Iterative alternating sequential minimization of the Gibbs energy.
//!
//! Each outer iteration updates the increments by a few linearized least-squares solves
//! in whitened coordinates `α = D_θ^{-1/2} ζ`, then updates the variances in closed form
//! (or by a scalar root find). Increments are never stored: `ζ = Lξ` on demand.

use std::fmt::Write as _;
use std::time::{Duration, Instant};

use log::{debug, info};
use nalgebra::{DMatrix, DVector};

use crate::cem::{CemModel, CurrentFrame, ForwardTimings, MeasurementPattern};
use crate::error::{EitError, Result};
use crate::hyperprior::{gibbs_energy, match_phase2, sensitivity_scaling, update_theta, HybridSchedule, HyperParams};
use crate::increments::{IncrementOperator, WhitenedIncrements};

/// Which linear system a ζ-update solves.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Route {
    /// `(AᵀA + I_N) α = Aᵀy`.
    Primal,
    /// `(AAᵀ + I_m) w = y`, `α = Aᵀw`.
    Adjoint,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RoutePolicy {
    /// Adjoint when `m < N`, primal otherwise.
    #[default]
    Auto,
    Force(Route),
}

impl RoutePolicy {
    pub fn select(self, m: usize, n_increments: usize) -> Route {
        match self {
            RoutePolicy::Auto if m < n_increments => Route::Adjoint,
            RoutePolicy::Auto => Route::Primal,
            RoutePolicy::Force(r) => r,
        }
    }
}

/// Everything fixed during one reconstruction.
pub struct InverseProblem {
    pub model: CemModel,
    pub increments: IncrementOperator,
    pub currents: CurrentFrame,
    pub meas: MeasurementPattern,
    pub data: DVector<f64>,
    /// Noise standard deviation ω, with `Σ = ω² I`.
    pub noise_scale: f64,
    pub route: RoutePolicy,
}

impl InverseProblem {
    pub fn new(
        model: CemModel,
        currents: CurrentFrame,
        meas: MeasurementPattern,
        data: DVector<f64>,
        noise_scale: f64,
    ) -> Result<Self> {
        let increments = IncrementOperator::build(model.mesh())?;
        let expected = currents.n_injections() * meas.n_rows();
        if data.len() != expected {
            return Err(EitError::Config(format!(
                "data vector has {} entries, the measurement setup produces {expected}",
                data.len()
            )));
        }
        if !(noise_scale > 0.0) || !noise_scale.is_finite() {
            return Err(EitError::Config(format!(
                "noise scale must be positive, got {noise_scale}"
            )));
        }
        if currents.n_electrodes() != model.n_electrodes() || meas.n_electrodes() != model.n_electrodes() {
            return Err(EitError::Config(format!(
                "patterns do not match the {} electrodes of the mesh",
                model.n_electrodes()
            )));
        }
        Ok(InverseProblem {
            model,
            increments,
            currents,
            meas,
            data,
            noise_scale,
            route: RoutePolicy::Auto,
        })
    }

    pub fn n_data(&self) -> usize {
        self.data.len()
    }

    pub fn n_increments(&self) -> usize {
        self.increments.n_rows()
    }

    pub fn active_route(&self) -> Route {
        self.route.select(self.n_data(), self.n_increments())
    }
}

/// Solution of one linearized ζ-subproblem.
#[derive(Debug, Clone)]
pub struct LinearStep {
    pub alpha: DVector<f64>,
    pub xi: DVector<f64>,
    pub route: Route,
}

/// Solves `min ½‖y - Aα‖² + ½‖α‖²` with `A = (1/ω) J L_θ†`, where `y` is already scaled
/// by `1/ω`. Uses `Q = (L_θᵀL_θ)⁻¹Jᵀ`, so `AAᵀ = JQ/ω²` and `AᵀA = L_θ QQᵀ L_θᵀ/ω²`.
pub fn linearized_step(
    jacobian: &DMatrix<f64>,
    whitened: &WhitenedIncrements<'_>,
    y: &DVector<f64>,
    noise_scale: f64,
    route: Route,
) -> Result<LinearStep> {
    if jacobian.nrows() != y.len() {
        return Err(EitError::Config(format!(
            "Jacobian has {} rows, data has {}",
            jacobian.nrows(),
            y.len()
        )));
    }
    let inv_w = 1.0 / noise_scale;
    let q = whitened.normal_solve(&jacobian.transpose())?;
    match route {
        Route::Adjoint => {
            let mut g = jacobian * &q;
            g *= inv_w * inv_w;
            for i in 0..g.nrows() {
                g[(i, i)] += 1.0;
            }
            let w = g
                .cholesky()
                .ok_or_else(|| EitError::Numerical("adjoint system is not positive definite".into()))?
                .solve(y);
            let qw = &q * w;
            let alpha = whitened.apply(&qw)? * inv_w;
            // ξ = L_θ†α collapses to Qw/ω because L_θ has full column rank.
            Ok(LinearStep { alpha, xi: qw * inv_w, route })
        }
        Route::Primal => {
            let lq = whitened.apply_dense(&q);
            let mut h = &lq * lq.transpose();
            h *= inv_w * inv_w;
            for i in 0..h.nrows() {
                h[(i, i)] += 1.0;
            }
            let rhs = &lq * y * inv_w;
            let alpha = h
                .cholesky()
                .ok_or_else(|| EitError::Numerical("normal equations are not positive definite".into()))?
                .solve(&rhs);
            let xi = whitened.pseudoinverse_apply(&alpha)?;
            Ok(LinearStep { alpha, xi, route })
        }
    }
}

/// Wall-clock split of a reconstruction.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct IasTimings {
    pub forward: ForwardTimings,
    /// Whitening factorizations and the dense ζ-update systems.
    pub linear_algebra: Duration,
    pub total: Duration,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    /// 1-based, counted across both phases.
    pub iteration: usize,
    pub phase: u8,
    /// Energy at the new `(ζ, θ)`.
    pub gibbs_energy: f64,
    /// Energy at the new ζ with the previous θ.
    pub gibbs_before_theta: f64,
    pub delta_theta: f64,
    /// Forward-and-Jacobian solves spent on the ζ-update.
    pub linearizations: usize,
    pub seconds: f64,
    pub route: Route,
    pub clamped_nodes: usize,
}

#[derive(Debug, Clone)]
pub struct IasState {
    pub xi: DVector<f64>,
    pub theta: DVector<f64>,
    pub phase: u8,
    pub iteration: usize,
    pub history: Vec<IterationRecord>,
    pub timings: IasTimings,
}

impl IasState {
    pub fn new(xi: DVector<f64>, theta: DVector<f64>) -> Self {
        IasState {
            xi,
            theta,
            phase: 1,
            iteration: 0,
            history: Vec::new(),
            timings: IasTimings::default(),
        }
    }
}

/// `inner` linearize-and-solve cycles at fixed θ. Returns the new ξ.
pub fn zeta_update(
    problem: &InverseProblem,
    xi: &DVector<f64>,
    theta: &DVector<f64>,
    inner: usize,
    timings: &mut IasTimings,
) -> Result<(DVector<f64>, Route, usize)> {
    if inner == 0 {
        return Err(EitError::Config("at least one inner linearization is required".into()));
    }
    let t = Instant::now();
    let whitened = problem.increments.whiten(theta)?;
    timings.linear_algebra += t.elapsed();
    let route = problem.active_route();
    let mut xi = xi.clone();
    let mut clamped = 0;
    for _ in 0..inner {
        let fr = problem
            .model
            .forward_with_jacobian(&xi, &problem.currents, &problem.meas)?;
        timings.forward += fr.timings;
        clamped = clamped.max(fr.clamped_nodes);
        let t = Instant::now();
        let y = (&problem.data - &fr.voltages + &fr.jacobian * &xi) / problem.noise_scale;
        let step = linearized_step(&fr.jacobian, &whitened, &y, problem.noise_scale, route)?;
        timings.linear_algebra += t.elapsed();
        if step.xi.iter().any(|v| !v.is_finite()) {
            return Err(EitError::Numerical("non-finite conductivity update".into()));
        }
        xi = step.xi;
    }
    Ok((xi, route, clamped))
}

fn residual(problem: &InverseProblem, xi: &DVector<f64>, timings: &mut IasTimings) -> Result<DVector<f64>> {
    let sys = problem.model.assemble(xi)?;
    let t = Instant::now();
    let u = sys.solve_forward(&problem.currents)?;
    let mut ft = sys.timings();
    ft.solves += t.elapsed();
    timings.forward += ft;
    Ok(&problem.data - crate::cem::stack_measurements(&u, &problem.meas))
}

/// Outer iterations with one hyperprior until `δθ < tol` or `k_max` iterations.
pub fn run_phase(
    mut state: IasState,
    params: &HyperParams,
    k_max: usize,
    tol: f64,
    inner: usize,
    problem: &InverseProblem,
) -> Result<IasState> {
    if params.len() != problem.n_increments() || state.theta.len() != params.len() {
        return Err(EitError::Config("hyperparameter and increment counts differ".into()));
    }
    for _ in 0..k_max {
        let start = Instant::now();
        let (xi, route, clamped) = zeta_update(problem, &state.xi, &state.theta, inner, &mut state.timings)?;
        let zeta = problem.increments.apply(&xi)?;
        let theta = update_theta(&zeta, params)?;
        let delta_theta = (&theta - &state.theta).norm() / state.theta.norm();
        let res = residual(problem, &xi, &mut state.timings)?;
        let before = gibbs_energy(&zeta, &state.theta, params, &res, problem.noise_scale)?;
        let energy = gibbs_energy(&zeta, &theta, params, &res, problem.noise_scale)?;
        state.xi = xi;
        state.theta = theta;
        state.iteration += 1;
        let seconds = start.elapsed().as_secs_f64();
        debug!(
            "iteration {} (phase {}): G = {energy:.6e}, dtheta = {delta_theta:.3e}, {seconds:.2} s",
            state.iteration, state.phase
        );
        state.history.push(IterationRecord {
            iteration: state.iteration,
            phase: state.phase,
            gibbs_energy: energy,
            gibbs_before_theta: before,
            delta_theta,
            linearizations: inner,
            seconds,
            route,
            clamped_nodes: clamped,
        });
        if delta_theta < tol {
            break;
        }
    }
    Ok(state)
}

#[derive(Debug, Clone)]
pub struct IasReport {
    pub xi: DVector<f64>,
    pub theta: DVector<f64>,
    /// State at the end of phase 1, kept to compare sparsity across phases.
    pub phase1_xi: DVector<f64>,
    pub phase1_theta: DVector<f64>,
    pub history: Vec<IterationRecord>,
    pub phase1: HyperParams,
    pub phase2: HyperParams,
    pub route: Route,
    pub clamp_warnings: usize,
    pub timings: IasTimings,
}

impl IasReport {
    pub const CSV_HEADER: &'static str =
        "iteration,phase,linearizations,gibbs_energy,delta_theta,route,clamped_nodes,seconds";

    /// One row per outer iteration under [`Self::CSV_HEADER`].
    pub fn diagnostics_csv(&self) -> String {
        let mut out = format!("{}\n", Self::CSV_HEADER);
        for r in &self.history {
            let route = match r.route {
                Route::Primal => "primal",
                Route::Adjoint => "adjoint",
            };
            let _ = writeln!(
                out,
                "{},{},{},{:e},{:e},{route},{},{:.6}",
                r.iteration, r.phase, r.linearizations, r.gibbs_energy, r.delta_theta, r.clamped_nodes, r.seconds
            );
        }
        out
    }
}

/// Sensitivity-scaled phase-1 parameters and the initial state at `ξ = 0`.
fn initialize(schedule: &HybridSchedule, problem: &InverseProblem) -> Result<(HyperParams, HyperParams, IasState)> {
    schedule.validate()?;
    let zero = DVector::zeros(problem.increments.n_cols());
    let fr0 = problem
        .model
        .forward_with_jacobian(&zero, &problem.currents, &problem.meas)?;
    let vartheta = sensitivity_scaling(&fr0.jacobian, &problem.increments, schedule.vartheta_star)?;
    let (phase1, phase2) = schedule.resolve(vartheta)?;
    let mut state = IasState::new(zero, phase1.baseline());
    state.timings.forward += fr0.timings;
    Ok((phase1, phase2, state))
}

fn finish(
    state: IasState,
    phase1_end: (DVector<f64>, DVector<f64>),
    params: (HyperParams, HyperParams),
    problem: &InverseProblem,
    start: Instant,
) -> IasReport {
    let clamp_warnings = state.history.iter().filter(|r| r.clamped_nodes > 0).count();
    let mut timings = state.timings;
    timings.total = start.elapsed();
    IasReport {
        xi: state.xi,
        theta: state.theta,
        phase1_xi: phase1_end.0,
        phase1_theta: phase1_end.1,
        history: state.history,
        phase1: params.0,
        phase2: params.1,
        route: problem.active_route(),
        clamp_warnings,
        timings,
    }
}

/// Phase 1 with `r = 1` from `ξ = 0` and the baseline variances, then phase 2 with the
/// matched generalized gamma hyperprior, starting where phase 1 stopped.
pub fn run_hybrid(schedule: &HybridSchedule, problem: &InverseProblem) -> Result<IasReport> {
    let start = Instant::now();
    let (phase1, phase2, state) = initialize(schedule, problem)?;
    info!(
        "hybrid run: m = {}, N = {}, route {:?}, phase-2 r = {}, beta = {:.6}",
        problem.n_data(),
        problem.n_increments(),
        problem.active_route(),
        phase2.r(),
        phase2.beta()
    );
    let inner = schedule.inner_linearizations;
    let mut state = run_phase(state, &phase1, schedule.k_max1, schedule.tol, inner, problem)?;
    let phase1_end = (state.xi.clone(), state.theta.clone());
    state.phase = 2;
    let state = run_phase(state, &phase2, schedule.k_max2, schedule.tol, inner, problem)?;
    Ok(finish(state, phase1_end, (phase1, phase2), problem, start))
}

/// A single IAS phase with hyperprior exponent `r`, for `k_max1` iterations. For `r ≠ 1` the
/// parameters are matched to the phase-1 gamma hyperprior as in the hybrid scheme.
pub fn run_single_prior(schedule: &HybridSchedule, r: f64, problem: &InverseProblem) -> Result<IasReport> {
    let start = Instant::now();
    let (phase1, _, mut state) = initialize(schedule, problem)?;
    let params = if r == 1.0 { phase1 } else { match_phase2(&phase1, r)? };
    state.theta = params.baseline();
    info!("single-prior run: r = {r}, eta = {:.6e}, route {:?}", params.eta(), problem.active_route());
    let state = run_phase(state, &params, schedule.k_max1, schedule.tol, schedule.inner_linearizations, problem)?;
    let end = (state.xi.clone(), state.theta.clone());
    Ok(finish(state, end, (params.clone(), params), problem, start))
}
