//! Generalized gamma hyperpriors on the increment variances.
//!
//! A hyperprior is `π(θ_j) ∝ (θ_j/ϑ_j)^{rβ-1} exp(-(θ_j/ϑ_j)^r)`, parameterized here by
//! `(r, η)` with `η = rβ - 3/2` the focality parameter.

use log::warn;
use nalgebra::{DMatrix, DVector};
use statrs::function::gamma::ln_gamma;

use crate::error::{EitError, Result};
use crate::increments::IncrementOperator;

#[derive(Debug, Clone, PartialEq)]
pub struct HyperParams {
    r: f64,
    eta: f64,
    vartheta: DVector<f64>,
}

impl HyperParams {
    /// Requires `β = (η + 3/2)/r > 0`, and `η > 0` when `r > 0` so the variances have a
    /// positive baseline. For `r < 0` the focality parameter is necessarily below `-3/2`.
    pub fn new(r: f64, eta: f64, vartheta: DVector<f64>) -> Result<Self> {
        if r == 0.0 || !r.is_finite() || !eta.is_finite() {
            return Err(EitError::Config(format!(
                "hyperprior needs a finite nonzero r and finite eta, got r = {r}, eta = {eta}"
            )));
        }
        if r > 0.0 && !(eta > 0.0) {
            return Err(EitError::Config(format!("eta must be positive for r > 0, got {eta}")));
        }
        let beta = (eta + 1.5) / r;
        if !(beta > 0.0) {
            return Err(EitError::Config(format!(
                "shape parameter beta = (eta + 3/2)/r must be positive, got {beta}"
            )));
        }
        if let Some((j, v)) = vartheta.iter().enumerate().find(|(_, &v)| !(v > 0.0) || !v.is_finite()) {
            return Err(EitError::Config(format!("scale {j} must be positive and finite, got {v}")));
        }
        Ok(HyperParams { r, eta, vartheta })
    }

    pub fn r(&self) -> f64 {
        self.r
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn beta(&self) -> f64 {
        (self.eta + 1.5) / self.r
    }

    pub fn vartheta(&self) -> &DVector<f64> {
        &self.vartheta
    }

    pub fn len(&self) -> usize {
        self.vartheta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vartheta.is_empty()
    }

    /// Minimizer of the hyperprior energy alone, `ϑ (η/r)^{1/r}` (the variance at ζ = 0).
    pub fn baseline(&self) -> DVector<f64> {
        let factor = (self.eta / self.r).powf(1.0 / self.r);
        &self.vartheta * factor
    }
}

/// Parameters of the two-phase scheme. Phase 1 always uses `r = 1`; the scales ϑ come
/// from [`sensitivity_scaling`] once the measurement setup is known.
#[derive(Debug, Clone, PartialEq)]
pub struct HybridSchedule {
    pub eta1: f64,
    pub r2: f64,
    pub vartheta_star: f64,
    pub k_max1: usize,
    pub k_max2: usize,
    /// Stop a phase once the relative variance change drops below this.
    pub tol: f64,
    pub inner_linearizations: usize,
}

impl Default for HybridSchedule {
    fn default() -> Self {
        HybridSchedule {
            eta1: 3e-4,
            r2: 0.5,
            vartheta_star: 0.03,
            k_max1: 5,
            k_max2: 5,
            tol: 0.0,
            inner_linearizations: 2,
        }
    }
}

impl HybridSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.r2 > 0.0 && self.r2 <= 1.0) && self.r2 != -1.0 {
            return Err(EitError::Config(format!(
                "phase-2 r must lie in (0, 1] or equal -1, got {}",
                self.r2
            )));
        }
        if !(self.eta1 > 0.0) {
            return Err(EitError::Config(format!("eta1 must be positive, got {}", self.eta1)));
        }
        if !(self.vartheta_star > 0.0) || !self.vartheta_star.is_finite() {
            return Err(EitError::Config(format!(
                "vartheta_star must be positive, got {}",
                self.vartheta_star
            )));
        }
        if self.inner_linearizations == 0 {
            return Err(EitError::Config("at least one inner linearization is required".into()));
        }
        if !(self.tol >= 0.0) {
            return Err(EitError::Config(format!("tolerance must be nonnegative, got {}", self.tol)));
        }
        Ok(())
    }

    /// Phase-1 and phase-2 hyperparameters for the given scales.
    pub fn resolve(&self, vartheta: DVector<f64>) -> Result<(HyperParams, HyperParams)> {
        self.validate()?;
        let phase1 = HyperParams::new(1.0, self.eta1, vartheta)?;
        let phase2 = match_phase2(&phase1, self.r2)?;
        Ok((phase1, phase2))
    }
}

/// Scales `ϑ_j = ϑ* / ‖c_j‖²`, where `c_j` is the column of `DF(0) L†` for increment `j`.
/// `jacobian` is the forward Jacobian with respect to ξ at the homogeneous background.
pub fn sensitivity_scaling(
    jacobian: &DMatrix<f64>,
    op: &IncrementOperator,
    vartheta_star: f64,
) -> Result<DVector<f64>> {
    if !(vartheta_star > 0.0) || !vartheta_star.is_finite() {
        return Err(EitError::Config(format!(
            "vartheta_star must be positive, got {vartheta_star}"
        )));
    }
    if jacobian.ncols() != op.n_cols() {
        return Err(EitError::Config(format!(
            "Jacobian has {} columns, increment operator has {}",
            jacobian.ncols(),
            op.n_cols()
        )));
    }
    // (J M⁻¹)ᵀ = M⁻¹ Jᵀ since M = LᵀL is symmetric.
    let p = op.normal_solve(&jacobian.transpose())?;
    let l = op.matrix();
    let mut norms = Vec::with_capacity(op.n_rows());
    for r in 0..op.n_rows() {
        let mut sq = 0.0;
        for k in 0..p.ncols() {
            let c: f64 = l.row(r).map(|(i, v)| v * p[(i, k)]).sum();
            sq += c * c;
        }
        norms.push(sq);
    }
    let mut positive: Vec<f64> = norms.iter().copied().filter(|&s| s > 0.0 && s.is_finite()).collect();
    if positive.is_empty() {
        return Err(EitError::Numerical("every increment has zero sensitivity".into()));
    }
    let zero = norms.len() - positive.len();
    positive.sort_by(f64::total_cmp);
    let median = positive[positive.len() / 2];
    if zero > 0 {
        warn!("{zero} increments have zero sensitivity; using the median scaling for them");
    }
    Ok(DVector::from_iterator(
        norms.len(),
        norms
            .iter()
            .map(|&s| vartheta_star / if s > 0.0 && s.is_finite() { s } else { median }),
    ))
}

fn ln_gamma_ratio_target(beta: f64, r: f64) -> f64 {
    // ln[(β - 3/(2r))^{1/r} Γ(β) / Γ(β + 1/r)], with (η/r) = β - 3/(2r).
    (beta - 1.5 / r).ln() / r + ln_gamma(beta) - ln_gamma(beta + 1.0 / r)
}

/// Phase-2 hyperparameters with exponent `r2` that keep the same baseline variance and
/// the same marginal mean of θ as `phase1`.
pub fn match_phase2(phase1: &HyperParams, r2: f64) -> Result<HyperParams> {
    let r1 = phase1.r;
    if r2 == r1 {
        return Ok(phase1.clone());
    }
    if !(r2 > 0.0 && r2 <= 1.0) && r2 != -1.0 {
        return Err(EitError::Config(format!("phase-2 r must lie in (0, 1] or equal -1, got {r2}")));
    }
    let beta1 = phase1.beta();
    let target = ln_gamma_ratio_target(beta1, r1);

    // Γ(β)/Γ(β + 1/r) needs β + 1/r > 0, and (η/r)^{1/r} needs η/r > 0.
    let lower = if r2 > 0.0 { 1.5 / r2 } else { 1.0 / r2.abs() };
    let f = |beta: f64| ln_gamma_ratio_target(beta, r2) - target;
    let mut lo = lower * (1.0 + 1e-14) + 1e-300;
    if f(lo) > 0.0 {
        return Err(EitError::Config(format!(
            "no phase-2 shape parameter: residual positive at the lower bracket end {lo}"
        )));
    }
    let mut hi = 2.0 * lower.max(1.0);
    while f(hi) < 0.0 {
        hi *= 2.0;
        if hi > 1e12 {
            return Err(EitError::Config(format!(
                "no phase-2 shape parameter in [{lo}, {hi}]"
            )));
        }
    }
    for _ in 0..400 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let beta2 = if f(lo).abs() <= f(hi).abs() { lo } else { hi };
    let eta2 = r2 * beta2 - 1.5;
    let scale = (phase1.eta / r1).powf(1.0 / r1) / (eta2 / r2).powf(1.0 / r2);
    HyperParams::new(r2, eta2, &phase1.vartheta * scale)
}

/// Componentwise minimizer of `ζ²/(2θ) + (θ/ϑ)^r - η log(θ/ϑ)` over θ > 0.
pub fn update_theta(zeta: &DVector<f64>, params: &HyperParams) -> Result<DVector<f64>> {
    if zeta.len() != params.len() {
        return Err(EitError::Config(format!(
            "increment vector has length {}, hyperprior has {}",
            zeta.len(),
            params.len()
        )));
    }
    let mut theta = DVector::zeros(zeta.len());
    for j in 0..zeta.len() {
        theta[j] = theta_component(zeta[j], params.vartheta[j], params.r, params.eta)
            .map_err(|e| EitError::Numerical(format!("theta update for increment {j}: {e}")))?;
    }
    Ok(theta)
}

fn theta_component(zeta: f64, vartheta: f64, r: f64, eta: f64) -> std::result::Result<f64, String> {
    if !zeta.is_finite() {
        return Err(format!("non-finite increment {zeta}"));
    }
    let c = zeta * zeta / (2.0 * vartheta);
    if r == 1.0 {
        return Ok(vartheta * (0.5 * eta + (0.25 * eta * eta + c).sqrt()));
    }
    if r == -1.0 {
        let beta = -(eta + 1.5);
        return Ok((0.5 * zeta * zeta + vartheta) / (beta + 1.5));
    }
    solve_stationarity(c, r, eta).map(|t| vartheta * t)
}

/// Root of `r t^r - η - c/t` in `t = θ/ϑ`. The function is increasing in t, so a
/// bracket plus safeguarded Newton in `s = ln t` converges globally.
fn solve_stationarity(c: f64, r: f64, eta: f64) -> std::result::Result<f64, String> {
    let h = |s: f64| r * (r * s).exp() - eta - c * (-s).exp();
    let dh = |s: f64| r * r * (r * s).exp() + c * (-s).exp();
    let base = (eta / r).ln() / r;
    if c == 0.0 {
        return Ok(base.exp());
    }
    let mut lo = base;
    let mut hi = base + 1.0;
    while h(hi) <= 0.0 {
        hi = lo + 2.0 * (hi - lo);
        if hi > 1e3 {
            return Err("could not bracket the stationary point".into());
        }
    }
    while h(lo) > 0.0 {
        lo -= 2.0 * (hi - lo);
        if lo < -1e3 {
            return Err("could not bracket the stationary point".into());
        }
    }
    let mut s = {
        let t1 = 0.5 * eta + (0.25 * eta * eta + c).sqrt();
        let s1 = t1.ln();
        if s1 > lo && s1 < hi { s1 } else { 0.5 * (lo + hi) }
    };
    for _ in 0..200 {
        let v = h(s);
        if v == 0.0 {
            return Ok(s.exp());
        }
        if v < 0.0 {
            lo = s;
        } else {
            hi = s;
        }
        let newton = s - v / dh(s);
        let next = if newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
        if (next - s).abs() <= 1e-13 * next.abs().max(1.0) || hi - lo <= 1e-13 * lo.abs().max(1.0) {
            return Ok(next.exp());
        }
        s = next;
    }
    Err(format!("Newton iteration did not converge for c = {c}, r = {r}, eta = {eta}"))
}

/// `½‖residual‖²/ω² + ½Σζ²/θ + Σ(θ/ϑ)^r - ηΣlog(θ/ϑ)`.
pub fn gibbs_energy(
    zeta: &DVector<f64>,
    theta: &DVector<f64>,
    params: &HyperParams,
    residual: &DVector<f64>,
    noise_scale: f64,
) -> Result<f64> {
    if zeta.len() != theta.len() || theta.len() != params.len() {
        return Err(EitError::Config("increment, variance and scale lengths differ".into()));
    }
    if !(noise_scale > 0.0) {
        return Err(EitError::Config(format!("noise scale must be positive, got {noise_scale}")));
    }
    if let Some((j, t)) = theta.iter().enumerate().find(|(_, &t)| !(t > 0.0)) {
        return Err(EitError::Domain(format!("variance {j} must be positive, got {t}")));
    }
    let misfit = 0.5 * residual.norm_squared() / (noise_scale * noise_scale);
    let mut prior = 0.0;
    for j in 0..zeta.len() {
        let ratio = theta[j] / params.vartheta[j];
        prior += 0.5 * zeta[j] * zeta[j] / theta[j] + ratio.powf(params.r) - params.eta * ratio.ln();
    }
    Ok(misfit + prior)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(r: f64, eta: f64, n: usize) -> HyperParams {
        HyperParams::new(r, eta, DVector::from_element(n, 1.0)).unwrap()
    }

    #[test]
    fn zero_increment_gives_baseline() {
        let p = HyperParams::new(1.0, 3e-4, DVector::from_vec(vec![0.5, 2.0])).unwrap();
        let theta = update_theta(&DVector::zeros(2), &p).unwrap();
        assert!((theta - p.baseline()).amax() < 1e-18);
        assert!((p.baseline()[1] - 6e-4).abs() < 1e-18);
    }

    #[test]
    fn closed_form_example() {
        let theta = update_theta(&DVector::from_element(1, 4.0), &params(1.0, 1.0, 1)).unwrap();
        assert!((theta[0] - 3.372281323269).abs() < 1e-9);
    }

    #[test]
    fn newton_agrees_with_closed_forms() {
        // Disguise r = 1 and r = -1 as generic exponents to exercise the iterative path.
        for &(r, eta) in &[(1.0, 0.3), (-1.0, -4.0)] {
            for &zeta in &[0.0, 1e-3, 0.7, 20.0] {
                let c = zeta * zeta / 2.0;
                let closed = theta_component(zeta, 1.0, r, eta).unwrap();
                let newton = solve_stationarity(c, r, eta).unwrap();
                assert!((closed - newton).abs() <= 1e-12 * closed, "r {r} zeta {zeta}");
            }
        }
    }

    #[test]
    fn parameters_are_validated() {
        assert!(HyperParams::new(0.0, 1.0, DVector::from_element(1, 1.0)).is_err());
        assert!(HyperParams::new(0.5, -0.1, DVector::from_element(1, 1.0)).is_err());
        assert!(HyperParams::new(-1.0, -1.0, DVector::from_element(1, 1.0)).is_err());
        assert!(HyperParams::new(1.0, 1.0, DVector::from_element(1, 0.0)).is_err());
        let p = HyperParams::new(-1.0, -4.0, DVector::from_element(1, 1.0)).unwrap();
        assert!((p.beta() - 2.5).abs() < 1e-15);
    }

    #[test]
    fn gibbs_energy_at_scale_equals_count() {
        let p = params(0.5, 0.2, 7);
        let g = gibbs_energy(
            &DVector::zeros(7),
            &DVector::from_element(7, 1.0),
            &p,
            &DVector::zeros(3),
            0.004,
        )
        .unwrap();
        assert!((g - 7.0).abs() < 1e-14);
    }

    #[test]
    fn doubling_noise_quarters_misfit() {
        let p = params(1.0, 0.1, 2);
        let z = DVector::zeros(2);
        let t = DVector::from_element(2, 1.0);
        let res = DVector::from_vec(vec![0.3, -0.1]);
        let misfit = |w: f64| {
            gibbs_energy(&z, &t, &p, &res, w).unwrap() - gibbs_energy(&z, &t, &p, &DVector::zeros(2), w).unwrap()
        };
        assert!((misfit(0.004) / misfit(0.008) - 4.0).abs() < 1e-12);
    }

    #[test]
    fn phase2_matching_keeps_identity() {
        let p = params(1.0, 3e-4, 3);
        assert_eq!(match_phase2(&p, 1.0).unwrap(), p);
        let q = match_phase2(&p, 0.5).unwrap();
        assert!(q.eta() > 0.0);
        assert!((q.baseline() - p.baseline()).amax() < 1e-12 * p.baseline().amax());
    }

    #[test]
    fn schedule_rejects_bad_exponent() {
        let s = HybridSchedule { r2: 1.5, ..HybridSchedule::default() };
        assert!(s.validate().is_err());
        assert!(HybridSchedule::default().validate().is_ok());
    }
}
