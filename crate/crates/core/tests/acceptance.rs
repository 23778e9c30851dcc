//! Acceptance suite. Every test prints one `PASS`/`FAIL` line with the measured quantity
//! before asserting, so `cargo test --test acceptance -- --nocapture` doubles as a report.
//! Tests hold a global lock: criterion 10 measures wall-clock time and must run alone.

use std::sync::{Mutex, MutexGuard, OnceLock};
use std::time::Instant;

use eit_ias::cem::{CemModel, CurrentFrame, MeasurementPattern};
use eit_ias::cli::{cmd_bench, reconstruct, simulate, Reconstruction};
use eit_ias::config::RunConfig;
use eit_ias::hyperprior::{match_phase2, update_theta, HyperParams};
use eit_ias::ias::{linearized_step, IasReport, InverseProblem, Route};
use eit_ias::mesh::{generate_disk_mesh, ElectrodeLayout, Mesh};
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SIGMA0: f64 = 0.79;
const Z0: f64 = 1e-6;

static SERIAL: Mutex<()> = Mutex::new(());

fn serial() -> MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

fn verdict(criterion: u32, what: &str, pass: bool, detail: String) -> bool {
    println!("{} criterion {criterion:>2}: {what}: {detail}", if pass { "PASS" } else { "FAIL" });
    pass
}

fn disk(h: f64, l: usize) -> Mesh {
    generate_disk_mesh(1.0, h, &ElectrodeLayout::equal_gaps(l)).unwrap()
}

fn random_xi(n: usize, rng: &mut ChaCha8Rng, scale: f64) -> DVector<f64> {
    DVector::from_fn(n, |_, _| scale * SIGMA0 * rng.random_range(-1.0..1.0))
}

fn log_uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    10f64.powf(rng.random_range(lo.log10()..hi.log10()))
}

#[test]
fn criterion_01_adjoint_jacobian_matches_central_differences() {
    let _g = serial();
    let start = Instant::now();
    let mesh = disk(0.19, 8);
    let model = CemModel::new(&mesh, SIGMA0, vec![Z0; 8]).unwrap();
    let frame = CurrentFrame::from_pairs(8, &[(0, 4), (1, 5), (2, 6), (3, 7)], 1e-3).unwrap();
    let meas = MeasurementPattern::adjacent(8).unwrap();
    let step = 1e-5 * SIGMA0;
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst = 0.0f64;
    for _ in 0..3 {
        let xi = random_xi(model.n_interior(), &mut rng, 0.3);
        let jac = model.forward_with_jacobian(&xi, &frame, &meas).unwrap().jacobian;
        for col in 0..xi.len() {
            let (mut plus, mut minus) = (xi.clone(), xi.clone());
            plus[col] += step;
            minus[col] -= step;
            let fd = (model.forward(&plus, &frame, &meas).unwrap() - model.forward(&minus, &frame, &meas).unwrap())
                / (2.0 * step);
            worst = worst.max((jac.column(col) - &fd).norm() / fd.norm());
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = worst < 1e-5 && secs < 30.0;
    let detail = format!("{} nodes, max relative column error {worst:.2e} (< 1e-5), {secs:.1} s (< 30 s)", mesh.nodes().len());
    assert!(verdict(1, "Jacobian vs central differences", pass, detail));
}

#[test]
fn criterion_02_resistance_matrix_is_reciprocal() {
    let _g = serial();
    let mesh = generate_disk_mesh(1.0, 0.12, &ElectrodeLayout::ktc()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    let mut worst = 0.0f64;
    for _ in 0..5 {
        let z: Vec<f64> = (0..32).map(|_| Z0 * rng.random_range(0.5..5.0)).collect();
        let model = CemModel::new(&mesh, SIGMA0, z).unwrap();
        let xi = random_xi(model.n_interior(), &mut rng, 0.6);
        let r = model.assemble(&xi).unwrap().resistance_matrix().unwrap();
        worst = worst.max((&r - r.transpose()).amax() / r.amax());
    }
    let pass = worst < 1e-10;
    assert!(verdict(2, "reciprocity", pass, format!("max relative asymmetry {worst:.2e} (< 1e-10)")));
}

/// `f(s1) - f(s2)` for the θ objective `f(s) = c e^{-s} + e^{rs} - η s` in `s = ln(θ/ϑ)`.
fn objective_difference(s1: f64, s2: f64, c: f64, r: f64, eta: f64) -> f64 {
    let d = s1 - s2;
    c * (-s2).exp() * (-d).exp_m1() + (r * s2).exp() * (r * d).exp_m1() - eta * d
}

fn golden_theta(zeta: f64, vartheta: f64, r: f64, eta: f64) -> f64 {
    let c = zeta * zeta / (2.0 * vartheta);
    let invphi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (-80.0f64, 80.0f64);
    let mut x1 = b - invphi * (b - a);
    let mut x2 = a + invphi * (b - a);
    while b - a > 1e-14 * a.abs().max(b.abs()).max(1.0) {
        if objective_difference(x1, x2, c, r, eta) < 0.0 {
            b = x2;
            x2 = x1;
            x1 = b - invphi * (b - a);
        } else {
            a = x1;
            x1 = x2;
            x2 = a + invphi * (b - a);
        }
    }
    vartheta * (0.5 * (a + b)).exp()
}

#[test]
fn criterion_03_theta_update_matches_golden_section() {
    let _g = serial();
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(103);
    let mut worst = [0.0f64; 3];
    for (k, &r) in [1.0, -1.0, 0.5].iter().enumerate() {
        for _ in 0..1000 {
            let zeta = log_uniform(&mut rng, 1e-6, 10.0) * if rng.random::<bool>() { 1.0 } else { -1.0 };
            let vartheta = log_uniform(&mut rng, 1e-8, 1.0);
            let eta = if r > 0.0 { log_uniform(&mut rng, 1e-6, 1.0) } else { -(rng.random_range(0.1..5.0) + 1.5) };
            let p = HyperParams::new(r, eta, DVector::from_element(1, vartheta)).unwrap();
            let ours = update_theta(&DVector::from_element(1, zeta), &p).unwrap()[0];
            let oracle = golden_theta(zeta, vartheta, r, eta);
            worst[k] = worst[k].max((ours - oracle).abs() / oracle);
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = worst.iter().all(|w| *w < 1e-8) && secs < 5.0;
    let detail = format!(
        "max relative deviation r=1 {:.1e}, r=-1 {:.1e}, r=1/2 {:.1e} (< 1e-8), {secs:.2} s (< 5 s)",
        worst[0], worst[1], worst[2]
    );
    assert!(verdict(3, "theta update vs golden section", pass, detail));
}

fn stirling_ln_gamma(x: f64) -> f64 {
    let mut shift = 0.0;
    let mut y = x;
    while y < 30.0 {
        shift += y.ln();
        y += 1.0;
    }
    let y2 = y * y;
    let series = 1.0 / (12.0 * y) - 1.0 / (360.0 * y * y2) + 1.0 / (1260.0 * y * y2 * y2)
        - 1.0 / (1680.0 * y * y2 * y2 * y2);
    (y - 0.5) * y.ln() - y + 0.5 * (2.0 * std::f64::consts::PI).ln() + series - shift
}

/// `Γ(β + 1/r)/Γ(β)`.
fn gamma_ratio(beta: f64, r: f64) -> f64 {
    match r {
        1.0 => beta,
        0.5 => beta * (beta + 1.0),
        -1.0 => 1.0 / (beta - 1.0),
        _ => (stirling_ln_gamma(beta + 1.0 / r) - stirling_ln_gamma(beta)).exp(),
    }
}

#[test]
fn criterion_04_phase_matching_residuals() {
    let _g = serial();
    let mut rng = ChaCha8Rng::seed_from_u64(104);
    let mut worst = 0.0f64;
    for &eta1 in &[3e-4, 5e-6, 5e-4] {
        let vartheta = DVector::from_fn(8, |_, _| log_uniform(&mut rng, 1e-6, 1e2));
        let p1 = HyperParams::new(1.0, eta1, vartheta).unwrap();
        for &r2 in &[0.5, -1.0, 0.9] {
            let p2 = match_phase2(&p1, r2).unwrap();
            for j in 0..p1.len() {
                let (v1, v2) = (p1.vartheta()[j], p2.vartheta()[j]);
                let mode1 = v1 * p1.eta();
                let mode2 = v2 * (p2.eta() / r2).powf(1.0 / r2);
                let mean1 = v1 * gamma_ratio(p1.beta(), 1.0);
                let mean2 = v2 * gamma_ratio(p2.beta(), r2);
                worst = worst.max((mode1 - mode2).abs() / mode1).max((mean1 - mean2).abs() / mean1);
            }
        }
    }
    let pass = worst < 1e-10;
    assert!(verdict(4, "phase matching", pass, format!("max relative residual {worst:.2e} (< 1e-10)")));
}

fn route_gap(h: f64, skips: &[usize], expect_adjoint: bool) -> (usize, usize, f64) {
    let l = 8;
    let mesh = disk(h, l);
    let model = CemModel::new(&mesh, SIGMA0, vec![Z0; l]).unwrap();
    let pairs: Vec<(usize, usize)> = skips.iter().flat_map(|&d| (0..l).map(move |k| (k, (k + d) % l))).collect();
    let frame = CurrentFrame::from_pairs(l, &pairs, 1e-2).unwrap();
    let meas = MeasurementPattern::adjacent(l).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(105);
    let truth = random_xi(model.n_interior(), &mut rng, 0.2);
    let data = model.forward(&truth, &frame, &meas).unwrap();
    let p = InverseProblem::new(model, frame, meas, data, 1e-3).unwrap();
    assert_eq!(p.n_data() < p.n_increments(), expect_adjoint);
    let xi = random_xi(p.increments.n_cols(), &mut rng, 0.1);
    let theta = DVector::from_fn(p.n_increments(), |_, _| 10f64.powf(rng.random_range(-5.0..-2.0)));
    let fr = p.model.forward_with_jacobian(&xi, &p.currents, &p.meas).unwrap();
    let y = (&p.data - &fr.voltages + &fr.jacobian * &xi) / p.noise_scale;
    let w = p.increments.whiten(&theta).unwrap();
    let primal = linearized_step(&fr.jacobian, &w, &y, p.noise_scale, Route::Primal).unwrap();
    let adjoint = linearized_step(&fr.jacobian, &w, &y, p.noise_scale, Route::Adjoint).unwrap();
    (p.n_data(), p.n_increments(), (&primal.alpha - &adjoint.alpha).norm() / primal.alpha.norm())
}

#[test]
fn criterion_05_primal_and_adjoint_routes_agree() {
    let _g = serial();
    let (m1, n1, scarce) = route_gap(0.25, &[1, 4], true);
    let (m2, n2, plentiful) = route_gap(0.5, &[1, 2, 3, 4], false);
    let pass = scarce < 1e-10 && plentiful < 1e-10;
    let detail = format!("m={m1} < N={n1}: {scarce:.2e}; m={m2} >= N={n2}: {plentiful:.2e} (< 1e-10)");
    assert!(verdict(5, "primal/adjoint alpha", pass, detail));
}

/// The default reconstruction at full data, shared by criteria 6 to 9.
fn default_run() -> &'static (Reconstruction, f64) {
    static RUN: OnceLock<(Reconstruction, f64)> = OnceLock::new();
    RUN.get_or_init(|| {
        let cfg = RunConfig::default();
        let ds = simulate(&cfg).unwrap();
        let start = Instant::now();
        let rec = reconstruct(&cfg, &ds).unwrap();
        (rec, start.elapsed().as_secs_f64())
    })
}

#[test]
fn criterion_06_default_protocol_from_diagnostics() {
    let _g = serial();
    let (rec, _) = default_run();
    let csv = rec.report.diagnostics_csv();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some(IasReport::CSV_HEADER));
    let rows: Vec<Vec<String>> = lines.map(|l| l.split(',').map(str::to_string).collect()).collect();
    let per_phase = |p: &str| rows.iter().filter(|r| r[1] == p).count();
    let inner_ok = rows.iter().all(|r| r[2] == "2");
    let pass = rows.len() == 10 && per_phase("1") == 5 && per_phase("2") == 5 && inner_ok;
    let detail = format!(
        "{} outer iterations ({} + {}), inner linearizations all 2: {inner_ok}",
        rows.len(),
        per_phase("1"),
        per_phase("2")
    );
    assert!(verdict(6, "protocol fidelity", pass, detail));
}

#[test]
fn criterion_07_two_inclusion_reconstruction() {
    let _g = serial();
    let (full, secs32) = default_run();
    let cfg = RunConfig { level: 24, ..RunConfig::default() };
    let ds = simulate(&cfg).unwrap();
    assert_eq!(ds.currents.len(), 44);
    let start = Instant::now();
    let reduced = reconstruct(&cfg, &ds).unwrap();
    let secs24 = start.elapsed().as_secs_f64();
    let (a, b) = (&full.score, &reduced.score);
    let pass = a.ssim_conductive >= 0.6
        && a.ssim_resistive >= 0.6
        && b.ssim_conductive >= 0.5
        && b.ssim_resistive >= 0.5
        && secs32 + secs24 < 600.0;
    let detail = format!(
        "L=32 conductive {:.3} resistive {:.3} (>= 0.6); L=24 conductive {:.3} resistive {:.3} (>= 0.5); {:.1} s (< 600 s)",
        a.ssim_conductive,
        a.ssim_resistive,
        b.ssim_conductive,
        b.ssim_resistive,
        secs32 + secs24
    );
    assert!(verdict(7, "end-to-end SSIM", pass, detail));
}

#[test]
fn criterion_08_hybrid_phase_sparsifies() {
    let _g = serial();
    let (rec, _) = default_run();
    let (phase1, phase2) = rec.significant;
    let pass = phase2 < phase1;
    let detail = format!("|zeta_j| > 1% of max: phase 1 {phase1}, phase 2 {phase2}");
    assert!(verdict(8, "hybrid sparsification", pass, detail));
}

#[test]
fn criterion_09_delta_theta_decreases_within_phases() {
    let _g = serial();
    let (rec, _) = default_run();
    let mut pass = true;
    let mut parts = Vec::new();
    for phase in [1u8, 2] {
        let d: Vec<f64> = rec.report.history.iter().filter(|r| r.phase == phase).map(|r| r.delta_theta).collect();
        let (first, last) = (d[0], d[d.len() - 1]);
        pass &= last < first;
        parts.push(format!("phase {phase}: {first:.3e} -> {last:.3e}"));
    }
    assert!(verdict(9, "delta-theta trend", pass, parts.join("; ")));
}

#[test]
fn criterion_10_timing_trend_and_route_switch() {
    let _g = serial();
    let levels = [32, 30, 28, 26, 24];
    let report = cmd_bench(&RunConfig::default(), &levels, 10, false).unwrap();
    let routes_ok = report
        .levels
        .iter()
        .all(|l| (l.route == "adjoint") == (l.level <= 28));
    let pass = report.monotone && routes_ok;
    let table: Vec<String> = report
        .levels
        .iter()
        .map(|l| format!("L={} {:.2}±{:.2} s {}", l.level, l.mean, l.std, l.route))
        .collect();
    let detail = format!("{}; 32->24 gain {:.0}%", table.join(", "), 100.0 * report.gain);
    assert!(verdict(10, "timing trend", pass, detail));
}
