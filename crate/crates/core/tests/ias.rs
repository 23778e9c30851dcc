use eit_ias::cem::{CemModel, CurrentFrame, MeasurementPattern};
use eit_ias::hyperprior::HybridSchedule;
use eit_ias::ias::{linearized_step, run_hybrid, zeta_update, IasTimings, InverseProblem, Route, RoutePolicy};
use eit_ias::mesh::{generate_disk_mesh, ElectrodeLayout, Node};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SIGMA0: f64 = 0.79;

fn problem(h: f64, skips: &[usize], xi_true: impl Fn(&Node) -> f64, noise: f64) -> InverseProblem {
    let l = 8;
    let mesh = generate_disk_mesh(1.0, h, &ElectrodeLayout::equal_gaps(l)).unwrap();
    let model = CemModel::new(&mesh, SIGMA0, vec![1e-6; l]).unwrap();
    let pairs: Vec<(usize, usize)> = skips
        .iter()
        .flat_map(|&d| (0..l).map(move |k| (k, (k + d) % l)))
        .collect();
    let frame = CurrentFrame::from_pairs(l, &pairs, 1e-2).unwrap();
    let meas = MeasurementPattern::adjacent(l).unwrap();
    let xi: DVector<f64> = DVector::from_iterator(
        model.n_interior(),
        mesh.nodes().iter().filter(|n| !n.is_boundary).map(&xi_true),
    );
    let data = model.forward(&xi, &frame, &meas).unwrap();
    InverseProblem::new(model, frame, meas, data, noise).unwrap()
}

fn inclusion(n: &Node) -> f64 {
    if (n.x - 0.3).hypot(n.y - 0.2) < 0.3 {
        0.5 * SIGMA0
    } else {
        0.0
    }
}

fn explicit_alpha(j: &DMatrix<f64>, l_theta: &DMatrix<f64>, y: &DVector<f64>, omega: f64) -> DVector<f64> {
    // A = (1/ω) J L_θ† with L_θ† formed densely.
    let pinv = (l_theta.transpose() * l_theta).try_inverse().unwrap() * l_theta.transpose();
    let a = j * pinv / omega;
    let n = a.ncols();
    let h = a.transpose() * &a + DMatrix::identity(n, n);
    h.cholesky().unwrap().solve(&(a.transpose() * y))
}

fn compare_routes(p: &InverseProblem, expect_adjoint: bool) {
    assert_eq!(p.n_data() < p.n_increments(), expect_adjoint);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let xi = DVector::from_fn(p.increments.n_cols(), |_, _| 0.1 * SIGMA0 * rng.random_range(-1.0..1.0));
    let theta = DVector::from_fn(p.n_increments(), |_, _| 10f64.powf(rng.random_range(-5.0..-2.0)));
    let fr = p.model.forward_with_jacobian(&xi, &p.currents, &p.meas).unwrap();
    let y = (&p.data - &fr.voltages + &fr.jacobian * &xi) / p.noise_scale;
    let w = p.increments.whiten(&theta).unwrap();
    let primal = linearized_step(&fr.jacobian, &w, &y, p.noise_scale, Route::Primal).unwrap();
    let adjoint = linearized_step(&fr.jacobian, &w, &y, p.noise_scale, Route::Adjoint).unwrap();
    let rel = (&primal.alpha - &adjoint.alpha).norm() / primal.alpha.norm();
    assert!(rel < 1e-10, "alpha routes differ by {rel:e}");
    let rel_xi = (&primal.xi - &adjoint.xi).norm() / primal.xi.norm();
    assert!(rel_xi < 1e-10, "xi routes differ by {rel_xi:e}");

    let l_theta = DMatrix::from_diagonal(w.inv_sqrt_theta()) * p.increments.matrix().to_dense();
    let oracle = explicit_alpha(&fr.jacobian, &l_theta, &y, p.noise_scale);
    let rel = (&oracle - &primal.alpha).norm() / oracle.norm();
    assert!(rel < 1e-8, "explicit oracle differs by {rel:e}");

    // ξ from the adjoint shortcut equals L_θ†α computed the long way.
    let long_way = w.pseudoinverse_apply(&adjoint.alpha).unwrap();
    assert!((long_way - &adjoint.xi).norm() < 1e-12 * adjoint.xi.norm().max(1e-300));
}

#[test]
fn primal_and_adjoint_routes_agree_when_data_is_scarce() {
    compare_routes(&problem(0.25, &[1, 4], inclusion, 1e-3), true);
}

#[test]
fn primal_and_adjoint_routes_agree_when_data_is_plentiful() {
    compare_routes(&problem(0.5, &[1, 2, 3, 4], inclusion, 1e-3), false);
}

#[test]
fn exact_data_is_a_fixed_point_under_a_weak_prior() {
    let p = problem(0.5, &[1, 2, 3, 4], inclusion, 1e-3);
    assert!(p.n_data() >= p.n_increments());
    let n = p.increments.n_cols();
    let xi_true = DVector::from_iterator(
        n,
        p.model.mesh().nodes().iter().filter(|x| !x.is_boundary).map(inclusion),
    );
    let theta = DVector::from_element(p.n_increments(), 1e12);
    let mut t = IasTimings::default();
    let (xi, _, _) = zeta_update(&p, &xi_true, &theta, 1, &mut t).unwrap();
    let err = (&xi - &xi_true).norm() / xi_true.norm();
    assert!(err < 1e-8, "fixed point moved by {err:e}");
}

#[test]
fn iteration_counts_follow_the_schedule() {
    let p = problem(0.3, &[1, 4], inclusion, 1e-3);
    let report = run_hybrid(&HybridSchedule::default(), &p).unwrap();
    assert_eq!(report.history.len(), 10);
    assert_eq!(report.history.iter().filter(|r| r.phase == 1).count(), 5);
    assert!(report.history.iter().all(|r| r.route == p.active_route()));
    assert_eq!(report.diagnostics_csv().lines().count(), 11);

    let once = HybridSchedule { tol: f64::INFINITY, ..HybridSchedule::default() };
    let report = run_hybrid(&once, &p).unwrap();
    assert_eq!(report.history.len(), 2);
    assert_eq!(report.history[1].phase, 2);
}

#[test]
fn energy_never_increases_across_variance_updates() {
    let p = problem(0.3, &[1, 4], inclusion, 1e-3);
    let report = run_hybrid(&HybridSchedule::default(), &p).unwrap();
    for r in &report.history {
        assert!(r.gibbs_energy <= r.gibbs_before_theta + 1e-12 * r.gibbs_before_theta.abs());
    }
    assert!(report.theta.iter().all(|t| *t > 0.0));
    assert!(report.phase1_theta.iter().all(|t| *t > 0.0));
}

#[test]
fn homogeneous_data_gives_homogeneous_estimate() {
    let p = problem(0.3, &[1, 4], |_| 0.0, 4e-3);
    let report = run_hybrid(&HybridSchedule::default(), &p).unwrap();
    assert!(report.xi.amax() < 1e-6 * SIGMA0, "{:e}", report.xi.amax());
}

#[test]
fn runs_are_bitwise_reproducible() {
    let p = problem(0.3, &[1, 4], inclusion, 1e-3);
    let a = run_hybrid(&HybridSchedule::default(), &p).unwrap();
    let b = run_hybrid(&HybridSchedule::default(), &p).unwrap();
    assert_eq!(a.xi, b.xi);
    assert_eq!(a.phase1_xi, b.phase1_xi);
    let energies = |r: &eit_ias::ias::IasReport| r.history.iter().map(|h| h.gibbs_energy.to_bits()).collect::<Vec<_>>();
    assert_eq!(energies(&a), energies(&b));
}

#[test]
fn forced_route_changes_nothing_but_the_solver() {
    let mut p = problem(0.3, &[1, 4], inclusion, 1e-3);
    let short = HybridSchedule { k_max1: 2, k_max2: 1, ..HybridSchedule::default() };
    let auto = run_hybrid(&short, &p).unwrap();
    let other = match auto.route {
        Route::Primal => Route::Adjoint,
        Route::Adjoint => Route::Primal,
    };
    p.route = RoutePolicy::Force(other);
    let forced = run_hybrid(&short, &p).unwrap();
    assert_eq!(forced.route, other);
    assert!((&auto.xi - &forced.xi).norm() < 1e-8 * auto.xi.norm());
}
