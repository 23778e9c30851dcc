use eit_ias::increments::IncrementOperator;
use eit_ias::mesh::{generate_disk_mesh, ElectrodeLayout, Mesh};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_vec(n: usize, rng: &mut ChaCha8Rng) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0))
}

fn small_mesh() -> Mesh {
    generate_disk_mesh(1.0, 0.5, &ElectrodeLayout::equal_gaps(6)).unwrap()
}

fn dense(op: &IncrementOperator) -> DMatrix<f64> {
    op.matrix().to_dense()
}

#[test]
fn pseudoinverse_is_left_inverse_on_ktc_scale_mesh() {
    let mesh = generate_disk_mesh(1.0, 0.047, &ElectrodeLayout::ktc()).unwrap();
    assert!((1500..=1700).contains(&mesh.nodes().len()));
    let op = IncrementOperator::build(&mesh).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..3 {
        let xi = random_vec(op.n_cols(), &mut rng);
        let back = op.pseudoinverse_apply(&op.apply(&xi).unwrap()).unwrap();
        assert!((back - &xi).norm() / xi.norm() < 1e-10);
    }
}

#[test]
fn pseudoinverse_matches_dense_least_squares() {
    let mesh = small_mesh();
    assert!(mesh.nodes().len() <= 40, "{}", mesh.nodes().len());
    let op = IncrementOperator::build(&mesh).unwrap();
    let l = dense(&op);
    let qr = l.clone().qr();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..5 {
        let zeta = random_vec(op.n_rows(), &mut rng);
        let qtb = qr.q().transpose() * &zeta;
        let oracle = qr.r().solve_upper_triangular(&qtb).unwrap();
        let ours = op.pseudoinverse_apply(&zeta).unwrap();
        assert!((ours - &oracle).norm() <= 1e-10 * oracle.norm());
    }
}

#[test]
fn orthogonal_complement_maps_to_zero() {
    let op = IncrementOperator::build(&small_mesh()).unwrap();
    let l = dense(&op);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let zeta = random_vec(op.n_rows(), &mut rng);
    let q = l.clone().qr().q();
    let perp = &zeta - &q * (q.transpose() * &zeta);
    let xi = op.pseudoinverse_apply(&perp).unwrap();
    assert!(xi.norm() < 1e-12 * zeta.norm());
}

#[test]
fn unit_variances_reduce_to_plain_pseudoinverse() {
    let op = IncrementOperator::build(&small_mesh()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let alpha = random_vec(op.n_rows(), &mut rng);
    let ones = DVector::from_element(op.n_rows(), 1.0);
    let a = op.whitened_pseudoinverse_apply(&ones, &alpha).unwrap();
    let b = op.pseudoinverse_apply(&alpha).unwrap();
    assert!((a - b).norm() < 1e-13 * alpha.norm());
}

#[test]
fn whitened_pseudoinverse_recovers_preimage() {
    let mesh = generate_disk_mesh(1.0, 0.1, &ElectrodeLayout::ktc()).unwrap();
    let op = IncrementOperator::build(&mesh).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let theta = DVector::from_fn(op.n_rows(), |_, _| 10f64.powf(rng.random_range(-6.0..0.0)));
    let w = op.whiten(&theta).unwrap();
    let xi = random_vec(op.n_cols(), &mut rng);
    let back = w.pseudoinverse_apply(&w.apply(&xi).unwrap()).unwrap();
    assert!((back - &xi).norm() / xi.norm() < 1e-10);
}

#[test]
fn uniform_variance_scaling_cancels() {
    let op = IncrementOperator::build(&small_mesh()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let theta = DVector::from_fn(op.n_rows(), |_, _| rng.random_range(0.1..2.0));
    let zeta = random_vec(op.n_rows(), &mut rng);
    let xi_for = |t: &DVector<f64>| {
        let alpha = zeta.component_div(&t.map(f64::sqrt));
        op.whitened_pseudoinverse_apply(t, &alpha).unwrap()
    };
    let a = xi_for(&theta);
    let b = xi_for(&(&theta * 37.0));
    assert!((a - &b).norm() < 1e-12 * b.norm());
}

#[test]
fn increments_of_a_constant_vanish_between_interior_nodes() {
    let mesh = small_mesh();
    let op = IncrementOperator::build(&mesh).unwrap();
    let zeta = op.apply(&DVector::from_element(op.n_cols(), 3.0)).unwrap();
    for (z, &[a, b]) in zeta.iter().zip(op.edges()) {
        let interior = !mesh.nodes()[a].is_boundary && !mesh.nodes()[b].is_boundary;
        if interior {
            assert_eq!(*z, 0.0);
        } else {
            assert_eq!(z.abs(), 3.0);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn left_inverse_and_norm_bound(seed in any::<u64>(), scale in 1e-3f64..1e3) {
        let mesh = generate_disk_mesh(1.0, 0.2, &ElectrodeLayout::equal_gaps(8)).unwrap();
        let op = IncrementOperator::build(&mesh).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let xi = random_vec(op.n_cols(), &mut rng) * scale;
        let zeta = op.apply(&xi).unwrap();
        // Each row holds at most two unit entries.
        prop_assert!(zeta.amax() <= 2.0 * xi.amax() * (1.0 + 1e-15));
        let back = op.pseudoinverse_apply(&zeta).unwrap();
        prop_assert!((back - &xi).norm() <= 1e-10 * xi.norm());
    }

    #[test]
    fn whitened_consistency(seed in any::<u64>(), log_spread in 0.0f64..8.0) {
        let mesh = generate_disk_mesh(1.0, 0.25, &ElectrodeLayout::equal_gaps(8)).unwrap();
        let op = IncrementOperator::build(&mesh).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let theta = DVector::from_fn(op.n_rows(), |_, _| 10f64.powf(-log_spread * rng.random::<f64>()));
        let w = op.whiten(&theta).unwrap();
        let xi = random_vec(op.n_cols(), &mut rng);
        let back = w.pseudoinverse_apply(&w.apply(&xi).unwrap()).unwrap();
        prop_assert!((back - &xi).norm() <= 1e-10 * xi.norm());
    }
}
