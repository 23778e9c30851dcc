use eit_ias::mesh::{generate_disk_mesh, ElectrodeLayout};

/// Edge length that reproduces the resolution of the challenge mesh (1602 nodes, 1473 interior).
const CHALLENGE_H: f64 = 0.047;

#[test]
fn challenge_resolution_is_reachable() {
    let mesh = generate_disk_mesh(1.0, CHALLENGE_H, &ElectrodeLayout::ktc()).unwrap();
    let nodes = mesh.nodes().len() as f64;
    let interior = mesh.n_interior() as f64;
    assert!((nodes / 1602.0 - 1.0).abs() < 0.02, "{nodes} nodes");
    assert!((interior / 1473.0 - 1.0).abs() < 0.06, "{interior} interior nodes");
    let euler = mesh.nodes().len() as i64 - mesh.edges().len() as i64 + mesh.triangles().len() as i64;
    assert_eq!(euler, 1);
    assert_eq!(mesh.n_electrodes(), 32);
}

#[test]
fn default_reconstruction_mesh_sizes() {
    let mesh = generate_disk_mesh(1.0, 0.08, &ElectrodeLayout::ktc()).unwrap();
    assert_eq!(mesh.interior_edges().len(), 1532);
    // 76 and 56 injections give more data than increments, 52 and fewer give less.
    assert!(76 * 32 > 1532 && 56 * 30 > 1532 && 52 * 28 < 1532);
}
