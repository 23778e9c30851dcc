//! Triangular tessellations of a disk with boundary electrode arcs.
//!
//! Generated meshes are built from concentric rings of nodes stitched together ring by
//! ring, then improved with Lawson edge flips toward a Delaunay triangulation. Electrode
//! arc endpoints are always boundary nodes, so every boundary edge lies either entirely
//! on an electrode or entirely in a gap.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{EitError, Result};

const TWO_PI: f64 = 2.0 * PI;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Node {
    pub x: f64,
    pub y: f64,
    pub is_boundary: bool,
}

/// Angular placement of `L` equal electrodes on the boundary circle.
#[derive(Debug, Clone, PartialEq)]
pub struct ElectrodeLayout {
    pub arc_half_angle: f64,
    pub centers: Vec<f64>,
}

impl ElectrodeLayout {
    /// `count` electrodes centred at `2πℓ/count`, each spanning `2·arc_half_angle`.
    pub fn equispaced(count: usize, arc_half_angle: f64) -> Self {
        let centers = (0..count)
            .map(|l| TWO_PI * l as f64 / count as f64)
            .collect();
        ElectrodeLayout {
            arc_half_angle,
            centers,
        }
    }

    /// Electrodes and gaps of equal angular width, `π/count` each.
    pub fn equal_gaps(count: usize) -> Self {
        Self::equispaced(count, PI / (2.0 * count as f64))
    }

    /// 32 electrodes spanning 5.625° with 5.625° gaps.
    pub fn ktc() -> Self {
        Self::equispaced(32, (5.625f64 / 2.0).to_radians())
    }

    pub fn count(&self) -> usize {
        self.centers.len()
    }

    /// Arcs as `(start, end, electrode)` with `start` in `[0, 2π)`, sorted by start.
    fn sorted_arcs(&self) -> Result<Vec<(f64, f64, usize)>> {
        if self.centers.len() < 2 {
            return Err(EitError::Config(format!(
                "at least two electrodes are required, got {}",
                self.centers.len()
            )));
        }
        if !(self.arc_half_angle > 0.0) || !self.arc_half_angle.is_finite() {
            return Err(EitError::Config(format!(
                "electrode half angle must be positive, got {}",
                self.arc_half_angle
            )));
        }
        let mut arcs: Vec<(f64, f64, usize)> = self
            .centers
            .iter()
            .enumerate()
            .map(|(l, &c)| {
                let start = (c - self.arc_half_angle).rem_euclid(TWO_PI);
                (start, start + 2.0 * self.arc_half_angle, l)
            })
            .collect();
        arcs.sort_by(|a, b| a.0.total_cmp(&b.0));
        for i in 0..arcs.len() {
            let (_, end, l) = arcs[i];
            let next_start = if i + 1 < arcs.len() {
                arcs[i + 1].0
            } else {
                arcs[0].0 + TWO_PI
            };
            if end >= next_start - 1e-12 {
                let other = arcs[(i + 1) % arcs.len()].2;
                return Err(EitError::Config(format!(
                    "electrode arcs {l} and {other} overlap or touch"
                )));
            }
        }
        Ok(arcs)
    }

    pub fn validate(&self) -> Result<()> {
        self.sorted_arcs().map(|_| ())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    nodes: Vec<Node>,
    triangles: Vec<[usize; 3]>,
    edges: Vec<[usize; 2]>,
    electrode_arcs: Vec<Vec<usize>>,
    n_interior: usize,
}

fn signed_area(a: &Node, b: &Node, c: &Node) -> f64 {
    0.5 * ((b.x - a.x) * (c.y - a.y) - (c.x - a.x) * (b.y - a.y))
}

impl Mesh {
    /// Builds and validates a mesh. Clockwise triangles are reoriented; degenerate ones
    /// are rejected.
    pub fn new(
        nodes: Vec<Node>,
        mut triangles: Vec<[usize; 3]>,
        electrode_arcs: Vec<Vec<usize>>,
    ) -> Result<Self> {
        let n = nodes.len();
        for (t, tri) in triangles.iter_mut().enumerate() {
            if let Some(&bad) = tri.iter().find(|&&v| v >= n) {
                return Err(EitError::Validation(format!(
                    "triangle {t} references node {bad}, but the mesh has {n} nodes"
                )));
            }
            if tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2] {
                return Err(EitError::Validation(format!(
                    "triangle {t} repeats a node: {tri:?}"
                )));
            }
            let area = signed_area(&nodes[tri[0]], &nodes[tri[1]], &nodes[tri[2]]);
            if area == 0.0 || !area.is_finite() {
                return Err(EitError::Validation(format!("triangle {t} is degenerate")));
            }
            if area < 0.0 {
                tri.swap(1, 2);
            }
        }

        let mut edge_count: HashMap<[usize; 2], usize> = HashMap::new();
        for tri in &triangles {
            for k in 0..3 {
                let (a, b) = (tri[k], tri[(k + 1) % 3]);
                *edge_count.entry([a.min(b), a.max(b)]).or_default() += 1;
            }
        }
        for (e, &count) in &edge_count {
            if count > 2 {
                return Err(EitError::Validation(format!(
                    "edge {e:?} is shared by {count} triangles"
                )));
            }
            if count == 1 && !(nodes[e[0]].is_boundary && nodes[e[1]].is_boundary) {
                return Err(EitError::Validation(format!(
                    "edge {e:?} lies on the mesh boundary but joins a node not flagged as boundary"
                )));
            }
        }
        let mut boundary_edges: Vec<[usize; 2]> = edge_count
            .iter()
            .filter(|(_, &c)| c == 1)
            .map(|(e, _)| *e)
            .collect();
        boundary_edges.sort_unstable();
        let mut edges: Vec<[usize; 2]> = edge_count.into_keys().collect();
        edges.sort_unstable();

        let mut owner: HashMap<usize, usize> = HashMap::new();
        for (l, arc) in electrode_arcs.iter().enumerate() {
            if arc.len() < 2 {
                return Err(EitError::Validation(format!(
                    "electrode {l} needs at least two nodes"
                )));
            }
            for &v in arc {
                if v >= n {
                    return Err(EitError::Validation(format!(
                        "electrode {l} references node {v}, but the mesh has {n} nodes"
                    )));
                }
                if let Some(other) = owner.insert(v, l) {
                    return Err(EitError::Validation(format!(
                        "electrodes {other} and {l} share node {v}"
                    )));
                }
            }
            for w in arc.windows(2) {
                let key = [w[0].min(w[1]), w[0].max(w[1])];
                if boundary_edges.binary_search(&key).is_err() {
                    return Err(EitError::Validation(format!(
                        "electrode {l} segment {key:?} is not a boundary edge"
                    )));
                }
            }
        }

        let n_interior = nodes.iter().filter(|p| !p.is_boundary).count();
        Ok(Mesh {
            nodes,
            triangles,
            edges,
            electrode_arcs,
            n_interior,
        })
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn edges(&self) -> &[[usize; 2]] {
        &self.edges
    }

    pub fn electrode_arcs(&self) -> &[Vec<usize>] {
        &self.electrode_arcs
    }

    pub fn n_electrodes(&self) -> usize {
        self.electrode_arcs.len()
    }

    pub fn n_interior(&self) -> usize {
        self.n_interior
    }

    pub fn triangle_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangles[t];
        signed_area(&self.nodes[a], &self.nodes[b], &self.nodes[c])
    }

    /// Boundary edges `(a, b)` of electrode `l`, in arc order.
    pub fn electrode_edges(&self, l: usize) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.electrode_arcs[l].windows(2).map(|w| (w[0], w[1]))
    }

    /// Index of each node among the interior nodes, `None` for boundary nodes.
    pub fn interior_index(&self) -> Vec<Option<usize>> {
        let mut next = 0;
        self.nodes
            .iter()
            .map(|p| {
                if p.is_boundary {
                    None
                } else {
                    next += 1;
                    Some(next - 1)
                }
            })
            .collect()
    }

    /// Edges with at least one interior endpoint, sorted by `(min index, max index)`.
    pub fn interior_edges(&self) -> Vec<[usize; 2]> {
        self.edges
            .iter()
            .copied()
            .filter(|e| !(self.nodes[e[0]].is_boundary && self.nodes[e[1]].is_boundary))
            .collect()
    }

    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
            .filter(|(_, l)| !l.is_empty());
        let err = |line: usize, msg: String| EitError::parse(origin, line, msg);
        let mut next_line = |what: &str| {
            lines
                .next()
                .ok_or_else(|| err(0, format!("unexpected end of file, expected {what}")))
        };

        let (ln, header) = next_line("header")?;
        if header != "MESH v1" {
            return Err(err(ln, format!("expected `MESH v1`, found `{header}`")));
        }
        let section = |(ln, line): (usize, &str), key: &str| -> Result<usize> {
            let mut parts = line.split_whitespace();
            if parts.next() != Some(key) {
                return Err(err(ln, format!("expected `{key} <count>`")));
            }
            let count = parts
                .next()
                .and_then(|c| c.parse().ok())
                .ok_or_else(|| err(ln, format!("bad count after {key}")))?;
            if parts.next().is_some() {
                return Err(err(ln, format!("trailing tokens after `{key} <count>`")));
            }
            Ok(count)
        };

        let n_nodes = section(next_line("NODES")?, "NODES")?;
        let mut nodes = Vec::with_capacity(n_nodes);
        for _ in 0..n_nodes {
            let (ln, line) = next_line("node line")?;
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 3 {
                return Err(err(ln, "node line needs `x y boundary_flag`".into()));
            }
            let x: f64 = fields[0]
                .parse()
                .map_err(|_| err(ln, format!("bad x coordinate `{}`", fields[0])))?;
            let y: f64 = fields[1]
                .parse()
                .map_err(|_| err(ln, format!("bad y coordinate `{}`", fields[1])))?;
            let is_boundary = match fields[2] {
                "0" => false,
                "1" => true,
                other => return Err(err(ln, format!("boundary flag must be 0 or 1, got `{other}`"))),
            };
            nodes.push(Node { x, y, is_boundary });
        }

        let n_tri = section(next_line("TRIANGLES")?, "TRIANGLES")?;
        let mut triangles = Vec::with_capacity(n_tri);
        for _ in 0..n_tri {
            let (ln, line) = next_line("triangle line")?;
            let idx: Vec<usize> = line
                .split_whitespace()
                .map(|s| s.parse())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| err(ln, "triangle indices must be non-negative integers".into()))?;
            if idx.len() != 3 {
                return Err(err(ln, "triangle line needs three node indices".into()));
            }
            if let Some(&bad) = idx.iter().find(|&&v| v >= n_nodes) {
                return Err(err(
                    ln,
                    format!("node index {bad} out of range (mesh has {n_nodes} nodes)"),
                ));
            }
            triangles.push([idx[0], idx[1], idx[2]]);
        }

        let n_el = section(next_line("ELECTRODES")?, "ELECTRODES")?;
        let mut arcs = Vec::with_capacity(n_el);
        for _ in 0..n_el {
            let (ln, line) = next_line("electrode line")?;
            let idx: Vec<usize> = line
                .split_whitespace()
                .map(|s| s.parse())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| err(ln, "electrode node indices must be non-negative integers".into()))?;
            if let Some(&bad) = idx.iter().find(|&&v| v >= n_nodes) {
                return Err(err(
                    ln,
                    format!("node index {bad} out of range (mesh has {n_nodes} nodes)"),
                ));
            }
            arcs.push(idx);
        }
        if let Some((ln, _)) = lines.next() {
            return Err(err(ln, "unexpected content after electrode section".into()));
        }
        Mesh::new(nodes, triangles, arcs).map_err(|e| match e {
            EitError::Validation(msg) => err(0, msg),
            other => other,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| EitError::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from("MESH v1\n");
        let _ = writeln!(out, "NODES {}", self.nodes.len());
        for p in &self.nodes {
            let _ = writeln!(out, "{} {} {}", p.x, p.y, u8::from(p.is_boundary));
        }
        let _ = writeln!(out, "TRIANGLES {}", self.triangles.len());
        for t in &self.triangles {
            let _ = writeln!(out, "{} {} {}", t[0], t[1], t[2]);
        }
        let _ = writeln!(out, "ELECTRODES {}", self.electrode_arcs.len());
        for arc in &self.electrode_arcs {
            let line: Vec<String> = arc.iter().map(|v| v.to_string()).collect();
            let _ = writeln!(out, "{}", line.join(" "));
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| EitError::io(path, e))
    }
}

/// Ring-by-ring stitching of two closed node loops, each sorted by angle in `[0, 2π)`.
fn stitch_rings(nodes: &[Node], inner: &[usize], outer: &[usize], out: &mut Vec<[usize; 3]>) {
    let angle = |v: usize| nodes[v].y.atan2(nodes[v].x).rem_euclid(TWO_PI);
    let (p, q) = (inner.len(), outer.len());
    let inner_angle = |i: usize| angle(inner[i % p]) + TWO_PI * (i / p) as f64;
    let a0 = inner_angle(0);
    let k0 = (0..q)
        .min_by(|&i, &j| {
            circular_distance(angle(outer[i]), a0).total_cmp(&circular_distance(angle(outer[j]), a0))
        })
        .unwrap();
    let raw_outer = |k: usize| angle(outer[(k0 + k) % q]) + TWO_PI * ((k0 + k) / q) as f64;
    let shift = {
        let d = raw_outer(0) - a0;
        if d > PI {
            -TWO_PI
        } else if d < -PI {
            TWO_PI
        } else {
            0.0
        }
    };
    let outer_angle = |k: usize| raw_outer(k) + shift;

    let (mut i, mut k) = (0usize, 0usize);
    while i < p || k < q {
        let advance_outer = if i == p {
            true
        } else if k == q {
            false
        } else {
            outer_angle(k + 1) < inner_angle(i + 1)
        };
        let a = inner[i % p];
        let b = outer[(k0 + k) % q];
        if advance_outer {
            out.push([a, b, outer[(k0 + k + 1) % q]]);
            k += 1;
        } else {
            out.push([a, b, inner[(i + 1) % p]]);
            i += 1;
        }
    }
}

fn circular_distance(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(TWO_PI);
    d.min(TWO_PI - d)
}

/// Positive when `d` lies strictly inside the circumcircle of the CCW triangle `abc`.
fn incircle(a: &Node, b: &Node, c: &Node, d: &Node) -> f64 {
    let (adx, ady) = (a.x - d.x, a.y - d.y);
    let (bdx, bdy) = (b.x - d.x, b.y - d.y);
    let (cdx, cdy) = (c.x - d.x, c.y - d.y);
    let ad = adx * adx + ady * ady;
    let bd = bdx * bdx + bdy * bdy;
    let cd = cdx * cdx + cdy * cdy;
    adx * (bdy * cd - bd * cdy) - ady * (bdx * cd - bd * cdx) + ad * (bdx * cdy - bdy * cdx)
}

fn orient(a: &Node, b: &Node, c: &Node) -> f64 {
    signed_area(a, b, c)
}

/// Lawson flips until every interior edge is locally Delaunay (up to a relative tolerance
/// that leaves cocircular configurations alone).
fn delaunay_flips(nodes: &[Node], triangles: &mut [[usize; 3]], scale: f64) {
    let tol = 1e-10 * scale.powi(4);
    for _ in 0..200 {
        let mut edge_map: HashMap<[usize; 2], Vec<(usize, usize)>> = HashMap::new();
        for (t, tri) in triangles.iter().enumerate() {
            for k in 0..3 {
                let (a, b) = (tri[k], tri[(k + 1) % 3]);
                edge_map
                    .entry([a.min(b), a.max(b)])
                    .or_default()
                    .push((t, tri[(k + 2) % 3]));
            }
        }
        let mut keys: Vec<[usize; 2]> = edge_map
            .iter()
            .filter(|(_, v)| v.len() == 2)
            .map(|(k, _)| *k)
            .collect();
        keys.sort_unstable();

        let mut touched = vec![false; triangles.len()];
        let mut flips = 0;
        for key in keys {
            let pair = &edge_map[&key];
            let ((t1, p), (t2, q)) = (pair[0], pair[1]);
            if touched[t1] || touched[t2] {
                continue;
            }
            let [a, b, c] = triangles[t1];
            if incircle(&nodes[a], &nodes[b], &nodes[c], &nodes[q]) <= tol {
                continue;
            }
            let (u, v) = (key[0], key[1]);
            let s1 = orient(&nodes[p], &nodes[q], &nodes[u]);
            let s2 = orient(&nodes[p], &nodes[q], &nodes[v]);
            if s1 * s2 >= 0.0 {
                continue;
            }
            let mut n1 = [p, u, q];
            let mut n2 = [p, q, v];
            for tri in [&mut n1, &mut n2] {
                if orient(&nodes[tri[0]], &nodes[tri[1]], &nodes[tri[2]]) < 0.0 {
                    tri.swap(1, 2);
                }
            }
            triangles[t1] = n1;
            triangles[t2] = n2;
            touched[t1] = true;
            touched[t2] = true;
            flips += 1;
        }
        if flips == 0 {
            break;
        }
    }
}

/// Generates a conforming triangulation of the disk of the given radius centred at the
/// origin, with boundary spacing and ring spacing close to `target_h`.
pub fn generate_disk_mesh(radius: f64, target_h: f64, layout: &ElectrodeLayout) -> Result<Mesh> {
    if !(radius > 0.0) || !radius.is_finite() {
        return Err(EitError::Config(format!("radius must be positive, got {radius}")));
    }
    if !(target_h > 0.0) || !target_h.is_finite() {
        return Err(EitError::Config(format!(
            "target mesh size must be positive, got {target_h}"
        )));
    }
    let arcs = layout.sorted_arcs()?;

    let rings = ((radius / target_h) - 1e-9).ceil().max(1.0) as usize;
    let dr = radius / rings as f64;
    let mut nodes = vec![Node {
        x: 0.0,
        y: 0.0,
        is_boundary: false,
    }];
    let mut ring_indices: Vec<Vec<usize>> = vec![];
    for j in 1..rings {
        let r = j as f64 * dr;
        let count = ((TWO_PI * r / target_h).round() as usize).max(6);
        let offset = if j % 2 == 1 { PI / count as f64 } else { 0.0 };
        let start = nodes.len();
        for i in 0..count {
            let t = offset + TWO_PI * i as f64 / count as f64;
            nodes.push(Node {
                x: r * t.cos(),
                y: r * t.sin(),
                is_boundary: false,
            });
        }
        ring_indices.push((start..nodes.len()).collect());
    }

    let segments = |len: f64| ((radius * len / target_h) - 1e-9).ceil().max(1.0) as usize;
    let mut boundary = Vec::new();
    let mut electrode_arcs = vec![Vec::new(); layout.count()];
    let push_boundary = |nodes: &mut Vec<Node>, boundary: &mut Vec<usize>, t: f64| {
        nodes.push(Node {
            x: radius * t.cos(),
            y: radius * t.sin(),
            is_boundary: true,
        });
        boundary.push(nodes.len() - 1);
        nodes.len() - 1
    };
    for i in 0..arcs.len() {
        let (start, end, l) = arcs[i];
        let k = segments(end - start);
        for s in 0..=k {
            let t = start + (end - start) * s as f64 / k as f64;
            let v = push_boundary(&mut nodes, &mut boundary, t);
            electrode_arcs[l].push(v);
        }
        let next_start = if i + 1 < arcs.len() {
            arcs[i + 1].0
        } else {
            arcs[0].0 + TWO_PI
        };
        let g = segments(next_start - end);
        for s in 1..g {
            let t = end + (next_start - end) * s as f64 / g as f64;
            push_boundary(&mut nodes, &mut boundary, t);
        }
    }
    // Boundary loop sorted by angle for stitching.
    let mut boundary_loop = boundary.clone();
    boundary_loop.sort_by(|&a, &b| {
        let ta = nodes[a].y.atan2(nodes[a].x).rem_euclid(TWO_PI);
        let tb = nodes[b].y.atan2(nodes[b].x).rem_euclid(TWO_PI);
        ta.total_cmp(&tb)
    });

    let mut triangles = Vec::new();
    let first_ring = ring_indices.first().unwrap_or(&boundary_loop).clone();
    for i in 0..first_ring.len() {
        triangles.push([0, first_ring[i], first_ring[(i + 1) % first_ring.len()]]);
    }
    for j in 0..ring_indices.len() {
        let outer = ring_indices.get(j + 1).unwrap_or(&boundary_loop);
        stitch_rings(&nodes, &ring_indices[j], outer, &mut triangles);
    }
    for tri in triangles.iter_mut() {
        if orient(&nodes[tri[0]], &nodes[tri[1]], &nodes[tri[2]]) < 0.0 {
            tri.swap(1, 2);
        }
    }
    delaunay_flips(&nodes, &mut triangles, target_h);
    Mesh::new(nodes, triangles, electrode_arcs)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square_mesh_text() -> &'static str {
        "MESH v1\n# unit square\nNODES 4\n0 0 1\n1 0 1\n1 1 1\n0 1 1\nTRIANGLES 2\n0 1 2\n0 2 3\nELECTRODES 2\n0 1\n2 3\n"
    }

    #[test]
    fn load_small_square() {
        let mesh = Mesh::parse(square_mesh_text(), Path::new("square.mesh")).unwrap();
        assert_eq!(mesh.triangles().len(), 2);
        assert_eq!(mesh.edges().len(), 5);
        assert_eq!(mesh.n_interior(), 0);
        assert_eq!(mesh.n_electrodes(), 2);
    }

    #[test]
    fn out_of_range_triangle_reports_line() {
        let text = square_mesh_text().replace("0 2 3", "0 2 7");
        match Mesh::parse(&text, Path::new("bad.mesh")) {
            Err(EitError::Parse { line, message, .. }) => {
                assert_eq!(line, 10);
                assert!(message.contains("out of range"), "{message}");
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn shared_electrode_node_is_rejected() {
        let text = square_mesh_text().replace("2 3\n", "1 2\n");
        assert!(Mesh::parse(&text, Path::new("bad.mesh")).is_err());
    }

    #[test]
    fn bad_header_is_rejected() {
        let text = square_mesh_text().replace("MESH v1", "MESH v2");
        assert!(matches!(
            Mesh::parse(&text, Path::new("x")),
            Err(EitError::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn clockwise_triangles_are_reoriented() {
        let text = square_mesh_text().replace("0 1 2", "0 2 1");
        let mesh = Mesh::parse(&text, Path::new("x")).unwrap();
        assert!((0..2).all(|t| mesh.triangle_area(t) > 0.0));
    }

    #[test]
    fn single_triangle_all_boundary_has_no_interior_edges() {
        let nodes = vec![
            Node { x: 0.0, y: 0.0, is_boundary: true },
            Node { x: 1.0, y: 0.0, is_boundary: true },
            Node { x: 0.0, y: 1.0, is_boundary: true },
        ];
        let mesh = Mesh::new(nodes, vec![[0, 1, 2]], vec![]).unwrap();
        assert!(mesh.interior_edges().is_empty());
    }

    #[test]
    fn star_has_three_interior_edges() {
        let nodes = vec![
            Node { x: 0.0, y: 0.0, is_boundary: false },
            Node { x: 1.0, y: 0.0, is_boundary: true },
            Node { x: -0.5, y: 0.8, is_boundary: true },
            Node { x: -0.5, y: -0.8, is_boundary: true },
        ];
        let mesh = Mesh::new(nodes, vec![[0, 1, 2], [0, 2, 3], [0, 3, 1]], vec![]).unwrap();
        assert_eq!(mesh.interior_edges(), vec![[0, 1], [0, 2], [0, 3]]);
        assert_eq!(mesh.n_interior(), 1);
    }

    #[test]
    fn overlapping_layout_is_a_config_error() {
        let layout = ElectrodeLayout::equispaced(8, PI / 8.0 + 0.01);
        assert!(matches!(
            generate_disk_mesh(1.0, 0.2, &layout),
            Err(EitError::Config(_))
        ));
        assert!(matches!(
            generate_disk_mesh(1.0, 0.0, &ElectrodeLayout::equal_gaps(8)),
            Err(EitError::Config(_))
        ));
    }

    #[test]
    fn two_electrodes_half_boundary_each() {
        let layout = ElectrodeLayout::equispaced(2, PI / 2.0 - 0.05);
        let mesh = generate_disk_mesh(1.0, 0.25, &layout).unwrap();
        assert_eq!(mesh.n_electrodes(), 2);
        let v = mesh.nodes().len() as i64;
        let e = mesh.edges().len() as i64;
        let t = mesh.triangles().len() as i64;
        assert_eq!(v - e + t, 1);
    }
}
