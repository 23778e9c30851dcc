//! Finite element discretization of the complete electrode model.
//!
//! Unknowns are the nodal potentials `u` followed by the `L - 1` coefficients of the
//! electrode voltages in the basis `E_k = e_1 - e_{k+1}`, so every voltage vector
//! satisfies the grounding condition `Σ U_ℓ = 0` by construction. The conductivity is
//! `σ₀ + Σ ξ_ν φ_ν` over interior nodes; each element uses the mean of its three nodal
//! values, which integrates the piecewise linear σ exactly against constant gradients.
//!
//! The factored system uses shifted unknowns on electrode nodes, `ū_i = u_i - U_ℓ`, so the
//! contact term `(1/z)∫(u - U)²` becomes a plain mass term in `ū` and no longer cancels in
//! floating point when `z` is tiny. This keeps voltages accurate to near machine precision
//! at `z = 1e-6`. [`CemModel::block_matrix`] still gives the unshifted block system.

use std::fmt::Write as _;
use std::path::Path;
use std::time::{Duration, Instant};

use log::warn;
use nalgebra::{DMatrix, DVector};

use crate::error::{EitError, Result};
use crate::mesh::Mesh;
use crate::sparse::{CsrMatrix, EnvelopeCholesky, EnvelopeSymbolic};

/// Nodal conductivity below `SIGMA_FLOOR_RATIO · σ₀` is clamped during assembly.
pub const SIGMA_FLOOR_RATIO: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct Conductivity {
    pub sigma0: f64,
    /// Perturbation `δσ` at the interior nodes, in mesh interior order.
    pub xi: DVector<f64>,
}

impl Conductivity {
    pub fn homogeneous(sigma0: f64, n_interior: usize) -> Self {
        Conductivity {
            sigma0,
            xi: DVector::zeros(n_interior),
        }
    }
}

/// Injected current patterns, one column of `L` electrode currents per injection.
#[derive(Debug, Clone, PartialEq)]
pub struct CurrentFrame {
    patterns: DMatrix<f64>,
}

impl CurrentFrame {
    pub fn new(patterns: DMatrix<f64>) -> Result<Self> {
        for (k, col) in patterns.column_iter().enumerate() {
            let scale = col.amax().max(f64::MIN_POSITIVE);
            if col.sum().abs() > 1e-12 * scale * col.len() as f64 {
                return Err(EitError::Validation(format!(
                    "injection {k} currents sum to {:e}, expected zero",
                    col.sum()
                )));
            }
        }
        Ok(CurrentFrame { patterns })
    }

    /// Injections of `+amplitude` at the first electrode of each pair and `-amplitude`
    /// at the second.
    pub fn from_pairs(n_electrodes: usize, pairs: &[(usize, usize)], amplitude: f64) -> Result<Self> {
        let mut m = DMatrix::zeros(n_electrodes, pairs.len());
        for (k, &(src, sink)) in pairs.iter().enumerate() {
            if src >= n_electrodes || sink >= n_electrodes || src == sink {
                return Err(EitError::Config(format!(
                    "invalid injection pair ({src}, {sink}) for {n_electrodes} electrodes"
                )));
            }
            m[(src, k)] = amplitude;
            m[(sink, k)] = -amplitude;
        }
        Self::new(m)
    }

    pub fn patterns(&self) -> &DMatrix<f64> {
        &self.patterns
    }

    pub fn n_electrodes(&self) -> usize {
        self.patterns.nrows()
    }

    pub fn n_injections(&self) -> usize {
        self.patterns.ncols()
    }
}

/// Linear measurement functionals applied to the electrode voltages of every injection.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementPattern {
    rows: DMatrix<f64>,
    pairs: Option<Vec<(usize, usize)>>,
}

impl MeasurementPattern {
    /// Each row must be either a `+1/-1` difference or a single `+1` (full voltage).
    pub fn new(rows: DMatrix<f64>) -> Result<Self> {
        for (r, row) in rows.row_iter().enumerate() {
            let plus = row.iter().filter(|&&v| v == 1.0).count();
            let minus = row.iter().filter(|&&v| v == -1.0).count();
            let zero = row.iter().filter(|&&v| v == 0.0).count();
            let ok = zero + plus + minus == row.len() && plus == 1 && minus <= 1;
            if !ok {
                return Err(EitError::Validation(format!(
                    "measurement row {r} must contain one +1 and at most one -1"
                )));
            }
        }
        Ok(MeasurementPattern { rows, pairs: None })
    }

    /// Rows `U_a - U_b` for each pair.
    pub fn from_pairs(n_electrodes: usize, pairs: &[(usize, usize)]) -> Result<Self> {
        let mut rows = DMatrix::zeros(pairs.len(), n_electrodes);
        for (r, &(a, b)) in pairs.iter().enumerate() {
            if a >= n_electrodes || b >= n_electrodes || a == b {
                return Err(EitError::Config(format!(
                    "invalid measurement pair ({a}, {b}) for {n_electrodes} electrodes"
                )));
            }
            rows[(r, a)] = 1.0;
            rows[(r, b)] = -1.0;
        }
        let mut pattern = Self::new(rows)?;
        pattern.pairs = Some(pairs.to_vec());
        Ok(pattern)
    }

    /// All cyclic adjacent pairs `U_ℓ - U_{ℓ+1}`.
    pub fn adjacent(n_electrodes: usize) -> Result<Self> {
        let pairs: Vec<_> = (0..n_electrodes)
            .map(|l| (l, (l + 1) % n_electrodes))
            .collect();
        Self::from_pairs(n_electrodes, &pairs)
    }

    /// Every electrode voltage measured directly.
    pub fn full(n_electrodes: usize) -> Self {
        MeasurementPattern {
            rows: DMatrix::identity(n_electrodes, n_electrodes),
            pairs: None,
        }
    }

    pub fn rows(&self) -> &DMatrix<f64> {
        &self.rows
    }

    pub fn pairs(&self) -> Option<&[(usize, usize)]> {
        self.pairs.as_deref()
    }

    pub fn n_rows(&self) -> usize {
        self.rows.nrows()
    }

    pub fn n_electrodes(&self) -> usize {
        self.rows.ncols()
    }
}

/// Current frame and measurement functionals as stored in a pattern file.
#[derive(Debug, Clone, PartialEq)]
pub struct PatternSet {
    pub currents: CurrentFrame,
    pub meas: MeasurementPattern,
}

impl PatternSet {
    pub fn n_measurements(&self) -> usize {
        self.currents.n_injections() * self.meas.n_rows()
    }

    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let err = |line: usize, msg: String| EitError::parse(origin, line, msg);
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
            .filter(|(_, l)| !l.is_empty());
        let mut next = |what: &str| {
            lines
                .next()
                .ok_or_else(|| err(0, format!("unexpected end of file, expected {what}")))
        };

        let (ln, header) = next("header")?;
        if header != "PATTERNS v1" {
            return Err(err(ln, format!("expected `PATTERNS v1`, found `{header}`")));
        }
        let (ln, inj) = next("INJECTIONS")?;
        let parts: Vec<&str> = inj.split_whitespace().collect();
        if parts.len() != 3 || parts[0] != "INJECTIONS" {
            return Err(err(ln, "expected `INJECTIONS <k> <L>`".into()));
        }
        let k: usize = parts[1]
            .parse()
            .map_err(|_| err(ln, format!("bad injection count `{}`", parts[1])))?;
        let l: usize = parts[2]
            .parse()
            .map_err(|_| err(ln, format!("bad electrode count `{}`", parts[2])))?;
        let mut currents = DMatrix::zeros(l, k);
        for j in 0..k {
            let (ln, line) = next("current row")?;
            let vals: Vec<f64> = line
                .split_whitespace()
                .map(str::parse)
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| err(ln, "current values must be numbers".into()))?;
            if vals.len() != l {
                return Err(err(ln, format!("expected {l} currents, found {}", vals.len())));
            }
            CurrentFrame::new(DMatrix::from_column_slice(l, 1, &vals))
                .map_err(|e| err(ln, e.to_string()))?;
            currents.set_column(j, &DVector::from_vec(vals));
        }
        let currents = CurrentFrame::new(currents)?;

        let (ln, line) = next("MEASURE")?;
        let parts: Vec<&str> = line.split_whitespace().collect();
        let meas = match parts.as_slice() {
            ["MEASURE", "adjacent"] => MeasurementPattern::adjacent(l)?,
            ["MEASURE", "full"] => MeasurementPattern::full(l),
            ["MEASURE", "pairs", count] => {
                let p: usize = count
                    .parse()
                    .map_err(|_| err(ln, format!("bad pair count `{count}`")))?;
                let mut pairs = Vec::with_capacity(p);
                for _ in 0..p {
                    let (ln, line) = next("measurement pair")?;
                    let idx: Vec<usize> = line
                        .split_whitespace()
                        .map(str::parse)
                        .collect::<std::result::Result<_, _>>()
                        .map_err(|_| err(ln, "pair indices must be non-negative integers".into()))?;
                    if idx.len() != 2 || idx[0] >= l || idx[1] >= l || idx[0] == idx[1] {
                        return Err(err(ln, format!("invalid measurement pair for {l} electrodes")));
                    }
                    pairs.push((idx[0], idx[1]));
                }
                MeasurementPattern::from_pairs(l, &pairs)?
            }
            _ => {
                return Err(err(
                    ln,
                    "expected `MEASURE adjacent`, `MEASURE full` or `MEASURE pairs <p>`".into(),
                ))
            }
        };
        if let Some((ln, _)) = lines.next() {
            return Err(err(ln, "unexpected content after measurement section".into()));
        }
        Ok(PatternSet { currents, meas })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| EitError::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn to_text(&self) -> String {
        let c = self.currents.patterns();
        let mut out = String::from("PATTERNS v1\n");
        let _ = writeln!(out, "INJECTIONS {} {}", c.ncols(), c.nrows());
        for col in c.column_iter() {
            let vals: Vec<String> = col.iter().map(|v| v.to_string()).collect();
            let _ = writeln!(out, "{}", vals.join(" "));
        }
        match self.meas.pairs() {
            Some(pairs) => {
                let _ = writeln!(out, "MEASURE pairs {}", pairs.len());
                for (a, b) in pairs {
                    let _ = writeln!(out, "{a} {b}");
                }
            }
            None => out.push_str("MEASURE full\n"),
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| EitError::io(path, e))
    }
}

/// Wall-clock split of forward model work.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ForwardTimings {
    pub assembly: Duration,
    pub factorization: Duration,
    pub solves: Duration,
}

impl std::ops::AddAssign for ForwardTimings {
    fn add_assign(&mut self, rhs: Self) {
        self.assembly += rhs.assembly;
        self.factorization += rhs.factorization;
        self.solves += rhs.solves;
    }
}

#[derive(Debug, Clone)]
pub struct ForwardResult {
    /// Measured voltages stacked per injection: row `i · n_meas + r`.
    pub voltages: DVector<f64>,
    /// `∂ voltages / ∂ ξ`, one column per interior node.
    pub jacobian: DMatrix<f64>,
    pub clamped_nodes: usize,
    pub timings: ForwardTimings,
}

struct ElementGeometry {
    nodes: [usize; 3],
    area: f64,
    /// Gradients of the three barycentric basis functions.
    grads: [[f64; 2]; 3],
}

struct ElectrodeGeometry {
    /// `(node, ∫_e φ_node dS)`.
    load: Vec<(usize, f64)>,
    /// Boundary edges `(a, b, length)`.
    edges: Vec<(usize, usize, f64)>,
    length: f64,
}

/// Mesh-dependent data reused across assemblies at different conductivities.
pub struct CemModel {
    mesh: Mesh,
    sigma0: f64,
    contact_impedance: Vec<f64>,
    elements: Vec<ElementGeometry>,
    electrodes: Vec<ElectrodeGeometry>,
    interior_nodes: Vec<usize>,
    node_electrode: Vec<Option<usize>>,
    /// Filled once the sparsity pattern is known; always present after `new`.
    symbolic: Option<EnvelopeSymbolic>,
}

impl CemModel {
    pub fn new(mesh: &Mesh, sigma0: f64, contact_impedance: Vec<f64>) -> Result<Self> {
        if !(sigma0 > 0.0) || !sigma0.is_finite() {
            return Err(EitError::Config(format!(
                "background conductivity must be positive, got {sigma0}"
            )));
        }
        let n_el = mesh.n_electrodes();
        if n_el < 2 {
            return Err(EitError::Config("the CEM needs at least two electrodes".into()));
        }
        if contact_impedance.len() != n_el {
            return Err(EitError::Config(format!(
                "{} contact impedances for {n_el} electrodes",
                contact_impedance.len()
            )));
        }
        if let Some((l, z)) = contact_impedance
            .iter()
            .enumerate()
            .find(|(_, &z)| !(z > 0.0) || !z.is_finite())
        {
            return Err(EitError::Config(format!(
                "contact impedance of electrode {l} must be positive, got {z}"
            )));
        }

        let nodes = mesh.nodes();
        let elements: Vec<ElementGeometry> = mesh
            .triangles()
            .iter()
            .enumerate()
            .map(|(t, &tri)| {
                let area = mesh.triangle_area(t);
                let p = tri.map(|v| nodes[v]);
                let mut grads = [[0.0; 2]; 3];
                for k in 0..3 {
                    let (b, c) = (p[(k + 1) % 3], p[(k + 2) % 3]);
                    grads[k] = [(b.y - c.y) / (2.0 * area), (c.x - b.x) / (2.0 * area)];
                }
                ElementGeometry {
                    nodes: tri,
                    area,
                    grads,
                }
            })
            .collect();

        let electrodes = (0..n_el)
            .map(|l| {
                let mut load: Vec<(usize, f64)> = Vec::new();
                let mut edges = Vec::new();
                let mut length = 0.0;
                for (a, b) in mesh.electrode_edges(l) {
                    let h = (nodes[a].x - nodes[b].x).hypot(nodes[a].y - nodes[b].y);
                    length += h;
                    edges.push((a, b, h));
                    for v in [a, b] {
                        match load.iter_mut().find(|(n, _)| *n == v) {
                            Some(entry) => entry.1 += h / 2.0,
                            None => load.push((v, h / 2.0)),
                        }
                    }
                }
                ElectrodeGeometry {
                    load,
                    edges,
                    length,
                }
            })
            .collect();

        let interior_nodes = (0..nodes.len()).filter(|&v| !nodes[v].is_boundary).collect();
        let mut node_electrode = vec![None; nodes.len()];
        for (l, arc) in mesh.electrode_arcs().iter().enumerate() {
            for &v in arc {
                node_electrode[v] = Some(l);
            }
        }
        let mut model = CemModel {
            mesh: mesh.clone(),
            sigma0,
            contact_impedance,
            elements,
            electrodes,
            interior_nodes,
            node_electrode,
            symbolic: None,
        };
        let pattern = model.shifted_matrix(&vec![sigma0; nodes.len()]);
        model.symbolic = Some(EnvelopeSymbolic::analyze_rcm(&pattern, nodes.len())?);
        Ok(model)
    }

    pub fn mesh(&self) -> &Mesh {
        &self.mesh
    }

    pub fn sigma0(&self) -> f64 {
        self.sigma0
    }

    pub fn contact_impedance(&self) -> &[f64] {
        &self.contact_impedance
    }

    pub fn n_electrodes(&self) -> usize {
        self.electrodes.len()
    }

    pub fn n_interior(&self) -> usize {
        self.interior_nodes.len()
    }

    /// Length of each electrode along the polygonal boundary.
    pub fn electrode_lengths(&self) -> Vec<f64> {
        self.electrodes.iter().map(|e| e.length).collect()
    }

    /// Nodal conductivities after clamping, with the number of clamped nodes.
    pub fn nodal_sigma(&self, xi: &DVector<f64>) -> Result<(Vec<f64>, Vec<bool>)> {
        if xi.len() != self.n_interior() {
            return Err(EitError::Config(format!(
                "conductivity vector has {} entries, mesh has {} interior nodes",
                xi.len(),
                self.n_interior()
            )));
        }
        let floor = SIGMA_FLOOR_RATIO * self.sigma0;
        let mut sigma = vec![self.sigma0; self.mesh.nodes().len()];
        let mut clamped = vec![false; sigma.len()];
        for (k, &v) in self.interior_nodes.iter().enumerate() {
            let s = self.sigma0 + xi[k];
            if !s.is_finite() {
                return Err(EitError::Domain(format!("non-finite conductivity at node {v}")));
            }
            if s < floor {
                sigma[v] = floor;
                clamped[v] = true;
            } else {
                sigma[v] = s;
            }
        }
        Ok((sigma, clamped))
    }

    fn local_stiffness(el: &ElementGeometry, sigma: &[f64]) -> [[f64; 3]; 3] {
        let s_mean = el.nodes.iter().map(|&v| sigma[v]).sum::<f64>() / 3.0;
        let mut k = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                let g = el.grads[i][0] * el.grads[j][0] + el.grads[i][1] * el.grads[j][1];
                k[i][j] = s_mean * el.area * g;
            }
        }
        k
    }

    /// Unknowns carrying the value of node `v`: itself, plus the voltage coefficients of
    /// its electrode (`U_0 = Σ β_k`, `U_{k+1} = -β_k`).
    fn node_dofs(&self, v: usize, out: &mut Vec<(usize, f64)>) {
        let nn = self.mesh.nodes().len();
        out.clear();
        out.push((v, 1.0));
        match self.node_electrode[v] {
            Some(0) => out.extend((0..self.n_electrodes() - 1).map(|k| (nn + k, 1.0))),
            Some(l) => out.push((nn + l - 1, -1.0)),
            None => {}
        }
    }

    fn shifted_matrix(&self, sigma: &[f64]) -> CsrMatrix {
        let nn = self.mesh.nodes().len();
        let dim = nn + self.n_electrodes() - 1;
        let mut t = Vec::with_capacity(9 * self.elements.len() + 4 * nn);
        let mut dofs: [Vec<(usize, f64)>; 3] = Default::default();
        for el in &self.elements {
            let k = Self::local_stiffness(el, sigma);
            for (i, d) in dofs.iter_mut().enumerate() {
                self.node_dofs(el.nodes[i], d);
            }
            for i in 0..3 {
                for j in 0..3 {
                    for &(p, cp) in &dofs[i] {
                        for &(q, cq) in &dofs[j] {
                            t.push((p, q, cp * cq * k[i][j]));
                        }
                    }
                }
            }
        }
        for (l, e) in self.electrodes.iter().enumerate() {
            let inv_z = 1.0 / self.contact_impedance[l];
            for &(a, b, h) in &e.edges {
                t.push((a, a, inv_z * h / 3.0));
                t.push((b, b, inv_z * h / 3.0));
                t.push((a, b, inv_z * h / 6.0));
                t.push((b, a, inv_z * h / 6.0));
            }
        }
        CsrMatrix::from_triplets(dim, dim, &t)
    }

    /// The CEM block system in the unknowns `(u, β)`: stiffness, electrode mass, coupling
    /// and electrode blocks.
    pub fn block_matrix(&self, xi: &DVector<f64>) -> Result<CsrMatrix> {
        let (sigma, _) = self.nodal_sigma(xi)?;
        let nn = self.mesh.nodes().len();
        let n_el = self.n_electrodes();
        let dim = nn + n_el - 1;
        let mut t = Vec::with_capacity(9 * self.elements.len() + 64 * n_el);
        for el in &self.elements {
            let k = Self::local_stiffness(el, &sigma);
            for i in 0..3 {
                for j in 0..3 {
                    t.push((el.nodes[i], el.nodes[j], k[i][j]));
                }
            }
        }
        for (l, e) in self.electrodes.iter().enumerate() {
            let inv_z = 1.0 / self.contact_impedance[l];
            for &(a, b, h) in &e.edges {
                t.push((a, a, inv_z * h / 3.0));
                t.push((b, b, inv_z * h / 3.0));
                t.push((a, b, inv_z * h / 6.0));
                t.push((b, a, inv_z * h / 6.0));
            }
        }
        // Coupling with basis E_k = e_0 - e_{k+1}.
        let inv_z0 = 1.0 / self.contact_impedance[0];
        let len0 = self.electrodes[0].length;
        for k in 0..n_el - 1 {
            let col = nn + k;
            for &(v, s) in &self.electrodes[0].load {
                t.push((v, col, -inv_z0 * s));
                t.push((col, v, -inv_z0 * s));
            }
            let inv_zk = 1.0 / self.contact_impedance[k + 1];
            for &(v, s) in &self.electrodes[k + 1].load {
                t.push((v, col, inv_zk * s));
                t.push((col, v, inv_zk * s));
            }
            for k2 in 0..n_el - 1 {
                let mut val = inv_z0 * len0;
                if k2 == k {
                    val += inv_zk * self.electrodes[k + 1].length;
                }
                t.push((col, nn + k2, val));
            }
        }
        Ok(CsrMatrix::from_triplets(dim, dim, &t))
    }

    /// Assembles and factors the CEM system at `σ₀ + ξ`.
    pub fn assemble(&self, xi: &DVector<f64>) -> Result<CemSystem> {
        let start = Instant::now();
        let (sigma, clamped) = self.nodal_sigma(xi)?;
        let matrix = self.shifted_matrix(&sigma);
        let clamped_nodes = clamped.iter().filter(|&&c| c).count();
        if clamped_nodes > 0 {
            warn!("{clamped_nodes} nodal conductivities clamped to the positivity floor");
        }
        let assembled = Instant::now();
        let symbolic = self
            .symbolic
            .as_ref()
            .ok_or_else(|| EitError::Numerical("CEM model has no symbolic analysis".into()))?;
        let factor = EnvelopeCholesky::factor(symbolic, &matrix)?;
        let timings = ForwardTimings {
            assembly: assembled - start,
            factorization: assembled.elapsed(),
            solves: Duration::ZERO,
        };
        Ok(CemSystem {
            matrix,
            factor,
            n_nodes: self.mesh.nodes().len(),
            n_electrodes: self.n_electrodes(),
            node_electrode: self.node_electrode.clone(),
            clamped,
            clamped_nodes,
            timings,
        })
    }

    fn check_patterns(&self, currents: &CurrentFrame, meas: &MeasurementPattern) -> Result<()> {
        let l = self.n_electrodes();
        if currents.n_electrodes() != l || meas.n_electrodes() != l {
            return Err(EitError::Config(format!(
                "patterns are for {} (currents) and {} (measurements) electrodes, mesh has {l}",
                currents.n_electrodes(),
                meas.n_electrodes()
            )));
        }
        Ok(())
    }

    /// Measured voltages only.
    pub fn forward(
        &self,
        xi: &DVector<f64>,
        currents: &CurrentFrame,
        meas: &MeasurementPattern,
    ) -> Result<DVector<f64>> {
        self.check_patterns(currents, meas)?;
        let system = self.assemble(xi)?;
        let voltages = system.solve_forward(currents)?;
        Ok(stack_measurements(&voltages, meas))
    }

    /// Measured voltages and their Jacobian with respect to ξ by the adjoint method:
    /// one solve per injection and one per measurement functional.
    pub fn forward_with_jacobian(
        &self,
        xi: &DVector<f64>,
        currents: &CurrentFrame,
        meas: &MeasurementPattern,
    ) -> Result<ForwardResult> {
        self.check_patterns(currents, meas)?;
        let system = self.assemble(xi)?;
        let mut timings = system.timings;
        let solve_start = Instant::now();

        let states: Vec<Vec<f64>> = currents
            .patterns()
            .column_iter()
            .map(|c| system.solve_full(c.as_slice()))
            .collect::<Result<_>>()?;
        let adjoints: Vec<Vec<f64>> = meas
            .rows()
            .row_iter()
            .map(|g| {
                let g: Vec<f64> = g.iter().copied().collect();
                Ok(system.nodal_potential(&system.solve_full(&g)?))
            })
            .collect::<Result<_>>()?;
        let potentials: Vec<Vec<f64>> = states.iter().map(|x| system.nodal_potential(x)).collect();

        let n_meas = meas.n_rows();
        let mut voltages = DVector::zeros(states.len() * n_meas);
        for (i, x) in states.iter().enumerate() {
            let u = system.electrode_voltages(x);
            let v = meas.rows() * u;
            voltages.rows_mut(i * n_meas, n_meas).copy_from(&v);
        }

        let interior_pos = self.mesh.interior_index();
        let m = voltages.len();
        let mut jacobian = DMatrix::zeros(m, self.n_interior());
        let mut gu = vec![[0.0f64; 2]; states.len()];
        let mut gw = vec![[0.0f64; 2]; adjoints.len()];
        let mut coupling = vec![0.0; m];
        for el in &self.elements {
            let active: Vec<usize> = el
                .nodes
                .iter()
                .filter(|&&v| !system.clamped[v])
                .filter_map(|&v| interior_pos[v])
                .collect();
            if active.is_empty() {
                continue;
            }
            for (g, x) in gu.iter_mut().zip(&potentials) {
                *g = element_gradient(el, x);
            }
            for (g, w) in gw.iter_mut().zip(&adjoints) {
                *g = element_gradient(el, w);
            }
            let weight = el.area / 3.0;
            for (i, a) in gu.iter().enumerate() {
                for (r, b) in gw.iter().enumerate() {
                    coupling[i * n_meas + r] = -weight * (a[0] * b[0] + a[1] * b[1]);
                }
            }
            for col in active {
                let mut c = jacobian.column_mut(col);
                for (dst, src) in c.iter_mut().zip(&coupling) {
                    *dst += src;
                }
            }
        }
        timings.solves += solve_start.elapsed();

        Ok(ForwardResult {
            voltages,
            jacobian,
            clamped_nodes: system.clamped_nodes,
            timings,
        })
    }

    /// Jacobian by forward sensitivities: for every interior node and injection, solve
    /// with the derivative of the stiffness matrix applied to the state. Costs
    /// `n_interior · n_injections` solves; used to cross-check the adjoint route.
    pub fn jacobian_direct(
        &self,
        xi: &DVector<f64>,
        currents: &CurrentFrame,
        meas: &MeasurementPattern,
    ) -> Result<DMatrix<f64>> {
        self.check_patterns(currents, meas)?;
        let system = self.assemble(xi)?;
        let states: Vec<Vec<f64>> = currents
            .patterns()
            .column_iter()
            .map(|c| system.solve_full(c.as_slice()))
            .collect::<Result<_>>()?;
        let n_meas = meas.n_rows();
        let dim = system.matrix.nrows();
        let mut incident: Vec<Vec<usize>> = vec![Vec::new(); self.mesh.nodes().len()];
        for (e, el) in self.elements.iter().enumerate() {
            for &v in &el.nodes {
                incident[v].push(e);
            }
        }
        let mut jacobian = DMatrix::zeros(states.len() * n_meas, self.n_interior());
        let mut dofs = Vec::new();
        for (col, &node) in self.interior_nodes.iter().enumerate() {
            if system.clamped[node] {
                continue;
            }
            for (i, x) in states.iter().enumerate() {
                let u = system.nodal_potential(x);
                let mut rhs = vec![0.0; dim];
                for &e in &incident[node] {
                    let el = &self.elements[e];
                    for a in 0..3 {
                        let mut r = 0.0;
                        for b in 0..3 {
                            let g = el.grads[a][0] * el.grads[b][0] + el.grads[a][1] * el.grads[b][1];
                            r -= el.area / 3.0 * g * u[el.nodes[b]];
                        }
                        self.node_dofs(el.nodes[a], &mut dofs);
                        for &(p, c) in &dofs {
                            rhs[p] += c * r;
                        }
                    }
                }
                system.factor.solve_in_place(&mut rhs);
                let du = system.electrode_voltages(&rhs);
                let dv = meas.rows() * du;
                for r in 0..n_meas {
                    jacobian[(i * n_meas + r, col)] = dv[r];
                }
            }
        }
        Ok(jacobian)
    }
}

fn element_gradient(el: &ElementGeometry, x: &[f64]) -> [f64; 2] {
    let mut g = [0.0; 2];
    for k in 0..3 {
        let v = x[el.nodes[k]];
        g[0] += v * el.grads[k][0];
        g[1] += v * el.grads[k][1];
    }
    g
}

/// Stacks `meas · U` for every injection.
pub fn stack_measurements(voltages: &[DVector<f64>], meas: &MeasurementPattern) -> DVector<f64> {
    let n_meas = meas.n_rows();
    let mut out = DVector::zeros(voltages.len() * n_meas);
    for (i, u) in voltages.iter().enumerate() {
        out.rows_mut(i * n_meas, n_meas).copy_from(&(meas.rows() * u));
    }
    out
}

/// Assembled and factored CEM system at one conductivity.
pub struct CemSystem {
    matrix: CsrMatrix,
    factor: EnvelopeCholesky,
    n_nodes: usize,
    n_electrodes: usize,
    node_electrode: Vec<Option<usize>>,
    clamped: Vec<bool>,
    clamped_nodes: usize,
    timings: ForwardTimings,
}

impl CemSystem {
    /// The factored matrix, in the electrode-shifted unknowns.
    pub fn matrix(&self) -> &CsrMatrix {
        &self.matrix
    }

    pub fn clamped_nodes(&self) -> usize {
        self.clamped_nodes
    }

    pub fn timings(&self) -> ForwardTimings {
        self.timings
    }

    /// Solves with an electrode-space right-hand side `Σ_ℓ v_ℓ E_k,ℓ` (an injected current
    /// or a measurement functional); returns the full `(u, β)` solution.
    pub fn solve_full(&self, electrode_rhs: &[f64]) -> Result<Vec<f64>> {
        if electrode_rhs.len() != self.n_electrodes {
            return Err(EitError::Config(format!(
                "electrode vector has {} entries, system has {} electrodes",
                electrode_rhs.len(),
                self.n_electrodes
            )));
        }
        let mut rhs = vec![0.0; self.n_nodes + self.n_electrodes - 1];
        for k in 0..self.n_electrodes - 1 {
            rhs[self.n_nodes + k] = electrode_rhs[0] - electrode_rhs[k + 1];
        }
        self.factor.solve_in_place(&mut rhs);
        if rhs.iter().any(|v| !v.is_finite()) {
            return Err(EitError::Numerical("non-finite CEM solution".into()));
        }
        Ok(rhs)
    }

    /// Nodal potentials `u` from a solution vector, undoing the electrode shift.
    pub fn nodal_potential(&self, solution: &[f64]) -> Vec<f64> {
        let u_el = self.electrode_voltages(solution);
        solution[..self.n_nodes]
            .iter()
            .zip(&self.node_electrode)
            .map(|(&v, l)| match l {
                Some(l) => v + u_el[*l],
                None => v,
            })
            .collect()
    }

    /// Electrode voltages `U = Σ β_k E_k` from a solution vector.
    pub fn electrode_voltages(&self, solution: &[f64]) -> DVector<f64> {
        let beta = &solution[self.n_nodes..];
        let mut u = DVector::zeros(self.n_electrodes);
        u[0] = beta.iter().sum();
        for (k, b) in beta.iter().enumerate() {
            u[k + 1] = -b;
        }
        u
    }

    /// Electrode voltages for every injection.
    pub fn solve_forward(&self, currents: &CurrentFrame) -> Result<Vec<DVector<f64>>> {
        currents
            .patterns()
            .column_iter()
            .map(|c| {
                let x = self.solve_full(c.as_slice())?;
                Ok(self.electrode_voltages(&x))
            })
            .collect()
    }

    /// Resistance matrix acting on zero-sum currents, with columns `R (e_ℓ - 1/L)`.
    pub fn resistance_matrix(&self) -> Result<DMatrix<f64>> {
        let l = self.n_electrodes;
        let mut proj = DMatrix::from_element(l, l, -1.0 / l as f64);
        for i in 0..l {
            proj[(i, i)] += 1.0;
        }
        let frame = CurrentFrame::new(proj)?;
        let cols = self.solve_forward(&frame)?;
        Ok(DMatrix::from_columns(&cols))
    }
}

/// Convenience wrapper: builds a model for a single assembly.
pub fn assemble(mesh: &Mesh, cond: &Conductivity, z: &[f64]) -> Result<CemSystem> {
    CemModel::new(mesh, cond.sigma0, z.to_vec())?.assemble(&cond.xi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{generate_disk_mesh, ElectrodeLayout};

    fn small_model(z: f64) -> CemModel {
        let mesh = generate_disk_mesh(1.0, 0.25, &ElectrodeLayout::equal_gaps(8)).unwrap();
        CemModel::new(&mesh, 0.79, vec![z; 8]).unwrap()
    }

    #[test]
    fn stiffness_is_linear_in_homogeneous_sigma() {
        let mesh = generate_disk_mesh(1.0, 0.3, &ElectrodeLayout::equal_gaps(6)).unwrap();
        let nn = mesh.nodes().len();
        let a = CemModel::new(&mesh, 1.0, vec![1.0; 6]).unwrap();
        let b = CemModel::new(&mesh, 0.79, vec![1.0; 6]).unwrap();
        let ma = a.block_matrix(&DVector::zeros(mesh.n_interior())).unwrap();
        let mb = b.block_matrix(&DVector::zeros(mesh.n_interior())).unwrap();
        // Remove the electrode terms by differencing against a huge-impedance model.
        let ea = CemModel::new(&mesh, 1.0, vec![1e300; 6]).unwrap();
        let me = ea.block_matrix(&DVector::zeros(mesh.n_interior())).unwrap();
        for i in 0..nn {
            for (j, v) in ma.row(i).filter(|&(j, _)| j < nn) {
                let stiff_a = v - (ma.get(i, j) - me.get(i, j));
                let stiff_b = mb.get(i, j) - (ma.get(i, j) - me.get(i, j));
                assert!((stiff_b - 0.79 * stiff_a).abs() < 1e-12, "({i},{j})");
            }
        }
    }

    #[test]
    fn electrode_blocks_scale_with_inverse_impedance() {
        let mesh = generate_disk_mesh(1.0, 0.3, &ElectrodeLayout::equal_gaps(6)).unwrap();
        let nn = mesh.nodes().len();
        let xi = DVector::zeros(mesh.n_interior());
        let one = CemModel::new(&mesh, 0.79, vec![1.0; 6]).unwrap().block_matrix(&xi).unwrap();
        let small = CemModel::new(&mesh, 0.79, vec![1e-6; 6]).unwrap().block_matrix(&xi).unwrap();
        for k in nn..nn + 5 {
            for (j, v) in one.row(k) {
                assert!((small.get(k, j) - 1e6 * v).abs() <= 1e-9 * (1e6 * v).abs());
            }
        }
    }

    #[test]
    fn nonpositive_impedance_is_rejected() {
        let mesh = generate_disk_mesh(1.0, 0.3, &ElectrodeLayout::equal_gaps(6)).unwrap();
        assert!(matches!(
            CemModel::new(&mesh, 0.79, vec![0.0; 6]),
            Err(EitError::Config(_))
        ));
    }

    #[test]
    fn zero_current_gives_zero_voltage() {
        let model = small_model(1e-6);
        let sys = model.assemble(&DVector::zeros(model.n_interior())).unwrap();
        let frame = CurrentFrame::new(DMatrix::zeros(8, 1)).unwrap();
        let u = sys.solve_forward(&frame).unwrap();
        assert_eq!(u[0].amax(), 0.0);
    }

    #[test]
    fn voltages_are_grounded() {
        let model = small_model(1e-6);
        let sys = model.assemble(&DVector::zeros(model.n_interior())).unwrap();
        let frame = CurrentFrame::from_pairs(8, &[(0, 3), (2, 7)], 1.0).unwrap();
        for u in sys.solve_forward(&frame).unwrap() {
            assert!(u.sum().abs() < 1e-12 * u.amax().max(1.0));
        }
    }

    #[test]
    fn currents_must_sum_to_zero() {
        let mut m = DMatrix::zeros(4, 1);
        m[(0, 0)] = 1.0;
        assert!(CurrentFrame::new(m).is_err());
    }

    #[test]
    fn measurement_rows_are_validated() {
        let mut rows = DMatrix::zeros(1, 4);
        rows[(0, 0)] = 1.0;
        rows[(0, 1)] = 1.0;
        assert!(MeasurementPattern::new(rows).is_err());
        assert_eq!(MeasurementPattern::adjacent(5).unwrap().n_rows(), 5);
    }

    #[test]
    fn mismatched_patterns_are_rejected() {
        let model = small_model(1e-6);
        let frame = CurrentFrame::from_pairs(6, &[(0, 3)], 1.0).unwrap();
        let meas = MeasurementPattern::adjacent(8).unwrap();
        let xi = DVector::zeros(model.n_interior());
        assert!(matches!(
            model.forward_with_jacobian(&xi, &frame, &meas),
            Err(EitError::Config(_))
        ));
    }

    #[test]
    fn clamped_nodes_are_reported() {
        let model = small_model(1e-6);
        let mut xi = DVector::zeros(model.n_interior());
        xi[0] = -10.0;
        let sys = model.assemble(&xi).unwrap();
        assert_eq!(sys.clamped_nodes(), 1);
    }

    #[test]
    fn pattern_file_roundtrip_and_errors() {
        let frame = CurrentFrame::from_pairs(4, &[(0, 2), (1, 3)], 0.5).unwrap();
        let set = PatternSet {
            currents: frame,
            meas: MeasurementPattern::adjacent(4).unwrap(),
        };
        let text = set.to_text();
        let back = PatternSet::parse(&text, Path::new("p")).unwrap();
        assert_eq!(back, set);
        assert_eq!(back.n_measurements(), 8);

        let adjacent = "PATTERNS v1\nINJECTIONS 1 3\n1 -1 0\nMEASURE adjacent\n";
        assert_eq!(PatternSet::parse(adjacent, Path::new("p")).unwrap().meas.n_rows(), 3);
        let unbalanced = "PATTERNS v1\nINJECTIONS 1 3\n1 1 0\nMEASURE full\n";
        assert!(matches!(
            PatternSet::parse(unbalanced, Path::new("p")),
            Err(EitError::Parse { line: 3, .. })
        ));
    }
}
