//! Increment operator mapping interior nodal coefficients to differences across edges.
//!
//! Every edge with at least one interior endpoint gets a row `ι(p_μ) e_μ - ι(p_ν) e_ν`,
//! where `ι` is 1 on interior nodes and 0 on boundary nodes (the conductivity there is
//! fixed at the background value).

use nalgebra::{DMatrix, DVector};

use crate::error::{EitError, Result};
use crate::mesh::Mesh;
use crate::sparse::{CsrMatrix, EnvelopeCholesky, EnvelopeSymbolic};

#[derive(Debug, Clone)]
pub struct IncrementOperator {
    matrix: CsrMatrix,
    transpose: CsrMatrix,
    edges: Vec<[usize; 2]>,
    symbolic: EnvelopeSymbolic,
    normal_factor: EnvelopeCholesky,
}

impl IncrementOperator {
    pub fn build(mesh: &Mesh) -> Result<Self> {
        let edges = mesh.interior_edges();
        if edges.is_empty() {
            return Err(EitError::Validation("mesh has no interior edges".into()));
        }
        let index = mesh.interior_index();
        let n = mesh.n_interior();
        let mut triplets = Vec::with_capacity(2 * edges.len());
        for (row, &[a, b]) in edges.iter().enumerate() {
            if let Some(i) = index[a] {
                triplets.push((row, i, 1.0));
            }
            if let Some(j) = index[b] {
                triplets.push((row, j, -1.0));
            }
        }
        let matrix = CsrMatrix::from_triplets(edges.len(), n, &triplets);
        let transpose = CsrMatrix::from_triplets(
            n,
            edges.len(),
            &triplets.iter().map(|&(r, c, v)| (c, r, v)).collect::<Vec<_>>(),
        );
        let normal = weighted_normal(&matrix, &transpose, None);
        let symbolic = EnvelopeSymbolic::analyze_rcm(&normal, n)?;
        let normal_factor = EnvelopeCholesky::factor(&symbolic, &normal).map_err(|_| {
            EitError::Validation(
                "increment operator is rank deficient: the interior of the mesh is disconnected from the boundary"
                    .into(),
            )
        })?;
        Ok(IncrementOperator {
            matrix,
            transpose,
            edges,
            symbolic,
            normal_factor,
        })
    }

    /// Number of increments `N`.
    pub fn n_rows(&self) -> usize {
        self.matrix.nrows()
    }

    /// Number of interior nodes `n`.
    pub fn n_cols(&self) -> usize {
        self.matrix.ncols()
    }

    /// Mesh edge `(min, max)` behind each row.
    pub fn edges(&self) -> &[[usize; 2]] {
        &self.edges
    }

    pub fn matrix(&self) -> &CsrMatrix {
        &self.matrix
    }

    fn check_len(&self, got: usize, want: usize, what: &str) -> Result<()> {
        if got != want {
            return Err(EitError::Config(format!(
                "{what} has length {got}, expected {want}"
            )));
        }
        Ok(())
    }

    /// `ζ = Lξ`.
    pub fn apply(&self, xi: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_len(xi.len(), self.n_cols(), "conductivity vector")?;
        Ok(DVector::from_vec(self.matrix.mul_vec(xi.as_slice())))
    }

    /// `Lᵀζ`.
    pub fn apply_transpose(&self, zeta: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_len(zeta.len(), self.n_rows(), "increment vector")?;
        Ok(DVector::from_vec(self.transpose.mul_vec(zeta.as_slice())))
    }

    /// Least-squares preimage `(LᵀL)⁻¹Lᵀζ`.
    pub fn pseudoinverse_apply(&self, zeta: &DVector<f64>) -> Result<DVector<f64>> {
        let rhs = self.apply_transpose(zeta)?;
        Ok(self.normal_factor.solve_vector(&rhs))
    }

    /// Solves `LᵀL x = b` for every column of `b`.
    pub fn normal_solve(&self, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_len(b.nrows(), self.n_cols(), "right-hand side")?;
        Ok(solve_columns(&self.normal_factor, b))
    }

    /// Factors `LᵀD_θ⁻¹L` for the whitened operator `L_θ = D_θ^{-1/2} L`.
    pub fn whiten(&self, theta: &DVector<f64>) -> Result<WhitenedIncrements<'_>> {
        self.check_len(theta.len(), self.n_rows(), "variance vector")?;
        if let Some((j, t)) = theta.iter().enumerate().find(|(_, &t)| !(t > 0.0) || !t.is_finite()) {
            return Err(EitError::Domain(format!(
                "variance {j} must be positive and finite, got {t}"
            )));
        }
        let inv_sqrt: DVector<f64> = theta.map(|t| 1.0 / t.sqrt());
        let weights: Vec<f64> = theta.iter().map(|t| 1.0 / t).collect();
        let normal = weighted_normal(&self.matrix, &self.transpose, Some(&weights));
        let factor = EnvelopeCholesky::factor(&self.symbolic, &normal)?;
        Ok(WhitenedIncrements {
            op: self,
            inv_sqrt,
            factor,
        })
    }

    /// `L_θ†α` in one call; see [`WhitenedIncrements::pseudoinverse_apply`].
    pub fn whitened_pseudoinverse_apply(
        &self,
        theta: &DVector<f64>,
        alpha: &DVector<f64>,
    ) -> Result<DVector<f64>> {
        self.whiten(theta)?.pseudoinverse_apply(alpha)
    }
}

/// `Lᵀ W L` with `W` diagonal (identity when `None`).
fn weighted_normal(l: &CsrMatrix, lt: &CsrMatrix, weights: Option<&[f64]>) -> CsrMatrix {
    let mut triplets = Vec::with_capacity(4 * l.nrows());
    for r in 0..l.nrows() {
        let w = weights.map_or(1.0, |w| w[r]);
        for (i, a) in l.row(r) {
            for (j, b) in l.row(r) {
                triplets.push((i, j, w * a * b));
            }
        }
    }
    CsrMatrix::from_triplets(lt.nrows(), lt.nrows(), &triplets)
}

fn solve_columns(factor: &EnvelopeCholesky, b: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = b.clone();
    for mut col in out.column_iter_mut() {
        factor.solve_in_place(col.as_mut_slice());
    }
    out
}

/// `L_θ = D_θ^{-1/2} L` with a factorization of `L_θᵀL_θ` for one variance vector.
pub struct WhitenedIncrements<'a> {
    op: &'a IncrementOperator,
    inv_sqrt: DVector<f64>,
    factor: EnvelopeCholesky,
}

impl WhitenedIncrements<'_> {
    pub fn operator(&self) -> &IncrementOperator {
        self.op
    }

    /// `θ^{-1/2}` componentwise.
    pub fn inv_sqrt_theta(&self) -> &DVector<f64> {
        &self.inv_sqrt
    }

    /// `α = L_θ ξ`.
    pub fn apply(&self, xi: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(self.op.apply(xi)?.component_mul(&self.inv_sqrt))
    }

    /// `L_θᵀ α`.
    pub fn apply_transpose(&self, alpha: &DVector<f64>) -> Result<DVector<f64>> {
        self.op.apply_transpose(&alpha.component_mul(&self.inv_sqrt))
    }

    /// `ξ = (L_θᵀL_θ)⁻¹ L_θᵀ α`.
    pub fn pseudoinverse_apply(&self, alpha: &DVector<f64>) -> Result<DVector<f64>> {
        let rhs = self.apply_transpose(alpha)?;
        Ok(self.factor.solve_vector(&rhs))
    }

    /// Solves `L_θᵀL_θ X = B` column by column.
    pub fn normal_solve(&self, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.op.check_len(b.nrows(), self.op.n_cols(), "right-hand side")?;
        Ok(solve_columns(&self.factor, b))
    }

    /// `L_θ X` for a dense `n × k` block.
    pub fn apply_dense(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let l = &self.op.matrix;
        let mut out = DMatrix::zeros(l.nrows(), x.ncols());
        for r in 0..l.nrows() {
            let s = self.inv_sqrt[r];
            for (c, v) in l.row(r) {
                for k in 0..x.ncols() {
                    out[(r, k)] += s * v * x[(c, k)];
                }
            }
        }
        out
    }
}

/// Number of entries with `|ζ_j| > rel · max|ζ|`; zero for an all-zero vector.
pub fn count_significant(zeta: &DVector<f64>, rel: f64) -> usize {
    let max = zeta.amax();
    if max == 0.0 {
        return 0;
    }
    zeta.iter().filter(|z| z.abs() > rel * max).count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{generate_disk_mesh, ElectrodeLayout, Node};

    fn star() -> Mesh {
        let mut nodes = vec![Node { x: 0.0, y: 0.0, is_boundary: false }];
        for k in 0..3 {
            let a = 2.0 * std::f64::consts::PI * k as f64 / 3.0;
            nodes.push(Node { x: a.cos(), y: a.sin(), is_boundary: true });
        }
        let tris = vec![[0, 1, 2], [0, 2, 3], [0, 3, 1]];
        Mesh::new(nodes, tris, vec![vec![1, 2]]).unwrap()
    }

    #[test]
    fn significant_entries_are_relative_to_the_peak() {
        let z = DVector::from_vec(vec![-2.0, 0.01, 0.03, 1.0, 0.0]);
        assert_eq!(count_significant(&z, 0.01), 3);
        assert_eq!(count_significant(&DVector::zeros(4), 0.01), 0);
    }

    #[test]
    fn star_graph_has_three_rows() {
        let op = IncrementOperator::build(&star()).unwrap();
        assert_eq!((op.n_rows(), op.n_cols()), (3, 1));
        let zeta = op.apply(&DVector::from_element(1, 2.0)).unwrap();
        assert!(zeta.iter().all(|z| z.abs() == 2.0));
        let normal = weighted_normal(&op.matrix, &op.transpose, None);
        assert_eq!(normal.get(0, 0), 3.0);
    }

    #[test]
    fn rows_have_at_most_two_unit_entries() {
        let mesh = generate_disk_mesh(1.0, 0.2, &ElectrodeLayout::equal_gaps(8)).unwrap();
        let op = IncrementOperator::build(&mesh).unwrap();
        assert!(op.matrix.nnz() <= 2 * op.n_rows());
        for r in 0..op.n_rows() {
            let row: Vec<f64> = op.matrix.row(r).map(|(_, v)| v).collect();
            assert!(!row.is_empty() && row.len() <= 2);
            assert!(row.iter().all(|v| v.abs() == 1.0));
            if row.len() == 2 {
                assert_eq!(row[0] + row[1], 0.0);
            }
        }
        for &[a, b] in op.edges() {
            assert!(!(mesh.nodes()[a].is_boundary && mesh.nodes()[b].is_boundary));
        }
    }

    #[test]
    fn indicator_has_degree_many_increments() {
        let mesh = generate_disk_mesh(1.0, 0.2, &ElectrodeLayout::equal_gaps(8)).unwrap();
        let op = IncrementOperator::build(&mesh).unwrap();
        let node = mesh.nodes().iter().position(|n| !n.is_boundary).unwrap();
        let degree = mesh.edges().iter().filter(|e| e.contains(&node)).count();
        let col = mesh.interior_index()[node].unwrap();
        let mut xi = DVector::zeros(op.n_cols());
        xi[col] = 0.7;
        let zeta = op.apply(&xi).unwrap();
        assert_eq!(zeta.iter().filter(|z| **z != 0.0).count(), degree);
        assert!(zeta.iter().all(|z| *z == 0.0 || z.abs() == 0.7));
    }

    #[test]
    fn nonpositive_variance_is_a_domain_error() {
        let op = IncrementOperator::build(&star()).unwrap();
        let theta = DVector::from_vec(vec![1.0, 0.0, 1.0]);
        assert!(matches!(op.whiten(&theta), Err(EitError::Domain(_))));
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let op = IncrementOperator::build(&star()).unwrap();
        assert!(matches!(op.apply(&DVector::zeros(2)), Err(EitError::Config(_))));
    }
}
