//! Compressed sparse rows and an envelope (variable band) Cholesky factorization.
//!
//! Both sparse SPD systems in the pipeline, the CEM finite element matrix and the
//! normal matrix of the increment operator, come from planar triangulations. After a
//! reverse Cuthill-McKee ordering their envelope is narrow, so a skyline factorization
//! is compact and deterministic. The symbolic part (ordering plus envelope profile)
//! depends only on the sparsity pattern and is reused when values change.

use std::collections::VecDeque;

use nalgebra::DVector;

use crate::error::{EitError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    nrows: usize,
    ncols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Builds a matrix from `(row, col, value)` triplets, summing duplicates.
    /// Column indices in each row end up sorted.
    pub fn from_triplets(nrows: usize, ncols: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut counts = vec![0usize; nrows + 1];
        for &(r, c, _) in triplets {
            assert!(r < nrows && c < ncols, "triplet ({r}, {c}) out of bounds");
            counts[r + 1] += 1;
        }
        for i in 0..nrows {
            counts[i + 1] += counts[i];
        }
        let mut cursor = counts.clone();
        let mut cols = vec![0usize; triplets.len()];
        let mut vals = vec![0.0; triplets.len()];
        for &(r, c, v) in triplets {
            let at = cursor[r];
            cols[at] = c;
            vals[at] = v;
            cursor[r] += 1;
        }

        let mut indptr = Vec::with_capacity(nrows + 1);
        let mut indices = Vec::with_capacity(triplets.len());
        let mut values = Vec::with_capacity(triplets.len());
        indptr.push(0);
        let mut row: Vec<(usize, f64)> = Vec::new();
        for r in 0..nrows {
            row.clear();
            row.extend((counts[r]..counts[r + 1]).map(|k| (cols[k], vals[k])));
            row.sort_by_key(|&(c, _)| c);
            for &(c, v) in row.iter() {
                if indices.len() > indptr[r] && *indices.last().unwrap() == c {
                    *values.last_mut().unwrap() += v;
                } else {
                    indices.push(c);
                    values.push(v);
                }
            }
            indptr.push(indices.len());
        }
        CsrMatrix {
            nrows,
            ncols,
            indptr,
            indices,
            values,
        }
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Iterates over the stored `(col, value)` pairs of one row.
    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.indptr[r]..self.indptr[r + 1];
        self.indices[span.clone()]
            .iter()
            .copied()
            .zip(self.values[span].iter().copied())
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let span = self.indptr[r]..self.indptr[r + 1];
        match self.indices[span.clone()].binary_search(&c) {
            Ok(k) => self.values[span.start + k],
            Err(_) => 0.0,
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.ncols);
        (0..self.nrows)
            .map(|r| self.row(r).map(|(c, v)| v * x[c]).sum())
            .collect()
    }

    /// Computes `Aᵀ x`.
    pub fn tr_mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.nrows);
        let mut out = vec![0.0; self.ncols];
        for (r, &xr) in x.iter().enumerate() {
            if xr == 0.0 {
                continue;
            }
            for (c, v) in self.row(r) {
                out[c] += v * xr;
            }
        }
        out
    }

    /// Maximum absolute asymmetry `|A_ij - A_ji|` over the stored pattern.
    pub fn asymmetry(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for r in 0..self.nrows {
            for (c, v) in self.row(r) {
                worst = worst.max((v - self.get(c, r)).abs());
            }
        }
        worst
    }

    pub fn to_dense(&self) -> nalgebra::DMatrix<f64> {
        let mut out = nalgebra::DMatrix::zeros(self.nrows, self.ncols);
        for r in 0..self.nrows {
            for (c, v) in self.row(r) {
                out[(r, c)] += v;
            }
        }
        out
    }
}

/// Reverse Cuthill-McKee ordering of the graph induced by the first `n_ordered`
/// rows/columns of a structurally symmetric matrix. Remaining indices are appended in
/// natural order. Returns `perm` with `perm[new] = old`.
pub fn rcm_ordering(matrix: &CsrMatrix, n_ordered: usize) -> Vec<usize> {
    let n = matrix.nrows();
    assert!(n_ordered <= n);
    let adj: Vec<Vec<usize>> = (0..n_ordered)
        .map(|r| {
            matrix
                .row(r)
                .map(|(c, _)| c)
                .filter(|&c| c != r && c < n_ordered)
                .collect()
        })
        .collect();
    let degree: Vec<usize> = adj.iter().map(Vec::len).collect();

    let mut visited = vec![false; n_ordered];
    let mut order = Vec::with_capacity(n);
    while order.len() < n_ordered {
        let seed = (0..n_ordered)
            .filter(|&v| !visited[v])
            .min_by_key(|&v| (degree[v], v))
            .unwrap();
        let start = pseudo_peripheral(&adj, &degree, seed);
        let mut queue = VecDeque::from([start]);
        visited[start] = true;
        while let Some(v) = queue.pop_front() {
            order.push(v);
            let mut next: Vec<usize> = adj[v].iter().copied().filter(|&w| !visited[w]).collect();
            next.sort_by_key(|&w| (degree[w], w));
            for w in next {
                visited[w] = true;
                queue.push_back(w);
            }
        }
    }
    order.reverse();
    order.extend(n_ordered..n);
    order
}

fn bfs_levels(adj: &[Vec<usize>], start: usize) -> Vec<Vec<usize>> {
    let mut seen = vec![false; adj.len()];
    seen[start] = true;
    let mut levels = vec![vec![start]];
    loop {
        let mut next = Vec::new();
        for &v in levels.last().unwrap() {
            for &w in &adj[v] {
                if !seen[w] {
                    seen[w] = true;
                    next.push(w);
                }
            }
        }
        if next.is_empty() {
            return levels;
        }
        levels.push(next);
    }
}

fn pseudo_peripheral(adj: &[Vec<usize>], degree: &[usize], seed: usize) -> usize {
    let mut current = seed;
    let mut depth = bfs_levels(adj, current).len();
    for _ in 0..8 {
        let levels = bfs_levels(adj, current);
        let candidate = *levels
            .last()
            .unwrap()
            .iter()
            .min_by_key(|&&v| (degree[v], v))
            .unwrap();
        let candidate_depth = bfs_levels(adj, candidate).len();
        if candidate_depth <= depth {
            break;
        }
        depth = candidate_depth;
        current = candidate;
    }
    current
}

/// Ordering and envelope profile of a symmetric sparsity pattern.
#[derive(Debug, Clone)]
pub struct EnvelopeSymbolic {
    perm: Vec<usize>,
    inv: Vec<usize>,
    first: Vec<usize>,
    offsets: Vec<usize>,
}

impl EnvelopeSymbolic {
    /// `perm[new] = old` must be a permutation of `0..n`.
    pub fn analyze(pattern: &CsrMatrix, perm: Vec<usize>) -> Result<Self> {
        let n = pattern.nrows();
        if pattern.ncols() != n || perm.len() != n {
            return Err(EitError::Config(format!(
                "envelope analysis needs a square pattern and full permutation ({}x{}, perm {})",
                n,
                pattern.ncols(),
                perm.len()
            )));
        }
        let mut inv = vec![usize::MAX; n];
        for (new, &old) in perm.iter().enumerate() {
            if old >= n || inv[old] != usize::MAX {
                return Err(EitError::Config("ordering is not a permutation".into()));
            }
            inv[old] = new;
        }
        let mut first: Vec<usize> = (0..n).collect();
        for old_r in 0..n {
            let r = inv[old_r];
            for (old_c, _) in pattern.row(old_r) {
                let c = inv[old_c];
                let (hi, lo) = if r >= c { (r, c) } else { (c, r) };
                first[hi] = first[hi].min(lo);
            }
        }
        let mut offsets = Vec::with_capacity(n + 1);
        offsets.push(0);
        for i in 0..n {
            offsets.push(offsets[i] + i - first[i] + 1);
        }
        Ok(EnvelopeSymbolic {
            perm,
            inv,
            first,
            offsets,
        })
    }

    /// Analysis with a reverse Cuthill-McKee ordering of the first `n_ordered` indices.
    pub fn analyze_rcm(pattern: &CsrMatrix, n_ordered: usize) -> Result<Self> {
        Self::analyze(pattern, rcm_ordering(pattern, n_ordered))
    }

    pub fn dim(&self) -> usize {
        self.perm.len()
    }

    /// Number of stored lower-triangle entries including the diagonal.
    pub fn envelope_size(&self) -> usize {
        *self.offsets.last().unwrap()
    }
}

/// Lower-triangular Cholesky factor stored row-wise inside the envelope.
#[derive(Debug, Clone)]
pub struct EnvelopeCholesky {
    symbolic: EnvelopeSymbolic,
    env: Vec<f64>,
}

impl EnvelopeCholesky {
    pub fn factor(symbolic: &EnvelopeSymbolic, matrix: &CsrMatrix) -> Result<Self> {
        let n = symbolic.dim();
        if matrix.nrows() != n || matrix.ncols() != n {
            return Err(EitError::Config(format!(
                "matrix is {}x{}, symbolic analysis is for dimension {n}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        let s = symbolic;
        let mut env = vec![0.0; s.envelope_size()];
        for old_r in 0..n {
            let r = s.inv[old_r];
            for (old_c, v) in matrix.row(old_r) {
                let c = s.inv[old_c];
                if c > r {
                    continue;
                }
                if c < s.first[r] {
                    return Err(EitError::Config(
                        "matrix entry outside the analyzed envelope".into(),
                    ));
                }
                env[s.offsets[r] + c - s.first[r]] += v;
            }
        }

        for i in 0..n {
            let fi = s.first[i];
            let row_i = s.offsets[i];
            for j in fi..i {
                let fj = s.first[j];
                let k0 = fi.max(fj);
                let row_j = s.offsets[j];
                let dot: f64 = env[row_i + k0 - fi..row_i + j - fi]
                    .iter()
                    .zip(&env[row_j + k0 - fj..row_j + j - fj])
                    .map(|(a, b)| a * b)
                    .sum();
                let diag_j = env[row_j + j - fj];
                env[row_i + j - fi] = (env[row_i + j - fi] - dot) / diag_j;
            }
            let sq: f64 = env[row_i..row_i + i - fi].iter().map(|v| v * v).sum();
            let d = env[row_i + i - fi] - sq;
            if !(d > 0.0) || !d.is_finite() {
                return Err(EitError::Numerical(format!(
                    "matrix not positive definite: pivot {d:e} at permuted row {i} (original {})",
                    s.perm[i]
                )));
            }
            env[row_i + i - fi] = d.sqrt();
        }
        Ok(EnvelopeCholesky {
            symbolic: symbolic.clone(),
            env,
        })
    }

    pub fn dim(&self) -> usize {
        self.symbolic.dim()
    }

    pub fn solve_in_place(&self, b: &mut [f64]) {
        let s = &self.symbolic;
        let n = s.dim();
        assert_eq!(b.len(), n, "right-hand side length mismatch");
        let mut x: Vec<f64> = s.perm.iter().map(|&old| b[old]).collect();
        for i in 0..n {
            let fi = s.first[i];
            let row = &self.env[s.offsets[i]..s.offsets[i + 1]];
            let dot: f64 = row[..i - fi].iter().zip(&x[fi..i]).map(|(l, y)| l * y).sum();
            x[i] = (x[i] - dot) / row[i - fi];
        }
        for i in (0..n).rev() {
            let fi = s.first[i];
            let row = &self.env[s.offsets[i]..s.offsets[i + 1]];
            x[i] /= row[i - fi];
            let xi = x[i];
            for (k, l) in (fi..i).zip(&row[..i - fi]) {
                x[k] -= l * xi;
            }
        }
        for (new, &old) in s.perm.iter().enumerate() {
            b[old] = x[new];
        }
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }

    pub fn solve_vector(&self, b: &DVector<f64>) -> DVector<f64> {
        DVector::from_vec(self.solve(b.as_slice()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    fn laplacian_path(n: usize, shift: f64) -> CsrMatrix {
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, 2.0 + shift));
            if i + 1 < n {
                t.push((i, i + 1, -1.0));
                t.push((i + 1, i, -1.0));
            }
        }
        CsrMatrix::from_triplets(n, n, &t)
    }

    #[test]
    fn triplets_sum_duplicates() {
        let m = CsrMatrix::from_triplets(2, 2, &[(0, 1, 1.0), (0, 1, 2.5), (1, 0, -1.0)]);
        assert_eq!(m.nnz(), 2);
        assert_eq!(m.get(0, 1), 3.5);
        assert_eq!(m.get(1, 1), 0.0);
    }

    #[test]
    fn rcm_is_a_permutation() {
        let m = laplacian_path(17, 0.0);
        let mut p = rcm_ordering(&m, 12);
        assert_eq!(&p[12..], &[12, 13, 14, 15, 16]);
        p.sort();
        assert_eq!(p, (0..17).collect::<Vec<_>>());
    }

    #[test]
    fn envelope_solve_matches_dense() {
        // Random sparse SPD matrix: grid Laplacian plus a dense coupling row/col at the end.
        let side = 6;
        let n = side * side + 2;
        let mut t = Vec::new();
        for i in 0..side {
            for j in 0..side {
                let v = i * side + j;
                t.push((v, v, 4.5 + (v % 3) as f64));
                if j + 1 < side {
                    t.push((v, v + 1, -1.0));
                    t.push((v + 1, v, -1.0));
                }
                if i + 1 < side {
                    t.push((v, v + side, -1.0));
                    t.push((v + side, v, -1.0));
                }
                if v % 5 == 0 {
                    t.push((v, n - 1, 0.3));
                    t.push((n - 1, v, 0.3));
                }
            }
        }
        t.push((n - 2, n - 2, 3.0));
        t.push((n - 1, n - 1, 9.0));
        t.push((n - 2, n - 1, 1.0));
        t.push((n - 1, n - 2, 1.0));
        let a = CsrMatrix::from_triplets(n, n, &t);
        let sym = EnvelopeSymbolic::analyze_rcm(&a, side * side).unwrap();
        let chol = EnvelopeCholesky::factor(&sym, &a).unwrap();
        let b: Vec<f64> = (0..n).map(|i| ((i * 37) % 11) as f64 - 5.0).collect();
        let x = chol.solve(&b);
        let dense = a.to_dense();
        let reference = dense.cholesky().unwrap().solve(&DVector::from_vec(b.clone()));
        for i in 0..n {
            assert!((x[i] - reference[i]).abs() < 1e-12, "{i}: {} vs {}", x[i], reference[i]);
        }
        let r = a.mul_vec(&x);
        for i in 0..n {
            assert!((r[i] - b[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn indefinite_matrix_is_rejected() {
        let a = CsrMatrix::from_triplets(2, 2, &[(0, 0, 1.0), (0, 1, 2.0), (1, 0, 2.0), (1, 1, 1.0)]);
        let sym = EnvelopeSymbolic::analyze_rcm(&a, 2).unwrap();
        assert!(matches!(
            EnvelopeCholesky::factor(&sym, &a),
            Err(EitError::Numerical(_))
        ));
    }

    #[test]
    fn refactor_reuses_symbolic() {
        let a = laplacian_path(30, 0.1);
        let sym = EnvelopeSymbolic::analyze_rcm(&a, 30).unwrap();
        let b = laplacian_path(30, 2.0);
        let chol = EnvelopeCholesky::factor(&sym, &b).unwrap();
        let x = chol.solve(&vec![1.0; 30]);
        let dense: DMatrix<f64> = b.to_dense();
        let r = &dense * DVector::from_vec(x) - DVector::from_element(30, 1.0);
        assert!(r.amax() < 1e-13);
    }
}
