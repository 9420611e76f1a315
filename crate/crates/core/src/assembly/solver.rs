//! Direct solver for matrices with the sparsity of a graph-conforming mesh.
//!
//! Interior unknowns of an edge only couple to their neighbours and, at the
//! two ends, to the edge's vertices. Eliminating the interior (one tridiagonal
//! factorization per edge) leaves a dense `n × n` Schur complement on the
//! vertex unknowns, which is LU-factorized with partial pivoting.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector, Dyn, LU};

use super::mesh::Mesh;
use crate::sparse::CsrMatrix;
use crate::{Error, Result};

const PIVOT_FLOOR: f64 = 1e-300;

#[derive(Debug, Clone)]
struct EdgeBlock {
    start: usize,
    len: usize,
    first_vertex: usize,
    second_vertex: usize,
    sub: Vec<f64>,
    /// Thomas pivots.
    pivots: Vec<f64>,
    /// Normalized super-diagonal `c'_i`.
    sup: Vec<f64>,
    /// `A[first interior, first vertex]`, `A[last interior, second vertex]`.
    col_first: f64,
    col_second: f64,
    /// `A[first vertex, first interior]`, `A[second vertex, last interior]`.
    row_first: f64,
    row_second: f64,
    y_first: Vec<f64>,
    y_second: Vec<f64>,
}

impl EdgeBlock {
    fn solve_in_place(&self, d: &mut [f64]) {
        let n = self.len;
        d[0] /= self.pivots[0];
        for i in 1..n {
            d[i] = (d[i] - self.sub[i] * d[i - 1]) / self.pivots[i];
        }
        for i in (0..n - 1).rev() {
            d[i] -= self.sup[i] * d[i + 1];
        }
    }
}

#[derive(Debug, Clone)]
pub struct CondensedSolver {
    n_vertices: usize,
    n_dofs: usize,
    blocks: Vec<EdgeBlock>,
    schur: LU<f64, Dyn, Dyn>,
}

impl CondensedSolver {
    pub fn new(a: &CsrMatrix, mesh: &Arc<Mesh>) -> Result<Self> {
        let n = mesh.n_vertices();
        let n_dofs = mesh.n_dofs();
        if a.dim() != n_dofs {
            return Err(Error::LinearSolve(format!(
                "matrix is {0}x{0}, mesh has {n_dofs} dofs",
                a.dim()
            )));
        }
        check_pattern(a, mesh)?;
        let scale = a.max_abs().max(f64::MIN_POSITIVE);

        let mut schur = DMatrix::<f64>::zeros(n, n);
        for i in 0..n {
            for (j, v) in a.row(i) {
                if j < n {
                    schur[(i, j)] += v;
                }
            }
        }

        let mut blocks = Vec::with_capacity(mesh.n_edges());
        for (e, eg) in mesh.edges().iter().enumerate() {
            let start = eg.first_interior;
            let len = eg.n_interior();
            let last = start + len - 1;
            let mut sub = vec![0.0; len];
            let mut diag = vec![0.0; len];
            let mut sup = vec![0.0; len];
            for k in 0..len {
                let i = start + k;
                diag[k] = a.get(i, i);
                if k > 0 {
                    sub[k] = a.get(i, i - 1);
                }
                if k + 1 < len {
                    sup[k] = a.get(i, i + 1);
                }
            }
            let mut pivots = vec![0.0; len];
            for k in 0..len {
                let p = if k == 0 {
                    diag[0]
                } else {
                    diag[k] - sub[k] * sup[k - 1]
                };
                if !p.is_finite() || p.abs() <= PIVOT_FLOOR.max(1e-14 * scale) {
                    return Err(Error::LinearSolve(format!(
                        "vanishing pivot {p:e} on edge {e} interior row {k} (matrix scale {scale:e})"
                    )));
                }
                pivots[k] = p;
                sup[k] /= p;
            }
            let mut block = EdgeBlock {
                start,
                len,
                first_vertex: eg.first_vertex,
                second_vertex: eg.second_vertex,
                sub,
                pivots,
                sup,
                col_first: a.get(start, eg.first_vertex),
                col_second: a.get(last, eg.second_vertex),
                row_first: a.get(eg.first_vertex, start),
                row_second: a.get(eg.second_vertex, last),
                y_first: vec![0.0; len],
                y_second: vec![0.0; len],
            };
            let mut y1 = vec![0.0; len];
            y1[0] = block.col_first;
            block.solve_in_place(&mut y1);
            let mut y2 = vec![0.0; len];
            y2[len - 1] = block.col_second;
            block.solve_in_place(&mut y2);

            let (v1, v2) = (block.first_vertex, block.second_vertex);
            schur[(v1, v1)] -= block.row_first * y1[0];
            schur[(v1, v2)] -= block.row_first * y2[0];
            schur[(v2, v1)] -= block.row_second * y1[len - 1];
            schur[(v2, v2)] -= block.row_second * y2[len - 1];
            block.y_first = y1;
            block.y_second = y2;
            blocks.push(block);
        }

        let lu = schur.lu();
        if !lu.is_invertible() {
            return Err(Error::LinearSolve("vertex Schur complement is singular".into()));
        }
        let u = lu.u();
        let (min_piv, max_piv) = (0..n).fold((f64::INFINITY, 0.0f64), |(lo, hi), i| {
            let p = u[(i, i)].abs();
            (lo.min(p), hi.max(p))
        });
        if n > 0 && (!min_piv.is_finite() || min_piv <= 1e-14 * max_piv.max(scale)) {
            return Err(Error::LinearSolve(format!(
                "vertex Schur complement is numerically singular (pivot ratio {:e})",
                min_piv / max_piv
            )));
        }
        Ok(CondensedSolver {
            n_vertices: n,
            n_dofs,
            blocks,
            schur: lu,
        })
    }

    pub fn dim(&self) -> usize {
        self.n_dofs
    }

    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x)?;
        Ok(x)
    }

    pub fn solve_in_place(&self, x: &mut [f64]) -> Result<()> {
        if x.len() != self.n_dofs {
            return Err(Error::MeshMismatch);
        }
        let n = self.n_vertices;
        let mut rhs = DVector::from_column_slice(&x[..n]);
        for b in &self.blocks {
            let z = &mut x[b.start..b.start + b.len];
            b.solve_in_place(z);
            rhs[b.first_vertex] -= b.row_first * z[0];
            rhs[b.second_vertex] -= b.row_second * z[b.len - 1];
        }
        let xv = self
            .schur
            .solve(&rhs)
            .ok_or_else(|| Error::LinearSolve("vertex Schur solve failed".into()))?;
        x[..n].copy_from_slice(xv.as_slice());
        for b in &self.blocks {
            let (u1, u2) = (xv[b.first_vertex], xv[b.second_vertex]);
            let z = &mut x[b.start..b.start + b.len];
            for k in 0..b.len {
                z[k] -= b.y_first[k] * u1 + b.y_second[k] * u2;
            }
        }
        Ok(())
    }
}

fn check_pattern(a: &CsrMatrix, mesh: &Mesh) -> Result<()> {
    let n = mesh.n_vertices();
    for eg in mesh.edges() {
        let start = eg.first_interior;
        let last = start + eg.n_interior() - 1;
        for i in start..=last {
            for (j, v) in a.row(i) {
                let ok = v == 0.0
                    || (j + 1 >= i && j <= i + 1 && j >= start && j <= last)
                    || (i == start && j == eg.first_vertex)
                    || (i == last && j == eg.second_vertex);
                if !ok {
                    return Err(Error::LinearSolve(format!(
                        "entry ({i}, {j}) does not conform to the mesh structure"
                    )));
                }
            }
        }
    }
    for i in 0..n {
        for (j, v) in a.row(i) {
            if j < n || v == 0.0 {
                continue;
            }
            let ok = mesh.edges().iter().any(|eg| {
                let last = eg.first_interior + eg.n_interior() - 1;
                (eg.first_vertex == i && j == eg.first_interior)
                    || (eg.second_vertex == i && j == last)
            });
            if !ok {
                return Err(Error::LinearSolve(format!(
                    "entry ({i}, {j}) does not conform to the mesh structure"
                )));
            }
        }
    }
    Ok(())
}
