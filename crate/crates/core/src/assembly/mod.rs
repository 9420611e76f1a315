//! Linear finite-element discretization of the graph generator.
//!
//! The operator is defined by the bilinear form
//! `a(u, v) = Σ_e ∫ c_e u′v′ + Σ_e ∫ p_e u v − ⟨M Lu, Lv⟩`
//! plus the non-symmetric drift part `Σ_e ∫ d_e u′ v`. Continuity at vertices
//! is built into the DOF numbering and `M Lu + Cu = 0` is the natural
//! boundary condition of the form.

mod mesh;
mod solver;
mod spectrum;

use std::sync::Arc;

pub use mesh::{DofSite, EdgeGrid, GridFunction, Mesh};
pub use solver::CondensedSolver;
pub use spectrum::{eigenpairs, spectrum, Eigenpairs};

use crate::graph::{MetricGraph, Side};
use crate::sparse::CsrMatrix;
use crate::{Error, Result};

/// Abscissa of 2-point Gauss quadrature on `[-1, 1]`.
const GAUSS_2: f64 = 0.577_350_269_189_625_8;

#[derive(Debug, Clone)]
pub struct DiscreteOperator {
    mesh: Arc<Mesh>,
    pub mass: CsrMatrix,
    /// `Σ ∫ c u′v′ + Σ ∫ p u v − ⟨M Lu, Lv⟩`.
    pub stiffness: CsrMatrix,
    /// `Σ ∫ (d u′) v`, row = test function.
    pub convection: CsrMatrix,
    pub resolution: f64,
    mass_solver: CondensedSolver,
}

/// Assembles mass, stiffness and convection matrices of `g` on `mesh`.
pub fn assemble(g: &MetricGraph, mesh: &Arc<Mesh>) -> Result<DiscreteOperator> {
    if mesh.n_edges() != g.n_edges() || mesh.n_vertices() != g.n_vertices() {
        return Err(Error::MeshMismatch);
    }
    if g.coupling.dim() != g.n_vertices() {
        return Err(Error::invalid("coupling matrix dimension does not match vertex count"));
    }
    let nd = mesh.n_dofs();
    let mut mass = Vec::new();
    let mut stiff = Vec::new();
    let mut conv = Vec::new();

    for (edge, eg) in g.edges.iter().zip(mesh.edges()) {
        let h = eg.width();
        for cell in 0..eg.n_cells {
            let (xa, xb) = (eg.x(cell), eg.x(cell + 1));
            let dofs = [eg.dof(cell), eg.dof(cell + 1)];
            let mid = 0.5 * (xa + xb);
            let gauss = [mid - 0.5 * h * GAUSS_2, mid + 0.5 * h * GAUSS_2];
            let w = 0.5 * h;

            let mut k01 = 0.0;
            let mut k00 = 0.0;
            let mut p = [[0.0; 2]; 2];
            let mut d = [[0.0; 2]; 2];
            for &xg in &gauss {
                let phi = [(xb - xg) / h, (xg - xa) / h];
                let dphi = [-1.0 / h, 1.0 / h];
                let c = edge.diffusion.eval(xg);
                let pv = edge.potential.eval(xg);
                let dv = edge.drift.eval(xg);
                k00 += w * c / (h * h);
                k01 -= w * c / (h * h);
                for i in 0..2 {
                    for j in 0..2 {
                        p[i][j] += w * pv * phi[i] * phi[j];
                        d[i][j] += w * dv * dphi[j] * phi[i];
                    }
                }
            }
            // symmetric terms get one value for both (i, j) and (j, i)
            let p01 = p[0][1];
            stiff.push((dofs[0], dofs[0], k00 + p[0][0]));
            stiff.push((dofs[1], dofs[1], k00 + p[1][1]));
            stiff.push((dofs[0], dofs[1], k01 + p01));
            stiff.push((dofs[1], dofs[0], k01 + p01));

            mass.push((dofs[0], dofs[0], h / 3.0));
            mass.push((dofs[1], dofs[1], h / 3.0));
            mass.push((dofs[0], dofs[1], h / 6.0));
            mass.push((dofs[1], dofs[0], h / 6.0));

            for i in 0..2 {
                for j in 0..2 {
                    if d[i][j] != 0.0 {
                        conv.push((dofs[i], dofs[j], d[i][j]));
                    }
                }
            }
        }
    }
    for i in 0..g.n_vertices() {
        for k in 0..g.n_vertices() {
            let b = g.coupling.get(i, k);
            if b != 0.0 {
                stiff.push((i, k, -b));
            }
        }
    }

    let mass = CsrMatrix::from_triplets(nd, &mass);
    let stiffness = CsrMatrix::from_triplets(nd, &stiff);
    let convection = CsrMatrix::from_triplets(nd, &conv);
    let mass_solver = CondensedSolver::new(&mass, mesh)
        .map_err(|e| Error::LinearSolve(format!("mass matrix: {e}")))?;
    Ok(DiscreteOperator {
        mesh: Arc::clone(mesh),
        mass,
        stiffness,
        convection,
        resolution: mesh.resolution(),
        mass_solver,
    })
}

impl DiscreteOperator {
    pub fn mesh(&self) -> &Arc<Mesh> {
        &self.mesh
    }

    pub fn n_dofs(&self) -> usize {
        self.mesh.n_dofs()
    }

    pub fn is_drift_free(&self) -> bool {
        self.convection.max_abs() == 0.0
    }

    fn check(&self, u: &GridFunction) -> Result<()> {
        if u.conforms_to(&self.mesh) {
            Ok(())
        } else {
            Err(Error::MeshMismatch)
        }
    }

    pub fn solve_mass(&self, b: &[f64]) -> Result<Vec<f64>> {
        self.mass_solver.solve(b)
    }

    /// `(−stiffness + convection) u`, the generator before inverting the mass matrix.
    pub fn weak_apply(&self, u: &[f64]) -> Vec<f64> {
        let ku = self.stiffness.mul_vec(u);
        let cu = self.convection.mul_vec(u);
        ku.iter().zip(&cu).map(|(k, c)| c - k).collect()
    }

    /// Discrete generator `mass⁻¹(−stiffness + convection) u`.
    pub fn generator_apply(&self, u: &GridFunction) -> Result<GridFunction> {
        self.check(u)?;
        let rhs = self.weak_apply(u.values());
        GridFunction::from_values(&self.mesh, self.solve_mass(&rhs)?)
    }

    /// Solves `A u = f` for the discrete generator `A`.
    pub fn solve_stationary(&self, f: &GridFunction) -> Result<GridFunction> {
        self.check(f)?;
        let lhs = CsrMatrix::linear_combination(&[(1.0, &self.stiffness), (-1.0, &self.convection)]);
        let solver = CondensedSolver::new(&lhs, &self.mesh)?;
        let rhs: Vec<f64> = self.mass.mul_vec(f.values()).iter().map(|v| -v).collect();
        GridFunction::from_values(&self.mesh, solver.solve(&rhs)?)
    }

    pub fn mass_inner(&self, u: &[f64], v: &[f64]) -> f64 {
        self.mass.bilinear(u, v)
    }

    pub fn mass_norm(&self, u: &[f64]) -> f64 {
        self.mass_inner(u, u).max(0.0).sqrt()
    }
}

/// One-sided second-order derivative of an edge trace at one end, taken into the edge.
fn inward_derivative(trace: &[f64], h: f64, side: Side) -> f64 {
    let n = trace.len() - 1;
    match side {
        Side::Left => (-3.0 * trace[0] + 4.0 * trace[1] - trace[2]) / (2.0 * h),
        Side::Right => (-3.0 * trace[n] + 4.0 * trace[n - 1] - trace[n - 2]) / (2.0 * h),
    }
}

/// Per-vertex residual `(M Lu)_v + Σ_{e∈E_v} c_e(v) u′_e(v)` of the Kirchhoff condition,
/// derivatives pointing into the edges.
pub fn kirchhoff_residual(g: &MetricGraph, mesh: &Arc<Mesh>, u: &GridFunction) -> Result<Vec<f64>> {
    if !u.conforms_to(mesh) || mesh.n_edges() != g.n_edges() {
        return Err(Error::MeshMismatch);
    }
    let n = g.n_vertices();
    let lu: Vec<f64> = (0..n).map(|v| u.vertex_value(v)).collect();
    let mut res = g.coupling.apply(&lu);
    let traces: Vec<Vec<f64>> = (0..g.n_edges()).map(|e| u.edge_trace(e)).collect();
    for (v, r) in res.iter_mut().enumerate() {
        for &(e, side) in mesh.incidence(v) {
            let edge = &g.edges[e];
            let c = edge.diffusion.eval(edge.coordinate_at(side));
            *r += c * inward_derivative(&traces[e], mesh.edge(e).width(), side);
        }
    }
    Ok(res)
}
