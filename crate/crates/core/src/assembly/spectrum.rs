use nalgebra::{DMatrix, SymmetricEigen};

use super::DiscreteOperator;
use crate::{Error, Result};

/// Generalized eigenpairs of `stiffness · w = λ · mass · w` for a drift-free operator.
#[derive(Debug, Clone)]
pub struct Eigenpairs {
    /// Generator eigenvalues `−λ`, from the one closest to zero downwards.
    pub values: Vec<f64>,
    /// Column `k` is the mass-orthonormal eigenvector for `values[k]`.
    pub vectors: DMatrix<f64>,
}

impl Eigenpairs {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn vector(&self, k: usize) -> Vec<f64> {
        self.vectors.column(k).iter().copied().collect()
    }

    /// Coefficients `⟨u, w_k⟩_mass` of `u` in the eigenbasis.
    pub fn coefficients(&self, op: &DiscreteOperator, u: &[f64]) -> Vec<f64> {
        let mu = op.mass.mul_vec(u);
        (0..self.len())
            .map(|k| self.vectors.column(k).iter().zip(&mu).map(|(w, m)| w * m).sum())
            .collect()
    }

    /// `Σ_k c_k w_k`.
    pub fn synthesize(&self, coeffs: &[f64]) -> Vec<f64> {
        let n = self.vectors.nrows();
        let mut out = vec![0.0; n];
        for (k, &c) in coeffs.iter().enumerate() {
            if c == 0.0 {
                continue;
            }
            for (o, w) in out.iter_mut().zip(self.vectors.column(k).iter()) {
                *o += c * w;
            }
        }
        out
    }
}

/// Full generalized eigendecomposition of the drift-free generator (dense).
pub fn eigenpairs(op: &DiscreteOperator) -> Result<Eigenpairs> {
    if !op.is_drift_free() {
        return Err(Error::invalid("spectrum requires a drift-free operator"));
    }
    let mass = op.mass.to_dense();
    let stiff = op.stiffness.to_dense();
    let chol = mass
        .cholesky()
        .ok_or_else(|| Error::Eigen("mass matrix is not positive definite".into()))?;
    let l = chol.l();
    // C = L⁻¹ K L⁻ᵀ
    let linv_k = l
        .solve_lower_triangular(&stiff)
        .ok_or_else(|| Error::Eigen("triangular solve failed".into()))?;
    let c = l
        .solve_lower_triangular(&linv_k.transpose())
        .ok_or_else(|| Error::Eigen("triangular solve failed".into()))?;
    let c = (&c + c.transpose()) * 0.5;
    let n = c.nrows();
    let eig = SymmetricEigen::try_new(c, 1e-15, 2000 * n.max(1))
        .ok_or_else(|| Error::Eigen(format!("symmetric QR did not converge for n = {n}")))?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let lt = l.transpose();
    let mut vectors = DMatrix::zeros(n, n);
    let mut values = Vec::with_capacity(n);
    for (col, &k) in order.iter().enumerate() {
        let y = eig.eigenvectors.column(k).into_owned();
        let w = lt
            .solve_upper_triangular(&y)
            .ok_or_else(|| Error::Eigen("back substitution failed".into()))?;
        vectors.set_column(col, &w);
        values.push(-eig.eigenvalues[k]);
    }
    Ok(Eigenpairs { values, vectors })
}

/// The `count` generator eigenvalues closest to zero, in descending order.
pub fn spectrum(op: &DiscreteOperator, count: usize) -> Result<Vec<f64>> {
    let mut v = eigenpairs(op)?.values;
    v.truncate(count);
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::{assemble, Mesh};
    use crate::graph::{CouplingMatrix, MetricGraph};

    /// First root of `(μ² − 1) sin μ − 2μ cos μ = 0`, the Robin problem
    /// `−u″ = μ²u`, `u′(0) = u(0)`, `−u′(1) = u(1)`, by bisection.
    fn robin_first_root() -> f64 {
        let g = |m: f64| (m * m - 1.0) * m.sin() - 2.0 * m * m.cos();
        let (mut lo, mut hi) = (0.5, 2.0);
        assert!(g(lo) * g(hi) < 0.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if g(lo) * g(mid) <= 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn robin_leading_eigenvalue() {
        let mu = robin_first_root();
        assert!((mu - 1.306_542_374).abs() < 1e-6);
        let g = MetricGraph::single_edge(1.0, CouplingMatrix::diagonal(&[-1.0, -1.0]));
        let mesh = Mesh::build(&g, 1.0 / 64.0).unwrap();
        let op = assemble(&g, &mesh).unwrap();
        let lead = spectrum(&op, 1).unwrap()[0];
        let exact = -mu * mu;
        assert!(((lead - exact) / exact).abs() < 1e-3, "{lead} vs {exact}");
    }

    #[test]
    fn eigenvectors_are_mass_orthonormal() {
        let g = MetricGraph::star(&[1.0, 0.5, 0.8], CouplingMatrix::diagonal(&[-1.0, -0.5, -0.2, -2.0]));
        let mesh = Mesh::build(&g, 0.1).unwrap();
        let op = assemble(&g, &mesh).unwrap();
        let ep = eigenpairs(&op).unwrap();
        let m = op.mass.to_dense();
        let gram = ep.vectors.transpose() * &m * &ep.vectors;
        let err = (gram - DMatrix::<f64>::identity(ep.len(), ep.len())).abs().max();
        assert!(err < 1e-10, "{err}");
        assert!(ep.values.windows(2).all(|w| w[0] >= w[1]));
        assert!(ep.values[0] < 0.0);
    }

    #[test]
    fn halving_the_coupling_raises_every_eigenvalue() {
        let g = MetricGraph::path(&[1.0, 0.6], CouplingMatrix::diagonal(&[-1.0, -2.0, -0.7]));
        let mesh = Mesh::build(&g, 0.05).unwrap();
        let full = spectrum(&assemble(&g, &mesh).unwrap(), usize::MAX).unwrap();
        let half_g = g.with_coupling(g.coupling.scaled(0.5));
        let half = spectrum(&assemble(&half_g, &mesh).unwrap(), usize::MAX).unwrap();
        for (a, b) in full.iter().zip(&half) {
            assert!(b >= &(a - 1e-9 * a.abs()), "{b} < {a}");
        }
    }

    #[test]
    fn drift_is_rejected() {
        let mut g = MetricGraph::single_edge(1.0, CouplingMatrix::diagonal(&[-1.0, -1.0]));
        g.edges[0].drift = crate::graph::CoefficientProfile::constant(1.0);
        let mesh = Mesh::build(&g, 0.25).unwrap();
        assert!(spectrum(&assemble(&g, &mesh).unwrap(), 3).is_err());
    }
}
