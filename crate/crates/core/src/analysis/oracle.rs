use crate::assembly::{eigenpairs, DiscreteOperator};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct OracleResult {
    pub variance: f64,
    /// One entry per generalized eigenpair, in spectrum order.
    pub contributions: Vec<f64>,
    pub eigenvalues: Vec<f64>,
}

/// Variance at time `t` of `dc = λ c dt + a dβ`, `c(0) = 0`.
pub fn ou_mode_variance(lambda: f64, amplitude: f64, t: f64) -> f64 {
    let a2 = amplitude * amplitude;
    if lambda == 0.0 {
        return a2 * t;
    }
    // expm1 keeps the slow modes accurate
    a2 * -(2.0 * lambda * t).exp_m1() / (-2.0 * lambda)
}

/// Variance at a DOF of the linear problem with additive noise of intensity
/// `σ`: the sum over mass-orthonormal eigenvectors `w` of
/// `σ² w(x)² (1 − e^{2λT}) / (−2λ)`. `t_end = ∞` gives the stationary value.
pub fn spectral_oracle(op: &DiscreteOperator, probe: usize, t_end: f64, sigma: f64) -> Result<OracleResult> {
    if probe >= op.n_dofs() {
        return Err(Error::invalid(format!("probe dof {probe} out of range")));
    }
    if !(t_end >= 0.0) {
        return Err(Error::invalid("T must be nonnegative"));
    }
    let ep = eigenpairs(op)?;
    let contributions: Vec<f64> = (0..ep.len())
        .map(|k| {
            let w = ep.vectors[(probe, k)];
            let lam = ep.values[k];
            if t_end.is_infinite() {
                sigma * sigma * w * w / (-2.0 * lam)
            } else {
                ou_mode_variance(lam, sigma * w, t_end)
            }
        })
        .collect();
    let variance = contributions.iter().sum();
    Ok(OracleResult {
        variance,
        contributions,
        eigenvalues: ep.values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::{assemble, Mesh};
    use crate::graph::{CouplingMatrix, MetricGraph};

    fn robin() -> DiscreteOperator {
        let g = MetricGraph::single_edge(1.0, CouplingMatrix::diagonal(&[-1.0, -1.0]));
        let mesh = Mesh::build(&g, 1.0 / 16.0).unwrap();
        assemble(&g, &mesh).unwrap()
    }

    #[test]
    fn zero_noise_gives_zero() {
        let op = robin();
        let r = spectral_oracle(&op, 5, 1.0, 0.0).unwrap();
        assert_eq!(r.variance, 0.0);
        assert!(r.contributions.iter().all(|&c| c == 0.0));
    }

    #[test]
    fn long_horizon_approaches_the_stationary_value() {
        let op = robin();
        let probe = op.mesh().nearest_dof(0, 0.5);
        let stat = spectral_oracle(&op, probe, f64::INFINITY, 0.5).unwrap();
        let long = spectral_oracle(&op, probe, 40.0, 0.5).unwrap();
        assert!((stat.variance - long.variance).abs() < 1e-12 * stat.variance);
    }

    #[test]
    fn contributions_are_nonnegative_and_sum_to_the_total() {
        let op = robin();
        let r = spectral_oracle(&op, 3, 0.7, 0.3).unwrap();
        assert!(r.contributions.iter().all(|&c| c >= 0.0));
        assert_eq!(r.variance, r.contributions.iter().sum::<f64>());
    }

    #[test]
    fn mode_variance_matches_closed_form() {
        let (l, a, t) = (-2.0f64, 0.4f64, 0.3f64);
        let v = ou_mode_variance(l, a, t);
        assert!((v - a * a * (1.0 - (2.0 * l * t).exp()) / (-2.0 * l)).abs() < 1e-15);
        assert_eq!(ou_mode_variance(0.0, 2.0, 3.0), 12.0);
    }
}
