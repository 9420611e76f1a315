use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::assembly::{eigenpairs, DiscreteOperator, Eigenpairs};
use crate::dynamics::LinearPropagator;
use crate::sparse::CsrMatrix;
use crate::{Error, Result};

const TOL: f64 = 1e-12;
const LAW_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct PropertyCheck {
    pub name: &'static str,
    pub passed: bool,
    /// Largest observed excess over the bound; `≤ 0` (up to tolerance) on a pass.
    pub worst_margin: f64,
    pub trials: usize,
    pub note: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SemigroupReport {
    pub checks: Vec<PropertyCheck>,
    /// Fitted constant of `t ‖A S(t) u‖ ≤ C ‖u‖` over the sampled grid.
    pub smoothing_constant: f64,
}

impl SemigroupReport {
    pub fn get(&self, name: &str) -> Option<&PropertyCheck> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn passed(&self, name: &str) -> bool {
        self.get(name).is_some_and(|c| c.passed)
    }

    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

struct Battery {
    name: &'static str,
    worst: f64,
    trials: usize,
    tol: f64,
    failure: Option<String>,
}

impl Battery {
    fn new(name: &'static str, tol: f64) -> Self {
        Battery {
            name,
            worst: f64::NEG_INFINITY,
            trials: 0,
            tol,
            failure: None,
        }
    }

    fn record(&mut self, margin: f64) {
        self.trials += 1;
        self.worst = if margin.is_nan() { f64::INFINITY } else { self.worst.max(margin) };
    }

    fn fail(&mut self, why: String) {
        self.failure.get_or_insert(why);
    }

    fn finish(self) -> PropertyCheck {
        let passed = self.failure.is_none() && self.trials > 0 && self.worst <= self.tol;
        PropertyCheck {
            name: self.name,
            passed,
            worst_margin: self.worst,
            trials: self.trials,
            note: self.failure.unwrap_or_default(),
        }
    }
}

fn sup(u: &[f64]) -> f64 {
    u.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

/// `mass + dt K` has nonpositive off-diagonal entries (an M-matrix once it is
/// positive definite), which is what makes implicit Euler order preserving.
fn m_matrix_margin(op: &DiscreteOperator, dt: f64) -> f64 {
    let a = CsrMatrix::linear_combination(&[(1.0, &op.mass), (dt, &op.stiffness)]);
    let mut worst = f64::NEG_INFINITY;
    for i in 0..a.dim() {
        let diag = a.get(i, i);
        for (j, v) in a.row(i) {
            if j != i {
                worst = worst.max(v / diag.abs().max(f64::MIN_POSITIVE));
            }
        }
    }
    worst
}

fn spectral_flow(ep: &Eigenpairs, coeffs: &[f64], t: f64, derivative: bool) -> Vec<f64> {
    let c: Vec<f64> = coeffs
        .iter()
        .zip(&ep.values)
        .map(|(c, &l)| c * (l * t).exp() * if derivative { l } else { 1.0 })
        .collect();
    ep.synthesize(&c)
}

/// Contraction, positivity, sub-Markov and semigroup-law batteries for the
/// discrete linear dynamics.
///
/// A failing property is reported, never raised: a factorization or
/// eigen-solver failure marks the affected properties as failed.
pub fn check_semigroup_properties(
    op: &Arc<DiscreteOperator>,
    trials: usize,
    dt_list: &[f64],
    seed: u64,
) -> Result<SemigroupReport> {
    if !op.is_drift_free() {
        return Err(Error::invalid("semigroup checks require a drift-free operator"));
    }
    let n = op.n_dofs();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut l2_cn = Battery::new("contraction-l2-cn", TOL);
    let mut l2_ie = Battery::new("contraction-l2-ie", TOL);
    let mut linf_ie = Battery::new("contraction-linf-ie", TOL);
    let mut positivity = Battery::new("positivity", TOL);
    let mut sub_markov = Battery::new("sub-markov", TOL);
    let mut m_matrix = Battery::new("m-matrix", 0.0);
    let mut law = Battery::new("semigroup-law", LAW_TOL);
    let mut smoothing = Battery::new("analytic-smoothing", 1e-9);

    let ones = vec![1.0; n];
    for &dt in dt_list {
        let mm = m_matrix_margin(op, dt);
        m_matrix.record(mm);
        let prop = match LinearPropagator::new(op, dt) {
            Ok(p) => p,
            Err(e) => {
                for b in [&mut l2_cn, &mut l2_ie, &mut linf_ie, &mut positivity, &mut sub_markov] {
                    b.fail(format!("dt = {dt}: {e}"));
                }
                continue;
            }
        };
        for _ in 0..trials {
            // signed and nonnegative inputs: the latter carry a large smooth component
            let u: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let w: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
            for x in [&u, &w, &ones] {
                let norm = op.mass_norm(x);
                match (prop.crank_nicolson(x), prop.implicit_euler(x)) {
                    (Ok(cn), Ok(ie)) => {
                        l2_cn.record(op.mass_norm(&cn) / norm - 1.0);
                        l2_ie.record(op.mass_norm(&ie) / norm - 1.0);
                        linf_ie.record(sup(&ie) / sup(x) - 1.0);
                    }
                    (Err(e), _) | (_, Err(e)) => {
                        l2_cn.fail(e.to_string());
                        l2_ie.fail(e.to_string());
                        linf_ie.fail(e.to_string());
                    }
                }
            }
            match prop.implicit_euler(&w) {
                Ok(ie) => {
                    let lo = ie.iter().cloned().fold(f64::INFINITY, f64::min);
                    let hi = ie.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    positivity.record(-lo);
                    sub_markov.record((hi - 1.0).max(-lo));
                }
                Err(e) => {
                    positivity.fail(e.to_string());
                    sub_markov.fail(e.to_string());
                }
            }
        }
    }

    let mut smoothing_constant = f64::NAN;
    match eigenpairs(op) {
        Ok(ep) => {
            let mut c_fit = 0.0f64;
            for _ in 0..trials {
                let u: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
                let norm = op.mass_norm(&u);
                let coeffs = ep.coefficients(op, &u);
                for &dt in dt_list {
                    let once = spectral_flow(&ep, &coeffs, dt, false);
                    let twice = spectral_flow(&ep, &ep.coefficients(op, &once), dt, false);
                    let direct = spectral_flow(&ep, &coeffs, 2.0 * dt, false);
                    let diff: Vec<f64> = direct.iter().zip(&twice).map(|(a, b)| a - b).collect();
                    let scale = norm.max(op.mass_norm(&direct));
                    law.record(op.mass_norm(&diff) / scale);
                    for t in [dt, 10.0 * dt, 100.0 * dt] {
                        let au = spectral_flow(&ep, &coeffs, t, true);
                        let c = t * op.mass_norm(&au) / norm;
                        c_fit = c_fit.max(c);
                        smoothing.record(c * std::f64::consts::E - 1.0);
                    }
                }
            }
            smoothing_constant = c_fit;
        }
        Err(e) => {
            law.fail(e.to_string());
            smoothing.fail(e.to_string());
        }
    }

    Ok(SemigroupReport {
        checks: vec![
            l2_cn.finish(),
            l2_ie.finish(),
            linf_ie.finish(),
            m_matrix.finish(),
            positivity.finish(),
            sub_markov.finish(),
            law.finish(),
            smoothing.finish(),
        ],
        smoothing_constant,
    })
}
