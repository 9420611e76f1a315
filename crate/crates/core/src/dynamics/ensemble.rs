use rayon::prelude::*;

use super::{PathSample, Simulator};
use crate::assembly::GridFunction;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct PathSummary {
    pub path: u64,
    pub blow_up: bool,
    pub sup_norm: f64,
    pub final_probes: Vec<f64>,
}

/// Monte Carlo aggregates over paths `0..n_paths`, merged in path order.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleStats {
    pub n_paths: usize,
    pub blow_ups: usize,
    pub moment_q: f64,
    /// Estimate of `E sup_t ‖u(t)‖_∞^q` over non-exploded paths.
    pub sup_moment: f64,
    pub sup_moment_se: f64,
    pub probe_mean: Vec<f64>,
    pub probe_var: Vec<f64>,
    pub probe_var_se: Vec<f64>,
    pub summaries: Vec<PathSummary>,
}

/// Runs every path on a pool of `threads` workers and maps each sample through `f`.
/// Results come back in path order regardless of scheduling.
pub fn run_ensemble_map<T, F>(
    sim: &Simulator,
    initial: &GridFunction,
    n_paths: usize,
    threads: usize,
    f: F,
) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(PathSample) -> T + Sync,
{
    if n_paths == 0 {
        return Err(Error::invalid("an ensemble needs at least one path"));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| Error::invalid(format!("thread pool: {e}")))?;
    pool.install(|| {
        (0..n_paths as u64)
            .into_par_iter()
            .map(|i| sim.path(i, initial).map(&f))
            .collect()
    })
}

/// Runs the ensemble and aggregates moments at the configured probes.
pub fn run_ensemble(sim: &Simulator, initial: &GridFunction, n_paths: usize, threads: usize) -> Result<EnsembleStats> {
    let probes = sim.config().probes.clone();
    let summaries = run_ensemble_map(sim, initial, n_paths, threads, |s| PathSummary {
        path: s.path,
        blow_up: s.blow_up,
        sup_norm: s.sup_norm,
        final_probes: if s.blow_up {
            vec![f64::NAN; probes.len()]
        } else {
            probes.iter().map(|&p| s.final_state.values()[p]).collect()
        },
    })?;
    Ok(aggregate(summaries, sim.config().moment_q, probes.len()))
}

/// Sample mean and standard error.
pub(crate) fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Unbiased variance and its large-sample standard error `sqrt((μ₄ − σ⁴) / n)`.
pub(crate) fn variance_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.len() < 2 {
        return (0.0, 0.0);
    }
    let mean = xs.iter().sum::<f64>() / n;
    let m2 = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let m4 = xs.iter().map(|x| (x - mean).powi(4)).sum::<f64>() / n;
    let var = m2 * n / (n - 1.0);
    (var, ((m4 - m2 * m2).max(0.0) / n).sqrt())
}

fn aggregate(summaries: Vec<PathSummary>, q: f64, n_probes: usize) -> EnsembleStats {
    let ok: Vec<&PathSummary> = summaries.iter().filter(|s| !s.blow_up).collect();
    let moments: Vec<f64> = ok.iter().map(|s| s.sup_norm.powf(q)).collect();
    let (sup_moment, sup_moment_se) = mean_se(&moments);
    let mut probe_mean = Vec::with_capacity(n_probes);
    let mut probe_var = Vec::with_capacity(n_probes);
    let mut probe_var_se = Vec::with_capacity(n_probes);
    for p in 0..n_probes {
        let xs: Vec<f64> = ok.iter().map(|s| s.final_probes[p]).collect();
        probe_mean.push(mean_se(&xs).0);
        let (v, se) = variance_se(&xs);
        probe_var.push(v);
        probe_var_se.push(se);
    }
    EnsembleStats {
        n_paths: summaries.len(),
        blow_ups: summaries.len() - ok.len(),
        moment_q: q,
        sup_moment,
        sup_moment_se,
        probe_mean,
        probe_var,
        probe_var_se,
        summaries,
    }
}
