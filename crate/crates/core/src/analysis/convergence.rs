use std::sync::Arc;

use rayon::prelude::*;

use crate::assembly::{DiscreteOperator, GridFunction};
use crate::dynamics::{ReactionSpec, Simulator, SolverConfig};
use crate::noise::NoiseSpec;
use crate::{Error, Result};

/// A problem solved at several time steps with shared noise.
#[derive(Debug, Clone)]
pub struct RefinementProblem {
    pub op: Arc<DiscreteOperator>,
    pub reaction: ReactionSpec,
    pub noise: NoiseSpec,
    pub initial: GridFunction,
    /// `t_end`, scheme, seed and taming are taken from here; `dt` is overridden per level.
    pub config: SolverConfig,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvergenceRow {
    /// Coarse step of the pair `(dt, dt/2)` (or the next finer level).
    pub dt: f64,
    pub error: f64,
    pub std_error: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogLogFit {
    pub slope: f64,
    pub intercept: f64,
    /// Two standard errors of the slope.
    pub half_width: f64,
    pub r_squared: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceTable {
    pub rows: Vec<ConvergenceRow>,
    pub fit: LogLogFit,
    /// False when some error estimate is not resolved above its standard error.
    pub usable: bool,
    pub n_paths: usize,
    pub blow_ups: usize,
}

/// Least-squares line through `(ln x, ln y)`.
pub fn fit_loglog(xs: &[f64], ys: &[f64]) -> Result<LogLogFit> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(Error::invalid("a log-log fit needs at least two points"));
    }
    if xs.iter().chain(ys).any(|&v| !(v > 0.0) || !v.is_finite()) {
        return Err(Error::invalid("log-log fit needs positive finite data"));
    }
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ly.iter().map(|y| (y - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::invalid("log-log fit needs distinct abscissae"));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = lx
        .iter()
        .zip(&ly)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum();
    let half_width = if lx.len() > 2 {
        2.0 * (sse / (n - 2.0) / sxx).sqrt()
    } else {
        0.0
    };
    let r_squared = if syy > 0.0 { 1.0 - sse / syy } else { 1.0 };
    Ok(LogLogFit {
        slope,
        intercept,
        half_width,
        r_squared,
    })
}

/// Strong-error study by coupled self-refinement.
///
/// Every level runs with the same noise: a step of length `dt` uses the sum of
/// the `dt / dt_min` finest increments it spans. The error at level `dt` is
/// `E ‖u_dt(T) − u_next(T)‖_mass` against the next finer level.
pub fn strong_order_time(
    problem: &RefinementProblem,
    dts: &[f64],
    n_paths: usize,
    threads: usize,
) -> Result<ConvergenceTable> {
    if dts.len() < 3 {
        return Err(Error::invalid("a convergence study needs at least 3 levels"));
    }
    if n_paths == 0 {
        return Err(Error::invalid("a convergence study needs at least one path"));
    }
    let mut levels = dts.to_vec();
    levels.sort_by(|a, b| b.total_cmp(a));
    let dt_min = *levels.last().unwrap();
    let mut sims = Vec::with_capacity(levels.len());
    for &dt in &levels {
        let ratio = dt / dt_min;
        let sub = ratio.round();
        let dyadic = sub >= 1.0 && (ratio - sub).abs() < 1e-9 * ratio && (sub as u64).is_power_of_two();
        if !dyadic {
            return Err(Error::invalid(format!("time steps are not dyadically nested: {dt} / {dt_min}")));
        }
        let cfg = SolverConfig {
            dt,
            noise_substeps: sub as u64,
            probes: Vec::new(),
            record_snapshots: false,
            output_stride: usize::MAX,
            ..problem.config.clone()
        };
        sims.push(Simulator::new(&problem.op, &problem.reaction, &problem.noise, cfg)?);
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| Error::invalid(format!("thread pool: {e}")))?;
    let finals: Vec<Option<Vec<Vec<f64>>>> = pool.install(|| {
        (0..n_paths as u64)
            .into_par_iter()
            .map(|i| -> Result<Option<Vec<Vec<f64>>>> {
                let mut out = Vec::with_capacity(sims.len());
                for sim in &sims {
                    let s = sim.path(i, &problem.initial)?;
                    if s.blow_up {
                        return Ok(None);
                    }
                    out.push(s.final_state.into_values());
                }
                Ok(Some(out))
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let ok: Vec<&Vec<Vec<f64>>> = finals.iter().flatten().collect();
    if ok.is_empty() {
        return Err(Error::invalid("every path exploded"));
    }
    let op = &problem.op;
    let mut rows = Vec::with_capacity(levels.len() - 1);
    for l in 0..levels.len() - 1 {
        let errs: Vec<f64> = ok
            .iter()
            .map(|f| {
                let d: Vec<f64> = f[l].iter().zip(&f[l + 1]).map(|(a, b)| a - b).collect();
                op.mass_norm(&d)
            })
            .collect();
        let (error, std_error) = crate::dynamics::mean_se(&errs);
        rows.push(ConvergenceRow {
            dt: levels[l],
            error,
            std_error,
        });
    }
    let usable = rows.iter().all(|r| r.error > 0.0 && r.std_error < r.error);
    let xs: Vec<f64> = rows.iter().map(|r| r.dt).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.error).collect();
    let fit = fit_loglog(&xs, &ys).unwrap_or(LogLogFit {
        slope: f64::NAN,
        intercept: f64::NAN,
        half_width: f64::NAN,
        r_squared: f64::NAN,
    });
    Ok(ConvergenceTable {
        rows,
        fit,
        usable: usable && fit.slope.is_finite(),
        n_paths,
        blow_ups: n_paths - ok.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::{assemble, eigenpairs, Mesh};
    use crate::dynamics::Scheme;
    use crate::graph::{CouplingMatrix, MetricGraph};

    #[test]
    fn exact_power_law_is_recovered() {
        let xs = [0.1, 0.05, 0.025, 0.0125];
        let ys: Vec<f64> = xs.iter().map(|x: &f64| 3.0 * x.powf(1.5)).collect();
        let fit = fit_loglog(&xs, &ys).unwrap();
        assert!((fit.slope - 1.5).abs() < 1e-12);
        assert!(fit.half_width < 1e-10);
        assert!((fit.r_squared - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cn_eigenmode_errors_match_the_amplification_factor() {
        let g = MetricGraph::single_edge(1.0, CouplingMatrix::diagonal(&[-1.0, -1.0]));
        let mesh = Mesh::build(&g, 1.0 / 32.0).unwrap();
        let op = Arc::new(assemble(&g, &mesh).unwrap());
        let ep = eigenpairs(&op).unwrap();
        let k = 2;
        let w = GridFunction::from_values(&mesh, ep.vector(k)).unwrap();
        let lam = ep.values[k];
        let t_end = 0.5;
        let problem = RefinementProblem {
            op: op.clone(),
            reaction: ReactionSpec::zero(1),
            noise: NoiseSpec::none(1),
            initial: w,
            config: SolverConfig {
                t_end,
                scheme: Scheme::DeterministicCn,
                ..SolverConfig::default()
            },
        };
        let dts = [1.0 / 16.0, 1.0 / 32.0, 1.0 / 64.0, 1.0 / 128.0];
        let table = strong_order_time(&problem, &dts, 1, 1).unwrap();
        let amp = |dt: f64| {
            let z = lam * dt;
            ((1.0 + 0.5 * z) / (1.0 - 0.5 * z)).powi((t_end / dt).round() as i32)
        };
        for (row, w) in table.rows.iter().zip(dts.windows(2)) {
            let expect = (amp(w[0]) - amp(w[1])).abs();
            assert!((row.error - expect).abs() < 1e-10, "{} vs {expect}", row.error);
        }
    }

    #[test]
    fn rejects_non_nested_steps() {
        let g = MetricGraph::single_edge(1.0, CouplingMatrix::diagonal(&[-1.0, -1.0]));
        let mesh = Mesh::build(&g, 0.25).unwrap();
        let op = Arc::new(assemble(&g, &mesh).unwrap());
        let problem = RefinementProblem {
            op,
            reaction: ReactionSpec::zero(1),
            noise: NoiseSpec::none(1),
            initial: GridFunction::zeros(&mesh),
            config: SolverConfig::default(),
        };
        assert!(strong_order_time(&problem, &[0.1, 0.03, 0.01], 1, 1).is_err());
        assert!(strong_order_time(&problem, &[0.1, 0.05], 1, 1).is_err());
    }
}
