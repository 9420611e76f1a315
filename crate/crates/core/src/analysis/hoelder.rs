use super::convergence::fit_loglog;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct HoelderEstimate {
    /// Half the log-log slope of the mean squared increment against the lag.
    pub exponent: f64,
    pub r_squared: f64,
    /// Lags in time units, and the mean squared increment at each.
    pub lags: Vec<f64>,
    pub mean_sq_increments: Vec<f64>,
    /// The smallest lag is within four time steps, where the scheme's own
    /// step size dominates the increments.
    pub insufficient_resolution: bool,
}

/// Temporal Hölder exponent from uniformly sampled paths.
///
/// `series[p][i]` is path `p` at time `i * dt`; `lags` are in steps and must
/// be at least four successive doublings.
pub fn estimate_hoelder(series: &[Vec<f64>], dt: f64, lags: &[usize]) -> Result<HoelderEstimate> {
    if lags.len() < 4 {
        return Err(Error::invalid("at least 4 lags are needed"));
    }
    if lags[0] == 0 || lags.windows(2).any(|w| w[1] != 2 * w[0]) {
        return Err(Error::invalid("lags must be successive doublings of a positive step count"));
    }
    if !(dt > 0.0) {
        return Err(Error::invalid("dt must be positive"));
    }
    let max_lag = *lags.last().unwrap();
    if series.is_empty() || series.iter().any(|s| s.len() <= max_lag) {
        return Err(Error::invalid(format!("every series needs more than {max_lag} samples")));
    }
    let mut ms = Vec::with_capacity(lags.len());
    for &lag in lags {
        let mut sum = 0.0;
        let mut count = 0usize;
        for s in series {
            for i in 0..s.len() - lag {
                let d = s[i + lag] - s[i];
                sum += d * d;
            }
            count += s.len() - lag;
        }
        ms.push(sum / count as f64);
    }
    if ms.iter().any(|&m| !(m > 0.0) || !m.is_finite()) {
        return Err(Error::invalid("increments vanish or are not finite at some lag"));
    }
    let taus: Vec<f64> = lags.iter().map(|&l| l as f64 * dt).collect();
    let fit = fit_loglog(&taus, &ms)?;
    Ok(HoelderEstimate {
        exponent: fit.slope / 2.0,
        r_squared: fit.r_squared,
        lags: taus,
        mean_sq_increments: ms,
        insufficient_resolution: lags[0] <= 4,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn brownian(n_paths: usize, n: usize, dt: f64, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n_paths)
            .map(|_| {
                let mut w = 0.0;
                let mut out = Vec::with_capacity(n);
                out.push(0.0);
                for _ in 1..n {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    w += dt.sqrt() * z;
                    out.push(w);
                }
                out
            })
            .collect()
    }

    #[test]
    fn brownian_motion_has_exponent_one_half() {
        let dt = 1e-3;
        let s = brownian(20, 4000, dt, 9);
        let est = estimate_hoelder(&s, dt, &[8, 16, 32, 64, 128]).unwrap();
        assert!((est.exponent - 0.5).abs() < 0.05, "{}", est.exponent);
        assert!(!est.insufficient_resolution);
    }

    #[test]
    fn smooth_paths_score_near_one() {
        let dt = 1e-3;
        let s: Vec<Vec<f64>> = (0..3)
            .map(|p| (0..2000).map(|i| ((p + 1) as f64 * i as f64 * dt).sin()).collect())
            .collect();
        let est = estimate_hoelder(&s, dt, &[1, 2, 4, 8]).unwrap();
        assert!(est.exponent >= 0.9);
        assert!(est.insufficient_resolution);
    }

    #[test]
    fn scaling_the_paths_leaves_the_exponent_unchanged() {
        let dt = 1e-3;
        let s = brownian(4, 1000, dt, 3);
        let lags = [8, 16, 32, 64];
        let a = estimate_hoelder(&s, dt, &lags).unwrap();
        for c in [0.5, 4.0, 1e3] {
            let scaled: Vec<Vec<f64>> = s.iter().map(|p| p.iter().map(|v| c * v).collect()).collect();
            let b = estimate_hoelder(&scaled, dt, &lags).unwrap();
            assert!((a.exponent - b.exponent).abs() < 1e-12);
        }
    }

    #[test]
    fn bad_lag_sets_are_rejected() {
        let s = vec![vec![0.0; 100]];
        assert!(estimate_hoelder(&s, 0.1, &[1, 2, 4]).is_err());
        assert!(estimate_hoelder(&s, 0.1, &[1, 2, 5, 10]).is_err());
        assert!(estimate_hoelder(&s, 0.1, &[16, 32, 64, 128]).is_err());
        assert!(estimate_hoelder(&s, 0.1, &[1, 2, 4, 8]).is_err());
    }
}
