use std::sync::Arc;

use graphsrd::analysis::{ou_mode_variance, spectral_oracle};
use graphsrd::assembly::{assemble, eigenpairs, spectrum, DiscreteOperator, Mesh};
use graphsrd::graph::{CouplingMatrix, MetricGraph};

fn robin_edge(h: f64) -> Arc<DiscreteOperator> {
    let g = MetricGraph::single_edge(1.0, CouplingMatrix::diagonal(&[-1.0, -1.0]));
    let mesh = Mesh::build(&g, h).unwrap();
    Arc::new(assemble(&g, &mesh).unwrap())
}

fn star(h: f64) -> Arc<DiscreteOperator> {
    let m = CouplingMatrix::from_rows(&[
        vec![-1.5, 0.5, 0.2, 0.3],
        vec![0.5, -1.0, 0.0, 0.0],
        vec![0.2, 0.0, -0.4, 0.1],
        vec![0.3, 0.0, 0.1, -0.6],
    ])
    .unwrap();
    let g = MetricGraph::star(&[1.0, 0.8, 1.2], m);
    let mesh = Mesh::build(&g, h).unwrap();
    Arc::new(assemble(&g, &mesh).unwrap())
}

/// Roots of `(μ² − 1) sin μ − 2μ cos μ`, i.e. `−u″ = μ² u` with `u′(0) = u(0)`, `u′(1) = −u(1)`.
fn robin_roots(count: usize) -> Vec<f64> {
    let f = |m: f64| (m * m - 1.0) * m.sin() - 2.0 * m * m.cos();
    let mut roots = Vec::new();
    let step = 1e-3;
    let mut a = step;
    while roots.len() < count {
        let b = a + step;
        if f(a) * f(b) < 0.0 {
            let (mut lo, mut hi) = (a, b);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if f(lo) * f(mid) <= 0.0 {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            roots.push(0.5 * (lo + hi));
        }
        a = b;
    }
    roots
}

#[test]
fn robin_spectrum_converges_at_second_order() {
    let exact: Vec<f64> = robin_roots(3).iter().map(|m| -m * m).collect();
    let mut errors = Vec::new();
    for h in [1.0 / 16.0, 1.0 / 32.0, 1.0 / 64.0] {
        let s = spectrum(&robin_edge(h), 3).unwrap();
        for k in 0..3 {
            // conforming elements approximate from below, i.e. more negative
            assert!(s[k] < exact[k], "h={h} k={k}: {} vs {}", s[k], exact[k]);
        }
        errors.push((s[0] - exact[0]).abs());
        if h == 1.0 / 64.0 {
            for k in 0..3 {
                assert!(((s[k] - exact[k]) / exact[k]).abs() < 2e-3, "k={k}: {} vs {}", s[k], exact[k]);
            }
        }
    }
    for w in errors.windows(2) {
        let order = (w[0] / w[1]).log2();
        assert!((order - 2.0).abs() < 0.1, "observed order {order}");
    }
}

#[test]
fn eigenvectors_are_mass_orthonormal() {
    let op = star(0.1);
    let ep = eigenpairs(&op).unwrap();
    for j in 0..ep.len() {
        let wj = ep.vector(j);
        let kw = op.stiffness.mul_vec(&wj);
        let mw = op.mass.mul_vec(&wj);
        for i in 0..op.n_dofs() {
            assert!((kw[i] + ep.values[j] * mw[i]).abs() < 1e-8 * (1.0 + ep.values[j].abs()));
        }
        for k in 0..ep.len() {
            let target = if j == k { 1.0 } else { 0.0 };
            assert!((op.mass.bilinear(&wj, &ep.vector(k)) - target).abs() < 1e-10);
        }
    }
    assert!(ep.values.windows(2).all(|w| w[0] >= w[1]));
}

#[test]
fn stationary_oracle_matches_inverse_stiffness() {
    // Σ_k w_k w_kᵀ / (2|λ_k|) = S⁻¹ / 2, computed here without any eigensolve.
    let op = star(0.1);
    let sigma = 0.7;
    let dense = op.stiffness.to_dense();
    let lu = dense.lu();
    for probe in [0, 3, op.n_dofs() - 1] {
        let mut e = nalgebra::DVector::zeros(op.n_dofs());
        e[probe] = 1.0;
        let col = lu.solve(&e).unwrap();
        let expected = 0.5 * sigma * sigma * col[probe];
        let got = spectral_oracle(&op, probe, f64::INFINITY, sigma).unwrap().variance;
        assert!((got - expected).abs() < 1e-10 * expected, "probe {probe}: {got} vs {expected}");
    }
}

#[test]
fn finite_horizon_oracle_matches_fine_step_recursion() {
    // Each mode obeys dc = λ c dt + σ w(x) dβ; the midpoint rule's variance
    // recursion is iterated on a grid of 10⁶ steps.
    let op = robin_edge(1.0 / 16.0);
    let ep = eigenpairs(&op).unwrap();
    let sigma = 0.5;
    let t_end = 1.0;
    let n = 1_000_000;
    let delta = t_end / n as f64;
    let probe = op.mesh().nearest_dof(0, 0.3);
    let mut total = 0.0;
    for k in 0..ep.len() {
        let lam = ep.values[k];
        let a = sigma * ep.vectors[(probe, k)];
        let den = 1.0 - 0.5 * lam * delta;
        let r = (1.0 + 0.5 * lam * delta) / den;
        let q = a * a * delta / (den * den);
        let mut v = 0.0;
        for _ in 0..n {
            v = r * r * v + q;
        }
        total += v;
    }
    let oracle = spectral_oracle(&op, probe, t_end, sigma).unwrap();
    assert!((oracle.variance - total).abs() < 1e-6, "{} vs {total}", oracle.variance);
}

#[test]
fn ou_variance_matches_euler_recursion() {
    for (lam, a, t) in [(-0.5, 1.0, 2.0), (-30.0, 0.3, 0.5), (0.0, 2.0, 1.5)] {
        let n = 2_000_000;
        let d = t / n as f64;
        let mut v = 0.0;
        for _ in 0..n {
            v = (1.0 + lam * d) * (1.0 + lam * d) * v + a * a * d;
        }
        let exact = ou_mode_variance(lam, a, t);
        assert!((v - exact).abs() < 1e-5 * exact.max(1e-3), "λ={lam}: {v} vs {exact}");
    }
}
