use std::sync::Arc;

use graphsrd::assembly::{assemble, Mesh};
use graphsrd::graph::{CoefficientProfile, CouplingMatrix, Edge, MetricGraph};
use graphsrd::noise::{sample_white_increment, white_increment_sum, StreamKey};
use proptest::prelude::*;

/// Connected simple graph on `n` vertices: a random spanning tree plus extra edges,
/// with a symmetric strictly diagonally dominant coupling matrix.
fn arb_graph() -> impl Strategy<Value = MetricGraph> {
    (2usize..6)
        .prop_flat_map(|n| {
            let parents: Vec<_> = (1..n).map(|v| 0..v).collect();
            let extra = prop::collection::vec((0..n, 0..n), 0..4);
            let lengths = prop::collection::vec(0.3f64..2.0, n - 1 + 4);
            let off = prop::collection::vec(0.0f64..1.0, n * n);
            let slack = prop::collection::vec(0.05f64..1.0, n);
            let diffusion = prop::collection::vec((0.5f64..2.0, -0.3f64..0.3), n - 1 + 4);
            (Just(n), parents, extra, lengths, off, slack, diffusion)
        })
        .prop_map(|(n, parents, extra, lengths, off, slack, diffusion)| {
            let mut pairs: Vec<(usize, usize)> = Vec::new();
            let tree = parents.into_iter().enumerate().map(|(i, p)| (p, i + 1));
            for (a, b) in tree.chain(extra) {
                let key = (a.min(b), a.max(b));
                if a != b && !pairs.iter().any(|&(x, y)| (x.min(y), x.max(y)) == key) {
                    pairs.push((a, b));
                }
            }
            let edges = pairs
                .iter()
                .enumerate()
                .map(|(k, &(a, b))| {
                    let (c0, c1) = diffusion[k];
                    Edge::new(format!("e{k}"), a, b, lengths[k])
                        .with_diffusion(CoefficientProfile::Polynomial(vec![c0, c1 / lengths[k]]))
                })
                .collect();
            let mut rows = vec![vec![0.0; n]; n];
            for i in 0..n {
                for k in (i + 1)..n {
                    rows[i][k] = off[i * n + k];
                    rows[k][i] = off[i * n + k];
                }
            }
            for i in 0..n {
                let s: f64 = rows[i].iter().sum();
                rows[i][i] = -(s + slack[i]);
            }
            let vertices = (0..n).map(|v| format!("v{v}")).collect();
            MetricGraph::new(vertices, edges, CouplingMatrix::from_rows(&rows).unwrap())
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn vertex_conditions_match_twice_the_edge_count(g in arb_graph()) {
        let c = g.vertex_condition_count();
        prop_assert_eq!(c.total, 2 * g.n_edges());
        prop_assert_eq!(c.kirchhoff, g.n_vertices());
        prop_assert_eq!(c.continuity + c.kirchhoff, c.total);
    }

    #[test]
    fn generated_graphs_are_valid_and_validation_is_idempotent(g in arb_graph()) {
        let first = g.validate();
        prop_assert!(first.is_valid(), "{:?}", first);
        prop_assert_eq!(first, g.validate());
    }

    #[test]
    fn breaking_dominance_is_always_caught(g in arb_graph(), v in 0usize..6) {
        let v = v % g.n_vertices();
        let mut m = g.coupling.clone();
        let off: f64 = (0..m.dim()).filter(|&k| k != v).map(|k| m.get(v, k)).sum();
        m.set(v, v, -off);
        let bad = g.with_coupling(m);
        let a = bad.validate();
        prop_assert!(!a.is_valid());
        prop_assert_eq!(a, bad.validate());
    }

    #[test]
    fn assembled_matrices_integrate_constants_exactly(g in arb_graph(), h in 0.05f64..0.3) {
        let mesh = Mesh::build(&g, h).unwrap();
        let op = assemble(&g, &mesh).unwrap();
        let ones = vec![1.0; op.n_dofs()];
        let total: f64 = g.edges.iter().map(|e| e.length).sum();
        prop_assert!(op.mass.max_asymmetry() < 1e-14);
        prop_assert!(op.stiffness.max_asymmetry() < 1e-12);
        prop_assert!((op.mass.bilinear(&ones, &ones) - total).abs() < 1e-12 * total);
        // ∫ c |1′|² = 0 and no potential, so only the coupling survives.
        let coupling: f64 = g.coupling.rows().iter().flatten().sum();
        prop_assert!((op.stiffness.bilinear(&ones, &ones) + coupling).abs() < 1e-11);
        let lumped: f64 = mesh.lumped_mass().iter().sum();
        prop_assert!((lumped - total).abs() < 1e-12 * total);
    }

    #[test]
    fn stiffness_is_positive_on_random_vectors(g in arb_graph(), seed in any::<u64>()) {
        let mesh = Mesh::build(&g, 0.1).unwrap();
        let op = assemble(&g, &mesh).unwrap();
        let mut s = seed;
        let u: Vec<f64> = (0..op.n_dofs())
            .map(|_| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                (s >> 11) as f64 / (1u64 << 53) as f64 - 0.5
            })
            .collect();
        prop_assert!(op.stiffness.bilinear(&u, &u) > 0.0);
    }

    #[test]
    fn coarse_noise_is_the_sum_of_fine_noise(g in arb_graph(), seed in any::<u64>(), path in 0u64..1000, k in 1u64..6) {
        let mesh = Mesh::build(&g, 0.2).unwrap();
        let key = StreamKey::new(seed, path);
        let dt = 1e-3;
        let coarse = white_increment_sum(&mesh, dt, &key, 3..3 + k).unwrap();
        let mut fine = vec![0.0; mesh.n_dofs()];
        for step in 3..3 + k {
            let inc = sample_white_increment(&mesh, dt, &key, step).unwrap();
            for (f, x) in fine.iter_mut().zip(&inc.values) {
                *f += x;
            }
        }
        for (a, b) in coarse.values.iter().zip(&fine) {
            prop_assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()));
        }
        for parts in &coarse.vertex_parts {
            prop_assert!(parts.iter().all(|(_, x)| x.is_finite()));
        }
    }

    #[test]
    fn noise_is_reproducible_per_key(seed in any::<u64>(), path in any::<u64>(), step in 0u64..1_000_000) {
        let g = MetricGraph::star(&[1.0, 0.5], CouplingMatrix::diagonal(&[-1.0, -1.0, -1.0]));
        let mesh = Mesh::build(&g, 0.25).unwrap();
        let key = StreamKey::new(seed, path);
        let a = sample_white_increment(&mesh, 0.01, &key, step).unwrap();
        let b = sample_white_increment(&mesh, 0.01, &StreamKey::new(seed, path), step).unwrap();
        prop_assert_eq!(&a, &b);
        let c = sample_white_increment(&mesh, 0.01, &StreamKey::new(seed, path ^ 1), step).unwrap();
        prop_assert_ne!(a, c);
    }
}

#[test]
fn white_noise_has_lumped_variance() {
    let g = MetricGraph::star(&[1.0, 0.7, 1.3], CouplingMatrix::diagonal(&[-1.0, -0.5, -0.5, -0.5]));
    let mesh: Arc<Mesh> = Mesh::build(&g, 0.1).unwrap();
    let dt = 0.01;
    let key = StreamKey::new(2024, 0);
    let n = 20_000;
    let dofs = mesh.n_dofs();
    let mut sum = vec![0.0; dofs];
    let mut sq = vec![0.0; dofs];
    for step in 0..n {
        let inc = sample_white_increment(&mesh, dt, &key, step).unwrap();
        for i in 0..dofs {
            sum[i] += inc.values[i];
            sq[i] += inc.values[i] * inc.values[i];
        }
    }
    let lumped = mesh.lumped_mass();
    let mut worst = 0.0f64;
    for i in 0..dofs {
        let expected = dt / lumped[i];
        let mean = sum[i] / n as f64;
        let var = sq[i] / n as f64 - mean * mean;
        // sample variance of a Gaussian has relative SE sqrt(2/n) ≈ 1%
        let z = (var / expected - 1.0) / (2.0 / n as f64).sqrt();
        worst = worst.max(z.abs());
        assert!(mean.abs() < 5.0 * (expected / n as f64).sqrt(), "dof {i}: mean {mean}");
    }
    // max over ~40 near-independent z-scores
    assert!(worst < 4.5, "worst variance z-score {worst}");
}
