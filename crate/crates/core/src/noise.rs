//! Driving noise: independent cylindrical Wiener processes per edge, projected
//! onto the finite-element basis with a lumped mass, and the pointwise
//! multiplication operator `Γ(t, u) y = h(t, x, u(x)) y(x)`.
//!
//! Random numbers come from counter-addressed ChaCha8 streams: the key is
//! `(seed, path)`, the stream id is the edge, and the word position is fixed by
//! the time-step index. A draw therefore never depends on scheduling or thread
//! count, and coarse increments can be rebuilt as sums of fine ones.

use std::ops::Range;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::assembly::{GridFunction, Mesh};
use crate::graph::{CoefficientProfile, Side};
use crate::{Error, Result};

pub const RNG_ALGORITHM: &str = "ChaCha8";

/// Words reserved per (stream, step); bounds the draws one edge may consume per step.
const WORDS_PER_STEP: u128 = 1 << 24;
/// Stream ids at and above this offset are reserved for coefficient resampling.
pub const AUX_STREAM_BASE: u64 = 1 << 32;

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Key of one sample path; every random draw on the path is addressed from it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StreamKey {
    pub seed: u64,
    pub path: u64,
    chacha_seed: [u8; 32],
}

impl StreamKey {
    pub fn new(seed: u64, path: u64) -> Self {
        let mut state = seed;
        let a = splitmix64(&mut state);
        let mut state = a ^ path.wrapping_mul(0xD1B5_4A32_D192_ED03);
        let mut chacha_seed = [0u8; 32];
        for chunk in chacha_seed.chunks_mut(8) {
            chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
        }
        StreamKey {
            seed,
            path,
            chacha_seed,
        }
    }

    /// Generator positioned at the start of `(stream, step)`.
    pub fn rng(&self, stream: u64, step: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.chacha_seed);
        rng.set_stream(stream);
        rng.set_word_pos(step as u128 * WORDS_PER_STEP);
        rng
    }
}

/// One noise increment projected onto the DOFs.
///
/// Vertex DOFs aggregate the shares of their incident edges; `vertex_parts[v]`
/// keeps the per-edge pieces (summing to `values[v]`) so that `Γ` can apply
/// each edge's own coefficient.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseIncrement {
    pub values: Vec<f64>,
    pub vertex_parts: Vec<Vec<(usize, f64)>>,
}

impl NoiseIncrement {
    pub fn zeros(mesh: &Mesh) -> Self {
        NoiseIncrement {
            values: vec![0.0; mesh.n_dofs()],
            vertex_parts: (0..mesh.n_vertices())
                .map(|v| mesh.incidence(v).iter().map(|&(e, _)| (e, 0.0)).collect())
                .collect(),
        }
    }

    fn add_vertex_part(&mut self, v: usize, edge: usize, amount: f64) {
        self.values[v] += amount;
        if let Some(p) = self.vertex_parts[v].iter_mut().find(|(e, _)| *e == edge) {
            p.1 += amount;
        }
    }
}

/// Lumped white-noise increment for one step: DOF `i` gets `N(0, dt / m_i)`.
pub fn sample_white_increment(mesh: &Mesh, dt: f64, key: &StreamKey, step: u64) -> Result<NoiseIncrement> {
    white_increment_sum(mesh, dt, key, step..step + 1)
}

/// Sum of the white increments of consecutive base steps, each of length `dt_base`.
pub fn white_increment_sum(
    mesh: &Mesh,
    dt_base: f64,
    key: &StreamKey,
    steps: Range<u64>,
) -> Result<NoiseIncrement> {
    if !(dt_base > 0.0) {
        return Err(Error::invalid("noise time step must be positive"));
    }
    let mut inc = NoiseIncrement::zeros(mesh);
    let lumped = mesh.lumped_mass();
    for (e, eg) in mesh.edges().iter().enumerate() {
        let h = eg.width();
        let interior_scale = (dt_base / h).sqrt();
        let end_weight = (dt_base * 0.5 * h).sqrt();
        for step in steps.clone() {
            let mut rng = key.rng(e as u64, step);
            for node in 0..=eg.n_cells {
                let z: f64 = rng.sample(StandardNormal);
                if node == 0 || node == eg.n_cells {
                    let v = eg.dof(node);
                    inc.add_vertex_part(v, e, end_weight * z / lumped[v]);
                } else {
                    inc.values[eg.dof(node)] += interior_scale * z;
                }
            }
        }
    }
    Ok(inc)
}

#[derive(Debug, Clone, PartialEq)]
pub struct KernelMode {
    /// Mode function at the edge nodes `0..=N_e`.
    pub values: Vec<f64>,
    pub amplitude: f64,
}

/// Finite-rank spatial covariance `R = diag(R_e)`: `R_e y = Σ a_k ⟨y, ·⟩ φ_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct ColouredKernel {
    mesh: Arc<Mesh>,
    modes: Vec<Vec<KernelMode>>,
}

impl ColouredKernel {
    pub fn empty(mesh: &Arc<Mesh>) -> Self {
        ColouredKernel {
            mesh: Arc::clone(mesh),
            modes: vec![Vec::new(); mesh.n_edges()],
        }
    }

    pub fn mesh(&self) -> &Arc<Mesh> {
        &self.mesh
    }

    pub fn modes(&self, edge: usize) -> &[KernelMode] {
        &self.modes[edge]
    }

    pub fn rank(&self) -> usize {
        self.modes.iter().map(Vec::len).sum()
    }

    pub fn push(&mut self, edge: usize, values: Vec<f64>, amplitude: f64) -> Result<()> {
        if edge >= self.modes.len() {
            return Err(Error::invalid(format!("kernel mode on unknown edge {edge}")));
        }
        let expected = self.mesh.edge(edge).n_cells + 1;
        if values.len() != expected {
            return Err(Error::invalid(format!(
                "kernel mode on edge {edge} has {} samples, expected {expected}",
                values.len()
            )));
        }
        if !amplitude.is_finite() || values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("kernel mode must be finite"));
        }
        self.modes[edge].push(KernelMode { values, amplitude });
        Ok(())
    }

    /// Samples `profile` on the edge grid as a new mode.
    pub fn push_profile(&mut self, edge: usize, profile: &CoefficientProfile, amplitude: f64) -> Result<()> {
        let eg = self.mesh.edge(edge);
        let values = (0..=eg.n_cells).map(|k| profile.eval(eg.x(k))).collect();
        self.push(edge, values, amplitude)
    }

    /// Uses a global DOF vector restricted to `edge` as a mode.
    pub fn push_restriction(&mut self, edge: usize, global: &[f64], amplitude: f64) -> Result<()> {
        let eg = self.mesh.edge(edge);
        let values = (0..=eg.n_cells).map(|k| global[eg.dof(k)]).collect();
        self.push(edge, values, amplitude)
    }
}

/// Coloured increment for one step: `Σ_k a_k φ_k N(0, dt)` per edge.
pub fn sample_coloured_increment(
    kernel: &ColouredKernel,
    mesh: &Mesh,
    dt: f64,
    key: &StreamKey,
    step: u64,
) -> Result<NoiseIncrement> {
    coloured_increment_sum(kernel, mesh, dt, key, step..step + 1)
}

pub fn coloured_increment_sum(
    kernel: &ColouredKernel,
    mesh: &Mesh,
    dt_base: f64,
    key: &StreamKey,
    steps: Range<u64>,
) -> Result<NoiseIncrement> {
    if !(dt_base > 0.0) {
        return Err(Error::invalid("noise time step must be positive"));
    }
    if !std::ptr::eq(&**kernel.mesh(), mesh) && **kernel.mesh() != *mesh {
        return Err(Error::MeshMismatch);
    }
    let mut inc = NoiseIncrement::zeros(mesh);
    let sq = dt_base.sqrt();
    for (e, eg) in mesh.edges().iter().enumerate() {
        let modes = kernel.modes(e);
        if modes.is_empty() {
            continue;
        }
        let mut field = vec![0.0; eg.n_cells + 1];
        for step in steps.clone() {
            let mut rng = key.rng(e as u64, step);
            for mode in modes {
                let z: f64 = rng.sample(StandardNormal);
                let a = mode.amplitude * sq * z;
                for (f, m) in field.iter_mut().zip(&mode.values) {
                    *f += a * m;
                }
            }
        }
        for node in 1..eg.n_cells {
            inc.values[eg.dof(node)] += field[node];
        }
        for (side, node) in [(Side::Left, 0), (Side::Right, eg.n_cells)] {
            let v = eg.dof(node);
            let share = mesh
                .vertex_shares(v)
                .find(|&(ee, s, _)| ee == e && s == side)
                .map_or(0.0, |(_, _, w)| w);
            inc.add_vertex_part(v, e, share * field[node]);
        }
    }
    Ok(inc)
}

/// Noise coefficient `h_e(t, x, η)`; all families satisfy `|h| ≤ σ (1 + |η|)^r`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoiseFamily {
    Zero,
    /// `h = σ`.
    Constant { sigma: f64 },
    /// `h = σ sign(η) min(|η|, (1 + |η|)^r)`.
    Linear { sigma: f64 },
    /// `h = σ η / (1 + |η|)^(1 − r)`.
    Saturating { sigma: f64 },
}

impl NoiseFamily {
    pub fn eval(&self, eta: f64, growth: f64) -> f64 {
        match *self {
            NoiseFamily::Zero => 0.0,
            NoiseFamily::Constant { sigma } => sigma,
            NoiseFamily::Linear { sigma } => {
                let cap = (1.0 + eta.abs()).powf(growth);
                sigma * eta.signum() * eta.abs().min(cap)
            }
            NoiseFamily::Saturating { sigma } => sigma * eta / (1.0 + eta.abs()).powf(1.0 - growth),
        }
    }

    pub fn sigma(&self) -> f64 {
        match *self {
            NoiseFamily::Zero => 0.0,
            NoiseFamily::Constant { sigma }
            | NoiseFamily::Linear { sigma }
            | NoiseFamily::Saturating { sigma } => sigma,
        }
    }

    pub fn growth_bound(&self, eta: f64, growth: f64) -> f64 {
        self.sigma().abs() * (1.0 + eta.abs()).powf(growth)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum NoiseKind {
    White,
    Coloured(ColouredKernel),
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSpec {
    pub families: Vec<NoiseFamily>,
    /// `k / K` from the reaction degrees.
    pub growth: f64,
    pub kind: NoiseKind,
}

impl NoiseSpec {
    pub fn none(n_edges: usize) -> Self {
        NoiseSpec {
            families: vec![NoiseFamily::Zero; n_edges],
            growth: 1.0,
            kind: NoiseKind::White,
        }
    }

    pub fn white(families: Vec<NoiseFamily>, growth: f64) -> Self {
        NoiseSpec {
            families,
            growth,
            kind: NoiseKind::White,
        }
    }

    pub fn uniform_white(n_edges: usize, family: NoiseFamily, growth: f64) -> Self {
        Self::white(vec![family; n_edges], growth)
    }

    pub fn is_silent(&self) -> bool {
        self.families.iter().all(|f| matches!(f, NoiseFamily::Zero) || f.sigma() == 0.0)
            || matches!(&self.kind, NoiseKind::Coloured(k) if k.rank() == 0)
    }

    pub fn validate(&self, n_edges: usize) -> Result<()> {
        if self.families.len() != n_edges {
            return Err(Error::invalid(format!(
                "noise needs one family per edge ({} given, {n_edges} edges)",
                self.families.len()
            )));
        }
        if !(0.0..=1.0).contains(&self.growth) {
            return Err(Error::invalid("noise growth exponent k/K must lie in [0, 1]"));
        }
        if self.families.iter().any(|f| !f.sigma().is_finite()) {
            return Err(Error::invalid("noise amplitude must be finite"));
        }
        Ok(())
    }

    /// Increment over base steps `steps`, each of length `dt_base`.
    pub fn increment(&self, mesh: &Mesh, dt_base: f64, key: &StreamKey, steps: Range<u64>) -> Result<NoiseIncrement> {
        match &self.kind {
            NoiseKind::White => white_increment_sum(mesh, dt_base, key, steps),
            NoiseKind::Coloured(k) => coloured_increment_sum(k, mesh, dt_base, key, steps),
        }
    }
}

/// `Γ(t, u) dW`: nodewise `h_e(t, x_i, u_i) · dW_i`, with each edge's coefficient at vertices.
pub fn apply_gamma(spec: &NoiseSpec, _t: f64, u: &GridFunction, dw: &NoiseIncrement) -> Result<GridFunction> {
    let mesh = u.mesh();
    if dw.values.len() != mesh.n_dofs() || spec.families.len() != mesh.n_edges() {
        return Err(Error::MeshMismatch);
    }
    let mut out = GridFunction::zeros(mesh);
    gamma_into(spec, mesh, u.values(), dw, out.values_mut());
    Ok(out)
}

pub(crate) fn gamma_into(spec: &NoiseSpec, mesh: &Mesh, u: &[f64], dw: &NoiseIncrement, out: &mut [f64]) {
    let r = spec.growth;
    for (v, parts) in dw.vertex_parts.iter().enumerate() {
        out[v] = parts
            .iter()
            .map(|&(e, part)| spec.families[e].eval(u[v], r) * part)
            .sum();
    }
    for (e, eg) in mesh.edges().iter().enumerate() {
        let fam = spec.families[e];
        for node in 1..eg.n_cells {
            let i = eg.dof(node);
            out[i] = fam.eval(u[i], r) * dw.values[i];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{CouplingMatrix, MetricGraph};

    fn star_mesh() -> Arc<Mesh> {
        let g = MetricGraph::star(&[1.0, 0.5, 0.75], CouplingMatrix::diagonal(&[-1.0; 4]));
        Mesh::build(&g, 0.25).unwrap()
    }

    #[test]
    fn increments_are_addressed_by_counter() {
        let mesh = star_mesh();
        let key = StreamKey::new(7, 3);
        let a = sample_white_increment(&mesh, 0.01, &key, 5).unwrap();
        let b = sample_white_increment(&mesh, 0.01, &key, 5).unwrap();
        let c = sample_white_increment(&mesh, 0.01, &key, 6).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.values, c.values);
        let other_path = sample_white_increment(&mesh, 0.01, &StreamKey::new(7, 4), 5).unwrap();
        assert_ne!(a.values, other_path.values);
    }

    #[test]
    fn sum_of_fine_steps_is_the_coarse_increment() {
        let mesh = star_mesh();
        let key = StreamKey::new(1, 0);
        let a = sample_white_increment(&mesh, 0.5, &key, 4).unwrap();
        let b = sample_white_increment(&mesh, 0.5, &key, 5).unwrap();
        let s = white_increment_sum(&mesh, 0.5, &key, 4..6).unwrap();
        for i in 0..mesh.n_dofs() {
            assert!((a.values[i] + b.values[i] - s.values[i]).abs() < 1e-15);
        }
    }

    #[test]
    fn halving_dt_halves_the_variance_exactly() {
        let mesh = star_mesh();
        let key = StreamKey::new(11, 2);
        let a = sample_white_increment(&mesh, 0.02, &key, 0).unwrap();
        let b = sample_white_increment(&mesh, 0.01, &key, 0).unwrap();
        for (x, y) in a.values.iter().zip(&b.values) {
            assert!((x * x - 2.0 * y * y).abs() <= 1e-12 * x * x);
        }
    }

    #[test]
    fn vertex_parts_sum_to_values() {
        let mesh = star_mesh();
        let inc = sample_white_increment(&mesh, 0.1, &StreamKey::new(3, 9), 2).unwrap();
        for (v, parts) in inc.vertex_parts.iter().enumerate() {
            let s: f64 = parts.iter().map(|p| p.1).sum();
            assert!((s - inc.values[v]).abs() < 1e-15);
            assert_eq!(parts.len(), mesh.incidence(v).len());
        }
    }

    #[test]
    fn gamma_identity_and_zero() {
        let mesh = star_mesh();
        let inc = sample_white_increment(&mesh, 0.1, &StreamKey::new(3, 9), 2).unwrap();
        let u = GridFunction::from_fn(&mesh, |e, x| e as f64 + x);
        let n = mesh.n_edges();
        let one = NoiseSpec::uniform_white(n, NoiseFamily::Constant { sigma: 1.0 }, 1.0);
        let g = apply_gamma(&one, 0.0, &u, &inc).unwrap();
        for (a, b) in g.values().iter().zip(&inc.values) {
            assert!((a - b).abs() < 1e-15);
        }
        let zero = NoiseSpec::none(n);
        assert!(apply_gamma(&zero, 0.0, &u, &inc).unwrap().values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn families_respect_the_growth_bound() {
        for r in [1.0 / 3.0, 0.6, 1.0] {
            for fam in [
                NoiseFamily::Constant { sigma: 0.7 },
                NoiseFamily::Linear { sigma: 0.7 },
                NoiseFamily::Saturating { sigma: 0.7 },
            ] {
                for k in -200..=200 {
                    let eta = k as f64 * 0.37 + (k as f64).powi(3) * 1e-3;
                    assert!(fam.eval(eta, r).abs() <= fam.growth_bound(eta, r) * (1.0 + 1e-14));
                }
            }
        }
        let lin = NoiseFamily::Linear { sigma: 2.0 };
        assert_eq!(lin.eval(0.5, 1.0), 1.0);
        assert_eq!(lin.eval(-3.0, 1.0), -6.0);
    }

    #[test]
    fn empty_kernel_gives_zero_increment() {
        let mesh = star_mesh();
        let k = ColouredKernel::empty(&mesh);
        let inc = sample_coloured_increment(&k, &mesh, 0.1, &StreamKey::new(0, 0), 0).unwrap();
        assert!(inc.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn constant_mode_is_spatially_constant_on_single_edge() {
        let g = MetricGraph::single_edge(1.0, CouplingMatrix::diagonal(&[-1.0, -1.0]));
        let mesh = Mesh::build(&g, 0.1).unwrap();
        let mut k = ColouredKernel::empty(&mesh);
        k.push_profile(0, &CoefficientProfile::constant(1.0), 0.5).unwrap();
        let inc = sample_coloured_increment(&k, &mesh, 0.01, &StreamKey::new(5, 1), 3).unwrap();
        let first = inc.values[0];
        assert!(inc.values.iter().all(|&v| (v - first).abs() < 1e-15));
    }
}
