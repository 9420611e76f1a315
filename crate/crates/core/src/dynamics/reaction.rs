use rand::Rng;

use crate::assembly::Mesh;
use crate::graph::CoefficientProfile;
use crate::noise::{StreamKey, AUX_STREAM_BASE};
use crate::{Error, Result};

/// Random multiplicative factor on an edge's leading coefficient, drawn from
/// `Uniform[lo, hi]` on the path's own stream.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Modulation {
    pub lo: f64,
    pub hi: f64,
    /// Redraw at the start of every step instead of once per path.
    pub per_step: bool,
}

/// `f_e(x, η) = −a_e(x) η^(2k_e+1) + Σ_{j=0}^{2k_e} a_{e,j}(x) η^j`.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeReaction {
    pub degree: u32,
    pub leading: CoefficientProfile,
    /// `a_{e,j}` for `j = 0..=2k_e`.
    pub lower: Vec<CoefficientProfile>,
    pub modulation: Option<Modulation>,
}

impl EdgeReaction {
    /// Builds `−a η^(2k+1) + Σ lower[j] η^j` with constant coefficients.
    pub fn constant(degree: u32, leading: f64, lower: &[f64]) -> Self {
        let mut lower: Vec<_> = lower.iter().map(|&a| CoefficientProfile::constant(a)).collect();
        lower.resize(2 * degree as usize + 1, CoefficientProfile::zero());
        EdgeReaction {
            degree,
            leading: CoefficientProfile::constant(leading),
            lower,
            modulation: None,
        }
    }

    /// `η(η − 1)(a − η) = −η³ + (1 + a)η² − aη`.
    pub fn fitzhugh_nagumo(a: f64) -> Self {
        Self::constant(1, 1.0, &[0.0, -a, 1.0 + a])
    }

    /// `−η³ + β²η`.
    pub fn allen_cahn(beta: f64) -> Self {
        Self::constant(1, 1.0, &[0.0, beta * beta, 0.0])
    }

    fn zero() -> Self {
        Self::constant(1, 0.0, &[])
    }

    pub fn eval(&self, x: f64, eta: f64, scale: f64) -> f64 {
        let lower = self.lower.iter().rev().fold(0.0, |acc, a| acc * eta + a.eval(x));
        lower - scale * self.leading.eval(x) * eta.powi(2 * self.degree as i32 + 1)
    }

    /// Ascending coefficients `[a_0, …, a_2k, −a]` at `x`, before modulation.
    pub fn coefficients_at(&self, x: f64) -> Vec<f64> {
        let mut c: Vec<f64> = self.lower.iter().map(|a| a.eval(x)).collect();
        c.push(-self.leading.eval(x));
        c
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReactionSpec {
    pub edges: Vec<EdgeReaction>,
    zero: bool,
}

/// Coefficient bounds `c ≤ a_e ≤ C`, `|a_{e,j}| ≤ C` sampled on a mesh.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoefficientBounds {
    pub lower: f64,
    pub upper: f64,
}

impl ReactionSpec {
    pub fn new(edges: Vec<EdgeReaction>) -> Self {
        ReactionSpec { edges, zero: false }
    }

    /// `f ≡ 0` on every edge.
    pub fn zero(n_edges: usize) -> Self {
        ReactionSpec {
            edges: vec![EdgeReaction::zero(); n_edges],
            zero: true,
        }
    }

    pub fn allen_cahn(betas: &[f64]) -> Self {
        Self::new(betas.iter().map(|&b| EdgeReaction::allen_cahn(b)).collect())
    }

    pub fn fitzhugh_nagumo(a: &[f64]) -> Self {
        Self::new(a.iter().map(|&a| EdgeReaction::fitzhugh_nagumo(a)).collect())
    }

    pub fn is_zero(&self) -> bool {
        self.zero
    }

    /// `(k, K) = (2 k_min + 1, 2 k_max + 1)`.
    pub fn exponents(&self) -> Result<(u32, u32)> {
        let kmin = self.edges.iter().map(|e| e.degree).min();
        let kmax = self.edges.iter().map(|e| e.degree).max();
        match (kmin, kmax) {
            (Some(lo), Some(hi)) => Ok((2 * lo + 1, 2 * hi + 1)),
            _ => Err(Error::invalid("reaction needs at least one edge")),
        }
    }

    /// `k / K`, the admissible growth exponent of the noise coefficient.
    pub fn growth_exponent(&self) -> f64 {
        match self.exponents() {
            Ok((k, big_k)) if !self.zero => k as f64 / big_k as f64,
            _ => 1.0,
        }
    }

    fn edge_range(e: &EdgeReaction, length: f64, lead: &mut (f64, f64), others: &mut f64) {
        let (lo, hi) = e.leading.sampled_range(length);
        let (mlo, mhi) = e.modulation.map_or((1.0, 1.0), |m| (m.lo, m.hi));
        lead.0 = lead.0.min(lo * mlo);
        lead.1 = lead.1.max(hi * mhi);
        for a in &e.lower {
            let (lo, hi) = a.sampled_range(length);
            *others = others.max(lo.abs()).max(hi.abs());
        }
    }

    /// Bounds over the edges, sampled with the given lengths.
    pub fn bounds(&self, lengths: &[f64]) -> CoefficientBounds {
        let mut lead = (f64::INFINITY, f64::NEG_INFINITY);
        let mut others: f64 = 0.0;
        for (e, &l) in self.edges.iter().zip(lengths) {
            Self::edge_range(e, l, &mut lead, &mut others);
        }
        CoefficientBounds {
            lower: lead.0,
            upper: lead.1.max(others),
        }
    }

    /// Radius beyond which `sign(η) f_e(x, η) < 0` on every edge:
    /// `max(1, (2 k_max + 1) C / c)`.
    pub fn dissipativity_radius(&self, lengths: &[f64]) -> f64 {
        let b = self.bounds(lengths);
        let kmax = self.edges.iter().map(|e| e.degree).max().unwrap_or(1);
        ((2 * kmax + 1) as f64 * b.upper / b.lower).max(1.0)
    }

    pub fn validate(&self, lengths: &[f64]) -> Result<()> {
        if self.edges.len() != lengths.len() {
            return Err(Error::invalid(format!(
                "reaction has {} edges, graph has {}",
                self.edges.len(),
                lengths.len()
            )));
        }
        if self.zero {
            return Ok(());
        }
        for (i, (e, &l)) in self.edges.iter().zip(lengths).enumerate() {
            if e.degree == 0 {
                return Err(Error::invalid(format!("edge {i}: degree k_e must be a positive integer")));
            }
            if e.lower.len() != 2 * e.degree as usize + 1 {
                return Err(Error::invalid(format!(
                    "edge {i}: expected {} lower coefficients, got {}",
                    2 * e.degree + 1,
                    e.lower.len()
                )));
            }
            for p in std::iter::once(&e.leading).chain(&e.lower) {
                if let Some(issue) = p.structural_issue(l) {
                    return Err(Error::invalid(format!("edge {i}: {issue}")));
                }
            }
            let (lo, _) = e.leading.sampled_range(l);
            if !(lo > 0.0) {
                return Err(Error::invalid(format!("edge {i}: leading coefficient must be positive")));
            }
            if let Some(m) = e.modulation {
                if !(m.lo > 0.0 && m.hi >= m.lo && m.hi.is_finite()) {
                    return Err(Error::invalid(format!("edge {i}: modulation needs 0 < lo <= hi")));
                }
            }
        }
        Ok(())
    }
}

/// `f(η)` for a single edge at a given point, without modulation.
pub fn reaction_eval(spec: &ReactionSpec, edge: usize, x: f64, eta: f64) -> f64 {
    spec.edges[edge].eval(x, eta, 1.0)
}

#[derive(Debug, Clone)]
struct NodeTerm {
    edge: usize,
    weight: f64,
    coeffs: Vec<f64>,
}

/// The reaction sampled at every DOF; vertex DOFs average their incident edges
/// with lumped-mass weights.
#[derive(Debug, Clone)]
pub struct ReactionField {
    nodes: Vec<Vec<NodeTerm>>,
    modulation: Vec<Option<Modulation>>,
    zero: bool,
}

fn horner(coeffs: &[f64], eta: f64, lead_scale: f64) -> f64 {
    let n = coeffs.len();
    let mut acc = coeffs[n - 1] * lead_scale;
    for &c in coeffs[..n - 1].iter().rev() {
        acc = acc * eta + c;
    }
    acc
}

impl ReactionField {
    pub fn new(spec: &ReactionSpec, mesh: &Mesh) -> Result<Self> {
        if spec.edges.len() != mesh.n_edges() {
            return Err(Error::MeshMismatch);
        }
        let nodes = mesh
            .dof_contributions()
            .into_iter()
            .map(|terms| {
                terms
                    .into_iter()
                    .map(|(edge, x, weight)| NodeTerm {
                        edge,
                        weight,
                        coeffs: spec.edges[edge].coefficients_at(x),
                    })
                    .collect()
            })
            .collect();
        Ok(ReactionField {
            nodes,
            modulation: spec.edges.iter().map(|e| e.modulation).collect(),
            zero: spec.is_zero(),
        })
    }

    pub fn is_zero(&self) -> bool {
        self.zero
    }

    pub fn has_modulation(&self) -> bool {
        self.modulation.iter().any(Option::is_some)
    }

    pub fn refreshes_per_step(&self) -> bool {
        self.modulation.iter().flatten().any(|m| m.per_step)
    }

    /// Draws the per-edge leading-coefficient factors for `step` (step 0 at path start).
    pub fn draw_scales(&self, key: &StreamKey, step: u64, scales: &mut [f64]) {
        for (e, m) in self.modulation.iter().enumerate() {
            scales[e] = match m {
                Some(m) if step == 0 || m.per_step => {
                    let mut rng = key.rng(AUX_STREAM_BASE + e as u64, step);
                    let u: f64 = rng.random();
                    m.lo + (m.hi - m.lo) * u
                }
                Some(_) => scales[e],
                None => 1.0,
            };
        }
    }

    pub fn eval_dof(&self, dof: usize, eta: f64, scales: &[f64]) -> f64 {
        self.nodes[dof]
            .iter()
            .map(|t| t.weight * horner(&t.coeffs, eta, scales[t.edge]))
            .sum()
    }

    /// Nodewise tamed increment `u + dt f(u) / (1 + θ dt |f(u)|)`.
    pub fn tamed_substep(&self, u: &[f64], dt: f64, taming: f64, scales: &[f64], out: &mut [f64]) {
        if self.zero {
            out.copy_from_slice(u);
            return;
        }
        for (i, (o, &ui)) in out.iter_mut().zip(u).enumerate() {
            let f = self.eval_dof(i, ui, scales);
            *o = ui + dt * f / (1.0 + taming * dt * f.abs());
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn allen_cahn_roots() {
        let beta = 1.7;
        let spec = ReactionSpec::allen_cahn(&[beta]);
        assert!(reaction_eval(&spec, 0, 0.3, beta).abs() < 1e-12);
        assert!(reaction_eval(&spec, 0, 0.3, -beta).abs() < 1e-12);
        assert_eq!(reaction_eval(&spec, 0, 0.3, 0.0), 0.0);
    }

    #[test]
    fn fitzhugh_nagumo_roots_and_expansion() {
        let a = 0.3;
        let spec = ReactionSpec::fitzhugh_nagumo(&[a]);
        for eta in [0.0, 1.0, a] {
            assert!(reaction_eval(&spec, 0, 0.0, eta).abs() < 1e-14);
        }
        let e = &spec.edges[0];
        assert_eq!(e.degree, 1);
        assert_eq!(e.coefficients_at(0.0), vec![0.0, -a, 1.0 + a, -1.0]);
        for k in -20..=20 {
            let eta = k as f64 * 0.173;
            let direct = eta * (eta - 1.0) * (a - eta);
            assert!((reaction_eval(&spec, 0, 0.0, eta) - direct).abs() < 1e-12 * (1.0 + direct.abs()));
        }
    }

    #[test]
    fn exponents_from_degrees() {
        let mk = |ks: &[u32]| ReactionSpec::new(ks.iter().map(|&k| EdgeReaction::constant(k, 1.0, &[])).collect());
        assert_eq!(mk(&[1, 2]).exponents().unwrap(), (3, 5));
        assert_eq!(mk(&[1, 1]).exponents().unwrap(), (3, 3));
        assert_eq!(mk(&[1, 1]).growth_exponent(), 1.0);
        assert_eq!(mk(&[1, 1, 3]).exponents().unwrap(), (3, 7));
        assert!(ReactionSpec::new(vec![]).exponents().is_err());
    }

    #[test]
    fn dissipative_beyond_the_radius() {
        let spec = ReactionSpec::new(vec![
            EdgeReaction::constant(1, 0.5, &[2.0, -1.5, 1.0]),
            EdgeReaction::constant(2, 1.0, &[-1.0, 2.0, 0.5, -2.0, 1.0]),
        ]);
        let lengths = [1.0, 1.0];
        spec.validate(&lengths).unwrap();
        let r = spec.dissipativity_radius(&lengths);
        for e in 0..2 {
            for k in 1..=400 {
                let eta = r * (1.0 + k as f64 * 0.05);
                assert!(reaction_eval(&spec, e, 0.0, eta) < 0.0);
                assert!(reaction_eval(&spec, e, 0.0, -eta) > 0.0);
            }
        }
    }

    #[test]
    fn validation_rejects_nonpositive_leading_term() {
        let spec = ReactionSpec::new(vec![EdgeReaction::constant(1, -1.0, &[])]);
        assert!(spec.validate(&[1.0]).is_err());
        let bad_len = ReactionSpec::new(vec![EdgeReaction {
            lower: vec![],
            ..EdgeReaction::allen_cahn(1.0)
        }]);
        assert!(bad_len.validate(&[1.0]).is_err());
    }

    #[test]
    fn taming_matches_explicit_euler_to_second_order() {
        let g = crate::graph::MetricGraph::single_edge(1.0, crate::graph::CouplingMatrix::diagonal(&[-1.0, -1.0]));
        let mesh = Mesh::build(&g, 0.25).unwrap();
        let field = ReactionField::new(&ReactionSpec::allen_cahn(&[1.0]), &mesh).unwrap();
        let u: Vec<f64> = (0..mesh.n_dofs()).map(|i| 0.3 * i as f64 - 0.5).collect();
        let scales = [1.0];
        let mut prev = f64::NAN;
        for k in 0..5 {
            let dt = 0.1 / 2f64.powi(k);
            let mut tamed = vec![0.0; u.len()];
            field.tamed_substep(&u, dt, 1.0, &scales, &mut tamed);
            let err = u
                .iter()
                .zip(&tamed)
                .enumerate()
                .map(|(i, (&ui, &ti))| (ui + dt * field.eval_dof(i, ui, &scales) - ti).abs())
                .fold(0.0, f64::max);
            if k > 0 {
                assert!((prev / err - 4.0).abs() < 0.3, "ratio {}", prev / err);
            }
            prev = err;
        }
    }
}
