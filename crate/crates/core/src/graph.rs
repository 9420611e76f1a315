//! Finite metric graphs, their edge coefficients and the vertex coupling matrix.

use std::collections::HashSet;
use std::fmt;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Default strictness margin for the row-sum condition on the coupling matrix.
pub const DEFAULT_ROW_SUM_TOLERANCE: f64 = 1e-12;

/// Number of uniform sample points used to check polynomial profiles.
const POLY_CHECK_SAMPLES: usize = 257;

/// A scalar coefficient on an edge, evaluated in the local coordinate `x ∈ [0, ℓ]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CoefficientProfile {
    Constant(f64),
    /// Coefficients in ascending powers of `x`.
    Polynomial(Vec<f64>),
    /// `(x, value)` samples with linear interpolation between them.
    Table(Vec<(f64, f64)>),
}

impl CoefficientProfile {
    pub fn constant(value: f64) -> Self {
        CoefficientProfile::Constant(value)
    }

    pub fn zero() -> Self {
        CoefficientProfile::Constant(0.0)
    }

    pub fn eval(&self, x: f64) -> f64 {
        match self {
            CoefficientProfile::Constant(c) => *c,
            CoefficientProfile::Polynomial(coeffs) => {
                coeffs.iter().rev().fold(0.0, |acc, &a| acc * x + a)
            }
            CoefficientProfile::Table(samples) => interpolate(samples, x),
        }
    }

    pub fn is_constant(&self) -> bool {
        match self {
            CoefficientProfile::Constant(_) => true,
            CoefficientProfile::Polynomial(c) => c.iter().skip(1).all(|&a| a == 0.0),
            CoefficientProfile::Table(s) => s.windows(2).all(|w| w[0].1 == w[1].1),
        }
    }

    /// True when the profile vanishes identically on `[0, length]`.
    pub fn is_zero(&self, length: f64) -> bool {
        self.is_constant() && self.eval(0.0) == 0.0 && self.eval(length) == 0.0
    }

    /// Points at which the profile's extrema are checked.
    fn check_points(&self, length: f64) -> Vec<f64> {
        match self {
            CoefficientProfile::Constant(_) => vec![0.0],
            CoefficientProfile::Polynomial(_) => (0..POLY_CHECK_SAMPLES)
                .map(|i| length * i as f64 / (POLY_CHECK_SAMPLES - 1) as f64)
                .collect(),
            CoefficientProfile::Table(s) => {
                let mut pts: Vec<f64> = s
                    .iter()
                    .map(|&(x, _)| x)
                    .filter(|&x| (0.0..=length).contains(&x))
                    .collect();
                pts.push(0.0);
                pts.push(length);
                pts
            }
        }
    }

    /// Minimum and maximum over the check points on `[0, length]`.
    pub fn sampled_range(&self, length: f64) -> (f64, f64) {
        self.check_points(length)
            .into_iter()
            .map(|x| self.eval(x))
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
                (lo.min(v), hi.max(v))
            })
    }

    /// Structural problems with the profile itself, independent of sign conditions.
    pub fn structural_issue(&self, length: f64) -> Option<String> {
        match self {
            CoefficientProfile::Constant(c) if !c.is_finite() => {
                Some("constant value is not finite".into())
            }
            CoefficientProfile::Polynomial(c) if c.is_empty() => {
                Some("polynomial has no coefficients".into())
            }
            CoefficientProfile::Polynomial(c) if c.iter().any(|a| !a.is_finite()) => {
                Some("polynomial coefficient is not finite".into())
            }
            CoefficientProfile::Table(s) => {
                if s.len() < 2 {
                    return Some("table needs at least 2 samples".into());
                }
                if s.iter().any(|(x, v)| !x.is_finite() || !v.is_finite()) {
                    return Some("table entry is not finite".into());
                }
                if s.windows(2).any(|w| w[1].0 <= w[0].0) {
                    return Some("table abscissae must be strictly increasing".into());
                }
                let tol = 1e-12 * length.max(1.0);
                if s[0].0 > tol || s[s.len() - 1].0 < length - tol {
                    return Some(format!("table does not cover [0, {length}]"));
                }
                None
            }
            _ => None,
        }
    }
}

fn interpolate(samples: &[(f64, f64)], x: f64) -> f64 {
    let first = samples[0];
    let last = samples[samples.len() - 1];
    if x <= first.0 {
        return first.1;
    }
    if x >= last.0 {
        return last.1;
    }
    let k = samples.partition_point(|&(xs, _)| xs <= x);
    let (x0, y0) = samples[k - 1];
    let (x1, y1) = samples[k];
    y0 + (y1 - y0) * (x - x0) / (x1 - x0)
}

/// Which end of an edge a vertex sits on: `Left` is `x = 0`, `Right` is `x = ℓ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Side {
    Left,
    Right,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Edge {
    pub id: String,
    /// `(first, second)` vertex indices; the local coordinate is 0 at `first`.
    pub endpoints: (usize, usize),
    pub length: f64,
    pub diffusion: CoefficientProfile,
    pub drift: CoefficientProfile,
    pub potential: CoefficientProfile,
}

impl Edge {
    /// Edge with unit diffusion and no drift or potential.
    pub fn new(id: impl Into<String>, first: usize, second: usize, length: f64) -> Self {
        Edge {
            id: id.into(),
            endpoints: (first, second),
            length,
            diffusion: CoefficientProfile::constant(1.0),
            drift: CoefficientProfile::zero(),
            potential: CoefficientProfile::zero(),
        }
    }

    pub fn with_diffusion(mut self, profile: CoefficientProfile) -> Self {
        self.diffusion = profile;
        self
    }

    pub fn with_drift(mut self, profile: CoefficientProfile) -> Self {
        self.drift = profile;
        self
    }

    pub fn with_potential(mut self, profile: CoefficientProfile) -> Self {
        self.potential = profile;
        self
    }

    pub fn vertex_at(&self, side: Side) -> usize {
        match side {
            Side::Left => self.endpoints.0,
            Side::Right => self.endpoints.1,
        }
    }

    pub fn coordinate_at(&self, side: Side) -> f64 {
        match side {
            Side::Left => 0.0,
            Side::Right => self.length,
        }
    }
}

/// Dense symmetric `n × n` vertex coupling matrix `M`, stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CouplingMatrix {
    n: usize,
    entries: Vec<f64>,
}

impl CouplingMatrix {
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::invalid("coupling matrix must be square"));
        }
        Ok(CouplingMatrix {
            n,
            entries: rows.iter().flatten().copied().collect(),
        })
    }

    pub fn diagonal(diag: &[f64]) -> Self {
        let n = diag.len();
        let mut entries = vec![0.0; n * n];
        for (i, &d) in diag.iter().enumerate() {
            entries[i * n + i] = d;
        }
        CouplingMatrix { n, entries }
    }

    pub fn zeros(n: usize) -> Self {
        CouplingMatrix {
            n,
            entries: vec![0.0; n * n],
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, k: usize) -> f64 {
        self.entries[i * self.n + k]
    }

    pub fn set(&mut self, i: usize, k: usize, value: f64) {
        self.entries[i * self.n + k] = value;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.entries[i * self.n..(i + 1) * self.n]
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.n).map(|i| self.row(i).to_vec()).collect()
    }

    pub fn row_sum(&self, i: usize) -> f64 {
        self.row(i).iter().sum()
    }

    pub fn scaled(&self, factor: f64) -> Self {
        CouplingMatrix {
            n: self.n,
            entries: self.entries.iter().map(|b| b * factor).collect(),
        }
    }

    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| self.row(i).iter().zip(v).map(|(b, x)| b * x).sum())
            .collect()
    }

    pub fn to_dmatrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.n, self.n, &self.entries)
    }

    /// Smallest eigenvalue of `-M` (symmetrized). Positive iff `-M` is positive definite.
    pub fn negated_min_eigenvalue(&self) -> f64 {
        if self.n == 0 {
            return f64::INFINITY;
        }
        let m = self.to_dmatrix();
        let neg_sym = -(&m + m.transpose()) * 0.5;
        SymmetricEigen::new(neg_sym)
            .eigenvalues
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min)
    }

    /// Cholesky test of `-M ≻ 0`.
    pub fn negated_is_positive_definite(&self) -> bool {
        (-self.to_dmatrix()).cholesky().is_some()
    }

    fn violations(&self, tol: f64, out: &mut Vec<Violation>) {
        for i in 0..self.n {
            for k in (i + 1)..self.n {
                if self.get(i, k) != self.get(k, i) {
                    out.push(Violation::new(
                        ViolationCode::CouplingAsymmetric,
                        format!("M[{i}][{k}] != M[{k}][{i}]"),
                    ));
                }
            }
        }
        for i in 0..self.n {
            for k in 0..self.n {
                if i != k && self.get(i, k) < 0.0 {
                    out.push(Violation::new(
                        ViolationCode::CouplingNegativeOffDiagonal,
                        format!("M[{i}][{k}] = {} is negative", self.get(i, k)),
                    ));
                }
            }
        }
        for i in 0..self.n {
            let s = self.row_sum(i);
            if !(s <= -tol) {
                out.push(Violation::new(
                    ViolationCode::CouplingRowSum,
                    format!("row sum not strictly negative at row {i} (sum = {s})"),
                ));
            }
        }
        if self.entries.iter().any(|b| !b.is_finite()) {
            out.push(Violation::new(
                ViolationCode::NonfiniteValue,
                "coupling matrix has non-finite entries",
            ));
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ViolationCode {
    EmptyGraph,
    DuplicateVertex,
    DuplicateEdgeId,
    UnknownEndpoint,
    SelfLoop,
    MultipleEdge,
    IsolatedVertex,
    NonpositiveLength,
    InvalidProfile,
    NonpositiveDiffusion,
    NegativePotential,
    NonfiniteValue,
    CouplingShape,
    CouplingAsymmetric,
    CouplingNegativeOffDiagonal,
    CouplingRowSum,
}

impl ViolationCode {
    pub fn as_str(self) -> &'static str {
        match self {
            ViolationCode::EmptyGraph => "empty-graph",
            ViolationCode::DuplicateVertex => "duplicate-vertex",
            ViolationCode::DuplicateEdgeId => "duplicate-edge-id",
            ViolationCode::UnknownEndpoint => "unknown-endpoint",
            ViolationCode::SelfLoop => "self-loop",
            ViolationCode::MultipleEdge => "multiple-edge",
            ViolationCode::IsolatedVertex => "isolated-vertex",
            ViolationCode::NonpositiveLength => "nonpositive-edge-length",
            ViolationCode::InvalidProfile => "invalid-profile",
            ViolationCode::NonpositiveDiffusion => "nonpositive-diffusion",
            ViolationCode::NegativePotential => "negative-potential",
            ViolationCode::NonfiniteValue => "nonfinite-value",
            ViolationCode::CouplingShape => "coupling-shape",
            ViolationCode::CouplingAsymmetric => "coupling-asymmetric",
            ViolationCode::CouplingNegativeOffDiagonal => "coupling-negative-off-diagonal",
            ViolationCode::CouplingRowSum => "row-sum-not-strictly-negative",
        }
    }
}

impl fmt::Display for ViolationCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub code: ViolationCode,
    pub message: String,
}

impl Violation {
    fn new(code: ViolationCode, message: impl Into<String>) -> Self {
        Violation {
            code,
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn has(&self, code: ViolationCode) -> bool {
        self.violations.iter().any(|v| v.code == code)
    }

    pub fn codes(&self) -> Vec<ViolationCode> {
        self.violations.iter().map(|v| v.code).collect()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.violations.is_empty() {
            return f.write_str("valid");
        }
        for (i, v) in self.violations.iter().enumerate() {
            if i > 0 {
                f.write_str("; ")?;
            }
            write!(f, "[{}] {}", v.code, v.message)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValidationOptions {
    pub row_sum_tolerance: f64,
}

impl Default for ValidationOptions {
    fn default() -> Self {
        ValidationOptions {
            row_sum_tolerance: DEFAULT_ROW_SUM_TOLERANCE,
        }
    }
}

/// Counts of vertex conditions: `Σ_v (d_v − 1)` continuity, `n` Kirchhoff, `2m` total.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VertexConditionCount {
    pub continuity: usize,
    pub kirchhoff: usize,
    pub total: usize,
}

/// An edge end incident to a vertex.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Incidence {
    pub edge: usize,
    pub side: Side,
}

/// A finite metric graph with coefficient data on the edges and coupling matrix `M`.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricGraph {
    pub vertices: Vec<String>,
    pub edges: Vec<Edge>,
    pub coupling: CouplingMatrix,
}

impl MetricGraph {
    /// Builds a graph without checking assumptions. See [`MetricGraph::validated`].
    pub fn new(vertices: Vec<String>, edges: Vec<Edge>, coupling: CouplingMatrix) -> Self {
        MetricGraph {
            vertices,
            edges,
            coupling,
        }
    }

    /// Builds a graph and rejects it if any standing assumption fails.
    pub fn validated(vertices: Vec<String>, edges: Vec<Edge>, coupling: CouplingMatrix) -> Result<Self> {
        let g = Self::new(vertices, edges, coupling);
        let report = g.validate();
        if report.is_valid() {
            Ok(g)
        } else {
            Err(Error::InvalidGraph(report))
        }
    }

    /// A single edge of the given length between vertices `v0` and `v1`.
    pub fn single_edge(length: f64, coupling: CouplingMatrix) -> Self {
        Self::new(
            vec!["v0".into(), "v1".into()],
            vec![Edge::new("e0", 0, 1, length)],
            coupling,
        )
    }

    /// Path `v0 - v1 - … - v_m` with the given edge lengths.
    pub fn path(lengths: &[f64], coupling: CouplingMatrix) -> Self {
        let vertices = (0..=lengths.len()).map(|i| format!("v{i}")).collect();
        let edges = lengths
            .iter()
            .enumerate()
            .map(|(i, &l)| Edge::new(format!("e{i}"), i, i + 1, l))
            .collect();
        Self::new(vertices, edges, coupling)
    }

    /// Star with centre `v0` and one leaf per edge; edge `i` runs from the centre to leaf `i + 1`.
    pub fn star(lengths: &[f64], coupling: CouplingMatrix) -> Self {
        let vertices = (0..=lengths.len()).map(|i| format!("v{i}")).collect();
        let edges = lengths
            .iter()
            .enumerate()
            .map(|(i, &l)| Edge::new(format!("e{i}"), 0, i + 1, l))
            .collect();
        Self::new(vertices, edges, coupling)
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn vertex_index(&self, name: &str) -> Option<usize> {
        self.vertices.iter().position(|v| v == name)
    }

    pub fn edge_index(&self, id: &str) -> Option<usize> {
        self.edges.iter().position(|e| e.id == id)
    }

    pub fn degree(&self, v: usize) -> usize {
        self.edges
            .iter()
            .map(|e| usize::from(e.endpoints.0 == v) + usize::from(e.endpoints.1 == v))
            .sum()
    }

    pub fn validate(&self) -> ValidationReport {
        self.validate_with(&ValidationOptions::default())
    }

    /// Lists every violated standing assumption. Never fails.
    pub fn validate_with(&self, opts: &ValidationOptions) -> ValidationReport {
        let mut out = Vec::new();
        let n = self.vertices.len();
        if n == 0 || self.edges.is_empty() {
            out.push(Violation::new(
                ViolationCode::EmptyGraph,
                "graph needs at least one edge and two vertices",
            ));
        }
        let mut names = HashSet::new();
        for v in &self.vertices {
            if !names.insert(v.as_str()) {
                out.push(Violation::new(
                    ViolationCode::DuplicateVertex,
                    format!("vertex `{v}` declared twice"),
                ));
            }
        }
        let mut ids = HashSet::new();
        let mut pairs = HashSet::new();
        for e in &self.edges {
            if !ids.insert(e.id.as_str()) {
                out.push(Violation::new(
                    ViolationCode::DuplicateEdgeId,
                    format!("edge id `{}` declared twice", e.id),
                ));
            }
            let (a, b) = e.endpoints;
            if a >= n || b >= n {
                out.push(Violation::new(
                    ViolationCode::UnknownEndpoint,
                    format!("edge `{}` references a missing vertex", e.id),
                ));
            } else if a == b {
                out.push(Violation::new(
                    ViolationCode::SelfLoop,
                    format!("edge `{}` is a loop at `{}`", e.id, self.vertices[a]),
                ));
            } else if !pairs.insert((a.min(b), a.max(b))) {
                out.push(Violation::new(
                    ViolationCode::MultipleEdge,
                    format!(
                        "more than one edge between `{}` and `{}`",
                        self.vertices[a], self.vertices[b]
                    ),
                ));
            }
            self.edge_violations(e, &mut out);
        }
        for v in 0..n {
            if self.degree(v) == 0 {
                out.push(Violation::new(
                    ViolationCode::IsolatedVertex,
                    format!("vertex `{}` has no incident edge", self.vertices[v]),
                ));
            }
        }
        if self.coupling.dim() != n {
            out.push(Violation::new(
                ViolationCode::CouplingShape,
                format!("coupling matrix is {0}x{0}, expected {n}x{n}", self.coupling.dim()),
            ));
        } else {
            self.coupling.violations(opts.row_sum_tolerance, &mut out);
        }
        ValidationReport { violations: out }
    }

    fn edge_violations(&self, e: &Edge, out: &mut Vec<Violation>) {
        if !(e.length > 0.0) || !e.length.is_finite() {
            out.push(Violation::new(
                ViolationCode::NonpositiveLength,
                format!("nonpositive edge length {} on `{}`", e.length, e.id),
            ));
            return;
        }
        let mut profiles_ok = true;
        for (name, p) in [
            ("diffusion", &e.diffusion),
            ("drift", &e.drift),
            ("potential", &e.potential),
        ] {
            if let Some(issue) = p.structural_issue(e.length) {
                profiles_ok = false;
                out.push(Violation::new(
                    ViolationCode::InvalidProfile,
                    format!("{name} on `{}`: {issue}", e.id),
                ));
            }
        }
        if !profiles_ok {
            return;
        }
        let (cmin, _) = e.diffusion.sampled_range(e.length);
        if !(cmin > 0.0) {
            out.push(Violation::new(
                ViolationCode::NonpositiveDiffusion,
                format!("diffusion on `{}` reaches {cmin}", e.id),
            ));
        }
        let (pmin, _) = e.potential.sampled_range(e.length);
        if pmin < 0.0 {
            out.push(Violation::new(
                ViolationCode::NegativePotential,
                format!("potential on `{}` reaches {pmin}", e.id),
            ));
        }
    }

    pub fn vertex_condition_count(&self) -> VertexConditionCount {
        let continuity = (0..self.n_vertices())
            .map(|v| self.degree(v).saturating_sub(1))
            .sum();
        let kirchhoff = self.n_vertices();
        VertexConditionCount {
            continuity,
            kirchhoff,
            total: continuity + kirchhoff,
        }
    }

    /// For every vertex, the incident edge ends `E_v` in edge order.
    pub fn incidence_maps(&self) -> Vec<Vec<Incidence>> {
        let mut maps = vec![Vec::new(); self.n_vertices()];
        for (i, e) in self.edges.iter().enumerate() {
            maps[e.endpoints.0].push(Incidence {
                edge: i,
                side: Side::Left,
            });
            maps[e.endpoints.1].push(Incidence {
                edge: i,
                side: Side::Right,
            });
        }
        maps
    }

    /// True when every drift profile vanishes identically.
    pub fn is_drift_free(&self) -> bool {
        self.edges.iter().all(|e| e.drift.is_zero(e.length))
    }

    /// True when every potential profile vanishes identically.
    pub fn is_potential_free(&self) -> bool {
        self.edges.iter().all(|e| e.potential.is_zero(e.length))
    }

    pub fn with_coupling(&self, coupling: CouplingMatrix) -> Self {
        MetricGraph {
            coupling,
            ..self.clone()
        }
    }
}
