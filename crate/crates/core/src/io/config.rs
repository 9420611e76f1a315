use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::dynamics::{EdgeReaction, Modulation, ReactionSpec, Scheme};
use crate::graph::{CoefficientProfile, CouplingMatrix, Edge, MetricGraph};
use crate::noise::NoiseFamily;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    Validate,
    #[default]
    Simulate,
    Ensemble,
    Convergence,
    Hoelder,
    Spectrum,
}

impl Task {
    pub fn as_str(self) -> &'static str {
        match self {
            Task::Validate => "validate",
            Task::Simulate => "simulate",
            Task::Ensemble => "ensemble",
            Task::Convergence => "convergence",
            Task::Hoelder => "hoelder",
            Task::Spectrum => "spectrum",
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [
            Task::Validate,
            Task::Simulate,
            Task::Ensemble,
            Task::Convergence,
            Task::Hoelder,
            Task::Spectrum,
        ]
        .into_iter()
        .find(|t| t.as_str() == s)
        .ok_or_else(|| Error::semantic("task", format!("unknown task `{s}`")))
    }
}

/// A coefficient profile written either as a bare number or as
/// `{ constant = .. }`, `{ polynomial = [..] }`, `{ table = [[x, v], ..] }`.
#[derive(Debug, Clone, PartialEq)]
pub struct Profile(pub CoefficientProfile);

impl Serialize for Profile {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match &self.0 {
            CoefficientProfile::Constant(c) => s.serialize_f64(*c),
            other => other.serialize(s),
        }
    }
}

impl<'de> Deserialize<'de> for Profile {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Number(f64),
            Tagged(CoefficientProfile),
        }
        Ok(Profile(match Repr::deserialize(d)? {
            Repr::Number(c) => CoefficientProfile::Constant(c),
            Repr::Tagged(p) => p,
        }))
    }
}

impl From<f64> for Profile {
    fn from(c: f64) -> Self {
        Profile(CoefficientProfile::Constant(c))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdgeSection {
    pub id: String,
    pub from: String,
    pub to: String,
    pub length: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diffusion: Option<Profile>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub drift: Option<Profile>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub potential: Option<Profile>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphSection {
    pub vertices: Vec<String>,
    /// Row-major coupling matrix `M`.
    pub coupling: Vec<Vec<f64>>,
    pub edges: Vec<EdgeSection>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    None,
    Fhn,
    AllenCahn,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModulationSection {
    pub lo: f64,
    pub hi: f64,
    #[serde(default)]
    pub per_step: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdgeReactionSection {
    pub edge: String,
    pub degree: u32,
    pub leading: Profile,
    /// Coefficients of `η^0 .. η^(2k)`.
    pub lower: Vec<Profile>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub modulation: Option<ModulationSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReactionSection {
    pub preset: Preset,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    /// Per-edge overrides of the preset.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub edges: Vec<EdgeReactionSection>,
}

impl Default for ReactionSection {
    fn default() -> Self {
        ReactionSection {
            preset: Preset::None,
            a: None,
            beta: None,
            edges: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseKindName {
    #[default]
    None,
    White,
    Coloured,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FamilyName {
    Zero,
    Constant,
    Linear,
    Saturating,
}

/// One coloured-noise mode: either a profile on one edge or a global eigenvector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModeSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edge: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub profile: Option<Profile>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eigenmode: Option<usize>,
    pub amplitude: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSection {
    #[serde(default)]
    pub kind: NoiseKindName,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub family: Option<FamilyName>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    /// Growth exponent r of the noise family; defaults to k/K of the reaction.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub growth: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub modes: Vec<ModeSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeSection {
    pub edge: String,
    pub x: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSection {
    pub t_end: f64,
    pub dt: f64,
    /// Target mesh width.
    pub h: f64,
    pub scheme: Scheme,
    pub seed: u64,
    pub n_paths: usize,
    pub probes: Vec<ProbeSection>,
    pub output_stride: usize,
    pub taming: f64,
    pub q: f64,
    /// Allowed fraction of exploded paths before a task reports failure.
    pub max_blowup_rate: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dts: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lags: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub spectrum_count: Option<usize>,
}

impl Default for SolverSection {
    fn default() -> Self {
        SolverSection {
            t_end: 1.0,
            dt: 1e-3,
            h: 0.05,
            scheme: Scheme::SplitStep,
            seed: 0,
            n_paths: 100,
            probes: Vec::new(),
            output_stride: 1,
            taming: 1.0,
            q: 4.0,
            max_blowup_rate: 0.0,
            dts: None,
            lags: None,
            spectrum_count: None,
        }
    }
}

/// Initial state: a constant, coefficients in the operator's eigenbasis, or a
/// profile per edge (a vertex takes the value of its first incident edge).
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub constant: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eigenmodes: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edges: Option<BTreeMap<String, Profile>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(default)]
    pub task: Task,
    pub graph: GraphSection,
    #[serde(default)]
    pub reaction: ReactionSection,
    #[serde(default)]
    pub noise: NoiseSection,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub initial: InitialSection,
}

fn line_column(text: &str, offset: usize) -> (usize, usize) {
    let offset = offset.min(text.len());
    let before = &text[..offset];
    let line = before.matches('\n').count() + 1;
    let column = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
    (line, column)
}

fn backticked(msg: &str) -> Option<&str> {
    let start = msg.find('`')? + 1;
    let len = msg[start..].find('`')?;
    Some(&msg[start..start + len])
}

fn sem(field: impl Into<String>, e: impl fmt::Display) -> Error {
    Error::semantic(field, e.to_string())
}

impl Config {
    /// Parses and fully checks a config: graph assumptions, reaction and
    /// noise structure, solver settings and name references.
    pub fn parse(text: &str) -> Result<Self> {
        let cfg = Self::parse_unchecked(text)?;
        cfg.check()?;
        Ok(cfg)
    }

    /// Syntax and schema only; a `validate` task still reports graph violations.
    pub fn parse_unchecked(text: &str) -> Result<Self> {
        if let Err(e) = text.parse::<toml::Table>() {
            let (line, column) = e.span().map_or((1, 1), |s| line_column(text, s.start));
            return Err(Error::ConfigSyntax {
                line,
                column,
                message: e.message().trim().to_string(),
            });
        }
        toml::from_str::<Config>(text).map_err(|e| {
            let msg = e.message().trim().to_string();
            let field = backticked(&msg).unwrap_or("config").to_string();
            let message = match e.span() {
                Some(s) => {
                    let (line, column) = line_column(text, s.start);
                    format!("{msg} (line {line}, column {column})")
                }
                None => msg,
            };
            Error::ConfigSemantic { field, message }
        })
    }

    /// The normalized form: every section and default spelled out.
    pub fn to_normalized(&self) -> String {
        toml::to_string(self).expect("config serializes to TOML")
    }

    pub fn check(&self) -> Result<()> {
        let g = self.graph()?;
        let report = g.validate();
        if !report.is_valid() {
            return Err(Error::InvalidGraph(report));
        }
        let reaction = self.reaction(&g)?;
        self.noise_family(&reaction)?;
        self.check_noise_modes(&g)?;
        self.check_solver(&g)?;
        self.check_initial(&g)?;
        Ok(())
    }

    /// The graph described by the `[graph]` section, without assumption checks.
    pub fn graph(&self) -> Result<MetricGraph> {
        let gs = &self.graph;
        let vertex = |name: &str, field: String| {
            gs.vertices
                .iter()
                .position(|v| v == name)
                .ok_or_else(|| Error::semantic(field, format!("unknown vertex `{name}`")))
        };
        let mut edges = Vec::with_capacity(gs.edges.len());
        for (i, e) in gs.edges.iter().enumerate() {
            let a = vertex(&e.from, format!("graph.edges[{i}].from"))?;
            let b = vertex(&e.to, format!("graph.edges[{i}].to"))?;
            let mut edge = Edge::new(e.id.clone(), a, b, e.length);
            if let Some(p) = &e.diffusion {
                edge = edge.with_diffusion(p.0.clone());
            }
            if let Some(p) = &e.drift {
                edge = edge.with_drift(p.0.clone());
            }
            if let Some(p) = &e.potential {
                edge = edge.with_potential(p.0.clone());
            }
            edges.push(edge);
        }
        let coupling = CouplingMatrix::from_rows(&gs.coupling).map_err(|e| sem("graph.coupling", e))?;
        Ok(MetricGraph::new(gs.vertices.clone(), edges, coupling))
    }

    fn edge_index(g: &MetricGraph, id: &str, field: String) -> Result<usize> {
        g.edge_index(id)
            .ok_or_else(|| Error::semantic(field, format!("unknown edge `{id}`")))
    }

    pub fn reaction(&self, g: &MetricGraph) -> Result<ReactionSpec> {
        let rs = &self.reaction;
        let n = g.n_edges();
        let lengths: Vec<f64> = g.edges.iter().map(|e| e.length).collect();
        let mut per_edge: Vec<Option<EdgeReaction>> = match rs.preset {
            Preset::None => vec![None; n],
            Preset::Fhn => {
                let a = rs.a.ok_or_else(|| Error::semantic("reaction.a", "the fhn preset needs `a`"))?;
                vec![Some(EdgeReaction::fitzhugh_nagumo(a)); n]
            }
            Preset::AllenCahn => {
                let b = rs
                    .beta
                    .ok_or_else(|| Error::semantic("reaction.beta", "the allen-cahn preset needs `beta`"))?;
                vec![Some(EdgeReaction::allen_cahn(b)); n]
            }
        };
        for (i, er) in rs.edges.iter().enumerate() {
            let e = Self::edge_index(g, &er.edge, format!("reaction.edges[{i}].edge"))?;
            per_edge[e] = Some(EdgeReaction {
                degree: er.degree,
                leading: er.leading.0.clone(),
                lower: er.lower.iter().map(|p| p.0.clone()).collect(),
                modulation: er.modulation.map(|m| Modulation {
                    lo: m.lo,
                    hi: m.hi,
                    per_step: m.per_step,
                }),
            });
        }
        if per_edge.iter().all(Option::is_none) {
            return Ok(ReactionSpec::zero(n));
        }
        if let Some(e) = per_edge.iter().position(Option::is_none) {
            return Err(Error::semantic(
                "reaction.edges",
                format!("edge `{}` has no reaction and no preset applies", g.edges[e].id),
            ));
        }
        let spec = ReactionSpec::new(per_edge.into_iter().flatten().collect());
        spec.validate(&lengths).map_err(|e| sem("reaction", e))?;
        Ok(spec)
    }

    /// Noise family, amplitude and growth exponent; `None` without noise.
    pub fn noise_family(&self, reaction: &ReactionSpec) -> Result<Option<(NoiseFamily, f64)>> {
        let ns = &self.noise;
        if ns.kind == NoiseKindName::None {
            return Ok(None);
        }
        let family = ns
            .family
            .ok_or_else(|| Error::semantic("noise.family", "noise needs a family"))?;
        let sigma = match family {
            FamilyName::Zero => 0.0,
            _ => ns
                .sigma
                .ok_or_else(|| Error::semantic("noise.sigma", "noise needs an amplitude"))?,
        };
        if !sigma.is_finite() {
            return Err(Error::semantic("noise.sigma", "amplitude must be finite"));
        }
        let growth = ns.growth.unwrap_or_else(|| reaction.growth_exponent());
        if !(0.0..=1.0).contains(&growth) {
            return Err(Error::semantic("noise.growth", "growth exponent must lie in [0, 1]"));
        }
        let limit = reaction.growth_exponent();
        if family != FamilyName::Constant && growth > limit + 1e-12 {
            return Err(Error::semantic(
                "noise.growth",
                format!("growth exponent {growth} exceeds k/K = {limit} of the reaction"),
            ));
        }
        let fam = match family {
            FamilyName::Zero => NoiseFamily::Zero,
            FamilyName::Constant => NoiseFamily::Constant { sigma },
            FamilyName::Linear => NoiseFamily::Linear { sigma },
            FamilyName::Saturating => NoiseFamily::Saturating { sigma },
        };
        Ok(Some((fam, growth)))
    }

    fn check_noise_modes(&self, g: &MetricGraph) -> Result<()> {
        let ns = &self.noise;
        if ns.kind != NoiseKindName::Coloured {
            if !ns.modes.is_empty() {
                return Err(Error::semantic("noise.modes", "modes are only used by coloured noise"));
            }
            return Ok(());
        }
        if ns.modes.is_empty() {
            return Err(Error::semantic("noise.modes", "coloured noise needs at least one mode"));
        }
        for (i, m) in ns.modes.iter().enumerate() {
            let field = format!("noise.modes[{i}]");
            if !m.amplitude.is_finite() {
                return Err(Error::semantic(format!("{field}.amplitude"), "must be finite"));
            }
            match (&m.edge, &m.profile, m.eigenmode) {
                (Some(id), Some(p), None) => {
                    let e = Self::edge_index(g, id, format!("{field}.edge"))?;
                    if let Some(issue) = p.0.structural_issue(g.edges[e].length) {
                        return Err(Error::semantic(format!("{field}.profile"), issue));
                    }
                }
                (None, None, Some(_)) => {
                    if !g.is_drift_free() {
                        return Err(Error::semantic(
                            format!("{field}.eigenmode"),
                            "eigenmode kernels need a drift-free operator",
                        ));
                    }
                }
                _ => {
                    return Err(Error::semantic(field, "give either `edge` and `profile`, or `eigenmode`"));
                }
            }
        }
        Ok(())
    }

    fn check_solver(&self, g: &MetricGraph) -> Result<()> {
        let s = &self.solver;
        if !(s.h > 0.0) || !s.h.is_finite() {
            return Err(Error::semantic("solver.h", "mesh width must be positive"));
        }
        self.solver_config(Vec::new())
            .n_steps()
            .map_err(|e| sem("solver.dt", e))?;
        if s.output_stride == 0 {
            return Err(Error::semantic("solver.output_stride", "must be at least 1"));
        }
        if s.n_paths == 0 {
            return Err(Error::semantic("solver.n_paths", "must be at least 1"));
        }
        if !(s.taming >= 0.0) {
            return Err(Error::semantic("solver.taming", "must be nonnegative"));
        }
        if !(s.q > 0.0) {
            return Err(Error::semantic("solver.q", "moment exponent must be positive"));
        }
        if !(0.0..=1.0).contains(&s.max_blowup_rate) {
            return Err(Error::semantic("solver.max_blowup_rate", "must lie in [0, 1]"));
        }
        for (i, p) in s.probes.iter().enumerate() {
            let e = Self::edge_index(g, &p.edge, format!("solver.probes[{i}].edge"))?;
            if !(0.0..=g.edges[e].length).contains(&p.x) {
                return Err(Error::semantic(
                    format!("solver.probes[{i}].x"),
                    format!("{} lies outside [0, {}]", p.x, g.edges[e].length),
                ));
            }
        }
        if let Some(dts) = &s.dts {
            if dts.len() < 3 || dts.iter().any(|d| !(*d > 0.0)) {
                return Err(Error::semantic("solver.dts", "need at least 3 positive time steps"));
            }
        }
        if let Some(lags) = &s.lags {
            if lags.len() < 4 {
                return Err(Error::semantic("solver.lags", "need at least 4 lags"));
            }
        }
        if s.spectrum_count == Some(0) {
            return Err(Error::semantic("solver.spectrum_count", "must be at least 1"));
        }
        Ok(())
    }

    fn check_initial(&self, g: &MetricGraph) -> Result<()> {
        let init = &self.initial;
        let given = [init.constant.is_some(), init.eigenmodes.is_some(), init.edges.is_some()];
        if given.iter().filter(|&&b| b).count() > 1 {
            return Err(Error::semantic("initial", "give only one of `constant`, `eigenmodes`, `edges`"));
        }
        if init.eigenmodes.is_some() && !g.is_drift_free() {
            return Err(Error::semantic("initial.eigenmodes", "eigenmode data need a drift-free operator"));
        }
        if let Some(map) = &init.edges {
            for id in map.keys() {
                Self::edge_index(g, id, format!("initial.edges.{id}"))?;
            }
            if let Some(e) = g.edges.iter().find(|e| !map.contains_key(&e.id)) {
                return Err(Error::semantic("initial.edges", format!("edge `{}` has no initial profile", e.id)));
            }
        }
        Ok(())
    }

    /// Solver settings with the given probe DOFs.
    pub fn solver_config(&self, probes: Vec<usize>) -> crate::dynamics::SolverConfig {
        let s = &self.solver;
        crate::dynamics::SolverConfig {
            t_end: s.t_end,
            dt: s.dt,
            scheme: s.scheme,
            seed: s.seed,
            taming: s.taming,
            output_stride: s.output_stride,
            noise_substeps: 1,
            probes,
            record_snapshots: false,
            moment_q: s.q,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[graph]
vertices = ["a", "b"]
coupling = [[-1.0, 0.0], [0.0, -1.0]]

[[graph.edges]]
id = "e"
from = "a"
to = "b"
length = 1.0
"#;

    #[test]
    fn minimal_config_is_valid() {
        let cfg = Config::parse(MINIMAL).unwrap();
        assert_eq!(cfg.task, Task::Simulate);
        assert_eq!(cfg.graph.edges[0].length, 1.0);
    }

    #[test]
    fn missing_length_names_the_field() {
        let text = MINIMAL.replace("length = 1.0\n", "");
        match Config::parse(&text) {
            Err(Error::ConfigSemantic { field, .. }) => assert_eq!(field, "length"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn syntax_errors_carry_a_position() {
        let text = MINIMAL.replace("length = 1.0", "length = = 1.0");
        match Config::parse(&text) {
            Err(Error::ConfigSyntax { line, column, .. }) => {
                assert_eq!(line, 10);
                assert!(column > 1);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn nonnegative_row_sum_is_reported() {
        let text = MINIMAL.replace("[0.0, -1.0]]", "[0.0, 0.5]]");
        match Config::parse(&text) {
            Err(Error::InvalidGraph(report)) => {
                assert!(report.to_string().contains("row-sum-not-strictly-negative"), "{report}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn fhn_preset_expands_to_a_cubic() {
        let text = format!("{MINIMAL}\n[reaction]\npreset = \"fhn\"\na = 0.5\n");
        let cfg = Config::parse(&text).unwrap();
        let spec = cfg.reaction(&cfg.graph().unwrap()).unwrap();
        let e = &spec.edges[0];
        assert_eq!(e.degree, 1);
        assert_eq!(e.coefficients_at(0.3), vec![0.0, -0.5, 1.5, -1.0]);
    }

    #[test]
    fn unknown_vertex_names_the_edge_field() {
        let text = MINIMAL.replace("to = \"b\"", "to = \"z\"");
        match Config::parse(&text) {
            Err(Error::ConfigSemantic { field, .. }) => assert_eq!(field, "graph.edges[0].to"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn normalized_form_round_trips() {
        let text = format!(
            "{MINIMAL}\n[noise]\nkind = \"white\"\nfamily = \"linear\"\nsigma = 0.3\n\n[solver]\nprobes = [{{ edge = \"e\", x = 0.5 }}]\ndts = [0.01, 0.005, 0.0025]\n"
        );
        let cfg = Config::parse(&text).unwrap();
        let again = Config::parse(&cfg.to_normalized()).unwrap();
        assert_eq!(cfg, again);
        assert_eq!(cfg.to_normalized(), again.to_normalized());
    }
}
