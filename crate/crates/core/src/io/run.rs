use std::fmt::Write as _;
use std::sync::Arc;

use super::bundle::{fmt_f64, ResultBundle, Summary, SUMMARY_FILE};
use super::config::{Config, NoiseKindName, Task};
use crate::analysis::{estimate_hoelder, strong_order_time, RefinementProblem};
use crate::assembly::{assemble, eigenpairs, DiscreteOperator, Eigenpairs, GridFunction, Mesh};
use crate::dynamics::{run_ensemble, run_ensemble_map, ReactionSpec, Simulator};
use crate::graph::MetricGraph;
use crate::noise::{ColouredKernel, NoiseKind, NoiseSpec};
use crate::{Error, Result};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;
pub const EXIT_BLOW_UP_RATE: i32 = 4;

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub bundle: ResultBundle,
    pub exit_code: i32,
}

#[derive(Debug, Clone)]
struct Probe {
    label: String,
    dof: usize,
}

/// Everything a task needs, built from a checked config.
struct Experiment {
    graph: MetricGraph,
    op: Arc<DiscreteOperator>,
    reaction: ReactionSpec,
    noise: NoiseSpec,
    initial: GridFunction,
    probes: Vec<Probe>,
}

impl Experiment {
    fn build(cfg: &Config) -> Result<Self> {
        cfg.check()?;
        let graph = cfg.graph()?;
        let reaction = cfg.reaction(&graph)?;
        let mesh = Mesh::build(&graph, cfg.solver.h)?;
        let op = Arc::new(assemble(&graph, &mesh)?);
        let needs_eigen = cfg.initial.eigenmodes.is_some() || cfg.noise.modes.iter().any(|m| m.eigenmode.is_some());
        let ep = if needs_eigen { Some(eigenpairs(&op)?) } else { None };
        let noise = Self::noise(cfg, &graph, &mesh, &reaction, ep.as_ref())?;
        let initial = Self::initial(cfg, &graph, &mesh, ep.as_ref())?;
        let probes = cfg
            .solver
            .probes
            .iter()
            .map(|p| {
                let e = graph.edge_index(&p.edge).expect("checked");
                Probe {
                    label: format!("{}@{}", p.edge, p.x),
                    dof: mesh.nearest_dof(e, p.x),
                }
            })
            .collect();
        Ok(Experiment {
            graph,
            op,
            reaction,
            noise,
            initial,
            probes,
        })
    }

    fn noise(
        cfg: &Config,
        g: &MetricGraph,
        mesh: &Arc<Mesh>,
        reaction: &ReactionSpec,
        ep: Option<&Eigenpairs>,
    ) -> Result<NoiseSpec> {
        let n = g.n_edges();
        let Some((family, growth)) = cfg.noise_family(reaction)? else {
            return Ok(NoiseSpec::none(n));
        };
        let mut spec = NoiseSpec::uniform_white(n, family, growth);
        if cfg.noise.kind == NoiseKindName::Coloured {
            let mut kernel = ColouredKernel::empty(mesh);
            for (i, m) in cfg.noise.modes.iter().enumerate() {
                if let Some(k) = m.eigenmode {
                    let ep = ep.expect("eigenpairs computed for eigenmode kernels");
                    if k >= ep.len() {
                        return Err(Error::semantic(
                            format!("noise.modes[{i}].eigenmode"),
                            format!("the mesh has only {} eigenmodes", ep.len()),
                        ));
                    }
                    let w = ep.vector(k);
                    for e in 0..n {
                        kernel.push_restriction(e, &w, m.amplitude)?;
                    }
                } else {
                    let e = g.edge_index(m.edge.as_deref().expect("checked")).expect("checked");
                    kernel.push_profile(e, &m.profile.as_ref().expect("checked").0, m.amplitude)?;
                }
            }
            spec.kind = NoiseKind::Coloured(kernel);
        }
        Ok(spec)
    }

    fn initial(cfg: &Config, g: &MetricGraph, mesh: &Arc<Mesh>, ep: Option<&Eigenpairs>) -> Result<GridFunction> {
        let init = &cfg.initial;
        if let Some(coeffs) = &init.eigenmodes {
            let ep = ep.expect("eigenpairs computed for eigenmode data");
            if coeffs.len() > ep.len() {
                return Err(Error::semantic(
                    "initial.eigenmodes",
                    format!("the mesh has only {} eigenmodes", ep.len()),
                ));
            }
            return GridFunction::from_values(mesh, ep.synthesize(coeffs));
        }
        if let Some(map) = &init.edges {
            let profiles: Vec<_> = g.edges.iter().map(|e| map[&e.id].0.clone()).collect();
            return Ok(GridFunction::from_fn(mesh, |e, x| profiles[e].eval(x)));
        }
        Ok(GridFunction::constant(mesh, init.constant.unwrap_or(0.0)))
    }

    fn probe_dofs(&self) -> Vec<usize> {
        self.probes.iter().map(|p| p.dof).collect()
    }

    fn probe_header(&self) -> String {
        self.probes.iter().map(|p| format!(",{}", p.label)).collect()
    }
}

fn blow_up_code(cfg: &Config, blow_ups: usize, n_paths: usize, summary: &mut Summary) -> i32 {
    let rate = blow_ups as f64 / n_paths as f64;
    summary.push("blow_ups", blow_ups);
    summary.float("blow_up_rate", rate);
    if rate > cfg.solver.max_blowup_rate {
        EXIT_BLOW_UP_RATE
    } else {
        EXIT_OK
    }
}

fn task_validate(cfg: &Config, summary: &mut Summary) -> Result<i32> {
    let g = cfg.graph()?;
    let report = g.validate();
    let counts = g.vertex_condition_count();
    summary.push("valid", report.is_valid());
    summary.push("n_vertices", g.n_vertices());
    summary.push("n_edges", g.n_edges());
    summary.push("continuity_conditions", counts.continuity);
    summary.push("kirchhoff_conditions", counts.kirchhoff);
    summary.push("vertex_conditions", counts.total);
    let mut codes: Vec<&str> = report.violations.iter().map(|v| v.code.as_str()).collect();
    codes.dedup();
    summary.push("violations", codes.join(","));
    for (i, v) in report.violations.iter().enumerate() {
        summary.push(format!("violation.{i}"), format!("{}: {}", v.code.as_str(), v.message));
    }
    if !report.is_valid() {
        return Ok(EXIT_CONFIG);
    }
    cfg.check()?;
    summary.float("negated_coupling_min_eigenvalue", g.coupling.negated_min_eigenvalue());
    let reaction = cfg.reaction(&g)?;
    if !reaction.is_zero() {
        let (k, big_k) = reaction.exponents()?;
        summary.push("reaction_k", k);
        summary.push("reaction_big_k", big_k);
    }
    summary.float("noise_growth_limit", reaction.growth_exponent());
    Ok(EXIT_OK)
}

fn task_simulate(cfg: &Config, x: &Experiment, bundle: &mut ResultBundle, summary: &mut Summary) -> Result<i32> {
    let mut sc = cfg.solver_config(x.probe_dofs());
    sc.record_snapshots = true;
    let sim = Simulator::new(&x.op, &x.reaction, &x.noise, sc)?;
    let path = sim.path(0, &x.initial)?;
    let mesh = x.op.mesh();
    let mut traj = String::from("t,edge,x,value\n");
    for (t, snap) in path.times.iter().zip(&path.snapshots) {
        let u = GridFunction::from_values(mesh, snap.clone())?;
        for (e, eg) in mesh.edges().iter().enumerate() {
            let id = &x.graph.edges[e].id;
            for (node, v) in u.edge_trace(e).iter().enumerate() {
                let _ = writeln!(traj, "{},{id},{},{}", fmt_f64(*t), fmt_f64(eg.x(node)), fmt_f64(*v));
            }
        }
    }
    bundle.insert("trajectory.csv", &traj);
    if !x.probes.is_empty() {
        let mut probes = format!("t{}\n", x.probe_header());
        for (t, row) in path.times.iter().zip(&path.probe_series) {
            probes.push_str(&fmt_f64(*t));
            for v in row {
                let _ = write!(probes, ",{}", fmt_f64(*v));
            }
            probes.push('\n');
        }
        bundle.insert("probes.csv", &probes);
    }
    summary.push("n_steps", sim.config().n_steps()?);
    summary.push("n_dofs", mesh.n_dofs());
    summary.push("blow_up", path.blow_up);
    if let Some(s) = path.blow_up_step {
        summary.push("blow_up_step", s);
    }
    summary.float("sup_norm", path.sup_norm);
    if !path.blow_up {
        for p in &x.probes {
            summary.float(format!("final.{}", p.label), path.final_state.values()[p.dof]);
        }
    }
    Ok(blow_up_code(cfg, path.blow_up as usize, 1, summary))
}

fn task_ensemble(
    cfg: &Config,
    x: &Experiment,
    threads: usize,
    bundle: &mut ResultBundle,
    summary: &mut Summary,
) -> Result<i32> {
    let mut sc = cfg.solver_config(x.probe_dofs());
    sc.output_stride = usize::MAX;
    let sim = Simulator::new(&x.op, &x.reaction, &x.noise, sc)?;
    let n = cfg.solver.n_paths;
    let stats = run_ensemble(&sim, &x.initial, n, threads)?;
    let mut table = format!("path,blow_up,sup_norm{}\n", x.probe_header());
    for s in &stats.summaries {
        let _ = write!(table, "{},{},{}", s.path, s.blow_up, fmt_f64(s.sup_norm));
        for v in &s.final_probes {
            let _ = write!(table, ",{}", fmt_f64(*v));
        }
        table.push('\n');
    }
    bundle.insert("paths.csv", &table);
    summary.push("n_paths", n);
    summary.float("moment_q", stats.moment_q);
    summary.float("sup_moment", stats.sup_moment);
    summary.float("sup_moment_se", stats.sup_moment_se);
    for (i, p) in x.probes.iter().enumerate() {
        summary.float(format!("mean.{}", p.label), stats.probe_mean[i]);
        summary.float(format!("var.{}", p.label), stats.probe_var[i]);
        summary.float(format!("var_se.{}", p.label), stats.probe_var_se[i]);
    }
    Ok(blow_up_code(cfg, stats.blow_ups, n, summary))
}

fn task_convergence(
    cfg: &Config,
    x: &Experiment,
    threads: usize,
    bundle: &mut ResultBundle,
    summary: &mut Summary,
) -> Result<i32> {
    let dt = cfg.solver.dt;
    let dts = cfg
        .solver
        .dts
        .clone()
        .unwrap_or_else(|| vec![dt, dt / 2.0, dt / 4.0, dt / 8.0]);
    let problem = RefinementProblem {
        op: x.op.clone(),
        reaction: x.reaction.clone(),
        noise: x.noise.clone(),
        initial: x.initial.clone(),
        config: cfg.solver_config(Vec::new()),
    };
    let n = cfg.solver.n_paths;
    let table = strong_order_time(&problem, &dts, n, threads)?;
    let mut csv = String::from("dt,error,std_error\n");
    for r in &table.rows {
        let _ = writeln!(csv, "{},{},{}", fmt_f64(r.dt), fmt_f64(r.error), fmt_f64(r.std_error));
    }
    bundle.insert("convergence.csv", &csv);
    summary.push("n_paths", n);
    summary.push("levels", dts.len());
    summary.float("slope", table.fit.slope);
    summary.float("slope_half_width", table.fit.half_width);
    summary.float("r_squared", table.fit.r_squared);
    summary.push("usable", table.usable);
    Ok(blow_up_code(cfg, table.blow_ups, n, summary))
}

fn task_hoelder(
    cfg: &Config,
    x: &Experiment,
    threads: usize,
    bundle: &mut ResultBundle,
    summary: &mut Summary,
) -> Result<i32> {
    let probe = x
        .probes
        .first()
        .ok_or_else(|| Error::semantic("solver.probes", "the hoelder task needs a probe"))?;
    let mut sc = cfg.solver_config(vec![probe.dof]);
    sc.output_stride = 1;
    let sim = Simulator::new(&x.op, &x.reaction, &x.noise, sc)?;
    let n = cfg.solver.n_paths;
    let series: Vec<Option<Vec<f64>>> = run_ensemble_map(&sim, &x.initial, n, threads, |s| {
        (!s.blow_up).then(|| s.probe_series.iter().map(|r| r[0]).collect())
    })?;
    let ok: Vec<Vec<f64>> = series.into_iter().flatten().collect();
    let blow_ups = n - ok.len();
    let lags = cfg.solver.lags.clone().unwrap_or_else(|| vec![8, 16, 32, 64]);
    let est = estimate_hoelder(&ok, cfg.solver.dt, &lags)?;
    let mut csv = String::from("lag_steps,lag,mean_sq_increment\n");
    for ((l, tau), m) in lags.iter().zip(&est.lags).zip(&est.mean_sq_increments) {
        let _ = writeln!(csv, "{l},{},{}", fmt_f64(*tau), fmt_f64(*m));
    }
    bundle.insert("hoelder.csv", &csv);
    summary.push("probe", &probe.label);
    summary.push("n_paths", n);
    summary.float("exponent", est.exponent);
    summary.float("r_squared", est.r_squared);
    summary.push("insufficient_resolution", est.insufficient_resolution);
    Ok(blow_up_code(cfg, blow_ups, n, summary))
}

fn task_spectrum(cfg: &Config, x: &Experiment, bundle: &mut ResultBundle, summary: &mut Summary) -> Result<i32> {
    let ep = eigenpairs(&x.op)?;
    let count = cfg.solver.spectrum_count.unwrap_or(ep.len()).min(ep.len());
    let mut csv = String::from("index,eigenvalue\n");
    for (i, l) in ep.values.iter().take(count).enumerate() {
        let _ = writeln!(csv, "{i},{}", fmt_f64(*l));
    }
    bundle.insert("spectrum.csv", &csv);
    summary.push("n_dofs", x.op.n_dofs());
    summary.push("n_eigenvalues", count);
    summary.float("leading_eigenvalue", ep.values[0]);
    Ok(EXIT_OK)
}

/// Runs the configured task and collects its outputs.
///
/// Task failures do not surface as `Err`: they are recorded in the summary
/// (`status`, `error_code`, `error`) and reflected in `exit_code`.
pub fn run_config(cfg: &Config, threads: usize) -> Result<RunOutput> {
    let normalized = cfg.to_normalized();
    let mut bundle = ResultBundle::new(&normalized, cfg.solver.seed);
    let mut summary = Summary::default();
    summary.push("task", cfg.task);
    summary.push("seed", cfg.solver.seed);
    let result = match cfg.task {
        Task::Validate => task_validate(cfg, &mut summary),
        task => Experiment::build(cfg).and_then(|x| match task {
            Task::Simulate => task_simulate(cfg, &x, &mut bundle, &mut summary),
            Task::Ensemble => task_ensemble(cfg, &x, threads, &mut bundle, &mut summary),
            Task::Convergence => task_convergence(cfg, &x, threads, &mut bundle, &mut summary),
            Task::Hoelder => task_hoelder(cfg, &x, threads, &mut bundle, &mut summary),
            Task::Spectrum => task_spectrum(cfg, &x, &mut bundle, &mut summary),
            Task::Validate => unreachable!(),
        }),
    };
    let exit_code = match result {
        Ok(code) => {
            summary.push(
                "status",
                match code {
                    EXIT_OK => "ok",
                    EXIT_BLOW_UP_RATE => "blow-up-rate-exceeded",
                    _ => "invalid",
                },
            );
            code
        }
        Err(e) => {
            summary.push("status", "error");
            summary.push("error_code", e.exit_code());
            summary.push("error", &e);
            e.exit_code()
        }
    };
    summary.push("exit_code", exit_code);
    bundle.insert(SUMMARY_FILE, &summary.render());
    Ok(RunOutput { bundle, exit_code })
}
