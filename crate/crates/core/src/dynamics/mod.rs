//! Time integration of the linear semigroup and of the stochastic problem.

mod ensemble;
mod reaction;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use ensemble::{run_ensemble, run_ensemble_map, EnsembleStats, PathSummary};
pub(crate) use ensemble::mean_se;
pub use reaction::{
    reaction_eval, CoefficientBounds, EdgeReaction, Modulation, ReactionField, ReactionSpec,
};

use crate::assembly::{CondensedSolver, DiscreteOperator, GridFunction};
use crate::noise::{gamma_into, NoiseSpec, StreamKey};
use crate::sparse::CsrMatrix;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    /// Tamed reaction substep, then Crank–Nicolson on the linear part; noise ignored.
    DeterministicCn,
    /// Tamed reaction and noise evaluated at the pre-step state, implicit linear step.
    SemiImplicitTamed,
    /// Tamed reaction substep, noise at the intermediate state, implicit linear step.
    SplitStep,
}

impl Scheme {
    pub fn as_str(self) -> &'static str {
        match self {
            Scheme::DeterministicCn => "deterministic-cn",
            Scheme::SemiImplicitTamed => "semi-implicit-tamed",
            Scheme::SplitStep => "split-step",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "deterministic-cn" => Some(Scheme::DeterministicCn),
            "semi-implicit-tamed" => Some(Scheme::SemiImplicitTamed),
            "split-step" => Some(Scheme::SplitStep),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub t_end: f64,
    pub dt: f64,
    pub scheme: Scheme,
    pub seed: u64,
    pub taming: f64,
    /// Snapshot/probe recording every `output_stride` steps (the final step is always kept).
    pub output_stride: usize,
    /// Each step's noise is the sum of this many base increments of length `dt / noise_substeps`.
    pub noise_substeps: u64,
    /// DOFs recorded in the probe series.
    pub probes: Vec<usize>,
    /// Keep full snapshots, not only probes.
    pub record_snapshots: bool,
    /// Moment exponent for `E sup_t ‖u(t)‖_∞^q`.
    pub moment_q: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            t_end: 1.0,
            dt: 1e-3,
            scheme: Scheme::SplitStep,
            seed: 0,
            taming: 1.0,
            output_stride: 1,
            noise_substeps: 1,
            probes: Vec::new(),
            record_snapshots: false,
            moment_q: 4.0,
        }
    }
}

impl SolverConfig {
    pub fn n_steps(&self) -> Result<u64> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::invalid(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.t_end >= self.dt) {
            return Err(Error::invalid(format!("T = {} must be at least dt = {}", self.t_end, self.dt)));
        }
        let n = (self.t_end / self.dt).round();
        if ((n * self.dt - self.t_end) / self.t_end).abs() > 1e-9 {
            return Err(Error::invalid(format!(
                "T = {} is not an integer multiple of dt = {}",
                self.t_end, self.dt
            )));
        }
        Ok(n as u64)
    }

    fn validate(&self, n_dofs: usize) -> Result<()> {
        self.n_steps()?;
        if self.output_stride == 0 {
            return Err(Error::invalid("output stride must be at least 1"));
        }
        if self.noise_substeps == 0 {
            return Err(Error::invalid("noise substeps must be at least 1"));
        }
        if !(self.taming >= 0.0) {
            return Err(Error::invalid("taming constant must be nonnegative"));
        }
        if let Some(&p) = self.probes.iter().find(|&&p| p >= n_dofs) {
            return Err(Error::invalid(format!("probe dof {p} out of range")));
        }
        Ok(())
    }
}

/// Factorized linear propagators of one operator at one time step.
#[derive(Debug, Clone)]
pub struct LinearPropagator {
    op: Arc<DiscreteOperator>,
    dt: f64,
    implicit: CondensedSolver,
    cn_lhs: CondensedSolver,
    cn_rhs: CsrMatrix,
}

impl LinearPropagator {
    pub fn new(op: &Arc<DiscreteOperator>, dt: f64) -> Result<Self> {
        if !(dt > 0.0) {
            return Err(Error::invalid("dt must be positive"));
        }
        let mesh = op.mesh();
        let implicit = CsrMatrix::linear_combination(&[
            (1.0, &op.mass),
            (dt, &op.stiffness),
            (-dt, &op.convection),
        ]);
        let cn_lhs = CsrMatrix::linear_combination(&[
            (1.0, &op.mass),
            (0.5 * dt, &op.stiffness),
            (-0.5 * dt, &op.convection),
        ]);
        let cn_rhs = CsrMatrix::linear_combination(&[
            (1.0, &op.mass),
            (-0.5 * dt, &op.stiffness),
            (0.5 * dt, &op.convection),
        ]);
        let diag = |e: Error| match e {
            Error::LinearSolve(m) => Error::LinearSolve(format!("dt = {dt}: {m}")),
            other => other,
        };
        Ok(LinearPropagator {
            op: Arc::clone(op),
            dt,
            implicit: CondensedSolver::new(&implicit, mesh).map_err(diag)?,
            cn_lhs: CondensedSolver::new(&cn_lhs, mesh).map_err(diag)?,
            cn_rhs,
        })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn operator(&self) -> &Arc<DiscreteOperator> {
        &self.op
    }

    /// Crank–Nicolson: `(mass + dt/2 (K − C)) u⁺ = (mass − dt/2 (K − C)) u`.
    pub fn crank_nicolson(&self, u: &[f64]) -> Result<Vec<f64>> {
        let mut rhs = self.cn_rhs.mul_vec(u);
        self.cn_lhs.solve_in_place(&mut rhs)?;
        Ok(rhs)
    }

    /// Implicit Euler: `(mass + dt (K − C)) u⁺ = mass · u`.
    pub fn implicit_euler(&self, u: &[f64]) -> Result<Vec<f64>> {
        let mut rhs = self.op.mass.mul_vec(u);
        self.implicit.solve_in_place(&mut rhs)?;
        Ok(rhs)
    }

    fn implicit_from_mass_rhs(&self, rhs: &mut [f64]) -> Result<()> {
        self.implicit.solve_in_place(rhs)
    }
}

/// One Crank–Nicolson step of the linear generator.
pub fn step_deterministic(op: &Arc<DiscreteOperator>, u: &GridFunction, dt: f64) -> Result<GridFunction> {
    if !u.conforms_to(op.mesh()) {
        return Err(Error::MeshMismatch);
    }
    let prop = LinearPropagator::new(op, dt)?;
    GridFunction::from_values(op.mesh(), prop.crank_nicolson(u.values())?)
}

/// One split step of the stochastic problem at (`t`, `step`), with the path's stream key.
#[allow(clippy::too_many_arguments)]
pub fn step_stochastic(
    op: &Arc<DiscreteOperator>,
    spec: &ReactionSpec,
    noise: &NoiseSpec,
    u: &GridFunction,
    t: f64,
    dt: f64,
    key: &StreamKey,
    step: u64,
) -> Result<GridFunction> {
    let cfg = SolverConfig {
        t_end: dt,
        dt,
        ..SolverConfig::default()
    };
    let sim = Simulator::new(op, spec, noise, cfg)?;
    let mut state = StepState::new(&sim, key);
    let mut values = u.values().to_vec();
    sim.advance(&mut state, &mut values, t, step)?;
    GridFunction::from_values(op.mesh(), values)
}

/// A recorded trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct PathSample {
    pub seed: u64,
    pub path: u64,
    pub times: Vec<f64>,
    /// Full DOF vectors at `times` (empty unless snapshots are recorded).
    pub snapshots: Vec<Vec<f64>>,
    /// Probe values at `times`, one row per time.
    pub probe_series: Vec<Vec<f64>>,
    pub final_state: GridFunction,
    /// `sup_t ‖u(t)‖_∞` over every step.
    pub sup_norm: f64,
    pub blow_up: bool,
    pub blow_up_step: Option<u64>,
}

/// Everything needed to run paths of one problem at one time step.
#[derive(Debug, Clone)]
pub struct Simulator {
    op: Arc<DiscreteOperator>,
    reaction: ReactionField,
    noise: NoiseSpec,
    cfg: SolverConfig,
    prop: LinearPropagator,
}

struct StepState {
    key: StreamKey,
    scales: Vec<f64>,
    reacted: Vec<f64>,
    gamma: Vec<f64>,
}

impl StepState {
    fn new(sim: &Simulator, key: &StreamKey) -> Self {
        let n = sim.op.n_dofs();
        let mut scales = vec![1.0; sim.op.mesh().n_edges()];
        sim.reaction.draw_scales(key, 0, &mut scales);
        StepState {
            key: *key,
            scales,
            reacted: vec![0.0; n],
            gamma: vec![0.0; n],
        }
    }
}

impl Simulator {
    pub fn new(op: &Arc<DiscreteOperator>, spec: &ReactionSpec, noise: &NoiseSpec, cfg: SolverConfig) -> Result<Self> {
        let mesh = op.mesh();
        cfg.validate(mesh.n_dofs())?;
        noise.validate(mesh.n_edges())?;
        let reaction = ReactionField::new(spec, mesh)?;
        let prop = LinearPropagator::new(op, cfg.dt)?;
        Ok(Simulator {
            op: Arc::clone(op),
            reaction,
            noise: noise.clone(),
            cfg,
            prop,
        })
    }

    pub fn config(&self) -> &SolverConfig {
        &self.cfg
    }

    pub fn operator(&self) -> &Arc<DiscreteOperator> {
        &self.op
    }

    fn advance(&self, st: &mut StepState, u: &mut Vec<f64>, _t: f64, step: u64) -> Result<()> {
        let dt = self.cfg.dt;
        if step > 0 && self.reaction.refreshes_per_step() {
            self.reaction.draw_scales(&st.key, step, &mut st.scales);
        }
        self.reaction
            .tamed_substep(u, dt, self.cfg.taming, &st.scales, &mut st.reacted);
        if self.cfg.scheme == Scheme::DeterministicCn {
            *u = self.prop.crank_nicolson(&st.reacted)?;
            return Ok(());
        }
        if !self.noise.is_silent() {
            let sub = self.cfg.noise_substeps;
            let dw = self
                .noise
                .increment(self.op.mesh(), dt / sub as f64, &st.key, step * sub..(step + 1) * sub)?;
            let at = if self.cfg.scheme == Scheme::SplitStep {
                &st.reacted
            } else {
                &*u
            };
            gamma_into(&self.noise, self.op.mesh(), at, &dw, &mut st.gamma);
            for (r, g) in st.reacted.iter_mut().zip(&st.gamma) {
                *r += g;
            }
        }
        let mut rhs = self.op.mass.mul_vec(&st.reacted);
        self.prop.implicit_from_mass_rhs(&mut rhs)?;
        *u = rhs;
        Ok(())
    }

    /// Runs path `index` from `initial` to `T`.
    pub fn path(&self, index: u64, initial: &GridFunction) -> Result<PathSample> {
        if !initial.conforms_to(self.op.mesh()) {
            return Err(Error::MeshMismatch);
        }
        let n_steps = self.cfg.n_steps()?;
        let key = StreamKey::new(self.cfg.seed, index);
        let mut st = StepState::new(self, &key);
        let mut u = initial.values().to_vec();
        let mut sample = PathSample {
            seed: self.cfg.seed,
            path: index,
            times: Vec::new(),
            snapshots: Vec::new(),
            probe_series: Vec::new(),
            final_state: initial.clone(),
            sup_norm: initial.sup_norm(),
            blow_up: false,
            blow_up_step: None,
        };
        self.record(&mut sample, 0.0, &u);
        for step in 0..n_steps {
            let t = step as f64 * self.cfg.dt;
            let ok = self.advance(&mut st, &mut u, t, step).is_ok() && u.iter().all(|v| v.is_finite());
            if !ok {
                sample.blow_up = true;
                sample.blow_up_step = Some(step);
                sample.sup_norm = f64::INFINITY;
                break;
            }
            let norm = u.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            sample.sup_norm = sample.sup_norm.max(norm);
            let done = step + 1 == n_steps;
            if (step + 1) % self.cfg.output_stride as u64 == 0 || done {
                self.record(&mut sample, (step + 1) as f64 * self.cfg.dt, &u);
            }
        }
        if !sample.blow_up {
            sample.final_state = GridFunction::from_values(self.op.mesh(), u)?;
        }
        Ok(sample)
    }

    fn record(&self, sample: &mut PathSample, t: f64, u: &[f64]) {
        sample.times.push(t);
        sample
            .probe_series
            .push(self.cfg.probes.iter().map(|&p| u[p]).collect());
        if self.cfg.record_snapshots {
            sample.snapshots.push(u.to_vec());
        }
    }
}

/// Runs one path with the configured seed (path index 0).
pub fn simulate_path(
    op: &Arc<DiscreteOperator>,
    spec: &ReactionSpec,
    noise: &NoiseSpec,
    cfg: &SolverConfig,
    initial: &GridFunction,
) -> Result<PathSample> {
    Simulator::new(op, spec, noise, cfg.clone())?.path(0, initial)
}
