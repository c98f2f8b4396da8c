//! The hybrid deformation controller: finite-difference gradient descent
//! with a shrink/expand 1D search and bound clamping, accelerated by
//! Broyden inverse-Jacobian steps, with pose estimation in the loop.
//!
//! One outer iteration runs: pose estimation (kept only when it does not
//! increase the objective), one gradient step from k shared forward probes,
//! the relative-change termination test, then as many Broyden proposals as
//! keep the objective falling, each costing a single plant evaluation. A
//! proposal that raises the objective is rolled back and the solver drops
//! back to gradient descent, so the accepted objective sequence never
//! increases.

mod broyden;
mod fd;
mod line_search;
mod pipeline;

pub use broyden::{broyden_inverse_update, BroydenState};
pub use fd::{fd_estimate, jacobian_fd, numerical_gradient, FdEstimate, FdProbeRecord};
pub use line_search::{
    clamp_step, line_search, project_gradient, LineSearchConfig, LineSearchOutcome, LsProbe,
};
pub use pipeline::{Evaluation, FitConfig, ObjectiveContext};

use crate::bspline::{BsplineError, SampleSet};
use crate::geom::{GeomError, RigidTransform};
use crate::objective::{ObjectiveError, ObjectiveValue, SampleError};
use crate::plant::{ActuationVector, Plant, PlantError, SurfaceObservation};
use crate::registration::{self, IcpConfig, RegistrationError};

#[derive(Debug, thiserror::Error)]
pub enum SolverError {
    #[error(transparent)]
    Plant(#[from] PlantError),
    #[error(transparent)]
    Geom(#[from] GeomError),
    #[error(transparent)]
    Bspline(#[from] BsplineError),
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
    #[error(transparent)]
    Registration(#[from] RegistrationError),
    #[error("cannot probe channel {channel}: no room below the upper bound")]
    CannotProbeChannel { channel: usize },
    #[error("singular Jacobian")]
    SingularJacobian,
    #[error("update breakdown")]
    UpdateBreakdown,
    #[error("start actuation outside bounds")]
    StartOutOfBounds,
    #[error("partition has {regions} regions but plant has {channels} channels")]
    PartitionMismatch { regions: usize, channels: usize },
}

#[derive(Clone, Debug)]
pub struct SolverConfig {
    /// Forward-difference probe step per channel (kPa).
    pub fd_delta: f64,
    /// Relative objective change below which iteration stops.
    pub rel_tol: f64,
    /// Cap on accepted steps (gradient plus Broyden).
    pub i_max: usize,
    /// Damping of the Broyden root-finding step.
    pub broyden_lambda: f64,
    /// Cap on consecutive Broyden steps per outer iteration.
    pub broyden_step_cap: usize,
    pub broyden_enabled: bool,
    pub line_search: LineSearchConfig,
    pub icp_enabled: bool,
    /// Run pose estimation every this many outer iterations.
    pub icp_period: usize,
    pub icp: IcpConfig,
    /// Simulated cost per plant actuation (ms); drives the trace clock so
    /// reruns are bit-identical.
    pub actuation_ms: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            fd_delta: 0.25,
            rel_tol: 0.01,
            i_max: 25,
            broyden_lambda: 0.1,
            broyden_step_cap: 10,
            broyden_enabled: true,
            line_search: LineSearchConfig::default(),
            icp_enabled: true,
            icp_period: 1,
            icp: IcpConfig::default(),
            actuation_ms: 12_500.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StepKind {
    FdProbe,
    GdsStep,
    LsProbe,
    BroydenStep,
    Icp,
    Rollback,
}

impl StepKind {
    pub fn as_str(self) -> &'static str {
        match self {
            StepKind::FdProbe => "FD_PROBE",
            StepKind::GdsStep => "GDS_STEP",
            StepKind::LsProbe => "LS_PROBE",
            StepKind::BroydenStep => "BROYDEN_STEP",
            StepKind::Icp => "ICP",
            StepKind::Rollback => "ROLLBACK",
        }
    }
}

#[derive(Clone, Debug)]
pub struct TraceRow {
    pub step_index: usize,
    pub kind: StepKind,
    pub actuation: Vec<f64>,
    pub total: f64,
    pub components: Vec<f64>,
    pub rms_mm: f64,
    pub pose: RigidTransform,
    pub eval_count: u64,
    /// Simulated elapsed time: evaluations times the per-actuation cost.
    pub sim_ms: f64,
}

#[derive(Clone, Debug, Default)]
pub struct SolverTrace {
    pub rows: Vec<TraceRow>,
}

impl SolverTrace {
    fn push(
        &mut self,
        step_index: usize,
        kind: StepKind,
        evaluation: &Evaluation,
        pose: &RigidTransform,
        actuation_ms: f64,
    ) {
        self.rows.push(TraceRow {
            step_index,
            kind,
            actuation: evaluation.actuation.0.clone(),
            total: evaluation.total(),
            components: evaluation.value.components.clone(),
            rms_mm: evaluation.rms_mm(),
            pose: *pose,
            eval_count: evaluation.eval_count,
            sim_ms: evaluation.eval_count as f64 * actuation_ms,
        });
    }

    /// Accepted steps: gradient rows plus Broyden rows that were not rolled
    /// back. Their objective sequence is non-increasing.
    pub fn accepted_rows(&self) -> Vec<&TraceRow> {
        let mut out = Vec::new();
        for (i, row) in self.rows.iter().enumerate() {
            match row.kind {
                StepKind::GdsStep => out.push(row),
                StepKind::BroydenStep => {
                    let rolled_back = self
                        .rows
                        .get(i + 1)
                        .is_some_and(|next| next.kind == StepKind::Rollback);
                    if !rolled_back {
                        out.push(row);
                    }
                }
                _ => {}
            }
        }
        out
    }

    pub fn total_evals(&self) -> u64 {
        self.rows.last().map_or(0, |r| r.eval_count)
    }

    /// Evaluations consumed up to the first accepted row whose objective is
    /// at or below `level`; `None` if the trace never reaches it.
    pub fn evals_to_reach(&self, level: f64) -> Option<u64> {
        self.accepted_rows()
            .iter()
            .find(|r| r.total <= level)
            .map(|r| r.eval_count)
    }

    pub fn to_csv_string(&self) -> String {
        let k = self.rows.first().map_or(0, |r| r.actuation.len());
        let mut csv = String::from("step,kind");
        for i in 1..=k {
            csv.push_str(&format!(",P{i}"));
        }
        csv.push_str(",D");
        for i in 1..=k {
            csv.push_str(&format!(",d{i}"));
        }
        csv.push_str(",rms_mm,evals,ms\n");
        for row in &self.rows {
            csv.push_str(&format!("{},{}", row.step_index, row.kind.as_str()));
            for p in &row.actuation {
                csv.push_str(&format!(",{p}"));
            }
            csv.push_str(&format!(",{}", row.total));
            for d in &row.components {
                csv.push_str(&format!(",{d}"));
            }
            csv.push_str(&format!(",{},{},{}\n", row.rms_mm, row.eval_count, row.sim_ms));
        }
        csv
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Termination {
    RelTol,
    IMax,
}

impl Termination {
    pub fn as_str(self) -> &'static str {
        match self {
            Termination::RelTol => "REL_TOL",
            Termination::IMax => "I_MAX",
        }
    }
}

/// Per-accepted-step snapshot of the per-sample errors, for the error maps.
#[derive(Clone, Debug)]
pub struct StepSnapshot {
    pub step_index: usize,
    pub actuation: ActuationVector,
    pub per_sample: Vec<SampleError>,
}

#[derive(Debug)]
pub struct SolveResult {
    pub a_opt: ActuationVector,
    pub pose: RigidTransform,
    pub final_value: ObjectiveValue,
    pub final_samples: SampleSet,
    pub final_observation: Option<SurfaceObservation>,
    pub trace: SolverTrace,
    pub terminated_by: Termination,
    pub eval_count: u64,
    /// Largest relative secant defect seen across all Broyden updates.
    pub max_secant_residual: f64,
    pub snapshots: Vec<StepSnapshot>,
}

/// Objective totals below this count as converged outright; the relative
/// test in the hybrid condition divides by the new value.
const ABSOLUTE_FLOOR: f64 = 1e-12;

pub fn hybrid_solve(
    plant: &mut Plant,
    ctx: &ObjectiveContext,
    a0: &ActuationVector,
    cfg: &SolverConfig,
) -> Result<SolveResult, SolverError> {
    if ctx.objective.partition.len() != plant.channels() {
        return Err(SolverError::PartitionMismatch {
            regions: ctx.objective.partition.len(),
            channels: plant.channels(),
        });
    }
    if !plant.bounds().contains(a0) {
        return Err(SolverError::StartOutOfBounds);
    }
    let bounds = plant.bounds().clone();
    let mut trace = SolverTrace::default();
    let mut snapshots = Vec::new();
    let mut pose = RigidTransform::identity();
    let mut max_secant: f64 = 0.0;
    let mut terminated_by = Termination::IMax;

    let mut base = ctx.evaluate(plant, a0, &pose)?;
    let mut step_index = 0usize;
    trace.push(step_index, StepKind::GdsStep, &base, &pose, cfg.actuation_ms);
    snapshot(&mut snapshots, step_index, &base);

    let mut outer = 0usize;
    while step_index < cfg.i_max {
        if cfg.icp_enabled && outer % cfg.icp_period.max(1) == 0 {
            let icp = registration::icp_pose(&base.samples, &ctx.target, pose, &cfg.icp)?;
            let rescored = ctx.rescore(&base, &icp.transform)?;
            // Keep the new pose only when the full objective does not
            // increase; the pose solve ignores the normal term, and the
            // accepted-step sequence must stay monotone.
            if rescored.total <= base.value.total {
                pose = icp.transform;
                base.value = rescored;
            }
            trace.push(step_index, StepKind::Icp, &base, &pose, cfg.actuation_ms);
        }
        outer += 1;

        let fd = {
            let mut evalf = |a: &ActuationVector| ctx.evaluate(plant, a, &pose);
            fd_estimate(&mut evalf, &bounds, &base, cfg.fd_delta, true)?
        };
        for rec in &fd.probes {
            trace.push(
                step_index,
                StepKind::FdProbe,
                &rec.evaluation,
                &pose,
                cfg.actuation_ms,
            );
        }

        let g = project_gradient(&base.actuation, &fd.gradient, &bounds);
        let d_before = base.total();
        let prev_actuation = base.actuation.clone();
        let prev_components = base.value.components.clone();

        if g.iter().any(|&x| x != 0.0) {
            let tau_max = clamp_step(&base.actuation, &g, &bounds);
            let ls = {
                let mut evalf = |a: &ActuationVector| ctx.evaluate(plant, a, &pose);
                line_search(&mut evalf, &base, &g, tau_max, &bounds, &cfg.line_search)?
            };
            for probe in &ls.probes {
                trace.push(
                    step_index,
                    StepKind::LsProbe,
                    &probe.evaluation,
                    &pose,
                    cfg.actuation_ms,
                );
            }
            if let Some(idx) = ls.accepted {
                let mut probes = ls.probes;
                base = probes.swap_remove(idx).evaluation;
            }
        }
        step_index += 1;
        trace.push(step_index, StepKind::GdsStep, &base, &pose, cfg.actuation_ms);
        snapshot(&mut snapshots, step_index, &base);

        let d_after = base.total();
        if d_after <= ABSOLUTE_FLOOR || (d_before - d_after).abs() / d_after <= cfg.rel_tol {
            terminated_by = Termination::RelTol;
            break;
        }

        if !cfg.broyden_enabled || step_index >= cfg.i_max {
            continue;
        }
        let mut state = match BroydenState::from_jacobian(&fd.jacobian, cfg.broyden_lambda) {
            Ok(state) => state,
            Err(SolverError::SingularJacobian) => continue,
            Err(e) => return Err(e),
        };
        let mut prev_a = prev_actuation;
        let mut prev_d = prev_components;
        let mut inner = 0usize;
        while inner < cfg.broyden_step_cap && step_index < cfg.i_max {
            let da: Vec<f64> = base
                .actuation
                .0
                .iter()
                .zip(&prev_a.0)
                .map(|(n, o)| n - o)
                .collect();
            let dd: Vec<f64> = base
                .value
                .components
                .iter()
                .zip(&prev_d)
                .map(|(n, o)| n - o)
                .collect();
            match state.update(&da, &dd) {
                Ok(()) => max_secant = max_secant.max(state.secant_residual(&da, &dd)),
                Err(SolverError::UpdateBreakdown) => break,
                Err(e) => return Err(e),
            }
            let proposal = state.propose(&base.actuation, &base.value.components, &bounds);
            if proposal == base.actuation {
                break;
            }
            let candidate = ctx.evaluate(plant, &proposal, &pose)?;
            inner += 1;
            trace.push(
                step_index + 1,
                StepKind::BroydenStep,
                &candidate,
                &pose,
                cfg.actuation_ms,
            );
            if candidate.total() > base.total() {
                trace.push(step_index, StepKind::Rollback, &base, &pose, cfg.actuation_ms);
                break;
            }
            prev_a = base.actuation.clone();
            prev_d = base.value.components.clone();
            base = candidate;
            step_index += 1;
            snapshot(&mut snapshots, step_index, &base);
        }
    }

    let eval_count = trace.total_evals();
    Ok(SolveResult {
        a_opt: base.actuation.clone(),
        pose,
        final_value: base.value.clone(),
        final_samples: base.samples.clone(),
        final_observation: base.observation,
        trace,
        terminated_by,
        eval_count,
        max_secant_residual: max_secant,
        snapshots,
    })
}

/// Conventional fixed-step controller: every iteration probes all channels,
/// then moves each channel one fixed increment against its gradient sign.
/// Pose estimation runs once up front (when enabled) and stays frozen. The
/// run ends at the step cap, or at the first move that fails to improve,
/// since with a deterministic plant retrying the identical move is futile.
pub fn fixed_step_solve(
    plant: &mut Plant,
    ctx: &ObjectiveContext,
    a0: &ActuationVector,
    step_kpa: f64,
    cfg: &SolverConfig,
) -> Result<SolveResult, SolverError> {
    assert!(step_kpa > 0.0);
    if !plant.bounds().contains(a0) {
        return Err(SolverError::StartOutOfBounds);
    }
    let bounds = plant.bounds().clone();
    let mut trace = SolverTrace::default();
    let mut snapshots = Vec::new();
    let mut pose = RigidTransform::identity();
    let mut terminated_by = Termination::IMax;

    let mut base = ctx.evaluate(plant, a0, &pose)?;
    let mut step_index = 0usize;
    trace.push(step_index, StepKind::GdsStep, &base, &pose, cfg.actuation_ms);
    snapshot(&mut snapshots, step_index, &base);

    if cfg.icp_enabled {
        let icp = registration::icp_pose(&base.samples, &ctx.target, pose, &cfg.icp)?;
        let rescored = ctx.rescore(&base, &icp.transform)?;
        if rescored.total <= base.value.total {
            pose = icp.transform;
            base.value = rescored;
        }
        trace.push(step_index, StepKind::Icp, &base, &pose, cfg.actuation_ms);
    }

    while step_index < cfg.i_max {
        let fd = {
            let mut evalf = |a: &ActuationVector| ctx.evaluate(plant, a, &pose);
            fd_estimate(&mut evalf, &bounds, &base, cfg.fd_delta, true)?
        };
        for rec in &fd.probes {
            trace.push(
                step_index,
                StepKind::FdProbe,
                &rec.evaluation,
                &pose,
                cfg.actuation_ms,
            );
        }
        let moved = ActuationVector(
            base.actuation
                .0
                .iter()
                .zip(&fd.gradient)
                .map(|(&p, &gi)| p - gi.signum() * step_kpa * f64::from(gi != 0.0))
                .collect(),
        );
        let moved = bounds.clamp(&moved);
        if moved == base.actuation {
            terminated_by = Termination::RelTol;
            break;
        }
        let candidate = ctx.evaluate(plant, &moved, &pose)?;
        trace.push(
            step_index,
            StepKind::LsProbe,
            &candidate,
            &pose,
            cfg.actuation_ms,
        );
        if candidate.total() >= base.total() {
            trace.push(step_index, StepKind::Rollback, &base, &pose, cfg.actuation_ms);
            terminated_by = Termination::RelTol;
            break;
        }
        step_index += 1;
        base = candidate;
        trace.push(step_index, StepKind::GdsStep, &base, &pose, cfg.actuation_ms);
        snapshot(&mut snapshots, step_index, &base);
    }

    let eval_count = trace.total_evals();
    Ok(SolveResult {
        a_opt: base.actuation.clone(),
        pose,
        final_value: base.value.clone(),
        final_samples: base.samples.clone(),
        final_observation: base.observation,
        trace,
        terminated_by,
        eval_count,
        max_secant_residual: 0.0,
        snapshots,
    })
}

fn snapshot(snapshots: &mut Vec<StepSnapshot>, step_index: usize, base: &Evaluation) {
    snapshots.push(StepSnapshot {
        step_index,
        actuation: base.actuation.clone(),
        per_sample: base.value.per_sample.clone(),
    });
}
