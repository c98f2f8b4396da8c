//! The expensive evaluation path: actuate the plant, fit a patch to the
//! scan, resample it, and score the samples against the posed target.

use crate::bspline::{self, SampleSet};
use crate::geom::{RigidTransform, SpatialIndex, TriangleMesh};
use crate::objective::{self, ObjectiveConfig, ObjectiveValue};
use crate::plant::{ActuationVector, Plant, SurfaceObservation};

use super::SolverError;

/// B-spline fit settings for the observation cloud.
#[derive(Clone, Copy, Debug)]
pub struct FitConfig {
    pub ctrl_u: usize,
    pub ctrl_v: usize,
    pub rho: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            ctrl_u: 14,
            ctrl_v: 14,
            rho: 1e-4,
        }
    }
}

/// Everything needed to score an actuation except the plant itself.
pub struct ObjectiveContext {
    pub target: SpatialIndex,
    pub fit: FitConfig,
    pub samples_nu: usize,
    pub samples_nv: usize,
    pub objective: ObjectiveConfig,
}

impl ObjectiveContext {
    pub fn new(
        target: TriangleMesh,
        fit: FitConfig,
        samples_nu: usize,
        samples_nv: usize,
        objective: ObjectiveConfig,
    ) -> Result<Self, SolverError> {
        Ok(Self {
            target: SpatialIndex::build(target)?,
            fit,
            samples_nu,
            samples_nv,
            objective,
        })
    }

    /// One plant evaluation scored under `pose`.
    pub fn evaluate(
        &self,
        plant: &mut Plant,
        a: &ActuationVector,
        pose: &RigidTransform,
    ) -> Result<Evaluation, SolverError> {
        let observation = plant.actuate(a)?;
        let uv = bspline::parameterize_cloud(&observation.cloud, Some(&observation.uv_hint))?;
        let fit = bspline::fit_patch(
            &observation.cloud,
            &uv,
            self.fit.ctrl_u,
            self.fit.ctrl_v,
            self.fit.rho,
        )?;
        let raw_index = SpatialIndex::build(observation.mesh.clone())?;
        let mut samples =
            bspline::make_sample_set(&fit.patch, &raw_index, self.samples_nu, self.samples_nv)?;
        objective::assign_regions(&mut samples, &self.objective.partition)?;
        let value = objective::eval(&samples, &self.target, pose, &self.objective)?;
        Ok(Evaluation {
            actuation: a.clone(),
            value,
            samples,
            observation: Some(observation),
            eval_count: plant.eval_count(),
        })
    }

    /// Re-score an existing evaluation under a different pose. Costs no
    /// plant actuation.
    pub fn rescore(
        &self,
        evaluation: &Evaluation,
        pose: &RigidTransform,
    ) -> Result<ObjectiveValue, SolverError> {
        Ok(objective::eval(
            &evaluation.samples,
            &self.target,
            pose,
            &self.objective,
        )?)
    }
}

/// One scored plant evaluation.
#[derive(Clone, Debug)]
pub struct Evaluation {
    pub actuation: ActuationVector,
    pub value: ObjectiveValue,
    pub samples: SampleSet,
    pub observation: Option<SurfaceObservation>,
    /// Plant evaluation counter right after this actuation.
    pub eval_count: u64,
}

impl Evaluation {
    /// Evaluation with given per-region components and no geometry; used
    /// where solver internals run against synthetic objectives.
    pub fn from_components(a: &ActuationVector, components: Vec<f64>, eval_count: u64) -> Self {
        let total = components.iter().sum();
        Self {
            actuation: a.clone(),
            value: ObjectiveValue {
                total,
                components,
                per_sample: Vec::new(),
            },
            samples: SampleSet::default(),
            observation: None,
            eval_count,
        }
    }

    pub fn total(&self) -> f64 {
        self.value.total
    }

    /// RMS of per-sample distances; zero when no per-sample records exist.
    pub fn rms_mm(&self) -> f64 {
        if self.value.per_sample.is_empty() {
            0.0
        } else {
            self.value.rms_distance()
        }
    }
}

