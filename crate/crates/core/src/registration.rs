//! Pose estimation of the target mesh against the current sample set.
//!
//! The target is the moving body: each iteration matches every sample to its
//! closest point on the posed target, then solves in closed form for the
//! target pose that best explains the matches. Only point positions enter
//! the solve; normals are left out here.

use crate::bspline::SampleSet;
use crate::geom::{Mat3, RigidTransform, SpatialIndex, Vec3};

#[derive(Debug, thiserror::Error)]
pub enum RegistrationError {
    #[error("degenerate correspondence set")]
    DegenerateCorrespondences,
    #[error("source and destination lengths differ ({source_len} vs {dest_len})")]
    LengthMismatch { source_len: usize, dest_len: usize },
    #[error("no samples to register against")]
    EmptySamples,
}

#[derive(Clone, Copy, Debug)]
pub struct IcpConfig {
    pub max_iterations: usize,
    /// Translation update below this (mm) counts as trivial.
    pub update_tolerance_mm: f64,
    /// Rotation update below this (radians) counts as trivial.
    pub update_tolerance_rad: f64,
    /// Fraction of the worst correspondences discarded each iteration.
    pub trim_fraction: f64,
}

impl Default for IcpConfig {
    fn default() -> Self {
        Self {
            max_iterations: 50,
            update_tolerance_mm: 1e-4,
            update_tolerance_rad: 1e-6,
            trim_fraction: 0.0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct IcpResult {
    /// Pose of the target.
    pub transform: RigidTransform,
    pub iterations: usize,
    /// Root-mean-square sample-to-target distance at the final pose (mm).
    pub final_rms: f64,
    /// True when the last pose update fell below both tolerances.
    pub converged: bool,
}

/// Closed-form least-squares rigid motion mapping `source` onto `dest`
/// (centroids plus SVD of the cross-covariance, reflection-corrected).
pub fn best_rigid(source: &[Vec3], dest: &[Vec3]) -> Result<RigidTransform, RegistrationError> {
    if source.len() != dest.len() {
        return Err(RegistrationError::LengthMismatch {
            source_len: source.len(),
            dest_len: dest.len(),
        });
    }
    if source.len() < 3 {
        return Err(RegistrationError::DegenerateCorrespondences);
    }
    let n = source.len() as f64;
    let sc: Vec3 = source.iter().sum::<Vec3>() / n;
    let dc: Vec3 = dest.iter().sum::<Vec3>() / n;

    let mut cross = Mat3::zeros();
    for (s, d) in source.iter().zip(dest) {
        cross += (d - dc) * (s - sc).transpose();
    }
    let svd = cross.svd(true, true);
    let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    // Rank below 2 leaves a rotation axis unconstrained.
    if svd.singular_values[1] <= 1e-12 * svd.singular_values[0].max(1e-300) {
        return Err(RegistrationError::DegenerateCorrespondences);
    }
    let mut rotation = u * v_t;
    if rotation.determinant() < 0.0 {
        let flip = Mat3::from_diagonal(&Vec3::new(1.0, 1.0, -1.0));
        rotation = u * flip * v_t;
    }
    let translation = dc - rotation * sc;
    Ok(RigidTransform {
        rotation,
        translation,
    })
}

/// ICP pose estimation of the target against a static sample set.
///
/// Correspondences are searched on the target in its rest frame by pulling
/// each sample through the inverse of the current pose, so the solve always
/// produces an absolute pose rather than an increment. Iteration stops at a
/// trivial update or at the iteration cap; the per-iteration RMS is
/// non-increasing because each solve is exact for its correspondences.
pub fn icp_pose(
    samples: &SampleSet,
    target: &SpatialIndex,
    init: RigidTransform,
    cfg: &IcpConfig,
) -> Result<IcpResult, RegistrationError> {
    if samples.is_empty() {
        return Err(RegistrationError::EmptySamples);
    }
    assert!(cfg.max_iterations >= 1);
    assert!((0.0..0.5).contains(&cfg.trim_fraction));

    let mut pose = init;
    let mut converged = false;
    let mut final_rms = rms_at_pose(samples, target, &pose);
    let mut iterations = 0;

    for _ in 0..cfg.max_iterations {
        iterations += 1;
        let inv = pose.invert();
        let mut pairs: Vec<(f64, Vec3, Vec3)> = samples
            .points
            .iter()
            .map(|p| {
                let local = inv.apply(p);
                let hit = target.closest_point(&local);
                (hit.distance, hit.point, *p)
            })
            .collect();
        if cfg.trim_fraction > 0.0 {
            pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
            let keep = ((1.0 - cfg.trim_fraction) * pairs.len() as f64).ceil() as usize;
            pairs.truncate(keep.max(3));
        }
        let rest_points: Vec<Vec3> = pairs.iter().map(|p| p.1).collect();
        let sample_points: Vec<Vec3> = pairs.iter().map(|p| p.2).collect();
        let new_pose = best_rigid(&rest_points, &sample_points)?;

        let delta = new_pose.compose(&pose.invert());
        let dt = (new_pose.translation - pose.translation).norm();
        let dr = delta.rotation_angle();
        pose = new_pose;
        final_rms = rms_from_pairs(&pairs, &pose);
        if dt < cfg.update_tolerance_mm && dr < cfg.update_tolerance_rad {
            converged = true;
            break;
        }
    }

    Ok(IcpResult {
        transform: pose,
        iterations,
        final_rms,
        converged,
    })
}

fn rms_from_pairs(pairs: &[(f64, Vec3, Vec3)], pose: &RigidTransform) -> f64 {
    let sq: f64 = pairs
        .iter()
        .map(|(_, rest, sample)| (sample - pose.apply(rest)).norm_squared())
        .sum();
    (sq / pairs.len() as f64).sqrt()
}

/// RMS of sample-to-target distances under a given pose.
pub fn rms_at_pose(samples: &SampleSet, target: &SpatialIndex, pose: &RigidTransform) -> f64 {
    let inv = pose.invert();
    let sq: f64 = samples
        .points
        .iter()
        .map(|p| {
            let hit = target.closest_point(&inv.apply(p));
            hit.distance * hit.distance
        })
        .sum();
    (sq / samples.len() as f64).sqrt()
}
