//! The shape approximation error and its per-region decomposition.
//!
//! `D = sum_j ||p_j - c_j||^2 + w * sum_j ||n(p_j) - n(c_j)||^2` over the
//! sample points, with `c_j` the closest point on the posed target. The
//! same per-sample terms are binned into one component per sub-region;
//! samples in an overlap contribute half to each side, so the components
//! sum back to the total exactly.

use crate::bspline::SampleSet;
use crate::geom::{RigidTransform, SpatialIndex, Vec3};

#[derive(Debug, thiserror::Error)]
pub enum ObjectiveError {
    #[error("sample {index} at uv ({u}, {v}) is covered by no region")]
    UncoveredSample { index: usize, u: f64, v: f64 },
    #[error("sample regions not assigned before evaluation")]
    RegionsNotAssigned,
    #[error("empty sample set")]
    EmptySamples,
}

/// Rectangle in uv space. Containment is half-open so a partition that
/// tiles the unit square assigns boundary samples to exactly one region;
/// edges lying on the far side of the domain are closed.
#[derive(Clone, Copy, Debug)]
pub struct UvRect {
    pub u_min: f64,
    pub u_max: f64,
    pub v_min: f64,
    pub v_max: f64,
}

impl UvRect {
    pub fn contains(&self, u: f64, v: f64) -> bool {
        let in_u = u >= self.u_min && (u < self.u_max || (self.u_max >= 1.0 && u <= 1.0));
        let in_v = v >= self.v_min && (v < self.v_max || (self.v_max >= 1.0 && v <= 1.0));
        in_u && in_v
    }
}

/// The uv-space sub-regions, one per chamber, used to decompose the
/// objective into a square system for the Broyden solver.
#[derive(Clone, Debug)]
pub struct SubRegionPartition {
    pub regions: Vec<UvRect>,
}

impl SubRegionPartition {
    /// Four regions mirroring the chamber layout: chest on top, upper and
    /// lower waist below it, and a centered belly rectangle straddling the
    /// two waist bands.
    pub fn chest_waist_belly() -> Self {
        let third = 1.0 / 3.0;
        Self {
            regions: vec![
                UvRect {
                    u_min: 0.0,
                    u_max: 1.0,
                    v_min: 2.0 * third,
                    v_max: 1.0,
                },
                UvRect {
                    u_min: 0.0,
                    u_max: 1.0,
                    v_min: third,
                    v_max: 2.0 * third,
                },
                UvRect {
                    u_min: 0.0,
                    u_max: 1.0,
                    v_min: 0.0,
                    v_max: third,
                },
                UvRect {
                    u_min: 0.25,
                    u_max: 0.75,
                    v_min: 1.0 / 6.0,
                    v_max: 0.5,
                },
            ],
        }
    }

    /// `k` non-overlapping horizontal bands stacked along v.
    pub fn vertical_bands(k: usize) -> Self {
        assert!(k >= 1);
        let regions = (0..k)
            .map(|i| UvRect {
                u_min: 0.0,
                u_max: 1.0,
                v_min: i as f64 / k as f64,
                v_max: (i + 1) as f64 / k as f64,
            })
            .collect();
        Self { regions }
    }

    /// Default partition for a plant with `k` chambers.
    pub fn default_for_channels(k: usize) -> Self {
        if k == 4 {
            Self::chest_waist_belly()
        } else {
            Self::vertical_bands(k)
        }
    }

    pub fn len(&self) -> usize {
        self.regions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.regions.is_empty()
    }
}

#[derive(Clone, Debug)]
pub struct ObjectiveConfig {
    /// Weight balancing the normal term against the position term.
    pub normal_weight: f64,
    pub partition: SubRegionPartition,
}

impl ObjectiveConfig {
    pub fn new(normal_weight: f64, partition: SubRegionPartition) -> Self {
        assert!(normal_weight >= 0.0);
        Self {
            normal_weight,
            partition,
        }
    }

    pub fn default_for_channels(k: usize) -> Self {
        Self::new(3.0e-3, SubRegionPartition::default_for_channels(k))
    }
}

/// Per-sample error record, the unit behind the error color-maps.
#[derive(Clone, Copy, Debug)]
pub struct SampleError {
    pub uv: [f64; 2],
    pub point: Vec3,
    pub dist_mm: f64,
    /// Normal variation `1 - n(p) . n(c)`, in [0, 2].
    pub eta: f64,
}

#[derive(Clone, Debug)]
pub struct ObjectiveValue {
    /// Total shape approximation error `D`.
    pub total: f64,
    /// Per-region components `d = [D_1 .. D_k]`; they sum to `total`.
    pub components: Vec<f64>,
    pub per_sample: Vec<SampleError>,
}

impl ObjectiveValue {
    pub fn mean_distance(&self) -> f64 {
        self.per_sample.iter().map(|s| s.dist_mm).sum::<f64>() / self.per_sample.len() as f64
    }

    pub fn max_distance(&self) -> f64 {
        self.per_sample
            .iter()
            .map(|s| s.dist_mm)
            .fold(0.0, f64::max)
    }

    pub fn rms_distance(&self) -> f64 {
        let sq: f64 = self.per_sample.iter().map(|s| s.dist_mm * s.dist_mm).sum();
        (sq / self.per_sample.len() as f64).sqrt()
    }
}

/// Assign every sample its covering regions and the matching weight
/// (1 alone, 1/2 in a pairwise overlap, 1/r in general).
pub fn assign_regions(
    samples: &mut SampleSet,
    partition: &SubRegionPartition,
) -> Result<(), ObjectiveError> {
    for j in 0..samples.len() {
        let [u, v] = samples.uv[j];
        let regions: Vec<usize> = partition
            .regions
            .iter()
            .enumerate()
            .filter(|(_, r)| r.contains(u, v))
            .map(|(i, _)| i)
            .collect();
        if regions.is_empty() {
            return Err(ObjectiveError::UncoveredSample { index: j, u, v });
        }
        samples.weights[j] = 1.0 / regions.len() as f64;
        samples.regions[j] = regions;
    }
    Ok(())
}

/// Evaluate the objective of a sample set against the target under `pose`.
///
/// Queries run against the target in its rest frame through the inverse
/// pose, which leaves distances unchanged and rotates the target normals.
/// Accumulation order is fixed, so evaluation is deterministic.
pub fn eval(
    samples: &SampleSet,
    target: &SpatialIndex,
    pose: &RigidTransform,
    cfg: &ObjectiveConfig,
) -> Result<ObjectiveValue, ObjectiveError> {
    if samples.is_empty() {
        return Err(ObjectiveError::EmptySamples);
    }
    let k = cfg.partition.len();
    let inv = pose.invert();
    let mut components = vec![0.0; k];
    let mut per_sample = Vec::with_capacity(samples.len());
    let mut direct_total = 0.0;

    for j in 0..samples.len() {
        if samples.regions[j].is_empty() {
            return Err(ObjectiveError::RegionsNotAssigned);
        }
        let p = samples.points[j];
        let hit = target.closest_point(&inv.apply(&p));
        let posed_normal = pose.apply_normal(&hit.normal);
        let n = samples.normals[j];
        let dist = hit.distance;
        let normal_sq = (n - posed_normal).norm_squared();
        let term = dist * dist + cfg.normal_weight * normal_sq;
        direct_total += term;
        let w = samples.weights[j];
        for &l in &samples.regions[j] {
            components[l] += w * term;
        }
        per_sample.push(SampleError {
            uv: samples.uv[j],
            point: p,
            dist_mm: dist,
            eta: 1.0 - n.dot(&posed_normal),
        });
    }

    let total: f64 = components.iter().sum();
    // The overlap weights exist precisely to make the decomposition exact.
    debug_assert!(
        (total - direct_total).abs() <= 1e-9 * direct_total.max(1e-300),
        "decomposition drifted: {total} vs {direct_total}"
    );
    Ok(ObjectiveValue {
        total,
        components,
        per_sample,
    })
}

#[derive(Clone, Debug)]
pub struct NormalHistogram {
    pub counts: Vec<usize>,
    pub bin_width: f64,
    pub mean: f64,
    pub values: Vec<f64>,
}

/// Histogram of the normal variation `eta = 1 - n(p) . n(c)` over samples.
pub fn normal_histogram(
    samples: &SampleSet,
    target: &SpatialIndex,
    pose: &RigidTransform,
    bins: usize,
) -> Result<NormalHistogram, ObjectiveError> {
    if samples.is_empty() {
        return Err(ObjectiveError::EmptySamples);
    }
    assert!(bins >= 1);
    let inv = pose.invert();
    let values: Vec<f64> = samples
        .points
        .iter()
        .zip(&samples.normals)
        .map(|(p, n)| {
            let hit = target.closest_point(&inv.apply(p));
            1.0 - n.dot(&pose.apply_normal(&hit.normal))
        })
        .collect();
    let bin_width = 2.0 / bins as f64;
    let mut counts = vec![0usize; bins];
    for &eta in &values {
        let bin = ((eta / bin_width) as usize).min(bins - 1);
        counts[bin] += 1;
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    Ok(NormalHistogram {
        counts,
        bin_width,
        mean,
        values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{closest_point_brute_force, TriangleMesh};
    use approx::assert_relative_eq;
    use rand::prelude::*;

    fn flat_target(n: usize, size: f64) -> SpatialIndex {
        let mut vertices = Vec::new();
        for i in 0..n {
            for j in 0..n {
                vertices.push(Vec3::new(
                    size * i as f64 / (n - 1) as f64,
                    size * j as f64 / (n - 1) as f64,
                    0.0,
                ));
            }
        }
        let mut triangles = Vec::new();
        for i in 0..n - 1 {
            for j in 0..n - 1 {
                let a = i * n + j;
                triangles.push([a, a + n, a + 1]);
                triangles.push([a + 1, a + n, a + n + 1]);
            }
        }
        SpatialIndex::build(TriangleMesh::new(vertices, triangles).unwrap()).unwrap()
    }

    fn sample_grid(nu: usize, nv: usize, size: f64, z: f64) -> SampleSet {
        let n = nu * nv;
        let mut set = SampleSet {
            nu,
            nv,
            regions: vec![Vec::new(); n],
            weights: vec![0.0; n],
            ..Default::default()
        };
        for iu in 0..nu {
            for iv in 0..nv {
                let u = iu as f64 / (nu - 1) as f64;
                let v = iv as f64 / (nv - 1) as f64;
                set.uv.push([u, v]);
                set.points.push(Vec3::new(size * u, size * v, z));
                set.normals.push(Vec3::z());
            }
        }
        set
    }

    #[test]
    fn region_assignment_and_weights() {
        let partition = SubRegionPartition::chest_waist_belly();
        let mut samples = sample_grid(13, 25, 100.0, 0.0);
        assign_regions(&mut samples, &partition).unwrap();

        // Chest-only sample.
        let chest = samples
            .uv
            .iter()
            .position(|&[u, v]| u == 0.0 && v > 0.9)
            .unwrap();
        assert_eq!(samples.regions[chest], vec![0]);
        assert_eq!(samples.weights[chest], 1.0);

        // Belly overlap sample: center of the belly rectangle, upper half.
        let belly = samples
            .uv
            .iter()
            .position(|&[u, v]| (u - 0.5).abs() < 0.05 && (v - 0.4).abs() < 0.03)
            .unwrap();
        let mut regions = samples.regions[belly].clone();
        regions.sort();
        assert_eq!(regions, vec![1, 3]);
        assert_eq!(samples.weights[belly], 0.5);

        // Summing weights over all (sample, region) pairs gives n exactly.
        let total: f64 = (0..samples.len())
            .map(|j| samples.weights[j] * samples.regions[j].len() as f64)
            .sum();
        assert_eq!(total, samples.len() as f64);
    }

    #[test]
    fn uncovered_sample_rejected() {
        let partition = SubRegionPartition {
            regions: vec![UvRect {
                u_min: 0.0,
                u_max: 0.5,
                v_min: 0.0,
                v_max: 1.0,
            }],
        };
        let mut samples = sample_grid(5, 5, 10.0, 0.0);
        assert!(matches!(
            assign_regions(&mut samples, &partition),
            Err(ObjectiveError::UncoveredSample { .. })
        ));
    }

    #[test]
    fn on_surface_samples_have_zero_error() {
        let target = flat_target(20, 100.0);
        let cfg = ObjectiveConfig::default_for_channels(4);
        let mut samples = sample_grid(13, 25, 100.0, 0.0);
        assign_regions(&mut samples, &cfg.partition).unwrap();
        let value = eval(&samples, &target, &RigidTransform::identity(), &cfg).unwrap();
        assert!(value.total < 1e-18);
    }

    #[test]
    fn single_sample_distance_squares() {
        let target = flat_target(10, 100.0);
        let cfg = ObjectiveConfig::new(0.7, SubRegionPartition::vertical_bands(1));
        let mut samples = sample_grid(2, 2, 1.0, 2.0);
        samples.points.truncate(1);
        samples.normals.truncate(1);
        samples.uv.truncate(1);
        samples.regions.truncate(1);
        samples.weights.truncate(1);
        samples.uv[0] = [0.5, 0.5];
        samples.points[0] = Vec3::new(50.0, 50.0, 2.0);
        assign_regions(&mut samples, &cfg.partition).unwrap();
        let value = eval(&samples, &target, &RigidTransform::identity(), &cfg).unwrap();
        assert_relative_eq!(value.total, 4.0, epsilon = 1e-12);
    }

    #[test]
    fn matches_brute_force_oracle() {
        let target = flat_target(25, 120.0);
        let cfg = ObjectiveConfig::default_for_channels(4);
        let mut rng = StdRng::seed_from_u64(9);
        let mut samples = sample_grid(13, 25, 120.0, 0.0);
        for p in &mut samples.points {
            *p += Vec3::new(
                rng.random_range(-5.0..5.0),
                rng.random_range(-5.0..5.0),
                rng.random_range(-5.0..5.0),
            );
        }
        assign_regions(&mut samples, &cfg.partition).unwrap();
        let pose = RigidTransform::from_axis_angle(
            Vec3::new(0.1, 0.2, 1.0),
            0.3,
            Vec3::new(4.0, -2.0, 1.0),
        );
        let value = eval(&samples, &target, &pose, &cfg).unwrap();

        let inv = pose.invert();
        let mut direct = 0.0;
        for (p, n) in samples.points.iter().zip(&samples.normals) {
            let hit = closest_point_brute_force(target.mesh(), &inv.apply(p));
            let dn = (n - pose.apply_normal(&hit.normal)).norm_squared();
            direct += hit.distance * hit.distance + cfg.normal_weight * dn;
        }
        assert!((value.total - direct).abs() <= 1e-9 * direct.max(1e-12));
    }

    #[test]
    fn decomposition_sums_to_total() {
        let target = flat_target(15, 80.0);
        let cfg = ObjectiveConfig::default_for_channels(4);
        let mut rng = StdRng::seed_from_u64(10);
        let mut samples = sample_grid(13, 25, 80.0, 0.0);
        for p in &mut samples.points {
            p.z += rng.random_range(-3.0..3.0);
        }
        assign_regions(&mut samples, &cfg.partition).unwrap();
        let value = eval(&samples, &target, &RigidTransform::identity(), &cfg).unwrap();
        let sum: f64 = value.components.iter().sum();
        assert!((value.total - sum).abs() <= 1e-9 * value.total);
        assert!(value.total > 0.0);
    }

    #[test]
    fn rigid_invariance_of_objective() {
        let target = flat_target(15, 80.0);
        let cfg = ObjectiveConfig::default_for_channels(4);
        let mut rng = StdRng::seed_from_u64(11);
        let mut samples = sample_grid(13, 25, 80.0, 0.0);
        for p in &mut samples.points {
            p.z += rng.random_range(-3.0..3.0);
        }
        assign_regions(&mut samples, &cfg.partition).unwrap();
        let pose = RigidTransform::identity();
        let before = eval(&samples, &target, &pose, &cfg).unwrap();

        let motion = RigidTransform::from_axis_angle(
            Vec3::new(0.4, -0.2, 0.9),
            0.8,
            Vec3::new(10.0, 5.0, -3.0),
        );
        let mut moved = samples.clone();
        for p in &mut moved.points {
            *p = motion.apply(p);
        }
        for n in &mut moved.normals {
            *n = motion.apply_normal(n);
        }
        let after = eval(&moved, &target, &motion.compose(&pose), &cfg).unwrap();
        assert!((before.total - after.total).abs() <= 1e-9 * before.total.max(1.0));
    }

    #[test]
    fn zero_weight_reduces_to_position_objective() {
        let target = flat_target(15, 80.0);
        let partition = SubRegionPartition::chest_waist_belly();
        let mut rng = StdRng::seed_from_u64(12);
        let mut samples = sample_grid(13, 25, 80.0, 0.0);
        for (p, n) in samples.points.iter_mut().zip(&mut samples.normals) {
            p.z += rng.random_range(-3.0..3.0);
            *n = Vec3::new(rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3), 1.0)
                .normalize();
        }
        assign_regions(&mut samples, &partition).unwrap();
        let with = eval(
            &samples,
            &target,
            &RigidTransform::identity(),
            &ObjectiveConfig::new(0.0, partition.clone()),
        )
        .unwrap();
        let positions: f64 = with
            .per_sample
            .iter()
            .map(|s| s.dist_mm * s.dist_mm)
            .sum();
        assert!((with.total - positions).abs() <= 1e-9 * positions.max(1e-12));
    }

    #[test]
    fn histogram_of_identical_normals_masses_at_zero() {
        let target = flat_target(10, 50.0);
        let samples = sample_grid(5, 5, 50.0, 0.0);
        let hist =
            normal_histogram(&samples, &target, &RigidTransform::identity(), 10).unwrap();
        assert_eq!(hist.counts[0], samples.len());
        assert!(hist.mean.abs() < 1e-12);
    }

    #[test]
    fn histogram_of_orthogonal_normals() {
        let target = flat_target(10, 50.0);
        let mut samples = sample_grid(5, 5, 50.0, 0.0);
        for n in &mut samples.normals {
            *n = Vec3::x();
        }
        let hist =
            normal_histogram(&samples, &target, &RigidTransform::identity(), 4).unwrap();
        assert!(hist.values.iter().all(|&eta| (eta - 1.0).abs() < 1e-12));
        assert_relative_eq!(hist.mean, 1.0, epsilon = 1e-12);
    }
}
