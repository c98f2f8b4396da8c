//! Least-squares patch fitting and uv-grid resampling.

use nalgebra::{DMatrix, SymmetricEigen};

use super::basis::{basis_funs, find_span};
use super::{BSplinePatch, BsplineError, DEGREE};
use crate::geom::{SpatialIndex, Vec3};

/// Fitted patch plus the root-mean-square residual of the data points
/// against the fitted surface (mm).
pub struct FitResult {
    pub patch: BSplinePatch,
    pub rms: f64,
}

/// Representative surface samples: points snapped onto the raw observation
/// mesh, normals taken from the fitted patch, and the uv grid they came
/// from. `regions` and `weights` stay empty until region assignment.
#[derive(Clone, Debug, Default)]
pub struct SampleSet {
    pub points: Vec<Vec3>,
    pub normals: Vec<Vec3>,
    pub uv: Vec<[f64; 2]>,
    pub regions: Vec<Vec<usize>>,
    pub weights: Vec<f64>,
    pub nu: usize,
    pub nv: usize,
}

impl SampleSet {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Indices of samples belonging to any of the given regions.
    pub fn indices_in_regions(&self, region_ids: &[usize]) -> Vec<usize> {
        (0..self.len())
            .filter(|&j| self.regions[j].iter().any(|r| region_ids.contains(r)))
            .collect()
    }
}

/// Parameterize a cloud for fitting. A plant-provided uv grid passes through
/// unchanged; otherwise the cloud is projected onto its two principal axes
/// and min-max normalized to the unit square.
pub fn parameterize_cloud(
    cloud: &[Vec3],
    hint: Option<&[[f64; 2]]>,
) -> Result<Vec<[f64; 2]>, BsplineError> {
    if let Some(uv) = hint {
        if uv.len() != cloud.len() {
            return Err(BsplineError::MismatchedUv {
                uv: uv.len(),
                cloud: cloud.len(),
            });
        }
        return Ok(uv.to_vec());
    }
    if cloud.len() < 16 {
        return Err(BsplineError::TooFewPoints {
            needed: 16,
            got: cloud.len(),
        });
    }

    let centroid: Vec3 = cloud.iter().sum::<Vec3>() / cloud.len() as f64;
    let mut cov = nalgebra::Matrix3::<f64>::zeros();
    for p in cloud {
        let d = p - centroid;
        cov += d * d.transpose();
    }
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    if eig.eigenvalues[order[1]] <= 1e-12 * eig.eigenvalues[order[0]].max(1e-300) {
        return Err(BsplineError::DegenerateParameterization);
    }
    let axis = |k: usize| -> Vec3 {
        let col: Vec3 = eig.eigenvectors.column(order[k]).into();
        // Canonical sign: largest-magnitude component positive, so the
        // frame does not flip between eigen solver runs.
        let dominant = (0..3).max_by(|&i, &j| col[i].abs().total_cmp(&col[j].abs())).unwrap();
        if col[dominant] < 0.0 {
            -col
        } else {
            col
        }
    };
    let e1 = axis(0);
    let e2 = axis(1);

    let coords: Vec<[f64; 2]> = cloud
        .iter()
        .map(|p| {
            let d = p - centroid;
            [d.dot(&e1), d.dot(&e2)]
        })
        .collect();
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for c in &coords {
        for k in 0..2 {
            lo[k] = lo[k].min(c[k]);
            hi[k] = hi[k].max(c[k]);
        }
    }
    if hi[0] - lo[0] <= 0.0 || hi[1] - lo[1] <= 0.0 {
        return Err(BsplineError::DegenerateParameterization);
    }
    Ok(coords
        .into_iter()
        .map(|c| {
            [
                (c[0] - lo[0]) / (hi[0] - lo[0]),
                (c[1] - lo[1]) / (hi[1] - lo[1]),
            ]
        })
        .collect())
}

/// Least-squares fit of a clamped cubic patch to `(uv, cloud)` pairs.
///
/// `rho` weights a Tikhonov penalty on the second divided differences of the
/// control net (taken against the Greville abscissae, so planes fit exactly
/// for any `rho`). The penalty is scaled by the point count per constraint,
/// which keeps its relative strength independent of observation density.
pub fn fit_patch(
    cloud: &[Vec3],
    uv: &[[f64; 2]],
    ctrl_u: usize,
    ctrl_v: usize,
    rho: f64,
) -> Result<FitResult, BsplineError> {
    if ctrl_u < DEGREE + 1 || ctrl_v < DEGREE + 1 {
        return Err(BsplineError::ControlGridTooSmall { ctrl_u, ctrl_v });
    }
    if uv.len() != cloud.len() {
        return Err(BsplineError::MismatchedUv {
            uv: uv.len(),
            cloud: cloud.len(),
        });
    }
    let ncp = ctrl_u * ctrl_v;
    if cloud.len() < ncp {
        return Err(BsplineError::UnderdeterminedFit);
    }
    for &[u, v] in uv {
        if !(0.0..=1.0).contains(&u) || !(0.0..=1.0).contains(&v) {
            return Err(BsplineError::OutOfDomain { u, v });
        }
    }

    let template = BSplinePatch::from_control_grid(
        ctrl_u,
        ctrl_v,
        vec![Vec3::zeros(); ncp],
    )?;
    let knots_u = template.knots_u().to_vec();
    let knots_v = template.knots_v().to_vec();

    let mut normal = DMatrix::<f64>::zeros(ncp, ncp);
    let mut rhs = DMatrix::<f64>::zeros(ncp, 3);
    let mut weights = [(0usize, 0.0f64); (DEGREE + 1) * (DEGREE + 1)];
    for (p, &[u, v]) in cloud.iter().zip(uv) {
        let su = find_span(&knots_u, ctrl_u, u);
        let sv = find_span(&knots_v, ctrl_v, v);
        let nu = basis_funs(&knots_u, su, u);
        let nv = basis_funs(&knots_v, sv, v);
        let mut k = 0;
        for (a, wu) in nu.iter().enumerate() {
            for (b, wv) in nv.iter().enumerate() {
                let idx = (su - DEGREE + a) * ctrl_v + (sv - DEGREE + b);
                weights[k] = (idx, wu * wv);
                k += 1;
            }
        }
        for &(i, wi) in &weights {
            for &(j, wj) in &weights {
                normal[(i, j)] += wi * wj;
            }
            rhs[(i, 0)] += wi * p.x;
            rhs[(i, 1)] += wi * p.y;
            rhs[(i, 2)] += wi * p.z;
        }
    }

    if rho > 0.0 {
        add_curvature_penalty(&mut normal, &template, rho);
    }

    let chol = normal
        .cholesky()
        .ok_or(BsplineError::UnderdeterminedFit)?;
    let solution = chol.solve(&rhs);
    let control_points: Vec<Vec3> = (0..ncp)
        .map(|i| Vec3::new(solution[(i, 0)], solution[(i, 1)], solution[(i, 2)]))
        .collect();

    let mut patch = BSplinePatch::from_control_grid(ctrl_u, ctrl_v, control_points)?;
    patch.set_normal_sign(orientation_sign(&patch));

    let mut sq_sum = 0.0;
    for (p, &[u, v]) in cloud.iter().zip(uv) {
        sq_sum += (patch.evaluate(u, v)? - p).norm_squared();
    }
    let rms = (sq_sum / cloud.len() as f64).sqrt();
    Ok(FitResult { patch, rms })
}

/// Orientation chosen so the raw (unsigned) normal at the patch center has
/// a positive z component, pointing away from the mannequin core.
pub(crate) fn orientation_sign(patch: &BSplinePatch) -> f64 {
    match patch.evaluate_with_partials(0.5, 0.5) {
        Ok((_, du, dv)) => {
            if du.cross(&dv).z < 0.0 {
                -1.0
            } else {
                1.0
            }
        }
        Err(_) => 1.0,
    }
}

/// Second divided differences of the control net along both grid directions,
/// accumulated as `rho_eff * L^T L` into the normal matrix. `rho` is scaled
/// by the trace ratio of the two matrices, so it measures the penalty's
/// relative contribution regardless of point count or grid size.
fn add_curvature_penalty(normal: &mut DMatrix<f64>, template: &BSplinePatch, rho: f64) {
    let (ctrl_u, ctrl_v) = (template.ctrl_u(), template.ctrl_v());
    let gu = template.greville_u();
    let gv = template.greville_v();

    let ncp = ctrl_u * ctrl_v;
    let mut penalty = DMatrix::<f64>::zeros(ncp, ncp);
    let mut add_row = |idx: [usize; 3], coeff: [f64; 3]| {
        for a in 0..3 {
            for b in 0..3 {
                penalty[(idx[a], idx[b])] += coeff[a] * coeff[b];
            }
        }
    };

    let stencil = |g: &[f64], i: usize| {
        let h1 = g[i] - g[i - 1];
        let h2 = g[i + 1] - g[i];
        let c_prev = 2.0 / ((h1 + h2) * h1);
        let c_next = 2.0 / ((h1 + h2) * h2);
        [c_prev, -(c_prev + c_next), c_next]
    };

    for iv in 0..ctrl_v {
        for iu in 1..ctrl_u - 1 {
            add_row(
                [
                    (iu - 1) * ctrl_v + iv,
                    iu * ctrl_v + iv,
                    (iu + 1) * ctrl_v + iv,
                ],
                stencil(&gu, iu),
            );
        }
    }
    for iu in 0..ctrl_u {
        for iv in 1..ctrl_v - 1 {
            add_row(
                [
                    iu * ctrl_v + (iv - 1),
                    iu * ctrl_v + iv,
                    iu * ctrl_v + (iv + 1),
                ],
                stencil(&gv, iv),
            );
        }
    }

    let rho_eff = rho * normal.trace() / penalty.trace().max(1e-300);
    *normal += penalty * rho_eff;
}

/// Uniform `nu x nv` resampling of the fitted patch, with every sample
/// snapped to the closest point on the raw observation mesh and its normal
/// taken from the patch.
pub fn make_sample_set(
    patch: &BSplinePatch,
    raw: &SpatialIndex,
    nu: usize,
    nv: usize,
) -> Result<SampleSet, BsplineError> {
    assert!(nu >= 2 && nv >= 2, "sampling grid must be at least 2x2");
    let n = nu * nv;
    let mut set = SampleSet {
        points: Vec::with_capacity(n),
        normals: Vec::with_capacity(n),
        uv: Vec::with_capacity(n),
        regions: vec![Vec::new(); n],
        weights: vec![0.0; n],
        nu,
        nv,
    };
    for iu in 0..nu {
        for iv in 0..nv {
            let u = iu as f64 / (nu - 1) as f64;
            let v = iv as f64 / (nv - 1) as f64;
            let on_patch = patch.evaluate(u, v)?;
            let snapped = raw.closest_point(&on_patch);
            set.points.push(snapped.point);
            set.normals.push(patch.evaluate_normal(u, v)?);
            set.uv.push([u, v]);
        }
    }
    Ok(set)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::TriangleMesh;
    use approx::assert_relative_eq;
    use rand::prelude::*;
    use rand_distr::{Distribution, Normal};

    fn sample_patch_cloud(
        patch: &BSplinePatch,
        nu: usize,
        nv: usize,
    ) -> (Vec<Vec3>, Vec<[f64; 2]>) {
        let mut cloud = Vec::new();
        let mut uv = Vec::new();
        for iu in 0..nu {
            for iv in 0..nv {
                let u = iu as f64 / (nu - 1) as f64;
                let v = iv as f64 / (nv - 1) as f64;
                cloud.push(patch.evaluate(u, v).unwrap());
                uv.push([u, v]);
            }
        }
        (cloud, uv)
    }

    fn planar_cloud(nx: usize, ny: usize) -> (Vec<Vec3>, Vec<[f64; 2]>) {
        let mut cloud = Vec::new();
        let mut uv = Vec::new();
        for i in 0..nx {
            for j in 0..ny {
                let x = 10.0 * i as f64 / (nx - 1) as f64;
                let y = 20.0 * j as f64 / (ny - 1) as f64;
                cloud.push(Vec3::new(x, y, 0.0));
                uv.push([x / 10.0, y / 20.0]);
            }
        }
        (cloud, uv)
    }

    #[test]
    fn hint_passes_through() {
        let (cloud, uv) = planar_cloud(8, 6);
        let out = parameterize_cloud(&cloud, Some(&uv)).unwrap();
        assert_eq!(out, uv);
    }

    #[test]
    fn planar_cloud_parameterizes_by_extent() {
        let (cloud, _) = planar_cloud(11, 21);
        let uv = parameterize_cloud(&cloud, None).unwrap();
        // u follows the longest axis (y here, spanning 20 mm).
        for (p, &[u, v]) in cloud.iter().zip(&uv) {
            assert_relative_eq!(u, p.y / 20.0, epsilon = 1e-12);
            assert_relative_eq!(v, p.x / 10.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn parameterization_is_translation_invariant() {
        let (cloud, _) = planar_cloud(9, 13);
        let uv = parameterize_cloud(&cloud, None).unwrap();
        let shifted: Vec<Vec3> = cloud
            .iter()
            .map(|p| p + Vec3::new(123.0, -55.0, 7.0))
            .collect();
        let uv2 = parameterize_cloud(&shifted, None).unwrap();
        for (a, b) in uv.iter().zip(&uv2) {
            assert_relative_eq!(a[0], b[0], epsilon = 1e-9);
            assert_relative_eq!(a[1], b[1], epsilon = 1e-9);
        }
    }

    #[test]
    fn collinear_cloud_rejected() {
        let cloud: Vec<Vec3> = (0..20)
            .map(|i| Vec3::new(i as f64, 2.0 * i as f64, -i as f64))
            .collect();
        assert!(matches!(
            parameterize_cloud(&cloud, None),
            Err(BsplineError::DegenerateParameterization)
        ));
    }

    #[test]
    fn too_few_points_rejected() {
        let cloud: Vec<Vec3> = (0..10)
            .map(|i| Vec3::new(i as f64, (i * i) as f64, 0.0))
            .collect();
        assert!(matches!(
            parameterize_cloud(&cloud, None),
            Err(BsplineError::TooFewPoints { .. })
        ));
    }

    #[test]
    fn exact_cloud_recovers_control_points() {
        let truth = super::super::tests::wavy_patch(8, 9, 21);
        let (cloud, uv) = sample_patch_cloud(&truth, 25, 27);
        let fit = fit_patch(&cloud, &uv, 8, 9, 0.0).unwrap();
        for (got, want) in fit.patch.control_points().iter().zip(truth.control_points()) {
            assert!((got - want).norm() < 1e-6, "control point off by {}", (got - want).norm());
        }
        assert!(fit.rms < 1e-8);
    }

    #[test]
    fn fit_is_idempotent_on_patch_data() {
        let truth = super::super::tests::wavy_patch(7, 7, 33);
        let (cloud, uv) = sample_patch_cloud(&truth, 30, 30);
        let first = fit_patch(&cloud, &uv, 7, 7, 0.0).unwrap();
        let (cloud2, uv2) = sample_patch_cloud(&first.patch, 30, 30);
        let second = fit_patch(&cloud2, &uv2, 7, 7, 0.0).unwrap();
        for (a, b) in first
            .patch
            .control_points()
            .iter()
            .zip(second.patch.control_points())
        {
            assert!((a - b).norm() < 1e-6);
        }
    }

    #[test]
    fn planar_fit_has_planar_normals_with_default_rho() {
        let (cloud, uv) = planar_cloud(20, 24);
        let fit = fit_patch(&cloud, &uv, 6, 6, 1e-4).unwrap();
        let mut rng = StdRng::seed_from_u64(3);
        for _ in 0..100 {
            let (u, v): (f64, f64) = (rng.random(), rng.random());
            let n = fit.patch.evaluate_normal(u, v).unwrap();
            assert!((n - Vec3::new(0.0, 0.0, 1.0)).norm() < 1e-8);
        }
    }

    #[test]
    fn noisy_fit_rms_stays_near_sigma() {
        // Scanner-style depth noise: sigma along z per point.
        let truth = super::super::tests::wavy_patch(6, 6, 44);
        let (clean, uv) = sample_patch_cloud(&truth, 40, 40);
        let sigma = 0.5;
        let normal = Normal::new(0.0, sigma).unwrap();
        for draw in 0..20 {
            let mut rng = StdRng::seed_from_u64(100 + draw);
            let noisy: Vec<Vec3> = clean
                .iter()
                .map(|p| p + Vec3::new(0.0, 0.0, normal.sample(&mut rng)))
                .collect();
            let fit = fit_patch(&noisy, &uv, 6, 6, 1e-4).unwrap();
            assert!(
                fit.rms <= 1.2 * sigma,
                "draw {draw}: rms {} vs sigma {sigma}",
                fit.rms
            );
        }
    }

    #[test]
    fn underdetermined_fit_rejected() {
        let (cloud, uv) = planar_cloud(4, 4);
        assert!(matches!(
            fit_patch(&cloud, &uv, 6, 6, 0.0),
            Err(BsplineError::UnderdeterminedFit)
        ));
        // Enough points but all in one corner of the uv square.
        let cloud: Vec<Vec3> = (0..100)
            .map(|i| Vec3::new(i as f64 * 0.001, (i % 10) as f64 * 0.001, 0.0))
            .collect();
        let uv: Vec<[f64; 2]> = (0..100)
            .map(|i| [i as f64 * 1e-5, (i % 10) as f64 * 1e-5])
            .collect();
        assert!(matches!(
            fit_patch(&cloud, &uv, 6, 6, 0.0),
            Err(BsplineError::UnderdeterminedFit)
        ));
    }

    fn grid_mesh_from(patch: &BSplinePatch, n: usize) -> TriangleMesh {
        let mut vertices = Vec::new();
        for i in 0..n {
            for j in 0..n {
                let u = i as f64 / (n - 1) as f64;
                let v = j as f64 / (n - 1) as f64;
                vertices.push(patch.evaluate(u, v).unwrap());
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
        TriangleMesh::new(vertices, triangles).unwrap()
    }

    #[test]
    fn sample_set_has_expected_grid() {
        let truth = super::super::tests::wavy_patch(6, 6, 55);
        let mesh = grid_mesh_from(&truth, 40);
        let index = SpatialIndex::build(mesh).unwrap();
        let samples = make_sample_set(&truth, &index, 13, 25).unwrap();
        assert_eq!(samples.len(), 325);
        assert_eq!(samples.uv[0], [0.0, 0.0]);
        assert_eq!(samples.uv[324], [1.0, 1.0]);
        for n in &samples.normals {
            assert!((n.norm() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn noise_free_samples_stay_on_patch() {
        let (cloud, uv) = planar_cloud(30, 30);
        let fit = fit_patch(&cloud, &uv, 6, 6, 0.0).unwrap();
        let mesh = grid_mesh_from(&fit.patch, 50);
        let index = SpatialIndex::build(mesh).unwrap();
        let samples = make_sample_set(&fit.patch, &index, 9, 9).unwrap();
        for (j, p) in samples.points.iter().enumerate() {
            let [u, v] = samples.uv[j];
            let on_patch = fit.patch.evaluate(u, v).unwrap();
            assert!((p - on_patch).norm() < 1e-6);
        }
    }

    #[test]
    fn snap_displacement_bounded_by_noise() {
        let truth = super::super::tests::wavy_patch(6, 6, 66);
        let (clean, uv) = sample_patch_cloud(&truth, 40, 40);
        let sigma = 0.3;
        let normal = Normal::new(0.0, sigma).unwrap();
        for draw in 0..5 {
            let mut rng = StdRng::seed_from_u64(200 + draw);
            let noisy: Vec<Vec3> = clean
                .iter()
                .map(|p| p + Vec3::new(0.0, 0.0, normal.sample(&mut rng)))
                .collect();
            let fit = fit_patch(&noisy, &uv, 6, 6, 1e-4).unwrap();
            let mut vertices = noisy.clone();
            let n = 40;
            let mut triangles = Vec::new();
            for i in 0..n - 1 {
                for j in 0..n - 1 {
                    let a = i * n + j;
                    triangles.push([a, a + n, a + 1]);
                    triangles.push([a + 1, a + n, a + n + 1]);
                }
            }
            // Tiny jitter avoids exactly degenerate triangles on flat runs.
            for v in &mut vertices {
                v.z += 1e-9;
            }
            let mesh = TriangleMesh::new(vertices, triangles).unwrap();
            let index = SpatialIndex::build(mesh).unwrap();
            let samples = make_sample_set(&fit.patch, &index, 13, 13).unwrap();
            let snaps: Vec<f64> = samples
                .points
                .iter()
                .enumerate()
                .map(|(j, p)| {
                    let [u, v] = samples.uv[j];
                    (p - fit.patch.evaluate(u, v).unwrap()).norm()
                })
                .collect();
            let mean = snaps.iter().sum::<f64>() / snaps.len() as f64;
            let over = snaps.iter().filter(|&&s| s > 3.0 * sigma).count();
            assert!(mean <= sigma, "draw {draw}: mean snap {mean}");
            // Gaussian tails put ~0.3% of samples past 3 sigma.
            assert!(
                over as f64 <= 0.01 * snaps.len() as f64,
                "draw {draw}: {over} of {} samples snapped past 3 sigma",
                snaps.len()
            );
        }
    }
}
