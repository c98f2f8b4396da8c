//! Cubic B-spline surface patches: fitting a noisy observation cloud and
//! resampling it into the representative points used by the objective.

mod basis;
mod fit;

pub use fit::{fit_patch, make_sample_set, parameterize_cloud, FitResult, SampleSet};

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use crate::geom::{GeomError, Vec3};
use basis::{basis_funs, basis_funs_with_derivs, clamped_uniform_knots, find_span, greville};

pub const DEGREE: usize = 3;

#[derive(Debug, thiserror::Error)]
pub enum BsplineError {
    #[error("need at least {needed} points, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("degenerate parameterization")]
    DegenerateParameterization,
    #[error("underdetermined fit")]
    UnderdeterminedFit,
    #[error("parameter ({u}, {v}) outside the unit square")]
    OutOfDomain { u: f64, v: f64 },
    #[error("singular normal at ({u}, {v})")]
    SingularNormal { u: f64, v: f64 },
    #[error("uv list length {uv} does not match cloud length {cloud}")]
    MismatchedUv { uv: usize, cloud: usize },
    #[error("control grid must be at least 4x4, got {ctrl_u}x{ctrl_v}")]
    ControlGridTooSmall { ctrl_u: usize, ctrl_v: usize },
    #[error(transparent)]
    Geom(#[from] GeomError),
    #[error("patch file parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Clamped cubic tensor-product patch on the unit square.
///
/// Control points are stored row-major with the `u` index as the row. The
/// knot vectors are always clamped uniform, so the patch interpolates its
/// corner control points. `normal_sign` fixes the surface orientation; the
/// fit chooses it so normals leave the observed side of the membrane.
#[derive(Clone, Debug)]
pub struct BSplinePatch {
    ctrl_u: usize,
    ctrl_v: usize,
    control_points: Vec<Vec3>,
    knots_u: Vec<f64>,
    knots_v: Vec<f64>,
    normal_sign: f64,
}

impl BSplinePatch {
    pub fn from_control_grid(
        ctrl_u: usize,
        ctrl_v: usize,
        control_points: Vec<Vec3>,
    ) -> Result<Self, BsplineError> {
        if ctrl_u < DEGREE + 1 || ctrl_v < DEGREE + 1 {
            return Err(BsplineError::ControlGridTooSmall { ctrl_u, ctrl_v });
        }
        assert_eq!(control_points.len(), ctrl_u * ctrl_v);
        Ok(Self {
            ctrl_u,
            ctrl_v,
            control_points,
            knots_u: clamped_uniform_knots(ctrl_u),
            knots_v: clamped_uniform_knots(ctrl_v),
            normal_sign: 1.0,
        })
    }

    pub fn ctrl_u(&self) -> usize {
        self.ctrl_u
    }

    pub fn ctrl_v(&self) -> usize {
        self.ctrl_v
    }

    pub fn control_points(&self) -> &[Vec3] {
        &self.control_points
    }

    pub fn control_point(&self, iu: usize, iv: usize) -> Vec3 {
        self.control_points[iu * self.ctrl_v + iv]
    }

    pub fn knots_u(&self) -> &[f64] {
        &self.knots_u
    }

    pub fn knots_v(&self) -> &[f64] {
        &self.knots_v
    }

    pub fn greville_u(&self) -> Vec<f64> {
        greville(&self.knots_u, self.ctrl_u)
    }

    pub fn greville_v(&self) -> Vec<f64> {
        greville(&self.knots_v, self.ctrl_v)
    }

    /// Flip the surface orientation; every evaluated normal negates.
    pub fn flip_orientation(&mut self) {
        self.normal_sign = -self.normal_sign;
    }

    pub(crate) fn set_normal_sign(&mut self, sign: f64) {
        self.normal_sign = sign;
    }

    fn check_domain(&self, u: f64, v: f64) -> Result<(), BsplineError> {
        if !(0.0..=1.0).contains(&u) || !(0.0..=1.0).contains(&v) {
            return Err(BsplineError::OutOfDomain { u, v });
        }
        Ok(())
    }

    pub fn evaluate(&self, u: f64, v: f64) -> Result<Vec3, BsplineError> {
        self.check_domain(u, v)?;
        let su = find_span(&self.knots_u, self.ctrl_u, u);
        let sv = find_span(&self.knots_v, self.ctrl_v, v);
        let nu = basis_funs(&self.knots_u, su, u);
        let nv = basis_funs(&self.knots_v, sv, v);
        let mut point = Vec3::zeros();
        for (a, wu) in nu.iter().enumerate() {
            for (b, wv) in nv.iter().enumerate() {
                point += self.control_point(su - DEGREE + a, sv - DEGREE + b) * (wu * wv);
            }
        }
        Ok(point)
    }

    /// Point plus the two first partial derivatives.
    pub fn evaluate_with_partials(
        &self,
        u: f64,
        v: f64,
    ) -> Result<(Vec3, Vec3, Vec3), BsplineError> {
        self.check_domain(u, v)?;
        let su = find_span(&self.knots_u, self.ctrl_u, u);
        let sv = find_span(&self.knots_v, self.ctrl_v, v);
        let (nu, du) = basis_funs_with_derivs(&self.knots_u, su, u);
        let (nv, dv) = basis_funs_with_derivs(&self.knots_v, sv, v);
        let mut point = Vec3::zeros();
        let mut tan_u = Vec3::zeros();
        let mut tan_v = Vec3::zeros();
        for a in 0..=DEGREE {
            for b in 0..=DEGREE {
                let cp = self.control_point(su - DEGREE + a, sv - DEGREE + b);
                point += cp * (nu[a] * nv[b]);
                tan_u += cp * (du[a] * nv[b]);
                tan_v += cp * (nu[a] * dv[b]);
            }
        }
        Ok((point, tan_u, tan_v))
    }

    /// Unit surface normal, oriented by the patch orientation sign.
    pub fn evaluate_normal(&self, u: f64, v: f64) -> Result<Vec3, BsplineError> {
        let (_, tan_u, tan_v) = self.evaluate_with_partials(u, v)?;
        let cross = tan_u.cross(&tan_v);
        let len = cross.norm();
        if len < 1e-12 {
            return Err(BsplineError::SingularNormal { u, v });
        }
        Ok(cross * (self.normal_sign / len))
    }

    pub fn save(&self, path: &Path) -> Result<(), BsplineError> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(out, "bspline3 {} {}", self.ctrl_u, self.ctrl_v)?;
        for p in &self.control_points {
            writeln!(out, "{} {} {}", p.x, p.y, p.z)?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, BsplineError> {
        let file = std::fs::File::open(path)?;
        let mut lines = BufReader::new(file).lines();
        let header = lines
            .next()
            .ok_or_else(|| BsplineError::Parse {
                line: 1,
                message: "empty patch file".into(),
            })??;
        let tokens: Vec<&str> = header.split_whitespace().collect();
        let (ctrl_u, ctrl_v) = match tokens.as_slice() {
            ["bspline3", cu, cv] => (
                cu.parse().map_err(|e| BsplineError::Parse {
                    line: 1,
                    message: format!("bad ctrl_u: {e}"),
                })?,
                cv.parse().map_err(|e| BsplineError::Parse {
                    line: 1,
                    message: format!("bad ctrl_v: {e}"),
                })?,
            ),
            _ => {
                return Err(BsplineError::Parse {
                    line: 1,
                    message: "expected header 'bspline3 <ctrl_u> <ctrl_v>'".into(),
                })
            }
        };
        let mut control_points = Vec::with_capacity(ctrl_u * ctrl_v);
        for (i, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let coords: Vec<f64> = line
                .split_whitespace()
                .map(str::parse)
                .collect::<Result<_, _>>()
                .map_err(|e| BsplineError::Parse {
                    line: i + 2,
                    message: format!("bad control point: {e}"),
                })?;
            if coords.len() != 3 {
                return Err(BsplineError::Parse {
                    line: i + 2,
                    message: format!("expected 3 coordinates, got {}", coords.len()),
                });
            }
            control_points.push(Vec3::new(coords[0], coords[1], coords[2]));
        }
        if control_points.len() != ctrl_u * ctrl_v {
            return Err(BsplineError::Parse {
                line: 0,
                message: format!(
                    "expected {} control points, got {}",
                    ctrl_u * ctrl_v,
                    control_points.len()
                ),
            });
        }
        let mut patch = Self::from_control_grid(ctrl_u, ctrl_v, control_points)?;
        patch.set_normal_sign(fit::orientation_sign(&patch));
        Ok(patch)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::prelude::*;

    pub(crate) fn wavy_patch(ctrl_u: usize, ctrl_v: usize, seed: u64) -> BSplinePatch {
        let mut rng = StdRng::seed_from_u64(seed);
        let mut cps = Vec::new();
        for iu in 0..ctrl_u {
            for iv in 0..ctrl_v {
                let x = 100.0 * iu as f64 / (ctrl_u - 1) as f64;
                let y = 150.0 * iv as f64 / (ctrl_v - 1) as f64;
                let z = 8.0 * (x / 30.0).sin() * (y / 40.0).cos() + rng.random_range(-2.0..2.0);
                cps.push(Vec3::new(x, y, z));
            }
        }
        BSplinePatch::from_control_grid(ctrl_u, ctrl_v, cps).unwrap()
    }

    #[test]
    fn basis_partitions_unity() {
        let patch = wavy_patch(14, 14, 1);
        let mut rng = StdRng::seed_from_u64(2);
        for _ in 0..1000 {
            let u: f64 = rng.random();
            let su = find_span(patch.knots_u(), patch.ctrl_u(), u);
            let sum: f64 = basis_funs(patch.knots_u(), su, u).iter().sum();
            assert!((sum - 1.0).abs() < 1e-10, "sum {sum} at u {u}");
        }
    }

    #[test]
    fn clamped_patch_interpolates_corners() {
        let patch = wavy_patch(7, 9, 3);
        let corners = [
            (0.0, 0.0, patch.control_point(0, 0)),
            (1.0, 0.0, patch.control_point(6, 0)),
            (0.0, 1.0, patch.control_point(0, 8)),
            (1.0, 1.0, patch.control_point(6, 8)),
        ];
        for (u, v, expected) in corners {
            let got = patch.evaluate(u, v).unwrap();
            assert_relative_eq!(got, expected, epsilon = 1e-12);
        }
    }

    #[test]
    fn planar_control_grid_evaluates_flat() {
        let mut cps = Vec::new();
        for iu in 0..5 {
            for iv in 0..6 {
                cps.push(Vec3::new(iu as f64 * 2.0, iv as f64 * 3.0, 0.0));
            }
        }
        let patch = BSplinePatch::from_control_grid(5, 6, cps).unwrap();
        let mut rng = StdRng::seed_from_u64(4);
        for _ in 0..50 {
            let (u, v): (f64, f64) = (rng.random(), rng.random());
            assert!(patch.evaluate(u, v).unwrap().z.abs() < 1e-12);
            let n = patch.evaluate_normal(u, v).unwrap();
            assert_relative_eq!(n, Vec3::new(0.0, 0.0, 1.0), epsilon = 1e-12);
        }
    }

    #[test]
    fn partials_match_central_differences() {
        let patch = wavy_patch(10, 12, 5);
        let mut rng = StdRng::seed_from_u64(6);
        let h = 1e-6;
        for _ in 0..100 {
            let u: f64 = rng.random_range(0.01..0.99);
            let v: f64 = rng.random_range(0.01..0.99);
            let (_, du, dv) = patch.evaluate_with_partials(u, v).unwrap();
            let fd_u = (patch.evaluate(u + h, v).unwrap() - patch.evaluate(u - h, v).unwrap())
                / (2.0 * h);
            let fd_v = (patch.evaluate(u, v + h).unwrap() - patch.evaluate(u, v - h).unwrap())
                / (2.0 * h);
            assert!((fd_u - du).norm() / du.norm().max(1.0) < 1e-6);
            assert!((fd_v - dv).norm() / dv.norm().max(1.0) < 1e-6);
        }
    }

    #[test]
    fn orientation_flip_negates_normals() {
        let mut patch = wavy_patch(8, 8, 7);
        let before = patch.evaluate_normal(0.3, 0.7).unwrap();
        patch.flip_orientation();
        let after = patch.evaluate_normal(0.3, 0.7).unwrap();
        assert_relative_eq!(before, -after, epsilon = 1e-12);
    }

    #[test]
    fn out_of_domain_rejected() {
        let patch = wavy_patch(5, 5, 8);
        assert!(matches!(
            patch.evaluate(1.2, 0.5),
            Err(BsplineError::OutOfDomain { .. })
        ));
        assert!(matches!(
            patch.evaluate(0.5, -0.1),
            Err(BsplineError::OutOfDomain { .. })
        ));
    }

    #[test]
    fn save_load_round_trip() {
        let dir = std::env::temp_dir().join("shapectl-bspline-io");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("patch.txt");
        let patch = wavy_patch(6, 7, 9);
        patch.save(&path).unwrap();
        let loaded = BSplinePatch::load(&path).unwrap();
        assert_eq!(loaded.ctrl_u(), 6);
        assert_eq!(loaded.ctrl_v(), 7);
        assert_eq!(patch.control_points(), loaded.control_points());
    }
}
