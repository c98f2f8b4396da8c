//! The actuated membrane as a black box: chamber pressures in, observed
//! surface out.
//!
//! The height field is a base dome plus one saturating bump per chamber,
//! `z = m(x,y) + sum_i A_i tanh(P_i / Pref_i) phi_i(x,y)`, with the bump sum
//! passed through a few Laplacian smoothing passes to couple neighboring
//! chambers through the skin. Observation noise is a deterministic function
//! of (seed, actuation), so identical requests reproduce identical scans.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::geom::{GeomError, TriangleMesh, Vec3};

#[derive(Debug, thiserror::Error)]
pub enum PlantError {
    #[error("actuation out of range: channel {channel} = {value} kPa outside [{lo}, {hi}]")]
    OutOfRange {
        channel: usize,
        value: f64,
        lo: f64,
        hi: f64,
    },
    #[error("actuation has {got} channels, plant expects {expected}")]
    ChannelMismatch { got: usize, expected: usize },
    #[error(transparent)]
    Geom(#[from] GeomError),
}

/// Chamber pressures in kPa; the optimizer's variable.
#[derive(Clone, Debug, PartialEq)]
pub struct ActuationVector(pub Vec<f64>);

impl ActuationVector {
    pub fn zeros(k: usize) -> Self {
        Self(vec![0.0; k])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

impl std::ops::Index<usize> for ActuationVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

/// Per-channel box constraints on the pressures.
#[derive(Clone, Debug)]
pub struct ActuationBounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl ActuationBounds {
    pub fn uniform(k: usize, lo: f64, hi: f64) -> Self {
        assert!(lo < hi);
        Self {
            lower: vec![lo; k],
            upper: vec![hi; k],
        }
    }

    pub fn len(&self) -> usize {
        self.lower.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lower.is_empty()
    }

    pub fn contains(&self, a: &ActuationVector) -> bool {
        a.len() == self.len()
            && a.0
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(&p, (&lo, &hi))| p >= lo && p <= hi)
    }

    pub fn clamp(&self, a: &ActuationVector) -> ActuationVector {
        ActuationVector(
            a.0.iter()
                .zip(self.lower.iter().zip(&self.upper))
                .map(|(&p, (&lo, &hi))| p.clamp(lo, hi))
                .collect(),
        )
    }
}

/// One pneumatic chamber: a raised-cosine footprint with a saturating
/// pressure response.
#[derive(Clone, Debug)]
pub struct Chamber {
    /// Footprint center in domain coordinates (mm).
    pub center: [f64; 2],
    /// Footprint radius (mm); the bump vanishes outside it.
    pub radius: f64,
    /// Pressure scale of the tanh saturation (kPa).
    pub p_ref: f64,
    /// Asymptotic rise at full saturation (mm).
    pub max_rise: f64,
}

impl Chamber {
    fn bump(&self, x: f64, y: f64, pressure: f64) -> f64 {
        let r = ((x - self.center[0]).powi(2) + (y - self.center[1]).powi(2)).sqrt()
            / self.radius;
        if r >= 1.0 {
            return 0.0;
        }
        let footprint = 0.5 * (1.0 + (std::f64::consts::PI * r).cos());
        self.max_rise * (pressure / self.p_ref).tanh() * footprint
    }
}

#[derive(Clone, Debug)]
pub struct MembraneModel {
    pub grid_nx: usize,
    pub grid_ny: usize,
    /// Domain extents in mm; x spans the width, y the height of the torso.
    pub domain_x: f64,
    pub domain_y: f64,
    pub chambers: Vec<Chamber>,
    /// Amplitude of the base dome m(x, y) (mm).
    pub base_amplitude: f64,
    pub smoothing_passes: usize,
    /// Observation noise per point (mm).
    pub noise_sigma: f64,
    /// First-order pressure lag in [0, 1); 0 means steady state.
    pub hysteresis: f64,
    pub bounds: ActuationBounds,
}

impl MembraneModel {
    /// Preset chamber layouts; `k = 4` mirrors chest / upper-waist /
    /// lower-waist / belly with the belly footprint overlapping both waist
    /// chambers, `k = 2` is a reduced two-chamber stack.
    pub fn with_channels(k: usize) -> Self {
        let chambers = match k {
            4 => vec![
                Chamber {
                    center: [150.0, 360.0],
                    radius: 120.0,
                    p_ref: 10.0,
                    max_rise: 35.0,
                },
                Chamber {
                    center: [150.0, 225.0],
                    radius: 95.0,
                    p_ref: 10.0,
                    max_rise: 30.0,
                },
                Chamber {
                    center: [150.0, 105.0],
                    radius: 95.0,
                    p_ref: 10.0,
                    max_rise: 30.0,
                },
                Chamber {
                    center: [150.0, 165.0],
                    radius: 85.0,
                    p_ref: 10.0,
                    max_rise: 25.0,
                },
            ],
            2 => vec![
                Chamber {
                    center: [150.0, 300.0],
                    radius: 130.0,
                    p_ref: 10.0,
                    max_rise: 30.0,
                },
                Chamber {
                    center: [150.0, 140.0],
                    radius: 130.0,
                    p_ref: 10.0,
                    max_rise: 30.0,
                },
            ],
            _ => {
                // Evenly spaced stack along y for other channel counts.
                (0..k)
                    .map(|i| Chamber {
                        center: [150.0, 450.0 * (i as f64 + 0.5) / k as f64],
                        radius: 110.0,
                        p_ref: 10.0,
                        max_rise: 30.0,
                    })
                    .collect()
            }
        };
        Self {
            grid_nx: 64,
            grid_ny: 48,
            domain_x: 300.0,
            domain_y: 450.0,
            chambers,
            base_amplitude: 20.0,
            smoothing_passes: 2,
            noise_sigma: 0.0,
            hysteresis: 0.0,
            bounds: ActuationBounds::uniform(k, 0.0, 30.0),
        }
    }

    pub fn channels(&self) -> usize {
        self.chambers.len()
    }

    pub fn grid_point(&self, ix: usize, iy: usize) -> (f64, f64) {
        (
            self.domain_x * ix as f64 / (self.grid_nx - 1) as f64,
            self.domain_y * iy as f64 / (self.grid_ny - 1) as f64,
        )
    }

    fn base_height(&self, x: f64, y: f64) -> f64 {
        let sx = (std::f64::consts::PI * x / self.domain_x).sin();
        let sy = (std::f64::consts::PI * y / self.domain_y).sin();
        self.base_amplitude * sx * sy
    }

    /// Noise-free height grid (row-major, x-major) for given pressures.
    fn height_field(&self, pressures: &[f64]) -> Vec<f64> {
        let (nx, ny) = (self.grid_nx, self.grid_ny);
        let mut bumps = vec![0.0; nx * ny];
        for ix in 0..nx {
            for iy in 0..ny {
                let (x, y) = self.grid_point(ix, iy);
                let mut z = 0.0;
                for (chamber, &p) in self.chambers.iter().zip(pressures) {
                    z += chamber.bump(x, y, p);
                }
                bumps[ix * ny + iy] = z;
            }
        }
        // The skin couples chambers: smooth the inflation only, so zero
        // actuation reproduces the base field exactly.
        for _ in 0..self.smoothing_passes {
            bumps = laplacian_pass(&bumps, nx, ny);
        }
        let mut field = bumps;
        for ix in 0..nx {
            for iy in 0..ny {
                let (x, y) = self.grid_point(ix, iy);
                field[ix * ny + iy] += self.base_height(x, y);
            }
        }
        field
    }

    fn mesh_from_field(&self, field: &[f64]) -> Result<TriangleMesh, PlantError> {
        let (nx, ny) = (self.grid_nx, self.grid_ny);
        let mut vertices = Vec::with_capacity(nx * ny);
        for ix in 0..nx {
            for iy in 0..ny {
                let (x, y) = self.grid_point(ix, iy);
                vertices.push(Vec3::new(x, y, field[ix * ny + iy]));
            }
        }
        let mut triangles = Vec::with_capacity(2 * (nx - 1) * (ny - 1));
        for ix in 0..nx - 1 {
            for iy in 0..ny - 1 {
                let a = ix * ny + iy;
                let b = (ix + 1) * ny + iy;
                let c = ix * ny + iy + 1;
                let d = (ix + 1) * ny + iy + 1;
                triangles.push([a, b, d]);
                triangles.push([a, d, c]);
            }
        }
        Ok(TriangleMesh::new(vertices, triangles)?)
    }

    fn uv_hint(&self) -> Vec<[f64; 2]> {
        let (nx, ny) = (self.grid_nx, self.grid_ny);
        let mut uv = Vec::with_capacity(nx * ny);
        for ix in 0..nx {
            for iy in 0..ny {
                uv.push([
                    ix as f64 / (nx - 1) as f64,
                    iy as f64 / (ny - 1) as f64,
                ]);
            }
        }
        uv
    }
}

/// 5-point averaging pass with edge replication.
fn laplacian_pass(field: &[f64], nx: usize, ny: usize) -> Vec<f64> {
    let at = |ix: isize, iy: isize| {
        let ix = ix.clamp(0, nx as isize - 1) as usize;
        let iy = iy.clamp(0, ny as isize - 1) as usize;
        field[ix * ny + iy]
    };
    let mut out = vec![0.0; nx * ny];
    for ix in 0..nx as isize {
        for iy in 0..ny as isize {
            out[ix as usize * ny + iy as usize] = (at(ix, iy)
                + at(ix - 1, iy)
                + at(ix + 1, iy)
                + at(ix, iy - 1)
                + at(ix, iy + 1))
                / 5.0;
        }
    }
    out
}

/// One virtual scan: the grid cloud, its triangulation, the grid's uv
/// coordinates, and the running count of plant actuations.
#[derive(Clone, Debug)]
pub struct SurfaceObservation {
    pub cloud: Vec<Vec3>,
    pub mesh: TriangleMesh,
    pub uv_hint: Vec<[f64; 2]>,
    pub eval_count: u64,
}

/// The stateful plant: owns the evaluation counter and, when hysteresis is
/// on, the pressure history. With hysteresis off the response is a pure
/// function of (seed, actuation) and may be queried in any order.
#[derive(Clone, Debug)]
pub struct Plant {
    model: MembraneModel,
    seed: u64,
    eval_count: u64,
    prev_effective: Vec<f64>,
}

impl Plant {
    pub fn new(model: MembraneModel, seed: u64) -> Self {
        let k = model.channels();
        Self {
            model,
            seed,
            eval_count: 0,
            prev_effective: vec![0.0; k],
        }
    }

    pub fn model(&self) -> &MembraneModel {
        &self.model
    }

    pub fn bounds(&self) -> &ActuationBounds {
        &self.model.bounds
    }

    pub fn channels(&self) -> usize {
        self.model.channels()
    }

    pub fn eval_count(&self) -> u64 {
        self.eval_count
    }

    /// True when observations are history-independent (no hysteresis), in
    /// which case concurrent probing would be admissible.
    pub fn is_stateless(&self) -> bool {
        self.model.hysteresis == 0.0
    }

    pub fn actuate(&mut self, a: &ActuationVector) -> Result<SurfaceObservation, PlantError> {
        if a.len() != self.model.channels() {
            return Err(PlantError::ChannelMismatch {
                got: a.len(),
                expected: self.model.channels(),
            });
        }
        for (i, (&p, (&lo, &hi))) in a
            .0
            .iter()
            .zip(self.model.bounds.lower.iter().zip(&self.model.bounds.upper))
            .enumerate()
        {
            if p < lo || p > hi {
                return Err(PlantError::OutOfRange {
                    channel: i,
                    value: p,
                    lo,
                    hi,
                });
            }
        }

        let h = self.model.hysteresis;
        let effective: Vec<f64> = if h > 0.0 {
            a.0.iter()
                .zip(&self.prev_effective)
                .map(|(&p, &prev)| p + h * (prev - p))
                .collect()
        } else {
            a.0.clone()
        };
        if h > 0.0 {
            self.prev_effective = effective.clone();
        }

        let mut field = self.model.height_field(&effective);
        if self.model.noise_sigma > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(noise_seed(self.seed, a));
            let normal = Normal::new(0.0, self.model.noise_sigma).expect("positive sigma");
            for z in &mut field {
                *z += normal.sample(&mut rng);
            }
        }
        self.eval_count += 1;

        let mesh = self.model.mesh_from_field(&field)?;
        Ok(SurfaceObservation {
            cloud: mesh.vertices.clone(),
            mesh,
            uv_hint: self.model.uv_hint(),
            eval_count: self.eval_count,
        })
    }
}

/// Noise stream seed: a splitmix64 hash of the run seed and the actuation
/// bit patterns, making each observation a fixed function of (seed, a).
fn noise_seed(seed: u64, a: &ActuationVector) -> u64 {
    let mut state = splitmix64(seed ^ 0x706c616e74); // "plant"
    for &p in &a.0 {
        state = splitmix64(state ^ p.to_bits());
    }
    state
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d049bb133111eb);
    x ^ (x >> 31)
}

/// Noise-free target generated by the plant itself at `a_star`; the global
/// optimum of the shape error over actuations is at the noise floor there.
pub fn make_reachable_target(
    model: &MembraneModel,
    a_star: &ActuationVector,
) -> Result<TriangleMesh, PlantError> {
    check_in_bounds(model, a_star)?;
    let field = model.height_field(a_star.as_slice());
    model.mesh_from_field(&field)
}

/// Extra analytic feature stacked on a reachable target, putting the result
/// outside the span of the chamber shapes.
#[derive(Clone, Copy, Debug)]
pub struct BumpSpec {
    pub center: [f64; 2],
    pub radius: f64,
    pub amplitude: f64,
}

pub fn make_unreachable_target(
    model: &MembraneModel,
    a_star: &ActuationVector,
    bump: &BumpSpec,
) -> Result<TriangleMesh, PlantError> {
    check_in_bounds(model, a_star)?;
    let mut field = model.height_field(a_star.as_slice());
    for ix in 0..model.grid_nx {
        for iy in 0..model.grid_ny {
            let (x, y) = model.grid_point(ix, iy);
            let r = ((x - bump.center[0]).powi(2) + (y - bump.center[1]).powi(2)).sqrt()
                / bump.radius;
            if r < 1.0 {
                field[ix * model.grid_ny + iy] +=
                    bump.amplitude * 0.5 * (1.0 + (std::f64::consts::PI * r).cos());
            }
        }
    }
    model.mesh_from_field(&field)
}

/// Reachable target with the waist band flattened to a hard plateau, a
/// first-order feature the round chamber bumps cannot reproduce. Exercises
/// the normal term of the objective.
pub fn make_flat_waist_target(
    model: &MembraneModel,
    a_star: &ActuationVector,
    level: f64,
    y_band: (f64, f64),
) -> Result<TriangleMesh, PlantError> {
    check_in_bounds(model, a_star)?;
    let mut field = model.height_field(a_star.as_slice());
    for ix in 0..model.grid_nx {
        for iy in 0..model.grid_ny {
            let (_, y) = model.grid_point(ix, iy);
            if y >= y_band.0 && y <= y_band.1 {
                let z = &mut field[ix * model.grid_ny + iy];
                *z = z.min(level);
            }
        }
    }
    model.mesh_from_field(&field)
}

fn check_in_bounds(model: &MembraneModel, a: &ActuationVector) -> Result<(), PlantError> {
    if a.len() != model.channels() {
        return Err(PlantError::ChannelMismatch {
            got: a.len(),
            expected: model.channels(),
        });
    }
    if !model.bounds.contains(a) {
        let i = a
            .0
            .iter()
            .position(|&p| {
                p < model.bounds.lower[0] || p > model.bounds.upper[0]
            })
            .unwrap_or(0);
        return Err(PlantError::OutOfRange {
            channel: i,
            value: a[i],
            lo: model.bounds.lower[i],
            hi: model.bounds.upper[i],
        });
    }
    Ok(())
}
