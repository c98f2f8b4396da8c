//! Forward-difference gradient and Jacobian from one shared probe pass.
//!
//! Each channel gets a single forward probe `a + delta e_i`; the scalar
//! gradient and the per-region Jacobian columns both come from the same
//! k evaluations, so asking for the Jacobian alongside the gradient costs
//! nothing extra on the plant.

use nalgebra::DMatrix;

use crate::plant::{ActuationBounds, ActuationVector};

use super::pipeline::Evaluation;
use super::SolverError;

/// Smallest probe step still worth taking (kPa).
const MIN_PROBE: f64 = 1e-9;

#[derive(Debug)]
pub struct FdProbeRecord {
    pub channel: usize,
    pub delta: f64,
    pub evaluation: Evaluation,
}

#[derive(Debug)]
pub struct FdEstimate {
    pub gradient: Vec<f64>,
    /// `jacobian[(l, i)] = (D_l(a + delta_i e_i) - D_l(a)) / delta_i`.
    pub jacobian: DMatrix<f64>,
    /// Effective per-channel probe steps after shrinking at the bound.
    pub deltas: Vec<f64>,
    /// Channels sitting on their upper bound that could not be probed.
    pub pinned: Vec<bool>,
    pub probes: Vec<FdProbeRecord>,
}

/// Probe all channels around a cached base evaluation. With `allow_pinned`
/// the gradient and Jacobian column of an unprobeable channel are zeroed
/// instead of failing; the solver relies on this at active bounds.
pub fn fd_estimate(
    eval: &mut impl FnMut(&ActuationVector) -> Result<Evaluation, SolverError>,
    bounds: &ActuationBounds,
    base: &Evaluation,
    delta: f64,
    allow_pinned: bool,
) -> Result<FdEstimate, SolverError> {
    assert!(delta > 0.0);
    let a = &base.actuation;
    let k = a.len();
    let regions = base.value.components.len();
    let mut gradient = vec![0.0; k];
    let mut jacobian = DMatrix::zeros(regions, k);
    let mut deltas = vec![0.0; k];
    let mut pinned = vec![false; k];
    let mut probes = Vec::with_capacity(k);

    for i in 0..k {
        let room = bounds.upper[i] - a[i];
        let effective = delta.min(room);
        if effective < MIN_PROBE {
            if allow_pinned {
                pinned[i] = true;
                continue;
            }
            return Err(SolverError::CannotProbeChannel { channel: i });
        }
        let mut probe_a = a.clone();
        probe_a.0[i] += effective;
        let probe = eval(&probe_a)?;
        gradient[i] = (probe.total() - base.total()) / effective;
        for l in 0..regions {
            jacobian[(l, i)] =
                (probe.value.components[l] - base.value.components[l]) / effective;
        }
        deltas[i] = effective;
        probes.push(FdProbeRecord {
            channel: i,
            delta: effective,
            evaluation: probe,
        });
    }

    Ok(FdEstimate {
        gradient,
        jacobian,
        deltas,
        pinned,
        probes,
    })
}

/// Gradient of the total objective by forward differences; evaluates the
/// base point itself, so it costs k+1 evaluations.
pub fn numerical_gradient(
    eval: &mut impl FnMut(&ActuationVector) -> Result<Evaluation, SolverError>,
    bounds: &ActuationBounds,
    a: &ActuationVector,
    delta: f64,
) -> Result<Vec<f64>, SolverError> {
    let base = eval(a)?;
    Ok(fd_estimate(eval, bounds, &base, delta, false)?.gradient)
}

/// Per-region Jacobian by forward differences (k+1 evaluations). When the
/// gradient is needed too, call [`fd_estimate`] once instead.
pub fn jacobian_fd(
    eval: &mut impl FnMut(&ActuationVector) -> Result<Evaluation, SolverError>,
    bounds: &ActuationBounds,
    a: &ActuationVector,
    delta: f64,
) -> Result<DMatrix<f64>, SolverError> {
    let base = eval(a)?;
    Ok(fd_estimate(eval, bounds, &base, delta, false)?.jacobian)
}
