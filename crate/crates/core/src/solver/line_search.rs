//! Step clamping against the actuation box and the shrink/expand 1D search
//! along the negative gradient.

use crate::plant::{ActuationBounds, ActuationVector};

use super::pipeline::Evaluation;
use super::SolverError;

#[derive(Clone, Copy, Debug)]
pub struct LineSearchConfig {
    pub shrink: f64,
    pub expand: f64,
    pub max_probes: usize,
    /// First probe moves the actuation by this many kPa in Euclidean norm
    /// (before clamping against the box).
    pub initial_step: f64,
}

impl Default for LineSearchConfig {
    fn default() -> Self {
        Self {
            shrink: 0.5,
            expand: 2.0,
            max_probes: 8,
            initial_step: 1.0,
        }
    }
}

/// Largest step magnitude `tau` keeping `a - tau g` inside the box on every
/// channel; infinite when the gradient is zero on all binding channels.
pub fn clamp_step(a: &ActuationVector, g: &[f64], bounds: &ActuationBounds) -> f64 {
    let mut tau_max = f64::INFINITY;
    for i in 0..a.len() {
        let room = if g[i] > 0.0 {
            (a[i] - bounds.lower[i]) / g[i]
        } else if g[i] < 0.0 {
            (bounds.upper[i] - a[i]) / -g[i]
        } else {
            continue;
        };
        tau_max = tau_max.min(room.max(0.0));
    }
    tau_max
}

/// Zero the gradient components that point out of the box at an active
/// bound; stepping along them is impossible, and leaving them in would let
/// `clamp_step` freeze the whole move.
pub fn project_gradient(a: &ActuationVector, g: &[f64], bounds: &ActuationBounds) -> Vec<f64> {
    const EDGE: f64 = 1e-12;
    g.iter()
        .enumerate()
        .map(|(i, &gi)| {
            let at_lower = a[i] <= bounds.lower[i] + EDGE;
            let at_upper = a[i] >= bounds.upper[i] - EDGE;
            if (at_lower && gi > 0.0) || (at_upper && gi < 0.0) {
                0.0
            } else {
                gi
            }
        })
        .collect()
}

pub struct LsProbe {
    pub tau: f64,
    pub evaluation: Evaluation,
}

pub struct LineSearchOutcome {
    pub tau_opt: f64,
    /// Index into `probes` of the accepted evaluation; `None` on a stall.
    pub accepted: Option<usize>,
    pub stalled: bool,
    pub probes: Vec<LsProbe>,
}

/// Shrink/expand search for `argmin_tau D(a - tau g)` within `[0, tau_max]`.
///
/// The first probe is `min(tau_max, initial_step / |g|)`. While probes keep
/// improving the step doubles (capped at `tau_max`); a failed first probe
/// halves instead until an improvement appears. Once a bracket exists, one
/// parabolic refinement probe is spent if budget remains. Every probed
/// actuation is clamped into the box, the probe budget is hard, and the
/// result never increases the objective: with no improving probe the
/// incumbent stands and `stalled` is set.
pub fn line_search(
    eval: &mut impl FnMut(&ActuationVector) -> Result<Evaluation, SolverError>,
    base: &Evaluation,
    g: &[f64],
    tau_max: f64,
    bounds: &ActuationBounds,
    cfg: &LineSearchConfig,
) -> Result<LineSearchOutcome, SolverError> {
    let g_norm = g.iter().map(|x| x * x).sum::<f64>().sqrt();
    let mut outcome = LineSearchOutcome {
        tau_opt: 0.0,
        accepted: None,
        stalled: true,
        probes: Vec::new(),
    };
    if g_norm == 0.0 || tau_max <= 0.0 {
        return Ok(outcome);
    }

    let a = &base.actuation;
    let point = |tau: f64| -> ActuationVector {
        let stepped = ActuationVector(
            a.0.iter().zip(g).map(|(&p, &gi)| p - tau * gi).collect(),
        );
        // Rounding can land a hair outside the box at tau_max.
        bounds.clamp(&stepped)
    };

    let tau0 = (cfg.initial_step / g_norm).min(tau_max);
    let mut probe = |tau: f64, outcome: &mut LineSearchOutcome| -> Result<usize, SolverError> {
        let evaluation = eval(&point(tau))?;
        outcome.probes.push(LsProbe { tau, evaluation });
        Ok(outcome.probes.len() - 1)
    };

    let first = probe(tau0, &mut outcome)?;
    // (left, middle, right) bracket around the best probe, using the
    // incumbent at tau = 0 as the left shoulder when needed.
    let mut bracket: Option<(usize, usize)> = None; // indices; left of first is tau=0
    let mut best = if outcome.probes[first].evaluation.total() < base.total() {
        // Expansion while the objective keeps falling.
        let mut best = first;
        while outcome.probes.len() < cfg.max_probes {
            let tau_prev = outcome.probes[best].tau;
            if tau_prev >= tau_max {
                break;
            }
            let tau_next = (tau_prev * cfg.expand).min(tau_max);
            let idx = probe(tau_next, &mut outcome)?;
            if outcome.probes[idx].evaluation.total()
                < outcome.probes[best].evaluation.total()
            {
                best = idx;
            } else {
                bracket = Some((best, idx));
                break;
            }
        }
        Some(best)
    } else {
        // Shrink toward the incumbent until something improves.
        let mut right = first;
        let mut found = None;
        while outcome.probes.len() < cfg.max_probes {
            let tau_next = outcome.probes[right].tau * cfg.shrink;
            let idx = probe(tau_next, &mut outcome)?;
            if outcome.probes[idx].evaluation.total() < base.total() {
                found = Some(idx);
                bracket = Some((idx, right));
                break;
            }
            right = idx;
        }
        found
    };

    // One parabolic refinement through (left, mid, right) when a bracket
    // exists and budget remains; exact quadratics land on their minimum.
    if let (Some(best_idx), Some((mid, right))) = (best, bracket) {
        if outcome.probes.len() < cfg.max_probes {
            let (t2, d2) = (
                outcome.probes[mid].tau,
                outcome.probes[mid].evaluation.total(),
            );
            let (t3, d3) = (
                outcome.probes[right].tau,
                outcome.probes[right].evaluation.total(),
            );
            // Left shoulder: previous expansion probe or the incumbent.
            let (t1, d1) = outcome
                .probes
                .iter()
                .filter(|p| p.tau < t2)
                .max_by(|x, y| x.tau.total_cmp(&y.tau))
                .map(|p| (p.tau, p.evaluation.total()))
                .unwrap_or((0.0, base.total()));
            let num = (t2 - t1).powi(2) * (d2 - d3) - (t2 - t3).powi(2) * (d2 - d1);
            let den = (t2 - t1) * (d2 - d3) - (t2 - t3) * (d2 - d1);
            if den.abs() > 1e-300 {
                let vertex = t2 - 0.5 * num / den;
                let spread = (t3 - t1).abs();
                if vertex.is_finite()
                    && vertex > t1
                    && vertex < t3
                    && (vertex - t2).abs() > 1e-9 * spread
                {
                    let idx = probe(vertex.min(tau_max), &mut outcome)?;
                    if outcome.probes[idx].evaluation.total()
                        < outcome.probes[best_idx].evaluation.total()
                    {
                        best = Some(idx);
                    }
                }
            }
        }
    }

    if let Some(idx) = best {
        if outcome.probes[idx].evaluation.total() < base.total() {
            outcome.tau_opt = outcome.probes[idx].tau;
            outcome.accepted = Some(idx);
            outcome.stalled = false;
        }
    }
    Ok(outcome)
}
