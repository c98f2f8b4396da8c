//! Quasi-Newton acceleration: rank-one inverse-Jacobian updates satisfying
//! the secant condition, plus the damped root-finding step they drive.

use nalgebra::{DMatrix, DVector};

use crate::plant::{ActuationBounds, ActuationVector};

use super::SolverError;

/// Relative floor on the smallest singular value when inverting by SVD.
const SINGULAR_REL_TOL: f64 = 1e-10;
/// Relative guard on the update denominator.
const BREAKDOWN_REL_TOL: f64 = 1e-12;

/// Sherman–Morrison form of the good Broyden update on the inverse:
/// `J⁻¹ ← J⁻¹ + (Δa − J⁻¹Δd) Δaᵀ J⁻¹ / (Δaᵀ J⁻¹ Δd)`.
///
/// The result satisfies the inverse secant condition `J⁻¹ Δd = Δa` exactly
/// (up to rounding). A denominator below the guard reports a breakdown so
/// the caller can rebuild from finite differences.
pub fn broyden_inverse_update(
    j_inv: &DMatrix<f64>,
    delta_a: &[f64],
    delta_d: &[f64],
) -> Result<DMatrix<f64>, SolverError> {
    let da = DVector::from_column_slice(delta_a);
    let dd = DVector::from_column_slice(delta_d);
    let jd = j_inv * &dd;
    let da_t_jinv = da.transpose() * j_inv;
    let denominator = (da.transpose() * &jd)[(0, 0)];
    if denominator.abs() <= BREAKDOWN_REL_TOL * da.norm() * dd.norm() {
        return Err(SolverError::UpdateBreakdown);
    }
    Ok(j_inv + (da - jd) * da_t_jinv / denominator)
}

/// Inverse Jacobian carried across Broyden steps.
pub struct BroydenState {
    j_inv: DMatrix<f64>,
    lambda: f64,
}

impl BroydenState {
    /// Seed from a finite-difference Jacobian, inverted by SVD. Fails when
    /// the smallest singular value collapses relative to the largest.
    pub fn from_jacobian(jacobian: &DMatrix<f64>, lambda: f64) -> Result<Self, SolverError> {
        assert!(lambda > 0.0);
        let svd = jacobian.clone().svd(true, true);
        let s_max = svd.singular_values.max();
        if svd.singular_values.min() < SINGULAR_REL_TOL * s_max || s_max == 0.0 {
            return Err(SolverError::SingularJacobian);
        }
        let j_inv = svd
            .pseudo_inverse(0.0)
            .map_err(|_| SolverError::SingularJacobian)?;
        Ok(Self { j_inv, lambda })
    }

    pub fn j_inv(&self) -> &DMatrix<f64> {
        &self.j_inv
    }

    pub fn update(&mut self, delta_a: &[f64], delta_d: &[f64]) -> Result<(), SolverError> {
        self.j_inv = broyden_inverse_update(&self.j_inv, delta_a, delta_d)?;
        Ok(())
    }

    /// `‖J⁻¹Δd − Δa‖ / ‖Δa‖`, the relative secant defect.
    pub fn secant_residual(&self, delta_a: &[f64], delta_d: &[f64]) -> f64 {
        let da = DVector::from_column_slice(delta_a);
        let dd = DVector::from_column_slice(delta_d);
        (&self.j_inv * dd - &da).norm() / da.norm().max(1e-300)
    }

    /// Damped root-finding proposal `a − λ J⁻¹ d`, clamped into the box.
    pub fn propose(
        &self,
        a: &ActuationVector,
        d: &[f64],
        bounds: &ActuationBounds,
    ) -> ActuationVector {
        let step = &self.j_inv * DVector::from_column_slice(d);
        let raw = ActuationVector(
            a.0.iter()
                .enumerate()
                .map(|(i, &p)| p - self.lambda * step[i])
                .collect(),
        );
        bounds.clamp(&raw)
    }
}
