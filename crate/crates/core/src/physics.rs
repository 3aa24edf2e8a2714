//! Discretized building thermal balance: residual evaluation, the
//! physics loss used during training, and an independent least-squares
//! coefficient estimator.
//!
//! The forward-difference residual at step `t` is
//!
//! ```text
//! r_t = (T_ra[t+1] - T_ra[t]) - (a*(T_oa[t] - T_ra[t]) - b*Q_cool[t] + c*Q_hw[t])
//! ```
//!
//! in physical units (degC, kW per half-hour step). The half-hour interval
//! and the hot-water correction factor are absorbed into the coefficients.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{DailyProfile, Dataset, Variable, STEPS_PER_DAY};
use crate::error::{Error, Result};

/// Interior steps of a 48-step day.
pub const RESIDUAL_LEN: usize = STEPS_PER_DAY - 1;

/// Learnable scalars of the thermal balance. Positivity is not enforced.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysicsCoefficients {
    /// Outdoor-temperature coupling, dimensionless.
    pub a: f64,
    /// Cooling-flow coupling, K/kW per step.
    pub b: f64,
    /// Heating-flow coupling, K/kW per step.
    pub c: f64,
}

impl PhysicsCoefficients {
    pub const fn new(a: f64, b: f64, c: f64) -> Self {
        PhysicsCoefficients { a, b, c }
    }

    /// The conventional starting point for training.
    pub const fn ones() -> Self {
        PhysicsCoefficients::new(1.0, 1.0, 1.0)
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.a, self.b, self.c]
    }

    pub fn is_finite(&self) -> bool {
        self.a.is_finite() && self.b.is_finite() && self.c.is_finite()
    }
}

/// Forward-difference residuals over the 47 interior steps.
///
/// All sequences must hold 48 physical-unit values.
pub fn residual(
    t_ra: &[f64],
    t_oa: &[f64],
    q_cool: &[f64],
    q_hw: &[f64],
    coeffs: &PhysicsCoefficients,
) -> Vec<f64> {
    assert_eq!(t_ra.len(), STEPS_PER_DAY);
    assert_eq!(t_oa.len(), STEPS_PER_DAY);
    assert_eq!(q_cool.len(), STEPS_PER_DAY);
    assert_eq!(q_hw.len(), STEPS_PER_DAY);
    (0..RESIDUAL_LEN)
        .map(|t| {
            (t_ra[t + 1] - t_ra[t])
                - (coeffs.a * (t_oa[t] - t_ra[t]) - coeffs.b * q_cool[t] + coeffs.c * q_hw[t])
        })
        .collect()
}

/// Residuals of a profile carrying all four variables.
pub fn residual_of_profile(
    profile: &DailyProfile,
    coeffs: &PhysicsCoefficients,
) -> Result<Vec<f64>> {
    let get = |var: Variable| {
        profile
            .get(var)
            .ok_or_else(|| Error::InvalidArgument(format!("profile lacks variable {var}")))
    };
    Ok(residual(
        get(Variable::IndoorTemp)?,
        get(Variable::OutdoorTemp)?,
        get(Variable::CoolingFlow)?,
        get(Variable::HeatingFlow)?,
        coeffs,
    ))
}

/// Mean squared residual of a reconstructed day, on denormalized values.
pub fn physics_loss(profile: &DailyProfile, coeffs: &PhysicsCoefficients) -> Result<f64> {
    let r = residual_of_profile(profile, coeffs)?;
    Ok(r.iter().map(|x| x * x).sum::<f64>() / RESIDUAL_LEN as f64)
}

/// Ordinary least-squares estimate of the coefficients over a dataset.
///
/// Minimizes the summed squared residual across all days. Serves as the
/// training-free reference the trained coefficients are checked against.
pub fn fit_coefficients_ols(dataset: &Dataset) -> Result<PhysicsCoefficients> {
    let rows = dataset.len() * RESIDUAL_LEN;
    if rows < 3 {
        return Err(Error::InvalidArgument(
            "need at least 3 interior timesteps".into(),
        ));
    }
    let mut design = DMatrix::<f64>::zeros(rows, 3);
    let mut target = DVector::<f64>::zeros(rows);
    for (d, profile) in dataset.profiles.iter().enumerate() {
        let get = |var: Variable| {
            profile
                .get(var)
                .ok_or_else(|| Error::InvalidArgument(format!("profile lacks variable {var}")))
        };
        let t_ra = get(Variable::IndoorTemp)?;
        let t_oa = get(Variable::OutdoorTemp)?;
        let q_cool = get(Variable::CoolingFlow)?;
        let q_hw = get(Variable::HeatingFlow)?;
        for t in 0..RESIDUAL_LEN {
            let row = d * RESIDUAL_LEN + t;
            design[(row, 0)] = t_oa[t] - t_ra[t];
            design[(row, 1)] = -q_cool[t];
            design[(row, 2)] = q_hw[t];
            target[row] = t_ra[t + 1] - t_ra[t];
        }
    }

    let svd = design.svd(true, true);
    let max_sv = svd.singular_values.max();
    let tol = max_sv * 1e-10;
    if svd.singular_values.iter().any(|&sv| sv <= tol) {
        return Err(Error::Singular(
            "a regressor is (numerically) zero or collinear; a coefficient is unidentifiable"
                .into(),
        ));
    }
    let solution = svd
        .solve(&target, tol)
        .map_err(|e| Error::Singular(e.to_string()))?;
    Ok(PhysicsCoefficients::new(solution[0], solution[1], solution[2]))
}
