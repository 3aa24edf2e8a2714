//! Ground-truth dataset generator: days that satisfy the thermal-balance
//! residual exactly for known coefficients, up to injected noise.
//!
//! Exogenous signals per day: the outdoor temperature follows a diurnal
//! sinusoid with a seeded day-level offset; cooling and heating are smooth
//! non-negative pulses with seeded amplitudes and distinct centers (so the
//! regressors are never collinear). The indoor temperature is integrated
//! forward from 21 degC with the residual equation itself.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;

use crate::data::{DailyProfile, Dataset, Variable, STEPS_PER_DAY};
use crate::error::{Error, Result};
use crate::physics::PhysicsCoefficients;

#[derive(Debug, Clone, Copy)]
pub struct SyntheticConfig {
    pub coeffs: PhysicsCoefficients,
    pub days: usize,
    /// Uniform noise amplitude added to the indoor temperature, degC.
    pub noise_amplitude: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            coeffs: PhysicsCoefficients::new(0.1, 0.02, 0.05),
            days: 100,
            noise_amplitude: 0.0,
            seed: 0,
        }
    }
}

const INDOOR_START: f64 = 21.0;
const INDOOR_MIN: f64 = 0.0;
const INDOOR_MAX: f64 = 45.0;
const COOLING_AMPLITUDE_MAX: f64 = 60.0;
const HEATING_AMPLITUDE_MAX: f64 = 20.0;

/// Generate a four-variable dataset with known coefficients.
pub fn generate(config: &SyntheticConfig) -> Result<Dataset> {
    if config.days == 0 {
        return Err(Error::InvalidArgument("need at least one day".into()));
    }
    if config.noise_amplitude < 0.0 {
        return Err(Error::InvalidArgument("noise amplitude must be >= 0".into()));
    }
    let coeffs = config.coeffs;
    if !coeffs.is_finite() || (1.0 - coeffs.a).abs() >= 1.0 {
        return Err(Error::Generation(format!(
            "coefficient a = {} makes the integration divergent (need |1 - a| < 1)",
            coeffs.a
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let start_date: chrono::NaiveDate = "2021-01-01".parse().unwrap();
    let mut profiles = Vec::with_capacity(config.days);

    for day in 0..config.days {
        let offset = rng.gen_range(-2.0..2.0);
        let cooling_amp = rng.gen_range(0.0..COOLING_AMPLITUDE_MAX);
        let heating_amp = rng.gen_range(0.0..HEATING_AMPLITUDE_MAX);

        let t_oa: Vec<f64> = (0..STEPS_PER_DAY)
            .map(|t| {
                15.0 + 8.0
                    * (2.0 * std::f64::consts::PI * t as f64 / STEPS_PER_DAY as f64
                        - std::f64::consts::FRAC_PI_2)
                        .sin()
                    + offset
            })
            .collect();
        // Afternoon cooling pulse and morning heating pulse; the narrow
        // widths keep the integrated temperature inside physical bounds
        // across the supported coefficient box.
        let q_cool: Vec<f64> = (0..STEPS_PER_DAY)
            .map(|t| cooling_amp * gaussian_pulse(t as f64, 30.0, 1.5))
            .collect();
        let q_hw: Vec<f64> = (0..STEPS_PER_DAY)
            .map(|t| heating_amp * gaussian_pulse(t as f64, 14.0, 2.0))
            .collect();

        let mut t_ra = vec![INDOOR_START; STEPS_PER_DAY];
        for t in 0..STEPS_PER_DAY - 1 {
            t_ra[t + 1] = t_ra[t] + coeffs.a * (t_oa[t] - t_ra[t]) - coeffs.b * q_cool[t]
                + coeffs.c * q_hw[t];
        }
        if config.noise_amplitude > 0.0 {
            for x in &mut t_ra {
                *x += rng.gen_range(-config.noise_amplitude..config.noise_amplitude);
            }
        }
        if let Some(bad) = t_ra
            .iter()
            .find(|&&x| !(INDOOR_MIN..=INDOOR_MAX).contains(&x))
        {
            return Err(Error::Generation(format!(
                "day {day}: indoor temperature {bad:.2} degC left [{INDOOR_MIN}, {INDOOR_MAX}] \
                 (coefficients a={}, b={}, c={})",
                coeffs.a, coeffs.b, coeffs.c
            )));
        }

        let mut values = BTreeMap::new();
        values.insert(Variable::IndoorTemp, t_ra);
        values.insert(Variable::OutdoorTemp, t_oa);
        values.insert(Variable::CoolingFlow, q_cool);
        values.insert(Variable::HeatingFlow, q_hw);
        profiles.push(DailyProfile::new(
            start_date + chrono::Days::new(day as u64),
            values,
        )?);
    }

    Dataset::new(profiles)
}

fn gaussian_pulse(t: f64, center: f64, width: f64) -> f64 {
    (-0.5 * ((t - center) / width).powi(2)).exp()
}
