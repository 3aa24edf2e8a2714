//! Continuous-missing corruption masks, zero-fill corruption, and
//! masking-noise training-set augmentation.
//!
//! A mask marks one contiguous run of missing timesteps within a day. The
//! run length is `round_half_up(cr * 48)` and the start index is drawn
//! uniformly so the run fits inside the day.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{DailyProfile, Variable, STEPS_PER_DAY};
use crate::error::{Error, Result};

/// Per-day boolean mask; `true` marks a missing timestep.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct CorruptionMask {
    missing: Vec<bool>,
}

impl CorruptionMask {
    pub fn empty() -> Self {
        CorruptionMask {
            missing: vec![false; STEPS_PER_DAY],
        }
    }

    pub fn full() -> Self {
        CorruptionMask {
            missing: vec![true; STEPS_PER_DAY],
        }
    }

    /// Mask with one contiguous run `[start, start+len)`.
    pub fn from_run(start: usize, len: usize) -> Self {
        assert!(start + len <= STEPS_PER_DAY, "run must fit inside the day");
        let mut missing = vec![false; STEPS_PER_DAY];
        missing[start..start + len].fill(true);
        CorruptionMask { missing }
    }

    /// Draw a mask at corruption rate `cr` from the supplied generator.
    pub fn sample(cr: f64, rng: &mut impl Rng) -> Result<Self> {
        if !(cr > 0.0 && cr <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "corruption rate must be in (0, 1], got {cr}"
            )));
        }
        let len = round_half_up(cr * STEPS_PER_DAY as f64);
        let start = rng.gen_range(0..=(STEPS_PER_DAY - len));
        Ok(CorruptionMask::from_run(start, len))
    }

    pub fn is_missing(&self, t: usize) -> bool {
        self.missing[t]
    }

    pub fn missing_count(&self) -> usize {
        self.missing.iter().filter(|&&m| m).count()
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.missing
    }

    /// The contiguous run as `(start, len)`, or `None` for an empty mask.
    pub fn run(&self) -> Option<(usize, usize)> {
        let start = self.missing.iter().position(|&m| m)?;
        let len = self.missing[start..].iter().take_while(|&&m| m).count();
        Some((start, len))
    }

    /// Whether the missing entries form a single contiguous run (or none).
    pub fn is_contiguous(&self) -> bool {
        match self.run() {
            Some((start, len)) => self.missing_count() == len
                && self.missing[start + len..].iter().all(|&m| !m),
            None => true,
        }
    }
}

fn round_half_up(x: f64) -> usize {
    (x + 0.5).floor() as usize
}

/// Deterministic mask at corruption rate `cr` for the given seed.
pub fn make_mask(cr: f64, seed: u64) -> Result<CorruptionMask> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    CorruptionMask::sample(cr, &mut rng)
}

/// Zero-fill the masked entries of the listed variables.
///
/// Values are assumed normalized, where zero is a valid in-range level.
/// The outdoor air temperature is never corrupted, whatever the list says;
/// in multivariate use all corrupted variables share the same mask.
pub fn corrupt(
    profile: &DailyProfile,
    mask: &CorruptionMask,
    variables: &[Variable],
) -> DailyProfile {
    let mut out = profile.clone();
    for &var in variables {
        if var == Variable::OutdoorTemp {
            continue;
        }
        if let Some(series) = out.get_mut(var) {
            for (t, x) in series.iter_mut().enumerate() {
                if mask.is_missing(t) {
                    *x = 0.0;
                }
            }
        }
    }
    out
}

/// One training example: a clean target plus the mask that corrupts it.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingPair {
    pub target: DailyProfile,
    pub mask: CorruptionMask,
}

impl TrainingPair {
    pub fn clean(target: DailyProfile) -> Self {
        TrainingPair {
            target,
            mask: CorruptionMask::empty(),
        }
    }

    /// The corrupted input seen by the model.
    pub fn input(&self, variables: &[Variable]) -> DailyProfile {
        corrupt(&self.target, &self.mask, variables)
    }
}

/// Enlarge a training set with masked copies.
///
/// Every original day passes through unmasked; `copies` additional pairs
/// per day are appended, each carrying an independently seeded mask at a
/// corruption rate drawn uniformly from `cr_set`. The result holds
/// `(copies + 1) * days.len()` pairs.
pub fn augment(
    days: &[DailyProfile],
    copies: usize,
    cr_set: &[f64],
    seed: u64,
) -> Result<Vec<TrainingPair>> {
    if copies > 0 && cr_set.is_empty() {
        return Err(Error::InvalidArgument(
            "augmentation requires a non-empty corruption-rate set".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pairs: Vec<TrainingPair> = days
        .iter()
        .map(|d| TrainingPair::clean(d.clone()))
        .collect();
    for day in days {
        for _ in 0..copies {
            let cr = cr_set[rng.gen_range(0..cr_set.len())];
            let mask = CorruptionMask::sample(cr, &mut rng)?;
            pairs.push(TrainingPair {
                target: day.clone(),
                mask,
            });
        }
    }
    Ok(pairs)
}
