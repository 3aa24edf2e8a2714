//! Classical imputation benchmarks: linear interpolation and k-nearest
//! neighbors with inverse-distance weighting.
//!
//! Both operate on physical-unit profiles, read only observed entries, and
//! never modify them.

use crate::corruption::CorruptionMask;
use crate::data::{DailyProfile, Variable, STEPS_PER_DAY};
use crate::error::{Error, Result};

/// Straight-line fill of the masked run of each listed variable. A run
/// touching a day boundary holds the nearest observed value constant.
pub fn linear_interpolate(
    profile: &DailyProfile,
    mask: &CorruptionMask,
    variables: &[Variable],
) -> Result<DailyProfile> {
    if mask.missing_count() == STEPS_PER_DAY {
        return Err(Error::InvalidArgument(
            "fully masked day: no anchors to interpolate from".into(),
        ));
    }
    let mut out = profile.clone();
    for &var in variables {
        let series = out
            .get_mut(var)
            .ok_or_else(|| Error::InvalidArgument(format!("profile lacks variable {var}")))?;
        let mut t = 0;
        while t < STEPS_PER_DAY {
            if !mask.is_missing(t) {
                t += 1;
                continue;
            }
            let run_start = t;
            let mut run_end = t;
            while run_end + 1 < STEPS_PER_DAY && mask.is_missing(run_end + 1) {
                run_end += 1;
            }
            let left = run_start.checked_sub(1).map(|i| series[i]);
            let right = (run_end + 1 < STEPS_PER_DAY).then(|| series[run_end + 1]);
            match (left, right) {
                (Some(lo), Some(hi)) => {
                    let span = (run_end + 2 - run_start) as f64;
                    for (k, slot) in (run_start..=run_end).enumerate() {
                        let frac = (k + 1) as f64 / span;
                        series[slot] = lo + frac * (hi - lo);
                    }
                }
                (Some(lo), None) => series[run_start..=run_end].fill(lo),
                (None, Some(hi)) => series[run_start..=run_end].fill(hi),
                (None, None) => unreachable!("fully masked day rejected above"),
            }
            t = run_end + 1;
        }
    }
    Ok(out)
}

/// Inverse-distance-weighted k-nearest-neighbor fill.
///
/// Distance is Euclidean over the query's observed entries, all variables
/// concatenated (masked positions of the listed variables excluded).
/// Masked positions are filled with the weighted average of the `k`
/// nearest reference days; zero-distance neighbors short-circuit to their
/// plain average. `k` larger than the reference set is clamped with a
/// warning.
pub fn knn_impute(
    query: &DailyProfile,
    mask: &CorruptionMask,
    references: &[DailyProfile],
    k: usize,
    variables: &[Variable],
) -> Result<DailyProfile> {
    if references.is_empty() {
        return Err(Error::InvalidArgument("empty reference set".into()));
    }
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    let k = if k > references.len() {
        log::warn!(
            "k = {k} exceeds the {} reference days; clamping",
            references.len()
        );
        references.len()
    } else {
        k
    };

    let query_vars = query.variables();
    let mut distances: Vec<(usize, f64)> = references
        .iter()
        .enumerate()
        .map(|(i, reference)| {
            let mut sum_sq = 0.0;
            for &var in &query_vars {
                let q = query.get(var).unwrap();
                let r = reference.get(var).ok_or_else(|| {
                    Error::InvalidArgument(format!("reference {} lacks {var}", reference.date))
                })?;
                let maskable = variables.contains(&var);
                for t in 0..STEPS_PER_DAY {
                    if maskable && mask.is_missing(t) {
                        continue;
                    }
                    let d = q[t] - r[t];
                    sum_sq += d * d;
                }
            }
            Ok((i, sum_sq.sqrt()))
        })
        .collect::<Result<_>>()?;
    distances.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.0.cmp(&b.0)));
    let nearest = &distances[..k];

    // Zero-distance neighbors are exact matches on the observed entries.
    let exact: Vec<usize> = nearest
        .iter()
        .filter(|(_, d)| *d <= f64::EPSILON)
        .map(|(i, _)| *i)
        .collect();
    let weights: Vec<(usize, f64)> = if exact.is_empty() {
        let total: f64 = nearest.iter().map(|(_, d)| 1.0 / d).sum();
        nearest.iter().map(|&(i, d)| (i, 1.0 / d / total)).collect()
    } else {
        let w = 1.0 / exact.len() as f64;
        exact.into_iter().map(|i| (i, w)).collect()
    };

    let mut out = query.clone();
    for &var in variables {
        let series = out
            .get_mut(var)
            .ok_or_else(|| Error::InvalidArgument(format!("profile lacks variable {var}")))?;
        for (t, slot) in series.iter_mut().enumerate() {
            if mask.is_missing(t) {
                *slot = weights
                    .iter()
                    .map(|&(i, w)| w * references[i].get(var).unwrap()[t])
                    .sum();
            }
        }
    }
    Ok(out)
}
