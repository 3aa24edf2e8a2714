//! Pearson correlations, daily interquartile ranges, and IQR-threshold
//! filtering of building monitoring periods.

use std::io::Write;

use crate::data::{Dataset, Variable};
use crate::error::{Error, Result};

/// The six monitored variable pairs, in report order.
///
/// 1: indoor temperature vs cooling; 2: indoor temperature vs heating;
/// 3: heating vs cooling; 4: outdoor temperature vs cooling; 5: outdoor
/// temperature vs heating; 6: outdoor vs indoor temperature.
pub const PCC_PAIRS: [(Variable, Variable); 6] = [
    (Variable::IndoorTemp, Variable::CoolingFlow),
    (Variable::IndoorTemp, Variable::HeatingFlow),
    (Variable::HeatingFlow, Variable::CoolingFlow),
    (Variable::OutdoorTemp, Variable::CoolingFlow),
    (Variable::OutdoorTemp, Variable::HeatingFlow),
    (Variable::OutdoorTemp, Variable::IndoorTemp),
];

/// One row of the threshold-sweep report.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationRow {
    /// Cooling-flow IQR threshold, kW.
    pub iqr_cool_threshold: f64,
    /// Heating-flow IQR threshold, kW.
    pub iqr_heat_threshold: f64,
    pub days: usize,
    /// Pooled correlations for [`PCC_PAIRS`], each in [-1, 1].
    pub pcc: [f64; 6],
}

/// Sample Pearson correlation coefficient.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::InvalidArgument(format!(
            "length mismatch: {} vs {}",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 2 {
        return Err(Error::InvalidArgument(
            "need at least two observations".into(),
        ));
    }
    if is_constant(x) || is_constant(y) {
        return Err(Error::UndefinedCorrelation(
            "zero variance in an input".into(),
        ));
    }
    let n = x.len() as f64;
    let mean_x = x.iter().sum::<f64>() / n;
    let mean_y = y.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut var_x = 0.0;
    let mut var_y = 0.0;
    for (&a, &b) in x.iter().zip(y) {
        let dx = a - mean_x;
        let dy = b - mean_y;
        cov += dx * dy;
        var_x += dx * dx;
        var_y += dy * dy;
    }
    Ok(cov / (var_x * var_y).sqrt())
}

fn is_constant(x: &[f64]) -> bool {
    x.iter().all(|&v| v == x[0])
}

/// Linear-interpolation quantile of an unsorted sample.
fn quantile(values: &[f64], q: f64) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Daily interquartile range (Q3 - Q1) of one variable.
pub fn daily_iqr(profile: &crate::data::DailyProfile, var: Variable) -> Result<f64> {
    let series = profile
        .get(var)
        .ok_or_else(|| Error::InvalidArgument(format!("profile lacks variable {var}")))?;
    Ok(quantile(series, 0.75) - quantile(series, 0.25))
}

/// Keep days whose cooling and heating IQRs exceed the thresholds.
///
/// A zero threshold imposes no constraint for its variable, so the
/// unfiltered dataset comes back unchanged at (0, 0).
pub fn filter_days(dataset: &Dataset, thr_cool_kw: f64, thr_heat_kw: f64) -> Result<Dataset> {
    debug_assert!(thr_cool_kw >= 0.0 && thr_heat_kw >= 0.0);
    let mut kept = Vec::new();
    for profile in &dataset.profiles {
        let cool_ok =
            thr_cool_kw == 0.0 || daily_iqr(profile, Variable::CoolingFlow)? > thr_cool_kw;
        let heat_ok =
            thr_heat_kw == 0.0 || daily_iqr(profile, Variable::HeatingFlow)? > thr_heat_kw;
        if cool_ok && heat_ok {
            kept.push(profile.clone());
        }
    }
    Dataset::new(kept)
}

/// Pooled correlation of two variables over all timesteps of all days.
pub fn pooled_pearson(dataset: &Dataset, a: Variable, b: Variable) -> Result<f64> {
    let mut xs = Vec::with_capacity(dataset.len() * crate::data::STEPS_PER_DAY);
    let mut ys = Vec::with_capacity(xs.capacity());
    for profile in &dataset.profiles {
        xs.extend_from_slice(
            profile
                .get(a)
                .ok_or_else(|| Error::InvalidArgument(format!("missing variable {a}")))?,
        );
        ys.extend_from_slice(
            profile
                .get(b)
                .ok_or_else(|| Error::InvalidArgument(format!("missing variable {b}")))?,
        );
    }
    pearson(&xs, &ys)
}

/// Sweep a threshold grid and compute the pooled correlations of every
/// combination that retains at least one day.
pub fn correlation_table(
    dataset: &Dataset,
    grid: &[(f64, f64)],
) -> Result<Vec<CorrelationRow>> {
    if grid.is_empty() {
        return Err(Error::InvalidArgument("empty threshold grid".into()));
    }
    let mut rows = Vec::new();
    for &(thr_cool, thr_heat) in grid {
        let filtered = filter_days(dataset, thr_cool, thr_heat)?;
        if filtered.is_empty() {
            continue;
        }
        let mut pcc = [0.0; 6];
        for (slot, (a, b)) in pcc.iter_mut().zip(PCC_PAIRS) {
            *slot = pooled_pearson(&filtered, a, b)?;
        }
        rows.push(CorrelationRow {
            iqr_cool_threshold: thr_cool,
            iqr_heat_threshold: thr_heat,
            days: filtered.len(),
            pcc,
        });
    }
    Ok(rows)
}

/// The default sweep: both thresholds from 0 to 50 kW in 10 kW steps.
pub fn default_grid() -> Vec<(f64, f64)> {
    let steps = [0.0, 10.0, 20.0, 30.0, 40.0, 50.0];
    let mut grid = Vec::with_capacity(steps.len() * steps.len());
    for &c in &steps {
        for &h in &steps {
            grid.push((c, h));
        }
    }
    grid
}

/// Write the sweep as delimited text.
pub fn write_correlation_report(out: &mut impl Write, rows: &[CorrelationRow]) -> Result<()> {
    writeln!(
        out,
        "iqr_cool_kw,iqr_heat_kw,days,pcc_1,pcc_2,pcc_3,pcc_4,pcc_5,pcc_6"
    )?;
    for row in rows {
        write!(
            out,
            "{:.0},{:.0},{}",
            row.iqr_cool_threshold, row.iqr_heat_threshold, row.days
        )?;
        for p in row.pcc {
            write!(out, ",{p:.4}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}
