//! Raw HVAC record ingestion, flow derivation, building-level aggregation,
//! 30-minute resampling, daily slicing, and min-max normalization.
//!
//! Physical flow rates are derived from per-RTU air-side measurements and the
//! heat-pump water loop:
//!
//! ```text
//! Q_cool_i = V_sa_i * rho_air * cp_air * (T_sa_i - T_ma_i)      [W]
//! Q_hw     = V_shw  * rho_water * cp_water * (T_shw - T_rhw)    [W]
//! ```
//!
//! The hot-water volume flow arrives in m^3/h and is converted to m^3/s
//! before the water-side equation. The unknown correction factor of the
//! water loop is not applied here; it is absorbed into the heating
//! coefficient of the thermal-balance residual.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use chrono::{NaiveDate, NaiveDateTime, Timelike};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Half-hour steps in one daily profile.
pub const STEPS_PER_DAY: usize = 48;

/// Roof terminal units serving the building.
pub const RTU_COUNT: usize = 4;

/// Air density, kg/m^3.
pub const AIR_DENSITY: f64 = 1.204;
/// Air specific heat capacity, J/(kg*K).
pub const AIR_SPECIFIC_HEAT: f64 = 1006.0;
/// Water density, kg/m^3.
pub const WATER_DENSITY: f64 = 1000.0;
/// Water specific heat capacity, J/(kg*K).
pub const WATER_SPECIFIC_HEAT: f64 = 4200.0;

/// Building-level variables carried by daily profiles.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
pub enum Variable {
    /// Average indoor (return) air temperature, degC.
    #[serde(rename = "t_ra_avg")]
    IndoorTemp,
    /// Average outdoor air temperature, degC.
    #[serde(rename = "t_oa_avg")]
    OutdoorTemp,
    /// Total cooling flow rate, kW.
    #[serde(rename = "q_cool_tot")]
    CoolingFlow,
    /// Reheat water flow rate at the heat pump, kW.
    #[serde(rename = "q_hw")]
    HeatingFlow,
}

impl Variable {
    pub const ALL: [Variable; 4] = [
        Variable::IndoorTemp,
        Variable::OutdoorTemp,
        Variable::CoolingFlow,
        Variable::HeatingFlow,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variable::IndoorTemp => "t_ra_avg",
            Variable::OutdoorTemp => "t_oa_avg",
            Variable::CoolingFlow => "q_cool_tot",
            Variable::HeatingFlow => "q_hw",
        }
    }

    pub fn unit(self) -> &'static str {
        match self {
            Variable::IndoorTemp | Variable::OutdoorTemp => "degC",
            Variable::CoolingFlow | Variable::HeatingFlow => "kW",
        }
    }

    pub fn parse(s: &str) -> Option<Variable> {
        Variable::ALL.into_iter().find(|v| v.name() == s)
    }
}

impl std::fmt::Display for Variable {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// One timestamped row of HVAC operational data, in SI units after parsing.
#[derive(Debug, Clone)]
pub struct RawRecord {
    pub timestamp: NaiveDateTime,
    /// RTU supply air temperature, degC.
    pub supply_air_temp: [Option<f64>; RTU_COUNT],
    /// RTU return air temperature, degC.
    pub return_air_temp: [Option<f64>; RTU_COUNT],
    /// RTU mixed air temperature, degC.
    pub mixed_air_temp: [Option<f64>; RTU_COUNT],
    /// RTU outdoor air temperature, degC.
    pub outdoor_air_temp: [Option<f64>; RTU_COUNT],
    /// RTU filtered supply air volume flow, m^3/s.
    pub supply_air_flow: [Option<f64>; RTU_COUNT],
    /// Heat-pump supply hot water temperature, degC.
    pub supply_hot_water_temp: Option<f64>,
    /// Heat-pump return hot water temperature, degC.
    pub return_hot_water_temp: Option<f64>,
    /// Heat-pump supply hot water volume flow, m^3/h.
    pub hot_water_flow: Option<f64>,
}

impl RawRecord {
    pub fn empty(timestamp: NaiveDateTime) -> Self {
        RawRecord {
            timestamp,
            supply_air_temp: [None; RTU_COUNT],
            return_air_temp: [None; RTU_COUNT],
            mixed_air_temp: [None; RTU_COUNT],
            outdoor_air_temp: [None; RTU_COUNT],
            supply_air_flow: [None; RTU_COUNT],
            supply_hot_water_temp: None,
            return_hot_water_temp: None,
            hot_water_flow: None,
        }
    }
}

/// Heating/cooling flow rates derived from one raw record, in W.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct DerivedFlows {
    /// Cooling flow rate per RTU, W.
    pub cooling_w: [Option<f64>; RTU_COUNT],
    /// Reheat water flow rate, W.
    pub heating_w: Option<f64>,
}

/// Derive per-RTU cooling and heat-pump heating flow rates for one record.
///
/// A derived value is present only when every input it needs is present.
pub fn derive_flows(record: &RawRecord) -> DerivedFlows {
    let mut cooling_w = [None; RTU_COUNT];
    for (out, ((v_sa, t_sa), t_ma)) in cooling_w.iter_mut().zip(
        record
            .supply_air_flow
            .iter()
            .zip(&record.supply_air_temp)
            .zip(&record.mixed_air_temp),
    ) {
        if let (Some(v_sa), Some(t_sa), Some(t_ma)) = (v_sa, t_sa, t_ma) {
            *out = Some(v_sa * AIR_DENSITY * AIR_SPECIFIC_HEAT * (t_sa - t_ma));
        }
    }
    let heating_w = match (
        record.hot_water_flow,
        record.supply_hot_water_temp,
        record.return_hot_water_temp,
    ) {
        (Some(v_shw), Some(t_shw), Some(t_rhw)) => {
            // m^3/h -> m^3/s
            let v_si = v_shw / 3600.0;
            Some(v_si * WATER_DENSITY * WATER_SPECIFIC_HEAT * (t_shw - t_rhw))
        }
        _ => None,
    };
    DerivedFlows { cooling_w, heating_w }
}

/// One half-hour bin of the aggregated building-level series.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResampledBin {
    pub date: NaiveDate,
    /// Half-hour slot within the day, 0..48.
    pub slot: usize,
    /// Values in `Variable::ALL` order; `None` marks an empty bin.
    pub values: [Option<f64>; 4],
}

#[derive(Debug, Clone, Copy, Default)]
struct MeanAcc {
    sum: f64,
    count: usize,
}

impl MeanAcc {
    fn push(&mut self, x: f64) {
        self.sum += x;
        self.count += 1;
    }
    fn mean(self) -> Option<f64> {
        (self.count > 0).then(|| self.sum / self.count as f64)
    }
}

/// Aggregate raw records to building level and resample to 30-minute bins.
///
/// Per timestamp: indoor/outdoor temperatures are the mean over the four
/// RTUs, cooling is the sum over RTUs, heating comes from the heat pump;
/// flows are expressed in kW. An aggregate exists only when all of its
/// inputs exist at that timestamp. Each bin holds the arithmetic mean of
/// the raw samples falling inside it; bins without samples stay missing.
pub fn aggregate_and_resample(records: &[RawRecord]) -> Vec<ResampledBin> {
    let mut bins: BTreeMap<(NaiveDate, usize), [MeanAcc; 4]> = BTreeMap::new();

    for record in records {
        let flows = derive_flows(record);

        let t_ra = mean_of_all(&record.return_air_temp);
        let t_oa = mean_of_all(&record.outdoor_air_temp);
        let q_cool_kw = sum_of_all(&flows.cooling_w).map(|w| w / 1000.0);
        let q_hw_kw = flows.heating_w.map(|w| w / 1000.0);

        let date = record.timestamp.date();
        let slot =
            (record.timestamp.hour() as usize * 60 + record.timestamp.minute() as usize) / 30;
        let accs = bins.entry((date, slot)).or_default();
        for (acc, value) in accs.iter_mut().zip([t_ra, t_oa, q_cool_kw, q_hw_kw]) {
            if let Some(x) = value {
                acc.push(x);
            }
        }
    }

    bins.into_iter()
        .map(|((date, slot), accs)| ResampledBin {
            date,
            slot,
            values: [
                accs[0].mean(),
                accs[1].mean(),
                accs[2].mean(),
                accs[3].mean(),
            ],
        })
        .collect()
}

fn mean_of_all(values: &[Option<f64>; RTU_COUNT]) -> Option<f64> {
    let mut sum = 0.0;
    for v in values {
        sum += (*v)?;
    }
    Some(sum / RTU_COUNT as f64)
}

fn sum_of_all(values: &[Option<f64>; RTU_COUNT]) -> Option<f64> {
    let mut sum = 0.0;
    for v in values {
        sum += (*v)?;
    }
    Some(sum)
}

/// One day of one or more variables at 48 half-hour steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DailyProfile {
    pub date: NaiveDate,
    values: BTreeMap<Variable, Vec<f64>>,
}

impl DailyProfile {
    /// Build a profile, enforcing 48 finite entries per variable.
    pub fn new(date: NaiveDate, values: BTreeMap<Variable, Vec<f64>>) -> Result<Self> {
        for (var, series) in &values {
            if series.len() != STEPS_PER_DAY {
                return Err(Error::Malformed(format!(
                    "{date} {var}: expected {STEPS_PER_DAY} entries, got {}",
                    series.len()
                )));
            }
            if series.iter().any(|x| !x.is_finite()) {
                return Err(Error::Malformed(format!(
                    "{date} {var}: non-finite entry"
                )));
            }
        }
        Ok(DailyProfile { date, values })
    }

    pub fn get(&self, var: Variable) -> Option<&[f64]> {
        self.values.get(&var).map(Vec::as_slice)
    }

    pub fn get_mut(&mut self, var: Variable) -> Option<&mut [f64]> {
        self.values.get_mut(&var).map(Vec::as_mut_slice)
    }

    /// Variables present, in canonical order.
    pub fn variables(&self) -> Vec<Variable> {
        self.values.keys().copied().collect()
    }

    pub fn contains(&self, var: Variable) -> bool {
        self.values.contains_key(&var)
    }
}

/// Outcome of slicing a resampled series into complete days.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SliceReport {
    pub kept_days: usize,
    pub dropped_days: usize,
}

/// Slice a resampled series into daily profiles, keeping only calendar days
/// with all 48 bins present for every variable.
pub fn slice_days(bins: &[ResampledBin]) -> Result<(Dataset, SliceReport)> {
    let mut by_date: BTreeMap<NaiveDate, Vec<&ResampledBin>> = BTreeMap::new();
    for bin in bins {
        by_date.entry(bin.date).or_default().push(bin);
    }

    let mut profiles = Vec::new();
    let mut report = SliceReport::default();

    'days: for (date, day_bins) in by_date {
        let mut series: BTreeMap<Variable, Vec<f64>> = Variable::ALL
            .into_iter()
            .map(|v| (v, vec![f64::NAN; STEPS_PER_DAY]))
            .collect();
        let mut seen = [false; STEPS_PER_DAY];
        for bin in day_bins {
            seen[bin.slot] = true;
            for (var, value) in Variable::ALL.into_iter().zip(bin.values) {
                match value {
                    Some(x) => series.get_mut(&var).unwrap()[bin.slot] = x,
                    None => {
                        report.dropped_days += 1;
                        continue 'days;
                    }
                }
            }
        }
        if seen.iter().all(|&s| s) {
            profiles.push(DailyProfile::new(date, series)?);
            report.kept_days += 1;
        } else {
            report.dropped_days += 1;
        }
    }

    Ok((Dataset::new(profiles)?, report))
}

/// Per-variable min/max statistics backing the [0,1] scaling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    ranges: BTreeMap<Variable, (f64, f64)>,
}

impl NormStats {
    /// Fit statistics over a non-empty set of profiles.
    pub fn fit(profiles: &[&DailyProfile]) -> Result<Self> {
        let first = profiles
            .first()
            .ok_or_else(|| Error::InvalidArgument("empty fit subset".into()))?;
        let mut ranges = BTreeMap::new();
        for var in first.variables() {
            let mut min = f64::INFINITY;
            let mut max = f64::NEG_INFINITY;
            for p in profiles {
                let series = p.get(var).ok_or_else(|| {
                    Error::Malformed(format!("profile {} lacks variable {var}", p.date))
                })?;
                for &x in series {
                    min = min.min(x);
                    max = max.max(x);
                }
            }
            ranges.insert(var, (min, max));
        }
        Ok(NormStats { ranges })
    }

    pub fn range(&self, var: Variable) -> Option<(f64, f64)> {
        self.ranges.get(&var).copied()
    }

    /// Width of the fitted range; 0 for degenerate variables.
    pub fn span(&self, var: Variable) -> Option<f64> {
        self.range(var).map(|(min, max)| max - min)
    }

    pub fn normalize_value(&self, var: Variable, x: f64) -> f64 {
        let (min, max) = self.ranges[&var];
        if max > min {
            (x - min) / (max - min)
        } else {
            0.0
        }
    }

    pub fn denormalize_value(&self, var: Variable, x: f64) -> f64 {
        let (min, max) = self.ranges[&var];
        min + x * (max - min)
    }
}

/// Ordered collection of daily profiles, optionally carrying the
/// normalization statistics they are expressed in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub profiles: Vec<DailyProfile>,
    /// Present on normalized datasets: the statistics used for scaling.
    pub stats: Option<NormStats>,
}

impl Dataset {
    /// Build a dataset, enforcing a common variable set across profiles.
    pub fn new(profiles: Vec<DailyProfile>) -> Result<Self> {
        if let Some(first) = profiles.first() {
            let vars = first.variables();
            for p in &profiles {
                if p.variables() != vars {
                    return Err(Error::Malformed(format!(
                        "profile {} has a different variable set",
                        p.date
                    )));
                }
            }
        }
        Ok(Dataset { profiles, stats: None })
    }

    pub fn len(&self) -> usize {
        self.profiles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.profiles.is_empty()
    }

    pub fn variables(&self) -> Vec<Variable> {
        self.profiles
            .first()
            .map(|p| p.variables())
            .unwrap_or_default()
    }

    /// Profiles at the given indices, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Vec<&DailyProfile> {
        indices.iter().map(|&i| &self.profiles[i]).collect()
    }

    /// Min-max normalize every profile using statistics fitted on
    /// `fit_indices` only. The statistics travel with the result.
    pub fn normalize(&self, fit_indices: &[usize]) -> Result<Dataset> {
        let stats = NormStats::fit(&self.subset(fit_indices))?;
        Ok(self.normalize_with(&stats))
    }

    /// Normalize with pre-fitted statistics.
    pub fn normalize_with(&self, stats: &NormStats) -> Dataset {
        let profiles = self
            .profiles
            .iter()
            .map(|p| normalize_profile(p, stats))
            .collect();
        Dataset {
            profiles,
            stats: Some(stats.clone()),
        }
    }

    /// Invert normalization using the carried statistics.
    pub fn denormalize(&self) -> Result<Dataset> {
        let stats = self
            .stats
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("dataset carries no statistics".into()))?;
        let profiles = self
            .profiles
            .iter()
            .map(|p| denormalize_profile(p, stats))
            .collect();
        Ok(Dataset {
            profiles,
            stats: None,
        })
    }
}

pub fn normalize_profile(profile: &DailyProfile, stats: &NormStats) -> DailyProfile {
    map_profile(profile, |var, x| stats.normalize_value(var, x))
}

pub fn denormalize_profile(profile: &DailyProfile, stats: &NormStats) -> DailyProfile {
    map_profile(profile, |var, x| stats.denormalize_value(var, x))
}

fn map_profile(profile: &DailyProfile, f: impl Fn(Variable, f64) -> f64) -> DailyProfile {
    let values = profile
        .variables()
        .into_iter()
        .map(|var| {
            let series = profile.get(var).unwrap().iter().map(|&x| f(var, x)).collect();
            (var, series)
        })
        .collect();
    DailyProfile { date: profile.date, values }
}

// ---------------------------------------------------------------------------
// Raw CSV ingestion
// ---------------------------------------------------------------------------

const TIMESTAMP_COLUMN: &str = "timestamp";

fn rtu_columns(prefix: &str) -> [String; RTU_COUNT] {
    std::array::from_fn(|i| format!("{prefix}_{}", i + 1))
}

/// Read a delimited raw HVAC file with a header row.
///
/// Required columns: `timestamp` (ISO-8601) plus the Table-1 operational
/// symbols `t_sa_1..4`, `t_ra_1..4`, `t_ma_1..4`, `t_oa_1..4`, `v_sa_1..4`,
/// `t_shw`, `t_rhw`, `v_shw`. Empty cells mark missing samples.
pub fn read_raw_records(path: &Path, delimiter: u8) -> Result<Vec<RawRecord>> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .flexible(false)
        .from_reader(BufReader::new(File::open(path)?));

    let headers = reader.headers()?.clone();
    let index_of = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };

    let ts_idx = index_of(TIMESTAMP_COLUMN)?;
    let t_sa: Vec<usize> = column_indices(&index_of, &rtu_columns("t_sa"))?;
    let t_ra: Vec<usize> = column_indices(&index_of, &rtu_columns("t_ra"))?;
    let t_ma: Vec<usize> = column_indices(&index_of, &rtu_columns("t_ma"))?;
    let t_oa: Vec<usize> = column_indices(&index_of, &rtu_columns("t_oa"))?;
    let v_sa: Vec<usize> = column_indices(&index_of, &rtu_columns("v_sa"))?;
    let t_shw = index_of("t_shw")?;
    let t_rhw = index_of("t_rhw")?;
    let v_shw = index_of("v_shw")?;

    let mut records = Vec::new();
    let mut last_ts: Option<NaiveDateTime> = None;
    for (line, row) in reader.records().enumerate() {
        let row = row?;
        let ts_text = row.get(ts_idx).unwrap_or("").trim();
        let timestamp = parse_timestamp(ts_text).ok_or_else(|| {
            Error::Malformed(format!("row {}: bad timestamp `{ts_text}`", line + 2))
        })?;
        if let Some(prev) = last_ts {
            if timestamp <= prev {
                return Err(Error::Malformed(format!(
                    "row {}: timestamps not strictly increasing",
                    line + 2
                )));
            }
        }
        last_ts = Some(timestamp);

        let mut record = RawRecord::empty(timestamp);
        for i in 0..RTU_COUNT {
            record.supply_air_temp[i] = parse_cell(&row, t_sa[i], line)?;
            record.return_air_temp[i] = parse_cell(&row, t_ra[i], line)?;
            record.mixed_air_temp[i] = parse_cell(&row, t_ma[i], line)?;
            record.outdoor_air_temp[i] = parse_cell(&row, t_oa[i], line)?;
            record.supply_air_flow[i] = parse_cell(&row, v_sa[i], line)?;
        }
        record.supply_hot_water_temp = parse_cell(&row, t_shw, line)?;
        record.return_hot_water_temp = parse_cell(&row, t_rhw, line)?;
        record.hot_water_flow = parse_cell(&row, v_shw, line)?;
        records.push(record);
    }
    Ok(records)
}

fn column_indices(
    index_of: &impl Fn(&str) -> Result<usize>,
    names: &[String; RTU_COUNT],
) -> Result<Vec<usize>> {
    names.iter().map(|n| index_of(n)).collect()
}

fn parse_timestamp(text: &str) -> Option<NaiveDateTime> {
    NaiveDateTime::parse_from_str(text, "%Y-%m-%dT%H:%M:%S")
        .or_else(|_| NaiveDateTime::parse_from_str(text, "%Y-%m-%d %H:%M:%S"))
        .or_else(|_| NaiveDateTime::parse_from_str(text, "%Y-%m-%dT%H:%M"))
        .or_else(|_| NaiveDateTime::parse_from_str(text, "%Y-%m-%d %H:%M"))
        .ok()
}

fn parse_cell(row: &csv::StringRecord, idx: usize, line: usize) -> Result<Option<f64>> {
    let text = row.get(idx).unwrap_or("").trim();
    if text.is_empty() || text.eq_ignore_ascii_case("na") || text.eq_ignore_ascii_case("nan") {
        return Ok(None);
    }
    let value: f64 = text
        .parse()
        .map_err(|_| Error::Malformed(format!("row {}: bad number `{text}`", line + 2)))?;
    Ok(value.is_finite().then_some(value))
}

// ---------------------------------------------------------------------------
// Dataset file format: one row per day-variable with 48 value columns
// ---------------------------------------------------------------------------

/// Write a dataset file: header `date,variable,v00..v47`, one row per
/// (day, variable), full-precision values.
pub fn write_dataset(path: &Path, dataset: &Dataset) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    write!(out, "date,variable")?;
    for t in 0..STEPS_PER_DAY {
        write!(out, ",v{t:02}")?;
    }
    writeln!(out)?;
    for profile in &dataset.profiles {
        for var in profile.variables() {
            write!(out, "{},{}", profile.date, var.name())?;
            for &x in profile.get(var).unwrap() {
                write!(out, ",{x}")?;
            }
            writeln!(out)?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Read a dataset file produced by [`write_dataset`].
pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .from_reader(BufReader::new(File::open(path)?));
    let headers = reader.headers()?;
    if headers.len() != 2 + STEPS_PER_DAY {
        return Err(Error::Malformed(format!(
            "dataset file: expected {} columns, got {}",
            2 + STEPS_PER_DAY,
            headers.len()
        )));
    }

    let mut order: Vec<NaiveDate> = Vec::new();
    let mut days: BTreeMap<NaiveDate, BTreeMap<Variable, Vec<f64>>> = BTreeMap::new();
    for (line, row) in reader.records().enumerate() {
        let row = row?;
        let date: NaiveDate = row[0]
            .parse()
            .map_err(|_| Error::Malformed(format!("row {}: bad date `{}`", line + 2, &row[0])))?;
        let var = Variable::parse(&row[1]).ok_or_else(|| {
            Error::Malformed(format!("row {}: unknown variable `{}`", line + 2, &row[1]))
        })?;
        let mut series = Vec::with_capacity(STEPS_PER_DAY);
        for t in 0..STEPS_PER_DAY {
            let x: f64 = row[2 + t].parse().map_err(|_| {
                Error::Malformed(format!("row {}: bad number `{}`", line + 2, &row[2 + t]))
            })?;
            series.push(x);
        }
        if !days.contains_key(&date) {
            order.push(date);
        }
        days.entry(date).or_default().insert(var, series);
    }

    let profiles = order
        .into_iter()
        .map(|date| DailyProfile::new(date, days.remove(&date).unwrap()))
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(profiles)
}

/// Run `prepare`: raw records -> derived flows -> aggregation -> daily slices.
pub fn prepare(records: &[RawRecord]) -> Result<(Dataset, SliceReport)> {
    let bins = aggregate_and_resample(records);
    slice_days(&bins)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use chrono::NaiveTime;
    use proptest::prelude::*;

    fn ts(date: &str, h: u32, m: u32) -> NaiveDateTime {
        NaiveDate::parse_from_str(date, "%Y-%m-%d")
            .unwrap()
            .and_time(NaiveTime::from_hms_opt(h, m, 0).unwrap())
    }

    fn record_with_cooling(v_sa: f64, t_sa: f64, t_ma: f64) -> RawRecord {
        let mut r = RawRecord::empty(ts("2021-06-01", 0, 0));
        r.supply_air_flow[0] = Some(v_sa);
        r.supply_air_temp[0] = Some(t_sa);
        r.mixed_air_temp[0] = Some(t_ma);
        r
    }

    #[test]
    fn zero_temperature_difference_gives_zero_cooling() {
        let flows = derive_flows(&record_with_cooling(3.7, 18.0, 18.0));
        assert_eq!(flows.cooling_w[0], Some(0.0));
    }

    #[test]
    fn cooling_flow_hand_value() {
        // 1 m^3/s at -10 K: 1 * 1.204 * 1006 * (-10) = -12112.24 W
        let flows = derive_flows(&record_with_cooling(1.0, 10.0, 20.0));
        assert_abs_diff_eq!(flows.cooling_w[0].unwrap(), -12_112.24, epsilon = 1e-9);
    }

    #[test]
    fn heating_flow_hand_value() {
        // 3.6 m^3/h = 0.001 m^3/s at +10 K: 0.001 * 1000 * 4200 * 10 = 42 kW
        let mut r = RawRecord::empty(ts("2021-06-01", 0, 0));
        r.hot_water_flow = Some(3.6);
        r.supply_hot_water_temp = Some(50.0);
        r.return_hot_water_temp = Some(40.0);
        let flows = derive_flows(&r);
        assert_abs_diff_eq!(flows.heating_w.unwrap(), 42_000.0, epsilon = 1e-6);
    }

    #[test]
    fn missing_input_leaves_flow_missing() {
        let mut r = record_with_cooling(1.0, 10.0, 20.0);
        r.mixed_air_temp[0] = None;
        assert_eq!(derive_flows(&r).cooling_w[0], None);
    }

    proptest! {
        #[test]
        fn cooling_flow_linear_in_volume_flow(
            v in 0.01f64..10.0,
            t_sa in -10.0f64..35.0,
            t_ma in -10.0f64..35.0,
        ) {
            let q1 = derive_flows(&record_with_cooling(v, t_sa, t_ma)).cooling_w[0].unwrap();
            let q2 = derive_flows(&record_with_cooling(2.0 * v, t_sa, t_ma)).cooling_w[0].unwrap();
            prop_assert!((q2 - 2.0 * q1).abs() <= 1e-9 * q1.abs().max(1.0));
        }
    }

    fn full_record(t: NaiveDateTime, temp: f64, q_cool_each_kw: f64) -> RawRecord {
        let mut r = RawRecord::empty(t);
        for i in 0..RTU_COUNT {
            r.return_air_temp[i] = Some(temp);
            r.outdoor_air_temp[i] = Some(temp + 5.0);
            r.supply_air_temp[i] = Some(15.0);
            r.mixed_air_temp[i] = Some(15.0 - q_cool_each_kw * 1000.0 / AIR_DENSITY / AIR_SPECIFIC_HEAT);
            r.supply_air_flow[i] = Some(1.0);
        }
        r.hot_water_flow = Some(3.6);
        r.supply_hot_water_temp = Some(45.0);
        r.return_hot_water_temp = Some(40.0);
        r
    }

    #[test]
    fn aggregation_means_and_sums() {
        // 4 RTUs at 22 degC return air; per-RTU cooling 10/20/30/40 kW.
        let mut r = RawRecord::empty(ts("2021-06-01", 0, 7));
        for (i, q_kw) in [10.0, 20.0, 30.0, 40.0].into_iter().enumerate() {
            r.return_air_temp[i] = Some(22.0);
            r.outdoor_air_temp[i] = Some(30.0);
            r.supply_air_flow[i] = Some(1.0);
            r.mixed_air_temp[i] = Some(20.0);
            r.supply_air_temp[i] = Some(20.0 + q_kw * 1000.0 / (AIR_DENSITY * AIR_SPECIFIC_HEAT));
        }
        let bins = aggregate_and_resample(&[r]);
        assert_eq!(bins.len(), 1);
        assert_eq!(bins[0].slot, 0);
        assert_abs_diff_eq!(bins[0].values[0].unwrap(), 22.0, epsilon = 1e-12);
        assert_abs_diff_eq!(bins[0].values[2].unwrap(), 100.0, epsilon = 1e-9);
    }

    #[test]
    fn bin_mean_of_constant_samples() {
        // 30 one-minute samples of a constant signal in one bin.
        let records: Vec<RawRecord> = (0..30)
            .map(|m| full_record(ts("2021-06-01", 9, m), 21.0, 5.0))
            .collect();
        let bins = aggregate_and_resample(&records);
        assert_eq!(bins.len(), 1);
        assert_eq!(bins[0].slot, 18);
        assert_abs_diff_eq!(bins[0].values[2].unwrap(), 20.0, epsilon = 1e-9);
        assert_abs_diff_eq!(bins[0].values[0].unwrap(), 21.0, epsilon = 1e-12);
    }

    #[test]
    fn aggregation_commutes_with_scaling() {
        let mut r = RawRecord::empty(ts("2021-06-01", 0, 0));
        let mut r_scaled = RawRecord::empty(ts("2021-06-01", 0, 0));
        for i in 0..RTU_COUNT {
            for rec in [&mut r, &mut r_scaled] {
                rec.supply_air_temp[i] = Some(14.0 + i as f64);
                rec.mixed_air_temp[i] = Some(22.0);
            }
            r.supply_air_flow[i] = Some(1.0 + i as f64);
            r_scaled.supply_air_flow[i] = Some(3.0 * (1.0 + i as f64));
        }
        let q = sum_of_all(&derive_flows(&r).cooling_w).unwrap();
        let q_scaled = sum_of_all(&derive_flows(&r_scaled).cooling_w).unwrap();
        assert_abs_diff_eq!(q_scaled, 3.0 * q, epsilon = 1e-9 * q.abs());
    }

    fn day_of_records(date: &str, drop_last_bin: bool) -> Vec<RawRecord> {
        let mut records = Vec::new();
        for slot in 0..STEPS_PER_DAY {
            if drop_last_bin && slot == STEPS_PER_DAY - 1 {
                continue;
            }
            let h = (slot / 2) as u32;
            let m = if slot % 2 == 0 { 0 } else { 30 };
            records.push(full_record(ts(date, h, m), 20.0, 5.0));
        }
        records
    }

    #[test]
    fn slice_days_keeps_complete_days_only() {
        let mut records = day_of_records("2021-06-01", false);
        records.extend(day_of_records("2021-06-02", false));
        records.extend(day_of_records("2021-06-03", true));
        let (dataset, report) = prepare(&records).unwrap();
        assert_eq!(dataset.len(), 2);
        assert_eq!(report.kept_days, 2);
        assert_eq!(report.dropped_days, 1);
        for p in &dataset.profiles {
            for var in p.variables() {
                assert_eq!(p.get(var).unwrap().len(), STEPS_PER_DAY);
            }
        }
    }

    #[test]
    fn slice_days_empty_series() {
        let (dataset, report) = slice_days(&[]).unwrap();
        assert!(dataset.is_empty());
        assert_eq!(report.kept_days, 0);
        assert_eq!(report.dropped_days, 0);
    }

    fn profile_from(date: &str, values: &[(Variable, Vec<f64>)]) -> DailyProfile {
        DailyProfile::new(
            date.parse().unwrap(),
            values.iter().cloned().collect(),
        )
        .unwrap()
    }

    fn single_var_dataset(series: Vec<Vec<f64>>) -> Dataset {
        let profiles = series
            .into_iter()
            .enumerate()
            .map(|(i, s)| {
                profile_from(
                    &format!("2021-01-{:02}", i + 1),
                    &[(Variable::IndoorTemp, s)],
                )
            })
            .collect();
        Dataset::new(profiles).unwrap()
    }

    #[test]
    fn normalize_degenerate_range_maps_to_zero() {
        let ds = single_var_dataset(vec![vec![20.0; STEPS_PER_DAY]]);
        let normalized = ds.normalize(&[0]).unwrap();
        assert!(normalized.profiles[0]
            .get(Variable::IndoorTemp)
            .unwrap()
            .iter()
            .all(|&x| x == 0.0));
        // Degenerate inversion returns the fitted constant.
        let back = normalized.denormalize().unwrap();
        assert!(back.profiles[0]
            .get(Variable::IndoorTemp)
            .unwrap()
            .iter()
            .all(|&x| x == 20.0));
    }

    #[test]
    fn normalize_midpoint() {
        let mut series = vec![20.0; STEPS_PER_DAY];
        series[0] = 10.0;
        series[1] = 30.0;
        let ds = single_var_dataset(vec![series]);
        let normalized = ds.normalize(&[0]).unwrap();
        let row = normalized.profiles[0].get(Variable::IndoorTemp).unwrap();
        assert_abs_diff_eq!(row[5], 0.5, epsilon = 1e-15);
        assert_eq!(row[0], 0.0);
        assert_eq!(row[1], 1.0);
    }

    proptest! {
        #[test]
        fn normalize_round_trip(values in proptest::collection::vec(-50.0f64..400.0, STEPS_PER_DAY)) {
            let ds = single_var_dataset(vec![values.clone()]);
            let normalized = ds.normalize(&[0]).unwrap();
            let back = normalized.denormalize().unwrap();
            let row = back.profiles[0].get(Variable::IndoorTemp).unwrap();
            for (orig, round) in values.iter().zip(row) {
                prop_assert!((orig - round).abs() < 1e-9);
            }
            // Fit subset maps into [0,1].
            let norm_row = normalized.profiles[0].get(Variable::IndoorTemp).unwrap();
            for &x in norm_row {
                prop_assert!((-1e-12..=1.0 + 1e-12).contains(&x));
            }
        }
    }

    #[test]
    fn dataset_rejects_mixed_variable_sets() {
        let a = profile_from("2021-01-01", &[(Variable::IndoorTemp, vec![1.0; 48])]);
        let b = profile_from("2021-01-02", &[(Variable::HeatingFlow, vec![1.0; 48])]);
        assert!(Dataset::new(vec![a, b]).is_err());
    }

    #[test]
    fn dataset_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ds.csv");
        let profiles = vec![
            profile_from(
                "2021-03-05",
                &[
                    (Variable::IndoorTemp, (0..48).map(|t| 20.0 + 0.01 * t as f64).collect()),
                    (Variable::CoolingFlow, (0..48).map(|t| -3.0 + t as f64).collect()),
                ],
            ),
            profile_from(
                "2021-03-06",
                &[
                    (Variable::IndoorTemp, vec![21.125; 48]),
                    (Variable::CoolingFlow, vec![0.0; 48]),
                ],
            ),
        ];
        let ds = Dataset::new(profiles).unwrap();
        write_dataset(&path, &ds).unwrap();
        let back = read_dataset(&path).unwrap();
        assert_eq!(ds, back);
    }

    #[test]
    fn raw_reader_rejects_non_increasing_timestamps() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("raw.csv");
        let mut text = String::from("timestamp");
        for prefix in ["t_sa", "t_ra", "t_ma", "t_oa", "v_sa"] {
            for i in 1..=RTU_COUNT {
                text.push_str(&format!(",{prefix}_{i}"));
            }
        }
        text.push_str(",t_shw,t_rhw,v_shw\n");
        for ts in ["2021-01-01T00:01:00", "2021-01-01T00:01:00"] {
            text.push_str(ts);
            text.push_str(&",1.0".repeat(23));
            text.push('\n');
        }
        std::fs::write(&path, text).unwrap();
        assert!(matches!(
            read_raw_records(&path, b','),
            Err(Error::Malformed(_))
        ));
    }

    #[test]
    fn raw_reader_reports_missing_column() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("raw.csv");
        std::fs::write(&path, "timestamp,t_sa_1\n2021-01-01T00:00:00,1.0\n").unwrap();
        match read_raw_records(&path, b',') {
            Err(Error::MissingColumn(col)) => assert_eq!(col, "t_sa_2"),
            other => panic!("expected missing column error, got {other:?}"),
        }
    }
}
