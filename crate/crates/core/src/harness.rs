//! Experiment harness: dataset splitting, masked RMSE, the ablation grid,
//! the coefficient-convergence study, timing, and report files.
//!
//! Cells of the grid are independent jobs on a configurable worker pool.
//! All randomness is derived from the base seed and the cell coordinates,
//! so identical configurations produce byte-identical report files
//! regardless of scheduling. Splits and evaluation masks depend only on
//! (case, training rate, corruption rate, split seed), never on the
//! method, so every method of a cell sees the same data.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corruption::{corrupt, make_mask, CorruptionMask, TrainingPair};
use crate::data::{DailyProfile, Dataset, NormStats, Variable};
use crate::error::{Error, Result};
use crate::model::{
    build, impute, train, ModelKind, ModelSpec, TrainOptions, TrainedModel,
};
use crate::physics::PhysicsCoefficients;
use crate::seeds;

// Salts for deterministic seed derivation.
const SALT_SPLIT: u64 = 1;
const SALT_AUGMENT: u64 = 2;
const SALT_VAL_MASK: u64 = 3;
const SALT_EVAL_MASK: u64 = 4;
const SALT_RESTART: u64 = 5;
const SALT_STUDY: u64 = 6;

/// Index partition of a dataset into train/validation/evaluation sets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub eval: Vec<usize>,
}

/// Seeded three-way split: `floor(tr * n)` training days, `floor(0.1 * n)`
/// (at least one) validation days, the rest for evaluation.
pub fn split(n: usize, tr: f64, seed: u64) -> Result<SplitIndices> {
    if !(tr > 0.0 && tr <= 0.5) {
        return Err(Error::InvalidArgument(format!(
            "training rate must be in (0, 0.5], got {tr}"
        )));
    }
    let n_train = (tr * n as f64).floor() as usize;
    let n_val = ((0.1 * n as f64).floor() as usize).max(1);
    if n_train == 0 || n_train + n_val >= n {
        return Err(Error::InvalidArgument(format!(
            "dataset of {n} days is too small for tr = {tr} plus validation and evaluation"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    seeds::shuffle(&mut order, &mut rng);
    let mut train: Vec<usize> = order[..n_train].to_vec();
    let mut val: Vec<usize> = order[n_train..n_train + n_val].to_vec();
    let mut eval: Vec<usize> = order[n_train + n_val..].to_vec();
    train.sort_unstable();
    val.sort_unstable();
    eval.sort_unstable();
    Ok(SplitIndices { train, val, eval })
}

/// Pooled RMSE over masked entries, physical units.
#[derive(Debug, Clone, Copy, Default)]
pub struct RmseAccumulator {
    sum_sq: f64,
    count: usize,
}

impl RmseAccumulator {
    pub fn add(
        &mut self,
        imputed: &DailyProfile,
        truth: &DailyProfile,
        mask: &CorruptionMask,
        var: Variable,
    ) -> Result<()> {
        let a = imputed
            .get(var)
            .ok_or_else(|| Error::InvalidArgument(format!("imputed profile lacks {var}")))?;
        let b = truth
            .get(var)
            .ok_or_else(|| Error::InvalidArgument(format!("truth profile lacks {var}")))?;
        for t in 0..a.len() {
            if mask.is_missing(t) {
                let d = a[t] - b[t];
                self.sum_sq += d * d;
                self.count += 1;
            }
        }
        Ok(())
    }

    pub fn finish(&self) -> Result<f64> {
        if self.count == 0 {
            return Err(Error::InvalidArgument(
                "empty mask: no entries to evaluate".into(),
            ));
        }
        Ok((self.sum_sq / self.count as f64).sqrt())
    }
}

/// RMSE of one imputed day over its masked entries.
pub fn rmse(
    imputed: &DailyProfile,
    truth: &DailyProfile,
    mask: &CorruptionMask,
    var: Variable,
) -> Result<f64> {
    let mut acc = RmseAccumulator::default();
    acc.add(imputed, truth, mask, var)?;
    acc.finish()
}

/// Monitoring periods the experiments run on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum CaseLabel {
    /// The full prepared dataset.
    Case1,
    /// The high-correlation subset at IQR thresholds (50, 20) kW.
    Case2,
    /// Generated data with known coefficients.
    Synthetic,
}

impl CaseLabel {
    pub fn name(self) -> &'static str {
        match self {
            CaseLabel::Case1 => "case1",
            CaseLabel::Case2 => "case2",
            CaseLabel::Synthetic => "synthetic",
        }
    }

    fn index(self) -> u64 {
        match self {
            CaseLabel::Case1 => 0,
            CaseLabel::Case2 => 1,
            CaseLabel::Synthetic => 2,
        }
    }
}

impl std::fmt::Display for CaseLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// One monitoring period plus its data.
#[derive(Debug, Clone)]
pub struct CaseData {
    pub label: CaseLabel,
    pub data: Dataset,
}

/// An imputation method of the ablation: a baseline or a trained network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Method {
    Lin,
    Knn,
    Dae(ModelKind),
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Lin => "lin",
            Method::Knn => "knn",
            Method::Dae(kind) => kind.name(),
        }
    }

    pub fn parse(s: &str) -> Option<Method> {
        match s {
            "lin" => Some(Method::Lin),
            "knn" => Some(Method::Knn),
            other => ModelKind::parse(other).map(Method::Dae),
        }
    }

    /// Baselines plus every network configuration.
    pub fn all() -> Vec<Method> {
        let mut methods = vec![Method::Lin, Method::Knn];
        methods.extend(ModelKind::ALL.map(Method::Dae));
        methods
    }

    /// The variables this method imputes and is scored on.
    pub fn evaluated_variables(self) -> &'static [Variable] {
        match self {
            Method::Lin | Method::Knn => &[
                Variable::IndoorTemp,
                Variable::HeatingFlow,
                Variable::CoolingFlow,
            ],
            Method::Dae(kind) => kind.reconstruction_targets(),
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Coordinates of one executable grid cell (restarts run inside).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellKey {
    pub case: CaseLabel,
    pub method: Method,
    pub tr: f64,
    pub cr: f64,
    pub split_seed: u64,
}

impl CellKey {
    fn sort_key(&self) -> (u64, Method, u64, u64, u64) {
        (
            self.case.index(),
            self.method,
            self.tr.to_bits(),
            self.cr.to_bits(),
            self.split_seed,
        )
    }
}

/// Outcome of one cell: pooled per-variable RMSE on the evaluation days.
#[derive(Debug, Clone)]
pub struct CellResult {
    pub key: CellKey,
    pub rmse: BTreeMap<Variable, f64>,
    /// Final coefficients of the best restart (physics-informed cells).
    pub coeffs: Option<PhysicsCoefficients>,
    /// Wall clock of the full restart protocol, seconds.
    pub running_seconds: f64,
    /// Wall clock to impute the whole evaluation set, seconds.
    pub inference_seconds: f64,
    pub eval_days: usize,
    /// The evaluation masks as (start, length) runs, for audit; shared by
    /// every method of the cell.
    pub eval_masks: Vec<(usize, usize)>,
}

#[derive(Debug, Clone)]
pub struct CellFailure {
    pub key: CellKey,
    pub error: String,
}

/// Grid definition and execution knobs.
#[derive(Debug, Clone)]
pub struct AblationConfig {
    pub cases: Vec<CaseData>,
    pub methods: Vec<Method>,
    pub training_rates: Vec<f64>,
    pub corruption_rates: Vec<f64>,
    pub split_seeds: u64,
    pub restarts: u64,
    pub augment_copies: usize,
    pub knn_k: usize,
    pub specs: BTreeMap<ModelKind, ModelSpec>,
    pub train: TrainOptions,
    pub base_seed: u64,
    pub workers: usize,
}

impl AblationConfig {
    pub fn spec_for(&self, kind: ModelKind) -> ModelSpec {
        self.specs
            .get(&kind)
            .copied()
            .unwrap_or_else(|| ModelSpec::desk_default(kind))
    }
}

#[derive(Debug)]
pub struct AblationOutcome {
    pub results: Vec<CellResult>,
    pub failures: Vec<CellFailure>,
}

/// Run every cell of the grid; failures are recorded, not fatal.
pub fn run_ablation(config: &AblationConfig) -> Result<AblationOutcome> {
    if config.cases.is_empty() {
        return Err(Error::InvalidArgument("no cases selected".into()));
    }
    if config.methods.is_empty() {
        return Err(Error::InvalidArgument("no methods selected".into()));
    }
    let mut keys = Vec::new();
    for case in &config.cases {
        for &method in &config.methods {
            for &tr in &config.training_rates {
                for &cr in &config.corruption_rates {
                    for split_seed in 0..config.split_seeds {
                        keys.push((
                            CellKey {
                                case: case.label,
                                method,
                                tr,
                                cr,
                                split_seed,
                            },
                            &case.data,
                        ));
                    }
                }
            }
        }
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers)
        .build()
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let outcomes: Vec<std::result::Result<CellResult, CellFailure>> = pool.install(|| {
        keys.par_iter()
            .map(|(key, data)| {
                run_cell(config, *key, data).map_err(|e| CellFailure {
                    key: *key,
                    error: e.to_string(),
                })
            })
            .collect()
    });

    let mut results = Vec::new();
    let mut failures = Vec::new();
    for outcome in outcomes {
        match outcome {
            Ok(r) => results.push(r),
            Err(f) => failures.push(f),
        }
    }
    results.sort_by_key(|r| r.key.sort_key());
    failures.sort_by_key(|f| f.key.sort_key());
    Ok(AblationOutcome { results, failures })
}

fn cell_scope(key: &CellKey) -> [u64; 4] {
    [
        key.case.index(),
        key.tr.to_bits(),
        key.cr.to_bits(),
        key.split_seed,
    ]
}

fn scoped_seed(base: u64, key: &CellKey, salt: u64, extra: u64) -> u64 {
    let scope = cell_scope(key);
    seeds::derive(base, &[scope[0], scope[1], scope[2], scope[3], salt, extra])
}

/// Evaluation masks are shared by every method of a cell.
fn eval_mask(config: &AblationConfig, key: &CellKey, day: usize) -> Result<CorruptionMask> {
    make_mask(
        key.cr,
        scoped_seed(config.base_seed, key, SALT_EVAL_MASK, day as u64),
    )
}

fn run_cell(config: &AblationConfig, key: CellKey, data: &Dataset) -> Result<CellResult> {
    // The split ignores the corruption rate so a (case, tr, seed) triple
    // reuses the same partition across CRs and methods.
    let split_seed = seeds::derive(
        config.base_seed,
        &[key.case.index(), key.tr.to_bits(), SALT_SPLIT, key.split_seed],
    );
    let indices = split(data.len(), key.tr, split_seed)?;

    match key.method {
        Method::Lin | Method::Knn => run_baseline_cell(config, key, data, &indices),
        Method::Dae(kind) => run_dae_cell(config, key, data, &indices, kind, None),
    }
}

fn run_baseline_cell(
    config: &AblationConfig,
    key: CellKey,
    data: &Dataset,
    indices: &SplitIndices,
) -> Result<CellResult> {
    let variables = key.method.evaluated_variables();
    let references: Vec<DailyProfile> = indices
        .train
        .iter()
        .map(|&i| data.profiles[i].clone())
        .collect();

    let started = Instant::now();
    let mut accs: BTreeMap<Variable, RmseAccumulator> = BTreeMap::new();
    let mut eval_masks = Vec::with_capacity(indices.eval.len());
    for (slot, &day) in indices.eval.iter().enumerate() {
        let truth = &data.profiles[day];
        let mask = eval_mask(config, &key, slot)?;
        let completed = match key.method {
            Method::Lin => crate::baselines::linear_interpolate(truth, &mask, variables)?,
            Method::Knn => {
                crate::baselines::knn_impute(truth, &mask, &references, config.knn_k, variables)?
            }
            Method::Dae(_) => unreachable!(),
        };
        for &var in variables {
            accs.entry(var)
                .or_default()
                .add(&completed, truth, &mask, var)?;
        }
        eval_masks.push(mask.run().unwrap_or((0, 0)));
    }
    let elapsed = started.elapsed().as_secs_f64();

    let mut rmse = BTreeMap::new();
    for (var, acc) in accs {
        rmse.insert(var, acc.finish()?);
    }
    Ok(CellResult {
        key,
        rmse,
        coeffs: None,
        running_seconds: 0.0,
        inference_seconds: elapsed,
        eval_days: indices.eval.len(),
        eval_masks,
    })
}

/// Train the cell's network with the restart protocol and return the
/// lowest-validation restart. Identical seeds produce identical draws for
/// every network kind, which is what makes like-for-like comparisons and
/// the physics-weight-zero equality possible.
fn train_cell_network(
    config: &AblationConfig,
    key: &CellKey,
    data: &Dataset,
    indices: &SplitIndices,
    kind: ModelKind,
    coeff_init: Option<PhysicsCoefficients>,
) -> Result<(TrainedModel, NormStats)> {
    let stats = NormStats::fit(&data.subset(&indices.train))?;
    let normalized = data.normalize_with(&stats);

    let train_days: Vec<DailyProfile> = indices
        .train
        .iter()
        .map(|&i| normalized.profiles[i].clone())
        .collect();
    let train_pairs = crate::corruption::augment(
        &train_days,
        config.augment_copies,
        &[key.cr],
        scoped_seed(config.base_seed, key, SALT_AUGMENT, 0),
    )?;
    let val_pairs: Vec<TrainingPair> = indices
        .val
        .iter()
        .enumerate()
        .map(|(slot, &i)| {
            Ok(TrainingPair {
                target: normalized.profiles[i].clone(),
                mask: make_mask(
                    key.cr,
                    scoped_seed(config.base_seed, key, SALT_VAL_MASK, slot as u64),
                )?,
            })
        })
        .collect::<Result<_>>()?;

    let options = TrainOptions {
        cr_set: vec![key.cr],
        ..config.train.clone()
    };
    let spec = config.spec_for(kind);
    let mut best: Option<TrainedModel> = None;
    for restart in 0..config.restarts {
        let model = build(&spec, coeff_init)?;
        let trained = train(
            model,
            &train_pairs,
            &val_pairs,
            scoped_seed(config.base_seed, key, SALT_RESTART, restart),
            &options,
            &stats,
        )?;
        let better = match &best {
            None => true,
            Some(b) => trained.best_val_loss() < b.best_val_loss(),
        };
        if better {
            best = Some(trained);
        }
    }
    Ok((best.expect("at least one restart"), stats))
}

fn run_dae_cell(
    config: &AblationConfig,
    key: CellKey,
    data: &Dataset,
    indices: &SplitIndices,
    kind: ModelKind,
    coeff_init: Option<PhysicsCoefficients>,
) -> Result<CellResult> {
    let started = Instant::now();
    let (trained, stats) = train_cell_network(config, &key, data, indices, kind, coeff_init)?;
    let running_seconds = started.elapsed().as_secs_f64();

    let normalized = data.normalize_with(&stats);
    let corruptible = kind.reconstruction_targets();
    let mut accs: BTreeMap<Variable, RmseAccumulator> = BTreeMap::new();
    let mut eval_masks = Vec::with_capacity(indices.eval.len());
    let inference_started = Instant::now();
    for (slot, &day) in indices.eval.iter().enumerate() {
        let truth = &data.profiles[day];
        let mask = eval_mask(config, &key, slot)?;
        let corrupted = corrupt(&normalized.profiles[day], &mask, corruptible);
        let completed = impute(&trained, &corrupted, &mask)?;
        for &var in key.method.evaluated_variables() {
            accs.entry(var)
                .or_default()
                .add(&completed, truth, &mask, var)?;
        }
        eval_masks.push(mask.run().unwrap_or((0, 0)));
    }
    let inference_seconds = inference_started.elapsed().as_secs_f64();

    let mut rmse = BTreeMap::new();
    for (var, acc) in accs {
        rmse.insert(var, acc.finish()?);
    }
    Ok(CellResult {
        key,
        rmse,
        coeffs: trained.coeffs,
        running_seconds,
        inference_seconds,
        eval_days: indices.eval.len(),
        eval_masks,
    })
}

/// Train one grid cell outside the ablation loop: same split, masks, and
/// restart protocol, returning the lowest-validation restart.
pub fn train_cell(
    config: &AblationConfig,
    data: &Dataset,
    case: CaseLabel,
    kind: ModelKind,
    tr: f64,
    cr: f64,
    split_seed: u64,
) -> Result<TrainedModel> {
    let key = CellKey {
        case,
        method: Method::Dae(kind),
        tr,
        cr,
        split_seed,
    };
    let derived = seeds::derive(
        config.base_seed,
        &[case.index(), tr.to_bits(), SALT_SPLIT, split_seed],
    );
    let indices = split(data.len(), tr, derived)?;
    let (trained, _) = train_cell_network(config, &key, data, &indices, kind, None)?;
    Ok(trained)
}

// ---------------------------------------------------------------------------
// Report tables
// ---------------------------------------------------------------------------

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation; zero for singletons.
fn sample_std(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

/// Population standard deviation, used across the enumerated CR axis.
fn population_std(xs: &[f64]) -> f64 {
    let m = mean(xs);
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64).sqrt()
}

/// Per-(case, method, tr, cr, variable) mean and spread over split seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct RmseRow {
    pub case: CaseLabel,
    pub method: Method,
    pub tr: f64,
    pub cr: f64,
    pub variable: Variable,
    pub rmse_mean: f64,
    pub rmse_std: f64,
    pub n: usize,
}

pub fn rmse_table(results: &[CellResult]) -> Vec<RmseRow> {
    let mut groups: BTreeMap<(u64, Method, u64, u64, Variable), Vec<f64>> = BTreeMap::new();
    let mut labels: BTreeMap<u64, CaseLabel> = BTreeMap::new();
    for r in results {
        labels.insert(r.key.case.index(), r.key.case);
        for (&var, &value) in &r.rmse {
            groups
                .entry((
                    r.key.case.index(),
                    r.key.method,
                    r.key.tr.to_bits(),
                    r.key.cr.to_bits(),
                    var,
                ))
                .or_default()
                .push(value);
        }
    }
    groups
        .into_iter()
        .map(|((case_idx, method, tr_bits, cr_bits, variable), values)| RmseRow {
            case: labels[&case_idx],
            method,
            tr: f64::from_bits(tr_bits),
            cr: f64::from_bits(cr_bits),
            variable,
            rmse_mean: mean(&values),
            rmse_std: sample_std(&values),
            n: values.len(),
        })
        .collect()
}

/// Averages over corruption rates in both orders: seeds first (within CR,
/// then across CRs) and CRs first (within seed, then across seeds). The
/// two agree on complete grids.
#[derive(Debug, Clone, PartialEq)]
pub struct RmseByTrRow {
    pub case: CaseLabel,
    pub method: Method,
    pub tr: f64,
    pub variable: Variable,
    pub mean_seeds_then_crs: f64,
    pub mean_crs_then_seeds: f64,
    pub n_cells: usize,
}

pub fn rmse_by_tr_table(results: &[CellResult]) -> Vec<RmseByTrRow> {
    type Key = (u64, Method, u64, Variable);
    let mut by_cr: BTreeMap<Key, BTreeMap<u64, Vec<f64>>> = BTreeMap::new();
    let mut by_seed: BTreeMap<Key, BTreeMap<u64, Vec<f64>>> = BTreeMap::new();
    let mut labels: BTreeMap<u64, CaseLabel> = BTreeMap::new();
    let mut counts: BTreeMap<Key, usize> = BTreeMap::new();
    for r in results {
        labels.insert(r.key.case.index(), r.key.case);
        for (&var, &value) in &r.rmse {
            let key = (r.key.case.index(), r.key.method, r.key.tr.to_bits(), var);
            by_cr
                .entry(key)
                .or_default()
                .entry(r.key.cr.to_bits())
                .or_default()
                .push(value);
            by_seed
                .entry(key)
                .or_default()
                .entry(r.key.split_seed)
                .or_default()
                .push(value);
            *counts.entry(key).or_default() += 1;
        }
    }
    by_cr
        .into_iter()
        .map(|(key, cr_groups)| {
            let (case_idx, method, tr_bits, variable) = key;
            let cr_means: Vec<f64> = cr_groups.values().map(|v| mean(v)).collect();
            let seed_means: Vec<f64> = by_seed[&key].values().map(|v| mean(v)).collect();
            RmseByTrRow {
                case: labels[&case_idx],
                method,
                tr: f64::from_bits(tr_bits),
                variable,
                mean_seeds_then_crs: mean(&cr_means),
                mean_crs_then_seeds: mean(&seed_means),
                n_cells: counts[&key],
            }
        })
        .collect()
}

/// Spread of the per-CR mean RMSE across corruption rates: the
/// robustness-to-missing-rate view.
#[derive(Debug, Clone, PartialEq)]
pub struct CrStdRow {
    pub case: CaseLabel,
    pub method: Method,
    pub tr: f64,
    pub variable: Variable,
    pub rmse_mean_over_crs: f64,
    pub rmse_std_over_crs: f64,
    pub n_crs: usize,
}

pub fn cr_std_table(results: &[CellResult]) -> Vec<CrStdRow> {
    type Key = (u64, Method, u64, Variable);
    let mut by_cr: BTreeMap<Key, BTreeMap<u64, Vec<f64>>> = BTreeMap::new();
    let mut labels: BTreeMap<u64, CaseLabel> = BTreeMap::new();
    for r in results {
        labels.insert(r.key.case.index(), r.key.case);
        for (&var, &value) in &r.rmse {
            by_cr
                .entry((r.key.case.index(), r.key.method, r.key.tr.to_bits(), var))
                .or_default()
                .entry(r.key.cr.to_bits())
                .or_default()
                .push(value);
        }
    }
    by_cr
        .into_iter()
        .map(|((case_idx, method, tr_bits, variable), cr_groups)| {
            let cr_means: Vec<f64> = cr_groups.values().map(|v| mean(v)).collect();
            CrStdRow {
                case: labels[&case_idx],
                method,
                tr: f64::from_bits(tr_bits),
                variable,
                rmse_mean_over_crs: mean(&cr_means),
                rmse_std_over_crs: population_std(&cr_means),
                n_crs: cr_means.len(),
            }
        })
        .collect()
}

/// Physics coefficients by training rate, averaged over CRs and splits.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientRow {
    pub case: CaseLabel,
    pub tr: f64,
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub n: usize,
}

pub fn coefficients_table(results: &[CellResult]) -> Vec<CoefficientRow> {
    let mut groups: BTreeMap<(u64, u64), Vec<PhysicsCoefficients>> = BTreeMap::new();
    let mut labels: BTreeMap<u64, CaseLabel> = BTreeMap::new();
    for r in results {
        if let Some(coeffs) = r.coeffs {
            labels.insert(r.key.case.index(), r.key.case);
            groups
                .entry((r.key.case.index(), r.key.tr.to_bits()))
                .or_default()
                .push(coeffs);
        }
    }
    groups
        .into_iter()
        .map(|((case_idx, tr_bits), coeffs)| {
            let n = coeffs.len();
            let avg = |f: fn(&PhysicsCoefficients) -> f64| {
                coeffs.iter().map(f).sum::<f64>() / n as f64
            };
            CoefficientRow {
                case: labels[&case_idx],
                tr: f64::from_bits(tr_bits),
                a: avg(|c| c.a),
                b: avg(|c| c.b),
                c: avg(|c| c.c),
                n,
            }
        })
        .collect()
}

/// Write the four deterministic report files plus the failure log.
pub fn write_reports(dir: &Path, outcome: &AblationOutcome) -> Result<()> {
    std::fs::create_dir_all(dir)?;

    let mut out = BufWriter::new(File::create(dir.join("ablation_rmse.csv"))?);
    writeln!(out, "case,model,tr,cr,variable,rmse_mean,rmse_std,n")?;
    for row in rmse_table(&outcome.results) {
        writeln!(
            out,
            "{},{},{:.2},{:.2},{},{:.6},{:.6},{}",
            row.case,
            row.method,
            row.tr,
            row.cr,
            row.variable,
            row.rmse_mean,
            row.rmse_std,
            row.n
        )?;
    }
    out.flush()?;

    let mut out = BufWriter::new(File::create(dir.join("ablation_rmse_by_tr.csv"))?);
    writeln!(
        out,
        "case,model,tr,variable,rmse_mean_seeds_then_crs,rmse_mean_crs_then_seeds,n_cells"
    )?;
    for row in rmse_by_tr_table(&outcome.results) {
        writeln!(
            out,
            "{},{},{:.2},{},{:.6},{:.6},{}",
            row.case,
            row.method,
            row.tr,
            row.variable,
            row.mean_seeds_then_crs,
            row.mean_crs_then_seeds,
            row.n_cells
        )?;
    }
    out.flush()?;

    let mut out = BufWriter::new(File::create(dir.join("ablation_cr_std.csv"))?);
    writeln!(
        out,
        "case,model,tr,variable,rmse_mean_over_crs,rmse_std_over_crs,n_crs"
    )?;
    for row in cr_std_table(&outcome.results) {
        writeln!(
            out,
            "{},{},{:.2},{},{:.6},{:.6},{}",
            row.case,
            row.method,
            row.tr,
            row.variable,
            row.rmse_mean_over_crs,
            row.rmse_std_over_crs,
            row.n_crs
        )?;
    }
    out.flush()?;

    let mut out = BufWriter::new(File::create(dir.join("coefficients.csv"))?);
    writeln!(out, "case,tr,a,b,c,n")?;
    for row in coefficients_table(&outcome.results) {
        writeln!(
            out,
            "{},{:.2},{:.6},{:.6},{:.6},{}",
            row.case, row.tr, row.a, row.b, row.c, row.n
        )?;
    }
    out.flush()?;

    // Audit trail: the evaluation masks of every cell, deduplicated
    // across methods (they share them by construction).
    let mut out = BufWriter::new(File::create(dir.join("eval_masks.csv"))?);
    writeln!(out, "case,tr,cr,split_seed,day_slot,start,length")?;
    let mut seen: BTreeMap<(u64, u64, u64, u64), &CellResult> = BTreeMap::new();
    for r in &outcome.results {
        seen.entry((
            r.key.case.index(),
            r.key.tr.to_bits(),
            r.key.cr.to_bits(),
            r.key.split_seed,
        ))
        .or_insert(r);
    }
    for ((_, _, _, split_seed), r) in seen {
        for (slot, (start, length)) in r.eval_masks.iter().enumerate() {
            writeln!(
                out,
                "{},{:.2},{:.2},{},{},{},{}",
                r.key.case, r.key.tr, r.key.cr, split_seed, slot, start, length
            )?;
        }
    }
    out.flush()?;

    let mut out = BufWriter::new(File::create(dir.join("failures.csv"))?);
    writeln!(out, "case,model,tr,cr,split_seed,error")?;
    for f in &outcome.failures {
        writeln!(
            out,
            "{},{},{:.2},{:.2},{},{}",
            f.key.case,
            f.key.method,
            f.key.tr,
            f.key.cr,
            f.key.split_seed,
            f.error.replace(',', ";")
        )?;
    }
    out.flush()?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Coefficient-convergence study
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct CoefficientStudyConfig {
    pub case: CaseLabel,
    pub tr: f64,
    pub cr: f64,
    pub trials: usize,
    /// Explicit starting points; random uniform [0, 1) when absent.
    pub starts: Option<Vec<PhysicsCoefficients>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoefficientTrial {
    pub trial: usize,
    pub start: PhysicsCoefficients,
    pub finish: PhysicsCoefficients,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoefficientDispersion {
    pub mean: f64,
    pub std: f64,
    /// Standard deviation as a fraction of the absolute mean.
    pub relative: f64,
}

#[derive(Debug, Clone)]
pub struct CoefficientStudy {
    pub trials: Vec<CoefficientTrial>,
    /// Dispersion of the final a, b, c over trials, in that order.
    pub dispersion: [CoefficientDispersion; 3],
}

/// Train the physics-informed network from `trials` coefficient starting
/// points and report the start/final pairs plus the final dispersion.
/// Every trial reuses the split-seed-0, restart-seed-0 pipeline of the
/// ablation, so a single trial started from ones reproduces that cell.
pub fn coefficient_study(
    config: &AblationConfig,
    data: &Dataset,
    study: &CoefficientStudyConfig,
) -> Result<CoefficientStudy> {
    if study.trials == 0 {
        return Err(Error::InvalidArgument("need at least one trial".into()));
    }
    let key = CellKey {
        case: study.case,
        method: Method::Dae(ModelKind::PiDae),
        tr: study.tr,
        cr: study.cr,
        split_seed: 0,
    };
    let split_seed = seeds::derive(
        config.base_seed,
        &[key.case.index(), key.tr.to_bits(), SALT_SPLIT, key.split_seed],
    );
    let indices = split(data.len(), study.tr, split_seed)?;

    let starts: Vec<PhysicsCoefficients> = match &study.starts {
        Some(starts) => {
            if starts.len() != study.trials {
                return Err(Error::InvalidArgument(format!(
                    "{} starts for {} trials",
                    starts.len(),
                    study.trials
                )));
            }
            starts.clone()
        }
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(scoped_seed(
                config.base_seed,
                &key,
                SALT_STUDY,
                0,
            ));
            (0..study.trials)
                .map(|_| {
                    use rand::Rng;
                    PhysicsCoefficients::new(rng.gen::<f64>(), rng.gen::<f64>(), rng.gen::<f64>())
                })
                .collect()
        }
    };

    let single_restart = AblationConfig {
        restarts: 1,
        ..config.clone()
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers)
        .build()
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let trials: Vec<CoefficientTrial> = pool.install(|| {
        starts
            .par_iter()
            .enumerate()
            .map(|(index, &start)| {
                let (trained, _) = train_cell_network(
                    &single_restart,
                    &key,
                    data,
                    &indices,
                    ModelKind::PiDae,
                    Some(start),
                )?;
                Ok(CoefficientTrial {
                    trial: index,
                    start,
                    finish: trained.coeffs.expect("physics model"),
                })
            })
            .collect::<Result<_>>()
    })?;

    let dispersion = std::array::from_fn(|axis| {
        let finals: Vec<f64> = trials
            .iter()
            .map(|t| t.finish.as_array()[axis])
            .collect();
        let m = mean(&finals);
        let s = sample_std(&finals);
        CoefficientDispersion {
            mean: m,
            std: s,
            relative: if m.abs() > 0.0 { s / m.abs() } else { f64::INFINITY },
        }
    });
    Ok(CoefficientStudy { trials, dispersion })
}

/// Start/final pairs as delimited text, one row per (trial, coefficient).
pub fn write_coefficient_study(out: &mut impl Write, study: &CoefficientStudy) -> Result<()> {
    writeln!(out, "trial,coefficient,start,final")?;
    for t in &study.trials {
        for (name, start, finish) in [
            ("a", t.start.a, t.finish.a),
            ("b", t.start.b, t.finish.b),
            ("c", t.start.c, t.finish.c),
        ] {
            writeln!(out, "{},{},{:.6},{:.6}", t.trial, name, start, finish)?;
        }
    }
    Ok(())
}

pub fn write_coefficient_summary(out: &mut impl Write, study: &CoefficientStudy) -> Result<()> {
    writeln!(out, "coefficient,mean,std,relative_std")?;
    for (name, d) in ["a", "b", "c"].iter().zip(study.dispersion) {
        writeln!(out, "{},{:.6},{:.6},{:.6}", name, d.mean, d.std, d.relative)?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Timing
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InferenceTiming {
    pub kind: ModelKind,
    /// Evaluation days imputed so far.
    pub days: usize,
    /// Cumulative wall clock, seconds.
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct TimingReport {
    /// Wall clock of the full restart protocol per model.
    pub running: Vec<(ModelKind, f64)>,
    /// Cumulative inference time per (model, day count); non-decreasing
    /// in the day count by construction.
    pub inference: Vec<InferenceTiming>,
}

/// Time the restart protocol and per-day imputation of each model kind on
/// one (case, tr, cr, split 0) cell.
pub fn timing_report(
    config: &AblationConfig,
    data: &Dataset,
    case: CaseLabel,
    kinds: &[ModelKind],
    tr: f64,
    cr: f64,
) -> Result<TimingReport> {
    let key_for = |kind: ModelKind| CellKey {
        case,
        method: Method::Dae(kind),
        tr,
        cr,
        split_seed: 0,
    };
    let split_seed = seeds::derive(
        config.base_seed,
        &[case.index(), tr.to_bits(), SALT_SPLIT, 0],
    );
    let indices = split(data.len(), tr, split_seed)?;

    let mut running = Vec::new();
    let mut inference = Vec::new();
    for &kind in kinds {
        let key = key_for(kind);
        let started = Instant::now();
        let (trained, stats) = train_cell_network(config, &key, data, &indices, kind, None)?;
        running.push((kind, started.elapsed().as_secs_f64()));

        let normalized = data.normalize_with(&stats);
        let corruptible = kind.reconstruction_targets();
        let started = Instant::now();
        for (slot, &day) in indices.eval.iter().enumerate() {
            let mask = eval_mask(config, &key, slot)?;
            let corrupted = corrupt(&normalized.profiles[day], &mask, corruptible);
            let _ = impute(&trained, &corrupted, &mask)?;
            inference.push(InferenceTiming {
                kind,
                days: slot + 1,
                seconds: started.elapsed().as_secs_f64(),
            });
        }
    }
    Ok(TimingReport { running, inference })
}

pub fn write_timing_report(out: &mut impl Write, report: &TimingReport) -> Result<()> {
    writeln!(out, "model,metric,days,seconds")?;
    for (kind, seconds) in &report.running {
        writeln!(out, "{kind},running,,{seconds:.6}")?;
    }
    for row in &report.inference {
        writeln!(out, "{},inference,{},{:.6}", row.kind, row.days, row.seconds)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::{generate, SyntheticConfig};

    #[test]
    fn split_sizes_match_the_floor_rule() {
        // 19 days at tr = 0.5 -> 9 train; at 0.1 -> 1 train.
        let s = split(19, 0.5, 0).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.eval.len()), (9, 1, 9));
        let s = split(19, 0.1, 0).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.eval.len()), (1, 1, 17));
        // 363 days at tr = 0.1 -> 36 train.
        let s = split(363, 0.1, 4).unwrap();
        assert_eq!(s.train.len(), 36);
        assert_eq!(s.val.len(), 36);
        assert_eq!(s.eval.len(), 363 - 36 - 36);
    }

    #[test]
    fn split_partitions_the_dataset() {
        for seed in 0..20 {
            let s = split(37, 0.3, seed).unwrap();
            let mut all: Vec<usize> = s
                .train
                .iter()
                .chain(&s.val)
                .chain(&s.eval)
                .copied()
                .collect();
            all.sort_unstable();
            assert_eq!(all, (0..37).collect::<Vec<_>>());
        }
        assert_eq!(split(37, 0.3, 7).unwrap(), split(37, 0.3, 7).unwrap());
        assert_ne!(split(37, 0.3, 7).unwrap(), split(37, 0.3, 8).unwrap());
    }

    #[test]
    fn split_rejects_bad_inputs() {
        assert!(split(19, 0.0, 0).is_err());
        assert!(split(19, 0.6, 0).is_err());
        assert!(split(3, 0.1, 0).is_err()); // floor(0.3) = 0 training days
        assert!(split(2, 0.5, 0).is_err()); // nothing left for evaluation
    }

    fn profile_pair(values: (f64, f64)) -> (DailyProfile, DailyProfile) {
        let mk = |v: f64| {
            let mut map = std::collections::BTreeMap::new();
            map.insert(Variable::CoolingFlow, vec![v; 48]);
            DailyProfile::new("2021-01-01".parse().unwrap(), map).unwrap()
        };
        (mk(values.0), mk(values.1))
    }

    #[test]
    fn rmse_of_perfect_and_constant_error() {
        let (truth, _) = profile_pair((3.0, 0.0));
        let mask = CorruptionMask::from_run(4, 10);
        assert_eq!(rmse(&truth, &truth, &mask, Variable::CoolingFlow).unwrap(), 0.0);

        let (truth, off) = profile_pair((3.0, 4.5));
        assert!(
            (rmse(&off, &truth, &mask, Variable::CoolingFlow).unwrap() - 1.5).abs() < 1e-12
        );
    }

    #[test]
    fn rmse_needs_a_non_empty_mask() {
        let (truth, other) = profile_pair((3.0, 4.0));
        assert!(rmse(&other, &truth, &CorruptionMask::empty(), Variable::CoolingFlow).is_err());
    }

    #[test]
    fn rmse_ignores_observed_entries() {
        // Copying observed entries into the prediction changes nothing.
        let (truth, mut off) = profile_pair((3.0, 4.5));
        let mask = CorruptionMask::from_run(0, 6);
        let base = rmse(&off, &truth, &mask, Variable::CoolingFlow).unwrap();
        let observed = truth.get(Variable::CoolingFlow).unwrap()[6..48].to_vec();
        off.get_mut(Variable::CoolingFlow).unwrap()[6..48].copy_from_slice(&observed);
        assert_eq!(rmse(&off, &truth, &mask, Variable::CoolingFlow).unwrap(), base);
    }

    fn desk_config(data: Dataset) -> AblationConfig {
        let mut specs = BTreeMap::new();
        for kind in ModelKind::ALL {
            specs.insert(
                kind,
                ModelSpec {
                    kind,
                    filters_external: 6,
                    filters_internal: 5,
                    kernel: 3,
                    learning_rate: 3e-3,
                    batch_size: 32,
                },
            );
        }
        AblationConfig {
            cases: vec![CaseData {
                label: CaseLabel::Synthetic,
                data,
            }],
            methods: vec![
                Method::Lin,
                Method::Knn,
                Method::Dae(ModelKind::MultivariateDae2),
                Method::Dae(ModelKind::PiDae),
            ],
            training_rates: vec![0.5],
            corruption_rates: vec![0.2, 0.8],
            split_seeds: 2,
            restarts: 1,
            augment_copies: 2,
            knn_k: 3,
            specs,
            train: TrainOptions {
                max_epochs: 6,
                patience: 20,
                ..TrainOptions::default()
            },
            base_seed: 0,
            workers: 2,
        }
    }

    fn small_synthetic() -> Dataset {
        generate(&SyntheticConfig {
            days: 12,
            ..SyntheticConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn ablation_smoke_and_determinism() {
        let config = desk_config(small_synthetic());
        let outcome = run_ablation(&config).unwrap();
        assert!(outcome.failures.is_empty(), "{:?}", outcome.failures);
        // 4 methods x 1 tr x 2 cr x 2 seeds
        assert_eq!(outcome.results.len(), 16);

        // Every method of a (case, tr, cr, seed) cell sees the same
        // evaluation masks.
        type MaskRuns = [(usize, usize)];
        let mut shared: BTreeMap<(u64, u64, u64), &MaskRuns> = BTreeMap::new();
        for r in &outcome.results {
            let masks = shared
                .entry((r.key.tr.to_bits(), r.key.cr.to_bits(), r.key.split_seed))
                .or_insert(&r.eval_masks);
            assert_eq!(*masks, &r.eval_masks[..], "masks differ across methods");
        }

        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        write_reports(dir_a.path(), &outcome).unwrap();
        let again = run_ablation(&config).unwrap();
        write_reports(dir_b.path(), &again).unwrap();
        for file in [
            "ablation_rmse.csv",
            "ablation_rmse_by_tr.csv",
            "ablation_cr_std.csv",
            "coefficients.csv",
            "eval_masks.csv",
            "failures.csv",
        ] {
            let a = std::fs::read(dir_a.path().join(file)).unwrap();
            let b = std::fs::read(dir_b.path().join(file)).unwrap();
            assert_eq!(a, b, "{file} differs between identical runs");
        }
    }

    #[test]
    fn baselines_are_restart_invariant_and_masks_are_shared() {
        let data = small_synthetic();
        let config = desk_config(data);
        let mut more_restarts = config.clone();
        more_restarts.restarts = 2;
        let key = CellKey {
            case: CaseLabel::Synthetic,
            method: Method::Lin,
            tr: 0.5,
            cr: 0.2,
            split_seed: 0,
        };
        let a = run_cell(&config, key, &config.cases[0].data).unwrap();
        let b = run_cell(&more_restarts, key, &config.cases[0].data).unwrap();
        assert_eq!(a.rmse, b.rmse);
    }

    #[test]
    fn averaging_orders_agree_on_full_grids() {
        let config = desk_config(small_synthetic());
        let outcome = run_ablation(&config).unwrap();
        for row in rmse_by_tr_table(&outcome.results) {
            assert!(
                (row.mean_seeds_then_crs - row.mean_crs_then_seeds).abs() < 1e-12,
                "{row:?}"
            );
        }
    }

    #[test]
    fn coefficient_study_cardinality_and_identity() {
        let data = small_synthetic();
        let config = desk_config(data.clone());

        // Explicit single trial from ones reproduces the ablation cell.
        let study = coefficient_study(
            &config,
            &data,
            &CoefficientStudyConfig {
                case: CaseLabel::Synthetic,
                tr: 0.5,
                cr: 0.2,
                trials: 1,
                starts: Some(vec![PhysicsCoefficients::ones()]),
            },
        )
        .unwrap();
        assert_eq!(study.trials.len(), 1);
        let cell = run_cell(
            &config,
            CellKey {
                case: CaseLabel::Synthetic,
                method: Method::Dae(ModelKind::PiDae),
                tr: 0.5,
                cr: 0.2,
                split_seed: 0,
            },
            &data,
        )
        .unwrap();
        assert_eq!(Some(study.trials[0].finish), cell.coeffs);

        // Three random-start trials -> 9 (start, final) rows.
        let study = coefficient_study(
            &config,
            &data,
            &CoefficientStudyConfig {
                case: CaseLabel::Synthetic,
                tr: 0.5,
                cr: 0.2,
                trials: 3,
                starts: None,
            },
        )
        .unwrap();
        let mut rows = Vec::new();
        write_coefficient_study(&mut rows, &study).unwrap();
        let text = String::from_utf8(rows).unwrap();
        assert_eq!(text.lines().count(), 1 + 9);
    }

    #[test]
    fn timing_rows_and_monotonicity() {
        let data = small_synthetic();
        let config = desk_config(data.clone());
        let kinds = [ModelKind::MultivariateDae2, ModelKind::PiDae];
        let report =
            timing_report(&config, &data, CaseLabel::Synthetic, &kinds, 0.5, 0.2).unwrap();
        let eval_days = split(12, 0.5, seeds::derive(0, &[2, 0.5f64.to_bits(), SALT_SPLIT, 0]))
            .unwrap()
            .eval
            .len();
        assert_eq!(report.inference.len(), kinds.len() * eval_days);
        for kind in kinds {
            let series: Vec<f64> = report
                .inference
                .iter()
                .filter(|r| r.kind == kind)
                .map(|r| r.seconds)
                .collect();
            assert!(series.windows(2).all(|w| w[0] <= w[1]));
        }
        assert_eq!(report.running.len(), kinds.len());
        assert!(report.running.iter().all(|(_, s)| *s > 0.0));
    }
}
