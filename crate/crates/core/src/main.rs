//! Command-line front end: prepare raw data, filter monitoring periods,
//! generate synthetic data, tune, train, evaluate, and run the full
//! experiment grids.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use pidae::config::{ModelOverride, RunConfig};
use pidae::corruption::{corrupt, make_mask};
use pidae::data::{self, Dataset, Variable};
use pidae::error::{Error, Result};
use pidae::harness::{
    self, AblationConfig, CaseData, CaseLabel, CoefficientStudyConfig, Method, RmseAccumulator,
};
use pidae::model::{self, ModelKind, TrainOptions};
use pidae::physics::PhysicsCoefficients;
use pidae::synthetic::{self, SyntheticConfig};
use pidae::tuning::{self, SearchSpace};
use pidae::{seeds, Result as PidaeResult};

#[derive(Parser)]
#[command(
    name = "pidae",
    about = "Imputation of missing building energy time series with (physics-informed) denoising autoencoders",
    version
)]
struct Cli {
    /// Base seed for every derived random stream.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    /// Worker threads for grid execution (0 = all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,

    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Restore the full experimental grid (10 splits, 10 restarts,
    /// 5 training rates, 4 corruption rates).
    #[arg(long, global = true)]
    paper_scale: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Ingest a raw HVAC file and write the processed dataset.
    Prepare {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// IQR threshold sweep with pooled correlations.
    Filter {
        #[arg(long)]
        dataset: PathBuf,
        /// Report file; stdout when absent.
        #[arg(long)]
        output: Option<PathBuf>,
        /// Also write the (50, 20) kW high-correlation subset here.
        #[arg(long)]
        case2_output: Option<PathBuf>,
    },
    /// Generate a synthetic dataset with known coefficients.
    Synth {
        #[arg(long, default_value_t = 100)]
        days: usize,
        /// Uniform noise amplitude on the indoor temperature, degC.
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
        #[arg(long, default_value_t = 0.1)]
        coeff_a: f64,
        #[arg(long, default_value_t = 0.02)]
        coeff_b: f64,
        #[arg(long, default_value_t = 0.05)]
        coeff_c: f64,
        #[arg(long)]
        output: PathBuf,
    },
    /// Random hyperparameter search for one model kind and corruption rate.
    Tune {
        #[command(flatten)]
        source: DataSource,
        #[arg(long)]
        model: String,
        #[arg(long)]
        cr: f64,
        #[arg(long, default_value_t = 0.5)]
        tr: f64,
        /// Trial count; defaults to the configured budget.
        #[arg(long)]
        budget: Option<usize>,
        /// Trial log file.
        #[arg(long)]
        output: PathBuf,
        /// Write the best spec as a config fragment consumed via --config.
        #[arg(long)]
        save_config: Option<PathBuf>,
    },
    /// Train one configuration with the restart protocol.
    Train {
        #[command(flatten)]
        source: DataSource,
        #[arg(long)]
        model: String,
        #[arg(long)]
        tr: f64,
        #[arg(long)]
        cr: f64,
        #[arg(long, default_value_t = 0)]
        split_seed: u64,
        /// Checkpoint file.
        #[arg(long)]
        output: PathBuf,
        /// Optional training-history file.
        #[arg(long)]
        history: Option<PathBuf>,
    },
    /// Masked imputation error of a checkpoint on a dataset.
    Evaluate {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Corruption rates; defaults to the configured set.
        #[arg(long)]
        cr: Vec<f64>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// The full ablation grid with report files.
    Ablation {
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Include the full dataset as case 1 (needs --dataset).
        #[arg(long)]
        case1: bool,
        /// Include the (50, 20) kW subset as case 2 (needs --dataset).
        #[arg(long)]
        case2: bool,
        /// Include a generated dataset.
        #[arg(long)]
        synthetic: bool,
        #[arg(long, default_value_t = 40)]
        synth_days: usize,
        /// Comma-separated methods; defaults to baselines plus all six
        /// network configurations.
        #[arg(long, value_delimiter = ',')]
        models: Vec<String>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Train the physics-informed model from several coefficient starts.
    CoeffStudy {
        #[command(flatten)]
        source: DataSource,
        #[arg(long, default_value_t = 0.5)]
        tr: f64,
        #[arg(long, default_value_t = 0.4)]
        cr: f64,
        #[arg(long, default_value_t = 10)]
        trials: usize,
        /// Start every trial from (1, 1, 1) instead of random points.
        #[arg(long)]
        start_ones: bool,
        /// Start/final pairs file.
        #[arg(long)]
        output: PathBuf,
        /// Per-coefficient dispersion file.
        #[arg(long)]
        summary_output: Option<PathBuf>,
    },
    /// Running and inference times of the network configurations.
    Timing {
        #[command(flatten)]
        source: DataSource,
        #[arg(long, default_value_t = 0.5)]
        tr: f64,
        #[arg(long, default_value_t = 0.4)]
        cr: f64,
        /// Comma-separated model kinds; defaults to all six.
        #[arg(long, value_delimiter = ',')]
        models: Vec<String>,
        #[arg(long)]
        output: PathBuf,
    },
}

/// Where a command reads its days from: a dataset file (optionally reduced
/// to the high-correlation subset) or the synthetic generator.
#[derive(Args)]
struct DataSource {
    #[arg(long, conflicts_with = "synthetic")]
    dataset: Option<PathBuf>,
    /// Reduce the dataset to the (50, 20) kW subset first.
    #[arg(long, requires = "dataset")]
    case2: bool,
    /// Use generated data instead of a dataset file.
    #[arg(long)]
    synthetic: bool,
    #[arg(long, default_value_t = 100)]
    synth_days: usize,
}

impl DataSource {
    fn load(&self, seed: u64) -> Result<(CaseLabel, Dataset)> {
        match (&self.dataset, self.synthetic) {
            (Some(path), false) => {
                let ds = data::read_dataset(path)?;
                if self.case2 {
                    let filtered = pidae::correlation::filter_days(&ds, 50.0, 20.0)?;
                    Ok((CaseLabel::Case2, filtered))
                } else {
                    Ok((CaseLabel::Case1, ds))
                }
            }
            (None, true) => {
                let ds = synthetic::generate(&SyntheticConfig {
                    days: self.synth_days,
                    seed: seeds::derive(seed, &[b'S' as u64]),
                    ..SyntheticConfig::default()
                })?;
                Ok((CaseLabel::Synthetic, ds))
            }
            _ => Err(Error::InvalidArgument(
                "pass exactly one of --dataset or --synthetic".into(),
            )),
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version requests are not usage errors.
            if e.use_stderr() {
                eprintln!("{e}");
                return ExitCode::from(1);
            }
            print!("{e}");
            return ExitCode::SUCCESS;
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if cli.paper_scale {
        config.apply_paper_scale();
    }
    if let Some(workers) = cli.workers {
        config.harness.workers = workers;
    }
    Ok(config)
}

fn ablation_config(config: &RunConfig, cases: Vec<CaseData>, seed: u64) -> Result<AblationConfig> {
    Ok(AblationConfig {
        cases,
        methods: Method::all(),
        training_rates: config.harness.training_rates.clone(),
        corruption_rates: config.harness.corruption_rates.clone(),
        split_seeds: config.harness.split_seeds,
        restarts: config.harness.restarts,
        augment_copies: config.corruption.augment_copies,
        knn_k: config.harness.knn_k,
        specs: config.specs()?,
        train: config.train_options(),
        base_seed: seed,
        workers: config.harness.workers,
    })
}

fn parse_kind(name: &str) -> Result<ModelKind> {
    ModelKind::parse(name)
        .ok_or_else(|| Error::InvalidArgument(format!("unknown model kind `{name}`")))
}

fn writer_for(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn run(cli: Cli) -> PidaeResult<()> {
    let config = load_config(&cli)?;
    let seed = cli.seed;

    match cli.command {
        Command::Prepare { input, output } => {
            let records = data::read_raw_records(&input, config.data.delimiter_byte()?)?;
            let (dataset, report) = data::prepare(&records)?;
            data::write_dataset(&output, &dataset)?;
            println!(
                "prepared {} complete days ({} dropped) -> {}",
                report.kept_days,
                report.dropped_days,
                output.display()
            );
        }

        Command::Filter {
            dataset,
            output,
            case2_output,
        } => {
            let ds = data::read_dataset(&dataset)?;
            let rows =
                pidae::correlation::correlation_table(&ds, &pidae::correlation::default_grid())?;
            match &output {
                Some(path) => {
                    let mut out = writer_for(path)?;
                    pidae::correlation::write_correlation_report(&mut out, &rows)?;
                    out.flush()?;
                    println!("wrote {} rows -> {}", rows.len(), path.display());
                }
                None => {
                    let mut out = Vec::new();
                    pidae::correlation::write_correlation_report(&mut out, &rows)?;
                    print!("{}", String::from_utf8_lossy(&out));
                }
            }
            if let Some(path) = case2_output {
                let filtered = pidae::correlation::filter_days(&ds, 50.0, 20.0)?;
                data::write_dataset(&path, &filtered)?;
                println!(
                    "wrote the {}-day high-correlation subset -> {}",
                    filtered.len(),
                    path.display()
                );
            }
        }

        Command::Synth {
            days,
            noise,
            coeff_a,
            coeff_b,
            coeff_c,
            output,
        } => {
            let ds = synthetic::generate(&SyntheticConfig {
                coeffs: PhysicsCoefficients::new(coeff_a, coeff_b, coeff_c),
                days,
                noise_amplitude: noise,
                seed,
            })?;
            data::write_dataset(&output, &ds)?;
            println!("wrote {days} synthetic days -> {}", output.display());
        }

        Command::Tune {
            source,
            model,
            cr,
            tr,
            budget,
            output,
            save_config,
        } => {
            let kind = parse_kind(&model)?;
            let (case, ds) = source.load(seed)?;
            let budget = budget.unwrap_or(config.tuning.budget);
            let split_seed = seeds::derive(seed, &[case as u64, tr.to_bits(), 1, 0]);
            let indices = harness::split(ds.len(), tr, split_seed)?;
            let stats = data::NormStats::fit(&ds.subset(&indices.train))?;
            let normalized = ds.normalize_with(&stats);
            let train_days: Vec<_> = indices
                .train
                .iter()
                .map(|&i| normalized.profiles[i].clone())
                .collect();
            let train_pairs = pidae::corruption::augment(
                &train_days,
                config.corruption.augment_copies,
                &[cr],
                seeds::derive(seed, &[b'A' as u64]),
            )?;
            let val_pairs: Vec<_> = indices
                .val
                .iter()
                .enumerate()
                .map(|(slot, &i)| {
                    Ok(pidae::corruption::TrainingPair {
                        target: normalized.profiles[i].clone(),
                        mask: make_mask(cr, seeds::derive(seed, &[b'V' as u64, slot as u64]))?,
                    })
                })
                .collect::<Result<_>>()?;
            let options = TrainOptions {
                max_epochs: config.tuning.max_epochs,
                patience: config.tuning.patience,
                min_delta: config.harness.min_delta,
                cr_set: vec![cr],
                physics_weight: config.harness.physics_weight,
            };
            let mut trial = 0u64;
            let result = tuning::random_search(
                kind,
                &SearchSpace::default(),
                budget,
                |spec| {
                    let trained = model::train(
                        model::build(spec, None)?,
                        &train_pairs,
                        &val_pairs,
                        seeds::derive(seed, &[b'T' as u64, trial]),
                        &options,
                        &stats,
                    )?;
                    trial += 1;
                    Ok(trained.best_val_loss())
                },
                seeds::derive(seed, &[b'R' as u64, kind as u64, cr.to_bits()]),
            )?;
            let mut out = writer_for(&output)?;
            tuning::write_trial_log(&mut out, &result)?;
            out.flush()?;
            println!(
                "best of {budget} trials: objective {:.6}, filters {}x{}, kernel {}, lr {:.3e}, batch {}",
                result.best_objective,
                result.best.filters_external,
                result.best.filters_internal,
                result.best.kernel,
                result.best.learning_rate,
                result.best.batch_size
            );
            if let Some(path) = save_config {
                let mut fragment = RunConfig::default();
                fragment
                    .model
                    .insert(kind.name().to_string(), ModelOverride::from_spec(&result.best));
                let mut minimal = BTreeMap::new();
                minimal.insert("model", &fragment.model);
                std::fs::write(
                    &path,
                    toml::to_string_pretty(&minimal)
                        .map_err(|e| Error::Malformed(e.to_string()))?,
                )?;
                println!("wrote best spec -> {}", path.display());
            }
        }

        Command::Train {
            source,
            model,
            tr,
            cr,
            split_seed,
            output,
            history,
        } => {
            let kind = parse_kind(&model)?;
            let (case, ds) = source.load(seed)?;
            let ablation = ablation_config(&config, vec![], seed)?;
            let trained = harness::train_cell(&ablation, &ds, case, kind, tr, cr, split_seed)?;
            model::save_checkpoint(&output, &trained)?;
            println!(
                "trained {kind} on {case} (tr {tr}, cr {cr}): best val loss {:.6} at epoch {} -> {}",
                trained.best_val_loss(),
                trained.best_epoch,
                output.display()
            );
            if let Some(coeffs) = trained.coeffs {
                println!(
                    "coefficients: a {:.6}, b {:.6}, c {:.6}",
                    coeffs.a, coeffs.b, coeffs.c
                );
            }
            if let Some(path) = history {
                let mut out = writer_for(&path)?;
                model::write_history(&mut out, &trained)?;
                out.flush()?;
            }
        }

        Command::Evaluate {
            dataset,
            checkpoint,
            cr,
            output,
        } => {
            let ds = data::read_dataset(&dataset)?;
            let trained = model::load_checkpoint(&checkpoint)?;
            let rates = if cr.is_empty() {
                config.corruption.rates.clone()
            } else {
                cr
            };
            let normalized = ds.normalize_with(&trained.stats);
            let corruptible = trained.spec.kind.reconstruction_targets();
            let mut lines = Vec::new();
            for &rate in &rates {
                let mut accs: BTreeMap<Variable, RmseAccumulator> = BTreeMap::new();
                for (day, profile) in normalized.profiles.iter().enumerate() {
                    let mask = make_mask(
                        rate,
                        seeds::derive(seed, &[b'E' as u64, rate.to_bits(), day as u64]),
                    )?;
                    let corrupted = corrupt(profile, &mask, corruptible);
                    let completed = model::impute(&trained, &corrupted, &mask)?;
                    for &var in corruptible {
                        accs.entry(var).or_default().add(
                            &completed,
                            &ds.profiles[day],
                            &mask,
                            var,
                        )?;
                    }
                }
                for (var, acc) in accs {
                    lines.push(format!(
                        "{:.2},{},{:.6},{}",
                        rate,
                        var,
                        acc.finish()?,
                        ds.len()
                    ));
                }
            }
            let header = "cr,variable,rmse,days";
            println!("{header}");
            for line in &lines {
                println!("{line}");
            }
            if let Some(path) = output {
                let mut out = writer_for(&path)?;
                writeln!(out, "{header}")?;
                for line in &lines {
                    writeln!(out, "{line}")?;
                }
                out.flush()?;
            }
        }

        Command::Ablation {
            dataset,
            case1,
            case2,
            synthetic,
            synth_days,
            models,
            out_dir,
        } => {
            let mut cases = Vec::new();
            if case1 || case2 {
                let path = dataset.ok_or_else(|| {
                    Error::InvalidArgument("--case1/--case2 require --dataset".into())
                })?;
                let ds = data::read_dataset(&path)?;
                if case1 {
                    cases.push(CaseData {
                        label: CaseLabel::Case1,
                        data: ds.clone(),
                    });
                }
                if case2 {
                    let filtered = pidae::correlation::filter_days(&ds, 50.0, 20.0)?;
                    println!("case 2 subset: {} days", filtered.len());
                    cases.push(CaseData {
                        label: CaseLabel::Case2,
                        data: filtered,
                    });
                }
            }
            if synthetic {
                cases.push(CaseData {
                    label: CaseLabel::Synthetic,
                    data: synthetic::generate(&SyntheticConfig {
                        days: synth_days,
                        seed: seeds::derive(seed, &[b'S' as u64]),
                        ..SyntheticConfig::default()
                    })?,
                });
            }
            let mut ablation = ablation_config(&config, cases, seed)?;
            if !models.is_empty() {
                ablation.methods = models
                    .iter()
                    .map(|m| {
                        Method::parse(m).ok_or_else(|| {
                            Error::InvalidArgument(format!("unknown method `{m}`"))
                        })
                    })
                    .collect::<Result<_>>()?;
            }
            let outcome = harness::run_ablation(&ablation)?;
            harness::write_reports(&out_dir, &outcome)?;
            println!(
                "{} cells completed, {} failed -> {}",
                outcome.results.len(),
                outcome.failures.len(),
                out_dir.display()
            );
            if !outcome.failures.is_empty() {
                for f in &outcome.failures {
                    eprintln!(
                        "failed: {} {} tr {:.2} cr {:.2} seed {}: {}",
                        f.key.case, f.key.method, f.key.tr, f.key.cr, f.key.split_seed, f.error
                    );
                }
                return Err(Error::CellFailures {
                    failed: outcome.failures.len(),
                });
            }
        }

        Command::CoeffStudy {
            source,
            tr,
            cr,
            trials,
            start_ones,
            output,
            summary_output,
        } => {
            let (case, ds) = source.load(seed)?;
            let ablation = ablation_config(&config, vec![], seed)?;
            let starts = start_ones.then(|| vec![PhysicsCoefficients::ones(); trials]);
            let study = harness::coefficient_study(
                &ablation,
                &ds,
                &CoefficientStudyConfig {
                    case,
                    tr,
                    cr,
                    trials,
                    starts,
                },
            )?;
            let mut out = writer_for(&output)?;
            harness::write_coefficient_study(&mut out, &study)?;
            out.flush()?;
            for (name, d) in ["a", "b", "c"].iter().zip(study.dispersion) {
                println!(
                    "{name}: mean {:.6}, std {:.6} ({:.1}% of mean)",
                    d.mean,
                    d.std,
                    100.0 * d.relative
                );
            }
            if let Some(path) = summary_output {
                let mut out = writer_for(&path)?;
                harness::write_coefficient_summary(&mut out, &study)?;
                out.flush()?;
            }
        }

        Command::Timing {
            source,
            tr,
            cr,
            models,
            output,
        } => {
            let (case, ds) = source.load(seed)?;
            let kinds: Vec<ModelKind> = if models.is_empty() {
                ModelKind::ALL.to_vec()
            } else {
                models
                    .iter()
                    .map(|m| parse_kind(m))
                    .collect::<Result<_>>()?
            };
            let ablation = ablation_config(&config, vec![], seed)?;
            let report = harness::timing_report(&ablation, &ds, case, &kinds, tr, cr)?;
            let mut out = writer_for(&output)?;
            harness::write_timing_report(&mut out, &report)?;
            out.flush()?;
            for (kind, seconds) in &report.running {
                println!("{kind}: restart protocol {seconds:.2}s");
            }
            println!("wrote inference timings -> {}", output.display());
        }
    }
    Ok(())
}
