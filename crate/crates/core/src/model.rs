//! The six autoencoder configurations, the composite loss, the training
//! loop with early stopping, imputation, and checkpoint I/O.
//!
//! Every configuration shares the same symmetric architecture: two strided
//! convolutions down (48 -> 24 -> 12), two up-sampling convolutions back
//! (12 -> 24 -> 48), rectified-linear activations everywhere except the
//! linear output layer. The physics-informed configuration adds three
//! trainable thermal-balance coefficients optimized jointly with the
//! weights and biases; its loss adds the mean squared balance residual of
//! the denormalized reconstruction, with the same weight as the
//! reconstruction term.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corruption::{CorruptionMask, TrainingPair};
use crate::data::{DailyProfile, NormStats, Variable, STEPS_PER_DAY};
use crate::error::{Error, Result};
use crate::nn::{Adam, ConvLayer, Layer, LayerSpec, Network, NetworkGrads, Tensor};
use crate::physics::{PhysicsCoefficients, RESIDUAL_LEN};

/// The analyzed model configurations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ModelKind {
    /// Univariate, indoor air temperature.
    #[serde(rename = "univariate_dae_1")]
    UnivariateDae1,
    /// Univariate, heating flow rate.
    #[serde(rename = "univariate_dae_2")]
    UnivariateDae2,
    /// Univariate, cooling flow rate.
    #[serde(rename = "univariate_dae_3")]
    UnivariateDae3,
    /// Multivariate without outdoor temperature.
    #[serde(rename = "multivariate_dae_1")]
    MultivariateDae1,
    /// Multivariate with (uncorrupted) outdoor temperature.
    #[serde(rename = "multivariate_dae_2")]
    MultivariateDae2,
    /// Multivariate with outdoor temperature and thermal-balance loss.
    #[serde(rename = "pi_dae")]
    PiDae,
}

impl ModelKind {
    pub const ALL: [ModelKind; 6] = [
        ModelKind::UnivariateDae1,
        ModelKind::UnivariateDae2,
        ModelKind::UnivariateDae3,
        ModelKind::MultivariateDae1,
        ModelKind::MultivariateDae2,
        ModelKind::PiDae,
    ];

    /// Input/output channels, in order.
    pub fn variables(self) -> &'static [Variable] {
        match self {
            ModelKind::UnivariateDae1 => &[Variable::IndoorTemp],
            ModelKind::UnivariateDae2 => &[Variable::HeatingFlow],
            ModelKind::UnivariateDae3 => &[Variable::CoolingFlow],
            ModelKind::MultivariateDae1 => &[
                Variable::IndoorTemp,
                Variable::HeatingFlow,
                Variable::CoolingFlow,
            ],
            ModelKind::MultivariateDae2 | ModelKind::PiDae => &[
                Variable::IndoorTemp,
                Variable::HeatingFlow,
                Variable::CoolingFlow,
                Variable::OutdoorTemp,
            ],
        }
    }

    /// The corruptible variables the reconstruction loss covers. The
    /// outdoor temperature is input-only and excluded.
    pub fn reconstruction_targets(self) -> &'static [Variable] {
        match self {
            ModelKind::MultivariateDae2 | ModelKind::PiDae => &[
                Variable::IndoorTemp,
                Variable::HeatingFlow,
                Variable::CoolingFlow,
            ],
            other => other.variables(),
        }
    }

    pub fn channel_count(self) -> usize {
        self.variables().len()
    }

    /// Whether the thermal-balance term is part of the loss.
    pub fn physics(self) -> bool {
        self == ModelKind::PiDae
    }

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::UnivariateDae1 => "univariate_dae_1",
            ModelKind::UnivariateDae2 => "univariate_dae_2",
            ModelKind::UnivariateDae3 => "univariate_dae_3",
            ModelKind::MultivariateDae1 => "multivariate_dae_1",
            ModelKind::MultivariateDae2 => "multivariate_dae_2",
            ModelKind::PiDae => "pi_dae",
        }
    }

    pub fn parse(s: &str) -> Option<ModelKind> {
        ModelKind::ALL.into_iter().find(|k| k.name() == s)
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Architecture hyperparameters of one configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    /// Filter count of the outermost encoder/decoder convolutions.
    pub filters_external: usize,
    /// Filter count of the innermost convolutions.
    pub filters_internal: usize,
    pub kernel: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
}

impl ModelSpec {
    /// Small architecture suitable for desk-scale experiments.
    pub fn desk_default(kind: ModelKind) -> Self {
        ModelSpec {
            kind,
            filters_external: 16,
            filters_internal: 8,
            kernel: 3,
            learning_rate: 3e-3,
            batch_size: 32,
        }
    }

    /// Enforce the tuning ranges the hyperparameters live in.
    pub fn validate(&self) -> Result<()> {
        let check = |name: &str, ok: bool| {
            if ok {
                Ok(())
            } else {
                Err(Error::Spec(format!("{name} outside the tuning range")))
            }
        };
        check("filters_external", (5..=200).contains(&self.filters_external))?;
        check("filters_internal", (5..=200).contains(&self.filters_internal))?;
        check("kernel", (1..=10).contains(&self.kernel))?;
        check("learning_rate", (1e-4..=1e-1).contains(&self.learning_rate))?;
        check("batch_size", (32..=256).contains(&self.batch_size))?;
        Ok(())
    }

    fn build_network(&self) -> Network {
        let channels = self.kind.channel_count();
        Network::new(vec![
            Layer::Conv(ConvLayer::new(LayerSpec::conv_down(
                channels,
                self.filters_external,
                self.kernel,
            ))),
            Layer::Activation,
            Layer::Conv(ConvLayer::new(LayerSpec::conv_down(
                self.filters_external,
                self.filters_internal,
                self.kernel,
            ))),
            Layer::Activation,
            Layer::Conv(ConvLayer::new(LayerSpec::conv_up(
                self.filters_internal,
                self.filters_external,
                self.kernel,
            ))),
            Layer::Activation,
            Layer::Conv(ConvLayer::new(LayerSpec::conv_up(
                self.filters_external,
                channels,
                self.kernel,
            ))),
        ])
    }

    /// Trainable parameters, including the three coefficients when the
    /// physics term is active.
    pub fn param_count(&self) -> usize {
        self.build_network().param_count() + if self.kind.physics() { 3 } else { 0 }
    }
}

/// An untrained configuration: network plus optional coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub spec: ModelSpec,
    pub network: Network,
    pub coeffs: Option<PhysicsCoefficients>,
}

/// Construct an untrained model. Physics coefficients default to one.
pub fn build(spec: &ModelSpec, coeff_init: Option<PhysicsCoefficients>) -> Result<Model> {
    spec.validate()?;
    let coeffs = if spec.kind.physics() {
        Some(coeff_init.unwrap_or(PhysicsCoefficients::ones()))
    } else {
        if coeff_init.is_some() {
            return Err(Error::Spec(format!(
                "{} takes no physics coefficients",
                spec.kind
            )));
        }
        None
    };
    Ok(Model {
        network: spec.build_network(),
        spec: *spec,
        coeffs,
    })
}

impl Model {
    pub fn param_count(&self) -> usize {
        self.network.param_count() + if self.coeffs.is_some() { 3 } else { 0 }
    }

    /// Composite loss on one reconstruction: full-sequence MSE over the
    /// corruptible variables plus, when the physics term is active, the
    /// weighted mean squared balance residual on denormalized values.
    pub fn total_loss(
        &self,
        output: &Tensor,
        target: &Tensor,
        stats: &NormStats,
        physics_weight: f64,
    ) -> Result<f64> {
        let (terms, _, _) = self.loss_with_grads(output, target, stats, physics_weight)?;
        Ok(terms.total)
    }

    fn loss_with_grads(
        &self,
        output: &Tensor,
        target: &Tensor,
        stats: &NormStats,
        physics_weight: f64,
    ) -> Result<(LossTerms, Tensor, [f64; 3])> {
        let kind = self.spec.kind;
        let vars = kind.variables();
        if output.channels() != vars.len() || output.len() != STEPS_PER_DAY {
            return Err(Error::ShapeMismatch {
                layer: "loss".into(),
                expected: format!("{}x{STEPS_PER_DAY}", vars.len()),
                actual: format!("{}x{}", output.channels(), output.len()),
            });
        }

        let mut grad = Tensor::zeros(output.channels(), output.len());
        let mut coeff_grad = [0.0; 3];

        // Reconstruction term over every output channel, measured on
        // denormalized values so both loss terms share the physical scale.
        // The uncorrupted outdoor channel stays in the loss: it anchors
        // that output to its (always observed) input, and a physical-unit
        // error costs the same wherever it appears, otherwise the physics
        // term below could zero its residual through cheap distortions of
        // wide-range channels instead of moving the coefficients.
        let n_recon = (vars.len() * STEPS_PER_DAY) as f64;
        let mut recon = 0.0;
        for (ch, &var) in vars.iter().enumerate() {
            let span = stats.span(var).ok_or_else(|| {
                Error::InvalidArgument(format!("statistics lack variable {var}"))
            })?;
            for t in 0..STEPS_PER_DAY {
                let diff = (output.get(ch, t) - target.get(ch, t)) * span;
                recon += diff * diff;
                grad.add_at(ch, t, 2.0 * diff * span / n_recon);
            }
        }
        recon /= n_recon;

        // Thermal-balance term on the denormalized reconstruction.
        let mut physics = 0.0;
        if physics_weight != 0.0 {
            if let Some(coeffs) = &self.coeffs {
                let channel_of = |v: Variable| vars.iter().position(|&w| w == v).unwrap();
                let ch_ra = channel_of(Variable::IndoorTemp);
                let ch_oa = channel_of(Variable::OutdoorTemp);
                let ch_qc = channel_of(Variable::CoolingFlow);
                let ch_qh = channel_of(Variable::HeatingFlow);
                let denorm = |var: Variable, ch: usize, t: usize| {
                    stats.denormalize_value(var, output.get(ch, t))
                };

                let mut residuals = [0.0; RESIDUAL_LEN];
                for (t, r) in residuals.iter_mut().enumerate() {
                    let t_ra = denorm(Variable::IndoorTemp, ch_ra, t);
                    let t_ra_next = denorm(Variable::IndoorTemp, ch_ra, t + 1);
                    let t_oa = denorm(Variable::OutdoorTemp, ch_oa, t);
                    let q_cool = denorm(Variable::CoolingFlow, ch_qc, t);
                    let q_hw = denorm(Variable::HeatingFlow, ch_qh, t);
                    *r = (t_ra_next - t_ra)
                        - (coeffs.a * (t_oa - t_ra) - coeffs.b * q_cool + coeffs.c * q_hw);
                    physics += *r * *r;
                }
                physics /= RESIDUAL_LEN as f64;

                let span = |v: Variable| stats.span(v).unwrap();
                let (s_ra, s_oa, s_qc, s_qh) = (
                    span(Variable::IndoorTemp),
                    span(Variable::OutdoorTemp),
                    span(Variable::CoolingFlow),
                    span(Variable::HeatingFlow),
                );
                let scale = physics_weight * 2.0 / RESIDUAL_LEN as f64;
                for (t, &r) in residuals.iter().enumerate() {
                    let g = scale * r;
                    // d r_t / d x, chained through the denormalization spans.
                    grad.add_at(ch_ra, t + 1, g * s_ra);
                    grad.add_at(ch_ra, t, g * (coeffs.a - 1.0) * s_ra);
                    grad.add_at(ch_oa, t, g * -coeffs.a * s_oa);
                    grad.add_at(ch_qc, t, g * coeffs.b * s_qc);
                    grad.add_at(ch_qh, t, g * -coeffs.c * s_qh);

                    let t_ra = denorm(Variable::IndoorTemp, ch_ra, t);
                    let t_oa = denorm(Variable::OutdoorTemp, ch_oa, t);
                    coeff_grad[0] += g * -(t_oa - t_ra);
                    coeff_grad[1] += g * denorm(Variable::CoolingFlow, ch_qc, t);
                    coeff_grad[2] += g * -denorm(Variable::HeatingFlow, ch_qh, t);
                }
            }
        }

        let terms = LossTerms {
            recon,
            physics,
            total: recon + physics_weight * physics,
        };
        Ok((terms, grad, coeff_grad))
    }
}

impl Model {
    /// All trainable parameters as one flat vector: network weights and
    /// biases layer by layer, then the physics coefficients when present.
    pub fn params_flat(&self) -> Vec<f64> {
        let mut params = self.network.params();
        if let Some(c) = &self.coeffs {
            params.extend_from_slice(&c.as_array());
        }
        params
    }

    pub fn set_params_flat(&mut self, params: &[f64]) {
        let has_coeffs = self.coeffs.is_some();
        sync_model(self, params, has_coeffs);
    }

    /// Loss and its exact gradient with respect to every trainable
    /// parameter, in [`Model::params_flat`] order.
    pub fn parameter_gradients(
        &self,
        input: &Tensor,
        target: &Tensor,
        stats: &NormStats,
        physics_weight: f64,
    ) -> Result<(f64, Vec<f64>)> {
        let cache = self.network.forward(input)?;
        let (terms, grad_out, coeff_grad) =
            self.loss_with_grads(cache.output(), target, stats, physics_weight)?;
        let mut flat = self.network.backward(&cache, &grad_out).flatten();
        if self.coeffs.is_some() {
            flat.extend_from_slice(&coeff_grad);
        }
        Ok((terms.total, flat))
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct LossTerms {
    total: f64,
    recon: f64,
    #[allow(dead_code)]
    physics: f64,
}

/// Knobs of a single training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOptions {
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub min_delta: f64,
    /// Corruption rates the per-epoch masks draw from.
    pub cr_set: Vec<f64>,
    /// Weight of the thermal-balance term; zero disables it entirely.
    pub physics_weight: f64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            max_epochs: 1000,
            patience: 20,
            min_delta: 0.0,
            cr_set: vec![0.2, 0.4, 0.6, 0.8],
            physics_weight: 1.0,
        }
    }
}

/// Per-epoch training and validation losses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub train_loss: f64,
    pub val_loss: f64,
}

/// A fitted model: the best-validation parameters plus the run's history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub spec: ModelSpec,
    pub network: Network,
    pub coeffs: Option<PhysicsCoefficients>,
    pub stats: NormStats,
    pub history: Vec<EpochStats>,
    pub best_epoch: usize,
}

impl TrainedModel {
    pub fn best_val_loss(&self) -> f64 {
        self.history[self.best_epoch].val_loss
    }
}

fn profile_to_tensor(profile: &DailyProfile, vars: &[Variable]) -> Result<Tensor> {
    let mut tensor = Tensor::zeros(vars.len(), STEPS_PER_DAY);
    for (c, &var) in vars.iter().enumerate() {
        let series = profile.get(var).ok_or_else(|| {
            Error::InvalidArgument(format!("variable set mismatch: profile lacks {var}"))
        })?;
        tensor.channel_mut(c).copy_from_slice(series);
    }
    Ok(tensor)
}

/// One gradient-descent run with per-epoch re-masking and early stopping
/// on the validation reconstruction loss. Deterministic for a fixed seed.
pub fn train(
    mut model: Model,
    train_pairs: &[TrainingPair],
    val_pairs: &[TrainingPair],
    seed: u64,
    options: &TrainOptions,
    stats: &NormStats,
) -> Result<TrainedModel> {
    if train_pairs.is_empty() || val_pairs.is_empty() {
        return Err(Error::InvalidArgument(
            "train and validation sets must be non-empty".into(),
        ));
    }
    if options.cr_set.is_empty() {
        return Err(Error::InvalidArgument("empty corruption-rate set".into()));
    }
    let kind = model.spec.kind;
    let vars = kind.variables();
    let corruptible = kind.reconstruction_targets();

    let train_targets: Vec<Tensor> = train_pairs
        .iter()
        .map(|p| profile_to_tensor(&p.target, vars))
        .collect::<Result<_>>()?;
    let val_inputs: Vec<Tensor> = val_pairs
        .iter()
        .map(|p| profile_to_tensor(&p.input(corruptible), vars))
        .collect::<Result<_>>()?;
    let val_targets: Vec<Tensor> = val_pairs
        .iter()
        .map(|p| profile_to_tensor(&p.target, vars))
        .collect::<Result<_>>()?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    model.network.init_weights(&mut rng);

    let has_coeffs = model.coeffs.is_some();
    let mut params = model.network.params();
    if let Some(c) = &model.coeffs {
        params.extend_from_slice(&c.as_array());
    }
    let mut adam = Adam::new(model.spec.learning_rate, params.len());

    let mut history: Vec<EpochStats> = Vec::new();
    let mut best_params = params.clone();
    let mut best_epoch = 0usize;
    let mut best_val = f64::INFINITY;
    let mut epochs_without_improvement = 0usize;

    let mut order: Vec<usize> = (0..train_pairs.len()).collect();

    for epoch in 0..options.max_epochs {
        // Fresh corruption for every presentation of every training day.
        let masks: Vec<CorruptionMask> = (0..train_pairs.len())
            .map(|_| {
                let cr = options.cr_set[rng.gen_range(0..options.cr_set.len())];
                CorruptionMask::sample(cr, &mut rng)
            })
            .collect::<Result<_>>()?;
        crate::seeds::shuffle(&mut order, &mut rng);

        sync_model(&mut model, &params, has_coeffs);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for batch in order.chunks(model.spec.batch_size) {
            let mut grads = NetworkGrads::zeros_like(&model.network);
            let mut coeff_grads = [0.0; 3];
            let mut batch_loss = 0.0;
            for &i in batch {
                let input = corrupted_tensor(&train_targets[i], &masks[i], vars, corruptible);
                let cache = model.network.forward(&input)?;
                let (terms, grad_out, coeff_grad) = model.loss_with_grads(
                    cache.output(),
                    &train_targets[i],
                    stats,
                    options.physics_weight,
                )?;
                if !terms.total.is_finite() {
                    return Err(Error::Diverged {
                        epoch,
                        reason: format!("non-finite loss {}", terms.total),
                        history: history.iter().map(|h| (h.train_loss, h.val_loss)).collect(),
                    });
                }
                batch_loss += terms.total;
                grads.accumulate(&model.network.backward(&cache, &grad_out));
                for (acc, g) in coeff_grads.iter_mut().zip(coeff_grad) {
                    *acc += g;
                }
            }
            let inv = 1.0 / batch.len() as f64;
            grads.scale(inv);
            let mut flat = grads.flatten();
            if has_coeffs {
                flat.extend(coeff_grads.iter().map(|g| g * inv));
            }
            adam.step(&mut params, &flat).map_err(|e| Error::Diverged {
                epoch,
                reason: e.to_string(),
                history: history.iter().map(|h| (h.train_loss, h.val_loss)).collect(),
            })?;
            sync_model(&mut model, &params, has_coeffs);
            epoch_loss += batch_loss * inv;
            batches += 1;
        }
        let train_loss = epoch_loss / batches as f64;

        // Validation reconstruction loss on the fixed validation masks.
        let mut val_loss = 0.0;
        for (input, target) in val_inputs.iter().zip(&val_targets) {
            let cache = model.network.forward(input)?;
            let (terms, _, _) = model.loss_with_grads(cache.output(), target, stats, 0.0)?;
            val_loss += terms.recon;
        }
        val_loss /= val_pairs.len() as f64;
        history.push(EpochStats { train_loss, val_loss });

        if val_loss < best_val - options.min_delta {
            best_val = val_loss;
            best_epoch = epoch;
            best_params.copy_from_slice(&params);
            epochs_without_improvement = 0;
        } else {
            epochs_without_improvement += 1;
            if epochs_without_improvement > options.patience {
                break;
            }
        }
    }

    sync_model(&mut model, &best_params, has_coeffs);
    Ok(TrainedModel {
        spec: model.spec,
        network: model.network,
        coeffs: model.coeffs,
        stats: stats.clone(),
        history,
        best_epoch,
    })
}

fn sync_model(model: &mut Model, params: &[f64], has_coeffs: bool) {
    if has_coeffs {
        let split = params.len() - 3;
        model.network.set_params(&params[..split]);
        model.coeffs = Some(PhysicsCoefficients::new(
            params[split],
            params[split + 1],
            params[split + 2],
        ));
    } else {
        model.network.set_params(params);
    }
}

fn corrupted_tensor(
    target: &Tensor,
    mask: &CorruptionMask,
    vars: &[Variable],
    corruptible: &[Variable],
) -> Tensor {
    let mut input = target.clone();
    for (c, var) in vars.iter().enumerate() {
        if corruptible.contains(var) {
            for t in 0..STEPS_PER_DAY {
                if mask.is_missing(t) {
                    input.set(c, t, 0.0);
                }
            }
        }
    }
    input
}

/// Complete a corrupted (normalized) profile: observed entries pass
/// through verbatim, masked entries come from the clamped reconstruction,
/// and the result is denormalized to physical units.
pub fn impute(
    model: &TrainedModel,
    corrupted: &DailyProfile,
    mask: &CorruptionMask,
) -> Result<DailyProfile> {
    let vars = model.spec.kind.variables();
    let input = profile_to_tensor(corrupted, vars)?;
    let cache = model.network.forward(&input)?;
    let output = cache.output();

    let mut completed = corrupted.clone();
    for (c, &var) in vars.iter().enumerate() {
        if !model.spec.kind.reconstruction_targets().contains(&var) {
            continue;
        }
        let series = completed.get_mut(var).unwrap();
        for (t, value) in series.iter_mut().enumerate() {
            if mask.is_missing(t) {
                *value = output.get(c, t).clamp(0.0, 1.0);
            }
        }
    }
    Ok(crate::data::denormalize_profile(&completed, &model.stats))
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    version: u32,
    model: TrainedModel,
}

/// Write a versioned JSON checkpoint of a trained model.
pub fn save_checkpoint(path: &Path, model: &TrainedModel) -> Result<()> {
    let file = CheckpointFile {
        version: CHECKPOINT_VERSION,
        model: model.clone(),
    };
    let out = BufWriter::new(File::create(path)?);
    serde_json::to_writer(out, &file).map_err(|e| Error::Checkpoint(e.to_string()))
}

/// Read a checkpoint written by [`save_checkpoint`].
pub fn load_checkpoint(path: &Path) -> Result<TrainedModel> {
    let file: CheckpointFile = serde_json::from_reader(BufReader::new(File::open(path)?))
        .map_err(|e| Error::Checkpoint(e.to_string()))?;
    if file.version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint version {}",
            file.version
        )));
    }
    Ok(file.model)
}

/// Export the training history as delimited text for learning-curve plots.
pub fn write_history(out: &mut impl Write, model: &TrainedModel) -> Result<()> {
    writeln!(out, "epoch,train_loss,val_loss")?;
    for (epoch, stats) in model.history.iter().enumerate() {
        writeln!(out, "{epoch},{:.12},{:.12}", stats.train_loss, stats.val_loss)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corruption::{augment, corrupt, make_mask};
    use crate::synthetic::{generate, SyntheticConfig};
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    fn synthetic_setup(days: usize) -> (Vec<TrainingPair>, Vec<TrainingPair>, NormStats) {
        let ds = generate(&SyntheticConfig {
            days,
            ..SyntheticConfig::default()
        })
        .unwrap();
        let n_train = days - 2;
        let train_idx: Vec<usize> = (0..n_train).collect();
        let stats = NormStats::fit(&ds.subset(&train_idx)).unwrap();
        let norm = ds.normalize_with(&stats);
        let train = augment(&norm.profiles[..n_train], 2, &[0.2, 0.4], 5).unwrap();
        let val: Vec<TrainingPair> = norm.profiles[n_train..]
            .iter()
            .enumerate()
            .map(|(i, p)| TrainingPair {
                target: p.clone(),
                mask: make_mask(0.4, 100 + i as u64).unwrap(),
            })
            .collect();
        (train, val, stats)
    }

    fn tiny_spec(kind: ModelKind) -> ModelSpec {
        ModelSpec {
            kind,
            filters_external: 6,
            filters_internal: 5,
            kernel: 3,
            learning_rate: 3e-3,
            batch_size: 32,
        }
    }

    fn quick_options() -> TrainOptions {
        TrainOptions {
            max_epochs: 12,
            patience: 20,
            cr_set: vec![0.2, 0.4],
            ..TrainOptions::default()
        }
    }

    #[test]
    fn physics_adds_exactly_three_parameters() {
        let m2 = tiny_spec(ModelKind::MultivariateDae2);
        let pi = tiny_spec(ModelKind::PiDae);
        assert_eq!(pi.param_count(), m2.param_count() + 3);
        let built_m2 = build(&m2, None).unwrap();
        let built_pi = build(&pi, None).unwrap();
        assert_eq!(built_pi.param_count(), built_m2.param_count() + 3);
    }

    #[test]
    fn default_coefficients_are_ones() {
        let model = build(&tiny_spec(ModelKind::PiDae), None).unwrap();
        assert_eq!(model.coeffs, Some(PhysicsCoefficients::ones()));
    }

    #[test]
    fn coefficients_on_plain_models_are_rejected() {
        let err = build(
            &tiny_spec(ModelKind::MultivariateDae2),
            Some(PhysicsCoefficients::ones()),
        );
        assert!(matches!(err, Err(Error::Spec(_))));
    }

    #[test]
    fn hyperparameters_outside_ranges_are_rejected() {
        let mut spec = tiny_spec(ModelKind::UnivariateDae1);
        spec.kernel = 11;
        assert!(build(&spec, None).is_err());
        spec.kernel = 3;
        spec.batch_size = 4;
        assert!(build(&spec, None).is_err());
    }

    #[test]
    fn training_univariate_on_missing_variable_fails() {
        let (train_pairs, val_pairs, stats) = synthetic_setup(6);
        let stripped: Vec<TrainingPair> = train_pairs
            .iter()
            .map(|p| {
                let mut values = std::collections::BTreeMap::new();
                values.insert(
                    Variable::IndoorTemp,
                    p.target.get(Variable::IndoorTemp).unwrap().to_vec(),
                );
                TrainingPair {
                    target: DailyProfile::new(p.target.date, values).unwrap(),
                    mask: p.mask.clone(),
                }
            })
            .collect();
        let model = build(&tiny_spec(ModelKind::UnivariateDae2), None).unwrap();
        let err = train(model, &stripped, &val_pairs, 0, &quick_options(), &stats);
        assert!(matches!(err, Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn loss_without_physics_is_plain_reconstruction_mse() {
        let model = build(&tiny_spec(ModelKind::MultivariateDae2), None).unwrap();
        let (_, _, stats) = synthetic_setup(6);
        let vars = model.spec.kind.variables();
        let target = Tensor::zeros(vars.len(), STEPS_PER_DAY);
        let mut output = Tensor::zeros(vars.len(), STEPS_PER_DAY);
        // A constant physical error e on every entry gives exactly e^2.
        let e = 0.25;
        for (c, &var) in vars.iter().enumerate() {
            let span = stats.span(var).unwrap();
            for t in 0..STEPS_PER_DAY {
                output.set(c, t, e / span);
            }
        }
        let loss = model.total_loss(&output, &target, &stats, 1.0).unwrap();
        assert_abs_diff_eq!(loss, e * e, epsilon = 1e-12);
    }

    #[test]
    fn perfect_physics_consistent_reconstruction_has_zero_loss() {
        let truth = PhysicsCoefficients::new(0.1, 0.02, 0.05);
        let ds = generate(&SyntheticConfig {
            days: 1,
            coeffs: truth,
            ..SyntheticConfig::default()
        })
        .unwrap();
        let stats = NormStats::fit(&ds.subset(&[0])).unwrap();
        let norm = ds.normalize_with(&stats);
        let mut model = build(&tiny_spec(ModelKind::PiDae), None).unwrap();
        model.coeffs = Some(truth);
        let tensor = profile_to_tensor(&norm.profiles[0], model.spec.kind.variables()).unwrap();
        let loss = model.total_loss(&tensor, &tensor, &stats, 1.0).unwrap();
        assert!(loss < 1e-10, "loss = {loss}");
    }

    #[test]
    fn physics_gradients_match_finite_differences() {
        // d loss / d coefficient and d loss / d output against central
        // differences on a real profile.
        let ds = generate(&SyntheticConfig {
            days: 1,
            ..SyntheticConfig::default()
        })
        .unwrap();
        let stats = NormStats::fit(&ds.subset(&[0])).unwrap();
        let norm = ds.normalize_with(&stats);
        let mut model = build(&tiny_spec(ModelKind::PiDae), None).unwrap();
        model.coeffs = Some(PhysicsCoefficients::new(0.7, 0.3, 0.9));
        let vars = model.spec.kind.variables();
        let target = profile_to_tensor(&norm.profiles[0], vars).unwrap();
        let mut output = target.clone();
        for c in 0..output.channels() {
            for t in 0..output.len() {
                let bump = 0.01 * (((c * 48 + t) % 7) as f64 - 3.0);
                output.set(c, t, output.get(c, t) + bump);
            }
        }

        let (_, grad_out, coeff_grad) =
            model.loss_with_grads(&output, &target, &stats, 1.0).unwrap();

        let h = 1e-6;
        for idx in [0usize, 1, 2] {
            let shift = |delta: f64| {
                let mut m = model.clone();
                let mut arr = m.coeffs.unwrap().as_array();
                arr[idx] += delta;
                m.coeffs = Some(PhysicsCoefficients::new(arr[0], arr[1], arr[2]));
                m.total_loss(&output, &target, &stats, 1.0).unwrap()
            };
            let numeric = (shift(h) - shift(-h)) / (2.0 * h);
            assert_relative_eq!(coeff_grad[idx], numeric, max_relative = 1e-6);
        }

        for (c, t) in [(0usize, 5usize), (1, 17), (2, 30), (3, 42), (0, 47)] {
            let mut up = output.clone();
            up.set(c, t, output.get(c, t) + h);
            let mut down = output.clone();
            down.set(c, t, output.get(c, t) - h);
            let numeric = (model.total_loss(&up, &target, &stats, 1.0).unwrap()
                - model.total_loss(&down, &target, &stats, 1.0).unwrap())
                / (2.0 * h);
            assert_relative_eq!(grad_out.get(c, t), numeric, max_relative = 1e-5);
        }
    }

    #[test]
    fn training_on_a_single_day_descends() {
        let ds = generate(&SyntheticConfig {
            days: 3,
            ..SyntheticConfig::default()
        })
        .unwrap();
        let stats = NormStats::fit(&ds.subset(&[0])).unwrap();
        let norm = ds.normalize_with(&stats);
        let train_pairs = augment(&norm.profiles[..1], 2, &[0.2], 3).unwrap();
        let val_pairs = vec![TrainingPair {
            target: norm.profiles[1].clone(),
            mask: make_mask(0.2, 50).unwrap(),
        }];
        let options = TrainOptions {
            max_epochs: 40,
            cr_set: vec![0.2],
            ..TrainOptions::default()
        };
        let model = build(&tiny_spec(ModelKind::UnivariateDae1), None).unwrap();
        let trained = train(model, &train_pairs, &val_pairs, 0, &options, &stats).unwrap();
        assert!(trained.history.last().unwrap().train_loss < trained.history[0].train_loss);
    }

    #[test]
    fn training_reduces_loss_and_is_deterministic() {
        let (train_pairs, val_pairs, stats) = synthetic_setup(6);
        let run = || {
            let model = build(&tiny_spec(ModelKind::MultivariateDae2), None).unwrap();
            train(model, &train_pairs, &val_pairs, 3, &quick_options(), &stats).unwrap()
        };
        let a = run();
        let b = run();
        assert_eq!(a, b);
        assert!(a.history.last().unwrap().train_loss < a.history[0].train_loss);
        let min_val = a
            .history
            .iter()
            .map(|h| h.val_loss)
            .fold(f64::INFINITY, f64::min);
        assert_eq!(a.best_val_loss(), min_val);
    }

    #[test]
    fn physics_weight_zero_matches_plain_multivariate_exactly() {
        let (train_pairs, val_pairs, stats) = synthetic_setup(6);
        let options = TrainOptions {
            physics_weight: 0.0,
            ..quick_options()
        };
        let m2 = train(
            build(&tiny_spec(ModelKind::MultivariateDae2), None).unwrap(),
            &train_pairs,
            &val_pairs,
            7,
            &options,
            &stats,
        )
        .unwrap();
        let pi = train(
            build(&tiny_spec(ModelKind::PiDae), None).unwrap(),
            &train_pairs,
            &val_pairs,
            7,
            &options,
            &stats,
        )
        .unwrap();
        assert_eq!(m2.network, pi.network);
        assert_eq!(pi.coeffs, Some(PhysicsCoefficients::ones()));
        let hist_m2: Vec<f64> = m2.history.iter().map(|h| h.val_loss).collect();
        let hist_pi: Vec<f64> = pi.history.iter().map(|h| h.val_loss).collect();
        assert_eq!(hist_m2, hist_pi);
    }

    #[test]
    fn impute_preserves_observed_entries_and_clamps() {
        let (train_pairs, val_pairs, stats) = synthetic_setup(6);
        let model = train(
            build(&tiny_spec(ModelKind::MultivariateDae2), None).unwrap(),
            &train_pairs,
            &val_pairs,
            1,
            &quick_options(),
            &stats,
        )
        .unwrap();

        let clean = &val_pairs[0].target;
        let mask = make_mask(0.4, 9).unwrap();
        let corrupted = corrupt(clean, &mask, model.spec.kind.reconstruction_targets());

        let completed = impute(&model, &corrupted, &mask).unwrap();
        let reference = crate::data::denormalize_profile(&corrupted, &stats);
        for var in model.spec.kind.variables() {
            let done = completed.get(*var).unwrap();
            let refv = reference.get(*var).unwrap();
            let (min, max) = stats.range(*var).unwrap();
            for t in 0..STEPS_PER_DAY {
                if mask.is_missing(t) && model.spec.kind.reconstruction_targets().contains(var)
                {
                    assert!(done[t] >= min - 1e-12 && done[t] <= max + 1e-12);
                } else {
                    assert_eq!(done[t], refv[t], "{var} t={t}");
                }
            }
        }

        // Empty mask: pure pass-through.
        let untouched = impute(&model, clean, &CorruptionMask::empty()).unwrap();
        assert_eq!(untouched, crate::data::denormalize_profile(clean, &stats));

        // Full mask: output entirely model-generated but still in range.
        let full = CorruptionMask::full();
        let wiped = corrupt(clean, &full, model.spec.kind.reconstruction_targets());
        let generated = impute(&model, &wiped, &full).unwrap();
        for var in model.spec.kind.reconstruction_targets() {
            let (min, max) = stats.range(*var).unwrap();
            for &x in generated.get(*var).unwrap() {
                assert!(x >= min - 1e-12 && x <= max + 1e-12);
            }
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let (train_pairs, val_pairs, stats) = synthetic_setup(6);
        let model = train(
            build(&tiny_spec(ModelKind::PiDae), None).unwrap(),
            &train_pairs,
            &val_pairs,
            2,
            &quick_options(),
            &stats,
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        save_checkpoint(&path, &model).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(model, back);
    }
}
