//! Training loops for the backbone and the head.
//!
//! Runs are deterministic given the config seed: initialization, shuffling
//! and dropout all derive from it, and batches are assembled on one thread.

use std::collections::BTreeSet;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use kinesics_nn::loss::cross_entropy;
use kinesics_nn::optim::{OptimizerRegistry, OptimizerSettings, StepSchedule};
use kinesics_nn::{argmax, Parameterized, Tensor};

use crate::backbone::{Backbone, BackboneConfig, FeatureMap, FeatureSet};
use crate::checkpoint::{parameter_checksum, restore, snapshot};
use crate::dataset::{DatasetBundle, SkeletonSequence};
use crate::error::{CoreError, Result};
use crate::head::{HeadConfig, KinesicsHead};

/// Where per-epoch validation numbers come from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ValidationMode {
    /// The bundle's test split doubles as the validation set.
    TestSplit,
    /// Every `1/fraction`-th training sample (after a seeded shuffle) is held
    /// out; the test split is never looked at during training.
    HoldOut { fraction: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerSettings,
    pub schedule: StepSchedule,
    /// Stop after this many epochs without a validation improvement.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub patience: Option<usize>,
    pub device: String,
    /// Weight the loss by inverse class frequency of the training set.
    pub class_weighted: bool,
    pub validation: ValidationMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::backbone()
    }
}

impl TrainConfig {
    pub fn backbone() -> Self {
        Self {
            seed: 0,
            epochs: 80,
            batch_size: 16,
            optimizer: OptimizerSettings::default(),
            schedule: StepSchedule { base_lr: 0.1, milestones: vec![0.5, 0.75], gamma: 0.1 },
            patience: None,
            device: "cpu".into(),
            class_weighted: false,
            validation: ValidationMode::TestSplit,
        }
    }

    pub fn head() -> Self {
        Self {
            epochs: 50,
            schedule: StepSchedule { base_lr: 0.01, ..Self::backbone().schedule },
            class_weighted: true,
            ..Self::backbone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(CoreError::Config("epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(CoreError::Config("batch size must be >= 1".into()));
        }
        if self.device != "cpu" {
            return Err(CoreError::Config(format!("device '{}' is not available; only 'cpu' is supported", self.device)));
        }
        if !(self.schedule.base_lr > 0.0 && self.schedule.base_lr.is_finite()) {
            return Err(CoreError::Config(format!("learning rate must be positive, got {}", self.schedule.base_lr)));
        }
        if let ValidationMode::HoldOut { fraction } = self.validation {
            if !(fraction > 0.0 && fraction < 1.0) {
                return Err(CoreError::Config(format!("hold-out fraction {fraction} outside (0, 1)")));
            }
        }
        OptimizerRegistry::<f32>::builtin().create(&self.optimizer)?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    /// Percent, measured on the fly in training mode.
    pub train_accuracy: f64,
    pub val_loss: Option<f64>,
    pub val_accuracy: Option<f64>,
}

/// Elapsed time; never affects report equality.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct WallClock(pub f64);

impl PartialEq for WallClock {
    fn eq(&self, _: &Self) -> bool {
        true
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
    /// Epoch whose weights were kept: best validation accuracy, earliest on
    /// ties (training accuracy when there is no validation set).
    pub best_epoch: usize,
    pub best_val_accuracy: Option<f64>,
    pub last_val_accuracy: Option<f64>,
    pub stopped_early: bool,
    /// Checksum of the returned weights.
    pub checkpoint: String,
    #[serde(skip)]
    pub wall_clock_secs: WallClock,
}

impl TrainReport {
    pub fn initial_train_loss(&self) -> f64 {
        self.epochs.first().map_or(f64::NAN, |e| e.train_loss)
    }

    pub fn final_train_loss(&self) -> f64 {
        self.epochs.last().map_or(f64::NAN, |e| e.train_loss)
    }
}

/// A model the generic loop can fit.
pub trait Fit: Parameterized<f32> {
    fn forward_logits(&mut self, x: &Tensor<f32>, train: bool) -> Result<Tensor<f32>>;
    fn backward_logits(&mut self, dlogits: &Tensor<f32>);
}

impl Fit for Backbone<f32> {
    fn forward_logits(&mut self, x: &Tensor<f32>, train: bool) -> Result<Tensor<f32>> {
        Ok(self.forward(x, train)?.logits)
    }
    fn backward_logits(&mut self, dlogits: &Tensor<f32>) {
        self.backward(dlogits)
    }
}

impl Fit for KinesicsHead<f32> {
    fn forward_logits(&mut self, x: &Tensor<f32>, train: bool) -> Result<Tensor<f32>> {
        self.forward(x, train)
    }
    fn backward_logits(&mut self, dlogits: &Tensor<f32>) {
        self.backward(dlogits)
    }
}

/// Labelled examples plus a way to stack a subset of them into a batch.
pub struct Examples<'a> {
    pub targets: Vec<usize>,
    pub make_batch: BatchFn<'a>,
}

impl Examples<'_> {
    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }
}

/// `n / (k * n_c)` per class; classes absent from `targets` get weight 0.
pub fn inverse_frequency_weights(targets: &[usize], num_classes: usize) -> Vec<f64> {
    let mut counts = vec![0usize; num_classes];
    for &t in targets {
        counts[t] += 1;
    }
    let n = targets.len() as f64;
    let present = counts.iter().filter(|&&c| c > 0).count().max(1) as f64;
    counts.iter().map(|&c| if c == 0 { 0.0 } else { n / (present * c as f64) }).collect()
}

/// Mean loss and percent accuracy in evaluation mode.
pub fn evaluate_model<M: Fit + ?Sized>(
    model: &mut M,
    data: &Examples,
    batch_size: usize,
    class_weights: Option<&[f64]>,
) -> Result<(f64, f64, Vec<usize>)> {
    let idx: Vec<usize> = (0..data.len()).collect();
    let (mut loss_sum, mut weight_sum, mut correct) = (0.0, 0.0, 0usize);
    let mut predictions = Vec::with_capacity(data.len());
    for chunk in idx.chunks(batch_size.max(1)) {
        let x = (data.make_batch)(chunk)?;
        let logits = model.forward_logits(&x, false)?;
        let targets: Vec<usize> = chunk.iter().map(|&i| data.targets[i]).collect();
        let (loss, _) = cross_entropy(&logits, &targets, class_weights)?;
        let w: f64 = targets.iter().map(|&t| class_weights.map_or(1.0, |cw| cw[t])).sum();
        loss_sum += loss * w;
        weight_sum += w;
        for (i, &t) in targets.iter().enumerate() {
            let p = argmax(logits.row(i));
            correct += usize::from(p == t);
            predictions.push(p);
        }
    }
    let n = data.len().max(1) as f64;
    Ok((loss_sum / weight_sum.max(f64::MIN_POSITIVE), 100.0 * correct as f64 / n, predictions))
}

/// Minibatch training with per-epoch validation; leaves `model` holding the
/// best epoch's weights.
pub fn fit<M: Fit>(
    model: &mut M,
    train: &Examples,
    val: Option<&Examples>,
    num_classes: usize,
    config: &TrainConfig,
) -> Result<TrainReport> {
    config.validate()?;
    if train.is_empty() {
        return Err(CoreError::Dataset("no training examples".into()));
    }
    if let Some(&t) = train.targets.iter().chain(val.map_or(&[][..], |v| &v.targets)).find(|&&t| t >= num_classes) {
        return Err(CoreError::Config(format!("target {t} outside {num_classes} classes")));
    }
    let started = Instant::now();
    let weights = config.class_weighted.then(|| inverse_frequency_weights(&train.targets, num_classes));
    let mut optimizer = OptimizerRegistry::<f32>::builtin().create(&config.optimizer)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_0f_04de);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut epochs = Vec::with_capacity(config.epochs);
    let mut best: Option<(usize, f64, Vec<Vec<f32>>)> = None;
    let mut stopped_early = false;

    for epoch in 0..config.epochs {
        let lr = config.schedule.lr_at(epoch, config.epochs);
        order.shuffle(&mut rng);
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for chunk in order.chunks(config.batch_size) {
            let x = (train.make_batch)(chunk)?;
            let targets: Vec<usize> = chunk.iter().map(|&i| train.targets[i]).collect();
            model.zero_grad();
            let logits = model.forward_logits(&x, true)?;
            let (loss, dlogits) = cross_entropy(&logits, &targets, weights.as_deref())?;
            if !loss.is_finite() {
                return Err(CoreError::Divergence { epoch, loss });
            }
            model.backward_logits(&dlogits);
            optimizer.step(model, lr);
            loss_sum += loss * chunk.len() as f64;
            correct += targets.iter().enumerate().filter(|(i, &t)| argmax(logits.row(*i)) == t).count();
        }
        let train_loss = loss_sum / train.len() as f64;
        let train_accuracy = 100.0 * correct as f64 / train.len() as f64;
        let (val_loss, val_accuracy) = match val {
            Some(v) if !v.is_empty() => {
                let (l, a, _) = evaluate_model(model, v, config.batch_size, weights.as_deref())?;
                if !l.is_finite() {
                    return Err(CoreError::Divergence { epoch, loss: l });
                }
                (Some(l), Some(a))
            }
            _ => (None, None),
        };
        tracing::info!(
            epoch,
            lr,
            train_loss,
            train_accuracy,
            val_loss = val_loss.unwrap_or(f64::NAN),
            val_accuracy = val_accuracy.unwrap_or(f64::NAN),
            "epoch finished"
        );
        let score = val_accuracy.unwrap_or(train_accuracy);
        if best.as_ref().map_or(true, |(_, s, _)| score > *s) {
            best = Some((epoch, score, snapshot(model)));
        }
        epochs.push(EpochStats { epoch, lr, train_loss, train_accuracy, val_loss, val_accuracy });
        if let (Some(p), Some((b, _, _))) = (config.patience, &best) {
            if epoch - b >= p && epoch + 1 < config.epochs {
                stopped_early = true;
                break;
            }
        }
    }

    let (best_epoch, _, weights_at_best) = best.expect("at least one epoch ran");
    restore(model, &weights_at_best);
    Ok(TrainReport {
        best_val_accuracy: epochs[best_epoch].val_accuracy,
        last_val_accuracy: epochs.last().and_then(|e| e.val_accuracy),
        best_epoch,
        epochs,
        stopped_early,
        checkpoint: parameter_checksum(model),
        wall_clock_secs: WallClock(started.elapsed().as_secs_f64()),
    })
}

/// Split training indices into (fit, hold-out) per the validation mode.
fn holdout_split(n: usize, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 0x401d_0a7));
    let held = ((n as f64 * fraction).round() as usize).clamp(1, n.saturating_sub(1).max(1));
    let (h, f) = idx.split_at(held.min(n));
    let (mut f, mut h) = (f.to_vec(), h.to_vec());
    f.sort_unstable();
    h.sort_unstable();
    (f, h)
}

/// A trained backbone and the activity label behind each output index.
#[derive(Debug, Clone)]
pub struct TrainedBackbone {
    pub model: Backbone<f32>,
    pub class_labels: Vec<usize>,
    pub report: TrainReport,
}

/// Train an activity classifier on `bundle`'s train split. Output index `i`
/// stands for the `i`-th smallest label present in the bundle.
pub fn train_backbone(bundle: &DatasetBundle, config: &BackboneConfig, train_config: &TrainConfig) -> Result<TrainedBackbone> {
    train_config.validate()?;
    let class_labels: Vec<usize> = bundle.labels().into_iter().collect::<BTreeSet<_>>().into_iter().collect();
    if class_labels.len() != config.num_classes {
        return Err(CoreError::Config(format!(
            "backbone has {} outputs but the bundle holds {} distinct labels",
            config.num_classes,
            class_labels.len()
        )));
    }
    let index_of = |label: usize| class_labels.binary_search(&label).expect("label collected above");
    let prepare = |records: Vec<&crate::dataset::SampleRecord>| -> Result<(Vec<SkeletonSequence>, Vec<usize>)> {
        let seqs = records
            .par_iter()
            .map(|r| {
                config
                    .prepare(&r.keypoint)
                    .map_err(|e| CoreError::Sample { sample: r.frame_dir.clone(), source: Box::new(e) })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok((seqs, records.iter().map(|r| index_of(r.label)).collect()))
    };
    let (mut train_seqs, mut train_targets) = prepare(bundle.train_records())?;
    let (val_seqs, val_targets) = match train_config.validation {
        ValidationMode::TestSplit => prepare(bundle.val_records())?,
        ValidationMode::HoldOut { fraction } => {
            let (keep, held) = holdout_split(train_seqs.len(), fraction, train_config.seed);
            let pick = |idx: &[usize], s: &[SkeletonSequence], t: &[usize]| {
                (idx.iter().map(|&i| s[i].clone()).collect::<Vec<_>>(), idx.iter().map(|&i| t[i]).collect::<Vec<_>>())
            };
            let (vs, vt) = pick(&held, &train_seqs, &train_targets);
            let (ts, tt) = pick(&keep, &train_seqs, &train_targets);
            (train_seqs, train_targets) = (ts, tt);
            (vs, vt)
        }
    };
    if train_seqs.is_empty() {
        return Err(CoreError::Dataset("bundle has no training records".into()));
    }

    let mut model = Backbone::<f32>::new(config, train_config.seed)?;
    let train = Examples { targets: train_targets, make_batch: sequence_batches(config, &train_seqs) };
    let val = Examples { targets: val_targets, make_batch: sequence_batches(config, &val_seqs) };
    let report = fit(&mut model, &train, Some(&val), config.num_classes, train_config)?;
    Ok(TrainedBackbone { model, class_labels, report })
}

/// Sample names and target indices for the head.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct HeadData {
    pub train: Vec<(String, usize)>,
    pub val: Vec<(String, usize)>,
}

/// Train the head on features extracted by `frozen`. The backbone is only
/// read; its checksum is compared before and after as a guard.
pub fn train_head<'a>(
    features: &'a FeatureSet,
    data: &HeadData,
    config: &HeadConfig,
    train_config: &TrainConfig,
    frozen: &Backbone<f32>,
) -> Result<(KinesicsHead<f32>, TrainReport)> {
    let before = parameter_checksum(frozen);
    if features.backbone_checksum != before {
        return Err(CoreError::Config(format!(
            "features were extracted by backbone {} but the supplied checkpoint is {before}",
            features.backbone_checksum
        )));
    }
    if features.shape != config.input_shape {
        return Err(CoreError::Config(format!(
            "head expects features {:?}, feature set holds {:?}",
            config.input_shape, features.shape
        )));
    }
    let lookup = |rows: &[(String, usize)]| -> Result<Vec<&'a FeatureMap>> {
        rows.iter()
            .map(|(name, _)| features.get(name).ok_or_else(|| CoreError::Dataset(format!("no features for sample {name}"))))
            .collect()
    };
    let train_maps = lookup(&data.train)?;
    let train_targets: Vec<usize> = data.train.iter().map(|(_, t)| *t).collect();
    let (train_maps, train_targets, val_maps, val_targets) = match train_config.validation {
        ValidationMode::TestSplit => {
            (train_maps, train_targets, lookup(&data.val)?, data.val.iter().map(|(_, t)| *t).collect())
        }
        ValidationMode::HoldOut { fraction } => {
            let (keep, held) = holdout_split(data.train.len(), fraction, train_config.seed);
            (
                keep.iter().map(|&i| train_maps[i]).collect(),
                keep.iter().map(|&i| train_targets[i]).collect(),
                held.iter().map(|&i| train_maps[i]).collect(),
                held.iter().map(|&i| train_targets[i]).collect(),
            )
        }
    };
    let mut head = KinesicsHead::<f32>::new(config, train_config.seed)?;
    let train = Examples { targets: train_targets, make_batch: feature_batches(config, train_maps) };
    let val = Examples { targets: val_targets, make_batch: feature_batches(config, val_maps) };
    let report = fit(&mut head, &train, Some(&val), config.num_categories, train_config)?;
    drop((train, val));
    check_frozen(frozen, &before)?;
    Ok((head, report))
}

type BatchFn<'a> = Box<dyn Fn(&[usize]) -> Result<Tensor<f32>> + 'a>;

fn sequence_batches<'a>(config: &'a BackboneConfig, seqs: &'a [SkeletonSequence]) -> BatchFn<'a> {
    Box::new(move |idx: &[usize]| config.batch_input(&idx.iter().map(|&i| &seqs[i]).collect::<Vec<_>>()))
}

fn feature_batches<'a>(config: &'a HeadConfig, maps: Vec<&'a FeatureMap>) -> BatchFn<'a> {
    Box::new(move |idx: &[usize]| config.batch_input(&idx.iter().map(|&i| maps[i]).collect::<Vec<_>>()))
}

fn check_frozen(frozen: &Backbone<f32>, before: &str) -> Result<()> {
    let after = parameter_checksum(frozen);
    if after != before {
        return Err(CoreError::FrozenViolation { before: before.to_string(), after });
    }
    Ok(())
}
