//! Smooth-L1 / Adam training with sequential k-fold cross-validation.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::audio::RatedPair;
use crate::conditioning::{load_pair, swap_lr, InputTensor, LoadedPair, TensorBuilder};
use crate::error::{Error, Result};
use crate::frontend::FrontendConfig;
use crate::loss::{Loss, SmoothL1};
use crate::model::{
    stack_inputs, InputNorm, ModelCheckpoint, Params, QualityNet, Tensor, TrainingMetadata,
};
use crate::scalar::Scalar;

/// Frames in a fixed-length training input (56.48 s at a 20 ms hop).
pub const TRAINING_FRAMES: usize = 2824;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Augmentations {
    /// Add an L/R-swapped copy of every stereo training row, keeping its score.
    pub lr_swap: bool,
}

impl Default for Augmentations {
    fn default() -> Self {
        Self { lr_swap: true }
    }
}

/// Training recipe. Every key is optional in the TOML form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs_per_fold: usize,
    pub folds: usize,
    /// Smooth-L1 transition point, in network output units.
    pub loss_beta: f64,
    pub adam: AdamHyper,
    pub seed: u64,
    pub augmentations: Augmentations,
    /// Targets are `mos / target_scale`.
    pub target_scale: f64,
    /// Every training input is centre-padded to this many frames.
    pub fixed_frames: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            batch_size: 8,
            epochs_per_fold: 10,
            folds: 5,
            loss_beta: 1.0,
            adam: AdamHyper::default(),
            seed: 0,
            augmentations: Augmentations::default(),
            target_scale: 100.0,
            fixed_frames: TRAINING_FRAMES,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if self.folds == 0 {
            return bad("folds must be at least 1");
        }
        if self.loss_beta.is_nan() || self.loss_beta <= 0.0 {
            return bad("loss_beta must be positive");
        }
        let AdamHyper { beta1, beta2, epsilon } = self.adam;
        if !((0.0..1.0).contains(&beta1) && (0.0..1.0).contains(&beta2) && epsilon > 0.0) {
            return bad("adam betas must lie in [0, 1) and epsilon must be positive");
        }
        if self.target_scale.is_nan() || self.target_scale <= 0.0 {
            return bad("target_scale must be positive");
        }
        if self.fixed_frames == 0 {
            return bad("fixed_frames must be positive");
        }
        Ok(())
    }

    pub fn total_epochs(&self) -> usize {
        self.folds * self.epochs_per_fold
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_toml_str(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

/// First and second moment estimates per parameter tensor.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AdamState<T> {
    pub step: u64,
    pub m: BTreeMap<String, Tensor<T>>,
    pub v: BTreeMap<String, Tensor<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new() -> Self {
        Self {
            step: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }
}

/// One bias-corrected Adam update of every trainable tensor that has a gradient.
pub fn adam_step<T: Scalar, P: Params<T> + ?Sized>(
    params: &mut P,
    grads: &crate::model::Gradients<T>,
    state: &mut AdamState<T>,
    learning_rate: f64,
    hyper: &AdamHyper,
) -> Result<()> {
    state.step += 1;
    let t = state.step as f64;
    let (b1, b2) = (T::lit(hyper.beta1), T::lit(hyper.beta2));
    let (one_b1, one_b2) = (T::one() - b1, T::one() - b2);
    let c1 = T::lit(1.0 - hyper.beta1.powf(t));
    let c2 = T::lit(1.0 - hyper.beta2.powf(t));
    let (lr, eps) = (T::lit(learning_rate), T::lit(hyper.epsilon));
    let mut problem = None;
    params.visit_mut(&mut |name, p, trainable| {
        if !trainable {
            return;
        }
        let Some(g) = grads.get(&name) else { return };
        if g.shape != p.shape {
            problem.get_or_insert(format!("{name}: gradient {:?} vs parameter {:?}", g.shape, p.shape));
            return;
        }
        let m = state.m.entry(name.clone()).or_insert_with(|| Tensor::zeros(&p.shape));
        let v = state.v.entry(name).or_insert_with(|| Tensor::zeros(&p.shape));
        for (((w, &g), m), v) in p.data.iter_mut().zip(&g.data).zip(&mut m.data).zip(&mut v.data) {
            *m = b1 * *m + one_b1 * g;
            *v = b2 * *v + one_b2 * g * g;
            *w = *w - lr * (*m / c1) / ((*v / c2).sqrt() + eps);
        }
    });
    match problem {
        Some(p) => Err(Error::ShapeMismatch(p)),
        None => Ok(()),
    }
}

/// Disjoint validation folds covering `0..rows`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Folds {
    pub validation: Vec<Vec<usize>>,
    rows: usize,
}

impl Folds {
    pub fn len(&self) -> usize {
        self.validation.len()
    }

    pub fn is_empty(&self) -> bool {
        self.validation.is_empty()
    }

    /// Training rows of fold `k`: everything outside its validation set. With
    /// a single fold, all rows train and nothing is held out.
    pub fn training(&self, k: usize) -> Vec<usize> {
        if self.len() == 1 {
            return (0..self.rows).collect();
        }
        let mut held = vec![false; self.rows];
        for &i in &self.validation[k] {
            held[i] = true;
        }
        (0..self.rows).filter(|&i| !held[i]).collect()
    }

    pub fn held_out(&self, k: usize) -> &[usize] {
        if self.len() == 1 {
            &[]
        } else {
            &self.validation[k]
        }
    }
}

/// Seeded shuffle of row indices split into `folds` near-equal parts; the
/// first `rows % folds` parts get the extra row.
pub fn make_folds(rows: usize, folds: usize, seed: u64) -> Result<Folds> {
    if folds == 0 || rows < folds {
        return Err(Error::DatasetTooSmall { rows, folds });
    }
    let mut order: Vec<usize> = (0..rows).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (base, extra) = (rows / folds, rows % folds);
    let mut validation = Vec::with_capacity(folds);
    let mut start = 0;
    for k in 0..folds {
        let size = base + usize::from(k < extra);
        let mut part = order[start..start + size].to_vec();
        part.sort_unstable();
        validation.push(part);
        start += size;
    }
    Ok(Folds { validation, rows })
}

/// One materialized training example.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingRow<T> {
    /// Index of the manifest row it came from.
    pub source: usize,
    pub swapped: bool,
    pub mos: f64,
    pub input: InputTensor<T>,
}

/// Builds fixed-length tensors for every pair, plus swapped copies when
/// `lr_swap` is on. Rows are ordered source-major: original, then swapped.
pub fn materialize<T: Scalar>(
    pairs: &[LoadedPair<T>],
    builder: &TensorBuilder<T>,
    config: &TrainConfig,
) -> Result<Vec<TrainingRow<T>>> {
    let per_source: Vec<Vec<TrainingRow<T>>> = pairs
        .par_iter()
        .enumerate()
        .map(|(source, pair)| {
            let mut rows = Vec::with_capacity(2);
            let mut push = |p: &LoadedPair<T>, swapped| -> Result<()> {
                rows.push(TrainingRow {
                    source,
                    swapped,
                    mos: p.mos,
                    input: builder.build(&p.reference, &p.coded, Some(config.fixed_frames))?,
                });
                Ok(())
            };
            push(pair, false)?;
            if config.augmentations.lr_swap && pair.reference.is_stereo() && pair.coded.is_stereo() {
                push(&swap_lr(pair)?, true)?;
            }
            Ok(rows)
        })
        .collect::<Result<_>>()?;
    Ok(per_source.into_iter().flatten().collect())
}

/// Loads every manifest row, in parallel, with paths relative to `base`.
pub fn load_pairs<T: Scalar>(rows: &[RatedPair], base: &Path, dual_mono: bool) -> Result<Vec<LoadedPair<T>>> {
    rows.par_iter().map(|r| load_pair(r, base, dual_mono)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub fold: usize,
    pub epoch: usize,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// Global step count at the end of the epoch.
    pub step: usize,
    pub fold: usize,
    /// Global epoch index, counted from 0 across folds.
    pub epoch: usize,
    /// Mean smooth-L1 loss over the epoch's mini-batches.
    pub train_loss: f64,
    /// Mean smooth-L1 loss on the held-out fold, in network units.
    pub val_loss: Option<f64>,
    /// Mean squared error on the held-out fold, in MUSHRA units².
    pub val_mse: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub steps: Vec<StepRecord>,
    pub epochs: Vec<EpochRecord>,
    /// Training rows per epoch for each fold (after augmentation).
    pub rows_per_epoch: Vec<usize>,
}

impl TrainHistory {
    pub fn final_train_loss(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.train_loss)
    }

    /// One line per epoch: `step,fold,epoch,train_loss,val_loss,val_mse`.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
        let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
        w.write_record(["step", "fold", "epoch", "train_loss", "val_loss", "val_mse"])
            .map_err(|e| csv_error(path, e))?;
        for e in &self.epochs {
            w.write_record([
                e.step.to_string(),
                e.fold.to_string(),
                e.epoch.to_string(),
                e.train_loss.to_string(),
                opt(e.val_loss),
                opt(e.val_mse),
            ])
            .map_err(|e| csv_error(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

pub(crate) fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::CorruptFile {
            path: path.to_path_buf(),
            reason: format!("{other:?}"),
        },
    }
}

pub struct TrainOutcome<T> {
    pub checkpoint: ModelCheckpoint<T>,
    pub history: TrainHistory,
}

/// Trains `model` on `pairs`, running the folds one after another on the same
/// weights. Input normalization is fitted on the materialized rows unless the
/// model already carries statistics (e.g. copied from a mono model).
pub fn train<T: Scalar>(
    model: QualityNet<T>,
    pairs: &[LoadedPair<T>],
    frontend: FrontendConfig,
    config: &TrainConfig,
) -> Result<TrainOutcome<T>> {
    train_with_progress(model, pairs, frontend, config, &mut |_| {})
}

pub fn train_with_progress<T: Scalar>(
    mut model: QualityNet<T>,
    pairs: &[LoadedPair<T>],
    frontend: FrontendConfig,
    config: &TrainConfig,
    on_epoch: &mut dyn FnMut(&EpochRecord),
) -> Result<TrainOutcome<T>> {
    config.validate()?;
    if config.fixed_frames < model.min_frames() {
        return Err(Error::InvalidConfig(format!(
            "fixed_frames {} is below the model minimum of {}",
            config.fixed_frames,
            model.min_frames()
        )));
    }
    let folds = make_folds(pairs.len(), config.folds, config.seed)?;
    let builder = TensorBuilder::new(frontend, model.config().layout)?;
    let rows = materialize(pairs, &builder, config)?;
    if model.norm.is_identity() {
        let inputs: Vec<&InputTensor<T>> = rows.iter().map(|r| &r.input).collect();
        model.norm = InputNorm::fit(&inputs, model.config().bands)?;
    }
    let mut by_source: Vec<Vec<usize>> = vec![Vec::new(); pairs.len()];
    for (i, r) in rows.iter().enumerate() {
        by_source[r.source].push(i);
    }

    let loss = SmoothL1 { beta: config.loss_beta };
    let scale = config.target_scale;
    let target = |r: &TrainingRow<T>| T::lit(r.mos / scale);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1));
    let mut adam = AdamState::new();
    let mut history = TrainHistory::default();
    let mut step = 0usize;
    let mut epoch = 0usize;

    for fold in 0..folds.len() {
        let mut train_rows: Vec<usize> = folds
            .training(fold)
            .iter()
            .flat_map(|&s| by_source[s].iter().copied())
            .collect();
        let val_rows: Vec<usize> = folds
            .held_out(fold)
            .iter()
            .flat_map(|&s| by_source[s].iter().copied())
            .filter(|&i| !rows[i].swapped)
            .collect();
        history.rows_per_epoch.push(train_rows.len());

        for _ in 0..config.epochs_per_fold {
            train_rows.shuffle(&mut rng);
            let mut total = 0.0;
            let mut batches = 0usize;
            for batch in train_rows.chunks(config.batch_size) {
                let inputs: Vec<&InputTensor<T>> = batch.iter().map(|&i| &rows[i].input).collect();
                let targets: Vec<T> = batch.iter().map(|&i| target(&rows[i])).collect();
                let x = stack_inputs(&inputs)?;
                let (value, grads) = model.gradients(&x, &targets, &loss).map_err(|e| match e {
                    Error::NonFiniteLoss(m) => {
                        Error::NonFiniteLoss(format!("{m} at fold {fold}, epoch {epoch}, step {step}"))
                    }
                    other => other,
                })?;
                adam_step(&mut model, &grads, &mut adam, config.learning_rate, &config.adam)?;
                let value = value.as_f64();
                history.steps.push(StepRecord {
                    step,
                    fold,
                    epoch,
                    loss: value,
                });
                total += value;
                batches += 1;
                step += 1;
            }
            let (val_loss, val_mse) = validate(&model, &rows, &val_rows, &loss, scale)?;
            let record = EpochRecord {
                step,
                fold,
                epoch,
                train_loss: if batches > 0 { total / batches as f64 } else { 0.0 },
                val_loss,
                val_mse,
            };
            on_epoch(&record);
            history.epochs.push(record);
            epoch += 1;
        }
    }
    if !model.all_finite() {
        return Err(Error::NonFiniteLoss("parameters became non-finite".into()));
    }

    let mut notes = BTreeMap::new();
    notes.insert("learning_rate".into(), config.learning_rate.to_string());
    notes.insert("batch_size".into(), config.batch_size.to_string());
    notes.insert("lr_swap".into(), config.augmentations.lr_swap.to_string());
    let metadata = TrainingMetadata {
        epochs: history.epochs.len(),
        folds: config.folds,
        seed: config.seed,
        target_scale: scale,
        fixed_frames: Some(config.fixed_frames),
        notes,
    };
    Ok(TrainOutcome {
        checkpoint: ModelCheckpoint::new(model, frontend, metadata),
        history,
    })
}

fn validate<T: Scalar>(
    model: &QualityNet<T>,
    rows: &[TrainingRow<T>],
    indices: &[usize],
    loss: &SmoothL1,
    scale: f64,
) -> Result<(Option<f64>, Option<f64>)> {
    if indices.is_empty() {
        return Ok((None, None));
    }
    let preds: Vec<(f64, f64)> = indices
        .par_iter()
        .map(|&i| {
            let r = &rows[i];
            let raw = model.forward(&r.input)?;
            let l = loss.value(raw, T::lit(r.mos / scale)).as_f64();
            let mushra = (raw.as_f64() * scale).clamp(0.0, 100.0);
            Ok((l, (mushra - r.mos).powi(2)))
        })
        .collect::<Result<_>>()?;
    let n = preds.len() as f64;
    Ok((
        Some(preds.iter().map(|p| p.0).sum::<f64>() / n),
        Some(preds.iter().map(|p| p.1).sum::<f64>() / n),
    ))
}

/// Evaluation-mode mean loss of `model` over `rows`.
pub fn mean_loss<T: Scalar>(model: &QualityNet<T>, rows: &[TrainingRow<T>], config: &TrainConfig) -> Result<f64> {
    let loss = SmoothL1 { beta: config.loss_beta };
    let all: Vec<usize> = (0..rows.len()).collect();
    Ok(validate(model, rows, &all, &loss, config.target_scale)?.0.unwrap_or(0.0))
}
