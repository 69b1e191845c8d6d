//! Epoch orchestration: shuffled mini-batches with the silence/unknown mix,
//! cached augmentation with partial eviction, the plateau LR schedule, and
//! checkpointing.
//!
//! Every random draw comes from a stream derived from (seed, domain,
//! indices), never from sequential generator state, so a resumed run can
//! replay history exactly: epoch `e` shuffles with `plan(e)`, augmentation
//! for sample `i` last refreshed at epoch `r` draws from `aug(i, r)`,
//! silences from `silence(e, slot)`, and eviction from `evict(e)`.

mod checkpoint;
pub use checkpoint::{
    decode as decode_checkpoint, encode as encode_checkpoint, load_checkpoint, save_checkpoint,
    Checkpoint, NamedTensor, TrainState, CHECKPOINT_VERSION,
};

use crate::audio::{FeatureMatrix, FrontendConfig, MfccExtractor};
use crate::dataset::{
    augment, make_silence, AugmentationConfig, DatasetScan, EpochCache, Split, UNKNOWN_INDEX,
};
use crate::dataset::{LabelSpace, SILENCE_INDEX};
use crate::error::{Error, Result};
use crate::evaluation::{accuracy, score_all};
use crate::models::{batch_to_tensor, ArchSpec, Model};
use crate::nn::SgdMomentum;
use crate::rng;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::Serialize;

#[derive(Debug, Clone, Serialize)]
pub struct TrainConfig {
    pub lr0: f64,
    pub lr_decay: f64,
    pub lr_floor: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub plateau_patience: usize,
    /// minimum gain in percentage points that counts as an improvement
    pub min_improvement: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr0: 0.1,
            lr_decay: 0.1,
            lr_floor: 1e-5,
            momentum: 0.9,
            weight_decay: 1e-5,
            batch_size: 64,
            epochs: 26,
            plateau_patience: 3,
            min_improvement: 0.1,
            seed: 1,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        let ok = self.lr0 > 0.0
            && self.lr_decay > 0.0
            && self.lr_floor > 0.0
            && self.momentum >= 0.0
            && self.weight_decay >= 0.0
            && self.batch_size > 0
            && self.epochs > 0
            && self.plateau_patience > 0
            && self.min_improvement > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Dataset(format!(
                "invalid training config: every field must be positive ({self:?})"
            )))
        }
    }
}

/// Multiply the LR by `lr_decay` after `patience` consecutive epochs whose
/// validation accuracy fails to beat the reference by `min_improvement`
/// percentage points. The LR never increases and never drops below the
/// floor. Accuracies are fractions in [0, 1].
#[derive(Debug, Clone)]
pub struct PlateauSchedule {
    lr: f64,
    decay: f64,
    floor: f64,
    patience: usize,
    min_gain: f64,
    reference: f64,
    stale: usize,
}

impl PlateauSchedule {
    pub fn new(cfg: &TrainConfig) -> Self {
        Self {
            lr: cfg.lr0,
            decay: cfg.lr_decay,
            floor: cfg.lr_floor,
            patience: cfg.plateau_patience,
            min_gain: cfg.min_improvement / 100.0,
            reference: f64::NEG_INFINITY,
            stale: 0,
        }
    }

    pub fn resume(cfg: &TrainConfig, lr: f64, reference: f64, stale: usize) -> Self {
        let mut s = Self::new(cfg);
        s.lr = lr;
        s.reference = reference;
        s.stale = stale;
        s
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn reference(&self) -> f64 {
        self.reference
    }

    pub fn stale(&self) -> usize {
        self.stale
    }

    pub fn observe(&mut self, val_accuracy: f64) {
        if val_accuracy >= self.reference + self.min_gain {
            self.reference = val_accuracy;
            self.stale = 0;
        } else {
            self.stale += 1;
            if self.stale >= self.patience {
                self.lr = (self.lr * self.decay).max(self.floor);
                self.stale = 0;
            }
        }
    }
}

/// LR after observing a whole validation-accuracy history from scratch.
pub fn lr_schedule(history: &[f64], cfg: &TrainConfig) -> f64 {
    let mut s = PlateauSchedule::new(cfg);
    for &acc in history {
        s.observe(acc);
    }
    s.lr()
}

#[derive(Debug, Clone, Serialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Debug)]
pub struct TrainOutcome {
    /// Checkpoint of the epoch with the highest validation accuracy.
    pub best: Checkpoint,
    /// Checkpoint after the final epoch (the resume point).
    pub last: Checkpoint,
    pub history: Vec<EpochMetrics>,
}

/// A fixed evaluation set: features extracted without augmentation.
#[derive(Debug, Clone)]
pub struct EvalSet {
    pub features: Vec<FeatureMatrix>,
    pub labels: Vec<usize>,
}

fn split_code(split: Split) -> u64 {
    match split {
        Split::Train => 0,
        Split::Validation => 1,
        Split::Test => 2,
    }
}

/// All keyword clips of the split, plus round(10%) unknowns picked by an
/// even stride over the split's unknown pool and round(10%) synthesized
/// silences. The silence stream is derived from a fixed constant rather
/// than the run seed, so every trial scores the same examples.
pub fn assemble_eval_set(
    data: &DatasetScan,
    split: Split,
    extractor: &MfccExtractor,
) -> Result<EvalSet> {
    let keywords: Vec<usize> = (0..data.samples.len())
        .filter(|&i| {
            data.samples[i].split == split && LabelSpace::is_keyword(data.samples[i].label)
        })
        .collect();
    let unknowns: Vec<usize> = (0..data.samples.len())
        .filter(|&i| data.samples[i].split == split && data.samples[i].label == UNKNOWN_INDEX)
        .collect();
    let n_extra = (0.1 * keywords.len() as f64).round() as usize;

    let mut features = Vec::new();
    let mut labels = Vec::new();
    let mut push_sample = |i: usize| -> Result<()> {
        let sample = &data.samples[i];
        features.push(extractor.extract(&data.load_audio(sample)?)?);
        labels.push(sample.label);
        Ok(())
    };
    for &i in &keywords {
        push_sample(i)?;
    }
    if n_extra >= unknowns.len() {
        for &i in &unknowns {
            push_sample(i)?;
        }
    } else {
        for j in 0..n_extra {
            push_sample(unknowns[j * unknowns.len() / n_extra])?;
        }
    }
    if !data.noise.is_empty() {
        for slot in 0..n_extra {
            let mut srng = rng::derived(0, "eval-silence", &[split_code(split), slot as u64]);
            let buf = make_silence(&data.noise, &mut srng)?;
            features.push(extractor.extract(&buf)?);
            labels.push(SILENCE_INDEX);
        }
    }
    if features.is_empty() {
        return Err(Error::EmptyTestSet);
    }
    Ok(EvalSet { features, labels })
}

/// Per-batch composition: `round(silence_frac * B)` silences and
/// `round(unknown_frac * B)` unknowns, keywords filling the rest.
#[derive(Debug, Clone, Copy)]
struct BatchPlan {
    keywords_per_batch: usize,
    n_unknown: usize,
    n_silence: usize,
    steps: usize,
}

fn plan_batches(
    n_keywords: usize,
    have_unknowns: bool,
    have_noise: bool,
    cfg: &TrainConfig,
    aug: &AugmentationConfig,
) -> BatchPlan {
    let n_sil_cfg = (aug.silence_frac * cfg.batch_size as f64).round() as usize;
    let n_unk_cfg = (aug.unknown_frac * cfg.batch_size as f64).round() as usize;
    let keywords_per_batch = cfg.batch_size.saturating_sub(n_sil_cfg + n_unk_cfg).max(1);
    BatchPlan {
        keywords_per_batch,
        n_unknown: if have_unknowns { n_unk_cfg } else { 0 },
        n_silence: if have_noise { n_sil_cfg } else { 0 },
        steps: n_keywords.div_ceil(keywords_per_batch),
    }
}

fn train_features(
    data: &DatasetScan,
    cache: &EpochCache,
    extractor: &MfccExtractor,
    aug: &AugmentationConfig,
    seed: u64,
    sample_index: usize,
    epoch: u64,
) -> Result<FeatureMatrix> {
    let sample = &data.samples[sample_index];
    cache.get_or_compute(&sample.path, epoch, |refresh_epoch| {
        let audio = data.load_audio(sample)?;
        let mut arng = rng::derived(seed, "aug", &[sample_index as u64, refresh_epoch]);
        let augmented = augment(&audio, &data.noise, aug, &mut arng)?;
        extractor.extract(&augmented)
    })
}

/// Re-derive which cache entries a run that completed `epochs_done` epochs
/// would be holding, as bookkeeping entries carrying their refresh epochs.
fn replay_cache_history(
    cache: &EpochCache,
    data: &DatasetScan,
    kw_train: &[usize],
    unk_train: &[usize],
    plan: BatchPlan,
    aug: &AugmentationConfig,
    seed: u64,
    epochs_done: usize,
) {
    for epoch in 0..epochs_done as u64 {
        let mut plan_rng = rng::derived(seed, "plan", &[epoch]);
        let mut order = kw_train.to_vec();
        order.shuffle(&mut plan_rng);
        for step in 0..plan.steps {
            let lo = step * plan.keywords_per_batch;
            let hi = ((step + 1) * plan.keywords_per_batch).min(order.len());
            for &idx in &order[lo..hi] {
                cache.mark_bookkeeping(&data.samples[idx].path, epoch);
            }
            for _ in 0..plan.n_unknown {
                let idx = unk_train[plan_rng.gen_range(0..unk_train.len())];
                cache.mark_bookkeeping(&data.samples[idx].path, epoch);
            }
        }
        cache.evict_fraction(
            aug.cache_eviction_frac,
            &mut rng::derived(seed, "evict", &[epoch]),
        );
    }
}

/// Full training run. With `resume`, continues a checkpointed run and is
/// bit-identical to having trained straight through under the same seed.
/// `progress` is called once per finished epoch.
pub fn train(
    spec: &ArchSpec,
    data: &DatasetScan,
    cfg: &TrainConfig,
    aug: &AugmentationConfig,
    resume: Option<&Checkpoint>,
    mut progress: Option<&mut dyn FnMut(&EpochMetrics)>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let kw_train: Vec<usize> = (0..data.samples.len())
        .filter(|&i| {
            data.samples[i].split == Split::Train && LabelSpace::is_keyword(data.samples[i].label)
        })
        .collect();
    let unk_train: Vec<usize> = (0..data.samples.len())
        .filter(|&i| {
            data.samples[i].split == Split::Train && data.samples[i].label == UNKNOWN_INDEX
        })
        .collect();
    if kw_train.is_empty() {
        return Err(Error::Dataset(format!(
            "no keyword clips landed in the training split under {}",
            data.root.display()
        )));
    }

    let extractor = MfccExtractor::new(FrontendConfig::default());
    let val = assemble_eval_set(data, Split::Validation, &extractor)?;
    let plan = plan_batches(
        kw_train.len(),
        !unk_train.is_empty(),
        !data.noise.is_empty(),
        cfg,
        aug,
    );

    let seed = resume.map(|c| c.state.seed).unwrap_or(cfg.seed);
    let mut model = Model::build(spec, seed);
    let mut opt = SgdMomentum::new(cfg.lr0 as f32, cfg.momentum as f32, cfg.weight_decay as f32);
    let mut sched = PlateauSchedule::new(cfg);
    let cache = EpochCache::new();
    let mut start_epoch = 0usize;
    let mut best: Option<Checkpoint> = None;
    let mut best_acc = f64::NEG_INFINITY;
    let mut history = Vec::new();

    if let Some(ck) = resume {
        ck.restore(&mut model, &mut opt)?;
        start_epoch = ck.state.epoch as usize;
        sched = PlateauSchedule::resume(
            cfg,
            ck.state.lr,
            ck.state.plateau_best,
            ck.state.stale_epochs as usize,
        );
        best_acc = ck.state.best_val;
        best = Some(ck.clone());
        replay_cache_history(
            &cache,
            data,
            &kw_train,
            &unk_train,
            plan,
            aug,
            seed,
            start_epoch,
        );
    }

    let mut last = resume.cloned();
    for epoch in start_epoch..cfg.epochs {
        let e64 = epoch as u64;
        let mut plan_rng = rng::derived(seed, "plan", &[e64]);
        let mut order = kw_train.clone();
        order.shuffle(&mut plan_rng);
        let mut loss_sum = 0.0f64;
        let mut silence_slot = 0u64;

        for step in 0..plan.steps {
            let lo = step * plan.keywords_per_batch;
            let hi = ((step + 1) * plan.keywords_per_batch).min(order.len());
            let mut feats = Vec::with_capacity(cfg.batch_size);
            let mut labels = Vec::with_capacity(cfg.batch_size);
            for &idx in &order[lo..hi] {
                feats.push(train_features(
                    data, &cache, &extractor, aug, seed, idx, e64,
                )?);
                labels.push(data.samples[idx].label);
            }
            for _ in 0..plan.n_unknown {
                let idx = unk_train[plan_rng.gen_range(0..unk_train.len())];
                feats.push(train_features(
                    data, &cache, &extractor, aug, seed, idx, e64,
                )?);
                labels.push(UNKNOWN_INDEX);
            }
            for _ in 0..plan.n_silence {
                let mut srng = rng::derived(seed, "silence", &[e64, silence_slot]);
                silence_slot += 1;
                let buf = make_silence(&data.noise, &mut srng)?;
                feats.push(extractor.extract(&buf)?);
                labels.push(SILENCE_INDEX);
            }

            let refs: Vec<&FeatureMatrix> = feats.iter().collect();
            let x = batch_to_tensor(&refs)?;
            let (loss, _) = model.forward_train(&x, &labels)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: step,
                    lr: sched.lr(),
                });
            }
            model.backward()?;
            opt.lr = sched.lr() as f32;
            opt.step(&mut model.params_mut())?;
            loss_sum += loss;
        }

        cache.evict_fraction(
            aug.cache_eviction_frac,
            &mut rng::derived(seed, "evict", &[e64]),
        );

        let probs = score_all(&mut model, &val.features, cfg.batch_size)?;
        let val_acc = accuracy(&probs, &val.labels)?;
        let lr_used = sched.lr();
        sched.observe(val_acc);
        let improved = val_acc > best_acc;
        if improved {
            best_acc = val_acc;
        }
        let ck = Checkpoint::capture(
            &model,
            &opt,
            TrainState {
                epoch: (epoch + 1) as u32,
                seed,
                val_accuracy: val_acc,
                best_val: best_acc,
                plateau_best: sched.reference(),
                lr: sched.lr(),
                stale_epochs: sched.stale() as u32,
            },
        );
        if improved || best.is_none() {
            best = Some(ck.clone());
        }
        history.push(EpochMetrics {
            epoch,
            lr: lr_used,
            train_loss: loss_sum / plan.steps as f64,
            val_accuracy: val_acc,
        });
        if let Some(report) = progress.as_deref_mut() {
            report(history.last().unwrap());
        }
        last = Some(ck);
    }

    let last = last.ok_or_else(|| {
        Error::Dataset("nothing to train: checkpoint already at the requested epoch".into())
    })?;
    Ok(TrainOutcome {
        best: best.unwrap_or_else(|| last.clone()),
        last,
        history,
    })
}
