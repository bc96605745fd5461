//! Contrastive training of the point encoder against frozen image and text
//! embeddings, with curriculum, static, two-step and synthetic-only mixing,
//! and per-epoch zero-shot evaluation on held-out instances of each domain.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::contrastive::{self, DEFAULT_TEMPERATURE};
use crate::curriculum::{mean_curriculum_ratio, BatchSampler, CurriculumSchedule, MixingPolicy};
use crate::encoder::{self, EncoderParams};
use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::provider::EmbeddingProvider;
use crate::rng::{hash_str, mix64};
use crate::triplets::{Domain, TripletDataset};
use crate::zeroshot::{self, AccuracyMode, ClassPrototypes, EvalConfig, OUTDOOR_PROMPT};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrainMode {
    Curriculum,
    /// Constant ratio equal to the curriculum's mean ratio.
    Static,
    /// Synthetic-only for the first half, outdoor-only afterwards.
    TwoStep,
    SyntheticOnly,
}

impl TrainMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "curriculum" => Ok(TrainMode::Curriculum),
            "static" => Ok(TrainMode::Static),
            "two-step" => Ok(TrainMode::TwoStep),
            "synthetic-only" => Ok(TrainMode::SyntheticOnly),
            _ => Err(Error::config("mode", format!("unknown mode `{s}`"))),
        }
    }

    pub fn policy(&self, schedule: &CurriculumSchedule) -> Result<MixingPolicy> {
        Ok(match self {
            TrainMode::Curriculum => MixingPolicy::Curriculum,
            TrainMode::Static => MixingPolicy::Static {
                ratio: mean_curriculum_ratio(schedule)?,
            },
            TrainMode::TwoStep => MixingPolicy::TwoStep {
                switch_epoch: schedule.total_epochs / 2,
            },
            TrainMode::SyntheticOnly => MixingPolicy::SyntheticOnly,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// `n_synthetic` is replaced by the size of the synthetic training split.
    pub schedule: CurriculumSchedule,
    pub mode: TrainMode,
    pub seed: u64,
    pub hidden: usize,
    pub learning_rate: f64,
    /// Floor of the cosine-decayed step size.
    pub min_learning_rate: f64,
    pub temperature: f64,
    /// Clouds are stride-subsampled to at most this many points (0 keeps all).
    pub max_points: usize,
    /// Move every cloud into the unit sphere before encoding.
    pub normalize: bool,
    /// Fraction of instances of each domain held out for evaluation.
    pub eval_fraction: f64,
    pub split_seed: u64,
    /// Classes excluded from training in both domains.
    pub holdout_classes: Vec<String>,
    /// Prompt ensemble for the synthetic split; the outdoor split uses the
    /// single outdoor prompt.
    pub templates: Vec<String>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            schedule: CurriculumSchedule {
                warmup_epochs: 2,
                total_epochs: 12,
                r_max: 0.3,
                coverage: 0.8,
                batch_size: 32,
                devices: 1,
                n_synthetic: 1,
            },
            mode: TrainMode::Curriculum,
            seed: 0,
            hidden: 32,
            learning_rate: 2.0,
            min_learning_rate: 0.0,
            temperature: DEFAULT_TEMPERATURE,
            max_points: 256,
            normalize: true,
            eval_fraction: 0.25,
            split_seed: 0,
            holdout_classes: Vec::new(),
            templates: zeroshot::default_templates(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let mut s = self.schedule.clone();
        s.n_synthetic = s.n_synthetic.max(1);
        s.validate()?;
        if self.hidden == 0 {
            return Err(Error::config("hidden", "must be at least 1"));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::config("learning_rate", "must be positive"));
        }
        if !(0.0..=self.learning_rate).contains(&self.min_learning_rate) {
            return Err(Error::config("min_learning_rate", "must be in [0, learning_rate]"));
        }
        if !(self.temperature > 0.0) || !self.temperature.is_finite() {
            return Err(Error::config("temperature", "must be positive"));
        }
        if !(self.eval_fraction > 0.0 && self.eval_fraction < 1.0) {
            return Err(Error::config("eval_fraction", "must be in (0, 1)"));
        }
        if self.templates.is_empty() {
            return Err(Error::config("templates", "must not be empty"));
        }
        Ok(())
    }
}

/// Whether an instance belongs to the evaluation split.
pub fn is_eval_instance(instance_id: &str, fraction: f64, split_seed: u64) -> bool {
    let h = mix64(hash_str(instance_id) ^ mix64(split_seed));
    ((h >> 11) as f64 / (1u64 << 53) as f64) < fraction
}

/// Frozen per-triplet image and text embeddings plus the encoder input for
/// each cloud, for one domain's training split.
#[derive(Debug, Clone)]
pub struct EmbeddingCache {
    /// Triplet indices into the source dataset.
    pub items: Vec<usize>,
    pub images: Vec<DVector<f64>>,
    pub texts: Vec<DVector<f64>>,
    /// Subsampled points per cloud of the source dataset.
    pub clouds: Vec<Vec<Vec3>>,
}

impl EmbeddingCache {
    pub fn build(
        ds: &TripletDataset,
        items: Vec<usize>,
        provider: &dyn EmbeddingProvider,
        max_points: usize,
        normalize: bool,
    ) -> Result<Self> {
        let pairs = items
            .par_iter()
            .map(|&i| {
                let t = &ds.triplets[i];
                Ok((provider.embed_image(&t.image)?, provider.embed_text(&t.caption)?))
            })
            .collect::<Result<Vec<_>>>()?;
        let (images, texts) = pairs.into_iter().unzip();
        let clouds = ds
            .clouds
            .iter()
            .map(|c| encoder::prepare(&c.points, max_points, normalize))
            .collect();
        Ok(EmbeddingCache {
            items,
            images,
            texts,
            clouds,
        })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Digest of the frozen embeddings.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        for v in self.images.iter().chain(&self.texts) {
            for x in v.iter() {
                h.update(x.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: u32,
    pub ratio: f64,
    pub iterations: usize,
    pub mean_loss: f64,
    pub learning_rate: f64,
    pub synthetic_object_top1: f64,
    pub synthetic_class_top1: f64,
    pub outdoor_object_top1: f64,
    pub outdoor_class_top1: f64,
}

pub const METRICS_HEADER: &str = "epoch,mode,ratio,iterations,mean_loss,learning_rate,synthetic_object_top1,synthetic_class_top1,outdoor_object_top1,outdoor_class_top1,config_hash";

pub fn metrics_csv(mode: TrainMode, rows: &[EpochMetrics], config_hash: &str) -> String {
    let name = match mode {
        TrainMode::Curriculum => "curriculum",
        TrainMode::Static => "static",
        TrainMode::TwoStep => "two-step",
        TrainMode::SyntheticOnly => "synthetic-only",
    };
    let mut out = format!("{METRICS_HEADER}\n");
    for m in rows {
        let _ = writeln!(
            out,
            "{},{name},{},{},{},{},{},{},{},{},{config_hash}",
            m.epoch,
            m.ratio,
            m.iterations,
            m.mean_loss,
            m.learning_rate,
            m.synthetic_object_top1,
            m.synthetic_class_top1,
            m.outdoor_object_top1,
            m.outdoor_class_top1
        );
    }
    out
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: EncoderParams,
    pub metrics: Vec<EpochMetrics>,
    pub policy: MixingPolicy,
    /// Frozen-embedding digest, identical before and after training.
    pub embedding_checksum: String,
    pub config_hash: String,
}

impl TrainOutcome {
    pub fn metrics_csv(&self, mode: TrainMode) -> String {
        metrics_csv(mode, &self.metrics, &self.config_hash)
    }
}

/// Trained weights together with the input preprocessing they expect.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub encoder: EncoderParams,
    pub max_points: usize,
    pub normalize: bool,
    pub config_hash: String,
}

impl ModelFile {
    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let json = serde_json::to_vec(self).map_err(|e| Error::json(path, e))?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let m: ModelFile = serde_json::from_slice(&bytes).map_err(|e| Error::json(path, e))?;
        m.encoder.validate()?;
        Ok(m)
    }
}

impl TrainOutcome {
    pub fn model(&self, config: &TrainConfig) -> ModelFile {
        ModelFile {
            encoder: self.params.clone(),
            max_points: config.max_points,
            normalize: config.normalize,
            config_hash: self.config_hash.clone(),
        }
    }
}

struct Split {
    train: Vec<usize>,
    eval: TripletDataset,
}

fn split(ds: &TripletDataset, config: &TrainConfig) -> Split {
    let holdout: BTreeSet<&String> = config.holdout_classes.iter().collect();
    let in_eval: Vec<bool> = ds
        .clouds
        .iter()
        .map(|c| is_eval_instance(&c.instance_id, config.eval_fraction, config.split_seed))
        .collect();
    let train = (0..ds.triplets.len())
        .filter(|&i| {
            let t = &ds.triplets[i];
            !in_eval[t.cloud] && !holdout.contains(&t.label) && !ds.clouds[t.cloud].points.is_empty()
        })
        .collect();
    let mut eval = TripletDataset::empty(&format!("{}-eval", ds.name), &ds.config_hash);
    eval.clouds = ds
        .clouds
        .iter()
        .zip(&in_eval)
        .filter(|(c, e)| **e && !c.points.is_empty())
        .map(|(c, _)| c.clone())
        .collect();
    Split { train, eval }
}

fn class_list(ds: &TripletDataset) -> Vec<String> {
    let set: BTreeSet<&String> = ds.clouds.iter().map(|c| &c.class).collect();
    set.into_iter().cloned().collect()
}

fn cosine_lr(config: &TrainConfig, step: usize, total: usize) -> f64 {
    let progress = if total <= 1 { 0.0 } else { step as f64 / (total - 1) as f64 };
    config.min_learning_rate
        + 0.5 * (config.learning_rate - config.min_learning_rate) * (1.0 + (std::f64::consts::PI * progress).cos())
}

struct Evaluator {
    synthetic: Option<(TripletDataset, ClassPrototypes)>,
    outdoor: Option<(TripletDataset, ClassPrototypes)>,
    config: EvalConfig,
}

impl Evaluator {
    fn top1(&self, which: &Option<(TripletDataset, ClassPrototypes)>, params: &EncoderParams) -> Result<(f64, f64)> {
        let Some((ds, protos)) = which else {
            return Ok((f64::NAN, f64::NAN));
        };
        if ds.clouds.is_empty() {
            return Ok((f64::NAN, f64::NAN));
        }
        let (p, l) = zeroshot::predict_dataset(ds, params, protos, &self.config)?;
        Ok((
            zeroshot::accuracy(&p, &l, 1, AccuracyMode::ObjectWise)?,
            zeroshot::accuracy(&p, &l, 1, AccuracyMode::ClassWise)?,
        ))
    }
}

/// Gradient descent on the encoder against `L(P, I) + L(P, T)`.
pub fn train(
    config: &TrainConfig,
    synthetic: &TripletDataset,
    outdoor: &TripletDataset,
    provider: &dyn EmbeddingProvider,
) -> Result<TrainOutcome> {
    config.validate()?;
    synthetic.validate()?;
    outdoor.validate()?;
    let syn = split(synthetic, config);
    let out = split(outdoor, config);
    if syn.train.is_empty() {
        return Err(Error::config("synthetic", "no synthetic training triplets"));
    }
    let mut schedule = config.schedule.clone();
    schedule.n_synthetic = syn.train.len();
    let policy = config.mode.policy(&schedule)?;
    let needs_outdoor = (0..=schedule.total_epochs).any(|e| policy.ratio(&schedule, e).map_or(true, |r| r > 0.0));
    if needs_outdoor && out.train.is_empty() {
        return Err(Error::config("outdoor", "the schedule mixes in outdoor data but none is available"));
    }

    let config_hash = crate::triplets::config_hash(&(config, &synthetic.config_hash, &outdoor.config_hash, provider.dim()));
    let syn_cache = EmbeddingCache::build(synthetic, syn.train, provider, config.max_points, config.normalize)?;
    let out_cache = EmbeddingCache::build(outdoor, out.train, provider, config.max_points, config.normalize)?;
    let checksum_before = format!("{}{}", syn_cache.checksum(), out_cache.checksum());

    let eval_cfg = EvalConfig {
        ks: vec![1],
        modes: vec![AccuracyMode::ObjectWise, AccuracyMode::ClassWise],
        holdout: Vec::new(),
        min_points: 1,
        max_points: config.max_points,
        normalize: config.normalize,
    };
    let prototypes = |ds: &TripletDataset, templates: &[String]| -> Result<Option<(TripletDataset, ClassPrototypes)>> {
        let classes = class_list(ds);
        if classes.is_empty() {
            return Ok(None);
        }
        Ok(Some((ds.clone(), zeroshot::build_prototypes(&classes, templates, provider)?)))
    };
    let evaluator = Evaluator {
        synthetic: prototypes(&syn.eval, &config.templates)?,
        outdoor: prototypes(&out.eval, &[OUTDOOR_PROMPT.to_string()])?,
        config: eval_cfg,
    };

    let sampler = BatchSampler {
        seed: config.seed,
        batch_size: schedule.batch_size,
        n_synthetic: syn_cache.len(),
        n_outdoor: out_cache.len(),
    };
    let iters = schedule.iterations_per_epoch();
    let total_steps = iters * (schedule.total_epochs as usize + 1);
    let mut params = EncoderParams::init(config.hidden, provider.dim(), config.seed);
    let mut metrics = Vec::new();
    let mut step = 0usize;
    for epoch in 0..=schedule.total_epochs {
        let ratio = policy.ratio(&schedule, epoch)?;
        let mut loss_sum = 0.0;
        let mut lr = config.learning_rate;
        for iter in 0..iters {
            let mut grad = params.zeros_like();
            for device in 0..schedule.devices {
                let batch = sampler.batch(ratio, device, epoch, iter)?;
                let (loss, g) = batch_gradient(&params, &batch, &syn_cache, &out_cache, synthetic, outdoor, config.temperature)?;
                loss_sum += loss / schedule.devices as f64;
                grad.axpy(1.0 / schedule.devices as f64, &g);
            }
            lr = cosine_lr(config, step, total_steps);
            params.axpy(-lr, &grad);
            step += 1;
        }
        if !params.is_finite() {
            return Err(Error::invalid(format!("training diverged in epoch {epoch}")));
        }
        let (so, sc) = evaluator.top1(&evaluator.synthetic, &params)?;
        let (oo, oc) = evaluator.top1(&evaluator.outdoor, &params)?;
        let m = EpochMetrics {
            epoch,
            ratio,
            iterations: iters,
            mean_loss: loss_sum / iters as f64,
            learning_rate: lr,
            synthetic_object_top1: so,
            synthetic_class_top1: sc,
            outdoor_object_top1: oo,
            outdoor_class_top1: oc,
        };
        log::info!(
            "epoch {epoch}: r={ratio:.3} loss={:.4} syn={so:.3} out={oo:.3}",
            m.mean_loss
        );
        metrics.push(m);
    }
    let checksum_after = format!("{}{}", syn_cache.checksum(), out_cache.checksum());
    if checksum_after != checksum_before {
        return Err(Error::invalid("frozen embeddings changed during training"));
    }
    Ok(TrainOutcome {
        params,
        metrics,
        policy,
        embedding_checksum: checksum_after,
        config_hash,
    })
}

fn batch_gradient(
    params: &EncoderParams,
    batch: &[crate::curriculum::BatchEntry],
    syn: &EmbeddingCache,
    out: &EmbeddingCache,
    syn_ds: &TripletDataset,
    out_ds: &TripletDataset,
    tau: f64,
) -> Result<(f64, EncoderParams)> {
    let rows: Vec<(&[Vec3], &DVector<f64>, &DVector<f64>)> = batch
        .iter()
        .map(|e| {
            let (cache, ds) = match e.domain {
                Domain::Synthetic => (syn, syn_ds),
                Domain::Outdoor => (out, out_ds),
            };
            let t = cache.items[e.index];
            let cloud = ds.triplets[t].cloud;
            (cache.clouds[cloud].as_slice(), &cache.images[e.index], &cache.texts[e.index])
        })
        .collect();
    let fwds = rows
        .par_iter()
        .map(|(pts, _, _)| params.forward(pts))
        .collect::<Result<Vec<_>>>()?;
    let b = rows.len();
    let d = params.dim();
    let p = DMatrix::from_fn(b, d, |i, j| fwds[i].embedding[j]);
    let img = DMatrix::from_fn(b, d, |i, j| rows[i].1[j]);
    let txt = DMatrix::from_fn(b, d, |i, j| rows[i].2[j]);
    let (loss, dp) = contrastive::trimodal_loss(&p, &img, &txt, tau)?;
    let parts = (0..b)
        .into_par_iter()
        .map(|i| {
            let mut g = params.zeros_like();
            let di: DVector<f64> = dp.row(i).transpose();
            params.backward(rows[i].0, &fwds[i], &di, &mut g);
            g
        })
        .collect::<Vec<_>>();
    // fixed summation order keeps runs bit-identical across thread counts
    let mut grad = params.zeros_like();
    for g in &parts {
        grad.axpy(1.0, g);
    }
    Ok((loss, grad))
}
