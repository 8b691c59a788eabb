//! Self-supervised training: contrastive, prototype and unlabeled-consistency
//! losses over sampled BEV pixel embeddings, optimized with Adam.

pub mod kmeans;
pub mod losses;
pub mod prototypes;
pub mod queue;

use std::path::Path;

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autolabel::{Label, LabelMask};
use crate::bev::{BevGrid, GridSpec};
use crate::error::{Error, Result};
use crate::model::{Architecture, FeatureMap, ModelParams};

pub use kmeans::{kmeans, KMeansResult};
pub use losses::{
    cluster_loss, contrast_loss, proto_loss, psa_perturb, total_loss, unlabel_loss, ClusterTerm, ContrastTerm,
    LossParts, ProtoDenominator, SkipCounters, Term,
};
pub use prototypes::{assign_unlabeled, build_hierarchy, PrototypeGroup, PrototypeHierarchy};
pub use queue::{ClassTag, FeatureQueue};

/// Which loss terms take part in the objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TermSwitches {
    pub contrast: bool,
    pub cluster: bool,
    pub unlabel: bool,
}

impl Default for TermSwitches {
    fn default() -> Self {
        Self {
            contrast: true,
            cluster: true,
            unlabel: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Exponent of the polynomial decay to zero at the last step.
    pub lr_power: f64,
    pub temperature: f64,
    /// Epochs over which the auxiliary weight ramps linearly from 0 to 1.
    pub lambda_ramp_epochs: f64,
    /// Prototype momentum handed to online inference.
    pub momentum: f64,
    /// Similarity threshold handed to online inference.
    pub alpha: f64,
    pub cluster_sizes: Vec<usize>,
    pub negatives: usize,
    pub psa_sigma: f64,
    pub samples_per_class: usize,
    pub queue_capacity: usize,
    pub kmeans_iters: usize,
    pub seed: u64,
    pub proto_denominator: ProtoDenominator,
    pub terms: TermSwitches,
    /// Side of the random square crop each frame is trained on; `None` uses
    /// the whole grid.
    pub crop_size: Option<usize>,
    /// Independent crops drawn from every frame per epoch.
    pub crops_per_frame: usize,
    pub architecture: Architecture,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 60,
            batch_size: 4,
            learning_rate: 1e-4,
            lr_power: 0.9,
            temperature: 0.05,
            lambda_ramp_epochs: 60.0,
            momentum: 0.99,
            alpha: 0.9,
            cluster_sizes: vec![50, 100, 500],
            negatives: 8,
            psa_sigma: 0.1,
            samples_per_class: 256,
            queue_capacity: 4096,
            kmeans_iters: 100,
            seed: 0,
            proto_denominator: ProtoDenominator::WithPositive,
            terms: TermSwitches::default(),
            crop_size: None,
            crops_per_frame: 1,
            architecture: Architecture::default(),
        }
    }
}

impl TrainConfig {
    /// Settings sized for a few-minute single-core run on synthetic data.
    pub fn desk_scale() -> Self {
        Self {
            epochs: 20,
            learning_rate: 5e-4,
            lambda_ramp_epochs: 20.0,
            cluster_sizes: vec![4, 8, 16],
            samples_per_class: 128,
            queue_capacity: 2048,
            crop_size: Some(96),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if !(self.learning_rate > 0.0) || !(self.lr_power >= 0.0) {
            return bad("learning rate and decay power must be positive".into());
        }
        if !(self.temperature > 0.0) {
            return bad(format!("temperature {} must be > 0", self.temperature));
        }
        if !(self.psa_sigma >= 0.0) {
            return bad(format!("psa_sigma {} must be >= 0", self.psa_sigma));
        }
        if self.negatives == 0 {
            return bad("negatives must be >= 1".into());
        }
        if !(self.lambda_ramp_epochs >= 0.0) {
            return bad("lambda_ramp_epochs must be >= 0".into());
        }
        if !(0.0..=1.0).contains(&self.momentum) || !(-1.0..=1.0).contains(&self.alpha) {
            return bad("momentum must lie in [0,1] and alpha in [-1,1]".into());
        }
        if self.samples_per_class == 0 {
            return bad("samples_per_class must be positive".into());
        }
        prototypes::validate_cluster_sizes(&self.cluster_sizes)?;
        if self.queue_capacity < *self.cluster_sizes.last().unwrap() {
            return bad("queue_capacity must hold at least max(cluster_sizes) vectors".into());
        }
        self.architecture.validate()?;
        if self.crops_per_frame == 0 {
            return bad("crops_per_frame must be positive".into());
        }
        if let Some(c) = self.crop_size {
            if c < self.architecture.min_input() {
                return bad(format!("crop_size {c} is below the model minimum {}", self.architecture.min_input()));
            }
        }
        Ok(())
    }

    pub fn lambda_at(&self, epoch: usize) -> f64 {
        if self.lambda_ramp_epochs <= 0.0 {
            1.0
        } else {
            (epoch as f64 / self.lambda_ramp_epochs).min(1.0)
        }
    }

    pub fn lr_at(&self, step: usize, total_steps: usize) -> f64 {
        let frac = step as f64 / total_steps.max(1) as f64;
        self.learning_rate * (1.0 - frac).max(0.0).powf(self.lr_power)
    }
}

/// Sampled pixel indices per class and their embeddings.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ClassSamples {
    pub trav_idx: Vec<usize>,
    pub untrav_idx: Vec<usize>,
    pub unlabel_idx: Vec<usize>,
    pub trav: Vec<Vec<f64>>,
    pub untrav: Vec<Vec<f64>>,
    pub unlabel: Vec<Vec<f64>>,
}

/// Uniform without-replacement draw of up to `n` pixels per class. When
/// `occupancy` is given only observed cells are eligible.
pub fn sample_class_features<R: Rng + ?Sized>(
    fmap: &FeatureMap,
    mask: &LabelMask,
    occupancy: Option<&[bool]>,
    n: usize,
    rng: &mut R,
) -> Result<ClassSamples> {
    let cells = fmap.height * fmap.width;
    if mask.spec.height_cells != fmap.height || mask.spec.width_cells != fmap.width || mask.labels.len() != cells {
        return Err(Error::Config("label mask is not aligned with the feature map".into()));
    }
    if occupancy.is_some_and(|o| o.len() != cells) {
        return Err(Error::Config("occupancy is not aligned with the feature map".into()));
    }
    let mut pools: [Vec<usize>; 3] = Default::default();
    for (i, l) in mask.labels.iter().enumerate() {
        if occupancy.is_none_or(|o| o[i]) {
            pools[*l as usize].push(i);
        }
    }
    let mut pick = |pool: &Vec<usize>| -> Vec<usize> {
        if pool.len() <= n {
            pool.clone()
        } else {
            index::sample(rng, pool.len(), n).into_iter().map(|j| pool[j]).collect()
        }
    };
    let gather = |idx: &[usize]| -> Vec<Vec<f64>> {
        idx.iter().map(|&i| fmap.pixel(i).iter().map(|&x| x as f64).collect()).collect()
    };
    let trav_idx = pick(&pools[Label::Traversable as usize]);
    let untrav_idx = pick(&pools[Label::Untraversable as usize]);
    let unlabel_idx = pick(&pools[Label::Unlabeled as usize]);
    Ok(ClassSamples {
        trav: gather(&trav_idx),
        untrav: gather(&untrav_idx),
        unlabel: gather(&unlabel_idx),
        trav_idx,
        untrav_idx,
        unlabel_idx,
    })
}

/// Cuts the same square window out of a BEV grid and its labels.
pub fn crop_pair(bev: &BevGrid, labels: &LabelMask, top: usize, left: usize, size: usize) -> (BevGrid, LabelMask) {
    let spec = GridSpec {
        width_cells: size,
        height_cells: size,
        resolution: bev.spec.resolution,
    };
    let mut out = BevGrid::empty(spec, bev.timestamp);
    let mut lab = LabelMask::unlabeled(spec);
    for r in 0..size {
        for c in 0..size {
            let src = bev.spec.index(top + r, left + c);
            let dst = r * size + c;
            out.rgb[dst] = bev.rgb[src];
            out.occupancy[dst] = bev.occupancy[src];
            lab.labels[dst] = labels.labels[src];
        }
    }
    (out, lab)
}

/// Per-epoch training log row.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub loss_total: f64,
    pub loss_contrast: f64,
    pub loss_cluster: f64,
    pub loss_unlabel: f64,
    pub lambda: f64,
    pub lr: f64,
    pub skip_contrast: u64,
    pub skip_cluster_trav: u64,
    pub skip_cluster_untrav: u64,
    pub skip_unlabel: u64,
    pub hierarchy_deferred: u64,
    /// Mean cosine between sampled traversable embeddings.
    pub trav_cohesion: f64,
    /// Mean cosine between sampled traversable and untraversable embeddings.
    pub cross_similarity: f64,
    pub separation: f64,
}

pub fn write_metrics_csv(path: impl AsRef<Path>, rows: &[EpochMetrics]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
    for r in rows {
        w.serialize(r).map_err(|e| Error::format(path, e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub metrics: Vec<EpochMetrics>,
    /// Prototypes from the last rebuild, if any was possible.
    pub hierarchy: Option<PrototypeHierarchy>,
}

struct Adam {
    m: Vec<f32>,
    v: Vec<f32>,
    t: i32,
}

impl Adam {
    const B1: f32 = 0.9;
    const B2: f32 = 0.999;
    const EPS: f32 = 1e-8;

    fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [f32], grad: &[f32], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::B1.powi(self.t);
        let c2 = 1.0 - Self::B2.powi(self.t);
        let lr = lr as f32;
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = Self::B1 * self.m[i] + (1.0 - Self::B1) * g;
            self.v[i] = Self::B2 * self.v[i] + (1.0 - Self::B2) * g * g;
            params[i] -= lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + Self::EPS);
        }
    }
}

fn mean_pair_cos(a: &[Vec<f64>]) -> Option<f64> {
    let n = a.len();
    if n < 2 {
        return None;
    }
    let d = a[0].len();
    let mut s = vec![0.0; d];
    let mut selfsum = 0.0;
    for v in a {
        for k in 0..d {
            s[k] += v[k];
        }
        selfsum += prototypes::dot(v, v);
    }
    Some((prototypes::dot(&s, &s) - selfsum) / (n * (n - 1)) as f64)
}

fn mean_cross_cos(a: &[Vec<f64>], b: &[Vec<f64>]) -> Option<f64> {
    if a.is_empty() || b.is_empty() {
        return None;
    }
    let d = a[0].len();
    let sum = |xs: &[Vec<f64>]| {
        let mut s = vec![0.0; d];
        for v in xs {
            for k in 0..d {
                s[k] += v[k];
            }
        }
        s
    };
    Some(prototypes::dot(&sum(a), &sum(b)) / (a.len() * b.len()) as f64)
}

/// Chooses a crop window around a labeled, observed cell.
fn crop_window<R: Rng + ?Sized>(bev: &BevGrid, labels: &LabelMask, size: usize, rng: &mut R) -> (usize, usize) {
    let (h, w) = (bev.spec.height_cells, bev.spec.width_cells);
    let anchors: Vec<usize> = (0..labels.labels.len())
        .filter(|&i| labels.labels[i] != Label::Unlabeled && bev.occupancy[i])
        .collect();
    let (ar, ac) = if anchors.is_empty() {
        (rng.random_range(0..h) as i64, rng.random_range(0..w) as i64)
    } else {
        let i = anchors[rng.random_range(0..anchors.len())];
        ((i / w) as i64, (i % w) as i64)
    };
    let jitter = (size / 4) as i64;
    let mut off = |a: i64, lim: usize| -> usize {
        let j = rng.random_range(-jitter..=jitter);
        (a - size as i64 / 2 + j).clamp(0, (lim - size) as i64) as usize
    };
    let top = off(ar, h);
    let left = off(ac, w);
    (top, left)
}

#[derive(Default)]
struct EpochAccum {
    batches: usize,
    total: f64,
    parts: LossParts,
    cohesion: (f64, usize),
    cross: (f64, usize),
    skips: SkipCounters,
}

/// Trains `params` on `dataset`. All randomness derives from `cfg.seed`, and
/// every reduction runs in a fixed order, so identical inputs give
/// bit-identical results.
pub fn fit(dataset: &[(BevGrid, LabelMask)], cfg: &TrainConfig, mut params: ModelParams) -> Result<TrainOutcome> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::Config("training dataset is empty".into()));
    }
    if params.arch != cfg.architecture {
        return Err(Error::Config("model architecture does not match the training config".into()));
    }
    for (bev, labels) in dataset {
        if bev.spec != labels.spec {
            return Err(Error::Config("label mask is not aligned with its BEV grid".into()));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(params.params.len());
    let mut q_trav = FeatureQueue::new(ClassTag::Trav, cfg.queue_capacity);
    let mut q_untrav = FeatureQueue::new(ClassTag::Untrav, cfg.queue_capacity);
    let steps_per_epoch = (dataset.len() * cfg.crops_per_frame).div_ceil(cfg.batch_size);
    let total_steps = steps_per_epoch * cfg.epochs;
    let mut step = 0usize;
    let mut metrics = Vec::with_capacity(cfg.epochs);
    let mut hierarchy: Option<PrototypeHierarchy> = None;
    let needs_protos = cfg.terms.cluster || cfg.terms.unlabel;

    for epoch in 0..cfg.epochs {
        let lambda = cfg.lambda_at(epoch);
        let mut acc = EpochAccum::default();
        if needs_protos {
            match build_hierarchy(&q_trav, &q_untrav, &cfg.cluster_sizes, &mut rng, cfg.kmeans_iters) {
                Ok(h) => hierarchy = Some(h),
                Err(Error::Clustering(msg)) => {
                    log::debug!("epoch {epoch}: prototype rebuild deferred ({msg})");
                    acc.skips.hierarchy_deferred += 1;
                }
                Err(e) => return Err(e),
            }
        }
        let mut order: Vec<usize> = (0..dataset.len() * cfg.crops_per_frame).map(|i| i % dataset.len()).collect();
        order.shuffle(&mut rng);
        let mut lr = cfg.lr_at(step, total_steps);
        for batch in order.chunks(cfg.batch_size) {
            lr = cfg.lr_at(step, total_steps);
            let (loss, grad) = batch_step(dataset, batch, cfg, &params, hierarchy.as_ref(), lambda, &mut rng, &mut acc, &mut q_trav, &mut q_untrav)?;
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Divergence(format!(
                    "epoch {epoch} step {step}: loss {loss} (contrast {}, cluster {}, unlabel {}), lambda {lambda}, lr {lr}",
                    acc.parts.contrast, acc.parts.cluster, acc.parts.unlabel
                )));
            }
            adam.step(&mut params.params, &grad, lr);
            step += 1;
        }
        let nb = acc.batches.max(1) as f64;
        let cohesion = acc.cohesion.0 / acc.cohesion.1.max(1) as f64;
        let cross = acc.cross.0 / acc.cross.1.max(1) as f64;
        let row = EpochMetrics {
            epoch,
            loss_total: acc.total / nb,
            loss_contrast: acc.parts.contrast / nb,
            loss_cluster: acc.parts.cluster / nb,
            loss_unlabel: acc.parts.unlabel / nb,
            lambda,
            lr,
            skip_contrast: acc.skips.contrast,
            skip_cluster_trav: acc.skips.cluster_trav,
            skip_cluster_untrav: acc.skips.cluster_untrav,
            skip_unlabel: acc.skips.unlabel,
            hierarchy_deferred: acc.skips.hierarchy_deferred,
            trav_cohesion: cohesion,
            cross_similarity: cross,
            separation: cohesion - cross,
        };
        log::info!(
            "epoch {epoch}: loss {:.4} (contrast {:.4}, cluster {:.4}, unlabel {:.4}) sep {:.3}",
            row.loss_total,
            row.loss_contrast,
            row.loss_cluster,
            row.loss_unlabel,
            row.separation
        );
        metrics.push(row);
    }
    Ok(TrainOutcome {
        params,
        metrics,
        hierarchy,
    })
}

/// Forward, loss and backward for one batch. Returns the batch loss and the
/// summed parameter gradient.
#[allow(clippy::too_many_arguments)]
fn batch_step(
    dataset: &[(BevGrid, LabelMask)],
    batch: &[usize],
    cfg: &TrainConfig,
    params: &ModelParams,
    hierarchy: Option<&PrototypeHierarchy>,
    lambda: f64,
    rng: &mut ChaCha8Rng,
    acc: &mut EpochAccum,
    q_trav: &mut FeatureQueue,
    q_untrav: &mut FeatureQueue,
) -> Result<(f64, Vec<f32>)> {
    let mut traces = Vec::with_capacity(batch.len());
    let mut samples = Vec::with_capacity(batch.len());
    for &fi in batch {
        let (bev, labels) = &dataset[fi];
        let (bev, labels) = match cfg.crop_size {
            Some(size) if size < bev.spec.height_cells || size < bev.spec.width_cells => {
                let size = size.min(bev.spec.height_cells).min(bev.spec.width_cells);
                let (top, left) = crop_window(bev, labels, size, rng);
                crop_pair(bev, labels, top, left, size)
            }
            _ => (bev.clone(), labels.clone()),
        };
        let trace = params.forward_traced(&bev)?;
        let fmap = FeatureMap::from_chw(&trace.output);
        samples.push(sample_class_features(&fmap, &labels, Some(&bev.occupancy), cfg.samples_per_class, rng)?);
        traces.push(trace);
    }

    // pool across the batch, remembering where each sample came from
    let mut owners: [Vec<(usize, usize)>; 3] = Default::default();
    let mut pooled: [Vec<Vec<f64>>; 3] = Default::default();
    for (f, s) in samples.iter().enumerate() {
        for (c, (idx, feats)) in [(&s.trav_idx, &s.trav), (&s.untrav_idx, &s.untrav), (&s.unlabel_idx, &s.unlabel)]
            .into_iter()
            .enumerate()
        {
            owners[c].extend(idx.iter().map(|&i| (f, i)));
            pooled[c].extend(feats.iter().cloned());
        }
    }
    let [trav, untrav, unlabel] = &pooled;
    let d = params.embedding_dim();
    let mut grads: [Vec<Vec<f64>>; 3] = [
        vec![vec![0.0; d]; trav.len()],
        vec![vec![0.0; d]; untrav.len()],
        vec![vec![0.0; d]; unlabel.len()],
    ];
    let add = |dst: &mut Vec<Vec<f64>>, src: &[Vec<f64>], w: f64| {
        for (a, b) in dst.iter_mut().zip(src) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += w * y;
            }
        }
    };

    let mut parts = LossParts::default();
    if cfg.terms.contrast {
        match contrast_loss(trav, untrav, cfg.temperature) {
            Some(t) => {
                parts.contrast = t.value;
                add(&mut grads[0], &t.grad_trav, 1.0);
                add(&mut grads[1], &t.grad_untrav, 1.0);
            }
            None => acc.skips.contrast += 1,
        }
    }
    if let Some(h) = hierarchy {
        if cfg.terms.cluster {
            let c = cluster_loss(
                trav,
                untrav,
                h,
                cfg.negatives,
                cfg.temperature,
                cfg.proto_denominator,
                rng,
                &mut acc.skips,
            );
            parts.cluster = c.value;
            add(&mut grads[0], &c.grad_trav, lambda);
            add(&mut grads[1], &c.grad_untrav, lambda);
        }
        if cfg.terms.unlabel {
            match unlabel_loss(unlabel, h, cfg.psa_sigma, rng) {
                Some(t) => {
                    parts.unlabel = t.value;
                    add(&mut grads[2], &t.grad, lambda);
                }
                None => acc.skips.unlabel += 1,
            }
        }
    } else {
        if cfg.terms.cluster {
            acc.skips.cluster_trav += 1;
            acc.skips.cluster_untrav += 1;
        }
        if cfg.terms.unlabel {
            acc.skips.unlabel += 1;
        }
    }
    let loss = total_loss(&parts, lambda);

    let mut upstream: Vec<FeatureMap> = traces
        .iter()
        .map(|t| FeatureMap::zeros(t.output.h, t.output.w, t.output.c))
        .collect();
    for c in 0..3 {
        for (&(f, i), g) in owners[c].iter().zip(&grads[c]) {
            for (u, v) in upstream[f].pixel_mut(i).iter_mut().zip(g) {
                *u += *v as f32;
            }
        }
    }
    let mut total_grad = vec![0.0f32; params.params.len()];
    for (trace, up) in traces.iter().zip(&upstream) {
        for (a, b) in total_grad.iter_mut().zip(params.backward_traced(trace, up)) {
            *a += b;
        }
    }

    if let Some(c) = mean_pair_cos(trav) {
        acc.cohesion.0 += c;
        acc.cohesion.1 += 1;
    }
    if let Some(c) = mean_cross_cos(trav, untrav) {
        acc.cross.0 += c;
        acc.cross.1 += 1;
    }
    acc.batches += 1;
    acc.total += loss;
    acc.parts.contrast += parts.contrast;
    acc.parts.cluster += parts.cluster;
    acc.parts.unlabel += parts.unlabel;
    q_trav.extend(trav);
    q_untrav.extend(untrav);
    Ok((loss, total_grad))
}
