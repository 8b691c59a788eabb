//! Stage orchestration over whole sequences, in memory.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autolabel::{build_label_mask, footprint_cells, LabelMask, LabelStats, ObstacleMask};
use crate::bev::{AccumulatorConfig, AccumulatorState, BevGrid};
use crate::error::{Error, Result};
use crate::evaluation::{evaluate, restrict_to_observed, EvalReport};
use crate::geometry::{CameraModel, PointCloud, Pose, RgbImage, WheelFootprint};
use crate::model::ModelParams;
use crate::online::{Engine, OnlineConfig, PrototypeQueue, Snapshot};
use crate::synth::SyntheticFrame;
use crate::training::sample_class_features;

/// Runs the accumulator over frames in order.
pub fn build_bevs<'a>(
    frames: impl IntoIterator<Item = (&'a Pose, &'a PointCloud, &'a RgbImage)>,
    camera: &CameraModel,
    config: AccumulatorConfig,
) -> Result<Vec<BevGrid>> {
    camera.validate()?;
    let mut acc = AccumulatorState::new(config);
    frames.into_iter().map(|(p, c, i)| acc.step(p, c, i, camera)).collect()
}

/// Labels every frame from the full trajectory. With `occupancy`, obstacle
/// detections on unobserved cells are dropped first.
pub fn autolabel_sequence(
    poses: &[Pose],
    obstacles: &[ObstacleMask],
    occupancy: Option<&[Vec<bool>]>,
    footprint: &WheelFootprint,
    horizon_s: f64,
) -> Result<Vec<(LabelMask, LabelStats)>> {
    if obstacles.len() != poses.len() || occupancy.is_some_and(|b| b.len() != poses.len()) {
        return Err(Error::Sequence("poses, obstacle masks and BEVs differ in length".into()));
    }
    footprint.validate()?;
    let mut out = Vec::with_capacity(poses.len());
    for (t, pose) in poses.iter().enumerate() {
        let mut obs = obstacles[t].clone();
        if let Some(occ) = occupancy {
            obs.restrict_to(&occ[t])?;
        }
        let cells = footprint_cells(poses, footprint, pose, &obs.spec, horizon_s);
        out.push(build_label_mask(&cells, &obs));
    }
    Ok(out)
}

/// Prototype queue seeded with traversable-labeled features from a dataset,
/// as used by a frozen deployment.
pub fn queue_from_dataset(params: &ModelParams, dataset: &[(BevGrid, LabelMask)], config: &OnlineConfig) -> Result<PrototypeQueue> {
    let mut queue = PrototypeQueue::new(params.embedding_dim(), config.alpha, config.momentum, config.capacity)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    for (bev, labels) in dataset {
        let fmap = params.forward(bev)?;
        let interior = bev.observed_interior(config.observed_radius, config.observed_fraction);
        let s = sample_class_features(&fmap, labels, Some(&interior), config.samples_per_frame, &mut rng)?;
        for z in &s.trav {
            let z: Vec<f32> = z.iter().map(|&x| x as f32).collect();
            queue.update(&z);
        }
    }
    Ok(queue)
}

/// Steps the engine through a sequence; frame `t` sees poses up to `t`.
pub fn run_online(engine: &mut Engine, bevs: &[BevGrid], poses: &[Pose]) -> Result<Vec<Arc<Snapshot>>> {
    if bevs.len() != poses.len() {
        return Err(Error::Sequence("BEVs and poses differ in length".into()));
    }
    (0..bevs.len()).map(|t| engine.step(&bevs[t], &poses[t], &poses[..=t])).collect()
}

/// Everything downstream stages need from one synthetic drive.
#[derive(Debug, Clone)]
pub struct PreparedSequence {
    pub poses: Vec<Pose>,
    pub bevs: Vec<BevGrid>,
    pub labels: Vec<LabelMask>,
    /// Ground truth restricted to cells observed in each BEV.
    pub ground_truth: Vec<LabelMask>,
}

impl PreparedSequence {
    pub fn len(&self) -> usize {
        self.bevs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bevs.is_empty()
    }

    pub fn dataset(&self, range: std::ops::Range<usize>) -> Vec<(BevGrid, LabelMask)> {
        range.map(|t| (self.bevs[t].clone(), self.labels[t].clone())).collect()
    }
}

pub fn prepare_synthetic(
    frames: &[SyntheticFrame],
    camera: &CameraModel,
    accumulator: AccumulatorConfig,
    footprint: &WheelFootprint,
    horizon_s: f64,
) -> Result<PreparedSequence> {
    let poses: Vec<Pose> = frames.iter().map(|f| f.pose).collect();
    let bevs = build_bevs(frames.iter().map(|f| (&f.pose, &f.cloud, &f.image)), camera, accumulator)?;
    let obstacles: Vec<ObstacleMask> = frames.iter().map(|f| f.obstacles.clone()).collect();
    let occupancy: Vec<Vec<bool>> = bevs.iter().map(|b| b.occupancy.clone()).collect();
    let labels = autolabel_sequence(&poses, &obstacles, Some(&occupancy), footprint, horizon_s)?
        .into_iter()
        .map(|(m, _)| m)
        .collect();
    let ground_truth = frames
        .iter()
        .zip(&bevs)
        .map(|(f, b)| restrict_to_observed(&f.ground_truth, &b.occupancy))
        .collect::<Result<_>>()?;
    Ok(PreparedSequence {
        poses,
        bevs,
        labels,
        ground_truth,
    })
}

/// Runs online inference over the whole sequence and scores frames in `eval`.
pub fn evaluate_online(
    engine: &mut Engine,
    seq: &PreparedSequence,
    eval: std::ops::Range<usize>,
) -> Result<EvalReport> {
    let snaps = run_online(engine, &seq.bevs, &seq.poses)?;
    let maps: Vec<_> = snaps[eval.clone()].iter().map(|s| s.map.clone()).collect();
    evaluate(&maps, &seq.ground_truth[eval])
}
