//! Subcommand bodies. Each one checks every input it will read before
//! writing anything.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use travmap_core::evaluation::{curves, evaluate, restrict_to_observed, write_curves_csv};
use travmap_core::io::{
    read_json, read_label_png, read_mask_png, read_obstacle_mask, read_poses_csv, read_pts, read_rgb_png, write_image,
    write_json, write_label_png, write_mask_png, write_poses_csv, write_pts, CostMapMeta, SequenceDir,
};
use travmap_core::online::traversability_map;
use travmap_core::pipeline::{autolabel_sequence, build_bevs, queue_from_dataset};
use travmap_core::synth::{generate_scene, simulate_drive};
use travmap_core::training::{fit, write_metrics_csv, ProtoDenominator};
use travmap_core::{
    model, BevGrid, CameraModel, Engine, Error, EvalReport, GridSpec, Label, LabelMask, LabelStats, ModelParams,
    PrototypeQueue, Result, TraversabilityMap, WheelFootprint,
};

use crate::config::PipelineConfig;
use crate::{BenchArgs, BevArgs, EvalArgs, GtKind, InferArgs, PredKind, SynthArgs, TrainArgs, AutolabelArgs};

/// Written next to a synthetic sequence so it can be regenerated.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SceneRecord {
    pub seed: u64,
    pub scene: travmap_core::synth::SceneSpec,
    pub drive: travmap_core::synth::DriveConfig,
}

fn require_frames(dir: &SequenceDir, sub: &str, ext: &str, frames: impl IntoIterator<Item = usize>) -> Result<()> {
    for i in frames {
        SequenceDir::require(&dir.frame(sub, i, ext))?;
    }
    Ok(())
}

fn require_dir(path: &Path) -> Result<()> {
    SequenceDir::require(path)?;
    if !path.is_dir() {
        return Err(Error::io(path, std::io::Error::other("not a directory")));
    }
    Ok(())
}

fn load_config(path: Option<&PathBuf>) -> Result<PipelineConfig> {
    if let Some(p) = path {
        SequenceDir::require(p)?;
    }
    PipelineConfig::load(path.map(PathBuf::as_path))
}

/// The sequence's own footprint.json when present, else the configured vehicle.
fn footprint_for(data: &SequenceDir, cfg: &PipelineConfig) -> Result<WheelFootprint> {
    let path = data.footprint();
    let fp = if path.exists() {
        read_json(&path)?
    } else {
        cfg.vehicle.footprint()?
    };
    fp.validate()?;
    Ok(fp)
}

fn read_poses(data: &SequenceDir) -> Result<Vec<travmap_core::Pose>> {
    let path = data.poses();
    SequenceDir::require(&path)?;
    let poses = read_poses_csv(&path)?;
    if poses.is_empty() {
        return Err(Error::Sequence(format!("{} holds no poses", path.display())));
    }
    Ok(poses)
}

pub fn synth(args: &SynthArgs) -> Result<usize> {
    let cfg = load_config(args.config.as_ref())?;
    let mut scene_spec = cfg.scene.clone();
    if let Some(s) = args.season {
        scene_spec.season = s;
    }
    let mut drive = cfg.drive.clone();
    if let Some(n) = args.frames {
        drive.duration = n as f64 / drive.frame_rate;
    }
    let footprint = cfg.vehicle.footprint()?;
    let scene = generate_scene(&scene_spec, args.seed)?;
    let frames = simulate_drive(&scene, &drive)?;

    let out = SequenceDir::new(&args.out);
    out.create(&["clouds", "images", "obstacles", "gt"])?;
    write_json(out.camera(), &drive.camera)?;
    write_json(out.footprint(), &footprint)?;
    write_json(out.grid(), &drive.grid)?;
    write_json(
        out.file("scene.json"),
        &SceneRecord {
            seed: args.seed,
            scene: scene_spec,
            drive: drive.clone(),
        },
    )?;
    let poses: Vec<_> = frames.iter().map(|f| f.pose).collect();
    let truth: Vec<_> = frames.iter().map(|f| f.true_pose).collect();
    write_poses_csv(out.poses(), &poses)?;
    write_poses_csv(out.file("poses_true.csv"), &truth)?;
    for (i, f) in frames.iter().enumerate() {
        write_pts(out.frame("clouds", i, "pts"), &f.cloud)?;
        write_image(out.frame("images", i, "png"), &f.image)?;
        write_mask_png(out.frame("obstacles", i, "png"), &f.obstacles.spec, &f.obstacles.cells)?;
        write_label_png(out.frame("gt", i, "png"), &f.ground_truth)?;
    }
    log::info!("wrote {} frames to {}", frames.len(), out.root.display());
    Ok(frames.len())
}

pub fn bev(args: &BevArgs) -> Result<Vec<BevGrid>> {
    let cfg = load_config(args.config.as_ref())?;
    let data = SequenceDir::new(&args.data);
    let poses = read_poses(&data)?;
    SequenceDir::require(&data.camera())?;
    SequenceDir::require(&data.grid())?;
    require_frames(&data, "clouds", "pts", 0..poses.len())?;
    require_frames(&data, "images", "png", 0..poses.len())?;
    let camera: CameraModel = read_json(data.camera())?;
    let grid: GridSpec = read_json(data.grid())?;
    grid.validate()?;
    let acc = travmap_core::AccumulatorConfig { grid, ..cfg.bev };

    let mut inputs = Vec::with_capacity(poses.len());
    for i in 0..poses.len() {
        inputs.push((read_pts(data.frame("clouds", i, "pts"))?, read_rgb_png(data.frame("images", i, "png"))?));
    }
    let bevs = build_bevs(poses.iter().zip(&inputs).map(|(p, (c, im))| (p, c, im)), &camera, acc)?;
    let out = SequenceDir::new(&args.out);
    out.create(&["bev", "occupancy"])?;
    for (i, (b, p)) in bevs.iter().zip(&poses).enumerate() {
        out.write_bev(i, b, p)?;
    }
    log::info!("wrote {} BEV frames to {}", bevs.len(), out.root.display());
    Ok(bevs)
}

pub fn autolabel(args: &AutolabelArgs) -> Result<Vec<(LabelMask, LabelStats)>> {
    let cfg = load_config(args.config.as_ref())?;
    let data = SequenceDir::new(&args.data);
    let poses = read_poses(&data)?;
    SequenceDir::require(&data.grid())?;
    require_frames(&data, "obstacles", "png", 0..poses.len())?;
    let bev_dir = args.bev.as_ref().map(SequenceDir::new);
    if let Some(b) = &bev_dir {
        require_frames(b, "occupancy", "png", 0..poses.len())?;
    }
    let grid: GridSpec = read_json(data.grid())?;
    grid.validate()?;
    let footprint = footprint_for(&data, &cfg)?;

    let obstacles = poses
        .iter()
        .enumerate()
        .map(|(i, p)| read_obstacle_mask(data.frame("obstacles", i, "png"), &grid, p.timestamp))
        .collect::<Result<Vec<_>>>()?;
    let occupancy = match &bev_dir {
        Some(b) => Some(
            (0..poses.len())
                .map(|i| read_mask_png(b.frame("occupancy", i, "png"), &grid))
                .collect::<Result<Vec<_>>>()?,
        ),
        None => None,
    };
    let labeled = autolabel_sequence(&poses, &obstacles, occupancy.as_deref(), &footprint, cfg.autolabel.horizon_s)?;
    let out = SequenceDir::new(&args.out);
    out.create(&["labels"])?;
    for (i, (mask, stats)) in labeled.iter().enumerate() {
        write_label_png(out.frame("labels", i, "png"), mask)?;
        write_json(out.frame("labels", i, "json"), stats)?;
    }
    log::info!("labeled {} frames into {}", labeled.len(), out.root.display());
    Ok(labeled)
}

fn read_bev_dataset(bev: &SequenceDir, labels: &SequenceDir, frames: std::ops::Range<usize>) -> Result<Vec<(BevGrid, LabelMask)>> {
    require_frames(bev, "bev", "json", frames.clone())?;
    require_frames(bev, "bev", "png", frames.clone())?;
    require_frames(bev, "occupancy", "png", frames.clone())?;
    require_frames(labels, "labels", "png", frames.clone())?;
    frames
        .map(|i| {
            let b = bev.read_bev(i)?;
            let l = read_label_png(labels.frame("labels", i, "png"), b.spec.resolution)?;
            if l.spec != b.spec {
                return Err(Error::format(labels.frame("labels", i, "png"), "label mask does not match its BEV grid"));
            }
            Ok((b, l))
        })
        .collect()
}

pub struct TrainResult {
    pub initial: ModelParams,
    pub trained: ModelParams,
    pub queue: PrototypeQueue,
}

pub fn train(args: &TrainArgs) -> Result<TrainResult> {
    let cfg = load_config(args.config.as_ref())?;
    require_dir(&args.data)?;
    let bev_dir = SequenceDir::new(args.bev.as_ref().unwrap_or(&args.data));
    let label_dir = SequenceDir::new(args.labels.as_ref().unwrap_or(&args.data));
    let available = bev_dir.count_frames("bev", "json");
    let frames = args.frames.resolve(available)?;
    let mut tc = cfg.train.clone();
    if let Some(s) = args.seed {
        tc.seed = s;
    }
    if let Some(e) = args.epochs {
        tc.epochs = e;
    }
    if args.literal_loss_variants {
        tc.proto_denominator = ProtoDenominator::NegativesOnly;
    }
    let dataset = read_bev_dataset(&bev_dir, &label_dir, frames)?;

    let initial = ModelParams::init(tc.architecture.clone(), tc.seed)?;
    let outcome = fit(&dataset, &tc, initial.clone())?;
    let online = travmap_core::OnlineConfig {
        seed: tc.seed,
        ..cfg.online.clone()
    };
    let queue = queue_from_dataset(&outcome.params, &dataset, &online)?;

    let out = SequenceDir::new(&args.out);
    out.create(&[])?;
    model::save(&outcome.params, out.file("model.ckpt"))?;
    write_metrics_csv(out.file("metrics.csv"), &outcome.metrics)?;
    write_json(out.file("config.json"), &tc)?;
    queue.save(out.file("queue.bin"))?;
    log::info!("trained {} epochs on {} frames; queue holds {}", tc.epochs, dataset.len(), queue.len());
    Ok(TrainResult {
        initial,
        trained: outcome.params,
        queue,
    })
}

pub fn infer(args: &InferArgs) -> Result<Vec<TraversabilityMap>> {
    let cfg = load_config(args.config.as_ref())?;
    let data = SequenceDir::new(&args.data);
    let poses = read_poses(&data)?;
    let bev_dir = SequenceDir::new(args.bev.as_ref().unwrap_or(&args.data));
    require_frames(&bev_dir, "bev", "json", 0..poses.len())?;
    require_frames(&bev_dir, "bev", "png", 0..poses.len())?;
    require_frames(&bev_dir, "occupancy", "png", 0..poses.len())?;
    SequenceDir::require(&args.checkpoint)?;
    let start_queue = args.frozen_queue.as_ref().or(args.init_queue.as_ref());
    if let Some(q) = start_queue {
        SequenceDir::require(q)?;
    }
    let params = model::load(&args.checkpoint)?;
    let footprint = footprint_for(&data, &cfg)?;
    let mut online = cfg.online.clone();
    if let Some(s) = args.seed {
        online.seed = s;
    }
    online.frozen = args.frozen_queue.is_some();
    let mut engine = Engine::new(params, footprint, online)?;
    if let Some(q) = start_queue {
        engine = engine.with_queue(PrototypeQueue::load(q)?)?;
    }

    let out = SequenceDir::new(&args.out);
    out.create(&["costmaps"])?;
    let mut maps = Vec::with_capacity(poses.len());
    for t in 0..poses.len() {
        let bev = bev_dir.read_bev(t)?;
        let snap = engine.step(&bev, &poses[t], &poses[..=t])?;
        out.write_costmap(
            t,
            &snap.map,
            &CostMapMeta {
                timestamp: snap.timestamp,
                queue_size: snap.queue_size,
                queue_version: snap.queue_version,
                cold_start: snap.map.cold_start,
            },
        )?;
        maps.push(snap.map.clone());
    }
    engine.queue.save(out.file("queue.bin"))?;
    log::info!("wrote {} cost maps; final queue holds {}", maps.len(), engine.queue.len());
    Ok(maps)
}

fn label_map(mask: &LabelMask) -> TraversabilityMap {
    TraversabilityMap {
        height: mask.spec.height_cells,
        width: mask.spec.width_cells,
        values: mask.labels.iter().map(|l| (*l == Label::Traversable) as u8 as f32).collect(),
        cold_start: false,
    }
}

fn grid_resolution(dir: &SequenceDir) -> Result<f64> {
    let p = dir.grid();
    if p.exists() {
        Ok(read_json::<GridSpec>(&p)?.resolution)
    } else {
        Ok(GridSpec::default().resolution)
    }
}

pub fn eval(args: &EvalArgs) -> Result<EvalReport> {
    let pred = SequenceDir::new(&args.pred);
    let gt = SequenceDir::new(&args.gt);
    let (gt_sub, gt_ext) = match args.gt_kind {
        GtKind::Gt => ("gt", "png"),
        GtKind::Labels => ("labels", "png"),
    };
    let (pred_sub, pred_ext) = match args.pred_kind {
        PredKind::Costmaps => ("costmaps", "json"),
        PredKind::Labels => ("labels", "png"),
        PredKind::Gt => ("gt", "png"),
    };
    require_dir(&args.pred)?;
    require_dir(&args.gt)?;
    let available = gt.count_frames(gt_sub, gt_ext).min(pred.count_frames(pred_sub, pred_ext));
    let frames = args.frames.resolve(available)?;
    require_frames(&gt, gt_sub, gt_ext, frames.clone())?;
    require_frames(&pred, pred_sub, pred_ext, frames.clone())?;
    if args.pred_kind == PredKind::Costmaps {
        require_frames(&pred, "costmaps", "png", frames.clone())?;
    }
    let occ = args.occupancy.as_ref().map(SequenceDir::new);
    if let Some(o) = &occ {
        require_frames(o, "occupancy", "png", frames.clone())?;
    }
    let gt_res = grid_resolution(&gt)?;
    let pred_res = grid_resolution(&pred)?;

    let mut maps = Vec::with_capacity(frames.len());
    let mut gts = Vec::with_capacity(frames.len());
    for i in frames {
        let mut g = read_label_png(gt.frame(gt_sub, i, gt_ext), gt_res)?;
        if let Some(o) = &occ {
            let occupancy = read_mask_png(o.frame("occupancy", i, "png"), &g.spec)?;
            g = restrict_to_observed(&g, &occupancy)?;
        }
        let m = match args.pred_kind {
            PredKind::Costmaps => pred.read_costmap(i)?,
            _ => label_map(&read_label_png(pred.frame(pred_sub, i, pred_ext), pred_res)?),
        };
        maps.push(m);
        gts.push(g);
    }
    let report = evaluate(&maps, &gts)?;

    let mut scores = Vec::new();
    let mut labels = Vec::new();
    for (m, g) in maps.iter().zip(&gts) {
        let (s, l) = travmap_core::evaluation::participating(m, g)?;
        scores.extend(s);
        labels.extend(l);
    }
    let out = SequenceDir::new(&args.out);
    out.create(&[])?;
    write_json(out.file("report.json"), &report)?;
    write_curves_csv(out.file("curves.csv"), &curves(&scores, &labels)?)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Percentiles {
    pub p50: f64,
    pub p90: f64,
    pub p99: f64,
    pub max: f64,
}

impl Percentiles {
    /// Nearest-rank percentiles of `samples`, which must be non-empty.
    pub fn of(samples: &[f64]) -> Self {
        let mut s = samples.to_vec();
        s.sort_by(f64::total_cmp);
        let at = |q: f64| s[((q * s.len() as f64).ceil() as usize).clamp(1, s.len()) - 1];
        Self {
            p50: at(0.5),
            p90: at(0.9),
            p99: at(0.99),
            max: s[s.len() - 1],
        }
    }
}

/// Latencies in milliseconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub embedding_dim: usize,
    pub queue_size: usize,
    pub forward: Percentiles,
    pub update: Percentiles,
    pub map: Percentiles,
    /// Prototype update plus map computation.
    pub non_network: Percentiles,
    pub total: Percentiles,
}

impl BenchReport {
    pub fn table(&self) -> String {
        let mut s = format!(
            "{} frames of {}x{}, D={}, queue {}\n{:<12} {:>9} {:>9} {:>9} {:>9}\n",
            self.frames, self.height, self.width, self.embedding_dim, self.queue_size, "stage (ms)", "p50", "p90", "p99", "max"
        );
        for (name, p) in [
            ("forward", &self.forward),
            ("update", &self.update),
            ("map", &self.map),
            ("non-network", &self.non_network),
            ("total", &self.total),
        ] {
            s.push_str(&format!("{name:<12} {:>9.3} {:>9.3} {:>9.3} {:>9.3}\n", p.p50, p.p90, p.p99, p.max));
        }
        s
    }
}

/// Fills `queue` with random unit prototypes until it holds `n` of them.
pub fn fill_queue(queue: &mut PrototypeQueue, n: usize, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = queue.dim();
    for _ in 0..n * 100 {
        if queue.len() >= n {
            break;
        }
        let v: Vec<f32> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f32>().sqrt();
        queue.update(&v.iter().map(|x| x / norm).collect::<Vec<_>>());
    }
}

pub fn bench(args: &BenchArgs) -> Result<BenchReport> {
    let cfg = load_config(args.config.as_ref())?;
    let data = SequenceDir::new(&args.data);
    let poses = read_poses(&data)?;
    let bev_dir = SequenceDir::new(args.bev.as_ref().unwrap_or(&args.data));
    let n = args.frames.unwrap_or(poses.len());
    if n == 0 || n > poses.len() {
        return Err(Error::Config(format!("cannot time {n} of {} frames", poses.len())));
    }
    require_frames(&bev_dir, "bev", "json", 0..n)?;
    require_frames(&bev_dir, "bev", "png", 0..n)?;
    require_frames(&bev_dir, "occupancy", "png", 0..n)?;
    SequenceDir::require(&args.checkpoint)?;
    let params = model::load(&args.checkpoint)?;
    let footprint = footprint_for(&data, &cfg)?;
    let online = cfg.online.clone();
    let mut queue = PrototypeQueue::new(params.embedding_dim(), online.alpha, online.momentum, online.capacity)?;
    fill_queue(&mut queue, args.queue_fill, online.seed);
    let mut engine = Engine::new(params.clone(), footprint, online)?.with_queue(queue)?;
    let bevs = (0..n).map(|i| bev_dir.read_bev(i)).collect::<Result<Vec<_>>>()?;

    let ms = |t: Instant| t.elapsed().as_secs_f64() * 1e3;
    let (mut fwd, mut upd, mut map, mut nn, mut total) = (vec![], vec![], vec![], vec![], vec![]);
    for (t, bev) in bevs.iter().enumerate() {
        let t0 = Instant::now();
        let fmap = params.forward(bev)?;
        let f = ms(t0);
        let t1 = Instant::now();
        engine.observe(&fmap, bev, &poses[t], &poses[..=t]);
        let u = ms(t1);
        let t2 = Instant::now();
        std::hint::black_box(traversability_map(&fmap, &engine.queue, &bev.occupancy)?);
        let m = ms(t2);
        fwd.push(f);
        upd.push(u);
        map.push(m);
        nn.push(u + m);
        total.push(f + u + m);
    }
    let report = BenchReport {
        frames: n,
        height: bevs[0].spec.height_cells,
        width: bevs[0].spec.width_cells,
        embedding_dim: params.embedding_dim(),
        queue_size: engine.queue.len(),
        forward: Percentiles::of(&fwd),
        update: Percentiles::of(&upd),
        map: Percentiles::of(&map),
        non_network: Percentiles::of(&nn),
        total: Percentiles::of(&total),
    };
    if let Some(o) = &args.out {
        let out = SequenceDir::new(o);
        out.create(&[])?;
        write_json(out.file("bench.json"), &report)?;
    }
    Ok(report)
}
