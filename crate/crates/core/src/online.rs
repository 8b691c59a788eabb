//! Online adaptation: a queue of traversable prototypes refreshed from the
//! cells the vehicle has driven over, and the per-cell traversability map
//! derived from it.

use std::io::{Read, Write};
use std::path::Path;
use std::sync::{Arc, RwLock};

use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, ArrayView2};
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autolabel::{footprint_cells_ordered, DEFAULT_HORIZON_S};
use crate::bev::{BevGrid, GridSpec};
use crate::error::{Error, Result};
use crate::geometry::{Pose, WheelFootprint};
use crate::model::{FeatureMap, ModelParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpdateOutcome {
    Inserted,
    /// Blended into the prototype at this index.
    Merged(usize),
    Rejected,
}

/// Ordered set of unit-norm traversable prototypes.
#[derive(Debug, Clone, PartialEq)]
pub struct PrototypeQueue {
    dim: usize,
    pub alpha: f64,
    pub momentum: f64,
    pub capacity: Option<usize>,
    /// Row-major `len() x dim`.
    data: Vec<f32>,
    pub rejected: u64,
    pub version: u64,
}

impl PrototypeQueue {
    pub fn new(dim: usize, alpha: f64, momentum: f64, capacity: Option<usize>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Config("prototype dimension must be positive".into()));
        }
        if !(0.0..=1.0).contains(&momentum) || !(-1.0..=1.0).contains(&alpha) {
            return Err(Error::Config(format!("momentum {momentum} or alpha {alpha} out of range")));
        }
        if capacity == Some(0) {
            return Err(Error::Config("queue capacity must be positive".into()));
        }
        Ok(Self {
            dim,
            alpha,
            momentum,
            capacity,
            data: Vec::new(),
            rejected: 0,
            version: 0,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn get(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f32]> {
        self.data.chunks_exact(self.dim)
    }

    /// Best match by cosine; ties keep the lowest index.
    pub fn nearest(&self, z: &[f32]) -> Option<(usize, f64)> {
        let mut best: Option<(usize, f64)> = None;
        for (i, v) in self.iter().enumerate() {
            let s: f64 = v.iter().zip(z).map(|(a, b)| *a as f64 * *b as f64).sum();
            if best.is_none_or(|(_, b)| s > b) {
                best = Some((i, s));
            }
        }
        best
    }

    /// Folds one traversed-cell embedding into the queue: append when it is
    /// unlike every prototype, otherwise pull the closest one toward it.
    pub fn update(&mut self, z: &[f32]) -> UpdateOutcome {
        let norm = z.iter().map(|x| *x as f64 * *x as f64).sum::<f64>().sqrt();
        if z.len() != self.dim || !norm.is_finite() || norm == 0.0 {
            self.rejected += 1;
            return UpdateOutcome::Rejected;
        }
        let z: Vec<f32> = z.iter().map(|x| (*x as f64 / norm) as f32).collect();
        let outcome = match self.nearest(&z) {
            Some((i, s)) if s >= self.alpha => {
                let m = self.momentum;
                let v = &mut self.data[i * self.dim..(i + 1) * self.dim];
                let blended: Vec<f64> = v.iter().zip(&z).map(|(a, b)| m * *a as f64 + (1.0 - m) * *b as f64).collect();
                let n = blended.iter().map(|x| x * x).sum::<f64>().sqrt();
                if n > 0.0 {
                    for (dst, b) in v.iter_mut().zip(&blended) {
                        *dst = (b / n) as f32;
                    }
                }
                UpdateOutcome::Merged(i)
            }
            _ => {
                if self.capacity.is_some_and(|c| self.len() >= c) {
                    self.data.drain(..self.dim);
                }
                self.data.extend_from_slice(&z);
                UpdateOutcome::Inserted
            }
        };
        self.version += 1;
        outcome
    }

    pub fn write_to(&self, mut w: impl Write) -> std::io::Result<()> {
        let header = serde_json::to_vec(&QueueHeader {
            dim: self.dim,
            alpha: self.alpha,
            momentum: self.momentum,
            count: self.len(),
            capacity: self.capacity,
            version: self.version,
        })?;
        w.write_all(&(header.len() as u32).to_le_bytes())?;
        w.write_all(&header)?;
        for v in &self.data {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let bad = |m: String| Error::Config(format!("prototype queue: {m}"));
        let mut len = [0u8; 4];
        r.read_exact(&mut len).map_err(|e| bad(e.to_string()))?;
        let mut header = vec![0u8; u32::from_le_bytes(len) as usize];
        r.read_exact(&mut header).map_err(|e| bad(e.to_string()))?;
        let h: QueueHeader = serde_json::from_slice(&header).map_err(|e| bad(e.to_string()))?;
        let mut q = Self::new(h.dim, h.alpha, h.momentum, h.capacity)?;
        let mut block = vec![0u8; h.dim * h.count * 4];
        r.read_exact(&mut block).map_err(|e| bad(e.to_string()))?;
        q.data = block.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        q.version = h.version;
        Ok(q)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut buf = Vec::new();
        self.write_to(&mut buf).map_err(|e| Error::io(path, e))?;
        std::fs::write(path, buf).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(&bytes[..])
    }
}

#[derive(Serialize, Deserialize)]
struct QueueHeader {
    #[serde(rename = "D")]
    dim: usize,
    alpha: f64,
    #[serde(rename = "m")]
    momentum: f64,
    count: usize,
    #[serde(default)]
    capacity: Option<usize>,
    #[serde(default)]
    version: u64,
}

/// Per-cell traversability in [0, 1], row-major like the BEV grid.
#[derive(Debug, Clone, PartialEq)]
pub struct TraversabilityMap {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f32>,
    /// Set when the queue was empty and every value is zero.
    pub cold_start: bool,
}

const MAP_ROW_BLOCK: usize = 2048;

/// Best cosine to any prototype, clamped to [0, 1]; unobserved cells are 0.
pub fn traversability_map(fmap: &FeatureMap, queue: &PrototypeQueue, occupancy: &[bool]) -> Result<TraversabilityMap> {
    let cells = fmap.height * fmap.width;
    if occupancy.len() != cells {
        return Err(Error::Config("occupancy is not aligned with the feature map".into()));
    }
    let mut values = vec![0.0f32; cells];
    if queue.is_empty() {
        return Ok(TraversabilityMap {
            height: fmap.height,
            width: fmap.width,
            values,
            cold_start: true,
        });
    }
    if fmap.dim != queue.dim() {
        return Err(Error::Config(format!(
            "feature dimension {} does not match queue dimension {}",
            fmap.dim,
            queue.dim()
        )));
    }
    let d = fmap.dim;
    let k = queue.len();
    let protos = ArrayView2::from_shape((k, d), &queue.data).unwrap();
    let mut sims = Array2::<f32>::zeros((MAP_ROW_BLOCK, k));
    for start in (0..cells).step_by(MAP_ROW_BLOCK) {
        let rows = MAP_ROW_BLOCK.min(cells - start);
        let feats = ArrayView2::from_shape((rows, d), &fmap.data[start * d..(start + rows) * d]).unwrap();
        let mut out = sims.slice_mut(ndarray::s![..rows, ..]);
        general_mat_mul(1.0, &feats, &protos.t(), 0.0, &mut out);
        for (r, row) in out.rows().into_iter().enumerate() {
            let i = start + r;
            if occupancy[i] {
                let best = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
                values[i] = best.clamp(0.0, 1.0);
            }
        }
    }
    Ok(TraversabilityMap {
        height: fmap.height,
        width: fmap.width,
        values,
        cold_start: false,
    })
}

/// Embeddings under the recent wheel footprint, in temporal order, at most
/// `n` of them. Poses later than `pose_t` and unobserved cells are ignored.
#[allow(clippy::too_many_arguments)]
pub fn extract_traversed_features(
    fmap: &FeatureMap,
    trajectory: &[Pose],
    fp: &WheelFootprint,
    pose_t: &Pose,
    spec: &GridSpec,
    occupancy: Option<&[bool]>,
    n: usize,
    horizon: f64,
    rng: &mut ChaCha8Rng,
) -> Vec<Vec<f32>> {
    let past: Vec<Pose> = trajectory.iter().filter(|p| p.timestamp <= pose_t.timestamp).cloned().collect();
    let cells: Vec<usize> = footprint_cells_ordered(&past, fp, pose_t, spec, horizon)
        .into_iter()
        .map(|(r, c)| spec.index(r, c))
        .filter(|&i| i < fmap.height * fmap.width && occupancy.is_none_or(|o| o[i]))
        .collect();
    let picked: Vec<usize> = if cells.len() <= n {
        cells
    } else {
        let mut idx = index::sample(rng, cells.len(), n).into_vec();
        idx.sort_unstable();
        idx.into_iter().map(|j| cells[j]).collect()
    };
    picked.into_iter().map(|i| fmap.pixel(i).to_vec()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OnlineConfig {
    pub alpha: f64,
    pub momentum: f64,
    pub capacity: Option<usize>,
    pub samples_per_frame: usize,
    pub horizon_s: f64,
    /// Traversed cells feed the queue only when this fraction of their
    /// neighborhood of the given radius is observed.
    pub observed_radius: usize,
    pub observed_fraction: f64,
    /// Never modify the queue after it has been seeded.
    pub frozen: bool,
    pub seed: u64,
}

impl Default for OnlineConfig {
    fn default() -> Self {
        Self {
            alpha: 0.9,
            momentum: 0.99,
            capacity: Some(64),
            samples_per_frame: 64,
            horizon_s: DEFAULT_HORIZON_S,
            observed_radius: 3,
            observed_fraction: 0.8,
            frozen: false,
            seed: 0,
        }
    }
}

/// Immutable result of one engine step.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub timestamp: f64,
    pub map: TraversabilityMap,
    pub queue_size: usize,
    pub queue_version: u64,
}

/// Shared read side of the engine; cloning is cheap and reads never wait on
/// inference.
#[derive(Debug, Clone, Default)]
pub struct SnapshotHandle(Arc<RwLock<Option<Arc<Snapshot>>>>);

impl SnapshotHandle {
    pub fn latest(&self) -> Option<Arc<Snapshot>> {
        self.0.read().unwrap_or_else(|e| e.into_inner()).clone()
    }

    fn publish(&self, s: Arc<Snapshot>) {
        *self.0.write().unwrap_or_else(|e| e.into_inner()) = Some(s);
    }
}

pub struct Engine {
    params: ModelParams,
    footprint: WheelFootprint,
    pub config: OnlineConfig,
    pub queue: PrototypeQueue,
    rng: ChaCha8Rng,
    handle: SnapshotHandle,
}

impl Engine {
    pub fn new(params: ModelParams, footprint: WheelFootprint, config: OnlineConfig) -> Result<Self> {
        footprint.validate()?;
        let queue = PrototypeQueue::new(params.embedding_dim(), config.alpha, config.momentum, config.capacity)?;
        Ok(Self {
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            params,
            footprint,
            config,
            queue,
            handle: SnapshotHandle::default(),
        })
    }

    /// Starts from an existing queue instead of an empty one.
    pub fn with_queue(mut self, queue: PrototypeQueue) -> Result<Self> {
        if queue.dim() != self.params.embedding_dim() {
            return Err(Error::Config("queue dimension does not match the model".into()));
        }
        self.queue = queue;
        Ok(self)
    }

    pub fn handle(&self) -> SnapshotHandle {
        self.handle.clone()
    }

    /// Adds traversed-cell features without producing a map.
    pub fn observe(&mut self, fmap: &FeatureMap, bev: &BevGrid, pose_t: &Pose, trajectory: &[Pose]) -> usize {
        let interior = bev.observed_interior(self.config.observed_radius, self.config.observed_fraction);
        let samples = extract_traversed_features(
            fmap,
            trajectory,
            &self.footprint,
            pose_t,
            &bev.spec,
            Some(&interior),
            self.config.samples_per_frame,
            self.config.horizon_s,
            &mut self.rng,
        );
        for z in &samples {
            self.queue.update(z);
        }
        samples.len()
    }

    pub fn step(&mut self, bev: &BevGrid, pose_t: &Pose, trajectory: &[Pose]) -> Result<Arc<Snapshot>> {
        let fmap = self.params.forward(bev)?;
        // a frozen queue still takes its first prototypes so it is usable
        if !self.config.frozen || self.queue.is_empty() {
            self.observe(&fmap, bev, pose_t, trajectory);
        }
        let map = traversability_map(&fmap, &self.queue, &bev.occupancy)?;
        let snap = Arc::new(Snapshot {
            timestamp: bev.timestamp,
            map,
            queue_size: self.queue.len(),
            queue_version: self.queue.version,
        });
        self.handle.publish(snap.clone());
        Ok(snap)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn e(i: usize, d: usize) -> Vec<f32> {
        let mut v = vec![0.0; d];
        v[i] = 1.0;
        v
    }

    fn unit(rng: &mut ChaCha8Rng, d: usize) -> Vec<f32> {
        let v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter().map(|x| (x / n) as f32).collect()
    }

    fn queue() -> PrototypeQueue {
        PrototypeQueue::new(3, 0.9, 0.99, None).unwrap()
    }

    #[test]
    fn update_examples() {
        let mut q = queue();
        assert_eq!(q.update(&e(0, 3)), UpdateOutcome::Inserted);
        assert_eq!(q.get(0), &e(0, 3)[..]);
        assert_eq!(q.update(&e(1, 3)), UpdateOutcome::Inserted);
        assert_eq!(q.len(), 2);

        let mut q = queue();
        q.update(&e(0, 3));
        let raw = [0.95f64, 0.2, 0.0];
        let n = (raw[0] * raw[0] + raw[1] * raw[1]).sqrt();
        let z: Vec<f64> = raw.iter().map(|x| x / n).collect();
        assert!(z[0] >= 0.9);
        let zf: Vec<f32> = z.iter().map(|x| *x as f32).collect();
        assert_eq!(q.update(&zf), UpdateOutcome::Merged(0));
        let b = [0.99 + 0.01 * z[0], 0.01 * z[1], 0.0];
        let bn = (b[0] * b[0] + b[1] * b[1]).sqrt();
        assert_eq!(q.len(), 1);
        for k in 0..3 {
            assert!((q.get(0)[k] as f64 - b[k] / bn).abs() < 1e-6);
        }
    }

    #[test]
    fn non_finite_rejected() {
        let mut q = queue();
        assert_eq!(q.update(&[f32::NAN, 0.0, 1.0]), UpdateOutcome::Rejected);
        assert_eq!(q.update(&[0.0, 0.0, 0.0]), UpdateOutcome::Rejected);
        assert_eq!((q.len(), q.rejected), (0, 2));
    }

    #[test]
    fn capacity_evicts_oldest() {
        let mut q = PrototypeQueue::new(4, 0.9, 0.99, Some(2)).unwrap();
        for i in 0..3 {
            q.update(&e(i, 4));
        }
        assert_eq!(q.len(), 2);
        assert_eq!(q.get(0), &e(1, 4)[..]);
        assert_eq!(q.get(1), &e(2, 4)[..]);
    }

    #[test]
    fn map_examples() {
        let mut fmap = FeatureMap::zeros(1, 4, 3);
        fmap.pixel_mut(0).copy_from_slice(&e(0, 3));
        fmap.pixel_mut(1).copy_from_slice(&e(1, 3));
        fmap.pixel_mut(2).copy_from_slice(&[-1.0, 0.0, 0.0]);
        fmap.pixel_mut(3).copy_from_slice(&e(0, 3));
        let mut q = queue();
        q.update(&e(0, 3));
        let m = traversability_map(&fmap, &q, &[true, true, true, false]).unwrap();
        assert_eq!(m.values, vec![1.0, 0.0, 0.0, 0.0]);
        assert!(!m.cold_start);
        let cold = traversability_map(&fmap, &queue(), &[true; 4]).unwrap();
        assert!(cold.cold_start && cold.values.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn map_matches_scalar_oracle_on_large_grid() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (h, w, d) = (70, 61, 16);
        let mut fmap = FeatureMap::zeros(h, w, d);
        for i in 0..h * w {
            let v = unit(&mut rng, d);
            fmap.pixel_mut(i).copy_from_slice(&v);
        }
        let mut q = PrototypeQueue::new(d, 0.2, 0.99, Some(64)).unwrap();
        for _ in 0..200 {
            q.update(&unit(&mut rng, d));
        }
        let occ: Vec<bool> = (0..h * w).map(|_| rng.random::<f64>() < 0.8).collect();
        let m = traversability_map(&fmap, &q, &occ).unwrap();
        for i in 0..h * w {
            let want = if occ[i] {
                q.iter()
                    .map(|v| v.iter().zip(fmap.pixel(i)).map(|(a, b)| *a as f64 * *b as f64).sum::<f64>())
                    .fold(f64::NEG_INFINITY, f64::max)
                    .clamp(0.0, 1.0)
            } else {
                0.0
            };
            assert!((m.values[i] as f64 - want).abs() < 1e-5);
        }
    }

    #[test]
    fn serialization_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut q = PrototypeQueue::new(8, 0.5, 0.9, Some(10)).unwrap();
        for _ in 0..20 {
            q.update(&unit(&mut rng, 8));
        }
        let mut buf = Vec::new();
        q.write_to(&mut buf).unwrap();
        assert_eq!(PrototypeQueue::read_from(&buf[..]).unwrap(), PrototypeQueue { rejected: 0, ..q.clone() });
        assert!(PrototypeQueue::read_from(&buf[..buf.len() - 3]).is_err());
    }

    fn straight_drive() -> (Vec<Pose>, Pose) {
        let traj: Vec<Pose> = (0..=20).map(|i| Pose::from_yaw(0.0, crate::geometry::Vec3::new(i as f64 * 0.5, 0.0, 0.0), i as f64 * 0.5)).collect();
        let now = *traj.last().unwrap();
        (traj, now)
    }

    #[test]
    fn extraction_examples() {
        let spec = GridSpec::new(64, 64, 0.2).unwrap();
        let mut fmap = FeatureMap::zeros(64, 64, 2);
        for i in 0..64 * 64 {
            fmap.pixel_mut(i).copy_from_slice(&[i as f32, 1.0]);
        }
        let fp = WheelFootprint::rectangle(2.0, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let origin = Pose::identity(0.0);
        let none = extract_traversed_features(&fmap, &[], &fp, &origin, &spec, None, 64, 10.0, &mut rng);
        assert!(none.is_empty());

        let (traj, now) = straight_drive();
        let band: std::collections::BTreeSet<usize> = crate::autolabel::footprint_cells(&traj, &fp, &now, &spec, 10.0)
            .into_iter()
            .map(|(r, c)| spec.index(r, c))
            .collect();
        let got = extract_traversed_features(&fmap, &traj, &fp, &now, &spec, None, 64, 10.0, &mut rng);
        assert_eq!(got.len(), 64);
        assert!(got.iter().all(|v| band.contains(&(v[0] as usize))));
        let a = extract_traversed_features(&fmap, &traj, &fp, &now, &spec, None, 16, 10.0, &mut ChaCha8Rng::seed_from_u64(5));
        let b = extract_traversed_features(&fmap, &traj, &fp, &now, &spec, None, 16, 10.0, &mut ChaCha8Rng::seed_from_u64(5));
        assert_eq!(a, b);
    }

    #[test]
    fn extraction_skips_future_poses_and_unobserved_cells() {
        let spec = GridSpec::new(64, 64, 0.2).unwrap();
        let fmap = FeatureMap::zeros(64, 64, 2);
        let fp = WheelFootprint::rectangle(2.0, 1.0);
        let (traj, _) = straight_drive();
        let start = traj[0];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let only_now = extract_traversed_features(&fmap, &traj, &fp, &start, &spec, None, 1000, 10.0, &mut rng);
        assert_eq!(only_now.len(), 50);
        let occ = vec![false; 64 * 64];
        let (traj, now) = straight_drive();
        assert!(extract_traversed_features(&fmap, &traj, &fp, &now, &spec, Some(&occ), 64, 10.0, &mut rng).is_empty());
    }

    proptest! {
        #[test]
        fn invariants_hold_under_random_updates(seed in 0u64..200, alpha in 0.0f64..0.99) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut q = PrototypeQueue::new(6, alpha, 0.99, None).unwrap();
            for _ in 0..60 {
                let z = unit(&mut rng, 6);
                let before: Vec<Vec<f32>> = q.iter().map(|v| v.to_vec()).collect();
                if let UpdateOutcome::Inserted = q.update(&z) {
                    for v in &before {
                        let s: f64 = v.iter().zip(&z).map(|(a, b)| *a as f64 * *b as f64).sum();
                        prop_assert!(s < alpha);
                    }
                }
                for v in q.iter() {
                    let n: f64 = v.iter().map(|x| *x as f64 * *x as f64).sum::<f64>().sqrt();
                    prop_assert!((n - 1.0).abs() < 1e-5);
                }
            }
        }

        #[test]
        fn close_samples_never_grow_queue(seed in 0u64..200) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut q = PrototypeQueue::new(5, 0.9, 0.99, None).unwrap();
            let base = unit(&mut rng, 5);
            q.update(&base);
            for _ in 0..50 {
                let noise = unit(&mut rng, 5);
                let z: Vec<f32> = base.iter().zip(&noise).map(|(a, b)| a + 0.05 * b).collect();
                q.update(&z);
            }
            prop_assert_eq!(q.len(), 1);
        }

        #[test]
        fn map_order_invariant_and_monotone(seed in 0u64..100) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let d = 4;
            let mut fmap = FeatureMap::zeros(5, 5, d);
            for i in 0..25 {
                let v = unit(&mut rng, d);
                fmap.pixel_mut(i).copy_from_slice(&v);
            }
            let protos: Vec<Vec<f32>> = (0..4).map(|_| unit(&mut rng, d)).collect();
            let mut a = PrototypeQueue::new(d, 1.0, 0.99, None).unwrap();
            let mut b = a.clone();
            for p in &protos {
                a.update(p);
            }
            for p in protos.iter().rev() {
                b.update(p);
            }
            let occ = vec![true; 25];
            let ma = traversability_map(&fmap, &a, &occ).unwrap();
            let mb = traversability_map(&fmap, &b, &occ).unwrap();
            for (x, y) in ma.values.iter().zip(&mb.values) {
                prop_assert!((x - y).abs() < 1e-6);
            }
            let extra = unit(&mut rng, d);
            a.update(&extra);
            let mc = traversability_map(&fmap, &a, &occ).unwrap();
            for (x, y) in ma.values.iter().zip(&mc.values) {
                prop_assert!(y + 1e-6 >= *x);
            }
        }
    }
}
