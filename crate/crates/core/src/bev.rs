//! Sliding-window accumulation of colored clouds and rasterization into a
//! vehicle-centered RGB bird's-eye-view grid.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{colorize_cloud, fuse_clouds, to_odom, CameraModel, FrameTag, PointCloud, Pose, RgbImage, Vec3};

/// Grid geometry. The vehicle sits at the center cell; +x (forward) runs
/// toward row 0 and +y (left) toward column 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub width_cells: usize,
    pub height_cells: usize,
    pub resolution: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            width_cells: 300,
            height_cells: 300,
            resolution: 0.2,
        }
    }
}

impl GridSpec {
    pub fn new(width_cells: usize, height_cells: usize, resolution: f64) -> Result<Self> {
        let spec = Self {
            width_cells,
            height_cells,
            resolution,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.width_cells == 0 || self.height_cells == 0 || !(self.resolution > 0.0) {
            return Err(Error::Config(format!("invalid grid spec {self:?}")));
        }
        Ok(())
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.width_cells * self.height_cells
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, row: usize, col: usize) -> usize {
        row * self.width_cells + col
    }

    /// Vehicle-frame (x, y) of a cell center.
    #[inline]
    pub fn cell_center(&self, row: usize, col: usize) -> (f64, f64) {
        let x = (self.height_cells as f64 / 2.0).floor() - row as f64;
        let y = (self.width_cells as f64 / 2.0).floor() - col as f64;
        (x * self.resolution, y * self.resolution)
    }

    /// Row/column for a planar position, possibly outside the grid.
    #[inline]
    pub fn cell_of(&self, x: f64, y: f64) -> (i64, i64) {
        let row = (self.height_cells / 2) as i64 - (x / self.resolution).round() as i64;
        let col = (self.width_cells / 2) as i64 - (y / self.resolution).round() as i64;
        (row, col)
    }

    #[inline]
    pub fn contains(&self, row: i64, col: i64) -> bool {
        row >= 0 && col >= 0 && (row as usize) < self.height_cells && (col as usize) < self.width_cells
    }
}

/// Cell containing a vehicle-frame point, or `None` outside the grid.
pub fn world_to_cell(p: &Vec3, spec: &GridSpec) -> Option<(usize, usize)> {
    let (row, col) = spec.cell_of(p.x, p.y);
    spec.contains(row, col).then_some((row as usize, col as usize))
}

#[derive(Debug, Clone, PartialEq)]
pub struct BevGrid {
    pub spec: GridSpec,
    /// Row-major per-cell RGB.
    pub rgb: Vec<[u8; 3]>,
    pub occupancy: Vec<bool>,
    pub timestamp: f64,
}

impl BevGrid {
    pub fn empty(spec: GridSpec, timestamp: f64) -> Self {
        Self {
            spec,
            rgb: vec![[0; 3]; spec.len()],
            occupancy: vec![false; spec.len()],
            timestamp,
        }
    }

    pub fn occupied_count(&self) -> usize {
        self.occupancy.iter().filter(|&&o| o).count()
    }

    /// Occupied cells whose `(2r+1)^2` neighborhood is at least
    /// `min_fraction` occupied; window cells off the grid count as empty.
    pub fn observed_interior(&self, radius: usize, min_fraction: f64) -> Vec<bool> {
        let (h, w) = (self.spec.height_cells, self.spec.width_cells);
        let mut sat = vec![0u32; (h + 1) * (w + 1)];
        for r in 0..h {
            for c in 0..w {
                sat[(r + 1) * (w + 1) + c + 1] = self.occupancy[r * w + c] as u32 + sat[r * (w + 1) + c + 1]
                    + sat[(r + 1) * (w + 1) + c]
                    - sat[r * (w + 1) + c];
            }
        }
        let window = ((2 * radius + 1) * (2 * radius + 1)) as f64;
        let need = (min_fraction * window).ceil() as u32;
        let mut out = vec![false; h * w];
        for r in 0..h {
            let (r0, r1) = (r.saturating_sub(radius), (r + radius + 1).min(h));
            for c in 0..w {
                if !self.occupancy[r * w + c] {
                    continue;
                }
                let (c0, c1) = (c.saturating_sub(radius), (c + radius + 1).min(w));
                let n = sat[r1 * (w + 1) + c1] + sat[r0 * (w + 1) + c0] - sat[r0 * (w + 1) + c1] - sat[r1 * (w + 1) + c0];
                out[r * w + c] = n >= need;
            }
        }
        out
    }
}

/// Top-down raster: each cell shows the color of its highest point; among
/// equal heights the later point in the cloud wins.
pub fn rasterize(cloud: &PointCloud, spec: &GridSpec) -> BevGrid {
    let mut grid = BevGrid::empty(*spec, 0.0);
    let Some(colors) = &cloud.colors else {
        // Uncolored clouds still mark occupancy.
        for p in &cloud.points {
            if let Some((r, c)) = world_to_cell(p, spec) {
                grid.occupancy[spec.index(r, c)] = true;
            }
        }
        return grid;
    };
    let mut top = vec![f64::NEG_INFINITY; spec.len()];
    for (p, color) in cloud.points.iter().zip(colors) {
        if let Some((r, c)) = world_to_cell(p, spec) {
            let i = spec.index(r, c);
            if p.z >= top[i] {
                top[i] = p.z;
                grid.rgb[i] = *color;
                grid.occupancy[i] = true;
            }
        }
    }
    grid
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AccumulatorConfig {
    pub grid: GridSpec,
    /// Points older than this many frames are dropped.
    pub window_frames: u32,
    /// Planar distance from the vehicle beyond which points are dropped.
    pub max_range: f64,
    /// Maximum points kept per cell; oldest evicted first.
    pub cell_cap: usize,
}

impl Default for AccumulatorConfig {
    fn default() -> Self {
        Self {
            grid: GridSpec::default(),
            window_frames: 50,
            max_range: 40.0,
            cell_cap: 32,
        }
    }
}

/// Fused cloud in the odometry frame plus the frame index at which each
/// point was captured. Points are kept in capture order.
#[derive(Debug, Clone)]
pub struct AccumulatorState {
    pub config: AccumulatorConfig,
    pub fused: PointCloud,
    captured_at: Vec<u32>,
    frame_index: u32,
    last_timestamp: Option<f64>,
}

impl AccumulatorState {
    pub fn new(config: AccumulatorConfig) -> Self {
        Self {
            config,
            fused: PointCloud {
                points: Vec::new(),
                colors: Some(Vec::new()),
                frame: FrameTag::Odometry,
            },
            captured_at: Vec::new(),
            frame_index: 0,
            last_timestamp: None,
        }
    }

    pub fn len(&self) -> usize {
        self.fused.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fused.is_empty()
    }

    /// Age in frames of each stored point, relative to the last step.
    pub fn ages(&self) -> impl Iterator<Item = u32> + '_ {
        let now = self.frame_index.saturating_sub(1);
        self.captured_at.iter().map(move |&k| now - k)
    }

    /// Processes one synchronized frame and returns its BEV.
    pub fn step(&mut self, pose_t: &Pose, cloud_t: &PointCloud, image: &RgbImage, cam: &CameraModel) -> Result<BevGrid> {
        let colored = colorize_cloud(cloud_t, image, cam)?;
        self.step_colored(pose_t, &colored)
    }

    /// Same as [`step`](Self::step) for a cloud that is already colored.
    pub fn step_colored(&mut self, pose_t: &Pose, colored: &PointCloud) -> Result<BevGrid> {
        if let Some(last) = self.last_timestamp {
            if pose_t.timestamp < last {
                return Err(Error::Sequence(format!(
                    "frame at t={} arrived after t={last}",
                    pose_t.timestamp
                )));
            }
        }
        if !colored.is_colored() {
            return Err(Error::Config("accumulator needs a colored cloud".into()));
        }
        let now = self.frame_index;
        let mut fused = fuse_clouds(&self.fused, pose_t, colored);
        let mut captured = std::mem::take(&mut self.captured_at);
        captured.extend(std::iter::repeat_n(now, colored.len()));

        let keep = self.prune_mask(&fused, &captured, now);
        retain_by_mask(&mut fused, &mut captured, &keep);

        let mut bev = rasterize(&fused, &self.config.grid);
        bev.timestamp = pose_t.timestamp;

        self.fused = to_odom(&fused, pose_t);
        self.captured_at = captured;
        self.frame_index += 1;
        self.last_timestamp = Some(pose_t.timestamp);
        Ok(bev)
    }

    fn prune_mask(&self, cloud: &PointCloud, captured: &[u32], now: u32) -> Vec<bool> {
        prune_mask(&self.config, cloud, captured, now)
    }
}

/// Window, range and per-cell-cap pruning for a vehicle-frame cloud whose
/// points are in capture order.
pub(crate) fn prune_mask(cfg: &AccumulatorConfig, cloud: &PointCloud, captured: &[u32], now: u32) -> Vec<bool> {
    let mut keep = vec![false; cloud.len()];
    let mut per_cell: HashMap<(i64, i64), usize> = HashMap::new();
    let r2 = cfg.max_range * cfg.max_range;
    // newest first so the cap evicts the oldest points of a cell
    for i in (0..cloud.len()).rev() {
        let p = &cloud.points[i];
        if now - captured[i] > cfg.window_frames || p.x * p.x + p.y * p.y > r2 {
            continue;
        }
        let count = per_cell.entry(cfg.grid.cell_of(p.x, p.y)).or_insert(0);
        if *count < cfg.cell_cap {
            *count += 1;
            keep[i] = true;
        }
    }
    keep
}

fn retain_by_mask(cloud: &mut PointCloud, captured: &mut Vec<u32>, keep: &[bool]) {
    let mut it = keep.iter();
    cloud.points.retain(|_| *it.next().unwrap());
    if let Some(colors) = &mut cloud.colors {
        let mut it = keep.iter();
        colors.retain(|_| *it.next().unwrap());
    }
    let mut it = keep.iter();
    captured.retain(|_| *it.next().unwrap());
}
