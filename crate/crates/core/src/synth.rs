//! Procedural driving scenes with exact ground truth.
//!
//! A scene is a flat square world with a winding trail. The trail surface
//! alternates between road and grass, the rest of the world is grass with
//! patches of scrub, and cylindrical obstacles (trees, rocks) are scattered
//! outside a clearance band around the trail. Road and grass are traversable.
//! Geometry and appearance draw from independent random streams, so two
//! scenes that differ only in season share every point position and label.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autolabel::{Label, LabelMask, ObstacleMask};
use crate::bev::GridSpec;
use crate::error::{Error, Result};
use crate::geometry::{project_with_depth, CameraModel, FrameTag, PointCloud, Pose, RgbImage, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[repr(u8)]
pub enum TerrainClass {
    Road = 0,
    Grass = 1,
    Scrub = 2,
    Obstacle = 3,
}

impl TerrainClass {
    pub fn traversable(self) -> bool {
        matches!(self, TerrainClass::Road | TerrainClass::Grass)
    }

    fn from_u8(v: u8) -> Self {
        match v {
            0 => TerrainClass::Road,
            1 => TerrainClass::Grass,
            2 => TerrainClass::Scrub,
            _ => TerrainClass::Obstacle,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Season {
    #[default]
    Spring,
    Winter,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassColor {
    pub mean: [f64; 3],
    pub sigma: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Palette {
    pub road: ClassColor,
    pub grass: ClassColor,
    pub scrub: ClassColor,
    pub canopy: ClassColor,
    pub trunk: ClassColor,
}

impl Palette {
    pub fn for_season(season: Season) -> Self {
        let c = |mean: [f64; 3], sigma: f64| ClassColor { mean, sigma };
        match season {
            Season::Spring => Palette {
                road: c([128.0, 118.0, 104.0], 10.0),
                grass: c([92.0, 150.0, 62.0], 14.0),
                scrub: c([58.0, 92.0, 40.0], 18.0),
                canopy: c([40.0, 105.0, 48.0], 16.0),
                trunk: c([96.0, 74.0, 56.0], 12.0),
            },
            Season::Winter => Palette {
                road: c([92.0, 92.0, 100.0], 10.0),
                grass: c([220.0, 224.0, 232.0], 10.0),
                scrub: c([118.0, 102.0, 88.0], 18.0),
                canopy: c([52.0, 64.0, 58.0], 14.0),
                trunk: c([70.0, 58.0, 50.0], 12.0),
            },
        }
    }

    fn of(&self, class: TerrainClass) -> &ClassColor {
        match class {
            TerrainClass::Road => &self.road,
            TerrainClass::Grass => &self.grass,
            TerrainClass::Scrub => &self.scrub,
            TerrainClass::Obstacle => &self.canopy,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneSpec {
    /// The world spans `[-half_extent, half_extent]` on both axes (meters).
    pub half_extent: f64,
    pub class_resolution: f64,
    pub road_half_width: f64,
    /// Band beyond the trail kept free of scrub and obstacles.
    pub clearance: f64,
    /// Arc length after which the trail surface switches between road and
    /// grass; zero keeps it road everywhere.
    pub trail_period: f64,
    pub path_spacing: f64,
    pub path_amplitude: f64,
    /// Feature size of the scrub pattern (meters).
    pub scrub_scale: f64,
    /// Fraction of the off-trail area covered by scrub.
    pub scrub_fraction: f64,
    pub obstacle_count: usize,
    pub obstacle_radius: (f64, f64),
    pub obstacle_height: (f64, f64),
    /// Peak-to-peak brightness variation of the lighting pattern.
    pub shade_amplitude: f64,
    pub season: Season,
    /// Overrides the season palette when set.
    pub palette: Option<Palette>,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            half_extent: 100.0,
            class_resolution: 0.2,
            road_half_width: 1.8,
            clearance: 2.0,
            trail_period: 60.0,
            path_spacing: 25.0,
            path_amplitude: 10.0,
            scrub_scale: 8.0,
            scrub_fraction: 0.3,
            obstacle_count: 220,
            obstacle_radius: (0.4, 1.4),
            obstacle_height: (1.5, 4.0),
            shade_amplitude: 0.3,
            season: Season::Spring,
            palette: None,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        let ok = self.half_extent > 0.0
            && self.class_resolution > 0.0
            && self.road_half_width > 0.0
            && self.clearance >= 0.0
            && self.trail_period >= 0.0
            && self.path_spacing > 0.0
            && self.scrub_scale > 0.0
            && (0.0..=1.0).contains(&self.scrub_fraction)
            && self.obstacle_radius.0 > 0.0
            && self.obstacle_radius.0 <= self.obstacle_radius.1
            && self.obstacle_height.0 > 0.0
            && self.obstacle_height.0 <= self.obstacle_height.1;
        if !ok {
            return Err(Error::Config(format!("invalid scene spec {self:?}")));
        }
        Ok(())
    }

    pub fn palette(&self) -> Palette {
        self.palette.unwrap_or_else(|| Palette::for_season(self.season))
    }

    /// Obstacle area over world area when every obstacle is placed.
    pub fn expected_obstacle_fraction(&self) -> f64 {
        let (a, b) = self.obstacle_radius;
        let mean_r2 = (a * a + a * b + b * b) / 3.0;
        self.obstacle_count as f64 * PI * mean_r2 / (2.0 * self.half_extent).powi(2)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Obstacle {
    pub x: f64,
    pub y: f64,
    pub radius: f64,
    pub height: f64,
}

/// Smooth random field in [0, 1] from bilinear interpolation of lattice values.
#[derive(Debug, Clone)]
struct ValueNoise {
    n: usize,
    scale: f64,
    origin: f64,
    values: Vec<f64>,
}

impl ValueNoise {
    fn new(rng: &mut ChaCha8Rng, half_extent: f64, scale: f64) -> Self {
        let n = (2.0 * half_extent / scale).ceil() as usize + 2;
        Self {
            n,
            scale,
            origin: -half_extent,
            values: (0..n * n).map(|_| rng.random::<f64>()).collect(),
        }
    }

    fn at(&self, x: f64, y: f64) -> f64 {
        let fx = ((x - self.origin) / self.scale).clamp(0.0, (self.n - 2) as f64);
        let fy = ((y - self.origin) / self.scale).clamp(0.0, (self.n - 2) as f64);
        let (i, j) = ((fx as usize).min(self.n - 2), (fy as usize).min(self.n - 2));
        let smooth = |t: f64| t * t * (3.0 - 2.0 * t);
        let (tx, ty) = (smooth(fx - i as f64), smooth(fy - j as f64));
        let v = |a: usize, b: usize| self.values[a * self.n + b];
        let top = v(i, j) * (1.0 - ty) + v(i, j + 1) * ty;
        let bot = v(i + 1, j) * (1.0 - ty) + v(i + 1, j + 1) * ty;
        top * (1.0 - tx) + bot * tx
    }
}

#[derive(Debug, Clone)]
pub struct Scene {
    pub spec: SceneSpec,
    pub seed: u64,
    /// Cells per side of the class raster.
    pub cells: usize,
    class_map: Vec<u8>,
    obstacle_id: Vec<u32>,
    /// Trail centerline sampled at uniform arc length.
    pub path: Vec<(f64, f64)>,
    pub path_step: f64,
    pub obstacles: Vec<Obstacle>,
    shade: ValueNoise,
}

const NO_OBSTACLE: u32 = u32::MAX;

impl Scene {
    fn cell(&self, x: f64, y: f64) -> Option<usize> {
        let h = self.spec.half_extent;
        if !(x >= -h && x < h && y >= -h && y < h) {
            return None;
        }
        let res = self.spec.class_resolution;
        let i = (((x + h) / res) as usize).min(self.cells - 1);
        let j = (((y + h) / res) as usize).min(self.cells - 1);
        Some(i * self.cells + j)
    }

    pub fn class_at(&self, x: f64, y: f64) -> Option<TerrainClass> {
        self.cell(x, y).map(|c| TerrainClass::from_u8(self.class_map[c]))
    }

    pub fn obstacle_at(&self, x: f64, y: f64) -> Option<usize> {
        let id = self.obstacle_id[self.cell(x, y)?];
        (id != NO_OBSTACLE).then_some(id as usize)
    }

    pub fn class_fraction(&self, class: TerrainClass) -> f64 {
        self.class_map.iter().filter(|c| **c == class as u8).count() as f64 / self.class_map.len() as f64
    }

    pub fn path_length(&self) -> f64 {
        (self.path.len() - 1) as f64 * self.path_step
    }

    /// Position and heading at arc length `s` along the trail.
    pub fn path_pose(&self, s: f64) -> (f64, f64, f64) {
        let last = self.path.len() - 1;
        let f = (s / self.path_step).clamp(0.0, last as f64);
        let i = (f as usize).min(last - 1);
        let t = f - i as f64;
        let (a, b) = (self.path[i], self.path[i + 1]);
        let yaw = (b.1 - a.1).atan2(b.0 - a.0);
        (a.0 + t * (b.0 - a.0), a.1 + t * (b.1 - a.1), yaw)
    }
}

fn catmull_rom(p: &[(f64, f64)], samples_per_span: usize) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    for k in 0..p.len() - 1 {
        let p0 = p[k.saturating_sub(1)];
        let p1 = p[k];
        let p2 = p[k + 1];
        let p3 = p[(k + 2).min(p.len() - 1)];
        for s in 0..samples_per_span {
            let t = s as f64 / samples_per_span as f64;
            let (t2, t3) = (t * t, t * t * t);
            let f = |a: f64, b: f64, c: f64, d: f64| {
                0.5 * (2.0 * b + (-a + c) * t + (2.0 * a - 5.0 * b + 4.0 * c - d) * t2 + (-a + 3.0 * b - 3.0 * c + d) * t3)
            };
            out.push((f(p0.0, p1.0, p2.0, p3.0), f(p0.1, p1.1, p2.1, p3.1)));
        }
    }
    out.push(*p.last().unwrap());
    out
}

fn resample(poly: &[(f64, f64)], step: f64) -> Vec<(f64, f64)> {
    let mut out = vec![poly[0]];
    let mut carry = 0.0;
    for w in poly.windows(2) {
        let (a, b) = (w[0], w[1]);
        let len = ((b.0 - a.0).powi(2) + (b.1 - a.1).powi(2)).sqrt();
        let mut d = step - carry;
        while d <= len {
            let t = d / len;
            out.push((a.0 + t * (b.0 - a.0), a.1 + t * (b.1 - a.1)));
            d += step;
        }
        carry = len - (d - step);
    }
    out
}

/// Builds the class raster, trail and obstacle set. Deterministic in `seed`.
pub fn generate_scene(spec: &SceneSpec, seed: u64) -> Result<Scene> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = spec.half_extent;
    let res = spec.class_resolution;
    let cells = (2.0 * h / res).round() as usize;

    let margin = spec.path_spacing.min(h / 2.0);
    let mut ctrl = vec![(-h + margin * 0.4, 0.0)];
    let mut x = -h + margin * 0.4;
    while x + spec.path_spacing < h - margin * 0.4 {
        x += spec.path_spacing;
        ctrl.push((x, rng.random_range(-spec.path_amplitude..=spec.path_amplitude)));
    }
    if ctrl.len() < 2 {
        ctrl.push((h - margin * 0.4, 0.0));
    }
    let path_step = 0.2;
    let path = resample(&catmull_rom(&ctrl, 50), path_step);

    let scrub = ValueNoise::new(&mut rng, h, spec.scrub_scale);
    let shade = ValueNoise::new(&mut rng, h, 1.5);
    // value noise is bell shaped; map the requested area fraction onto a threshold
    let mut probe: Vec<f64> = (0..4096)
        .map(|_| scrub.at(rng.random_range(-h..h), rng.random_range(-h..h)))
        .collect();
    probe.sort_by(f64::total_cmp);
    let threshold = if spec.scrub_fraction <= 0.0 {
        f64::INFINITY
    } else {
        probe[((1.0 - spec.scrub_fraction) * (probe.len() - 1) as f64).round() as usize]
    };

    let mut class_map = vec![TerrainClass::Grass as u8; cells * cells];
    for i in 0..cells {
        let xc = -h + (i as f64 + 0.5) * res;
        for j in 0..cells {
            let yc = -h + (j as f64 + 0.5) * res;
            if scrub.at(xc, yc) >= threshold {
                class_map[i * cells + j] = TerrainClass::Scrub as u8;
            }
        }
    }
    let mut clear = vec![false; cells * cells];
    let stamp = |cx: f64, cy: f64, radius: f64, f: &mut dyn FnMut(usize)| {
        let lo_i = (((cx - radius + h) / res).floor().max(0.0)) as usize;
        let hi_i = (((cx + radius + h) / res).ceil() as usize).min(cells - 1);
        let lo_j = (((cy - radius + h) / res).floor().max(0.0)) as usize;
        let hi_j = (((cy + radius + h) / res).ceil() as usize).min(cells - 1);
        for i in lo_i..=hi_i {
            let xc = -h + (i as f64 + 0.5) * res;
            for j in lo_j..=hi_j {
                let yc = -h + (j as f64 + 0.5) * res;
                if (xc - cx).powi(2) + (yc - cy).powi(2) <= radius * radius {
                    f(i * cells + j);
                }
            }
        }
    };
    let outer = spec.road_half_width + spec.clearance;
    for &(px, py) in path.iter().step_by(2) {
        stamp(px, py, outer, &mut |c| {
            clear[c] = true;
            class_map[c] = TerrainClass::Grass as u8;
        });
    }
    for (k, &(px, py)) in path.iter().enumerate().step_by(2) {
        let s = k as f64 * path_step;
        let road = spec.trail_period <= 0.0 || (s % spec.trail_period) < spec.trail_period / 2.0;
        let class = if road { TerrainClass::Road } else { TerrainClass::Grass };
        stamp(px, py, spec.road_half_width, &mut |c| class_map[c] = class as u8);
    }

    let mut obstacles: Vec<Obstacle> = Vec::with_capacity(spec.obstacle_count);
    let mut obstacle_id = vec![NO_OBSTACLE; cells * cells];
    let mut attempts = 0;
    while obstacles.len() < spec.obstacle_count && attempts < spec.obstacle_count * 200 {
        attempts += 1;
        let radius = rng.random_range(spec.obstacle_radius.0..=spec.obstacle_radius.1);
        let height = rng.random_range(spec.obstacle_height.0..=spec.obstacle_height.1);
        let ox = rng.random_range(-h + radius..h - radius);
        let oy = rng.random_range(-h + radius..h - radius);
        let near_path = path
            .iter()
            .step_by(2)
            .any(|&(px, py)| (px - ox).powi(2) + (py - oy).powi(2) < (outer + radius).powi(2));
        let overlaps = obstacles
            .iter()
            .any(|o| (o.x - ox).powi(2) + (o.y - oy).powi(2) < (o.radius + radius).powi(2));
        if near_path || overlaps {
            continue;
        }
        let id = obstacles.len() as u32;
        stamp(ox, oy, radius, &mut |c| {
            if !clear[c] {
                class_map[c] = TerrainClass::Obstacle as u8;
                obstacle_id[c] = id;
            }
        });
        obstacles.push(Obstacle {
            x: ox,
            y: oy,
            radius,
            height,
        });
    }
    if obstacles.len() < spec.obstacle_count {
        log::warn!("placed {} of {} obstacles", obstacles.len(), spec.obstacle_count);
    }
    Ok(Scene {
        spec: spec.clone(),
        seed,
        cells,
        class_map,
        obstacle_id,
        path,
        path_step,
        obstacles,
        shade,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DriveConfig {
    pub speed: f64,
    pub frame_rate: f64,
    pub duration: f64,
    /// Arc length along the trail where the drive starts.
    pub start_offset: f64,
    pub sensor_range: f64,
    /// Half-angle of the sampled sector ahead of the vehicle (radians).
    pub sensor_half_angle: f64,
    pub points_per_frame: usize,
    pub detection_range: f64,
    /// Standard deviations of reported-pose noise (meters, radians).
    pub pose_noise: Option<(f64, f64)>,
    pub grid: GridSpec,
    pub camera: CameraModel,
}

impl Default for DriveConfig {
    fn default() -> Self {
        Self {
            speed: 2.5,
            frame_rate: 2.0,
            duration: 30.0,
            start_offset: 12.0,
            sensor_range: 30.0,
            sensor_half_angle: 1.05,
            points_per_frame: 14000,
            detection_range: 25.0,
            pose_noise: None,
            grid: GridSpec::default(),
            camera: CameraModel::forward_looking(256, 128, 100f64.to_radians(), 1.5, 0.25),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticFrame {
    pub index: usize,
    pub timestamp: f64,
    /// Reported pose (noisy when pose noise is configured).
    pub pose: Pose,
    pub true_pose: Pose,
    /// Uncolored scan in the vehicle frame.
    pub cloud: PointCloud,
    pub image: RgbImage,
    pub obstacles: ObstacleMask,
    pub ground_truth: LabelMask,
}

fn mix(seed: u64, a: u64, b: u64) -> u64 {
    // splitmix-style combination; only needs to decorrelate streams
    let mut z = seed ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ b.wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn occluded(scene: &Scene, nearby: &[usize], sensor: (f64, f64), p: (f64, f64), own: Option<usize>) -> bool {
    let (dx, dy) = (p.0 - sensor.0, p.1 - sensor.1);
    let len2 = dx * dx + dy * dy;
    nearby.iter().any(|&k| {
        if Some(k) == own {
            return false;
        }
        let o = &scene.obstacles[k];
        let (ox, oy) = (o.x - sensor.0, o.y - sensor.1);
        let t = ((ox * dx + oy * dy) / len2).clamp(0.0, 1.0);
        let (cx, cy) = (dx * t - ox, dy * t - oy);
        t < 1.0 && cx * cx + cy * cy < o.radius * o.radius
    })
}

fn sample_color(c: &ClassColor, shade: f64, rng: &mut ChaCha8Rng) -> [u8; 3] {
    let noise = Normal::new(0.0, c.sigma.max(1e-9)).unwrap();
    let mut out = [0u8; 3];
    for k in 0..3 {
        out[k] = (c.mean[k] * shade + noise.sample(rng)).round().clamp(0.0, 255.0) as u8;
    }
    out
}

/// Scan, image and masks for a vehicle at `true_pose`.
pub fn render_frame(scene: &Scene, cfg: &DriveConfig, index: usize, true_pose: &Pose, pose: &Pose) -> Result<SyntheticFrame> {
    let palette = scene.spec.palette();
    let season_tag = scene.spec.season as u64 + 1;
    let mut geo = ChaCha8Rng::seed_from_u64(mix(scene.seed, index as u64, 0x6e0));
    let mut col = ChaCha8Rng::seed_from_u64(mix(scene.seed, index as u64, 0xc010 + season_tag));
    let (vx, vy) = (true_pose.translation.x, true_pose.translation.y);
    let reach = cfg.sensor_range + scene.spec.obstacle_radius.1;
    let nearby: Vec<usize> = (0..scene.obstacles.len())
        .filter(|&k| {
            let o = &scene.obstacles[k];
            (o.x - vx).powi(2) + (o.y - vy).powi(2) < reach * reach
        })
        .collect();

    let mut world_pts = Vec::with_capacity(cfg.points_per_frame);
    let mut colors = Vec::with_capacity(cfg.points_per_frame);
    let mut surfaces = Vec::with_capacity(cfg.points_per_frame);
    let r_min = 1.0f64;
    for _ in 0..cfg.points_per_frame {
        let r = (geo.random_range(r_min * r_min..cfg.sensor_range * cfg.sensor_range)).sqrt();
        let bearing = geo.random_range(-cfg.sensor_half_angle..=cfg.sensor_half_angle);
        let local = Vec3::new(r * bearing.cos(), r * bearing.sin(), 0.0);
        let w = true_pose.apply(&local);
        let Some(class) = scene.class_at(w.x, w.y) else {
            continue;
        };
        let own = scene.obstacle_at(w.x, w.y);
        let obstacle = own.map(|k| &scene.obstacles[k]);
        if occluded(scene, &nearby, (vx, vy), (w.x, w.y), own) {
            continue;
        }
        let a = scene.spec.shade_amplitude;
        let shade = 1.0 - 0.5 * a + a * scene.shade.at(w.x, w.y);
        let (z, color, surface) = match (class, obstacle) {
            (TerrainClass::Obstacle, Some(o)) => {
                let z = geo.random_range(0.0..o.height);
                let canopy = z > 0.4 * o.height;
                let c = if canopy { &palette.canopy } else { &palette.trunk };
                (z, sample_color(c, shade, &mut col), 4 + canopy as u8)
            }
            (TerrainClass::Scrub, _) => (
                geo.random_range(0.2..1.0),
                sample_color(&palette.scrub, shade, &mut col),
                TerrainClass::Scrub as u8,
            ),
            (c, _) => (
                0.02 * (geo.random::<f64>() - 0.5),
                sample_color(palette.of(c), shade, &mut col),
                c as u8,
            ),
        };
        world_pts.push(Vec3::new(w.x, w.y, z));
        colors.push(color);
        surfaces.push(surface);
    }

    let points: Vec<Vec3> = world_pts.iter().map(|p| true_pose.apply_inverse(p)).collect();
    let r = cfg.camera.rotation();
    let t = cfg.camera.translation();
    let (iw, ih) = (cfg.camera.image_width, cfg.camera.image_height);
    let mut image = RgbImage::new(iw, ih);
    let mut depth = vec![f64::INFINITY; (iw * ih) as usize];
    let mut winner = vec![usize::MAX; (iw * ih) as usize];
    let pixels: Vec<Option<usize>> = points
        .iter()
        .map(|p| project_with_depth(p, &r, &t, &cfg.camera).map(|(u, v, d)| ((v * iw + u) as usize, d)))
        .enumerate()
        .map(|(n, hit)| {
            hit.map(|(k, d)| {
                if d < depth[k] {
                    depth[k] = d;
                    winner[k] = n;
                }
                k
            })
        })
        .collect();
    for (k, &n) in winner.iter().enumerate() {
        if n != usize::MAX {
            image.data[3 * k..3 * k + 3].copy_from_slice(&colors[n]);
        }
    }
    // Returns hidden from the camera behind a different surface would pick
    // up that surface's color; the scan drops them.
    let points: Vec<Vec3> = points
        .into_iter()
        .zip(&pixels)
        .enumerate()
        .filter(|(n, (_, px))| px.is_none_or(|k| surfaces[winner[k]] == surfaces[*n]))
        .map(|(_, (p, _))| p)
        .collect();

    let spec = cfg.grid;
    let mut obstacles = ObstacleMask::empty(spec, true_pose.timestamp);
    let mut gt = LabelMask::unlabeled(spec);
    for row in 0..spec.height_cells {
        for colm in 0..spec.width_cells {
            let (x, y) = spec.cell_center(row, colm);
            let w = true_pose.apply(&Vec3::new(x, y, 0.0));
            let Some(class) = scene.class_at(w.x, w.y) else {
                continue;
            };
            let i = spec.index(row, colm);
            gt.labels[i] = if class.traversable() { Label::Traversable } else { Label::Untraversable };
            if !class.traversable() && x * x + y * y <= cfg.detection_range * cfg.detection_range {
                obstacles.cells[i] = true;
            }
        }
    }
    Ok(SyntheticFrame {
        index,
        timestamp: true_pose.timestamp,
        pose: *pose,
        true_pose: *true_pose,
        cloud: PointCloud::new(points, None, FrameTag::Vehicle)?,
        image,
        obstacles,
        ground_truth: gt,
    })
}

/// Poses along the trail at the configured speed and rate.
pub fn drive_poses(scene: &Scene, cfg: &DriveConfig) -> Result<Vec<(Pose, Pose)>> {
    if !(cfg.frame_rate > 0.0) || !(cfg.speed >= 0.0) || !(cfg.duration >= 0.0) {
        return Err(Error::Config("speed, frame rate and duration must be non-negative".into()));
    }
    let n = (cfg.duration * cfg.frame_rate).round() as usize;
    let mut noise_rng = ChaCha8Rng::seed_from_u64(mix(scene.seed, 0x905e, 0));
    let mut out = Vec::with_capacity(n);
    for k in 0..n {
        let t = k as f64 / cfg.frame_rate;
        let (x, y, yaw) = scene.path_pose(cfg.start_offset + cfg.speed * t);
        let truth = Pose::from_yaw(yaw, Vec3::new(x, y, 0.0), t);
        let reported = match cfg.pose_noise {
            Some((sp, sy)) if sp > 0.0 || sy > 0.0 => {
                let np = Normal::new(0.0, sp.max(1e-12)).unwrap();
                let ny = Normal::new(0.0, sy.max(1e-12)).unwrap();
                let (dx, dy, dyaw) = (np.sample(&mut noise_rng), np.sample(&mut noise_rng), ny.sample(&mut noise_rng));
                Pose::from_yaw(yaw + dyaw, Vec3::new(x + dx, y + dy, 0.0), t)
            }
            _ => truth,
        };
        out.push((truth, reported));
    }
    Ok(out)
}

/// Renders every frame of a drive along the trail.
pub fn simulate_drive(scene: &Scene, cfg: &DriveConfig) -> Result<Vec<SyntheticFrame>> {
    cfg.grid.validate()?;
    cfg.camera.validate()?;
    drive_poses(scene, cfg)?
        .iter()
        .enumerate()
        .map(|(k, (truth, reported))| render_frame(scene, cfg, k, truth, reported))
        .collect()
}
