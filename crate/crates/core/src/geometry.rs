//! Rigid transforms, pinhole projection, point-cloud fusion and wheel
//! footprint transforms.
//!
//! All transforms use column vectors. A [`Pose`] maps vehicle-frame
//! coordinates into the odometry frame: `p_odom = R * p_veh + T`.

use nalgebra::{Matrix3, Matrix4, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const ORTHO_TOL: f64 = 1e-6;

pub type Vec3 = Vector3<f64>;

/// Rigid body pose at a timestamp.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub rotation: Matrix3<f64>,
    pub translation: Vec3,
    pub timestamp: f64,
}

impl Pose {
    /// Builds a pose, rejecting rotations that are not proper orthonormal.
    pub fn new(rotation: Matrix3<f64>, translation: Vec3, timestamp: f64) -> Result<Self> {
        check_rotation(&rotation, "pose rotation")?;
        if !translation.iter().all(|v| v.is_finite()) || !timestamp.is_finite() {
            return Err(Error::Config("pose has non-finite values".into()));
        }
        Ok(Self {
            rotation,
            translation,
            timestamp,
        })
    }

    pub fn identity(timestamp: f64) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vec3::zeros(),
            timestamp,
        }
    }

    /// Planar pose: rotation about +z by `yaw` radians.
    pub fn from_yaw(yaw: f64, translation: Vec3, timestamp: f64) -> Self {
        let (s, c) = yaw.sin_cos();
        #[rustfmt::skip]
        let rotation = Matrix3::new(
            c, -s, 0.0,
            s,  c, 0.0,
            0.0, 0.0, 1.0,
        );
        Self {
            rotation,
            translation,
            timestamp,
        }
    }

    /// Converts a quaternion log entry (w, x, y, z) into matrix form.
    pub fn from_quaternion(q: [f64; 4], translation: Vec3, timestamp: f64) -> Self {
        let uq = UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(q[0], q[1], q[2], q[3]));
        Self {
            rotation: *uq.to_rotation_matrix().matrix(),
            translation,
            timestamp,
        }
    }

    pub fn yaw(&self) -> f64 {
        self.rotation[(1, 0)].atan2(self.rotation[(0, 0)])
    }

    pub fn to_homogeneous(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    /// Vehicle frame -> odometry frame.
    #[inline]
    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    /// Odometry frame -> vehicle frame.
    #[inline]
    pub fn apply_inverse(&self, p: &Vec3) -> Vec3 {
        self.rotation.transpose() * (p - self.translation)
    }

    /// Pose of `other` expressed in this pose's vehicle frame.
    pub fn relative(&self, other: &Pose) -> Pose {
        let rt = self.rotation.transpose();
        Pose {
            rotation: rt * other.rotation,
            translation: rt * (other.translation - self.translation),
            timestamp: other.timestamp,
        }
    }
}

fn check_rotation(r: &Matrix3<f64>, what: &str) -> Result<()> {
    if !r.iter().all(|v| v.is_finite()) {
        return Err(Error::Config(format!("{what} has non-finite entries")));
    }
    let err = (r.transpose() * r - Matrix3::identity()).amax();
    if err >= ORTHO_TOL {
        return Err(Error::Config(format!(
            "{what} is not orthonormal (max |RᵀR - I| = {err:e})"
        )));
    }
    if (r.determinant() - 1.0).abs() >= ORTHO_TOL {
        return Err(Error::Config(format!("{what} has determinant != +1")));
    }
    Ok(())
}

/// Pinhole camera with LiDAR-to-camera extrinsics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub image_width: u32,
    pub image_height: u32,
    /// Row-major 3x3.
    pub lidar_to_cam_rotation: [[f64; 3]; 3],
    pub lidar_to_cam_translation: [f64; 3],
}

impl CameraModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::Config("focal lengths must be positive".into()));
        }
        if !(self.cx >= 0.0 && self.cx < self.image_width as f64)
            || !(self.cy >= 0.0 && self.cy < self.image_height as f64)
        {
            return Err(Error::Config("principal point outside image".into()));
        }
        check_rotation(&self.rotation(), "lidar_to_cam_rotation")
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        let r = &self.lidar_to_cam_rotation;
        Matrix3::from_fn(|i, j| r[i][j])
    }

    pub fn translation(&self) -> Vec3 {
        Vec3::from(self.lidar_to_cam_translation)
    }

    /// Forward-looking camera mounted `height` meters above the vehicle
    /// origin, pitched down by `pitch` radians, with horizontal field of view
    /// `hfov` radians.
    pub fn forward_looking(width: u32, height_px: u32, hfov: f64, mount_height: f64, pitch: f64) -> Self {
        let fx = width as f64 / 2.0 / (hfov / 2.0).tan();
        // vehicle (x fwd, y left, z up) -> camera (x right, y down, z fwd)
        let base = Matrix3::new(0.0, -1.0, 0.0, 0.0, 0.0, -1.0, 1.0, 0.0, 0.0);
        let (s, c) = pitch.sin_cos();
        // positive pitch tilts the optical axis downward
        let tilt = Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c);
        let r = tilt * base;
        let t = -(r * Vec3::new(0.0, 0.0, mount_height));
        Self {
            fx,
            fy: fx,
            cx: width as f64 / 2.0,
            cy: height_px as f64 / 2.0,
            image_width: width,
            image_height: height_px,
            lidar_to_cam_rotation: [
                [r[(0, 0)], r[(0, 1)], r[(0, 2)]],
                [r[(1, 0)], r[(1, 1)], r[(1, 2)]],
                [r[(2, 0)], r[(2, 1)], r[(2, 2)]],
            ],
            lidar_to_cam_translation: [t.x, t.y, t.z],
        }
    }
}

/// Which frame a cloud's coordinates are expressed in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FrameTag {
    Vehicle,
    Odometry,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Vec3>,
    pub colors: Option<Vec<[u8; 3]>>,
    pub frame: FrameTag,
}

impl PointCloud {
    pub fn empty(frame: FrameTag) -> Self {
        Self {
            points: Vec::new(),
            colors: None,
            frame,
        }
    }

    pub fn new(points: Vec<Vec3>, colors: Option<Vec<[u8; 3]>>, frame: FrameTag) -> Result<Self> {
        let cloud = Self {
            points,
            colors,
            frame,
        };
        cloud.validate()?;
        Ok(cloud)
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(c) = &self.colors {
            if c.len() != self.points.len() {
                return Err(Error::Config(format!(
                    "cloud has {} points but {} colors",
                    self.points.len(),
                    c.len()
                )));
            }
        }
        if !self.points.iter().all(|p| p.iter().all(|v| v.is_finite())) {
            return Err(Error::Config("cloud has non-finite coordinates".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn is_colored(&self) -> bool {
        self.colors.is_some()
    }
}

/// Row-major 8-bit RGB raster.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    pub width: u32,
    pub height: u32,
    pub data: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            data: vec![0; width as usize * height as usize * 3],
        }
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> [u8; 3]) -> Self {
        let mut img = Self::new(width, height);
        for y in 0..height {
            for x in 0..width {
                img.put(x, y, f(x, y));
            }
        }
        img
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> [u8; 3] {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn put(&mut self, x: u32, y: u32, c: [u8; 3]) {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        self.data[i..i + 3].copy_from_slice(&c);
    }
}

/// Wheel-ground contact points in the vehicle frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WheelFootprint {
    pub left_front: [f64; 3],
    pub left_rear: [f64; 3],
    pub right_front: [f64; 3],
    pub right_rear: [f64; 3],
}

impl WheelFootprint {
    pub fn new(left_front: Vec3, left_rear: Vec3, right_front: Vec3, right_rear: Vec3) -> Result<Self> {
        let fp = Self {
            left_front: left_front.into(),
            left_rear: left_rear.into(),
            right_front: right_front.into(),
            right_rear: right_rear.into(),
        };
        fp.validate()?;
        Ok(fp)
    }

    /// Axis-aligned footprint centered on the vehicle origin.
    pub fn rectangle(wheelbase: f64, track: f64) -> Self {
        let (hx, hy) = (wheelbase / 2.0, track / 2.0);
        Self {
            left_front: [hx, hy, 0.0],
            left_rear: [-hx, hy, 0.0],
            right_front: [hx, -hy, 0.0],
            right_rear: [-hx, -hy, 0.0],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fronts = [self.left_front[0], self.right_front[0]];
        let rears = [self.left_rear[0], self.right_rear[0]];
        if fronts.iter().any(|f| rears.iter().any(|r| f <= r)) {
            return Err(Error::Config("front contacts must lie ahead of rear contacts".into()));
        }
        let lefts = [self.left_front[1], self.left_rear[1]];
        let rights = [self.right_front[1], self.right_rear[1]];
        if lefts.iter().any(|l| rights.iter().any(|r| l <= r)) {
            return Err(Error::Config("left contacts must lie left of right contacts".into()));
        }
        Ok(())
    }

    /// Contacts in polygon order: lf, rf, rr, lr.
    pub fn polygon(&self) -> [Vec3; 4] {
        [
            self.left_front.into(),
            self.right_front.into(),
            self.right_rear.into(),
            self.left_rear.into(),
        ]
    }
}

/// Projects a LiDAR-frame point to pixel coordinates, or `None` when it is
/// behind the camera or outside the image.
pub fn project_point(p: &Vec3, cam: &CameraModel) -> Option<(f64, f64)> {
    project_with(p, &cam.rotation(), &cam.translation(), cam)
}

#[inline]
fn project_with(p: &Vec3, r: &Matrix3<f64>, t: &Vec3, cam: &CameraModel) -> Option<(f64, f64)> {
    let pc = r * p + t;
    if !(pc.z > 0.0) {
        return None;
    }
    let u = cam.fx * pc.x / pc.z + cam.cx;
    let v = cam.fy * pc.y / pc.z + cam.cy;
    let inside = u >= 0.0 && u < cam.image_width as f64 && v >= 0.0 && v < cam.image_height as f64;
    inside.then_some((u, v))
}

/// Camera-frame depth of a projected point; used by the synthetic renderer.
pub(crate) fn project_with_depth(p: &Vec3, r: &Matrix3<f64>, t: &Vec3, cam: &CameraModel) -> Option<(u32, u32, f64)> {
    let pc = r * p + t;
    project_with(p, r, t, cam).map(|(u, v)| (u as u32, v as u32, pc.z))
}

/// Colors each point by nearest-pixel lookup; points that do not project
/// into the image are dropped.
pub fn colorize_cloud(cloud: &PointCloud, image: &RgbImage, cam: &CameraModel) -> Result<PointCloud> {
    if image.width != cam.image_width || image.height != cam.image_height {
        return Err(Error::Config(format!(
            "image is {}x{} but camera expects {}x{}",
            image.width, image.height, cam.image_width, cam.image_height
        )));
    }
    let r = cam.rotation();
    let t = cam.translation();
    let mut points = Vec::with_capacity(cloud.len());
    let mut colors = Vec::with_capacity(cloud.len());
    for p in &cloud.points {
        if let Some((u, v)) = project_with(p, &r, &t, cam) {
            points.push(*p);
            colors.push(image.get(u as u32, v as u32));
        }
    }
    Ok(PointCloud {
        points,
        colors: Some(colors),
        frame: cloud.frame,
    })
}

/// Brings the previous fused cloud (odometry frame) into the current
/// vehicle frame and appends the current scan.
pub fn fuse_clouds(prev_fused_odom: &PointCloud, pose_t: &Pose, current: &PointCloud) -> PointCloud {
    let rt = pose_t.rotation.transpose();
    let offset = -(rt * pose_t.translation);
    let mut points = Vec::with_capacity(prev_fused_odom.len() + current.len());
    points.extend(prev_fused_odom.points.iter().map(|p| rt * p + offset));
    points.extend_from_slice(&current.points);

    let colors = match (&prev_fused_odom.colors, &current.colors) {
        (Some(a), Some(b)) => Some(a.iter().chain(b).copied().collect()),
        (None, Some(b)) if prev_fused_odom.is_empty() => Some(b.clone()),
        (Some(a), None) if current.is_empty() => Some(a.clone()),
        _ => None,
    };
    PointCloud {
        points,
        colors,
        frame: FrameTag::Vehicle,
    }
}

/// Vehicle frame -> odometry frame.
pub fn to_odom(cloud_vehicle: &PointCloud, pose_t: &Pose) -> PointCloud {
    PointCloud {
        points: cloud_vehicle.points.iter().map(|p| pose_t.apply(p)).collect(),
        colors: cloud_vehicle.colors.clone(),
        frame: FrameTag::Odometry,
    }
}

/// Expresses the wheel contacts at pose `pose_tau` in the vehicle frame at
/// `pose_t`. Returned in the order lf, lr, rf, rr.
pub fn transform_footprint(fp: &WheelFootprint, pose_tau: &Pose, pose_t: &Pose) -> [Vec3; 4] {
    let rel = pose_t.relative(pose_tau);
    [fp.left_front, fp.left_rear, fp.right_front, fp.right_rear].map(|j| rel.apply(&Vec3::from(j)))
}
