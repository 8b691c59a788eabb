//! Self-supervised label masks: cells swept by the wheel footprint along the
//! driven trajectory are traversable, detected obstacles are not.

use std::collections::{BTreeSet, HashSet};

use serde::{Deserialize, Serialize};

use crate::bev::GridSpec;
use crate::error::{Error, Result};
use crate::geometry::{transform_footprint, Pose, Vec3, WheelFootprint};

pub const DEFAULT_HORIZON_S: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[repr(u8)]
pub enum Label {
    Unlabeled = 0,
    Traversable = 1,
    Untraversable = 2,
}

impl Label {
    pub fn from_u8(v: u8) -> Option<Self> {
        match v {
            0 => Some(Label::Unlabeled),
            1 => Some(Label::Traversable),
            2 => Some(Label::Untraversable),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObstacleMask {
    pub spec: GridSpec,
    pub cells: Vec<bool>,
    pub timestamp: f64,
}

impl ObstacleMask {
    pub fn empty(spec: GridSpec, timestamp: f64) -> Self {
        Self {
            spec,
            cells: vec![false; spec.len()],
            timestamp,
        }
    }

    /// Drops detections on cells with no observed points.
    pub fn restrict_to(&mut self, occupancy: &[bool]) -> Result<()> {
        if occupancy.len() != self.cells.len() {
            return Err(Error::Config("occupancy does not match obstacle mask".into()));
        }
        for (c, &o) in self.cells.iter_mut().zip(occupancy) {
            *c &= o;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabelMask {
    pub spec: GridSpec,
    pub labels: Vec<Label>,
}

impl LabelMask {
    pub fn unlabeled(spec: GridSpec) -> Self {
        Self {
            spec,
            labels: vec![Label::Unlabeled; spec.len()],
        }
    }

    pub fn count(&self, label: Label) -> usize {
        self.labels.iter().filter(|&&l| l == label).count()
    }

    pub fn unlabeled_fraction(&self) -> f64 {
        self.count(Label::Unlabeled) as f64 / self.labels.len().max(1) as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LabelStats {
    pub traversable: usize,
    pub untraversable: usize,
    pub conflicts: usize,
    pub unlabeled_fraction: f64,
}

/// Cells whose centers fall inside a convex polygon (vehicle-frame x, y).
/// Half-open on the upper bounds so adjacent polygons never share a cell.
pub fn fill_polygon(poly: &[Vec3], spec: &GridSpec, out: &mut impl FnMut(usize, usize)) {
    let (mut xmin, mut xmax, mut ymin, mut ymax) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for p in poly {
        xmin = xmin.min(p.x);
        xmax = xmax.max(p.x);
        ymin = ymin.min(p.y);
        ymax = ymax.max(p.y);
    }
    let (r_lo, c_lo) = spec.cell_of(xmax, ymax);
    let (r_hi, c_hi) = spec.cell_of(xmin, ymin);
    let r_lo = r_lo.max(0);
    let c_lo = c_lo.max(0);
    let r_hi = r_hi.min(spec.height_cells as i64 - 1);
    let c_hi = c_hi.min(spec.width_cells as i64 - 1);
    for row in r_lo..=r_hi {
        for col in c_lo..=c_hi {
            let (x, y) = spec.cell_center(row as usize, col as usize);
            if point_in_polygon(x, y, poly) {
                out(row as usize, col as usize);
            }
        }
    }
}

fn point_in_polygon(px: f64, py: f64, poly: &[Vec3]) -> bool {
    let mut inside = false;
    let n = poly.len();
    let mut j = n - 1;
    for i in 0..n {
        let (xi, yi) = (poly[i].x, poly[i].y);
        let (xj, yj) = (poly[j].x, poly[j].y);
        if (yi > py) != (yj > py) && px < (xj - xi) * (py - yi) / (yj - yi) + xi {
            inside = !inside;
        }
        j = i;
    }
    inside
}

/// Footprint cells in trajectory order (first occurrence), for poses within
/// `horizon` seconds of `pose_t`.
pub fn footprint_cells_ordered(
    trajectory: &[Pose],
    fp: &WheelFootprint,
    pose_t: &Pose,
    spec: &GridSpec,
    horizon: f64,
) -> Vec<(usize, usize)> {
    let mut seen = HashSet::new();
    let mut ordered = Vec::new();
    for tau in trajectory {
        if (tau.timestamp - pose_t.timestamp).abs() > horizon {
            continue;
        }
        let [lf, lr, rf, rr] = transform_footprint(fp, tau, pose_t);
        fill_polygon(&[lf, rf, rr, lr], spec, &mut |r, c| {
            if seen.insert((r, c)) {
                ordered.push((r, c));
            }
        });
    }
    ordered
}

/// Union of footprint quadrilaterals swept along the trajectory.
pub fn footprint_cells(
    trajectory: &[Pose],
    fp: &WheelFootprint,
    pose_t: &Pose,
    spec: &GridSpec,
    horizon: f64,
) -> BTreeSet<(usize, usize)> {
    footprint_cells_ordered(trajectory, fp, pose_t, spec, horizon).into_iter().collect()
}

/// Trajectory cells take precedence over obstacle detections.
pub fn build_label_mask(trav_cells: &BTreeSet<(usize, usize)>, obstacles: &ObstacleMask) -> (LabelMask, LabelStats) {
    let spec = obstacles.spec;
    let mut mask = LabelMask::unlabeled(spec);
    for (i, &o) in obstacles.cells.iter().enumerate() {
        if o {
            mask.labels[i] = Label::Untraversable;
        }
    }
    let mut conflicts = 0;
    for &(r, c) in trav_cells {
        let i = spec.index(r, c);
        if mask.labels[i] == Label::Untraversable {
            conflicts += 1;
        }
        mask.labels[i] = Label::Traversable;
    }
    if conflicts > 0 {
        log::warn!("{conflicts} traversed cells were also flagged as obstacles (t={})", obstacles.timestamp);
    }
    let stats = LabelStats {
        traversable: mask.count(Label::Traversable),
        untraversable: mask.count(Label::Untraversable),
        conflicts,
        unlabeled_fraction: mask.unlabeled_fraction(),
    };
    (mask, stats)
}
