//! Self-supervised traversability learning on bird's-eye-view grids.

pub mod autolabel;
pub mod bev;
pub mod error;
pub mod evaluation;
pub mod geometry;
pub mod io;
pub mod model;
pub mod online;
pub mod pipeline;
pub mod synth;
pub mod training;

pub use autolabel::{Label, LabelMask, LabelStats, ObstacleMask};
pub use bev::{AccumulatorConfig, AccumulatorState, BevGrid, GridSpec};
pub use error::{Error, Result};
pub use evaluation::EvalReport;
pub use geometry::{CameraModel, FrameTag, PointCloud, Pose, RgbImage, Vec3, WheelFootprint};
pub use model::{Architecture, FeatureMap, ModelParams};
pub use online::{Engine, OnlineConfig, PrototypeQueue, Snapshot, SnapshotHandle, TraversabilityMap};
pub use training::{TrainConfig, TrainOutcome};
