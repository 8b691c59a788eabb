use std::path::Path;

use serde::{Deserialize, Serialize};
use travmap_core::autolabel::DEFAULT_HORIZON_S;
use travmap_core::io::read_json;
use travmap_core::synth::{DriveConfig, SceneSpec};
use travmap_core::{AccumulatorConfig, OnlineConfig, Result, TrainConfig, WheelFootprint};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VehicleConfig {
    pub wheelbase: f64,
    pub track: f64,
}

impl Default for VehicleConfig {
    fn default() -> Self {
        Self {
            wheelbase: 1.6,
            track: 1.4,
        }
    }
}

impl VehicleConfig {
    pub fn footprint(&self) -> Result<WheelFootprint> {
        let fp = WheelFootprint::rectangle(self.wheelbase, self.track);
        fp.validate()?;
        Ok(fp)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AutolabelConfig {
    pub horizon_s: f64,
}

impl Default for AutolabelConfig {
    fn default() -> Self {
        Self {
            horizon_s: DEFAULT_HORIZON_S,
        }
    }
}

/// One JSON file, one section per pipeline stage. Missing sections and
/// fields take their defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub scene: SceneSpec,
    pub drive: DriveConfig,
    pub vehicle: VehicleConfig,
    pub bev: AccumulatorConfig,
    pub autolabel: AutolabelConfig,
    pub train: TrainConfig,
    pub online: OnlineConfig,
}

impl PipelineConfig {
    /// Small synthetic run that trains in under a minute on one core.
    pub fn desk() -> Self {
        Self {
            drive: DriveConfig {
                duration: 25.0,
                ..DriveConfig::default()
            },
            train: TrainConfig::desk_scale(),
            ..Self::default()
        }
    }

    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            Some(p) => read_json(p),
            None => Ok(Self::default()),
        }
    }
}
