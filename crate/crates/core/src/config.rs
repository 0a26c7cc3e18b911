//! Experiment files: TOML with a few top-level keys and one section per
//! concern. Everything an experiment varies lives here, so the three
//! experiments differ only in data.

use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::encoders::{NetConfig, SensorMask};
use crate::env::{EnvConfig, InstructionSet, RewardKind, RewardSpec};
use crate::ppo::{Setup, TrainerConfig};
use crate::render::{CameraSpec, Table};
use crate::sim::{Color, RobotModel, SceneObject};

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub path: Option<PathBuf>,
    /// 1-based line the problem was found on, when it can be pinned down.
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.path {
            Some(p) => write!(f, "{}", p.display())?,
            None => write!(f, "<config>")?,
        }
        if let Some(l) = self.line {
            write!(f, ":{l}")?;
        }
        write!(f, ": {}", self.message)
    }
}

impl std::error::Error for ConfigError {}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CubeConfig {
    pub color: Color,
    pub center: [f64; 3],
    pub half_extent: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneConfig {
    pub trajectory_len: usize,
    pub contact_radius: f64,
    pub table_x: [f64; 2],
    pub table_y: [f64; 2],
    pub table_z: f64,
    pub cubes: Vec<CubeConfig>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstructionConfig {
    pub text: String,
    pub target: Color,
    pub reward: RewardKind,
    pub correct_gain: f64,
    pub wrong_penalty: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    pub conv_channels: [usize; 2],
    pub proprio: bool,
    pub tactile: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub robot: String,
    pub seed: u64,
    pub output_dir: String,
    pub scene: SceneConfig,
    pub instructions: Vec<InstructionConfig>,
    pub cameras: Vec<CameraSpec>,
    pub network: NetworkConfig,
    pub trainer: TrainerConfig,
}

fn line_of_offset(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// First line whose key is `key` (optionally with a given value prefix).
fn line_of_key(text: &str, key: &str, value: Option<&str>) -> Option<usize> {
    text.lines().position(|l| {
        let Some((k, v)) = l.split_once('=') else {
            return false;
        };
        k.trim() == key && value.is_none_or(|want| v.trim().trim_matches('"') == want)
    })
    .map(|i| i + 1)
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text).map_err(|e| ConfigError {
            path: None,
            line: e.span().map(|s| line_of_offset(text, s.start)),
            message: e.message().trim().to_string(),
        })?;
        cfg.validate().map_err(|(key, value, message)| ConfigError {
            path: None,
            line: line_of_key(text, key, value.as_deref()),
            message,
        })?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError {
            path: Some(path.to_path_buf()),
            line: None,
            message: e.to_string(),
        })?;
        Self::parse(&text).map_err(|e| ConfigError {
            path: Some(path.to_path_buf()),
            ..e
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config types always serialize")
    }

    /// Semantic checks. Errors carry the key (and value) to anchor on.
    fn validate(&self) -> Result<(), (&'static str, Option<String>, String)> {
        let robot = RobotModel::by_name(&self.robot)
            .map_err(|e| ("robot", None, e.to_string()))?;
        robot
            .validate()
            .map_err(|e| ("robot", None, e.to_string()))?;
        self.trainer
            .validate()
            .map_err(|(key, m)| (key, None, format!("[trainer] {m}")))?;
        if self.instructions.is_empty() {
            return Err(("text", None, "at least one instruction is required".into()));
        }
        for ins in &self.instructions {
            if !self.scene.cubes.iter().any(|c| c.color == ins.target) {
                return Err((
                    "target",
                    Some(ins.target.name().to_string()),
                    format!("instruction targets a {} cube that is not in the scene", ins.target),
                ));
            }
        }
        if let Some(cam) = self.cameras.iter().find(|c| {
            c.width != self.cameras[0].width || c.height != self.cameras[0].height
        }) {
            return Err((
                "width",
                None,
                format!("{} camera resolution differs from the first camera", cam.pose.name()),
            ));
        }
        let env = self.env_config_with(robot.clone());
        env.validate().map_err(|e| ("trajectory_len", None, e.to_string()))?;
        self.net_config_with(&robot)
            .validate()
            .map_err(|e| ("width", None, e.to_string()))?;
        Ok(())
    }

    fn env_config_with(&self, robot: RobotModel) -> EnvConfig {
        let s = &self.scene;
        EnvConfig {
            robot,
            objects: s
                .cubes
                .iter()
                .enumerate()
                .map(|(id, c)| SceneObject {
                    id,
                    color: c.color,
                    center: c.center,
                    half_extent: c.half_extent,
                })
                .collect(),
            table: Some(Table {
                x: s.table_x,
                y: s.table_y,
                z: s.table_z,
            }),
            instructions: InstructionSet::new(
                self.instructions
                    .iter()
                    .map(|i| {
                        (
                            i.text.clone(),
                            RewardSpec {
                                kind: i.reward,
                                target: i.target,
                                correct_gain: i.correct_gain,
                                wrong_penalty: i.wrong_penalty,
                            },
                        )
                    })
                    .collect(),
            ),
            cameras: self.cameras.clone(),
            trajectory_len: s.trajectory_len,
            contact_radius: s.contact_radius,
        }
    }

    fn net_config_with(&self, robot: &RobotModel) -> NetConfig {
        let cam = self.cameras.first();
        let mut net = NetConfig::standard(
            self.cameras.len(),
            cam.map_or(0, |c| c.height),
            cam.map_or(0, |c| c.width),
            robot.limits_min(),
            robot.limits_max(),
            robot.tactile_dim(),
        );
        net.conv_channels = self.network.conv_channels;
        net
    }

    /// Scene, network shapes and sensor mask for this experiment.
    pub fn setup(&self) -> Setup {
        let robot = RobotModel::by_name(&self.robot).expect("validated at parse time");
        Setup {
            net: self.net_config_with(&robot),
            env: Arc::new(self.env_config_with(robot)),
            sensors: SensorMask {
                proprio: self.network.proprio,
                tactile: self.network.tactile,
            },
        }
    }
}
