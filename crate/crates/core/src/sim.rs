//! Kinematic simulation of jointed arms with point fingertips among
//! axis-aligned cubes. No dynamics: commanded poses are applied instantly.

use std::f64::consts::FRAC_PI_2;
use std::fmt;

use nalgebra::{Isometry3, Point3, Translation3, Unit, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("expected {expected} joint values, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("action[{index}] = {value} is not finite")]
    InvalidAction { index: usize, value: f64 },
    #[error("invalid robot model: {0}")]
    InvalidModel(String),
    #[error("unknown robot config `{0}`")]
    UnknownRobot(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct JointSpec {
    pub name: String,
    /// Joint whose frame this one is mounted on; `None` mounts on the world.
    pub parent: Option<usize>,
    pub rotation_axis: [f64; 3],
    /// Translation from the parent frame, in the parent frame.
    pub mount_offset: [f64; 3],
    /// Fixed rotation (axis × angle) applied after the mount offset.
    pub mount_rotation: [f64; 3],
    pub limit_min: f64,
    pub limit_max: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FingertipAnchor {
    pub joint: usize,
    pub offset: [f64; 3],
}

#[derive(Clone, Debug, PartialEq)]
pub struct RobotModel {
    pub name: String,
    pub joints: Vec<JointSpec>,
    /// Drawn length of each joint's link along its local x axis.
    pub link_lengths: Vec<f64>,
    /// One group per hand.
    pub fingertip_groups: Vec<Vec<FingertipAnchor>>,
}

impl RobotModel {
    pub fn dof(&self) -> usize {
        self.joints.len()
    }

    /// Number of fingertips, which is also the tactile vector length.
    pub fn tactile_dim(&self) -> usize {
        self.fingertip_groups.iter().map(Vec::len).sum()
    }

    pub fn fingertips(&self) -> impl Iterator<Item = &FingertipAnchor> {
        self.fingertip_groups.iter().flatten()
    }

    pub fn limits_min(&self) -> Vec<f64> {
        self.joints.iter().map(|j| j.limit_min).collect()
    }

    pub fn limits_max(&self) -> Vec<f64> {
        self.joints.iter().map(|j| j.limit_max).collect()
    }

    /// Joint-range midpoints; the home pose.
    pub fn midpoint(&self) -> JointState {
        JointState {
            angles: self
                .joints
                .iter()
                .map(|j| 0.5 * (j.limit_min + j.limit_max))
                .collect(),
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::InvalidModel(m));
        if self.link_lengths.len() != self.joints.len() {
            return bad(format!(
                "{} link lengths for {} joints",
                self.link_lengths.len(),
                self.joints.len()
            ));
        }
        for (i, j) in self.joints.iter().enumerate() {
            if !(j.limit_min < j.limit_max) {
                return bad(format!("joint `{}` has limit_min >= limit_max", j.name));
            }
            let norm = Vector3::from(j.rotation_axis).norm();
            if (norm - 1.0).abs() > 1e-9 {
                return bad(format!("joint `{}` axis has norm {norm}", j.name));
            }
            if let Some(p) = j.parent {
                if p >= i {
                    return bad(format!("joint `{}` has parent {p} not before it", j.name));
                }
            }
        }
        if self.fingertip_groups.len() != 2 {
            return bad(format!(
                "{} fingertip groups, expected 2",
                self.fingertip_groups.len()
            ));
        }
        if let Some(a) = self.fingertips().find(|a| a.joint >= self.joints.len()) {
            return bad(format!("fingertip anchored to missing joint {}", a.joint));
        }
        Ok(())
    }

    pub fn by_name(name: &str) -> Result<Self, SimError> {
        match name {
            "planar-2x3" => Ok(Self::planar_2x3()),
            "nao26" => Ok(Self::nao26()),
            other => Err(SimError::UnknownRobot(other.to_string())),
        }
    }

    /// Two planar three-joint arms at `(±0.15, 0.30)` pointing toward −y at
    /// home, three fingertips on each end effector.
    pub fn planar_2x3() -> Self {
        const LINKS: [f64; 3] = [0.30, 0.25, 0.10];
        const MOUNT_HEIGHT: f64 = 0.04;
        let mut joints = Vec::new();
        let mut link_lengths = Vec::new();
        let mut fingertip_groups = Vec::new();
        for (side, x) in [("left", -0.15), ("right", 0.15)] {
            let first = joints.len();
            for (k, len) in LINKS.iter().enumerate() {
                let (parent, mount_offset, mount_rotation) = if k == 0 {
                    (None, [x, 0.30, MOUNT_HEIGHT], [0.0, 0.0, -FRAC_PI_2])
                } else {
                    (Some(first + k - 1), [LINKS[k - 1], 0.0, 0.0], [0.0; 3])
                };
                joints.push(JointSpec {
                    name: format!("{side}_j{k}"),
                    parent,
                    rotation_axis: [0.0, 0.0, 1.0],
                    mount_offset,
                    mount_rotation,
                    limit_min: -FRAC_PI_2,
                    limit_max: FRAC_PI_2,
                });
                link_lengths.push(*len);
            }
            let last = first + LINKS.len() - 1;
            fingertip_groups.push(
                [-0.02, 0.0, 0.02]
                    .iter()
                    .map(|dy| FingertipAnchor {
                        joint: last,
                        offset: [LINKS[2], *dy, 0.0],
                    })
                    .collect(),
            );
        }
        Self {
            name: "planar-2x3".into(),
            joints,
            link_lengths,
            fingertip_groups,
        }
    }

    /// 26-joint, two-arm descriptor with placeholder geometry and ±π/2 limits.
    /// Shape-compatible with a humanoid upper body; not a real kinematic tree.
    pub fn nao26() -> Self {
        const PER_ARM: usize = 13;
        let axes = [[0.0, 0.0, 1.0], [0.0, 1.0, 0.0], [1.0, 0.0, 0.0]];
        let mut joints = Vec::new();
        let mut link_lengths = Vec::new();
        let mut fingertip_groups = Vec::new();
        for (side, x) in [("left", -0.10), ("right", 0.10)] {
            let first = joints.len();
            for k in 0..PER_ARM {
                let (parent, mount_offset) = if k == 0 {
                    (None, [x, 0.30, 0.20])
                } else {
                    (Some(first + k - 1), [0.05, 0.0, 0.0])
                };
                joints.push(JointSpec {
                    name: format!("{side}_j{k:02}"),
                    parent,
                    rotation_axis: axes[k % 3],
                    mount_offset,
                    mount_rotation: if k == 0 { [0.0, 0.0, -FRAC_PI_2] } else { [0.0; 3] },
                    limit_min: -FRAC_PI_2,
                    limit_max: FRAC_PI_2,
                });
                link_lengths.push(0.05);
            }
            let last = first + PER_ARM - 1;
            fingertip_groups.push(
                [-0.01, 0.0, 0.01]
                    .iter()
                    .map(|dy| FingertipAnchor {
                        joint: last,
                        offset: [0.05, *dy, 0.0],
                    })
                    .collect(),
            );
        }
        Self {
            name: "nao26".into(),
            joints,
            link_lengths,
            fingertip_groups,
        }
    }

    /// Single planar chain at the origin with one fingertip at the end of the
    /// last link. Handy for closed-form checks.
    pub fn planar_chain(lengths: &[f64]) -> Self {
        let joints = lengths
            .iter()
            .enumerate()
            .map(|(k, _)| JointSpec {
                name: format!("j{k}"),
                parent: k.checked_sub(1),
                rotation_axis: [0.0, 0.0, 1.0],
                mount_offset: if k == 0 { [0.0; 3] } else { [lengths[k - 1], 0.0, 0.0] },
                mount_rotation: [0.0; 3],
                limit_min: -std::f64::consts::PI,
                limit_max: std::f64::consts::PI,
            })
            .collect();
        let last = lengths.len() - 1;
        Self {
            name: format!("planar-chain-{}", lengths.len()),
            joints,
            link_lengths: lengths.to_vec(),
            fingertip_groups: vec![
                vec![FingertipAnchor {
                    joint: last,
                    offset: [lengths[last], 0.0, 0.0],
                }],
                vec![],
            ],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct JointState {
    pub angles: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Color {
    Blue,
    Red,
    Green,
}

impl Color {
    pub const ALL: [Color; 3] = [Color::Blue, Color::Red, Color::Green];

    pub fn rgb(self) -> [f64; 3] {
        match self {
            Color::Blue => [0.0, 0.0, 1.0],
            Color::Red => [1.0, 0.0, 0.0],
            Color::Green => [0.0, 1.0, 0.0],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Color::Blue => "blue",
            Color::Red => "red",
            Color::Green => "green",
        }
    }
}

impl fmt::Display for Color {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Axis-aligned cube.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneObject {
    pub id: usize,
    pub color: Color,
    pub center: [f64; 3],
    pub half_extent: f64,
}

impl SceneObject {
    /// Whether the two cubes share interior volume.
    pub fn overlaps(&self, other: &SceneObject) -> bool {
        (0..3).all(|i| {
            (self.center[i] - other.center[i]).abs() < self.half_extent + other.half_extent
        })
    }
}

/// Output of forward kinematics.
#[derive(Clone, Debug, PartialEq)]
pub struct Pose {
    /// World frame of each joint (after its rotation).
    pub frames: Vec<Isometry3<f64>>,
    /// World position of every fingertip, groups concatenated in order.
    pub fingertips: Vec<Point3<f64>>,
}

impl Pose {
    /// Start and end of every link in world coordinates.
    pub fn link_segments(&self, model: &RobotModel) -> Vec<(Point3<f64>, Point3<f64>)> {
        self.frames
            .iter()
            .zip(&model.link_lengths)
            .map(|(f, len)| (f * Point3::origin(), f * Point3::new(*len, 0.0, 0.0)))
            .collect()
    }
}

fn axis_angle(v: [f64; 3], angle: f64) -> UnitQuaternion<f64> {
    UnitQuaternion::from_axis_angle(&Unit::new_unchecked(Vector3::from(v)), angle)
}

pub fn forward_kinematics(model: &RobotModel, state: &JointState) -> Result<Pose, SimError> {
    if state.angles.len() != model.dof() {
        return Err(SimError::DimensionMismatch {
            expected: model.dof(),
            got: state.angles.len(),
        });
    }
    let mut frames: Vec<Isometry3<f64>> = Vec::with_capacity(model.dof());
    for (joint, angle) in model.joints.iter().zip(&state.angles) {
        let parent = joint.parent.map_or_else(Isometry3::identity, |p| frames[p]);
        let mount = Isometry3::from_parts(
            Translation3::from(Vector3::from(joint.mount_offset)),
            UnitQuaternion::from_scaled_axis(Vector3::from(joint.mount_rotation)),
        );
        let rot = Isometry3::from_parts(
            Translation3::identity(),
            axis_angle(joint.rotation_axis, *angle),
        );
        frames.push(parent * mount * rot);
    }
    let fingertips = model
        .fingertips()
        .map(|a| frames[a.joint] * Point3::from(a.offset))
        .collect();
    Ok(Pose { frames, fingertips })
}

/// Clamps an absolute pose command into the joint limits.
pub fn apply_action(
    model: &RobotModel,
    state: &JointState,
    action: &[f64],
) -> Result<JointState, SimError> {
    if action.len() != model.dof() || state.angles.len() != model.dof() {
        return Err(SimError::DimensionMismatch {
            expected: model.dof(),
            got: if action.len() != model.dof() {
                action.len()
            } else {
                state.angles.len()
            },
        });
    }
    if let Some((index, value)) = action.iter().enumerate().find(|(_, v)| !v.is_finite()) {
        return Err(SimError::InvalidAction {
            index,
            value: *value,
        });
    }
    Ok(JointState {
        angles: action
            .iter()
            .zip(&model.joints)
            .map(|(a, j)| a.clamp(j.limit_min, j.limit_max))
            .collect(),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct ContactReport {
    /// `touches[f][o]`: fingertip `f` is within contact range of object `o`.
    pub touches: Vec<Vec<bool>>,
    /// Fingertip `f` touches any object.
    pub tactile_bits: Vec<bool>,
}

impl ContactReport {
    pub fn from_points(points: &[Point3<f64>], objects: &[SceneObject], contact_radius: f64) -> Self {
        let touches: Vec<Vec<bool>> = points
            .iter()
            .map(|p| {
                objects
                    .iter()
                    .map(|o| {
                        let reach = o.half_extent + contact_radius;
                        (0..3).all(|i| (p[i] - o.center[i]).abs() <= reach)
                    })
                    .collect()
            })
            .collect();
        let tactile_bits = touches.iter().map(|row| row.iter().any(|t| *t)).collect();
        Self {
            touches,
            tactile_bits,
        }
    }

    /// Fingertips touching object `o`.
    pub fn fingers_on(&self, o: usize) -> usize {
        self.touches.iter().filter(|row| row[o]).count()
    }
}

/// Point-versus-expanded-box contact test; the boundary counts as contact.
pub fn detect_touches(
    model: &RobotModel,
    state: &JointState,
    objects: &[SceneObject],
    contact_radius: f64,
) -> Result<ContactReport, SimError> {
    let pose = forward_kinematics(model, state)?;
    Ok(ContactReport::from_points(&pose.fingertips, objects, contact_radius))
}
