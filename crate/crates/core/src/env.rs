//! Instruction-conditioned episodes: tokenization, designed rewards,
//! observation assembly with three-frame stacking, and the step loop.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::render::{render_pose, CameraSpec, Image, Table};
use crate::sim::{
    apply_action, forward_kinematics, Color, ContactReport, JointState, RobotModel, SceneObject,
    SimError,
};

pub const MAX_TOKENS: usize = 8;
pub const STACK_DEPTH: usize = 3;

/// Closed vocabulary. Ids are the indices into this table.
pub const VOCAB: [&str; 10] = [
    "<pad>", "touch", "the", "blue", "red", "green", "cube", ".", "<unk>", "<bos>",
];
pub const PAD: usize = 0;
pub const UNK: usize = 8;
pub const BOS: usize = 9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("step called on a finished episode")]
    EpisodeDone,
    #[error("step called before reset")]
    NotReset,
}

/// Word-level tokenization: `<bos>`, then one id per word or period, padded
/// with `<pad>` to [`MAX_TOKENS`]. Unknown words map to `<unk>`; text past the
/// maximum length is cut.
pub fn tokenize(text: &str) -> Vec<usize> {
    let mut ids = vec![BOS];
    let spaced = text.to_lowercase().replace('.', " . ");
    for word in spaced.split_whitespace() {
        if ids.len() == MAX_TOKENS {
            break;
        }
        ids.push(VOCAB.iter().position(|v| *v == word).unwrap_or(UNK));
    }
    ids.resize(MAX_TOKENS, PAD);
    ids
}

/// Inverse of [`tokenize`] for in-vocabulary text, with a capitalised first word.
pub fn detokenize(ids: &[usize]) -> String {
    let mut out = String::new();
    for &id in ids {
        let word = match id {
            PAD | BOS => continue,
            _ => VOCAB.get(id).copied().unwrap_or("<unk>"),
        };
        if word == "." {
            out.push('.');
            continue;
        }
        if !out.is_empty() {
            out.push(' ');
        }
        if out.is_empty() {
            let mut cs = word.chars();
            if let Some(c) = cs.next() {
                out.extend(c.to_uppercase());
                out.push_str(cs.as_str());
            }
        } else {
            out.push_str(word);
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct Instruction {
    pub id: usize,
    pub text: String,
    pub tokens: Vec<usize>,
}

impl Instruction {
    pub fn new(id: usize, text: &str) -> Self {
        Self {
            id,
            text: text.to_string(),
            tokens: tokenize(text),
        }
    }

    /// Column-friendly name, e.g. `touch_the_blue_cube`.
    pub fn slug(&self) -> String {
        self.text
            .to_lowercase()
            .split(|c: char| !c.is_ascii_alphanumeric())
            .filter(|w| !w.is_empty())
            .collect::<Vec<_>>()
            .join("_")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardKind {
    /// `correct_gain` when any fingertip touches the target, else 0.
    TouchBinary,
    /// `correct_gain` per finger on the target plus `wrong_penalty` per
    /// finger–wrong-cube contact.
    PerFinger,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardSpec {
    pub kind: RewardKind,
    pub target: Color,
    pub correct_gain: f64,
    pub wrong_penalty: f64,
}

/// Unscaled per-step reward for one contact report.
pub fn compute_reward(spec: &RewardSpec, report: &ContactReport, objects: &[SceneObject]) -> f64 {
    let is_target = |o: usize| objects[o].color == spec.target;
    match spec.kind {
        RewardKind::TouchBinary => {
            let hit = report
                .touches
                .iter()
                .any(|row| row.iter().enumerate().any(|(o, t)| *t && is_target(o)));
            if hit {
                spec.correct_gain
            } else {
                0.0
            }
        }
        RewardKind::PerFinger => {
            let mut on_target = 0usize;
            let mut wrong_pairs = 0usize;
            for row in &report.touches {
                if row.iter().enumerate().any(|(o, t)| *t && is_target(o)) {
                    on_target += 1;
                }
                wrong_pairs += row
                    .iter()
                    .enumerate()
                    .filter(|(o, t)| **t && !is_target(*o))
                    .count();
            }
            on_target as f64 * spec.correct_gain + wrong_pairs as f64 * spec.wrong_penalty
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct InstructionSet {
    pub instructions: Vec<Instruction>,
    pub reward_specs: Vec<RewardSpec>,
}

impl InstructionSet {
    pub fn new(entries: Vec<(String, RewardSpec)>) -> Self {
        let (texts, reward_specs): (Vec<_>, Vec<_>) = entries.into_iter().unzip();
        Self {
            instructions: texts
                .iter()
                .enumerate()
                .map(|(i, t)| Instruction::new(i, t))
                .collect(),
            reward_specs,
        }
    }

    pub fn len(&self) -> usize {
        self.instructions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instructions.is_empty()
    }
}

/// Everything that determines an episode apart from the seed.
#[derive(Clone, Debug, PartialEq)]
pub struct EnvConfig {
    pub robot: RobotModel,
    pub objects: Vec<SceneObject>,
    pub table: Option<Table>,
    pub instructions: InstructionSet,
    pub cameras: Vec<CameraSpec>,
    pub trajectory_len: usize,
    pub contact_radius: f64,
}

impl EnvConfig {
    pub fn validate(&self) -> Result<(), EnvError> {
        let cfg = |m: String| Err(EnvError::Config(m));
        self.robot.validate()?;
        if self.instructions.is_empty() {
            return cfg("instruction set is empty".into());
        }
        if self.instructions.instructions.len() != self.instructions.reward_specs.len() {
            return cfg("instructions and reward specs differ in length".into());
        }
        for (ins, spec) in self
            .instructions
            .instructions
            .iter()
            .zip(&self.instructions.reward_specs)
        {
            if !self.objects.iter().any(|o| o.color == spec.target) {
                return cfg(format!(
                    "instruction `{}` targets {} but no such cube is in the scene",
                    ins.text, spec.target
                ));
            }
        }
        for (i, a) in self.objects.iter().enumerate() {
            if !(a.half_extent > 0.0) {
                return cfg(format!("object {} has non-positive half extent", a.id));
            }
            if let Some(b) = self.objects[i + 1..].iter().find(|b| a.overlaps(b)) {
                return cfg(format!("objects {} and {} interpenetrate", a.id, b.id));
            }
        }
        if self.cameras.is_empty() {
            return cfg("at least one camera is required".into());
        }
        for c in &self.cameras {
            c.validate().map_err(EnvError::Config)?;
        }
        if self.trajectory_len == 0 {
            return cfg("trajectory length must be positive".into());
        }
        if !(self.contact_radius > 0.0) {
            return cfg("contact radius must be positive".into());
        }
        Ok(())
    }

    /// Index of the cube the instruction asks for.
    pub fn target_object(&self, instruction: usize) -> usize {
        let color = self.instructions.reward_specs[instruction].target;
        self.objects
            .iter()
            .position(|o| o.color == color)
            .expect("validated: target present")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Observation {
    pub instruction: Instruction,
    /// One image per configured camera, in config order.
    pub images: Vec<Image>,
    pub proprio: Vec<f64>,
    pub tactile: Vec<bool>,
}

/// The three most recent observations, newest first.
#[derive(Clone, Debug, PartialEq)]
pub struct State {
    pub frames: [Arc<Observation>; STACK_DEPTH],
}

impl State {
    pub fn instruction(&self) -> &Instruction {
        &self.frames[0].instruction
    }

    fn pushed(&self, newest: Arc<Observation>) -> Self {
        Self {
            frames: [newest, self.frames[0].clone(), self.frames[1].clone()],
        }
    }
}

/// Per-step bookkeeping beyond the reward itself.
#[derive(Clone, Debug, PartialEq)]
pub struct StepInfo {
    pub raw_reward: f64,
    pub target_touched: bool,
    pub wrong_contact: bool,
    pub contacts: ContactReport,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepResult {
    pub state: State,
    /// Raw reward scaled by `1 / trajectory_len`.
    pub reward: f64,
    pub done: bool,
    pub info: StepInfo,
}

/// One environment instance over a shared scene description.
pub struct Env {
    config: Arc<EnvConfig>,
    joints: JointState,
    instruction: usize,
    step_idx: usize,
    state: Option<State>,
}

impl Env {
    pub fn new(config: Arc<EnvConfig>) -> Result<Self, EnvError> {
        config.validate()?;
        let joints = config.robot.midpoint();
        Ok(Self {
            config,
            joints,
            instruction: 0,
            step_idx: 0,
            state: None,
        })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn joints(&self) -> &JointState {
        &self.joints
    }

    pub fn step_index(&self) -> usize {
        self.step_idx
    }

    pub fn instruction_index(&self) -> usize {
        self.instruction
    }

    pub fn is_done(&self) -> bool {
        self.state.is_some() && self.step_idx >= self.config.trajectory_len
    }

    /// Home pose, an instruction drawn uniformly with `seed`, and the first
    /// frame replicated across the stack.
    pub fn reset(&mut self, seed: u64) -> Result<State, EnvError> {
        let instruction = ChaCha8Rng::seed_from_u64(seed).random_range(0..self.config.instructions.len());
        self.start(instruction)
    }

    /// Reset with a chosen instruction instead of a drawn one.
    pub fn reset_to(&mut self, instruction: usize) -> Result<State, EnvError> {
        if instruction >= self.config.instructions.len() {
            return Err(EnvError::Config(format!(
                "instruction {instruction} out of range for {} instructions",
                self.config.instructions.len()
            )));
        }
        self.start(instruction)
    }

    fn start(&mut self, instruction: usize) -> Result<State, EnvError> {
        self.instruction = instruction;
        self.joints = self.config.robot.midpoint();
        self.step_idx = 0;
        let (obs, _) = self.observe()?;
        let obs = Arc::new(obs);
        let state = State {
            frames: [obs.clone(), obs.clone(), obs],
        };
        self.state = Some(state.clone());
        Ok(state)
    }

    pub fn step(&mut self, action: &[f64]) -> Result<StepResult, EnvError> {
        let prev = self.state.as_ref().ok_or(EnvError::NotReset)?;
        if self.step_idx >= self.config.trajectory_len {
            return Err(EnvError::EpisodeDone);
        }
        let prev = prev.clone();
        self.joints = apply_action(&self.config.robot, &self.joints, action)?;
        let (obs, contacts) = self.observe()?;

        let spec = &self.config.instructions.reward_specs[self.instruction];
        let raw_reward = compute_reward(spec, &contacts, &self.config.objects);
        let target = self.config.target_object(self.instruction);
        let target_touched = contacts.fingers_on(target) > 0;
        let wrong_contact = contacts
            .touches
            .iter()
            .any(|row| row.iter().enumerate().any(|(o, t)| *t && o != target));

        self.step_idx += 1;
        let state = prev.pushed(Arc::new(obs));
        self.state = Some(state.clone());
        Ok(StepResult {
            state,
            reward: raw_reward / self.config.trajectory_len as f64,
            done: self.step_idx == self.config.trajectory_len,
            info: StepInfo {
                raw_reward,
                target_touched,
                wrong_contact,
                contacts,
            },
        })
    }

    fn observe(&self) -> Result<(Observation, ContactReport), EnvError> {
        let cfg = &self.config;
        let pose = forward_kinematics(&cfg.robot, &self.joints)?;
        let contacts = ContactReport::from_points(&pose.fingertips, &cfg.objects, cfg.contact_radius);
        let images = cfg
            .cameras
            .iter()
            .map(|cam| render_pose(Some((&cfg.robot, &pose)), &cfg.objects, cfg.table.as_ref(), cam))
            .collect();
        Ok((
            Observation {
                instruction: cfg.instructions.instructions[self.instruction].clone(),
                images,
                proprio: self.joints.angles.clone(),
                tactile: contacts.tactile_bits.clone(),
            },
            contacts,
        ))
    }
}
