#![allow(dead_code)]

use std::path::PathBuf;

use langreach::config::ExperimentConfig;

pub fn config_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs")
        .join(name)
}

pub fn shipped(name: &str) -> ExperimentConfig {
    ExperimentConfig::load(&config_path(name)).expect("shipped config parses")
}

/// Small scene for tests that need to run the whole loop quickly: tiny
/// images, short episodes, two epochs.
pub const TINY: &str = r#"
name = "tiny"
robot = "planar-2x3"
seed = 11
output_dir = "runs/tiny"

[scene]
trajectory_len = 4
contact_radius = 0.01
table_x = [-0.6, 0.6]
table_y = [-0.5, 0.45]
table_z = 0.0

[[scene.cubes]]
color = "green"
center = [0.06, -0.2, 0.04]
half_extent = 0.04

[[scene.cubes]]
color = "blue"
center = [0.16, -0.2, 0.04]
half_extent = 0.04

[[scene.cubes]]
color = "red"
center = [0.26, -0.2, 0.04]
half_extent = 0.04

[[instructions]]
text = "Touch the blue cube."
target = "blue"
reward = "touch_binary"
correct_gain = 1.0
wrong_penalty = 0.0

[[instructions]]
text = "Touch the red cube."
target = "red"
reward = "touch_binary"
correct_gain = 1.0
wrong_penalty = 0.0

[[cameras]]
pose = "front"
width = 4
height = 8
window = [[-0.45, -0.05], [0.45, 0.15]]

[[cameras]]
pose = "top"
width = 4
height = 8
window = [[-0.45, -0.45], [0.45, 0.35]]

[network]
conv_channels = [2, 2]
proprio = true
tactile = true

[trainer]
lr = 1e-4
epochs = 2
clip_eps = 0.2
gamma = 0.99
value_coef = 0.5
entropy_coef = 0.0
rollouts = 3
total_steps = 24
eval_every = 1
eval_episodes = 4
"#;

pub fn tiny() -> ExperimentConfig {
    ExperimentConfig::parse(TINY).expect("tiny config parses")
}

/// Closed-form tip of a planar chain: `x = Σ lᵢ cos(θ₁+…+θᵢ)`, `y = Σ lᵢ sin(…)`.
pub fn planar_tip(lengths: &[f64], angles: &[f64]) -> (f64, f64) {
    let mut phi = 0.0;
    let (mut x, mut y) = (0.0, 0.0);
    for (l, a) in lengths.iter().zip(angles) {
        phi += a;
        x += l * phi.cos();
        y += l * phi.sin();
    }
    (x, y)
}

pub fn temp_dir() -> tempfile::TempDir {
    tempfile::tempdir().expect("temp dir")
}
