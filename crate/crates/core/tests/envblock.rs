mod common;

use std::sync::Arc;

use langreach::env::{
    compute_reward, detokenize, tokenize, Env, EnvError, RewardKind, RewardSpec, BOS, MAX_TOKENS,
    PAD, UNK, VOCAB,
};
use langreach::sim::{forward_kinematics, Color, ContactReport, JointState, SceneObject};
use proptest::prelude::*;

fn env_for(name: &str) -> Env {
    Env::new(common::shipped(name).setup().env).unwrap()
}

/// A pose with at least one fingertip on the `color` cube and none on any
/// other, found by a coarse grid search over one arm.
fn pose_touching(env: &Env, color: Color) -> Vec<f64> {
    let cfg = env.config();
    let target = cfg.objects.iter().position(|o| o.color == color).unwrap();
    let model = &cfg.robot;
    let steps: Vec<f64> = (0..=24).map(|k| -1.5 + 3.0 * k as f64 / 24.0).collect();
    for &a in &steps {
        for &b in &steps {
            for &c in &steps {
                for arm in 0..2 {
                    let mut angles = model.midpoint().angles;
                    angles[arm * 3..arm * 3 + 3].copy_from_slice(&[a, b, c]);
                    let pose = forward_kinematics(model, &JointState { angles: angles.clone() }).unwrap();
                    let report = ContactReport::from_points(&pose.fingertips, &cfg.objects, cfg.contact_radius);
                    let only_target = report
                        .touches
                        .iter()
                        .all(|row| row.iter().enumerate().all(|(o, t)| !t || o == target));
                    if report.fingers_on(target) > 0 && only_target {
                        return angles;
                    }
                }
            }
        }
    }
    panic!("no pose touches the {color} cube");
}

#[test]
fn tokenize_examples() {
    assert_eq!(tokenize("Touch the blue cube."), vec![BOS, 1, 2, 3, 6, 7, PAD, PAD]);
    assert_eq!(tokenize(""), [vec![BOS], vec![PAD; MAX_TOKENS - 1]].concat());
    assert_eq!(tokenize("Grab the blue cube.")[1], UNK);
}

proptest! {
    #[test]
    fn in_vocabulary_text_round_trips(words in prop::collection::vec(1usize..=6, 0..6)) {
        let mut text = words.iter().map(|w| VOCAB[*w]).collect::<Vec<_>>().join(" ");
        text.push('.');
        let ids = tokenize(&text);
        prop_assert_eq!(ids.len(), MAX_TOKENS);
        prop_assert!(ids.iter().all(|id| *id < VOCAB.len()));
        prop_assert_eq!(tokenize(&detokenize(&ids)), ids);
    }
}

#[test]
fn experiment_one_always_draws_the_blue_instruction() {
    let mut env = env_for("exp1.cfg");
    for seed in 0..50 {
        let s = env.reset(seed).unwrap();
        assert_eq!(s.instruction().text, "Touch the blue cube.");
    }
}

#[test]
fn same_seed_gives_same_instruction_and_images() {
    let mut env = env_for("exp2.cfg");
    let a = env.reset(42).unwrap();
    let b = env.reset(42).unwrap();
    assert_eq!(a, b);
    assert!(Arc::ptr_eq(&a.frames[0], &a.frames[1]) && Arc::ptr_eq(&a.frames[1], &a.frames[2]));
}

#[test]
fn instructions_are_drawn_uniformly() {
    let mut env = env_for("exp2.cfg");
    let n = 30_000;
    let mut counts = [0usize; 3];
    for seed in 0..n {
        env.reset(seed).unwrap();
        counts[env.instruction_index()] += 1;
    }
    for c in counts {
        let f = c as f64 / n as f64;
        assert!((f - 1.0 / 3.0).abs() < 0.02, "{counts:?}");
    }
}

#[test]
fn holding_the_home_pose_gives_zero_reward_and_shifts_the_stack() {
    let mut env = env_for("exp1.cfg");
    let s0 = env.reset(0).unwrap();
    let home = env.joints().angles.clone();
    let r = env.step(&home).unwrap();
    assert_eq!(r.reward, 0.0);
    assert!(!r.done);
    assert_eq!(r.state.frames[1], s0.frames[0]);
    assert_eq!(r.state.frames[2], s0.frames[1]);
}

#[test]
fn touching_the_blue_cube_pays_one_over_t() {
    let mut env = env_for("exp1.cfg");
    env.reset(0).unwrap();
    let pose = pose_touching(&env, Color::Blue);
    let r = env.step(&pose).unwrap();
    assert!(r.info.target_touched);
    assert_eq!(r.reward, 1.0 / 32.0);
}

#[test]
fn episode_ends_at_step_32_and_rejects_further_steps() {
    let mut env = env_for("exp1.cfg");
    assert_eq!(env.step(&[0.0; 6]).unwrap_err(), EnvError::NotReset);
    env.reset(3).unwrap();
    let home = env.joints().angles.clone();
    for t in 1..=32 {
        let r = env.step(&home).unwrap();
        assert_eq!(r.done, t == 32);
    }
    assert_eq!(env.step(&home).unwrap_err(), EnvError::EpisodeDone);
}

fn per_finger(target: Color) -> RewardSpec {
    RewardSpec {
        kind: RewardKind::PerFinger,
        target,
        correct_gain: 1.0,
        wrong_penalty: -0.1,
    }
}

fn three_cubes() -> Vec<SceneObject> {
    Color::ALL
        .iter()
        .enumerate()
        .map(|(id, c)| SceneObject {
            id,
            color: *c,
            center: [0.3 * id as f64, 0.0, 0.04],
            half_extent: 0.04,
        })
        .collect()
}

fn report(touches: Vec<Vec<bool>>) -> ContactReport {
    let tactile_bits = touches.iter().map(|r| r.iter().any(|t| *t)).collect();
    ContactReport {
        touches,
        tactile_bits,
    }
}

#[test]
fn reward_examples() {
    let objects = three_cubes();
    let all_blue = report(vec![vec![true, false, false]; 6]);
    assert_eq!(compute_reward(&per_finger(Color::Blue), &all_blue, &objects), 6.0);

    let mixed = report(
        [vec![vec![true, false, false]; 4], vec![vec![false, true, false]; 2]].concat(),
    );
    let r = compute_reward(&per_finger(Color::Blue), &mixed, &objects);
    assert!((r - (4.0 * 1.0 + 2.0 * -0.1)).abs() < 1e-15);

    let binary = RewardSpec {
        kind: RewardKind::TouchBinary,
        target: Color::Blue,
        correct_gain: 1.0,
        wrong_penalty: 0.0,
    };
    let wrong_only = report(vec![vec![false, true, true]; 6]);
    assert_eq!(compute_reward(&binary, &wrong_only, &objects), 0.0);
}

fn run_episode(name: &str, seed: u64, actions: &[Vec<f64>]) -> (Vec<f64>, Vec<String>) {
    let mut env = env_for(name);
    let s0 = env.reset(seed).unwrap();
    let mut rewards = Vec::new();
    let mut texts = vec![s0.instruction().text.clone()];
    for t in 0..32 {
        let r = env.step(&actions[t % actions.len()]).unwrap();
        rewards.push(r.reward);
        texts.extend(r.state.frames.iter().map(|f| f.instruction.text.clone()));
    }
    (rewards, texts)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn binary_returns_stay_in_unit_interval(
        seed in any::<u64>(),
        actions in prop::collection::vec(prop::collection::vec(-1.6f64..1.6, 6), 1..8),
    ) {
        let (rewards, texts) = run_episode("exp2.cfg", seed, &actions);
        let ret: f64 = rewards.iter().sum();
        prop_assert!((0.0..=1.0 + 1e-12).contains(&ret));
        prop_assert!(texts.iter().all(|t| *t == texts[0]));
    }

    #[test]
    fn per_finger_returns_are_bounded_by_six(
        seed in any::<u64>(),
        actions in prop::collection::vec(prop::collection::vec(-1.6f64..1.6, 6), 1..8),
    ) {
        let (rewards, _) = run_episode("exp3.cfg", seed, &actions);
        let ret: f64 = rewards.iter().sum();
        // at worst every finger touches both wrong cubes on every step
        prop_assert!((-0.1 * 6.0 * 2.0 - 1e-12..=6.0 + 1e-12).contains(&ret), "{ret}");
    }

    #[test]
    fn seeded_episodes_are_bit_identical(
        seed in any::<u64>(),
        actions in prop::collection::vec(prop::collection::vec(-1.6f64..1.6, 6), 1..4),
    ) {
        let a = run_episode("exp3.cfg", seed, &actions);
        let b = run_episode("exp3.cfg", seed, &actions);
        let bits = |v: &Vec<f64>| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        prop_assert_eq!(bits(&a.0), bits(&b.0));
        prop_assert_eq!(a.1, b.1);
    }
}

#[test]
fn stack_shift_holds_along_an_episode() {
    let mut env = env_for("exp3.cfg");
    let mut prev = env.reset(5).unwrap();
    for t in 0..32 {
        let a: Vec<f64> = (0..6).map(|j| ((t * 7 + j) as f64).sin()).collect();
        let r = env.step(&a).unwrap();
        assert_eq!(r.state.frames[1], prev.frames[0]);
        assert_eq!(r.state.frames[2], prev.frames[1]);
        prev = r.state;
    }
}

#[test]
fn six_fingers_on_the_middle_cube_reach_the_maximum() {
    // In the triangle layout both arms can reach the centre cube; a pose with
    // all six fingertips on it pays 6/T per step and 6.0 over the episode.
    let cfg = common::shipped("exp3.cfg");
    let env_cfg = cfg.setup().env;
    let blue = env_cfg.objects.iter().find(|o| o.color == Color::Blue).unwrap();
    let report = ContactReport::from_points(
        &[nalgebra::Point3::from(blue.center); 6],
        &env_cfg.objects,
        env_cfg.contact_radius,
    );
    let raw = compute_reward(&env_cfg.instructions.reward_specs[0], &report, &env_cfg.objects);
    assert_eq!(raw, 6.0);
    let per_step = raw / env_cfg.trajectory_len as f64;
    let episode: f64 = (0..env_cfg.trajectory_len).map(|_| per_step).sum();
    assert_eq!(episode, 6.0);
}
