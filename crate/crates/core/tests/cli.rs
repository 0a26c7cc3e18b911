mod common;

use std::fs;
use std::path::{Path, PathBuf};

use langreach::cli::{self, EXIT_CHECKPOINT, EXIT_CONFIG, EXIT_OUTPUT};
use langreach::config::ExperimentConfig;
use langreach::encoders::evaluate;
use langreach::env::Env;
use langreach::gradcheck::{gradcheck, GradcheckOptions};
use langreach::numerics::graph::Fault;
use langreach::parallel::Executor;
use langreach::train::{CURVE_FILE, FINAL_CHECKPOINT, METRICS_FILE};

fn run(args: &[&str]) -> i32 {
    cli::run(std::iter::once("langreach").chain(args.iter().copied()))
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Writes the tiny config and trains it once; returns (config path, run dir).
fn trained_tiny(root: &Path) -> (PathBuf, PathBuf) {
    let cfg = root.join("tiny.cfg");
    fs::write(&cfg, common::TINY).unwrap();
    let out = root.join("run");
    assert_eq!(run(&["train", s(&cfg), "--out", s(&out)]), 0);
    (cfg, out)
}

#[test]
fn missing_config_exits_with_config_code() {
    assert_eq!(run(&["train", "/nonexistent/exp.cfg"]), EXIT_CONFIG);
}

#[test]
fn malformed_config_exits_with_config_code_and_names_the_line() {
    let dir = common::temp_dir();
    let path = dir.path().join("bad.cfg");
    let text = common::TINY.replace("epochs = 2", "epochs = \"two\"");
    fs::write(&path, &text).unwrap();
    assert_eq!(run(&["train", s(&path), "--out", s(dir.path())]), EXIT_CONFIG);
    let err = ExperimentConfig::load(&path).unwrap_err();
    let line = text.lines().position(|l| l.contains("\"two\"")).unwrap() + 1;
    assert_eq!(err.line, Some(line), "{err}");
    assert!(err.to_string().contains(&format!(":{line}")), "{err}");
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    assert_eq!(run(&["fly"]), EXIT_CONFIG);
}

#[test]
fn training_writes_metrics_checkpoint_and_curve() {
    let dir = common::temp_dir();
    let (_, out) = trained_tiny(dir.path());
    let metrics = fs::read_to_string(out.join(METRICS_FILE)).unwrap();
    let mut lines = metrics.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    for col in [
        "update_idx",
        "env_steps",
        "mean_return",
        "policy_loss",
        "value_loss",
        "clip_frac",
        "mean_ratio",
        "success_touch_the_blue_cube",
        "success_touch_the_red_cube",
    ] {
        assert!(header.contains(&col), "missing {col} in {header:?}");
    }
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 2);
    assert!(rows.iter().all(|r| r.split(',').count() == header.len()));
    assert!(out.join(FINAL_CHECKPOINT).is_file());
    let svg = fs::read_to_string(out.join(CURVE_FILE)).unwrap();
    assert!(svg.starts_with("<svg") || svg.starts_with("<?xml"));
}

#[test]
fn eval_writes_one_row_per_episode() {
    let dir = common::temp_dir();
    let (cfg, out) = trained_tiny(dir.path());
    let eval_out = dir.path().join("eval");
    let ckpt = out.join(FINAL_CHECKPOINT);
    assert_eq!(
        run(&["eval", s(&ckpt), s(&cfg), "--episodes", "7", "--out", s(&eval_out)]),
        0
    );
    let csv = fs::read_to_string(eval_out.join("eval.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 7);
}

#[test]
fn checkpoint_for_another_network_is_rejected() {
    let dir = common::temp_dir();
    let (_, out) = trained_tiny(dir.path());
    let ckpt = out.join(FINAL_CHECKPOINT);
    let exp1 = common::config_path("exp1.cfg");
    let code = run(&["eval", s(&ckpt), s(&exp1), "--out", s(&dir.path().join("e"))]);
    assert_eq!(code, EXIT_CHECKPOINT);
    let garbage = dir.path().join("garbage.ckpt");
    fs::write(&garbage, b"not a checkpoint").unwrap();
    let cfg = dir.path().join("tiny.cfg");
    assert_eq!(run(&["eval", s(&garbage), s(&cfg)]), EXIT_CHECKPOINT);
}

#[test]
fn unwritable_output_directory_exits_with_output_code() {
    let dir = common::temp_dir();
    let cfg = dir.path().join("tiny.cfg");
    fs::write(&cfg, common::TINY).unwrap();
    let blocker = dir.path().join("file");
    fs::write(&blocker, b"x").unwrap();
    // a directory cannot be created underneath a regular file
    let out = blocker.join("run");
    assert_eq!(run(&["train", s(&cfg), "--out", s(&out)]), EXIT_OUTPUT);
}

#[test]
fn render_rollout_writes_t_frames_per_camera() {
    let dir = common::temp_dir();
    let (cfg_path, out) = trained_tiny(dir.path());
    let frames = dir.path().join("frames");
    let ckpt = out.join(FINAL_CHECKPOINT);
    assert_eq!(
        run(&["render-rollout", s(&ckpt), s(&cfg_path), "--out", s(&frames)]),
        0
    );
    let cfg = common::tiny();
    let t = cfg.scene.trajectory_len;
    let written = fs::read_dir(&frames).unwrap().count();
    assert_eq!(written, t * cfg.cameras.len());

    // frame 0 is what reset shows
    let setup = cfg.setup();
    let params = cli::load_compatible(&ckpt, &setup).unwrap();
    let rendered = cli::render_rollout(&params, &setup, cfg.seed).unwrap();
    assert_eq!(rendered.len(), t);
    let reset = Env::new(setup.env.clone()).unwrap().reset(cfg.seed).unwrap();
    assert_eq!(rendered[0], reset.frames[0].images);
    let mut on_disk = Vec::new();
    fs::File::open(frames.join("frame_000_front.ppm"))
        .and_then(|mut f| std::io::Read::read_to_end(&mut f, &mut on_disk))
        .unwrap();
    let mut expected = Vec::new();
    rendered[0][0].write_ppm(&mut expected).unwrap();
    assert_eq!(on_disk, expected);
}

#[test]
fn gradcheck_catches_a_broken_backward_rule() {
    let setup = ExperimentConfig::parse(cli::DESK_CONFIG).unwrap().setup();
    let opts = GradcheckOptions::default();
    assert!(gradcheck(&setup, &opts, None).unwrap().passed());
    let report = gradcheck(&setup, &opts, Some(Fault::TanhBackward)).unwrap();
    assert!(!report.passed());
    assert!(report.worst().unwrap().max_rel_err > opts.tolerance);
}

#[test]
fn value_estimate_depends_on_which_cube_is_where() {
    // 4x8 frames are too coarse for a cube to cover a pixel centre.
    let text = common::TINY
        .replace("width = 4", "width = 16")
        .replace("height = 8", "height = 32");
    let dir = common::temp_dir();
    let cfg_path = dir.path().join("sharp.cfg");
    fs::write(&cfg_path, &text).unwrap();
    let out = dir.path().join("run");
    assert_eq!(run(&["train", s(&cfg_path), "--out", s(&out)]), 0);

    let cfg = ExperimentConfig::parse(&text).unwrap();
    let swapped = ExperimentConfig::parse(
        &text
            .replacen("color = \"green\"", "color = \"tmp\"", 1)
            .replacen("color = \"blue\"", "color = \"green\"", 1)
            .replacen("color = \"tmp\"", "color = \"blue\"", 1),
    )
    .unwrap();
    let params = cli::load_compatible(&out.join(FINAL_CHECKPOINT), &cfg.setup()).unwrap();
    let value = |c: &ExperimentConfig| {
        let setup = c.setup();
        let state = Env::new(setup.env.clone()).unwrap().reset(3).unwrap();
        let feats = setup.features(&[state], &Executor::sequential());
        evaluate(&params, &setup.net, &setup.input(&feats).unwrap()).unwrap()[0].value
    };
    let (a, b) = (value(&cfg), value(&swapped));
    assert!(a.is_finite() && b.is_finite());
    assert_ne!(a, b);
}
