use langreach::render::{
    render_pose, render_scene, CameraPose, CameraSpec, Table, BACKGROUND, FINGERTIP, LINK, TABLE,
};
use langreach::sim::{Color, JointState, RobotModel, SceneObject};
use proptest::prelude::*;

fn camera(pose: CameraPose, width: usize, height: usize) -> CameraSpec {
    CameraSpec {
        pose,
        width,
        height,
        window: match pose {
            CameraPose::Front => [[-0.45, -0.05], [0.45, 0.15]],
            CameraPose::Top => [[-0.45, -0.45], [0.45, 0.35]],
        },
    }
}

fn table() -> Table {
    Table {
        x: [-0.6, 0.6],
        y: [-0.5, 0.45],
        z: 0.0,
    }
}

fn pose_strategy() -> impl Strategy<Value = CameraPose> {
    prop_oneof![Just(CameraPose::Front), Just(CameraPose::Top)]
}

fn is_allowed(px: [f64; 3]) -> bool {
    let palette = Color::ALL.map(Color::rgb);
    [BACKGROUND, TABLE, LINK, FINGERTIP].contains(&px) || palette.contains(&px)
}

proptest! {
    #[test]
    fn every_pixel_is_a_scene_colour(
        pose in pose_strategy(),
        angles in prop::collection::vec(-2.0f64..2.0, 6),
        xs in prop::array::uniform3(-0.4f64..0.4),
    ) {
        let model = RobotModel::planar_2x3();
        let objects: Vec<SceneObject> = Color::ALL
            .iter()
            .zip(xs)
            .enumerate()
            .map(|(id, (c, x))| SceneObject { id, color: *c, center: [x, -0.2 + 0.1 * id as f64, 0.04], half_extent: 0.04 })
            .collect();
        let img = render_scene(&model, &JointState { angles }, &objects, Some(&table()), &camera(pose, 16, 32)).unwrap();
        for px in img.pixels() {
            prop_assert!(is_allowed(px), "{px:?}");
        }
    }

    #[test]
    fn cube_outside_window_leaves_no_trace(
        pose in pose_strategy(),
        side in 0usize..4,
        gap in 0.05f64..1.0,
        along in -0.3f64..0.3,
    ) {
        let cam = camera(pose, 16, 32);
        let [[u0, v0], [u1, v1]] = cam.window;
        let h = 0.04;
        let (u, v) = match side {
            0 => (u0 - h - gap, along),
            1 => (u1 + h + gap, along),
            2 => (along, v0 - h - gap),
            _ => (along, v1 + h + gap),
        };
        let center = match pose {
            CameraPose::Front => [u, -0.2, v],
            CameraPose::Top => [u, v, 0.04],
        };
        let cube = SceneObject { id: 0, color: Color::Red, center, half_extent: h };
        let img = render_pose(None, &[cube], Some(&table()), &cam);
        prop_assert!(img.pixels().all(|px| px != Color::Red.rgb()));
    }

    #[test]
    fn output_shape_always_matches_camera(pose in pose_strategy(), w in 1usize..40, h in 1usize..40) {
        let model = RobotModel::planar_2x3();
        let img = render_scene(&model, &model.midpoint(), &[], Some(&table()), &camera(pose, w, h)).unwrap();
        prop_assert_eq!((img.width, img.height, img.data.len()), (w, h, w * h * 3));
        prop_assert!(img.data.iter().all(|v| v.is_finite() && (0.0..=1.0).contains(v)));
    }
}

#[test]
fn blue_cube_in_window_centre_fills_the_projected_pixel() {
    // Top camera over [-0.5, 0.5]²; the centre (0, 0) maps to column w/2, row h/2.
    let cam = CameraSpec {
        pose: CameraPose::Top,
        width: 32,
        height: 64,
        window: [[-0.5, -0.5], [0.5, 0.5]],
    };
    let cube = SceneObject {
        id: 0,
        color: Color::Blue,
        center: [0.0, 0.0, 0.04],
        half_extent: 0.04,
    };
    let img = render_pose(None, &[cube], None, &cam);
    let (col, row) = ((0.0 + 0.5) / 1.0 * 32.0, (0.5 - 0.0) / 1.0 * 64.0);
    assert_eq!(img.pixel(row as usize, col as usize), [0.0, 0.0, 1.0]);
}

#[test]
fn empty_scene_without_robot_is_background_and_table() {
    for pose in [CameraPose::Front, CameraPose::Top] {
        let img = render_pose(None, &[], Some(&table()), &camera(pose, 16, 32));
        assert!(img.pixels().all(|px| px == BACKGROUND || px == TABLE));
    }
}

#[test]
fn rendering_twice_is_byte_identical() {
    let model = RobotModel::planar_2x3();
    let state = JointState {
        angles: vec![0.3, -0.4, 0.2, -0.1, 0.5, 0.0],
    };
    let cube = SceneObject {
        id: 0,
        color: Color::Green,
        center: [0.1, -0.2, 0.04],
        half_extent: 0.04,
    };
    let cam = camera(CameraPose::Top, 16, 32);
    let a = render_scene(&model, &state, std::slice::from_ref(&cube), Some(&table()), &cam).unwrap();
    let b = render_scene(&model, &state, &[cube], Some(&table()), &cam).unwrap();
    let (mut pa, mut pb) = (Vec::new(), Vec::new());
    a.write_ppm(&mut pa).unwrap();
    b.write_ppm(&mut pb).unwrap();
    assert_eq!(pa, pb);
}
