//! Flat-shaded orthographic rasterizer for the two scene cameras.

use std::io::{self, Write};
use std::path::Path;

use nalgebra::Point3;
use serde::{Deserialize, Serialize};

use crate::sim::{forward_kinematics, JointState, Pose, RobotModel, SceneObject, SimError};

pub const BACKGROUND: [f64; 3] = [0.5, 0.5, 0.5];
pub const TABLE: [f64; 3] = [0.8, 0.8, 0.8];
pub const LINK: [f64; 3] = [0.1, 0.1, 0.1];
pub const FINGERTIP: [f64; 3] = [1.0, 1.0, 1.0];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CameraPose {
    /// Looks along +y; image axes are world x (right) and z (up).
    Front,
    /// Looks along −z; image axes are world x (right) and y (up).
    Top,
}

impl CameraPose {
    pub fn name(self) -> &'static str {
        match self {
            CameraPose::Front => "front",
            CameraPose::Top => "top",
        }
    }

    /// Image-plane coordinates and depth toward the camera (larger is nearer).
    fn project(self, p: &Point3<f64>) -> (f64, f64, f64) {
        match self {
            CameraPose::Front => (p.x, p.z, -p.y),
            CameraPose::Top => (p.x, p.y, p.z),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraSpec {
    pub pose: CameraPose,
    pub width: usize,
    pub height: usize,
    /// `[[u_min, v_min], [u_max, v_max]]` in meters.
    pub window: [[f64; 2]; 2],
}

impl CameraSpec {
    pub fn validate(&self) -> Result<(), String> {
        if self.width == 0 || self.height == 0 {
            return Err(format!("{} camera has an empty resolution", self.pose.name()));
        }
        let [[u0, v0], [u1, v1]] = self.window;
        if !(u1 > u0 && v1 > v0) {
            return Err(format!("{} camera window is degenerate", self.pose.name()));
        }
        Ok(())
    }

    /// Continuous pixel coordinates (column, row) of an image-plane point.
    fn to_pixel(&self, u: f64, v: f64) -> (f64, f64) {
        let [[u0, v0], [u1, v1]] = self.window;
        (
            (u - u0) / (u1 - u0) * self.width as f64,
            (v1 - v) / (v1 - v0) * self.height as f64,
        )
    }

    /// Pixel containing a world point, if it falls inside the image.
    pub fn pixel_of(&self, p: &Point3<f64>) -> Option<(usize, usize)> {
        let (u, v, _) = self.pose.project(p);
        let (c, r) = self.to_pixel(u, v);
        if c < 0.0 || r < 0.0 || c >= self.width as f64 || r >= self.height as f64 {
            return None;
        }
        Some((r as usize, c as usize))
    }
}

/// Tabletop rectangle whose top surface is at height `z`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub x: [f64; 2],
    pub y: [f64; 2],
    pub z: f64,
}

/// RGB image, row-major, channel-last, values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn filled(width: usize, height: usize, color: [f64; 3]) -> Self {
        let mut data = Vec::with_capacity(width * height * 3);
        for _ in 0..width * height {
            data.extend_from_slice(&color);
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn pixel(&self, row: usize, col: usize) -> [f64; 3] {
        let i = (row * self.width + col) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set(&mut self, row: usize, col: usize, color: [f64; 3]) {
        let i = (row * self.width + col) * 3;
        self.data[i..i + 3].copy_from_slice(&color);
    }

    pub fn pixels(&self) -> impl Iterator<Item = [f64; 3]> + '_ {
        self.data.chunks_exact(3).map(|c| [c[0], c[1], c[2]])
    }

    /// Binary PPM (P6), 8 bits per channel.
    pub fn write_ppm(&self, w: &mut impl Write) -> io::Result<()> {
        write!(w, "P6\n{} {}\n255\n", self.width, self.height)?;
        let bytes: Vec<u8> = self
            .data
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        w.write_all(&bytes)
    }

    pub fn save_ppm(&self, path: &Path) -> io::Result<()> {
        let mut buf = Vec::with_capacity(self.data.len() + 16);
        self.write_ppm(&mut buf)?;
        std::fs::write(path, buf)
    }

    /// Fills every pixel whose centre lies in the closed image-plane rectangle.
    fn fill_rect(&mut self, camera: &CameraSpec, lo: (f64, f64), hi: (f64, f64), color: [f64; 3]) {
        let (c0, r1) = camera.to_pixel(lo.0, lo.1);
        let (c1, r0) = camera.to_pixel(hi.0, hi.1);
        let first_col = (c0 - 0.5).ceil().max(0.0) as usize;
        let first_row = (r0 - 0.5).ceil().max(0.0) as usize;
        let last_col = (c1 - 0.5).floor();
        let last_row = (r1 - 0.5).floor();
        if last_col < 0.0 || last_row < 0.0 {
            return;
        }
        let last_col = (last_col as usize).min(self.width.saturating_sub(1));
        let last_row = (last_row as usize).min(self.height.saturating_sub(1));
        for r in first_row..=last_row {
            for c in first_col..=last_col {
                self.set(r, c, color);
            }
        }
    }

    /// Segment of half-width one pixel (two pixels wide).
    fn draw_segment(&mut self, a: (f64, f64), b: (f64, f64), color: [f64; 3]) {
        const HALF_WIDTH: f64 = 1.0;
        let lo_c = (a.0.min(b.0) - HALF_WIDTH).floor().max(0.0) as usize;
        let hi_c = (a.0.max(b.0) + HALF_WIDTH).ceil().max(0.0) as usize;
        let lo_r = (a.1.min(b.1) - HALF_WIDTH).floor().max(0.0) as usize;
        let hi_r = (a.1.max(b.1) + HALF_WIDTH).ceil().max(0.0) as usize;
        let (dx, dy) = (b.0 - a.0, b.1 - a.1);
        let len2 = dx * dx + dy * dy;
        for r in lo_r..hi_r.min(self.height) {
            for c in lo_c..hi_c.min(self.width) {
                let (px, py) = (c as f64 + 0.5, r as f64 + 0.5);
                let t = if len2 > 0.0 {
                    (((px - a.0) * dx + (py - a.1) * dy) / len2).clamp(0.0, 1.0)
                } else {
                    0.0
                };
                let (qx, qy) = (a.0 + t * dx - px, a.1 + t * dy - py);
                if qx * qx + qy * qy <= HALF_WIDTH * HALF_WIDTH {
                    self.set(r, c, color);
                }
            }
        }
    }
}

/// Renders the scene with the robot at `state`.
pub fn render_scene(
    model: &RobotModel,
    state: &JointState,
    objects: &[SceneObject],
    table: Option<&Table>,
    camera: &CameraSpec,
) -> Result<Image, SimError> {
    let pose = forward_kinematics(model, state)?;
    Ok(render_pose(Some((model, &pose)), objects, table, camera))
}

/// Renders from an already computed pose; `robot = None` draws the bare scene.
pub fn render_pose(
    robot: Option<(&RobotModel, &Pose)>,
    objects: &[SceneObject],
    table: Option<&Table>,
    camera: &CameraSpec,
) -> Image {
    let mut img = Image::filled(camera.width, camera.height, BACKGROUND);
    let v0 = camera.window[0][1];

    if let Some(t) = table {
        match camera.pose {
            CameraPose::Top => img.fill_rect(camera, (t.x[0], t.y[0]), (t.x[1], t.y[1]), TABLE),
            CameraPose::Front => img.fill_rect(camera, (t.x[0], v0.min(t.z)), (t.x[1], t.z), TABLE),
        }
    }

    let mut order: Vec<(f64, usize)> = objects
        .iter()
        .enumerate()
        .map(|(i, o)| (camera.pose.project(&Point3::from(o.center)).2, i))
        .collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    for (_, i) in order {
        let o = &objects[i];
        let (u, v, _) = camera.pose.project(&Point3::from(o.center));
        let h = o.half_extent;
        img.fill_rect(camera, (u - h, v - h), (u + h, v + h), o.color.rgb());
    }

    if let Some((model, pose)) = robot {
        for (a, b) in pose.link_segments(model) {
            let (ua, va, _) = camera.pose.project(&a);
            let (ub, vb, _) = camera.pose.project(&b);
            img.draw_segment(camera.to_pixel(ua, va), camera.to_pixel(ub, vb), LINK);
        }
        for tip in &pose.fingertips {
            if let Some((r, c)) = camera.pixel_of(tip) {
                img.set(r, c, FINGERTIP);
            }
        }
    }
    img
}
