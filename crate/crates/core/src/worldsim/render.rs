//! Column raycaster.
//!
//! One ray per image column is intersected with every wall; hits are drawn
//! far to near so low walls (the target cube) and tall decor compose
//! correctly. Depth is measured along the view axis, so flat walls stay flat.

use std::io::{self, Write};

use super::geometry::{ray_segment, Vec2};
use super::layout::{Floor, Layout, Wall};
use super::Pose;
use crate::error::{Error, Result};

pub const FRAME_HEIGHT: usize = 60;
pub const FRAME_WIDTH: usize = 80;
pub const FRAME_CHANNELS: usize = 3;
pub const FRAME_LEN: usize = FRAME_HEIGHT * FRAME_WIDTH * FRAME_CHANNELS;

/// A 60×80 RGB image, rows top to bottom, channels interleaved.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pixels: Vec<u8>,
}

impl Frame {
    pub fn from_bytes(pixels: Vec<u8>) -> Result<Self> {
        if pixels.len() != FRAME_LEN {
            return Err(Error::DimensionMismatch {
                what: "frame bytes",
                expected: FRAME_LEN,
                found: pixels.len(),
            });
        }
        Ok(Self { pixels })
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.pixels
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.pixels
    }

    pub fn pixel(&self, row: usize, col: usize) -> [u8; 3] {
        let i = (row * FRAME_WIDTH + col) * FRAME_CHANNELS;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    pub fn write_ppm<W: Write>(&self, w: W) -> io::Result<()> {
        write_ppm(w, FRAME_WIDTH, FRAME_HEIGHT, &self.pixels)
    }
}

/// Binary PPM (P6).
pub fn write_ppm<W: Write>(mut w: W, width: usize, height: usize, rgb: &[u8]) -> io::Result<()> {
    assert_eq!(rgb.len(), width * height * 3, "PPM buffer size");
    write!(w, "P6\n{width} {height}\n255\n")?;
    w.write_all(rgb)
}

/// Focal length in pixels for the configured horizontal field of view.
pub fn focal_length(layout: &Layout) -> f64 {
    let half = layout.config().fov_deg.to_radians() / 2.0;
    FRAME_WIDTH as f64 / 2.0 / half.tan()
}

/// Renders the view from `pose`; the target cube is drawn at `target` if
/// given. Fails if the pose is not in free space.
pub fn render(layout: &Layout, pose: Pose, target: Option<Vec2>) -> Result<Frame> {
    let p = pose.position();
    if !layout.is_free(p) {
        return Err(Error::OutsideFreeSpace { x: p.x, y: p.y });
    }
    let mut pixels = vec![0u8; FRAME_LEN];
    render_into(layout, pose, target, &mut pixels);
    Ok(Frame { pixels })
}

/// Renders without the free-space check into a `FRAME_LEN` buffer.
pub fn render_into(layout: &Layout, pose: Pose, target: Option<Vec2>, out: &mut [u8]) {
    assert_eq!(out.len(), FRAME_LEN, "render buffer size");
    let focal = focal_length(layout);
    let cam_h = layout.config().camera_height;
    let origin = pose.position();
    let fwd = Vec2::from_angle(pose.heading);
    let right = Vec2::new(fwd.y, -fwd.x);
    let sky = layout.sky();
    let cube = target.map(|t| layout.cube_walls(t));

    let half_h = FRAME_HEIGHT as f64 / 2.0;
    let mut hits: Vec<(f64, f64, &Wall)> = Vec::with_capacity(16);
    for col in 0..FRAME_WIDTH {
        let offset = (col as f64 + 0.5 - FRAME_WIDTH as f64 / 2.0) / focal;
        // Forward component is 1, so the ray parameter is the view depth.
        let dir = fwd + right * offset;

        for row in 0..FRAME_HEIGHT {
            let y = row as f64 + 0.5 - half_h;
            let color = if y < 0.0 {
                sky
            } else {
                match layout.floor() {
                    Floor::Plain(c) => *c,
                    Floor::Checker { size, dark, light } => {
                        let depth = cam_h * focal / y;
                        let q = origin + dir * depth;
                        let parity = ((q.x / size).floor() + (q.y / size).floor()) as i64;
                        if parity.rem_euclid(2) == 0 {
                            *light
                        } else {
                            *dark
                        }
                    }
                }
            };
            put(out, row, col, color);
        }

        hits.clear();
        let all = layout
            .walls()
            .iter()
            .chain(layout.decor())
            .chain(cube.iter().flatten());
        for wall in all {
            if let Some((t, s)) = ray_segment(origin, dir, wall.a, wall.b) {
                hits.push((t, s, wall));
            }
        }
        hits.sort_by(|a, b| b.0.total_cmp(&a.0));
        for &(t, s, wall) in &hits {
            let front = (wall.b - wall.a).cross(origin - wall.a) > 0.0;
            let tex = if front { &wall.front } else { &wall.back };
            let color = tex.sample(s * wall.length());
            // Screen rows measured downward from the horizon.
            let top = (cam_h - wall.height) * focal / t;
            let bottom = cam_h * focal / t;
            let r0 = (top + half_h - 0.5).ceil().max(0.0);
            let r1 = (bottom + half_h - 0.5)
                .floor()
                .min(FRAME_HEIGHT as f64 - 1.0);
            if r1 < r0 {
                continue;
            }
            for row in r0 as usize..=r1 as usize {
                put(out, row, col, color);
            }
        }
    }
}

fn put(out: &mut [u8], row: usize, col: usize, c: [u8; 3]) {
    let i = (row * FRAME_WIDTH + col) * FRAME_CHANNELS;
    out[i..i + 3].copy_from_slice(&c);
}
