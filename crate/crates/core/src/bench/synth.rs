//! Ray-cast renderer for scenes built from axis-aligned planes and boxes,
//! used as a ground-truth oracle.

use std::f64::consts::TAU;

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::sequence::Sequence;
use crate::error::{Error, Result};
use crate::frame::{ColourImage, DepthImage, RgbdFrame};
use crate::geom::{CameraIntrinsics, RigidTransform};

/// Rays closer than this to their origin are ignored.
const MIN_HIT: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Surface {
    /// The infinite plane `p[axis] = offset`.
    Plane { axis: usize, offset: f64 },
    /// Axis-aligned box.
    Box { min: [f64; 3], max: [f64; 3] },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub surfaces: Vec<Surface>,
    /// Seeds the per-surface colour texture.
    pub texture_seed: u64,
}

/// Nearest intersection of a ray with a surface: distance along `dir` and
/// the axis of the face that was hit.
fn intersect(surface: &Surface, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<(f64, usize)> {
    match *surface {
        Surface::Plane { axis, offset } => {
            if dir[axis] == 0.0 {
                return None;
            }
            let t = (offset - origin[axis]) / dir[axis];
            (t > MIN_HIT).then_some((t, axis))
        }
        Surface::Box { min, max } => {
            let mut t_near = f64::NEG_INFINITY;
            let mut t_far = f64::INFINITY;
            let mut near_axis = 0;
            for a in 0..3 {
                if dir[a] == 0.0 {
                    if origin[a] < min[a] || origin[a] > max[a] {
                        return None;
                    }
                    continue;
                }
                let t1 = (min[a] - origin[a]) / dir[a];
                let t2 = (max[a] - origin[a]) / dir[a];
                let (lo, hi) = if t1 < t2 { (t1, t2) } else { (t2, t1) };
                if lo > t_near {
                    t_near = lo;
                    near_axis = a;
                }
                t_far = t_far.min(hi);
            }
            // Rays starting inside a box pass through it.
            (t_near <= t_far && t_near > MIN_HIT).then_some((t_near, near_axis))
        }
    }
}

/// Nearest hit over all surfaces: distance, surface index and face axis.
/// Ties go to the lower surface index.
pub fn cast_ray(scene: &SceneSpec, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<(f64, usize, usize)> {
    let mut best: Option<(f64, usize, usize)> = None;
    for (i, s) in scene.surfaces.iter().enumerate() {
        if let Some((t, axis)) = intersect(s, origin, dir) {
            if best.is_none_or(|(bt, _, _)| t < bt) {
                best = Some((t, i, axis));
            }
        }
    }
    best
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn lattice(seed: u64, x: i64, y: i64) -> f64 {
    let h = splitmix(seed ^ splitmix(x as u64 ^ splitmix(y as u64)));
    (h >> 11) as f64 / (1u64 << 53) as f64
}

/// Smoothly interpolated lattice noise in `[0, 1)`.
fn value_noise(seed: u64, u: f64, v: f64) -> f64 {
    let (x0, y0) = (u.floor(), v.floor());
    let (fx, fy) = (u - x0, v - y0);
    let (sx, sy) = (fx * fx * (3.0 - 2.0 * fx), fy * fy * (3.0 - 2.0 * fy));
    let (ix, iy) = (x0 as i64, y0 as i64);
    let a = lattice(seed, ix, iy);
    let b = lattice(seed, ix + 1, iy);
    let c = lattice(seed, ix, iy + 1);
    let d = lattice(seed, ix + 1, iy + 1);
    let top = a + (b - a) * sx;
    let bottom = c + (d - c) * sx;
    top + (bottom - top) * sy
}

/// Colour of the world point `p` lying on face `axis` of surface `index`:
/// a per-face base colour modulated by two octaves of value noise in the
/// face's own coordinates.
fn texture(seed: u64, index: usize, axis: usize, p: &Vector3<f64>) -> [u8; 3] {
    let (u, v) = match axis {
        0 => (p.y, p.z),
        1 => (p.x, p.z),
        _ => (p.x, p.y),
    };
    let face = splitmix(seed ^ ((index as u64) << 8) ^ axis as u64);
    [0u64, 1, 2].map(|c| {
        let s = splitmix(face ^ (c + 1));
        let base = 60.0 + 140.0 * lattice(s, 0, 0);
        let coarse = value_noise(s ^ 1, u / 0.45, v / 0.45) - 0.5;
        let fine = value_noise(s ^ 2, u / 0.12, v / 0.12) - 0.5;
        (base + 150.0 * coarse + 60.0 * fine).round().clamp(0.0, 255.0) as u8
    })
}

/// Renders one frame. Depth is the z coordinate of the hit in camera space;
/// rays that hit nothing get depth 0 (missing). With `noise_sigma > 0`,
/// Gaussian noise is added to every valid depth.
#[allow(clippy::too_many_arguments)]
pub fn render_frame(
    scene: &SceneSpec,
    pose: &RigidTransform,
    intrinsics: &CameraIntrinsics,
    width: u32,
    height: u32,
    noise_sigma: f64,
    noise_seed: u64,
    index: usize,
) -> RgbdFrame {
    let origin = *pose.translation();
    let rows: Vec<Vec<(f64, [u8; 3])>> = (0..height)
        .into_par_iter()
        .map(|y| {
            (0..width)
                .map(|x| {
                    // Camera ray with unit z, so the hit distance is the depth.
                    let ray = intrinsics.unproject(x as f64, y as f64, 1.0);
                    let dir = pose.rotation() * ray;
                    match cast_ray(scene, &origin, &dir) {
                        Some((t, i, axis)) => (t, texture(scene.texture_seed, i, axis, &(origin + dir * t))),
                        None => (0.0, [0; 3]),
                    }
                })
                .collect()
        })
        .collect();

    let mut depth = DepthImage::new(width, height);
    let mut colour = ColourImage::new(width, height);
    let mut rng = ChaCha8Rng::seed_from_u64(noise_seed);
    rng.set_stream(index as u64);
    let normal = (noise_sigma > 0.0).then(|| Normal::new(0.0, noise_sigma).expect("finite noise sigma"));
    for (y, row) in rows.into_iter().enumerate() {
        for (x, (d, c)) in row.into_iter().enumerate() {
            let d = match &normal {
                Some(n) if d > 0.0 => (d + n.sample(&mut rng)).max(1e-3),
                _ => d,
            };
            depth.set(x as u32, y as u32, d);
            colour.set(x as u32, y as u32, c);
        }
    }
    RgbdFrame::new(colour, depth, *intrinsics, Some(*pose), index)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RenderSettings {
    pub width: u32,
    pub height: u32,
    pub intrinsics: CameraIntrinsics,
    /// Standard deviation of additive depth noise, metres.
    pub noise_sigma: f64,
    pub noise_seed: u64,
}

impl Default for RenderSettings {
    /// Half-resolution Kinect geometry: 320×240 with the same field of view.
    fn default() -> Self {
        Self {
            width: 320,
            height: 240,
            intrinsics: CameraIntrinsics::seven_scenes().scaled(0.5),
            noise_sigma: 0.0,
            noise_seed: 0,
        }
    }
}

/// Renders `trajectory` (camera-to-world poses) into a posed sequence.
pub fn generate_synthetic_sequence(
    name: &str,
    scene: &SceneSpec,
    trajectory: &[RigidTransform],
    settings: &RenderSettings,
) -> Result<Sequence> {
    if scene.surfaces.is_empty() {
        return Err(Error::EmptyScene);
    }
    if trajectory.is_empty() {
        return Err(Error::DegenerateTrajectory("no poses".into()));
    }
    if settings.width == 0 || settings.height == 0 {
        return Err(Error::InvalidConfig("image size must be positive".into()));
    }
    let frames = trajectory
        .iter()
        .enumerate()
        .map(|(i, pose)| {
            render_frame(
                scene,
                pose,
                &settings.intrinsics,
                settings.width,
                settings.height,
                settings.noise_sigma,
                settings.noise_seed,
                i,
            )
        })
        .collect();
    Ok(Sequence::new(name, frames))
}

/// A closed room `[x0, x1] × [y0, y1] × [0, height]` (z up) plus boxes.
fn room(x: [f64; 2], y: [f64; 2], height: f64, boxes: &[([f64; 3], [f64; 3])], texture_seed: u64) -> SceneSpec {
    let mut surfaces = vec![
        Surface::Plane { axis: 0, offset: x[0] },
        Surface::Plane { axis: 0, offset: x[1] },
        Surface::Plane { axis: 1, offset: y[0] },
        Surface::Plane { axis: 1, offset: y[1] },
        Surface::Plane { axis: 2, offset: 0.0 },
        Surface::Plane { axis: 2, offset: height },
    ];
    surfaces.extend(boxes.iter().map(|&(min, max)| Surface::Box { min, max }));
    SceneSpec { surfaces, texture_seed }
}

/// Office-like room used for pre-training.
pub fn scene_a() -> SceneSpec {
    room(
        [-2.6, 2.6],
        [-2.2, 2.2],
        2.7,
        &[
            ([-1.0, 1.3, 0.0], [1.0, 2.2, 0.75]),
            ([1.9, -1.5, 0.0], [2.6, -0.3, 1.9]),
            ([-2.6, -2.0, 0.0], [-2.0, -0.6, 1.1]),
            ([-0.4, -2.2, 0.0], [0.9, -1.7, 1.4]),
            ([1.6, 1.4, 0.75], [2.2, 2.2, 1.05]),
            ([-2.6, 0.5, 1.3], [-2.3, 1.8, 1.7]),
        ],
        0x5eed_a,
    )
}

/// A differently furnished room used for adaptation and testing.
pub fn scene_b() -> SceneSpec {
    room(
        [-2.3, 2.4],
        [-2.5, 2.0],
        2.5,
        &[
            ([-2.3, -0.8, 0.0], [-1.7, 0.9, 0.9]),
            ([0.3, 1.5, 0.0], [2.0, 2.0, 1.0]),
            ([1.8, -2.5, 0.0], [2.4, -1.2, 2.0]),
            ([-1.2, -2.5, 0.0], [0.1, -2.0, 0.7]),
            ([-0.6, 1.6, 1.2], [0.2, 2.0, 1.6]),
            ([2.0, -0.2, 0.0], [2.4, 0.6, 1.3]),
            ([-2.3, 1.2, 1.4], [-2.0, 1.9, 1.9]),
        ],
        0x5eed_b,
    )
}

/// Parameters of a looping trajectory: the camera circles the room centre
/// looking outwards, with slow vertical and lateral wobble.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OrbitSettings {
    pub frames: usize,
    /// Camera-centre circle radius, metres.
    pub radius: f64,
    pub eye_height: f64,
    /// Heading change over the whole trajectory, radians.
    pub sweep: f64,
    /// Heading of the first frame, radians.
    pub start_heading: f64,
    /// Amplitude of the height wobble, metres.
    pub wobble: f64,
    /// Phase of the wobble, radians.
    pub wobble_phase: f64,
    /// How far below horizontal the camera looks, as a slope.
    pub pitch: f64,
}

impl Default for OrbitSettings {
    fn default() -> Self {
        Self {
            frames: 200,
            radius: 0.5,
            eye_height: 1.4,
            sweep: TAU,
            start_heading: 0.0,
            wobble: 0.08,
            wobble_phase: 0.0,
            pitch: 0.3,
        }
    }
}

pub fn orbit_trajectory(o: &OrbitSettings) -> Result<Vec<RigidTransform>> {
    if o.frames == 0 {
        return Err(Error::DegenerateTrajectory("zero frames".into()));
    }
    let down = Vector3::new(0.0, 0.0, -1.0);
    (0..o.frames)
        .map(|i| {
            let s = i as f64 / o.frames as f64;
            let heading = o.start_heading + o.sweep * s;
            let (sin, cos) = heading.sin_cos();
            let wobble = (3.0 * TAU * s + o.wobble_phase).sin();
            let eye = Vector3::new(
                o.radius * (heading + 0.6).cos(),
                o.radius * (heading + 0.6).sin(),
                o.eye_height + o.wobble * wobble,
            );
            let target = eye + Vector3::new(cos, sin, -o.pitch - 0.1 * wobble);
            RigidTransform::look_at(&eye, &target, &down)
                .map_err(|e| Error::DegenerateTrajectory(e.to_string()))
        })
        .collect()
}
