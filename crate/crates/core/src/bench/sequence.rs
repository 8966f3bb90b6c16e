//! 7-Scenes style sequence directories.
//!
//! Each frame `N` is stored as `frame-NNNNNN.color.png` (8-bit RGB),
//! `frame-NNNNNN.depth.png` (16-bit millimetres, 0 or 65535 = missing) and
//! `frame-NNNNNN.pose.txt` (4×4 row-major camera-to-world matrix). An
//! optional `intrinsics.txt` holds `fx fy cx cy`.

use std::fs;
use std::path::{Path, PathBuf};

use image::{ImageBuffer, Luma, Rgb};
use nalgebra::Matrix4;

use crate::error::{Error, Result};
use crate::frame::{ColourImage, DepthImage, RgbdFrame};
use crate::geom::{CameraIntrinsics, RigidTransform};

/// Raw depth value marking a missing measurement.
pub const MISSING_DEPTH_MM: u16 = 65535;
pub const INTRINSICS_FILE: &str = "intrinsics.txt";

/// An ordered run of frames from one scene.
#[derive(Debug, Clone, PartialEq)]
pub struct Sequence {
    pub name: String,
    pub frames: Vec<RgbdFrame>,
}

impl Sequence {
    /// Panics if frame indices are not strictly increasing.
    pub fn new(name: impl Into<String>, frames: Vec<RgbdFrame>) -> Self {
        assert!(
            frames.windows(2).all(|w| w[0].index < w[1].index),
            "frame indices must increase"
        );
        Self { name: name.into(), frames }
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Ground-truth poses; fails on the first frame without one.
    pub fn poses(&self) -> Result<Vec<RigidTransform>> {
        self.frames
            .iter()
            .map(|f| {
                f.gt_pose.ok_or_else(|| Error::Frame {
                    index: f.index,
                    message: "frame has no ground-truth pose".into(),
                })
            })
            .collect()
    }

    /// Rounds every depth to whole millimetres, as storage would.
    pub fn quantise_depth(&mut self) {
        for f in &mut self.frames {
            for d in f.depth.as_mut_slice() {
                *d = depth_from_mm(depth_to_mm(*d));
            }
        }
    }
}

fn depth_to_mm(d: f64) -> u16 {
    if d > 0.0 {
        (d * 1000.0).round().clamp(1.0, (MISSING_DEPTH_MM - 1) as f64) as u16
    } else {
        0
    }
}

fn depth_from_mm(mm: u16) -> f64 {
    if mm == 0 || mm == MISSING_DEPTH_MM {
        0.0
    } else {
        mm as f64 / 1000.0
    }
}

fn frame_path(dir: &Path, index: usize, suffix: &str) -> PathBuf {
    dir.join(format!("frame-{index:06}.{suffix}"))
}

pub fn read_intrinsics(path: &Path) -> Result<CameraIntrinsics> {
    let text = fs::read_to_string(path)?;
    let v: Vec<f64> = text
        .split_whitespace()
        .map(|t| t.parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))?;
    match v[..] {
        [fx, fy, cx, cy] => CameraIntrinsics::new(fx, fy, cx, cy),
        _ => Err(Error::InvalidConfig(format!(
            "{}: expected four numbers `fx fy cx cy`",
            path.display()
        ))),
    }
}

pub fn write_intrinsics(path: &Path, k: &CameraIntrinsics) -> Result<()> {
    fs::write(path, format!("{} {} {} {}\n", k.fx, k.fy, k.cx, k.cy))?;
    Ok(())
}

fn parse_pose(text: &str) -> std::result::Result<RigidTransform, String> {
    let v: Vec<f64> = text
        .split_whitespace()
        .map(|t| t.parse::<f64>().map_err(|e| e.to_string()))
        .collect::<std::result::Result<_, _>>()?;
    if v.len() != 16 {
        return Err(format!("expected 16 numbers, found {}", v.len()));
    }
    let m = Matrix4::from_row_slice(&v);
    // Stored rotations carry a little rounding; project only when needed.
    RigidTransform::from_matrix4(&m)
        .or_else(|_| {
            RigidTransform::from_approximate(
                m.fixed_view::<3, 3>(0, 0).into_owned(),
                m.fixed_view::<3, 1>(0, 3).into_owned(),
            )
        })
        .map_err(|e| e.to_string())
}

fn format_pose(pose: &RigidTransform) -> String {
    let m = pose.to_matrix4();
    let mut out = String::new();
    for r in 0..4 {
        let row: Vec<String> = (0..4).map(|c| format!("{:?}", m[(r, c)])).collect();
        out.push_str(&row.join(" "));
        out.push('\n');
    }
    out
}

fn load_frame(dir: &Path, index: usize, intrinsics: &CameraIntrinsics) -> Result<RgbdFrame> {
    let err = |message: String| Error::Frame { index, message };
    let colour = image::open(frame_path(dir, index, "color.png"))
        .map_err(|e| err(format!("colour image: {e}")))?
        .to_rgb8();
    let depth = image::open(frame_path(dir, index, "depth.png"))
        .map_err(|e| err(format!("depth image: {e}")))?
        .to_luma16();
    if colour.dimensions() != depth.dimensions() {
        return Err(err("colour and depth sizes differ".into()));
    }
    let (w, h) = depth.dimensions();
    let mut c = ColourImage::new(w, h);
    let mut d = DepthImage::new(w, h);
    for (x, y, p) in colour.enumerate_pixels() {
        c.set(x, y, p.0);
    }
    for (x, y, p) in depth.enumerate_pixels() {
        d.set(x, y, depth_from_mm(p.0[0]));
    }
    let pose_path = frame_path(dir, index, "pose.txt");
    let gt_pose = match fs::read_to_string(&pose_path) {
        Ok(text) => Some(parse_pose(&text).map_err(|m| err(format!("pose: {m}")))?),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => None,
        Err(e) => return Err(err(format!("pose: {e}"))),
    };
    Ok(RgbdFrame::new(c, d, *intrinsics, gt_pose, index))
}

/// Loads every frame in `dir`, ordered by index. Intrinsics come from
/// `intrinsics` if given, else `intrinsics.txt` in the directory, else the
/// published 7-Scenes calibration.
pub fn load_sequence(dir: &Path, intrinsics: Option<CameraIntrinsics>) -> Result<Sequence> {
    let intrinsics = match intrinsics {
        Some(k) => k,
        None if dir.join(INTRINSICS_FILE).exists() => read_intrinsics(&dir.join(INTRINSICS_FILE))?,
        None => CameraIntrinsics::seven_scenes(),
    };
    let mut indices: Vec<usize> = fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .filter_map(|e| {
            let name = e.file_name().into_string().ok()?;
            name.strip_prefix("frame-")?.strip_suffix(".color.png")?.parse().ok()
        })
        .collect();
    indices.sort_unstable();
    if indices.is_empty() {
        return Err(Error::EmptySequence(dir.to_path_buf()));
    }
    let frames = indices
        .iter()
        .map(|&i| load_frame(dir, i, &intrinsics))
        .collect::<Result<Vec<_>>>()?;
    let name = dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(Sequence::new(name, frames))
}

/// Writes a sequence in the layout read by [`load_sequence`]. Depth is
/// stored in whole millimetres; intrinsics of the first frame go to
/// `intrinsics.txt`.
pub fn save_sequence(sequence: &Sequence, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    if let Some(first) = sequence.frames.first() {
        write_intrinsics(&dir.join(INTRINSICS_FILE), &first.intrinsics)?;
    }
    for f in &sequence.frames {
        let (w, h) = (f.width(), f.height());
        let colour: ImageBuffer<Rgb<u8>, Vec<u8>> =
            ImageBuffer::from_fn(w, h, |x, y| Rgb(f.colour.at(x, y)));
        colour.save(frame_path(dir, f.index, "color.png"))?;
        let depth: ImageBuffer<Luma<u16>, Vec<u16>> =
            ImageBuffer::from_fn(w, h, |x, y| Luma([depth_to_mm(f.depth.at(x, y))]));
        depth.save(frame_path(dir, f.index, "depth.png"))?;
        if let Some(pose) = &f.gt_pose {
            fs::write(frame_path(dir, f.index, "pose.txt"), format_pose(pose))?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::synth::{generate_synthetic_sequence, orbit_trajectory, scene_b, OrbitSettings, RenderSettings};

    #[test]
    fn empty_directory_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(load_sequence(dir.path(), None), Err(Error::EmptySequence(_))));
    }

    #[test]
    fn synthetic_sequence_round_trips_bit_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let traj = orbit_trajectory(&OrbitSettings { frames: 3, ..Default::default() }).unwrap();
        let settings = RenderSettings { width: 64, height: 48, intrinsics: CameraIntrinsics::new(58.5, 58.5, 32.0, 24.0).unwrap(), ..Default::default() };
        let mut seq = generate_synthetic_sequence("scene", &scene_b(), &traj, &settings).unwrap();
        seq.quantise_depth();
        let path = dir.path().join("scene");
        save_sequence(&seq, &path).unwrap();
        let back = load_sequence(&path, None).unwrap();
        assert_eq!(back, seq);
    }

    #[test]
    fn millimetre_depth_converts_to_metres() {
        let dir = tempfile::tempdir().unwrap();
        let colour: ImageBuffer<Rgb<u8>, Vec<u8>> = ImageBuffer::from_pixel(4, 2, Rgb([1, 2, 3]));
        colour.save(frame_path(dir.path(), 0, "color.png")).unwrap();
        let mut depth: ImageBuffer<Luma<u16>, Vec<u16>> = ImageBuffer::from_pixel(4, 2, Luma([2000]));
        depth.put_pixel(1, 0, Luma([MISSING_DEPTH_MM]));
        depth.put_pixel(2, 0, Luma([0]));
        depth.save(frame_path(dir.path(), 0, "depth.png")).unwrap();
        let seq = load_sequence(dir.path(), None).unwrap();
        let f = &seq.frames[0];
        assert_eq!(f.depth.at(0, 0), 2.0);
        assert_eq!(f.depth.at(1, 0), 0.0);
        assert_eq!(f.depth.at(2, 0), 0.0);
        assert_eq!(f.intrinsics, CameraIntrinsics::seven_scenes());
        assert!(f.gt_pose.is_none());
    }

    #[test]
    fn slightly_drifted_pose_is_reorthonormalised() {
        let text = "0.99999 0 0 1\n0 1 0 2\n0 0 1.00001 3\n0 0 0 1\n";
        let pose = parse_pose(text).unwrap();
        assert!((pose.rotation() - nalgebra::Matrix3::identity()).amax() < 1e-4);
        assert_eq!(pose.translation(), &nalgebra::Vector3::new(1.0, 2.0, 3.0));
        assert!(parse_pose("1 0 0").is_err());
    }

    #[test]
    fn corrupt_frame_reports_its_index() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(frame_path(dir.path(), 7, "color.png"), b"not a png").unwrap();
        match load_sequence(dir.path(), None) {
            Err(Error::Frame { index, .. }) => assert_eq!(index, 7),
            other => panic!("unexpected {other:?}"),
        }
    }
}
