//! Depth images, trajectories and synthetic ray-cast scenes.

use std::fs;
use std::path::{Path, PathBuf};

use crate::camera::{CameraIntrinsics, Pose};
use crate::error::{Error, PgmError, Result};
use crate::types::{Aabb, Vec3};

/// One depth image in meters, row-major, `0.0` marking invalid pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthFrame {
    pub width: usize,
    pub height: usize,
    pub depths: Vec<f64>,
    pub pose: Option<Pose>,
    pub frame_index: usize,
}

impl DepthFrame {
    pub fn new(width: usize, height: usize, depths: Vec<f64>) -> Result<Self> {
        if depths.len() != width * height {
            return Err(Error::Config(format!(
                "depth buffer has {} samples, expected {}x{}",
                depths.len(),
                width,
                height
            )));
        }
        if let Some(bad) = depths.iter().find(|d| !(**d >= 0.0) || !d.is_finite()) {
            return Err(Error::InvalidDepth(*bad));
        }
        Ok(DepthFrame { width, height, depths, pose: None, frame_index: 0 })
    }

    pub fn with_pose(mut self, pose: Pose) -> Self {
        self.pose = Some(pose);
        self
    }

    pub fn row(&self, v: usize) -> &[f64] {
        &self.depths[v * self.width..(v + 1) * self.width]
    }

    pub fn depth(&self, u: usize, v: usize) -> f64 {
        self.depths[v * self.width + u]
    }

    pub fn valid_count(&self) -> usize {
        self.depths.iter().filter(|d| **d > 0.0).count()
    }
}

// ---------------------------------------------------------------------------
// PGM

struct HeaderReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl HeaderReader<'_> {
    fn err(&self, kind: PgmError) -> Error {
        Error::Pgm { offset: self.pos, kind }
    }

    fn skip_space_and_comments(&mut self) {
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b'#' => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                c if c.is_ascii_whitespace() => self.pos += 1,
                _ => break,
            }
        }
    }

    fn number(&mut self) -> Result<u32> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(self.err(PgmError::BadHeader));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or(Error::Pgm { offset: start, kind: PgmError::BadHeader })
    }
}

/// Parses a binary 16-bit PGM into (width, height, raw samples).
pub fn parse_pgm16(bytes: &[u8]) -> Result<(usize, usize, Vec<u16>)> {
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err(Error::Pgm { offset: 0, kind: PgmError::BadMagic });
    }
    let mut r = HeaderReader { bytes, pos: 2 };
    let width = r.number()? as usize;
    let height = r.number()? as usize;
    let maxval_at = r.pos;
    let maxval = r.number()?;
    if maxval != 65535 {
        return Err(Error::Pgm { offset: maxval_at, kind: PgmError::BadMaxval(maxval) });
    }
    // Exactly one whitespace byte separates the header from the raster.
    if r.pos >= bytes.len() || !bytes[r.pos].is_ascii_whitespace() {
        return Err(r.err(PgmError::BadHeader));
    }
    let start = r.pos + 1;
    let need = width * height * 2;
    let have = bytes.len() - start;
    if have < need {
        return Err(Error::Pgm { offset: bytes.len(), kind: PgmError::Truncated { need, have } });
    }
    let raw = bytes[start..start + need]
        .chunks_exact(2)
        .map(|c| u16::from_be_bytes([c[0], c[1]]))
        .collect();
    Ok((width, height, raw))
}

pub fn decode_depth_image(bytes: &[u8], intr: &CameraIntrinsics) -> Result<DepthFrame> {
    let (w, h, raw) = parse_pgm16(bytes)?;
    if w != intr.width || h != intr.height {
        return Err(Error::Pgm {
            offset: 2,
            kind: PgmError::DimensionMismatch { file_w: w, file_h: h, cam_w: intr.width, cam_h: intr.height },
        });
    }
    let depths = raw.iter().map(|&s| if s == 0 { 0.0 } else { s as f64 / intr.depth_scale }).collect();
    DepthFrame::new(w, h, depths)
}

pub fn load_depth_image(path: &Path, intr: &CameraIntrinsics) -> Result<DepthFrame> {
    let bytes = fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    decode_depth_image(&bytes, intr)
}

/// Encodes depths as raw `round(d * depth_scale)`, clamped to u16.
pub fn encode_depth_image(frame: &DepthFrame, depth_scale: f64) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n65535\n", frame.width, frame.height).into_bytes();
    out.reserve(frame.depths.len() * 2);
    for d in &frame.depths {
        let raw = (d * depth_scale).round().clamp(0.0, 65535.0) as u16;
        out.extend_from_slice(&raw.to_be_bytes());
    }
    out
}

pub fn write_depth_image(path: &Path, frame: &DepthFrame, depth_scale: f64) -> Result<()> {
    fs::write(path, encode_depth_image(frame, depth_scale))
        .map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

// ---------------------------------------------------------------------------
// Trajectories

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimedPose {
    pub timestamp: f64,
    pub pose: Pose,
}

/// `timestamp tx ty tz qx qy qz qw` per line, `#` comments skipped.
pub fn parse_trajectory(text: &str, origin: &Path) -> Result<Vec<TimedPose>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |msg: String| Error::Parse { path: origin.to_path_buf(), line: i + 1, msg };
        let fields: Vec<f64> = line
            .split_whitespace()
            .map(|f| f.parse::<f64>().map_err(|_| err(format!("non-numeric field {f:?}"))))
            .collect::<Result<_>>()?;
        if fields.len() != 8 {
            return Err(err(format!("expected 8 fields, found {}", fields.len())));
        }
        let (qx, qy, qz, qw) = (fields[4], fields[5], fields[6], fields[7]);
        let norm = (qx * qx + qy * qy + qz * qz + qw * qw).sqrt();
        if !((norm - 1.0).abs() <= 1e-3) {
            return Err(err(format!("quaternion norm {norm} cannot be renormalized")));
        }
        let q = [qw / norm, qx / norm, qy / norm, qz / norm];
        let pose = Pose::new(q, Vec3::new(fields[1], fields[2], fields[3])).map_err(|e| err(e.to_string()))?;
        out.push(TimedPose { timestamp: fields[0], pose });
    }
    out.sort_by(|a, b| a.timestamp.total_cmp(&b.timestamp));
    Ok(out)
}

pub fn load_trajectory(path: &Path) -> Result<Vec<TimedPose>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    parse_trajectory(&text, path)
}

/// Nearest pose within `window` seconds of `timestamp`. `traj` must be sorted.
pub fn associate_pose(traj: &[TimedPose], timestamp: f64, window: f64) -> Option<Pose> {
    let idx = traj.partition_point(|p| p.timestamp < timestamp);
    let candidates = [idx.checked_sub(1), Some(idx)];
    candidates
        .into_iter()
        .flatten()
        .filter_map(|i| traj.get(i))
        .map(|p| ((p.timestamp - timestamp).abs(), p.pose))
        .filter(|(dt, _)| *dt <= window)
        .min_by(|a, b| a.0.total_cmp(&b.0))
        .map(|(_, pose)| pose)
}

/// Depth list: `timestamp relative/path.pgm` per line, paths relative to the list file.
pub fn load_depth_list(path: &Path) -> Result<Vec<(f64, PathBuf)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |msg: String| Error::Parse { path: path.to_path_buf(), line: i + 1, msg };
        let mut parts = line.split_whitespace();
        let ts = parts
            .next()
            .and_then(|t| t.parse::<f64>().ok())
            .ok_or_else(|| err("bad timestamp".into()))?;
        let file = parts.next().ok_or_else(|| err("missing file name".into()))?;
        out.push((ts, base.join(file)));
    }
    Ok(out)
}

/// Posed frames of a recorded sequence, plus the count of frames skipped for lack of a pose.
#[derive(Debug)]
pub struct Sequence {
    pub frames: Vec<DepthFrame>,
    pub skipped: usize,
}

pub fn load_sequence(depth_list: &Path, trajectory: &Path, intr: &CameraIntrinsics, window: f64) -> Result<Sequence> {
    let traj = load_trajectory(trajectory)?;
    let list = load_depth_list(depth_list)?;
    let mut frames = Vec::new();
    let mut skipped = 0;
    for (i, (ts, file)) in list.iter().enumerate() {
        let Some(pose) = associate_pose(&traj, *ts, window) else {
            skipped += 1;
            continue;
        };
        let mut f = load_depth_image(file, intr)?.with_pose(pose);
        f.frame_index = i;
        frames.push(f);
    }
    Ok(Sequence { frames, skipped })
}

// ---------------------------------------------------------------------------
// Synthetic scenes

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Primitive {
    /// Axis-aligned box given by center and full edge lengths.
    Box { center: Vec3, size: Vec3 },
    /// Infinite plane `normal · x = offset`, normal unit length.
    Plane { normal: Vec3, offset: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneObject {
    pub id: usize,
    pub primitive: Primitive,
}

/// Synthetic camera path for a scene: yaw sweep at a fixed eye.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraPath {
    pub eye: Vec3,
    pub yaw_start: f64,
    pub yaw_end: f64,
}

impl CameraPath {
    pub fn poses(&self, n: usize) -> Vec<Pose> {
        (0..n)
            .map(|i| {
                let t = if n > 1 { i as f64 / (n - 1) as f64 } else { 0.0 };
                Pose::looking_horizontal(self.eye, self.yaw_start + t * (self.yaw_end - self.yaw_start))
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScene {
    pub objects: Vec<SceneObject>,
    pub bounds: Aabb,
    pub camera: Option<CameraPath>,
}

impl SyntheticScene {
    pub fn new(primitives: Vec<Primitive>) -> Self {
        let objects: Vec<_> = primitives
            .into_iter()
            .enumerate()
            .map(|(id, primitive)| SceneObject { id, primitive })
            .collect();
        let bounds = objects.iter().fold(Aabb::EMPTY, |b, o| match o.primitive {
            Primitive::Box { center, size } => b.union(&Aabb::new(center - size * 0.5, center + size * 0.5)),
            Primitive::Plane { .. } => b,
        });
        SyntheticScene { objects, bounds, camera: None }
    }

    pub fn with_camera(mut self, camera: CameraPath) -> Self {
        self.camera = Some(camera);
        self
    }

    /// Plane `z = depth`, seen by an identity-pose camera.
    pub fn frontal_plane(depth: f64) -> Self {
        SyntheticScene::new(vec![Primitive::Plane { normal: Vec3::z(), offset: depth }])
    }

    /// Closed room `[-hx, hx] × [-hy, hy] × [0, h]` built from six planes, with
    /// two boxes inside; the camera sweeps a full turn from the room center.
    pub fn box_room(hx: f64, hy: f64, h: f64) -> Self {
        let planes = [
            (Vec3::x(), hx),
            (-Vec3::x(), hx),
            (Vec3::y(), hy),
            (-Vec3::y(), hy),
            (Vec3::z(), h),
            (-Vec3::z(), 0.0),
        ];
        let mut prims: Vec<Primitive> =
            planes.iter().map(|(n, d)| Primitive::Plane { normal: *n, offset: *d }).collect();
        prims.push(Primitive::Box { center: Vec3::new(hx * 0.5, hy * 0.4, 0.4), size: Vec3::new(0.6, 0.8, 0.8) });
        prims.push(Primitive::Box { center: Vec3::new(-hx * 0.4, -hy * 0.5, 0.5), size: Vec3::new(0.5, 0.5, 1.0) });
        SyntheticScene::new(prims).with_camera(CameraPath {
            eye: Vec3::new(0.0, 0.0, h * 0.5),
            yaw_start: 0.0,
            yaw_end: 2.0 * std::f64::consts::PI * 0.95,
        })
    }

    /// Back wall with one box straight ahead, small yaw sweep. Every frame
    /// yields a few large planar clusters.
    pub fn standard() -> Self {
        SyntheticScene::new(vec![
            Primitive::Plane { normal: Vec3::x(), offset: 3.0 },
            Primitive::Box { center: Vec3::new(2.0, 0.0, 1.0), size: Vec3::new(0.5, 0.5, 0.8) },
        ])
        .with_camera(CameraPath { eye: Vec3::new(0.0, 0.0, 1.0), yaw_start: -0.1, yaw_end: 0.1 })
    }

    /// Desk-scale scene: back wall, floor and three boxes, viewed over a
    /// narrow yaw sweep.
    pub fn desk() -> Self {
        SyntheticScene::new(vec![
            Primitive::Plane { normal: Vec3::x(), offset: 3.0 },
            Primitive::Plane { normal: -Vec3::z(), offset: 0.0 },
            Primitive::Box { center: Vec3::new(2.0, 0.6, 0.4), size: Vec3::new(0.5, 0.5, 0.8) },
            Primitive::Box { center: Vec3::new(1.6, -0.7, 0.3), size: Vec3::new(0.4, 0.6, 0.6) },
            Primitive::Box { center: Vec3::new(2.4, -0.1, 0.9), size: Vec3::new(0.3, 0.3, 0.3) },
        ])
        .with_camera(CameraPath { eye: Vec3::new(0.0, 0.0, 1.0), yaw_start: -0.25, yaw_end: 0.25 })
    }
}

/// Parses `box cx cy cz sx sy sz`, `plane nx ny nz d` and the optional
/// `camera ex ey ez yaw_start yaw_end` line.
pub fn parse_scene(text: &str, origin: &Path) -> Result<SyntheticScene> {
    let mut prims = Vec::new();
    let mut camera = None;
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |msg: String| Error::Parse { path: origin.to_path_buf(), line: i + 1, msg };
        let mut parts = line.split_whitespace();
        let key = parts.next().unwrap_or_default();
        let nums: Vec<f64> = parts
            .map(|f| f.parse::<f64>().map_err(|_| err(format!("non-numeric field {f:?}"))))
            .collect::<Result<_>>()?;
        let want = |n: usize| {
            if nums.len() == n {
                Ok(())
            } else {
                Err(err(format!("{key} expects {n} numbers, found {}", nums.len())))
            }
        };
        match key {
            "box" => {
                want(6)?;
                let size = Vec3::new(nums[3], nums[4], nums[5]);
                if size.iter().any(|s| !(*s > 0.0)) {
                    return Err(err("box sizes must be positive".into()));
                }
                prims.push(Primitive::Box { center: Vec3::new(nums[0], nums[1], nums[2]), size });
            }
            "plane" => {
                want(4)?;
                let n = Vec3::new(nums[0], nums[1], nums[2]);
                let len = n.norm();
                if !(len > 0.0) {
                    return Err(err("plane normal must be nonzero".into()));
                }
                prims.push(Primitive::Plane { normal: n / len, offset: nums[3] / len });
            }
            "camera" => {
                want(5)?;
                camera = Some(CameraPath {
                    eye: Vec3::new(nums[0], nums[1], nums[2]),
                    yaw_start: nums[3],
                    yaw_end: nums[4],
                });
            }
            other => return Err(err(format!("unknown primitive {other:?}"))),
        }
    }
    if prims.is_empty() {
        return Err(Error::Parse { path: origin.to_path_buf(), line: 0, msg: "scene has no primitives".into() });
    }
    let mut scene = SyntheticScene::new(prims);
    scene.camera = camera;
    Ok(scene)
}

pub fn load_scene(path: &Path) -> Result<SyntheticScene> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    parse_scene(&text, path)
}

pub fn format_scene(scene: &SyntheticScene) -> String {
    let mut s = String::new();
    for o in &scene.objects {
        match o.primitive {
            Primitive::Box { center: c, size: z } => {
                s += &format!("box {} {} {} {} {} {}\n", c.x, c.y, c.z, z.x, z.y, z.z)
            }
            Primitive::Plane { normal: n, offset } => s += &format!("plane {} {} {} {}\n", n.x, n.y, n.z, offset),
        }
    }
    if let Some(c) = scene.camera {
        s += &format!("camera {} {} {} {} {}\n", c.eye.x, c.eye.y, c.eye.z, c.yaw_start, c.yaw_end);
    }
    s
}

/// Ray parameter of the nearest hit along `origin + t·dir`, `t > 0`.
fn intersect(p: &Primitive, origin: &Vec3, dir: &Vec3) -> Option<f64> {
    const MIN_T: f64 = 1e-9;
    match *p {
        Primitive::Plane { normal, offset } => {
            let denom = normal.dot(dir);
            if denom == 0.0 {
                return None;
            }
            let t = (offset - normal.dot(origin)) / denom;
            (t > MIN_T).then_some(t)
        }
        Primitive::Box { center, size } => {
            let lo = center - size * 0.5;
            let hi = center + size * 0.5;
            let (mut t0, mut t1) = (f64::NEG_INFINITY, f64::INFINITY);
            for i in 0..3 {
                if dir[i] == 0.0 {
                    if origin[i] < lo[i] || origin[i] > hi[i] {
                        return None;
                    }
                    continue;
                }
                let a = (lo[i] - origin[i]) / dir[i];
                let b = (hi[i] - origin[i]) / dir[i];
                t0 = t0.max(a.min(b));
                t1 = t1.min(a.max(b));
            }
            if t1 < t0 {
                return None;
            }
            if t0 > MIN_T {
                Some(t0)
            } else if t1 > MIN_T {
                Some(t1)
            } else {
                None
            }
        }
    }
}

/// Ray-casts every pixel; stores the camera-frame z of the nearest hit, or 0
/// when nothing lies within `max_range` (also a z-depth).
pub fn render_synthetic(scene: &SyntheticScene, pose: &Pose, intr: &CameraIntrinsics, max_range: f64) -> DepthFrame {
    let origin = pose.origin();
    let mut depths = Vec::with_capacity(intr.width * intr.height);
    for v in 0..intr.height {
        for u in 0..intr.width {
            // Camera-frame direction has z = 1, so the ray parameter is the z-depth.
            let dir = pose.rotate(&intr.ray_dir(u as f64, v as f64));
            let t = scene
                .objects
                .iter()
                .filter_map(|o| intersect(&o.primitive, &origin, &dir))
                .fold(f64::INFINITY, f64::min);
            depths.push(if t <= max_range { t } else { 0.0 });
        }
    }
    DepthFrame { width: intr.width, height: intr.height, depths, pose: Some(*pose), frame_index: 0 }
}

/// Renders `n` frames along the scene's camera path (identity pose when the
/// scene has none).
pub fn render_sequence(scene: &SyntheticScene, intr: &CameraIntrinsics, n: usize, max_range: f64) -> Vec<DepthFrame> {
    let poses = match scene.camera {
        Some(c) => c.poses(n),
        None => vec![Pose::identity(); n],
    };
    poses
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let mut f = render_synthetic(scene, p, intr, max_range);
            f.frame_index = i;
            f
        })
        .collect()
}
