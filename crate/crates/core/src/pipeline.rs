//! Per-frame map construction.

use std::time::{Duration, Instant};

use crate::camera::CameraIntrinsics;
use crate::error::{Error, Result};
use crate::free_space::{
    bases_from_gaussians, bases_from_segments, refine_bases, FgbgCounters, FgbgMode, FgbgParams, RefineStats,
    DEFAULT_REFINE_TAU_H,
};
use crate::ingest::DepthFrame;
use crate::map::{FusionReport, GaussianMap, DEFAULT_FUSE_TAU_H};
use crate::segmentation::{clusters_to_gaussians, segment_frame, SegParams};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PipelineParams {
    pub seg: SegParams,
    pub fgbg: FgbgParams,
    pub refine_tau_h: f64,
    pub fuse_tau_h: f64,
}

impl Default for PipelineParams {
    fn default() -> Self {
        PipelineParams {
            seg: SegParams::default(),
            fgbg: FgbgParams::default(),
            refine_tau_h: DEFAULT_REFINE_TAU_H,
            fuse_tau_h: DEFAULT_FUSE_TAU_H,
        }
    }
}

impl PipelineParams {
    pub fn validate(&self) -> Result<()> {
        self.seg.validate()?;
        self.fgbg.validate()?;
        for (name, t) in [("refine_tau_h", self.refine_tau_h), ("fuse_tau_h", self.fuse_tau_h)] {
            if !(0.0..=1.0).contains(&t) {
                return Err(Error::Config(format!("{name} must lie in [0, 1] (got {t})")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StageTimings {
    pub segmentation: Duration,
    pub fgbg: Duration,
    pub refine: Duration,
    pub fusion: Duration,
}

impl StageTimings {
    pub fn total(&self) -> Duration {
        self.segmentation + self.fgbg + self.refine + self.fusion
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FrameReport {
    pub frame_index: usize,
    pub segments: usize,
    pub clusters: usize,
    pub occupied_locals: usize,
    pub free_locals: usize,
    pub fgbg: FgbgCounters,
    pub refine: RefineStats,
    pub occupied: FusionReport,
    pub free: FusionReport,
    pub timings: StageTimings,
}

impl FrameReport {
    pub fn merged(&self) -> u64 {
        self.occupied.merged + self.free.merged
    }

    pub fn inserted(&self) -> u64 {
        self.occupied.inserted + self.free.inserted
    }
}

/// Segments one posed frame, generates occupied and free locals, and fuses
/// them into `map` (occupied first).
pub fn construct_frame(
    map: &mut GaussianMap,
    frame: &DepthFrame,
    intr: &CameraIntrinsics,
    params: &PipelineParams,
) -> Result<FrameReport> {
    let pose = frame.pose.ok_or(Error::MissingPose)?;
    let mut report = FrameReport { frame_index: frame.frame_index, ..Default::default() };

    let t = Instant::now();
    let seg = segment_frame(frame, intr, &params.seg)?;
    let occupied = clusters_to_gaussians(&seg.clusters, &params.seg);
    report.timings.segmentation = t.elapsed();
    report.segments = seg.segments.len();
    report.clusters = seg.clusters.len();
    report.occupied_locals = occupied.len();

    let t = Instant::now();
    let bases = match params.fgbg.mode {
        FgbgMode::Baseline => bases_from_segments(&seg.segments, frame, intr, &params.fgbg, &mut report.fgbg)?,
        FgbgMode::Direct => bases_from_gaussians(&occupied, &pose.origin(), &params.fgbg, &mut report.fgbg)?,
    };
    report.timings.fgbg = t.elapsed();

    let t = Instant::now();
    let (free, refine) = refine_bases(&bases, params.refine_tau_h, map.bbox_k());
    report.timings.refine = t.elapsed();
    report.refine = refine;
    report.free_locals = free.len();

    let t = Instant::now();
    report.occupied = map.fuse_local(&occupied, params.fuse_tau_h);
    report.free = map.fuse_local(&free, params.fuse_tau_h);
    report.timings.fusion = t.elapsed();
    Ok(report)
}

/// Runs [`construct_frame`] over `frames` in order.
pub fn build_map(
    map: &mut GaussianMap,
    frames: &[DepthFrame],
    intr: &CameraIntrinsics,
    params: &PipelineParams,
) -> Result<Vec<FrameReport>> {
    params.validate()?;
    frames.iter().map(|f| construct_frame(map, f, intr, params)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::Pose;
    use crate::ingest::{render_synthetic, SyntheticScene};
    use crate::types::Kind;

    fn plane_frame(depth: f64) -> (DepthFrame, CameraIntrinsics) {
        let intr = CameraIntrinsics::scaled_default(160, 120);
        let f = render_synthetic(&SyntheticScene::frontal_plane(depth), &Pose::identity(), &intr, 10.0);
        (f, intr)
    }

    #[test]
    fn invalid_frame_leaves_map_empty() {
        let intr = CameraIntrinsics::scaled_default(32, 24);
        let f = DepthFrame::new(32, 24, vec![0.0; 32 * 24]).unwrap().with_pose(Pose::identity());
        let mut m = GaussianMap::default();
        let r = construct_frame(&mut m, &f, &intr, &PipelineParams::default()).unwrap();
        assert!(m.is_empty());
        assert_eq!(r.occupied_locals + r.free_locals, 0);
    }

    #[test]
    fn missing_pose_is_an_error() {
        let intr = CameraIntrinsics::scaled_default(8, 8);
        let f = DepthFrame::new(8, 8, vec![1.0; 64]).unwrap();
        let mut m = GaussianMap::default();
        assert!(matches!(construct_frame(&mut m, &f, &intr, &PipelineParams::default()), Err(Error::MissingPose)));
    }

    #[test]
    fn frontal_plane_geometry() {
        let (f, intr) = plane_frame(2.0);
        for mode in [FgbgMode::Baseline, FgbgMode::Direct] {
            let mut m = GaussianMap::default();
            let mut p = PipelineParams::default();
            p.fgbg.mode = mode;
            construct_frame(&mut m, &f, &intr, &p).unwrap();
            m.audit().unwrap();
            let occ: Vec<_> = m.iter().filter(|g| g.kind == Kind::Occupied).collect();
            assert!(!occ.is_empty());
            assert!(occ.iter().any(|g| (g.mean.z - 2.0).abs() < 0.02));
            let free: Vec<_> = m.iter().filter(|g| g.kind == Kind::Free).collect();
            assert!(!free.is_empty(), "{mode}");
            assert!(free.iter().all(|g| g.mean.z < 2.0));
        }
    }

    #[test]
    fn revisiting_merges() {
        let (f, intr) = plane_frame(2.0);
        let mut m = GaussianMap::default();
        let p = PipelineParams::default();
        construct_frame(&mut m, &f, &intr, &p).unwrap();
        let n = m.len();
        let r = construct_frame(&mut m, &f, &intr, &p).unwrap();
        assert!(r.merged() >= 1);
        assert!(m.len() < 2 * n);
    }
}
