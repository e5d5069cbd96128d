//! Scanline segmentation (per-row line segments in depth-vs-column space)
//! and segment fusion across adjacent rows into clusters.

use crate::camera::{unproject, CameraIntrinsics};
use crate::error::{Error, Result};
use crate::ingest::DepthFrame;
use crate::types::{Gaussian3, Kind, SymMat3, Vec3, COV_EPS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SlopeMode {
    #[default]
    Exact,
    /// The slope fed back to the predictor is the one from four accepted
    /// pixels earlier.
    Delayed4,
}

impl std::str::FromStr for SlopeMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" => Ok(SlopeMode::Exact),
            "delayed4" => Ok(SlopeMode::Delayed4),
            _ => Err(Error::Config(format!("unknown slope mode {s:?} (exact|delayed4)"))),
        }
    }
}

impl std::fmt::Display for SlopeMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SlopeMode::Exact => "exact",
            SlopeMode::Delayed4 => "delayed4",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegParams {
    /// Absolute residual gate (m).
    pub tau_depth: f64,
    /// Relative residual gate; the effective gate is `max(tau_depth, tau_rel·d)`.
    pub tau_rel: f64,
    /// Slope compatibility for fusion (m per column).
    pub tau_slope: f64,
    /// Mean-depth gap allowed for fusion (m).
    pub tau_fuse: f64,
    pub n_min: usize,
    pub slope_mode: SlopeMode,
}

impl Default for SegParams {
    fn default() -> Self {
        SegParams { tau_depth: 0.05, tau_rel: 0.02, tau_slope: 0.1, tau_fuse: 0.1, n_min: 8, slope_mode: SlopeMode::Exact }
    }
}

impl SegParams {
    pub fn validate(&self) -> Result<()> {
        let gates = [self.tau_depth, self.tau_rel, self.tau_slope, self.tau_fuse];
        if gates.iter().any(|g| !(*g > 0.0)) {
            return Err(Error::Config("segmentation gates must be positive".into()));
        }
        if self.n_min < 3 {
            return Err(Error::Config("n_min must be at least 3".into()));
        }
        Ok(())
    }
}

/// Sufficient statistics of a point set: count, Σp, Σppᵀ.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PointStats {
    pub n: usize,
    pub sum: Vec3,
    pub sum_outer: SymMat3,
}

impl PointStats {
    pub fn add_point(&mut self, p: &Vec3) {
        self.n += 1;
        self.sum += p;
        self.sum_outer = self.sum_outer.add(&SymMat3::outer(p));
    }

    pub fn absorb(&mut self, o: &PointStats) {
        self.n += o.n;
        self.sum += o.sum;
        self.sum_outer = self.sum_outer.add(&o.sum_outer);
    }

    pub fn mean(&self) -> Vec3 {
        self.sum / self.n as f64
    }

    /// Occupied Gaussian with `cov = Σppᵀ/n - μμᵀ + εI`.
    pub fn to_gaussian(&self) -> Gaussian3 {
        let n = self.n as f64;
        let mean = self.sum / n;
        let cov = self.sum_outer.scale(1.0 / n).sub(&SymMat3::outer(&mean)).add_diag(COV_EPS);
        Gaussian3::new(Kind::Occupied, n, mean, cov)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub row: usize,
    /// Inclusive column range.
    pub col_start: usize,
    pub col_end: usize,
    pub stats: PointStats,
    pub depth_first: f64,
    pub depth_last: f64,
    pub depth_sum: f64,
    /// Least-squares depth-per-column slope over all member pixels.
    pub slope: f64,
}

impl Segment {
    pub fn n(&self) -> usize {
        self.stats.n
    }

    pub fn mean_depth(&self) -> f64 {
        self.depth_sum / self.stats.n as f64
    }

    pub fn columns(&self) -> std::ops::RangeInclusive<usize> {
        self.col_start..=self.col_end
    }
}

/// Incremental least-squares line through (column, depth) pairs, columns
/// taken relative to the first one.
#[derive(Debug, Clone, Default)]
struct LineFit {
    n: f64,
    u0: usize,
    su: f64,
    sd: f64,
    suu: f64,
    sud: f64,
}

impl LineFit {
    fn start(u: usize, d: f64) -> Self {
        let mut f = LineFit { u0: u, ..Default::default() };
        f.push(u, d);
        f
    }

    fn push(&mut self, u: usize, d: f64) {
        let x = (u - self.u0) as f64;
        self.n += 1.0;
        self.su += x;
        self.sd += d;
        self.suu += x * x;
        self.sud += x * d;
    }

    fn slope(&self) -> f64 {
        if self.n < 2.0 {
            return 0.0;
        }
        let den = self.n * self.suu - self.su * self.su;
        if den == 0.0 {
            0.0
        } else {
            (self.n * self.sud - self.su * self.sd) / den
        }
    }
}

struct OpenSegment {
    seg: Segment,
    fit: LineFit,
    /// `history[m - 1]` = exact slope after `m` accepted pixels.
    history: Vec<f64>,
}

impl OpenSegment {
    fn open(row: usize, u: usize, d: f64, p: Vec3) -> Self {
        let mut stats = PointStats::default();
        stats.add_point(&p);
        OpenSegment {
            seg: Segment {
                row,
                col_start: u,
                col_end: u,
                stats,
                depth_first: d,
                depth_last: d,
                depth_sum: d,
                slope: 0.0,
            },
            fit: LineFit::start(u, d),
            history: vec![0.0],
        }
    }

    fn slope_used(&self, mode: SlopeMode) -> f64 {
        let n = self.history.len();
        match mode {
            SlopeMode::Exact => self.history[n - 1],
            SlopeMode::Delayed4 => {
                if n == 1 {
                    0.0
                } else if n < 6 {
                    // Fewer than two points four pixels ago: two-point slope.
                    self.history[1]
                } else {
                    self.history[n - 5]
                }
            }
        }
    }

    fn accept(&mut self, u: usize, d: f64, p: Vec3) {
        self.seg.col_end = u;
        self.seg.stats.add_point(&p);
        self.seg.depth_last = d;
        self.seg.depth_sum += d;
        self.fit.push(u, d);
        self.history.push(self.fit.slope());
    }

    fn close(mut self) -> Segment {
        self.seg.slope = self.fit.slope();
        self.seg
    }
}

/// Single left-to-right pass over one row. Invalid pixels close the open
/// segment; a valid pixel joins it when its depth is within the gate of the
/// slope-extrapolated prediction.
pub fn scanline_segment(frame: &DepthFrame, intr: &CameraIntrinsics, row: usize, params: &SegParams) -> Result<Vec<Segment>> {
    let pose = frame.pose.ok_or(Error::MissingPose)?;
    if row >= frame.height {
        return Err(Error::Config(format!("row {row} out of range")));
    }
    let mut out = Vec::new();
    let mut open: Option<OpenSegment> = None;
    for (u, &d) in frame.row(row).iter().enumerate() {
        if d <= 0.0 {
            if let Some(s) = open.take() {
                out.push(s.close());
            }
            continue;
        }
        let p = unproject(intr, &pose, u as f64, row as f64, d)?;
        match open.as_mut() {
            None => open = Some(OpenSegment::open(row, u, d, p)),
            Some(s) => {
                let predicted = s.seg.depth_last + s.slope_used(params.slope_mode) * (u - s.seg.col_end) as f64;
                let gate = params.tau_depth.max(params.tau_rel * d);
                if (d - predicted).abs() <= gate {
                    s.accept(u, d, p);
                } else {
                    let done = open.replace(OpenSegment::open(row, u, d, p)).unwrap();
                    out.push(done.close());
                }
            }
        }
    }
    if let Some(s) = open {
        out.push(s.close());
    }
    Ok(out)
}

/// Rows and inclusive column spans of one cluster member.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SegmentSpan {
    pub row: usize,
    pub col_start: usize,
    pub col_end: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cluster {
    pub stats: PointStats,
    pub row_last: usize,
    pub col_interval_last: (usize, usize),
    pub mean_depth_last: f64,
    pub slope_last: f64,
    pub active: bool,
    pub members: Vec<SegmentSpan>,
    seq: u64,
}

impl Cluster {
    fn seed(seg: &Segment, seq: u64) -> Self {
        Cluster {
            stats: seg.stats,
            row_last: seg.row,
            col_interval_last: (seg.col_start, seg.col_end),
            mean_depth_last: seg.mean_depth(),
            slope_last: seg.slope,
            active: true,
            members: vec![SegmentSpan { row: seg.row, col_start: seg.col_start, col_end: seg.col_end }],
            seq,
        }
    }
}

/// Streaming segment fusion over the rows of one frame.
#[derive(Debug, Clone)]
pub struct SegmentFusion {
    params: SegParams,
    active: Vec<Cluster>,
    retired: Vec<Cluster>,
    next_seq: u64,
}

#[derive(Default)]
struct RowJoin {
    lo: usize,
    hi: usize,
    n: usize,
    depth_sum: f64,
    slope_sum: f64,
}

impl SegmentFusion {
    pub fn new(params: SegParams) -> Self {
        SegmentFusion { params, active: Vec::new(), retired: Vec::new(), next_seq: 0 }
    }

    pub fn active(&self) -> &[Cluster] {
        &self.active
    }

    pub fn retired(&self) -> &[Cluster] {
        &self.retired
    }

    /// Fuses the segments of row `row` (sorted by column). Clusters silent
    /// for a full row are retired first.
    pub fn push_row(&mut self, row: usize, segments: &[Segment]) {
        let (keep, gone): (Vec<_>, Vec<_>) = std::mem::take(&mut self.active)
            .into_iter()
            .partition(|c| c.row_last + 1 >= row);
        self.retire(gone);
        self.active = keep;
        // Candidates are matched against their state as of the previous row.
        let candidates = self.active.len();
        let mut joins: Vec<Option<RowJoin>> = (0..candidates).map(|_| None).collect();
        for seg in segments {
            debug_assert_eq!(seg.row, row);
            let target = (0..candidates).find(|&i| {
                let c = &self.active[i];
                let (lo, hi) = c.col_interval_last;
                c.row_last < row
                    && seg.col_start <= hi
                    && lo <= seg.col_end
                    && (seg.mean_depth() - c.mean_depth_last).abs() <= self.params.tau_fuse
                    && (seg.slope - c.slope_last).abs() <= self.params.tau_slope
            });
            match target {
                Some(i) => {
                    let c = &mut self.active[i];
                    c.stats.absorb(&seg.stats);
                    c.members.push(SegmentSpan { row, col_start: seg.col_start, col_end: seg.col_end });
                    let j = joins[i].get_or_insert_with(|| RowJoin { lo: seg.col_start, hi: seg.col_end, ..Default::default() });
                    j.lo = j.lo.min(seg.col_start);
                    j.hi = j.hi.max(seg.col_end);
                    j.n += seg.n();
                    j.depth_sum += seg.depth_sum;
                    j.slope_sum += seg.slope * seg.n() as f64;
                }
                None => {
                    let c = Cluster::seed(seg, self.next_seq);
                    self.next_seq += 1;
                    self.active.push(c);
                }
            }
        }
        for (c, j) in self.active.iter_mut().zip(joins) {
            if let Some(j) = j {
                c.row_last = row;
                c.col_interval_last = (j.lo, j.hi);
                c.mean_depth_last = j.depth_sum / j.n as f64;
                c.slope_last = j.slope_sum / j.n as f64;
            }
        }
        self.active.sort_by_key(|c| (c.col_interval_last.0, c.seq));
    }

    fn retire(&mut self, clusters: Vec<Cluster>) {
        self.retired.extend(clusters.into_iter().map(|mut c| {
            c.active = false;
            c
        }));
    }

    /// Retires everything still active and returns all retired clusters in
    /// retirement order.
    pub fn finish(mut self) -> Vec<Cluster> {
        let rest = std::mem::take(&mut self.active);
        self.retire(rest);
        self.retired
    }
}

/// Functional form of one fusion step: returns (still active, newly retired).
pub fn fuse_segments(prev_active: Vec<Cluster>, row: usize, row_segments: &[Segment], params: &SegParams) -> (Vec<Cluster>, Vec<Cluster>) {
    let next_seq = prev_active.iter().map(|c| c.seq + 1).max().unwrap_or(0);
    let mut f = SegmentFusion { params: *params, active: prev_active, retired: Vec::new(), next_seq };
    f.push_row(row, row_segments);
    (f.active, f.retired)
}

/// Drops clusters below `n_min` and converts the rest to occupied Gaussians.
pub fn clusters_to_gaussians(retired: &[Cluster], params: &SegParams) -> Vec<Gaussian3> {
    retired
        .iter()
        .filter(|c| c.stats.n >= params.n_min)
        .map(|c| c.stats.to_gaussian())
        .collect()
}

/// All segments and retired clusters of one frame.
#[derive(Debug, Clone)]
pub struct FrameSegmentation {
    pub segments: Vec<Segment>,
    pub clusters: Vec<Cluster>,
}

pub fn segment_frame(frame: &DepthFrame, intr: &CameraIntrinsics, params: &SegParams) -> Result<FrameSegmentation> {
    let mut fusion = SegmentFusion::new(*params);
    let mut segments = Vec::new();
    for row in 0..frame.height {
        let segs = scanline_segment(frame, intr, row, params)?;
        fusion.push_row(row, &segs);
        segments.extend(segs);
    }
    Ok(FrameSegmentation { segments, clusters: fusion.finish() })
}
