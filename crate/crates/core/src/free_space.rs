//! Free-space Gaussian bases from sensor rays and their refinement into
//! local free Gaussians.
//!
//! Two generators exist. The baseline walks the pixels of every scanline
//! segment and casts one ray per `stride` pixels. The direct generator never
//! looks at segments: it samples a handful of representative rays from each
//! occupied Gaussian, so its cost scales with the Gaussian count instead of
//! the segment count.

use crate::camera::{unproject, CameraIntrinsics};
use crate::error::{Error, Result};
use crate::ingest::DepthFrame;
use crate::rtree::RTree;
use crate::segmentation::Segment;
use crate::types::{bbox_of, hellinger_exceeds, hellinger_sq, moment_merge, Gaussian3, Kind, SymMat3, Vec3, COV_EPS};

/// Shortest segment accepted by [`uniform_line_gaussian`] (m).
pub const MIN_SEGMENT_LENGTH: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: Vec3,
    pub endpoint: Vec3,
    pub weight: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FreeBasis {
    pub gaussian: Gaussian3,
    pub source_ray_count: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FgbgMode {
    /// Rays from the pixels of every line segment.
    Baseline,
    /// Representative rays sampled from each occupied Gaussian.
    #[default]
    Direct,
}

impl std::str::FromStr for FgbgMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline" => Ok(FgbgMode::Baseline),
            "direct" => Ok(FgbgMode::Direct),
            _ => Err(Error::Config(format!("unknown fgbg mode {s:?} (baseline|direct)"))),
        }
    }
}

impl std::fmt::Display for FgbgMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            FgbgMode::Baseline => "baseline",
            FgbgMode::Direct => "direct",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FgbgParams {
    pub mode: FgbgMode,
    /// Baseline only: one ray per `stride` segment pixels.
    pub stride: usize,
    pub k_intervals: usize,
    /// Free span stops this far short of the endpoint (m).
    pub margin: f64,
    /// Direct only: rays per occupied Gaussian (1, 3 or 5).
    pub r_count: usize,
}

impl Default for FgbgParams {
    fn default() -> Self {
        FgbgParams { mode: FgbgMode::Direct, stride: 4, k_intervals: 4, margin: 0.2, r_count: 5 }
    }
}

impl FgbgParams {
    pub fn validate(&self) -> Result<()> {
        if self.stride == 0 || self.k_intervals == 0 {
            return Err(Error::Config("stride and k_intervals must be at least 1".into()));
        }
        if !(self.margin >= 0.0) {
            return Err(Error::Config("margin must be nonnegative".into()));
        }
        check_r_count(self.r_count)
    }
}

fn check_r_count(r: usize) -> Result<()> {
    if matches!(r, 1 | 3 | 5) {
        Ok(())
    } else {
        Err(Error::Config(format!("r_count must be 1, 3 or 5 (got {r})")))
    }
}

/// Work done by free-basis generation; `rays` is the energy proxy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct FgbgCounters {
    pub rays: u64,
    pub bases: u64,
}

/// Moments of the uniform distribution on segment `[a, b]`, as a free Gaussian.
pub fn uniform_line_gaussian(a: &Vec3, b: &Vec3, w: f64) -> Result<Gaussian3> {
    let d = b - a;
    let len = d.norm();
    if !(len > MIN_SEGMENT_LENGTH) {
        return Err(Error::DegenerateSegment);
    }
    let dir = d / len;
    let cov = SymMat3::outer(&dir).scale(len * len / 12.0).add_diag(COV_EPS);
    Ok(Gaussian3::new(Kind::Free, w, (a + b) * 0.5, cov))
}

/// Splits each ray's free span `[origin, endpoint - margin·dir]` into
/// `k_intervals` equal pieces, one basis per piece.
pub fn bases_from_rays(rays: &[Ray], k_intervals: usize, margin: f64) -> Vec<FreeBasis> {
    let mut out = Vec::with_capacity(rays.len() * k_intervals);
    for ray in rays {
        let d = ray.endpoint - ray.origin;
        let len = d.norm();
        if !(len > 0.0) {
            continue;
        }
        let free_len = len - margin;
        if !(free_len / k_intervals as f64 > MIN_SEGMENT_LENGTH) {
            continue;
        }
        let dir = d / len;
        let piece = free_len / k_intervals as f64;
        let w = ray.weight / k_intervals as f64;
        for i in 0..k_intervals {
            let a = ray.origin + dir * (piece * i as f64);
            let b = ray.origin + dir * (piece * (i + 1) as f64);
            if let Ok(g) = uniform_line_gaussian(&a, &b, w) {
                out.push(FreeBasis { gaussian: g, source_ray_count: 1 });
            }
        }
    }
    out
}

/// Baseline generator: one ray per `stride` member pixels of every segment,
/// each carrying weight `stride`.
pub fn bases_from_segments(
    segments: &[Segment],
    frame: &DepthFrame,
    intr: &CameraIntrinsics,
    params: &FgbgParams,
    counters: &mut FgbgCounters,
) -> Result<Vec<FreeBasis>> {
    let pose = frame.pose.ok_or(Error::MissingPose)?;
    let origin = pose.origin();
    let mut rays = Vec::new();
    for seg in segments {
        for u in seg.columns().step_by(params.stride) {
            let d = frame.depth(u, seg.row);
            let endpoint = unproject(intr, &pose, u as f64, seg.row as f64, d)?;
            rays.push(Ray { origin, endpoint, weight: params.stride as f64 });
        }
    }
    counters.rays += rays.len() as u64;
    let bases = bases_from_rays(&rays, params.k_intervals, params.margin);
    counters.bases += bases.len() as u64;
    Ok(bases)
}

/// Deterministic representative rays: to the mean, then to `mean ± √λ·v`
/// along the `(r_count - 1) / 2` principal axes with the largest variance.
/// Each ray carries `g.weight / r_count`.
pub fn sample_rays_from_gaussian(g: &Gaussian3, origin: &Vec3, r_count: usize) -> Result<Vec<Ray>> {
    check_r_count(r_count)?;
    if g.kind != Kind::Occupied {
        return Err(Error::Config("representative rays are sampled from occupied Gaussians".into()));
    }
    let w = g.weight / r_count as f64;
    let mut rays = vec![Ray { origin: *origin, endpoint: g.mean, weight: w }];
    let axes = (r_count - 1) / 2;
    if axes > 0 {
        let eig = g.cov.to_matrix().symmetric_eigen();
        let mut order: Vec<usize> = (0..3).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
        for &i in order.iter().take(axes) {
            let mut v: Vec3 = eig.eigenvectors.column(i).into_owned();
            let lead = (0..3).fold(0, |best, j| if v[j].abs() > v[best].abs() { j } else { best });
            if v[lead] < 0.0 {
                v = -v;
            }
            let offset = v * eig.eigenvalues[i].max(0.0).sqrt();
            rays.push(Ray { origin: *origin, endpoint: g.mean + offset, weight: w });
            rays.push(Ray { origin: *origin, endpoint: g.mean - offset, weight: w });
        }
    }
    Ok(rays)
}

/// Direct generator over a frame's occupied Gaussians.
pub fn bases_from_gaussians(
    occupied: &[Gaussian3],
    origin: &Vec3,
    params: &FgbgParams,
    counters: &mut FgbgCounters,
) -> Result<Vec<FreeBasis>> {
    let mut rays = Vec::with_capacity(occupied.len() * params.r_count);
    for g in occupied {
        rays.extend(sample_rays_from_gaussian(g, origin, params.r_count)?);
    }
    counters.rays += rays.len() as u64;
    let bases = bases_from_rays(&rays, params.k_intervals, params.margin);
    counters.bases += bases.len() as u64;
    Ok(bases)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RefineStats {
    pub hellinger_evals: u64,
    pub merges: u64,
}

/// Greedy single pass: each basis merges into the first earlier output whose
/// `k`σ box intersects its own and whose squared Hellinger distance is at
/// most `tau_h`; otherwise it starts a new output.
pub fn refine_bases(bases: &[FreeBasis], tau_h: f64, k: f64) -> (Vec<Gaussian3>, RefineStats) {
    let mut out: Vec<Gaussian3> = Vec::new();
    let mut index = RTree::default();
    let mut stats = RefineStats::default();
    for basis in bases {
        let b = basis.gaussian;
        let mut candidates = index.probe(&bbox_of(&b, k)).0;
        candidates.sort_unstable();
        let hit = candidates.into_iter().find(|&c| {
            stats.hellinger_evals += 1;
            !hellinger_exceeds(&out[c as usize], &b, tau_h) && hellinger_sq(&out[c as usize], &b) <= tau_h
        });
        match hit {
            Some(c) => {
                let merged = moment_merge(&out[c as usize], &b).expect("free bases share a kind and carry weight");
                out[c as usize] = merged;
                index.remove(c).expect("indexed");
                index.insert(c, bbox_of(&merged, k)).expect("fresh id");
                stats.merges += 1;
            }
            None => {
                index.insert(out.len() as u64, bbox_of(&b, k)).expect("fresh id");
                out.push(b);
            }
        }
    }
    for g in &mut out {
        g.id = 0;
    }
    (out, stats)
}


/// Default squared-Hellinger gate for basis refinement.
pub const DEFAULT_REFINE_TAU_H: f64 = 0.8;
