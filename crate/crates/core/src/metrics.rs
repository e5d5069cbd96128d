//! Accuracy (ROC AUC), map size, and counter-based energy proxies, plus a
//! fully associative LRU cache simulator fed by R-tree node accesses.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::camera::{unproject, CameraIntrinsics};
use crate::error::{Error, Result};
use crate::ingest::DepthFrame;
use crate::map::GaussianMap;
use crate::pipeline::FrameReport;
use crate::query::{query_single, QueryStats};
use crate::rtree::NodeAccess;
use crate::types::{Kind, Vec3};

pub use crate::storage::map_size_bytes;

pub const DEFAULT_CACHE_BYTES: u64 = 45056;
pub const DEFAULT_LINE_BYTES: u64 = 64;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalSample {
    pub position: Vec3,
    pub label: Kind,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplingParams {
    /// Free samples per pixel ray.
    pub per_ray: usize,
    /// Free samples stop this far (in depth) short of the surface (m).
    pub surface_delta: f64,
    /// Use every `pixel_stride`-th pixel in both directions.
    pub pixel_stride: usize,
    pub seed: u64,
}

impl Default for SamplingParams {
    fn default() -> Self {
        SamplingParams { per_ray: 1, surface_delta: 0.2, pixel_stride: 1, seed: 0 }
    }
}

impl SamplingParams {
    pub fn validate(&self) -> Result<()> {
        if self.per_ray == 0 || self.pixel_stride == 0 {
            return Err(Error::Config("per_ray and pixel_stride must be at least 1".into()));
        }
        if !(self.surface_delta > 0.0) {
            return Err(Error::Config("surface_delta must be positive".into()));
        }
        Ok(())
    }
}

/// One occupied sample at each valid pixel's endpoint and `per_ray` free
/// samples at uniform depths in `[0, d - surface_delta]` along the same ray.
/// Pixels closer than `surface_delta` get no free samples.
pub fn generate_eval_samples(
    frames: &[DepthFrame],
    intr: &CameraIntrinsics,
    params: &SamplingParams,
) -> Result<Vec<EvalSample>> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut out = Vec::new();
    for frame in frames {
        let pose = frame.pose.ok_or(Error::MissingPose)?;
        for v in (0..frame.height).step_by(params.pixel_stride) {
            for u in (0..frame.width).step_by(params.pixel_stride) {
                let d = frame.depth(u, v);
                if !(d > 0.0) {
                    continue;
                }
                let (uf, vf) = (u as f64, v as f64);
                out.push(EvalSample { position: unproject(intr, &pose, uf, vf, d)?, label: Kind::Occupied });
                let reach = d - params.surface_delta;
                if reach <= 0.0 {
                    continue;
                }
                let origin = pose.origin();
                let dir = pose.rotate(&intr.ray_dir(uf, vf));
                for _ in 0..params.per_ray {
                    let t = rng.random_range(0.0..=reach);
                    out.push(EvalSample { position: origin + dir * t, label: Kind::Free });
                }
            }
        }
    }
    Ok(out)
}

/// Mann-Whitney AUC with midranks: the chance that a random occupied score
/// exceeds a random free one, ties counting one half.
pub fn auc_from_scores(occupied: &[f64], free: &[f64]) -> Result<f64> {
    if occupied.is_empty() || free.is_empty() {
        return Err(Error::SingleLabel);
    }
    let mut all: Vec<(f64, bool)> = occupied.iter().map(|&s| (s, true)).chain(free.iter().map(|&s| (s, false))).collect();
    if all.iter().any(|(s, _)| s.is_nan()) {
        return Err(Error::Config("AUC scores must not be NaN".into()));
    }
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j + 1 < all.len() && all[j + 1].0 == all[i].0 {
            j += 1;
        }
        // Ranks are 1-based; the tie group [i, j] shares their mean.
        let mid = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += mid * all[i..=j].iter().filter(|x| x.1).count() as f64;
        i = j + 1;
    }
    let (n1, n0) = (occupied.len() as f64, free.len() as f64);
    Ok((rank_sum - n1 * (n1 + 1.0) / 2.0) / (n1 * n0))
}

/// Occupancy probability of every sample via single queries, in sample order.
pub fn score_samples(map: &GaussianMap, samples: &[EvalSample], c: f64) -> (Vec<f64>, QueryStats) {
    let score = |s: &EvalSample| query_single(map, &s.position, c);
    #[cfg(feature = "parallel")]
    let scored: Vec<_> = {
        use rayon::prelude::*;
        samples.par_iter().map(score).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let scored: Vec<_> = samples.iter().map(score).collect();
    let mut stats = QueryStats::default();
    let mut out = Vec::with_capacity(scored.len());
    for (r, s) in scored {
        stats.merge(&s);
        out.push(r.probability);
    }
    (out, stats)
}

pub fn auc(map: &GaussianMap, samples: &[EvalSample], c: f64) -> Result<f64> {
    let (scores, _) = score_samples(map, samples, c);
    let (mut occ, mut free) = (Vec::new(), Vec::new());
    for (s, x) in samples.iter().zip(scores) {
        match s.label {
            Kind::Occupied => occ.push(x),
            Kind::Free => free.push(x),
        }
    }
    auc_from_scores(&occ, &free)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct AccessRecord {
    pub hits: u64,
    pub misses: u64,
}

/// Fully associative LRU cache over fixed-size lines.
#[derive(Debug, Clone)]
pub struct CacheSim {
    capacity_bytes: u64,
    line_bytes: u64,
    clock: u64,
    lines: HashMap<u64, u64>,
    by_age: BTreeMap<u64, u64>,
    pub hits: u64,
    pub misses: u64,
    pub bytes_from_backing: u64,
}

impl Default for CacheSim {
    fn default() -> Self {
        CacheSim::new(DEFAULT_CACHE_BYTES, DEFAULT_LINE_BYTES).expect("default geometry")
    }
}

impl CacheSim {
    pub fn new(capacity_bytes: u64, line_bytes: u64) -> Result<Self> {
        if line_bytes == 0 || capacity_bytes < line_bytes {
            return Err(Error::Config("cache needs a positive line size and room for one line".into()));
        }
        Ok(CacheSim {
            capacity_bytes,
            line_bytes,
            clock: 0,
            lines: HashMap::new(),
            by_age: BTreeMap::new(),
            hits: 0,
            misses: 0,
            bytes_from_backing: 0,
        })
    }

    pub fn capacity_bytes(&self) -> u64 {
        self.capacity_bytes
    }

    pub fn line_bytes(&self) -> u64 {
        self.line_bytes
    }

    fn capacity_lines(&self) -> usize {
        (self.capacity_bytes / self.line_bytes) as usize
    }

    pub fn resident_bytes(&self) -> u64 {
        self.lines.len() as u64 * self.line_bytes
    }

    pub fn accesses(&self) -> u64 {
        self.hits + self.misses
    }

    pub fn hit_rate(&self) -> f64 {
        if self.accesses() == 0 {
            0.0
        } else {
            self.hits as f64 / self.accesses() as f64
        }
    }

    /// Touches every line overlapping `[address, address + bytes)`.
    pub fn access(&mut self, address: u64, bytes: u64) -> AccessRecord {
        let mut rec = AccessRecord::default();
        if bytes == 0 {
            return rec;
        }
        let first = address / self.line_bytes;
        let last = (address + bytes - 1) / self.line_bytes;
        for line in first..=last {
            self.clock += 1;
            if let Some(age) = self.lines.insert(line, self.clock) {
                self.by_age.remove(&age);
                rec.hits += 1;
            } else {
                rec.misses += 1;
                self.bytes_from_backing += self.line_bytes;
                if self.lines.len() > self.capacity_lines() {
                    let (_, victim) = self.by_age.pop_first().expect("nonempty when over capacity");
                    self.lines.remove(&victim);
                }
            }
            self.by_age.insert(self.clock, line);
        }
        self.hits += rec.hits;
        self.misses += rec.misses;
        rec
    }

    /// Feeds one R-tree node fetch, placing node `n` at `n · stride`.
    pub fn access_node(&mut self, a: NodeAccess, stride: u64) -> AccessRecord {
        self.access(a.node.0 as u64 * stride, a.bytes)
    }
}

/// Operation counts standing in for energy.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ProxyCounters {
    pub fgbg_rays: u64,
    pub fgbg_bases: u64,
    pub refine_evals: u64,
    pub fusion_evals: u64,
    pub merges: u64,
    pub inserts: u64,
    pub pdf_evals: u64,
    pub nodes_visited: u64,
    pub bytes_touched: u64,
    pub cache_hits: u64,
    pub cache_misses: u64,
    pub backing_bytes: u64,
}

impl ProxyCounters {
    pub fn add_frame(&mut self, r: &FrameReport) {
        self.fgbg_rays += r.fgbg.rays;
        self.fgbg_bases += r.fgbg.bases;
        self.refine_evals += r.refine.hellinger_evals;
        self.merges += r.merged();
        self.inserts += r.inserted();
    }

    pub fn add_fusion_evals(&mut self, evals: u64) {
        self.fusion_evals += evals;
    }

    pub fn add_query(&mut self, s: &QueryStats) {
        self.pdf_evals += s.pdf_evals;
        self.nodes_visited += s.rtree.nodes_visited;
        self.bytes_touched += s.rtree.bytes_touched;
    }

    pub fn add_cache(&mut self, c: &CacheSim) {
        self.cache_hits += c.hits;
        self.cache_misses += c.misses;
        self.backing_bytes += c.bytes_from_backing;
    }

    pub fn fields(&self) -> [(&'static str, u64); 12] {
        [
            ("fgbg_rays", self.fgbg_rays),
            ("fgbg_bases", self.fgbg_bases),
            ("refine_evals", self.refine_evals),
            ("fusion_evals", self.fusion_evals),
            ("merges", self.merges),
            ("inserts", self.inserts),
            ("pdf_evals", self.pdf_evals),
            ("nodes_visited", self.nodes_visited),
            ("bytes_touched", self.bytes_touched),
            ("cache_hits", self.cache_hits),
            ("cache_misses", self.cache_misses),
            ("backing_bytes", self.backing_bytes),
        ]
    }
}

/// `optimized / baseline`; 1 when both are zero.
pub fn ratio(baseline: u64, optimized: u64) -> f64 {
    match (baseline, optimized) {
        (0, 0) => 1.0,
        (0, _) => f64::INFINITY,
        (b, o) => o as f64 / b as f64,
    }
}

fn ratio_name(field: &str) -> String {
    match field {
        "fgbg_rays" => "fgbg_ray_ratio".into(),
        "nodes_visited" => "visit_ratio".into(),
        f => format!("{f}_ratio"),
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EnergyReport {
    pub baseline: ProxyCounters,
    pub optimized: ProxyCounters,
}

impl EnergyReport {
    pub fn ratios(&self) -> Vec<(String, f64)> {
        self.baseline
            .fields()
            .iter()
            .zip(self.optimized.fields())
            .map(|((name, b), (_, o))| (ratio_name(name), ratio(*b, o)))
            .collect()
    }

    pub fn ratio_of(&self, name: &str) -> Option<f64> {
        self.ratios().into_iter().find(|(n, _)| n == name).map(|(_, v)| v)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (name, v) in self.baseline.fields() {
            let _ = writeln!(s, "baseline.{name}={v}");
        }
        for (name, v) in self.optimized.fields() {
            let _ = writeln!(s, "optimized.{name}={v}");
        }
        for (name, v) in self.ratios() {
            let _ = writeln!(s, "{name}={}", fmt_real(v));
        }
        s
    }
}

/// Fixed six-decimal rendering so reports are byte-stable.
pub fn fmt_real(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.6}")
    } else {
        format!("{v}")
    }
}

/// One named run with ordered key/value columns.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunRecord {
    pub label: String,
    pub values: Vec<(String, String)>,
}

impl RunRecord {
    pub fn new(label: impl Into<String>) -> Self {
        RunRecord { label: label.into(), values: Vec::new() }
    }

    pub fn push(&mut self, key: impl Into<String>, value: impl ToString) -> &mut Self {
        self.values.push((key.into(), value.to_string()));
        self
    }

    pub fn push_real(&mut self, key: impl Into<String>, value: f64) -> &mut Self {
        self.push(key, fmt_real(value))
    }

    pub fn push_counters(&mut self, c: &ProxyCounters) -> &mut Self {
        for (k, v) in c.fields() {
            self.push(k, v);
        }
        self
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("label={}\n", self.label);
        for (k, v) in &self.values {
            let _ = writeln!(s, "{k}={v}");
        }
        s
    }

    pub fn csv_header(&self) -> String {
        std::iter::once("label").chain(self.values.iter().map(|(k, _)| k.as_str())).collect::<Vec<_>>().join(",")
    }

    pub fn csv_row(&self) -> String {
        std::iter::once(self.label.as_str()).chain(self.values.iter().map(|(_, v)| v.as_str())).collect::<Vec<_>>().join(",")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::Pose;
    use crate::ingest::{render_synthetic, SyntheticScene};
    use proptest::prelude::*;

    #[test]
    fn hand_auc() {
        assert_eq!(auc_from_scores(&[0.9, 0.4], &[0.8, 0.1]).unwrap(), 0.75);
        assert_eq!(auc_from_scores(&[0.9, 0.8], &[0.1, 0.2]).unwrap(), 1.0);
        assert_eq!(auc_from_scores(&[0.5; 7], &[0.5; 3]).unwrap(), 0.5);
        assert!(matches!(auc_from_scores(&[1.0], &[]), Err(Error::SingleLabel)));
    }

    fn pair_count_auc(occ: &[f64], free: &[f64]) -> f64 {
        let mut s = 0.0;
        for a in occ {
            for b in free {
                s += if a > b {
                    1.0
                } else if a == b {
                    0.5
                } else {
                    0.0
                };
            }
        }
        s / (occ.len() * free.len()) as f64
    }

    proptest! {
        #[test]
        fn auc_matches_pair_count(occ in prop::collection::vec(0u8..10, 1..30), free in prop::collection::vec(0u8..10, 1..30)) {
            let occ: Vec<f64> = occ.into_iter().map(|x| x as f64 / 10.0).collect();
            let free: Vec<f64> = free.into_iter().map(|x| x as f64 / 10.0).collect();
            let a = auc_from_scores(&occ, &free).unwrap();
            prop_assert!((a - pair_count_auc(&occ, &free)).abs() < 1e-12);
            let cubed = |v: &Vec<f64>| v.iter().map(|x| (x - 0.3).powi(3)).collect::<Vec<_>>();
            prop_assert!((auc_from_scores(&cubed(&occ), &cubed(&free)).unwrap() - a).abs() < 1e-12);
            prop_assert!((auc_from_scores(&free, &occ).unwrap() - (1.0 - a)).abs() < 1e-12);
        }
    }

    #[test]
    fn plane_samples() {
        let intr = CameraIntrinsics::scaled_default(40, 30);
        let f = render_synthetic(&SyntheticScene::frontal_plane(2.0), &Pose::identity(), &intr, 10.0);
        let p = SamplingParams { per_ray: 1, surface_delta: 0.2, pixel_stride: 1, seed: 3 };
        let s = generate_eval_samples(&[f.clone()], &intr, &p).unwrap();
        let valid = f.valid_count();
        assert_eq!(s.len(), 2 * valid);
        for x in &s {
            match x.label {
                Kind::Occupied => assert!((x.position.z - 2.0).abs() < 1e-9),
                Kind::Free => assert!(x.position.z < 1.8 + 1e-12),
            }
        }
        assert_eq!(generate_eval_samples(&[f], &intr, &p).unwrap(), s);
        let empty = DepthFrame::new(4, 4, vec![0.0; 16]).unwrap().with_pose(Pose::identity());
        assert!(generate_eval_samples(&[empty], &CameraIntrinsics::scaled_default(4, 4), &p).unwrap().is_empty());
    }

    #[test]
    fn empty_map_auc_is_half() {
        let m = GaussianMap::default();
        let s = [
            EvalSample { position: Vec3::zeros(), label: Kind::Occupied },
            EvalSample { position: Vec3::x(), label: Kind::Free },
        ];
        assert_eq!(auc(&m, &s, 1e-6).unwrap(), 0.5);
    }

    #[test]
    fn lru_basics() {
        let mut c = CacheSim::new(256, 64).unwrap();
        c.access(0, 8);
        for _ in 0..9 {
            c.access(8, 8);
        }
        assert_eq!((c.misses, c.hits), (1, 9));
        let mut c = CacheSim::new(256, 64).unwrap();
        for _ in 0..10 {
            for line in 0..5 {
                c.access(line * 64, 64);
            }
        }
        assert_eq!(c.hits, 0, "cyclic scan over capacity + 1 lines");
        assert_eq!(c.bytes_from_backing, c.misses * 64);
        assert!(c.resident_bytes() <= c.capacity_bytes());
        let r = CacheSim::new(1024, 64).unwrap().access(60, 10);
        assert_eq!(r.misses, 2);
    }

    #[test]
    fn reports_are_stable() {
        let mut b = ProxyCounters::default();
        b.fgbg_rays = 100;
        b.nodes_visited = 40;
        let mut o = b;
        o.fgbg_rays = 25;
        o.nodes_visited = 10;
        let r = EnergyReport { baseline: b, optimized: o };
        assert_eq!(r.ratio_of("fgbg_ray_ratio"), Some(0.25));
        assert_eq!(r.ratio_of("visit_ratio"), Some(0.25));
        assert_eq!(r.to_text(), r.to_text());
        let mut rec = RunRecord::new("x");
        rec.push("a", 1).push_real("b", 0.5);
        assert_eq!(rec.csv_header(), "label,a,b");
        assert_eq!(rec.csv_row(), "x,1,0.500000");
    }
}
