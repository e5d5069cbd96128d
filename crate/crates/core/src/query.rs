//! Occupancy regression at query coordinates, one at a time or in batches
//! that share a single R-tree traversal.

use crate::error::{Error, Result};
use crate::map::GaussianMap;
use crate::rtree::{NodeAccess, RTreeStats};
use crate::types::{gaussian_pdf, Aabb, Gaussian3, Kind, Vec3};

pub const DEFAULT_PRIOR: f64 = 1e-6;
pub const DEFAULT_BATCH_SIZE: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Explored,
    Unexplored,
}

impl std::fmt::Display for Status {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Status::Explored => "explored",
            Status::Unexplored => "unexplored",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QueryResult {
    pub probability: f64,
    pub status: Status,
    pub n_gaussians_evaluated: usize,
}

impl QueryResult {
    pub const UNEXPLORED: QueryResult = QueryResult { probability: 0.5, status: Status::Unexplored, n_gaussians_evaluated: 0 };

    /// Equality including the exact bit pattern of the probability.
    pub fn bit_eq(&self, o: &QueryResult) -> bool {
        self.probability.to_bits() == o.probability.to_bits()
            && self.status == o.status
            && self.n_gaussians_evaluated == o.n_gaussians_evaluated
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BatchConfig {
    pub batch_size: usize,
}

impl Default for BatchConfig {
    fn default() -> Self {
        BatchConfig { batch_size: DEFAULT_BATCH_SIZE }
    }
}

impl BatchConfig {
    pub fn new(batch_size: usize) -> Result<Self> {
        if batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        Ok(BatchConfig { batch_size })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct QueryStats {
    pub rtree: RTreeStats,
    pub coordinates: u64,
    pub pdf_evals: u64,
}

impl QueryStats {
    pub fn merge(&mut self, o: &QueryStats) {
        self.rtree.merge(&o.rtree);
        self.coordinates += o.coordinates;
        self.pdf_evals += o.pdf_evals;
    }

    pub fn nodes_visited(&self) -> u64 {
        self.rtree.nodes_visited
    }
}

/// Occupancy probability from weighted occupied and free densities at `x`,
/// shrunk toward 0.5 by the pseudocount `c`. Gaussians are summed in the
/// order given.
pub fn regress<'a>(gaussians: impl IntoIterator<Item = &'a Gaussian3>, x: &Vec3, c: f64) -> QueryResult {
    // A degenerate Gaussian contributes nothing.
    regress_terms(gaussians.into_iter().map(|g| (g.kind, g.weight, gaussian_pdf(g, x).unwrap_or(0.0))), c)
}

fn regress_terms(terms: impl Iterator<Item = (Kind, f64, f64)>, c: f64) -> QueryResult {
    let mut s_occ = 0.0;
    let mut s_free = 0.0;
    let mut n = 0;
    for (kind, w, density) in terms {
        n += 1;
        match kind {
            Kind::Occupied => s_occ += w * density,
            Kind::Free => s_free += w * density,
        }
    }
    if n == 0 {
        return QueryResult::UNEXPLORED;
    }
    QueryResult {
        probability: ((s_occ + 0.5 * c) / (s_occ + s_free + c)).clamp(0.0, 1.0),
        status: Status::Explored,
        n_gaussians_evaluated: n,
    }
}

fn regress_candidates(map: &GaussianMap, sorted_ids: &[u64], x: &Vec3, c: f64) -> QueryResult {
    let terms = sorted_ids.iter().filter_map(|id| {
        let s = map.stored(*id).expect("indexed id is stored");
        s.bbox
            .contains_point(x)
            .then(|| (s.g.kind, s.g.weight, s.pdf.map_or(0.0, |p| p.eval(x))))
    });
    regress_terms(terms, c)
}

pub fn query_single(map: &GaussianMap, x: &Vec3, c: f64) -> (QueryResult, QueryStats) {
    query_single_traced(map, x, c, &mut |_| {})
}

/// [`query_single`] reporting every node it reads.
pub fn query_single_traced(
    map: &GaussianMap,
    x: &Vec3,
    c: f64,
    on_access: &mut dyn FnMut(NodeAccess),
) -> (QueryResult, QueryStats) {
    let (mut ids, rtree) = map.index().probe_traced(&Aabb::point(*x), on_access);
    ids.sort_unstable();
    let r = regress_candidates(map, &ids, x, c);
    (r, QueryStats { rtree, coordinates: 1, pdf_evals: r.n_gaussians_evaluated as u64 })
}

/// One traversal with the box enclosing `coords`, then per-coordinate
/// filtering. Results equal [`query_single`] on each coordinate bit for bit.
pub fn query_batch(map: &GaussianMap, coords: &[Vec3], c: f64) -> (Vec<QueryResult>, QueryStats) {
    query_batch_traced(map, coords, c, &mut |_| {})
}

pub fn query_batch_traced(
    map: &GaussianMap,
    coords: &[Vec3],
    c: f64,
    on_access: &mut dyn FnMut(NodeAccess),
) -> (Vec<QueryResult>, QueryStats) {
    if coords.is_empty() {
        return (Vec::new(), QueryStats::default());
    }
    let (mut ids, rtree) = map.index().probe_traced(&Aabb::enclosing(coords), on_access);
    ids.sort_unstable();
    let mut stats = QueryStats { rtree, coordinates: coords.len() as u64, pdf_evals: 0 };
    let results: Vec<QueryResult> = coords
        .iter()
        .map(|x| {
            let r = regress_candidates(map, &ids, x, c);
            stats.pdf_evals += r.n_gaussians_evaluated as u64;
            r
        })
        .collect();
    (results, stats)
}

/// Queries `coords` in consecutive chunks of the configured batch size.
pub fn query_chunked(map: &GaussianMap, coords: &[Vec3], cfg: BatchConfig, c: f64) -> (Vec<QueryResult>, QueryStats) {
    query_chunked_traced(map, coords, cfg, c, &mut |_| {})
}

pub fn query_chunked_traced(
    map: &GaussianMap,
    coords: &[Vec3],
    cfg: BatchConfig,
    c: f64,
    on_access: &mut dyn FnMut(NodeAccess),
) -> (Vec<QueryResult>, QueryStats) {
    let mut out = Vec::with_capacity(coords.len());
    let mut stats = QueryStats::default();
    for chunk in coords.chunks(cfg.batch_size.max(1)) {
        let (r, s) = query_batch_traced(map, chunk, c, on_access);
        out.extend(r);
        stats.merge(&s);
    }
    (out, stats)
}

/// Samples each linear piece at spacing at most `step`, endpoints included
/// and joints not repeated. Zero-length pieces are skipped.
pub fn sample_trajectory(waypoints: &[Vec3], step: f64) -> Result<Vec<Vec3>> {
    if waypoints.len() < 2 {
        return Err(Error::Config("a trajectory needs at least two waypoints".into()));
    }
    if !(step > 0.0) || !step.is_finite() {
        return Err(Error::Config(format!("trajectory step must be positive (got {step})")));
    }
    let mut out = vec![waypoints[0]];
    let mut last = waypoints[0];
    for &p in &waypoints[1..] {
        let len = (p - last).norm();
        if len == 0.0 {
            continue;
        }
        let n = (len / step - 1e-9).ceil().max(1.0) as usize;
        for i in 1..=n {
            out.push(last + (p - last) * (i as f64 / n as f64));
        }
        last = p;
    }
    Ok(out)
}

pub fn query_trajectory(
    map: &GaussianMap,
    waypoints: &[Vec3],
    step: f64,
    cfg: BatchConfig,
    c: f64,
) -> Result<(Vec<QueryResult>, QueryStats)> {
    let samples = sample_trajectory(waypoints, step)?;
    Ok(query_chunked(map, &samples, cfg, c))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::SymMat3;

    fn g(kind: Kind, w: f64, mean: [f64; 3]) -> Gaussian3 {
        Gaussian3::new(kind, w, Vec3::from(mean), SymMat3::diag(0.01, 0.01, 0.01))
    }

    #[test]
    fn empty_list_is_unexplored() {
        let r = regress(std::iter::empty(), &Vec3::zeros(), DEFAULT_PRIOR);
        assert_eq!(r, QueryResult::UNEXPLORED);
    }

    #[test]
    fn heavy_occupied_at_mean() {
        let a = g(Kind::Occupied, 100.0, [1.0, 1.0, 1.0]);
        assert!(regress([&a], &a.mean, DEFAULT_PRIOR).probability > 0.99);
    }

    #[test]
    fn symmetric_pair_is_half() {
        let a = g(Kind::Occupied, 3.0, [0.0; 3]);
        let b = g(Kind::Free, 3.0, [0.0; 3]);
        for x in [Vec3::zeros(), Vec3::new(0.05, -0.1, 0.02)] {
            let r = regress([&a, &b], &x, DEFAULT_PRIOR);
            assert!((r.probability - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn far_query_visits_root_only() {
        let mut m = GaussianMap::default();
        for i in 0..100 {
            m.insert(&g(Kind::Occupied, 1.0, [i as f64 * 0.1, 0.0, 0.0]));
        }
        let (r, s) = query_single(&m, &Vec3::new(100.0, 100.0, 100.0), DEFAULT_PRIOR);
        assert_eq!(r, QueryResult::UNEXPLORED);
        assert_eq!(s.nodes_visited(), 1);
    }

    #[test]
    fn single_matches_brute_force() {
        let mut m = GaussianMap::default();
        for i in 0..300 {
            let t = i as f64 * 0.37;
            let kind = if i % 3 == 0 { Kind::Free } else { Kind::Occupied };
            m.insert(&g(kind, 1.0 + (i % 7) as f64, [t.sin() * 2.0, t.cos() * 2.0, (t * 0.1).sin()]));
        }
        for j in 0..500 {
            let t = j as f64 * 0.011;
            let x = Vec3::new(t.cos() * 2.0, t.sin() * 2.0, 0.1 * (j % 5) as f64);
            let brute: Vec<&Gaussian3> = m.iter().filter(|g| g.bbox(m.bbox_k()).contains_point(&x)).collect();
            let expect = regress(brute, &x, DEFAULT_PRIOR);
            assert!(query_single(&m, &x, DEFAULT_PRIOR).0.bit_eq(&expect));
        }
    }

    #[test]
    fn trajectory_sampling() {
        let s = sample_trajectory(&[Vec3::zeros(), Vec3::new(1.0, 0.0, 0.0)], 0.25).unwrap();
        let xs: Vec<f64> = s.iter().map(|p| p.x).collect();
        assert_eq!(xs, vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        let s = sample_trajectory(&[Vec3::zeros(), Vec3::zeros(), Vec3::new(0.0, 1.0, 0.0), Vec3::new(1.0, 1.0, 0.0)], 0.5)
            .unwrap();
        assert_eq!(s.len(), 5);
        assert!(sample_trajectory(&[Vec3::zeros()], 0.1).is_err());
        assert!(sample_trajectory(&[Vec3::zeros(), Vec3::x()], 0.0).is_err());
    }

    #[test]
    fn chunk_sizes() {
        let m = GaussianMap::default();
        let coords: Vec<Vec3> = (0..40).map(|i| Vec3::new(i as f64, 0.0, 0.0)).collect();
        let (r, s) = query_chunked(&m, &coords, BatchConfig::default(), DEFAULT_PRIOR);
        assert_eq!(r.len(), 40);
        assert_eq!(s.rtree.searches, 3);
    }
}
