//! The global Gaussian map and fusion of per-frame local Gaussians into it.

use crate::error::{Error, Result};
use crate::quant::{is_quantized, quantize_gaussian, QuantConfig};
use crate::rtree::{RTree, RTreeStats, DEFAULT_NODE_MAX};
use crate::types::{
    bbox_of, hellinger_exceeds, hellinger_sq, moment_merge, Aabb, Gaussian3, Kind, PdfEval, SymMat3, COV_EPS, DEFAULT_BBOX_K,
};

/// Default squared-Hellinger gate for fusing locals into the global map.
pub const DEFAULT_FUSE_TAU_H: f64 = 0.4;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct MapCounters {
    pub gaussians_inserted: u64,
    pub gaussians_merged: u64,
    /// Hellinger evaluations against global candidates.
    pub fusion_ops: u64,
    pub quant_saturations: u64,
}

/// One merge decision, kept so callers can check that kinds never mix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MergeRecord {
    pub global_id: u64,
    pub global_kind: Kind,
    pub local_kind: Kind,
    pub hellinger_sq: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FusionReport {
    pub merged: u64,
    pub inserted: u64,
    pub merges: Vec<MergeRecord>,
}

impl FusionReport {
    pub fn absorb(&mut self, o: FusionReport) {
        self.merged += o.merged;
        self.inserted += o.inserted;
        self.merges.extend(o.merges);
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Stored {
    pub g: Gaussian3,
    pub bbox: Aabb,
    pub pdf: Option<PdfEval>,
}

/// Gaussians by id plus an R-tree over their `k`σ boxes.
///
/// Stored values are rounded to binary32 (and to the 19-bit format for means
/// and weights when quantization is on), so the on-disk form is exact.
#[derive(Debug, Clone)]
pub struct GaussianMap {
    /// Entry `i` holds id `i + 1`; ids are dense because nothing is ever deleted.
    store: Vec<Stored>,
    index: RTree,
    next_id: u64,
    quant: QuantConfig,
    bbox_k: f64,
    counters: MapCounters,
}

impl Default for GaussianMap {
    fn default() -> Self {
        GaussianMap::new(QuantConfig::OFF, DEFAULT_BBOX_K)
    }
}

fn round32(v: f64) -> f64 {
    v as f32 as f64
}

/// Clamps negative eigenvalues so that `cov + εI` stays positive definite.
fn project_psd(cov: &SymMat3) -> SymMat3 {
    let eig = cov.to_matrix().symmetric_eigen();
    let mut vals = eig.eigenvalues;
    for v in vals.iter_mut() {
        *v = v.max(0.0);
    }
    let m = eig.eigenvectors * nalgebra::Matrix3::from_diagonal(&vals) * eig.eigenvectors.transpose();
    SymMat3::from_matrix(&m)
}

impl GaussianMap {
    pub fn new(quant: QuantConfig, bbox_k: f64) -> Self {
        Self::with_node_max(quant, bbox_k, DEFAULT_NODE_MAX).expect("default fan-out")
    }

    pub fn with_node_max(quant: QuantConfig, bbox_k: f64, node_max: usize) -> Result<Self> {
        if !(bbox_k > 0.0) {
            return Err(Error::Config("bbox scale k must be positive".into()));
        }
        Ok(GaussianMap {
            store: Vec::new(),
            index: RTree::new(node_max)?,
            next_id: 1,
            quant,
            bbox_k: round32(bbox_k),
            counters: MapCounters::default(),
        })
    }

    pub fn len(&self) -> usize {
        self.store.len()
    }

    pub fn is_empty(&self) -> bool {
        self.store.is_empty()
    }

    pub fn quant(&self) -> QuantConfig {
        self.quant
    }

    pub fn bbox_k(&self) -> f64 {
        self.bbox_k
    }

    pub fn counters(&self) -> MapCounters {
        self.counters
    }

    pub fn index(&self) -> &RTree {
        &self.index
    }

    pub fn index_stats(&self) -> RTreeStats {
        self.index.stats()
    }

    pub fn reset_index_stats(&mut self) {
        self.index.reset_stats();
    }

    pub fn get(&self, id: u64) -> Option<&Gaussian3> {
        self.stored(id).map(|s| &s.g)
    }

    pub(crate) fn stored(&self, id: u64) -> Option<&Stored> {
        id.checked_sub(1).and_then(|i| self.store.get(i as usize))
    }

    /// Gaussians in ascending id order.
    pub fn iter(&self) -> impl Iterator<Item = &Gaussian3> {
        self.store.iter().map(|s| &s.g)
    }

    pub fn count_kind(&self, kind: Kind) -> usize {
        self.iter().filter(|g| g.kind == kind).count()
    }

    pub fn total_weight(&self) -> f64 {
        self.iter().map(|g| g.weight).sum()
    }

    /// Union of all index boxes.
    pub fn bounds(&self) -> Aabb {
        self.index.bounds()
    }

    /// The storage form of `g`: binary32 fields, 19-bit mean/weight when enabled.
    pub fn canonicalize(&mut self, g: &Gaussian3) -> Gaussian3 {
        let mut out = *g;
        out.weight = round32(g.weight);
        out.mean = g.mean.map(round32);
        out.cov = SymMat3::from_array(g.cov.to_array().map(round32));
        if out.cov.regularized().to_matrix().cholesky().is_none() {
            out.cov = SymMat3::from_array(project_psd(&g.cov).to_array().map(round32));
            if out.cov.regularized().to_matrix().cholesky().is_none() {
                out.cov = out.cov.add_diag(round32(COV_EPS));
            }
        }
        let (q, saturated) = quantize_gaussian(&out, self.quant);
        self.counters.quant_saturations += u64::from(saturated);
        q
    }

    /// Inserts `g` as a new entry (canonicalized) and returns its id.
    pub fn insert(&mut self, g: &Gaussian3) -> u64 {
        let id = self.next_id;
        self.next_id += 1;
        let mut c = self.canonicalize(g);
        c.id = id;
        self.put(c);
        self.counters.gaussians_inserted += 1;
        id
    }

    /// Inserts an already-canonical Gaussian under its own id (used by loading).
    pub(crate) fn insert_raw(&mut self, g: Gaussian3) -> Result<()> {
        if g.id != self.next_id {
            return Err(Error::UnknownId(g.id));
        }
        self.next_id += 1;
        self.put(g);
        Ok(())
    }

    fn put(&mut self, g: Gaussian3) {
        let bbox = bbox_of(&g, self.bbox_k);
        self.index.insert(g.id, bbox).expect("fresh id with a finite box");
        let s = Stored { g, bbox, pdf: PdfEval::new(&g).ok() };
        let slot = (g.id - 1) as usize;
        if slot == self.store.len() {
            self.store.push(s);
        } else {
            self.store[slot] = s;
        }
    }

    /// For each local in order: find same-kind globals whose boxes overlap
    /// its box, take the one with the smallest H² (lowest id on ties), and
    /// merge into it when H² ≤ `tau_h`; otherwise insert the local.
    pub fn fuse_local(&mut self, locals: &[Gaussian3], tau_h: f64) -> FusionReport {
        let mut report = FusionReport::default();
        for local in locals {
            let mut candidates = self.index.search(&bbox_of(local, self.bbox_k));
            candidates.sort_unstable();
            let mut best: Option<(u64, f64)> = None;
            for id in candidates {
                let global = &self.store[(id - 1) as usize].g;
                if global.kind != local.kind {
                    continue;
                }
                self.counters.fusion_ops += 1;
                let gate = best.map_or(tau_h, |(_, b)| b.min(tau_h));
                if hellinger_exceeds(global, local, gate) {
                    continue;
                }
                let h = hellinger_sq(global, local);
                if best.is_none_or(|(_, b)| h < b) {
                    best = Some((id, h));
                }
            }
            match best {
                Some((id, h)) if h <= tau_h => {
                    let global = self.store[(id - 1) as usize].g;
                    self.index.remove(id).expect("stored id is indexed");
                    let merged = moment_merge(&global, local).expect("same kind, positive weight");
                    let mut c = self.canonicalize(&merged);
                    c.id = id;
                    self.put(c);
                    self.counters.gaussians_merged += 1;
                    report.merged += 1;
                    report.merges.push(MergeRecord {
                        global_id: id,
                        global_kind: global.kind,
                        local_kind: local.kind,
                        hellinger_sq: h,
                    });
                }
                _ => {
                    self.insert(local);
                    report.inserted += 1;
                }
            }
        }
        report
    }

    /// Store/index agreement, index structure, and quantization closure.
    pub fn audit(&self) -> std::result::Result<(), String> {
        self.index.audit()?;
        if self.index.len() != self.store.len() {
            return Err(format!("{} indexed vs {} stored", self.index.len(), self.store.len()));
        }
        for (i, s) in self.store.iter().enumerate() {
            let id = i as u64 + 1;
            if s.g.id != id {
                return Err(format!("entry {id} carries id {}", s.g.id));
            }
            let expect = bbox_of(&s.g, self.bbox_k);
            if s.bbox != expect || self.index.get(id) != Some(expect) {
                return Err(format!("id {id} is not indexed under its current box"));
            }
            if self.quant.enabled && !is_quantized(&s.g) {
                return Err(format!("id {id} is not a fixed point of quantization"));
            }
            if !s.g.is_valid() {
                return Err(format!("id {id} is not a valid Gaussian"));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::Vec3;

    fn occ(mean: [f64; 3], sigma: f64) -> Gaussian3 {
        Gaussian3::new(Kind::Occupied, 10.0, Vec3::from(mean), SymMat3::diag(sigma * sigma, sigma * sigma, sigma * sigma))
    }

    #[test]
    fn fuse_into_empty_inserts_all() {
        let mut m = GaussianMap::default();
        let r = m.fuse_local(&[occ([0.0; 3], 0.1), occ([5.0; 3], 0.1)], DEFAULT_FUSE_TAU_H);
        assert_eq!((r.inserted, r.merged), (2, 0));
        assert_eq!(m.len(), 2);
        m.audit().unwrap();
    }

    #[test]
    fn identical_copy_merges() {
        let mut m = GaussianMap::default();
        let g = occ([1.0, 2.0, 3.0], 0.25);
        m.fuse_local(&[g], DEFAULT_FUSE_TAU_H);
        let r = m.fuse_local(&[g], DEFAULT_FUSE_TAU_H);
        assert_eq!(r.merged, 1);
        assert_eq!(m.len(), 1);
        assert_eq!(m.iter().next().unwrap().weight, 20.0);
        m.audit().unwrap();
    }

    #[test]
    fn distant_gaussian_is_separate() {
        let mut m = GaussianMap::default();
        m.fuse_local(&[occ([0.0; 3], 0.1)], DEFAULT_FUSE_TAU_H);
        m.fuse_local(&[occ([10.0, 0.0, 0.0], 0.1)], DEFAULT_FUSE_TAU_H);
        assert_eq!(m.len(), 2);
    }

    #[test]
    fn kinds_never_merge() {
        let mut m = GaussianMap::default();
        let g = occ([0.0; 3], 0.2);
        let mut f = g;
        f.kind = Kind::Free;
        let r = m.fuse_local(&[g, f, g, f], DEFAULT_FUSE_TAU_H);
        assert_eq!(m.len(), 2);
        assert!(r.merges.iter().all(|x| x.global_kind == x.local_kind));
        assert_eq!(m.count_kind(Kind::Free), 1);
    }

    #[test]
    fn quantized_store_is_closed() {
        let mut m = GaussianMap::new(QuantConfig::ON, 2.0);
        for i in 0..50 {
            let x = i as f64 * 0.173;
            m.fuse_local(&[occ([x, 0.1 * x, 1.3], 0.2)], DEFAULT_FUSE_TAU_H);
        }
        m.audit().unwrap();
        for g in m.iter() {
            assert_eq!(quantize_gaussian(g, QuantConfig::ON).0, *g);
        }
    }

    #[test]
    fn ties_pick_lowest_id() {
        let mut m = GaussianMap::default();
        let g = occ([0.0; 3], 0.3);
        m.insert(&g);
        m.insert(&g);
        let r = m.fuse_local(&[g], DEFAULT_FUSE_TAU_H);
        assert_eq!(r.merges[0].global_id, 1);
    }
}
