//! Browser bindings: build a synthetic-scene map, render a horizontal slice,
//! and compare single against batched trajectory queries.

use gmmmap::config::RunConfig;
use gmmmap::ingest::{render_sequence, SyntheticScene};
use gmmmap::metrics::{auc, generate_eval_samples, map_size_bytes};
use gmmmap::query::{query_chunked, sample_trajectory, BatchConfig};
use gmmmap::{build_map, GaussianMap, Kind, Vec3};
use wasm_bindgen::prelude::*;

fn js_err(e: impl std::fmt::Display) -> JsValue {
    JsValue::from_str(&e.to_string())
}

fn scene(name: &str) -> Option<SyntheticScene> {
    match name {
        "standard" => Some(SyntheticScene::standard()),
        "room" => Some(SyntheticScene::box_room(2.0, 1.5, 2.5)),
        "desk" => Some(SyntheticScene::desk()),
        _ => None,
    }
}

/// Blue at 0, yellow at 0.5, red at 1.
fn color(p: f64) -> [u8; 3] {
    let p = p.clamp(0.0, 1.0);
    let c = |v: f64| (v * 255.0).round() as u8;
    if p <= 0.5 {
        let t = 2.0 * p;
        [c(t), c(t), c(1.0 - t)]
    } else {
        [255, c(2.0 - 2.0 * p), 0]
    }
}

#[wasm_bindgen]
pub struct Demo {
    map: GaussianMap,
    cfg: RunConfig,
    auc: f64,
    build_rays: u64,
}

#[wasm_bindgen]
impl Demo {
    /// Builds a map of a named scene (`standard`, `room`, `desk`) in
    /// `direct` or `baseline` free-space mode.
    #[wasm_bindgen(constructor)]
    pub fn new(scene_name: &str, fgbg: &str, frames: usize, quant: bool) -> Result<Demo, JsValue> {
        let scene = scene(scene_name).ok_or_else(|| js_err(format!("unknown scene {scene_name:?}")))?;
        let mut cfg = RunConfig { width: 80, height: 60, frames: frames.clamp(1, 40), quant, ..RunConfig::default() };
        cfg.set("fgbg_mode", fgbg).map_err(js_err)?;
        cfg.validate().map_err(js_err)?;
        let intr = cfg.intrinsics().map_err(js_err)?;
        let frames = render_sequence(&scene, &intr, cfg.frames, cfg.max_range);
        let mut map = cfg.new_map().map_err(js_err)?;
        let reports = build_map(&mut map, &frames, &intr, &cfg.pipeline).map_err(js_err)?;
        let samples = generate_eval_samples(&frames, &intr, &cfg.sampling).map_err(js_err)?;
        let auc = auc(&map, &samples, cfg.prior).map_err(js_err)?;
        let build_rays = reports.iter().map(|r| r.fgbg.rays).sum();
        Ok(Demo { map, cfg, auc, build_rays })
    }

    /// One-line summary of the built map.
    pub fn summary(&self) -> String {
        format!(
            "{} Gaussians ({} occupied, {} free), {} bytes, AUC {:.4}, {} free-space rays",
            self.map.len(),
            self.map.count_kind(Kind::Occupied),
            self.map.count_kind(Kind::Free),
            map_size_bytes(&self.map),
            self.auc,
            self.build_rays
        )
    }

    /// RGBA pixels of the slice at height `z`, `cols` × `rows` over the map
    /// footprint, rows from largest y down.
    pub fn slice_rgba(&self, z: f64, cols: usize, rows: usize) -> Vec<u8> {
        let (cols, rows) = (cols.clamp(1, 1024), rows.clamp(1, 1024));
        let b = self.map.bounds();
        let (lo, hi) = if b.is_empty() { (Vec3::new(-1.0, -1.0, 0.0), Vec3::new(1.0, 1.0, 0.0)) } else { (b.lo, b.hi) };
        let (dx, dy) = ((hi.x - lo.x) / cols as f64, (hi.y - lo.y) / rows as f64);
        let coords: Vec<Vec3> = (0..rows)
            .flat_map(|r| (0..cols).map(move |c| Vec3::new(lo.x + (c as f64 + 0.5) * dx, hi.y - (r as f64 + 0.5) * dy, z)))
            .collect();
        let (results, _) = query_chunked(&self.map, &coords, self.cfg.batch(), self.cfg.prior);
        results.iter().flat_map(|r| {
            let [red, green, blue] = color(r.probability);
            [red, green, blue, 255]
        }).collect()
    }

    /// Height range of the map, as `[zmin, zmax]`.
    pub fn z_range(&self) -> Vec<f64> {
        let b = self.map.bounds();
        if b.is_empty() {
            vec![0.0, 0.0]
        } else {
            vec![b.lo.z, b.hi.z]
        }
    }

    /// Node visits for the straight path between two points, queried one
    /// coordinate at a time and in batches of `batch`; returns
    /// `[coordinates, single_visits, batch_visits, identical (1 or 0)]`.
    #[allow(clippy::too_many_arguments)]
    pub fn compare_queries(
        &self,
        x0: f64,
        y0: f64,
        z0: f64,
        x1: f64,
        y1: f64,
        z1: f64,
        step: f64,
        batch: usize,
    ) -> Result<Vec<f64>, JsValue> {
        let coords = sample_trajectory(&[Vec3::new(x0, y0, z0), Vec3::new(x1, y1, z1)], step).map_err(js_err)?;
        let batch = BatchConfig::new(batch).map_err(js_err)?;
        let (single, s1) = query_chunked(&self.map, &coords, BatchConfig::new(1).map_err(js_err)?, self.cfg.prior);
        let (batched, sb) = query_chunked(&self.map, &coords, batch, self.cfg.prior);
        let same = single.iter().zip(&batched).all(|(a, b)| a.bit_eq(b));
        Ok(vec![coords.len() as f64, s1.nodes_visited() as f64, sb.nodes_visited() as f64, f64::from(u8::from(same))])
    }
}
