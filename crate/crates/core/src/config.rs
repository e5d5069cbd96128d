//! Run configuration: every tunable in one flat `key=value` namespace.

use std::path::Path;

use crate::camera::CameraIntrinsics;
use crate::error::{Error, Result};
use crate::free_space::{FgbgMode, FgbgParams};
use crate::map::GaussianMap;
use crate::metrics::{CacheSim, SamplingParams};
use crate::pipeline::PipelineParams;
use crate::quant::QuantConfig;
use crate::query::{BatchConfig, DEFAULT_PRIOR};
use crate::rtree::DEFAULT_NODE_MAX;
use crate::segmentation::{SegParams, SlopeMode};
use crate::types::DEFAULT_BBOX_K;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub pipeline: PipelineParams,
    pub bbox_k: f64,
    pub quant: bool,
    pub node_max: usize,
    pub batch_size: usize,
    pub prior: f64,
    pub cache_bytes: u64,
    pub cache_line: u64,
    pub sampling: SamplingParams,
    pub width: usize,
    pub height: usize,
    pub fx: Option<f64>,
    pub fy: Option<f64>,
    pub cx: Option<f64>,
    pub cy: Option<f64>,
    pub depth_scale: f64,
    /// Synthetic scenes: frames rendered along the camera path.
    pub frames: usize,
    pub max_range: f64,
    /// Datasets: largest depth/pose timestamp gap (s).
    pub assoc_window: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            pipeline: PipelineParams::default(),
            bbox_k: DEFAULT_BBOX_K,
            quant: false,
            node_max: DEFAULT_NODE_MAX,
            batch_size: BatchConfig::default().batch_size,
            prior: DEFAULT_PRIOR,
            cache_bytes: crate::metrics::DEFAULT_CACHE_BYTES,
            cache_line: crate::metrics::DEFAULT_LINE_BYTES,
            sampling: SamplingParams { pixel_stride: 2, ..SamplingParams::default() },
            width: 160,
            height: 120,
            fx: None,
            fy: None,
            cx: None,
            cy: None,
            depth_scale: 5000.0,
            frames: 20,
            max_range: 10.0,
            assoc_window: 0.02,
        }
    }
}

pub const KEYS: &[&str] = &[
    "tau_depth",
    "tau_rel",
    "tau_slope",
    "tau_fuse",
    "n_min",
    "slope_mode",
    "fgbg_mode",
    "stride",
    "k_intervals",
    "margin",
    "r_count",
    "refine_tau_h",
    "fuse_tau_h",
    "bbox_k",
    "quant",
    "node_max",
    "batch_size",
    "prior",
    "cache_bytes",
    "cache_line",
    "per_ray",
    "surface_delta",
    "pixel_stride",
    "seed",
    "width",
    "height",
    "fx",
    "fy",
    "cx",
    "cy",
    "depth_scale",
    "frames",
    "max_range",
    "assoc_window",
];

fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}")))
}

fn flag(key: &str, v: &str) -> Result<bool> {
    match v {
        "on" | "true" | "1" | "yes" => Ok(true),
        "off" | "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected on/off, got {v:?}"))),
    }
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "auto".to_string(), |x| x.to_string())
}

impl RunConfig {
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let p = &mut self.pipeline;
        match key {
            "tau_depth" => p.seg.tau_depth = num(key, v)?,
            "tau_rel" => p.seg.tau_rel = num(key, v)?,
            "tau_slope" => p.seg.tau_slope = num(key, v)?,
            "tau_fuse" => p.seg.tau_fuse = num(key, v)?,
            "n_min" => p.seg.n_min = num(key, v)?,
            "slope_mode" => p.seg.slope_mode = v.parse()?,
            "fgbg_mode" => p.fgbg.mode = v.parse()?,
            "stride" => p.fgbg.stride = num(key, v)?,
            "k_intervals" => p.fgbg.k_intervals = num(key, v)?,
            "margin" => p.fgbg.margin = num(key, v)?,
            "r_count" => p.fgbg.r_count = num(key, v)?,
            "refine_tau_h" => p.refine_tau_h = num(key, v)?,
            "fuse_tau_h" => p.fuse_tau_h = num(key, v)?,
            "bbox_k" => self.bbox_k = num(key, v)?,
            "quant" => self.quant = flag(key, v)?,
            "node_max" => self.node_max = num(key, v)?,
            "batch_size" => self.batch_size = num(key, v)?,
            "prior" => self.prior = num(key, v)?,
            "cache_bytes" => self.cache_bytes = num(key, v)?,
            "cache_line" => self.cache_line = num(key, v)?,
            "per_ray" => self.sampling.per_ray = num(key, v)?,
            "surface_delta" => self.sampling.surface_delta = num(key, v)?,
            "pixel_stride" => self.sampling.pixel_stride = num(key, v)?,
            "seed" => self.sampling.seed = num(key, v)?,
            "width" => self.width = num(key, v)?,
            "height" => self.height = num(key, v)?,
            "fx" => self.fx = Some(num(key, v)?),
            "fy" => self.fy = Some(num(key, v)?),
            "cx" => self.cx = Some(num(key, v)?),
            "cy" => self.cy = Some(num(key, v)?),
            "depth_scale" => self.depth_scale = num(key, v)?,
            "frames" => self.frames = num(key, v)?,
            "max_range" => self.max_range = num(key, v)?,
            "assoc_window" => self.assoc_window = num(key, v)?,
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        let p = &self.pipeline;
        Some(match key {
            "tau_depth" => p.seg.tau_depth.to_string(),
            "tau_rel" => p.seg.tau_rel.to_string(),
            "tau_slope" => p.seg.tau_slope.to_string(),
            "tau_fuse" => p.seg.tau_fuse.to_string(),
            "n_min" => p.seg.n_min.to_string(),
            "slope_mode" => p.seg.slope_mode.to_string(),
            "fgbg_mode" => p.fgbg.mode.to_string(),
            "stride" => p.fgbg.stride.to_string(),
            "k_intervals" => p.fgbg.k_intervals.to_string(),
            "margin" => p.fgbg.margin.to_string(),
            "r_count" => p.fgbg.r_count.to_string(),
            "refine_tau_h" => p.refine_tau_h.to_string(),
            "fuse_tau_h" => p.fuse_tau_h.to_string(),
            "bbox_k" => self.bbox_k.to_string(),
            "quant" => (if self.quant { "on" } else { "off" }).to_string(),
            "node_max" => self.node_max.to_string(),
            "batch_size" => self.batch_size.to_string(),
            "prior" => self.prior.to_string(),
            "cache_bytes" => self.cache_bytes.to_string(),
            "cache_line" => self.cache_line.to_string(),
            "per_ray" => self.sampling.per_ray.to_string(),
            "surface_delta" => self.sampling.surface_delta.to_string(),
            "pixel_stride" => self.sampling.pixel_stride.to_string(),
            "seed" => self.sampling.seed.to_string(),
            "width" => self.width.to_string(),
            "height" => self.height.to_string(),
            "fx" => opt(self.fx),
            "fy" => opt(self.fy),
            "cx" => opt(self.cx),
            "cy" => opt(self.cy),
            "depth_scale" => self.depth_scale.to_string(),
            "frames" => self.frames.to_string(),
            "max_range" => self.max_range.to_string(),
            "assoc_window" => self.assoc_window.to_string(),
            _ => return None,
        })
    }

    /// Applies `key=value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str, origin: &Path) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let parse_err = |msg: String| Error::Parse { path: origin.to_path_buf(), line: i + 1, msg };
            let (k, v) = line.split_once('=').ok_or_else(|| parse_err(format!("expected key=value, got {line:?}")))?;
            self.set(k.trim(), v.trim()).map_err(|e| parse_err(e.to_string()))?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        let mut c = RunConfig::default();
        c.apply_text(&text, path)?;
        Ok(c)
    }

    /// Applies a `key=value` override.
    pub fn apply_override(&mut self, kv: &str) -> Result<()> {
        let (k, v) = kv.split_once('=').ok_or_else(|| Error::Config(format!("expected key=value, got {kv:?}")))?;
        self.set(k.trim(), v.trim())
    }

    /// Every key in canonical order; re-reading the dump gives the same config.
    pub fn dump(&self) -> String {
        let mut s = String::new();
        for k in KEYS {
            let v = self.get(k).expect("listed key");
            if v != "auto" {
                s.push_str(&format!("{k}={v}\n"));
            } else {
                s.push_str(&format!("# {k}=auto\n"));
            }
        }
        s
    }

    pub fn validate(&self) -> Result<()> {
        self.pipeline.validate()?;
        self.sampling.validate()?;
        BatchConfig::new(self.batch_size)?;
        CacheSim::new(self.cache_bytes, self.cache_line)?;
        self.intrinsics()?;
        if !(self.bbox_k > 0.0) || !(self.prior > 0.0) || !(self.max_range > 0.0) || !(self.assoc_window >= 0.0) {
            return Err(Error::Config("bbox_k, prior and max_range must be positive".into()));
        }
        if self.node_max < 2 {
            return Err(Error::Config("node_max must be at least 2".into()));
        }
        Ok(())
    }

    pub fn intrinsics(&self) -> Result<CameraIntrinsics> {
        let d = CameraIntrinsics::scaled_default(self.width, self.height);
        CameraIntrinsics::new(
            self.fx.unwrap_or(d.fx),
            self.fy.unwrap_or(d.fy),
            self.cx.unwrap_or(d.cx),
            self.cy.unwrap_or(d.cy),
            self.width,
            self.height,
            self.depth_scale,
        )
    }

    pub fn quant_config(&self) -> QuantConfig {
        QuantConfig { enabled: self.quant }
    }

    pub fn batch(&self) -> BatchConfig {
        BatchConfig { batch_size: self.batch_size }
    }

    pub fn cache(&self) -> Result<CacheSim> {
        CacheSim::new(self.cache_bytes, self.cache_line)
    }

    pub fn new_map(&self) -> Result<GaussianMap> {
        GaussianMap::with_node_max(self.quant_config(), self.bbox_k, self.node_max)
    }

    pub fn seg(&self) -> &SegParams {
        &self.pipeline.seg
    }

    pub fn fgbg(&self) -> &FgbgParams {
        &self.pipeline.fgbg
    }

    pub fn with_modes(&self, fgbg: FgbgMode, slope: SlopeMode, quant: bool) -> RunConfig {
        let mut c = self.clone();
        c.pipeline.fgbg.mode = fgbg;
        c.pipeline.seg.slope_mode = slope;
        c.quant = quant;
        c
    }
}
