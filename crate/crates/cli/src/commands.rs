use std::fmt::Write as _;
use std::fs::{self, OpenOptions};
use std::io::Write as _;
use std::path::Path;

use gmmmap::config::RunConfig;
use gmmmap::free_space::FgbgMode;
use gmmmap::metrics::{auc, fmt_real, generate_eval_samples, map_size_bytes, EnergyReport, ProxyCounters, RunRecord};
use gmmmap::query::{query_chunked, query_chunked_traced, sample_trajectory, BatchConfig};
use gmmmap::segmentation::SlopeMode;
use gmmmap::storage::{load_map, save_map};
use gmmmap::{construct_frame, GaussianMap, Kind, Vec3};

use crate::error::{CliError, CliResult};
use crate::image::{encode_ppm, probability_color};
use crate::source::{load_frames, Frames};
use crate::{ConfigArgs, SourceArgs};

/// Largest slice image side, in pixels.
const MAX_SLICE_SIDE: usize = 4096;

/// File, then `--set` overrides; the result is logged to stderr.
pub fn resolve_config(args: &ConfigArgs) -> CliResult<RunConfig> {
    let mut cfg = match &args.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    for kv in &args.overrides {
        cfg.apply_override(kv).map_err(|e| CliError::Usage(format!("--set {kv}: {e}")))?;
    }
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    eprint!("{}", cfg.dump().lines().map(|l| format!("# config {l}\n")).collect::<String>());
    Ok(cfg)
}

fn audit(map: &GaussianMap) -> CliResult<()> {
    map.audit().map_err(CliError::Invariant)
}

fn append_csv(path: &Path, rec: &[RunRecord]) -> CliResult<()> {
    let Some(first) = rec.first() else { return Ok(()) };
    let fresh = fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
    let mut text = String::new();
    if fresh {
        text.push_str(&first.csv_header());
        text.push('\n');
    }
    for r in rec {
        text.push_str(&r.csv_row());
        text.push('\n');
    }
    OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .and_then(|mut f| f.write_all(text.as_bytes()))
        .map_err(|e| CliError::io(format!("writing {}", path.display()), e))
}

fn load(path: &Path) -> CliResult<GaussianMap> {
    let map = load_map(path)?;
    audit(&map)?;
    Ok(map)
}

struct Built {
    map: GaussianMap,
    counters: ProxyCounters,
}

fn construct(cfg: &RunConfig, src: &Frames, mut on_frame: impl FnMut(&gmmmap::FrameReport)) -> CliResult<Built> {
    let mut map = cfg.new_map()?;
    let mut counters = ProxyCounters::default();
    for frame in &src.frames {
        let report = construct_frame(&mut map, frame, &src.intr, &cfg.pipeline)?;
        counters.add_frame(&report);
        on_frame(&report);
    }
    counters.add_fusion_evals(map.counters().fusion_ops);
    audit(&map)?;
    Ok(Built { map, counters })
}

fn map_summary(rec: &mut RunRecord, map: &GaussianMap) {
    rec.push("gaussians", map.len())
        .push("occupied", map.count_kind(Kind::Occupied))
        .push("free", map.count_kind(Kind::Free))
        .push("map_size_bytes", map_size_bytes(map));
}

pub fn build(mut cfg: RunConfig, src: &SourceArgs, out: &Path, fgbg: Option<FgbgMode>, csv: Option<&Path>) -> CliResult<()> {
    if let Some(mode) = fgbg {
        cfg.pipeline.fgbg.mode = mode;
    }
    let frames = load_frames(src, &cfg)?;
    if frames.skipped > 0 {
        eprintln!("skipped {} frames without a pose", frames.skipped);
    }
    let built = construct(&cfg, &frames, |r| {
        println!(
            "frame {} segments={} clusters={} occupied_locals={} free_locals={} rays={} bases={} merged={} inserted={}",
            r.frame_index,
            r.segments,
            r.clusters,
            r.occupied_locals,
            r.free_locals,
            r.fgbg.rays,
            r.fgbg.bases,
            r.merged(),
            r.inserted()
        );
    })?;
    save_map(&built.map, out)?;
    let mut rec = RunRecord::new(format!("build/{}", cfg.pipeline.fgbg.mode));
    rec.push("frames", frames.frames.len());
    map_summary(&mut rec, &built.map);
    rec.push_counters(&built.counters);
    println!("total {}", rec.values.iter().map(|(k, v)| format!("{k}={v}")).collect::<Vec<_>>().join(" "));
    if let Some(p) = csv {
        append_csv(p, &[rec])?;
    }
    Ok(())
}

fn read_waypoints(path: &Path) -> CliResult<Vec<Vec3>> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(format!("reading {}", path.display()), e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let v: Vec<f64> = line.split_whitespace().filter_map(|f| f.parse().ok()).filter(|v: &f64| v.is_finite()).collect();
        if v.len() != 3 || line.split_whitespace().count() != 3 {
            return Err(gmmmap::Error::Parse { path: path.to_path_buf(), line: i + 1, msg: "expected `x y z`".into() }.into());
        }
        out.push(Vec3::new(v[0], v[1], v[2]));
    }
    if out.len() < 2 {
        return Err(gmmmap::Error::Parse { path: path.to_path_buf(), line: 0, msg: "need at least two waypoints".into() }.into());
    }
    Ok(out)
}

pub fn query(
    cfg: RunConfig,
    map_path: &Path,
    points: &[Vec3],
    traj: Option<&Path>,
    step: Option<f64>,
    batch: Option<usize>,
) -> CliResult<()> {
    let batch = BatchConfig::new(batch.unwrap_or(cfg.batch_size)).map_err(|e| CliError::Usage(e.to_string()))?;
    let coords = match traj {
        Some(t) => {
            let step = step.filter(|s| *s > 0.0 && s.is_finite()).ok_or_else(|| CliError::Usage("--step must be positive".into()))?;
            sample_trajectory(&read_waypoints(t)?, step)?
        }
        None if points.is_empty() => return Err(CliError::Usage("give --point or --traj".into())),
        None => points.to_vec(),
    };
    let map = load(map_path)?;
    let mut cache = cfg.cache()?;
    let stride = map.index().node_stride();
    let (results, stats) = query_chunked_traced(&map, &coords, batch, cfg.prior, &mut |a| {
        cache.access_node(a, stride);
    });
    let mut out = String::new();
    for (x, r) in coords.iter().zip(&results) {
        let _ = writeln!(out, "{} {} {} {:.6} {}", x.x, x.y, x.z, r.probability, r.status);
    }
    let _ = writeln!(
        out,
        "# coordinates={} batch_size={} searches={} nodes_visited={} bytes_touched={} pdf_evals={} cache_hit_rate={}",
        stats.coordinates,
        batch.batch_size,
        stats.rtree.searches,
        stats.nodes_visited(),
        stats.rtree.bytes_touched,
        stats.pdf_evals,
        fmt_real(cache.hit_rate())
    );
    print!("{out}");
    Ok(())
}

pub fn eval(cfg: RunConfig, map_path: &Path, src: &SourceArgs, csv: Option<&Path>) -> CliResult<()> {
    let map = load(map_path)?;
    let frames = load_frames(src, &cfg)?;
    let samples = generate_eval_samples(&frames.frames, &frames.intr, &cfg.sampling)?;
    let a = auc(&map, &samples, cfg.prior)?;
    let mut rec = RunRecord::new(format!("eval/{}", map_path.display()));
    rec.push_real("auc", a).push("samples", samples.len());
    map_summary(&mut rec, &map);
    print!("{}", rec.to_text());
    if let Some(p) = csv {
        append_csv(p, &[rec])?;
    }
    Ok(())
}

/// Waypoints crossing the middle of the map footprint.
fn probe_waypoints(map: &GaussianMap) -> Vec<Vec3> {
    let b = map.bounds();
    if b.is_empty() {
        return vec![Vec3::zeros(), Vec3::new(1.0, 0.0, 0.0)];
    }
    let d = b.hi - b.lo;
    let at = |x: f64, y: f64, z: f64| b.lo + Vec3::new(d.x * x, d.y * y, d.z * z);
    vec![at(0.25, 0.25, 0.5), at(0.75, 0.5, 0.5), at(0.5, 0.75, 0.5)]
}

pub fn compare(cfg: RunConfig, src: &SourceArgs, step: f64, csv: Option<&Path>) -> CliResult<()> {
    if !(step > 0.0 && step.is_finite()) {
        return Err(CliError::Usage("--step must be positive".into()));
    }
    let frames = load_frames(src, &cfg)?;
    let samples = generate_eval_samples(&frames.frames, &frames.intr, &cfg.sampling)?;
    let mut rows = Vec::new();
    let mut reference: Option<GaussianMap> = None;
    let mut extremes = EnergyReport::default();
    for fgbg in [FgbgMode::Baseline, FgbgMode::Direct] {
        for slope in [SlopeMode::Exact, SlopeMode::Delayed4] {
            for quant in [false, true] {
                let c = cfg.with_modes(fgbg, slope, quant);
                let built = construct(&c, &frames, |_| {})?;
                let a = auc(&built.map, &samples, c.prior)?;
                let mut rec = RunRecord::new(format!("{fgbg}/{slope}/{}", if quant { "quant" } else { "full" }));
                rec.push("kind", "construction").push_real("auc", a);
                map_summary(&mut rec, &built.map);
                rec.push_counters(&built.counters);
                rows.push(rec);
                match (fgbg, slope, quant) {
                    (FgbgMode::Baseline, SlopeMode::Exact, false) => extremes.baseline = built.counters,
                    (FgbgMode::Direct, SlopeMode::Delayed4, true) => extremes.optimized = built.counters,
                    _ => {}
                }
                if (fgbg, slope, quant) == (FgbgMode::Direct, SlopeMode::Exact, false) {
                    reference = Some(built.map);
                }
            }
        }
    }

    let map = reference.expect("direct/exact/full is always built");
    let coords = sample_trajectory(&probe_waypoints(&map), step)?;
    let mut query_counters = Vec::new();
    let mut probabilities = Vec::new();
    for b in [1, cfg.batch_size] {
        let mut cache = cfg.cache()?;
        let stride = map.index().node_stride();
        let (r, stats) = query_chunked_traced(&map, &coords, BatchConfig::new(b)?, cfg.prior, &mut |a| {
            cache.access_node(a, stride);
        });
        probabilities.push(r);
        let mut counters = ProxyCounters::default();
        counters.add_query(&stats);
        counters.add_cache(&cache);
        let mut rec = RunRecord::new(format!("query/batch{b}"));
        rec.push("kind", "query").push("auc", "");
        map_summary(&mut rec, &map);
        rec.push_counters(&counters);
        rows.push(rec);
        query_counters.push(counters);
    }
    let identical = probabilities[0].iter().zip(&probabilities[1]).all(|(a, b)| a.bit_eq(b));
    if !identical {
        return Err(CliError::Invariant("batch and single queries disagree".into()));
    }

    let mut out = String::new();
    let _ = writeln!(out, "# source {} frames={} samples={} query_coordinates={}", frames.label, frames.frames.len(), samples.len(), coords.len());
    let _ = writeln!(out, "{:<26} {:>8} {:>10} {:>9} {:>11} {:>13}", "row", "auc", "bytes", "gaussians", "fgbg_rays", "nodes_visited");
    for r in &rows {
        let g = |k: &str| r.get(k).unwrap_or("").to_string();
        let _ = writeln!(
            out,
            "{:<26} {:>8} {:>10} {:>9} {:>11} {:>13}",
            r.label,
            g("auc"),
            g("map_size_bytes"),
            g("gaussians"),
            g("fgbg_rays"),
            g("nodes_visited")
        );
    }
    let aucs: Vec<f64> = rows.iter().filter_map(|r| r.get("auc")?.parse().ok()).collect();
    let spread = aucs.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - aucs.iter().cloned().fold(f64::INFINITY, f64::min);
    let _ = writeln!(out, "auc_spread={}", fmt_real(spread));
    let _ = writeln!(out, "# construction: baseline/exact/full vs direct/delayed4/quant");
    out.push_str(&extremes.to_text());
    let q = EnergyReport { baseline: query_counters[0], optimized: query_counters[1] };
    let _ = writeln!(out, "# query: batch 1 vs batch {}", cfg.batch_size);
    out.push_str(&q.to_text());
    print!("{out}");
    if let Some(p) = csv {
        append_csv(p, &rows)?;
    }
    Ok(())
}

pub fn slice(cfg: RunConfig, map_path: &Path, z: f64, res: f64, out: &Path, bounds: Option<[f64; 4]>) -> CliResult<()> {
    if !(res > 0.0 && res.is_finite()) {
        return Err(CliError::Usage("--res must be positive".into()));
    }
    if !z.is_finite() {
        return Err(CliError::Usage("--z must be finite".into()));
    }
    let map = load(map_path)?;
    let [x0, y0, x1, y1] = bounds.unwrap_or_else(|| {
        let b = map.bounds();
        if b.is_empty() {
            [-1.0, -1.0, 1.0, 1.0]
        } else {
            [b.lo.x, b.lo.y, b.hi.x, b.hi.y]
        }
    });
    let w = ((x1 - x0) / res).ceil().max(1.0);
    let h = ((y1 - y0) / res).ceil().max(1.0);
    if w > MAX_SLICE_SIDE as f64 || h > MAX_SLICE_SIDE as f64 {
        return Err(CliError::Usage(format!("slice would be {w}x{h} pixels (limit {MAX_SLICE_SIDE}); raise --res")));
    }
    let (w, h) = (w as usize, h as usize);
    // Row 0 is the top of the image (largest y).
    let coords: Vec<Vec3> = (0..h)
        .flat_map(|r| (0..w).map(move |c| Vec3::new(x0 + (c as f64 + 0.5) * res, y1 - (r as f64 + 0.5) * res, z)))
        .collect();
    let (results, _) = query_chunked(&map, &coords, cfg.batch(), cfg.prior);
    let pixels: Vec<[u8; 3]> = results.iter().map(|r| probability_color(r.probability)).collect();
    fs::write(out, encode_ppm(w, h, &pixels)).map_err(|e| CliError::io(format!("writing {}", out.display()), e))?;
    println!("wrote {} ({w}x{h}, z={z}, res={res})", out.display());
    Ok(())
}

pub fn stats(map_path: &Path) -> CliResult<()> {
    let map = load(map_path)?;
    let mut rec = RunRecord::new(map_path.display().to_string());
    map_summary(&mut rec, &map);
    rec.push("quant", if map.quant().enabled { "on" } else { "off" })
        .push("bbox_k", map.bbox_k())
        .push_real("total_weight", map.total_weight())
        .push("tree_height", map.index().height())
        .push("tree_nodes", map.index().node_count());
    let b = map.bounds();
    if !b.is_empty() {
        rec.push("bounds", format!("{} {} {} {} {} {}", b.lo.x, b.lo.y, b.lo.z, b.hi.x, b.hi.y, b.hi.z));
    }
    print!("{}", rec.to_text());
    Ok(())
}
