use std::fmt::Write as _;
use std::path::PathBuf;

use gmmmap::config::RunConfig;
use gmmmap::ingest::{load_sequence, render_sequence, write_depth_image, SyntheticScene};
use gmmmap::metrics::{auc, generate_eval_samples};
use gmmmap::build_map;

fn scratch_dir(name: &str) -> PathBuf {
    let d = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join(name);
    let _ = std::fs::remove_dir_all(&d);
    std::fs::create_dir_all(&d).unwrap();
    d
}

#[test]
fn recorded_sequence_builds_like_rendered_frames() {
    let cfg = RunConfig { frames: 5, ..RunConfig::default() };
    let intr = cfg.intrinsics().unwrap();
    let frames = render_sequence(&SyntheticScene::desk(), &intr, cfg.frames, cfg.max_range);
    let dir = scratch_dir("sequence_io");
    let (mut list, mut traj) = (String::new(), String::from("# timestamp tx ty tz qx qy qz qw\n"));
    for (i, f) in frames.iter().enumerate() {
        let name = format!("depth_{i}.pgm");
        write_depth_image(&dir.join(&name), f, intr.depth_scale).unwrap();
        let ts = i as f64 * 0.1;
        writeln!(list, "{ts:.3} {name}").unwrap();
        // The last frame gets no pose within the association window.
        if i + 1 < frames.len() {
            let p = f.pose.unwrap();
            let [w, x, y, z] = p.quaternion();
            let t = p.translation;
            writeln!(traj, "{:.3} {} {} {} {x} {y} {z} {w}", ts + 0.005, t.x, t.y, t.z).unwrap();
        }
    }
    std::fs::write(dir.join("depth.txt"), list).unwrap();
    std::fs::write(dir.join("groundtruth.txt"), traj).unwrap();

    let seq = load_sequence(&dir.join("depth.txt"), &dir.join("groundtruth.txt"), &intr, cfg.assoc_window).unwrap();
    assert_eq!(seq.frames.len(), 4);
    assert_eq!(seq.skipped, 1);
    for (a, b) in seq.frames.iter().zip(&frames) {
        assert_eq!(a.valid_count(), b.valid_count());
        for (x, y) in a.depths.iter().zip(&b.depths) {
            assert!((x - y).abs() <= 0.5 / intr.depth_scale + 1e-12);
        }
    }

    let mut map = cfg.new_map().unwrap();
    build_map(&mut map, &seq.frames, &intr, &cfg.pipeline).unwrap();
    map.audit().unwrap();
    let samples = generate_eval_samples(&seq.frames, &intr, &cfg.sampling).unwrap();
    assert!(auc(&map, &samples, cfg.prior).unwrap() > 0.95);
}
