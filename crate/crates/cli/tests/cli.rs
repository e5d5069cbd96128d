use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use gmmmap::ingest::{render_sequence, write_depth_image, SyntheticScene};
use gmmmap::storage::load_map;
use gmmmap::config::RunConfig;

const SMALL: &[&str] = &["--set", "width=40", "--set", "height=30", "--set", "frames=3"];

fn dir(name: &str) -> PathBuf {
    let d = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join(name);
    let _ = std::fs::remove_dir_all(&d);
    std::fs::create_dir_all(&d).unwrap();
    d
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gmmmap")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn build(map: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["build", "--preset", "standard", "--out", p(map)];
    args.extend_from_slice(SMALL);
    args.extend_from_slice(extra);
    run(&args)
}

#[test]
fn build_writes_a_loadable_map_and_logs_config() {
    let d = dir("cli_build");
    let map = d.join("m.gmm");
    let o = build(&map, &[]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let out = stdout(&o);
    assert_eq!(out.lines().filter(|l| l.starts_with("frame ")).count(), 3);
    assert!(out.lines().any(|l| l.starts_with("total ")));
    assert!(String::from_utf8_lossy(&o.stderr).contains("# config fgbg_mode=direct"));
    let m = load_map(&map).unwrap();
    assert!(!m.is_empty());
    m.audit().unwrap();
}

#[test]
fn baseline_and_direct_builds_differ_in_rays() {
    let d = dir("cli_modes");
    let rays = |mode: &str| -> u64 {
        let o = build(&d.join(format!("{mode}.gmm")), &["--fgbg", mode]);
        assert_eq!(code(&o), 0);
        let total = stdout(&o).lines().find(|l| l.starts_with("total ")).unwrap().to_string();
        total.split_whitespace().find_map(|kv| kv.strip_prefix("fgbg_rays=")).unwrap().parse().unwrap()
    };
    assert!(rays("direct") * 2 <= rays("baseline"));
}

#[test]
fn reruns_are_byte_identical() {
    let d = dir("cli_determinism");
    for name in ["a", "b"] {
        assert_eq!(code(&build(&d.join(format!("{name}.gmm")), &["--csv", p(&d.join(format!("{name}.csv")))])), 0);
        let o = run(&["slice", p(&d.join(format!("{name}.gmm"))), "--z", "1", "--res", "0.1", "--out", p(&d.join(format!("{name}.ppm")))]);
        assert_eq!(code(&o), 0);
    }
    for ext in ["gmm", "csv", "ppm"] {
        let a = std::fs::read(d.join(format!("a.{ext}"))).unwrap();
        let b = std::fs::read(d.join(format!("b.{ext}"))).unwrap();
        assert_eq!(a, b, "{ext} differs");
    }
}

#[test]
fn query_points_batches_and_errors() {
    let d = dir("cli_query");
    let map = d.join("m.gmm");
    assert_eq!(code(&build(&map, &[])), 0);

    let o = run(&["query", p(&map), "--point", "100,100,100"]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).contains("0.500000 unexplored"));

    std::fs::write(d.join("path.txt"), "# waypoints\n0.5 -0.5 1\n2.5 0.5 1\n2.0 1.0 0.8\n").unwrap();
    let traj = |b: &str| {
        let o = run(&["query", p(&map), "--traj", p(&d.join("path.txt")), "--step", "0.05", "--batch", b]);
        assert_eq!(code(&o), 0);
        let out = stdout(&o);
        let probs: Vec<String> = out.lines().filter(|l| !l.starts_with('#')).map(str::to_string).collect();
        let visits: u64 = out
            .lines()
            .last()
            .unwrap()
            .split_whitespace()
            .find_map(|kv| kv.strip_prefix("nodes_visited="))
            .unwrap()
            .parse()
            .unwrap();
        (probs, visits)
    };
    let (single, v1) = traj("1");
    let (batch, v16) = traj("16");
    assert!(single.len() > 40);
    assert_eq!(single, batch);
    assert!(v16 < v1);

    assert_eq!(code(&run(&["query", p(&map), "--point", "1,2"])), 1);
    assert_eq!(code(&run(&["query", p(&map), "--point", "a,b,c"])), 1);
    assert_eq!(code(&run(&["query", p(&map)])), 1);
    std::fs::write(d.join("bad.txt"), "0 0 0\n1 one 1\n").unwrap();
    assert_eq!(code(&run(&["query", p(&map), "--traj", p(&d.join("bad.txt")), "--step", "0.1"])), 2);
}

#[test]
fn eval_reports_auc_and_csv() {
    let d = dir("cli_eval");
    let map = d.join("m.gmm");
    assert_eq!(code(&build(&map, &[])), 0);
    let csv = d.join("eval.csv");
    let mut args = vec!["eval", p(&map), "--preset", "standard", "--csv", p(&csv)];
    args.extend_from_slice(SMALL);
    let o = run(&args);
    assert_eq!(code(&o), 0);
    let auc: f64 = stdout(&o).lines().find_map(|l| l.strip_prefix("auc=")).unwrap().parse().unwrap();
    assert!(auc >= 0.99, "auc {auc}");
    let text = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().count(), 2);
    assert!(text.starts_with("label,auc,samples"));

    let unwritable = d.join("missing_dir").join("x.csv");
    let mut args = vec!["eval", p(&map), "--preset", "standard", "--csv", p(&unwritable)];
    args.extend_from_slice(SMALL);
    assert_eq!(code(&run(&args)), 2);
}

#[test]
fn eval_of_an_empty_map_is_chance() {
    let d = dir("cli_empty");
    let map = d.join("empty.gmm");
    gmmmap::storage::save_map(&gmmmap::GaussianMap::default(), &map).unwrap();
    let mut args = vec!["eval", p(&map), "--preset", "plane"];
    args.extend_from_slice(SMALL);
    let o = run(&args);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).contains("auc=0.500000"));

    let img = d.join("empty.ppm");
    assert_eq!(code(&run(&["slice", p(&map), "--z", "0", "--res", "0.25", "--out", p(&img)])), 0);
    let bytes = std::fs::read(&img).unwrap();
    let header = b"P6\n8 8\n255\n";
    assert!(bytes.starts_with(header));
    assert!(bytes[header.len()..].chunks(3).all(|px| px == [255, 255, 0]));
}

#[test]
fn slice_shows_wall_and_free_space() {
    let d = dir("cli_slice");
    let map = d.join("m.gmm");
    assert_eq!(code(&build(&map, &[])), 0);
    let img = d.join("s.ppm");
    let o = run(&["slice", p(&map), "--z", "1", "--res", "0.02", "--bounds", "0.01,-1,3.51,1", "--out", p(&img)]);
    assert_eq!(code(&o), 0);
    let bytes = std::fs::read(&img).unwrap();
    let header = b"P6\n175 100\n255\n";
    assert!(bytes.starts_with(header));
    let (mut red, mut blue) = (Vec::new(), Vec::new());
    for (i, px) in bytes[header.len()..].chunks(3).enumerate() {
        // Pixel centres sit on multiples of 2 cm, so one column lands on the wall at x = 3.
        let x = 0.01 + ((i % 175) as f64 + 0.5) * 0.02;
        if px[0] == 255 && px[1] < 64 {
            red.push(x);
        }
        if px[2] > 192 {
            blue.push(x);
        }
    }
    assert!(red.len() >= 50, "wall pixels {}", red.len());
    assert!(red.iter().all(|x| *x > 1.7 && *x < 3.01));
    assert!(blue.len() >= 100, "free pixels {}", blue.len());
    assert!(blue.iter().all(|x| *x < 3.0));

    assert_eq!(code(&run(&["slice", p(&map), "--z", "1", "--res", "0", "--out", p(&img)])), 1);
}

#[test]
fn compare_has_ten_rows_and_consistent_accuracy() {
    let d = dir("cli_compare");
    let csv = d.join("cmp.csv");
    let o = run(&[
        "compare", "--preset", "standard", "--set", "width=80", "--set", "height=60", "--set", "frames=4", "--csv", p(&csv),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(&csv).unwrap();
    let rows: Vec<&str> = text.lines().skip(1).collect();
    assert_eq!(rows.len(), 10);
    assert_eq!(rows.iter().filter(|r| r.contains(",construction,")).count(), 8);
    assert_eq!(rows.iter().filter(|r| r.contains(",query,")).count(), 2);

    let header: Vec<&str> = text.lines().next().unwrap().split(',').collect();
    let col = |name: &str| header.iter().position(|h| *h == name).unwrap();
    let field = |row: &str, name: &str| row.split(',').nth(col(name)).unwrap().to_string();
    let construction: Vec<&&str> = rows.iter().filter(|r| r.contains(",construction,")).collect();
    let aucs: Vec<f64> = construction.iter().map(|r| field(r, "auc").parse().unwrap()).collect();
    let spread = aucs.iter().cloned().fold(f64::MIN, f64::max) - aucs.iter().cloned().fold(f64::MAX, f64::min);
    assert!(spread <= 0.01, "auc spread {spread}");
    for r in &construction {
        if r.starts_with("direct/") {
            let mirror = r.replacen("direct/", "baseline/", 1);
            let label = mirror.split(',').next().unwrap();
            let base = construction.iter().find(|b| b.starts_with(label)).unwrap();
            let rays: u64 = field(r, "fgbg_rays").parse().unwrap();
            let base_rays: u64 = field(base, "fgbg_rays").parse().unwrap();
            assert!(rays < base_rays);
        }
    }
    assert!(stdout(&o).contains("visit_ratio="));
}

#[test]
fn recorded_sequence_and_missing_inputs() {
    let d = dir("cli_sequence");
    let cfg = RunConfig { width: 40, height: 30, frames: 3, ..RunConfig::default() };
    let intr = cfg.intrinsics().unwrap();
    let frames = render_sequence(&SyntheticScene::desk(), &intr, 3, 10.0);
    let mut list = String::new();
    let mut traj = String::new();
    for (i, f) in frames.iter().enumerate() {
        write_depth_image(&d.join(format!("{i}.pgm")), f, intr.depth_scale).unwrap();
        list.push_str(&format!("{i}.0 {i}.pgm\n"));
        let pose = f.pose.unwrap();
        let [w, x, y, z] = pose.quaternion();
        let t = pose.translation;
        traj.push_str(&format!("{i}.0 {} {} {} {x} {y} {z} {w}\n", t.x, t.y, t.z));
    }
    std::fs::write(d.join("depth.txt"), list).unwrap();
    std::fs::write(d.join("gt.txt"), traj).unwrap();
    let map = d.join("seq.gmm");
    let (list, gt, nope) = (d.join("depth.txt"), d.join("gt.txt"), d.join("nope.txt"));
    let mut args = vec!["build", "--depth-list", p(&list), "--trajectory", p(&gt), "--out", p(&map)];
    args.extend_from_slice(SMALL);
    let o = run(&args);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(stdout(&o).lines().filter(|l| l.starts_with("frame ")).count(), 3);

    let mut args = vec!["build", "--depth-list", p(&list), "--trajectory", p(&nope), "--out", p(&map)];
    args.extend_from_slice(SMALL);
    let o = run(&args);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("nope.txt"));
}

#[test]
fn stats_config_file_and_usage() {
    let d = dir("cli_stats");
    let map = d.join("m.gmm");
    std::fs::write(d.join("run.cfg"), "# small run\nwidth=40\nheight=30\nframes=2\nquant=on\n").unwrap();
    let o = run(&["build", "--preset", "desk", "--config", p(&d.join("run.cfg")), "--out", p(&map)]);
    assert_eq!(code(&o), 0);
    let o = run(&["stats", p(&map)]);
    assert_eq!(code(&o), 0);
    let out = stdout(&o);
    assert!(out.contains("quant=on"));
    let records: usize = out.lines().find_map(|l| l.strip_prefix("gaussians=")).unwrap().parse().unwrap();
    let bytes: usize = out.lines().find_map(|l| l.strip_prefix("map_size_bytes=")).unwrap().parse().unwrap();
    assert_eq!(bytes, 36 + 34 * records);
    assert_eq!(std::fs::metadata(&map).unwrap().len() as usize, bytes);

    std::fs::write(d.join("bad.cfg"), "width=40\nnot_a_key=1\n").unwrap();
    let o = run(&["stats", p(&map), "--config", p(&d.join("bad.cfg"))]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains(":2:"));
    std::fs::write(d.join("broken.cfg"), "width 40\n").unwrap();
    assert_eq!(code(&run(&["stats", p(&map), "--config", p(&d.join("broken.cfg"))])), 2);
    assert_eq!(code(&run(&["stats", p(&map), "--set", "width=-3"])), 1);
    assert_eq!(code(&run(&["frobnicate"])), 1);
    assert_eq!(code(&run(&["build", "--out", p(&map)])), 1);
    assert_eq!(code(&run(&["build", "--preset", "attic", "--out", p(&map)])), 1);

    let mut corrupt = std::fs::read(&map).unwrap();
    let n = corrupt.len();
    corrupt[n / 2] ^= 1;
    std::fs::write(d.join("corrupt.gmm"), corrupt).unwrap();
    let o = run(&["stats", p(&d.join("corrupt.gmm"))]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("checksum"));
}
