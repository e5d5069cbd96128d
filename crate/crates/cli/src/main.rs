mod commands;
mod error;
mod image;
mod source;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gmmmap::free_space::FgbgMode;
use gmmmap::Vec3;

use crate::error::CliError;

/// Configuration shared by every subcommand.
#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// key=value configuration file
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override one key (repeatable); wins over the file
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub overrides: Vec<String>,
}

/// Where frames come from: a synthetic scene or a recorded sequence.
#[derive(Debug, Args)]
pub struct SourceArgs {
    /// Scene description file (box/plane/camera lines)
    #[arg(long, conflicts_with_all = ["preset", "depth_list"])]
    pub scene: Option<PathBuf>,
    /// Built-in scene: standard, room, desk or plane
    #[arg(long, conflicts_with = "depth_list")]
    pub preset: Option<String>,
    /// Depth list (`timestamp file.pgm` per line)
    #[arg(long, requires = "trajectory")]
    pub depth_list: Option<PathBuf>,
    /// Trajectory (`timestamp tx ty tz qx qy qz qw` per line)
    #[arg(long, requires = "depth_list")]
    pub trajectory: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build a map from frames and write it to disk
    Build {
        #[command(flatten)]
        source: SourceArgs,
        #[arg(long)]
        out: PathBuf,
        /// Free-basis generation mode (baseline or direct)
        #[arg(long)]
        fgbg: Option<FgbgMode>,
        /// Append a summary row to this CSV file
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Occupancy probability at points or along a trajectory
    Query {
        map: PathBuf,
        /// x,y,z (repeatable)
        #[arg(long = "point", value_parser = parse_point, conflicts_with = "traj")]
        points: Vec<Vec3>,
        /// Waypoint file, one `x y z` per line
        #[arg(long, requires = "step")]
        traj: Option<PathBuf>,
        /// Sampling step along the trajectory (m)
        #[arg(long)]
        step: Option<f64>,
        /// Coordinates per R-tree traversal
        #[arg(long)]
        batch: Option<usize>,
    },
    /// AUC and size of a map against samples drawn from frames
    Eval {
        map: PathBuf,
        #[command(flatten)]
        source: SourceArgs,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// All eight construction variants plus single and batch queries
    Compare {
        #[command(flatten)]
        source: SourceArgs,
        /// Trajectory sampling step for the query rows (m)
        #[arg(long, default_value_t = 0.05)]
        step: f64,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Horizontal cross-section rendered to a binary PPM
    Slice {
        map: PathBuf,
        #[arg(long, allow_hyphen_values = true)]
        z: f64,
        /// Pixel size (m)
        #[arg(long)]
        res: f64,
        #[arg(long)]
        out: PathBuf,
        /// xmin,ymin,xmax,ymax; defaults to the map footprint
        #[arg(long, value_parser = parse_bounds, allow_hyphen_values = true)]
        bounds: Option<[f64; 4]>,
    },
    /// Summary of a map file
    Stats { map: PathBuf },
}

fn parse_numbers<const N: usize>(s: &str) -> Result<[f64; N], String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    if parts.len() != N {
        return Err(format!("expected {N} comma-separated numbers, got {s:?}"));
    }
    let mut out = [0.0; N];
    for (o, p) in out.iter_mut().zip(parts) {
        *o = p.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| format!("not a finite number: {p:?}"))?;
    }
    Ok(out)
}

fn parse_point(s: &str) -> Result<Vec3, String> {
    parse_numbers::<3>(s).map(Vec3::from)
}

fn parse_bounds(s: &str) -> Result<[f64; 4], String> {
    let b = parse_numbers::<4>(s)?;
    if b[2] > b[0] && b[3] > b[1] {
        Ok(b)
    } else {
        Err("bounds need xmax > xmin and ymax > ymin".into())
    }
}

#[derive(Debug, Parser)]
#[command(name = "gmmmap", version, about = "Gaussian mixture occupancy maps: build, query, evaluate")]
struct Top {
    #[command(flatten)]
    config: ConfigArgs,
    #[command(subcommand)]
    command: Command,
}

fn run(top: Top) -> Result<(), CliError> {
    let cfg = commands::resolve_config(&top.config)?;
    match top.command {
        Command::Build { source, out, fgbg, csv } => commands::build(cfg, &source, &out, fgbg, csv.as_deref()),
        Command::Query { map, points, traj, step, batch } => {
            commands::query(cfg, &map, &points, traj.as_deref(), step, batch)
        }
        Command::Eval { map, source, csv } => commands::eval(cfg, &map, &source, csv.as_deref()),
        Command::Compare { source, step, csv } => commands::compare(cfg, &source, step, csv.as_deref()),
        Command::Slice { map, z, res, out, bounds } => commands::slice(cfg, &map, z, res, &out, bounds),
        Command::Stats { map } => commands::stats(&map),
    }
}

fn main() -> ExitCode {
    let top = match Top::try_parse() {
        Ok(t) => t,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(top) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
