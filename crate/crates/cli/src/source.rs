use gmmmap::config::RunConfig;
use gmmmap::ingest::{load_scene, load_sequence, render_sequence, DepthFrame, SyntheticScene};
use gmmmap::CameraIntrinsics;

use crate::error::{CliError, CliResult};
use crate::SourceArgs;

pub struct Frames {
    pub label: String,
    pub intr: CameraIntrinsics,
    pub frames: Vec<DepthFrame>,
    pub skipped: usize,
}

pub fn preset(name: &str) -> CliResult<SyntheticScene> {
    match name {
        "standard" => Ok(SyntheticScene::standard()),
        "room" => Ok(SyntheticScene::box_room(2.0, 1.5, 2.5)),
        "desk" => Ok(SyntheticScene::desk()),
        "plane" => Ok(SyntheticScene::frontal_plane(2.0)),
        other => Err(CliError::Usage(format!("unknown preset {other:?} (standard, room, desk, plane)"))),
    }
}

pub fn load_frames(src: &SourceArgs, cfg: &RunConfig) -> CliResult<Frames> {
    let intr = cfg.intrinsics()?;
    let render = |label: String, scene: SyntheticScene| Frames {
        label,
        intr,
        frames: render_sequence(&scene, &intr, cfg.frames, cfg.max_range),
        skipped: 0,
    };
    match (&src.scene, &src.preset, &src.depth_list, &src.trajectory) {
        (Some(path), _, _, _) => Ok(render(path.display().to_string(), load_scene(path)?)),
        (_, Some(name), _, _) => Ok(render(name.clone(), preset(name)?)),
        (_, _, Some(list), Some(traj)) => {
            let seq = load_sequence(list, traj, &intr, cfg.assoc_window)?;
            Ok(Frames { label: list.display().to_string(), intr, frames: seq.frames, skipped: seq.skipped })
        }
        _ => Err(CliError::Usage("give --scene, --preset, or --depth-list with --trajectory".into())),
    }
}
