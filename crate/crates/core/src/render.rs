//! Grayscale frames of the difference map and the leg polyline of an
//! episode.
//!
//! Frames are binary PGM (`P5`, maxval 255), row 0 at `y = 0`. Mid-gray is
//! at target, white is excess and black is deficit, on a symmetric scale
//! shared by all frames of the episode.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::heightmap::{DiffMap, Grid};
use crate::mdp::{pixel_to_world, Env};
use crate::episode::EpisodeRecord;

pub fn pgm_bytes(g: &Grid, scale: f64) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", g.cols(), g.rows()).into_bytes();
    let scale = if scale > 0.0 { scale } else { 1.0 };
    out.extend(g.values().iter().map(|&v| (128.0 + 127.0 * (v / scale).clamp(-1.0, 1.0)).round() as u8));
    out
}

/// Re-simulates `record` and writes `frame_<t>.pgm` for `t = 0..=T` plus
/// `trajectory.txt` (`t kind x y` per vertex, kinds `start`, `push`, `back`
/// and `next`). Returns the number of frames.
pub fn render_episode(record: &EpisodeRecord, out: &Path) -> Result<usize> {
    std::fs::create_dir_all(out).map_err(Error::io_at(out))?;
    let (mut env, _) = Env::reset(&record.config, &record.spec, record.seed)?;
    let first = env.delta();
    let scale = first.values().iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-3);
    let write_frame = |t: usize, d: &DiffMap| -> Result<()> {
        let path = out.join(format!("frame_{t:04}.pgm"));
        std::fs::write(&path, pgm_bytes(d, scale)).map_err(Error::io_at(&path))
    };
    write_frame(0, &first)?;
    let mut poly = String::from("# t kind x y\n");
    for (t, s) in record.steps.iter().enumerate() {
        let pose = env.dozer().pose;
        let fov = *env.fov();
        let cs = record.config.cell_size;
        let p = pixel_to_world((s.action.p.0 as f64, s.action.p.1 as f64), &pose, &fov, cs);
        let q = pixel_to_world((s.action.s.0 as f64, s.action.s.1 as f64), &pose, &fov, cs);
        for (kind, (x, y)) in [("start", (pose.x, pose.y)), ("push", p), ("back", (pose.x, pose.y)), ("next", q)] {
            let _ = writeln!(poly, "{t} {kind} {x} {y}");
        }
        env.step(s.action)?;
        write_frame(t + 1, &env.delta())?;
    }
    let path = out.join("trajectory.txt");
    std::fs::write(&path, poly).map_err(Error::io_at(&path))?;
    Ok(record.steps.len() + 1)
}
