//! Splats the biped's walk prior to a PNG sequence.
//!
//! Usage: render_frames [OUT_DIR]

use std::path::PathBuf;

use rigmotion::fixtures;
use rigmotion::io;
use rigmotion::optimizer::{Problem, RunConfig};

fn main() {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "render_frames_out".into()));
    std::fs::create_dir_all(&out).unwrap();
    let rig = fixtures::biped();
    let cfg = RunConfig::default();
    let problem = Problem::new(&rig, "a person walking", &cfg).unwrap();
    let (frames, _) = problem.render_motion(&problem.init.params, &cfg).unwrap();
    let n = io::save_png_frames(&out, &frames).unwrap();
    let px = frames.pixels.data();
    let lit = px.iter().filter(|&&v| v > -0.9).count() as f64 / px.len() as f64;
    println!("{n} frames of {}x{} written to {}; {:.1}% of pixels covered", frames.width(), frames.height(), out.display(), 100.0 * lit);
}
