//! Full pipeline from a rig bundle on disk: load, optimize with the mock
//! critic, export motion, meshes and frames.
//!
//! Usage: animate_pipeline [RIG_DIR] [PROMPT] [OUT_DIR]

use std::path::PathBuf;

use rigmotion::io::{self, MotionFile};
use rigmotion::optimizer::{build_critic, Optimizer, Problem, RunConfig};

fn main() {
    let mut args = std::env::args().skip(1);
    let rig_dir = PathBuf::from(args.next().unwrap_or_else(|| concat!(env!("CARGO_MANIFEST_DIR"), "/assets/rigs/lamp").into()));
    let prompt = args.next().unwrap_or_else(|| "a desk lamp hopping".into());
    let out = PathBuf::from(args.next().unwrap_or_else(|| "animate_pipeline_out".into()));

    let loaded = io::load_rig(&rig_dir).unwrap();
    for w in &loaded.warnings {
        eprintln!("warning: {w}");
    }
    let cfg = RunConfig { iterations: 40, ..RunConfig::default() };
    let problem = Problem::with_mask(&loaded.rig, &prompt, &cfg, loaded.mask.clone()).unwrap();
    println!(
        "{}: {} joints, {} vertices, action {}",
        loaded.rig.name,
        problem.skeleton().len(),
        loaded.rig.mesh.vertex_count(),
        problem.init.action.as_str()
    );

    let mut critic = build_critic(&problem, &cfg).unwrap();
    let mut opt = Optimizer::new(&problem, &cfg);
    opt.run(critic.as_mut(), |r, _| {
        if r.iteration % 10 == 0 {
            println!("iter {:>3}  total {:.4e}  grad {:.3e}", r.iteration, r.loss.total, r.grad_norm);
        }
    })
    .unwrap();

    let motion = opt.motion().unwrap();
    let (frames, verts) = problem.render_motion(&motion, &cfg).unwrap();
    for sub in ["frames", "mesh"] {
        std::fs::create_dir_all(out.join(sub)).unwrap();
    }
    io::save_motion(&out.join("motion.json"), &MotionFile::new(problem.skeleton(), &motion, cfg.fps)).unwrap();
    let n = io::save_obj_sequence(
        &out.join("mesh"),
        verts.data(),
        loaded.rig.mesh.vertex_count(),
        &loaded.rig.mesh.faces,
        loaded.rig.mesh.colors.as_deref(),
    )
    .unwrap();
    io::save_png_frames(&out.join("frames"), &frames).unwrap();
    println!("wrote motion.json, {n} meshes and {} frames to {}", frames.frames(), out.display());
}
