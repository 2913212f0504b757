//! Mesh Laplacian Distortion of the quadruped under rigid motion, plain LBS
//! and LBS with the spring layer.

use rigmotion::fixtures;
use rigmotion::kinematics::{forward_kinematics_params, skin};
use rigmotion::metrics::{frames_from_flat, mld};
use rigmotion::optimizer::{Problem, RunConfig};

fn main() {
    let rig = fixtures::quadruped();
    let rest = &rig.mesh.vertices;
    let faces = &rig.mesh.faces;

    let shifted: Vec<_> = rest.iter().map(|v| [v[0] + 0.4, v[1], v[2] - 1.0]).collect();
    println!("translated rest mesh  MLD {:.3e}", mld(rest, faces, &[shifted]).unwrap().mean);

    let cfg = RunConfig::default();
    let problem = Problem::new(&rig, "a dog walking", &cfg).unwrap();
    let g = forward_kinematics_params(&rig.skeleton, &problem.init.params).unwrap();
    let lbs = skin(&rig.skeleton, &rig.mesh, &g).unwrap();
    let r = mld(rest, faces, &frames_from_flat(lbs.data(), rest.len())).unwrap();
    println!("walk prior, LBS only  MLD {:.3e} (worst frame {:.3e})", r.mean, r.per_frame.iter().cloned().fold(0.0, f64::max));

    let (_, verts) = problem.render_motion(&problem.init.params, &cfg).unwrap();
    let r = mld(rest, faces, &frames_from_flat(verts.data(), rest.len())).unwrap();
    println!("walk prior, + springs MLD {:.3e}", r.mean);
}
