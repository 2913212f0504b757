//! Poses the bundled biped and skins its mesh.

use rigmotion::fixtures;
use rigmotion::kinematics::{forward_kinematics_params, skin};
use rigmotion::skeleton::MotionParams;

fn main() {
    let rig = fixtures::biped();
    let skel = &rig.skeleton;
    let mut pose = MotionParams::zeros(1, skel.len());
    for (j, joint) in skel.joints().iter().enumerate() {
        if joint.name.starts_with("shoulder") {
            pose.set_rotation(0, j, [0.0, 0.0, if joint.name.ends_with("_l") { 1.2 } else { -1.2 }]);
        }
    }
    pose.set_root(0, [0.0, 0.05, 0.3]);

    let g = forward_kinematics_params(skel, &pose).unwrap();
    for (j, joint) in skel.joints().iter().enumerate() {
        let p = g.position(j).unwrap().to_vec();
        println!("{:<14} rest {:>7.3?}  posed [{:>6.3}, {:>6.3}, {:>6.3}]", joint.name, skel.rest_position(j), p[0], p[1], p[2]);
    }
    let verts = skin(skel, &rig.mesh, &g).unwrap();
    let ys: Vec<f64> = verts.data().chunks(3).map(|v| v[1]).collect();
    println!(
        "{} vertices, y range [{:.3}, {:.3}]",
        ys.len(),
        ys.iter().cloned().fold(f64::INFINITY, f64::min),
        ys.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    );
}
