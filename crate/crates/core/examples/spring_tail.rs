//! Whips the toy rig's tip back and forth and prints how far the simulated
//! tail trails the skinned target.

use rigmotion::autodiff::Tensor;
use rigmotion::fixtures;
use rigmotion::kinematics::{forward_kinematics_params, skin};
use rigmotion::linalg;
use rigmotion::skeleton::MotionParams;
use rigmotion::springmass::{build_mask, SpringParams, SpringSystem};

fn main() {
    let rig = fixtures::toy2();
    let frames = 24;
    let mut motion = MotionParams::zeros(frames, rig.skeleton.len());
    for t in 0..frames {
        let phase = 2.0 * std::f64::consts::PI * t as f64 / frames as f64;
        motion.set_rotation(t, 0, [0.0, 0.0, 0.6 * phase.sin()]);
    }
    let g = forward_kinematics_params(&rig.skeleton, &motion).unwrap();
    let target = skin(&rig.skeleton, &rig.mesh, &g).unwrap();

    let mask = build_mask(&rig.skeleton, &rig.mesh);
    let v = rig.mesh.vertex_count();
    // with default stiffness the gravity sag g/k_pos exceeds d_max, so the
    // weightless run shows the inertial lag on its own
    for (label, gravity) in [("default", SpringParams::default().gravity), ("no gravity", 0.0)] {
        let sys = SpringSystem::for_mesh(&rig.mesh, &mask, &SpringParams { gravity, ..SpringParams::default() }).unwrap();
        let simulated = sys.simulate_sequence(&target).unwrap();
        println!("{label}: {} of {v} vertices dynamic, d_max {:.4}", sys.dynamic_vertices().len(), sys.d_max());
        let lag = |a: &Tensor, b: &Tensor, t: usize| {
            sys.dynamic_vertices()
                .iter()
                .map(|&i| {
                    let p = |x: &Tensor| -> [f64; 3] { std::array::from_fn(|k| x.data()[(t * v + i) * 3 + k]) };
                    linalg::norm(linalg::sub(p(a), p(b)))
                })
                .fold(0.0, f64::max)
        };
        for t in (0..frames).step_by(3) {
            let d = lag(&simulated, &target, t);
            println!("  frame {t:>2}  max lag {d:.4}  {}", "#".repeat((d * 400.0) as usize));
        }
    }
}
