//! Evaluates each regularizer on the biped's walk prior and on a perturbed copy.

use rigmotion::fixtures;
use rigmotion::kinematics::{forward_kinematics_params, skin};
use rigmotion::losses::{self, PhysicsContext, RomLimits};
use rigmotion::motion_init::initialize_default;
use rigmotion::rig::Rig;
use rigmotion::skeleton::MotionParams;

fn report(label: &str, rig: &Rig, ctx: &PhysicsContext, p: &MotionParams) {
    let rot = p.rotations_tensor();
    let pose = losses::pose_vector(&rot, &p.root_tensor()).unwrap();
    let g = forward_kinematics_params(&rig.skeleton, p).unwrap();
    let verts = skin(&rig.skeleton, &rig.mesh, &g).unwrap();
    let feet = g.positions().unwrap().permute(&[1, 0, 2]).unwrap().index_select(&ctx.feet).unwrap().permute(&[1, 0, 2]).unwrap();
    println!(
        "{label:<10} smooth {:.3e}  rom {:.3e}  sym {:.3e}  cyclic {:.3e}  ground {:.3e}  contact {:.3e}",
        losses::smoothness_loss(&pose, 1.0, 1.0).unwrap().item(),
        losses::rom_loss(&rot, &ctx.rom_limits).unwrap().item(),
        losses::symmetry_loss(&rot, &ctx.pairs).unwrap().item(),
        losses::cyclic_loss(&pose).unwrap().item(),
        losses::ground_loss(&verts, ctx.ground_height).unwrap().item(),
        losses::contact_loss(&feet, ctx.contact_threshold).unwrap().item(),
    );
}

fn main() {
    let rig = fixtures::biped();
    let ctx = PhysicsContext::new(&rig.skeleton, &RomLimits::default(), 1.0, 0.0);
    let init = initialize_default(&rig.skeleton, "walk", 48).unwrap();
    report("prior", &rig, &ctx, &init.params);

    let mut noisy = init.params.clone();
    for (i, r) in noisy.rotations.iter_mut().enumerate() {
        *r += 0.3 * ((i * 7919) as f64).sin();
    }
    for t in 0..48 {
        let mut p = noisy.root(t);
        p[1] -= 0.1;
        noisy.set_root(t, p);
    }
    report("perturbed", &rig, &ctx, &noisy);
}
