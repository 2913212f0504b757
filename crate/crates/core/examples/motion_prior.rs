//! Builds the procedural prior for each bundled rig: morphology, action,
//! gait template, contacts and the NURBS fit.

use rigmotion::fixtures;
use rigmotion::motion_init::initialize_default;

fn main() {
    let prompts = [("biped", "a person jogging"), ("quadruped", "a dog trotting"), ("lamp", "a lamp hopping"), ("toy2", "a toy waving")];
    for (name, prompt) in prompts {
        let rig = fixtures::by_name(name).unwrap();
        let init = initialize_default(&rig.skeleton, prompt, 48).unwrap();
        let root_y: Vec<f64> = (0..48).map(|t| init.params.root(t)[1]).collect();
        let bob = root_y.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - root_y.iter().cloned().fold(f64::INFINITY, f64::min);
        println!(
            "{name:<10} {prompt:<18} -> {:<6} {:<10} {} control points/curve, {} feet, root bob {bob:.4}",
            init.action.as_str(),
            init.morphology.class.as_str(),
            init.curves.controls_per_curve(),
            init.contacts.len(),
        );
        for (foot, on) in &init.contacts {
            let pattern: String = on.iter().map(|&c| if c { '#' } else { '.' }).collect();
            println!("    {:<12} {pattern}", rig.skeleton.joints()[*foot].name);
        }
    }
}
