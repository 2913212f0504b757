use rigmotion::fixtures;
use rigmotion::optimizer::{build_critic, IterationRecord, MockTarget, Optimizer, Parameters, Problem, RunConfig};

fn run_to_init_target(cfg: &RunConfig) -> (Parameters, Parameters, Vec<IterationRecord>) {
    let rig = fixtures::toy2();
    let problem = Problem::new(&rig, "a toy walking", cfg).unwrap();
    let mut critic = build_critic(&problem, cfg).unwrap();
    let mut opt = Optimizer::new(&problem, cfg);
    let start = opt.params().clone();
    let hist = opt.run(critic.as_mut(), |_, _| {}).unwrap();
    (start, opt.params().clone(), hist)
}

fn distance(a: &Parameters, b: &Parameters) -> f64 {
    let d = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| (p - q).powi(2)).sum::<f64>();
    (d(&a.rotations, &b.rotations) + d(&a.root, &b.root) + d(&a.offsets, &b.offsets)).sqrt()
}

fn init_target(iterations: usize) -> RunConfig {
    let mut cfg = RunConfig { iterations, ..RunConfig::default() };
    cfg.critic.mock_target = MockTarget::Initialization;
    cfg
}

/// A critic whose target is the starting render gives exactly zero gradient,
/// and without regularizers or weight decay nothing moves. Any nonzero
/// residue would be scaled up to a full Adam step, so exactness matters.
#[test]
fn critic_alone_leaves_a_matching_motion_in_place() {
    let mut cfg = init_target(60);
    cfg.optim.weight_decay = 0.0;
    let w = &mut cfg.weights;
    for l in [
        &mut w.lambda_smooth,
        &mut w.lambda_rom,
        &mut w.lambda_sym,
        &mut w.lambda_cyclic,
        &mut w.lambda_ground,
        &mut w.lambda_contact,
        &mut w.lambda_offset,
        &mut w.lambda_phy,
    ] {
        *l = 0.0;
    }
    let (start, end, hist) = run_to_init_target(&cfg);
    assert!(hist.iter().all(|r| r.loss.proxy == 0.0 && r.grad_norm == 0.0));
    let d = distance(&start, &end);
    assert!(d < 1e-3, "parameters moved by {d:.3e}");
}

#[test]
fn matching_target_starts_at_the_physics_floor() {
    let (_, _, hist) = run_to_init_target(&init_target(1));
    let r = &hist[0].loss;
    assert_eq!(r.proxy, 0.0);
    let floor = r.smooth + r.rom + r.sym + r.cyclic + r.ground + r.contact + r.offset + r.physics + r.env;
    assert!(r.total <= floor * (1.0 + 1e-12) && r.total > 0.0, "{} vs {floor}", r.total);
}
