//! The toy rig learns a reference walk from a mock critic that only sees
//! rendered frames.

use rigmotion::fixtures;
use rigmotion::losses::LossSchedule;
use rigmotion::optimizer::{block_means, build_critic, frame_mse, reference_walk, Optimizer, Problem, RunConfig};

fn main() {
    let rig = fixtures::toy2();
    let mut cfg = RunConfig { iterations: 300, schedule: LossSchedule::constant(), ..RunConfig::default() };
    cfg.optim.lr_rotations *= 0.5;
    cfg.optim.lr_root *= 0.5;
    cfg.optim.lr_offsets *= 0.5;
    let problem = Problem::new(&rig, "a toy walking", &cfg).unwrap();
    let reference = reference_walk(problem.skeleton(), problem.frames(), cfg.init.character_height).unwrap();
    let (target, _) = problem.render_motion(&reference, &cfg).unwrap();
    let (start, _) = problem.render_motion(&problem.init.params, &cfg).unwrap();

    let mut critic = build_critic(&problem, &cfg).unwrap();
    let mut opt = Optimizer::new(&problem, &cfg);
    let started = std::time::Instant::now();
    let hist = opt.run(critic.as_mut(), |_, _| {}).unwrap();
    let (end, _) = problem.render_motion(&opt.motion().unwrap(), &cfg).unwrap();

    let totals: Vec<f64> = hist.iter().map(|r| r.loss.total).collect();
    for (i, m) in block_means(&totals, 25).iter().enumerate() {
        println!("iterations {:>3}-{:>3}  mean loss {m:.4e}", i * 25 + 1, i * 25 + 25);
    }
    let (m0, m1) = (frame_mse(&start, &target), frame_mse(&end, &target));
    println!("frame MSE {m0:.4e} -> {m1:.4e} ({:.2}% of initial) in {:.1}s", 100.0 * m1 / m0, started.elapsed().as_secs_f64());
}
