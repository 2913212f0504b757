//! Drives the optimizer through the critic wire protocol against a local
//! echo server. Pass HOST:PORT to talk to a real bridge instead.

use rigmotion::fixtures;
use rigmotion::mosds::{BridgeCritic, EchoServer};
use rigmotion::optimizer::{Optimizer, Problem, RunConfig};

fn main() {
    let arg = std::env::args().nth(1);
    let server = if arg.is_none() { Some(EchoServer::spawn().unwrap()) } else { None };
    let addr = arg.unwrap_or_else(|| server.as_ref().unwrap().addr().to_string());
    println!("critic at {addr}");

    let rig = fixtures::toy2();
    let cfg = RunConfig { iterations: 5, frames: 16, ..RunConfig::default() };
    let problem = Problem::new(&rig, "a toy walking", &cfg).unwrap();
    let mut critic = BridgeCritic::new(Some(&addr));
    let mut opt = Optimizer::new(&problem, &cfg);
    opt.run(&mut critic, |r, _| {
        println!(
            "iter {:>2}  tau {:.3}  total {:.4e}  appearance {:.3e}  motion {:.3e}  {:.0} ms",
            r.iteration, r.tau, r.loss.total, r.appearance_norm, r.motion_norm, r.elapsed_ms
        )
    })
    .unwrap();
}
