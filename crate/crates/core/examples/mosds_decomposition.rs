//! Splits a critic response into appearance and motion parts and shows the
//! proxy-loss gradient it induces.

use rigmotion::autodiff::{Tape, Tensor};
use rigmotion::mosds::{self, decompose, proxy_loss, Critic, CriticRequest, MockCritic, MosdsConfig};

fn main() {
    let (t, c, h, w) = (6, 1, 8, 8);
    let n = t * c * h * w;
    // a bright square drifting right, and a still target
    let frames: Vec<f64> = (0..n)
        .map(|i| {
            let (tt, x, y) = (i / (h * w), i % w, (i / w) % h);
            if (2..5).contains(&y) && x >= tt && x < tt + 3 {
                1.0
            } else {
                -1.0
            }
        })
        .collect();
    let target: Vec<f64> = (0..n).map(|i| if (2..5).contains(&((i / w) % h)) && (2..5).contains(&(i % w)) { 1.0 } else { -1.0 }).collect();
    let mut critic = MockCritic::new(&Tensor::new(vec![t, c, h, w], target).unwrap());

    let cfg = MosdsConfig::default();
    let tau = mosds::sample_timestep(&mut mosds::iteration_rng(0, 1), cfg.tau_min, cfg.tau_max);
    let req = CriticRequest {
        frames: frames.clone(),
        frame_shape: vec![t, c, h, w],
        prompt: "a square".into(),
        tau,
        cfg_scale: cfg.cfg_scale,
        seed: 1,
    };
    let resp = critic.evaluate(&req).unwrap();
    let delta: Vec<f64> = mosds::cfg_combine(&resp, cfg.cfg_scale).iter().zip(&resp.eps_injected).map(|(e, n)| e - n).collect();
    let (appearance, motion) = decompose(&delta, t).unwrap();
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    println!("tau {tau:.3}  |Δε| {:.3}  |appearance| {:.3}  |motion| {:.3}", norm(&delta), norm(&appearance), norm(&motion));
    let per = n / t;
    for tt in 0..t {
        let m = &motion[tt * per..(tt + 1) * per];
        println!("frame {tt}: motion energy {:.3}", norm(m));
    }

    let tape = Tape::new();
    let z = tape.leaf(&Tensor::new(vec![t, c * h * w], frames).unwrap());
    let g = tape.backward(&proxy_loss(&z, &delta, 1.0).unwrap()).unwrap().wrt(&z);
    let ratio = g.data().iter().zip(&delta).filter(|(_, d)| d.abs() > 1e-12).map(|(g, d)| g / d).next().unwrap();
    println!("proxy gradient / Δε = {ratio:.6e} (2/N = {:.6e})", 2.0 / n as f64);
}
