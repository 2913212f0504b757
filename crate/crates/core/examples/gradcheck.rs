//! Reverse-mode gradients on the tape, checked against central differences.

use rigmotion::autodiff::check::{central_difference, compare};
use rigmotion::autodiff::{Tape, Tensor};
use rigmotion::losses;

fn main() {
    let x0: Vec<f64> = (0..24).map(|i| (i as f64 * 0.37).sin()).collect();
    let loss = |p: &Tensor| losses::smoothness_loss(p, 1.0, 0.5).unwrap();

    let tape = Tape::new();
    let leaf = tape.leaf(&Tensor::new(vec![6, 4], x0.clone()).unwrap());
    let value = loss(&leaf);
    let grad = tape.backward(&value).unwrap().wrt(&leaf).to_vec();

    let fd = central_difference(|v| loss(&Tensor::new(vec![6, 4], v.to_vec()).unwrap()).item(), &x0, 1e-6);
    let cmp = compare(&grad, &fd, 1e-3);
    println!("smoothness loss {:.6}", value.item());
    println!("max relative error {:.2e}, max absolute error on small components {:.2e}", cmp.max_rel, cmp.max_abs_small);
    println!("within 1e-4: {}", cmp.within(1e-4, 1e-6));
}
