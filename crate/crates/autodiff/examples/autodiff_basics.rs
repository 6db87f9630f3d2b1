//! A two-layer tanh network on the tape, its gradients, and a finite
//! difference check of the same function.

use kanfpn_autodiff::check::{check_gradients, GradCheckOptions};
use kanfpn_autodiff::{Graph, Tensor};

fn main() -> kanfpn_autodiff::Result<()> {
    let x = Tensor::from_fn([4, 3], |i| (i as f64 * 0.37).sin());
    let w1 = Tensor::from_fn([3, 5], |i| (i as f64 * 0.11).cos() * 0.5);
    let w2 = Tensor::from_fn([5, 1], |i| 0.2 * i as f64 - 0.4);

    let net = |g: &Graph<f64>, v: &[kanfpn_autodiff::Var]| {
        let h = g.tanh(g.matmul(v[0], v[1])?)?;
        let y = g.matmul(h, v[2])?;
        g.sum(g.square(y)?)
    };

    let g = Graph::new();
    let leaves = [g.leaf(x.clone()), g.leaf(w1.clone()), g.leaf(w2.clone())];
    let loss = net(&g, &leaves)?;
    let grads = g.backward(loss)?;
    println!("loss = {:.6}", g.value(loss).item());
    for (name, v) in ["x", "w1", "w2"].iter().zip(leaves) {
        let grad = grads.get_or_zeros(&g, v);
        println!("d loss / d {name}: shape {:?}, max |grad| {:.4}", grad.shape(), grad.max_abs());
    }

    let inputs = vec![("x".to_string(), x), ("w1".to_string(), w1), ("w2".to_string(), w2)];
    let report = check_gradients(&inputs, net, &GradCheckOptions::default())?;
    for group in &report.groups {
        println!("{:>3}: max relative error {:.2e}", group.name, group.max_rel_err);
    }
    Ok(())
}
