//! Reverse-mode gradients of every op against central differences.

use kanfpn_autodiff::check::{check_gradients, finite_diff_grad, GradCheckOptions};
use kanfpn_autodiff::{Graph, Pool, Reduce, Result, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const OP_TOL: f64 = 1e-6;
const SEEDS: [u64; 3] = [1, 2, 3];

fn random(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(-1.0..1.0))
}

/// Contracts an op output with fixed random weights so every output
/// element contributes to the checked scalar.
fn project(g: &Graph<f64>, y: Var, seed: u64) -> Result<Var> {
    let r = g.constant(random(&g.shape(y), seed ^ 0xABCD));
    let p = g.mul(y, r)?;
    g.sum(p)
}

fn check<F>(name: &str, inputs: Vec<(&str, Tensor<f64>)>, f: F)
where
    F: Fn(&Graph<f64>, &[Var]) -> Result<Var> + Copy,
{
    for seed in SEEDS {
        let named: Vec<(String, Tensor<f64>)> = inputs
            .iter()
            .enumerate()
            .map(|(i, (n, t))| (n.to_string(), random(t.shape(), seed * 31 + i as u64)))
            .collect();
        let opts = GradCheckOptions {
            seed,
            ..Default::default()
        };
        let report = check_gradients(&named, |g, v| project(g, f(g, v)?, seed), &opts).unwrap();
        let worst = report.worst().unwrap();
        assert!(
            report.passes(OP_TOL),
            "{name} seed {seed}: {} rel err {:e}",
            worst.name,
            worst.max_rel_err
        );
    }
}

fn shape(s: &[usize]) -> Tensor<f64> {
    Tensor::zeros(s.to_vec())
}

#[test]
fn elementwise_unary() {
    check("tanh", vec![("x", shape(&[2, 5]))], |g, v| g.tanh(v[0]));
    check("sigmoid", vec![("x", shape(&[2, 5]))], |g, v| g.sigmoid(v[0]));
    check("silu", vec![("x", shape(&[2, 5]))], |g, v| g.silu(v[0]));
    check("relu", vec![("x", shape(&[2, 5]))], |g, v| g.relu(v[0]));
    check("square", vec![("x", shape(&[2, 5]))], |g, v| g.square(v[0]));
    check("scale", vec![("x", shape(&[2, 5]))], |g, v| g.scale(v[0], -1.7));
}

#[test]
fn elementwise_binary_with_broadcast() {
    check("add", vec![("a", shape(&[2, 3])), ("b", shape(&[2, 3]))], |g, v| g.add(v[0], v[1]));
    check("sub", vec![("a", shape(&[2, 3, 4])), ("b", shape(&[4]))], |g, v| g.sub(v[0], v[1]));
    check("mul", vec![("a", shape(&[2, 3, 2, 2])), ("b", shape(&[2, 3, 1, 1]))], |g, v| g.mul(v[0], v[1]));
    check("mul_sym", vec![("a", shape(&[1, 4])), ("b", shape(&[3, 1]))], |g, v| g.mul(v[0], v[1]));
}

#[test]
fn matmul_variants() {
    check("matmul", vec![("a", shape(&[3, 4])), ("b", shape(&[4, 2]))], |g, v| g.matmul(v[0], v[1]));
    check("bmm", vec![("a", shape(&[2, 3, 4])), ("b", shape(&[2, 4, 5]))], |g, v| {
        g.batch_matmul(v[0], v[1], false, false)
    });
    check("bmm_bt", vec![("a", shape(&[2, 3, 4])), ("b", shape(&[2, 5, 4]))], |g, v| {
        g.batch_matmul(v[0], v[1], false, true)
    });
    check("bmm_at", vec![("a", shape(&[2, 4, 3])), ("b", shape(&[2, 4, 5]))], |g, v| {
        g.batch_matmul(v[0], v[1], true, false)
    });
}

#[test]
fn conv2d_grid() {
    for (stride, padding, groups) in [(1, 0, 1), (1, 1, 2), (2, 1, 1), (2, 0, 2)] {
        check(
            "conv2d",
            vec![("x", shape(&[2, 4, 6, 5])), ("w", shape(&[4, 4 / groups, 3, 3])), ("b", shape(&[4]))],
            move |g, v| g.conv2d(v[0], v[1], Some(v[2]), stride, padding, groups),
        );
    }
    check("conv2d_1x1", vec![("x", shape(&[2, 3, 4, 4])), ("w", shape(&[5, 3, 1, 1]))], |g, v| {
        g.conv2d(v[0], v[1], None, 1, 0, 1)
    });
}

#[test]
fn conv_transpose2d() {
    check(
        "conv_transpose2d",
        vec![("x", shape(&[2, 3, 3, 2])), ("w", shape(&[3, 2, 4, 4])), ("b", shape(&[2]))],
        |g, v| g.conv_transpose2d(v[0], v[1], Some(v[2]), 2, 1),
    );
}

#[test]
fn pooling_and_resampling() {
    check("max_pool", vec![("x", shape(&[2, 2, 4, 6]))], |g, v| g.pool2d(Pool::Max, v[0], 2, 2));
    check("avg_pool", vec![("x", shape(&[2, 2, 5, 5]))], |g, v| g.pool2d(Pool::Avg, v[0], 3, 2));
    check("global_max", vec![("x", shape(&[2, 3, 3, 3]))], |g, v| g.pool2d(Pool::GlobalMax, v[0], 0, 0));
    check("global_avg", vec![("x", shape(&[2, 3, 3, 3]))], |g, v| g.pool2d(Pool::GlobalAvg, v[0], 0, 0));
    check("upsample", vec![("x", shape(&[1, 2, 3, 2]))], |g, v| g.upsample_nearest2x(v[0]));
}

#[test]
fn normalization() {
    check(
        "norm2d",
        vec![("x", shape(&[2, 3, 4, 4])), ("gamma", shape(&[3])), ("beta", shape(&[3]))],
        |g, v| g.norm2d(v[0], v[1], v[2], 1e-5),
    );
    check(
        "layer_norm",
        vec![("x", shape(&[2, 3, 6])), ("gamma", shape(&[6])), ("beta", shape(&[6]))],
        |g, v| g.layer_norm(v[0], v[1], v[2], 1e-5),
    );
}

#[test]
fn shape_ops_and_reductions() {
    check("reshape", vec![("x", shape(&[2, 6]))], |g, v| g.reshape(v[0], &[3, 4]));
    check("permute", vec![("x", shape(&[2, 3, 4]))], |g, v| g.permute(v[0], &[2, 0, 1]));
    check("concat", vec![("a", shape(&[2, 1, 3])), ("b", shape(&[2, 2, 3]))], |g, v| g.concat(v, 1));
    check("narrow", vec![("x", shape(&[2, 5, 3]))], |g, v| g.narrow(v[0], 1, 1, 3));
    check("sum_axis", vec![("x", shape(&[2, 3, 4]))], |g, v| g.reduce(v[0], 1, Reduce::Sum));
    check("mean_axis", vec![("x", shape(&[2, 3, 4]))], |g, v| g.reduce(v[0], 2, Reduce::Mean));
    check("max_axis", vec![("x", shape(&[2, 3, 4]))], |g, v| g.reduce(v[0], 1, Reduce::Max));
    check("softmax", vec![("x", shape(&[3, 5]))], |g, v| g.softmax(v[0]));
    check("mean", vec![("x", shape(&[3, 5]))], |g, v| {
        let m = g.mean(v[0])?;
        g.reshape(m, &[1])
    });
}

#[test]
fn backward_examples() {
    // sum(w·x) with constant x: grad(w) = x
    let g = Graph::<f64>::new();
    let x = random(&[4], 5);
    let w = g.leaf(random(&[4], 6));
    let xv = g.constant(x.clone());
    let p = g.mul(w, xv).unwrap();
    let root = g.sum(p).unwrap();
    let grads = g.backward(root).unwrap();
    assert_eq!(grads.get(w).unwrap().data(), x.data());
    assert!(grads.get(xv).is_none());

    // sum(tanh(w)) at w = 0: grad 1 everywhere
    let g = Graph::<f64>::new();
    let w = g.leaf(Tensor::zeros([3]));
    let t = g.tanh(w).unwrap();
    let root = g.sum(t).unwrap();
    let grads = g.backward(root).unwrap();
    assert_eq!(grads.get(w).unwrap().data(), &[1.0; 3]);

    // a graph supports one backward only
    assert!(g.backward(root).is_err());
}

/// Three-layer tanh MLP: backward and finite differences agree per weight.
#[test]
fn mlp_backward_matches_finite_differences() {
    for seed in SEEDS {
        let x = random(&[4, 3], seed);
        let ws = [random(&[3, 5], seed + 10), random(&[5, 4], seed + 20), random(&[4, 2], seed + 30)];
        let forward = |g: &Graph<f64>, w: &[Var]| -> Result<Var> {
            let mut h = g.constant(x.clone());
            for (i, &wi) in w.iter().enumerate() {
                h = g.matmul(h, wi)?;
                if i < 2 {
                    h = g.tanh(h)?;
                }
            }
            g.sum(h)
        };
        let g = Graph::new();
        let vars: Vec<Var> = ws.iter().map(|w| g.leaf(w.clone())).collect();
        let root = forward(&g, &vars).unwrap();
        let grads = g.backward(root).unwrap();
        for (i, w) in ws.iter().enumerate() {
            let numeric = finite_diff_grad(
                |probe| {
                    let ng = Graph::no_grad();
                    let vs: Vec<Var> = ws
                        .iter()
                        .enumerate()
                        .map(|(j, wj)| ng.constant(if j == i { probe.clone() } else { wj.clone() }))
                        .collect();
                    let r = forward(&ng, &vs).unwrap();
                    ng.value(r).item()
                },
                w,
                1e-5,
            );
            let analytic = grads.get(vars[i]).unwrap();
            for (a, n) in analytic.data().iter().zip(numeric.data()) {
                let rel = (a - n).abs() / a.abs().max(n.abs()).max(1e-4);
                assert!(rel <= 1e-6, "layer {i}: {a} vs {n}");
            }
        }
    }
}
