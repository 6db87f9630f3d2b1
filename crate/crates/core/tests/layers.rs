use kanfpn::nn::{build_params, Linear, Mhsa, TransformerBlock};
use kanfpn::params::ParamStore;
use kanfpn_autodiff::{Graph, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(-1.0..1.0))
}

/// Row vector times `[in, out]` matrix plus bias, by hand.
fn affine(x: &[f64], w: &Tensor<f64>, b: &Tensor<f64>) -> Vec<f64> {
    let (n_in, n_out) = (w.shape()[0], w.shape()[1]);
    (0..n_out)
        .map(|j| b.data()[j] + (0..n_in).map(|i| x[i] * w.data()[i * n_out + j]).sum::<f64>())
        .collect()
}

#[test]
fn single_token_attention_is_projected_value() {
    let mhsa = Mhsa::new("attn", 8, 2).unwrap();
    let mut store: ParamStore<f64> = build_params(&mhsa, 3).unwrap();
    // non-zero biases so the oracle exercises them
    store.set("attn.v.b", random(&[8], 10)).unwrap();
    store.set("attn.proj.b", random(&[8], 11)).unwrap();
    let x = random(&[1, 1, 8], 4);

    let g = Graph::no_grad();
    let p = store.bind(&g);
    let (out, attn) = mhsa.forward_with_attention(&p, g.constant(x.clone())).unwrap();
    let attn = g.value(attn);
    assert_eq!(attn.shape(), &[2, 1, 1]);
    assert!(attn.data().iter().all(|&a| a == 1.0));

    let get = |n: &str| store.get(n).unwrap().value.clone();
    let v = affine(x.data(), &get("attn.v.w"), &get("attn.v.b"));
    let expect = affine(&v, &get("attn.proj.w"), &get("attn.proj.b"));
    let out = g.value(out);
    for (a, b) in out.data().iter().zip(&expect) {
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    }
}

#[test]
fn attention_rows_sum_to_one() {
    let mhsa = Mhsa::new("attn", 12, 3).unwrap();
    let store: ParamStore<f64> = build_params(&mhsa, 1).unwrap();
    let g = Graph::no_grad();
    let p = store.bind(&g);
    let x = g.constant(random(&[2, 5, 12], 2).map(|v| 3.0 * v));
    let (_, attn) = mhsa.forward_with_attention(&p, x).unwrap();
    let attn = g.value(attn);
    assert_eq!(attn.shape(), &[6, 5, 5]);
    for row in attn.data().chunks(5) {
        assert!(row.iter().all(|&a| a > 0.0));
        assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-7);
    }
}

#[test]
fn zeroed_residual_branches_give_identity() {
    let block = TransformerBlock::new("blk", 8, 2, 4).unwrap();
    let mut store: ParamStore<f64> = build_params(&block, 5).unwrap();
    for name in block.residual_branch_outputs() {
        store.zero(&name).unwrap();
    }
    let x = random(&[2, 3, 8], 6);
    let g = Graph::no_grad();
    let p = store.bind(&g);
    let y = g.value(block.forward(&p, g.constant(x.clone())).unwrap());
    assert_eq!(y.shape(), x.shape());
    assert!(y.bitwise_eq(&x));
}

#[test]
fn linear_acts_on_last_axis() {
    let lin = Linear::new("fc", 3, 2);
    let mut store = ParamStore::<f64>::new();
    store.insert("fc.w", Tensor::new([3, 2], vec![1.0, 0.0, 0.0, 1.0, 1.0, 1.0]).unwrap()).unwrap();
    store.insert("fc.b", Tensor::new([2], vec![0.5, -0.5]).unwrap()).unwrap();
    let g = Graph::no_grad();
    let p = store.bind(&g);
    let x = Tensor::new([2, 1, 3], vec![1.0, 2.0, 3.0, -1.0, 0.0, 1.0]).unwrap();
    let y = g.value(lin.forward(&p, g.constant(x)).unwrap());
    assert_eq!(y.shape(), &[2, 1, 2]);
    assert_eq!(y.data(), &[4.5, 4.5, 0.5, 0.5]);
}

#[test]
fn gradients_reach_every_parameter() {
    let block = TransformerBlock::new("blk", 8, 2, 2).unwrap();
    let store: ParamStore<f64> = build_params(&block, 7).unwrap();
    let g = Graph::new();
    let p = store.bind(&g);
    let y = block.forward(&p, g.constant(random(&[1, 4, 8], 8))).unwrap();
    let loss = g.sum(g.square(y).unwrap()).unwrap();
    let grads = g.backward(loss).unwrap();
    for (param, grad) in store.iter().zip(p.gradients(&grads)) {
        let grad = grad.unwrap_or_else(|| panic!("{} has no gradient", param.name));
        assert_eq!(grad.shape(), param.value.shape());
    }
}
