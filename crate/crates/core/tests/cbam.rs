use kanfpn::cbam::{Cbam, CbamConfig};
use kanfpn::nn::build_params;
use kanfpn::params::ParamStore;
use kanfpn_autodiff::{Graph, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(shape: &[usize], seed: u64, range: f64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(-range..range))
}

fn zeroed(cbam: &Cbam) -> ParamStore<f64> {
    let mut store: ParamStore<f64> = build_params(cbam, 0).unwrap();
    let names: Vec<String> = store.names().map(str::to_string).collect();
    for n in names {
        store.zero(&n).unwrap();
    }
    store
}

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

#[test]
fn zero_parameters_give_half_gates_and_quarter_output() {
    let cbam = Cbam::new("cbam", CbamConfig::new(8)).unwrap();
    let store = zeroed(&cbam);
    let x = random(&[2, 8, 5, 7], 1, 3.0);
    let g = Graph::no_grad();
    let p = store.bind(&g);
    let xv = g.constant(x.clone());
    let ca = g.value(cbam.channel_attention(&p, xv).unwrap());
    let sa = g.value(cbam.spatial_attention(&p, xv).unwrap());
    assert_eq!(ca.shape(), &[2, 8, 1, 1]);
    assert_eq!(sa.shape(), &[2, 1, 5, 7]);
    assert!(ca.data().iter().chain(sa.data()).all(|&v| v == 0.5));
    let y = g.value(cbam.forward(&p, xv).unwrap());
    assert!(y.bitwise_eq(&x.map(|v| 0.25 * v)));
}

#[test]
fn channel_gate_matches_hand_computation() {
    let cfg = CbamConfig::new(4).with_reduction(2);
    let cbam = Cbam::new("c", cfg).unwrap();
    let store: ParamStore<f64> = build_params(&cbam, 3).unwrap();
    let x = random(&[1, 4, 3, 3], 2, 2.0);
    let g = Graph::no_grad();
    let p = store.bind(&g);
    let gate = g.value(cbam.channel_attention(&p, g.constant(x.clone())).unwrap());

    let w1 = &store.get("c.mlp1_w").unwrap().value; // [4, 2]
    let w2 = &store.get("c.mlp2_w").unwrap().value; // [2, 4]
    let mlp = |v: &[f64]| -> Vec<f64> {
        let h: Vec<f64> = (0..2)
            .map(|j| (0..4).map(|i| v[i] * w1.data()[i * 2 + j]).sum::<f64>().max(0.0))
            .collect();
        (0..4).map(|o| (0..2).map(|j| h[j] * w2.data()[j * 4 + o]).sum()).collect()
    };
    let chans: Vec<&[f64]> = x.data().chunks(9).collect();
    let avg: Vec<f64> = chans.iter().map(|c| c.iter().sum::<f64>() / 9.0).collect();
    let max: Vec<f64> = chans.iter().map(|c| c.iter().cloned().fold(f64::MIN, f64::max)).collect();
    let (a, m) = (mlp(&avg), mlp(&max));
    for c in 0..4 {
        assert!((gate.data()[c] - sigmoid(a[c] + m[c])).abs() < 1e-14);
    }
}

#[test]
fn spatial_gate_matches_hand_computation() {
    let cfg = CbamConfig { spatial_kernel: 3, ..CbamConfig::new(3) };
    let cbam = Cbam::new("c", cfg.with_reduction(1)).unwrap();
    let store: ParamStore<f64> = build_params(&cbam, 5).unwrap();
    let x = random(&[1, 3, 4, 4], 6, 2.0);
    let g = Graph::no_grad();
    let p = store.bind(&g);
    let gate = g.value(cbam.spatial_attention(&p, g.constant(x.clone())).unwrap());
    let w = &store.get("c.spatial_w").unwrap().value; // [1, 2, 3, 3]
    let px = |c: usize, i: usize, j: usize| x.data()[c * 16 + i * 4 + j];
    let desc = |ch: usize, i: usize, j: usize| {
        let vals = [px(0, i, j), px(1, i, j), px(2, i, j)];
        if ch == 0 {
            vals.iter().sum::<f64>() / 3.0
        } else {
            vals.iter().cloned().fold(f64::MIN, f64::max)
        }
    };
    for i in 0..4 {
        for j in 0..4 {
            let mut acc = 0.0;
            for ch in 0..2 {
                for di in 0..3 {
                    for dj in 0..3 {
                        let (y, x) = (i as isize + di as isize - 1, j as isize + dj as isize - 1);
                        if (0..4).contains(&y) && (0..4).contains(&x) {
                            acc += w.data()[ch * 9 + di * 3 + dj] * desc(ch, y as usize, x as usize);
                        }
                    }
                }
            }
            assert!((gate.data()[i * 4 + j] - sigmoid(acc)).abs() < 1e-14);
        }
    }
}

#[test]
fn gates_bound_and_preserve_sign() {
    let cbam = Cbam::new("cbam", CbamConfig::new(6).with_reduction(3)).unwrap();
    let store: ParamStore<f64> = build_params(&cbam, 7).unwrap();
    let x = random(&[2, 6, 6, 6], 8, 4.0);
    let g = Graph::no_grad();
    let p = store.bind(&g);
    let y = g.value(cbam.forward(&p, g.constant(x.clone())).unwrap());
    assert_eq!(y.shape(), x.shape());
    for (&a, &b) in x.data().iter().zip(y.data()) {
        assert_eq!(a.signum(), b.signum());
        assert!(b.abs() <= a.abs());
    }
}

#[test]
fn invalid_configs_rejected() {
    assert!(Cbam::new("c", CbamConfig::new(4)).is_err());
    assert!(Cbam::new("c", CbamConfig { spatial_kernel: 4, ..CbamConfig::new(16) }).is_err());
}
