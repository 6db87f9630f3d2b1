use kanfpn::nn::build_params;
use kanfpn::params::ParamStore;
use kanfpn::pose::{
    decode_keypoints, mse_loss, render_targets, visibility, Encoder, HeatmapHead, Keypoint, PoseModel, PoseModelConfig,
};
use kanfpn::stem::StemVariant;
use kanfpn_autodiff::{Graph, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(shape: &[usize], seed: u64, range: f64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(-range..range))
}

#[test]
fn interior_gaussian_mass_is_two_pi_sigma_squared() {
    let sigma = 2.0;
    let kps = vec![vec![Keypoint::new(40.3, 35.7), Keypoint::new(30.0, 30.0)]];
    let t: Tensor<f64> = render_targets(&kps, (20, 20), 4.0, sigma).unwrap();
    let want = 2.0 * std::f64::consts::PI * sigma * sigma;
    for ch in t.data().chunks(400) {
        let sum: f64 = ch.iter().sum();
        assert!((sum - want).abs() / want < 0.01, "{sum} vs {want}");
        assert!(ch.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }
}

#[test]
fn planted_keypoints_decode_within_three_quarter_pixel() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let stride = 4.0;
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let (u, v) = (rng.random_range(1.5..14.5), rng.random_range(1.5..10.5));
        let kp = Keypoint::new(u * stride, v * stride);
        let t: Tensor<f64> = render_targets(&[vec![kp]], (12, 16), stride, 2.0).unwrap();
        let d = &decode_keypoints(&t, stride).unwrap()[0][0];
        let err = (d.x / stride - u).hypot(d.y / stride - v);
        worst = worst.max(err);
    }
    assert!(worst <= 0.75, "{worst}");
}

#[test]
fn gaussian_on_a_cell_centre_decodes_to_it() {
    let t: Tensor<f32> = render_targets(&[vec![Keypoint::new(24.0, 8.0)]], (8, 8), 4.0, 2.0).unwrap();
    let d = &decode_keypoints(&t, 4.0).unwrap()[0][0];
    assert_eq!((d.x, d.y, d.score), (24.0, 8.0, 1.0));
}

fn loss_and_grad(pred: Tensor<f64>, target: &Tensor<f64>, kps: &[Vec<Keypoint>]) -> (f64, Tensor<f64>) {
    let store = ParamStore::<f64>::new();
    let g = Graph::new();
    let p = store.bind(&g);
    let x = g.leaf(pred);
    let loss = mse_loss(&p, x, target, &visibility(kps)).unwrap();
    let grads = g.backward(loss).unwrap();
    (g.value(loss).item(), grads.get_or_zeros(&g, x))
}

#[test]
fn loss_hand_cases() {
    let kps = vec![vec![Keypoint::new(0.0, 0.0)]];
    let target = random(&[1, 1, 2, 2], 1, 1.0);
    assert_eq!(loss_and_grad(target.clone(), &target, &kps).0, 0.0);
    let (loss, _) = loss_and_grad(target.map(|v| v + 0.5), &target, &kps);
    assert!((loss - 0.25).abs() < 1e-15);
}

#[test]
fn invisible_channels_get_zero_gradient() {
    let kps = vec![
        vec![Keypoint::new(4.0, 4.0), Keypoint::hidden()],
        vec![Keypoint::hidden(), Keypoint::new(8.0, 2.0)],
    ];
    let target: Tensor<f64> = render_targets(&kps, (4, 4), 4.0, 2.0).unwrap();
    let (loss, grad) = loss_and_grad(random(&[2, 2, 4, 4], 2, 1.0), &target, &kps);
    assert!(loss > 0.0);
    let chans: Vec<&[f64]> = grad.data().chunks(16).collect();
    assert!(chans[1].iter().chain(chans[2]).all(|&v| v == 0.0));
    assert!(chans[0].iter().any(|&v| v != 0.0) && chans[3].iter().any(|&v| v != 0.0));

    let none = vec![vec![Keypoint::hidden(); 2]; 2];
    let (loss, grad) = loss_and_grad(random(&[2, 2, 4, 4], 3, 1.0), &target, &none);
    assert_eq!(loss, 0.0);
    assert!(grad.data().iter().all(|&v| v == 0.0));
}

#[test]
fn head_geometry_and_zero_output_conv() {
    let head = HeatmapHead::new(16, 8, 5);
    let mut store: ParamStore<f64> = build_params(&head, 1).unwrap();
    let g = Graph::no_grad();
    let feat = g.constant(random(&[2, 12, 16], 4, 1.0));
    let y = g.value(head.forward(&store.bind(&g), feat, (4, 3)).unwrap());
    assert_eq!(y.shape(), &[2, 5, 16, 12]);
    assert!(y.data().iter().any(|&v| v != 0.0));
    store.zero("head.final.w").unwrap();
    let y = g.value(head.forward(&store.bind(&g), feat, (4, 3)).unwrap());
    assert!(y.data().iter().all(|&v| v == 0.0));
    assert!(head.forward(&store.bind(&g), feat, (3, 3)).is_err());
}

#[test]
fn empty_encoder_is_final_norm() {
    let enc = Encoder::new(8, 0, 2, 4).unwrap();
    let store: ParamStore<f64> = build_params(&enc, 0).unwrap();
    assert_eq!(store.len(), 2);
    let x = random(&[1, 3, 8], 5, 2.0);
    let g = Graph::no_grad();
    let y = g.value(enc.forward(&store.bind(&g), g.constant(x.clone())).unwrap());
    for (row_in, row_out) in x.data().chunks(8).zip(y.data().chunks(8)) {
        let mean = row_in.iter().sum::<f64>() / 8.0;
        let var = row_in.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 8.0;
        for (a, b) in row_in.iter().zip(row_out) {
            assert!(((a - mean) / (var + 1e-6).sqrt() - b).abs() < 1e-12);
        }
    }
}

#[test]
fn model_maps_images_to_quarter_resolution_heatmaps() {
    let mut cfg = PoseModelConfig::new(StemVariant::S4Ours, (64, 48));
    cfg.depth = 1;
    cfg.stem.embed_dim = 16;
    cfg.stem = cfg.stem.clone().narrowed(4);
    cfg.stem.cbam_reduction = 2;
    cfg.head_channels = 8;
    let model = PoseModel::new(cfg).unwrap();
    let store: ParamStore<f32> = model.init_params(0).unwrap();
    let g = Graph::no_grad();
    let x = g.constant(Tensor::full([2, 3, 64, 48], 0.5f32));
    let y = g.value(model.forward(&store.bind(&g), x).unwrap());
    assert_eq!(y.shape(), &[2, 8, 16, 12]);
    assert!(y.all_finite());
}
