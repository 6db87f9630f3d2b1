use std::collections::BTreeSet;

use kanfpn::nn::{build_params, Module};
use kanfpn::params::ParamStore;
use kanfpn::stem::{Backbone, BackboneConfig, FeaturePyramid, Fpn, Stem, StemConfig, StemVariant};
use kanfpn::Error;
use kanfpn_autodiff::{Graph, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(shape: &[usize], seed: u64, range: f64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(-range..range))
}

fn stem(variant: StemVariant, input: (usize, usize), embed: usize) -> (Stem, ParamStore<f64>) {
    let stem = Stem::new(StemConfig::new(variant, input, embed)).unwrap();
    let store = build_params(&stem, 1).unwrap();
    (stem, store)
}

fn names(store: &ParamStore<f64>) -> BTreeSet<String> {
    store.names().map(str::to_string).collect()
}

#[test]
fn every_variant_emits_the_same_token_grid() {
    let x = random(&[1, 3, 64, 48], 2, 1.0);
    for v in StemVariant::ALL {
        let (stem, store) = stem(v, (64, 48), 32);
        let g = Graph::no_grad();
        let p = store.bind(&g);
        let tokens = g.value(stem.forward(&p, g.constant(x.clone())).unwrap());
        assert_eq!(tokens.shape(), &[1, 12, 32], "{v}");
        assert!(tokens.all_finite());
    }
}

#[test]
fn patch_embedding_geometry_and_translation_invariance() {
    let (stem, store) = stem(StemVariant::S0Baseline, (32, 32), 8);
    let g = Graph::no_grad();
    let p = store.bind(&g);
    let tokens = g.value(stem.forward(&p, g.constant(Tensor::full([1, 3, 32, 32], 0.3))).unwrap());
    assert_eq!(tokens.shape(), &[1, 4, 8]);
    let rows: Vec<&[f64]> = tokens.data().chunks(8).collect();
    assert!(rows.iter().all(|r| r == &rows[0]));
}

#[test]
fn param_counts_grow_from_patch_to_cnn_to_pyramid() {
    let count = |v| Stem::new(StemConfig::new(v, (64, 64), 64)).unwrap().param_count();
    let (s0, s1, s2) = (count(StemVariant::S0Baseline), count(StemVariant::S1CnnStem), count(StemVariant::S2FpnStem));
    assert!(s0 < s1 && s1 < s2, "{s0} {s1} {s2}");
}

#[test]
fn variant_name_sets_are_pairwise_distinct() {
    let sets: Vec<_> = StemVariant::ALL.iter().map(|&v| names(&stem(v, (32, 32), 16).1)).collect();
    for i in 0..sets.len() {
        for j in i + 1..sets.len() {
            assert_ne!(sets[i], sets[j], "{} vs {}", StemVariant::ALL[i], StemVariant::ALL[j]);
        }
    }
}

#[test]
fn stage4_checkpoint_does_not_load_into_stage5() {
    let (_, s4) = stem(StemVariant::S4Ours, (32, 32), 16);
    let (_, mut s5) = stem(StemVariant::S5LateralCbam, (32, 32), 16);
    let before = s5.clone();
    let mut buf = Vec::new();
    s4.write_checkpoint(&mut buf).unwrap();
    let err = s5.load_checkpoint(&mut buf.as_slice()).unwrap_err();
    assert!(matches!(err, Error::CheckpointMismatch(_)), "{err}");
    for (a, b) in s5.iter().zip(before.iter()) {
        assert!(a.value.bitwise_eq(&b.value));
    }
}

#[test]
fn pyramid_extents_follow_strides() {
    let (stem, store) = stem(StemVariant::S2FpnStem, (64, 64), 16);
    let g = Graph::no_grad();
    let p = store.bind(&g);
    let x = g.constant(random(&[2, 3, 64, 64], 3, 1.0));
    let pyr = stem.pyramid(&p, x).unwrap();
    let shapes: Vec<Vec<usize>> = pyr.levels.iter().map(|&v| g.shape(v)).collect();
    assert_eq!(shapes, vec![vec![2, 16, 16, 16], vec![2, 32, 8, 8], vec![2, 64, 4, 4], vec![2, 128, 2, 2]]);
    let p2 = stem.p2_out(&p, x).unwrap();
    assert_eq!(g.shape(p2), vec![2, 64, 16, 16]);
}

#[test]
fn non_multiple_of_32_input_is_padded_and_cropped() {
    let (stem, store) = stem(StemVariant::S4Ours, (64, 48), 16);
    let g = Graph::no_grad();
    let p = store.bind(&g);
    let x = g.constant(random(&[1, 3, 64, 48], 4, 1.0));
    assert_eq!(g.shape(stem.pyramid(&p, x).unwrap().levels[3]), vec![1, 128, 2, 2]);
    assert_eq!(g.shape(stem.p2_out(&p, x).unwrap()), vec![1, 64, 16, 12]);
}

#[test]
fn pyramid_that_does_not_halve_is_rejected() {
    let cfg = StemConfig::new(StemVariant::S2FpnStem, (64, 64), 16).narrowed(8);
    let fpn = Fpn::new("fpn", &cfg, [2, 4, 8, 16]).unwrap();
    let store: ParamStore<f64> = build_params(&fpn, 0).unwrap();
    let g = Graph::no_grad();
    let p = store.bind(&g);
    let lv = |c, e| g.constant(Tensor::zeros([1, c, e, e]));
    let pyr = FeaturePyramid {
        levels: [lv(2, 8), lv(4, 4), lv(8, 3), lv(16, 1)],
    };
    assert!(matches!(fpn.forward(&p, &pyr), Err(Error::Tensor(_))));
}

fn fpn_inputs(g: &Graph<f64>, widths: [usize; 4], seed: u64) -> FeaturePyramid {
    let mut levels = Vec::new();
    for (i, &c) in widths.iter().enumerate() {
        let e = 16 >> i;
        levels.push(g.constant(random(&[1, c, e, e], seed + i as u64, 1.0)));
    }
    FeaturePyramid {
        levels: [levels[0], levels[1], levels[2], levels[3]],
    }
}

#[test]
fn zero_laterals_leave_smoothing_bias() {
    let cfg = StemConfig::new(StemVariant::S2FpnStem, (64, 64), 16).narrowed(4);
    let widths = [4, 8, 16, 32];
    let fpn = Fpn::new("fpn", &cfg, widths).unwrap();
    let mut store: ParamStore<f64> = build_params(&fpn, 2).unwrap();
    for l in 2..=5 {
        store.zero(&format!("fpn.lateral{l}.w")).unwrap();
    }
    let bias = random(&[16], 9, 1.0);
    store.set("fpn.smooth.b", bias.clone()).unwrap();
    let g = Graph::no_grad();
    let p = store.bind(&g);
    let y = g.value(fpn.forward(&p, &fpn_inputs(&g, widths, 5)).unwrap());
    assert_eq!(y.shape(), &[1, 16, 16, 16]);
    for (c, ch) in y.data().chunks(256).enumerate() {
        assert!(ch.iter().all(|&v| v == bias.data()[c]));
    }
}

#[test]
fn linear_fpn_is_homogeneous() {
    let mut cfg = StemConfig::new(StemVariant::S2FpnStem, (64, 64), 16).narrowed(4);
    cfg.linear = true;
    let widths = [4, 8, 16, 32];
    let fpn = Fpn::new("fpn", &cfg, widths).unwrap();
    let store: ParamStore<f64> = build_params(&fpn, 3).unwrap();
    assert!(store.names().all(|n| n.ends_with(".w")));
    let g = Graph::no_grad();
    let p = store.bind(&g);
    let pyr = fpn_inputs(&g, widths, 11);
    let base = g.value(fpn.forward(&p, &pyr).unwrap());
    for alpha in [0.5, 2.0, -1.0] {
        let scaled = FeaturePyramid {
            levels: pyr.levels.map(|v| g.scale(v, alpha).unwrap()),
        };
        let y = g.value(fpn.forward(&p, &scaled).unwrap());
        let want = base.map(|v| alpha * v);
        let rel = y.max_abs_diff(&want) / want.max_abs();
        assert!(rel <= 1e-6, "alpha {alpha}: {rel}");
    }
}

#[test]
fn stage4_and_stage5_differ_only_in_smoothing() {
    let cfg = |v| StemConfig {
        cbam_reduction: 2,
        ..StemConfig::new(v, (32, 32), 16).narrowed(4)
    };
    let (s4, s5) = (Stem::new(cfg(StemVariant::S4Ours)).unwrap(), Stem::new(cfg(StemVariant::S5LateralCbam)).unwrap());
    let mut p5: ParamStore<f64> = build_params(&s5, 4).unwrap();
    let mut p4: ParamStore<f64> = build_params(&s4, 8).unwrap();
    let smooth4 = s4.fpn().unwrap().smoothing_params(&p4);
    let smooth5 = s5.fpn().unwrap().smoothing_params(&p5);
    // everything outside the smoothing layers is shared by name and shape
    let shared: Vec<String> = p5.names().filter(|n| !smooth5.contains(&n.to_string())).map(str::to_string).collect();
    let rest4: Vec<String> = p4.names().filter(|n| !smooth4.contains(&n.to_string())).map(str::to_string).collect();
    assert_eq!(shared, rest4);
    for n in &shared {
        p4.set(n, p5.get(n).unwrap().value.clone()).unwrap();
    }

    // Zeroing the KAGN conv weights leaves expand·β; zeroing the plain conv
    // weights leaves its bias. Matching the two constants makes the stems agree.
    p4.zero("fpn.smooth.base_w").unwrap();
    p4.zero("fpn.smooth.poly_w").unwrap();
    let w = cfg(StemVariant::S4Ours).pyramid_width;
    let cr = w / cfg(StemVariant::S4Ours).kagn_ratio;
    let beta = random(&[cr], 12, 1.0);
    p4.set("fpn.smooth.norm.beta", beta.clone()).unwrap();
    let expand = p4.get("fpn.smooth.expand_w").unwrap().value.clone();
    let consts: Vec<f64> = (0..w)
        .map(|o| (0..cr).map(|j| expand.data()[o * cr + j] * beta.data()[j]).sum())
        .collect();
    p5.zero("fpn.smooth.w").unwrap();
    p5.set("fpn.smooth.b", Tensor::new([w], consts.clone()).unwrap()).unwrap();

    let x = random(&[1, 3, 32, 32], 13, 1.0);
    let g = Graph::no_grad();
    let (b4, b5) = (p4.bind(&g), p5.bind(&g));
    let y4 = g.value(s4.p2_out(&b4, g.constant(x.clone())).unwrap());
    let y5 = g.value(s5.p2_out(&b5, g.constant(x)).unwrap());
    for (c, ch) in y5.data().chunks(64).enumerate() {
        assert!(ch.iter().all(|&v| v == consts[c]));
    }
    assert!(y4.max_abs_diff(&y5) < 1e-9, "{}", y4.max_abs_diff(&y5));
}

#[test]
fn zeroed_final_block_reduces_to_its_input() {
    let full = BackboneConfig {
        widths: [4, 8, 8, 16],
        ..BackboneConfig::default()
    };
    let short = BackboneConfig {
        blocks: [2, 2, 2, 1],
        ..full.clone()
    };
    let (bf, bs) = (Backbone::new("bb", full).unwrap(), Backbone::new("bb", short).unwrap());
    let mut pf: ParamStore<f64> = build_params(&bf, 6).unwrap();
    let ps: ParamStore<f64> = build_params(&bs, 6).unwrap();
    for p in ps.iter() {
        pf.set(&p.name, p.value.clone()).unwrap();
    }
    // conv → norm → relu with zero weights, bias and shift outputs zero
    for n in ["bb.layer4.block1.conv2.conv.w", "bb.layer4.block1.conv2.conv.b", "bb.layer4.block1.conv2.norm.beta"] {
        pf.zero(n).unwrap();
    }
    let x = random(&[1, 3, 32, 32], 7, 1.0);
    let g = Graph::no_grad();
    let (a, b) = (pf.bind(&g), ps.bind(&g));
    let c5_full = g.value(bf.forward(&a, g.constant(x.clone())).unwrap().levels[3]);
    let c5_short = g.value(bs.forward(&b, g.constant(x)).unwrap().levels[3]);
    assert!(c5_full.bitwise_eq(&c5_short));
}

#[test]
fn backbone_requires_multiples_of_32() {
    let bb = Backbone::new("bb", BackboneConfig::default()).unwrap();
    let store: ParamStore<f64> = build_params(&bb, 0).unwrap();
    let g = Graph::no_grad();
    let p = store.bind(&g);
    assert!(bb.forward(&p, g.constant(Tensor::zeros([1, 3, 48, 32]))).is_err());
}
