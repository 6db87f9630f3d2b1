use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};
use std::process::Command;

use kanfpn::data::{generate, place_skeleton, Dataset, SceneSpec, NUM_KEYPOINTS};
use kanfpn_autodiff::Tensor;

const PALETTE: [[f64; 3]; NUM_KEYPOINTS] = [
    [1.0, 0.15, 0.15],
    [0.15, 1.0, 0.15],
    [0.2, 0.35, 1.0],
    [1.0, 1.0, 0.1],
    [1.0, 0.2, 1.0],
    [0.1, 1.0, 1.0],
    [1.0, 0.6, 0.1],
    [0.95, 0.95, 0.95],
];

#[test]
fn same_index_same_sample_across_datasets() {
    let a = Dataset::new(SceneSpec::new((64, 64), 3), 50).unwrap();
    let b = Dataset::new(SceneSpec::new((64, 64), 3), 20).unwrap();
    for i in [0, 7, 19] {
        let (x, y) = (a.get(i).unwrap(), b.get(i).unwrap());
        assert!(x.image.bitwise_eq(&y.image));
        assert_eq!(x.keypoints, y.keypoints);
    }
    let other = Dataset::new(SceneSpec::new((64, 64), 4), 20).unwrap();
    assert!(!a.get(0).unwrap().image.bitwise_eq(&other.get(0).unwrap().image));
}

#[test]
fn sixteen_distinct_samples() {
    let ds = Dataset::new(SceneSpec::new((64, 64), 0), 16).unwrap();
    let samples: Vec<_> = (0..16).map(|i| ds.get(i).unwrap()).collect();
    for i in 0..16 {
        for j in i + 1..16 {
            assert!(!samples[i].image.bitwise_eq(&samples[j].image));
        }
    }
    assert!(ds.get(16).is_err());
}

#[test]
fn unrotated_skeleton_is_scaled_canonical() {
    // head, neck, elbows, wrists, ankles in units of figure height
    let canon = [
        (0.0, -0.5),
        (0.0, -0.32),
        (-0.2, -0.14),
        (0.2, -0.14),
        (-0.24, 0.06),
        (0.24, 0.06),
        (-0.13, 0.5),
        (0.13, 0.5),
    ];
    let joints = place_skeleton((64, 48), 0.5, 0.0, (24.0, 32.0));
    for (k, &(x, y)) in canon.iter().enumerate() {
        assert!((joints[k].0 - (24.0 + 32.0 * x)).abs() < 1e-12);
        assert!((joints[k].1 - (32.0 + 32.0 * y)).abs() < 1e-12);
    }

    let spec = SceneSpec {
        scale_range: (0.5, 0.5),
        max_rotation_deg: 0.0,
        ..SceneSpec::new((64, 64), 5)
    };
    for i in 0..5 {
        let s = generate(&spec, i).unwrap();
        assert_eq!((s.scale, s.rotation), (0.5, 0.0));
        let neck = (s.keypoints[1].x, s.keypoints[1].y);
        for (k, &(x, y)) in canon.iter().enumerate() {
            assert!((s.keypoints[k].x - neck.0 - 32.0 * x).abs() < 1e-9);
            assert!((s.keypoints[k].y - neck.1 - 32.0 * (y + 0.32)).abs() < 1e-9);
        }
    }
}

fn scales(n: usize) -> Vec<f64> {
    let spec = SceneSpec::new((64, 64), 21);
    (0..n).map(|i| generate(&spec, i).unwrap().scale).collect()
}

#[test]
fn scale_distribution_covers_both_end_deciles() {
    let s = scales(1000);
    let (lo, hi) = (0.2, 0.9);
    let mut bins = [0usize; 10];
    for &v in &s {
        assert!((lo..=hi).contains(&v));
        bins[(((v - lo) / (hi - lo) * 10.0) as usize).min(9)] += 1;
    }
    assert!(bins[0] > 0 && bins[9] > 0, "{bins:?}");
}

#[test]
fn figures_span_small_and_large_extremes() {
    // figure height in pixels against two stride-8 cells and half the image
    let heights: Vec<f64> = scales(1000).iter().map(|s| s * 64.0).collect();
    assert!(heights.iter().any(|&h| h < 16.0));
    assert!(heights.iter().any(|&h| h > 32.0));
}

#[test]
fn joint_discs_are_centred_on_keypoints() {
    let spec = SceneSpec {
        scale_range: (0.8, 0.9),
        noise_sigma: 0.0,
        ..SceneSpec::new((64, 64), 8)
    };
    let mut checked = 0;
    for i in 0..20 {
        let s = generate(&spec, i).unwrap();
        let radius = (0.04 * s.scale * 64.0f64).max(1.2);
        for k in 0..NUM_KEYPOINTS {
            let kp = &s.keypoints[k];
            let crowded = (0..NUM_KEYPOINTS)
                .any(|j| j != k && (s.keypoints[j].x - kp.x).hypot(s.keypoints[j].y - kp.y) < 2.0 * radius + 2.0);
            if crowded {
                continue;
            }
            // pixels painted with full coverage carry the joint colour exactly
            let col = PALETTE[k].map(|c| c as f32);
            let (mut sx, mut sy, mut n) = (0.0, 0.0, 0.0);
            for y in 0..64 {
                for x in 0..64 {
                    let px = [0, 1, 2].map(|c| s.image.data()[(c * 64 + y) * 64 + x]);
                    if px == col {
                        sx += x as f64;
                        sy += y as f64;
                        n += 1.0;
                    }
                }
            }
            assert!(n > 0.0, "sample {i} joint {k} has no solid pixel");
            let err = (sx / n - kp.x).hypot(sy / n - kp.y);
            assert!(err <= 0.5, "sample {i} joint {k}: {err}");
            checked += 1;
        }
    }
    assert!(checked >= 40, "{checked}");
}

fn eval_hash() -> u64 {
    let ds = Dataset::new(SceneSpec::new((64, 48), 77), 40).unwrap();
    let (_, eval) = ds.split(8).unwrap();
    let mut h = DefaultHasher::new();
    for i in eval {
        let s = ds.get(i).unwrap();
        for v in s.image.data() {
            v.to_bits().hash(&mut h);
        }
        for kp in &s.keypoints {
            (kp.x.to_bits(), kp.y.to_bits(), kp.visible).hash(&mut h);
        }
    }
    h.finish()
}

#[test]
fn eval_inputs_agree_across_processes() {
    if std::env::var_os("KANFPN_HASH_CHILD").is_some() {
        println!("EVAL_HASH={}", eval_hash());
        return;
    }
    let out = Command::new(std::env::current_exe().unwrap())
        .args(["--exact", "eval_inputs_agree_across_processes", "--nocapture", "--test-threads=1"])
        .env("KANFPN_HASH_CHILD", "1")
        .output()
        .unwrap();
    let stdout = String::from_utf8_lossy(&out.stdout);
    let child: u64 = stdout
        .lines()
        .find_map(|l| l.split_once("EVAL_HASH=").map(|(_, h)| h))
        .unwrap_or_else(|| panic!("child printed no hash:\n{stdout}"))
        .split_whitespace()
        .next()
        .unwrap()
        .parse()
        .unwrap();
    assert_eq!(child, eval_hash());
}

#[test]
fn export_writes_tensor_and_keypoint_files() {
    let dir = tempfile::tempdir().unwrap();
    let ds = Dataset::new(SceneSpec::new((32, 32), 2), 6).unwrap();
    let (_, eval) = ds.split(2).unwrap();
    ds.export(dir.path(), "eval", eval).unwrap();
    for i in [4, 5] {
        let bytes = std::fs::read(dir.path().join(format!("eval/{i}.tnsr"))).unwrap();
        assert_eq!(&bytes[..4], b"TNSR");
        let t = Tensor::<f32>::from_bytes(&bytes).unwrap();
        assert!(t.bitwise_eq(&ds.get(i).unwrap().image));
        let text = std::fs::read_to_string(dir.path().join(format!("eval/{i}.csv"))).unwrap();
        assert_eq!(text.lines().count(), 1 + NUM_KEYPOINTS);
        assert!(text.starts_with("k,x,y,visible\n"));
    }
    assert!(!dir.path().join("eval/3.csv").exists());
}
