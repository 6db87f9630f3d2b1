//! Procedural stick-figure images with eight labelled joints.
//!
//! Each sample is a function of `(seed, index)` alone: the pair is hashed
//! into a ChaCha seed, so samples can be produced in any order or in
//! parallel.

use std::f64::consts::PI;
use std::ops::Range;
use std::path::Path;

use kanfpn_autodiff::{Element, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{invalid, Error, Result};
use crate::pose::Keypoint;

pub const NUM_KEYPOINTS: usize = 8;
pub const MAX_ATTEMPTS: usize = 100;

pub const KEYPOINT_NAMES: [&str; NUM_KEYPOINTS] = [
    "head", "neck", "l_elbow", "r_elbow", "l_wrist", "r_wrist", "l_ankle", "r_ankle",
];

/// Canonical joints in figure units (height 1, y down). Index 8 is the
/// unlabelled pelvis.
const CANONICAL: [(f64, f64); 9] = [
    (0.0, -0.5),
    (0.0, -0.32),
    (-0.2, -0.14),
    (0.2, -0.14),
    (-0.24, 0.06),
    (0.24, 0.06),
    (-0.13, 0.5),
    (0.13, 0.5),
    (0.0, 0.05),
];

const LIMBS: [(usize, usize); 8] = [(0, 1), (1, 2), (2, 4), (1, 3), (3, 5), (1, 8), (8, 6), (8, 7)];

/// Disc colour per labelled joint, so left and right are distinguishable.
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

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    /// Image extent `(H, W)`.
    pub extent: (usize, usize),
    /// Figure height as a fraction of `H`.
    pub scale_range: (f64, f64),
    /// Maximum absolute rotation in degrees.
    pub max_rotation_deg: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl SceneSpec {
    pub fn new(extent: (usize, usize), seed: u64) -> Self {
        Self {
            extent,
            scale_range: (0.2, 0.9),
            max_rotation_deg: 30.0,
            noise_sigma: 0.05,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.scale_range;
        if self.extent.0 < 4 || self.extent.1 < 4 {
            return Err(invalid(format!("image extent {:?} too small", self.extent)));
        }
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return Err(invalid(format!("scale range ({lo}, {hi}) must satisfy 0 < min <= max")));
        }
        if !(self.noise_sigma >= 0.0) || !(self.max_rotation_deg >= 0.0) {
            return Err(invalid("noise and rotation must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Sample {
    pub index: usize,
    /// `[3, H, W]`, values in `[0, 1]`.
    pub image: Tensor<f32>,
    pub keypoints: Vec<Keypoint>,
    /// Figure height as a fraction of `H`.
    pub scale: f64,
    /// Rotation in radians.
    pub rotation: f64,
}

/// Places the canonical skeleton: `center + scale·H·R(rotation)·joint`.
pub fn place_skeleton(extent: (usize, usize), scale: f64, rotation: f64, center: (f64, f64)) -> [(f64, f64); 9] {
    let size = scale * extent.0 as f64;
    let (s, c) = rotation.sin_cos();
    CANONICAL.map(|(x, y)| (center.0 + size * (c * x - s * y), center.1 + size * (s * x + c * y)))
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn sample_rng(seed: u64, index: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(splitmix64(seed ^ splitmix64(index as u64 ^ 0x5EED)))
}

pub fn generate(spec: &SceneSpec, index: usize) -> Result<Sample> {
    spec.validate()?;
    let mut rng = sample_rng(spec.seed, index);
    let (h, w) = spec.extent;
    let max_rot = spec.max_rotation_deg.to_radians();
    let (lo, hi) = spec.scale_range;

    let mut placed = None;
    for _ in 0..MAX_ATTEMPTS {
        let scale = if hi > lo { rng.random_range(lo..=hi) } else { lo };
        let rotation = if max_rot > 0.0 { rng.random_range(-max_rot..=max_rot) } else { 0.0 };
        // Centre uniformly over the image; keep the draw only if every joint
        // lands inside with a one-pixel margin.
        let center = (rng.random_range(0.0..w as f64), rng.random_range(0.0..h as f64));
        let joints = place_skeleton(spec.extent, scale, rotation, center);
        let inside = joints
            .iter()
            .all(|&(x, y)| x >= 1.0 && y >= 1.0 && x <= w as f64 - 2.0 && y <= h as f64 - 2.0);
        if inside {
            placed = Some((scale, rotation, joints));
            break;
        }
    }
    let (scale, rotation, joints) = placed.ok_or(Error::PlacementFailure(MAX_ATTEMPTS))?;

    let background: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.0..0.25));
    let limb_color: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.45..0.75));
    let size = scale * h as f64;
    let half_width = (0.025 * size).max(0.6);
    let radius = (0.04 * size).max(1.2);

    let mut img = vec![0.0f64; 3 * h * w];
    for c in 0..3 {
        img[c * h * w..(c + 1) * h * w].fill(background[c]);
    }
    for &(a, b) in &LIMBS {
        let (p, q) = (joints[a], joints[b]);
        paint(&mut img, spec.extent, limb_color, |x, y| half_width + 0.5 - segment_distance((x, y), p, q));
    }
    for (k, &(cx, cy)) in joints[..NUM_KEYPOINTS].iter().enumerate() {
        paint(&mut img, spec.extent, PALETTE[k], |x, y| radius + 0.5 - (x - cx).hypot(y - cy));
    }
    if spec.noise_sigma > 0.0 {
        let normal = Normal::new(0.0, spec.noise_sigma).map_err(|e| invalid(e.to_string()))?;
        for v in &mut img {
            *v += normal.sample(&mut rng);
        }
    }
    let image = Tensor::from_fn([3, h, w], |i| img[i].clamp(0.0, 1.0) as f32);

    Ok(Sample {
        index,
        image,
        keypoints: joints[..NUM_KEYPOINTS].iter().map(|&(x, y)| Keypoint::new(x, y)).collect(),
        scale,
        rotation,
    })
}

/// Blends `color` into every pixel by coverage `clamp(f(x, y), 0, 1)`, with
/// pixel `(i, j)` centred at `x = j, y = i`.
fn paint(img: &mut [f64], (h, w): (usize, usize), color: [f64; 3], f: impl Fn(f64, f64) -> f64) {
    for i in 0..h {
        for j in 0..w {
            let cover = f(j as f64, i as f64).clamp(0.0, 1.0);
            if cover > 0.0 {
                for (c, &col) in color.iter().enumerate() {
                    let px = &mut img[(c * h + i) * w + j];
                    *px = *px * (1.0 - cover) + col * cover;
                }
            }
        }
    }
}

fn segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0)
    };
    (p.0 - a.0 - t * dx).hypot(p.1 - a.1 - t * dy)
}

/// `n` index-addressed samples of one scene spec.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub spec: SceneSpec,
    pub len: usize,
}

impl Dataset {
    pub fn new(spec: SceneSpec, len: usize) -> Result<Self> {
        spec.validate()?;
        if len == 0 {
            return Err(invalid("dataset needs at least one sample"));
        }
        Ok(Self { spec, len })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn get(&self, index: usize) -> Result<Sample> {
        if index >= self.len {
            return Err(invalid(format!("sample {index} out of range 0..{}", self.len)));
        }
        generate(&self.spec, index)
    }

    /// Disjoint, exhaustive `(train, eval)` index ranges with the last
    /// `n_eval` samples held out.
    pub fn split(&self, n_eval: usize) -> Result<(Range<usize>, Range<usize>)> {
        if n_eval == 0 || n_eval >= self.len {
            return Err(invalid(format!("eval size {n_eval} must lie in 1..{}", self.len)));
        }
        let cut = self.len - n_eval;
        Ok((0..cut, cut..self.len))
    }

    /// Stacks samples into `[B,3,H,W]` images and their keypoints.
    pub fn batch<E: Element>(&self, indices: &[usize]) -> Result<Batch<E>> {
        let samples = indices.iter().map(|&i| self.get(i)).collect::<Result<Vec<_>>>()?;
        Ok(Batch::from_samples(&samples))
    }

    /// Writes `{dir}/{split}/{index}.tnsr` (image) and `.csv` (`k,x,y,visible`).
    pub fn export(&self, dir: &Path, split: &str, indices: Range<usize>) -> Result<()> {
        let out = dir.join(split);
        std::fs::create_dir_all(&out)?;
        for i in indices {
            let s = self.get(i)?;
            std::fs::write(out.join(format!("{i}.tnsr")), s.image.to_bytes())?;
            let mut w = csv::Writer::from_path(out.join(format!("{i}.csv")))?;
            w.write_record(["k", "x", "y", "visible"])?;
            for (k, kp) in s.keypoints.iter().enumerate() {
                w.write_record([
                    k.to_string(),
                    format!("{:.6}", kp.x),
                    format!("{:.6}", kp.y),
                    u8::from(kp.visible).to_string(),
                ])?;
            }
            w.flush()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Batch<E: Element> {
    pub indices: Vec<usize>,
    pub images: Tensor<E>,
    pub keypoints: Vec<Vec<Keypoint>>,
}

impl<E: Element> Batch<E> {
    pub fn from_samples(samples: &[Sample]) -> Self {
        let shape = samples[0].image.shape().to_vec();
        let mut data = Vec::with_capacity(samples.len() * samples[0].image.numel());
        for s in samples {
            data.extend(s.image.data().iter().map(|&v| E::from_f64(v as f64)));
        }
        let mut full = vec![samples.len()];
        full.extend(shape);
        Self {
            indices: samples.iter().map(|s| s.index).collect(),
            images: Tensor::new(full, data).expect("stacked extents"),
            keypoints: samples.iter().map(|s| s.keypoints.clone()).collect(),
        }
    }
}

/// Angle helper for callers that think in degrees.
pub fn degrees(rad: f64) -> f64 {
    rad * 180.0 / PI
}
