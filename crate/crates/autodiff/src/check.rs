//! Central finite differences as an independent oracle for [`Graph::backward`].

use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

/// Central-difference gradient `(f(x+h·eᵢ) − f(x−h·eᵢ)) / 2h` of a scalar
/// function, for every coordinate of `x`.
pub fn finite_diff_grad(mut f: impl FnMut(&Tensor<f64>) -> f64, x: &Tensor<f64>, h: f64) -> Tensor<f64> {
    assert!(h > 0.0, "finite difference step must be positive");
    let coords: Vec<usize> = (0..x.numel()).collect();
    let values = finite_diff_at(&mut f, x, h, &coords);
    Tensor::from_parts(x.shape().to_vec(), values)
}

/// Central differences at selected flat coordinates only.
pub fn finite_diff_at(f: &mut impl FnMut(&Tensor<f64>) -> f64, x: &Tensor<f64>, h: f64, coords: &[usize]) -> Vec<f64> {
    let mut buf = x.to_vec();
    coords
        .iter()
        .map(|&i| {
            let orig = buf[i];
            buf[i] = orig + h;
            let plus = f(&Tensor::from_parts(x.shape().to_vec(), buf.clone()));
            buf[i] = orig - h;
            let minus = f(&Tensor::from_parts(x.shape().to_vec(), buf.clone()));
            buf[i] = orig;
            (plus - minus) / (2.0 * h)
        })
        .collect()
}

/// Fourth-order stencil `(−f(x+2h) + 8f(x+h) − 8f(x−h) + f(x−2h)) / 12h`.
/// Truncation error is O(h⁴), so a larger `h` can be used, which keeps the
/// cancellation noise of outputs with a large magnitude small.
pub fn five_point_at(f: &mut impl FnMut(&Tensor<f64>) -> f64, x: &Tensor<f64>, h: f64, coords: &[usize]) -> Vec<f64> {
    let mut buf = x.to_vec();
    let mut at = |buf: &mut Vec<f64>, i: usize, v: f64| {
        buf[i] = v;
        f(&Tensor::from_parts(x.shape().to_vec(), buf.clone()))
    };
    coords
        .iter()
        .map(|&i| {
            let orig = buf[i];
            let p2 = at(&mut buf, i, orig + 2.0 * h);
            let p1 = at(&mut buf, i, orig + h);
            let m1 = at(&mut buf, i, orig - h);
            let m2 = at(&mut buf, i, orig - 2.0 * h);
            buf[i] = orig;
            (-p2 + 8.0 * p1 - 8.0 * m1 + m2) / (12.0 * h)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Stencil {
    #[default]
    Central,
    FivePoint,
}

/// Relative error with a floor on the denominator, so that coordinates whose
/// true gradient is ~0 are judged on absolute error below `floor`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

#[derive(Debug, Clone)]
pub struct GradCheckOptions {
    pub step: f64,
    /// Coordinates probed per input; tensors at most this large are probed
    /// exhaustively.
    pub max_coords: usize,
    pub floor: f64,
    pub seed: u64,
    pub stencil: Stencil,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-5,
            max_coords: 24,
            floor: 1e-4,
            seed: 0,
            stencil: Stencil::Central,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GroupReport {
    pub name: String,
    pub numel: usize,
    pub checked: usize,
    pub max_rel_err: f64,
    pub max_abs_err: f64,
}

#[derive(Debug, Clone, Default)]
pub struct GradReport {
    pub groups: Vec<GroupReport>,
}

impl GradReport {
    pub fn max_rel_err(&self) -> f64 {
        self.groups.iter().map(|g| g.max_rel_err).fold(0.0, f64::max)
    }

    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err() <= tol
    }

    pub fn worst(&self) -> Option<&GroupReport> {
        self.groups
            .iter()
            .max_by(|a, b| a.max_rel_err.total_cmp(&b.max_rel_err))
    }
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn pick_coords(numel: usize, max: usize, seed: u64) -> Vec<usize> {
    if numel <= max {
        return (0..numel).collect();
    }
    let mut state = seed;
    let mut picked: Vec<usize> = Vec::with_capacity(max);
    while picked.len() < max {
        let c = (splitmix64(&mut state) % numel as u64) as usize;
        if !picked.contains(&c) {
            picked.push(c);
        }
    }
    picked.sort_unstable();
    picked
}

/// Compares reverse-mode gradients of `f` against central differences for
/// every named input. `f` builds a scalar (`[1]`) from the leaves it is
/// handed, in the order of `inputs`.
pub fn check_gradients<F>(inputs: &[(String, Tensor<f64>)], f: F, opts: &GradCheckOptions) -> Result<GradReport>
where
    F: Fn(&Graph<f64>, &[Var]) -> Result<Var>,
{
    let graph = Graph::new();
    let leaves: Vec<Var> = inputs.iter().map(|(_, t)| graph.leaf(t.clone())).collect();
    let root = f(&graph, &leaves)?;
    let grads = graph.backward(root)?;

    let mut report = GradReport::default();
    for (gi, (name, value)) in inputs.iter().enumerate() {
        let analytic = grads.get_or_zeros(&graph, leaves[gi]);
        let coords = pick_coords(value.numel(), opts.max_coords, opts.seed ^ ((gi as u64 + 1) << 32));
        let mut err: Option<crate::error::Error> = None;
        let mut eval = |probe: &Tensor<f64>| -> f64 {
            let g = Graph::no_grad();
            let vars: Vec<Var> = inputs
                .iter()
                .enumerate()
                .map(|(j, (_, t))| g.constant(if j == gi { probe.clone() } else { t.clone() }))
                .collect();
            match f(&g, &vars) {
                Ok(v) => g.value(v).item(),
                Err(e) => {
                    err.get_or_insert(e);
                    f64::NAN
                }
            }
        };
        let numeric = match opts.stencil {
            Stencil::Central => finite_diff_at(&mut eval, value, opts.step, &coords),
            Stencil::FivePoint => five_point_at(&mut eval, value, opts.step, &coords),
        };
        if let Some(e) = err {
            return Err(e);
        }
        let (mut max_rel, mut max_abs) = (0.0f64, 0.0f64);
        for (&c, &n) in coords.iter().zip(&numeric) {
            let a = analytic.data()[c];
            let rel = relative_error(a, n, opts.floor);
            max_rel = max_rel.max(if rel.is_nan() { f64::INFINITY } else { rel });
            max_abs = max_abs.max((a - n).abs());
        }
        report.groups.push(GroupReport {
            name: name.clone(),
            numel: value.numel(),
            checked: coords.len(),
            max_rel_err: max_rel,
            max_abs_err: max_abs,
        });
    }
    Ok(report)
}
