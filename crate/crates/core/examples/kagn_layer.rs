//! Gram polynomial basis values and a KAGN convolution at several degrees.

use kanfpn::kagn::{gram_basis, kagn_param_count, BottleneckKagnConv2d, KagnConv2d, KagnConvConfig};
use kanfpn::nn::build_params;
use kanfpn::params::ParamStore;
use kanfpn_autodiff::{Graph, Tensor};

fn main() -> kanfpn::Result<()> {
    let g = Graph::<f64>::no_grad();
    let empty = ParamStore::<f64>::new();
    let s = Tensor::new([1, 1, 1, 5], vec![-1.0, -0.5, 0.0, 0.5, 1.0])?;
    let basis = g.value(gram_basis(&empty.bind(&g), g.constant(s.clone()), 3)?);
    println!("s      {:?}", s.data());
    for (d, row) in basis.data().chunks(5).enumerate() {
        println!("G_{d}(s) {row:.4?}");
    }

    let x = Tensor::from_fn([1, 16, 12, 12], |i| ((i * 7919) % 23) as f64 / 11.0 - 1.0);
    for degree in [0, 1, 3] {
        let cfg = KagnConvConfig::new(16, 32, 3).with_degree(degree);
        let layer = KagnConv2d::new("kagn", cfg.clone())?;
        let store: ParamStore<f64> = build_params(&layer, 0)?;
        let y = g.value(layer.forward(&store.bind(&g), g.constant(x.clone()))?);
        println!("degree {degree}: {} params, output {:?}", kagn_param_count(&cfg), y.shape());
    }

    let cfg = KagnConvConfig::new(16, 32, 3).with_bottleneck(4);
    let layer = BottleneckKagnConv2d::new("bk", cfg.clone())?;
    let store: ParamStore<f64> = build_params(&layer, 0)?;
    let y = g.value(layer.forward(&store.bind(&g), g.constant(x))?);
    println!("bottleneck r=4: {} params, output {:?}", kagn_param_count(&cfg), y.shape());
    Ok(())
}
