//! Channel and spatial gates of a CBAM block on a feature map with one hot
//! channel and one hot region.

use kanfpn::cbam::{Cbam, CbamConfig};
use kanfpn::nn::build_params;
use kanfpn::params::ParamStore;
use kanfpn_autodiff::{Graph, Tensor};

fn main() -> kanfpn::Result<()> {
    let (c, h, w) = (16, 8, 8);
    let x = Tensor::from_fn([1, c, h, w], |i| {
        let (ch, y, x) = (i / (h * w), (i / w) % h, i % w);
        let hot = if ch == 3 { 2.0 } else { 0.1 };
        if (2..5).contains(&y) && (3..6).contains(&x) { hot * 3.0 } else { hot }
    });
    let cbam = Cbam::new("cbam", CbamConfig::new(c).with_reduction(4))?;
    let store: ParamStore<f64> = build_params(&cbam, 1)?;
    let g = Graph::no_grad();
    let p = store.bind(&g);
    let xv = g.constant(x);

    let ca = g.value(cbam.channel_attention(&p, xv)?);
    println!("channel gate: {:.3?}", ca.data());
    let sa = g.value(cbam.spatial_attention(&p, xv)?);
    println!("spatial gate:");
    for row in sa.data().chunks(w) {
        println!("  {row:.3?}");
    }
    let y = g.value(cbam.forward(&p, xv)?);
    println!("output {:?}, max |y| {:.3}", y.shape(), y.max_abs());
    Ok(())
}
