//! Builds every stem stage at 64x48 and prints its token grid and size.

use kanfpn::nn::{build_params, Module};
use kanfpn::params::ParamStore;
use kanfpn::stem::{Stem, StemConfig, StemVariant};
use kanfpn_autodiff::{Graph, Tensor};

fn main() -> kanfpn::Result<()> {
    let input = (64, 48);
    let x = Tensor::from_fn([1, 3, input.0, input.1], |i| ((i % 97) as f32 / 97.0) - 0.5);
    println!("{:<4} {:<42} {:>9} {:>12}", "", "stem", "params", "tokens");
    for v in StemVariant::ALL {
        let stem = Stem::new(StemConfig::new(v, input, 64))?;
        let store: ParamStore<f32> = build_params(&stem, 0)?;
        let g = Graph::no_grad();
        let tokens = g.value(stem.forward(&store.bind(&g), g.constant(x.clone()))?);
        println!("{:<4} {:<42} {:>9} {:>12}", v.key(), v.description(), stem.param_count(), format!("{:?}", tokens.shape()));
    }
    Ok(())
}
