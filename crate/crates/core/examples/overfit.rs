//! Fits one stage to 16 fixed samples and reports how fast PCK rises.
//!
//!     cargo run --release --example overfit -- [stage] [steps]

use kanfpn::config::RunConfig;
use kanfpn::stem::StemVariant;
use kanfpn::train::{run_stage, Mode};

fn main() -> kanfpn::Result<()> {
    let mut args = std::env::args().skip(1);
    let stage: StemVariant = args.next().as_deref().unwrap_or("s0").parse()?;
    let steps: usize = args.next().map_or(Ok(500), |s| s.parse()).expect("steps must be a number");
    let mut cfg = RunConfig::default();
    cfg.overfit.steps = steps;
    let out = std::env::temp_dir().join("kanfpn-overfit");
    let result = run_stage(stage, &cfg, Mode::Overfit, &out)?;
    match result.reached_095_at {
        Some(step) => println!("{stage}: PCK@0.1 >= 0.95 after {step} steps"),
        None => println!("{stage}: PCK@0.1 stayed below 0.95"),
    }
    let last = result.last();
    println!("final loss {:.6}, PCK@0.05 {:.3}, PCK@0.1 {:.3}", last.loss, last.pck05, last.pck10);
    println!("metrics in {}", result.metrics.display());
    Ok(())
}
