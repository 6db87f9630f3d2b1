//! One smoke epoch for every stage, collected into the ablation table.

use kanfpn::config::RunConfig;
use kanfpn::stem::StemVariant;
use kanfpn::train::{run_ablation, Mode};

fn main() -> kanfpn::Result<()> {
    let out = std::env::temp_dir().join("kanfpn-ablation-smoke");
    let table = run_ablation(&StemVariant::ALL, &RunConfig::default(), Mode::Smoke, &out)?;
    for r in &table {
        match &r.outcome {
            Ok(o) => println!("{:<3} {:<42} reference AP {:.1}  params {:>8}  loss {:.5}", r.stage.key(), r.stage.description(), r.paper_ap, o.params, o.last().loss),
            Err(e) => println!("{:<3} failed: {e}", r.stage.key()),
        }
    }
    println!("{}", std::fs::read_to_string(out.join("ablation.csv"))?);
    Ok(())
}
