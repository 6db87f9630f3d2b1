//! Generates a few synthetic figures, prints their keypoints and writes
//! them to disk.
//!
//!     cargo run --release --example synthetic_data -- [out_dir]

use std::path::PathBuf;

use kanfpn::data::{degrees, Dataset, SceneSpec};

fn main() -> kanfpn::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "synthetic".into()));
    let ds = Dataset::new(SceneSpec::new((64, 48), 7), 12)?;
    for i in 0..3 {
        let s = ds.get(i)?;
        println!("sample {i}: scale {:.2}, rotation {:.1} deg", s.scale, degrees(s.rotation));
        for (k, kp) in s.keypoints.iter().enumerate() {
            println!("  k{k}: ({:5.1}, {:5.1})", kp.x, kp.y);
        }
    }
    let (train, eval) = ds.split(4)?;
    ds.export(&out, "train", train)?;
    ds.export(&out, "eval", eval)?;
    println!("wrote {}/{{train,eval}}/<index>.{{tnsr,csv}}", out.display());
    Ok(())
}
