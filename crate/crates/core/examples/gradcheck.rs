//! Runs a handful of named gradient checks.
//!
//!     cargo run --release --example gradcheck -- [scope ...]

use kanfpn::gradcheck::{find, scope_names};

fn main() -> kanfpn::Result<()> {
    let mut args: Vec<String> = std::env::args().skip(1).collect();
    if args.is_empty() {
        args = ["conv2d", "gram_basis", "kagn_conv2d", "cbam", "fpn_s4"].map(String::from).to_vec();
    }
    println!("available: {}", scope_names().collect::<Vec<_>>().join(" "));
    for name in &args {
        let scope = find(name)?;
        let report = scope.run(0)?;
        let tol = scope.kind.tolerance();
        println!("\n{name}: max rel err {:.2e} (tol {tol:e}) {}", report.max_rel_err(), if report.passes(tol) { "ok" } else { "FAIL" });
        for g in &report.groups {
            println!("  {:<36} {:>3} of {:<5} {:.2e}", g.name, g.checked, g.numel, g.max_rel_err);
        }
    }
    Ok(())
}
