//! Full benchmark on the one-dimensional drift system: train an MLP, then
//! compare no maintenance, the subset Kalman filter, finetuning and
//! retraining over the drifting window.
//!
//! `cargo run --release --example two_timescale_maintenance [out_dir]`

use sekf::harness::{report, run_benchmark, ExperimentConfig};

fn main() -> sekf::Result<()> {
    let out = std::env::args()
        .nth(1)
        .unwrap_or_else(|| "results/two_timescale".into());
    let mut cfg = ExperimentConfig::preset("two_timescale")?;
    cfg.expand_selections(&["all", "prop:0.95", "mag:0.9"]);
    let bundle = run_benchmark(&cfg, None)?;
    bundle.write(&out)?;
    print!("{}", report(&out)?);
    println!("bundle written to {out}");
    Ok(())
}
