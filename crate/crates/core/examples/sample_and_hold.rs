//! Singularly perturbed system: the exact fast state against the layer
//! equation (slow parameter frozen at its initial value) and the
//! sample-and-hold scheme that refreshes it every 25 time units.

use sekf::simulators::{layer_equation, sample_and_hold_reference, simulate_two_timescale, TwoTimescaleConfig};

fn main() -> sekf::Result<()> {
    let cfg = TwoTimescaleConfig::default();
    let truth = simulate_two_timescale(&cfg)?;
    let layer = layer_equation(&cfg, cfg.p0)?;
    let held = sample_and_hold_reference(&cfg, 25.0)?;

    let mean_err = |x: &[f64]| x.iter().zip(&truth.clean).map(|(a, s)| (a - s[0]).abs()).sum::<f64>() / x.len() as f64;
    println!("switch times: {:?}", held.switch_times);
    println!("mean |error|  layer equation  {:.4}", mean_err(&layer.x));
    println!("mean |error|  sample and hold {:.4}", mean_err(&held.x));
    println!();
    println!("{:>6} {:>9} {:>9} {:>9}", "t", "exact", "layer", "held");
    for k in (0..truth.len()).step_by(100) {
        println!(
            "{:>6.1} {:>9.4} {:>9.4} {:>9.4}",
            truth.t[k], truth.clean[k][0], layer.x[k], held.x[k]
        );
    }
    Ok(())
}
