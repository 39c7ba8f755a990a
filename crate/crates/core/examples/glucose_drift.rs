//! Simulated type-II diabetic patient whose insulin sensitivity decays during
//! the maintenance span. Prints one line per simulated week.
//!
//! `cargo run --release --example glucose_drift [scale]` (default 1/6)

use sekf::simulators::{simulate_glucose, GlucoseConfig};

fn main() -> sekf::Result<()> {
    let scale: f64 = std::env::args().nth(1).map_or(1.0 / 6.0, |s| s.parse().expect("scale"));
    let cfg = GlucoseConfig::default().scaled(scale)?;
    let ds = simulate_glucose(&cfg)?;
    let s = &ds.splits;
    println!(
        "{} minutes: train {}, validation {}, test {}, maintenance {}",
        ds.len(),
        s.train_end,
        s.validation_end - s.train_end,
        s.test_end - s.validation_end,
        ds.len() - s.test_end
    );
    let week = 7 * 1440;
    println!(
        "{:>5} {:>10} {:>8} {:>8} {:>8}",
        "week", "si", "mean G", "min G", "<70 min"
    );
    for (w, chunk) in ds.clean.chunks(week).enumerate() {
        let g: Vec<f64> = chunk.iter().map(|x| x[0]).collect();
        let mean = g.iter().sum::<f64>() / g.len() as f64;
        let min = g.iter().cloned().fold(f64::INFINITY, f64::min);
        let low = g.iter().filter(|&&v| v < 70.0).count();
        println!(
            "{w:>5} {:>10.3e} {mean:>8.1} {min:>8.1} {low:>8}",
            cfg.si_at(ds.t[w * week])
        );
    }
    Ok(())
}
