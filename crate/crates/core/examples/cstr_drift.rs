//! Reactor with a slowly rising reverse rate constant: simulate, fit a
//! short-trained neural ODE and compare Prop.95 filtering with no
//! maintenance.

use sekf::harness::{run_benchmark, ExperimentConfig, PolicySpec};
use sekf::simulators::{simulate_cstr, CstrConfig};

fn main() -> sekf::Result<()> {
    let sim = CstrConfig::default();
    let ds = simulate_cstr(&sim)?;
    println!(
        "{} minutes, states {:?}, input {:?}",
        ds.len(),
        ds.state_names,
        ds.input_names
    );
    for k in (0..ds.len()).step_by(720) {
        println!(
            "t = {:>5} min  k2r = {:.4}  C = {:?}",
            ds.t[k],
            sim.k2r_at(ds.t[k]),
            ds.clean[k].iter().map(|c| (c * 1e3).round() / 1e3).collect::<Vec<_>>()
        );
    }

    // A quick variant of the preset: fewer epochs, one filter policy.
    let mut cfg = ExperimentConfig::preset("cstr")?;
    cfg.training.epochs = 20;
    cfg.policies
        .retain(|p| matches!(p, PolicySpec::None | PolicySpec::Sekf { .. }));
    cfg.expand_selections(&["prop:0.95"]);
    let bundle = run_benchmark(&cfg, None)?;
    for row in bundle.summary.rows.iter().filter(|r| !r.is_timing()) {
        println!(
            "{:<10} {:<10} {:<8} {:.4e}",
            row.policy, row.selection, row.metric, row.mean
        );
    }
    Ok(())
}
