//! Proportion- and magnitude-based parameter selection.

use rand::Rng;
use sekf::selection::{quantile, select_mag, select_prop};
use sekf::{Mlp, ParamModel, Sample, SelectionPolicy};

fn main() -> sekf::Result<()> {
    let mut rng = sekf::rng::substream(1, "example");
    let grad: Vec<f64> = (0..10_000).map(|_| rng.gen::<f64>()).collect();
    for q in [0.5, 0.9, 0.95, 0.99] {
        println!(
            "prop{q:<5} selects {:>5} of {}",
            select_prop(&grad, q)?.len(),
            grad.len()
        );
    }
    let t = quantile(&grad, 0.9)?;
    println!("mag threshold {t:.4} selects {}", select_mag(&grad, t).len());

    // Mag thresholds are fitted once on validation data, then fixed: the
    // number of selected parameters varies from sample to sample.
    let mlp = Mlp::new(&[2, 10, 1], 3)?;
    let validation: Vec<Sample> = (0..50)
        .map(|k| {
            let x = k as f64 / 50.0;
            Sample {
                input: vec![x, 1.0 - x],
                target: vec![x * x],
            }
        })
        .collect();
    let mut policy = SelectionPolicy::mag(0.9)?;
    policy.fit(&mlp, &validation)?;
    println!("{policy:?}");
    for s in validation.iter().step_by(10) {
        let (y, h) = mlp.jacobian(&s.input)?;
        let e: Vec<f64> = s.target.iter().zip(&y).map(|(t, p)| t - p).collect();
        let g: Vec<f64> = sekf::nn::loss_gradient(&h, &e)?.iter().map(|v| v.abs()).collect();
        println!(
            "x = {:.2}: {} of {} parameters selected",
            s.input[0],
            policy.select(&g)?.len(),
            mlp.n_params()
        );
    }
    Ok(())
}
