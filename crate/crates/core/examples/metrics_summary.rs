//! Error metrics, skill scores and normalization on a toy forecast.

use sekf::metrics::{fss, mae, mse, summarize, windowed_fss, Scaler};

fn main() -> sekf::Result<()> {
    let truth: Vec<f64> = (0..200).map(|k| (k as f64 * 0.05).sin()).collect();
    let stale: Vec<f64> = truth.iter().enumerate().map(|(k, y)| y + 0.002 * k as f64).collect();
    let tracked: Vec<f64> = truth.iter().map(|y| y + 0.01).collect();

    println!(
        "MAE stale {:.4}  tracked {:.4}",
        mae(&stale, &truth)?,
        mae(&tracked, &truth)?
    );
    println!(
        "MSE stale {:.4}  tracked {:.4}",
        mse(&stale, &truth)?,
        mse(&tracked, &truth)?
    );
    println!("FSS {:.4}", fss(mse(&tracked, &truth)?, mse(&stale, &truth)?)?);

    // Per-sample losses, skill per block of 50, then a mean with a 95% interval.
    let per = |p: &[f64]| p.iter().zip(&truth).map(|(a, b)| (a - b).abs()).collect::<Vec<_>>();
    let block = |v: Vec<f64>| {
        v.chunks(50)
            .map(|c| c.iter().sum::<f64>() / c.len() as f64)
            .collect::<Vec<_>>()
    };
    let skill = windowed_fss(&block(per(&tracked)), &block(per(&stale)))?;
    let rec = summarize("fss", &skill)?;
    println!(
        "block FSS {:?} -> {:.3} ± {:.3}",
        skill.iter().map(|s| (s * 1e3).round() / 1e3).collect::<Vec<_>>(),
        rec.mean,
        rec.ci95
    );

    let rows: Vec<Vec<f64>> = truth.iter().map(|&y| vec![10.0 * y + 3.0]).collect();
    let scaler = Scaler::fit(&rows)?;
    println!(
        "scaler mean {:.3} std {:.3}; 13.0 -> {:.3}",
        scaler.mean[0],
        scaler.std[0],
        scaler.apply(&[13.0])[0]
    );
    Ok(())
}
