//! Maintenance on a recorded stream: write a dataset to CSV, read it back as
//! an external stream and filter a trained model over it.

use sekf::harness::{prepare, train_initial, ExperimentConfig};
use sekf::maintenance::{run_policy, MaintenancePolicy};
use sekf::simulators::{ingest_csv_stream, CsvSchema};
use sekf::training::Loss;
use sekf::SelectionPolicy;

fn main() -> sekf::Result<()> {
    let mut cfg = ExperimentConfig::preset("two_timescale")?;
    cfg.training.epochs = 300;
    let prepared = prepare(&cfg)?;
    let trained = train_initial(&cfg, &prepared)?;

    let path = std::env::temp_dir().join("sekf_replay.csv");
    prepared.dataset.save_csv(&path)?;
    let recorded = ingest_csv_stream(&path, &CsvSchema::new(&["x"], &["u"]))?;
    let stream = prepared.external_stream(&cfg, &recorded)?;
    println!("replaying {} samples from {}", stream.len(), path.display());

    let policy = MaintenancePolicy::Sekf {
        p0: 100.0,
        q0: 0.1,
        eta: 0.1,
        selection: SelectionPolicy::prop(0.9)?,
    };
    let mut rng = sekf::rng::substream(cfg.seed, "replay");
    for policy in [MaintenancePolicy::None, policy] {
        let mut model = trained.model.clone();
        let res = run_policy(&policy, &mut model, &stream, &mut rng)?;
        let l = res.losses(Loss::Mae, false);
        println!("{:<14} MAE {:.3e}", res.label, l.iter().sum::<f64>() / l.len() as f64);
    }
    Ok(())
}
