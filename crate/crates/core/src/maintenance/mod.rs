//! Maintenance policies and the streaming loop that applies them.

mod offline;

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

pub use offline::{
    finetune, maintenance_trigger, online_gradient_step, retrain, EventOutcome, OfflineMode, OfflinePolicyConfig,
    RollingBuffer, TriggerStatistic,
};

use crate::error::{Error, Result};
use crate::metrics;
use crate::model::{ParamModel, Sample};
use crate::nn::AdamState;
use crate::rng::Rng;
use crate::sekf::SekfState;
use crate::selection::SelectionPolicy;
use crate::training::Loss;

/// How a model is kept up to date while samples stream in.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MaintenancePolicy {
    None,
    Sekf {
        p0: f64,
        q0: f64,
        eta: f64,
        selection: SelectionPolicy,
    },
    Offline(OfflinePolicyConfig),
    OnlineAdam {
        lr: f64,
        selection: SelectionPolicy,
        loss: Loss,
    },
}

impl MaintenancePolicy {
    /// Short name such as `sekf`, `finetune`, `none`.
    pub fn kind_label(&self) -> &'static str {
        match self {
            MaintenancePolicy::None => "none",
            MaintenancePolicy::Sekf { .. } => "sekf",
            MaintenancePolicy::Offline(c) => match c.mode {
                OfflineMode::Retrain => "retrain",
                OfflineMode::Finetune => "finetune",
            },
            MaintenancePolicy::OnlineAdam { .. } => "online_adam",
        }
    }

    pub fn selection(&self) -> Option<&SelectionPolicy> {
        match self {
            MaintenancePolicy::None => None,
            MaintenancePolicy::Sekf { selection, .. } | MaintenancePolicy::OnlineAdam { selection, .. } => {
                Some(selection)
            }
            MaintenancePolicy::Offline(c) => Some(&c.selection),
        }
    }

    pub fn selection_mut(&mut self) -> Option<&mut SelectionPolicy> {
        match self {
            MaintenancePolicy::None => None,
            MaintenancePolicy::Sekf { selection, .. } | MaintenancePolicy::OnlineAdam { selection, .. } => {
                Some(selection)
            }
            MaintenancePolicy::Offline(c) => Some(&mut c.selection),
        }
    }

    /// `none`, or e.g. `sekf_prop0.95`.
    pub fn label(&self) -> String {
        match self.selection() {
            None => "none".into(),
            Some(s) => format!("{}_{}", self.kind_label(), s.label()),
        }
    }
}

/// One streamed supervised sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StreamItem {
    pub k: usize,
    pub t: f64,
    pub sample: Sample,
    /// Noise-free target, for metrics against the true system.
    pub truth: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub k: usize,
    pub t: f64,
    pub prediction: Vec<f64>,
    /// Measured target minus the prediction made before the update.
    pub error: Vec<f64>,
    /// True target minus the same prediction.
    pub truth_error: Vec<f64>,
    pub selected_count: usize,
    pub iter_time: f64,
    pub event: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaintenanceResult {
    pub label: String,
    pub records: Vec<IterationRecord>,
    pub final_params: Vec<f64>,
}

impl MaintenanceResult {
    /// Per-iteration loss (`mae`/`mse` of the pre-update error).
    pub fn losses(&self, loss: Loss, against_truth: bool) -> Vec<f64> {
        self.records
            .iter()
            .map(|r| {
                let e = if against_truth { &r.truth_error } else { &r.error };
                let zero = vec![0.0; e.len()];
                loss.value(e, &zero)
            })
            .collect()
    }

    pub fn iter_times(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.iter_time).collect()
    }

    pub fn event_count(&self) -> usize {
        self.records.iter().filter(|r| r.event).count()
    }

    pub fn mtpi(&self) -> Result<f64> {
        metrics::mtpi(&self.iter_times())
    }

    /// CSV with columns `k,t,e_0..e_{n-1},selected_count,iter_time_seconds,policy_event`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let n = self.records.first().map_or(0, |r| r.error.len());
        let mut header = vec!["k".to_string(), "t".to_string()];
        header.extend((0..n).map(|j| format!("e_{j}")));
        header.extend(["selected_count", "iter_time_seconds", "policy_event"].map(String::from));
        w.write_record(&header)?;
        for r in &self.records {
            let mut row = vec![r.k.to_string(), r.t.to_string()];
            row.extend(r.error.iter().map(f64::to_string));
            row.push(r.selected_count.to_string());
            row.push(r.iter_time.to_string());
            row.push(u8::from(r.event).to_string());
            w.write_record(&row)?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(file))
    }
}

fn subtract(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// Streams `stream` through `model` under `policy`. Each iteration first
/// records the prediction made with the current parameters, then lets the
/// policy update them; the recorded time covers both.
pub fn run_policy<M: ParamModel + ?Sized>(
    policy: &MaintenancePolicy,
    model: &mut M,
    stream: &[StreamItem],
    rng: &mut Rng,
) -> Result<MaintenanceResult> {
    if policy.selection().is_some_and(|s| s.needs_fit()) {
        return Err(Error::Config(format!(
            "policy {} uses a Mag selection without a fitted threshold",
            policy.label()
        )));
    }
    let l = model.n_params();
    let mut sekf = match policy {
        MaintenancePolicy::Sekf { p0, q0, eta, selection } => Some(SekfState::new(l, *p0, *q0, *eta, *selection)?),
        _ => None,
    };
    let mut adam = match policy {
        MaintenancePolicy::OnlineAdam { lr, .. } => Some(AdamState::new(l, *lr)),
        _ => None,
    };
    let mut buffer = match policy {
        MaintenancePolicy::Offline(c) => {
            c.validate()?;
            Some(RollingBuffer::new(c.buffer_capacity))
        }
        _ => None,
    };
    let mut recent: std::collections::VecDeque<f64> = Default::default();

    let mut records = Vec::with_capacity(stream.len());
    for item in stream {
        let start = Instant::now();
        let s = &item.sample;
        let (prediction, selected_count, event) = match policy {
            MaintenancePolicy::None => (model.predict(&s.input)?, 0, false),
            MaintenancePolicy::Sekf { .. } => {
                let state = sekf.as_mut().expect("initialized above");
                let out = state.step(model, &s.input, &s.target)?;
                let count = out.selected.len();
                (out.prediction, count, count > 0)
            }
            MaintenancePolicy::OnlineAdam { selection, loss, .. } => {
                let prediction = model.predict(&s.input)?;
                let opt = adam.as_mut().expect("initialized above");
                let j = online_gradient_step(model, opt, s, selection, *loss)?;
                (prediction, j.len(), !j.is_empty())
            }
            MaintenancePolicy::Offline(cfg) => {
                let prediction = model.predict(&s.input)?;
                let buf = buffer.as_mut().expect("initialized above");
                buf.push(s.clone());
                let latest = cfg.loss.value(&prediction, &s.target);
                let statistic = match cfg.trigger {
                    TriggerStatistic::Latest => latest,
                    TriggerStatistic::RollingMean { window } => {
                        recent.push_back(latest);
                        while recent.len() > window.max(1) {
                            recent.pop_front();
                        }
                        recent.iter().sum::<f64>() / recent.len() as f64
                    }
                };
                if maintenance_trigger(statistic, cfg.threshold) {
                    let outcome = match cfg.mode {
                        OfflineMode::Finetune => finetune(model, buf, cfg, rng)?,
                        OfflineMode::Retrain => retrain(model, buf, cfg, rng)?,
                    };
                    let count = outcome.selected.map_or(l, |j| j.len());
                    (prediction, count, true)
                } else {
                    (prediction, 0, false)
                }
            }
        };
        let iter_time = start.elapsed().as_secs_f64();
        if prediction.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!(
                "non-finite prediction at stream index {}",
                item.k
            )));
        }
        records.push(IterationRecord {
            k: item.k,
            t: item.t,
            error: subtract(&s.target, &prediction),
            truth_error: subtract(&item.truth, &prediction),
            prediction,
            selected_count,
            iter_time,
            event,
        });
    }
    Ok(MaintenanceResult {
        label: policy.label(),
        records,
        final_params: model.params().to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Mlp;
    use crate::rng::substream;

    fn stream_from(model: &Mlp, n: usize, bump: f64) -> Vec<StreamItem> {
        (0..n)
            .map(|k| {
                let x = (k as f64 * 0.37).sin();
                let y = model.forward(&[x]).unwrap()[0] + bump;
                StreamItem {
                    k,
                    t: k as f64,
                    sample: Sample {
                        input: vec![x],
                        target: vec![y],
                    },
                    truth: vec![y],
                }
            })
            .collect()
    }

    fn sekf_all() -> MaintenancePolicy {
        MaintenancePolicy::Sekf {
            p0: 100.0,
            q0: 0.1,
            eta: 0.01,
            selection: SelectionPolicy::All,
        }
    }

    #[test]
    fn no_maintenance_keeps_parameters() {
        let model = Mlp::new(&[1, 4, 1], 2).unwrap();
        let stream = stream_from(&model, 20, 0.5);
        let mut m = model.clone();
        let res = run_policy(&MaintenancePolicy::None, &mut m, &stream, &mut substream(0, "x")).unwrap();
        assert_eq!(res.final_params, model.params());
        assert_eq!(res.records.len(), 20);
        assert!(res.records.iter().all(|r| (r.error[0] - 0.5).abs() < 1e-12));
    }

    #[test]
    fn sekf_on_exact_stream_keeps_predictions() {
        let model = Mlp::new(&[1, 4, 1], 2).unwrap();
        let stream = stream_from(&model, 20, 0.0);
        let mut m = model.clone();
        let res = run_policy(&sekf_all(), &mut m, &stream, &mut substream(0, "x")).unwrap();
        assert!(res.records.iter().all(|r| r.error[0].abs() < 1e-12));
        assert_eq!(res.final_params, model.params());
    }

    #[test]
    fn prediction_precedes_update() {
        let model = Mlp::new(&[1, 4, 1], 2).unwrap();
        let mut stream = stream_from(&model, 10, 0.0);
        let mut spiked = stream.clone();
        spiked[5].sample.target[0] += 100.0;
        let mut a = model.clone();
        let mut b = model.clone();
        let ra = run_policy(&sekf_all(), &mut a, &stream, &mut substream(0, "x")).unwrap();
        let rb = run_policy(&sekf_all(), &mut b, &spiked, &mut substream(0, "x")).unwrap();
        assert_eq!(ra.records[5].prediction, rb.records[5].prediction);
        assert_ne!(ra.records[6].prediction, rb.records[6].prediction);
        stream.clear();
        assert!(run_policy(&sekf_all(), &mut a, &stream, &mut substream(0, "x"))
            .unwrap()
            .records
            .is_empty());
    }

    #[test]
    fn infinite_threshold_never_triggers() {
        let model = Mlp::new(&[1, 4, 1], 2).unwrap();
        let stream = stream_from(&model, 15, 0.3);
        let policy = MaintenancePolicy::Offline(OfflinePolicyConfig {
            mode: OfflineMode::Finetune,
            threshold: f64::INFINITY,
            epochs: 5,
            batch_size: 5,
            lr: 0.01,
            selection: SelectionPolicy::All,
            buffer_capacity: 50,
            loss: Loss::Mse,
            trigger: TriggerStatistic::Latest,
            early_stop: None,
        });
        let mut a = model.clone();
        let mut b = model.clone();
        let ra = run_policy(&policy, &mut a, &stream, &mut substream(0, "x")).unwrap();
        let rb = run_policy(&MaintenancePolicy::None, &mut b, &stream, &mut substream(0, "x")).unwrap();
        assert_eq!(ra.losses(Loss::Mse, false), rb.losses(Loss::Mse, false));
        assert_eq!(ra.event_count(), 0);
    }

    #[test]
    fn unfitted_mag_is_rejected_and_csv_has_columns() {
        let model = Mlp::new(&[1, 4, 1], 2).unwrap();
        let stream = stream_from(&model, 3, 0.3);
        let policy = MaintenancePolicy::Sekf {
            p0: 100.0,
            q0: 0.1,
            eta: 0.01,
            selection: SelectionPolicy::mag(0.9).unwrap(),
        };
        let mut m = model.clone();
        assert!(matches!(
            run_policy(&policy, &mut m, &stream, &mut substream(0, "x")),
            Err(Error::Config(_))
        ));
        let res = run_policy(&sekf_all(), &mut m, &stream, &mut substream(0, "x")).unwrap();
        let mut buf = Vec::new();
        res.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("k,t,e_0,selected_count,iter_time_seconds,policy_event\n"));
        assert_eq!(text.lines().count(), 4);
    }
}
