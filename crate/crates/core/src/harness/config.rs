//! Experiment configuration and the per-scenario presets.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::maintenance::{MaintenancePolicy, OfflineMode, OfflinePolicyConfig, TriggerStatistic};
use crate::selection::SelectionPolicy;
use crate::simulators::{CstrConfig, GlucoseConfig, TwoTimescaleConfig};
use crate::training::{Loss, PlateauConfig, TrainConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "system", rename_all = "snake_case")]
pub enum ScenarioConfig {
    TwoTimescale(TwoTimescaleConfig),
    Cstr(CstrConfig),
    Glucose(GlucoseConfig),
}

impl ScenarioConfig {
    pub fn id(&self) -> &'static str {
        match self {
            ScenarioConfig::TwoTimescale(_) => "two_timescale",
            ScenarioConfig::Cstr(_) => "cstr",
            ScenarioConfig::Glucose(_) => "glucose",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelSpec {
    /// One-step map `[x_k, u_k] -> x_{k+1}` with the given hidden widths.
    Mlp { hidden: Vec<usize> },
    /// Neural ODE over a horizon of `horizon` samples.
    Node {
        hidden: Vec<usize>,
        horizon: usize,
        extra_input: bool,
    },
}

/// A policy entry as written in experiment files; `selection` is one of
/// `all`, `prop:<q>`, `mag:<q>`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PolicySpec {
    None,
    Sekf {
        selection: String,
        p0: f64,
        q0: f64,
        eta: f64,
    },
    Finetune(OfflineSpec),
    Retrain(OfflineSpec),
    OnlineAdam {
        selection: String,
        lr: f64,
        loss: Loss,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OfflineSpec {
    pub selection: String,
    pub threshold: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub buffer: usize,
    pub loss: Loss,
    #[serde(default)]
    pub rolling_trigger: Option<usize>,
    #[serde(default)]
    pub early_stop: Option<f64>,
    /// When set, the trigger threshold becomes this multiple of the trained
    /// model's validation loss and `threshold` is ignored.
    #[serde(default)]
    pub relative_threshold: Option<f64>,
}

impl PolicySpec {
    pub fn selection(&self) -> Result<Option<SelectionPolicy>> {
        let s = match self {
            PolicySpec::None => return Ok(None),
            PolicySpec::Sekf { selection, .. } | PolicySpec::OnlineAdam { selection, .. } => selection,
            PolicySpec::Finetune(o) | PolicySpec::Retrain(o) => &o.selection,
        };
        Ok(Some(s.parse()?))
    }

    /// The runnable policy. Mag thresholds are looked up by `mag_threshold(q)`;
    /// relative trigger thresholds scale `validation_loss(loss)`.
    pub fn build(
        &self,
        mag_threshold: impl Fn(f64) -> Option<f64>,
        validation_loss: impl Fn(Loss) -> Option<f64>,
    ) -> Result<MaintenancePolicy> {
        let selection = match self.selection()? {
            Some(SelectionPolicy::Mag { q, threshold: None }) => {
                let t =
                    mag_threshold(q).ok_or_else(|| Error::Config(format!("no fitted Mag threshold for q = {q}")))?;
                Some(SelectionPolicy::mag_with_threshold(q, t)?)
            }
            other => other,
        };
        let offline =
            |o: &OfflineSpec, mode| -> Result<MaintenancePolicy> {
                let threshold = match o.relative_threshold {
                    None => o.threshold,
                    Some(m) => {
                        let v = validation_loss(o.loss)
                            .ok_or_else(|| Error::Config("relative threshold needs a validation loss".into()))?;
                        m * v
                    }
                };
                Ok(MaintenancePolicy::Offline(OfflinePolicyConfig {
                    mode,
                    threshold,
                    epochs: o.epochs,
                    batch_size: o.batch_size,
                    lr: o.lr,
                    selection: selection.expect("offline policies carry a selection"),
                    buffer_capacity: o.buffer,
                    loss: o.loss,
                    trigger: o.rolling_trigger.map_or(TriggerStatistic::Latest, |window| {
                        TriggerStatistic::RollingMean { window }
                    }),
                    early_stop: o.early_stop,
                }))
            };
        Ok(match self {
            PolicySpec::None => MaintenancePolicy::None,
            PolicySpec::Sekf { p0, q0, eta, .. } => MaintenancePolicy::Sekf {
                p0: *p0,
                q0: *q0,
                eta: *eta,
                selection: selection.expect("sekf carries a selection"),
            },
            PolicySpec::Finetune(o) => offline(o, OfflineMode::Finetune)?,
            PolicySpec::Retrain(o) => offline(o, OfflineMode::Retrain)?,
            PolicySpec::OnlineAdam { lr, loss, .. } => MaintenancePolicy::OnlineAdam {
                lr: *lr,
                loss: *loss,
                selection: selection.expect("online adam carries a selection"),
            },
        })
    }

    pub fn with_selection(&self, selection: &str) -> Self {
        let mut out = self.clone();
        match &mut out {
            PolicySpec::None => {}
            PolicySpec::Sekf { selection: s, .. } | PolicySpec::OnlineAdam { selection: s, .. } => {
                *s = selection.to_string()
            }
            PolicySpec::Finetune(o) | PolicySpec::Retrain(o) => o.selection = selection.to_string(),
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub name: String,
    pub seed: u64,
    pub scenario: ScenarioConfig,
    /// Duration scale applied to the glucose scenario.
    #[serde(default = "one")]
    pub scale: f64,
    /// Measurement noise std as a fraction of each state's training std.
    pub noise_fraction: f64,
    /// Standardize states and inputs with statistics of the training span.
    pub normalize: bool,
    pub model: ModelSpec,
    pub training: TrainConfig,
    /// Row stride between training windows (NODE models).
    #[serde(default = "one_usize")]
    pub train_stride: usize,
    /// Row stride between streamed maintenance samples.
    #[serde(default = "one_usize")]
    pub stream_stride: usize,
    /// Loss reported in the tables (MAE for the one-step case, MSE otherwise).
    pub metric: Loss,
    /// Evaluate against the noise-free states instead of the measurements.
    #[serde(default)]
    pub metric_against_truth: bool,
    /// Consecutive iterations per skill-score window.
    #[serde(default = "one_usize")]
    pub fss_window: usize,
    pub policies: Vec<PolicySpec>,
}

fn one() -> f64 {
    1.0
}

fn one_usize() -> usize {
    1
}

impl ExperimentConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: ExperimentConfig = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(path, e))
    }

    pub fn validate(&self) -> Result<()> {
        for p in &self.policies {
            p.selection()?;
        }
        if !(self.scale > 0.0 && self.scale <= 1.0) {
            return Err(Error::Config(format!("scale must lie in (0, 1], got {}", self.scale)));
        }
        if !(self.noise_fraction >= 0.0) {
            return Err(Error::Config("noise fraction must be >= 0".into()));
        }
        if self.fss_window == 0 || self.stream_stride == 0 || self.train_stride == 0 {
            return Err(Error::Config("strides and windows must be >= 1".into()));
        }
        Ok(())
    }

    /// Mag levels referenced by any policy.
    pub fn mag_levels(&self) -> Vec<f64> {
        let mut qs: Vec<f64> = self
            .policies
            .iter()
            .filter_map(|p| match p.selection() {
                Ok(Some(SelectionPolicy::Mag { q, .. })) => Some(q),
                _ => None,
            })
            .collect();
        qs.sort_by(f64::total_cmp);
        qs.dedup();
        qs
    }

    /// Built-in configuration for `two_timescale`, `cstr` or `glucose`.
    pub fn preset(scenario: &str) -> Result<Self> {
        match scenario {
            "two_timescale" => Ok(two_timescale_preset()),
            "cstr" => Ok(cstr_preset()),
            "glucose" => Ok(glucose_preset()),
            other => Err(Error::Config(format!(
                "unknown scenario `{other}`; expected two_timescale, cstr or glucose"
            ))),
        }
    }

    /// Replaces every policy with one per selection.
    pub fn expand_selections(&mut self, selections: &[&str]) {
        let mut out = Vec::new();
        for p in &self.policies {
            if matches!(p, PolicySpec::None) {
                out.push(p.clone());
            } else {
                out.extend(selections.iter().map(|s| p.with_selection(s)));
            }
        }
        self.policies = out;
    }
}

fn offline(selection: &str, threshold: f64, lr: f64, batch: usize, loss: Loss) -> OfflineSpec {
    OfflineSpec {
        selection: selection.into(),
        threshold,
        epochs: 50,
        batch_size: batch,
        lr,
        buffer: 50,
        loss,
        rolling_trigger: None,
        early_stop: None,
        relative_threshold: None,
    }
}

fn relative(mut o: OfflineSpec, multiple: f64) -> OfflineSpec {
    o.relative_threshold = Some(multiple);
    o
}

fn two_timescale_preset() -> ExperimentConfig {
    ExperimentConfig {
        name: "two_timescale".into(),
        seed: 0,
        scenario: ScenarioConfig::TwoTimescale(TwoTimescaleConfig::default()),
        scale: 1.0,
        noise_fraction: 0.0,
        normalize: false,
        model: ModelSpec::Mlp { hidden: vec![10] },
        training: TrainConfig {
            epochs: 1000,
            batch_size: 5,
            lr: 0.01,
            loss: Loss::Mae,
            plateau: Some(PlateauConfig {
                factor: 0.3,
                patience: 50,
            }),
            early_stop: None,
            samples_per_epoch: None,
        },
        train_stride: 1,
        stream_stride: 1,
        metric: Loss::Mae,
        metric_against_truth: false,
        fss_window: 100,
        policies: vec![
            PolicySpec::None,
            PolicySpec::Sekf {
                selection: "all".into(),
                p0: 100.0,
                q0: 0.1,
                eta: 0.1,
            },
            PolicySpec::Finetune(relative(offline("all", 0.1, 0.01, 5, Loss::Mae), 2.0)),
            PolicySpec::Retrain(relative(offline("all", 0.1, 0.01, 5, Loss::Mae), 2.0)),
        ],
    }
}

fn cstr_preset() -> ExperimentConfig {
    ExperimentConfig {
        name: "cstr".into(),
        seed: 0,
        scenario: ScenarioConfig::Cstr(CstrConfig::default()),
        scale: 1.0,
        noise_fraction: 0.01,
        normalize: true,
        model: ModelSpec::Node {
            hidden: vec![16, 16],
            horizon: 60,
            extra_input: true,
        },
        training: TrainConfig {
            epochs: 150,
            batch_size: 100,
            lr: 5e-3,
            loss: Loss::Mse,
            plateau: None,
            early_stop: None,
            samples_per_epoch: None,
        },
        train_stride: 1,
        stream_stride: 1,
        metric: Loss::Mse,
        metric_against_truth: false,
        fss_window: 1,
        policies: vec![
            PolicySpec::None,
            PolicySpec::Sekf {
                selection: "all".into(),
                p0: 100.0,
                q0: 0.1,
                eta: 3e-4,
            },
            PolicySpec::Finetune(relative(offline("all", 0.2, 1e-3, 5, Loss::Mse), 2.0)),
        ],
    }
}

fn glucose_preset() -> ExperimentConfig {
    ExperimentConfig {
        name: "glucose".into(),
        seed: 0,
        scenario: ScenarioConfig::Glucose(GlucoseConfig::default()),
        scale: 1.0 / 6.0,
        noise_fraction: 0.01,
        normalize: true,
        model: ModelSpec::Node {
            hidden: vec![32, 32],
            horizon: 60,
            extra_input: true,
        },
        training: TrainConfig {
            epochs: 150,
            batch_size: 64,
            lr: 5e-3,
            loss: Loss::Mse,
            plateau: None,
            early_stop: None,
            samples_per_epoch: Some(1024),
        },
        train_stride: 30,
        stream_stride: 60,
        metric: Loss::Mse,
        metric_against_truth: false,
        fss_window: 1,
        policies: vec![
            PolicySpec::None,
            PolicySpec::Sekf {
                selection: "all".into(),
                p0: 100.0,
                q0: 0.1,
                eta: 1e-3,
            },
            PolicySpec::Finetune(offline("all", 0.06, 1e-5, 5, Loss::Mse)),
        ],
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_round_trip_through_json() {
        for id in ["two_timescale", "cstr", "glucose"] {
            let cfg = ExperimentConfig::preset(id).unwrap();
            let text = serde_json::to_string(&cfg).unwrap();
            let back: ExperimentConfig = serde_json::from_str(&text).unwrap();
            assert_eq!(back, cfg);
            back.validate().unwrap();
        }
        assert!(ExperimentConfig::preset("fcc").is_err());
    }

    #[test]
    fn bad_selection_is_rejected() {
        let mut cfg = ExperimentConfig::preset("two_timescale").unwrap();
        cfg.policies.push(PolicySpec::Sekf {
            selection: "top:3".into(),
            p0: 1.0,
            q0: 0.0,
            eta: 1.0,
        });
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn mag_levels_and_build() {
        let mut cfg = ExperimentConfig::preset("two_timescale").unwrap();
        cfg.expand_selections(&["all", "mag:0.95", "prop:0.9", "mag:0.5"]);
        assert_eq!(cfg.mag_levels(), vec![0.5, 0.95]);
        let mag = cfg
            .policies
            .iter()
            .find(|p| matches!(p.selection(), Ok(Some(SelectionPolicy::Mag { .. }))))
            .unwrap();
        assert!(mag.build(|_| None, |_| None).is_err());
        let built = mag.build(|q| Some(q / 10.0), |_| None).unwrap();
        assert!(!built.selection().unwrap().needs_fit());
    }
}
