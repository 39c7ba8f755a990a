//! Experiment orchestration: data preparation, initial training, benchmark
//! runs over several maintenance policies, and result bundles.

mod config;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

pub use config::{ExperimentConfig, ModelSpec, OfflineSpec, PolicySpec, ScenarioConfig};

use crate::error::{Error, Result};
use crate::maintenance::{run_policy, MaintenanceResult, StreamItem};
use crate::metrics::{self, block_means, summarize, MetricRecord, Scaler};
use crate::model::{Model, ParamModel, Sample};
use crate::nn::Mlp;
use crate::node::NodeModel;
use crate::rng::substream;
use crate::selection::validation_gradient_abs;
use crate::simulators::{
    self, add_noise, horizon_truth, horizon_window, horizon_windows, one_step_samples, one_step_truth, Dataset,
};
use crate::training::{self, mean_loss, Loss, TrainReport};

/// Simulated data turned into training material and a maintenance stream.
#[derive(Clone, Debug)]
pub struct Prepared {
    /// Measured data in model units (scaled when the config normalizes).
    pub dataset: Dataset,
    pub state_scaler: Scaler,
    pub input_scaler: Scaler,
    pub train: Vec<Sample>,
    pub validation: Vec<Sample>,
    pub test: Vec<Sample>,
    pub stream: Vec<StreamItem>,
}

pub fn simulate(config: &ExperimentConfig) -> Result<Dataset> {
    let raw = match &config.scenario {
        ScenarioConfig::TwoTimescale(c) => simulators::simulate_two_timescale(c)?,
        ScenarioConfig::Cstr(c) => simulators::simulate_cstr(&simulators::CstrConfig {
            seed: config.seed,
            ..c.clone()
        })?,
        ScenarioConfig::Glucose(c) => simulators::simulate_glucose(
            &simulators::GlucoseConfig {
                seed: config.seed,
                ..c.clone()
            }
            .scaled(config.scale)?,
        )?,
    };
    let sigma: Vec<f64> = raw.train_std().iter().map(|s| s * config.noise_fraction).collect();
    add_noise(&raw, &sigma, config.seed)
}

fn scale_dataset(ds: &Dataset, sx: &Scaler, su: &Scaler) -> Dataset {
    let mut out = ds.clone();
    out.states = ds.states.iter().map(|r| sx.apply(r)).collect();
    out.clean = ds.clean.iter().map(|r| sx.apply(r)).collect();
    out.inputs = ds.inputs.iter().map(|r| su.apply(r)).collect();
    out
}

/// Builds samples and the stream from a (noisy, unscaled) dataset.
pub fn prepare_dataset(config: &ExperimentConfig, raw: &Dataset) -> Result<Prepared> {
    let (state_scaler, input_scaler) = if config.normalize {
        (
            Scaler::fit(&raw.states[raw.train()])?,
            Scaler::fit(&raw.inputs[raw.train()])?,
        )
    } else {
        (Scaler::identity(raw.n_states()), Scaler::identity(raw.n_inputs()))
    };
    let ds = if config.normalize {
        scale_dataset(raw, &state_scaler, &input_scaler)
    } else {
        raw.clone()
    };
    let stream = build_stream(config, &ds)?;
    let (train, validation, test) = match &config.model {
        ModelSpec::Mlp { .. } => (
            one_step_samples(&ds, ds.train()),
            one_step_samples(&ds, ds.validation()),
            one_step_samples(&ds, ds.test()),
        ),
        ModelSpec::Node { horizon, .. } => (
            horizon_windows(&ds, ds.train(), *horizon, config.train_stride),
            horizon_windows(&ds, ds.validation(), *horizon, config.train_stride),
            horizon_windows(&ds, ds.test(), *horizon, config.train_stride),
        ),
    };
    if train.is_empty() {
        return Err(Error::NoData("scenario produced no training samples".into()));
    }
    Ok(Prepared {
        dataset: ds,
        state_scaler,
        input_scaler,
        train,
        validation,
        test,
        stream,
    })
}

/// The maintenance stream over `ds.maintenance()`, `ds` already in model
/// units. One-step pairs for MLPs, horizon windows for NODEs.
pub fn build_stream(config: &ExperimentConfig, ds: &Dataset) -> Result<Vec<StreamItem>> {
    let maint = ds.maintenance();
    let stride = config.stream_stride.max(1);
    Ok(match &config.model {
        ModelSpec::Mlp { .. } => maint
            .step_by(stride)
            .filter(|&k| k + 1 < ds.len())
            .enumerate()
            .map(|(i, k)| StreamItem {
                k: i,
                t: ds.t[k + 1],
                sample: one_step_samples(ds, k..k + 1).remove(0),
                truth: one_step_truth(ds, k),
            })
            .collect(),
        ModelSpec::Node { horizon, .. } => {
            let h = *horizon;
            maint
                .step_by(stride)
                .filter(|&s| s + h < ds.len())
                .enumerate()
                .filter_map(|(i, s)| {
                    Some(StreamItem {
                        k: i,
                        t: ds.t[s + h],
                        sample: horizon_window(ds, s, h)?,
                        truth: horizon_truth(ds, s, h),
                    })
                })
                .collect()
        }
    })
}

impl Prepared {
    /// Stream from an externally recorded dataset (e.g. a replayed CSV),
    /// scaled with the scalers fitted on the training split.
    pub fn external_stream(&self, config: &ExperimentConfig, raw: &Dataset) -> Result<Vec<StreamItem>> {
        crate::error::ensure_len("stream states", self.state_scaler.mean.len(), raw.n_states())?;
        crate::error::ensure_len("stream inputs", self.input_scaler.mean.len(), raw.n_inputs())?;
        build_stream(config, &scale_dataset(raw, &self.state_scaler, &self.input_scaler))
    }
}

pub fn prepare(config: &ExperimentConfig) -> Result<Prepared> {
    config.validate()?;
    prepare_dataset(config, &simulate(config)?)
}

/// A freshly initialized model for the config.
pub fn build_model(config: &ExperimentConfig, prepared: &Prepared) -> Result<Model> {
    let ds = &prepared.dataset;
    let seed = config.seed;
    Ok(match &config.model {
        ModelSpec::Mlp { hidden } => {
            let mut sizes = vec![ds.n_states() + ds.n_inputs()];
            sizes.extend(hidden);
            sizes.push(ds.n_states());
            Model::Mlp(Mlp::new(&sizes, seed)?)
        }
        ModelSpec::Node {
            hidden,
            horizon,
            extra_input,
        } => {
            let dt = if ds.len() > 1 { ds.t[1] - ds.t[0] } else { 1.0 };
            Model::Node(NodeModel::new(
                ds.n_states(),
                ds.n_inputs(),
                hidden,
                dt,
                *horizon,
                *extra_input,
                seed,
            )?)
        }
    })
}

/// Loss of a model over one split, per sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitReport {
    pub split: String,
    pub record: Option<MetricRecord>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainedModel {
    pub model: Model,
    pub report: TrainReport,
    pub splits: Vec<SplitReport>,
    /// Mag thresholds keyed by the quantile level as text.
    pub mag_thresholds: BTreeMap<String, f64>,
    pub wall_time: f64,
}

fn per_sample_losses<M: ParamModel + ?Sized>(
    model: &M,
    samples: &[Sample],
    config: &ExperimentConfig,
) -> Result<Vec<f64>> {
    samples
        .iter()
        .map(|s| Ok(config.metric.value(&model.predict(&s.input)?, &s.target)))
        .collect()
}

fn q_key(q: f64) -> String {
    format!("{q}")
}

/// Mag thresholds for every level in the config, fitted on the validation set.
pub fn fit_mag_thresholds<M: ParamModel + ?Sized>(
    model: &M,
    config: &ExperimentConfig,
    validation: &[Sample],
) -> Result<BTreeMap<String, f64>> {
    let levels = config.mag_levels();
    let mut out = BTreeMap::new();
    if levels.is_empty() {
        return Ok(out);
    }
    let g = validation_gradient_abs(model, validation)?;
    for q in levels {
        out.insert(q_key(q), crate::selection::quantile(&g, q)?);
    }
    Ok(out)
}

/// Trains the initial model and reports per-split losses and Mag thresholds.
pub fn train_initial(config: &ExperimentConfig, prepared: &Prepared) -> Result<TrainedModel> {
    let start = Instant::now();
    let mut model = build_model(config, prepared)?;
    let mut rng = substream(config.seed, "minibatch");
    let report = training::train(&mut model, &prepared.train, &config.training, None, &mut rng)?;
    let mut splits = Vec::new();
    for (name, set) in [
        ("training", &prepared.train),
        ("validation", &prepared.validation),
        ("test", &prepared.test),
    ] {
        let record = if set.len() >= 2 {
            Some(summarize(
                config.metric_name(),
                &per_sample_losses(&model, set, config)?,
            )?)
        } else {
            None
        };
        splits.push(SplitReport {
            split: name.into(),
            record,
        });
    }
    let fit_set = if prepared.validation.is_empty() {
        &prepared.train
    } else {
        &prepared.validation
    };
    let mag_thresholds = fit_mag_thresholds(&model, config, fit_set)?;
    Ok(TrainedModel {
        model,
        report,
        splits,
        mag_thresholds,
        wall_time: start.elapsed().as_secs_f64(),
    })
}

impl ExperimentConfig {
    pub fn metric_name(&self) -> &'static str {
        match self.metric {
            training::Loss::Mae => "mae",
            training::Loss::Mse => "mse",
        }
    }
}

/// One line of the summary table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub scenario: String,
    pub policy: String,
    pub selection: String,
    pub metric: String,
    pub mean: f64,
    pub ci95: f64,
}

impl SummaryRow {
    pub fn is_timing(&self) -> bool {
        self.metric.starts_with("mtpi") || self.metric.starts_with("time_cv") || self.metric == "train_seconds"
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyFailure {
    pub label: String,
    pub error: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Fingerprint {
    pub crate_version: String,
    pub clock_resolution_seconds: f64,
}

impl Fingerprint {
    pub fn current() -> Self {
        let mut best = f64::INFINITY;
        for _ in 0..64 {
            let a = Instant::now();
            let mut b = Instant::now();
            while b == a {
                b = Instant::now();
            }
            best = best.min((b - a).as_secs_f64());
        }
        Fingerprint {
            crate_version: env!("CARGO_PKG_VERSION").into(),
            clock_resolution_seconds: best,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Summary {
    pub scenario: String,
    pub rows: Vec<SummaryRow>,
    pub failures: Vec<PolicyFailure>,
    pub fingerprint: Fingerprint,
}

/// In-memory results of [`run_benchmark`].
#[derive(Clone, Debug)]
pub struct ResultsBundle {
    pub config: ExperimentConfig,
    pub trained: TrainedModel,
    pub results: Vec<(PolicySpec, MaintenanceResult)>,
    pub summary: Summary,
}

impl ResultsBundle {
    pub fn row(&self, label: &str, metric: &str) -> Option<&SummaryRow> {
        self.summary
            .rows
            .iter()
            .find(|r| format!("{}_{}", r.policy, r.selection) == label && r.metric == metric)
            .or_else(|| {
                self.summary
                    .rows
                    .iter()
                    .find(|r| r.policy == label && r.metric == metric)
            })
    }

    pub fn result(&self, label: &str) -> Option<&MaintenanceResult> {
        self.results.iter().map(|(_, r)| r).find(|r| r.label == label)
    }

    /// Writes `config.json`, `model.json`, `summary.csv`, `summary.json` and
    /// one `trace_<policy>_<selection>.csv` per run into `dir`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.config.save(dir.join("config.json"))?;
        self.trained.model.save(&dir.join("model.json"))?;
        write_summary_csv(&self.summary.rows, dir.join("summary.csv"))?;
        let path = dir.join("summary.json");
        std::fs::write(&path, serde_json::to_string_pretty(&self.summary)?).map_err(|e| Error::io(&path, e))?;
        for (_, res) in &self.results {
            res.save_csv(dir.join(trace_file_name(&res.label)))?;
        }
        Ok(())
    }
}

pub fn trace_file_name(label: &str) -> String {
    let name = if label == "none" { "none_none" } else { label };
    format!("trace_{name}.csv")
}

pub fn write_summary_csv(rows: &[SummaryRow], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["scenario", "policy", "selection", "metric", "mean", "ci95"])?;
    for r in rows {
        w.write_record([
            r.scenario.clone(),
            r.policy.clone(),
            r.selection.clone(),
            r.metric.clone(),
            r.mean.to_string(),
            r.ci95.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn read_summary_csv(path: impl AsRef<Path>) -> Result<Vec<SummaryRow>> {
    let path = path.as_ref();
    let mut r = csv::Reader::from_path(path)?;
    let mut rows = Vec::new();
    for rec in r.deserialize() {
        rows.push(rec?);
    }
    Ok(rows)
}

fn policy_names(spec: &PolicySpec) -> (String, String) {
    let kind = match spec {
        PolicySpec::None => "none",
        PolicySpec::Sekf { .. } => "sekf",
        PolicySpec::Finetune(_) => "finetune",
        PolicySpec::Retrain(_) => "retrain",
        PolicySpec::OnlineAdam { .. } => "online_adam",
    };
    let sel = spec
        .selection()
        .ok()
        .flatten()
        .map_or_else(|| "-".to_string(), |s| s.label());
    (kind.to_string(), sel)
}

/// Runs every configured policy from a copy of `trained` over the stream.
pub fn run_policies(config: &ExperimentConfig, prepared: &Prepared, trained: TrainedModel) -> Result<ResultsBundle> {
    let scenario = config.scenario.id().to_string();
    let mut rows = Vec::new();
    let push = |rows: &mut Vec<SummaryRow>, policy: &str, selection: &str, rec: &MetricRecord| {
        rows.push(SummaryRow {
            scenario: scenario.clone(),
            policy: policy.into(),
            selection: selection.into(),
            metric: rec.metric.clone(),
            mean: rec.mean,
            ci95: rec.ci95,
        })
    };
    for s in &trained.splits {
        if let Some(rec) = &s.record {
            push(&mut rows, &s.split, "-", rec);
        }
    }
    rows.push(SummaryRow {
        scenario: scenario.clone(),
        policy: "training".into(),
        selection: "-".into(),
        metric: "train_seconds".into(),
        mean: trained.wall_time,
        ci95: 0.0,
    });

    let lookup = |q: f64| trained.mag_thresholds.get(&q_key(q)).copied();
    let validation_loss = |loss: Loss| mean_loss(&trained.model, &prepared.validation, loss).ok();
    let mut specs = config.policies.clone();
    if !specs.iter().any(|p| matches!(p, PolicySpec::None)) {
        specs.insert(0, PolicySpec::None);
    }
    let mut results: Vec<(PolicySpec, MaintenanceResult)> = Vec::new();
    let mut failures = Vec::new();
    for spec in &specs {
        let (kind, sel) = policy_names(spec);
        let label = if kind == "none" {
            "none".to_string()
        } else {
            format!("{kind}_{sel}")
        };
        let run = || -> Result<MaintenanceResult> {
            let policy = spec.build(lookup, validation_loss)?;
            let mut model = trained.model.clone();
            let mut rng = substream(config.seed, &format!("policy:{label}"));
            run_policy(&policy, &mut model, &prepared.stream, &mut rng)
        };
        match run() {
            Ok(res) => {
                if results.iter().any(|(_, r)| r.label == res.label) {
                    log::warn!("duplicate policy {} skipped", res.label);
                    continue;
                }
                results.push((spec.clone(), res))
            }
            Err(e) => {
                log::error!("policy {label} failed: {e}");
                failures.push(PolicyFailure {
                    label,
                    error: e.to_string(),
                });
            }
        }
    }

    let baseline = results
        .iter()
        .find(|(s, _)| matches!(s, PolicySpec::None))
        .map(|(_, r)| r.losses(config.metric, config.metric_against_truth));
    for (spec, res) in &results {
        let (kind, sel) = policy_names(spec);
        let losses = res.losses(config.metric, config.metric_against_truth);
        if losses.len() >= 2 {
            push(&mut rows, &kind, &sel, &summarize(config.metric_name(), &losses)?);
        }
        if let (Some(base), false) = (&baseline, matches!(spec, PolicySpec::None)) {
            let ours = block_means(&losses, config.fss_window);
            let theirs = block_means(base, config.fss_window);
            if let Ok(skill) = metrics::windowed_fss(&ours, &theirs) {
                if skill.len() >= 2 {
                    push(&mut rows, &kind, &sel, &summarize("fss", &skill)?);
                }
            }
        }
        if !matches!(spec, PolicySpec::None) {
            let times = res.iter_times();
            if times.len() >= 2 {
                push(&mut rows, &kind, &sel, &summarize("mtpi_seconds", &times)?);
                if let Ok(cv) = metrics::coefficient_of_variation(&times) {
                    rows.push(SummaryRow {
                        scenario: scenario.clone(),
                        policy: kind.clone(),
                        selection: sel.clone(),
                        metric: "time_cv".into(),
                        mean: cv,
                        ci95: 0.0,
                    });
                }
            }
            rows.push(SummaryRow {
                scenario: scenario.clone(),
                policy: kind.clone(),
                selection: sel.clone(),
                metric: "events".into(),
                mean: res.event_count() as f64,
                ci95: 0.0,
            });
        }
    }
    Ok(ResultsBundle {
        config: config.clone(),
        trained,
        results,
        summary: Summary {
            scenario,
            rows,
            failures,
            fingerprint: Fingerprint::current(),
        },
    })
}

/// Simulates, trains (or uses `model`), and runs every policy.
pub fn run_benchmark(config: &ExperimentConfig, model: Option<Model>) -> Result<ResultsBundle> {
    let prepared = prepare(config)?;
    let trained = match model {
        Some(model) => {
            let start = Instant::now();
            let fit_set = if prepared.validation.is_empty() {
                &prepared.train
            } else {
                &prepared.validation
            };
            let mag_thresholds = fit_mag_thresholds(&model, config, fit_set)?;
            let mut splits = Vec::new();
            for (name, set) in [
                ("training", &prepared.train),
                ("validation", &prepared.validation),
                ("test", &prepared.test),
            ] {
                let record = if set.len() >= 2 {
                    Some(summarize(
                        config.metric_name(),
                        &per_sample_losses(&model, set, config)?,
                    )?)
                } else {
                    None
                };
                splits.push(SplitReport {
                    split: name.into(),
                    record,
                });
            }
            TrainedModel {
                model,
                report: TrainReport::default(),
                splits,
                mag_thresholds,
                wall_time: start.elapsed().as_secs_f64(),
            }
        }
        None => train_initial(config, &prepared)?,
    };
    run_policies(config, &prepared, trained)
}

/// Human-readable table of a bundle directory, plus a long-form
/// `report_losses.csv` of per-iteration losses for plotting.
pub fn report(bundle_dir: impl AsRef<Path>) -> Result<String> {
    let dir = bundle_dir.as_ref();
    let config = ExperimentConfig::load(dir.join("config.json"))?;
    let rows = read_summary_csv(dir.join("summary.csv"))?;
    let mut out = format!(
        "{:<14} {:<12} {:<12} {:<14} {:>14} {:>14}\n",
        "scenario", "policy", "selection", "metric", "mean", "ci95"
    );
    for r in &rows {
        out.push_str(&format!(
            "{:<14} {:<12} {:<12} {:<14} {:>14.6e} {:>14.6e}\n",
            r.scenario, r.policy, r.selection, r.metric, r.mean, r.ci95
        ));
    }

    let mut traces: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("trace_") && n.ends_with(".csv"))
        })
        .collect();
    traces.sort();
    let out_path = dir.join("report_losses.csv");
    let mut w = csv::Writer::from_path(&out_path)?;
    w.write_record(["run", "k", "t", config.metric_name()])?;
    for path in traces {
        let run = path
            .file_stem()
            .and_then(|n| n.to_str())
            .unwrap_or_default()
            .trim_start_matches("trace_")
            .to_string();
        let mut r = csv::Reader::from_path(&path)?;
        let headers = r.headers()?.clone();
        let err_cols: Vec<usize> = headers
            .iter()
            .enumerate()
            .filter(|(_, h)| h.starts_with("e_"))
            .map(|(i, _)| i)
            .collect();
        for rec in r.records() {
            let rec = rec?;
            let e: Vec<f64> = err_cols
                .iter()
                .map(|&c| {
                    rec[c]
                        .parse::<f64>()
                        .map_err(|_| Error::Schema(format!("{}: bad error cell", path.display())))
                })
                .collect::<Result<_>>()?;
            let loss = config.metric.value(&e, &vec![0.0; e.len()]);
            w.write_record([run.as_str(), &rec[0], &rec[1], &loss.to_string()])?;
        }
    }
    w.flush().map_err(|e| Error::io(&out_path, e))?;
    Ok(out)
}
