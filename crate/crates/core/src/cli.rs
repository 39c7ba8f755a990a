//! Command-line front end: `simulate`, `train`, `maintain`, `bench`, `report`.
//!
//! Exit codes: 0 success, 1 usage or input error, 2 numeric failure.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::error::{Error, Result};
use crate::harness::{self, ExperimentConfig, PolicySpec};
use crate::maintenance::run_policy;
use crate::model::Model;
use crate::rng::substream;
use crate::simulators::{ingest_csv_stream, CsvSchema};
use crate::{metrics, SelectionPolicy};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_NUMERIC: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "sekf", version, about = "Maintain neural-network models of drifting systems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate a scenario and write `dataset.csv`.
    Simulate(Common),
    /// Train the initial model and write `model.json` and `training.json`.
    Train(Common),
    /// Run one maintenance policy over the stream and write its trace.
    Maintain {
        #[command(flatten)]
        common: Common,
        /// Trained model; trained from the config when omitted.
        #[arg(long)]
        model: Option<PathBuf>,
        /// CSV to replay instead of the simulated maintenance window.
        #[arg(long)]
        stream: Option<PathBuf>,
    },
    /// Train and run every configured policy; write a results bundle.
    Bench {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Print a bundle's metric table and write `report_losses.csv`.
    Report {
        /// Bundle directory (defaults to `--out`).
        bundle: Option<PathBuf>,
        #[arg(long, default_value = "results")]
        out: PathBuf,
    },
}

#[derive(Debug, Args)]
struct Common {
    /// Experiment config (JSON). Overrides `--scenario`.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Built-in preset: two_timescale, cstr or glucose.
    #[arg(long)]
    scenario: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Duration scale (glucose only), e.g. `1/6` or `0.5`.
    #[arg(long, value_parser = parse_scale)]
    scale: Option<f64>,
    /// Policy such as `none`, `sekf:all`, `sekf:prop:0.95`, `finetune:mag:0.9`.
    #[arg(long)]
    policy: Option<String>,
    #[arg(long, default_value = "results")]
    out: PathBuf,
}

fn parse_scale(s: &str) -> std::result::Result<f64, String> {
    let v = match s.split_once('/') {
        Some((a, b)) => {
            let a: f64 = a.trim().parse().map_err(|_| format!("bad scale `{s}`"))?;
            let b: f64 = b.trim().parse().map_err(|_| format!("bad scale `{s}`"))?;
            a / b
        }
        None => s.trim().parse().map_err(|_| format!("bad scale `{s}`"))?,
    };
    if v.is_finite() && v > 0.0 {
        Ok(v)
    } else {
        Err(format!("scale must be positive, got `{s}`"))
    }
}

impl Common {
    fn config(&self) -> Result<ExperimentConfig> {
        let mut cfg = match (&self.config, &self.scenario) {
            (Some(path), _) => ExperimentConfig::load(path)?,
            (None, Some(id)) => ExperimentConfig::preset(id)?,
            (None, None) => return Err(Error::Config("one of --config or --scenario is required".into())),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(scale) = self.scale {
            cfg.scale = scale;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Resolves `kind[:selection]` against the config: hyperparameters come from
/// the first configured policy of that kind, else from the scenario preset.
pub fn resolve_policy(config: &ExperimentConfig, text: &str) -> Result<PolicySpec> {
    let (kind, selection) = match text.split_once(':') {
        Some((k, s)) => (k.trim(), s.trim()),
        None => (text.trim(), "all"),
    };
    selection.parse::<SelectionPolicy>()?;
    let same_kind = |p: &PolicySpec| policy_kind(p) == kind;
    if kind == "none" {
        return Ok(PolicySpec::None);
    }
    let template = match config.policies.iter().find(|p| same_kind(p)) {
        Some(p) => p.clone(),
        None => {
            let preset = ExperimentConfig::preset(config.scenario.id())?;
            match preset.policies.into_iter().find(|p| same_kind(p)) {
                Some(p) => p,
                None if kind == "online_adam" => PolicySpec::OnlineAdam {
                    selection: "all".into(),
                    lr: config.training.lr,
                    loss: config.metric,
                },
                None => return Err(Error::Config(format!("unknown policy kind `{kind}`"))),
            }
        }
    };
    Ok(template.with_selection(selection))
}

fn policy_kind(p: &PolicySpec) -> &'static str {
    match p {
        PolicySpec::None => "none",
        PolicySpec::Sekf { .. } => "sekf",
        PolicySpec::Finetune(_) => "finetune",
        PolicySpec::Retrain(_) => "retrain",
        PolicySpec::OnlineAdam { .. } => "online_adam",
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn load_model(path: &Path) -> Result<Model> {
    Model::load(path)
}

fn cmd_simulate(c: &Common) -> Result<i32> {
    let cfg = c.config()?;
    let ds = harness::simulate(&cfg)?;
    create_dir(&c.out)?;
    let path = c.out.join("dataset.csv");
    ds.save_csv(&path)?;
    println!("{} rows -> {}", ds.len(), path.display());
    Ok(EXIT_OK)
}

fn cmd_train(c: &Common) -> Result<i32> {
    let cfg = c.config()?;
    let prepared = harness::prepare(&cfg)?;
    let trained = harness::train_initial(&cfg, &prepared)?;
    create_dir(&c.out)?;
    cfg.save(c.out.join("config.json"))?;
    trained.model.save(&c.out.join("model.json"))?;
    let report = serde_json::json!({
        "report": trained.report,
        "splits": trained.splits,
        "mag_thresholds": trained.mag_thresholds,
        "wall_time": trained.wall_time,
    });
    let path = c.out.join("training.json");
    std::fs::write(&path, serde_json::to_string_pretty(&report)?).map_err(|e| Error::io(&path, e))?;
    for s in &trained.splits {
        if let Some(r) = &s.record {
            println!("{:<10} {} {:.6e} ± {:.3e}", s.split, r.metric, r.mean, r.ci95);
        }
    }
    println!("model -> {}", c.out.join("model.json").display());
    Ok(EXIT_OK)
}

fn cmd_maintain(c: &Common, model: Option<&Path>, stream: Option<&Path>) -> Result<i32> {
    let cfg = c.config()?;
    let text = c
        .policy
        .as_deref()
        .ok_or_else(|| Error::Config("--policy is required for maintain".into()))?;
    let spec = resolve_policy(&cfg, text)?;
    let prepared = harness::prepare(&cfg)?;
    let model = match model {
        Some(p) => load_model(p)?,
        None => harness::train_initial(&cfg, &prepared)?.model,
    };
    let items = match stream {
        Some(path) => {
            let schema = CsvSchema {
                time_column: "t".into(),
                state_names: prepared.dataset.state_names.clone(),
                input_names: prepared.dataset.input_names.clone(),
            };
            prepared.external_stream(&cfg, &ingest_csv_stream(path, &schema)?)?
        }
        None => prepared.stream.clone(),
    };
    let fit_set = if prepared.validation.is_empty() {
        &prepared.train
    } else {
        &prepared.validation
    };
    let thresholds = harness::fit_mag_thresholds(&model, &cfg_with(&cfg, &spec), fit_set)?;
    let lookup = |q: f64| thresholds.get(&format!("{q}")).copied();
    let validation_loss = |loss| crate::training::mean_loss(&model, fit_set, loss).ok();
    let policy = spec.build(lookup, validation_loss)?;

    let mut working = model.clone();
    let label = policy.label();
    let mut rng = substream(cfg.seed, &format!("policy:{label}"));
    let result = run_policy(&policy, &mut working, &items, &mut rng)?;
    create_dir(&c.out)?;
    let path = c.out.join(harness::trace_file_name(&result.label));
    result.save_csv(&path)?;
    let losses = result.losses(cfg.metric, cfg.metric_against_truth);
    if losses.len() >= 2 {
        let r = metrics::summarize(cfg.metric_name(), &losses)?;
        println!("{} {} {:.6e} ± {:.3e}", result.label, r.metric, r.mean, r.ci95);
    }
    println!("events {}  mtpi {:.3e} s", result.event_count(), result.mtpi()?);
    println!("trace -> {}", path.display());
    Ok(EXIT_OK)
}

/// Copy of `cfg` whose policy list is just `spec`, so Mag levels are fitted
/// for it alone.
fn cfg_with(cfg: &ExperimentConfig, spec: &PolicySpec) -> ExperimentConfig {
    ExperimentConfig {
        policies: vec![spec.clone()],
        ..cfg.clone()
    }
}

fn cmd_bench(c: &Common, model: Option<&Path>) -> Result<i32> {
    let mut cfg = c.config()?;
    if let Some(text) = &c.policy {
        let spec = resolve_policy(&cfg, text)?;
        cfg.policies = vec![PolicySpec::None];
        if !matches!(spec, PolicySpec::None) {
            cfg.policies.push(spec);
        }
    }
    let model = model.map(load_model).transpose()?;
    let bundle = harness::run_benchmark(&cfg, model)?;
    bundle.write(&c.out)?;
    print!("{}", harness::report(&c.out)?);
    for f in &bundle.summary.failures {
        eprintln!("policy {} failed: {}", f.label, f.error);
    }
    Ok(if bundle.summary.failures.is_empty() {
        EXIT_OK
    } else {
        EXIT_NUMERIC
    })
}

fn cmd_report(bundle: &Path) -> Result<i32> {
    print!("{}", harness::report(bundle)?);
    Ok(EXIT_OK)
}

/// Parses `args` (including the program name) and runs the subcommand,
/// writing diagnostics to stderr. Returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let outcome = match &cli.command {
        Command::Simulate(c) => cmd_simulate(c),
        Command::Train(c) => cmd_train(c),
        Command::Maintain { common, model, stream } => cmd_maintain(common, model.as_deref(), stream.as_deref()),
        Command::Bench { common, model } => cmd_bench(common, model.as_deref()),
        Command::Report { bundle, out } => cmd_report(bundle.as_deref().unwrap_or(out)),
    };
    let _ = std::io::stdout().flush();
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_numeric() {
                EXIT_NUMERIC
            } else {
                EXIT_USAGE
            }
        }
    }
}
