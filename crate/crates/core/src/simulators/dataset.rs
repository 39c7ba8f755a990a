//! Time-series datasets, measurement noise, CSV exchange, and the builders
//! that turn a dataset into supervised samples.

use std::io::{Read, Write};
use std::ops::Range;
use std::path::Path;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Sample;
use crate::rng::substream;

/// Exclusive end indices of the consecutive train / validation / test spans.
/// Everything from `test_end` on is the maintenance span.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Splits {
    pub train_end: usize,
    pub validation_end: usize,
    pub test_end: usize,
}

/// Values of the drifting physical parameter at each sample time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DriftTrace {
    pub name: String,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub state_names: Vec<String>,
    pub input_names: Vec<String>,
    pub t: Vec<f64>,
    /// Measured states (clean plus noise).
    pub states: Vec<Vec<f64>>,
    pub clean: Vec<Vec<f64>>,
    /// Exogenous inputs; row `k` is held over `[t_k, t_{k+1})`.
    pub inputs: Vec<Vec<f64>>,
    pub splits: Splits,
    pub drift: Option<DriftTrace>,
}

impl Dataset {
    /// A noise-free dataset; `states` starts equal to `clean`.
    pub fn new(
        state_names: Vec<String>,
        input_names: Vec<String>,
        t: Vec<f64>,
        clean: Vec<Vec<f64>>,
        inputs: Vec<Vec<f64>>,
        splits: Splits,
    ) -> Result<Self> {
        let ds = Dataset {
            state_names,
            input_names,
            t,
            states: clean.clone(),
            clean,
            inputs,
            splits,
            drift: None,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn n_states(&self) -> usize {
        self.state_names.len()
    }

    pub fn n_inputs(&self) -> usize {
        self.input_names.len()
    }

    pub fn train(&self) -> Range<usize> {
        0..self.splits.train_end
    }

    pub fn validation(&self) -> Range<usize> {
        self.splits.train_end..self.splits.validation_end
    }

    pub fn test(&self) -> Range<usize> {
        self.splits.validation_end..self.splits.test_end
    }

    pub fn maintenance(&self) -> Range<usize> {
        self.splits.test_end..self.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        let rows_ok = |rows: &[Vec<f64>], width: usize| rows.len() == n && rows.iter().all(|r| r.len() == width);
        if !rows_ok(&self.states, self.n_states()) || !rows_ok(&self.clean, self.n_states()) {
            return Err(Error::Schema("state rows do not match the time axis".into()));
        }
        if !rows_ok(&self.inputs, self.n_inputs()) {
            return Err(Error::Schema("input rows do not match the time axis".into()));
        }
        if let Some(k) = (1..n).find(|&k| !(self.t[k] > self.t[k - 1])) {
            return Err(Error::Domain(format!(
                "timestamps not strictly increasing at row {k} ({} after {})",
                self.t[k],
                self.t[k - 1]
            )));
        }
        let s = self.splits;
        if !(s.train_end <= s.validation_end && s.validation_end <= s.test_end && s.test_end <= n) {
            return Err(Error::Domain(format!("split boundaries {s:?} invalid for {n} rows")));
        }
        if let Some(d) = &self.drift {
            if d.values.len() != n {
                return Err(Error::Schema("drift trace length does not match the time axis".into()));
            }
        }
        Ok(())
    }

    /// Per-state standard deviation of the clean states over the training span.
    pub fn train_std(&self) -> Vec<f64> {
        let rows = &self.clean[self.train()];
        (0..self.n_states())
            .map(|j| {
                let m = rows.len().max(1) as f64;
                let mean = rows.iter().map(|r| r[j]).sum::<f64>() / m;
                (rows.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / (m - 1.0).max(1.0)).sqrt()
            })
            .collect()
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["t".to_string()];
        header.extend(self.state_names.iter().cloned());
        header.extend(self.input_names.iter().cloned());
        header.extend(self.state_names.iter().map(|s| format!("clean_{s}")));
        w.write_record(&header)?;
        let mut row = Vec::with_capacity(header.len());
        for k in 0..self.len() {
            row.clear();
            row.push(self.t[k].to_string());
            row.extend(self.states[k].iter().map(f64::to_string));
            row.extend(self.inputs[k].iter().map(f64::to_string));
            row.extend(self.clean[k].iter().map(f64::to_string));
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

/// Column layout expected when reading a dataset from CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CsvSchema {
    pub time_column: String,
    pub state_names: Vec<String>,
    pub input_names: Vec<String>,
}

impl CsvSchema {
    pub fn new(state_names: &[&str], input_names: &[&str]) -> Self {
        CsvSchema {
            time_column: "t".into(),
            state_names: state_names.iter().map(|s| s.to_string()).collect(),
            input_names: input_names.iter().map(|s| s.to_string()).collect(),
        }
    }
}

/// Reads a dataset. `clean_<state>` columns are used when present, otherwise
/// the measured columns double as truth. All rows form the maintenance span.
pub fn read_csv<R: Read>(reader: R, schema: &CsvSchema) -> Result<Dataset> {
    let mut rdr = csv::Reader::from_reader(reader);
    let headers = rdr.headers()?.clone();
    let find = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::Schema(format!("missing column `{name}`")))
    };
    let t_col = find(&schema.time_column)?;
    let state_cols = schema.state_names.iter().map(|s| find(s)).collect::<Result<Vec<_>>>()?;
    let input_cols = schema.input_names.iter().map(|s| find(s)).collect::<Result<Vec<_>>>()?;
    let clean_cols: Option<Vec<usize>> = schema
        .state_names
        .iter()
        .map(|s| headers.iter().position(|h| h.trim() == format!("clean_{s}")))
        .collect();

    let (mut t, mut states, mut clean, mut inputs) = (vec![], vec![], vec![], vec![]);
    for (line, record) in rdr.records().enumerate() {
        let record = record?;
        let cell = |c: usize| -> Result<f64> {
            let raw = record.get(c).unwrap_or("").trim();
            raw.parse::<f64>().map_err(|_| {
                Error::Schema(format!(
                    "row {}: column `{}` is not numeric: `{raw}`",
                    line + 1,
                    &headers[c]
                ))
            })
        };
        t.push(cell(t_col)?);
        let x = state_cols.iter().map(|&c| cell(c)).collect::<Result<Vec<_>>>()?;
        clean.push(match &clean_cols {
            Some(cols) => cols.iter().map(|&c| cell(c)).collect::<Result<Vec<_>>>()?,
            None => x.clone(),
        });
        states.push(x);
        inputs.push(input_cols.iter().map(|&c| cell(c)).collect::<Result<Vec<_>>>()?);
    }
    if t.is_empty() {
        return Err(Error::NoData("CSV stream has no rows".into()));
    }
    let ds = Dataset {
        state_names: schema.state_names.clone(),
        input_names: schema.input_names.clone(),
        t,
        states,
        clean,
        inputs,
        splits: Splits {
            train_end: 0,
            validation_end: 0,
            test_end: 0,
        },
        drift: None,
    };
    ds.validate()?;
    Ok(ds)
}

pub fn ingest_csv_stream(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<Dataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(std::io::BufReader::new(file), schema)
}

/// Returns a copy with `states = clean + N(0, sigma_j)` noise from the
/// `noise` sub-stream of `seed`.
pub fn add_noise(dataset: &Dataset, sigma: &[f64], seed: u64) -> Result<Dataset> {
    crate::error::ensure_len("noise sigma", dataset.n_states(), sigma.len())?;
    if let Some(s) = sigma.iter().find(|s| !(**s >= 0.0)) {
        return Err(Error::Domain(format!("noise sigma must be >= 0, got {s}")));
    }
    let mut rng = substream(seed, "noise");
    let normals: Vec<Normal<f64>> = sigma
        .iter()
        .map(|&s| Normal::new(0.0, s).map_err(|e| Error::Domain(e.to_string())))
        .collect::<Result<_>>()?;
    let mut out = dataset.clone();
    for (row, clean) in out.states.iter_mut().zip(&dataset.clean) {
        for j in 0..row.len() {
            row[j] = clean[j] + normals[j].sample(&mut rng);
        }
    }
    Ok(out)
}

/// One-step pairs `[x_k, u_k] -> x_{k+1}` for every `k` in `range` with a successor.
pub fn one_step_samples(ds: &Dataset, range: Range<usize>) -> Vec<Sample> {
    range
        .filter(|&k| k + 1 < ds.len())
        .map(|k| Sample {
            input: ds.states[k].iter().chain(&ds.inputs[k]).copied().collect(),
            target: ds.states[k + 1].clone(),
        })
        .collect()
}

/// Clean one-step target for pair `k`.
pub fn one_step_truth(ds: &Dataset, k: usize) -> Vec<f64> {
    ds.clean[k + 1].clone()
}

/// Horizon window starting at row `s`: input `[x_s, u_s, ..., u_{s+h-1}]`,
/// target `[x_{s+1}, ..., x_{s+h}]` (measured). `None` if it runs past the end.
pub fn horizon_window(ds: &Dataset, s: usize, horizon: usize) -> Option<Sample> {
    if s + horizon >= ds.len() {
        return None;
    }
    let mut input = ds.states[s].clone();
    for u in &ds.inputs[s..s + horizon] {
        input.extend_from_slice(u);
    }
    let target = ds.states[s + 1..=s + horizon].iter().flatten().copied().collect();
    Some(Sample { input, target })
}

/// Clean target for the window starting at `s`.
pub fn horizon_truth(ds: &Dataset, s: usize, horizon: usize) -> Vec<f64> {
    ds.clean[s + 1..=s + horizon].iter().flatten().copied().collect()
}

/// Windows starting every `stride` rows within `range` whose targets stay inside `range`.
pub fn horizon_windows(ds: &Dataset, range: Range<usize>, horizon: usize, stride: usize) -> Vec<Sample> {
    let stride = stride.max(1);
    let end = range.end.min(ds.len());
    (range.start..end)
        .step_by(stride)
        .filter(|&s| s + horizon < end)
        .filter_map(|s| horizon_window(ds, s, horizon))
        .collect()
}
