//! On-disk formats: network checkpoints (JSON), training logs and per-stamp
//! metrics (CSV), and evaluation reports (JSON).

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{bail, ensure, Context, Result};
use fpesc_core::eval::{EvalReport, StampReport};
use fpesc_core::fields::{Embedding, MlpField};
use fpesc_core::training::LogRow;
use serde::{Deserialize, Serialize};

use crate::config::{ActivationName, TimeModeName};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum EmbeddingJson {
    None,
    Periodic { l: f64 },
}

/// Checkpoint file contents. Floats are written in shortest round-trip form,
/// so a save/load cycle reproduces every parameter bit for bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub layer_sizes: Vec<usize>,
    pub activation: ActivationName,
    pub time_mode: TimeModeName,
    pub embedding: EmbeddingJson,
    /// Per layer, `out × in` row-major.
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl Checkpoint {
    pub fn from_field(field: &MlpField) -> Result<Self> {
        let embedding = match field.embedding() {
            Embedding::None => EmbeddingJson::None,
            Embedding::Periodic { side } => EmbeddingJson::Periodic { l: side },
        };
        let (weights, biases) = (0..field.n_layers())
            .map(|l| {
                let (w, b) = field.layer(l);
                (w.to_vec(), b.to_vec())
            })
            .unzip();
        Ok(Checkpoint {
            layer_sizes: field.layer_sizes().to_vec(),
            activation: ActivationName::from_series(field.activation())?,
            time_mode: TimeModeName::from_mode(field.time_mode()),
            embedding,
            weights,
            biases,
        })
    }

    pub fn to_field(&self) -> Result<MlpField> {
        let n = self.layer_sizes.len();
        ensure!(n >= 2, "checkpoint needs at least two layer sizes");
        ensure!(
            self.weights.len() == n - 1 && self.biases.len() == n - 1,
            "checkpoint has {} weight and {} bias arrays for {} layers",
            self.weights.len(),
            self.biases.len(),
            n - 1
        );
        let mut params = Vec::new();
        for l in 0..n - 1 {
            let (n_in, n_out) = (self.layer_sizes[l], self.layer_sizes[l + 1]);
            ensure!(self.weights[l].len() == n_in * n_out, "layer {l}: expected {} weights", n_in * n_out);
            ensure!(self.biases[l].len() == n_out, "layer {l}: expected {n_out} biases");
            params.extend_from_slice(&self.weights[l]);
            params.extend_from_slice(&self.biases[l]);
        }
        let embedding = match self.embedding {
            EmbeddingJson::None => Embedding::None,
            EmbeddingJson::Periodic { l } => Embedding::Periodic { side: l },
        };
        Ok(MlpField::new(
            self.layer_sizes.clone(),
            self.activation.series(),
            self.time_mode.mode(),
            embedding,
            params,
        )?)
    }
}

pub fn save_checkpoint(field: &MlpField, path: &Path) -> Result<()> {
    let ck = Checkpoint::from_field(field)?;
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, &ck)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<MlpField> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading checkpoint {}", path.display()))?;
    let ck: Checkpoint =
        serde_json::from_str(&text).with_context(|| format!("parsing checkpoint {}", path.display()))?;
    ck.to_field().with_context(|| format!("invalid checkpoint {}", path.display()))
}

pub const LOG_HEADER: [&str; 5] = ["step", "loss_mean", "loss_se", "grad_norm", "ms"];

/// Streams training log rows to CSV, flushing after each row.
pub struct LogWriter {
    w: csv::Writer<File>,
}

impl LogWriter {
    pub fn create(path: &Path) -> Result<Self> {
        let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
        w.write_record(LOG_HEADER)?;
        w.flush()?;
        Ok(LogWriter { w })
    }

    pub fn push(&mut self, row: &LogRow) -> Result<()> {
        self.w.write_record([
            row.step.to_string(),
            row.loss_mean.to_string(),
            row.loss_se.to_string(),
            row.grad_norm.to_string(),
            row.ms.to_string(),
        ])?;
        self.w.flush()?;
        Ok(())
    }
}

pub fn read_log(path: &Path) -> Result<Vec<LogRow>> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_owned).collect();
    if header != LOG_HEADER {
        bail!("{}: unexpected header {header:?}", path.display());
    }
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let f = |i: usize| -> Result<f64> { Ok(rec[i].parse()?) };
        rows.push(LogRow {
            step: rec[0].parse()?,
            loss_mean: f(1)?,
            loss_se: f(2)?,
            grad_norm: f(3)?,
            ms: f(4)?,
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub checkpoint: String,
    pub grid_h: f64,
    pub dt: f64,
    #[serde(rename = "T")]
    pub t_end: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StampJson {
    pub t: f64,
    pub ls: f64,
    pub ld: f64,
    pub mass: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub ls: f64,
    pub ld: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportJson {
    pub meta: ReportMeta,
    pub stamps: Vec<StampJson>,
    pub aggregate: Aggregate,
}

impl ReportJson {
    pub fn new(checkpoint: &str, rep: &EvalReport) -> Self {
        ReportJson {
            meta: ReportMeta {
                checkpoint: checkpoint.to_owned(),
                grid_h: rep.grid_h,
                dt: rep.dt,
                t_end: rep.t_end,
            },
            stamps: rep
                .stamps
                .iter()
                .map(|s: &StampReport| StampJson {
                    t: s.t,
                    ls: s.ls,
                    ld: s.ld,
                    mass: s.mass,
                })
                .collect(),
            aggregate: Aggregate { ls: rep.ls, ld: rep.ld },
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
        w.write_record(["t", "ls", "ld", "mass"])?;
        for s in &self.stamps {
            w.write_record([s.t.to_string(), s.ls.to_string(), s.ld.to_string(), s.mass.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}
