//! TOML run configuration. Every section and key is optional; missing ones
//! fall back to the free-space two-dimensional OU problem with the default
//! 3-64-64-2 tanh network.

use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use fpesc_core::domain::DomainMode;
use fpesc_core::fields::{Embedding, MlpField, QuadraticPotential, TimeMode};
use fpesc_core::jets::Series;
use fpesc_core::linalg::Matrix;
use fpesc_core::oracle::{evolve_gaussian, GaussianPath};
use fpesc_core::sampling;
use fpesc_core::selfcons::{GaussianInitial, IntegratorSpec};
use fpesc_core::training::{Optimizer, TrainConfig};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub domain: DomainSection,
    pub problem: ProblemSection,
    pub field: FieldSection,
    pub train: TrainSection,
    pub eval: EvalSection,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModeName {
    Free,
    Torus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DomainSection {
    pub mode: ModeName,
    pub l: Option<f64>,
    pub dim: usize,
}

impl Default for DomainSection {
    fn default() -> Self {
        DomainSection {
            mode: ModeName::Free,
            l: None,
            dim: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProblemSection {
    pub mu0: Vec<f64>,
    /// Row-major rows.
    pub sigma0: Vec<Vec<f64>>,
    pub mu_inf: Vec<f64>,
    pub sigma_inf: Vec<Vec<f64>>,
    pub half_factor: bool,
}

impl Default for ProblemSection {
    fn default() -> Self {
        ProblemSection {
            mu0: vec![-4.0, -4.0],
            sigma0: vec![vec![0.7, 0.0], vec![0.0, 1.3]],
            mu_inf: vec![4.0, 4.0],
            sigma_inf: vec![vec![1.1, 0.0], vec![0.0, 0.9]],
            half_factor: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActivationName {
    Tanh,
    Sin,
    Cos,
    Exp,
}

impl ActivationName {
    pub fn series(self) -> Series {
        match self {
            ActivationName::Tanh => Series::Tanh,
            ActivationName::Sin => Series::Sin,
            ActivationName::Cos => Series::Cos,
            ActivationName::Exp => Series::Exp,
        }
    }

    pub fn from_series(s: Series) -> Result<Self> {
        Ok(match s {
            Series::Tanh => ActivationName::Tanh,
            Series::Sin => ActivationName::Sin,
            Series::Cos => ActivationName::Cos,
            Series::Exp => ActivationName::Exp,
            Series::Reciprocal => bail!("reciprocal is not a network activation"),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TimeModeName {
    Append,
    Autonomous,
}

impl TimeModeName {
    pub fn mode(self) -> TimeMode {
        match self {
            TimeModeName::Append => TimeMode::Append,
            TimeModeName::Autonomous => TimeMode::Autonomous,
        }
    }

    pub fn from_mode(m: TimeMode) -> Self {
        match m {
            TimeMode::Append => TimeModeName::Append,
            TimeMode::Autonomous => TimeModeName::Autonomous,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FieldSection {
    pub layer_sizes: Vec<usize>,
    pub activation: ActivationName,
    pub time_mode: TimeModeName,
    /// Use the periodic embedding of the domain (torus mode only).
    pub periodic: bool,
    /// Seed of the random initialization.
    pub seed: u64,
    /// Factor on the Glorot-normal first-layer weights.
    pub input_scale: f64,
}

impl Default for FieldSection {
    fn default() -> Self {
        FieldSection {
            layer_sizes: vec![3, 64, 64, 2],
            activation: ActivationName::Tanh,
            time_mode: TimeModeName::Append,
            periodic: false,
            seed: 0,
            input_scale: 0.25,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerName {
    Adam,
    Sgd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub optimizer: OptimizerName,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
    pub dt: f64,
    pub t_end: f64,
    pub log_every: usize,
    pub checkpoint_every: usize,
    pub out_dir: PathBuf,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            steps: 500,
            batch: 32,
            lr: 1e-3,
            optimizer: OptimizerName::Adam,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 0,
            dt: 1e-2,
            t_end: 3.0,
            log_every: 1,
            checkpoint_every: 100,
            out_dir: PathBuf::from("run"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub grid_h: f64,
    /// Step of the backward characteristics in density recovery.
    pub dt: f64,
    /// Step of the analytic Gaussian path.
    pub path_dt: f64,
    /// Horizon of the analytic Gaussian path; must cover the grid stamps.
    pub t_end: f64,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            grid_h: 0.4,
            dt: 1e-2,
            path_dt: 1e-3,
            t_end: 3.0,
        }
    }
}

fn matrix(rows: &[Vec<f64>], d: usize, what: &str) -> Result<Matrix> {
    if rows.len() != d || rows.iter().any(|r| r.len() != d) {
        bail!("{what} must be a {d}x{d} matrix");
    }
    Ok(Matrix::from_fn(d, d, |i, j| rows[i][j]))
}

impl Config {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn parse(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn dim(&self) -> usize {
        self.domain.dim
    }

    pub fn domain(&self) -> Result<DomainMode> {
        Ok(match self.domain.mode {
            ModeName::Free => DomainMode::free(self.dim())?,
            ModeName::Torus => {
                let l = self.domain.l.context("domain.l is required in torus mode")?;
                DomainMode::torus(l, self.dim())?
            }
        })
    }

    pub fn initial(&self) -> Result<GaussianInitial> {
        let d = self.dim();
        if self.problem.mu0.len() != d {
            bail!("problem.mu0 must have {d} entries");
        }
        Ok(GaussianInitial::new(
            self.problem.mu0.clone(),
            matrix(&self.problem.sigma0, d, "problem.sigma0")?,
        )?)
    }

    pub fn potential(&self) -> Result<QuadraticPotential> {
        let d = self.dim();
        if self.problem.mu_inf.len() != d {
            bail!("problem.mu_inf must have {d} entries");
        }
        Ok(QuadraticPotential::with_half_factor(
            self.problem.mu_inf.clone(),
            matrix(&self.problem.sigma_inf, d, "problem.sigma_inf")?,
            self.problem.half_factor,
        )?)
    }

    /// The analytic Gaussian path on `[0, eval.t_end]` with step `eval.path_dt`.
    pub fn path(&self) -> Result<GaussianPath> {
        let d = self.dim();
        Ok(evolve_gaussian(
            &self.problem.mu0,
            &matrix(&self.problem.sigma0, d, "problem.sigma0")?,
            &self.problem.mu_inf,
            &matrix(&self.problem.sigma_inf, d, "problem.sigma_inf")?,
            self.eval.t_end,
            self.eval.path_dt,
        )?)
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let t = &self.train;
        let optimizer = match t.optimizer {
            OptimizerName::Adam => Optimizer::Adam {
                beta1: t.beta1,
                beta2: t.beta2,
                eps: t.eps,
            },
            OptimizerName::Sgd => Optimizer::Sgd,
        };
        let cfg = TrainConfig {
            steps: t.steps,
            batch: t.batch,
            lr: t.lr,
            optimizer,
            seed: t.seed,
            spec: IntegratorSpec::new(t.dt, t.t_end)?,
            log_every: t.log_every,
            checkpoint_every: t.checkpoint_every,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn embedding(&self) -> Result<Embedding> {
        if !self.field.periodic {
            return Ok(Embedding::None);
        }
        let side = self
            .domain()?
            .side()
            .context("field.periodic needs domain.mode = \"torus\"")?;
        Ok(Embedding::Periodic { side })
    }

    /// Randomly initialized network described by the `field` section.
    pub fn init_field(&self) -> Result<MlpField> {
        let f = &self.field;
        ensure!(
            f.input_scale.is_finite() && f.input_scale > 0.0,
            "field.input_scale must be positive, got {}",
            f.input_scale
        );
        let mut rng = sampling::stream(f.seed, u64::MAX);
        let mut field = MlpField::random(
            f.layer_sizes.clone(),
            f.activation.series(),
            f.time_mode.mode(),
            self.embedding()?,
            &mut rng,
        )?;
        field.scale_weights(0, f.input_scale)?;
        Ok(field)
    }
}
