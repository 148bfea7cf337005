//! Stochastic minimization of `R` over the parameters of an [`MlpField`].
//!
//! Step `k` draws a fresh batch from `α₀` with seed `step_seed(seed, k)`,
//! evaluates the mean loss and adjoint gradient at the current parameters
//! and applies one optimizer update. The logged loss of step `k` is the loss
//! of the parameters *before* that update.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::adjoint::grad_estimate_r_with;
use crate::error::{Error, Result};
use crate::exec::Executor;
use crate::fields::{DriftPotential, MlpField, VelocityField};
use crate::sampling::step_seed;
use crate::selfcons::{GaussianInitial, IntegratorSpec};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Optimizer {
    Adam { beta1: f64, beta2: f64, eps: f64 },
    Sgd,
}

impl Optimizer {
    pub fn adam() -> Self {
        Optimizer::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl Default for Optimizer {
    fn default() -> Self {
        Optimizer::adam()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub optimizer: Optimizer,
    pub seed: u64,
    pub spec: IntegratorSpec,
    /// Log every this many steps (the last step is always logged).
    pub log_every: usize,
    /// Checkpoint every this many steps; 0 writes only the final checkpoint.
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 500,
            batch: 32,
            lr: 1e-3,
            optimizer: Optimizer::default(),
            seed: 0,
            spec: IntegratorSpec::new(1e-2, 3.0).expect("valid default spec"),
            log_every: 1,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.steps == 0 {
            return bad("steps must be at least 1".into());
        }
        if self.batch == 0 {
            return bad("batch must be at least 1".into());
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad(alloc::format!("learning rate must be finite and nonnegative, got {}", self.lr));
        }
        if self.log_every == 0 {
            return bad("log_every must be at least 1".into());
        }
        if let Optimizer::Adam { beta1, beta2, eps } = self.optimizer {
            let unit = |b: f64| (0.0..1.0).contains(&b);
            if !unit(beta1) || !unit(beta2) {
                return bad("Adam betas must lie in [0, 1)".into());
            }
            if !(eps > 0.0 && eps.is_finite()) {
                return bad("Adam epsilon must be positive".into());
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRow {
    pub step: usize,
    pub loss_mean: f64,
    /// `NaN` for a batch of one.
    pub loss_se: f64,
    pub grad_norm: f64,
    pub ms: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    /// Integrator step the losses were computed with.
    pub dt: f64,
    pub rows: Vec<LogRow>,
}

impl TrainLog {
    pub fn losses(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.loss_mean).collect()
    }
}

/// Hooks for the side effects of a training run. All methods default to
/// doing nothing.
pub trait TrainObserver {
    /// Milliseconds since the run started.
    fn elapsed_ms(&mut self) -> f64 {
        0.0
    }

    fn on_log(&mut self, _row: &LogRow) {}

    /// Called with the parameters reached after `step` updates.
    fn on_checkpoint(&mut self, _step: usize, _field: &MlpField, _is_final: bool) -> core::result::Result<(), String> {
        Ok(())
    }
}

/// Observer that ignores everything.
pub struct Silent;

impl TrainObserver for Silent {}

/// An aborted run: the error, the last parameters whose batch loss and
/// gradient were finite, and the log up to that point.
#[derive(Debug, Clone)]
pub struct TrainFailure {
    pub error: Error,
    pub last_good: MlpField,
    pub log: TrainLog,
}

struct OptState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl OptState {
    fn new(n: usize) -> Self {
        OptState {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn update(&mut self, opt: Optimizer, lr: f64, params: &mut [f64], grad: &[f64]) {
        match opt {
            Optimizer::Sgd => {
                for (p, g) in params.iter_mut().zip(grad) {
                    *p -= lr * g;
                }
            }
            Optimizer::Adam { beta1, beta2, eps } => {
                self.t += 1;
                let c1 = 1.0 - libm::pow(beta1, self.t as f64);
                let c2 = 1.0 - libm::pow(beta2, self.t as f64);
                for i in 0..params.len() {
                    let g = grad[i];
                    self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * g;
                    self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * g * g;
                    let mh = self.m[i] / c1;
                    let vh = self.v[i] / c2;
                    params[i] -= lr * mh / (libm::sqrt(vh) + eps);
                }
            }
        }
    }
}

fn norm(v: &[f64]) -> f64 {
    libm::sqrt(v.iter().map(|x| x * x).sum())
}

/// Run `cfg.steps` optimizer steps starting from `field`.
pub fn train<E: Executor + ?Sized, O: TrainObserver + ?Sized>(
    exec: &E,
    field: MlpField,
    pot: &dyn DriftPotential,
    init: &GaussianInitial,
    cfg: &TrainConfig,
    observer: &mut O,
) -> core::result::Result<(MlpField, TrainLog), TrainFailure> {
    let mut log = TrainLog {
        dt: cfg.spec.dt(),
        rows: Vec::new(),
    };
    let fail = |error: Error, last_good: MlpField, log: TrainLog| TrainFailure {
        error,
        last_good,
        log,
    };
    if let Err(e) = cfg.validate() {
        return Err(fail(e, field, log));
    }
    if field.dim() != init.dim() || pot.dim() != init.dim() {
        return Err(fail(
            Error::InvalidSpec("field, potential and initial density disagree on dimension".into()),
            field,
            log,
        ));
    }
    let mut field = field;
    let mut last_good = field.clone();
    let mut opt = OptState::new(field.n_params());
    let mut params = field.params().to_vec();
    for k in 0..cfg.steps {
        let seed = step_seed(cfg.seed, k as u64);
        let batch = match grad_estimate_r_with(exec, &field, pot, init, cfg.batch, seed, &cfg.spec) {
            Ok(b) => b,
            Err(e) => return Err(fail(e, last_good, log)),
        };
        let loss = batch.mean_loss();
        let grad_norm = norm(&batch.grad);
        if !loss.is_finite() || !grad_norm.is_finite() {
            let e = Error::Divergence {
                t: cfg.spec.t_end(),
                sample: None,
            };
            return Err(fail(e, last_good, log));
        }
        if k % cfg.log_every == 0 || k + 1 == cfg.steps {
            let row = LogRow {
                step: k,
                loss_mean: loss,
                loss_se: batch.standard_error().unwrap_or(f64::NAN),
                grad_norm,
                ms: observer.elapsed_ms(),
            };
            observer.on_log(&row);
            log.rows.push(row);
        }
        last_good = field.clone();
        opt.update(cfg.optimizer, cfg.lr, &mut params, &batch.grad);
        if let Err(e) = field.set_params(&params) {
            return Err(fail(e, last_good, log));
        }
        let done = k + 1;
        let is_final = done == cfg.steps;
        if is_final || (cfg.checkpoint_every > 0 && done % cfg.checkpoint_every == 0) {
            if let Err(msg) = observer.on_checkpoint(done, &field, is_final) {
                return Err(fail(Error::Checkpoint(msg), field, log));
            }
        }
    }
    Ok((field, log))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_configs() {
        let ok = TrainConfig::default();
        assert!(ok.validate().is_ok());
        for cfg in [
            TrainConfig { steps: 0, ..ok.clone() },
            TrainConfig { batch: 0, ..ok.clone() },
            TrainConfig { lr: -1e-3, ..ok.clone() },
            TrainConfig { lr: f64::NAN, ..ok.clone() },
            TrainConfig { log_every: 0, ..ok.clone() },
            TrainConfig {
                optimizer: Optimizer::Adam {
                    beta1: 1.0,
                    beta2: 0.999,
                    eps: 1e-8,
                },
                ..ok.clone()
            },
        ] {
            assert!(matches!(cfg.validate(), Err(Error::InvalidConfig(_))));
        }
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut st = OptState::new(2);
        let mut p = [1.0, -2.0];
        st.update(Optimizer::adam(), 0.1, &mut p, &[3.0, -0.5]);
        assert!((p[0] - 0.9).abs() < 1e-8);
        assert!((p[1] + 1.9).abs() < 1e-8);
    }

    #[test]
    fn sgd_step() {
        let mut st = OptState::new(1);
        let mut p = [1.0];
        st.update(Optimizer::Sgd, 0.5, &mut p, &[4.0]);
        assert_eq!(p[0], -1.0);
    }
}
