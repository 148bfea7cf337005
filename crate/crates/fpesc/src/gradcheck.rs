//! Adjoint gradients against central finite differences over parameters.

use anyhow::Result;
use fpesc_core::adjoint::grad_points;
use fpesc_core::exec::Executor;
use fpesc_core::fields::{DriftPotential, Embedding, MlpField, TimeMode};
use fpesc_core::jets::Series;
use fpesc_core::sampling;
use fpesc_core::selfcons::{mean_and_se, trajectory_losses, GaussianInitial, IntegratorSpec};

pub const FD_STEPS: [f64; 3] = [1e-4, 1e-5, 1e-6];

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckCase {
    pub index: usize,
    pub n_params: usize,
    /// Relative ℓ₂ error at each of [`FD_STEPS`].
    pub errors: Vec<f64>,
}

impl GradcheckCase {
    /// Smallest error over the step sweep.
    pub fn best(&self) -> f64 {
        self.errors.iter().cloned().fold(f64::INFINITY, f64::min)
    }
}

/// Compare the adjoint gradient of the batch loss at `points` with central
/// differences at every step of [`FD_STEPS`].
pub fn check_field<E: Executor + ?Sized>(
    exec: &E,
    field: &MlpField,
    pot: &dyn DriftPotential,
    init: &GaussianInitial,
    points: &[Vec<f64>],
    spec: &IntegratorSpec,
) -> Result<Vec<f64>> {
    let adj = grad_points(exec, field, pot, init, points, spec)?.grad;
    let base = field.params().to_vec();
    let loss_at = |params: &[f64]| -> Result<f64> {
        let mut f = field.clone();
        f.set_params(params)?;
        let losses = trajectory_losses(exec, &f, pot, init, points, spec)?;
        Ok(mean_and_se(&losses).0)
    };
    let norm = adj.iter().map(|g| g * g).sum::<f64>().sqrt();
    let mut errors = Vec::with_capacity(FD_STEPS.len());
    for &h in &FD_STEPS {
        let mut err = 0.0;
        let mut p = base.clone();
        for i in 0..base.len() {
            p[i] = base[i] + h;
            let up = loss_at(&p)?;
            p[i] = base[i] - h;
            let down = loss_at(&p)?;
            p[i] = base[i];
            let fd = (up - down) / (2.0 * h);
            err += (fd - adj[i]) * (fd - adj[i]);
        }
        errors.push(err.sqrt() / norm.max(f64::MIN_POSITIVE));
    }
    Ok(errors)
}

/// `n_fields` random 2-8-2 tanh fields (time appended), `T = 0.5`,
/// `dt = 1e-2`, four initial points each.
pub fn suite<E: Executor + ?Sized>(
    exec: &E,
    pot: &dyn DriftPotential,
    init: &GaussianInitial,
    seed: u64,
    n_fields: usize,
) -> Result<Vec<GradcheckCase>> {
    let spec = IntegratorSpec::new(1e-2, 0.5)?;
    let d = init.dim();
    let mut cases = Vec::with_capacity(n_fields);
    for k in 0..n_fields {
        let mut rng = sampling::stream(seed, u64::MAX - k as u64);
        let field = MlpField::random(vec![d + 1, 8, d], Series::Tanh, TimeMode::Append, Embedding::None, &mut rng)?;
        let points = sampling::sample_points(init, 4, sampling::step_seed(seed, k as u64));
        let errors = check_field(exec, &field, pot, init, &points, &spec)?;
        cases.push(GradcheckCase {
            index: k,
            n_params: field.n_params(),
            errors,
        });
    }
    Ok(cases)
}
