//! Analytic Ornstein–Uhlenbeck ground truth for a quadratic drift potential
//! and Gaussian initial law: `α(t) = N(μ_t, Γ_tᵀΓ_t)`.

use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use crate::error::{Error, Result};
use crate::fields::{check_order, DriftPotential, FieldJet, QuadraticPotential, VelocityField};
use crate::jets::JetLayout;
use crate::linalg::{self, Matrix};

/// Conditioning of `Γ_t` beyond which the path is declared singular.
pub const MAX_CONDITION: f64 = 1e12;

/// Relative tolerance for recognizing a time as a grid multiple.
const GRID_TOL: f64 = 1e-9;

/// Index `k` with `k·dt == t` up to rounding, if any and `k ≤ n`.
pub(crate) fn grid_index(t: f64, dt: f64, n: usize) -> Option<usize> {
    if !(t.is_finite() && t >= -GRID_TOL * dt) {
        return None;
    }
    let k = libm::round(t / dt);
    if (t - k * dt).abs() > GRID_TOL * dt * (1.0 + k) || k > n as f64 {
        return None;
    }
    Some(k as usize)
}

/// Number of steps `T / dt`, requiring an exact multiple.
pub(crate) fn step_count(t_end: f64, dt: f64) -> Result<usize> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidSpec(alloc::format!("dt must be positive, got {dt}")));
    }
    if !(t_end >= 0.0 && t_end.is_finite()) {
        return Err(Error::InvalidSpec(alloc::format!("T must be nonnegative, got {t_end}")));
    }
    grid_index(t_end, dt, usize::MAX).ok_or_else(|| {
        Error::InvalidSpec(alloc::format!("T = {t_end} is not a multiple of dt = {dt}"))
    })
}

#[derive(Debug, Clone)]
pub struct GaussianPath {
    dim: usize,
    dt: f64,
    n_steps: usize,
    mu0: Vec<f64>,
    sigma0: Matrix,
    mu_inf: Vec<f64>,
    sigma_inf: Matrix,
    sigma_inf_inv: Matrix,
    mus: Vec<Vec<f64>>,
    gammas: Vec<Matrix>,
    // per stamp, row-major d×d
    sigma_invs: Vec<f64>,
    // log((2π)ᵈ det Σ_t)
    log_norms: Vec<f64>,
}

struct PathRhs<'a> {
    sigma_inf_inv: &'a Matrix,
    mu_inf: &'a [f64],
}

impl PathRhs<'_> {
    fn eval(&self, t: f64, mu: &[f64], gamma: &Matrix) -> Result<(Vec<f64>, Matrix)> {
        let d = mu.len();
        let diff: Vec<f64> = (0..d).map(|i| self.mu_inf[i] - mu[i]).collect();
        let dmu = linalg::mat_vec(self.sigma_inf_inv, &diff);
        let inv = gamma.clone().try_inverse().ok_or(Error::PathSingular {
            t,
            condition: f64::INFINITY,
        })?;
        let dgamma = -(self.sigma_inf_inv * gamma) + inv.transpose();
        Ok((dmu, dgamma))
    }

    fn rk4_step(&self, t: f64, h: f64, mu: &[f64], gamma: &Matrix) -> Result<(Vec<f64>, Matrix)> {
        let axpy = |a: &[f64], s: f64, b: &[f64]| -> Vec<f64> {
            a.iter().zip(b).map(|(x, y)| x + s * y).collect()
        };
        let (k1m, k1g) = self.eval(t, mu, gamma)?;
        let (k2m, k2g) = self.eval(t + 0.5 * h, &axpy(mu, 0.5 * h, &k1m), &(gamma + &k1g * (0.5 * h)))?;
        let (k3m, k3g) = self.eval(t + 0.5 * h, &axpy(mu, 0.5 * h, &k2m), &(gamma + &k2g * (0.5 * h)))?;
        let (k4m, k4g) = self.eval(t + h, &axpy(mu, h, &k3m), &(gamma + &k3g * h))?;
        let mu_next: Vec<f64> = (0..mu.len())
            .map(|i| mu[i] + h / 6.0 * (k1m[i] + 2.0 * k2m[i] + 2.0 * k3m[i] + k4m[i]))
            .collect();
        let g_next = gamma + (k1g + k2g * 2.0 + k3g * 2.0 + k4g) * (h / 6.0);
        Ok((mu_next, g_next))
    }
}

/// Integrate `dμ/dt = Σ∞⁻¹(μ∞ − μ)`, `dΓ/dt = −Σ∞⁻¹Γ + Γ⁻ᵀ` with RK4 from
/// `Γ₀ = √Σ₀` (principal root).
pub fn evolve_gaussian(
    mu0: &[f64],
    sigma0: &Matrix,
    mu_inf: &[f64],
    sigma_inf: &Matrix,
    t_end: f64,
    dt: f64,
) -> Result<GaussianPath> {
    let d = mu0.len();
    if d == 0 || mu_inf.len() != d || sigma0.nrows() != d || sigma_inf.nrows() != d {
        return Err(Error::InvalidSpec("Gaussian path shape mismatch".into()));
    }
    linalg::require_spd(sigma0, "sigma0")?;
    linalg::require_spd(sigma_inf, "sigma_inf")?;
    let n_steps = step_count(t_end, dt)?;
    let sigma_inf_inv = linalg::spd_inverse(sigma_inf, "sigma_inf")?;
    let commutator = &sigma_inf_inv * sigma0 - sigma0 * &sigma_inf_inv;
    if commutator.amax() > 1e-12 * sigma_inf_inv.amax() * sigma0.amax() {
        log::warn!(
            "Σ∞ and Σ₀ do not commute; the Γ equation then differs from the covariance equation"
        );
    }
    let rhs = PathRhs {
        sigma_inf_inv: &sigma_inf_inv,
        mu_inf,
    };
    let mut mus = Vec::with_capacity(n_steps + 1);
    let mut gammas = Vec::with_capacity(n_steps + 1);
    let mut mu = mu0.to_vec();
    let mut gamma = linalg::spd_sqrt(sigma0);
    for k in 0..=n_steps {
        let t = k as f64 * dt;
        let cond = linalg::condition_number(&gamma);
        if !(cond <= MAX_CONDITION) {
            return Err(Error::PathSingular { t, condition: cond });
        }
        mus.push(mu.clone());
        gammas.push(gamma.clone());
        if k < n_steps {
            let (m, g) = rhs.rk4_step(t, dt, &mu, &gamma)?;
            mu = m;
            gamma = g;
        }
    }
    let mut sigma_invs = Vec::with_capacity((n_steps + 1) * d * d);
    let mut log_norms = Vec::with_capacity(n_steps + 1);
    for g in &gammas {
        let (inv, log_norm) = precision(g, d)?;
        sigma_invs.extend(inv);
        log_norms.push(log_norm);
    }
    Ok(GaussianPath {
        dim: d,
        dt,
        n_steps,
        mu0: mu0.to_vec(),
        sigma0: sigma0.clone(),
        mu_inf: mu_inf.to_vec(),
        sigma_inf: sigma_inf.clone(),
        sigma_inf_inv,
        mus,
        gammas,
        sigma_invs,
        log_norms,
    })
}

/// `Σ⁻¹` (row-major) and `log((2π)ᵈ det Σ)` for `Σ = ΓᵀΓ`.
fn precision(gamma: &Matrix, d: usize) -> Result<(Vec<f64>, f64)> {
    let sigma = gamma.transpose() * gamma;
    let sigma = (&sigma + sigma.transpose()) * 0.5;
    let inv = linalg::spd_inverse(&sigma, "sigma_t")?;
    let det = gamma.determinant();
    let log_norm = d as f64 * libm::log(2.0 * PI) + 2.0 * libm::log(det.abs());
    let flat = (0..d * d).map(|k| inv[(k / d, k % d)]).collect();
    Ok((flat, log_norm))
}

impl GaussianPath {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn t_end(&self) -> f64 {
        self.n_steps as f64 * self.dt
    }

    pub fn mu0(&self) -> &[f64] {
        &self.mu0
    }

    pub fn sigma0(&self) -> &Matrix {
        &self.sigma0
    }

    pub fn mu_inf(&self) -> &[f64] {
        &self.mu_inf
    }

    pub fn sigma_inf(&self) -> &Matrix {
        &self.sigma_inf
    }

    /// Stamp index of a grid time.
    pub fn stamp(&self, t: f64) -> Result<usize> {
        grid_index(t, self.dt, self.n_steps).ok_or(Error::OutOfRange { t })
    }

    pub fn mu_at(&self, k: usize) -> &[f64] {
        &self.mus[k]
    }

    pub fn gamma_at(&self, k: usize) -> &Matrix {
        &self.gammas[k]
    }

    /// `Σ_t = Γ_tᵀΓ_t` at stamp `k` (`Σ₀` as given at `k = 0`).
    pub fn sigma_at(&self, k: usize) -> Matrix {
        if k == 0 {
            return self.sigma0.clone();
        }
        let g = &self.gammas[k];
        let s = g.transpose() * g;
        (&s + s.transpose()) * 0.5
    }

    /// `Σ_t⁻¹` at stamp `k`, row-major.
    pub fn precision_at(&self, k: usize) -> &[f64] {
        let dd = self.dim * self.dim;
        &self.sigma_invs[k * dd..(k + 1) * dd]
    }

    pub fn mu(&self, t: f64) -> Result<&[f64]> {
        Ok(self.mu_at(self.stamp(t)?))
    }

    pub fn sigma(&self, t: f64) -> Result<Matrix> {
        Ok(self.sigma_at(self.stamp(t)?))
    }

    /// `log N(x; μ_t, Σ_t)` at a grid time.
    pub fn log_density(&self, t: f64, x: &[f64]) -> Result<f64> {
        let k = self.stamp(t)?;
        Ok(self.log_density_at(k, x))
    }

    pub fn log_density_at(&self, k: usize, x: &[f64]) -> f64 {
        let d = self.dim;
        let mu = &self.mus[k];
        let p = self.precision_at(k);
        let mut q = 0.0;
        for i in 0..d {
            let ri = x[i] - mu[i];
            for j in 0..d {
                q += ri * p[i * d + j] * (x[j] - mu[j]);
            }
        }
        -0.5 * (q + self.log_norms[k])
    }

    /// `∇log α_t(x) = −Σ_t⁻¹(x − μ_t)` at a grid time.
    pub fn score(&self, t: f64, x: &[f64]) -> Result<Vec<f64>> {
        let k = self.stamp(t)?;
        let mut out = vec![0.0; self.dim];
        self.score_at(k, x, &mut out);
        Ok(out)
    }

    pub fn score_at(&self, k: usize, x: &[f64], out: &mut [f64]) {
        let d = self.dim;
        let mu = &self.mus[k];
        let p = self.precision_at(k);
        for i in 0..d {
            out[i] = -(0..d).map(|j| p[i * d + j] * (x[j] - mu[j])).sum::<f64>();
        }
    }

    /// `(μ_t, Σ_t⁻¹)` for any `t` in `[0, T]`: stored values on the grid,
    /// one RK4 substep from the preceding stamp otherwise.
    pub fn moments(&self, t: f64) -> Result<(Vec<f64>, Vec<f64>)> {
        if let Some(k) = grid_index(t, self.dt, self.n_steps) {
            return Ok((self.mus[k].clone(), self.precision_at(k).to_vec()));
        }
        if !(t >= 0.0 && t <= self.t_end()) {
            return Err(Error::OutOfRange { t });
        }
        let k = ((t / self.dt) as usize).min(self.n_steps);
        let t0 = k as f64 * self.dt;
        let rhs = PathRhs {
            sigma_inf_inv: &self.sigma_inf_inv,
            mu_inf: &self.mu_inf,
        };
        let (mu, gamma) = rhs.rk4_step(t0, t - t0, &self.mus[k], &self.gammas[k])?;
        let (inv, _) = precision(&gamma, self.dim)?;
        Ok((mu, inv))
    }
}

/// Squared Wasserstein-2 distance between two Gaussians (Bures form).
pub fn gaussian_w2(mu1: &[f64], s1: &Matrix, mu2: &[f64], s2: &Matrix) -> Result<f64> {
    if mu1.len() != mu2.len() || s1.nrows() != mu1.len() || s2.nrows() != mu1.len() {
        return Err(Error::InvalidSpec("Gaussian shape mismatch".into()));
    }
    linalg::require_spd(s1, "S1")?;
    linalg::require_spd(s2, "S2")?;
    let mean: f64 = mu1.iter().zip(mu2).map(|(a, b)| (a - b) * (a - b)).sum();
    let r2 = linalg::spd_sqrt(s2);
    let inner = &r2 * s1 * &r2;
    let cross = linalg::spd_sqrt(&((&inner + inner.transpose()) * 0.5));
    let bures = s1.trace() + s2.trace() - 2.0 * cross.trace();
    Ok(mean + bures.max(0.0))
}

/// `f*(t, x) = −∇V(x) + Σ_t⁻¹(x − μ_t)`; affine in x.
#[derive(Debug, Clone)]
pub struct OracleField {
    path: Arc<GaussianPath>,
    pot: QuadraticPotential,
}

impl OracleField {
    pub fn new(path: Arc<GaussianPath>, pot: QuadraticPotential) -> Result<Self> {
        let same_mu = path.mu_inf() == pot.mu_inf();
        let same_sigma = path.sigma_inf() == pot.sigma_inf();
        if path.dim() != pot.dim() || !same_mu || !same_sigma {
            return Err(Error::InvalidSpec(
                "oracle path and potential must share μ∞ and Σ∞".into(),
            ));
        }
        Ok(OracleField { path, pot })
    }

    pub fn path(&self) -> &Arc<GaussianPath> {
        &self.path
    }

    pub fn potential(&self) -> &QuadraticPotential {
        &self.pot
    }

    /// Value and the constant Jacobian.
    fn affine(&self, t: f64, x: &[f64], value: &mut [f64], jac: Option<&mut [f64]>) -> Result<()> {
        let d = self.path.dim();
        let (mu, p) = self.path.moments(t)?;
        self.pot.grad(x, value);
        let h = self.pot.hessian();
        for i in 0..d {
            let s: f64 = (0..d).map(|j| p[i * d + j] * (x[j] - mu[j])).sum();
            value[i] = s - value[i];
        }
        if let Some(jac) = jac {
            for i in 0..d {
                for j in 0..d {
                    jac[i * d + j] = p[i * d + j] - h[(i, j)];
                }
            }
        }
        Ok(())
    }
}

impl VelocityField for OracleField {
    fn dim(&self) -> usize {
        self.path.dim()
    }

    fn eval_jet(&self, layout: &Arc<JetLayout>, t: f64, x: &[f64]) -> Result<FieldJet> {
        check_order(layout)?;
        let d = self.dim();
        let len = layout.len();
        let mut value = vec![0.0; d];
        let mut jac = vec![0.0; d * d];
        self.affine(t, x, &mut value, Some(&mut jac))?;
        let mut derivs = vec![0.0; d * len];
        for i in 0..d {
            derivs[i * len] = value[i];
            if layout.degree() >= 1 {
                for j in 0..d {
                    derivs[i * len + layout.unit(j)] = jac[i * d + j];
                }
            }
        }
        Ok(FieldJet::from_derivs(layout, derivs))
    }

    fn eval(&self, t: f64, x: &[f64], out: &mut [f64]) -> Result<()> {
        self.affine(t, x, out, None)
    }

    fn eval_with_div(&self, t: f64, x: &[f64], out: &mut [f64]) -> Result<f64> {
        let d = self.dim();
        let mut jac = vec![0.0; d * d];
        self.affine(t, x, out, Some(&mut jac))?;
        Ok((0..d).map(|i| jac[i * d + i]).sum())
    }
}
