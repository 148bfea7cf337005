use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use super::check_order;
use crate::error::{Error, Result};
use crate::jets::JetLayout;
use crate::linalg::{self, Matrix};

/// Derivatives `∂ᵃV(x)` for every `‖a‖₁ ≤ K`, in graded multi-index order
/// (index 0 holds `V(x)` itself).
#[derive(Debug, Clone)]
pub struct PotentialJet {
    layout: Arc<JetLayout>,
    derivs: Vec<f64>,
}

impl PotentialJet {
    pub fn derivs(&self) -> &[f64] {
        &self.derivs
    }

    pub fn order(&self) -> usize {
        self.layout.degree()
    }

    /// `∇V(x)`.
    pub fn grad(&self) -> Vec<f64> {
        (0..self.layout.dim())
            .map(|i| self.derivs[self.layout.unit(i)])
            .collect()
    }

    /// `∂ᵃV(x)`.
    pub fn partial(&self, a: &[usize]) -> Result<f64> {
        let n: usize = a.iter().sum();
        if n > self.order() {
            return Err(Error::OrderExceeded {
                requested: n,
                available: self.order(),
            });
        }
        let idx = self
            .layout
            .index_of(a)
            .ok_or_else(|| Error::InvalidSpec(alloc::format!("bad multi-index {a:?}")))?;
        Ok(self.derivs[idx])
    }
}

/// A known drift potential `V(x)`.
pub trait DriftPotential: Sync {
    fn dim(&self) -> usize;

    /// All partials of `V` up to `layout.degree()`.
    fn potential_jet(&self, layout: &Arc<JetLayout>, x: &[f64]) -> Result<PotentialJet>;

    /// `∇V(x)` into `out`.
    fn grad(&self, x: &[f64], out: &mut [f64]);
}

/// `V(x) = ½ (x − μ∞)ᵀ Σ∞⁻¹ (x − μ∞)`, or without the ½ when `half_factor`
/// is off.
#[derive(Debug, Clone)]
pub struct QuadraticPotential {
    mu_inf: Vec<f64>,
    sigma_inf: Matrix,
    half_factor: bool,
    // Hessian of V: Σ∞⁻¹, doubled without the half factor.
    hessian: Matrix,
}

impl QuadraticPotential {
    pub fn new(mu_inf: Vec<f64>, sigma_inf: Matrix) -> Result<Self> {
        Self::with_half_factor(mu_inf, sigma_inf, true)
    }

    pub fn with_half_factor(mu_inf: Vec<f64>, sigma_inf: Matrix, half_factor: bool) -> Result<Self> {
        if sigma_inf.nrows() != mu_inf.len() {
            return Err(Error::InvalidSpec("potential mean/covariance shape mismatch".into()));
        }
        let inv = linalg::spd_inverse(&sigma_inf, "sigma_inf")?;
        linalg::require_spd(&sigma_inf, "sigma_inf")?;
        let hessian = if half_factor { inv } else { inv * 2.0 };
        Ok(QuadraticPotential {
            mu_inf,
            sigma_inf,
            half_factor,
            hessian,
        })
    }

    pub fn mu_inf(&self) -> &[f64] {
        &self.mu_inf
    }

    pub fn sigma_inf(&self) -> &Matrix {
        &self.sigma_inf
    }

    pub fn half_factor(&self) -> bool {
        self.half_factor
    }

    /// `∇²V`, constant in x.
    pub fn hessian(&self) -> &Matrix {
        &self.hessian
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        let d = self.dim();
        let r: Vec<f64> = (0..d).map(|i| x[i] - self.mu_inf[i]).collect();
        let hr = linalg::mat_vec(&self.hessian, &r);
        0.5 * r.iter().zip(&hr).map(|(a, b)| a * b).sum::<f64>()
    }
}

impl DriftPotential for QuadraticPotential {
    fn dim(&self) -> usize {
        self.mu_inf.len()
    }

    fn potential_jet(&self, layout: &Arc<JetLayout>, x: &[f64]) -> Result<PotentialJet> {
        check_order(layout)?;
        let d = self.dim();
        let mut derivs = vec![0.0; layout.len()];
        derivs[0] = self.value(x);
        if layout.degree() >= 1 {
            let mut g = vec![0.0; d];
            self.grad(x, &mut g);
            for i in 0..d {
                derivs[layout.unit(i)] = g[i];
            }
        }
        if layout.degree() >= 2 {
            for i in 0..d {
                for j in i..d {
                    let idx = layout.succ(layout.unit(i), j) as usize;
                    derivs[idx] = self.hessian[(i, j)];
                }
            }
        }
        Ok(PotentialJet {
            layout: Arc::clone(layout),
            derivs,
        })
    }

    fn grad(&self, x: &[f64], out: &mut [f64]) {
        let d = self.dim();
        for i in 0..d {
            out[i] = (0..d)
                .map(|j| self.hessian[(i, j)] * (x[j] - self.mu_inf[j]))
                .sum();
        }
    }
}
