//! Log-density derivatives carried along particle trajectories, the
//! self-consistency residual, and the trajectory-wise loss.
//!
//! Along `dx/dt = f(t, x)` the derivatives `ζₖ = ∇ᵏ log ρ(t, x(t))` of the
//! pushed-forward density obey closed ODEs driven by the spatial partials of
//! `f`. The augmented state `s = [x, ζ₁, ζ₂, ζ₃]` is integrated with RK4 and
//! the squared residual `‖f + ∇V + ζ₁‖² + ‖∇f + ∇²V + ζ₂‖² + ‖∇²f + ∇³V + ζ₃‖²`
//! is accumulated alongside.
//!
//! Internally the symmetric tensors are stored once per multi-index: the flat
//! state is `[x; L[1], …, L[m]]`, where `L[a] = ∂ᵃ log ρ` for the multi-indices
//! `1 ≤ ‖a‖₁ ≤ 3` in [`JetLayout`] order.

use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use crate::adjoint::ForwardTape;
use crate::error::{Error, Result};
use crate::exec::{Executor, Sequential};
use crate::fields::{DriftPotential, FieldJet, VelocityField};
use crate::jets::{binomial, JetLayout};
use crate::linalg::{self, Matrix};
use crate::oracle::step_count;
use crate::sampling;

/// Gaussian initial law `α₀ = N(μ₀, Σ₀)`.
#[derive(Debug, Clone)]
pub struct GaussianInitial {
    mu0: Vec<f64>,
    sigma0: Matrix,
    precision: Matrix,
    root: Matrix,
    log_norm: f64,
}

impl GaussianInitial {
    pub fn new(mu0: Vec<f64>, sigma0: Matrix) -> Result<Self> {
        let d = mu0.len();
        if d == 0 || sigma0.nrows() != d || sigma0.ncols() != d {
            return Err(Error::InvalidInitial("mean/covariance shape mismatch".into()));
        }
        if !linalg::is_spd(&sigma0) {
            return Err(Error::InvalidInitial("sigma0 is not symmetric positive definite".into()));
        }
        let precision = linalg::spd_inverse(&sigma0, "sigma0")
            .map_err(|_| Error::InvalidInitial("sigma0 is singular".into()))?;
        let root = linalg::spd_sqrt(&sigma0);
        let log_norm = d as f64 * libm::log(2.0 * PI) + libm::log(sigma0.determinant());
        Ok(GaussianInitial {
            mu0,
            sigma0,
            precision,
            root,
            log_norm,
        })
    }

    pub fn dim(&self) -> usize {
        self.mu0.len()
    }

    pub fn mu0(&self) -> &[f64] {
        &self.mu0
    }

    pub fn sigma0(&self) -> &Matrix {
        &self.sigma0
    }

    /// `Σ₀⁻¹`.
    pub fn precision(&self) -> &Matrix {
        &self.precision
    }

    /// Principal square root `Γ₀ = √Σ₀`.
    pub fn root(&self) -> &Matrix {
        &self.root
    }

    pub fn log_density(&self, x: &[f64]) -> f64 {
        let d = self.dim();
        let mut q = 0.0;
        for i in 0..d {
            for j in 0..d {
                q += (x[i] - self.mu0[i]) * self.precision[(i, j)] * (x[j] - self.mu0[j]);
            }
        }
        -0.5 * (q + self.log_norm)
    }
}

/// Fixed-step classical RK4 on `[0, T]` with `T = n·dt`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegratorSpec {
    dt: f64,
    t_end: f64,
    n_steps: usize,
}

impl IntegratorSpec {
    pub fn new(dt: f64, t_end: f64) -> Result<Self> {
        let n_steps = step_count(t_end, dt)?;
        Ok(IntegratorSpec { dt, t_end, n_steps })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn t_end(&self) -> f64 {
        self.t_end
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    /// Time of grid node `k`.
    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.dt
    }
}

/// `s = [x, ζ₁, ζ₂, ζ₃]` plus the accumulated loss, with ζ₂ (`d × d`) and ζ₃
/// (`d × d × d`) as full row-major tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedState {
    pub x: Vec<f64>,
    pub zeta1: Vec<f64>,
    pub zeta2: Vec<f64>,
    pub zeta3: Vec<f64>,
    pub running_loss: f64,
}

impl AugmentedState {
    pub fn dim(&self) -> usize {
        self.x.len()
    }

    pub fn zeta2_at(&self, i: usize, j: usize) -> f64 {
        self.zeta2[i * self.dim() + j]
    }

    pub fn zeta3_at(&self, i: usize, j: usize, k: usize) -> f64 {
        let d = self.dim();
        self.zeta3[(i * d + j) * d + k]
    }

    /// `max |ζ₂ᵢⱼ − ζ₂ⱼᵢ|`.
    pub fn zeta2_asymmetry(&self) -> f64 {
        let d = self.dim();
        let mut worst: f64 = 0.0;
        for i in 0..d {
            for j in 0..d {
                worst = worst.max((self.zeta2_at(i, j) - self.zeta2_at(j, i)).abs());
            }
        }
        worst
    }

    /// Largest deviation of ζ₃ under any index permutation.
    pub fn zeta3_asymmetry(&self) -> f64 {
        let d = self.dim();
        let mut worst: f64 = 0.0;
        for i in 0..d {
            for j in 0..d {
                for k in 0..d {
                    let v = self.zeta3_at(i, j, k);
                    for p in [
                        self.zeta3_at(i, k, j),
                        self.zeta3_at(j, i, k),
                        self.zeta3_at(j, k, i),
                        self.zeta3_at(k, i, j),
                        self.zeta3_at(k, j, i),
                    ] {
                        worst = worst.max((v - p).abs());
                    }
                }
            }
        }
        worst
    }
}

/// Residual blocks `δ⁰ = f + ∇V + ζ₁`, `δ¹ᵢⱼ = ∂ⱼfᵢ + ∂ᵢⱼV + ζ₂ᵢⱼ`,
/// `δ²ᵢⱼₖ = ∂ⱼₖfᵢ + ∂ᵢⱼₖV + ζ₃ᵢⱼₖ` (full row-major tensors).
#[derive(Debug, Clone, PartialEq)]
pub struct Residual {
    pub delta0: Vec<f64>,
    pub delta1: Vec<f64>,
    pub delta2: Vec<f64>,
}

impl Residual {
    /// `‖δ⁰‖² + ‖δ¹‖²_F + ‖δ²‖²_F`.
    pub fn squared_norm(&self) -> f64 {
        let sq = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>();
        sq(&self.delta0) + sq(&self.delta1) + sq(&self.delta2)
    }
}

/// One term `coef · L[src] · ∂^{f} f_m` of `dL[a]/dt`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Term {
    pub a: u16,
    pub src: u16,
    pub m: u16,
    pub f: u16,
    pub coef: f64,
}

/// One residual entry `r = ∂ᵇfᵢ + ∂ᵇ⁺ᵉⁱV + L[b + eᵢ]` with its multiplicity
/// among full tensor entries.
#[derive(Debug, Clone, Copy)]
pub(crate) struct ResTerm {
    pub i: u16,
    pub b: u16,
    pub bi: u16,
    pub mult: f64,
}

/// Index tables shared by the forward dynamics and the adjoint.
#[derive(Debug, Clone)]
pub struct Dynamics {
    dim: usize,
    layout: Arc<JetLayout>,
    fwd: Arc<JetLayout>,
    n_slots: usize,
    idx2: Vec<usize>,
    idx3: Vec<usize>,
    // full-tensor position representing each slot of order 2 and 3
    rep: Vec<usize>,
    pub(crate) terms: Vec<Term>,
    pub(crate) res: Vec<ResTerm>,
}

impl Dynamics {
    pub fn new(dim: usize) -> Self {
        let layout = Arc::new(JetLayout::new(dim, 5));
        let fwd = Arc::new(JetLayout::new(dim, 4));
        let d = dim;
        let n_slots = layout.len_upto(3) - 1;
        let mut idx2 = vec![0; d * d];
        let mut idx3 = vec![0; d * d * d];
        let mut rep = vec![usize::MAX; n_slots + 1];
        for i in 0..d {
            rep[layout.unit(i)] = i;
            for j in 0..d {
                let ij = layout.succ(layout.unit(i), j) as usize;
                idx2[i * d + j] = ij;
                if rep[ij] == usize::MAX {
                    rep[ij] = i * d + j;
                }
                for k in 0..d {
                    let ijk = layout.succ(ij, k) as usize;
                    idx3[(i * d + j) * d + k] = ijk;
                    if rep[ijk] == usize::MAX {
                        rep[ijk] = (i * d + j) * d + k;
                    }
                }
            }
        }
        let mut terms = Vec::new();
        for a in 1..=n_slots {
            let ea = layout.exponents(a).to_vec();
            let na = layout.order_of(a);
            for b in 0..layout.len_upto(na - 1) {
                let eb = layout.exponents(b);
                if eb.iter().zip(&ea).any(|(x, y)| x > y) {
                    continue;
                }
                let diff: Vec<usize> = ea.iter().zip(eb).map(|(x, y)| (x - y) as usize).collect();
                let f = layout.index_of(&diff).expect("within layout");
                let coef: f64 = ea
                    .iter()
                    .zip(eb)
                    .map(|(&x, &y)| binomial(x as usize, y as usize))
                    .product();
                for m in 0..d {
                    terms.push(Term {
                        a: a as u16,
                        src: layout.succ(b, m) as u16,
                        m: m as u16,
                        f: f as u16,
                        coef,
                    });
                }
            }
        }
        let mut res = Vec::new();
        for i in 0..d {
            for b in 0..layout.len_upto(2) {
                let nb = layout.order_of(b);
                let fact = (1..=nb).fold(1.0, |acc, k| acc * k as f64);
                res.push(ResTerm {
                    i: i as u16,
                    b: b as u16,
                    bi: layout.succ(b, i) as u16,
                    mult: fact / layout.factorial(b),
                });
            }
        }
        Dynamics {
            dim,
            layout,
            fwd,
            n_slots,
            idx2,
            idx3,
            rep,
            terms,
            res,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Length of the flat state `[x; L]`.
    pub fn state_len(&self) -> usize {
        self.dim + self.n_slots
    }

    /// Degree-5 layout used by the adjoint; its prefix is the degree-4 layout
    /// used by the forward dynamics.
    pub fn layout(&self) -> &Arc<JetLayout> {
        &self.layout
    }

    pub fn forward_layout(&self) -> &Arc<JetLayout> {
        &self.fwd
    }

    /// Flat state position of log-density multi-index `idx` (`1 ≤ idx`).
    #[inline]
    pub fn slot(&self, idx: usize) -> usize {
        self.dim + idx - 1
    }

    pub fn to_flat(&self, s: &AugmentedState) -> Vec<f64> {
        let d = self.dim;
        let mut out = vec![0.0; self.state_len()];
        out[..d].copy_from_slice(&s.x);
        for idx in 1..=self.n_slots {
            let r = self.rep[idx];
            out[self.slot(idx)] = match self.layout.order_of(idx) {
                1 => s.zeta1[r],
                2 => s.zeta2[r],
                _ => s.zeta3[r],
            };
        }
        out
    }

    pub fn from_flat(&self, flat: &[f64], running_loss: f64) -> AugmentedState {
        let d = self.dim;
        let l = |idx: usize| flat[self.slot(idx)];
        AugmentedState {
            x: flat[..d].to_vec(),
            zeta1: (0..d).map(|i| l(self.layout.unit(i))).collect(),
            zeta2: self.idx2.iter().map(|&idx| l(idx)).collect(),
            zeta3: self.idx3.iter().map(|&idx| l(idx)).collect(),
            running_loss,
        }
    }

    fn check_dims(&self, field: &dyn VelocityField, pot: &dyn DriftPotential) -> Result<()> {
        if field.dim() != self.dim || pot.dim() != self.dim {
            return Err(Error::InvalidSpec(alloc::format!(
                "dimension mismatch: field {}, potential {}, state {}",
                field.dim(),
                pot.dim(),
                self.dim
            )));
        }
        Ok(())
    }

    /// Full-tensor time derivatives of ζ₁, ζ₂, ζ₃ from the index-explicit
    /// formulas. `jet` must have order ≥ 4.
    fn zeta_velocity_full(&self, jet: &FieldJet, s: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let d = self.dim;
        let unit = |i: usize| self.layout.unit(i);
        let i2 = |i: usize, j: usize| self.idx2[i * d + j];
        let i3 = |i: usize, j: usize, k: usize| self.idx3[(i * d + j) * d + k];
        let f = |m: usize, idx: usize| jet.component(m)[idx];
        let div = jet.div_derivs();
        let z1 = |i: usize| s[self.slot(unit(i))];
        let z2 = |i: usize, j: usize| s[self.slot(i2(i, j))];
        let z3 = |i: usize, j: usize, k: usize| s[self.slot(i3(i, j, k))];

        let mut dz1 = vec![0.0; d];
        for j in 0..d {
            dz1[j] = -div[unit(j)] - (0..d).map(|i| f(i, unit(j)) * z1(i)).sum::<f64>();
        }
        let mut dz2 = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..d {
                let mut v = -div[i2(i, j)];
                for k in 0..d {
                    v -= z2(i, k) * f(k, unit(j));
                    v -= z2(j, k) * f(k, unit(i));
                    v -= f(k, i2(i, j)) * z1(k);
                }
                dz2[i * d + j] = v;
            }
        }
        let mut dz3 = vec![0.0; d * d * d];
        for i in 0..d {
            for j in 0..d {
                for k in 0..d {
                    let mut v = -div[i3(i, j, k)];
                    for m in 0..d {
                        v -= z3(i, j, m) * f(m, unit(k))
                            + z3(i, k, m) * f(m, unit(j))
                            + z3(j, k, m) * f(m, unit(i));
                        v -= z2(i, m) * f(m, i2(j, k))
                            + z2(j, m) * f(m, i2(i, k))
                            + z2(k, m) * f(m, i2(i, j));
                        v -= z1(m) * f(m, i3(i, j, k));
                    }
                    dz3[(i * d + j) * d + k] = v;
                }
            }
        }
        (dz1, dz2, dz3)
    }

    fn residual_from(&self, jet: &FieldJet, pot: &[f64], s: &[f64]) -> Residual {
        let d = self.dim;
        let unit = |i: usize| self.layout.unit(i);
        let f = |m: usize, idx: usize| jet.component(m)[idx];
        let mut delta0 = vec![0.0; d];
        let mut delta1 = vec![0.0; d * d];
        let mut delta2 = vec![0.0; d * d * d];
        for i in 0..d {
            delta0[i] = f(i, 0) + pot[unit(i)] + s[self.slot(unit(i))];
            for j in 0..d {
                let ij = self.idx2[i * d + j];
                delta1[i * d + j] = f(i, unit(j)) + pot[ij] + s[self.slot(ij)];
                for k in 0..d {
                    let jk = self.idx2[j * d + k];
                    let ijk = self.idx3[(i * d + j) * d + k];
                    delta2[(i * d + j) * d + k] = f(i, jk) + pot[ijk] + s[self.slot(ijk)];
                }
            }
        }
        Residual {
            delta0,
            delta1,
            delta2,
        }
    }

    /// `ψ(t, s)` into `ds` (flat), returning the loss integrand `g(t, s)`.
    pub fn velocity_flat(
        &self,
        field: &dyn VelocityField,
        pot: &dyn DriftPotential,
        t: f64,
        s: &[f64],
        ds: &mut [f64],
    ) -> Result<f64> {
        let d = self.dim;
        let x = &s[..d];
        let jet = field.eval_jet(&self.fwd, t, x)?;
        let pj = pot.potential_jet(&self.fwd, x)?;
        let (dz1, dz2, dz3) = self.zeta_velocity_full(&jet, s);
        for i in 0..d {
            ds[i] = jet.component(i)[0];
        }
        for idx in 1..=self.n_slots {
            let r = self.rep[idx];
            ds[self.slot(idx)] = match self.layout.order_of(idx) {
                1 => dz1[r],
                2 => dz2[r],
                _ => dz3[r],
            };
        }
        Ok(self.residual_from(&jet, pj.derivs(), s).squared_norm())
    }

    /// `ψ(t, s)` by the multi-index Leibniz form of the same dynamics.
    pub fn velocity_leibniz(&self, jet: &FieldJet, s: &[f64], ds: &mut [f64]) {
        let d = self.dim;
        let div = jet.div_derivs();
        for i in 0..d {
            ds[i] = jet.component(i)[0];
        }
        for idx in 1..=self.n_slots {
            ds[self.slot(idx)] = -div[idx];
        }
        for t in &self.terms {
            let v = t.coef * s[self.slot(t.src as usize)] * jet.component(t.m as usize)[t.f as usize];
            ds[self.slot(t.a as usize)] -= v;
        }
    }

    /// Forward RK4 of `[s, loss]`; optionally records the tape.
    pub(crate) fn integrate(
        &self,
        field: &dyn VelocityField,
        pot: &dyn DriftPotential,
        s0: &[f64],
        spec: &IntegratorSpec,
        mut tape: Option<&mut ForwardTape>,
        mut visit: Option<&mut dyn FnMut(usize, &[f64], f64)>,
    ) -> Result<(f64, Vec<f64>)> {
        self.check_dims(field, pot)?;
        let n = self.state_len();
        let dt = spec.dt();
        let mut s = s0.to_vec();
        let mut loss = 0.0;
        let mut k1 = vec![0.0; n];
        let mut k2 = vec![0.0; n];
        let mut k3 = vec![0.0; n];
        let mut k4 = vec![0.0; n];
        let mut tmp = vec![0.0; n];
        if let Some(v) = visit.as_deref_mut() {
            v(0, &s, 0.0);
        }
        for step in 0..spec.n_steps() {
            let t = spec.time(step);
            let t_mid = t + 0.5 * dt;
            let t_next = spec.time(step + 1);
            let g1 = self.velocity_flat(field, pot, t, &s, &mut k1)?;
            if let Some(tape) = tape.as_deref_mut() {
                tape.push(&s, &k1);
            }
            for q in 0..n {
                tmp[q] = s[q] + 0.5 * dt * k1[q];
            }
            let g2 = self.velocity_flat(field, pot, t_mid, &tmp, &mut k2)?;
            for q in 0..n {
                tmp[q] = s[q] + 0.5 * dt * k2[q];
            }
            let g3 = self.velocity_flat(field, pot, t_mid, &tmp, &mut k3)?;
            for q in 0..n {
                tmp[q] = s[q] + dt * k3[q];
            }
            let g4 = self.velocity_flat(field, pot, t_next, &tmp, &mut k4)?;
            for q in 0..n {
                s[q] += dt / 6.0 * (k1[q] + 2.0 * k2[q] + 2.0 * k3[q] + k4[q]);
            }
            loss += dt / 6.0 * (g1 + 2.0 * g2 + 2.0 * g3 + g4);
            if !loss.is_finite() || s.iter().any(|v| !v.is_finite()) {
                return Err(Error::Divergence {
                    t: t_next,
                    sample: None,
                });
            }
            if let Some(v) = visit.as_deref_mut() {
                v(step + 1, &s, loss);
            }
        }
        if let Some(tape) = tape {
            self.velocity_flat(field, pot, spec.t_end(), &s, &mut k1)?;
            tape.push(&s, &k1);
            tape.set_loss(loss);
        }
        Ok((loss, s))
    }
}

/// `s₀(x₀) = [x₀, −Σ₀⁻¹(x₀ − μ₀), −Σ₀⁻¹, 0]`.
pub fn init_state(x0: &[f64], init: &GaussianInitial) -> Result<AugmentedState> {
    let d = init.dim();
    if x0.len() != d {
        return Err(Error::InvalidInitial("x0 has the wrong dimension".into()));
    }
    let p = init.precision();
    let zeta1 = (0..d)
        .map(|i| -(0..d).map(|j| p[(i, j)] * (x0[j] - init.mu0()[j])).sum::<f64>())
        .collect();
    let zeta2 = (0..d * d).map(|k| -p[(k / d, k % d)]).collect();
    Ok(AugmentedState {
        x: x0.to_vec(),
        zeta1,
        zeta2,
        zeta3: vec![0.0; d * d * d],
        running_loss: 0.0,
    })
}

/// `ds/dt` at `(t, s)`; the `running_loss` slot of the result holds `g(t, s)`.
pub fn state_velocity(
    field: &dyn VelocityField,
    pot: &dyn DriftPotential,
    t: f64,
    s: &AugmentedState,
) -> Result<AugmentedState> {
    let dynamics = Dynamics::new(s.dim());
    dynamics.check_dims(field, pot)?;
    let flat = dynamics.to_flat(s);
    let mut ds = vec![0.0; flat.len()];
    let g = dynamics.velocity_flat(field, pot, t, &flat, &mut ds)?;
    Ok(dynamics.from_flat(&ds, g))
}

/// `ds/dt` on the full (unsymmetrized) tensors: every entry of ζ₂ and ζ₃ is
/// read where the formulas index it, so a non-symmetric state yields the
/// corresponding non-symmetric derivative.
pub fn state_velocity_full(
    field: &dyn VelocityField,
    t: f64,
    s: &AugmentedState,
) -> Result<AugmentedState> {
    let d = s.dim();
    let layout = Arc::new(JetLayout::new(d, 4));
    let jet = field.eval_jet(&layout, t, &s.x)?;
    let f = |m: usize, a: &[usize]| jet.partial(m, a);
    let e = |idx: &[usize]| {
        let mut a = vec![0usize; d];
        for &i in idx {
            a[i] += 1;
        }
        a
    };
    let divp = |idx: &[usize]| jet.div_partial(&e(idx));
    let mut out = AugmentedState {
        x: jet.value(),
        zeta1: vec![0.0; d],
        zeta2: vec![0.0; d * d],
        zeta3: vec![0.0; d * d * d],
        running_loss: 0.0,
    };
    for j in 0..d {
        let mut v = -divp(&[j])?;
        for i in 0..d {
            v -= f(i, &e(&[j]))? * s.zeta1[i];
        }
        out.zeta1[j] = v;
    }
    for i in 0..d {
        for j in 0..d {
            let mut v = -divp(&[i, j])?;
            for k in 0..d {
                v -= s.zeta2_at(i, k) * f(k, &e(&[j]))?;
                v -= s.zeta2_at(j, k) * f(k, &e(&[i]))?;
                v -= f(k, &e(&[i, j]))? * s.zeta1[k];
            }
            out.zeta2[i * d + j] = v;
        }
    }
    for i in 0..d {
        for j in 0..d {
            for k in 0..d {
                let mut v = -divp(&[i, j, k])?;
                for m in 0..d {
                    v -= s.zeta3_at(i, j, m) * f(m, &e(&[k]))?
                        + s.zeta3_at(i, k, m) * f(m, &e(&[j]))?
                        + s.zeta3_at(j, k, m) * f(m, &e(&[i]))?;
                    v -= s.zeta2_at(i, m) * f(m, &e(&[j, k]))?
                        + s.zeta2_at(j, m) * f(m, &e(&[i, k]))?
                        + s.zeta2_at(k, m) * f(m, &e(&[i, j]))?;
                    v -= s.zeta1[m] * f(m, &e(&[i, j, k]))?;
                }
                out.zeta3[(i * d + j) * d + k] = v;
            }
        }
    }
    Ok(out)
}

/// `(δ⁰, δ¹, δ²)` at `(t, s)`.
pub fn residual(
    field: &dyn VelocityField,
    pot: &dyn DriftPotential,
    t: f64,
    s: &AugmentedState,
) -> Result<Residual> {
    let dynamics = Dynamics::new(s.dim());
    dynamics.check_dims(field, pot)?;
    let jet = field.eval_jet(&dynamics.fwd, t, &s.x)?;
    let pj = pot.potential_jet(&dynamics.fwd, &s.x)?;
    Ok(dynamics.residual_from(&jet, pj.derivs(), &dynamics.to_flat(s)))
}

/// `g(t, s) = ‖δ⁰‖² + ‖δ¹‖²_F + ‖δ²‖²_F`.
pub fn loss_integrand_g(
    field: &dyn VelocityField,
    pot: &dyn DriftPotential,
    t: f64,
    s: &AugmentedState,
) -> Result<f64> {
    Ok(residual(field, pot, t, s)?.squared_norm())
}

/// `R(f; x₀)` and the final state, integrating loss and state jointly.
pub fn trajectory_loss(
    field: &dyn VelocityField,
    pot: &dyn DriftPotential,
    init: &GaussianInitial,
    x0: &[f64],
    spec: &IntegratorSpec,
) -> Result<(f64, AugmentedState)> {
    let dynamics = Dynamics::new(init.dim());
    let s0 = dynamics.to_flat(&init_state(x0, init)?);
    let (loss, s) = dynamics.integrate(field, pot, &s0, spec, None, None)?;
    Ok((loss, dynamics.from_flat(&s, loss)))
}

/// Augmented states (with the running loss) at every step whose index is a
/// multiple of `every`, starting with `t = 0`, as `(step, state)` pairs.
pub fn trajectory_states(
    field: &dyn VelocityField,
    pot: &dyn DriftPotential,
    init: &GaussianInitial,
    x0: &[f64],
    spec: &IntegratorSpec,
    every: usize,
) -> Result<Vec<(usize, AugmentedState)>> {
    if every == 0 {
        return Err(Error::InvalidSpec("recording stride must be at least 1".into()));
    }
    let dynamics = Dynamics::new(init.dim());
    let s0 = dynamics.to_flat(&init_state(x0, init)?);
    let mut out = Vec::new();
    let mut rec = |k: usize, s: &[f64], loss: f64| {
        if k % every == 0 {
            out.push((k, dynamics.from_flat(s, loss)));
        }
    };
    dynamics.integrate(field, pot, &s0, spec, None, Some(&mut rec))?;
    Ok(out)
}

/// Sample mean and standard error (`None` for fewer than two values).
pub fn mean_and_se(values: &[f64]) -> (f64, Option<f64>) {
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, None);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, Some(libm::sqrt(var / n as f64)))
}

/// Trajectory losses for explicit initial points, in order.
pub fn trajectory_losses<E: Executor + ?Sized>(
    exec: &E,
    field: &dyn VelocityField,
    pot: &dyn DriftPotential,
    init: &GaussianInitial,
    points: &[Vec<f64>],
    spec: &IntegratorSpec,
) -> Result<Vec<f64>> {
    let dynamics = Dynamics::new(init.dim());
    let results = exec.map(points.len(), |i| {
        let s0 = dynamics.to_flat(&init_state(&points[i], init)?);
        dynamics
            .integrate(field, pot, &s0, spec, None, None)
            .map(|(loss, _)| loss)
            .map_err(|e| e.with_sample(i))
    });
    results.into_iter().collect()
}

/// Monte Carlo estimate of `R(f)` from `n` samples of `α₀`.
pub fn estimate_r_with<E: Executor + ?Sized>(
    exec: &E,
    field: &dyn VelocityField,
    pot: &dyn DriftPotential,
    init: &GaussianInitial,
    n: usize,
    seed: u64,
    spec: &IntegratorSpec,
) -> Result<(f64, Option<f64>)> {
    if n == 0 {
        return Err(Error::InvalidSpec("sample count must be at least 1".into()));
    }
    let points = sampling::sample_points(init, n, seed);
    let losses = trajectory_losses(exec, field, pot, init, &points, spec)?;
    Ok(mean_and_se(&losses))
}

/// [`estimate_r_with`] on the calling thread.
pub fn estimate_r(
    field: &dyn VelocityField,
    pot: &dyn DriftPotential,
    init: &GaussianInitial,
    n: usize,
    seed: u64,
    spec: &IntegratorSpec,
) -> Result<(f64, Option<f64>)> {
    estimate_r_with(&Sequential, field, pot, init, n, seed, spec)
}
