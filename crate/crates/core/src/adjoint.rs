//! Continuous-adjoint gradients of the trajectory-wise loss.
//!
//! The costate `a` solves `ȧ = −(∂ψ/∂s)ᵀa − ∂g/∂s` backwards from `a(T) = 0`
//! and `dℓ/dθ = ∫₀ᵀ aᵀ∂ψ/∂θ + ∂g/∂θ dt`. Both `∂ψ/∂s` and the integrand are
//! linear in the field's jet entries, so the parameter part reduces to one
//! reverse sweep through the network per evaluation point, with a cotangent
//! assembled from `a`, the state and the residual.
//!
//! The forward pass stores the state and `ψ` at every grid node; the state at
//! step midpoints is the cubic Hermite interpolant of those, accurate to the
//! same order as the RK4 step. The backward pass is RK4 on the reversed grid.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::exec::{Executor, Sequential};
use crate::fields::{DriftPotential, FieldJet, JetTape, MlpField, VelocityField};
use crate::sampling;
use crate::selfcons::{init_state, mean_and_se, AugmentedState, Dynamics, GaussianInitial, IntegratorSpec};

/// Costate over the flat state layout plus the accumulated parameter
/// gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjointState {
    pub a: Vec<f64>,
    pub grad_accum: Vec<f64>,
}

/// Forward states and velocities at every grid node.
#[derive(Debug, Clone)]
pub struct ForwardTape {
    n_state: usize,
    dt: f64,
    nodes: Vec<f64>,
    slopes: Vec<f64>,
    loss: f64,
}

impl ForwardTape {
    pub(crate) fn new(n_state: usize, spec: &IntegratorSpec) -> Self {
        let cap = (spec.n_steps() + 1) * n_state;
        ForwardTape {
            n_state,
            dt: spec.dt(),
            nodes: Vec::with_capacity(cap),
            slopes: Vec::with_capacity(cap),
            loss: 0.0,
        }
    }

    pub(crate) fn push(&mut self, s: &[f64], psi: &[f64]) {
        self.nodes.extend_from_slice(s);
        self.slopes.extend_from_slice(psi);
    }

    pub(crate) fn set_loss(&mut self, loss: f64) {
        self.loss = loss;
    }

    pub fn loss(&self) -> f64 {
        self.loss
    }

    /// Number of grid nodes stored (`n_steps + 1`).
    pub fn n_nodes(&self) -> usize {
        self.nodes.len() / self.n_state
    }

    /// Number of states available to the backward pass: nodes and midpoints.
    pub fn n_points(&self) -> usize {
        2 * self.n_nodes() - 1
    }

    /// Time of point `j` (nodes at even `j`, midpoints at odd `j`).
    pub fn time(&self, j: usize) -> f64 {
        if j % 2 == 0 {
            (j / 2) as f64 * self.dt
        } else {
            (j / 2) as f64 * self.dt + 0.5 * self.dt
        }
    }

    pub fn node(&self, k: usize) -> Result<&[f64]> {
        if k >= self.n_nodes() {
            return Err(Error::TapeExhausted);
        }
        Ok(&self.nodes[k * self.n_state..(k + 1) * self.n_state])
    }

    /// State between nodes `k` and `k + 1`.
    pub fn midpoint(&self, k: usize) -> Result<Vec<f64>> {
        if k + 1 >= self.n_nodes() {
            return Err(Error::TapeExhausted);
        }
        let n = self.n_state;
        let (s0, s1) = (&self.nodes[k * n..(k + 1) * n], &self.nodes[(k + 1) * n..(k + 2) * n]);
        let (p0, p1) = (&self.slopes[k * n..(k + 1) * n], &self.slopes[(k + 1) * n..(k + 2) * n]);
        Ok((0..n)
            .map(|q| 0.5 * (s0[q] + s1[q]) + self.dt / 8.0 * (p0[q] - p1[q]))
            .collect())
    }

    /// State at point `j` (see [`ForwardTape::time`]).
    pub fn state(&self, j: usize) -> Result<Vec<f64>> {
        if j % 2 == 0 {
            self.node(j / 2).map(<[f64]>::to_vec)
        } else {
            self.midpoint(j / 2)
        }
    }
}

/// Everything the backward pass needs at one `(t, s)`.
pub struct Linearization {
    jet: FieldJet,
    pot: Vec<f64>,
    tape: Option<JetTape>,
    // residual value per `Dynamics::res` entry
    r: Vec<f64>,
}

impl Dynamics {
    /// Order-5 jets of field and potential at `(t, s)`, with the network tape
    /// when `taped`.
    pub fn linearize(
        &self,
        field: &dyn VelocityField,
        pot: &dyn DriftPotential,
        t: f64,
        s: &[f64],
        taped: bool,
    ) -> Result<Linearization> {
        let d = self.dim();
        let x = &s[..d];
        let layout = self.layout();
        let (jet, tape) = if taped {
            let mlp = field.as_mlp().ok_or(Error::NotTrainable)?;
            let (jet, tape) = mlp.eval_jet_taped(layout, t, x)?;
            (jet, Some(tape))
        } else {
            (field.eval_jet(layout, t, x)?, None)
        };
        let pot = pot.potential_jet(layout, x)?.derivs().to_vec();
        let r = self
            .res
            .iter()
            .map(|e| {
                jet.component(e.i as usize)[e.b as usize]
                    + pot[e.bi as usize]
                    + s[self.slot(e.bi as usize)]
            })
            .collect();
        Ok(Linearization { jet, pot, tape, r })
    }

    /// `(∂ψ/∂s)ᵀ w` into `out`.
    pub fn psi_vjp(&self, lin: &Linearization, s: &[f64], w: &[f64], out: &mut [f64]) {
        let d = self.dim();
        let layout = self.layout();
        let jet = &lin.jet;
        let div = jet.div_derivs();
        out.fill(0.0);
        for n in 0..d {
            let un = layout.unit(n);
            out[n] = (0..d).map(|i| w[i] * jet.component(i)[un]).sum::<f64>();
        }
        for idx in 1..=(self.state_len() - d) {
            let wa = w[self.slot(idx)];
            for n in 0..d {
                out[n] -= wa * div[layout.succ(idx, n) as usize];
            }
        }
        for t in &self.terms {
            let wa = w[self.slot(t.a as usize)];
            let fm = jet.component(t.m as usize);
            out[self.slot(t.src as usize)] -= wa * t.coef * fm[t.f as usize];
            let l = s[self.slot(t.src as usize)];
            for n in 0..d {
                out[n] -= wa * t.coef * l * fm[layout.succ(t.f as usize, n) as usize];
            }
        }
    }

    /// `∂g/∂s` into `out` (accumulating).
    pub fn g_grad_acc(&self, lin: &Linearization, out: &mut [f64]) {
        let d = self.dim();
        let layout = self.layout();
        for (e, &r) in self.res.iter().zip(&lin.r) {
            let c = 2.0 * e.mult * r;
            out[self.slot(e.bi as usize)] += c;
            let fi = lin.jet.component(e.i as usize);
            for n in 0..d {
                let fb = fi[layout.succ(e.b as usize, n) as usize];
                let vb = lin.pot[layout.succ(e.bi as usize, n) as usize];
                out[n] += c * (fb + vb);
            }
        }
    }

    /// `g` at the linearization point.
    pub fn g_value(&self, lin: &Linearization) -> f64 {
        self.res.iter().zip(&lin.r).map(|(e, r)| e.mult * r * r).sum()
    }

    /// `da/dt = −(∂ψ/∂s)ᵀa − ∂g/∂s` into `out`.
    pub fn adjoint_rhs(&self, lin: &Linearization, s: &[f64], a: &[f64], out: &mut [f64]) {
        self.psi_vjp(lin, s, a, out);
        for v in out.iter_mut() {
            *v = -*v;
        }
        let mut gg = vec![0.0; out.len()];
        self.g_grad_acc(lin, &mut gg);
        for (o, g) in out.iter_mut().zip(&gg) {
            *o -= g;
        }
    }

    /// Accumulate `weight · (aᵀ∂ψ/∂F + ∂g/∂F)` into `acc`, a cotangent on the
    /// jet derivative entries (`dim × layout.len()`).
    pub fn jet_cotangent_acc(&self, lin: &Linearization, s: &[f64], a: &[f64], weight: f64, acc: &mut [f64]) {
        let d = self.dim();
        let layout = self.layout();
        let len = layout.len();
        for i in 0..d {
            acc[i * len] += weight * a[i];
        }
        for idx in 1..=(self.state_len() - d) {
            let wa = weight * a[self.slot(idx)];
            if wa == 0.0 {
                continue;
            }
            for i in 0..d {
                acc[i * len + layout.succ(idx, i) as usize] -= wa;
            }
        }
        for t in &self.terms {
            let wa = weight * a[self.slot(t.a as usize)];
            acc[t.m as usize * len + t.f as usize] -= wa * t.coef * s[self.slot(t.src as usize)];
        }
        for (e, &r) in self.res.iter().zip(&lin.r) {
            acc[e.i as usize * len + e.b as usize] += weight * 2.0 * e.mult * r;
        }
    }

    /// Push a derivative-space jet cotangent through the network into `grad`.
    pub fn flush_cotangent(&self, mlp: &MlpField, lin: &Linearization, acc: &[f64], grad: &mut [f64]) -> Result<()> {
        let tape = lin.tape.as_ref().ok_or(Error::NotTrainable)?;
        let layout = self.layout();
        let len = layout.len();
        let cot: Vec<f64> = acc
            .iter()
            .enumerate()
            .map(|(q, &v)| v * layout.factorial(q % len))
            .collect();
        mlp.jet_vjp(tape, &cot, grad);
        Ok(())
    }

    /// Forward pass with tape, then the backward RK4 sweep.
    pub fn grad_from(
        &self,
        mlp: &MlpField,
        pot: &dyn DriftPotential,
        s0: &[f64],
        spec: &IntegratorSpec,
    ) -> Result<(f64, Vec<f64>)> {
        let mut tape = ForwardTape::new(self.state_len(), spec);
        let (loss, _) = self.integrate(mlp, pot, s0, spec, Some(&mut tape), None)?;
        let grad = self.backward(mlp, pot, &tape, spec)?;
        Ok((loss, grad))
    }

    /// Backward sweep over a recorded forward pass.
    pub fn backward(
        &self,
        mlp: &MlpField,
        pot: &dyn DriftPotential,
        tape: &ForwardTape,
        spec: &IntegratorSpec,
    ) -> Result<Vec<f64>> {
        let n_steps = spec.n_steps();
        if tape.n_nodes() != n_steps + 1 {
            return Err(Error::TapeExhausted);
        }
        let n = self.state_len();
        let dt = spec.dt();
        let jlen = self.dim() * self.layout().len();
        let mut grad = vec![0.0; mlp.n_params()];
        if n_steps == 0 {
            return Ok(grad);
        }
        let mut a = vec![0.0; n];
        let (mut k1, mut k2, mut k3, mut k4) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
        let mut stage = vec![0.0; n];
        let mut acc_node = vec![0.0; jlen];
        let mut acc_mid = vec![0.0; jlen];

        let mut s_next = tape.node(n_steps)?.to_vec();
        let mut lin_next = self.linearize(mlp, pot, spec.time(n_steps), &s_next, true)?;
        for step in (0..n_steps).rev() {
            let t = spec.time(step);
            let t_mid = t + 0.5 * dt;

            self.adjoint_rhs(&lin_next, &s_next, &a, &mut k1);
            self.jet_cotangent_acc(&lin_next, &s_next, &a, dt / 6.0, &mut acc_node);
            self.flush_cotangent(mlp, &lin_next, &acc_node, &mut grad)?;

            let s_mid = tape.midpoint(step)?;
            let lin_mid = self.linearize(mlp, pot, t_mid, &s_mid, true)?;
            acc_mid.fill(0.0);
            for q in 0..n {
                stage[q] = a[q] - 0.5 * dt * k1[q];
            }
            self.adjoint_rhs(&lin_mid, &s_mid, &stage, &mut k2);
            self.jet_cotangent_acc(&lin_mid, &s_mid, &stage, dt / 3.0, &mut acc_mid);
            for q in 0..n {
                stage[q] = a[q] - 0.5 * dt * k2[q];
            }
            self.adjoint_rhs(&lin_mid, &s_mid, &stage, &mut k3);
            self.jet_cotangent_acc(&lin_mid, &s_mid, &stage, dt / 3.0, &mut acc_mid);
            self.flush_cotangent(mlp, &lin_mid, &acc_mid, &mut grad)?;

            let s_node = tape.node(step)?.to_vec();
            let lin_node = self.linearize(mlp, pot, t, &s_node, true)?;
            for q in 0..n {
                stage[q] = a[q] - dt * k3[q];
            }
            self.adjoint_rhs(&lin_node, &s_node, &stage, &mut k4);
            acc_node.fill(0.0);
            self.jet_cotangent_acc(&lin_node, &s_node, &stage, dt / 6.0, &mut acc_node);

            for q in 0..n {
                a[q] -= dt / 6.0 * (k1[q] + 2.0 * k2[q] + 2.0 * k3[q] + k4[q]);
            }
            if a.iter().any(|v| !v.is_finite()) {
                return Err(Error::Divergence { t, sample: None });
            }
            s_next = s_node;
            lin_next = lin_node;
        }
        self.flush_cotangent(mlp, &lin_next, &acc_node, &mut grad)?;
        if grad.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence { t: 0.0, sample: None });
        }
        Ok(grad)
    }
}

/// `da/dt` at a tape point.
pub fn adjoint_velocity(
    field: &dyn VelocityField,
    pot: &dyn DriftPotential,
    t: f64,
    s: &AugmentedState,
    a: &AdjointState,
) -> Result<Vec<f64>> {
    let dynamics = Dynamics::new(s.dim());
    let flat = dynamics.to_flat(s);
    if a.a.len() != flat.len() {
        return Err(Error::InvalidSpec("costate has the wrong length".into()));
    }
    let lin = dynamics.linearize(field, pot, t, &flat, false)?;
    let mut out = vec![0.0; flat.len()];
    dynamics.adjoint_rhs(&lin, &flat, &a.a, &mut out);
    Ok(out)
}

/// `(R(f; x₀), ∇_θ R(f; x₀))`.
pub fn grad_trajectory(
    field: &MlpField,
    pot: &dyn DriftPotential,
    init: &GaussianInitial,
    x0: &[f64],
    spec: &IntegratorSpec,
) -> Result<(f64, Vec<f64>)> {
    let dynamics = Dynamics::new(init.dim());
    let s0 = dynamics.to_flat(&init_state(x0, init)?);
    dynamics.grad_from(field, pot, &s0, spec)
}

/// Per-sample losses and the mean gradient of one batch.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchGradient {
    pub losses: Vec<f64>,
    pub grad: Vec<f64>,
}

impl BatchGradient {
    pub fn mean_loss(&self) -> f64 {
        mean_and_se(&self.losses).0
    }

    pub fn standard_error(&self) -> Option<f64> {
        mean_and_se(&self.losses).1
    }
}

/// Mean loss and gradient over explicit initial points; the reduction runs
/// in point order whatever the executor.
pub fn grad_points<E: Executor + ?Sized>(
    exec: &E,
    field: &MlpField,
    pot: &dyn DriftPotential,
    init: &GaussianInitial,
    points: &[Vec<f64>],
    spec: &IntegratorSpec,
) -> Result<BatchGradient> {
    if points.is_empty() {
        return Err(Error::InvalidSpec("sample count must be at least 1".into()));
    }
    let dynamics = Dynamics::new(init.dim());
    let results = exec.map(points.len(), |i| {
        let s0 = dynamics.to_flat(&init_state(&points[i], init)?);
        dynamics.grad_from(field, pot, &s0, spec).map_err(|e| e.with_sample(i))
    });
    let mut losses = Vec::with_capacity(points.len());
    let mut grad = vec![0.0; field.n_params()];
    for r in results {
        let (loss, g) = r?;
        losses.push(loss);
        for (acc, v) in grad.iter_mut().zip(&g) {
            *acc += v;
        }
    }
    let scale = 1.0 / points.len() as f64;
    for v in grad.iter_mut() {
        *v *= scale;
    }
    Ok(BatchGradient { losses, grad })
}

/// Minibatch estimate of `R` and its gradient from `n` samples of `α₀`.
pub fn grad_estimate_r_with<E: Executor + ?Sized>(
    exec: &E,
    field: &MlpField,
    pot: &dyn DriftPotential,
    init: &GaussianInitial,
    n: usize,
    seed: u64,
    spec: &IntegratorSpec,
) -> Result<BatchGradient> {
    let points = sampling::sample_points(init, n, seed);
    grad_points(exec, field, pot, init, &points, spec)
}

/// [`grad_estimate_r_with`] on the calling thread, returning the mean loss
/// and mean gradient.
pub fn grad_estimate_r(
    field: &MlpField,
    pot: &dyn DriftPotential,
    init: &GaussianInitial,
    n: usize,
    seed: u64,
    spec: &IntegratorSpec,
) -> Result<(f64, Vec<f64>)> {
    let b = grad_estimate_r_with(&Sequential, field, pot, init, n, seed, spec)?;
    Ok((b.mean_loss(), b.grad))
}
