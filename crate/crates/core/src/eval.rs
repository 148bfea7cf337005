//! Evaluation against the analytic solution: density recovery along
//! backward characteristics, the grid metrics `ℓ_s` and `ℓ_d`, and the
//! push-forward identity check on the torus.

use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use crate::domain::{wrap_scalar, DomainMode};
use crate::error::{Error, Result};
use crate::exec::Executor;
use crate::fields::{DriftPotential, VelocityField};
use crate::jets::JetLayout;
use crate::oracle::GaussianPath;
use crate::sampling;
use crate::selfcons::{mean_and_se, GaussianInitial};

const GRID_TOL: f64 = 1e-9;

/// `t / dt` when it is a nonnegative integer (up to rounding).
fn whole_steps(t: f64, dt: f64) -> Result<usize> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidSpec(alloc::format!("time step must be positive, got {dt}")));
    }
    let r = t / dt;
    let n = libm::round(r);
    if !(t >= 0.0) || libm::fabs(r - n) > GRID_TOL * n.max(1.0) {
        return Err(Error::OutOfRange { t });
    }
    Ok(n as usize)
}

/// Uniform grid on the box `[-w, w]ᵈ` with time stamps.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalGrid {
    dim: usize,
    half_width: f64,
    h: f64,
    n_axis: usize,
    stamps: Vec<f64>,
}

impl EvalGrid {
    /// `[-10, 10]²` with increment `h` and stamps `0, 0.3, …, 3`.
    pub fn new(h: f64) -> Result<Self> {
        let stamps = (0..=10).map(|k| k as f64 * 3.0 / 10.0).collect();
        Self::with_box(2, 10.0, h, stamps)
    }

    pub fn with_box(dim: usize, half_width: f64, h: f64, stamps: Vec<f64>) -> Result<Self> {
        if dim == 0 || !(half_width > 0.0) || !(h > 0.0 && h.is_finite()) {
            return Err(Error::InvalidSpec("grid needs a positive box and increment".into()));
        }
        let cells = 2.0 * half_width / h;
        let n = libm::round(cells);
        if libm::fabs(cells - n) > GRID_TOL * n.max(1.0) {
            return Err(Error::InvalidSpec(alloc::format!(
                "increment {h} does not divide the box width {}",
                2.0 * half_width
            )));
        }
        if stamps.is_empty() {
            return Err(Error::InvalidSpec("grid needs at least one time stamp".into()));
        }
        Ok(EvalGrid {
            dim,
            half_width,
            h,
            n_axis: n as usize + 1,
            stamps,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    pub fn n_axis(&self) -> usize {
        self.n_axis
    }

    pub fn n_points(&self) -> usize {
        self.n_axis.pow(self.dim as u32)
    }

    pub fn stamps(&self) -> &[f64] {
        &self.stamps
    }

    /// `hᵈ`.
    pub fn cell_volume(&self) -> f64 {
        libm::pow(self.h, self.dim as f64)
    }

    /// Coordinate of node `i` along an axis.
    pub fn coord(&self, i: usize) -> f64 {
        -self.half_width + i as f64 * self.h
    }

    /// Point `i` (first coordinate varies slowest).
    pub fn point(&self, mut i: usize) -> Vec<f64> {
        let mut x = vec![0.0; self.dim];
        for q in (0..self.dim).rev() {
            x[q] = self.coord(i % self.n_axis);
            i /= self.n_axis;
        }
        x
    }

    /// Points of the sub-lattice with `m` nodes per axis (`m − 1` must
    /// divide `n_axis − 1`).
    pub fn subgrid(&self, m: usize) -> Result<Vec<Vec<f64>>> {
        if m < 2 || (self.n_axis - 1) % (m - 1) != 0 {
            return Err(Error::InvalidSpec(alloc::format!(
                "{m} nodes per axis do not fit a grid with {}",
                self.n_axis
            )));
        }
        let stride = (self.n_axis - 1) / (m - 1);
        let total = m.pow(self.dim as u32);
        Ok((0..total)
            .map(|mut i| {
                let mut x = vec![0.0; self.dim];
                for q in (0..self.dim).rev() {
                    x[q] = self.coord((i % m) * stride);
                    i /= m;
                }
                x
            })
            .collect())
    }
}

/// `log Σₖ α₀(x + l·k)`: the initial density folded onto the torus.
pub fn periodized_log_density(init: &GaussianInitial, side: f64, x: &[f64]) -> f64 {
    let d = init.dim();
    let spread = (0..d)
        .map(|i| libm::sqrt(init.sigma0()[(i, i)]))
        .fold(0.0, f64::max);
    let reach = (0..d).map(|i| libm::fabs(init.mu0()[i])).fold(0.0, f64::max);
    let k_max = libm::ceil((12.0 * spread + reach) / side) as i64 + 1;
    let width = (2 * k_max + 1) as usize;
    let total = width.pow(d as u32);
    let mut logs = Vec::with_capacity(total);
    let mut y = vec![0.0; d];
    for mut c in 0..total {
        for q in 0..d {
            let k = (c % width) as i64 - k_max;
            c /= width;
            y[q] = x[q] + side * k as f64;
        }
        logs.push(init.log_density(&y));
    }
    let top = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    top + libm::log(logs.iter().map(|l| libm::exp(l - top)).sum::<f64>())
}

fn log_initial(init: &GaussianInitial, domain: &DomainMode, x: &[f64]) -> f64 {
    match domain.side() {
        Some(side) => {
            let w: Vec<f64> = x.iter().map(|&v| wrap_scalar(side, v)).collect();
            periodized_log_density(init, side, &w)
        }
        None => init.log_density(x),
    }
}

struct Flow<'a> {
    field: &'a dyn VelocityField,
    layout: Arc<JetLayout>,
}

impl Flow<'_> {
    fn new(field: &dyn VelocityField) -> Flow<'_> {
        Flow {
            field,
            layout: Arc::new(JetLayout::new(field.dim(), 1)),
        }
    }

    fn eval(&self, t: f64, x: &[f64], v: &mut [f64]) -> Result<f64> {
        let jet = self.field.eval_jet(&self.layout, t, x)?;
        v.copy_from_slice(&jet.value());
        Ok(jet.div_derivs()[0])
    }

    /// One RK4 step of `x' = f` from `t` with signed step `h`, returning the
    /// matching quadrature of `div f`.
    fn step(&self, t: f64, h: f64, x: &mut [f64]) -> Result<f64> {
        let d = x.len();
        let mut k = [vec![0.0; d], vec![0.0; d], vec![0.0; d], vec![0.0; d]];
        let mut y = vec![0.0; d];
        let d1 = self.eval(t, x, &mut k[0])?;
        for q in 0..d {
            y[q] = x[q] + 0.5 * h * k[0][q];
        }
        let d2 = self.eval(t + 0.5 * h, &y, &mut k[1])?;
        for q in 0..d {
            y[q] = x[q] + 0.5 * h * k[1][q];
        }
        let d3 = self.eval(t + 0.5 * h, &y, &mut k[2])?;
        for q in 0..d {
            y[q] = x[q] + h * k[2][q];
        }
        let d4 = self.eval(t + h, &y, &mut k[3])?;
        for q in 0..d {
            x[q] += h / 6.0 * (k[0][q] + 2.0 * k[1][q] + 2.0 * k[2][q] + k[3][q]);
        }
        let div = h / 6.0 * (d1 + 2.0 * d2 + 2.0 * d3 + d4);
        if !div.is_finite() || x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence {
                t: t + h,
                sample: None,
            });
        }
        Ok(div)
    }
}

/// `log α₀(x(0)) − ∫₀ᵗ div f(s, x(s)) ds`, where `x(·)` solves `x' = f` with
/// `x(t) = x`. On a torus `α₀` is folded onto the box.
pub fn recover_log_density(
    field: &dyn VelocityField,
    init: &GaussianInitial,
    domain: &DomainMode,
    t: f64,
    x: &[f64],
    dt: f64,
) -> Result<f64> {
    let d = init.dim();
    if field.dim() != d || domain.dim() != d || x.len() != d {
        return Err(Error::InvalidSpec("dimension mismatch in density recovery".into()));
    }
    let n = whole_steps(t, dt)?;
    let flow = Flow::new(field);
    let mut y = x.to_vec();
    let mut integral = 0.0;
    for j in (1..=n).rev() {
        // stepping backwards: the RK4 weights give −∫ over [t_{j−1}, t_j]
        integral -= flow.step(j as f64 * dt, -dt, &mut y)?;
    }
    Ok(log_initial(init, domain, &y) - integral)
}

/// `X(t, x₀)` by forward RK4.
pub fn push_forward(field: &dyn VelocityField, t: f64, x0: &[f64], dt: f64) -> Result<Vec<f64>> {
    let n = whole_steps(t, dt)?;
    let flow = Flow::new(field);
    let mut x = x0.to_vec();
    for j in 0..n {
        flow.step(j as f64 * dt, dt, &mut x)?;
    }
    Ok(x)
}

fn stamp_indices(path: &GaussianPath, grid: &EvalGrid) -> Result<Vec<usize>> {
    grid.stamps().iter().map(|&t| path.stamp(t)).collect()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// `ℓ_s` per stamp and its average: the grid mean of
/// `‖f(t, x) + ∇log α(t, x) + ∇V(x)‖²`.
pub fn score_error_ls<E: Executor + ?Sized>(
    exec: &E,
    field: &dyn VelocityField,
    path: &GaussianPath,
    pot: &dyn DriftPotential,
    grid: &EvalGrid,
) -> Result<(f64, Vec<f64>)> {
    let d = grid.dim();
    if field.dim() != d || path.dim() != d || pot.dim() != d {
        return Err(Error::InvalidSpec("dimension mismatch in score error".into()));
    }
    let ks = stamp_indices(path, grid)?;
    let mut per_stamp = Vec::with_capacity(ks.len());
    for (&t, &k) in grid.stamps().iter().zip(&ks) {
        let vals = exec.map(grid.n_points(), |i| -> Result<f64> {
            let x = grid.point(i);
            let mut f = vec![0.0; d];
            let mut s = vec![0.0; d];
            let mut g = vec![0.0; d];
            field.eval(t, &x, &mut f)?;
            path.score_at(k, &x, &mut s);
            pot.grad(&x, &mut g);
            Ok((0..d).map(|q| (f[q] + s[q] + g[q]) * (f[q] + s[q] + g[q])).sum())
        });
        let vals: Vec<f64> = vals.into_iter().collect::<Result<_>>()?;
        per_stamp.push(mean(&vals));
    }
    Ok((mean(&per_stamp), per_stamp))
}

/// `ℓ_d` per stamp and its average: the grid mean of `|α(t, x) − ρ(t, x)|`,
/// with `rho(stamp index, x)`.
pub fn density_error_ld<E, R>(exec: &E, rho: &R, path: &GaussianPath, grid: &EvalGrid) -> Result<(f64, Vec<f64>)>
where
    E: Executor + ?Sized,
    R: Fn(usize, &[f64]) -> Result<f64> + Sync,
{
    let ks = stamp_indices(path, grid)?;
    let mut per_stamp = Vec::with_capacity(ks.len());
    for (s, &k) in ks.iter().enumerate() {
        let vals = exec.map(grid.n_points(), |i| -> Result<f64> {
            let x = grid.point(i);
            let alpha = libm::exp(path.log_density_at(k, &x));
            Ok(libm::fabs(alpha - rho(s, &x)?))
        });
        let vals: Vec<f64> = vals.into_iter().collect::<Result<_>>()?;
        per_stamp.push(mean(&vals));
    }
    Ok((mean(&per_stamp), per_stamp))
}

/// Recovered log-density at every grid point for stamp `t`.
pub fn recover_on_grid<E: Executor + ?Sized>(
    exec: &E,
    field: &dyn VelocityField,
    init: &GaussianInitial,
    grid: &EvalGrid,
    t: f64,
    dt: f64,
) -> Result<Vec<f64>> {
    let domain = DomainMode::free(grid.dim())?;
    exec.map(grid.n_points(), |i| {
        recover_log_density(field, init, &domain, t, &grid.point(i), dt).map_err(|e| e.with_sample(i))
    })
    .into_iter()
    .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StampReport {
    pub t: f64,
    pub ls: f64,
    pub ld: f64,
    /// Riemann sum of the recovered density over the grid.
    pub mass: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub grid_h: f64,
    pub dt: f64,
    pub t_end: f64,
    pub stamps: Vec<StampReport>,
    pub ls: f64,
    pub ld: f64,
}

/// Both metrics and the recovered mass at every stamp of `grid`, recovering
/// densities with step `dt`.
pub fn evaluate<E: Executor + ?Sized>(
    exec: &E,
    field: &dyn VelocityField,
    path: &GaussianPath,
    pot: &dyn DriftPotential,
    init: &GaussianInitial,
    grid: &EvalGrid,
    dt: f64,
) -> Result<EvalReport> {
    let (ls, ls_stamps) = score_error_ls(exec, field, path, pot, grid)?;
    let ks = stamp_indices(path, grid)?;
    let mut stamps = Vec::with_capacity(ks.len());
    for (s, &k) in ks.iter().enumerate() {
        let t = grid.stamps()[s];
        let logs = recover_on_grid(exec, field, init, grid, t, dt)?;
        let mut mass = 0.0;
        let mut err = 0.0;
        for (i, l) in logs.iter().enumerate() {
            let rho = libm::exp(*l);
            mass += rho;
            err += libm::fabs(libm::exp(path.log_density_at(k, &grid.point(i))) - rho);
        }
        stamps.push(StampReport {
            t,
            ls: ls_stamps[s],
            ld: err / logs.len() as f64,
            mass: mass * grid.cell_volume(),
        });
    }
    let ld = stamps.iter().map(|s| s.ld).sum::<f64>() / stamps.len() as f64;
    Ok(EvalReport {
        grid_h: grid.h(),
        dt,
        t_end: path.t_end(),
        stamps,
        ls,
        ld,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lemma1 {
    /// Quadrature of `g` against the recovered density on the box.
    pub lhs: f64,
    /// Monte Carlo mean of `g(X(t, x₀))`.
    pub rhs: f64,
    pub standard_error: f64,
    /// `(lhs − rhs) / standard_error`; `None` when the error is zero.
    pub z: Option<f64>,
}

/// Compare `∫ g d(X♯α₀)` computed by density recovery on an `m`-per-axis
/// periodic grid with the Monte Carlo mean of `g ∘ X` over `n` samples.
#[allow(clippy::too_many_arguments)]
pub fn lemma1_check<E, G>(
    exec: &E,
    field: &dyn VelocityField,
    g: &G,
    init: &GaussianInitial,
    domain: &DomainMode,
    t: f64,
    n: usize,
    seed: u64,
    dt: f64,
    m: usize,
) -> Result<Lemma1>
where
    E: Executor + ?Sized,
    G: Fn(&[f64]) -> f64 + Sync,
{
    let side = domain.side().ok_or(Error::ModeMismatch("push-forward check needs a torus"))?;
    let d = domain.dim();
    if n < 2 || m == 0 {
        return Err(Error::InvalidSpec("need at least two samples and one grid node".into()));
    }
    let h = side / m as f64;
    let total = m.pow(d as u32);
    let quad = exec.map(total, |mut i| -> Result<f64> {
        let mut x = vec![0.0; d];
        for q in (0..d).rev() {
            x[q] = -0.5 * side + (i % m) as f64 * h;
            i /= m;
        }
        let l = recover_log_density(field, init, domain, t, &x, dt)?;
        Ok(g(&x) * libm::exp(l))
    });
    let quad: Vec<f64> = quad.into_iter().collect::<Result<_>>()?;
    let lhs = quad.iter().sum::<f64>() * libm::pow(h, d as f64);
    let mc = exec.map(n, |i| -> Result<f64> {
        let x0 = sampling::sample_initial(init, &mut sampling::stream(seed, i as u64));
        let x = push_forward(field, t, &x0, dt).map_err(|e| e.with_sample(i))?;
        let w: Vec<f64> = x.iter().map(|&v| wrap_scalar(side, v)).collect();
        Ok(g(&w))
    });
    let mc: Vec<f64> = mc.into_iter().collect::<Result<_>>()?;
    let (rhs, se) = mean_and_se(&mc);
    let se = se.unwrap_or(0.0);
    let z = (se > 0.0).then(|| (lhs - rhs) / se);
    Ok(Lemma1 {
        lhs,
        rhs,
        standard_error: se,
        z,
    })
}
