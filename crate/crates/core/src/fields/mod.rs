//! Velocity fields and drift potentials, evaluated together with their spatial
//! partial derivatives.

mod mlp;
mod potential;

pub use mlp::{Embedding, JetTape, MlpField, TimeMode};
pub use potential::{DriftPotential, PotentialJet, QuadraticPotential};

use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::jets::JetLayout;
use crate::linalg::Matrix;

/// Highest spatial derivative order any field evaluation supports.
pub const MAX_ORDER: usize = 5;

pub(crate) fn check_order(layout: &JetLayout) -> Result<()> {
    if layout.degree() > MAX_ORDER {
        Err(Error::UnsupportedOrder {
            requested: layout.degree(),
            max: MAX_ORDER,
        })
    } else {
        Ok(())
    }
}

/// Value and spatial partials of a velocity field at one `(t, x)`.
///
/// Entries are stored per output component in the graded multi-index order
/// of [`JetLayout`], already scaled to derivatives (`∂ᵃfᵢ`, not Taylor
/// coefficients). Divergence partials `∂ᵃ div f` are kept for `‖a‖₁ ≤ K − 1`.
#[derive(Debug, Clone)]
pub struct FieldJet {
    layout: Arc<JetLayout>,
    derivs: Vec<f64>,
    div: Vec<f64>,
}

impl FieldJet {
    /// Build from per-component Taylor coefficients (`dim × layout.len()`).
    pub fn from_taylor(layout: &Arc<JetLayout>, coeffs: &[f64]) -> Self {
        let len = layout.len();
        let dim = layout.dim();
        debug_assert_eq!(coeffs.len(), dim * len);
        let mut derivs = vec![0.0; dim * len];
        for i in 0..dim {
            for idx in 0..len {
                derivs[i * len + idx] = coeffs[i * len + idx] * layout.factorial(idx);
            }
        }
        Self::from_derivs(layout, derivs)
    }

    /// Build from per-component derivatives; divergence partials are derived.
    pub fn from_derivs(layout: &Arc<JetLayout>, derivs: Vec<f64>) -> Self {
        let len = layout.len();
        let dim = layout.dim();
        let k = layout.degree();
        let div_len = if k == 0 { 0 } else { layout.len_upto(k - 1) };
        let mut div = vec![0.0; div_len];
        for (a, d) in div.iter_mut().enumerate() {
            for i in 0..dim {
                let s = layout.succ(a, i) as usize;
                *d += derivs[i * len + s];
            }
        }
        FieldJet {
            layout: Arc::clone(layout),
            derivs,
            div,
        }
    }

    pub fn layout(&self) -> &Arc<JetLayout> {
        &self.layout
    }

    pub fn order(&self) -> usize {
        self.layout.degree()
    }

    pub fn dim(&self) -> usize {
        self.layout.dim()
    }

    /// `f(t, x)`.
    pub fn value(&self) -> Vec<f64> {
        let len = self.layout.len();
        (0..self.dim()).map(|i| self.derivs[i * len]).collect()
    }

    /// All derivatives of component `i`, indexed by flat multi-index.
    #[inline]
    pub fn component(&self, i: usize) -> &[f64] {
        let len = self.layout.len();
        &self.derivs[i * len..(i + 1) * len]
    }

    /// `dim × layout.len()` derivative table.
    pub fn derivs(&self) -> &[f64] {
        &self.derivs
    }

    /// Divergence partials indexed by flat multi-index (`‖a‖₁ ≤ K − 1`).
    pub fn div_derivs(&self) -> &[f64] {
        &self.div
    }

    /// `∂ᵃ fᵢ`.
    pub fn partial(&self, i: usize, a: &[usize]) -> Result<f64> {
        let idx = self.lookup(a, self.order())?;
        Ok(self.component(i)[idx])
    }

    /// `∂ᵃ div f`.
    pub fn div_partial(&self, a: &[usize]) -> Result<f64> {
        if self.order() == 0 {
            return Err(Error::OrderExceeded {
                requested: a.iter().sum::<usize>() + 1,
                available: 0,
            });
        }
        let idx = self.lookup(a, self.order() - 1)?;
        Ok(self.div[idx])
    }

    fn lookup(&self, a: &[usize], max: usize) -> Result<usize> {
        let n: usize = a.iter().sum();
        if n > max {
            return Err(Error::OrderExceeded {
                requested: n,
                available: max,
            });
        }
        self.layout
            .index_of(a)
            .ok_or_else(|| Error::InvalidSpec(alloc::format!("bad multi-index {a:?}")))
    }
}

/// A time-dependent velocity field `f(t, x)` on ℝᵈ.
pub trait VelocityField: Sync {
    fn dim(&self) -> usize;

    /// Value and all spatial partials up to `layout.degree()` (≤ 5).
    fn eval_jet(&self, layout: &Arc<JetLayout>, t: f64, x: &[f64]) -> Result<FieldJet>;

    /// `f(t, x)` into `out`.
    fn eval(&self, t: f64, x: &[f64], out: &mut [f64]) -> Result<()> {
        let layout = Arc::new(JetLayout::new(self.dim(), 0));
        let jet = self.eval_jet(&layout, t, x)?;
        out.copy_from_slice(&jet.value());
        Ok(())
    }

    /// `f(t, x)` into `out`, returning `div f(t, x)`.
    fn eval_with_div(&self, t: f64, x: &[f64], out: &mut [f64]) -> Result<f64> {
        let layout = Arc::new(JetLayout::new(self.dim(), 1));
        let jet = self.eval_jet(&layout, t, x)?;
        out.copy_from_slice(&jet.value());
        Ok(jet.div_derivs()[0])
    }

    /// Trainable parameterization, if any.
    fn as_mlp(&self) -> Option<&MlpField> {
        None
    }
}

impl<F: VelocityField + ?Sized> VelocityField for &F {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn eval_jet(&self, layout: &Arc<JetLayout>, t: f64, x: &[f64]) -> Result<FieldJet> {
        (**self).eval_jet(layout, t, x)
    }
    fn eval(&self, t: f64, x: &[f64], out: &mut [f64]) -> Result<()> {
        (**self).eval(t, x, out)
    }
    fn eval_with_div(&self, t: f64, x: &[f64], out: &mut [f64]) -> Result<f64> {
        (**self).eval_with_div(t, x, out)
    }
    fn as_mlp(&self) -> Option<&MlpField> {
        (**self).as_mlp()
    }
}

/// Gradient of every [`FieldJet`] entry with respect to the field parameters.
#[derive(Debug, Clone)]
pub struct ParamJacobian {
    layout: Arc<JetLayout>,
    n_params: usize,
    // (dim × len) rows of n_params, then div rows
    rows: Vec<f64>,
    div_rows: Vec<f64>,
}

impl ParamJacobian {
    pub fn n_params(&self) -> usize {
        self.n_params
    }

    /// `∂(∂ᵃfᵢ)/∂θ`.
    pub fn partial(&self, i: usize, a: &[usize]) -> Result<&[f64]> {
        let idx = self
            .layout
            .index_of(a)
            .ok_or(Error::OrderExceeded {
                requested: a.iter().sum(),
                available: self.layout.degree(),
            })?;
        let row = i * self.layout.len() + idx;
        Ok(&self.rows[row * self.n_params..(row + 1) * self.n_params])
    }

    /// `∂(∂ᵃ div f)/∂θ`.
    pub fn div_partial(&self, a: &[usize]) -> Result<&[f64]> {
        let n: usize = a.iter().sum();
        if self.layout.degree() == 0 || n + 1 > self.layout.degree() {
            return Err(Error::OrderExceeded {
                requested: n + 1,
                available: self.layout.degree(),
            });
        }
        let idx = self.layout.index_of(a).expect("checked order");
        Ok(&self.div_rows[idx * self.n_params..(idx + 1) * self.n_params])
    }
}

/// Exact parameter gradients of every jet entry, by reverse sweeps over the
/// recorded jet computation (one sweep per entry).
pub fn param_grad_jet(
    field: &dyn VelocityField,
    layout: &Arc<JetLayout>,
    t: f64,
    x: &[f64],
) -> Result<ParamJacobian> {
    let mlp = field.as_mlp().ok_or(Error::NotTrainable)?;
    check_order(layout)?;
    let (_, tape) = mlp.eval_jet_taped(layout, t, x)?;
    let len = layout.len();
    let dim = layout.dim();
    let n = mlp.n_params();
    let mut rows = vec![0.0; dim * len * n];
    let mut cot = vec![0.0; dim * len];
    for i in 0..dim {
        for idx in 0..len {
            cot.fill(0.0);
            // derivative entry = factorial × coefficient
            cot[i * len + idx] = layout.factorial(idx);
            let row = i * len + idx;
            mlp.jet_vjp(&tape, &cot, &mut rows[row * n..(row + 1) * n]);
        }
    }
    let k = layout.degree();
    let div_len = if k == 0 { 0 } else { layout.len_upto(k - 1) };
    let mut div_rows = vec![0.0; div_len * n];
    for a in 0..div_len {
        for i in 0..dim {
            let s = layout.succ(a, i) as usize;
            let src = (i * len + s) * n;
            for p in 0..n {
                div_rows[a * n + p] += rows[src + p];
            }
        }
    }
    Ok(ParamJacobian {
        layout: Arc::clone(layout),
        n_params: n,
        rows,
        div_rows,
    })
}

/// `f(t, x) = c`.
#[derive(Debug, Clone)]
pub struct ConstantField {
    value: Vec<f64>,
}

impl ConstantField {
    pub fn new(value: Vec<f64>) -> Self {
        ConstantField { value }
    }
}

impl VelocityField for ConstantField {
    fn dim(&self) -> usize {
        self.value.len()
    }

    fn eval_jet(&self, layout: &Arc<JetLayout>, _t: f64, _x: &[f64]) -> Result<FieldJet> {
        check_order(layout)?;
        let len = layout.len();
        let mut derivs = vec![0.0; self.value.len() * len];
        for (i, v) in self.value.iter().enumerate() {
            derivs[i * len] = *v;
        }
        Ok(FieldJet::from_derivs(layout, derivs))
    }

    fn eval(&self, _t: f64, _x: &[f64], out: &mut [f64]) -> Result<()> {
        out.copy_from_slice(&self.value);
        Ok(())
    }

    fn eval_with_div(&self, _t: f64, _x: &[f64], out: &mut [f64]) -> Result<f64> {
        out.copy_from_slice(&self.value);
        Ok(0.0)
    }
}

/// `f(t, x) = A x + b`, time independent.
#[derive(Debug, Clone)]
pub struct AffineField {
    a: Matrix,
    b: Vec<f64>,
}

impl AffineField {
    pub fn new(a: Matrix, b: Vec<f64>) -> Result<Self> {
        if !a.is_square() || a.nrows() != b.len() {
            return Err(Error::InvalidField("affine field shape mismatch".into()));
        }
        Ok(AffineField { a, b })
    }

    /// The planar rotation `f(x) = (−x₂, x₁)`; divergence free.
    pub fn rotation() -> Self {
        AffineField {
            a: Matrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0]),
            b: vec![0.0, 0.0],
        }
    }
}

impl VelocityField for AffineField {
    fn dim(&self) -> usize {
        self.b.len()
    }

    fn eval_jet(&self, layout: &Arc<JetLayout>, _t: f64, x: &[f64]) -> Result<FieldJet> {
        check_order(layout)?;
        let d = self.dim();
        let len = layout.len();
        let mut derivs = vec![0.0; d * len];
        for i in 0..d {
            derivs[i * len] = self.b[i] + (0..d).map(|j| self.a[(i, j)] * x[j]).sum::<f64>();
            if layout.degree() >= 1 {
                for j in 0..d {
                    derivs[i * len + layout.unit(j)] = self.a[(i, j)];
                }
            }
        }
        Ok(FieldJet::from_derivs(layout, derivs))
    }

    fn eval(&self, _t: f64, x: &[f64], out: &mut [f64]) -> Result<()> {
        let d = self.dim();
        for i in 0..d {
            out[i] = self.b[i] + (0..d).map(|j| self.a[(i, j)] * x[j]).sum::<f64>();
        }
        Ok(())
    }

    fn eval_with_div(&self, t: f64, x: &[f64], out: &mut [f64]) -> Result<f64> {
        self.eval(t, x, out)?;
        Ok(self.a.trace())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_field_jet() {
        let layout = Arc::new(JetLayout::new(2, 4));
        let f = ConstantField::new(vec![1.5, -2.0]);
        let j = f.eval_jet(&layout, 0.3, &[1.0, 2.0]).unwrap();
        assert_eq!(j.value(), vec![1.5, -2.0]);
        for i in 0..2 {
            assert!(j.component(i)[1..].iter().all(|&v| v == 0.0));
        }
        assert!(j.div_derivs().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn affine_field_jet() {
        let layout = Arc::new(JetLayout::new(2, 3));
        let a = Matrix::from_row_slice(2, 2, &[1.0, 2.0, -3.0, 0.5]);
        let f = AffineField::new(a, vec![0.1, 0.2]).unwrap();
        let j = f.eval_jet(&layout, 0.0, &[1.0, -1.0]).unwrap();
        let v = j.value();
        approx::assert_relative_eq!(v[0], -0.9, epsilon = 1e-15);
        approx::assert_relative_eq!(v[1], -3.3, epsilon = 1e-15);
        assert_eq!(j.partial(0, &[1, 0]).unwrap(), 1.0);
        assert_eq!(j.partial(0, &[0, 1]).unwrap(), 2.0);
        assert_eq!(j.partial(1, &[1, 0]).unwrap(), -3.0);
        assert_eq!(j.partial(1, &[0, 1]).unwrap(), 0.5);
        assert_eq!(j.partial(1, &[2, 1]).unwrap(), 0.0);
        assert_eq!(j.div_partial(&[0, 0]).unwrap(), 1.5);
        assert_eq!(j.div_partial(&[1, 0]).unwrap(), 0.0);
        assert!(j.div_partial(&[2, 1]).is_err());
        assert!(j.partial(0, &[3, 1]).is_err());
    }

    #[test]
    fn order_limit() {
        let layout = Arc::new(JetLayout::new(2, 6));
        let f = ConstantField::new(vec![0.0, 0.0]);
        assert!(matches!(
            f.eval_jet(&layout, 0.0, &[0.0, 0.0]),
            Err(Error::UnsupportedOrder { requested: 6, max: 5 })
        ));
    }

    #[test]
    fn non_trainable_fields_refuse_param_gradients() {
        let layout = Arc::new(JetLayout::new(2, 2));
        let f = ConstantField::new(vec![0.0, 0.0]);
        assert!(matches!(
            param_grad_jet(&f, &layout, 0.0, &[0.0, 0.0]),
            Err(Error::NotTrainable)
        ));
    }
}
