//! Truncated multivariate Taylor polynomials (Taylor-mode forward
//! differentiation).
//!
//! A [`TruncatedTaylor`] of degree `K` in `dim` variables stores the
//! coefficients `∂ᵃφ(x₀) / a!` for every multi-index `‖a‖₁ ≤ K` densely, in
//! graded order: all degree-0 terms, then degree 1, and so on; within one
//! degree, exponent tuples are ordered lexicographically with the larger
//! leading exponent first. For two variables and `K = 2` that is
//!
//! ```text
//! (0,0) (1,0) (0,1) (2,0) (1,1) (0,2)
//! ```
//!
//! Because the ordering is graded, the layout of degree `K` is a prefix of the
//! layout of every higher degree, so a flat index means the same multi-index
//! regardless of truncation order.
//!
//! The slice kernels ([`mul_acc`], [`mul_transpose_acc`], [`compose_into`])
//! are what the field evaluators run on their hot paths; the
//! [`TruncatedTaylor`] value type wraps them with shape checking.

use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Marker for "no such multi-index within the layout".
pub const NONE: u32 = u32::MAX;

/// Index tables for dense jets of a given dimension and degree.
#[derive(Debug, Clone)]
pub struct JetLayout {
    dim: usize,
    degree: usize,
    exps: Vec<u8>,
    totals: Vec<u8>,
    factorials: Vec<f64>,
    degree_offsets: Vec<usize>,
    lookup: Vec<u32>,
    succ: Vec<u32>,
    // (i, j, i+j) for every pair with total degree ≤ K.
    products: Vec<(u16, u16, u16)>,
    // Same, restricted to i ≠ 0 (first factor without constant term).
    products_nc: Vec<(u16, u16, u16)>,
}

/// `n choose k` as a float (exact for the small arguments used here).
pub fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    let mut acc = 1.0;
    for i in 0..k {
        acc = acc * (n - i) as f64 / (i + 1) as f64;
    }
    acc
}

fn factorial(n: usize) -> f64 {
    (1..=n).fold(1.0, |acc, k| acc * k as f64)
}

/// Number of monomials in `dim` variables of total degree ≤ `degree`.
pub fn jet_len(dim: usize, degree: usize) -> usize {
    binomial(degree + dim, dim) as usize
}

fn push_compositions(dim: usize, remaining: usize, prefix: &mut Vec<u8>, out: &mut Vec<u8>) {
    if prefix.len() + 1 == dim {
        prefix.push(remaining as u8);
        out.extend_from_slice(prefix);
        prefix.pop();
        return;
    }
    for lead in (0..=remaining).rev() {
        prefix.push(lead as u8);
        push_compositions(dim, remaining - lead, prefix, out);
        prefix.pop();
    }
}

impl JetLayout {
    pub fn new(dim: usize, degree: usize) -> Self {
        assert!(dim >= 1, "jet dimension must be positive");
        assert!(degree <= 12, "jet degree {degree} is unreasonably large");
        let mut exps = Vec::new();
        let mut degree_offsets = Vec::with_capacity(degree + 2);
        for n in 0..=degree {
            degree_offsets.push(exps.len() / dim);
            push_compositions(dim, n, &mut Vec::with_capacity(dim), &mut exps);
        }
        let len = exps.len() / dim;
        degree_offsets.push(len);
        assert!(len < u16::MAX as usize, "jet layout too large");

        let radix = degree + 1;
        let mut lookup = vec![NONE; radix.pow(dim as u32)];
        let mut totals = Vec::with_capacity(len);
        let mut factorials = Vec::with_capacity(len);
        for idx in 0..len {
            let a = &exps[idx * dim..(idx + 1) * dim];
            let key = a.iter().fold(0usize, |acc, &e| acc * radix + e as usize);
            lookup[key] = idx as u32;
            totals.push(a.iter().map(|&e| e as u32).sum::<u32>() as u8);
            factorials.push(a.iter().map(|&e| factorial(e as usize)).product());
        }

        let mut layout = JetLayout {
            dim,
            degree,
            exps,
            totals,
            factorials,
            degree_offsets,
            lookup,
            succ: Vec::new(),
            products: Vec::new(),
            products_nc: Vec::new(),
        };

        let mut succ = vec![NONE; len * dim];
        let mut scratch = vec![0usize; dim];
        for idx in 0..len {
            for m in 0..dim {
                for (s, &e) in scratch.iter_mut().zip(layout.exponents(idx)) {
                    *s = e as usize;
                }
                scratch[m] += 1;
                succ[idx * dim + m] = layout.index_of(&scratch).map_or(NONE, |j| j as u32);
            }
        }
        layout.succ = succ;

        let mut products = Vec::new();
        for i in 0..len {
            for j in 0..len {
                if layout.totals[i] as usize + layout.totals[j] as usize > degree {
                    continue;
                }
                for (s, (&ei, &ej)) in scratch
                    .iter_mut()
                    .zip(layout.exponents(i).iter().zip(layout.exponents(j)))
                {
                    *s = (ei + ej) as usize;
                }
                let k = layout.index_of(&scratch).expect("sum within degree");
                products.push((i as u16, j as u16, k as u16));
            }
        }
        // Group by output index so the kernels stream through `out`.
        products.sort_by_key(|&(i, j, k)| (k, i, j));
        layout.products_nc = products.iter().copied().filter(|p| p.0 != 0).collect();
        layout.products = products;
        layout
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    /// Number of stored coefficients, `C(K + dim, dim)`.
    pub fn len(&self) -> usize {
        self.totals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.totals.is_empty()
    }

    pub fn exponents(&self, idx: usize) -> &[u8] {
        &self.exps[idx * self.dim..(idx + 1) * self.dim]
    }

    /// Total degree `‖a‖₁` of the multi-index at `idx`.
    pub fn order_of(&self, idx: usize) -> usize {
        self.totals[idx] as usize
    }

    /// `a!` for the multi-index at `idx`.
    pub fn factorial(&self, idx: usize) -> f64 {
        self.factorials[idx]
    }

    /// Index range of all multi-indices of exactly total degree `n`.
    pub fn degree_range(&self, n: usize) -> core::ops::Range<usize> {
        self.degree_offsets[n]..self.degree_offsets[n + 1]
    }

    /// Number of multi-indices with total degree ≤ `n` (`n ≤ K`).
    pub fn len_upto(&self, n: usize) -> usize {
        self.degree_offsets[n + 1]
    }

    pub fn index_of(&self, a: &[usize]) -> Option<usize> {
        if a.len() != self.dim || a.iter().sum::<usize>() > self.degree {
            return None;
        }
        let radix = self.degree + 1;
        let key = a.iter().fold(0usize, |acc, &e| acc * radix + e);
        match self.lookup[key] {
            NONE => None,
            idx => Some(idx as usize),
        }
    }

    /// Index of `a + e_m`, or [`NONE`] if that exceeds the degree.
    #[inline]
    pub fn succ(&self, idx: usize, m: usize) -> u32 {
        self.succ[idx * self.dim + m]
    }

    /// Index of the unit multi-index `e_m`.
    #[inline]
    pub fn unit(&self, m: usize) -> usize {
        debug_assert!(self.degree >= 1);
        1 + m
    }

    /// All `(i, j, i + j)` index triples with total degree ≤ K.
    pub fn products(&self) -> &[(u16, u16, u16)] {
        &self.products
    }

    /// [`JetLayout::products`] without the pairs whose first factor is the
    /// constant term.
    pub fn products_nc(&self) -> &[(u16, u16, u16)] {
        &self.products_nc
    }

    fn same_shape(&self, other: &JetLayout) -> bool {
        self.dim == other.dim && self.degree == other.degree
    }
}

/// Analytic scalar functions that can be composed with a jet.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Series {
    Tanh,
    Exp,
    Sin,
    Cos,
    Reciprocal,
}

impl Series {
    pub fn name(self) -> &'static str {
        match self {
            Series::Tanh => "tanh",
            Series::Exp => "exp",
            Series::Sin => "sin",
            Series::Cos => "cos",
            Series::Reciprocal => "reciprocal",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Some(match name {
            "tanh" => Series::Tanh,
            "exp" => Series::Exp,
            "sin" => Series::Sin,
            "cos" => Series::Cos,
            "reciprocal" => Series::Reciprocal,
            _ => return None,
        })
    }

    /// Scalar evaluation.
    pub fn eval(self, u: f64) -> f64 {
        match self {
            Series::Tanh => libm::tanh(u),
            Series::Exp => libm::exp(u),
            Series::Sin => libm::sin(u),
            Series::Cos => libm::cos(u),
            Series::Reciprocal => 1.0 / u,
        }
    }

    /// Fill `out[k] = φ⁽ᵏ⁾(u0) / k!` for `k = 0..out.len()`.
    pub fn taylor_coefficients(self, u0: f64, out: &mut [f64]) -> Result<()> {
        let n = out.len();
        if n == 0 {
            return Ok(());
        }
        match self {
            Series::Tanh => {
                // y' = 1 - y²
                out[0] = libm::tanh(u0);
                for k in 0..n - 1 {
                    let mut conv = 0.0;
                    for i in 0..=k {
                        conv += out[i] * out[k - i];
                    }
                    let rhs = if k == 0 { 1.0 - conv } else { -conv };
                    out[k + 1] = rhs / (k + 1) as f64;
                }
            }
            Series::Exp => {
                let e = libm::exp(u0);
                let mut fact = 1.0;
                for (k, c) in out.iter_mut().enumerate() {
                    if k > 0 {
                        fact *= k as f64;
                    }
                    *c = e / fact;
                }
            }
            Series::Sin | Series::Cos => {
                let (s, c) = (libm::sin(u0), libm::cos(u0));
                let cycle = if self == Series::Sin {
                    [s, c, -s, -c]
                } else {
                    [c, -s, -c, s]
                };
                let mut fact = 1.0;
                for (k, o) in out.iter_mut().enumerate() {
                    if k > 0 {
                        fact *= k as f64;
                    }
                    *o = cycle[k % 4] / fact;
                }
            }
            Series::Reciprocal => {
                if u0 == 0.0 {
                    return Err(Error::Singularity);
                }
                let inv = 1.0 / u0;
                let mut term = inv;
                for o in out.iter_mut() {
                    *o = term;
                    term *= -inv;
                }
            }
        }
        Ok(())
    }
}

/// `out += a · b`, truncated.
#[inline]
pub fn mul_acc(layout: &JetLayout, a: &[f64], b: &[f64], out: &mut [f64]) {
    for &(i, j, k) in &layout.products {
        out[k as usize] += a[i as usize] * b[j as usize];
    }
}

/// `out += a · b` where `a` has zero constant term.
#[inline]
fn mul_nc_acc(layout: &JetLayout, a: &[f64], b: &[f64], out: &mut [f64]) {
    for &(i, j, k) in &layout.products_nc {
        out[k as usize] += a[i as usize] * b[j as usize];
    }
}

/// Transpose of `y ↦ p · y`: `cot_in[j] += Σ_{i} cot_out[i + j] · p[i]`.
#[inline]
pub fn mul_transpose_acc(layout: &JetLayout, cot_out: &[f64], p: &[f64], cot_in: &mut [f64]) {
    for &(i, j, k) in &layout.products {
        cot_in[j as usize] += cot_out[k as usize] * p[i as usize];
    }
}

/// `out = series ∘ u` (degree-K truncation), by Horner evaluation of the
/// univariate Taylor expansion of `series` around `u[0]` in powers of `u - u[0]`.
///
/// `coeffs` and `scratch` are caller-provided buffers of length ≥ K+1 and
/// `layout.len()` respectively.
pub fn compose_into(
    layout: &JetLayout,
    series: Series,
    u: &[f64],
    out: &mut [f64],
    coeffs: &mut [f64],
    scratch: &mut [f64],
) -> Result<()> {
    let k_max = layout.degree;
    let coeffs = &mut coeffs[..k_max + 1];
    series.taylor_coefficients(u[0], coeffs)?;
    out.fill(0.0);
    out[0] = coeffs[k_max];
    for k in (0..k_max).rev() {
        scratch.fill(0.0);
        mul_nc_acc(layout, u, out, scratch);
        out.copy_from_slice(scratch);
        out[0] += coeffs[k];
    }
    Ok(())
}

/// `out = φ'(u)` as a jet, given `y = φ(u)` already computed. This is the
/// multiplier for differentiating through [`compose_into`]: `dy = φ'(u) · du`.
pub fn series_derivative_into(
    layout: &JetLayout,
    series: Series,
    u: &[f64],
    y: &[f64],
    out: &mut [f64],
    coeffs: &mut [f64],
    scratch: &mut [f64],
) -> Result<()> {
    match series {
        Series::Tanh | Series::Reciprocal => {
            out.fill(0.0);
            mul_acc(layout, y, y, out);
            if series == Series::Tanh {
                for o in out.iter_mut() {
                    *o = -*o;
                }
                out[0] += 1.0;
            } else {
                for o in out.iter_mut() {
                    *o = -*o;
                }
            }
            Ok(())
        }
        Series::Exp => {
            out.copy_from_slice(y);
            Ok(())
        }
        Series::Sin => compose_into(layout, Series::Cos, u, out, coeffs, scratch),
        Series::Cos => {
            compose_into(layout, Series::Sin, u, out, coeffs, scratch)?;
            for o in out.iter_mut() {
                *o = -*o;
            }
            Ok(())
        }
    }
}

/// A dense multivariate truncated Taylor polynomial.
#[derive(Debug, Clone)]
pub struct TruncatedTaylor {
    layout: Arc<JetLayout>,
    coeffs: Vec<f64>,
}

impl PartialEq for TruncatedTaylor {
    fn eq(&self, other: &Self) -> bool {
        self.layout.same_shape(&other.layout) && self.coeffs == other.coeffs
    }
}

impl TruncatedTaylor {
    pub fn zeros(layout: &Arc<JetLayout>) -> Self {
        TruncatedTaylor {
            layout: Arc::clone(layout),
            coeffs: vec![0.0; layout.len()],
        }
    }

    pub fn constant(layout: &Arc<JetLayout>, value: f64) -> Self {
        let mut t = Self::zeros(layout);
        t.coeffs[0] = value;
        t
    }

    /// Build from raw graded-order coefficients.
    pub fn from_coeffs(layout: &Arc<JetLayout>, coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.len() != layout.len() {
            return Err(Error::InvalidSpec(alloc::format!(
                "expected {} coefficients, got {}",
                layout.len(),
                coeffs.len()
            )));
        }
        Ok(TruncatedTaylor {
            layout: Arc::clone(layout),
            coeffs,
        })
    }

    /// The coordinate function `x ↦ x_i` expanded at a point whose i-th
    /// coordinate is `x0_i`.
    pub fn seed_variable(layout: &Arc<JetLayout>, i: usize, x0_i: f64) -> Result<Self> {
        if i >= layout.dim() {
            return Err(Error::InvalidSpec(alloc::format!(
                "variable {i} out of range for dimension {}",
                layout.dim()
            )));
        }
        let mut t = Self::constant(layout, x0_i);
        if layout.degree() >= 1 {
            t.coeffs[layout.unit(i)] = 1.0;
        }
        Ok(t)
    }

    pub fn layout(&self) -> &Arc<JetLayout> {
        &self.layout
    }

    pub fn dim(&self) -> usize {
        self.layout.dim()
    }

    pub fn degree(&self) -> usize {
        self.layout.degree()
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    /// Coefficient of the multi-index `a` (zero if above the degree).
    pub fn coeff(&self, a: &[usize]) -> f64 {
        self.layout.index_of(a).map_or(0.0, |i| self.coeffs[i])
    }

    fn check(&self, other: &Self) -> Result<()> {
        if self.layout.same_shape(&other.layout) {
            Ok(())
        } else {
            Err(Error::JetMismatch {
                left: (self.dim(), self.degree()),
                right: (other.dim(), other.degree()),
            })
        }
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.check(other)?;
        let mut out = self.clone();
        for (o, b) in out.coeffs.iter_mut().zip(&other.coeffs) {
            *o += b;
        }
        Ok(out)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.check(other)?;
        let mut out = self.clone();
        for (o, b) in out.coeffs.iter_mut().zip(&other.coeffs) {
            *o -= b;
        }
        Ok(out)
    }

    pub fn scale(&self, s: f64) -> Self {
        let mut out = self.clone();
        for o in out.coeffs.iter_mut() {
            *o *= s;
        }
        out
    }

    /// Cauchy product truncated to degree K.
    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.check(other)?;
        let mut out = Self::zeros(&self.layout);
        mul_acc(&self.layout, &self.coeffs, &other.coeffs, &mut out.coeffs);
        Ok(out)
    }

    /// Degree-K truncation of `series ∘ self`.
    pub fn compose(&self, series: Series) -> Result<Self> {
        let mut out = Self::zeros(&self.layout);
        let mut coeffs = vec![0.0; self.degree() + 1];
        let mut scratch = vec![0.0; self.layout.len()];
        compose_into(
            &self.layout,
            series,
            &self.coeffs,
            &mut out.coeffs,
            &mut coeffs,
            &mut scratch,
        )?;
        Ok(out)
    }

    /// The partial derivative `∂ᵃφ(x₀) = a! · coeff[a]`.
    pub fn extract_partial(&self, a: &[usize]) -> Result<f64> {
        let order: usize = a.iter().sum();
        if order > self.degree() {
            return Err(Error::OrderExceeded {
                requested: order,
                available: self.degree(),
            });
        }
        let idx = self.layout.index_of(a).ok_or(Error::InvalidSpec(alloc::format!(
            "multi-index of length {} for dimension {}",
            a.len(),
            self.dim()
        )))?;
        Ok(self.layout.factorial(idx) * self.coeffs[idx])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec::Vec;
    use approx::assert_relative_eq;

    fn layout(dim: usize, k: usize) -> Arc<JetLayout> {
        Arc::new(JetLayout::new(dim, k))
    }

    #[test]
    fn layout_sizes_and_order() {
        for dim in 1..=4 {
            for k in 0..=6 {
                assert_eq!(JetLayout::new(dim, k).len(), jet_len(dim, k));
            }
        }
        let l = JetLayout::new(2, 2);
        let got: Vec<&[u8]> = (0..l.len()).map(|i| l.exponents(i)).collect();
        let want: [&[u8]; 6] = [&[0, 0], &[1, 0], &[0, 1], &[2, 0], &[1, 1], &[0, 2]];
        assert_eq!(got, want);
        // prefix property
        let big = JetLayout::new(2, 5);
        for i in 0..l.len() {
            assert_eq!(big.exponents(i), l.exponents(i));
        }
        assert_eq!(big.len_upto(2), 6);
        assert_eq!(big.degree_range(3), 6..10);
    }

    #[test]
    fn seed_examples() {
        let t = TruncatedTaylor::seed_variable(&layout(2, 2), 0, 3.0).unwrap();
        assert_eq!(t.coeffs(), &[3.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
        let t = TruncatedTaylor::seed_variable(&layout(1, 0), 0, 5.0).unwrap();
        assert_eq!(t.coeffs(), &[5.0]);
        let t = TruncatedTaylor::seed_variable(&layout(2, 3), 1, 0.0).unwrap();
        assert_eq!(t.coeff(&[0, 1]), 1.0);
        assert_eq!(t.coeffs().iter().filter(|&&c| c != 0.0).count(), 1);
        assert!(TruncatedTaylor::seed_variable(&layout(2, 3), 2, 0.0).is_err());
    }

    #[test]
    fn product_truncation() {
        for (k, expect_xy) in [(1, 0.0), (2, 1.0)] {
            let l = layout(2, k);
            let one = TruncatedTaylor::constant(&l, 1.0);
            let x = TruncatedTaylor::seed_variable(&l, 0, 0.0).unwrap();
            let y = TruncatedTaylor::seed_variable(&l, 1, 0.0).unwrap();
            let p = one.add(&x).unwrap().mul(&one.add(&y).unwrap()).unwrap();
            assert_eq!(p.coeff(&[0, 0]), 1.0);
            assert_eq!(p.coeff(&[1, 0]), 1.0);
            assert_eq!(p.coeff(&[0, 1]), 1.0);
            assert_eq!(p.coeff(&[1, 1]), expect_xy);
        }
    }

    #[test]
    fn mismatch_is_an_error() {
        let a = TruncatedTaylor::constant(&layout(2, 2), 1.0);
        let b = TruncatedTaylor::constant(&layout(2, 3), 1.0);
        let c = TruncatedTaylor::constant(&layout(3, 2), 1.0);
        assert!(matches!(a.mul(&b), Err(Error::JetMismatch { .. })));
        assert!(matches!(a.add(&c), Err(Error::JetMismatch { .. })));
    }

    #[test]
    fn tanh_series_and_partials() {
        let l = layout(1, 3);
        let x = TruncatedTaylor::seed_variable(&l, 0, 0.0).unwrap();
        let t = x.compose(Series::Tanh).unwrap();
        assert_relative_eq!(t.coeff(&[0]), 0.0);
        assert_relative_eq!(t.coeff(&[1]), 1.0);
        assert_relative_eq!(t.coeff(&[2]), 0.0);
        assert_relative_eq!(t.coeff(&[3]), -1.0 / 3.0, epsilon = 1e-15);
        assert_relative_eq!(t.extract_partial(&[3]).unwrap(), -2.0, epsilon = 1e-14);
        assert!(matches!(
            t.extract_partial(&[4]),
            Err(Error::OrderExceeded { requested: 4, available: 3 })
        ));
    }

    #[test]
    fn exp_of_zero_is_one() {
        let l = layout(2, 4);
        let e = TruncatedTaylor::zeros(&l).compose(Series::Exp).unwrap();
        assert_eq!(e.coeff(&[0, 0]), 1.0);
        assert!(e.coeffs()[1..].iter().all(|&c| c == 0.0));
    }

    #[test]
    fn reciprocal_singularity() {
        let l = layout(2, 2);
        let x = TruncatedTaylor::seed_variable(&l, 0, 0.0).unwrap();
        assert_eq!(x.compose(Series::Reciprocal), Err(Error::Singularity));
        let x = TruncatedTaylor::seed_variable(&l, 0, 2.0).unwrap();
        let r = x.compose(Series::Reciprocal).unwrap();
        // 1/x at 2: 1/2, -1/4, 1/8
        assert_relative_eq!(r.coeff(&[0, 0]), 0.5);
        assert_relative_eq!(r.coeff(&[1, 0]), -0.25);
        assert_relative_eq!(r.coeff(&[2, 0]), 0.125);
    }

    #[test]
    fn polynomial_partials() {
        // x²y at (1, 2): ∂x∂y = 2x = 2
        let l = layout(2, 3);
        let x = TruncatedTaylor::seed_variable(&l, 0, 1.0).unwrap();
        let y = TruncatedTaylor::seed_variable(&l, 1, 2.0).unwrap();
        let p = x.mul(&x).unwrap().mul(&y).unwrap();
        assert_relative_eq!(p.extract_partial(&[1, 1]).unwrap(), 2.0);
        assert_relative_eq!(p.extract_partial(&[0, 0]).unwrap(), 2.0);
        assert_relative_eq!(p.extract_partial(&[2, 1]).unwrap(), 2.0);
        assert_relative_eq!(p.extract_partial(&[2, 0]).unwrap(), 4.0);
    }

    #[test]
    fn series_derivative_matches_composed_derivative() {
        // φ'(u) jet vs compose of the analytic derivative
        let l = layout(2, 4);
        let u = TruncatedTaylor::from_coeffs(
            &l,
            (0..l.len()).map(|i| 0.3 - 0.07 * i as f64).collect(),
        )
        .unwrap();
        for s in [Series::Tanh, Series::Exp, Series::Sin, Series::Cos, Series::Reciprocal] {
            let y = u.compose(s).unwrap();
            let mut d = vec![0.0; l.len()];
            let mut c = vec![0.0; 5];
            let mut sc = vec![0.0; l.len()];
            series_derivative_into(&l, s, u.coeffs(), y.coeffs(), &mut d, &mut c, &mut sc).unwrap();
            let expect = match s {
                Series::Tanh => {
                    let t = u.compose(Series::Tanh).unwrap();
                    TruncatedTaylor::constant(&l, 1.0).sub(&t.mul(&t).unwrap()).unwrap()
                }
                Series::Exp => u.compose(Series::Exp).unwrap(),
                Series::Sin => u.compose(Series::Cos).unwrap(),
                Series::Cos => u.compose(Series::Sin).unwrap().scale(-1.0),
                Series::Reciprocal => {
                    let r = u.compose(Series::Reciprocal).unwrap();
                    r.mul(&r).unwrap().scale(-1.0)
                }
            };
            for (a, b) in d.iter().zip(expect.coeffs()) {
                assert_relative_eq!(a, b, epsilon = 1e-13, max_relative = 1e-12);
            }
        }
    }
}
