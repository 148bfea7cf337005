//! Smooth multilayer perceptron velocity field `f_θ(t, x)`.
//!
//! Jets are pushed through the network layer by layer: affine layers act
//! coefficientwise, activations are applied by series composition. With
//! `record` set, the forward pass keeps each layer's input jets and the jets
//! of `φ'(z)`, which is all the reverse sweep in [`MlpField::jet_vjp`] needs
//! to return exact parameter gradients of any linear functional of the output
//! jet.
//!
//! Inside the network a layer's jets are stored coefficient-major
//! (`h[c · width + unit]`), so every jet product and every affine map is a
//! contiguous loop across units.

use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{check_order, FieldJet, VelocityField};
use crate::domain::wrap_scalar;
use crate::error::{Error, Result};
use crate::jets::{JetLayout, Series};

/// How time enters the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TimeMode {
    /// `t` is appended to the spatial features as one raw input.
    Append,
    /// The field ignores time.
    Autonomous,
}

/// Spatial feature map applied before the first layer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Embedding {
    None,
    /// `[sin(2πx/l); cos(2πx/l)]`, making the field exactly l-periodic.
    Periodic { side: f64 },
}

/// Recorded forward pass for [`MlpField::jet_vjp`].
#[derive(Debug, Clone)]
pub struct JetTape {
    layout: Arc<JetLayout>,
    inputs: Vec<Vec<f64>>,
    dphi: Vec<Vec<f64>>,
}

impl JetTape {
    pub fn layout(&self) -> &Arc<JetLayout> {
        &self.layout
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpField {
    dim: usize,
    layer_sizes: Vec<usize>,
    activation: Series,
    time_mode: TimeMode,
    embedding: Embedding,
    params: Vec<f64>,
    offsets: Vec<usize>,
    // per layer, weights transposed to `in × out`
    wt: Vec<Vec<f64>>,
}

fn input_width(dim: usize, time_mode: TimeMode, embedding: Embedding) -> usize {
    let spatial = match embedding {
        Embedding::None => dim,
        Embedding::Periodic { .. } => 2 * dim,
    };
    spatial + usize::from(time_mode == TimeMode::Append)
}

fn param_count(layer_sizes: &[usize]) -> usize {
    layer_sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

impl MlpField {
    /// `layer_sizes = [input, hidden…, output]`; the output width is the
    /// spatial dimension.
    pub fn new(
        layer_sizes: Vec<usize>,
        activation: Series,
        time_mode: TimeMode,
        embedding: Embedding,
        params: Vec<f64>,
    ) -> Result<Self> {
        if layer_sizes.len() < 2 || layer_sizes.iter().any(|&w| w == 0) {
            return Err(Error::InvalidField(
                "need at least an input and an output layer of positive width".into(),
            ));
        }
        let dim = *layer_sizes.last().unwrap();
        let expected = input_width(dim, time_mode, embedding);
        if layer_sizes[0] != expected {
            return Err(Error::InvalidField(alloc::format!(
                "input width {} does not match {} expected from dim {dim}",
                layer_sizes[0],
                expected
            )));
        }
        if activation == Series::Reciprocal {
            return Err(Error::InvalidField("reciprocal is not a usable activation".into()));
        }
        if let Embedding::Periodic { side } = embedding {
            if !(side > 0.0 && side.is_finite()) {
                return Err(Error::InvalidField("periodic side length must be positive".into()));
            }
        }
        if params.len() != param_count(&layer_sizes) {
            return Err(Error::InvalidField(alloc::format!(
                "expected {} parameters, got {}",
                param_count(&layer_sizes),
                params.len()
            )));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::InvalidField("non-finite parameter".into()));
        }
        let mut offsets = Vec::with_capacity(layer_sizes.len());
        let mut off = 0;
        for w in layer_sizes.windows(2) {
            offsets.push(off);
            off += w[0] * w[1] + w[1];
        }
        let mut field = MlpField {
            dim,
            layer_sizes,
            activation,
            time_mode,
            embedding,
            params,
            offsets,
            wt: Vec::new(),
        };
        field.refresh_transposed();
        Ok(field)
    }

    fn refresh_transposed(&mut self) {
        let mut wt = Vec::with_capacity(self.n_layers());
        for l in 0..self.n_layers() {
            let (n_in, n_out) = (self.layer_sizes[l], self.layer_sizes[l + 1]);
            let (w, _) = self.layer(l);
            let mut t = vec![0.0; n_in * n_out];
            for j in 0..n_out {
                for i in 0..n_in {
                    t[i * n_out + j] = w[j * n_in + i];
                }
            }
            wt.push(t);
        }
        self.wt = wt;
    }

    pub fn zeros(
        layer_sizes: Vec<usize>,
        activation: Series,
        time_mode: TimeMode,
        embedding: Embedding,
    ) -> Result<Self> {
        let n = param_count(&layer_sizes);
        Self::new(layer_sizes, activation, time_mode, embedding, vec![0.0; n])
    }

    /// Glorot-normal weights, zero biases.
    pub fn random<R: Rng + ?Sized>(
        layer_sizes: Vec<usize>,
        activation: Series,
        time_mode: TimeMode,
        embedding: Embedding,
        rng: &mut R,
    ) -> Result<Self> {
        let mut field = Self::zeros(layer_sizes, activation, time_mode, embedding)?;
        for l in 0..field.n_layers() {
            let (n_in, n_out) = (field.layer_sizes[l], field.layer_sizes[l + 1]);
            let std = libm::sqrt(2.0 / (n_in + n_out) as f64);
            let off = field.offsets[l];
            for w in &mut field.params[off..off + n_in * n_out] {
                let z: f64 = StandardNormal.sample(rng);
                *w = std * z;
            }
        }
        field.refresh_transposed();
        Ok(field)
    }

    pub fn n_layers(&self) -> usize {
        self.layer_sizes.len() - 1
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn activation(&self) -> Series {
        self.activation
    }

    pub fn time_mode(&self) -> TimeMode {
        self.time_mode
    }

    pub fn embedding(&self) -> Embedding {
        self.embedding
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    /// Flat parameters: per layer, row-major weights (`out × in`) then biases.
    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(Error::InvalidField("parameter count mismatch".into()));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::InvalidField("non-finite parameter".into()));
        }
        self.params.copy_from_slice(params);
        self.refresh_transposed();
        Ok(())
    }

    /// Multiply the weights (not the biases) of layer `l` by `factor`.
    pub fn scale_weights(&mut self, l: usize, factor: f64) -> Result<()> {
        if l >= self.n_layers() {
            return Err(Error::InvalidField(alloc::format!("no layer {l}")));
        }
        if !factor.is_finite() {
            return Err(Error::InvalidField("non-finite weight scale".into()));
        }
        let off = self.offsets[l];
        let n = self.layer_sizes[l] * self.layer_sizes[l + 1];
        for w in &mut self.params[off..off + n] {
            *w *= factor;
        }
        self.refresh_transposed();
        Ok(())
    }

    /// Weights of layer `l` (row-major `out × in`) and its biases.
    pub fn layer(&self, l: usize) -> (&[f64], &[f64]) {
        let (n_in, n_out) = (self.layer_sizes[l], self.layer_sizes[l + 1]);
        let off = self.offsets[l];
        (
            &self.params[off..off + n_in * n_out],
            &self.params[off + n_in * n_out..off + n_in * n_out + n_out],
        )
    }

    /// Input feature jets, coefficient-major (`len × input_width`).
    fn input_jets(&self, layout: &JetLayout, t: f64, x: &[f64]) -> Vec<f64> {
        let len = layout.len();
        let d = self.dim;
        let k = layout.degree();
        let width = self.layer_sizes[0];
        let mut feats = vec![0.0; len * width];
        match self.embedding {
            Embedding::None => {
                for i in 0..d {
                    feats[i] = x[i];
                    if k >= 1 {
                        feats[layout.unit(i) * width + i] = 1.0;
                    }
                }
            }
            Embedding::Periodic { side } => {
                let freq = 2.0 * PI / side;
                for i in 0..d {
                    let u = freq * wrap_scalar(side, x[i]);
                    let (s, c) = (libm::sin(u), libm::cos(u));
                    // sin/cos of u + freq·εᵢ: only pure powers of εᵢ appear
                    let sin_cycle = [s, c, -s, -c];
                    let cos_cycle = [c, -s, -c, s];
                    let mut idx = 0usize;
                    let mut scale = 1.0;
                    for n in 0..=k {
                        if n > 0 {
                            idx = layout.succ(idx, i) as usize;
                            scale *= freq / n as f64;
                        }
                        feats[idx * width + i] = sin_cycle[n % 4] * scale;
                        feats[idx * width + d + i] = cos_cycle[n % 4] * scale;
                    }
                }
            }
        }
        if self.time_mode == TimeMode::Append {
            feats[width - 1] = t;
        }
        feats
    }

    fn forward(
        &self,
        layout: &Arc<JetLayout>,
        t: f64,
        x: &[f64],
        record: bool,
    ) -> Result<(Vec<f64>, Option<JetTape>)> {
        check_order(layout)?;
        let len = layout.len();
        let mut current = self.input_jets(layout, t, x);
        let mut inputs = Vec::new();
        let mut dphi = Vec::new();
        let last = self.n_layers() - 1;
        for l in 0..=last {
            let (_, b) = self.layer(l);
            let wt = &self.wt[l];
            let (n_in, n_out) = (self.layer_sizes[l], self.layer_sizes[l + 1]);
            let mut z = vec![0.0; len * n_out];
            z[..n_out].copy_from_slice(b);
            for c in 0..len {
                let zc = &mut z[c * n_out..(c + 1) * n_out];
                let hc = &current[c * n_in..(c + 1) * n_in];
                for (i, &h) in hc.iter().enumerate() {
                    if h == 0.0 {
                        continue;
                    }
                    for (o, &w) in zc.iter_mut().zip(&wt[i * n_out..(i + 1) * n_out]) {
                        *o += h * w;
                    }
                }
            }
            let next = if l < last {
                let mut h = vec![0.0; len * n_out];
                lanes::compose(layout, self.activation, &z, n_out, &mut h)?;
                if record {
                    let mut dp = vec![0.0; len * n_out];
                    lanes::derivative(layout, self.activation, &z, &h, n_out, &mut dp)?;
                    dphi.push(dp);
                }
                h
            } else {
                z
            };
            if record {
                inputs.push(core::mem::replace(&mut current, next));
            } else {
                current = next;
            }
        }
        let d = self.dim;
        let mut out = vec![0.0; d * len];
        for c in 0..len {
            for i in 0..d {
                out[i * len + c] = current[c * d + i];
            }
        }
        let tape = record.then(|| JetTape {
            layout: Arc::clone(layout),
            inputs,
            dphi,
        });
        Ok((out, tape))
    }

    /// Jet evaluation that also records the tape for [`MlpField::jet_vjp`].
    pub fn eval_jet_taped(
        &self,
        layout: &Arc<JetLayout>,
        t: f64,
        x: &[f64],
    ) -> Result<(FieldJet, JetTape)> {
        let (out, tape) = self.forward(layout, t, x, true)?;
        Ok((FieldJet::from_taylor(layout, &out), tape.expect("recorded")))
    }

    /// Accumulate into `grad` the parameter gradient of `Σ cot · c`, where `c`
    /// are the output Taylor coefficients (`dim × len`, same layout as the
    /// tape). For a cotangent on derivative entries multiply by `a!` first.
    pub fn jet_vjp(&self, tape: &JetTape, cot: &[f64], grad: &mut [f64]) {
        let layout = &*tape.layout;
        let len = layout.len();
        let d = self.dim;
        let mut zbar = vec![0.0; len * d];
        for i in 0..d {
            for c in 0..len {
                zbar[c * d + i] = cot[i * len + c];
            }
        }
        for l in (0..self.n_layers()).rev() {
            let (n_in, n_out) = (self.layer_sizes[l], self.layer_sizes[l + 1]);
            let off = self.offsets[l];
            let input = &tape.inputs[l];
            {
                let (gw, gb) = grad[off..off + n_in * n_out + n_out].split_at_mut(n_in * n_out);
                for (g, z) in gb.iter_mut().zip(&zbar[..n_out]) {
                    *g += z;
                }
                for c in 0..len {
                    let zc = &zbar[c * n_out..(c + 1) * n_out];
                    let hc = &input[c * n_in..(c + 1) * n_in];
                    for (j, &z) in zc.iter().enumerate() {
                        if z == 0.0 {
                            continue;
                        }
                        for (g, &h) in gw[j * n_in..(j + 1) * n_in].iter_mut().zip(hc) {
                            *g += z * h;
                        }
                    }
                }
            }
            if l == 0 {
                break;
            }
            let (w, _) = self.layer(l);
            let mut hbar = vec![0.0; len * n_in];
            for c in 0..len {
                let zc = &zbar[c * n_out..(c + 1) * n_out];
                let hc = &mut hbar[c * n_in..(c + 1) * n_in];
                for (j, &z) in zc.iter().enumerate() {
                    if z == 0.0 {
                        continue;
                    }
                    for (o, &wv) in hc.iter_mut().zip(&w[j * n_in..(j + 1) * n_in]) {
                        *o += z * wv;
                    }
                }
            }
            let mut prev = vec![0.0; len * n_in];
            lanes::mul_transpose_acc(layout.products(), &hbar, &tape.dphi[l - 1], n_in, &mut prev);
            zbar = prev;
        }
    }

    fn forward_scalar(&self, t: f64, x: &[f64], out: &mut [f64]) {
        let d = self.dim;
        let mut current: Vec<f64> = match self.embedding {
            Embedding::None => x.to_vec(),
            Embedding::Periodic { side } => {
                let freq = 2.0 * PI / side;
                let mut f = vec![0.0; 2 * d];
                for i in 0..d {
                    let u = freq * wrap_scalar(side, x[i]);
                    f[i] = libm::sin(u);
                    f[d + i] = libm::cos(u);
                }
                f
            }
        };
        if self.time_mode == TimeMode::Append {
            current.push(t);
        }
        let last = self.n_layers() - 1;
        for l in 0..=last {
            let (w, b) = self.layer(l);
            let n_in = self.layer_sizes[l];
            let mut z: Vec<f64> = b.to_vec();
            for (j, zj) in z.iter_mut().enumerate() {
                let row = &w[j * n_in..(j + 1) * n_in];
                *zj += row.iter().zip(&current).map(|(a, b)| a * b).sum::<f64>();
            }
            if l < last {
                for v in z.iter_mut() {
                    *v = self.activation.eval(*v);
                }
            }
            current = z;
        }
        out.copy_from_slice(&current);
    }
}

/// Kernels over `n` jets stored coefficient-major (`x[c · n + lane]`).
mod lanes {
    use alloc::vec;

    use crate::error::Result;
    use crate::jets::{JetLayout, Series};

    #[inline]
    pub fn mul_acc(triples: &[(u16, u16, u16)], a: &[f64], b: &[f64], n: usize, out: &mut [f64]) {
        for &(i, j, k) in triples {
            let (i, j, k) = (i as usize * n, j as usize * n, k as usize * n);
            let (a, b) = (&a[i..i + n], &b[j..j + n]);
            for ((o, x), y) in out[k..k + n].iter_mut().zip(a).zip(b) {
                *o += x * y;
            }
        }
    }

    /// Transpose of `y ↦ p · y` on every lane.
    #[inline]
    pub fn mul_transpose_acc(triples: &[(u16, u16, u16)], cot_out: &[f64], p: &[f64], n: usize, cot_in: &mut [f64]) {
        for &(i, j, k) in triples {
            let (i, j, k) = (i as usize * n, j as usize * n, k as usize * n);
            let (c, p) = (&cot_out[k..k + n], &p[i..i + n]);
            for ((o, x), y) in cot_in[j..j + n].iter_mut().zip(c).zip(p) {
                *o += x * y;
            }
        }
    }

    /// `out = series ∘ u` on every lane (Horner in `u − u₀`).
    pub fn compose(layout: &JetLayout, series: Series, u: &[f64], n: usize, out: &mut [f64]) -> Result<()> {
        let k_max = layout.degree();
        let mut coeffs = vec![0.0; (k_max + 1) * n];
        let mut one = vec![0.0; k_max + 1];
        for lane in 0..n {
            series.taylor_coefficients(u[lane], &mut one)?;
            for (k, c) in one.iter().enumerate() {
                coeffs[k * n + lane] = *c;
            }
        }
        out.fill(0.0);
        out[..n].copy_from_slice(&coeffs[k_max * n..]);
        let mut scratch = vec![0.0; out.len()];
        for k in (0..k_max).rev() {
            scratch.fill(0.0);
            mul_acc(layout.products_nc(), u, out, n, &mut scratch);
            out.copy_from_slice(&scratch);
            for (o, c) in out[..n].iter_mut().zip(&coeffs[k * n..(k + 1) * n]) {
                *o += c;
            }
        }
        Ok(())
    }

    /// `out = φ'(u)` on every lane, given `y = φ(u)`.
    pub fn derivative(layout: &JetLayout, series: Series, u: &[f64], y: &[f64], n: usize, out: &mut [f64]) -> Result<()> {
        match series {
            Series::Tanh | Series::Reciprocal => {
                out.fill(0.0);
                mul_acc(layout.products(), y, y, n, out);
                for o in out.iter_mut() {
                    *o = -*o;
                }
                if series == Series::Tanh {
                    for o in out[..n].iter_mut() {
                        *o += 1.0;
                    }
                }
                Ok(())
            }
            Series::Exp => {
                out.copy_from_slice(y);
                Ok(())
            }
            Series::Sin => compose(layout, Series::Cos, u, n, out),
            Series::Cos => {
                compose(layout, Series::Sin, u, n, out)?;
                for o in out.iter_mut() {
                    *o = -*o;
                }
                Ok(())
            }
        }
    }
}

impl VelocityField for MlpField {
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval_jet(&self, layout: &Arc<JetLayout>, t: f64, x: &[f64]) -> Result<FieldJet> {
        let (out, _) = self.forward(layout, t, x, false)?;
        Ok(FieldJet::from_taylor(layout, &out))
    }

    fn eval(&self, t: f64, x: &[f64], out: &mut [f64]) -> Result<()> {
        self.forward_scalar(t, x, out);
        Ok(())
    }

    fn as_mlp(&self) -> Option<&MlpField> {
        Some(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::param_grad_jet;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn layout(k: usize) -> Arc<JetLayout> {
        Arc::new(JetLayout::new(2, k))
    }

    #[test]
    fn rejects_bad_architectures() {
        let bad_width = MlpField::zeros(vec![2, 4, 2], Series::Tanh, TimeMode::Append, Embedding::None);
        assert!(matches!(bad_width, Err(Error::InvalidField(_))));
        let recip = MlpField::zeros(vec![3, 4, 2], Series::Reciprocal, TimeMode::Append, Embedding::None);
        assert!(recip.is_err());
        let mut f = MlpField::zeros(vec![3, 4, 2], Series::Tanh, TimeMode::Append, Embedding::None).unwrap();
        let mut p = f.params().to_vec();
        p[0] = f64::NAN;
        assert!(f.set_params(&p).is_err());
        let n = f.n_params();
        assert!(MlpField::new(vec![3, 4, 2], Series::Tanh, TimeMode::Append, Embedding::None, vec![f64::INFINITY; n]).is_err());
    }

    #[test]
    fn scalar_forward_matches_jet_value() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for emb in [Embedding::None, Embedding::Periodic { side: 8.0 }] {
            let width = input_width(2, TimeMode::Append, emb);
            let f = MlpField::random(vec![width, 7, 5, 2], Series::Tanh, TimeMode::Append, emb, &mut rng).unwrap();
            let jet = f.eval_jet(&layout(3), 0.4, &[0.3, -1.2]).unwrap();
            let mut v = [0.0; 2];
            f.eval(0.4, &[0.3, -1.2], &mut v).unwrap();
            for i in 0..2 {
                assert_relative_eq!(v[i], jet.value()[i], epsilon = 1e-14);
            }
            let mut v1 = [0.0; 2];
            let div = f.eval_with_div(0.4, &[0.3, -1.2], &mut v1).unwrap();
            assert_relative_eq!(div, jet.div_derivs()[0], epsilon = 1e-14);
        }
    }

    #[test]
    fn single_linear_layer_gradients() {
        // f(x) = W x + b
        let params = vec![1.0, 2.0, 3.0, 4.0, 0.5, -0.5];
        let f = MlpField::new(vec![2, 2], Series::Tanh, TimeMode::Autonomous, Embedding::None, params).unwrap();
        let jac = param_grad_jet(&f, &layout(2), 0.0, &[0.7, -0.2]).unwrap();
        // ∂f_i/∂b: identity rows
        for i in 0..2 {
            let row = jac.partial(i, &[0, 0]).unwrap();
            for j in 0..2 {
                assert_eq!(row[4 + j], if i == j { 1.0 } else { 0.0 });
            }
        }
        // ∂(∂f_i/∂x_j)/∂W_ij = 1, every other entry 0
        for i in 0..2 {
            for j in 0..2 {
                let mut a = [0, 0];
                a[j] = 1;
                let row = jac.partial(i, &a).unwrap();
                for (p, &g) in row.iter().enumerate() {
                    assert_eq!(g, if p == i * 2 + j { 1.0 } else { 0.0 });
                }
            }
        }
    }

    #[test]
    fn zero_network_gradients() {
        let f = MlpField::zeros(vec![3, 4, 2], Series::Tanh, TimeMode::Append, Embedding::None).unwrap();
        let jac = param_grad_jet(&f, &layout(1), 0.5, &[1.0, 2.0]).unwrap();
        let n = f.n_params();
        let last_bias = n - 2;
        for i in 0..2 {
            let row = jac.partial(i, &[0, 0]).unwrap();
            // final-layer bias: identity pattern
            assert_eq!(row[last_bias + i], 1.0);
            assert_eq!(row[last_bias + 1 - i], 0.0);
            // hidden weights: zero
            let hidden = 3 * 4 + 4;
            assert!(row[..hidden].iter().all(|&g| g == 0.0));
        }
    }
}
