//! Dense feed-forward autoencoder with explicit forward/backward passes.
//!
//! The encoder maps embeddings to code vectors, the decoder maps codes back
//! to embedding space. All hidden layers (including the code layer) use ELU;
//! the decoder output layer is linear because reconstruction targets are
//! unbounded embedding vectors.

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use rand::distributions::{Distribution, Uniform};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// ELU with alpha = 1: identity for x >= 0, exp(x) - 1 below.
#[inline]
pub fn elu(x: f64) -> f64 {
    if x >= 0.0 {
        x
    } else {
        x.exp() - 1.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Elu,
    Linear,
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Elu => elu(x),
            Activation::Linear => x,
        }
    }

    /// Derivative expressed through the layer output. For ELU with alpha = 1
    /// the output determines the derivative: 1 for a >= 0, a + 1 below.
    #[inline]
    fn derivative_from_output(self, a: f64) -> f64 {
        match self {
            Activation::Elu => {
                if a >= 0.0 {
                    1.0
                } else {
                    a + 1.0
                }
            }
            Activation::Linear => 1.0,
        }
    }
}

/// One dense layer: `a = act(W x + b)` with `W` of shape (out_dim, in_dim).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerParams {
    weights: Matrix,
    biases: Vec<f64>,
    activation: Activation,
}

impl LayerParams {
    pub fn new(weights: Matrix, biases: Vec<f64>, activation: Activation) -> Result<Self> {
        if weights.rows() != biases.len() {
            return Err(Error::DimensionMismatch {
                context: "layer biases",
                expected: weights.rows(),
                actual: biases.len(),
            });
        }
        if !weights.is_finite() || !biases.iter().all(|b| b.is_finite()) {
            return Err(Error::DegenerateInput(
                "layer parameters must be finite".into(),
            ));
        }
        Ok(Self {
            weights,
            biases,
            activation,
        })
    }

    /// Glorot-uniform init: weights in +-sqrt(6 / (fan_in + fan_out)), zero biases.
    pub fn glorot<R: Rng + ?Sized>(
        in_dim: usize,
        out_dim: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Self {
        let limit = (6.0 / (in_dim + out_dim) as f64).sqrt();
        let dist = Uniform::new_inclusive(-limit, limit);
        let mut weights = Matrix::zeros(out_dim, in_dim);
        for w in weights.data_mut() {
            *w = dist.sample(rng);
        }
        Self {
            weights,
            biases: vec![0.0; out_dim],
            activation,
        }
    }

    #[inline]
    pub fn in_dim(&self) -> usize {
        self.weights.cols()
    }

    #[inline]
    pub fn out_dim(&self) -> usize {
        self.weights.rows()
    }

    #[inline]
    pub fn activation(&self) -> Activation {
        self.activation
    }

    #[inline]
    pub fn param_count(&self) -> usize {
        self.weights.rows() * self.weights.cols() + self.biases.len()
    }

    fn forward(&self, input: &Matrix) -> Matrix {
        let mut out = Matrix::zeros(input.rows(), self.out_dim());
        for r in 0..input.rows() {
            let x = input.row(r);
            let o = out.row_mut(r);
            for (j, oj) in o.iter_mut().enumerate() {
                let mut z = self.biases[j];
                for (w, xi) in self.weights.row(j).iter().zip(x) {
                    z += w * xi;
                }
                *oj = self.activation.apply(z);
            }
        }
        out
    }

    /// Backprop through this layer. `input`/`output` are the cached forward
    /// batch activations, `d_output` is dL/d(output). Returns parameter
    /// gradients and dL/d(input).
    fn backward(&self, input: &Matrix, output: &Matrix, d_output: &Matrix) -> (LayerGrad, Matrix) {
        let (in_dim, out_dim) = (self.in_dim(), self.out_dim());
        let mut d_weights = Matrix::zeros(out_dim, in_dim);
        let mut d_biases = vec![0.0; out_dim];
        let mut d_input = Matrix::zeros(input.rows(), in_dim);
        for r in 0..input.rows() {
            let x = input.row(r);
            let a = output.row(r);
            let go = d_output.row(r);
            let gi = d_input.row_mut(r);
            for j in 0..out_dim {
                let dz = go[j] * self.activation.derivative_from_output(a[j]);
                if dz == 0.0 {
                    continue;
                }
                d_biases[j] += dz;
                let wrow = self.weights.row(j);
                let dwrow = d_weights.row_mut(j);
                for i in 0..in_dim {
                    dwrow[i] += dz * x[i];
                    gi[i] += dz * wrow[i];
                }
            }
        }
        (
            LayerGrad {
                d_weights,
                d_biases,
            },
            d_input,
        )
    }
}

/// Autoencoder parameter store. Encoder output is the code vector space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    encoder: Vec<LayerParams>,
    decoder: Vec<LayerParams>,
}

impl Network {
    /// Builds an autoencoder with the given encoder layer widths; the decoder
    /// mirrors them back to the input dimension. All layers use ELU except
    /// the final decoder layer, which is linear.
    pub fn new<R: Rng + ?Sized>(
        input_dim: usize,
        hidden_dims: &[usize],
        rng: &mut R,
    ) -> Result<Self> {
        if input_dim == 0 || hidden_dims.is_empty() || hidden_dims.contains(&0) {
            return Err(Error::InvalidConfig(
                "network dimensions must be nonzero and at least one hidden layer is required"
                    .into(),
            ));
        }
        let mut encoder = Vec::with_capacity(hidden_dims.len());
        let mut prev = input_dim;
        for &h in hidden_dims {
            encoder.push(LayerParams::glorot(prev, h, Activation::Elu, rng));
            prev = h;
        }
        let mut decoder = Vec::with_capacity(hidden_dims.len());
        let mut dims: Vec<usize> = hidden_dims[..hidden_dims.len() - 1]
            .iter()
            .rev()
            .copied()
            .collect();
        dims.push(input_dim);
        for (i, &d) in dims.iter().enumerate() {
            let act = if i + 1 == dims.len() {
                Activation::Linear
            } else {
                Activation::Elu
            };
            decoder.push(LayerParams::glorot(prev, d, act, rng));
            prev = d;
        }
        Self::from_layers(encoder, decoder)
    }

    /// Builds from explicit layers, validating the dimension chain and that
    /// the decoder reconstructs in the encoder's input space.
    pub fn from_layers(encoder: Vec<LayerParams>, decoder: Vec<LayerParams>) -> Result<Self> {
        if encoder.is_empty() || decoder.is_empty() {
            return Err(Error::InvalidConfig(
                "encoder and decoder need at least one layer each".into(),
            ));
        }
        let chain = encoder.iter().chain(decoder.iter());
        let mut prev: Option<usize> = None;
        for layer in chain {
            if let Some(p) = prev {
                if layer.in_dim() != p {
                    return Err(Error::DimensionMismatch {
                        context: "layer chain",
                        expected: p,
                        actual: layer.in_dim(),
                    });
                }
            }
            prev = Some(layer.out_dim());
        }
        let input_dim = encoder[0].in_dim();
        let recon_dim = decoder.last().unwrap().out_dim();
        if input_dim != recon_dim {
            return Err(Error::DimensionMismatch {
                context: "decoder output vs encoder input",
                expected: input_dim,
                actual: recon_dim,
            });
        }
        Ok(Self { encoder, decoder })
    }

    #[inline]
    pub fn input_dim(&self) -> usize {
        self.encoder[0].in_dim()
    }

    #[inline]
    pub fn code_dim(&self) -> usize {
        self.encoder.last().unwrap().out_dim()
    }

    pub fn encoder_layers(&self) -> &[LayerParams] {
        &self.encoder
    }

    pub fn decoder_layers(&self) -> &[LayerParams] {
        &self.decoder
    }

    /// Code vectors `h(x)` for a batch, one row per sample.
    pub fn forward_encode(&self, batch: &Matrix) -> Result<Matrix> {
        if batch.cols() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                context: "forward_encode input",
                expected: self.input_dim(),
                actual: batch.cols(),
            });
        }
        let mut cur = self.encoder[0].forward(batch);
        for layer in &self.encoder[1..] {
            cur = layer.forward(&cur);
        }
        Ok(cur)
    }

    /// Reconstructions `g(h)` for a batch of code vectors.
    pub fn forward_decode(&self, codes: &Matrix) -> Result<Matrix> {
        if codes.cols() != self.code_dim() {
            return Err(Error::DimensionMismatch {
                context: "forward_decode input",
                expected: self.code_dim(),
                actual: codes.cols(),
            });
        }
        let mut cur = self.decoder[0].forward(codes);
        for layer in &self.decoder[1..] {
            cur = layer.forward(&cur);
        }
        Ok(cur)
    }

    /// Forward pass retaining every layer activation for a later backward
    /// call. With `with_decoder = false` only the encoder runs.
    pub fn forward_cached(&self, batch: &Matrix, with_decoder: bool) -> Result<ForwardCache> {
        if batch.cols() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                context: "forward_cached input",
                expected: self.input_dim(),
                actual: batch.cols(),
            });
        }
        let mut encoder_outputs = Vec::with_capacity(self.encoder.len());
        let mut cur = batch.clone();
        for layer in &self.encoder {
            cur = layer.forward(&cur);
            encoder_outputs.push(cur.clone());
        }
        let decoder_outputs = if with_decoder {
            let mut outs = Vec::with_capacity(self.decoder.len());
            for layer in &self.decoder {
                cur = layer.forward(&cur);
                outs.push(cur.clone());
            }
            Some(outs)
        } else {
            None
        };
        Ok(ForwardCache {
            input: batch.clone(),
            encoder_outputs,
            decoder_outputs,
        })
    }

    /// Backpropagates upstream gradients through the cached pass and returns
    /// exact parameter gradients. `d_codes` is dL/d(code vectors) from terms
    /// applied directly to codes; `d_recon` is dL/d(reconstruction). Passing
    /// `d_recon` requires a cache built with the decoder.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        d_codes: Option<&Matrix>,
        d_recon: Option<&Matrix>,
    ) -> Result<GradientBuffer> {
        let n = cache.input.rows();
        let mut grads = GradientBuffer::zeros_like(self);
        let mut code_grad = match d_codes {
            Some(g) => {
                if g.rows() != n || g.cols() != self.code_dim() {
                    return Err(Error::DimensionMismatch {
                        context: "backward d_codes",
                        expected: self.code_dim(),
                        actual: g.cols(),
                    });
                }
                g.clone()
            }
            None => Matrix::zeros(n, self.code_dim()),
        };

        if let Some(d_recon) = d_recon {
            let dec_outs = cache.decoder_outputs.as_ref().ok_or_else(|| {
                Error::DegenerateInput(
                    "backward with reconstruction gradients needs a decoder-cached forward pass"
                        .into(),
                )
            })?;
            if d_recon.rows() != n || d_recon.cols() != self.input_dim() {
                return Err(Error::DimensionMismatch {
                    context: "backward d_recon",
                    expected: self.input_dim(),
                    actual: d_recon.cols(),
                });
            }
            let mut upstream = d_recon.clone();
            for (idx, layer) in self.decoder.iter().enumerate().rev() {
                let input = if idx == 0 {
                    cache.codes()
                } else {
                    &dec_outs[idx - 1]
                };
                let (lg, d_in) = layer.backward(input, &dec_outs[idx], &upstream);
                grads.decoder[idx] = lg;
                upstream = d_in;
            }
            code_grad.add_scaled(&upstream, 1.0);
        }

        let mut upstream = code_grad;
        for (idx, layer) in self.encoder.iter().enumerate().rev() {
            let input = if idx == 0 {
                &cache.input
            } else {
                &cache.encoder_outputs[idx - 1]
            };
            let (lg, d_in) = layer.backward(input, &cache.encoder_outputs[idx], &upstream);
            grads.encoder[idx] = lg;
            upstream = d_in;
        }
        Ok(grads)
    }

    pub fn param_count(&self) -> usize {
        self.encoder
            .iter()
            .chain(self.decoder.iter())
            .map(LayerParams::param_count)
            .sum()
    }

    /// Length of the encoder prefix in the flat parameter layout.
    pub fn encoder_param_count(&self) -> usize {
        self.encoder.iter().map(LayerParams::param_count).sum()
    }

    /// Flat parameter vector: encoder layers then decoder layers, each as
    /// row-major weights followed by biases. This layout is the contract
    /// shared with the optimizer and importance states.
    pub fn flatten_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for layer in self.encoder.iter().chain(self.decoder.iter()) {
            out.extend_from_slice(layer.weights.data());
            out.extend_from_slice(&layer.biases);
        }
        out
    }

    /// Writes a flat parameter vector back; inverse of `flatten_params`.
    pub fn set_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::DimensionMismatch {
                context: "set_params",
                expected: self.param_count(),
                actual: flat.len(),
            });
        }
        let mut offset = 0;
        for layer in self.encoder.iter_mut().chain(self.decoder.iter_mut()) {
            let w = layer.weights.data_mut();
            w.copy_from_slice(&flat[offset..offset + w.len()]);
            offset += w.len();
            let blen = layer.biases.len();
            layer.biases.copy_from_slice(&flat[offset..offset + blen]);
            offset += blen;
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.encoder
            .iter()
            .chain(self.decoder.iter())
            .all(|l| l.weights.is_finite() && l.biases.iter().all(|b| b.is_finite()))
    }
}

/// Cached activations from `forward_cached`, consumed by `backward`.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    input: Matrix,
    encoder_outputs: Vec<Matrix>,
    decoder_outputs: Option<Vec<Matrix>>,
}

impl ForwardCache {
    /// Code vectors (last encoder activation).
    pub fn codes(&self) -> &Matrix {
        self.encoder_outputs.last().unwrap()
    }

    /// Reconstructions, present only when the decoder was cached.
    pub fn reconstruction(&self) -> Option<&Matrix> {
        self.decoder_outputs.as_ref().map(|o| o.last().unwrap())
    }

    pub fn batch_size(&self) -> usize {
        self.input.rows()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerGrad {
    pub d_weights: Matrix,
    pub d_biases: Vec<f64>,
}

impl LayerGrad {
    fn zeros(out_dim: usize, in_dim: usize) -> Self {
        Self {
            d_weights: Matrix::zeros(out_dim, in_dim),
            d_biases: vec![0.0; out_dim],
        }
    }
}

/// Per-parameter gradients, shape-congruent with the network that produced
/// them. The flat layout matches `Network::flatten_params`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientBuffer {
    pub encoder: Vec<LayerGrad>,
    pub decoder: Vec<LayerGrad>,
}

impl GradientBuffer {
    pub fn zeros_like(net: &Network) -> Self {
        Self {
            encoder: net
                .encoder
                .iter()
                .map(|l| LayerGrad::zeros(l.out_dim(), l.in_dim()))
                .collect(),
            decoder: net
                .decoder
                .iter()
                .map(|l| LayerGrad::zeros(l.out_dim(), l.in_dim()))
                .collect(),
        }
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for lg in self.encoder.iter().chain(self.decoder.iter()) {
            out.extend_from_slice(lg.d_weights.data());
            out.extend_from_slice(&lg.d_biases);
        }
        out
    }

    /// `self += scale * flat`, consuming the flat vector in layout order.
    pub fn add_flat_scaled(&mut self, flat: &[f64], scale: f64) {
        let mut offset = 0;
        for lg in self.encoder.iter_mut().chain(self.decoder.iter_mut()) {
            for w in lg.d_weights.data_mut() {
                *w += scale * flat[offset];
                offset += 1;
            }
            for b in &mut lg.d_biases {
                *b += scale * flat[offset];
                offset += 1;
            }
        }
        assert_eq!(offset, flat.len(), "flat gradient length mismatch");
    }

    pub fn add_scaled(&mut self, other: &GradientBuffer, scale: f64) {
        for (a, b) in self
            .encoder
            .iter_mut()
            .chain(self.decoder.iter_mut())
            .zip(other.encoder.iter().chain(other.decoder.iter()))
        {
            a.d_weights.add_scaled(&b.d_weights, scale);
            for (x, y) in a.d_biases.iter_mut().zip(&b.d_biases) {
                *x += scale * y;
            }
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.encoder
            .iter()
            .chain(self.decoder.iter())
            .flat_map(|lg| lg.d_weights.data().iter().chain(lg.d_biases.iter()))
            .fold(0.0_f64, |m, v| m.max(v.abs()))
    }
}

/// Outcome of a finite-difference gradient check.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
    pub worst_param: usize,
    pub tol: f64,
    pub passed: bool,
}

/// Compares the analytic gradients returned by `loss_fn` against central
/// finite differences over a random subsample of at least 100 parameters
/// (all of them when the network is smaller). `loss_fn` must be
/// deterministic; a non-finite loss aborts the check.
pub fn finite_diff_check<F, R>(
    net: &mut Network,
    loss_fn: F,
    tol: f64,
    step: f64,
    rng: &mut R,
) -> Result<GradCheckReport>
where
    F: Fn(&Network) -> Result<(f64, GradientBuffer)>,
    R: Rng + ?Sized,
{
    let (loss0, analytic) = loss_fn(net)?;
    if !loss0.is_finite() {
        return Err(Error::GradCheckAborted(format!(
            "loss is non-finite at the evaluation point: {loss0}"
        )));
    }
    let analytic = analytic.to_flat();
    let n = net.param_count();
    if analytic.len() != n {
        return Err(Error::GradCheckAborted(
            "gradient buffer shape does not match the network".into(),
        ));
    }

    let sample: Vec<usize> = if n <= 100 {
        (0..n).collect()
    } else {
        let mut idx: Vec<usize> = (0..n).collect();
        for i in 0..120 {
            let j = rng.gen_range(i..n);
            idx.swap(i, j);
        }
        idx.truncate(120);
        idx
    };

    let mut theta = net.flatten_params();
    let mut max_rel = 0.0_f64;
    let mut worst = 0;
    for &i in &sample {
        let orig = theta[i];
        theta[i] = orig + step;
        net.set_params(&theta)?;
        let (lp, _) = loss_fn(net)?;
        theta[i] = orig - step;
        net.set_params(&theta)?;
        let (lm, _) = loss_fn(net)?;
        theta[i] = orig;
        if !lp.is_finite() || !lm.is_finite() {
            net.set_params(&theta)?;
            return Err(Error::GradCheckAborted(format!(
                "perturbed loss non-finite at parameter {i}"
            )));
        }
        let numeric = (lp - lm) / (2.0 * step);
        let denom = analytic[i].abs().max(numeric.abs()).max(1e-3);
        let rel = (analytic[i] - numeric).abs() / denom;
        if rel > max_rel {
            max_rel = rel;
            worst = i;
        }
    }
    net.set_params(&theta)?;
    Ok(GradCheckReport {
        checked: sample.len(),
        max_rel_error: max_rel,
        worst_param: worst,
        tol,
        passed: max_rel < tol,
    })
}
