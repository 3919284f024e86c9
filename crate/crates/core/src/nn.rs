//! Dense layers, a ReLU multilayer perceptron with manual backpropagation,
//! and small numerical helpers.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::tensor_io::TensorArchive;

pub fn relu(x: f64) -> f64 {
    x.max(0.0)
}

pub fn relu_array(a: &Array2<f64>) -> Array2<f64> {
    a.mapv(relu)
}

/// Numerically stable `ln(sum(exp(v)))`.
pub fn log_sum_exp(v: ArrayView1<'_, f64>) -> f64 {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

pub fn softmax(v: ArrayView1<'_, f64>) -> Array1<f64> {
    let lse = log_sum_exp(v);
    v.mapv(|x| (x - lse).exp())
}

/// Row-wise argmax, lowest index on ties.
pub fn argmax_rows(a: ArrayView2<'_, f64>) -> Vec<usize> {
    a.axis_iter(Axis(0)).map(crate::synthdata::argmax).collect()
}

/// Hex SHA-256 over the little-endian bytes of every array, in order.
pub fn checksum<'a>(arrays: impl IntoIterator<Item = &'a [f64]>) -> String {
    let mut h = Sha256::new();
    for a in arrays {
        h.update((a.len() as u64).to_le_bytes());
        for v in a {
            h.update(v.to_le_bytes());
        }
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

pub fn gaussian_matrix<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize, std: f64) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || std * rng.sample::<f64, _>(StandardNormal))
}

pub fn uniform_matrix<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize, bound: f64) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-bound..=bound))
}

pub(crate) fn check_cols(x: ArrayView2<'_, f64>, n: usize, what: &str) -> Result<()> {
    if x.ncols() != n {
        return Err(Error::DimensionMismatch(format!("{what}: expected {n} columns, got {}", x.ncols())));
    }
    Ok(())
}

/// Affine map `y = W x + b` with `W` stored as `out x in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearGrad {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl Linear {
    /// Uniform `(-1/sqrt(in), 1/sqrt(in))` initialization for weights and bias.
    pub fn init<R: Rng + ?Sized>(rng: &mut R, input: usize, output: usize) -> Self {
        let bound = 1.0 / (input as f64).sqrt();
        Self {
            w: uniform_matrix(rng, output, input, bound),
            b: Array1::from_shape_simple_fn(output, || rng.random_range(-bound..=bound)),
        }
    }

    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            w: Array2::zeros((output, input)),
            b: Array1::zeros(output),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.w.nrows()
    }

    /// Batch forward, rows are samples.
    pub fn forward(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        x.dot(&self.w.t()) + &self.b
    }

    /// Gradients for upstream `dy`, plus the gradient with respect to `x`.
    pub fn backward(&self, x: ArrayView2<'_, f64>, dy: ArrayView2<'_, f64>) -> (LinearGrad, Array2<f64>) {
        let grad = LinearGrad {
            w: dy.t().dot(&x),
            b: dy.sum_axis(Axis(0)),
        };
        (grad, dy.dot(&self.w))
    }
}

/// ReLU MLP; hidden layers always use ReLU, the output optionally.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub output_relu: bool,
}

/// Activations kept from a forward pass for backpropagation.
#[derive(Debug, Clone)]
pub struct MlpCache {
    /// Input to each layer (post-activation of the previous one).
    inputs: Vec<Array2<f64>>,
    /// Pre-activation of each layer.
    pre: Vec<Array2<f64>>,
    pub output: Array2<f64>,
}

impl Mlp {
    pub fn new<R: Rng + ?Sized>(rng: &mut R, widths: &[usize], output_relu: bool) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(Error::InvalidConfig("mlp needs at least two positive widths".into()));
        }
        Ok(Self {
            layers: widths.windows(2).map(|w| Linear::init(rng, w[0], w[1])).collect(),
            output_relu,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].output_dim()
    }

    fn activates(&self, i: usize) -> bool {
        i + 1 < self.layers.len() || self.output_relu
    }

    pub fn forward(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut h = x.to_owned();
        for (i, l) in self.layers.iter().enumerate() {
            h = l.forward(h.view());
            if self.activates(i) {
                h.mapv_inplace(relu);
            }
        }
        h
    }

    pub fn forward_cached(&self, x: ArrayView2<'_, f64>) -> MlpCache {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut h = x.to_owned();
        for (i, l) in self.layers.iter().enumerate() {
            let z = l.forward(h.view());
            inputs.push(h);
            h = if self.activates(i) { z.mapv(relu) } else { z.clone() };
            pre.push(z);
        }
        MlpCache { inputs, pre, output: h }
    }

    /// Per-layer gradients and the input gradient for upstream `dout`.
    pub fn backward(&self, cache: &MlpCache, dout: ArrayView2<'_, f64>) -> (Vec<LinearGrad>, Array2<f64>) {
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut d = dout.to_owned();
        for i in (0..self.layers.len()).rev() {
            if self.activates(i) {
                ndarray::Zip::from(&mut d).and(&cache.pre[i]).for_each(|g, &z| {
                    if z <= 0.0 {
                        *g = 0.0;
                    }
                });
            }
            let (g, dx) = self.layers[i].backward(cache.inputs[i].view(), d.view());
            grads.push(g);
            d = dx;
        }
        grads.reverse();
        (grads, d)
    }

    /// Flat `(param, grad)` blocks in a fixed order for the optimizer.
    pub fn param_blocks<'a>(&'a mut self, grads: &'a [LinearGrad]) -> Vec<(&'a mut [f64], &'a [f64])> {
        let mut out = Vec::with_capacity(2 * self.layers.len());
        for (l, g) in self.layers.iter_mut().zip(grads) {
            out.push((l.w.as_slice_mut().expect("standard layout"), g.w.as_slice().expect("standard layout")));
            out.push((l.b.as_slice_mut().expect("standard layout"), g.b.as_slice().expect("standard layout")));
        }
        out
    }

    pub fn checksum(&self) -> String {
        checksum(self.layers.iter().flat_map(|l| {
            [l.w.as_slice().expect("standard layout"), l.b.as_slice().expect("standard layout")]
        }))
    }

    pub fn to_archive(&self, prefix: &str, archive: &mut TensorArchive) {
        archive.push_scalar(&format!("{prefix}.output_relu"), f64::from(u8::from(self.output_relu)));
        archive.push_scalar(&format!("{prefix}.layers"), self.layers.len() as f64);
        for (i, l) in self.layers.iter().enumerate() {
            archive.push_matrix(&format!("{prefix}.{i}.w"), &l.w);
            archive.push_vector(&format!("{prefix}.{i}.b"), &l.b);
        }
    }

    pub fn from_archive(prefix: &str, archive: &TensorArchive) -> Result<Self> {
        let output_relu = archive.scalar(&format!("{prefix}.output_relu"))? != 0.0;
        let count = archive.scalar(&format!("{prefix}.layers"))? as usize;
        let layers = (0..count)
            .map(|i| {
                Ok(Linear {
                    w: archive.matrix(&format!("{prefix}.{i}.w"))?,
                    b: archive.vector(&format!("{prefix}.{i}.b"))?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        if layers.is_empty() {
            return Err(Error::Format("mlp without layers".into()));
        }
        Ok(Self { layers, output_relu })
    }
}

#[cfg(test)]
pub(crate) mod gradcheck {
    /// Relative error `|a - n| / max(|a|, |n|, floor)`.
    pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
        let scale = analytic.abs().max(numeric.abs()).max(1e-6);
        (analytic - numeric).abs() / scale
    }

    /// Central finite difference of `f` with respect to `params[i]`.
    pub fn central(params: &mut [f64], i: usize, h: f64, mut f: impl FnMut(&[f64]) -> f64) -> f64 {
        let orig = params[i];
        params[i] = orig + h;
        let up = f(params);
        params[i] = orig - h;
        let down = f(params);
        params[i] = orig;
        (up - down) / (2.0 * h)
    }
}
