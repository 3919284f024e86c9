//! The superposition autoencoder `h = WᵀW x`, its training, the direct
//! mono/poly feature constructions, and diagnostics read off `WᵀW`.

use std::io::Write;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::nn::{check_cols, checksum, gaussian_matrix};
use crate::optim::{check_finite_loss, epoch_batches, Optimizer, TrainConfig};
use crate::rng;
use crate::synthdata::Dataset;
use crate::tensor_io::TensorArchive;

pub const DEFAULT_REPRESENTED_TAU: f64 = 0.5;
pub const DEFAULT_ANTIPODAL_TAU: f64 = -0.5;

/// Output form of the autoencoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToyVariant {
    /// `WᵀW x`.
    #[default]
    Linear,
    /// `ReLU(WᵀW x + b)`.
    BiasRelu,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyModel {
    /// `m x n`.
    pub w: Array2<f64>,
    /// Output bias, zero and unused for [`ToyVariant::Linear`].
    pub b: Array1<f64>,
    pub variant: ToyVariant,
}

impl ToyModel {
    pub fn new(w: Array2<f64>, variant: ToyVariant) -> Result<Self> {
        ensure(w.iter().all(|v| v.is_finite()), || Error::InvalidConfig("non-finite weights".into()))?;
        let n = w.ncols();
        Ok(Self {
            w,
            b: Array1::zeros(n),
            variant,
        })
    }

    /// Gaussian entries scaled by `1/sqrt(n)`.
    pub fn init(n: usize, m: usize, variant: ToyVariant, seed: u64) -> Result<Self> {
        ensure(m >= 1 && m < n, || {
            Error::InvalidConfig(format!("need 1 <= m < n, got m = {m}, n = {n}"))
        })?;
        let mut r = rng::stream(seed, "toymodel.init");
        Self::new(gaussian_matrix(&mut r, m, n, 1.0 / (n as f64).sqrt()), variant)
    }

    pub fn n(&self) -> usize {
        self.w.ncols()
    }

    pub fn m(&self) -> usize {
        self.w.nrows()
    }

    pub fn gram(&self) -> Array2<f64> {
        self.w.t().dot(&self.w)
    }

    /// Row-wise reconstruction.
    pub fn reconstruct(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        check_cols(x, self.n(), "reconstruct")?;
        let lin = x.dot(&self.w.t()).dot(&self.w);
        Ok(match self.variant {
            ToyVariant::Linear => lin,
            ToyVariant::BiasRelu => (lin + &self.b).mapv(|v| v.max(0.0)),
        })
    }

    /// Hidden code `W x` per row.
    pub fn hidden(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        check_cols(x, self.n(), "hidden")?;
        Ok(x.dot(&self.w.t()))
    }

    /// Mean over rows of the squared reconstruction error.
    pub fn loss(&self, x: ArrayView2<'_, f64>) -> Result<f64> {
        let r = self.reconstruct(x)? - x;
        Ok(r.mapv(|v| v * v).sum() / x.nrows() as f64)
    }

    /// Loss with gradients for `W` and `b`.
    pub fn loss_and_grad(&self, x: ArrayView2<'_, f64>) -> Result<(f64, Array2<f64>, Array1<f64>)> {
        check_cols(x, self.n(), "loss_and_grad")?;
        let rows = x.nrows() as f64;
        let hidden = x.dot(&self.w.t());
        let lin = hidden.dot(&self.w);
        let (loss, delta) = match self.variant {
            ToyVariant::Linear => {
                let r = &lin - &x;
                let loss = r.mapv(|v| v * v).sum() / rows;
                (loss, r * (2.0 / rows))
            }
            ToyVariant::BiasRelu => {
                let pre = lin + &self.b;
                let mut r = pre.mapv(|v| v.max(0.0)) - x;
                let loss = r.mapv(|v| v * v).sum() / rows;
                ndarray::Zip::from(&mut r).and(&pre).for_each(|d, &z| {
                    *d = if z > 0.0 { *d * 2.0 / rows } else { 0.0 };
                });
                (loss, r)
            }
        };
        // d/dW of sum(delta ∘ X WᵀW) = W (Xᵀ delta + deltaᵀ X).
        let dg = x.t().dot(&delta);
        let gw = self.w.dot(&(&dg + &dg.t()));
        let gb = match self.variant {
            ToyVariant::Linear => Array1::zeros(self.n()),
            ToyVariant::BiasRelu => delta.sum_axis(Axis(0)),
        };
        Ok((loss, gw, gb))
    }

    pub fn checksum(&self) -> String {
        checksum([self.w.as_slice().expect("standard layout"), self.b.as_slice().expect("standard layout")])
    }

    pub fn to_archive(&self) -> TensorArchive {
        let mut a = TensorArchive::new();
        a.push_matrix("w", &self.w)
            .push_vector("b", &self.b)
            .push_scalar("bias_relu", f64::from(u8::from(self.variant == ToyVariant::BiasRelu)));
        a
    }

    pub fn from_archive(a: &TensorArchive) -> Result<Self> {
        let variant = if a.scalar("bias_relu")? != 0.0 {
            ToyVariant::BiasRelu
        } else {
            ToyVariant::Linear
        };
        let w = a.matrix("w")?;
        let b = a.vector("b")?;
        ensure(b.len() == w.ncols(), || Error::Format("bias length differs from n".into()))?;
        Ok(Self { w, b, variant })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_archive().save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_archive(&TensorArchive::load(path)?)
    }

    /// `W` as CSV, one row per hidden unit, header `w_0..w_{n-1}`.
    pub fn write_w_csv<W: Write>(&self, out: W) -> Result<()> {
        write_matrix_csv(&self.w, "w", out)
    }
}

pub fn write_matrix_csv<W: Write>(m: &Array2<f64>, prefix: &str, out: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(out);
    wr.write_record((0..m.ncols()).map(|i| format!("{prefix}_{i}")))?;
    for row in m.axis_iter(Axis(0)) {
        wr.write_record(row.iter().map(|v| v.to_string()))?;
    }
    wr.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedToy {
    pub model: ToyModel,
    /// Mean training loss per epoch.
    pub loss_history: Vec<f64>,
}

/// Gradient descent on the mean squared reconstruction error.
pub fn train_reconstruction(data: &Dataset, m: usize, variant: ToyVariant, cfg: &TrainConfig) -> Result<TrainedToy> {
    cfg.validate()?;
    ensure(!data.is_empty(), || Error::Empty("training set".into()))?;
    let mut model = ToyModel::init(data.n_features(), m, variant, cfg.seed)?;
    let mut opt = Optimizer::from_config(cfg);
    let mut shuffle = rng::stream(cfg.seed, "toymodel.batches");
    let batch = cfg.batch_len(data.len());
    let full_batch = batch >= data.len();
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut total = 0.0;
        let batches = if full_batch {
            Vec::new()
        } else {
            epoch_batches(data.len(), batch, &mut shuffle, false)
        };
        let views: Vec<Array2<f64>> = batches.iter().map(|idx| data.x.select(Axis(0), idx)).collect();
        let count = if full_batch { 1 } else { views.len() };
        for i in 0..count {
            let xb = if full_batch { data.x.view() } else { views[i].view() };
            let (loss, gw, gb) = model.loss_and_grad(xb)?;
            check_finite_loss(loss, epoch)?;
            total += loss * xb.nrows() as f64;
            let w = model.w.as_slice_mut().expect("standard layout");
            let b = model.b.as_slice_mut().expect("standard layout");
            let gw = gw.as_slice().expect("standard layout");
            let gb = gb.as_slice().expect("standard layout");
            if variant == ToyVariant::BiasRelu {
                opt.step(&mut [(w, gw), (b, gb)]);
            } else {
                opt.step(&mut [(w, gw)]);
            }
        }
        history.push(total / data.len() as f64);
    }
    let final_loss = history.last().copied().unwrap_or(f64::NAN);
    check_finite_loss(final_loss, cfg.epochs.saturating_sub(1))?;
    Ok(TrainedToy {
        model,
        loss_history: history,
    })
}

/// Indices whose diagonal Gram entry exceeds `tau`.
pub fn represented_features(gram: &Array2<f64>, tau: f64) -> Vec<usize> {
    (0..gram.nrows()).filter(|&i| gram[[i, i]] > tau).collect()
}

/// Unordered pairs `i < j` with `gram[i, j] < tau_neg`.
pub fn antipodal_pairs(gram: &Array2<f64>, tau_neg: f64) -> Vec<(usize, usize)> {
    let n = gram.nrows();
    let mut out = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if gram[[i, j]] < tau_neg {
                out.push((i, j));
            }
        }
    }
    out
}

/// One signed coordinate of an antipodal pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SignedIndex {
    pub index: usize,
    pub positive: bool,
}

impl SignedIndex {
    pub fn plus(index: usize) -> Self {
        Self { index, positive: true }
    }

    pub fn minus(index: usize) -> Self {
        Self { index, positive: false }
    }

    fn sign(self) -> f64 {
        if self.positive {
            1.0
        } else {
            -1.0
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FeatureConstruction {
    /// The selected coordinates, one concept per feature.
    MonoDirect { indices: Vec<usize> },
    /// `±x_i ± x_j` per pair, two concepts per feature.
    PolyAntipodal { pairs: Vec<(SignedIndex, SignedIndex)> },
    /// The autoencoder's hidden code `W x`.
    LearnedHidden,
}

impl FeatureConstruction {
    /// Coordinates `0..m`.
    pub fn mono_first(m: usize) -> Self {
        FeatureConstruction::MonoDirect { indices: (0..m).collect() }
    }

    /// Pairs `x_i - x_{i+m}` for `i < m`, covering all `2m` coordinates.
    pub fn poly_halves(m: usize) -> Self {
        FeatureConstruction::PolyAntipodal {
            pairs: (0..m).map(|i| (SignedIndex::plus(i), SignedIndex::minus(i + m))).collect(),
        }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        match self {
            FeatureConstruction::MonoDirect { indices } => {
                ensure(!indices.is_empty(), || Error::InvalidConfig("empty index set".into()))?;
                if let Some(&i) = indices.iter().find(|&&i| i >= n) {
                    return Err(Error::OutOfDomain(format!("index {i} >= n = {n}")));
                }
                Ok(())
            }
            FeatureConstruction::PolyAntipodal { pairs } => {
                ensure(!pairs.is_empty(), || Error::InvalidConfig("empty pair list".into()))?;
                let mut seen = vec![false; n];
                for (a, b) in pairs {
                    for s in [a, b] {
                        if s.index >= n {
                            return Err(Error::OutOfDomain(format!("index {} >= n = {n}", s.index)));
                        }
                        if seen[s.index] {
                            return Err(Error::InvalidConfig(format!("index {} used by two pairs", s.index)));
                        }
                        seen[s.index] = true;
                    }
                }
                Ok(())
            }
            FeatureConstruction::LearnedHidden => Ok(()),
        }
    }
}

pub fn extract_features(
    x: ArrayView2<'_, f64>,
    construction: &FeatureConstruction,
    model: Option<&ToyModel>,
) -> Result<Array2<f64>> {
    construction.validate(x.ncols())?;
    match construction {
        FeatureConstruction::MonoDirect { indices } => Ok(x.select(Axis(1), indices)),
        FeatureConstruction::PolyAntipodal { pairs } => {
            let mut out = Array2::zeros((x.nrows(), pairs.len()));
            for (k, (a, b)) in pairs.iter().enumerate() {
                let col = &x.column(a.index) * a.sign() + &x.column(b.index) * b.sign();
                out.column_mut(k).assign(&col);
            }
            Ok(out)
        }
        FeatureConstruction::LearnedHidden => {
            let model = model.ok_or_else(|| Error::InvalidConfig("learned_hidden needs a trained model".into()))?;
            model.hidden(x)
        }
    }
}
