//! Contrastive pretraining with InfoNCE and its non-negative variant.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::nn::{check_cols, log_sum_exp, Mlp};
use crate::optim::{check_finite_loss, epoch_batches, Optimizer, TrainConfig};
use crate::rng;

const NORM_EPS: f64 = 1e-8;

/// Similarity used inside InfoNCE: `<g(u), g(v)> / temperature`, optionally
/// on unit-normalized embeddings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Similarity {
    pub temperature: f64,
    pub cosine: bool,
}

impl Default for Similarity {
    fn default() -> Self {
        Self {
            temperature: 1.0,
            cosine: false,
        }
    }
}

impl Similarity {
    pub fn cosine(temperature: f64) -> Self {
        Self {
            temperature,
            cosine: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure(self.temperature.is_finite() && self.temperature > 0.0, || {
            Error::InvalidConfig(format!("temperature must be positive, got {}", self.temperature))
        })
    }
}

/// Map raw rows to the vectors whose dot products form the scores.
fn embed(raw: ArrayView2<'_, f64>, nonneg: bool, sim: Similarity) -> (Array2<f64>, Array1<f64>) {
    let mut u = if nonneg { raw.mapv(|v| v.max(0.0)) } else { raw.to_owned() };
    let mut norms = Array1::ones(u.nrows());
    if sim.cosine {
        for (mut row, n) in u.axis_iter_mut(Axis(0)).zip(norms.iter_mut()) {
            *n = row.dot(&row).sqrt().max(NORM_EPS);
            row /= *n;
        }
    }
    let scale = sim.temperature.sqrt();
    u /= scale;
    (u, norms)
}

/// Backpropagate through [`embed`].
fn embed_backward(raw: ArrayView2<'_, f64>, u: &Array2<f64>, norms: &Array1<f64>, du: Array2<f64>, nonneg: bool, sim: Similarity) -> Array2<f64> {
    let scale = sim.temperature.sqrt();
    let mut d = du / scale;
    if sim.cosine {
        let unit = u * scale;
        for ((mut drow, urow), &n) in d.axis_iter_mut(Axis(0)).zip(unit.axis_iter(Axis(0))).zip(norms) {
            let proj = drow.dot(&urow);
            let g = (&drow - &(&urow * proj)) / n;
            drow.assign(&g);
        }
    }
    if nonneg {
        Zip::from(&mut d).and(raw).for_each(|g, &v| {
            if v <= 0.0 {
                *g = 0.0;
            }
        });
    }
    d
}

#[derive(Debug, Clone, PartialEq)]
pub struct InfoNceGrad {
    pub loss: f64,
    pub anchor: Array1<f64>,
    pub positive: Array1<f64>,
    pub negatives: Array2<f64>,
}

/// `-log[e^{s+} / (e^{s+} + (1/M) Σ e^{s_i})]` for one anchor.
pub fn infonce_loss(
    anchor: ArrayView1<'_, f64>,
    positive: ArrayView1<'_, f64>,
    negatives: ArrayView2<'_, f64>,
    nonneg: bool,
    sim: Similarity,
) -> Result<InfoNceGrad> {
    sim.validate()?;
    let d = anchor.len();
    ensure(negatives.nrows() >= 1, || Error::InvalidConfig("need at least one negative".into()))?;
    ensure(positive.len() == d && negatives.ncols() == d, || {
        Error::DimensionMismatch("anchor, positive and negatives must share a width".into())
    })?;
    let m = negatives.nrows();
    let mut raw = Array2::zeros((m + 2, d));
    raw.row_mut(0).assign(&anchor);
    raw.row_mut(1).assign(&positive);
    raw.slice_mut(ndarray::s![2.., ..]).assign(&negatives);
    let (u, norms) = embed(raw.view(), nonneg, sim);
    let ua = u.row(0);
    let s_pos = ua.dot(&u.row(1));
    let s_neg: Array1<f64> = (0..m).map(|i| ua.dot(&u.row(i + 2))).collect();
    let neg_term = log_sum_exp(s_neg.view()) - (m as f64).ln();
    let log_z = log_sum_exp(ndarray::array![s_pos, neg_term].view());
    let loss = log_z - s_pos;
    let w_pos = (s_pos - log_z).exp();
    let w_neg = s_neg.mapv(|s| (s - (m as f64).ln() - log_z).exp());
    let mut du = Array2::zeros(u.raw_dim());
    {
        let coef = w_pos - 1.0;
        let mut da = &u.row(1) * coef;
        for i in 0..m {
            da = da + &u.row(i + 2) * w_neg[i];
            du.row_mut(i + 2).assign(&(&ua * w_neg[i]));
        }
        du.row_mut(0).assign(&da);
        du.row_mut(1).assign(&(&ua * coef));
    }
    let g = embed_backward(raw.view(), &u, &norms, du, nonneg, sim);
    Ok(InfoNceGrad {
        loss,
        anchor: g.row(0).to_owned(),
        positive: g.row(1).to_owned(),
        negatives: g.slice(ndarray::s![2.., ..]).to_owned(),
    })
}

/// Mean InfoNCE over a batch where row `i` of `positives` is the positive for
/// anchor `i` and the other anchors are its negatives. Returns the loss and
/// gradients for both inputs.
pub fn infonce_batch(anchors: ArrayView2<'_, f64>, positives: ArrayView2<'_, f64>, nonneg: bool, sim: Similarity) -> Result<(f64, Array2<f64>, Array2<f64>)> {
    sim.validate()?;
    let b = anchors.nrows();
    ensure(b >= 2, || Error::InvalidConfig("batch needs at least two rows".into()))?;
    ensure(positives.dim() == anchors.dim(), || Error::DimensionMismatch("anchor and positive batches differ".into()))?;
    let m = (b - 1) as f64;
    let (ua, na) = embed(anchors, nonneg, sim);
    let (up, np) = embed(positives, nonneg, sim);
    let s = ua.dot(&ua.t());
    let mut ds = Array2::<f64>::zeros((b, b));
    let mut dpos = Array1::<f64>::zeros(b);
    let mut total = 0.0;
    for i in 0..b {
        let s_pos = ua.row(i).dot(&up.row(i));
        let neg: Array1<f64> = (0..b).filter(|&j| j != i).map(|j| s[[i, j]]).collect();
        let neg_term = log_sum_exp(neg.view()) - m.ln();
        let log_z = log_sum_exp(ndarray::array![s_pos, neg_term].view());
        total += log_z - s_pos;
        dpos[i] = ((s_pos - log_z).exp() - 1.0) / b as f64;
        for j in 0..b {
            if j != i {
                ds[[i, j]] = (s[[i, j]] - m.ln() - log_z).exp() / b as f64;
            }
        }
    }
    let mut dua = (&ds + &ds.t()).dot(&ua);
    let mut dup = Array2::zeros(up.raw_dim());
    for i in 0..b {
        let row = &dua.row(i) + &(&up.row(i) * dpos[i]);
        dua.row_mut(i).assign(&row);
        dup.row_mut(i).assign(&(&ua.row(i) * dpos[i]));
    }
    let da = embed_backward(anchors, &ua, &na, dua, nonneg, sim);
    let dp = embed_backward(positives, &up, &np, dup, nonneg, sim);
    Ok((total / b as f64, da, dp))
}

/// Synthetic augmentation: independent coordinate masking then Gaussian jitter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentSpec {
    pub gaussian_std: f64,
    pub mask_prob: f64,
    pub seed: u64,
}

impl Default for AugmentSpec {
    fn default() -> Self {
        Self {
            gaussian_std: 0.1,
            mask_prob: 0.3,
            seed: 0,
        }
    }
}

impl AugmentSpec {
    pub fn validate(&self) -> Result<()> {
        ensure(self.gaussian_std.is_finite() && self.gaussian_std >= 0.0, || {
            Error::InvalidConfig("gaussian_std must be >= 0".into())
        })?;
        ensure((0.0..=1.0).contains(&self.mask_prob), || Error::InvalidConfig("mask_prob must lie in [0, 1]".into()))
    }
}

fn augment_into<R: Rng + ?Sized>(rng: &mut R, x: ArrayView2<'_, f64>, std: f64, mask: f64) -> Array2<f64> {
    x.mapv(|v| {
        let u: f64 = rng.random();
        let z: f64 = rng.sample(StandardNormal);
        let kept = if u >= mask { v } else { 0.0 };
        kept + std * z
    })
}

/// Two independently augmented views of `x`.
pub fn augment(x: ArrayView1<'_, f64>, spec: &AugmentSpec) -> Result<(Array1<f64>, Array1<f64>)> {
    spec.validate()?;
    let mut r = rng::stream(spec.seed, "ncl.augment");
    let row = x.insert_axis(Axis(0));
    let a = augment_into(&mut r, row, spec.gaussian_std, spec.mask_prob);
    let b = augment_into(&mut r, row, spec.gaussian_std, spec.mask_prob);
    Ok((a.row(0).to_owned(), b.row(0).to_owned()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NclConfig {
    pub hidden: Vec<usize>,
    pub output_dim: usize,
    pub nonneg: bool,
    pub similarity: Similarity,
    pub gaussian_std: f64,
    pub mask_prob: f64,
    pub train: TrainConfig,
}

impl Default for NclConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64, 64],
            output_dim: 32,
            nonneg: false,
            similarity: Similarity::default(),
            gaussian_std: 0.1,
            mask_prob: 0.3,
            train: TrainConfig::default().with_lr(1e-3).with_epochs(20).with_batch(Some(128)),
        }
    }
}

impl NclConfig {
    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.similarity.validate()?;
        AugmentSpec {
            gaussian_std: self.gaussian_std,
            mask_prob: self.mask_prob,
            seed: 0,
        }
        .validate()?;
        ensure(self.output_dim >= 1 && self.hidden.iter().all(|&h| h >= 1), || {
            Error::InvalidConfig("layer widths must be positive".into())
        })
    }

    pub fn with_nonneg(mut self, nonneg: bool) -> Self {
        self.nonneg = nonneg;
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NclRun {
    /// Outputs `f₊ = ReLU(f)` when trained non-negative.
    pub encoder: Mlp,
    pub loss_history: Vec<f64>,
}

/// Fresh encoder with uniform fan-in initialization.
pub fn init_encoder(input: usize, cfg: &NclConfig) -> Result<Mlp> {
    let mut widths = vec![input];
    widths.extend(&cfg.hidden);
    widths.push(cfg.output_dim);
    Mlp::new(&mut rng::stream(cfg.train.seed, "ncl.init"), &widths, false)
}

/// InfoNCE pretraining with in-batch negatives; incomplete final batches are
/// dropped.
pub fn pretrain(x: ArrayView2<'_, f64>, cfg: &NclConfig) -> Result<NclRun> {
    cfg.validate()?;
    let rows = x.nrows();
    let batch = cfg.train.batch_len(rows);
    ensure(batch >= 2, || Error::InvalidConfig("contrastive batches need at least two rows".into()))?;
    let mut enc = init_encoder(x.ncols(), cfg)?;
    check_cols(x, enc.input_dim(), "pretrain")?;
    let mut opt = Optimizer::from_config(&cfg.train);
    let mut shuffle = rng::stream(cfg.train.seed, "ncl.batches");
    let mut aug = rng::stream(cfg.train.seed, "ncl.augment");
    let mut history = Vec::with_capacity(cfg.train.epochs);
    for epoch in 0..cfg.train.epochs {
        let mut total = 0.0;
        let mut count = 0usize;
        for idx in epoch_batches(rows, batch, &mut shuffle, true) {
            let xb = x.select(Axis(0), &idx);
            let va = augment_into(&mut aug, xb.view(), cfg.gaussian_std, cfg.mask_prob);
            let vp = augment_into(&mut aug, xb.view(), cfg.gaussian_std, cfg.mask_prob);
            let ca = enc.forward_cached(va.view());
            let cp = enc.forward_cached(vp.view());
            let (loss, da, dp) = infonce_batch(ca.output.view(), cp.output.view(), cfg.nonneg, cfg.similarity)?;
            check_finite_loss(loss, epoch)?;
            let (mut ga, _) = enc.backward(&ca, da.view());
            let (gp, _) = enc.backward(&cp, dp.view());
            for (a, p) in ga.iter_mut().zip(&gp) {
                a.w += &p.w;
                a.b += &p.b;
            }
            opt.step(&mut enc.param_blocks(&ga));
            total += loss;
            count += 1;
        }
        history.push(if count > 0 { total / count as f64 } else { f64::NAN });
    }
    enc.output_relu = cfg.nonneg;
    Ok(NclRun {
        encoder: enc,
        loss_history: history,
    })
}
