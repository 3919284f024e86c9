//! Linear classifiers on frozen features, joint encoder finetuning, and the
//! cross-entropy family of losses (plain, non-negative, symmetric).

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::nn::{check_cols, log_sum_exp, softmax, LinearGrad, Mlp};
use crate::optim::{check_finite_loss, epoch_batches, Optimizer, TrainConfig};
use crate::rng;
use crate::synthdata::{perturb_inputs, NoiseKind, NoiseSpec};

/// Finite floor for `log 0` in the reverse cross-entropy term.
pub const SCE_LOG_CLAMP: f64 = -4.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProbeLoss {
    Ce,
    /// Cross-entropy on `W σ(f) + b`.
    Nce,
    /// `alpha * CE + beta * RCE`.
    Sce { alpha: f64, beta: f64 },
}

impl ProbeLoss {
    pub fn validate(&self) -> Result<()> {
        if let ProbeLoss::Sce { alpha, beta } = *self {
            ensure(alpha >= 0.0 && beta >= 0.0 && alpha + beta > 0.0, || {
                Error::InvalidConfig(format!("sce needs alpha, beta >= 0, not both zero; got ({alpha}, {beta})"))
            })?;
        }
        Ok(())
    }
}

/// The non-negativity map `σ` applied to features before the linear head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureActivation {
    #[default]
    Relu,
    Softplus,
}

impl FeatureActivation {
    pub fn apply(self, v: f64) -> f64 {
        match self {
            FeatureActivation::Relu => v.max(0.0),
            FeatureActivation::Softplus => v.max(0.0) + (-v.abs()).exp().ln_1p(),
        }
    }

    pub fn derivative(self, v: f64) -> f64 {
        match self {
            FeatureActivation::Relu => f64::from(u8::from(v > 0.0)),
            FeatureActivation::Softplus => 1.0 / (1.0 + (-v).exp()),
        }
    }
}

/// `C x d` weights and bias, with an optional feature map applied first.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeModel {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
    pub activation: Option<FeatureActivation>,
}

impl ProbeModel {
    pub fn zeros(num_classes: usize, dim: usize, activation: Option<FeatureActivation>) -> Self {
        Self {
            weights: Array2::zeros((num_classes, dim)),
            bias: Array1::zeros(num_classes),
            activation,
        }
    }

    pub fn num_classes(&self) -> usize {
        self.weights.nrows()
    }

    pub fn dim(&self) -> usize {
        self.weights.ncols()
    }

    fn transform(&self, features: ArrayView2<'_, f64>) -> Array2<f64> {
        match self.activation {
            Some(a) => features.mapv(|v| a.apply(v)),
            None => features.to_owned(),
        }
    }

    pub fn logits(&self, features: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        check_cols(features, self.dim(), "probe")?;
        Ok(self.transform(features).dot(&self.weights.t()) + &self.bias)
    }

    pub fn predict(&self, features: ArrayView2<'_, f64>) -> Result<Vec<usize>> {
        Ok(crate::nn::argmax_rows(self.logits(features)?.view()))
    }
}

/// `weights · max(features, 0) + bias` for one sample.
pub fn nce_forward(features: ArrayView1<'_, f64>, probe: &ProbeModel) -> Result<Array1<f64>> {
    if features.len() != probe.dim() {
        return Err(Error::DimensionMismatch(format!("{} features for a {}-dim probe", features.len(), probe.dim())));
    }
    let act = probe.activation.unwrap_or_default();
    Ok(probe.weights.dot(&features.mapv(|v| act.apply(v))) + &probe.bias)
}

fn check_label(logits: ArrayView1<'_, f64>, label: usize) -> Result<()> {
    ensure(label < logits.len(), || {
        Error::OutOfDomain(format!("label {label} >= {} classes", logits.len()))
    })?;
    ensure(logits.iter().all(|v| v.is_finite()), || Error::OutOfDomain("non-finite logits".into()))
}

/// `-log softmax(logits)[label]` and its gradient.
pub fn ce_loss(logits: ArrayView1<'_, f64>, label: usize) -> Result<(f64, Array1<f64>)> {
    check_label(logits, label)?;
    let lse = log_sum_exp(logits);
    let mut grad = logits.mapv(|z| (z - lse).exp());
    grad[label] -= 1.0;
    Ok((lse - logits[label], grad))
}

/// Symmetric cross-entropy with the reverse term `-A (1 - p_label)`.
pub fn sce_loss(logits: ArrayView1<'_, f64>, label: usize, alpha: f64, beta: f64) -> Result<(f64, Array1<f64>)> {
    ProbeLoss::Sce { alpha, beta }.validate()?;
    let (ce, ce_grad) = ce_loss(logits, label)?;
    let p = softmax(logits);
    let py = p[label];
    let rce = -SCE_LOG_CLAMP * (1.0 - py);
    let mut rce_grad = p.mapv(|pj| -SCE_LOG_CLAMP * py * pj);
    rce_grad[label] += SCE_LOG_CLAMP * py;
    Ok((alpha * ce + beta * rce, ce_grad * alpha + rce_grad * beta))
}

/// Mean loss over rows and the per-row logit gradient, already divided by
/// the row count.
pub fn batch_loss(logits: ArrayView2<'_, f64>, labels: &[usize], loss: ProbeLoss) -> Result<(f64, Array2<f64>)> {
    let n = logits.nrows();
    ensure(n == labels.len(), || Error::DimensionMismatch("labels vs logits".into()))?;
    ensure(n > 0, || Error::Empty("batch".into()))?;
    let mut grad = Array2::zeros(logits.raw_dim());
    let mut total = 0.0;
    for ((row, &y), mut g) in logits.axis_iter(Axis(0)).zip(labels).zip(grad.axis_iter_mut(Axis(0))) {
        let (l, gr) = match loss {
            ProbeLoss::Ce | ProbeLoss::Nce => ce_loss(row, y)?,
            ProbeLoss::Sce { alpha, beta } => sce_loss(row, y, alpha, beta)?,
        };
        total += l;
        g.assign(&(gr / n as f64));
    }
    Ok((total / n as f64, grad))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeConfig {
    pub loss: ProbeLoss,
    /// Apply `σ` to features even when the loss is not [`ProbeLoss::Nce`].
    pub nonneg: bool,
    pub activation: FeatureActivation,
    pub train: TrainConfig,
    pub subsample_fraction: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            loss: ProbeLoss::Ce,
            nonneg: false,
            activation: FeatureActivation::Relu,
            train: TrainConfig::default().with_lr(0.05).with_epochs(300),
            subsample_fraction: 1.0,
        }
    }
}

impl ProbeConfig {
    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        self.train.validate()?;
        ensure(self.subsample_fraction > 0.0 && self.subsample_fraction <= 1.0, || {
            Error::InvalidConfig(format!("subsample_fraction must lie in (0, 1], got {}", self.subsample_fraction))
        })
    }

    pub fn head_activation(&self) -> Option<FeatureActivation> {
        (self.nonneg || self.loss == ProbeLoss::Nce).then_some(self.activation)
    }

    pub fn with_loss(mut self, loss: ProbeLoss) -> Self {
        self.loss = loss;
        self
    }

    pub fn with_train(mut self, train: TrainConfig) -> Self {
        self.train = train;
        self
    }

    pub fn with_subsample(mut self, fraction: f64) -> Self {
        self.subsample_fraction = fraction;
        self
    }
}

fn check_labels(labels: &[usize], num_classes: usize, rows: usize) -> Result<()> {
    ensure(labels.len() == rows, || {
        Error::DimensionMismatch(format!("{} labels for {rows} rows", labels.len()))
    })?;
    ensure(rows > 0, || Error::Empty("training set".into()))?;
    ensure(num_classes >= 2, || Error::InvalidConfig("need at least two classes".into()))?;
    if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
        return Err(Error::OutOfDomain(format!("label {bad} >= {num_classes} classes")));
    }
    Ok(())
}

fn subsample_rows(rows: usize, fraction: f64, seed: u64) -> Vec<usize> {
    if fraction >= 1.0 {
        return (0..rows).collect();
    }
    use rand::seq::SliceRandom;
    let mut order: Vec<usize> = (0..rows).collect();
    order.shuffle(&mut rng::stream(seed, "probe.subsample"));
    let k = ((rows as f64 * fraction).round() as usize).max(1);
    let mut keep = order[..k].to_vec();
    keep.sort_unstable();
    keep
}

fn batches_for(rows: usize, cfg: &TrainConfig, rng: &mut rng::StreamRng) -> Vec<Option<Vec<usize>>> {
    let batch = cfg.batch_len(rows);
    if batch >= rows {
        vec![None]
    } else {
        epoch_batches(rows, batch, rng, false).into_iter().map(Some).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeRun {
    pub probe: ProbeModel,
    pub loss_history: Vec<f64>,
    pub train_accuracy: f64,
}

/// Fit a linear head on fixed features.
pub fn train_probe(features: ArrayView2<'_, f64>, labels: &[usize], num_classes: usize, cfg: &ProbeConfig) -> Result<ProbeRun> {
    cfg.validate()?;
    check_labels(labels, num_classes, features.nrows())?;
    let keep = subsample_rows(features.nrows(), cfg.subsample_fraction, cfg.train.seed);
    let mut probe = ProbeModel::zeros(num_classes, features.ncols(), cfg.head_activation());
    let x = probe.transform(features.select(Axis(0), &keep).view());
    let y: Vec<usize> = keep.iter().map(|&i| labels[i]).collect();
    let mut opt = Optimizer::from_config(&cfg.train);
    let mut shuffle = rng::stream(cfg.train.seed, "probe.batches");
    let mut history = Vec::with_capacity(cfg.train.epochs);
    for epoch in 0..cfg.train.epochs {
        let mut total = 0.0;
        for idx in batches_for(x.nrows(), &cfg.train, &mut shuffle) {
            let (xb, yb) = match &idx {
                Some(idx) => (x.select(Axis(0), idx), idx.iter().map(|&i| y[i]).collect::<Vec<_>>()),
                None => (x.clone(), y.clone()),
            };
            let logits = xb.dot(&probe.weights.t()) + &probe.bias;
            let (loss, dlogits) = batch_loss(logits.view(), &yb, cfg.loss)?;
            check_finite_loss(loss, epoch)?;
            total += loss * yb.len() as f64;
            let gw = dlogits.t().dot(&xb);
            let gb = dlogits.sum_axis(Axis(0));
            opt.step(&mut [
                (probe.weights.as_slice_mut().expect("standard layout"), gw.as_slice().expect("standard layout")),
                (probe.bias.as_slice_mut().expect("standard layout"), gb.as_slice().expect("standard layout")),
            ]);
        }
        history.push(total / y.len() as f64);
    }
    let train_accuracy = accuracy(&crate::nn::argmax_rows((x.dot(&probe.weights.t()) + &probe.bias).view()), &y)?;
    Ok(ProbeRun {
        probe,
        loss_history: history,
        train_accuracy,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct FinetuneRun {
    pub encoder: Mlp,
    pub probe: ProbeModel,
    pub loss_history: Vec<f64>,
    pub train_accuracy: f64,
}

/// Train encoder and a zero-initialized head jointly on raw inputs.
pub fn finetune(encoder: &Mlp, x: ArrayView2<'_, f64>, labels: &[usize], num_classes: usize, cfg: &ProbeConfig) -> Result<FinetuneRun> {
    cfg.validate()?;
    check_cols(x, encoder.input_dim(), "finetune")?;
    check_labels(labels, num_classes, x.nrows())?;
    let keep = subsample_rows(x.nrows(), cfg.subsample_fraction, cfg.train.seed);
    let xs = x.select(Axis(0), &keep);
    let ys: Vec<usize> = keep.iter().map(|&i| labels[i]).collect();
    let mut enc = encoder.clone();
    let mut probe = ProbeModel::zeros(num_classes, enc.output_dim(), cfg.head_activation());
    let mut opt = Optimizer::from_config(&cfg.train);
    let mut shuffle = rng::stream(cfg.train.seed, "probe.finetune.batches");
    let mut history = Vec::with_capacity(cfg.train.epochs);
    for epoch in 0..cfg.train.epochs {
        let mut total = 0.0;
        for idx in batches_for(xs.nrows(), &cfg.train, &mut shuffle) {
            let (xb, yb) = match &idx {
                Some(idx) => (xs.select(Axis(0), idx), idx.iter().map(|&i| ys[i]).collect::<Vec<_>>()),
                None => (xs.clone(), ys.clone()),
            };
            let loss = finetune_step(&mut enc, &mut probe, &mut opt, xb.view(), &yb, cfg.loss)?;
            check_finite_loss(loss, epoch)?;
            total += loss * yb.len() as f64;
        }
        history.push(total / ys.len() as f64);
    }
    let train_accuracy = accuracy(&probe.predict(enc.forward(xs.view()).view())?, &ys)?;
    Ok(FinetuneRun {
        encoder: enc,
        probe,
        loss_history: history,
        train_accuracy,
    })
}

/// Loss and gradients of the joint model on one batch.
pub fn finetune_loss_and_grads(
    enc: &Mlp,
    probe: &ProbeModel,
    x: ArrayView2<'_, f64>,
    labels: &[usize],
    loss: ProbeLoss,
) -> Result<(f64, Vec<LinearGrad>, LinearGrad)> {
    let cache = enc.forward_cached(x);
    let f = &cache.output;
    let h = probe.transform(f.view());
    let logits = h.dot(&probe.weights.t()) + &probe.bias;
    let (value, dlogits) = batch_loss(logits.view(), labels, loss)?;
    let head = LinearGrad {
        w: dlogits.t().dot(&h),
        b: dlogits.sum_axis(Axis(0)),
    };
    let mut df = dlogits.dot(&probe.weights);
    if let Some(a) = probe.activation {
        ndarray::Zip::from(&mut df).and(f).for_each(|d, &v| *d *= a.derivative(v));
    }
    let (enc_grads, _) = enc.backward(&cache, df.view());
    Ok((value, enc_grads, head))
}

fn finetune_step(
    enc: &mut Mlp,
    probe: &mut ProbeModel,
    opt: &mut Optimizer,
    x: ArrayView2<'_, f64>,
    labels: &[usize],
    loss: ProbeLoss,
) -> Result<f64> {
    let (value, enc_grads, head) = finetune_loss_and_grads(enc, probe, x, labels, loss)?;
    let mut blocks = enc.param_blocks(&enc_grads);
    blocks.push((probe.weights.as_slice_mut().expect("standard layout"), head.w.as_slice().expect("standard layout")));
    blocks.push((probe.bias.as_slice_mut().expect("standard layout"), head.b.as_slice().expect("standard layout")));
    opt.step(&mut blocks);
    Ok(value)
}

pub fn accuracy(pred: &[usize], labels: &[usize]) -> Result<f64> {
    ensure(!labels.is_empty(), || Error::Empty("evaluation set".into()))?;
    ensure(pred.len() == labels.len(), || Error::DimensionMismatch("predictions vs labels".into()))?;
    Ok(pred.iter().zip(labels).filter(|(a, b)| a == b).count() as f64 / labels.len() as f64)
}

fn check_eval_noise(noise: Option<&NoiseSpec>) -> Result<()> {
    if let Some(n) = noise {
        ensure(n.kind != NoiseKind::LabelSymmetric, || {
            Error::InvalidConfig("label noise is never applied at evaluation".into())
        })?;
    }
    Ok(())
}

/// Top-1 accuracy on precomputed features.
pub fn evaluate(probe: &ProbeModel, features: ArrayView2<'_, f64>, labels: &[usize]) -> Result<f64> {
    accuracy(&probe.predict(features)?, labels)
}

/// Top-1 accuracy through an arbitrary feature map, with optional input noise
/// applied to the raw inputs first.
pub fn evaluate_with<F>(probe: &ProbeModel, x: ArrayView2<'_, f64>, labels: &[usize], noise: Option<&NoiseSpec>, features: F) -> Result<f64>
where
    F: Fn(ArrayView2<'_, f64>) -> Result<Array2<f64>>,
{
    check_eval_noise(noise)?;
    ensure(x.nrows() > 0, || Error::Empty("evaluation set".into()))?;
    let f = match noise {
        Some(n) => features(perturb_inputs(&x.to_owned(), n)?.view())?,
        None => features(x)?,
    };
    evaluate(probe, f.view(), labels)
}

/// Top-1 accuracy of a finetuned encoder and head.
pub fn evaluate_encoder(probe: &ProbeModel, encoder: &Mlp, x: ArrayView2<'_, f64>, labels: &[usize], noise: Option<&NoiseSpec>) -> Result<f64> {
    evaluate_with(probe, x, labels, noise, |v| {
        check_cols(v, encoder.input_dim(), "encoder")?;
        Ok(encoder.forward(v))
    })
}
