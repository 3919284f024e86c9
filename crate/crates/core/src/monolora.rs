//! Low-rank adapters: standard `W0 x + A B x` and the sparse variant
//! `W0 x + σ(A σ(B σ(x)))`, plus a toy finetuning harness.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::nn::{argmax_rows, check_cols, checksum, gaussian_matrix, Mlp};
use crate::optim::{check_finite_loss, epoch_batches, Optimizer, TrainConfig};
use crate::probe::{accuracy, batch_loss, ProbeLoss};
use crate::rng;
use crate::synthdata::Dataset;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdapterVariant {
    #[default]
    Standard,
    Mono,
}

/// Where the innermost `σ` of the mono variant sits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MonoOrder {
    /// `σ(A σ(B σ(x)))`.
    #[default]
    AsPrinted,
    /// `σ(A σ(B x))`.
    HiddenFirst,
}

/// Frozen `d x k` base weight with a rank-`r` update `A (d x r)`, `B (r x k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AdapterPair {
    pub w0: Array2<f64>,
    pub a: Array2<f64>,
    pub b: Array2<f64>,
    pub variant: AdapterVariant,
    pub order: MonoOrder,
    /// Multiplier on the adapter output, `alpha / r`.
    pub scale: f64,
}

/// Intermediate values of a batch forward pass.
#[derive(Debug, Clone)]
pub struct AdapterCache {
    x_in: Array2<f64>,
    t: Array2<f64>,
    u: Array2<f64>,
    v: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdapterGrad {
    pub a: Array2<f64>,
    pub b: Array2<f64>,
}

impl AdapterPair {
    pub fn new(w0: Array2<f64>, a: Array2<f64>, b: Array2<f64>, variant: AdapterVariant) -> Result<Self> {
        let (d, k) = w0.dim();
        let r = a.ncols();
        ensure(a.nrows() == d && b.dim() == (r, k), || {
            Error::DimensionMismatch(format!("w0 {d}x{k}, a {:?}, b {:?}", a.dim(), b.dim()))
        })?;
        ensure(r >= 1 && 2 * r <= d.min(k), || {
            Error::InvalidConfig(format!("rank {r} exceeds min({d}, {k}) / 2"))
        })?;
        Ok(Self {
            w0,
            a,
            b,
            variant,
            order: MonoOrder::AsPrinted,
            scale: 1.0,
        })
    }

    /// `A = 0`, `B` Gaussian with standard deviation `1/sqrt(k)`.
    pub fn init(w0: Array2<f64>, r: usize, variant: AdapterVariant, seed: u64) -> Result<Self> {
        let (d, k) = w0.dim();
        let b = gaussian_matrix(&mut rng::stream(seed, "monolora.init"), r, k, 1.0 / (k as f64).sqrt());
        Self::new(w0, Array2::zeros((d, r)), b, variant)
    }

    pub fn with_order(mut self, order: MonoOrder) -> Self {
        self.order = order;
        self
    }

    pub fn with_scale(mut self, scale: f64) -> Self {
        self.scale = scale;
        self
    }

    pub fn rank(&self) -> usize {
        self.a.ncols()
    }

    pub fn input_dim(&self) -> usize {
        self.w0.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.w0.nrows()
    }

    fn relu_input(&self) -> bool {
        self.variant == AdapterVariant::Mono && self.order == MonoOrder::AsPrinted
    }

    /// Adapter contribution only, with the values needed for backprop.
    pub fn delta_cached(&self, x: ArrayView2<'_, f64>) -> Result<(Array2<f64>, AdapterCache)> {
        check_cols(x, self.input_dim(), "adapter")?;
        let x_in = if self.relu_input() { x.mapv(|v| v.max(0.0)) } else { x.to_owned() };
        let t = x_in.dot(&self.b.t());
        let u = match self.variant {
            AdapterVariant::Standard => t.clone(),
            AdapterVariant::Mono => t.mapv(|v| v.max(0.0)),
        };
        let v = u.dot(&self.a.t());
        let out = match self.variant {
            AdapterVariant::Standard => &v * self.scale,
            AdapterVariant::Mono => v.mapv(|e| e.max(0.0) * self.scale),
        };
        Ok((out, AdapterCache { x_in, t, u, v }))
    }

    pub fn forward_batch(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        let (delta, _) = self.delta_cached(x)?;
        Ok(x.dot(&self.w0.t()) + delta)
    }

    pub fn forward(&self, x: ArrayView1<'_, f64>) -> Result<Array1<f64>> {
        Ok(self.forward_batch(x.insert_axis(Axis(0)))?.row(0).to_owned())
    }

    /// The adapter's hidden activations: `B x` or `σ(B σ(x))`.
    pub fn intermediate(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        Ok(self.delta_cached(x)?.1.u)
    }

    /// Gradients for `A`, `B` and the input, given upstream `dy` on the
    /// full layer output. The outer `σ` of the mono variant uses derivative
    /// 1 at 0 so a zero-initialized `A` still receives gradient.
    pub fn backward(&self, x: ArrayView2<'_, f64>, cache: &AdapterCache, dy: ArrayView2<'_, f64>) -> (AdapterGrad, Array2<f64>) {
        let mut dv = &dy * self.scale;
        if self.variant == AdapterVariant::Mono {
            Zip::from(&mut dv).and(&cache.v).for_each(|g, &v| {
                if v < 0.0 {
                    *g = 0.0;
                }
            });
        }
        let ga = dv.t().dot(&cache.u);
        let mut dt = dv.dot(&self.a);
        if self.variant == AdapterVariant::Mono {
            Zip::from(&mut dt).and(&cache.t).for_each(|g, &t| {
                if t <= 0.0 {
                    *g = 0.0;
                }
            });
        }
        let gb = dt.t().dot(&cache.x_in);
        let mut dx_adapter = dt.dot(&self.b);
        if self.relu_input() {
            Zip::from(&mut dx_adapter).and(x).for_each(|g, &v| {
                if v <= 0.0 {
                    *g = 0.0;
                }
            });
        }
        let dx = dy.dot(&self.w0) + dx_adapter;
        (AdapterGrad { a: ga, b: gb }, dx)
    }

    pub fn base_checksum(&self) -> String {
        checksum([self.w0.as_slice().expect("standard layout")])
    }
}

/// Fraction of exactly-zero entries among the adapter's hidden activations.
pub fn adapter_activation_sparsity(adapter: &AdapterPair, x: ArrayView2<'_, f64>) -> Result<f64> {
    ensure(x.nrows() > 0, || Error::Empty("batch".into()))?;
    let u = adapter.intermediate(x)?;
    Ok(u.iter().filter(|&&v| v == 0.0).count() as f64 / u.len() as f64)
}

/// A frozen ReLU classifier with adapters on selected layers.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptedMlp {
    pub base: Mlp,
    pub adapters: Vec<Option<AdapterPair>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdapterSpec {
    pub variant: AdapterVariant,
    pub order: MonoOrder,
    pub rank: usize,
    pub alpha: f64,
}

impl Default for AdapterSpec {
    fn default() -> Self {
        Self {
            variant: AdapterVariant::Standard,
            order: MonoOrder::AsPrinted,
            rank: 8,
            alpha: 4.0,
        }
    }
}

impl AdaptedMlp {
    pub fn new(base: &Mlp, layers: &[usize], spec: &AdapterSpec, seed: u64) -> Result<Self> {
        ensure(!layers.is_empty(), || Error::InvalidConfig("no adapter layers".into()))?;
        let mut adapters = vec![None; base.layers.len()];
        for &l in layers {
            ensure(l < base.layers.len(), || Error::OutOfDomain(format!("layer {l} out of range")))?;
            let a = AdapterPair::init(base.layers[l].w.clone(), spec.rank, spec.variant, rng::derive_seed(seed, &format!("layer{l}")))?
                .with_order(spec.order)
                .with_scale(spec.alpha / spec.rank as f64);
            adapters[l] = Some(a);
        }
        Ok(Self {
            base: base.clone(),
            adapters,
        })
    }

    fn layer_forward(&self, i: usize, h: ArrayView2<'_, f64>) -> Result<(Array2<f64>, Option<AdapterCache>)> {
        let layer = &self.base.layers[i];
        match &self.adapters[i] {
            Some(a) => {
                let (delta, cache) = a.delta_cached(h)?;
                Ok((h.dot(&a.w0.t()) + &layer.b + delta, Some(cache)))
            }
            None => Ok((layer.forward(h), None)),
        }
    }

    fn activates(&self, i: usize) -> bool {
        i + 1 < self.base.layers.len() || self.base.output_relu
    }

    pub fn forward(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        check_cols(x, self.base.input_dim(), "adapted model")?;
        let mut h = x.to_owned();
        for i in 0..self.base.layers.len() {
            let (z, _) = self.layer_forward(i, h.view())?;
            h = if self.activates(i) { z.mapv(|v| v.max(0.0)) } else { z };
        }
        Ok(h)
    }

    /// Mean hidden-activation sparsity over all adapters on the inputs each
    /// adapter actually sees.
    pub fn sparsity(&self, x: ArrayView2<'_, f64>) -> Result<f64> {
        let mut h = x.to_owned();
        let mut zeros = 0usize;
        let mut total = 0usize;
        for i in 0..self.base.layers.len() {
            if let Some(a) = &self.adapters[i] {
                let u = a.intermediate(h.view())?;
                zeros += u.iter().filter(|&&v| v == 0.0).count();
                total += u.len();
            }
            let (z, _) = self.layer_forward(i, h.view())?;
            h = if self.activates(i) { z.mapv(|v| v.max(0.0)) } else { z };
        }
        Ok(if total == 0 { 0.0 } else { zeros as f64 / total as f64 })
    }

    /// Mean cross-entropy and adapter gradients, in layer order.
    pub fn loss_and_grads(&self, x: ArrayView2<'_, f64>, labels: &[usize]) -> Result<(f64, Vec<Option<AdapterGrad>>)> {
        let n_layers = self.base.layers.len();
        let mut inputs = Vec::with_capacity(n_layers);
        let mut pres = Vec::with_capacity(n_layers);
        let mut caches = Vec::with_capacity(n_layers);
        let mut h = x.to_owned();
        for i in 0..n_layers {
            let (z, cache) = self.layer_forward(i, h.view())?;
            inputs.push(h);
            h = if self.activates(i) { z.mapv(|v| v.max(0.0)) } else { z.clone() };
            pres.push(z);
            caches.push(cache);
        }
        let (loss, mut d) = batch_loss(h.view(), labels, ProbeLoss::Ce)?;
        let mut grads = vec![None; n_layers];
        for i in (0..n_layers).rev() {
            if self.activates(i) {
                Zip::from(&mut d).and(&pres[i]).for_each(|g, &z| {
                    if z <= 0.0 {
                        *g = 0.0;
                    }
                });
            }
            d = match (&self.adapters[i], &caches[i]) {
                (Some(a), Some(c)) => {
                    let (g, dx) = a.backward(inputs[i].view(), c, d.view());
                    grads[i] = Some(g);
                    dx
                }
                _ => d.dot(&self.base.layers[i].w),
            };
        }
        Ok((loss, grads))
    }

    /// Checksum of every frozen weight and bias.
    pub fn base_checksum(&self) -> String {
        let mut parts: Vec<&[f64]> = Vec::new();
        for (l, a) in self.base.layers.iter().zip(&self.adapters) {
            match a {
                Some(a) => parts.push(a.w0.as_slice().expect("standard layout")),
                None => parts.push(l.w.as_slice().expect("standard layout")),
            }
            parts.push(l.b.as_slice().expect("standard layout"));
        }
        checksum(parts)
    }

    pub fn predict(&self, x: ArrayView2<'_, f64>) -> Result<Vec<usize>> {
        Ok(argmax_rows(self.forward(x)?.view()))
    }
}

/// Train a ReLU classifier with cross-entropy.
pub fn train_classifier(data: &Dataset, widths: &[usize], cfg: &TrainConfig) -> Result<Mlp> {
    cfg.validate()?;
    ensure(widths.first() == Some(&data.n_features()), || {
        Error::DimensionMismatch("first width must equal the input dimension".into())
    })?;
    let mut net = Mlp::new(&mut rng::stream(cfg.seed, "monolora.base.init"), widths, false)?;
    let mut opt = Optimizer::from_config(cfg);
    let mut shuffle = rng::stream(cfg.seed, "monolora.base.batches");
    let batch = cfg.batch_len(data.len());
    for epoch in 0..cfg.epochs {
        for idx in epoch_batches(data.len(), batch, &mut shuffle, false) {
            let xb = data.x.select(Axis(0), &idx);
            let yb: Vec<usize> = idx.iter().map(|&i| data.y[i]).collect();
            let cache = net.forward_cached(xb.view());
            let (loss, d) = batch_loss(cache.output.view(), &yb, ProbeLoss::Ce)?;
            check_finite_loss(loss, epoch)?;
            let (grads, _) = net.backward(&cache, d.view());
            opt.step(&mut net.param_blocks(&grads));
        }
    }
    Ok(net)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FinetuneToyConfig {
    pub adapter: AdapterSpec,
    /// Indices of the base layers that receive adapters.
    pub layers: Vec<usize>,
    pub train: TrainConfig,
}

impl Default for FinetuneToyConfig {
    fn default() -> Self {
        Self {
            adapter: AdapterSpec::default(),
            layers: vec![0, 1],
            train: TrainConfig::default().with_lr(1e-3).with_epochs(50).with_batch(Some(32)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochReport {
    pub epoch: usize,
    pub train_acc: f64,
    pub val_acc: f64,
    pub sparsity: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FinetuneToyReport {
    pub model: AdaptedMlp,
    /// Row 0 is the untrained adapter.
    pub epochs: Vec<EpochReport>,
    pub base_checksum_before: String,
    pub base_checksum_after: String,
}

impl FinetuneToyReport {
    pub fn last(&self) -> &EpochReport {
        self.epochs.last().expect("at least the initial row")
    }

    pub fn generalization_gap(&self) -> f64 {
        self.last().train_acc - self.last().val_acc
    }
}

/// Update only the adapter matrices of `base` on `train`, reporting train and
/// validation accuracy and adapter sparsity after every epoch.
pub fn finetune_toy(base: &Mlp, train: &Dataset, val: &Dataset, cfg: &FinetuneToyConfig) -> Result<FinetuneToyReport> {
    cfg.train.validate()?;
    ensure(!train.is_empty() && !val.is_empty(), || Error::Empty("finetune data".into()))?;
    let mut model = AdaptedMlp::new(base, &cfg.layers, &cfg.adapter, cfg.train.seed)?;
    let before = model.base_checksum();
    let mut opt = Optimizer::from_config(&cfg.train);
    let mut shuffle = rng::stream(cfg.train.seed, "monolora.finetune.batches");
    let batch = cfg.train.batch_len(train.len());
    let report = |m: &AdaptedMlp, epoch: usize| -> Result<EpochReport> {
        Ok(EpochReport {
            epoch,
            train_acc: accuracy(&m.predict(train.x.view())?, &train.y)?,
            val_acc: accuracy(&m.predict(val.x.view())?, &val.y)?,
            sparsity: m.sparsity(train.x.view())?,
        })
    };
    let mut epochs = vec![report(&model, 0)?];
    for epoch in 0..cfg.train.epochs {
        for idx in epoch_batches(train.len(), batch, &mut shuffle, false) {
            let xb = train.x.select(Axis(0), &idx);
            let yb: Vec<usize> = idx.iter().map(|&i| train.y[i]).collect();
            let (loss, grads) = model.loss_and_grads(xb.view(), &yb)?;
            check_finite_loss(loss, epoch)?;
            let mut blocks: Vec<(&mut [f64], &[f64])> = Vec::new();
            for (a, g) in model.adapters.iter_mut().zip(&grads) {
                if let (Some(a), Some(g)) = (a.as_mut(), g.as_ref()) {
                    blocks.push((a.a.as_slice_mut().expect("standard layout"), g.a.as_slice().expect("standard layout")));
                    blocks.push((a.b.as_slice_mut().expect("standard layout"), g.b.as_slice().expect("standard layout")));
                }
            }
            opt.step(&mut blocks);
        }
        epochs.push(report(&model, epoch + 1)?);
    }
    let after = model.base_checksum();
    if after != before {
        return Err(Error::InvalidConfig("base weights changed during finetuning".into()));
    }
    Ok(FinetuneToyReport {
        model,
        epochs,
        base_checksum_before: before,
        base_checksum_after: after,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck;
    use crate::synthdata::{generate, DataSpec};

    fn random_pair(variant: AdapterVariant, seed: u64) -> AdapterPair {
        let mut r = rng::stream(seed, "t");
        AdapterPair::new(
            gaussian_matrix(&mut r, 6, 8, 1.0),
            gaussian_matrix(&mut r, 6, 2, 1.0),
            gaussian_matrix(&mut r, 2, 8, 1.0),
            variant,
        )
        .unwrap()
    }

    #[test]
    fn forward_cases() {
        let mut p = random_pair(AdapterVariant::Standard, 1);
        let x = gaussian_matrix(&mut rng::stream(2, "x"), 1, 8, 1.0).row(0).to_owned();
        let close = |a: Array1<f64>, b: Array1<f64>| (a - b).iter().all(|v| v.abs() < 1e-12);
        let naive = p.w0.dot(&x) + p.a.dot(&p.b.dot(&x));
        assert!(close(p.forward(x.view()).unwrap(), naive));
        p.a.fill(0.0);
        assert!(close(p.forward(x.view()).unwrap(), p.w0.dot(&x)));
        let m = random_pair(AdapterVariant::Mono, 3);
        let neg = x.mapv(|v| -v.abs());
        assert!(close(m.forward(neg.view()).unwrap(), m.w0.dot(&neg)));
        assert!(AdapterPair::new(Array2::zeros((6, 8)), Array2::zeros((6, 4)), Array2::zeros((4, 8)), AdapterVariant::Standard).is_err());
        assert!(m.forward(Array1::zeros(3).view()).is_err());
    }

    #[test]
    fn linearity_and_homogeneity() {
        let mut r = rng::stream(4, "x");
        let s = random_pair(AdapterVariant::Standard, 5);
        let x = gaussian_matrix(&mut r, 1, 8, 1.0).row(0).to_owned();
        let z = gaussian_matrix(&mut r, 1, 8, 1.0).row(0).to_owned();
        let lhs = s.forward((&x * 2.0 - &z * 0.5).view()).unwrap();
        let rhs = s.forward(x.view()).unwrap() * 2.0 - s.forward(z.view()).unwrap() * 0.5;
        assert!((lhs - rhs).iter().all(|v| v.abs() < 1e-10));
        let m = random_pair(AdapterVariant::Mono, 6);
        let xp = x.mapv(f64::abs);
        let lhs = m.forward((&xp * 3.5).view()).unwrap();
        let rhs = m.forward(xp.view()).unwrap() * 3.5;
        assert!((lhs - rhs).iter().all(|v| v.abs() < 1e-10));
    }

    #[test]
    fn sparsity_patterns() {
        let mut r = rng::stream(7, "x");
        let x = gaussian_matrix(&mut r, 500, 8, 1.0);
        let s = random_pair(AdapterVariant::Standard, 8);
        assert_eq!(adapter_activation_sparsity(&s, x.view()).unwrap(), 0.0);
        let m = random_pair(AdapterVariant::Mono, 9);
        assert!(adapter_activation_sparsity(&m, x.view()).unwrap() > 0.25);
        let mut zero_b = m.clone();
        zero_b.b.fill(0.0);
        assert_eq!(adapter_activation_sparsity(&zero_b, x.view()).unwrap(), 1.0);
        assert!(adapter_activation_sparsity(&m, Array2::zeros((0, 8)).view()).is_err());
    }

    #[test]
    fn adapter_gradients_match_finite_differences() {
        let mut r = rng::stream(10, "x");
        for (variant, order) in [
            (AdapterVariant::Standard, MonoOrder::AsPrinted),
            (AdapterVariant::Mono, MonoOrder::AsPrinted),
            (AdapterVariant::Mono, MonoOrder::HiddenFirst),
        ] {
            let p = random_pair(variant, 11).with_order(order).with_scale(0.7);
            let x = gaussian_matrix(&mut r, 5, 8, 1.0);
            let target = gaussian_matrix(&mut r, 5, 6, 1.0);
            let loss = |q: &AdapterPair| (q.forward_batch(x.view()).unwrap() - &target).mapv(|v| v * v).sum();
            let (out, cache) = p.delta_cached(x.view()).unwrap();
            let y = x.dot(&p.w0.t()) + out;
            let dy = (&y - &target) * 2.0;
            // Away from kinks only.
            let min_kink = cache.t.iter().chain(cache.v.iter()).filter(|v| **v != 0.0).fold(f64::INFINITY, |m, v| m.min(v.abs()));
            assert!(min_kink > 1e-4, "{variant:?} {order:?} {min_kink}");
            let (g, dx) = p.backward(x.view(), &cache, dy.view());
            for (name, which) in [("a", 0), ("b", 1)] {
                let ana = if which == 0 { &g.a } else { &g.b };
                let mut flat = if which == 0 { p.a.clone() } else { p.b.clone() }.into_raw_vec_and_offset().0;
                for i in 0..flat.len() {
                    let num = gradcheck::central(&mut flat, i, 1e-6, |q| {
                        let mut c = p.clone();
                        let target = if which == 0 { &mut c.a } else { &mut c.b };
                        target.as_slice_mut().unwrap().copy_from_slice(q);
                        loss(&c)
                    });
                    let e = gradcheck::rel_err(ana.as_slice().unwrap()[i], num);
                    assert!(e < 1e-4, "{variant:?} {order:?} {name}[{i}] rel err {e}");
                }
            }
            let mut xf = x.clone().into_raw_vec_and_offset().0;
            for i in 0..xf.len() {
                let num = gradcheck::central(&mut xf, i, 1e-6, |q| {
                    let xv = ArrayView2::from_shape((5, 8), q).unwrap();
                    (p.forward_batch(xv).unwrap() - &target).mapv(|v| v * v).sum()
                });
                assert!(gradcheck::rel_err(dx.as_slice().unwrap()[i], num) < 1e-4);
            }
        }
    }

    #[test]
    fn zero_initialized_mono_adapter_still_learns() {
        let w0 = gaussian_matrix(&mut rng::stream(1, "w"), 6, 8, 1.0);
        let p = AdapterPair::init(w0, 2, AdapterVariant::Mono, 3).unwrap();
        let x = gaussian_matrix(&mut rng::stream(2, "x"), 20, 8, 1.0).mapv(f64::abs);
        let (_, cache) = p.delta_cached(x.view()).unwrap();
        let dy = Array2::from_elem((20, 6), 1.0);
        let (g, _) = p.backward(x.view(), &cache, dy.view());
        assert!(g.a.iter().any(|&v| v != 0.0));
    }

    fn toy_setup(seed: u64) -> (Mlp, Dataset, Dataset) {
        let base_data = generate(&DataSpec::new(10, 0.2, 600, seed)).unwrap();
        let base = train_classifier(&base_data, &[10, 24, 10], &TrainConfig::default().with_lr(1e-2).with_epochs(10).with_batch(Some(64))).unwrap();
        let shifted = generate(&DataSpec::new(10, 0.8, 400, seed + 1)).unwrap();
        let (train, val) = shifted.split(0.5, seed).unwrap();
        (base, train.subsample(0.2, seed).unwrap(), val)
    }

    #[test]
    fn zero_epoch_finetune_matches_base() {
        let (base, _, val) = toy_setup(1);
        let cfg = FinetuneToyConfig {
            adapter: AdapterSpec { rank: 2, ..AdapterSpec::default() },
            train: TrainConfig::default().with_epochs(1),
            ..FinetuneToyConfig::default()
        };
        let model = AdaptedMlp::new(&base, &cfg.layers, &cfg.adapter, 0).unwrap();
        let a = model.forward(val.x.view()).unwrap();
        let b = base.forward(val.x.view());
        assert!((a - b).iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn adapted_model_gradients_match_finite_differences() {
        let (base, train, _) = toy_setup(2);
        let mut model = AdaptedMlp::new(&base, &[0, 1], &AdapterSpec { rank: 2, variant: AdapterVariant::Standard, ..AdapterSpec::default() }, 0).unwrap();
        for a in model.adapters.iter_mut().flatten() {
            a.a = gaussian_matrix(&mut rng::stream(4, "a"), a.a.nrows(), a.a.ncols(), 0.3);
        }
        let x = train.x.slice(ndarray::s![..6, ..]).to_owned();
        let y = train.y[..6].to_vec();
        let (_, grads) = model.loss_and_grads(x.view(), &y).unwrap();
        for layer in [0, 1] {
            let ana = grads[layer].as_ref().unwrap();
            let mut flat = model.adapters[layer].as_ref().unwrap().b.as_slice().unwrap().to_vec();
            for i in 0..flat.len() {
                let num = gradcheck::central(&mut flat, i, 1e-6, |q| {
                    let mut m = model.clone();
                    m.adapters[layer].as_mut().unwrap().b.as_slice_mut().unwrap().copy_from_slice(q);
                    m.loss_and_grads(x.view(), &y).unwrap().0
                });
                let e = gradcheck::rel_err(ana.b.as_slice().unwrap()[i], num);
                assert!(e < 1e-4, "layer {layer} b[{i}] rel err {e}");
            }
        }
    }

    #[test]
    fn finetune_keeps_base_frozen_and_mono_stays_sparse() {
        let (base, train, val) = toy_setup(3);
        for variant in [AdapterVariant::Standard, AdapterVariant::Mono] {
            let cfg = FinetuneToyConfig {
                adapter: AdapterSpec { rank: 2, variant, ..AdapterSpec::default() },
                train: TrainConfig::default().with_lr(1e-2).with_epochs(5).with_batch(Some(8)),
                ..FinetuneToyConfig::default()
            };
            let rep = finetune_toy(&base, &train, &val, &cfg).unwrap();
            assert_eq!(rep.base_checksum_before, rep.base_checksum_after);
            assert_eq!(rep.epochs.len(), 6);
            match variant {
                AdapterVariant::Mono => assert!(rep.epochs.iter().all(|e| e.sparsity > 0.0)),
                AdapterVariant::Standard => assert!(rep.epochs.iter().all(|e| e.sparsity == 0.0)),
            }
            assert_ne!(rep.model.adapters, AdaptedMlp::new(&base, &cfg.layers, &cfg.adapter, cfg.train.seed).unwrap().adapters);
        }
    }
}
