//! Top-K sparse autoencoder over frozen feature vectors.

use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::nn::{check_cols, gaussian_matrix};
use crate::optim::{check_finite_loss, epoch_batches, Optimizer, TrainConfig};
use crate::rng;
use crate::tensor_io::TensorArchive;

/// Indices of the `k` largest entries, lower index first among equal values.
pub fn topk_support(v: ArrayView1<'_, f64>, k: usize) -> Result<Vec<usize>> {
    ensure(k >= 1 && k <= v.len(), || {
        Error::OutOfDomain(format!("k must lie in [1, {}], got {k}", v.len()))
    })?;
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[b].total_cmp(&v[a]).then(a.cmp(&b)));
    idx.truncate(k);
    Ok(idx)
}

/// Keep the `k` largest entries and zero the rest.
pub fn topk(v: ArrayView1<'_, f64>, k: usize) -> Result<Array1<f64>> {
    let mut out = Array1::zeros(v.len());
    for i in topk_support(v, k)? {
        out[i] = v[i];
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SaeParams {
    /// `h x d`.
    pub w_enc: Array2<f64>,
    /// `d x h`.
    pub w_dec: Array2<f64>,
    pub b_pre: Array1<f64>,
    pub b_enc: Array1<f64>,
    pub k: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SaeGrads {
    pub w_enc: Array2<f64>,
    pub w_dec: Array2<f64>,
    pub b_pre: Array1<f64>,
    pub b_enc: Array1<f64>,
}

impl SaeParams {
    pub fn new(w_enc: Array2<f64>, w_dec: Array2<f64>, b_pre: Array1<f64>, b_enc: Array1<f64>, k: usize) -> Result<Self> {
        let (h, d) = w_enc.dim();
        ensure(w_dec.dim() == (d, h) && b_pre.len() == d && b_enc.len() == h, || {
            Error::DimensionMismatch("inconsistent sae parameter shapes".into())
        })?;
        ensure(k >= 1 && k <= h, || Error::InvalidConfig(format!("k must lie in [1, {h}], got {k}")))?;
        Ok(Self { w_enc, w_dec, b_pre, b_enc, k })
    }

    /// Unit-norm random decoder columns, tied encoder, `b_pre` at the mean.
    pub fn init(features: ArrayView2<'_, f64>, h: usize, k: usize, seed: u64) -> Result<Self> {
        let d = features.ncols();
        ensure(features.nrows() > 0, || Error::Empty("feature matrix".into()))?;
        let mut r = rng::stream(seed, "sae.init");
        let mut w_dec = gaussian_matrix(&mut r, d, h, 1.0 / (d as f64).sqrt());
        normalize_columns(&mut w_dec);
        let b_pre = features.mean_axis(Axis(0)).expect("non-empty");
        Self::new(w_dec.t().as_standard_layout().into_owned(), w_dec, b_pre, Array1::zeros(h), k)
    }

    pub fn d(&self) -> usize {
        self.w_dec.nrows()
    }

    pub fn h(&self) -> usize {
        self.w_enc.nrows()
    }

    fn pre_activations(&self, f: ArrayView2<'_, f64>) -> Array2<f64> {
        (&f - &self.b_pre).dot(&self.w_enc.t()) + &self.b_enc
    }

    pub fn encode(&self, f: ArrayView1<'_, f64>) -> Result<Array1<f64>> {
        ensure(f.len() == self.d(), || {
            Error::DimensionMismatch(format!("{} inputs for a {}-dim sae", f.len(), self.d()))
        })?;
        let pre = self.w_enc.dot(&(&f - &self.b_pre)) + &self.b_enc;
        topk(pre.view(), self.k)
    }

    pub fn encode_batch(&self, f: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        check_cols(f, self.d(), "sae encode")?;
        let mut pre = self.pre_activations(f);
        for mut row in pre.axis_iter_mut(Axis(0)) {
            let kept = topk(row.view(), self.k)?;
            row.assign(&kept);
        }
        Ok(pre)
    }

    pub fn decode(&self, z: ArrayView1<'_, f64>) -> Result<Array1<f64>> {
        ensure(z.len() == self.h(), || {
            Error::DimensionMismatch(format!("{} latents for a {}-latent sae", z.len(), self.h()))
        })?;
        Ok(self.w_dec.dot(&z) + &self.b_pre)
    }

    pub fn decode_batch(&self, z: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        check_cols(z, self.h(), "sae decode")?;
        Ok(z.dot(&self.w_dec.t()) + &self.b_pre)
    }

    /// Mean over rows of `||f̂ - f||²`.
    pub fn loss(&self, f: ArrayView2<'_, f64>) -> Result<f64> {
        let r = self.decode_batch(self.encode_batch(f)?.view())? - f;
        Ok(r.mapv(|v| v * v).sum() / f.nrows() as f64)
    }

    /// Loss and gradients; the top-K selection passes gradient only through
    /// the kept coordinates.
    pub fn loss_and_grads(&self, f: ArrayView2<'_, f64>) -> Result<(f64, SaeGrads)> {
        check_cols(f, self.d(), "sae")?;
        let rows = f.nrows() as f64;
        let centered = &f - &self.b_pre;
        let pre = centered.dot(&self.w_enc.t()) + &self.b_enc;
        let mut mask = Array2::<f64>::zeros(pre.raw_dim());
        for (row, mut m) in pre.axis_iter(Axis(0)).zip(mask.axis_iter_mut(Axis(0))) {
            for i in topk_support(row, self.k)? {
                m[i] = 1.0;
            }
        }
        let z = &pre * &mask;
        let r = z.dot(&self.w_dec.t()) + &self.b_pre - f;
        let loss = r.mapv(|v| v * v).sum() / rows;
        let dr = r * (2.0 / rows);
        let dz = dr.dot(&self.w_dec) * &mask;
        let grads = SaeGrads {
            w_dec: dr.t().dot(&z),
            w_enc: dz.t().dot(&centered),
            b_enc: dz.sum_axis(Axis(0)),
            b_pre: dr.sum_axis(Axis(0)) - dz.dot(&self.w_enc).sum_axis(Axis(0)),
        };
        Ok((loss, grads))
    }

    pub fn to_archive(&self) -> TensorArchive {
        let mut a = TensorArchive::new();
        a.push_matrix("w_enc", &self.w_enc)
            .push_matrix("w_dec", &self.w_dec)
            .push_vector("b_pre", &self.b_pre)
            .push_vector("b_enc", &self.b_enc)
            .push_scalar("k", self.k as f64);
        a
    }

    pub fn from_archive(a: &TensorArchive) -> Result<Self> {
        Self::new(a.matrix("w_enc")?, a.matrix("w_dec")?, a.vector("b_pre")?, a.vector("b_enc")?, a.scalar("k")? as usize)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_archive().save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_archive(&TensorArchive::load(path)?)
    }
}

fn normalize_columns(m: &mut Array2<f64>) {
    for mut col in m.axis_iter_mut(Axis(1)) {
        let norm = col.dot(&col).sqrt();
        if norm > 0.0 {
            col /= norm;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SaeConfig {
    /// Number of latents; `None` means four times the input width.
    pub h: Option<usize>,
    /// Active latents per sample; `None` means half the input width.
    pub k: Option<usize>,
    pub unit_norm_decoder: bool,
    pub train: TrainConfig,
}

impl Default for SaeConfig {
    fn default() -> Self {
        Self {
            h: None,
            k: None,
            unit_norm_decoder: false,
            train: TrainConfig::default().with_lr(1e-3).with_epochs(60).with_batch(Some(256)),
        }
    }
}

impl SaeConfig {
    pub fn resolve(&self, d: usize) -> Result<(usize, usize)> {
        let h = self.h.unwrap_or(4 * d);
        let k = self.k.unwrap_or((d / 2).max(1));
        ensure(k >= 1 && k <= h, || Error::InvalidConfig(format!("need 1 <= k <= h, got k = {k}, h = {h}")))?;
        Ok((h, k))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SaeRun {
    pub params: SaeParams,
    pub loss_history: Vec<f64>,
    /// Final MSE divided by the total feature variance.
    pub normalized_mse: f64,
    pub dead_fraction: f64,
}

/// Fraction of latents that are zero on every row of `f`.
pub fn dead_latent_fraction(params: &SaeParams, f: ArrayView2<'_, f64>) -> Result<f64> {
    let z = params.encode_batch(f)?;
    let dead = z.axis_iter(Axis(1)).filter(|c| c.iter().all(|&v| v == 0.0)).count();
    Ok(dead as f64 / params.h() as f64)
}

pub fn train_sae(features: ArrayView2<'_, f64>, cfg: &SaeConfig) -> Result<SaeRun> {
    cfg.train.validate()?;
    let (h, k) = cfg.resolve(features.ncols())?;
    let mut params = SaeParams::init(features, h, k, cfg.train.seed)?;
    let mut opt = Optimizer::from_config(&cfg.train);
    let mut shuffle = rng::stream(cfg.train.seed, "sae.batches");
    let rows = features.nrows();
    let batch = cfg.train.batch_len(rows);
    let mut history = Vec::with_capacity(cfg.train.epochs);
    for epoch in 0..cfg.train.epochs {
        let batches = if batch >= rows {
            vec![(0..rows).collect()]
        } else {
            epoch_batches(rows, batch, &mut shuffle, false)
        };
        let mut total = 0.0;
        for idx in batches {
            let fb = features.select(Axis(0), &idx);
            let (loss, g) = params.loss_and_grads(fb.view())?;
            check_finite_loss(loss, epoch)?;
            total += loss * idx.len() as f64;
            opt.step(&mut [
                (params.w_enc.as_slice_mut().expect("standard layout"), g.w_enc.as_slice().expect("standard layout")),
                (params.w_dec.as_slice_mut().expect("standard layout"), g.w_dec.as_slice().expect("standard layout")),
                (params.b_pre.as_slice_mut().expect("standard layout"), g.b_pre.as_slice().expect("standard layout")),
                (params.b_enc.as_slice_mut().expect("standard layout"), g.b_enc.as_slice().expect("standard layout")),
            ]);
            if cfg.unit_norm_decoder {
                normalize_columns(&mut params.w_dec);
            }
        }
        history.push(total / rows as f64);
    }
    let mean = features.mean_axis(Axis(0)).expect("non-empty");
    let variance = (&features - &mean).mapv(|v| v * v).sum() / rows as f64;
    let mse = params.loss(features)?;
    Ok(SaeRun {
        normalized_mse: if variance > 0.0 { mse / variance } else { mse },
        dead_fraction: dead_latent_fraction(&params, features)?,
        params,
        loss_history: history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck;
    use ndarray::array;
    use rand::Rng;

    #[test]
    fn topk_examples() {
        assert_eq!(topk(array![0.5, -0.2, 0.9, 0.1].view(), 2).unwrap(), array![0.5, 0.0, 0.9, 0.0]);
        let v = array![0.3, -1.0, 2.0];
        assert_eq!(topk(v.view(), 3).unwrap(), v);
        assert_eq!(topk(array![1.0, 1.0, 1.0].view(), 1).unwrap(), array![1.0, 0.0, 0.0]);
        assert!(topk(v.view(), 0).is_err());
        assert!(topk(v.view(), 4).is_err());
    }

    fn random_params(d: usize, h: usize, k: usize, seed: u64) -> SaeParams {
        let mut r = rng::stream(seed, "t");
        SaeParams::new(
            gaussian_matrix(&mut r, h, d, 1.0),
            gaussian_matrix(&mut r, d, h, 1.0),
            gaussian_matrix(&mut r, 1, d, 1.0).row(0).to_owned(),
            gaussian_matrix(&mut r, 1, h, 1.0).row(0).to_owned(),
            k,
        )
        .unwrap()
    }

    #[test]
    fn encode_decode_cases() {
        let p = random_params(3, 5, 2, 1);
        let f = p.b_pre.clone();
        assert_eq!(p.encode(f.view()).unwrap(), topk(p.b_enc.view(), 2).unwrap());
        let zero = SaeParams::new(Array2::zeros((5, 3)), p.w_dec.clone(), p.b_pre.clone(), Array1::zeros(5), 2).unwrap();
        assert_eq!(zero.encode(array![1.0, 2.0, 3.0].view()).unwrap(), Array1::zeros(5));
        assert_eq!(p.decode(Array1::zeros(5).view()).unwrap(), p.b_pre);
        let ident = SaeParams::new(Array2::eye(3), Array2::eye(3), Array1::zeros(3), Array1::zeros(3), 3).unwrap();
        assert_eq!(ident.decode(array![0.1, 0.2, 0.3].view()).unwrap(), array![0.1, 0.2, 0.3]);
        assert!(p.encode(array![1.0].view()).is_err());
        assert!(p.decode(array![1.0].view()).is_err());
    }

    #[test]
    fn encode_matches_naive_oracle() {
        let p = random_params(4, 6, 3, 2);
        let f = array![0.2, -0.7, 1.1, 0.4];
        let mut pre = vec![0.0; 6];
        for (i, slot) in pre.iter_mut().enumerate() {
            *slot = p.b_enc[i];
            for j in 0..4 {
                *slot += p.w_enc[[i, j]] * (f[j] - p.b_pre[j]);
            }
        }
        let mut order: Vec<usize> = (0..6).collect();
        order.sort_by(|&a, &b| pre[b].partial_cmp(&pre[a]).unwrap());
        let mut want = Array1::zeros(6);
        for &i in &order[..3] {
            want[i] = pre[i];
        }
        let got = p.encode(f.view()).unwrap();
        assert!((got - want).iter().all(|v| v.abs() < 1e-12));
        let z = array![0.0, 1.0, 0.0, -2.0, 0.0, 0.5];
        let dec = p.decode(z.view()).unwrap();
        for j in 0..4 {
            let naive: f64 = (0..6).map(|i| p.w_dec[[j, i]] * z[i]).sum::<f64>() + p.b_pre[j];
            assert!((dec[j] - naive).abs() < 1e-12);
        }
        assert_eq!(p.encode_batch(f.view().insert_axis(Axis(0))).unwrap().row(0), p.encode(f.view()).unwrap());
    }

    #[test]
    fn gradients_match_finite_differences_on_fixed_support() {
        let p = random_params(4, 6, 2, 3);
        let f = gaussian_matrix(&mut rng::stream(4, "f"), 5, 4, 1.0);
        let (_, g) = p.loss_and_grads(f.view()).unwrap();
        let h = 1e-6;
        type Get = fn(&mut SaeParams) -> &mut [f64];
        let blocks: [(&str, Get, &[f64]); 4] = [
            ("w_enc", |p| p.w_enc.as_slice_mut().unwrap(), g.w_enc.as_slice().unwrap()),
            ("w_dec", |p| p.w_dec.as_slice_mut().unwrap(), g.w_dec.as_slice().unwrap()),
            ("b_pre", |p| p.b_pre.as_slice_mut().unwrap(), g.b_pre.as_slice().unwrap()),
            ("b_enc", |p| p.b_enc.as_slice_mut().unwrap(), g.b_enc.as_slice().unwrap()),
        ];
        let support = p.encode_batch(f.view()).unwrap().mapv(|v| v != 0.0);
        for (name, get, ana) in blocks {
            for i in 0..ana.len() {
                let mut q = p.clone();
                let orig = get(&mut q)[i];
                get(&mut q)[i] = orig + h;
                let up = q.loss(f.view()).unwrap();
                let same_up = q.encode_batch(f.view()).unwrap().mapv(|v| v != 0.0) == support;
                get(&mut q)[i] = orig - h;
                let down = q.loss(f.view()).unwrap();
                let same_down = q.encode_batch(f.view()).unwrap().mapv(|v| v != 0.0) == support;
                assert!(same_up && same_down, "perturbation changed the support");
                let num = (up - down) / (2.0 * h);
                let e = gradcheck::rel_err(ana[i], num);
                assert!(e < 1e-4, "{name}[{i}] rel err {e}");
            }
        }
    }

    #[test]
    fn at_most_k_nonzeros() {
        let p = random_params(5, 12, 3, 6);
        let f = gaussian_matrix(&mut rng::stream(7, "f"), 2000, 5, 1.0);
        let z = p.encode_batch(f.view()).unwrap();
        assert!(z.axis_iter(Axis(0)).all(|r| r.iter().filter(|&&v| v != 0.0).count() <= 3));
    }

    #[test]
    fn full_width_recovers_identity() {
        let f = gaussian_matrix(&mut rng::stream(8, "f"), 400, 4, 1.0);
        let cfg = SaeConfig {
            h: Some(4),
            k: Some(4),
            train: TrainConfig::default().with_lr(1e-2).with_epochs(400).with_batch(Some(100)),
            ..SaeConfig::default()
        };
        let run = train_sae(f.view(), &cfg).unwrap();
        assert!(run.normalized_mse < 1e-3, "nmse {}", run.normalized_mse);
    }

    fn planted(rows: usize, seed: u64) -> Array2<f64> {
        // 8 dictionary atoms in 16 dims, each sample mixes exactly 2 with positive weights.
        let mut r = rng::stream(seed, "planted");
        let mut atoms = gaussian_matrix(&mut r, 16, 8, 1.0);
        normalize_columns(&mut atoms);
        let mut f = Array2::zeros((rows, 16));
        for mut row in f.axis_iter_mut(Axis(0)) {
            let a = r.random_range(0..8);
            let b = (a + r.random_range(1..8)) % 8;
            let wa: f64 = r.random_range(0.5..1.5);
            let wb: f64 = r.random_range(0.5..1.5);
            row.assign(&(&atoms.column(a) * wa + &atoms.column(b) * wb));
        }
        f
    }

    #[test]
    fn planted_dictionary_is_recovered() {
        let f = planted(2000, 1);
        let cfg = SaeConfig {
            h: Some(16),
            k: Some(2),
            train: TrainConfig::default().with_lr(5e-3).with_epochs(300).with_batch(Some(200)).with_seed(0),
            ..SaeConfig::default()
        };
        let run = train_sae(f.view(), &cfg).unwrap();
        assert!(run.normalized_mse < 0.01, "nmse {}", run.normalized_mse);
        let mse = run.params.loss(f.view()).unwrap();
        let rec = run.params.decode_batch(run.params.encode_batch(f.view()).unwrap().view()).unwrap();
        let again = run.params.loss(rec.view()).unwrap();
        assert!((again - mse).abs() <= 0.1 * mse + 1e-9, "{again} vs {mse}");
        assert!((0.0..=1.0).contains(&run.dead_fraction));
    }

    #[test]
    fn unit_norm_option_and_archive() {
        let f = planted(300, 2);
        let cfg = SaeConfig {
            h: Some(8),
            k: Some(2),
            unit_norm_decoder: true,
            train: TrainConfig::default().with_epochs(5).with_batch(Some(50)),
        };
        let run = train_sae(f.view(), &cfg).unwrap();
        for c in run.params.w_dec.axis_iter(Axis(1)) {
            assert!((c.dot(&c) - 1.0).abs() < 1e-12);
        }
        assert_eq!(SaeParams::from_archive(&run.params.to_archive()).unwrap(), run.params);
        assert_eq!(train_sae(f.view(), &cfg).unwrap(), run);
    }
}
