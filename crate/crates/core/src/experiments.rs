//! Desk-scale experiment pipelines assembled from the core modules.
//!
//! Every pipeline runs its seeds in parallel and returns rows in seed order.

use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::metrics::{self, ActivationRule, ConsistencyReport};
use crate::moments::FeatureKind;
use crate::monolora::{self, AdapterVariant, FinetuneToyConfig};
use crate::ncl::{self, NclConfig, Similarity};
use crate::nn::Mlp;
use crate::optim::TrainConfig;
use crate::probe::{self, ProbeConfig, ProbeLoss};
use crate::rng::derive_seed;
use crate::sae::{self, SaeConfig, SaeParams};
use crate::synthdata::{flip_labels, generate, DataSpec, Dataset, NoiseSpec};
use crate::table::{fmt_f64, Table};
use crate::toymodel::{self, extract_features, FeatureConstruction, ToyModel, ToyVariant};

pub const VAL_FRACTION: f64 = 0.2;

/// Generate `num_samples` rows and split off the validation fifth.
pub fn toy_split(n: usize, sparsity: f64, num_samples: usize, seed: u64) -> Result<(Dataset, Dataset)> {
    let data = generate(&DataSpec::new(n, sparsity, num_samples, seed))?;
    data.split(VAL_FRACTION, derive_seed(seed, "experiments.split"))
}

fn mean(v: impl IntoIterator<Item = f64>) -> f64 {
    let (s, c) = v.into_iter().fold((0.0, 0usize), |(s, c), x| (s + x, c + 1));
    if c == 0 {
        f64::NAN
    } else {
        s / c as f64
    }
}

fn check_seeds(seeds: &[u64]) -> Result<()> {
    ensure(!seeds.is_empty(), || Error::InvalidConfig("seed list is empty".into()))
}

fn cosine_ncl(nonneg: bool) -> NclConfig {
    NclConfig {
        similarity: Similarity::cosine(0.2),
        ..NclConfig::default()
    }
    .with_nonneg(nonneg)
}

fn seeded_ncl(cfg: &NclConfig, seed: u64) -> NclConfig {
    let mut c = cfg.clone();
    c.train.seed = derive_seed(seed, "experiments.ncl");
    c
}

fn seeded_probe(cfg: &ProbeConfig, seed: u64, label: &str) -> ProbeConfig {
    let mut c = cfg.clone();
    c.train.seed = derive_seed(seed, label);
    c
}

fn linear_probe() -> ProbeConfig {
    ProbeConfig::default().with_train(TrainConfig::default().with_lr(0.02).with_epochs(300))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    Clean,
    Label,
    Gaussian,
}

impl Condition {
    pub const ALL: [Condition; 3] = [Condition::Clean, Condition::Label, Condition::Gaussian];

    pub fn as_str(self) -> &'static str {
        match self {
            Condition::Clean => "clean",
            Condition::Label => "label",
            Condition::Gaussian => "gaussian",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Fig4Config {
    pub n: usize,
    pub m: usize,
    pub sparsity: f64,
    pub num_samples: usize,
    pub label_eta: f64,
    pub gaussian_lambda: f64,
    pub lambda_grid: Vec<f64>,
    pub probe: ProbeConfig,
    pub seeds: Vec<u64>,
    /// Rows used to train the autoencoders whose Gram matrices are plotted.
    pub toy_samples: usize,
    pub toy_train: TrainConfig,
    /// Sparsity of the learned model expected to show superposition.
    pub high_sparsity: f64,
}

impl Default for Fig4Config {
    fn default() -> Self {
        Self {
            n: 40,
            m: 20,
            sparsity: 0.2,
            num_samples: 25_000,
            label_eta: 0.9,
            gaussian_lambda: 0.6,
            lambda_grid: vec![0.0, 0.2, 0.4, 0.6, 0.8, 1.0],
            probe: ProbeConfig::default(),
            seeds: vec![0, 1, 2],
            toy_samples: 1024,
            toy_train: TrainConfig::default().with_epochs(1500),
            high_sparsity: 0.95,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Fig4Row {
    pub seed: u64,
    pub condition: Condition,
    pub feature: FeatureKind,
    pub accuracy: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LambdaRow {
    pub seed: u64,
    pub lambda: f64,
    pub feature: FeatureKind,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Fig4Result {
    pub rows: Vec<Fig4Row>,
    pub lambda_rows: Vec<LambdaRow>,
    /// Named Gram matrices `WᵀW`.
    pub grams: Vec<(String, Array2<f64>)>,
}

impl Fig4Result {
    pub fn mean_accuracy(&self, condition: Condition, feature: FeatureKind) -> f64 {
        mean(self.rows.iter().filter(|r| r.condition == condition && r.feature == feature).map(|r| r.accuracy))
    }

    pub fn accuracy(&self, seed: u64, condition: Condition, feature: FeatureKind) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.seed == seed && r.condition == condition && r.feature == feature)
            .map(|r| r.accuracy)
    }

    pub fn table(&self) -> Result<Table> {
        let mut t = Table::new(["seed", "condition", "feature", "accuracy"]);
        for r in &self.rows {
            t.push(vec![r.seed.to_string(), r.condition.as_str().into(), r.feature.as_str().into(), fmt_f64(r.accuracy)])?;
        }
        Ok(t)
    }

    pub fn lambda_table(&self) -> Result<Table> {
        let mut t = Table::new(["seed", "lambda", "feature", "accuracy"]);
        for r in &self.lambda_rows {
            t.push(vec![r.seed.to_string(), fmt_f64(r.lambda), r.feature.as_str().into(), fmt_f64(r.accuracy)])?;
        }
        Ok(t)
    }
}

fn construction(kind: FeatureKind, m: usize) -> FeatureConstruction {
    match kind {
        FeatureKind::Mono => FeatureConstruction::mono_first(m),
        FeatureKind::Poly => FeatureConstruction::poly_halves(m),
    }
}

/// Weight matrix realizing a direct construction, so its Gram can be drawn.
pub fn construction_weights(kind: FeatureKind, n: usize, m: usize) -> Array2<f64> {
    let mut w = Array2::zeros((m, n));
    for i in 0..m {
        w[[i, i]] = 1.0;
        if kind == FeatureKind::Poly {
            w[[i, i + m]] = -1.0;
        }
    }
    w
}

fn fig4_seed(cfg: &Fig4Config, seed: u64) -> Result<(Vec<Fig4Row>, Vec<LambdaRow>)> {
    let (train, val) = toy_split(cfg.n, cfg.sparsity, cfg.num_samples, seed)?;
    let noisy = flip_labels(&train.y, cfg.n, cfg.label_eta, derive_seed(seed, "fig4.label"))?;
    let mut rows = Vec::new();
    let mut lambda_rows = Vec::new();
    for kind in FeatureKind::ALL {
        let c = construction(kind, cfg.m);
        let feats = |x: ArrayView2<'_, f64>| extract_features(x, &c, None);
        let ftr = feats(train.x.view())?;
        let pcfg = seeded_probe(&cfg.probe, seed, "fig4.probe");
        let clean = probe::train_probe(ftr.view(), &train.y, cfg.n, &pcfg)?.probe;
        let label = probe::train_probe(ftr.view(), &noisy, cfg.n, &pcfg)?.probe;
        let gauss = NoiseSpec::gaussian(cfg.gaussian_lambda, derive_seed(seed, "fig4.gaussian"));
        for (condition, p, noise) in [
            (Condition::Clean, &clean, None),
            (Condition::Label, &label, None),
            (Condition::Gaussian, &clean, Some(&gauss)),
        ] {
            let accuracy = probe::evaluate_with(p, val.x.view(), &val.y, noise, feats)?;
            rows.push(Fig4Row {
                seed,
                condition,
                feature: kind,
                accuracy,
            });
        }
        for (i, &lambda) in cfg.lambda_grid.iter().enumerate() {
            let noise = NoiseSpec::gaussian(lambda, derive_seed(seed, &format!("fig4.sweep.{i}")));
            let accuracy = probe::evaluate_with(&clean, val.x.view(), &val.y, Some(&noise), feats)?;
            lambda_rows.push(LambdaRow {
                seed,
                lambda,
                feature: kind,
                accuracy,
            });
        }
    }
    Ok((rows, lambda_rows))
}

/// Probe accuracy of direct mono and poly features under clean labels,
/// symmetric label noise and Gaussian input noise, plus a noise-strength
/// sweep and the Gram matrices of direct and learned models.
pub fn fig4(cfg: &Fig4Config) -> Result<Fig4Result> {
    check_seeds(&cfg.seeds)?;
    ensure(2 * cfg.m <= cfg.n, || Error::InvalidConfig("poly pairs need n >= 2m".into()))?;
    let per_seed: Vec<_> = cfg.seeds.par_iter().map(|&s| fig4_seed(cfg, s)).collect::<Result<_>>()?;
    let mut grams = vec![
        ("direct_mono".to_string(), construction_weights(FeatureKind::Mono, cfg.n, cfg.m)),
        ("direct_poly".to_string(), construction_weights(FeatureKind::Poly, cfg.n, cfg.m)),
    ];
    for g in grams.iter_mut() {
        g.1 = g.1.t().dot(&g.1);
    }
    let seed = cfg.seeds[0];
    for (name, s, variant) in [
        (format!("learned_s{}", cfg.sparsity), cfg.sparsity, ToyVariant::Linear),
        (format!("learned_s{}", cfg.high_sparsity), cfg.high_sparsity, ToyVariant::BiasRelu),
    ] {
        let data = generate(&DataSpec::new(cfg.n, s, cfg.toy_samples, derive_seed(seed, "fig4.toy")))?;
        let trained = toymodel::train_reconstruction(&data, cfg.m, variant, &cfg.toy_train.clone().with_seed(seed))?;
        grams.push((name, trained.model.gram()));
    }
    let (rows, lambda_rows) = per_seed.into_iter().fold((Vec::new(), Vec::new()), |(mut a, mut b), (r, l)| {
        a.extend(r);
        b.extend(l);
        (a, b)
    });
    Ok(Fig4Result { rows, lambda_rows, grams })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConsistencyConfig {
    pub n: usize,
    pub sparsity: f64,
    pub num_samples: usize,
    /// Shared by both encoders; `nonneg` is overridden per method.
    pub ncl: NclConfig,
    pub quantile: f64,
    pub seeds: Vec<u64>,
}

impl Default for ConsistencyConfig {
    fn default() -> Self {
        Self {
            n: 40,
            sparsity: 0.2,
            num_samples: 12_500,
            ncl: cosine_ncl(false),
            quantile: ActivationRule::DEFAULT_QUANTILE,
            seeds: vec![0, 1, 2],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Cl,
    Ncl,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Cl => "cl",
            Method::Ncl => "ncl",
        }
    }

    fn nonneg(self) -> bool {
        self == Method::Ncl
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyRow {
    pub seed: u64,
    pub method: Method,
    pub rule: String,
    pub mean_consistency: f64,
    pub dead_rate: f64,
    pub sparsity: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConsistencyResult {
    pub rows: Vec<ConsistencyRow>,
    pub encoders: Vec<(u64, Method, Mlp)>,
}

impl ConsistencyResult {
    pub fn mean(&self, method: Method, rule: &str) -> f64 {
        mean(self.rows.iter().filter(|r| r.method == method && r.rule == rule).map(|r| r.mean_consistency))
    }

    pub fn table(&self) -> Result<Table> {
        let mut t = Table::new(["seed", "method", "rule", "mean_consistency", "dead_rate", "sparsity"]);
        for r in &self.rows {
            t.push(vec![
                r.seed.to_string(),
                r.method.as_str().into(),
                r.rule.clone(),
                fmt_f64(r.mean_consistency),
                fmt_f64(r.dead_rate),
                fmt_f64(r.sparsity),
            ])?;
        }
        Ok(t)
    }
}

fn encoder_features(enc: &Mlp, x: ArrayView2<'_, f64>) -> Array2<f64> {
    enc.forward(x)
}

/// Semantic consistency of CL and NCL encoder outputs on held-out data.
pub fn consistency(cfg: &ConsistencyConfig) -> Result<ConsistencyResult> {
    check_seeds(&cfg.seeds)?;
    let per_seed: Vec<(Vec<ConsistencyRow>, Vec<(u64, Method, Mlp)>)> = cfg
        .seeds
        .par_iter()
        .map(|&seed| {
            let (train, val) = toy_split(cfg.n, cfg.sparsity, cfg.num_samples, seed)?;
            let mut rows = Vec::new();
            let mut encoders = Vec::new();
            for method in [Method::Cl, Method::Ncl] {
                let run = ncl::pretrain(train.x.view(), &seeded_ncl(&cfg.ncl, seed).with_nonneg(method.nonneg()))?;
                let f = encoder_features(&run.encoder, val.x.view());
                for rule in [ActivationRule::default(), ActivationRule::TopQuantile { q: cfg.quantile }] {
                    let rep = metrics::semantic_consistency(f.view(), &val.y, cfg.n, rule)?;
                    rows.push(ConsistencyRow {
                        seed,
                        method,
                        rule: rule.as_str().into(),
                        mean_consistency: rep.mean().unwrap_or(f64::NAN),
                        dead_rate: rep.dead_rate(),
                        sparsity: metrics::activation_sparsity(f.view()),
                    });
                }
                encoders.push((seed, method, run.encoder));
            }
            Ok((rows, encoders))
        })
        .collect::<Result<_>>()?;
    let (rows, encoders): (Vec<_>, Vec<_>) = per_seed.into_iter().unzip();
    Ok(ConsistencyResult {
        rows: rows.into_iter().flatten().collect(),
        encoders: encoders.into_iter().flatten().collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SaeExperimentConfig {
    pub n: usize,
    pub m: usize,
    pub sparsity: f64,
    pub num_samples: usize,
    pub label_eta: f64,
    pub toy_train: TrainConfig,
    pub sae: SaeConfig,
    pub probe: ProbeConfig,
    pub seeds: Vec<u64>,
}

impl Default for SaeExperimentConfig {
    fn default() -> Self {
        Self {
            n: 40,
            m: 20,
            sparsity: 0.95,
            num_samples: 12_500,
            label_eta: 0.9,
            toy_train: TrainConfig::default().with_epochs(800),
            sae: SaeConfig {
                h: Some(80),
                k: Some(2),
                train: TrainConfig::default().with_lr(1e-3).with_epochs(30).with_batch(Some(256)),
                ..SaeConfig::default()
            },
            probe: linear_probe(),
            seeds: vec![0, 1, 2],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SaeRow {
    pub seed: u64,
    pub raw_clean: f64,
    pub raw_noisy: f64,
    pub sae_clean: f64,
    pub sae_noisy: f64,
    pub sae_normalized_mse: f64,
    pub sae_dead_fraction: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SaeResult {
    pub rows: Vec<SaeRow>,
    /// Trained autoencoder per seed.
    pub params: Vec<SaeParams>,
}

impl SaeResult {
    pub fn mean_noisy(&self) -> (f64, f64) {
        (mean(self.rows.iter().map(|r| r.raw_noisy)), mean(self.rows.iter().map(|r| r.sae_noisy)))
    }

    pub fn table(&self) -> Result<Table> {
        let mut t = Table::new(["seed", "raw_clean", "raw_noisy", "sae_clean", "sae_noisy", "sae_normalized_mse", "sae_dead_fraction"]);
        for r in &self.rows {
            t.push(vec![
                r.seed.to_string(),
                fmt_f64(r.raw_clean),
                fmt_f64(r.raw_noisy),
                fmt_f64(r.sae_clean),
                fmt_f64(r.sae_noisy),
                fmt_f64(r.sae_normalized_mse),
                fmt_f64(r.sae_dead_fraction),
            ])?;
        }
        Ok(t)
    }
}

/// Probe the toy autoencoder's hidden code directly and through a top-K SAE,
/// with clean and noisy training labels.
pub fn sae_vs_raw(cfg: &SaeExperimentConfig) -> Result<SaeResult> {
    check_seeds(&cfg.seeds)?;
    let per_seed: Vec<(SaeRow, SaeParams)> = cfg
        .seeds
        .par_iter()
        .map(|&seed| {
            let (train, val) = toy_split(cfg.n, cfg.sparsity, cfg.num_samples, seed)?;
            let noisy = flip_labels(&train.y, cfg.n, cfg.label_eta, derive_seed(seed, "sae.label"))?;
            let toy = toymodel::train_reconstruction(&train, cfg.m, ToyVariant::Linear, &cfg.toy_train.clone().with_seed(seed))?.model;
            let h_tr = toy.hidden(train.x.view())?;
            let h_val = toy.hidden(val.x.view())?;
            let mut scfg = cfg.sae.clone();
            scfg.train.seed = derive_seed(seed, "sae.train");
            let run = sae::train_sae(h_tr.view(), &scfg)?;
            let z_tr = run.params.encode_batch(h_tr.view())?;
            let z_val = run.params.encode_batch(h_val.view())?;
            let pcfg = seeded_probe(&cfg.probe, seed, "sae.probe");
            let acc = |ftr: &Array2<f64>, fval: &Array2<f64>, y: &[usize]| -> Result<f64> {
                let p = probe::train_probe(ftr.view(), y, cfg.n, &pcfg)?.probe;
                probe::evaluate(&p, fval.view(), &val.y)
            };
            let row = SaeRow {
                seed,
                raw_clean: acc(&h_tr, &h_val, &train.y)?,
                raw_noisy: acc(&h_tr, &h_val, &noisy)?,
                sae_clean: acc(&z_tr, &z_val, &train.y)?,
                sae_noisy: acc(&z_tr, &z_val, &noisy)?,
                sae_normalized_mse: run.normalized_mse,
                sae_dead_fraction: run.dead_fraction,
            };
            Ok((row, run.params))
        })
        .collect::<Result<_>>()?;
    let (rows, params) = per_seed.into_iter().unzip();
    Ok(SaeResult { rows, params })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FewShotConfig {
    pub n: usize,
    pub sparsity: f64,
    pub num_samples: usize,
    pub fraction: f64,
    pub label_eta: f64,
    pub ncl: NclConfig,
    pub finetune: TrainConfig,
    pub seeds: Vec<u64>,
}

impl Default for FewShotConfig {
    fn default() -> Self {
        Self {
            n: 40,
            sparsity: 0.95,
            num_samples: 12_500,
            fraction: 0.1,
            label_eta: 0.0,
            ncl: cosine_ncl(false),
            finetune: TrainConfig::default().with_lr(1e-3).with_epochs(100).with_batch(Some(64)),
            seeds: vec![0, 1, 2, 3, 4],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FewShotRow {
    pub seed: u64,
    pub loss: ProbeLoss,
    pub train_acc: f64,
    pub val_acc: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FewShotResult {
    pub rows: Vec<FewShotRow>,
}

fn loss_name(l: ProbeLoss) -> &'static str {
    match l {
        ProbeLoss::Ce => "ce",
        ProbeLoss::Nce => "nce",
        ProbeLoss::Sce { .. } => "sce",
    }
}

impl FewShotResult {
    pub fn mean_val(&self, loss: ProbeLoss) -> f64 {
        mean(self.rows.iter().filter(|r| r.loss == loss).map(|r| r.val_acc))
    }

    pub fn table(&self) -> Result<Table> {
        let mut t = Table::new(["seed", "loss", "train_acc", "val_acc"]);
        for r in &self.rows {
            t.push(vec![r.seed.to_string(), loss_name(r.loss).into(), fmt_f64(r.train_acc), fmt_f64(r.val_acc)])?;
        }
        Ok(t)
    }
}

/// Finetune a contrastively pretrained encoder on a labeled subsample with
/// CE and with the non-negative NCE head.
pub fn finetune_fewshot(cfg: &FewShotConfig) -> Result<FewShotResult> {
    check_seeds(&cfg.seeds)?;
    let per_seed: Vec<Vec<FewShotRow>> = cfg
        .seeds
        .par_iter()
        .map(|&seed| {
            let (train, val) = toy_split(cfg.n, cfg.sparsity, cfg.num_samples, seed)?;
            let labels = flip_labels(&train.y, cfg.n, cfg.label_eta, derive_seed(seed, "fewshot.label"))?;
            let enc = ncl::pretrain(train.x.view(), &seeded_ncl(&cfg.ncl, seed))?.encoder;
            let mut rows = Vec::new();
            for loss in [ProbeLoss::Ce, ProbeLoss::Nce] {
                let pcfg = ProbeConfig::default()
                    .with_loss(loss)
                    .with_train(cfg.finetune.clone().with_seed(derive_seed(seed, "fewshot.finetune")))
                    .with_subsample(cfg.fraction);
                let run = probe::finetune(&enc, train.x.view(), &labels, cfg.n, &pcfg)?;
                rows.push(FewShotRow {
                    seed,
                    loss,
                    train_acc: run.train_accuracy,
                    val_acc: probe::evaluate_encoder(&run.probe, &run.encoder, val.x.view(), &val.y, None)?,
                });
            }
            Ok(rows)
        })
        .collect::<Result<_>>()?;
    Ok(FewShotResult {
        rows: per_seed.into_iter().flatten().collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Fig7cConfig {
    pub n: usize,
    pub sparsity: f64,
    pub num_samples: usize,
    pub label_eta: f64,
    pub ncl: NclConfig,
    pub rule: ActivationRule,
    pub probe: ProbeConfig,
    pub seeds: Vec<u64>,
}

impl Default for Fig7cConfig {
    fn default() -> Self {
        Self {
            n: 40,
            sparsity: 0.95,
            num_samples: 12_500,
            label_eta: 0.9,
            ncl: cosine_ncl(true),
            rule: ActivationRule::quantile(),
            probe: linear_probe(),
            seeds: vec![0, 1, 2],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fig7cSeed {
    pub seed: u64,
    pub val_accuracy: f64,
    pub correct: Vec<f64>,
    pub incorrect: Vec<f64>,
    /// Consistency of each class's salient dimension, with the class accuracy.
    pub salient: Vec<(usize, usize, Option<f64>, Option<f64>)>,
}

impl Fig7cSeed {
    pub fn mean_correct(&self) -> f64 {
        mean(self.correct.iter().copied())
    }

    pub fn mean_incorrect(&self) -> f64 {
        mean(self.incorrect.iter().copied())
    }

    /// Mean salient-dimension consistency of the better and worse halves of
    /// classes ranked by accuracy.
    pub fn salient_split(&self) -> (f64, f64) {
        let mut v: Vec<(f64, f64)> = self.salient.iter().filter_map(|&(_, _, s, a)| Some((a?, s?))).collect();
        v.sort_by(|a, b| b.0.total_cmp(&a.0));
        let half = v.len() / 2;
        (mean(v[..half].iter().map(|p| p.1)), mean(v[half..].iter().map(|p| p.1)))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Fig7cResult {
    pub seeds: Vec<Fig7cSeed>,
}

impl Fig7cResult {
    pub fn mean_correct(&self) -> f64 {
        mean(self.seeds.iter().map(Fig7cSeed::mean_correct))
    }

    pub fn mean_incorrect(&self) -> f64 {
        mean(self.seeds.iter().map(Fig7cSeed::mean_incorrect))
    }

    pub fn table(&self) -> Result<Table> {
        let mut t = Table::new([
            "seed",
            "val_accuracy",
            "n_correct",
            "n_incorrect",
            "mean_correct",
            "mean_incorrect",
            "salient_top_half",
            "salient_bottom_half",
        ]);
        for s in &self.seeds {
            let (hi, lo) = s.salient_split();
            t.push(vec![
                s.seed.to_string(),
                fmt_f64(s.val_accuracy),
                s.correct.len().to_string(),
                s.incorrect.len().to_string(),
                fmt_f64(s.mean_correct()),
                fmt_f64(s.mean_incorrect()),
                fmt_f64(hi),
                fmt_f64(lo),
            ])?;
        }
        Ok(t)
    }

    pub fn salient_table(&self) -> Result<Table> {
        let mut t = Table::new(["seed", "class", "salient_dimension", "consistency", "class_accuracy"]);
        for s in &self.seeds {
            for &(c, d, score, acc) in &s.salient {
                let opt = |v: Option<f64>| v.map(fmt_f64).unwrap_or_default();
                t.push(vec![s.seed.to_string(), c.to_string(), d.to_string(), opt(score), opt(acc)])?;
            }
        }
        Ok(t)
    }
}

/// Top-dimension consistency of correctly and incorrectly classified
/// samples for a probe trained on noisy labels over NCL features.
pub fn fig7c(cfg: &Fig7cConfig) -> Result<Fig7cResult> {
    check_seeds(&cfg.seeds)?;
    let seeds = cfg
        .seeds
        .par_iter()
        .map(|&seed| {
            let (train, val) = toy_split(cfg.n, cfg.sparsity, cfg.num_samples, seed)?;
            let noisy = flip_labels(&train.y, cfg.n, cfg.label_eta, derive_seed(seed, "fig7c.label"))?;
            let enc = ncl::pretrain(train.x.view(), &seeded_ncl(&cfg.ncl, seed))?.encoder;
            let ftr = encoder_features(&enc, train.x.view());
            let fval = encoder_features(&enc, val.x.view());
            let p = probe::train_probe(ftr.view(), &noisy, cfg.n, &seeded_probe(&cfg.probe, seed, "fig7c.probe"))?.probe;
            let pred = p.predict(fval.view())?;
            let correct: Vec<bool> = pred.iter().zip(&val.y).map(|(a, b)| a == b).collect();
            let report: ConsistencyReport = metrics::semantic_consistency(fval.view(), &val.y, cfg.n, cfg.rule)?;
            let split = metrics::per_sample_top_dimension_consistency(fval.view(), &report, &correct)?;
            let class_acc = metrics::class_accuracy(&pred, &val.y, cfg.n)?;
            let salient = (0..cfg.n)
                .map(|c| {
                    let d = metrics::salient_dimension_per_class(&p, c)?;
                    Ok((c, d, report.score(d), class_acc[c]))
                })
                .collect::<Result<_>>()?;
            Ok(Fig7cSeed {
                seed,
                val_accuracy: probe::accuracy(&pred, &val.y)?,
                correct: split.correct,
                incorrect: split.incorrect,
                salient,
            })
        })
        .collect::<Result<_>>()?;
    Ok(Fig7cResult { seeds })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MonoLoraExperimentConfig {
    pub n: usize,
    pub hidden: usize,
    pub base_sparsity: f64,
    pub base_samples: usize,
    pub base_train: TrainConfig,
    pub target_sparsity: f64,
    pub target_samples: usize,
    pub fraction: f64,
    pub finetune: FinetuneToyConfig,
    pub seeds: Vec<u64>,
}

impl Default for MonoLoraExperimentConfig {
    fn default() -> Self {
        Self {
            n: 40,
            hidden: 64,
            base_sparsity: 0.2,
            base_samples: 10_000,
            base_train: TrainConfig::default().with_lr(1e-3).with_epochs(30).with_batch(Some(128)),
            target_sparsity: 0.9,
            target_samples: 12_500,
            fraction: 0.01,
            finetune: FinetuneToyConfig::default(),
            seeds: vec![0, 1, 2, 3, 4],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonoLoraRow {
    pub seed: u64,
    pub variant: AdapterVariant,
    pub epoch: usize,
    pub train_acc: f64,
    pub val_acc: f64,
    pub sparsity: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonoLoraResult {
    pub rows: Vec<MonoLoraRow>,
    pub base_unchanged: bool,
}

fn variant_name(v: AdapterVariant) -> &'static str {
    match v {
        AdapterVariant::Standard => "standard",
        AdapterVariant::Mono => "mono",
    }
}

impl MonoLoraResult {
    fn finals(&self, variant: AdapterVariant) -> impl Iterator<Item = &MonoLoraRow> {
        let last = self.rows.iter().map(|r| r.epoch).max().unwrap_or(0);
        self.rows.iter().filter(move |r| r.variant == variant && r.epoch == last)
    }

    pub fn mean_gap(&self, variant: AdapterVariant) -> f64 {
        mean(self.finals(variant).map(|r| r.train_acc - r.val_acc))
    }

    pub fn mean_val(&self, variant: AdapterVariant) -> f64 {
        mean(self.finals(variant).map(|r| r.val_acc))
    }

    pub fn min_sparsity(&self, variant: AdapterVariant) -> f64 {
        self.rows.iter().filter(|r| r.variant == variant).map(|r| r.sparsity).fold(f64::INFINITY, f64::min)
    }

    pub fn table(&self) -> Result<Table> {
        let mut t = Table::new(["seed", "variant", "epoch", "train_acc", "val_acc", "sparsity"]);
        for r in &self.rows {
            t.push(vec![
                r.seed.to_string(),
                variant_name(r.variant).into(),
                r.epoch.to_string(),
                fmt_f64(r.train_acc),
                fmt_f64(r.val_acc),
                fmt_f64(r.sparsity),
            ])?;
        }
        Ok(t)
    }
}

/// Pretrain a classifier on one sparsity level, then adapt it with standard
/// and mono adapters on a small subsample drawn at another.
pub fn monolora(cfg: &MonoLoraExperimentConfig) -> Result<MonoLoraResult> {
    check_seeds(&cfg.seeds)?;
    let per_seed: Vec<(Vec<MonoLoraRow>, bool)> = cfg
        .seeds
        .par_iter()
        .map(|&seed| {
            let base_data = generate(&DataSpec::new(cfg.n, cfg.base_sparsity, cfg.base_samples, derive_seed(seed, "monolora.base")))?;
            let base = monolora::train_classifier(&base_data, &[cfg.n, cfg.hidden, cfg.n], &cfg.base_train.clone().with_seed(seed))?;
            let (train, val) = toy_split(cfg.n, cfg.target_sparsity, cfg.target_samples, seed)?;
            let small = train.subsample(cfg.fraction, derive_seed(seed, "monolora.subsample"))?;
            let mut rows = Vec::new();
            let mut unchanged = true;
            for variant in [AdapterVariant::Standard, AdapterVariant::Mono] {
                let mut fcfg = cfg.finetune.clone();
                fcfg.adapter.variant = variant;
                fcfg.train.seed = derive_seed(seed, "monolora.finetune");
                let rep = monolora::finetune_toy(&base, &small, &val, &fcfg)?;
                unchanged &= rep.base_checksum_before == rep.base_checksum_after && rep.model.base.checksum() == base.checksum();
                rows.extend(rep.epochs.iter().map(|e| MonoLoraRow {
                    seed,
                    variant,
                    epoch: e.epoch,
                    train_acc: e.train_acc,
                    val_acc: e.val_acc,
                    sparsity: e.sparsity,
                }));
            }
            Ok((rows, unchanged))
        })
        .collect::<Result<_>>()?;
    let base_unchanged = per_seed.iter().all(|p| p.1);
    Ok(MonoLoraResult {
        rows: per_seed.into_iter().flat_map(|p| p.0).collect(),
        base_unchanged,
    })
}

/// A toy model whose Gram matrix is the identity projector on the first `m`
/// coordinates.
pub fn identity_slice(n: usize, m: usize) -> Result<ToyModel> {
    ToyModel::new(construction_weights(FeatureKind::Mono, n, m), ToyVariant::Linear)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn construction_grams() {
        let w = construction_weights(FeatureKind::Poly, 4, 2);
        let g = w.t().dot(&w);
        assert_eq!(toymodel::antipodal_pairs(&g, -0.5), vec![(0, 2), (1, 3)]);
        let mono = identity_slice(4, 2).unwrap().gram();
        assert_eq!(toymodel::represented_features(&mono, 0.5), vec![0, 1]);
    }

    #[test]
    fn small_fig4_runs_and_is_deterministic() {
        let cfg = Fig4Config {
            n: 8,
            m: 4,
            num_samples: 1000,
            seeds: vec![3],
            lambda_grid: vec![0.0, 1.0],
            probe: ProbeConfig::default().with_train(TrainConfig::default().with_lr(0.05).with_epochs(50)),
            toy_samples: 128,
            toy_train: TrainConfig::default().with_epochs(50),
            ..Fig4Config::default()
        };
        let a = fig4(&cfg).unwrap();
        assert_eq!(a.rows.len(), 6);
        assert_eq!(a.lambda_rows.len(), 4);
        assert_eq!(a.grams.len(), 4);
        let b = fig4(&cfg).unwrap();
        assert_eq!(a.table().unwrap(), b.table().unwrap());
        let zero = a.lambda_rows.iter().find(|r| r.lambda == 0.0 && r.feature == FeatureKind::Mono).unwrap();
        assert_eq!(Some(zero.accuracy), a.accuracy(3, Condition::Clean, FeatureKind::Mono));
    }

    #[test]
    fn empty_seed_list_rejected() {
        let cfg = ConsistencyConfig {
            seeds: vec![],
            ..ConsistencyConfig::default()
        };
        assert!(consistency(&cfg).is_err());
    }

    #[test]
    fn small_monolora_keeps_base() {
        let cfg = MonoLoraExperimentConfig {
            n: 8,
            hidden: 16,
            base_samples: 400,
            base_train: TrainConfig::default().with_lr(1e-2).with_epochs(5).with_batch(Some(64)),
            target_samples: 500,
            fraction: 0.1,
            finetune: FinetuneToyConfig {
                adapter: monolora::AdapterSpec { rank: 2, ..Default::default() },
                train: TrainConfig::default().with_lr(1e-2).with_epochs(3).with_batch(Some(8)),
                ..FinetuneToyConfig::default()
            },
            seeds: vec![1, 2],
            ..MonoLoraExperimentConfig::default()
        };
        let r = monolora(&cfg).unwrap();
        assert!(r.base_unchanged);
        assert_eq!(r.rows.len(), 2 * 2 * 4);
        assert!(r.min_sparsity(AdapterVariant::Mono) > 0.0);
        assert_eq!(r.min_sparsity(AdapterVariant::Standard), 0.0);
    }
}
