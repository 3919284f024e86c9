//! Subcommand bodies. Each returns its artifacts and the text for stdout;
//! nothing touches the filesystem until the whole command has succeeded.

use monosem::experiments::{self, Condition, Method};
use monosem::mc_oracle::{self, McAxis};
use monosem::separability::{self, NoiseAxis};
use monosem::sweep::{self, GridSpec, SweepTask};
use monosem::svg::{self, Series};
use monosem::table::{fmt_f64, Table};
use monosem::tensor_io::TensorArchive;
use monosem::toymodel::{self, DEFAULT_ANTIPODAL_TAU, DEFAULT_REPRESENTED_TAU};
use monosem::{AdapterVariant, DataSpec, FeatureKind, McConfig, ProbeLoss, Result};

use crate::config::{FileConfig, McSection, ProbeSection, ToyTrainConfig};
use crate::run::Artifact;

pub struct Output {
    pub artifacts: Vec<Artifact>,
    pub stdout: String,
}

impl Output {
    fn new() -> Self {
        Self {
            artifacts: Vec::new(),
            stdout: String::new(),
        }
    }

    fn table(&mut self, name: &str, t: &Table) -> Result<()> {
        self.artifacts.push(Artifact::text(name, t.to_csv_string()?));
        Ok(())
    }

    fn svg(&mut self, name: &str, svg: String) {
        self.artifacts.push(Artifact::text(name, svg));
    }

    fn archive(&mut self, name: &str, a: &TensorArchive) -> Result<()> {
        let mut bytes = Vec::new();
        a.write(&mut bytes)?;
        self.artifacts.push(Artifact {
            name: name.into(),
            bytes,
        });
        Ok(())
    }
}

fn seed_suffix(seeds: &[u64], seed: u64) -> String {
    if seeds.len() > 1 {
        format!("-seed{seed}")
    } else {
        String::new()
    }
}

pub fn theory(cfg: &FileConfig) -> Result<Output> {
    let c = &cfg.theory;
    let rows = separability::theory_table(&c.sparsity, &c.eta, &c.lambda)?;
    let mut t = Table::new([
        "feature", "S", "eta", "lambda", "mu0", "mu1", "var0", "var1", "sd0", "sd1", "delta_mu", "j",
    ]);
    for r in &rows {
        let m = &r.moments;
        t.push(vec![
            r.feature.as_str().into(),
            fmt_f64(r.sparsity),
            fmt_f64(r.noise.eta),
            fmt_f64(r.noise.lambda),
            fmt_f64(m.mu0),
            fmt_f64(m.mu1),
            fmt_f64(m.var0),
            fmt_f64(m.var1),
            fmt_f64(m.var0.sqrt()),
            fmt_f64(m.var1.sqrt()),
            fmt_f64(r.delta_mu),
            fmt_f64(r.j),
        ])?;
    }
    let mut out = Output::new();
    out.stdout = t.to_csv_string()?;
    out.table("theory.csv", &t)?;
    if c.crossings {
        let mut x = Table::new(["S", "axis", "level", "bracket_lo", "bracket_hi", "error"]);
        for &s in &c.sparsity {
            for axis in [NoiseAxis::Label, NoiseAxis::Gaussian] {
                match separability::find_crossing(s, axis) {
                    Ok(cr) => x.push(vec![
                        fmt_f64(s),
                        axis.as_str().into(),
                        fmt_f64(cr.level),
                        fmt_f64(cr.bracket.0),
                        fmt_f64(cr.bracket.1),
                        String::new(),
                    ])?,
                    Err(e) => x.push(vec![
                        fmt_f64(s),
                        axis.as_str().into(),
                        String::new(),
                        String::new(),
                        String::new(),
                        format!("{}: {e}", e.kind()),
                    ])?,
                }
            }
        }
        out.table("crossings.csv", &x)?;
    }
    Ok(out)
}

fn crossing_grid(axis: McAxis, step: f64) -> Vec<f64> {
    let hi = match axis {
        McAxis::Label => 0.5,
        McAxis::Gaussian => 3.0,
    };
    let count = (hi / step).ceil() as usize;
    (0..count).map(|i| i as f64 * step).filter(|&v| v < hi).collect()
}

pub fn mc(cfg: &FileConfig) -> Result<Output> {
    let c: &McSection = &cfg.mc;
    let mut t = Table::new([
        "feature", "S", "eta", "lambda", "seed", "quantity", "value", "std_error", "theory", "z",
    ]);
    for &s in &c.sparsity {
        for &eta in &c.eta {
            for &lambda in &c.lambda {
                for &seed in &c.seeds {
                    let mc_cfg = McConfig::new(s, seed).with_samples(c.num_samples).with_eta(eta).with_lambda(lambda);
                    for kind in FeatureKind::ALL {
                        let est = mc_oracle::estimate_moments(kind, &mc_cfg)?;
                        let th = separability::report(kind, s, monosem::Noise { eta, lambda })?;
                        let pairs = [
                            ("mu0", est.mu0, th.moments.mu0),
                            ("mu1", est.mu1, th.moments.mu1),
                            ("var0", est.var0, th.moments.var0),
                            ("var1", est.var1, th.moments.var1),
                        ];
                        let prefix = [kind.as_str().to_string(), fmt_f64(s), fmt_f64(eta), fmt_f64(lambda), seed.to_string()];
                        for (name, e, theory) in pairs {
                            let mut row = prefix.to_vec();
                            row.extend([name.into(), fmt_f64(e.value), fmt_f64(e.std_error), fmt_f64(theory), fmt_f64(e.z(theory))]);
                            t.push(row)?;
                        }
                        let j = est.moments().criterion_j()?;
                        let mut row = prefix.to_vec();
                        row.extend(["j".into(), fmt_f64(j), String::new(), fmt_f64(th.j), String::new()]);
                        t.push(row)?;
                    }
                }
            }
        }
    }
    let mut out = Output::new();
    out.stdout = t.to_csv_string()?;
    out.table("mc.csv", &t)?;
    if c.crossings {
        let mut x = Table::new(["S", "seed", "axis", "value", "std_error", "theory"]);
        for &s in &c.sparsity {
            for &seed in &c.seeds {
                for (axis, theory_axis) in [(McAxis::Label, NoiseAxis::Label), (McAxis::Gaussian, NoiseAxis::Gaussian)] {
                    let grid = crossing_grid(axis, c.crossing_step);
                    let mc_cfg = McConfig::new(s, seed).with_samples(c.crossing_samples);
                    let est = mc_oracle::estimate_crossing(axis, &mc_cfg, &grid)?;
                    let theory = separability::find_crossing(s, theory_axis).map(|cr| cr.level).unwrap_or(f64::NAN);
                    x.push(vec![
                        fmt_f64(s),
                        seed.to_string(),
                        theory_axis.as_str().into(),
                        fmt_f64(est.value),
                        fmt_f64(est.std_error),
                        fmt_f64(theory),
                    ])?;
                }
            }
        }
        out.table("mc_crossings.csv", &x)?;
    }
    Ok(out)
}

pub fn toy_train(cfg: &FileConfig) -> Result<Output> {
    let c: &ToyTrainConfig = &cfg.toy_train;
    let mut out = Output::new();
    let mut summary = Table::new(["seed", "final_loss", "represented", "antipodal_pairs", "checksum"]);
    for &seed in &c.seeds {
        let data = monosem::synthdata::generate(&DataSpec::new(c.n, c.sparsity, c.num_samples, seed))?;
        let mut train = c.train.clone();
        train.seed = seed;
        let trained = toymodel::train_reconstruction(&data, c.m, c.variant, &train)?;
        let model = &trained.model;
        let gram = model.gram();
        let sfx = seed_suffix(&c.seeds, seed);

        let mut w = Vec::new();
        model.write_w_csv(&mut w)?;
        out.artifacts.push(Artifact { name: format!("W{sfx}.csv"), bytes: w });
        let mut g = Vec::new();
        toymodel::write_matrix_csv(&gram, "f", &mut g)?;
        out.artifacts.push(Artifact { name: format!("gram{sfx}.csv"), bytes: g });
        out.svg(&format!("gram{sfx}.svg"), svg::heatmap(&format!("Gram matrix, S = {}", c.sparsity), &gram)?);
        out.archive(&format!("model{sfx}.msta"), &model.to_archive())?;

        let mut loss = Table::new(["epoch", "loss"]);
        for (i, l) in trained.loss_history.iter().enumerate() {
            loss.push(vec![i.to_string(), fmt_f64(*l)])?;
        }
        out.table(&format!("loss{sfx}.csv"), &loss)?;

        summary.push(vec![
            seed.to_string(),
            fmt_f64(trained.loss_history.last().copied().unwrap_or(f64::NAN)),
            toymodel::represented_features(&gram, DEFAULT_REPRESENTED_TAU).len().to_string(),
            toymodel::antipodal_pairs(&gram, DEFAULT_ANTIPODAL_TAU).len().to_string(),
            model.checksum(),
        ])?;
    }
    out.stdout = summary.to_csv_string()?;
    out.table("summary.csv", &summary)?;
    Ok(out)
}

pub fn probe(cfg: &FileConfig, parallelism: usize) -> Result<Output> {
    let c: &ProbeSection = &cfg.probe;
    let spec = GridSpec {
        task: SweepTask::Probe,
        features: c.features.clone(),
        sparsity: c.sparsity.clone(),
        eta: c.eta.clone(),
        lambda: c.lambda.clone(),
        fraction: c.fraction.clone(),
        seeds: c.seeds.clone(),
        probe: c.cell.clone(),
        ..GridSpec::default()
    };
    let results = sweep::run(&spec, parallelism)?;
    let mut t = Table::new(["feature", "S", "eta", "lambda", "fraction", "seed", "train_acc", "val_acc", "error"]);
    for r in &results {
        let cell = &r.cell;
        let mut row = vec![
            cell.feature.as_str().into(),
            fmt_f64(cell.sparsity),
            fmt_f64(cell.eta),
            fmt_f64(cell.lambda),
            fmt_f64(cell.fraction),
            cell.seed.to_string(),
        ];
        match &r.outcome {
            Ok(m) => {
                let get = |k: &str| m.iter().find(|(n, _)| *n == k).map(|(_, v)| fmt_f64(*v)).unwrap_or_default();
                row.extend([get("train_acc"), get("val_acc"), String::new()]);
            }
            Err(e) => row.extend([String::new(), String::new(), e.clone()]),
        }
        t.push(row)?;
    }
    let mut out = Output::new();
    out.stdout = t.to_csv_string()?;
    out.table("probe.csv", &t)?;
    Ok(out)
}

pub fn sweep(cfg: &FileConfig, parallelism: usize) -> Result<Output> {
    let results = sweep::run(&cfg.sweep, parallelism)?;
    let t = sweep::to_table(cfg.sweep.task, &results)?;
    let failed = results.iter().filter(|r| r.outcome.is_err()).count();
    let mut out = Output::new();
    out.stdout = format!("{} cells, {} failed\n", results.len(), failed);
    out.table("sweep.csv", &t)?;
    Ok(out)
}

pub fn sae(cfg: &FileConfig) -> Result<Output> {
    let res = experiments::sae_vs_raw(&cfg.sae)?;
    let mut out = Output::new();
    let t = res.table()?;
    out.stdout = t.to_csv_string()?;
    out.table("sae_vs_raw.csv", &t)?;
    let n = res.rows.len() as f64;
    let avg = |f: fn(&experiments::SaeRow) -> f64| res.rows.iter().map(f).sum::<f64>() / n;
    let cats = vec!["clean".to_string(), "noisy".to_string()];
    let series = [
        Series::new("raw", vec![avg(|r| r.raw_clean), avg(|r| r.raw_noisy)]),
        Series::new("sae", vec![avg(|r| r.sae_clean), avg(|r| r.sae_noisy)]),
    ];
    out.svg("sae_vs_raw.svg", svg::bar_chart("Probe accuracy: raw vs SAE features", &cats, &series, "accuracy")?);
    for (seed, p) in cfg.sae.seeds.iter().zip(&res.params) {
        out.archive(&format!("sae-seed{seed}.msta"), &p.to_archive())?;
    }
    Ok(out)
}

fn consistency_output(cfg: &FileConfig, save_encoders: bool) -> Result<Output> {
    let res = experiments::consistency(&cfg.ncl)?;
    let mut out = Output::new();
    let t = res.table()?;
    out.stdout = t.to_csv_string()?;
    out.table("consistency.csv", &t)?;
    let rules = ["threshold", "quantile"];
    let cats: Vec<String> = rules.iter().map(|r| r.to_string()).collect();
    let series: Vec<Series> = [Method::Cl, Method::Ncl]
        .into_iter()
        .map(|m| Series::new(m.as_str(), rules.iter().map(|r| res.mean(m, r)).collect()))
        .collect();
    out.svg("consistency.svg", svg::bar_chart("Semantic consistency", &cats, &series, "mean consistency")?);
    if save_encoders {
        for (seed, method, mlp) in &res.encoders {
            let mut a = TensorArchive::new();
            mlp.to_archive("encoder", &mut a);
            out.archive(&format!("encoder-{}-seed{seed}.msta", method.as_str()), &a)?;
        }
    }
    Ok(out)
}

pub fn ncl(cfg: &FileConfig) -> Result<Output> {
    consistency_output(cfg, true)
}

pub fn monolora(cfg: &FileConfig) -> Result<Output> {
    let res = experiments::monolora(&cfg.monolora)?;
    let mut out = Output::new();
    let t = res.table()?;
    out.table("monolora.csv", &t)?;
    let epochs = res.rows.iter().map(|r| r.epoch).max().unwrap_or(0);
    let x: Vec<f64> = (0..=epochs).map(|e| e as f64).collect();
    let curve = |v: AdapterVariant, f: fn(&experiments::MonoLoraRow) -> f64| -> Vec<f64> {
        (0..=epochs)
            .map(|e| {
                let vals: Vec<f64> = res.rows.iter().filter(|r| r.variant == v && r.epoch == e).map(f).collect();
                vals.iter().sum::<f64>() / vals.len().max(1) as f64
            })
            .collect()
    };
    let acc = [
        Series::new("standard train", curve(AdapterVariant::Standard, |r| r.train_acc)),
        Series::new("standard val", curve(AdapterVariant::Standard, |r| r.val_acc)),
        Series::new("mono train", curve(AdapterVariant::Mono, |r| r.train_acc)),
        Series::new("mono val", curve(AdapterVariant::Mono, |r| r.val_acc)),
    ];
    out.svg("monolora.svg", svg::line_chart("Adapter finetuning", &x, &acc, "epoch", "accuracy")?);
    let sp = [Series::new("mono", curve(AdapterVariant::Mono, |r| r.sparsity))];
    out.svg("monolora_sparsity.svg", svg::line_chart("Adapter activation sparsity", &x, &sp, "epoch", "sparsity")?);
    let mut s = Table::new(["variant", "mean_val_acc", "mean_gap", "min_sparsity"]);
    for v in [AdapterVariant::Standard, AdapterVariant::Mono] {
        let name = if v == AdapterVariant::Mono { "mono" } else { "standard" };
        s.push(vec![name.into(), fmt_f64(res.mean_val(v)), fmt_f64(res.mean_gap(v)), fmt_f64(res.min_sparsity(v))])?;
    }
    out.stdout = s.to_csv_string()?;
    out.stdout.push_str(&format!("base_unchanged,{}\n", res.base_unchanged));
    out.table("monolora_summary.csv", &s)?;
    Ok(out)
}

fn fig4(cfg: &FileConfig) -> Result<Output> {
    let res = experiments::fig4(&cfg.fig4)?;
    let mut out = Output::new();
    let t = res.table()?;
    out.stdout = t.to_csv_string()?;
    out.table("fig4.csv", &t)?;
    out.table("fig4_lambda.csv", &res.lambda_table()?)?;
    let conds = [Condition::Clean, Condition::Label, Condition::Gaussian];
    let cats: Vec<String> = conds.iter().map(|c| c.as_str().to_string()).collect();
    let series: Vec<Series> = FeatureKind::ALL
        .into_iter()
        .map(|k| Series::new(k.as_str(), conds.iter().map(|&c| res.mean_accuracy(c, k)).collect()))
        .collect();
    out.svg("fig4.svg", svg::bar_chart("Linear probe accuracy", &cats, &series, "accuracy")?);
    let grid = &cfg.fig4.lambda_grid;
    let lam: Vec<Series> = FeatureKind::ALL
        .into_iter()
        .map(|k| {
            let vals = grid
                .iter()
                .map(|&l| {
                    let v: Vec<f64> = res.lambda_rows.iter().filter(|r| r.feature == k && r.lambda == l).map(|r| r.accuracy).collect();
                    v.iter().sum::<f64>() / v.len().max(1) as f64
                })
                .collect();
            Series::new(k.as_str(), vals)
        })
        .collect();
    out.svg("fig4_lambda.svg", svg::line_chart("Accuracy under Gaussian noise", grid, &lam, "lambda", "accuracy")?);
    for (name, g) in &res.grams {
        let mut bytes = Vec::new();
        toymodel::write_matrix_csv(g, "f", &mut bytes)?;
        out.artifacts.push(Artifact { name: format!("gram_{name}.csv"), bytes });
        out.svg(&format!("gram_{name}.svg"), svg::heatmap(&format!("Gram matrix: {name}"), g)?);
    }
    Ok(out)
}

fn fewshot(cfg: &FileConfig) -> Result<Output> {
    let res = experiments::finetune_fewshot(&cfg.fewshot)?;
    let mut out = Output::new();
    let t = res.table()?;
    out.stdout = t.to_csv_string()?;
    out.table("fewshot.csv", &t)?;
    let losses = [("ce", ProbeLoss::Ce), ("nce", ProbeLoss::Nce)];
    let cats: Vec<String> = losses.iter().map(|(n, _)| n.to_string()).collect();
    let series = [Series::new("val accuracy", losses.iter().map(|(_, l)| res.mean_val(*l)).collect())];
    out.svg("fewshot.svg", svg::bar_chart("Few-shot finetuning", &cats, &series, "accuracy")?);
    Ok(out)
}

fn fig7c(cfg: &FileConfig) -> Result<Output> {
    let res = experiments::fig7c(&cfg.fig7c)?;
    let mut out = Output::new();
    let t = res.table()?;
    out.table("fig7c.csv", &t)?;
    out.table("fig7c_salient.csv", &res.salient_table()?)?;
    let correct: Vec<f64> = res.seeds.iter().flat_map(|s| s.correct.iter().copied()).collect();
    let incorrect: Vec<f64> = res.seeds.iter().flat_map(|s| s.incorrect.iter().copied()).collect();
    let samples = [Series::new("correct", correct), Series::new("incorrect", incorrect)];
    out.svg("fig7c.svg", svg::histogram("Top-dimension consistency", &samples, 20, 0.0, 1.0, "consistency")?);
    out.stdout = format!(
        "mean_correct,{}\nmean_incorrect,{}\n",
        fmt_f64(res.mean_correct()),
        fmt_f64(res.mean_incorrect())
    );
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Figure {
    ToyFig4,
    Consistency,
    Fewshot,
    Fig7c,
    SaeVsRaw,
    Monolora,
}

impl Figure {
    pub fn name(self) -> &'static str {
        match self {
            Figure::ToyFig4 => "toy-fig4",
            Figure::Consistency => "consistency",
            Figure::Fewshot => "fewshot",
            Figure::Fig7c => "fig7c",
            Figure::SaeVsRaw => "sae-vs-raw",
            Figure::Monolora => "monolora",
        }
    }
}

pub fn figure(cfg: &FileConfig, which: Figure) -> Result<Output> {
    match which {
        Figure::ToyFig4 => fig4(cfg),
        Figure::Consistency => consistency_output(cfg, false),
        Figure::Fewshot => fewshot(cfg),
        Figure::Fig7c => fig7c(cfg),
        Figure::SaeVsRaw => sae(cfg),
        Figure::Monolora => monolora(cfg),
    }
}
