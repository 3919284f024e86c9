//! End-to-end acceptance run: one PASS/FAIL line per criterion, non-zero exit
//! if any fails. Set `ACCEPTANCE_ONLY=1,5` to run a subset.

use std::time::Instant;

use ndarray::{Array1, Array2};

use monosem::experiments::{self, Condition, ConsistencyConfig, Fig4Config, Fig7cConfig, FewShotConfig, Method, SaeExperimentConfig};
use monosem::mc_oracle::{self, McAxis};
use monosem::monolora::{adapter_activation_sparsity, AdaptedMlp, AdapterSpec};
use monosem::ncl::{self, infonce_batch, Similarity};
use monosem::nn::gaussian_matrix;
use monosem::probe::{ce_loss, sce_loss};
use monosem::rng;
use monosem::separability::{self, criterion_j, mono_moments, poly_moments, NoiseAxis};
use monosem::sweep::{self, GridSpec, SweepTask};
use monosem::synthdata::generate;
use monosem::{AdapterPair, AdapterVariant, DataSpec, FeatureKind, McConfig, Mlp, NclConfig, ProbeLoss, SaeParams, ToyModel, ToyVariant, TrainConfig};

struct Report {
    only: Option<Vec<String>>,
    lines: Vec<(String, bool)>,
}

impl Report {
    fn wants(&self, id: &str) -> bool {
        match &self.only {
            Some(ids) => ids.iter().any(|i| id.starts_with(i.as_str())),
            None => true,
        }
    }

    fn record(&mut self, id: &str, what: &str, pass: bool, detail: String) {
        let line = format!("{} [{id}] {what}: {detail}", if pass { "PASS" } else { "FAIL" });
        println!("{line}");
        self.lines.push((line, pass));
    }
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

fn golden(r: &mut Report) {
    let cases = [
        ("mono", mono_moments(0.2).unwrap(), [0.205, 0.611, 0.246, 0.266, 6.196]),
        ("poly", poly_moments(0.2).unwrap(), [-0.359, 0.389, 0.276, 0.266, 10.164]),
    ];
    let mut pass = true;
    let mut detail = Vec::new();
    for (name, m, want) in cases {
        let j = criterion_j(&m).unwrap();
        let got = [m.mu0, m.mu1, m.var0.sqrt(), m.var1.sqrt()];
        pass &= got.iter().zip(&want[..4]).all(|(g, w)| close(*g, *w, 0.005));
        pass &= close(j, want[4], 0.02);
        detail.push(format!("{name} mu0={:.4} mu1={:.4} sd0={:.4} sd1={:.4} J={:.4}", got[0], got[1], got[2], got[3], j));
    }
    r.record("1", "closed-form moments and J at S=0.2", pass, detail.join("; "));
}

fn oracle(r: &mut Report) {
    let cfg = McConfig::new(0.2, 7).with_samples(10_000_000);
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for (axis, noise_axis, levels) in [
        (McAxis::Label, NoiseAxis::Label, vec![0.0, 0.2, 0.45]),
        (McAxis::Gaussian, NoiseAxis::Gaussian, vec![0.55, 1.0]),
    ] {
        let est = mc_oracle::estimate_moments_along(&cfg, axis, &levels).unwrap();
        for (level, pair) in levels.iter().zip(&est) {
            for (kind, e) in FeatureKind::ALL.into_iter().zip(pair) {
                let theory = separability::noisy_moments(kind, 0.2, noise_axis.noise(*level)).unwrap();
                worst = worst.max(e.max_z(&theory));
                checked += 4;
            }
        }
    }
    r.record("2", "closed form vs 1e7-sample Monte Carlo", worst <= 3.0, format!("{checked} quantities, max |z| = {worst:.3}"));
}

fn crossings(r: &mut Report) {
    let label = separability::find_crossing(0.2, NoiseAxis::Label).unwrap().level;
    let gauss = separability::find_crossing(0.2, NoiseAxis::Gaussian).unwrap().level;
    let step = 0.01;
    let grid = |hi: f64| -> Vec<f64> { (0..).map(|i| i as f64 * step).take_while(|v| *v < hi).collect() };
    let cfg = McConfig::new(0.2, 11).with_samples(2_000_000);
    let mc_label = mc_oracle::estimate_crossing(McAxis::Label, &cfg, &grid(0.5)).unwrap();
    let mc_gauss = mc_oracle::estimate_crossing(McAxis::Gaussian, &cfg, &grid(1.0)).unwrap();
    let pass = (0.24..=0.26).contains(&label)
        && (0.53..=0.57).contains(&gauss)
        && close(mc_label.value, label, step)
        && close(mc_gauss.value, gauss, step);
    r.record(
        "3",
        "noise crossing points",
        pass,
        format!(
            "eta* = {label:.5} (mc {:.3}), lambda* = {gauss:.5} (mc {:.3}), grid step {step}",
            mc_label.value, mc_gauss.value
        ),
    );
}

fn ratio_chain(r: &mut Report) {
    let etas: Vec<f64> = (1..=9).map(|i| i as f64 * 0.05).collect();
    let failures: Vec<f64> = etas.iter().copied().filter(|&e| !separability::ratio_chain(0.2, e).unwrap().holds()).collect();
    r.record("4", "ratio chain under label noise, S=0.2", failures.is_empty(), format!("{} grid points, failing at {failures:?}", etas.len()));
}

fn fig4(r: &mut Report) {
    let cfg = Fig4Config::default();
    let res = experiments::fig4(&cfg).unwrap();
    let per_seed = |c: Condition| -> String {
        cfg.seeds
            .iter()
            .map(|&s| {
                let m = res.accuracy(s, c, FeatureKind::Mono).unwrap();
                let p = res.accuracy(s, c, FeatureKind::Poly).unwrap();
                format!("{m:.3}/{p:.3}")
            })
            .collect::<Vec<_>>()
            .join(" ")
    };
    let mean = |c: Condition, k: FeatureKind| res.mean_accuracy(c, k);
    let clean = (mean(Condition::Clean, FeatureKind::Mono), mean(Condition::Clean, FeatureKind::Poly));
    let label = (mean(Condition::Label, FeatureKind::Mono), mean(Condition::Label, FeatureKind::Poly));
    let gauss = (mean(Condition::Gaussian, FeatureKind::Mono), mean(Condition::Gaussian, FeatureKind::Poly));
    let seeds = cfg.seeds.len();
    r.record(
        "5a",
        "clean probe accuracy poly >= mono",
        clean.1 >= clean.0,
        format!("mean mono {:.4} poly {:.4}; per seed mono/poly {} ({seeds} seeds)", clean.0, clean.1, per_seed(Condition::Clean)),
    );
    r.record(
        "5b",
        "90% label noise mono > poly",
        label.0 > label.1,
        format!("mean mono {:.4} poly {:.4}; per seed {}", label.0, label.1, per_seed(Condition::Label)),
    );
    r.record(
        "5c",
        "Gaussian input noise mono > poly",
        gauss.0 > gauss.1,
        format!("mean mono {:.4} poly {:.4}; per seed {}", gauss.0, gauss.1, per_seed(Condition::Gaussian)),
    );
}

/// Relative error `|num - ana| / max(|num|, |ana|)` over a flat parameter
/// vector, using central differences.
fn grad_rel_err(params: &[f64], analytic: &[f64], loss: impl Fn(&[f64]) -> f64) -> f64 {
    let h = 1e-6;
    let mut p = params.to_vec();
    let mut num = Vec::with_capacity(p.len());
    for i in 0..p.len() {
        let orig = p[i];
        p[i] = orig + h;
        let up = loss(&p);
        p[i] = orig - h;
        let down = loss(&p);
        p[i] = orig;
        num.push((up - down) / (2.0 * h));
    }
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = num.iter().zip(analytic).map(|(a, b)| a - b).collect();
    norm(&diff) / norm(&num).max(norm(analytic)).max(1e-12)
}

fn flat(parts: &[&[f64]]) -> Vec<f64> {
    parts.iter().flat_map(|p| p.iter().copied()).collect()
}

fn owned(a: &Array2<f64>) -> Vec<f64> {
    a.iter().copied().collect()
}

fn gradients(r: &mut Report) {
    let mut g = rng::stream(99, "acceptance.gradients");
    let mut errs: Vec<(&str, f64)> = Vec::new();

    let x = generate(&DataSpec::new(6, 0.5, 16, 1)).unwrap().x;
    let mut toy = ToyModel::init(6, 3, ToyVariant::BiasRelu, 2).unwrap();
    toy.b = Array1::from(vec![0.05, -0.1, 0.2, 0.0, 0.1, -0.05]);
    let (_, gw, gb) = toy.loss_and_grad(x.view()).unwrap();
    let nw = toy.w.len();
    let params = flat(&[&owned(&toy.w), toy.b.as_slice().unwrap()]);
    let e = grad_rel_err(&params, &flat(&[&owned(&gw), gb.as_slice().unwrap()]), |p| {
        let mut m = toy.clone();
        m.w = Array2::from_shape_vec(toy.w.dim(), p[..nw].to_vec()).unwrap();
        m.b = Array1::from(p[nw..].to_vec());
        m.loss(x.view()).unwrap()
    });
    errs.push(("toy reconstruction", e));

    let logits = gaussian_matrix(&mut g, 1, 5, 1.5).row(0).to_owned();
    let (_, grad) = ce_loss(logits.view(), 2).unwrap();
    errs.push(("ce", grad_rel_err(logits.as_slice().unwrap(), grad.as_slice().unwrap(), |p| ce_loss(Array1::from(p.to_vec()).view(), 2).unwrap().0)));
    let (_, grad) = sce_loss(logits.view(), 2, 0.7, 0.4).unwrap();
    errs.push((
        "sce",
        grad_rel_err(logits.as_slice().unwrap(), grad.as_slice().unwrap(), |p| sce_loss(Array1::from(p.to_vec()).view(), 2, 0.7, 0.4).unwrap().0),
    ));

    let a = gaussian_matrix(&mut g, 5, 4, 1.0).mapv(|v: f64| v.abs() + 0.1);
    let pos = gaussian_matrix(&mut g, 5, 4, 1.0).mapv(|v: f64| v.abs() + 0.1);
    for (name, nonneg, sim) in [("infonce dot", true, Similarity::default()), ("infonce cosine", false, Similarity::cosine(0.2))] {
        let (_, ga, gp) = infonce_batch(a.view(), pos.view(), nonneg, sim).unwrap();
        let na = a.len();
        let e = grad_rel_err(&flat(&[&owned(&a), &owned(&pos)]), &flat(&[&owned(&ga), &owned(&gp)]), |p| {
            let aa = Array2::from_shape_vec(a.dim(), p[..na].to_vec()).unwrap();
            let pp = Array2::from_shape_vec(pos.dim(), p[na..].to_vec()).unwrap();
            infonce_batch(aa.view(), pp.view(), nonneg, sim).unwrap().0
        });
        errs.push((name, e));
    }

    let f = gaussian_matrix(&mut g, 16, 6, 1.0);
    let sae = SaeParams::init(f.view(), 12, 3, 5).unwrap();
    let (_, sg) = sae.loss_and_grads(f.view()).unwrap();
    let (n1, n2, n3) = (sae.w_enc.len(), sae.w_dec.len(), sae.b_pre.len());
    let params = flat(&[&owned(&sae.w_enc), &owned(&sae.w_dec), sae.b_pre.as_slice().unwrap(), sae.b_enc.as_slice().unwrap()]);
    let analytic = flat(&[&owned(&sg.w_enc), &owned(&sg.w_dec), sg.b_pre.as_slice().unwrap(), sg.b_enc.as_slice().unwrap()]);
    let e = grad_rel_err(&params, &analytic, |p| {
        let mut s = sae.clone();
        s.w_enc = Array2::from_shape_vec(sae.w_enc.dim(), p[..n1].to_vec()).unwrap();
        s.w_dec = Array2::from_shape_vec(sae.w_dec.dim(), p[n1..n1 + n2].to_vec()).unwrap();
        s.b_pre = Array1::from(p[n1 + n2..n1 + n2 + n3].to_vec());
        s.b_enc = Array1::from(p[n1 + n2 + n3..].to_vec());
        s.loss(f.view()).unwrap()
    });
    errs.push(("sae", e));

    let base = Mlp::new(&mut g, &[6, 8, 4], false).unwrap();
    let xs = gaussian_matrix(&mut g, 10, 6, 1.0);
    let labels: Vec<usize> = (0..10).map(|i| i % 4).collect();
    for (name, variant) in [("adapter standard", AdapterVariant::Standard), ("adapter mono", AdapterVariant::Mono)] {
        let spec = AdapterSpec { variant, rank: 2, ..AdapterSpec::default() };
        let mut model = AdaptedMlp::new(&base, &[0, 1], &spec, 3).unwrap();
        for ad in model.adapters.iter_mut().flatten() {
            ad.a = gaussian_matrix(&mut g, ad.a.nrows(), ad.a.ncols(), 0.5);
        }
        let (_, grads) = model.loss_and_grads(xs.view(), &labels).unwrap();
        let mut params = Vec::new();
        let mut analytic = Vec::new();
        for (ad, gr) in model.adapters.iter().zip(&grads) {
            if let (Some(ad), Some(gr)) = (ad, gr) {
                params.extend(owned(&ad.a).into_iter().chain(owned(&ad.b)));
                analytic.extend(owned(&gr.a).into_iter().chain(owned(&gr.b)));
            }
        }
        let e = grad_rel_err(&params, &analytic, |p| {
            let mut m = model.clone();
            let mut off = 0;
            for ad in m.adapters.iter_mut().flatten() {
                let (na, nb) = (ad.a.len(), ad.b.len());
                ad.a = Array2::from_shape_vec(ad.a.dim(), p[off..off + na].to_vec()).unwrap();
                ad.b = Array2::from_shape_vec(ad.b.dim(), p[off + na..off + na + nb].to_vec()).unwrap();
                off += na + nb;
            }
            m.loss_and_grads(xs.view(), &labels).unwrap().0
        });
        errs.push((name, e));
    }

    let worst = errs.iter().map(|e| e.1).fold(0.0, f64::max);
    let detail = errs.iter().map(|(n, e)| format!("{n} {e:.1e}")).collect::<Vec<_>>().join(", ");
    r.record("6", "central finite-difference gradient checks", worst < 1e-4, detail);
}

fn structure(r: &mut Report) {
    let mut g = rng::stream(5, "acceptance.structure");
    let f = gaussian_matrix(&mut g, 512, 10, 1.0);
    let k = 4;
    let sae = SaeParams::init(f.view(), 30, k, 1).unwrap();
    let probe = gaussian_matrix(&mut g, 100_000, 10, 2.0);
    let z = sae.encode_batch(probe.view()).unwrap();
    let max_nnz = z.rows().into_iter().map(|row| row.iter().filter(|v| **v != 0.0).count()).max().unwrap();

    let x = gaussian_matrix(&mut g, 256, 10, 1.0);
    let cfg = NclConfig {
        hidden: vec![16],
        output_dim: 8,
        train: TrainConfig::default().with_lr(1e-2).with_epochs(2).with_batch(Some(32)),
        ..NclConfig::default()
    }
    .with_nonneg(true);
    let enc = ncl::pretrain(x.view(), &cfg).unwrap().encoder;
    let out = enc.forward(gaussian_matrix(&mut g, 2000, 10, 3.0).view());
    let min_out = out.iter().copied().fold(f64::INFINITY, f64::min);

    let w0 = gaussian_matrix(&mut g, 16, 12, 1.0);
    let a = gaussian_matrix(&mut g, 16, 4, 1.0);
    let b = gaussian_matrix(&mut g, 4, 12, 1.0);
    let xs = gaussian_matrix(&mut g, 1000, 12, 1.0);
    let std = AdapterPair::new(w0.clone(), a.clone(), b.clone(), AdapterVariant::Standard).unwrap();
    let mono = AdapterPair::new(w0, a, b, AdapterVariant::Mono).unwrap();
    let s_std = adapter_activation_sparsity(&std, xs.view()).unwrap();
    let s_mono = adapter_activation_sparsity(&mono, xs.view()).unwrap();

    let pass = max_nnz <= k && min_out >= 0.0 && s_std == 0.0 && s_mono > 0.0;
    r.record(
        "7",
        "structural invariants",
        pass,
        format!("SAE max nonzeros {max_nnz} (K={k}, 1e5 encodes); NCL min output {min_out:.3e}; adapter sparsity standard {s_std:.3} mono {s_mono:.3}"),
    );
}

fn orderings(r: &mut Report) {
    if r.wants("8a") {
        let cfg = ConsistencyConfig::default();
        let res = experiments::consistency(&cfg).unwrap();
        let rule = "quantile";
        let (cl, ncl) = (res.mean(Method::Cl, rule), res.mean(Method::Ncl, rule));
        let (cl_t, ncl_t) = (res.mean(Method::Cl, "threshold"), res.mean(Method::Ncl, "threshold"));
        r.record(
            "8a",
            "semantic consistency NCL > CL",
            ncl > cl,
            format!("{rule} rule NCL {ncl:.4} CL {cl:.4}; threshold rule NCL {ncl_t:.4} CL {cl_t:.4} ({} seeds)", cfg.seeds.len()),
        );
    }
    if r.wants("8b") {
        let cfg = SaeExperimentConfig::default();
        let res = experiments::sae_vs_raw(&cfg).unwrap();
        let (raw, sae) = res.mean_noisy();
        r.record("8b", "SAE probe >= raw probe under 90% label noise", sae >= raw, format!("SAE {sae:.4} raw {raw:.4} ({} seeds)", cfg.seeds.len()));
    }
    if r.wants("8c") {
        let cfg = FewShotConfig::default();
        let res = experiments::finetune_fewshot(&cfg).unwrap();
        let (ce, nce) = (res.mean_val(ProbeLoss::Ce), res.mean_val(ProbeLoss::Nce));
        r.record(
            "8c",
            "NCE finetune val >= CE finetune val at 10% data",
            nce >= ce,
            format!("NCE {nce:.4} CE {ce:.4} ({} seeds)", cfg.seeds.len()),
        );
    }
    if r.wants("8d") {
        let cfg = Fig7cConfig::default();
        let res = experiments::fig7c(&cfg).unwrap();
        let (c, i) = (res.mean_correct(), res.mean_incorrect());
        r.record("8d", "top-dimension consistency correct > incorrect", c > i, format!("correct {c:.4} incorrect {i:.4} ({} seeds)", cfg.seeds.len()));
    }
}

fn determinism(r: &mut Report) {
    let mc = GridSpec {
        task: SweepTask::Mc,
        sparsity: vec![0.2, 0.5],
        eta: vec![0.0, 0.3],
        lambda: vec![0.0, 0.6],
        seeds: vec![0, 1],
        mc_samples: 50_000,
        ..GridSpec::default()
    };
    let mut probe = GridSpec {
        task: SweepTask::Probe,
        eta: vec![0.0, 0.4],
        lambda: vec![0.0, 0.5],
        fraction: vec![1.0, 0.5],
        seeds: vec![0, 1],
        ..GridSpec::default()
    };
    probe.probe.num_samples = 1000;
    probe.probe.probe.train.epochs = 30;
    let mut pass = true;
    let mut cells = 0;
    for spec in [mc, probe] {
        let csv = |p: usize| sweep::to_table(spec.task, &sweep::run(&spec, p).unwrap()).unwrap().to_csv_string().unwrap();
        let reference = csv(1);
        cells += spec.cells().len();
        pass &= [csv(1), csv(2), csv(4)].iter().all(|c| *c == reference);
    }
    r.record("9", "sweep CSVs byte-identical across reruns and parallelism 1/2/4", pass, format!("{cells} cells"));
}

fn main() {
    let only = std::env::var("ACCEPTANCE_ONLY").ok().map(|s| s.split(',').map(|p| p.trim().to_string()).collect());
    let mut r = Report { only, lines: Vec::new() };
    let steps: [(&str, fn(&mut Report)); 9] = [
        ("1", golden),
        ("2", oracle),
        ("3", crossings),
        ("4", ratio_chain),
        ("5", fig4),
        ("6", gradients),
        ("7", structure),
        ("8", orderings),
        ("9", determinism),
    ];
    for (id, step) in steps {
        let wanted = match &r.only {
            Some(ids) => ids.iter().any(|i| i.starts_with(id) || id.starts_with(i.as_str())),
            None => true,
        };
        if wanted {
            let t = Instant::now();
            step(&mut r);
            eprintln!("  criterion {id} took {:.1}s", t.elapsed().as_secs_f64());
        }
    }
    let passed = r.lines.iter().filter(|l| l.1).count();
    println!("acceptance: {passed}/{} passed", r.lines.len());
    if passed < r.lines.len() {
        std::process::exit(1);
    }
}
