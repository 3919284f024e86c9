//! Cartesian parameter sweeps with deterministic, order-independent output.
//!
//! Cells run on a dedicated thread pool and are merged back in grid order.
//! A cell's random streams depend only on its own parameters, so the output
//! is identical for every degree of parallelism. Failing cells are recorded
//! with their error and do not stop the sweep.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::experiments::toy_split;
use crate::mc_oracle::{self, McConfig};
use crate::moments::FeatureKind;
use crate::probe::{self, ProbeConfig};
use crate::rng::derive_seed;
use crate::separability::{self, Noise};
use crate::synthdata::{flip_labels, NoiseSpec};
use crate::table::{fmt_f64, Table};
use crate::toymodel::{extract_features, FeatureConstruction};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepTask {
    /// Closed-form moments and separability criterion.
    #[default]
    Theory,
    /// Monte-Carlo moment estimates with standard errors.
    Mc,
    /// Linear probe on direct features, trained on noisy labels and
    /// evaluated under Gaussian input noise.
    Probe,
}

impl SweepTask {
    pub fn as_str(self) -> &'static str {
        match self {
            SweepTask::Theory => "theory",
            SweepTask::Mc => "mc",
            SweepTask::Probe => "probe",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeCellConfig {
    pub n: usize,
    pub m: usize,
    pub num_samples: usize,
    pub probe: ProbeConfig,
}

impl Default for ProbeCellConfig {
    fn default() -> Self {
        Self {
            n: 40,
            m: 20,
            num_samples: 25_000,
            probe: ProbeConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSpec {
    pub task: SweepTask,
    pub features: Vec<FeatureKind>,
    pub sparsity: Vec<f64>,
    pub eta: Vec<f64>,
    pub lambda: Vec<f64>,
    pub fraction: Vec<f64>,
    pub seeds: Vec<u64>,
    pub mc_samples: usize,
    pub probe: ProbeCellConfig,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            task: SweepTask::Theory,
            features: FeatureKind::ALL.to_vec(),
            sparsity: vec![0.2],
            eta: vec![0.0],
            lambda: vec![0.0],
            fraction: vec![1.0],
            seeds: vec![0],
            mc_samples: 1_000_000,
            probe: ProbeCellConfig::default(),
        }
    }
}

/// One point of the grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub index: usize,
    pub feature: FeatureKind,
    pub sparsity: f64,
    pub eta: f64,
    pub lambda: f64,
    pub fraction: f64,
    pub seed: u64,
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        for (name, len) in [
            ("features", self.features.len()),
            ("sparsity", self.sparsity.len()),
            ("eta", self.eta.len()),
            ("lambda", self.lambda.len()),
            ("fraction", self.fraction.len()),
            ("seeds", self.seeds.len()),
        ] {
            ensure(len > 0, || Error::InvalidConfig(format!("sweep axis {name} is empty")))?;
        }
        Ok(())
    }

    /// Cells in grid order: feature, sparsity, eta, lambda, fraction, seed,
    /// with the seed varying fastest.
    pub fn cells(&self) -> Vec<Cell> {
        let mut out = Vec::new();
        for &feature in &self.features {
            for &sparsity in &self.sparsity {
                for &eta in &self.eta {
                    for &lambda in &self.lambda {
                        for &fraction in &self.fraction {
                            for &seed in &self.seeds {
                                out.push(Cell {
                                    index: out.len(),
                                    feature,
                                    sparsity,
                                    eta,
                                    lambda,
                                    fraction,
                                    seed,
                                });
                            }
                        }
                    }
                }
            }
        }
        out
    }
}

/// Outcome of one cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CellResult {
    pub cell: Cell,
    pub outcome: std::result::Result<Vec<(&'static str, f64)>, String>,
}

fn theory_cell(c: &Cell) -> Result<Vec<(&'static str, f64)>> {
    let r = separability::report(c.feature, c.sparsity, Noise { eta: c.eta, lambda: c.lambda })?;
    Ok(vec![
        ("mu0", r.moments.mu0),
        ("mu1", r.moments.mu1),
        ("var0", r.moments.var0),
        ("var1", r.moments.var1),
        ("delta_mu", r.delta_mu),
        ("j", r.j),
    ])
}

fn mc_cell(spec: &GridSpec, c: &Cell) -> Result<Vec<(&'static str, f64)>> {
    let cfg = McConfig::new(c.sparsity, c.seed)
        .with_samples(spec.mc_samples)
        .with_eta(c.eta)
        .with_lambda(c.lambda);
    let e = mc_oracle::estimate_moments(c.feature, &cfg)?;
    let m = e.moments();
    Ok(vec![
        ("mu0", e.mu0.value),
        ("mu0_se", e.mu0.std_error),
        ("mu1", e.mu1.value),
        ("mu1_se", e.mu1.std_error),
        ("var0", e.var0.value),
        ("var0_se", e.var0.std_error),
        ("var1", e.var1.value),
        ("var1_se", e.var1.std_error),
        ("j", m.criterion_j()?),
    ])
}

fn probe_cell(spec: &GridSpec, c: &Cell) -> Result<Vec<(&'static str, f64)>> {
    let p = &spec.probe;
    let (train, val) = toy_split(p.n, c.sparsity, p.num_samples, c.seed)?;
    let labels = flip_labels(&train.y, p.n, c.eta, derive_seed(c.seed, "sweep.label"))?;
    let construction = match c.feature {
        FeatureKind::Mono => FeatureConstruction::mono_first(p.m),
        FeatureKind::Poly => FeatureConstruction::poly_halves(p.m),
    };
    let feats = |x: ndarray::ArrayView2<'_, f64>| extract_features(x, &construction, None);
    let mut cfg = p.probe.clone().with_subsample(c.fraction);
    cfg.train.seed = derive_seed(c.seed, "sweep.probe");
    let run = probe::train_probe(feats(train.x.view())?.view(), &labels, p.n, &cfg)?;
    let noise = (c.lambda > 0.0).then(|| NoiseSpec::gaussian(c.lambda, derive_seed(c.seed, "sweep.gaussian")));
    let val_acc = probe::evaluate_with(&run.probe, val.x.view(), &val.y, noise.as_ref(), feats)?;
    Ok(vec![("train_acc", run.train_accuracy), ("val_acc", val_acc)])
}

pub fn run_cell(spec: &GridSpec, cell: &Cell) -> CellResult {
    let outcome = match spec.task {
        SweepTask::Theory => theory_cell(cell),
        SweepTask::Mc => mc_cell(spec, cell),
        SweepTask::Probe => probe_cell(spec, cell),
    };
    CellResult {
        cell: *cell,
        outcome: outcome.map_err(|e| format!("{}: {e}", e.kind())),
    }
}

/// Run every cell on `parallelism` threads; results come back in grid order.
pub fn run(spec: &GridSpec, parallelism: usize) -> Result<Vec<CellResult>> {
    spec.validate()?;
    ensure(parallelism >= 1, || Error::InvalidConfig("parallelism must be >= 1".into()))?;
    let cells = spec.cells();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism)
        .build()
        .map_err(|e| Error::InvalidConfig(e.to_string()))?;
    Ok(pool.install(|| cells.par_iter().map(|c| run_cell(spec, c)).collect()))
}

pub const COLUMNS: [&str; 12] = [
    "cell", "task", "feature", "sparsity", "eta", "lambda", "fraction", "seed", "status", "metric", "value", "error",
];

/// Long-format table, one row per metric; a failed cell gets a single row
/// with an empty metric and the error message.
pub fn to_table(task: SweepTask, results: &[CellResult]) -> Result<Table> {
    let mut t = Table::new(COLUMNS);
    for r in results {
        let c = &r.cell;
        let prefix = vec![
            c.index.to_string(),
            task.as_str().into(),
            c.feature.as_str().into(),
            fmt_f64(c.sparsity),
            fmt_f64(c.eta),
            fmt_f64(c.lambda),
            fmt_f64(c.fraction),
            c.seed.to_string(),
        ];
        match &r.outcome {
            Ok(metrics) => {
                for (name, v) in metrics {
                    let mut row = prefix.clone();
                    row.extend(["ok".into(), (*name).into(), fmt_f64(*v), String::new()]);
                    t.push(row)?;
                }
            }
            Err(msg) => {
                let mut row = prefix;
                row.extend(["error".into(), String::new(), String::new(), msg.clone()]);
                t.push(row)?;
            }
        }
    }
    Ok(t)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_order_and_size() {
        let spec = GridSpec {
            sparsity: vec![0.1, 0.2],
            eta: vec![0.0, 0.3],
            seeds: vec![5, 6],
            ..GridSpec::default()
        };
        let cells = spec.cells();
        assert_eq!(cells.len(), 2 * 2 * 2 * 2);
        assert_eq!((cells[0].seed, cells[1].seed), (5, 6));
        assert_eq!(cells[2].eta, 0.3);
        assert_eq!(cells[8].feature, FeatureKind::Poly);
        assert!(cells.iter().enumerate().all(|(i, c)| c.index == i));
    }

    #[test]
    fn single_cell_equals_direct_run() {
        let spec = GridSpec::default();
        let res = run(&spec, 1).unwrap();
        let direct = separability::report(FeatureKind::Mono, 0.2, Noise::CLEAN).unwrap();
        let j = res[0].outcome.as_ref().unwrap().iter().find(|m| m.0 == "j").unwrap().1;
        assert_eq!(j, direct.j);
    }

    #[test]
    fn failures_are_recorded_and_sweep_continues() {
        let spec = GridSpec {
            eta: vec![0.1, 0.6],
            ..GridSpec::default()
        };
        let res = run(&spec, 2).unwrap();
        assert_eq!(res.len(), 4);
        assert!(res[0].outcome.is_ok());
        assert!(res[1].outcome.as_ref().unwrap_err().starts_with("out_of_domain: "));
        let t = to_table(spec.task, &res).unwrap();
        let status = t.column("status").unwrap();
        assert_eq!(t.rows.iter().filter(|r| r[status] == "error").count(), 2);
    }

    #[test]
    fn parallelism_does_not_change_bytes() {
        let spec = GridSpec {
            task: SweepTask::Mc,
            eta: vec![0.0, 0.2],
            seeds: vec![1, 2],
            mc_samples: 200_000,
            ..GridSpec::default()
        };
        let a = to_table(spec.task, &run(&spec, 1).unwrap()).unwrap().to_csv_string().unwrap();
        let b = to_table(spec.task, &run(&spec, 4).unwrap()).unwrap().to_csv_string().unwrap();
        assert_eq!(a, b);
        assert!(a.starts_with("# monosem-csv v1\ncell,task,"));
    }

    #[test]
    fn empty_axis_rejected() {
        let spec = GridSpec {
            seeds: vec![],
            ..GridSpec::default()
        };
        assert!(run(&spec, 1).is_err());
        assert!(run(&GridSpec::default(), 0).is_err());
    }
}
