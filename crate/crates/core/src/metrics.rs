//! Monosemanticity and sparsity metrics over feature matrices.

use std::io::Write;

use ndarray::{ArrayView1, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::probe::ProbeModel;

/// Which samples count as activating a dimension.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum ActivationRule {
    /// Value strictly above `epsilon`.
    Threshold { epsilon: f64 },
    /// The top `q` fraction of the column (at least one row), restricted to
    /// values strictly above the column minimum.
    TopQuantile { q: f64 },
}

impl Default for ActivationRule {
    fn default() -> Self {
        ActivationRule::Threshold { epsilon: 0.0 }
    }
}

impl ActivationRule {
    pub const DEFAULT_QUANTILE: f64 = 0.05;

    pub fn quantile() -> Self {
        ActivationRule::TopQuantile { q: Self::DEFAULT_QUANTILE }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            ActivationRule::Threshold { epsilon } => ensure(epsilon >= 0.0, || {
                Error::InvalidConfig(format!("threshold must be >= 0, got {epsilon}"))
            }),
            ActivationRule::TopQuantile { q } => ensure(q > 0.0 && q <= 1.0, || {
                Error::InvalidConfig(format!("quantile must lie in (0, 1], got {q}"))
            }),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            ActivationRule::Threshold { .. } => "threshold",
            ActivationRule::TopQuantile { .. } => "quantile",
        }
    }

    /// Row indices activating column `col`.
    pub fn activated(&self, col: ArrayView1<'_, f64>) -> Vec<usize> {
        match *self {
            ActivationRule::Threshold { epsilon } => {
                col.iter().enumerate().filter(|(_, &v)| v > epsilon).map(|(i, _)| i).collect()
            }
            ActivationRule::TopQuantile { q } => {
                if col.is_empty() {
                    return Vec::new();
                }
                let k = ((q * col.len() as f64).round() as usize).max(1);
                let min = col.iter().copied().fold(f64::INFINITY, f64::min);
                let mut order: Vec<usize> = (0..col.len()).collect();
                order.sort_by(|&a, &b| col[b].total_cmp(&col[a]));
                order.truncate(k);
                order.retain(|&i| col[i] > min);
                order
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DimensionConsistency {
    /// `None` when the dimension is never activated.
    pub score: Option<f64>,
    pub activated_count: usize,
    pub dominant_class: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    pub rule: ActivationRule,
    pub num_classes: usize,
    pub dimensions: Vec<DimensionConsistency>,
}

impl ConsistencyReport {
    /// Mean over defined dimensions, `None` if every dimension is dead.
    pub fn mean(&self) -> Option<f64> {
        let defined: Vec<f64> = self.dimensions.iter().filter_map(|d| d.score).collect();
        (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64)
    }

    pub fn dead_rate(&self) -> f64 {
        if self.dimensions.is_empty() {
            return 0.0;
        }
        self.dimensions.iter().filter(|d| d.score.is_none()).count() as f64 / self.dimensions.len() as f64
    }

    pub fn score(&self, dim: usize) -> Option<f64> {
        self.dimensions.get(dim).and_then(|d| d.score)
    }

    /// Per-dimension CSV: `dimension,score,activated_count,dominant_class`.
    /// Undefined entries are left empty.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["dimension", "score", "activated_count", "dominant_class"])?;
        for (j, d) in self.dimensions.iter().enumerate() {
            w.write_record([
                j.to_string(),
                d.score.map(|s| format!("{s:.6}")).unwrap_or_default(),
                d.activated_count.to_string(),
                d.dominant_class.map(|c| c.to_string()).unwrap_or_default(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn check_labels(features: ArrayView2<'_, f64>, labels: &[usize], num_classes: usize) -> Result<()> {
    ensure(features.nrows() == labels.len(), || {
        Error::DimensionMismatch(format!("{} rows but {} labels", features.nrows(), labels.len()))
    })?;
    ensure(num_classes >= 1, || Error::InvalidConfig("num_classes must be positive".into()))?;
    ensure(labels.iter().all(|&y| y < num_classes), || {
        Error::OutOfDomain(format!("label outside [0, {num_classes})"))
    })
}

/// Modal-class share among the activated samples of each dimension.
pub fn semantic_consistency(
    features: ArrayView2<'_, f64>,
    labels: &[usize],
    num_classes: usize,
    rule: ActivationRule,
) -> Result<ConsistencyReport> {
    rule.validate()?;
    check_labels(features, labels, num_classes)?;
    let dimensions = (0..features.ncols())
        .into_par_iter()
        .map(|j| {
            let active = rule.activated(features.column(j));
            let mut counts = vec![0usize; num_classes];
            for &i in &active {
                counts[labels[i]] += 1;
            }
            let (dominant, &top) = counts
                .iter()
                .enumerate()
                .rev()
                .max_by_key(|(_, &c)| c)
                .expect("num_classes >= 1");
            if active.is_empty() {
                DimensionConsistency {
                    score: None,
                    activated_count: 0,
                    dominant_class: None,
                }
            } else {
                DimensionConsistency {
                    score: Some(top as f64 / active.len() as f64),
                    activated_count: active.len(),
                    dominant_class: Some(dominant),
                }
            }
        })
        .collect();
    Ok(ConsistencyReport {
        rule,
        num_classes,
        dimensions,
    })
}

/// Dimension with the largest probe weight for class `c`; ties go to the
/// lowest index.
pub fn salient_dimension_per_class(probe: &ProbeModel, class: usize) -> Result<usize> {
    ensure(class < probe.num_classes(), || Error::OutOfDomain(format!("class {class}")))?;
    ensure(probe.dim() > 0, || Error::Empty("probe weights".into()))?;
    let row = probe.weights.row(class);
    let mut best = 0;
    for (j, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = j;
        }
    }
    Ok(best)
}

/// Consistency scores of each sample's most activated dimension, split by
/// whether the sample was classified correctly. Samples whose top dimension
/// is undefined are skipped.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TopDimensionSplit {
    pub correct: Vec<f64>,
    pub incorrect: Vec<f64>,
}

impl TopDimensionSplit {
    pub fn mean_correct(&self) -> Option<f64> {
        mean(&self.correct)
    }

    pub fn mean_incorrect(&self) -> Option<f64> {
        mean(&self.incorrect)
    }
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

pub fn per_sample_top_dimension_consistency(
    features: ArrayView2<'_, f64>,
    report: &ConsistencyReport,
    correct: &[bool],
) -> Result<TopDimensionSplit> {
    ensure(features.nrows() == correct.len(), || {
        Error::DimensionMismatch(format!("{} rows but {} flags", features.nrows(), correct.len()))
    })?;
    ensure(features.ncols() == report.dimensions.len(), || {
        Error::DimensionMismatch("report does not match feature width".into())
    })?;
    let mut out = TopDimensionSplit::default();
    for (row, &ok) in features.axis_iter(Axis(0)).zip(correct) {
        if row.is_empty() {
            continue;
        }
        let top = crate::synthdata::argmax(row);
        if let Some(s) = report.score(top) {
            if ok {
                out.correct.push(s);
            } else {
                out.incorrect.push(s);
            }
        }
    }
    Ok(out)
}

/// Fraction of exactly-zero entries.
pub fn activation_sparsity(features: ArrayView2<'_, f64>) -> f64 {
    if features.is_empty() {
        return 0.0;
    }
    features.iter().filter(|&&v| v == 0.0).count() as f64 / features.len() as f64
}

/// Per-class accuracy from predictions.
pub fn class_accuracy(pred: &[usize], labels: &[usize], num_classes: usize) -> Result<Vec<Option<f64>>> {
    ensure(pred.len() == labels.len(), || Error::DimensionMismatch("prediction count".into()))?;
    let mut hit = vec![0usize; num_classes];
    let mut total = vec![0usize; num_classes];
    for (&p, &y) in pred.iter().zip(labels) {
        ensure(y < num_classes, || Error::OutOfDomain(format!("label {y}")))?;
        total[y] += 1;
        hit[y] += usize::from(p == y);
    }
    Ok(hit
        .iter()
        .zip(&total)
        .map(|(&h, &t)| (t > 0).then(|| h as f64 / t as f64))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gaussian_matrix;
    use crate::rng;
    use ndarray::{array, Array1, Array2};

    #[test]
    fn consistency_examples() {
        let f = array![[1.0], [2.0], [0.5], [3.0], [0.0]];
        let r = semantic_consistency(f.view(), &[0, 0, 0, 1, 1], 2, ActivationRule::default()).unwrap();
        assert_eq!(r.dimensions[0].score, Some(0.75));
        assert_eq!(r.dimensions[0].activated_count, 4);
        assert_eq!(r.dimensions[0].dominant_class, Some(0));
        let f = array![[1.0, 0.0], [1.0, 0.0], [0.0, 0.0]];
        let r = semantic_consistency(f.view(), &[2, 2, 0], 3, ActivationRule::default()).unwrap();
        assert_eq!(r.score(0), Some(1.0));
        assert_eq!(r.score(1), None);
        assert_eq!(r.dead_rate(), 0.5);
        assert_eq!(r.mean(), Some(1.0));
    }

    #[test]
    fn quantile_rule() {
        let col = array![0.1, 0.9, 0.5, 0.9, -1.0];
        assert_eq!(ActivationRule::TopQuantile { q: 0.4 }.activated(col.view()), vec![1, 3]);
        assert_eq!(ActivationRule::TopQuantile { q: 0.01 }.activated(col.view()), vec![1]);
        assert!(ActivationRule::TopQuantile { q: 0.5 }.activated(Array1::zeros(10).view()).is_empty());
        assert!(ActivationRule::TopQuantile { q: 0.0 }.validate().is_err());
        assert!(ActivationRule::Threshold { epsilon: -1.0 }.validate().is_err());
    }

    #[test]
    fn scores_within_bounds_and_scale_invariant() {
        let mut r = rng::stream(1, "m");
        let f = gaussian_matrix(&mut r, 300, 12, 1.0);
        let labels: Vec<usize> = (0..300).map(|i| (i * 7) % 5).collect();
        for rule in [ActivationRule::default(), ActivationRule::quantile()] {
            let rep = semantic_consistency(f.view(), &labels, 5, rule).unwrap();
            for d in &rep.dimensions {
                let s = d.score.unwrap();
                assert!((0.2 - 1e-12..=1.0).contains(&s));
            }
            let scaled = &f * 3.7;
            assert_eq!(semantic_consistency(scaled.view(), &labels, 5, rule).unwrap(), rep);
        }
    }

    #[test]
    fn salient_dimension() {
        let mut p = ProbeModel::zeros(2, 3, None);
        assert_eq!(salient_dimension_per_class(&p, 0).unwrap(), 0);
        p.weights[[1, 2]] = 1.0;
        assert_eq!(salient_dimension_per_class(&p, 1).unwrap(), 2);
        assert!(salient_dimension_per_class(&p, 2).is_err());
    }

    #[test]
    fn top_dimension_split() {
        let f = array![[1.0, 0.0], [0.0, 1.0], [2.0, 0.0]];
        let labels = [0, 1, 1];
        let rep = semantic_consistency(f.view(), &labels, 2, ActivationRule::default()).unwrap();
        let all = per_sample_top_dimension_consistency(f.view(), &rep, &[true; 3]).unwrap();
        assert_eq!(all.correct, vec![0.5, 1.0, 0.5]);
        assert!(all.incorrect.is_empty());
        let same = Array2::from_elem((4, 2), 1.0);
        let rep = semantic_consistency(same.view(), &[0, 1, 0, 1], 2, ActivationRule::default()).unwrap();
        let split = per_sample_top_dimension_consistency(same.view(), &rep, &[true, false, true, false]).unwrap();
        assert_eq!(split.correct, split.incorrect);
    }

    #[test]
    fn sparsity_cases() {
        assert_eq!(activation_sparsity(Array2::<f64>::zeros((3, 4)).view()), 1.0);
        assert_eq!(activation_sparsity(Array2::from_elem((3, 4), 0.2).view()), 0.0);
        let g = gaussian_matrix(&mut rng::stream(2, "g"), 400, 50, 1.0).mapv(|v| v.max(0.0));
        assert!((activation_sparsity(g.view()) - 0.5).abs() < 0.02);
    }

    #[test]
    fn per_dimension_csv() {
        let f = array![[1.0, 0.0], [1.0, 0.0]];
        let rep = semantic_consistency(f.view(), &[1, 1], 2, ActivationRule::default()).unwrap();
        let mut buf = Vec::new();
        rep.write_csv(&mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "dimension,score,activated_count,dominant_class\n0,1.000000,2,1\n1,,0,\n"
        );
    }

    #[test]
    fn class_accuracy_counts() {
        let acc = class_accuracy(&[0, 1, 1, 2], &[0, 1, 2, 2], 4).unwrap();
        assert_eq!(acc, vec![Some(1.0), Some(1.0), Some(0.5), None]);
    }
}
