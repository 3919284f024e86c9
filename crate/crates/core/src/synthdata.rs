//! The sparse-uniform toy distribution and its noise models.
//!
//! Each coordinate is exactly zero with probability `S` and otherwise uniform
//! on `(0, 1]`; the label of a sample is the index of its largest coordinate
//! (lowest index on ties).
//!
//! Dataset binary format (`MSDS`, little-endian):
//!
//! ```text
//! 0       4               magic "MSDS"
//! 4       4               u32 format version (1)
//! 8       8               u64 num_samples
//! 16      8               u64 n (features per sample)
//! 24      8 * rows * n    f64 X, row-major
//! ..      4 * rows        u32 labels
//! ```

use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array2, ArrayView1, Axis};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::rng;
use crate::tensor_io::{expect_magic, read_f64s, read_u32, read_u64, write_f64s, write_u32, write_u64, FORMAT_VERSION};

pub const DATASET_MAGIC: &[u8; 4] = b"MSDS";

/// What to do with a sample whose coordinates are all zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ZeroRowPolicy {
    /// Draw the row again (the label is undefined otherwise).
    #[default]
    Resample,
    /// Keep it and label it 0 by the lowest-index tie rule, matching the
    /// two-feature analysis where `y = 0` covers the event `x1 <= x2`.
    KeepLowestIndex,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSpec {
    pub n: usize,
    pub sparsity: f64,
    pub num_samples: usize,
    pub seed: u64,
    #[serde(default)]
    pub zero_rows: ZeroRowPolicy,
}

impl DataSpec {
    pub fn new(n: usize, sparsity: f64, num_samples: usize, seed: u64) -> Self {
        Self {
            n,
            sparsity,
            num_samples,
            seed,
            zero_rows: ZeroRowPolicy::Resample,
        }
    }

    pub fn with_zero_rows(mut self, policy: ZeroRowPolicy) -> Self {
        self.zero_rows = policy;
        self
    }

    pub fn validate(&self) -> Result<()> {
        ensure(self.n >= 1, || Error::InvalidConfig("n must be >= 1".into()))?;
        ensure(self.num_samples >= 1, || {
            Error::InvalidConfig("num_samples must be >= 1".into())
        })?;
        ensure((0.0..=1.0).contains(&self.sparsity), || {
            Error::InvalidConfig(format!("sparsity must lie in [0, 1], got {}", self.sparsity))
        })?;
        // With S = 1 every row is zero and resampling never terminates.
        ensure(
            !(self.sparsity >= 1.0 && self.zero_rows == ZeroRowPolicy::Resample),
            || Error::InvalidConfig("sparsity 1 admits no non-zero sample".into()),
        )?;
        Ok(())
    }
}

/// Samples and their argmax labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: Array2<f64>,
    pub y: Vec<usize>,
}

/// Index of the largest entry, lowest index on ties.
pub fn argmax(row: ArrayView1<'_, f64>) -> usize {
    let mut best = 0;
    let mut best_v = f64::NEG_INFINITY;
    for (i, &v) in row.iter().enumerate() {
        if v > best_v {
            best = i;
            best_v = v;
        }
    }
    best
}

/// One sparse-uniform coordinate: 0 with probability `s`, else uniform on (0, 1].
#[inline]
pub fn sparse_uniform<R: Rng + ?Sized>(rng: &mut R, s: f64) -> f64 {
    let gate: f64 = rng.random();
    let u: f64 = rng.random();
    if gate < s {
        0.0
    } else {
        1.0 - u
    }
}

pub fn generate(spec: &DataSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = rng::stream(spec.seed, "synthdata.generate");
    let mut x = Array2::<f64>::zeros((spec.num_samples, spec.n));
    let mut y = Vec::with_capacity(spec.num_samples);
    for mut row in x.axis_iter_mut(Axis(0)) {
        loop {
            let mut any = false;
            for v in row.iter_mut() {
                *v = sparse_uniform(&mut rng, spec.sparsity);
                any |= *v > 0.0;
            }
            if any || spec.zero_rows == ZeroRowPolicy::KeepLowestIndex {
                break;
            }
        }
        y.push(argmax(row.view()));
    }
    Ok(Dataset { x, y })
}

/// Symmetric label noise: with probability `eta` each label moves to a
/// uniformly chosen *other* class.
pub fn flip_labels(y: &[usize], num_classes: usize, eta: f64, seed: u64) -> Result<Vec<usize>> {
    ensure(num_classes >= 2, || {
        Error::InvalidConfig("label flipping needs at least two classes".into())
    })?;
    ensure((0.0..1.0).contains(&eta), || {
        Error::OutOfDomain(format!("noise rate must lie in [0, 1), got {eta}"))
    })?;
    if let Some(&bad) = y.iter().find(|&&l| l >= num_classes) {
        return Err(Error::OutOfDomain(format!("label {bad} >= {num_classes} classes")));
    }
    let mut rng = rng::stream(seed, "synthdata.flip_labels");
    Ok(y
        .iter()
        .map(|&label| {
            let u: f64 = rng.random();
            let shift = rng.random_range(1..num_classes);
            if u < eta {
                (label + shift) % num_classes
            } else {
                label
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    LabelSymmetric,
    InputGaussian,
    InputUniform,
}

/// A noise condition: rate `eta` for labels, standard deviation for Gaussian
/// input noise, half-width for uniform input noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    pub strength: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn label(eta: f64, seed: u64) -> Self {
        Self {
            kind: NoiseKind::LabelSymmetric,
            strength: eta,
            seed,
        }
    }

    pub fn gaussian(lambda: f64, seed: u64) -> Self {
        Self {
            kind: NoiseKind::InputGaussian,
            strength: lambda,
            seed,
        }
    }

    pub fn uniform(half_width: f64, seed: u64) -> Self {
        Self {
            kind: NoiseKind::InputUniform,
            strength: half_width,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            NoiseKind::LabelSymmetric => ensure((0.0..1.0).contains(&self.strength), || {
                Error::InvalidConfig(format!("label noise rate must lie in [0, 1), got {}", self.strength))
            }),
            _ => ensure(self.strength.is_finite() && self.strength >= 0.0, || {
                Error::InvalidConfig(format!("noise strength must be >= 0, got {}", self.strength))
            }),
        }
    }
}

/// Additive input noise. Outputs are not clipped back into `[0, 1]`.
pub fn perturb_inputs(x: &Array2<f64>, spec: &NoiseSpec) -> Result<Array2<f64>> {
    spec.validate()?;
    let mut rng = rng::stream(spec.seed, "synthdata.perturb_inputs");
    let mut out = x.clone();
    match spec.kind {
        NoiseKind::LabelSymmetric => {
            return Err(Error::InvalidConfig("label noise cannot perturb inputs".into()))
        }
        NoiseKind::InputGaussian => {
            if spec.strength > 0.0 {
                for v in out.iter_mut() {
                    let z: f64 = rng.sample(StandardNormal);
                    *v += spec.strength * z;
                }
            }
        }
        NoiseKind::InputUniform => {
            if spec.strength > 0.0 {
                let w = spec.strength;
                for v in out.iter_mut() {
                    *v += rng.random_range(-w..w);
                }
            }
        }
    }
    Ok(out)
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.x.ncols()
    }

    pub fn select(&self, idx: &[usize]) -> Dataset {
        Dataset {
            x: self.x.select(Axis(0), idx),
            y: idx.iter().map(|&i| self.y[i]).collect(),
        }
    }

    /// Split off a validation fraction using a dedicated split stream.
    pub fn split(&self, val_fraction: f64, split_seed: u64) -> Result<(Dataset, Dataset)> {
        ensure(val_fraction > 0.0 && val_fraction < 1.0, || {
            Error::InvalidConfig(format!("validation fraction must lie in (0, 1), got {val_fraction}"))
        })?;
        use rand::seq::SliceRandom;
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.shuffle(&mut rng::stream(split_seed, "synthdata.split"));
        let n_val = ((self.len() as f64) * val_fraction).round() as usize;
        ensure(n_val >= 1 && n_val < self.len(), || {
            Error::InvalidConfig("split leaves an empty side".into())
        })?;
        let (val, train) = order.split_at(n_val);
        let mut train = train.to_vec();
        let mut val = val.to_vec();
        train.sort_unstable();
        val.sort_unstable();
        Ok((self.select(&train), self.select(&val)))
    }

    /// Uniformly subsample a fraction of the rows (at least one).
    pub fn subsample(&self, fraction: f64, seed: u64) -> Result<Dataset> {
        ensure(fraction > 0.0 && fraction <= 1.0, || {
            Error::InvalidConfig(format!("subsample fraction must lie in (0, 1], got {fraction}"))
        })?;
        if fraction >= 1.0 {
            return Ok(self.clone());
        }
        use rand::seq::SliceRandom;
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.shuffle(&mut rng::stream(seed, "synthdata.subsample"));
        let k = ((self.len() as f64 * fraction).round() as usize).max(1);
        let mut keep = order[..k].to_vec();
        keep.sort_unstable();
        Ok(self.select(&keep))
    }

    pub fn with_labels(&self, y: Vec<usize>) -> Dataset {
        assert_eq!(y.len(), self.len());
        Dataset { x: self.x.clone(), y }
    }

    pub fn write_binary<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(DATASET_MAGIC)?;
        write_u32(w, FORMAT_VERSION)?;
        write_u64(w, self.len() as u64)?;
        write_u64(w, self.n_features() as u64)?;
        write_f64s(w, self.x.iter())?;
        for &l in &self.y {
            write_u32(w, l as u32)?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(r: &mut R) -> Result<Dataset> {
        expect_magic(r, DATASET_MAGIC)?;
        let rows = read_u64(r)? as usize;
        let n = read_u64(r)? as usize;
        let total = rows.checked_mul(n).filter(|&t| t < (1 << 32)).ok_or_else(|| Error::Format("dataset too large".into()))?;
        let data = read_f64s(r, total)?;
        let x = Array2::from_shape_vec((rows, n), data).map_err(|e| Error::Format(e.to_string()))?;
        let mut y = Vec::with_capacity(rows);
        for _ in 0..rows {
            y.push(read_u32(r)? as usize);
        }
        Ok(Dataset { x, y })
    }

    pub fn save_binary(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_binary(&mut f)?;
        f.flush()?;
        Ok(())
    }

    pub fn load_binary(path: impl AsRef<Path>) -> Result<Dataset> {
        Self::read_binary(&mut std::io::BufReader::new(std::fs::File::open(path)?))
    }

    /// CSV with header `x_0,..,x_{n-1},y`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let mut header: Vec<String> = (0..self.n_features()).map(|i| format!("x_{i}")).collect();
        header.push("y".into());
        wr.write_record(&header)?;
        for (row, &label) in self.x.axis_iter(Axis(0)).zip(&self.y) {
            let mut rec: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            rec.push(label.to_string());
            wr.write_record(&rec)?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Dataset> {
        let mut rd = csv::Reader::from_reader(r);
        let header = rd.headers()?.clone();
        let n = header.len().checked_sub(1).ok_or_else(|| Error::Format("empty header".into()))?;
        for (i, h) in header.iter().enumerate() {
            let expected = if i == n { "y".to_string() } else { format!("x_{i}") };
            if h != expected {
                return Err(Error::Format(format!("column {i}: expected {expected:?}, found {h:?}")));
            }
        }
        let mut data = Vec::new();
        let mut y = Vec::new();
        for rec in rd.records() {
            let rec = rec?;
            for field in rec.iter().take(n) {
                data.push(field.parse::<f64>().map_err(|e| Error::Format(e.to_string()))?);
            }
            y.push(
                rec.get(n)
                    .ok_or_else(|| Error::Format("missing label".into()))?
                    .parse::<usize>()
                    .map_err(|e| Error::Format(e.to_string()))?,
            );
        }
        let x = Array2::from_shape_vec((y.len(), n), data).map_err(|e| Error::Format(e.to_string()))?;
        Ok(Dataset { x, y })
    }
}
