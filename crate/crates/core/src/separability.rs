//! Closed-form separability theory for the two-concept case (`n = 2`, `m = 1`).
//!
//! `x1, x2` are independent sparse-uniform coordinates and the binary label is
//! `y = 1` iff `x1 > x2`. The monosemantic feature is `x1`; the polysemantic
//! feature is the antipodal pair `x1 - x2`.

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
pub use crate::moments::{FeatureKind, Moments};

fn check_sparsity(s: f64) -> Result<()> {
    ensure((0.0..1.0).contains(&s), || {
        Error::OutOfDomain(format!("sparsity must lie in [0, 1), got {s}"))
    })
}

fn check_eta(eta: f64) -> Result<()> {
    ensure((0.0..0.5).contains(&eta), || {
        Error::OutOfDomain(format!("label noise rate must lie in [0, 0.5), got {eta}"))
    })
}

fn check_lambda(lambda: f64) -> Result<()> {
    ensure(lambda.is_finite() && lambda >= 0.0, || {
        Error::OutOfDomain(format!("gaussian noise strength must be >= 0, got {lambda}"))
    })
}

/// Clean moments of `x1`.
pub fn mono_moments(s: f64) -> Result<Moments> {
    check_sparsity(s)?;
    let q = 1.0 + s * s;
    let mu0 = (1.0 - s).powi(2) / (3.0 * q);
    let mu1 = (2.0 + s) / (3.0 * (1.0 + s));
    let var0 = (1.0 - s).powi(2) / (6.0 * q) - mu0 * mu0;
    let var1 = (3.0 + s) / (6.0 * (1.0 + s)) - mu1 * mu1;
    Moments::new(mu0, mu1, var0, var1)
}

/// Clean moments of `x1 - x2`.
pub fn poly_moments(s: f64) -> Result<Moments> {
    check_sparsity(s)?;
    let q = 1.0 + s * s;
    let mu0 = -(1.0 - s) * (1.0 + 2.0 * s) / (3.0 * q);
    let mu1 = (1.0 + 2.0 * s) / (3.0 * (1.0 + s));
    let var0 = (1.0 - s) * (1.0 + 3.0 * s) / (6.0 * q) - mu0 * mu0;
    let var1 = (1.0 + 3.0 * s) / (6.0 * (1.0 + s)) - mu1 * mu1;
    Moments::new(mu0, mu1, var0, var1)
}

pub fn clean_moments(kind: FeatureKind, s: f64) -> Result<Moments> {
    match kind {
        FeatureKind::Mono => mono_moments(s),
        FeatureKind::Poly => poly_moments(s),
    }
}

/// `P(x1 - x2 <= x)`.
pub fn poly_cdf(x: f64, s: f64) -> Result<f64> {
    check_sparsity(s)?;
    ensure((-1.0..=1.0).contains(&x), || {
        Error::OutOfDomain(format!("x must lie in [-1, 1], got {x}"))
    })?;
    let a = 1.0 - s;
    Ok(if x >= 0.0 {
        1.0 + 0.5 * s * s - 0.5 * (1.0 - a * x).powi(2)
    } else {
        0.5 * (a * x + 1.0).powi(2) - 0.5 * s * s
    })
}

pub fn criterion_j(m: &Moments) -> Result<f64> {
    m.criterion_j()
}

/// Mixture weights `c[i][j]`: the share of noisy class `i` whose clean label is `j`.
pub fn label_mixture(s: f64, eta: f64) -> Result<[[f64; 2]; 2]> {
    check_sparsity(s)?;
    check_eta(eta)?;
    let p = 1.0 + s * s;
    let q = 1.0 - s * s;
    let d0 = 1.0 + (1.0 - 2.0 * eta) * s * s;
    let d1 = 1.0 - (1.0 - 2.0 * eta) * s * s;
    Ok([
        [(1.0 - eta) * p / d0, eta * q / d0],
        [eta * p / d1, (1.0 - eta) * q / d1],
    ])
}

/// Ratio of noisy to clean mean gap; identical for both features.
pub fn delta_mu_factor(s: f64, eta: f64) -> Result<f64> {
    check_sparsity(s)?;
    check_eta(eta)?;
    let s2 = s * s;
    let k = 1.0 - 2.0 * eta;
    Ok(k * (1.0 + s2) * (1.0 - s2) / ((1.0 + k * s2) * (1.0 - k * s2)))
}

/// Moments after flipping each binary label with probability `eta`.
pub fn apply_label_noise(m: &Moments, s: f64, eta: f64) -> Result<Moments> {
    let c = label_mixture(s, eta)?;
    let second = [m.var0 + m.mu0 * m.mu0, m.var1 + m.mu1 * m.mu1];
    let mix = |row: [f64; 2]| {
        let mu = row[0] * m.mu0 + row[1] * m.mu1;
        let var = row[0] * second[0] + row[1] * second[1] - mu * mu;
        (mu, var.max(0.0))
    };
    let (mu0, var0) = mix(c[0]);
    let (mu1, var1) = mix(c[1]);
    Moments::new(mu0, mu1, var0, var1)
}

pub fn label_noise_transform(
    clean_mono: &Moments,
    clean_poly: &Moments,
    s: f64,
    eta: f64,
) -> Result<(Moments, Moments)> {
    Ok((apply_label_noise(clean_mono, s, eta)?, apply_label_noise(clean_poly, s, eta)?))
}

/// Moments after adding `lambda * N(0, 1)` to each input coordinate.
pub fn gaussian_noise_transform(m: &Moments, kind: FeatureKind, lambda: f64) -> Result<Moments> {
    check_lambda(lambda)?;
    let extra = match kind {
        FeatureKind::Mono => lambda * lambda,
        FeatureKind::Poly => 2.0 * lambda * lambda,
    };
    Ok(Moments {
        var0: m.var0 + extra,
        var1: m.var1 + extra,
        ..*m
    })
}

/// Label noise rate and Gaussian input noise strength, applied together.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Noise {
    pub eta: f64,
    pub lambda: f64,
}

impl Noise {
    pub const CLEAN: Noise = Noise { eta: 0.0, lambda: 0.0 };

    pub fn label(eta: f64) -> Self {
        Noise { eta, lambda: 0.0 }
    }

    pub fn gaussian(lambda: f64) -> Self {
        Noise { eta: 0.0, lambda }
    }
}

/// Which noise level a crossing search varies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseAxis {
    Label,
    Gaussian,
}

impl NoiseAxis {
    pub fn noise(self, level: f64) -> Noise {
        match self {
            NoiseAxis::Label => Noise::label(level),
            NoiseAxis::Gaussian => Noise::gaussian(level),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            NoiseAxis::Label => "label",
            NoiseAxis::Gaussian => "gaussian",
        }
    }
}

impl std::str::FromStr for NoiseAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "label" => Ok(NoiseAxis::Label),
            "gaussian" => Ok(NoiseAxis::Gaussian),
            other => Err(Error::InvalidConfig(format!("unknown noise axis {other:?}"))),
        }
    }
}

/// Closed-form moments of a feature under label noise followed by input noise.
pub fn noisy_moments(kind: FeatureKind, s: f64, noise: Noise) -> Result<Moments> {
    let clean = clean_moments(kind, s)?;
    let labelled = if noise.eta > 0.0 {
        apply_label_noise(&clean, s, noise.eta)?
    } else {
        check_eta(noise.eta)?;
        clean
    };
    gaussian_noise_transform(&labelled, kind, noise.lambda)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeparabilityReport {
    pub feature: FeatureKind,
    pub sparsity: f64,
    pub noise: Noise,
    pub moments: Moments,
    pub delta_mu: f64,
    pub j: f64,
}

pub fn report(kind: FeatureKind, s: f64, noise: Noise) -> Result<SeparabilityReport> {
    let moments = noisy_moments(kind, s, noise)?;
    Ok(SeparabilityReport {
        feature: kind,
        sparsity: s,
        noise,
        moments,
        delta_mu: moments.delta_mu(),
        j: moments.criterion_j()?,
    })
}

/// Every `(S, eta, lambda, feature)` combination, in that nesting order.
pub fn theory_table(s_grid: &[f64], eta_grid: &[f64], lambda_grid: &[f64]) -> Result<Vec<SeparabilityReport>> {
    let mut rows = Vec::with_capacity(s_grid.len() * eta_grid.len() * lambda_grid.len() * 2);
    for &s in s_grid {
        for &eta in eta_grid {
            for &lambda in lambda_grid {
                for kind in FeatureKind::ALL {
                    rows.push(report(kind, s, Noise { eta, lambda })?);
                }
            }
        }
    }
    Ok(rows)
}

/// `J~(mono) - J~(poly)` at one noise level.
pub fn j_gap(s: f64, axis: NoiseAxis, level: f64) -> Result<f64> {
    let noise = axis.noise(level);
    Ok(report(FeatureKind::Mono, s, noise)?.j - report(FeatureKind::Poly, s, noise)?.j)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Crossing {
    pub level: f64,
    /// Grid bracket that contained the first sign change.
    pub bracket: (f64, f64),
}

const CROSSING_TOL: f64 = 1e-10;
const GAUSSIAN_SEARCH_MAX: f64 = 10.0;

/// Smallest noise level at which `J~(mono) >= J~(poly)`.
pub fn find_crossing(s: f64, axis: NoiseAxis) -> Result<Crossing> {
    check_sparsity(s)?;
    let (hi, steps) = match axis {
        NoiseAxis::Label => (0.5 - 1e-9, 500),
        NoiseAxis::Gaussian => (GAUSSIAN_SEARCH_MAX, 1000),
    };
    let grid: Vec<f64> = (0..=steps).map(|i| hi * i as f64 / steps as f64).collect();
    let first = j_gap(s, axis, grid[0])?;
    if first >= 0.0 {
        return Ok(Crossing {
            level: 0.0,
            bracket: (0.0, 0.0),
        });
    }
    let mut prev = (grid[0], first);
    for &level in &grid[1..] {
        let g = j_gap(s, axis, level)?;
        if g >= 0.0 {
            return bisect(s, axis, prev.0, level);
        }
        prev = (level, g);
    }
    Err(Error::NoCrossing(format!("{} noise on [0, {hi}] at S = {s}", axis.as_str())))
}

fn bisect(s: f64, axis: NoiseAxis, lo0: f64, hi0: f64) -> Result<Crossing> {
    // The gap must rise through the bracket.
    let probes: Vec<f64> = (0..=8)
        .map(|i| j_gap(s, axis, lo0 + (hi0 - lo0) * i as f64 / 8.0))
        .collect::<Result<_>>()?;
    if probes.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::NoCrossing(format!(
            "gap is not monotone on [{lo0}, {hi0}] for {} noise",
            axis.as_str()
        )));
    }
    let (mut lo, mut hi) = (lo0, hi0);
    while hi - lo > CROSSING_TOL {
        let mid = 0.5 * (lo + hi);
        if j_gap(s, axis, mid)? >= 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(Crossing {
        level: hi,
        bracket: (lo0, hi0),
    })
}

/// `(J~(poly)/J(poly), J~(mono)/J(mono))` under label noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatioChain {
    pub eta: f64,
    pub poly_ratio: f64,
    pub mono_ratio: f64,
}

impl RatioChain {
    pub fn holds(&self) -> bool {
        self.poly_ratio <= self.mono_ratio && self.mono_ratio <= 1.0
    }
}

pub fn ratio_chain(s: f64, eta: f64) -> Result<RatioChain> {
    let ratio = |kind| -> Result<f64> {
        Ok(report(kind, s, Noise::label(eta))?.j / report(kind, s, Noise::CLEAN)?.j)
    };
    Ok(RatioChain {
        eta,
        poly_ratio: ratio(FeatureKind::Poly)?,
        mono_ratio: ratio(FeatureKind::Mono)?,
    })
}
