//! Class-conditional first and second moments of a scalar feature.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The two scalar features of the two-concept analysis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    /// `x1`, one concept per dimension.
    Mono,
    /// `x1 - x2`, an antipodal pair sharing one dimension.
    Poly,
}

impl FeatureKind {
    pub const ALL: [FeatureKind; 2] = [FeatureKind::Mono, FeatureKind::Poly];

    pub fn as_str(self) -> &'static str {
        match self {
            FeatureKind::Mono => "mono",
            FeatureKind::Poly => "poly",
        }
    }
}

impl std::fmt::Display for FeatureKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for FeatureKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mono" => Ok(FeatureKind::Mono),
            "poly" => Ok(FeatureKind::Poly),
            other => Err(Error::InvalidConfig(format!("unknown feature kind {other:?}"))),
        }
    }
}

/// `(mu0, mu1, var0, var1)` for classes `y = 0` and `y = 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub mu0: f64,
    pub mu1: f64,
    pub var0: f64,
    pub var1: f64,
}

impl Moments {
    pub fn new(mu0: f64, mu1: f64, var0: f64, var1: f64) -> Result<Self> {
        if !(var0 >= 0.0 && var1 >= 0.0) || !mu0.is_finite() || !mu1.is_finite() {
            return Err(Error::OutOfDomain(format!(
                "moments need finite means and non-negative variances, got ({mu0}, {mu1}, {var0}, {var1})"
            )));
        }
        Ok(Self { mu0, mu1, var0, var1 })
    }

    pub fn delta_mu(&self) -> f64 {
        (self.mu1 - self.mu0).abs()
    }

    pub fn sd0(&self) -> f64 {
        self.var0.sqrt()
    }

    pub fn sd1(&self) -> f64 {
        self.var1.sqrt()
    }

    /// `|mu1 - mu0| / (sd0 * sd1)`.
    pub fn criterion_j(&self) -> Result<f64> {
        let denom = self.sd0() * self.sd1();
        if denom > 0.0 {
            Ok(self.delta_mu() / denom)
        } else {
            Err(Error::ZeroVariance)
        }
    }
}
