//! Closed-form real-FLOP counts of the estimators.
//!
//! | algorithm | per iteration      |
//! |-----------|--------------------|
//! | MSBL      | `16 K M^2 G`       |
//! | AMP-SBL   | `20 K M G`         |
//! | unfolded  | `(20 K M + 800) G` |
//! | SOMP      | `8 K M G`          |

use std::fmt;
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlopAlgorithm {
    Sbl,
    AmpSbl,
    Unfolded,
    Somp,
}

impl FlopAlgorithm {
    pub const ALL: [Self; 4] = [Self::Sbl, Self::AmpSbl, Self::Unfolded, Self::Somp];

    pub fn label(self) -> &'static str {
        match self {
            Self::Sbl => "msbl",
            Self::AmpSbl => "amp-sbl",
            Self::Unfolded => "unfolded",
            Self::Somp => "somp",
        }
    }
}

impl fmt::Display for FlopAlgorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for FlopAlgorithm {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "sbl" | "msbl" => Ok(Self::Sbl),
            "amp" | "amp-sbl" | "amp_sbl" => Ok(Self::AmpSbl),
            "unfolded" | "proposed" => Ok(Self::Unfolded),
            "somp" => Ok(Self::Somp),
            other => Err(format!("unknown algorithm `{other}` (expected msbl, amp-sbl, unfolded or somp)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FlopCount {
    pub per_iteration: u128,
    pub total: u128,
}

impl FlopCount {
    pub fn per_iteration_giga(&self) -> f64 {
        self.per_iteration as f64 / 1e9
    }

    pub fn total_giga(&self) -> f64 {
        self.total as f64 / 1e9
    }
}

/// Real FLOPs of `alg` with `k` subcarriers, `m` pilots, `g` atoms and `iters`
/// iterations (layers for the unfolded network).
pub fn flops(alg: FlopAlgorithm, k: u64, m: u64, g: u64, iters: u64) -> FlopCount {
    let (k, m, g) = (k as u128, m as u128, g as u128);
    let per_iteration = match alg {
        FlopAlgorithm::Sbl => 16 * k * m * m * g,
        FlopAlgorithm::AmpSbl => 20 * k * m * g,
        FlopAlgorithm::Unfolded => (20 * k * m + 800) * g,
        FlopAlgorithm::Somp => 8 * k * m * g,
    };
    FlopCount { per_iteration, total: per_iteration * iters as u128 }
}

/// Rounds to `digits` significant figures.
pub fn round_sig(x: f64, digits: i32) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    let scale = 10f64.powi(digits - 1 - x.abs().log10().floor() as i32);
    (x * scale).round() / scale
}
