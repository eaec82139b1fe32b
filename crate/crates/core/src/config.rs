//! Physical and experiment parameters.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Speed of light used for all wavelength and delay computations (m/s).
///
/// The rounded value reproduces the reference Rayleigh distance of
/// 97.5375 m for a 256-element array at 100 GHz.
pub const SPEED_OF_LIGHT: f64 = 3.0e8;

/// All parameters of one simulated system.
///
/// Field names are the keys accepted in configuration files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SystemConfig {
    /// Antenna count of the uniform linear array.
    pub n: usize,
    /// Subcarrier count.
    pub k: usize,
    /// Carrier frequency (Hz).
    pub f_c: f64,
    /// Bandwidth (Hz).
    pub f_s: f64,
    /// Pilot time slots.
    pub m: usize,
    /// SNR in dB, defined as `1 / sigma^2`.
    pub snr_db: f64,
    /// Cluster count.
    pub n_c: usize,
    /// Subpaths per cluster.
    pub n_p: usize,
    /// Angle grid size of the dictionaries.
    pub q: usize,
    /// Coherence threshold controlling the distance-ring spacing.
    pub beta: f64,
    /// Minimum allowable distance (m).
    pub rho_min: f64,
    /// RF chain count. Recorded only; the pilot model does not depend on it.
    pub n_rf: usize,
    /// Lower bound of the cluster-center distance draw (m).
    pub cluster_r_min: f64,
    /// Upper bound of the cluster-center distance draw (m).
    pub cluster_r_max: f64,
    /// Standard deviation of the per-subpath angle perturbation (degrees).
    pub angle_spread_deg: f64,
    /// Standard deviation of the per-subpath distance perturbation (m).
    pub distance_spread: f64,
    pub seed: u64,
}

impl Default for SystemConfig {
    fn default() -> Self {
        Self::full()
    }
}

impl SystemConfig {
    /// Full-scale defaults: 256 antennas, 32 subcarriers, 100 GHz carrier,
    /// 10 GHz bandwidth, 512 angle grids.
    pub fn full() -> Self {
        Self {
            n: 256,
            k: 32,
            f_c: 100e9,
            f_s: 10e9,
            m: 48,
            snr_db: 10.0,
            n_c: 3,
            n_p: 10,
            q: 512,
            beta: 1.2,
            rho_min: 3.0,
            n_rf: 4,
            cluster_r_min: 5.0,
            cluster_r_max: 30.0,
            angle_spread_deg: 4.0,
            distance_spread: 1.0,
            seed: 0,
        }
    }

    /// Desk-scale preset that keeps the near-field regime (Rayleigh distance
    /// about 24 m, two distance rings) while staying cheap enough for a
    /// single core.
    pub fn desk() -> Self {
        Self {
            n: 128,
            k: 8,
            q: 128,
            ..Self::full()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "full" => Ok(Self::full()),
            "desk" => Ok(Self::desk()),
            other => Err(Error::InvalidConfig(format!("unknown preset `{other}`"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: &str| Err(Error::InvalidConfig(msg.to_string()));
        if self.n < 1 || self.k < 1 || self.m < 1 {
            return fail("n, k and m must be at least 1");
        }
        if self.q < 2 {
            return fail("q must be at least 2");
        }
        if self.n_c < 1 || self.n_p < 1 {
            return fail("n_c and n_p must be at least 1");
        }
        if !(self.f_c > 0.0 && self.f_s >= 0.0 && self.f_s < self.f_c) {
            return fail("require 0 <= f_s < f_c");
        }
        if !(self.rho_min > 0.0) || !(self.beta > 0.0) {
            return fail("rho_min and beta must be positive");
        }
        if !(self.cluster_r_min > 0.0 && self.cluster_r_min <= self.cluster_r_max) {
            return fail("cluster distance range must be positive and ordered");
        }
        if self.angle_spread_deg < 0.0 || self.distance_spread < 0.0 {
            return fail("spreads must be non-negative");
        }
        Ok(())
    }

    /// Carrier wavelength `c / f_c`.
    pub fn wavelength(&self) -> f64 {
        SPEED_OF_LIGHT / self.f_c
    }

    /// Antenna spacing: half the carrier wavelength.
    pub fn spacing(&self) -> f64 {
        self.wavelength() / 2.0
    }

    /// Noise variance `10^(-snr_db / 10)`.
    pub fn noise_variance(&self) -> f64 {
        noise_variance(self.snr_db)
    }
}

pub fn noise_variance(snr_db: f64) -> f64 {
    10f64.powf(-snr_db / 10.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        SystemConfig::full().validate().unwrap();
        SystemConfig::desk().validate().unwrap();
        assert!(SystemConfig::preset("huge").is_err());
    }

    #[test]
    fn spacing_is_half_wavelength() {
        let cfg = SystemConfig::full();
        assert_eq!(cfg.spacing(), cfg.wavelength() / 2.0);
        assert!((cfg.wavelength() - 3e-3).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_values() {
        let mut cfg = SystemConfig::desk();
        cfg.f_s = cfg.f_c;
        assert!(cfg.validate().is_err());
        let mut cfg = SystemConfig::desk();
        cfg.q = 1;
        assert!(cfg.validate().is_err());
        let mut cfg = SystemConfig::desk();
        cfg.rho_min = 0.0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn noise_variance_from_snr() {
        assert!((noise_variance(10.0) - 0.1).abs() < 1e-15);
        assert_eq!(noise_variance(0.0), 1.0);
    }
}
