//! Wideband near-field multipath channels.
//!
//! Each path contributes a Fresnel-approximated spherical-wavefront steering
//! vector evaluated at the subcarrier frequency, so the effective beam
//! direction drifts across the band (near-field beam split).

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;

use crate::config::{SystemConfig, SPEED_OF_LIGHT};
use crate::error::{Error, Result};
use crate::rng::{complex_normal, laplace};
use crate::CMatrix;

/// Smallest distance a perturbed subpath may take (m).
const MIN_PATH_DISTANCE: f64 = 1.0;
const MAX_REDRAWS: usize = 10_000;

/// One propagation path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathParams {
    /// Complex gain.
    pub alpha: Complex64,
    /// Delay (s).
    pub tau: f64,
    /// Sine of the angle of departure.
    pub theta: f64,
    /// Distance from the array center (m).
    pub r: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization {
    pub paths: Vec<PathParams>,
    /// `N x K`; column `k` is the spatial channel on subcarrier `k`.
    pub h: CMatrix,
}

/// `2 D^2 / lambda` with aperture `D = (N - 1) d`.
pub fn rayleigh_distance(cfg: &SystemConfig) -> f64 {
    let aperture = (cfg.n as f64 - 1.0) * cfg.spacing();
    2.0 * aperture * aperture / cfg.wavelength()
}

/// Frequency of subcarrier `k` (1-based), symmetric about the carrier.
pub fn subcarrier_frequency(cfg: &SystemConfig, k: usize) -> Result<f64> {
    if k < 1 || k > cfg.k {
        return Err(Error::IndexOutOfRange { index: k, len: cfg.k });
    }
    let offset = (k - 1) as f64 - (cfg.k as f64 - 1.0) / 2.0;
    Ok(cfg.f_c + offset * cfg.f_s / cfg.k as f64)
}

/// All `K` subcarrier frequencies in order.
pub fn subcarrier_frequencies(cfg: &SystemConfig) -> Vec<f64> {
    (1..=cfg.k)
        .map(|k| subcarrier_frequency(cfg, k).expect("k in range"))
        .collect()
}

/// Fresnel-approximated array response of an `N`-element ULA.
///
/// `r = f64::INFINITY` yields the planar-wave (far-field) response.
pub fn near_field_steering(theta: f64, r: f64, f: f64, n: usize, d: f64) -> Result<Vec<Complex64>> {
    if !(r > 0.0) {
        return Err(Error::NonPositiveDistance(r));
    }
    let mut out = vec![Complex64::new(0.0, 0.0); n];
    steering_into(&mut out, theta, r, f, d);
    Ok(out)
}

/// Writes the unit-norm steering vector into `out` (length `N`).
pub(crate) fn steering_into(out: &mut [Complex64], theta: f64, r: f64, f: f64, d: f64) {
    debug_assert!(theta.abs() <= 1.0 + 1e-12);
    let n = out.len();
    let scale = 1.0 / (n as f64).sqrt();
    let wavenumber = 2.0 * PI * f / SPEED_OF_LIGHT;
    let curvature = if r.is_infinite() {
        0.0
    } else {
        (1.0 - theta * theta) / (2.0 * r)
    };
    for (idx, v) in out.iter_mut().enumerate() {
        let delta = (2.0 * idx as f64 - n as f64 + 1.0) / 2.0;
        let dd = delta * d;
        let path_diff = dd * dd * curvature - dd * theta;
        *v = Complex64::from_polar(scale, -wavenumber * path_diff);
    }
}

/// Draws one channel realization with the clustered geometry of `cfg`.
pub fn sample_channel<R: Rng + ?Sized>(cfg: &SystemConfig, rng: &mut R) -> Result<ChannelRealization> {
    sample_channel_at(cfg, None, rng)
}

/// As [`sample_channel`], optionally forcing every path to the common
/// distance `fixed_distance` (angles and gains are still random).
pub fn sample_channel_at<R: Rng + ?Sized>(
    cfg: &SystemConfig,
    fixed_distance: Option<f64>,
    rng: &mut R,
) -> Result<ChannelRealization> {
    cfg.validate()?;
    let r_ray = rayleigh_distance(cfg);
    let center_hi = cfg.cluster_r_max.min(r_ray);
    if fixed_distance.is_none() && center_hi < cfg.cluster_r_min {
        return Err(Error::InvalidConfig(format!(
            "Rayleigh distance {r_ray:.3} m is below the cluster distance range"
        )));
    }
    if let Some(r) = fixed_distance {
        if !(r > 0.0) {
            return Err(Error::NonPositiveDistance(r));
        }
    }

    let mut paths = Vec::with_capacity(cfg.n_c * cfg.n_p);
    for _ in 0..cfg.n_c {
        let center_angle: f64 = rng.random_range(0.0..360.0);
        let center_r = if center_hi > cfg.cluster_r_min {
            rng.random_range(cfg.cluster_r_min..center_hi)
        } else {
            center_hi
        };
        for _ in 0..cfg.n_p {
            let angle = center_angle + laplace(rng, cfg.angle_spread_deg);
            let r = match fixed_distance {
                Some(r) => r,
                None => perturbed_distance(rng, center_r, cfg.distance_spread, r_ray),
            };
            let alpha = complex_normal(rng, 1.0);
            paths.push(PathParams {
                alpha,
                tau: r / SPEED_OF_LIGHT,
                theta: angle.to_radians().sin(),
                r,
            });
        }
    }
    let h = assemble_subchannels(&paths, cfg);
    Ok(ChannelRealization { paths, h })
}

// Truncated Laplacian: redraw until the distance is within [1 m, r_Ray].
fn perturbed_distance<R: Rng + ?Sized>(rng: &mut R, center: f64, spread: f64, r_ray: f64) -> f64 {
    for _ in 0..MAX_REDRAWS {
        let r = center + laplace(rng, spread);
        if (MIN_PATH_DISTANCE..=r_ray).contains(&r) {
            return r;
        }
    }
    center.clamp(MIN_PATH_DISTANCE, r_ray)
}

/// Builds the `N x K` subchannel matrix from a path list.
pub fn assemble_subchannels(paths: &[PathParams], cfg: &SystemConfig) -> CMatrix {
    let n = cfg.n;
    let d = cfg.spacing();
    let norm = (n as f64 / (cfg.n_c * cfg.n_p) as f64).sqrt();
    let freqs = subcarrier_frequencies(cfg);
    let mut h = CMatrix::zeros(n, cfg.k);
    let mut steer = vec![Complex64::new(0.0, 0.0); n];
    for (k, &f) in freqs.iter().enumerate() {
        let mut col = h.column_mut(k);
        for p in paths {
            steering_into(&mut steer, p.theta, p.r, f, d);
            let coef = p.alpha * Complex64::from_polar(norm, -2.0 * PI * f * p.tau);
            for (dst, a) in col.iter_mut().zip(&steer) {
                *dst += coef * a;
            }
        }
    }
    h
}
