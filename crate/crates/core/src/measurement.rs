//! Pilot matrices and noisy observations.
//!
//! The one-bit phase shifters of the partially-connected array reduce to a
//! real pilot matrix with entries `+-1/sqrt(N)`; RF-chain count plays no
//! further role.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::complex_normal;
use crate::CMatrix;

#[derive(Debug, Clone)]
pub struct MeasurementSet {
    /// `M x N` pilot matrix.
    pub w: DMatrix<f64>,
    /// Per-subcarrier `M x G` measurement matrices `W A^k`.
    pub phi: Vec<CMatrix>,
    /// `M x K` observations.
    pub y: CMatrix,
    pub sigma2: f64,
}

/// i.i.d. equiprobable `+-1/sqrt(N)` entries.
pub fn generate_pilot_matrix<R: Rng + ?Sized>(m: usize, n: usize, rng: &mut R) -> DMatrix<f64> {
    let amp = 1.0 / (n as f64).sqrt();
    // row-major draw order so a prefix of rows is itself a valid pilot matrix
    let mut w = DMatrix::zeros(m, n);
    for i in 0..m {
        for j in 0..n {
            w[(i, j)] = if rng.random::<bool>() { amp } else { -amp };
        }
    }
    w
}

/// `Y = W H + noise`, noise `CN(0, sigma2)` per entry.
pub fn observe<R: Rng + ?Sized>(h: &CMatrix, w: &DMatrix<f64>, sigma2: f64, rng: &mut R) -> Result<CMatrix> {
    if !(sigma2 >= 0.0) {
        return Err(Error::InvalidNoiseVariance { value: sigma2, expected: "non-negative" });
    }
    if w.ncols() != h.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "pilot matrix has {} columns, channel has {} antennas",
            w.ncols(),
            h.nrows()
        )));
    }
    let mut y = real_times_complex(w, h);
    if sigma2 > 0.0 {
        // column-major: subcarrier by subcarrier
        for v in y.iter_mut() {
            *v += complex_normal(rng, sigma2);
        }
    }
    Ok(y)
}

/// `Phi^k = W A^k` for every subcarrier dictionary.
pub fn measurement_matrices(w: &DMatrix<f64>, dicts: &[CMatrix]) -> Result<Vec<CMatrix>> {
    dicts
        .iter()
        .map(|a| {
            if a.nrows() != w.ncols() {
                return Err(Error::DimensionMismatch(format!(
                    "dictionary has {} rows, pilot matrix has {} columns",
                    a.nrows(),
                    w.ncols()
                )));
            }
            Ok(real_times_complex(w, a))
        })
        .collect()
}

/// Pilots, measurement matrices and observations in one step.
pub fn measure<R: Rng + ?Sized>(
    h: &CMatrix,
    w: DMatrix<f64>,
    dicts: &[CMatrix],
    sigma2: f64,
    rng: &mut R,
) -> Result<MeasurementSet> {
    let y = observe(h, &w, sigma2, rng)?;
    let phi = measurement_matrices(&w, dicts)?;
    Ok(MeasurementSet { w, phi, y, sigma2 })
}

pub(crate) fn real_times_complex(w: &DMatrix<f64>, a: &CMatrix) -> CMatrix {
    let (m, n) = w.shape();
    let cols = a.ncols();
    let mut out = CMatrix::zeros(m, cols);
    let wt = w.transpose();
    for j in 0..cols {
        let acol = a.column(j);
        let acol = acol.as_slice();
        for i in 0..m {
            let wrow = &wt.as_slice()[i * n..(i + 1) * n];
            let (mut re, mut im) = (0.0, 0.0);
            for (wv, av) in wrow.iter().zip(acol) {
                re += wv * av.re;
                im += wv * av.im;
            }
            out[(i, j)] = Complex64::new(re, im);
        }
    }
    out
}
