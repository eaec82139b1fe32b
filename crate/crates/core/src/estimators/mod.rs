//! Multiple-measurement-vector sparse recovery baselines.
//!
//! All solvers take the `M x K` observation matrix (one column per
//! subcarrier) and one `M x G` measurement matrix per subcarrier, and return
//! `K` coefficient vectors of length `G`.

mod amp_sbl;
mod msbl;
mod somp;

pub use amp_sbl::{amp_sbl, amp_sbl_whitened, e_step, AmpSblOutput, AmpState, EStepTrace, WhitenedOperator};
pub use msbl::{msbl, MsblOutput, MSBL_DEFAULT_ITERS};
pub use somp::{somp, SompOutput, SOMP_DEFAULT_ITERS};

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::linalg;
use crate::CMatrix;

/// Denominator floor for the AMP updates.
pub const DENOM_FLOOR: f64 = 1e-30;

/// Normalized mean-squared error of one channel estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Nmse {
    pub linear: f64,
    /// `10 log10(linear)`; `-inf` for a perfect estimate.
    pub db: f64,
}

/// `||H - H_hat||_F^2 / ||H||_F^2`.
///
/// Estimates containing non-finite entries score `+inf` rather than NaN so
/// divergent runs stay visible in averages and medians.
pub fn nmse(h_true: &CMatrix, h_hat: &CMatrix) -> Result<Nmse> {
    if h_true.shape() != h_hat.shape() {
        return Err(Error::DimensionMismatch(format!(
            "{:?} vs {:?}",
            h_true.shape(),
            h_hat.shape()
        )));
    }
    let energy = h_true.norm_squared();
    if energy == 0.0 {
        return Err(Error::ZeroReference);
    }
    let err: f64 = h_true.iter().zip(h_hat.iter()).map(|(a, b)| (a - b).norm_sqr()).sum();
    let linear = if err.is_finite() { err / energy } else { f64::INFINITY };
    Ok(Nmse { linear, db: 10.0 * linear.log10() })
}

/// `H_hat` with column `k` equal to `A^k x^k`.
pub fn reconstruct(dicts: &[CMatrix], coefficients: &[Vec<Complex64>]) -> Result<CMatrix> {
    if dicts.len() != coefficients.len() || dicts.is_empty() {
        return Err(Error::DimensionMismatch(format!(
            "{} dictionaries vs {} coefficient vectors",
            dicts.len(),
            coefficients.len()
        )));
    }
    let n = dicts[0].nrows();
    let mut h = CMatrix::zeros(n, dicts.len());
    for (k, (a, x)) in dicts.iter().zip(coefficients).enumerate() {
        if x.len() != a.ncols() {
            return Err(Error::DimensionMismatch(format!("subcarrier {k}: {} vs {}", x.len(), a.ncols())));
        }
        let mut col = vec![Complex64::new(0.0, 0.0); n];
        linalg::matvec(a, x, &mut col);
        h.column_mut(k).copy_from_slice(&col);
    }
    Ok(h)
}

pub(crate) fn check_problem(y: &CMatrix, phi: &[CMatrix]) -> Result<(usize, usize, usize)> {
    let (m, k) = y.shape();
    if phi.len() != k || k == 0 {
        return Err(Error::DimensionMismatch(format!("{} measurement matrices for {k} subcarriers", phi.len())));
    }
    let g = phi[0].ncols();
    for (idx, p) in phi.iter().enumerate() {
        if p.shape() != (m, g) {
            return Err(Error::DimensionMismatch(format!(
                "measurement matrix {idx} is {:?}, expected ({m}, {g})",
                p.shape()
            )));
        }
    }
    Ok((m, g, k))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> CMatrix {
        CMatrix::from_fn(4, 3, |i, j| Complex64::new(i as f64 + 1.0, j as f64 - 1.0))
    }

    #[test]
    fn nmse_cases() {
        let h = sample();
        let perfect = nmse(&h, &h).unwrap();
        assert_eq!(perfect.linear, 0.0);
        assert_eq!(perfect.db, f64::NEG_INFINITY);
        let zero = nmse(&h, &CMatrix::zeros(4, 3)).unwrap();
        assert_eq!(zero.linear, 1.0);
        assert_eq!(zero.db, 0.0);
        let double = nmse(&h, &h.map(|v| v * 2.0)).unwrap();
        assert!((double.linear - 1.0).abs() < 1e-15);
        assert!(matches!(nmse(&CMatrix::zeros(4, 3), &h), Err(Error::ZeroReference)));
        let mut bad = h.clone();
        bad[(0, 0)] = Complex64::new(f64::NAN, 0.0);
        assert_eq!(nmse(&h, &bad).unwrap().linear, f64::INFINITY);
    }
}
