//! AMP-SBL for the multiple-measurement-vector problem.
//!
//! After unitary preprocessing (`r = U^H y`, `B = U^H Phi` with `U` the left
//! singular vectors of `Phi`), each iteration runs the AMP E-step on every
//! subcarrier and then updates the shared precision vector `gamma` from the
//! subcarrier-averaged posterior power.

use nalgebra::linalg::SVD;
use nalgebra::DMatrix;
use num_complex::Complex64;

use super::{check_problem, DENOM_FLOOR};
use crate::error::{Error, Result};
use crate::linalg;
use crate::CMatrix;

const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };
const EPSILON_INIT: f64 = 0.001;

/// Whitened measurement operators, one per subcarrier.
#[derive(Debug, Clone)]
pub struct WhitenedOperator {
    /// Left singular vectors `U^k`.
    pub u: Vec<CMatrix>,
    /// `B^k = (U^k)^H Phi^k`.
    pub b: Vec<CMatrix>,
    /// `|B^k|^2` element-wise.
    pub b_abs2: Vec<DMatrix<f64>>,
    pub singular_values: Vec<Vec<f64>>,
}

impl WhitenedOperator {
    pub fn new(phi: &[CMatrix]) -> Result<Self> {
        let mut u = Vec::with_capacity(phi.len());
        let mut b = Vec::with_capacity(phi.len());
        let mut b_abs2 = Vec::with_capacity(phi.len());
        let mut singular_values = Vec::with_capacity(phi.len());
        for (k, p) in phi.iter().enumerate() {
            if p.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
                return Err(Error::SvdFailed(k));
            }
            let svd = SVD::try_new(p.clone(), true, false, f64::EPSILON, 0).ok_or(Error::SvdFailed(k))?;
            let uk = svd.u.ok_or(Error::SvdFailed(k))?;
            let bk = uk.adjoint() * p;
            b_abs2.push(linalg::abs2(&bk));
            b.push(bk);
            u.push(uk);
            singular_values.push(svd.singular_values.as_slice().to_vec());
        }
        Ok(Self { u, b, b_abs2, singular_values })
    }

    pub fn subcarriers(&self) -> usize {
        self.b.len()
    }

    /// Rows of the whitened problem (`min(M, G)`).
    pub fn rows(&self) -> usize {
        self.b[0].nrows()
    }

    pub fn atoms(&self) -> usize {
        self.b[0].ncols()
    }

    /// `r^k = (U^k)^H y^k` for each column of `y`.
    pub fn project(&self, y: &CMatrix) -> Result<Vec<Vec<Complex64>>> {
        if y.ncols() != self.subcarriers() || y.nrows() != self.u[0].nrows() {
            return Err(Error::DimensionMismatch(format!(
                "observations {:?} vs {} subcarriers of {} rows",
                y.shape(),
                self.subcarriers(),
                self.u[0].nrows()
            )));
        }
        Ok(self
            .u
            .iter()
            .enumerate()
            .map(|(k, u)| {
                let mut r = vec![ZERO; u.ncols()];
                linalg::adjoint_matvec(u, y.column(k).as_slice(), &mut r);
                r
            })
            .collect())
    }
}

/// Per-subcarrier AMP state carried between iterations.
#[derive(Debug, Clone, PartialEq)]
pub struct AmpState {
    pub mu: Vec<Complex64>,
    pub tau_x: Vec<f64>,
    pub s: Vec<Complex64>,
}

impl AmpState {
    /// `mu = 0`, `tau_x = 1`, `s = 0` (the residual-domain vector has the
    /// measurement dimension).
    pub fn initial(rows: usize, atoms: usize) -> Self {
        Self {
            mu: vec![ZERO; atoms],
            tau_x: vec![1.0; atoms],
            s: vec![ZERO; rows],
        }
    }
}

/// Intermediates of one E-step, kept for back-propagation.
#[derive(Debug, Clone)]
pub struct EStepTrace {
    pub tau_p: Vec<f64>,
    pub tau_s: Vec<f64>,
    /// `r - p`.
    pub residual: Vec<Complex64>,
    pub tau_q: Vec<f64>,
    /// `B^H s_new`.
    pub back: Vec<Complex64>,
    pub q: Vec<Complex64>,
    /// `1 + tau_q * gamma` after flooring.
    pub den: Vec<f64>,
    pub out: AmpState,
}

/// AMP E-step on one subcarrier with precision vector `gamma`.
pub fn e_step(
    b: &CMatrix,
    b_abs2: &DMatrix<f64>,
    r: &[Complex64],
    sigma2: f64,
    gamma: &[f64],
    prev: &AmpState,
) -> EStepTrace {
    let (m, g) = b.shape();
    let mut tau_p = vec![0.0; m];
    linalg::real_matvec(b_abs2, &prev.tau_x, &mut tau_p);
    let mut p = vec![ZERO; m];
    linalg::matvec(b, &prev.mu, &mut p);
    let mut tau_s = vec![0.0; m];
    let mut residual = vec![ZERO; m];
    let mut s = vec![ZERO; m];
    for i in 0..m {
        p[i] -= prev.s[i] * tau_p[i];
        tau_s[i] = 1.0 / (tau_p[i] + sigma2).max(DENOM_FLOOR);
        residual[i] = r[i] - p[i];
        s[i] = residual[i] * tau_s[i];
    }
    let mut tau_q = vec![0.0; g];
    linalg::real_tmatvec(b_abs2, &tau_s, &mut tau_q);
    for v in tau_q.iter_mut() {
        *v = 1.0 / v.max(DENOM_FLOOR);
    }
    let mut back = vec![ZERO; g];
    linalg::adjoint_matvec(b, &s, &mut back);
    let mut q = vec![ZERO; g];
    let mut den = vec![0.0; g];
    let mut mu = vec![ZERO; g];
    let mut tau_x = vec![0.0; g];
    for j in 0..g {
        q[j] = prev.mu[j] + back[j] * tau_q[j];
        den[j] = (1.0 + tau_q[j] * gamma[j]).max(DENOM_FLOOR);
        mu[j] = q[j] / den[j];
        tau_x[j] = tau_q[j] / den[j];
    }
    EStepTrace {
        tau_p,
        tau_s,
        residual,
        tau_q,
        back,
        q,
        den,
        out: AmpState { mu, tau_x, s },
    }
}

#[derive(Debug, Clone)]
pub struct AmpSblOutput {
    /// Final posterior means, one vector per subcarrier.
    pub mu: Vec<Vec<Complex64>>,
    /// Precision vector used by the final E-step.
    pub gamma_used: Vec<f64>,
    /// Precision vector after the final M-step.
    pub gamma: Vec<f64>,
    /// `epsilon` after each iteration.
    pub epsilon: Vec<f64>,
    /// Radicand of each `epsilon` update before clamping rounding noise.
    pub radicands: Vec<f64>,
    /// True when any estimate became non-finite.
    pub diverged: bool,
}

/// Runs `iterations` AMP-SBL iterations from `gamma = 1`, `epsilon = 0.001`.
pub fn amp_sbl(y: &CMatrix, phi: &[CMatrix], sigma2: f64, iterations: usize) -> Result<AmpSblOutput> {
    check_problem(y, phi)?;
    let op = WhitenedOperator::new(phi)?;
    let r = op.project(y)?;
    amp_sbl_whitened(&op, &r, sigma2, iterations)
}

/// AMP-SBL on an already whitened problem.
pub fn amp_sbl_whitened(
    op: &WhitenedOperator,
    r: &[Vec<Complex64>],
    sigma2: f64,
    iterations: usize,
) -> Result<AmpSblOutput> {
    if !(sigma2 > 0.0) {
        return Err(Error::InvalidNoiseVariance { value: sigma2, expected: "positive" });
    }
    if iterations == 0 {
        return Err(Error::InvalidConfig("AMP-SBL needs at least one iteration".into()));
    }
    let k = op.subcarriers();
    let g = op.atoms();
    let mut states: Vec<AmpState> = (0..k).map(|_| AmpState::initial(op.rows(), g)).collect();
    let mut gamma = vec![1.0; g];
    let mut gamma_used = gamma.clone();
    let mut eps = EPSILON_INIT;
    let mut epsilon = Vec::with_capacity(iterations);
    let mut radicands = Vec::with_capacity(iterations);

    for _ in 0..iterations {
        for (kk, state) in states.iter_mut().enumerate() {
            *state = e_step(&op.b[kk], &op.b_abs2[kk], &r[kk], sigma2, &gamma, state).out;
        }
        gamma_used.clone_from(&gamma);
        // shared M-step, fixed subcarrier order
        let mut power = vec![0.0; g];
        for state in &states {
            for ((acc, m), t) in power.iter_mut().zip(&state.mu).zip(&state.tau_x) {
                *acc += m.norm_sqr() + t;
            }
        }
        for (gm, p) in gamma.iter_mut().zip(&power) {
            *gm = (2.0 * eps + 1.0) / (p / k as f64).max(DENOM_FLOOR);
        }
        let mean = gamma.iter().sum::<f64>() / g as f64;
        let mean_log = gamma.iter().map(|v| v.log10()).sum::<f64>() / g as f64;
        let radicand = mean.log10() - mean_log;
        radicands.push(radicand);
        eps = 0.5 * radicand.max(0.0).sqrt();
        epsilon.push(eps);
    }

    let diverged = states
        .iter()
        .any(|s| s.mu.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()));
    Ok(AmpSblOutput {
        mu: states.into_iter().map(|s| s.mu).collect(),
        gamma_used,
        gamma,
        epsilon,
        radicands,
        diverged,
    })
}
