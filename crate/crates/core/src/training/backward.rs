//! Reverse-mode gradients through the unfolded network.
//!
//! Complex quantities carry gradients as `dL/dRe + j dL/dIm`; with that
//! convention `z = M w` pulls back as `g_w = M^H g_z` and `z = c w` with
//! real `c` gives `g_c = Re(conj(w) g_z)`.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::estimators::{reconstruct, AmpState, EStepTrace, WhitenedOperator};
use crate::linalg;
use crate::unfolded::{dnn_m_step_backward, unfolded_forward_whitened, LayerWeights, UnfoldedModel};
use crate::CMatrix;

const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };

/// Gradient with respect to an [`AmpState`].
#[derive(Debug, Clone)]
pub struct StateGrad {
    pub mu: Vec<Complex64>,
    pub tau_x: Vec<f64>,
    pub s: Vec<Complex64>,
}

impl StateGrad {
    pub fn zeros(rows: usize, atoms: usize) -> Self {
        Self { mu: vec![ZERO; atoms], tau_x: vec![0.0; atoms], s: vec![ZERO; rows] }
    }
}

/// Pulls `grad` (on the E-step outputs) back to the previous state and to
/// `gamma`. Floors are treated as inactive.
pub fn e_step_backward(
    b: &CMatrix,
    b_abs2: &DMatrix<f64>,
    gamma: &[f64],
    prev: &AmpState,
    trace: &EStepTrace,
    grad: &StateGrad,
) -> (StateGrad, Vec<f64>) {
    let (m, g) = b.shape();
    let tau_q = &trace.tau_q;
    let mut g_gamma = vec![0.0; g];
    let mut g_tau_q = vec![0.0; g];
    let mut g_back = vec![ZERO; g];
    let mut g_mu_prev = vec![ZERO; g];
    for j in 0..g {
        let den = trace.den[j];
        let g_q = grad.mu[j] / den;
        let g_den = -(trace.q[j].conj() * grad.mu[j]).re / (den * den) - tau_q[j] * grad.tau_x[j] / (den * den);
        g_tau_q[j] = grad.tau_x[j] / den + g_den * gamma[j] + (trace.back[j].conj() * g_q).re;
        g_gamma[j] = g_den * tau_q[j];
        g_mu_prev[j] = g_q;
        g_back[j] = g_q * tau_q[j];
    }

    let mut g_s = vec![ZERO; m];
    linalg::matvec(b, &g_back, &mut g_s);
    for (a, b) in g_s.iter_mut().zip(&grad.s) {
        *a += b;
    }
    let g_v: Vec<f64> = g_tau_q.iter().zip(tau_q).map(|(gt, t)| -gt * t * t).collect();
    let mut g_tau_s = vec![0.0; m];
    linalg::real_matvec(b_abs2, &g_v, &mut g_tau_s);

    let mut g_p = vec![ZERO; m];
    let mut g_tau_p = vec![0.0; m];
    let mut g_s_prev = vec![ZERO; m];
    for i in 0..m {
        let ts = trace.tau_s[i];
        g_tau_s[i] += (trace.residual[i].conj() * g_s[i]).re;
        let g_e = g_s[i] * ts;
        g_p[i] = -g_e;
        g_tau_p[i] = -g_tau_s[i] * ts * ts - (prev.s[i].conj() * g_p[i]).re;
        g_s_prev[i] = -g_p[i] * trace.tau_p[i];
    }
    let mut from_p = vec![ZERO; g];
    linalg::adjoint_matvec(b, &g_p, &mut from_p);
    for (a, b) in g_mu_prev.iter_mut().zip(&from_p) {
        *a += b;
    }
    let mut g_tau_x_prev = vec![0.0; g];
    linalg::real_tmatvec(b_abs2, &g_tau_p, &mut g_tau_x_prev);
    (StateGrad { mu: g_mu_prev, tau_x: g_tau_x_prev, s: g_s_prev }, g_gamma)
}

/// One training example on a whitened problem.
#[derive(Debug, Clone)]
pub struct PreparedSample {
    /// True channel, `N x K`.
    pub h: CMatrix,
    /// Projected observations `U^H y^k`.
    pub r: Vec<Vec<Complex64>>,
    pub m: usize,
    pub snr_db: f64,
    pub sigma2: f64,
}

/// Loss value and the gradients of every layer.
#[derive(Debug, Clone)]
pub struct SampleGrad {
    pub loss: f64,
    /// Unweighted NMSE of the estimate.
    pub nmse: f64,
    pub layers: Vec<LayerWeights>,
}

/// Weighted NMSE of one sample and its exact gradient with respect to every
/// weight of `model`.
pub fn sample_gradient(
    model: &UnfoldedModel,
    op: &WhitenedOperator,
    dicts: &[CMatrix],
    sample: &PreparedSample,
    weight: f64,
) -> Result<SampleGrad> {
    let out = unfolded_forward_whitened(op, &sample.r, sample.sigma2, sample.m, sample.snr_db, model, true)?;
    let trace = out.trace.expect("trace requested");
    let energy = sample.h.norm_squared();
    if energy == 0.0 {
        return Err(Error::ZeroReference);
    }
    let h_hat = reconstruct(dicts, &out.mu)?;
    let err = &sample.h - &h_hat;
    let nmse = err.norm_squared() / energy;
    let loss = weight * nmse;
    if !loss.is_finite() {
        return Err(Error::NonFinite { stage: "loss", layer: model.depth() });
    }

    let k = op.subcarriers();
    let (rows, atoms) = (op.rows(), op.atoms());
    let scale = -2.0 * weight / energy;
    let mut grads: Vec<StateGrad> = (0..k)
        .map(|kk| {
            let mut gmu = vec![ZERO; atoms];
            linalg::adjoint_matvec(&dicts[kk], err.column(kk).as_slice(), &mut gmu);
            gmu.iter_mut().for_each(|v| *v *= scale);
            StateGrad { mu: gmu, tau_x: vec![0.0; atoms], s: vec![ZERO; rows] }
        })
        .collect();

    let depth = model.depth();
    let initial = AmpState::initial(rows, atoms);
    let prev_state = |l: usize, kk: usize| -> &AmpState {
        if l == 0 {
            &initial
        } else {
            &trace.layers[l - 1].e_steps[kk].out
        }
    };

    // readout E-step, driven by gamma from the last layer
    let mut g_gamma = vec![0.0; atoms];
    for kk in 0..k {
        let (g_prev, gg) = e_step_backward(
            &op.b[kk],
            &op.b_abs2[kk],
            &trace.readout_gamma,
            prev_state(depth, kk),
            &trace.readout[kk],
            &grads[kk],
        );
        grads[kk] = g_prev;
        g_gamma.iter_mut().zip(&gg).for_each(|(a, b)| *a += b);
    }

    let mut layer_grads: Vec<LayerWeights> = model.layers.iter().map(LayerWeights::zeros_like).collect();
    for l in (0..depth).rev() {
        let lt = &trace.layers[l];
        let dnn = dnn_m_step_backward(&lt.dnn, &model.layers[l], &g_gamma, &mut layer_grads[l]);
        for kk in 0..k {
            let mu = &lt.e_steps[kk].out.mu;
            let gs = &mut grads[kk];
            for ((gm, m), ga) in gs.mu.iter_mut().zip(mu).zip(&dnn.mu_abs2[kk]) {
                *gm += m * (2.0 * ga);
            }
            gs.tau_x.iter_mut().zip(&dnn.tau[kk]).for_each(|(a, b)| *a += b);
        }
        if l == 0 {
            break;
        }
        g_gamma.fill(0.0);
        for kk in 0..k {
            let (g_prev, gg) = e_step_backward(
                &op.b[kk],
                &op.b_abs2[kk],
                &lt.gamma_in,
                prev_state(l, kk),
                &lt.e_steps[kk],
                &grads[kk],
            );
            grads[kk] = g_prev;
            g_gamma.iter_mut().zip(&gg).for_each(|(a, b)| *a += b);
        }
    }
    Ok(SampleGrad { loss, nmse, layers: layer_grads })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::e_step;
    use crate::rng::{complex_normal, stream};
    use rand::Rng;

    fn random_problem(m: usize, g: usize, k: usize, seed: u64) -> (WhitenedOperator, Vec<CMatrix>) {
        let mut rng = stream(seed, 0);
        let phi: Vec<CMatrix> = (0..k)
            .map(|_| CMatrix::from_fn(m, g, |_, _| complex_normal(&mut rng, 1.0 / m as f64)))
            .collect();
        let dicts = (0..k)
            .map(|_| CMatrix::from_fn(m + 2, g, |_, _| complex_normal(&mut rng, 1.0 / m as f64)))
            .collect();
        (WhitenedOperator::new(&phi).unwrap(), dicts)
    }

    // Scalar functional of the E-step outputs with random real weights.
    fn functional(t: &EStepTrace, w: &(Vec<Complex64>, Vec<f64>, Vec<Complex64>)) -> f64 {
        let a: f64 = t.out.mu.iter().zip(&w.0).map(|(x, c)| (x.conj() * c).re).sum();
        let b: f64 = t.out.tau_x.iter().zip(&w.1).map(|(x, c)| x * c).sum();
        let c: f64 = t.out.s.iter().zip(&w.2).map(|(x, c)| (x.conj() * c).re).sum();
        a + b + c
    }

    #[test]
    fn e_step_backward_matches_finite_differences() {
        let (m, g) = (6, 10);
        let (op, _) = random_problem(m, g, 1, 1);
        let mut rng = stream(2, 0);
        let r: Vec<Complex64> = (0..m).map(|_| complex_normal(&mut rng, 1.0)).collect();
        let prev = AmpState {
            mu: (0..g).map(|_| complex_normal(&mut rng, 1.0)).collect(),
            tau_x: (0..g).map(|_| rng.random_range(0.2..1.5)).collect(),
            s: (0..m).map(|_| complex_normal(&mut rng, 0.5)).collect(),
        };
        let gamma: Vec<f64> = (0..g).map(|_| rng.random_range(0.2..2.0)).collect();
        let w = (
            (0..g).map(|_| complex_normal(&mut rng, 1.0)).collect::<Vec<_>>(),
            (0..g).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<_>>(),
            (0..m).map(|_| complex_normal(&mut rng, 1.0)).collect::<Vec<_>>(),
        );
        let sigma2 = 0.1;
        let run = |prev: &AmpState, gamma: &[f64]| e_step(&op.b[0], &op.b_abs2[0], &r, sigma2, gamma, prev);
        let trace = run(&prev, &gamma);
        // d<x, w>/dRe x = Re w, d/dIm x = Im w: gradient w in our convention
        let grad = StateGrad { mu: w.0.clone(), tau_x: w.1.clone(), s: w.2.clone() };
        let (gp, gg) = e_step_backward(&op.b[0], &op.b_abs2[0], &gamma, &prev, &trace, &grad);

        let h = 1e-6;
        let check = |analytic: f64, plus: f64, minus: f64| {
            let fd = (plus - minus) / (2.0 * h);
            assert!((analytic - fd).abs() <= 1e-6 * fd.abs().max(1.0), "{analytic} vs {fd}");
        };
        for j in 0..g {
            let mut gp_ = gamma.clone();
            let mut gm_ = gamma.clone();
            gp_[j] += h;
            gm_[j] -= h;
            check(gg[j], functional(&run(&prev, &gp_), &w), functional(&run(&prev, &gm_), &w));

            for (part, unit) in [(0, Complex64::new(1.0, 0.0)), (1, Complex64::new(0.0, 1.0))] {
                let mut a = prev.clone();
                let mut b = prev.clone();
                a.mu[j] += unit * h;
                b.mu[j] -= unit * h;
                let analytic = if part == 0 { gp.mu[j].re } else { gp.mu[j].im };
                check(analytic, functional(&run(&a, &gamma), &w), functional(&run(&b, &gamma), &w));
            }
            let mut a = prev.clone();
            let mut b = prev.clone();
            a.tau_x[j] += h;
            b.tau_x[j] -= h;
            check(gp.tau_x[j], functional(&run(&a, &gamma), &w), functional(&run(&b, &gamma), &w));
        }
        for i in 0..m {
            for (part, unit) in [(0, Complex64::new(1.0, 0.0)), (1, Complex64::new(0.0, 1.0))] {
                let mut a = prev.clone();
                let mut b = prev.clone();
                a.s[i] += unit * h;
                b.s[i] -= unit * h;
                let analytic = if part == 0 { gp.s[i].re } else { gp.s[i].im };
                check(analytic, functional(&run(&a, &gamma), &w), functional(&run(&b, &gamma), &w));
            }
        }
    }
}
