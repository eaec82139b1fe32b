//! M-SBL: EM sparse Bayesian learning with a variance vector shared by all
//! subcarriers.
//!
//! The E-step uses the `M x M` form
//! `Sigma = Gamma - Gamma Phi^H C^-1 Phi Gamma`, `C = sigma2 I + Phi Gamma Phi^H`,
//! so the cost per iteration is `O(K M^2 G)` instead of a `G x G` inversion.

use nalgebra::linalg::Cholesky;
use num_complex::Complex64;

use super::check_problem;
use crate::error::{Error, Result};
use crate::CMatrix;

pub const MSBL_DEFAULT_ITERS: usize = 100;
const GAMMA_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct MsblOutput {
    pub mu: Vec<Vec<Complex64>>,
    /// Prior variances after the last M-step.
    pub gamma: Vec<f64>,
    /// Log marginal likelihood evaluated at the start of each iteration.
    pub log_likelihood: Vec<f64>,
}

pub fn msbl(y: &CMatrix, phi: &[CMatrix], sigma2: f64, max_iter: usize) -> Result<MsblOutput> {
    let (m, g, k) = check_problem(y, phi)?;
    if !(sigma2 > 0.0) {
        return Err(Error::InvalidNoiseVariance { value: sigma2, expected: "positive" });
    }
    let mut gamma = vec![1.0; g];
    let mut mu = vec![vec![Complex64::new(0.0, 0.0); g]; k];
    let mut log_likelihood = Vec::with_capacity(max_iter);
    let mut power = vec![0.0; g];

    for _ in 0..max_iter {
        power.fill(0.0);
        let mut ll = 0.0;
        for kk in 0..k {
            let post = posterior(&phi[kk], y.column(kk).as_slice(), sigma2, &gamma)?;
            ll += post.log_likelihood;
            for ((acc, mv), sv) in power.iter_mut().zip(&post.mean).zip(&post.var_diag) {
                *acc += mv.norm_sqr() + sv;
            }
            mu[kk] = post.mean;
        }
        log_likelihood.push(ll - (m * k) as f64 * std::f64::consts::PI.ln());
        for (gm, p) in gamma.iter_mut().zip(&power) {
            *gm = (p / k as f64).max(GAMMA_FLOOR);
        }
    }
    Ok(MsblOutput { mu, gamma, log_likelihood })
}

struct Posterior {
    mean: Vec<Complex64>,
    var_diag: Vec<f64>,
    /// `-log det C - y^H C^-1 y`, without the `M log pi` constant.
    log_likelihood: f64,
}

fn posterior(phi: &CMatrix, y: &[Complex64], sigma2: f64, gamma: &[f64]) -> Result<Posterior> {
    let (m, g) = phi.shape();
    let cols = phi.as_slice();

    // C = sigma2 I + sum_g gamma_g phi_g phi_g^H, lower triangle then mirrored
    let mut c = CMatrix::zeros(m, m);
    for (col, &gm) in cols.chunks_exact(m).zip(gamma) {
        for j in 0..m {
            let w = col[j].conj() * gm;
            let dst = &mut c.as_mut_slice()[j * m..(j + 1) * m];
            for i in j..m {
                dst[i] += col[i] * w;
            }
        }
    }
    for j in 0..m {
        c[(j, j)] += Complex64::new(sigma2, 0.0);
        for i in (j + 1)..m {
            c[(j, i)] = c[(i, j)].conj();
        }
    }
    let chol = Cholesky::new(c).ok_or_else(|| Error::Singular("M-SBL covariance is not positive definite".into()))?;
    let log_det: f64 = 2.0 * chol.l_dirty().diagonal().iter().map(|v| v.re.ln()).sum::<f64>();

    let yv = CMatrix::from_column_slice(m, 1, y);
    let cy = chol.solve(&yv);
    let quad: f64 = y.iter().zip(cy.iter()).map(|(a, b)| (a.conj() * b).re).sum();

    let z = chol.solve(phi);
    let mut mean = vec![Complex64::new(0.0, 0.0); g];
    let mut var_diag = vec![0.0; g];
    for (j, (pc, zc)) in cols.chunks_exact(m).zip(z.as_slice().chunks_exact(m)).enumerate() {
        let mut d = 0.0;
        let mut zy = Complex64::new(0.0, 0.0);
        for i in 0..m {
            d += (pc[i].conj() * zc[i]).re;
            zy += zc[i].conj() * y[i];
        }
        mean[j] = zy * gamma[j];
        var_diag[j] = (gamma[j] - gamma[j] * gamma[j] * d).max(0.0);
    }
    Ok(Posterior { mean, var_diag, log_likelihood: -log_det - quad })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::noise_variance;
    use crate::linalg;
    use crate::rng::{complex_normal, stream};
    use rand::Rng;

    fn instance(m: usize, g: usize, k: usize, support: &[usize], snr_db: f64, seed: u64) -> (CMatrix, Vec<CMatrix>, f64) {
        let mut rng = stream(seed, 0);
        let sigma2 = noise_variance(snr_db);
        let phi: Vec<CMatrix> = (0..k)
            .map(|_| CMatrix::from_fn(m, g, |_, _| complex_normal(&mut rng, 1.0 / m as f64)))
            .collect();
        let mut y = CMatrix::zeros(m, k);
        for kk in 0..k {
            let mut x = vec![Complex64::new(0.0, 0.0); g];
            for &idx in support {
                x[idx] = complex_normal(&mut rng, 1.0);
            }
            let mut col = vec![Complex64::new(0.0, 0.0); m];
            linalg::matvec(&phi[kk], &x, &mut col);
            for i in 0..m {
                y[(i, kk)] = col[i] + complex_normal(&mut rng, sigma2);
            }
        }
        (y, phi, sigma2)
    }

    #[test]
    fn scalar_em_fixed_point() {
        // y = a x + n with x ~ CN(0, gamma): EM update
        // gamma' = |mu|^2 + var, mu = gamma a* y / (|a|^2 gamma + s2),
        // var = gamma s2 / (|a|^2 gamma + s2). The fixed point is
        // gamma* = (|y|^2 - s2) / |a|^2 when |y|^2 > s2.
        let a = Complex64::new(0.8, -0.3);
        let yv = Complex64::new(1.7, 0.9);
        let s2 = 0.2;
        let phi = vec![CMatrix::from_element(1, 1, a)];
        let y = CMatrix::from_element(1, 1, yv);
        let out = msbl(&y, &phi, s2, 2000).unwrap();
        let expected = (yv.norm_sqr() - s2) / a.norm_sqr();
        assert!((out.gamma[0] - expected).abs() < 1e-8 * expected, "{} vs {expected}", out.gamma[0]);
        let mu = expected * a.conj() * yv / (a.norm_sqr() * expected + s2);
        assert!((out.mu[0][0] - mu).norm() < 1e-8);
    }

    #[test]
    fn zero_data_decays_monotonically() {
        let (_, phi, _) = instance(6, 10, 2, &[1], 10.0, 1);
        let y = CMatrix::zeros(6, 2);
        let mut prev = vec![1.0; 10];
        for it in 1..8 {
            let out = msbl(&y, &phi, 0.1, it).unwrap();
            for (a, b) in out.gamma.iter().zip(&prev) {
                assert!(a < b || *a == GAMMA_FLOOR);
            }
            prev = out.gamma;
        }
    }

    #[test]
    fn marginal_likelihood_non_decreasing() {
        for seed in 0..4 {
            let (y, phi, s2) = instance(10, 20, 3, &[2, 7, 15], 10.0, 10 + seed);
            let out = msbl(&y, &phi, s2, 40).unwrap();
            for w in out.log_likelihood.windows(2) {
                assert!(w[1] >= w[0] - 1e-8, "{} -> {}", w[0], w[1]);
            }
        }
    }

    #[test]
    fn recovers_support_on_easy_instances() {
        let trials = 100;
        let mut hits = 0;
        for t in 0..trials {
            let mut rng = stream(500 + t, 1);
            let mut support = Vec::new();
            while support.len() < 3 {
                let i = rng.random_range(0..32);
                if !support.contains(&i) {
                    support.push(i);
                }
            }
            support.sort_unstable();
            let (y, phi, s2) = instance(24, 32, 4, &support, 20.0, 500 + t);
            let out = msbl(&y, &phi, s2, MSBL_DEFAULT_ITERS).unwrap();
            let mut order: Vec<usize> = (0..32).collect();
            order.sort_by(|&a, &b| out.gamma[b].total_cmp(&out.gamma[a]));
            let mut top = order[..3].to_vec();
            top.sort_unstable();
            if top == support {
                hits += 1;
            }
        }
        assert!(hits >= 95, "{hits}/100");
    }

    #[test]
    fn deterministic_and_validated() {
        let (y, phi, s2) = instance(8, 12, 2, &[3], 10.0, 3);
        let a = msbl(&y, &phi, s2, 10).unwrap();
        let b = msbl(&y, &phi, s2, 10).unwrap();
        assert_eq!(a.gamma, b.gamma);
        assert!(msbl(&y, &phi, 0.0, 10).is_err());
        assert!(msbl(&y, &phi, -1.0, 10).is_err());
    }
}
