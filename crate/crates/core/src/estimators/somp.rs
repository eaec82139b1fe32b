//! Simultaneous orthogonal matching pursuit.

use nalgebra::linalg::Cholesky;
use num_complex::Complex64;

use super::check_problem;
use crate::error::{Error, Result};
use crate::linalg;
use crate::CMatrix;

pub const SOMP_DEFAULT_ITERS: usize = 6;

/// Relative pivot threshold below which the selected columns are treated
/// as linearly dependent.
const PIVOT_TOL: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct SompOutput {
    pub x: Vec<Vec<Complex64>>,
    /// Selected grid indices in selection order.
    pub support: Vec<usize>,
}

/// Runs exactly `max_iter` greedy rounds, or fewer if every residual
/// vanishes.
pub fn somp(y: &CMatrix, phi: &[CMatrix], max_iter: usize) -> Result<SompOutput> {
    let (m, g, k) = check_problem(y, phi)?;
    if max_iter > m {
        return Err(Error::InvalidConfig(format!("SOMP needs max_iter <= M ({max_iter} > {m})")));
    }
    let zero = Complex64::new(0.0, 0.0);
    let mut residual: Vec<Vec<Complex64>> = (0..k).map(|kk| y.column(kk).as_slice().to_vec()).collect();
    let mut support: Vec<usize> = Vec::with_capacity(max_iter);
    let mut coeffs: Vec<Vec<Complex64>> = vec![Vec::new(); k];
    let mut corr = vec![zero; g];
    let mut score = vec![0.0; g];

    for _ in 0..max_iter {
        if residual.iter().all(|r| r.iter().all(|v| *v == zero)) {
            break;
        }
        score.fill(0.0);
        for (p, r) in phi.iter().zip(&residual) {
            linalg::adjoint_matvec(p, r, &mut corr);
            for (s, c) in score.iter_mut().zip(&corr) {
                *s += c.norm();
            }
        }
        let pick = score
            .iter()
            .enumerate()
            .filter(|(idx, _)| !support.contains(idx))
            .fold(None, |best: Option<(usize, f64)>, (idx, &s)| match best {
                Some((_, b)) if b >= s => best,
                _ => Some((idx, s)),
            })
            .map(|(idx, _)| idx)
            .ok_or_else(|| Error::Singular("no atoms left to select".into()))?;
        support.push(pick);

        for kk in 0..k {
            let sub = phi[kk].select_columns(&support);
            let yk = y.column(kk).into_owned();
            let sol = least_squares(&sub, &yk)?;
            let mut fit = vec![zero; m];
            linalg::matvec(&sub, sol.as_slice(), &mut fit);
            for ((r, yv), f) in residual[kk].iter_mut().zip(yk.iter()).zip(&fit) {
                *r = yv - f;
            }
            coeffs[kk] = sol.as_slice().to_vec();
        }
    }

    let x = coeffs
        .into_iter()
        .map(|c| {
            let mut full = vec![zero; g];
            for (&idx, v) in support.iter().zip(c) {
                full[idx] = v;
            }
            full
        })
        .collect();
    Ok(SompOutput { x, support })
}

fn least_squares(a: &CMatrix, y: &nalgebra::DVector<Complex64>) -> Result<nalgebra::DVector<Complex64>> {
    let gram = a.adjoint() * a;
    let max_diag = gram.diagonal().iter().map(|v| v.re).fold(0.0, f64::max);
    let chol = Cholesky::new(gram).ok_or_else(|| Error::Singular("selected columns are rank deficient".into()))?;
    let min_pivot = chol.l_dirty().diagonal().iter().map(|v| v.re).fold(f64::INFINITY, f64::min);
    if min_pivot * min_pivot <= PIVOT_TOL * max_diag {
        return Err(Error::Singular("selected columns are rank deficient".into()));
    }
    Ok(chol.solve(&(a.adjoint() * y)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{complex_normal, stream};

    fn random_phi(m: usize, g: usize, k: usize, seed: u64) -> Vec<CMatrix> {
        let mut rng = stream(seed, 0);
        (0..k)
            .map(|_| CMatrix::from_fn(m, g, |_, _| complex_normal(&mut rng, 1.0 / m as f64)))
            .collect()
    }

    fn observe(phi: &[CMatrix], x: &[Vec<Complex64>]) -> CMatrix {
        let m = phi[0].nrows();
        let mut y = CMatrix::zeros(m, phi.len());
        for (kk, (p, xk)) in phi.iter().zip(x).enumerate() {
            let mut col = vec![Complex64::new(0.0, 0.0); m];
            linalg::matvec(p, xk, &mut col);
            y.column_mut(kk).copy_from_slice(&col);
        }
        y
    }

    #[test]
    fn single_on_grid_atom() {
        let phi = random_phi(12, 30, 3, 1);
        let mut rng = stream(2, 0);
        let x: Vec<Vec<Complex64>> = (0..3)
            .map(|_| {
                let mut v = vec![Complex64::new(0.0, 0.0); 30];
                v[17] = complex_normal(&mut rng, 1.0);
                v
            })
            .collect();
        let y = observe(&phi, &x);
        let out = somp(&y, &phi, 1).unwrap();
        assert_eq!(out.support, vec![17]);
        for (a, b) in out.x.iter().zip(&x) {
            for (u, v) in a.iter().zip(b) {
                assert!((u - v).norm() <= 1e-8);
            }
        }
    }

    #[test]
    fn zero_observation_gives_zero() {
        let phi = random_phi(8, 16, 2, 3);
        let out = somp(&CMatrix::zeros(8, 2), &phi, 6).unwrap();
        assert!(out.x.iter().flatten().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn matches_exhaustive_two_subset_search() {
        let (m, g, k) = (8, 16, 2);
        for seed in 0..20 {
            let phi = random_phi(m, g, k, 100 + seed);
            let mut rng = stream(200 + seed, 0);
            let (i0, i1) = (seed as usize % g, (seed as usize * 7 + 3) % g);
            let i1 = if i1 == i0 { (i1 + 1) % g } else { i1 };
            let x: Vec<Vec<Complex64>> = (0..k)
                .map(|_| {
                    let mut v = vec![Complex64::new(0.0, 0.0); g];
                    v[i0] = complex_normal(&mut rng, 1.0);
                    v[i1] = complex_normal(&mut rng, 1.0);
                    v
                })
                .collect();
            let y = observe(&phi, &x);

            // brute force: the 2-subset with the smallest joint LS residual
            let mut best = (f64::INFINITY, vec![]);
            for a in 0..g {
                for b in (a + 1)..g {
                    let mut res = 0.0;
                    for kk in 0..k {
                        let sub = phi[kk].select_columns(&[a, b]);
                        let yk = y.column(kk).into_owned();
                        let sol = sub.clone().svd(true, true).solve(&yk, 1e-14).unwrap();
                        res += (&yk - &sub * sol).norm_squared();
                    }
                    if res < best.0 {
                        best = (res, vec![a, b]);
                    }
                }
            }
            let out = somp(&y, &phi, 2).unwrap();
            let mut got = out.support.clone();
            got.sort_unstable();
            assert_eq!(got, best.1, "seed {seed}");
        }
    }

    #[test]
    fn rank_deficient_selection_errors() {
        // columns 0 and 1 coincide; the residual left after column 2 is
        // orthogonal to every atom, so the later rounds must pick both
        let c = |v: f64| Complex64::new(v, 0.0);
        let phi = vec![CMatrix::from_fn(6, 3, |i, j| match (i, j) {
            (0, 0) | (0, 1) => c(1.0),
            (1, 2) => c(1.0),
            _ => c(0.0),
        })];
        let mut y = CMatrix::zeros(6, 1);
        y[(1, 0)] = c(2.0);
        y[(4, 0)] = c(0.5);
        assert!(matches!(somp(&y, &phi, 3), Err(Error::Singular(_))));
    }

    #[test]
    fn too_many_iterations_rejected() {
        let phi = random_phi(4, 8, 1, 5);
        assert!(somp(&CMatrix::zeros(4, 1), &phi, 5).is_err());
    }
}
