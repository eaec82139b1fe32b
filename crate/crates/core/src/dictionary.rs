//! Polar-domain (angle x distance) dictionaries.
//!
//! Angles are sampled uniformly in sine space and distances on rings whose
//! spacing is uniform in `1/r`. Ring 0 is the far-field ring (`r = inf`).
//! A length-`G` coefficient vector maps to an `S x Q` plane ring-major:
//! flat index `g = s * Q + q`.

use std::io::Write;

use num_complex::Complex64;

use crate::channel::{steering_into, subcarrier_frequencies};
use crate::config::SystemConfig;
use crate::error::{Error, Result};
use crate::linalg;
use crate::CMatrix;

#[derive(Debug, Clone, PartialEq)]
pub struct PolarGrid {
    pub q: usize,
    pub s: usize,
    /// Ring constant `N^2 d^2 / (2 beta^2 lambda)` (m).
    pub z_delta: f64,
    /// `Q` sines, strictly increasing.
    pub theta: Vec<f64>,
    /// `S x Q` distances, row `s` is ring `s`; row 0 is `inf`.
    pub r: Vec<Vec<f64>>,
}

impl PolarGrid {
    /// Total atom count `S * Q`.
    pub fn len(&self) -> usize {
        self.s * self.q
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `(ring, angle)` of flat index `g`.
    pub fn coords(&self, g: usize) -> (usize, usize) {
        (g / self.q, g % self.q)
    }

    /// Writes `s,q,theta,r` rows; the far-field ring is written as `inf`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "s,q,theta,r")?;
        for (s, ring) in self.r.iter().enumerate() {
            for (q, (&theta, &r)) in self.theta.iter().zip(ring).enumerate() {
                writeln!(out, "{s},{q},{theta},{r}")?;
            }
        }
        Ok(())
    }
}

/// Uniform sine grid `(2q - Q + 1) / Q`.
pub fn angle_grid(q: usize) -> Vec<f64> {
    (0..q)
        .map(|i| (2.0 * i as f64 - q as f64 + 1.0) / q as f64)
        .collect()
}

pub fn build_grid(cfg: &SystemConfig) -> PolarGrid {
    let n = cfg.n as f64;
    let d = cfg.spacing();
    let z_delta = n * n * d * d / (2.0 * cfg.beta * cfg.beta * cfg.wavelength());
    // smallest S >= 1 with z_delta / S < rho_min
    let s = (z_delta / cfg.rho_min).floor() as usize + 1;
    let theta = angle_grid(cfg.q);
    let r = (0..s)
        .map(|ring| {
            theta
                .iter()
                .map(|t| {
                    if ring == 0 {
                        f64::INFINITY
                    } else {
                        z_delta * (1.0 - t * t) / ring as f64
                    }
                })
                .collect()
        })
        .collect();
    PolarGrid { q: cfg.q, s, z_delta, theta, r }
}

/// Frequency-dependent polar dictionaries, one `N x G` matrix per subcarrier.
#[derive(Debug, Clone)]
pub struct PolarDictionary {
    pub grid: PolarGrid,
    pub frequencies: Vec<f64>,
    pub matrices: Vec<CMatrix>,
}

impl PolarDictionary {
    pub fn atoms(&self) -> usize {
        self.grid.len()
    }
}

pub fn build_polar_dictionary(cfg: &SystemConfig) -> PolarDictionary {
    let grid = build_grid(cfg);
    let frequencies = subcarrier_frequencies(cfg);
    let d = cfg.spacing();
    let matrices = frequencies
        .iter()
        .map(|&f| {
            let mut a = CMatrix::zeros(cfg.n, grid.len());
            for (g, col) in a.as_mut_slice().chunks_exact_mut(cfg.n).enumerate() {
                let (s, q) = grid.coords(g);
                steering_into(col, grid.theta[q], grid.r[s][q], f, d);
            }
            a
        })
        .collect();
    PolarDictionary { grid, frequencies, matrices }
}

/// Far-field dictionary on the uniform sine grid, evaluated at frequency `f`.
pub fn build_angular_dictionary(n: usize, q: usize, f: f64, d: f64) -> CMatrix {
    let theta = angle_grid(q);
    let mut a = CMatrix::zeros(n, q);
    for (col, &t) in a.as_mut_slice().chunks_exact_mut(n).zip(&theta) {
        steering_into(col, t, f64::INFINITY, f, d);
    }
    a
}

/// Which per-subcarrier dictionary family to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DictionaryKind {
    /// Frequency-dependent polar dictionaries (PD).
    Polar,
    /// Frequency-dependent far-field angular dictionaries (AD).
    Angular,
    /// One angular dictionary at the carrier, shared by every subcarrier.
    CommonAngular,
}

impl DictionaryKind {
    pub fn label(self) -> &'static str {
        match self {
            Self::Polar => "PD",
            Self::Angular => "AD",
            Self::CommonAngular => "common-AD",
        }
    }
}

/// `K` dictionaries of the requested family.
pub fn build_dictionaries(cfg: &SystemConfig, kind: DictionaryKind) -> Vec<CMatrix> {
    match kind {
        DictionaryKind::Polar => build_polar_dictionary(cfg).matrices,
        DictionaryKind::Angular => subcarrier_frequencies(cfg)
            .into_iter()
            .map(|f| build_angular_dictionary(cfg.n, cfg.q, f, cfg.spacing()))
            .collect(),
        DictionaryKind::CommonAngular => {
            let a = build_angular_dictionary(cfg.n, cfg.q, cfg.f_c, cfg.spacing());
            vec![a; cfg.k]
        }
    }
}

/// Largest normalized inner product between two distinct columns.
pub fn mutual_coherence(a: &CMatrix) -> Result<f64> {
    let rows = a.nrows();
    let cols: Vec<&[Complex64]> = a.as_slice().chunks_exact(rows.max(1)).collect();
    let norms: Vec<f64> = cols
        .iter()
        .map(|c| c.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt())
        .collect();
    if let Some(idx) = norms.iter().position(|&n| n == 0.0) {
        return Err(Error::ZeroColumn(idx));
    }
    let mut best: f64 = 0.0;
    for i in 0..cols.len() {
        for j in (i + 1)..cols.len() {
            let c = linalg::cdot(cols[i], cols[j]).norm() / (norms[i] * norms[j]);
            best = best.max(c);
        }
    }
    Ok(best.min(1.0))
}

/// Maps polar coefficients to the spatial channel, `A x`.
pub fn polar_transform(x: &[Complex64], a: &CMatrix) -> Result<Vec<Complex64>> {
    if x.len() != a.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "coefficient length {} vs {} atoms",
            x.len(),
            a.ncols()
        )));
    }
    let mut y = vec![Complex64::new(0.0, 0.0); a.nrows()];
    linalg::matvec(a, x, &mut y);
    Ok(y)
}

/// Indices of the `p` largest-magnitude entries (ties broken by index).
pub fn top_support(x: &[Complex64], p: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[b].norm_sqr().total_cmp(&x[a].norm_sqr()).then(a.cmp(&b)));
    idx.truncate(p);
    idx.sort_unstable();
    idx
}

/// `|A ∩ B| / |A ∪ B|` for index sets (1 when both are empty).
pub fn jaccard(a: &[usize], b: &[usize]) -> f64 {
    use std::collections::BTreeSet;
    let a: BTreeSet<_> = a.iter().collect();
    let b: BTreeSet<_> = b.iter().collect();
    let union = a.union(&b).count();
    if union == 0 {
        return 1.0;
    }
    a.intersection(&b).count() as f64 / union as f64
}

/// Jaccard similarity between the first- and last-subcarrier supports of
/// the least-squares coefficients of `h` (columns per subcarrier).
pub fn edge_support_overlap(h: &CMatrix, dicts: &[CMatrix], p: usize) -> Result<f64> {
    let k = h.ncols();
    if dicts.len() != k {
        return Err(Error::DimensionMismatch(format!("{} dictionaries for {k} subcarriers", dicts.len())));
    }
    let first = linalg::min_norm_solution(&dicts[0], h.column(0).as_slice())?;
    let last = linalg::min_norm_solution(&dicts[k - 1], h.column(k - 1).as_slice())?;
    Ok(jaccard(&top_support(&first, p), &top_support(&last, p)))
}
