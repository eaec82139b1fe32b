//! Wall-clock timing of single solves.

use std::fmt::Write as _;
use std::time::Instant;

use thzce::dictionary::build_grid;
use thzce::measurement::measurement_matrices;
use thzce::unfolded::{unfolded_forward_whitened, UnfoldedModel};
use thzce::{Error, Result, SystemConfig};

use crate::experiments::{solve, Algorithm, Combo, Iterations, Workspace};
use crate::flops::{flops, FlopAlgorithm, FlopCount};

#[derive(Debug, Clone, PartialEq)]
pub struct TimingRow {
    pub combo: Combo,
    pub repetitions: usize,
    pub median_ms: f64,
    pub iqr_ms: f64,
    /// Closed-form FLOPs at the benchmarked sizes.
    pub flops: FlopCount,
}

/// Quartile by linear interpolation between order statistics.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

fn flop_algorithm(a: Algorithm) -> FlopAlgorithm {
    match a {
        Algorithm::Somp => FlopAlgorithm::Somp,
        Algorithm::Msbl => FlopAlgorithm::Sbl,
        Algorithm::AmpSbl => FlopAlgorithm::AmpSbl,
        Algorithm::Unfolded => FlopAlgorithm::Unfolded,
    }
}

/// Times `repetitions` solves of one observation at `(cfg.m, cfg.snr_db)` per
/// combo, after one untimed warm-up solve. Runs on the calling thread only.
///
/// Dictionaries, measurement matrices and the whitening SVD are prepared
/// before timing; the unfolded timing covers projection and forward pass.
pub fn benchmark_runtime(
    combos: &[Combo],
    cfg: &SystemConfig,
    repetitions: usize,
    model: Option<&UnfoldedModel>,
    iters: Iterations,
) -> Result<Vec<TimingRow>> {
    if repetitions == 0 {
        return Err(Error::InvalidConfig("repetitions must be at least 1".into()));
    }
    let ws = Workspace::new(cfg, cfg.m)?;
    let sample = ws.eval_sample((cfg.m, cfg.snr_db), 0, None)?;
    let ctx = ws.context(&[cfg.m])?;
    let g = build_grid(cfg).len() as u64;
    let mut rows = Vec::new();
    for &combo in combos {
        let dicts = ws.dicts(combo.dictionary);
        let atoms = dicts[0].ncols() as u64;
        let phi = measurement_matrices(&ws.pilot_rows(cfg.m)?, dicts)?;
        let (run, count): (Box<dyn Fn() -> Result<()>>, FlopCount) = match combo.algorithm {
            Algorithm::Unfolded => {
                let model = model.ok_or_else(|| Error::InvalidConfig(format!("{combo} needs a trained model")))?;
                let op = ctx.operator(cfg.m)?;
                let sigma2 = cfg.noise_variance();
                let y = sample.y.clone();
                let run = move || {
                    let r = op.project(&y)?;
                    unfolded_forward_whitened(op, &r, sigma2, cfg.m, cfg.snr_db, model, false).map(|_| ())
                };
                (Box::new(run), flops(FlopAlgorithm::Unfolded, cfg.k as u64, cfg.m as u64, g, model.depth() as u64))
            }
            alg => {
                let n_iter = match alg {
                    Algorithm::Somp => iters.somp,
                    Algorithm::Msbl => iters.msbl,
                    _ => iters.amp,
                };
                let sample = &sample;
                let run = move || solve(combo, sample, &phi, dicts, iters).map(|_| ());
                (Box::new(run), flops(flop_algorithm(alg), cfg.k as u64, cfg.m as u64, atoms, n_iter as u64))
            }
        };
        run()?;
        let mut times = Vec::with_capacity(repetitions);
        for _ in 0..repetitions {
            let t = Instant::now();
            run()?;
            times.push(t.elapsed().as_secs_f64() * 1e3);
        }
        times.sort_by(f64::total_cmp);
        rows.push(TimingRow {
            combo,
            repetitions,
            median_ms: quantile(&times, 0.5),
            iqr_ms: quantile(&times, 0.75) - quantile(&times, 0.25),
            flops: count,
        });
    }
    Ok(rows)
}

pub fn timing_table(rows: &[TimingRow]) -> String {
    let mut out = format!("{:<16} {:>6} {:>12} {:>10} {:>14}\n", "algorithm", "reps", "median ms", "IQR ms", "GFLOPs");
    for r in rows {
        let _ = writeln!(
            out,
            "{:<16} {:>6} {:>12.3} {:>10.3} {:>14.6}",
            r.combo.to_string(),
            r.repetitions,
            r.median_ms,
            r.iqr_ms,
            r.flops.total_giga()
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quartiles() {
        let v = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(quantile(&v, 0.5), 3.0);
        assert_eq!(quantile(&v, 0.25), 2.0);
        assert_eq!(quantile(&[7.0], 0.75), 7.0);
        assert_eq!(quantile(&[1.0, 2.0], 0.5), 1.5);
    }
}
