//! Training runs over a [`Dataset`]: separate (ST) and mixed (MT) training,
//! and the MSBL-AD baseline that sets the mixed-training weights.

use thzce::dictionary::{build_dictionaries, build_grid, DictionaryKind};
use thzce::training::{
    compute_config_weights, layerwise_train, mixed_train, same_config, ConfigKey, ConfigWeightTable, Sample, TrainConfig,
    TrainOutcome, TrainingContext,
};
use thzce::{Error, Result};

use crate::dataset::Dataset;
use crate::experiments::{per_sample_nmse, Algorithm, Combo, Iterations, Workspace};

pub fn dataset_context(ds: &Dataset) -> Result<TrainingContext> {
    let grid = build_grid(&ds.system);
    let mut ms: Vec<usize> = ds.train.iter().chain(&ds.val).chain(&ds.test).map(|s| s.m).collect();
    ms.sort_unstable();
    ms.dedup();
    TrainingContext::new(build_dictionaries(&ds.system, DictionaryKind::Polar), &ds.pilot, &ms, grid.s, grid.q)
}

/// Distinct configuration tags in first-appearance order.
pub fn dataset_configs(ds: &Dataset) -> Vec<ConfigKey> {
    let mut keys: Vec<ConfigKey> = Vec::new();
    for s in ds.train.iter().chain(&ds.val).chain(&ds.test) {
        if !keys.iter().any(|k| same_config(*k, (s.m, s.snr_db))) {
            keys.push((s.m, s.snr_db));
        }
    }
    keys
}

pub fn filter_config(samples: &[Sample], key: ConfigKey) -> Vec<Sample> {
    samples.iter().filter(|s| same_config((s.m, s.snr_db), key)).cloned().collect()
}

/// Layer-wise training on the samples tagged `key` only.
pub fn train_separate(ds: &Dataset, ctx: &TrainingContext, key: ConfigKey, cfg: &TrainConfig) -> Result<TrainOutcome> {
    let train = ctx.prepare_all(&filter_config(&ds.train, key))?;
    let val = ctx.prepare_all(&filter_config(&ds.val, key))?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut out = layerwise_train(ctx, &train, &val, cfg)?;
    out.model.configs = vec![key];
    Ok(out)
}

/// Layer-wise mixed training over every sample with loss weights `table`.
pub fn train_mixed(ds: &Dataset, ctx: &TrainingContext, table: &ConfigWeightTable, cfg: &TrainConfig) -> Result<TrainOutcome> {
    let train = ctx.prepare_all(&ds.train)?;
    let val = ctx.prepare_all(&ds.val)?;
    mixed_train(ctx, &train, &val, table, cfg)
}

/// Mean linear MSBL-AD NMSE per configuration over `samples` fresh
/// evaluation draws, and the weight table derived from it.
pub fn baseline_weights(
    ws: &Workspace,
    grid: &[ConfigKey],
    middle: ConfigKey,
    samples: usize,
    iters: Iterations,
    workers: usize,
) -> Result<(ConfigWeightTable, Vec<(ConfigKey, f64)>)> {
    let combo = Combo::new(Algorithm::Msbl, DictionaryKind::Angular);
    let mut baseline = Vec::with_capacity(grid.len());
    for &key in grid {
        let draws = (0..samples).map(|i| ws.eval_sample(key, i, None)).collect::<Result<Vec<_>>>()?;
        let v = per_sample_nmse(ws, combo, &draws, None, iters, workers)?;
        baseline.push((key, v.iter().sum::<f64>() / v.len().max(1) as f64));
    }
    Ok((compute_config_weights(&baseline, middle)?, baseline))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate, SplitCounts};
    use thzce::SystemConfig;

    #[test]
    fn configs_and_filtering() {
        let cfg = SystemConfig { n: 64, k: 2, q: 64, ..SystemConfig::desk() };
        let ds = generate(&cfg, SplitCounts::new(6, 3, 0), &[(8, 10.0), (4, 0.0), (8, 20.0)]).unwrap();
        assert_eq!(dataset_configs(&ds), vec![(8, 10.0), (4, 0.0), (8, 20.0)]);
        assert_eq!(filter_config(&ds.train, (4, 0.0)).len(), 2);
        let ctx = dataset_context(&ds).unwrap();
        assert_eq!(ctx.operators.iter().map(|(m, _)| *m).collect::<Vec<_>>(), vec![4, 8]);
    }
}
