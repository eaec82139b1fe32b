//! Experiment sweeps producing NMSE tables.

use std::fmt::{self, Write as _};
use std::str::FromStr;

use nalgebra::DMatrix;
use thzce::channel::sample_channel_at;
use thzce::config::noise_variance;
use thzce::dictionary::{build_dictionaries, build_grid, edge_support_overlap, DictionaryKind};
use thzce::estimators::{amp_sbl, msbl, nmse, reconstruct, somp, MSBL_DEFAULT_ITERS, SOMP_DEFAULT_ITERS};
use thzce::measurement::{measurement_matrices, observe};
use thzce::rng::stream;
use thzce::training::{config_label, train_stage, ConfigKey, ConfigWeightTable, Sample, TrainConfig, TrainingContext, TrainingLog};
use thzce::unfolded::UnfoldedModel;
use thzce::{CMatrix, Error, Result, SystemConfig};

use crate::dataset::{self, master_pilot, SplitCounts};
use crate::par_map;

/// Evaluation samples use streams far above any dataset index.
const EVAL_STREAM_BASE: u64 = 1 << 40;
pub const AMP_DEFAULT_ITERS: usize = 100;
pub const DEFAULT_SAMPLES: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Algorithm {
    Somp,
    Msbl,
    AmpSbl,
    Unfolded,
}

impl Algorithm {
    pub fn label(self) -> &'static str {
        match self {
            Self::Somp => "somp",
            Self::Msbl => "msbl",
            Self::AmpSbl => "amp-sbl",
            Self::Unfolded => "unfolded",
        }
    }
}

/// One algorithm paired with one dictionary family, e.g. `msbl-ad`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Combo {
    pub algorithm: Algorithm,
    pub dictionary: DictionaryKind,
}

impl Combo {
    pub const fn new(algorithm: Algorithm, dictionary: DictionaryKind) -> Self {
        Self { algorithm, dictionary }
    }

    /// SOMP and MSBL with both dictionaries, AMP-SBL and the unfolded network
    /// with polar dictionaries.
    pub fn standard(with_unfolded: bool) -> Vec<Self> {
        use Algorithm::*;
        use DictionaryKind::*;
        let mut out = vec![
            Self::new(Somp, Angular),
            Self::new(Somp, Polar),
            Self::new(Msbl, Angular),
            Self::new(Msbl, Polar),
            Self::new(AmpSbl, Polar),
        ];
        if with_unfolded {
            out.push(Self::new(Unfolded, Polar));
        }
        out
    }
}

impl fmt::Display for Combo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.algorithm.label(), self.dictionary.label().to_ascii_lowercase())
    }
}

impl FromStr for Combo {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        let lower = s.to_ascii_lowercase();
        let (alg, dict) = lower.rsplit_once('-').ok_or_else(|| format!("expected ALGORITHM-DICTIONARY, got `{s}`"))?;
        let algorithm = match alg {
            "somp" => Algorithm::Somp,
            "msbl" | "sbl" => Algorithm::Msbl,
            "amp-sbl" | "amp" => Algorithm::AmpSbl,
            "unfolded" => Algorithm::Unfolded,
            other => return Err(format!("unknown algorithm `{other}`")),
        };
        let dictionary = match dict {
            "pd" => DictionaryKind::Polar,
            "ad" => DictionaryKind::Angular,
            other => return Err(format!("unknown dictionary `{other}` (expected pd or ad)")),
        };
        if algorithm == Algorithm::Unfolded && dictionary != DictionaryKind::Polar {
            return Err("the unfolded network is defined on polar dictionaries only".into());
        }
        Ok(Self { algorithm, dictionary })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExperimentKind {
    VsM,
    VsRc,
    VsSnrConfigs,
    OptimizerStudy,
    SparsityStructure,
}

impl ExperimentKind {
    pub fn label(self) -> &'static str {
        match self {
            Self::VsM => "vs_M",
            Self::VsRc => "vs_rc",
            Self::VsSnrConfigs => "vs_snr_configs",
            Self::OptimizerStudy => "optimizer_study",
            Self::SparsityStructure => "sparsity_structure",
        }
    }
}

impl FromStr for ExperimentKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "vs_M" | "vs_m" => Ok(Self::VsM),
            "vs_rc" => Ok(Self::VsRc),
            "vs_snr_configs" => Ok(Self::VsSnrConfigs),
            "optimizer_study" => Ok(Self::OptimizerStudy),
            "sparsity_structure" => Ok(Self::SparsityStructure),
            other => Err(format!("unknown experiment `{other}`")),
        }
    }
}

/// One CSV row. For `sparsity_structure` the value column carries the mean
/// Jaccard index instead of an NMSE.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub axis: String,
    pub algorithm: String,
    pub dictionary: String,
    pub nmse_db: f64,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResult {
    pub kind: ExperimentKind,
    pub rows: Vec<ResultRow>,
}

pub const CSV_HEADER: &str = "axis,algorithm,dictionary,nmse_db,samples";

impl ExperimentResult {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let _ = writeln!(out, "{},{},{},{:.6},{}", r.axis, r.algorithm, r.dictionary, r.nmse_db, r.samples);
        }
        out
    }

    pub fn summary(&self) -> String {
        let value = if self.kind == ExperimentKind::SparsityStructure { "jaccard" } else { "NMSE (dB)" };
        let mut out = format!("{}\n{:>10}  {:<24} {:<10} {:>10}  samples\n", self.kind.label(), "axis", "algorithm", "dict", value);
        for r in &self.rows {
            let _ = writeln!(out, "{:>10}  {:<24} {:<10} {:>10.3}  {}", r.axis, r.algorithm, r.dictionary, r.nmse_db, r.samples);
        }
        out
    }

    pub fn find(&self, axis: &str, algorithm: &str, dictionary: &str) -> Option<&ResultRow> {
        self.rows.iter().find(|r| r.axis == axis && r.algorithm == algorithm && r.dictionary == dictionary)
    }
}

/// Iteration counts of the classical solvers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Iterations {
    pub somp: usize,
    pub msbl: usize,
    pub amp: usize,
}

impl Default for Iterations {
    fn default() -> Self {
        Self { somp: SOMP_DEFAULT_ITERS, msbl: MSBL_DEFAULT_ITERS, amp: AMP_DEFAULT_ITERS }
    }
}

/// Parameters shared by every sweep.
#[derive(Debug, Clone)]
pub struct ExperimentSpec {
    pub system: SystemConfig,
    pub samples: usize,
    pub combos: Vec<Combo>,
    pub m_grid: Vec<usize>,
    /// Common path distances of `vs_rc` (m).
    pub rc_grid: Vec<f64>,
    pub config_grid: Vec<ConfigKey>,
    pub iterations: Iterations,
    pub workers: usize,
}

impl ExperimentSpec {
    pub fn new(system: SystemConfig) -> Self {
        let train = TrainConfig::default();
        Self {
            samples: DEFAULT_SAMPLES,
            combos: Combo::standard(false),
            m_grid: vec![16, 32, 48, 64],
            rc_grid: vec![5.0, 10.0, 20.0, 40.0, 80.0, 160.0, 320.0],
            config_grid: train.grid,
            iterations: Iterations::default(),
            workers: default_workers(),
            system,
        }
    }
}

pub fn default_workers() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

/// Trained networks consulted by the sweeps.
#[derive(Debug, Clone, Default)]
pub struct Models {
    /// Network used for `unfolded-pd` in `vs_M` and `vs_rc`.
    pub unfolded: Option<UnfoldedModel>,
    /// Separately trained networks, one per configuration.
    pub st: Vec<(ConfigKey, UnfoldedModel)>,
    /// Mixed-training network with the weighted loss.
    pub mt: Option<UnfoldedModel>,
    /// Mixed-training network with unit weights.
    pub mt_unweighted: Option<UnfoldedModel>,
}

/// Dictionaries and pilot shared by a sweep.
#[derive(Debug, Clone)]
pub struct Workspace {
    pub system: SystemConfig,
    pub pilot: DMatrix<f64>,
    pub polar: Vec<CMatrix>,
    pub angular: Vec<CMatrix>,
}

impl Workspace {
    pub fn new(system: &SystemConfig, m_max: usize) -> Result<Self> {
        system.validate()?;
        Ok(Self {
            system: system.clone(),
            pilot: master_pilot(system, m_max),
            polar: build_dictionaries(system, DictionaryKind::Polar),
            angular: build_dictionaries(system, DictionaryKind::Angular),
        })
    }

    pub fn dicts(&self, kind: DictionaryKind) -> &[CMatrix] {
        match kind {
            DictionaryKind::Polar => &self.polar,
            _ => &self.angular,
        }
    }

    pub fn pilot_rows(&self, m: usize) -> Result<DMatrix<f64>> {
        if m == 0 || m > self.pilot.nrows() {
            return Err(Error::InvalidConfig(format!("pilot length {m} outside 1..={}", self.pilot.nrows())));
        }
        Ok(self.pilot.rows(0, m).into_owned())
    }

    /// Unfolded-network context over the polar dictionaries.
    pub fn context(&self, ms: &[usize]) -> Result<TrainingContext> {
        let grid = build_grid(&self.system);
        TrainingContext::new(self.polar.clone(), &self.pilot, ms, grid.s, grid.q)
    }

    /// Evaluation sample `i` at `key`, optionally with every path at
    /// distance `r`.
    pub fn eval_sample(&self, key: ConfigKey, i: usize, r: Option<f64>) -> Result<Sample> {
        let seed = self.system.seed;
        let index = EVAL_STREAM_BASE + i as u64;
        let ch = sample_channel_at(&self.system, r, &mut stream(seed, 2 * index + 1))?;
        let w = self.pilot_rows(key.0)?;
        let y = observe(&ch.h, &w, noise_variance(key.1), &mut stream(seed, 2 * index + 2))?;
        Ok(Sample { h: ch.h, y, m: key.0, snr_db: key.1 })
    }
}

/// Channel estimate of one classical solver.
pub fn solve(combo: Combo, sample: &Sample, phi: &[CMatrix], dicts: &[CMatrix], iters: Iterations) -> Result<CMatrix> {
    let sigma2 = noise_variance(sample.snr_db);
    match combo.algorithm {
        Algorithm::Somp => reconstruct(dicts, &somp(&sample.y, phi, iters.somp.min(sample.m))?.x),
        Algorithm::Msbl => reconstruct(dicts, &msbl(&sample.y, phi, sigma2, iters.msbl)?.mu),
        Algorithm::AmpSbl => {
            let out = amp_sbl(&sample.y, phi, sigma2, iters.amp)?;
            reconstruct(dicts, &out.mu)
        }
        Algorithm::Unfolded => Err(Error::InvalidConfig("the unfolded network needs a trained model".into())),
    }
}

/// Per-sample linear NMSE of `combo`; a non-finite estimate scores `inf`.
pub fn per_sample_nmse(
    ws: &Workspace,
    combo: Combo,
    samples: &[Sample],
    model: Option<&UnfoldedModel>,
    iters: Iterations,
    workers: usize,
) -> Result<Vec<f64>> {
    let Some(first) = samples.first() else { return Ok(Vec::new()) };
    let dicts = ws.dicts(combo.dictionary);
    if combo.algorithm == Algorithm::Unfolded {
        let model = model.ok_or_else(|| Error::InvalidConfig(format!("{combo} needs a trained model")))?;
        let mut ms: Vec<usize> = samples.iter().map(|s| s.m).collect();
        ms.dedup();
        let ctx = ws.context(&ms)?;
        return par_map(samples, workers, |s| {
            let prepared = ctx.prepare(s)?;
            match ctx.estimate(model, &prepared) {
                Ok(h_hat) => Ok(nmse(&s.h, &h_hat)?.linear),
                Err(Error::NonFinite { .. }) => Ok(f64::INFINITY),
                Err(e) => Err(e),
            }
        });
    }
    let phi = measurement_matrices(&ws.pilot_rows(first.m)?, dicts)?;
    par_map(samples, workers, |s| {
        if s.m != first.m {
            return Err(Error::InvalidConfig("samples of one call must share M".into()));
        }
        Ok(nmse(&s.h, &solve(combo, s, &phi, dicts, iters)?)?.linear)
    })
}

pub fn mean_db(values: &[f64]) -> f64 {
    10.0 * (values.iter().sum::<f64>() / values.len() as f64).log10()
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn row(axis: String, combo: Combo, values: &[f64]) -> ResultRow {
    ResultRow {
        axis,
        algorithm: combo.algorithm.label().into(),
        dictionary: combo.dictionary.label().into(),
        nmse_db: mean_db(values),
        samples: values.len(),
    }
}

fn m_max(spec: &ExperimentSpec) -> usize {
    spec.m_grid
        .iter()
        .chain(spec.config_grid.iter().map(|k| &k.0))
        .copied()
        .chain([spec.system.m])
        .max()
        .unwrap_or(spec.system.m)
}

fn need_model(models: &Models, combo: Combo) -> Result<Option<&UnfoldedModel>> {
    if combo.algorithm != Algorithm::Unfolded {
        return Ok(None);
    }
    models
        .unfolded
        .as_ref()
        .map(Some)
        .ok_or_else(|| Error::InvalidConfig(format!("{combo} requested but no model was given")))
}

/// NMSE versus pilot length at `spec.system.snr_db`.
pub fn vs_m(spec: &ExperimentSpec, models: &Models) -> Result<ExperimentResult> {
    let ws = Workspace::new(&spec.system, m_max(spec))?;
    let mut rows = Vec::new();
    for &m in &spec.m_grid {
        let samples = (0..spec.samples)
            .map(|i| ws.eval_sample((m, spec.system.snr_db), i, None))
            .collect::<Result<Vec<_>>>()?;
        for &combo in &spec.combos {
            let v = per_sample_nmse(&ws, combo, &samples, need_model(models, combo)?, spec.iterations, spec.workers)?;
            rows.push(row(m.to_string(), combo, &v));
        }
    }
    Ok(ExperimentResult { kind: ExperimentKind::VsM, rows })
}

/// NMSE versus a common path distance `r_c` at `(spec.system.m, spec.system.snr_db)`.
pub fn vs_rc(spec: &ExperimentSpec, models: &Models) -> Result<ExperimentResult> {
    let ws = Workspace::new(&spec.system, m_max(spec))?;
    let key = (spec.system.m, spec.system.snr_db);
    let mut rows = Vec::new();
    for &rc in &spec.rc_grid {
        let samples = (0..spec.samples)
            .map(|i| ws.eval_sample(key, i, Some(rc)))
            .collect::<Result<Vec<_>>>()?;
        for &combo in &spec.combos {
            let v = per_sample_nmse(&ws, combo, &samples, need_model(models, combo)?, spec.iterations, spec.workers)?;
            rows.push(row(format!("{rc}"), combo, &v));
        }
    }
    Ok(ExperimentResult { kind: ExperimentKind::VsRc, rows })
}

/// Separately and jointly trained networks over the configuration grid.
/// Classical combos in `spec.combos` are evaluated alongside.
pub fn vs_snr_configs(spec: &ExperimentSpec, models: &Models) -> Result<ExperimentResult> {
    if models.st.is_empty() && models.mt.is_none() && models.mt_unweighted.is_none() {
        return Err(Error::InvalidConfig("vs_snr_configs needs at least one trained model".into()));
    }
    let ws = Workspace::new(&spec.system, m_max(spec))?;
    let unfolded = Combo::new(Algorithm::Unfolded, DictionaryKind::Polar);
    let mut rows = Vec::new();
    for &key in &spec.config_grid {
        let axis = config_label(key);
        let samples = (0..spec.samples)
            .map(|i| ws.eval_sample(key, i, None))
            .collect::<Result<Vec<_>>>()?;
        let mut named: Vec<(&str, &UnfoldedModel)> = Vec::new();
        if let Some((_, m)) = models.st.iter().find(|(k, _)| thzce::training::same_config(*k, key)) {
            named.push(("unfolded-st", m));
        }
        if let Some(m) = &models.mt {
            named.push(("unfolded-mt", m));
        }
        if let Some(m) = &models.mt_unweighted {
            named.push(("unfolded-mt-unweighted", m));
        }
        for (name, model) in named {
            let v = per_sample_nmse(&ws, unfolded, &samples, Some(model), spec.iterations, spec.workers)?;
            rows.push(ResultRow { algorithm: name.into(), ..row(axis.clone(), unfolded, &v) });
        }
        for &combo in spec.combos.iter().filter(|c| c.algorithm != Algorithm::Unfolded) {
            let v = per_sample_nmse(&ws, combo, &samples, None, spec.iterations, spec.workers)?;
            rows.push(row(axis.clone(), combo, &v));
        }
    }
    Ok(ExperimentResult { kind: ExperimentKind::VsSnrConfigs, rows })
}

/// Validation NMSE per epoch of a fixed-depth network trained with each
/// optimizer at the middle configuration.
pub fn optimizer_study(spec: &ExperimentSpec, train: &TrainConfig, depth: usize) -> Result<(ExperimentResult, Vec<TrainingLog>)> {
    let key = train.middle;
    let ds = dataset::generate(&spec.system, SplitCounts::new(train.n_train, train.n_val, 0), &[key])?;
    let ws = Workspace::new(&spec.system, key.0)?;
    let ctx = ws.context(&[key.0])?;
    let train_set = ctx.prepare_all(&ds.train)?;
    let val_set = ctx.prepare_all(&ds.val)?;
    let table = ConfigWeightTable::uniform(&[key], key);
    let mut rows = Vec::new();
    let mut logs = Vec::new();
    for kind in [thzce::training::OptimizerKind::Adam, thzce::training::OptimizerKind::Sgd, thzce::training::OptimizerKind::Momentum] {
        let cfg = TrainConfig { optimizer: kind, ..train.clone() };
        let mut model = UnfoldedModel::new(depth, ctx.s, ctx.q, cfg.hidden, &mut stream(cfg.seed, u64::MAX))?;
        model.configs = vec![key];
        let mut log = TrainingLog::default();
        train_stage(&model, &ctx, &train_set, &val_set, &table, &cfg, 1, &mut log)?;
        for e in &log.entries {
            let db = e.val_nmse_db.first().map_or(f64::NAN, |(_, v)| *v);
            rows.push(ResultRow {
                axis: e.epoch.to_string(),
                algorithm: format!("unfolded-{}", kind.label()),
                dictionary: "PD".into(),
                nmse_db: db,
                samples: val_set.len(),
            });
        }
        logs.push(log);
    }
    Ok((ExperimentResult { kind: ExperimentKind::OptimizerStudy, rows }, logs))
}

/// Mean cross-subcarrier support Jaccard of the `p` largest coefficients for
/// channels with every path at distance `r_c`, under frequency-dependent
/// polar and common angular dictionaries.
///
/// The angle grid is raised to at least `2N` so that neither dictionary is
/// square (a square angular dictionary makes the least-squares
/// coefficients dense).
pub fn sparsity_structure(spec: &ExperimentSpec, r_c: f64, p: usize) -> Result<ExperimentResult> {
    let system = SystemConfig { q: spec.system.q.max(2 * spec.system.n), ..spec.system.clone() };
    let polar = build_dictionaries(&system, DictionaryKind::Polar);
    let common = build_dictionaries(&system, DictionaryKind::CommonAngular);
    let channels = (0..spec.samples)
        .map(|i| Ok(sample_channel_at(&system, Some(r_c), &mut stream(system.seed, EVAL_STREAM_BASE + i as u64))?.h))
        .collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::new();
    for (kind, dicts) in [(DictionaryKind::Polar, &polar), (DictionaryKind::CommonAngular, &common)] {
        let v = par_map(&channels, spec.workers, |h| edge_support_overlap(h, dicts, p))?;
        rows.push(ResultRow {
            axis: format!("{r_c}"),
            algorithm: "jaccard".into(),
            dictionary: kind.label().into(),
            nmse_db: v.iter().sum::<f64>() / v.len() as f64,
            samples: v.len(),
        });
    }
    Ok(ExperimentResult { kind: ExperimentKind::SparsityStructure, rows })
}
