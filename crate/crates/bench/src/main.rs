use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use thzce::dictionary::build_grid;
use thzce::rng::stream;
use thzce::training::{config_label, ConfigKey, ConfigWeightTable, TrainOutcome};
use thzce::unfolded::{load_model, save_model, UnfoldedModel};
use thzce::Result;
use thzce_bench::dataset::{dataset_digest, generate_dataset, Dataset, SplitCounts};
use thzce_bench::experiments::{
    self, mean_db, per_sample_nmse, Combo, ExperimentKind, ExperimentResult, ExperimentSpec, Iterations, Models,
    ResultRow, Workspace,
};
use thzce_bench::flops::{flops, FlopAlgorithm};
use thzce_bench::pipeline::{baseline_weights, dataset_configs, dataset_context, filter_config, train_mixed, train_separate};
use thzce_bench::runtime::{benchmark_runtime, timing_table};
use thzce_bench::settings::Settings;

/// Wideband THz near-field channel estimation: datasets, training,
/// estimation, benchmarks and experiment sweeps.
#[derive(Parser)]
#[command(name = "thzce", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Parameter preset: desk or full.
    #[arg(long)]
    preset: Option<String>,
    /// TOML file with [system] and [train] tables.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one field, e.g. --set system.snr_db=5 --set train.lr0=0.003.
    #[arg(long = "set", value_name = "SECTION.FIELD=VALUE")]
    overrides: Vec<String>,
    /// Shorthand for --set system.seed=SEED.
    #[arg(long)]
    seed: Option<u64>,
}

impl Common {
    fn settings(&self) -> Result<Settings> {
        let mut overrides = self.overrides.clone();
        if let Some(seed) = self.seed {
            overrides.push(format!("system.seed={seed}"));
        }
        Settings::load(self.preset.as_deref(), self.config.as_deref(), &overrides)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a tagged train/val/test dataset.
    Generate {
        #[command(flatten)]
        common: Common,
        /// Output directory.
        #[arg(long, default_value = "data")]
        out: PathBuf,
        /// Split sizes TRAIN,VAL,TEST; defaults to train.n_train/n_val/n_test.
        #[arg(long, value_parser = parse_counts)]
        counts: Option<SplitCounts>,
    },
    /// Train unfolded networks on a dataset.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        /// Output directory of the model (one subdirectory per config for st).
        #[arg(long, default_value = "model")]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "mt")]
        mode: TrainMode,
        /// MSBL-AD draws per configuration for the mixed-training weights.
        #[arg(long, default_value_t = experiments::DEFAULT_SAMPLES)]
        baseline_samples: usize,
    },
    /// Estimate the channels of a dataset split and report NMSE per config.
    Estimate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        /// ALGORITHM-DICTIONARY, e.g. unfolded-pd, msbl-ad, somp-pd.
        #[arg(long, default_value = "unfolded-pd")]
        alg: Combo,
        #[arg(long)]
        model: Option<PathBuf>,
        /// CSV output path.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Median and IQR wall-clock time per solve, single-threaded.
    Bench {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 20)]
        reps: usize,
        #[arg(long, value_delimiter = ',', default_value = "somp-pd,msbl-ad,msbl-pd,amp-pd,unfolded-pd")]
        algs: Vec<Combo>,
        /// Trained model; a randomly initialised one of --layers layers otherwise.
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long, default_value_t = 10)]
        layers: usize,
    },
    /// Closed-form FLOP count.
    Flops {
        #[arg(long)]
        alg: FlopAlgorithm,
        #[arg(long = "K")]
        k: u64,
        #[arg(long = "M")]
        m: u64,
        #[arg(long = "G")]
        g: u64,
        #[arg(long, default_value_t = 1)]
        iters: u64,
    },
    /// Run one experiment sweep and write its CSV.
    Experiment {
        /// vs_M, vs_rc, vs_snr_configs, optimizer_study or sparsity_structure.
        kind: ExperimentKind,
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = experiments::DEFAULT_SAMPLES)]
        samples: usize,
        /// Comma-separated ALGORITHM-DICTIONARY list.
        #[arg(long, value_delimiter = ',')]
        algs: Option<Vec<Combo>>,
        /// Unfolded network for vs_M and vs_rc.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Directory of separately trained networks (train --mode st).
        #[arg(long)]
        st_models: Option<PathBuf>,
        #[arg(long)]
        mt_model: Option<PathBuf>,
        #[arg(long)]
        mt_unweighted_model: Option<PathBuf>,
        /// Network depth of the optimizer study.
        #[arg(long, default_value_t = 3)]
        depth: usize,
        /// Common path distance of the sparsity-structure comparison (m).
        #[arg(long, default_value_t = 10.0)]
        rc: f64,
        /// Support size of the sparsity-structure comparison.
        #[arg(long, default_value_t = 20)]
        support: usize,
        /// CSV output path; defaults to KIND.csv.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long, default_value_t = thzce::estimators::SOMP_DEFAULT_ITERS)]
        somp_iters: usize,
        #[arg(long, default_value_t = thzce::estimators::MSBL_DEFAULT_ITERS)]
        msbl_iters: usize,
        #[arg(long, default_value_t = experiments::AMP_DEFAULT_ITERS)]
        amp_iters: usize,
    },
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum TrainMode {
    /// One network per configuration.
    St,
    /// One network, weighted loss.
    Mt,
    /// One network, unit weights.
    MtUnweighted,
}

fn parse_counts(s: &str) -> std::result::Result<SplitCounts, String> {
    let parts: Vec<usize> = s
        .split(',')
        .map(|p| p.trim().parse().map_err(|_| format!("bad count `{p}`")))
        .collect::<std::result::Result<_, _>>()?;
    match parts[..] {
        [a, b, c] => Ok(SplitCounts::new(a, b, c)),
        _ => Err("expected TRAIN,VAL,TEST".into()),
    }
}

fn config_dir(key: ConfigKey) -> String {
    format!("m{}_snr{}", key.0, key.1)
}

fn write_outcome(out: &TrainOutcome, dir: &Path) -> Result<()> {
    save_model(&out.model, dir)?;
    fs::write(dir.join("train.log"), out.log.to_text())?;
    Ok(())
}

fn load_st_models(dir: &Path) -> Result<Vec<(ConfigKey, UnfoldedModel)>> {
    let mut out = Vec::new();
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)?.map(|e| e.map(|e| e.path())).collect::<std::io::Result<_>>()?;
    entries.sort();
    for path in entries.into_iter().filter(|p| p.join("manifest.txt").exists()) {
        let model = load_model(&path)?;
        match model.configs[..] {
            [key] => out.push((key, model)),
            _ => return Err(thzce::Error::Format(format!("{}: an ST model must record exactly one config", path.display()))),
        }
    }
    Ok(out)
}

fn write_csv(result: &ExperimentResult, path: &Path) -> Result<()> {
    fs::write(path, result.to_csv())?;
    println!("{}wrote {}", result.summary(), path.display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate { common, out, counts } => {
            let s = common.settings()?;
            let counts = counts.unwrap_or(SplitCounts::new(s.train.n_train, s.train.n_val, s.train.n_test));
            generate_dataset(&s.system, counts, &s.train.grid, &out)?;
            println!(
                "wrote {} samples ({} configs) to {}\nsha256 {}",
                counts.total(),
                s.train.grid.len(),
                out.display(),
                dataset_digest(&out)?
            );
        }
        Command::Train { common, data, out, mode, baseline_samples } => {
            let s = common.settings()?;
            let ds = Dataset::load(&data)?;
            let ctx = dataset_context(&ds)?;
            let keys = dataset_configs(&ds);
            match mode {
                TrainMode::St => {
                    for key in keys {
                        let outcome = train_separate(&ds, &ctx, key, &s.train)?;
                        let dir = out.join(config_dir(key));
                        write_outcome(&outcome, &dir)?;
                        println!("{}: {} layers -> {}", config_label(key), outcome.model.depth(), dir.display());
                    }
                }
                TrainMode::Mt | TrainMode::MtUnweighted => {
                    let middle = keys.iter().copied().find(|k| thzce::training::same_config(*k, s.train.middle)).unwrap_or(keys[0]);
                    let table = if matches!(mode, TrainMode::Mt) {
                        let ws = Workspace { pilot: ds.pilot.clone(), ..Workspace::new(&ds.system, ds.m_max())? };
                        let (table, baseline) =
                            baseline_weights(&ws, &keys, middle, baseline_samples, Iterations::default(), experiments::default_workers())?;
                        for ((key, nmse), (_, w)) in baseline.iter().zip(&table.weights) {
                            println!("baseline {}: MSBL-AD {:.3} dB, weight {:.4}", config_label(*key), 10.0 * nmse.log10(), w);
                        }
                        table
                    } else {
                        ConfigWeightTable::uniform(&keys, middle)
                    };
                    let outcome = train_mixed(&ds, &ctx, &table, &s.train)?;
                    write_outcome(&outcome, &out)?;
                    println!("{} layers -> {}", outcome.model.depth(), out.display());
                }
            }
        }
        Command::Estimate { data, split, alg, model, out } => {
            let ds = Dataset::load(&data)?;
            let samples = ds
                .split(&split)
                .ok_or_else(|| thzce::Error::InvalidConfig(format!("unknown split `{split}` (train, val or test)")))?;
            let model = model.as_deref().map(load_model).transpose()?;
            let ws = Workspace { pilot: ds.pilot.clone(), ..Workspace::new(&ds.system, ds.m_max())? };
            let mut rows = Vec::new();
            for key in dataset_configs(&ds) {
                let subset = filter_config(samples, key);
                if subset.is_empty() {
                    continue;
                }
                let v = per_sample_nmse(&ws, alg, &subset, model.as_ref(), Iterations::default(), experiments::default_workers())?;
                rows.push(ResultRow {
                    axis: config_label(key),
                    algorithm: alg.algorithm.label().into(),
                    dictionary: alg.dictionary.label().into(),
                    nmse_db: mean_db(&v),
                    samples: v.len(),
                });
            }
            let result = ExperimentResult { kind: ExperimentKind::VsSnrConfigs, rows };
            match out {
                Some(path) => write_csv(&result, &path)?,
                None => print!("{}", result.to_csv()),
            }
        }
        Command::Bench { common, reps, algs, model, layers } => {
            let s = common.settings()?;
            let model = match model {
                Some(dir) => load_model(&dir)?,
                None => {
                    let grid = build_grid(&s.system);
                    UnfoldedModel::new(layers, grid.s, grid.q, s.train.hidden, &mut stream(s.system.seed, 0))?
                }
            };
            let rows = benchmark_runtime(&algs, &s.system, reps, Some(&model), Iterations::default())?;
            println!("N={} K={} M={} SNR={} dB", s.system.n, s.system.k, s.system.m, s.system.snr_db);
            print!("{}", timing_table(&rows));
        }
        Command::Flops { alg, k, m, g, iters } => {
            let c = flops(alg, k, m, g, iters);
            println!("algorithm {alg}");
            println!("per_iteration {} ({:.3}e9)", c.per_iteration, c.per_iteration_giga());
            println!("total {} ({:.3}e9)", c.total, c.total_giga());
        }
        Command::Experiment {
            kind,
            common,
            samples,
            algs,
            model,
            st_models,
            mt_model,
            mt_unweighted_model,
            depth,
            rc,
            support,
            out,
            workers,
            somp_iters,
            msbl_iters,
            amp_iters,
        } => {
            let s = common.settings()?;
            let mut spec = ExperimentSpec::new(s.system.clone());
            spec.samples = samples;
            spec.iterations = Iterations { somp: somp_iters, msbl: msbl_iters, amp: amp_iters };
            spec.config_grid = s.train.grid.clone();
            if let Some(w) = workers {
                spec.workers = w;
            }
            let models = Models {
                unfolded: model.as_deref().map(load_model).transpose()?,
                st: st_models.as_deref().map(load_st_models).transpose()?.unwrap_or_default(),
                mt: mt_model.as_deref().map(load_model).transpose()?,
                mt_unweighted: mt_unweighted_model.as_deref().map(load_model).transpose()?,
            };
            spec.combos = algs.unwrap_or_else(|| match kind {
                ExperimentKind::VsSnrConfigs => Vec::new(),
                _ => Combo::standard(models.unfolded.is_some()),
            });
            let result = match kind {
                ExperimentKind::VsM => experiments::vs_m(&spec, &models)?,
                ExperimentKind::VsRc => experiments::vs_rc(&spec, &models)?,
                ExperimentKind::VsSnrConfigs => experiments::vs_snr_configs(&spec, &models)?,
                ExperimentKind::OptimizerStudy => experiments::optimizer_study(&spec, &s.train, depth)?.0,
                ExperimentKind::SparsityStructure => experiments::sparsity_structure(&spec, rc, support)?,
            };
            let path = out.unwrap_or_else(|| PathBuf::from(format!("{}.csv", kind.label())));
            write_csv(&result, &path)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
