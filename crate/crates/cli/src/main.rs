use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use stm_core::ablation::{self, AblationMode, AblationSpec};
use stm_core::dataset::{self, ClassLabel, FeatureKind, Partition, Split};
use stm_core::experiment::{ArchParams, Protocol};
use stm_core::pipeline::{self, RunConfig};
use stm_core::synth::{self, CorpusConfig};
use stm_core::{Error, Result};

#[derive(Parser)]
#[command(name = "stm", version, about = "Spectrotemporal modulation features and classifiers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Stm,
    Mel,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Lowpass,
    Highpass,
    Both,
}

#[derive(Clone, Copy, ValueEnum)]
enum PartitionArg {
    Train,
    Val,
    Test,
}

#[derive(Subcommand)]
enum Command {
    /// Extract per-recording features for every row of a labels CSV.
    Extract {
        #[arg(long)]
        input: PathBuf,
        /// CSV with columns path,label,group; paths relative to --input.
        #[arg(long)]
        labels: PathBuf,
        #[arg(long, value_enum)]
        kind: Kind,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Grouped, stratified train/validation/test split.
    Split {
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Cap the number of records of one class.
    Undersample {
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        class: ClassLabel,
        #[arg(long)]
        cap: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the fixed architecture from the config.
    Train {
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        split: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Random hyperparameter search, then retrain on train+validation.
    Tune {
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        split: PathBuf,
        #[arg(long)]
        budget: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a saved model on one partition and write a JSON report.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        split: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        partition: PartitionArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Retrain on masked STM features for each cutoff pair.
    Ablate {
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        split: PathBuf,
        /// Comma-separated temporal:spectral pairs, e.g. 4:6,1:0.75.
        #[arg(long)]
        cutoffs: String,
        #[arg(long, value_enum)]
        mode: Mode,
        /// Reuse this model's architecture and seed (default: config arch).
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Class-averaged STM maps and Cohen's d maps for subclass pairs.
    ExportMaps {
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Generate the synthetic three-class corpus.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let message = e.to_string().replace('\n', " ");
            eprintln!("error kind={} message={}", e.kind(), serde_json::Value::String(message));
            ExitCode::FAILURE
        }
    }
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Extract {
            input,
            labels,
            kind,
            out,
            config,
            jobs,
        } => {
            let cfg = RunConfig::load(config.as_deref())?;
            let entries = dataset::read_labels(&labels)?;
            let kind = match kind {
                Kind::Stm => FeatureKind::Stm,
                Kind::Mel => FeatureKind::Mel,
            };
            let ds = pipeline::extract(&input, &entries, kind, &cfg, jobs)?;
            dataset::write_store(&out, &ds)
        }
        Command::Split {
            store,
            seed,
            out,
            config,
        } => {
            let cfg = RunConfig::load(config.as_deref())?;
            let ds = dataset::read_store(&store)?;
            let split = dataset::stratified_group_split(&ds.records, cfg.split_ratios, seed.unwrap_or(cfg.split_seed))?;
            split.write(&out)
        }
        Command::Undersample {
            store,
            class,
            cap,
            seed,
            out,
        } => {
            let mut ds = dataset::read_store(&store)?;
            ds.records = dataset::undersample(&ds.records, class, cap, seed);
            ds.config = Some(json!({
                "source": ds.config,
                "undersample": { "class": class, "cap": cap, "seed": seed },
            }));
            dataset::write_store(&out, &ds)
        }
        Command::Train {
            store,
            split,
            config,
            out,
        } => {
            let cfg = RunConfig::load(config.as_deref())?;
            let (ds, split) = (dataset::read_store(&store)?, Split::read(&split)?);
            let (fitted, echo) = pipeline::fit(&ds, &split, &Protocol::Fixed(cfg.arch.clone()), &cfg)?;
            log::info!("test macro-F1 {:.4}", fitted.report.f1_macro);
            pipeline::save_fitted(&out, &fitted, echo)
        }
        Command::Tune {
            store,
            split,
            budget,
            seed,
            config,
            out,
        } => {
            let mut cfg = RunConfig::load(config.as_deref())?;
            if let Some(b) = budget {
                cfg.budget = b;
            }
            if let Some(s) = seed {
                cfg.train.seed = s;
            }
            cfg.validate()?;
            let (ds, split) = (dataset::read_store(&store)?, Split::read(&split)?);
            let protocol = Protocol::Search {
                space: cfg.search.clone(),
                budget: cfg.budget,
            };
            let (fitted, echo) = pipeline::fit(&ds, &split, &protocol, &cfg)?;
            log::info!(
                "best validation macro-F1 {:.4}; test macro-F1 {:.4}",
                fitted.val_macro_f1,
                fitted.report.f1_macro
            );
            pipeline::save_fitted(&out, &fitted, echo)
        }
        Command::Eval {
            model,
            store,
            split,
            partition,
            out,
        } => {
            let m = pipeline::load_fitted(&model)?;
            let (ds, split) = (dataset::read_store(&store)?, Split::read(&split)?);
            let partition = match partition {
                PartitionArg::Train => Partition::Train,
                PartitionArg::Val => Partition::Val,
                PartitionArg::Test => Partition::Test,
            };
            let report = pipeline::evaluate_model(&m, &ds, &split, partition)?;
            log::info!("macro-F1 {:.4}", report.report.f1_macro);
            write_json(&out, &serde_json::to_value(&report)?)
        }
        Command::Ablate {
            store,
            split,
            cutoffs,
            mode,
            model,
            config,
            out,
        } => {
            let mut cfg = RunConfig::load(config.as_deref())?;
            let (ds, split) = (dataset::read_store(&store)?, Split::read(&split)?);
            let arch = match &model {
                Some(base) => {
                    let m = pipeline::load_fitted(base)?;
                    cfg.train.seed = m.header.seed;
                    ArchParams::from_arch(&m.header.arch)
                }
                None => cfg.arch.clone(),
            };
            let modes: &[AblationMode] = match mode {
                Mode::Lowpass => &[AblationMode::Lowpass],
                Mode::Highpass => &[AblationMode::Highpass],
                Mode::Both => &[AblationMode::Lowpass, AblationMode::Highpass],
            };
            let pairs = ablation::parse_cutoffs(&cutoffs)?;
            if pairs.is_empty() {
                return Err(Error::InvalidInput("no cutoffs given".into()));
            }
            let specs = modes
                .iter()
                .flat_map(|&m| pairs.iter().map(move |&(t, s)| AblationSpec::new(m, t, s)))
                .collect::<Result<Vec<_>>>()?;
            let protocol = Protocol::Fixed(arch.clone());
            let rows = ablation::sweep(&ds, &split, &specs, &protocol, cfg.pca_k, &cfg.train)?;
            fs::write(&out, ablation::sweep_csv(&rows))?;
            write_json(
                &out.with_extension("json"),
                &json!({
                    "rows": rows,
                    "arch": arch,
                    "run": cfg.to_value(),
                    "split_seed": split.seed,
                    "store": ds.config,
                }),
            )
        }
        Command::ExportMaps { store, out_dir } => {
            let ds = dataset::read_store(&store)?;
            let maps = pipeline::class_maps(&ds)?;
            let written = pipeline::write_class_maps(&out_dir, &maps)?;
            let files: Vec<String> = written
                .iter()
                .filter_map(|p| p.file_name().map(|n| n.to_string_lossy().into_owned()))
                .collect();
            write_json(&out_dir.join("maps.json"), &json!({ "files": files, "store": ds.config }))
        }
        Command::Synth { out, seed } => {
            let mut cfg = CorpusConfig::default();
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let entries = synth::write_corpus(&out, &cfg)?;
            log::info!("wrote {} clips to {}", entries.len(), out.display());
            write_json(&out.join("corpus.json"), &serde_json::to_value(&cfg)?)
        }
    }
}
