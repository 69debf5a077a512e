//! Run configuration and the file-level steps shared by the command line
//! and the end-to-end tests: extraction into a store, model artifacts,
//! evaluation reports and class maps.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::audio_io::SegmenterConfig;
use crate::baseline_features::{MelConfig, MelExtractor};
use crate::cochleagram::{make_filterbank, DEFAULT_BANDS, DEFAULT_ENV_RATE};
use crate::dataset::{ClassLabel, Dataset, FeatureKind, LabelEntry, Partition, Record, Split, DEFAULT_RATIOS};
use crate::error::{Error, Result};
use crate::experiment::{self, ArchParams, Fitted, Protocol};
use crate::metrics::{self, EvalReport};
use crate::mlp::{self, Mlp, ModelHeader, SearchSpace, TrainConfig};
use crate::modulation::{prepare_chunks, ChunkFeatures, StmExtractor, StmGrid};
use crate::pca::{PcaModel, DEFAULT_COMPONENTS};

pub const DEFAULT_BUDGET: usize = 20;

/// Every tunable of a run. Unknown keys are rejected when parsing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub segmenter: SegmenterConfig,
    pub n_bands: usize,
    pub env_rate: u32,
    pub mel: MelConfig,
    pub pca_k: usize,
    pub train: TrainConfig,
    /// Architecture used by fixed-configuration training.
    pub arch: ArchParams,
    pub search: SearchSpace,
    pub budget: usize,
    pub split_seed: u64,
    pub split_ratios: [f64; 3],
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            segmenter: SegmenterConfig::default(),
            n_bands: DEFAULT_BANDS,
            env_rate: DEFAULT_ENV_RATE,
            mel: MelConfig::default(),
            pca_k: DEFAULT_COMPONENTS,
            train: TrainConfig::default(),
            arch: ArchParams::default(),
            search: SearchSpace::default(),
            budget: DEFAULT_BUDGET,
            split_seed: 0,
            split_ratios: DEFAULT_RATIOS,
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads `path`, or returns the defaults when `path` is `None`.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            Some(p) => Self::from_json(&fs::read_to_string(p)?),
            None => Ok(Self::default()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.segmenter.validate()?;
        self.mel.validate()?;
        self.train.validate()?;
        self.search.validate()?;
        if self.pca_k == 0 || self.budget == 0 || self.n_bands < 2 {
            return Err(Error::Config("pca_k, budget and n_bands must be positive".into()));
        }
        if self.mel.sample_rate != self.segmenter.target_rate {
            return Err(Error::Config(format!(
                "mel sample_rate {} differs from segmenter target_rate {}",
                self.mel.sample_rate, self.segmenter.target_rate
            )));
        }
        Ok(())
    }

    pub fn to_value(&self) -> Value {
        serde_json::to_value(self).expect("config serializes")
    }
}

enum Extractor {
    Stm(StmExtractor),
    Mel(MelExtractor),
}

impl Extractor {
    fn as_dyn(&self) -> &(dyn ChunkFeatures + Sync) {
        match self {
            Extractor::Stm(e) => e,
            Extractor::Mel(e) => e,
        }
    }
}

/// Extracts one record per label entry, resolving relative paths against
/// `input_dir`, using up to `jobs` worker threads. Files that fail are
/// logged and skipped; records keep the label-file order.
pub fn extract(input_dir: &Path, entries: &[LabelEntry], kind: FeatureKind, cfg: &RunConfig, jobs: usize) -> Result<Dataset> {
    cfg.validate()?;
    let extractor = match kind {
        FeatureKind::Stm => Extractor::Stm(StmExtractor::new(make_filterbank(cfg.n_bands)?, &cfg.segmenter, cfg.env_rate)?),
        FeatureKind::Mel => Extractor::Mel(MelExtractor::new(cfg.mel.clone(), cfg.segmenter.chunk_len())?),
    };
    let ex = extractor.as_dyn();

    let next = AtomicUsize::new(0);
    let results: Vec<Mutex<Option<Result<Record>>>> = entries.iter().map(|_| Mutex::new(None)).collect();
    let work = || loop {
        let i = next.fetch_add(1, Ordering::Relaxed);
        let Some(entry) = entries.get(i) else { break };
        let path = resolve(input_dir, &entry.path);
        let rec = prepare_chunks(&path, &cfg.segmenter)
            .and_then(|chunks| ex.recording_features(&chunks))
            .map(|f| Record {
                id: entry.path.clone(),
                source_path: entry.path.clone(),
                label: entry.label,
                group: entry.group.clone(),
                features: f.features.iter().map(|&v| v as f32).collect(),
                n_chunks: f.n_chunks,
            });
        *results[i].lock().expect("worker panicked") = Some(rec);
    };
    std::thread::scope(|s| {
        for _ in 1..jobs.max(1).min(entries.len().max(1)) {
            s.spawn(work);
        }
        work();
    });

    let mut ds = Dataset::new(kind, ex.width());
    ds.config = Some(extraction_echo(kind, cfg));
    let mut failed = 0;
    for (entry, slot) in entries.iter().zip(results) {
        match slot.into_inner().expect("worker panicked").expect("every entry processed") {
            Ok(rec) => ds.push(rec)?,
            Err(e) => {
                failed += 1;
                log::warn!("skipping {}: {e}", entry.path);
            }
        }
    }
    if ds.is_empty() && !entries.is_empty() {
        return Err(Error::InvalidInput(format!("all {failed} input files failed")));
    }
    log::info!("extracted {} of {} files ({failed} skipped)", ds.len(), entries.len());
    Ok(ds)
}

fn resolve(dir: &Path, path: &str) -> PathBuf {
    let p = Path::new(path);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        dir.join(p)
    }
}

/// The part of the run config that determines extracted features.
fn extraction_echo(kind: FeatureKind, cfg: &RunConfig) -> Value {
    match kind {
        FeatureKind::Stm => json!({
            "feature_kind": kind,
            "segmenter": cfg.segmenter,
            "n_bands": cfg.n_bands,
            "env_rate": cfg.env_rate,
        }),
        FeatureKind::Mel => json!({
            "feature_kind": kind,
            "segmenter": cfg.segmenter,
            "mel": cfg.mel,
        }),
    }
}

/// Writes `<base>.json`/`<base>.f32` (model), `<base>.pca.*`, and training
/// histories plus search trials next to them.
pub fn save_fitted(base: &Path, fitted: &Fitted, echo: Value) -> Result<()> {
    let header = ModelHeader {
        arch: fitted.arch.clone(),
        seed: fitted.seed,
        metrics: json!({
            "epochs": fitted.epochs,
            "val_macro_f1": fitted.val_macro_f1,
            "test": fitted.report,
        }),
        classes: experiment::class_names(&fitted.classes),
        feature_mask: fitted.features.clone(),
        config: echo,
    };
    mlp::save_model(base, &fitted.model, &header)?;
    fitted.pca.save(base)?;
    let name = base.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    fs::write(
        base.with_file_name(format!("{name}.selection.csv")),
        mlp::history_csv(&fitted.selection_history),
    )?;
    fs::write(base.with_file_name(format!("{name}.final.csv")), mlp::history_csv(&fitted.final_history))?;
    if !fitted.trials.is_empty() {
        fs::write(
            base.with_file_name(format!("{name}.trials.json")),
            serde_json::to_string_pretty(&fitted.trials)? + "\n",
        )?;
    }
    Ok(())
}

pub struct LoadedModel {
    pub model: Mlp,
    pub pca: PcaModel,
    pub header: ModelHeader,
    pub classes: Vec<ClassLabel>,
}

pub fn load_fitted(base: &Path) -> Result<LoadedModel> {
    let (model, header) = mlp::load_model(base)?;
    let pca = PcaModel::load(base)?;
    let classes = header.classes.iter().map(|c| c.parse()).collect::<Result<Vec<ClassLabel>>>()?;
    if classes.len() != model.arch.output_dim || pca.k() != model.arch.input_dim {
        return Err(Error::Store("model, PCA and class list disagree in shape".into()));
    }
    Ok(LoadedModel {
        model,
        pca,
        header,
        classes,
    })
}

/// Evaluation report on one partition with the model's config echoed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOutput {
    pub partition: Partition,
    pub split_seed: u64,
    pub report: EvalReport,
    pub model_seed: u64,
    pub config: Value,
}

pub fn evaluate_model(m: &LoadedModel, ds: &Dataset, split: &Split, partition: Partition) -> Result<EvalOutput> {
    let rows = split.indices(ds, partition)?;
    if rows.is_empty() {
        return Err(Error::InvalidInput(format!("{partition:?} partition is empty")));
    }
    let report = experiment::evaluate(&m.model, &m.pca, &m.classes, m.header.feature_mask.as_deref(), ds, &rows)?;
    Ok(EvalOutput {
        partition,
        split_seed: split.seed,
        report,
        model_seed: m.header.seed,
        config: m.header.config.clone(),
    })
}

/// Fits with `protocol` and returns the fitted model plus its config echo.
pub fn fit(ds: &Dataset, split: &Split, protocol: &Protocol, cfg: &RunConfig) -> Result<(Fitted, Value)> {
    let fitted = experiment::fit_evaluate(ds, split, None, cfg.pca_k, protocol, &cfg.train)?;
    let protocol_echo = match protocol {
        Protocol::Fixed(a) => json!({ "fixed": a }),
        Protocol::Search { space, budget } => json!({ "search": { "space": space, "budget": budget } }),
    };
    let echo = json!({
        "run": cfg.to_value(),
        "protocol": protocol_echo,
        "split_seed": split.seed,
        "store": ds.config,
    });
    Ok((fitted, echo))
}

pub const SUBCLASS_PAIRS: [(ClassLabel, ClassLabel); 3] = [
    (ClassLabel::TonalSpeech, ClassLabel::NontonalSpeech),
    (ClassLabel::VocalMusic, ClassLabel::NonvocalMusic),
    (ClassLabel::UrbanEnv, ClassLabel::WildlifeEnv),
];

pub struct ClassMaps {
    /// Mean normalized STM per class present in the store.
    pub means: Vec<(ClassLabel, Vec<f64>)>,
    /// Cohen's d per subclass pair with at least two records on each side.
    pub effects: Vec<((ClassLabel, ClassLabel), Vec<f64>)>,
}

pub fn class_maps(ds: &Dataset) -> Result<ClassMaps> {
    let grid = StmGrid::default();
    if ds.kind != FeatureKind::Stm || ds.n_features != grid.n_features() {
        return Err(Error::InvalidInput("class maps need an STM store".into()));
    }
    let rows: Vec<Vec<f64>> = ds
        .records
        .iter()
        .map(|r| r.features.iter().map(|&v| v as f64).collect())
        .collect();
    let of = |label: ClassLabel| -> Vec<&[f64]> {
        ds.records
            .iter()
            .zip(&rows)
            .filter(|(r, _)| r.label == label)
            .map(|(_, v)| v.as_slice())
            .collect()
    };
    let means = experiment::label_space(ds)
        .into_iter()
        .map(|c| (c, crate::modulation::mean_rows(&of(c))))
        .collect();
    let mut effects = Vec::new();
    for (a, b) in SUBCLASS_PAIRS {
        let (ra, rb) = (of(a), of(b));
        if ra.len() >= 2 && rb.len() >= 2 {
            effects.push(((a, b), metrics::cohens_d(&ra, &rb)?));
        } else {
            log::info!("skipping Cohen's d for {a} vs {b}: fewer than 2 records on a side");
        }
    }
    Ok(ClassMaps { means, effects })
}

/// Writes `mean_<class>.csv` and `cohens_d_<a>_vs_<b>.csv` grids into `dir`.
pub fn write_class_maps(dir: &Path, maps: &ClassMaps) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let grid = StmGrid::default();
    let mut written = Vec::new();
    for (c, values) in &maps.means {
        let path = dir.join(format!("mean_{c}.csv"));
        fs::write(&path, metrics::grid_csv(&grid, values)?)?;
        written.push(path);
    }
    for ((a, b), values) in &maps.effects {
        let path = dir.join(format!("cohens_d_{a}_vs_{b}.csv"));
        fs::write(&path, metrics::grid_csv(&grid, values)?)?;
        written.push(path);
    }
    Ok(written)
}
