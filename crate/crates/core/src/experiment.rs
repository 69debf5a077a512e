//! End-to-end training protocol over a feature store and split:
//! PCA on training rows, model selection on validation, a final fit on
//! train+validation and a test-set report.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dataset::{ClassLabel, Dataset, Partition, Split};
use crate::error::{Error, Result};
use crate::metrics::{self, EvalReport};
use crate::mlp::{self, EpochStats, Mlp, MlpArch, RandomSearch, Samples, SearchSpace, TrainConfig, TrialRecord};
use crate::pca::{self, PcaModel};

/// Architecture and optimizer settings independent of data dimensions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArchParams {
    pub hidden_units: Vec<usize>,
    pub l1: f64,
    pub dropout_rate: f64,
    pub learning_rate: f64,
}

impl Default for ArchParams {
    fn default() -> Self {
        Self {
            hidden_units: vec![256, 128],
            l1: 1e-9,
            dropout_rate: 0.05,
            learning_rate: 1e-4,
        }
    }
}

impl ArchParams {
    pub fn to_arch(&self, input_dim: usize, output_dim: usize) -> MlpArch {
        MlpArch {
            input_dim,
            hidden_units: self.hidden_units.clone(),
            output_dim,
            l1: self.l1,
            dropout_rate: self.dropout_rate,
            learning_rate: self.learning_rate,
        }
    }

    pub fn from_arch(arch: &MlpArch) -> Self {
        Self {
            hidden_units: arch.hidden_units.clone(),
            l1: arch.l1,
            dropout_rate: arch.dropout_rate,
            learning_rate: arch.learning_rate,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Protocol {
    Fixed(ArchParams),
    Search { space: SearchSpace, budget: usize },
}

/// Classes present anywhere in the store, in canonical label order. Model
/// outputs and metrics are indexed over this list.
pub fn label_space(ds: &Dataset) -> Vec<ClassLabel> {
    let mut present = [false; ClassLabel::COUNT];
    for r in &ds.records {
        present[r.label.index()] = true;
    }
    ClassLabel::ALL.into_iter().filter(|c| present[c.index()]).collect()
}

pub fn class_names(classes: &[ClassLabel]) -> Vec<String> {
    classes.iter().map(|c| c.to_string()).collect()
}

fn targets(ds: &Dataset, rows: &[usize], classes: &[ClassLabel]) -> Result<Vec<usize>> {
    rows.iter()
        .map(|&i| {
            let label = ds.records[i].label;
            classes
                .iter()
                .position(|&c| c == label)
                .ok_or_else(|| Error::InvalidInput(format!("label {label} not in the model's classes")))
        })
        .collect()
}

/// Rows of the store as an `n x d` matrix, optionally restricted to
/// `features` (in the given order).
pub fn design_matrix(ds: &Dataset, rows: &[usize], features: Option<&[usize]>) -> DMatrix<f64> {
    match features {
        Some(cols) => DMatrix::from_fn(rows.len(), cols.len(), |r, c| ds.records[rows[r]].features[cols[c]] as f64),
        None => DMatrix::from_fn(rows.len(), ds.n_features, |r, c| ds.records[rows[r]].features[c] as f64),
    }
}

fn samples(ds: &Dataset, rows: &[usize], features: Option<&[usize]>, pca: &PcaModel, classes: &[ClassLabel]) -> Result<Samples> {
    let x = pca.transform(&design_matrix(ds, rows, features))?;
    Samples::new(x, targets(ds, rows, classes)?)
}

#[derive(Debug, Clone)]
pub struct Fitted {
    pub arch: MlpArch,
    /// Final model, parameters rounded to `f32` as persisted.
    pub model: Mlp,
    /// PCA fitted on train+validation rows, rounded to `f32`.
    pub pca: PcaModel,
    pub classes: Vec<ClassLabel>,
    pub features: Option<Vec<usize>>,
    pub seed: u64,
    /// Epoch count chosen on validation and reused for the final fit.
    pub epochs: usize,
    pub val_macro_f1: f64,
    pub trials: Vec<TrialRecord>,
    /// Early-stopped run on the training partition that picked `epochs`.
    pub selection_history: Vec<EpochStats>,
    pub final_history: Vec<EpochStats>,
    pub report: EvalReport,
}

/// Runs the full protocol and evaluates on the test partition.
///
/// PCA is fitted on the training rows and a model is selected (fixed
/// architecture or search) with early stopping on validation. PCA and the
/// selected architecture are then refitted on train+validation for the
/// selected epoch count and scored on the test rows.
pub fn fit_evaluate(
    ds: &Dataset,
    split: &Split,
    features: Option<&[usize]>,
    pca_k: usize,
    protocol: &Protocol,
    cfg: &TrainConfig,
) -> Result<Fitted> {
    let classes = label_space(ds);
    if classes.len() < 2 {
        return Err(Error::InvalidInput("need at least two classes to train".into()));
    }
    let train_rows = split.indices(ds, Partition::Train)?;
    let val_rows = split.indices(ds, Partition::Val)?;
    let test_rows = split.indices(ds, Partition::Test)?;
    for (rows, name) in [(&train_rows, "train"), (&val_rows, "validation"), (&test_rows, "test")] {
        if rows.is_empty() {
            return Err(Error::InvalidInput(format!("{name} partition is empty")));
        }
    }

    let pca_sel = pca::fit(&design_matrix(ds, &train_rows, features), pca_k)?.round_to_f32();
    let train_set = samples(ds, &train_rows, features, &pca_sel, &classes)?;
    let val_set = samples(ds, &val_rows, features, &pca_sel, &classes)?;
    let input_dim = pca_sel.k();

    let (arch, seed, epochs, val_f1, trials, selection_history) = match protocol {
        Protocol::Fixed(params) => {
            let arch = params.to_arch(input_dim, classes.len());
            let out = mlp::train(Mlp::new(arch.clone(), cfg.seed)?, &train_set, &val_set, cfg)?;
            (arch, cfg.seed, out.best_epoch, out.best_val_macro_f1.unwrap_or(0.0), Vec::new(), out.history)
        }
        Protocol::Search { space, budget } => {
            space.validate()?;
            let mut strategy = RandomSearch::new(space.clone(), cfg.seed);
            let out = mlp::hyperparameter_search(&mut strategy, *budget, &train_set, &val_set, cfg, classes.len())?;
            let best = out.best_trial().clone();
            let seed = best.seed;
            let history = out.best_history;
            (best.arch, seed, best.best_epoch, best.val_macro_f1, out.trials, history)
        }
    };

    let mut merged_rows = train_rows.clone();
    merged_rows.extend(&val_rows);
    let pca_final = pca::fit(&design_matrix(ds, &merged_rows, features), pca_k)?.round_to_f32();
    let merged = samples(ds, &merged_rows, features, &pca_final, &classes)?;
    let final_arch = MlpArch {
        input_dim: pca_final.k(),
        ..arch
    };
    let final_cfg = TrainConfig { seed, ..cfg.clone() };
    let out = mlp::train_epochs(Mlp::new(final_arch.clone(), seed)?, &merged, epochs, &final_cfg)?;
    let model = out.model.round_to_f32();

    let report = evaluate(&model, &pca_final, &classes, features, ds, &test_rows)?;
    Ok(Fitted {
        arch: final_arch,
        model,
        pca: pca_final,
        classes,
        features: features.map(<[usize]>::to_vec),
        seed,
        epochs,
        val_macro_f1: val_f1,
        trials,
        selection_history,
        final_history: out.history,
        report,
    })
}

/// Scores `rows` of the store with a fitted PCA + model.
pub fn evaluate(
    model: &Mlp,
    pca: &PcaModel,
    classes: &[ClassLabel],
    features: Option<&[usize]>,
    ds: &Dataset,
    rows: &[usize],
) -> Result<EvalReport> {
    let set = samples(ds, rows, features, pca, classes)?;
    let probs = model.forward(&set.x)?;
    let scores: Vec<Vec<f64>> = probs.row_iter().map(|r| r.iter().copied().collect()).collect();
    metrics::evaluate(&set.y, &scores, &class_names(classes))
}
