//! Rectangular lowpass/highpass masks over the STM grid and the sweep that
//! retrains and evaluates one model per mask.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Split};
use crate::error::{Error, Result};
use crate::experiment::{self, Protocol};
use crate::mlp::TrainConfig;
use crate::modulation::{StmGrid, SPECTRAL_STEP_CYC_OCT, TEMPORAL_STEP_HZ};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationMode {
    Lowpass,
    Highpass,
}

impl fmt::Display for AblationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AblationMode::Lowpass => "lowpass",
            AblationMode::Highpass => "highpass",
        })
    }
}

impl FromStr for AblationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lowpass" => Ok(AblationMode::Lowpass),
            "highpass" => Ok(AblationMode::Highpass),
            other => Err(Error::InvalidInput(format!("unknown ablation mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AblationSpec {
    pub mode: AblationMode,
    /// Hz, multiple of 0.25 in [0, 15].
    pub temporal_cutoff: f64,
    /// cyc/oct, multiple of 0.375 in [0, 7.125].
    pub spectral_cutoff: f64,
}

fn grid_steps(value: f64, step: f64, max: f64, what: &str) -> Result<usize> {
    let steps = value / step;
    if !(0.0..=max + 1e-9).contains(&value) || (steps - steps.round()).abs() > 1e-9 {
        return Err(Error::InvalidInput(format!(
            "{what} cutoff {value} is not a grid value (multiple of {step} in [0, {max}])"
        )));
    }
    Ok(steps.round() as usize)
}

impl AblationSpec {
    pub fn new(mode: AblationMode, temporal_cutoff: f64, spectral_cutoff: f64) -> Result<Self> {
        let spec = Self {
            mode,
            temporal_cutoff,
            spectral_cutoff,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        grid_steps(self.temporal_cutoff, TEMPORAL_STEP_HZ, 15.0, "temporal")?;
        grid_steps(self.spectral_cutoff, SPECTRAL_STEP_CYC_OCT, 7.125, "spectral")?;
        Ok(())
    }
}

/// Keep-mask over the temporal-major feature layout of `grid`.
///
/// Lowpass keeps `|ω| <= t && Ω <= s`; highpass keeps the complement.
pub fn mask(grid: &StmGrid, spec: &AblationSpec) -> Result<Vec<bool>> {
    let t_steps = grid_steps(spec.temporal_cutoff, TEMPORAL_STEP_HZ, 15.0, "temporal")? as i64;
    let s_steps = grid_steps(spec.spectral_cutoff, SPECTRAL_STEP_CYC_OCT, 7.125, "spectral")? as i64;
    let mut keep = Vec::with_capacity(grid.n_features());
    for &t in &grid.temporal_axis {
        let t_idx = (t / TEMPORAL_STEP_HZ).round() as i64;
        for &s in &grid.spectral_axis {
            let s_idx = (s / SPECTRAL_STEP_CYC_OCT).round() as i64;
            let inside = t_idx.abs() <= t_steps && s_idx <= s_steps;
            keep.push(match spec.mode {
                AblationMode::Lowpass => inside,
                AblationMode::Highpass => !inside,
            });
        }
    }
    Ok(keep)
}

/// Feature indices kept by `spec`, ascending.
pub fn kept_indices(grid: &StmGrid, spec: &AblationSpec) -> Result<Vec<usize>> {
    Ok(mask(grid, spec)?
        .into_iter()
        .enumerate()
        .filter(|(_, k)| *k)
        .map(|(i, _)| i)
        .collect())
}

/// Parses `t:s` pairs separated by commas or semicolons, e.g. `4:6,1:0.75`.
pub fn parse_cutoffs(text: &str) -> Result<Vec<(f64, f64)>> {
    text.split([',', ';'])
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|pair| {
            let (t, s) = pair
                .split_once(':')
                .ok_or_else(|| Error::InvalidInput(format!("cutoff {pair:?} is not of the form temporal:spectral")))?;
            let parse = |v: &str| {
                v.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::InvalidInput(format!("bad cutoff value {v:?}")))
            };
            Ok((parse(t)?, parse(s)?))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub spec: AblationSpec,
    pub n_features: usize,
    pub macro_f1: f64,
}

/// Retrains and evaluates one model per spec. PCA is refitted on the masked
/// training features each time.
pub fn sweep(
    ds: &Dataset,
    split: &Split,
    specs: &[AblationSpec],
    protocol: &Protocol,
    pca_k: usize,
    cfg: &TrainConfig,
) -> Result<Vec<SweepRow>> {
    let grid = StmGrid::default();
    if ds.n_features != grid.n_features() {
        return Err(Error::shape(grid.n_features(), ds.n_features));
    }
    specs
        .iter()
        .map(|spec| {
            let keep = kept_indices(&grid, spec)?;
            if keep.len() < 2 {
                return Err(Error::InvalidInput(format!("{spec:?} keeps fewer than 2 features")));
            }
            let fitted = experiment::fit_evaluate(ds, split, Some(&keep), pca_k, protocol, cfg)?;
            log::info!(
                "{} ({}, {}): {} features -> test macro-F1 {:.4}",
                spec.mode,
                spec.temporal_cutoff,
                spec.spectral_cutoff,
                keep.len(),
                fitted.report.f1_macro
            );
            Ok(SweepRow {
                spec: *spec,
                n_features: keep.len(),
                macro_f1: fitted.report.f1_macro,
            })
        })
        .collect()
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("mode,temporal_cutoff,spectral_cutoff,n_features,macro_f1\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.spec.mode, r.spec.temporal_cutoff, r.spec.spectral_cutoff, r.n_features, r.macro_f1
        ));
    }
    out
}
