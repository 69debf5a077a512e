//! Labeled feature records, the on-disk feature store, grouped stratified
//! splitting and class undersampling.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::modulation::StmGrid;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassLabel {
    NontonalSpeech,
    TonalSpeech,
    VocalMusic,
    NonvocalMusic,
    UrbanEnv,
    WildlifeEnv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SuperClass {
    Speech,
    Music,
    Env,
}

impl ClassLabel {
    pub const ALL: [ClassLabel; 6] = [
        ClassLabel::NontonalSpeech,
        ClassLabel::TonalSpeech,
        ClassLabel::VocalMusic,
        ClassLabel::NonvocalMusic,
        ClassLabel::UrbanEnv,
        ClassLabel::WildlifeEnv,
    ];
    pub const COUNT: usize = 6;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ClassLabel::NontonalSpeech => "nontonal_speech",
            ClassLabel::TonalSpeech => "tonal_speech",
            ClassLabel::VocalMusic => "vocal_music",
            ClassLabel::NonvocalMusic => "nonvocal_music",
            ClassLabel::UrbanEnv => "urban_env",
            ClassLabel::WildlifeEnv => "wildlife_env",
        }
    }

    pub fn superclass(self) -> SuperClass {
        match self {
            ClassLabel::NontonalSpeech | ClassLabel::TonalSpeech => SuperClass::Speech,
            ClassLabel::VocalMusic | ClassLabel::NonvocalMusic => SuperClass::Music,
            ClassLabel::UrbanEnv | ClassLabel::WildlifeEnv => SuperClass::Env,
        }
    }
}

impl fmt::Display for ClassLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ClassLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|c| c.as_str() == s.trim())
            .ok_or_else(|| Error::InvalidInput(format!("unknown class label {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    Stm,
    Mel,
}

impl FromStr for FeatureKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "stm" => Ok(FeatureKind::Stm),
            "mel" => Ok(FeatureKind::Mel),
            other => Err(Error::InvalidInput(format!("unknown feature kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub id: String,
    pub source_path: String,
    pub label: ClassLabel,
    pub group: String,
    pub features: Vec<f32>,
    pub n_chunks: usize,
}

/// One row of a labels CSV (`path,label,group`). Relative paths are resolved
/// against the audio input directory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelEntry {
    pub path: String,
    pub label: ClassLabel,
    pub group: String,
}

pub fn read_labels(path: impl AsRef<Path>) -> Result<Vec<LabelEntry>> {
    let path = path.as_ref();
    let bad = |e: csv::Error| Error::InvalidInput(format!("labels CSV {}: {e}", path.display()));
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path).map_err(bad)?;
    let headers = reader.headers().map_err(bad)?.clone();
    if headers.iter().collect::<Vec<_>>() != ["path", "label", "group"] {
        return Err(Error::InvalidInput(format!(
            "labels CSV {} must have columns path,label,group",
            path.display()
        )));
    }
    reader.deserialize().map(|row| row.map_err(bad)).collect()
}

pub fn write_labels(path: impl AsRef<Path>, entries: &[LabelEntry]) -> Result<()> {
    let mut writer = csv::Writer::from_path(path.as_ref()).map_err(|e| Error::InvalidInput(e.to_string()))?;
    for e in entries {
        writer.serialize(e).map_err(|e| Error::InvalidInput(e.to_string()))?;
    }
    writer.flush()?;
    Ok(())
}

/// In-memory feature store: fixed-width records of one feature kind.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub kind: FeatureKind,
    pub n_features: usize,
    pub records: Vec<Record>,
    /// Resolved configuration that produced the features, echoed to disk.
    pub config: Option<serde_json::Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ManifestRecord {
    id: String,
    source_path: String,
    label: ClassLabel,
    group: String,
    n_chunks: usize,
    row_index: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    feature_kind: FeatureKind,
    n_samples: usize,
    n_features: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    grid: Option<StmGrid>,
    records: Vec<ManifestRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    config: Option<serde_json::Value>,
}

impl Dataset {
    pub fn new(kind: FeatureKind, n_features: usize) -> Self {
        Self {
            kind,
            n_features,
            records: Vec::new(),
            config: None,
        }
    }

    pub fn push(&mut self, record: Record) -> Result<()> {
        if record.features.len() != self.n_features {
            return Err(Error::shape(self.n_features, record.features.len()));
        }
        if record.group.is_empty() {
            return Err(Error::InvalidInput(format!("record {} has an empty group", record.id)));
        }
        self.records.push(record);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn labels(&self) -> Vec<ClassLabel> {
        self.records.iter().map(|r| r.label).collect()
    }

    /// Same store restricted to the given record indices, in that order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            kind: self.kind,
            n_features: self.n_features,
            records: indices.iter().map(|&i| self.records[i].clone()).collect(),
            config: self.config.clone(),
        }
    }
}

/// `<base>.f32` and `<base>.manifest.json` for a store base path.
pub fn store_paths(base: &Path) -> (PathBuf, PathBuf) {
    let name = base.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let blob = base.with_file_name(format!("{name}.f32"));
    let manifest = base.with_file_name(format!("{name}.manifest.json"));
    (blob, manifest)
}

pub fn write_store(base: impl AsRef<Path>, ds: &Dataset) -> Result<()> {
    let (blob_path, manifest_path) = store_paths(base.as_ref());
    let mut blob = BufWriter::new(fs::File::create(&blob_path)?);
    for r in &ds.records {
        if r.features.len() != ds.n_features {
            return Err(Error::Store(format!("record {} has {} features, store declares {}", r.id, r.features.len(), ds.n_features)));
        }
        for v in &r.features {
            blob.write_all(&v.to_le_bytes())?;
        }
    }
    blob.flush()?;

    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        feature_kind: ds.kind,
        n_samples: ds.records.len(),
        n_features: ds.n_features,
        grid: (ds.kind == FeatureKind::Stm).then(StmGrid::default),
        records: ds
            .records
            .iter()
            .enumerate()
            .map(|(row_index, r)| ManifestRecord {
                id: r.id.clone(),
                source_path: r.source_path.clone(),
                label: r.label,
                group: r.group.clone(),
                n_chunks: r.n_chunks,
                row_index,
            })
            .collect(),
        config: ds.config.clone(),
    };
    fs::write(&manifest_path, serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(())
}

pub fn read_store(base: impl AsRef<Path>) -> Result<Dataset> {
    let (blob_path, manifest_path) = store_paths(base.as_ref());
    let text = fs::read_to_string(&manifest_path)?;
    let manifest: Manifest = serde_json::from_str(&text)
        .map_err(|e| Error::Store(format!("corrupted manifest {}: {e}", manifest_path.display())))?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(Error::Store(format!(
            "unsupported format_version {} (expected {FORMAT_VERSION})",
            manifest.format_version
        )));
    }
    if manifest.records.len() != manifest.n_samples {
        return Err(Error::Store(format!(
            "manifest lists {} records but n_samples = {}",
            manifest.records.len(),
            manifest.n_samples
        )));
    }
    let mut bytes = Vec::new();
    fs::File::open(&blob_path)?.read_to_end(&mut bytes)?;
    let expected = manifest.n_samples * manifest.n_features * 4;
    if bytes.len() != expected {
        return Err(Error::Store(format!(
            "blob has {} bytes, manifest implies {expected} ({} x {} f32)",
            bytes.len(),
            manifest.n_samples,
            manifest.n_features
        )));
    }
    let values: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    let width = manifest.n_features;
    let records = manifest
        .records
        .into_iter()
        .map(|m| {
            if m.row_index >= manifest.n_samples {
                return Err(Error::Store(format!("row_index {} out of range", m.row_index)));
            }
            Ok(Record {
                features: values[m.row_index * width..(m.row_index + 1) * width].to_vec(),
                id: m.id,
                source_path: m.source_path,
                label: m.label,
                group: m.group,
                n_chunks: m.n_chunks,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        kind: manifest.feature_kind,
        n_features: width,
        records,
        config: manifest.config,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Partition {
    Train,
    Val,
    Test,
}

impl Partition {
    pub const ALL: [Partition; 3] = [Partition::Train, Partition::Val, Partition::Test];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub seed: u64,
    pub ratios: [f64; 3],
    pub assignment: BTreeMap<String, Partition>,
}

pub const DEFAULT_RATIOS: [f64; 3] = [0.8, 0.1, 0.1];

impl Split {
    /// Record indices of `ds` in partition `p`, in store order.
    pub fn indices(&self, ds: &Dataset, p: Partition) -> Result<Vec<usize>> {
        let mut out = Vec::new();
        for (i, r) in ds.records.iter().enumerate() {
            match self.assignment.get(&r.id) {
                Some(&q) if q == p => out.push(i),
                Some(_) => {}
                None => return Err(Error::InvalidInput(format!("record {} missing from split", r.id))),
            }
        }
        Ok(out)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }
}

/// Greedy grouped stratification.
///
/// Groups are shuffled with `seed`, stably sorted by descending size, and each
/// is placed in the partition whose squared deficit, summed over classes plus
/// the partition total and divided by the partition ratio, decreases the most.
/// Ties go to the earlier partition.
pub fn stratified_group_split(records: &[Record], ratios: [f64; 3], seed: u64) -> Result<Split> {
    let labels: Vec<(&str, &str, ClassLabel)> = records
        .iter()
        .map(|r| (r.id.as_str(), r.group.as_str(), r.label))
        .collect();
    split_labels(&labels, ratios, seed)
}

/// Same as [`stratified_group_split`] over bare `(id, group, label)` triples.
pub fn split_labels(items: &[(&str, &str, ClassLabel)], ratios: [f64; 3], seed: u64) -> Result<Split> {
    let sum: f64 = ratios.iter().sum();
    if (sum - 1.0).abs() > 1e-9 || ratios.iter().any(|&r| !(r > 0.0)) {
        return Err(Error::InvalidInput(format!("split ratios must be positive and sum to 1, got {ratios:?}")));
    }
    let mut ids_seen = HashMap::new();
    let mut group_members: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, (id, group, _)) in items.iter().enumerate() {
        if group.is_empty() {
            return Err(Error::InvalidInput(format!("record {id} has no group")));
        }
        if ids_seen.insert(*id, i).is_some() {
            return Err(Error::InvalidInput(format!("duplicate record id {id}")));
        }
        group_members.entry(group).or_default().push(i);
    }

    let mut totals = [0.0f64; ClassLabel::COUNT];
    for (_, _, label) in items {
        totals[label.index()] += 1.0;
    }
    let n = items.len();
    if let Some((g, m)) = group_members.iter().find(|(_, m)| m.len() as f64 > 0.8 * n as f64) {
        log::warn!("group {g} holds {} of {n} records; split ratios are unattainable", m.len());
    }

    let mut groups: Vec<(&str, Vec<usize>)> = group_members.into_iter().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    groups.shuffle(&mut rng);
    groups.sort_by_key(|g| std::cmp::Reverse(g.1.len()));

    let mut current = [[0.0f64; ClassLabel::COUNT]; 3];
    let mut assignment = BTreeMap::new();
    for (_, members) in &groups {
        let mut counts = [0.0f64; ClassLabel::COUNT];
        for &i in members {
            counts[items[i].2.index()] += 1.0;
        }
        let size = members.len() as f64;
        let mut best = (0usize, f64::INFINITY);
        for (p, &ratio) in ratios.iter().enumerate() {
            let gain = |deficit: f64, added: f64| (deficit - added).powi(2) - deficit.powi(2);
            let per_class: f64 = (0..ClassLabel::COUNT)
                .map(|c| gain(ratio * totals[c] - current[p][c], counts[c]))
                .sum();
            let overall = gain(ratio * n as f64 - current[p].iter().sum::<f64>(), size);
            let delta = (per_class + overall) / ratio;
            if delta < best.1 {
                best = (p, delta);
            }
        }
        let p = best.0;
        for c in 0..ClassLabel::COUNT {
            current[p][c] += counts[c];
        }
        for &i in members {
            assignment.insert(items[i].0.to_string(), Partition::ALL[p]);
        }
    }
    Ok(Split {
        seed,
        ratios,
        assignment,
    })
}

/// Caps one class at `cap` records by seeded uniform sampling; other classes
/// and the relative order of retained records are untouched.
pub fn undersample(records: &[Record], label: ClassLabel, cap: usize, seed: u64) -> Vec<Record> {
    let members: Vec<usize> = records
        .iter()
        .enumerate()
        .filter(|(_, r)| r.label == label)
        .map(|(i, _)| i)
        .collect();
    if members.len() <= cap {
        return records.to_vec();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keep = vec![true; records.len()];
    for &i in &members {
        keep[i] = false;
    }
    for i in rand::seq::index::sample(&mut rng, members.len(), cap) {
        keep[members[i]] = true;
    }
    records
        .iter()
        .zip(keep)
        .filter(|(_, k)| *k)
        .map(|(r, _)| r.clone())
        .collect()
}
