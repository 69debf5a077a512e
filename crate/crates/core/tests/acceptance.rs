//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits nonzero if any fails.

use std::fs;
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stm_core::ablation::{self, AblationMode, AblationSpec};
use stm_core::audio_io::{write_wav_i16, SegmenterConfig, Waveform};
use stm_core::cochleagram::{center_frequency, Cochleagram, Filterbank};
use stm_core::dataset::{self, split_labels, ClassLabel, Dataset, FeatureKind, Partition, Split, DEFAULT_RATIOS};
use stm_core::experiment::{ArchParams, Protocol};
use stm_core::metrics::{cohens_d, roc_auc};
use stm_core::mlp::{focal_loss, Mlp, MlpArch, TrainConfig};
use stm_core::modulation::{extract_file, power_spectrum_2d, stm, StmGrid, N_FEATURES, TEMPORAL_BINS};
use stm_core::pipeline::{self, RunConfig};
use stm_core::synth::{self, am_noise, ripple_noise, CorpusConfig};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn argmax(v: impl Iterator<Item = (usize, f64)>) -> usize {
    v.max_by(|a, b| a.1.total_cmp(&b.1)).unwrap().0
}

fn filterbank_exactness() -> Outcome {
    let fb = Filterbank::default();
    let ratio = 2f64.powf(1.0 / 24.0);
    let worst = fb
        .center_freqs
        .windows(2)
        .map(|w| (w[1] / w[0] / ratio - 1.0).abs())
        .fold(0.0, f64::max);
    let pass = center_frequency(32) == 440.0 && center_frequency(128) == 7040.0 && worst <= 1e-12;
    outcome(
        pass,
        format!(
            "CF_32 {} Hz, CF_128 {} Hz, worst ratio error {worst:.1e}",
            center_frequency(32),
            center_frequency(128)
        ),
    )
}

fn stm_of(dir: &Path, name: &str, w: &Waveform) -> Vec<f64> {
    let path = dir.join(name);
    write_wav_i16(&path, w).unwrap();
    extract_file(&path, &SegmenterConfig::default(), &Filterbank::default())
        .unwrap()
        .features
}

fn modulation_peaks() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let grid = StmGrid::default();
    let mut found = Vec::new();
    let mut pass = true;
    for (i, rate) in [2.0, 4.0, 8.0].into_iter().enumerate() {
        let f = stm_of(dir.path(), "am.wav", &am_noise(rate, 0.8, 4.0, 16000, 100 + i as u64).unwrap());
        pass &= f.len() == N_FEATURES;
        let best = argmax((0..N_FEATURES).filter(|&k| k / 20 != TEMPORAL_BINS / 2).map(|k| (k, f[k])));
        let got = grid.temporal_axis[best / 20];
        pass &= got.abs() == rate;
        found.push(format!("{rate} Hz -> {got}"));
    }
    for (i, density) in [1.5, 3.0, 6.0].into_iter().enumerate() {
        let f = stm_of(dir.path(), "ripple.wav", &ripple_noise(density, 10.0, 4.0, 16000, 200 + i as u64).unwrap());
        let best = argmax((0..N_FEATURES).filter(|&k| k % 20 != 0).map(|k| (k, f[k])));
        let got = grid.spectral_axis[best % 20];
        let nearest = grid.spectral_axis[argmax(grid.spectral_axis.iter().map(|&s| -(s - density).abs()).enumerate())];
        pass &= got == nearest;
        found.push(format!("{density} cyc/oct -> {got}"));
    }
    outcome(pass, found.join(", "))
}

fn fft_invariants() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (nb, nf) = (128usize, 400usize);
    let (mut sym, mut parseval, mut flip) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..20 {
        let values: Vec<f64> = (0..nb * nf).map(|_| rng.gen_range(-100.0..0.0)).collect();
        let c = Cochleagram::from_values(values, nb, nf, 100).unwrap();
        let p = power_spectrum_2d(&c);
        let scale = p.iter().fold(0.0f64, |m, v| m.max(*v));
        for m in 0..nb {
            for k in 0..nf {
                let mirror = p[((nb - m) % nb) * nf + (nf - k) % nf];
                sym = sym.max((p[m * nf + k] - mirror).abs() / scale);
            }
        }
        let energy: f64 = c.values.iter().map(|v| v * v).sum();
        parseval = parseval.max((p.iter().sum::<f64>() / (energy * (nb * nf) as f64) - 1.0).abs());

        let reversed: Vec<f64> = (0..nb).flat_map(|b| c.band(b).iter().rev().copied().collect::<Vec<_>>()).collect();
        let r = stm(&Cochleagram::from_values(reversed, nb, nf, 100).unwrap()).unwrap();
        let s = stm(&c).unwrap();
        for t in 0..TEMPORAL_BINS {
            for m in 0..20 {
                flip = flip.max((r.get(t, m) - s.get(TEMPORAL_BINS - 1 - t, m)).abs());
            }
        }
    }
    // Reversal is exact up to floating-point rounding of the two FFTs.
    outcome(
        sym <= 1e-9 && parseval <= 1e-6 && flip <= 1e-9,
        format!("symmetry {sym:.1e}, Parseval {parseval:.1e}, time-reversal {flip:.1e} dB"),
    )
}

fn feature_counts(stores: &[&Dataset]) -> Outcome {
    let grid = StmGrid::default();
    let spec = AblationSpec::new(AblationMode::Lowpass, 4.0, 6.0).unwrap();
    let kept = ablation::kept_indices(&grid, &spec).unwrap().len();
    let n: usize = stores.iter().map(|d| d.len()).sum();
    let all = stores
        .iter()
        .all(|d| d.n_features == N_FEATURES && d.records.iter().all(|r| r.features.len() == N_FEATURES));
    outcome(all && kept == 561, format!("{n} STM vectors of {N_FEATURES}, lowpass(4, 6) keeps {kept}"))
}

/// Everything one full run of the recipe produces.
struct Recipe {
    stm: Dataset,
    split: Split,
    stm_store: Vec<u8>,
    mel_store: Vec<u8>,
    stm_eval: String,
    mel_eval: String,
    stm_f1: f64,
    mel_f1: f64,
    arch: ArchParams,
    seed: u64,
    elapsed: Duration,
}

fn store_bytes(base: &Path) -> Vec<u8> {
    let (blob, manifest) = dataset::store_paths(base);
    let mut out = fs::read(blob).unwrap();
    out.extend(fs::read(manifest).unwrap());
    out
}

fn recipe(dir: &Path) -> Recipe {
    let start = Instant::now();
    let corpus = dir.join("corpus");
    let entries = synth::write_corpus(&corpus, &CorpusConfig::default()).unwrap();
    let cfg = RunConfig {
        pca_k: 64,
        budget: 10,
        split_seed: 0,
        ..RunConfig::default()
    };
    let protocol = Protocol::Search {
        space: cfg.search.clone(),
        budget: cfg.budget,
    };
    let split_path = dir.join("split.json");
    let mut out = Vec::new();
    let mut split = None;
    for (kind, name) in [(FeatureKind::Stm, "stm"), (FeatureKind::Mel, "mel")] {
        let ds = pipeline::extract(&corpus, &entries, kind, &cfg, 1).unwrap();
        let store = dir.join(name);
        dataset::write_store(&store, &ds).unwrap();
        let ds = dataset::read_store(&store).unwrap();
        if split.is_none() {
            dataset::stratified_group_split(&ds.records, cfg.split_ratios, cfg.split_seed)
                .unwrap()
                .write(&split_path)
                .unwrap();
            split = Some(Split::read(&split_path).unwrap());
        }
        let split = split.as_ref().unwrap();
        let (fitted, echo) = pipeline::fit(&ds, split, &protocol, &cfg).unwrap();
        let model = dir.join(format!("{name}_model"));
        pipeline::save_fitted(&model, &fitted, echo).unwrap();
        let loaded = pipeline::load_fitted(&model).unwrap();
        let eval = pipeline::evaluate_model(&loaded, &ds, split, Partition::Test).unwrap();
        let json = serde_json::to_string_pretty(&eval).unwrap();
        fs::write(dir.join(format!("{name}_eval.json")), &json).unwrap();
        out.push((ds, store_bytes(&store), json, eval.report.f1_macro, fitted));
    }
    let (mel, stm) = (out.pop().unwrap(), out.pop().unwrap());
    Recipe {
        arch: ArchParams::from_arch(&stm.4.arch),
        seed: stm.4.seed,
        stm: stm.0,
        split: split.unwrap(),
        stm_store: stm.1,
        mel_store: mel.1,
        stm_eval: stm.2,
        mel_eval: mel.2,
        stm_f1: stm.3,
        mel_f1: mel.3,
        elapsed: start.elapsed(),
    }
}

fn classification(r: &Recipe) -> Outcome {
    let within = r.elapsed < Duration::from_secs(300);
    outcome(
        r.stm_f1 >= 0.95 && r.stm_f1 > r.mel_f1 && within,
        format!(
            "STM macro-F1 {:.4}, mel macro-F1 {:.4}, recipe {:.0} s",
            r.stm_f1,
            r.mel_f1,
            r.elapsed.as_secs_f64()
        ),
    )
}

fn ablations(r: &Recipe) -> Outcome {
    let start = Instant::now();
    let specs = [
        AblationSpec::new(AblationMode::Lowpass, 4.0, 6.0).unwrap(),
        AblationSpec::new(AblationMode::Highpass, 1.0, 0.75).unwrap(),
    ];
    let cfg = TrainConfig {
        seed: r.seed,
        ..TrainConfig::default()
    };
    let rows = ablation::sweep(&r.stm, &r.split, &specs, &Protocol::Fixed(r.arch.clone()), 64, &cfg).unwrap();
    let (low, high) = (rows[0].macro_f1, rows[1].macro_f1);
    let secs = start.elapsed().as_secs_f64();
    outcome(
        (r.stm_f1 - low).abs() <= 0.05 && r.stm_f1 - high >= 0.10 && secs < 600.0,
        format!("full {:.4}, lowpass {low:.4}, highpass {high:.4}, {secs:.0} s", r.stm_f1),
    )
}

fn gradient_check() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let x = DMatrix::from_fn(16, 6, |_, _| rng.gen_range(-1.0..1.0));
    let y: Vec<usize> = (0..16).map(|i| i % 4).collect();
    let arch = MlpArch {
        input_dim: 6,
        hidden_units: vec![8, 5],
        output_dim: 4,
        l1: 1e-3,
        dropout_rate: 0.0,
        learning_rate: 1e-3,
    };
    let mut worst = 0.0f64;
    for gamma in [0.0, 2.0] {
        let m = Mlp::new(arch.clone(), 7).unwrap();
        let g = m.objective_gradient(&x, &y, gamma).unwrap();
        let analytic: Vec<f64> = g
            .layers
            .iter()
            .flat_map(|l| l.w.transpose().iter().chain(l.b.iter()).copied().collect::<Vec<_>>())
            .collect();
        let params = m.flat_params();
        let h = 1e-5;
        for i in 0..params.len() {
            let eval = |delta: f64| {
                let mut p = params.clone();
                p[i] += delta;
                Mlp::from_flat_params(arch.clone(), &p).unwrap().objective(&x, &y, gamma).unwrap()
            };
            let numeric = (eval(h) - eval(-h)) / (2.0 * h);
            worst = worst.max((numeric - analytic[i]).abs() / numeric.abs().max(analytic[i].abs()).max(1e-6));
        }
    }
    outcome(worst < 1e-4, format!("worst relative error {worst:.1e}"))
}

fn trapezoid_auc(pos: &[bool], scores: &[f64]) -> f64 {
    let mut thresholds = scores.to_vec();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    let n_pos = pos.iter().filter(|&&p| p).count() as f64;
    let n_neg = pos.len() as f64 - n_pos;
    let mut points = vec![(0.0, 0.0)];
    for t in thresholds {
        let tp = pos.iter().zip(scores).filter(|(&p, &s)| p && s >= t).count() as f64;
        let fp = pos.iter().zip(scores).filter(|(&p, &s)| !p && s >= t).count() as f64;
        points.push((fp / n_neg, tp / n_pos));
    }
    points.windows(2).map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0).sum()
}

fn metric_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut roc = 0.0f64;
    for _ in 0..50 {
        let n = rng.gen_range(2..=200);
        let mut pos: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.3)).collect();
        pos[0] = true;
        pos[1] = false;
        let scores: Vec<f64> = (0..n).map(|_| rng.gen_range(0..20) as f64 / 20.0).collect();
        roc = roc.max((roc_auc(&pos, &scores).unwrap() - trapezoid_auc(&pos, &scores)).abs());
    }

    let mut probs: DMatrix<f64> = DMatrix::from_fn(30, 6, |_, _| rng.gen_range(0.01..1.0));
    for mut row in probs.row_iter_mut() {
        let s = row.sum();
        row /= s;
    }
    let y: Vec<usize> = (0..30).map(|_| rng.gen_range(0..6)).collect();
    let ce = -(0..30).map(|i| probs[(i, y[i])].ln()).sum::<f64>() / 30.0;
    let focal = (focal_loss(&probs, &y, 0.0) - ce).abs();

    let same: Vec<&[f64]> = vec![&[1.0, 4.0], &[3.0, 2.0]];
    let identical = cohens_d(&same, &same).unwrap().iter().all(|&d| d == 0.0);
    let (a, b): (Vec<&[f64]>, Vec<&[f64]>) = (vec![&[0.0], &[2.0]], vec![&[1.0], &[3.0]]);
    let hand = cohens_d(&a, &b).unwrap()[0];
    let (u, v): (Vec<&[f64]>, Vec<&[f64]>) = (vec![&[0.0], &[1.0], &[2.0]], vec![&[-1.0], &[0.0], &[1.0]]);
    let unit = cohens_d(&u, &v).unwrap()[0];
    let cohen = identical && (hand + 1.0 / 2f64.sqrt()).abs() < 1e-12 && (unit - 1.0).abs() < 1e-12;
    outcome(
        roc <= 1e-12 && focal <= 1e-9 && cohen,
        format!("ROC gap {roc:.1e}, focal-CE gap {focal:.1e}, Cohen's d {hand:.4}, {unit:.4}"),
    )
}

fn split_invariants() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let (mut worst, mut broken) = (0.0f64, 0usize);
    for trial in 0..1000u64 {
        let n_groups = rng.gen_range(40..120);
        let mut items = Vec::new();
        for g in 0..n_groups {
            let label = ClassLabel::from_index(rng.gen_range(0..ClassLabel::COUNT)).unwrap();
            for k in 0..rng.gen_range(1..=6) {
                items.push((format!("r{g}_{k}"), format!("g{g}"), label));
            }
        }
        let biggest = 6.0 / items.len() as f64;
        let triples: Vec<(&str, &str, ClassLabel)> = items.iter().map(|(i, g, l)| (i.as_str(), g.as_str(), *l)).collect();
        let split = split_labels(&triples, DEFAULT_RATIOS, trial).unwrap();
        let mut groups = std::collections::HashMap::new();
        let mut counts = [0usize; 3];
        for (id, group, _) in &triples {
            let p = split.assignment[*id];
            counts[Partition::ALL.iter().position(|&q| q == p).unwrap()] += 1;
            if *groups.entry(*group).or_insert(p) != p {
                broken += 1;
            }
        }
        broken += (split.assignment.len() != triples.len()) as usize;
        if biggest <= 0.05 {
            for (c, r) in counts.iter().zip(DEFAULT_RATIOS) {
                worst = worst.max((*c as f64 / triples.len() as f64 - r).abs());
            }
        }
    }
    outcome(
        broken == 0 && worst <= 0.03,
        format!("{broken} violations, worst fraction gap {:.1} points", worst * 100.0),
    )
}

fn determinism(a: &Recipe, b: &Recipe) -> Outcome {
    let stores = a.stm_store == b.stm_store && a.mel_store == b.mel_store;
    let evals = a.stm_eval == b.stm_eval && a.mel_eval == b.mel_eval;
    outcome(
        stores && evals,
        format!("stores identical: {stores}, eval JSON identical: {evals}"),
    )
}

fn main() -> ExitCode {
    let mut failed = 0;
    let mut report = |n: usize, name: &str, run: &mut dyn FnMut() -> Outcome| {
        let start = Instant::now();
        let o = run();
        let verdict = if o.pass { "PASS" } else { "FAIL" };
        failed += !o.pass as usize;
        println!(
            "criterion {n:>2} {verdict} {name}: {} ({:.1} s)",
            o.detail,
            start.elapsed().as_secs_f64()
        );
    };

    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    report(1, "filterbank", &mut filterbank_exactness);
    report(2, "modulation peaks", &mut modulation_peaks);
    report(3, "FFT invariants", &mut fft_invariants);
    let first = recipe(dirs[0].path());
    report(4, "feature counts", &mut || feature_counts(&[&first.stm]));
    report(5, "synthetic classification", &mut || classification(&first));
    report(6, "ablation direction", &mut || ablations(&first));
    report(7, "gradient check", &mut gradient_check);
    report(8, "metric oracles", &mut metric_oracles);
    report(9, "split invariants", &mut split_invariants);
    let second = recipe(dirs[1].path());
    report(10, "determinism", &mut || determinism(&first, &second));

    println!("acceptance: {} of 10 criteria passed", 10 - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
