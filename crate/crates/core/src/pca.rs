//! Principal component analysis fitted on training rows.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_COMPONENTS: usize = 1024;

#[derive(Debug, Clone, PartialEq)]
pub struct PcaModel {
    pub mean: DVector<f64>,
    /// `k x d`, orthonormal rows.
    pub components: DMatrix<f64>,
    pub explained_variance: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct PcaSidecar {
    k: usize,
    d: usize,
    explained_variance: Vec<f64>,
}

impl PcaModel {
    pub fn k(&self) -> usize {
        self.components.nrows()
    }

    pub fn d(&self) -> usize {
        self.mean.len()
    }

    pub fn transform(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        transform(self, x)
    }

    /// Rounds every parameter through `f32`, matching what is persisted.
    pub fn round_to_f32(&self) -> PcaModel {
        let r = |v: f64| v as f32 as f64;
        PcaModel {
            mean: self.mean.map(r),
            components: self.components.map(r),
            explained_variance: self.explained_variance.clone(),
        }
    }

    fn paths(base: &Path) -> (PathBuf, PathBuf) {
        let name = base.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        (
            base.with_file_name(format!("{name}.pca.f32")),
            base.with_file_name(format!("{name}.pca.json")),
        )
    }

    /// Writes `<base>.pca.f32` (mean, then components row by row) and a
    /// `<base>.pca.json` sidecar.
    pub fn save(&self, base: impl AsRef<Path>) -> Result<()> {
        let (blob, sidecar) = Self::paths(base.as_ref());
        let mut bytes = Vec::with_capacity(4 * self.d() * (self.k() + 1));
        bytes.extend(self.mean.iter().flat_map(|&v| (v as f32).to_le_bytes()));
        for i in 0..self.k() {
            bytes.extend(self.components.row(i).iter().flat_map(|&v| (v as f32).to_le_bytes()));
        }
        fs::write(blob, bytes)?;
        let meta = PcaSidecar {
            k: self.k(),
            d: self.d(),
            explained_variance: self.explained_variance.clone(),
        };
        fs::write(sidecar, serde_json::to_string_pretty(&meta)? + "\n")?;
        Ok(())
    }

    pub fn load(base: impl AsRef<Path>) -> Result<Self> {
        let (blob, sidecar) = Self::paths(base.as_ref());
        let meta: PcaSidecar = serde_json::from_str(&fs::read_to_string(sidecar)?)?;
        let bytes = fs::read(blob)?;
        if bytes.len() != 4 * meta.d * (meta.k + 1) {
            return Err(Error::Store(format!("PCA blob has {} bytes for k={} d={}", bytes.len(), meta.k, meta.d)));
        }
        let vals: Vec<f64> = bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
            .collect();
        Ok(PcaModel {
            mean: DVector::from_column_slice(&vals[..meta.d]),
            components: DMatrix::from_row_slice(meta.k, meta.d, &vals[meta.d..]),
            explained_variance: meta.explained_variance,
        })
    }
}

/// Fits `min(k, d, n - 1)` principal axes of the rows of `x`.
///
/// Uses the `d x d` scatter matrix when `d <= n` and the `n x n` Gram matrix
/// otherwise. Each component's largest-magnitude entry is made positive.
pub fn fit(x: &DMatrix<f64>, k: usize) -> Result<PcaModel> {
    let (n, d) = x.shape();
    if n < 2 {
        return Err(Error::InvalidInput(format!("PCA needs at least 2 rows, got {n}")));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("PCA input contains non-finite values".into()));
    }
    let k = k.min(d).min(n - 1);
    if k == 0 {
        return Err(Error::InvalidInput("PCA target dimension must be positive".into()));
    }
    let mean = x.row_mean().transpose();
    let mut centered = x.clone();
    for mut row in centered.row_iter_mut() {
        row -= mean.transpose();
    }

    let (mut components, eigenvalues) = if d <= n {
        let scatter = centered.transpose() * &centered;
        let (vals, vecs) = sorted_eigen(scatter);
        let comps = DMatrix::from_fn(k, d, |i, j| vecs[(j, i)]);
        (comps, vals)
    } else {
        let gram = &centered * centered.transpose();
        let (vals, vecs) = sorted_eigen(gram);
        let max = vals.first().copied().unwrap_or(0.0).max(0.0);
        let usable = vals.iter().take(k).take_while(|&&v| v > max * 1e-12 && v > 0.0).count();
        if usable < k {
            log::warn!("data rank limits PCA to {usable} of {k} requested components");
        }
        let k = usable.max(1);
        let u = vecs.columns(0, k).into_owned();
        let mut comps = (centered.transpose() * u).transpose();
        for (i, mut row) in comps.row_iter_mut().enumerate() {
            let norm = vals[i].max(f64::MIN_POSITIVE).sqrt();
            row /= norm;
        }
        (comps, vals)
    };

    for mut row in components.row_iter_mut() {
        let pivot = row.iter().copied().fold(0.0f64, |best, v| if v.abs() > best.abs() { v } else { best });
        if pivot < 0.0 {
            row.neg_mut();
        }
    }
    let explained_variance = eigenvalues
        .iter()
        .take(components.nrows())
        .map(|&v| v.max(0.0) / (n - 1) as f64)
        .collect();
    Ok(PcaModel {
        mean,
        components,
        explained_variance,
    })
}

/// Eigenpairs sorted by descending eigenvalue; eigenvectors as columns.
fn sorted_eigen(m: DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let vals = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vecs = DMatrix::from_fn(eig.eigenvectors.nrows(), order.len(), |r, c| eig.eigenvectors[(r, order[c])]);
    (vals, vecs)
}

/// `(x - mean) * components^T`.
pub fn transform(m: &PcaModel, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if x.ncols() != m.d() {
        return Err(Error::shape(format!("{} columns", m.d()), format!("{} columns", x.ncols())));
    }
    let mut centered = x.clone();
    for mut row in centered.row_iter_mut() {
        row -= m.mean.transpose();
    }
    Ok(centered * m.components.transpose())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(n: usize, d: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(n, d, |_, _| rng.gen_range(-1.0..1.0))
    }

    fn assert_orthonormal(m: &PcaModel) {
        let gram = &m.components * m.components.transpose();
        let eye = DMatrix::<f64>::identity(m.k(), m.k());
        assert!((gram - eye).amax() < 1e-8);
    }

    #[test]
    fn planar_data_reconstructs() {
        let coords = random(40, 2, 1);
        let basis = random(2, 5, 2);
        let offset = DMatrix::from_fn(40, 5, |_, j| j as f64);
        let x = &coords * &basis + offset;
        let m = fit(&x, 2).unwrap();
        assert_orthonormal(&m);
        let t = transform(&m, &x).unwrap();
        let mut recon = &t * &m.components;
        for mut row in recon.row_iter_mut() {
            row += m.mean.transpose();
        }
        assert!((recon - x).amax() < 1e-8);
    }

    #[test]
    fn wide_data_uses_gram_path() {
        let x = random(12, 50, 3);
        let m = fit(&x, 100).unwrap();
        assert_eq!(m.k(), 11);
        assert_orthonormal(&m);
        assert!(m.explained_variance.windows(2).all(|w| w[0] >= w[1]));
        let t = transform(&m, &x).unwrap();
        for j in 0..t.ncols() {
            assert!(t.column(j).mean().abs() < 1e-8);
        }
        // Full-rank projection of centered rows preserves distances.
        let (a, b) = (t.row(0) - t.row(5), x.row(0) - x.row(5));
        assert!((a.norm() - b.norm()).abs() < 1e-8);
    }

    #[test]
    fn sign_convention() {
        let m = fit(&random(30, 6, 4), 6).unwrap();
        for row in m.components.row_iter() {
            let pivot = row.iter().copied().fold(0.0f64, |b, v| if v.abs() > b.abs() { v } else { b });
            assert!(pivot > 0.0);
        }
    }

    #[test]
    fn errors() {
        assert!(fit(&random(1, 4, 5), 2).is_err());
        let mut x = random(5, 3, 6);
        x[(2, 1)] = f64::NAN;
        assert!(fit(&x, 2).is_err());
        let m = fit(&random(5, 3, 7), 2).unwrap();
        assert!(transform(&m, &random(2, 4, 8)).is_err());
    }

    #[test]
    fn save_load() {
        let dir = tempfile::tempdir().unwrap();
        let m = fit(&random(20, 7, 9), 3).unwrap();
        m.save(dir.path().join("model")).unwrap();
        let back = PcaModel::load(dir.path().join("model")).unwrap();
        assert_eq!(back, m.round_to_f32());
    }
}
