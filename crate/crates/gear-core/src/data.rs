//! Dataset container, z-score normalization, and fold splitting.

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// A regression dataset: row-major feature matrix plus one label per row.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub features: Tensor,
    pub labels: Vec<f64>,
}

impl Dataset {
    pub fn new(features: Tensor, labels: Vec<f64>) -> Result<Self> {
        if features.rank() != 2 {
            return Err(Error::shape("features must be a matrix"));
        }
        if features.shape()[0] != labels.len() {
            return Err(Error::shape(format!(
                "{} feature rows vs {} labels",
                features.shape()[0],
                labels.len()
            )));
        }
        Ok(Dataset { features, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.shape()[1]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let d = self.feature_dim();
        &self.features.data()[r * d..(r + 1) * d]
    }

    /// Sub-dataset of the given rows, in order.
    pub fn select(&self, rows: &[usize]) -> Dataset {
        let d = self.feature_dim();
        let mut data = Vec::with_capacity(rows.len() * d);
        let mut labels = Vec::with_capacity(rows.len());
        for &r in rows {
            data.extend_from_slice(self.row(r));
            labels.push(self.labels[r]);
        }
        Dataset {
            features: Tensor::new(vec![rows.len(), d], data).expect("finite rows"),
            labels,
        }
    }

    /// Population standard deviation of the labels.
    pub fn label_std(&self) -> f64 {
        let n = self.labels.len() as f64;
        let mean = self.labels.iter().sum::<f64>() / n;
        (self.labels.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt()
    }
}

/// Per-column affine transform captured from a training split; applied to
/// features and labels, and invertible for raw-unit reporting.
#[derive(Debug, Clone)]
pub struct Normalizer {
    pub feature_mean: Vec<f64>,
    pub feature_std: Vec<f64>,
    pub label_mean: f64,
    pub label_std: f64,
}

impl Normalizer {
    /// Fits means and standard deviations on the given dataset (the caller
    /// passes the training split). Degenerate columns get unit scale.
    pub fn fit(train: &Dataset) -> Normalizer {
        let d = train.feature_dim();
        let n = train.len() as f64;
        let mut mean = vec![0.0; d];
        for r in 0..train.len() {
            for (m, v) in mean.iter_mut().zip(train.row(r)) {
                *m += v;
            }
        }
        for m in &mut mean {
            *m /= n;
        }
        let mut var = vec![0.0; d];
        for r in 0..train.len() {
            for ((s, v), m) in var.iter_mut().zip(train.row(r)).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std: Vec<f64> = var
            .iter()
            .map(|s| {
                let sd = (s / n).sqrt();
                if sd > 1e-12 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        let label_mean = train.labels.iter().sum::<f64>() / n;
        let label_var =
            train.labels.iter().map(|v| (v - label_mean) * (v - label_mean)).sum::<f64>() / n;
        let label_std = if label_var.sqrt() > 1e-12 {
            label_var.sqrt()
        } else {
            1.0
        };
        Normalizer {
            feature_mean: mean,
            feature_std: std,
            label_mean,
            label_std,
        }
    }

    pub fn apply(&self, ds: &Dataset) -> Dataset {
        let d = ds.feature_dim();
        let mut data = Vec::with_capacity(ds.len() * d);
        for r in 0..ds.len() {
            for (c, v) in ds.row(r).iter().enumerate() {
                data.push((v - self.feature_mean[c]) / self.feature_std[c]);
            }
        }
        let labels = ds.labels.iter().map(|v| self.normalize_label(*v)).collect();
        Dataset {
            features: Tensor::new(vec![ds.len(), d], data).expect("finite normalized rows"),
            labels,
        }
    }

    pub fn normalize_label(&self, y: f64) -> f64 {
        (y - self.label_mean) / self.label_std
    }

    pub fn denormalize_label(&self, y: f64) -> f64 {
        y * self.label_std + self.label_mean
    }
}

/// Deterministic fold assignment: shuffles row indices with the seed and
/// chunks them into `folds` nearly equal parts.
pub fn fold_indices(len: usize, folds: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if folds < 2 {
        return Err(Error::Config("fold count must be at least 2".into()));
    }
    if len < folds {
        return Err(Error::Config(format!(
            "dataset of {len} rows cannot be split into {folds} folds"
        )));
    }
    let mut idx: Vec<usize> = (0..len).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    idx.shuffle(&mut rng);
    let mut out = vec![Vec::new(); folds];
    for (i, r) in idx.into_iter().enumerate() {
        out[i % folds].push(r);
    }
    Ok(out)
}

/// Deterministic train/validation split by fraction.
pub fn train_val_split(len: usize, val_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..len).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    idx.shuffle(&mut rng);
    let n_val = ((len as f64) * val_fraction).round().max(1.0) as usize;
    let n_val = n_val.min(len.saturating_sub(1)).max(1);
    let val = idx.split_off(len - n_val);
    (idx, val)
}
