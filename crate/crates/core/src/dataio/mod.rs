//! Datasets: synthetic generators, IDX ingestion, normalization,
//! augmentation and a flat binary dump format.

mod augment;
mod idx;
mod sprd;
mod synth;

use serde::{Deserialize, Serialize};

pub use augment::{augment, augment_image, AugmentPolicy, DEFAULT_PAD};
pub use idx::{dataset_from_idx, encode_idx_images, encode_idx_labels, load_idx, parse_idx, parse_idx_images, parse_idx_labels, IdxArray};
pub use sprd::{decode_sprd, encode_sprd, read_sprd, write_sprd, SPRD_MAGIC};
pub use synth::{gen_synthetic, gen_synthetic_split, SyntheticKind};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Lower bound applied to per-channel standard deviations.
pub const STD_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    #[default]
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub inputs: Tensor,
    pub labels: Vec<usize>,
    pub classes: usize,
    pub split: Split,
    pub stats: Option<NormStats>,
}

impl Dataset {
    pub fn new(inputs: Tensor, labels: Vec<usize>, classes: usize, split: Split) -> Result<Self> {
        let ds = Self { inputs, labels, classes, split, stats: None };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        if self.inputs.shape().len() < 2 {
            return Err(Error::Shape(format!("dataset inputs need a sample axis, got {:?}", self.inputs.shape())));
        }
        if self.labels.len() != self.inputs.rows() {
            return Err(Error::Length { expected: self.inputs.rows(), got: self.labels.len() });
        }
        if self.classes == 0 {
            return Err(Error::InvalidArgument("dataset needs at least one class".into()));
        }
        if let Some(&label) = self.labels.iter().find(|&&l| l >= self.classes) {
            return Err(Error::LabelOutOfRange { label, classes: self.classes });
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Per-sample shape, e.g. `[c, h, w]` or `[features]`.
    pub fn sample_shape(&self) -> &[usize] {
        self.inputs.row_shape()
    }

    pub fn channels(&self) -> usize {
        self.sample_shape()[0]
    }

    pub fn subset(&self, rows: &[usize]) -> Result<Self> {
        Ok(Self {
            inputs: self.inputs.select_rows(rows)?,
            labels: rows.iter().map(|&r| self.labels[r]).collect(),
            classes: self.classes,
            split: self.split,
            stats: self.stats.clone(),
        })
    }

    pub fn class_histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.classes];
        for &l in &self.labels {
            h[l] += 1;
        }
        h
    }
}

fn channel_stride(ds: &Dataset) -> (usize, usize) {
    let shape = ds.sample_shape();
    (shape[0], shape[1..].iter().product())
}

/// Computes per-channel statistics on `ds` and standardizes it with them.
pub fn normalize(ds: &Dataset) -> Result<(Dataset, NormStats)> {
    if ds.is_empty() {
        return Err(Error::InvalidArgument("cannot normalize an empty dataset".into()));
    }
    let (c, plane) = channel_stride(ds);
    let count = (ds.len() * plane) as f64;
    let mut mean = vec![0.0; c];
    for i in 0..ds.len() {
        for (ch, chunk) in ds.inputs.row(i).chunks(plane).enumerate() {
            mean[ch] += chunk.iter().sum::<f64>();
        }
    }
    mean.iter_mut().for_each(|m| *m /= count);
    let mut var = vec![0.0; c];
    for i in 0..ds.len() {
        for (ch, chunk) in ds.inputs.row(i).chunks(plane).enumerate() {
            var[ch] += chunk.iter().map(|x| (x - mean[ch]).powi(2)).sum::<f64>();
        }
    }
    let std = var.iter().map(|v| (v / count).sqrt().max(STD_FLOOR)).collect();
    let stats = NormStats { mean, std };
    let out = apply_stats(ds, &stats)?;
    Ok((out, stats))
}

/// Standardizes `ds` with externally supplied statistics.
pub fn apply_stats(ds: &Dataset, stats: &NormStats) -> Result<Dataset> {
    let (c, plane) = channel_stride(ds);
    if stats.mean.len() != c || stats.std.len() != c {
        return Err(Error::Length { expected: c, got: stats.mean.len().min(stats.std.len()) });
    }
    if stats.std.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
        return Err(Error::InvalidArgument("standard deviations must be positive".into()));
    }
    let mut inputs = ds.inputs.clone();
    let per_sample = c * plane;
    inputs.map_in_place(|k, x| {
        let ch = (k % per_sample) / plane;
        *x = (*x - stats.mean[ch]) / stats.std[ch];
    })?;
    Ok(Dataset { inputs, stats: Some(stats.clone()), ..ds.clone() })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> Dataset {
        let data = vec![1.0, 5.0, 2.0, 5.0, 3.0, 5.0, 6.0, 5.0];
        Dataset::new(Tensor::new(vec![2, 2, 2], data).unwrap(), vec![0, 1], 2, Split::Train).unwrap()
    }

    #[test]
    fn normalization_zeroes_means_and_floors_constant_channels() {
        let ds = toy();
        let (out, stats) = normalize(&ds).unwrap();
        assert_eq!(stats.mean, vec![(1.0 + 5.0 + 3.0 + 5.0) / 4.0, (2.0 + 5.0 + 6.0 + 5.0) / 4.0]);
        for ch in 0..2 {
            let m: f64 = (0..2).map(|i| out.inputs.row(i)[2 * ch] + out.inputs.row(i)[2 * ch + 1]).sum::<f64>() / 4.0;
            assert!(m.abs() < 1e-10);
        }
        let flat = Dataset::new(Tensor::new(vec![2, 1, 2], vec![3.0; 4]).unwrap(), vec![0, 0], 1, Split::Train).unwrap();
        let (out, stats) = normalize(&flat).unwrap();
        assert_eq!(stats.std, vec![STD_FLOOR]);
        assert!(out.inputs.data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn test_split_reuses_train_stats() {
        let (_, stats) = normalize(&toy()).unwrap();
        let mut test = toy();
        test.split = Split::Test;
        test.inputs.map_in_place(|_, x| *x *= 2.0).unwrap();
        let out = apply_stats(&test, &stats).unwrap();
        assert_eq!(out.stats.as_ref(), Some(&stats));
        assert_ne!(normalize(&test).unwrap().1, stats);
    }

    #[test]
    fn validation() {
        let t = Tensor::new(vec![2, 3], vec![0.0; 6]).unwrap();
        assert!(matches!(
            Dataset::new(t.clone(), vec![0, 3], 3, Split::Train),
            Err(Error::LabelOutOfRange { label: 3, classes: 3 })
        ));
        assert!(Dataset::new(t, vec![0], 3, Split::Train).is_err());
    }
}
