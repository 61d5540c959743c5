use std::f64::consts::PI;
use std::str::FromStr;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;
use crate::tensor::Tensor;

use super::{Dataset, Split};

pub const TINY_SIDE: usize = 8;
pub const TINY_CHANNELS: usize = 3;
const PATCH: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SyntheticKind {
    Blobs,
    Moons,
    Rings,
    TinyImages,
}

impl FromStr for SyntheticKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "blobs" => Ok(Self::Blobs),
            "moons" => Ok(Self::Moons),
            "rings" => Ok(Self::Rings),
            "tiny-images" => Ok(Self::TinyImages),
            other => Err(Error::InvalidArgument(format!("unknown synthetic dataset {other:?}"))),
        }
    }
}

/// 3×3 stamps, row-major. All are mirror-symmetric so horizontal flips keep
/// the class; classes past the list get seeded random symmetric stamps.
const STAMPS: [[u8; 9]; 8] = [
    [0, 0, 0, 1, 1, 1, 0, 0, 0], // horizontal bar
    [0, 1, 0, 0, 1, 0, 0, 1, 0], // vertical bar
    [1, 0, 1, 0, 1, 0, 1, 0, 1], // cross
    [0, 1, 0, 1, 1, 1, 0, 1, 0], // plus
    [1, 1, 1, 1, 0, 1, 1, 1, 1], // ring
    [1, 0, 1, 0, 1, 0, 0, 0, 0], // vee
    [1, 1, 1, 0, 1, 0, 0, 1, 0], // tee
    [1, 0, 1, 1, 0, 1, 1, 0, 1], // rails
];

fn stamp(class: usize, seed: u64) -> [u8; 9] {
    if let Some(s) = STAMPS.get(class) {
        return *s;
    }
    let mut rng = seed::rng_indexed(seed, "tiny-stamp", &[class as u64]);
    loop {
        let mut s = [0u8; 9];
        for r in 0..PATCH {
            let (side, mid) = (u8::from(rng.random_bool(0.5)), u8::from(rng.random_bool(0.5)));
            s[r * PATCH] = side;
            s[r * PATCH + 1] = mid;
            s[r * PATCH + 2] = side;
        }
        if s.iter().filter(|&&v| v == 1).count() >= 3 {
            return s;
        }
    }
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Deterministic toy classification data. Labels are assigned round-robin,
/// so class counts differ by at most one.
///
/// - `blobs`, `moons`, `rings`: 2-D points (`moons` requires two classes);
/// - `tiny-images`: `3 × 8 × 8` images with a class-specific stamp at a
///   random position, plus Gaussian pixel noise.
pub fn gen_synthetic(kind: SyntheticKind, n: usize, classes: usize, noise: f64, seed: u64) -> Result<Dataset> {
    if classes == 0 || n < classes {
        return Err(Error::InvalidArgument(format!("need n >= classes >= 1, got n={n}, classes={classes}")));
    }
    if !(noise >= 0.0 && noise.is_finite()) {
        return Err(Error::InvalidArgument(format!("noise must be finite and non-negative, got {noise}")));
    }
    if kind == SyntheticKind::Moons && classes != 2 {
        return Err(Error::InvalidArgument("moons has exactly two classes".into()));
    }
    let labels: Vec<usize> = (0..n).map(|i| i % classes).collect();
    let mut rng = seed::rng_for(seed, "synthetic");
    let (shape, data) = match kind {
        SyntheticKind::TinyImages => {
            let stamps: Vec<[u8; 9]> = (0..classes).map(|k| stamp(k, seed)).collect();
            let plane = TINY_SIDE * TINY_SIDE;
            let mut data = vec![0.0; n * TINY_CHANNELS * plane];
            for (i, img) in data.chunks_mut(TINY_CHANNELS * plane).enumerate() {
                let s = &stamps[labels[i]];
                let top = rng.random_range(0..=TINY_SIDE - PATCH);
                let left = rng.random_range(0..=TINY_SIDE - PATCH);
                for ch in 0..TINY_CHANNELS {
                    for (k, &on) in s.iter().enumerate() {
                        img[ch * plane + (top + k / PATCH) * TINY_SIDE + left + k % PATCH] = f64::from(on);
                    }
                }
                for x in img.iter_mut() {
                    *x += noise * normal(&mut rng);
                }
            }
            (vec![n, TINY_CHANNELS, TINY_SIDE, TINY_SIDE], data)
        }
        SyntheticKind::Blobs => {
            let mut data = Vec::with_capacity(2 * n);
            for &k in &labels {
                let a = 2.0 * PI * k as f64 / classes as f64;
                data.push(3.0 * a.cos() + noise * normal(&mut rng));
                data.push(3.0 * a.sin() + noise * normal(&mut rng));
            }
            (vec![n, 2], data)
        }
        SyntheticKind::Moons => {
            let mut data = Vec::with_capacity(2 * n);
            for &k in &labels {
                let t = rng.random_range(0.0..PI);
                let (x, y) = if k == 0 { (t.cos(), t.sin()) } else { (1.0 - t.cos(), 0.5 - t.sin()) };
                data.push(x + noise * normal(&mut rng));
                data.push(y + noise * normal(&mut rng));
            }
            (vec![n, 2], data)
        }
        SyntheticKind::Rings => {
            let mut data = Vec::with_capacity(2 * n);
            for &k in &labels {
                let t = rng.random_range(0.0..2.0 * PI);
                let r = (k + 1) as f64 + noise * normal(&mut rng);
                data.push(r * t.cos());
                data.push(r * t.sin());
            }
            (vec![n, 2], data)
        }
    };
    Dataset::new(Tensor::new(shape, data)?, labels, classes, Split::Train)
}

/// Generates `n_train + n_test` samples in one stream and splits them, so the
/// two parts never share a sample.
pub fn gen_synthetic_split(
    kind: SyntheticKind,
    n_train: usize,
    n_test: usize,
    classes: usize,
    noise: f64,
    seed: u64,
) -> Result<(Dataset, Dataset)> {
    if n_train < classes || n_test == 0 {
        return Err(Error::InvalidArgument(format!("split sizes {n_train}/{n_test} too small")));
    }
    let all = gen_synthetic(kind, n_train + n_test, classes, noise, seed)?;
    let train = all.subset(&(0..n_train).collect::<Vec<_>>())?;
    let mut test = all.subset(&(n_train..n_train + n_test).collect::<Vec<_>>())?;
    test.split = Split::Test;
    Ok((train, test))
}
