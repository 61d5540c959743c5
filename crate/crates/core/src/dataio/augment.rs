use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;
use crate::tensor::Tensor;

pub const DEFAULT_PAD: usize = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum AugmentPolicy {
    None,
    #[default]
    CropFlip,
}

/// Zero-pads one `c × h × w` image by `pad`, crops the `h × w` window whose
/// top-left corner sits at `(top, left)` of the padded image, then mirrors it
/// horizontally if `flip`.
pub fn augment_image(img: &[f64], shape: [usize; 3], pad: usize, top: usize, left: usize, flip: bool) -> Vec<f64> {
    let [c, h, w] = shape;
    let mut out = vec![0.0; c * h * w];
    for ch in 0..c {
        for r in 0..h {
            let sr = (r + top).checked_sub(pad).filter(|&v| v < h);
            for col in 0..w {
                let dst = if flip { w - 1 - col } else { col };
                let sc = (col + left).checked_sub(pad).filter(|&v| v < w);
                if let (Some(sr), Some(sc)) = (sr, sc) {
                    out[ch * h * w + r * w + dst] = img[ch * h * w + sr * w + sc];
                }
            }
        }
    }
    out
}

/// Random crop and horizontal flip for a `B × c × h × w` batch. The random
/// stream is keyed by `(seed, epoch, batch)`.
pub fn augment(batch: &Tensor, policy: AugmentPolicy, pad: usize, seed: u64, epoch: usize, index: usize) -> Result<Tensor> {
    let &[b, c, h, w] = batch.shape() else {
        return Err(Error::Shape(format!("augmentation needs B×C×H×W images, got {:?}", batch.shape())));
    };
    if policy == AugmentPolicy::None {
        return Ok(batch.clone());
    }
    if pad >= h || pad >= w {
        return Err(Error::InvalidArgument(format!("pad {pad} must be smaller than the {h}×{w} image")));
    }
    let mut rng = seed::rng_indexed(seed, "augment", &[epoch as u64, index as u64]);
    let mut data = Vec::with_capacity(batch.len());
    for i in 0..b {
        let top = rng.random_range(0..=2 * pad);
        let left = rng.random_range(0..=2 * pad);
        let flip = rng.random_bool(0.5);
        data.extend(augment_image(batch.row(i), [c, h, w], pad, top, left, flip));
    }
    Tensor::new(batch.shape().to_vec(), data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn batch() -> Tensor {
        Tensor::new(vec![2, 2, 3, 3], (0..36).map(f64::from).collect()).unwrap()
    }

    #[test]
    fn none_is_identity_and_shape_is_kept() {
        let t = batch();
        assert_eq!(augment(&t, AugmentPolicy::None, 1, 0, 0, 0).unwrap(), t);
        for pad in 0..3 {
            let out = augment(&t, AugmentPolicy::CropFlip, pad, 4, 1, 2).unwrap();
            assert_eq!(out.shape(), t.shape());
            assert_eq!(out, augment(&t, AugmentPolicy::CropFlip, pad, 4, 1, 2).unwrap());
        }
        assert!(augment(&t, AugmentPolicy::CropFlip, 3, 0, 0, 0).is_err());
    }

    #[test]
    fn flip_is_an_involution_and_centered_crop_is_identity() {
        let t = batch();
        let img = t.row(0);
        let once = augment_image(img, [2, 3, 3], 1, 1, 1, true);
        assert_eq!(&once[..3], &[2.0, 1.0, 0.0]);
        assert_eq!(augment_image(&once, [2, 3, 3], 1, 1, 1, true), img);
        assert_eq!(augment_image(img, [2, 3, 3], 1, 1, 1, false), img);
    }

    #[test]
    fn shifted_crop_brings_in_zeros() {
        let img: Vec<f64> = (1..=4).map(f64::from).collect();
        // window starts in the padding row and column
        assert_eq!(augment_image(&img, [1, 2, 2], 1, 0, 0, false), vec![0.0, 0.0, 0.0, 1.0]);
        assert_eq!(augment_image(&img, [1, 2, 2], 1, 2, 2, false), vec![4.0, 0.0, 0.0, 0.0]);
    }
}
