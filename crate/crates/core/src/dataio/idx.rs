use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::{Dataset, Split};

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

/// Raw unsigned-byte IDX array.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxArray {
    pub dims: Vec<u32>,
    pub data: Vec<u8>,
}

fn be_u32(bytes: &[u8], at: usize) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Format(format!("truncated header at byte {at}")))
}

/// Parses an unsigned-byte IDX file with the given magic.
pub fn parse_idx(bytes: &[u8], magic: u32) -> Result<IdxArray> {
    let found = be_u32(bytes, 0)?;
    if found != magic {
        return Err(Error::BadMagic(format!("expected {magic:#010x}, found {found:#010x}")));
    }
    let rank = (magic & 0xff) as usize;
    let dims = (0..rank).map(|d| be_u32(bytes, 4 + 4 * d)).collect::<Result<Vec<_>>>()?;
    let expected = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d as usize))
        .ok_or_else(|| Error::Format("dimension product overflows".into()))?;
    let payload = &bytes[4 + 4 * rank..];
    if payload.len() != expected {
        return Err(Error::Format(format!("payload has {} bytes, header implies {expected}", payload.len())));
    }
    Ok(IdxArray { dims, data: payload.to_vec() })
}

pub fn parse_idx_images(bytes: &[u8]) -> Result<IdxArray> {
    parse_idx(bytes, IMAGES_MAGIC)
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<IdxArray> {
    parse_idx(bytes, LABELS_MAGIC)
}

fn encode(magic: u32, dims: &[u32], data: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(4 + 4 * dims.len() + data.len());
    out.extend_from_slice(&magic.to_be_bytes());
    for d in dims {
        out.extend_from_slice(&d.to_be_bytes());
    }
    out.extend_from_slice(data);
    out
}

/// Encodes single-channel images (`n × 1 × h × w` or `n × h × w`) with values
/// in `[0, 1]`, rounding to the nearest byte.
pub fn encode_idx_images(images: &Tensor) -> Result<Vec<u8>> {
    let dims: Vec<u32> = match images.shape() {
        [n, 1, h, w] | [n, h, w] => vec![*n as u32, *h as u32, *w as u32],
        other => return Err(Error::Shape(format!("cannot encode {other:?} as IDX images"))),
    };
    let data = images
        .data()
        .iter()
        .map(|&x| {
            if (0.0..=1.0).contains(&x) {
                Ok((x * 255.0).round() as u8)
            } else {
                Err(Error::InvalidArgument(format!("pixel {x} outside [0, 1]")))
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(encode(IMAGES_MAGIC, &dims, &data))
}

pub fn encode_idx_labels(labels: &[usize]) -> Result<Vec<u8>> {
    let data = labels
        .iter()
        .map(|&l| u8::try_from(l).map_err(|_| Error::InvalidArgument(format!("label {l} does not fit a byte"))))
        .collect::<Result<Vec<_>>>()?;
    Ok(encode(LABELS_MAGIC, &[labels.len() as u32], &data))
}

/// Builds a dataset (`n × 1 × h × w`, pixels scaled to `[0, 1]`) from IDX
/// image and label bytes. The class count is one more than the largest label.
pub fn dataset_from_idx(images: &[u8], labels: &[u8], split: Split) -> Result<Dataset> {
    let img = parse_idx_images(images)?;
    let lab = parse_idx_labels(labels)?;
    if img.dims[0] != lab.dims[0] {
        return Err(Error::Format(format!("{} images but {} labels", img.dims[0], lab.dims[0])));
    }
    let shape = vec![img.dims[0] as usize, 1, img.dims[1] as usize, img.dims[2] as usize];
    if shape.iter().any(|&d| d == 0) {
        return Err(Error::Format(format!("empty IDX dimension in {shape:?}")));
    }
    let inputs = Tensor::new(shape, img.data.iter().map(|&p| f64::from(p) / 255.0).collect())?;
    let labels: Vec<usize> = lab.data.iter().map(|&l| usize::from(l)).collect();
    let classes = labels.iter().max().map_or(1, |m| m + 1);
    Dataset::new(inputs, labels, classes, split)
}

pub fn load_idx(images: &Path, labels: &Path, split: Split) -> Result<Dataset> {
    let read = |p: &Path| std::fs::read(p).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", p.display()))));
    dataset_from_idx(&read(images)?, &read(labels)?, split)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Four 2×3 images written byte by byte.
    fn fixture() -> (Vec<u8>, Vec<u8>) {
        let mut img = vec![0x00, 0x00, 0x08, 0x03, 0, 0, 0, 4, 0, 0, 0, 2, 0, 0, 0, 3];
        img.extend((0u8..24).map(|k| k * 10));
        let lab = vec![0x00, 0x00, 0x08, 0x01, 0, 0, 0, 4, 2, 0, 1, 2];
        (img, lab)
    }

    #[test]
    fn reads_fixture_and_round_trips_bytes() {
        let (img, lab) = fixture();
        let ds = dataset_from_idx(&img, &lab, Split::Train).unwrap();
        assert_eq!(ds.inputs.shape(), &[4, 1, 2, 3]);
        assert_eq!(ds.labels, vec![2, 0, 1, 2]);
        assert_eq!(ds.classes, 3);
        assert_eq!(ds.inputs.row(1)[0], 60.0 / 255.0);
        assert_eq!(encode_idx_images(&ds.inputs).unwrap(), img);
        assert_eq!(encode_idx_labels(&ds.labels).unwrap(), lab);
    }

    #[test]
    fn rejects_malformed_files() {
        let (mut img, lab) = fixture();
        let err = dataset_from_idx(&lab, &lab, Split::Train).unwrap_err();
        assert!(err.to_string().contains("bad magic"));
        let short = &img[..img.len() - 1];
        assert!(matches!(dataset_from_idx(short, &lab, Split::Train), Err(Error::Format(_))));
        img[7] = 3;
        img.truncate(img.len() - 6);
        assert!(dataset_from_idx(&img, &lab, Split::Train).unwrap_err().to_string().contains("labels"));
        assert!(parse_idx_images(&[0, 0, 8]).is_err());
    }

    #[test]
    fn missing_file_names_the_path() {
        let err = load_idx(Path::new("/nonexistent/imgs.idx"), Path::new("/nonexistent/l.idx"), Split::Test).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/imgs.idx"));
    }
}
