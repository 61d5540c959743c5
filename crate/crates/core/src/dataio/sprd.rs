use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::{Dataset, Split};

pub const SPRD_MAGIC: &[u8; 4] = b"SPRD";
const VERSION: u32 = 1;
const MAX_RANK: usize = 8;

/// Layout (little-endian): magic, version, samples, classes, split
/// (0 train / 1 test), rank, `rank` extents of one sample, then
/// `samples × prod(extents)` f64 values and `samples` u32 labels.
pub fn encode_sprd(ds: &Dataset) -> Vec<u8> {
    let shape = ds.sample_shape();
    let mut out = Vec::with_capacity(28 + 4 * shape.len() + 8 * ds.inputs.len() + 4 * ds.len());
    out.extend_from_slice(SPRD_MAGIC);
    for v in [VERSION, ds.len() as u32, ds.classes as u32, u32::from(ds.split == Split::Test), shape.len() as u32] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for &d in shape {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for x in ds.inputs.data() {
        out.extend_from_slice(&x.to_le_bytes());
    }
    for &l in &ds.labels {
        out.extend_from_slice(&(l as u32).to_le_bytes());
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Format(format!("truncated SPRD data at byte {}", self.at)))?;
        let out = &self.bytes[self.at..end];
        self.at = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

pub fn decode_sprd(bytes: &[u8]) -> Result<Dataset> {
    let mut r = Reader { bytes, at: 0 };
    if r.take(4).map_err(|_| Error::BadMagic("file shorter than magic".into()))? != SPRD_MAGIC {
        return Err(Error::BadMagic("expected SPRD".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported SPRD version {version}")));
    }
    let samples = r.u32()? as usize;
    let classes = r.u32()? as usize;
    let split = match r.u32()? {
        0 => Split::Train,
        1 => Split::Test,
        s => return Err(Error::Format(format!("unknown split tag {s}"))),
    };
    let rank = r.u32()? as usize;
    if rank == 0 || rank > MAX_RANK {
        return Err(Error::Format(format!("sample rank {rank} outside 1..={MAX_RANK}")));
    }
    let mut shape = vec![samples];
    for _ in 0..rank {
        shape.push(r.u32()? as usize);
    }
    let count = shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .filter(|&c| c.checked_mul(8).is_some_and(|b| b <= bytes.len()))
        .ok_or_else(|| Error::Format("SPRD header implies more data than present".into()))?;
    let values: Vec<f64> = r
        .take(8 * count)?
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    let labels = (0..samples).map(|_| r.u32().map(|l| l as usize)).collect::<Result<Vec<_>>>()?;
    if r.at != bytes.len() {
        return Err(Error::Format(format!("{} trailing bytes after SPRD payload", bytes.len() - r.at)));
    }
    Dataset::new(Tensor::new(shape, values)?, labels, classes, split)
}

pub fn write_sprd(path: &Path, ds: &Dataset) -> Result<()> {
    crate::checkpoint::write_atomic(path, &encode_sprd(ds))
}

pub fn read_sprd(path: &Path) -> Result<Dataset> {
    decode_sprd(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::super::{gen_synthetic, SyntheticKind};
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let mut ds = gen_synthetic(SyntheticKind::TinyImages, 12, 4, 0.3, 5).unwrap();
        ds.split = Split::Test;
        let bytes = encode_sprd(&ds);
        let back = decode_sprd(&bytes).unwrap();
        assert_eq!(back, ds);
        assert_eq!(encode_sprd(&back), bytes);

        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.sprd");
        write_sprd(&p, &ds).unwrap();
        assert_eq!(read_sprd(&p).unwrap(), ds);
    }

    #[test]
    fn rejects_corruption() {
        let ds = gen_synthetic(SyntheticKind::Blobs, 6, 2, 0.1, 1).unwrap();
        let bytes = encode_sprd(&ds);
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode_sprd(&bad), Err(Error::BadMagic(_))));
        assert!(decode_sprd(&bytes[..bytes.len() - 1]).is_err());
        let mut long = bytes.clone();
        long.push(0);
        assert!(decode_sprd(&long).is_err());
        let mut label = bytes;
        let n = label.len();
        label[n - 4] = 9;
        assert!(matches!(decode_sprd(&label), Err(Error::LabelOutOfRange { .. })));
    }
}
