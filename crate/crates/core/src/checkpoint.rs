//! `SPRC` checkpoint container.
//!
//! Layout: the magic `SPRC`, a little-endian `u32` format version, a UTF-8
//! JSON header, then every parameter as a little-endian `f32` in global index
//! order starting at the header's `payload_offset`. Parameters are rounded to
//! the nearest `f32` on save, so zeros (pruned weights) survive exactly.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::groups::{EntityPartition, PruneMask};
use crate::nnet::{LayerSpec, Network};
use crate::spr::SprParams;

pub const MAGIC: &[u8; 4] = b"SPRC";
pub const FORMAT_VERSION: u32 = 1;
const PREFIX: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointHeader {
    pub input_shape: Vec<usize>,
    pub layers: Vec<LayerSpec>,
    pub param_count: usize,
    pub payload_offset: usize,
    #[serde(default)]
    pub partition: Option<EntityPartition>,
    #[serde(default)]
    pub mask: Option<PruneMask>,
    #[serde(default)]
    pub spr: Option<SprParams>,
    /// Free-form tag such as `phase1`, `finetune` or `diverged`.
    #[serde(default)]
    pub tag: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub params: Vec<f64>,
}

impl Checkpoint {
    pub fn from_network(net: &Network, tag: &str) -> Self {
        Self {
            header: CheckpointHeader {
                input_shape: net.input_shape().to_vec(),
                layers: net.specs(),
                param_count: net.param_count(),
                payload_offset: 0,
                partition: None,
                mask: None,
                spr: None,
                tag: tag.to_owned(),
            },
            params: net.get_params(),
        }
    }

    pub fn with_partition(mut self, partition: EntityPartition) -> Self {
        self.header.partition = Some(partition);
        self
    }

    pub fn with_mask(mut self, mask: PruneMask) -> Self {
        self.header.mask = Some(mask);
        self
    }

    pub fn with_spr(mut self, spr: SprParams) -> Self {
        self.header.spr = Some(spr);
        self
    }

    pub fn network(&self) -> Result<Network> {
        Network::with_params(self.header.input_shape.clone(), self.header.layers.clone(), &self.params)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        // the header records its own end, so iterate until the length settles
        let mut header = self.header.clone();
        header.param_count = self.params.len();
        let mut json = Vec::new();
        for _ in 0..4 {
            json = serde_json::to_vec(&header)?;
            let offset = PREFIX + json.len();
            if header.payload_offset == offset {
                break;
            }
            header.payload_offset = offset;
        }
        let mut out = Vec::with_capacity(header.payload_offset + 4 * self.params.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&json);
        out.resize(header.payload_offset, b' ');
        for &p in &self.params {
            out.extend_from_slice(&(p as f32).to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < PREFIX || &bytes[..4] != MAGIC {
            return Err(Error::BadMagic("expected SPRC checkpoint".into()));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let mut stream = serde_json::Deserializer::from_slice(&bytes[PREFIX..]).into_iter::<CheckpointHeader>();
        let header = stream
            .next()
            .ok_or_else(|| Error::Format("missing checkpoint header".into()))??;
        let json_end = PREFIX + stream.byte_offset();
        let offset = header.payload_offset;
        if offset < json_end || offset > bytes.len() {
            return Err(Error::Format(format!("payload offset {offset} outside {json_end}..={}", bytes.len())));
        }
        let payload = &bytes[offset..];
        if header.param_count.checked_mul(4) != Some(payload.len()) {
            return Err(Error::Format(format!(
                "payload has {} bytes for {} parameters",
                payload.len(),
                header.param_count
            )));
        }
        let params = payload
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes(c.try_into().expect("4 bytes"))))
            .collect();
        let ckpt = Self { header, params };
        ckpt.validate()?;
        Ok(ckpt)
    }

    /// Checks that the header describes a buildable network and that the
    /// partition and mask fit it.
    pub fn validate(&self) -> Result<()> {
        let net = self.network()?;
        if let Some(p) = &self.header.partition {
            if p.param_count() != net.param_count() {
                return Err(Error::Length { expected: net.param_count(), got: p.param_count() });
            }
            if let Some(m) = &self.header.mask {
                m.check(p)?;
            }
        } else if self.header.mask.is_some() {
            return Err(Error::Format("mask without a partition".into()));
        }
        if let Some(s) = &self.header.spr {
            s.validate()?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)
            .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
        Self::from_bytes(&bytes)
    }
}

/// Writes through a sibling temporary file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::groups::{build_filter_partition, PartitionPolicy};

    fn sample() -> Checkpoint {
        let net = Network::convnet_s(3, 8, 4, 8, 3, 1).unwrap();
        let part = build_filter_partition(&net, PartitionPolicy::Filters).unwrap();
        let mut verdicts = vec![false; part.len()];
        verdicts[2] = true;
        let mask = PruneMask::from_verdicts(&part, verdicts);
        Checkpoint::from_network(&net, "phase1")
            .with_partition(part)
            .with_mask(mask)
            .with_spr(SprParams::new(0.5, 0.3).unwrap())
    }

    #[test]
    fn round_trip_rounds_to_f32() {
        let ckpt = sample();
        let bytes = ckpt.to_bytes().unwrap();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back.header.mask, ckpt.header.mask);
        assert_eq!(back.header.partition, ckpt.header.partition);
        for (a, b) in back.params.iter().zip(&ckpt.params) {
            assert_eq!(*a, f64::from(*b as f32));
        }
        // a second trip is exact
        assert_eq!(back.to_bytes().unwrap(), bytes);
        assert_eq!(&bytes[back.header.payload_offset - 1..back.header.payload_offset], b"}");
    }

    #[test]
    fn save_and_load() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nested/run.sprc");
        let ckpt = sample();
        ckpt.save(&path).unwrap();
        ckpt.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert!(back.network().unwrap().same_architecture(&ckpt.network().unwrap()));
    }

    #[test]
    fn rejects_corruption() {
        let bytes = sample().to_bytes().unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(Checkpoint::from_bytes(&bad), Err(Error::BadMagic(_))));
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 2]).is_err());
        let mut version = bytes.clone();
        version[4] = 9;
        assert!(Checkpoint::from_bytes(&version).is_err());
        let mut json = bytes;
        json[9] = b'#';
        assert!(Checkpoint::from_bytes(&json).is_err());
        assert!(Checkpoint::from_bytes(b"SPR").is_err());
    }
}
