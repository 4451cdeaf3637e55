//! Versioned binary feature dumps.
//!
//! Layout: magic `RVXF`, version (u16), layout tag (u16), rows (u32),
//! cols (u32), hop (u32), sample rate (u32), then `rows * cols` f32 values.
//! All integers and floats are little-endian.

use std::io::{Read, Write};
use std::path::Path;

use super::AudioError;

pub const DUMP_VERSION: u16 = 1;
const MAGIC: &[u8; 4] = b"RVXF";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DumpLayout {
    Magnitude,
    VocoderFeatures,
    F0Hz,
    ContentCodes,
}

impl DumpLayout {
    fn tag(self) -> u16 {
        match self {
            DumpLayout::Magnitude => 1,
            DumpLayout::VocoderFeatures => 2,
            DumpLayout::F0Hz => 3,
            DumpLayout::ContentCodes => 4,
        }
    }

    fn from_tag(tag: u16) -> Option<Self> {
        Some(match tag {
            1 => DumpLayout::Magnitude,
            2 => DumpLayout::VocoderFeatures,
            3 => DumpLayout::F0Hz,
            4 => DumpLayout::ContentCodes,
            _ => return None,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureDump {
    pub layout: DumpLayout,
    pub rows: usize,
    pub cols: usize,
    /// Hop in samples of the frame grid.
    pub hop: u32,
    pub sample_rate: u32,
    pub data: Vec<f32>,
}

impl FeatureDump {
    pub fn new(layout: DumpLayout, rows: usize, cols: usize, hop: u32, sample_rate: u32, data: Vec<f32>) -> Result<Self, AudioError> {
        if data.len() != rows * cols {
            return Err(AudioError::Dump(format!("{} values for shape {rows}x{cols}", data.len())));
        }
        Ok(Self { layout, rows, cols, hop, sample_rate, data })
    }
}

pub fn write_dump(path: impl AsRef<Path>, dump: &FeatureDump) -> Result<(), AudioError> {
    let mut buf = Vec::with_capacity(24 + dump.data.len() * 4);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&DUMP_VERSION.to_le_bytes());
    buf.extend_from_slice(&dump.layout.tag().to_le_bytes());
    for v in [dump.rows as u32, dump.cols as u32, dump.hop, dump.sample_rate] {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    for v in &dump.data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    std::fs::File::create(path)?.write_all(&buf)?;
    Ok(())
}

pub fn read_dump(path: impl AsRef<Path>) -> Result<FeatureDump, AudioError> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() < 24 || &bytes[..4] != MAGIC {
        return Err(AudioError::Dump("bad magic".into()));
    }
    let u16_at = |i: usize| u16::from_le_bytes([bytes[i], bytes[i + 1]]);
    let u32_at = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
    let version = u16_at(4);
    if version != DUMP_VERSION {
        return Err(AudioError::Dump(format!("unsupported version {version}")));
    }
    let layout = DumpLayout::from_tag(u16_at(6)).ok_or_else(|| AudioError::Dump(format!("unknown layout tag {}", u16_at(6))))?;
    let (rows, cols) = (u32_at(8) as usize, u32_at(12) as usize);
    let body = &bytes[24..];
    if body.len() != rows * cols * 4 {
        return Err(AudioError::Dump(format!("payload is {} bytes, header promises {rows}x{cols}", body.len())));
    }
    let data = body.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
    FeatureDump::new(layout, rows, cols, u32_at(16), u32_at(20), data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.bin");
        let d = FeatureDump::new(DumpLayout::VocoderFeatures, 2, 3, 160, 32000, vec![1.0, -2.0, 3.5, 0.0, 1e-7, f32::MAX]).unwrap();
        write_dump(&p, &d).unwrap();
        assert_eq!(read_dump(&p).unwrap(), d);
    }

    #[test]
    fn truncated_and_wrong_version_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.bin");
        let d = FeatureDump::new(DumpLayout::F0Hz, 4, 1, 160, 32000, vec![0.0; 4]).unwrap();
        write_dump(&p, &d).unwrap();
        let mut bytes = std::fs::read(&p).unwrap();
        std::fs::write(&p, &bytes[..bytes.len() - 2]).unwrap();
        assert!(matches!(read_dump(&p), Err(AudioError::Dump(_))));
        bytes[4] = 9;
        std::fs::write(&p, &bytes).unwrap();
        assert!(matches!(read_dump(&p), Err(AudioError::Dump(_))));
    }

    #[test]
    fn shape_mismatch() {
        assert!(FeatureDump::new(DumpLayout::Magnitude, 2, 2, 160, 32000, vec![0.0; 3]).is_err());
    }
}
