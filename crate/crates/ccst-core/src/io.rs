//! Bit-exact file formats: ".cct" tensors and dataset manifests.
//!
//! Tensor format (little-endian): magic "CCT1", u16 channels, u32 height,
//! u32 width, then channels*height*width f64 values row-major. A dataset
//! manifest is a text file of `path<TAB>label<TAB>domain` lines; augmented
//! manifests append a provenance column.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{ClientId, ImageTensor, LabeledImage};

pub const TENSOR_MAGIC: &[u8; 4] = b"CCT1";
const TENSOR_HEADER_LEN: usize = 4 + 2 + 4 + 4;

/// Serializes a tensor into the ".cct" byte layout.
pub fn tensor_to_bytes(t: &ImageTensor) -> Result<Vec<u8>> {
    if t.channels() > u16::MAX as usize {
        return Err(Error::DimensionOverflow(format!(
            "{} channels exceed u16",
            t.channels()
        )));
    }
    if t.height() > u32::MAX as usize || t.width() > u32::MAX as usize {
        return Err(Error::DimensionOverflow(format!(
            "{}x{} exceeds u32",
            t.height(),
            t.width()
        )));
    }
    let mut out = Vec::with_capacity(TENSOR_HEADER_LEN + t.data().len() * 8);
    out.extend_from_slice(TENSOR_MAGIC);
    out.extend_from_slice(&(t.channels() as u16).to_le_bytes());
    out.extend_from_slice(&(t.height() as u32).to_le_bytes());
    out.extend_from_slice(&(t.width() as u32).to_le_bytes());
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

/// Parses the ".cct" byte layout back into a tensor.
pub fn tensor_from_bytes(bytes: &[u8]) -> Result<ImageTensor> {
    if bytes.len() < TENSOR_HEADER_LEN {
        return Err(Error::Truncated(format!(
            "tensor header needs {TENSOR_HEADER_LEN} bytes, got {}",
            bytes.len()
        )));
    }
    if &bytes[0..4] != TENSOR_MAGIC {
        return Err(Error::Format(format!(
            "bad tensor magic {:?}",
            &bytes[0..4]
        )));
    }
    let channels = u16::from_le_bytes([bytes[4], bytes[5]]) as usize;
    let height = u32::from_le_bytes(bytes[6..10].try_into().unwrap()) as usize;
    let width = u32::from_le_bytes(bytes[10..14].try_into().unwrap()) as usize;
    let count = channels
        .checked_mul(height)
        .and_then(|v| v.checked_mul(width))
        .and_then(|v| v.checked_mul(8))
        .ok_or_else(|| Error::DimensionOverflow(format!("{channels}x{height}x{width}")))?;
    let body = &bytes[TENSOR_HEADER_LEN..];
    if body.len() < count {
        return Err(Error::Truncated(format!(
            "tensor body needs {count} bytes, got {}",
            body.len()
        )));
    }
    if body.len() > count {
        return Err(Error::Format(format!(
            "{} trailing bytes after tensor body",
            body.len() - count
        )));
    }
    let data: Vec<f64> = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    ImageTensor::new(channels, height, width, data)
}

pub fn save_tensor(path: &Path, t: &ImageTensor) -> Result<()> {
    fs::write(path, tensor_to_bytes(t)?)?;
    Ok(())
}

pub fn load_tensor(path: &Path) -> Result<ImageTensor> {
    tensor_from_bytes(&fs::read(path)?)
}

/// One dataset manifest line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub path: String,
    pub label: usize,
    pub domain: ClientId,
}

pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<()> {
    let mut out = String::new();
    for e in entries {
        out.push_str(&format!("{}\t{}\t{}\n", e.path, e.label, e.domain.0));
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let text = fs::read_to_string(path)?;
    let mut entries = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split('\t');
        let (Some(p), Some(l), Some(d)) = (parts.next(), parts.next(), parts.next()) else {
            return Err(Error::Format(format!(
                "manifest line {} needs path\\tlabel\\tdomain",
                lineno + 1
            )));
        };
        let label = l
            .parse::<usize>()
            .map_err(|_| Error::Format(format!("bad label {l:?} on line {}", lineno + 1)))?;
        let domain = d
            .parse::<u16>()
            .map_err(|_| Error::Format(format!("bad domain {d:?} on line {}", lineno + 1)))?;
        entries.push(ManifestEntry {
            path: p.to_string(),
            label,
            domain: ClientId(domain),
        });
    }
    Ok(entries)
}

/// Loads every manifest entry's tensor, resolving paths against `base`.
pub fn load_dataset(base: &Path, entries: &[ManifestEntry], num_classes: usize) -> Result<Vec<LabeledImage>> {
    entries
        .iter()
        .map(|e| {
            let image = load_tensor(&base.join(&e.path))?;
            LabeledImage::new(image, e.label, num_classes, e.domain)
        })
        .collect()
}

/// CRC32 (IEEE) over a byte slice, shared by the bank and checkpoint codecs.
pub fn crc32(bytes: &[u8]) -> u32 {
    crc32fast::hash(bytes)
}
