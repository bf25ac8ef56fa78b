//! Client style publication, server-side bank assembly, and the wire format.
//!
//! Wire format "CCSB" (little-endian): magic "CCSB", u8 version=1, u8 mode
//! (0=overall, 1=single), u16 client_count, u16 channels, then per client
//! `u16 client_id, u16 style_count, style_count x (channels f64 mu,
//! channels f64 sigma)`, and a trailing u32 CRC32 over all preceding bytes.
//! This encoding is the unit of both upload and broadcast, so its byte
//! length is the per-round communication cost.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::io::crc32;
use crate::rng::Rng;
use crate::style::{extract_overall_style, extract_style, FeatureSpace, StyleMode, StyleVector};
use crate::tensor::{ClientId, LabeledImage};

pub const BANK_MAGIC: &[u8; 4] = b"CCSB";
pub const BANK_VERSION: u8 = 1;

/// The styles one client uploads: J single-image styles or one overall style.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalStyleBank {
    pub client: ClientId,
    pub styles: Vec<StyleVector>,
}

impl LocalStyleBank {
    pub fn new(client: ClientId, styles: Vec<StyleVector>) -> Result<Self> {
        if styles.is_empty() {
            return Err(Error::EmptyInput("local style bank"));
        }
        let mode = styles[0].provenance;
        let channels = styles[0].channels();
        for s in &styles {
            if s.provenance != mode {
                return Err(Error::ModeMismatch(
                    "mixed provenance in one local bank".into(),
                ));
            }
            if s.channels() != channels {
                return Err(Error::ShapeMismatch(format!(
                    "style channel counts {} vs {}",
                    s.channels(),
                    channels
                )));
            }
        }
        if mode == StyleMode::Overall && styles.len() != 1 {
            return Err(Error::ModeMismatch(format!(
                "overall mode carries one style, got {}",
                styles.len()
            )));
        }
        Ok(Self { client, styles })
    }

    pub fn mode(&self) -> StyleMode {
        self.styles[0].provenance
    }

    pub fn channels(&self) -> usize {
        self.styles[0].channels()
    }
}

/// The server-assembled, broadcast collection of every client's styles.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalStyleBank {
    mode: StyleMode,
    channels: usize,
    entries: BTreeMap<ClientId, LocalStyleBank>,
}

impl GlobalStyleBank {
    pub fn mode(&self) -> StyleMode {
        self.mode
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn clients(&self) -> impl Iterator<Item = ClientId> + '_ {
        self.entries.keys().copied()
    }

    pub fn entry(&self, client: ClientId) -> Option<&LocalStyleBank> {
        self.entries.get(&client)
    }

    pub fn contains(&self, client: ClientId) -> bool {
        self.entries.contains_key(&client)
    }

    /// Total number of style vectors across all clients.
    pub fn style_count(&self) -> usize {
        self.entries.values().map(|l| l.styles.len()).sum()
    }
}

/// Computes the styles a client uploads.
///
/// Single mode samples `j` distinct training images uniformly without
/// replacement; overall mode pools statistics over the whole training set,
/// or over `overall_sample` images drawn without replacement when capped.
pub fn publish_styles(
    client: ClientId,
    dataset: &[LabeledImage],
    mode: StyleMode,
    j: usize,
    space: &dyn FeatureSpace,
    rng: &mut Rng,
    overall_sample: Option<usize>,
) -> Result<LocalStyleBank> {
    if dataset.is_empty() {
        return Err(Error::EmptyInput("publish_styles dataset"));
    }
    let styles = match mode {
        StyleMode::Single => {
            if j == 0 {
                return Err(Error::InvalidConfig("single mode needs j >= 1".into()));
            }
            if j > dataset.len() {
                return Err(Error::InvalidConfig(format!(
                    "cannot publish {j} single styles from {} images",
                    dataset.len()
                )));
            }
            rng.sample_without_replacement(dataset.len(), j)
                .into_iter()
                .map(|i| extract_style(&dataset[i].image, space))
                .collect::<Result<Vec<_>>>()?
        }
        StyleMode::Overall => {
            let images: Vec<_> = match overall_sample {
                Some(m) if m < dataset.len() => {
                    if m == 0 {
                        return Err(Error::InvalidConfig(
                            "overall style sample must be >= 1".into(),
                        ));
                    }
                    rng.sample_without_replacement(dataset.len(), m)
                        .into_iter()
                        .map(|i| dataset[i].image.clone())
                        .collect()
                }
                _ => dataset.iter().map(|d| d.image.clone()).collect(),
            };
            vec![extract_overall_style(&images, space)?]
        }
    };
    LocalStyleBank::new(client, styles)
}

/// Concatenates local banks into the global style bank. Assembly is
/// order-independent; the result is keyed and serialized by client id.
pub fn assemble_bank(locals: Vec<LocalStyleBank>) -> Result<GlobalStyleBank> {
    if locals.is_empty() {
        return Err(Error::EmptyInput("assemble_bank"));
    }
    let mode = locals[0].mode();
    let channels = locals[0].channels();
    let mut entries = BTreeMap::new();
    for local in locals {
        if local.mode() != mode {
            return Err(Error::ModeMismatch(format!(
                "bank mixes {} and {} styles",
                mode,
                local.mode()
            )));
        }
        if local.channels() != channels {
            return Err(Error::ShapeMismatch(format!(
                "bank channel counts {} vs {}",
                local.channels(),
                channels
            )));
        }
        let id = local.client;
        if entries.insert(id, local).is_some() {
            return Err(Error::DuplicateClient(id.0));
        }
    }
    Ok(GlobalStyleBank {
        mode,
        channels,
        entries,
    })
}

/// Serializes a bank into the "CCSB" wire layout.
pub fn encode_bank(bank: &GlobalStyleBank) -> Result<Vec<u8>> {
    if bank.entries.len() > u16::MAX as usize {
        return Err(Error::DimensionOverflow(format!(
            "{} clients exceed u16",
            bank.entries.len()
        )));
    }
    if bank.channels > u16::MAX as usize {
        return Err(Error::DimensionOverflow(format!(
            "{} channels exceed u16",
            bank.channels
        )));
    }
    let mut out = Vec::new();
    out.extend_from_slice(BANK_MAGIC);
    out.push(BANK_VERSION);
    out.push(match bank.mode {
        StyleMode::Overall => 0,
        StyleMode::Single => 1,
    });
    out.extend_from_slice(&(bank.entries.len() as u16).to_le_bytes());
    out.extend_from_slice(&(bank.channels as u16).to_le_bytes());
    for (id, local) in &bank.entries {
        if local.styles.len() > u16::MAX as usize {
            return Err(Error::DimensionOverflow(format!(
                "{} styles exceed u16",
                local.styles.len()
            )));
        }
        out.extend_from_slice(&id.0.to_le_bytes());
        out.extend_from_slice(&(local.styles.len() as u16).to_le_bytes());
        for style in &local.styles {
            for v in style.mu.iter().chain(&style.sigma) {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    let checksum = crc32(&out);
    out.extend_from_slice(&checksum.to_le_bytes());
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Truncated(format!(
                "{what} needs {n} bytes at offset {}",
                self.pos
            )));
        }
        let slice = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        Ok(self
            .take(n * 8, what)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

/// Parses the "CCSB" wire layout, verifying the trailing checksum.
pub fn decode_bank(bytes: &[u8]) -> Result<GlobalStyleBank> {
    if bytes.len() < 14 {
        return Err(Error::Truncated(format!(
            "bank needs at least 14 bytes, got {}",
            bytes.len()
        )));
    }
    if &bytes[0..4] != BANK_MAGIC {
        return Err(Error::Format("bad bank magic".into()));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().unwrap());
    let computed = crc32(body);
    if stored != computed {
        return Err(Error::ChecksumMismatch { stored, computed });
    }
    let mut r = Reader { bytes: body, pos: 4 };
    let version = r.take(1, "version")?[0];
    if version != BANK_VERSION {
        return Err(Error::VersionMismatch {
            got: version,
            expected: BANK_VERSION,
        });
    }
    let mode = match r.take(1, "mode")?[0] {
        0 => StyleMode::Overall,
        1 => StyleMode::Single,
        m => return Err(Error::Format(format!("unknown bank mode byte {m}"))),
    };
    let client_count = r.u16("client count")? as usize;
    let channels = r.u16("channels")? as usize;
    if client_count == 0 || channels == 0 {
        return Err(Error::Format("empty bank".into()));
    }
    let mut entries = BTreeMap::new();
    for _ in 0..client_count {
        let id = ClientId(r.u16("client id")?);
        let style_count = r.u16("style count")? as usize;
        if style_count == 0 {
            return Err(Error::Format(format!("client {id} has no styles")));
        }
        let mut styles = Vec::with_capacity(style_count);
        for _ in 0..style_count {
            let mu = r.f64s(channels, "style mean")?;
            let sigma = r.f64s(channels, "style sigma")?;
            styles.push(StyleVector::new(mu, sigma, mode)?);
        }
        if entries.insert(id, LocalStyleBank::new(id, styles)?).is_some() {
            return Err(Error::DuplicateClient(id.0));
        }
    }
    if r.pos != body.len() {
        return Err(Error::Format(format!(
            "{} trailing bytes after bank entries",
            body.len() - r.pos
        )));
    }
    Ok(GlobalStyleBank {
        mode,
        channels,
        entries,
    })
}
