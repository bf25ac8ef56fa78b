//! Local cross-client style transfer.
//!
//! Each training image draws K distinct clients from the broadcast bank.
//! Drawing the client itself appends the original verbatim; drawing another
//! client applies that client's style (its overall style, or one of its
//! published single-image styles picked uniformly). The augmented set
//! therefore grows to K times the input size.

use std::collections::BTreeMap;

use crate::bank::GlobalStyleBank;
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::style::{
    fft_amplitude_exchange, generate, overall_amplitude, AmplitudeSpectrum, FeatureSpace,
    StyleMode,
};
use crate::tensor::{ClientId, ImageTensor, LabeledImage};

/// Which transfer primitive moves style between clients.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TransferBackend {
    /// Statistic matching on feature channels.
    Adain,
    /// DFT amplitude exchange.
    Fft,
}

impl std::fmt::Display for TransferBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TransferBackend::Adain => write!(f, "adain"),
            TransferBackend::Fft => write!(f, "fft"),
        }
    }
}

/// Augmentation settings: level K, style mode, transfer backend, and seed.
#[derive(Debug, Clone)]
pub struct AugmentConfig {
    /// Number of bank clients each image is transferred to, in 1..=N.
    pub k: usize,
    pub mode: StyleMode,
    pub backend: TransferBackend,
    /// Low-frequency window fraction for the fft backend; 1.0 swaps the
    /// full spectrum.
    pub fft_window: f64,
    pub seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            k: 3,
            mode: StyleMode::Overall,
            backend: TransferBackend::Adain,
            fft_window: 1.0,
            seed: 0,
        }
    }
}

/// Where an augmented entry came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    /// Verbatim copy of the source image (the drawn client was the owner).
    Original,
    /// Stylized with the drawn client's style.
    Stylized { style_source: ClientId },
}

impl std::fmt::Display for Provenance {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Provenance::Original => write!(f, "original"),
            Provenance::Stylized { style_source } => write!(f, "styled:{style_source}"),
        }
    }
}

/// One augmented training entry.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedEntry {
    pub image: LabeledImage,
    pub provenance: Provenance,
}

/// A client's augmented training set, in (image-major, draw-order) order.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedDataset {
    pub entries: Vec<AugmentedEntry>,
}

impl AugmentedDataset {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn originals(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| e.provenance == Provenance::Original)
            .count()
    }

    pub fn images(&self) -> impl Iterator<Item = &LabeledImage> {
        self.entries.iter().map(|e| &e.image)
    }
}

/// Per-client amplitude spectra for the fft backend. Exchanged in-process
/// only; the wire-format cost accounting covers style vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct AmplitudeBank {
    mode: StyleMode,
    entries: BTreeMap<ClientId, Vec<AmplitudeSpectrum>>,
}

impl AmplitudeBank {
    pub fn mode(&self) -> StyleMode {
        self.mode
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

    pub fn contains(&self, client: ClientId) -> bool {
        self.entries.contains_key(&client)
    }

    /// f64 payload bytes a wire transfer of this bank would carry.
    pub fn payload_bytes(&self) -> usize {
        self.entries
            .values()
            .flatten()
            .map(|a| a.data().len() * 8)
            .sum()
    }
}

/// Computes the amplitude spectra a client shares under the fft backend:
/// `j` spectra of distinct sampled images in single mode, or their
/// domain-averaged spectrum in overall mode.
pub fn publish_amplitudes(
    dataset: &[LabeledImage],
    mode: StyleMode,
    j: usize,
    rng: &mut Rng,
) -> Result<Vec<AmplitudeSpectrum>> {
    if dataset.is_empty() {
        return Err(Error::EmptyInput("publish_amplitudes dataset"));
    }
    match mode {
        StyleMode::Single => {
            if j == 0 || j > dataset.len() {
                return Err(Error::InvalidConfig(format!(
                    "cannot publish {j} amplitudes from {} images",
                    dataset.len()
                )));
            }
            Ok(rng
                .sample_without_replacement(dataset.len(), j)
                .into_iter()
                .map(|i| crate::style::amplitude(&dataset[i].image))
                .collect())
        }
        StyleMode::Overall => {
            let images: Vec<ImageTensor> = dataset.iter().map(|d| d.image.clone()).collect();
            Ok(vec![overall_amplitude(&images)?])
        }
    }
}

pub fn assemble_amplitude_bank(
    locals: Vec<(ClientId, Vec<AmplitudeSpectrum>)>,
    mode: StyleMode,
) -> Result<AmplitudeBank> {
    if locals.is_empty() {
        return Err(Error::EmptyInput("assemble_amplitude_bank"));
    }
    let mut entries = BTreeMap::new();
    for (id, spectra) in locals {
        if spectra.is_empty() {
            return Err(Error::EmptyInput("amplitude bank entry"));
        }
        if mode == StyleMode::Overall && spectra.len() != 1 {
            return Err(Error::ModeMismatch(format!(
                "overall mode carries one spectrum, got {}",
                spectra.len()
            )));
        }
        if entries.insert(id, spectra).is_some() {
            return Err(Error::DuplicateClient(id.0));
        }
    }
    Ok(AmplitudeBank { mode, entries })
}

/// The broadcast bank in whichever representation the backend exchanges.
#[derive(Debug, Clone, PartialEq)]
pub enum TransferBank {
    Style(GlobalStyleBank),
    Amplitude(AmplitudeBank),
}

impl TransferBank {
    pub fn mode(&self) -> StyleMode {
        match self {
            TransferBank::Style(b) => b.mode(),
            TransferBank::Amplitude(b) => b.mode(),
        }
    }

    pub fn client_count(&self) -> usize {
        match self {
            TransferBank::Style(b) => b.len(),
            TransferBank::Amplitude(b) => b.len(),
        }
    }

    fn client_ids(&self) -> Vec<ClientId> {
        match self {
            TransferBank::Style(b) => b.clients().collect(),
            TransferBank::Amplitude(b) => b.clients().collect(),
        }
    }

    fn contains(&self, client: ClientId) -> bool {
        match self {
            TransferBank::Style(b) => b.contains(client),
            TransferBank::Amplitude(b) => b.contains(client),
        }
    }
}

fn check_augment_inputs(bank: &TransferBank, cfg: &AugmentConfig, client: ClientId) -> Result<()> {
    match (bank, cfg.backend) {
        (TransferBank::Style(_), TransferBackend::Adain)
        | (TransferBank::Amplitude(_), TransferBackend::Fft) => {}
        _ => {
            return Err(Error::ModeMismatch(format!(
                "{} backend given the wrong bank representation",
                cfg.backend
            )))
        }
    }
    if bank.mode() != cfg.mode {
        return Err(Error::ModeMismatch(format!(
            "config wants {} styles but bank holds {}",
            cfg.mode,
            bank.mode()
        )));
    }
    if cfg.k == 0 || cfg.k > bank.client_count() {
        return Err(Error::InvalidConfig(format!(
            "augmentation level {} outside 1..={}",
            cfg.k,
            bank.client_count()
        )));
    }
    if !bank.contains(client) {
        return Err(Error::UnknownClient(client.0));
    }
    Ok(())
}

/// Augments one client's training set against the broadcast bank.
///
/// For each image, K distinct clients are drawn without replacement from
/// the bank (stream keyed by the image index); the output is fully
/// determined by `cfg.seed` and ordered image-major in draw order.
pub fn augment_client(
    images: &[LabeledImage],
    bank: &TransferBank,
    cfg: &AugmentConfig,
    client: ClientId,
    space: &dyn FeatureSpace,
) -> Result<AugmentedDataset> {
    check_augment_inputs(bank, cfg, client)?;
    let ids = bank.client_ids();
    let mut entries = Vec::with_capacity(images.len() * cfg.k);
    for (index, item) in images.iter().enumerate() {
        let mut rng = Rng::stream(cfg.seed, client, index as u64, "augment");
        for pick in rng.sample_without_replacement(ids.len(), cfg.k) {
            let drawn = ids[pick];
            if drawn == client {
                entries.push(AugmentedEntry {
                    image: item.clone(),
                    provenance: Provenance::Original,
                });
                continue;
            }
            let stylized = match bank {
                TransferBank::Style(styles) => {
                    let local = &styles.entry(drawn).expect("checked membership").styles;
                    let style = match cfg.mode {
                        StyleMode::Overall => &local[0],
                        StyleMode::Single => &local[rng.below(local.len())],
                    };
                    generate(&item.image, style, space)?
                }
                TransferBank::Amplitude(amps) => {
                    let local = &amps.entries[&drawn];
                    let target = match cfg.mode {
                        StyleMode::Overall => &local[0],
                        StyleMode::Single => &local[rng.below(local.len())],
                    };
                    fft_amplitude_exchange(&item.image, target, cfg.fft_window)?
                }
            };
            entries.push(AugmentedEntry {
                image: LabeledImage {
                    image: stylized,
                    label: item.label,
                    domain: item.domain,
                },
                provenance: Provenance::Stylized { style_source: drawn },
            });
        }
    }
    Ok(AugmentedDataset { entries })
}

/// One cell of the control-experiment grid.
#[derive(Debug)]
pub struct SweepCell {
    pub mode: StyleMode,
    pub k: usize,
    pub per_client: BTreeMap<ClientId, AugmentedDataset>,
}

/// Materializes the {single, overall} x K augmentation grid used by the
/// control experiments. Each cell is independently seeded from the base
/// config's seed.
pub fn sweep_grid(
    clients: &BTreeMap<ClientId, Vec<LabeledImage>>,
    single_bank: &TransferBank,
    overall_bank: &TransferBank,
    ks: &[usize],
    base: &AugmentConfig,
    space: &dyn FeatureSpace,
) -> Result<Vec<SweepCell>> {
    let mut cells = Vec::with_capacity(2 * ks.len());
    for (mode_idx, (mode, bank)) in [
        (StyleMode::Single, single_bank),
        (StyleMode::Overall, overall_bank),
    ]
    .into_iter()
    .enumerate()
    {
        for &k in ks {
            let cfg = AugmentConfig {
                k,
                mode,
                seed: Rng::derive(base.seed, ClientId(mode_idx as u16), k as u64, "sweep-cell"),
                ..base.clone()
            };
            let mut per_client = BTreeMap::new();
            for (&id, images) in clients {
                per_client.insert(id, augment_client(images, bank, &cfg, id, space)?);
            }
            cells.push(SweepCell { mode, k, per_client });
        }
    }
    Ok(cells)
}
