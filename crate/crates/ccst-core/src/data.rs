//! Synthetic multi-domain dataset generation and federation splits.
//!
//! Content is class-determined: each class renders a distinct parametric
//! pattern at a random position and scale, so a style-invariant decision
//! boundary exists. Style is domain-determined: a per-channel affine color
//! transform, a sinusoidal texture overlay, and Gaussian noise. Domains
//! therefore share semantics and differ in style.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{ClientId, ImageTensor, LabeledImage};

/// Rendering style of one domain.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainSpec {
    pub name: String,
    /// Per-channel multiplicative gain, all entries > 0.
    pub gain: [f64; 3],
    /// Per-channel additive bias.
    pub bias: [f64; 3],
    /// Cycles of the sinusoidal texture across the image diagonal.
    pub texture_freq: f64,
    /// Amplitude of the texture overlay.
    pub texture_amp: f64,
    /// Standard deviation of per-pixel Gaussian noise.
    pub noise_sigma: f64,
}

impl DomainSpec {
    pub fn validate(&self) -> Result<()> {
        let finite = self.gain.iter().chain(&self.bias).all(|v| v.is_finite())
            && self.texture_freq.is_finite()
            && self.texture_amp.is_finite()
            && self.noise_sigma.is_finite();
        if !finite {
            return Err(Error::InvalidConfig(format!(
                "non-finite parameter in domain spec {:?}",
                self.name
            )));
        }
        if self.gain.iter().any(|&g| g <= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "domain spec {:?} has non-positive gain",
                self.name
            )));
        }
        if self.noise_sigma < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "domain spec {:?} has negative noise sigma",
                self.name
            )));
        }
        Ok(())
    }
}

/// Four hand-tuned base styles; further domains rotate the channel gains.
pub fn default_specs(num_domains: usize) -> Vec<DomainSpec> {
    let base = [
        DomainSpec {
            name: "warm-bright".into(),
            gain: [1.00, 0.85, 0.70],
            bias: [0.05, 0.02, 0.00],
            texture_freq: 0.0,
            texture_amp: 0.0,
            noise_sigma: 0.015,
        },
        DomainSpec {
            name: "cool-dim".into(),
            gain: [0.30, 0.45, 0.95],
            bias: [0.00, 0.03, 0.05],
            texture_freq: 4.0,
            texture_amp: 0.05,
            noise_sigma: 0.030,
        },
        DomainSpec {
            name: "green-textured".into(),
            gain: [0.55, 1.00, 0.50],
            bias: [0.03, 0.06, 0.02],
            texture_freq: 9.0,
            texture_amp: 0.09,
            noise_sigma: 0.010,
        },
        DomainSpec {
            name: "flat-gray".into(),
            gain: [0.50, 0.48, 0.52],
            bias: [0.22, 0.22, 0.25],
            texture_freq: 2.0,
            texture_amp: 0.04,
            noise_sigma: 0.050,
        },
    ];
    (0..num_domains)
        .map(|d| {
            let mut spec = base[d % 4].clone();
            let rotation = d / 4;
            spec.gain.rotate_left(rotation % 3);
            if rotation > 0 {
                spec.name = format!("{}-{}", spec.name, rotation);
                for b in &mut spec.bias {
                    *b = (*b + 0.02 * rotation as f64).min(0.3);
                }
            }
            spec
        })
        .collect()
}

const PATTERN_FG: f64 = 0.85;
const PATTERN_BG: f64 = 0.10;

/// Renders the grayscale content pattern for a class: disk, ring, horizontal
/// stripes, or diagonal stripes; classes 4..8 reuse the shapes with inverted
/// foreground and background.
fn render_content(class: usize, size: usize, rng: &mut Rng) -> Vec<f64> {
    let s = size as f64;
    let (fg, bg) = if class < 4 {
        (PATTERN_FG, PATTERN_BG)
    } else {
        (PATTERN_BG, PATTERN_FG)
    };
    let mut base = vec![bg; size * size];
    match class % 4 {
        0 => {
            let cx = rng.uniform_in(0.3, 0.7) * s;
            let cy = rng.uniform_in(0.3, 0.7) * s;
            let r = rng.uniform_in(0.16, 0.30) * s;
            for y in 0..size {
                for x in 0..size {
                    let d = ((x as f64 - cx).powi(2) + (y as f64 - cy).powi(2)).sqrt();
                    if d <= r {
                        base[y * size + x] = fg;
                    }
                }
            }
        }
        1 => {
            let cx = rng.uniform_in(0.35, 0.65) * s;
            let cy = rng.uniform_in(0.35, 0.65) * s;
            let r = rng.uniform_in(0.20, 0.34) * s;
            let t = rng.uniform_in(0.05, 0.09) * s;
            for y in 0..size {
                for x in 0..size {
                    let d = ((x as f64 - cx).powi(2) + (y as f64 - cy).powi(2)).sqrt();
                    if (d - r).abs() <= t {
                        base[y * size + x] = fg;
                    }
                }
            }
        }
        2 => {
            let period = rng.uniform_in(5.0, 9.0);
            let phase = rng.uniform_in(0.0, period);
            for y in 0..size {
                let on = (y as f64 + phase).rem_euclid(period) < period / 2.0;
                if on {
                    for x in 0..size {
                        base[y * size + x] = fg;
                    }
                }
            }
        }
        _ => {
            let period = rng.uniform_in(6.0, 10.0);
            let phase = rng.uniform_in(0.0, period);
            for y in 0..size {
                for x in 0..size {
                    if ((x + y) as f64 + phase).rem_euclid(period) < period / 2.0 {
                        base[y * size + x] = fg;
                    }
                }
            }
        }
    }
    base
}

fn render_image(
    class: usize,
    size: usize,
    spec: &DomainSpec,
    rng: &mut Rng,
) -> Result<ImageTensor> {
    let base = render_content(class, size, rng);
    let texture_phase = rng.uniform_in(0.0, std::f64::consts::TAU);
    let mut data = Vec::with_capacity(3 * size * size);
    for c in 0..3 {
        for y in 0..size {
            for x in 0..size {
                let texture = spec.texture_amp
                    * (std::f64::consts::TAU * spec.texture_freq * (x + y) as f64
                        / (2.0 * size as f64)
                        + texture_phase)
                        .sin();
                let noise = spec.noise_sigma * rng.normal();
                let v = spec.gain[c] * base[y * size + x] + spec.bias[c] + texture + noise;
                data.push(v.clamp(0.0, 1.0));
            }
        }
    }
    ImageTensor::new(3, size, size, data)
}

/// Generates a class-balanced labeled image set per domain, deterministically
/// from the seed; domain d becomes client id d.
pub fn generate_domains(
    num_classes: usize,
    per_domain: usize,
    size: usize,
    specs: &[DomainSpec],
    seed: u64,
) -> Result<BTreeMap<ClientId, Vec<LabeledImage>>> {
    if specs.is_empty() {
        return Err(Error::EmptyInput("domain specs"));
    }
    if num_classes == 0 || num_classes > 8 {
        return Err(Error::InvalidConfig(format!(
            "num_classes {num_classes} outside 1..=8"
        )));
    }
    if per_domain == 0 || !per_domain.is_multiple_of(num_classes) {
        return Err(Error::InvalidConfig(format!(
            "per-domain count {per_domain} not divisible by {num_classes} classes"
        )));
    }
    if size < 4 {
        return Err(Error::InvalidConfig(format!("image size {size} below 4")));
    }
    if specs.len() > u16::MAX as usize {
        return Err(Error::DimensionOverflow(format!(
            "{} domains exceed u16",
            specs.len()
        )));
    }
    let mut out = BTreeMap::new();
    for (d, spec) in specs.iter().enumerate() {
        spec.validate()?;
        let id = ClientId(d as u16);
        let mut images = Vec::with_capacity(per_domain);
        for i in 0..per_domain {
            let class = i % num_classes;
            let mut rng = Rng::stream(seed, id, i as u64, "image");
            let image = render_image(class, size, spec, &mut rng)?;
            images.push(LabeledImage::new(image, class, num_classes, id)?);
        }
        out.insert(id, images);
    }
    Ok(out)
}

/// One source client's train/validation split.
#[derive(Debug, Clone)]
pub struct ClientData {
    pub train: Vec<LabeledImage>,
    pub validation: Vec<LabeledImage>,
}

/// A leave-one-domain-out federation: source clients with train/validation
/// splits, and the held-out target domain used purely as the test set.
#[derive(Debug, Clone)]
pub struct FederatedDataset {
    pub clients: BTreeMap<ClientId, ClientData>,
    pub target: ClientId,
    pub test: Vec<LabeledImage>,
    pub num_classes: usize,
}

impl FederatedDataset {
    pub fn num_source_clients(&self) -> usize {
        self.clients.len()
    }

    pub fn channels(&self) -> usize {
        self.test
            .first()
            .or_else(|| self.clients.values().next().and_then(|c| c.train.first()))
            .map(|i| i.image.channels())
            .unwrap_or(0)
    }
}

/// Splits every non-target domain into stratified train/validation sets at
/// `train_fraction` and promotes the target domain's entire data to the test
/// set. Per-class train counts stay within one image of exact
/// proportionality (largest-remainder rounding).
pub fn split_leave_one_out(
    domains: &BTreeMap<ClientId, Vec<LabeledImage>>,
    target: ClientId,
    train_fraction: f64,
    seed: u64,
) -> Result<FederatedDataset> {
    if !domains.contains_key(&target) {
        return Err(Error::UnknownClient(target.0));
    }
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "train fraction {train_fraction} outside (0, 1)"
        )));
    }
    if domains.len() < 2 {
        return Err(Error::InvalidConfig(
            "leave-one-out needs at least 2 domains".into(),
        ));
    }
    let num_classes = domains
        .values()
        .flatten()
        .map(|i| i.label + 1)
        .max()
        .unwrap_or(0);
    if num_classes == 0 {
        return Err(Error::EmptyInput("split_leave_one_out domains"));
    }

    let mut clients = BTreeMap::new();
    for (&id, images) in domains {
        if id == target {
            continue;
        }
        // stratify: shuffle within each class, then allocate train slots by
        // largest remainder so the totals hit round(m * fraction) exactly
        let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); num_classes];
        for (i, img) in images.iter().enumerate() {
            by_class[img.label].push(i);
        }
        let mut rng = Rng::stream(seed, id, 0, "split");
        for indices in &mut by_class {
            rng.shuffle(indices);
        }
        let total_train = ((images.len() as f64) * train_fraction).round() as usize;
        let mut take: Vec<usize> = by_class
            .iter()
            .map(|c| ((c.len() as f64) * train_fraction).floor() as usize)
            .collect();
        let mut remainders: Vec<(usize, f64)> = by_class
            .iter()
            .enumerate()
            .map(|(c, idx)| (c, (idx.len() as f64) * train_fraction - take[c] as f64))
            .collect();
        remainders.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        let mut assigned: usize = take.iter().sum();
        for (c, _) in remainders {
            if assigned >= total_train {
                break;
            }
            if take[c] < by_class[c].len() {
                take[c] += 1;
                assigned += 1;
            }
        }
        let mut train = Vec::new();
        let mut validation = Vec::new();
        for (c, indices) in by_class.iter().enumerate() {
            for (rank, &i) in indices.iter().enumerate() {
                if rank < take[c] {
                    train.push(images[i].clone());
                } else {
                    validation.push(images[i].clone());
                }
            }
        }
        if train.is_empty() || validation.is_empty() {
            return Err(Error::InvalidConfig(format!(
                "train fraction {train_fraction} leaves client {id} with an empty split"
            )));
        }
        clients.insert(id, ClientData { train, validation });
    }

    Ok(FederatedDataset {
        clients,
        target,
        test: domains[&target].clone(),
        num_classes,
    })
}

/// Parses the key-value domain-spec text format: `[domain NAME]` sections
/// with `gain`, `bias`, `texture_freq`, `texture_amp`, `noise_sigma` keys.
pub fn parse_domain_specs(text: &str) -> Result<Vec<DomainSpec>> {
    let mut specs: Vec<DomainSpec> = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some(name) = line.strip_prefix("[domain").and_then(|r| r.strip_suffix(']')) {
            specs.push(DomainSpec {
                name: name.trim().to_string(),
                gain: [1.0, 1.0, 1.0],
                bias: [0.0; 3],
                texture_freq: 0.0,
                texture_amp: 0.0,
                noise_sigma: 0.0,
            });
            continue;
        }
        let Some(spec) = specs.last_mut() else {
            return Err(Error::Format(format!(
                "line {}: key before any [domain] section",
                lineno + 1
            )));
        };
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::Format(format!("line {}: expected key = value", lineno + 1)));
        };
        let key = key.trim();
        let values: Vec<f64> = value
            .split_whitespace()
            .map(|v| {
                v.parse::<f64>()
                    .map_err(|_| Error::Format(format!("line {}: bad number {v:?}", lineno + 1)))
            })
            .collect::<Result<_>>()?;
        let triple = |vs: &[f64]| -> Result<[f64; 3]> {
            vs.try_into().map_err(|_| {
                Error::Format(format!("line {}: {key} needs three values", lineno + 1))
            })
        };
        let scalar = |vs: &[f64]| -> Result<f64> {
            if vs.len() == 1 {
                Ok(vs[0])
            } else {
                Err(Error::Format(format!("line {}: {key} needs one value", lineno + 1)))
            }
        };
        match key {
            "gain" => spec.gain = triple(&values)?,
            "bias" => spec.bias = triple(&values)?,
            "texture_freq" => spec.texture_freq = scalar(&values)?,
            "texture_amp" => spec.texture_amp = scalar(&values)?,
            "noise_sigma" => spec.noise_sigma = scalar(&values)?,
            other => {
                return Err(Error::Format(format!("line {}: unknown key {other:?}", lineno + 1)))
            }
        }
    }
    if specs.is_empty() {
        return Err(Error::Format("no [domain] sections found".into()));
    }
    for s in &specs {
        s.validate()?;
    }
    Ok(specs)
}

/// Renders specs in the format `parse_domain_specs` reads.
pub fn format_domain_specs(specs: &[DomainSpec]) -> String {
    let mut out = String::new();
    for s in specs {
        out.push_str(&format!("[domain {}]\n", s.name));
        out.push_str(&format!("gain = {} {} {}\n", s.gain[0], s.gain[1], s.gain[2]));
        out.push_str(&format!("bias = {} {} {}\n", s.bias[0], s.bias[1], s.bias[2]));
        out.push_str(&format!("texture_freq = {}\n", s.texture_freq));
        out.push_str(&format!("texture_amp = {}\n", s.texture_amp));
        out.push_str(&format!("noise_sigma = {}\n\n", s.noise_sigma));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generation_is_deterministic() {
        let specs = default_specs(2);
        let a = generate_domains(4, 8, 8, &specs, 3).unwrap();
        let b = generate_domains(4, 8, 8, &specs, 3).unwrap();
        assert_eq!(a, b);
        let c = generate_domains(4, 8, 8, &specs, 4).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn class_balance() {
        let specs = default_specs(1);
        let domains = generate_domains(4, 400, 8, &specs, 3).unwrap();
        let images = &domains[&ClientId(0)];
        for class in 0..4 {
            assert_eq!(images.iter().filter(|i| i.label == class).count(), 100);
        }
    }

    #[test]
    fn channel_gain_shows_in_domain_mean() {
        let mut strong = default_specs(1)[0].clone();
        strong.gain = [1.0, 0.6, 0.6];
        strong.bias = [0.0; 3];
        strong.texture_amp = 0.0;
        strong.noise_sigma = 0.01;
        let mut weak = strong.clone();
        weak.name = "weak".into();
        weak.gain = [0.2, 0.6, 0.6];
        let domains = generate_domains(4, 200, 16, &[strong, weak], 5).unwrap();
        let mean_ch0 = |images: &[LabeledImage]| {
            let mut sum = 0.0;
            let mut n = 0.0;
            for img in images {
                for v in img.image.channel(0) {
                    sum += v;
                    n += 1.0;
                }
            }
            sum / n
        };
        let ratio = mean_ch0(&domains[&ClientId(0)]) / mean_ch0(&domains[&ClientId(1)]);
        assert!((ratio - 5.0).abs() < 0.5, "ratio {ratio}");
    }

    #[test]
    fn values_stay_in_unit_range() {
        let domains = generate_domains(4, 16, 8, &default_specs(4), 9).unwrap();
        for images in domains.values() {
            for img in images {
                assert!(img.image.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
            }
        }
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let mut spec = default_specs(1)[0].clone();
        spec.gain[1] = 0.0;
        assert!(generate_domains(4, 8, 8, &[spec], 1).is_err());
        assert!(generate_domains(4, 9, 8, &default_specs(1), 1).is_err());
        assert!(generate_domains(9, 18, 8, &default_specs(1), 1).is_err());
    }

    #[test]
    fn split_sizes_match_paper_fractions() {
        let domains = generate_domains(4, 100, 8, &default_specs(4), 3).unwrap();
        let fed = split_leave_one_out(&domains, ClientId(3), 0.9, 11).unwrap();
        assert_eq!(fed.num_source_clients(), 3);
        assert_eq!(fed.test.len(), 100);
        for data in fed.clients.values() {
            assert_eq!(data.train.len(), 90);
            assert_eq!(data.validation.len(), 10);
        }
    }

    #[test]
    fn split_is_a_partition() {
        let domains = generate_domains(2, 40, 8, &default_specs(3), 3).unwrap();
        let fed = split_leave_one_out(&domains, ClientId(1), 0.8, 11).unwrap();
        for (&id, data) in &fed.clients {
            let total = data.train.len() + data.validation.len();
            assert_eq!(total, 40);
            // no image appears twice across its client's splits
            for t in &data.train {
                assert!(!data.validation.contains(t));
            }
            for img in data.train.iter().chain(&data.validation) {
                assert_eq!(img.domain, id);
                assert_ne!(img.domain, fed.target);
            }
        }
    }

    #[test]
    fn split_is_stratified() {
        let domains = generate_domains(4, 100, 8, &default_specs(2), 3).unwrap();
        let fed = split_leave_one_out(&domains, ClientId(1), 0.9, 11).unwrap();
        let data = &fed.clients[&ClientId(0)];
        for class in 0..4 {
            let in_train = data.train.iter().filter(|i| i.label == class).count();
            // 25 per class at 0.9 -> 22.5, within one of proportionality
            assert!((22..=23).contains(&in_train), "class {class}: {in_train}");
        }
    }

    #[test]
    fn split_rejects_unknown_target_and_bad_fraction() {
        let domains = generate_domains(2, 8, 8, &default_specs(2), 3).unwrap();
        assert!(matches!(
            split_leave_one_out(&domains, ClientId(9), 0.9, 1),
            Err(Error::UnknownClient(9))
        ));
        assert!(split_leave_one_out(&domains, ClientId(0), 1.0, 1).is_err());
    }

    #[test]
    fn spec_file_round_trip() {
        let specs = default_specs(3);
        let text = format_domain_specs(&specs);
        assert_eq!(parse_domain_specs(&text).unwrap(), specs);
    }

    #[test]
    fn spec_file_errors() {
        assert!(parse_domain_specs("gain = 1 1 1").is_err());
        assert!(parse_domain_specs("[domain x]\nwat = 1").is_err());
        assert!(parse_domain_specs("[domain x]\ngain = 1 1").is_err());
        assert!(parse_domain_specs("").is_err());
    }
}
