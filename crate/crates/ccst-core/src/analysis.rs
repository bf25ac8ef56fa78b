//! Distribution-uniformization analysis: how far apart are the source
//! clients' grey-level histograms, and how much closer does cross-client
//! style transfer bring them?

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::metrics::grayscale_histogram;
use crate::tensor::{ClientId, LabeledImage};

/// A client's average grey-level histogram: mean pixel count per image in
/// each bin.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientHistogramProfile {
    pub client: ClientId,
    pub histogram: Vec<f64>,
    pub image_count: usize,
}

impl ClientHistogramProfile {
    pub fn bins(&self) -> usize {
        self.histogram.len()
    }

    /// Histogram normalized to unit mass.
    pub fn normalized(&self) -> Vec<f64> {
        let total: f64 = self.histogram.iter().sum();
        self.histogram.iter().map(|&c| c / total).collect()
    }
}

/// Mean of per-image grey-level histograms over a client's images.
pub fn client_profile(
    client: ClientId,
    images: &[LabeledImage],
    bins: usize,
) -> Result<ClientHistogramProfile> {
    if images.is_empty() {
        return Err(Error::EmptyInput("client_profile"));
    }
    let mut acc = vec![0.0; bins];
    for item in images {
        let h = grayscale_histogram(&item.image, bins)?;
        for (a, v) in acc.iter_mut().zip(&h) {
            *a += v;
        }
    }
    let inv = 1.0 / images.len() as f64;
    for a in &mut acc {
        *a *= inv;
    }
    Ok(ClientHistogramProfile {
        client,
        histogram: acc,
        image_count: images.len(),
    })
}

/// Mean pairwise L1 distance between normalized profiles, over unordered
/// client pairs. Zero for identical profiles, at most 2 for disjoint ones.
pub fn uniformity_distance(profiles: &[ClientHistogramProfile]) -> Result<f64> {
    if profiles.len() < 2 {
        return Err(Error::InvalidConfig(
            "uniformity distance needs >= 2 profiles".into(),
        ));
    }
    let bins = profiles[0].bins();
    for p in profiles {
        if p.bins() != bins {
            return Err(Error::ShapeMismatch(format!(
                "profile bins {} vs {}",
                p.bins(),
                bins
            )));
        }
    }
    let normalized: Vec<Vec<f64>> = profiles.iter().map(|p| p.normalized()).collect();
    let mut sum = 0.0;
    let mut pairs = 0usize;
    for i in 0..normalized.len() {
        for j in i + 1..normalized.len() {
            sum += normalized[i]
                .iter()
                .zip(&normalized[j])
                .map(|(a, b)| (a - b).abs())
                .sum::<f64>();
            pairs += 1;
        }
    }
    Ok(sum / pairs as f64)
}

/// One client pair's L1 distances before and after augmentation.
#[derive(Debug, Clone)]
pub struct PairDistance {
    pub a: ClientId,
    pub b: ClientId,
    pub before: f64,
    pub after: f64,
}

/// Before/after comparison of client histogram spread.
#[derive(Debug, Clone)]
pub struct UniformityReport {
    pub before: Vec<ClientHistogramProfile>,
    pub after: Vec<ClientHistogramProfile>,
    pub before_distance: f64,
    pub after_distance: f64,
    pub pairs: Vec<PairDistance>,
}

impl UniformityReport {
    /// before minus after; positive means distributions grew more uniform.
    pub fn margin(&self) -> f64 {
        self.before_distance - self.after_distance
    }
}

fn pair_l1(a: &ClientHistogramProfile, b: &ClientHistogramProfile) -> f64 {
    a.normalized()
        .iter()
        .zip(&b.normalized())
        .map(|(x, y)| (x - y).abs())
        .sum()
}

/// Profiles every client before and after augmentation and reports the
/// uniformity distances side by side, one row per client pair.
pub fn before_after_report(
    federation: &BTreeMap<ClientId, Vec<LabeledImage>>,
    augmented: &BTreeMap<ClientId, Vec<LabeledImage>>,
    bins: usize,
) -> Result<UniformityReport> {
    if federation.keys().ne(augmented.keys()) {
        return Err(Error::InvalidConfig(
            "before/after federations have different clients".into(),
        ));
    }
    let before: Vec<ClientHistogramProfile> = federation
        .iter()
        .map(|(&id, images)| client_profile(id, images, bins))
        .collect::<Result<_>>()?;
    let after: Vec<ClientHistogramProfile> = augmented
        .iter()
        .map(|(&id, images)| client_profile(id, images, bins))
        .collect::<Result<_>>()?;
    let before_distance = uniformity_distance(&before)?;
    let after_distance = uniformity_distance(&after)?;
    let mut pairs = Vec::new();
    for i in 0..before.len() {
        for j in i + 1..before.len() {
            pairs.push(PairDistance {
                a: before[i].client,
                b: before[j].client,
                before: pair_l1(&before[i], &before[j]),
                after: pair_l1(&after[i], &after[j]),
            });
        }
    }
    Ok(UniformityReport {
        before,
        after,
        before_distance,
        after_distance,
        pairs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::ImageTensor;

    fn gray_client(id: u16, level: f64, count: usize) -> (ClientId, Vec<LabeledImage>) {
        let images = (0..count)
            .map(|_| {
                LabeledImage::new(
                    ImageTensor::constant(3, 2, 2, level).unwrap(),
                    0,
                    1,
                    ClientId(id),
                )
                .unwrap()
            })
            .collect();
        (ClientId(id), images)
    }

    #[test]
    fn constant_client_is_single_bin() {
        let (id, images) = gray_client(0, 0.5, 3);
        let profile = client_profile(id, &images, 256).unwrap();
        assert_eq!(profile.histogram[128], 4.0);
        assert_eq!(profile.histogram.iter().sum::<f64>(), 4.0);
    }

    #[test]
    fn duplicating_images_leaves_profile_unchanged() {
        let (id, mut images) = gray_client(0, 0.3, 2);
        let p1 = client_profile(id, &images, 64).unwrap();
        let copy = images.clone();
        images.extend(copy);
        let p2 = client_profile(id, &images, 64).unwrap();
        assert_eq!(p1.histogram, p2.histogram);
    }

    #[test]
    fn distance_zero_for_identical_profiles() {
        let (a_id, a) = gray_client(0, 0.5, 2);
        let (b_id, b) = gray_client(1, 0.5, 2);
        let profiles = vec![
            client_profile(a_id, &a, 32).unwrap(),
            client_profile(b_id, &b, 32).unwrap(),
        ];
        assert_eq!(uniformity_distance(&profiles).unwrap(), 0.0);
    }

    #[test]
    fn disjoint_single_bins_hit_maximum() {
        let (a_id, a) = gray_client(0, 0.1, 2);
        let (b_id, b) = gray_client(1, 0.9, 2);
        let profiles = vec![
            client_profile(a_id, &a, 16).unwrap(),
            client_profile(b_id, &b, 16).unwrap(),
        ];
        assert_eq!(uniformity_distance(&profiles).unwrap(), 2.0);
    }

    #[test]
    fn distance_is_symmetric_under_reordering() {
        let clients: Vec<ClientHistogramProfile> = [0.1, 0.5, 0.8]
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let (id, images) = gray_client(i as u16, v, 2);
                client_profile(id, &images, 32).unwrap()
            })
            .collect();
        let forward = uniformity_distance(&clients).unwrap();
        let mut reversed = clients;
        reversed.reverse();
        assert_eq!(uniformity_distance(&reversed).unwrap(), forward);
    }

    #[test]
    fn distance_rejects_bin_mismatch() {
        let (a_id, a) = gray_client(0, 0.1, 1);
        let (b_id, b) = gray_client(1, 0.9, 1);
        let profiles = vec![
            client_profile(a_id, &a, 16).unwrap(),
            client_profile(b_id, &b, 32).unwrap(),
        ];
        assert!(uniformity_distance(&profiles).is_err());
    }

    #[test]
    fn unchanged_federation_reports_equal_distances() {
        let mut fed = BTreeMap::new();
        for (id, images) in [gray_client(0, 0.2, 2), gray_client(1, 0.7, 2)] {
            fed.insert(id, images);
        }
        let report = before_after_report(&fed, &fed, 64).unwrap();
        assert_eq!(report.before_distance, report.after_distance);
        assert_eq!(report.margin(), 0.0);
        assert_eq!(report.pairs.len(), 1);
    }

    #[test]
    fn report_has_one_row_per_pair() {
        let mut fed = BTreeMap::new();
        for (id, images) in [
            gray_client(0, 0.2, 2),
            gray_client(1, 0.5, 2),
            gray_client(2, 0.8, 2),
            gray_client(3, 0.4, 2),
        ] {
            fed.insert(id, images);
        }
        let report = before_after_report(&fed, &fed, 64).unwrap();
        assert_eq!(report.pairs.len(), 6);
    }
}
