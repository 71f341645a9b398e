//! Storage of per-class target moments for every domain seen so far.
//!
//! A domain is stored either as the per-image [`ClassMoments`] samples
//! (optionally a random subset of them) or as independent per-channel
//! Gaussians fitted to those samples. Styles are drawn back per class, so a
//! single drawn target can combine moments of different images.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::index;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::feature_stats::{class_moments, resize_mask, ClassMoments, LayerMoments, DEFAULT_EPS};
use crate::rng::Rng;
use crate::tensor::{FeatureMap, LabelMap};
use crate::transfer_net::{Encoded, Encoder};

/// Per-image class moments of one domain.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainStyle {
    pub domain_id: u32,
    pub samples: Vec<ClassMoments>,
}

/// Moments of every encoder stage of one encoded image under `mask`.
pub fn image_moments(enc: &Encoded, mask: &LabelMap) -> Result<ClassMoments> {
    let layers = enc
        .layers
        .iter()
        .map(|z| class_moments(z, &resize_mask(mask, z.height(), z.width())?))
        .collect::<Result<Vec<_>>>()?;
    Ok(ClassMoments { layers })
}

/// Encode every image, label it with `labeler` and collect its class
/// moments.
pub fn extract_domain_style(
    domain_id: u32,
    images: &[FeatureMap],
    mut labeler: impl FnMut(usize, &FeatureMap) -> Result<LabelMap>,
    encoder: &Encoder,
) -> Result<DomainStyle> {
    if domain_id == 0 {
        return Err(Error::invalid("target domain ids start at 1"));
    }
    if images.is_empty() {
        return Err(Error::invalid(format!("domain {domain_id} has no images")));
    }
    let samples = images
        .iter()
        .enumerate()
        .map(|(i, img)| {
            let mask = labeler(i, img)?;
            image_moments(&encoder.encode(img), &mask)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DomainStyle { domain_id, samples })
}

/// Keep `ceil(p · N)` uniformly chosen samples (in their original order).
pub fn subsample(style: &DomainStyle, p: f64, rng: &mut Rng) -> Result<DomainStyle> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::invalid(format!("subsample fraction {p} not in (0, 1]")));
    }
    let n = style.samples.len();
    let keep = (libm::ceil(p * n as f64) as usize).min(n);
    let mut picked = index::sample(rng, n, keep).into_vec();
    picked.sort_unstable();
    Ok(DomainStyle {
        domain_id: style.domain_id,
        samples: picked.into_iter().map(|i| style.samples[i].clone()).collect(),
    })
}

/// Independent Gaussians over the stored means and deviations of one layer.
///
/// All moment arrays are `classes × channels`. `samples[c]` counts the
/// stored images in which class `c` is present; `mean_count[c]` is its
/// average pixel count over those images.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianLayer {
    pub classes: usize,
    pub channels: usize,
    pub mean_of_mean: Vec<f64>,
    pub var_of_mean: Vec<f64>,
    pub mean_of_std: Vec<f64>,
    pub var_of_std: Vec<f64>,
    pub samples: Vec<u32>,
    pub mean_count: Vec<f64>,
}

impl GaussianLayer {
    pub fn present(&self, class: usize) -> bool {
        self.samples[class] > 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianStyle {
    pub domain_id: u32,
    pub layers: Vec<GaussianLayer>,
}

/// Population mean and variance of every stored moment, per class, layer
/// and channel, over the samples in which the class is present.
pub fn fit_gaussian(style: &DomainStyle) -> Result<GaussianStyle> {
    let Some(first) = style.samples.first() else {
        return Err(Error::invalid("cannot fit a Gaussian to zero samples"));
    };
    if style.samples.iter().any(|s| !s.same_layout(first)) {
        return Err(Error::shape("style samples differ in layout"));
    }
    let layers = first
        .layers
        .iter()
        .enumerate()
        .map(|(l, proto)| {
            let (c, k) = (proto.classes(), proto.channels());
            let mut g = GaussianLayer {
                classes: c,
                channels: k,
                mean_of_mean: vec![0.0; c * k],
                var_of_mean: vec![0.0; c * k],
                mean_of_std: vec![0.0; c * k],
                var_of_std: vec![0.0; c * k],
                samples: vec![0; c],
                mean_count: vec![0.0; c],
            };
            for s in &style.samples {
                let lm = &s.layers[l];
                for class in lm.present_classes() {
                    g.samples[class] += 1;
                    g.mean_count[class] += lm.count[class];
                    for ch in 0..k {
                        g.mean_of_mean[class * k + ch] += lm.class_mean(class)[ch];
                        g.mean_of_std[class * k + ch] += lm.class_std(class)[ch];
                    }
                }
            }
            for class in 0..c {
                let n = g.samples[class] as f64;
                if n == 0.0 {
                    continue;
                }
                g.mean_count[class] /= n;
                for ch in 0..k {
                    g.mean_of_mean[class * k + ch] /= n;
                    g.mean_of_std[class * k + ch] /= n;
                }
            }
            for s in &style.samples {
                let lm = &s.layers[l];
                for class in lm.present_classes() {
                    for ch in 0..k {
                        let i = class * k + ch;
                        let dm = lm.class_mean(class)[ch] - g.mean_of_mean[i];
                        let ds = lm.class_std(class)[ch] - g.mean_of_std[i];
                        g.var_of_mean[i] += dm * dm;
                        g.var_of_std[i] += ds * ds;
                    }
                }
            }
            for class in 0..c {
                let n = g.samples[class] as f64;
                if n == 0.0 {
                    continue;
                }
                for ch in 0..k {
                    g.var_of_mean[class * k + ch] /= n;
                    g.var_of_std[class * k + ch] /= n;
                }
            }
            g
        })
        .collect();
    Ok(GaussianStyle {
        domain_id: style.domain_id,
        layers,
    })
}

/// How newly extracted domain styles are kept.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StorageMode {
    Full,
    Subsample(f64),
    Gaussian,
}

#[derive(Debug, Clone, PartialEq)]
pub enum StoredStyle {
    Samples(DomainStyle),
    Gaussian(GaussianStyle),
}

impl StoredStyle {
    pub fn domain_id(&self) -> u32 {
        match self {
            StoredStyle::Samples(s) => s.domain_id,
            StoredStyle::Gaussian(g) => g.domain_id,
        }
    }

    /// Number of stored scalars.
    pub fn scalar_count(&self) -> usize {
        match self {
            StoredStyle::Samples(s) => s.samples.iter().map(ClassMoments::scalar_count).sum(),
            StoredStyle::Gaussian(g) => g.layers.iter().map(|l| 4 * l.classes * l.channels + 2 * l.classes).sum(),
        }
    }
}

/// Style memory keyed by domain id. It only changes when a domain is
/// inserted.
#[derive(Debug, Clone, PartialEq)]
pub struct StyleMemory {
    mode: StorageMode,
    domains: BTreeMap<u32, StoredStyle>,
}

impl StyleMemory {
    pub fn new(mode: StorageMode) -> Result<Self> {
        if let StorageMode::Subsample(p) = mode {
            if !(p > 0.0 && p <= 1.0) {
                return Err(Error::invalid(format!("subsample fraction {p} not in (0, 1]")));
            }
        }
        Ok(Self {
            mode,
            domains: BTreeMap::new(),
        })
    }

    pub fn mode(&self) -> StorageMode {
        self.mode
    }

    /// Store a freshly extracted domain according to the storage mode.
    pub fn insert(&mut self, style: DomainStyle, rng: &mut Rng) -> Result<()> {
        let stored = match self.mode {
            StorageMode::Full => StoredStyle::Samples(style),
            StorageMode::Subsample(p) => StoredStyle::Samples(subsample(&style, p, rng)?),
            StorageMode::Gaussian => StoredStyle::Gaussian(fit_gaussian(&style)?),
        };
        self.insert_stored(stored);
        Ok(())
    }

    /// Store an already-processed style (e.g. read back from disk).
    pub fn insert_stored(&mut self, stored: StoredStyle) {
        self.domains.insert(stored.domain_id(), stored);
    }

    pub fn get(&self, domain_id: u32) -> Option<&StoredStyle> {
        self.domains.get(&domain_id)
    }

    pub fn contains(&self, domain_id: u32) -> bool {
        self.domains.contains_key(&domain_id)
    }

    pub fn domain_ids(&self) -> impl Iterator<Item = u32> + '_ {
        self.domains.keys().copied()
    }

    pub fn len(&self) -> usize {
        self.domains.len()
    }

    pub fn is_empty(&self) -> bool {
        self.domains.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &StoredStyle> {
        self.domains.values()
    }

    /// Total number of stored scalars across domains.
    pub fn scalar_count(&self) -> usize {
        self.domains.values().map(StoredStyle::scalar_count).sum()
    }

    /// Draw a style target from one of `domains` (chosen uniformly).
    ///
    /// Sample storage picks, per class, one stored image containing that
    /// class; Gaussian storage draws every mean and deviation independently
    /// and clamps deviations at [`DEFAULT_EPS`]. Classes never seen in the
    /// domain come back absent.
    pub fn draw_moments(&self, domains: &[u32], rng: &mut Rng) -> Result<ClassMoments> {
        let stored = self.pick_domain(domains, rng)?;
        match stored {
            StoredStyle::Samples(style) => Ok(draw_per_class(style, rng)),
            StoredStyle::Gaussian(g) => Ok(draw_gaussian(g, rng)),
        }
    }

    /// Draw the moments of a single stored image (no per-class mixing).
    /// Gaussian storage has no images and behaves like [`Self::draw_moments`].
    pub fn draw_image_moments(&self, domains: &[u32], rng: &mut Rng) -> Result<ClassMoments> {
        let stored = self.pick_domain(domains, rng)?;
        match stored {
            StoredStyle::Samples(style) => {
                let i = rng.random_range(0..style.samples.len());
                Ok(style.samples[i].clone())
            }
            StoredStyle::Gaussian(g) => Ok(draw_gaussian(g, rng)),
        }
    }

    fn pick_domain(&self, domains: &[u32], rng: &mut Rng) -> Result<&StoredStyle> {
        if domains.is_empty() {
            return Err(Error::invalid("no domains to draw from"));
        }
        if let Some(&missing) = domains.iter().find(|d| !self.contains(**d)) {
            return Err(Error::UnknownDomain(missing));
        }
        let d = domains[rng.random_range(0..domains.len())];
        Ok(&self.domains[&d])
    }
}

fn draw_per_class(style: &DomainStyle, rng: &mut Rng) -> ClassMoments {
    let proto = &style.samples[0];
    let mut out = ClassMoments {
        layers: proto
            .layers
            .iter()
            .map(|l| LayerMoments::empty(l.classes(), l.channels()))
            .collect(),
    };
    let mut candidates = Vec::with_capacity(style.samples.len());
    for class in 0..proto.classes() {
        candidates.clear();
        candidates.extend((0..style.samples.len()).filter(|&i| style.samples[i].layers[0].present(class)));
        if candidates.is_empty() {
            continue;
        }
        let src = &style.samples[candidates[rng.random_range(0..candidates.len())]];
        for (dst, layer) in out.layers.iter_mut().zip(&src.layers) {
            if layer.present(class) {
                dst.set_class(class, layer.class_mean(class), layer.class_std(class), layer.count[class]);
            }
        }
    }
    out
}

fn draw_gaussian(g: &GaussianStyle, rng: &mut Rng) -> ClassMoments {
    let layers = g
        .layers
        .iter()
        .map(|gl| {
            let k = gl.channels;
            let mut lm = LayerMoments::empty(gl.classes, k);
            for class in 0..gl.classes {
                if !gl.present(class) {
                    continue;
                }
                let mut mean = vec![0.0; k];
                let mut std = vec![0.0; k];
                for ch in 0..k {
                    let i = class * k + ch;
                    mean[ch] = normal_draw(gl.mean_of_mean[i], gl.var_of_mean[i], rng);
                    std[ch] = normal_draw(gl.mean_of_std[i], gl.var_of_std[i], rng).max(DEFAULT_EPS);
                }
                lm.set_class(class, &mean, &std, gl.mean_count[class]);
            }
            lm
        })
        .collect();
    ClassMoments { layers }
}

fn normal_draw(mean: f64, var: f64, rng: &mut Rng) -> f64 {
    Normal::new(mean, libm::sqrt(var.max(0.0)))
        .expect("finite Gaussian parameters")
        .sample(rng)
}
