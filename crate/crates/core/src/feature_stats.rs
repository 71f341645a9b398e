//! Global and class-masked channel moments, mask resizing, and the two
//! renormalization transforms built on them (plain AdaIN and its
//! class-conditional form).
//!
//! Standard deviations are population (1/N) deviations everywhere.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tensor::{FeatureMap, LabelMap};

/// Floor applied to a source standard deviation before dividing by it.
pub const DEFAULT_EPS: f64 = 1e-5;

/// Channel-wise mean and standard deviation.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Per-class channel moments of one encoder layer.
///
/// `mean` and `std` are `classes × channels`, row-major by class. `count`
/// holds the number of mask pixels of each class; a class is present iff
/// its count is positive, and rows of absent classes are never read.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerMoments {
    classes: usize,
    channels: usize,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub count: Vec<f64>,
}

impl LayerMoments {
    pub fn empty(classes: usize, channels: usize) -> Self {
        Self {
            classes,
            channels,
            mean: vec![0.0; classes * channels],
            std: vec![0.0; classes * channels],
            count: vec![0.0; classes],
        }
    }

    #[inline]
    pub fn classes(&self) -> usize {
        self.classes
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    pub fn present(&self, class: usize) -> bool {
        self.count[class] > 0.0
    }

    pub fn present_classes(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.classes).filter(|&c| self.present(c))
    }

    #[inline]
    pub fn class_mean(&self, class: usize) -> &[f64] {
        &self.mean[class * self.channels..(class + 1) * self.channels]
    }

    #[inline]
    pub fn class_std(&self, class: usize) -> &[f64] {
        &self.std[class * self.channels..(class + 1) * self.channels]
    }

    /// Overwrite the row of `class` with the given moments and pixel count.
    pub fn set_class(&mut self, class: usize, mean: &[f64], std: &[f64], count: f64) {
        let k = self.channels;
        self.mean[class * k..(class + 1) * k].copy_from_slice(mean);
        self.std[class * k..(class + 1) * k].copy_from_slice(std);
        self.count[class] = count;
    }

    pub fn clear_class(&mut self, class: usize) {
        let k = self.channels;
        self.mean[class * k..(class + 1) * k].fill(0.0);
        self.std[class * k..(class + 1) * k].fill(0.0);
        self.count[class] = 0.0;
    }

    /// Moments of the union of all class regions, recovered from the
    /// per-class moments and pixel counts. `None` when no class is present.
    pub fn pooled(&self) -> Option<Moments> {
        let total: f64 = self.count.iter().sum();
        if total <= 0.0 {
            return None;
        }
        let k = self.channels;
        let mut mean = vec![0.0; k];
        for c in self.present_classes() {
            let w = self.count[c] / total;
            for (m, &mc) in mean.iter_mut().zip(self.class_mean(c)) {
                *m += w * mc;
            }
        }
        let mut var = vec![0.0; k];
        for c in self.present_classes() {
            let w = self.count[c] / total;
            for ch in 0..k {
                let d = self.class_mean(c)[ch] - mean[ch];
                let s = self.class_std(c)[ch];
                var[ch] += w * (s * s + d * d);
            }
        }
        let std = var.into_iter().map(|v| libm::sqrt(v.max(0.0))).collect();
        Some(Moments { mean, std })
    }
}

/// Class moments of every style layer of the encoder; `layers[l]` belongs to
/// encoder stage `l + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassMoments {
    pub layers: Vec<LayerMoments>,
}

impl ClassMoments {
    pub fn classes(&self) -> usize {
        self.layers.first().map_or(0, LayerMoments::classes)
    }

    /// Same class count and per-layer channel counts.
    pub fn same_layout(&self, other: &ClassMoments) -> bool {
        self.layers.len() == other.layers.len()
            && self
                .layers
                .iter()
                .zip(&other.layers)
                .all(|(a, b)| a.classes == b.classes && a.channels == b.channels)
    }

    /// Number of stored scalars (means, deviations and counts).
    pub fn scalar_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.mean.len() + l.std.len() + l.count.len())
            .sum()
    }
}

/// Channel-wise population mean and standard deviation over all pixels.
pub fn global_moments(z: &FeatureMap) -> Moments {
    let k = z.channels();
    let n = z.pixels() as f64;
    let mut mean = vec![0.0; k];
    for p in 0..z.pixels() {
        for (m, &v) in mean.iter_mut().zip(z.pixel(p)) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; k];
    for p in 0..z.pixels() {
        for ((s, &v), &m) in var.iter_mut().zip(z.pixel(p)).zip(&mean) {
            let d = v - m;
            *s += d * d;
        }
    }
    let std = var.into_iter().map(|s| libm::sqrt(s / n)).collect();
    Moments { mean, std }
}

fn check_mask_dims(z: &FeatureMap, mask: &LabelMap) -> Result<()> {
    if z.height() != mask.height() || z.width() != mask.width() {
        return Err(Error::shape(format!(
            "mask is {}x{} but feature map is {}x{}; resize the mask first",
            mask.height(),
            mask.width(),
            z.height(),
            z.width()
        )));
    }
    Ok(())
}

/// Channel moments of `z` restricted to each class region of `mask`.
///
/// Classes without pixels come back absent (zero count) instead of dividing
/// by zero.
pub fn class_moments(z: &FeatureMap, mask: &LabelMap) -> Result<LayerMoments> {
    check_mask_dims(z, mask)?;
    let classes = mask.classes();
    let k = z.channels();
    let mut out = LayerMoments::empty(classes, k);
    let labels = mask.indices();

    for (p, &c) in labels.iter().enumerate() {
        let c = c as usize;
        out.count[c] += 1.0;
        let row = &mut out.mean[c * k..(c + 1) * k];
        for (m, &v) in row.iter_mut().zip(z.pixel(p)) {
            *m += v;
        }
    }
    for c in 0..classes {
        let n = out.count[c];
        if n > 0.0 {
            out.mean[c * k..(c + 1) * k].iter_mut().for_each(|m| *m /= n);
        }
    }
    for (p, &c) in labels.iter().enumerate() {
        let c = c as usize;
        for ch in 0..k {
            let d = z.pixel(p)[ch] - out.mean[c * k + ch];
            out.std[c * k + ch] += d * d;
        }
    }
    for c in 0..classes {
        let n = out.count[c];
        if n > 0.0 {
            out.std[c * k..(c + 1) * k]
                .iter_mut()
                .for_each(|s| *s = libm::sqrt(*s / n));
        }
    }
    Ok(out)
}

/// Nearest-neighbour resize with source index `floor(i * H / H')`.
pub fn resize_mask(mask: &LabelMap, height: usize, width: usize) -> Result<LabelMap> {
    if height == 0 || width == 0 {
        return Err(Error::invalid("target mask size must be at least 1x1"));
    }
    if height == mask.height() && width == mask.width() {
        return Ok(mask.clone());
    }
    let mut labels = Vec::with_capacity(height * width);
    for i in 0..height {
        let si = i * mask.height() / height;
        for j in 0..width {
            let sj = j * mask.width() / width;
            labels.push(mask.class_at(si, sj) as u8);
        }
    }
    LabelMap::from_indices(height, width, mask.classes(), labels)
}

/// Renormalize every channel of `z` to mean `mu_t` and deviation `sigma_t`.
pub fn adain(z: &FeatureMap, mu_t: &[f64], sigma_t: &[f64], eps: f64) -> Result<FeatureMap> {
    let k = z.channels();
    if mu_t.len() != k || sigma_t.len() != k {
        return Err(Error::shape(format!(
            "target moments have {} / {} entries for {k} channels",
            mu_t.len(),
            sigma_t.len()
        )));
    }
    if !(eps > 0.0) {
        return Err(Error::invalid("eps must be positive"));
    }
    let src = global_moments(z);
    let scale: Vec<f64> = (0..k).map(|ch| sigma_t[ch] / src.std[ch].max(eps)).collect();
    let mut out = z.clone();
    for p in 0..z.pixels() {
        for (ch, v) in out.pixel_mut(p).iter_mut().enumerate() {
            *v = scale[ch] * (*v - src.mean[ch]) + mu_t[ch];
        }
    }
    Ok(out)
}

/// Class-conditional AdaIN: each class region of `z` (according to
/// `mask`) is renormalized with that class's target moments.
///
/// A class present in the mask but absent from `tgt` keeps its own source
/// moments, so its region passes through unchanged.
pub fn cc_adain(z: &FeatureMap, mask: &LabelMap, tgt: &LayerMoments, eps: f64) -> Result<FeatureMap> {
    check_mask_dims(z, mask)?;
    let k = z.channels();
    if tgt.channels() != k || tgt.classes() != mask.classes() {
        return Err(Error::shape(format!(
            "target moments are {}x{} but input needs {}x{k}",
            tgt.classes(),
            tgt.channels(),
            mask.classes()
        )));
    }
    if !(eps > 0.0) {
        return Err(Error::invalid("eps must be positive"));
    }
    let src = class_moments(z, mask)?;
    let classes = mask.classes();
    // Per class: out = scale * z + shift.
    let mut scale = vec![1.0; classes * k];
    let mut shift = vec![0.0; classes * k];
    for c in src.present_classes() {
        let (t_mean, t_std) = if tgt.present(c) {
            (tgt.class_mean(c), tgt.class_std(c))
        } else {
            (src.class_mean(c), src.class_std(c))
        };
        for ch in 0..k {
            let s = t_std[ch] / src.class_std(c)[ch].max(eps);
            scale[c * k + ch] = s;
            shift[c * k + ch] = t_mean[ch] - s * src.class_mean(c)[ch];
        }
    }
    let mut out = z.clone();
    let mut touched = 0usize;
    for (p, &c) in mask.indices().iter().enumerate() {
        let c = c as usize;
        for (ch, v) in out.pixel_mut(p).iter_mut().enumerate() {
            *v = scale[c * k + ch] * *v + shift[c * k + ch];
        }
        touched += 1;
    }
    debug_assert_eq!(touched, z.pixels(), "class regions must partition the pixels");
    Ok(out)
}
