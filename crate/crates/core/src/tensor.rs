use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Rank-3 array laid out height × width × channels (channels fastest).
///
/// Used for images (`layer_id == 0`) and for encoder activations
/// (`layer_id` = encoder stage, starting at 1).
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    height: usize,
    width: usize,
    channels: usize,
    pub layer_id: usize,
    data: Vec<f64>,
}

impl FeatureMap {
    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self {
            height,
            width,
            channels,
            layer_id: 0,
            data: vec![0.0; height * width * channels],
        }
    }

    pub fn from_vec(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(Error::shape("feature map dimensions must be positive"));
        }
        if data.len() != height * width * channels {
            return Err(Error::shape(alloc::format!(
                "expected {} values for {}x{}x{}, got {}",
                height * width * channels,
                height,
                width,
                channels,
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            channels,
            layer_id: 0,
            data,
        })
    }

    pub fn with_layer(mut self, layer_id: usize) -> Self {
        self.layer_id = layer_id;
        self
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.data[(i * self.width + j) * self.channels + k]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, k: usize, v: f64) {
        self.data[(i * self.width + j) * self.channels + k] = v;
    }

    /// Channel vector of pixel `p` (row-major pixel index).
    #[inline]
    pub fn pixel(&self, p: usize) -> &[f64] {
        &self.data[p * self.channels..(p + 1) * self.channels]
    }

    #[inline]
    pub fn pixel_mut(&mut self, p: usize) -> &mut [f64] {
        let c = self.channels;
        &mut self.data[p * c..(p + 1) * c]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        let mut out = self.clone();
        out.data.iter_mut().for_each(|v| *v = f(*v));
        out
    }

    /// Mirror along the width axis.
    pub fn flip_horizontal(&self) -> Self {
        let mut out = self.clone();
        for i in 0..self.height {
            for j in 0..self.width {
                let src = i * self.width + (self.width - 1 - j);
                out.pixel_mut(i * self.width + j).copy_from_slice(self.pixel(src));
            }
        }
        out
    }
}

/// One-hot segmentation mask, stored as one class index per pixel so the
/// one-hot invariant holds by construction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    height: usize,
    width: usize,
    classes: usize,
    labels: Vec<u8>,
}

impl LabelMap {
    pub fn from_indices(height: usize, width: usize, classes: usize, labels: Vec<u8>) -> Result<Self> {
        if !(2..=256).contains(&classes) {
            return Err(Error::invalid("label maps need between 2 and 256 classes"));
        }
        if height == 0 || width == 0 || labels.len() != height * width {
            return Err(Error::shape("label count does not match height x width"));
        }
        if let Some(bad) = labels.iter().find(|&&l| l as usize >= classes) {
            return Err(Error::invalid(alloc::format!(
                "class index {bad} out of range for {classes} classes"
            )));
        }
        Ok(Self {
            height,
            width,
            classes,
            labels,
        })
    }

    pub fn filled(height: usize, width: usize, classes: usize, class: u8) -> Result<Self> {
        Self::from_indices(height, width, classes, vec![class; height * width])
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn classes(&self) -> usize {
        self.classes
    }

    #[inline]
    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    #[inline]
    pub fn indices(&self) -> &[u8] {
        &self.labels
    }

    #[inline]
    pub fn class_at(&self, i: usize, j: usize) -> usize {
        self.labels[i * self.width + j] as usize
    }

    /// Entry `y[i, j, c]` of the one-hot encoding.
    #[inline]
    pub fn one_hot(&self, i: usize, j: usize, c: usize) -> bool {
        self.class_at(i, j) == c
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes];
        for &l in &self.labels {
            counts[l as usize] += 1;
        }
        counts
    }

    pub fn flip_horizontal(&self) -> Self {
        let mut out = self.clone();
        for i in 0..self.height {
            for j in 0..self.width {
                out.labels[i * self.width + j] = self.labels[i * self.width + self.width - 1 - j];
            }
        }
        out
    }
}
