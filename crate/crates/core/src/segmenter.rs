//! Small dilated convolutional segmenter, pixel-wise cross-entropy,
//! unfiltered pseudo-labels and mIoU.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::nn::{self, Conv2d, LayoutBuilder};
use crate::optim::SgdMomentum;
use crate::rng;
use crate::tensor::{FeatureMap, LabelMap};

/// Floor applied to probabilities before taking the log.
pub const LOG_CLAMP: f64 = 1e-12;

/// Per-pixel softmax probabilities, shape (H, W, C).
#[derive(Debug, Clone, PartialEq)]
pub struct ProbMap(FeatureMap);

impl ProbMap {
    /// Softmax over the channel axis of `logits`.
    pub fn softmax(logits: &FeatureMap) -> Self {
        let mut out = logits.clone();
        for p in 0..out.pixels() {
            let px = out.pixel_mut(p);
            let max = px.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for v in px.iter_mut() {
                *v = libm::exp(*v - max);
                sum += *v;
            }
            px.iter_mut().for_each(|v| *v /= sum);
        }
        ProbMap(out)
    }

    /// Wraps probabilities that already satisfy the simplex constraint.
    pub fn from_probs(probs: FeatureMap) -> Result<Self> {
        for p in 0..probs.pixels() {
            let px = probs.pixel(p);
            let sum: f64 = px.iter().sum();
            if px.iter().any(|&v| !(v >= 0.0)) || (sum - 1.0).abs() > 1e-6 {
                return Err(Error::invalid("probabilities must be non-negative and sum to 1"));
            }
        }
        Ok(ProbMap(probs))
    }

    pub fn as_map(&self) -> &FeatureMap {
        &self.0
    }

    pub fn classes(&self) -> usize {
        self.0.channels()
    }

    /// One-hot argmax per pixel, ties going to the lowest class index.
    pub fn argmax(&self) -> LabelMap {
        let labels = (0..self.0.pixels())
            .map(|p| {
                let px = self.0.pixel(p);
                let mut best = 0;
                for (c, &v) in px.iter().enumerate().skip(1) {
                    if v > px[best] {
                        best = c;
                    }
                }
                best as u8
            })
            .collect();
        LabelMap::from_indices(self.0.height(), self.0.width(), self.classes(), labels).expect("argmax stays in range")
    }
}

/// `-1/(HWC) Σ y log p`, with `p` clamped at [`LOG_CLAMP`].
pub fn ce_loss(p: &ProbMap, y: &LabelMap) -> Result<f64> {
    let m = p.as_map();
    if (m.height(), m.width(), m.channels()) != (y.height(), y.width(), y.classes()) {
        return Err(Error::shape("probabilities and labels differ in shape"));
    }
    let mut sum = 0.0;
    for (px, &c) in y.indices().iter().enumerate() {
        sum += libm::log(m.pixel(px)[c as usize].max(LOG_CLAMP));
    }
    Ok(-sum / (m.pixels() * m.channels()) as f64)
}

/// Architecture: 3×3 convs with dilations 1, 2, 4 (ReLU) and a 1×1 conv to
/// class logits. Spatial size is preserved.
#[derive(Debug, Clone, PartialEq)]
pub struct Segmenter {
    convs: [Conv2d; 4],
    params: Vec<f64>,
    classes: usize,
}

struct SegCache {
    acts: [FeatureMap; 3],
    probs: ProbMap,
}

impl Segmenter {
    pub fn new(width: usize, classes: usize, seed: u64) -> Self {
        let mut lb = LayoutBuilder::default();
        let convs = [
            lb.conv(3, width, 3, 1, 1),
            lb.conv(width, width, 3, 1, 2),
            lb.conv(width, width, 3, 1, 4),
            lb.conv(width, classes, 1, 1, 1),
        ];
        let params = nn::init_params(&convs, lb.len(), &mut rng::stream(seed, rng::tags::SEGMENTER_INIT));
        Self { convs, params, classes }
    }

    pub fn from_params(width: usize, classes: usize, params: Vec<f64>) -> Result<Self> {
        let mut seg = Self::new(width, classes, 0);
        if params.len() != seg.params.len() {
            return Err(Error::shape("segmenter parameter count does not match architecture"));
        }
        seg.params = params;
        Ok(seg)
    }

    pub fn width(&self) -> usize {
        self.convs[0].out_ch
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn checksum(&self) -> u64 {
        nn::checksum(&self.params)
    }

    fn forward_cached(&self, image: &FeatureMap) -> SegCache {
        let p = &self.params;
        let a1 = nn::relu(&self.convs[0].forward(p, image));
        let a2 = nn::relu(&self.convs[1].forward(p, &a1));
        let a3 = nn::relu(&self.convs[2].forward(p, &a2));
        let probs = ProbMap::softmax(&self.convs[3].forward(p, &a3));
        SegCache { acts: [a1, a2, a3], probs }
    }

    pub fn forward(&self, image: &FeatureMap) -> ProbMap {
        self.forward_cached(image).probs
    }

    /// On/off state of every hidden ReLU for `image`. The loss is smooth in
    /// the parameters wherever this pattern is constant.
    pub fn relu_pattern(&self, image: &FeatureMap) -> Vec<bool> {
        let cache = self.forward_cached(image);
        cache.acts.iter().flat_map(|a| a.data().iter().map(|&v| v > 0.0)).collect()
    }

    /// Unfiltered pseudo-label: the one-hot argmax of the prediction.
    pub fn pseudo_label(&self, image: &FeatureMap) -> LabelMap {
        self.forward(image).argmax()
    }

    fn check_batch(&self, batch: &[(FeatureMap, LabelMap)]) -> Result<()> {
        if batch.is_empty() {
            return Err(Error::invalid("empty segmentation batch"));
        }
        for (x, y) in batch {
            if x.channels() != 3 || (x.height(), x.width()) != (y.height(), y.width()) || y.classes() != self.classes {
                return Err(Error::shape("image/label pair does not match the segmenter"));
            }
        }
        Ok(())
    }

    /// Mean cross-entropy of a batch.
    pub fn batch_loss(&self, batch: &[(FeatureMap, LabelMap)]) -> Result<f64> {
        self.check_batch(batch)?;
        let mut total = 0.0;
        for (x, y) in batch {
            total += ce_loss(&self.forward(x), y)?;
        }
        Ok(total / batch.len() as f64)
    }

    /// Mean batch cross-entropy and its gradient w.r.t. all parameters.
    ///
    /// The logit gradient is `(p - y) / (HWC)`; the log clamp is treated as
    /// inactive.
    pub fn batch_loss_and_grad(&self, batch: &[(FeatureMap, LabelMap)]) -> Result<(f64, Vec<f64>)> {
        self.check_batch(batch)?;
        let mut grads = vec![0.0; self.params.len()];
        let mut total = 0.0;
        let b = batch.len() as f64;
        let p = &self.params;
        for (x, y) in batch {
            let cache = self.forward_cached(x);
            total += ce_loss(&cache.probs, y)?;
            let probs = cache.probs.as_map();
            let norm = 1.0 / ((probs.pixels() * probs.channels()) as f64 * b);
            let mut g = probs.clone();
            for (px, &c) in y.indices().iter().enumerate() {
                let gp = g.pixel_mut(px);
                gp[c as usize] -= 1.0;
                gp.iter_mut().for_each(|v| *v *= norm);
            }
            let [a1, a2, a3] = &cache.acts;
            let g = self.convs[3].backward(p, a3, &g, Some(&mut grads), true).expect("input grad");
            let g = nn::relu_backward(a3, &g);
            let g = self.convs[2].backward(p, a2, &g, Some(&mut grads), true).expect("input grad");
            let g = nn::relu_backward(a2, &g);
            let g = self.convs[1].backward(p, a1, &g, Some(&mut grads), true).expect("input grad");
            let g = nn::relu_backward(a1, &g);
            self.convs[0].backward(p, x, &g, Some(&mut grads), false);
        }
        Ok((total / b, grads))
    }

    /// One SGD-momentum step. Non-finite losses or gradients abort the step
    /// without touching the parameters.
    pub fn seg_step(&mut self, batch: &[(FeatureMap, LabelMap)], opt: &mut SgdMomentum, step: usize) -> Result<f64> {
        let (loss, grads) = self.batch_loss_and_grad(batch)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite { what: "segmentation loss", step });
        }
        if grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite { what: "segmentation gradient", step });
        }
        opt.update(&mut self.params, &grads);
        Ok(loss)
    }
}

/// Dataset-level confusion counts; rows are ground truth, columns are
/// predictions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Confusion {
    classes: usize,
    counts: Vec<u64>,
}

impl Confusion {
    pub fn new(classes: usize) -> Self {
        Self {
            classes,
            counts: vec![0; classes * classes],
        }
    }

    pub fn add(&mut self, pred: &LabelMap, gt: &LabelMap) -> Result<()> {
        if (pred.height(), pred.width(), pred.classes()) != (gt.height(), gt.width(), gt.classes())
            || gt.classes() != self.classes
        {
            return Err(Error::shape("prediction and ground truth differ in shape"));
        }
        for (&p, &g) in pred.indices().iter().zip(gt.indices()) {
            self.counts[g as usize * self.classes + p as usize] += 1;
        }
        Ok(())
    }

    pub fn count(&self, gt: usize, pred: usize) -> u64 {
        self.counts[gt * self.classes + pred]
    }

    pub fn is_empty(&self) -> bool {
        self.counts.iter().all(|&c| c == 0)
    }

    pub fn miou(&self) -> Result<MiouReport> {
        if self.is_empty() {
            return Err(Error::invalid("mIoU of an empty set"));
        }
        let c = self.classes;
        let per_class: Vec<Option<f64>> = (0..c)
            .map(|k| {
                let tp = self.count(k, k);
                let fn_: u64 = (0..c).filter(|&j| j != k).map(|j| self.count(k, j)).sum();
                let fp: u64 = (0..c).filter(|&i| i != k).map(|i| self.count(i, k)).sum();
                let denom = tp + fp + fn_;
                (denom > 0).then(|| tp as f64 / denom as f64)
            })
            .collect();
        let valid: Vec<f64> = per_class.iter().flatten().copied().collect();
        let mean = valid.iter().sum::<f64>() / valid.len() as f64;
        Ok(MiouReport { per_class, mean })
    }
}

/// Per-class IoU (`None` for classes absent from both prediction and
/// ground truth) and their mean over the defined classes.
#[derive(Debug, Clone, PartialEq)]
pub struct MiouReport {
    pub per_class: Vec<Option<f64>>,
    pub mean: f64,
}

pub fn miou(preds: &[LabelMap], gts: &[LabelMap]) -> Result<MiouReport> {
    if preds.is_empty() || preds.len() != gts.len() {
        return Err(Error::invalid("mIoU needs a non-empty list of prediction/ground-truth pairs"));
    }
    let mut conf = Confusion::new(gts[0].classes());
    for (p, g) in preds.iter().zip(gts) {
        conf.add(p, g)?;
    }
    conf.miou()
}
