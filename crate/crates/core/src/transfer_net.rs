//! Style-transfer network: a frozen three-stage encoder, a trainable
//! decoder fed by a renormalized bottleneck and a renormalized
//! full-resolution skip connection, and the moment-matching losses used to
//! train the decoder.
//!
//! ```text
//! image ─E1─┬─E2──E3── AdaIN ── up ─conv─ up ─conv─┐
//!           └────────── AdaIN ─────────────────────┴─ concat ─conv─conv─> image'
//! ```
//!
//! The renormalized bottleneck `ẑ` and skip features are functions of the
//! frozen encoder and the fixed style targets only, so they are constants
//! of the decoder loss.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::feature_stats::{self, adain, cc_adain, resize_mask, ClassMoments, LayerMoments, Moments};
use crate::nn::{self, Conv2d, LayoutBuilder};
use crate::optim::Adam;
use crate::rng;
use crate::tensor::{FeatureMap, LabelMap};

/// Number of encoder stages used by the style loss.
pub const STYLE_LAYERS: usize = 3;

/// Which renormalization the transfer network applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum StyleMode {
    /// Per-class moments (class-conditional AdaIN and loss).
    ClassConditional,
    /// Whole-image moments (plain AdaIN and loss).
    Global,
}

/// Encoder activations `E1`, `E2`, `E3` (full, half and quarter
/// resolution).
#[derive(Debug, Clone, PartialEq)]
pub struct Encoded {
    pub layers: [FeatureMap; STYLE_LAYERS],
}

impl Encoded {
    pub fn bottleneck(&self) -> &FeatureMap {
        &self.layers[STYLE_LAYERS - 1]
    }

    pub fn skip(&self) -> &FeatureMap {
        &self.layers[0]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Encoder {
    convs: [Conv2d; STYLE_LAYERS],
    params: Vec<f64>,
}

impl Encoder {
    /// Conv3×3+ReLU stages with strides 1, 2, 2 and He-normal weights drawn
    /// from `seed`.
    pub fn new(channels: [usize; STYLE_LAYERS], seed: u64) -> Self {
        let mut lb = LayoutBuilder::default();
        let convs = [
            lb.conv(3, channels[0], 3, 1, 1),
            lb.conv(channels[0], channels[1], 3, 2, 1),
            lb.conv(channels[1], channels[2], 3, 2, 1),
        ];
        let params = nn::init_params(&convs, lb.len(), &mut rng::stream(seed, rng::tags::ENCODER_INIT));
        Self { convs, params }
    }

    pub fn from_params(channels: [usize; STYLE_LAYERS], params: Vec<f64>) -> Result<Self> {
        let mut enc = Self::new(channels, 0);
        if params.len() != enc.params.len() {
            return Err(Error::shape("encoder parameter count does not match architecture"));
        }
        enc.params = params;
        Ok(enc)
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn channels(&self) -> [usize; STYLE_LAYERS] {
        [self.convs[0].out_ch, self.convs[1].out_ch, self.convs[2].out_ch]
    }

    pub fn checksum(&self) -> u64 {
        nn::checksum(&self.params)
    }

    pub fn encode(&self, image: &FeatureMap) -> Encoded {
        let e1 = nn::relu(&self.convs[0].forward(&self.params, image)).with_layer(1);
        let e2 = nn::relu(&self.convs[1].forward(&self.params, &e1)).with_layer(2);
        let e3 = nn::relu(&self.convs[2].forward(&self.params, &e2)).with_layer(3);
        Encoded { layers: [e1, e2, e3] }
    }

    /// Gradient w.r.t. the input image given gradients at each stage output.
    /// Encoder weights receive no gradient.
    pub fn backward_input(&self, image: &FeatureMap, enc: &Encoded, grads: [FeatureMap; STYLE_LAYERS]) -> FeatureMap {
        let [mut g1, mut g2, g3] = grads;
        let [e1, e2, e3] = &enc.layers;
        let g3 = nn::relu_backward(e3, &g3);
        let back = self.convs[2].backward(&self.params, e2, &g3, None, true).expect("input grad");
        add_assign(&mut g2, &back);
        let g2 = nn::relu_backward(e2, &g2);
        let back = self.convs[1].backward(&self.params, e1, &g2, None, true).expect("input grad");
        add_assign(&mut g1, &back);
        let g1 = nn::relu_backward(e1, &g1);
        self.convs[0].backward(&self.params, image, &g1, None, true).expect("input grad")
    }
}

fn add_assign(a: &mut FeatureMap, b: &FeatureMap) {
    for (x, y) in a.data_mut().iter_mut().zip(b.data()) {
        *x += y;
    }
}

/// Decoder parameters: two upsample+conv+ReLU stages mirroring the encoder,
/// a conv merging the concatenated skip features, and a linear 3-channel
/// output conv.
#[derive(Debug, Clone, PartialEq)]
pub struct Decoder {
    up_deep: Conv2d,
    up_shallow: Conv2d,
    merge: Conv2d,
    output: Conv2d,
    params: Vec<f64>,
}

struct DecoderCache {
    up1: FeatureMap,
    a1: FeatureMap,
    up2: FeatureMap,
    a2: FeatureMap,
    cat: FeatureMap,
    a3: FeatureMap,
}

impl Decoder {
    pub fn new(channels: [usize; STYLE_LAYERS], seed: u64) -> Self {
        let [c1, c2, c3] = channels;
        let mut lb = LayoutBuilder::default();
        let up_deep = lb.conv(c3, c2, 3, 1, 1);
        let up_shallow = lb.conv(c2, c1, 3, 1, 1);
        let merge = lb.conv(2 * c1, c1, 3, 1, 1);
        let output = lb.conv(c1, 3, 3, 1, 1);
        let layers = [up_deep, up_shallow, merge, output];
        let params = nn::init_params(&layers, lb.len(), &mut rng::stream(seed, rng::tags::DECODER_INIT));
        Self {
            up_deep,
            up_shallow,
            merge,
            output,
            params,
        }
    }

    pub fn from_params(channels: [usize; STYLE_LAYERS], params: Vec<f64>) -> Result<Self> {
        let mut dec = Self::new(channels, 0);
        if params.len() != dec.params.len() {
            return Err(Error::shape("decoder parameter count does not match architecture"));
        }
        dec.params = params;
        Ok(dec)
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn decode(&self, z_hat: &FeatureMap, skip: &FeatureMap) -> FeatureMap {
        self.forward_cached(z_hat, skip).0
    }

    /// On/off state of every decoder ReLU. The decoder output is smooth in
    /// the parameters wherever this pattern is constant.
    pub fn relu_pattern(&self, z_hat: &FeatureMap, skip: &FeatureMap) -> Vec<bool> {
        let (_, c) = self.forward_cached(z_hat, skip);
        [&c.a1, &c.a2, &c.a3].iter().flat_map(|a| a.data().iter().map(|&v| v > 0.0)).collect()
    }

    fn forward_cached(&self, z_hat: &FeatureMap, skip: &FeatureMap) -> (FeatureMap, DecoderCache) {
        let p = &self.params;
        let up1 = nn::upsample2(z_hat);
        let a1 = nn::relu(&self.up_deep.forward(p, &up1));
        let up2 = nn::upsample2(&a1);
        let a2 = nn::relu(&self.up_shallow.forward(p, &up2));
        let cat = nn::concat(&a2, skip);
        let a3 = nn::relu(&self.merge.forward(p, &cat));
        let out = self.output.forward(p, &a3);
        (
            out,
            DecoderCache {
                up1,
                a1,
                up2,
                a2,
                cat,
                a3,
            },
        )
    }

    fn backward(&self, cache: &DecoderCache, grad_out: &FeatureMap, grads: &mut [f64]) {
        let p = &self.params;
        let g = self.output.backward(p, &cache.a3, grad_out, Some(grads), true).expect("input grad");
        let g = nn::relu_backward(&cache.a3, &g);
        let g = self.merge.backward(p, &cache.cat, &g, Some(grads), true).expect("input grad");
        let (g, _skip) = nn::concat_backward(&g, cache.a2.channels());
        let g = nn::relu_backward(&cache.a2, &g);
        let g = self.up_shallow.backward(p, &cache.up2, &g, Some(grads), true).expect("input grad");
        let g = nn::upsample2_backward(&g);
        let g = nn::relu_backward(&cache.a1, &g);
        self.up_deep.backward(p, &cache.up1, &g, Some(grads), false);
    }
}

/// Decoder inputs for one content image: the renormalized bottleneck and
/// skip features.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderInput {
    pub z_hat: FeatureMap,
    pub skip: FeatureMap,
}

/// One decoder training example.
#[derive(Debug, Clone)]
pub struct TransferSample<'a> {
    pub input: DecoderInput,
    /// Full-resolution source mask.
    pub mask: &'a LabelMap,
    pub target: ClassMoments,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransferNet {
    pub encoder: Encoder,
    pub decoder: Decoder,
    pub mode: StyleMode,
    pub lambda: f64,
    /// Weight of an extra content term `MSE(E1(out), skip')` tying the
    /// full-resolution output to the renormalized skip features. Zero
    /// leaves the bottleneck as the only content target.
    pub skip_weight: f64,
    pub eps: f64,
}

/// Breakdown of the transfer loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StyleLoss {
    pub content: f64,
    pub style: f64,
}

impl StyleLoss {
    pub fn total(&self) -> f64 {
        self.content + self.style
    }
}

impl TransferNet {
    pub fn new(channels: [usize; STYLE_LAYERS], encoder_seed: u64, decoder_seed: u64, mode: StyleMode, lambda: f64) -> Self {
        Self {
            encoder: Encoder::new(channels, encoder_seed),
            decoder: Decoder::new(channels, decoder_seed),
            mode,
            lambda,
            skip_weight: 0.0,
            eps: feature_stats::DEFAULT_EPS,
        }
    }

    pub fn encode(&self, image: &FeatureMap) -> Encoded {
        self.encoder.encode(image)
    }

    /// Renormalize the bottleneck and skip features of an encoded content
    /// image towards `target`.
    pub fn decoder_input(&self, enc: &Encoded, mask: &LabelMap, target: &ClassMoments) -> Result<DecoderInput> {
        if target.layers.len() != STYLE_LAYERS {
            return Err(Error::shape("style target must cover every encoder stage"));
        }
        let skip = renormalize(enc.skip(), mask, &target.layers[0], self.mode, self.eps)?;
        let z_hat = renormalize(enc.bottleneck(), mask, &target.layers[STYLE_LAYERS - 1], self.mode, self.eps)?;
        Ok(DecoderInput { z_hat, skip })
    }

    /// Re-render `image` in the style described by `target`. Returns the
    /// decoded image together with the decoder input it was produced from.
    pub fn stylize(&self, image: &FeatureMap, mask: &LabelMap, target: &ClassMoments) -> Result<(FeatureMap, DecoderInput)> {
        check_image(image)?;
        let enc = self.encode(image);
        let input = self.decoder_input(&enc, mask, target)?;
        Ok((self.decoder.decode(&input.z_hat, &input.skip), input))
    }

    pub fn sample_loss(&self, sample: &TransferSample<'_>) -> Result<StyleLoss> {
        let out = self.decoder.decode(&sample.input.z_hat, &sample.input.skip);
        let enc = self.encode(&out);
        let mut loss = style_loss(&enc.layers, &sample.input.z_hat, &sample.target, sample.mask, self.mode, self.lambda)?;
        loss.content += self.skip_term(enc.skip(), &sample.input.skip, None);
        Ok(loss)
    }

    /// Weighted skip content term, accumulating its gradient into `grad`.
    fn skip_term(&self, e1: &FeatureMap, skip: &FeatureMap, grad: Option<&mut FeatureMap>) -> f64 {
        if self.skip_weight == 0.0 {
            return 0.0;
        }
        let n = e1.data().len() as f64;
        let w = self.skip_weight;
        let mut sum = 0.0;
        for (a, b) in e1.data().iter().zip(skip.data()) {
            sum += (a - b) * (a - b);
        }
        if let Some(g) = grad {
            for ((gv, a), b) in g.data_mut().iter_mut().zip(e1.data()).zip(skip.data()) {
                *gv += 2.0 * w * (a - b) / n;
            }
        }
        w * sum / n
    }

    /// Mean loss of a batch.
    pub fn batch_loss(&self, batch: &[TransferSample<'_>]) -> Result<f64> {
        let mut total = 0.0;
        for s in batch {
            total += self.sample_loss(s)?.total();
        }
        Ok(total / batch.len() as f64)
    }

    /// Mean batch loss and its gradient w.r.t. the decoder parameters.
    pub fn batch_loss_and_grad(&self, batch: &[TransferSample<'_>]) -> Result<(f64, Vec<f64>)> {
        if batch.is_empty() {
            return Err(Error::invalid("empty decoder batch"));
        }
        let mut grads = vec![0.0; self.decoder.params.len()];
        let mut total = 0.0;
        let scale = 1.0 / batch.len() as f64;
        for s in batch {
            let (out, cache) = self.decoder.forward_cached(&s.input.z_hat, &s.input.skip);
            let enc = self.encode(&out);
            let (loss, mut layer_grads) =
                style_loss_with_grad(&enc.layers, &s.input.z_hat, &s.target, s.mask, self.mode, self.lambda)?;
            total += loss.total() + self.skip_term(enc.skip(), &s.input.skip, Some(&mut layer_grads[0]));
            for g in layer_grads.iter_mut() {
                g.data_mut().iter_mut().for_each(|v| *v *= scale);
            }
            let g_img = self.encoder.backward_input(&out, &enc, layer_grads);
            self.decoder.backward(&cache, &g_img, &mut grads);
        }
        Ok((total * scale, grads))
    }

    /// One Adam step on the decoder. Non-finite losses or gradients abort
    /// the step without touching the parameters.
    pub fn decoder_step(&mut self, batch: &[TransferSample<'_>], opt: &mut Adam) -> Result<f64> {
        let (loss, grads) = self.batch_loss_and_grad(batch)?;
        let step = opt.steps() as usize;
        if !loss.is_finite() {
            return Err(Error::NonFinite { what: "decoder loss", step });
        }
        if grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite { what: "decoder gradient", step });
        }
        opt.update(&mut self.decoder.params, &grads);
        Ok(loss)
    }
}

fn check_image(image: &FeatureMap) -> Result<()> {
    if image.channels() != 3 {
        return Err(Error::shape("images must have 3 channels"));
    }
    if !image.height().is_multiple_of(4) || !image.width().is_multiple_of(4) {
        return Err(Error::shape("image height and width must be multiples of 4"));
    }
    Ok(())
}

fn renormalize(z: &FeatureMap, mask: &LabelMap, tgt: &LayerMoments, mode: StyleMode, eps: f64) -> Result<FeatureMap> {
    match mode {
        StyleMode::ClassConditional => {
            let m = resize_mask(mask, z.height(), z.width())?;
            cc_adain(z, &m, tgt, eps)
        }
        StyleMode::Global => match tgt.pooled() {
            Some(g) => adain(z, &g.mean, &g.std, eps),
            None => Ok(z.clone()),
        },
    }
}

/// Transfer loss on precomputed encoder activations of the decoded image.
///
/// `layers` are the style layers in encoder order; the last one is the
/// bottleneck compared against `z_hat`. In class-conditional mode each
/// layer averages its class terms over the classes present both in the
/// (resized) source mask and in the target; in global mode the target's
/// pooled whole-image moments are used.
pub fn style_loss(
    layers: &[FeatureMap],
    z_hat: &FeatureMap,
    target: &ClassMoments,
    mask: &LabelMap,
    mode: StyleMode,
    lambda: f64,
) -> Result<StyleLoss> {
    let (loss, _) = loss_impl(layers, z_hat, target, mask, mode, lambda, false)?;
    Ok(loss)
}

/// [`style_loss`] plus its gradient w.r.t. each entry of `layers`.
pub fn style_loss_with_grad(
    layers: &[FeatureMap],
    z_hat: &FeatureMap,
    target: &ClassMoments,
    mask: &LabelMap,
    mode: StyleMode,
    lambda: f64,
) -> Result<(StyleLoss, [FeatureMap; STYLE_LAYERS])> {
    if layers.len() != STYLE_LAYERS {
        return Err(Error::shape("gradient needs all encoder stages"));
    }
    let (loss, grads) = loss_impl(layers, z_hat, target, mask, mode, lambda, true)?;
    let mut it = grads.into_iter();
    let grads = [it.next().unwrap(), it.next().unwrap(), it.next().unwrap()];
    Ok((loss, grads))
}

#[allow(clippy::too_many_arguments)]
fn loss_impl(
    layers: &[FeatureMap],
    z_hat: &FeatureMap,
    target: &ClassMoments,
    mask: &LabelMap,
    mode: StyleMode,
    lambda: f64,
    want_grad: bool,
) -> Result<(StyleLoss, Vec<FeatureMap>)> {
    let Some(bottleneck) = layers.last() else {
        return Err(Error::shape("no encoder layers"));
    };
    if target.layers.len() != layers.len() {
        return Err(Error::shape("target moments and encoder layers differ in depth"));
    }
    if bottleneck.shape() != z_hat.shape() {
        return Err(Error::shape("bottleneck and z_hat differ in shape"));
    }
    let mut grads: Vec<FeatureMap> = if want_grad {
        layers.iter().map(|l| FeatureMap::zeros(l.height(), l.width(), l.channels())).collect()
    } else {
        Vec::new()
    };

    let n = z_hat.data().len() as f64;
    let mut content = 0.0;
    for (a, b) in bottleneck.data().iter().zip(z_hat.data()) {
        let d = a - b;
        content += d * d;
    }
    content /= n;
    if let Some(g) = grads.last_mut() {
        for ((gv, a), b) in g.data_mut().iter_mut().zip(bottleneck.data()).zip(z_hat.data()) {
            *gv += 2.0 * (a - b) / n;
        }
    }

    let mut style = 0.0;
    for (l, z) in layers.iter().enumerate() {
        let tgt = &target.layers[l];
        if tgt.channels() != z.channels() {
            return Err(Error::shape("target channel count differs from encoder layer"));
        }
        let layer_mask = resize_mask(mask, z.height(), z.width())?;
        let grad = grads.get_mut(l);
        style += match mode {
            StyleMode::ClassConditional => {
                if tgt.classes() != mask.classes() {
                    return Err(Error::shape("target class count differs from mask"));
                }
                class_term(z, &layer_mask, tgt, lambda, grad)?
            }
            StyleMode::Global => match tgt.pooled() {
                Some(g) => global_term(z, &g, lambda, grad),
                None => 0.0,
            },
        };
    }
    Ok((StyleLoss { content, style }, grads))
}

/// `λ/|P| Σ_{c∈P} [MSE(μ_c, μ_c^t) + MSE(σ_c, σ_c^t)]` over the classes `P`
/// present in both the mask and the target.
fn class_term(z: &FeatureMap, mask: &LabelMap, tgt: &LayerMoments, lambda: f64, grad: Option<&mut FeatureMap>) -> Result<f64> {
    let own = feature_stats::class_moments(z, mask)?;
    let shared: Vec<usize> = own.present_classes().filter(|&c| tgt.present(c)).collect();
    if shared.is_empty() {
        return Ok(0.0);
    }
    let k = z.channels() as f64;
    let coef = lambda / shared.len() as f64;
    let mut term = 0.0;
    for &c in &shared {
        for ch in 0..z.channels() {
            let dm = own.class_mean(c)[ch] - tgt.class_mean(c)[ch];
            let ds = own.class_std(c)[ch] - tgt.class_std(c)[ch];
            term += (dm * dm + ds * ds) / k;
        }
    }
    if let Some(g) = grad {
        // dμ/dz = 1/n, dσ/dz = (z - μ) / (n σ)
        let kk = z.channels();
        let mut dmean = vec![0.0; mask.classes() * kk];
        let mut dstd = vec![0.0; mask.classes() * kk];
        for &c in &shared {
            let n = own.count[c];
            for ch in 0..kk {
                let dm = own.class_mean(c)[ch] - tgt.class_mean(c)[ch];
                let s = own.class_std(c)[ch];
                let ds = s - tgt.class_std(c)[ch];
                dmean[c * kk + ch] = coef * 2.0 * dm / (k * n);
                dstd[c * kk + ch] = if s > 0.0 { coef * 2.0 * ds / (k * n * s) } else { 0.0 };
            }
        }
        for (p, &c) in mask.indices().iter().enumerate() {
            let c = c as usize;
            if !tgt.present(c) {
                continue;
            }
            let zp = z.pixel(p);
            let gp = g.pixel_mut(p);
            for ch in 0..kk {
                let i = c * kk + ch;
                gp[ch] += dmean[i] + dstd[i] * (zp[ch] - own.class_mean(c)[ch]);
            }
        }
    }
    Ok(coef * term)
}

fn global_term(z: &FeatureMap, tgt: &Moments, lambda: f64, grad: Option<&mut FeatureMap>) -> f64 {
    let own = feature_stats::global_moments(z);
    let k = z.channels() as f64;
    let mut term = 0.0;
    for ch in 0..z.channels() {
        let dm = own.mean[ch] - tgt.mean[ch];
        let ds = own.std[ch] - tgt.std[ch];
        term += (dm * dm + ds * ds) / k;
    }
    if let Some(g) = grad {
        let n = z.pixels() as f64;
        for p in 0..z.pixels() {
            let zp = z.pixel(p);
            let gp = g.pixel_mut(p);
            for ch in 0..z.channels() {
                let dm = own.mean[ch] - tgt.mean[ch];
                let s = own.std[ch];
                let ds = s - tgt.std[ch];
                gp[ch] += lambda * 2.0 * dm / (k * n);
                if s > 0.0 {
                    gp[ch] += lambda * 2.0 * ds / (k * n * s) * (zp[ch] - own.mean[ch]);
                }
            }
        }
    }
    lambda * term
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::feature_stats::class_moments;
    use rand::Rng as _;

    fn random_image(h: usize, w: usize, seed: u64) -> FeatureMap {
        let mut r = rng::stream(seed, 50);
        FeatureMap::from_vec(h, w, 3, (0..h * w * 3).map(|_| r.random::<f64>()).collect()).unwrap()
    }

    fn random_mask(h: usize, w: usize, classes: usize, seed: u64) -> LabelMap {
        let mut r = rng::stream(seed, 51);
        LabelMap::from_indices(h, w, classes, (0..h * w).map(|_| r.random_range(0..classes as u8)).collect()).unwrap()
    }

    fn own_moments(net: &TransferNet, image: &FeatureMap, mask: &LabelMap) -> ClassMoments {
        let enc = net.encode(image);
        ClassMoments {
            layers: enc
                .layers
                .iter()
                .map(|z| class_moments(z, &resize_mask(mask, z.height(), z.width()).unwrap()).unwrap())
                .collect(),
        }
    }

    #[test]
    fn encoder_shapes_and_zero_input() {
        let enc = Encoder::new([4, 6, 8], 3);
        let out = enc.encode(&FeatureMap::zeros(8, 12, 3));
        assert_eq!(out.layers[0].shape(), (8, 12, 4));
        assert_eq!(out.layers[1].shape(), (4, 6, 6));
        assert_eq!(out.layers[2].shape(), (2, 3, 8));
        assert!(out.layers.iter().all(|l| l.data().iter().all(|&v| v == 0.0)));
        assert_eq!(out.layers[2].layer_id, 3);
    }

    #[test]
    fn encoder_is_deterministic() {
        let img = random_image(8, 8, 1);
        let a = Encoder::new([4, 6, 8], 3).encode(&img);
        let b = Encoder::new([4, 6, 8], 3).encode(&img);
        assert_eq!(a, b);
        assert_ne!(Encoder::new([4, 6, 8], 4).checksum(), Encoder::new([4, 6, 8], 3).checksum());
    }

    #[test]
    fn stylize_output_shape() {
        let net = TransferNet::new([4, 6, 8], 1, 2, StyleMode::ClassConditional, 10.0);
        let img = random_image(8, 12, 2);
        for mask in [random_mask(8, 12, 3, 3), LabelMap::filled(8, 12, 3, 1).unwrap()] {
            let tgt = own_moments(&net, &random_image(8, 12, 9), &random_mask(8, 12, 3, 4));
            let (out, _) = net.stylize(&img, &mask, &tgt).unwrap();
            assert_eq!(out.shape(), (8, 12, 3));
        }
        assert!(net.stylize(&random_image(6, 8, 1), &random_mask(6, 8, 3, 1), &own_moments(&net, &img, &random_mask(8, 12, 3, 3))).is_err());
    }

    #[test]
    fn hand_built_single_layer_loss() {
        // one channel, one layer: content MSE 0.5, class 0 mean gap 1, std gap 0
        let out = FeatureMap::from_vec(1, 2, 1, vec![1.0, 3.0]).unwrap();
        let z_hat = FeatureMap::from_vec(1, 2, 1, vec![2.0, 2.0]).unwrap();
        let mask = LabelMap::filled(1, 2, 2, 0).unwrap();
        let mut tgt = LayerMoments::empty(2, 1);
        tgt.set_class(0, &[3.0], &[1.0], 2.0);
        let target = ClassMoments { layers: vec![tgt] };
        let loss = style_loss(&[out], &z_hat, &target, &mask, StyleMode::ClassConditional, 2.0).unwrap();
        assert_eq!(loss.content, 1.0);
        assert_eq!(loss.style, 2.0);

        let out = FeatureMap::from_vec(1, 2, 1, vec![1.0, 3.0]).unwrap();
        let z_hat = FeatureMap::from_vec(1, 2, 1, vec![1.0, 2.0]).unwrap();
        let loss = style_loss(&[out], &z_hat, &target, &mask, StyleMode::ClassConditional, 2.0).unwrap();
        assert_eq!(loss.content, 0.5);
        assert_eq!(loss.total(), 2.5);
    }

    #[test]
    fn zero_lambda_is_content_only_and_exact_match_is_zero() {
        let net = TransferNet::new([4, 6, 8], 1, 2, StyleMode::ClassConditional, 10.0);
        let img = random_image(8, 8, 5);
        let mask = random_mask(8, 8, 3, 5);
        let enc = net.encode(&img);
        let tgt = own_moments(&net, &img, &mask);
        // decoded image equal to the content image, target equal to its moments
        let loss = style_loss(&enc.layers, enc.bottleneck(), &tgt, &mask, StyleMode::ClassConditional, 10.0).unwrap();
        assert!(loss.total().abs() < 1e-20);

        let z_hat = enc.bottleneck().map(|v| v + 0.5);
        let loss = style_loss(&enc.layers, &z_hat, &tgt, &mask, StyleMode::ClassConditional, 0.0).unwrap();
        assert_eq!(loss.style, 0.0);
        assert!((loss.content - 0.25).abs() < 1e-15);
    }

    #[test]
    fn global_and_class_modes_diverge() {
        let mut net = TransferNet::new([4, 6, 8], 1, 2, StyleMode::ClassConditional, 10.0);
        let img = random_image(8, 8, 5);
        let mask = random_mask(8, 8, 3, 5);
        let tgt = own_moments(&net, &random_image(8, 8, 6).map(|v| v * 3.0), &random_mask(8, 8, 3, 7));
        let (a, _) = net.stylize(&img, &mask, &tgt).unwrap();
        net.mode = StyleMode::Global;
        let (b, _) = net.stylize(&img, &mask, &tgt).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn decoder_step_keeps_encoder_frozen() {
        let mut net = TransferNet::new([4, 6, 8], 1, 2, StyleMode::ClassConditional, 10.0);
        let before = net.encoder.checksum();
        let img = random_image(8, 8, 5);
        let mask = random_mask(8, 8, 3, 5);
        let tgt = own_moments(&net, &random_image(8, 8, 6), &random_mask(8, 8, 3, 7));
        let input = net.decoder_input(&net.encode(&img), &mask, &tgt).unwrap();
        let batch = [TransferSample { input, mask: &mask, target: tgt }];
        let mut opt = Adam::new(net.decoder.params().len(), 1e-3);
        let dec_before = net.decoder.params().to_vec();
        net.decoder_step(&batch, &mut opt).unwrap();
        assert_eq!(net.encoder.checksum(), before);
        assert_ne!(net.decoder.params(), &dec_before[..]);
    }
}
