//! Reverse-mode gradients against central finite differences.
//!
//! Every parameter is checked at `h = 1e-4` unless a ReLU changes state
//! inside `[θ - h, θ + h]`; there the loss has a kink and the difference
//! quotient is not a derivative, so the step is shrunk until the activation
//! pattern is constant on the whole stencil.

use cace_core::rng;
use cace_core::segmenter::Segmenter;
use cace_core::style_memory::image_moments;
use cace_core::transfer_net::{StyleMode, TransferNet, TransferSample};
use cace_core::{FeatureMap, LabelMap};
use rand::Rng;

const H: f64 = 1e-4;
const TOL: f64 = 1e-4;

fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

fn random_image(r: &mut impl Rng, h: usize, w: usize) -> FeatureMap {
    FeatureMap::from_vec(h, w, 3, (0..h * w * 3).map(|_| r.random::<f64>()).collect()).unwrap()
}

fn random_mask(r: &mut impl Rng, h: usize, w: usize, classes: usize) -> LabelMap {
    let labels = (0..h * w)
        .map(|p| {
            let (i, j) = (p / w, p % w);
            (((i / 2) * 7 + (j / 2) * 3 + r.random_range(0..2)) % classes) as u8
        })
        .collect();
    LabelMap::from_indices(h, w, classes, labels).unwrap()
}

/// Zero-initialized biases put dead units exactly on the ReLU kink; move
/// the parameters to a generic point first.
fn jitter(params: &mut [f64], seed: u64) {
    let mut r = rng::stream(seed, 99);
    for p in params {
        *p += 0.05 * (r.random::<f64>() - 0.5);
    }
}

struct Outcome {
    worst: f64,
    checked: usize,
    shrunk: usize,
}

fn check_all(
    params: &mut [f64],
    grads: &[f64],
    mut loss: impl FnMut(&[f64]) -> f64,
    mut pattern: impl FnMut(&[f64]) -> Vec<bool>,
) -> Outcome {
    let mut out = Outcome { worst: 0.0, checked: 0, shrunk: 0 };
    for i in 0..params.len() {
        let orig = params[i];
        let base = pattern(params);
        let mut h = H;
        loop {
            params[i] = orig + h;
            let same_up = pattern(params) == base;
            params[i] = orig - h;
            let same_down = pattern(params) == base;
            if (same_up && same_down) || h < 1e-9 {
                break;
            }
            h /= 10.0;
        }
        if h < H {
            out.shrunk += 1;
        }
        params[i] = orig + h;
        let up = loss(params);
        params[i] = orig - h;
        let down = loss(params);
        params[i] = orig;
        let numeric = (up - down) / (2.0 * h);
        let e = rel_err(grads[i], numeric);
        assert!(e < TOL, "parameter {i}: analytic {} numeric {} (h = {h:e})", grads[i], numeric);
        out.worst = out.worst.max(e);
        out.checked += 1;
    }
    out
}

fn decoder_pattern(net: &TransferNet, batch: &[TransferSample<'_>]) -> Vec<bool> {
    let mut bits = Vec::new();
    for s in batch {
        bits.extend(net.decoder.relu_pattern(&s.input.z_hat, &s.input.skip));
        let out = net.decoder.decode(&s.input.z_hat, &s.input.skip);
        for layer in net.encode(&out).layers.iter() {
            bits.extend(layer.data().iter().map(|&v| v > 0.0));
        }
    }
    bits
}

fn check_decoder(net: &TransferNet, batch: &[TransferSample<'_>]) -> Outcome {
    let (_, grads) = net.batch_loss_and_grad(batch).unwrap();
    let mut probe = net.clone();
    let mut probe2 = net.clone();
    let mut params = net.decoder.params().to_vec();
    check_all(
        &mut params,
        &grads,
        |p| {
            probe.decoder.params_mut().copy_from_slice(p);
            probe.batch_loss(batch).unwrap()
        },
        |p| {
            probe2.decoder.params_mut().copy_from_slice(p);
            decoder_pattern(&probe2, batch)
        },
    )
}

fn decoder_case(mode: StyleMode, seed: u64, skip_weight: f64) -> Outcome {
    let mut r = rng::stream(seed, 77);
    let mut net = TransferNet::new([3, 4, 5], seed, seed + 1, mode, 2.0);
    net.skip_weight = skip_weight;
    jitter(net.decoder.params_mut(), seed);
    let mut images = Vec::new();
    let mut masks = Vec::new();
    for _ in 0..2 {
        images.push(random_image(&mut r, 8, 8));
        masks.push(random_mask(&mut r, 8, 8, 3));
    }
    let style_img = random_image(&mut r, 8, 8);
    let style_mask = random_mask(&mut r, 8, 8, 3);
    let target = image_moments(&net.encode(&style_img), &style_mask).unwrap();
    let batch: Vec<TransferSample<'_>> = (0..2)
        .map(|k| TransferSample {
            input: net.decoder_input(&net.encode(&images[k]), &masks[k], &target).unwrap(),
            mask: &masks[k],
            target: target.clone(),
        })
        .collect();
    check_decoder(&net, &batch)
}

#[test]
fn decoder_gradient_class_conditional() {
    for seed in 0..4 {
        let o = decoder_case(StyleMode::ClassConditional, seed, 0.0);
        assert!(o.worst < TOL);
        assert!(o.shrunk * 10 < o.checked, "too many kinks: {} of {}", o.shrunk, o.checked);
    }
}

#[test]
fn decoder_gradient_global() {
    for seed in 0..4 {
        let o = decoder_case(StyleMode::Global, seed, 0.0);
        assert!(o.worst < TOL);
    }
}

#[test]
fn decoder_gradient_with_skip_content() {
    for seed in 0..2 {
        let o = decoder_case(StyleMode::ClassConditional, seed, 3.0);
        assert!(o.worst < TOL);
    }
}

#[test]
fn segmenter_gradient() {
    for seed in 0..4 {
        let mut r = rng::stream(seed, 3);
        let mut seg = Segmenter::new(4, 3, seed);
        jitter(seg.params_mut(), seed);
        let batch: Vec<(FeatureMap, LabelMap)> =
            (0..2).map(|_| (random_image(&mut r, 8, 8), random_mask(&mut r, 8, 8, 3))).collect();
        let (_, grads) = seg.batch_loss_and_grad(&batch).unwrap();
        let mut probe = seg.clone();
        let mut probe2 = seg.clone();
        let mut params = seg.params().to_vec();
        let o = check_all(
            &mut params,
            &grads,
            |p| {
                probe.params_mut().copy_from_slice(p);
                probe.batch_loss(&batch).unwrap()
            },
            |p| {
                probe2.params_mut().copy_from_slice(p);
                batch.iter().flat_map(|(x, _)| probe2.relu_pattern(x)).collect()
            },
        );
        assert!(o.worst < TOL);
        assert_eq!(o.checked, seg.params().len());
    }
}

#[test]
fn zero_loss_point_has_zero_gradient() {
    // With λ = 0 and a decoder that outputs a constant image (zero output
    // weights), feeding that image's bottleneck back as ẑ makes the loss
    // exactly zero, a global minimum.
    let mut r = rng::stream(8, 8);
    let mut net = TransferNet::new([3, 4, 5], 1, 2, StyleMode::ClassConditional, 0.0);
    let len = net.decoder.params().len();
    let out_len = 3 * 3 * 3 * 3 + 3;
    for (k, p) in net.decoder.params_mut()[len - out_len..].iter_mut().enumerate() {
        *p = if k >= out_len - 3 { 0.4 + 0.1 * k as f64 / out_len as f64 } else { 0.0 };
    }
    let img = random_image(&mut r, 8, 8);
    let mask = random_mask(&mut r, 8, 8, 3);
    let target = image_moments(&net.encode(&img), &mask).unwrap();
    let mut input = net.decoder_input(&net.encode(&img), &mask, &target).unwrap();
    let out = net.decoder.decode(&input.z_hat, &input.skip);
    input.z_hat = net.encode(&out).bottleneck().clone();
    assert_eq!(net.decoder.decode(&input.z_hat, &input.skip), out);
    let batch = [TransferSample { input, mask: &mask, target }];
    let (loss, grads) = net.batch_loss_and_grad(&batch).unwrap();
    assert_eq!(loss, 0.0);
    assert!(grads.iter().all(|g| g.abs() < 1e-15));
}
