//! Library routines against straightforward loop implementations on random
//! small instances.
#![allow(clippy::needless_range_loop)]

use cace_core::feature_stats::{class_moments, resize_mask};
use cace_core::rng;
use cace_core::segmenter::{ce_loss, miou, Confusion, ProbMap};
use cace_core::style_memory::extract_domain_style;
use cace_core::transfer_net::Encoder;
use cace_core::{FeatureMap, LabelMap};
use rand::Rng;

const INSTANCES: usize = 120;

fn random_map(r: &mut impl Rng, h: usize, w: usize, k: usize) -> FeatureMap {
    FeatureMap::from_vec(h, w, k, (0..h * w * k).map(|_| r.random_range(-2.0..2.0)).collect()).unwrap()
}

fn random_labels(r: &mut impl Rng, h: usize, w: usize, classes: usize) -> LabelMap {
    // skewed so some classes are often missing
    let labels = (0..h * w).map(|_| (r.random_range(0..classes * classes) as f64).sqrt() as u8).collect();
    LabelMap::from_indices(h, w, classes, labels).unwrap()
}

/// Per-class per-channel (mean, population std, count) from gathered lists.
fn brute_moments(z: &FeatureMap, y: &LabelMap) -> Vec<Vec<(f64, f64)>> {
    let mut out = Vec::new();
    for c in 0..y.classes() {
        let mut per_channel = Vec::new();
        for ch in 0..z.channels() {
            let mut vals = Vec::new();
            for i in 0..z.height() {
                for j in 0..z.width() {
                    if y.class_at(i, j) == c {
                        vals.push(z.get(i, j, ch));
                    }
                }
            }
            if vals.is_empty() {
                per_channel.push((f64::NAN, f64::NAN));
                continue;
            }
            let n = vals.len() as f64;
            let mean = vals.iter().sum::<f64>() / n;
            let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            per_channel.push((mean, var.sqrt()));
        }
        out.push(per_channel);
    }
    out
}

#[test]
fn class_moments_match_loops() {
    let mut r = rng::stream(1, 1);
    for _ in 0..INSTANCES {
        let (h, w, k, classes) = (r.random_range(1..10), r.random_range(1..10), r.random_range(1..6), r.random_range(2..6));
        let z = random_map(&mut r, h, w, k);
        let y = random_labels(&mut r, h, w, classes);
        let got = class_moments(&z, &y).unwrap();
        let want = brute_moments(&z, &y);
        for c in 0..classes {
            let count = y.indices().iter().filter(|&&v| v as usize == c).count();
            assert_eq!(got.count[c], count as f64);
            assert_eq!(got.present(c), count > 0);
            if count == 0 {
                continue;
            }
            for ch in 0..k {
                let (m, s) = want[c][ch];
                assert!((got.class_mean(c)[ch] - m).abs() <= 1e-12);
                assert!((got.class_std(c)[ch] - s).abs() <= 1e-12);
            }
        }
    }
}

#[test]
fn ce_loss_matches_loops() {
    let mut r = rng::stream(2, 2);
    for _ in 0..INSTANCES {
        let (h, w, classes) = (r.random_range(1..8), r.random_range(1..8), r.random_range(2..7));
        let mut logits = random_map(&mut r, h, w, classes);
        // occasionally push a probability under the log clamp
        if r.random_bool(0.2) {
            logits.set(0, 0, 0, -80.0);
        }
        let p = ProbMap::softmax(&logits);
        let y = random_labels(&mut r, h, w, classes);
        let mut sum = 0.0;
        for i in 0..h {
            for j in 0..w {
                for c in 0..classes {
                    let yc = if y.class_at(i, j) == c { 1.0 } else { 0.0 };
                    let pc: f64 = p.as_map().get(i, j, c);
                    sum += yc * pc.max(1e-12).ln();
                }
            }
        }
        let want = -sum / (h * w * classes) as f64;
        assert!((ce_loss(&p, &y).unwrap() - want).abs() <= 1e-12);
    }
}

#[test]
fn miou_matches_set_counting() {
    let mut r = rng::stream(3, 3);
    for _ in 0..INSTANCES {
        let classes = r.random_range(2..6);
        let n = r.random_range(1..4);
        let (h, w) = (r.random_range(1..7), r.random_range(1..7));
        let preds: Vec<LabelMap> = (0..n).map(|_| random_labels(&mut r, h, w, classes)).collect();
        let gts: Vec<LabelMap> = (0..n).map(|_| random_labels(&mut r, h, w, classes)).collect();
        let got = miou(&preds, &gts).unwrap();

        let mut conf = Confusion::new(classes);
        let mut ious = Vec::new();
        for c in 0..classes {
            let (mut inter, mut union) = (0u64, 0u64);
            for (p, g) in preds.iter().zip(&gts) {
                for (&a, &b) in p.indices().iter().zip(g.indices()) {
                    let (a, b) = (a as usize == c, b as usize == c);
                    inter += (a && b) as u64;
                    union += (a || b) as u64;
                }
            }
            let iou = (union > 0).then(|| inter as f64 / union as f64);
            assert_eq!(got.per_class[c], iou);
            ious.extend(iou);
        }
        for (p, g) in preds.iter().zip(&gts) {
            conf.add(p, g).unwrap();
        }
        for gt in 0..classes {
            for pr in 0..classes {
                let want: u64 = preds
                    .iter()
                    .zip(&gts)
                    .map(|(p, g)| {
                        p.indices().iter().zip(g.indices()).filter(|(&a, &b)| a as usize == pr && b as usize == gt).count() as u64
                    })
                    .sum();
                assert_eq!(conf.count(gt, pr), want);
            }
        }
        let mean = ious.iter().sum::<f64>() / ious.len() as f64;
        assert!((got.mean - mean).abs() <= 1e-12);
    }
}

#[test]
fn resize_mask_matches_index_map() {
    let mut r = rng::stream(4, 4);
    for _ in 0..INSTANCES {
        let (h, w) = (r.random_range(1..17), r.random_range(1..17));
        let (h2, w2) = (r.random_range(1..17), r.random_range(1..17));
        let y = random_labels(&mut r, h, w, 4);
        let small = resize_mask(&y, h2, w2).unwrap();
        for i in 0..h2 {
            for j in 0..w2 {
                let si = ((i as f64) * h as f64 / h2 as f64).floor() as usize;
                let sj = ((j as f64) * w as f64 / w2 as f64).floor() as usize;
                assert_eq!(small.class_at(i, j), y.class_at(si, sj));
            }
        }
    }
}

#[test]
fn extraction_matches_per_image_loop() {
    let mut r = rng::stream(5, 5);
    let enc = Encoder::new([3, 4, 5], 9);
    let images: Vec<FeatureMap> = (0..3)
        .map(|_| FeatureMap::from_vec(8, 8, 3, (0..192).map(|_| r.random::<f64>()).collect()).unwrap())
        .collect();
    let labels: Vec<LabelMap> = (0..3).map(|_| random_labels(&mut r, 8, 8, 4)).collect();
    let style = extract_domain_style(2, &images, |i, _| Ok(labels[i].clone()), &enc).unwrap();
    assert_eq!(style.domain_id, 2);
    assert_eq!(style.samples.len(), 3);
    for (k, sample) in style.samples.iter().enumerate() {
        let layers = enc.encode(&images[k]).layers;
        assert_eq!(sample.layers.len(), layers.len());
        for (lm, z) in sample.layers.iter().zip(layers.iter()) {
            // nearest-neighbour mask at this resolution, built by hand
            let (h, w) = (z.height(), z.width());
            let idx = (0..h * w).map(|p| labels[k].class_at((p / w) * 8 / h, (p % w) * 8 / w) as u8).collect();
            let mask = LabelMap::from_indices(h, w, 4, idx).unwrap();
            let want = brute_moments(z, &mask);
            for c in 0..4 {
                for ch in 0..z.channels() {
                    if lm.present(c) {
                        assert!((lm.class_mean(c)[ch] - want[c][ch].0).abs() <= 1e-12);
                        assert!((lm.class_std(c)[ch] - want[c][ch].1).abs() <= 1e-12);
                    } else {
                        assert!(want[c][ch].0.is_nan());
                    }
                }
            }
        }
    }
}
