//! Training behaviour of the style-transfer decoder on toy data.

use cace_core::feature_stats::LayerMoments;
use cace_core::optim::Adam;
use cace_core::rng;
use cace_core::style_memory::{extract_domain_style, image_moments, StorageMode, StyleMemory};
use cace_core::synth_domains::{build_sequence, DataConfig, SequenceData};
use cace_core::transfer_net::{StyleMode, TransferNet, TransferSample};
use cace_core::ClassMoments;
use rand::Rng;

fn data(train: usize, val: usize) -> SequenceData {
    let mut cfg = DataConfig::default();
    cfg.scene.height = 16;
    cfg.scene.width = 16;
    cfg.train_per_domain = train;
    cfg.val_per_domain = val;
    cfg.seed = 21;
    build_sequence(&cfg).unwrap()
}

fn net() -> TransferNet {
    let mut net = TransferNet::new([8, 8, 16], 5, 6, StyleMode::ClassConditional, 1.0);
    net.skip_weight = 10.0;
    net
}

fn true_label_memory(net: &TransferNet, data: &SequenceData) -> StyleMemory {
    let mut mem = StyleMemory::new(StorageMode::Full).unwrap();
    let mut r = rng::stream(1, 1);
    for (k, t) in data.targets.iter().enumerate() {
        let labels = t.oracle_train_labels();
        let style = extract_domain_style(k as u32 + 1, &t.train_images, |i, _| Ok(labels[i].clone()), &net.encoder).unwrap();
        mem.insert(style, &mut r).unwrap();
    }
    mem
}

fn gap(a: &ClassMoments, b: &ClassMoments) -> f64 {
    let layer = |x: &LayerMoments, y: &LayerMoments| -> f64 {
        x.present_classes()
            .filter(|&c| y.present(c))
            .map(|c| {
                (0..x.channels())
                    .map(|k| (x.class_mean(c)[k] - y.class_mean(c)[k]).powi(2) + (x.class_std(c)[k] - y.class_std(c)[k]).powi(2))
                    .sum::<f64>()
            })
            .sum()
    };
    a.layers.iter().zip(&b.layers).map(|(x, y)| layer(x, y)).sum()
}

#[test]
fn loss_trends_down_on_a_fixed_batch() {
    let d = data(2, 1);
    let net0 = net();
    let mem = true_label_memory(&net0, &d);
    let mut r = rng::stream(2, 2);
    let targets: Vec<ClassMoments> = (0..2).map(|k| mem.draw_moments(&[k + 1], &mut r).unwrap()).collect();
    let masks = &d.source.train_labels;
    let mut net = net0.clone();
    let batch: Vec<TransferSample<'_>> = (0..2)
        .map(|i| TransferSample {
            input: net0.decoder_input(&net0.encode(&d.source.train_images[i]), &masks[i], &targets[i]).unwrap(),
            mask: &masks[i],
            target: targets[i].clone(),
        })
        .collect();
    let mut opt = Adam::new(net.decoder.params().len(), 1e-3);
    let losses: Vec<f64> = (0..500).map(|_| net.decoder_step(&batch, &mut opt).unwrap()).collect();
    let lead = losses[..100].iter().sum::<f64>() / 100.0;
    let trail = losses[400..].iter().sum::<f64>() / 100.0;
    assert!(trail < lead, "leading {lead}, trailing {trail}");
    assert_eq!(net.encoder, net0.encoder);
}

#[test]
fn trained_decoder_moves_held_out_images_towards_target_moments() {
    let d = data(16, 24);
    let mut net = net();
    let mem = true_label_memory(&net, &d);
    let src = &d.source;
    let encoded: Vec<_> = src.train_images.iter().map(|x| net.encode(x)).collect();
    let mut opt = Adam::new(net.decoder.params().len(), 3e-3);
    let mut r = rng::stream(3, 3);
    for _ in 0..1500 {
        let picks: Vec<(usize, ClassMoments)> = (0..2)
            .map(|_| {
                let i = r.random_range(0..encoded.len());
                let dom = r.random_range(1..=3);
                (i, mem.draw_moments(&[dom], &mut r).unwrap())
            })
            .collect();
        let batch: Vec<TransferSample<'_>> = picks
            .into_iter()
            .map(|(i, target)| TransferSample {
                input: net.decoder_input(&encoded[i], &src.train_labels[i], &target).unwrap(),
                mask: &src.train_labels[i],
                target,
            })
            .collect();
        net.decoder_step(&batch, &mut opt).unwrap();
    }

    let mut closer = 0;
    let total = src.val_images.len();
    for (i, (img, mask)) in src.val_images.iter().zip(&src.val_labels).enumerate() {
        let target = mem.draw_moments(&[(i % 3) as u32 + 1], &mut r).unwrap();
        let (out, _) = net.stylize(img, mask, &target).unwrap();
        let before = gap(&image_moments(&net.encode(img), mask).unwrap(), &target);
        let after = gap(&image_moments(&net.encode(&out), mask).unwrap(), &target);
        if after < before {
            closer += 1;
        }
    }
    assert!(closer * 10 >= total * 9, "{closer} of {total} held-out images moved closer");
}

#[test]
fn identity_style_loss_becomes_small() {
    // Target = the content image's own moments: a well-trained decoder
    // reproduces its input, so the loss approaches zero.
    let d = data(16, 1);
    let mut net = net();
    let src = &d.source;
    let encoded: Vec<_> = src.train_images.iter().map(|x| net.encode(x)).collect();
    let own: Vec<ClassMoments> = encoded.iter().zip(&src.train_labels).map(|(e, m)| image_moments(e, m).unwrap()).collect();
    let sample = |net: &TransferNet, i: usize| TransferSample {
        input: net.decoder_input(&encoded[i], &src.train_labels[i], &own[i]).unwrap(),
        mask: &src.train_labels[i],
        target: own[i].clone(),
    };
    let all: Vec<_> = (0..encoded.len()).map(|i| sample(&net, i)).collect();
    let initial = net.batch_loss(&all).unwrap();
    let mut opt = Adam::new(net.decoder.params().len(), 3e-3);
    let mut r = rng::stream(4, 4);
    for _ in 0..1500 {
        let batch: Vec<_> = (0..2).map(|_| sample(&net, r.random_range(0..encoded.len()))).collect();
        net.decoder_step(&batch, &mut opt).unwrap();
    }
    let trained = net.batch_loss(&all).unwrap();
    assert!(trained < 0.05 * initial, "initial {initial}, trained {trained}");
}
