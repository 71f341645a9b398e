//! Sequence driver bookkeeping on a tiny configuration.
#![allow(clippy::type_complexity)]

use cace_core::style_memory::StorageMode;
use cace_core::synth_domains::build_sequence;
use cace_core::trainer::{run_sequence, run_sequence_from, SequenceConfig, Trainer, TransferMode};
use cace_core::{Error, FeatureMap};

fn tiny() -> SequenceConfig {
    let mut c = SequenceConfig::default();
    c.data.scene.height = 8;
    c.data.scene.width = 8;
    c.data.train_per_domain = 4;
    c.data.val_per_domain = 3;
    c.arch.encoder_channels = [4, 4, 6];
    c.arch.segmenter_width = 4;
    c.pretrain_steps = 40;
    c.initial_decoder_steps = 10;
    c.decoder_steps = 5;
    c.segmenter_steps = 8;
    c.seed = 2;
    c.data.seed = 2;
    c
}

fn is_source_image(x: &FeatureMap, sources: &[FeatureMap]) -> bool {
    sources.iter().any(|s| s == x || &s.flip_horizontal() == x)
}

#[test]
fn memory_holds_exactly_the_adapted_domains() {
    let mut tr = Trainer::new(tiny()).unwrap();
    assert!(matches!(tr.adapt_to_domain(1), Err(Error::InvalidArgument(_))), "adapting before pretraining");
    tr.pretrain().unwrap();
    assert!(tr.adapt_to_domain(2).is_err(), "domain 2 before domain 1");
    let enc = tr.net().encoder.checksum();
    for t in 1..=3u32 {
        tr.adapt_to_domain(t).unwrap();
        assert_eq!(tr.memory().domain_ids().collect::<Vec<_>>(), (1..=t).collect::<Vec<_>>());
        assert_eq!(tr.report().after_adapt.len(), t as usize);
        assert_eq!(tr.report().before_adapt.len(), t as usize);
    }
    assert!(tr.adapt_to_domain(3).is_err(), "domain 3 twice");
    assert!(tr.adapt_to_domain(4).is_err(), "no domain 4");
    assert_eq!(tr.net().encoder.checksum(), enc);
}

#[test]
fn report_has_one_entry_per_domain_and_is_deterministic() {
    let cfg = tiny();
    let a = run_sequence(&cfg).unwrap();
    let b = run_sequence(&cfg).unwrap();
    assert_eq!(a.report, b.report);
    let r = &a.report;
    assert_eq!(r.final_results.len(), cfg.domains() + 1);
    assert_eq!(r.final_results.iter().map(|d| d.domain).collect::<Vec<_>>(), vec![0, 1, 2, 3]);
    let mean = r.final_results.iter().map(|d| d.miou.mean).sum::<f64>() / 4.0;
    assert_eq!(r.mean_miou, mean);
    assert_eq!(r.pretrain_losses.len(), cfg.pretrain_steps);
    assert_eq!(r.decoder_losses.len(), cfg.initial_decoder_steps + 2 * cfg.decoder_steps);
    assert_eq!(r.segmenter_losses.len(), 3 * cfg.segmenter_steps);
    assert_eq!(r.completed_domains, 3);
    assert_eq!(r.memory_scalars, a.memory.scalar_count());
    assert!(r.forgetting(1).is_some() && r.forgetting(0).is_none() && r.forgetting(4).is_none());

    let mut other = cfg.clone();
    other.seed = 3;
    assert_ne!(run_sequence(&other).unwrap().report.segmenter_checksum, r.segmenter_checksum);
}

#[test]
fn shared_pretraining_reproduces_a_fresh_run() {
    let cfg = tiny();
    let data = build_sequence(&cfg.data).unwrap();
    let mut tr = Trainer::with_data(cfg.clone(), data.clone()).unwrap();
    let pre = tr.pretrain().unwrap();
    let shared = run_sequence_from(&cfg, data.clone(), &pre).unwrap();
    assert_eq!(shared.report, run_sequence(&cfg).unwrap().report);

    let mut global = cfg.clone();
    global.transfer = TransferMode::Global;
    assert!(run_sequence_from(&global, data.clone(), &pre).is_ok(), "transfer mode does not affect pre-training");

    let mut changed = cfg.clone();
    changed.pretrain_steps += 1;
    let err = run_sequence_from(&changed, data, &pre).unwrap_err();
    assert!(matches!(err.error, Error::InvalidArgument(_)));
}

#[test]
fn pretraining_helps_and_jitter_changes_it() {
    let cfg = tiny();
    let mut tr = Trainer::new(cfg.clone()).unwrap();
    let untrained = tr.evaluate_all().unwrap()[0].miou.mean;
    let pre = tr.pretrain().unwrap();
    let trained = tr.evaluate_all().unwrap()[0].miou.mean;
    assert!(trained > untrained, "untrained {untrained}, pretrained {trained}");

    let mut jit = cfg.clone();
    jit.pretrain_jitter = 0.5;
    let pre_j = Trainer::new(jit).unwrap().pretrain().unwrap();
    assert_ne!(pre.segmenter.checksum(), pre_j.segmenter.checksum());
}

#[test]
fn first_domain_replays_the_original_source() {
    let mut tr = Trainer::new(tiny()).unwrap();
    tr.pretrain().unwrap();
    tr.adapt_to_domain(1).unwrap();
    let sources = tr.data().source.train_images.clone();
    let labels = tr.data().source.train_labels.clone();
    for _ in 0..30 {
        let batch = tr.compose_seg_batch(1).unwrap();
        assert_eq!(batch.len(), 2);
        assert!(!is_source_image(&batch[0].0, &sources), "first sample is stylized");
        assert!(is_source_image(&batch[1].0, &sources), "second sample is an original source image");
        for (_, y) in &batch {
            assert!(labels.iter().any(|l| l == y || &l.flip_horizontal() == y));
        }
    }
}

#[test]
fn replay_mixes_source_and_styles_only_when_enabled() {
    for replay in [true, false] {
        let mut cfg = tiny();
        cfg.replay = replay;
        let mut tr = Trainer::new(cfg).unwrap();
        tr.pretrain().unwrap();
        tr.adapt_to_domain(1).unwrap();
        tr.adapt_to_domain(2).unwrap();
        let sources = tr.data().source.train_images.clone();
        let mut source_second = 0;
        for _ in 0..60 {
            let batch = tr.compose_seg_batch(2).unwrap();
            if is_source_image(&batch[1].0, &sources) {
                source_second += 1;
            }
        }
        if replay {
            assert!((15..=45).contains(&source_second), "{source_second} of 60");
        } else {
            assert_eq!(source_second, 0);
        }
    }
}

#[test]
fn non_adapting_modes_skip_the_transfer_network() {
    let mut cfg = tiny();
    cfg.transfer = TransferMode::None;
    let run = run_sequence(&cfg).unwrap();
    assert!(run.report.decoder_losses.is_empty() && run.report.segmenter_losses.is_empty());
    assert_eq!(run.report.final_results.len(), 4);
    assert!(run.memory.is_empty());

    cfg.transfer = TransferMode::JitterOnly;
    assert!(run_sequence(&cfg).is_err(), "jitter_only without jitter");
    cfg.pretrain_jitter = 0.3;
    assert!(run_sequence(&cfg).is_ok());
}

#[test]
fn memory_modes_change_the_footprint() {
    let mut cfg = tiny();
    cfg.data.train_per_domain = 8;
    let full = run_sequence(&cfg).unwrap().report.memory_scalars;
    cfg.memory = StorageMode::Subsample(0.25);
    let sub = run_sequence(&cfg).unwrap().report.memory_scalars;
    cfg.memory = StorageMode::Gaussian;
    let gauss = run_sequence(&cfg).unwrap().report.memory_scalars;
    assert_eq!(sub * 4, full);
    assert!(gauss < full);
}

#[test]
fn invalid_configurations_are_rejected() {
    let cases: Vec<(&str, Box<dyn Fn(&mut SequenceConfig)>)> = vec![
        ("zero steps", Box::new(|c| c.segmenter_steps = 0)),
        ("odd batch", Box::new(|c| c.batch_size = 3)),
        ("negative lambda", Box::new(|c| c.lambda = -1.0)),
        ("nan lr", Box::new(|c| c.decoder_lr = f64::NAN)),
        ("momentum 1", Box::new(|c| c.momentum = 1.0)),
        ("subsample 0", Box::new(|c| c.memory = StorageMode::Subsample(0.0))),
        ("zero width", Box::new(|c| c.arch.segmenter_width = 0)),
        ("odd size", Box::new(|c| c.data.scene.width = 10)),
        ("no domains", Box::new(|c| c.data.domains.clear())),
        ("empty split", Box::new(|c| c.data.val_per_domain = 0)),
    ];
    for (name, edit) in cases {
        let mut c = tiny();
        edit(&mut c);
        assert!(c.validate().is_err(), "{name}");
        assert!(Trainer::new(c).is_err(), "{name}");
    }
}
