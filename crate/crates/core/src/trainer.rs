//! Sequential adaptation driver.
//!
//! For every arriving target domain `t`:
//! 1. pseudo-label its training images with the current segmenter,
//! 2. extract class moments and store them in the style memory,
//! 3. fine-tune the decoder, half of each batch styled after domain `t` and
//!    half after an earlier domain,
//! 4. fine-tune the segmenter on source images re-rendered in the style of
//!    domain `t`, replaying the original source or earlier styles.
//!
//! After the last domain one final model is evaluated on the validation
//! split of every domain.

use alloc::boxed::Box;
use alloc::vec::Vec;

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::feature_stats::ClassMoments;
use crate::optim::{Adam, SgdMomentum};
use crate::rng::{self, tags, Rng};
use crate::segmenter::{MiouReport, Segmenter};
use crate::style_memory::{extract_domain_style, StorageMode, StyleMemory};
use crate::synth_domains::{build_sequence, color_jitter, evaluate_split, DataConfig, SequenceData};
use crate::tensor::{FeatureMap, LabelMap};
use crate::transfer_net::{Encoded, StyleMode, TransferNet, TransferSample, STYLE_LAYERS};

/// How (and whether) the segmenter is adapted to target domains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TransferMode {
    /// Class-conditional style transfer.
    ClassConditional,
    /// Whole-image style transfer.
    Global,
    /// No adaptation; source pre-training with color jitter.
    JitterOnly,
    /// No adaptation at all (source only).
    None,
}

impl TransferMode {
    pub fn style_mode(self) -> Option<StyleMode> {
        match self {
            TransferMode::ClassConditional => Some(StyleMode::ClassConditional),
            TransferMode::Global => Some(StyleMode::Global),
            TransferMode::JitterOnly | TransferMode::None => None,
        }
    }
}

/// Labels used to extract target moments.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MomentSource {
    PseudoLabels,
    /// Ground-truth target labels (ablation only).
    TrueLabels,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ArchConfig {
    pub encoder_channels: [usize; STYLE_LAYERS],
    pub segmenter_width: usize,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self {
            encoder_channels: [8, 16, 32],
            segmenter_width: 16,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SequenceConfig {
    pub data: DataConfig,
    pub arch: ArchConfig,
    pub pretrain_steps: usize,
    /// Decoder iterations when the first target domain arrives.
    pub initial_decoder_steps: usize,
    /// Decoder iterations for every later domain.
    pub decoder_steps: usize,
    /// Segmenter iterations per domain.
    pub segmenter_steps: usize,
    pub batch_size: usize,
    pub memory: StorageMode,
    pub transfer: TransferMode,
    /// Replay the source / earlier styles in segmenter batches.
    pub replay: bool,
    pub moment_source: MomentSource,
    /// Color-jitter strength during source pre-training (0 disables).
    /// `TransferMode::JitterOnly` requires a positive value.
    pub pretrain_jitter: f64,
    pub lambda: f64,
    /// Weight of the full-resolution skip content term (0 disables).
    pub skip_weight: f64,
    pub decoder_lr: f64,
    pub segmenter_lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub hflip: bool,
    pub seed: u64,
}

impl Default for SequenceConfig {
    fn default() -> Self {
        Self {
            data: DataConfig::default(),
            arch: ArchConfig::default(),
            pretrain_steps: 2000,
            initial_decoder_steps: 1500,
            decoder_steps: 500,
            segmenter_steps: 1000,
            batch_size: 2,
            memory: StorageMode::Full,
            transfer: TransferMode::ClassConditional,
            replay: true,
            moment_source: MomentSource::PseudoLabels,
            pretrain_jitter: 0.0,
            lambda: 10.0,
            skip_weight: 1.0,
            decoder_lr: 1e-4,
            segmenter_lr: 0.05,
            momentum: 0.9,
            weight_decay: 5e-4,
            hflip: true,
            seed: 0,
        }
    }
}

impl SequenceConfig {
    /// Smaller images and shorter schedules; about a minute of single-core
    /// time per adaptation run. Widths and the decoder rate are raised to
    /// keep the shorter schedules converging.
    pub fn toy() -> Self {
        let mut c = Self::default();
        c.data.scene.height = 16;
        c.data.scene.width = 16;
        c.arch = ArchConfig {
            encoder_channels: [16, 16, 32],
            segmenter_width: 24,
        };
        c.pretrain_steps = 3000;
        c.initial_decoder_steps = 3000;
        c.decoder_steps = 1000;
        c.segmenter_steps = 1000;
        c.decoder_lr = 3e-3;
        c.lambda = 0.3;
        c.skip_weight = 30.0;
        c
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("pretrain_steps", self.pretrain_steps),
            ("initial_decoder_steps", self.initial_decoder_steps),
            ("decoder_steps", self.decoder_steps),
            ("segmenter_steps", self.segmenter_steps),
            ("batch_size", self.batch_size),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::invalid(alloc::format!("{name} must be at least 1")));
        }
        if !self.batch_size.is_multiple_of(2) {
            return Err(Error::invalid("batch_size must be even so batches split into halves"));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::invalid("lambda must be finite and non-negative"));
        }
        if !(self.skip_weight >= 0.0 && self.skip_weight.is_finite()) {
            return Err(Error::invalid("skip_weight must be finite and non-negative"));
        }
        for (name, v) in [("decoder_lr", self.decoder_lr), ("segmenter_lr", self.segmenter_lr)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(alloc::format!("{name} must be positive")));
            }
        }
        if !(0.0..1.0).contains(&self.momentum) || !(self.weight_decay >= 0.0) {
            return Err(Error::invalid("momentum must be in [0, 1) and weight_decay non-negative"));
        }
        if !(0.0..=1.0).contains(&self.pretrain_jitter) {
            return Err(Error::invalid("pretrain_jitter must be in [0, 1]"));
        }
        if self.transfer == TransferMode::JitterOnly && self.pretrain_jitter == 0.0 {
            return Err(Error::invalid("jitter_only needs a positive pretrain_jitter"));
        }
        if let StorageMode::Subsample(p) = self.memory {
            if !(p > 0.0 && p <= 1.0) {
                return Err(Error::invalid("subsample fraction must be in (0, 1]"));
            }
        }
        if self.arch.encoder_channels.contains(&0) || self.arch.segmenter_width == 0 {
            return Err(Error::invalid("layer widths must be positive"));
        }
        self.data.validate()
    }

    pub fn domains(&self) -> usize {
        self.data.domains.len()
    }
}

/// Final evaluation of one domain.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainResult {
    pub domain: u32,
    pub miou: MiouReport,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunReport {
    /// One entry per domain `0..=T`, all from the final model.
    pub final_results: Vec<DomainResult>,
    /// Unweighted mean of the per-domain mIoUs.
    pub mean_miou: f64,
    /// `before_adapt[k - 1]`: mIoU of domain `k` when it arrives.
    pub before_adapt: Vec<f64>,
    /// `after_adapt[k - 1]`: mIoU of domain `k` right after adapting to it.
    pub after_adapt: Vec<f64>,
    pub pretrain_losses: Vec<f64>,
    pub decoder_losses: Vec<f64>,
    pub segmenter_losses: Vec<f64>,
    /// Scalars held by the style memory at the end of the run.
    pub memory_scalars: usize,
    pub encoder_checksum: u64,
    pub decoder_checksum: u64,
    pub segmenter_checksum: u64,
    /// Target domains fully processed.
    pub completed_domains: usize,
}

impl RunReport {
    /// Drop of domain `k`'s mIoU between adapting to it and the end of the
    /// run.
    pub fn forgetting(&self, k: usize) -> Option<f64> {
        let after = *self.after_adapt.get(k.checked_sub(1)?)?;
        Some(after - self.final_results.get(k)?.miou.mean)
    }
}

/// A finished run with its final models.
#[derive(Debug, Clone)]
pub struct Run {
    pub report: RunReport,
    pub net: TransferNet,
    pub segmenter: Segmenter,
    pub memory: StyleMemory,
}

/// A failed run: the error and whatever was recorded before it.
#[derive(Debug, Clone)]
pub struct RunFailure {
    pub error: Error,
    pub partial: RunReport,
}

/// Source-pretrained segmenter together with the settings that produced it.
#[derive(Debug, Clone)]
pub struct Pretrained {
    pub segmenter: Segmenter,
    pub optimizer: SgdMomentum,
    pub losses: Vec<f64>,
    key: PretrainKey,
}

#[derive(Debug, Clone, PartialEq)]
struct PretrainKey {
    data: DataConfig,
    width: usize,
    steps: usize,
    batch: usize,
    jitter: f64,
    lr: f64,
    momentum: f64,
    weight_decay: f64,
    hflip: bool,
    seed: u64,
}

impl PretrainKey {
    fn of(config: &SequenceConfig) -> Self {
        Self {
            data: config.data.clone(),
            width: config.arch.segmenter_width,
            steps: config.pretrain_steps,
            batch: config.batch_size,
            jitter: config.pretrain_jitter,
            lr: config.segmenter_lr,
            momentum: config.momentum,
            weight_decay: config.weight_decay,
            hflip: config.hflip,
            seed: config.seed,
        }
    }
}

/// Where the second half of a segmenter batch comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ReplayChoice {
    Source,
    Domain(u32),
}

/// Replay rule: with probability 1/2 an original source image, otherwise a
/// uniformly chosen earlier domain (always the source when `t == 1`).
pub fn replay_choice(t: u32, rng: &mut Rng) -> ReplayChoice {
    let source = rng.random_bool(0.5);
    if t <= 1 || source {
        ReplayChoice::Source
    } else {
        ReplayChoice::Domain(rng.random_range(1..t))
    }
}

/// Training state of one run.
#[derive(Debug, Clone)]
pub struct Trainer {
    config: SequenceConfig,
    data: SequenceData,
    net: TransferNet,
    segmenter: Segmenter,
    seg_opt: SgdMomentum,
    dec_opt: Adam,
    memory: StyleMemory,
    source_encoded: Vec<Encoded>,
    report: RunReport,
    pretrained: bool,
    decoder_rng: Rng,
    segmenter_rng: Rng,
    memory_rng: Rng,
}

impl Trainer {
    pub fn new(config: SequenceConfig) -> Result<Self> {
        config.validate()?;
        let data = build_sequence(&config.data)?;
        Self::with_data(config, data)
    }

    pub fn with_data(config: SequenceConfig, data: SequenceData) -> Result<Self> {
        config.validate()?;
        let classes = data.classes();
        let style_mode = config.transfer.style_mode().unwrap_or(StyleMode::ClassConditional);
        let mut net = TransferNet::new(config.arch.encoder_channels, config.seed, config.seed, style_mode, config.lambda);
        net.skip_weight = config.skip_weight;
        let segmenter = Segmenter::new(config.arch.segmenter_width, classes, config.seed);
        let seg_opt = SgdMomentum::new(segmenter.params().len(), config.segmenter_lr, config.momentum, config.weight_decay);
        let dec_opt = Adam::new(net.decoder.params().len(), config.decoder_lr);
        let memory = StyleMemory::new(config.memory)?;
        let needs_transfer = config.transfer.style_mode().is_some();
        let source_encoded: Vec<Encoded> = if needs_transfer {
            data.source.train_images.iter().map(|x| net.encode(x)).collect()
        } else {
            Vec::new()
        };
        let seed = config.seed;
        Ok(Self {
            config,
            data,
            net,
            segmenter,
            seg_opt,
            dec_opt,
            memory,
            source_encoded,
            report: RunReport::default(),
            pretrained: false,
            decoder_rng: rng::stream(seed, tags::DECODER_TRAIN),
            segmenter_rng: rng::stream(seed, tags::SEGMENTER_TRAIN),
            memory_rng: rng::stream(seed, tags::MEMORY),
        })
    }

    pub fn config(&self) -> &SequenceConfig {
        &self.config
    }

    pub fn data(&self) -> &SequenceData {
        &self.data
    }

    pub fn net(&self) -> &TransferNet {
        &self.net
    }

    pub fn segmenter(&self) -> &Segmenter {
        &self.segmenter
    }

    pub fn memory(&self) -> &StyleMemory {
        &self.memory
    }

    pub fn report(&self) -> &RunReport {
        &self.report
    }

    fn pretrain_inner(&mut self) -> Result<Pretrained> {
        let cfg = &self.config;
        let mut r = rng::stream(cfg.seed, tags::PRETRAIN);
        let n = self.data.source.train_images.len();
        let mut losses = Vec::with_capacity(cfg.pretrain_steps);
        for step in 0..cfg.pretrain_steps {
            let mut batch = Vec::with_capacity(cfg.batch_size);
            for _ in 0..cfg.batch_size {
                let i = r.random_range(0..n);
                let mut x = self.data.source.train_images[i].clone();
                if cfg.pretrain_jitter > 0.0 {
                    x = color_jitter(&x, cfg.pretrain_jitter, &mut r)?;
                }
                batch.push(maybe_flip(cfg.hflip, x, self.data.source.train_labels[i].clone(), &mut r));
            }
            let loss = self.segmenter.seg_step(&batch, &mut self.seg_opt, step)?;
            losses.push(loss);
        }
        self.pretrained = true;
        self.report.pretrain_losses = losses.clone();
        Ok(Pretrained {
            segmenter: self.segmenter.clone(),
            optimizer: self.seg_opt.clone(),
            losses,
            key: PretrainKey::of(&self.config),
        })
    }

    /// Pre-train and hand back the pretrained state for reuse.
    pub fn pretrain(&mut self) -> Result<Pretrained> {
        self.pretrain_inner()
    }

    /// Start from a segmenter pretrained with identical data and
    /// pre-training settings.
    pub fn load_pretrained(&mut self, pretrained: &Pretrained) -> Result<()> {
        if pretrained.key != PretrainKey::of(&self.config) {
            return Err(Error::invalid("pretrained state was produced with different pre-training settings"));
        }
        self.segmenter = pretrained.segmenter.clone();
        self.seg_opt = pretrained.optimizer.clone();
        self.report.pretrain_losses = pretrained.losses.clone();
        self.pretrained = true;
        Ok(())
    }

    fn draw_target(&mut self, domains: &[u32]) -> Result<ClassMoments> {
        match self.net.mode {
            StyleMode::ClassConditional => self.memory.draw_moments(domains, &mut self.decoder_rng),
            StyleMode::Global => self.memory.draw_image_moments(domains, &mut self.decoder_rng),
        }
    }

    /// Algorithm steps for domain `t` (1-based): label, extract and store
    /// moments, fine-tune the decoder, fine-tune the segmenter.
    pub fn adapt_to_domain(&mut self, t: u32) -> Result<()> {
        let idx = t as usize;
        if idx == 0 || idx > self.data.targets.len() {
            return Err(Error::invalid(alloc::format!("no target domain {t}")));
        }
        if !self.pretrained {
            return Err(Error::invalid("pretrain the segmenter before adapting"));
        }
        if (1..t).any(|d| !self.memory.contains(d)) || self.memory.contains(t) {
            return Err(Error::invalid(alloc::format!("memory must hold exactly domains 1..{t} before domain {t}")));
        }
        if self.config.transfer.style_mode().is_none() {
            return Err(Error::invalid("this transfer mode does not adapt to target domains"));
        }
        let before = self.data.targets[idx - 1].evaluate(|x| self.segmenter.pseudo_label(x))?;
        self.report.before_adapt.push(before.mean);
        self.store_domain(t).map_err(|e| e.in_stage(idx, "moment extraction"))?;
        self.train_decoder(t).map_err(|e| e.in_stage(idx, "decoder"))?;
        self.train_segmenter(t).map_err(|e| e.in_stage(idx, "segmenter"))?;
        let after = self.data.targets[idx - 1].evaluate(|x| self.segmenter.pseudo_label(x))?;
        self.report.after_adapt.push(after.mean);
        self.report.completed_domains = idx;
        Ok(())
    }

    fn store_domain(&mut self, t: u32) -> Result<()> {
        let target = &self.data.targets[t as usize - 1];
        let seg = &self.segmenter;
        let style = match self.config.moment_source {
            MomentSource::PseudoLabels => {
                extract_domain_style(t, &target.train_images, |_, x| Ok(seg.pseudo_label(x)), &self.net.encoder)?
            }
            MomentSource::TrueLabels => {
                let labels = target.oracle_train_labels();
                extract_domain_style(t, &target.train_images, |i, _| Ok(labels[i].clone()), &self.net.encoder)?
            }
        };
        self.memory.insert(style, &mut self.memory_rng)
    }

    fn train_decoder(&mut self, t: u32) -> Result<()> {
        let steps = if t == 1 {
            self.config.initial_decoder_steps
        } else {
            self.config.decoder_steps
        };
        let b = self.config.batch_size;
        let n = self.source_encoded.len();
        let previous: Vec<u32> = (1..t).collect();
        for _ in 0..steps {
            let mut picks = Vec::with_capacity(b);
            for slot in 0..b {
                let i = self.decoder_rng.random_range(0..n);
                let target = if slot < b / 2 || previous.is_empty() {
                    self.draw_target(&[t])?
                } else {
                    self.draw_target(&previous)?
                };
                picks.push((i, target));
            }
            let mut batch = Vec::with_capacity(b);
            for (i, target) in picks {
                let mask = &self.data.source.train_labels[i];
                let input = self.net.decoder_input(&self.source_encoded[i], mask, &target)?;
                batch.push(TransferSample { input, mask, target });
            }
            let loss = self.net.decoder_step(&batch, &mut self.dec_opt)?;
            self.report.decoder_losses.push(loss);
        }
        Ok(())
    }

    /// Source image `i` re-rendered in a style drawn from `domain`.
    fn stylized_source(&mut self, i: usize, domain: u32) -> Result<FeatureMap> {
        let target = self.draw_target(&[domain])?;
        let mask = &self.data.source.train_labels[i];
        let input = self.net.decoder_input(&self.source_encoded[i], mask, &target)?;
        Ok(self.net.decoder.decode(&input.z_hat, &input.skip))
    }

    /// Segmenter batch for domain `t`: the first half is styled after `t`,
    /// the second half follows [`replay_choice`] (or is styled after `t`
    /// too when replay is off). Labels are the untouched source labels.
    pub fn compose_seg_batch(&mut self, t: u32) -> Result<Vec<(FeatureMap, LabelMap)>> {
        let b = self.config.batch_size;
        let n = self.data.source.train_images.len();
        let mut batch = Vec::with_capacity(b);
        for slot in 0..b {
            let i = self.segmenter_rng.random_range(0..n);
            let choice = if slot < b / 2 || !self.config.replay {
                ReplayChoice::Domain(t)
            } else {
                replay_choice(t, &mut self.segmenter_rng)
            };
            let image = match choice {
                ReplayChoice::Source => self.data.source.train_images[i].clone(),
                ReplayChoice::Domain(d) => self.stylized_source(i, d)?,
            };
            let label = self.data.source.train_labels[i].clone();
            batch.push(maybe_flip(self.config.hflip, image, label, &mut self.segmenter_rng));
        }
        Ok(batch)
    }

    fn train_segmenter(&mut self, t: u32) -> Result<()> {
        for step in 0..self.config.segmenter_steps {
            let batch = self.compose_seg_batch(t)?;
            let loss = self.segmenter.seg_step(&batch, &mut self.seg_opt, step)?;
            self.report.segmenter_losses.push(loss);
        }
        Ok(())
    }

    /// Evaluate the current segmenter on every domain's validation split.
    pub fn evaluate_all(&self) -> Result<Vec<DomainResult>> {
        let seg = &self.segmenter;
        let mut out = Vec::with_capacity(self.data.targets.len() + 1);
        let src = &self.data.source;
        out.push(DomainResult {
            domain: 0,
            miou: evaluate_split(&src.val_images, &src.val_labels, |x| seg.pseudo_label(x))?,
        });
        for (k, target) in self.data.targets.iter().enumerate() {
            out.push(DomainResult {
                domain: k as u32 + 1,
                miou: target.evaluate(|x| seg.pseudo_label(x))?,
            });
        }
        Ok(out)
    }

    fn finalize_report(&mut self) {
        self.report.memory_scalars = self.memory.scalar_count();
        self.report.encoder_checksum = self.net.encoder.checksum();
        self.report.decoder_checksum = crate::nn::checksum(self.net.decoder.params());
        self.report.segmenter_checksum = self.segmenter.checksum();
    }

    /// Pretrain (unless already done), adapt to every domain, evaluate.
    pub fn run(mut self) -> core::result::Result<Run, Box<RunFailure>> {
        let result = (|| -> Result<()> {
            if !self.pretrained {
                self.pretrain_inner()?;
            }
            if self.config.transfer.style_mode().is_some() {
                for t in 1..=self.data.targets.len() as u32 {
                    self.adapt_to_domain(t)?;
                }
            }
            let results = self.evaluate_all()?;
            self.report.mean_miou = results.iter().map(|r| r.miou.mean).sum::<f64>() / results.len() as f64;
            self.report.final_results = results;
            Ok(())
        })();
        self.finalize_report();
        match result {
            Ok(()) => Ok(Run {
                report: self.report,
                net: self.net,
                segmenter: self.segmenter,
                memory: self.memory,
            }),
            Err(error) => Err(Box::new(RunFailure {
                error,
                partial: self.report,
            })),
        }
    }
}

fn maybe_flip(enabled: bool, x: FeatureMap, y: LabelMap, r: &mut Rng) -> (FeatureMap, LabelMap) {
    if enabled && r.random_bool(0.5) {
        (x.flip_horizontal(), y.flip_horizontal())
    } else {
        (x, y)
    }
}

/// Build the data, pretrain, adapt to every domain and evaluate.
pub fn run_sequence(config: &SequenceConfig) -> core::result::Result<Run, Box<RunFailure>> {
    let trainer = Trainer::new(config.clone()).map_err(|error| {
        Box::new(RunFailure {
            error,
            partial: RunReport::default(),
        })
    })?;
    trainer.run()
}

/// Like [`run_sequence`], starting from an already pretrained segmenter.
pub fn run_sequence_from(
    config: &SequenceConfig,
    data: SequenceData,
    pretrained: &Pretrained,
) -> core::result::Result<Run, Box<RunFailure>> {
    let fail = |error| {
        Box::new(RunFailure {
            error,
            partial: RunReport::default(),
        })
    };
    let mut trainer = Trainer::with_data(config.clone(), data).map_err(fail)?;
    trainer.load_pretrained(pretrained).map_err(fail)?;
    trainer.run()
}

/// Mean of per-domain mIoUs.
pub fn mean_of(results: &[DomainResult]) -> f64 {
    if results.is_empty() {
        return 0.0;
    }
    results.iter().map(|r| r.miou.mean).sum::<f64>() / results.len() as f64
}
