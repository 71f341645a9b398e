//! Procedural labeled scenes and a sequence of appearance domains with
//! known per-class color shifts.
//!
//! A scene is a background with layered rectangles and ellipses, one shape
//! family per class. A domain re-colors every class region with its own
//! affine color transform, adds per-class noise and a global tint. Labels
//! never change with the domain.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng as _, RngCore};
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::rng::{self, Rng};
use crate::segmenter::{Confusion, MiouReport};
use crate::tensor::{FeatureMap, LabelMap};

pub type Mat3 = [[f64; 3]; 3];

pub const IDENTITY: Mat3 = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

/// Scene geometry. `height` and `width` must be multiples of 4 for the
/// transfer network.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub height: usize,
    pub width: usize,
    pub classes: usize,
    pub max_attempts: usize,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            height: 32,
            width: 32,
            classes: 5,
            max_attempts: 64,
        }
    }
}

impl SceneSpec {
    fn validate(&self) -> Result<()> {
        if self.height < 8 || self.width < 8 {
            return Err(Error::invalid("scenes must be at least 8x8"));
        }
        if !self.height.is_multiple_of(4) || !self.width.is_multiple_of(4) {
            return Err(Error::invalid("scene height and width must be multiples of 4"));
        }
        if self.classes < 2 || self.classes > PALETTE.len() {
            return Err(Error::invalid(format!("scenes support 2..={} classes", PALETTE.len())));
        }
        if self.max_attempts == 0 {
            return Err(Error::invalid("max_attempts must be positive"));
        }
        Ok(())
    }

    fn min_pixels(&self) -> usize {
        (self.height * self.width / 100).max(2)
    }
}

/// Base colors of the source domain.
const PALETTE: [[f64; 3]; 8] = [
    [0.55, 0.55, 0.50],
    [0.70, 0.35, 0.30],
    [0.30, 0.45, 0.70],
    [0.35, 0.65, 0.35],
    [0.75, 0.70, 0.30],
    [0.60, 0.40, 0.65],
    [0.30, 0.60, 0.65],
    [0.45, 0.30, 0.20],
];

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub image: FeatureMap,
    pub labels: LabelMap,
}

/// Render one scene. Every class (including background) covers at least
/// 1% of the pixels; layouts violating this are redrawn.
pub fn generate_scene(spec: &SceneSpec, seed: u64) -> Result<Scene> {
    spec.validate()?;
    let mut r = rng::stream(seed, 0);
    let (h, w) = (spec.height, spec.width);
    for _ in 0..spec.max_attempts {
        let mut labels = vec![0u8; h * w];
        for class in 1..spec.classes {
            let shapes = r.random_range(1..=2);
            for _ in 0..shapes {
                let ci = r.random_range(0.0..h as f64);
                let cj = r.random_range(0.0..w as f64);
                let ri = r.random_range(h as f64 / 8.0..h as f64 / 4.0);
                let rj = r.random_range(w as f64 / 8.0..w as f64 / 4.0);
                let ellipse = class % 2 == 0;
                for i in 0..h {
                    for j in 0..w {
                        let di = (i as f64 + 0.5 - ci) / ri;
                        let dj = (j as f64 + 0.5 - cj) / rj;
                        let inside = if ellipse {
                            di * di + dj * dj <= 1.0
                        } else {
                            di.abs() <= 1.0 && dj.abs() <= 1.0
                        };
                        if inside {
                            labels[i * w + j] = class as u8;
                        }
                    }
                }
            }
        }
        let labels = LabelMap::from_indices(h, w, spec.classes, labels)?;
        if labels.class_counts().iter().all(|&n| n >= spec.min_pixels()) {
            let image = render(&labels, &mut r);
            return Ok(Scene { image, labels });
        }
    }
    Err(Error::Placement(spec.max_attempts))
}

fn render(labels: &LabelMap, r: &mut Rng) -> FeatureMap {
    let (h, w) = (labels.height(), labels.width());
    let jitter = Normal::new(0.0, 0.04).unwrap();
    let grain = Normal::new(0.0, 0.02).unwrap();
    let colors: Vec<[f64; 3]> = (0..labels.classes())
        .map(|c| {
            let mut col = PALETTE[c];
            col.iter_mut().for_each(|v| *v += jitter.sample(r));
            col
        })
        .collect();
    let mut img = FeatureMap::zeros(h, w, 3);
    for i in 0..h {
        for j in 0..w {
            let c = labels.class_at(i, j);
            // odd classes carry stripes, the background a vertical gradient
            let texture = if c == 0 {
                0.1 * (i as f64 / h as f64 - 0.5)
            } else if c % 2 == 1 {
                if (i + j) % 4 < 2 { 0.05 } else { -0.05 }
            } else {
                0.0
            };
            for k in 0..3 {
                img.set(i, j, k, colors[c][k] + texture + grain.sample(r));
            }
        }
    }
    img
}

/// Appearance of one domain: per-class affine color transform
/// `x ↦ gain · x + bias`, per-class noise, and a global additive tint.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainSpec {
    pub domain_id: u32,
    pub name: String,
    pub gain: Vec<Mat3>,
    pub bias: Vec<[f64; 3]>,
    pub noise: Vec<f64>,
    pub tint: [f64; 3],
}

impl DomainSpec {
    pub fn identity(domain_id: u32, classes: usize) -> Self {
        Self {
            domain_id,
            name: String::from("source"),
            gain: vec![IDENTITY; classes],
            bias: vec![[0.0; 3]; classes],
            noise: vec![0.0; classes],
            tint: [0.0; 3],
        }
    }

    pub fn classes(&self) -> usize {
        self.gain.len()
    }

    fn validate(&self, classes: usize) -> Result<()> {
        if self.gain.len() != classes || self.bias.len() != classes || self.noise.len() != classes {
            return Err(Error::invalid(format!(
                "domain {} describes {} classes, scenes have {classes}",
                self.domain_id,
                self.gain.len()
            )));
        }
        let finite = self.gain.iter().flatten().flatten().all(|v| v.is_finite())
            && self.bias.iter().flatten().all(|v| v.is_finite())
            && self.tint.iter().all(|v| v.is_finite())
            && self.noise.iter().all(|v| v.is_finite() && *v >= 0.0);
        if !finite {
            return Err(Error::invalid(format!("domain {} has non-finite or negative parameters", self.domain_id)));
        }
        Ok(())
    }

    /// Mean diagonal gain of class `c`: above 1 brightens, below 1 darkens.
    pub fn luminance_gain(&self, c: usize) -> f64 {
        (self.gain[c][0][0] + self.gain[c][1][1] + self.gain[c][2][2]) / 3.0
    }

    /// Classes `(a, b)` whose gains move in opposite directions, if any.
    pub fn opposing_pair(&self) -> Option<(usize, usize)> {
        let n = self.classes();
        (0..n)
            .flat_map(|a| (0..n).map(move |b| (a, b)))
            .find(|&(a, b)| self.luminance_gain(a) > 1.0 && self.luminance_gain(b) < 1.0)
    }
}

fn mat_mul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

fn scale(g: f64) -> Mat3 {
    [[g, 0.0, 0.0], [0.0, g, 0.0], [0.0, 0.0, g]]
}

/// Blend towards the per-pixel channel mean by `amount` (0 keeps color,
/// 1 yields gray).
fn desaturate(amount: f64) -> Mat3 {
    let keep = 1.0 - amount;
    let m = amount / 3.0;
    [[keep + m, m, m], [m, keep + m, m], [m, m, keep + m]]
}

/// Rotation of the color cube around the gray axis.
pub fn hue_rotation(theta: f64) -> Mat3 {
    let (s, c) = (libm::sin(theta), libm::cos(theta));
    let t = (1.0 - c) / 3.0;
    let q = libm::sqrt(1.0 / 3.0) * s;
    [[c + t, t - q, t + q], [t + q, c + t, t - q], [t - q, t + q, c + t]]
}

/// The default target sequence. Domains loosely echo fog, night and
/// rain/snow; domain 1 brightens class 1 (gain 1.5) while darkening class 2
/// (gain 0.6). Longer sequences cycle through the three appearances with
/// growing intensity.
pub fn default_domains(classes: usize, count: usize) -> Vec<DomainSpec> {
    (1..=count as u32)
        .map(|id| {
            let round = (id - 1) / 3;
            let extra = 0.1 * round as f64;
            let mut d = DomainSpec::identity(id, classes);
            match (id - 1) % 3 {
                0 => {
                    d.name = String::from("fog");
                    for c in 0..classes {
                        d.gain[c] = scale(0.75);
                        d.bias[c] = [0.2; 3];
                        d.noise[c] = 0.01;
                    }
                    d.gain[1 % classes] = scale(1.5 + extra);
                    d.bias[1 % classes] = [0.0; 3];
                    if classes > 2 {
                        d.gain[2] = scale(0.6 - extra / 2.0);
                        d.bias[2] = [0.0; 3];
                    }
                }
                1 => {
                    d.name = String::from("night");
                    for c in 0..classes {
                        d.gain[c] = scale(0.6 - extra / 2.0);
                        d.noise[c] = 0.02;
                    }
                    // lights keep their brightness
                    if classes > 4 {
                        d.gain[4] = scale(1.2);
                    }
                    d.gain[1 % classes] = mat_mul(&scale(0.7), &hue_rotation(-0.4));
                    d.tint = [0.0, 0.0, 0.05];
                }
                _ => {
                    d.name = String::from("snow");
                    for c in 0..classes {
                        d.gain[c] = desaturate(0.5 + extra);
                        d.noise[c] = 0.03;
                    }
                    d.gain[0] = scale(0.5);
                    d.bias[0] = [0.45; 3];
                    if classes > 2 {
                        d.gain[2] = mat_mul(&scale(1.3), &desaturate(0.3));
                    }
                }
            }
            d
        })
        .collect()
}

/// Re-color `base` class by class: `gain_c · x + bias_c + tint + noise`.
/// No clamping is applied.
pub fn apply_domain_style(base: &FeatureMap, labels: &LabelMap, dspec: &DomainSpec, seed: u64) -> Result<FeatureMap> {
    if base.channels() != 3 || (base.height(), base.width()) != (labels.height(), labels.width()) {
        return Err(Error::shape("image and labels differ in shape"));
    }
    dspec.validate(labels.classes())?;
    let mut r = rng::stream(seed, 1);
    let mut out = base.clone();
    for (p, &c) in labels.indices().iter().enumerate() {
        let c = c as usize;
        let x = base.pixel(p);
        let g = &dspec.gain[c];
        let sigma = dspec.noise[c];
        for (k, v) in out.pixel_mut(p).iter_mut().enumerate() {
            let mut y = g[k][0] * x[0] + g[k][1] * x[1] + g[k][2] * x[2] + dspec.bias[c][k] + dspec.tint[k];
            if sigma > 0.0 {
                y += sigma * Normal::new(0.0, 1.0).unwrap().sample(&mut r);
            }
            *v = y;
        }
    }
    Ok(out)
}

/// Global brightness, contrast, saturation and hue perturbation, clamped to
/// `[0, 1]`. Strength 0 returns the input unchanged.
pub fn color_jitter(image: &FeatureMap, strength: f64, rng: &mut Rng) -> Result<FeatureMap> {
    if !(0.0..=1.0).contains(&strength) {
        return Err(Error::invalid(format!("jitter strength {strength} not in [0, 1]")));
    }
    if image.channels() != 3 {
        return Err(Error::shape("jitter needs a 3-channel image"));
    }
    if strength == 0.0 {
        return Ok(image.clone());
    }
    let spread = 0.4 * strength;
    let brightness = 1.0 + rng.random_range(-spread..=spread);
    let contrast = 1.0 + rng.random_range(-spread..=spread);
    let saturation = 1.0 + rng.random_range(-spread..=spread);
    let hue = rng.random_range(-1.0..=1.0) * 0.1 * core::f64::consts::PI * strength;
    let rot = hue_rotation(hue);

    let mut out = image.clone();
    let n = image.pixels() as f64;
    let mut gray_mean = 0.0;
    for p in 0..image.pixels() {
        let px = image.pixel(p);
        gray_mean += brightness * (px[0] + px[1] + px[2]) / 3.0;
    }
    gray_mean /= n;
    for p in 0..image.pixels() {
        let px = out.pixel_mut(p);
        let mut v = [px[0] * brightness, px[1] * brightness, px[2] * brightness];
        for c in v.iter_mut() {
            *c = gray_mean + contrast * (*c - gray_mean);
        }
        let g = (v[0] + v[1] + v[2]) / 3.0;
        for c in v.iter_mut() {
            *c = g + saturation * (*c - g);
        }
        for k in 0..3 {
            px[k] = (rot[k][0] * v[0] + rot[k][1] * v[1] + rot[k][2] * v[2]).clamp(0.0, 1.0);
        }
    }
    Ok(out)
}

/// Snap to the 8-bit grid of an exported image.
pub fn quantize(image: &FeatureMap) -> FeatureMap {
    image.map(|v| libm::round(v.clamp(0.0, 1.0) * 255.0) / 255.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataConfig {
    pub scene: SceneSpec,
    /// Target domains in arrival order (ids 1..=T).
    pub domains: Vec<DomainSpec>,
    pub train_per_domain: usize,
    pub val_per_domain: usize,
    pub seed: u64,
    pub require_opposing_pair: bool,
}

impl Default for DataConfig {
    fn default() -> Self {
        let scene = SceneSpec::default();
        let domains = default_domains(scene.classes, 3);
        Self {
            scene,
            domains,
            train_per_domain: 64,
            val_per_domain: 32,
            seed: 0,
            require_opposing_pair: true,
        }
    }
}

impl DataConfig {
    pub fn validate(&self) -> Result<()> {
        self.scene.validate()?;
        if self.domains.is_empty() {
            return Err(Error::invalid("at least one target domain is required"));
        }
        if self.train_per_domain == 0 || self.val_per_domain == 0 {
            return Err(Error::invalid("splits must be non-empty"));
        }
        for (i, d) in self.domains.iter().enumerate() {
            if d.domain_id as usize != i + 1 {
                return Err(Error::invalid("target domain ids must run 1..=T in order"));
            }
            d.validate(self.scene.classes)?;
        }
        if self.require_opposing_pair && !self.domains.iter().any(|d| d.opposing_pair().is_some()) {
            return Err(Error::invalid("no target domain moves two classes in opposite directions"));
        }
        Ok(())
    }
}

/// Labeled source domain.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceDomain {
    pub train_images: Vec<FeatureMap>,
    pub train_labels: Vec<LabelMap>,
    pub val_images: Vec<FeatureMap>,
    pub val_labels: Vec<LabelMap>,
}

/// Target domain as seen by training: images only. Labels are reachable
/// through [`TargetDomain::evaluate`] and [`TargetDomain::evaluation_split`],
/// and for the real-label ablation through
/// [`TargetDomain::oracle_train_labels`].
#[derive(Debug, Clone, PartialEq)]
pub struct TargetDomain {
    pub spec: DomainSpec,
    pub train_images: Vec<FeatureMap>,
    pub val_images: Vec<FeatureMap>,
    train_labels: Vec<LabelMap>,
    val_labels: Vec<LabelMap>,
}

impl TargetDomain {
    pub fn evaluate(&self, predict: impl FnMut(&FeatureMap) -> LabelMap) -> Result<MiouReport> {
        evaluate_split(&self.val_images, &self.val_labels, predict)
    }

    /// Validation images with their labels, for evaluation and export.
    pub fn evaluation_split(&self) -> (&[FeatureMap], &[LabelMap]) {
        (&self.val_images, &self.val_labels)
    }

    /// True training labels; only used to measure the cost of pseudo-labels.
    pub fn oracle_train_labels(&self) -> &[LabelMap] {
        &self.train_labels
    }
}

/// mIoU of `predict` over a labeled split.
pub fn evaluate_split(images: &[FeatureMap], labels: &[LabelMap], mut predict: impl FnMut(&FeatureMap) -> LabelMap) -> Result<MiouReport> {
    let Some(first) = labels.first() else {
        return Err(Error::invalid("empty evaluation split"));
    };
    let mut conf = Confusion::new(first.classes());
    for (img, gt) in images.iter().zip(labels) {
        conf.add(&predict(img), gt)?;
    }
    conf.miou()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SequenceData {
    pub source: SourceDomain,
    pub targets: Vec<TargetDomain>,
}

impl SequenceData {
    pub fn classes(&self) -> usize {
        self.source.train_labels[0].classes()
    }
}

/// Generate the source domain and every target domain with disjoint,
/// fixed train/validation splits. Images are snapped to the 8-bit grid so
/// that exported PPM files reproduce them exactly.
pub fn build_sequence(config: &DataConfig) -> Result<SequenceData> {
    config.validate()?;

    let mut seeds = rng::stream(config.seed, rng::tags::DATA);
    let mut split = |dspec: &DomainSpec, n: usize| -> Result<(Vec<FeatureMap>, Vec<LabelMap>)> {
        let mut images = Vec::with_capacity(n);
        let mut labels = Vec::with_capacity(n);
        for _ in 0..n {
            let seed = seeds.next_u64();
            let scene = generate_scene(&config.scene, seed)?;
            let styled = apply_domain_style(&scene.image, &scene.labels, dspec, seed)?;
            images.push(quantize(&styled));
            labels.push(scene.labels);
        }
        Ok((images, labels))
    };

    let identity = DomainSpec::identity(0, config.scene.classes);
    let (train_images, train_labels) = split(&identity, config.train_per_domain)?;
    let (val_images, val_labels) = split(&identity, config.val_per_domain)?;
    let source = SourceDomain {
        train_images,
        train_labels,
        val_images,
        val_labels,
    };
    let mut targets = Vec::with_capacity(config.domains.len());
    for d in &config.domains {
        let (train_images, train_labels) = split(d, config.train_per_domain)?;
        let (val_images, val_labels) = split(d, config.val_per_domain)?;
        targets.push(TargetDomain {
            spec: d.clone(),
            train_images,
            val_images,
            train_labels,
            val_labels,
        });
    }
    Ok(SequenceData { source, targets })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::feature_stats::class_moments;

    fn small() -> SceneSpec {
        SceneSpec {
            height: 16,
            width: 16,
            ..SceneSpec::default()
        }
    }

    #[test]
    fn scenes_are_deterministic_and_cover_all_classes() {
        let spec = SceneSpec::default();
        let a = generate_scene(&spec, 42).unwrap();
        assert_eq!(a, generate_scene(&spec, 42).unwrap());
        assert_ne!(a, generate_scene(&spec, 43).unwrap());
        for seed in 0..20 {
            let s = generate_scene(&small(), seed).unwrap();
            assert!(s.labels.class_counts().iter().all(|&n| n > 0));
        }
    }

    #[test]
    fn identity_domain_is_a_no_op() {
        let s = generate_scene(&small(), 1).unwrap();
        let out = apply_domain_style(&s.image, &s.labels, &DomainSpec::identity(0, 5), 7).unwrap();
        assert_eq!(out, s.image);
    }

    #[test]
    fn gain_two_doubles_a_constant_region() {
        let labels = LabelMap::from_indices(1, 2, 2, vec![0, 1]).unwrap();
        let img = FeatureMap::from_vec(1, 2, 3, vec![0.2; 6]).unwrap();
        let mut d = DomainSpec::identity(1, 2);
        d.gain[0] = scale(2.0);
        let out = apply_domain_style(&img, &labels, &d, 0).unwrap();
        assert_eq!(out.pixel(0), &[0.4, 0.4, 0.4]);
        assert_eq!(out.pixel(1), &[0.2, 0.2, 0.2]);
    }

    #[test]
    fn diagonal_transforms_propagate_class_moments() {
        let s = generate_scene(&small(), 3).unwrap();
        let mut d = DomainSpec::identity(1, 5);
        d.gain[1] = scale(1.5);
        d.bias[1] = [0.1, -0.2, 0.0];
        d.gain[2] = scale(-0.6);
        d.tint = [0.05, 0.0, 0.0];
        let out = apply_domain_style(&s.image, &s.labels, &d, 0).unwrap();
        let before = class_moments(&s.image, &s.labels).unwrap();
        let after = class_moments(&out, &s.labels).unwrap();
        for c in 0..5 {
            let a = d.gain[c][0][0];
            for k in 0..3 {
                let mu = a * before.class_mean(c)[k] + d.bias[c][k] + d.tint[k];
                assert!((after.class_mean(c)[k] - mu).abs() < 1e-12);
                assert!((after.class_std(c)[k] - a.abs() * before.class_std(c)[k]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn jitter_contract() {
        let s = generate_scene(&small(), 4).unwrap();
        let img = quantize(&s.image);
        assert_eq!(color_jitter(&img, 0.0, &mut rng::stream(1, 0)).unwrap(), img);
        let a = color_jitter(&img, 0.8, &mut rng::stream(1, 0)).unwrap();
        let b = color_jitter(&img, 0.8, &mut rng::stream(1, 0)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, img);
        assert!(a.data().iter().all(|v| (0.0..=1.0).contains(v)));
        assert!(color_jitter(&img, 1.5, &mut rng::stream(1, 0)).is_err());
    }

    #[test]
    fn default_sequence_splits_and_opposing_pair() {
        let cfg = DataConfig {
            scene: small(),
            train_per_domain: 8,
            val_per_domain: 4,
            ..DataConfig::default()
        };
        let data = build_sequence(&cfg).unwrap();
        assert_eq!(data.targets.len(), 3);
        for t in &data.targets {
            assert_eq!((t.train_images.len(), t.val_images.len()), (8, 4));
            for v in &t.val_images {
                assert!(!t.train_images.contains(v));
            }
        }
        let d1 = &data.targets[0].spec;
        assert_eq!(d1.luminance_gain(1), 1.5);
        assert_eq!(d1.luminance_gain(2), 0.6);
        assert!(d1.opposing_pair().is_some());
        assert_eq!(build_sequence(&cfg).unwrap(), data);

        let mut flat = cfg.clone();
        flat.domains = (1..=2).map(|i| DomainSpec::identity(i, 5)).collect();
        assert!(build_sequence(&flat).is_err());
        flat.require_opposing_pair = false;
        assert!(build_sequence(&flat).is_ok());
    }
}
