//! Labeled image sets on disk.
//!
//! ```text
//! <dir>/dataset.json          {"format": "cace-dataset", "version": 1,
//!                              "height": H, "width": W, "classes": C,
//!                              "domains": [{"id": 0, "name": "source", "images": N}, ...]}
//! <dir>/domain_<id>/<i>.ppm   image i (P6), i zero-padded to 4 digits
//! <dir>/domain_<id>/<i>.pgm   its labels (P5, one class index per pixel)
//! ```
//!
//! Exported images sit on the 8-bit grid already, so reading them back
//! reproduces the in-memory splits exactly.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use cace_core::synth_domains::SequenceData;
use cace_core::{FeatureMap, LabelMap};
use serde::{Deserialize, Serialize};

use crate::pnm::{self, PnmError};

pub const FORMAT: &str = "cace-dataset";
pub const VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}: {source}", path.display())]
    Image { path: PathBuf, source: PnmError },
    #[error("dataset.json: {0}")]
    Index(#[from] serde_json::Error),
    #[error("{0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, DatasetError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetIndex {
    pub format: String,
    pub version: u32,
    pub height: usize,
    pub width: usize,
    pub classes: usize,
    pub domains: Vec<DomainEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainEntry {
    pub id: u32,
    pub name: String,
    pub images: usize,
}

/// One labeled domain split.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSplit {
    pub id: u32,
    pub name: String,
    pub images: Vec<FeatureMap>,
    pub labels: Vec<LabelMap>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn img_err(path: &Path) -> impl FnOnce(PnmError) -> DatasetError + '_ {
    move |source| DatasetError::Image {
        path: path.to_path_buf(),
        source,
    }
}

fn file_stem(dir: &Path, id: u32, i: usize) -> PathBuf {
    dir.join(format!("domain_{id}")).join(format!("{i:04}"))
}

/// Write labeled splits under `dir`, which must not contain a dataset yet.
pub fn write_splits(dir: &Path, splits: &[LabeledSplit]) -> Result<DatasetIndex> {
    let first = splits
        .iter()
        .flat_map(|s| s.labels.first())
        .next()
        .ok_or_else(|| DatasetError::Invalid("nothing to export".into()))?;
    let index = DatasetIndex {
        format: FORMAT.into(),
        version: VERSION,
        height: first.height(),
        width: first.width(),
        classes: first.classes(),
        domains: splits
            .iter()
            .map(|s| DomainEntry {
                id: s.id,
                name: s.name.clone(),
                images: s.images.len(),
            })
            .collect(),
    };
    let index_path = dir.join("dataset.json");
    if index_path.exists() {
        return Err(DatasetError::Invalid(format!("{} already exists", index_path.display())));
    }
    for s in splits {
        let sub = dir.join(format!("domain_{}", s.id));
        fs::create_dir_all(&sub).map_err(io_err(&sub))?;
        for (i, (img, lab)) in s.images.iter().zip(&s.labels).enumerate() {
            let stem = file_stem(dir, s.id, i);
            let p = stem.with_extension("ppm");
            let f = File::create(&p).map_err(io_err(&p))?;
            pnm::write_ppm(BufWriter::new(f), img).map_err(img_err(&p))?;
            let p = stem.with_extension("pgm");
            let f = File::create(&p).map_err(io_err(&p))?;
            pnm::write_pgm(BufWriter::new(f), lab).map_err(img_err(&p))?;
        }
    }
    let json = serde_json::to_string_pretty(&index)? + "\n";
    fs::write(&index_path, json).map_err(io_err(&index_path))?;
    Ok(index)
}

/// Validation splits of the source and of every target domain.
pub fn evaluation_splits(data: &SequenceData) -> Vec<LabeledSplit> {
    let mut out = vec![LabeledSplit {
        id: 0,
        name: "source".into(),
        images: data.source.val_images.clone(),
        labels: data.source.val_labels.clone(),
    }];
    for t in &data.targets {
        let (images, labels) = t.evaluation_split();
        out.push(LabeledSplit {
            id: t.spec.domain_id,
            name: t.spec.name.clone(),
            images: images.to_vec(),
            labels: labels.to_vec(),
        });
    }
    out
}

pub fn read_index(dir: &Path) -> Result<DatasetIndex> {
    let p = dir.join("dataset.json");
    let text = fs::read_to_string(&p).map_err(io_err(&p))?;
    let index: DatasetIndex = serde_json::from_str(&text)?;
    if index.format != FORMAT || index.version != VERSION {
        return Err(DatasetError::Invalid(format!("unsupported dataset {} v{}", index.format, index.version)));
    }
    Ok(index)
}

/// Read every split, checking that images and labels agree with the
/// index and with each other.
pub fn read_splits(dir: &Path) -> Result<(DatasetIndex, Vec<LabeledSplit>)> {
    let index = read_index(dir)?;
    let mut splits = Vec::with_capacity(index.domains.len());
    for d in &index.domains {
        let mut images = Vec::with_capacity(d.images);
        let mut labels = Vec::with_capacity(d.images);
        for i in 0..d.images {
            let stem = file_stem(dir, d.id, i);
            let p = stem.with_extension("ppm");
            let f = File::open(&p).map_err(io_err(&p))?;
            let img = pnm::read_ppm(BufReader::new(f)).map_err(img_err(&p))?;
            let q = stem.with_extension("pgm");
            let f = File::open(&q).map_err(io_err(&q))?;
            let lab = pnm::read_pgm(BufReader::new(f), index.classes).map_err(img_err(&q))?;
            if (img.height(), img.width()) != (index.height, index.width)
                || (lab.height(), lab.width()) != (index.height, index.width)
            {
                return Err(DatasetError::Invalid(format!(
                    "{}: shape does not match the dataset's {}×{}",
                    stem.display(),
                    index.height,
                    index.width
                )));
            }
            images.push(img);
            labels.push(lab);
        }
        splits.push(LabeledSplit {
            id: d.id,
            name: d.name.clone(),
            images,
            labels,
        });
    }
    Ok((index, splits))
}
