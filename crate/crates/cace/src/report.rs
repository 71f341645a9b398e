//! CSV and manifest output of a run.

use std::collections::BTreeMap;
use std::path::Path;

use cace_core::segmenter::MiouReport;
use cace_core::trainer::{DomainResult, RunReport};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;

fn cell(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{x:.6}"),
        None => "nan".into(),
    }
}

/// `domain,iou_0,…,iou_{C-1},miou`, one row per domain. Classes absent
/// from both prediction and ground truth are written as `nan`.
pub fn metrics_csv(rows: &[(String, &MiouReport)], classes: usize) -> String {
    let mut out = String::from("domain");
    for c in 0..classes {
        out.push_str(&format!(",iou_{c}"));
    }
    out.push_str(",miou\n");
    for (name, m) in rows {
        out.push_str(name);
        for c in 0..classes {
            out.push(',');
            out.push_str(&cell(m.per_class.get(c).copied().flatten()));
        }
        out.push(',');
        out.push_str(&cell(Some(m.mean)));
        out.push('\n');
    }
    out
}

pub fn results_csv(results: &[DomainResult], classes: usize) -> String {
    let rows: Vec<_> = results.iter().map(|r| (r.domain.to_string(), &r.miou)).collect();
    metrics_csv(&rows, classes)
}

/// Where the effective seed came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SeedSource {
    Config,
    Flag,
    /// The `CACE_SEED` environment variable.
    Environment,
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub status: &'static str,
    pub error: Option<String>,
    pub seed: u64,
    pub seed_source: SeedSource,
    pub config: RunConfig,
    pub mean_miou: Option<f64>,
    pub after_adapt: Vec<f64>,
    pub before_adapt: Vec<f64>,
    pub forgetting: Vec<Option<f64>>,
    pub completed_domains: usize,
    pub memory_scalars: usize,
    pub encoder_checksum: String,
    pub decoder_checksum: String,
    pub segmenter_checksum: String,
    pub wall_clock_secs: f64,
    /// SHA-256 of every other file written to the output directory.
    pub files: BTreeMap<String, String>,
}

impl Manifest {
    pub fn new(config: &RunConfig, seed_source: SeedSource, report: &RunReport, error: Option<String>, wall_clock_secs: f64) -> Self {
        let done = error.is_none();
        Self {
            status: if done { "ok" } else { "failed" },
            error,
            seed: config.seed,
            seed_source,
            config: config.clone(),
            mean_miou: done.then_some(report.mean_miou),
            after_adapt: report.after_adapt.clone(),
            before_adapt: report.before_adapt.clone(),
            forgetting: if done {
                (1..report.after_adapt.len()).map(|k| report.forgetting(k)).collect()
            } else {
                Vec::new()
            },
            completed_domains: report.completed_domains,
            memory_scalars: report.memory_scalars,
            encoder_checksum: format!("{:016x}", report.encoder_checksum),
            decoder_checksum: format!("{:016x}", report.decoder_checksum),
            segmenter_checksum: format!("{:016x}", report.segmenter_checksum),
            wall_clock_secs,
            files: BTreeMap::new(),
        }
    }

    pub fn record_file(&mut self, dir: &Path, name: &str) -> std::io::Result<()> {
        let bytes = std::fs::read(dir.join(name))?;
        self.files.insert(name.to_string(), sha256_hex(&bytes));
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}
