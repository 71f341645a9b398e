//! `cace run | stylize | eval | export`.
//!
//! Exit codes: 0 success, 2 usage or configuration error, 3 runtime error.

use std::ffi::OsString;
use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use cace_core::rng;
use cace_core::style_memory::image_moments;
use cace_core::synth_domains::evaluate_split;
use cace_core::trainer::{RunReport, Trainer};
use cace_core::transfer_net::StyleMode;
use clap::{Parser, Subcommand, ValueEnum};

use crate::checkpoint::Checkpoint;
use crate::config::RunConfig;
use crate::dataset;
use crate::memory_format;
use crate::pnm;
use crate::report::{self, Manifest, SeedSource};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

/// Stream tag for style draws made by `stylize`.
const STYLIZE_TAG: u64 = 100;

#[derive(Debug, Parser)]
#[command(name = "cace", version, about = "Continual domain adaptation with class-conditional style transfer")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Pretrain, adapt to every target domain and evaluate.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory; overrides `out_dir` from the config.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overrides both the config seed and CACE_SEED.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Re-render a source image in the style of a stored domain.
    Stylize {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        image: PathBuf,
        /// Label map of the image (P5).
        #[arg(long)]
        mask: PathBuf,
        /// Stored domain id; 0 re-uses the image's own moments.
        #[arg(long)]
        domain: u32,
        #[arg(long, value_enum, default_value = "class_conditional")]
        mode: ModeArg,
        /// Output PPM path.
        #[arg(long)]
        out: PathBuf,
        /// Seed of the style draw.
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Per-class IoU and mIoU of a checkpoint's segmenter on a dataset.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Also write the CSV to this file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write the validation splits of a configured sequence to a dataset
    /// directory.
    Export {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
#[value(rename_all = "snake_case")]
enum ModeArg {
    ClassConditional,
    Global,
}

/// A failed command and its exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

fn usage(message: impl std::fmt::Display) -> Failure {
    Failure {
        code: EXIT_USAGE,
        message: message.to_string(),
    }
}

fn runtime(message: impl std::fmt::Display) -> Failure {
    Failure {
        code: EXIT_RUNTIME,
        message: message.to_string(),
    }
}

/// Parse `args` (including the program name) and execute. `env_seed` is
/// the value of `CACE_SEED`, if set. Diagnostics go to stderr.
pub fn main_with<I, T>(args: I, env_seed: Option<String>) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match execute(cli.command, env_seed) {
        Ok(()) => EXIT_OK,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}

fn execute(command: Command, env_seed: Option<String>) -> Result<(), Failure> {
    match command {
        Command::Run { config, out, seed } => cmd_run(&config, out, seed, env_seed),
        Command::Stylize {
            ckpt,
            image,
            mask,
            domain,
            mode,
            out,
            seed,
        } => cmd_stylize(&ckpt, &image, &mask, domain, mode, &out, seed),
        Command::Eval { ckpt, data, out } => cmd_eval(&ckpt, &data, out.as_deref()),
        Command::Export { config, out, seed } => cmd_export(&config, &out, seed, env_seed),
    }
}

/// Load the config and apply the seed override: flag, then `CACE_SEED`,
/// then the config itself.
fn resolve_config(path: &Path, flag: Option<u64>, env_seed: Option<String>) -> Result<(RunConfig, SeedSource), Failure> {
    let mut cfg = RunConfig::load(path).map_err(usage)?;
    let source = if let Some(s) = flag {
        cfg.seed = s;
        SeedSource::Flag
    } else if let Some(text) = env_seed {
        cfg.seed = text
            .trim()
            .parse()
            .map_err(|_| usage(format!("CACE_SEED is not an unsigned integer: {text:?}")))?;
        SeedSource::Environment
    } else {
        SeedSource::Config
    };
    cfg.to_sequence().map_err(usage)?;
    Ok((cfg, source))
}

fn write_file(dir: &Path, name: &str, bytes: &[u8]) -> Result<(), Failure> {
    let p = dir.join(name);
    fs::write(&p, bytes).map_err(|e| runtime(format!("{}: {e}", p.display())))
}

fn losses_csv(report: &RunReport) -> String {
    let mut s = String::from("stage,step,loss\n");
    for (stage, losses) in [
        ("pretrain", &report.pretrain_losses),
        ("decoder", &report.decoder_losses),
        ("segmenter", &report.segmenter_losses),
    ] {
        for (i, l) in losses.iter().enumerate() {
            s.push_str(&format!("{stage},{i},{l:e}\n"));
        }
    }
    s
}

fn cmd_run(config: &Path, out: Option<PathBuf>, seed: Option<u64>, env_seed: Option<String>) -> Result<(), Failure> {
    let (cfg, seed_source) = resolve_config(config, seed, env_seed)?;
    let seq = cfg.to_sequence().map_err(usage)?;
    let dir = out
        .or_else(|| cfg.out_dir.clone())
        .ok_or_else(|| usage("no output directory: pass --out or set out_dir in the config"))?;
    fs::create_dir_all(&dir).map_err(|e| runtime(format!("{}: {e}", dir.display())))?;

    let started = Instant::now();
    eprintln!("run: seed {} ({:?}), {} target domains", cfg.seed, seed_source, seq.domains());
    let classes = seq.data.scene.classes;
    let outcome = Trainer::new(seq).map_err(|e| runtime(e.to_string()))?.run();
    let secs = started.elapsed().as_secs_f64();

    let (report, error) = match &outcome {
        Ok(run) => (&run.report, None),
        Err(f) => (&f.partial, Some(f.error.to_string())),
    };
    let mut manifest = Manifest::new(&cfg, seed_source, report, error.clone(), secs);
    let mut written = vec!["losses.csv"];
    write_file(&dir, "losses.csv", losses_csv(report).as_bytes())?;
    if let Ok(run) = &outcome {
        write_file(&dir, "report.csv", report::results_csv(&run.report.final_results, classes).as_bytes())?;
        let ckpt = Checkpoint {
            net: run.net.clone(),
            segmenter: run.segmenter.clone(),
            memory: run.memory.clone(),
        };
        let mut buf = Vec::new();
        ckpt.write(&mut buf).map_err(runtime)?;
        write_file(&dir, "checkpoint.bin", &buf)?;
        let mut buf = Vec::new();
        memory_format::write_memory(&mut buf, &run.memory).map_err(runtime)?;
        write_file(&dir, "memory.bin", &buf)?;
        written.extend(["report.csv", "checkpoint.bin", "memory.bin"]);
    }
    for name in written {
        manifest
            .record_file(&dir, name)
            .map_err(|e| runtime(format!("{name}: {e}")))?;
    }
    write_file(&dir, "manifest.json", manifest.to_json().as_bytes())?;
    match error {
        None => {
            eprintln!("run: mean mIoU {:.4} in {secs:.1}s, artifacts in {}", report.mean_miou, dir.display());
            Ok(())
        }
        Some(e) => Err(runtime(format!("{e} (partial report in {})", dir.display()))),
    }
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint, Failure> {
    Checkpoint::load(path).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn cmd_stylize(ckpt: &Path, image: &Path, mask: &Path, domain: u32, mode: ModeArg, out: &Path, seed: u64) -> Result<(), Failure> {
    let mut ck = load_checkpoint(ckpt)?;
    let open = |p: &Path| fs::File::open(p).map(BufReader::new).map_err(|e| usage(format!("{}: {e}", p.display())));
    let img = pnm::read_ppm(open(image)?).map_err(|e| usage(format!("{}: {e}", image.display())))?;
    let labels = pnm::read_pgm(open(mask)?, ck.segmenter.classes()).map_err(|e| usage(format!("{}: {e}", mask.display())))?;
    if (img.height(), img.width()) != (labels.height(), labels.width()) {
        return Err(usage("image and mask sizes differ"));
    }
    if img.height() % 4 != 0 || img.width() % 4 != 0 {
        return Err(usage("image height and width must be multiples of 4"));
    }
    ck.net.mode = match mode {
        ModeArg::ClassConditional => StyleMode::ClassConditional,
        ModeArg::Global => StyleMode::Global,
    };
    let target = if domain == 0 {
        image_moments(&ck.net.encode(&img), &labels).map_err(runtime)?
    } else {
        if !ck.memory.contains(domain) {
            let known: Vec<String> = ck.memory.domain_ids().map(|d| d.to_string()).collect();
            return Err(usage(format!("domain {domain} is not in the style memory (stored: {})", known.join(", "))));
        }
        let mut r = rng::stream(seed, STYLIZE_TAG);
        match ck.net.mode {
            StyleMode::ClassConditional => ck.memory.draw_moments(&[domain], &mut r),
            StyleMode::Global => ck.memory.draw_image_moments(&[domain], &mut r),
        }
        .map_err(runtime)?
    };
    let (styled, _) = ck.net.stylize(&img, &labels, &target).map_err(runtime)?;
    let f = fs::File::create(out).map_err(|e| runtime(format!("{}: {e}", out.display())))?;
    let mut w = BufWriter::new(f);
    pnm::write_ppm(&mut w, &styled).map_err(runtime)?;
    w.flush().map_err(runtime)?;
    Ok(())
}

/// Metrics CSV of a checkpoint on every split of a dataset directory.
pub fn eval_csv(ckpt: &Checkpoint, data: &Path) -> Result<String, Failure> {
    let (index, splits) = dataset::read_splits(data).map_err(usage)?;
    if index.classes != ckpt.segmenter.classes() {
        return Err(usage(format!(
            "dataset has {} classes, checkpoint segments {}",
            index.classes,
            ckpt.segmenter.classes()
        )));
    }
    let mut reports = Vec::with_capacity(splits.len());
    for s in &splits {
        let m = evaluate_split(&s.images, &s.labels, |x| ckpt.segmenter.pseudo_label(x)).map_err(runtime)?;
        reports.push((s.id.to_string(), m));
    }
    let rows: Vec<_> = reports.iter().map(|(n, m)| (n.clone(), m)).collect();
    Ok(report::metrics_csv(&rows, index.classes))
}

fn cmd_eval(ckpt: &Path, data: &Path, out: Option<&Path>) -> Result<(), Failure> {
    let ck = load_checkpoint(ckpt)?;
    let csv = eval_csv(&ck, data)?;
    print!("{csv}");
    if let Some(p) = out {
        fs::write(p, &csv).map_err(|e| runtime(format!("{}: {e}", p.display())))?;
    }
    Ok(())
}

fn cmd_export(config: &Path, out: &Path, seed: Option<u64>, env_seed: Option<String>) -> Result<(), Failure> {
    let (cfg, _) = resolve_config(config, seed, env_seed)?;
    let seq = cfg.to_sequence().map_err(usage)?;
    let data = cace_core::synth_domains::build_sequence(&seq.data).map_err(runtime)?;
    fs::create_dir_all(out).map_err(|e| runtime(format!("{}: {e}", out.display())))?;
    dataset::write_splits(out, &dataset::evaluation_splits(&data)).map_err(runtime)?;
    Ok(())
}
