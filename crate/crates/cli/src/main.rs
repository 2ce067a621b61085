use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand, ValueEnum};
use labelqc::pipeline::{self, Model, PipelineConfig, PipelineError};
use labelqc::roidet::{DetectorMethod, RegionKind};
use labelqc::synthlabel;

const SYNOPSIS: &str = "usage: labelqc [--config FILE] [--seed N] [--paper-scale] <gen|detect|patches|train|classify|eval> [ARGS]";

#[derive(Debug, Parser)]
#[command(
    name = "labelqc",
    version,
    about = "Shipping-label image quality verification"
)]
struct Cli {
    /// JSON pipeline configuration; defaults apply to missing keys.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Overrides the dataset master seed and the fold-split seed.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// Use the large feature and hidden sizes.
    #[arg(long, global = true)]
    paper_scale: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Method {
    Oracle,
    Classical,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate the synthetic dataset into the dataset directory.
    Gen,
    /// Run the ROI detector over the dataset and report AP.
    Detect {
        #[arg(long, value_enum)]
        method: Option<Method>,
    },
    /// Dump the selected FAST patches of every dataset image.
    Patches {
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
    },
    /// Train the branch extractors and the fusion head on the whole dataset.
    Train,
    /// Classify images with a trained model, one JSON line per image.
    Classify {
        /// Model directory; defaults to the configured weights directory.
        #[arg(long, value_name = "DIR")]
        model: Option<PathBuf>,
        #[arg(required = true, value_name = "IMAGE")]
        images: Vec<PathBuf>,
    },
    /// k-fold evaluation of every method.
    Eval,
}

fn main() -> ExitCode {
    ExitCode::from(run_cli(std::env::args_os()))
}

fn run_cli<I, T>(argv: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            let _ = e.print();
            return 0;
        }
        Err(e) => {
            eprintln!("{SYNOPSIS}");
            let _ = e.print();
            return 1;
        }
    };
    if let Err(e) = init_threads() {
        eprintln!("labelqc: {e}");
        return 1;
    }
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("labelqc: {e}");
            2
        }
    }
}

fn init_threads() -> Result<(), String> {
    let Ok(raw) = std::env::var("SLQI_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| format!("SLQI_THREADS must be a positive integer, got {raw:?}"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| e.to_string())
}

fn load_config(cli: &Cli) -> Result<PipelineConfig, PipelineError> {
    let mut cfg = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.generator.master_seed = seed;
        cfg.eval.seed = seed;
    }
    if cli.paper_scale {
        cfg = cfg.paper_scale();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn io_error(path: &Path, source: std::io::Error) -> PipelineError {
    PipelineError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn write_out(path: &Path, contents: &str) -> Result<(), PipelineError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
    }
    fs::write(path, contents).map_err(|e| io_error(path, e))
}

fn execute(cli: Cli) -> Result<(), PipelineError> {
    let cfg = load_config(&cli)?;
    let reports = &cfg.paths.reports_dir;
    match cli.command {
        Command::Gen => {
            let manifest = synthlabel::build_dataset(&cfg.generator, &cfg.paths.dataset_dir)?;
            println!(
                "{} images written to {}",
                manifest.entries.len(),
                cfg.paths.dataset_dir.display()
            );
        }
        Command::Detect { method } => {
            let method = match method {
                Some(Method::Oracle) => DetectorMethod::Oracle,
                Some(Method::Classical) => DetectorMethod::Classical,
                None => cfg.detector,
            };
            let (records, report) = pipeline::run_detect(&cfg, method)?;
            write_out(
                &reports.join("detections.jsonl"),
                &pipeline::jsonl(&records),
            )?;
            write_out(&reports.join("detect.json"), &to_json(&report))?;
            for kind in RegionKind::ALL {
                println!(
                    "{kind:?} AP@{:.2}: {:.4}",
                    report.iou_threshold,
                    report.metrics.ap(kind).unwrap_or(0.0)
                );
            }
            println!("mAP: {:.4}", report.metrics.map);
        }
        Command::Patches { out } => {
            let out = out.unwrap_or_else(|| reports.join("patches"));
            let records = pipeline::run_patches(&cfg, &out)?;
            write_out(&out.join("patches.jsonl"), &pipeline::jsonl(&records))?;
            println!("{} images, patches in {}", records.len(), out.display());
        }
        Command::Train => {
            let (_, logs) = pipeline::run_train(&cfg)?;
            for log in logs {
                println!(
                    "{:<10} loss {:.4}  train acc {:.3}  val acc {}",
                    log.branch.name(),
                    log.final_loss,
                    log.final_train_accuracy,
                    log.validation_accuracy
                        .map_or("-".into(), |a| format!("{a:.3}"))
                );
            }
            println!("model saved to {}", cfg.paths.weights_dir.display());
        }
        Command::Classify { model, images } => {
            let model = Model::load(model.as_deref().unwrap_or(&cfg.paths.weights_dir))?;
            let stdout = std::io::stdout();
            let mut out = stdout.lock();
            for path in &images {
                let record = pipeline::classify_image(&model, path)?;
                let line = serde_json::to_string(&record).expect("record serializes");
                writeln!(out, "{line}").map_err(|e| io_error(Path::new("<stdout>"), e))?;
            }
        }
        Command::Eval => {
            let report = pipeline::run_eval(&cfg)?;
            print!("{}", report.text());
        }
    }
    Ok(())
}

fn to_json<T: serde::Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report serializes");
    s.push('\n');
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn usage_errors_exit_one() {
        assert_eq!(run_cli(["labelqc"]), 1);
        assert_eq!(run_cli(["labelqc", "frobnicate"]), 1);
        assert_eq!(run_cli(["labelqc", "classify"]), 1);
        assert_eq!(run_cli(["labelqc", "--help"]), 0);
    }

    #[test]
    fn missing_config_is_a_data_error() {
        assert_eq!(
            run_cli(["labelqc", "eval", "--config", "/nonexistent/c.json"]),
            2
        );
    }

    #[test]
    fn flags_apply() {
        let cli = Cli::try_parse_from(["labelqc", "gen", "--seed", "9", "--paper-scale"]).unwrap();
        let cfg = load_config(&cli).unwrap();
        assert_eq!(cfg.generator.master_seed, 9);
        assert_eq!(cfg.fusion.global_dim, 2048);
    }
}
