//! `eo-distort`: class-conditional distortions and robustness sweeps.
//!
//! stdout carries only machine-readable output; diagnostics go to stderr.
//! Exit codes: 0 success, 1 usage or validation error, 2 predictor failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use eo_distort_core::dataset::{class_pixel_histogram, compute_channel_means};
use eo_distort_core::raster::{load_image, load_labels, save_image};
use eo_distort_core::report::{read_csv, render_all, to_csv};
use eo_distort_core::sweep::{collect_sweep, evaluate_predictions, stage_sweep};
use eo_distort_core::{
    apply, run_sweep, Channel, ChannelStats, DatasetManifest, Distortion, DistortionSpec, Error,
    Split, SweepConfig, SweepOptions, SweepReport, TransformKind,
};
use serde_json::json;

#[derive(Parser)]
#[command(name = "eo-distort", version, about)]
struct Cli {
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Distort one image for one class.
    Distort {
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        class_id: u8,
        #[arg(long)]
        transform: TransformKind,
        /// Strength in [0, 1]; ignored by context-mask.
        #[arg(long)]
        intensity: Option<f64>,
        /// Duplicated channel for color-dup: R, G or B.
        #[arg(long)]
        channel: Option<Channel>,
        #[arg(long, env = "EO_DISTORT_SEED", default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0)]
        replicate: u32,
        /// Fill for pixels outside the class, as `r,g,b`. Required by
        /// context-mask; with other transforms it also masks the context.
        #[arg(long, value_parser = parse_means)]
        fill_means: Option<[f64; 3]>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-channel means and class pixel histogram of a split, as JSON.
    Stats {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value = "train")]
        split: Split,
    },
    /// Run a sweep in-process; writes report.csv, report.json and one SVG
    /// per transform into --out-dir.
    Sweep(SweepArgs),
    /// Write every cell's distorted images for an external predictor.
    Stage(SweepArgs),
    /// Score predictions placed in a staged tree; writes the same outputs
    /// as `sweep` into --out-dir.
    Collect(SweepArgs),
    /// Per-class IoU and mIoU of precomputed `<id>.png` predictions.
    Evaluate {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value = "val")]
        split: Split,
        #[arg(long)]
        pred_dir: PathBuf,
    },
    /// Re-render SVG curves from a results CSV.
    Report {
        #[arg(long)]
        csv: PathBuf,
        #[arg(long)]
        out_svg_dir: PathBuf,
        /// Overlay this CSV's mean curve as a dashed series.
        #[arg(long)]
        compare_csv: Option<PathBuf>,
        #[arg(long, default_value = "comparison")]
        compare_label: String,
    },
}

#[derive(clap::Args)]
struct SweepArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    /// Overrides the config's seed.
    #[arg(long, env = "EO_DISTORT_SEED")]
    seed: Option<u64>,
}

fn parse_means(s: &str) -> Result<[f64; 3], String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    let [r, g, b] = parts[..] else {
        return Err(format!("expected `r,g,b`, got `{s}`"));
    };
    let mut out = [0.0; 3];
    for (slot, text) in out.iter_mut().zip([r, g, b]) {
        *slot = text.parse().map_err(|e| format!("`{text}`: {e}"))?;
    }
    Ok(out)
}

struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure {
            code: if e.is_predictor_failure() { 2 } else { 1 },
            message: e.to_string(),
        }
    }
}

fn usage(message: impl Into<String>) -> Failure {
    Failure {
        code: 1,
        message: message.into(),
    }
}

fn print_json(value: &serde_json::Value) {
    println!(
        "{}",
        serde_json::to_string_pretty(value).expect("json value serializes")
    );
}

fn distortion(
    transform: TransformKind,
    intensity: Option<f64>,
    channel: Option<Channel>,
    replicate: u32,
    fill: Option<ChannelStats>,
) -> Result<Distortion, Failure> {
    let need = |i: Option<f64>| {
        i.ok_or_else(|| usage(format!("--intensity is required for {}", transform.name())))
    };
    if channel.is_some() && transform != TransformKind::ColorDup {
        return Err(usage("--channel only applies to color-dup"));
    }
    Ok(match transform {
        TransformKind::Gray => Distortion::GrayScale {
            lambda: need(intensity)?,
        },
        TransformKind::PixelSwap => Distortion::PixelSwap {
            proportion: need(intensity)?,
            replicate,
        },
        TransformKind::ColorDup => Distortion::ColorDuplication {
            channel: channel.ok_or_else(|| usage("--channel is required for color-dup"))?,
            lambda: need(intensity)?,
        },
        TransformKind::ContextMask => Distortion::ContextMask {
            fill: fill.ok_or_else(|| usage("--fill-means is required for context-mask"))?,
        },
    })
}

fn load_config(args: &SweepArgs) -> Result<SweepConfig, Failure> {
    let mut config = SweepConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    Ok(config)
}

fn create_dir(dir: &Path) -> Result<(), Failure> {
    std::fs::create_dir_all(dir).map_err(|e| usage(format!("cannot create {}: {e}", dir.display())))
}

/// Writes report.csv, report.json and the SVG curves; returns the SVG paths.
fn write_outputs(report: &SweepReport, dir: &Path) -> Result<Vec<PathBuf>, Failure> {
    create_dir(dir)?;
    let csv = dir.join("report.csv");
    to_csv(report, &csv)?;
    report.save_json(dir.join("report.json"))?;
    Ok(render_all(&read_csv(&csv)?, None, dir)?)
}

fn outputs_json(report: &SweepReport, dir: &Path, svgs: &[PathBuf]) -> serde_json::Value {
    json!({
        "records": report.records.len(),
        "csv": dir.join("report.csv"),
        "json": dir.join("report.json"),
        "svgs": svgs,
        "config_digest": report.provenance.config_digest,
    })
}

fn run(cli: Cli) -> Result<(), Failure> {
    let options = SweepOptions { jobs: cli.jobs };
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(usage("--jobs must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| usage(e.to_string()))?;
    }

    match cli.command {
        Command::Distort {
            image,
            labels,
            class_id,
            transform,
            intensity,
            channel,
            seed,
            replicate,
            fill_means,
            out,
        } => {
            let fill = fill_means.map(|m| ChannelStats::new(m, 1)).transpose()?;
            let distortion = distortion(transform, intensity, channel, replicate, fill)?;
            let spec = DistortionSpec {
                distortion,
                class_id,
                seed,
                image_index: 0,
                context_fill: if transform == TransformKind::ContextMask {
                    None
                } else {
                    fill
                },
            };
            spec.validate()?;
            let img = load_image(&image)?;
            let lbl = load_labels(&labels)?;
            save_image(&apply(&img, &lbl, &spec)?, &out)?;
            print_json(&json!({ "spec_digest": spec.digest(), "output": out }));
        }
        Command::Stats { manifest, split } => {
            let manifest = DatasetManifest::load(&manifest)?;
            let stats = compute_channel_means(&manifest, split)?;
            let histogram = class_pixel_histogram(&manifest, split)?;
            let histogram: serde_json::Map<String, serde_json::Value> = histogram
                .iter()
                .map(|(k, v)| (k.to_string(), json!(v)))
                .collect();
            print_json(&json!({
                "split": split,
                "means": stats.means(),
                "pixel_count": stats.pixel_count,
                "histogram": histogram,
            }));
        }
        Command::Sweep(args) => {
            let config = load_config(&args)?;
            match run_sweep(&config, &options) {
                Ok(report) => {
                    let svgs = write_outputs(&report, &args.out_dir)?;
                    print_json(&outputs_json(&report, &args.out_dir, &svgs));
                }
                Err(failure) => {
                    if let Some(partial) = &failure.partial {
                        create_dir(&args.out_dir)?;
                        let csv = args.out_dir.join("report.csv");
                        match to_csv(partial, &csv) {
                            Ok(()) => eprintln!(
                                "partial results ({} records) written to {}",
                                partial.records.len(),
                                csv.display()
                            ),
                            Err(e) => eprintln!("could not write partial results: {e}"),
                        }
                    }
                    return Err(failure.error.into());
                }
            }
        }
        Command::Stage(args) => {
            let config = load_config(&args)?;
            let summary = stage_sweep(&config, &args.out_dir, &options)?;
            print_json(&serde_json::to_value(&summary).expect("summary serializes"));
        }
        Command::Collect(args) => {
            let config = load_config(&args)?;
            let report = collect_sweep(&config, &args.out_dir, &options)?;
            let svgs = write_outputs(&report, &args.out_dir)?;
            print_json(&outputs_json(&report, &args.out_dir, &svgs));
        }
        Command::Evaluate {
            manifest,
            split,
            pred_dir,
        } => {
            let manifest = DatasetManifest::load(&manifest)?;
            let cm = evaluate_predictions(&manifest, split, &pred_dir)?;
            let per_class: serde_json::Map<String, serde_json::Value> = manifest
                .foreground_classes()
                .into_iter()
                .map(|c| {
                    let (tp, fp, fn_) = cm.outcome(c);
                    (
                        c.to_string(),
                        json!({ "name": manifest.class_name(c), "iou": cm.iou(c), "tp": tp, "fp": fp, "fn": fn_ }),
                    )
                })
                .collect();
            print_json(&json!({
                "split": split,
                "classes": per_class,
                "miou": cm.miou(manifest.background_id)?,
            }));
        }
        Command::Report {
            csv,
            out_svg_dir,
            compare_csv,
            compare_label,
        } => {
            let rows = read_csv(&csv)?;
            let other = compare_csv.as_ref().map(read_csv).transpose()?;
            let compare = other.as_deref().map(|rows| (rows, compare_label.as_str()));
            let svgs = render_all(&rows, compare, &out_svg_dir)?;
            print_json(&json!({ "svgs": svgs }));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
