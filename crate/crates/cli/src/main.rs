use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use evssm_core::aggregation::{build_stack, save_stack, AggregationMode, SamplingConfig};
use evssm_core::events::{DatasetManifest, EventFormat, SensorGeometry};
use evssm_core::synth::{generate_dataset, DatasetSpec};
use evssm_core::train::{self, SweepConfig, TrainConfig};

#[derive(Parser)]
#[command(
    name = "evssm",
    version,
    about = "Event-stream classification with learned frame selection and state-space models"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize a labelled event dataset and its manifest.
    Generate {
        #[arg(long, default_value_t = 4)]
        classes: usize,
        #[arg(long, default_value_t = 8)]
        per_class: usize,
        /// Sample duration range in seconds, `LO..HI`.
        #[arg(long, default_value = "1..2", value_parser = parse_range)]
        duration_range: (f64, f64),
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Events per second.
        #[arg(long, default_value_t = 20_000.0)]
        event_rate: f64,
        #[arg(long, default_value_t = 0.05)]
        noise: f64,
        /// Sensor size, `WxH`.
        #[arg(long, default_value = "64x64", value_parser = parse_geometry)]
        sensor: SensorGeometry,
        /// Write CSV event files instead of binary ones.
        #[arg(long)]
        csv: bool,
    },
    /// Aggregate every sample of a manifest into frame stacks.
    Preprocess {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        freq: f64,
        #[arg(long, default_value = "event-counts")]
        mode: AggregationMode,
        #[arg(long, default_value_t = 400)]
        group_size: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 32)]
        height: usize,
        #[arg(long, default_value_t = 32)]
        width: usize,
    },
    /// Train from a JSON config.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// `key=value`, dotted keys for nested fields; repeatable.
        #[arg(long = "override")]
        overrides: Vec<String>,
    },
    /// Top-1 accuracy of a checkpoint at an aggregation frequency.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        freq: f64,
    },
    /// Train and evaluate across a grid of frequencies and variants.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Where the per-cell checkpoints go; defaults next to the CSV.
        #[arg(long)]
        work_dir: Option<PathBuf>,
    },
    /// Selected frames and loss breakdown for one event file, as JSON.
    Inspect {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        sample: PathBuf,
        #[arg(long)]
        label: Option<usize>,
        /// Zero-pad the stack to this many frames.
        #[arg(long)]
        pad_to: Option<usize>,
    },
}

fn parse_range(s: &str) -> Result<(f64, f64), String> {
    let (lo, hi) = s.split_once("..").ok_or("expected LO..HI")?;
    let lo: f64 = lo.trim().parse().map_err(|e| format!("{e}"))?;
    let hi: f64 = hi.trim().parse().map_err(|e| format!("{e}"))?;
    if !(lo > 0.0 && hi >= lo) {
        return Err(format!("need 0 < LO <= HI, got {lo}..{hi}"));
    }
    Ok((lo, hi))
}

fn parse_geometry(s: &str) -> Result<SensorGeometry, String> {
    let (w, h) = s.split_once('x').ok_or("expected WxH")?;
    let w = w.parse().map_err(|e| format!("{e}"))?;
    let h = h.parse().map_err(|e| format!("{e}"))?;
    Ok(SensorGeometry::new(w, h))
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Generate {
            classes,
            per_class,
            duration_range,
            out,
            seed,
            event_rate,
            noise,
            sensor,
            csv,
        } => {
            let spec = DatasetSpec {
                classes,
                per_class,
                duration_range_s: duration_range,
                event_rate,
                noise_fraction: noise,
                geometry: sensor,
                seed,
                format: if csv {
                    EventFormat::Csv
                } else {
                    EventFormat::Binary
                },
                ..DatasetSpec::default()
            };
            let manifest = generate_dataset(&spec, &out)?;
            println!(
                "{} samples in {}",
                manifest.samples.len(),
                out.join("manifest.json").display()
            );
        }
        Command::Preprocess {
            manifest,
            freq,
            mode,
            group_size,
            out,
            height,
            width,
        } => {
            let m = DatasetManifest::load(&manifest)?;
            m.validate()?;
            let cfg = SamplingConfig {
                frequency_hz: freq,
                mode,
                group_size,
                height,
                width,
                ..SamplingConfig::default()
            };
            std::fs::create_dir_all(&out)?;
            for i in 0..m.samples.len() {
                let (stream, label) = m.load_sample(i)?;
                let stack =
                    build_stack(&stream, &cfg, None).with_context(|| format!("sample {i}"))?;
                let stem = m.samples[i]
                    .path
                    .file_stem()
                    .map(PathBuf::from)
                    .unwrap_or_else(|| format!("{i:04}").into());
                save_stack(&stack, &out.join(stem), Some(label))?;
            }
            println!("{} stacks in {}", m.samples.len(), out.display());
        }
        Command::Train { config, overrides } => {
            let cfg = TrainConfig::load(&config, &overrides)?;
            let outcome = train::train(&cfg, |r| {
                eprintln!(
                    "epoch {:>4}  step {:>6}  total {:.4}  cls {:.4}  weie {:.4}  iemi {:.4}  ms {:.4}  top1 {:.3}  lr {:.2e}",
                    r.epoch, r.step, r.total, r.cls, r.weie, r.iemi, r.ms, r.top1, r.lr
                )
            })?;
            println!("checkpoint {}", outcome.checkpoint.display());
            println!(
                "metrics {}",
                cfg.out_dir.join(train::METRICS_FILE).display()
            );
        }
        Command::Eval {
            checkpoint,
            manifest,
            freq,
        } => {
            let report = train::evaluate(&checkpoint, &manifest, freq)?;
            println!("{:.6}", report.top1);
        }
        Command::Sweep {
            config,
            out,
            work_dir,
        } => {
            let sweep = SweepConfig::load(&config)?;
            let work = work_dir.unwrap_or_else(|| out.with_extension("runs"));
            let rows = train::sweep_frequency(&sweep, &work, |msg| eprintln!("{msg}"))?;
            train::write_sweep(&out, &rows)?;
            if rows.iter().all(|r| r.top1.is_none()) {
                bail!("every sweep cell failed");
            }
            println!("{} rows in {}", rows.len(), out.display());
        }
        Command::Inspect {
            checkpoint,
            sample,
            label,
            pad_to,
        } => {
            let record = train::inspect(&checkpoint, &sample, label, pad_to)?;
            println!("{}", serde_json::to_string_pretty(&record)?);
        }
    }
    Ok(())
}
