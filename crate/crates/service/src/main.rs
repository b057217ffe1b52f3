use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};
use nuclick_core::metrics::evaluate as score;
use nuclick_core::signals::GuideInput;
use nuclick_core::synth::{self, ObjectKind, SynthConfig};
use nuclick_core::io;
use nuclick_pipeline::{evaluate_dir, GuideMode, Segmenter, TrainConfig};
use nuclick_service::{api, segment_headless, ModelRegistry, Workbench};

#[derive(Parser)]
#[command(name = "nuclick", version, about = "Interactive nucleus, cell and gland segmentation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the annotation HTTP service.
    Serve {
        /// Directory of *.nuck checkpoints.
        #[arg(long)]
        models: PathBuf,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        /// Persist session event logs here.
        #[arg(long)]
        sessions: Option<PathBuf>,
    },
    /// Segment an image from a JSON list of guides, without a server.
    Segment {
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        guides: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// 16-bit label PNG to write.
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a synthetic labelled dataset.
    Synth {
        #[arg(long, default_value = "nucleus")]
        kind: ObjectKind,
        #[arg(long, default_value_t = 100)]
        count: usize,
        #[arg(long, default_value_t = 64)]
        width: usize,
        #[arg(long, default_value_t = 64)]
        height: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Probability that a new object touches an existing one.
        #[arg(long)]
        touching: Option<f64>,
        /// Glands: probability that the lumen is part of the gland label.
        #[arg(long)]
        lumen_fill: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model from a TOML config.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Score a checkpoint on a labelled dataset.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// gt-interior, gt-centroid or jitter(<radius>).
        #[arg(long, default_value = "gt-centroid")]
        guide: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        json: bool,
    },
    /// Compare a predicted label PNG with ground truth.
    Metrics {
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        json: bool,
    },
}

fn main() -> anyhow::Result<()> {
    match Cli::parse().command {
        Command::Serve {
            models,
            port,
            host,
            sessions,
        } => {
            let registry = ModelRegistry::scan(&models).with_context(|| format!("scanning {}", models.display()))?;
            if registry.list().is_empty() {
                bail!("no *.nuck checkpoints in {}", models.display());
            }
            let bench = Arc::new(Workbench::new(registry, sessions)?);
            let addr: SocketAddr = format!("{host}:{port}").parse().context("listen address")?;
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(async move {
                let listener = tokio::net::TcpListener::bind(addr).await?;
                eprintln!("listening on http://{}", listener.local_addr()?);
                axum::serve(listener, api::router(bench)).await?;
                anyhow::Ok(())
            })?;
        }
        Command::Segment {
            image,
            guides,
            checkpoint,
            out,
        } => {
            let seg = Segmenter::load(&checkpoint)?;
            let png = std::fs::read(&image).with_context(|| format!("reading {}", image.display()))?;
            let text = std::fs::read_to_string(&guides).with_context(|| format!("reading {}", guides.display()))?;
            let guides: Vec<GuideInput> = serde_json::from_str(&text).context("guides must be a JSON array of guide records")?;
            let labels = segment_headless(seg, png, &guides)?;
            std::fs::write(&out, labels).with_context(|| format!("writing {}", out.display()))?;
        }
        Command::Synth {
            kind,
            count,
            width,
            height,
            seed,
            touching,
            lumen_fill,
            out,
        } => {
            let mut cfg = match kind {
                ObjectKind::Nucleus => SynthConfig::nuclei(width, height, seed),
                ObjectKind::Cell => SynthConfig::cells(width, height, seed),
                ObjectKind::Gland => SynthConfig::glands(width, height, seed),
            };
            if let Some(t) = touching {
                cfg.touching_prob = t;
            }
            if let Some(f) = lumen_fill {
                cfg.lumen_fill_prob = f;
            }
            synth::write_dataset(&cfg, count, &out)?;
            eprintln!("wrote {count} images to {}", out.display());
        }
        Command::Train { config } => {
            let cfg = TrainConfig::load(&config)?;
            let outcome = nuclick_pipeline::train(&cfg)?;
            for e in &outcome.log {
                eprintln!("epoch {:>3}  loss {:.5}", e.epoch, e.mean_loss);
            }
        }
        Command::Eval {
            checkpoint,
            data,
            guide,
            seed,
            json,
        } => {
            let mode: GuideMode = guide.parse()?;
            let report = evaluate_dir(&checkpoint, &data, mode, seed)?;
            if json {
                println!("{}", report.to_json());
            } else {
                print!("{report}");
            }
        }
        Command::Metrics { gt, pred, json } => {
            let report = score(&io::read_labels(&gt)?, &io::read_labels(&pred)?)?;
            if json {
                println!("{}", report.to_json());
            } else {
                print!("{report}");
            }
        }
    }
    Ok(())
}
