//! Command-line interface.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use cloudheat_core::synth::{ScenarioSpec, MINUTE_MS};
use cloudheat_core::{HeatmapFrame, DEFAULT_INSTANCE_TAG};

use crate::api::{self, Params};
use crate::config::{ClockMode, ServiceConfig, DEFAULT_INTERVAL_MS, DEFAULT_PORT};
use crate::pipeline::{wall_clock_ms, Pipeline};
use crate::replay;

#[derive(Debug, Parser)]
#[command(name = "cloudheat", version, about = "Heatmap monitoring for microservice call traces")]
pub struct Cli {
    /// Directory holding the snapshot files.
    #[arg(long, env = "CHM_DATA_DIR", default_value = "data", global = true)]
    pub data_dir: PathBuf,

    /// Length of one aggregation interval in ms.
    #[arg(long = "interval-ms", env = "CHM_INTERVAL_MS", default_value_t = DEFAULT_INTERVAL_MS, global = true)]
    pub interval_ms: u64,

    /// Span tag naming the data center or app instance.
    #[arg(long = "instance-tag", env = "CHM_INSTANCE_TAG", default_value = DEFAULT_INSTANCE_TAG, global = true)]
    pub instance_tag: String,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the HTTP service.
    Serve(ServeArgs),
    /// Feed an NDJSON span file through the pipeline under a manual clock.
    Replay(ReplayArgs),
    /// Write a synthetic span file.
    Generate(GenerateArgs),
    /// Print one heatmap frame as CSV.
    Matrix(MatrixArgs),
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, env = "CHM_PORT", default_value_t = DEFAULT_PORT)]
    pub port: u16,

    #[arg(long, env = "CHM_HOST", default_value = "0.0.0.0")]
    pub host: String,

    /// `wall` seals intervals as real time passes; `manual` only on POST /api/v1/tick.
    #[arg(long, env = "CHM_CLOCK", default_value = "wall")]
    pub clock: ClockMode,

    /// Static files served at `/`.
    #[arg(long = "ui-dir", env = "CHM_UI_DIR")]
    pub ui_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    /// NDJSON file, one Zipkin v2 JSON array per line.
    pub file: PathBuf,

    /// Pace lines at this multiple of real time; 0 replays as fast as possible.
    #[arg(long, default_value_t = 0.0)]
    pub speed: f64,

    /// Base URL of a service running with `--clock manual`; replays in-process when absent.
    #[arg(long)]
    pub target: Option<String>,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Built-in scenario name.
    #[arg(long, default_value = "demo", conflicts_with = "config")]
    pub scenario: String,

    /// Scenario JSON file instead of a built-in.
    #[arg(long)]
    pub config: Option<PathBuf>,

    /// Length of the run in hours; overrides the scenario file.
    #[arg(long)]
    pub hours: Option<f64>,

    /// RNG seed; overrides the scenario file.
    #[arg(long)]
    pub seed: Option<u64>,

    /// First minute of the run in epoch ms; overrides the scenario file.
    #[arg(long = "start-ms")]
    pub start_ms: Option<i64>,

    /// Output file, `-` for stdout.
    #[arg(long, default_value = "-")]
    pub out: String,

    /// Also replay the generated spans into the data directory.
    #[arg(long)]
    pub ingest: bool,
}

#[derive(Debug, Args)]
pub struct MatrixArgs {
    #[arg(long)]
    pub view: Option<String>,
    #[arg(long)]
    pub metric: Option<String>,
    /// Comma-separated return codes or classes such as `5xx`.
    #[arg(long)]
    pub codes: Option<String>,
    #[arg(long)]
    pub mode: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    pub lo: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    pub hi: Option<String>,
    #[arg(long)]
    pub from: Option<String>,
    #[arg(long)]
    pub to: Option<String>,
    #[arg(long)]
    pub step: Option<String>,
    /// Frame index; 0 is the whole-window aggregate.
    #[arg(long, default_value_t = 0)]
    pub frame: usize,
}

impl MatrixArgs {
    pub fn params(&self) -> Params {
        [
            ("view", &self.view),
            ("metric", &self.metric),
            ("codes", &self.codes),
            ("mode", &self.mode),
            ("lo", &self.lo),
            ("hi", &self.hi),
            ("from", &self.from),
            ("to", &self.to),
            ("step", &self.step),
        ]
        .into_iter()
        .filter_map(|(k, v)| v.clone().map(|v| (k.to_string(), v)))
        .collect()
    }
}

impl Cli {
    pub fn config(&self) -> ServiceConfig {
        let mut cfg = ServiceConfig::new(&self.data_dir);
        cfg.base_interval_ms = self.interval_ms;
        cfg.instance_tag_key = self.instance_tag.clone();
        cfg
    }
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    let mut cfg = cli.config();
    match cli.command {
        Command::Serve(args) => {
            cfg.listen_port = args.port;
            cfg.clock_mode = args.clock;
            cfg.ui_dir = args.ui_dir;
            serve(cfg, &args.host)
        }
        Command::Replay(args) => {
            let reader = BufReader::new(File::open(&args.file).with_context(|| format!("opening {:?}", args.file))?);
            let report = match &args.target {
                Some(url) => {
                    replay::replay_remote(url, reader, args.speed, &cfg.instance_tag_key, cfg.base_interval_ms as i64)?
                }
                None => {
                    let p = Pipeline::open(cfg.manual())?;
                    replay::replay_into(&p, reader, args.speed)?
                }
            };
            println!("{}", serde_json::to_string(&report)?);
            Ok(())
        }
        Command::Generate(args) => generate(cfg, &args),
        Command::Matrix(args) => {
            let p = Pipeline::open(cfg.manual())?;
            let stdout = io::stdout();
            matrix_csv(&p, &args.params(), args.frame, &mut stdout.lock())
        }
    }
}

fn serve(cfg: ServiceConfig, host: &str) -> anyhow::Result<()> {
    let addr: SocketAddr = format!("{host}:{}", cfg.listen_port).parse().context("listen address")?;
    let clock = cfg.clock_mode;
    let pipeline = Arc::new(Pipeline::open(cfg)?);
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async move {
        if clock == ClockMode::Wall {
            let p = pipeline.clone();
            tokio::spawn(async move {
                let mut every = tokio::time::interval(Duration::from_secs(1));
                loop {
                    every.tick().await;
                    let p = p.clone();
                    // Failures are logged inside; spans stay buffered for the next tick.
                    let _ = tokio::task::spawn_blocking(move || p.seal_tick(wall_clock_ms())).await;
                }
            });
        }
        let listener = tokio::net::TcpListener::bind(addr).await?;
        tracing::info!(%addr, %clock, "listening");
        axum::serve(listener, api::router(pipeline))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await?;
        Ok(())
    })
}

fn generate(cfg: ServiceConfig, args: &GenerateArgs) -> anyhow::Result<()> {
    let duration_ms = match args.hours {
        Some(h) if h > 0.0 => Some(((h * 60.0).round().max(1.0) as u64) * MINUTE_MS as u64),
        Some(_) => bail!("--hours must be positive"),
        None => None,
    };
    let mut spec = match &args.config {
        Some(path) => {
            let mut spec = ScenarioSpec::from_json(&std::fs::read_to_string(path)?)?;
            if let Some(d) = duration_ms {
                spec.duration_ms = d;
            }
            spec
        }
        None => ScenarioSpec::builtin(
            &args.scenario,
            args.seed.unwrap_or(42),
            duration_ms.unwrap_or(24 * 60 * MINUTE_MS as u64),
        )?,
    };
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    if let Some(start) = args.start_ms {
        spec.start_ms = start;
    }
    spec.validate()?;

    let tag = cfg.instance_tag_key.clone();
    let spans = if args.out == "-" {
        let stdout = io::stdout();
        let mut w = BufWriter::new(stdout.lock());
        let n = spec.write_ndjson(&mut w, &tag)?;
        w.flush()?;
        n
    } else {
        let mut w = BufWriter::new(File::create(&args.out).with_context(|| format!("creating {}", args.out))?);
        let n = spec.write_ndjson(&mut w, &tag)?;
        w.flush()?;
        n
    };
    tracing::info!(spans, minutes = spec.minutes(), "generated");

    if args.ingest {
        let p = Pipeline::open(cfg.manual())?;
        let mut buf = Vec::new();
        spec.write_ndjson(&mut buf, &tag)?;
        let report = replay::replay_into(&p, &buf[..], 0.0)?;
        eprintln!("{}", serde_json::to_string(&report)?);
    }
    Ok(())
}

/// Write one frame of the requested heatmap as CSV: a header row of x
/// labels, then one row per y label. Empty cells have no data.
pub fn matrix_csv<W: Write>(p: &Pipeline, params: &Params, frame: usize, out: &mut W) -> anyhow::Result<()> {
    let spec = api::spec_from_params(params, p)?;
    let set = p.heatmap(&spec)?;
    let Some(f) = set.frames.get(frame) else {
        bail!("frame {frame} does not exist ({} frames)", set.frames.len());
    };
    write_frame_csv(f, out)
}

pub fn write_frame_csv<W: Write>(f: &HeatmapFrame, out: &mut W) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec![String::new()];
    header.extend(f.x_labels.iter().cloned());
    w.write_record(&header)?;
    for (y, row) in f.y_labels.iter().zip(&f.values) {
        let mut rec = vec![y.clone()];
        rec.extend(row.iter().map(|v| v.map(|x| x.to_string()).unwrap_or_default()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
