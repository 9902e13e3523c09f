//! `luminocity`: batch pipeline driver and server launcher.
//!
//! Exit status is 0 on success, 1 for usage errors and 2 when the input data
//! or the data directory is at fault.

use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use luminocity::assoc::query_bbox;
use luminocity::gridmap::{build_height_grid, load_point_cloud};
use luminocity::ingest::to_tsv_with;
use luminocity::{BBox, HeightGrid, Query, SchemeConfig, SchemeMode, TableSet};
use luminocity_service::data::STORE_DIR;
use luminocity_service::{render_scheme, window_records, DataDir, Server, ServerConfig};

#[derive(Debug, Parser)]
#[command(name = "luminocity", version, about = "Geo-tagged post pipeline over a 3D city model")]
struct Cli {
    /// Data directory (overrides the config file).
    #[arg(long, global = true)]
    data_dir: Option<PathBuf>,
    /// JSON server/pipeline configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Parse a feed file, archive kept records as TSV and store them.
    Ingest {
        feed: PathBuf,
        /// Input is TSV (archive format) rather than feed JSON lines.
        #[arg(long)]
        tsv: bool,
    },
    /// Build the height grid from a `lat lon z` point cloud.
    Heightmap { pointcloud: PathBuf },
    /// Print records inside a box as TSV.
    Query {
        /// lat_min,lat_max,lon_min,lon_max
        #[arg(long, value_parser = parse_bbox, allow_hyphen_values = true)]
        bbox: BBox,
        #[arg(long, value_parser = parse_time)]
        from: Option<i64>,
        #[arg(long, value_parser = parse_time)]
        to: Option<i64>,
        #[arg(long)]
        keyword: Option<String>,
    },
    /// Run the HTTP/WebSocket service.
    Serve {
        /// Listen address (overrides the config file).
        #[arg(long)]
        listen: Option<std::net::SocketAddr>,
    },
    /// Write PPM frames for a scheme.
    Render {
        #[arg(long, value_enum)]
        mode: Mode,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, required_if_eq("mode", "keyword"))]
        keyword: Option<String>,
        #[arg(long, value_parser = parse_time)]
        from: Option<i64>,
        #[arg(long, value_parser = parse_time)]
        to: Option<i64>,
        /// Animation bins.
        #[arg(long, default_value_t = 12)]
        bins: usize,
        /// Keyword overlay opacity.
        #[arg(long, default_value_t = 0.6)]
        alpha: f64,
        /// Log-scale counts.
        #[arg(long)]
        log: bool,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Mode {
    Height,
    Density,
    Keyword,
    Topics,
    Animate,
}

impl From<Mode> for SchemeMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Height => SchemeMode::Height,
            Mode::Density => SchemeMode::Density,
            Mode::Keyword => SchemeMode::Keyword,
            Mode::Topics => SchemeMode::Topics,
            Mode::Animate => SchemeMode::Animate,
        }
    }
}

fn parse_bbox(s: &str) -> Result<BBox, String> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|_| format!("bad number {p:?}")))
        .collect::<Result<_, _>>()?;
    let [a, b, c, d] = parts[..] else {
        return Err("expected lat_min,lat_max,lon_min,lon_max".into());
    };
    BBox::new(a, b, c, d).map_err(|e| e.to_string())
}

/// Epoch seconds or RFC 3339.
fn parse_time(s: &str) -> Result<i64, String> {
    if let Ok(t) = s.parse() {
        return Ok(t);
    }
    chrono::DateTime::parse_from_rfc3339(s)
        .map(|t| t.timestamp())
        .map_err(|_| format!("{s:?} is neither epoch seconds nor RFC 3339"))
}

/// Bad arguments discovered after parsing; exits with status 1.
#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn load_config(cli: &Cli) -> Result<ServerConfig> {
    let mut cfg = match &cli.config {
        Some(path) => ServerConfig::load(path).map_err(|e| UsageError(e.to_string()))?,
        None => ServerConfig::default(),
    };
    if let Some(dir) = &cli.data_dir {
        cfg.data_dir = dir.clone();
    }
    Ok(cfg)
}

fn open_input(path: &Path) -> Result<BufReader<File>> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Ok(BufReader::new(f))
}

fn ingest(cfg: &ServerConfig, feed: &Path, tsv: bool) -> Result<()> {
    let data = DataDir::new(&cfg.data_dir);
    let input = open_input(feed)?;
    let store = data.open_store(cfg.key_format)?;
    let summary = if tsv {
        let n = data.load_tsv(&store, input)?;
        serde_json::json!({ "records_loaded": n })
    } else {
        let mut lines = Vec::new();
        for line in input.lines() {
            lines.push(line.with_context(|| format!("reading {}", feed.display()))?);
        }
        serde_json::to_value(data.ingest_lines(&store, &lines)?)?
    };
    log::info!("store now holds {} records", store.record_count());
    println!("{summary}");
    Ok(())
}

fn heightmap(cfg: &ServerConfig, pointcloud: &Path) -> Result<()> {
    let cloud = load_point_cloud(pointcloud).with_context(|| format!("loading {}", pointcloud.display()))?;
    let hg = build_height_grid(&cloud, &cfg.grid);
    DataDir::new(&cfg.data_dir).save_heightmap(&hg)?;
    let covered = hg.heights.iter().filter(|&&h| h > 0.0).count();
    println!(
        "{}",
        serde_json::json!({
            "points": cloud.points.len(),
            "nrows": hg.spec.nrows,
            "ncols": hg.spec.ncols,
            "max_height": hg.max_height(),
            "nonzero_cells": covered,
        })
    );
    Ok(())
}

fn existing_store(cfg: &ServerConfig) -> Result<TableSet> {
    let dir = cfg.data_dir.join(STORE_DIR);
    if !dir.is_dir() {
        bail!("no store under {}; run `ingest` first", cfg.data_dir.display());
    }
    Ok(DataDir::new(&cfg.data_dir).open_store(cfg.key_format)?)
}

fn query(cfg: &ServerConfig, q: &Query) -> Result<()> {
    let store = existing_store(cfg)?;
    let recs = query_bbox(&store.snapshot(), q, cfg.key_format)?;
    let mut out = BufWriter::new(io::stdout().lock());
    for r in &recs {
        out.write_all(to_tsv_with(r, cfg.key_format.frac_digits).as_bytes())?;
    }
    out.flush()?;
    Ok(())
}

fn render(cfg: &ServerConfig, scheme: &SchemeConfig, out: &Path) -> Result<()> {
    scheme.validate().map_err(|e| UsageError(e.to_string()))?;
    let data = DataDir::new(&cfg.data_dir);
    let hg = data.load_heightmap(&cfg.grid)?.unwrap_or_else(|| HeightGrid::zeros(cfg.grid));
    let recs = if scheme.mode == SchemeMode::Height {
        Vec::new()
    } else {
        let store = existing_store(cfg)?;
        window_records(&store.snapshot(), &cfg.grid, cfg.key_format, scheme.t0, scheme.t1)?
    };
    let frames = if scheme.mode == SchemeMode::Animate { scheme.bins } else { 1 };
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    for tick in 0..frames {
        let frame = render_scheme(scheme, &hg, &recs, tick as u64)?;
        let path = out.join(format!("frame-{tick:04}.ppm"));
        let mut w = BufWriter::new(File::create(&path).with_context(|| format!("creating {}", path.display()))?);
        frame.write_ppm(&mut w)?;
        w.flush()?;
    }
    println!("{}", serde_json::json!({ "frames": frames, "records": recs.len(), "out": out }));
    Ok(())
}

async fn serve(cfg: ServerConfig) -> Result<()> {
    let server = Server::start(cfg).await?;
    println!("listening on {}", server.local_addr());
    io::stdout().flush()?;
    tokio::signal::ctrl_c().await.context("waiting for ctrl-c")?;
    log::info!("shutting down");
    server.shutdown().await;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = load_config(&cli)?;
    match cli.command {
        Command::Ingest { feed, tsv } => ingest(&cfg, &feed, tsv),
        Command::Heightmap { pointcloud } => heightmap(&cfg, &pointcloud),
        Command::Query { bbox, from, to, keyword } => {
            let mut q = Query::bbox(bbox).between(from, to);
            if let Some(k) = keyword {
                q = q.keyword(k);
            }
            query(&cfg, &q)
        }
        Command::Serve { listen } => {
            if let Some(addr) = listen {
                cfg.listen = addr;
            }
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(serve(cfg))
        }
        Command::Render { mode, out, keyword, from, to, bins, alpha, log } => {
            let scheme = SchemeConfig {
                mode: mode.into(),
                keyword: keyword.unwrap_or_default(),
                t0: from,
                t1: to,
                bins,
                alpha,
                log_scale: log,
                ..SchemeConfig::default()
            };
            render(&cfg, &scheme, &out)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.is::<UsageError>() {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}
