//! `ivmm` command-line tool.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::{error, info};

use ivmm::bench::{bench, write_bench_table, MAXDIST_GRID};
use ivmm::config::Config;
use ivmm::geo::{BoundingBox, GeoPoint};
use ivmm::netbuild::{build_pieces, parse_extract_file, read_asset_file, write_asset_file, RegionMap};
use ivmm::netgraph::build_graph;
use ivmm::pipeline::{run_batch, MatchContext, MatchSettings};
use ivmm::synth::{generate_synthetic, write_synthetic, GridSpec, SyntheticParams, WalkMode};
use ivmm::trajectory::load_trajectories_file;

#[derive(Parser)]
#[command(name = "ivmm", version, about = "Voting-based map matching and route imputation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a road-piece asset from an OSM XML extract.
    BuildAsset {
        /// OSM XML input.
        #[arg(long)]
        osm: PathBuf,
        /// Asset output path.
        #[arg(long)]
        out: PathBuf,
        /// CSV mapping way ids to admin-1 regions (`way_id,admin1_id`).
        #[arg(long)]
        regions: Option<PathBuf>,
        /// South-west corner as `lat,lon`.
        #[arg(long, value_parser = parse_latlon, requires = "bbox_max")]
        bbox_min: Option<GeoPoint>,
        /// North-east corner as `lat,lon`.
        #[arg(long, value_parser = parse_latlon, requires = "bbox_min")]
        bbox_max: Option<GeoPoint>,
    },
    /// Match every trajectory of a file against an asset.
    Match(Overrides),
    /// Generate a grid network, noisy trajectories and ground truth.
    Synth {
        #[command(flatten)]
        overrides: Overrides,
        #[arg(long, default_value_t = 10)]
        rows: usize,
        #[arg(long, default_value_t = 10)]
        cols: usize,
        #[arg(long, default_value_t = 100.0)]
        spacing: f64,
        #[arg(long, default_value_t = 0.0)]
        jitter: f64,
        /// Number of trajectories.
        #[arg(long, default_value_t = 10)]
        count: usize,
        /// Pieces per walk.
        #[arg(long, default_value_t = 12)]
        walk_pieces: usize,
        /// Walk east only, never revisiting a node.
        #[arg(long)]
        monotone: bool,
    },
    /// Time matching across maxdist settings.
    Bench(Overrides),
}

/// Settings shared by subcommands; flags override the config file.
#[derive(Args)]
struct Overrides {
    /// `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    asset: Option<PathBuf>,
    #[arg(long)]
    trajectories: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Meters, or `unbounded`.
    #[arg(long)]
    maxdist: Option<String>,
    #[arg(long)]
    alpha: Option<String>,
    #[arg(long)]
    k: Option<String>,
    #[arg(long)]
    beta: Option<String>,
    #[arg(long)]
    sigma: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    workers: Option<String>,
}

impl Overrides {
    fn resolve(&self) -> Result<Config, String> {
        let mut cfg = match &self.config {
            Some(p) => Config::from_path(p).map_err(|e| e.to_string())?,
            None => Config::default(),
        };
        let paths = [
            ("asset", &self.asset),
            ("trajectories", &self.trajectories),
            ("out", &self.out),
        ];
        for (key, v) in paths {
            if let Some(p) = v {
                cfg.set(key, &p.to_string_lossy()).map_err(|e| e.to_string())?;
            }
        }
        let values = [
            ("maxdist", &self.maxdist),
            ("alpha", &self.alpha),
            ("k", &self.k),
            ("beta", &self.beta),
            ("sigma", &self.sigma),
            ("seed", &self.seed),
            ("workers", &self.workers),
        ];
        for (key, v) in values {
            if let Some(v) = v {
                cfg.set(key, v).map_err(|e| e.to_string())?;
            }
        }
        Ok(cfg)
    }
}

fn parse_latlon(s: &str) -> Result<GeoPoint, String> {
    let (lat, lon) = s.split_once(',').ok_or("expected lat,lon")?;
    let p = GeoPoint::new(
        lat.trim().parse().map_err(|_| format!("bad latitude {lat:?}"))?,
        lon.trim().parse().map_err(|_| format!("bad longitude {lon:?}"))?,
    );
    if p.is_valid() {
        Ok(p)
    } else {
        Err(format!("coordinates out of range: {s}"))
    }
}

fn require<'a>(v: &'a Option<PathBuf>, key: &str) -> Result<&'a Path, String> {
    v.as_deref().ok_or_else(|| format!("missing setting: {key}"))
}

fn build_asset(
    osm: &Path,
    out: &Path,
    regions: Option<&Path>,
    bbox: Option<BoundingBox>,
) -> Result<(), String> {
    let regions = match regions {
        Some(p) => RegionMap::from_path(p).map_err(|e| e.to_string())?,
        None => RegionMap::default(),
    };
    let extract = parse_extract_file(osm, bbox).map_err(|e| e.to_string())?;
    let (pieces, report) = build_pieces(&extract, &regions);
    info!(
        "{} ways, {} pieces; dropped {} ways with missing nodes, {} zero-length pieces; {} unparseable speeds",
        report.ways,
        pieces.len(),
        report.dropped_missing_nodes,
        report.dropped_zero_length,
        report.impute.unparseable.len()
    );
    write_asset_file(&pieces, out).map_err(|e| e.to_string())
}

fn synth(cfg: &Config, grid: GridSpec, count: usize, walk_pieces: usize, monotone: bool) -> Result<(), String> {
    let out = require(&cfg.out, "out")?;
    let params = SyntheticParams {
        grid,
        trajectories: count,
        walk_pieces,
        walk_mode: if monotone {
            WalkMode::Monotone
        } else {
            WalkMode::NonBacktracking
        },
        noise_sigma_m: cfg.noise_sigma,
        ..Default::default()
    };
    let batch = generate_synthetic(cfg.seed, &params);
    write_synthetic(&batch, out).map_err(|e| e.to_string())?;
    info!(
        "{} pieces, {} trajectories written to {}",
        batch.pieces.len(),
        batch.trajectories.len(),
        out.display()
    );
    Ok(())
}

fn run_bench(cfg: &Config) -> Result<(), String> {
    let net = build_graph(read_asset_file(require(&cfg.asset, "asset")?).map_err(|e| e.to_string())?)
        .map_err(|e| e.to_string())?;
    let (trajectories, _) = load_trajectories_file(
        require(&cfg.trajectories, "trajectories")?,
        cfg.split_gap_s,
        cfg.minpings,
    )
    .map_err(|e| e.to_string())?;
    let ctx = MatchContext::new(net, cfg.alpha);
    let result = bench(&ctx, &trajectories, &MatchSettings::from(cfg), &MAXDIST_GRID).map_err(|e| e.to_string())?;
    match &cfg.out {
        Some(path) => {
            let f = File::create(path).map_err(|e| format!("{}: {e}", path.display()))?;
            write_bench_table(BufWriter::new(f), &result)
        }
        None => write_bench_table(std::io::stdout().lock(), &result),
    }
    .map_err(|e| e.to_string())
}

fn run(cli: Cli) -> Result<u8, String> {
    match cli.command {
        Command::BuildAsset {
            osm,
            out,
            regions,
            bbox_min,
            bbox_max,
        } => {
            let bbox = bbox_min.zip(bbox_max).map(|(a, b)| BoundingBox::new(a, b));
            build_asset(&osm, &out, regions.as_deref(), bbox)?;
            Ok(0)
        }
        Command::Match(o) => {
            let outcome = run_batch(&o.resolve()?).map_err(|e| e.to_string())?;
            info!(
                "{} matched, {} failed, {} too short",
                outcome.reports.len(),
                outcome.failures.len(),
                outcome.too_short.len()
            );
            Ok(outcome.exit_code() as u8)
        }
        Command::Synth {
            overrides,
            rows,
            cols,
            spacing,
            jitter,
            count,
            walk_pieces,
            monotone,
        } => {
            let grid = GridSpec {
                rows,
                cols,
                spacing_m: spacing,
                jitter_m: jitter,
                ..Default::default()
            };
            synth(&overrides.resolve()?, grid, count, walk_pieces, monotone)?;
            Ok(0)
        }
        Command::Bench(o) => {
            run_bench(&o.resolve()?)?;
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            error!("{e}");
            ExitCode::from(1)
        }
    }
}
