//! End-to-end matching of trajectories and batch orchestration.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{info, warn};
use rayon::prelude::*;
use serde_json::{json, Value};
use thiserror::Error;

use crate::candidates::{build_index, generate_candidates, Candidate, CandidateError, SpatialIndex};
use crate::config::Config;
use crate::imputer::{impute_route_cached, ImputeError, Leg, MatchedRoute};
use crate::metrics::{path_length_variation, ping_candidate_distance, summarize, write_summary_table, RunReport};
use crate::netbuild::{read_asset_file, NetbuildError};
use crate::netgraph::{build_graph, GraphError, RoadNetwork};
use crate::stmatch::StParams;
use crate::trajectory::{load_trajectories_file, Trajectory, TrajectoryError};
use crate::trellis::{build_trellis, TrellisError, TrellisGraph};
use crate::voting::{run_voting, select_final, VoteTally, VotingCounters, VotingParams};

#[derive(Debug, Error)]
pub enum MatchError {
    #[error(transparent)]
    Candidates(#[from] CandidateError),
    #[error(transparent)]
    Trellis(#[from] TrellisError),
    #[error(transparent)]
    Impute(#[from] ImputeError),
}

#[derive(Debug, Error)]
pub enum BatchError {
    #[error("missing required setting `{0}`")]
    MissingSetting(&'static str),
    #[error(transparent)]
    Asset(#[from] NetbuildError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Trajectories(#[from] TrajectoryError),
    #[error("cannot write {path}: {source}")]
    Output {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("cannot start worker pool: {0}")]
    Workers(String),
}

/// Parameters for matching one trajectory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchSettings {
    pub alpha: f64,
    pub k: usize,
    pub st: StParams,
    pub voting: VotingParams,
    pub minpings: usize,
}

impl Default for MatchSettings {
    fn default() -> Self {
        MatchSettings::from(&Config::default())
    }
}

impl From<&Config> for MatchSettings {
    fn from(c: &Config) -> Self {
        Self {
            alpha: c.alpha,
            k: c.k,
            st: c.st_params(),
            voting: c.voting_params(),
            minpings: c.minpings,
        }
    }
}

/// A road network with its candidate index.
#[derive(Debug, Clone)]
pub struct MatchContext {
    pub net: RoadNetwork,
    pub index: SpatialIndex,
}

impl MatchContext {
    pub fn new(net: RoadNetwork, alpha: f64) -> Self {
        let index = build_index(&net, alpha.max(50.0));
        Self { net, index }
    }
}

#[derive(Debug, Clone)]
pub struct TrajectoryMatch {
    pub trellis: TrellisGraph,
    pub tally: VoteTally,
    pub counters: VotingCounters,
    /// Winning candidate index per trellis slice.
    pub selection: Vec<usize>,
    pub route: MatchedRoute,
    /// Original indices of pings without candidates.
    pub dropped_pings: Vec<usize>,
    pub report: RunReport,
}

impl TrajectoryMatch {
    pub fn selected(&self) -> Vec<Candidate> {
        self.route.anchors.clone()
    }
}

/// Candidates, trellis, voting, selection, imputation and metrics for one
/// trajectory.
pub fn match_trajectory(
    ctx: &MatchContext,
    traj: &Trajectory,
    settings: &MatchSettings,
) -> Result<TrajectoryMatch, MatchError> {
    let started = Instant::now();
    let input = traj
        .pings
        .iter()
        .map(|p| {
            match generate_candidates(p, &ctx.index, &ctx.net, settings.alpha, settings.k) {
                Ok(c) => Ok((p.clone(), c)),
                Err(CandidateError::NoCandidates { .. }) => Ok((p.clone(), Vec::new())),
                Err(e) => Err(e),
            }
        })
        .collect::<Result<Vec<_>, _>>()?;
    let (trellis, dropped_pings) = build_trellis(input, &ctx.net, &settings.st, settings.minpings.max(2))?;
    let voting = run_voting(&trellis, &settings.voting);
    let selection = select_final(&trellis, &voting.tally);
    let route = impute_route_cached(&ctx.net, &trellis, &selection)?;

    let kept: Vec<_> = trellis.slices().iter().map(|s| s.ping.clone()).collect();
    let report = RunReport {
        trajectory_id: traj.id.clone(),
        pings: traj.pings.len(),
        dropped_pings: dropped_pings.len(),
        ping_candidate_distances: ping_candidate_distance(&route.anchors),
        length_variation: path_length_variation(&kept, &route.anchors).ok(),
        route_length: route.total_length,
        full_process_secs: started.elapsed().as_secs_f64(),
        voting_secs: voting.elapsed.as_secs_f64(),
        relaxations: voting.counters.relaxations,
        breaks: trellis.breaks().len(),
        gaps: route.gap_count(),
        leg_node_counts: route.leg_node_counts.clone(),
    };
    Ok(TrajectoryMatch {
        trellis,
        tally: voting.tally,
        counters: voting.counters,
        selection,
        route,
        dropped_pings,
        report,
    })
}

fn point(p: crate::geo::GeoPoint) -> Value {
    json!([p.lon, p.lat])
}

/// Feature collection with raw pings, selected candidates, route runs and
/// gap annotations.
pub fn route_geojson(traj: &Trajectory, m: &TrajectoryMatch) -> Value {
    let mut features = Vec::new();
    for p in &traj.pings {
        features.push(json!({
            "type": "Feature",
            "geometry": {"type": "Point", "coordinates": point(p.point)},
            "properties": {"kind": "ping", "index": p.index, "timestamp": p.timestamp,
                           "dropped": m.dropped_pings.contains(&p.index)},
        }));
    }
    for c in &m.route.anchors {
        features.push(json!({
            "type": "Feature",
            "geometry": {"type": "Point", "coordinates": point(c.foot)},
            "properties": {"kind": "candidate", "ping_index": c.ping_index, "piece_id": c.piece_id,
                           "frac": c.frac, "dist": c.dist},
        }));
    }
    for (i, run) in m.route.runs.iter().enumerate() {
        let coords: Vec<Value> = run.iter().map(|p| point(*p)).collect();
        features.push(json!({
            "type": "Feature",
            "geometry": {"type": "LineString", "coordinates": coords},
            "properties": {"kind": "route", "run": i},
        }));
    }
    for (i, leg) in m.route.legs.iter().enumerate() {
        if let Leg::Gap = leg {
            let (a, b) = (&m.route.anchors[i], &m.route.anchors[i + 1]);
            features.push(json!({
                "type": "Feature",
                "geometry": {"type": "LineString", "coordinates": [point(a.foot), point(b.foot)]},
                "properties": {"kind": "gap", "leg": i, "from_ping": a.ping_index, "to_ping": b.ping_index},
            }));
        }
    }
    json!({
        "type": "FeatureCollection",
        "properties": {"trajectory_id": traj.id, "route_length_m": m.route.total_length},
        "features": features,
    })
}

/// Writes `bytes` to `path` through a temporary sibling and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)
}

fn file_stem(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

#[derive(Debug, Clone, Default)]
pub struct BatchOutcome {
    pub reports: Vec<RunReport>,
    /// Trajectory id and error message of every aborted trajectory.
    pub failures: Vec<(String, String)>,
    pub too_short: Vec<(String, usize)>,
}

impl BatchOutcome {
    /// 0 when every trajectory matched, 2 otherwise.
    pub fn exit_code(&self) -> i32 {
        if self.failures.is_empty() {
            0
        } else {
            2
        }
    }
}

/// Matches every trajectory independently; one failure does not stop the
/// others.
pub fn match_all(
    ctx: &MatchContext,
    trajectories: &[Trajectory],
    settings: &MatchSettings,
    out_dir: Option<&Path>,
) -> Vec<Result<RunReport, String>> {
    trajectories
        .par_iter()
        .map(|t| {
            let m = match_trajectory(ctx, t, settings).map_err(|e| e.to_string())?;
            if let Some(dir) = out_dir {
                let path = dir.join(format!("{}.geojson", file_stem(&t.id)));
                let text = serde_json::to_vec_pretty(&route_geojson(t, &m)).map_err(|e| e.to_string())?;
                write_atomic(&path, &text).map_err(|e| format!("{}: {e}", path.display()))?;
            }
            Ok(m.report)
        })
        .collect()
}

/// Loads the asset and trajectories named in `config`, matches them and
/// writes per-trajectory GeoJSON plus `summary.tsv` and `stats.tsv`.
pub fn run_batch(config: &Config) -> Result<BatchOutcome, BatchError> {
    let asset = config.asset.as_deref().ok_or(BatchError::MissingSetting("asset"))?;
    let traj_path = config
        .trajectories
        .as_deref()
        .ok_or(BatchError::MissingSetting("trajectories"))?;
    let out = config.out.as_deref().ok_or(BatchError::MissingSetting("out"))?;
    let out_err = |path: &Path| {
        let path = path.to_path_buf();
        move |source| BatchError::Output { path, source }
    };
    std::fs::create_dir_all(out).map_err(out_err(out))?;

    let net = build_graph(read_asset_file(asset)?)?;
    info!(
        "network: {} pieces, {} nodes, {} components",
        net.pieces().len(),
        net.node_count(),
        net.component_count()
    );
    let ctx = MatchContext::new(net, config.alpha);
    let (trajectories, load) = load_trajectories_file(traj_path, config.split_gap_s, config.minpings)?;
    for (id, n) in &load.too_short {
        warn!("trajectory {id}: {n} pings, below minpings");
    }
    let settings = MatchSettings::from(config);

    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(w) = config.workers {
        builder = builder.num_threads(w);
    }
    let pool = builder.build().map_err(|e| BatchError::Workers(e.to_string()))?;
    let results = pool.install(|| match_all(&ctx, &trajectories, &settings, Some(out)));

    let mut outcome = BatchOutcome {
        too_short: load.too_short,
        ..Default::default()
    };
    for (t, r) in trajectories.iter().zip(results) {
        match r {
            Ok(rep) => outcome.reports.push(rep),
            Err(e) => {
                warn!("trajectory {}: {e}", t.id);
                outcome.failures.push((t.id.clone(), e));
            }
        }
    }

    let summary_path = out.join("summary.tsv");
    write_atomic(&summary_path, &summary_tsv(&outcome)).map_err(out_err(&summary_path))?;
    let stats_path = out.join("stats.tsv");
    write_atomic(&stats_path, &stats_tsv(&outcome.reports)).map_err(out_err(&stats_path))?;
    Ok(outcome)
}

fn summary_tsv(outcome: &BatchOutcome) -> Vec<u8> {
    let mut s = String::from(
        "trajectory_id\tstatus\tpings\tdropped_pings\tmedian_ping_candidate_m\tlength_variation_m\t\
         length_variation_rel\troute_length_m\tfull_process_s\tvoting_s\trelaxations\tbreaks\tgaps\tmax_leg_nodes\n",
    );
    for r in &outcome.reports {
        let median = summarize(&r.ping_candidate_distances).map(|s| s.q2).unwrap_or(f64::NAN);
        let (abs, rel) = r
            .length_variation
            .map_or((String::new(), String::new()), |v| (format!("{:.3}", v.absolute), format!("{:.6}", v.relative)));
        let max_nodes = r.leg_node_counts.iter().flatten().max().copied().unwrap_or(0);
        s.push_str(&format!(
            "{}\tok\t{}\t{}\t{median:.3}\t{abs}\t{rel}\t{:.3}\t{:.6}\t{:.6}\t{}\t{}\t{}\t{max_nodes}\n",
            r.trajectory_id,
            r.pings,
            r.dropped_pings,
            r.route_length,
            r.full_process_secs,
            r.voting_secs,
            r.relaxations,
            r.breaks,
            r.gaps
        ));
    }
    for (id, e) in &outcome.failures {
        s.push_str(&format!("{id}\tfailed: {}\t\t\t\t\t\t\t\t\t\t\t\t\n", e.replace(['\t', '\n'], " ")));
    }
    s.into_bytes()
}

fn stats_tsv(reports: &[RunReport]) -> Vec<u8> {
    let mut rows = Vec::new();
    let mut add = |label: &str, values: Vec<f64>| {
        if let Ok(s) = summarize(&values) {
            rows.push((label.to_string(), s));
        }
    };
    add("full_process_s", reports.iter().map(|r| r.full_process_secs).collect());
    add("voting_s", reports.iter().map(|r| r.voting_secs).collect());
    add(
        "ping_candidate_m",
        reports.iter().flat_map(|r| r.ping_candidate_distances.iter().copied()).collect(),
    );
    add(
        "length_variation_rel",
        reports.iter().filter_map(|r| r.length_variation.map(|v| v.relative)).collect(),
    );
    let mut buf = Vec::new();
    write_summary_table(&mut buf, &rows).expect("writing to memory");
    buf
}
