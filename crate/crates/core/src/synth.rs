//! Seeded synthetic grid networks and walk-sampled trajectories.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::candidates::Ping;
use crate::geo::{geodesic_distance, interpolate, GeoPoint};
use crate::netbuild::{write_asset, NetbuildError, RoadPiece};
use crate::trajectory::{write_trajectories, Trajectory, TrajectoryError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    /// Nodes per column.
    pub rows: usize,
    /// Nodes per row.
    pub cols: usize,
    pub spacing_m: f64,
    /// South-west corner.
    pub origin: GeoPoint,
    /// Uniform random displacement of interior nodes, meters.
    pub jitter_m: f64,
    /// Speed limits drawn per way, km/h.
    pub speeds_kmh: Vec<f64>,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            rows: 10,
            cols: 10,
            spacing_m: 100.0,
            origin: GeoPoint::new(33.45, -112.07),
            jitter_m: 0.0,
            speeds_kmh: vec![30.0, 50.0],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum WalkMode {
    /// Random turns, never reversing onto the piece just used.
    NonBacktracking,
    /// Never heads west and never reverses, so no node is visited twice.
    Monotone,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticParams {
    pub grid: GridSpec,
    pub trajectories: usize,
    /// Pieces per walk.
    pub walk_pieces: usize,
    pub walk_mode: WalkMode,
    /// Along-route ping spacing, as fractions of `grid.spacing_m`.
    pub spacing_frac: (f64, f64),
    /// Gaussian positional noise of pings, meters.
    pub noise_sigma_m: f64,
    /// Travel speed as a fraction of the piece speed limit.
    pub speed_factor: f64,
}

impl Default for SyntheticParams {
    fn default() -> Self {
        Self {
            grid: GridSpec::default(),
            trajectories: 10,
            walk_pieces: 12,
            walk_mode: WalkMode::NonBacktracking,
            spacing_frac: (0.3, 0.6),
            noise_sigma_m: 10.0,
            speed_factor: 0.8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticBatch {
    pub pieces: Vec<RoadPiece>,
    pub trajectories: Vec<Trajectory>,
    /// Pieces driven by each trajectory, from its first ping to its last.
    pub truth: Vec<Vec<u64>>,
    /// Piece each ping was sampled on, per trajectory.
    pub ping_pieces: Vec<Vec<u64>>,
}

/// Grid of two-way pieces. Every row and every column is one way.
pub fn grid_pieces(spec: &GridSpec, rng: &mut impl Rng) -> Vec<RoadPiece> {
    let mut nodes = Vec::with_capacity(spec.rows * spec.cols);
    for r in 0..spec.rows {
        for c in 0..spec.cols {
            let interior = r > 0 && c > 0 && r + 1 < spec.rows && c + 1 < spec.cols;
            let (dn, de) = if interior && spec.jitter_m > 0.0 {
                (
                    rng.gen_range(-spec.jitter_m..=spec.jitter_m),
                    rng.gen_range(-spec.jitter_m..=spec.jitter_m),
                )
            } else {
                (0.0, 0.0)
            };
            nodes.push(
                spec.origin
                    .offset(r as f64 * spec.spacing_m + dn, c as f64 * spec.spacing_m + de),
            );
        }
    }
    let node = |r: usize, c: usize| nodes[r * spec.cols + c];
    let mut pieces = Vec::new();
    let mut push = |way_id: i64, a: GeoPoint, b: GeoPoint, speed: f64| {
        let mut tags = BTreeMap::new();
        tags.insert("highway".to_string(), "residential".to_string());
        pieces.push(RoadPiece {
            piece_id: pieces.len() as u64 + 1,
            way_id,
            start: a,
            end: b,
            length_m: geodesic_distance(a, b),
            highway: "residential".to_string(),
            maxspeed_kmh: Some(speed),
            maxspeed_imputed: false,
            oneway: Some(false),
            service: None,
            tags,
        });
    };
    let pick_speed = |rng: &mut dyn rand::RngCore| *spec.speeds_kmh.choose(rng).unwrap_or(&50.0);
    for r in 0..spec.rows {
        let speed = pick_speed(rng);
        for c in 0..spec.cols.saturating_sub(1) {
            push(r as i64 + 1, node(r, c), node(r, c + 1), speed);
        }
    }
    for c in 0..spec.cols {
        let speed = pick_speed(rng);
        for r in 0..spec.rows.saturating_sub(1) {
            push((spec.rows + c) as i64 + 1, node(r, c), node(r + 1, c), speed);
        }
    }
    pieces
}

/// Piece id joining two adjacent grid nodes, with the traversal direction.
fn grid_piece(spec: &GridSpec, a: (usize, usize), b: (usize, usize)) -> (u64, bool) {
    let row_pieces = spec.rows * (spec.cols - 1);
    if a.0 == b.0 {
        let c = a.1.min(b.1);
        ((a.0 * (spec.cols - 1) + c) as u64 + 1, b.1 > a.1)
    } else {
        let r = a.0.min(b.0);
        ((row_pieces + a.1 * (spec.rows - 1) + r) as u64 + 1, b.0 > a.0)
    }
}

fn random_walk(spec: &GridSpec, params: &SyntheticParams, rng: &mut impl Rng) -> Vec<(usize, usize)> {
    let (rows, cols) = (spec.rows as i64, spec.cols as i64);
    let start_col = match params.walk_mode {
        WalkMode::Monotone => 0,
        WalkMode::NonBacktracking => rng.gen_range(0..cols),
    };
    let mut at = (rng.gen_range(0..rows), start_col);
    let mut walk = vec![(at.0 as usize, at.1 as usize)];
    let mut last: Option<(i64, i64)> = None;
    for _ in 0..params.walk_pieces {
        let mut moves: Vec<(i64, i64)> = vec![(1, 0), (-1, 0), (0, 1), (0, -1)]
            .into_iter()
            .filter(|m| Some((-m.0, -m.1)) != last)
            .filter(|m| !(params.walk_mode == WalkMode::Monotone && *m == (0, -1)))
            .filter(|m| (0..rows).contains(&(at.0 + m.0)) && (0..cols).contains(&(at.1 + m.1)))
            .collect();
        if moves.is_empty() {
            // Dead end: only reversing remains.
            moves = last.map(|l| vec![(-l.0, -l.1)]).unwrap_or_default();
            if params.walk_mode == WalkMode::Monotone || moves.is_empty() {
                break;
            }
        }
        let m = moves[rng.gen_range(0..moves.len())];
        at = (at.0 + m.0, at.1 + m.1);
        last = Some(m);
        walk.push((at.0 as usize, at.1 as usize));
    }
    walk
}

/// Builds a grid network and samples noisy trajectories along random walks.
pub fn generate_synthetic(seed: u64, params: &SyntheticParams) -> SyntheticBatch {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pieces = grid_pieces(&params.grid, &mut rng);
    let noise = Normal::new(0.0, params.noise_sigma_m.max(0.0)).expect("finite noise sigma");
    let mut trajectories = Vec::new();
    let mut truth = Vec::new();
    let mut ping_pieces = Vec::new();

    for t in 0..params.trajectories {
        let walk = random_walk(&params.grid, params, &mut rng);
        if walk.len() < 2 {
            continue;
        }
        // Route as (piece index, forward) legs.
        let legs: Vec<(usize, bool)> = walk
            .windows(2)
            .map(|w| {
                let (id, fwd) = grid_piece(&params.grid, w[0], w[1]);
                (id as usize - 1, fwd)
            })
            .collect();
        let lengths: Vec<f64> = legs.iter().map(|(i, _)| pieces[*i].length_m).collect();
        let total: f64 = lengths.iter().sum();

        let spacing = params.grid.spacing_m;
        let (lo, hi) = params.spacing_frac;
        let mut s = rng.gen_range(0.05..0.45) * lengths[0];
        let mut pings = Vec::new();
        let mut on_piece = Vec::new();
        let mut time = 1_600_000_000.0 + t as f64 * 86_400.0;
        let mut prev_s = 0.0;
        let mut leg = 0;
        let mut leg_start = 0.0;
        while s < total - 1.0 {
            // Advance the clock across every piece between the previous
            // ping and this one.
            let mut cursor = prev_s;
            let mut cursor_leg = leg;
            let mut cursor_start = leg_start;
            while s > cursor_start + lengths[cursor_leg] {
                let end = cursor_start + lengths[cursor_leg];
                time += (end - cursor) / speed_mps(&pieces[legs[cursor_leg].0], params);
                cursor = end;
                cursor_start = end;
                cursor_leg += 1;
            }
            time += (s - cursor) / speed_mps(&pieces[legs[cursor_leg].0], params);
            leg = cursor_leg;
            leg_start = cursor_start;
            prev_s = s;

            let (pi, fwd) = legs[leg];
            let piece = &pieces[pi];
            let along = (s - leg_start) / lengths[leg];
            let frac = if fwd { along } else { 1.0 - along };
            let on = interpolate(piece.start, piece.end, frac);
            let point = if params.noise_sigma_m > 0.0 {
                on.offset(noise.sample(&mut rng), noise.sample(&mut rng))
            } else {
                on
            };
            let mut ping = Ping::new(pings.len(), point, (time * 1000.0).round() / 1000.0);
            ping.speed = Some(speed_mps(piece, params));
            pings.push(ping);
            on_piece.push(piece.piece_id);
            s += rng.gen_range(lo..=hi) * spacing;
        }
        if pings.len() < 2 {
            continue;
        }
        let mut seq: Vec<u64> = legs[..=leg]
            .iter().map(|(i, _)| pieces[*i].piece_id).collect();
        seq.dedup();
        trajectories.push(Trajectory {
            id: format!("synth-{t:05}#0"),
            device_id: format!("synth-{t:05}"),
            pings,
        });
        truth.push(seq);
        ping_pieces.push(on_piece);
    }
    SyntheticBatch {
        pieces,
        trajectories,
        truth,
        ping_pieces,
    }
}

fn speed_mps(piece: &RoadPiece, params: &SyntheticParams) -> f64 {
    piece.maxspeed_kmh.unwrap_or(50.0) / 3.6 * params.speed_factor
}

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Asset(#[from] NetbuildError),
    #[error(transparent)]
    Trajectory(#[from] TrajectoryError),
}

/// Writes `network.tsv`, `trajectories.csv` and `truth.tsv` into `dir`.
pub fn write_synthetic(batch: &SyntheticBatch, dir: &Path) -> Result<(), SynthError> {
    std::fs::create_dir_all(dir)?;
    write_asset(&batch.pieces, std::fs::File::create(dir.join("network.tsv"))?)?;
    write_trajectories(std::fs::File::create(dir.join("trajectories.csv"))?, &batch.trajectories)?;
    let mut truth = std::io::BufWriter::new(std::fs::File::create(dir.join("truth.tsv"))?);
    writeln!(truth, "trajectory_id\tpiece_ids")?;
    for (t, seq) in batch.trajectories.iter().zip(&batch.truth) {
        let ids: Vec<String> = seq.iter().map(u64::to_string).collect();
        writeln!(truth, "{}\t{}", t.id, ids.join(","))?;
    }
    truth.flush()?;
    Ok(())
}
