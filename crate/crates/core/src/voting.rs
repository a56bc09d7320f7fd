//! Interactive voting over reference pings, global or distance-bounded.

use std::collections::HashMap;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::geo::{geodesic_distance, BoundingBox, GeoPoint, METERS_PER_DEGREE};
use crate::trellis::{Dp, TrellisGraph};

/// Reference pings handled per parallel work unit. Fixed so that score
/// sums associate the same way on any thread count.
const ROUNDS_PER_CHUNK: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum MaxDist {
    Unbounded,
    /// Slices at this distance or farther from the reference ping are
    /// dropped from its round.
    Bounded(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VotingParams {
    /// Scale of the distance weight, meters.
    pub beta: f64,
    pub maxdist: MaxDist,
}

impl Default for VotingParams {
    fn default() -> Self {
        Self {
            beta: 2000.0,
            maxdist: MaxDist::Unbounded,
        }
    }
}

/// Weight of a slice `x` meters from the reference ping.
pub fn distance_weight(x: f64, params: &VotingParams) -> f64 {
    if let MaxDist::Bounded(m) = params.maxdist {
        if x >= m {
            return 0.0;
        }
    }
    let r = x / params.beta;
    (-r * r).exp()
}

/// Votes and cumulative scores, indexed `[slice][candidate]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoteTally {
    pub votes: Vec<Vec<u32>>,
    pub score: Vec<Vec<f64>>,
}

impl VoteTally {
    pub fn new(tr: &TrellisGraph) -> Self {
        let widths = tr.slices().iter().map(|s| s.candidates.len());
        Self {
            votes: widths.clone().map(|w| vec![0; w]).collect(),
            score: widths.map(|w| vec![0.0; w]).collect(),
        }
    }

    fn add(&mut self, other: &VoteTally) {
        for (a, b) in self.votes.iter_mut().flatten().zip(other.votes.iter().flatten()) {
            *a += b;
        }
        for (a, b) in self.score.iter_mut().flatten().zip(other.score.iter().flatten()) {
            *a += b;
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct VotingCounters {
    /// Trellis edges examined by the forward passes.
    pub relaxations: u64,
    pub rounds: u64,
    /// Constrained sequences extracted, one per reference candidate.
    pub sequences: u64,
    /// Slices kept across all rounds.
    pub retained_slices: u64,
}

impl VotingCounters {
    fn add(&mut self, o: &VotingCounters) {
        self.relaxations += o.relaxations;
        self.rounds += o.rounds;
        self.sequences += o.sequences;
        self.retained_slices += o.retained_slices;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VotingOutcome {
    pub tally: VoteTally,
    pub counters: VotingCounters,
    pub elapsed: Duration,
}

/// Grid over ping positions for fixed-radius lookups.
struct PingGrid {
    cell_lat: f64,
    cell_lon: f64,
    cells: HashMap<(i64, i64), Vec<usize>>,
}

impl PingGrid {
    fn new(points: &[GeoPoint], cell_m: f64) -> Self {
        let max_abs_lat = points.iter().map(|p| p.lat.abs()).fold(0.0f64, f64::max).min(89.0);
        let mut grid = PingGrid {
            cell_lat: cell_m / METERS_PER_DEGREE,
            cell_lon: cell_m / (METERS_PER_DEGREE * max_abs_lat.to_radians().cos()),
            cells: HashMap::new(),
        };
        for (i, p) in points.iter().enumerate() {
            let key = grid.cell_of(*p);
            grid.cells.entry(key).or_default().push(i);
        }
        grid
    }

    fn cell_of(&self, p: GeoPoint) -> (i64, i64) {
        (
            (p.lat / self.cell_lat).floor() as i64,
            (p.lon / self.cell_lon).floor() as i64,
        )
    }

    fn near(&self, p: GeoPoint, radius_m: f64, out: &mut Vec<usize>) {
        let bb = BoundingBox::around(p, radius_m);
        let (r0, c0) = self.cell_of(bb.min);
        let (r1, c1) = self.cell_of(bb.max);
        out.clear();
        // A huge radius on a small grid: walking the cells would cost more
        // than reading them all.
        let span = (r1 - r0 + 1).saturating_mul(c1 - c0 + 1);
        if span as usize > self.cells.len() {
            out.extend(self.cells.values().flatten());
        } else {
            for r in r0..=r1 {
                for c in c0..=c1 {
                    if let Some(v) = self.cells.get(&(r, c)) {
                        out.extend(v);
                    }
                }
            }
        }
        out.sort_unstable();
    }
}

/// Slices taking part in the round of `ref_ping`, with their weights.
fn window(
    tr: &TrellisGraph,
    ref_ping: usize,
    params: &VotingParams,
    grid: Option<&PingGrid>,
) -> (Vec<usize>, Vec<f64>) {
    let p = tr.slice(ref_ping).ping.point;
    let mut slices = Vec::new();
    let mut gammas = Vec::new();
    let mut keep = |i: usize, slices: &mut Vec<usize>| {
        let d = geodesic_distance(p, tr.slice(i).ping.point);
        let in_range = match params.maxdist {
            MaxDist::Unbounded => true,
            MaxDist::Bounded(m) => d < m,
        };
        if in_range || i == ref_ping {
            slices.push(i);
            gammas.push(if i == ref_ping { distance_weight(0.0, params) } else { distance_weight(d, params) });
        }
    };
    match (params.maxdist, grid) {
        (MaxDist::Bounded(m), Some(grid)) => {
            let mut near = Vec::new();
            grid.near(p, m, &mut near);
            for i in near {
                keep(i, &mut slices);
            }
        }
        _ => {
            for i in 0..tr.len() {
                keep(i, &mut slices);
            }
        }
    }
    (slices, gammas)
}

fn round_into(
    tr: &TrellisGraph,
    ref_ping: usize,
    params: &VotingParams,
    grid: Option<&PingGrid>,
    tally: &mut VoteTally,
    seq: &mut Vec<usize>,
) -> VotingCounters {
    let (slices, gammas) = window(tr, ref_ping, params, grid);
    let ref_pos = slices.binary_search(&ref_ping).expect("reference slice is always retained");
    let mut dp = Dp::new(tr, &slices, &gammas);
    let mut counters = VotingCounters {
        rounds: 1,
        retained_slices: slices.len() as u64,
        ..Default::default()
    };
    counters.relaxations += dp.forward_prefix(ref_pos);
    for j in 0..tr.slice(ref_ping).candidates.len() {
        counters.relaxations += dp.forward_suffix_masked(ref_pos, j);
        let total = dp.traceback(seq);
        for (pos, &c) in seq.iter().enumerate() {
            let s = slices[pos];
            tally.votes[s][c] += 1;
            tally.score[s][c] += total;
        }
        counters.sequences += 1;
    }
    counters
}

/// One round: every candidate of `ref_ping` elects its constrained optimal
/// sequence, whose members each gain a vote and the sequence's f-score.
pub fn voting_round(
    tr: &TrellisGraph,
    ref_ping: usize,
    params: &VotingParams,
    tally: &mut VoteTally,
) -> VotingCounters {
    round_into(tr, ref_ping, params, None, tally, &mut Vec::new())
}

/// Runs a round for every slice and sums the tallies.
pub fn run_voting(tr: &TrellisGraph, params: &VotingParams) -> VotingOutcome {
    let started = Instant::now();
    let grid = match params.maxdist {
        MaxDist::Bounded(m) => {
            let points: Vec<GeoPoint> = tr.slices().iter().map(|s| s.ping.point).collect();
            Some(PingGrid::new(&points, m.max(1.0)))
        }
        MaxDist::Unbounded => None,
    };
    let refs: Vec<usize> = (0..tr.len()).collect();
    let partials: Vec<(VoteTally, VotingCounters)> = refs
        .par_chunks(ROUNDS_PER_CHUNK)
        .map(|chunk| {
            let mut tally = VoteTally::new(tr);
            let mut counters = VotingCounters::default();
            let mut seq = Vec::new();
            for &r in chunk {
                counters.add(&round_into(tr, r, params, grid.as_ref(), &mut tally, &mut seq));
            }
            (tally, counters)
        })
        .collect();
    let mut tally = VoteTally::new(tr);
    let mut counters = VotingCounters::default();
    for (t, c) in &partials {
        tally.add(t);
        counters.add(c);
    }
    VotingOutcome {
        tally,
        counters,
        elapsed: started.elapsed(),
    }
}

/// Per slice, the candidate with most votes, then highest score, then
/// lowest index.
pub fn select_final(tr: &TrellisGraph, tally: &VoteTally) -> Vec<usize> {
    (0..tr.len())
        .map(|i| {
            let (votes, score) = (&tally.votes[i], &tally.score[i]);
            let mut best = 0;
            for c in 1..votes.len() {
                if votes[c] > votes[best] || (votes[c] == votes[best] && score[c] > score[best]) {
                    best = c;
                }
            }
            best
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn distance_weight_values() {
        let p = VotingParams::default();
        assert_eq!(distance_weight(0.0, &p), 1.0);
        assert!((distance_weight(2000.0, &p) - (-1.0f64).exp()).abs() < 1e-12);
        let b = VotingParams {
            maxdist: MaxDist::Bounded(1000.0),
            ..p
        };
        assert_eq!(distance_weight(1000.0, &b), 0.0);
        assert_eq!(distance_weight(999.0, &b), distance_weight(999.0, &p));
    }
}
