//! Shared fixtures and exhaustive oracles for integration tests.
#![allow(dead_code)]

use ivmm::candidates::{Candidate, Ping};
use ivmm::geo::{geodesic_distance, GeoPoint};
use ivmm::trellis::{EdgeMatrix, Slice, TrellisGraph};
use ivmm::voting::{distance_weight, MaxDist, VoteTally, VotingParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    a == b || (a - b).abs() <= tol * a.abs().max(b.abs())
}

/// Trellis with random observations, weights, scattered `-inf` entries and
/// occasional full breaks. Pings lie along a jagged line a few km long.
pub fn random_trellis(rng: &mut ChaCha8Rng, max_slices: usize, max_width: usize, p_hole: f64, p_break: f64) -> TrellisGraph {
    let n = rng.gen_range(1..=max_slices);
    let base = GeoPoint::new(33.4, -112.0);
    let mut slices = Vec::with_capacity(n);
    let mut at = base;
    for i in 0..n {
        let w = rng.gen_range(1..=max_width);
        at = at.offset(rng.gen_range(-600.0..600.0), rng.gen_range(0.0..900.0));
        let ping = Ping::new(i, at, i as f64 * 30.0);
        let candidates = (0..w)
            .map(|j| Candidate {
                ping_index: i,
                candidate_index: j,
                piece_id: (i * 10 + j) as u64 + 1,
                foot: at,
                frac: 0.5,
                dist: 0.0,
            })
            .collect();
        let observation = (0..w).map(|_| rng.gen_range(0.001..0.02)).collect();
        slices.push(Slice {
            ping,
            candidates,
            observation,
        });
    }
    let mut edges = Vec::with_capacity(n.saturating_sub(1));
    for i in 1..n {
        let (r, c) = (slices[i - 1].candidates.len(), slices[i].candidates.len());
        let full_break = rng.gen_bool(p_break);
        let weights = (0..r * c)
            .map(|_| {
                if full_break || rng.gen_bool(p_hole) {
                    f64::NEG_INFINITY
                } else {
                    rng.gen_range(0.0..0.02)
                }
            })
            .collect();
        edges.push(EdgeMatrix::from_weights(r, c, weights));
    }
    TrellisGraph::from_parts(slices, edges).unwrap()
}

pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Slices kept in the round of `r`, with their weights.
pub fn oracle_window(tr: &TrellisGraph, r: usize, params: &VotingParams) -> (Vec<usize>, Vec<f64>) {
    let p = tr.slice(r).ping.point;
    let mut slices = Vec::new();
    let mut gammas = Vec::new();
    for i in 0..tr.len() {
        let d = geodesic_distance(p, tr.slice(i).ping.point);
        let keep = match params.maxdist {
            MaxDist::Unbounded => true,
            MaxDist::Bounded(m) => d < m,
        };
        if keep || i == r {
            slices.push(i);
            gammas.push(distance_weight(d, params));
        }
    }
    (slices, gammas)
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleSequence {
    /// Candidate per window position.
    pub sequence: Vec<usize>,
    /// Value of each chain, first chain first.
    pub chains: Vec<f64>,
    /// Running value of the current chain at each position.
    pub running: Vec<f64>,
    pub total: f64,
}

/// Exhaustive search over every candidate sequence of the window.
///
/// A step between consecutive retained slices either follows a finite
/// edge or starts a new chain; a new chain may start only where no allowed
/// predecessor has a finite edge into the chosen candidate, or where the
/// slices are not consecutive. Sequences are ranked by their chain values
/// compared from the last chain backwards, then by the running chain value
/// at each position from the end, then by the smaller candidate
/// indices from the last slice backwards.
pub fn oracle_best(
    tr: &TrellisGraph,
    window: &[usize],
    gammas: &[f64],
    forced: Option<(usize, usize)>,
) -> OracleSequence {
    let allowed = |pos: usize| -> Vec<usize> {
        match forced {
            Some((fp, j)) if fp == pos => vec![j],
            _ => (0..tr.slice(window[pos]).candidates.len()).collect(),
        }
    };
    let m = window.len();
    let options: Vec<Vec<usize>> = (0..m).map(allowed).collect();
    let mut idx = vec![0usize; m];
    let mut best: Option<OracleSequence> = None;
    loop {
        let seq: Vec<usize> = (0..m).map(|p| options[p][idx[p]]).collect();
        if let Some((chains, running)) = chain_values(tr, window, gammas, &options, &seq) {
            let total = chains.iter().sum();
            let cand = OracleSequence {
                sequence: seq,
                chains,
                running,
                total,
            };
            if best.as_ref().is_none_or(|b| better(&cand, b)) {
                best = Some(cand);
            }
        }
        // Odometer increment.
        let mut p = 0;
        loop {
            if p == m {
                return best.expect("at least one valid sequence exists");
            }
            idx[p] += 1;
            if idx[p] < options[p].len() {
                break;
            }
            idx[p] = 0;
            p += 1;
        }
    }
}

fn chain_values(
    tr: &TrellisGraph,
    window: &[usize],
    gammas: &[f64],
    options: &[Vec<usize>],
    seq: &[usize],
) -> Option<(Vec<f64>, Vec<f64>)> {
    let mut chains = vec![gammas[0] * tr.slice(window[0]).observation[seq[0]]];
    let mut running = vec![chains[0]];
    for p in 1..seq.len() {
        let (prev, cur) = (window[p - 1], window[p]);
        let restart_value = gammas[p] * tr.slice(cur).observation[seq[p]];
        if cur != prev + 1 {
            chains.push(restart_value);
            running.push(restart_value);
            continue;
        }
        let m = tr.edges(prev);
        let w = m.weight(seq[p - 1], seq[p]);
        if w.is_finite() {
            *chains.last_mut().unwrap() += gammas[p] * w;
        } else if options[p - 1].iter().all(|&t| !m.weight(t, seq[p]).is_finite()) {
            chains.push(restart_value);
        } else {
            return None;
        }
        running.push(*chains.last().unwrap());
    }
    Some((chains, running))
}

fn better(a: &OracleSequence, b: &OracleSequence) -> bool {
    // Chains end at different positions in different sequences; compare the
    // value of the chain covering each position, from the end.
    for (x, y) in a.chains.iter().rev().zip(b.chains.iter().rev()) {
        if x != y {
            return x > y;
        }
    }
    // Totals equal after rounding: prefer the larger running value at the
    // latest position where they differ.
    for (x, y) in a.running.iter().rev().zip(b.running.iter().rev()) {
        if x != y {
            return x > y;
        }
    }
    for (x, y) in a.sequence.iter().rev().zip(b.sequence.iter().rev()) {
        if x != y {
            return x < y;
        }
    }
    false
}

/// Tally from exhaustive constrained searches for every reference ping and
/// candidate.
pub fn oracle_tally(tr: &TrellisGraph, params: &VotingParams) -> VoteTally {
    let mut tally = VoteTally::new(tr);
    for r in 0..tr.len() {
        let (window, gammas) = oracle_window(tr, r, params);
        let pos = window.iter().position(|&s| s == r).unwrap();
        for j in 0..tr.slice(r).candidates.len() {
            let best = oracle_best(tr, &window, &gammas, Some((pos, j)));
            for (p, &c) in best.sequence.iter().enumerate() {
                tally.votes[window[p]][c] += 1;
                tally.score[window[p]][c] += best.total;
            }
        }
    }
    tally
}

/// Winners by (votes, score, lowest index), computed independently.
pub fn oracle_select(tally: &VoteTally) -> Vec<usize> {
    tally
        .votes
        .iter()
        .zip(&tally.score)
        .map(|(v, s)| {
            let mut order: Vec<usize> = (0..v.len()).collect();
            order.sort_by(|&a, &b| v[b].cmp(&v[a]).then(s[b].total_cmp(&s[a])).then(a.cmp(&b)));
            order[0]
        })
        .collect()
}

pub fn tallies_match(a: &VoteTally, b: &VoteTally, tol: f64) -> bool {
    a.votes == b.votes
        && a
            .score
            .iter()
            .flatten()
            .zip(b.score.iter().flatten())
            .all(|(x, y)| rel_close(*x, *y, tol))
}
