//! Candidate trellis and the distance-weighted f-score dynamic program.

use rayon::prelude::*;
use thiserror::Error;

use crate::candidates::{Candidate, Ping};
use crate::geo::geodesic_distance;
use crate::netgraph::{many_to_many_shortest, EdgePosition, NetworkPath, RoadNetwork, RouteError};
use crate::stmatch::{edge_weight, observation_probability, StError, StParams};

#[derive(Debug, Error, PartialEq)]
pub enum TrellisError {
    #[error("trajectory has {found} pings with candidates, at least {required} required")]
    TooFewPings { found: usize, required: usize },
    #[error("slice {0} has no candidates")]
    EmptySlice(usize),
    #[error("edge matrix {index} is {rows}x{cols}, expected {want_rows}x{want_cols}")]
    ShapeMismatch {
        index: usize,
        rows: usize,
        cols: usize,
        want_rows: usize,
        want_cols: usize,
    },
    #[error(transparent)]
    Route(#[from] RouteError),
    #[error("slice {slice}: {source}")]
    Weight { slice: usize, source: StError },
}

/// One ping and its candidates.
#[derive(Debug, Clone, PartialEq)]
pub struct Slice {
    pub ping: Ping,
    pub candidates: Vec<Candidate>,
    /// Observation probability of each candidate.
    pub observation: Vec<f64>,
}

/// Weights between two consecutive slices; `-inf` marks a removed edge.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeMatrix {
    rows: usize,
    cols: usize,
    weights: Vec<f64>,
    paths: Vec<Option<NetworkPath>>,
}

impl EdgeMatrix {
    /// Matrix without cached paths, `weights` in row-major order.
    pub fn from_weights(rows: usize, cols: usize, weights: Vec<f64>) -> Self {
        assert_eq!(weights.len(), rows * cols, "weight count must be rows * cols");
        Self {
            rows,
            cols,
            weights,
            paths: vec![None; rows * cols],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn weight(&self, t: usize, s: usize) -> f64 {
        self.weights[t * self.cols + s]
    }

    pub fn path(&self, t: usize, s: usize) -> Option<&NetworkPath> {
        self.paths[t * self.cols + s].as_ref()
    }

    /// Every entry is `-inf`.
    pub fn is_break(&self) -> bool {
        self.weights.iter().all(|w| *w == f64::NEG_INFINITY)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrellisGraph {
    slices: Vec<Slice>,
    edges: Vec<EdgeMatrix>,
}

impl TrellisGraph {
    /// Assembles a trellis from precomputed parts, checking shapes.
    pub fn from_parts(slices: Vec<Slice>, edges: Vec<EdgeMatrix>) -> Result<Self, TrellisError> {
        if slices.is_empty() {
            return Err(TrellisError::TooFewPings { found: 0, required: 1 });
        }
        if let Some(i) = slices.iter().position(|s| s.candidates.is_empty()) {
            return Err(TrellisError::EmptySlice(i));
        }
        if edges.len() + 1 != slices.len() {
            return Err(TrellisError::ShapeMismatch {
                index: edges.len(),
                rows: 0,
                cols: 0,
                want_rows: slices.len().saturating_sub(1),
                want_cols: 0,
            });
        }
        for (i, m) in edges.iter().enumerate() {
            let (want_rows, want_cols) = (slices[i].candidates.len(), slices[i + 1].candidates.len());
            if m.rows != want_rows || m.cols != want_cols {
                return Err(TrellisError::ShapeMismatch {
                    index: i,
                    rows: m.rows,
                    cols: m.cols,
                    want_rows,
                    want_cols,
                });
            }
        }
        Ok(Self { slices, edges })
    }

    pub fn len(&self) -> usize {
        self.slices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slices.is_empty()
    }

    pub fn slices(&self) -> &[Slice] {
        &self.slices
    }

    pub fn slice(&self, i: usize) -> &Slice {
        &self.slices[i]
    }

    /// Matrix between slice `i` and slice `i + 1`.
    pub fn edges(&self, i: usize) -> &EdgeMatrix {
        &self.edges[i]
    }

    pub fn edge_matrices(&self) -> &[EdgeMatrix] {
        &self.edges
    }

    /// Indices `i` whose matrix into slice `i + 1` is a break.
    pub fn breaks(&self) -> Vec<usize> {
        (0..self.edges.len()).filter(|&i| self.edges[i].is_break()).collect()
    }

    /// Distance from ping `r` to every slice's ping.
    pub fn distances_from(&self, r: usize) -> Vec<f64> {
        let p = self.slices[r].ping.point;
        self.slices.iter().map(|s| geodesic_distance(p, s.ping.point)).collect()
    }
}

/// Builds the trellis from per-ping candidate lists. Pings without
/// candidates are skipped; their original indices are returned.
pub fn build_trellis(
    input: Vec<(Ping, Vec<Candidate>)>,
    net: &RoadNetwork,
    params: &StParams,
    minpings: usize,
) -> Result<(TrellisGraph, Vec<usize>), TrellisError> {
    let mut dropped = Vec::new();
    let mut slices = Vec::with_capacity(input.len());
    for (ping, candidates) in input {
        if candidates.is_empty() {
            dropped.push(ping.index);
            continue;
        }
        let observation = candidates
            .iter()
            .map(|c| observation_probability(c.dist, params))
            .collect();
        slices.push(Slice {
            ping,
            candidates,
            observation,
        });
    }
    let required = minpings.max(1);
    if slices.len() < required {
        return Err(TrellisError::TooFewPings {
            found: slices.len(),
            required,
        });
    }

    let edges = (1..slices.len())
        .into_par_iter()
        .map(|i| edge_matrix(net, &slices[i - 1], &slices[i], params).map_err(|e| match e {
            TrellisError::Weight { source, .. } => TrellisError::Weight { slice: i, source },
            other => other,
        }))
        .collect::<Result<Vec<_>, _>>()?;
    Ok((TrellisGraph { slices, edges }, dropped))
}

fn edge_matrix(net: &RoadNetwork, prev: &Slice, next: &Slice, params: &StParams) -> Result<EdgeMatrix, TrellisError> {
    let from: Vec<EdgePosition> = prev.candidates.iter().map(Candidate::position).collect();
    let to: Vec<EdgePosition> = next.candidates.iter().map(Candidate::position).collect();
    let matrix = many_to_many_shortest(net, &from, &to)?;
    let (rows, cols) = (matrix.rows(), matrix.cols());
    let d = geodesic_distance(prev.ping.point, next.ping.point);
    let dt = next.ping.timestamp - prev.ping.timestamp;
    let paths = matrix.into_flat();
    let mut weights = Vec::with_capacity(paths.len());
    for (n, path) in paths.iter().enumerate() {
        let w = match path {
            None => f64::NEG_INFINITY,
            Some(p) => edge_weight(net, next.candidates[n % cols].dist, Some(p), d, dt, params)
                .map_err(|source| TrellisError::Weight { slice: 0, source })?,
        };
        weights.push(w);
    }
    Ok(EdgeMatrix {
        rows,
        cols,
        weights,
        paths,
    })
}

/// Per-candidate results of one forward pass, indexed `[slice][candidate]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FscoreTable {
    pub f: Vec<Vec<f64>>,
    pub backpointer: Vec<Vec<Option<usize>>>,
    pub segment_id: Vec<Vec<usize>>,
}

/// A candidate index per slice and its total f-score.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredSequence {
    pub sequence: Vec<usize>,
    pub fscore: f64,
}

const NO_PRED: u32 = u32::MAX;

/// Forward-pass state over a window of slices. Positions index the window;
/// consecutive positions that are not consecutive slices restart the DP.
pub(crate) struct Dp<'a> {
    tr: &'a TrellisGraph,
    slices: &'a [usize],
    gammas: &'a [f64],
    offsets: Vec<usize>,
    f: Vec<f64>,
    bp: Vec<u32>,
    mask: Option<(usize, usize)>,
}

impl<'a> Dp<'a> {
    pub(crate) fn new(tr: &'a TrellisGraph, slices: &'a [usize], gammas: &'a [f64]) -> Self {
        debug_assert_eq!(slices.len(), gammas.len());
        let mut offsets = Vec::with_capacity(slices.len() + 1);
        let mut total = 0;
        for &s in slices {
            offsets.push(total);
            total += tr.slices[s].candidates.len();
        }
        offsets.push(total);
        Self {
            tr,
            slices,
            gammas,
            offsets,
            f: vec![0.0; total],
            bp: vec![NO_PRED; total],
            mask: None,
        }
    }

    pub(crate) fn len(&self) -> usize {
        self.slices.len()
    }

    fn width(&self, p: usize) -> usize {
        self.offsets[p + 1] - self.offsets[p]
    }

    fn f_at(&self, p: usize, c: usize) -> f64 {
        self.f[self.offsets[p] + c]
    }

    fn restart(&mut self, p: usize) {
        let obs = &self.tr.slices[self.slices[p]].observation;
        let g = self.gammas[p];
        let o = self.offsets[p];
        for (c, n) in obs.iter().enumerate() {
            self.f[o + c] = g * n;
            self.bp[o + c] = NO_PRED;
        }
    }

    /// Fills position `p` from `p - 1`. With `only` set, the previous
    /// position is restricted to that single candidate. Returns the number
    /// of edges examined.
    fn relax(&mut self, p: usize, only: Option<usize>) -> u64 {
        if p == 0 {
            self.restart(0);
            return 0;
        }
        let (prev, cur) = (self.slices[p - 1], self.slices[p]);
        if cur != prev + 1 {
            self.restart(p);
            return 0;
        }
        let m = &self.tr.edges[prev];
        let g = self.gammas[p];
        let obs = &self.tr.slices[cur].observation;
        let (po, o) = (self.offsets[p - 1], self.offsets[p]);
        let (t_lo, t_hi) = match only {
            Some(j) => (j, j + 1),
            None => (0, m.rows),
        };
        for s in 0..m.cols {
            let mut best = f64::NEG_INFINITY;
            let mut arg = NO_PRED;
            for t in t_lo..t_hi {
                let w = m.weights[t * m.cols + s];
                if w == f64::NEG_INFINITY {
                    continue;
                }
                let v = self.f[po + t] + g * w;
                if arg == NO_PRED || v > best {
                    best = v;
                    arg = t as u32;
                }
            }
            if arg == NO_PRED {
                self.f[o + s] = g * obs[s];
            } else {
                self.f[o + s] = best;
            }
            self.bp[o + s] = arg;
        }
        (m.cols * (t_hi - t_lo)) as u64
    }

    /// Unmasked forward pass over the whole window.
    pub(crate) fn forward(&mut self) -> u64 {
        self.mask = None;
        (0..self.len()).map(|p| self.relax(p, None)).sum()
    }

    /// Forward pass up to and including position `r`.
    pub(crate) fn forward_prefix(&mut self, r: usize) -> u64 {
        self.mask = None;
        (0..=r).map(|p| self.relax(p, None)).sum()
    }

    /// Recomputes every position after `r` with position `r` restricted to
    /// candidate `j`. Requires a prior `forward_prefix(r)`.
    pub(crate) fn forward_suffix_masked(&mut self, r: usize, j: usize) -> u64 {
        self.mask = Some((r, j));
        let mut n = 0;
        for p in r + 1..self.len() {
            n += self.relax(p, if p == r + 1 { Some(j) } else { None });
        }
        n
    }

    fn argmax(&self, p: usize) -> usize {
        if let Some((r, j)) = self.mask {
            if r == p {
                return j;
            }
        }
        let o = self.offsets[p];
        let mut best = 0;
        for c in 1..self.width(p) {
            if self.f[o + c] > self.f[o + best] {
                best = c;
            }
        }
        best
    }

    /// Follows backpointers from the best end candidate, jumping to the
    /// previous position's best candidate at each restart. Writes one
    /// candidate per position into `out` and returns the summed f of every
    /// chain end visited.
    pub(crate) fn traceback(&self, out: &mut Vec<usize>) -> f64 {
        let m = self.len();
        out.clear();
        out.resize(m, 0);
        let mut p = m - 1;
        let mut c = self.argmax(p);
        out[p] = c;
        let mut total = self.f_at(p, c);
        while p > 0 {
            let b = self.bp[self.offsets[p] + c];
            if b == NO_PRED {
                c = self.argmax(p - 1);
                total += self.f_at(p - 1, c);
            } else {
                c = b as usize;
            }
            p -= 1;
            out[p] = c;
        }
        total
    }

    fn table(&self) -> FscoreTable {
        let m = self.len();
        let mut f = Vec::with_capacity(m);
        let mut backpointer = Vec::with_capacity(m);
        let mut segment_id: Vec<Vec<usize>> = Vec::with_capacity(m);
        let mut next_id = 0;
        for p in 0..m {
            let o = self.offsets[p];
            let w = self.width(p);
            f.push(self.f[o..o + w].to_vec());
            let bps: Vec<Option<usize>> = self.bp[o..o + w]
                .iter()
                .map(|&b| (b != NO_PRED).then_some(b as usize))
                .collect();
            let fresh = next_id;
            if bps.iter().any(Option::is_none) {
                next_id += 1;
            }
            let seg = bps
                .iter()
                .map(|b| match b {
                    Some(t) => segment_id[p - 1][*t],
                    None => fresh,
                })
                .collect();
            segment_id.push(seg);
            backpointer.push(bps);
        }
        FscoreTable {
            f,
            backpointer,
            segment_id,
        }
    }
}

fn full_window(tr: &TrellisGraph, ref_ping: usize, g: impl Fn(f64) -> f64) -> (Vec<usize>, Vec<f64>) {
    let slices: Vec<usize> = (0..tr.len()).collect();
    let gammas = tr.distances_from(ref_ping).into_iter().map(g).collect();
    (slices, gammas)
}

/// Distance-weighted forward pass over the whole trellis, with `g` mapping
/// a distance from the reference ping to its weight.
pub fn fscore_forward(tr: &TrellisGraph, ref_ping: usize, g: impl Fn(f64) -> f64) -> FscoreTable {
    let (slices, gammas) = full_window(tr, ref_ping, g);
    let mut dp = Dp::new(tr, &slices, &gammas);
    dp.forward();
    dp.table()
}

/// Optimal sequence of the unconstrained pass.
pub fn best_sequence(tr: &TrellisGraph, ref_ping: usize, g: impl Fn(f64) -> f64) -> ScoredSequence {
    let (slices, gammas) = full_window(tr, ref_ping, g);
    let mut dp = Dp::new(tr, &slices, &gammas);
    dp.forward();
    let mut sequence = Vec::new();
    let fscore = dp.traceback(&mut sequence);
    ScoredSequence { sequence, fscore }
}

/// Optimal sequence through candidate `forced` of slice `ref_ping`.
pub fn constrained_best_sequence(
    tr: &TrellisGraph,
    ref_ping: usize,
    forced: usize,
    g: impl Fn(f64) -> f64,
) -> ScoredSequence {
    assert!(
        forced < tr.slice(ref_ping).candidates.len(),
        "forced candidate out of range"
    );
    let (slices, gammas) = full_window(tr, ref_ping, g);
    let mut dp = Dp::new(tr, &slices, &gammas);
    dp.forward_prefix(ref_ping);
    dp.forward_suffix_masked(ref_ping, forced);
    let mut sequence = Vec::new();
    let fscore = dp.traceback(&mut sequence);
    ScoredSequence { sequence, fscore }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::GeoPoint;

    fn toy(weights: &[&[f64]], widths: &[usize]) -> TrellisGraph {
        let base = GeoPoint::new(0.0, 0.0);
        let slices = widths
            .iter()
            .enumerate()
            .map(|(i, &w)| Slice {
                ping: Ping::new(i, base.offset(0.0, 100.0 * i as f64), i as f64),
                candidates: (0..w)
                    .map(|j| Candidate {
                        ping_index: i,
                        candidate_index: j,
                        piece_id: j as u64 + 1,
                        foot: base,
                        frac: 0.0,
                        dist: 0.0,
                    })
                    .collect(),
                observation: (0..w).map(|j| 1.0 / (j as f64 + 1.0)).collect(),
            })
            .collect();
        let edges = weights
            .iter()
            .enumerate()
            .map(|(i, w)| EdgeMatrix::from_weights(widths[i], widths[i + 1], w.to_vec()))
            .collect();
        TrellisGraph::from_parts(slices, edges).unwrap()
    }

    const NI: f64 = f64::NEG_INFINITY;

    #[test]
    fn single_slice_is_weighted_observation() {
        let tr = toy(&[], &[2]);
        let t = fscore_forward(&tr, 0, |_| 0.5);
        assert_eq!(t.f, vec![vec![0.5, 0.25]]);
        assert_eq!(t.backpointer, vec![vec![None, None]]);
    }

    #[test]
    fn viterbi_without_breaks() {
        let tr = toy(&[&[0.1, 0.9, 0.5, 0.2], &[0.3, 0.3, 0.8, 0.1]], &[2, 2, 2]);
        let t = fscore_forward(&tr, 0, |_| 1.0);
        assert_eq!(t.f[1], vec![1.0 + 0.1, 1.0 + 0.9]);
        assert_eq!(t.backpointer[1], vec![Some(0), Some(0)]);
        assert_eq!(t.f[2], vec![1.9 + 0.8, 1.9 + 0.1]);
        let best = best_sequence(&tr, 0, |_| 1.0);
        assert_eq!(best.sequence, vec![0, 1, 0]);
        assert!((best.fscore - 2.7).abs() < 1e-12);
    }

    #[test]
    fn break_splits_segments_and_sums_optima() {
        let tr = toy(&[&[0.2, 0.4, 0.1, 0.3], &[NI, NI, NI, NI]], &[2, 2, 2]);
        let t = fscore_forward(&tr, 0, |_| 1.0);
        let seg: Vec<usize> = t.segment_id.iter().map(|s| s[0]).collect();
        assert_eq!(seg, vec![0, 0, 1]);
        assert_eq!(t.backpointer[2], vec![None, None]);
        let best = best_sequence(&tr, 0, |_| 1.0);
        assert_eq!(best.sequence, vec![0, 1, 0]);
        assert!((best.fscore - (1.4 + 1.0)).abs() < 1e-12);
    }

    #[test]
    fn forcing_optimum_reproduces_unconstrained() {
        let tr = toy(&[&[0.1, 0.9, 0.5, 0.2], &[0.3, 0.3, 0.8, 0.1]], &[2, 2, 2]);
        let g = |d: f64| (-(d / 500.0).powi(2)).exp();
        let best = best_sequence(&tr, 1, g);
        for j in 0..2 {
            assert!(constrained_best_sequence(&tr, 1, j, g).fscore <= best.fscore + 1e-12);
        }
        assert_eq!(constrained_best_sequence(&tr, 1, best.sequence[1], g), best);
    }

    #[test]
    fn forced_candidate_is_kept() {
        let tr = toy(&[&[0.1, 0.9, 0.5, 0.2], &[0.3, 0.3, 0.8, 0.1]], &[2, 2, 2]);
        for r in 0..3 {
            for j in 0..2 {
                assert_eq!(constrained_best_sequence(&tr, r, j, |_| 1.0).sequence[r], j);
            }
        }
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let base = GeoPoint::new(0.0, 0.0);
        let slice = |w: usize| Slice {
            ping: Ping::new(0, base, 0.0),
            candidates: vec![
                Candidate {
                    ping_index: 0,
                    candidate_index: 0,
                    piece_id: 1,
                    foot: base,
                    frac: 0.0,
                    dist: 0.0,
                };
                w
            ],
            observation: vec![1.0; w],
        };
        let err = TrellisGraph::from_parts(vec![slice(2), slice(1)], vec![EdgeMatrix::from_weights(1, 1, vec![0.0])]);
        assert!(matches!(err, Err(TrellisError::ShapeMismatch { index: 0, .. })));
    }
}
