//! Grid index over road pieces and per-ping candidate generation.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::{project_point_to_segment, BoundingBox, GeoPoint, METERS_PER_DEGREE};
use crate::netgraph::{EdgePosition, RoadNetwork};

/// A single GPS fix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ping {
    /// Position within its trajectory, starting at 0.
    pub index: usize,
    pub point: GeoPoint,
    /// Seconds since the epoch.
    pub timestamp: f64,
    /// Reported speed in m/s.
    pub speed: Option<f64>,
    /// Reported horizontal accuracy in meters.
    pub accuracy: Option<f64>,
}

impl Ping {
    pub fn new(index: usize, point: GeoPoint, timestamp: f64) -> Self {
        Self {
            index,
            point,
            timestamp,
            speed: None,
            accuracy: None,
        }
    }
}

/// Projection of a ping onto a nearby road piece.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub ping_index: usize,
    /// Rank among the ping's candidates, by ascending distance.
    pub candidate_index: usize,
    pub piece_id: u64,
    pub foot: GeoPoint,
    pub frac: f64,
    /// Distance from the ping to `foot`, in meters.
    pub dist: f64,
}

impl Candidate {
    pub fn position(&self) -> EdgePosition {
        EdgePosition {
            piece_id: self.piece_id,
            frac: self.frac,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum CandidateError {
    #[error("no road piece within {alpha} m of ping {ping_index}")]
    NoCandidates { ping_index: usize, alpha: f64 },
    #[error("invalid candidate parameters: alpha={alpha}, k={k}")]
    InvalidParams { alpha: f64, k: usize },
}

/// Uniform lat/lon grid over piece bounding boxes.
#[derive(Debug, Clone)]
pub struct SpatialIndex {
    cell_lat: f64,
    cell_lon: f64,
    cells: HashMap<(i64, i64), Vec<u32>>,
}

impl SpatialIndex {
    fn cell_of(&self, p: GeoPoint) -> (i64, i64) {
        (
            (p.lat / self.cell_lat).floor() as i64,
            (p.lon / self.cell_lon).floor() as i64,
        )
    }

    pub fn cell_count(&self) -> usize {
        self.cells.len()
    }

    /// Indices (into `RoadNetwork::pieces`) of every piece whose bounding
    /// box may come within `radius_m` of `p`. Sorted, without duplicates.
    pub fn query(&self, p: GeoPoint, radius_m: f64) -> Vec<usize> {
        let bb = BoundingBox::around(p, radius_m);
        let (r0, c0) = self.cell_of(bb.min);
        let (r1, c1) = self.cell_of(bb.max);
        let mut out = Vec::new();
        for r in r0..=r1 {
            for c in c0..=c1 {
                if let Some(v) = self.cells.get(&(r, c)) {
                    out.extend(v.iter().map(|&i| i as usize));
                }
            }
        }
        out.sort_unstable();
        out.dedup();
        out
    }
}

/// Indexes every piece of `net` into square cells at least `cell_size_m`
/// meters wide.
pub fn build_index(net: &RoadNetwork, cell_size_m: f64) -> SpatialIndex {
    let cell_size_m = if cell_size_m.is_finite() && cell_size_m > 0.0 {
        cell_size_m
    } else {
        100.0
    };
    let max_abs_lat = net
        .pieces()
        .iter()
        .flat_map(|p| [p.start.lat.abs(), p.end.lat.abs()])
        .fold(0.0f64, f64::max)
        .min(89.0);
    let cell_lat = cell_size_m / METERS_PER_DEGREE;
    let cell_lon = cell_size_m / (METERS_PER_DEGREE * max_abs_lat.to_radians().cos());
    let mut index = SpatialIndex {
        cell_lat,
        cell_lon,
        cells: HashMap::new(),
    };
    for (i, piece) in net.pieces().iter().enumerate() {
        let bb = BoundingBox::new(piece.start, piece.end);
        let (r0, c0) = index.cell_of(bb.min);
        let (r1, c1) = index.cell_of(bb.max);
        for r in r0..=r1 {
            for c in c0..=c1 {
                index.cells.entry((r, c)).or_default().push(i as u32);
            }
        }
    }
    index
}

/// Up to `k` projections of `ping` onto pieces within `alpha` meters,
/// nearest first.
pub fn generate_candidates(
    ping: &Ping,
    index: &SpatialIndex,
    net: &RoadNetwork,
    alpha: f64,
    k: usize,
) -> Result<Vec<Candidate>, CandidateError> {
    if !(alpha > 0.0) || k == 0 {
        return Err(CandidateError::InvalidParams { alpha, k });
    }
    let pieces = net.pieces();
    let mut found: Vec<(Candidate, i64)> = Vec::new();
    for i in index.query(ping.point, alpha) {
        let piece = &pieces[i];
        let Ok(pr) = project_point_to_segment(ping.point, piece.start, piece.end) else {
            continue;
        };
        if pr.dist > alpha {
            continue;
        }
        found.push((
            Candidate {
                ping_index: ping.index,
                candidate_index: 0,
                piece_id: piece.piece_id,
                foot: pr.foot,
                frac: pr.frac,
                dist: pr.dist,
            },
            piece.way_id,
        ));
    }

    // Consecutive pieces of one way meet at a shared node; a projection onto
    // that node shows up once per piece.
    found.sort_by_key(|c| c.0.piece_id);
    let mut kept: Vec<Candidate> = Vec::with_capacity(found.len());
    let mut seen: Vec<(i64, GeoPoint)> = Vec::new();
    for (c, way) in found {
        if seen.iter().any(|&(w, f)| w == way && f == c.foot) {
            continue;
        }
        seen.push((way, c.foot));
        kept.push(c);
    }

    if kept.is_empty() {
        return Err(CandidateError::NoCandidates {
            ping_index: ping.index,
            alpha,
        });
    }
    kept.sort_by(|a, b| a.dist.total_cmp(&b.dist).then(a.piece_id.cmp(&b.piece_id)));
    kept.truncate(k);
    for (j, c) in kept.iter_mut().enumerate() {
        c.candidate_index = j;
    }
    Ok(kept)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::geodesic_distance;
    use crate::netbuild::RoadPiece;
    use crate::netgraph::build_graph;
    use std::collections::BTreeMap;

    fn piece(id: u64, way: i64, a: GeoPoint, b: GeoPoint) -> RoadPiece {
        RoadPiece {
            piece_id: id,
            way_id: way,
            start: a,
            end: b,
            length_m: geodesic_distance(a, b),
            highway: "residential".into(),
            maxspeed_kmh: Some(30.0),
            maxspeed_imputed: false,
            oneway: Some(false),
            service: None,
            tags: BTreeMap::new(),
        }
    }

    fn origin() -> GeoPoint {
        GeoPoint::new(45.0, 9.0)
    }

    #[test]
    fn single_piece_is_indexed() {
        let o = origin();
        let net = build_graph(vec![piece(1, 1, o, o.offset(0.0, 300.0))]).unwrap();
        let idx = build_index(&net, 100.0);
        assert!(idx.cell_count() >= 1);
        let mid = o.offset(0.0, 150.0);
        assert_eq!(idx.query(mid, 300.0), vec![0]);
    }

    #[test]
    fn ping_on_piece_has_zero_distance() {
        let o = origin();
        let net = build_graph(vec![piece(1, 1, o, o.offset(0.0, 300.0))]).unwrap();
        let idx = build_index(&net, 100.0);
        let ping = Ping::new(0, o.offset(0.0, 120.0), 0.0);
        let c = generate_candidates(&ping, &idx, &net, 100.0, 5).unwrap();
        assert_eq!(c.len(), 1);
        assert!(c[0].dist < 1e-3);
        assert_eq!(c[0].candidate_index, 0);
    }

    #[test]
    fn ties_rank_lower_piece_id_first() {
        let o = origin();
        let net = build_graph(vec![
            piece(7, 1, o.offset(20.0, 0.0), o.offset(20.0, 200.0)),
            piece(3, 2, o.offset(-20.0, 0.0), o.offset(-20.0, 200.0)),
        ])
        .unwrap();
        let idx = build_index(&net, 100.0);
        // Equatorward offsets at this latitude are not exactly symmetric, so
        // place the ping halfway in latitude.
        let lat = (net.pieces()[0].start.lat + net.pieces()[1].start.lat) / 2.0;
        let ping = Ping::new(0, GeoPoint::new(lat, o.offset(0.0, 100.0).lon), 0.0);
        let c = generate_candidates(&ping, &idx, &net, 100.0, 5).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c[0].dist, c[1].dist);
        assert_eq!(c[0].piece_id, 3);
    }

    #[test]
    fn nearest_only_with_k_one() {
        let o = origin();
        let net = build_graph(vec![
            piece(1, 1, o.offset(30.0, -100.0), o.offset(30.0, 100.0)),
            piece(2, 2, o.offset(-50.0, -100.0), o.offset(-50.0, 100.0)),
        ])
        .unwrap();
        let idx = build_index(&net, 100.0);
        let c = generate_candidates(&Ping::new(0, o, 0.0), &idx, &net, 100.0, 1).unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].piece_id, 1);
        assert!((c[0].dist - 30.0).abs() < 0.05);
    }

    #[test]
    fn shared_node_of_one_way_is_deduplicated() {
        let o = origin();
        let mid = o.offset(0.0, 100.0);
        let net = build_graph(vec![
            piece(1, 9, o, mid),
            piece(2, 9, mid, o.offset(-100.0, 100.0)),
        ])
        .unwrap();
        let idx = build_index(&net, 100.0);
        // North-east of the corner: both pieces clamp to the shared node.
        let ping = Ping::new(0, mid.offset(10.0, 10.0), 0.0);
        let c = generate_candidates(&ping, &idx, &net, 100.0, 5).unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].piece_id, 1);
    }

    #[test]
    fn far_ping_has_no_candidates() {
        let o = origin();
        let net = build_graph(vec![piece(1, 1, o, o.offset(0.0, 100.0))]).unwrap();
        let idx = build_index(&net, 100.0);
        let err = generate_candidates(&Ping::new(4, o.offset(500.0, 0.0), 0.0), &idx, &net, 100.0, 5);
        assert_eq!(
            err,
            Err(CandidateError::NoCandidates {
                ping_index: 4,
                alpha: 100.0
            })
        );
    }
}
