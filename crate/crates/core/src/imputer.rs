//! Route reconstruction between consecutive matched candidates.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::candidates::Candidate;
use crate::geo::GeoPoint;
use crate::netgraph::{shortest_path, NetworkPath, RoadNetwork, RouteError};
use crate::trellis::TrellisGraph;

#[derive(Debug, Error, PartialEq)]
pub enum ImputeError {
    #[error("a route needs at least 2 anchors, got {0}")]
    TooFewAnchors(usize),
    #[error("selection has {got} entries for a trellis of {want} slices")]
    SelectionLength { got: usize, want: usize },
    #[error(transparent)]
    Route(#[from] RouteError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Leg {
    Path(NetworkPath),
    /// No network path joins the two anchors.
    Gap,
}

impl Leg {
    pub fn path(&self) -> Option<&NetworkPath> {
        match self {
            Leg::Path(p) => Some(p),
            Leg::Gap => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchedRoute {
    pub anchors: Vec<Candidate>,
    /// One leg per consecutive anchor pair.
    pub legs: Vec<Leg>,
    pub total_length: f64,
    /// Connected polylines; a new run starts after every gap.
    pub runs: Vec<Vec<GeoPoint>>,
    /// Distinct network nodes passed by each leg, `None` for gaps.
    pub leg_node_counts: Vec<Option<usize>>,
}

impl MatchedRoute {
    pub fn gap_count(&self) -> usize {
        self.legs.iter().filter(|l| matches!(l, Leg::Gap)).count()
    }

    /// Piece ids covered by the route, in order, with consecutive repeats
    /// and zero-length touches removed.
    pub fn piece_sequence(&self) -> Vec<u64> {
        let mut out: Vec<u64> = Vec::new();
        for (i, leg) in self.legs.iter().enumerate() {
            if i == 0 {
                out.push(self.anchors[0].piece_id);
            }
            if let Leg::Path(p) = leg {
                for step in &p.steps {
                    if step.traversed_m > 0.0 && out.last() != Some(&step.piece_id) {
                        out.push(step.piece_id);
                    }
                }
            }
        }
        out
    }
}

fn assemble(net: &RoadNetwork, anchors: Vec<Candidate>, legs: Vec<Leg>) -> MatchedRoute {
    let mut runs: Vec<Vec<GeoPoint>> = vec![vec![anchors[0].foot]];
    let mut total_length = 0.0;
    let mut leg_node_counts = Vec::with_capacity(legs.len());
    for (i, leg) in legs.iter().enumerate() {
        match leg {
            Leg::Path(p) => {
                total_length += p.total_length;
                leg_node_counts.push(Some(p.distinct_nodes()));
                let run = runs.last_mut().expect("at least one run");
                for pt in net.path_geometry(p) {
                    if run.last() != Some(&pt) {
                        run.push(pt);
                    }
                }
            }
            Leg::Gap => {
                leg_node_counts.push(None);
                runs.push(vec![anchors[i + 1].foot]);
            }
        }
    }
    MatchedRoute {
        anchors,
        legs,
        total_length,
        runs,
        leg_node_counts,
    }
}

/// Joins consecutive anchors by shortest network paths.
pub fn impute_route(net: &RoadNetwork, anchors: &[Candidate]) -> Result<MatchedRoute, ImputeError> {
    if anchors.len() < 2 {
        return Err(ImputeError::TooFewAnchors(anchors.len()));
    }
    let legs = anchors
        .windows(2)
        .map(|w| match shortest_path(net, &w[0].position(), &w[1].position()) {
            Ok(p) => Ok(Leg::Path(p)),
            Err(RouteError::Unreachable) => Ok(Leg::Gap),
            Err(e) => Err(ImputeError::from(e)),
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(assemble(net, anchors.to_vec(), legs))
}

/// Same as [`impute_route`] for a per-slice selection, reusing the paths
/// stored in the trellis edges.
pub fn impute_route_cached(
    net: &RoadNetwork,
    tr: &TrellisGraph,
    selection: &[usize],
) -> Result<MatchedRoute, ImputeError> {
    if selection.len() != tr.len() {
        return Err(ImputeError::SelectionLength {
            got: selection.len(),
            want: tr.len(),
        });
    }
    if selection.len() < 2 {
        return Err(ImputeError::TooFewAnchors(selection.len()));
    }
    let anchors: Vec<Candidate> = selection
        .iter()
        .enumerate()
        .map(|(i, &c)| tr.slice(i).candidates[c])
        .collect();
    let legs = (1..selection.len())
        .map(|i| match tr.edges(i - 1).path(selection[i - 1], selection[i]) {
            Some(p) => Leg::Path(p.clone()),
            None => Leg::Gap,
        })
        .collect();
    Ok(assemble(net, anchors, legs))
}
