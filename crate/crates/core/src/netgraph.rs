//! Directed routing graph over road pieces.
//!
//! Piece endpoints are snapped to a 1e-6 degree lattice to form nodes. Every
//! piece contributes a forward arc, and two-way pieces an opposed arc too.
//! Shortest paths are length-weighted and run between positions *on* pieces
//! (a piece plus a fraction along it), so the first and last steps of a path
//! are usually partial.

use std::cell::RefCell;
use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::{interpolate, GeoPoint};
use crate::netbuild::RoadPiece;

pub type NodeId = u32;

const SNAP_SCALE: f64 = 1e6;

#[derive(Debug, Error, PartialEq)]
pub enum GraphError {
    #[error("road network has no pieces")]
    EmptyNetwork,
    #[error("piece {0} appears more than once")]
    DuplicatePiece(u64),
    #[error("piece {0} has no speed limit")]
    MissingSpeed(u64),
    #[error("piece {0} is degenerate")]
    DegeneratePiece(u64),
}

#[derive(Debug, Error, PartialEq)]
pub enum RouteError {
    #[error("piece {0} is not part of the network")]
    UnknownPiece(u64),
    #[error("no path between the two positions")]
    Unreachable,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Direction {
    /// From the piece's `start` towards its `end`.
    Forward,
    Backward,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Arc {
    pub from: NodeId,
    pub to: NodeId,
    pub piece: usize,
    pub direction: Direction,
    pub length: f64,
}

/// A position on the network: a piece and an arc-length fraction along it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdgePosition {
    pub piece_id: u64,
    pub frac: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathStep {
    pub piece_id: u64,
    pub direction: Direction,
    pub traversed_m: f64,
}

/// A route between two on-piece positions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkPath {
    pub steps: Vec<PathStep>,
    pub total_length: f64,
    pub entry_frac: f64,
    pub exit_frac: f64,
    /// Network nodes passed through, in order.
    pub nodes: Vec<NodeId>,
}

impl NetworkPath {
    fn from_steps(steps: Vec<PathStep>, entry_frac: f64, exit_frac: f64, nodes: Vec<NodeId>) -> Self {
        let total_length = steps.iter().fold(0.0, |acc, s| acc + s.traversed_m);
        Self {
            steps,
            total_length,
            entry_frac,
            exit_frac,
            nodes,
        }
    }

    /// Number of distinct network nodes the path passes through.
    pub fn distinct_nodes(&self) -> usize {
        let mut n = self.nodes.clone();
        n.sort_unstable();
        n.dedup();
        n.len()
    }
}

#[derive(Debug, Clone)]
pub struct RoadNetwork {
    pieces: Vec<RoadPiece>,
    piece_index: HashMap<u64, usize>,
    piece_nodes: Vec<(NodeId, NodeId)>,
    node_coords: Vec<GeoPoint>,
    arcs: Vec<Arc>,
    out_offsets: Vec<usize>,
    out_arcs: Vec<u32>,
    component: Vec<u32>,
    component_count: usize,
}

fn snap_key(p: GeoPoint) -> (i64, i64) {
    (
        (p.lat * SNAP_SCALE).round() as i64,
        (p.lon * SNAP_SCALE).round() as i64,
    )
}

fn find(parent: &mut [u32], mut x: u32) -> u32 {
    while parent[x as usize] != x {
        let next = parent[x as usize];
        parent[x as usize] = parent[next as usize];
        x = next;
    }
    x
}

/// Builds the routing graph. Node ids follow first appearance when pieces
/// are visited in piece-id order.
pub fn build_graph(mut pieces: Vec<RoadPiece>) -> Result<RoadNetwork, GraphError> {
    if pieces.is_empty() {
        return Err(GraphError::EmptyNetwork);
    }
    pieces.sort_by_key(|p| p.piece_id);

    let mut piece_index = HashMap::with_capacity(pieces.len());
    let mut node_ids: HashMap<(i64, i64), NodeId> = HashMap::new();
    let mut node_coords = Vec::new();
    let mut piece_nodes = Vec::with_capacity(pieces.len());
    let mut arcs = Vec::with_capacity(pieces.len() * 2);

    for (idx, p) in pieces.iter().enumerate() {
        if piece_index.insert(p.piece_id, idx).is_some() {
            return Err(GraphError::DuplicatePiece(p.piece_id));
        }
        match p.maxspeed_kmh {
            Some(v) if v > 0.0 => {}
            _ => return Err(GraphError::MissingSpeed(p.piece_id)),
        }
        if !(p.length_m > 0.0) {
            return Err(GraphError::DegeneratePiece(p.piece_id));
        }
        let mut node_of = |pt: GeoPoint| {
            let next = node_coords.len() as NodeId;
            *node_ids.entry(snap_key(pt)).or_insert_with(|| {
                let (lat, lon) = snap_key(pt);
                node_coords.push(GeoPoint::new(lat as f64 / SNAP_SCALE, lon as f64 / SNAP_SCALE));
                next
            })
        };
        let (a, b) = (node_of(p.start), node_of(p.end));
        piece_nodes.push((a, b));
        arcs.push(Arc {
            from: a,
            to: b,
            piece: idx,
            direction: Direction::Forward,
            length: p.length_m,
        });
        if !p.is_oneway() {
            arcs.push(Arc {
                from: b,
                to: a,
                piece: idx,
                direction: Direction::Backward,
                length: p.length_m,
            });
        }
    }

    let n = node_coords.len();
    let mut out_offsets = vec![0usize; n + 1];
    for arc in &arcs {
        out_offsets[arc.from as usize + 1] += 1;
    }
    for i in 0..n {
        out_offsets[i + 1] += out_offsets[i];
    }
    let mut fill = out_offsets.clone();
    let mut out_arcs = vec![0u32; arcs.len()];
    for (i, arc) in arcs.iter().enumerate() {
        out_arcs[fill[arc.from as usize]] = i as u32;
        fill[arc.from as usize] += 1;
    }

    let mut parent: Vec<u32> = (0..n as u32).collect();
    for arc in &arcs {
        let (ra, rb) = (find(&mut parent, arc.from), find(&mut parent, arc.to));
        if ra != rb {
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            parent[hi as usize] = lo;
        }
    }
    let mut labels: HashMap<u32, u32> = HashMap::new();
    let mut component = Vec::with_capacity(n);
    for v in 0..n as u32 {
        let root = find(&mut parent, v);
        let next = labels.len() as u32;
        component.push(*labels.entry(root).or_insert(next));
    }

    Ok(RoadNetwork {
        pieces,
        piece_index,
        piece_nodes,
        node_coords,
        arcs,
        out_offsets,
        out_arcs,
        component,
        component_count: labels.len(),
    })
}

impl RoadNetwork {
    pub fn pieces(&self) -> &[RoadPiece] {
        &self.pieces
    }

    pub fn piece(&self, piece_id: u64) -> Option<&RoadPiece> {
        self.piece_index.get(&piece_id).map(|&i| &self.pieces[i])
    }

    pub fn piece_idx(&self, piece_id: u64) -> Option<usize> {
        self.piece_index.get(&piece_id).copied()
    }

    pub fn node_count(&self) -> usize {
        self.node_coords.len()
    }

    pub fn arc_count(&self) -> usize {
        self.arcs.len()
    }

    pub fn arcs(&self) -> &[Arc] {
        &self.arcs
    }

    pub fn node_coord(&self, node: NodeId) -> GeoPoint {
        self.node_coords[node as usize]
    }

    /// Endpoint nodes `(start, end)` of a piece.
    pub fn piece_nodes(&self, piece_id: u64) -> Option<(NodeId, NodeId)> {
        self.piece_idx(piece_id).map(|i| self.piece_nodes[i])
    }

    pub fn component_count(&self) -> usize {
        self.component_count
    }

    pub fn component_of_node(&self, node: NodeId) -> u32 {
        self.component[node as usize]
    }

    pub fn component_of_piece(&self, piece_id: u64) -> Option<u32> {
        self.piece_nodes(piece_id).map(|(a, _)| self.component[a as usize])
    }

    pub fn out_arcs(&self, node: NodeId) -> impl Iterator<Item = &Arc> + '_ {
        let range = self.out_offsets[node as usize]..self.out_offsets[node as usize + 1];
        self.out_arcs[range].iter().map(|&i| &self.arcs[i as usize])
    }

    /// Polyline of a path, from the entry position to the exit position.
    pub fn path_geometry(&self, path: &NetworkPath) -> Vec<GeoPoint> {
        let mut pts: Vec<GeoPoint> = Vec::with_capacity(path.steps.len() + 2);
        let push = |p: GeoPoint, pts: &mut Vec<GeoPoint>| {
            if pts.last() != Some(&p) {
                pts.push(p);
            }
        };
        let last = path.steps.len().saturating_sub(1);
        for (i, step) in path.steps.iter().enumerate() {
            let Some(piece) = self.piece(step.piece_id) else {
                continue;
            };
            let (entry_pt, exit_pt) = match step.direction {
                Direction::Forward => (piece.start, piece.end),
                Direction::Backward => (piece.end, piece.start),
            };
            let from = if i == 0 {
                interpolate(piece.start, piece.end, path.entry_frac)
            } else {
                entry_pt
            };
            let to = if i == last {
                interpolate(piece.start, piece.end, path.exit_frac)
            } else {
                exit_pt
            };
            push(from, &mut pts);
            push(to, &mut pts);
        }
        pts
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Pred {
    None,
    Source,
    Arc(u32),
}

#[derive(Debug, Clone, Copy)]
struct HeapEntry {
    cost: f64,
    node: NodeId,
}

impl PartialEq for HeapEntry {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for HeapEntry {}

impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for HeapEntry {
    // Min-heap on (cost, node).
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .cost
            .total_cmp(&self.cost)
            .then_with(|| other.node.cmp(&self.node))
    }
}

/// Reusable Dijkstra buffers; only touched slots are reset between runs.
#[derive(Default)]
struct SearchSpace {
    dist: Vec<f64>,
    pred: Vec<Pred>,
    settled: Vec<bool>,
    target: Vec<bool>,
    dirty: Vec<bool>,
    touched: Vec<NodeId>,
    heap: BinaryHeap<HeapEntry>,
}

impl SearchSpace {
    fn prepare(&mut self, n: usize) {
        if self.dist.len() < n {
            self.dist.resize(n, f64::INFINITY);
            self.pred.resize(n, Pred::None);
            self.settled.resize(n, false);
            self.target.resize(n, false);
            self.dirty.resize(n, false);
        }
        for &v in &self.touched {
            let v = v as usize;
            self.dist[v] = f64::INFINITY;
            self.pred[v] = Pred::None;
            self.settled[v] = false;
            self.target[v] = false;
            self.dirty[v] = false;
        }
        self.touched.clear();
        self.heap.clear();
    }

    fn touch(&mut self, v: NodeId) {
        if !self.dirty[v as usize] {
            self.dirty[v as usize] = true;
            self.touched.push(v);
        }
    }

    /// Multi-source Dijkstra that stops once every target is settled or the
    /// frontier exceeds `cap`.
    fn run(&mut self, net: &RoadNetwork, sources: &[(NodeId, f64)], targets: &[NodeId], cap: Option<f64>) {
        self.prepare(net.node_count());
        let mut remaining = 0usize;
        for &t in targets {
            self.touch(t);
            if !self.target[t as usize] {
                self.target[t as usize] = true;
                remaining += 1;
            }
        }
        for &(s, cost) in sources {
            self.touch(s);
            if cost < self.dist[s as usize] {
                self.dist[s as usize] = cost;
                self.pred[s as usize] = Pred::Source;
                self.heap.push(HeapEntry { cost, node: s });
            }
        }
        while remaining > 0 {
            let Some(HeapEntry { cost, node }) = self.heap.pop() else {
                break;
            };
            let u = node as usize;
            if self.settled[u] || cost > self.dist[u] {
                continue;
            }
            if cap.is_some_and(|c| cost > c) {
                break;
            }
            self.settled[u] = true;
            if self.target[u] {
                remaining -= 1;
            }
            let range = net.out_offsets[u]..net.out_offsets[u + 1];
            for &ai in &net.out_arcs[range] {
                let arc = &net.arcs[ai as usize];
                let v = arc.to as usize;
                if self.settled[v] {
                    continue;
                }
                let nd = cost + arc.length;
                if nd < self.dist[v] {
                    self.touch(arc.to);
                    self.dist[v] = nd;
                    self.pred[v] = Pred::Arc(ai);
                    self.heap.push(HeapEntry { cost: nd, node: arc.to });
                }
            }
        }
    }

    fn settled_dist(&self, v: NodeId) -> Option<f64> {
        self.settled[v as usize].then(|| self.dist[v as usize])
    }

    /// Arcs from a source to `v`, in travel order, plus the source node.
    fn arcs_to(&self, v: NodeId, net: &RoadNetwork) -> (NodeId, Vec<u32>) {
        let mut arcs = Vec::new();
        let mut cur = v;
        while let Pred::Arc(ai) = self.pred[cur as usize] {
            arcs.push(ai);
            cur = net.arcs[ai as usize].from;
        }
        arcs.reverse();
        (cur, arcs)
    }
}

thread_local! {
    static SPACE: RefCell<SearchSpace> = RefCell::new(SearchSpace::default());
}

/// Resolved position with its piece geometry.
#[derive(Debug, Clone, Copy)]
struct Resolved {
    pos: EdgePosition,
    idx: usize,
    start: NodeId,
    end: NodeId,
    length: f64,
    two_way: bool,
}

impl RoadNetwork {
    fn resolve(&self, pos: &EdgePosition) -> Result<Resolved, RouteError> {
        let idx = self
            .piece_idx(pos.piece_id)
            .ok_or(RouteError::UnknownPiece(pos.piece_id))?;
        let (start, end) = self.piece_nodes[idx];
        let p = &self.pieces[idx];
        Ok(Resolved {
            pos: EdgePosition {
                piece_id: pos.piece_id,
                frac: pos.frac.clamp(0.0, 1.0),
            },
            idx,
            start,
            end,
            length: p.length_m,
            two_way: !p.is_oneway(),
        })
    }
}

/// Sources for leaving `from`: its end node (forward) and, on two-way
/// pieces, its start node (backward).
fn exit_sources(from: &Resolved) -> Vec<(NodeId, f64)> {
    let mut s = vec![(from.end, (1.0 - from.pos.frac) * from.length)];
    if from.two_way {
        s.push((from.start, from.pos.frac * from.length));
    }
    s
}

fn entry_nodes(to: &Resolved) -> Vec<NodeId> {
    if to.two_way {
        vec![to.start, to.end]
    } else {
        vec![to.start]
    }
}

fn direct_path(from: &Resolved, to: &Resolved) -> Option<NetworkPath> {
    if from.idx != to.idx {
        return None;
    }
    let (fa, fb) = (from.pos.frac, to.pos.frac);
    let direction = if fb >= fa {
        Direction::Forward
    } else if from.two_way {
        Direction::Backward
    } else {
        return None;
    };
    let step = PathStep {
        piece_id: from.pos.piece_id,
        direction,
        traversed_m: (fb - fa).abs() * from.length,
    };
    Some(NetworkPath::from_steps(vec![step], fa, fb, Vec::new()))
}

/// Best route to `to` given a finished search from `from`.
fn route_to(net: &RoadNetwork, space: &SearchSpace, from: &Resolved, to: &Resolved) -> Option<NetworkPath> {
    let best = direct_path(from, to);
    let via_start = space
        .settled_dist(to.start)
        .map(|d| (d + to.pos.frac * to.length, to.start, Direction::Forward));
    let via_end = if to.two_way {
        space
            .settled_dist(to.end)
            .map(|d| (d + (1.0 - to.pos.frac) * to.length, to.end, Direction::Backward))
    } else {
        None
    };
    let mut choice: Option<(f64, NodeId, Direction)> = None;
    for c in [via_start, via_end].into_iter().flatten() {
        if choice.is_none_or(|b| c.0 < b.0) {
            choice = Some(c);
        }
    }
    let Some((cost, node, last_dir)) = choice else {
        return best;
    };
    if best.as_ref().is_some_and(|b| b.total_length <= cost) {
        return best;
    }

    let (source, arcs) = space.arcs_to(node, net);
    let forward_seed = (1.0 - from.pos.frac) * from.length;
    let backward_seed = from.pos.frac * from.length;
    let first_dir = if source == from.end
        && (source != from.start || !from.two_way || forward_seed <= backward_seed)
    {
        Direction::Forward
    } else {
        Direction::Backward
    };
    let first = PathStep {
        piece_id: from.pos.piece_id,
        direction: first_dir,
        traversed_m: match first_dir {
            Direction::Forward => (1.0 - from.pos.frac) * from.length,
            Direction::Backward => from.pos.frac * from.length,
        },
    };
    let mut steps = Vec::with_capacity(arcs.len() + 2);
    let mut nodes = Vec::with_capacity(arcs.len() + 1);
    steps.push(first);
    nodes.push(source);
    for &ai in &arcs {
        let arc = &net.arcs[ai as usize];
        steps.push(PathStep {
            piece_id: net.pieces[arc.piece].piece_id,
            direction: arc.direction,
            traversed_m: arc.length,
        });
        nodes.push(arc.to);
    }
    steps.push(PathStep {
        piece_id: to.pos.piece_id,
        direction: last_dir,
        traversed_m: match last_dir {
            Direction::Forward => to.pos.frac * to.length,
            Direction::Backward => (1.0 - to.pos.frac) * to.length,
        },
    });
    let path = NetworkPath::from_steps(steps, from.pos.frac, to.pos.frac, nodes);
    Some(path)
}

/// Search options shared by the routing entry points.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RouteOptions {
    /// Stop expanding once the frontier is farther than this many meters.
    pub radius_cap: Option<f64>,
}

/// Shortest route between two on-piece positions, respecting direction.
pub fn shortest_path(net: &RoadNetwork, from: &EdgePosition, to: &EdgePosition) -> Result<NetworkPath, RouteError> {
    shortest_path_with(net, from, to, RouteOptions::default())
}

pub fn shortest_path_with(
    net: &RoadNetwork,
    from: &EdgePosition,
    to: &EdgePosition,
    opts: RouteOptions,
) -> Result<NetworkPath, RouteError> {
    let m = many_to_many_shortest_with(net, std::slice::from_ref(from), std::slice::from_ref(to), opts)?;
    m.into_paths()
        .pop()
        .and_then(|mut row| row.pop())
        .flatten()
        .ok_or(RouteError::Unreachable)
}

/// Row-major matrix of optional paths; `None` marks an unreachable pair.
#[derive(Debug, Clone, PartialEq)]
pub struct PathMatrix {
    rows: usize,
    cols: usize,
    paths: Vec<Option<NetworkPath>>,
}

impl PathMatrix {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, row: usize, col: usize) -> Option<&NetworkPath> {
        self.paths[row * self.cols + col].as_ref()
    }

    pub fn length(&self, row: usize, col: usize) -> Option<f64> {
        self.get(row, col).map(|p| p.total_length)
    }

    pub fn into_paths(self) -> Vec<Vec<Option<NetworkPath>>> {
        let cols = self.cols;
        let mut it = self.paths.into_iter();
        (0..self.rows)
            .map(|_| it.by_ref().take(cols).collect())
            .collect()
    }

    pub fn into_flat(self) -> Vec<Option<NetworkPath>> {
        self.paths
    }
}

/// All-pairs routes between two position sets, one search per source.
pub fn many_to_many_shortest(
    net: &RoadNetwork,
    from_set: &[EdgePosition],
    to_set: &[EdgePosition],
) -> Result<PathMatrix, RouteError> {
    many_to_many_shortest_with(net, from_set, to_set, RouteOptions::default())
}

pub fn many_to_many_shortest_with(
    net: &RoadNetwork,
    from_set: &[EdgePosition],
    to_set: &[EdgePosition],
    opts: RouteOptions,
) -> Result<PathMatrix, RouteError> {
    let froms: Vec<Resolved> = from_set.iter().map(|p| net.resolve(p)).collect::<Result<_, _>>()?;
    let tos: Vec<Resolved> = to_set.iter().map(|p| net.resolve(p)).collect::<Result<_, _>>()?;
    let mut paths = Vec::with_capacity(froms.len() * tos.len());
    SPACE.with(|space| {
        let mut space = space.borrow_mut();
        for from in &froms {
            let comp = net.component[from.start as usize];
            let mut targets: Vec<NodeId> = tos
                .iter()
                .filter(|t| net.component[t.start as usize] == comp)
                .flat_map(entry_nodes)
                .collect();
            targets.sort_unstable();
            targets.dedup();
            space.run(net, &exit_sources(from), &targets, opts.radius_cap);
            for to in &tos {
                let mut path = route_to(net, &space, from, to);
                if let (Some(cap), Some(p)) = (opts.radius_cap, path.as_ref()) {
                    if p.total_length > cap {
                        path = None;
                    }
                }
                paths.push(path);
            }
        }
    });
    Ok(PathMatrix {
        rows: froms.len(),
        cols: tos.len(),
        paths,
    })
}
