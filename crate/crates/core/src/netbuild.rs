//! Road-piece asset construction from OSM XML extracts.
//!
//! Highway ways are split into their straight constituents ("road pieces"),
//! each inheriting the parent way's tags. Missing speed limits are imputed
//! from the mean of known limits for the same road class, first within the
//! piece's admin region and then globally, with a fixed per-class table as
//! the last resort. Untagged directionality follows rule-based defaults.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use log::warn;
use quick_xml::events::{BytesStart, Event};
use quick_xml::Reader;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::{geodesic_distance, BoundingBox, GeoPoint};

/// First line of every asset file.
pub const ASSET_VERSION: &str = "ivmm-asset-v1";

const ASSET_COLUMNS: [&str; 13] = [
    "piece_id",
    "way_id",
    "start_lat",
    "start_lon",
    "end_lat",
    "end_lon",
    "length_m",
    "highway",
    "maxspeed_kmh",
    "maxspeed_imputed",
    "oneway",
    "service",
    "tags",
];

const MPH_TO_KMH: f64 = 1.609344;
const KNOT_TO_KMH: f64 = 1.852;

#[derive(Debug, Error)]
pub enum NetbuildError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed input at byte {position}: {message}")]
    MalformedInput { position: u64, message: String },
    #[error("extract contains no usable highway ways")]
    EmptyExtract,
    #[error("asset version mismatch: expected {ASSET_VERSION}, found {found:?}")]
    VersionMismatch { found: String },
    #[error("corrupt asset at line {line}: {message}")]
    CorruptAsset { line: usize, message: String },
    #[error("piece {piece_id}: field {field} contains a tab or newline")]
    UnencodableField { piece_id: u64, field: &'static str },
}

/// A highway way as read from the extract.
#[derive(Debug, Clone, PartialEq)]
pub struct OsmWay {
    pub way_id: i64,
    pub node_refs: Vec<i64>,
    pub tags: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Default)]
pub struct OsmExtract {
    /// Highway ways sorted by id.
    pub ways: Vec<OsmWay>,
    /// Coordinates of every node referenced by `ways`.
    pub nodes: BTreeMap<i64, GeoPoint>,
    /// Ways dropped because they referenced nodes absent from the extract.
    pub dropped_missing_nodes: usize,
}

/// One straight segment of an OSM way.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoadPiece {
    pub piece_id: u64,
    pub way_id: i64,
    pub start: GeoPoint,
    pub end: GeoPoint,
    pub length_m: f64,
    pub highway: String,
    /// Speed limit in km/h; `None` until parsed or imputed.
    pub maxspeed_kmh: Option<f64>,
    pub maxspeed_imputed: bool,
    /// Directionality; `None` until [`apply_oneway_defaults`] resolves it.
    pub oneway: Option<bool>,
    pub service: Option<String>,
    pub tags: BTreeMap<String, String>,
}

impl RoadPiece {
    pub fn is_oneway(&self) -> bool {
        self.oneway.unwrap_or(false)
    }
}

/// Admin-1 region key used to group speed statistics.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Region(pub String);

impl Region {
    pub fn global() -> Self {
        Region("global".to_string())
    }
}

/// Maps parent way ids to regions; unmapped ways fall into a default region.
#[derive(Debug, Clone)]
pub struct RegionMap {
    by_way: HashMap<i64, Region>,
    default: Region,
}

impl Default for RegionMap {
    fn default() -> Self {
        Self {
            by_way: HashMap::new(),
            default: Region::global(),
        }
    }
}

impl RegionMap {
    pub fn new(by_way: HashMap<i64, Region>) -> Self {
        Self {
            by_way,
            default: Region::global(),
        }
    }

    pub fn region_of(&self, piece: &RoadPiece) -> Region {
        self.by_way
            .get(&piece.way_id)
            .cloned()
            .unwrap_or_else(|| self.default.clone())
    }

    /// Reads a two-column `way_id,admin1_id` file (comma or tab separated,
    /// with a header line).
    pub fn read<R: Read>(reader: R) -> Result<Self, NetbuildError> {
        let mut text = String::new();
        BufReader::new(reader).read_to_string(&mut text)?;
        let delimiter = if text.lines().next().unwrap_or("").contains('\t') {
            b'\t'
        } else {
            b','
        };
        let mut rdr = csv::ReaderBuilder::new()
            .delimiter(delimiter)
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let mut by_way = HashMap::new();
        for (i, rec) in rdr.records().enumerate() {
            let line = i + 2;
            let rec = rec.map_err(|e| NetbuildError::MalformedInput {
                position: line as u64,
                message: e.to_string(),
            })?;
            let (Some(way), Some(region)) = (rec.get(0), rec.get(1)) else {
                return Err(NetbuildError::MalformedInput {
                    position: line as u64,
                    message: "expected way_id and admin1_id".into(),
                });
            };
            let way: i64 = way.parse().map_err(|_| NetbuildError::MalformedInput {
                position: line as u64,
                message: format!("invalid way id {way:?}"),
            })?;
            if region.is_empty() {
                return Err(NetbuildError::MalformedInput {
                    position: line as u64,
                    message: "empty admin1 id".into(),
                });
            }
            by_way.insert(way, Region(region.to_string()));
        }
        Ok(Self::new(by_way))
    }

    pub fn from_path(path: &Path) -> Result<Self, NetbuildError> {
        Self::read(File::open(path)?)
    }
}

fn attr_value(e: &BytesStart<'_>, key: &[u8], position: u64) -> Result<Option<String>, NetbuildError> {
    for attr in e.attributes() {
        let attr = attr.map_err(|err| NetbuildError::MalformedInput {
            position,
            message: err.to_string(),
        })?;
        if attr.key.as_ref() == key {
            let value = attr
                .unescape_value()
                .map_err(|err| NetbuildError::MalformedInput {
                    position,
                    message: err.to_string(),
                })?;
            return Ok(Some(value.into_owned()));
        }
    }
    Ok(None)
}

fn required<T: std::str::FromStr>(
    e: &BytesStart<'_>,
    key: &'static str,
    position: u64,
) -> Result<T, NetbuildError> {
    let raw = attr_value(e, key.as_bytes(), position)?.ok_or_else(|| {
        NetbuildError::MalformedInput {
            position,
            message: format!(
                "<{}> is missing attribute {key}",
                String::from_utf8_lossy(e.name().as_ref())
            ),
        }
    })?;
    raw.parse().map_err(|_| NetbuildError::MalformedInput {
        position,
        message: format!("invalid value {raw:?} for attribute {key}"),
    })
}

/// Parses an OSM XML extract, keeping only traversable highway ways.
///
/// With a bounding box, a way is kept when at least one of its nodes lies
/// inside it.
pub fn parse_extract<R: BufRead>(
    source: R,
    bbox: Option<BoundingBox>,
) -> Result<OsmExtract, NetbuildError> {
    let mut reader = Reader::from_reader(source);
    let mut buf = Vec::new();
    let mut all_nodes: HashMap<i64, GeoPoint> = HashMap::new();
    let mut ways: Vec<OsmWay> = Vec::new();
    let mut current: Option<OsmWay> = None;

    loop {
        let position = reader.buffer_position();
        let event = reader
            .read_event_into(&mut buf)
            .map_err(|e| NetbuildError::MalformedInput {
                position: reader.error_position(),
                message: e.to_string(),
            })?;
        match event {
            Event::Start(ref e) | Event::Empty(ref e) => match e.name().as_ref() {
                b"node" => {
                    let id: i64 = required(e, "id", position)?;
                    let lat: f64 = required(e, "lat", position)?;
                    let lon: f64 = required(e, "lon", position)?;
                    let p = GeoPoint::new(lat, lon);
                    if !p.is_valid() {
                        return Err(NetbuildError::MalformedInput {
                            position,
                            message: format!("node {id} has invalid coordinates"),
                        });
                    }
                    all_nodes.insert(id, p);
                }
                b"way" => {
                    let way_id: i64 = required(e, "id", position)?;
                    let way = OsmWay {
                        way_id,
                        node_refs: Vec::new(),
                        tags: BTreeMap::new(),
                    };
                    if matches!(event, Event::Empty(_)) {
                        ways.push(way);
                    } else {
                        current = Some(way);
                    }
                }
                b"nd" => {
                    if let Some(way) = current.as_mut() {
                        way.node_refs.push(required(e, "ref", position)?);
                    }
                }
                b"tag" => {
                    if let Some(way) = current.as_mut() {
                        let k: String = required(e, "k", position)?;
                        let v: String = required(e, "v", position)?;
                        way.tags.insert(k, v);
                    }
                }
                _ => {}
            },
            Event::End(e) => {
                if e.name().as_ref() == b"way" {
                    if let Some(way) = current.take() {
                        ways.push(way);
                    }
                }
            }
            Event::Eof => break,
            _ => {}
        }
        buf.clear();
    }
    if current.is_some() {
        return Err(NetbuildError::MalformedInput {
            position: reader.buffer_position(),
            message: "unterminated <way>".into(),
        });
    }

    let mut extract = OsmExtract::default();
    ways.sort_by_key(|w| w.way_id);
    for way in ways {
        if !way.tags.contains_key("highway")
            || way.tags.get("area").map(String::as_str) == Some("yes")
            || way.node_refs.len() < 2
        {
            continue;
        }
        let coords: Option<Vec<GeoPoint>> = way
            .node_refs
            .iter()
            .map(|id| all_nodes.get(id).copied())
            .collect();
        let Some(coords) = coords else {
            extract.dropped_missing_nodes += 1;
            continue;
        };
        if let Some(bbox) = bbox {
            if !coords.iter().any(|p| bbox.contains(*p)) {
                continue;
            }
        }
        for (id, p) in way.node_refs.iter().zip(coords) {
            extract.nodes.insert(*id, p);
        }
        extract.ways.push(way);
    }
    if extract.dropped_missing_nodes > 0 {
        warn!(
            "dropped {} ways referencing nodes missing from the extract",
            extract.dropped_missing_nodes
        );
    }
    if extract.ways.is_empty() {
        return Err(NetbuildError::EmptyExtract);
    }
    Ok(extract)
}

pub fn parse_extract_file(path: &Path, bbox: Option<BoundingBox>) -> Result<OsmExtract, NetbuildError> {
    parse_extract(BufReader::new(File::open(path)?), bbox)
}

#[derive(Debug, Clone, Default)]
pub struct SplitOutcome {
    pub pieces: Vec<RoadPiece>,
    /// Zero-length segments that were skipped.
    pub dropped: usize,
}

/// Splits a way into consecutive road pieces, numbering them from
/// `first_piece_id`. Zero-length segments are dropped.
pub fn split_into_pieces(
    way: &OsmWay,
    nodes: &BTreeMap<i64, GeoPoint>,
    first_piece_id: u64,
) -> SplitOutcome {
    let mut out = SplitOutcome::default();
    let highway = way.tags.get("highway").cloned().unwrap_or_default();
    let service = way.tags.get("service").cloned();
    let mut next_id = first_piece_id;
    for pair in way.node_refs.windows(2) {
        let (Some(&start), Some(&end)) = (nodes.get(&pair[0]), nodes.get(&pair[1])) else {
            out.dropped += 1;
            continue;
        };
        let length_m = geodesic_distance(start, end);
        if pair[0] == pair[1] || start == end || length_m <= 0.0 {
            out.dropped += 1;
            continue;
        }
        out.pieces.push(RoadPiece {
            piece_id: next_id,
            way_id: way.way_id,
            start,
            end,
            length_m,
            highway: highway.clone(),
            maxspeed_kmh: None,
            maxspeed_imputed: false,
            oneway: None,
            service: service.clone(),
            tags: way.tags.clone(),
        });
        next_id += 1;
    }
    out
}

/// Parses an OSM `maxspeed` value into km/h.
pub fn parse_maxspeed(raw: &str) -> Option<f64> {
    let s = raw.trim();
    let split = s
        .find(|c: char| !(c.is_ascii_digit() || c == '.'))
        .unwrap_or(s.len());
    let (num, unit) = s.split_at(split);
    let value: f64 = num.parse().ok()?;
    let factor = match unit.trim().to_ascii_lowercase().as_str() {
        "" | "km/h" | "kmh" | "kph" => 1.0,
        "mph" => MPH_TO_KMH,
        "knots" => KNOT_TO_KMH,
        _ => return None,
    };
    let kmh = value * factor;
    (kmh.is_finite() && kmh > 0.0).then_some(kmh)
}

/// Last-resort speed for a road class when no data exists anywhere.
pub fn default_speed_kmh(highway: &str) -> f64 {
    let base = highway.strip_suffix("_link").unwrap_or(highway);
    match base {
        "motorway" => 110.0,
        "trunk" => 90.0,
        "primary" => 70.0,
        "secondary" => 60.0,
        "tertiary" => 50.0,
        "residential" | "unclassified" => 40.0,
        "service" => 20.0,
        "living_street" => 15.0,
        "footway" | "path" | "track" | "cycleway" => 10.0,
        _ => 40.0,
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ImputeReport {
    /// Pieces whose `maxspeed` tag could not be parsed.
    pub unparseable: Vec<u64>,
    pub imputed_from_region: usize,
    pub imputed_from_class: usize,
    pub imputed_from_table: usize,
}

/// Normalizes known speed limits and fills missing ones.
pub fn impute_maxspeed(
    mut pieces: Vec<RoadPiece>,
    region_of: impl Fn(&RoadPiece) -> Region,
) -> (Vec<RoadPiece>, ImputeReport) {
    let mut report = ImputeReport::default();
    let known: Vec<Option<f64>> = pieces
        .iter()
        .map(|p| {
            if let (Some(v), false) = (p.maxspeed_kmh, p.maxspeed_imputed) {
                return Some(v);
            }
            let tag = p.tags.get("maxspeed")?;
            let parsed = parse_maxspeed(tag);
            if parsed.is_none() {
                report.unparseable.push(p.piece_id);
            }
            parsed
        })
        .collect();
    let regions: Vec<Region> = pieces.iter().map(&region_of).collect();

    let mut by_region: BTreeMap<(&str, &Region), (f64, usize)> = BTreeMap::new();
    let mut by_class: BTreeMap<&str, (f64, usize)> = BTreeMap::new();
    for ((p, k), r) in pieces.iter().zip(&known).zip(&regions) {
        if let Some(v) = k {
            let e = by_region.entry((p.highway.as_str(), r)).or_default();
            e.0 += v;
            e.1 += 1;
            let e = by_class.entry(p.highway.as_str()).or_default();
            e.0 += v;
            e.1 += 1;
        }
    }
    let mean = |(sum, n): (f64, usize)| sum / n as f64;
    let fills: Vec<f64> = pieces
        .iter()
        .zip(&known)
        .zip(&regions)
        .map(|((p, k), r)| match k {
            Some(v) => *v,
            None => {
                if let Some(&acc) = by_region.get(&(p.highway.as_str(), r)) {
                    report.imputed_from_region += 1;
                    mean(acc)
                } else if let Some(&acc) = by_class.get(p.highway.as_str()) {
                    report.imputed_from_class += 1;
                    mean(acc)
                } else {
                    report.imputed_from_table += 1;
                    default_speed_kmh(&p.highway)
                }
            }
        })
        .collect();
    for ((p, k), v) in pieces.iter_mut().zip(&known).zip(fills) {
        p.maxspeed_kmh = Some(v);
        p.maxspeed_imputed = k.is_none();
    }
    (pieces, report)
}

/// Resolves directionality from the `oneway` tag and road class.
///
/// `oneway=-1` pieces are reversed so that traversal always runs from
/// `start` to `end`. Pieces already resolved are left untouched, which
/// makes the operation idempotent.
pub fn apply_oneway_defaults(mut pieces: Vec<RoadPiece>) -> Vec<RoadPiece> {
    for p in pieces.iter_mut().filter(|p| p.oneway.is_none()) {
        let tag = p.tags.get("oneway").map(|s| s.trim().to_ascii_lowercase());
        let oneway = match tag.as_deref() {
            Some("yes" | "true" | "1") => true,
            Some("no" | "false" | "0") => false,
            Some("-1") => {
                std::mem::swap(&mut p.start, &mut p.end);
                true
            }
            _ => matches!(p.highway.as_str(), "motorway" | "motorway_link"),
        };
        p.oneway = Some(oneway);
    }
    pieces
}

#[derive(Debug, Clone, Default)]
pub struct BuildReport {
    pub ways: usize,
    pub dropped_missing_nodes: usize,
    pub dropped_zero_length: usize,
    pub impute: ImputeReport,
}

/// Full asset pipeline: split, impute speeds, resolve directionality.
/// Piece ids are assigned sequentially from 1 in way-id order.
pub fn build_pieces(extract: &OsmExtract, regions: &RegionMap) -> (Vec<RoadPiece>, BuildReport) {
    let mut report = BuildReport {
        ways: extract.ways.len(),
        dropped_missing_nodes: extract.dropped_missing_nodes,
        ..Default::default()
    };
    let mut pieces = Vec::new();
    let mut next_id = 1;
    for way in &extract.ways {
        let out = split_into_pieces(way, &extract.nodes, next_id);
        next_id += out.pieces.len() as u64;
        report.dropped_zero_length += out.dropped;
        pieces.extend(out.pieces);
    }
    let (pieces, impute) = impute_maxspeed(pieces, |p| regions.region_of(p));
    report.impute = impute;
    (apply_oneway_defaults(pieces), report)
}

fn fmt_opt_f64(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn fmt_opt_bool(v: Option<bool>) -> &'static str {
    match v {
        Some(true) => "true",
        Some(false) => "false",
        None => "",
    }
}

fn check_field(piece_id: u64, field: &'static str, value: &str) -> Result<(), NetbuildError> {
    if value.contains(['\t', '\n', '\r']) {
        Err(NetbuildError::UnencodableField { piece_id, field })
    } else {
        Ok(())
    }
}

/// Writes pieces as a tab-separated asset, ordered by piece id.
pub fn write_asset<W: Write>(pieces: &[RoadPiece], writer: W) -> Result<(), NetbuildError> {
    let mut w = BufWriter::new(writer);
    writeln!(w, "{ASSET_VERSION}")?;
    writeln!(w, "{}", ASSET_COLUMNS.join("\t"))?;
    let mut order: Vec<&RoadPiece> = pieces.iter().collect();
    order.sort_by_key(|p| p.piece_id);
    for p in order {
        let service = p.service.as_deref().unwrap_or("");
        check_field(p.piece_id, "highway", &p.highway)?;
        check_field(p.piece_id, "service", service)?;
        let tags = serde_json::to_string(&p.tags).expect("string map serializes");
        let fields = [
            p.piece_id.to_string(),
            p.way_id.to_string(),
            p.start.lat.to_string(),
            p.start.lon.to_string(),
            p.end.lat.to_string(),
            p.end.lon.to_string(),
            p.length_m.to_string(),
            p.highway.clone(),
            fmt_opt_f64(p.maxspeed_kmh),
            p.maxspeed_imputed.to_string(),
            fmt_opt_bool(p.oneway).to_string(),
            service.to_string(),
            tags,
        ];
        writeln!(w, "{}", fields.join("\t"))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_asset_file(pieces: &[RoadPiece], path: &Path) -> Result<(), NetbuildError> {
    write_asset(pieces, File::create(path)?)
}

/// Reads an asset written by [`write_asset`].
pub fn read_asset<R: Read>(reader: R) -> Result<Vec<RoadPiece>, NetbuildError> {
    let mut lines = BufReader::new(reader).lines();
    let version = lines.next().transpose()?.unwrap_or_default();
    if version != ASSET_VERSION {
        if version.starts_with("ivmm-asset-") {
            return Err(NetbuildError::VersionMismatch { found: version });
        }
        return Err(NetbuildError::CorruptAsset {
            line: 1,
            message: format!("missing version header, found {version:?}"),
        });
    }
    let header = lines.next().transpose()?.unwrap_or_default();
    if header != ASSET_COLUMNS.join("\t") {
        return Err(NetbuildError::CorruptAsset {
            line: 2,
            message: "unexpected column header".into(),
        });
    }
    let mut pieces = Vec::new();
    for (i, line) in lines.enumerate() {
        let line_no = i + 3;
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let corrupt = |message: String| NetbuildError::CorruptAsset {
            line: line_no,
            message,
        };
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != ASSET_COLUMNS.len() {
            return Err(corrupt(format!(
                "expected {} fields, found {}",
                ASSET_COLUMNS.len(),
                f.len()
            )));
        }
        fn num<T: std::str::FromStr>(s: &str, name: &str) -> Result<T, String> {
            s.parse().map_err(|_| format!("invalid {name}: {s:?}"))
        }
        let opt_bool = |s: &str| match s {
            "true" => Ok(Some(true)),
            "false" => Ok(Some(false)),
            "" => Ok(None),
            _ => Err(format!("invalid boolean {s:?}")),
        };
        let parse = || -> Result<RoadPiece, String> {
            Ok(RoadPiece {
                piece_id: num(f[0], "piece_id")?,
                way_id: num(f[1], "way_id")?,
                start: GeoPoint::new(num(f[2], "start_lat")?, num(f[3], "start_lon")?),
                end: GeoPoint::new(num(f[4], "end_lat")?, num(f[5], "end_lon")?),
                length_m: num(f[6], "length_m")?,
                highway: f[7].to_string(),
                maxspeed_kmh: if f[8].is_empty() {
                    None
                } else {
                    Some(num(f[8], "maxspeed_kmh")?)
                },
                maxspeed_imputed: opt_bool(f[9])?.ok_or("missing maxspeed_imputed")?,
                oneway: opt_bool(f[10])?,
                service: (!f[11].is_empty()).then(|| f[11].to_string()),
                tags: serde_json::from_str(f[12]).map_err(|e| format!("invalid tags: {e}"))?,
            })
        };
        let piece = parse().map_err(corrupt)?;
        if !(piece.length_m > 0.0) || piece.start == piece.end {
            return Err(corrupt(format!("piece {} is degenerate", piece.piece_id)));
        }
        pieces.push(piece);
    }
    Ok(pieces)
}

pub fn read_asset_file(path: &Path) -> Result<Vec<RoadPiece>, NetbuildError> {
    read_asset(File::open(path)?)
}
