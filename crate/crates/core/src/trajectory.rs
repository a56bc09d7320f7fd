//! Trajectory ingestion: grouping rows by device and splitting on time gaps.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::candidates::Ping;
use crate::geo::GeoPoint;

#[derive(Debug, Error)]
pub enum TrajectoryError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    MalformedRow { line: u64, message: String },
    #[error("device {device_id}: duplicate timestamp {timestamp}")]
    NonMonotonicTimestamps { device_id: String, timestamp: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    /// `<device_id>#<segment>`.
    pub id: String,
    pub device_id: String,
    pub pings: Vec<Ping>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LoadReport {
    pub rows: usize,
    pub devices: usize,
    /// Trajectories dropped for having fewer than `minpings` pings, with
    /// their ping count.
    pub too_short: Vec<(String, usize)>,
}

#[derive(Debug, Deserialize)]
struct Row {
    device_id: String,
    lat: f64,
    lon: f64,
    timestamp_s: f64,
    #[serde(default)]
    speed_mps: Option<f64>,
    #[serde(default)]
    accuracy_m: Option<f64>,
}

/// Reads `device_id,lat,lon,timestamp_s[,speed_mps][,accuracy_m]` rows.
/// A tab-separated header switches the delimiter to tabs.
pub fn load_trajectories<R: Read>(
    mut reader: R,
    split_gap_s: f64,
    minpings: usize,
) -> Result<(Vec<Trajectory>, LoadReport), TrajectoryError> {
    let mut text = String::new();
    reader.read_to_string(&mut text)?;
    let header = text.lines().next().unwrap_or("");
    let delimiter = if header.contains('\t') { b'\t' } else { b',' };
    let mut csv = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());

    let mut by_device: BTreeMap<String, Vec<(f64, Ping)>> = BTreeMap::new();
    let mut report = LoadReport::default();
    let headers = csv
        .headers()
        .map_err(|e| TrajectoryError::MalformedRow {
            line: 1,
            message: e.to_string(),
        })?
        .clone();
    let mut record = csv::StringRecord::new();
    loop {
        let more = csv.read_record(&mut record).map_err(|e| TrajectoryError::MalformedRow {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        if !more {
            break;
        }
        let line = record.position().map_or(0, |p| p.line());
        let row: Row = record
            .deserialize(Some(&headers))
            .map_err(|e| TrajectoryError::MalformedRow {
                line,
                message: e.to_string(),
            })?;
        let point = GeoPoint::new(row.lat, row.lon);
        if !point.is_valid() || !row.timestamp_s.is_finite() {
            return Err(TrajectoryError::MalformedRow {
                line,
                message: format!("invalid coordinate or timestamp ({}, {}, {})", row.lat, row.lon, row.timestamp_s),
            });
        }
        let mut ping = Ping::new(0, point, row.timestamp_s);
        ping.speed = row.speed_mps;
        ping.accuracy = row.accuracy_m;
        by_device
            .entry(row.device_id)
            .or_default()
            .push((row.timestamp_s, ping));
        report.rows += 1;
    }
    report.devices = by_device.len();

    let mut out = Vec::new();
    for (device_id, mut rows) in by_device {
        rows.sort_by(|a, b| a.0.total_cmp(&b.0));
        if let Some(w) = rows.windows(2).find(|w| w[0].0 == w[1].0) {
            return Err(TrajectoryError::NonMonotonicTimestamps {
                device_id,
                timestamp: w[0].0,
            });
        }
        let mut segments: Vec<Vec<Ping>> = Vec::new();
        let mut last_ts = f64::NEG_INFINITY;
        for (ts, ping) in rows {
            if segments.is_empty() || ts - last_ts > split_gap_s {
                segments.push(Vec::new());
            }
            last_ts = ts;
            segments.last_mut().expect("segment exists").push(ping);
        }
        for (n, mut pings) in segments.into_iter().enumerate() {
            let id = format!("{device_id}#{n}");
            if pings.len() < minpings {
                report.too_short.push((id, pings.len()));
                continue;
            }
            for (i, p) in pings.iter_mut().enumerate() {
                p.index = i;
            }
            out.push(Trajectory {
                id,
                device_id: device_id.clone(),
                pings,
            });
        }
    }
    Ok((out, report))
}

pub fn load_trajectories_file(
    path: &Path,
    split_gap_s: f64,
    minpings: usize,
) -> Result<(Vec<Trajectory>, LoadReport), TrajectoryError> {
    load_trajectories(std::fs::File::open(path)?, split_gap_s, minpings)
}

/// Writes trajectories in the format read by [`load_trajectories`].
pub fn write_trajectories<W: Write>(writer: W, trajectories: &[Trajectory]) -> Result<(), TrajectoryError> {
    let mut w = csv::Writer::from_writer(writer);
    let io = |e: csv::Error| TrajectoryError::Io(e.into());
    w.write_record(["device_id", "lat", "lon", "timestamp_s", "speed_mps", "accuracy_m"])
        .map_err(io)?;
    for t in trajectories {
        for p in &t.pings {
            let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
            w.write_record([
                t.device_id.clone(),
                p.point.lat.to_string(),
                p.point.lon.to_string(),
                p.timestamp.to_string(),
                opt(p.speed),
                opt(p.accuracy),
            ])
            .map_err(io)?;
        }
    }
    w.flush()?;
    Ok(())
}
