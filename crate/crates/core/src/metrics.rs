//! Match quality and timing statistics.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::candidates::{Candidate, Ping};
use crate::geo::geodesic_distance;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("raw trajectory has zero length")]
    ZeroLengthRaw,
    #[error("need at least 2 pings, got {0}")]
    TooFewPings(usize),
    #[error("no values to summarize")]
    EmptyInput,
}

/// Distance from each ping to its selected candidate, in ping order.
pub fn ping_candidate_distance(selected: &[Candidate]) -> Vec<f64> {
    selected.iter().map(|c| c.dist).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LengthVariation {
    pub raw_length: f64,
    pub matched_length: f64,
    /// `|matched - raw|` in meters.
    pub absolute: f64,
    /// `absolute / raw`, as a fraction.
    pub relative: f64,
}

/// Compares the cumulative ping-to-ping length against the cumulative
/// anchor-to-anchor length.
pub fn path_length_variation(raw: &[Ping], anchors: &[Candidate]) -> Result<LengthVariation, MetricsError> {
    if raw.len() < 2 {
        return Err(MetricsError::TooFewPings(raw.len()));
    }
    let raw_length: f64 = raw.windows(2).map(|w| geodesic_distance(w[0].point, w[1].point)).sum();
    if raw_length == 0.0 {
        return Err(MetricsError::ZeroLengthRaw);
    }
    let matched_length: f64 = anchors.windows(2).map(|w| geodesic_distance(w[0].foot, w[1].foot)).sum();
    let absolute = (matched_length - raw_length).abs();
    Ok(LengthVariation {
        raw_length,
        matched_length,
        absolute,
        relative: absolute / raw_length,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub count: usize,
    pub avg: f64,
    /// Population standard deviation.
    pub std: f64,
    pub min: f64,
    pub q1: f64,
    pub q2: f64,
    pub q3: f64,
    pub max: f64,
}

impl Summary {
    pub const HEADER: [&'static str; 7] = ["avg", "std", "min", "q1", "q2", "q3", "max"];

    pub fn columns(&self) -> [f64; 7] {
        [self.avg, self.std, self.min, self.q1, self.q2, self.q3, self.max]
    }
}

/// Quantile of sorted values, interpolating linearly between closest ranks.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

pub fn summarize(values: &[f64]) -> Result<Summary, MetricsError> {
    if values.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let avg = sorted.iter().sum::<f64>() / n;
    let var = sorted.iter().map(|v| (v - avg).powi(2)).sum::<f64>() / n;
    Ok(Summary {
        count: sorted.len(),
        avg,
        std: var.sqrt(),
        min: sorted[0],
        q1: quantile(&sorted, 0.25),
        q2: quantile(&sorted, 0.5),
        q3: quantile(&sorted, 0.75),
        max: sorted[sorted.len() - 1],
    })
}

/// Per-trajectory counters and measurements.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub trajectory_id: String,
    pub pings: usize,
    pub dropped_pings: usize,
    pub ping_candidate_distances: Vec<f64>,
    pub length_variation: Option<LengthVariation>,
    /// Length of the imputed network route, meters.
    pub route_length: f64,
    pub full_process_secs: f64,
    pub voting_secs: f64,
    pub relaxations: u64,
    pub breaks: usize,
    pub gaps: usize,
    /// Distinct network nodes per leg; `None` marks a gap.
    pub leg_node_counts: Vec<Option<usize>>,
}

/// Writes a tab-separated table with one `avg..max` row per label.
pub fn write_summary_table<W: Write>(mut w: W, rows: &[(String, Summary)]) -> std::io::Result<()> {
    writeln!(w, "metric\tcount\t{}", Summary::HEADER.join("\t"))?;
    for (label, s) in rows {
        write!(w, "{label}\t{}", s.count)?;
        for v in s.columns() {
            write!(w, "\t{v:.6}")?;
        }
        writeln!(w)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::GeoPoint;

    #[test]
    fn single_value_summary() {
        let s = summarize(&[4.5]).unwrap();
        assert_eq!(s.columns(), [4.5, 0.0, 4.5, 4.5, 4.5, 4.5, 4.5]);
    }

    #[test]
    fn median_of_one_to_five() {
        let s = summarize(&[5.0, 3.0, 1.0, 2.0, 4.0]).unwrap();
        assert_eq!(s.q2, 3.0);
        assert_eq!(s.q1, 2.0);
        assert_eq!(s.q3, 4.0);
        assert!((s.std - 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn empty_input_is_error() {
        assert_eq!(summarize(&[]), Err(MetricsError::EmptyInput));
    }

    #[test]
    fn straight_line_variation() {
        let o = GeoPoint::new(0.0, 0.0);
        let raw = vec![Ping::new(0, o, 0.0), Ping::new(1, o.offset(0.0, 1000.0), 60.0)];
        let foot = |p: GeoPoint| Candidate {
            ping_index: 0,
            candidate_index: 0,
            piece_id: 1,
            foot: p,
            frac: 0.0,
            dist: 0.0,
        };
        let same = path_length_variation(&raw, &[foot(raw[0].point), foot(raw[1].point)]).unwrap();
        assert_eq!((same.absolute, same.relative), (0.0, 0.0));
        let longer = path_length_variation(&raw, &[foot(o), foot(o.offset(0.0, 1005.0))]).unwrap();
        assert!((longer.absolute - 5.0).abs() < 1e-6);
        assert!((longer.relative - 0.005).abs() < 1e-9);
        let still = vec![Ping::new(0, o, 0.0), Ping::new(1, o, 1.0)];
        assert_eq!(path_length_variation(&still, &[]), Err(MetricsError::ZeroLengthRaw));
    }
}
