//! Spatial, transition and temporal weights for trellis edges.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::netgraph::{NetworkPath, RoadNetwork};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StParams {
    /// Mean of the observation Gaussian, meters.
    pub mu: f64,
    /// Standard deviation of the observation Gaussian, meters.
    pub sigma: f64,
    /// Lower bound substituted for non-positive average speeds, km/h.
    pub speed_floor_kmh: f64,
}

impl Default for StParams {
    fn default() -> Self {
        Self {
            mu: 0.0,
            sigma: 20.0,
            speed_floor_kmh: 1.0,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum StError {
    #[error("time interval must be positive, got {0} s")]
    NonPositiveInterval(f64),
    #[error("path has no pieces")]
    EmptyPath,
    #[error("piece {0} has no positive typical speed")]
    MissingSpeed(u64),
}

/// Gaussian density of a ping-candidate distance.
pub fn observation_probability(x: f64, params: &StParams) -> f64 {
    let z = (x - params.mu) / params.sigma;
    (-0.5 * z * z).exp() / (params.sigma * (2.0 * std::f64::consts::PI).sqrt())
}

/// Ratio of the smaller to the larger of the straight-line distance `d`
/// and the network distance `w`. `None` marks an unreachable pair.
pub fn transition_probability(d: f64, w: Option<f64>) -> f64 {
    let Some(w) = w else {
        return 0.0;
    };
    if d == w {
        return 1.0;
    }
    let (lo, hi) = if d < w { (d, w) } else { (w, d) };
    if lo <= 0.0 {
        0.0
    } else {
        lo / hi
    }
}

/// Average speed in km/h needed to cover `path` in `dt` seconds.
pub fn average_path_speed(path: &NetworkPath, dt: f64) -> Result<f64, StError> {
    if !(dt > 0.0) {
        return Err(StError::NonPositiveInterval(dt));
    }
    Ok(path.total_length / dt * 3.6)
}

/// Typical speeds of the pieces a path actually covers.
///
/// Zero-length steps (leaving or entering a piece exactly at a node) are
/// skipped unless nothing else remains.
pub fn path_speeds(net: &RoadNetwork, path: &NetworkPath) -> Result<Vec<f64>, StError> {
    let moving: Vec<_> = path.steps.iter().filter(|s| s.traversed_m > 0.0).collect();
    let steps: Vec<_> = if moving.is_empty() {
        path.steps.iter().take(1).collect()
    } else {
        moving
    };
    if steps.is_empty() {
        return Err(StError::EmptyPath);
    }
    steps
        .into_iter()
        .map(|s| {
            net.piece(s.piece_id)
                .and_then(|p| p.maxspeed_kmh)
                .filter(|v| *v > 0.0)
                .ok_or(StError::MissingSpeed(s.piece_id))
        })
        .collect()
}

/// Cosine similarity between piece speeds and a constant vector of `v_bar`.
pub fn temporal_weight(speeds: &[f64], v_bar: f64, params: &StParams) -> Result<f64, StError> {
    if speeds.is_empty() {
        return Err(StError::EmptyPath);
    }
    let v = if v_bar > 0.0 { v_bar } else { params.speed_floor_kmh };
    let dot: f64 = speeds.iter().map(|s| s * v).sum();
    let norm_s = speeds.iter().map(|s| s * s).sum::<f64>().sqrt();
    let norm_v = (speeds.len() as f64 * v * v).sqrt();
    Ok((dot / (norm_s * norm_v)).min(1.0))
}

/// Weight of the trellis edge into `x_next`, the target candidate's
/// distance. Returns 0 for an unreachable pair.
pub fn edge_weight(
    net: &RoadNetwork,
    x_next: f64,
    path: Option<&NetworkPath>,
    d: f64,
    dt: f64,
    params: &StParams,
) -> Result<f64, StError> {
    let Some(path) = path else {
        return Ok(0.0);
    };
    let n = observation_probability(x_next, params);
    let v = transition_probability(d, Some(path.total_length));
    let v_bar = average_path_speed(path, dt)?;
    let t = temporal_weight(&path_speeds(net, path)?, v_bar, params)?;
    Ok(n * v * t)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1e-300)
    }

    #[test]
    fn observation_peaks_at_mean() {
        let p = StParams::default();
        let peak = observation_probability(0.0, &p);
        assert!(close(peak, 1.0 / (20.0 * (2.0 * std::f64::consts::PI).sqrt())));
        assert!(close(observation_probability(20.0, &p) / peak, (-0.5f64).exp()));
        assert!(observation_probability(5.0, &p) > observation_probability(6.0, &p));
    }

    #[test]
    fn transition_cases() {
        assert_eq!(transition_probability(100.0, Some(100.0)), 1.0);
        assert!(close(transition_probability(50.0, Some(200.0)), 0.25));
        assert!(close(transition_probability(200.0, Some(50.0)), 0.25));
        assert_eq!(transition_probability(0.0, Some(0.0)), 1.0);
        assert_eq!(transition_probability(0.0, Some(5.0)), 0.0);
        assert_eq!(transition_probability(5.0, Some(0.0)), 0.0);
        assert_eq!(transition_probability(5.0, None), 0.0);
    }

    #[test]
    fn temporal_cases() {
        let p = StParams::default();
        assert!(close(temporal_weight(&[50.0, 50.0, 50.0], 13.0, &p).unwrap(), 1.0));
        assert!(close(temporal_weight(&[70.0], 3.0, &p).unwrap(), 1.0));
        let w = temporal_weight(&[50.0, 100.0], 75.0, &p).unwrap();
        assert!((w - 0.9487).abs() < 1e-4, "{w}");
        assert!(close(w, 11250.0 / (12500f64.sqrt() * (2.0 * 75.0f64 * 75.0).sqrt())));
        assert_eq!(temporal_weight(&[], 3.0, &p), Err(StError::EmptyPath));
        assert!(close(
            temporal_weight(&[50.0, 100.0], 0.0, &p).unwrap(),
            temporal_weight(&[50.0, 100.0], 1.0, &p).unwrap()
        ));
    }
}
