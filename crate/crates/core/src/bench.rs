//! Timing runs across maxdist settings and log-log scaling fits.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::metrics::{summarize, Summary};
use crate::pipeline::{match_trajectory, MatchContext, MatchError, MatchSettings};
use crate::trajectory::Trajectory;
use crate::voting::MaxDist;

/// Settings compared by default.
pub const MAXDIST_GRID: [MaxDist; 5] = [
    MaxDist::Bounded(1000.0),
    MaxDist::Bounded(2500.0),
    MaxDist::Bounded(4000.0),
    MaxDist::Bounded(5500.0),
    MaxDist::Unbounded,
];

pub fn maxdist_label(m: MaxDist) -> String {
    match m {
        MaxDist::Bounded(d) => format!("{d}"),
        MaxDist::Unbounded => "unbounded".to_string(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRun {
    pub maxdist: MaxDist,
    pub trajectory_id: String,
    pub pings: usize,
    pub full_process_secs: f64,
    pub voting_secs: f64,
    pub relaxations: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchSetting {
    pub maxdist: MaxDist,
    pub full_process: Summary,
    pub voting: Summary,
    /// Slope of log(voting time) against log(pings).
    pub voting_slope: Option<f64>,
    /// Slope of log(full process time) against log(pings).
    pub full_slope: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchResult {
    pub runs: Vec<BenchRun>,
    pub settings: Vec<BenchSetting>,
}

/// Ordinary least squares slope of `ys` against `xs`. `None` when the
/// inputs have fewer than two distinct x values.
pub fn ols_slope(xs: &[f64], ys: &[f64]) -> Option<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return None;
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    Some(sxy / sxx)
}

fn log_slope(runs: &[&BenchRun], time: impl Fn(&BenchRun) -> f64) -> Option<f64> {
    let (xs, ys): (Vec<f64>, Vec<f64>) = runs
        .iter()
        .filter(|r| time(r) > 0.0)
        .map(|r| ((r.pings as f64).ln(), time(r).ln()))
        .unzip();
    ols_slope(&xs, &ys)
}

/// Matches every trajectory once per maxdist setting, sequentially so the
/// timings do not compete for cores.
pub fn bench(
    ctx: &MatchContext,
    trajectories: &[Trajectory],
    base: &MatchSettings,
    grid: &[MaxDist],
) -> Result<BenchResult, MatchError> {
    let mut runs = Vec::new();
    for &maxdist in grid {
        let mut settings = *base;
        settings.voting.maxdist = maxdist;
        for t in trajectories {
            let m = match_trajectory(ctx, t, &settings)?;
            runs.push(BenchRun {
                maxdist,
                trajectory_id: t.id.clone(),
                pings: m.trellis.len(),
                full_process_secs: m.report.full_process_secs,
                voting_secs: m.report.voting_secs,
                relaxations: m.report.relaxations,
            });
        }
    }
    let settings = grid
        .iter()
        .filter_map(|&maxdist| {
            let mine: Vec<&BenchRun> = runs.iter().filter(|r| r.maxdist == maxdist).collect();
            let full: Vec<f64> = mine.iter().map(|r| r.full_process_secs).collect();
            let voting: Vec<f64> = mine.iter().map(|r| r.voting_secs).collect();
            Some(BenchSetting {
                maxdist,
                full_process: summarize(&full).ok()?,
                voting: summarize(&voting).ok()?,
                voting_slope: log_slope(&mine, |r| r.voting_secs),
                full_slope: log_slope(&mine, |r| r.full_process_secs),
            })
        })
        .collect();
    Ok(BenchResult { runs, settings })
}

/// One row per (setting, phase) with the summary columns and the fitted
/// slope.
pub fn write_bench_table<W: Write>(mut w: W, result: &BenchResult) -> std::io::Result<()> {
    writeln!(w, "maxdist\tphase\tcount\t{}\tloglog_slope", Summary::HEADER.join("\t"))?;
    for s in &result.settings {
        for (phase, summary, slope) in [
            ("full_process", &s.full_process, s.full_slope),
            ("voting", &s.voting, s.voting_slope),
        ] {
            write!(w, "{}\t{phase}\t{}", maxdist_label(s.maxdist), summary.count)?;
            for v in summary.columns() {
                write!(w, "\t{v:.6}")?;
            }
            match slope {
                Some(v) => writeln!(w, "\t{v:.4}")?,
                None => writeln!(w, "\t")?,
            }
        }
    }
    Ok(())
}
