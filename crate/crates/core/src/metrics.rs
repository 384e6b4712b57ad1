//! Evaluation metrics computed from run traces.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("trace is empty")]
    EmptyTrace,
    #[error("metric undefined: {0}")]
    Undefined(String),
}

/// One row of a run trace. Field order is the CSV column order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub t: f64,
    pub p_pv: f64,
    pub p_ref: f64,
    pub p_mpp_truth: f64,
    pub v_dc: f64,
    pub v_dc_ref: f64,
    pub k_tr: f64,
    pub gamma: f64,
    pub v_step: f64,
    pub alpha: u8,
}

/// Tracking error: distance to the reference when it is reachable, otherwise
/// distance to the true MPP.
pub fn tracking_error(rec: &TraceRecord) -> f64 {
    if rec.p_ref <= rec.p_mpp_truth {
        (rec.p_pv - rec.p_ref).abs()
    } else {
        (rec.p_pv - rec.p_mpp_truth).abs()
    }
}

fn trapezoid(t: impl Iterator<Item = f64>, y: impl Iterator<Item = f64>) -> f64 {
    let pts: Vec<(f64, f64)> = t.zip(y).collect();
    pts.windows(2)
        .map(|w| 0.5 * (w[1].0 - w[0].0) * (w[0].1 + w[1].1))
        .sum()
}

/// Ratio of the integrated absolute tracking error to the integrated absolute
/// PV power (trapezoidal rule).
pub fn e_sum(trace: &[TraceRecord]) -> Result<f64, MetricsError> {
    if trace.is_empty() {
        return Err(MetricsError::EmptyTrace);
    }
    let times = || trace.iter().map(|r| r.t);
    let num = trapezoid(times(), trace.iter().map(tracking_error));
    let den = trapezoid(times(), trace.iter().map(|r| r.p_pv.abs()));
    if den <= 0.0 || !den.is_finite() {
        return Err(MetricsError::Undefined(
            "integrated |p_pv| is zero".to_string(),
        ));
    }
    Ok(num / den)
}

/// Cumulative |Δv_dc| for one voltage band `[lower, upper)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OscillationBin {
    /// `None` means unbounded below.
    pub lower: Option<f64>,
    /// `None` means unbounded above.
    pub upper: Option<f64>,
    pub volts: f64,
}

impl OscillationBin {
    pub fn label(&self) -> String {
        match (self.lower, self.upper) {
            (None, Some(u)) => format!("v<{u}"),
            (Some(l), Some(u)) => format!("{l}<=v<{u}"),
            (Some(l), None) => format!("v>={l}"),
            (None, None) => "all".to_string(),
        }
    }
}

pub const DEFAULT_BIN_EDGES: [f64; 2] = [450.0, 500.0];

/// Sum of absolute consecutive v_dc differences, attributed to the band of
/// the earlier sample. `edges` must be strictly increasing.
pub fn vdc_oscillation_bins(trace: &[TraceRecord], edges: &[f64]) -> Vec<OscillationBin> {
    let mut bins: Vec<OscillationBin> = (0..=edges.len())
        .map(|k| OscillationBin {
            lower: k.checked_sub(1).map(|j| edges[j]),
            upper: edges.get(k).copied(),
            volts: 0.0,
        })
        .collect();
    for w in trace.windows(2) {
        let k = edges.partition_point(|&e| e <= w[0].v_dc);
        bins[k].volts += (w[1].v_dc - w[0].v_dc).abs();
    }
    bins
}

/// Peak excess of p_pv over p_ref (zero if never above) and the time spent
/// more than `deadband` above the reference. Each sample accounts for the
/// interval up to the next one.
pub fn overshoot_stats(trace: &[TraceRecord], deadband: f64) -> (f64, f64) {
    let max = trace
        .iter()
        .map(|r| (r.p_pv - r.p_ref).max(0.0))
        .fold(0.0, f64::max);
    let duration = trace
        .windows(2)
        .filter(|w| w[0].p_pv - w[0].p_ref > deadband)
        .map(|w| w[1].t - w[0].t)
        .fold(0.0, |acc, dt| acc + dt);
    (max, duration)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub e_sum: f64,
    pub vdc_osc_bins: Vec<OscillationBin>,
    pub max_overshoot: f64,
    pub overshoot_duration: f64,
    pub err_samples: Vec<f64>,
}

impl MetricsSummary {
    pub fn from_trace(
        trace: &[TraceRecord],
        bin_edges: &[f64],
        overshoot_deadband: f64,
    ) -> Result<Self, MetricsError> {
        let (max_overshoot, overshoot_duration) = overshoot_stats(trace, overshoot_deadband);
        Ok(Self {
            e_sum: e_sum(trace)?,
            vdc_osc_bins: vdc_oscillation_bins(trace, bin_edges),
            max_overshoot,
            overshoot_duration,
            err_samples: trace.iter().map(tracking_error).collect(),
        })
    }

    pub fn total_oscillation(&self) -> f64 {
        self.vdc_osc_bins.iter().map(|b| b.volts).sum()
    }
}
