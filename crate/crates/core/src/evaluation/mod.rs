//! Line-based accuracy assessment: buffer-overlay correctness, completeness
//! tallies and session statistics, plus the robustness experiment runner.

mod experiment;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use experiment::{
    run_experiment, run_pipeline, Alteration, ClickFile, ClickObject, CorrectnessEntry, Dimension,
    ExperimentConfig, ExperimentError, ExperimentInputs, ExperimentReport, ObjectCategory,
    ObjectResult, PipelineOutput, PipelineSettings, ProjectData, ProjectSpec, Scope, VariantReport,
    VariantSpec,
};

use crate::geo::{buffer_mask, rasterize_lines, AffineGeoref, Polyline};
use crate::session::{EventKind, SessionLog};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvaluationError {
    #[error("no delineation pixels")]
    NoDelineationPixels,
    #[error("buffer radius must be positive, got {0}")]
    InvalidRadius(f64),
    #[error("completeness denominator must be positive")]
    ZeroDenominator,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OverlayCounts {
    pub tp: u64,
    pub fp: u64,
}

/// Rasterizes the delineation and counts its pixels inside (TP) and outside
/// (FP) the reference buffer.
pub fn overlay_confusion(
    delineation: &[Polyline],
    reference: &[Polyline],
    radius: f64,
    g: &AffineGeoref,
    rows: usize,
    cols: usize,
) -> Result<OverlayCounts, EvaluationError> {
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(EvaluationError::InvalidRadius(radius));
    }
    let lines = rasterize_lines(delineation, g, rows, cols);
    if lines.is_empty() {
        return Ok(OverlayCounts::default());
    }
    let buffer = buffer_mask(reference, radius, g, rows, cols);
    let tp = lines.intersection_count(&buffer) as u64;
    Ok(OverlayCounts {
        tp,
        fp: lines.count() as u64 - tp,
    })
}

/// `round(100 · count / denom, 1)` with ties rounded up, computed exactly in
/// integers.
pub fn percent_1dp(count: u64, denom: u64) -> f64 {
    assert!(denom > 0);
    let tenths = (2000 * count as u128 + denom as u128) / (2 * denom as u128);
    tenths as f64 / 10.0
}

/// Half-up rounding of an arbitrary percentage to one decimal.
pub fn round_1dp(v: f64) -> f64 {
    (v * 10.0 + 0.5).floor() / 10.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrectnessReport {
    pub commission: f64,
    pub correctness: f64,
    pub buffer_radius: f64,
    pub gsd: f64,
    pub tp: u64,
    pub fp: u64,
}

/// Unrounded `(commission, correctness)` percentages.
pub fn correctness_percentages(c: OverlayCounts) -> Result<(f64, f64), EvaluationError> {
    let n = c.tp + c.fp;
    if n == 0 {
        return Err(EvaluationError::NoDelineationPixels);
    }
    Ok((100.0 * c.fp as f64 / n as f64, 100.0 * c.tp as f64 / n as f64))
}

pub fn correctness_report(c: OverlayCounts, radius: f64, gsd: f64) -> Result<CorrectnessReport, EvaluationError> {
    let n = c.tp + c.fp;
    if n == 0 {
        return Err(EvaluationError::NoDelineationPixels);
    }
    Ok(CorrectnessReport {
        commission: percent_1dp(c.fp, n),
        correctness: percent_1dp(c.tp, n),
        buffer_radius: radius,
        gsd,
        tp: c.tp,
        fp: c.fp,
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompletenessTally {
    pub no_edit: u64,
    pub edit: u64,
    pub manual: u64,
    pub denominator: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompletenessPercent {
    pub no_edit: f64,
    pub edit: f64,
    pub manual: f64,
}

pub fn completeness_tally(t: &CompletenessTally) -> Result<CompletenessPercent, EvaluationError> {
    if t.denominator == 0 {
        return Err(EvaluationError::ZeroDenominator);
    }
    Ok(CompletenessPercent {
        no_edit: percent_1dp(t.no_edit, t.denominator),
        edit: percent_1dp(t.edit, t.denominator),
        manual: percent_1dp(t.manual, t.denominator),
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SessionStats {
    pub duration_s: f64,
    pub clicks: u64,
    pub suggests: u64,
    pub accepts: u64,
    pub edits: u64,
    pub deletes: u64,
    pub zooms: u64,
}

impl SessionStats {
    /// Interactive time relative to a manual-delineation baseline.
    pub fn time_ratio(&self, manual_baseline_s: f64) -> Option<f64> {
        (manual_baseline_s > 0.0).then(|| self.duration_s / manual_baseline_s)
    }
}

pub fn session_stats(log: &SessionLog) -> SessionStats {
    let events = log.events();
    let mut s = SessionStats::default();
    if let (Some(first), Some(last)) = (events.first(), events.last()) {
        s.duration_s = (last.t_ms - first.t_ms) as f64 / 1000.0;
    }
    for e in events {
        let slot = match e.kind {
            EventKind::Click => &mut s.clicks,
            EventKind::Suggest => &mut s.suggests,
            EventKind::Accept => &mut s.accepts,
            EventKind::Edit => &mut s.edits,
            EventKind::Delete => &mut s.deletes,
            EventKind::Zoom => &mut s.zooms,
        };
        *slot += 1;
    }
    s
}
