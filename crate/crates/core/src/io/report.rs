//! Metrics reports: `metrics.txt` (one `key = value` per line) and
//! `metrics.json` with the same content.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::varopt::Metrics;

/// Key of the only nondeterministic entry of a report.
pub const TIMING_KEY: &str = "wall_clock_seconds";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LandmarkReport {
    pub before_mean_mm: f64,
    pub before_std_mm: f64,
    pub after_mean_mm: f64,
    pub after_std_mm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub timepoints: usize,
    pub metrics: Metrics,
    pub landmarks: Option<LandmarkReport>,
    pub wall_clock_seconds: f64,
}

impl Report {
    pub fn to_text(&self) -> String {
        let m = &self.metrics;
        let k = self.timepoints;
        let mut out = String::new();
        let mut kv = |key: &str, value: String| writeln!(out, "{key} = {value}").expect("write to string");
        kv("timepoints", k.to_string());
        kv("rmse_before", m.rmse_before.to_string());
        kv("rmse_after", m.rmse_after.to_string());
        kv("group_nmi_before", m.group_nmi_before.to_string());
        kv("group_nmi_after", m.group_nmi_after.to_string());
        let pairs = (0..k).flat_map(|i| (i + 1..k).map(move |j| (i, j)));
        for ((i, j), (before, after)) in pairs.zip(m.pair_nmi_before.iter().zip(&m.pair_nmi_after)) {
            kv(&format!("nmi_before_{i}_{j}"), before.to_string());
            kv(&format!("nmi_after_{i}_{j}"), after.to_string());
        }
        for (t, f) in m.negative_jacobian.iter().enumerate() {
            kv(&format!("negative_jacobian_percent_{t}"), (100.0 * f).to_string());
        }
        if let Some(l) = &self.landmarks {
            kv("landmark_error_before_mean_mm", l.before_mean_mm.to_string());
            kv("landmark_error_before_std_mm", l.before_std_mm.to_string());
            kv("landmark_error_after_mean_mm", l.after_mean_mm.to_string());
            kv("landmark_error_after_std_mm", l.after_std_mm.to_string());
        }
        kv(TIMING_KEY, format!("{:.3}", self.wall_clock_seconds));
        out
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    /// Writes `metrics.txt` and `metrics.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        super::write_atomic(&dir.join("metrics.txt"), self.to_text().as_bytes())?;
        super::write_atomic(&dir.join("metrics.json"), self.to_json().as_bytes())
    }
}

/// Report text with the timing line removed, for reproducibility checks.
pub fn without_timing(text: &str) -> String {
    text.lines()
        .filter(|l| !l.starts_with(TIMING_KEY))
        .map(|l| format!("{l}\n"))
        .collect()
}
