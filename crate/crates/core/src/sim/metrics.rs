//! Per-epoch throughput rows and their CSV forms.

use std::collections::BTreeMap;
use std::fmt::Write;

use serde::{Deserialize, Serialize};

use super::scenario::Mode;

/// Upper bounds that applied to an epoch's rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub wireless_mbps: f64,
    pub serving_dl_mbps: f64,
    /// Only present when the STA was served through a WTP.
    pub tunnel_ul_mbps: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub mode: Mode,
    pub location_m: f64,
    pub rep: u32,
    pub serving: String,
    pub mbps: f64,
    pub bounds: Option<Bounds>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub mode: Mode,
    pub location_m: f64,
    pub mean: f64,
    pub stderr: f64,
    pub n: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub rows: Vec<Row>,
}

impl Metrics {
    pub fn merge(mut self, other: Metrics) -> Metrics {
        self.rows.extend(other.rows);
        self
    }

    /// Mean and standard error per (mode, location), in location order.
    pub fn summary(&self) -> Vec<SummaryRow> {
        let mut groups: BTreeMap<(Mode, i64), (f64, Vec<f64>)> = BTreeMap::new();
        for r in &self.rows {
            let key = (r.mode, (r.location_m * 1000.0).round() as i64);
            groups.entry(key).or_insert((r.location_m, vec![])).1.push(r.mbps);
        }
        groups
            .into_iter()
            .map(|((mode, _), (location_m, xs))| {
                let n = xs.len();
                let mean = xs.iter().sum::<f64>() / n as f64;
                let stderr = if n > 1 {
                    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
                    var.sqrt() / (n as f64).sqrt()
                } else {
                    0.0
                };
                SummaryRow { mode, location_m, mean, stderr, n }
            })
            .collect()
    }

    pub fn mean_at(&self, mode: Mode, location_m: f64) -> Option<f64> {
        self.summary().into_iter().find(|s| s.mode == mode && (s.location_m - location_m).abs() < 1e-9).map(|s| s.mean)
    }

    pub fn throughput_csv(&self) -> String {
        let mut out = String::from("mode,location_m,rep,serving,mbps\n");
        for r in &self.rows {
            let _ = writeln!(out, "{},{:.6},{},{},{:.6}", r.mode, r.location_m, r.rep, r.serving, r.mbps);
        }
        out
    }

    pub fn summary_csv(&self) -> String {
        let mut out = String::from("mode,location_m,mean,stderr\n");
        for s in self.summary() {
            let _ = writeln!(out, "{},{:.6},{:.6},{:.6}", s.mode, s.location_m, s.mean, s.stderr);
        }
        out
    }
}
