use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::interpreter::ProfileEvent;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpTiming {
    pub index: usize,
    pub opcode: String,
    pub mean: f64,
}

/// Invoke timing split into kernel time and interpreter overhead.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchResult {
    pub runs: usize,
    pub unit: String,
    pub invoke_min: u64,
    pub invoke_mean: f64,
    pub invoke_max: u64,
    pub ops: Vec<OpTiming>,
    /// Mean over runs of the summed per-op durations.
    pub calculation_mean: f64,
    /// `(invoke_mean - calculation_mean) / invoke_mean`.
    pub overhead_ratio: f64,
}

impl BenchResult {
    /// Folds profiler events, each invoke being its per-op events followed
    /// by one whole-invoke event.
    pub fn from_events(events: &[ProfileEvent], unit: &str) -> Self {
        let mut totals = Vec::new();
        let mut op_sums: Vec<(String, u64)> = Vec::new();
        let mut calculation = 0u64;
        for e in events {
            match e.op_index {
                Some(k) => {
                    if op_sums.len() <= k {
                        op_sums.resize(k + 1, (String::new(), 0));
                    }
                    op_sums[k].0 = e.opcode.map(|o| o.name().to_string()).unwrap_or_default();
                    op_sums[k].1 += e.duration;
                    calculation += e.duration;
                }
                None => totals.push(e.duration),
            }
        }
        let runs = totals.len();
        let per_run = |sum: u64| if runs == 0 { 0.0 } else { sum as f64 / runs as f64 };
        let invoke_mean = per_run(totals.iter().sum());
        let calculation_mean = per_run(calculation);
        let overhead_ratio = if invoke_mean > 0.0 { ((invoke_mean - calculation_mean) / invoke_mean).max(0.0) } else { 0.0 };
        BenchResult {
            runs,
            unit: unit.to_string(),
            invoke_min: totals.iter().copied().min().unwrap_or(0),
            invoke_mean,
            invoke_max: totals.iter().copied().max().unwrap_or(0),
            ops: op_sums
                .into_iter()
                .enumerate()
                .map(|(index, (opcode, sum))| OpTiming { index, opcode, mean: per_run(sum) })
                .collect(),
            calculation_mean,
            overhead_ratio,
        }
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "runs: {} (durations in {})", self.runs, self.unit);
        let _ = writeln!(s, "invoke: min {} mean {:.1} max {}", self.invoke_min, self.invoke_mean, self.invoke_max);
        let _ = writeln!(s, "{:<4}{:<20}{:>14}", "op", "opcode", "mean");
        for op in &self.ops {
            let _ = writeln!(s, "{:<4}{:<20}{:>14.1}", op.index, op.opcode, op.mean);
        }
        let _ = writeln!(s, "calculation: {:.1}", self.calculation_mean);
        let _ = writeln!(s, "interpreter overhead: {:.2}%", self.overhead_ratio * 100.0);
        s
    }
}
