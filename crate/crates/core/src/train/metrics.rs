//! Per-iteration training metrics and their CSV / JSON-lines forms.

use serde::{Deserialize, Serialize};
use std::io::Write;
use thiserror::Error;

/// Columns of the metrics contract, one row per training iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub iter: u64,
    pub wall_ms: u64,
    pub loss: f64,
    pub quant_err: f64,
    pub qual_err: f64,
    pub grad_mean_abs: f64,
    pub grad_std: f64,
}

pub const METRICS_HEADER: &str = "iter,wall_ms,loss,quant_err,qual_err,grad_mean_abs,grad_std";

/// Append-only metrics sink for one training run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunMetrics {
    pub rows: Vec<MetricsRow>,
}

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("metrics csv line {line}: {detail}")]
    Parse { line: usize, detail: String },
}

impl RunMetrics {
    pub fn push(&mut self, row: MetricsRow) {
        if let Some(last) = self.rows.last() {
            debug_assert_eq!(last.iter + 1, row.iter, "iterations must be gapless");
        }
        self.rows.push(row);
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    /// Run-averaged mean absolute gradient, the Fig.-8-style summary.
    pub fn mean_grad_abs(&self) -> f64 {
        if self.rows.is_empty() {
            return 0.0;
        }
        self.rows.iter().map(|r| r.grad_mean_abs).sum::<f64>() / self.rows.len() as f64
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(METRICS_HEADER);
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.iter, r.wall_ms, r.loss, r.quant_err, r.qual_err, r.grad_mean_abs, r.grad_std
            ));
        }
        out
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<(), MetricsError> {
        w.write_all(self.to_csv().as_bytes())?;
        Ok(())
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<(), MetricsError> {
        for r in &self.rows {
            serde_json::to_writer(&mut w, r).map_err(std::io::Error::other)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn from_csv(text: &str) -> Result<RunMetrics, MetricsError> {
        let mut rows = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if i == 0 {
                if line != METRICS_HEADER {
                    return Err(MetricsError::Parse {
                        line: 1,
                        detail: format!("unexpected header {line:?}"),
                    });
                }
                continue;
            }
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 7 {
                return Err(MetricsError::Parse {
                    line: i + 1,
                    detail: format!("expected 7 fields, got {}", fields.len()),
                });
            }
            let parse_f = |s: &str, line: usize| -> Result<f64, MetricsError> {
                s.parse().map_err(|e| MetricsError::Parse {
                    line,
                    detail: format!("{e}: {s:?}"),
                })
            };
            let parse_u = |s: &str, line: usize| -> Result<u64, MetricsError> {
                s.parse().map_err(|e| MetricsError::Parse {
                    line,
                    detail: format!("{e}: {s:?}"),
                })
            };
            rows.push(MetricsRow {
                iter: parse_u(fields[0], i + 1)?,
                wall_ms: parse_u(fields[1], i + 1)?,
                loss: parse_f(fields[2], i + 1)?,
                quant_err: parse_f(fields[3], i + 1)?,
                qual_err: parse_f(fields[4], i + 1)?,
                grad_mean_abs: parse_f(fields[5], i + 1)?,
                grad_std: parse_f(fields[6], i + 1)?,
            });
        }
        Ok(RunMetrics { rows })
    }
}

/// Sliding-window moving average.
#[derive(Debug, Clone)]
pub struct MovingAverage {
    window: usize,
    values: std::collections::VecDeque<f64>,
}

impl MovingAverage {
    pub fn new(window: usize) -> Self {
        assert!(window >= 1);
        MovingAverage {
            window,
            values: std::collections::VecDeque::with_capacity(window),
        }
    }

    pub fn push(&mut self, v: f64) {
        if self.values.len() == self.window {
            self.values.pop_front();
        }
        self.values.push_back(v);
    }

    /// Mean of the window, or `default` before the first observation.
    pub fn mean_or(&self, default: f64) -> f64 {
        if self.values.is_empty() {
            default
        } else {
            self.values.iter().sum::<f64>() / self.values.len() as f64
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(iter: u64) -> MetricsRow {
        MetricsRow {
            iter,
            wall_ms: 10 * iter,
            loss: 1.0 / (iter as f64 + 1.0),
            quant_err: 0.5,
            qual_err: 0.25,
            grad_mean_abs: 0.125,
            grad_std: 0.0625,
        }
    }

    #[test]
    fn csv_roundtrip_is_exact() {
        let mut m = RunMetrics::default();
        for i in 1..=5 {
            m.push(row(i));
        }
        let csv = m.to_csv();
        let back = RunMetrics::from_csv(&csv).unwrap();
        assert_eq!(m, back);
    }

    #[test]
    fn csv_parse_rejects_bad_header() {
        assert!(RunMetrics::from_csv("nope\n1,2,3,4,5,6,7\n").is_err());
    }

    #[test]
    fn moving_average_slides() {
        let mut ma = MovingAverage::new(3);
        assert_eq!(ma.mean_or(1.0), 1.0);
        ma.push(1.0);
        ma.push(0.5);
        assert!((ma.mean_or(1.0) - 0.75).abs() < 1e-12);
        ma.push(0.0);
        ma.push(0.0); // evicts the 1.0
        assert!((ma.mean_or(1.0) - (0.5 / 3.0)).abs() < 1e-12);
    }

    #[test]
    fn jsonl_lines_parse_back() {
        let mut m = RunMetrics::default();
        m.push(row(1));
        let mut buf = Vec::new();
        m.write_jsonl(&mut buf).unwrap();
        let line = String::from_utf8(buf).unwrap();
        let back: MetricsRow = serde_json::from_str(line.trim()).unwrap();
        assert_eq!(back, m.rows[0]);
    }
}
