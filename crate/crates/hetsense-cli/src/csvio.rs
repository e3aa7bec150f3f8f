//! CSV emission and parsing.
//!
//! Values are written with Rust's shortest-roundtrip float formatting:
//! parsing a written file recovers the in-memory doubles exactly, and the
//! output is locale-independent. Timestamps never enter a CSV, so equal
//! seeds give byte-identical files.

use std::fmt::Write as _;
use std::path::Path;

use anyhow::{bail, Context, Result};

use hetsense::dynamics::MetricRecord;
use hetsense::optim::Trajectory;

pub const TRAJECTORY_HEADER: &str =
    "t,env_id,loss,sigma1_r,sigma_min_r,q_fro,e_op,e_fro2,recovery_error";

pub fn trajectory_to_string(traj: &Trajectory) -> String {
    let mut out = String::with_capacity(64 * (traj.records.len() + 1));
    out.push_str(TRAJECTORY_HEADER);
    out.push('\n');
    for r in &traj.records {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.t, r.env_id, r.loss, r.sigma1_r, r.sigma_min_r, r.q_fro, r.e_op, r.e_fro2, r.recovery_error
        );
    }
    out
}

pub fn write_trajectory_csv(traj: &Trajectory, path: &Path) -> Result<()> {
    std::fs::write(path, trajectory_to_string(traj))
        .with_context(|| format!("writing trajectory {}", path.display()))
}

pub fn parse_trajectory_csv(text: &str) -> Result<Vec<MetricRecord>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == TRAJECTORY_HEADER => {}
        other => bail!("bad trajectory header: {other:?}"),
    }
    let mut records = Vec::new();
    for (ix, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 9 {
            bail!("row {}: expected 9 fields, got {}", ix + 2, f.len());
        }
        records.push(MetricRecord {
            t: f[0].parse().with_context(|| format!("row {}", ix + 2))?,
            env_id: f[1].parse()?,
            loss: f[2].parse()?,
            sigma1_r: f[3].parse()?,
            sigma_min_r: f[4].parse()?,
            q_fro: f[5].parse()?,
            e_op: f[6].parse()?,
            e_fro2: f[7].parse()?,
            recovery_error: f[8].parse()?,
        });
    }
    Ok(records)
}

/// One sweep cell's end state.
#[derive(Debug, Clone)]
pub struct SummaryRow {
    /// Grid value for numeric sweeps, arm name for comparisons.
    pub grid_value: String,
    pub seed: u64,
    pub final_recovery_error: f64,
    pub final_q_fro: f64,
    pub final_sigma1_r: f64,
    pub diverged: bool,
}

pub const SUMMARY_HEADER: &str =
    "grid_value,seed,final_recovery_error,final_q_fro,final_sigma1_r,diverged";

pub fn summary_to_string(rows: &[SummaryRow]) -> String {
    let mut out = String::new();
    out.push_str(SUMMARY_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.grid_value, r.seed, r.final_recovery_error, r.final_q_fro, r.final_sigma1_r, r.diverged
        );
    }
    out
}

pub fn parse_summary_csv(text: &str) -> Result<Vec<SummaryRow>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == SUMMARY_HEADER => {}
        other => bail!("bad summary header: {other:?}"),
    }
    let mut rows = Vec::new();
    for line in lines {
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 6 {
            bail!("expected 6 fields, got {}", f.len());
        }
        rows.push(SummaryRow {
            grid_value: f[0].to_string(),
            seed: f[1].parse()?,
            final_recovery_error: f[2].parse()?,
            final_q_fro: f[3].parse()?,
            final_sigma1_r: f[4].parse()?,
            diverged: f[5].parse()?,
        });
    }
    Ok(rows)
}

/// Per-grid-value mean and standard error over seeds.
#[derive(Debug, Clone)]
pub struct AggregateRow {
    pub grid_value: String,
    pub n_seeds: usize,
    pub mean_recovery_error: f64,
    pub stderr_recovery_error: f64,
    pub mean_q_fro: f64,
    pub stderr_q_fro: f64,
    pub mean_sigma1_r: f64,
    pub stderr_sigma1_r: f64,
    pub diverged_cells: usize,
}

pub const AGGREGATE_HEADER: &str = "grid_value,n_seeds,mean_recovery_error,stderr_recovery_error,mean_q_fro,stderr_q_fro,mean_sigma1_r,stderr_sigma1_r,diverged_cells";

fn mean_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Aggregate rows in first-seen grid order.
pub fn aggregate(rows: &[SummaryRow]) -> Vec<AggregateRow> {
    let mut order: Vec<String> = Vec::new();
    for r in rows {
        if !order.contains(&r.grid_value) {
            order.push(r.grid_value.clone());
        }
    }
    order
        .into_iter()
        .map(|gv| {
            let cell: Vec<&SummaryRow> = rows.iter().filter(|r| r.grid_value == gv).collect();
            let rec: Vec<f64> = cell.iter().map(|r| r.final_recovery_error).collect();
            let q: Vec<f64> = cell.iter().map(|r| r.final_q_fro).collect();
            let s1: Vec<f64> = cell.iter().map(|r| r.final_sigma1_r).collect();
            let (mr, sr) = mean_stderr(&rec);
            let (mq, sq) = mean_stderr(&q);
            let (ms, ss) = mean_stderr(&s1);
            AggregateRow {
                grid_value: gv,
                n_seeds: cell.len(),
                mean_recovery_error: mr,
                stderr_recovery_error: sr,
                mean_q_fro: mq,
                stderr_q_fro: sq,
                mean_sigma1_r: ms,
                stderr_sigma1_r: ss,
                diverged_cells: cell.iter().filter(|r| r.diverged).count(),
            }
        })
        .collect()
}

pub fn aggregate_to_string(rows: &[AggregateRow]) -> String {
    let mut out = String::new();
    out.push_str(AGGREGATE_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.grid_value,
            r.n_seeds,
            r.mean_recovery_error,
            r.stderr_recovery_error,
            r.mean_q_fro,
            r.stderr_q_fro,
            r.mean_sigma1_r,
            r.stderr_sigma1_r,
            r.diverged_cells
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use hetsense::optim::IterateState;

    fn tiny_trajectory() -> Trajectory {
        let records = vec![
            MetricRecord {
                t: 0,
                env_id: 3,
                loss: 0.125,
                sigma1_r: 1e-3,
                sigma_min_r: 1e-3,
                q_fro: 1e-3,
                e_op: 1e-3,
                e_fro2: 1e-6,
                recovery_error: 1.0000004999,
            },
            MetricRecord {
                t: 1,
                env_id: 0,
                loss: f64::NAN,
                sigma1_r: 0.1234567890123456789,
                sigma_min_r: 0.1,
                q_fro: 0.2,
                e_op: 0.3,
                e_fro2: 0.09,
                recovery_error: 0.99,
            },
        ];
        Trajectory {
            records,
            final_state: IterateState {
                u: nalgebra::DMatrix::zeros(2, 2),
                step: 1,
                rng_cursor: 1,
            },
            config_digest: "x".to_string(),
        }
    }

    #[test]
    fn trajectory_roundtrip_is_bit_exact() {
        let traj = tiny_trajectory();
        let text = trajectory_to_string(&traj);
        let parsed = parse_trajectory_csv(&text).unwrap();
        assert_eq!(parsed.len(), traj.records.len());
        for (a, b) in parsed.iter().zip(traj.records.iter()) {
            assert_eq!(a.t, b.t);
            assert_eq!(a.env_id, b.env_id);
            assert_eq!(a.loss.to_bits(), b.loss.to_bits());
            assert_eq!(a.sigma1_r.to_bits(), b.sigma1_r.to_bits());
            assert_eq!(a.recovery_error.to_bits(), b.recovery_error.to_bits());
        }
    }

    #[test]
    fn zero_step_trajectory_is_header_plus_one_row() {
        let mut traj = tiny_trajectory();
        traj.records.truncate(1);
        let text = trajectory_to_string(&traj);
        assert_eq!(text.lines().count(), 2);
    }

    #[test]
    fn aggregate_means_and_stderr() {
        let rows = vec![
            SummaryRow { grid_value: "2".into(), seed: 1, final_recovery_error: 1.0, final_q_fro: 0.4, final_sigma1_r: 1.0, diverged: false },
            SummaryRow { grid_value: "2".into(), seed: 2, final_recovery_error: 3.0, final_q_fro: 0.6, final_sigma1_r: 1.0, diverged: true },
        ];
        let agg = aggregate(&rows);
        assert_eq!(agg.len(), 1);
        assert_eq!(agg[0].mean_recovery_error, 2.0);
        assert_eq!(agg[0].diverged_cells, 1);
        // stderr of {1, 3}: sd = sqrt(2), se = 1.
        assert!((agg[0].stderr_recovery_error - 1.0).abs() < 1e-15);
        let parsed = parse_summary_csv(&summary_to_string(&rows)).unwrap();
        assert_eq!(parsed.len(), 2);
        assert!(parsed[1].diverged);
    }
}
