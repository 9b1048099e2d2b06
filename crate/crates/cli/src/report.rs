//! Table-shaped summaries of completed runs.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::{bail, Result};
use serde::{Deserialize, Serialize};

use crate::runner::RunRecord;

pub const REPORT_CSV: &str = "report.csv";
pub const REPORT_MD: &str = "report.md";
pub const MARGINS_CSV: &str = "margins.csv";

/// Outcome of one supervised run. Accuracies are fractions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub pipeline: String,
    pub model: String,
    pub loss: String,
    pub freeze_steps: u64,
    pub seed: u64,
    pub dev_acc: f64,
    pub test_acc: f64,
    /// Mean of `p[y] - max_{j != y} p[j]` over the test split.
    pub test_margin: f64,
    pub best_epoch: usize,
    pub epochs: usize,
    pub steps: usize,
}

/// One report line, aggregated over seeds. Accuracies in percent.
#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    pub pipeline: String,
    pub model: String,
    pub loss: String,
    pub freeze_steps: u64,
    pub seeds: usize,
    pub dev_acc_mean: f64,
    /// Sample standard deviation; `None` with fewer than two seeds.
    pub dev_acc_std: Option<f64>,
    pub test_acc_mean: f64,
    pub test_acc_std: Option<f64>,
    pub gap: f64,
    pub test_margin_mean: f64,
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation (n - 1 denominator).
fn sample_std(xs: &[f64]) -> Option<f64> {
    if xs.len() < 2 {
        return None;
    }
    let m = mean(xs);
    Some((xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64).sqrt())
}

/// Groups records by row (records must be sorted by row) and aggregates.
pub fn aggregate(records: &[RunRecord]) -> Result<Vec<ReportRow>> {
    if records.is_empty() {
        bail!("no runs to report");
    }
    let mut rows = Vec::new();
    let mut start = 0;
    while start < records.len() {
        let row = records[start].row;
        let end = start + records[start..].iter().take_while(|r| r.row == row).count();
        let group: Vec<&RunResult> = records[start..end].iter().map(|r| &r.result).collect();
        let first = group[0];
        let dev: Vec<f64> = group.iter().map(|r| 100.0 * r.dev_acc).collect();
        let test: Vec<f64> = group.iter().map(|r| 100.0 * r.test_acc).collect();
        let margins: Vec<f64> = group.iter().map(|r| r.test_margin).collect();
        let (dev_acc_mean, test_acc_mean) = (mean(&dev), mean(&test));
        rows.push(ReportRow {
            pipeline: first.pipeline.clone(),
            model: first.model.clone(),
            loss: first.loss.clone(),
            freeze_steps: first.freeze_steps,
            seeds: group.len(),
            dev_acc_mean,
            dev_acc_std: sample_std(&dev),
            test_acc_mean,
            test_acc_std: sample_std(&test),
            gap: dev_acc_mean - test_acc_mean,
            test_margin_mean: mean(&margins),
        });
        start = end;
    }
    Ok(rows)
}

fn pct(x: f64) -> String {
    format!("{x:.2}")
}

fn pct_opt(x: Option<f64>) -> String {
    x.map(pct).unwrap_or_else(|| "n/a".into())
}

pub fn report_csv(rows: &[ReportRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "pipeline",
        "model",
        "loss",
        "freeze_steps",
        "dev_acc_mean",
        "dev_acc_std",
        "test_acc_mean",
        "test_acc_std",
        "gap",
    ])?;
    for r in rows {
        w.write_record([
            r.pipeline.clone(),
            r.model.clone(),
            r.loss.clone(),
            r.freeze_steps.to_string(),
            pct(r.dev_acc_mean),
            pct_opt(r.dev_acc_std),
            pct(r.test_acc_mean),
            pct_opt(r.test_acc_std),
            pct(r.gap),
        ])?;
    }
    Ok(String::from_utf8(w.into_inner()?)?)
}

pub fn margins_csv(records: &[RunRecord]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "pipeline",
        "model",
        "loss",
        "freeze_steps",
        "seed",
        "dev_acc",
        "test_acc",
        "test_margin",
    ])?;
    for rec in records {
        let r = &rec.result;
        w.write_record([
            r.pipeline.clone(),
            r.model.clone(),
            r.loss.clone(),
            r.freeze_steps.to_string(),
            r.seed.to_string(),
            pct(100.0 * r.dev_acc),
            pct(100.0 * r.test_acc),
            format!("{:.4}", r.test_margin),
        ])?;
    }
    Ok(String::from_utf8(w.into_inner()?)?)
}

fn pm(m: f64, s: Option<f64>) -> String {
    match s {
        Some(s) => format!("{m:.2} ± {s:.2}"),
        None => format!("{m:.2} ± n/a"),
    }
}

/// How `swce` relates to `ce`, ignoring differences below `tol`.
fn relation(swce: f64, ce: f64, tol: f64) -> &'static str {
    if (swce - ce).abs() < tol {
        "equal"
    } else if swce < ce {
        "lower"
    } else {
        "higher"
    }
}

/// Human-readable table plus, for every row pair differing only in the
/// loss, a statement comparing SWCE with CE.
pub fn report_markdown(rows: &[ReportRow]) -> String {
    let mut s = String::new();
    s.push_str("| Pipeline | Model | Loss | Freeze steps | Seeds | Dev Acc (%) | Test Acc (%) | Gap (dev - test) | Test margin |\n");
    s.push_str("|---|---|---|---:|---:|---:|---:|---:|---:|\n");
    for r in rows {
        let _ = writeln!(
            s,
            "| {} | {} | {} | {} | {} | {} | {} | {:.2} | {:.4} |",
            r.pipeline,
            r.model,
            r.loss,
            r.freeze_steps,
            r.seeds,
            pm(r.dev_acc_mean, r.dev_acc_std),
            pm(r.test_acc_mean, r.test_acc_std),
            r.gap,
            r.test_margin_mean
        );
    }
    let pairs: Vec<(&ReportRow, &ReportRow)> = rows
        .iter()
        .filter(|r| r.loss == "CE")
        .filter_map(|ce| {
            rows.iter()
                .find(|o| {
                    o.loss == "SWCE" && o.pipeline == ce.pipeline && o.model == ce.model && o.freeze_steps == ce.freeze_steps
                })
                .map(|sw| (ce, sw))
        })
        .collect();
    if !pairs.is_empty() {
        s.push_str("\n## SWCE vs CE\n\n");
        for (ce, sw) in pairs {
            let _ = writeln!(
                s,
                "- {} / {} (N={}): mean test margin {:.4} (SWCE) vs {:.4} (CE), SWCE {}; dev-test gap {:.2} (SWCE) vs {:.2} (CE), SWCE {}; test accuracy {:.2} (SWCE) vs {:.2} (CE), SWCE {}.",
                ce.pipeline,
                ce.model,
                ce.freeze_steps,
                sw.test_margin_mean,
                ce.test_margin_mean,
                relation(sw.test_margin_mean, ce.test_margin_mean, 5e-5),
                sw.gap,
                ce.gap,
                if (sw.gap.abs() - ce.gap.abs()).abs() < 5e-3 {
                    "equal in magnitude"
                } else if sw.gap.abs() < ce.gap.abs() {
                    "smaller in magnitude"
                } else {
                    "larger in magnitude"
                },
                sw.test_acc_mean,
                ce.test_acc_mean,
                relation(sw.test_acc_mean, ce.test_acc_mean, 5e-3),
            );
        }
    }
    s
}

/// Writes the three report files into `out`.
pub fn write_reports(out: &Path, records: &[RunRecord]) -> Result<Vec<ReportRow>> {
    let rows = aggregate(records)?;
    fs::write(out.join(REPORT_CSV), report_csv(&rows)?)?;
    fs::write(out.join(REPORT_MD), report_markdown(&rows))?;
    fs::write(out.join(MARGINS_CSV), margins_csv(records)?)?;
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(row: usize, seed: u64, dev: f64, test: f64, loss: &str) -> RunRecord {
        RunRecord {
            row,
            seed_index: seed as usize,
            result: RunResult {
                pipeline: "handcrafted-features".into(),
                model: "GRU".into(),
                loss: loss.into(),
                freeze_steps: 0,
                seed,
                dev_acc: dev,
                test_acc: test,
                test_margin: 0.5,
                best_epoch: 1,
                epochs: 1,
                steps: 1,
            },
        }
    }

    #[test]
    fn single_seed_reports_na_std() {
        let rows = aggregate(&[record(0, 0, 0.9, 0.8, "CE")]).unwrap();
        let csv = report_csv(&rows).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(
            lines[0],
            "pipeline,model,loss,freeze_steps,dev_acc_mean,dev_acc_std,test_acc_mean,test_acc_std,gap"
        );
        assert_eq!(lines[1], "handcrafted-features,GRU,CE,0,90.00,n/a,80.00,n/a,10.00");
    }

    #[test]
    fn std_uses_sample_denominator() {
        let rows = aggregate(&[record(0, 0, 0.8, 0.7, "CE"), record(0, 1, 0.9, 0.9, "CE")]).unwrap();
        let r = &rows[0];
        assert!((r.dev_acc_mean - 85.0).abs() < 1e-12);
        // two points 10 apart: sample std = 10 / sqrt(2)
        assert!((r.dev_acc_std.unwrap() - 10.0 / 2f64.sqrt()).abs() < 1e-12);
        assert!((r.gap - (r.dev_acc_mean - r.test_acc_mean)).abs() < 1e-12);
    }

    #[test]
    fn markdown_states_the_loss_comparison() {
        let rows = aggregate(&[record(0, 0, 0.9, 0.8, "CE"), record(1, 0, 0.85, 0.84, "SWCE")]).unwrap();
        let md = report_markdown(&rows);
        assert!(md.contains("## SWCE vs CE"));
        assert!(md.contains("smaller in magnitude"));
    }
}
