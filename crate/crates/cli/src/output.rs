//! CSV tables and the Markdown report. Floats use Rust's shortest
//! round-trip formatting so every table parses back to the same bits.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use icas_audit::attacks::{AttackConfig, ScoredSample};
use icas_audit::fit::FitResult;
use icas_audit::metrics::EvalReport;

use crate::error::CliError;

fn csv_writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>, CliError> {
    let file = File::create(path).map_err(|e| CliError::io(path, e))?;
    Ok(csv::Writer::from_writer(BufWriter::new(file)))
}

fn finish(mut w: csv::Writer<BufWriter<File>>, path: &Path) -> Result<(), CliError> {
    w.flush().map_err(|e| CliError::io(path, e))
}

pub fn write_scores(path: &Path, scores: &[ScoredSample]) -> Result<(), CliError> {
    let mut w = csv_writer(path)?;
    w.write_record(["sample_id", "label", "score", "direction"])?;
    for s in scores {
        w.write_record([&s.sample_id, s.label.as_str(), &s.score.to_string(), s.direction.as_str()])?;
    }
    finish(w, path)
}

pub fn write_roc(path: &Path, roc: &[(f64, f64)]) -> Result<(), CliError> {
    let mut w = csv_writer(path)?;
    w.write_record(["fpr", "tpr"])?;
    for (fpr, tpr) in roc {
        w.write_record([fpr.to_string(), tpr.to_string()])?;
    }
    finish(w, path)
}

/// Metric name for a TPR column, e.g. `tpr_at_fpr_0.05`.
pub fn tpr_metric(budget: f64) -> String {
    format!("tpr_at_fpr_{budget}")
}

/// One row per (attack, metric).
pub fn write_metrics(path: &Path, rows: &[(AttackConfig, EvalReport)]) -> Result<(), CliError> {
    let mut w = csv_writer(path)?;
    w.write_record(["attack", "metric", "value"])?;
    for (attack, r) in rows {
        let slug = attack.slug();
        let mut put = |metric: &str, value: String| w.write_record([slug.as_str(), metric, &value]);
        put("auroc", r.auroc.to_string())?;
        for (b, tpr) in &r.tpr_at_fpr {
            put(&tpr_metric(*b), tpr.to_string())?;
        }
        put("asr", r.asr.to_string())?;
        put("threshold", r.threshold.to_string())?;
        put("n_member", r.n_member.to_string())?;
        put("n_nonmember", r.n_nonmember.to_string())?;
    }
    finish(w, path)
}

fn percent(budget: f64) -> String {
    let s = format!("{:.6}", budget * 100.0);
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

/// Aligned Markdown table: method, AUROC, TPR at each budget, ASR.
pub fn render_report(rows: &[(AttackConfig, EvalReport)], budgets: &[f64]) -> String {
    let mut header = vec!["Method".to_string(), "AUROC".to_string()];
    header.extend(budgets.iter().map(|b| format!("TPR@{}%FPR", percent(*b))));
    header.push("ASR".into());
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|(attack, r)| {
            let mut row = vec![attack.to_string(), format!("{:.4}", r.auroc)];
            row.extend(r.tpr_at_fpr.iter().map(|(_, t)| format!("{t:.4}")));
            row.push(format!("{:.4}", r.asr));
            row
        })
        .collect();
    let widths: Vec<usize> = (0..header.len())
        .map(|c| std::iter::once(&header).chain(&body).map(|r| r[c].chars().count()).max().unwrap_or(0))
        .collect();
    let line = |cells: &[String]| -> String {
        let padded: Vec<String> = cells
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(i, (c, &w))| {
                let pad = " ".repeat(w - c.chars().count());
                if i == 0 {
                    format!("{c}{pad}")
                } else {
                    format!("{pad}{c}")
                }
            })
            .collect();
        format!("| {} |\n", padded.join(" | "))
    };
    let rule: Vec<String> = widths
        .iter()
        .enumerate()
        .map(|(i, &w)| if i == 0 { "-".repeat(w + 2) } else { format!("{}:", "-".repeat(w + 1)) })
        .collect();
    let mut out = line(&header);
    out.push_str(&format!("|{}|\n", rule.join("|")));
    for row in &body {
        out.push_str(&line(row));
    }
    if let Some((_, r)) = rows.first() {
        out.push_str(&format!("\n{} members, {} non-members.\n", r.n_member, r.n_nonmember));
    }
    out
}

pub fn render_fit(fit: &FitResult) -> String {
    format!("slope = {}\nintercept = {}\npearson_r = {}\nn = {}\n", fit.slope, fit.intercept, fit.pearson_r, fit.n)
}

pub fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    let mut f = File::create(path).map_err(|e| CliError::io(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| CliError::io(path, e))
}
