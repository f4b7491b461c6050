//! Mean and standard deviation per dataset and LDP setting, with the best
//! test risk of each dataset starred.

use crate::error::CliError;
use crate::records::SummaryRecord;
use ldp_moe::model::LdpConfig;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;

/// One CSV line; `best` marks the lowest mean test risk of its dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub dataset: String,
    pub setting: String,
    pub epsilon: Option<f64>,
    pub completed: usize,
    pub failed: usize,
    pub train_mean: Option<f64>,
    pub train_std: Option<f64>,
    pub test_mean: Option<f64>,
    pub test_std: Option<f64>,
    pub best: bool,
}

fn setting_key(ldp: &LdpConfig) -> (u8, f64) {
    match ldp.epsilon() {
        None => (0, 0.0),
        Some(e) => (1, e),
    }
}

/// Rows sorted by dataset in order of first appearance, then by setting
/// (unconstrained first, then increasing epsilon).
pub fn build_rows(records: &[SummaryRecord]) -> Result<Vec<ReportRow>, CliError> {
    let mut datasets: Vec<&str> = Vec::new();
    for r in records {
        if !datasets.contains(&r.dataset.as_str()) {
            datasets.push(&r.dataset);
        }
    }
    let mut rows = Vec::with_capacity(records.len());
    for name in datasets {
        let mut group: Vec<&SummaryRecord> = records.iter().filter(|r| r.dataset == name).collect();
        group.sort_by(|a, b| {
            let (ka, kb) = (setting_key(&a.summary.ldp), setting_key(&b.summary.ldp));
            ka.0.cmp(&kb.0).then(ka.1.total_cmp(&kb.1))
        });
        if let Some(w) = group.windows(2).find(|w| w[0].setting == w[1].setting) {
            return Err(CliError::Data(format!(
                "dataset `{name}` has two summaries for setting `{}`",
                w[0].setting
            )));
        }
        let best = group
            .iter()
            .filter_map(|r| r.summary.test.map(|t| t.mean))
            .fold(f64::INFINITY, f64::min);
        for r in group {
            let s = &r.summary;
            rows.push(ReportRow {
                dataset: r.dataset.clone(),
                setting: r.setting.clone(),
                epsilon: s.ldp.epsilon(),
                completed: s.completed,
                failed: s.failed,
                train_mean: s.train.map(|v| v.mean),
                train_std: s.train.map(|v| v.std),
                test_mean: s.test.map(|v| v.mean),
                test_std: s.test.map(|v| v.std),
                best: s.test.is_some_and(|t| t.mean == best),
            });
        }
    }
    Ok(rows)
}

pub fn to_csv(rows: &[ReportRow]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).expect("rows serialize");
    }
    String::from_utf8(w.into_inner().expect("in-memory writer")).expect("csv is utf-8")
}

pub fn parse_csv(text: &str) -> Result<Vec<ReportRow>, CliError> {
    csv::Reader::from_reader(text.as_bytes())
        .deserialize()
        .collect::<Result<_, _>>()
        .map_err(|e| CliError::Data(format!("report csv: {e}")))
}

fn cell(mean: Option<f64>, std: Option<f64>, star: bool) -> String {
    match (mean, std) {
        (Some(m), Some(s)) => format!("{m:.5} ± {s:.5}{}", if star { " *" } else { "" }),
        _ => "failed".to_owned(),
    }
}

/// Plain-text table: one column per setting, train and test lines per dataset.
pub fn render_table(rows: &[ReportRow]) -> String {
    let mut settings: Vec<(&str, (u8, f64))> = Vec::new();
    for r in rows {
        if !settings.iter().any(|(s, _)| *s == r.setting) {
            let key = r.epsilon.map_or((0, 0.0), |e| (1, e));
            settings.push((&r.setting, key));
        }
    }
    settings.sort_by(|a, b| a.1 .0.cmp(&b.1 .0).then(a.1 .1.total_cmp(&b.1 .1)));
    let mut datasets: Vec<&str> = Vec::new();
    for r in rows {
        if !datasets.contains(&r.dataset.as_str()) {
            datasets.push(&r.dataset);
        }
    }
    let mut grid: Vec<Vec<String>> = Vec::new();
    let mut header = vec![String::new()];
    header.extend(settings.iter().map(|(s, _)| s.to_string()));
    grid.push(header);
    for d in &datasets {
        for (label, test) in [("R_S", false), ("R_T", true)] {
            let mut line = vec![format!("{d} {label}")];
            for (s, _) in &settings {
                let text = match rows.iter().find(|r| r.dataset == *d && r.setting == *s) {
                    None => String::new(),
                    Some(r) if test => cell(r.test_mean, r.test_std, r.best),
                    Some(r) => cell(r.train_mean, r.train_std, false),
                };
                line.push(text);
            }
            grid.push(line);
        }
    }
    let cols = grid[0].len();
    let widths: Vec<usize> = (0..cols)
        .map(|c| grid.iter().map(|l| l[c].chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for line in &grid {
        let cells: Vec<String> = line
            .iter()
            .zip(&widths)
            .map(|(t, w)| format!("{t}{}", " ".repeat(w - t.chars().count())))
            .collect();
        writeln!(out, "{}", cells.join("  ").trim_end()).expect("writing to a String");
    }
    out
}
