use crate::config::ReportFormat;
use crate::digest::InputDigest;
use crate::error::CliError;
use crate::records::{read_summaries, to_line, SummaryRecord, REPORT_SCHEMA};
use crate::report::{build_rows, render_table, to_csv, ReportRow};
use serde::Serialize;
use std::io::Write;
use std::path::PathBuf;

#[derive(Clone, Debug)]
pub struct ReportArgs {
    pub summaries: Vec<PathBuf>,
    pub format: ReportFormat,
    /// CSV written alongside the rendered output.
    pub csv: Option<PathBuf>,
}

#[derive(Clone, Debug, Serialize)]
struct JsonReport<'a> {
    schema: &'a str,
    rows: &'a [ReportRow],
    summaries: &'a [InputDigest],
}

pub struct ReportOutput {
    pub rows: Vec<ReportRow>,
    pub records: Vec<SummaryRecord>,
}

pub fn cmd_report(args: &ReportArgs, out: &mut dyn Write) -> Result<ReportOutput, CliError> {
    if args.summaries.is_empty() {
        return Err(CliError::Config("no summary files given".into()));
    }
    let mut records = Vec::new();
    let mut digests = Vec::new();
    for p in &args.summaries {
        records.extend(read_summaries(p)?);
        digests.push(InputDigest::of_file(p)?);
    }
    let rows = build_rows(&records)?;
    let csv = to_csv(&rows);
    if let Some(path) = &args.csv {
        std::fs::write(path, &csv).map_err(|e| CliError::io(path, e))?;
    }
    let text = match args.format {
        ReportFormat::Table => {
            let mut t = render_table(&rows);
            t += "\n* lowest mean test risk of the dataset\n";
            for d in &digests {
                t += &format!("summary {} sha256 {}\n", d.path, d.sha256);
            }
            t
        }
        ReportFormat::Csv => csv,
        ReportFormat::Json => {
            to_line(&JsonReport {
                schema: REPORT_SCHEMA,
                rows: &rows,
                summaries: &digests,
            }) + "\n"
        }
    };
    out.write_all(text.as_bytes())
        .map_err(|e| CliError::Other(format!("stdout: {e}")))?;
    Ok(ReportOutput { rows, records })
}
