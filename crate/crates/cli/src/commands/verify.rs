use crate::error::CliError;
use crate::records::{write_json, VerifyRecord, VERIFY_SCHEMA};
use ldp_moe::verify::{run_suite, VerifyOptions};
use std::io::Write;
use std::path::PathBuf;

#[derive(Clone, Debug, Default)]
pub struct VerifyArgs {
    pub options: VerifyOptions,
    pub output: Option<PathBuf>,
}

/// Runs the suites; any violation becomes a verification error after the
/// report (with the worst case of each failing check) is written.
pub fn cmd_verify(args: &VerifyArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<VerifyRecord, CliError> {
    let report = run_suite(&args.options)?;
    let record = VerifyRecord {
        schema: VERIFY_SCHEMA.to_owned(),
        passed: report.passed(),
        options: args.options.clone(),
        report,
    };
    if let Some(path) = &args.output {
        write_json(path, &record)?;
    }
    let mut text = format!(
        "{:<28} {:>7} {:>7} {:>10} {:>14}\n",
        "check", "trials", "skipped", "violations", "worst slack"
    );
    for c in &record.report.checks {
        text += &format!(
            "{:<28} {:>7} {:>7} {:>10} {:>14.6e}\n",
            c.name, c.trials, c.skipped, c.violations, c.worst_slack
        );
    }
    text += if record.passed { "all checks passed\n" } else { "violations found\n" };
    out.write_all(text.as_bytes())
        .map_err(|e| CliError::Other(format!("stdout: {e}")))?;
    if record.passed {
        return Ok(record);
    }
    let mut failing = Vec::new();
    for c in record.report.checks.iter().filter(|c| !c.passed()) {
        let _ = writeln!(
            err,
            "{}: {} of {} trials violated, worst slack {:e}\n  worst case: {}",
            c.name,
            c.violations,
            c.trials,
            c.worst_slack,
            c.detail.as_deref().unwrap_or("(no detail)")
        );
        failing.push(c.name.clone());
    }
    Err(CliError::Verification(failing.join(", ")))
}
