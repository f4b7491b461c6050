use crate::config::{ExperimentConfig, ReportFormat};
use crate::error::CliError;
use crate::load::{load, Loaded};
use crate::records::{to_line, SummaryRecord, SUMMARY_SCHEMA};
use crate::report::{build_rows, render_table, to_csv};
use ldp_moe::model::LdpConfig;
use ldp_moe::train::{RunEvent, RunOutcome};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

pub const SUMMARY_FILE: &str = "summary.jsonl";
pub const LOG_FILE: &str = "train.log";

/// Directory name of one sweep setting, e.g. `none` or `eps-0.5`.
pub fn setting_dir(setting: LdpConfig) -> String {
    match setting.epsilon() {
        None => "none".to_owned(),
        Some(e) => format!("eps-{e}"),
    }
}

pub fn model_file(run: usize) -> String {
    format!("run-{run}.model")
}

#[derive(Clone, Debug)]
pub struct TrainOutput {
    pub records: Vec<SummaryRecord>,
    pub summary_files: Vec<PathBuf>,
}

fn unix_time() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

fn train_setting(
    config: &ExperimentConfig,
    loaded: &Loaded,
    setting: LdpConfig,
    dir: &Path,
) -> Result<SummaryRecord, CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let log_path = dir.join(LOG_FILE);
    let file = std::fs::File::create(&log_path).map_err(|e| CliError::io(&log_path, e))?;
    let mut log = std::io::BufWriter::new(file);
    let mut log_err = None;
    let train = config.train_config(setting);
    let output = loaded.run(&train, &mut |event| {
        let line = match event {
            RunEvent::Epoch { run, log } => format!(
                "t={:.3} setting={setting} run={run} epoch={} loss={:e}",
                unix_time(),
                log.epoch,
                log.mean_batch_loss
            ),
            RunEvent::Finished { run, record } => match &record.outcome {
                RunOutcome::Completed { train_risk, test_risk } => format!(
                    "t={:.3} setting={setting} run={run} done train_risk={train_risk:e} test_risk={test_risk:e}",
                    unix_time()
                ),
                RunOutcome::Failed { epoch, reason } => format!(
                    "t={:.3} setting={setting} run={run} failed epoch={epoch} reason={reason}",
                    unix_time()
                ),
            },
        };
        if log_err.is_none() {
            if let Err(e) = writeln!(log, "{line}") {
                log_err = Some(e);
            }
        }
    })?;
    if let Some(e) = log_err {
        return Err(CliError::io(&log_path, e));
    }
    log.flush().map_err(|e| CliError::io(&log_path, e))?;
    let mut model_files = Vec::with_capacity(output.models.len());
    for (run, model) in output.models.iter().enumerate() {
        match model {
            Some(m) if config.save_models => {
                let name = model_file(run);
                m.save(dir.join(&name))?;
                model_files.push(Some(name));
            }
            _ => model_files.push(None),
        }
    }
    Ok(SummaryRecord {
        schema: SUMMARY_SCHEMA.to_owned(),
        dataset: config.dataset_name(),
        setting: setting.tag(),
        summary: output.summary,
        model_files,
        data: loaded.stats.clone(),
        inputs: loaded.inputs.clone(),
        config: config.clone(),
    })
}

/// Trains every sweep setting and writes one directory per setting. Runs
/// that diverge are recorded; the command then fails with a divergence
/// error after every file is written.
pub fn cmd_train(config: &ExperimentConfig, out: &mut dyn Write, err: &mut dyn Write) -> Result<TrainOutput, CliError> {
    config.validate()?;
    let spec = config
        .dataset
        .as_ref()
        .ok_or_else(|| CliError::Config("no `dataset` configured".into()))?;
    let loaded = load(spec)?;
    for note in &loaded.notes {
        let _ = writeln!(err, "note: {note}");
    }
    let root = config.output_dir.join(config.dataset_name());
    let mut records = Vec::new();
    let mut summary_files = Vec::new();
    for &setting in &config.epsilons {
        let dir = root.join(setting_dir(setting));
        let record = train_setting(config, &loaded, setting, &dir)?;
        let path = dir.join(SUMMARY_FILE);
        std::fs::write(&path, to_line(&record) + "\n").map_err(|e| CliError::io(&path, e))?;
        let _ = writeln!(
            err,
            "{setting}: {} of {} runs completed, summary at {}",
            record.summary.completed,
            record.summary.runs.len(),
            path.display()
        );
        records.push(record);
        summary_files.push(path);
    }
    let rows = build_rows(&records)?;
    let rendered = match config.format {
        ReportFormat::Table => render_table(&rows),
        ReportFormat::Csv => to_csv(&rows),
        ReportFormat::Json => records.iter().map(|r| to_line(r) + "\n").collect(),
    };
    out.write_all(rendered.as_bytes())
        .map_err(|e| CliError::Other(format!("stdout: {e}")))?;
    let failed: Vec<String> = records
        .iter()
        .filter(|r| r.summary.failed > 0)
        .map(|r| format!("{} ({} runs)", r.setting, r.summary.failed))
        .collect();
    if !failed.is_empty() {
        return Err(CliError::Divergence(format!(
            "runs diverged in {}; see the summary records",
            failed.join(", ")
        )));
    }
    Ok(TrainOutput { records, summary_files })
}
