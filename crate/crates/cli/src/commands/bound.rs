use crate::digest::InputDigest;
use crate::error::CliError;
use crate::load::load;
use crate::records::{read_summaries, write_json, BoundRecord, BOUND_SCHEMA};
use ldp_moe::bounds::{certify, BoundValue, CertifyOptions, RademacherInput, SEEGER_MIN_SAMPLES};
use ldp_moe::data::{read_cache, Dataset};
use ldp_moe::model::{LdpConfig, MoEModel};
use std::io::Write;
use std::path::{Path, PathBuf};

/// Where the training sample of the model comes from.
#[derive(Clone, Debug)]
pub enum TrainSource {
    /// Rebuild run `run`'s training split from a summary record's config.
    Summary { path: PathBuf, run: Option<usize> },
    /// A dataset cache holding exactly the training sample.
    Cache(PathBuf),
}

/// Overrides on top of the defaults (or the summary's `bound` table).
#[derive(Clone, Debug, Default)]
pub struct BoundOverrides {
    pub delta: Option<f64>,
    pub lambda_grid: Option<Vec<f64>>,
    pub rademacher: Option<RademacherInput>,
    pub gating_kl: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct BoundArgs {
    pub model: PathBuf,
    pub source: TrainSource,
    pub epsilon: Option<f64>,
    pub overrides: BoundOverrides,
    /// Defaults to the model path with extension `bound.json`.
    pub output: Option<PathBuf>,
}

/// `run-K.model` names the run it came from.
fn run_from_name(path: &Path) -> Option<usize> {
    let stem = path.file_stem()?.to_str()?;
    stem.strip_prefix("run-")?.parse().ok()
}

struct Sample {
    train: Dataset,
    inputs: Vec<InputDigest>,
    run: Option<usize>,
    options: CertifyOptions,
    config: Option<crate::config::ExperimentConfig>,
}

fn sample_from(args: &BoundArgs) -> Result<Sample, CliError> {
    match &args.source {
        TrainSource::Cache(path) => {
            let file = std::fs::File::open(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
            let train = read_cache(std::io::BufReader::new(file))
                .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
            Ok(Sample {
                train,
                inputs: vec![InputDigest::of_file(path)?],
                run: None,
                options: CertifyOptions::default(),
                config: None,
            })
        }
        TrainSource::Summary { path, run } => {
            let records = read_summaries(path)?;
            if records.len() != 1 {
                return Err(CliError::Data(format!(
                    "{}: holds {} records; certify from a single-setting summary",
                    path.display(),
                    records.len()
                )));
            }
            let record = records.into_iter().next().expect("one record");
            let run = run.or_else(|| run_from_name(&args.model)).unwrap_or(0);
            if run >= record.summary.runs.len() {
                return Err(CliError::Config(format!(
                    "run {run} is out of range; {} has {} runs",
                    path.display(),
                    record.summary.runs.len()
                )));
            }
            let spec = record
                .config
                .dataset
                .as_ref()
                .ok_or_else(|| CliError::Data(format!("{}: record has no dataset", path.display())))?;
            let loaded = load(spec)?;
            if loaded.inputs != record.inputs {
                return Err(CliError::Data(format!(
                    "dataset files differ from the ones hashed in {}",
                    path.display()
                )));
            }
            let train_config = record.config.train_config(record.summary.ldp);
            let prepared = loaded.prepared(&train_config, run)?;
            Ok(Sample {
                train: prepared.train,
                inputs: loaded.inputs,
                run: Some(run),
                options: record.config.bound.clone(),
                config: Some(record.config),
            })
        }
    }
}

fn show(v: &BoundValue) -> String {
    if v.vacuous {
        format!("{:.6} (vacuous, raw {:.6})", v.headline, v.raw)
    } else {
        format!("{:.6}", v.headline)
    }
}

pub fn cmd_bound(args: &BoundArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<BoundRecord, CliError> {
    let model_digest = InputDigest::of_file(&args.model)?;
    let mut model = MoEModel::load(&args.model)
        .map_err(|e| CliError::Data(format!("{}: {e}", args.model.display())))?;
    let sample = sample_from(args)?;
    let mut notes = Vec::new();
    if let Some(e) = args.epsilon {
        let replaced = LdpConfig::constrained(e).map_err(|e| CliError::Config(e.to_string()))?;
        let msg = format!(
            "epsilon overridden: model was trained with {} and is certified as {replaced}",
            model.ldp
        );
        let _ = writeln!(err, "warning: {msg}");
        notes.push(msg);
        model.ldp = replaced;
    }
    let mut options = sample.options;
    let o = &args.overrides;
    if let Some(d) = o.delta {
        options.delta = d;
    }
    if let Some(g) = &o.lambda_grid {
        options.lambda_grid = g.clone();
    }
    if let Some(r) = &o.rademacher {
        options.rademacher = r.clone();
    }
    if let Some(k) = o.gating_kl {
        options.gating_kl = k;
    }
    let m = sample.train.len();
    if m < SEEGER_MIN_SAMPLES {
        let msg = format!("seeger bound disabled: m = {m} is below {SEEGER_MIN_SAMPLES}; reported as 1");
        let _ = writeln!(err, "note: {msg}");
        notes.push(msg);
    }
    let report = certify(&model, &sample.train, &options)?;
    for c in &report.caveats {
        let _ = writeln!(err, "caveat: {c}");
    }
    let record = BoundRecord {
        schema: BOUND_SCHEMA.to_owned(),
        model: model_digest,
        run: sample.run,
        epsilon_override: args.epsilon,
        train_rows: m,
        options,
        report,
        notes,
        inputs: sample.inputs,
        config: sample.config,
    };
    let path = args.output.clone().unwrap_or_else(|| args.model.with_extension("bound.json"));
    write_json(&path, &record)?;
    let r = &record.report;
    let text = format!(
        "catoni_ldp     {} (lambda {})\nseeger_ldp     {}\nrademacher_ldp {}\nnaive          {}\nx' index       {} (kl), {} (rademacher)\nreport         {}\n",
        show(&r.catoni_ldp),
        r.catoni_lambda,
        show(&r.seeger_ldp),
        show(&r.rademacher_ldp),
        show(&r.naive_comparison),
        r.chosen_xprime_index,
        r.rademacher_xprime_index,
        path.display()
    );
    out.write_all(text.as_bytes())
        .map_err(|e| CliError::Other(format!("stdout: {e}")))?;
    Ok(record)
}
