use clap::{Args, Parser, Subcommand};
use ldp_moe::bounds::RademacherInput;
use ldp_moe::verify::VerifyOptions;
use ldp_moe_cli::commands::*;
use ldp_moe_cli::config::{parse_sweep, resolve, sweep_value, Override, ReportFormat, DEFAULT_OUTPUT_DIR, OUTPUT_DIR_ENV};
use ldp_moe_cli::error::EXIT_OK;
use ldp_moe_cli::CliError;
use std::path::PathBuf;

#[derive(Parser, Debug)]
#[command(name = "ldp-moe", version, about = "Train, certify and verify LDP-gated mixtures of linear experts")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train every setting of the epsilon sweep and write summary records.
    Train(TrainCli),
    /// Certify a trained model on its training sample.
    Bound(BoundCli),
    /// Run the randomized verification suites.
    Verify(VerifyCli),
    /// Tabulate summary records.
    Report(ReportCli),
}

#[derive(Args, Debug)]
struct TrainCli {
    /// TOML experiment config.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Dotted override such as `train.epochs=50`; repeatable, applied last.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    name: Option<String>,
    /// CSV dataset path.
    #[arg(long, value_name = "PATH")]
    csv: Option<PathBuf>,
    #[arg(long)]
    label_column: Option<String>,
    /// Label value mapped to +1.
    #[arg(long, value_name = "VALUE", conflicts_with = "positive_unless")]
    positive: Option<String>,
    /// Every label value except this one is mapped to +1.
    #[arg(long, value_name = "VALUE")]
    positive_unless: Option<String>,
    /// Comma-separated sweep, e.g. `none,0.5,2`.
    #[arg(long)]
    epsilons: Option<String>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    runs: Option<usize>,
    /// Positive integer or `full`.
    #[arg(long)]
    batch_size: Option<String>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    experts: Option<usize>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    init_scale: Option<f64>,
    #[arg(long)]
    train_fraction: Option<f64>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[arg(long, value_enum)]
    format: Option<ReportFormat>,
    /// Print the resolved config and exit.
    #[arg(long)]
    print_config: bool,
}

#[derive(Args, Debug)]
struct BoundCli {
    #[arg(long)]
    model: PathBuf,
    /// Summary record of the training run; the split is rebuilt from it.
    #[arg(long, conflicts_with = "data", required_unless_present = "data")]
    summary: Option<PathBuf>,
    /// Run index within the summary; defaults to the one in the model file name.
    #[arg(long, requires = "summary")]
    run: Option<usize>,
    /// Dataset cache holding the training sample.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Certify at this epsilon instead of the model's own.
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    delta: Option<f64>,
    /// Comma-separated lambda grid.
    #[arg(long)]
    lambda_grid: Option<String>,
    /// Fixed expert norm cap for the Rademacher terms.
    #[arg(long)]
    cap: Option<f64>,
    #[arg(long)]
    gating_kl: Option<f64>,
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct VerifyCli {
    /// Random instances per property; 0 runs nothing.
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated epsilons for the lemma checks.
    #[arg(long)]
    epsilons: Option<String>,
    #[arg(long)]
    catoni_lambda: Option<f64>,
    #[arg(long)]
    vacuousness_m: Option<usize>,
    #[arg(long)]
    monte_carlo_instances: Option<usize>,
    #[arg(long)]
    monte_carlo_samples: Option<usize>,
    /// Draws of the bound-coverage simulation; 0 skips it.
    #[arg(long)]
    simulation_draws: Option<usize>,
    /// Append a gate table that breaks its budget.
    #[arg(long)]
    inject_fault: bool,
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ReportCli {
    /// Summary files written by `train`.
    #[arg(required = true)]
    summaries: Vec<PathBuf>,
    #[arg(long, value_enum, default_value_t = ReportFormat::Table)]
    format: ReportFormat,
    /// CSV path; defaults to `report.csv` in the output directory.
    #[arg(long)]
    csv: Option<PathBuf>,
    #[arg(long, env = OUTPUT_DIR_ENV, default_value = DEFAULT_OUTPUT_DIR)]
    output_dir: PathBuf,
}

fn float_list(text: &str, what: &str) -> Result<Vec<f64>, CliError> {
    text.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| CliError::Config(format!("{what}: `{s}` is not a number")))
        })
        .collect()
}

fn train_overrides(a: &TrainCli) -> Result<Vec<Override>, CliError> {
    use toml::Value;
    let mut o = Vec::new();
    let float = Value::Float;
    let int = |v: usize| Value::Integer(v as i64);
    if let Some(p) = &a.csv {
        o.push(Override::new("dataset.kind", Value::String("csv".into())));
        o.push(Override::new("dataset.path", Value::String(p.display().to_string())));
    }
    if let Some(c) = &a.label_column {
        o.push(Override::new("dataset.label_column", Value::String(c.clone())));
    }
    for (key, v) in [("equals", &a.positive), ("not_equals", &a.positive_unless)] {
        if let Some(v) = v {
            let mut t = toml::Table::new();
            t.insert(key.into(), Value::String(v.clone()));
            o.push(Override::new("dataset.positive", Value::Table(t)));
        }
    }
    if let Some(n) = &a.name {
        o.push(Override::new("name", Value::String(n.clone())));
    }
    if let Some(s) = &a.epsilons {
        o.push(Override::new("epsilons", sweep_value(&parse_sweep(s)?)));
    }
    if let Some(v) = a.epochs {
        o.push(Override::new("train.epochs", int(v)));
    }
    if let Some(v) = a.runs {
        o.push(Override::new("train.runs", int(v)));
    }
    if let Some(v) = &a.batch_size {
        o.push(Override::new("train.batch_size", ldp_moe_cli::config::parse_value(v)));
    }
    if let Some(v) = a.learning_rate {
        o.push(Override::new("train.learning_rate", float(v)));
    }
    if let Some(v) = a.seed {
        let v = i64::try_from(v).map_err(|_| CliError::Config(format!("seed {v} exceeds the TOML integer range")))?;
        o.push(Override::new("train.base_seed", Value::Integer(v)));
    }
    if let Some(v) = a.experts {
        o.push(Override::new("train.experts", int(v)));
    }
    if let Some(v) = a.hidden {
        o.push(Override::new("train.hidden", int(v)));
    }
    if let Some(v) = a.init_scale {
        o.push(Override::new("train.init_scale", float(v)));
    }
    if let Some(v) = a.train_fraction {
        o.push(Override::new("train.split.train_fraction", float(v)));
    }
    if let Some(v) = a.delta {
        o.push(Override::new("bound.delta", float(v)));
    }
    if let Some(v) = &a.output_dir {
        o.push(Override::new("output_dir", Value::String(v.display().to_string())));
    }
    if let Some(f) = a.format {
        let name = match f {
            ReportFormat::Json => "json",
            ReportFormat::Csv => "csv",
            ReportFormat::Table => "table",
        };
        o.push(Override::new("format", Value::String(name.into())));
    }
    for s in &a.set {
        o.push(Override::parse(s)?);
    }
    Ok(o)
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut out = std::io::stdout().lock();
    let mut err = std::io::stderr();
    match cli.command {
        Command::Train(a) => {
            let config = resolve(a.config.as_deref(), &train_overrides(&a)?)?;
            if a.print_config {
                print!("{}", config.to_toml());
                return Ok(());
            }
            cmd_train(&config, &mut out, &mut err).map(|_| ())
        }
        Command::Bound(a) => {
            let source = match (&a.summary, &a.data) {
                (Some(p), _) => TrainSource::Summary {
                    path: p.clone(),
                    run: a.run,
                },
                (None, Some(p)) => TrainSource::Cache(p.clone()),
                (None, None) => unreachable!("clap requires one of --summary and --data"),
            };
            let args = BoundArgs {
                model: a.model,
                source,
                epsilon: a.epsilon,
                overrides: BoundOverrides {
                    delta: a.delta,
                    lambda_grid: a.lambda_grid.as_deref().map(|g| float_list(g, "--lambda-grid")).transpose()?,
                    rademacher: a.cap.map(|cap| RademacherInput::FixedCap { cap }),
                    gating_kl: a.gating_kl,
                },
                output: a.output,
            };
            cmd_bound(&args, &mut out, &mut err).map(|_| ())
        }
        Command::Verify(a) => {
            let d = VerifyOptions::default();
            let options = VerifyOptions {
                trials: a.trials.unwrap_or(d.trials),
                epsilons: match &a.epsilons {
                    Some(e) => float_list(e, "--epsilons")?,
                    None => d.epsilons,
                },
                catoni_lambda: a.catoni_lambda.unwrap_or(d.catoni_lambda),
                vacuousness_m: a.vacuousness_m.unwrap_or(d.vacuousness_m),
                monte_carlo_instances: a.monte_carlo_instances.unwrap_or(d.monte_carlo_instances),
                monte_carlo_samples: a.monte_carlo_samples.unwrap_or(d.monte_carlo_samples),
                simulation_draws: a.simulation_draws.unwrap_or(d.simulation_draws),
                inject_faulty_table: a.inject_fault,
                seed: a.seed.unwrap_or(d.seed),
                ..d
            };
            cmd_verify(
                &VerifyArgs {
                    options,
                    output: a.output,
                },
                &mut out,
                &mut err,
            )
            .map(|_| ())
        }
        Command::Report(a) => {
            let csv = a.csv.unwrap_or_else(|| a.output_dir.join("report.csv"));
            if let Some(dir) = csv.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir).map_err(|e| CliError::Other(format!("{}: {e}", dir.display())))?;
            }
            let args = ReportArgs {
                summaries: a.summaries,
                format: a.format,
                csv: Some(csv),
            };
            cmd_report(&args, &mut out).map(|_| ())
        }
    }
}

fn main() {
    let cli = Cli::parse();
    let code = match run(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    };
    std::process::exit(code);
}
