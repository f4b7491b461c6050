use ldp_moe::bounds::BoundKind;
use ldp_moe::data::{write_cache, Dataset};
use ldp_moe::model::{LdpConfig, MoEModel};
use ldp_moe::train::{MeanStd, RunOutcome, RunRecord, RunSummary};
use ldp_moe_cli::config::ExperimentConfig;
use ldp_moe_cli::digest::{content_hash, InputDigest};
use ldp_moe_cli::load::DataStats;
use ldp_moe_cli::records::{read_summaries, to_line, BoundRecord, SummaryRecord, SUMMARY_SCHEMA};
use ldp_moe_cli::report::{build_rows, parse_csv};
use ndarray::{Array1, Array2};
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_ldp-moe"));
    c.env_remove("LDP_MOE_OUTPUT_DIR");
    c
}

fn run(cmd: &mut Command) -> Output {
    cmd.output().expect("binary runs")
}

fn text(bytes: &[u8]) -> String {
    String::from_utf8_lossy(bytes).into_owned()
}

/// Two noisy clusters with a string label column and an id column.
fn toy_csv(dir: &Path, m: usize) -> PathBuf {
    let mut s = String::from("id,x1,x2,x3,y\n");
    for i in 0..m {
        let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
        let j = (i as f64 * 0.37).sin();
        s += &format!(
            "{i},{},{},{},{}\n",
            sign * 1.5 + 0.3 * j,
            -sign + 0.2 * j,
            0.5 * j,
            if sign > 0.0 { "pos" } else { "neg" }
        );
    }
    let p = dir.join("toy.csv");
    std::fs::write(&p, s).unwrap();
    p
}

fn train_cmd(dir: &Path, csv: &Path, out: &str) -> Command {
    let mut c = bin();
    c.current_dir(dir)
        .arg("train")
        .arg("--csv")
        .arg(csv)
        .args(["--label-column", "y", "--positive", "pos", "--set", "dataset.ignore_columns=[\"id\"]"])
        .args(["--experts", "3", "--hidden", "4", "--output-dir", out]);
    c
}

#[test]
fn one_run_one_epoch_smoke() {
    let dir = tempfile::tempdir().unwrap();
    let csv = toy_csv(dir.path(), 40);
    let o = run(train_cmd(dir.path(), &csv, "o").args(["--runs", "1", "--epochs", "1", "--epsilons", "none"]));
    assert!(o.status.success(), "{}", text(&o.stderr));
    let summary = dir.path().join("o/toy/none/summary.jsonl");
    let records = read_summaries(&summary).unwrap();
    assert_eq!(records.len(), 1);
    let r = &records[0];
    assert_eq!(r.summary.runs.len(), 1);
    assert_eq!(r.summary.completed, 1);
    assert_eq!(r.data.dim, 3);
    assert_eq!(r.model_files, vec![Some("run-0.model".to_owned())]);
    assert!(dir.path().join("o/toy/none/run-0.model").exists());
    let log = std::fs::read_to_string(dir.path().join("o/toy/none/train.log")).unwrap();
    assert!(log.lines().any(|l| l.contains("epoch=1") && l.contains("loss=") && l.starts_with("t=")));
    assert!(!std::fs::read_to_string(&summary).unwrap().contains("t="));
}

#[test]
fn sweep_writes_one_tagged_record_per_setting() {
    let dir = tempfile::tempdir().unwrap();
    let csv = toy_csv(dir.path(), 40);
    let o = run(train_cmd(dir.path(), &csv, "o").args(["--runs", "2", "--epochs", "3", "--epsilons", "none,2"]));
    assert!(o.status.success(), "{}", text(&o.stderr));
    let a = read_summaries(&dir.path().join("o/toy/none/summary.jsonl")).unwrap();
    let b = read_summaries(&dir.path().join("o/toy/eps-2/summary.jsonl")).unwrap();
    assert_eq!(a[0].setting, "none");
    assert_eq!(b[0].setting, "eps=2");
    assert_eq!(b[0].summary.ldp, LdpConfig::Constrained { epsilon: 2.0 });
    let table = text(&o.stdout);
    assert!(table.contains("toy R_S") && table.contains("toy R_T") && table.contains("eps=2"));
    assert_eq!(table.matches('*').count(), 1);
}

#[test]
fn records_embed_config_and_input_hashes() {
    let dir = tempfile::tempdir().unwrap();
    let csv = toy_csv(dir.path(), 40);
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, "epsilons = [1]\n[train]\nepochs = 4\nruns = 1\nlearning_rate = 0.05\n").unwrap();
    let o = run(train_cmd(dir.path(), &csv, "o").arg("--config").arg(&cfg).args(["--epochs", "2"]));
    assert!(o.status.success(), "{}", text(&o.stderr));
    let r = &read_summaries(&dir.path().join("o/toy/eps-1/summary.jsonl")).unwrap()[0];
    assert_eq!(r.config.train.epochs, 2, "override wins");
    assert_eq!(r.config.train.learning_rate, 0.05, "file beats default");
    assert_eq!(r.inputs.len(), 1);
    assert_eq!(r.inputs[0].sha256, content_hash(&std::fs::read(&csv).unwrap()));
    assert_eq!(r.inputs[0], InputDigest::of_file(&csv).unwrap());
}

#[test]
fn output_dir_comes_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let csv = toy_csv(dir.path(), 20);
    let mut c = bin();
    c.current_dir(dir.path())
        .env("LDP_MOE_OUTPUT_DIR", "from-env")
        .arg("train")
        .arg("--csv")
        .arg(&csv)
        .args(["--label-column", "y", "--positive", "pos", "--set", "dataset.ignore_columns=[\"id\"]"])
        .args(["--experts", "2", "--hidden", "3", "--runs", "1", "--epochs", "1", "--epsilons", "none"]);
    let o = run(&mut c);
    assert!(o.status.success(), "{}", text(&o.stderr));
    assert!(dir.path().join("from-env/toy/none/summary.jsonl").exists());
}

#[test]
fn repeated_training_is_bitwise_identical() {
    let dir = tempfile::tempdir().unwrap();
    let csv = toy_csv(dir.path(), 40);
    let args = ["--runs", "2", "--epochs", "5", "--epsilons", "none,0.5"];
    let mut files = Vec::new();
    for _ in 0..2 {
        let o = run(train_cmd(dir.path(), &csv, "o").args(args));
        assert!(o.status.success());
        files.push((
            std::fs::read(dir.path().join("o/toy/eps-0.5/summary.jsonl")).unwrap(),
            std::fs::read(dir.path().join("o/toy/eps-0.5/run-1.model")).unwrap(),
        ));
    }
    assert_eq!(files[0], files[1]);
}

#[test]
fn error_classes_map_to_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let csv = toy_csv(dir.path(), 40);
    let quick = ["--runs", "1", "--epochs", "1", "--epsilons", "none"];

    let o = run(train_cmd(dir.path(), &csv, "o").args(quick).args(["--set", "train.epoch=3"]));
    assert_eq!(o.status.code(), Some(2), "{}", text(&o.stderr));
    assert!(text(&o.stderr).contains("epoch"));

    let o = run(train_cmd(dir.path(), &csv, "o").args(quick).args(["--delta", "2"]));
    assert_eq!(o.status.code(), Some(2));

    let missing = dir.path().join("missing.csv");
    let o = run(train_cmd(dir.path(), &missing, "o").args(quick));
    assert_eq!(o.status.code(), Some(3));
    assert!(text(&o.stderr).contains("missing.csv"));

    let o = run(train_cmd(dir.path(), &csv, "o").args(quick).args(["--set", "dataset.label_column=nope"]));
    assert_eq!(o.status.code(), Some(3));

}

#[test]
fn error_variants_own_distinct_exit_codes() {
    use ldp_moe::train::TrainError;
    use ldp_moe_cli::CliError;
    let diverged = CliError::from(TrainError::Diverged {
        epoch: 3,
        reason: "non-finite loss".into(),
    });
    assert_eq!(diverged.exit_code(), 5);
    assert_eq!(CliError::from(TrainError::Config("x".into())).exit_code(), 2);
    assert_eq!(CliError::Data("x".into()).exit_code(), 3);
    assert_eq!(CliError::Verification("x".into()).exit_code(), 4);
    assert_eq!(CliError::Other("x".into()).exit_code(), 1);
}

fn zero_model_setup(dir: &Path, m: usize, eps: f64) -> (PathBuf, PathBuf) {
    let model = MoEModel::zeros(3, 4, 5, LdpConfig::Constrained { epsilon: eps });
    let mpath = dir.join("zero.model");
    model.save(&mpath).unwrap();
    let x = Array2::from_shape_fn((m, 3), |(i, j)| 1.0 + (i * 3 + j) as f64 * 0.1);
    let y = Array1::from_shape_fn(m, |i| if i % 3 == 0 { 1.0 } else { -1.0 });
    let data = Dataset::new(x, y, "zero").unwrap();
    let dpath = dir.join("train.moedata");
    write_cache(std::fs::File::create(&dpath).unwrap(), &data).unwrap();
    (mpath, dpath)
}

#[test]
fn zero_model_bound_has_closed_form() {
    let dir = tempfile::tempdir().unwrap();
    let (m, eps, n, delta) = (50usize, 0.7f64, 4.0f64, 0.05f64);
    let (mpath, dpath) = zero_model_setup(dir.path(), m, eps);
    let o = run(bin().arg("bound").arg("--model").arg(&mpath).arg("--data").arg(&dpath));
    assert!(o.status.success(), "{}", text(&o.stderr));
    let record: BoundRecord =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("zero.bound.json")).unwrap()).unwrap();
    let r = &record.report;
    assert!(r.inputs.per_expert_kl.iter().all(|&k| k == 0.0));
    let k = r.catoni_grid.len() as f64;
    let expected = r
        .catoni_grid
        .iter()
        .map(|t| {
            let l = t.lambda;
            (2.0 * l * eps.exp() / (2.0 * l - 1.0)) * (eps.exp() * 0.5 + (l / m as f64) * (n / (delta / k)).ln())
        })
        .fold(f64::INFINITY, f64::min);
    assert!((r.value(BoundKind::CatoniLdp).raw - expected).abs() < 1e-12);
    assert_eq!(record.train_rows, m);
    assert_eq!(record.inputs[0], InputDigest::of_file(&dpath).unwrap());
    assert!(text(&o.stdout).contains("catoni_ldp"));
}

#[test]
fn small_sample_disables_seeger_with_a_note() {
    let dir = tempfile::tempdir().unwrap();
    let (mpath, dpath) = zero_model_setup(dir.path(), 5, 1.0);
    let out = dir.path().join("b.json");
    let o = run(bin()
        .arg("bound")
        .arg("--model")
        .arg(&mpath)
        .arg("--data")
        .arg(&dpath)
        .arg("--output")
        .arg(&out)
        .args(["--epsilon", "0.5"]));
    assert!(o.status.success(), "{}", text(&o.stderr));
    let err = text(&o.stderr);
    assert!(err.contains("seeger") && err.contains("warning: epsilon overridden"), "{err}");
    let record: BoundRecord = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(record.report.seeger_ldp.headline, 1.0);
    assert_eq!(record.epsilon_override, Some(0.5));
    assert_eq!(record.report.inputs.epsilon, 0.5);
    assert_eq!(record.notes.len(), 2);
}

#[test]
fn bound_from_summary_rebuilds_the_training_split() {
    let dir = tempfile::tempdir().unwrap();
    let csv = toy_csv(dir.path(), 40);
    let o = run(train_cmd(dir.path(), &csv, "o").args(["--runs", "2", "--epochs", "3", "--epsilons", "1"]));
    assert!(o.status.success());
    let base = dir.path().join("o/toy/eps-1");
    let o = run(bin()
        .arg("bound")
        .arg("--model")
        .arg(base.join("run-1.model"))
        .arg("--summary")
        .arg(base.join("summary.jsonl")));
    assert!(o.status.success(), "{}", text(&o.stderr));
    let record: BoundRecord =
        serde_json::from_str(&std::fs::read_to_string(base.join("run-1.bound.json")).unwrap()).unwrap();
    assert_eq!(record.run, Some(1));
    assert_eq!(record.train_rows, 30);
    let summary = &read_summaries(&base.join("summary.jsonl")).unwrap()[0];
    let RunOutcome::Completed { train_risk, .. } = summary.summary.runs[1].outcome else {
        panic!("run completed")
    };
    assert!((record.report.inputs.empirical_risk.get() - train_risk).abs() < 1e-12);
    assert_eq!(record.config.as_ref(), Some(&summary.config));

    std::fs::write(&csv, std::fs::read_to_string(&csv).unwrap() + "99,0,0,1,pos\n").unwrap();
    let o = run(bin()
        .arg("bound")
        .arg("--model")
        .arg(base.join("run-1.model"))
        .arg("--summary")
        .arg(base.join("summary.jsonl")));
    assert_eq!(o.status.code(), Some(3), "changed data is refused");
}

#[test]
fn verify_exit_codes() {
    let o = run(bin().args(["verify", "--trials", "200", "--monte-carlo-samples", "20000"]));
    assert!(o.status.success(), "{}", text(&o.stdout));
    assert!(text(&o.stdout).contains("all checks passed"));

    let o = run(bin().args(["verify", "--trials", "50", "--monte-carlo-samples", "20000", "--inject-fault"]));
    assert_eq!(o.status.code(), Some(4));
    let err = text(&o.stderr);
    assert!(err.contains("gate_table_ldp") && err.contains("worst case"), "{err}");

    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("v.json");
    let o = run(bin().args(["verify", "--trials", "0", "--output"]).arg(&out));
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(v["report"]["checks"].as_array().unwrap().len(), 0);
    assert_eq!(v["passed"], true);
}

#[test]
fn verify_defaults_pass() {
    let o = run(bin().arg("verify"));
    assert!(o.status.success(), "{}{}", text(&o.stdout), text(&o.stderr));
}

fn synthetic_record(dataset: &str, ldp: LdpConfig, test_mean: f64) -> SummaryRecord {
    let runs = vec![
        RunRecord {
            run: 0,
            seed: 0,
            outcome: RunOutcome::Completed {
                train_risk: test_mean / 2.0,
                test_risk: test_mean - 0.001,
            },
        },
        RunRecord {
            run: 1,
            seed: 1,
            outcome: RunOutcome::Completed {
                train_risk: test_mean / 2.0,
                test_risk: test_mean + 0.001,
            },
        },
    ];
    let mut summary = RunSummary::from_records(ldp, runs);
    summary.test = Some(MeanStd {
        mean: test_mean,
        std: 0.001,
    });
    SummaryRecord {
        schema: SUMMARY_SCHEMA.to_owned(),
        dataset: dataset.to_owned(),
        setting: ldp.tag(),
        summary,
        model_files: vec![None, None],
        data: DataStats {
            rows: 10,
            dim: 2,
            dropped_rows: 0,
            zero_norm_rows: 0,
            fixed_test_rows: None,
        },
        inputs: vec![],
        config: ExperimentConfig::default(),
    }
}

#[test]
fn report_stars_the_best_and_round_trips_csv() {
    let dir = tempfile::tempdir().unwrap();
    let records = [
        synthetic_record("d", LdpConfig::Unconstrained, 0.03),
        synthetic_record("d", LdpConfig::Constrained { epsilon: 2.0 }, 0.02),
    ];
    let paths: Vec<PathBuf> = records
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let p = dir.path().join(format!("s{i}.jsonl"));
            std::fs::write(&p, to_line(r) + "\n").unwrap();
            p
        })
        .collect();
    let csv_path = dir.path().join("r.csv");
    let o = run(bin().arg("report").args(&paths).arg("--csv").arg(&csv_path));
    assert!(o.status.success(), "{}", text(&o.stderr));
    let table = text(&o.stdout);
    let test_line = table.lines().find(|l| l.starts_with("d R_T")).unwrap();
    assert!(test_line.contains("0.03000 ± 0.00100  ") && test_line.trim_end().ends_with("0.02000 ± 0.00100 *"));
    let parsed = parse_csv(&std::fs::read_to_string(&csv_path).unwrap()).unwrap();
    assert_eq!(parsed, build_rows(&records).unwrap());
    assert_eq!(parsed.iter().map(|r| r.best).collect::<Vec<_>>(), vec![false, true]);

    let one = run(bin().arg("report").arg(&paths[0]).arg("--csv").arg(&csv_path));
    assert!(one.status.success());
    assert_eq!(parse_csv(&std::fs::read_to_string(&csv_path).unwrap()).unwrap().len(), 1);

    let o = run(bin().arg("report").arg(&paths[0]).args(["--format", "json", "--csv"]).arg(&csv_path));
    let v: serde_json::Value = serde_json::from_str(&text(&o.stdout)).unwrap();
    assert_eq!(v["rows"].as_array().unwrap().len(), 1);
}

#[test]
fn report_rejects_foreign_schemas_by_file() {
    let dir = tempfile::tempdir().unwrap();
    let good = dir.path().join("good.jsonl");
    std::fs::write(&good, to_line(&synthetic_record("d", LdpConfig::Unconstrained, 0.1)) + "\n").unwrap();
    let bad = dir.path().join("bad.jsonl");
    let mut v: serde_json::Value = serde_json::to_value(synthetic_record("d", LdpConfig::Unconstrained, 0.1)).unwrap();
    v["schema"] = "ldp-moe/summary/0".into();
    std::fs::write(&bad, v.to_string() + "\n").unwrap();
    let csv = dir.path().join("r.csv");
    let o = run(bin().arg("report").arg(&good).arg(&bad).arg("--csv").arg(&csv));
    assert_eq!(o.status.code(), Some(3));
    let err = text(&o.stderr);
    assert!(err.contains("bad.jsonl:1") && err.contains("schema"), "{err}");

    let mangled = dir.path().join("mangled.jsonl");
    let mut v: serde_json::Value = serde_json::to_value(synthetic_record("d", LdpConfig::Unconstrained, 0.1)).unwrap();
    v.as_object_mut().unwrap().remove("summary");
    std::fs::write(&mangled, v.to_string() + "\n").unwrap();
    let o = run(bin().arg("report").arg(&mangled).arg("--csv").arg(&csv));
    assert_eq!(o.status.code(), Some(3));
    assert!(text(&o.stderr).contains("mangled.jsonl"));
}
