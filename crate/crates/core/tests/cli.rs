use std::path::{Path, PathBuf};
use std::process::Command;

use clap::Parser;
use serde_json::{json, Value};
use tempfile::TempDir;
use vancl::cli::ablate::AblationReport;
use vancl::cli::{run, Cli};
use vancl::eval::MetricsReport;
use vancl::synthgen::GenSpec;
use vancl::Error;

fn vancl(args: &[&str]) -> vancl::Result<()> {
    let cli = Cli::try_parse_from(std::iter::once("vancl").chain(args.iter().copied())).expect("arguments parse");
    run(cli)
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn write(dir: &Path, name: &str, value: &Value) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, serde_json::to_vec_pretty(value).unwrap()).unwrap();
    path
}

fn gen(dir: &Path, n_train: usize, n_test: usize, ambiguity: f64) -> PathBuf {
    let spec = GenSpec {
        n_train,
        n_test,
        segments_per_doc: 6,
        ambiguity,
        ..GenSpec::default()
    };
    let spec_path = write(dir, "spec.json", &serde_json::to_value(&spec).unwrap());
    let data = dir.join("data");
    vancl(&["gen", "--spec", p(&spec_path), "--out", p(&data)]).unwrap();
    data
}

fn small_config(dir: &Path, epochs: usize, outer: bool) -> PathBuf {
    config_with(dir, epochs, 8, outer)
}

fn config_with(dir: &Path, epochs: usize, batch_size: usize, outer: bool) -> PathBuf {
    let outer = if outer { json!({"depth": 1, "channels": 4}) } else { Value::Null };
    write(
        dir,
        "config.json",
        &json!({
            "train": {"lr": 2e-3, "epochs": epochs, "batch_size": batch_size},
            "model": {
                "d_model": 16, "n_layers": 1, "n_heads": 2, "ffn_dim": 32,
                "inner_encoder": {"depth": 1, "channels": 4},
                "outer_encoder": outer
            }
        }),
    )
}

fn read_report(path: &Path) -> AblationReport {
    serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap()
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect();
    out.sort();
    out
}

#[test]
fn gen_is_byte_identical_across_runs() {
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    for dir in [a.path(), b.path()] {
        vancl(&["gen", "--seed", "3", "--out", p(dir)]).unwrap();
    }
    let (x, y) = (dir_bytes(a.path()), dir_bytes(b.path()));
    assert_eq!(x.len(), 2 * (250 + 50) + 2);
    assert!(x == y);
}

#[test]
fn train_eval_predict_export_round() {
    let tmp = TempDir::new().unwrap();
    let data = gen(tmp.path(), 40, 10, 0.0);
    let config = config_with(tmp.path(), 20, 2, true);
    let run_dir = tmp.path().join("run");
    vancl(&["train", "--baseline", "--config", p(&config), "--data", p(&data), "--out", p(&run_dir)]).unwrap();

    let log = std::fs::read_to_string(run_dir.join("train_log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 20);
    for line in log.lines() {
        let v: Value = serde_json::from_str(line).unwrap();
        assert_eq!(v["L_cons"], json!(0.0));
    }

    let model = run_dir.join("model.ckpt");
    let eval_dir = tmp.path().join("eval");
    vancl(&["eval", "--model", p(&model), "--data", p(&data), "--split", "train", "--out", p(&eval_dir)]).unwrap();
    let metrics: MetricsReport = serde_json::from_slice(&std::fs::read(eval_dir.join("metrics.json")).unwrap()).unwrap();
    assert_eq!(metrics.n_docs, 40);
    assert!(metrics.micro.f1 > 0.8, "train F1 {}", metrics.micro.f1);

    let pred_dir = tmp.path().join("pred");
    vancl(&["predict", "--model", p(&model), "--data", p(&data), "--out", p(&pred_dir)]).unwrap();
    assert_eq!(std::fs::read_dir(pred_dir.join("predictions")).unwrap().count(), 10);

    let export = tmp.path().join("emb");
    vancl(&["export-embeddings", "--model", p(&model), "--data", p(&data), "--split", "all", "--out", p(&export)]).unwrap();
    let tsv = std::fs::read_to_string(export.join("embeddings.tsv")).unwrap();
    let (corpus, _) = vancl::synthgen::CorpusSplit::load(&data).unwrap();
    let tokens: usize = corpus.train.iter().chain(&corpus.test).map(|d| d.n_tokens().min(512)).sum();
    assert_eq!(tsv.lines().count(), tokens + 1);
    for line in tsv.lines() {
        assert_eq!(line.split('\t').count(), 16 + 3);
    }

    // The deployment checkpoint lacks the outer encoder, so it cannot run the painted flow.
    let err = vancl(&["export-embeddings", "--model", p(&model), "--data", p(&data), "--flow", "ve", "--out", p(&export)]);
    assert!(matches!(err, Err(Error::Config(_))));
    let full = run_dir.join("model_full.ckpt");
    vancl(&["export-embeddings", "--model", p(&full), "--data", p(&data), "--flow", "ve", "--out", p(&export)]).unwrap();
}

#[test]
fn flows_agree_without_outer_encoder_or_paint() {
    let tmp = TempDir::new().unwrap();
    let data = gen(tmp.path(), 8, 4, 0.5);
    let config = small_config(tmp.path(), 1, false);
    let run_dir = tmp.path().join("run");
    vancl(&["train", "--config", p(&config), "--data", p(&data), "--out", p(&run_dir)]).unwrap();
    let model = run_dir.join("model.ckpt");
    let (sl, ve) = (tmp.path().join("sl"), tmp.path().join("ve"));
    vancl(&["export-embeddings", "--model", p(&model), "--data", p(&data), "--out", p(&sl)]).unwrap();
    vancl(&["export-embeddings", "--model", p(&model), "--data", p(&data), "--flow", "ve", "--scheme", "none", "--out", p(&ve)]).unwrap();
    assert_eq!(std::fs::read(sl.join("embeddings.tsv")).unwrap(), std::fs::read(ve.join("embeddings.tsv")).unwrap());
}

#[test]
fn consistency_suite_has_a_cell_per_row_and_seed() {
    let tmp = TempDir::new().unwrap();
    let data = gen(tmp.path(), 8, 4, 0.5);
    let config = small_config(tmp.path(), 1, true);
    let out = tmp.path().join("ablate");
    vancl(&["ablate", "--suite", "consistency", "--config", p(&config), "--data", p(&data), "--seeds", "0,1", "--out", p(&out)]).unwrap();
    let report = read_report(&out.join("consistency.json"));
    assert_eq!(report.rows.len(), 2);
    assert!(report.rows.iter().all(|r| r.f1_runs.len() == 2));
    assert_eq!(std::fs::read_dir(out.join("cells")).unwrap().count(), 4);
    let md = std::fs::read_to_string(out.join("consistency.md")).unwrap();
    assert!(md.contains("VANCL") && md.contains("NONE"));
}

#[test]
fn lowres_axis_and_colors_header() {
    let tmp = TempDir::new().unwrap();
    let data = gen(tmp.path(), 20, 4, 0.5);
    let config = small_config(tmp.path(), 1, true);
    let out = tmp.path().join("ablate");
    vancl(&["ablate", "--suite", "LOWRES", "--config", p(&config), "--data", p(&data), "--seeds", "0", "--jobs", "2", "--out", p(&out)]).unwrap();
    let report = read_report(&out.join("lowres.json"));
    let mut xs: Vec<f64> = report.rows.iter().filter_map(|r| r.x).collect();
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    assert_eq!(xs, vec![5.0, 12.5, 25.0, 50.0, 100.0]);
    assert_eq!(report.rows.len(), 10);

    vancl(&["ablate", "--suite", "colors", "--config", p(&config), "--data", p(&data), "--seeds", "0", "--out", p(&out)]).unwrap();
    let report = read_report(&out.join("colors.json"));
    assert_eq!(report.schemes.len(), 8);
    let first: Vec<(&str, &str)> = report.schemes[0].colors.iter().map(|(l, c)| (l.as_str(), c.as_str())).collect();
    assert_eq!(
        first,
        vec![("QUESTION", "#FF0000"), ("ANSWER", "#0000FF"), ("HEADER", "#00FF00"), ("OTHER", "#FFA500")]
    );
}

#[test]
fn interrupted_sweep_resumes() {
    let tmp = TempDir::new().unwrap();
    let data = gen(tmp.path(), 6, 3, 0.5);
    let config = small_config(tmp.path(), 1, true);
    let out = tmp.path().join("ablate");
    let args = |extra: &'static [&'static str]| {
        let mut v = vec!["ablate", "--suite", "DIVERGENCE", "--seeds", "0,1", "--jobs", "1"];
        v.extend_from_slice(extra);
        v
    };
    let mut first = args(&["--fail-after", "2"]);
    let tail = ["--config", p(&config), "--data", p(&data), "--out", p(&out)];
    first.extend_from_slice(&tail);
    assert!(matches!(vancl(&first), Err(Error::Interrupted { completed: 2 })));
    assert_eq!(std::fs::read_dir(out.join("cells")).unwrap().count(), 2);
    assert!(!out.join("divergence.json").exists());
    let saved = dir_bytes(&out.join("cells"));

    let mut second = args(&[]);
    second.extend_from_slice(&tail);
    vancl(&second).unwrap();
    let cells = dir_bytes(&out.join("cells"));
    assert_eq!(cells.len(), 4);
    for (name, bytes) in saved {
        assert!(cells.contains(&(name, bytes)), "finished cells are kept as they were");
    }
    assert_eq!(read_report(&out.join("divergence.json")).rows.len(), 2);
}

#[test]
fn exit_codes() {
    let bin = env!("CARGO_BIN_EXE_vancl");
    let code = |args: &[&str]| Command::new(bin).args(args).output().unwrap().status.code();
    assert_eq!(code(&["train", "--bogus"]), Some(2));
    assert_eq!(code(&["ablate", "--suite", "NOPE", "--data", "x"]), Some(2));
    assert_eq!(code(&["--help"]), Some(0));

    let tmp = TempDir::new().unwrap();
    let bad = tmp.path().join("bad.json");
    std::fs::write(&bad, b"{\"train\": {\"lr\": \"fast\"}}").unwrap();
    assert_eq!(code(&["train", "--config", p(&bad), "--data", p(tmp.path())]), Some(2));
    let data = gen(tmp.path(), 4, 2, 0.5);
    assert_eq!(code(&["eval", "--model", p(&tmp.path().join("missing.ckpt")), "--data", p(&data)]), Some(1));
}
