//! End-to-end smoke over the compiled binary: prep → train(bias) →
//! eval → report on a ~1k-interaction synthetic fixture.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use revbench::synth::{planted_topic, write_ndjson, PlantedConfig, TopicTextConfig};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_revbench")
}

fn workdir(tag: &str) -> PathBuf {
    let dir = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join(format!("cli-{tag}"));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn write_fixture(dir: &Path) -> PathBuf {
    let data = planted_topic(
        &PlantedConfig {
            n_users: 120,
            n_items: 40,
            n_interactions: 1000,
            cold_items: 8,
            seed: 5,
            ..Default::default()
        },
        &TopicTextConfig::default(),
    );
    let path = dir.join("fixture.ndjson");
    write_ndjson(&data, &path).unwrap();
    path
}

fn write_config(dir: &Path, dataset: &Path) -> PathBuf {
    let body = format!(
        "schema_version = 1\n\
         dataset = {}\n\
         out_dir = {}\n\
         models = bias\n\
         k_cores = 0\n\
         mask_pcts = 0\n\
         latent_dims = 4\n\
         l2_weights = 1e-5\n\
         dropouts = 0.2\n\
         seeds = 42\n\
         max_epochs = 8\n\
         embed_dim = 8\n\
         embed_epochs = 1\n\
         concat_cap = 64\n",
        dataset.display(),
        dir.join("out").display(),
    );
    let path = dir.join("exp.conf");
    std::fs::write(&path, body).unwrap();
    path
}

fn run(args: &[&str]) -> (i32, String, String) {
    let out = Command::new(bin()).args(args).output().unwrap();
    (
        out.status.code().unwrap_or(-1),
        String::from_utf8_lossy(&out.stdout).into_owned(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

#[test]
fn prep_train_eval_report_round_trip_under_a_minute() {
    let started = Instant::now();
    let dir = workdir("smoke");
    let dataset = write_fixture(&dir);
    let config = write_config(&dir, &dataset);
    let cfg_flag = config.to_str().unwrap();

    // prep builds, second prep is a byte-identical cache hit
    let (code, stdout, stderr) = run(&["prep", "--config", cfg_flag]);
    assert_eq!(code, 0, "prep failed: {stderr}");
    assert!(stdout.contains("built"), "{stdout}");
    let cache_root = dir.join("out").join("cache");
    let entry = std::fs::read_dir(&cache_root)
        .unwrap()
        .next()
        .unwrap()
        .unwrap();
    let snapshot: Vec<(String, Vec<u8>)> = std::fs::read_dir(entry.path())
        .unwrap()
        .map(|f| {
            let f = f.unwrap();
            (
                f.file_name().into_string().unwrap(),
                std::fs::read(f.path()).unwrap(),
            )
        })
        .collect();
    let (code, stdout, _) = run(&["prep", "--config", cfg_flag]);
    assert_eq!(code, 0);
    assert!(stdout.contains("cache hit"), "{stdout}");
    for (name, bytes) in &snapshot {
        let now = std::fs::read(entry.path().join(name)).unwrap();
        assert_eq!(&now, bytes, "cache artifact {name} changed on re-prep");
    }

    // train one bias model and checkpoint it
    let (code, stdout, stderr) = run(&["train", "--config", cfg_flag]);
    assert_eq!(code, 0, "train failed: {stderr}");
    assert!(stdout.contains("train bias"), "{stdout}");
    let ckpt = dir.join("out").join("checkpoints").join("bias-seed42.ckpt");
    assert!(ckpt.exists());

    // eval the checkpoint
    let (code, stdout, stderr) = run(&[
        "eval",
        "--config",
        cfg_flag,
        "--checkpoint",
        ckpt.to_str().unwrap(),
    ]);
    assert_eq!(code, 0, "eval failed: {stderr}");
    assert!(stdout.contains("test_mse="), "{stdout}");

    // full run emits the CSVs, report pivots them
    let (code, _, stderr) = run(&["run", "--config", cfg_flag]);
    assert_eq!(code, 0, "run failed: {stderr}");
    let results = dir.join("out").join("results.csv");
    let body = std::fs::read_to_string(&results).unwrap();
    assert!(body.starts_with("# schema: revbench.results.v1\n"));
    let (code, stdout, stderr) = run(&["report", "--config", cfg_flag]);
    assert_eq!(code, 0, "report failed: {stderr}");
    assert!(stdout.contains("table1.csv"), "{stdout}");
    let table1 = std::fs::read_to_string(dir.join("out").join("table1.csv")).unwrap();
    assert!(table1
        .lines()
        .nth(1)
        .unwrap()
        .starts_with("dataset,k_core,mask_pct,bias"));

    assert!(
        started.elapsed().as_secs() < 60,
        "smoke took {:?}",
        started.elapsed()
    );
}

#[test]
fn eval_refuses_checkpoints_for_changed_data_with_exit_code_2() {
    let dir = workdir("tamper");
    let dataset = write_fixture(&dir);
    let config = write_config(&dir, &dataset);
    let cfg_flag = config.to_str().unwrap();

    let (code, _, stderr) = run(&["train", "--config", cfg_flag]);
    assert_eq!(code, 0, "train failed: {stderr}");
    let ckpt = dir.join("out").join("checkpoints").join("bias-seed42.ckpt");

    // tamper with the dataset: append one record
    let mut body = std::fs::read_to_string(&dataset).unwrap();
    body.push_str(r#"{"reviewerID":"intruder","asin":"i0","overall":5.0,"reviewText":"new data"}"#);
    body.push('\n');
    std::fs::write(&dataset, body).unwrap();

    let (code, _, stderr) = run(&[
        "eval",
        "--config",
        cfg_flag,
        "--checkpoint",
        ckpt.to_str().unwrap(),
    ]);
    assert_eq!(code, 2, "expected data-error exit code, stderr: {stderr}");
    assert!(stderr.contains("hash mismatch"), "{stderr}");
}

#[test]
fn usage_errors_exit_with_code_1() {
    let (code, _, stderr) = run(&["frobnicate"]);
    assert_eq!(code, 1);
    assert!(stderr.contains("usage"), "{stderr}");

    let (code, _, _) = run(&["eval"]); // missing --checkpoint
    assert_eq!(code, 1);

    let dir = workdir("badcfg");
    let bad = dir.join("bad.conf");
    std::fs::write(&bad, "schema_version = 1\nnot_a_key = 1\n").unwrap();
    let (code, _, stderr) = run(&["prep", "--config", bad.to_str().unwrap()]);
    assert_eq!(code, 1, "{stderr}");
}

#[test]
fn mask_sweep_emits_rows_per_percentage() {
    let dir = workdir("sweep");
    let dataset = write_fixture(&dir);
    let config = write_config(&dir, &dataset);
    let cfg_flag = config.to_str().unwrap();
    let (code, _, stderr) = run(&[
        "sweep",
        "--config",
        cfg_flag,
        "--axis",
        "mask",
        "--mask_pcts",
        "0,50,100",
        "--sweep_retune",
        "fixed",
    ]);
    assert_eq!(code, 0, "sweep failed: {stderr}");
    let body = std::fs::read_to_string(dir.join("out").join("results.csv")).unwrap();
    let rows: Vec<&str> = body.lines().skip(2).collect();
    assert_eq!(rows.len(), 3, "{body}");
    assert!(rows.iter().any(|r| r.contains(",50,")), "{body}");
}
