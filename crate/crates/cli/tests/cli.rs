use std::path::Path;
use std::process::{Command, Output};

use canvas_forge::metrics::{save_features, FeatureSet};
use canvas_forge_cli::args::Cli;
use clap::CommandFactory;
use serde_json::{json, Value};

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_canvas-forge"));
    cmd.env_remove("CANVAS_FORGE_CAPTIONER_URL");
    cmd
}

fn run_in(dir: &Path, args: &[&str]) -> Output {
    bin().current_dir(dir).args(args).output().unwrap()
}

fn stdout_json(out: &Output) -> Value {
    assert!(out.status.success(), "exit {:?}\nstderr: {}", out.status.code(), String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// The last stderr line of a run without an output file is its manifest.
fn stderr_manifest(out: &Output) -> Value {
    serde_json::from_str(stderr(out).lines().last().unwrap()).unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    std::fs::write(dir.join(name), text).unwrap();
    name.to_string()
}

fn table_rows() -> Vec<(&'static str, u64)> {
    vec![
        ("CC-BY-NC-ND-2.0", 25_790_117),
        ("CC-BY-ND-2.0", 4_827_970),
        ("CC-BY-NC-2.0", 12_468_229),
        ("CC-BY-NC-SA-2.0", 28_314_685),
        ("CC-BY-SA 2.0", 9_270_079),
        ("CC-BY 2.0", 16_962_338),
    ]
}

fn catalog(n: usize) -> String {
    let licenses = ["CC-BY 2.0", "CC-BY-NC-2.0", "All Rights Reserved"];
    (0..n)
        .map(|i| {
            json!({ "id": format!("img-{i:03}"), "license": licenses[i % 3], "width": 800, "height": 600, "title": "a red barn" })
                .to_string()
                + "\n"
        })
        .collect()
}

#[test]
fn help_lists_every_flag_of_every_subcommand() {
    fn walk(cmd: &mut clap::Command, path: &mut Vec<String>, checked: &mut usize) {
        let mut args = path.clone();
        args.push("--help".into());
        let out = bin().args(&args).output().unwrap();
        assert!(out.status.success(), "{args:?}");
        let help = String::from_utf8_lossy(&out.stdout);
        for arg in cmd.get_arguments().filter(|a| !a.is_hide_set()) {
            if let Some(long) = arg.get_long() {
                assert!(help.contains(&format!("--{long}")), "`{}` help lacks --{long}", path.join(" "));
                *checked += 1;
            }
        }
        for sub in cmd.get_subcommands_mut().filter(|s| s.get_name() != "help") {
            path.push(sub.get_name().to_string());
            walk(sub, path, checked);
            path.pop();
        }
    }
    let mut root = Cli::command();
    root.build();
    let mut checked = 0;
    walk(&mut root, &mut Vec::new(), &mut checked);
    assert!(checked > 100, "only {checked} flags checked");
}

#[test]
fn no_arguments_prints_usage_and_exits_1() {
    let out = bin().output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("Usage:"));
}

#[test]
fn unknown_flag_is_a_usage_error_naming_it() {
    let out = bin().args(["plan", "capacity", "--n-params", "1", "--bogus"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("--bogus"));
}

#[test]
fn fid_of_a_file_with_itself_is_zero() {
    let dir = tempfile::tempdir().unwrap();
    let rows: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64, (i * i % 7) as f64, (i % 3) as f64]).collect();
    save_features(&dir.path().join("x.ccfeat"), &FeatureSet::from_rows(&rows).unwrap()).unwrap();
    let v = stdout_json(&run_in(dir.path(), &["metrics", "fid", "--a", "x.ccfeat", "--b", "x.ccfeat"]));
    assert_eq!(v["value"], json!(0.0));
    assert_eq!(v["metric"], "fid");
    assert_eq!((v["n_a"].as_u64(), v["n_b"].as_u64()), (Some(20), Some(20)));
}

#[test]
fn missing_feature_file_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(dir.path(), &["metrics", "kid", "--a", "nope", "--b", "nope"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(stderr_manifest(&out)["exit_code"], 2);
}

#[test]
fn table_rows_partition_into_published_pool_sizes() {
    let dir = tempfile::tempdir().unwrap();
    let records: String = table_rows()
        .iter()
        .enumerate()
        .map(|(i, (license, m))| {
            json!({ "id": format!("row-{i}"), "license": license, "width": 512, "height": 512, "multiplicity": m })
                .to_string()
                + "\n"
        })
        .collect();
    write(dir.path(), "records.jsonl", &records);
    let v = stdout_json(&run_in(dir.path(), &["catalog", "partition", "--in", "records.jsonl", "--out-dir", "d"]));
    assert_eq!(v["count_c"], 26_232_417);
    assert_eq!(v["count_nc"], 26_232_417 + 12_468_229 + 28_314_685);
    for f in ["c.jsonl", "nc.jsonl", "excluded.jsonl", "run-manifest.json"] {
        assert!(dir.path().join("d").join(f).is_file(), "{f}");
    }
    let nc = std::fs::read_to_string(dir.path().join("d/nc.jsonl")).unwrap();
    assert_eq!(nc.lines().count(), 4);

    let pretty = run_in(dir.path(), &["catalog", "partition", "--in", "records.jsonl", "--pretty"]);
    assert!(String::from_utf8_lossy(&pretty.stdout).contains("26,232,417"));
}

#[test]
fn weighted_rates_reproduce_pool_alt_text_shares() {
    let dir = tempfile::tempdir().unwrap();
    let pct = [33.52, 30.23, 31.39, 31.57, 34.05, 28.96];
    let mut csv = String::from("license,count,pct\n");
    for ((license, count), p) in table_rows().iter().zip(pct) {
        csv.push_str(&format!("{license},{count},{p}\n"));
    }
    write(dir.path(), "rates.csv", &csv);
    let v = stdout_json(&run_in(dir.path(), &["catalog", "stats", "--rates", "rates.csv"]));
    let c = v["weighted"]["alt_text_pct_c"].as_f64().unwrap();
    let nc = v["weighted"]["alt_text_pct_nc"].as_f64().unwrap();
    assert!((c - 30.76).abs() < 0.005, "{c}");
    assert!((nc - 31.22).abs() < 0.005, "{nc}");
}

#[test]
fn config_values_sit_under_explicit_flags() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "cfg.json", r#"{"n_params": 5, "dataset-size": 10}"#);
    let v = stdout_json(&run_in(dir.path(), &["plan", "capacity", "--config", "cfg.json", "--n-params", "866000000"]));
    assert_eq!(v["critical_size"], 211_425);
    assert_eq!(v["query"]["dataset_size"], 10);
    assert_eq!(v["memorization_possible"], true);

    let v = stdout_json(&run_in(dir.path(), &["plan", "capacity", "--config", "cfg.json"]));
    assert_eq!(v["critical_size"], 0);
}

#[test]
fn config_lists_and_switches_expand_to_flags() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "cfg.json", r#"{"step": ["fused=1.5", "flash=2"], "pretty": false}"#);
    let v = stdout_json(&run_in(dir.path(), &["plan", "speedup", "--config", "cfg.json"]));
    assert_eq!(v["total"], 3.0);
}

#[test]
fn bad_config_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "unknown.json", r#"{"no_such_flag": 1}"#);
    write(dir.path(), "list.json", "[1, 2]");
    for cfg in ["unknown.json", "list.json", "missing.json"] {
        let out = run_in(dir.path(), &["plan", "capacity", "--n-params", "1", "--config", cfg]);
        assert_eq!(out.status.code(), Some(1), "{cfg}");
        assert!(stderr(&out).contains("--config"), "{cfg}");
    }
}

#[test]
fn malformed_stage_names_the_flag() {
    let out = bin().args(["plan", "cost", "--stage", "256:lots"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("--stage"));
}

#[test]
fn cost_table_fit_stays_within_five_percent() {
    let dir = tempfile::tempdir().unwrap();
    let rows = [
        (8, 1100, 290, 290, 101.04, 38800),
        (16, 2180, 585, 580, 50.29, 38630),
        (32, 4080, 1195, 1160, 25.01, 38420),
        (64, 8530, 2340, 2220, 12.63, 38800),
        (128, 11600, 4590, 3927, 6.79, 41710),
    ];
    let table: Vec<Value> = rows
        .iter()
        .map(|r| json!({"gpus": r.0, "throughput_256": r.1, "throughput_512": r.2, "throughput_512_ema": r.3, "days": r.4, "cost": r.5}))
        .collect();
    write(dir.path(), "rows.json", &serde_json::to_string(&table).unwrap());
    let v = stdout_json(&run_in(dir.path(), &["plan", "cost", "--table", "rows.json"]));
    for row in v["rows"].as_array().unwrap() {
        assert!(row["error_pct"].as_f64().unwrap().abs() < 5.0, "{row}");
        assert!((row["implied_price"].as_f64().unwrap() - 2.0).abs() < 0.01, "{row}");
    }
}

#[test]
fn single_stage_plan_costs_by_the_hour() {
    let v = stdout_json(&bin().args(["plan", "cost", "--stage", "256:95040000:1100"]).output().unwrap());
    assert_eq!((v["days"].as_f64(), v["cost"].as_f64()), (Some(1.0), Some(384.0)));
}

#[test]
fn preference_commands() {
    let v = stdout_json(&bin().args(["prefs", "rate", "--wins", "370", "--total", "1000"]).output().unwrap());
    assert_eq!(v["rate"], 0.37);
    assert!(v["wilson_95"]["upper"].as_f64().unwrap() < 0.5);

    let v = stdout_json(&bin().args(["prefs", "test", "--wins", "0", "--total", "10"]).output().unwrap());
    assert!((v["p_value"].as_f64().unwrap() - 1.953125e-3).abs() < 1e-15);
    assert_eq!(v["method"], "exact");

    let out = bin().args(["prefs", "rate", "--wins", "11", "--total", "10"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));

    let dir = tempfile::tempdir().unwrap();
    write(
        dir.path(),
        "ratings.csv",
        "prompt_id,left_model,right_model,choice\n1,a,ref,left\n2,ref,a,a\n3,ref,a,ref\n4,a,ref,tie\n5,b,ref,right\n",
    );
    let v = stdout_json(&run_in(dir.path(), &["prefs", "rate", "--ratings", "ratings.csv", "--reference", "ref"]));
    let models: Vec<_> =
        v.as_array().unwrap().iter().map(|m| (m["model"].clone(), m["wins"].clone(), m["total"].clone())).collect();
    assert_eq!(models, vec![(json!("a"), json!(2), json!(3)), (json!("b"), json!(0), json!(1))]);
}

#[test]
fn caption_run_retries_then_serves_from_cache() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "rec.jsonl", &catalog(30));
    let args = [
        "caption",
        "run",
        "--in",
        "rec.jsonl",
        "--cache",
        "caps.jsonl",
        "--mock",
        "--mock-fail-every",
        "4",
        "--base-delay-ms",
        "1",
    ];
    let v = stdout_json(&run_in(dir.path(), &args));
    assert_eq!(v["captioned"], 30);
    assert!(v["retried_calls"].as_u64().unwrap() >= 7);
    assert!(dir.path().join("caps.jsonl.manifest.json").is_file());

    let v = stdout_json(&run_in(dir.path(), &args));
    assert_eq!((v["service_calls"].as_u64(), v["cache_hits"].as_u64()), (Some(0), Some(30)));

    let v = stdout_json(&run_in(dir.path(), &["caption", "stats", "--in", "caps.jsonl"]));
    assert_eq!(v["n_captions"], 30);
}

#[test]
fn missing_images_are_data_errors() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "rec.jsonl", &catalog(3));
    std::fs::create_dir(dir.path().join("images")).unwrap();
    let out = run_in(
        dir.path(),
        &["caption", "run", "--in", "rec.jsonl", "--cache", "c.jsonl", "--mock", "--images-dir", "images"],
    );
    assert_eq!(out.status.code(), Some(2));
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["dead_letters"].as_array().unwrap().len(), 3);
}

#[test]
fn unreachable_captioner_from_env_is_a_service_failure() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "rec.jsonl", &catalog(2));
    std::fs::create_dir(dir.path().join("images")).unwrap();
    for i in 0..2 {
        write(dir.path(), &format!("images/img-{i:03}.jpg"), "jpeg bytes");
    }
    let out = bin()
        .current_dir(dir.path())
        .env("CANVAS_FORGE_CAPTIONER_URL", "http://127.0.0.1:9")
        .args(["caption", "run", "--in", "rec.jsonl", "--cache", "c.jsonl", "--images-dir", "images"])
        .args(["--attempts", "2", "--base-delay-ms", "1", "--timeout-secs", "2"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3), "{}", stderr(&out));
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(v["dead_letters"].as_array().unwrap().iter().all(|d| d["unavailable"] == true && d["attempts"] == 2));

    let out =
        run_in(dir.path(), &["caption", "run", "--in", "rec.jsonl", "--cache", "c.jsonl", "--images-dir", "images"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn pipeline_is_byte_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write(d, "rec.jsonl", &catalog(30));
    stdout_json(&run_in(d, &["caption", "run", "--in", "rec.jsonl", "--cache", "caps.jsonl", "--mock"]));
    let v = stdout_json(&run_in(
        d,
        &["latents", "precompute", "--in", "rec.jsonl", "--out-dir", "lat", "--dims", "1,2,2", "--shard-size", "8"],
    ));
    assert_eq!(v["new_shards"].as_array().unwrap().len(), 4);
    let again = stdout_json(&run_in(
        d,
        &["latents", "precompute", "--in", "rec.jsonl", "--out-dir", "lat", "--dims", "1,2,2", "--shard-size", "8"],
    ));
    assert_eq!((again["encoded"].as_u64(), again["skipped"].as_u64()), (Some(0), Some(30)));

    let train = |ck: &str| {
        let out = run_in(
            d,
            &[
                "train",
                "--latents-dir",
                "lat",
                "--captions",
                "caps.jsonl",
                "--checkpoint",
                ck,
                "--steps",
                "120",
                "--batch-size",
                "8",
                "--microbatch-size",
                "4",
                "--hidden",
                "12",
                "--timesteps",
                "20",
                "--seed",
                "3",
                "--loss-out",
                &format!("{ck}.loss.csv"),
            ],
        );
        (stdout_json(&out), std::fs::read(d.join(format!("{ck}.bin"))).unwrap())
    };
    let (a, a_bin) = train("a");
    let (b, b_bin) = train("b");
    assert_eq!(a, b);
    assert_eq!(a_bin, b_bin);
    assert_eq!(std::fs::read(d.join("a.loss.csv")).unwrap(), std::fs::read(d.join("b.loss.csv")).unwrap());
    let manifest = |ck: &str| -> Value {
        serde_json::from_slice(&std::fs::read(d.join(format!("{ck}.manifest.json"))).unwrap()).unwrap()
    };
    let (ma, mb) = (manifest("a"), manifest("b"));
    assert_eq!(ma["subcommand"], "train");
    assert_eq!(ma["seed"], 3);
    assert_ne!(ma["config_fingerprint"], mb["config_fingerprint"], "checkpoint path is part of the config");

    let sample = |out: &str| {
        let o =
            run_in(d, &["sample", "--checkpoint", "a", "--n", "30", "--caption", "a red barn", "--features-out", out]);
        (stdout_json(&o), std::fs::read(d.join(out)).unwrap())
    };
    let (s1, f1) = sample("s1.ccfeat");
    let (s2, f2) = sample("s2.ccfeat");
    assert_eq!((s1, f1), (s2, f2));
    let v = stdout_json(&run_in(d, &["metrics", "kid", "--a", "s1.ccfeat", "--b", "s2.ccfeat"]));
    assert!(v["value"].as_f64().unwrap().is_finite());
}

#[test]
fn same_invocation_same_fingerprint() {
    let run = || stderr_manifest(&bin().args(["plan", "speedup", "--step", "x=2"]).output().unwrap());
    let (a, b) = (run(), run());
    assert_eq!(a["config_fingerprint"], b["config_fingerprint"]);
    assert_eq!(a["subcommand"], "plan speedup");
    assert_eq!(a["exit_code"], 0);
}

#[test]
fn out_flag_writes_result_and_manifest_beside_it() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(dir.path(), &["plan", "speedup", "--step", "x=2", "--out", "r.json"]);
    assert!(out.status.success());
    assert!(out.stdout.is_empty());
    let v: Value = serde_json::from_slice(&std::fs::read(dir.path().join("r.json")).unwrap()).unwrap();
    assert_eq!(v["total"], 2.0);
    let m: Value = serde_json::from_slice(&std::fs::read(dir.path().join("r.json.manifest.json")).unwrap()).unwrap();
    assert_eq!(m["outputs"][0], "r.json");
}

#[test]
fn scarcity_sweep_ignores_worker_count() {
    let run = |workers: &str| {
        bin()
            .args(["sweep", "scarcity", "--n-train", "300", "--n-heldout", "100", "--n-samples", "100"])
            .args(["--steps", "40", "--replicates", "2", "--fractions", "0.1,1", "--workers", workers])
            .output()
            .unwrap()
    };
    let (a, b) = (run("1"), run("3"));
    assert_eq!(stdout_json(&a), stdout_json(&b));
    assert_eq!(a.stdout, b.stdout);
    let v = stdout_json(&a);
    assert_eq!(v["report"]["points"].as_array().unwrap().len(), 2);
}
