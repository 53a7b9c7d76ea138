use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rosebreed_core::dataset::read_manifest;
use rosebreed_core::evaluation::ComparisonReport;

const PAPER_ORDER: &str = "Papa Meilland,Queen Elizabeth,Iceberg,Kings Ransom,Bengali";

fn rosebreed(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rosebreed"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok_json(args: &[&str]) -> serde_json::Value {
    let mut full = vec!["--json"];
    full.extend_from_slice(args);
    let out = rosebreed(&full);
    assert!(
        out.status.success(),
        "{args:?} failed: {}\n{}",
        String::from_utf8_lossy(&out.stderr),
        String::from_utf8_lossy(&out.stdout)
    );
    serde_json::from_slice(&out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn counts(v: &serde_json::Value, key: &str) -> Vec<u64> {
    v[key].as_array().unwrap().iter().map(|x| x.as_u64().unwrap()).collect()
}

#[test]
fn split_and_augment_reproduce_the_reference_table() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    ok_json(&["synth", "--out", p(&data), "--labels", PAPER_ORDER, "--counts", "328,465,365,391,390", "--size", "8"]);
    let ingested = dir.path().join("ingested.json");
    ok_json(&["ingest", "--data-root", p(&data), "--out", p(&ingested), "--labels", PAPER_ORDER]);

    let split = dir.path().join("split.json");
    let s = ok_json(&["split", "--manifest", p(&ingested), "--out", p(&split), "--ratio", "0.8", "--seed", "42"]);
    assert_eq!(counts(&s, "train"), vec![262, 372, 292, 313, 312]);
    assert_eq!(counts(&s, "test"), vec![66, 93, 73, 78, 78]);

    let aug = dir.path().join("augmented.json");
    let gen = dir.path().join("gen");
    let out = rosebreed(&["augment", "--manifest", p(&split), "--out-dir", p(&gen), "--out", p(&aug), "--multiplier", "5"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8_lossy(&out.stdout);
    let summary = text.lines().next().unwrap();
    assert_eq!(summary, "generated (1310, 1860, 1460, 1565, 1560); grand training total 9306");
    assert_eq!(read_manifest(&aug).unwrap().counts().train_total().iter().sum::<usize>(), 9306);

    // Outputs are never clobbered silently.
    let again = rosebreed(&["split", "--manifest", p(&ingested), "--out", p(&split)]);
    assert_eq!(again.status.code(), Some(2), "{}", String::from_utf8_lossy(&again.stderr));
    assert!(String::from_utf8_lossy(&again.stderr).contains("--force"));
    let forced = rosebreed(&["--force", "split", "--manifest", p(&ingested), "--out", p(&split)]);
    assert!(forced.status.success());
}

fn small_corpus(dir: &Path) -> PathBuf {
    let data = dir.join("data");
    ok_json(&["synth", "--out", p(&data), "--per-class", "12", "--size", "24", "--seed", "3"]);
    let ingested = dir.join("ingested.json");
    ok_json(&["ingest", "--data-root", p(&data), "--out", p(&ingested)]);
    let split = dir.join("split.json");
    ok_json(&["split", "--manifest", p(&ingested), "--out", p(&split), "--ratio", "0.75"]);
    split
}

#[test]
fn exit_codes_follow_the_error_class() {
    let dir = tempfile::tempdir().unwrap();
    let split = small_corpus(dir.path());

    let usage = rosebreed(&["split", "--manifest", p(&split), "--out", p(&dir.path().join("x.json")), "--ratio", "1.5"]);
    assert_eq!(usage.status.code(), Some(2));
    assert_eq!(rosebreed(&["train"]).status.code(), Some(2), "clap usage errors");

    let empty = dir.path().join("empty");
    std::fs::create_dir_all(empty.join("Iceberg")).unwrap();
    let data = rosebreed(&["ingest", "--data-root", p(&empty), "--out", p(&dir.path().join("e.json"))]);
    assert_eq!(data.status.code(), Some(3));

    let io = rosebreed(&["split", "--manifest", p(&dir.path().join("missing.json")), "--out", p(&dir.path().join("y.json"))]);
    assert_eq!(io.status.code(), Some(5));

    let registry = dir.path().join("registry");
    let diverge = rosebreed(&[
        "train", "--manifest", p(&split), "--family", "micro", "--input-size", "24", "--random-init", "1",
        "--learning-rate", "1e38", "--batch-size", "2", "--epochs", "2", "--registry", p(&registry),
    ]);
    assert_eq!(diverge.status.code(), Some(4), "{}", String::from_utf8_lossy(&diverge.stderr));

    let json = rosebreed(&["--json", "split", "--manifest", p(&split), "--out", p(&split)]);
    let body: serde_json::Value = serde_json::from_slice(&json.stdout).unwrap();
    assert_eq!(body["error"]["category"], "usage");
}

#[test]
fn train_evaluate_compare_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let split = small_corpus(dir.path());
    let registry = dir.path().join("registry");
    let mut ids = Vec::new();
    for seed in ["1", "2"] {
        let plots = dir.path().join(format!("plots{seed}"));
        let s = ok_json(&[
            "train", "--manifest", p(&split), "--family", "micro", "--input-size", "24", "--random-init", seed,
            "--epochs", "3", "--batch-size", "8", "--learning-rate", "0.01", "--registry", p(&registry),
            "--plots-dir", p(&plots),
        ]);
        assert!(plots.join("accuracy.png").is_file() && plots.join("loss.png").is_file());
        ids.push(s["model_id"].as_str().unwrap().to_string());
    }

    let eval_dir = dir.path().join("eval");
    let e = ok_json(&["evaluate", "--manifest", p(&split), "--registry", p(&registry), "--out-dir", p(&eval_dir)]);
    assert_eq!(e["model_id"], ids[1].as_str(), "latest by default");
    let confusion: u64 = e["confusion"].as_array().unwrap().iter().flat_map(|r| r.as_array().unwrap()).map(|v| v.as_u64().unwrap()).sum();
    assert_eq!(confusion, 15);
    assert!(eval_dir.join("micro_confusion.png").is_file());

    let cmp = dir.path().join("cmp");
    let c = ok_json(&["compare", "--registry", p(&registry), "--out-dir", p(&cmp)]);
    assert_eq!(c["comparison"]["rows"].as_array().unwrap().len(), 2);
    let report = ComparisonReport::from_csv(&std::fs::read_to_string(cmp.join("comparison.csv")).unwrap()).unwrap();
    assert_eq!(report.rows.len(), 2);
    assert!(report.rows.iter().all(|r| r.model.starts_with("Micro (micro-")));

    let refused = rosebreed(&["compare", "--registry", p(&registry), "--out-dir", p(&cmp)]);
    assert_eq!(refused.status.code(), Some(2));
}

#[test]
fn compare_all_backbones_in_parallel_workers() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    ok_json(&["synth", "--out", p(&data), "--per-class", "2", "--size", "75", "--seed", "5"]);
    let ingested = dir.path().join("ingested.json");
    ok_json(&["ingest", "--data-root", p(&data), "--out", p(&ingested)]);
    let split = dir.path().join("split.json");
    ok_json(&["split", "--manifest", p(&ingested), "--out", p(&split), "--ratio", "0.5"]);

    let registry = dir.path().join("registry");
    let cmp = dir.path().join("cmp");
    let c = ok_json(&[
        "compare", "--all-backbones", "--parallel", "--manifest", p(&split), "--input-size", "75",
        "--random-init", "9", "--epochs", "1", "--batch-size", "4", "--registry", p(&registry), "--out-dir", p(&cmp),
    ]);
    let trained: Vec<&str> = c["trained"].as_array().unwrap().iter().map(|t| t["family"].as_str().unwrap()).collect();
    assert_eq!(trained, vec!["inception_v3", "xception", "resnet50", "vgg16"]);
    let csv = std::fs::read_to_string(cmp.join("comparison.csv")).unwrap();
    let report = ComparisonReport::from_csv(&csv).unwrap();
    assert_eq!(report.rows.len(), 4);
    assert_eq!(csv.lines().filter(|l| l.ends_with(",true")).count(), 1);
    assert_eq!(std::fs::read_dir(cmp).unwrap().filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "png")).count(), 8);
}

#[test]
fn one_config_drives_a_reproducible_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("pipeline.json");
    std::fs::write(
        &config,
        r#"{
  "workdir": "work",
  "synthetic": { "per_class": 10, "image_size": 24, "seed": 11 },
  "split": { "ratio": 0.8, "seed": 42 },
  "augmentation": { "multiplier": 2, "rng_seed": 4 },
  "training": { "epochs": 4, "batch_size": 8, "learning_rate": 0.01 },
  "backbones": [ { "family": "micro", "input_size": [24, 24], "random_init_seed": 2 } ]
}"#,
    )
    .unwrap();
    let work = dir.path().join("work");
    let first = ok_json(&["run", "--config", p(&config)]);
    let manifest = std::fs::read(work.join("manifest.json")).unwrap();
    let audit = std::fs::read(work.join("audit/micro.json")).unwrap();
    assert_eq!(first["counts"]["train_total"], 5 * 8 * 3);
    assert!(work.join("report/comparison.csv").is_file());

    let refused = rosebreed(&["run", "--config", p(&config)]);
    assert_eq!(refused.status.code(), Some(2));

    let second = ok_json(&["--force", "run", "--config", p(&config)]);
    assert_eq!(std::fs::read(work.join("manifest.json")).unwrap(), manifest);
    assert_eq!(std::fs::read(work.join("audit/micro.json")).unwrap(), audit);
    assert_eq!(first["models"][0]["metrics"], second["models"][0]["metrics"]);
    assert_ne!(first["models"][0]["model_id"], second["models"][0]["model_id"]);
}

#[test]
fn serve_answers_health_over_tcp() {
    use std::io::{Read, Write};
    let dir = tempfile::tempdir().unwrap();
    let split = small_corpus(dir.path());
    let registry = dir.path().join("registry");
    ok_json(&[
        "train", "--manifest", p(&split), "--family", "micro", "--input-size", "24", "--random-init", "1",
        "--epochs", "1", "--registry", p(&registry),
    ]);
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let breeds = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/breeds.json");
    let mut child = Command::new(env!("CARGO_BIN_EXE_rosebreed"))
        .args(["serve", "--registry", p(&registry), "--breeds", p(&breeds)])
        .env("ROSE_PORT", port.to_string())
        .spawn()
        .unwrap();
    let deadline = std::time::Instant::now() + std::time::Duration::from_secs(60);
    let body = loop {
        assert!(std::time::Instant::now() < deadline, "service never became healthy");
        std::thread::sleep(std::time::Duration::from_millis(100));
        let Ok(mut s) = std::net::TcpStream::connect(("127.0.0.1", port)) else { continue };
        s.write_all(b"GET /api/v1/health HTTP/1.1\r\nHost: x\r\nConnection: close\r\n\r\n").unwrap();
        let mut text = String::new();
        let _ = s.read_to_string(&mut text);
        if text.starts_with("HTTP/1.1 200") {
            break text;
        }
    };
    child.kill().unwrap();
    child.wait().unwrap();
    assert!(body.contains("\"model_id\":\"micro-"), "{body}");
}
