use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use saia_core::preprocess::{save_rgb, Raster};

const SMALL: [&str; 6] = ["--set", "data.samples=1500", "--set", "embedded.rounds=10", "--set", "networked.train.rounds=10"];

fn config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/synthetic.json")
}

fn saia(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_saia"))
        .args(args)
        .arg("--config")
        .arg(config())
        .arg("--out")
        .arg(out)
        .args(SMALL)
        .output()
        .unwrap()
}

fn ok(out: &Path, args: &[&str]) -> String {
    let o = saia(out, args);
    assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout).unwrap()
}

fn stage(out: &Path, epsilon: &str) {
    let set = format!("du.epsilon={epsilon}");
    for cmd in ["prepare-features", "export-posteriors", "train-embedded", "gen-meta", "train-du", "run"] {
        ok(out, &[cmd, "--set", &set]);
    }
}

fn summary(out: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(out.join("run/summary.json")).unwrap()).unwrap()
}

#[test]
fn staged_run_reproduces_the_sweep_row() {
    let dir = tempfile::tempdir().unwrap();
    stage(dir.path(), "5");
    ok(dir.path(), &["sweep"]);
    let sweep = fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    let row: Vec<f64> = sweep
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect::<Vec<f64>>())
        .find(|r| r[0] == 5.0)
        .unwrap();
    let s = summary(dir.path());
    assert_eq!(s["fraction_sent"].as_f64().unwrap(), row[1]);
    assert_eq!(s["accuracy"].as_f64().unwrap(), row[2]);
    assert_eq!(s["tpr"].as_f64().unwrap(), row[3]);
    assert_eq!(s["elapsed_per_sample"].as_f64().unwrap(), row[5]);
    assert_eq!(s["valid"], true);
}

fn snapshot(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn rerunning_overwrites_identically() {
    let dir = tempfile::tempdir().unwrap();
    stage(dir.path(), "3");
    let first = snapshot(dir.path());
    // a rerun of a later stage must not touch its inputs or earlier outputs
    ok(dir.path(), &["train-du", "--set", "du.epsilon=3"]);
    ok(dir.path(), &["run", "--set", "du.epsilon=3"]);
    assert_eq!(first, snapshot(dir.path()));
    stage(dir.path(), "3");
    assert_eq!(first, snapshot(dir.path()));

    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("manifests/run.json")).unwrap()).unwrap();
    assert_eq!(manifest["subcommand"], "run");
    assert_eq!(manifest["seed"], 7);
    assert_eq!(manifest["config_sha256"].as_str().unwrap().len(), 64);
    for input in ["data/test.csv", "models/embedded.model", "models/du.model", "ensemble/posteriors.csv"] {
        assert!(manifest["inputs"][input].is_string(), "{input} missing from {manifest}");
    }
    assert!(manifest["outputs"]["run/summary.json"].is_string());
}

#[test]
fn socket_run_matches_in_process_run() {
    let dir = tempfile::tempdir().unwrap();
    stage(dir.path(), "5");
    let local = summary(dir.path());

    let mut server = Command::new(env!("CARGO_BIN_EXE_saia"))
        .args(["serve", "--endpoint", "127.0.0.1:0", "--config"])
        .arg(config())
        .arg("--out")
        .arg(dir.path())
        .args(SMALL)
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(server.stdout.take().unwrap()).read_line(&mut line).unwrap();
    let addr = line.trim().strip_prefix("listening ").unwrap().to_string();

    let endpoint = format!("run.transport={{\"kind\":\"socket\",\"endpoint\":\"{addr}\"}}");
    ok(dir.path(), &["run", "--set", "du.epsilon=5", "--set", &endpoint]);
    server.kill().unwrap();
    server.wait().unwrap();
    let remote = summary(dir.path());
    for key in ["sent", "fraction_sent", "accuracy", "elapsed_per_sample"] {
        assert_eq!(local[key], remote[key], "{key}");
    }
    assert!(remote["tpr"].is_null());
}

#[test]
fn unreachable_server_fails_with_one_line() {
    let dir = tempfile::tempdir().unwrap();
    stage(dir.path(), "5");
    // bind then drop to get a port nothing listens on
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let endpoint = format!("run.transport={{\"kind\":\"socket\",\"endpoint\":\"127.0.0.1:{port}\"}}");
    let o = saia(dir.path(), &["run", "--set", "du.epsilon=5", "--set", &endpoint]);
    assert!(!o.status.success());
    let err = String::from_utf8(o.stderr).unwrap();
    assert_eq!(err.lines().count(), 1);
    let parsed: serde_json::Value = serde_json::from_str(err.trim()).unwrap();
    assert_eq!(parsed["error"], "TransportFailure");
}

#[test]
fn errors_are_single_json_lines() {
    let dir = tempfile::tempdir().unwrap();
    for (args, kind) in [
        (vec!["run"], "IoError"),
        (vec!["sweep", "--set", "du.epsilonn=3"], "ConfigError"),
        (vec!["sweep", "--set", "du.threshold=2"], "ConfigError"),
        (vec!["train-du"], "IoError"),
    ] {
        let o = saia(dir.path(), &args);
        assert!(!o.status.success(), "{args:?}");
        let err = String::from_utf8(o.stderr).unwrap();
        assert_eq!(err.lines().count(), 1, "{err}");
        let parsed: serde_json::Value = serde_json::from_str(err.trim()).unwrap();
        assert_eq!(parsed["error"], kind, "{args:?}");
    }

    let o = Command::new(env!("CARGO_BIN_EXE_saia")).arg("frobnicate").output().unwrap();
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));

    let bad_config = dir.path().join("bad.json");
    fs::write(&bad_config, "{ nope").unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_saia"))
        .args(["sweep", "--config"])
        .arg(&bad_config)
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap();
    let parsed: serde_json::Value = serde_json::from_slice(&o.stderr).unwrap();
    assert_eq!(parsed["error"], "ConfigError");
}

#[test]
fn baseline_and_report() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["sweep", "--set", "epsilons=[0,3,100]"]);
    let sweep = dir.path().join("sweep.csv");
    ok(dir.path(), &["baseline", "--fractions-from", sweep.to_str().unwrap(), "--set", "baseline.trials=20"]);
    let baseline = fs::read_to_string(dir.path().join("baseline.csv")).unwrap();
    let lines: Vec<&str> = baseline.lines().collect();
    assert_eq!(lines[0], "fraction_sent,mean_accuracy,std_accuracy,trials");
    assert_eq!(lines.len(), 4);
    // f = 0 is the embedded model alone, with no spread
    let first: Vec<f64> = lines[1].split(',').map(|v| v.parse().unwrap()).collect();
    assert_eq!((first[0], first[2], first[3]), (0.0, 0.0, 20.0));

    let text = ok(dir.path(), &["report"]);
    assert!(text.contains("best:") && text.contains("random routing:"));
    assert_eq!(fs::read_to_string(dir.path().join("report.txt")).unwrap(), text);
}

/// Dark blob on a light, slightly noisy background.
fn lesion(rng: &mut ChaCha8Rng, tint: [u8; 3]) -> Raster<[u8; 3]> {
    let (w, h) = (rng.random_range(28..40), rng.random_range(28..40));
    let (cx, cy, r) = (w as f64 / 2.0, h as f64 / 2.0, rng.random_range(6.0..11.0));
    Raster::from_fn(w, h, |x, y| {
        let inside = (x as f64 - cx).powi(2) / 1.3 + (y as f64 - cy).powi(2) <= r * r;
        let n = rng.random_range(0..12u8);
        if inside { [tint[0] + n, tint[1] + n, tint[2] + n] } else { [220 - n, 210 - n, 200 - n] }
    })
}

#[test]
fn image_folder_to_features() {
    let dir = tempfile::tempdir().unwrap();
    let images = dir.path().join("images");
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for (class, tint) in [[90u8, 40, 30], [40, 40, 90]].into_iter().enumerate() {
        let class_dir = images.join(class.to_string());
        fs::create_dir_all(&class_dir).unwrap();
        for i in 0..12 {
            save_rgb(&lesion(&mut rng, tint), class_dir.join(format!("img{i:02}.ppm"))).unwrap();
        }
    }
    fs::write(images.join("0/notes.txt"), "ignored").unwrap();
    let before = snapshot(&images);

    let out = dir.path().join("out");
    let run = |extra: &[&str]| {
        let mut args = vec!["prepare-features", "--images", images.to_str().unwrap(), "--set", "data.classes=2"];
        args.extend_from_slice(extra);
        ok(&out, &args)
    };
    run(&["--augment"]);
    let features = fs::read_to_string(out.join("data/features.csv")).unwrap();
    let header = features.lines().next().unwrap();
    assert_eq!(header.split(',').count(), 2 + 9 + 765 + 26);
    assert_eq!(features.lines().count(), 1 + 24);
    assert!(features.lines().nth(1).unwrap().starts_with("0_img00,0,"));
    let augmented = fs::read_to_string(out.join("data/augmented.csv")).unwrap();
    assert_eq!(augmented.lines().count(), 1 + 24 * 7);
    assert!(augmented.contains("0_img00~rot90_hflip,0,"));
    let manifest = fs::read_to_string(out.join("manifests/prepare-features.json")).unwrap();
    assert_eq!(manifest.matches(".ppm").count(), 24);
    assert_eq!(snapshot(&images), before);

    // same inputs → same bytes
    let first = fs::read(out.join("data/features.csv")).unwrap();
    run(&["--augment"]);
    assert_eq!(first, fs::read(out.join("data/features.csv")).unwrap());

    // out-of-range class directory
    fs::create_dir_all(images.join("5")).unwrap();
    let o = saia(&out, &["prepare-features", "--images", images.to_str().unwrap(), "--set", "data.classes=2"]);
    let parsed: serde_json::Value = serde_json::from_slice(&o.stderr).unwrap();
    assert_eq!(parsed["error"], "LabelOutOfRange");
}

#[test]
fn augmented_rows_only_join_their_training_images() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    ok(out, &["prepare-features"]);
    // fake augmented file: one copy of every sample, whichever split it is in
    let all: Vec<String> = ["train", "meta", "test"]
        .iter()
        .flat_map(|p| fs::read_to_string(out.join(format!("data/{p}.csv"))).unwrap().lines().skip(1).map(str::to_string).collect::<Vec<_>>())
        .collect();
    let header = fs::read_to_string(out.join("data/train.csv")).unwrap().lines().next().unwrap().to_string();
    let rows: Vec<String> = all
        .iter()
        .map(|l| {
            let (id, rest) = l.split_once(',').unwrap();
            format!("{id}~hflip,{rest}")
        })
        .collect();
    let extra = out.join("extra.csv");
    fs::write(&extra, format!("{header}\n{}\n", rows.join("\n"))).unwrap();
    let train_rows = fs::read_to_string(out.join("data/train.csv")).unwrap().lines().count() - 1;
    let text = ok(out, &["train-embedded", "--extra-train", extra.to_str().unwrap()]);
    assert!(text.contains(&format!("added {train_rows} augmented training rows")), "{text}");
}
