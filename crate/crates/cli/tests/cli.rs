use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn run(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_synthpose")).args(args).current_dir(cwd).output().expect("spawn")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

/// Initialized workspace with a fitted prior and a small library in `lib`.
fn workspace() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    for args in [
        &["init", "--out", "."][..],
        &["fit-prior", "--config", "config.json", "--out", "lib"],
        &["build-bodies", "--config", "config.json", "--out", "lib", "--count", "2", "--textures", "2"],
    ] {
        let o = run(args, d);
        assert_eq!(code(&o), 0, "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    }
    let mut cfg: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("config.json")).unwrap()).unwrap();
    cfg["paths"]["prior"] = "lib/prior.json".into();
    cfg["paths"]["library"] = "lib/library".into();
    fs::write(d.join("config.json"), cfg.to_string()).unwrap();
    dir
}

#[test]
fn missing_backgrounds_exit_3_without_writing() {
    let ws = workspace();
    let d = ws.path();
    fs::remove_dir_all(d.join("assets/backgrounds")).unwrap();
    let o = run(&["generate", "--config", "config.json", "--out", "out", "--count", "3"], d);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(!d.join("out").exists());
}

#[test]
fn bad_configs_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(code(&run(&["init", "--out", "."], d)), 0);
    let good: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("config.json")).unwrap()).unwrap();

    let mut unknown = good.clone();
    unknown["render"]["widht"] = 64.into();
    let mut zero = good.clone();
    zero["counts"]["images"] = 0.into();
    let mut fill = good.clone();
    fill["render"]["fill"] = serde_json::json!([0.9, 0.2]);
    for (name, text) in [
        ("unknown", unknown.to_string()),
        ("zero", zero.to_string()),
        ("fill", fill.to_string()),
        ("syntax", "{\"paths\": ".to_string()),
    ] {
        let path = format!("{name}.json");
        fs::write(d.join(&path), text).unwrap();
        let o = run(&["generate", "--config", &path, "--out", "out"], d);
        assert_eq!(code(&o), 2, "{name}: {}", String::from_utf8_lossy(&o.stderr));
    }
    assert_eq!(code(&run(&["generate", "--config", "absent.json", "--out", "out"], d)), 2);
    assert_eq!(code(&run(&["generate", "--bogus-flag"], d)), 2);
    assert!(!d.join("out").exists());
}

#[test]
fn missing_prediction_file_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let o = run(&["eval", "--gt", "nope.jsonl", "--pred", "a=also_nope.jsonl", "--out", "ev"], d);
    assert_eq!(code(&o), 3);
}

#[test]
fn full_pipeline() {
    let ws = workspace();
    let d = ws.path();
    let ok = |args: &[&str]| {
        let o = run(args, d);
        assert_eq!(code(&o), 0, "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    };
    ok(&["sample-poses", "--model", "lib/prior.json", "--count", "5", "--seed", "3", "--out", "poses.jsonl"]);
    assert_eq!(fs::read_to_string(d.join("poses.jsonl")).unwrap().lines().count(), 5);

    ok(&["generate", "--config", "config.json", "--out", "data", "--count", "6", "--jobs", "2"]);
    for i in 0..6 {
        assert!(d.join(format!("data/images/{i:07}.png")).is_file());
    }
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(d.join("data/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["count"], 6);
    assert_eq!(manifest["records"].as_array().unwrap().len(), 6);

    // A perturbed copy of the ground truth ranks below the exact one.
    let gt = fs::read_to_string(d.join("data/annotations.jsonl")).unwrap();
    let noisy: Vec<String> = gt
        .lines()
        .map(|l| {
            let mut v: serde_json::Value = serde_json::from_str(l).unwrap();
            for (k, x) in v["pose45_camera_normalized"].as_array_mut().unwrap().iter_mut().enumerate() {
                *x = (x.as_f64().unwrap() + 0.02 * ((k * 7 % 5) as f64 - 2.0)).into();
            }
            v.to_string()
        })
        .collect();
    fs::write(d.join("noisy.jsonl"), noisy.join("\n")).unwrap();
    ok(&["eval", "--gt", "data/annotations.jsonl", "--pred", "exact=data/annotations.jsonl", "--pred", "noisy.jsonl", "--out", "ev"]);
    let ranking = fs::read_to_string(d.join("ev/ranking.csv")).unwrap();
    let rows: Vec<&str> = ranking.lines().skip(1).collect();
    assert!(rows[0].starts_with("1,exact,") && rows[1].starts_with("2,noisy,"), "{ranking}");
    for f in ["exact.csv", "exact.svg", "exact.json", "noisy.csv", "ranking.svg"] {
        assert!(d.join("ev").join(f).is_file(), "{f}");
    }

    ok(&["reconstruct", "--image", "data/images/0000002.png", "--pose", "data/annotations.jsonl", "--index", "2", "--out", "overlay.png"]);
    let overlay = image::open(d.join("overlay.png")).unwrap();
    assert_eq!((overlay.width(), overlay.height()), (128, 128));

    ok(&["train-da", "--out", "da", "--seed", "2"]);
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("da/summary.json")).unwrap()).unwrap();
    assert!(summary["probe_after"].as_f64().unwrap() < summary["probe_before"].as_f64().unwrap());
    for f in ["adapted.json", "baseline.json", "history.csv", "config.json"] {
        assert!(d.join("da").join(f).is_file(), "{f}");
    }
}

#[test]
fn seed_override_changes_output_and_rerun_reproduces() {
    let ws = workspace();
    let d = ws.path();
    for (seed, out) in [("1", "s1"), ("2", "s2"), ("1", "s1b")] {
        let o = run(&["generate", "--config", "config.json", "--out", out, "--count", "2", "--seed", seed], d);
        assert_eq!(code(&o), 0);
    }
    let read = |p: &str| fs::read(d.join(p)).unwrap();
    assert_eq!(read("s1/annotations.jsonl"), read("s1b/annotations.jsonl"));
    assert_eq!(read("s1/manifest.json"), read("s1b/manifest.json"));
    assert_ne!(read("s1/annotations.jsonl"), read("s2/annotations.jsonl"));
}
