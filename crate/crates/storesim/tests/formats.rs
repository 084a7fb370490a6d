//! Interchange formats: round-trips, schema presence, CLI file composition
//! and error paths.

mod common;

use std::io::Write;
use std::process::Command;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use storesim::grid::{CheckoutId, Layout};
use storesim::ingest;
use storesim::traj;

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_storesim")
}

fn fixture_path(dir: &std::path::Path) -> std::path::PathBuf {
    let path = dir.join("store.toml");
    std::fs::write(&path, storesim::fixtures::STORE_16X36).unwrap();
    path
}

#[test]
fn schema_files_ship_with_the_repo() {
    let root = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../..");
    for name in ["schemas/raw_trajectory.schema.json", "schemas/trajectory.schema.json"] {
        let text = std::fs::read_to_string(root.join(name)).unwrap();
        let parsed: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert!(parsed.get("$schema").is_some(), "{name} missing $schema");
    }
}

#[test]
fn raw_log_roundtrip() {
    let raws = vec![
        ingest::RawTrajectory {
            id: "a".into(),
            samples: vec![(0.0, 1.0, 2.0), (0.2, 1.1, 2.2)],
            basket: Some(vec!["soft_drinks".into()]),
            checkout_ts: Some(0.4),
        },
        ingest::RawTrajectory {
            id: "b".into(),
            samples: vec![(0.0, 0.5, 0.5)],
            basket: None,
            checkout_ts: None,
        },
    ];
    let mut buf = Vec::new();
    ingest::write_raw_jsonl(&mut buf, &raws).unwrap();
    let back = ingest::read_raw_jsonl(buf.as_slice()).unwrap();
    assert_eq!(back.len(), 2);
    assert_eq!(back[0].id, "a");
    assert_eq!(back[0].samples, raws[0].samples);
    assert_eq!(back[1].basket, None);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    /// Generated trajectories survive the line format unchanged, and the
    /// layout file format round-trips random stores.
    #[test]
    fn trajectory_and_layout_roundtrip(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layout = common::random_layout(&mut rng, 9, 9, 3);

        let reloaded = Layout::load(&layout.to_file_string()).unwrap();
        prop_assert_eq!(layout.content_hash(), reloaded.content_hash());

        let basket = common::random_basket(&mut rng, &layout, 2);
        let traj = match storesim::generators::gen_tsp(&layout, &basket) {
            Ok(t) => t,
            Err(_) => return Ok(()), // unreachable item on this random store
        };
        let mut buf = Vec::new();
        traj::write_jsonl(&mut buf, std::slice::from_ref(&traj), &layout).unwrap();
        let back = traj::read_jsonl(buf.as_slice(), &layout).unwrap();
        prop_assert_eq!(back.len(), 1);
        prop_assert_eq!(&back[0], &traj);
    }
}

#[test]
fn tsp_generate_command_emits_identical_rows() {
    let tmp = tempfile::tempdir().unwrap();
    let layout_path = fixture_path(tmp.path());
    let out = tmp.path().join("out");
    let status = Command::new(bin())
        .args([
            "generate",
            "--layout",
            layout_path.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
            "--method",
            "tsp",
            "--basket",
            "hot_coffee_tea,bakery_pastries",
            "--count",
            "100",
            "--seed",
            "7",
        ])
        .stdout(std::process::Stdio::null())
        .stderr(std::process::Stdio::null())
        .status()
        .unwrap();
    assert!(status.success());
    let text = std::fs::read_to_string(out.join("tsp.jsonl")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 100);
    assert!(lines.iter().all(|&l| l == lines[0]), "TSP rows must be identical");
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap())
            .unwrap();
    assert_eq!(manifest["entries"]["retention_rate"], serde_json::json!(1.0));
}

#[test]
fn pnn_generate_reports_full_retention() {
    let tmp = tempfile::tempdir().unwrap();
    let layout_path = fixture_path(tmp.path());
    let out = tmp.path().join("out");
    let status = Command::new(bin())
        .args([
            "generate",
            "--layout",
            layout_path.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
            "--method",
            "pnn",
            "--basket",
            "hot_coffee_tea",
            "--count",
            "500",
            "--seed",
            "9",
        ])
        .stdout(std::process::Stdio::null())
        .stderr(std::process::Stdio::null())
        .status()
        .unwrap();
    assert!(status.success());
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap())
            .unwrap();
    assert_eq!(manifest["entries"]["retention_rate"], serde_json::json!(1.0));
    assert_eq!(manifest["entries"]["count"], serde_json::json!(500));
}

#[test]
fn maxent_manifest_reports_solver_work() {
    let tmp = tempfile::tempdir().unwrap();
    let layout_path = fixture_path(tmp.path());
    let out = tmp.path().join("out");
    let status = Command::new(bin())
        .args([
            "generate",
            "--layout",
            layout_path.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
            "--method",
            "maxent",
            "--basket",
            "bakery_pastries",
            "--checkout",
            "1",
            "--budget",
            "48",
            "--count",
            "50",
            "--seed",
            "13",
        ])
        .stdout(std::process::Stdio::null())
        .stderr(std::process::Stdio::null())
        .status()
        .unwrap();
    assert!(status.success());
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap())
            .unwrap();
    let entries = &manifest["entries"];
    assert!(entries["solve_updates"].as_u64().unwrap() > 0);
    assert!(entries["rollout_attempts"].as_u64().unwrap() >= 50);
    let retention = entries["retention_rate"].as_f64().unwrap();
    assert!(retention > 0.0 && retention <= 1.0);
    assert!(entries["mean_len_actions"].as_f64().unwrap() > 0.0);
}

#[test]
fn invalid_layout_exits_with_validation_code() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.toml");
    std::fs::write(
        &bad,
        "version = 1\nwidth = 3\nheight = 3\ngrid = [\"..C\", \".#.\", \"E.#\"]\nentrance = [0, 2]\ncheckouts = [[2, 0]]\ncategories = []\nmystery = 1\n",
    )
    .unwrap();
    let output = Command::new(bin())
        .args(["validate-layout", "--layout", bad.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&output.stderr);
    let record: serde_json::Value =
        serde_json::from_str(stderr.lines().last().unwrap()).unwrap();
    assert_eq!(record["exit"], serde_json::json!(2));
    assert!(record["error"].as_str().unwrap().contains("mystery"));
}

#[test]
fn report_on_empty_directory_says_so() {
    let tmp = tempfile::tempdir().unwrap();
    let output = Command::new(bin())
        .args(["report", "--run", tmp.path().to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("nothing to report"), "stderr: {stderr}");
}

#[test]
fn analyze_and_report_compose_through_files() {
    let tmp = tempfile::tempdir().unwrap();
    let layout_path = fixture_path(tmp.path());
    let run = tmp.path().join("run");
    // Two small generated sets: a reference and a method.
    for (method, extra) in [("noisy_human", &["--detour-target", "0.28"][..]), ("tsp", &[][..])] {
        let mut args = vec![
            "generate",
            "--layout",
            layout_path.to_str().unwrap(),
            "--out",
            run.to_str().unwrap(),
            "--method",
            method,
            "--basket",
            "hot_coffee_tea,bakery_pastries",
            "--checkout",
            "1",
            "--count",
            "80",
            "--seed",
            "21",
        ];
        args.extend_from_slice(extra);
        let status = Command::new(bin())
            .args(&args)
            .stdout(std::process::Stdio::null())
            .stderr(std::process::Stdio::null())
            .status()
            .unwrap();
        assert!(status.success(), "generate {method} failed");
    }
    let reference = run.join("noisy_human.jsonl");
    let tsp = run.join("tsp.jsonl");
    let analyze = |out: &std::path::Path| {
        let status = Command::new(bin())
            .args([
                "analyze",
                "--layout",
                layout_path.to_str().unwrap(),
                "--reference",
                reference.to_str().unwrap(),
                "--method",
                &format!("tsp={}", tsp.display()),
                "--out",
                out.to_str().unwrap(),
            ])
            .stdout(std::process::Stdio::null())
            .stderr(std::process::Stdio::null())
            .status()
            .unwrap();
        assert!(status.success());
    };
    analyze(&run);
    let table = std::fs::read_to_string(run.join("divergence.tsv")).unwrap();
    assert!(table.starts_with("divergence_vs_reference\ttsp\n"));
    assert_eq!(table.lines().count(), 5);
    assert!(run.join("heatmap_reference.png").exists());

    // Byte-stable analyze re-run into a fresh directory.
    let again = tmp.path().join("again");
    analyze(&again);
    assert_eq!(
        std::fs::read(run.join("divergence.tsv")).unwrap(),
        std::fs::read(again.join("divergence.tsv")).unwrap()
    );
    assert_eq!(
        std::fs::read(run.join("heatmap_tsp.png")).unwrap(),
        std::fs::read(again.join("heatmap_tsp.png")).unwrap()
    );

    // Report bundles what exists and names what is missing; rerunning it is
    // byte-stable too.
    let output = Command::new(bin())
        .args(["report", "--run", run.to_str().unwrap()])
        .output()
        .unwrap();
    assert!(output.status.success());
    let first = std::fs::read(run.join("report.txt")).unwrap();
    let text = String::from_utf8_lossy(&first);
    assert!(text.contains("=== divergence.tsv"));
    assert!(text.contains("missing artifacts"));
    assert!(text.contains("usecase3.tsv"));
    let output2 = Command::new(bin())
        .args(["report", "--run", run.to_str().unwrap()])
        .output()
        .unwrap();
    assert!(output2.status.success());
    assert_eq!(output.stdout, output2.stdout);
}

#[test]
fn config_file_drives_generate_and_flags_win() {
    let tmp = tempfile::tempdir().unwrap();
    let layout_path = fixture_path(tmp.path());
    let out_a = tmp.path().join("a");
    let out_b = tmp.path().join("b");
    let config = tmp.path().join("exp.toml");
    let mut f = std::fs::File::create(&config).unwrap();
    writeln!(
        f,
        "layout = {:?}\nmethod = \"pnn\"\nbasket = [\"hot_coffee_tea\", \"bakery_pastries\"]\ncount = 30\nseed = 5\n",
        layout_path.to_str().unwrap()
    )
    .unwrap();
    let run = |out: &std::path::Path, extra: &[&str]| {
        let mut args = vec![
            "generate",
            "--config",
            config.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ];
        args.extend_from_slice(extra);
        let status = Command::new(bin())
            .args(&args)
            .stdout(std::process::Stdio::null())
            .stderr(std::process::Stdio::null())
            .status()
            .unwrap();
        assert!(status.success());
    };
    run(&out_a, &[]);
    // The seed flag overrides the config's seed, changing the output.
    run(&out_b, &["--seed", "6"]);
    let a = std::fs::read(out_a.join("pnn.jsonl")).unwrap();
    let b = std::fs::read(out_b.join("pnn.jsonl")).unwrap();
    assert_ne!(a, b, "flag override must win over the config file");
}

#[test]
fn ingested_and_generated_files_are_interchangeable() {
    // Preprocess a raw log, write it with the shared writer, read it back,
    // and feed it to analytics alongside generated data.
    let layout = Layout::load(storesim::fixtures::STORE_16X36).unwrap();
    let raw = ingest::RawTrajectory {
        id: "h".into(),
        samples: (0..40)
            .map(|i| (i as f64 * 0.2, 4.25, 17.3 - i as f64 * 0.35))
            .collect(),
        basket: Some(vec!["hot_coffee_tea".into()]),
        checkout_ts: None,
    };
    let traj = match ingest::preprocess(&raw, &layout).unwrap() {
        ingest::PreprocessOutcome::Accepted(t) => t,
        other => panic!("{other:?}"),
    };
    let traj = ingest::infer_pickups(&traj, &layout).unwrap().trajectory;
    let mut buf = Vec::new();
    traj::write_jsonl(&mut buf, std::slice::from_ref(&traj), &layout).unwrap();
    let back = traj::read_jsonl(buf.as_slice(), &layout).unwrap();
    let basket = layout.basket_from_names(&["hot_coffee_tea"], CheckoutId(0)).unwrap();
    let gen = storesim::generators::gen_tsp(&layout, &basket).unwrap();
    let occ = storesim::analytics::occupancy(&[back[0].clone(), gen], &layout).unwrap();
    assert!((occ.total_mass() - 1.0).abs() < 1e-9);
}

#[test]
fn usecase3_command_is_byte_stable() {
    let tmp = tempfile::tempdir().unwrap();
    let layout_path = fixture_path(tmp.path());
    let profile_path = tmp.path().join("cluster2.json");
    std::fs::write(&profile_path, storesim::fixtures::CLUSTER2_PROFILE).unwrap();
    let run = |out: &std::path::Path, workers: &str| {
        let status = Command::new(bin())
            .args([
                "usecase3",
                "--layout",
                layout_path.to_str().unwrap(),
                "--profile",
                profile_path.to_str().unwrap(),
                "--count",
                "300",
                "--seed",
                "17",
                "--checkout-weights",
                "0.55,0.45",
                "--out",
                out.to_str().unwrap(),
                "--workers",
                workers,
            ])
            .stdout(std::process::Stdio::null())
            .stderr(std::process::Stdio::null())
            .status()
            .unwrap();
        assert!(status.success());
    };
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    let c = tmp.path().join("c");
    run(&a, "1");
    run(&b, "1");
    run(&c, "3");
    for name in ["usecase3.tsv", "ground_rates.json", "manifest.json"] {
        let bytes_a = std::fs::read(a.join(name)).unwrap();
        assert_eq!(bytes_a, std::fs::read(b.join(name)).unwrap(), "{name} rerun differs");
        assert_eq!(bytes_a, std::fs::read(c.join(name)).unwrap(), "{name} workers differ");
    }
    // Column order is fixed: heuristics, then the agent, then ground truth.
    let tsv = std::fs::read_to_string(a.join("usecase3.tsv")).unwrap();
    assert!(tsv.starts_with("layout_evaluation\ttsp\tpnn\tmaxent\thuman\n"));
}
