//! End-to-end exercises of the `mflab` binary: every subcommand, the file
//! formats they exchange, and the exit-code contract.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn mflab() -> Command {
    Command::new(env!("CARGO_BIN_EXE_mflab"))
}

fn run(args: &[&str]) -> Output {
    mflab().args(args).output().expect("binary runs")
}

fn assert_ok(out: &Output) {
    assert!(
        out.status.success(),
        "command failed\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn tiny_config(dir: &Path, max_freq: f64, lr: f64, steps: u64) -> PathBuf {
    let cfg = serde_json::json!({
        "task": {"kind": "mixture", "n_attributes": 2, "values_per_attribute": 2,
                 "arm": 1.5, "component_std": 0.3},
        "embedding": {"source": "synthetic",
                      "spec": {"n_attributes": 2, "values_per_attribute": 2, "dim": 8,
                               "separation": 4.0, "mode": "disentangled"}},
        "net": {"data_dim": 2, "cond_dim": 8, "hidden_dim": 24, "depth": 2},
        "time_embed": {"feature_dim": 8, "min_freq": 1.0, "max_freq": max_freq},
        "schedule": {"family": "logit-normal", "mu_start": 0.0, "mu_end": 0.0,
                     "sigma_start": 1.0, "sigma_end": 1.0,
                     "neq_ratio_start": 0.25, "neq_ratio_end": 0.75},
        "optim": {"lr": lr, "beta1": 0.9, "beta2": 0.999, "eps": 1e-8},
        "train": {"steps": steps, "batch_size": 16, "eval_every": 0,
                  "checkpoint_every": 0, "eval_samples_per_condition": 32,
                  "v_source": "auto"},
        "seed": 11,
        "data_per_condition": 40,
        "heldout_per_condition": 40
    });
    let path = dir.join("config.json");
    fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    path
}

#[test]
fn pipeline_gen_train_sample_eval() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), 8.0, 1e-3, 40);
    let data = dir.path().join("data");
    let fm = dir.path().join("fm");
    let mf = dir.path().join("mf");

    assert_ok(&run(&[
        "gen-data",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        data.to_str().unwrap(),
    ]));
    for name in ["dataset.jsonl", "heldout.jsonl", "embeddings.json", "manifest.json"] {
        assert!(data.join(name).exists(), "{name} missing");
    }

    assert_ok(&run(&[
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--mode",
        "fm",
        "--out",
        fm.to_str().unwrap(),
    ]));
    let fm_ckpt = fm.join("ckpt_final.json");
    assert!(fm_ckpt.exists());
    assert!(fm.join("metrics.csv").exists());

    assert_ok(&run(&[
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--mode",
        "mf",
        "--init-from",
        fm_ckpt.to_str().unwrap(),
        "--out",
        mf.to_str().unwrap(),
    ]));
    let mf_ckpt = mf.join("ckpt_final.json");

    let samples = dir.path().join("samples");
    assert_ok(&run(&[
        "sample",
        "--ckpt",
        mf_ckpt.to_str().unwrap(),
        "--table",
        data.join("embeddings.json").to_str().unwrap(),
        "--steps",
        "2",
        "--conditions",
        "all",
        "-N",
        "50",
        "--out",
        samples.to_str().unwrap(),
        "--record-trajectory",
    ]));

    let report_path = dir.path().join("report.json");
    assert_ok(&run(&[
        "eval",
        "--samples",
        samples.to_str().unwrap(),
        "--dataset",
        data.to_str().unwrap(),
        "--out",
        report_path.to_str().unwrap(),
    ]));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&report_path).unwrap()).unwrap();
    let overall = report["overall"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&overall));
    assert!(report["energy_distance"].as_f64().is_some());
    // Trajectories were recorded, so curvature must be present.
    assert!(report["curvature"].as_f64().is_some());
    for (_, acc) in report["per_condition"].as_object().unwrap() {
        let a = acc.as_f64().unwrap();
        assert!((0.0..=1.0).contains(&a));
    }
}

#[test]
fn sample_step_counts_share_initial_noise() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), 8.0, 1e-3, 10);
    let data = dir.path().join("data");
    let fm = dir.path().join("fm");
    assert_ok(&run(&[
        "gen-data",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        data.to_str().unwrap(),
    ]));
    assert_ok(&run(&[
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--mode",
        "fm",
        "--out",
        fm.to_str().unwrap(),
    ]));
    let mut firsts = Vec::new();
    for steps in ["1", "4"] {
        let out = dir.path().join(format!("s{steps}"));
        assert_ok(&run(&[
            "sample",
            "--ckpt",
            fm.join("ckpt_final.json").to_str().unwrap(),
            "--table",
            data.join("embeddings.json").to_str().unwrap(),
            "--steps",
            steps,
            "-N",
            "5",
            "--seed",
            "21",
            "--out",
            out.to_str().unwrap(),
            "--record-trajectory",
        ]));
        let text = fs::read_to_string(out.join("samples.jsonl")).unwrap();
        let first: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        firsts.push(first["trajectory"][0].to_string());
    }
    assert_eq!(firsts[0], firsts[1], "initial noise must not depend on step count");
}

#[test]
fn eval_refuses_mismatched_digest_unless_forced() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), 8.0, 1e-3, 10);
    let data = dir.path().join("data");
    let fm = dir.path().join("fm");
    assert_ok(&run(&[
        "gen-data",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        data.to_str().unwrap(),
    ]));
    assert_ok(&run(&[
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--mode",
        "fm",
        "--out",
        fm.to_str().unwrap(),
    ]));
    // Different seed, different digest.
    let data2 = dir.path().join("data2");
    assert_ok(&run(&[
        "gen-data",
        "--config",
        cfg.to_str().unwrap(),
        "--seed",
        "999",
        "--out",
        data2.to_str().unwrap(),
    ]));
    let samples = dir.path().join("samples");
    assert_ok(&run(&[
        "sample",
        "--ckpt",
        fm.join("ckpt_final.json").to_str().unwrap(),
        "--table",
        data.join("embeddings.json").to_str().unwrap(),
        "--steps",
        "1",
        "-N",
        "10",
        "--out",
        samples.to_str().unwrap(),
    ]));
    let refused = run(&[
        "eval",
        "--samples",
        samples.to_str().unwrap(),
        "--dataset",
        data2.to_str().unwrap(),
    ]);
    assert_eq!(refused.status.code(), Some(1), "digest mismatch must exit 1");
    assert!(String::from_utf8_lossy(&refused.stderr).contains("digest"));

    let forced = run(&[
        "eval",
        "--samples",
        samples.to_str().unwrap(),
        "--dataset",
        data2.to_str().unwrap(),
        "--force-digest",
    ]);
    assert_ok(&forced);
}

#[test]
fn unknown_condition_and_unknown_recipe_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), 8.0, 1e-3, 10);
    let data = dir.path().join("data");
    let fm = dir.path().join("fm");
    assert_ok(&run(&[
        "gen-data",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        data.to_str().unwrap(),
    ]));
    assert_ok(&run(&[
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--mode",
        "fm",
        "--out",
        fm.to_str().unwrap(),
    ]));
    let out = run(&[
        "sample",
        "--ckpt",
        fm.join("ckpt_final.json").to_str().unwrap(),
        "--table",
        data.join("embeddings.json").to_str().unwrap(),
        "--steps",
        "1",
        "--conditions",
        "c99",
        "-N",
        "5",
        "--out",
        dir.path().join("s").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));

    let out = run(&["repro", "definitely-not-a-recipe"]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("oracle-suite"), "error must list recipes: {err}");
}

#[test]
fn numeric_failure_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    // Absurd learning rate: the first Adam update flings parameters to
    // ~1e305 and the next forward pass overflows.
    let cfg = tiny_config(dir.path(), 8.0, 1e305, 20);
    let out = run(&[
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--mode",
        "fm",
        "--out",
        dir.path().join("fm").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2), "numeric failure must exit 2");
}

#[test]
fn mf_init_requires_fm_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), 8.0, 1e-3, 10);
    let mf = dir.path().join("mf");
    assert_ok(&run(&[
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--mode",
        "mf",
        "--out",
        mf.to_str().unwrap(),
    ]));
    // fm training from an mf checkpoint is a mode mismatch.
    let out = run(&[
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--mode",
        "fm",
        "--init-from",
        mf.join("ckpt_final.json").to_str().unwrap(),
        "--out",
        dir.path().join("x").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn analyze_reports_both_metrics() {
    let dir = tempfile::tempdir().unwrap();
    // Build a small corpus through the library and analyze it via the CLI.
    let spec = meanflow_lab::embed::SyntheticEmbedSpec {
        n_attributes: 2,
        values_per_attribute: 2,
        dim: 8,
        separation: 4.0,
        mode: meanflow_lab::embed::EmbedMode::Disentangled,
    };
    let corpus = meanflow_lab::embed::synthetic_corpus(&spec, 10, 12, 0.3, 5).unwrap();
    let corpus_path = dir.path().join("corpus.jsonl");
    corpus.save(&corpus_path).unwrap();

    for metric in ["discriminability", "disentanglement"] {
        let report_path = dir.path().join(format!("{metric}.json"));
        assert_ok(&run(&[
            "analyze",
            "--corpus",
            corpus_path.to_str().unwrap(),
            "--metric",
            metric,
            "--k",
            "2",
            "--rho",
            "0.3",
            "--seed",
            "3",
            "--query-count",
            "20",
            "--out",
            report_path.to_str().unwrap(),
        ]));
        let report: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(&report_path).unwrap()).unwrap();
        let score = report["score"].as_f64().unwrap();
        assert!(score.is_finite());
        assert!(!report["breakdown"].as_array().unwrap().is_empty());
    }

    // Identical-token corpus scores exactly 1 under disentanglement.
    let tok = vec![0.5, 0.25, -1.0];
    let ident = meanflow_lab::embed::Corpus::from_records(vec![
        meanflow_lab::embed::EmbeddingRecord {
            id: "a".into(),
            token_embeddings: vec![tok.clone(); 5],
            image_embedding: None,
            vision_embedding: None,
            text: None,
        },
        meanflow_lab::embed::EmbeddingRecord {
            id: "b".into(),
            token_embeddings: vec![tok; 7],
            image_embedding: None,
            vision_embedding: None,
            text: None,
        },
    ])
    .unwrap();
    let ident_path = dir.path().join("ident.jsonl");
    ident.save(&ident_path).unwrap();
    let out = run(&[
        "analyze",
        "--corpus",
        ident_path.to_str().unwrap(),
        "--metric",
        "disentanglement",
    ]);
    assert_ok(&out);
    let report: serde_json::Value =
        serde_json::from_str(&String::from_utf8_lossy(&out.stdout)).unwrap();
    assert!((report["score"].as_f64().unwrap() - 1.0).abs() < 1e-12);
}

#[test]
fn repro_smoke_scale_runs_a_recipe() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "repro",
        "discriminability-ablation",
        "--out",
        dir.path().join("r").to_str().unwrap(),
        "--scale",
        "smoke",
    ]);
    assert_ok(&out);
    let summary: serde_json::Value = serde_json::from_str(
        &fs::read_to_string(dir.path().join("r").join("summary.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(summary["recipe"], "discriminability-ablation");
    assert_eq!(summary["passed"], true);
}
