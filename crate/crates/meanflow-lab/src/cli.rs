//! Thin command-line layer over the harness.
//!
//! Exit codes: 0 success, 1 validation error, 2 numeric failure
//! (NaN/divergence), 3 acceptance-threshold failure (`repro` only).

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::embed::RetrievalMode;
use crate::error::{Error, Result};
use crate::harness::analyze::{analyze_corpus_file, AnalyzeMetric, AnalyzeOptions};
use crate::harness::config::ExperimentConfig;
use crate::harness::data::{gen_data, sample_to_files};
use crate::harness::evalcmd::{eval_samples, EvalOptions};
use crate::harness::recipes::{run_recipe, RecipeScale};
use crate::harness::train::{prepare_training, run_training};
use crate::net::{Checkpoint, NetMode};

#[derive(Parser)]
#[command(
    name = "mflab",
    about = "Desk-scale flow-map generation laboratory",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate dataset, held-out split, embedding table and manifest.
    GenData(GenDataArgs),
    /// Train a model (flow-matching pretraining or flow-map finetuning).
    Train(TrainArgs),
    /// Draw samples from a checkpoint.
    Sample(SampleArgs),
    /// Evaluate a sample directory against a dataset directory.
    Eval(EvalArgs),
    /// Score an embedding corpus (discriminability or disentanglement).
    Analyze(AnalyzeArgs),
    /// Run a named end-to-end experiment and report pass/fail.
    Repro(ReproArgs),
}

#[derive(Args)]
struct GenDataArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Override the config seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    /// fm (flow matching) or mf (flow map).
    #[arg(long)]
    mode: String,
    #[arg(long)]
    out: PathBuf,
    /// Checkpoint to initialize from: same mode resumes, an fm checkpoint
    /// under --mode mf duplicates the time embedding.
    #[arg(long)]
    init_from: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct SampleArgs {
    #[arg(long)]
    ckpt: PathBuf,
    /// Embedding table (embeddings.json from gen-data).
    #[arg(long)]
    table: PathBuf,
    #[arg(long)]
    steps: usize,
    /// Comma-separated condition ids, or "all".
    #[arg(long, default_value = "all")]
    conditions: String,
    /// Samples per condition.
    #[arg(short = 'N', long, default_value_t = 1000)]
    count: usize,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Record every intermediate state (enables curvature in eval).
    #[arg(long)]
    record_trajectory: bool,
}

#[derive(Args)]
struct EvalArgs {
    /// Directory produced by `sample`.
    #[arg(long)]
    samples: PathBuf,
    /// Directory produced by `gen-data`.
    #[arg(long)]
    dataset: PathBuf,
    /// Accept mismatched config digests.
    #[arg(long)]
    force_digest: bool,
    /// Write the report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[arg(long)]
    corpus: PathBuf,
    /// discriminability or disentanglement.
    #[arg(long)]
    metric: String,
    /// Retrieval depth.
    #[arg(long, default_value_t = 2)]
    k: usize,
    /// Token ablation fraction.
    #[arg(long, default_value_t = 0.3)]
    rho: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Seeded uniform query subset size.
    #[arg(long, default_value_t = 100)]
    query_count: usize,
    /// Rank against image embeddings instead of pooled text.
    #[arg(long)]
    text_image: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReproArgs {
    /// Recipe name; use an unknown name to list the available ones.
    recipe: String,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// full (acceptance budget) or smoke (seconds).
    #[arg(long, default_value = "full")]
    scale: String,
}

/// Parses argv and runs; returns the process exit code.
pub fn run() -> i32 {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::GenData(args) => {
            let mut cfg = ExperimentConfig::load(&args.config)?;
            if let Some(seed) = args.seed {
                cfg.seed = seed;
            }
            let manifest = gen_data(&cfg, &args.out)?;
            println!(
                "wrote {} conditions x {} points to {} (digest {})",
                manifest.condition_ids.len(),
                manifest.data_per_condition,
                args.out.display(),
                manifest.config_digest
            );
            Ok(0)
        }
        Command::Train(args) => cmd_train(args),
        Command::Sample(args) => cmd_sample(args),
        Command::Eval(args) => {
            let report = eval_samples(
                &args.samples,
                &args.dataset,
                EvalOptions {
                    force_digest: args.force_digest,
                },
            )?;
            let text = serde_json::to_string_pretty(&report)?;
            write_or_print(args.out.as_deref(), &text)?;
            Ok(0)
        }
        Command::Analyze(args) => {
            let opts = AnalyzeOptions {
                metric: AnalyzeMetric::parse(&args.metric)?,
                k: args.k,
                rho: args.rho,
                seed: args.seed,
                query_count: args.query_count,
                mode: if args.text_image {
                    RetrievalMode::TextImage
                } else {
                    RetrievalMode::TextText
                },
            };
            let report = analyze_corpus_file(&args.corpus, &opts)?;
            let text = serde_json::to_string_pretty(&report)?;
            write_or_print(args.out.as_deref(), &text)?;
            Ok(0)
        }
        Command::Repro(args) => {
            let scale = RecipeScale::parse(&args.scale)?;
            let outcome = run_recipe(&args.recipe, args.seed, &scale, args.out.as_deref())?;
            for check in &outcome.checks {
                println!("{}", check.line());
            }
            println!(
                "recipe {} ({} checks): {}",
                outcome.recipe,
                outcome.checks.len(),
                if outcome.passed { "PASS" } else { "FAIL" }
            );
            Ok(if outcome.passed { 0 } else { 3 })
        }
    }
}

fn cmd_train(args: TrainArgs) -> Result<i32> {
    let mut cfg = ExperimentConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let mode = NetMode::parse(&args.mode)?;
    let init_ckpt = args
        .init_from
        .as_deref()
        .map(Checkpoint::load)
        .transpose()?;
    let init = prepare_training(&cfg, mode, init_ckpt.as_ref())?;
    std::fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;
    let table = crate::harness::data::build_embedding_table(&cfg)?;

    let out_dir = args.out.clone();
    let mut write_ckpt = |ckpt: &Checkpoint| -> Result<()> {
        ckpt.save(&out_dir.join(format!("ckpt_step_{}.json", ckpt.meta.step)))
    };
    let outcome = run_training(&cfg, mode, init, &table, Some(&mut write_ckpt))?;

    let csv = outcome.metrics.to_csv(&cfg.digest());
    let metrics_path = args.out.join("metrics.csv");
    std::fs::write(&metrics_path, csv).map_err(|e| Error::io(&metrics_path, e))?;
    let final_ckpt = outcome.to_checkpoint(&cfg)?;
    final_ckpt.save(&args.out.join("ckpt_final.json"))?;
    if let Some(row) = outcome.metrics.rows.last() {
        println!(
            "trained {} steps (mode {}): loss {:.5}, fidelity 1/2/4-step {:.3}/{:.3}/{:.3}, ed {:.4}",
            outcome.final_step,
            mode.as_str(),
            row.loss,
            row.fidelity_1,
            row.fidelity_2,
            row.fidelity_4,
            row.energy_distance_1
        );
    }
    Ok(0)
}

fn cmd_sample(args: SampleArgs) -> Result<i32> {
    let ckpt = Checkpoint::load(&args.ckpt)?;
    let table = crate::embed::EmbeddingTable::load(&args.table)?;
    let conditions: Vec<String> = if args.conditions == "all" {
        table.by_condition.keys().cloned().collect()
    } else {
        args.conditions
            .split(',')
            .map(|s| s.trim().to_string())
            .filter(|s| !s.is_empty())
            .collect()
    };
    if conditions.is_empty() {
        return Err(Error::InvalidArg("no conditions requested".into()));
    }
    for c in &conditions {
        table.get(c)?;
    }
    let summary = sample_to_files(
        &ckpt,
        &table,
        &conditions,
        args.steps,
        args.count,
        args.seed,
        args.record_trajectory,
        &args.out,
    )?;
    println!(
        "sampled {} x {} conditions with {} steps ({}) into {}",
        summary.n_per_condition,
        summary.conditions.len(),
        summary.steps,
        summary.sampler,
        args.out.display()
    );
    Ok(0)
}

fn write_or_print(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => std::fs::write(p, text).map_err(|e| Error::io(p, e)),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}
