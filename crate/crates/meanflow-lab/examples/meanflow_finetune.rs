//! The two-stage pipeline in miniature: flow-matching pretraining on a 2x2
//! conditional mixture, duplication of the temporal embedding into interval
//! and end branches, then flow-map finetuning against the JVP target
//! bootstrapped from the frozen pretrained field.
//!
//! Run with: cargo run --example meanflow_finetune

use meanflow_lab::embed::EmbedMode;
use meanflow_lab::harness::recipes::{mixture_config, MixtureParams, RecipeScale};
use meanflow_lab::harness::{data::build_embedding_table, prepare_training, run_training};
use meanflow_lab::net::NetMode;

fn main() {
    let mut scale = RecipeScale::smoke();
    scale.fm_steps = 800;
    scale.mf_steps = 1200;
    scale.batch = 128;
    scale.hidden = 64;
    let params = MixtureParams::two_by_two(EmbedMode::Disentangled);
    let mut cfg = mixture_config(&params, 7, &scale);
    let table = build_embedding_table(&cfg).unwrap();

    // Stage 1: flow matching (degenerate time pairs, conditional velocity).
    cfg.train.steps = scale.fm_steps;
    let init = prepare_training(&cfg, NetMode::Fm, None).unwrap();
    let fm = run_training(&cfg, NetMode::Fm, init, &table, None).unwrap();
    println!(
        "pretrained {} steps, params {}",
        fm.final_step,
        fm.net.param_count()
    );

    // Stage 2: duplicate the time embedding and finetune the flow map.
    let ckpt = fm.to_checkpoint(&cfg).unwrap();
    cfg.train.steps = scale.mf_steps;
    cfg.train.eval_every = 400;
    cfg.train.eval_samples_per_condition = 200;
    let init = prepare_training(&cfg, NetMode::Mf, Some(&ckpt)).unwrap();
    println!(
        "duplicated time embedding: {} -> {} params, frozen velocity source: {}",
        fm.net.param_count(),
        init.net.param_count(),
        init.frozen.is_some()
    );

    let mf = run_training(&cfg, NetMode::Mf, init, &table, None).unwrap();
    println!(
        "\n{:>6} {:>11} {:>8} {:>8} {:>8} {:>10}",
        "step", "loss", "fid@1", "fid@2", "fid@4", "1-step ED"
    );
    for row in &mf.metrics.rows {
        println!(
            "{:>6} {:>11.5} {:>8.3} {:>8.3} {:>8.3} {:>10.4}",
            row.step, row.loss, row.fidelity_1, row.fidelity_2, row.fidelity_4, row.energy_distance_1
        );
    }
    println!("\n(the one-step-quality recipe runs this at the full acceptance budget)");
}
