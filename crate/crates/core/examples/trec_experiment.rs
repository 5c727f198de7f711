//! The full TREC experiment: train on the 5452 UIUC questions, evaluate on
//! the 500 TREC test questions and print the per-category report.
//!
//!     cargo run --release --example trec_experiment -- \
//!         train_5500.label TREC_10.label glove.txt [word2vec.txt]
//!
//! A fourth argument gives the fine models their own vectors. Training
//! every model with the default settings takes a few minutes.

use std::collections::HashSet;

use qclass::dataset::{coarse_counts, load_dataset};
use qclass::embeddings::{load_embeddings, tokenize};
use qclass::hierarchy::{evaluate_hierarchical, train_two_tier};
use qclass::report::RunReport;
use qclass::training::TrainConfig;
use qclass::{LabelTaxonomy, TierEmbeddings};

fn main() -> qclass::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args: Vec<String> = std::env::args().skip(1).collect();
    if args.len() < 3 {
        eprintln!("usage: trec_experiment TRAIN TEST VECTORS [TIER2_VECTORS]");
        std::process::exit(1);
    }
    let taxonomy = LabelTaxonomy::uiuc();
    let train = load_dataset(&args[0], &taxonomy)?;
    let test = load_dataset(&args[1], &taxonomy)?;
    println!("{} training, {} test questions", train.len(), test.len());
    println!(
        "test questions per category: {:?}",
        coarse_counts(&test, &taxonomy)
    );

    let vocab: HashSet<String> = train
        .iter()
        .chain(&test)
        .flat_map(|r| tokenize(&r.text))
        .collect();
    let tier1 = load_embeddings(&args[2], None, Some(&vocab))?;
    let tier2 = match args.get(3) {
        Some(p) => Some(load_embeddings(p, Some(tier1.dim()), Some(&vocab))?),
        None => None,
    };
    let embeddings = TierEmbeddings {
        tier1: &tier1,
        tier2: tier2.as_ref().unwrap_or(&tier1),
    };
    println!("{} of {} tokens have vectors", tier1.len(), vocab.len());

    let config = TrainConfig::default();
    let (classifier, _) = train_two_tier(&train, &taxonomy, embeddings, &config, |tier, s| {
        println!("{tier:?} epoch {:>2} loss {:.4}", s.epoch, s.mean_loss);
    })?;
    let metrics = evaluate_hierarchical(&classifier, &test, embeddings)?;
    println!(
        "\n{}",
        RunReport::from_metrics(&args[1], &metrics).render_table()
    );
    Ok(())
}
