//! Trains the coarse model and the six fine models, then routes questions
//! through them and prints the hierarchical report.
//!
//!     cargo run --release --example two_tier

use qclass::hierarchy::{evaluate_hierarchical, train_two_tier, Tier};
use qclass::report::RunReport;
use qclass::synthetic::SyntheticCorpus;
use qclass::training::TrainConfig;
use qclass::{LabelTaxonomy, TierEmbeddings};

fn main() -> qclass::Result<()> {
    let taxonomy = LabelTaxonomy::uiuc();
    let corpus = SyntheticCorpus::generate(&taxonomy, 12, 24, 5);
    let table = corpus.table();
    let embeddings = TierEmbeddings::shared(&table);
    let config = TrainConfig {
        filters: 32,
        hidden: 48,
        epochs: 30,
        batch_size: 16,
        learning_rate: 5e-3,
        ..TrainConfig::default()
    };

    let (classifier, history) = train_two_tier(
        &corpus.records(),
        &taxonomy,
        embeddings,
        &config,
        |tier, s| {
            if s.epoch == config.epochs {
                let name = match tier {
                    Tier::Coarse => "coarse".to_string(),
                    Tier::Fine(c) => taxonomy.coarse_name(c).to_string(),
                };
                println!("{name:<12} final loss {:.4}", s.mean_loss);
            }
        },
    )?;
    assert_eq!(history.tier2.len(), taxonomy.coarse_count());

    for q in [
        "opener3 filler1 cue3x2 ?",
        "opener5 cue5x10 filler9 filler2 ?",
    ] {
        let p = classifier.classify(q, embeddings)?;
        let (coarse, fine) = classifier.label_names(p);
        println!("{q:<36} -> {coarse} / {fine}");
    }

    let test = SyntheticCorpus::generate(&taxonomy, 2, 24, 55).records();
    let metrics = evaluate_hierarchical(&classifier, &test, embeddings)?;
    println!(
        "\n{}",
        RunReport::from_metrics("generated", &metrics).render_table()
    );
    Ok(())
}
