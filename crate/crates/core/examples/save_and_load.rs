//! Writes a trained classifier to disk, inspects one container header and
//! checks that the reloaded models predict identically.
//!
//!     cargo run --example save_and_load -- [model-dir]

use std::path::PathBuf;

use qclass::container::{load_classifier, save_classifier, tier_path, ModelContainer};
use qclass::hierarchy::{train_two_tier, Tier};
use qclass::synthetic::SyntheticCorpus;
use qclass::training::TrainConfig;
use qclass::{LabelTaxonomy, TierEmbeddings};

fn main() -> qclass::Result<()> {
    let scratch = tempfile::tempdir().map_err(|e| qclass::Error::InvalidArgument(e.to_string()))?;
    let dir = std::env::args()
        .nth(1)
        .map_or_else(|| scratch.path().to_path_buf(), PathBuf::from);

    let taxonomy = LabelTaxonomy::uiuc();
    let corpus = SyntheticCorpus::generate(&taxonomy, 2, 10, 3);
    let table = corpus.table();
    let config = TrainConfig {
        filters: 4,
        hidden: 8,
        epochs: 2,
        ..TrainConfig::default()
    };
    let embeddings = TierEmbeddings::shared(&table);
    let (classifier, _) =
        train_two_tier(&corpus.records(), &taxonomy, embeddings, &config, |_, _| {})?;
    save_classifier(&dir, &classifier, &config)?;

    let entity = ModelContainer::load(tier_path(&dir, Tier::Fine(1), &taxonomy))?;
    println!(
        "{}: {} payload bytes",
        tier_path(&dir, Tier::Fine(1), &taxonomy).display(),
        entity.header.payload_bytes
    );
    for t in &entity.header.tensors {
        println!("  {:<12} {:?} at offset {}", t.name, t.shape, t.offset);
    }

    let (reloaded, _) = load_classifier(&dir)?;
    let same = corpus.records().iter().all(|r| {
        classifier.classify(&r.text, embeddings).ok() == reloaded.classify(&r.text, embeddings).ok()
    });
    println!("reloaded predictions identical: {same}");
    Ok(())
}
