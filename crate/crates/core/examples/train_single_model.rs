//! Trains one coarse classifier on generated questions and prints its
//! history and confusion matrix.
//!
//!     cargo run --release --example train_single_model

use qclass::dataset::holdout_split;
use qclass::synthetic::SyntheticCorpus;
use qclass::training::{encode_records, evaluate, train, TrainConfig};
use qclass::{LabelTaxonomy, QcnnModel, Rng};

fn main() -> qclass::Result<()> {
    let taxonomy = LabelTaxonomy::uiuc();
    let corpus = SyntheticCorpus::generate(&taxonomy, 12, 32, 1);
    let table = corpus.table();
    let (train_records, test_records) = holdout_split(&corpus.records(), 0.8, 2)?;

    let config = TrainConfig {
        filters: 20,
        hidden: 32,
        epochs: 12,
        batch_size: 20,
        learning_rate: 3e-3,
        seed: 3,
        ..TrainConfig::default()
    };
    let train_set = encode_records(&train_records, &table, config.max_len, |r| r.coarse);
    let test_set = encode_records(&test_records, &table, config.max_len, |r| r.coarse);

    let mut model = QcnnModel::new(
        config.model_config(table.dim(), taxonomy.coarse_count()),
        &mut Rng::new(4),
    )?;
    println!(
        "{} parameters, {} training questions",
        model.param_count(),
        train_set.len()
    );
    train(&mut model, &train_set, &test_set, &config, |s| {
        println!(
            "epoch {:>2}  loss {:.4}  train {:.3}  held-out {:.3}",
            s.epoch,
            s.mean_loss,
            s.train_accuracy,
            s.validation_accuracy.unwrap_or(f64::NAN)
        );
    })?;

    let eval = evaluate(&model, &test_set)?;
    println!(
        "\nheld-out accuracy {:.3} ({}/{})",
        eval.accuracy(),
        eval.correct(),
        eval.total()
    );
    println!("confusion (rows gold):");
    for gold in 0..taxonomy.coarse_count() {
        let row: Vec<String> = (0..taxonomy.coarse_count())
            .map(|p| format!("{:>3}", eval.confusion.get(gold, p)))
            .collect();
        println!("  {:<12} {}", taxonomy.coarse_name(gold), row.join(" "));
    }
    Ok(())
}
