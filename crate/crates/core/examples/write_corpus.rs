//! Writes a generated label file and vector file for trying the `qclass`
//! binary without the UIUC data.
//!
//!     cargo run --example write_corpus -- out-dir [questions-per-label] [dim]
//!     qclass train --train-file out-dir/train.label --embeddings out-dir/vectors.txt --model-dir models

use std::path::PathBuf;

use qclass::synthetic::SyntheticCorpus;
use qclass::LabelTaxonomy;

fn main() -> qclass::Result<()> {
    let mut args = std::env::args().skip(1);
    let dir = PathBuf::from(args.next().unwrap_or_else(|| "corpus".into()));
    let per_fine = args
        .next()
        .map_or(10, |a| a.parse().expect("count must be an integer"));
    let dim = args
        .next()
        .map_or(50, |a| a.parse().expect("dim must be an integer"));
    std::fs::create_dir_all(&dir).map_err(|e| qclass::Error::InvalidArgument(e.to_string()))?;

    let taxonomy = LabelTaxonomy::uiuc();
    let train = SyntheticCorpus::generate(&taxonomy, per_fine, dim, 1);
    let test = SyntheticCorpus::generate(&taxonomy, per_fine.div_ceil(5), dim, 2);
    train.write_label_file(dir.join("train.label"))?;
    test.write_label_file(dir.join("test.label"))?;
    train.write_vectors(dir.join("vectors.txt"))?;
    println!(
        "wrote {} training and {} test questions with {}-d vectors to {}",
        train.lines.len(),
        test.lines.len(),
        dim,
        dir.display()
    );
    Ok(())
}
