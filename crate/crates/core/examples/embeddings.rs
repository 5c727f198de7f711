//! Loads a word-vector file and turns questions into sentence matrices.
//!
//!     cargo run --example embeddings -- [vectors.txt] ["question"]
//!
//! Without arguments a small generated vector file is used.

use qclass::embeddings::{embed_sentence, load_embeddings, tokenize, DEFAULT_MAX_LEN};
use qclass::synthetic::SyntheticCorpus;
use qclass::LabelTaxonomy;

fn main() -> qclass::Result<()> {
    let mut args = std::env::args().skip(1);
    let dir = tempfile::tempdir().map_err(|e| qclass::Error::InvalidArgument(e.to_string()))?;
    let path = match args.next() {
        Some(p) => p.into(),
        None => {
            let p = dir.path().join("vectors.txt");
            SyntheticCorpus::generate(&LabelTaxonomy::uiuc(), 1, 8, 0).write_vectors(&p)?;
            p
        }
    };
    let question = args
        .next()
        .unwrap_or_else(|| "What is opener2 cue2x1 , filler7 ?".to_string());

    let table = load_embeddings(&path, None, None)?;
    println!(
        "{} words of dimension {} from {}",
        table.len(),
        table.dim(),
        path.display()
    );

    let tokens = tokenize(&question);
    let sentence = embed_sentence(&tokens, &table, DEFAULT_MAX_LEN);
    println!(
        "{} tokens -> {}x{} matrix",
        tokens.len(),
        sentence.m(),
        sentence.d()
    );
    for (i, t) in sentence.tokens().iter().enumerate() {
        let status = if table.contains(t) {
            "known"
        } else {
            "OOV, zero row"
        };
        let norm = sentence
            .values()
            .row(i)
            .iter()
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt();
        println!("  {t:<12} {status:<14} |v| = {norm:.3}");
    }
    Ok(())
}
