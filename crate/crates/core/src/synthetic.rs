//! Generated questions and word vectors in the on-disk formats, for demos
//! and tests that must run without the UIUC files or pretrained vectors.
//!
//! Each question is an opener word tied to its coarse category, a cue word
//! tied to its fine category, and random filler, so both tiers have
//! something learnable. Vectors are i.i.d. normal.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::dataset::{parse_trec_line, LabelTaxonomy, QuestionRecord};
use crate::embeddings::EmbeddingTable;
use crate::error::{Error, Result};
use crate::numerics::Rng;

#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub taxonomy: LabelTaxonomy,
    /// Label-file lines, `CODE:fine question`.
    pub lines: Vec<String>,
    pub vectors: Vec<(String, Vec<f64>)>,
}

impl SyntheticCorpus {
    /// `per_fine` questions for every fine category, vectors of size `dim`.
    pub fn generate(taxonomy: &LabelTaxonomy, per_fine: usize, dim: usize, seed: u64) -> Self {
        let mut rng = Rng::new(seed);
        let fillers: Vec<String> = (0..40).map(|i| format!("filler{i}")).collect();
        let mut lines = Vec::new();
        for (c, coarse) in taxonomy.categories().iter().enumerate() {
            for (f, fine) in coarse.fine.iter().enumerate() {
                for _ in 0..per_fine {
                    let mut words = vec![format!("opener{c}")];
                    let n_fill = 2 + (rng.next_u64() % 6) as usize;
                    let cue_at = (rng.next_u64() % (n_fill as u64 + 1)) as usize;
                    for i in 0..=n_fill {
                        if i == cue_at {
                            words.push(format!("cue{c}x{f}"));
                        }
                        if i < n_fill {
                            words.push(
                                fillers[(rng.next_u64() % fillers.len() as u64) as usize].clone(),
                            );
                        }
                    }
                    words.push("?".into());
                    lines.push(format!("{}:{} {}", coarse.code, fine.code, words.join(" ")));
                }
            }
        }
        rng.shuffle(&mut lines);

        let mut vocab: Vec<String> = fillers;
        vocab.push("?".into());
        for (c, coarse) in taxonomy.categories().iter().enumerate() {
            vocab.push(format!("opener{c}"));
            vocab.extend((0..coarse.fine.len()).map(|f| format!("cue{c}x{f}")));
        }
        let scale = 1.0 / (dim as f64).sqrt();
        let vectors = vocab
            .into_iter()
            .map(|w| {
                let v = rng.normal(0.0, 1.0, dim).expect("stdev is positive");
                (w, v.into_iter().map(|x| x * scale * 3.0).collect())
            })
            .collect();
        SyntheticCorpus {
            taxonomy: taxonomy.clone(),
            lines,
            vectors,
        }
    }

    pub fn records(&self) -> Vec<QuestionRecord> {
        self.lines
            .iter()
            .map(|l| {
                parse_trec_line(l, &self.taxonomy).expect("generated lines use taxonomy codes")
            })
            .collect()
    }

    pub fn table(&self) -> EmbeddingTable {
        EmbeddingTable::from_pairs(self.vectors.iter().map(|(w, v)| (w.clone(), v)))
            .expect("generated vectors share one dimension")
    }

    pub fn write_label_file(&self, path: impl AsRef<Path>) -> Result<()> {
        write_lines(path.as_ref(), self.lines.iter().map(String::as_str))
    }

    /// Writes the vectors with a `count dim` header line.
    pub fn write_vectors(&self, path: impl AsRef<Path>) -> Result<()> {
        let dim = self.vectors.first().map_or(0, |(_, v)| v.len());
        let mut text = format!("{} {dim}\n", self.vectors.len());
        for (w, v) in &self.vectors {
            text.push_str(w);
            for x in v {
                let _ = write!(text, " {x}");
            }
            text.push('\n');
        }
        let path = path.as_ref();
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

fn write_lines<'a>(path: &Path, lines: impl Iterator<Item = &'a str>) -> Result<()> {
    let mut text = String::new();
    for l in lines {
        text.push_str(l);
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embeddings::load_embeddings;

    #[test]
    fn covers_every_fine_label() {
        let t = LabelTaxonomy::uiuc();
        let corpus = SyntheticCorpus::generate(&t, 2, 8, 1);
        let records = corpus.records();
        assert_eq!(records.len(), 100);
        for c in 0..6 {
            for f in 0..t.fine_count(c) {
                assert_eq!(
                    records
                        .iter()
                        .filter(|r| r.coarse == c && r.fine == f)
                        .count(),
                    2
                );
            }
        }
    }

    #[test]
    fn vector_file_reloads_exactly() {
        let t = LabelTaxonomy::uiuc();
        let corpus = SyntheticCorpus::generate(&t, 1, 5, 2);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vec.txt");
        corpus.write_vectors(&path).unwrap();
        let table = load_embeddings(&path, Some(5), None).unwrap();
        assert_eq!(table, corpus.table());
    }
}
