//! UIUC question-classification files and the coarse/fine label taxonomy.
//!
//! Each line of a label file reads `COARSE:fine question text`, e.g.
//! `NUM:date When did Hawaii become a state ?`.

use std::fs;
use std::path::Path;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Rng;

/// Default share of records kept for training by [`holdout_split`].
pub const DEFAULT_TRAIN_FRACTION: f64 = 0.9;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FineCategory {
    /// Canonical name, e.g. `colour`.
    pub name: String,
    /// Short code used in the UIUC files, e.g. `color`.
    pub code: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoarseCategory {
    pub name: String,
    pub code: String,
    pub fine: Vec<FineCategory>,
}

/// Ordered coarse categories, each owning an ordered list of fine categories.
/// Fine labels are namespaced by their coarse category, so `other` under
/// Entity and `other` under Location are distinct classes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelTaxonomy {
    categories: Vec<CoarseCategory>,
}

impl LabelTaxonomy {
    pub fn new(categories: Vec<CoarseCategory>) -> Result<Self> {
        if categories.is_empty() {
            return Err(Error::InvalidArgument("taxonomy has no categories".into()));
        }
        for (i, c) in categories.iter().enumerate() {
            if c.fine.is_empty() {
                return Err(Error::InvalidArgument(format!(
                    "{} has no fine categories",
                    c.name
                )));
            }
            if categories[..i]
                .iter()
                .any(|o| o.name.eq_ignore_ascii_case(&c.name))
            {
                return Err(Error::InvalidArgument(format!(
                    "duplicate category {}",
                    c.name
                )));
            }
        }
        Ok(LabelTaxonomy { categories })
    }

    /// The six coarse and fifty fine question classes of the UIUC data.
    pub fn uiuc() -> Self {
        fn coarse(name: &str, code: &str, fine: &[(&str, &str)]) -> CoarseCategory {
            CoarseCategory {
                name: name.into(),
                code: code.into(),
                fine: fine
                    .iter()
                    .map(|&(name, code)| FineCategory {
                        name: name.into(),
                        code: code.into(),
                    })
                    .collect(),
            }
        }
        LabelTaxonomy {
            categories: vec![
                coarse(
                    "Abbreviation",
                    "ABBR",
                    &[("abbreviation", "abb"), ("expression", "exp")],
                ),
                coarse(
                    "Entity",
                    "ENTY",
                    &[
                        ("animal", "animal"),
                        ("body", "body"),
                        ("colour", "color"),
                        ("creative", "cremat"),
                        ("currency", "currency"),
                        ("disease", "dismed"),
                        ("event", "event"),
                        ("food", "food"),
                        ("instrument", "instru"),
                        ("language", "lang"),
                        ("letter", "letter"),
                        ("other", "other"),
                        ("plant", "plant"),
                        ("product", "product"),
                        ("religion", "religion"),
                        ("sport", "sport"),
                        ("substance", "substance"),
                        ("symbol", "symbol"),
                        ("technique", "techmeth"),
                        ("term", "termeq"),
                        ("vehicle", "veh"),
                        ("word", "word"),
                    ],
                ),
                coarse(
                    "Description",
                    "DESC",
                    &[
                        ("definition", "def"),
                        ("description", "desc"),
                        ("manner", "manner"),
                        ("reason", "reason"),
                    ],
                ),
                coarse(
                    "Human",
                    "HUM",
                    &[
                        ("group", "gr"),
                        ("individual", "ind"),
                        ("title", "title"),
                        ("description", "desc"),
                    ],
                ),
                coarse(
                    "Location",
                    "LOC",
                    &[
                        ("city", "city"),
                        ("country", "country"),
                        ("mountain", "mount"),
                        ("state", "state"),
                        ("other", "other"),
                    ],
                ),
                coarse(
                    "Numeric",
                    "NUM",
                    &[
                        ("code", "code"),
                        ("count", "count"),
                        ("date", "date"),
                        ("distance", "dist"),
                        ("money", "money"),
                        ("order", "ord"),
                        ("period", "period"),
                        ("percent", "perc"),
                        ("speed", "speed"),
                        ("temperature", "temp"),
                        ("size", "volsize"),
                        ("weight", "weight"),
                        ("other", "other"),
                    ],
                ),
            ],
        }
    }

    pub fn categories(&self) -> &[CoarseCategory] {
        &self.categories
    }

    pub fn coarse_count(&self) -> usize {
        self.categories.len()
    }

    pub fn fine_count(&self, coarse: usize) -> usize {
        self.categories[coarse].fine.len()
    }

    pub fn total_fine(&self) -> usize {
        self.categories.iter().map(|c| c.fine.len()).sum()
    }

    pub fn coarse_name(&self, coarse: usize) -> &str {
        &self.categories[coarse].name
    }

    pub fn fine_name(&self, coarse: usize, fine: usize) -> &str {
        &self.categories[coarse].fine[fine].name
    }

    /// Resolves a coarse label by canonical name or code, ignoring case.
    pub fn coarse_index(&self, label: &str) -> Option<usize> {
        self.categories
            .iter()
            .position(|c| c.name.eq_ignore_ascii_case(label) || c.code.eq_ignore_ascii_case(label))
    }

    /// Resolves a fine label within one coarse category.
    pub fn fine_index(&self, coarse: usize, label: &str) -> Option<usize> {
        self.categories
            .get(coarse)?
            .fine
            .iter()
            .position(|f| f.name.eq_ignore_ascii_case(label) || f.code.eq_ignore_ascii_case(label))
    }
}

/// One labelled question. Labels are indices into a [`LabelTaxonomy`]; the
/// fine index is local to the coarse category.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuestionRecord {
    pub coarse: usize,
    pub fine: usize,
    pub text: String,
}

pub fn parse_trec_line(line: &str, taxonomy: &LabelTaxonomy) -> Result<QuestionRecord> {
    let line = line.trim_end_matches(['\r', '\n']);
    let (label, text) = match line.split_once(' ') {
        Some((label, text)) => (label, text.trim()),
        None => (line, ""),
    };
    let Some((coarse, fine)) = label.split_once(':') else {
        return Err(Error::MalformedLine {
            line: line.to_string(),
            message: "label has no ':' separator".into(),
        });
    };
    let unknown = || Error::UnknownLabel {
        line: line.to_string(),
    };
    let coarse = taxonomy.coarse_index(coarse).ok_or_else(unknown)?;
    let fine = taxonomy.fine_index(coarse, fine).ok_or_else(unknown)?;
    Ok(QuestionRecord {
        coarse,
        fine,
        text: text.to_string(),
    })
}

/// Parses a whole label file, one record per non-blank line. Lines that are
/// not valid UTF-8 are decoded as Latin-1.
pub fn load_dataset(
    path: impl AsRef<Path>,
    taxonomy: &LabelTaxonomy,
) -> Result<Vec<QuestionRecord>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut records = Vec::new();
    for (idx, raw) in bytes.split(|&b| b == b'\n').enumerate() {
        let line = match std::str::from_utf8(raw) {
            Ok(s) => s.to_string(),
            Err(_) => {
                warn!(
                    "{}:{}: not valid UTF-8, decoding as Latin-1",
                    path.display(),
                    idx + 1
                );
                raw.iter().map(|&b| b as char).collect()
            }
        };
        if line.trim().is_empty() {
            continue;
        }
        let record = parse_trec_line(&line, taxonomy).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: idx + 1,
            message: e.to_string(),
        })?;
        records.push(record);
    }
    Ok(records)
}

/// Records of one coarse category, in order. Their `fine` indices are
/// already local to that category, ready to serve as tier-2 targets.
pub fn subset_by_coarse(records: &[QuestionRecord], coarse: usize) -> Vec<QuestionRecord> {
    records
        .iter()
        .filter(|r| r.coarse == coarse)
        .cloned()
        .collect()
}

/// Seeded shuffle, then the first `round(n · train_fraction)` records train
/// and the rest validate.
pub fn holdout_split<T: Clone>(
    records: &[T],
    train_fraction: f64,
    seed: u64,
) -> Result<(Vec<T>, Vec<T>)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "split fraction must lie in (0, 1), got {train_fraction}"
        )));
    }
    if records.is_empty() {
        return Err(Error::Empty("cannot split an empty record set".into()));
    }
    let mut order: Vec<usize> = (0..records.len()).collect();
    Rng::new(seed).shuffle(&mut order);
    let n_train = ((records.len() as f64) * train_fraction).round() as usize;
    let n_train = n_train.min(records.len());
    let train = order[..n_train]
        .iter()
        .map(|&i| records[i].clone())
        .collect();
    let valid = order[n_train..]
        .iter()
        .map(|&i| records[i].clone())
        .collect();
    Ok((train, valid))
}

/// Record counts per coarse category.
pub fn coarse_counts(records: &[QuestionRecord], taxonomy: &LabelTaxonomy) -> Vec<usize> {
    let mut counts = vec![0; taxonomy.coarse_count()];
    for r in records {
        counts[r.coarse] += 1;
    }
    counts
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn taxonomy_shape() {
        let t = LabelTaxonomy::uiuc();
        let names: Vec<&str> = t.categories().iter().map(|c| c.name.as_str()).collect();
        assert_eq!(
            names,
            [
                "Abbreviation",
                "Entity",
                "Description",
                "Human",
                "Location",
                "Numeric"
            ]
        );
        let counts: Vec<usize> = (0..6).map(|c| t.fine_count(c)).collect();
        assert_eq!(counts, [2, 22, 4, 4, 5, 13]);
        assert_eq!(t.total_fine(), 50);
    }

    #[test]
    fn fine_names_are_unique_within_a_category() {
        let t = LabelTaxonomy::uiuc();
        for c in t.categories() {
            for (i, f) in c.fine.iter().enumerate() {
                assert!(c.fine[..i]
                    .iter()
                    .all(|o| o.name != f.name && o.code != f.code));
            }
        }
    }

    #[test]
    fn parses_numeric_date() {
        let t = LabelTaxonomy::uiuc();
        let r = parse_trec_line("NUM:date When did X happen ?", &t).unwrap();
        assert_eq!(t.coarse_name(r.coarse), "Numeric");
        assert_eq!(t.fine_name(r.coarse, r.fine), "date");
        assert_eq!(r.text, "When did X happen ?");
    }

    #[test]
    fn parses_description_manner() {
        let t = LabelTaxonomy::uiuc();
        let r = parse_trec_line(
            "DESC:manner How did serfdom develop in and then leave Russia ?",
            &t,
        )
        .unwrap();
        assert_eq!(t.coarse_name(r.coarse), "Description");
        assert_eq!(t.fine_name(r.coarse, r.fine), "manner");
        assert!(r.text.starts_with("How did serfdom"));
    }

    #[test]
    fn codes_map_to_canonical_names() {
        let t = LabelTaxonomy::uiuc();
        for (line, coarse, fine) in [
            ("ENTY:cremat What films ?", "Entity", "creative"),
            ("HUM:gr What team ?", "Human", "group"),
            ("HUM:desc Who is X ?", "Human", "description"),
            ("LOC:mount Name a peak .", "Location", "mountain"),
            ("NUM:volsize How big ?", "Numeric", "size"),
            ("ENTY:color What colour ?", "Entity", "colour"),
            ("Location:other Where ?", "Location", "other"),
        ] {
            let r = parse_trec_line(line, &t).unwrap();
            assert_eq!(
                (t.coarse_name(r.coarse), t.fine_name(r.coarse, r.fine)),
                (coarse, fine)
            );
        }
    }

    #[test]
    fn bad_lines_are_rejected() {
        let t = LabelTaxonomy::uiuc();
        assert!(matches!(
            parse_trec_line("BADLABEL question", &t),
            Err(Error::MalformedLine { .. })
        ));
        assert!(matches!(
            parse_trec_line("NUM:colour What ?", &t),
            Err(Error::UnknownLabel { .. })
        ));
        assert!(matches!(
            parse_trec_line("XYZ:date When ?", &t),
            Err(Error::UnknownLabel { .. })
        ));
    }

    #[test]
    fn load_with_latin1_fallback_and_blank_lines() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("q.label");
        let mut bytes = b"NUM:date When ?\n\nHUM:ind Who is Pel".to_vec();
        bytes.push(0xE9); // Latin-1 e-acute
        bytes.extend_from_slice(b" ?\r\n");
        fs::write(&path, bytes).unwrap();
        let t = LabelTaxonomy::uiuc();
        let records = load_dataset(&path, &t).unwrap();
        assert_eq!(records.len(), 2);
        assert_eq!(records[1].text, "Who is Pel\u{e9} ?");
    }

    #[test]
    fn load_reports_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("q.label");
        fs::write(&path, "NUM:date When ?\nnonsense here\n").unwrap();
        match load_dataset(&path, &LabelTaxonomy::uiuc()).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        let empty = dir.path().join("empty.label");
        fs::write(&empty, "").unwrap();
        assert!(load_dataset(&empty, &LabelTaxonomy::uiuc())
            .unwrap()
            .is_empty());
    }

    #[test]
    fn subsets_partition_the_records() {
        let t = LabelTaxonomy::uiuc();
        let lines = ["NUM:date a", "ABBR:exp b", "NUM:count c", "LOC:city d"];
        let records: Vec<_> = lines
            .iter()
            .map(|l| parse_trec_line(l, &t).unwrap())
            .collect();
        let num = subset_by_coarse(&records, t.coarse_index("NUM").unwrap());
        assert_eq!(
            num.iter().map(|r| r.text.as_str()).collect::<Vec<_>>(),
            ["a", "c"]
        );
        assert!(subset_by_coarse(&records, t.coarse_index("HUM").unwrap()).is_empty());
        let total: usize = (0..6).map(|c| subset_by_coarse(&records, c).len()).sum();
        assert_eq!(total, records.len());
    }

    #[test]
    fn holdout_split_contract() {
        let items: Vec<u32> = (0..10).collect();
        let (train, valid) = holdout_split(&items, 0.9, 7).unwrap();
        assert_eq!((train.len(), valid.len()), (9, 1));
        let mut all: Vec<u32> = train.iter().chain(&valid).copied().collect();
        all.sort();
        assert_eq!(all, items);
        assert_eq!(holdout_split(&items, 0.9, 7).unwrap(), (train, valid));
        assert!(holdout_split(&items, 1.5, 7).is_err());
        assert!(holdout_split(&items, 0.0, 7).is_err());
        assert!(holdout_split::<u32>(&[], 0.5, 7).is_err());
    }
}
