//! Two-tier classification: a coarse model routes each question to the fine
//! model of its predicted coarse category.

use log::info;
use serde::{Deserialize, Serialize};

use crate::dataset::{holdout_split, subset_by_coarse, LabelTaxonomy, QuestionRecord};
use crate::embeddings::{embed_sentence, tokenize, EmbeddingTable};
use crate::error::{Error, Result};
use crate::network::QcnnModel;
use crate::numerics::Rng;
use crate::training::{encode_records, train, EpochStats, TrainConfig, TrainHistory};

/// Which model of the hierarchy something refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Tier {
    Coarse,
    /// Fine model of the given coarse category index.
    Fine(usize),
}

impl Tier {
    fn seed_index(self) -> u64 {
        match self {
            Tier::Coarse => 0,
            Tier::Fine(c) => c as u64 + 1,
        }
    }
}

/// Embedding tables for the two tiers; they may be the same table.
#[derive(Debug, Clone, Copy)]
pub struct TierEmbeddings<'a> {
    pub tier1: &'a EmbeddingTable,
    pub tier2: &'a EmbeddingTable,
}

impl<'a> TierEmbeddings<'a> {
    pub fn shared(table: &'a EmbeddingTable) -> Self {
        TierEmbeddings {
            tier1: table,
            tier2: table,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TwoTierClassifier {
    taxonomy: LabelTaxonomy,
    tier1: QcnnModel,
    tier2: Vec<QcnnModel>,
    max_len: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Prediction {
    pub coarse: usize,
    /// Index local to `coarse`.
    pub fine: usize,
}

impl TwoTierClassifier {
    pub fn new(
        taxonomy: LabelTaxonomy,
        tier1: QcnnModel,
        tier2: Vec<QcnnModel>,
        max_len: usize,
    ) -> Result<Self> {
        let mismatch = |m: String| Err(Error::TaxonomyMismatch(m));
        if tier1.classes() != taxonomy.coarse_count() {
            return mismatch(format!(
                "coarse model has {} classes, taxonomy has {} categories",
                tier1.classes(),
                taxonomy.coarse_count()
            ));
        }
        if tier2.len() != taxonomy.coarse_count() {
            return mismatch(format!(
                "{} fine models for {} coarse categories",
                tier2.len(),
                taxonomy.coarse_count()
            ));
        }
        for (c, model) in tier2.iter().enumerate() {
            if model.classes() != taxonomy.fine_count(c) {
                return mismatch(format!(
                    "{} model has {} classes, taxonomy lists {}",
                    taxonomy.coarse_name(c),
                    model.classes(),
                    taxonomy.fine_count(c)
                ));
            }
        }
        Ok(TwoTierClassifier {
            taxonomy,
            tier1,
            tier2,
            max_len: max_len.max(1),
        })
    }

    pub fn taxonomy(&self) -> &LabelTaxonomy {
        &self.taxonomy
    }

    pub fn tier1(&self) -> &QcnnModel {
        &self.tier1
    }

    pub fn tier2(&self, coarse: usize) -> &QcnnModel {
        &self.tier2[coarse]
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }

    /// Hard argmax routing: the coarse prediction picks the fine model.
    pub fn classify(&self, question: &str, embeddings: TierEmbeddings<'_>) -> Result<Prediction> {
        let tokens = tokenize(question);
        let coarse =
            self.tier1
                .predict(&embed_sentence(&tokens, embeddings.tier1, self.max_len))?;
        let fine =
            self.tier2[coarse].predict(&embed_sentence(&tokens, embeddings.tier2, self.max_len))?;
        Ok(Prediction { coarse, fine })
    }

    pub fn label_names(&self, p: Prediction) -> (&str, &str) {
        (
            self.taxonomy.coarse_name(p.coarse),
            self.taxonomy.fine_name(p.coarse, p.fine),
        )
    }

    pub fn evaluate(
        &self,
        records: &[QuestionRecord],
        embeddings: TierEmbeddings<'_>,
    ) -> Result<HierMetrics> {
        evaluate_hierarchical(self, records, embeddings)
    }
}

/// Counts behind the hierarchical accuracies. All ratios are derived from
/// these integers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HierMetrics {
    pub total: usize,
    /// Questions whose coarse prediction is correct.
    pub main_correct: usize,
    /// Questions whose routed coarse and fine predictions are both correct.
    pub both_correct: usize,
    pub per_coarse: Vec<CoarseMetrics>,
}

/// Fine-model accuracy on the questions whose gold coarse label is this
/// category, routed by the gold label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoarseMetrics {
    pub name: String,
    pub entries: usize,
    pub fine_correct: usize,
}

impl CoarseMetrics {
    pub fn accuracy(&self) -> Option<f64> {
        (self.entries > 0).then(|| self.fine_correct as f64 / self.entries as f64)
    }
}

impl HierMetrics {
    pub fn main_accuracy(&self) -> f64 {
        self.main_correct as f64 / self.total as f64
    }

    pub fn sub_accuracy_end_to_end(&self) -> f64 {
        self.both_correct as f64 / self.total as f64
    }

    /// Fine accuracy among questions with a correct coarse prediction.
    pub fn sub_accuracy_conditional(&self) -> Option<f64> {
        (self.main_correct > 0).then(|| self.both_correct as f64 / self.main_correct as f64)
    }
}

pub fn evaluate_hierarchical(
    classifier: &TwoTierClassifier,
    records: &[QuestionRecord],
    embeddings: TierEmbeddings<'_>,
) -> Result<HierMetrics> {
    if records.is_empty() {
        return Err(Error::Empty("no evaluation records".into()));
    }
    let taxonomy = &classifier.taxonomy;
    let mut per_coarse: Vec<CoarseMetrics> = taxonomy
        .categories()
        .iter()
        .map(|c| CoarseMetrics {
            name: c.name.clone(),
            entries: 0,
            fine_correct: 0,
        })
        .collect();
    let mut main_correct = 0;
    let mut both_correct = 0;
    for r in records {
        if r.coarse >= taxonomy.coarse_count() || r.fine >= taxonomy.fine_count(r.coarse) {
            return Err(Error::TaxonomyMismatch(format!(
                "record label ({}, {}) is outside the model taxonomy",
                r.coarse, r.fine
            )));
        }
        let tokens = tokenize(&r.text);
        let s1 = embed_sentence(&tokens, embeddings.tier1, classifier.max_len);
        let s2 = embed_sentence(&tokens, embeddings.tier2, classifier.max_len);
        let coarse = classifier.tier1.predict(&s1)?;
        let gold_fine = classifier.tier2[r.coarse].predict(&s2)?;

        let slot = &mut per_coarse[r.coarse];
        slot.entries += 1;
        if gold_fine == r.fine {
            slot.fine_correct += 1;
        }
        if coarse == r.coarse {
            main_correct += 1;
            // Routed prediction equals the gold-routed one here.
            if gold_fine == r.fine {
                both_correct += 1;
            }
        }
    }
    Ok(HierMetrics {
        total: records.len(),
        main_correct,
        both_correct,
        per_coarse,
    })
}

/// Per-tier training histories.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TwoTierHistory {
    pub tier1: TrainHistory,
    pub tier2: Vec<TrainHistory>,
}

fn tier_seed(seed: u64, tier: Tier) -> u64 {
    Rng::new(seed ^ 0x9E37_79B9_7F4A_7C15u64.wrapping_mul(tier.seed_index() + 1)).next_u64()
}

/// Trains one model of the hierarchy: the coarse model on all records, or a
/// fine model on the records of its coarse category.
pub fn train_tier(
    records: &[QuestionRecord],
    taxonomy: &LabelTaxonomy,
    table: &EmbeddingTable,
    config: &TrainConfig,
    tier: Tier,
    mut on_epoch: impl FnMut(Tier, &EpochStats),
) -> Result<(QcnnModel, TrainHistory)> {
    config.validate()?;
    let (subset, classes): (Vec<QuestionRecord>, usize) = match tier {
        Tier::Coarse => (records.to_vec(), taxonomy.coarse_count()),
        Tier::Fine(c) => {
            if c >= taxonomy.coarse_count() {
                return Err(Error::InvalidArgument(format!("no coarse category {c}")));
            }
            (subset_by_coarse(records, c), taxonomy.fine_count(c))
        }
    };
    if subset.is_empty() {
        let name = match tier {
            Tier::Coarse => "(any)".to_string(),
            Tier::Fine(c) => taxonomy.coarse_name(c).to_string(),
        };
        return Err(Error::MissingCategory(name));
    }
    let seed = tier_seed(config.seed, tier);
    let (train_set, valid_set) = if config.validation_fraction > 0.0 && subset.len() > 1 {
        holdout_split(&subset, 1.0 - config.validation_fraction, seed)?
    } else {
        (subset, Vec::new())
    };
    let label = |r: &QuestionRecord| match tier {
        Tier::Coarse => r.coarse,
        Tier::Fine(_) => r.fine,
    };
    let train_data = encode_records(&train_set, table, config.max_len, label);
    let valid_data = encode_records(&valid_set, table, config.max_len, label);

    let mut rng = Rng::new(seed);
    let mut model = QcnnModel::new(config.model_config(table.dim(), classes), &mut rng)?;
    let tier_config = TrainConfig {
        seed: rng.next_u64(),
        ..config.clone()
    };
    info!(
        "training {tier:?}: {} examples, {} held out, {} classes",
        train_data.len(),
        valid_data.len(),
        classes
    );
    let history = train(&mut model, &train_data, &valid_data, &tier_config, |s| {
        on_epoch(tier, s)
    })?;
    Ok((model, history))
}

/// Trains the coarse model and one fine model per coarse category.
pub fn train_two_tier(
    records: &[QuestionRecord],
    taxonomy: &LabelTaxonomy,
    embeddings: TierEmbeddings<'_>,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(Tier, &EpochStats),
) -> Result<(TwoTierClassifier, TwoTierHistory)> {
    for c in 0..taxonomy.coarse_count() {
        if !records.iter().any(|r| r.coarse == c) {
            return Err(Error::MissingCategory(taxonomy.coarse_name(c).to_string()));
        }
    }
    let (tier1, h1) = train_tier(
        records,
        taxonomy,
        embeddings.tier1,
        config,
        Tier::Coarse,
        &mut on_epoch,
    )?;
    let mut tier2 = Vec::with_capacity(taxonomy.coarse_count());
    let mut histories = Vec::with_capacity(taxonomy.coarse_count());
    for c in 0..taxonomy.coarse_count() {
        let (model, h) = train_tier(
            records,
            taxonomy,
            embeddings.tier2,
            config,
            Tier::Fine(c),
            &mut on_epoch,
        )?;
        tier2.push(model);
        histories.push(h);
    }
    let classifier = TwoTierClassifier::new(taxonomy.clone(), tier1, tier2, config.max_len)?;
    Ok((
        classifier,
        TwoTierHistory {
            tier1: h1,
            tier2: histories,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::ModelConfig;

    fn zero_classifier(dim: usize) -> TwoTierClassifier {
        let t = LabelTaxonomy::uiuc();
        let small = |classes| ModelConfig {
            filters: 2,
            hidden: 4,
            ..ModelConfig::new(dim, classes)
        };
        let tier1 = QcnnModel::zeros(small(6)).unwrap();
        let tier2 = (0..6)
            .map(|c| QcnnModel::zeros(small(t.fine_count(c))).unwrap())
            .collect();
        TwoTierClassifier::new(t, tier1, tier2, 40).unwrap()
    }

    #[test]
    fn zero_tier1_routes_to_first_category() {
        let c = zero_classifier(3);
        let table = EmbeddingTable::from_pairs([("what", [1.0, 0.0, 0.0])]).unwrap();
        let p = c
            .classify("What is it ?", TierEmbeddings::shared(&table))
            .unwrap();
        assert_eq!(c.label_names(p), ("Abbreviation", "abbreviation"));
        assert_eq!(
            p,
            c.classify("What is it ?", TierEmbeddings::shared(&table))
                .unwrap()
        );
    }

    #[test]
    fn shape_mismatch_is_a_taxonomy_error() {
        let t = LabelTaxonomy::uiuc();
        let cfg = |classes| ModelConfig {
            filters: 1,
            hidden: 2,
            ..ModelConfig::new(2, classes)
        };
        let tier1 = QcnnModel::zeros(cfg(6)).unwrap();
        let tier2: Vec<_> = (0..6).map(|_| QcnnModel::zeros(cfg(3)).unwrap()).collect();
        assert!(matches!(
            TwoTierClassifier::new(t, tier1, tier2, 40),
            Err(Error::TaxonomyMismatch(_))
        ));
    }

    #[test]
    fn metric_identities_hold() {
        let c = zero_classifier(2);
        let table = EmbeddingTable::from_pairs([("a", [1.0, 2.0])]).unwrap();
        let t = c.taxonomy().clone();
        let records: Vec<QuestionRecord> = ["ABBR:abb a", "ABBR:exp a", "NUM:date a", "HUM:ind a"]
            .iter()
            .map(|l| crate::dataset::parse_trec_line(l, &t).unwrap())
            .collect();
        let m = c
            .evaluate(&records, TierEmbeddings::shared(&table))
            .unwrap();
        assert_eq!(m.total, 4);
        assert_eq!(m.main_correct, 2);
        assert_eq!(m.both_correct, 1);
        assert_eq!(m.per_coarse.iter().map(|p| p.entries).sum::<usize>(), 4);
        assert_eq!(m.per_coarse[5].fine_correct, 0);
        assert_eq!(m.sub_accuracy_conditional(), Some(0.5));
        assert!(m.sub_accuracy_end_to_end() <= m.main_accuracy());
        assert!(c.evaluate(&[], TierEmbeddings::shared(&table)).is_err());
    }

    #[test]
    fn missing_category_is_named() {
        let t = LabelTaxonomy::uiuc();
        let table = EmbeddingTable::from_pairs([("a", [1.0])]).unwrap();
        let records = vec![crate::dataset::parse_trec_line("NUM:date a", &t).unwrap()];
        let err = train_two_tier(
            &records,
            &t,
            TierEmbeddings::shared(&table),
            &TrainConfig::default(),
            |_, _| {},
        )
        .unwrap_err();
        assert!(
            matches!(err, Error::MissingCategory(ref n) if n == "Abbreviation"),
            "{err}"
        );
    }
}
