//! Two-tier convolutional question classification.
//!
//! A coarse classifier assigns each question one of six categories and a
//! per-category fine classifier picks its sub-category. Each classifier is a
//! small CNN over static pretrained word vectors: wide convolutions of
//! heights 2 to 5, 2-max pooling, two tanh layers with dropout and a softmax
//! output, trained with hand-written backpropagation.

pub mod cli;
pub mod config;
pub mod container;
pub mod dataset;
pub mod embeddings;
pub mod error;
pub mod hierarchy;
pub mod network;
pub mod numerics;
pub mod report;
pub mod synthetic;
pub mod training;

pub use dataset::{LabelTaxonomy, QuestionRecord};
pub use embeddings::{EmbeddingTable, SentenceMatrix};
pub use error::{Error, Result};
pub use hierarchy::{Prediction, Tier, TierEmbeddings, TwoTierClassifier};
pub use network::{ModelConfig, QcnnModel};
pub use numerics::{Matrix, Rng};
pub use training::TrainConfig;
