//! Loss, optimizers, the minibatch training loop and single-model metrics.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::QuestionRecord;
use crate::embeddings::{
    embed_sentence, tokenize, EmbeddingTable, SentenceMatrix, DEFAULT_MAX_LEN,
};
use crate::error::{Error, Result};
use crate::network::{
    argmax, Activation, Gradients, ModelConfig, QcnnModel, DEFAULT_DROPOUT, DEFAULT_FILTERS,
    DEFAULT_HIDDEN, DEFAULT_K,
};
use crate::numerics::{finite_difference_grad, max_relative_error, Matrix, Rng, DEFAULT_FD_EPS};

/// Lower clamp applied to the target probability before taking its log.
pub const PROB_FLOOR: f64 = 1e-12;

/// Worst relative error accepted by the gradient check.
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

/// `−ln p[target]`, with `p[target]` clamped at [`PROB_FLOOR`].
pub fn cross_entropy(probs: &[f64], target: usize) -> Result<f64> {
    let p = probs.get(target).ok_or_else(|| {
        Error::InvalidArgument(format!(
            "target {target} out of range for {} classes",
            probs.len()
        ))
    })?;
    Ok(-p.max(PROB_FLOOR).ln())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    #[default]
    Adam,
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Adam => "adam",
        })
    }
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sgd" => Ok(OptimizerKind::Sgd),
            "adam" => Ok(OptimizerKind::Adam),
            other => Err(Error::Config(format!(
                "unknown optimizer {other:?} (expected sgd or adam)"
            ))),
        }
    }
}

/// Every knob of a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub optimizer: OptimizerKind,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
    pub filters: usize,
    pub hidden: usize,
    pub k: usize,
    pub dropout: f64,
    pub max_len: usize,
    pub conv_activation: Activation,
    /// Share of the training records held out for per-epoch validation
    /// accuracy; 0 disables the split.
    pub validation_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            batch_size: 50,
            epochs: 20,
            optimizer: OptimizerKind::Adam,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 0,
            filters: DEFAULT_FILTERS,
            hidden: DEFAULT_HIDDEN,
            k: DEFAULT_K,
            dropout: DEFAULT_DROPOUT,
            max_len: DEFAULT_MAX_LEN,
            conv_activation: Activation::Tanh,
            validation_fraction: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.learning_rate.is_nan() || self.learning_rate <= 0.0 {
            return bad(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout must lie in [0, 1), got {}", self.dropout));
        }
        if self.k == 0 || self.batch_size == 0 || self.max_len == 0 || self.filters == 0 {
            return bad("k, batch_size, max_len and filters must be positive".into());
        }
        if self.hidden < 2 || !self.hidden.is_multiple_of(2) {
            return bad(format!(
                "hidden must be even and at least 2, got {}",
                self.hidden
            ));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return bad(format!(
                "validation_fraction must lie in [0, 1), got {}",
                self.validation_fraction
            ));
        }
        if !(0.0..1.0).contains(&self.beta1)
            || !(0.0..1.0).contains(&self.beta2)
            || self.epsilon.is_nan()
            || self.epsilon <= 0.0
        {
            return bad("Adam requires 0 <= beta < 1 and epsilon > 0".into());
        }
        Ok(())
    }

    pub fn model_config(&self, dim: usize, classes: usize) -> ModelConfig {
        ModelConfig {
            filters: self.filters,
            hidden: self.hidden,
            k: self.k,
            dropout: self.dropout,
            conv_activation: self.conv_activation,
            ..ModelConfig::new(dim, classes)
        }
    }
}

/// SGD or Adam over a list of parameter tensors.
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    learning_rate: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    step: u64,
    first_moment: Vec<Vec<f64>>,
    second_moment: Vec<Vec<f64>>,
}

impl Optimizer {
    pub fn sgd(learning_rate: f64) -> Self {
        Optimizer::new(OptimizerKind::Sgd, learning_rate, 0.9, 0.999, 1e-8)
    }

    pub fn adam(learning_rate: f64, beta1: f64, beta2: f64, epsilon: f64) -> Self {
        Optimizer::new(OptimizerKind::Adam, learning_rate, beta1, beta2, epsilon)
    }

    fn new(kind: OptimizerKind, learning_rate: f64, beta1: f64, beta2: f64, epsilon: f64) -> Self {
        Optimizer {
            kind,
            learning_rate,
            beta1,
            beta2,
            epsilon,
            step: 0,
            first_moment: Vec::new(),
            second_moment: Vec::new(),
        }
    }

    pub fn from_config(config: &TrainConfig) -> Self {
        Optimizer::new(
            config.optimizer,
            config.learning_rate,
            config.beta1,
            config.beta2,
            config.epsilon,
        )
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[Vec<f64>]) -> Result<()> {
        let shapes_ok = params.len() == grads.len()
            && params.iter().zip(grads).all(|(p, g)| p.len() == g.len())
            && (self.first_moment.is_empty()
                || self
                    .first_moment
                    .iter()
                    .zip(grads)
                    .all(|(m, g)| m.len() == g.len())
                    && self.first_moment.len() == grads.len());
        if !shapes_ok {
            return Err(Error::InvalidArgument(
                "parameter, gradient and optimizer state shapes differ".into(),
            ));
        }
        self.step += 1;
        let lr = self.learning_rate;
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.iter_mut().zip(grads) {
                    p.iter_mut().zip(g).for_each(|(p, g)| *p -= lr * g);
                }
            }
            OptimizerKind::Adam => {
                if self.first_moment.is_empty() {
                    self.first_moment = grads.iter().map(|g| vec![0.0; g.len()]).collect();
                    self.second_moment = self.first_moment.clone();
                }
                let (b1, b2, eps) = (self.beta1, self.beta2, self.epsilon);
                let c1 = 1.0 - b1.powf(self.step as f64);
                let c2 = 1.0 - b2.powf(self.step as f64);
                for (((p, g), m), v) in params
                    .iter_mut()
                    .zip(grads)
                    .zip(&mut self.first_moment)
                    .zip(&mut self.second_moment)
                {
                    for i in 0..g.len() {
                        m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                        v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                        let m_hat = m[i] / c1;
                        let v_hat = v[i] / c2;
                        p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
                    }
                }
            }
        }
        Ok(())
    }

    pub fn step_model(&mut self, model: &mut QcnnModel, grads: &Gradients) -> Result<()> {
        let mut params = model.tensors_mut();
        self.step(&mut params, &grads.tensors)
    }
}

/// An embedded sentence with its class index.
#[derive(Debug, Clone)]
pub struct LabeledSentence {
    pub sentence: SentenceMatrix,
    pub label: usize,
}

/// Tokenizes and embeds each record, labelling it with `label(record)`.
pub fn encode_records(
    records: &[QuestionRecord],
    table: &EmbeddingTable,
    max_len: usize,
    label: impl Fn(&QuestionRecord) -> usize,
) -> Vec<LabeledSentence> {
    records
        .iter()
        .map(|r| LabeledSentence {
            sentence: embed_sentence(&tokenize(&r.text), table, max_len),
            label: label(r),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    /// Accuracy of the training-mode (dropout) predictions made during the epoch.
    pub train_accuracy: f64,
    pub validation_accuracy: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochStats>,
}

/// Loss sum, correct count and averaged gradient over one minibatch. With a
/// generator, every example gets its own dropout stream forked from it in
/// batch order.
pub fn batch_gradient(
    model: &QcnnModel,
    batch: &[&LabeledSentence],
    mut dropout: Option<&mut Rng>,
) -> Result<(f64, usize, Gradients)> {
    let mut total = Gradients::zeros_like(model);
    let mut loss_sum = 0.0;
    let mut correct = 0;
    for ex in batch {
        let mut fork = dropout.as_deref_mut().map(Rng::fork);
        let (probs, cache) = model.forward(&ex.sentence, fork.as_mut())?;
        loss_sum += cross_entropy(&probs, ex.label)?;
        if argmax(&probs) == ex.label {
            correct += 1;
        }
        model.backward_into(&cache, ex.label, &mut total)?;
    }
    if !batch.is_empty() {
        total.scale(1.0 / batch.len() as f64);
    }
    Ok((loss_sum, correct, total))
}

/// Shuffled minibatch training with per-example forward/backward and
/// batch-averaged gradients. Deterministic for a given `config.seed`.
pub fn train(
    model: &mut QcnnModel,
    data: &[LabeledSentence],
    validation: &[LabeledSentence],
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<TrainHistory> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::Empty("no training examples".into()));
    }
    if let Some(bad) = data
        .iter()
        .chain(validation)
        .find(|e| e.label >= model.classes())
    {
        return Err(Error::InvalidArgument(format!(
            "label {} out of range for a {}-class model",
            bad.label,
            model.classes()
        )));
    }
    let mut history = TrainHistory::default();
    let mut rng = Rng::new(config.seed);
    let mut optimizer = Optimizer::from_config(config);
    let mut order: Vec<usize> = (0..data.len()).collect();

    for epoch in 1..=config.epochs {
        rng.shuffle(&mut order);
        let mut loss_sum = 0.0;
        let mut correct = 0;
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<&LabeledSentence> = chunk.iter().map(|&i| &data[i]).collect();
            let (loss, hits, grads) = batch_gradient(model, &batch, Some(&mut rng))?;
            if !loss.is_finite() || !grads.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    batch: b + 1,
                    loss: loss / batch.len() as f64,
                });
            }
            loss_sum += loss;
            correct += hits;
            optimizer.step_model(model, &grads)?;
        }
        let validation_accuracy = if validation.is_empty() {
            None
        } else {
            Some(evaluate(model, validation)?.accuracy())
        };
        let stats = EpochStats {
            epoch,
            mean_loss: loss_sum / data.len() as f64,
            train_accuracy: correct as f64 / data.len() as f64,
            validation_accuracy,
        };
        on_epoch(&stats);
        history.epochs.push(stats);
    }
    Ok(history)
}

/// Square count matrix, rows = gold class, columns = predicted class.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<usize>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        ConfusionMatrix {
            classes,
            counts: vec![0; classes * classes],
        }
    }

    pub fn record(&mut self, gold: usize, predicted: usize) {
        self.counts[gold * self.classes + predicted] += 1;
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, gold: usize, predicted: usize) -> usize {
        self.counts[gold * self.classes + predicted]
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    pub fn correct(&self) -> usize {
        (0..self.classes).map(|c| self.get(c, c)).sum()
    }

    pub fn gold_count(&self, class: usize) -> usize {
        (0..self.classes).map(|p| self.get(class, p)).sum()
    }

    /// Recall of one class; `None` when it has no gold examples.
    pub fn class_accuracy(&self, class: usize) -> Option<f64> {
        let n = self.gold_count(class);
        (n > 0).then(|| self.get(class, class) as f64 / n as f64)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub confusion: ConfusionMatrix,
}

impl Evaluation {
    pub fn correct(&self) -> usize {
        self.confusion.correct()
    }

    pub fn total(&self) -> usize {
        self.confusion.total()
    }

    pub fn accuracy(&self) -> f64 {
        self.correct() as f64 / self.total() as f64
    }
}

/// Accuracy (true positives over examples) and confusion counts.
pub fn evaluate(model: &QcnnModel, data: &[LabeledSentence]) -> Result<Evaluation> {
    if data.is_empty() {
        return Err(Error::Empty("no evaluation examples".into()));
    }
    let mut confusion = ConfusionMatrix::new(model.classes());
    for ex in data {
        if ex.label >= model.classes() {
            return Err(Error::InvalidArgument(format!(
                "label {} out of range",
                ex.label
            )));
        }
        confusion.record(ex.label, model.predict(&ex.sentence)?);
    }
    Ok(Evaluation { confusion })
}

/// Compares [`QcnnModel::backward`] with central differences on `trials`
/// random small models and inputs; returns the worst relative error.
pub fn gradient_check(trials: usize, seed: u64) -> Result<f64> {
    gradient_check_with(trials, seed, DEFAULT_FD_EPS, |_| {})
}

/// As [`gradient_check`], with a hook that may alter each analytic gradient
/// before comparison.
pub fn gradient_check_with(
    trials: usize,
    seed: u64,
    eps: f64,
    mut tamper: impl FnMut(&mut Gradients),
) -> Result<f64> {
    if trials == 0 {
        return Err(Error::InvalidArgument(
            "at least one trial is required".into(),
        ));
    }
    let mut rng = Rng::new(seed);
    let mut worst: f64 = 0.0;
    for trial in 0..trials {
        let dim = 2 + (rng.next_u64() % 4) as usize;
        let classes = 2 + (rng.next_u64() % 3) as usize;
        let cfg = ModelConfig {
            filters: 1 + (rng.next_u64() % 3) as usize,
            hidden: 2 * (1 + (rng.next_u64() % 4) as usize),
            k: 1 + (rng.next_u64() % 2) as usize,
            dropout: if trial % 2 == 0 { 0.5 } else { 0.0 },
            ..ModelConfig::new(dim, classes)
        };
        let m = 1 + (rng.next_u64() % 6) as usize;
        let mut model = QcnnModel::new(cfg, &mut rng)?;
        for t in model.tensors_mut().into_iter().skip(1).step_by(2) {
            t.iter_mut().for_each(|b| *b = 0.1 * rng.standard_normal());
        }
        let values = Matrix::from_vec(m, dim, rng.normal(0.0, 1.0, m * dim)?)?;
        let sentence = SentenceMatrix::from_matrix(values, Vec::new())?;
        let target = (rng.next_u64() % classes as u64) as usize;
        let mask_seed = rng.next_u64();

        let (_, cache) = model.forward(&sentence, Some(&mut Rng::new(mask_seed)))?;
        let mut grads = model.backward(&cache, target)?;
        tamper(&mut grads);
        let analytic = grads.flatten();

        let mut probe = model.clone();
        let numeric = finite_difference_grad(
            |x| {
                probe.set_flat_params(x).expect("same parameter count");
                let (p, _) = probe
                    .forward(&sentence, Some(&mut Rng::new(mask_seed)))
                    .expect("shapes fixed");
                -p[target].ln()
            },
            &model.flat_params(),
            eps,
        )?;
        worst = worst.max(max_relative_error(&analytic, &numeric));
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cross_entropy_values() {
        let uniform = vec![1.0 / 6.0; 6];
        assert!((cross_entropy(&uniform, 4).unwrap() - 6f64.ln()).abs() < 1e-12);
        assert!((cross_entropy(&uniform, 4).unwrap() - 1.791759).abs() < 1e-6);
        assert_eq!(cross_entropy(&[0.0, 1.0], 1).unwrap(), 0.0);
        let clamped = cross_entropy(&[1.0, 0.0], 1).unwrap();
        assert!((clamped - 27.631021).abs() < 1e-5);
        assert!((cross_entropy(&[1.0 - 1e-12, 1e-12], 1).unwrap() - 27.631021).abs() < 1e-5);
        assert!(cross_entropy(&uniform, 6).is_err());
    }

    #[test]
    fn sgd_step() {
        let mut opt = Optimizer::sgd(0.1);
        let mut p = [1.0];
        opt.step(&mut [&mut p[..]], &[vec![2.0]]).unwrap();
        assert!((p[0] - 0.8).abs() < 1e-15);
        opt.step(&mut [&mut p[..]], &[vec![0.0]]).unwrap();
        assert!((p[0] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        for g in [3.0, -0.02, 150.0] {
            let mut opt = Optimizer::adam(1e-3, 0.9, 0.999, 1e-8);
            let mut p = [0.5];
            opt.step(&mut [&mut p[..]], &[vec![g]]).unwrap();
            let moved = 0.5 - p[0];
            assert!((moved.abs() - 1e-3).abs() < 1e-8, "g={g} moved {moved}");
            assert_eq!(moved.signum(), g.signum());
        }
    }

    #[test]
    fn adam_with_zero_gradients_is_still() {
        let mut opt = Optimizer::adam(1e-2, 0.9, 0.999, 1e-8);
        let mut p = [0.25, -4.0];
        for _ in 0..10 {
            opt.step(&mut [&mut p[..]], &[vec![0.0, 0.0]]).unwrap();
        }
        assert_eq!(p, [0.25, -4.0]);
    }

    #[test]
    fn optimizer_rejects_shape_mismatch() {
        let mut p = [1.0, 2.0];
        assert!(Optimizer::sgd(0.1)
            .step(&mut [&mut p[..]], &[vec![1.0]])
            .is_err());
        let mut opt = Optimizer::adam(0.1, 0.9, 0.999, 1e-8);
        opt.step(&mut [&mut p[..]], &[vec![1.0, 1.0]]).unwrap();
        let mut q = [1.0];
        assert!(opt.step(&mut [&mut q[..]], &[vec![1.0]]).is_err());
    }

    #[test]
    fn confusion_accounting() {
        let mut c = ConfusionMatrix::new(3);
        for (g, p) in [(0, 0), (1, 1), (2, 2), (2, 1), (0, 0)] {
            c.record(g, p);
        }
        assert_eq!(c.total(), 5);
        assert_eq!(c.correct(), 4);
        assert_eq!(c.class_accuracy(2), Some(0.5));
        assert_eq!(c.get(2, 1), 1);
        assert_eq!(ConfusionMatrix::new(2).class_accuracy(0), None);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        for bad in [
            TrainConfig {
                learning_rate: 0.0,
                ..Default::default()
            },
            TrainConfig {
                dropout: 1.0,
                ..Default::default()
            },
            TrainConfig {
                k: 0,
                ..Default::default()
            },
            TrainConfig {
                hidden: 7,
                ..Default::default()
            },
        ] {
            assert!(bad.validate().is_err());
        }
    }

    #[test]
    fn gradient_check_passes_and_repeats() {
        let a = gradient_check(3, 1).unwrap();
        assert!(a < GRADCHECK_TOLERANCE, "{a}");
        assert_eq!(a, gradient_check(3, 1).unwrap());
        assert!(gradient_check(0, 1).is_err());
    }

    #[test]
    fn corrupted_gradient_is_caught() {
        let worst = gradient_check_with(2, 5, DEFAULT_FD_EPS, |g| {
            let last = g.tensors.last_mut().unwrap();
            last[0] = -last[0];
        })
        .unwrap();
        assert!(worst > 1e-2, "{worst}");
    }
}
