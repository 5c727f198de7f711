//! The single convolutional classifier: wide convolutions of heights 2..=5
//! over a sentence matrix, k-max pooling, two tanh dense layers with
//! inverted dropout, and a softmax output.
//!
//! Pooled features are concatenated by ascending kernel height, then filter
//! index, then position order, so feature `offset(h) + f·k + j` is the j-th
//! selected activation of filter `f` in the bank of height `h`.

use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use crate::embeddings::SentenceMatrix;
use crate::error::{Error, Result};
use crate::numerics::{dot, gemm, Matrix, Rng};

pub const DEFAULT_HEIGHTS: [usize; 4] = [2, 3, 4, 5];
pub const DEFAULT_FILTERS: usize = 100;
pub const DEFAULT_HIDDEN: usize = 128;
pub const DEFAULT_K: usize = 2;
pub const DEFAULT_DROPOUT: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Tanh,
    Relu,
    #[serde(rename = "none")]
    Identity,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
            Activation::Identity => x,
        }
    }

    /// Derivative at pre-activation `pre` whose activated value is `post`.
    fn derivative(self, pre: f64, post: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - post * post,
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
            Activation::Identity => "none",
        })
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "tanh" => Ok(Activation::Tanh),
            "relu" => Ok(Activation::Relu),
            "none" | "identity" => Ok(Activation::Identity),
            other => Err(Error::Config(format!(
                "unknown activation {other:?} (expected tanh, relu or none)"
            ))),
        }
    }
}

/// Shape hyperparameters of one classifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub dim: usize,
    pub classes: usize,
    pub filters: usize,
    pub hidden: usize,
    pub k: usize,
    pub dropout: f64,
    pub heights: Vec<usize>,
    pub conv_activation: Activation,
}

impl ModelConfig {
    pub fn new(dim: usize, classes: usize) -> Self {
        ModelConfig {
            dim,
            classes,
            filters: DEFAULT_FILTERS,
            hidden: DEFAULT_HIDDEN,
            k: DEFAULT_K,
            dropout: DEFAULT_DROPOUT,
            heights: DEFAULT_HEIGHTS.to_vec(),
            conv_activation: Activation::Tanh,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::InvalidArgument(m));
        if self.dim == 0 || self.classes == 0 || self.filters == 0 || self.k == 0 {
            return fail(format!(
                "dim, classes, filters and k must be positive: {self:?}"
            ));
        }
        if self.hidden < 2 || !self.hidden.is_multiple_of(2) {
            return fail(format!(
                "hidden size must be even and at least 2, got {}",
                self.hidden
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout must lie in [0, 1), got {}", self.dropout));
        }
        if self.heights.is_empty() || self.heights.contains(&0) {
            return fail(format!(
                "kernel heights must be positive, got {:?}",
                self.heights
            ));
        }
        Ok(())
    }

    /// Width of the merged pooling layer, `k · Σ F`.
    pub fn pooled_len(&self) -> usize {
        self.k * self.filters * self.heights.len()
    }
}

/// `filters` kernels of shape `height × dim`, stored as one
/// `filters × (height·dim)` matrix whose row `f` is kernel `f` flattened
/// row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvFilterBank {
    height: usize,
    dim: usize,
    weights: Matrix,
    biases: Vec<f64>,
}

impl ConvFilterBank {
    pub fn height(&self) -> usize {
        self.height
    }

    pub fn filter_count(&self) -> usize {
        self.biases.len()
    }

    pub fn kernel(&self, f: usize) -> Matrix {
        Matrix::from_vec(self.height, self.dim, self.weights.row(f).to_vec())
            .expect("kernel row has height·dim entries")
    }

    pub fn bias(&self, f: usize) -> f64 {
        self.biases[f]
    }

    /// Pre-activation wide-convolution responses, `filters × (m + n − 1)`.
    fn responses(&self, s: &Matrix) -> Matrix {
        let (m, d) = s.shape();
        let n = self.height;
        let f_count = self.filter_count();
        // Row (f, r) of the weight matrix viewed as (F·n) × d is row r of
        // kernel f; proj[t][(f, r)] = <kernel_f[r], s[t]>.
        let cols = f_count * n;
        let mut proj = vec![0.0; m * cols];
        gemm(
            s.as_slice(),
            m,
            d,
            (d as isize, 1),
            self.weights.as_slice(),
            cols,
            (1, d as isize),
            &mut proj,
        );
        let len = m + n - 1;
        let mut out = Matrix::zeros(f_count, len);
        for f in 0..f_count {
            let row = out.row_mut(f);
            row.iter_mut().for_each(|v| *v = self.biases[f]);
            for t in 0..m {
                let p = &proj[t * cols + f * n..t * cols + f * n + n];
                // output index i = t + (n − 1) − r
                for (r, &v) in p.iter().enumerate() {
                    row[t + n - 1 - r] += v;
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    weights: Matrix,
    biases: Vec<f64>,
    activation: Activation,
}

impl DenseLayer {
    pub fn weights(&self) -> &Matrix {
        &self.weights
    }

    pub fn biases(&self) -> &[f64] {
        &self.biases
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    fn pre_activation(&self, x: &[f64]) -> Vec<f64> {
        let mut z = self
            .weights
            .matvec(x)
            .expect("layer input width checked by caller");
        z.iter_mut().zip(&self.biases).for_each(|(z, b)| *z += b);
        z
    }

    /// Accumulates `dW += dz ⊗ x`, `db += dz` and returns `Wᵀ dz`.
    fn backward(&self, x: &[f64], dz: &[f64], dw: &mut [f64], db: &mut [f64]) -> Vec<f64> {
        let in_len = x.len();
        let mut dx = vec![0.0; in_len];
        for (o, &g) in dz.iter().enumerate() {
            db[o] += g;
            if g == 0.0 {
                continue;
            }
            let w_row = self.weights.row(o);
            let dw_row = &mut dw[o * in_len..(o + 1) * in_len];
            for i in 0..in_len {
                dw_row[i] += g * x[i];
                dx[i] += g * w_row[i];
            }
        }
        dx
    }
}

/// Name and shape of one parameter tensor.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
}

impl TensorSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

static NEXT_STAMP: AtomicU64 = AtomicU64::new(1);

fn fresh_stamp() -> u64 {
    NEXT_STAMP.fetch_add(1, Ordering::Relaxed)
}

/// All learnable parameters of one classifier.
#[derive(Debug)]
pub struct QcnnModel {
    config: ModelConfig,
    banks: Vec<ConvFilterBank>,
    fc1: DenseLayer,
    fc2: DenseLayer,
    out: DenseLayer,
    // Changes whenever parameters may have changed; ties caches to a state.
    stamp: u64,
}

impl Clone for QcnnModel {
    fn clone(&self) -> Self {
        QcnnModel {
            config: self.config.clone(),
            banks: self.banks.clone(),
            fc1: self.fc1.clone(),
            fc2: self.fc2.clone(),
            out: self.out.clone(),
            stamp: fresh_stamp(),
        }
    }
}

impl PartialEq for QcnnModel {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config
            && self.banks == other.banks
            && self.fc1 == other.fc1
            && self.fc2 == other.fc2
            && self.out == other.out
    }
}

impl QcnnModel {
    /// Zero biases; weights drawn from N(0, sqrt(2 / (fan_in + fan_out))).
    /// A convolution kernel has fan-in `height·dim` and fan-out `filters`.
    pub fn new(config: ModelConfig, rng: &mut Rng) -> Result<Self> {
        let mut model = QcnnModel::zeros(config)?;
        for bank in &mut model.banks {
            let fan_in = bank.height * bank.dim;
            let sd = (2.0 / (fan_in + bank.filter_count()) as f64).sqrt();
            fill_normal(bank.weights.as_mut_slice(), sd, rng);
        }
        for layer in [&mut model.fc1, &mut model.fc2, &mut model.out] {
            let (fan_out, fan_in) = layer.weights.shape();
            let sd = (2.0 / (fan_in + fan_out) as f64).sqrt();
            fill_normal(layer.weights.as_mut_slice(), sd, rng);
        }
        Ok(model)
    }

    /// A model with every parameter set to zero.
    pub fn zeros(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let banks = config
            .heights
            .iter()
            .map(|&h| ConvFilterBank {
                height: h,
                dim: config.dim,
                weights: Matrix::zeros(config.filters, h * config.dim),
                biases: vec![0.0; config.filters],
            })
            .collect();
        let dense = |out: usize, inp: usize, activation| DenseLayer {
            weights: Matrix::zeros(out, inp),
            biases: vec![0.0; out],
            activation,
        };
        let half = config.hidden / 2;
        Ok(QcnnModel {
            fc1: dense(config.hidden, config.pooled_len(), Activation::Tanh),
            fc2: dense(half, config.hidden, Activation::Tanh),
            out: dense(config.classes, half, Activation::Identity),
            banks,
            config,
            stamp: fresh_stamp(),
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn dim(&self) -> usize {
        self.config.dim
    }

    pub fn classes(&self) -> usize {
        self.config.classes
    }

    pub fn banks(&self) -> &[ConvFilterBank] {
        &self.banks
    }

    pub fn fc1(&self) -> &DenseLayer {
        &self.fc1
    }

    pub fn fc2(&self) -> &DenseLayer {
        &self.fc2
    }

    pub fn output_layer(&self) -> &DenseLayer {
        &self.out
    }

    /// Parameter manifest in canonical order.
    pub fn tensor_specs(&self) -> Vec<TensorSpec> {
        let mut specs = Vec::new();
        for bank in &self.banks {
            specs.push(TensorSpec {
                name: format!("conv{}.weight", bank.height),
                shape: vec![bank.filter_count(), bank.height, bank.dim],
            });
            specs.push(TensorSpec {
                name: format!("conv{}.bias", bank.height),
                shape: vec![bank.filter_count()],
            });
        }
        for (name, layer) in [("fc1", &self.fc1), ("fc2", &self.fc2), ("out", &self.out)] {
            let (rows, cols) = layer.weights.shape();
            specs.push(TensorSpec {
                name: format!("{name}.weight"),
                shape: vec![rows, cols],
            });
            specs.push(TensorSpec {
                name: format!("{name}.bias"),
                shape: vec![rows],
            });
        }
        specs
    }

    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut t: Vec<&[f64]> = Vec::with_capacity(2 * self.banks.len() + 6);
        for bank in &self.banks {
            t.push(bank.weights.as_slice());
            t.push(&bank.biases);
        }
        for layer in [&self.fc1, &self.fc2, &self.out] {
            t.push(layer.weights.as_slice());
            t.push(&layer.biases);
        }
        t
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.stamp = fresh_stamp();
        let mut t: Vec<&mut [f64]> = Vec::with_capacity(2 * self.banks.len() + 6);
        for bank in &mut self.banks {
            t.push(bank.weights.as_mut_slice());
            t.push(&mut bank.biases);
        }
        for layer in [&mut self.fc1, &mut self.fc2, &mut self.out] {
            t.push(layer.weights.as_mut_slice());
            t.push(&mut layer.biases);
        }
        t
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// All parameters concatenated in manifest order.
    pub fn flat_params(&self) -> Vec<f64> {
        self.tensors().concat()
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::InvalidArgument(format!(
                "{} values for {} parameters",
                flat.len(),
                self.param_count()
            )));
        }
        let mut offset = 0;
        for t in self.tensors_mut() {
            t.copy_from_slice(&flat[offset..offset + t.len()]);
            offset += t.len();
        }
        Ok(())
    }

    /// Runs the network. Passing a generator enables training-mode dropout;
    /// `None` is evaluation mode, where dropout is the identity.
    pub fn forward(
        &self,
        s: &SentenceMatrix,
        dropout: Option<&mut Rng>,
    ) -> Result<(Vec<f64>, ForwardCache)> {
        let x = s.values();
        if x.cols() != self.config.dim {
            return Err(Error::Shape {
                op: "forward",
                left: x.shape(),
                right: (x.rows(), self.config.dim),
            });
        }
        let k = self.config.k;
        let act = self.config.conv_activation;
        let mut pooled = Vec::with_capacity(self.config.pooled_len());
        let mut selected = Vec::with_capacity(self.banks.len());
        let mut selected_pre = Vec::with_capacity(self.config.pooled_len());
        for bank in &self.banks {
            let mut resp = bank.responses(x);
            let mut sel = Vec::with_capacity(bank.filter_count() * k);
            for f in 0..bank.filter_count() {
                let row = resp.row_mut(f);
                let pre: Vec<f64> = row.to_vec();
                row.iter_mut().for_each(|v| *v = act.apply(*v));
                let idx = k_max_indices(row, k)?;
                for &i in &idx {
                    pooled.push(row[i]);
                    selected_pre.push(pre[i]);
                }
                sel.extend(idx);
            }
            selected.push(sel);
        }

        let mut rng = dropout;
        let p = self.config.dropout;
        let z1 = self.fc1.pre_activation(&pooled);
        let h1: Vec<f64> = z1.iter().map(|v| v.tanh()).collect();
        let mask1 = rng
            .as_deref_mut()
            .and_then(|r| dropout_mask(h1.len(), p, r));
        let a1 = apply_mask(&h1, mask1.as_deref());
        let z2 = self.fc2.pre_activation(&a1);
        let h2: Vec<f64> = z2.iter().map(|v| v.tanh()).collect();
        let mask2 = rng.and_then(|r| dropout_mask(h2.len(), p, r));
        let a2 = apply_mask(&h2, mask2.as_deref());
        let logits = self.out.pre_activation(&a2);
        let probs = softmax(&logits);

        let cache = ForwardCache {
            stamp: self.stamp,
            input: x.clone(),
            selected,
            selected_pre,
            pooled,
            h1,
            mask1,
            a1,
            h2,
            mask2,
            a2,
            probs: probs.clone(),
        };
        Ok((probs, cache))
    }

    /// Evaluation-mode class probabilities.
    pub fn probabilities(&self, s: &SentenceMatrix) -> Result<Vec<f64>> {
        Ok(self.forward(s, None)?.0)
    }

    /// Argmax of the evaluation-mode probabilities, lowest index on ties.
    pub fn predict(&self, s: &SentenceMatrix) -> Result<usize> {
        Ok(argmax(&self.probabilities(s)?))
    }

    /// Exact gradient of `−ln p[target]` with respect to every parameter,
    /// holding the dropout masks recorded in `cache` fixed.
    pub fn backward(&self, cache: &ForwardCache, target: usize) -> Result<Gradients> {
        let mut grads = Gradients::zeros_like(self);
        self.backward_into(cache, target, &mut grads)?;
        Ok(grads)
    }

    /// As [`QcnnModel::backward`], adding the gradient into `grads`.
    pub fn backward_into(
        &self,
        cache: &ForwardCache,
        target: usize,
        grads: &mut Gradients,
    ) -> Result<()> {
        if cache.stamp != self.stamp {
            return Err(Error::StaleCache(
                "cache was produced by a different model or before a parameter update".into(),
            ));
        }
        if target >= self.config.classes {
            return Err(Error::InvalidArgument(format!(
                "target {target} out of range for {} classes",
                self.config.classes
            )));
        }
        if grads.tensors.len() != 2 * self.banks.len() + 6 {
            return Err(Error::InvalidArgument(
                "gradient buffer does not match the model".into(),
            ));
        }
        let n_banks = self.banks.len();
        let (bank_grads, dense_grads) = grads.tensors.split_at_mut(2 * n_banks);
        let [dw1, db1, dw2, db2, dw3, db3] = dense_grads else {
            unreachable!("three dense layers");
        };

        let mut dlogits = cache.probs.clone();
        dlogits[target] -= 1.0;

        let mut da2 = self.out.backward(&cache.a2, &dlogits, dw3, db3);
        if let Some(mask) = &cache.mask2 {
            da2.iter_mut().zip(mask).for_each(|(g, m)| *g *= m);
        }
        let dz2: Vec<f64> = da2
            .iter()
            .zip(&cache.h2)
            .map(|(g, h)| g * (1.0 - h * h))
            .collect();
        let mut da1 = self.fc2.backward(&cache.a1, &dz2, dw2, db2);
        if let Some(mask) = &cache.mask1 {
            da1.iter_mut().zip(mask).for_each(|(g, m)| *g *= m);
        }
        let dz1: Vec<f64> = da1
            .iter()
            .zip(&cache.h1)
            .map(|(g, h)| g * (1.0 - h * h))
            .collect();
        let dpooled = self.fc1.backward(&cache.pooled, &dz1, dw1, db1);

        // Route each pooled gradient to the position it was selected from and
        // scatter it over that position's padded window.
        let x = &cache.input;
        let (m, d) = x.shape();
        let k = self.config.k;
        let act = self.config.conv_activation;
        let mut feature = 0;
        for (b, bank) in self.banks.iter().enumerate() {
            let n = bank.height;
            let (dw_slot, db_slot) = bank_grads[2 * b..2 * b + 2].split_at_mut(1);
            let dw = &mut dw_slot[0];
            let db = &mut db_slot[0];
            for f in 0..bank.filter_count() {
                for j in 0..k {
                    let i = cache.selected[b][f * k + j];
                    let g = dpooled[feature]
                        * act.derivative(cache.selected_pre[feature], cache.pooled[feature]);
                    feature += 1;
                    if g == 0.0 {
                        continue;
                    }
                    db[f] += g;
                    for r in 0..n {
                        // padded row i + r holds token t = i + r − (n − 1)
                        let Some(t) = (i + r).checked_sub(n - 1).filter(|&t| t < m) else {
                            continue;
                        };
                        let dst = &mut dw[f * n * d + r * d..f * n * d + (r + 1) * d];
                        dst.iter_mut().zip(x.row(t)).for_each(|(w, v)| *w += g * v);
                    }
                }
            }
        }
        Ok(())
    }

    /// Forward in training mode followed by backward; returns the loss and
    /// gradients for one example.
    pub fn loss_and_gradients(
        &self,
        s: &SentenceMatrix,
        target: usize,
        dropout: Option<&mut Rng>,
    ) -> Result<(f64, Gradients)> {
        let (probs, cache) = self.forward(s, dropout)?;
        let loss = crate::training::cross_entropy(&probs, target)?;
        Ok((loss, self.backward(&cache, target)?))
    }
}

fn fill_normal(values: &mut [f64], sd: f64, rng: &mut Rng) {
    for v in values {
        *v = sd * rng.standard_normal();
    }
}

/// Inverted-dropout mask: survivors are scaled by `1 / (1 − p)`.
fn dropout_mask(len: usize, p: f64, rng: &mut Rng) -> Option<Vec<f64>> {
    if p <= 0.0 {
        return None;
    }
    let keep = 1.0 / (1.0 - p);
    Some(
        (0..len)
            .map(|_| if rng.uniform() >= p { keep } else { 0.0 })
            .collect(),
    )
}

fn apply_mask(h: &[f64], mask: Option<&[f64]>) -> Vec<f64> {
    match mask {
        Some(mask) => h.iter().zip(mask).map(|(h, m)| h * m).collect(),
        None => h.to_vec(),
    }
}

/// Intermediate values of one forward pass needed by [`QcnnModel::backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    stamp: u64,
    input: Matrix,
    /// Per bank, `filters · k` selected positions (filter-major).
    selected: Vec<Vec<usize>>,
    selected_pre: Vec<f64>,
    pooled: Vec<f64>,
    h1: Vec<f64>,
    mask1: Option<Vec<f64>>,
    a1: Vec<f64>,
    h2: Vec<f64>,
    mask2: Option<Vec<f64>>,
    a2: Vec<f64>,
    probs: Vec<f64>,
}

impl ForwardCache {
    pub fn pooled(&self) -> &[f64] {
        &self.pooled
    }

    /// Positions chosen by k-max pooling for each filter of bank `b`.
    pub fn selected_positions(&self, b: usize) -> &[usize] {
        &self.selected[b]
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probs
    }
}

/// Gradients laid out like [`QcnnModel::tensors`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub tensors: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like(model: &QcnnModel) -> Self {
        Gradients {
            tensors: model.tensors().iter().map(|t| vec![0.0; t.len()]).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            a.iter_mut().zip(b).for_each(|(a, b)| *a += b);
        }
    }

    pub fn scale(&mut self, factor: f64) {
        self.tensors.iter_mut().flatten().for_each(|v| *v *= factor);
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.tensors.concat()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().flatten().all(|v| v.is_finite())
    }
}

/// Wide convolution of a sentence matrix with one `n × d` kernel: the
/// sentence is zero-padded with `n − 1` rows on each end and every n-row
/// window is dotted with the kernel, giving `m + n − 1` outputs.
pub fn wide_convolve(s: &Matrix, kernel: &Matrix, bias: f64) -> Result<Vec<f64>> {
    let (m, d) = s.shape();
    let n = kernel.rows();
    if kernel.cols() != d || n == 0 || m == 0 {
        return Err(Error::Shape {
            op: "wide_convolve",
            left: s.shape(),
            right: kernel.shape(),
        });
    }
    Ok((0..m + n - 1)
        .map(|i| {
            bias + (0..n)
                .filter_map(|r| {
                    (i + r)
                        .checked_sub(n - 1)
                        .filter(|&t| t < m)
                        .map(|t| (r, t))
                })
                .map(|(r, t)| dot(kernel.row(r), s.row(t)))
                .sum::<f64>()
        })
        .collect())
}

/// Positions of the `k` largest values in ascending position order; ties go
/// to the earlier position.
pub fn k_max_indices(v: &[f64], k: usize) -> Result<Vec<usize>> {
    if k == 0 || v.len() < k {
        return Err(Error::InvalidArgument(format!(
            "cannot take {k}-max of a vector of length {}",
            v.len()
        )));
    }
    let mut best: Vec<usize> = Vec::with_capacity(k + 1);
    for (i, &x) in v.iter().enumerate() {
        // `best` stays sorted by value descending; equal values keep arrival order.
        let pos = best.partition_point(|&j| v[j].total_cmp(&x).is_ge());
        if pos < k {
            best.insert(pos, i);
            best.truncate(k);
        }
    }
    best.sort_unstable();
    Ok(best)
}

/// The `k` largest values of `v`, kept in their original order.
pub fn k_max_pool(v: &[f64], k: usize) -> Result<Vec<f64>> {
    Ok(k_max_indices(v, k)?.into_iter().map(|i| v[i]).collect())
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{finite_difference_grad, max_relative_error};

    fn tiny_config() -> ModelConfig {
        ModelConfig {
            filters: 2,
            hidden: 8,
            ..ModelConfig::new(4, 3)
        }
    }

    fn random_sentence(rng: &mut Rng, m: usize, d: usize) -> SentenceMatrix {
        let values = Matrix::from_vec(m, d, rng.normal(0.0, 1.0, m * d).unwrap()).unwrap();
        SentenceMatrix::from_matrix(values, Vec::new()).unwrap()
    }

    #[test]
    fn wide_convolve_hand_example() {
        let s = Matrix::from_rows(&[[1.0], [2.0], [3.0]]).unwrap();
        let kernel = Matrix::from_rows(&[[1.0], [1.0]]).unwrap();
        assert_eq!(
            wide_convolve(&s, &kernel, 0.0).unwrap(),
            [1.0, 3.0, 5.0, 3.0]
        );
    }

    #[test]
    fn wide_convolve_zero_kernel_gives_bias() {
        let s = Matrix::from_rows(&[[1.0, 2.0], [3.0, 4.0]]).unwrap();
        let out = wide_convolve(&s, &Matrix::zeros(3, 2), 0.7).unwrap();
        assert_eq!(out, vec![0.7; 4]);
        let one = Matrix::from_rows(&[[1.0, 2.0]]).unwrap();
        assert_eq!(
            wide_convolve(&one, &Matrix::zeros(2, 2), 0.0)
                .unwrap()
                .len(),
            2
        );
        assert!(wide_convolve(&one, &Matrix::zeros(2, 3), 0.0).is_err());
    }

    #[test]
    fn k_max_examples() {
        assert_eq!(k_max_pool(&[3.0, 1.0, 5.0, 2.0], 2).unwrap(), [3.0, 5.0]);
        assert_eq!(k_max_indices(&[7.0, 7.0, 1.0], 2).unwrap(), [0, 1]);
        assert_eq!(k_max_indices(&[1.0, 7.0, 7.0, 7.0], 2).unwrap(), [1, 2]);
        let v = [0.5, -1.0, 2.0];
        assert_eq!(k_max_pool(&v, 3).unwrap(), v);
        assert!(k_max_pool(&[1.0], 2).is_err());
    }

    #[test]
    fn bank_responses_match_reference_convolution() {
        let mut rng = Rng::new(9);
        let mut model = QcnnModel::new(tiny_config(), &mut rng).unwrap();
        for b in model.tensors_mut().into_iter().skip(1).step_by(2).take(4) {
            b.iter_mut().for_each(|v| *v = 0.3);
        }
        for m in [1, 2, 5] {
            let s = random_sentence(&mut rng, m, 4);
            for bank in model.banks() {
                let resp = bank.responses(s.values());
                for f in 0..bank.filter_count() {
                    let want = wide_convolve(s.values(), &bank.kernel(f), bank.bias(f)).unwrap();
                    for (a, b) in resp.row(f).iter().zip(&want) {
                        assert!((a - b).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn zero_model_is_uniform() {
        let model = QcnnModel::zeros(ModelConfig::new(5, 6)).unwrap();
        let mut rng = Rng::new(1);
        let s = random_sentence(&mut rng, 3, 5);
        let p = model.probabilities(&s).unwrap();
        assert!(p.iter().all(|&x| (x - 1.0 / 6.0).abs() < 1e-15));
        assert_eq!(model.predict(&s).unwrap(), 0);
    }

    #[test]
    fn probabilities_are_normalised() {
        let mut rng = Rng::new(2);
        let model = QcnnModel::new(
            ModelConfig {
                filters: 5,
                hidden: 16,
                ..ModelConfig::new(6, 4)
            },
            &mut rng,
        )
        .unwrap();
        for m in 1..8 {
            let s = random_sentence(&mut rng, m, 6);
            let p = model.forward(&s, Some(&mut rng)).unwrap().0;
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!(p.iter().all(|&x| x > 0.0 && x < 1.0));
        }
    }

    #[test]
    fn training_mode_is_seed_reproducible_and_eval_ignores_rng() {
        let mut rng = Rng::new(3);
        let model = QcnnModel::new(tiny_config(), &mut rng).unwrap();
        let s = random_sentence(&mut rng, 4, 4);
        let a = model.forward(&s, Some(&mut Rng::new(10))).unwrap().0;
        let b = model.forward(&s, Some(&mut Rng::new(10))).unwrap().0;
        assert_eq!(a, b);
        let e1 = model.probabilities(&s).unwrap();
        let e2 = model.probabilities(&s).unwrap();
        assert_eq!(e1, e2);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let model = QcnnModel::zeros(tiny_config()).unwrap();
        let s = random_sentence(&mut Rng::new(0), 3, 5);
        assert!(model.forward(&s, None).is_err());
    }

    #[test]
    fn argmax_ties_go_low() {
        assert_eq!(argmax(&[0.2, 0.5, 0.3]), 1);
        assert_eq!(argmax(&[0.5, 0.5]), 0);
        assert_eq!(argmax(&[1.0 / 6.0; 6]), 0);
    }

    fn loss_at(
        model: &QcnnModel,
        flat: &[f64],
        s: &SentenceMatrix,
        target: usize,
        seed: u64,
    ) -> f64 {
        let mut m = model.clone();
        m.set_flat_params(flat).unwrap();
        let (p, _) = m.forward(s, Some(&mut Rng::new(seed))).unwrap();
        -p[target].ln()
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = Rng::new(4);
        let model = QcnnModel::new(tiny_config(), &mut rng).unwrap();
        let s = random_sentence(&mut rng, 5, 4);
        let (_, cache) = model.forward(&s, Some(&mut Rng::new(99))).unwrap();
        let analytic = model.backward(&cache, 1).unwrap().flatten();
        let numeric = finite_difference_grad(
            |x| loss_at(&model, x, &s, 1, 99),
            &model.flat_params(),
            1e-5,
        )
        .unwrap();
        let err = max_relative_error(&analytic, &numeric);
        assert!(err < 1e-4, "max relative error {err}");
    }

    #[test]
    fn output_bias_gradient_is_softmax_minus_onehot() {
        let mut rng = Rng::new(5);
        let model = QcnnModel::new(tiny_config(), &mut rng).unwrap();
        let s = random_sentence(&mut rng, 3, 4);
        let (p, cache) = model.forward(&s, None).unwrap();
        let g = model.backward(&cache, 0).unwrap();
        let out_bias = g.tensors.last().unwrap();
        assert!((out_bias[0] - (p[0] - 1.0)).abs() < 1e-15);
        assert_eq!(out_bias[1], p[1]);
        assert_eq!(out_bias[2], p[2]);
    }

    #[test]
    fn unselected_positions_get_no_gradient() {
        // With one filter of height 2 over a 4-token sentence, only the
        // windows under the two selected positions contribute; a token row
        // covered by no selected window leaves the kernel gradient unchanged.
        let mut rng = Rng::new(6);
        let cfg = ModelConfig {
            filters: 1,
            hidden: 4,
            heights: vec![2],
            ..ModelConfig::new(3, 2)
        };
        let model = QcnnModel::new(cfg, &mut rng).unwrap();
        let base = random_sentence(&mut rng, 6, 3);
        let (_, cache) = model.forward(&base, None).unwrap();
        let sel = cache.selected_positions(0).to_vec();
        let covered: Vec<usize> = sel
            .iter()
            .flat_map(|&i| (0..2).filter_map(move |r| (i + r).checked_sub(1)))
            .filter(|&t| t < 6)
            .collect();
        let g = model.backward(&cache, 1).unwrap();
        // Perturb an uncovered token: gradient is unchanged.
        let Some(free) = (0..6).find(|t| !covered.contains(t)) else {
            return;
        };
        let mut vals = base.values().clone();
        let sel_before = sel.clone();
        vals.row_mut(free).iter_mut().for_each(|v| *v *= 0.999);
        let s2 = SentenceMatrix::from_matrix(vals, Vec::new()).unwrap();
        let (_, cache2) = model.forward(&s2, None).unwrap();
        if cache2.selected_positions(0) == sel_before.as_slice() {
            let g2 = model.backward(&cache2, 1).unwrap();
            assert_eq!(g.tensors[0], g2.tensors[0]);
        }
    }

    #[test]
    fn stale_cache_is_rejected() {
        let mut rng = Rng::new(7);
        let mut model = QcnnModel::new(tiny_config(), &mut rng).unwrap();
        let s = random_sentence(&mut rng, 3, 4);
        let (_, cache) = model.forward(&s, None).unwrap();
        let other = model.clone();
        assert!(matches!(
            other.backward(&cache, 0),
            Err(Error::StaleCache(_))
        ));
        model.tensors_mut()[0][0] += 1.0;
        assert!(matches!(
            model.backward(&cache, 0),
            Err(Error::StaleCache(_))
        ));
    }

    #[test]
    fn bias_shift_keeps_prediction() {
        let mut rng = Rng::new(8);
        let mut model = QcnnModel::new(tiny_config(), &mut rng).unwrap();
        let sentences: Vec<_> = (0..10)
            .map(|i| random_sentence(&mut rng, 1 + i % 5, 4))
            .collect();
        let before: Vec<usize> = sentences
            .iter()
            .map(|s| model.predict(s).unwrap())
            .collect();
        model
            .tensors_mut()
            .last_mut()
            .unwrap()
            .iter_mut()
            .for_each(|b| *b += 3.25);
        let after: Vec<usize> = sentences
            .iter()
            .map(|s| model.predict(s).unwrap())
            .collect();
        assert_eq!(before, after);
    }

    #[test]
    fn manifest_matches_tensors() {
        let model = QcnnModel::zeros(ModelConfig::new(7, 5)).unwrap();
        let specs = model.tensor_specs();
        let tensors = model.tensors();
        assert_eq!(specs.len(), tensors.len());
        for (s, t) in specs.iter().zip(&tensors) {
            assert_eq!(s.len(), t.len(), "{}", s.name);
        }
        assert_eq!(specs[0].shape, [100, 2, 7]);
        assert_eq!(model.fc1().weights().shape(), (128, 800));
        assert_eq!(model.fc2().weights().shape(), (64, 128));
        assert_eq!(model.output_layer().weights().shape(), (5, 64));
    }
}
