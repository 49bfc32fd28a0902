//! Small classifiers over flat parameter vectors.
//!
//! Models are multinomial logistic regression or an MLP with tanh hidden
//! layers. Parameters live in one flat `Vec<f64>` carved into (rows, cols)
//! segments, ordered weight, bias, weight, bias, ... from input to output.
//! The flat form is what federated averaging, checksums, and the masked
//! update for final-layer retraining all operate on.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::Record;
use crate::error::{Error, Result};
use crate::rng::{derive_rng, tags};

/// Shape of a flat parameter vector: (rows, cols) per segment. Bias
/// segments have cols = 1.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    segments: Vec<(usize, usize)>,
}

impl Layout {
    pub fn new(segments: Vec<(usize, usize)>) -> Self {
        Self { segments }
    }

    pub fn segments(&self) -> &[(usize, usize)] {
        &self.segments
    }

    pub fn total_len(&self) -> usize {
        self.segments.iter().map(|(r, c)| r * c).sum()
    }

    /// Flat index range of each segment, in order.
    pub fn ranges(&self) -> Vec<std::ops::Range<usize>> {
        let mut out = Vec::with_capacity(self.segments.len());
        let mut offset = 0;
        for &(r, c) in &self.segments {
            out.push(offset..offset + r * c);
            offset += r * c;
        }
        out
    }

    /// Flat index range covering the output layer (last weight + bias).
    pub fn final_layer_range(&self) -> std::ops::Range<usize> {
        let ranges = self.ranges();
        let n = ranges.len();
        ranges[n - 2].start..ranges[n - 1].end
    }
}

/// Flat, finite parameter vector with a known layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    values: Vec<f64>,
    layout: Layout,
}

impl ParamVector {
    pub fn new(values: Vec<f64>, layout: Layout) -> Result<Self> {
        if values.len() != layout.total_len() {
            return Err(Error::LayoutMismatch(format!(
                "{} values for a layout of {}",
                values.len(),
                layout.total_len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("parameter coordinate {i}")));
        }
        Ok(Self { values, layout })
    }

    pub fn zeros(layout: Layout) -> Self {
        Self {
            values: vec![0.0; layout.total_len()],
            layout,
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// FNV-1a over the exact bit patterns, for cheap equality fingerprints
    /// in logs and determinism checks.
    pub fn checksum(&self) -> u64 {
        let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
        for &v in &self.values {
            for byte in v.to_bits().to_le_bytes() {
                hash ^= byte as u64;
                hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
            }
        }
        hash
    }
}

/// One training batch. `mix` carries the partner labels and mixing weights
/// when feature-level interpolation is in play; the loss then weights both
/// labels instead of one.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub features: Array2<f64>,
    pub labels: Vec<usize>,
    pub attributes: Vec<usize>,
    pub mix: Option<MixInfo>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixInfo {
    pub partner_labels: Vec<usize>,
    pub lambdas: Vec<f64>,
}

impl Batch {
    pub fn from_records(records: &[&Record], feature_dim: usize) -> Result<Batch> {
        if records.is_empty() {
            return Err(Error::EmptyInput("batch"));
        }
        let mut features = Array2::zeros((records.len(), feature_dim));
        let mut labels = Vec::with_capacity(records.len());
        let mut attributes = Vec::with_capacity(records.len());
        for (i, record) in records.iter().enumerate() {
            if record.features.len() != feature_dim {
                return Err(Error::Invalid(format!(
                    "record {} has {} features, expected {feature_dim}",
                    record.record_id,
                    record.features.len()
                )));
            }
            for (j, &x) in record.features.iter().enumerate() {
                features[[i, j]] = x;
            }
            labels.push(record.label);
            attributes.push(record.attribute);
        }
        Ok(Batch {
            features,
            labels,
            attributes,
            mix: None,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModelFamily {
    Logistic,
    Mlp { hidden: Vec<usize> },
}

/// Architecture plus training hyperparameters. The struct is cheap to clone
/// and pure: every method takes parameters explicitly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub family: ModelFamily,
    pub input_dim: usize,
    pub num_classes: usize,
    pub init_seed: u64,
    pub learning_rate: f64,
    pub l2: f64,
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::Invalid("input_dim must be positive".into()));
        }
        if self.num_classes < 2 {
            return Err(Error::Invalid(format!(
                "need at least 2 classes, got {}",
                self.num_classes
            )));
        }
        if let ModelFamily::Mlp { hidden } = &self.family {
            if hidden.is_empty() || hidden.iter().any(|&h| h == 0) {
                return Err(Error::Invalid(
                    "mlp hidden sizes must be nonempty and positive".into(),
                ));
            }
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Invalid(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(self.l2.is_finite() && self.l2 >= 0.0) {
            return Err(Error::Invalid(format!(
                "l2 must be nonnegative, got {}",
                self.l2
            )));
        }
        Ok(())
    }

    /// Layer widths from input to output, e.g. [d, h, L] for one hidden
    /// layer.
    fn widths(&self) -> Vec<usize> {
        let mut widths = vec![self.input_dim];
        if let ModelFamily::Mlp { hidden } = &self.family {
            widths.extend_from_slice(hidden);
        }
        widths.push(self.num_classes);
        widths
    }

    pub fn layout(&self) -> Layout {
        let widths = self.widths();
        let mut segments = Vec::new();
        for pair in widths.windows(2) {
            segments.push((pair[1], pair[0]));
            segments.push((pair[1], 1));
        }
        Layout::new(segments)
    }

    /// Initial parameters: zeros for logistic regression (the objective is
    /// convex, so there is no symmetry to break), seeded uniform weights
    /// scaled by fan-in for the MLP, biases zero.
    pub fn init(&self) -> Result<ParamVector> {
        self.validate()?;
        let layout = self.layout();
        match &self.family {
            ModelFamily::Logistic => Ok(ParamVector::zeros(layout)),
            ModelFamily::Mlp { .. } => {
                let mut rng = derive_rng(self.init_seed, &[tags::MODEL_INIT]);
                let mut values = vec![0.0; layout.total_len()];
                for (range, &(_, cols)) in layout.ranges().iter().zip(layout.segments()) {
                    if cols == 1 {
                        continue; // bias stays zero
                    }
                    let bound = 1.0 / (cols as f64).sqrt();
                    for v in &mut values[range.clone()] {
                        *v = rng.random_range(-bound..bound);
                    }
                }
                ParamVector::new(values, layout)
            }
        }
    }

    fn check_params(&self, params: &ParamVector) -> Result<()> {
        if *params.layout() != self.layout() {
            return Err(Error::LayoutMismatch(
                "parameters do not fit this model".into(),
            ));
        }
        Ok(())
    }

    fn check_features(&self, features: &Array2<f64>) -> Result<()> {
        if features.ncols() != self.input_dim {
            return Err(Error::Invalid(format!(
                "features have {} columns, model expects {}",
                features.ncols(),
                self.input_dim
            )));
        }
        if features.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("input features".into()));
        }
        Ok(())
    }

    /// Runs the network, returning every layer's post-activation output
    /// (index 0 is the input) plus the raw output logits.
    fn forward_states(
        &self,
        params: &ParamVector,
        features: &Array2<f64>,
    ) -> (Vec<Array2<f64>>, Array2<f64>) {
        let ranges = params.layout().ranges();
        let segments = params.layout().segments();
        let num_layers = segments.len() / 2;
        let mut activations: Vec<Array2<f64>> = vec![features.clone()];
        let mut current = features.clone();
        for layer in 0..num_layers {
            let (rows, cols) = segments[2 * layer];
            let w = ArrayView2::from_shape(
                (rows, cols),
                &params.values()[ranges[2 * layer].clone()],
            )
            .expect("segment shape");
            let b = ArrayView1::from(&params.values()[ranges[2 * layer + 1].clone()]);
            let mut out = current.dot(&w.t());
            out += &b;
            if layer + 1 < num_layers {
                out.mapv_inplace(f64::tanh);
                activations.push(out.clone());
                current = out;
            } else {
                return (activations, out);
            }
        }
        unreachable!("models always have at least one layer");
    }

    /// Class probabilities, one row per input, via a max-shifted softmax so
    /// large logits saturate instead of overflowing.
    pub fn forward(&self, params: &ParamVector, features: &Array2<f64>) -> Result<Array2<f64>> {
        self.check_params(params)?;
        self.check_features(features)?;
        let (_, logits) = self.forward_states(params, features);
        Ok(softmax_rows(&logits))
    }

    /// Mean cross-entropy over the batch and its exact gradient. With mix
    /// info present, each row's target mass is split between the two labels
    /// by lambda.
    pub fn loss_and_grad(&self, params: &ParamVector, batch: &Batch) -> Result<(f64, ParamVector)> {
        self.check_params(params)?;
        self.check_features(&batch.features)?;
        let n = batch.len();
        if n == 0 {
            return Err(Error::EmptyInput("batch"));
        }
        if batch.labels.iter().any(|&l| l >= self.num_classes) {
            return Err(Error::Invalid("batch label out of range".into()));
        }
        if let Some(mix) = &batch.mix {
            if mix.partner_labels.len() != n || mix.lambdas.len() != n {
                return Err(Error::Invalid("mix info length mismatch".into()));
            }
            if mix.partner_labels.iter().any(|&l| l >= self.num_classes) {
                return Err(Error::Invalid("mix partner label out of range".into()));
            }
            if mix
                .lambdas
                .iter()
                .any(|&l| !l.is_finite() || !(0.0..=1.0).contains(&l))
            {
                return Err(Error::Invalid("mix lambdas must lie in [0, 1]".into()));
            }
        }

        let (activations, logits) = self.forward_states(params, &batch.features);
        let probs = softmax_rows(&logits);

        // Target distribution per row, then loss = -mean log-likelihood.
        let mut loss = 0.0;
        let mut delta = probs.clone();
        for i in 0..n {
            let (lambda, partner) = match &batch.mix {
                Some(mix) => (mix.lambdas[i], mix.partner_labels[i]),
                None => (1.0, batch.labels[i]),
            };
            let primary = batch.labels[i];
            loss -= lambda * probs[[i, primary]].ln();
            loss -= (1.0 - lambda) * probs[[i, partner]].ln();
            delta[[i, primary]] -= lambda;
            delta[[i, partner]] -= 1.0 - lambda;
        }
        loss /= n as f64;
        if !loss.is_finite() {
            return Err(Error::NonFinite("batch loss".into()));
        }
        delta /= n as f64;

        // Backprop through the affine layers and tanh activations.
        let layout = params.layout();
        let ranges = layout.ranges();
        let segments = layout.segments();
        let num_layers = segments.len() / 2;
        let mut grad = vec![0.0; layout.total_len()];
        let mut delta = delta;
        for layer in (0..num_layers).rev() {
            let input = &activations[layer];
            let grad_w = delta.t().dot(input);
            let grad_b: Array1<f64> = delta.t().dot(&Array1::from_elem(n, 1.0));
            grad[ranges[2 * layer].clone()].copy_from_slice(
                grad_w.as_standard_layout().as_slice().expect("contiguous"),
            );
            grad[ranges[2 * layer + 1].clone()]
                .copy_from_slice(grad_b.as_slice().expect("contiguous"));
            if layer > 0 {
                let (rows, cols) = segments[2 * layer];
                let w = ArrayView2::from_shape(
                    (rows, cols),
                    &params.values()[ranges[2 * layer].clone()],
                )
                .expect("segment shape");
                let mut upstream = delta.dot(&w);
                // tanh'(z) written in terms of the activation output.
                upstream
                    .zip_mut_with(input, |u, &a| *u *= 1.0 - a * a);
                delta = upstream;
            }
        }
        Ok((loss, ParamVector::new(grad, layout.clone())?))
    }

    /// Predicted class per row: argmax probability, ties to the lowest
    /// index.
    pub fn predict(&self, params: &ParamVector, features: &Array2<f64>) -> Result<Vec<usize>> {
        let probs = self.forward(params, features)?;
        Ok(probs
            .rows()
            .into_iter()
            .map(|row| {
                let mut best = 0;
                for (i, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = i;
                    }
                }
                best
            })
            .collect())
    }
}

fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let total = row.sum();
        row.mapv_inplace(|v| v / total);
    }
    out
}

/// One plain SGD step with L2 weight decay folded into the gradient:
/// p' = p - lr * (g + l2 * p).
pub fn sgd_step(params: &ParamVector, grad: &ParamVector, lr: f64, l2: f64) -> Result<ParamVector> {
    sgd_step_masked(params, grad, lr, l2, 0..params.len())
}

/// SGD restricted to `active` coordinates; everything outside the range is
/// left untouched, weight decay included. Used to retrain only the output
/// layer.
pub fn sgd_step_masked(
    params: &ParamVector,
    grad: &ParamVector,
    lr: f64,
    l2: f64,
    active: std::ops::Range<usize>,
) -> Result<ParamVector> {
    if params.layout() != grad.layout() {
        return Err(Error::LayoutMismatch(
            "gradient layout differs from parameters".into(),
        ));
    }
    if active.end > params.len() {
        return Err(Error::Invalid(format!(
            "active range {active:?} exceeds {} parameters",
            params.len()
        )));
    }
    let mut values = params.values().to_vec();
    for i in active {
        values[i] -= lr * (grad.values()[i] + l2 * values[i]);
        if !values[i].is_finite() {
            return Err(Error::NonFinite(format!(
                "updated parameter coordinate {i}"
            )));
        }
    }
    ParamVector::new(values, params.layout().clone())
}
