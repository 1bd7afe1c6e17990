//! Multinomial logistic regression trained by full-batch gradient descent.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
    pub init_scale: f64,
    /// Training stops once an epoch improves the loss by less than this.
    pub plateau_tolerance: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.5,
            epochs: 300,
            seed: 0,
            init_scale: 0.01,
            plateau_tolerance: 1e-10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyClassifier {
    /// K rows of C weights.
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
    pub config: TrainConfig,
    /// Mean cross-entropy before training and after every accepted epoch.
    #[serde(default)]
    pub loss_history: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
}

impl ToyClassifier {
    /// Seeded Gaussian weights, zero bias.
    pub fn initialize(num_classes: usize, dim: usize, config: TrainConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let normal = Normal::new(0.0, config.init_scale.abs()).expect("finite scale");
        let weights = (0..num_classes)
            .map(|_| (0..dim).map(|_| normal.sample(&mut rng)).collect())
            .collect();
        Self {
            weights,
            bias: vec![0.0; num_classes],
            config,
            loss_history: Vec::new(),
        }
    }

    pub fn num_classes(&self) -> usize {
        self.bias.len()
    }

    pub fn dim(&self) -> usize {
        self.weights.first().map_or(0, Vec::len)
    }

    pub fn logits<F: AsRef<[f32]>>(&self, feature: F) -> Result<Vec<f64>> {
        let f = feature.as_ref();
        if f.len() != self.dim() {
            return Err(Error::LengthMismatch {
                expected: self.dim(),
                found: f.len(),
            });
        }
        Ok(self
            .weights
            .iter()
            .zip(&self.bias)
            .map(|(w, b)| w.iter().zip(f).fold(*b, |acc, (w, x)| acc + w * *x as f64))
            .collect())
    }

    pub fn predict<F: AsRef<[f32]>>(&self, feature: F) -> Result<u32> {
        Ok(crate::fusion::argmax(&self.logits(feature)?) as u32)
    }

    pub fn validate(&self) -> Result<()> {
        if self.weights.len() != self.bias.len() || self.weights.iter().any(|w| w.len() != self.dim()) {
            return Err(Error::InvalidConfig("classifier weight shape is ragged".into()));
        }
        if self.weights.iter().flatten().chain(&self.bias).any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig("classifier has non-finite parameters".into()));
        }
        Ok(())
    }

    fn step(&self, grad: &Gradient, lr: f64) -> Self {
        let mut next = self.clone();
        for (w, g) in next.weights.iter_mut().zip(&grad.weights) {
            for (w, g) in w.iter_mut().zip(g) {
                *w -= lr * g;
            }
        }
        for (b, g) in next.bias.iter_mut().zip(&grad.bias) {
            *b -= lr * g;
        }
        next
    }
}

fn check_inputs<F: AsRef<[f32]>>(features: &[F], labels: &[u32], num_classes: usize, dim: usize) -> Result<()> {
    if features.is_empty() {
        return Err(Error::Empty("training features"));
    }
    if features.len() != labels.len() {
        return Err(Error::LengthMismatch {
            expected: features.len(),
            found: labels.len(),
        });
    }
    for (i, f) in features.iter().enumerate() {
        if f.as_ref().len() != dim {
            return Err(Error::LengthMismatch {
                expected: dim,
                found: f.as_ref().len(),
            });
        }
        if labels[i] as usize >= num_classes {
            return Err(Error::InvalidLabel {
                id: i as u32,
                label: labels[i] as i64,
                num_classes,
            });
        }
    }
    Ok(())
}

/// Mean cross-entropy and its analytic gradient.
pub fn loss_and_gradient<F: AsRef<[f32]>>(model: &ToyClassifier, features: &[F], labels: &[u32]) -> Result<(f64, Gradient)> {
    let (k, dim) = (model.num_classes(), model.dim());
    check_inputs(features, labels, k, dim)?;
    let mut grad = Gradient {
        weights: vec![vec![0.0; dim]; k],
        bias: vec![0.0; k],
    };
    let mut loss = 0.0;
    for (f, &y) in features.iter().zip(labels) {
        let f = f.as_ref();
        let logits = model.logits(f)?;
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        loss += z.ln() + max - logits[y as usize];
        for c in 0..k {
            let delta = exps[c] / z - if c == y as usize { 1.0 } else { 0.0 };
            grad.bias[c] += delta;
            for (g, x) in grad.weights[c].iter_mut().zip(f) {
                *g += delta * *x as f64;
            }
        }
    }
    let m = features.len() as f64;
    grad.bias.iter_mut().for_each(|g| *g /= m);
    grad.weights.iter_mut().flatten().for_each(|g| *g /= m);
    Ok((loss / m, grad))
}

/// Gradient descent with step halving whenever an epoch would not lower the
/// loss; stops early on a plateau.
pub fn train_classifier<F: AsRef<[f32]>>(features: &[F], labels: &[u32], num_classes: usize, config: TrainConfig) -> Result<ToyClassifier> {
    let dim = features.first().ok_or(Error::Empty("training features"))?.as_ref().len();
    check_inputs(features, labels, num_classes, dim)?;
    let mut present: Vec<u32> = labels.to_vec();
    present.sort_unstable();
    present.dedup();
    if present.len() < 2 {
        return Err(Error::SingleClass);
    }
    if !(config.learning_rate > 0.0) {
        return Err(Error::InvalidConfig(format!("learning rate must be positive, got {}", config.learning_rate)));
    }

    let mut model = ToyClassifier::initialize(num_classes, dim, config);
    let (mut loss, mut grad) = loss_and_gradient(&model, features, labels)?;
    model.loss_history.push(loss);
    let mut lr = config.learning_rate;
    'epochs: for _ in 0..config.epochs {
        loop {
            let candidate = model.step(&grad, lr);
            let (next_loss, next_grad) = loss_and_gradient(&candidate, features, labels)?;
            if next_loss < loss {
                let improvement = loss - next_loss;
                let history = std::mem::take(&mut model.loss_history);
                model = candidate;
                model.loss_history = history;
                model.loss_history.push(next_loss);
                loss = next_loss;
                grad = next_grad;
                if improvement < config.plateau_tolerance {
                    break 'epochs;
                }
                break;
            }
            lr *= 0.5;
            if lr < 1e-12 {
                break 'epochs;
            }
        }
    }
    model.validate()?;
    Ok(model)
}
