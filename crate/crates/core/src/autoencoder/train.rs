use ndarray::{Array1, Array2, Axis, Zip};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::mlp::{Activation, Gradients, Mlp};
use super::{stack_vectors, MlpModel, ModelError, Standardizer};
use crate::defaults;
use crate::features::FeatureVector;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Optimizer {
    Sgd,
    Adam { beta1: f64, beta2: f64, epsilon: f64 },
}

impl Optimizer {
    pub fn adam() -> Self {
        Optimizer::Adam {
            beta1: defaults::ADAM_BETA1,
            beta2: defaults::ADAM_BETA2,
            epsilon: defaults::ADAM_EPSILON,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub optimizer: Optimizer,
    /// Fraction of the dataset held out for validation loss.
    pub validation_fraction: f64,
    /// Standardize every input dimension with training-set statistics.
    pub standardize: bool,
    pub hidden_layers: Vec<usize>,
    pub activation: Activation,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: defaults::LEARNING_RATE,
            epochs: defaults::EPOCHS,
            batch_size: defaults::BATCH_SIZE,
            seed: 0,
            optimizer: Optimizer::adam(),
            validation_fraction: 0.0,
            standardize: false,
            hidden_layers: defaults::HIDDEN_LAYERS.to_vec(),
            activation: Activation::Relu,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::InvalidConfig(m.into()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be > 0");
        }
        if self.epochs < 1 {
            return bad("epochs must be >= 1");
        }
        if self.batch_size < 1 {
            return bad("batch_size must be >= 1");
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return bad("validation_fraction must lie in [0, 1)");
        }
        if let Optimizer::Adam { beta1, beta2, epsilon } = self.optimizer {
            if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) || !(epsilon > 0.0) {
                return bad("Adam needs beta1, beta2 in [0, 1) and epsilon > 0");
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean training loss over the epoch's batches (before each update).
    pub train_loss: f64,
    pub val_loss: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: MlpModel,
    pub history: Vec<EpochStats>,
}

struct AdamState {
    m_w: Vec<Array2<f32>>,
    v_w: Vec<Array2<f32>>,
    m_b: Vec<Array1<f32>>,
    v_b: Vec<Array1<f32>>,
    step: i32,
}

impl AdamState {
    fn new(mlp: &Mlp<f32>) -> Self {
        let zw: Vec<_> = mlp.weights().iter().map(|w| Array2::zeros(w.dim())).collect();
        let zb: Vec<_> = mlp.biases().iter().map(|b| Array1::zeros(b.len())).collect();
        Self {
            m_w: zw.clone(),
            v_w: zw,
            m_b: zb.clone(),
            v_b: zb,
            step: 0,
        }
    }
}

fn sgd_step(mlp: &mut Mlp<f32>, grads: &Gradients<f32>, lr: f32) {
    for (w, g) in mlp.weights_mut().iter_mut().zip(&grads.weights) {
        w.scaled_add(-lr, g);
    }
    for (b, g) in mlp.biases_mut().iter_mut().zip(&grads.biases) {
        b.scaled_add(-lr, g);
    }
}

fn adam_step(
    mlp: &mut Mlp<f32>,
    grads: &Gradients<f32>,
    state: &mut AdamState,
    lr: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
) {
    state.step += 1;
    let c1 = 1.0 - beta1.powi(state.step);
    let c2 = 1.0 - beta2.powi(state.step);
    let step_size = (lr * c2.sqrt() / c1) as f32;
    let eps_hat = (epsilon * c2.sqrt()) as f32;
    let (b1, b2) = (beta1 as f32, beta2 as f32);
    let update = |p: &mut f32, &g: &f32, m: &mut f32, v: &mut f32| {
        *m = b1 * *m + (1.0 - b1) * g;
        *v = b2 * *v + (1.0 - b2) * g * g;
        *p -= step_size * *m / (v.sqrt() + eps_hat);
    };
    for k in 0..grads.weights.len() {
        Zip::from(&mut mlp.weights_mut()[k])
            .and(&grads.weights[k])
            .and(&mut state.m_w[k])
            .and(&mut state.v_w[k])
            .for_each(update);
        Zip::from(&mut mlp.biases_mut()[k])
            .and(&grads.biases[k])
            .and(&mut state.m_b[k])
            .and(&mut state.v_b[k])
            .for_each(update);
    }
}

/// Mini-batch training of the reconstruction network. Deterministic given
/// the dataset and configuration.
pub fn train(dataset: &[FeatureVector], config: &TrainConfig) -> Result<TrainOutcome, ModelError> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    let all = stack_vectors(dataset)?;
    if all.iter().any(|v| !v.is_finite()) {
        return Err(ModelError::Shape("dataset contains non-finite values".into()));
    }
    let dim = all.ncols();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let mut order: Vec<usize> = (0..all.nrows()).collect();
    order.shuffle(&mut rng);
    let n_val = ((all.nrows() as f64 * config.validation_fraction) as usize).min(all.nrows() - 1);
    let (val_idx, train_idx) = order.split_at(n_val);
    let mut train_rows = all.select(Axis(0), train_idx);
    let mut val_rows = all.select(Axis(0), val_idx);

    let normalizer = config.standardize.then(|| Standardizer::fit(train_rows.view()));
    if let Some(norm) = &normalizer {
        norm.apply(&mut train_rows);
        norm.apply(&mut val_rows);
    }

    let mut sizes = Vec::with_capacity(config.hidden_layers.len() + 2);
    sizes.push(dim);
    sizes.extend_from_slice(&config.hidden_layers);
    sizes.push(dim);
    let mut mlp = Mlp::<f32>::random(&sizes, config.activation, &mut rng)?;
    let mut adam = AdamState::new(&mlp);

    let mut positions: Vec<usize> = (0..train_rows.nrows()).collect();
    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        positions.shuffle(&mut rng);
        let mut loss_sum = 0.0f64;
        for (b, chunk) in positions.chunks(config.batch_size).enumerate() {
            let batch = train_rows.select(Axis(0), chunk);
            let (loss, grads) = mlp.loss_and_gradients(batch.view())?;
            let loss = loss as f64;
            if !loss.is_finite() {
                return Err(ModelError::NonFiniteLoss {
                    epoch,
                    batch: b,
                    loss,
                });
            }
            loss_sum += loss * chunk.len() as f64;
            match config.optimizer {
                Optimizer::Sgd => sgd_step(&mut mlp, &grads, config.learning_rate as f32),
                Optimizer::Adam { beta1, beta2, epsilon } => adam_step(
                    &mut mlp,
                    &grads,
                    &mut adam,
                    config.learning_rate,
                    beta1,
                    beta2,
                    epsilon,
                ),
            }
        }
        let val_loss = if val_rows.nrows() > 0 {
            let recon = mlp.forward_batch(val_rows.view())?;
            let diff = &recon - &val_rows;
            Some(diff.iter().map(|&d| (d as f64).powi(2)).sum::<f64>() / diff.len() as f64)
        } else {
            None
        };
        history.push(EpochStats {
            epoch,
            train_loss: loss_sum / train_rows.nrows() as f64,
            val_loss,
        });
    }
    if !mlp.is_finite() {
        return Err(ModelError::NonFiniteLoss {
            epoch: config.epochs,
            batch: 0,
            loss: f64::NAN,
        });
    }

    let mut model = MlpModel::new(mlp)?;
    model.normalizer = normalizer;
    let meta = &mut model.metadata;
    match config.optimizer {
        Optimizer::Sgd => {
            meta.insert("optimizer".into(), "sgd".into());
        }
        Optimizer::Adam { beta1, beta2, epsilon } => {
            meta.insert("optimizer".into(), "adam".into());
            meta.insert("adam.beta1".into(), format!("{beta1:?}"));
            meta.insert("adam.beta2".into(), format!("{beta2:?}"));
            meta.insert("adam.epsilon".into(), format!("{epsilon:?}"));
        }
    }
    meta.insert("learning_rate".into(), format!("{:?}", config.learning_rate));
    meta.insert("epochs".into(), config.epochs.to_string());
    meta.insert("batch_size".into(), config.batch_size.to_string());
    meta.insert("seed".into(), config.seed.to_string());
    meta.insert("train_samples".into(), train_rows.nrows().to_string());
    Ok(TrainOutcome { model, history })
}
