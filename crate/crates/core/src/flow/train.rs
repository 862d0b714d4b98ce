use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::made::{DoubtFlow, Standardizer, DEFAULT_HIDDEN, DEFAULT_LAYERS};
use super::{DoubtDataset, FeatureSchema, FlowError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub validation_fraction: f64,
    pub layers: usize,
    pub hidden: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 256,
            max_epochs: 500,
            patience: 20,
            validation_fraction: 0.1,
            layers: DEFAULT_LAYERS,
            hidden: DEFAULT_HIDDEN,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    /// Mean training NLL per epoch (nats).
    pub train_loss: Vec<f64>,
    /// Mean validation NLL per epoch (nats).
    pub validation_loss: Vec<f64>,
    pub best_epoch: usize,
    pub stopped_early: bool,
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
    lr: f64,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize, lr: f64) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
            lr,
        }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - Self::B1.powi(self.t);
        let c2 = 1.0 - Self::B2.powi(self.t);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = Self::B1 * self.m[i] + (1.0 - Self::B1) * g;
            self.v[i] = Self::B2 * self.v[i] + (1.0 - Self::B2) * g * g;
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] -= self.lr * mh / (vh.sqrt() + Self::EPS);
        }
    }
}

/// Maximum-likelihood fit with minibatch Adam and early stopping on a held-out
/// split. Returns the weights with the best validation loss.
pub fn fit(
    dataset: &DoubtDataset,
    schema: &FeatureSchema,
    config: &FitConfig,
    seed: u64,
) -> Result<(DoubtFlow, FitReport), FlowError> {
    dataset.validate(schema)?;
    if config.batch_size == 0 || config.max_epochs == 0 || !(config.learning_rate > 0.0) {
        return Err(FlowError::InvalidArgument(
            "batch size, epoch count and learning rate must be positive".into(),
        ));
    }
    if !(0.0..1.0).contains(&config.validation_fraction) {
        return Err(FlowError::InvalidArgument("validation fraction must lie in [0, 1)".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..dataset.rows.len()).collect();
    order.shuffle(&mut rng);
    let n_val = ((dataset.rows.len() as f64) * config.validation_fraction).round() as usize;
    let n_val = if dataset.rows.len() > 1 { n_val.min(dataset.rows.len() - 1) } else { 0 };
    let (val_idx, train_idx) = order.split_at(n_val);
    let mut train_idx = train_idx.to_vec();

    let encoded: Vec<Vec<f64>> = dataset
        .rows
        .iter()
        .map(|r| schema.encode(&r.features))
        .collect::<Result<_, _>>()?;
    let mut flow = DoubtFlow::new(schema.clone(), config.layers, config.hidden, seed ^ 0x5eed_f10e);
    flow.standardizer = Standardizer::fit(train_idx.iter().map(|&i| dataset.rows[i].error));

    let eval_idx: &[usize] = if val_idx.is_empty() { &train_idx } else { val_idx };
    let eval_idx = eval_idx.to_vec();
    let evaluate = |flow: &DoubtFlow| -> f64 {
        let mut total = 0.0;
        for &i in &eval_idx {
            total -= flow.log_density_encoded(dataset.rows[i].error, &encoded[i]);
        }
        total / eval_idx.len() as f64
    };

    let mut adam = Adam::new(flow.params.len(), config.learning_rate);
    let mut grad = vec![0.0; flow.params.len()];
    let mut best = (evaluate(&flow), flow.params.clone(), 0usize);
    let mut report = FitReport {
        train_loss: Vec::new(),
        validation_loss: Vec::new(),
        best_epoch: 0,
        stopped_early: false,
    };
    let mut since_best = 0;
    for epoch in 1..=config.max_epochs {
        train_idx.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in train_idx.chunks(config.batch_size) {
            let batch: Vec<([f64; 2], &[f64])> = chunk
                .iter()
                .map(|&i| (dataset.rows[i].error, encoded[i].as_slice()))
                .collect();
            let loss = flow.nll_and_grad(&batch, &mut grad);
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(FlowError::Diverged { epoch, loss });
            }
            epoch_loss += loss * chunk.len() as f64;
            adam.step(&mut flow.params, &grad);
        }
        let train = epoch_loss / train_idx.len() as f64;
        let val = evaluate(&flow);
        if !val.is_finite() {
            return Err(FlowError::Diverged { epoch, loss: val });
        }
        report.train_loss.push(train);
        report.validation_loss.push(val);
        log::debug!("epoch {epoch}: train {train:.5} validation {val:.5}");
        if val < best.0 {
            best = (val, flow.params.clone(), epoch);
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= config.patience {
                report.stopped_early = true;
                break;
            }
        }
    }
    flow.params = best.1;
    report.best_epoch = best.2;
    Ok((flow, report))
}
