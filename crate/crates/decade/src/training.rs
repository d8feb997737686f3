//! Deterministic mini-batch training with Adam and mean-squared loss.
//!
//! Shuffle order is a pure function of (seed, epoch); a seed-deterministic
//! 10% slice of the training data is held out for best-checkpoint
//! selection.

use rand::seq::SliceRandom;
use thiserror::Error;

use crate::network::{mse_loss, Network, NetworkError};
use crate::optim::{AdamState, OptimError};
use crate::seed::rng_for;
use crate::tensor::Tensor;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("dataset sample width {dataset} does not match network input {network}")]
    InputMismatch { dataset: usize, network: usize },
    #[error("invalid config: {0}")]
    Config(String),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Optim(#[from] OptimError),
}

/// Flat supervised dataset: every sample is `sample_len` values plus one
/// scalar target.
#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub sample_shape: Vec<usize>,
    inputs: Vec<f32>,
    targets: Vec<f32>,
}

impl Dataset {
    pub fn new(sample_shape: Vec<usize>) -> Self {
        Self {
            sample_shape,
            inputs: Vec::new(),
            targets: Vec::new(),
        }
    }

    pub fn sample_len(&self) -> usize {
        self.sample_shape.iter().product()
    }

    pub fn push(&mut self, input: &[f32], target: f32) {
        assert_eq!(input.len(), self.sample_len(), "sample width mismatch");
        self.inputs.extend_from_slice(input);
        self.targets.push(target);
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn target(&self, i: usize) -> f32 {
        self.targets[i]
    }

    pub fn input(&self, i: usize) -> &[f32] {
        let n = self.sample_len();
        &self.inputs[i * n..(i + 1) * n]
    }

    /// Gathers the given samples into a `[batch, ...sample_shape]` input
    /// tensor and a `[batch, 1]` target tensor.
    pub fn batch(&self, indices: &[usize]) -> (Tensor<f32>, Tensor<f32>) {
        let n = self.sample_len();
        let mut shape = vec![indices.len()];
        shape.extend_from_slice(&self.sample_shape);
        let mut input = Tensor::zeros(&shape);
        let mut target = Tensor::zeros(&[indices.len(), 1]);
        for (row, &i) in indices.iter().enumerate() {
            input.values_mut()[row * n..(row + 1) * n].copy_from_slice(self.input(i));
            target.values_mut()[row] = self.targets[i];
        }
        (input, target)
    }
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub holdout_fraction: f64,
}

impl TrainConfig {
    /// Pose network defaults: 250 epochs, batch 64, lr 0.001.
    pub fn pose_defaults(seed: u64) -> Self {
        Self {
            epochs: 250,
            batch_size: 64,
            learning_rate: 0.001,
            seed,
            holdout_fraction: 0.1,
        }
    }

    /// Distance network defaults: 250 epochs, batch 64, lr 0.0001.
    pub fn distance_defaults(seed: u64) -> Self {
        Self {
            epochs: 250,
            batch_size: 64,
            learning_rate: 0.0001,
            seed,
            holdout_fraction: 0.1,
        }
    }

    /// Adaptation fine-tuning: same rates, 100 epochs.
    pub fn adaptation(mut self) -> Self {
        self.epochs = 100;
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    /// MAE over the held-out slice in the target's native unit; NaN when no
    /// holdout exists.
    pub holdout_mae: f64,
}

/// Per-epoch training record.
#[derive(Debug, Clone, Default)]
pub struct TrainHistory {
    pub epochs: Vec<EpochStats>,
}

impl TrainHistory {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,holdout_mae\n");
        for e in &self.epochs {
            out.push_str(&format!("{},{:.8},{:.8}\n", e.epoch, e.train_loss, e.holdout_mae));
        }
        out
    }
}

/// Training result: the network passed in holds the final-epoch weights;
/// `best` holds the weights with the lowest held-out MAE.
#[derive(Debug)]
pub struct TrainOutcome {
    pub history: TrainHistory,
    pub best: Network<f32>,
    pub best_epoch: Option<usize>,
}

/// Trains `net` in place. Deterministic: identical (seed, data, config)
/// produce bit-identical weights.
pub fn train(
    net: &mut Network<f32>,
    data: &Dataset,
    config: &TrainConfig,
) -> Result<TrainOutcome, TrainError> {
    if data.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let net_input: usize = net.input_shape.iter().product();
    if data.sample_len() != net_input {
        return Err(TrainError::InputMismatch {
            dataset: data.sample_len(),
            network: net_input,
        });
    }
    if config.batch_size == 0 || config.learning_rate <= 0.0 {
        return Err(TrainError::Config(
            "batch_size must be positive and learning_rate > 0".into(),
        ));
    }
    if !(0.0..1.0).contains(&config.holdout_fraction) {
        return Err(TrainError::Config("holdout_fraction must be in [0, 1)".into()));
    }

    // seed-deterministic holdout split
    let mut indices: Vec<usize> = (0..data.len()).collect();
    indices.shuffle(&mut rng_for(config.seed, "train/holdout-split"));
    let holdout_n = ((data.len() as f64) * config.holdout_fraction).floor() as usize;
    let (holdout_idx, train_idx_base) = indices.split_at(holdout_n);
    let holdout_idx = holdout_idx.to_vec();
    let train_idx_base = train_idx_base.to_vec();

    let mut adam = AdamState::for_network(net);
    let mut history = TrainHistory::default();
    let mut best: Option<(f64, usize, Network<f32>)> = None;

    for epoch in 1..=config.epochs {
        let mut order = train_idx_base.clone();
        order.shuffle(&mut rng_for(config.seed, &format!("train/shuffle/{epoch}")));

        let mut loss_sum = 0.0f64;
        for chunk in order.chunks(config.batch_size) {
            let (input, target) = data.batch(chunk);
            net.zero_grad();
            let pred = net.forward(&input)?;
            let (loss, grad) = mse_loss(&pred, &target)?;
            net.backward(&grad)?;
            adam.step_network(net, config.learning_rate as f32)?;
            loss_sum += f64::from(loss) * chunk.len() as f64;
        }
        let train_loss = loss_sum / train_idx_base.len() as f64;

        let holdout_mae = if holdout_idx.is_empty() {
            f64::NAN
        } else {
            evaluate_mae(net, data, &holdout_idx, config.batch_size)?
        };
        if !holdout_mae.is_nan()
            && best.as_ref().is_none_or(|(b, _, _)| holdout_mae < *b)
        {
            let mut snapshot = net.clone();
            snapshot.reset_state();
            best = Some((holdout_mae, epoch, snapshot));
        }
        history.epochs.push(EpochStats {
            epoch,
            train_loss,
            holdout_mae,
        });
    }

    net.reset_state();
    let (best_net, best_epoch) = match best {
        Some((_, epoch, snapshot)) => (snapshot, Some(epoch)),
        None => (net.clone(), None),
    };
    Ok(TrainOutcome {
        history,
        best: best_net,
        best_epoch,
    })
}

/// Fine-tunes a pretrained network on an adaptation dataset: the same loop
/// with 100 epochs (by default) and unchanged learning rates.
pub fn adapt(
    net: &mut Network<f32>,
    data: &Dataset,
    config: &TrainConfig,
) -> Result<TrainOutcome, TrainError> {
    train(net, data, config)
}

/// MAE of the network's scalar output over the given samples.
pub fn evaluate_mae(
    net: &Network<f32>,
    data: &Dataset,
    indices: &[usize],
    batch_size: usize,
) -> Result<f64, TrainError> {
    if indices.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let mut abs_sum = 0.0f64;
    for chunk in indices.chunks(batch_size.max(1)) {
        let (input, target) = data.batch(chunk);
        let pred = net.predict(&input)?;
        for (&p, &t) in pred.values().iter().zip(target.values()) {
            abs_sum += f64::from((p - t).abs());
        }
    }
    Ok(abs_sum / indices.len() as f64)
}

/// Network predictions over the whole dataset (scalar output per sample).
pub fn predict_all(
    net: &Network<f32>,
    data: &Dataset,
    batch_size: usize,
) -> Result<Vec<f64>, TrainError> {
    let mut out = Vec::with_capacity(data.len());
    let indices: Vec<usize> = (0..data.len()).collect();
    for chunk in indices.chunks(batch_size.max(1)) {
        let (input, _) = data.batch(chunk);
        let pred = net.predict(&input)?;
        out.extend(pred.values().iter().map(|&v| f64::from(v)));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::LayerSpec;

    fn toy_dataset(n: usize) -> Dataset {
        // y = 2*x0 - x1 + 0.5
        let mut data = Dataset::new(vec![2]);
        for i in 0..n {
            let x0 = (i % 17) as f32 / 17.0;
            let x1 = (i % 11) as f32 / 11.0;
            data.push(&[x0, x1], 2.0 * x0 - x1 + 0.5);
        }
        data
    }

    fn toy_net(seed: u64) -> Network<f32> {
        let def = crate::models::NetworkDef {
            name: "toy".into(),
            input_shape: vec![2],
            specs: vec![
                LayerSpec::Dense { input: 2, output: 8 },
                LayerSpec::Relu,
                LayerSpec::Dense { input: 8, output: 1 },
            ],
        };
        def.instantiate(seed)
    }

    #[test]
    fn zero_epochs_leaves_network_unchanged() {
        let mut net = toy_net(1);
        let before: Vec<Vec<f32>> = net.params().iter().map(|p| p.values().to_vec()).collect();
        let cfg = TrainConfig {
            epochs: 0,
            ..TrainConfig::distance_defaults(1)
        };
        let out = train(&mut net, &toy_dataset(100), &cfg).unwrap();
        assert!(out.history.epochs.is_empty());
        assert!(out.best_epoch.is_none());
        let after: Vec<Vec<f32>> = net.params().iter().map(|p| p.values().to_vec()).collect();
        assert_eq!(before, after);
    }

    #[test]
    fn training_is_bit_deterministic() {
        let data = toy_dataset(200);
        let cfg = TrainConfig {
            epochs: 5,
            batch_size: 16,
            learning_rate: 0.01,
            seed: 42,
            holdout_fraction: 0.1,
        };
        let mut a = toy_net(42);
        let mut b = toy_net(42);
        let oa = train(&mut a, &data, &cfg).unwrap();
        let ob = train(&mut b, &data, &cfg).unwrap();
        for (pa, pb) in a.params().iter().zip(b.params()) {
            assert_eq!(pa.values(), pb.values());
        }
        assert_eq!(oa.history.epochs, ob.history.epochs);
    }

    #[test]
    fn loss_trends_downward_early() {
        let data = toy_dataset(500);
        let cfg = TrainConfig {
            epochs: 10,
            batch_size: 32,
            learning_rate: 0.005,
            seed: 3,
            holdout_fraction: 0.1,
        };
        let mut net = toy_net(3);
        let out = train(&mut net, &data, &cfg).unwrap();
        let losses: Vec<f64> = out.history.epochs.iter().map(|e| e.train_loss).collect();
        let median = |s: &[f64]| {
            let mut v = s.to_vec();
            v.sort_by(|a, b| a.partial_cmp(b).unwrap());
            v[v.len() / 2]
        };
        assert!(median(&losses[5..10]) < median(&losses[0..5]));
    }

    #[test]
    fn empty_dataset_and_mismatch_rejected() {
        let mut net = toy_net(1);
        let cfg = TrainConfig::distance_defaults(1);
        assert!(matches!(
            train(&mut net, &Dataset::new(vec![2]), &cfg),
            Err(TrainError::EmptyDataset)
        ));
        let mut wrong = Dataset::new(vec![3]);
        wrong.push(&[1.0, 2.0, 3.0], 0.0);
        assert!(matches!(
            train(&mut net, &wrong, &cfg),
            Err(TrainError::InputMismatch { .. })
        ));
    }

    #[test]
    fn learns_linear_function() {
        let data = toy_dataset(400);
        let cfg = TrainConfig {
            epochs: 120,
            batch_size: 32,
            learning_rate: 0.01,
            seed: 9,
            holdout_fraction: 0.1,
        };
        let mut net = toy_net(9);
        let out = train(&mut net, &data, &cfg).unwrap();
        let last = out.history.epochs.last().unwrap();
        assert!(last.holdout_mae < 0.05, "holdout mae {}", last.holdout_mae);
        assert!(out.best_epoch.is_some());
    }

    #[test]
    fn history_csv_shape() {
        let data = toy_dataset(50);
        let cfg = TrainConfig {
            epochs: 3,
            batch_size: 16,
            learning_rate: 0.01,
            seed: 1,
            holdout_fraction: 0.1,
        };
        let mut net = toy_net(1);
        let out = train(&mut net, &data, &cfg).unwrap();
        let csv = out.history.to_csv();
        assert!(csv.starts_with("epoch,train_loss,holdout_mae\n"));
        assert_eq!(csv.lines().count(), 4);
    }
}
