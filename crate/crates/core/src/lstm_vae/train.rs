use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Example, VaeConfig, VaeModel};
use crate::corpus::{Corpus, Vocabulary};
use crate::error::ModelError;
use crate::numerics::{Graph, Optimizer, OptimizerKind};
use crate::scalar::Scalar;

/// Optimisation settings shared by both models.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
    /// Global-norm clip; `None` disables clipping.
    pub clip: Option<f64>,
    pub optimizer: OptimizerKind,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            lr: 0.5,
            batch_size: 16,
            seed: 7,
            clip: Some(5.0),
            optimizer: OptimizerKind::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub kl_weight: f64,
    /// Mean training reconstruction loss (nats/token, with word dropout).
    pub recon: f64,
    /// Mean per-line KL.
    pub kl: f64,
    /// Posterior-mean reconstruction loss on the validation split.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub val_recon: Option<f64>,
}

/// Linear KL annealing: `min(1, epoch / anneal_epochs)` with 1-based epochs.
pub fn kl_weight_for_epoch(epoch: usize, anneal_epochs: usize) -> f64 {
    if anneal_epochs == 0 {
        1.0
    } else {
        (epoch as f64 / anneal_epochs as f64).min(1.0)
    }
}

/// Trains a fresh model on the corpus training split. Deterministic in
/// `train_cfg.seed`.
pub fn train<T: Scalar>(
    corpus: &Corpus,
    vocab: &Vocabulary,
    config: VaeConfig,
    train_cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochMetrics),
) -> Result<(VaeModel<T>, Vec<EpochMetrics>), ModelError> {
    if corpus.train.is_empty() {
        return Err(ModelError::EmptyCorpus);
    }
    if train_cfg.batch_size == 0 || train_cfg.epochs == 0 {
        return Err(ModelError::InvalidConfig("epochs and batch_size must be ≥ 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(train_cfg.seed);
    let mut model = VaeModel::<T>::new(config, vocab.clone(), corpus.tag_inventory.clone(), &mut rng)?;
    let mut opt = Optimizer::new(train_cfg.optimizer, train_cfg.lr, train_cfg.clip, model.params());

    let example = |i: usize| Example {
        line: &corpus.lines[i],
        tag: if config.conditional { corpus.tag_id(i) } else { None },
    };
    let validation: Vec<Example> = corpus.validation.iter().map(|&i| example(i)).collect();
    let mut order = corpus.train.clone();
    let mut history = Vec::with_capacity(train_cfg.epochs);

    for epoch in 1..=train_cfg.epochs {
        let kl_weight = kl_weight_for_epoch(epoch, config.kl_anneal_epochs);
        order.shuffle(&mut rng);
        let (mut recon_sum, mut kl_sum, mut seen) = (0.0, 0.0, 0usize);
        for chunk in order.chunks(train_cfg.batch_size) {
            let batch: Vec<Example> = chunk.iter().map(|&i| example(i)).collect();
            let mut g = Graph::new();
            let (nodes, objective) = model.sampled_loss_graph(&mut g, &batch, kl_weight, config.word_dropout, &mut rng)?;
            if !objective.is_finite() {
                return Err(ModelError::Diverged { epoch });
            }
            let mut grads = g.backward(nodes.objective)?.params(model.params());
            opt.step(model.params_mut(), &mut grads);
            recon_sum += g.value(nodes.recon).item().to_f64_lossy() * batch.len() as f64;
            kl_sum += g.value(nodes.kl).item().to_f64_lossy() * batch.len() as f64;
            seen += batch.len();
        }
        let val_recon = if validation.is_empty() {
            None
        } else {
            Some(model.posterior_mean_nll(&validation)?.to_f64_lossy())
        };
        let metrics = EpochMetrics {
            epoch,
            kl_weight,
            recon: recon_sum / seen as f64,
            kl: kl_sum / seen as f64,
            val_recon,
        };
        on_epoch(&metrics);
        history.push(metrics);
    }
    Ok((model, history))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_annealing_schedule() {
        assert!((kl_weight_for_epoch(1, 10) - 0.1).abs() < 1e-15);
        assert_eq!(kl_weight_for_epoch(10, 10), 1.0);
        assert_eq!(kl_weight_for_epoch(25, 10), 1.0);
        assert_eq!(kl_weight_for_epoch(1, 0), 1.0);
    }
}
