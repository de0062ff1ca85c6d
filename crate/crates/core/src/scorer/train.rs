use std::collections::BTreeSet;

use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::adam::{Adam, AdamConfig};
use crate::error::{Error, Result};

/// Predictions are clamped to `[BCE_EPS, 1 - BCE_EPS]` before taking logs.
pub const BCE_EPS: f64 = 1e-7;

/// Examples per parallel gradient chunk. Chunk partial sums are reduced in
/// index order, so results do not depend on the thread count.
const GRAD_CHUNK: usize = 64;

/// Mean binary cross-entropy.
pub fn bce_loss(predictions: &[f64], labels: &[f64]) -> Result<f64> {
    if predictions.is_empty() {
        return Err(Error::invalid("BCE over an empty batch"));
    }
    if predictions.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: predictions.len(),
            actual: labels.len(),
        });
    }
    let total: f64 = predictions
        .iter()
        .zip(labels)
        .map(|(&p, &y)| {
            let p = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
            -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
        })
        .sum();
    Ok(total / predictions.len() as f64)
}

/// Draws `k` distinct indices from `0..n_items` that are not in `exclude`.
/// Returns every candidate when fewer than `k` exist.
pub fn sample_negatives<R: Rng>(
    exclude: &BTreeSet<usize>,
    n_items: usize,
    k: usize,
    rng: &mut R,
) -> Vec<usize> {
    let available = n_items - exclude.iter().filter(|&&i| i < n_items).count();
    if k == 0 || available == 0 {
        return Vec::new();
    }
    if k >= available {
        return (0..n_items).filter(|i| !exclude.contains(i)).collect();
    }
    if 2 * k <= available && exclude.len() < n_items / 2 {
        // Rejection sampling: cheap when the allowed set is most of the catalog.
        let mut chosen = Vec::with_capacity(k);
        while chosen.len() < k {
            let i = rng.gen_range(0..n_items);
            if !exclude.contains(&i) && !chosen.contains(&i) {
                chosen.push(i);
            }
        }
        chosen
    } else {
        let candidates: Vec<usize> = (0..n_items).filter(|i| !exclude.contains(i)).collect();
        sample(rng, candidates.len(), k)
            .into_iter()
            .map(|j| candidates[j])
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub adam: AdamConfig,
    pub negatives_per_positive: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 2048,
            max_epochs: 100,
            patience: 5,
            adam: AdamConfig::default(),
            negatives_per_positive: 4,
            seed: 42,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.max_epochs == 0 || self.patience == 0 {
            return Err(Error::Config(
                "batch_size, max_epochs and patience must be positive".into(),
            ));
        }
        let a = &self.adam;
        if !(a.learning_rate >= 0.0 && a.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate {} is invalid",
                a.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) || a.epsilon <= 0.0 {
            return Err(Error::Config(
                "Adam betas must lie in [0, 1) and epsilon be positive".into(),
            ));
        }
        Ok(())
    }
}

/// A (user, item, label) triple over the index space of a [`PairData`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabeledPair {
    pub user: usize,
    pub item: usize,
    pub label: f64,
}

/// Indexed training data: positives from the train slices, the items each
/// user must never be given as negatives, and fixed validation pairs.
#[derive(Debug, Clone)]
pub struct PairData {
    pub n_items: usize,
    pub positives: Vec<(usize, usize)>,
    /// Per user, the items excluded from negative sampling during training.
    pub train_items: Vec<BTreeSet<usize>>,
    pub validation: Vec<LabeledPair>,
}

impl PairData {
    /// Builds validation pairs from `val_positives`, each followed by
    /// `negatives_per_positive` negatives drawn once from items outside
    /// both the user's train and validation slices.
    pub fn new(
        n_items: usize,
        positives: Vec<(usize, usize)>,
        train_items: Vec<BTreeSet<usize>>,
        val_positives: &[(usize, usize)],
        negatives_per_positive: usize,
        seed: u64,
    ) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7661_6c69_6461_7465);
        let mut val_items: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); train_items.len()];
        for &(u, i) in val_positives {
            val_items[u].insert(i);
        }
        let mut validation = Vec::with_capacity(val_positives.len() * (negatives_per_positive + 1));
        for &(u, i) in val_positives {
            validation.push(LabeledPair {
                user: u,
                item: i,
                label: 1.0,
            });
            let exclude: BTreeSet<usize> = train_items[u].union(&val_items[u]).copied().collect();
            for n in sample_negatives(&exclude, n_items, negatives_per_positive, &mut rng) {
                validation.push(LabeledPair {
                    user: u,
                    item: n,
                    label: 0.0,
                });
            }
        }
        PairData {
            n_items,
            positives,
            train_items,
            validation,
        }
    }
}

/// A model trainable by [`fit`] on (user, item) pairs.
pub trait PairModel: Sync {
    fn param_blocks(&self) -> Vec<&[f64]>;
    fn param_blocks_mut(&mut self) -> Vec<&mut [f64]>;

    /// Eval-mode probability.
    fn predict(&self, user: usize, item: usize) -> f64;

    /// Train-mode forward pass followed by backprop of `scale · BCE`,
    /// accumulated into `grads` (one buffer per parameter block). Returns
    /// the train-mode prediction.
    fn accumulate(
        &self,
        pair: LabeledPair,
        scale: f64,
        rng: &mut ChaCha8Rng,
        grads: &mut [Vec<f64>],
    ) -> f64;

    fn zero_grads(&self) -> Vec<Vec<f64>> {
        self.param_blocks()
            .iter()
            .map(|b| vec![0.0; b.len()])
            .collect()
    }

    /// Gradient of the batch-mean BCE and the train-mode predictions.
    fn batch_gradient(&self, batch: &[LabeledPair], batch_seed: u64) -> (Vec<Vec<f64>>, Vec<f64>) {
        chunked_gradient(self, batch, batch_seed)
    }

    /// Eval-mode predictions, in pair order.
    fn predict_pairs(&self, pairs: &[LabeledPair]) -> Vec<f64> {
        pairs
            .par_iter()
            .map(|p| self.predict(p.user, p.item))
            .collect()
    }
}

/// Dropout generator for example `index` of a batch.
pub fn example_rng(batch_seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(batch_seed);
    rng.set_stream(index as u64);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub stopped_early: bool,
}

/// Validation BCE in eval mode. Predictions are computed in parallel and
/// summed in pair order.
pub fn validation_loss<M: PairModel + ?Sized>(model: &M, pairs: &[LabeledPair]) -> Result<f64> {
    let preds = model.predict_pairs(pairs);
    let labels: Vec<f64> = pairs.iter().map(|p| p.label).collect();
    bce_loss(&preds, &labels)
}

/// Per-example gradients summed over fixed-size chunks (in parallel), the
/// chunk sums then reduced in order. Example `j` of the batch draws its
/// dropout masks from stream `j` of a generator seeded with `batch_seed`.
pub fn chunked_gradient<M: PairModel + ?Sized>(
    model: &M,
    batch: &[LabeledPair],
    batch_seed: u64,
) -> (Vec<Vec<f64>>, Vec<f64>) {
    let scale = 1.0 / batch.len() as f64;
    let partials: Vec<(Vec<Vec<f64>>, Vec<f64>)> = batch
        .par_chunks(GRAD_CHUNK)
        .enumerate()
        .map(|(c, chunk)| {
            let mut grads = model.zero_grads();
            let preds = chunk
                .iter()
                .enumerate()
                .map(|(j, &pair)| {
                    let mut rng = example_rng(batch_seed, c * GRAD_CHUNK + j);
                    model.accumulate(pair, scale, &mut rng, &mut grads)
                })
                .collect();
            (grads, preds)
        })
        .collect();
    let mut iter = partials.into_iter();
    let (mut total, mut preds) = iter.next().expect("non-empty batch");
    for (g, p) in iter {
        for (t, b) in total.iter_mut().zip(&g) {
            for (x, y) in t.iter_mut().zip(b) {
                *x += y;
            }
        }
        preds.extend(p);
    }
    (total, preds)
}

fn snapshot<M: PairModel>(model: &M) -> Vec<Vec<f64>> {
    model.param_blocks().iter().map(|b| b.to_vec()).collect()
}

fn restore<M: PairModel>(model: &mut M, saved: &[Vec<f64>]) {
    for (dst, src) in model.param_blocks_mut().into_iter().zip(saved) {
        dst.copy_from_slice(src);
    }
}

/// Minibatch Adam over `data` with per-epoch negative resampling and early
/// stopping on validation BCE. On return `model` holds the parameters of the
/// best validation epoch.
pub fn fit<M: PairModel>(model: &mut M, data: &PairData, config: &TrainConfig) -> Result<TrainLog> {
    config.validate()?;
    if data.positives.is_empty() {
        return Err(Error::invalid("no training positives"));
    }
    if data.validation.is_empty() {
        return Err(Error::invalid("no validation pairs"));
    }
    let sizes: Vec<usize> = model.param_blocks().iter().map(|b| b.len()).collect();
    let mut adam = Adam::new(config.adam, &sizes);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut best = snapshot(model);
    let mut log = TrainLog {
        epochs: Vec::new(),
        best_epoch: 0,
        best_val_loss: f64::INFINITY,
        stopped_early: false,
    };
    let mut bad_epochs = 0;

    for epoch in 1..=config.max_epochs {
        let mut positives = data.positives.clone();
        positives.shuffle(&mut rng);
        let mut pairs = Vec::with_capacity(positives.len() * (config.negatives_per_positive + 1));
        for (u, i) in positives {
            pairs.push(LabeledPair {
                user: u,
                item: i,
                label: 1.0,
            });
            for n in sample_negatives(
                &data.train_items[u],
                data.n_items,
                config.negatives_per_positive,
                &mut rng,
            ) {
                pairs.push(LabeledPair {
                    user: u,
                    item: n,
                    label: 0.0,
                });
            }
        }
        pairs.shuffle(&mut rng);

        let mut loss_sum = 0.0;
        for (b, batch) in pairs.chunks(config.batch_size).enumerate() {
            let (grads, preds) = model.batch_gradient(batch, rng.gen());
            let labels: Vec<f64> = batch.iter().map(|p| p.label).collect();
            let loss = bce_loss(&preds, &labels)?;
            if !loss.is_finite() || grads.iter().flatten().any(|g| !g.is_finite()) {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: b,
                    loss,
                });
            }
            loss_sum += loss * batch.len() as f64;
            let mut params = model.param_blocks_mut();
            adam.step(&mut params, &grads);
        }
        let train_loss = loss_sum / pairs.len() as f64;
        let val_loss = validation_loss(model, &data.validation)?;
        if !val_loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                epoch,
                batch: usize::MAX,
                loss: val_loss,
            });
        }
        log::debug!("epoch {epoch}: train {train_loss:.6} val {val_loss:.6}");
        log.epochs.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
        });
        if val_loss < log.best_val_loss {
            log.best_val_loss = val_loss;
            log.best_epoch = epoch;
            best = snapshot(model);
            bad_epochs = 0;
        } else {
            bad_epochs += 1;
            if bad_epochs >= config.patience {
                log.stopped_early = true;
                break;
            }
        }
    }
    restore(model, &best);
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bce_examples() {
        assert!((bce_loss(&[0.5], &[1.0]).unwrap() - std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(
            bce_loss(&[0.5], &[0.0]).unwrap(),
            bce_loss(&[0.5], &[1.0]).unwrap()
        );
        let perfect = bce_loss(&[1.0, 0.0, 1.0], &[1.0, 0.0, 1.0]).unwrap();
        assert!(perfect <= -(1.0 - BCE_EPS).ln() + 1e-18);
        assert!(perfect > 0.0 && perfect < 1.1e-7);
        assert!(bce_loss(&[], &[]).is_err());
        assert!(bce_loss(&[0.5], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn negatives_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let train: BTreeSet<usize> = [0].into();
        let mut forced = sample_negatives(&train, 3, 2, &mut rng);
        forced.sort();
        assert_eq!(forced, vec![1, 2]);
        assert!(sample_negatives(&train, 3, 0, &mut rng).is_empty());
        assert_eq!(sample_negatives(&train, 3, 10, &mut rng), vec![1, 2]);
        let a = sample_negatives(&train, 500, 7, &mut ChaCha8Rng::seed_from_u64(5));
        let b = sample_negatives(&train, 500, 7, &mut ChaCha8Rng::seed_from_u64(5));
        assert_eq!(a, b);
    }

    #[test]
    fn negatives_distinct_and_allowed() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for n_excluded in [0usize, 10, 60, 95] {
            let exclude: BTreeSet<usize> = (0..n_excluded).map(|i| i * 100 / 100).collect();
            for k in [1, 3, 4, 30] {
                let s = sample_negatives(&exclude, 100, k, &mut rng);
                let set: BTreeSet<usize> = s.iter().copied().collect();
                assert_eq!(set.len(), s.len());
                assert_eq!(s.len(), k.min(100 - n_excluded));
                assert!(s.iter().all(|i| *i < 100 && !exclude.contains(i)));
            }
        }
    }

    #[test]
    fn negatives_uniform_over_allowed_items() {
        let exclude: BTreeSet<usize> = [0, 1].into();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut counts = [0usize; 10];
        let trials = 20_000;
        for _ in 0..trials {
            for i in sample_negatives(&exclude, 10, 2, &mut rng) {
                counts[i] += 1;
            }
        }
        assert_eq!(counts[0] + counts[1], 0);
        // Each of the 8 allowed items appears with probability 2/8 per draw.
        let expected = trials as f64 * 0.25;
        for &c in &counts[2..] {
            assert!(
                (c as f64 - expected).abs() < 4.0 * (expected * 0.75).sqrt(),
                "{counts:?}"
            );
        }
    }

    #[test]
    fn validation_pairs_avoid_seen_items() {
        let train = vec![[0usize, 1].into(), [2usize].into()];
        let data = PairData::new(
            8,
            vec![(0, 0), (0, 1), (1, 2)],
            train,
            &[(0, 3), (1, 4)],
            4,
            9,
        );
        assert_eq!(data.validation.len(), 10);
        for p in &data.validation {
            if p.label == 0.0 {
                let seen: &[usize] = if p.user == 0 { &[0, 1, 3] } else { &[2, 4] };
                assert!(!seen.contains(&p.item));
            }
        }
        let again = PairData::new(
            8,
            vec![],
            vec![[0usize, 1].into(), [2usize].into()],
            &[(0, 3), (1, 4)],
            4,
            9,
        );
        assert_eq!(again.validation, data.validation);
    }
}
