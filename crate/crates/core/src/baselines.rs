//! Comparison systems: popularity, matrix factorization, and the two
//! embedding-aggregation baselines (centroid and short/long item means).

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Interaction, SplitDataset};
use crate::embedder::EmbeddingVector;
use crate::error::{check_dim, Error, Result};
use crate::scorer::{fit, sigmoid, LabeledPair, PairIndex, PairModel, TrainConfig, TrainLog};

/// Item scores are train interaction counts.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PopularityModel {
    pub counts: BTreeMap<String, u64>,
}

impl PopularityModel {
    /// Counts interactions in the train slices only.
    pub fn from_splits(splits: &SplitDataset) -> Result<Self> {
        let mut counts = BTreeMap::new();
        for split in splits.iter() {
            for ev in &split.train {
                *counts.entry(ev.item_id.clone()).or_insert(0) += 1;
            }
        }
        if counts.is_empty() {
            return Err(Error::invalid(
                "popularity needs at least one train interaction",
            ));
        }
        Ok(PopularityModel { counts })
    }

    pub fn score(&self, item_id: &str) -> f64 {
        self.counts.get(item_id).copied().unwrap_or(0) as f64
    }

    /// Items with a nonzero count, by count descending then id ascending.
    pub fn ranking(&self) -> Vec<&str> {
        let mut items: Vec<(&str, u64)> =
            self.counts.iter().map(|(k, v)| (k.as_str(), *v)).collect();
        items.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        items.into_iter().map(|(k, _)| k).collect()
    }
}

/// Half-width of the uniform factor initialization.
pub const MF_INIT_SCALE: f64 = 0.01;

/// `ŷ = σ(P_u · Q_i)` over row-major factor matrices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MfModel {
    pub users: Vec<String>,
    pub items: Vec<String>,
    pub factors: usize,
    pub p: Vec<f64>,
    pub q: Vec<f64>,
}

impl MfModel {
    pub fn init(users: Vec<String>, items: Vec<String>, factors: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |n: usize| -> Vec<f64> {
            (0..n)
                .map(|_| rng.gen_range(-MF_INIT_SCALE..=MF_INIT_SCALE))
                .collect()
        };
        let p = draw(users.len() * factors);
        let q = draw(items.len() * factors);
        MfModel {
            users,
            items,
            factors,
            p,
            q,
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_dim(self.users.len() * self.factors, self.p.len())?;
        check_dim(self.items.len() * self.factors, self.q.len())
    }

    fn user_row(&self, u: usize) -> &[f64] {
        &self.p[u * self.factors..(u + 1) * self.factors]
    }

    fn item_row(&self, i: usize) -> &[f64] {
        &self.q[i * self.factors..(i + 1) * self.factors]
    }

    pub fn score_index(&self, u: usize, i: usize) -> f64 {
        sigmoid(crate::embedder::dot(self.user_row(u), self.item_row(i)))
    }

    pub fn score(&self, user_id: &str, item_id: &str) -> Result<f64> {
        let u = self
            .users
            .iter()
            .position(|x| x == user_id)
            .ok_or_else(|| Error::invalid(format!("unknown user {user_id}")))?;
        let i = self
            .items
            .iter()
            .position(|x| x == item_id)
            .ok_or_else(|| Error::UnknownItem(item_id.to_string()))?;
        Ok(self.score_index(u, i))
    }
}

impl PairModel for MfModel {
    fn param_blocks(&self) -> Vec<&[f64]> {
        vec![&self.p, &self.q]
    }

    fn param_blocks_mut(&mut self) -> Vec<&mut [f64]> {
        vec![&mut self.p, &mut self.q]
    }

    fn predict(&self, user: usize, item: usize) -> f64 {
        self.score_index(user, item)
    }

    fn accumulate(
        &self,
        pair: LabeledPair,
        scale: f64,
        _rng: &mut ChaCha8Rng,
        grads: &mut [Vec<f64>],
    ) -> f64 {
        let pred = self.score_index(pair.user, pair.item);
        let g = scale * (pred - pair.label);
        let k = self.factors;
        let (gp, gq) = grads.split_at_mut(1);
        let urow = &mut gp[0][pair.user * k..(pair.user + 1) * k];
        for (acc, q) in urow.iter_mut().zip(self.item_row(pair.item)) {
            *acc += g * q;
        }
        let irow = &mut gq[0][pair.item * k..(pair.item + 1) * k];
        for (acc, p) in irow.iter_mut().zip(self.user_row(pair.user)) {
            *acc += g * p;
        }
        pred
    }
}

/// Trains MF with the same objective, sampling and stopping rule as the
/// neural scorers.
pub fn mf_train(
    index: &PairIndex,
    splits: &SplitDataset,
    factors: usize,
    config: &TrainConfig,
) -> Result<(MfModel, TrainLog)> {
    if factors == 0 {
        return Err(Error::Config("MF needs at least one latent factor".into()));
    }
    let data = index.pair_data(splits, config.negatives_per_positive, config.seed)?;
    let mut model = MfModel::init(
        index.users.clone(),
        index.items.clone(),
        factors,
        config.seed,
    );
    let log = fit(&mut model, &data, config)?;
    Ok((model, log))
}

fn mean_of<'a>(vectors: impl IntoIterator<Item = &'a EmbeddingVector>) -> Result<EmbeddingVector> {
    let mut acc: Option<Vec<f64>> = None;
    let mut n = 0usize;
    for v in vectors {
        match &mut acc {
            None => acc = Some(v.0.clone()),
            Some(a) => {
                check_dim(a.len(), v.dim())?;
                a.iter_mut().zip(&v.0).for_each(|(x, y)| *x += y);
            }
        }
        n += 1;
    }
    let acc = acc.ok_or_else(|| Error::invalid("mean of an empty embedding set"))?;
    Ok(EmbeddingVector(
        acc.into_iter().map(|x| x / n as f64).collect(),
    ))
}

fn lookup<'a>(
    item_id: &str,
    items: &'a BTreeMap<String, EmbeddingVector>,
) -> Result<&'a EmbeddingVector> {
    items
        .get(item_id)
        .ok_or_else(|| Error::MissingEmbedding(format!("item {item_id}")))
}

/// Componentwise mean of the train items' embeddings.
pub fn centric_user_embedding(
    train: &[Interaction],
    items: &BTreeMap<String, EmbeddingVector>,
) -> Result<EmbeddingVector> {
    let vectors = train
        .iter()
        .map(|ev| lookup(&ev.item_id, items))
        .collect::<Result<Vec<_>>>()?;
    mean_of(vectors)
}

/// `(mean of the last min(n_recent, n) train items, mean of all train items)`.
/// `train` must be in chronological order.
pub fn tempfusion_user_embeddings(
    train: &[Interaction],
    items: &BTreeMap<String, EmbeddingVector>,
    n_recent: usize,
) -> Result<(EmbeddingVector, EmbeddingVector)> {
    if n_recent == 0 {
        return Err(Error::Config("n_recent must be positive".into()));
    }
    let vectors = train
        .iter()
        .map(|ev| lookup(&ev.item_id, items))
        .collect::<Result<Vec<_>>>()?;
    let start = vectors.len().saturating_sub(n_recent);
    let short = mean_of(vectors[start..].iter().copied())?;
    let long = mean_of(vectors)?;
    Ok((short, long))
}
