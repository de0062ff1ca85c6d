use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::mlp::{sigmoid, HeadConfig, MlpHead};
use super::train::{example_rng, LabeledPair, PairModel};
use crate::embedder::{dot, EmbeddingVector};
use crate::error::{check_dim, Error, Result};
use crate::fusion::FusionLayer;

/// The user-side input of a neural scorer.
#[derive(Debug, Clone, PartialEq)]
pub enum UserInput {
    /// Short- and long-term vectors, combined by a fusion layer.
    Pair {
        short: EmbeddingVector,
        long: EmbeddingVector,
    },
    /// A single vector used directly as `e_u`.
    Single(EmbeddingVector),
}

impl UserInput {
    pub fn dim(&self) -> usize {
        match self {
            UserInput::Pair { short, .. } => short.dim(),
            UserInput::Single(v) => v.dim(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeadKind {
    Mlp,
    Dot,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Head {
    Mlp(MlpHead),
    Dot,
}

/// Optional fusion layer followed by a scoring head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeuralModel {
    pub dim: usize,
    pub fusion: Option<FusionLayer>,
    pub head: Head,
}

impl NeuralModel {
    pub fn init(dim: usize, fused: bool, head: HeadKind, config: &HeadConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let fusion = fused.then(|| FusionLayer::init(dim, &mut rng));
        let head = match head {
            HeadKind::Mlp => Head::Mlp(MlpHead::init(2 * dim, config, &mut rng)),
            HeadKind::Dot => Head::Dot,
        };
        NeuralModel { dim, fusion, head }
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(f) = &self.fusion {
            check_dim(self.dim, f.dim())?;
        }
        match &self.head {
            Head::Mlp(h) => {
                h.validate()?;
                check_dim(2 * self.dim, h.input_dim())
            }
            Head::Dot => Ok(()),
        }
    }

    pub fn param_blocks(&self) -> Vec<&[f64]> {
        let mut blocks: Vec<&[f64]> = self.fusion.iter().map(|f| f.w_a.as_slice()).collect();
        if let Head::Mlp(h) = &self.head {
            blocks.extend(h.param_blocks());
        }
        blocks
    }

    pub fn param_blocks_mut(&mut self) -> Vec<&mut [f64]> {
        let mut blocks: Vec<&mut [f64]> = self
            .fusion
            .iter_mut()
            .map(|f| f.w_a.as_mut_slice())
            .collect();
        if let Head::Mlp(h) = &mut self.head {
            blocks.extend(h.param_blocks_mut());
        }
        blocks
    }

    /// `e_u` for the given input; fails if the input shape does not match
    /// the presence of a fusion layer.
    pub fn user_vector(&self, input: &UserInput) -> Result<EmbeddingVector> {
        check_dim(self.dim, input.dim())?;
        match (&self.fusion, input) {
            (Some(f), UserInput::Pair { short, long }) => Ok(f.forward(&short.0, &long.0)?.e_u),
            (None, UserInput::Single(v)) => Ok(v.clone()),
            (Some(_), UserInput::Single(_)) => Err(Error::invalid(
                "fusion model needs short- and long-term vectors",
            )),
            (None, UserInput::Pair { .. }) => Err(Error::invalid(
                "model without fusion takes a single user vector",
            )),
        }
    }

    /// The user's contribution to the head input: `W1[:, :d] · e_u + b1` for
    /// the MLP, `e_u` itself for the dot head.
    pub fn user_side(&self, e_u: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim, e_u.len())?;
        Ok(match &self.head {
            Head::Mlp(h) => {
                let mut v = h.first_projection(0, e_u);
                v.iter_mut().zip(h.first_bias()).for_each(|(x, b)| *x += b);
                v
            }
            Head::Dot => e_u.to_vec(),
        })
    }

    /// The item's contribution: `W1[:, d:] · e_i` for the MLP, `e_i` for the
    /// dot head.
    pub fn item_side(&self, e_i: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim, e_i.len())?;
        Ok(match &self.head {
            Head::Mlp(h) => h.first_projection(self.dim, e_i),
            Head::Dot => e_i.to_vec(),
        })
    }

    /// Eval-mode probability from precomputed user and item sides.
    pub fn score_sides(&self, user: &[f64], item: &[f64]) -> f64 {
        match &self.head {
            Head::Mlp(h) => {
                let a1 = user.iter().zip(item).map(|(u, i)| u + i).collect();
                sigmoid(h.forward_upper::<ChaCha8Rng>(a1, None).logit)
            }
            Head::Dot => sigmoid(dot(user, item)),
        }
    }

    /// Eval-mode probability from an already computed `e_u`.
    pub fn score_vector(&self, e_u: &[f64], e_i: &[f64]) -> Result<f64> {
        Ok(self.score_sides(&self.user_side(e_u)?, &self.item_side(e_i)?))
    }

    pub fn score(&self, input: &UserInput, e_i: &EmbeddingVector) -> Result<f64> {
        self.score_vector(&self.user_vector(input)?.0, &e_i.0)
    }

    /// Train-mode forward and backward for one example, adding
    /// `grad_logit · ∂logit/∂θ` into `grads`. Returns the prediction.
    pub fn accumulate_example(
        &self,
        input: &UserInput,
        e_i: &[f64],
        label: f64,
        scale: f64,
        rng: Option<&mut ChaCha8Rng>,
        grads: &mut [Vec<f64>],
    ) -> Result<f64> {
        let e_u = self.user_vector(input)?;
        let fused = self.fusion.is_some();
        let head_grads = if fused {
            &mut grads[1..]
        } else {
            &mut grads[..]
        };
        let (pred, grad_e_u) = match &self.head {
            Head::Mlp(h) => {
                let trace = h.forward_trace(&e_u.0, e_i, rng)?;
                let pred = sigmoid(trace.logit());
                let g = scale * (pred - label);
                let input_grad = h.backward(&trace, g, head_grads, fused);
                (
                    pred,
                    input_grad.map(|mut v| {
                        v.truncate(self.dim);
                        v
                    }),
                )
            }
            Head::Dot => {
                check_dim(self.dim, e_i.len())?;
                let pred = sigmoid(dot(&e_u.0, e_i));
                let g = scale * (pred - label);
                (pred, Some(e_i.iter().map(|v| g * v).collect()))
            }
        };
        if let (Some(f), UserInput::Pair { short, long }) = (&self.fusion, input) {
            let grad_e_u = grad_e_u.expect("input gradient requested for fused model");
            let fg = f.backward(&short.0, &long.0, &grad_e_u)?;
            for (acc, g) in grads[0].iter_mut().zip(&fg.w_a) {
                *acc += g;
            }
        }
        Ok(pred)
    }
}

/// A neural model bound to indexed user inputs and item embeddings.
pub struct BoundNeural<'a> {
    pub model: NeuralModel,
    pub users: &'a [UserInput],
    pub items: &'a [EmbeddingVector],
}

impl<'a> BoundNeural<'a> {
    pub fn new(
        model: NeuralModel,
        users: &'a [UserInput],
        items: &'a [EmbeddingVector],
    ) -> Result<Self> {
        model.validate()?;
        for u in users {
            check_dim(model.dim, u.dim())?;
            let matches = matches!(
                (&model.fusion, u),
                (Some(_), UserInput::Pair { .. }) | (None, UserInput::Single(_))
            );
            if !matches {
                return Err(Error::invalid("user inputs do not match the model wiring"));
            }
        }
        for i in items {
            check_dim(model.dim, i.dim())?;
        }
        Ok(BoundNeural {
            model,
            users,
            items,
        })
    }
}

/// Distinct values of `keys` in ascending order, and each key's slot.
fn slots(keys: impl Iterator<Item = usize>) -> (Vec<usize>, BTreeMap<usize, usize>) {
    let distinct: Vec<usize> = keys
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();
    let pos = distinct.iter().enumerate().map(|(s, &k)| (k, s)).collect();
    (distinct, pos)
}

impl BoundNeural<'_> {
    fn user_vectors(&self, users: &[usize]) -> Vec<EmbeddingVector> {
        users
            .iter()
            .map(|&u| {
                self.model
                    .user_vector(&self.users[u])
                    .expect("dimensions validated at bind time")
            })
            .collect()
    }

    /// Batch gradient with the first layer factored into per-user and
    /// per-item projections, each computed once per batch. Dropout masks
    /// match [`chunked_gradient`](super::chunked_gradient) example for example.
    fn factored_gradient(
        &self,
        batch: &[LabeledPair],
        batch_seed: u64,
    ) -> (Vec<Vec<f64>>, Vec<f64>) {
        let d = self.model.dim;
        let scale = 1.0 / batch.len() as f64;
        let mut grads = self.zero_grads();
        let offset = usize::from(self.model.fusion.is_some());
        let (user_ids, user_slot) = slots(batch.iter().map(|p| p.user));
        let (item_ids, item_slot) = slots(batch.iter().map(|p| p.item));
        let e_u = self.user_vectors(&user_ids);
        let mut grad_e_u = vec![vec![0.0; d]; user_ids.len()];
        let mut preds = Vec::with_capacity(batch.len());
        match &self.model.head {
            Head::Mlp(h) => {
                let user_side: Vec<Vec<f64>> = e_u
                    .iter()
                    .map(|e| self.model.user_side(&e.0).unwrap())
                    .collect();
                let item_side: Vec<Vec<f64>> = item_ids
                    .iter()
                    .map(|&i| self.model.item_side(&self.items[i].0).unwrap())
                    .collect();
                let width = h.layers[0].out_dim;
                let mut g_user = vec![vec![0.0; width]; user_ids.len()];
                let mut g_item = vec![vec![0.0; width]; item_ids.len()];
                for (j, pair) in batch.iter().enumerate() {
                    let (us, is) = (user_slot[&pair.user], item_slot[&pair.item]);
                    let a1 = user_side[us]
                        .iter()
                        .zip(&item_side[is])
                        .map(|(u, i)| u + i)
                        .collect();
                    let mut rng = example_rng(batch_seed, j);
                    let trace = h.forward_upper(a1, Some(&mut rng));
                    let pred = sigmoid(trace.logit);
                    let g_a1 =
                        h.backward_upper(&trace, scale * (pred - pair.label), &mut grads[offset..]);
                    for (r, &g) in g_a1.iter().enumerate() {
                        g_user[us][r] += g;
                        g_item[is][r] += g;
                        grads[offset + 1][r] += g;
                    }
                    preds.push(pred);
                }
                let first = &h.layers[0];
                let gw = &mut grads[offset];
                for (us, ga) in g_user.iter().enumerate() {
                    for (r, &g) in ga.iter().enumerate() {
                        if g == 0.0 {
                            continue;
                        }
                        let base = r * first.in_dim;
                        for (acc, x) in gw[base..base + d].iter_mut().zip(&e_u[us].0) {
                            *acc += g * x;
                        }
                        for (acc, w) in grad_e_u[us].iter_mut().zip(&first.weights[base..base + d])
                        {
                            *acc += g * w;
                        }
                    }
                }
                for (is, ga) in g_item.iter().enumerate() {
                    let e_i = &self.items[item_ids[is]].0;
                    for (r, &g) in ga.iter().enumerate() {
                        if g == 0.0 {
                            continue;
                        }
                        let base = r * first.in_dim + d;
                        for (acc, x) in gw[base..base + d].iter_mut().zip(e_i) {
                            *acc += g * x;
                        }
                    }
                }
            }
            Head::Dot => {
                for pair in batch {
                    let us = user_slot[&pair.user];
                    let e_i = &self.items[pair.item].0;
                    let pred = sigmoid(dot(&e_u[us].0, e_i));
                    let g = scale * (pred - pair.label);
                    for (acc, x) in grad_e_u[us].iter_mut().zip(e_i) {
                        *acc += g * x;
                    }
                    preds.push(pred);
                }
            }
        }
        if let Some(f) = &self.model.fusion {
            for (us, &u) in user_ids.iter().enumerate() {
                if let UserInput::Pair { short, long } = &self.users[u] {
                    let fg = f
                        .backward(&short.0, &long.0, &grad_e_u[us])
                        .expect("validated dims");
                    for (acc, g) in grads[0].iter_mut().zip(&fg.w_a) {
                        *acc += g;
                    }
                }
            }
        }
        (grads, preds)
    }
}

impl PairModel for BoundNeural<'_> {
    fn batch_gradient(&self, batch: &[LabeledPair], batch_seed: u64) -> (Vec<Vec<f64>>, Vec<f64>) {
        self.factored_gradient(batch, batch_seed)
    }

    fn predict_pairs(&self, pairs: &[LabeledPair]) -> Vec<f64> {
        let (user_ids, user_slot) = slots(pairs.iter().map(|p| p.user));
        let (item_ids, item_slot) = slots(pairs.iter().map(|p| p.item));
        let user_side: Vec<Vec<f64>> = self
            .user_vectors(&user_ids)
            .iter()
            .map(|e| self.model.user_side(&e.0).unwrap())
            .collect();
        let item_side: Vec<Vec<f64>> = item_ids
            .iter()
            .map(|&i| self.model.item_side(&self.items[i].0).unwrap())
            .collect();
        pairs
            .iter()
            .map(|p| {
                self.model.score_sides(
                    &user_side[user_slot[&p.user]],
                    &item_side[item_slot[&p.item]],
                )
            })
            .collect()
    }

    fn param_blocks(&self) -> Vec<&[f64]> {
        self.model.param_blocks()
    }

    fn param_blocks_mut(&mut self) -> Vec<&mut [f64]> {
        self.model.param_blocks_mut()
    }

    fn predict(&self, user: usize, item: usize) -> f64 {
        self.model
            .score(&self.users[user], &self.items[item])
            .expect("dimensions validated at bind time")
    }

    fn accumulate(
        &self,
        pair: LabeledPair,
        scale: f64,
        rng: &mut ChaCha8Rng,
        grads: &mut [Vec<f64>],
    ) -> f64 {
        self.model
            .accumulate_example(
                &self.users[pair.user],
                &self.items[pair.item].0,
                pair.label,
                scale,
                Some(rng),
                grads,
            )
            .expect("dimensions validated at bind time")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scorer::train::bce_loss;
    use crate::testing::relative_error;
    use rand::Rng;

    fn rand_vec(rng: &mut ChaCha8Rng, d: usize) -> EmbeddingVector {
        EmbeddingVector((0..d).map(|_| rng.gen_range(-1.0..1.0)).collect())
    }

    fn loss(model: &NeuralModel, input: &UserInput, item: &EmbeddingVector, y: f64) -> f64 {
        bce_loss(&[model.score(input, item).unwrap()], &[y]).unwrap()
    }

    /// Central differences of the BCE objective over every parameter of the
    /// fused MLP model, against backprop with dropout disabled.
    #[test]
    fn full_model_gradient_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let h = 1e-5;
        for instance in 0..50 {
            let d = rng.gen_range(2..=6);
            let cfg = HeadConfig {
                hidden: vec![rng.gen_range(2..=8)],
                dropout: 0.0,
            };
            let model = NeuralModel::init(d, true, HeadKind::Mlp, &cfg, instance);
            let input = UserInput::Pair {
                short: rand_vec(&mut rng, d),
                long: rand_vec(&mut rng, d),
            };
            let item = rand_vec(&mut rng, d);
            let y = f64::from(rng.gen_range(0..2u8));
            let mut grads: Vec<Vec<f64>> = model
                .param_blocks()
                .iter()
                .map(|b| vec![0.0; b.len()])
                .collect();
            model
                .accumulate_example(&input, &item.0, y, 1.0, None, &mut grads)
                .unwrap();
            for (block, analytic) in grads.iter().enumerate() {
                let numeric: Vec<f64> = (0..analytic.len())
                    .map(|j| {
                        let mut plus = model.clone();
                        plus.param_blocks_mut()[block][j] += h;
                        let mut minus = model.clone();
                        minus.param_blocks_mut()[block][j] -= h;
                        (loss(&plus, &input, &item, y) - loss(&minus, &input, &item, y)) / (2.0 * h)
                    })
                    .collect();
                let err = relative_error(analytic, &numeric);
                assert!(err < 1e-4, "instance {instance} block {block}: {err}");
            }
        }
    }

    #[test]
    fn dot_head_gradient_reaches_fusion_only() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let model = NeuralModel::init(4, true, HeadKind::Dot, &HeadConfig::default(), 1);
        assert_eq!(model.param_blocks().len(), 1);
        let input = UserInput::Pair {
            short: rand_vec(&mut rng, 4),
            long: rand_vec(&mut rng, 4),
        };
        let item = rand_vec(&mut rng, 4);
        let mut grads = vec![vec![0.0; 4]];
        model
            .accumulate_example(&input, &item.0, 1.0, 1.0, None, &mut grads)
            .unwrap();
        let h = 1e-6;
        let numeric: Vec<f64> = (0..4)
            .map(|j| {
                let mut p = model.clone();
                p.fusion.as_mut().unwrap().w_a[j] += h;
                let mut m = model.clone();
                m.fusion.as_mut().unwrap().w_a[j] -= h;
                (loss(&p, &input, &item, 1.0) - loss(&m, &input, &item, 1.0)) / (2.0 * h)
            })
            .collect();
        assert!(relative_error(&grads[0], &numeric) < 1e-4);
    }

    #[test]
    fn factored_batch_matches_per_example_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let d = 5;
        let cfg = HeadConfig {
            hidden: vec![7, 3],
            dropout: 0.3,
        };
        for (fused, head) in [
            (true, HeadKind::Mlp),
            (false, HeadKind::Mlp),
            (true, HeadKind::Dot),
        ] {
            let users: Vec<UserInput> = (0..4)
                .map(|_| {
                    if fused {
                        UserInput::Pair {
                            short: rand_vec(&mut rng, d),
                            long: rand_vec(&mut rng, d),
                        }
                    } else {
                        UserInput::Single(rand_vec(&mut rng, d))
                    }
                })
                .collect();
            let items: Vec<EmbeddingVector> = (0..6).map(|_| rand_vec(&mut rng, d)).collect();
            let batch: Vec<LabeledPair> = (0..40)
                .map(|_| LabeledPair {
                    user: rng.gen_range(0..4),
                    item: rng.gen_range(0..6),
                    label: f64::from(rng.gen_range(0..2u8)),
                })
                .collect();
            let model = NeuralModel::init(d, fused, head, &cfg, 2);
            let bound = BoundNeural::new(model, &users, &items).unwrap();
            let (fast, fast_preds) = bound.batch_gradient(&batch, 99);
            let (slow, slow_preds) = crate::scorer::chunked_gradient(&bound, &batch, 99);
            for (a, b) in fast_preds.iter().zip(&slow_preds) {
                assert!((a - b).abs() < 1e-12);
            }
            for (a, b) in fast.iter().zip(&slow) {
                assert!(relative_error(a, b) < 1e-10);
            }
            let pairs = bound.predict_pairs(&batch);
            for (p, pair) in pairs.iter().zip(&batch) {
                assert!((p - bound.predict(pair.user, pair.item)).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn wiring_mismatch_rejected() {
        let fused = NeuralModel::init(3, true, HeadKind::Mlp, &HeadConfig::default(), 0);
        let single = UserInput::Single(EmbeddingVector(vec![0.0; 3]));
        assert!(fused.user_vector(&single).is_err());
        let plain = NeuralModel::init(3, false, HeadKind::Mlp, &HeadConfig::default(), 0);
        assert!(plain.user_vector(&single).is_ok());
        let items = [EmbeddingVector(vec![0.0; 3])];
        let users = [single];
        assert!(BoundNeural::new(fused, &users, &items).is_err());
    }

    #[test]
    fn init_is_seeded() {
        let a = NeuralModel::init(5, true, HeadKind::Mlp, &HeadConfig::default(), 3);
        let b = NeuralModel::init(5, true, HeadKind::Mlp, &HeadConfig::default(), 3);
        let c = NeuralModel::init(5, true, HeadKind::Mlp, &HeadConfig::default(), 4);
        assert_eq!(a, b);
        assert_ne!(a, c);
        if let Head::Mlp(h) = &a.head {
            let limit = (6.0f64 / (10 + 128) as f64).sqrt();
            assert!(h.layers[0].weights.iter().all(|w| w.abs() <= limit));
            assert!(h.layers[0].bias.iter().all(|b| *b == 0.0));
        }
    }
}
