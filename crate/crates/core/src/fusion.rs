//! Two-way attention over the short- and long-term profile embeddings.
//!
//! With logits `z_s = w·r_short` and `z_l = w·r_long`,
//! `α_short = exp(z_s) / (exp(z_s) + exp(z_l))`, `α_long = 1 − α_short`, and
//! the fused user vector is `e_u = α_short·r_short + α_long·r_long`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::embedder::{dot, EmbeddingVector};
use crate::error::{check_dim, Result};

/// Half-width of the uniform initialization interval for `w`.
pub const INIT_SCALE: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionLayer {
    pub w_a: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttentionWeights {
    pub short: f64,
    pub long: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusedUser {
    pub e_u: EmbeddingVector,
    pub alpha_short: f64,
    pub alpha_long: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionGradients {
    pub w_a: Vec<f64>,
    pub r_short: Vec<f64>,
    pub r_long: Vec<f64>,
}

/// Attention weights are clamped to `[MIN_ALPHA, 1 - MIN_ALPHA]`, so both
/// stay strictly inside (0, 1) and still sum to exactly 1 when the logit gap
/// saturates the softmax.
pub const MIN_ALPHA: f64 = f64::EPSILON / 2.0;

/// First component of a two-way softmax, evaluated after subtracting the
/// larger logit.
pub fn softmax_pair(first: f64, second: f64) -> f64 {
    let m = first.max(second);
    let (a, b) = ((first - m).exp(), (second - m).exp());
    a / (a + b)
}

impl FusionLayer {
    pub fn new(w_a: Vec<f64>) -> Self {
        FusionLayer { w_a }
    }

    pub fn zeros(dim: usize) -> Self {
        FusionLayer {
            w_a: vec![0.0; dim],
        }
    }

    /// Uniform in `[-INIT_SCALE, INIT_SCALE]`.
    pub fn init<R: Rng>(dim: usize, rng: &mut R) -> Self {
        FusionLayer {
            w_a: (0..dim)
                .map(|_| rng.gen_range(-INIT_SCALE..=INIT_SCALE))
                .collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.w_a.len()
    }

    pub fn attention_weights(&self, r_short: &[f64], r_long: &[f64]) -> Result<AttentionWeights> {
        check_dim(self.dim(), r_short.len())?;
        check_dim(self.dim(), r_long.len())?;
        let short = softmax_pair(dot(&self.w_a, r_short), dot(&self.w_a, r_long))
            .clamp(MIN_ALPHA, 1.0 - MIN_ALPHA);
        Ok(AttentionWeights {
            short,
            long: 1.0 - short,
        })
    }

    pub fn forward(&self, r_short: &[f64], r_long: &[f64]) -> Result<FusedUser> {
        let alphas = self.attention_weights(r_short, r_long)?;
        let e_u = fuse(alphas, r_short, r_long)?;
        Ok(FusedUser {
            e_u,
            alpha_short: alphas.short,
            alpha_long: alphas.long,
        })
    }

    /// Gradients of a scalar objective with respect to `w`, `r_short` and
    /// `r_long`, given its gradient `grad_e_u` with respect to the fused vector.
    pub fn backward(
        &self,
        r_short: &[f64],
        r_long: &[f64],
        grad_e_u: &[f64],
    ) -> Result<FusionGradients> {
        check_dim(self.dim(), grad_e_u.len())?;
        let alpha = self.attention_weights(r_short, r_long)?.short;
        // e = α s + (1-α) l  ⇒  ∂e/∂α = s - l ;  ∂α/∂(z_s - z_l) = α(1-α)
        let grad_alpha: f64 = grad_e_u
            .iter()
            .zip(r_short.iter().zip(r_long))
            .map(|(g, (s, l))| g * (s - l))
            .sum();
        let grad_logit = grad_alpha * alpha * (1.0 - alpha);
        let w_a = r_short
            .iter()
            .zip(r_long)
            .map(|(s, l)| grad_logit * (s - l))
            .collect();
        let r_short = grad_e_u
            .iter()
            .zip(&self.w_a)
            .map(|(g, w)| alpha * g + grad_logit * w)
            .collect();
        let r_long = grad_e_u
            .iter()
            .zip(&self.w_a)
            .map(|(g, w)| (1.0 - alpha) * g - grad_logit * w)
            .collect();
        Ok(FusionGradients {
            w_a,
            r_short,
            r_long,
        })
    }
}

/// `alphas.short · r_short + alphas.long · r_long`, componentwise.
pub fn fuse(alphas: AttentionWeights, r_short: &[f64], r_long: &[f64]) -> Result<EmbeddingVector> {
    check_dim(r_short.len(), r_long.len())?;
    Ok(EmbeddingVector(
        r_short
            .iter()
            .zip(r_long)
            .map(|(s, l)| alphas.short * s + alphas.long * l)
            .collect(),
    ))
}
