use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Fully connected layer, weights stored row-major as `out_dim × in_dim`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Dense {
            in_dim,
            out_dim,
            weights: vec![0.0; in_dim * out_dim],
            bias: vec![0.0; out_dim],
        }
    }

    /// Glorot-uniform weights, zero bias.
    pub fn glorot<R: Rng>(in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        let limit = (6.0 / (in_dim + out_dim) as f64).sqrt();
        Dense {
            in_dim,
            out_dim,
            weights: (0..in_dim * out_dim)
                .map(|_| rng.gen_range(-limit..=limit))
                .collect(),
            bias: vec![0.0; out_dim],
        }
    }

    fn row(&self, r: usize) -> &[f64] {
        &self.weights[r * self.in_dim..(r + 1) * self.in_dim]
    }

    fn apply(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(
            (0..self.out_dim)
                .map(|r| self.bias[r] + self.row(r).iter().zip(x).map(|(w, v)| w * v).sum::<f64>()),
        );
    }

    fn consistent(&self) -> bool {
        self.weights.len() == self.in_dim * self.out_dim && self.bias.len() == self.out_dim
    }
}

/// Shape of the scoring MLP.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadConfig {
    /// Widths of the ReLU hidden layers.
    pub hidden: Vec<usize>,
    pub dropout: f64,
}

impl Default for HeadConfig {
    fn default() -> Self {
        HeadConfig {
            hidden: vec![128],
            dropout: 0.2,
        }
    }
}

/// `ŷ = σ(W_L · ReLU(… ReLU(W_1 [e_u; e_i] + b_1) …) + b_L)` with inverted
/// dropout on every hidden layer in train mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpHead {
    pub layers: Vec<Dense>,
    pub dropout: f64,
}

/// Intermediate values of a forward pass above the first layer's
/// pre-activation `a1`.
#[derive(Debug, Clone)]
pub struct UpperTrace {
    /// Input to each layer after the first.
    inputs: Vec<Vec<f64>>,
    /// Per hidden layer and unit: 0 for inactive or dropped units, the
    /// dropout scale otherwise.
    gates: Vec<Vec<f64>>,
    pub logit: f64,
}

/// Intermediate values of one forward pass.
#[derive(Debug, Clone)]
pub struct Trace {
    /// `[e_u; e_i]`.
    input: Vec<f64>,
    pub upper: UpperTrace,
}

impl Trace {
    pub fn logit(&self) -> f64 {
        self.upper.logit
    }
}

impl MlpHead {
    pub fn init<R: Rng>(input_dim: usize, config: &HeadConfig, rng: &mut R) -> Self {
        let mut layers = Vec::with_capacity(config.hidden.len() + 1);
        let mut fan_in = input_dim;
        for &width in &config.hidden {
            layers.push(Dense::glorot(fan_in, width, rng));
            fan_in = width;
        }
        layers.push(Dense::glorot(fan_in, 1, rng));
        MlpHead {
            layers,
            dropout: config.dropout,
        }
    }

    pub fn zeros(input_dim: usize, config: &HeadConfig) -> Self {
        let mut layers = Vec::new();
        let mut fan_in = input_dim;
        for &width in &config.hidden {
            layers.push(Dense::zeros(fan_in, width));
            fan_in = width;
        }
        layers.push(Dense::zeros(fan_in, 1));
        MlpHead {
            layers,
            dropout: config.dropout,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::invalid("MLP without layers"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::invalid(format!(
                "dropout {} outside [0, 1)",
                self.dropout
            )));
        }
        let mut fan_in = self.input_dim();
        for layer in &self.layers {
            if !layer.consistent() {
                return Err(Error::invalid("MLP layer buffers do not match their shape"));
            }
            check_dim(fan_in, layer.in_dim)?;
            fan_in = layer.out_dim;
        }
        check_dim(1, fan_in)
    }

    pub fn param_blocks(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weights.as_slice(), l.bias.as_slice()])
            .collect()
    }

    pub fn param_blocks_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weights.as_mut_slice(), l.bias.as_mut_slice()])
            .collect()
    }

    fn concat(&self, e_u: &[f64], e_i: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.input_dim(), e_u.len() + e_i.len())?;
        let mut x = Vec::with_capacity(e_u.len() + e_i.len());
        x.extend_from_slice(e_u);
        x.extend_from_slice(e_i);
        Ok(x)
    }

    /// `W1 · x + b1`.
    pub fn first_preactivation(&self, x: &[f64]) -> Vec<f64> {
        let mut a = Vec::new();
        self.layers[0].apply(x, &mut a);
        a
    }

    /// `W1[:, range] · v`, the contribution of one slice of the input to the
    /// first layer, without bias.
    pub fn first_projection(&self, offset: usize, v: &[f64]) -> Vec<f64> {
        let l = &self.layers[0];
        (0..l.out_dim)
            .map(|r| {
                l.row(r)[offset..offset + v.len()]
                    .iter()
                    .zip(v)
                    .map(|(w, x)| w * x)
                    .sum()
            })
            .collect()
    }

    pub fn first_bias(&self) -> &[f64] {
        &self.layers[0].bias
    }

    /// Continues a forward pass from the first layer's pre-activation. With
    /// `rng`, hidden units are dropped with probability `dropout` and
    /// survivors scaled by `1 / (1 - dropout)`.
    pub fn forward_upper<R: Rng>(&self, a1: Vec<f64>, mut rng: Option<&mut R>) -> UpperTrace {
        let n = self.layers.len();
        let keep_scale = 1.0 / (1.0 - self.dropout);
        let mut inputs = Vec::with_capacity(n - 1);
        let mut gates = Vec::with_capacity(n - 1);
        let mut a = a1;
        for l in 0..n - 1 {
            let mut gate = Vec::with_capacity(a.len());
            for v in a.iter_mut() {
                let mut g = if *v > 0.0 { 1.0 } else { 0.0 };
                if let Some(r) = rng.as_deref_mut() {
                    if self.dropout > 0.0 {
                        g *= if r.gen::<f64>() < self.dropout {
                            0.0
                        } else {
                            keep_scale
                        };
                    }
                }
                *v *= g;
                gate.push(g);
            }
            gates.push(gate);
            let mut next = Vec::new();
            self.layers[l + 1].apply(&a, &mut next);
            inputs.push(a);
            a = next;
        }
        UpperTrace {
            inputs,
            gates,
            logit: a[0],
        }
    }

    /// Backprop of `grad_logit` through every layer after the first,
    /// accumulating their gradients into `grads` (laid out as
    /// [`param_blocks`](Self::param_blocks)). Returns the gradient with
    /// respect to the first layer's pre-activation.
    pub fn backward_upper(
        &self,
        trace: &UpperTrace,
        grad_logit: f64,
        grads: &mut [Vec<f64>],
    ) -> Vec<f64> {
        let n = self.layers.len();
        let mut upstream = vec![grad_logit];
        for l in (1..n).rev() {
            let layer = &self.layers[l];
            let x = &trace.inputs[l - 1];
            if l < n - 1 {
                for (u, g) in upstream.iter_mut().zip(&trace.gates[l]) {
                    *u *= g;
                }
            }
            accumulate_dense(layer, &upstream, x, &mut grads[2 * l..2 * l + 2]);
            let mut down = vec![0.0; layer.in_dim];
            for (r, &u) in upstream.iter().enumerate() {
                if u != 0.0 {
                    for (d, w) in down.iter_mut().zip(layer.row(r)) {
                        *d += u * w;
                    }
                }
            }
            upstream = down;
        }
        if n > 1 {
            for (u, g) in upstream.iter_mut().zip(&trace.gates[0]) {
                *u *= g;
            }
        }
        upstream
    }

    /// Forward pass recording what backprop needs; see
    /// [`forward_upper`](Self::forward_upper) for the dropout rule.
    pub fn forward_trace<R: Rng>(
        &self,
        e_u: &[f64],
        e_i: &[f64],
        rng: Option<&mut R>,
    ) -> Result<Trace> {
        let input = self.concat(e_u, e_i)?;
        let upper = self.forward_upper(self.first_preactivation(&input), rng);
        Ok(Trace { input, upper })
    }

    /// Eval-mode probability.
    pub fn predict(&self, e_u: &[f64], e_i: &[f64]) -> Result<f64> {
        Ok(sigmoid(
            self.forward_trace::<rand_chacha::ChaCha8Rng>(e_u, e_i, None)?
                .logit(),
        ))
    }

    /// Train-mode probability when `rng` is given, eval-mode otherwise.
    pub fn forward<R: Rng>(&self, e_u: &[f64], e_i: &[f64], rng: Option<&mut R>) -> Result<f64> {
        Ok(sigmoid(self.forward_trace(e_u, e_i, rng)?.logit()))
    }

    /// Adds `grad_logit · ∂logit/∂θ` into `grads` (laid out as
    /// [`param_blocks`](Self::param_blocks)). Returns `∂logit/∂[e_u; e_i]`
    /// scaled by `grad_logit` when `want_input` is set.
    pub fn backward(
        &self,
        trace: &Trace,
        grad_logit: f64,
        grads: &mut [Vec<f64>],
        want_input: bool,
    ) -> Option<Vec<f64>> {
        let g_a1 = self.backward_upper(&trace.upper, grad_logit, grads);
        let first = &self.layers[0];
        accumulate_dense(first, &g_a1, &trace.input, &mut grads[0..2]);
        want_input.then(|| {
            let mut down = vec![0.0; first.in_dim];
            for (r, &u) in g_a1.iter().enumerate() {
                if u != 0.0 {
                    for (d, w) in down.iter_mut().zip(first.row(r)) {
                        *d += u * w;
                    }
                }
            }
            down
        })
    }
}

/// `dW += g ⊗ x`, `db += g` for one layer; `grads` holds `[dW, db]`.
fn accumulate_dense(layer: &Dense, g: &[f64], x: &[f64], grads: &mut [Vec<f64>]) {
    let (gw, gb) = grads.split_at_mut(1);
    for (r, &u) in g.iter().enumerate() {
        if u == 0.0 {
            continue;
        }
        gb[0][r] += u;
        let row = &mut gw[0][r * layer.in_dim..(r + 1) * layer.in_dim];
        for (acc, v) in row.iter_mut().zip(x) {
            *acc += u * v;
        }
    }
}

/// `σ(e_u · e_i)`.
pub fn dot_score(e_u: &[f64], e_i: &[f64]) -> Result<f64> {
    check_dim(e_u.len(), e_i.len())?;
    Ok(sigmoid(crate::embedder::dot(e_u, e_i)))
}
