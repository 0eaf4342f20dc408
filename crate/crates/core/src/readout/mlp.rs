//! Two-layer perceptron with analytic gradients.
//!
//! Parameters live in one flat vector laid out as `[w1 | b1 | w2 | b2]`,
//! with `w1` row-major `hidden × input` and a single output unit.

use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    /// Binary cross-entropy on a sigmoid output.
    Classify,
    /// Half squared error on a linear output.
    Regress,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub input: usize,
    pub hidden: usize,
    pub params: Vec<f64>,
}

impl Mlp {
    pub fn n_params(input: usize, hidden: usize) -> usize {
        hidden * input + hidden + hidden + 1
    }

    /// He-uniform first layer, Glorot-uniform output layer, zero biases.
    pub fn new<R: Rng>(input: usize, hidden: usize, rng: &mut R) -> Self {
        let mut params = vec![0.0; Self::n_params(input, hidden)];
        let a1 = (6.0 / input as f64).sqrt();
        for w in &mut params[..hidden * input] {
            *w = rng.random_range(-a1..a1);
        }
        let a2 = (6.0 / (hidden + 1) as f64).sqrt();
        let off = hidden * input + hidden;
        for w in &mut params[off..off + hidden] {
            *w = rng.random_range(-a2..a2);
        }
        Mlp { input, hidden, params }
    }

    fn split(&self) -> (&[f64], &[f64], &[f64], f64) {
        let (w1, rest) = self.params.split_at(self.hidden * self.input);
        let (b1, rest) = rest.split_at(self.hidden);
        let (w2, rest) = rest.split_at(self.hidden);
        (w1, b1, w2, rest[0])
    }

    fn hidden_pre(&self, x: &[f64], pre: &mut [f64]) -> f64 {
        let (w1, b1, w2, b2) = self.split();
        let mut out = b2;
        for j in 0..self.hidden {
            let row = &w1[j * self.input..(j + 1) * self.input];
            let z = b1[j] + dot(row, x);
            pre[j] = z;
            if z > 0.0 {
                out += w2[j] * z;
            }
        }
        out
    }

    /// Raw output: a logit for classification, the prediction for regression.
    pub fn forward(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.input);
        let mut pre = vec![0.0; self.hidden];
        self.hidden_pre(x, &mut pre)
    }

    pub fn loss(&self, xs: &[f64], targets: &[f64], task: Task) -> f64 {
        let mut pre = vec![0.0; self.hidden];
        let n = targets.len();
        xs.chunks_exact(self.input)
            .zip(targets)
            .map(|(x, &t)| sample_loss(self.hidden_pre(x, &mut pre), t, task).0)
            .sum::<f64>()
            / n as f64
    }

    /// Mean loss over the batch. Overwrites `grad` (length `params.len()`)
    /// and, when given, `input_grad` (length `xs.len()`) with the gradient
    /// with respect to each input row.
    pub fn loss_and_grad(
        &self,
        xs: &[f64],
        targets: &[f64],
        task: Task,
        grad: &mut [f64],
        mut input_grad: Option<&mut [f64]>,
    ) -> f64 {
        let (hidden, input) = (self.hidden, self.input);
        let (w1, _, w2, _) = self.split();
        grad.fill(0.0);
        if let Some(g) = input_grad.as_deref_mut() {
            g.fill(0.0);
        }
        let (g_w1, rest) = grad.split_at_mut(hidden * input);
        let (g_b1, rest) = rest.split_at_mut(hidden);
        let (g_w2, g_b2) = rest.split_at_mut(hidden);
        let n = targets.len() as f64;
        let mut pre = vec![0.0; hidden];
        let mut total = 0.0;
        for (i, (x, &t)) in xs.chunks_exact(input).zip(targets).enumerate() {
            let y = self.hidden_pre(x, &mut pre);
            let (l, dy) = sample_loss(y, t, task);
            total += l;
            let g = dy / n;
            g_b2[0] += g;
            for j in 0..hidden {
                let z = pre[j];
                if z <= 0.0 {
                    continue;
                }
                g_w2[j] += g * z;
                let dz = g * w2[j];
                g_b1[j] += dz;
                axpy(dz, x, &mut g_w1[j * input..(j + 1) * input]);
                if let Some(gx) = input_grad.as_deref_mut() {
                    axpy(dz, &w1[j * input..(j + 1) * input], &mut gx[i * input..(i + 1) * input]);
                }
            }
        }
        total / n
    }
}

/// Per-sample loss and its derivative with respect to the raw output.
fn sample_loss(y: f64, t: f64, task: Task) -> (f64, f64) {
    match task {
        Task::Classify => {
            let loss = y.max(0.0) - t * y + (-y.abs()).exp().ln_1p();
            (loss, sigmoid(y) - t)
        }
        Task::Regress => {
            let e = y - t;
            (0.5 * e * e, e)
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub(crate) fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// SGD with heavy-ball momentum and L2 weight decay.
#[derive(Debug, Clone)]
pub struct Momentum {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: Vec<f64>,
}

impl Momentum {
    pub fn new(n: usize, learning_rate: f64, momentum: f64, weight_decay: f64) -> Self {
        Momentum {
            learning_rate,
            momentum,
            weight_decay,
            velocity: vec![0.0; n],
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        for ((p, v), g) in params.iter_mut().zip(&mut self.velocity).zip(grad) {
            *v = self.momentum * *v + g + self.weight_decay * *p;
            *p -= self.learning_rate * *v;
        }
    }
}

/// Adam. Weight decay enters as an L2 term on the gradient.
#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(n: usize, learning_rate: f64, weight_decay: f64) -> Self {
        Adam {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..params.len() {
            let g = grad[i] + self.weight_decay * params[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            params[i] -= self.learning_rate * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + self.eps);
        }
    }
}
