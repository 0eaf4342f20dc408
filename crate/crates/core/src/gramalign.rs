//! Gram-matrix alignment with a per-token linear adapter.
//!
//! The loss is the mean squared difference between the cosine Gram matrices
//! of a student and a teacher feature map over the same patch grid. An
//! adapter `y = W x + b` applied to every student token is trained jointly
//! with a same/different readout to minimise
//! `task_loss + lambda_gram * mean gram_loss`.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::affinity::{gram, gram_of_units, GramMatrix};
use crate::pipeline::{self, MaskIndex, MetricConfig, MetricTriple};
use crate::readout::{Adam, Mlp, Task};
use crate::seeds;
use crate::tensorio::{BehavioralRecord, FeatureMap, TrialSpec};
use crate::{Error, Result};

pub const ADAPTER_MAGIC: [u8; 4] = *b"PBAD";
pub const ADAPTER_VERSION: u32 = 1;

fn check_grids(student: &FeatureMap, teacher: &FeatureMap) -> Result<()> {
    if student.h != teacher.h || student.w != teacher.w {
        return Err(Error::Argument(format!(
            "student grid {}x{} does not match teacher grid {}x{}",
            student.h, student.w, teacher.h, teacher.w
        )));
    }
    Ok(())
}

fn squared_diff_mean(a: &GramMatrix, b: &GramMatrix) -> f64 {
    let n = a.n as f64;
    a.values
        .iter()
        .zip(&b.values)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / (n * n)
}

/// `(1/n²) Σᵢⱼ (G_s[i][j] − G_t[i][j])²` over cosine Grams.
pub fn gram_loss(student: &FeatureMap, teacher: &FeatureMap) -> Result<f64> {
    check_grids(student, teacher)?;
    Ok(squared_diff_mean(&gram(student), &gram(teacher)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct GramGrad {
    pub loss: f64,
    /// `n × d` gradient with respect to the raw student tokens.
    pub grad: Vec<f64>,
    /// Zero-norm student tokens; their gradient rows are zero.
    pub zero_tokens: Vec<usize>,
}

/// Loss and gradient for raw `n × d` tokens against a fixed teacher Gram.
///
/// With `u = x/|x|` and `E = (2/n²)(G − T)`, `∂L/∂u_i = 2 Σⱼ E_ij u_j` and
/// the normalization Jacobian gives
/// `∂L/∂x_i = (∂L/∂u_i − u_i (u_i · ∂L/∂u_i)) / |x_i|`.
pub fn gram_loss_grad_tokens(tokens: &[f64], d: usize, teacher: &GramMatrix) -> GramGrad {
    let n = tokens.len() / d;
    debug_assert_eq!(n, teacher.n);
    let mut unit = vec![0.0; tokens.len()];
    let mut norms = vec![0.0; n];
    let mut zero_tokens = Vec::new();
    for i in 0..n {
        let t = &tokens[i * d..(i + 1) * d];
        let norm = t.iter().map(|v| v * v).sum::<f64>().sqrt();
        norms[i] = norm;
        if norm == 0.0 {
            zero_tokens.push(i);
        } else {
            for (u, v) in unit[i * d..(i + 1) * d].iter_mut().zip(t) {
                *u = v / norm;
            }
        }
    }
    let g = gram_of_units(&unit, d);
    let scale = 2.0 / (n * n) as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0; tokens.len()];
    let mut du = vec![0.0; d];
    for i in 0..n {
        if norms[i] == 0.0 {
            for j in 0..n {
                let e = g.get(i, j) - teacher.get(i, j);
                loss += e * e;
            }
            continue;
        }
        du.fill(0.0);
        for j in 0..n {
            let e = g.get(i, j) - teacher.get(i, j);
            loss += e * e;
            let coeff = 2.0 * scale * e;
            for (a, b) in du.iter_mut().zip(&unit[j * d..(j + 1) * d]) {
                *a += coeff * b;
            }
        }
        let ui = &unit[i * d..(i + 1) * d];
        let radial: f64 = ui.iter().zip(&du).map(|(a, b)| a * b).sum();
        for ((gk, dk), uk) in grad[i * d..(i + 1) * d].iter_mut().zip(&du).zip(ui) {
            *gk = (dk - uk * radial) / norms[i];
        }
    }
    GramGrad {
        loss: loss / (n * n) as f64,
        grad,
        zero_tokens,
    }
}

pub fn gram_loss_grad(student: &FeatureMap, teacher: &FeatureMap) -> Result<GramGrad> {
    check_grids(student, teacher)?;
    let tokens: Vec<f64> = student.data.iter().map(|&v| v as f64).collect();
    Ok(gram_loss_grad_tokens(&tokens, student.d, &gram(teacher)))
}

/// Per-token linear map `y = W x + b`, `W` row-major `d_out × d_in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Adapter {
    pub d_in: usize,
    pub d_out: usize,
    pub weight: Vec<f64>,
    pub bias: Option<Vec<f64>>,
}

impl Adapter {
    pub fn identity(d: usize, with_bias: bool) -> Self {
        let mut weight = vec![0.0; d * d];
        for i in 0..d {
            weight[i * d + i] = 1.0;
        }
        Adapter {
            d_in: d,
            d_out: d,
            weight,
            bias: with_bias.then(|| vec![0.0; d]),
        }
    }

    pub fn random<R: Rng>(d_in: usize, d_out: usize, with_bias: bool, rng: &mut R) -> Self {
        let a = (6.0 / (d_in + d_out) as f64).sqrt();
        Adapter {
            d_in,
            d_out,
            weight: (0..d_in * d_out).map(|_| rng.random_range(-a..a)).collect(),
            bias: with_bias.then(|| vec![0.0; d_out]),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_in == 0 || self.d_out == 0 || self.weight.len() != self.d_in * self.d_out {
            return Err(Error::Invariant(format!(
                "adapter {}x{} with {} weights",
                self.d_out,
                self.d_in,
                self.weight.len()
            )));
        }
        if let Some(b) = &self.bias {
            if b.len() != self.d_out {
                return Err(Error::Invariant(format!("adapter bias has length {}", b.len())));
            }
        }
        if self.weight.iter().chain(self.bias.iter().flatten()).any(|v| !v.is_finite()) {
            return Err(Error::Invariant("adapter has non-finite parameters".into()));
        }
        Ok(())
    }

    fn apply_token(&self, x: &[f64], out: &mut [f64]) {
        for (o, y) in out.iter_mut().enumerate() {
            let row = &self.weight[o * self.d_in..(o + 1) * self.d_in];
            *y = row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + self.bias.as_ref().map_or(0.0, |b| b[o]);
        }
    }

    /// Applies the adapter to `n × d_in` tokens.
    pub fn apply_tokens(&self, tokens: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; tokens.len() / self.d_in * self.d_out];
        for (x, y) in tokens.chunks_exact(self.d_in).zip(out.chunks_exact_mut(self.d_out)) {
            self.apply_token(x, y);
        }
        out
    }

    pub fn apply(&self, map: &FeatureMap) -> Result<FeatureMap> {
        if map.d != self.d_in {
            return Err(Error::Argument(format!(
                "adapter expects d = {}, map {} has d = {}",
                self.d_in, map.image_id, map.d
            )));
        }
        let tokens: Vec<f64> = map.data.iter().map(|&v| v as f64).collect();
        let out = self.apply_tokens(&tokens);
        FeatureMap::new(
            map.image_id.clone(),
            map.h,
            map.w,
            self.d_out,
            out.into_iter().map(|v| v as f32).collect(),
        )
    }

    fn n_params(&self) -> usize {
        self.weight.len() + self.bias.as_ref().map_or(0, Vec::len)
    }

    fn flat(&self) -> Vec<f64> {
        let mut v = self.weight.clone();
        if let Some(b) = &self.bias {
            v.extend_from_slice(b);
        }
        v
    }

    fn set_flat(&mut self, p: &[f64]) {
        let (w, b) = p.split_at(self.weight.len());
        self.weight.copy_from_slice(w);
        if let Some(bias) = &mut self.bias {
            bias.copy_from_slice(b);
        }
    }

    /// Accumulates `∂L/∂W += g xᵀ` and `∂L/∂b += g` into a flat gradient.
    fn accumulate(&self, grad: &mut [f64], x: &[f64], g: &[f64], scale: f64) {
        let nw = self.weight.len();
        for (o, &go) in g.iter().enumerate() {
            if go == 0.0 {
                continue;
            }
            let row = &mut grad[o * self.d_in..(o + 1) * self.d_in];
            for (r, v) in row.iter_mut().zip(x) {
                *r += scale * go * v;
            }
            if self.bias.is_some() {
                grad[nw + o] += scale * go;
            }
        }
    }

    /// Writes the `PBAD` container: magic, then little-endian `u32` version,
    /// `d_out`, `d_in`, flags (bit 0: bias present), the `d_out·d_in` weights
    /// and optional `d_out` biases as `f64`.
    pub fn write<W: Write>(&self, mut sink: W) -> Result<u64> {
        self.validate()?;
        let mut buf = Vec::with_capacity(20 + 8 * self.n_params());
        buf.extend_from_slice(&ADAPTER_MAGIC);
        buf.extend_from_slice(&ADAPTER_VERSION.to_le_bytes());
        buf.extend_from_slice(&(self.d_out as u32).to_le_bytes());
        buf.extend_from_slice(&(self.d_in as u32).to_le_bytes());
        buf.extend_from_slice(&(self.bias.is_some() as u32).to_le_bytes());
        for v in self.weight.iter().chain(self.bias.iter().flatten()) {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        sink.write_all(&buf)
            .map_err(|source| Error::Stream { offset: 0, source })?;
        Ok(buf.len() as u64)
    }

    pub fn read<R: Read>(mut source: R) -> Result<Self> {
        let mut header = [0u8; 20];
        source.read_exact(&mut header).map_err(|_| Error::Length {
            expected: 20,
            actual: 0,
        })?;
        if header[..4] != ADAPTER_MAGIC {
            return Err(Error::Format(format!("bad adapter magic {:02x?}", &header[..4])));
        }
        let field = |i: usize| u32::from_le_bytes(header[4 + 4 * i..8 + 4 * i].try_into().unwrap());
        if field(0) != ADAPTER_VERSION {
            return Err(Error::Format(format!("unsupported adapter version {}", field(0))));
        }
        let (d_out, d_in, flags) = (field(1) as usize, field(2) as usize, field(3));
        if flags > 1 {
            return Err(Error::Format(format!("unknown adapter flags {flags:#x}")));
        }
        let with_bias = flags & 1 == 1;
        let count = d_out * d_in + if with_bias { d_out } else { 0 };
        let mut payload = vec![0u8; 8 * count];
        source.read_exact(&mut payload).map_err(|_| Error::Length {
            expected: (20 + 8 * count) as u64,
            actual: 20,
        })?;
        let values: Vec<f64> = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let (w, b) = values.split_at(d_out * d_in);
        let adapter = Adapter {
            d_in,
            d_out,
            weight: w.to_vec(),
            bias: with_bias.then(|| b.to_vec()),
        };
        adapter.validate()?;
        Ok(adapter)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<u64> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut sink = std::io::BufWriter::new(file);
        let n = self.write(&mut sink)?;
        sink.flush().map_err(|e| Error::io(path, e))?;
        Ok(n)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read(std::io::BufReader::new(file))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignConfig {
    pub lambda_gram: f64,
    pub task_weight: f64,
    pub steps: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub images_per_step: usize,
    pub trials_per_step: usize,
    pub readout_hidden: usize,
    /// Output width; `None` keeps the student width (identity start).
    pub d_out: Option<usize>,
    pub with_bias: bool,
    pub rng_seed: u64,
}

impl Default for AlignConfig {
    fn default() -> Self {
        AlignConfig {
            lambda_gram: 1.0,
            task_weight: 1.0,
            steps: 800,
            learning_rate: 1e-2,
            weight_decay: 0.0,
            images_per_step: 8,
            trials_per_step: 64,
            readout_hidden: 64,
            d_out: None,
            with_bias: true,
            rng_seed: 0,
        }
    }
}

/// One training example for adapter training: token indices into the map
/// of image `image`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AlignTrial {
    pub image: usize,
    pub center: usize,
    pub peripheral: usize,
    pub same: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepLoss {
    pub total: f64,
    pub task: f64,
    pub gram: f64,
}

#[derive(Debug, Clone)]
pub struct AlignResult {
    pub adapter: Adapter,
    pub readout: Mlp,
    pub history: Vec<StepLoss>,
}

/// Whether a loss trajectory trends down: the mean of the last window is
/// below the mean of the first.
pub fn trending_down(values: &[f64], window: usize) -> bool {
    let w = window.min(values.len() / 2).max(1);
    if values.len() < 2 {
        return false;
    }
    let head = values[..w].iter().sum::<f64>() / w as f64;
    let tail = values[values.len() - w..].iter().sum::<f64>() / w as f64;
    tail < head
}

/// Trials resolved to token indices for [`train_adapter`].
pub fn align_trials(maps: &[FeatureMap], trials: &[TrialSpec], patch_size: u32) -> Result<Vec<AlignTrial>> {
    let index: HashMap<&str, usize> = maps.iter().enumerate().map(|(i, m)| (m.image_id.as_str(), i)).collect();
    trials
        .iter()
        .map(|t| {
            let &image = index
                .get(t.image_id.as_str())
                .ok_or_else(|| Error::Argument(format!("trial {}: no features for image {}", t.trial_id, t.image_id)))?;
            let m = &maps[image];
            let (cr, cc) = crate::affinity::pixel_to_patch(t.center_px, patch_size, (m.h, m.w))?;
            let (pr, pc) = crate::affinity::pixel_to_patch(t.peripheral_px, patch_size, (m.h, m.w))?;
            Ok(AlignTrial {
                image,
                center: cr * m.w + cc,
                peripheral: pr * m.w + pc,
                same: t.label.is_same(),
            })
        })
        .collect()
}

/// Jointly trains the adapter and a readout with Adam. Deterministic in
/// `cfg.rng_seed`.
pub fn train_adapter(
    student: &[FeatureMap],
    teacher: &[FeatureMap],
    trials: &[AlignTrial],
    cfg: &AlignConfig,
) -> Result<AlignResult> {
    if student.is_empty() || trials.is_empty() {
        return Err(Error::Argument("adapter training needs images and trials".into()));
    }
    if student.len() != teacher.len() {
        return Err(Error::Argument(format!(
            "{} student maps for {} teacher maps",
            student.len(),
            teacher.len()
        )));
    }
    if cfg.lambda_gram < 0.0 || !cfg.lambda_gram.is_finite() {
        return Err(Error::Argument(format!("lambda_gram = {}", cfg.lambda_gram)));
    }
    let d_in = student[0].d;
    for (s, t) in student.iter().zip(teacher) {
        check_grids(s, t)?;
        if s.d != d_in {
            return Err(Error::Argument(format!("student map {} has d = {}, expected {d_in}", s.image_id, s.d)));
        }
    }
    if let Some(bad) = trials.iter().find(|t| {
        t.image >= student.len() || t.center >= student[t.image].n_tokens() || t.peripheral >= student[t.image].n_tokens()
    }) {
        return Err(Error::Argument(format!("trial {bad:?} indexes outside the data")));
    }

    let tokens: Vec<Vec<f64>> = student.iter().map(|m| m.data.iter().map(|&v| v as f64).collect()).collect();
    let teacher_grams: Vec<GramMatrix> = teacher.iter().map(gram).collect();
    let d_out = cfg.d_out.unwrap_or(d_in);
    let mut adapter = if d_out == d_in {
        Adapter::identity(d_in, cfg.with_bias)
    } else {
        Adapter::random(d_in, d_out, cfg.with_bias, &mut seeds::rng(cfg.rng_seed, "align/adapter"))
    };
    let mut readout = Mlp::new(2 * d_out, cfg.readout_hidden, &mut seeds::rng(cfg.rng_seed, "align/readout"));
    let mut adapter_params = adapter.flat();
    let mut adapter_opt = Adam::new(adapter_params.len(), cfg.learning_rate, cfg.weight_decay);
    let mut readout_opt = Adam::new(readout.params.len(), cfg.learning_rate, cfg.weight_decay);
    let mut rng = seeds::rng(cfg.rng_seed, "align/batches");

    let mut image_order: Vec<usize> = (0..student.len()).collect();
    let mut trial_order: Vec<usize> = (0..trials.len()).collect();
    let (mut image_cursor, mut trial_cursor) = (image_order.len(), trial_order.len());
    let next_batch = |order: &mut Vec<usize>, cursor: &mut usize, k: usize, rng: &mut rand_chacha::ChaCha8Rng| {
        let mut out = Vec::with_capacity(k);
        for _ in 0..k.min(order.len()) {
            if *cursor == order.len() {
                order.shuffle(rng);
                *cursor = 0;
            }
            out.push(order[*cursor]);
            *cursor += 1;
        }
        out
    };

    let mut history = Vec::with_capacity(cfg.steps);
    let mut g_adapter = vec![0.0; adapter_params.len()];
    let mut g_readout = vec![0.0; readout.params.len()];
    for _ in 0..cfg.steps {
        g_adapter.fill(0.0);
        let images = next_batch(&mut image_order, &mut image_cursor, cfg.images_per_step, &mut rng);
        let batch = next_batch(&mut trial_order, &mut trial_cursor, cfg.trials_per_step, &mut rng);

        let mut gram_total = 0.0;
        if cfg.lambda_gram > 0.0 {
            let scale = cfg.lambda_gram / images.len() as f64;
            for &i in &images {
                let adapted = adapter.apply_tokens(&tokens[i]);
                let gg = gram_loss_grad_tokens(&adapted, d_out, &teacher_grams[i]);
                gram_total += gg.loss;
                for (x, g) in tokens[i].chunks_exact(d_in).zip(gg.grad.chunks_exact(d_out)) {
                    adapter.accumulate(&mut g_adapter, x, g, scale);
                }
            }
            gram_total /= images.len() as f64;
        }

        let mut xs = Vec::with_capacity(batch.len() * 2 * d_out);
        let mut ys = Vec::with_capacity(batch.len());
        let mut y = vec![0.0; d_out];
        for &k in &batch {
            let t = trials[k];
            for token in [t.center, t.peripheral] {
                adapter.apply_token(&tokens[t.image][token * d_in..(token + 1) * d_in], &mut y);
                xs.extend_from_slice(&y);
            }
            ys.push(t.same as u8 as f64);
        }
        let mut gx = vec![0.0; xs.len()];
        let task = readout.loss_and_grad(&xs, &ys, Task::Classify, &mut g_readout, Some(&mut gx));
        for g in &mut g_readout {
            *g *= cfg.task_weight;
        }
        for (b, &k) in batch.iter().enumerate() {
            let t = trials[k];
            for (slot, token) in [t.center, t.peripheral].into_iter().enumerate() {
                let off = (2 * b + slot) * d_out;
                adapter.accumulate(
                    &mut g_adapter,
                    &tokens[t.image][token * d_in..(token + 1) * d_in],
                    &gx[off..off + d_out],
                    cfg.task_weight,
                );
            }
        }

        adapter_opt.step(&mut adapter_params, &g_adapter);
        adapter.set_flat(&adapter_params);
        readout_opt.step(&mut readout.params, &g_readout);
        history.push(StepLoss {
            total: cfg.task_weight * task + cfg.lambda_gram * gram_total,
            task,
            gram: gram_total,
        });
    }
    adapter.validate()?;
    Ok(AlignResult {
        adapter,
        readout,
        history,
    })
}

/// Mean Gram loss over paired maps.
pub fn mean_gram_loss(student: &[FeatureMap], teacher: &[FeatureMap]) -> Result<f64> {
    if student.len() != teacher.len() || student.is_empty() {
        return Err(Error::Argument("paired, nonempty map lists required".into()));
    }
    let mut total = 0.0;
    for (s, t) in student.iter().zip(teacher) {
        total += gram_loss(s, t)?;
    }
    Ok(total / student.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeforeAfter {
    pub base: MetricTriple,
    pub aligned: MetricTriple,
    pub delta: MetricTriple,
}

/// Grouping accuracy, object-centric AUC and normalized behavioral score for
/// base and aligned features over the same trials.
pub fn before_after_report(
    base: &HashMap<String, FeatureMap>,
    aligned: &HashMap<String, FeatureMap>,
    trials: &[TrialSpec],
    masks: &MaskIndex,
    records: &[BehavioralRecord],
    cfg: &MetricConfig,
) -> Result<BeforeAfter> {
    for t in trials {
        for (name, set) in [("base", base), ("aligned", aligned)] {
            if !set.contains_key(&t.image_id) {
                return Err(Error::Argument(format!(
                    "{name} features missing image {} (trial {})",
                    t.image_id, t.trial_id
                )));
            }
        }
    }
    let b = pipeline::evaluate_metrics(base, trials, masks, records, cfg)?;
    let a = pipeline::evaluate_metrics(aligned, trials, masks, records, cfg)?;
    Ok(BeforeAfter {
        delta: MetricTriple {
            grouping_accuracy: a.grouping_accuracy - b.grouping_accuracy,
            object_auc: a.object_auc - b.object_auc,
            behavioral_score: a.behavioral_score - b.behavioral_score,
        },
        base: b,
        aligned: a,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map(h: usize, w: usize, d: usize, data: Vec<f32>) -> FeatureMap {
        FeatureMap::new("m", h, w, d, data).unwrap()
    }

    fn random_map(h: usize, w: usize, d: usize, seed: u64) -> FeatureMap {
        let mut rng = seeds::rng_from(seed);
        map(h, w, d, (0..h * w * d).map(|_| rng.random_range(-1.0..1.0)).collect())
    }

    #[test]
    fn identical_maps_have_zero_loss_and_gradient() {
        let m = random_map(3, 3, 4, 1);
        assert_eq!(gram_loss(&m, &m).unwrap(), 0.0);
        let g = gram_loss_grad(&m, &m).unwrap();
        assert!(g.grad.iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn orthonormal_vs_identical_closed_form() {
        let s = map(1, 2, 2, vec![1.0, 0.0, 0.0, 1.0]);
        let t = map(1, 2, 3, vec![1.0, 2.0, 3.0, 1.0, 2.0, 3.0]);
        assert!((gram_loss(&s, &t).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn matches_double_loop_oracle() {
        let s = random_map(3, 4, 5, 2);
        let t = random_map(3, 4, 7, 3);
        let cos = |m: &FeatureMap, i: usize, j: usize| {
            let (a, b) = (m.token(i), m.token(j));
            let dot: f64 = a.iter().zip(b).map(|(x, y)| *x as f64 * *y as f64).sum();
            let na: f64 = a.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
            let nb: f64 = b.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
            dot / (na * nb)
        };
        let mut oracle = 0.0;
        for i in 0..12 {
            for j in 0..12 {
                oracle += (cos(&s, i, j) - cos(&t, i, j)).powi(2);
            }
        }
        oracle /= 144.0;
        assert!((gram_loss(&s, &t).unwrap() - oracle).abs() < 1e-9);
    }

    #[test]
    fn grid_mismatch_is_argument_error() {
        assert!(matches!(
            gram_loss(&random_map(2, 3, 2, 1), &random_map(3, 2, 2, 1)),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = seeds::rng_from(5);
        let (n, d) = (9, 4);
        let x: Vec<f64> = (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let t_tokens: Vec<f64> = (0..n * 3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let tm = FeatureMap::new("t", 3, 3, 3, t_tokens.iter().map(|&v| v as f32).collect()).unwrap();
        let tg = gram(&tm);
        let g = gram_loss_grad_tokens(&x, d, &tg);
        let h = 1e-4;
        for k in 0..x.len() {
            let mut xp = x.clone();
            xp[k] += h;
            let up = gram_loss_grad_tokens(&xp, d, &tg).loss;
            xp[k] -= 2.0 * h;
            let down = gram_loss_grad_tokens(&xp, d, &tg).loss;
            let fd = (up - down) / (2.0 * h);
            let rel = (fd - g.grad[k]).abs() / fd.abs().max(g.grad[k].abs()).max(1e-8);
            assert!(rel < 1e-4, "{k}: {fd} vs {}", g.grad[k]);
        }
    }

    #[test]
    fn gradient_is_orthogonal_to_each_token() {
        let s = random_map(3, 3, 4, 8);
        let t = random_map(3, 3, 4, 9);
        let g = gram_loss_grad(&s, &t).unwrap();
        for i in 0..9 {
            let radial: f64 = s.token(i).iter().zip(&g.grad[i * 4..(i + 1) * 4]).map(|(a, b)| *a as f64 * b).sum();
            assert!(radial.abs() < 1e-6);
        }
    }

    #[test]
    fn zero_token_flagged() {
        let mut s = random_map(2, 2, 3, 4);
        s.data[3..6].fill(0.0);
        let g = gram_loss_grad(&s, &random_map(2, 2, 3, 5)).unwrap();
        assert_eq!(g.zero_tokens, vec![1]);
        assert!(g.grad[3..6].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn adapter_container_roundtrip() {
        let mut rng = seeds::rng_from(6);
        for bias in [false, true] {
            let a = Adapter::random(5, 3, bias, &mut rng);
            let mut buf = Vec::new();
            let n = a.write(&mut buf).unwrap();
            assert_eq!(n as usize, 20 + 8 * (15 + if bias { 3 } else { 0 }));
            assert_eq!(&buf[..4], b"PBAD");
            assert_eq!(Adapter::read(buf.as_slice()).unwrap(), a);
        }
        let mut buf = Vec::new();
        Adapter::identity(2, false).write(&mut buf).unwrap();
        buf[0] = b'X';
        assert!(matches!(Adapter::read(buf.as_slice()), Err(Error::Format(_))));
    }

    #[test]
    fn identity_adapter_preserves_map() {
        let m = random_map(2, 3, 4, 7);
        assert_eq!(Adapter::identity(4, true).apply(&m).unwrap(), m);
    }

    #[test]
    fn adapter_training_is_reproducible_and_reduces_loss() {
        let mut rng = seeds::rng_from(10);
        let teacher: Vec<FeatureMap> = (0..4).map(|i| random_map(3, 3, 3, 20 + i)).collect();
        // student = teacher padded with a large constant channel
        let student: Vec<FeatureMap> = teacher
            .iter()
            .map(|t| {
                let data = t.data.chunks(3).flat_map(|c| [c[0], c[1], c[2], 4.0]).collect();
                map(3, 3, 4, data)
            })
            .collect();
        let trials: Vec<AlignTrial> = (0..32)
            .map(|k| AlignTrial {
                image: k % 4,
                center: 4,
                peripheral: rng.random_range(0..9),
                same: k % 2 == 0,
            })
            .collect();
        let cfg = AlignConfig { steps: 150, images_per_step: 4, trials_per_step: 8, readout_hidden: 8, ..Default::default() };
        let a = train_adapter(&student, &teacher, &trials, &cfg).unwrap();
        let b = train_adapter(&student, &teacher, &trials, &cfg).unwrap();
        assert_eq!(a.adapter, b.adapter);
        let gram_curve: Vec<f64> = a.history.iter().map(|s| s.gram).collect();
        assert!(trending_down(&gram_curve, 10));
        let adapted: Vec<FeatureMap> = student.iter().map(|m| a.adapter.apply(m).unwrap()).collect();
        assert!(mean_gram_loss(&adapted, &teacher).unwrap() < 0.5 * mean_gram_loss(&student, &teacher).unwrap());
        assert!(train_adapter(&student, &teacher, &[], &cfg).is_err());
    }
}
