//! Dense-Sparse performance predictor and its dense-only/sparse-only
//! baselines.
//!
//! The dense tower embeds the continuous dimension features, an embedding
//! table embeds the categorical interaction tokens, and the fused head
//! consumes the strictly-upper-triangular entries of the token Gram matrix
//! (cross-term dot products) concatenated with the tower output. Training is
//! plain minibatch Adam over MSE plus a pairwise margin rank loss, with
//! hand-derived gradients checked against finite differences.

use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{Affine, Mat};
use crate::scalar::{relu, Scalar};
use crate::searchspace::{
    encode_features, EncodedArch, Genotype, SearchSpaceSpec, DENSE_FEATURES, SPARSE_TOKENS,
    VOCAB_SIZE,
};

/// Length of the strictly-upper-triangular interaction vector over
/// T sparse tokens plus the dense token.
pub const INTERACTION_LEN: usize = (SPARSE_TOKENS + 1) * SPARSE_TOKENS / 2;

pub const DROPOUT_RATE: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PredictorMode {
    #[serde(rename = "dense_sparse")]
    DenseSparse,
    #[serde(rename = "dense_only")]
    DenseOnly,
    #[serde(rename = "sparse_only")]
    SparseOnly,
}

impl PredictorMode {
    pub fn name(self) -> &'static str {
        match self {
            PredictorMode::DenseSparse => "dense_sparse",
            PredictorMode::DenseOnly => "dense_only",
            PredictorMode::SparseOnly => "sparse_only",
        }
    }
}

impl std::str::FromStr for PredictorMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dense_sparse" | "ds" => Ok(PredictorMode::DenseSparse),
            "dense_only" | "dense" => Ok(PredictorMode::DenseOnly),
            "sparse_only" | "sparse" => Ok(PredictorMode::SparseOnly),
            other => Err(Error::invalid(format!("unknown predictor mode: {other}"))),
        }
    }
}

/// One architecture-performance record, the unit of predictor training data.
/// Serialized as one JSON object per line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchSample {
    pub genotype: Genotype,
    pub perf: f64,
    pub macs: u64,
    pub params: u64,
}

pub fn write_jsonl(samples: &[ArchSample], out: &mut impl Write) -> Result<()> {
    for s in samples {
        serde_json::to_writer(&mut *out, s)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_jsonl(reader: impl BufRead) -> Result<Vec<ArchSample>> {
    let mut samples = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        samples.push(serde_json::from_str(&line)?);
    }
    Ok(samples)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Margin of the pairwise rank loss, on z-scored targets.
    pub margin: f64,
    /// Weight of the rank-loss term added to the MSE.
    pub rank_weight: f64,
    /// Decoupled weight decay applied in the Adam update.
    pub weight_decay: f64,
    pub pretrain_epochs: usize,
    pub seed: u64,
    /// Target normalization stats; compute them on the training split.
    pub norm_mean: f64,
    pub norm_std: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 3e-3,
            epochs: 30,
            batch_size: 64,
            margin: 0.05,
            rank_weight: 1.0,
            weight_decay: 1e-4,
            pretrain_epochs: 10,
            seed: 0,
            norm_mean: 0.0,
            norm_std: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.learning_rate <= 0.0 || self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::validation("learning rate/epochs/batch size must be positive"));
        }
        if self.norm_std <= 0.0 {
            return Err(Error::validation("normalization std must be positive"));
        }
        Ok(())
    }

    /// Fill the normalization stats from a target slice (training split).
    pub fn with_stats_from(mut self, targets: &[f64]) -> Result<TrainConfig> {
        let (mean, std) = mean_std(targets)?;
        self.norm_mean = mean;
        self.norm_std = std;
        Ok(self)
    }
}

fn mean_std(values: &[f64]) -> Result<(f64, f64)> {
    if values.is_empty() {
        return Err(Error::validation("empty target set"));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    if std < 1e-12 {
        return Err(Error::validation("targets have zero variance"));
    }
    Ok((mean, std))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictorMetrics {
    pub mse: f64,
    pub kendall_tau: f64,
}

/// The predictor. Tower and embedding table exist only in the modes that use
/// them; head widths are 256-256 for dense-sparse and 256-128 for the
/// single-prior baselines.
#[derive(Debug, Clone, PartialEq)]
pub struct DsPredictor<S> {
    pub mode: PredictorMode,
    pub dim: usize,
    pub vocab: usize,
    /// vocab x dim token embeddings (empty for dense-only).
    pub embed: Mat<S>,
    /// Dense tower over the 33 dimension features (empty for sparse-only).
    pub tower: Vec<Affine<S>>,
    /// Fused head; ReLU after each layer, dropout before the regression head.
    pub head: Vec<Affine<S>>,
    /// Final affine regression layer (width 1).
    pub out: Affine<S>,
    /// Target normalization recorded by `train`.
    pub norm_mean: f64,
    pub norm_std: f64,
}

fn head_widths(mode: PredictorMode) -> [usize; 2] {
    match mode {
        PredictorMode::DenseSparse => [256, 256],
        PredictorMode::DenseOnly | PredictorMode::SparseOnly => [256, 128],
    }
}

impl<S: Scalar> DsPredictor<S> {
    pub fn new(mode: PredictorMode, dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut affine = |in_dim: usize, out_dim: usize| -> Affine<S> {
            let s = 1.0 / (in_dim.max(1) as f64).sqrt();
            Affine {
                w: Mat::from_fn(in_dim, out_dim, |_, _| S::from_f64_lossy(rng.gen_range(-s..s))),
                b: vec![S::zero(); out_dim],
            }
        };
        let tower_widths = [64usize, 128, dim];
        let (vocab, tower_in) = (VOCAB_SIZE, DENSE_FEATURES);
        let tower = match mode {
            PredictorMode::SparseOnly => Vec::new(),
            _ => {
                let mut layers = Vec::new();
                let mut prev = tower_in;
                for &w in &tower_widths {
                    layers.push(affine(prev, w));
                    prev = w;
                }
                layers
            }
        };
        let head_in = match mode {
            PredictorMode::DenseSparse => INTERACTION_LEN + dim,
            PredictorMode::DenseOnly | PredictorMode::SparseOnly => dim,
        };
        let hw = head_widths(mode);
        let head = vec![affine(head_in, hw[0]), affine(hw[0], hw[1])];
        let out = affine(hw[1], 1);
        let embed = match mode {
            PredictorMode::DenseOnly => Mat::zeros(0, dim),
            _ => {
                let s = 1.0 / (dim as f64).sqrt();
                Mat::from_fn(vocab, dim, |_, _| S::from_f64_lossy(rng.gen_range(-s..s)))
            }
        };
        DsPredictor {
            mode,
            dim,
            vocab,
            embed,
            tower,
            head,
            out,
            norm_mean: 0.0,
            norm_std: 1.0,
        }
    }

    fn check_arch(&self, arch: &EncodedArch) -> Result<()> {
        if arch.dense.len() != DENSE_FEATURES {
            return Err(Error::validation(format!(
                "expected {} dense features, got {}",
                DENSE_FEATURES,
                arch.dense.len()
            )));
        }
        if arch.sparse.len() != SPARSE_TOKENS {
            return Err(Error::validation(format!(
                "expected {} sparse tokens, got {}",
                SPARSE_TOKENS,
                arch.sparse.len()
            )));
        }
        if self.mode != PredictorMode::DenseOnly {
            for &t in &arch.sparse {
                if t >= self.vocab {
                    return Err(Error::validation(format!(
                        "token id {t} outside vocabulary of {}",
                        self.vocab
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn param_slices(&self) -> Vec<&[S]> {
        let mut v: Vec<&[S]> = Vec::new();
        v.push(self.embed.as_slice());
        for l in &self.tower {
            v.push(l.w.as_slice());
            v.push(&l.b);
        }
        for l in &self.head {
            v.push(l.w.as_slice());
            v.push(&l.b);
        }
        v.push(self.out.w.as_slice());
        v.push(&self.out.b);
        v
    }

    pub fn param_slices_mut(&mut self) -> Vec<&mut [S]> {
        let mut v: Vec<&mut [S]> = Vec::new();
        v.push(self.embed.as_mut_slice());
        for l in &mut self.tower {
            v.push(l.w.as_mut_slice());
            v.push(&mut l.b);
        }
        for l in &mut self.head {
            v.push(l.w.as_mut_slice());
            v.push(&mut l.b);
        }
        v.push(self.out.w.as_mut_slice());
        v.push(&mut self.out.b);
        v
    }

    pub fn param_count(&self) -> usize {
        self.param_slices().iter().map(|s| s.len()).sum()
    }

    pub fn get_param(&self, idx: usize) -> S {
        let mut at = idx;
        for s in self.param_slices() {
            if at < s.len() {
                return s[at];
            }
            at -= s.len();
        }
        panic!("parameter index {idx} out of range");
    }

    pub fn set_param(&mut self, idx: usize, value: S) {
        let mut at = idx;
        for s in self.param_slices_mut() {
            if at < s.len() {
                s[at] = value;
                return;
            }
            at -= s.len();
        }
        panic!("parameter index {idx} out of range");
    }
}

/// Strictly-upper-triangular entries of the Gram matrix of `rows`, flattened
/// row-major: (0,1), (0,2), ..., (0,n-1), (1,2), ...
pub fn interaction_features<S: Scalar>(rows: &[Vec<S>]) -> Vec<S> {
    let n = rows.len();
    let mut out = Vec::with_capacity(n * (n - 1) / 2);
    for a in 0..n {
        for b in (a + 1)..n {
            let dot = rows[a]
                .iter()
                .zip(&rows[b])
                .fold(S::zero(), |acc, (&x, &y)| acc + x * y);
            out.push(dot);
        }
    }
    out
}

/// Activations cached by the forward pass for backprop.
struct Trace<S> {
    dense_in: Vec<S>,
    /// Post-ReLU activations of each tower layer.
    tower_post: Vec<Vec<S>>,
    /// Z rows: dense token first (dense-sparse mode), then token embeddings.
    z_rows: Vec<Vec<S>>,
    head_in: Vec<S>,
    head_post: Vec<Vec<S>>,
    /// Inverted-dropout mask over the last head activation (empty in eval).
    mask: Vec<S>,
    prediction: S,
}

impl<S: Scalar> DsPredictor<S> {
    fn forward_trace(&self, arch: &EncodedArch, training: bool, dropout_seed: u64) -> Result<Trace<S>> {
        self.check_arch(arch)?;
        let dense_in: Vec<S> = arch.dense.iter().map(|&v| S::from_f64_lossy(v)).collect();

        // ReLU between tower layers; the final projection is linear so the
        // dense token lives in the same unconstrained space as the embeddings.
        let mut tower_post: Vec<Vec<S>> = Vec::with_capacity(self.tower.len());
        let mut x = dense_in.clone();
        for (l, layer) in self.tower.iter().enumerate() {
            let mut y = layer.forward(&x);
            if l + 1 < self.tower.len() {
                for v in y.iter_mut() {
                    *v = relu(*v);
                }
            }
            tower_post.push(y.clone());
            x = y;
        }
        let x_d = tower_post.last().cloned().unwrap_or_default();

        let mut z_rows: Vec<Vec<S>> = Vec::new();
        let head_in: Vec<S> = match self.mode {
            PredictorMode::DenseSparse => {
                z_rows.push(x_d.clone());
                for &t in &arch.sparse {
                    z_rows.push(self.embed.row(t).to_vec());
                }
                let mut fused = interaction_features(&z_rows);
                fused.extend_from_slice(&x_d);
                fused
            }
            PredictorMode::DenseOnly => x_d,
            PredictorMode::SparseOnly => {
                for &t in &arch.sparse {
                    z_rows.push(self.embed.row(t).to_vec());
                }
                let inv = S::from_f64_lossy(1.0 / SPARSE_TOKENS as f64);
                let mut pooled = vec![S::zero(); self.dim];
                for row in &z_rows {
                    for (p, &v) in pooled.iter_mut().zip(row) {
                        *p += v;
                    }
                }
                for p in pooled.iter_mut() {
                    *p *= inv;
                }
                pooled
            }
        };

        let mut head_post: Vec<Vec<S>> = Vec::with_capacity(self.head.len());
        let mut h = head_in.clone();
        for layer in &self.head {
            let mut y = layer.forward(&h);
            for v in y.iter_mut() {
                *v = relu(*v);
            }
            head_post.push(y.clone());
            h = y;
        }

        let mask: Vec<S> = if training {
            let mut rng = ChaCha8Rng::seed_from_u64(dropout_seed);
            let scale = S::from_f64_lossy(1.0 / (1.0 - DROPOUT_RATE));
            (0..h.len())
                .map(|_| {
                    if rng.gen::<f64>() < DROPOUT_RATE {
                        S::zero()
                    } else {
                        scale
                    }
                })
                .collect()
        } else {
            Vec::new()
        };
        if training {
            for (v, &m) in h.iter_mut().zip(&mask) {
                *v *= m;
            }
        }
        let prediction = self.out.forward(&h)[0];
        Ok(Trace {
            dense_in,
            tower_post,
            z_rows,
            head_in,
            head_post,
            mask,
            prediction,
        })
    }

    /// Single prediction. Evaluation mode (training = false) is deterministic
    /// and ignores the dropout seed.
    pub fn forward(&self, arch: &EncodedArch, training: bool, dropout_seed: u64) -> Result<S> {
        Ok(self.forward_trace(arch, training, dropout_seed)?.prediction)
    }

    pub fn predict(&self, arch: &EncodedArch) -> Result<S> {
        self.forward(arch, false, 0)
    }

    /// Accumulate d(prediction)/d(params) * upstream into `grads`.
    fn backward(&self, arch: &EncodedArch, trace: &Trace<S>, upstream: S, grads: &mut Grads<S>) {
        // regression head
        let dropped: Vec<S> = {
            let last = trace.head_post.last().expect("head has layers");
            if trace.mask.is_empty() {
                last.clone()
            } else {
                last.iter().zip(&trace.mask).map(|(&v, &m)| v * m).collect()
            }
        };
        let mut d_hidden = vec![S::zero(); dropped.len()];
        for (i, &hi) in dropped.iter().enumerate() {
            grads.out.w.set(i, 0, grads.out.w.get(i, 0) + hi * upstream);
            d_hidden[i] = self.out.w.get(i, 0) * upstream;
        }
        grads.out.b[0] += upstream;
        if !trace.mask.is_empty() {
            for (d, &m) in d_hidden.iter_mut().zip(&trace.mask) {
                *d *= m;
            }
        }

        // fused head layers, last to first
        let mut d_post = d_hidden;
        for l in (0..self.head.len()).rev() {
            let post = &trace.head_post[l];
            let input: &[S] = if l == 0 {
                &trace.head_in
            } else {
                &trace.head_post[l - 1]
            };
            // ReLU
            let d_pre: Vec<S> = d_post
                .iter()
                .zip(post)
                .map(|(&d, &p)| if p > S::zero() { d } else { S::zero() })
                .collect();
            let layer = &self.head[l];
            let glayer = &mut grads.head[l];
            for (j, &dj) in d_pre.iter().enumerate() {
                glayer.b[j] += dj;
            }
            let mut d_input = vec![S::zero(); input.len()];
            for (i, &xi) in input.iter().enumerate() {
                let wrow = layer.w.row(i);
                let growi = glayer.w.row_mut(i);
                let mut acc = S::zero();
                for ((&dj, &wij), gij) in d_pre.iter().zip(wrow).zip(growi.iter_mut()) {
                    *gij += xi * dj;
                    acc += wij * dj;
                }
                d_input[i] = acc;
            }
            d_post = d_input;
        }
        let d_head_in = d_post;

        // split by mode
        let mut d_xd = vec![S::zero(); self.dim];
        match self.mode {
            PredictorMode::DenseSparse => {
                let n = trace.z_rows.len();
                let mut d_z = vec![vec![S::zero(); self.dim]; n];
                let mut f = 0usize;
                for a in 0..n {
                    for b in (a + 1)..n {
                        let df = d_head_in[f];
                        f += 1;
                        if df == S::zero() {
                            continue;
                        }
                        let (za, zb) = (&trace.z_rows[a], &trace.z_rows[b]);
                        for i in 0..self.dim {
                            d_z[a][i] += df * zb[i];
                            d_z[b][i] += df * za[i];
                        }
                    }
                }
                // direct concat of X_d after the interaction block
                for i in 0..self.dim {
                    d_xd[i] = d_z[0][i] + d_head_in[INTERACTION_LEN + i];
                }
                for (row, &t) in arch.sparse.iter().enumerate() {
                    let g = grads.embed.row_mut(t);
                    for (gi, &di) in g.iter_mut().zip(&d_z[row + 1]) {
                        *gi += di;
                    }
                }
            }
            PredictorMode::DenseOnly => {
                d_xd.copy_from_slice(&d_head_in);
            }
            PredictorMode::SparseOnly => {
                let inv = S::from_f64_lossy(1.0 / SPARSE_TOKENS as f64);
                for &t in &arch.sparse {
                    let g = grads.embed.row_mut(t);
                    for (gi, &di) in g.iter_mut().zip(&d_head_in) {
                        *gi += di * inv;
                    }
                }
                return; // no tower in sparse-only mode
            }
        }

        // dense tower, last to first (no ReLU on the final projection)
        let mut d_post = d_xd;
        for l in (0..self.tower.len()).rev() {
            let post = &trace.tower_post[l];
            let input: &[S] = if l == 0 {
                &trace.dense_in
            } else {
                &trace.tower_post[l - 1]
            };
            let d_pre: Vec<S> = if l + 1 == self.tower.len() {
                d_post.clone()
            } else {
                d_post
                    .iter()
                    .zip(post)
                    .map(|(&d, &p)| if p > S::zero() { d } else { S::zero() })
                    .collect()
            };
            let layer = &self.tower[l];
            let glayer = &mut grads.tower[l];
            for (j, &dj) in d_pre.iter().enumerate() {
                glayer.b[j] += dj;
            }
            let mut d_input = vec![S::zero(); input.len()];
            for (i, &xi) in input.iter().enumerate() {
                let wrow = layer.w.row(i);
                let growi = glayer.w.row_mut(i);
                let mut acc = S::zero();
                for ((&dj, &wij), gij) in d_pre.iter().zip(wrow).zip(growi.iter_mut()) {
                    *gij += xi * dj;
                    acc += wij * dj;
                }
                d_input[i] = acc;
            }
            d_post = d_input;
        }
    }
}

/// Gradients (or Adam moments) with the same shape as the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Grads<S> {
    pub embed: Mat<S>,
    pub tower: Vec<Affine<S>>,
    pub head: Vec<Affine<S>>,
    pub out: Affine<S>,
}

impl<S: Scalar> Grads<S> {
    pub fn zeros_like(p: &DsPredictor<S>) -> Self {
        Grads {
            embed: Mat::zeros(p.embed.rows(), p.embed.cols()),
            tower: p
                .tower
                .iter()
                .map(|l| Affine::zeros(l.in_dim(), l.out_dim()))
                .collect(),
            head: p
                .head
                .iter()
                .map(|l| Affine::zeros(l.in_dim(), l.out_dim()))
                .collect(),
            out: Affine::zeros(p.out.in_dim(), p.out.out_dim()),
        }
    }

    pub fn slices(&self) -> Vec<&[S]> {
        let mut v: Vec<&[S]> = Vec::new();
        v.push(self.embed.as_slice());
        for l in &self.tower {
            v.push(l.w.as_slice());
            v.push(&l.b);
        }
        for l in &self.head {
            v.push(l.w.as_slice());
            v.push(&l.b);
        }
        v.push(self.out.w.as_slice());
        v.push(&self.out.b);
        v
    }

    pub fn slices_mut(&mut self) -> Vec<&mut [S]> {
        let mut v: Vec<&mut [S]> = Vec::new();
        v.push(self.embed.as_mut_slice());
        for l in &mut self.tower {
            v.push(l.w.as_mut_slice());
            v.push(&mut l.b);
        }
        for l in &mut self.head {
            v.push(l.w.as_mut_slice());
            v.push(&mut l.b);
        }
        v.push(self.out.w.as_mut_slice());
        v.push(&mut self.out.b);
        v
    }

    pub fn zero(&mut self) {
        for s in self.slices_mut() {
            for v in s.iter_mut() {
                *v = S::zero();
            }
        }
    }
}

/// Analytic gradients of 0.5 * (forward - target)^2 w.r.t. every parameter,
/// with the dropout mask fixed by `dropout_seed` (training mode).
pub fn grad<S: Scalar>(
    p: &DsPredictor<S>,
    arch: &EncodedArch,
    target: S,
    dropout_seed: u64,
) -> Result<(S, Grads<S>)> {
    let trace = p.forward_trace(arch, true, dropout_seed)?;
    let err = trace.prediction - target;
    let loss = S::half() * err * err;
    let mut grads = Grads::zeros_like(p);
    p.backward(arch, &trace, err, &mut grads);
    Ok((loss, grads))
}

/// max(0, margin - sign(y_i - y_j) * (pred_i - pred_j))
pub fn margin_rank_loss(pred_i: f64, pred_j: f64, y_i: f64, y_j: f64, margin: f64) -> f64 {
    let s = if y_i > y_j { 1.0 } else { -1.0 };
    (margin - s * (pred_i - pred_j)).max(0.0)
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

struct Adam<S> {
    m: Grads<S>,
    v: Grads<S>,
    t: u32,
}

impl<S: Scalar> Adam<S> {
    fn new(p: &DsPredictor<S>) -> Self {
        Adam {
            m: Grads::zeros_like(p),
            v: Grads::zeros_like(p),
            t: 0,
        }
    }

    /// Adam with bias correction and decoupled weight decay:
    /// p -= lr * (mhat / (sqrt(vhat) + eps) + wd * p).
    fn step(&mut self, p: &mut DsPredictor<S>, grads: &Grads<S>, lr: f64, weight_decay: f64) {
        self.t += 1;
        let b1 = S::from_f64_lossy(ADAM_BETA1);
        let b2 = S::from_f64_lossy(ADAM_BETA2);
        let one_m_b1 = S::from_f64_lossy(1.0 - ADAM_BETA1);
        let one_m_b2 = S::from_f64_lossy(1.0 - ADAM_BETA2);
        let c1 = S::from_f64_lossy(1.0 / (1.0 - ADAM_BETA1.powi(self.t as i32)));
        let c2 = S::from_f64_lossy(1.0 / (1.0 - ADAM_BETA2.powi(self.t as i32)));
        let lr = S::from_f64_lossy(lr);
        let wd = S::from_f64_lossy(weight_decay);
        let eps = S::from_f64_lossy(ADAM_EPS);
        let mut pslices = p.param_slices_mut();
        let gslices = grads.slices();
        let mut mslices = self.m.slices_mut();
        let mut vslices = self.v.slices_mut();
        for i in 0..pslices.len() {
            let ps = &mut pslices[i];
            let gs = gslices[i];
            let ms = &mut mslices[i];
            let vs = &mut vslices[i];
            for j in 0..ps.len() {
                let g = gs[j];
                ms[j] = b1 * ms[j] + one_m_b1 * g;
                vs[j] = b2 * vs[j] + one_m_b2 * g * g;
                let mhat = ms[j] * c1;
                let vhat = vs[j] * c2;
                ps[j] = ps[j] - lr * (mhat / (vhat.sqrt() + eps) + wd * ps[j]);
            }
        }
    }
}

/// Core loop shared by `train` and `pretrain_macs`: minibatch Adam over
/// MSE + rank_weight * mean margin rank loss over in-batch pairs, with the
/// base learning rate following a cosine schedule down to 5% over the run.
/// Targets must already be normalized. Returns the per-epoch mean batch loss.
fn train_targets<S: Scalar>(
    p: &mut DsPredictor<S>,
    archs: &[EncodedArch],
    targets: &[f64],
    epochs: usize,
    cfg: &TrainConfig,
) -> Result<Vec<f64>> {
    debug_assert_eq!(archs.len(), targets.len());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(p);
    let mut grads = Grads::zeros_like(p);
    let mut idx: Vec<usize> = (0..archs.len()).collect();
    let mut curve = Vec::with_capacity(epochs);
    for epoch in 0..epochs {
        let progress = epoch as f64 / epochs.max(1) as f64;
        let lr = cfg.learning_rate
            * (0.05 + 0.475 * (1.0 + (std::f64::consts::PI * progress).cos()));
        idx.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for chunk in idx.chunks(cfg.batch_size) {
            let b = chunk.len();
            let mut traces = Vec::with_capacity(b);
            for &i in chunk {
                let dropout_seed = rng.gen::<u64>();
                traces.push(p.forward_trace(&archs[i], true, dropout_seed)?);
            }
            let preds: Vec<f64> = traces.iter().map(|t| t.prediction.to_f64_lossy()).collect();
            let ys: Vec<f64> = chunk.iter().map(|&i| targets[i]).collect();

            // output-gradient coefficient per sample
            let mut d = vec![0.0f64; b];
            let mut loss = 0.0;
            for i in 0..b {
                let e = preds[i] - ys[i];
                loss += 0.5 * e * e / b as f64;
                d[i] += e / b as f64;
            }
            let mut pairs = Vec::new();
            for i in 0..b {
                for j in (i + 1)..b {
                    if ys[i] != ys[j] {
                        pairs.push((i, j));
                    }
                }
            }
            if !pairs.is_empty() && cfg.rank_weight > 0.0 {
                let np = pairs.len() as f64;
                for &(i, j) in &pairs {
                    let s = if ys[i] > ys[j] { 1.0 } else { -1.0 };
                    let hinge = cfg.margin - s * (preds[i] - preds[j]);
                    if hinge > 0.0 {
                        loss += cfg.rank_weight * hinge / np;
                        d[i] -= cfg.rank_weight * s / np;
                        d[j] += cfg.rank_weight * s / np;
                    }
                }
            }

            grads.zero();
            for (k, &i) in chunk.iter().enumerate() {
                p.backward(&archs[i], &traces[k], S::from_f64_lossy(d[k]), &mut grads);
            }
            adam.step(p, &grads, lr, cfg.weight_decay);
            epoch_loss += loss;
            batches += 1;
        }
        curve.push(epoch_loss / batches.max(1) as f64);
    }
    Ok(curve)
}

fn encode_all(samples: &[ArchSample], space: &SearchSpaceSpec) -> Result<Vec<EncodedArch>> {
    samples.iter().map(|s| encode_features(&s.genotype, space)).collect()
}

/// Train on performance targets z-scored with the config stats. Records the
/// stats on the predictor for later evaluation.
pub fn train<S: Scalar>(
    p: &mut DsPredictor<S>,
    samples: &[ArchSample],
    space: &SearchSpaceSpec,
    cfg: &TrainConfig,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::validation("empty training set"));
    }
    let archs = encode_all(samples, space)?;
    let targets: Vec<f64> = samples
        .iter()
        .map(|s| (s.perf - cfg.norm_mean) / cfg.norm_std)
        .collect();
    p.norm_mean = cfg.norm_mean;
    p.norm_std = cfg.norm_std;
    train_targets(p, &archs, &targets, cfg.epochs, cfg)
}

/// MACs pretraining: regress z-scored log10(macs) for cfg.pretrain_epochs.
/// The resulting parameters are the initialization handed to [`train`].
pub fn pretrain_macs<S: Scalar>(
    p: &mut DsPredictor<S>,
    samples: &[ArchSample],
    space: &SearchSpaceSpec,
    cfg: &TrainConfig,
) -> Result<Vec<f64>> {
    if cfg.pretrain_epochs == 0 {
        return Ok(Vec::new());
    }
    if samples.is_empty() {
        return Err(Error::validation("empty pretraining set"));
    }
    for s in samples {
        if s.macs == 0 {
            return Err(Error::validation("pretraining sample with zero MACs"));
        }
    }
    let archs = encode_all(samples, space)?;
    let raw: Vec<f64> = samples.iter().map(|s| (s.macs as f64).log10()).collect();
    let (mean, std) = mean_std(&raw)?;
    let targets: Vec<f64> = raw.iter().map(|v| (v - mean) / std).collect();
    train_targets(p, &archs, &targets, cfg.pretrain_epochs, cfg)
}

/// MSE on normalized targets plus Kendall tau-b against raw targets,
/// evaluation-mode forward.
pub fn evaluate<S: Scalar>(
    p: &DsPredictor<S>,
    samples: &[ArchSample],
    space: &SearchSpaceSpec,
) -> Result<PredictorMetrics> {
    if samples.len() < 2 {
        return Err(Error::validation("need at least 2 samples to evaluate"));
    }
    let archs = encode_all(samples, space)?;
    let mut preds = Vec::with_capacity(samples.len());
    for a in &archs {
        preds.push(p.predict(a)?.to_f64_lossy());
    }
    let truths: Vec<f64> = samples.iter().map(|s| s.perf).collect();
    let mut mse = 0.0;
    for (pr, t) in preds.iter().zip(&truths) {
        let tn = (t - p.norm_mean) / p.norm_std;
        mse += (pr - tn) * (pr - tn);
    }
    mse /= samples.len() as f64;
    Ok(PredictorMetrics {
        mse,
        kendall_tau: kendall_tau(&preds, &truths)?,
    })
}

/// Tie-corrected Kendall tau-b by O(n^2) pair enumeration.
pub fn kendall_tau(preds: &[f64], truths: &[f64]) -> Result<f64> {
    if preds.len() != truths.len() {
        return Err(Error::invalid("length mismatch"));
    }
    let n = preds.len();
    if n < 2 {
        return Err(Error::invalid("need at least 2 observations"));
    }
    let mut concordant = 0i64;
    let mut discordant = 0i64;
    let mut ties_pred = 0i64;
    let mut ties_truth = 0i64;
    for i in 0..n {
        for j in (i + 1)..n {
            let dp = preds[i] - preds[j];
            let dt = truths[i] - truths[j];
            if dp == 0.0 {
                ties_pred += 1;
            }
            if dt == 0.0 {
                ties_truth += 1;
            }
            if dp != 0.0 && dt != 0.0 {
                if (dp > 0.0) == (dt > 0.0) {
                    concordant += 1;
                } else {
                    discordant += 1;
                }
            }
        }
    }
    let n0 = (n * (n - 1) / 2) as i64;
    if ties_pred == n0 || ties_truth == n0 {
        return Err(Error::invalid("kendall tau undefined for an all-tied ranking"));
    }
    let denom = (((n0 - ties_pred) as f64) * ((n0 - ties_truth) as f64)).sqrt();
    Ok((concordant - discordant) as f64 / denom)
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointHeader {
    mode: PredictorMode,
    dim: usize,
    vocab: usize,
    tower_widths: Vec<usize>,
    head_widths: Vec<usize>,
    norm_mean: f64,
    norm_std: f64,
}

/// Checkpoint: one JSON header line, then length-prefixed little-endian f32
/// tensors (embed, tower w/b, head w/b, out w/b).
pub fn save_checkpoint<S: Scalar>(p: &DsPredictor<S>) -> Vec<u8> {
    let header = CheckpointHeader {
        mode: p.mode,
        dim: p.dim,
        vocab: p.vocab,
        tower_widths: p.tower.iter().map(|l| l.out_dim()).collect(),
        head_widths: p.head.iter().map(|l| l.out_dim()).collect(),
        norm_mean: p.norm_mean,
        norm_std: p.norm_std,
    };
    let mut out = serde_json::to_vec(&header).expect("header serialization");
    out.push(b'\n');
    for s in p.param_slices() {
        out.extend_from_slice(&(s.len() as u32).to_le_bytes());
        for v in s {
            out.extend_from_slice(&(v.to_f64_lossy() as f32).to_le_bytes());
        }
    }
    out
}

pub fn load_checkpoint<S: Scalar>(bytes: &[u8]) -> Result<DsPredictor<S>> {
    let newline = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::invalid("checkpoint missing header line"))?;
    let header: CheckpointHeader = serde_json::from_slice(&bytes[..newline])?;
    let mut p = DsPredictor::<S>::new(header.mode, header.dim, 0);
    if p.tower.iter().map(|l| l.out_dim()).collect::<Vec<_>>() != header.tower_widths
        || p.head.iter().map(|l| l.out_dim()).collect::<Vec<_>>() != header.head_widths
        || p.vocab != header.vocab
    {
        return Err(Error::validation("checkpoint layer widths do not match"));
    }
    p.norm_mean = header.norm_mean;
    p.norm_std = header.norm_std;
    let mut at = newline + 1;
    for s in p.param_slices_mut() {
        if at + 4 > bytes.len() {
            return Err(Error::invalid("checkpoint truncated"));
        }
        let len = u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap()) as usize;
        at += 4;
        if len != s.len() {
            return Err(Error::shape(format!(
                "checkpoint tensor length {len} != expected {}",
                s.len()
            )));
        }
        if at + 4 * len > bytes.len() {
            return Err(Error::invalid("checkpoint truncated"));
        }
        for v in s.iter_mut() {
            *v = S::from_f64_lossy(
                f32::from_le_bytes(bytes[at..at + 4].try_into().unwrap()) as f64
            );
            at += 4;
        }
    }
    if at != bytes.len() {
        return Err(Error::invalid("trailing bytes in checkpoint"));
    }
    Ok(p)
}
