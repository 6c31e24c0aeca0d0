//! First- and second-order point interactions.
//!
//! An interaction aggregates neighbor features onto a center point through
//! the kernel-point correlation matrix. First order is depthwise: each kernel
//! point carries one weight per channel, so the layer costs K*D parameters
//! instead of the K*D*D of a full kernel-point convolution. Second order
//! re-calibrates the correlation with a density-aware gate before
//! aggregating.
//!
//! Shadow convention: rows at index >= `valid_rows` are padding. They are
//! excluded from the gate's neighbor mean and must carry zero features, so
//! appending shadow rows never changes any output.

mod network;

pub use network::{
    init_weights, network_forward, plan_network, point_operator_forward, read_weights,
    write_weights, NetworkConfig, NetworkPlan, NetworkWeights, OperatorWeights, StagePlan,
    StageWeights,
};

use crate::error::{Error, Result};
use crate::geometry::DispositionKind;
use crate::linalg::Mat;
use crate::scalar::{relu, sigmoid, Scalar};
use crate::searchspace::{Order, Stride};

/// Two-layer gating MLP of the second-order interaction.
#[derive(Debug, Clone, PartialEq)]
pub struct GateMlp<S> {
    /// K x K_h
    pub w1: Mat<S>,
    pub b1: Vec<S>,
    /// K_h x K
    pub w2: Mat<S>,
    pub b2: Vec<S>,
}

impl<S: Scalar> GateMlp<S> {
    pub fn zeros(k: usize) -> Self {
        GateMlp {
            w1: Mat::zeros(k, k),
            b1: vec![S::zero(); k],
            w2: Mat::zeros(k, k),
            b2: vec![S::zero(); k],
        }
    }

    /// g = sigmoid(W2^T relu(W1^T p + b1) + b2)
    pub fn strengths(&self, pooled: &[S]) -> Vec<S> {
        let mut hidden = self.w1.vec_mul(pooled);
        for (h, &b) in hidden.iter_mut().zip(&self.b1) {
            *h = relu(*h + b);
        }
        let mut out = self.w2.vec_mul(&hidden);
        for (o, &b) in out.iter_mut().zip(&self.b2) {
            *o = sigmoid(*o + b);
        }
        out
    }
}

/// Per-kernel-point interaction weights, plus the gating MLP for second order.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionParams<S> {
    order: Order,
    /// K x D depthwise weights.
    pub w: Mat<S>,
    pub gate: Option<GateMlp<S>>,
    /// Running mean of pooled correlations, recorded explicitly via
    /// [`InteractionParams::record_pooled`]; consumed by [`gate_strengths`].
    recorded_pooled: Option<(usize, Vec<S>)>,
}

impl<S: Scalar> InteractionParams<S> {
    pub fn first_order(w: Mat<S>) -> Self {
        InteractionParams {
            order: Order::First,
            w,
            gate: None,
            recorded_pooled: None,
        }
    }

    pub fn second_order(w: Mat<S>, gate: GateMlp<S>) -> Result<Self> {
        if gate.w1.rows() != w.rows() || gate.w2.cols() != w.rows() {
            return Err(Error::shape("gating MLP does not match kernel count"));
        }
        Ok(InteractionParams {
            order: Order::Second,
            w,
            gate: Some(gate),
            recorded_pooled: None,
        })
    }

    pub fn order(&self) -> Order {
        self.order
    }

    pub fn k(&self) -> usize {
        self.w.rows()
    }

    pub fn width(&self) -> usize {
        self.w.cols()
    }

    /// Fold one pooled correlation vector into the recorded running mean.
    pub fn record_pooled(&mut self, pooled: &[S]) {
        assert_eq!(pooled.len(), self.k());
        match &mut self.recorded_pooled {
            None => self.recorded_pooled = Some((1, pooled.to_vec())),
            Some((count, mean)) => {
                *count += 1;
                let inv = S::one() / S::from_f64_lossy(*count as f64);
                for (m, &p) in mean.iter_mut().zip(pooled) {
                    *m += (p - *m) * inv;
                }
            }
        }
    }

    pub fn recorded_pooled(&self) -> Option<&[S]> {
        self.recorded_pooled.as_ref().map(|(_, m)| m.as_slice())
    }
}

fn check_aggregation_shapes<S: Scalar>(
    feats: &Mat<S>,
    h: &Mat<S>,
    params: &InteractionParams<S>,
) -> Result<()> {
    if feats.rows() != h.rows() {
        return Err(Error::shape(format!(
            "feature rows ({}) != correlation rows ({})",
            feats.rows(),
            h.rows()
        )));
    }
    if h.cols() != params.k() {
        return Err(Error::shape(format!(
            "correlation cols ({}) != kernel count ({})",
            h.cols(),
            params.k()
        )));
    }
    if feats.cols() != params.width() {
        return Err(Error::shape(format!(
            "feature width ({}) != weight width ({})",
            feats.cols(),
            params.width()
        )));
    }
    Ok(())
}

/// out[d] = sum_k w[k][d] * sum_i h[i][k] * feats[i][d]
fn aggregate<S: Scalar>(feats: &Mat<S>, h: &Mat<S>, w: &Mat<S>) -> Vec<S> {
    let d = feats.cols();
    let mut out = vec![S::zero(); d];
    let mut kernel_feat = vec![S::zero(); d];
    for k in 0..w.rows() {
        for v in kernel_feat.iter_mut() {
            *v = S::zero();
        }
        for i in 0..feats.rows() {
            let hik = h.get(i, k);
            if hik == S::zero() {
                continue;
            }
            let frow = feats.row(i);
            for (kf, &f) in kernel_feat.iter_mut().zip(frow) {
                *kf += hik * f;
            }
        }
        let wrow = w.row(k);
        for ((o, &kf), &wd) in out.iter_mut().zip(&kernel_feat).zip(wrow) {
            *o += kf * wd;
        }
    }
    out
}

/// Depthwise first-order aggregation of one center point's neighborhood.
pub fn first_order_forward<S: Scalar>(
    feats: &Mat<S>,
    h_l: &Mat<S>,
    params: &InteractionParams<S>,
) -> Result<Vec<S>> {
    if params.order() != Order::First {
        return Err(Error::invalid("first_order_forward requires first-order params"));
    }
    check_aggregation_shapes(feats, h_l, params)?;
    Ok(aggregate(feats, h_l, &params.w))
}

/// Mean of the first `valid_rows` correlation rows (zero vector when empty).
pub fn pooled_correlation<S: Scalar>(h_l: &Mat<S>, valid_rows: usize) -> Vec<S> {
    let k = h_l.cols();
    let mut p = vec![S::zero(); k];
    if valid_rows == 0 {
        return p;
    }
    for i in 0..valid_rows.min(h_l.rows()) {
        for (pk, &hik) in p.iter_mut().zip(h_l.row(i)) {
            *pk += hik;
        }
    }
    let inv = S::one() / S::from_f64_lossy(valid_rows as f64);
    for pk in p.iter_mut() {
        *pk *= inv;
    }
    p
}

/// Density-aware re-calibration: H_g[i][k] = g[k] * h_l[i][k] with
/// g = sigmoid(MLP(mean over valid neighbors of h_l)).
pub fn gate<S: Scalar>(
    h_l: &Mat<S>,
    valid_rows: usize,
    params: &InteractionParams<S>,
) -> Result<Mat<S>> {
    let mlp = params
        .gate
        .as_ref()
        .ok_or_else(|| Error::invalid("gate requires second-order params"))?;
    if h_l.cols() != params.k() {
        return Err(Error::shape("correlation cols != kernel count"));
    }
    let pooled = pooled_correlation(h_l, valid_rows);
    let g = mlp.strengths(&pooled);
    let mut out = Mat::zeros(h_l.rows(), h_l.cols());
    for i in 0..h_l.rows() {
        let src = h_l.row(i);
        let dst = out.row_mut(i);
        for ((o, &hik), &gk) in dst.iter_mut().zip(src).zip(&g) {
            *o = gk * hik;
        }
    }
    Ok(out)
}

/// Second-order aggregation: first-order form over (h_l + gate(h_l)) / 2.
pub fn second_order_forward<S: Scalar>(
    feats: &Mat<S>,
    h_l: &Mat<S>,
    valid_rows: usize,
    params: &InteractionParams<S>,
) -> Result<Vec<S>> {
    if params.order() != Order::Second {
        return Err(Error::invalid("second_order_forward requires second-order params"));
    }
    check_aggregation_shapes(feats, h_l, params)?;
    let gated = gate(h_l, valid_rows, params)?;
    let mut blended = Mat::zeros(h_l.rows(), h_l.cols());
    for i in 0..h_l.rows() {
        let a = h_l.row(i);
        let b = gated.row(i);
        let dst = blended.row_mut(i);
        for ((o, &x), &y) in dst.iter_mut().zip(a).zip(b) {
            *o = S::half() * (x + y);
        }
    }
    Ok(aggregate(feats, &blended, &params.w))
}

/// Gate strengths g at a pooled correlation: the caller-supplied vector, the
/// recorded running mean, or the zero vector, in that precedence.
pub fn gate_strengths<S: Scalar>(
    params: &InteractionParams<S>,
    pooled: Option<&[S]>,
) -> Result<Vec<S>> {
    let mlp = params
        .gate
        .as_ref()
        .ok_or_else(|| Error::Unsupported("gate_strengths on first-order params".into()))?;
    let zero;
    let p = match pooled.or_else(|| params.recorded_pooled()) {
        Some(p) => p,
        None => {
            zero = vec![S::zero(); params.k()];
            &zero
        }
    };
    if p.len() != params.k() {
        return Err(Error::shape("pooled vector length != kernel count"));
    }
    Ok(mlp.strengths(p))
}

/// Structural description of one point operator.
#[derive(Debug, Clone, PartialEq)]
pub struct PointOperatorConfig {
    pub order: Order,
    pub kernel: DispositionKind,
    pub in_width: usize,
    pub out_width: usize,
    pub expansion: f64,
    pub stride: Stride,
}

impl PointOperatorConfig {
    /// Channel count of the interaction stage: round(E * D_in).
    pub fn expanded_width(&self) -> usize {
        (self.expansion * self.in_width as f64).round() as usize
    }

    pub fn has_residual(&self) -> bool {
        self.stride == Stride::One && self.in_width == self.out_width
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_mat(rows: usize, cols: usize, rng: &mut impl Rng) -> Mat<f64> {
        Mat::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..1.0))
    }

    /// Straight-line scalar oracle for Eq.-style first-order aggregation.
    fn first_order_oracle(feats: &Mat<f64>, h: &Mat<f64>, w: &Mat<f64>) -> Vec<f64> {
        let mut out = vec![0.0; feats.cols()];
        for d in 0..feats.cols() {
            for k in 0..w.rows() {
                for i in 0..feats.rows() {
                    out[d] += h.get(i, k) * feats.get(i, d) * w.get(k, d);
                }
            }
        }
        out
    }

    /// pool -> mlp -> sigmoid -> broadcast, recomputed long-hand.
    fn gate_oracle(h: &Mat<f64>, valid: usize, mlp: &GateMlp<f64>) -> Mat<f64> {
        let k = h.cols();
        let kh = mlp.b1.len();
        let mut p = vec![0.0; k];
        for i in 0..valid {
            for j in 0..k {
                p[j] += h.get(i, j);
            }
        }
        if valid > 0 {
            for v in p.iter_mut() {
                *v /= valid as f64;
            }
        }
        let mut hidden = vec![0.0; kh];
        for j in 0..kh {
            let mut acc = mlp.b1[j];
            for i in 0..k {
                acc += mlp.w1.get(i, j) * p[i];
            }
            hidden[j] = acc.max(0.0);
        }
        let mut g = vec![0.0; k];
        for j in 0..k {
            let mut acc = mlp.b2[j];
            for i in 0..kh {
                acc += mlp.w2.get(i, j) * hidden[i];
            }
            g[j] = 1.0 / (1.0 + (-acc).exp());
        }
        let mut out = Mat::zeros(h.rows(), k);
        for i in 0..h.rows() {
            for j in 0..k {
                out.set(i, j, g[j] * h.get(i, j));
            }
        }
        out
    }

    fn max_rel_err(a: &[f64], b: &[f64]) -> f64 {
        a.iter()
            .zip(b)
            .map(|(&x, &y)| (x - y).abs() / x.abs().max(y.abs()).max(1e-30))
            .fold(0.0, f64::max)
    }

    #[test]
    fn first_order_zero_correlation_annihilates() {
        let params = InteractionParams::first_order(Mat::from_fn(5, 2, |_, _| 1.0));
        let feats = Mat::from_fn(3, 2, |_, _| 1.0);
        let h = Mat::zeros(3, 5);
        let out = first_order_forward(&feats, &h, &params).unwrap();
        assert_eq!(out, vec![0.0, 0.0]);
    }

    #[test]
    fn first_order_single_term() {
        let params = InteractionParams::first_order(Mat::from_fn(5, 3, |_, _| 1.0));
        let feats = Mat::from_fn(1, 3, |_, _| 1.0);
        let mut h = Mat::zeros(1, 5);
        h.set(0, 2, 1.0);
        let out = first_order_forward(&feats, &h, &params).unwrap();
        assert_eq!(out, vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn first_order_matches_triple_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let n = rng.gen_range(1..8);
            let d = rng.gen_range(1..6);
            let k = rng.gen_range(1..7);
            let feats = rand_mat(n, d, &mut rng);
            let h = rand_mat(n, k, &mut rng);
            let w = rand_mat(k, d, &mut rng);
            let params = InteractionParams::first_order(w.clone());
            let got = first_order_forward(&feats, &h, &params).unwrap();
            let want = first_order_oracle(&feats, &h, &w);
            assert!(max_rel_err(&got, &want) < 1e-10);
        }
    }

    #[test]
    fn gate_zero_mlp_halves_correlation() {
        let k = 7;
        let params =
            InteractionParams::second_order(Mat::from_fn(k, 2, |_, _| 1.0), GateMlp::zeros(k))
                .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let h = rand_mat(4, k, &mut rng);
        let out = gate(&h, 4, &params).unwrap();
        for i in 0..4 {
            for j in 0..k {
                assert!((out.get(i, j) - 0.5 * h.get(i, j)).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn gate_zero_correlation_stays_zero() {
        let k = 5;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mlp = GateMlp {
            w1: rand_mat(k, k, &mut rng),
            b1: (0..k).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            w2: rand_mat(k, k, &mut rng),
            b2: (0..k).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        };
        let params = InteractionParams::second_order(rand_mat(k, 3, &mut rng), mlp).unwrap();
        let h = Mat::zeros(6, k);
        let out = gate(&h, 6, &params).unwrap();
        assert!(out.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gate_matches_scalar_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..100 {
            let k = rng.gen_range(2..9);
            let n = rng.gen_range(1..6);
            let valid = rng.gen_range(0..=n);
            let mlp = GateMlp {
                w1: rand_mat(k, k, &mut rng),
                b1: (0..k).map(|_| rng.gen_range(-0.5..0.5)).collect(),
                w2: rand_mat(k, k, &mut rng),
                b2: (0..k).map(|_| rng.gen_range(-0.5..0.5)).collect(),
            };
            let h = rand_mat(n, k, &mut rng);
            let params =
                InteractionParams::second_order(rand_mat(k, 2, &mut rng), mlp.clone()).unwrap();
            let got = gate(&h, valid, &params).unwrap();
            let want = gate_oracle(&h, valid, &mlp);
            assert!(max_rel_err(got.as_slice(), want.as_slice()) < 1e-10);
        }
    }

    #[test]
    fn second_order_zero_gate_is_three_quarters_first_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let k = 7;
        let d = 4;
        let w = rand_mat(k, d, &mut rng);
        let feats = rand_mat(5, d, &mut rng);
        let h = rand_mat(5, k, &mut rng);
        let p1 = InteractionParams::first_order(w.clone());
        let p2 = InteractionParams::second_order(w, GateMlp::zeros(k)).unwrap();
        let f1 = first_order_forward(&feats, &h, &p1).unwrap();
        let f2 = second_order_forward(&feats, &h, 5, &p2).unwrap();
        for (a, b) in f1.iter().zip(&f2) {
            let rel = (b - 0.75 * a).abs() / a.abs().max(1e-30);
            assert!(rel < 1e-12, "got {b}, want {}", 0.75 * a);
        }
    }

    #[test]
    fn second_order_zero_correlation_is_zero() {
        let k = 5;
        let params =
            InteractionParams::second_order(Mat::from_fn(k, 2, |_, _| 1.0), GateMlp::zeros(k))
                .unwrap();
        let out =
            second_order_forward(&Mat::from_fn(3, 2, |_, _| 1.0), &Mat::zeros(3, k), 3, &params)
                .unwrap();
        assert_eq!(out, vec![0.0, 0.0]);
    }

    #[test]
    fn second_order_matches_composed_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..100 {
            let k = rng.gen_range(2..9);
            let n = rng.gen_range(1..6);
            let d = rng.gen_range(1..5);
            let mlp = GateMlp {
                w1: rand_mat(k, k, &mut rng),
                b1: (0..k).map(|_| rng.gen_range(-0.5..0.5)).collect(),
                w2: rand_mat(k, k, &mut rng),
                b2: (0..k).map(|_| rng.gen_range(-0.5..0.5)).collect(),
            };
            let w = rand_mat(k, d, &mut rng);
            let feats = rand_mat(n, d, &mut rng);
            let h = rand_mat(n, k, &mut rng);
            let params = InteractionParams::second_order(w.clone(), mlp.clone()).unwrap();
            let got = second_order_forward(&feats, &h, n, &params).unwrap();
            // composed oracle: gate oracle, blend, triple loop
            let gated = gate_oracle(&h, n, &mlp);
            let mut blended = Mat::zeros(n, k);
            for i in 0..n {
                for j in 0..k {
                    blended.set(i, j, 0.5 * (h.get(i, j) + gated.get(i, j)));
                }
            }
            let want = first_order_oracle(&feats, &blended, &w);
            assert!(max_rel_err(&got, &want) < 1e-10);
        }
    }

    #[test]
    fn shadow_rows_change_nothing() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let k = 7;
        let d = 3;
        let mlp = GateMlp {
            w1: rand_mat(k, k, &mut rng),
            b1: (0..k).map(|_| rng.gen_range(-0.5..0.5)).collect(),
            w2: rand_mat(k, k, &mut rng),
            b2: (0..k).map(|_| rng.gen_range(-0.5..0.5)).collect(),
        };
        let w = rand_mat(k, d, &mut rng);
        let params = InteractionParams::second_order(w, mlp).unwrap();
        let feats = rand_mat(4, d, &mut rng);
        let h = rand_mat(4, k, &mut rng);
        let base = second_order_forward(&feats, &h, 4, &params).unwrap();

        // pad with zero-feature shadow rows
        let mut feats_pad = Mat::zeros(7, d);
        let mut h_pad = Mat::zeros(7, k);
        for i in 0..4 {
            for j in 0..d {
                feats_pad.set(i, j, feats.get(i, j));
            }
            for j in 0..k {
                h_pad.set(i, j, h.get(i, j));
            }
        }
        let padded = second_order_forward(&feats_pad, &h_pad, 4, &params).unwrap();
        assert_eq!(base, padded);
    }

    #[test]
    fn permuting_neighbors_preserves_output() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let k = 5;
        let d = 4;
        let n = 6;
        let w = rand_mat(k, d, &mut rng);
        let feats = rand_mat(n, d, &mut rng);
        let h = rand_mat(n, k, &mut rng);
        let params = InteractionParams::first_order(w);
        let base = first_order_forward(&feats, &h, &params).unwrap();
        let perm = [3usize, 0, 5, 1, 4, 2];
        let feats_p = Mat::from_fn(n, d, |i, j| feats.get(perm[i], j));
        let h_p = Mat::from_fn(n, k, |i, j| h.get(perm[i], j));
        let permuted = first_order_forward(&feats_p, &h_p, &params).unwrap();
        for (a, b) in base.iter().zip(&permuted) {
            assert!((a - b).abs() / a.abs().max(1e-30) < 1e-6);
        }
    }

    #[test]
    fn gate_strengths_zero_mlp() {
        let params =
            InteractionParams::second_order(Mat::from_fn(7, 2, |_, _| 1.0), GateMlp::zeros(7))
                .unwrap();
        let g = gate_strengths(&params, None).unwrap();
        assert_eq!(g.len(), 7);
        assert!(g.iter().all(|&v| v == 0.5));
    }

    #[test]
    fn gate_strengths_large_logit_path() {
        // one kernel fed a strongly positive path through the MLP
        let k = 4;
        let mut w1 = Mat::zeros(k, k);
        w1.set(0, 0, 5.0);
        let mut w2 = Mat::zeros(k, k);
        w2.set(0, 2, 5.0);
        let mlp = GateMlp {
            w1,
            b1: vec![0.0; k],
            w2,
            b2: vec![0.0; k],
        };
        let params = InteractionParams::second_order(Mat::from_fn(k, 1, |_, _| 1.0), mlp).unwrap();
        let g = gate_strengths(&params, Some(&[1.0, 0.0, 0.0, 0.0])).unwrap();
        // scalar recomputation: hidden0 = 5, logit2 = 25, sigmoid(25) ~ 1
        assert!(g[2] > 0.5);
        assert!((g[2] - 1.0 / (1.0 + (-25.0f64).exp())).abs() < 1e-12);
        assert_eq!(g[1], 0.5);
    }

    #[test]
    fn gate_strengths_errors_on_first_order() {
        let params = InteractionParams::<f64>::first_order(Mat::zeros(5, 2));
        assert!(matches!(
            gate_strengths(&params, None),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn recorded_pooled_running_mean() {
        let mut params =
            InteractionParams::second_order(Mat::<f64>::zeros(2, 1), GateMlp::zeros(2)).unwrap();
        params.record_pooled(&[1.0, 0.0]);
        params.record_pooled(&[0.0, 1.0]);
        let m = params.recorded_pooled().unwrap();
        assert!((m[0] - 0.5).abs() < 1e-15);
        assert!((m[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn shape_errors_are_reported() {
        let params = InteractionParams::first_order(Mat::<f64>::zeros(5, 2));
        let bad_h = Mat::zeros(3, 4); // wrong K
        assert!(first_order_forward(&Mat::zeros(3, 2), &bad_h, &params).is_err());
        let bad_f = Mat::zeros(2, 2); // wrong rows
        assert!(first_order_forward(&bad_f, &Mat::zeros(3, 5), &params).is_err());
    }
}
