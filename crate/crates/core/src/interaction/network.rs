//! Genotype-driven encoder-decoder network over point clouds.
//!
//! Encoder stages run IRB point operators: expand FC -> ReLU -> interaction
//! -> ReLU -> project FC, residual when stride 1 and matching widths. The
//! first operator of a stage maps in-width to out-width with the stage
//! stride; the remaining depth-1 operators are stride-1 at out-width.
//! Stride-2 stages subsample to the next hierarchy level (cell doubles) and
//! query the coarse centers against the fine support.
//!
//! Decoder (1/2-stride) stages copy each fine point's nearest coarse
//! neighbor's features, concatenate the encoder skip features of matching
//! resolution, and apply one projection FC (+ReLU). The genotype's decoder
//! kernel/order/expansion genes stay searchable but do not add structure
//! here; the projection is what reproduces the reference parameter budget.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::{correlation, make_disposition, InfluenceRadius, KernelDisposition};
use crate::linalg::Mat;
use crate::pointcloud::{grid_subsample, radius_neighbors, NeighborIndex, PointCloud};
use crate::scalar::{relu, Scalar};
use crate::searchspace::{Genotype, SearchSpaceSpec, Stride, STRIDES};

use super::{
    first_order_forward, second_order_forward, GateMlp, InteractionParams, PointOperatorConfig,
};
use crate::searchspace::Order;

/// Geometry and sizing knobs of the reference forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkConfig<S> {
    /// Grid cell at the input resolution (level 0); doubles per level.
    pub base_cell: S,
    /// Neighborhood radius = radius_factor * cell(level); also the kernel radius.
    pub radius_factor: S,
    /// Influence radius delta = delta_factor * kernel radius.
    pub delta_factor: S,
    pub max_neighbors: usize,
    pub n_classes: usize,
}

impl<S: Scalar> Default for NetworkConfig<S> {
    fn default() -> Self {
        NetworkConfig {
            base_cell: S::from_f64_lossy(0.06),
            radius_factor: S::from_f64_lossy(2.5),
            delta_factor: S::from_f64_lossy(0.5),
            max_neighbors: 40,
            n_classes: 19,
        }
    }
}

/// Structure of one stage as derived from the genotype.
#[derive(Debug, Clone, PartialEq)]
pub enum StagePlan {
    Encoder {
        /// Hierarchy level of the stage output.
        level: usize,
        ops: Vec<PointOperatorConfig>,
    },
    Decoder {
        /// Hierarchy level of the stage output (one finer than its input).
        level: usize,
        /// Upsampled width + skip width.
        in_width: usize,
        out_width: usize,
        /// Encoder stage (index) whose output is concatenated.
        skip_stage: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkPlan {
    pub stages: Vec<StagePlan>,
}

impl NetworkPlan {
    pub fn stage1_in_width(&self) -> usize {
        match &self.stages[0] {
            StagePlan::Encoder { ops, .. } => ops[0].in_width,
            StagePlan::Decoder { .. } => unreachable!("stage 1 is an encoder stage"),
        }
    }

    pub fn final_width(&self) -> usize {
        match self.stages.last().expect("nonempty plan") {
            StagePlan::Encoder { ops, .. } => ops.last().unwrap().out_width,
            StagePlan::Decoder { out_width, .. } => *out_width,
        }
    }

    /// Deepest hierarchy level reached by the encoder.
    pub fn max_level(&self) -> usize {
        self.stages
            .iter()
            .map(|s| match s {
                StagePlan::Encoder { level, .. } | StagePlan::Decoder { level, .. } => *level,
            })
            .max()
            .unwrap_or(0)
    }
}

/// Derive the stage/operator structure from a genotype. Validates against
/// the space first unless the genotype carries the out-of-space flag.
pub fn plan_network(g: &Genotype, space: &SearchSpaceSpec) -> Result<NetworkPlan> {
    space.validate(g)?;
    let mut stages = Vec::with_capacity(g.stages.len());
    let mut level = 0usize;
    let mut prev_width = g.stages[0].width;
    let mut out_widths = Vec::with_capacity(g.stages.len());
    let mut last_encoder_at_level: HashMap<usize, usize> = HashMap::new();
    for (i, gene) in g.stages.iter().enumerate() {
        match STRIDES[i] {
            Stride::One | Stride::Two => {
                if STRIDES[i] == Stride::Two {
                    level += 1;
                }
                if gene.depth == 0 {
                    return Err(Error::validation(format!("stage {}: zero depth", i + 1)));
                }
                let mut ops = Vec::with_capacity(gene.depth);
                ops.push(PointOperatorConfig {
                    order: gene.order,
                    kernel: gene.kernel,
                    in_width: prev_width,
                    out_width: gene.width,
                    expansion: gene.expansion,
                    stride: STRIDES[i],
                });
                for _ in 1..gene.depth {
                    ops.push(PointOperatorConfig {
                        order: gene.order,
                        kernel: gene.kernel,
                        in_width: gene.width,
                        out_width: gene.width,
                        expansion: gene.expansion,
                        stride: Stride::One,
                    });
                }
                stages.push(StagePlan::Encoder { level, ops });
                last_encoder_at_level.insert(level, i);
                prev_width = gene.width;
            }
            Stride::Up2 => {
                if level == 0 {
                    return Err(Error::validation("decoder stage below input resolution"));
                }
                level -= 1;
                let skip_stage = *last_encoder_at_level.get(&level).ok_or_else(|| {
                    Error::validation(format!("no encoder output at level {level}"))
                })?;
                let skip_width = out_widths[skip_stage];
                stages.push(StagePlan::Decoder {
                    level,
                    in_width: prev_width + skip_width,
                    out_width: gene.width,
                    skip_stage,
                });
                prev_width = gene.width;
            }
        }
        out_widths.push(gene.width);
    }
    if level != 0 {
        return Err(Error::validation("network does not return to input resolution"));
    }
    Ok(NetworkPlan { stages })
}

/// Weights of one IRB point operator.
#[derive(Debug, Clone, PartialEq)]
pub struct OperatorWeights<S> {
    /// in_width x expanded
    pub expand: Mat<S>,
    pub inter: InteractionParams<S>,
    /// expanded x out_width
    pub project: Mat<S>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum StageWeights<S> {
    Encoder(Vec<OperatorWeights<S>>),
    Decoder {
        /// (upsampled + skip) x out_width
        project: Mat<S>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkWeights<S> {
    /// input_dim x stage-1 in-width
    pub stem: Mat<S>,
    pub stages: Vec<StageWeights<S>>,
    /// final width x n_classes
    pub head: Mat<S>,
}

fn uniform_mat<S: Scalar>(rows: usize, cols: usize, fan_in: usize, rng: &mut impl Rng) -> Mat<S> {
    let s = 1.0 / (fan_in.max(1) as f64).sqrt();
    Mat::from_fn(rows, cols, |_, _| S::from_f64_lossy(rng.gen_range(-s..s)))
}

/// Seeded uniform(-s, s) initialization with s = 1/sqrt(fan_in); gating
/// biases start at zero. Tensors are drawn in genotype-traversal order.
pub fn init_weights<S: Scalar>(
    plan: &NetworkPlan,
    input_dim: usize,
    n_classes: usize,
    seed: u64,
) -> NetworkWeights<S> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let stem = uniform_mat(input_dim, plan.stage1_in_width(), input_dim, &mut rng);
    let mut stages = Vec::with_capacity(plan.stages.len());
    for stage in &plan.stages {
        match stage {
            StagePlan::Encoder { ops, .. } => {
                let mut ws = Vec::with_capacity(ops.len());
                for cfg in ops {
                    let exp = cfg.expanded_width();
                    let k = cfg.kernel.kernel_points();
                    let expand = uniform_mat(cfg.in_width, exp, cfg.in_width, &mut rng);
                    let w = uniform_mat(k, exp, k, &mut rng);
                    let inter = match cfg.order {
                        Order::First => InteractionParams::first_order(w),
                        Order::Second => {
                            let gate = GateMlp {
                                w1: uniform_mat(k, k, k, &mut rng),
                                b1: vec![S::zero(); k],
                                w2: uniform_mat(k, k, k, &mut rng),
                                b2: vec![S::zero(); k],
                            };
                            InteractionParams::second_order(w, gate).expect("shapes by construction")
                        }
                    };
                    let project = uniform_mat(exp, cfg.out_width, exp, &mut rng);
                    ws.push(OperatorWeights {
                        expand,
                        inter,
                        project,
                    });
                }
                stages.push(StageWeights::Encoder(ws));
            }
            StagePlan::Decoder {
                in_width,
                out_width,
                ..
            } => {
                stages.push(StageWeights::Decoder {
                    project: uniform_mat(*in_width, *out_width, *in_width, &mut rng),
                });
            }
        }
    }
    let head = uniform_mat(plan.final_width(), n_classes, plan.final_width(), &mut rng);
    NetworkWeights { stem, stages, head }
}

fn check_operator_weights<S: Scalar>(
    cfg: &PointOperatorConfig,
    w: &OperatorWeights<S>,
) -> Result<()> {
    let exp = cfg.expanded_width();
    let k = cfg.kernel.kernel_points();
    if w.expand.rows() != cfg.in_width || w.expand.cols() != exp {
        return Err(Error::shape(format!(
            "expand FC is {}x{}, expected {}x{}",
            w.expand.rows(),
            w.expand.cols(),
            cfg.in_width,
            exp
        )));
    }
    if w.inter.k() != k || w.inter.width() != exp {
        return Err(Error::shape(format!(
            "interaction weights are {}x{}, expected {}x{}",
            w.inter.k(),
            w.inter.width(),
            k,
            exp
        )));
    }
    if w.inter.order() != cfg.order {
        return Err(Error::shape("interaction order mismatch"));
    }
    if w.project.rows() != exp || w.project.cols() != cfg.out_width {
        return Err(Error::shape(format!(
            "project FC is {}x{}, expected {}x{}",
            w.project.rows(),
            w.project.cols(),
            exp,
            cfg.out_width
        )));
    }
    Ok(())
}

/// One IRB point operator: features at the centers, width out_width.
pub fn point_operator_forward<S: Scalar>(
    support: &PointCloud<S>,
    neighbors: &NeighborIndex,
    centers: &PointCloud<S>,
    cfg: &PointOperatorConfig,
    weights: &OperatorWeights<S>,
    disp: &KernelDisposition<S>,
    delta: InfluenceRadius<S>,
) -> Result<Mat<S>> {
    check_operator_weights(cfg, weights)?;
    if disp.kind != cfg.kernel {
        return Err(Error::shape("disposition kind does not match operator kernel"));
    }
    if support.d() != cfg.in_width {
        return Err(Error::shape(format!(
            "support width {} != operator in-width {}",
            support.d(),
            cfg.in_width
        )));
    }
    if neighbors.n_queries() != centers.n() {
        return Err(Error::shape("neighbor index does not match centers"));
    }
    if neighbors.shadow() != support.n() {
        return Err(Error::shape("neighbor index does not match support"));
    }
    if cfg.has_residual() && centers.d() != cfg.in_width {
        return Err(Error::shape("residual requires center features of in-width"));
    }

    let exp_w = cfg.expanded_width();
    // expand + ReLU once per support point
    let mut expanded = Mat::zeros(support.n(), exp_w);
    for i in 0..support.n() {
        let frow = support.features().row(i);
        let out = expanded.row_mut(i);
        for (j, &x) in frow.iter().enumerate() {
            let wrow = weights.expand.row(j);
            for (o, &wjk) in out.iter_mut().zip(wrow) {
                *o += x * wjk;
            }
        }
        for o in out.iter_mut() {
            *o = relu(*o);
        }
    }

    let mut result = Mat::zeros(centers.n(), cfg.out_width);
    let mut rel: Vec<[S; 3]> = Vec::new();
    for c in 0..centers.n() {
        let nbrs = neighbors.neighbors(c);
        let cpos = centers.position(c);
        let mut inter_out = vec![S::zero(); exp_w];
        if !nbrs.is_empty() {
            rel.clear();
            let mut feats = Mat::zeros(nbrs.len(), exp_w);
            for (row, &i) in nbrs.iter().enumerate() {
                let p = support.position(i);
                rel.push([p[0] - cpos[0], p[1] - cpos[1], p[2] - cpos[2]]);
                feats.row_mut(row).copy_from_slice(expanded.row(i));
            }
            let h = correlation(&rel, disp, delta)?;
            inter_out = match cfg.order {
                Order::First => first_order_forward(&feats, &h, &weights.inter)?,
                Order::Second => second_order_forward(&feats, &h, nbrs.len(), &weights.inter)?,
            };
        }
        for v in inter_out.iter_mut() {
            *v = relu(*v);
        }
        let out = result.row_mut(c);
        for (j, &x) in inter_out.iter().enumerate() {
            let wrow = weights.project.row(j);
            for (o, &wjk) in out.iter_mut().zip(wrow) {
                *o += x * wjk;
            }
        }
        if cfg.has_residual() {
            for (o, &f) in out.iter_mut().zip(centers.features().row(c)) {
                *o += f;
            }
        }
    }
    Ok(result)
}

fn nearest_index<S: Scalar>(p: [S; 3], candidates: &[[S; 3]]) -> usize {
    let mut best = 0usize;
    let mut best_d = S::infinity();
    for (i, c) in candidates.iter().enumerate() {
        let dx = p[0] - c[0];
        let dy = p[1] - c[1];
        let dz = p[2] - c[2];
        let d = dx * dx + dy * dy + dz * dz;
        if d < best_d {
            best_d = d;
            best = i;
        }
    }
    best
}

/// Full encoder-decoder forward: per-point class logits at input resolution.
pub fn network_forward<S: Scalar>(
    g: &Genotype,
    space: &SearchSpaceSpec,
    cloud: &PointCloud<S>,
    weights: &NetworkWeights<S>,
    config: &NetworkConfig<S>,
) -> Result<PointCloud<S>> {
    let plan = plan_network(g, space)?;
    if weights.stages.len() != plan.stages.len() {
        return Err(Error::shape("weights do not match plan stage count"));
    }
    if weights.stem.rows() != cloud.d() || weights.stem.cols() != plan.stage1_in_width() {
        return Err(Error::shape(format!(
            "stem FC is {}x{}, expected {}x{}",
            weights.stem.rows(),
            weights.stem.cols(),
            cloud.d(),
            plan.stage1_in_width()
        )));
    }
    if weights.head.rows() != plan.final_width() || weights.head.cols() != config.n_classes {
        return Err(Error::shape("head FC shape mismatch"));
    }
    if cloud.n() == 0 {
        return PointCloud::new(Vec::new(), Mat::zeros(0, config.n_classes));
    }

    let cell_at = |level: usize| -> S {
        let mut c = config.base_cell;
        for _ in 0..level {
            c = c + c;
        }
        c
    };
    let radius_at = |level: usize| config.radius_factor * cell_at(level);

    // stem (linear)
    let mut feats = Mat::zeros(cloud.n(), plan.stage1_in_width());
    for i in 0..cloud.n() {
        let row = cloud.features().row(i);
        let out = feats.row_mut(i);
        for (j, &x) in row.iter().enumerate() {
            for (o, &wjk) in out.iter_mut().zip(weights.stem.row(j)) {
                *o += x * wjk;
            }
        }
    }

    // positions per hierarchy level; level 0 is the input
    let mut level_positions: Vec<Vec<[S; 3]>> = vec![cloud.positions().to_vec()];
    let mut self_neighbors: HashMap<usize, NeighborIndex> = HashMap::new();
    let mut dispositions: HashMap<(usize, crate::geometry::DispositionKind), KernelDisposition<S>> =
        HashMap::new();
    let mut encoder_outputs: Vec<Option<Mat<S>>> = vec![None; plan.stages.len()];

    let mut cur_level = 0usize;
    let mut cur_feats = feats;

    for (stage_idx, stage) in plan.stages.iter().enumerate() {
        match stage {
            StagePlan::Encoder { level, ops } => {
                for (op_idx, cfg) in ops.iter().enumerate() {
                    let strided = op_idx == 0 && cfg.stride == Stride::Two;
                    let r = radius_at(*level);
                    let delta = InfluenceRadius::new(config.delta_factor * r)?;
                    let disp = dispositions
                        .entry((*level, cfg.kernel))
                        .or_insert_with(|| {
                            make_disposition(cfg.kernel, r).expect("positive radius")
                        })
                        .clone();
                    let support =
                        PointCloud::new(level_positions[cur_level].clone(), cur_feats.clone())?;
                    let (centers, neighbors) = if strided {
                        let coarse = grid_subsample(&support, cell_at(*level))?;
                        level_positions.push(coarse.positions().to_vec());
                        debug_assert_eq!(level_positions.len() - 1, *level);
                        let nb = radius_neighbors(&coarse, &support, r, config.max_neighbors)?;
                        (coarse, nb)
                    } else {
                        let nb = match self_neighbors.get(level) {
                            Some(nb) => nb.clone(),
                            None => {
                                let nb =
                                    radius_neighbors(&support, &support, r, config.max_neighbors)?;
                                self_neighbors.insert(*level, nb.clone());
                                nb
                            }
                        };
                        (support.clone(), nb)
                    };
                    cur_feats =
                        point_operator_forward(&support, &neighbors, &centers, cfg, match &weights.stages[stage_idx] {
                            StageWeights::Encoder(ws) => &ws[op_idx],
                            StageWeights::Decoder { .. } => {
                                return Err(Error::shape("encoder stage has decoder weights"))
                            }
                        }, &disp, delta)?;
                    cur_level = *level;
                }
                encoder_outputs[stage_idx] = Some(cur_feats.clone());
            }
            StagePlan::Decoder {
                level,
                in_width,
                out_width,
                skip_stage,
            } => {
                let project = match &weights.stages[stage_idx] {
                    StageWeights::Decoder { project } => project,
                    StageWeights::Encoder(_) => {
                        return Err(Error::shape("decoder stage has encoder weights"))
                    }
                };
                if project.rows() != *in_width || project.cols() != *out_width {
                    return Err(Error::shape("decoder projection shape mismatch"));
                }
                let skip = encoder_outputs[*skip_stage]
                    .as_ref()
                    .ok_or_else(|| Error::shape("missing encoder skip features"))?;
                let fine = &level_positions[*level];
                let coarse = &level_positions[cur_level];
                if skip.rows() != fine.len() {
                    return Err(Error::shape("skip features do not match fine level"));
                }
                let up_width = cur_feats.cols();
                if up_width + skip.cols() != *in_width {
                    return Err(Error::shape("decoder concat width mismatch"));
                }
                let mut out = Mat::zeros(fine.len(), *out_width);
                let mut concat = vec![S::zero(); *in_width];
                for (i, p) in fine.iter().enumerate() {
                    let nn = nearest_index(*p, coarse);
                    concat[..up_width].copy_from_slice(cur_feats.row(nn));
                    concat[up_width..].copy_from_slice(skip.row(i));
                    let orow = out.row_mut(i);
                    for (j, &x) in concat.iter().enumerate() {
                        for (o, &wjk) in orow.iter_mut().zip(project.row(j)) {
                            *o += x * wjk;
                        }
                    }
                    for o in orow.iter_mut() {
                        *o = relu(*o);
                    }
                }
                cur_feats = out;
                cur_level = *level;
            }
        }
    }

    // head (linear)
    let mut logits = Mat::zeros(cloud.n(), config.n_classes);
    for i in 0..cloud.n() {
        let row = cur_feats.row(i);
        let out = logits.row_mut(i);
        for (j, &x) in row.iter().enumerate() {
            for (o, &wjk) in out.iter_mut().zip(weights.head.row(j)) {
                *o += x * wjk;
            }
        }
    }
    PointCloud::new(cloud.positions().to_vec(), logits)
}

fn push_tensor<S: Scalar>(out: &mut Vec<u8>, data: &[S]) {
    out.extend_from_slice(&(data.len() as u32).to_le_bytes());
    for v in data {
        out.extend_from_slice(&(v.to_f64_lossy() as f32).to_le_bytes());
    }
}

/// Serialize weights as length-prefixed little-endian f32 tensors in
/// genotype-traversal order (stem, per-stage operator tensors, head).
pub fn write_weights<S: Scalar>(weights: &NetworkWeights<S>) -> Vec<u8> {
    let mut out = Vec::new();
    push_tensor(&mut out, weights.stem.as_slice());
    for stage in &weights.stages {
        match stage {
            StageWeights::Encoder(ops) => {
                for op in ops {
                    push_tensor(&mut out, op.expand.as_slice());
                    push_tensor(&mut out, op.inter.w.as_slice());
                    if let Some(gate) = &op.inter.gate {
                        push_tensor(&mut out, gate.w1.as_slice());
                        push_tensor(&mut out, &gate.b1);
                        push_tensor(&mut out, gate.w2.as_slice());
                        push_tensor(&mut out, &gate.b2);
                    }
                    push_tensor(&mut out, op.project.as_slice());
                }
            }
            StageWeights::Decoder { project } => push_tensor(&mut out, project.as_slice()),
        }
    }
    push_tensor(&mut out, weights.head.as_slice());
    out
}

struct TensorReader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> TensorReader<'a> {
    fn next<S: Scalar>(&mut self, expect: usize) -> Result<Vec<S>> {
        if self.at + 4 > self.bytes.len() {
            return Err(Error::invalid("weights blob truncated"));
        }
        let len =
            u32::from_le_bytes(self.bytes[self.at..self.at + 4].try_into().unwrap()) as usize;
        self.at += 4;
        if len != expect {
            return Err(Error::shape(format!(
                "tensor length {len} does not match expected {expect}"
            )));
        }
        if self.at + 4 * len > self.bytes.len() {
            return Err(Error::invalid("weights blob truncated"));
        }
        let mut data = Vec::with_capacity(len);
        for _ in 0..len {
            let v = f32::from_le_bytes(self.bytes[self.at..self.at + 4].try_into().unwrap());
            self.at += 4;
            data.push(S::from_f64_lossy(v as f64));
        }
        Ok(data)
    }
}

/// Inverse of [`write_weights`] given the plan the blob was written for.
pub fn read_weights<S: Scalar>(
    plan: &NetworkPlan,
    input_dim: usize,
    n_classes: usize,
    bytes: &[u8],
) -> Result<NetworkWeights<S>> {
    let mut r = TensorReader { bytes, at: 0 };
    let w1 = plan.stage1_in_width();
    let stem = Mat::from_vec(input_dim, w1, r.next(input_dim * w1)?);
    let mut stages = Vec::with_capacity(plan.stages.len());
    for stage in &plan.stages {
        match stage {
            StagePlan::Encoder { ops, .. } => {
                let mut ws = Vec::with_capacity(ops.len());
                for cfg in ops {
                    let exp = cfg.expanded_width();
                    let k = cfg.kernel.kernel_points();
                    let expand = Mat::from_vec(cfg.in_width, exp, r.next(cfg.in_width * exp)?);
                    let w = Mat::from_vec(k, exp, r.next(k * exp)?);
                    let inter = match cfg.order {
                        Order::First => InteractionParams::first_order(w),
                        Order::Second => {
                            let gate = GateMlp {
                                w1: Mat::from_vec(k, k, r.next(k * k)?),
                                b1: r.next(k)?,
                                w2: Mat::from_vec(k, k, r.next(k * k)?),
                                b2: r.next(k)?,
                            };
                            InteractionParams::second_order(w, gate)?
                        }
                    };
                    let project = Mat::from_vec(exp, cfg.out_width, r.next(exp * cfg.out_width)?);
                    ws.push(OperatorWeights {
                        expand,
                        inter,
                        project,
                    });
                }
                stages.push(StageWeights::Encoder(ws));
            }
            StagePlan::Decoder {
                in_width,
                out_width,
                ..
            } => {
                stages.push(StageWeights::Decoder {
                    project: Mat::from_vec(*in_width, *out_width, r.next(in_width * out_width)?),
                });
            }
        }
    }
    let fw = plan.final_width();
    let head = Mat::from_vec(fw, n_classes, r.next(fw * n_classes)?);
    if r.at != bytes.len() {
        return Err(Error::invalid("trailing bytes in weights blob"));
    }
    Ok(NetworkWeights { stem, stages, head })
}
