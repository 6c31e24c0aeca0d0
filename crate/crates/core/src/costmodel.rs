//! Analytic parameter and MAC counting for point operators and whole
//! genotypes.
//!
//! Counting conventions (pinned by the instrumented multiply-counting oracle
//! in the tests, so formula and oracle cannot drift apart):
//!
//! * correlation: 4 mult-adds per (neighbor, kernel) pair — three squared
//!   coordinate differences plus one delta scaling;
//! * aggregation: 1 fused op per (neighbor, kernel, channel);
//! * gating (second order): avg_n*K pool + 2*K*K_h MLP + avg_n*K broadcast;
//! * expand/project FCs: one MAC per weight per center.
//!
//! Biases are excluded from parameter counts. Preprocessing (grid
//! subsampling, neighbor search, nearest-neighbor upsampling) contributes no
//! MACs; decoder stages count only their skip-concat projection FC.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interaction::{plan_network, PointOperatorConfig, StagePlan};
use crate::searchspace::{Genotype, Order, SearchSpaceSpec, STAGES};

/// Scene statistics the MAC counts are evaluated against. Parameter counts
/// never depend on it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneProfile {
    pub points_per_stage: Vec<u64>,
    pub avg_neighbors: Vec<u64>,
}

impl SceneProfile {
    /// Stage point counts from a base count and a per-stride-2 decay factor;
    /// decoder stages mirror the encoder level counts.
    pub fn with(base_points: u64, decay: f64, avg_neighbors: u64) -> SceneProfile {
        let mut level_counts = vec![base_points as f64];
        for _ in 0..4 {
            let prev = *level_counts.last().unwrap();
            level_counts.push(prev * decay);
        }
        let counts: Vec<u64> = level_counts.iter().map(|&c| c.round() as u64).collect();
        // encoder levels 0,1,2,3,3,4,4 then decoder 3,2,1,0
        let levels = [0usize, 1, 2, 3, 3, 4, 4, 3, 2, 1, 0];
        SceneProfile {
            points_per_stage: levels.iter().map(|&l| counts[l]).collect(),
            avg_neighbors: vec![avg_neighbors; STAGES],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.points_per_stage.len() != STAGES || self.avg_neighbors.len() != STAGES {
            return Err(Error::validation("profile must cover 11 stages"));
        }
        if self.points_per_stage.iter().any(|&p| p == 0)
            || self.avg_neighbors.iter().any(|&n| n == 0)
        {
            return Err(Error::validation("profile counts must be positive"));
        }
        Ok(())
    }
}

/// The reference profile: ~12.3K input points, 0.25 decay per stride-2
/// stage, 26 neighbors everywhere.
pub fn default_profile() -> SceneProfile {
    SceneProfile::with(12_300, 0.25, 26)
}

/// Stem/head dimensions; kept outside [`SceneProfile`] so parameter counts
/// stay profile-free.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkDims {
    pub input_dim: usize,
    pub n_classes: usize,
}

impl Default for NetworkDims {
    fn default() -> Self {
        NetworkDims {
            input_dim: 1,
            n_classes: 19,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageCost {
    pub label: String,
    pub params: u64,
    pub macs: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub params: u64,
    pub macs: u64,
    /// Millions of parameters, 3 significant digits.
    pub params_m: f64,
    /// Giga-MACs, 3 significant digits.
    pub macs_g: f64,
    pub per_stage: Vec<StageCost>,
}

fn sig3(x: f64) -> f64 {
    if x == 0.0 {
        return 0.0;
    }
    let mag = x.abs().log10().floor();
    let factor = 10f64.powf(2.0 - mag);
    (x * factor).round() / factor
}

fn report_from_breakdown(per_stage: Vec<StageCost>) -> CostReport {
    let params = per_stage.iter().map(|s| s.params).sum();
    let macs = per_stage.iter().map(|s| s.macs).sum();
    CostReport {
        params,
        macs,
        params_m: sig3(params as f64 / 1e6),
        macs_g: sig3(macs as f64 / 1e9),
        per_stage,
    }
}

fn op_param_count(cfg: &PointOperatorConfig) -> u64 {
    let d_in = cfg.in_width as u64;
    let d_out = cfg.out_width as u64;
    let exp = cfg.expanded_width() as u64;
    let k = cfg.kernel.kernel_points() as u64;
    let mut params = d_in * exp + exp * d_out + k * exp;
    if cfg.order == Order::Second {
        let k_h = k;
        params += 2 * k * k_h + k_h + k;
    }
    params
}

fn op_mac_count(cfg: &PointOperatorConfig, n_centers: u64, avg_n: u64) -> u64 {
    let d_in = cfg.in_width as u64;
    let d_out = cfg.out_width as u64;
    let exp = cfg.expanded_width() as u64;
    let k = cfg.kernel.kernel_points() as u64;
    let mut per_center = d_in * exp + avg_n * k * 4 + avg_n * k * exp + exp * d_out;
    if cfg.order == Order::Second {
        let k_h = k;
        per_center += avg_n * k + 2 * k * k_h + avg_n * k;
    }
    n_centers * per_center
}

/// Cost of a single point operator.
pub fn op_cost(cfg: &PointOperatorConfig, n_centers: u64, avg_n: u64) -> CostReport {
    report_from_breakdown(vec![StageCost {
        label: "op".into(),
        params: op_param_count(cfg),
        macs: op_mac_count(cfg, n_centers, avg_n),
    }])
}

/// Cost of the whole network implied by a genotype: stem FC, every encoder
/// operator, decoder skip-concat projections, head FC.
pub fn network_cost(
    g: &Genotype,
    space: &SearchSpaceSpec,
    profile: &SceneProfile,
    dims: &NetworkDims,
) -> Result<CostReport> {
    profile.validate()?;
    let plan = plan_network(g, space)?;
    let mut per_stage = Vec::with_capacity(STAGES + 2);

    let stage1_in = plan.stage1_in_width() as u64;
    per_stage.push(StageCost {
        label: "stem".into(),
        params: dims.input_dim as u64 * stage1_in,
        macs: profile.points_per_stage[0] * dims.input_dim as u64 * stage1_in,
    });

    for (i, stage) in plan.stages.iter().enumerate() {
        let pts = profile.points_per_stage[i];
        let nbr = profile.avg_neighbors[i];
        let (params, macs) = match stage {
            StagePlan::Encoder { ops, .. } => {
                let params = ops.iter().map(op_param_count).sum();
                let macs = ops.iter().map(|cfg| op_mac_count(cfg, pts, nbr)).sum();
                (params, macs)
            }
            StagePlan::Decoder {
                in_width,
                out_width,
                ..
            } => {
                let p = *in_width as u64 * *out_width as u64;
                (p, pts * p)
            }
        };
        per_stage.push(StageCost {
            label: format!("stage{}", i + 1),
            params,
            macs,
        });
    }

    let final_w = plan.final_width() as u64;
    per_stage.push(StageCost {
        label: "head".into(),
        params: final_w * dims.n_classes as u64,
        macs: profile.points_per_stage[STAGES - 1] * final_w * dims.n_classes as u64,
    });

    Ok(report_from_breakdown(per_stage))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::DispositionKind;
    use crate::searchspace::{default_space, hand_crafted_first_order, random_genotype, Stride};

    fn cfg(order: Order, in_w: usize, out_w: usize, e: f64) -> PointOperatorConfig {
        PointOperatorConfig {
            order,
            kernel: DispositionKind::Octahedron,
            in_width: in_w,
            out_width: out_w,
            expansion: e,
            stride: Stride::One,
        }
    }

    #[test]
    fn depthwise_interaction_params_are_k_times_d() {
        let c = cfg(Order::First, 16, 16, 1.0);
        let r = op_cost(&c, 1, 1);
        // expand 256 + project 256 + interaction 7*16
        assert_eq!(r.params, 256 + 256 + 112);
        // interaction term alone is exactly D x smaller than a full K*D*D kernel
        let k = 7u64;
        let d = 16u64;
        assert_eq!(k * d, k * d * d / d);
    }

    #[test]
    fn zero_centers_zero_macs() {
        let c = cfg(Order::Second, 8, 8, 2.0);
        let r = op_cost(&c, 0, 26);
        assert_eq!(r.macs, 0);
        assert!(r.params > 0);
    }

    #[test]
    fn default_profile_counts() {
        let p = default_profile();
        assert_eq!(p.points_per_stage[0], 12_300);
        assert_eq!(p.points_per_stage[1], 3_075);
        assert_eq!(p.points_per_stage, vec![
            12_300, 3_075, 769, 192, 192, 48, 48, 192, 769, 3_075, 12_300
        ]);
        assert_eq!(p.avg_neighbors, vec![26; 11]);
        p.validate().unwrap();
    }

    #[test]
    fn hand_crafted_params_near_reference() {
        let space = default_space();
        let r = network_cost(
            &hand_crafted_first_order(),
            &space,
            &default_profile(),
            &NetworkDims::default(),
        )
        .unwrap();
        let target = 0.97e6;
        let dev = (r.params as f64 - target).abs() / target;
        assert!(dev < 0.10, "params {} vs 0.97M (dev {:.3})", r.params, dev);
    }

    #[test]
    fn second_order_variant_adds_under_two_percent() {
        let space = default_space();
        let first = hand_crafted_first_order();
        let mut second = first.clone();
        for s in second.stages.iter_mut() {
            s.order = Order::Second;
        }
        second.out_of_space = true;
        let dims = NetworkDims::default();
        let profile = default_profile();
        let p1 = network_cost(&first, &space, &profile, &dims).unwrap().params;
        let p2 = network_cost(&second, &space, &profile, &dims).unwrap().params;
        assert!(p2 > p1);
        let growth = (p2 - p1) as f64 / p1 as f64;
        assert!(growth < 0.02, "growth {growth:.4}");
    }

    #[test]
    fn params_are_profile_free() {
        let space = default_space();
        let g = random_genotype(&space, 3);
        let dims = NetworkDims::default();
        let a = network_cost(&g, &space, &default_profile(), &dims).unwrap();
        let b = network_cost(&g, &space, &SceneProfile::with(500, 0.5, 8), &dims).unwrap();
        assert_eq!(a.params, b.params);
        assert_ne!(a.macs, b.macs);
    }

    #[test]
    fn totals_equal_breakdown_sums() {
        let space = default_space();
        let g = random_genotype(&space, 9);
        let r = network_cost(&g, &space, &default_profile(), &NetworkDims::default()).unwrap();
        assert_eq!(r.params, r.per_stage.iter().map(|s| s.params).sum::<u64>());
        assert_eq!(r.macs, r.per_stage.iter().map(|s| s.macs).sum::<u64>());
    }

    #[test]
    fn macs_increase_with_any_dimension() {
        let base = cfg(Order::First, 8, 8, 2.0);
        let m0 = op_cost(&base, 100, 20).macs;
        let wider_in = cfg(Order::First, 9, 8, 2.0);
        let wider_out = cfg(Order::First, 8, 9, 2.0);
        let more_exp = cfg(Order::First, 8, 8, 3.0);
        assert!(op_cost(&wider_in, 100, 20).macs > m0);
        assert!(op_cost(&wider_out, 100, 20).macs > m0);
        assert!(op_cost(&more_exp, 100, 20).macs > m0);
    }

    #[test]
    fn doubling_widths_roughly_quadruples_params() {
        let space = default_space();
        let g = hand_crafted_first_order();
        let mut doubled = g.clone();
        for s in doubled.stages.iter_mut() {
            s.width *= 2;
        }
        doubled.out_of_space = true;
        let dims = NetworkDims::default();
        let profile = default_profile();
        let p1 = network_cost(&g, &space, &profile, &dims).unwrap().params as f64;
        let p2 = network_cost(&doubled, &space, &profile, &dims).unwrap().params as f64;
        let ratio = p2 / p1;
        assert!(ratio > 3.5 && ratio < 4.0, "ratio {ratio}");
    }

    #[test]
    fn sig3_rounds_to_three_significant_digits() {
        assert_eq!(sig3(0.973584), 0.974);
        assert_eq!(sig3(123_456.0), 123_000.0);
        assert_eq!(sig3(0.0), 0.0);
        assert_eq!(sig3(4.567), 4.57);
    }

    #[test]
    fn report_serializes_to_json() {
        let space = default_space();
        let g = random_genotype(&space, 1);
        let r = network_cost(&g, &space, &default_profile(), &NetworkDims::default()).unwrap();
        let s = serde_json::to_string(&r).unwrap();
        let back: CostReport = serde_json::from_str(&s).unwrap();
        assert_eq!(r, back);
    }
}
