//! The 11-stage joint interaction-dimension search space: genotype
//! representation, sampling, mutation, cardinality accounting, and the
//! dense/sparse feature encoding consumed by the predictor.

use num_bigint::BigUint;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::DispositionKind;

pub const STAGES: usize = 11;
/// Sparse tokens per genotype: one kernel token and one order token per stage.
pub const SPARSE_TOKENS: usize = 2 * STAGES;
/// Dense features per genotype: depth, width, expansion per stage.
pub const DENSE_FEATURES: usize = 3 * STAGES;
/// Position-specific vocabulary: 5 reserved slots per stage
/// (3 kernel options + 2 order options).
pub const VOCAB_SIZE: usize = 5 * STAGES;

/// Interaction order of a stage's point operators.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Order {
    #[serde(rename = "first")]
    First,
    #[serde(rename = "second")]
    Second,
}

impl Order {
    pub fn index(self) -> usize {
        match self {
            Order::First => 0,
            Order::Second => 1,
        }
    }
}

/// Stage stride; `Up2` denotes 2x nearest-neighbor upsampling in the decoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stride {
    #[serde(rename = "1")]
    One,
    #[serde(rename = "2")]
    Two,
    #[serde(rename = "1/2")]
    Up2,
}

/// Fixed stage strides of the encoder-decoder template.
pub const STRIDES: [Stride; STAGES] = [
    Stride::One,
    Stride::Two,
    Stride::Two,
    Stride::Two,
    Stride::One,
    Stride::Two,
    Stride::One,
    Stride::Up2,
    Stride::Up2,
    Stride::Up2,
    Stride::Up2,
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Hierarchy {
    Backbone,
    SegmentationHead,
}

/// One stage's architectural choice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageGene {
    pub order: Order,
    pub kernel: DispositionKind,
    pub depth: usize,
    pub expansion: f64,
    pub width: usize,
}

fn is_false(b: &bool) -> bool {
    !*b
}

fn schema_version() -> u32 {
    1
}

/// 11-stage architecture description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Genotype {
    #[serde(rename = "v", default = "schema_version")]
    pub version: u32,
    pub stages: Vec<StageGene>,
    /// Set on genotypes that intentionally bypass space validation
    /// (the hand-crafted reference architecture).
    #[serde(default, skip_serializing_if = "is_false")]
    pub out_of_space: bool,
}

impl Genotype {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("genotype serialization")
    }

    pub fn from_json(s: &str) -> Result<Genotype> {
        let g: Genotype = serde_json::from_str(s)?;
        if g.version != 1 {
            return Err(Error::validation(format!(
                "unsupported genotype schema version {}",
                g.version
            )));
        }
        if g.stages.len() != STAGES {
            return Err(Error::validation(format!(
                "expected {} stages, got {}",
                STAGES,
                g.stages.len()
            )));
        }
        Ok(g)
    }
}

/// Option sets of one stage.
#[derive(Debug, Clone, PartialEq)]
pub struct StageOptions {
    pub orders: Vec<Order>,
    pub kernels: Vec<DispositionKind>,
    pub depths: Vec<usize>,
    pub expansions: Vec<f64>,
    pub widths: Vec<usize>,
}

impl StageOptions {
    fn new(
        orders: &[Order],
        depths: &[usize],
        expansions: &[f64],
        widths: &[usize],
    ) -> StageOptions {
        StageOptions {
            orders: orders.to_vec(),
            kernels: DispositionKind::ALL.to_vec(),
            depths: depths.to_vec(),
            expansions: expansions.to_vec(),
            widths: widths.to_vec(),
        }
    }
}

/// Per-stage option sets plus the fixed stride/hierarchy template.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchSpaceSpec {
    pub stages: Vec<StageOptions>,
}

const FIRST: [Order; 1] = [Order::First];
const BOTH: [Order; 2] = [Order::First, Order::Second];

/// The full search-space configuration: 7 backbone stages and 4
/// segmentation-head stages, all kernels searchable everywhere, first-order
/// only at the boundary stages.
pub fn default_space() -> SearchSpaceSpec {
    SearchSpaceSpec {
        stages: vec![
            StageOptions::new(&FIRST, &[1], &[1.0], &[16]),
            StageOptions::new(&FIRST, &[2, 3], &[2.0, 3.0, 4.0], &[16, 24]),
            StageOptions::new(&BOTH, &[2, 3, 4], &[2.0, 3.0, 4.0], &[24, 32]),
            StageOptions::new(&BOTH, &[3, 4, 5], &[2.0, 3.0, 4.0], &[24, 32, 40]),
            StageOptions::new(&BOTH, &[2, 3, 4], &[2.0, 3.0, 4.0], &[40, 56, 72]),
            StageOptions::new(&BOTH, &[3, 4, 5], &[2.0, 3.0, 4.0], &[64, 80, 96]),
            StageOptions::new(&BOTH, &[1], &[2.0, 3.0, 4.0], &[160]),
            StageOptions::new(&BOTH, &[1], &[2.0, 3.0], &[64, 80, 96]),
            StageOptions::new(&BOTH, &[1], &[2.0, 3.0], &[40, 56, 72]),
            StageOptions::new(&BOTH, &[1], &[2.0, 3.0], &[24, 32, 40]),
            StageOptions::new(&FIRST, &[1], &[2.0, 3.0], &[16, 24]),
        ],
    }
}

pub fn hierarchy(stage: usize) -> Hierarchy {
    if stage < 7 {
        Hierarchy::Backbone
    } else {
        Hierarchy::SegmentationHead
    }
}

fn expansion_eq(a: f64, b: f64) -> bool {
    (a - b).abs() < 1e-9
}

impl SearchSpaceSpec {
    /// Checks every gene against its stage's option sets.
    pub fn validate(&self, g: &Genotype) -> Result<()> {
        if g.stages.len() != STAGES {
            return Err(Error::validation(format!(
                "expected {} stages, got {}",
                STAGES,
                g.stages.len()
            )));
        }
        if g.out_of_space {
            return Ok(());
        }
        for (i, (gene, opts)) in g.stages.iter().zip(&self.stages).enumerate() {
            if !opts.orders.contains(&gene.order) {
                return Err(Error::validation(format!("stage {}: order not allowed", i + 1)));
            }
            if !opts.kernels.contains(&gene.kernel) {
                return Err(Error::validation(format!("stage {}: kernel not allowed", i + 1)));
            }
            if !opts.depths.contains(&gene.depth) {
                return Err(Error::validation(format!(
                    "stage {}: depth {} not in {:?}",
                    i + 1,
                    gene.depth,
                    opts.depths
                )));
            }
            if !opts.expansions.iter().any(|&e| expansion_eq(e, gene.expansion)) {
                return Err(Error::validation(format!(
                    "stage {}: expansion {} not in {:?}",
                    i + 1,
                    gene.expansion,
                    opts.expansions
                )));
            }
            if !opts.widths.contains(&gene.width) {
                return Err(Error::validation(format!(
                    "stage {}: width {} not in {:?}",
                    i + 1,
                    gene.width,
                    opts.widths
                )));
            }
        }
        Ok(())
    }
}

/// Uniform independent choice per facet per stage; deterministic given seed.
pub fn random_genotype(space: &SearchSpaceSpec, seed: u64) -> Genotype {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    random_genotype_with(space, &mut rng)
}

pub fn random_genotype_with(space: &SearchSpaceSpec, rng: &mut impl Rng) -> Genotype {
    let stages = space
        .stages
        .iter()
        .map(|opts| StageGene {
            order: opts.orders[rng.gen_range(0..opts.orders.len())],
            kernel: opts.kernels[rng.gen_range(0..opts.kernels.len())],
            depth: opts.depths[rng.gen_range(0..opts.depths.len())],
            expansion: opts.expansions[rng.gen_range(0..opts.expansions.len())],
            width: opts.widths[rng.gen_range(0..opts.widths.len())],
        })
        .collect();
    Genotype {
        version: 1,
        stages,
        out_of_space: false,
    }
}

/// Facet touched by a mutation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Facet {
    Kernel,
    Order,
    Width,
    Expansion,
    Depth,
}

/// Result of [`mutate`]: the child plus what changed (None only in the
/// degenerate no-mutable-facet case).
#[derive(Debug, Clone, PartialEq)]
pub struct Mutation {
    pub genotype: Genotype,
    pub changed: Option<(usize, Facet)>,
}

fn facet_option_count(opts: &StageOptions, facet: Facet) -> usize {
    match facet {
        Facet::Kernel => opts.kernels.len(),
        Facet::Order => opts.orders.len(),
        Facet::Width => opts.widths.len(),
        Facet::Expansion => opts.expansions.len(),
        Facet::Depth => opts.depths.len(),
    }
}

/// Single-facet mutation: pick one stage uniformly, then one action uniformly
/// from {kernel, order, width-or-expansion, depth} (width-or-expansion
/// sub-sampled 50/50), and resample that facet to a different value. Facet
/// picks landing on single-option facets are retried.
pub fn mutate(g: &Genotype, space: &SearchSpaceSpec, seed: u64) -> Mutation {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    mutate_with(g, space, &mut rng)
}

pub fn mutate_with(g: &Genotype, space: &SearchSpaceSpec, rng: &mut impl Rng) -> Mutation {
    let any_mutable = space.stages.iter().any(|opts| {
        [
            Facet::Kernel,
            Facet::Order,
            Facet::Width,
            Facet::Expansion,
            Facet::Depth,
        ]
        .iter()
        .any(|&f| facet_option_count(opts, f) >= 2)
    });
    if !any_mutable {
        return Mutation {
            genotype: g.clone(),
            changed: None,
        };
    }
    loop {
        let stage = rng.gen_range(0..STAGES);
        let facet = match rng.gen_range(0..4u32) {
            0 => Facet::Kernel,
            1 => Facet::Order,
            2 => {
                if rng.gen_range(0..2u32) == 0 {
                    Facet::Width
                } else {
                    Facet::Expansion
                }
            }
            _ => Facet::Depth,
        };
        let opts = &space.stages[stage];
        if facet_option_count(opts, facet) < 2 {
            continue;
        }
        let mut child = g.clone();
        let gene = &mut child.stages[stage];
        // draw among the options excluding the current value
        match facet {
            Facet::Kernel => {
                let cur = opts.kernels.iter().position(|&k| k == gene.kernel).unwrap();
                let mut pick = rng.gen_range(0..opts.kernels.len() - 1);
                if pick >= cur {
                    pick += 1;
                }
                gene.kernel = opts.kernels[pick];
            }
            Facet::Order => {
                let cur = opts.orders.iter().position(|&o| o == gene.order).unwrap();
                let mut pick = rng.gen_range(0..opts.orders.len() - 1);
                if pick >= cur {
                    pick += 1;
                }
                gene.order = opts.orders[pick];
            }
            Facet::Width => {
                let cur = opts.widths.iter().position(|&w| w == gene.width).unwrap();
                let mut pick = rng.gen_range(0..opts.widths.len() - 1);
                if pick >= cur {
                    pick += 1;
                }
                gene.width = opts.widths[pick];
            }
            Facet::Expansion => {
                let cur = opts
                    .expansions
                    .iter()
                    .position(|&e| expansion_eq(e, gene.expansion))
                    .unwrap();
                let mut pick = rng.gen_range(0..opts.expansions.len() - 1);
                if pick >= cur {
                    pick += 1;
                }
                gene.expansion = opts.expansions[pick];
            }
            Facet::Depth => {
                let cur = opts.depths.iter().position(|&d| d == gene.depth).unwrap();
                let mut pick = rng.gen_range(0..opts.depths.len() - 1);
                if pick >= cur {
                    pick += 1;
                }
                gene.depth = opts.depths[pick];
            }
        }
        return Mutation {
            genotype: child,
            changed: Some((stage, facet)),
        };
    }
}

/// Dense/sparse architecture encoding consumed by the predictor.
///
/// Dense: per stage `[depth, width, expansion]`, each min-max normalized over
/// that stage's option range (single-option facets encode to 0.0). Sparse:
/// per stage a kernel token then an order token, drawn from the
/// position-specific vocabulary `stage * 5 + {0..2 kernel | 3..4 order}`.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedArch {
    pub dense: Vec<f64>,
    pub sparse: Vec<usize>,
}

fn minmax(v: f64, options: &[f64]) -> f64 {
    let lo = options.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = options.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if (hi - lo).abs() < 1e-12 {
        0.0
    } else {
        (v - lo) / (hi - lo)
    }
}

pub fn kernel_token(stage: usize, kernel: DispositionKind) -> usize {
    let kidx = DispositionKind::ALL.iter().position(|&k| k == kernel).unwrap();
    stage * 5 + kidx
}

pub fn order_token(stage: usize, order: Order) -> usize {
    stage * 5 + 3 + order.index()
}

pub fn encode_features(g: &Genotype, space: &SearchSpaceSpec) -> Result<EncodedArch> {
    space.validate(g)?;
    let mut dense = Vec::with_capacity(DENSE_FEATURES);
    let mut sparse = Vec::with_capacity(SPARSE_TOKENS);
    for (stage, (gene, opts)) in g.stages.iter().zip(&space.stages).enumerate() {
        let depths: Vec<f64> = opts.depths.iter().map(|&d| d as f64).collect();
        let widths: Vec<f64> = opts.widths.iter().map(|&w| w as f64).collect();
        dense.push(minmax(gene.depth as f64, &depths));
        dense.push(minmax(gene.width as f64, &widths));
        dense.push(minmax(gene.expansion, &opts.expansions));
        sparse.push(kernel_token(stage, gene.kernel));
        sparse.push(order_token(stage, gene.order));
    }
    Ok(EncodedArch { dense, sparse })
}

/// Inverse of [`encode_features`] for in-space genotypes.
pub fn decode_features(arch: &EncodedArch, space: &SearchSpaceSpec) -> Result<Genotype> {
    if arch.dense.len() != DENSE_FEATURES || arch.sparse.len() != SPARSE_TOKENS {
        return Err(Error::validation("encoded architecture has wrong shape"));
    }
    let unmap = |t: f64, options: &[f64]| -> Result<f64> {
        let lo = options.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = options.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let v = if (hi - lo).abs() < 1e-12 { lo } else { lo + t * (hi - lo) };
        options
            .iter()
            .find(|&&o| (o - v).abs() < 1e-6)
            .copied()
            .ok_or_else(|| Error::validation(format!("dense value {t} maps to no option")))
    };
    let mut stages = Vec::with_capacity(STAGES);
    for (stage, opts) in space.stages.iter().enumerate() {
        let depths: Vec<f64> = opts.depths.iter().map(|&d| d as f64).collect();
        let widths: Vec<f64> = opts.widths.iter().map(|&w| w as f64).collect();
        let depth = unmap(arch.dense[stage * 3], &depths)? as usize;
        let width = unmap(arch.dense[stage * 3 + 1], &widths)? as usize;
        let expansion = unmap(arch.dense[stage * 3 + 2], &opts.expansions)?;
        let ktok = arch.sparse[stage * 2];
        let otok = arch.sparse[stage * 2 + 1];
        if ktok / 5 != stage || otok / 5 != stage {
            return Err(Error::validation("token outside its stage slot"));
        }
        let kernel = DispositionKind::ALL
            .get(ktok % 5)
            .copied()
            .ok_or_else(|| Error::validation("bad kernel token"))?;
        let order = match otok % 5 {
            3 => Order::First,
            4 => Order::Second,
            _ => return Err(Error::validation("bad order token")),
        };
        stages.push(StageGene {
            order,
            kernel,
            depth,
            expansion,
            width,
        });
    }
    let g = Genotype {
        version: 1,
        stages,
        out_of_space: false,
    };
    space.validate(&g)?;
    Ok(g)
}

/// Exact count of distinct genotypes in the space.
pub fn cardinality(space: &SearchSpaceSpec) -> BigUint {
    let mut total = BigUint::from(1u32);
    for opts in &space.stages {
        total *= BigUint::from(opts.orders.len());
        total *= BigUint::from(opts.kernels.len());
        total *= BigUint::from(opts.depths.len());
        total *= BigUint::from(opts.expansions.len());
        total *= BigUint::from(opts.widths.len());
    }
    total
}

/// The hand-crafted first-order reference architecture. Out-widths 320/32 at
/// stages 7/11 fall outside the searchable sets, so the genotype carries the
/// out-of-space flag and skips validation; it exists for cost-model
/// reference, not for search.
pub fn hand_crafted_first_order() -> Genotype {
    let depths = [1usize, 2, 3, 4, 3, 3, 1, 1, 1, 1, 1];
    let widths = [16usize, 24, 32, 64, 96, 160, 320, 160, 96, 64, 32];
    let stages = (0..STAGES)
        .map(|i| StageGene {
            order: Order::First,
            kernel: DispositionKind::Octahedron,
            depth: depths[i],
            expansion: if i == 0 { 1.0 } else { 3.0 },
            width: widths[i],
        })
        .collect();
    Genotype {
        version: 1,
        stages,
        out_of_space: true,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_space_matches_configuration_table() {
        let space = default_space();
        assert_eq!(space.stages.len(), STAGES);
        // stage 1: single depth/expansion/width options, first-order only
        let s1 = &space.stages[0];
        assert_eq!(s1.depths, vec![1]);
        assert_eq!(s1.expansions, vec![1.0]);
        assert_eq!(s1.widths, vec![16]);
        assert_eq!(s1.orders, vec![Order::First]);
        // stage 4 depth/width sets
        assert_eq!(space.stages[3].depths, vec![3, 4, 5]);
        assert_eq!(space.stages[3].widths, vec![24, 32, 40]);
        // stage 6 widths
        assert_eq!(space.stages[5].widths, vec![64, 80, 96]);
        // stage 7 width pinned
        assert_eq!(space.stages[6].widths, vec![160]);
        // head expansions
        for s in 7..11 {
            assert_eq!(space.stages[s].expansions, vec![2.0, 3.0]);
        }
        // stage 11 first-order only
        assert_eq!(space.stages[10].orders, vec![Order::First]);
        // kernels searchable everywhere
        for s in &space.stages {
            assert_eq!(s.kernels.len(), 3);
        }
    }

    #[test]
    fn random_genotype_is_valid_and_deterministic() {
        let space = default_space();
        for seed in 0..50 {
            let g = random_genotype(&space, seed);
            space.validate(&g).unwrap();
            assert_eq!(g, random_genotype(&space, seed));
        }
    }

    #[test]
    fn random_genotypes_cover_every_option() {
        let space = default_space();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut seen_kernel = vec![[false; 3]; STAGES];
        let mut seen_order = vec![[false; 2]; STAGES];
        let mut seen_depth: Vec<Vec<bool>> =
            space.stages.iter().map(|o| vec![false; o.depths.len()]).collect();
        let mut seen_exp: Vec<Vec<bool>> =
            space.stages.iter().map(|o| vec![false; o.expansions.len()]).collect();
        let mut seen_width: Vec<Vec<bool>> =
            space.stages.iter().map(|o| vec![false; o.widths.len()]).collect();
        for _ in 0..10_000 {
            let g = random_genotype_with(&space, &mut rng);
            for (s, gene) in g.stages.iter().enumerate() {
                let opts = &space.stages[s];
                seen_kernel[s]
                    [DispositionKind::ALL.iter().position(|&k| k == gene.kernel).unwrap()] = true;
                seen_order[s][gene.order.index()] = true;
                seen_depth[s][opts.depths.iter().position(|&d| d == gene.depth).unwrap()] = true;
                seen_exp[s][opts
                    .expansions
                    .iter()
                    .position(|&e| expansion_eq(e, gene.expansion))
                    .unwrap()] = true;
                seen_width[s][opts.widths.iter().position(|&w| w == gene.width).unwrap()] = true;
            }
        }
        for s in 0..STAGES {
            assert!(seen_kernel[s].iter().all(|&b| b));
            for (i, o) in space.stages[s].orders.iter().enumerate() {
                assert!(seen_order[s][o.index()], "stage {s} order {i} never drawn");
            }
            assert!(seen_depth[s].iter().all(|&b| b));
            assert!(seen_exp[s].iter().all(|&b| b));
            assert!(seen_width[s].iter().all(|&b| b));
        }
    }

    fn diff_count(a: &Genotype, b: &Genotype) -> usize {
        let mut n = 0;
        for (ga, gb) in a.stages.iter().zip(&b.stages) {
            if ga.order != gb.order {
                n += 1;
            }
            if ga.kernel != gb.kernel {
                n += 1;
            }
            if ga.depth != gb.depth {
                n += 1;
            }
            if !expansion_eq(ga.expansion, gb.expansion) {
                n += 1;
            }
            if ga.width != gb.width {
                n += 1;
            }
        }
        n
    }

    #[test]
    fn mutate_changes_exactly_one_facet_and_stays_valid() {
        let space = default_space();
        for seed in 0..200u64 {
            let g = random_genotype(&space, seed);
            let m = mutate(&g, &space, seed.wrapping_mul(31) + 1);
            assert!(m.changed.is_some());
            assert_eq!(diff_count(&g, &m.genotype), 1, "seed {seed}");
            space.validate(&m.genotype).unwrap();
        }
    }

    #[test]
    fn mutate_never_touches_single_option_facets() {
        let space = default_space();
        for seed in 0..500u64 {
            let g = random_genotype(&space, seed);
            let m = mutate(&g, &space, seed + 9000);
            let (stage, facet) = m.changed.unwrap();
            // stage 7 (index 6) width has a single option
            if stage == 6 {
                assert_ne!(facet, Facet::Width);
            }
            if stage == 0 {
                assert!(matches!(facet, Facet::Kernel), "stage 1 only kernel mutable");
            }
        }
    }

    #[test]
    fn mutate_is_deterministic() {
        let space = default_space();
        let g = random_genotype(&space, 3);
        assert_eq!(mutate(&g, &space, 17), mutate(&g, &space, 17));
    }

    #[test]
    fn mutation_reaches_every_facet_option() {
        // connectivity smoke test: iterate mutate and verify each facet of
        // each stage eventually takes every allowed value
        let space = default_space();
        let mut g = random_genotype(&space, 0);
        let mut seen_width: Vec<std::collections::HashSet<usize>> =
            vec![Default::default(); STAGES];
        let mut seen_order: Vec<std::collections::HashSet<usize>> =
            vec![Default::default(); STAGES];
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..5000 {
            for (s, gene) in g.stages.iter().enumerate() {
                seen_width[s].insert(gene.width);
                seen_order[s].insert(gene.order.index());
            }
            g = mutate_with(&g, &space, &mut rng).genotype;
        }
        for (s, opts) in space.stages.iter().enumerate() {
            assert_eq!(seen_width[s].len(), opts.widths.len(), "stage {s} widths");
            assert_eq!(seen_order[s].len(), opts.orders.len(), "stage {s} orders");
        }
    }

    #[test]
    fn encode_minmax_endpoints() {
        let space = default_space();
        let mut g = random_genotype(&space, 5);
        g.stages[3].width = 24;
        let e = encode_features(&g, &space).unwrap();
        assert_eq!(e.dense[3 * 3 + 1], 0.0);
        g.stages[3].width = 40;
        let e = encode_features(&g, &space).unwrap();
        assert_eq!(e.dense[3 * 3 + 1], 1.0);
        // single-option facets encode to 0
        assert_eq!(e.dense[0], 0.0); // stage 1 depth
        assert_eq!(e.dense[6 * 3 + 1], 0.0); // stage 7 width
    }

    #[test]
    fn tokens_are_position_specific() {
        let space = default_space();
        let g = random_genotype(&space, 11);
        let e = encode_features(&g, &space).unwrap();
        assert_eq!(e.sparse.len(), SPARSE_TOKENS);
        let distinct: std::collections::HashSet<_> = e.sparse.iter().collect();
        assert_eq!(distinct.len(), SPARSE_TOKENS);
        assert!(e.sparse.iter().all(|&t| t < VOCAB_SIZE));
        // same option in different stages gets different ids
        assert_ne!(kernel_token(0, DispositionKind::Octahedron),
                   kernel_token(1, DispositionKind::Octahedron));
    }

    #[test]
    fn encode_decode_round_trip() {
        let space = default_space();
        for seed in 0..100 {
            let g = random_genotype(&space, seed);
            let e = encode_features(&g, &space).unwrap();
            assert_eq!(decode_features(&e, &space).unwrap(), g);
        }
    }

    #[test]
    fn encoding_is_injective_on_10k_samples() {
        let space = default_space();
        let mut rng = ChaCha8Rng::seed_from_u64(123);
        let mut seen = std::collections::HashMap::new();
        for i in 0..10_000 {
            let g = random_genotype_with(&space, &mut rng);
            let e = encode_features(&g, &space).unwrap();
            let key = (
                e.sparse.clone(),
                e.dense.iter().map(|d| d.to_bits()).collect::<Vec<_>>(),
            );
            if let Some(prev) = seen.insert(key, g.clone()) {
                assert_eq!(prev, g, "collision at sample {i}");
            }
        }
    }

    #[test]
    fn cardinality_of_default_space() {
        // independent per-stage enumeration
        let space = default_space();
        let per_stage: Vec<u64> = space
            .stages
            .iter()
            .map(|o| {
                (o.orders.len() * o.kernels.len() * o.depths.len() * o.expansions.len()
                    * o.widths.len()) as u64
            })
            .collect();
        assert_eq!(per_stage[0], 3); // stage 1 contributes factor 3
        let expected = per_stage.iter().fold(BigUint::from(1u32), |acc, &f| acc * f);
        assert_eq!(cardinality(&space), expected);
    }

    #[test]
    fn cardinality_of_degenerate_space_is_one() {
        let space = SearchSpaceSpec {
            stages: vec![StageOptions {
                orders: vec![Order::First],
                kernels: vec![DispositionKind::Octahedron],
                depths: vec![1],
                expansions: vec![1.0],
                widths: vec![16],
            }],
        };
        assert_eq!(cardinality(&space), BigUint::from(1u32));
    }

    #[test]
    fn hand_crafted_matches_reference_table() {
        let g = hand_crafted_first_order();
        assert_eq!(g.stages[3].depth, 4);
        assert_eq!(g.stages[6].width, 320);
        assert!(g.stages.iter().all(|s| s.kernel == DispositionKind::Octahedron));
        assert!(g.stages.iter().all(|s| s.order == Order::First));
        assert_eq!(g.stages[0].expansion, 1.0);
        assert!(g.stages[1..].iter().all(|s| s.expansion == 3.0));
        assert!(g.out_of_space);
        // validates only thanks to the flag
        default_space().validate(&g).unwrap();
    }

    #[test]
    fn genotype_json_round_trip() {
        let g = random_genotype(&default_space(), 42);
        let s = g.to_json();
        assert!(s.contains("\"v\":1"));
        assert_eq!(Genotype::from_json(&s).unwrap(), g);
    }
}
