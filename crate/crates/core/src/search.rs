//! Regularized evolution over the search space guided by a scored surrogate,
//! plus a random-search baseline.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::searchspace::{mutate_with, random_genotype_with, Genotype, SearchSpaceSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvolutionConfig {
    pub population: usize,
    pub sample_size: usize,
    pub rounds: usize,
    pub beta: f64,
    pub seed: u64,
}

impl Default for EvolutionConfig {
    fn default() -> Self {
        EvolutionConfig {
            population: 200,
            sample_size: 150,
            rounds: 360,
            beta: 0.5,
            seed: 0,
        }
    }
}

impl EvolutionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.population == 0 || self.sample_size == 0 || self.rounds == 0 {
            return Err(Error::validation("population/sample_size/rounds must be positive"));
        }
        if self.sample_size > self.population {
            return Err(Error::validation("sample_size must not exceed population"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SearchEvent {
    #[serde(rename = "init")]
    Init,
    #[serde(rename = "child")]
    Child,
}

/// One scored candidate in the search history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchRecord {
    pub round: usize,
    pub genotype: Genotype,
    pub predicted_perf: f64,
    pub macs: u64,
    pub objective: f64,
    pub event: SearchEvent,
}

/// S(A) = p_hat - beta * log10(macs / 1e9): predicted performance traded
/// against log-giga-MACs.
pub fn objective(p_hat: f64, macs: u64, beta: f64) -> Result<f64> {
    if macs == 0 {
        return Err(Error::invalid("objective requires macs >= 1"));
    }
    Ok(p_hat - beta * (macs as f64 / 1e9).log10())
}

#[derive(Debug, Clone)]
struct Member {
    genotype: Genotype,
    macs: u64,
    objective: f64,
    inserted: usize,
}

fn better(a: &Member, b: &Member) -> bool {
    // higher objective wins; ties broken by lower MACs, then earlier insertion
    if a.objective != b.objective {
        return a.objective > b.objective;
    }
    if a.macs != b.macs {
        return a.macs < b.macs;
    }
    a.inserted < b.inserted
}

pub struct SearchOutcome {
    pub best: Genotype,
    pub best_record: SearchRecord,
    pub history: Vec<SearchRecord>,
}

/// Regularized evolution: tournament parent selection over a uniform sample,
/// single-facet mutation, oldest-member removal. `perf` scores a genotype
/// (predictor output), `cost` reports its MACs.
pub fn evolve<P, C>(
    perf: P,
    cost: C,
    space: &SearchSpaceSpec,
    cfg: &EvolutionConfig,
) -> Result<SearchOutcome>
where
    P: Fn(&Genotype) -> Result<f64>,
    C: Fn(&Genotype) -> Result<u64>,
{
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut history = Vec::with_capacity(cfg.population + cfg.rounds);
    let mut population: VecDeque<Member> = VecDeque::with_capacity(cfg.population);
    let mut inserted = 0usize;

    let score = |g: &Genotype, round: usize, event: SearchEvent, inserted: usize| -> Result<(Member, SearchRecord)> {
        let p_hat = perf(g)?;
        let macs = cost(g)?;
        let s = objective(p_hat, macs, cfg.beta)?;
        let record = SearchRecord {
            round,
            genotype: g.clone(),
            predicted_perf: p_hat,
            macs,
            objective: s,
            event,
        };
        let member = Member {
            genotype: g.clone(),
            macs,
            objective: s,
            inserted,
        };
        Ok((member, record))
    };

    for _ in 0..cfg.population {
        let g = random_genotype_with(space, &mut rng);
        let (member, record) = score(&g, 0, SearchEvent::Init, inserted)?;
        inserted += 1;
        population.push_back(member);
        history.push(record);
    }

    let mut best = population
        .iter()
        .fold(None::<Member>, |acc, m| match acc {
            Some(b) if better(&b, m) => Some(b),
            _ => Some(m.clone()),
        })
        .expect("nonempty population");

    for round in 1..=cfg.rounds {
        let picks = sample(&mut rng, population.len(), cfg.sample_size);
        let parent = picks
            .iter()
            .map(|i| &population[i])
            .fold(None::<&Member>, |acc, m| match acc {
                Some(b) if better(b, m) => Some(b),
                _ => Some(m),
            })
            .expect("nonempty sample")
            .genotype
            .clone();
        let child = mutate_with(&parent, space, &mut rng).genotype;
        let (member, record) = score(&child, round, SearchEvent::Child, inserted)?;
        inserted += 1;
        if better(&member, &best) {
            best = member.clone();
        }
        population.push_back(member);
        population.pop_front(); // aging: remove the oldest
        history.push(record);
    }

    let best_record = history
        .iter()
        .find(|r| r.genotype == best.genotype && r.objective == best.objective)
        .expect("best member came from history")
        .clone();
    Ok(SearchOutcome {
        best: best.genotype,
        best_record,
        history,
    })
}

/// Scores `budget` independent random genotypes and returns the top-k by
/// objective (plus the full history).
pub fn random_search<P, C>(
    perf: P,
    cost: C,
    space: &SearchSpaceSpec,
    budget: usize,
    top_k: usize,
    beta: f64,
    seed: u64,
) -> Result<(Vec<SearchRecord>, Vec<SearchRecord>)>
where
    P: Fn(&Genotype) -> Result<f64>,
    C: Fn(&Genotype) -> Result<u64>,
{
    if budget == 0 {
        return Err(Error::validation("budget must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut history = Vec::with_capacity(budget);
    for round in 0..budget {
        let g = random_genotype_with(space, &mut rng);
        let p_hat = perf(&g)?;
        let macs = cost(&g)?;
        let s = objective(p_hat, macs, beta)?;
        history.push(SearchRecord {
            round,
            genotype: g,
            predicted_perf: p_hat,
            macs,
            objective: s,
            event: SearchEvent::Init,
        });
    }
    let mut ranked: Vec<usize> = (0..history.len()).collect();
    ranked.sort_by(|&a, &b| {
        let (ra, rb) = (&history[a], &history[b]);
        rb.objective
            .partial_cmp(&ra.objective)
            .unwrap()
            .then(ra.macs.cmp(&rb.macs))
            .then(a.cmp(&b))
    });
    let top = ranked
        .iter()
        .take(top_k)
        .map(|&i| history[i].clone())
        .collect();
    Ok((top, history))
}
