//! Round-robin debate tournament over the preliminary candidates.
//!
//! Candidates are partitioned into pools, every combination of pools forms
//! one sub-competition, expert agents debate each sub-competition to a group
//! decision, and the group decisions are aggregated by voting into the
//! global top-5. Equal pool exposure is the point of the format: with the
//! default 6 pools and 20-participant sub-competitions, every candidate
//! takes part in exactly 10 of the 15 group events.

mod debate;

pub use debate::{
    parse_selection, run_subcompetition, AgentNote, AgentTurn, DebateContext, DebateTranscript,
    PlanResult, SelectionError, SELECTION_SIZE,
};

use std::collections::HashMap;

use itertools::Itertools;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Project, ProjectStore};
use crate::embedding::{CandidateEntry, CandidateSet};
use crate::journal::RunJournal;
use crate::prompts::PromptSet;
use crate::provider::{CompletionParams, Provider, ProviderError};

#[derive(Debug, Error)]
pub enum TournamentError {
    #[error("tournament infeasible: {candidates} candidates is fewer than pool size {pool_size}")]
    Infeasible { candidates: usize, pool_size: usize },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("sub-competition {plan} failed: {reason}")]
    PlanFailed { plan: usize, reason: String },
    #[error("quorum failed: {succeeded} of {total} sub-competitions succeeded, quorum requires {required}")]
    QuorumFailed { succeeded: usize, total: usize, required: usize },
    #[error("no group decisions to aggregate")]
    NoDecisions,
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error("journal: {0}")]
    Journal(#[from] std::io::Error),
}

/// One pool of the candidate partition.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Pool {
    pub members: Vec<String>,
}

/// Partition result: disjoint pools plus any dropped remainder.
#[derive(Debug, Clone)]
pub struct PartitionOutcome {
    pub pools: Vec<Pool>,
    /// Lowest-preliminary-similarity candidates dropped to make the count
    /// divisible by the pool size.
    pub dropped: Vec<String>,
}

/// Seeded random partition of the candidates (given in descending
/// preliminary-similarity order) into pools of `pool_size`.
pub fn partition(
    entries: &[CandidateEntry],
    pool_size: usize,
    seed: u64,
) -> Result<PartitionOutcome, TournamentError> {
    if pool_size == 0 {
        return Err(TournamentError::Config("pool size must be positive".into()));
    }
    if entries.len() < pool_size {
        return Err(TournamentError::Infeasible {
            candidates: entries.len(),
            pool_size,
        });
    }
    let keep = entries.len() - entries.len() % pool_size;
    let dropped = entries[keep..].iter().map(|e| e.id.clone()).collect();
    let mut ids: Vec<String> = entries[..keep].iter().map(|e| e.id.clone()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ids.shuffle(&mut rng);
    let pools = ids
        .chunks(pool_size)
        .map(|chunk| Pool { members: chunk.to_vec() })
        .collect();
    Ok(PartitionOutcome { pools, dropped })
}

/// One scheduled group event: a combination of pools and their union.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubCompetitionPlan {
    pub plan_index: usize,
    pub pool_indices: Vec<usize>,
    pub participant_ids: Vec<String>,
}

impl SubCompetitionPlan {
    /// Builds a plan directly from a participant list; used by the baseline
    /// competition formats that do not go through pool combinations.
    pub fn from_participants(plan_index: usize, participant_ids: Vec<String>) -> Self {
        SubCompetitionPlan { plan_index, pool_indices: Vec::new(), participant_ids }
    }
}

/// Enumerates all `C(num_pools, M/pool_size)` sub-competition plans in
/// lexicographic pool-index order.
pub fn schedule(
    pools: &[Pool],
    subcompetition_size: usize,
) -> Result<Vec<SubCompetitionPlan>, TournamentError> {
    if pools.is_empty() {
        return Err(TournamentError::Config("no pools to schedule".into()));
    }
    let pool_size = pools[0].members.len();
    if subcompetition_size % pool_size != 0 {
        return Err(TournamentError::Config(format!(
            "sub-competition size {subcompetition_size} is not divisible by pool size {pool_size}"
        )));
    }
    let pools_per_plan = subcompetition_size / pool_size;
    if pools_per_plan == 0 {
        return Err(TournamentError::Config("sub-competition size must be positive".into()));
    }
    if pools_per_plan > pools.len() {
        return Err(TournamentError::Config(format!(
            "sub-competition size {subcompetition_size} exceeds the {} available candidates",
            pools.len() * pool_size
        )));
    }
    Ok((0..pools.len())
        .combinations(pools_per_plan)
        .enumerate()
        .map(|(plan_index, pool_indices)| {
            let participant_ids = pool_indices
                .iter()
                .flat_map(|&p| pools[p].members.iter().cloned())
                .collect();
            SubCompetitionPlan { plan_index, pool_indices, participant_ids }
        })
        .collect())
}

/// Vote tally over group decisions: membership counts and the global top-5.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoteTally {
    pub counts: std::collections::BTreeMap<String, usize>,
    pub winners: Vec<String>,
}

/// Orders ids by (count desc, preliminary similarity desc, id asc).
pub(crate) fn rank_by_votes(
    counts: &HashMap<String, usize>,
    prelim: &HashMap<String, f64>,
) -> Vec<String> {
    let mut ranked: Vec<(&String, usize)> = counts.iter().map(|(id, &c)| (id, c)).collect();
    ranked.sort_by(|a, b| {
        b.1.cmp(&a.1)
            .then_with(|| {
                let sa = prelim.get(a.0.as_str()).copied().unwrap_or(f64::NEG_INFINITY);
                let sb = prelim.get(b.0.as_str()).copied().unwrap_or(f64::NEG_INFINITY);
                sb.total_cmp(&sa)
            })
            .then_with(|| a.0.cmp(b.0))
    });
    ranked.into_iter().map(|(id, _)| id.clone()).collect()
}

/// Counts how many group decisions contain each id and picks the top-5 by
/// (count desc, preliminary similarity desc, id asc). Decisions are treated
/// as unordered sets; the judges' internal orderings carry no weight.
pub fn aggregate_votes(
    decisions: &[Vec<String>],
    prelim: &HashMap<String, f64>,
) -> Result<VoteTally, TournamentError> {
    if decisions.is_empty() {
        return Err(TournamentError::NoDecisions);
    }
    let mut counts: HashMap<String, usize> = HashMap::new();
    for decision in decisions {
        for id in decision {
            *counts.entry(id.clone()).or_insert(0) += 1;
        }
    }
    let mut winners = rank_by_votes(&counts, prelim);
    winners.truncate(SELECTION_SIZE);
    Ok(VoteTally { counts: counts.into_iter().collect(), winners })
}

/// Tournament parameters; defaults follow the reference setting of 6 pools
/// of 5, 20-participant sub-competitions, 3 agents, and 2 debate rounds.
#[derive(Debug, Clone)]
pub struct TournamentConfig {
    pub pool_size: usize,
    pub subcompetition_size: usize,
    pub agents: usize,
    pub debate_rounds: usize,
    pub seed: u64,
    /// Minimum fraction of sub-competitions that must succeed.
    pub quorum: f64,
    /// Plan-level parallelism cap; serial backends force 1.
    pub max_parallel_plans: usize,
    pub params: CompletionParams,
}

impl Default for TournamentConfig {
    fn default() -> Self {
        TournamentConfig {
            pool_size: 5,
            subcompetition_size: 20,
            agents: 3,
            debate_rounds: 2,
            seed: 0,
            quorum: 2.0 / 3.0,
            max_parallel_plans: 8,
            params: CompletionParams::default(),
        }
    }
}

impl TournamentConfig {
    fn validate(&self) -> Result<(), TournamentError> {
        if self.agents < 2 {
            return Err(TournamentError::Config("debate requires at least 2 agents".into()));
        }
        if self.debate_rounds < 1 {
            return Err(TournamentError::Config("at least 1 debate round is required".into()));
        }
        if self.pool_size == 0 {
            return Err(TournamentError::Config("pool size must be positive".into()));
        }
        if self.subcompetition_size % self.pool_size != 0 {
            return Err(TournamentError::Config(format!(
                "sub-competition size {} is not divisible by pool size {}",
                self.subcompetition_size, self.pool_size
            )));
        }
        if !(0.0..=1.0).contains(&self.quorum) || self.quorum == 0.0 {
            return Err(TournamentError::Config("quorum must be in (0, 1]".into()));
        }
        Ok(())
    }
}

/// Everything a finished tournament reports.
#[derive(Debug)]
pub struct TournamentOutcome {
    pub winners: Vec<String>,
    pub tally: VoteTally,
    pub plans: Vec<SubCompetitionPlan>,
    pub results: Vec<PlanResult>,
    pub failed_plans: Vec<(usize, String)>,
    pub dropped_candidates: Vec<String>,
    /// Effective sub-competition size after clamping to the candidate count.
    pub effective_subcompetition_size: usize,
}

/// Runs sub-competition plans, serially or across scoped threads, returning
/// per-plan outcomes in plan order. Configuration errors abort immediately.
pub(crate) fn run_plans(
    ctx: &DebateContext<'_>,
    plans: &[SubCompetitionPlan],
    provider: &Provider,
    max_parallel: usize,
) -> Result<Vec<Result<PlanResult, String>>, TournamentError> {
    let effective = if provider.requires_serial() { 1 } else { max_parallel.max(1) };
    let mut slots: Vec<Option<Result<PlanResult, TournamentError>>> =
        (0..plans.len()).map(|_| None).collect();
    if effective <= 1 || plans.len() <= 1 {
        for (i, plan) in plans.iter().enumerate() {
            slots[i] = Some(run_subcompetition(ctx, plan, provider));
        }
    } else {
        std::thread::scope(|scope| {
            let mut handles = Vec::with_capacity(plans.len());
            for plan in plans {
                handles.push(scope.spawn(move || run_subcompetition(ctx, plan, provider)));
            }
            for (i, handle) in handles.into_iter().enumerate() {
                slots[i] = Some(handle.join().expect("sub-competition thread panicked"));
            }
        });
    }
    let mut results = Vec::with_capacity(plans.len());
    for slot in slots {
        match slot.expect("plan slot filled") {
            Ok(result) => results.push(Ok(result)),
            Err(TournamentError::Provider(e)) if e.is_configuration() => {
                return Err(TournamentError::Provider(e))
            }
            Err(e) => results.push(Err(e.to_string())),
        }
    }
    Ok(results)
}

/// The full round-robin retrieval: partition, schedule, debate every
/// sub-competition, and aggregate group decisions by voting.
///
/// The configured sub-competition size is clamped down to the usable
/// candidate count, so a candidate set of exactly one pool degenerates to a
/// single all-in plan.
pub fn run_tournament(
    project: &Project,
    store: &ProjectStore,
    candidates: &CandidateSet,
    cfg: &TournamentConfig,
    provider: &Provider,
    prompts: &PromptSet,
    journal: Option<&RunJournal>,
) -> Result<TournamentOutcome, TournamentError> {
    cfg.validate()?;
    let PartitionOutcome { pools, dropped } =
        partition(&candidates.entries, cfg.pool_size, cfg.seed)?;
    let effective_m = cfg.subcompetition_size.min(pools.len() * cfg.pool_size);
    let plans = schedule(&pools, effective_m)?;
    let prelim = candidates.similarity_map();
    let ctx = DebateContext {
        project,
        store,
        prelim: &prelim,
        prompts,
        agents: cfg.agents,
        debate_rounds: cfg.debate_rounds,
        seed: cfg.seed,
        params: cfg.params.clone(),
    };

    let outcomes = run_plans(&ctx, &plans, provider, cfg.max_parallel_plans)?;

    let mut results = Vec::new();
    let mut failed_plans = Vec::new();
    for (idx, outcome) in outcomes.into_iter().enumerate() {
        match outcome {
            Ok(result) => results.push(result),
            Err(reason) => failed_plans.push((idx, reason)),
        }
    }

    let required = (cfg.quorum * plans.len() as f64).ceil() as usize;
    if results.len() < required {
        return Err(TournamentError::QuorumFailed {
            succeeded: results.len(),
            total: plans.len(),
            required,
        });
    }

    if let Some(journal) = journal {
        for result in &results {
            journal.write_json(
                &format!("plan_{:02}.json", result.plan_index),
                &result.transcript,
            )?;
        }
    }

    let decisions: Vec<Vec<String>> = results.iter().map(|r| r.decision.clone()).collect();
    let tally = aggregate_votes(&decisions, &prelim)?;

    Ok(TournamentOutcome {
        winners: tally.winners.clone(),
        tally,
        plans,
        results,
        failed_plans,
        dropped_candidates: dropped,
        effective_subcompetition_size: effective_m,
    })
}
