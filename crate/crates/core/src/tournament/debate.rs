//! One sub-competition: independent initial selections, fixed-order debate
//! rounds where every speaker sees the full prior record, and a senior-judge
//! decision with a plurality-vote fallback.

use std::collections::{HashMap, HashSet};

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Project, ProjectStore};
use crate::prompts::{render, PromptSet};
use crate::provider::{
    CallContext, ChatTranscript, CompletionParams, Provider, ProviderError, Role, Stage,
};
use crate::tournament::{rank_by_votes, SubCompetitionPlan, TournamentError};

/// Every selection names exactly this many candidates.
pub const SELECTION_SIZE: usize = 5;

/// Repair retries granted per turn after a malformed reply.
const MAX_REPAIRS: usize = 3;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SelectionError {
    #[error("no line matches `SELECTED: id1; id2; id3; id4; id5`")]
    NoMatch,
    #[error("expected {expected} ids, found {found}")]
    WrongCount { expected: usize, found: usize },
    #[error("duplicate id `{0}`")]
    Duplicate(String),
    #[error("id `{0}` is not a participant of this sub-competition")]
    Unknown(String),
}

fn selection_line_regex() -> &'static Regex {
    static RE: std::sync::OnceLock<Regex> = std::sync::OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)^\s*selected\s*:\s*(.+?)\s*$").expect("static regex"))
}

/// Extracts the ordered id list from a reply's `SELECTED:` line. When a
/// reply restates the line, the last occurrence is the speaker's final
/// stance and wins.
pub fn parse_selection(
    reply: &str,
    allowed: &HashSet<String>,
) -> Result<Vec<String>, SelectionError> {
    let payload = reply
        .lines()
        .filter_map(|line| selection_line_regex().captures(line))
        .last()
        .ok_or(SelectionError::NoMatch)?[1]
        .to_string();
    let ids: Vec<String> = payload
        .split(';')
        .map(|part| part.trim().to_string())
        .filter(|part| !part.is_empty())
        .collect();
    if ids.len() != SELECTION_SIZE {
        return Err(SelectionError::WrongCount { expected: SELECTION_SIZE, found: ids.len() });
    }
    let mut seen = HashSet::new();
    for id in &ids {
        if !seen.insert(id.clone()) {
            return Err(SelectionError::Duplicate(id.clone()));
        }
        if !allowed.contains(id) {
            return Err(SelectionError::Unknown(id.clone()));
        }
    }
    Ok(ids)
}

/// One agent utterance in the debate record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentTurn {
    /// 1-based agent number.
    pub agent: usize,
    pub text: String,
    pub selection: Vec<String>,
}

/// Why an agent or turn dropped out.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentNote {
    pub agent: usize,
    /// 0 for the initial round, 1-based debate round otherwise.
    pub round: usize,
    pub reason: String,
}

/// Full record of one sub-competition debate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DebateTranscript {
    pub plan_index: usize,
    pub pool_indices: Vec<usize>,
    /// Participants in prompt presentation order (seeded per-plan shuffle).
    pub participants: Vec<String>,
    pub initial: Vec<AgentTurn>,
    pub rounds: Vec<Vec<AgentTurn>>,
    /// Agents excluded in the initial round.
    pub excluded: Vec<AgentNote>,
    /// Debate turns skipped after repair retries ran out.
    pub skipped_turns: Vec<AgentNote>,
    pub judge_text: String,
    pub decision: Vec<String>,
    pub judge_fallback: bool,
}

impl DebateTranscript {
    /// Number of produced utterances including the judge's.
    pub fn turn_count(&self) -> usize {
        self.initial.len() + self.rounds.iter().map(Vec::len).sum::<usize>() + 1
    }
}

/// Result of one sub-competition: the group decision plus its transcript.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlanResult {
    pub plan_index: usize,
    pub decision: Vec<String>,
    pub transcript: DebateTranscript,
}

/// Shared inputs for the sub-competitions of one tournament.
pub struct DebateContext<'a> {
    pub project: &'a Project,
    pub store: &'a ProjectStore,
    pub prelim: &'a HashMap<String, f64>,
    pub prompts: &'a PromptSet,
    pub agents: usize,
    pub debate_rounds: usize,
    pub seed: u64,
    pub params: CompletionParams,
}

fn format_project(project: &Project) -> String {
    format!("{}\n{}", project.title, project.body)
}

fn format_candidates(ids: &[String], store: &ProjectStore) -> Result<String, TournamentError> {
    let mut out = String::new();
    for id in ids {
        let project = store
            .get(id)
            .ok_or_else(|| TournamentError::Config(format!("participant `{id}` not in store")))?;
        out.push_str(&format!("[ID: {id}] {}\n{}\n\n", project.title, project.body));
    }
    Ok(out)
}

fn format_record(transcript: &DebateTranscript) -> String {
    let mut out = String::from("=== Initial selections ===\n");
    for turn in &transcript.initial {
        out.push_str(&format!("[Expert {}]\n{}\n\n", turn.agent, turn.text));
    }
    for note in &transcript.excluded {
        out.push_str(&format!("[Expert {}] (excluded: {})\n\n", note.agent, note.reason));
    }
    for (round_idx, turns) in transcript.rounds.iter().enumerate() {
        out.push_str(&format!("=== Debate round {} ===\n", round_idx + 1));
        for turn in turns {
            out.push_str(&format!("[Expert {}]\n{}\n\n", turn.agent, turn.text));
        }
        for note in &transcript.skipped_turns {
            if note.round == round_idx + 1 {
                out.push_str(&format!(
                    "[Expert {}] (turn skipped: {})\n\n",
                    note.agent, note.reason
                ));
            }
        }
    }
    out
}

/// Outcome of one turn's request/parse/repair loop.
enum TurnOutcome {
    Parsed { text: String, selection: Vec<String> },
    Malformed { reason: String },
    Unavailable { reason: String },
}

/// Requests one turn and repairs malformed replies up to [`MAX_REPAIRS`]
/// times by appending the bad reply plus a correction request. Provider
/// configuration errors propagate; availability errors become an outcome
/// the caller can degrade on.
fn request_selection(
    provider: &Provider,
    params: &CompletionParams,
    ctx: &CallContext,
    prompt: String,
    allowed: &HashSet<String>,
) -> Result<TurnOutcome, TournamentError> {
    let mut transcript = ChatTranscript::from_user(prompt);
    let mut last_error = String::new();
    for _ in 0..=MAX_REPAIRS {
        let result = match provider.complete(&transcript, params, ctx) {
            Ok(result) => result,
            Err(e) if e.is_configuration() => return Err(TournamentError::Provider(e)),
            Err(e) => return Ok(TurnOutcome::Unavailable { reason: e.to_string() }),
        };
        match parse_selection(&result.text, allowed) {
            Ok(selection) => {
                return Ok(TurnOutcome::Parsed { text: result.text, selection });
            }
            Err(parse_err) => {
                last_error = parse_err.to_string();
                transcript.push(Role::Assistant, result.text);
                transcript.push(
                    Role::User,
                    format!(
                        "Your reply did not match the required format: {last_error}. \
                         Reply again and end with exactly one line \
                         `SELECTED: id1; id2; id3; id4; id5` listing exactly {SELECTION_SIZE} \
                         distinct ids from the candidate list."
                    ),
                );
            }
        }
    }
    Ok(TurnOutcome::Malformed { reason: format!("malformed after {MAX_REPAIRS} repairs: {last_error}") })
}

/// Runs one sub-competition to its group decision.
pub fn run_subcompetition(
    ctx: &DebateContext<'_>,
    plan: &SubCompetitionPlan,
    provider: &Provider,
) -> Result<PlanResult, TournamentError> {
    // Candidate presentation order is shuffled per plan to spread position
    // bias across sub-competitions.
    let mut participants = plan.participant_ids.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(
        ctx.seed ^ (plan.plan_index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15),
    );
    participants.shuffle(&mut rng);

    let allowed: HashSet<String> = participants.iter().cloned().collect();
    let project_block = format_project(ctx.project);
    let candidates_block = format_candidates(&participants, ctx.store)?;

    let mut transcript = DebateTranscript {
        plan_index: plan.plan_index,
        pool_indices: plan.pool_indices.clone(),
        participants: participants.clone(),
        initial: Vec::new(),
        rounds: Vec::new(),
        excluded: Vec::new(),
        skipped_turns: Vec::new(),
        judge_text: String::new(),
        decision: Vec::new(),
        judge_fallback: false,
    };

    // Initial round: independent selections, so they may run concurrently.
    let initial_prompts: Vec<(usize, String)> = (1..=ctx.agents)
        .map(|agent| {
            let prompt = render(
                "initial",
                &ctx.prompts.initial,
                &[
                    ("AGENT_NAME", &format!("Expert {agent} of {}", ctx.agents)),
                    ("PROJECT_UNDER_DETECTION", &project_block),
                    ("CANDIDATES", &candidates_block),
                    ("RULES", &ctx.prompts.rules),
                ],
            )
            .map_err(|e| TournamentError::Config(e.to_string()))?;
            Ok((agent, prompt))
        })
        .collect::<Result<_, TournamentError>>()?;

    let initial_outcomes: Vec<(usize, TurnOutcome)> = if provider.requires_serial()
        || ctx.agents <= 1
    {
        let mut outcomes = Vec::with_capacity(ctx.agents);
        for (agent, prompt) in initial_prompts {
            let call_ctx = CallContext::new(
                Stage::Debate,
                format!("plan{:02}/agent{agent}", plan.plan_index),
            );
            outcomes.push((
                agent,
                request_selection(provider, &ctx.params, &call_ctx, prompt, &allowed)?,
            ));
        }
        outcomes
    } else {
        let mut slots: Vec<Option<Result<TurnOutcome, TournamentError>>> =
            (0..ctx.agents).map(|_| None).collect();
        std::thread::scope(|scope| {
            let mut handles = Vec::new();
            for (agent, prompt) in initial_prompts {
                let allowed = &allowed;
                let params = &ctx.params;
                handles.push((agent, scope.spawn(move || {
                    let call_ctx = CallContext::new(
                        Stage::Debate,
                        format!("plan{:02}/agent{agent}", plan.plan_index),
                    );
                    request_selection(provider, params, &call_ctx, prompt, allowed)
                })));
            }
            for (agent, handle) in handles {
                slots[agent - 1] = Some(handle.join().expect("initial selection thread panicked"));
            }
        });
        slots
            .into_iter()
            .enumerate()
            .map(|(i, slot)| Ok((i + 1, slot.expect("slot filled")?)))
            .collect::<Result<_, TournamentError>>()?
    };

    let mut active: Vec<usize> = Vec::new();
    let mut final_selection: HashMap<usize, Vec<String>> = HashMap::new();
    for (agent, outcome) in initial_outcomes {
        match outcome {
            TurnOutcome::Parsed { text, selection } => {
                final_selection.insert(agent, selection.clone());
                transcript.initial.push(AgentTurn { agent, text, selection });
                active.push(agent);
            }
            TurnOutcome::Malformed { reason } | TurnOutcome::Unavailable { reason } => {
                transcript.excluded.push(AgentNote { agent, round: 0, reason });
            }
        }
    }
    if active.is_empty() {
        return Err(TournamentError::PlanFailed {
            plan: plan.plan_index,
            reason: "every agent was excluded in the initial round".into(),
        });
    }

    // Debate rounds: fixed speaking order, each speaker sees the entire
    // record so far, including this round's earlier speakers.
    for round in 1..=ctx.debate_rounds {
        transcript.rounds.push(Vec::new());
        for &agent in &active {
            let record = format_record(&transcript);
            let prompt = render(
                "debate",
                &ctx.prompts.debate,
                &[
                    ("AGENT_NAME", &format!("Expert {agent} of {}", ctx.agents)),
                    ("ROUND", &format!("{round} of {}", ctx.debate_rounds)),
                    ("PROJECT_UNDER_DETECTION", &project_block),
                    ("CANDIDATES", &candidates_block),
                    ("RULES", &ctx.prompts.rules),
                    ("TRANSCRIPT", &record),
                ],
            )
            .map_err(|e| TournamentError::Config(e.to_string()))?;
            let call_ctx = CallContext::new(
                Stage::Debate,
                format!("plan{:02}/agent{agent}/round{round}", plan.plan_index),
            );
            match request_selection(provider, &ctx.params, &call_ctx, prompt, &allowed)? {
                TurnOutcome::Parsed { text, selection } => {
                    final_selection.insert(agent, selection.clone());
                    transcript
                        .rounds
                        .last_mut()
                        .expect("round pushed")
                        .push(AgentTurn { agent, text, selection });
                }
                TurnOutcome::Malformed { reason } | TurnOutcome::Unavailable { reason } => {
                    transcript.skipped_turns.push(AgentNote { agent, round, reason });
                }
            }
        }
    }

    // Senior judge reads the whole record and decides for the group.
    let record = format_record(&transcript);
    let judge_prompt = render(
        "judge",
        &ctx.prompts.judge,
        &[
            ("PROJECT_UNDER_DETECTION", &project_block),
            ("CANDIDATES", &candidates_block),
            ("RULES", &ctx.prompts.rules),
            ("TRANSCRIPT", &record),
        ],
    )
    .map_err(|e| TournamentError::Config(e.to_string()))?;
    let judge_ctx =
        CallContext::new(Stage::Debate, format!("plan{:02}/judge", plan.plan_index));
    match request_selection(provider, &ctx.params, &judge_ctx, judge_prompt, &allowed)? {
        TurnOutcome::Parsed { text, selection } => {
            transcript.judge_text = text;
            transcript.decision = selection;
        }
        TurnOutcome::Malformed { reason } | TurnOutcome::Unavailable { reason } => {
            // Fallback: plurality vote over the agents' final selections.
            let mut counts: HashMap<String, usize> = HashMap::new();
            for selection in final_selection.values() {
                for id in selection {
                    *counts.entry(id.clone()).or_insert(0) += 1;
                }
            }
            let mut winners = rank_by_votes(&counts, ctx.prelim);
            winners.truncate(SELECTION_SIZE);
            transcript.judge_text = format!("(judge unavailable: {reason}; plurality fallback)");
            transcript.decision = winners;
            transcript.judge_fallback = true;
        }
    }

    Ok(PlanResult {
        plan_index: plan.plan_index,
        decision: transcript.decision.clone(),
        transcript,
    })
}
