//! Answer-distribution entropies and information-gain progress rewards.
//!
//! The entropy of the answer distribution conditioned on a reasoning prefix
//! is estimated either by exact enumeration of the nucleus-restricted rollout
//! tree or by seeded Monte Carlo rollouts. A step's progress reward is the
//! entropy reduction it causes; raw gains telescope over a trajectory and are
//! L1-normalized once per completed trajectory.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::hashes::Fnv1a;
use crate::policy::{
    rollout_to_terminal, PolicyHandle, ReasoningState, StepText,
    DEFAULT_MAX_STEP_TOKENS,
};
use crate::search::adaptive_expansion_set;
use crate::task::TaskInstance;
use crate::vocab::{self, Token, SEP};

pub const DEFAULT_MC_SAMPLES: usize = 16;
pub const DEFAULT_MAX_PATHS: usize = 4096;
const LAPLACE_ALPHA: f64 = 0.01;
pub const NORMALIZE_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EstimatorMode {
    ExactEnumeration,
    MonteCarlo,
    /// Exact enumeration with Monte Carlo fallback on overflow.
    Auto,
}

#[derive(Debug, Clone)]
pub struct EstimatorConfig {
    pub mode: EstimatorMode,
    pub beta_nucleus: f64,
    pub mc_samples: usize,
    pub rng_seed: u64,
    pub max_paths: usize,
    pub max_depth: usize,
}

impl EstimatorConfig {
    pub fn new(mode: EstimatorMode, beta_nucleus: f64, rng_seed: u64, max_depth: usize) -> Self {
        EstimatorConfig {
            mode,
            beta_nucleus,
            mc_samples: DEFAULT_MC_SAMPLES,
            rng_seed,
            max_paths: DEFAULT_MAX_PATHS,
            max_depth,
        }
    }
}

/// How an answer distribution was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DistMethod {
    ExactEnumeration,
    MonteCarlo(usize),
}

/// Distribution over canonical answer strings reachable from a prefix.
#[derive(Debug, Clone, PartialEq)]
pub struct AnswerDistribution {
    pub support: Vec<String>,
    pub probs: Vec<f64>,
    pub method: DistMethod,
}

impl AnswerDistribution {
    fn from_map(map: BTreeMap<String, f64>, method: DistMethod) -> Self {
        let total: f64 = map.values().sum();
        let mut support = Vec::with_capacity(map.len());
        let mut probs = Vec::with_capacity(map.len());
        for (answer, mass) in map {
            support.push(answer);
            probs.push(mass / total);
        }
        AnswerDistribution {
            support,
            probs,
            method,
        }
    }

    pub fn entropy(&self) -> f64 {
        let mut h = 0.0;
        for &p in &self.probs {
            if p > 0.0 {
                h -= p * p.ln();
            }
        }
        h.max(0.0)
    }

    pub fn prob_of(&self, answer: &str) -> f64 {
        self.support
            .iter()
            .position(|s| s == answer)
            .map_or(0.0, |i| self.probs[i])
    }
}

struct Enumerator<'a> {
    policy: &'a PolicyHandle,
    beta: f64,
    max_paths: usize,
    max_depth: usize,
    acc: BTreeMap<String, f64>,
    terminal_paths: usize,
}

impl Enumerator<'_> {
    fn record(&mut self, answer: String, prob: f64) -> Result<()> {
        self.terminal_paths += 1;
        if self.terminal_paths > self.max_paths {
            return Err(Error::EnumerationOverflow {
                max_paths: self.max_paths,
            });
        }
        *self.acc.entry(answer).or_insert(0.0) += prob;
        Ok(())
    }

    fn walk_state(&mut self, state: &ReasoningState, prob: f64) -> Result<()> {
        if state.is_terminal() {
            let answer = state
                .terminal_answer()
                .map(|a| a.canonical)
                .unwrap_or_default();
            return self.record(answer, prob);
        }
        if state.depth() >= self.max_depth {
            return self.record(String::new(), prob);
        }
        self.walk_step(state, &mut Vec::new(), prob)
    }

    fn walk_step(
        &mut self,
        state: &ReasoningState,
        partial: &mut Vec<Token>,
        prob: f64,
    ) -> Result<()> {
        if partial.len() >= DEFAULT_MAX_STEP_TOKENS {
            let step = step_from_tokens(partial.clone(), false);
            let mut next = state.clone();
            next.push_step(&step);
            return self.walk_state(&next, prob);
        }
        let dist = dist_with_partial(self.policy, state, partial)?;
        let nucleus = adaptive_expansion_set(&dist, self.beta);
        let mass: f64 = nucleus.iter().map(|t| dist[t.0 as usize]).sum();
        for tok in nucleus {
            let p = dist[tok.0 as usize] / mass;
            partial.push(tok);
            if tok == SEP {
                let step = step_from_tokens(partial.clone(), true);
                let mut next = state.clone();
                next.push_step(&step);
                self.walk_state(&next, prob * p)?;
            } else {
                self.walk_step(state, partial, prob * p)?;
            }
            partial.pop();
        }
        Ok(())
    }
}

fn step_from_tokens(tokens: Vec<Token>, by_sep: bool) -> StepText {
    use crate::policy::StepTermination;
    let terminated_by = if tokens.contains(&vocab::ANSWER) {
        StepTermination::AnswerMarker
    } else if by_sep {
        StepTermination::Delimiter
    } else {
        StepTermination::MaxLen
    };
    StepText {
        tokens,
        terminated_by,
    }
}

fn dist_with_partial(
    policy: &PolicyHandle,
    state: &ReasoningState,
    partial: &[Token],
) -> Result<Vec<f64>> {
    if partial.is_empty() {
        crate::policy::next_token_dist(policy, state)
    } else {
        // Build the distribution at state ++ partial by walking a step probe.
        let mut probe = state.clone();
        let step = step_from_tokens(partial.to_vec(), false);
        probe.push_step(&step);
        crate::policy::next_token_dist(policy, &probe)
    }
}

fn exact_enumeration(
    policy: &PolicyHandle,
    prefix: &ReasoningState,
    cfg: &EstimatorConfig,
) -> Result<AnswerDistribution> {
    let mut e = Enumerator {
        policy,
        beta: cfg.beta_nucleus,
        max_paths: cfg.max_paths,
        max_depth: cfg.max_depth,
        acc: BTreeMap::new(),
        terminal_paths: 0,
    };
    e.walk_state(prefix, 1.0)?;
    Ok(AnswerDistribution::from_map(
        e.acc,
        DistMethod::ExactEnumeration,
    ))
}

fn prefix_stream_seed(prefix: &ReasoningState, rng_seed: u64) -> u64 {
    let mut h = Fnv1a::new();
    h.write_u64(rng_seed);
    for t in prefix.tokens() {
        h.write_u16(t.0);
    }
    h.finish()
}

fn monte_carlo(
    policy: &PolicyHandle,
    task: &TaskInstance,
    prefix: &ReasoningState,
    cfg: &EstimatorConfig,
) -> Result<AnswerDistribution> {
    let m = cfg.mc_samples.max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(prefix_stream_seed(prefix, cfg.rng_seed));
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for _ in 0..m {
        let seed: u64 = rand::Rng::gen(&mut rng);
        let rollout = rollout_to_terminal(policy, prefix, seed, cfg.max_depth)?;
        *counts.entry(rollout.final_answer.canonical).or_insert(0) += 1;
    }
    let truth = vocab::canonicalize(&task.truth_answer);
    counts.entry(truth).or_insert(0);
    let support_len = counts.len() as f64;
    let denom = m as f64 + LAPLACE_ALPHA * support_len;
    let map: BTreeMap<String, f64> = counts
        .into_iter()
        .map(|(a, c)| (a, (c as f64 + LAPLACE_ALPHA) / denom))
        .collect();
    Ok(AnswerDistribution::from_map(map, DistMethod::MonteCarlo(m)))
}

/// Answer distribution conditioned on a reasoning prefix.
pub fn estimate_answer_distribution(
    policy: &PolicyHandle,
    task: &TaskInstance,
    prefix: &ReasoningState,
    cfg: &EstimatorConfig,
) -> Result<AnswerDistribution> {
    debug_assert!(!prefix.tokens().is_empty());
    match cfg.mode {
        EstimatorMode::ExactEnumeration => exact_enumeration(policy, prefix, cfg),
        EstimatorMode::MonteCarlo => monte_carlo(policy, task, prefix, cfg),
        EstimatorMode::Auto => match exact_enumeration(policy, prefix, cfg) {
            Ok(dist) => Ok(dist),
            Err(Error::EnumerationOverflow { .. }) => monte_carlo(policy, task, prefix, cfg),
            Err(e) => Err(e),
        },
    }
}

/// Entropy of the answer distribution at a prefix.
pub fn prefix_entropy(
    policy: &PolicyHandle,
    task: &TaskInstance,
    prefix: &ReasoningState,
    cfg: &EstimatorConfig,
) -> Result<f64> {
    Ok(estimate_answer_distribution(policy, task, prefix, cfg)?.entropy())
}

/// Information gain of a step: entropy before minus entropy after.
/// Positive when the step reduced answer uncertainty.
pub fn progress_gain(h_prev: f64, h_curr: f64) -> f64 {
    debug_assert!(h_prev.is_finite() && h_curr.is_finite());
    h_prev - h_curr
}

/// L1 trajectory normalization: divide by the sum of absolute gains when it
/// exceeds the epsilon, otherwise return the series unchanged.
pub fn normalize_gains(raw: &[f64]) -> Vec<f64> {
    let total: f64 = raw.iter().map(|g| g.abs()).sum();
    if total > NORMALIZE_EPS {
        raw.iter().map(|g| g / total).collect()
    } else {
        raw.to_vec()
    }
}

/// Per-step information-gain series for one trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct InfoGainSeries {
    pub raw: Vec<f64>,
    pub normalized: Vec<f64>,
}

impl InfoGainSeries {
    pub fn from_raw(raw: Vec<f64>) -> Self {
        let normalized = normalize_gains(&raw);
        InfoGainSeries { raw, normalized }
    }

    pub fn validate(&self) -> Result<()> {
        if self.raw.len() != self.normalized.len() {
            return Err(Error::validation("gain series length mismatch"));
        }
        let l1: f64 = self.normalized.iter().map(|g| g.abs()).sum();
        if l1 > 1.0 + NORMALIZE_EPS {
            return Err(Error::validation(format!(
                "normalized gains exceed unit L1 norm: {l1}"
            )));
        }
        Ok(())
    }
}

/// Entropies at the prefix and after each of `steps` applied in order.
/// Returns `steps.len() + 1` values.
pub fn prefix_entropy_chain(
    policy: &PolicyHandle,
    task: &TaskInstance,
    start: &ReasoningState,
    steps: &[StepText],
    cfg: &EstimatorConfig,
) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(steps.len() + 1);
    let mut state = start.clone();
    out.push(prefix_entropy(policy, task, &state, cfg)?);
    for step in steps {
        state.push_step(step);
        out.push(prefix_entropy(policy, task, &state, cfg)?);
    }
    Ok(out)
}

/// Raw gains for a step sequence: consecutive entropy differences.
pub fn gains_for_steps(
    policy: &PolicyHandle,
    task: &TaskInstance,
    start: &ReasoningState,
    steps: &[StepText],
    cfg: &EstimatorConfig,
) -> Result<Vec<f64>> {
    let chain = prefix_entropy_chain(policy, task, start, steps, cfg)?;
    Ok(chain.windows(2).map(|w| progress_gain(w[0], w[1])).collect())
}
