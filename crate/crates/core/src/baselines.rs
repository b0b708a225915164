//! Alternative trajectory-generation strategies producing datasets in the
//! shared record format: repeated prompting, a single deliberation-cued
//! rollout, temperature sweeps and outcome-verified best-of-N.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hashes::Fnv1a;
use crate::policy::{build_step, Draw, PolicyHandle, ReasoningState, StepText, DEFAULT_MAX_STEP_TOKENS};
use crate::progress::{gains_for_steps, normalize_gains, EstimatorConfig};
use crate::search::{SearchMeta, TrajectoryRecord, TrajectoryStep};
use crate::task::{build_initial_state, outcome_reward, TaskInstance};
use crate::vocab::{Token, LETS, THINK};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BaselineMethod {
    PromptN,
    CoTSingle,
    TemperatureSampling,
    BestOfN,
}

impl BaselineMethod {
    pub fn tag(self) -> &'static str {
        match self {
            BaselineMethod::PromptN => "prompt_n",
            BaselineMethod::CoTSingle => "cot_single",
            BaselineMethod::TemperatureSampling => "temperature_sampling",
            BaselineMethod::BestOfN => "best_of_n",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BaselineConfig {
    pub method: BaselineMethod,
    pub n_samples: usize,
    pub temperatures: Vec<f64>,
    pub rng_seed: u64,
}

impl BaselineConfig {
    pub fn new(method: BaselineMethod, rng_seed: u64) -> Self {
        BaselineConfig {
            method,
            n_samples: 8,
            temperatures: vec![0.5, 1.0, 1.5],
            rng_seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_samples < 1 {
            return Err(Error::validation("n_samples must be at least 1"));
        }
        if self.method == BaselineMethod::TemperatureSampling {
            if self.temperatures.is_empty() {
                return Err(Error::validation(
                    "temperature sampling requires a non-empty temperature list",
                ));
            }
            if self.temperatures.iter().any(|&t| !(t > 0.0)) {
                return Err(Error::validation("temperatures must be positive"));
            }
        }
        Ok(())
    }
}

fn sample_seed(cfg_seed: u64, task_id: &str, index: u64) -> u64 {
    let mut h = Fnv1a::new();
    h.write_u64(cfg_seed);
    h.write_bytes(task_id.as_bytes());
    h.write_u64(index);
    h.finish()
}

/// Samples one full trajectory; the first step may carry forced cue tokens.
fn sample_trajectory(
    policy: &PolicyHandle,
    start: &ReasoningState,
    forced_prefix: &[Token],
    seed: u64,
    max_depth: usize,
) -> Result<Vec<StepText>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut state = start.clone();
    let mut steps = Vec::new();
    let mut forced = forced_prefix;
    while state.depth() < max_depth {
        let step = build_step(
            policy,
            &state,
            forced,
            &mut Draw::Sample(&mut rng),
            DEFAULT_MAX_STEP_TOKENS,
        )?;
        forced = &[];
        state.push_step(&step);
        let done = step.contains_answer();
        steps.push(step);
        if done {
            break;
        }
    }
    Ok(steps)
}

fn record_from_steps(
    task: &TaskInstance,
    policy: &PolicyHandle,
    start: &ReasoningState,
    steps: Vec<StepText>,
    estimator: &EstimatorConfig,
    multiplicity: u32,
) -> Result<TrajectoryRecord> {
    let raw = gains_for_steps(policy, task, start, &steps, estimator)?;
    let normalized = normalize_gains(&raw);
    let last = steps.last().expect("trajectories have at least one step");
    let r_out = outcome_reward(task, &last.tokens) as u8;
    let final_answer = crate::task::final_answer(&last.tokens);
    Ok(TrajectoryRecord {
        task_id: task.id.clone(),
        steps: steps
            .into_iter()
            .zip(raw.iter().zip(normalized))
            .map(|(step, (&r, n))| TrajectoryStep {
                tokens: step.tokens,
                r_prog_raw: r,
                r_prog_normalized: n,
            })
            .collect(),
        r_out,
        final_answer,
        search_meta: SearchMeta::external(multiplicity),
    })
}

/// Generates a baseline dataset for one task. Progress rewards are attached
/// post hoc with the same estimator configuration as the search stage.
pub fn generate_baseline(
    task: &TaskInstance,
    policy: &PolicyHandle,
    cfg: &BaselineConfig,
    estimator: &EstimatorConfig,
) -> Result<Vec<TrajectoryRecord>> {
    cfg.validate()?;
    let initial = build_initial_state(task, policy)
        .map_err(|skip| Error::validation(skip.to_string()))?;
    let start = initial.reasoning_state(task.syc_type);
    let max_depth = estimator.max_depth;

    match cfg.method {
        BaselineMethod::PromptN => {
            // Independent seeded rollouts, deduplicated with multiplicities.
            let mut order: Vec<Vec<Token>> = Vec::new();
            let mut bucket: std::collections::BTreeMap<Vec<Token>, (Vec<StepText>, u32)> =
                std::collections::BTreeMap::new();
            for i in 0..cfg.n_samples as u64 {
                let steps = sample_trajectory(
                    policy,
                    &start,
                    &[],
                    sample_seed(cfg.rng_seed, &task.id, i),
                    max_depth,
                )?;
                let flat: Vec<Token> = steps.iter().flat_map(|s| s.tokens.clone()).collect();
                match bucket.get_mut(&flat) {
                    Some((_, count)) => *count += 1,
                    None => {
                        order.push(flat.clone());
                        bucket.insert(flat, (steps, 1));
                    }
                }
            }
            order
                .into_iter()
                .map(|flat| {
                    let (steps, count) = bucket.remove(&flat).expect("recorded above");
                    record_from_steps(task, policy, &start, steps, estimator, count)
                })
                .collect()
        }
        BaselineMethod::CoTSingle => {
            let steps = sample_trajectory(
                policy,
                &start,
                &[LETS, THINK],
                sample_seed(cfg.rng_seed, &task.id, 0),
                max_depth,
            )?;
            Ok(vec![record_from_steps(
                task, policy, &start, steps, estimator, 1,
            )?])
        }
        BaselineMethod::TemperatureSampling => {
            let mut records = Vec::with_capacity(cfg.temperatures.len());
            for (i, &t) in cfg.temperatures.iter().enumerate() {
                let tempered = policy.clone().with_temperature(t);
                let steps = sample_trajectory(
                    &tempered,
                    &start,
                    &[],
                    sample_seed(cfg.rng_seed, &task.id, i as u64),
                    max_depth,
                )?;
                // Gains are conditioned on the collection policy as-is.
                records.push(record_from_steps(
                    task, policy, &start, steps, estimator, 1,
                )?);
            }
            Ok(records)
        }
        BaselineMethod::BestOfN => {
            let mut candidates = Vec::with_capacity(cfg.n_samples);
            for i in 0..cfg.n_samples as u64 {
                let steps = sample_trajectory(
                    policy,
                    &start,
                    &[],
                    sample_seed(cfg.rng_seed, &task.id, i),
                    max_depth,
                )?;
                candidates.push(record_from_steps(
                    task, policy, &start, steps, estimator, 1,
                )?);
            }
            Ok(vec![best_of_n_select(&candidates)?])
        }
    }
}

/// The first outcome-verified candidate in generation order; when nothing
/// verifies, the candidate with the highest raw-gain sum (earliest on ties).
pub fn best_of_n_select(candidates: &[TrajectoryRecord]) -> Result<TrajectoryRecord> {
    if candidates.is_empty() {
        return Err(Error::validation("best-of-n requires candidates"));
    }
    if let Some(hit) = candidates.iter().find(|c| c.r_out == 1) {
        return Ok(hit.clone());
    }
    let mut best = 0usize;
    for (i, c) in candidates.iter().enumerate() {
        if c.raw_gain_sum() > candidates[best].raw_gain_sum() {
            best = i;
        }
    }
    Ok(candidates[best].clone())
}
