//! Dense-reward clipped trust-region fine-tuning of the tabular policy.
//!
//! Training is one offline round: the collection snapshot stays fixed as the
//! old policy while several epochs of clipped updates run against it. Every
//! token of a step inherits the step's advantage; gradients of the tabular
//! softmax are analytic and the whole procedure is deterministic given
//! (dataset, params, config).

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hashes::stream_seed;
use crate::policy::{PolicyHandle, PolicyParams, ReasoningState};
use crate::search::TrajectoryRecord;
use crate::task::TaskInstance;
use crate::vocab::Token;

const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OptimConfig {
    pub clip_epsilon: f64,
    pub kl_coeff: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub rng_seed: u64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            clip_epsilon: 0.2,
            kl_coeff: 0.05,
            learning_rate: 0.05,
            epochs: 4,
            batch_size: 64,
            rng_seed: 0,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.clip_epsilon > 0.0 && self.clip_epsilon < 1.0) {
            return Err(Error::validation("clip_epsilon must lie in (0, 1)"));
        }
        if self.kl_coeff < 0.0 {
            return Err(Error::validation("kl_coeff must be non-negative"));
        }
        if self.learning_rate <= 0.0 {
            return Err(Error::validation("learning_rate must be positive"));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::validation("epochs and batch_size must be positive"));
        }
        Ok(())
    }
}

/// One (state, action) supervision item.
#[derive(Debug, Clone)]
pub struct TrainItem {
    pub ctx_key: u64,
    pub action: Token,
    pub return_to_go: f64,
    pub advantage: f64,
    pub old_logprob: f64,
}

#[derive(Debug, Clone, Default)]
pub struct TrainBatch {
    pub items: Vec<TrainItem>,
    pub source_ids: Vec<String>,
}

/// Per-step (return-to-go, advantage) for one task's trajectory group.
/// The baseline at step index t is the mean return-to-go at t across the
/// group's trajectories, skipping trajectories shorter than t; a singleton
/// group uses a zero baseline.
pub fn compute_returns_and_advantages(
    records: &[TrajectoryRecord],
) -> Result<Vec<Vec<(f64, f64)>>> {
    if records.is_empty() {
        return Err(Error::validation("empty record group"));
    }
    let task_id = &records[0].task_id;
    if records.iter().any(|r| &r.task_id != task_id) {
        return Err(Error::validation("record group mixes tasks"));
    }

    let returns: Vec<Vec<f64>> = records
        .iter()
        .map(|rec| {
            let mut rtg = vec![0.0; rec.steps.len()];
            let mut acc = rec.r_out as f64;
            for (t, step) in rec.steps.iter().enumerate().rev() {
                acc += step.r_prog_normalized;
                rtg[t] = acc;
            }
            rtg
        })
        .collect();

    let singleton = records.len() == 1;
    let max_len = returns.iter().map(|r| r.len()).max().unwrap_or(0);
    let mut baseline = vec![0.0; max_len];
    if !singleton {
        for (t, slot) in baseline.iter_mut().enumerate() {
            let vals: Vec<f64> = returns
                .iter()
                .filter(|r| r.len() > t)
                .map(|r| r[t])
                .collect();
            if !vals.is_empty() {
                *slot = vals.iter().sum::<f64>() / vals.len() as f64;
            }
        }
    }

    Ok(returns
        .into_iter()
        .map(|rtg| {
            rtg.into_iter()
                .enumerate()
                .map(|(t, r)| (r, r - baseline[t]))
                .collect()
        })
        .collect())
}

/// Pessimistic clipped surrogate: `min(rho * A, clip(rho, 1-eps, 1+eps) * A)`.
pub fn clipped_term(rho: f64, advantage: f64, epsilon: f64) -> f64 {
    debug_assert!(rho > 0.0);
    let clipped = rho.clamp(1.0 - epsilon, 1.0 + epsilon);
    (rho * advantage).min(clipped * advantage)
}

/// Mean KL(new || old) over context keys, with a probability floor on the
/// old policy's support.
pub fn kl_penalty_keys(new: &PolicyParams, old: &PolicyParams, keys: &[u64]) -> f64 {
    if keys.is_empty() {
        return 0.0;
    }
    let mut total = 0.0;
    for &key in keys {
        total += kl_at_key(new, old, key);
    }
    total / keys.len() as f64
}

fn kl_at_key(new: &PolicyParams, old: &PolicyParams, key: u64) -> f64 {
    let p_new = new.dist(key, 1.0);
    let p_old = old.dist(key, 1.0);
    let mut kl = 0.0;
    for (pn, po) in p_new.iter().zip(&p_old) {
        if *pn > 0.0 {
            kl += pn * (pn / po.max(PROB_FLOOR)).ln();
        }
    }
    kl.max(0.0)
}

/// Mean per-state KL between two policies over reasoning states.
pub fn kl_penalty(new: &PolicyParams, old: &PolicyParams, states: &[ReasoningState]) -> f64 {
    let keys: Vec<u64> = states.iter().map(|s| s.context_key(new.context_k)).collect();
    kl_penalty_keys(new, old, &keys)
}

/// Builds token-level training items from an enriched dataset. Initial
/// states are reconstructed from the task definitions; the old log
/// probabilities are frozen from `old`.
pub fn build_batch(
    records: &[TrajectoryRecord],
    tasks: &BTreeMap<String, TaskInstance>,
    old: &PolicyParams,
) -> Result<TrainBatch> {
    if records.is_empty() {
        return Err(Error::validation("dataset is empty"));
    }
    let mut by_task: BTreeMap<&str, Vec<&TrajectoryRecord>> = BTreeMap::new();
    for rec in records {
        by_task.entry(&rec.task_id).or_default().push(rec);
    }

    let mut batch = TrainBatch::default();
    for (task_id, group) in by_task {
        let task = tasks
            .get(task_id)
            .ok_or_else(|| Error::validation(format!("dataset references unknown task {task_id}")))?;
        let group_owned: Vec<TrajectoryRecord> = group.iter().map(|r| (*r).clone()).collect();
        let advantages = compute_returns_and_advantages(&group_owned)?;
        for (rec, adv) in group.iter().zip(advantages) {
            let mut state = ReasoningState::new(task.syc_type, task.initial_state_tokens());
            for (step, &(return_to_go, advantage)) in rec.steps.iter().zip(adv.iter()) {
                let mut partial: Vec<Token> = Vec::new();
                for &tok in &step.tokens {
                    let key = state.context_key_after(&partial, old.context_k);
                    let dist = old.dist(key, 1.0);
                    batch.items.push(TrainItem {
                        ctx_key: key,
                        action: tok,
                        return_to_go,
                        advantage,
                        old_logprob: dist[tok.0 as usize].max(PROB_FLOOR).ln(),
                    });
                    partial.push(tok);
                }
                state.push_step(&crate::policy::StepText {
                    tokens: step.tokens.clone(),
                    terminated_by: crate::policy::StepTermination::Delimiter,
                });
            }
        }
        batch.source_ids.push(task_id.to_string());
    }
    Ok(batch)
}

/// Distinct context keys of an item set, in ascending order.
pub fn item_keys(items: &[TrainItem]) -> Vec<u64> {
    let mut keys: Vec<u64> = items.iter().map(|i| i.ctx_key).collect();
    keys.sort_unstable();
    keys.dedup();
    keys
}

/// Full objective: mean clipped surrogate minus the KL penalty over the
/// items' distinct contexts.
pub fn objective_value(
    params: &PolicyParams,
    old: &PolicyParams,
    items: &[TrainItem],
    cfg: &OptimConfig,
) -> f64 {
    if items.is_empty() {
        return 0.0;
    }
    let mut surrogate = 0.0;
    for item in items {
        let dist = params.dist(item.ctx_key, 1.0);
        let p_new = dist[item.action.0 as usize].max(PROB_FLOOR);
        let rho = (p_new.ln() - item.old_logprob).exp();
        surrogate += clipped_term(rho, item.advantage, cfg.clip_epsilon);
    }
    surrogate /= items.len() as f64;
    let kl = kl_penalty_keys(params, old, &item_keys(items));
    surrogate - cfg.kl_coeff * kl
}

/// Analytic gradient of the objective with respect to the logits, keyed by
/// context. Matches `objective_value` exactly (same clipping gates and the
/// same KL averaging).
pub fn objective_gradient(
    params: &PolicyParams,
    old: &PolicyParams,
    items: &[TrainItem],
    cfg: &OptimConfig,
) -> BTreeMap<u64, Vec<f64>> {
    let mut grad: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
    if items.is_empty() {
        return grad;
    }
    let m = items.len() as f64;
    let vocab = params.vocab_size;

    for item in items {
        let dist = params.dist(item.ctx_key, 1.0);
        let p_new = dist[item.action.0 as usize].max(PROB_FLOOR);
        let rho = (p_new.ln() - item.old_logprob).exp();
        let a = item.advantage;
        // The min() selects the unclipped branch unless the ratio has moved
        // past the trust region in the profitable direction.
        let active = if a >= 0.0 {
            rho <= 1.0 + cfg.clip_epsilon
        } else {
            rho >= 1.0 - cfg.clip_epsilon
        };
        if !active {
            continue;
        }
        let row = grad.entry(item.ctx_key).or_insert_with(|| vec![0.0; vocab]);
        let coef = rho * a / m;
        let action = item.action.0 as usize;
        for (b, g) in row.iter_mut().enumerate() {
            let indicator = if b == action { 1.0 } else { 0.0 };
            *g += coef * (indicator - dist[b]);
        }
    }

    if cfg.kl_coeff > 0.0 {
        let keys = item_keys(items);
        let n_keys = keys.len() as f64;
        for key in keys {
            let p_new = params.dist(key, 1.0);
            let p_old = old.dist(key, 1.0);
            let kl = kl_at_key(params, old, key);
            let row = grad.entry(key).or_insert_with(|| vec![0.0; vocab]);
            for (b, g) in row.iter_mut().enumerate() {
                let ratio_ln = (p_new[b].max(PROB_FLOOR) / p_old[b].max(PROB_FLOOR)).ln();
                *g -= cfg.kl_coeff * p_new[b] * (ratio_ln - kl) / n_keys;
            }
        }
    }
    grad
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub objective: f64,
    pub mean_return: f64,
    pub kl: f64,
    pub dev_truthfulness: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: PolicyParams,
    pub log: Vec<EpochLog>,
    /// Parameters after each completed epoch, for reward-versus-KL curves.
    pub epoch_params: Vec<PolicyParams>,
    /// Set when training stopped early on non-finite parameters; `params`
    /// then holds the last stable checkpoint.
    pub diverged_at: Option<usize>,
}

/// Ascends the clipped objective for `cfg.epochs` epochs of shuffled
/// minibatches. The old policy is the collection snapshot `params` and stays
/// fixed throughout.
pub fn train(
    records: &[TrajectoryRecord],
    tasks: &BTreeMap<String, TaskInstance>,
    params: &PolicyParams,
    cfg: &OptimConfig,
    dev_tasks: Option<&[TaskInstance]>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let old = params.clone();
    let batch = build_batch(records, tasks, &old)?;
    let mean_return = records.iter().map(|r| r.total_return()).sum::<f64>() / records.len() as f64;

    let mut current = params.clone();
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut epoch_params = Vec::with_capacity(cfg.epochs);
    let mut last_stable = current.clone();

    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..batch.items.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(cfg.rng_seed, "epoch", epoch as u64));
        order.shuffle(&mut rng);

        for chunk in order.chunks(cfg.batch_size) {
            let items: Vec<TrainItem> = chunk.iter().map(|&i| batch.items[i].clone()).collect();
            let grad = objective_gradient(&current, &old, &items, cfg);
            for (key, row) in grad {
                let logits = current.logits_mut(key);
                for (l, g) in logits.iter_mut().zip(row) {
                    *l += cfg.learning_rate * g;
                }
            }
        }

        if !current.all_finite() {
            return Ok(TrainOutcome {
                params: last_stable,
                log,
                epoch_params,
                diverged_at: Some(epoch),
            });
        }
        last_stable = current.clone();
        epoch_params.push(current.clone());

        let objective = objective_value(&current, &old, &batch.items, cfg);
        let kl = kl_penalty_keys(&current, &old, &item_keys(&batch.items));
        let dev_truthfulness = dev_tasks.map(|dev| {
            crate::metrics::truthfulness_accuracy(&PolicyHandle::tabular(current.clone()), dev)
        });
        log.push(EpochLog {
            epoch,
            objective,
            mean_return,
            kl,
            dev_truthfulness,
        });
    }

    Ok(TrainOutcome {
        params: current,
        log,
        epoch_params,
        diverged_at: None,
    })
}
