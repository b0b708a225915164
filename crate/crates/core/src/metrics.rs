//! Evaluation and analysis: truthfulness, KL from the base policy,
//! reward-versus-KL rows, per-step information gain and efficiency stats.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::Result;
use crate::hashes::stream_seed;
use crate::policy::{rollout_greedy, PolicyHandle, PolicyParams, ReasoningState, DEFAULT_MAX_DEPTH};
use crate::search::TrajectoryRecord;
use crate::task::{outcome_reward, TaskInstance};

/// Default probe-state sample size for KL estimates.
pub const DEFAULT_PROBE_STATES: usize = 256;

/// Summary of one run for reporting and directional comparisons. Success-side
/// statistics are absent when the dataset holds no successful trajectories.
#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub method: String,
    pub mean_reward: f64,
    pub kl_from_base: f64,
    pub avg_step_info_gain: Option<f64>,
    pub mean_steps_success: Option<f64>,
    pub mean_steps_failure: Option<f64>,
    pub mean_tokens_success: Option<f64>,
    pub mean_tokens_failure: Option<f64>,
    pub truthfulness: f64,
}

/// Fraction of tasks whose greedy rollout from the sycophantic initial state
/// ends in the correct answer.
pub fn truthfulness_accuracy(policy: &PolicyHandle, eval_tasks: &[TaskInstance]) -> f64 {
    if eval_tasks.is_empty() {
        return 0.0;
    }
    let mut correct = 0usize;
    for task in eval_tasks {
        let state = ReasoningState::new(task.syc_type, task.initial_state_tokens());
        let rollout =
            rollout_greedy(policy, &state, DEFAULT_MAX_DEPTH).expect("tabular rollout cannot fail");
        let r = match rollout.steps.last() {
            Some(step) => outcome_reward(task, &step.tokens),
            None => 0.0,
        };
        if r == 1.0 {
            correct += 1;
        }
    }
    correct as f64 / eval_tasks.len() as f64
}

/// Probe contexts for KL estimation: the union of states visited by both
/// policies' greedy rollouts plus seeded sampled rollouts, truncated to
/// `max_states` in deterministic order.
pub fn build_probe_states(
    tasks: &[TaskInstance],
    policy_a: &PolicyHandle,
    policy_b: &PolicyHandle,
    seed: u64,
    max_states: usize,
) -> Vec<u64> {
    let k = policy_a.context_k();
    let mut seen = std::collections::BTreeSet::new();
    let mut keys = Vec::new();
    let mut push = |key: u64, keys: &mut Vec<u64>| {
        if seen.insert(key) {
            keys.push(key);
        }
    };

    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(seed, "probe", 0));
    for task in tasks {
        let start = ReasoningState::new(task.syc_type, task.initial_state_tokens());
        for policy in [policy_a, policy_b] {
            let mut state = start.clone();
            push(state.context_key(k), &mut keys);
            let rollout = rollout_greedy(policy, &state, DEFAULT_MAX_DEPTH)
                .expect("tabular rollout cannot fail");
            for step in rollout.steps {
                state.push_step(&step);
                push(state.context_key(k), &mut keys);
            }
        }
        // One sampled rollout per task for off-greedy coverage.
        let sample_seed: u64 = rng.gen();
        let mut state = start.clone();
        if let Ok(rollout) =
            crate::policy::rollout_to_terminal(policy_a, &state, sample_seed, DEFAULT_MAX_DEPTH)
        {
            for step in rollout.steps {
                state.push_step(&step);
                push(state.context_key(k), &mut keys);
            }
        }
        if keys.len() >= max_states * 2 {
            break;
        }
    }
    keys.truncate(max_states);
    keys
}

/// Mean per-state KL(new || base) in nats over probe contexts.
pub fn kl_from_base(policy_new: &PolicyParams, policy_base: &PolicyParams, probes: &[u64]) -> f64 {
    crate::optim::kl_penalty_keys(policy_new, policy_base, probes)
}

fn mean(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        None
    } else {
        Some(values.iter().sum::<f64>() / values.len() as f64)
    }
}

/// Aggregates a dataset plus trained/base policy pair into a summary row.
pub fn summarize_run(
    method: &str,
    dataset: &[TrajectoryRecord],
    trained: &PolicyParams,
    base: &PolicyParams,
    eval_tasks: &[TaskInstance],
    probe_seed: u64,
    probe_states: usize,
) -> Result<RunSummary> {
    if dataset.is_empty() {
        return Err(crate::error::Error::validation("dataset is empty"));
    }
    // Total reward of a trajectory: raw step gains plus the outcome reward.
    let mean_reward = dataset
        .iter()
        .map(|r| r.raw_gain_sum() + r.r_out as f64)
        .sum::<f64>()
        / dataset.len() as f64;

    let mut success_gains = Vec::new();
    let mut steps_s = Vec::new();
    let mut steps_f = Vec::new();
    let mut tokens_s = Vec::new();
    let mut tokens_f = Vec::new();
    for rec in dataset {
        if rec.r_out == 1 {
            for step in &rec.steps {
                success_gains.push(step.r_prog_raw);
            }
            steps_s.push(rec.steps.len() as f64);
            tokens_s.push(rec.total_tokens() as f64);
        } else {
            steps_f.push(rec.steps.len() as f64);
            tokens_f.push(rec.total_tokens() as f64);
        }
    }

    let trained_handle = PolicyHandle::tabular(trained.clone());
    let base_handle = PolicyHandle::tabular(base.clone());
    let probes = build_probe_states(
        eval_tasks,
        &trained_handle,
        &base_handle,
        probe_seed,
        probe_states,
    );
    Ok(RunSummary {
        method: method.to_string(),
        mean_reward,
        kl_from_base: kl_from_base(trained, base, &probes),
        avg_step_info_gain: mean(&success_gains),
        mean_steps_success: mean(&steps_s),
        mean_steps_failure: mean(&steps_f),
        mean_tokens_success: mean(&tokens_s),
        mean_tokens_failure: mean(&tokens_f),
        truthfulness: truthfulness_accuracy(&trained_handle, eval_tasks),
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

/// One CSV row per (method, seed, epoch) checkpoint for the reward-vs-KL plot.
#[derive(Debug, Clone)]
pub struct RewardKlRow {
    pub method: String,
    pub seed: u64,
    pub epoch: usize,
    pub kl: f64,
    pub mean_reward: f64,
}

pub fn reward_vs_kl_csv(rows: &[RewardKlRow]) -> String {
    let mut out = String::from("method,seed,epoch,kl,mean_reward\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{:.6},{:.6}\n",
            r.method, r.seed, r.epoch, r.kl, r.mean_reward
        ));
    }
    out
}

pub fn efficiency_csv(rows: &[(String, u64, RunSummary)]) -> String {
    let mut out = String::from(
        "method,seed,mean_steps_success,mean_tokens_success,mean_steps_failure,mean_tokens_failure\n",
    );
    for (method, seed, s) in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            method,
            seed,
            fmt_opt(s.mean_steps_success),
            fmt_opt(s.mean_tokens_success),
            fmt_opt(s.mean_steps_failure),
            fmt_opt(s.mean_tokens_failure),
        ));
    }
    out
}

pub fn info_gain_csv(rows: &[(String, u64, Option<f64>, f64)]) -> String {
    let mut out = String::from("method,seed,avg_step_info_gain,alt_truthfulness\n");
    for (method, seed, gain, alt) in rows {
        out.push_str(&format!(
            "{},{},{},{:.6}\n",
            method,
            seed,
            fmt_opt(*gain),
            alt
        ));
    }
    out
}

pub fn truthfulness_csv(rows: &[(String, u64, String, f64)]) -> String {
    let mut out = String::from("method,seed,split,truthfulness\n");
    for (method, seed, split, v) in rows {
        out.push_str(&format!("{method},{seed},{split},{v:.6}\n"));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::script::{seed_base_policy, ScriptProfile};
    use crate::search::{SearchMeta, TrajectoryStep};
    use crate::vocab::{AnswerKey, Token, ANSWER, SEP};

    fn record(task_id: &str, n_steps: usize, r_out: u8, gain: f64) -> TrajectoryRecord {
        TrajectoryRecord {
            task_id: task_id.to_string(),
            steps: (0..n_steps)
                .map(|_| TrajectoryStep {
                    tokens: vec![ANSWER, Token(4), SEP],
                    r_prog_raw: gain,
                    r_prog_normalized: gain / (n_steps as f64 * gain.abs().max(1e-9)),
                })
                .collect(),
            r_out,
            final_answer: AnswerKey::from_raw("4"),
            search_meta: SearchMeta::external(1),
        }
    }

    #[test]
    fn base_policy_is_sycophantic_and_truthfulness_is_zero() {
        let tasks = crate::task::generate_tasks(3, 6, 0.5).unwrap();
        let params = seed_base_policy(&tasks, &ScriptProfile::base(), 3);
        let policy = PolicyHandle::tabular(params);
        let truth = truthfulness_accuracy(&policy, &tasks);
        assert!(truth <= 0.30, "base policy should be sycophantic, got {truth}");
    }

    #[test]
    fn efficiency_means_follow_success_split() {
        let dataset = vec![
            record("t0", 4, 1, 0.1),
            record("t1", 6, 1, 0.1),
            record("t2", 3, 0, 0.1),
        ];
        let steps_s: Vec<f64> = dataset
            .iter()
            .filter(|r| r.r_out == 1)
            .map(|r| r.steps.len() as f64)
            .collect();
        assert_eq!(mean(&steps_s), Some(5.0));
    }

    #[test]
    fn zero_success_dataset_reports_absent_markers() {
        let tasks = crate::task::generate_tasks(5, 2, 0.5).unwrap();
        let params = seed_base_policy(&tasks, &ScriptProfile::base(), 3);
        let dataset = vec![record("t0", 3, 0, 0.1)];
        let summary =
            summarize_run("x", &dataset, &params, &params, &tasks, 0, 256).unwrap();
        assert!(summary.mean_steps_success.is_none());
        assert!(summary.avg_step_info_gain.is_none());
        assert!(summary.mean_steps_failure.is_some());
        assert_eq!(summary.kl_from_base, 0.0);
        let csv = efficiency_csv(&[("x".into(), 0, summary)]);
        assert!(csv.lines().nth(1).unwrap().starts_with("x,0,,,"));
    }

    #[test]
    fn single_trajectory_summary_values() {
        // Raw gains (0.2, 0.2), r_out = 1: avg gain 0.2, mean reward 1.4.
        let tasks = crate::task::generate_tasks(5, 2, 0.5).unwrap();
        let params = seed_base_policy(&tasks, &ScriptProfile::base(), 3);
        let mut rec = record("t0", 2, 1, 0.2);
        for s in &mut rec.steps {
            s.r_prog_normalized = 0.5;
        }
        let summary =
            summarize_run("x", &[rec], &params, &params, &tasks, 0, 256).unwrap();
        assert_eq!(summary.avg_step_info_gain, Some(0.2));
        assert!((summary.mean_reward - 1.4).abs() < 1e-12);
        assert_eq!(summary.mean_steps_success, Some(2.0));
    }
}
