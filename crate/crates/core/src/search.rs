//! Uncertainty-adaptive Monte Carlo tree search with progress rewards.
//!
//! Expansion width follows the nucleus of the next-token distribution, child
//! values are warm-started with the step's information gain, selection adds
//! an entropy-scaled exploration bonus, and every rollout that reaches an
//! answer contributes a trajectory to the enriched dataset.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hashes::Fnv1a;
use crate::policy::{
    complete_step, entropy_of_dist, next_token_dist, Draw, PolicyHandle, ReasoningState, StepText,
};
use crate::progress::{
    estimate_answer_distribution, normalize_gains, EstimatorConfig, EstimatorMode,
};
use crate::task::{build_initial_state, outcome_reward, TaskInstance};
use crate::vocab::{AnswerKey, Token};

/// Search hyperparameters.
#[derive(Debug, Clone)]
pub struct SearchConfig {
    pub beta_nucleus: f64,
    pub c_explore: f64,
    pub lambda_entropy: f64,
    pub budget: usize,
    pub max_depth: usize,
    pub k_max: usize,
    pub rng_seed: u64,
    pub estimator_mode: EstimatorMode,
    pub mc_samples: usize,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            beta_nucleus: 0.9,
            c_explore: std::f64::consts::SQRT_2,
            lambda_entropy: 0.2,
            budget: 64,
            max_depth: 12,
            k_max: 8,
            rng_seed: 0,
            estimator_mode: EstimatorMode::Auto,
            mc_samples: crate::progress::DEFAULT_MC_SAMPLES,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta_nucleus > 0.0 && self.beta_nucleus <= 1.0) {
            return Err(Error::validation("beta_nucleus must lie in (0, 1]"));
        }
        if self.c_explore <= 0.0 {
            return Err(Error::validation("c_explore must be positive"));
        }
        if self.lambda_entropy < 0.0 {
            return Err(Error::validation("lambda_entropy must be non-negative"));
        }
        if self.budget < 1 {
            return Err(Error::validation("budget_B must be at least 1"));
        }
        Ok(())
    }

    pub fn estimator(&self, task_seed: u64) -> EstimatorConfig {
        let mut cfg = EstimatorConfig::new(
            self.estimator_mode,
            self.beta_nucleus,
            task_seed,
            self.max_depth,
        );
        cfg.mc_samples = self.mc_samples;
        cfg
    }
}

/// Minimal set of highest-probability tokens whose cumulative mass reaches
/// `beta`. Tokens come out sorted by descending probability with ties broken
/// by ascending id.
pub fn adaptive_expansion_set(dist: &[f64], beta: f64) -> Vec<Token> {
    debug_assert!(beta > 0.0 && beta <= 1.0);
    let mut order: Vec<usize> = (0..dist.len()).collect();
    order.sort_by(|&a, &b| {
        dist[b]
            .partial_cmp(&dist[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let mut out = Vec::new();
    let mut cum = 0.0;
    for idx in order {
        out.push(Token(idx as u16));
        cum += dist[idx];
        if cum + 1e-12 >= beta {
            break;
        }
    }
    out
}

/// Composite selection score: expected value plus an exploration bonus
/// scaled by `1 + lambda * H(pi(.|s))`. The visit log uses `max(N(s), 1)`
/// so the root's first selection is finite.
pub fn selection_score(
    q: f64,
    n_edge: u64,
    n_node: u64,
    policy_entropy: f64,
    cfg: &SearchConfig,
) -> f64 {
    let ln_n = (n_node.max(1) as f64).ln();
    let scale = 1.0 + cfg.lambda_entropy * policy_entropy;
    q + cfg.c_explore * (ln_n / (1.0 + n_edge as f64)).sqrt() * scale
}

/// Argmax of the selection score over `(action, Q, N_edge)` children; ties
/// break toward the lowest token id.
pub fn select_child_index(
    children: &[(Token, f64, u64)],
    n_node: u64,
    policy_entropy: f64,
    cfg: &SearchConfig,
) -> usize {
    debug_assert!(!children.is_empty());
    let mut best = 0usize;
    let mut best_score = f64::NEG_INFINITY;
    for (i, &(action, q, n_edge)) in children.iter().enumerate() {
        let score = selection_score(q, n_edge, n_node, policy_entropy, cfg);
        let better =
            score > best_score || (score == best_score && action < children[best].0);
        if better {
            best = i;
            best_score = score;
        }
    }
    best
}

/// One step of a stored trajectory with its progress rewards.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectoryStep {
    pub tokens: Vec<Token>,
    pub r_prog_raw: f64,
    pub r_prog_normalized: f64,
}

fn default_multiplicity() -> u32 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchMeta {
    pub iteration_found: u64,
    pub node_ids: Vec<u32>,
    #[serde(default = "default_multiplicity")]
    pub multiplicity: u32,
}

impl SearchMeta {
    pub fn external(multiplicity: u32) -> Self {
        SearchMeta {
            iteration_found: 0,
            node_ids: Vec::new(),
            multiplicity,
        }
    }
}

/// A completed trajectory: one element of the enriched dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectoryRecord {
    pub task_id: String,
    pub steps: Vec<TrajectoryStep>,
    pub r_out: u8,
    pub final_answer: AnswerKey,
    pub search_meta: SearchMeta,
}

impl TrajectoryRecord {
    pub fn raw_gain_sum(&self) -> f64 {
        self.steps.iter().map(|s| s.r_prog_raw).sum()
    }

    pub fn normalized_gain_sum(&self) -> f64 {
        self.steps.iter().map(|s| s.r_prog_normalized).sum()
    }

    /// Total reward: normalized progress plus the outcome reward.
    pub fn total_return(&self) -> f64 {
        self.normalized_gain_sum() + self.r_out as f64
    }

    pub fn total_tokens(&self) -> usize {
        self.steps.iter().map(|s| s.tokens.len()).sum()
    }

    pub fn flat_tokens(&self) -> Vec<Token> {
        self.steps.iter().flat_map(|s| s.tokens.clone()).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.r_out > 1 {
            return Err(Error::validation(format!(
                "{}: r_out must be 0 or 1",
                self.task_id
            )));
        }
        let l1: f64 = self.steps.iter().map(|s| s.r_prog_normalized.abs()).sum();
        if l1 > 1.0 + crate::progress::NORMALIZE_EPS {
            return Err(Error::validation(format!(
                "{}: normalized gains have L1 norm {l1}",
                self.task_id
            )));
        }
        for step in &self.steps {
            if step.tokens.is_empty() {
                return Err(Error::validation(format!("{}: empty step", self.task_id)));
            }
            if !step.r_prog_raw.is_finite() || !step.r_prog_normalized.is_finite() {
                return Err(Error::validation(format!(
                    "{}: non-finite progress reward",
                    self.task_id
                )));
            }
        }
        Ok(())
    }

    /// Checks the stored outcome reward against the task's ground truth.
    pub fn validate_against(&self, task: &TaskInstance) -> Result<()> {
        self.validate()?;
        let last = self
            .steps
            .last()
            .ok_or_else(|| Error::validation(format!("{}: no steps", self.task_id)))?;
        let expected = outcome_reward(task, &last.tokens) as u8;
        if expected != self.r_out {
            return Err(Error::validation(format!(
                "{}: stored r_out {} but final step scores {}",
                self.task_id, self.r_out, expected
            )));
        }
        Ok(())
    }
}

struct Edge {
    action: Token,
    q: f64,
    n_edge: u64,
    child: usize,
    returns: Vec<f64>,
    warm_start: f64,
}

struct Node {
    state: ReasoningState,
    step_gain: f64,
    entropy_h: f64,
    policy_entropy: f64,
    edges: Vec<Edge>,
    n_node: u64,
    is_terminal: bool,
    expanded: bool,
    parent: Option<(usize, Token)>,
}

/// Post-run view of the tree, used by consistency checks and tests.
#[derive(Debug, Clone, Serialize)]
pub struct NodeTrace {
    pub id: u32,
    pub parent: Option<(u32, Token)>,
    pub depth: usize,
    pub step_gain: f64,
    pub entropy: f64,
    pub is_terminal: bool,
    pub n_node: u64,
    pub edges: Vec<EdgeTrace>,
}

#[derive(Debug, Clone, Serialize)]
pub struct EdgeTrace {
    pub action: Token,
    pub q: f64,
    pub n_edge: u64,
    pub child: u32,
    pub returns: Vec<f64>,
    pub warm_start: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SearchTrace {
    pub nodes: Vec<NodeTrace>,
}

struct Collected {
    steps: Vec<(Vec<Token>, f64)>,
    r_out: u8,
    final_answer: AnswerKey,
    iteration_found: u64,
    node_ids: Vec<u32>,
    raw_return: f64,
}

struct Search<'a> {
    task: &'a TaskInstance,
    policy: &'a PolicyHandle,
    cfg: &'a SearchConfig,
    est: EstimatorConfig,
    nodes: Vec<Node>,
    rng: ChaCha8Rng,
    collected: BTreeMap<Vec<Token>, Collected>,
}

impl Search<'_> {
    fn node_entropy(&self, state: &ReasoningState) -> Result<f64> {
        if state.is_terminal() {
            // A terminal state has a point-mass answer distribution.
            return Ok(0.0);
        }
        Ok(estimate_answer_distribution(self.policy, self.task, state, &self.est)?.entropy())
    }

    fn make_node(
        &mut self,
        state: ReasoningState,
        step_gain: f64,
        parent: Option<(usize, Token)>,
    ) -> Result<usize> {
        let is_terminal = state.is_terminal() || state.depth() >= self.cfg.max_depth;
        let entropy_h = self.node_entropy(&state)?;
        let policy_entropy = if is_terminal {
            0.0
        } else {
            entropy_of_dist(&next_token_dist(self.policy, &state)?)?
        };
        self.nodes.push(Node {
            state,
            step_gain,
            entropy_h,
            policy_entropy,
            edges: Vec::new(),
            n_node: 0,
            is_terminal,
            expanded: false,
            parent,
        });
        Ok(self.nodes.len() - 1)
    }

    fn select_edge(&self, node_idx: usize) -> usize {
        let node = &self.nodes[node_idx];
        debug_assert!(!node.edges.is_empty(), "selection requires children");
        let scored: Vec<(Token, f64, u64)> = node
            .edges
            .iter()
            .map(|e| (e.action, e.q, e.n_edge))
            .collect();
        select_child_index(&scored, node.n_node, node.policy_entropy, self.cfg)
    }

    fn expand(&mut self, node_idx: usize) -> Result<()> {
        let state = self.nodes[node_idx].state.clone();
        let parent_h = self.nodes[node_idx].entropy_h;
        let dist = next_token_dist(self.policy, &state)?;
        let nucleus = adaptive_expansion_set(&dist, self.cfg.beta_nucleus);
        let mut edges = Vec::with_capacity(nucleus.len());
        for action in nucleus {
            let step = complete_step(
                self.policy,
                &state,
                action,
                &mut Draw::Sample(&mut self.rng),
            )?;
            if step.tokens.is_empty() {
                continue;
            }
            let mut child_state = state.clone();
            child_state.push_step(&step);
            let child_idx = self.make_node(child_state, 0.0, Some((node_idx, action)))?;
            let gain = parent_h - self.nodes[child_idx].entropy_h;
            self.nodes[child_idx].step_gain = gain;
            edges.push(Edge {
                action,
                q: gain,
                n_edge: 0,
                child: child_idx,
                returns: Vec::new(),
                warm_start: gain,
            });
        }
        if edges.is_empty() {
            // Degenerate expansion: nothing completable, treat as terminal.
            self.nodes[node_idx].is_terminal = true;
            return Ok(());
        }
        self.nodes[node_idx].edges = edges;
        self.nodes[node_idx].expanded = true;
        Ok(())
    }

    /// Draws the rollout child in proportion to the first-token probabilities.
    fn choose_rollout_edge(&mut self, node_idx: usize) -> Result<usize> {
        let state = &self.nodes[node_idx].state;
        let dist = next_token_dist(self.policy, state)?;
        let node = &self.nodes[node_idx];
        let weights: Vec<f64> = node
            .edges
            .iter()
            .map(|e| dist[e.action.0 as usize])
            .collect();
        let total: f64 = weights.iter().sum();
        let mut u: f64 = self.rng.gen::<f64>() * total;
        for (i, w) in weights.iter().enumerate() {
            u -= w;
            if u <= 0.0 {
                return Ok(i);
            }
        }
        Ok(node.edges.len() - 1)
    }

    /// Samples from `node` to a terminal state. Returns the per-step gains of
    /// the newly sampled states and the outcome reward.
    fn simulate(&mut self, node_idx: usize) -> Result<(Vec<(StepText, f64)>, f64)> {
        let node_state = self.nodes[node_idx].state.clone();
        if self.nodes[node_idx].is_terminal {
            let r_out = terminal_outcome(self.task, &node_state);
            return Ok((Vec::new(), r_out));
        }
        let mut state = node_state;
        let mut h_prev = self.nodes[node_idx].entropy_h;
        let mut steps = Vec::new();
        while state.depth() < self.cfg.max_depth {
            let step = crate::policy::build_step(
                self.policy,
                &state,
                &[],
                &mut Draw::Sample(&mut self.rng),
                crate::policy::DEFAULT_MAX_STEP_TOKENS,
            )?;
            state.push_step(&step);
            let h_curr = self.node_entropy(&state)?;
            steps.push((step.clone(), h_prev - h_curr));
            h_prev = h_curr;
            if step.contains_answer() {
                break;
            }
        }
        let r_out = terminal_outcome(self.task, &state);
        Ok((steps, r_out))
    }

    /// Path from the root to `node_idx`: tree steps with cached gains plus
    /// the node id sequence.
    fn path_to(&self, node_idx: usize) -> (Vec<(Vec<Token>, f64)>, Vec<u32>) {
        let mut rev_steps = Vec::new();
        let mut rev_ids = vec![node_idx as u32];
        let mut cursor = node_idx;
        while let Some((parent, _)) = self.nodes[cursor].parent {
            let node = &self.nodes[cursor];
            let step = node
                .state
                .last_step_tokens()
                .expect("non-root nodes carry a step")
                .to_vec();
            rev_steps.push((step, node.step_gain));
            rev_ids.push(parent as u32);
            cursor = parent;
        }
        rev_steps.reverse();
        rev_ids.reverse();
        (rev_steps, rev_ids)
    }

    fn collect(&mut self, node_idx: usize, rollout: &[(StepText, f64)], r_out: f64, iter: u64) {
        let (mut steps, node_ids) = self.path_to(node_idx);
        for (step, gain) in rollout {
            steps.push((step.tokens.clone(), *gain));
        }
        if steps.is_empty() {
            return;
        }
        let flat: Vec<Token> = steps.iter().flat_map(|(t, _)| t.clone()).collect();
        let last = &steps[steps.len() - 1].0;
        if !last.contains(&crate::vocab::ANSWER) {
            return;
        }
        let final_answer = crate::task::final_answer(last);
        let raw_return: f64 = steps.iter().map(|(_, g)| g).sum::<f64>() + r_out;
        self.collected.entry(flat).or_insert_with(|| Collected {
            steps,
            r_out: r_out as u8,
            final_answer,
            iteration_found: iter,
            node_ids,
            raw_return,
        });
    }

    fn backpropagate(&mut self, path: &[(usize, usize)], reward: f64) {
        for &(node_idx, edge_idx) in path {
            self.nodes[node_idx].n_node += 1;
            let edge = &mut self.nodes[node_idx].edges[edge_idx];
            edge.n_edge += 1;
            edge.q += (reward - edge.q) / edge.n_edge as f64;
            edge.returns.push(reward);
        }
    }

    fn run(&mut self) -> Result<()> {
        for iter in 0..self.cfg.budget as u64 {
            let mut path: Vec<(usize, usize)> = Vec::new();
            let mut node_idx = 0usize;
            while self.nodes[node_idx].expanded && !self.nodes[node_idx].is_terminal {
                let edge_idx = self.select_edge(node_idx);
                path.push((node_idx, edge_idx));
                node_idx = self.nodes[node_idx].edges[edge_idx].child;
            }

            let reward;
            if self.nodes[node_idx].is_terminal {
                let (rollout, r_out) = self.simulate(node_idx)?;
                debug_assert!(rollout.is_empty());
                if self.nodes[node_idx].state.is_terminal() {
                    self.collect(node_idx, &[], r_out, iter);
                }
                reward = r_out;
            } else {
                self.expand(node_idx)?;
                if self.nodes[node_idx].is_terminal {
                    // Degenerate expansion path.
                    reward = terminal_outcome(self.task, &self.nodes[node_idx].state);
                } else {
                    let edge_idx = self.choose_rollout_edge(node_idx)?;
                    path.push((node_idx, edge_idx));
                    let child_idx = self.nodes[node_idx].edges[edge_idx].child;
                    let (rollout, r_out) = self.simulate(child_idx)?;
                    let rollout_gain: f64 = rollout.iter().map(|(_, g)| g).sum();
                    reward = rollout_gain + r_out;
                    let reached_answer = self.nodes[child_idx].state.is_terminal()
                        || rollout.last().is_some_and(|(s, _)| s.contains_answer());
                    if reached_answer {
                        self.collect(child_idx, &rollout, r_out, iter);
                    }
                }
            }
            self.backpropagate(&path, reward);
        }
        Ok(())
    }

    fn into_records(self) -> (Vec<TrajectoryRecord>, SearchTrace) {
        let task_id = self.task.id.clone();
        let mut collected: Vec<Collected> = self.collected.into_values().collect();
        collected.sort_by(|a, b| {
            b.raw_return
                .partial_cmp(&a.raw_return)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.steps.len().cmp(&b.steps.len()))
                .then_with(|| {
                    let fa: Vec<Token> = a.steps.iter().flat_map(|(t, _)| t.clone()).collect();
                    let fb: Vec<Token> = b.steps.iter().flat_map(|(t, _)| t.clone()).collect();
                    fa.cmp(&fb)
                })
        });
        collected.truncate(self.cfg.k_max);

        let records = collected
            .into_iter()
            .map(|c| {
                let raws: Vec<f64> = c.steps.iter().map(|(_, g)| *g).collect();
                let normalized = normalize_gains(&raws);
                TrajectoryRecord {
                    task_id: task_id.clone(),
                    steps: c
                        .steps
                        .into_iter()
                        .zip(normalized)
                        .map(|((tokens, raw), norm)| TrajectoryStep {
                            tokens,
                            r_prog_raw: raw,
                            r_prog_normalized: norm,
                        })
                        .collect(),
                    r_out: c.r_out,
                    final_answer: c.final_answer,
                    search_meta: SearchMeta {
                        iteration_found: c.iteration_found,
                        node_ids: c.node_ids,
                        multiplicity: 1,
                    },
                }
            })
            .collect();

        let trace = SearchTrace {
            nodes: self
                .nodes
                .iter()
                .enumerate()
                .map(|(id, n)| NodeTrace {
                    id: id as u32,
                    parent: n.parent.map(|(p, a)| (p as u32, a)),
                    depth: n.state.depth(),
                    step_gain: n.step_gain,
                    entropy: n.entropy_h,
                    is_terminal: n.is_terminal,
                    n_node: n.n_node,
                    edges: n
                        .edges
                        .iter()
                        .map(|e| EdgeTrace {
                            action: e.action,
                            q: e.q,
                            n_edge: e.n_edge,
                            child: e.child as u32,
                            returns: e.returns.clone(),
                            warm_start: e.warm_start,
                        })
                        .collect(),
                })
                .collect(),
        };
        (records, trace)
    }
}

fn terminal_outcome(task: &TaskInstance, state: &ReasoningState) -> f64 {
    match state.last_step_tokens() {
        Some(step) => outcome_reward(task, step),
        None => 0.0,
    }
}

fn search_stream_seed(cfg_seed: u64, task_id: &str) -> u64 {
    let mut h = Fnv1a::new();
    h.write_u64(cfg_seed);
    h.write_bytes(task_id.as_bytes());
    h.finish()
}

/// Runs the full search and also returns the tree for consistency checks.
pub fn run_search_traced(
    task: &TaskInstance,
    policy: &PolicyHandle,
    cfg: &SearchConfig,
) -> Result<(Vec<TrajectoryRecord>, SearchTrace)> {
    cfg.validate()?;
    let initial = build_initial_state(task, policy)
        .map_err(|skip| Error::validation(skip.to_string()))?;
    let state = initial.reasoning_state(task.syc_type);
    let task_seed = search_stream_seed(cfg.rng_seed, &task.id);
    let mut search = Search {
        task,
        policy,
        cfg,
        est: cfg.estimator(task_seed),
        nodes: Vec::new(),
        rng: ChaCha8Rng::seed_from_u64(task_seed),
        collected: BTreeMap::new(),
    };
    search.make_node(state, 0.0, None)?;
    search.run()?;
    Ok(search.into_records())
}

/// Runs search iterations and returns up to `k_max` distinct trajectories,
/// ranked by return.
pub fn run_search(
    task: &TaskInstance,
    policy: &PolicyHandle,
    cfg: &SearchConfig,
) -> Result<Vec<TrajectoryRecord>> {
    run_search_traced(task, policy, cfg).map(|(records, _)| records)
}
