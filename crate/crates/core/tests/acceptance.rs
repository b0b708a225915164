//! Acceptance suite: one test per exit criterion, each printing a pass line.
//!
//! Run with `cargo test --test acceptance -- --nocapture` to see the
//! per-criterion lines.

use std::collections::{BTreeMap, BTreeSet};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use recheck_core::baselines::{generate_baseline, BaselineConfig, BaselineMethod};
use recheck_core::config::PipelineConfig;
use recheck_core::exec::ExecMode;
use recheck_core::metrics::{build_probe_states, kl_from_base, truthfulness_accuracy};
use recheck_core::optim::{
    item_keys, objective_gradient, objective_value, train, OptimConfig, TrainItem,
};
use recheck_core::pipeline::{expected_eval_reward, split_train_eval, Pipeline};
use recheck_core::policy::{
    next_token_dist, rollout_to_terminal, PolicyHandle, PolicyParams, ReasoningState, SycType,
};
use recheck_core::progress::{
    estimate_answer_distribution, gains_for_steps, EstimatorConfig, EstimatorMode,
};
use recheck_core::script::{seed_base_policy, ScriptProfile};
use recheck_core::search::{
    adaptive_expansion_set, run_search_traced, SearchConfig, TrajectoryRecord,
};
use recheck_core::task::{generate_tasks, with_alternate_phrasing, TaskInstance};
use recheck_core::vocab::{Token, ANSWER, SEP, VOCAB_SIZE};

const MAX_STEP_TOKENS: usize = 32;
const MAX_DEPTH: usize = 12;

fn base_setup(seed: u64, n: usize, fraction: f64, profile: &ScriptProfile) -> (Vec<TaskInstance>, PolicyHandle) {
    let tasks = generate_tasks(seed, n, fraction).expect("corpus generates");
    let params = seed_base_policy(&tasks, profile, 3);
    (tasks, PolicyHandle::tabular(params))
}

// ---------------------------------------------------------------------------
// Criterion 1: search oracle equivalence.
// ---------------------------------------------------------------------------

/// Independent nucleus: sort indices by descending probability (ties by
/// ascending id) and take the smallest prefix reaching beta.
fn oracle_nucleus(dist: &[f64], beta: f64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..dist.len()).collect();
    idx.sort_by(|&a, &b| {
        dist[b]
            .partial_cmp(&dist[a])
            .unwrap()
            .then(a.cmp(&b))
    });
    let mut out = Vec::new();
    let mut cum = 0.0;
    for i in idx {
        out.push(i);
        cum += dist[i];
        if cum + 1e-12 >= beta {
            break;
        }
    }
    out
}

/// Brute-force enumeration of every nucleus-restricted, answer-reaching
/// trajectory, written against the policy interface only.
fn oracle_enumerate(
    policy: &PolicyHandle,
    start: &ReasoningState,
    beta: f64,
) -> BTreeSet<Vec<Token>> {
    let mut found = BTreeSet::new();
    let mut stack: Vec<(ReasoningState, Vec<Token>, Vec<Token>)> =
        vec![(start.clone(), Vec::new(), Vec::new())];
    while let Some((state, partial_step, generated)) = stack.pop() {
        if partial_step.len() >= MAX_STEP_TOKENS {
            let mut next = state.clone();
            next.push_step(&recheck_core::policy::StepText {
                tokens: partial_step.clone(),
                terminated_by: recheck_core::policy::StepTermination::MaxLen,
            });
            if partial_step.contains(&ANSWER) {
                found.insert(generated);
            } else if next.depth() < MAX_DEPTH {
                stack.push((next, Vec::new(), generated));
            }
            continue;
        }
        // Distribution at state ++ partial step.
        let mut probe = state.clone();
        if !partial_step.is_empty() {
            probe.push_step(&recheck_core::policy::StepText {
                tokens: partial_step.clone(),
                terminated_by: recheck_core::policy::StepTermination::MaxLen,
            });
        }
        let dist = next_token_dist(policy, &probe).expect("tabular dist");
        for tok_idx in oracle_nucleus(&dist, beta) {
            let tok = Token(tok_idx as u16);
            let mut step = partial_step.clone();
            let mut gen = generated.clone();
            step.push(tok);
            gen.push(tok);
            if tok == SEP {
                let mut next = state.clone();
                next.push_step(&recheck_core::policy::StepText {
                    tokens: step.clone(),
                    terminated_by: recheck_core::policy::StepTermination::Delimiter,
                });
                if step.contains(&ANSWER) {
                    found.insert(gen);
                } else if next.depth() < MAX_DEPTH {
                    stack.push((next, Vec::new(), gen));
                }
            } else {
                stack.push((state.clone(), step, gen));
            }
        }
    }
    found
}

#[test]
fn criterion_1_search_oracle_equivalence() {
    let started = Instant::now();
    let (tasks, policy) = base_setup(101, 50, 0.5, &ScriptProfile::oracle());
    assert_eq!(tasks.len(), 50);
    let cfg = SearchConfig {
        rng_seed: 101,
        estimator_mode: EstimatorMode::ExactEnumeration,
        ..SearchConfig::default()
    };
    let mut checked_edges = 0usize;
    for task in &tasks {
        let (records, trace) = run_search_traced(task, &policy, &cfg).expect("search runs");
        let found: BTreeSet<Vec<Token>> = records.iter().map(|r| r.flat_tokens()).collect();
        let initial = recheck_core::task::build_initial_state(task, &policy).expect("not skipped");
        let expected = oracle_enumerate(&policy, &initial.reasoning_state(task.syc_type), 0.9);
        assert_eq!(
            found, expected,
            "task {}: trajectory set differs from brute force",
            task.id
        );
        for node in &trace.nodes {
            for edge in &node.edges {
                if edge.n_edge > 0 {
                    let mean = edge.returns.iter().sum::<f64>() / edge.returns.len() as f64;
                    assert!(
                        (edge.q - mean).abs() < 1e-9,
                        "task {}: edge Q {} differs from return mean {}",
                        task.id,
                        edge.q,
                        mean
                    );
                    checked_edges += 1;
                }
            }
        }
    }
    let elapsed = started.elapsed();
    assert!(elapsed.as_secs() < 60, "criterion 1 exceeded 1 minute");
    println!(
        "criterion 1 (search oracle equivalence, 50 tasks, {checked_edges} edges, {:.2?}): PASS",
        elapsed
    );
}

// ---------------------------------------------------------------------------
// Criterion 2: telescoping progress rewards.
// ---------------------------------------------------------------------------

#[test]
fn criterion_2_telescoping_progress_rewards() {
    let started = Instant::now();
    let (tasks, policy) = base_setup(202, 50, 0.5, &ScriptProfile::exact());
    let est = EstimatorConfig::new(EstimatorMode::ExactEnumeration, 0.9, 202, MAX_DEPTH);
    let mut cases = 0usize;
    for task in &tasks {
        let initial = recheck_core::task::build_initial_state(task, &policy).expect("not skipped");
        let start = initial.reasoning_state(task.syc_type);
        for i in 0..20u64 {
            let rollout = rollout_to_terminal(&policy, &start, 202 ^ (i << 8), MAX_DEPTH)
                .expect("rollout runs");
            if rollout.steps.is_empty() {
                continue;
            }
            let gains =
                gains_for_steps(&policy, task, &start, &rollout.steps, &est).expect("gains");
            let h0 = estimate_answer_distribution(&policy, task, &start, &est)
                .expect("h0")
                .entropy();
            let mut terminal = start.clone();
            for step in &rollout.steps {
                terminal.push_step(step);
            }
            let h_t = if terminal.is_terminal() {
                estimate_answer_distribution(&policy, task, &terminal, &est)
                    .expect("terminal state has a point-mass distribution")
                    .entropy()
            } else {
                estimate_answer_distribution(&policy, task, &terminal, &est)
                    .expect("ht")
                    .entropy()
            };
            let total: f64 = gains.iter().sum();
            assert!(
                (total - (h0 - h_t)).abs() < 1e-9,
                "task {} rollout {i}: sum {total} vs {h0} - {h_t}",
                task.id
            );
            cases += 1;
        }
    }
    assert!(cases >= 1000, "only {cases} telescoping cases");
    let elapsed = started.elapsed();
    assert!(elapsed.as_secs() < 60, "criterion 2 exceeded 1 minute");
    println!("criterion 2 (telescoping over {cases} trajectories, {:.2?}): PASS", elapsed);
}

// ---------------------------------------------------------------------------
// Criterion 3: nucleus correctness.
// ---------------------------------------------------------------------------

fn random_dist(rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = rng.gen_range(2..=40usize);
    let mut v: Vec<f64> = (0..n).map(|_| -(rng.gen::<f64>().max(1e-12)).ln()).collect();
    let sum: f64 = v.iter().sum();
    for x in &mut v {
        *x /= sum;
    }
    v
}

#[test]
fn criterion_3_nucleus_correctness() {
    let started = Instant::now();

    // Worked examples, exactly.
    assert_eq!(adaptive_expansion_set(&[0.5, 0.3, 0.15, 0.05], 0.9).len(), 3);
    assert_eq!(adaptive_expansion_set(&[0.95, 0.05], 0.9).len(), 1);
    assert_eq!(adaptive_expansion_set(&[0.1; 10], 0.9).len(), 9);

    let mut rng = ChaCha8Rng::seed_from_u64(303);
    for case in 0..10_000usize {
        let dist = random_dist(&mut rng);
        let beta = rng.gen_range(0.05..=1.0f64);
        let set = adaptive_expansion_set(&dist, beta);
        let mass: f64 = set.iter().map(|t| dist[t.0 as usize]).sum();
        assert!(mass + 1e-9 >= beta, "case {case}: set mass below beta");
        // Minimality: dropping the last token loses the threshold.
        if set.len() > 1 {
            let without_last: f64 = set[..set.len() - 1]
                .iter()
                .map(|t| dist[t.0 as usize])
                .sum();
            assert!(
                without_last + 1e-12 < beta,
                "case {case}: nucleus is not minimal"
            );
        }
        // Monotone width: a larger beta yields a superset.
        let beta2 = (beta + rng.gen_range(0.0..(1.0 - beta).max(1e-9))).min(1.0);
        let set2 = adaptive_expansion_set(&dist, beta2);
        assert!(
            set2.len() >= set.len() && set2[..set.len()] == set[..],
            "case {case}: beta-monotonicity violated"
        );
    }

    // Probability transfer toward the mode never widens the nucleus.
    for case in 0..1_000usize {
        let mut dist = random_dist(&mut rng);
        let beta = rng.gen_range(0.3..0.99f64);
        let before = adaptive_expansion_set(&dist, beta).len();
        let mode = (0..dist.len()).max_by(|&a, &b| dist[a].partial_cmp(&dist[b]).unwrap()).unwrap();
        let donor = (0..dist.len()).min_by(|&a, &b| dist[a].partial_cmp(&dist[b]).unwrap()).unwrap();
        if donor != mode {
            let delta = dist[donor] * rng.gen::<f64>();
            dist[donor] -= delta;
            dist[mode] += delta;
        }
        let after = adaptive_expansion_set(&dist, beta).len();
        assert!(after <= before, "case {case}: mode transfer widened the nucleus");
    }

    let elapsed = started.elapsed();
    println!("criterion 3 (nucleus minimality and monotonicity, 10000 + 1000 cases, {:.2?}): PASS", elapsed);
}

// ---------------------------------------------------------------------------
// Criterion 4: gradient fidelity.
// ---------------------------------------------------------------------------

struct GradInstance {
    params: PolicyParams,
    old: PolicyParams,
    items: Vec<TrainItem>,
    cfg: OptimConfig,
}

fn random_grad_instance(rng: &mut ChaCha8Rng) -> Option<GradInstance> {
    let n_keys = rng.gen_range(2..=5usize);
    let keys: Vec<u64> = (0..n_keys).map(|i| 1000 + i as u64).collect();
    let mut params = PolicyParams::new(3);
    let mut old = PolicyParams::new(3);
    for &key in &keys {
        let row: Vec<f64> = (0..VOCAB_SIZE).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let drift: Vec<f64> = row.iter().map(|v| v + rng.gen_range(-0.3..0.3)).collect();
        old.set_logits(key, row);
        params.set_logits(key, drift);
    }
    let cfg = OptimConfig {
        clip_epsilon: rng.gen_range(0.1..0.3),
        kl_coeff: [0.0, 0.05, 10.0][rng.gen_range(0..3usize)],
        ..OptimConfig::default()
    };
    let mut items = Vec::new();
    for _ in 0..rng.gen_range(10..40usize) {
        let key = keys[rng.gen_range(0..keys.len())];
        let action = Token(rng.gen_range(0..VOCAB_SIZE as u16));
        let advantage = rng.gen_range(-1.5..1.5);
        let old_logprob = old.dist(key, 1.0)[action.0 as usize].ln();
        let p_new = params.dist(key, 1.0)[action.0 as usize];
        let rho = (p_new.ln() - old_logprob).exp();
        // Keep instances away from the clip kinks so central differences are
        // taken on a smooth piece of the objective.
        if (rho - (1.0 + cfg.clip_epsilon)).abs() < 2e-3
            || (rho - (1.0 - cfg.clip_epsilon)).abs() < 2e-3
        {
            return None;
        }
        items.push(TrainItem {
            ctx_key: key,
            action,
            return_to_go: advantage,
            advantage,
            old_logprob,
        });
    }
    Some(GradInstance {
        params,
        old,
        items,
        cfg,
    })
}

#[test]
fn criterion_4_gradient_fidelity() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let mut checked = 0usize;
    let h = 1e-5;
    while checked < 100 {
        let Some(inst) = random_grad_instance(&mut rng) else {
            continue;
        };
        let analytic = objective_gradient(&inst.params, &inst.old, &inst.items, &inst.cfg);
        let keys = item_keys(&inst.items);
        let mut diff_sq = 0.0;
        let mut fd_sq = 0.0;
        for &key in &keys {
            let zero_row = vec![0.0; VOCAB_SIZE];
            let a_row = analytic.get(&key).unwrap_or(&zero_row);
            for b in 0..VOCAB_SIZE {
                let mut plus = inst.params.clone();
                plus.logits_mut(key)[b] += h;
                let mut minus = inst.params.clone();
                minus.logits_mut(key)[b] -= h;
                let fd = (objective_value(&plus, &inst.old, &inst.items, &inst.cfg)
                    - objective_value(&minus, &inst.old, &inst.items, &inst.cfg))
                    / (2.0 * h);
                let d = a_row[b] - fd;
                diff_sq += d * d;
                fd_sq += fd * fd;
            }
        }
        let rel = diff_sq.sqrt() / fd_sq.sqrt().max(1e-12);
        assert!(
            rel <= 1e-4,
            "instance {checked}: relative gradient error {rel}"
        );
        checked += 1;
    }
    let elapsed = started.elapsed();
    assert!(elapsed.as_secs() < 120, "criterion 4 exceeded 2 minutes");
    println!("criterion 4 (analytic vs central differences, 100 instances, {:.2?}): PASS", elapsed);
}

// ---------------------------------------------------------------------------
// Criterion 5: training lift.
// ---------------------------------------------------------------------------

#[test]
fn criterion_5_training_lift() {
    let started = Instant::now();
    let cfg = PipelineConfig::default();
    assert_eq!(cfg.tasks.n, 500);
    assert_eq!(cfg.optim.epochs, 4);
    let tasks = generate_tasks(cfg.seed, cfg.tasks.n, cfg.tasks.type1_fraction).unwrap();
    let params = seed_base_policy(&tasks, &ScriptProfile::base(), 3);
    let policy = PolicyHandle::tabular(params.clone());
    let (train_tasks, eval_tasks) = split_train_eval(&tasks, cfg.metrics.eval_fraction, cfg.seed);

    let base_truth = truthfulness_accuracy(&policy, &eval_tasks);
    assert!(
        base_truth <= 0.30,
        "base policy is not sycophantic enough: {base_truth}"
    );

    let search_cfg = cfg.search_config();
    let mut records = Vec::new();
    for task in &train_tasks {
        records.extend(recheck_core::search::run_search(task, &policy, &search_cfg).unwrap());
    }
    let task_map: BTreeMap<String, TaskInstance> =
        tasks.iter().map(|t| (t.id.clone(), t.clone())).collect();
    let outcome = train(&records, &task_map, &params, &cfg.optim_config(), None).unwrap();
    assert!(outcome.diverged_at.is_none());

    let trained = PolicyHandle::tabular(outcome.params);
    let t1: Vec<TaskInstance> = eval_tasks
        .iter()
        .filter(|t| t.syc_type == SycType::Type1)
        .cloned()
        .collect();
    let t2: Vec<TaskInstance> = eval_tasks
        .iter()
        .filter(|t| t.syc_type == SycType::Type2)
        .cloned()
        .collect();
    let acc_t1 = truthfulness_accuracy(&trained, &t1);
    let acc_t2 = truthfulness_accuracy(&trained, &t2);
    assert!(
        acc_t1 >= 0.80,
        "held-out Type-1 truthfulness {acc_t1} below 0.80"
    );
    assert!(
        acc_t2 >= 0.80,
        "held-out Type-2 truthfulness {acc_t2} below 0.80"
    );
    let elapsed = started.elapsed();
    assert!(elapsed.as_secs() < 600, "criterion 5 exceeded 10 minutes");
    println!(
        "criterion 5 (training lift: base {base_truth:.3} -> type1 {acc_t1:.3}, type2 {acc_t2:.3} within {} epochs, {:.2?}): PASS",
        cfg.optim.epochs, elapsed
    );
}

// ---------------------------------------------------------------------------
// Criteria 6, 7, 9: directional comparisons over a seed grid.
// ---------------------------------------------------------------------------

fn dataset_for(
    method: BaselineMethod,
    tasks: &[TaskInstance],
    policy: &PolicyHandle,
    seed: u64,
) -> Vec<TrajectoryRecord> {
    let est = EstimatorConfig::new(EstimatorMode::Auto, 0.9, seed, MAX_DEPTH);
    let cfg = BaselineConfig::new(method, seed);
    let mut records = Vec::new();
    for task in tasks {
        records.extend(generate_baseline(task, policy, &cfg, &est).unwrap());
    }
    records
}

fn search_dataset(
    tasks: &[TaskInstance],
    policy: &PolicyHandle,
    seed: u64,
) -> Vec<TrajectoryRecord> {
    let cfg = SearchConfig {
        rng_seed: seed,
        ..SearchConfig::default()
    };
    let mut records = Vec::new();
    for task in tasks {
        records.extend(recheck_core::search::run_search(task, policy, &cfg).unwrap());
    }
    records
}

#[test]
fn criterion_6_reward_vs_kl_dominance() {
    let started = Instant::now();
    for seed in [7u64, 8, 9] {
        let tasks = generate_tasks(seed, 500, 0.16).unwrap();
        let params = seed_base_policy(&tasks, &ScriptProfile::base(), 3);
        let policy = PolicyHandle::tabular(params.clone());
        let (train_tasks, eval_tasks) = split_train_eval(&tasks, 0.2, seed);
        let task_map: BTreeMap<String, TaskInstance> =
            tasks.iter().map(|t| (t.id.clone(), t.clone())).collect();
        let est = EstimatorConfig::new(EstimatorMode::Auto, 0.9, seed, MAX_DEPTH);
        // Sampled per-epoch in the pre-saturation regime so the frontier is
        // visible; at convergence every method reaches the same reward and a
        // matched-KL comparison degenerates.
        let optim = OptimConfig {
            learning_rate: 0.3,
            epochs: 10,
            rng_seed: seed,
            ..OptimConfig::default()
        };

        let mut curves: BTreeMap<&str, Vec<(f64, f64)>> = BTreeMap::new();
        for (name, records) in [
            ("ua", search_dataset(&train_tasks, &policy, seed)),
            (
                "temp",
                dataset_for(BaselineMethod::TemperatureSampling, &train_tasks, &policy, seed),
            ),
        ] {
            let outcome = train(&records, &task_map, &params, &optim, None).unwrap();
            let mut curve = Vec::new();
            for epoch_params in &outcome.epoch_params {
                let handle = PolicyHandle::tabular(epoch_params.clone());
                let probes = build_probe_states(&eval_tasks, &handle, &policy, seed, 256);
                let kl = kl_from_base(epoch_params, &params, &probes);
                let reward = expected_eval_reward(&handle, &policy, &tasks, &est).unwrap();
                curve.push((kl, reward));
            }
            curves.insert(name, curve);
        }

        // For each checkpoint of the search-trained policy, compare against
        // the closest temperature-trained checkpoint within +-10% KL.
        let mut gaps = Vec::new();
        for &(kl_u, r_u) in &curves["ua"] {
            let mut best: Option<(f64, f64)> = None;
            for &(kl_t, r_t) in &curves["temp"] {
                let rel = (kl_u - kl_t).abs() / kl_u.max(kl_t);
                if rel <= 0.10 && best.map_or(true, |(b, _)| rel < b) {
                    best = Some((rel, r_u - r_t));
                }
            }
            if let Some((_, gap)) = best {
                gaps.push(gap);
            }
        }
        assert!(
            !gaps.is_empty(),
            "seed {seed}: no KL-matched checkpoint pairs"
        );
        let mean_gap: f64 = gaps.iter().sum::<f64>() / gaps.len() as f64;
        assert!(
            mean_gap > 0.0,
            "seed {seed}: search-trained reward does not exceed temperature-trained at matched KL (gap {mean_gap})"
        );
        println!(
            "criterion 6 seed {seed}: {} matched pairs, mean reward gap {mean_gap:+.4}",
            gaps.len()
        );
    }
    println!(
        "criterion 6 (reward-vs-KL dominance, 3 seeds agree, {:.2?}): PASS",
        started.elapsed()
    );
}

fn mean_success_steps(records: &[TrajectoryRecord]) -> f64 {
    let lens: Vec<usize> = records
        .iter()
        .filter(|r| r.r_out == 1)
        .map(|r| r.steps.len())
        .collect();
    assert!(!lens.is_empty(), "no successful trajectories");
    lens.iter().sum::<usize>() as f64 / lens.len() as f64
}

#[test]
fn criterion_7_efficiency_ordering() {
    let started = Instant::now();
    for seed in [7u64, 8, 9] {
        let tasks = generate_tasks(seed, 500, 0.16).unwrap();
        let params = seed_base_policy(&tasks, &ScriptProfile::base(), 3);
        let policy = PolicyHandle::tabular(params);
        let (train_tasks, _) = split_train_eval(&tasks, 0.2, seed);

        let ua = mean_success_steps(&search_dataset(&train_tasks, &policy, seed));
        let bon = mean_success_steps(&dataset_for(
            BaselineMethod::BestOfN,
            &train_tasks,
            &policy,
            seed,
        ));
        let cot = mean_success_steps(&dataset_for(
            BaselineMethod::CoTSingle,
            &train_tasks,
            &policy,
            seed,
        ));
        assert!(
            ua < bon && bon < cot,
            "seed {seed}: ordering violated (ua {ua:.3}, best-of-n {bon:.3}, cot {cot:.3})"
        );
        println!("criterion 7 seed {seed}: ua {ua:.3} < best-of-n {bon:.3} < cot {cot:.3}");
    }
    println!(
        "criterion 7 (efficiency ordering, 3 seeds agree, {:.2?}): PASS",
        started.elapsed()
    );
}

#[test]
fn criterion_9_info_gain_ood_rank_agreement() {
    let started = Instant::now();
    for seed in [7u64, 8, 9] {
        let tasks = generate_tasks(seed, 500, 0.16).unwrap();
        let params = seed_base_policy(&tasks, &ScriptProfile::base(), 3);
        let policy = PolicyHandle::tabular(params.clone());
        let (train_tasks, eval_tasks) = split_train_eval(&tasks, 0.2, seed);
        let alt_tasks: Vec<TaskInstance> =
            eval_tasks.iter().map(with_alternate_phrasing).collect();
        let task_map: BTreeMap<String, TaskInstance> =
            tasks.iter().map(|t| (t.id.clone(), t.clone())).collect();
        let optim = OptimConfig {
            rng_seed: seed,
            learning_rate: 3.0,
            ..OptimConfig::default()
        };

        let mut rows: Vec<(&str, f64, f64)> = Vec::new();
        for (name, records) in [
            ("ua", search_dataset(&train_tasks, &policy, seed)),
            (
                "temp",
                dataset_for(BaselineMethod::TemperatureSampling, &train_tasks, &policy, seed),
            ),
            (
                "prompt",
                dataset_for(BaselineMethod::PromptN, &train_tasks, &policy, seed),
            ),
        ] {
            let success_steps: Vec<f64> = records
                .iter()
                .filter(|r| r.r_out == 1)
                .flat_map(|r| r.steps.iter().map(|s| s.r_prog_raw))
                .collect();
            let gain = success_steps.iter().sum::<f64>() / success_steps.len().max(1) as f64;
            let outcome = train(&records, &task_map, &params, &optim, None).unwrap();
            let trained = PolicyHandle::tabular(outcome.params);
            let ood = truthfulness_accuracy(&trained, &alt_tasks);
            rows.push((name, gain, ood));
        }
        for (name_a, gain_a, ood_a) in &rows {
            for (name_b, gain_b, ood_b) in &rows {
                let _ = name_b;
                if gain_a > gain_b {
                    assert!(
                        ood_a >= ood_b,
                        "seed {seed}: {name_a} has higher gain ({gain_a:.4} > {gain_b:.4}) but lower alternate-split truthfulness ({ood_a:.3} < {ood_b:.3})"
                    );
                }
            }
        }
        println!(
            "criterion 9 seed {seed}: {:?}",
            rows.iter()
                .map(|(n, g, o)| format!("{n} gain {g:.4} ood {o:.3}"))
                .collect::<Vec<_>>()
        );
    }
    println!(
        "criterion 9 (info-gain / OOD rank agreement, 3 seeds, {:.2?}): PASS",
        started.elapsed()
    );
}

// ---------------------------------------------------------------------------
// Criterion 8: end-to-end determinism.
// ---------------------------------------------------------------------------

fn collect_artifacts(dir: &std::path::Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).expect("readable dir") {
            let entry = entry.expect("entry");
            let path = entry.path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path
                    .strip_prefix(dir)
                    .expect("under root")
                    .to_string_lossy()
                    .to_string();
                out.insert(rel, std::fs::read(&path).expect("readable file"));
            }
        }
    }
    out
}

#[test]
fn criterion_8_end_to_end_determinism() {
    let started = Instant::now();
    let mut cfg = PipelineConfig::default();
    cfg.tasks.n = 120;
    cfg.seed = 7;

    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    let dir_c = tempfile::tempdir().unwrap();
    Pipeline::with_out_dir(cfg.clone(), dir_a.path())
        .run_all(ExecMode::Sequential)
        .unwrap();
    Pipeline::with_out_dir(cfg.clone(), dir_b.path())
        .run_all(ExecMode::Sequential)
        .unwrap();
    // The parallel mode must merge in deterministic order too.
    Pipeline::with_out_dir(cfg, dir_c.path())
        .run_all(ExecMode::Parallel)
        .unwrap();

    let a = collect_artifacts(dir_a.path());
    let b = collect_artifacts(dir_b.path());
    let c = collect_artifacts(dir_c.path());
    assert_eq!(
        a.keys().collect::<Vec<_>>(),
        b.keys().collect::<Vec<_>>(),
        "artifact sets differ"
    );
    for (name, bytes) in &a {
        assert_eq!(
            Some(bytes),
            b.get(name),
            "artifact {name} differs between identical sequential runs"
        );
        assert_eq!(
            Some(bytes),
            c.get(name),
            "artifact {name} differs between sequential and parallel runs"
        );
    }
    assert!(
        a.keys().any(|k| k.starts_with("datasets/")),
        "datasets missing"
    );
    assert!(
        a.keys().any(|k| k.starts_with("reports/")),
        "reports missing"
    );
    println!(
        "criterion 8 (byte-identical artifacts across {} files, runs and exec modes, {:.2?}): PASS",
        a.len(),
        started.elapsed()
    );
}
