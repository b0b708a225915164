//! Stage orchestration: corpus -> search/baselines -> train -> eval -> report.
//!
//! Every stage reads and writes artifacts under one output directory, stamps
//! them with the config and corpus hashes, and is deterministic given the
//! configuration. `RECHECK_OUT` overrides the configured output directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::baselines::{generate_baseline, BaselineConfig, BaselineMethod};
use crate::config::PipelineConfig;
use crate::dataset::{self, DatasetManifest, ManifestMeta};
use crate::error::{Error, Result};
use crate::exec::{map_slice, ExecMode};
use crate::hashes::stream_seed;
use crate::metrics::{self, RewardKlRow, RunSummary};
use crate::optim::{train, TrainOutcome};
use crate::policy::{PolicyHandle, PolicyParams, DEFAULT_CONTEXT_K};
use crate::progress::EstimatorConfig;
use crate::script::{seed_base_policy, ScriptProfile};
use crate::search::{run_search, TrajectoryRecord};
use crate::task::{build_initial_state, generate_tasks, with_alternate_phrasing, TaskInstance};

pub const ENV_OUT_DIR: &str = "RECHECK_OUT";
pub const SEARCH_METHOD: &str = "ua_mcts";

pub struct Pipeline {
    pub cfg: PipelineConfig,
    out: PathBuf,
}

impl Pipeline {
    pub fn new(cfg: PipelineConfig) -> Self {
        let out = std::env::var(ENV_OUT_DIR)
            .map(PathBuf::from)
            .unwrap_or_else(|_| PathBuf::from(&cfg.out_dir));
        Pipeline { cfg, out }
    }

    pub fn with_out_dir(cfg: PipelineConfig, out: impl Into<PathBuf>) -> Self {
        Pipeline {
            cfg,
            out: out.into(),
        }
    }

    pub fn out_dir(&self) -> &Path {
        &self.out
    }

    pub fn tasks_path(&self) -> PathBuf {
        self.out.join("tasks.jsonl")
    }

    pub fn base_policy_path(&self) -> PathBuf {
        self.out.join("base_policy.jsonl")
    }

    pub fn dataset_path(&self, method: &str) -> PathBuf {
        self.out.join("datasets").join(format!("{method}.jsonl"))
    }

    pub fn trained_policy_path(&self, method: &str) -> PathBuf {
        self.out.join("trained").join(format!("{method}.policy.jsonl"))
    }

    pub fn training_log_path(&self, method: &str) -> PathBuf {
        self.out
            .join("trained")
            .join(format!("{method}.training_log.csv"))
    }

    pub fn report_path(&self, name: &str) -> PathBuf {
        self.out.join("reports").join(name)
    }

    fn estimator(&self) -> Result<EstimatorConfig> {
        let mut est = EstimatorConfig::new(
            self.cfg.estimator_mode()?,
            self.cfg.search.beta_nucleus,
            self.cfg.seed,
            self.cfg.search.max_depth,
        );
        est.mc_samples = self.cfg.search.mc_samples;
        Ok(est)
    }

    /// Generates and persists the task corpus; returns (tasks, corpus hash).
    pub fn gen_tasks(&self) -> Result<(Vec<TaskInstance>, String)> {
        let tasks = generate_tasks(self.cfg.seed, self.cfg.tasks.n, self.cfg.tasks.type1_fraction)?;
        let hash = dataset::write_tasks(&tasks, &self.tasks_path())?;
        let manifest = DatasetManifest {
            schema_version: dataset::DATASET_SCHEMA_VERSION,
            record_count: tasks.len(),
            content_hash: hash.clone(),
            method: "tasks".to_string(),
            config_hash: self.cfg.config_hash(),
            corpus_hash: hash.clone(),
            policy_hash: String::new(),
        };
        let bytes = serde_json::to_vec_pretty(&manifest).expect("manifest json");
        dataset::write_atomic(&dataset::manifest_path(&self.tasks_path()), &bytes)?;
        Ok((tasks, hash))
    }

    pub fn load_tasks(&self) -> Result<(Vec<TaskInstance>, String)> {
        let tasks = dataset::read_tasks(&self.tasks_path())?;
        let hash = dataset::file_hash(&self.tasks_path())?;
        Ok((tasks, hash))
    }

    /// Seeds the base policy from the corpus and persists the snapshot.
    pub fn base_policy(&self, tasks: &[TaskInstance]) -> Result<(PolicyParams, String)> {
        let params = seed_base_policy(tasks, &ScriptProfile::base(), DEFAULT_CONTEXT_K);
        let hash = params.save(&self.base_policy_path())?;
        Ok((params, hash))
    }

    /// Deterministic stratified split into (train, eval) task sets.
    pub fn split_tasks(&self, tasks: &[TaskInstance]) -> (Vec<TaskInstance>, Vec<TaskInstance>) {
        split_train_eval(tasks, self.cfg.metrics.eval_fraction, self.cfg.seed)
    }

    fn collect_records<F>(
        &self,
        tasks: &[TaskInstance],
        mode: ExecMode,
        per_task: F,
    ) -> Result<Vec<TrajectoryRecord>>
    where
        F: Fn(&TaskInstance) -> Result<Vec<TrajectoryRecord>> + Sync + Send,
    {
        let results = map_slice(mode, tasks, |task| per_task(task));
        let mut records = Vec::new();
        for result in results {
            records.extend(result?);
        }
        Ok(records)
    }

    /// Stage 1: search over the training split; writes the enriched dataset.
    pub fn search_stage(&self, mode: ExecMode) -> Result<DatasetManifest> {
        let (tasks, corpus_hash) = self.load_tasks()?;
        let (params, policy_hash) = self.base_policy(&tasks)?;
        let policy = PolicyHandle::tabular(params).with_temperature(self.cfg.policy.temperature);
        let (train_tasks, _) = self.split_tasks(&tasks);
        let search_cfg = self.cfg.search_config();

        let records = self.collect_records(&train_tasks, mode, |task| {
            if build_initial_state(task, &policy).is_err() {
                return Ok(Vec::new());
            }
            run_search(task, &policy, &search_cfg)
        })?;

        let meta = ManifestMeta {
            method: SEARCH_METHOD.to_string(),
            config_hash: self.cfg.config_hash(),
            corpus_hash,
            policy_hash,
        };
        dataset::write_dataset(&records, &self.dataset_path(SEARCH_METHOD), &meta)
    }

    /// Baseline trajectory generation over the training split.
    pub fn baseline_stage(
        &self,
        method: BaselineMethod,
        mode: ExecMode,
    ) -> Result<DatasetManifest> {
        let (tasks, corpus_hash) = self.load_tasks()?;
        let (params, policy_hash) = self.base_policy(&tasks)?;
        let policy = PolicyHandle::tabular(params).with_temperature(self.cfg.policy.temperature);
        let (train_tasks, _) = self.split_tasks(&tasks);
        let mut bl_cfg = BaselineConfig::new(method, self.cfg.seed);
        bl_cfg.n_samples = self.cfg.baseline.n_samples;
        bl_cfg.temperatures = self.cfg.baseline.temperatures.clone();
        let est = self.estimator()?;

        let records = self.collect_records(&train_tasks, mode, |task| {
            if build_initial_state(task, &policy).is_err() {
                return Ok(Vec::new());
            }
            generate_baseline(task, &policy, &bl_cfg, &est)
        })?;

        let meta = ManifestMeta {
            method: method.tag().to_string(),
            config_hash: self.cfg.config_hash(),
            corpus_hash,
            policy_hash,
        };
        dataset::write_dataset(&records, &self.dataset_path(method.tag()), &meta)
    }

    /// Stage 2: trains on a stored dataset and persists the checkpoint and
    /// training log.
    pub fn train_stage(&self, method: &str) -> Result<TrainOutcome> {
        let (tasks, corpus_hash) = self.load_tasks()?;
        let path = self.dataset_path(method);
        let manifest = dataset::read_manifest(&dataset::manifest_path(&path))?;
        if manifest.corpus_hash != corpus_hash {
            return Err(Error::CorpusMismatch {
                left: manifest.corpus_hash,
                right: corpus_hash,
            });
        }
        let records = dataset::read_dataset(&path)?;
        let (params, _) = self.base_policy(&tasks)?;
        let (_, eval_tasks) = self.split_tasks(&tasks);
        let task_map: BTreeMap<String, TaskInstance> =
            tasks.iter().map(|t| (t.id.clone(), t.clone())).collect();

        let outcome = train(
            &records,
            &task_map,
            &params,
            &self.cfg.optim_config(),
            Some(&eval_tasks),
        )?;

        outcome.params.save(&self.trained_policy_path(method))?;
        let mut csv = String::from("epoch,objective,mean_return,kl,dev_truthfulness\n");
        for row in &outcome.log {
            csv.push_str(&format!(
                "{},{:.6},{:.6},{:.6},{}\n",
                row.epoch,
                row.objective,
                row.mean_return,
                row.kl,
                row.dev_truthfulness
                    .map(|v| format!("{v:.6}"))
                    .unwrap_or_default()
            ));
        }
        dataset::write_atomic(&self.training_log_path(method), csv.as_bytes())?;
        Ok(outcome)
    }

    /// Truthfulness evaluation of a snapshot over the held-out split,
    /// including the alternate-phrasing analog.
    pub fn eval_stage(&self, method: &str) -> Result<Vec<(String, u64, String, f64)>> {
        let (tasks, _) = self.load_tasks()?;
        let (_, eval_tasks) = self.split_tasks(&tasks);
        let params = PolicyParams::load(&self.trained_policy_path(method))?;
        let policy = PolicyHandle::tabular(params);
        Ok(truthfulness_rows(
            method,
            self.cfg.seed,
            &policy,
            &eval_tasks,
        ))
    }

    /// Aggregates stored artifacts into the report CSVs. Refuses to mix
    /// artifacts produced from different corpora.
    pub fn report_stage(&self) -> Result<()> {
        let (tasks, corpus_hash) = self.load_tasks()?;
        let (base_params, _) = self.base_policy(&tasks)?;
        let (_, eval_tasks) = self.split_tasks(&tasks);
        let est = self.estimator()?;

        let methods: Vec<String> = std::iter::once(SEARCH_METHOD.to_string())
            .chain(
                [
                    BaselineMethod::PromptN,
                    BaselineMethod::CoTSingle,
                    BaselineMethod::TemperatureSampling,
                    BaselineMethod::BestOfN,
                ]
                .into_iter()
                .map(|m| m.tag().to_string()),
            )
            .collect();

        let mut efficiency_rows = Vec::new();
        let mut info_rows = Vec::new();
        let mut truth_rows = Vec::new();
        let mut kl_rows: Vec<RewardKlRow> = Vec::new();

        for method in &methods {
            let path = self.dataset_path(method);
            if !path.exists() {
                continue;
            }
            let manifest = dataset::read_manifest(&dataset::manifest_path(&path))?;
            if manifest.corpus_hash != corpus_hash {
                return Err(Error::CorpusMismatch {
                    left: manifest.corpus_hash,
                    right: corpus_hash,
                });
            }
            let records = dataset::read_dataset(&path)?;
            let trained_path = self.trained_policy_path(method);
            let trained = if trained_path.exists() {
                PolicyParams::load(&trained_path)?
            } else {
                base_params.clone()
            };
            let summary: RunSummary = metrics::summarize_run(
                method,
                &records,
                &trained,
                &base_params,
                &eval_tasks,
                self.cfg.seed,
                self.cfg.metrics.probe_states,
            )?;
            let policy = PolicyHandle::tabular(trained.clone());
            let base_handle = PolicyHandle::tabular(base_params.clone());
            let eval_records =
                eval_rollout_dataset(&policy, &base_handle, &eval_tasks, self.cfg.seed, 4, &est)?;
            let eval_reward = mean_raw_reward(&eval_records);
            kl_rows.push(RewardKlRow {
                method: method.clone(),
                seed: self.cfg.seed,
                epoch: self.cfg.optim.epochs,
                kl: summary.kl_from_base,
                mean_reward: eval_reward,
            });
            let alt_tasks: Vec<TaskInstance> =
                eval_tasks.iter().map(with_alternate_phrasing).collect();
            let alt_truth = metrics::truthfulness_accuracy(&policy, &alt_tasks);
            info_rows.push((
                method.clone(),
                self.cfg.seed,
                summary.avg_step_info_gain,
                alt_truth,
            ));
            truth_rows.extend(truthfulness_rows(
                method,
                self.cfg.seed,
                &policy,
                &eval_tasks,
            ));
            efficiency_rows.push((method.clone(), self.cfg.seed, summary));
        }

        dataset::write_atomic(
            &self.report_path("efficiency.csv"),
            metrics::efficiency_csv(&efficiency_rows).as_bytes(),
        )?;
        dataset::write_atomic(
            &self.report_path("info_gain.csv"),
            metrics::info_gain_csv(&info_rows).as_bytes(),
        )?;
        dataset::write_atomic(
            &self.report_path("truthfulness.csv"),
            metrics::truthfulness_csv(&truth_rows).as_bytes(),
        )?;
        dataset::write_atomic(
            &self.report_path("reward_vs_kl.csv"),
            metrics::reward_vs_kl_csv(&kl_rows).as_bytes(),
        )?;
        Ok(())
    }

    /// Full pipeline: corpus, search, all baselines, training on the search
    /// dataset, evaluation and reports.
    pub fn run_all(&self, mode: ExecMode) -> Result<()> {
        self.gen_tasks()?;
        self.search_stage(mode)?;
        for method in [
            BaselineMethod::PromptN,
            BaselineMethod::CoTSingle,
            BaselineMethod::TemperatureSampling,
            BaselineMethod::BestOfN,
        ] {
            self.baseline_stage(method, mode)?;
        }
        self.train_stage(SEARCH_METHOD)?;
        self.report_stage()?;
        Ok(())
    }
}

/// Stratified train/eval split: within each type, a seeded shuffle assigns
/// `eval_fraction` of tasks to the held-out set.
pub fn split_train_eval(
    tasks: &[TaskInstance],
    eval_fraction: f64,
    seed: u64,
) -> (Vec<TaskInstance>, Vec<TaskInstance>) {
    let mut train = Vec::new();
    let mut eval = Vec::new();
    for tag in [crate::policy::SycType::Type1, crate::policy::SycType::Type2] {
        let mut group: Vec<&TaskInstance> = tasks.iter().filter(|t| t.syc_type == tag).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(seed, "split", tag as u64));
        group.shuffle(&mut rng);
        let n_eval = ((group.len() as f64) * eval_fraction).round() as usize;
        for (i, task) in group.into_iter().enumerate() {
            if i < n_eval {
                eval.push(task.clone());
            } else {
                train.push(task.clone());
            }
        }
    }
    train.sort_by(|a, b| a.id.cmp(&b.id));
    eval.sort_by(|a, b| a.id.cmp(&b.id));
    (train, eval)
}

/// Seeded evaluation rollouts sampled from `sample_policy`, with progress
/// rewards conditioned on the frozen collection policy so rewards stay
/// comparable across differently trained policies.
pub fn eval_rollout_dataset(
    sample_policy: &PolicyHandle,
    gain_policy: &PolicyHandle,
    tasks: &[TaskInstance],
    seed: u64,
    n_samples: usize,
    estimator: &EstimatorConfig,
) -> Result<Vec<TrajectoryRecord>> {
    use crate::policy::{build_step, Draw, ReasoningState, DEFAULT_MAX_STEP_TOKENS};
    use crate::progress::{gains_for_steps, normalize_gains};
    use crate::search::TrajectoryStep;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    let mut records = Vec::new();
    for task in tasks {
        let start = ReasoningState::new(task.syc_type, task.initial_state_tokens());
        for i in 0..n_samples as u64 {
            let roll_seed = stream_seed(stream_seed(seed, "eval-roll", i), &task.id, 0);
            let mut rng = ChaCha8Rng::seed_from_u64(roll_seed);
            let mut state = start.clone();
            let mut steps = Vec::new();
            while state.depth() < estimator.max_depth {
                let step = build_step(
                    sample_policy,
                    &state,
                    &[],
                    &mut Draw::Sample(&mut rng),
                    DEFAULT_MAX_STEP_TOKENS,
                )?;
                state.push_step(&step);
                let done = step.contains_answer();
                steps.push(step);
                if done {
                    break;
                }
            }
            let raw = gains_for_steps(gain_policy, task, &start, &steps, estimator)?;
            let normalized = normalize_gains(&raw);
            let last = steps.last().expect("at least one step");
            let r_out = crate::task::outcome_reward(task, &last.tokens) as u8;
            let final_answer = crate::task::final_answer(&last.tokens);
            records.push(TrajectoryRecord {
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
                search_meta: crate::search::SearchMeta::external(1),
            });
        }
    }
    Ok(records)
}

/// Exact expected total reward of sampling `policy` from the sycophantic
/// initial states: raw progress gains telescope to the collection policy's
/// answer entropy at the initial state, and the expected outcome reward is
/// the policy's probability of the true answer. Noise-free for tabular
/// policies whose trees enumerate.
pub fn expected_eval_reward(
    policy: &PolicyHandle,
    gain_policy: &PolicyHandle,
    tasks: &[TaskInstance],
    estimator: &EstimatorConfig,
) -> Result<f64> {
    use crate::policy::ReasoningState;
    use crate::progress::estimate_answer_distribution;
    let mut total = 0.0;
    for task in tasks {
        let state = ReasoningState::new(task.syc_type, task.initial_state_tokens());
        let h0 = estimate_answer_distribution(gain_policy, task, &state, estimator)?.entropy();
        let dist = estimate_answer_distribution(policy, task, &state, estimator)?;
        let p_true = dist.prob_of(&crate::vocab::canonicalize(&task.truth_answer));
        total += h0 + p_true;
    }
    Ok(total / tasks.len().max(1) as f64)
}

/// Mean total reward (raw gains plus outcome) weighted by multiplicity.
pub fn mean_raw_reward(records: &[TrajectoryRecord]) -> f64 {
    let mut total = 0.0;
    let mut weight = 0.0;
    for rec in records {
        let w = rec.search_meta.multiplicity as f64;
        total += w * (rec.raw_gain_sum() + rec.r_out as f64);
        weight += w;
    }
    if weight > 0.0 {
        total / weight
    } else {
        0.0
    }
}

/// Truthfulness over the full split, per-type splits and the alternate
/// phrasing split.
pub fn truthfulness_rows(
    method: &str,
    seed: u64,
    policy: &PolicyHandle,
    eval_tasks: &[TaskInstance],
) -> Vec<(String, u64, String, f64)> {
    use crate::policy::SycType;
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
    let alt: Vec<TaskInstance> = eval_tasks.iter().map(with_alternate_phrasing).collect();
    vec![
        (
            method.to_string(),
            seed,
            "eval_all".to_string(),
            metrics::truthfulness_accuracy(policy, eval_tasks),
        ),
        (
            method.to_string(),
            seed,
            "eval_type1".to_string(),
            metrics::truthfulness_accuracy(policy, &t1),
        ),
        (
            method.to_string(),
            seed,
            "eval_type2".to_string(),
            metrics::truthfulness_accuracy(policy, &t2),
        ),
        (
            method.to_string(),
            seed,
            "eval_alt_challenge".to_string(),
            metrics::truthfulness_accuracy(policy, &alt),
        ),
    ]
}
