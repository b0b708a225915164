//! Knowledge compilation for the tabular micro-policy.
//!
//! A context window of k tokens cannot do arithmetic, so the base policy's
//! "knowledge" is compiled into its table: for every task we install the
//! transitions of a small set of scripted reasoning paths (agree, re-check,
//! direct answer, deliberation cues). Installs are keyed by context hash, so
//! two tasks may demand conflicting rows. The corpus generator keeps a
//! registry of committed installs and rejects candidate tasks that conflict,
//! which makes the corpus and the seeded policy mutually consistent.
//!
//! The same install lists are replayed by `seed_base_policy`, so the policy
//! table is a pure function of (corpus, profile).

use std::collections::BTreeMap;

use crate::policy::{context_key, PolicyParams, SycType};
use crate::task::TaskInstance;
use crate::vocab::{
    self, Token, AGREE, ANSWER, COMPUTE, LETS, RECHECK, SEP, THINK, VOCAB_SIZE,
};

/// Decision points where the policy genuinely branches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum BranchKind {
    /// Type-1 sycophantic state: agree / re-check / hold the answer.
    RootT1,
    /// Type-2 sycophantic state: agree / re-check.
    RootT2,
    /// After a re-check step re-stated a value: answer or re-check again.
    PostIdentity,
    /// After a deliberation cue: keep computing or re-check.
    CotEntry,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InstallKind {
    /// Near-deterministic continuation token.
    Scripted(Token),
    /// A decision context whose distribution comes from the profile.
    Branch(BranchKind),
}

#[derive(Debug, Clone, Copy)]
pub struct Install {
    pub key: u64,
    pub kind: InstallKind,
}

/// Branch probabilities and residual mass for the seeded base policy.
///
/// Branch targets are ordered by descending probability; the leftover mass is
/// spread uniformly over the rest of the vocabulary.
#[derive(Debug, Clone)]
pub struct ScriptProfile {
    pub root_t1: Vec<(Token, f64)>,
    pub root_t2: Vec<(Token, f64)>,
    pub post_identity: Vec<(Token, f64)>,
    pub cot_entry: Vec<(Token, f64)>,
    pub scripted_mass: f64,
}

impl ScriptProfile {
    /// Corpus default: visibly sycophantic, small garbage residual.
    pub fn base() -> Self {
        ScriptProfile {
            root_t1: vec![(AGREE, 0.44), (RECHECK, 0.36), (ANSWER, 0.17)],
            root_t2: vec![(AGREE, 0.52), (RECHECK, 0.45)],
            post_identity: vec![(ANSWER, 0.91), (RECHECK, 0.06)],
            cot_entry: vec![(COMPUTE, 0.50), (RECHECK, 0.47)],
            scripted_mass: 0.999_999,
        }
    }

    /// Residual-free variant: branch mass sums to one (up to 1e-12), so the
    /// nucleus support equals the scripted support and sampled rollouts never
    /// leave the enumerable tree.
    pub fn exact() -> Self {
        fn renorm(pairs: &[(Token, f64)]) -> Vec<(Token, f64)> {
            let total: f64 = pairs.iter().map(|(_, p)| p).sum();
            pairs.iter().map(|&(t, p)| (t, p / total)).collect()
        }
        let base = Self::base();
        ScriptProfile {
            root_t1: renorm(&base.root_t1),
            root_t2: renorm(&base.root_t2),
            post_identity: renorm(&base.post_identity),
            cot_entry: renorm(&base.cot_entry),
            scripted_mass: 1.0,
        }
    }

    /// Loop-free residual-free variant: re-check chains always answer next,
    /// so every nucleus-reachable path terminates within two steps and the
    /// sampled support equals the nucleus support exactly. Used by oracle
    /// checks that compare search output against brute-force enumeration.
    pub fn oracle() -> Self {
        let mut profile = Self::exact();
        profile.post_identity = vec![(ANSWER, 1.0)];
        profile
    }

    fn branch_pairs(&self, kind: BranchKind) -> &[(Token, f64)] {
        match kind {
            BranchKind::RootT1 => &self.root_t1,
            BranchKind::RootT2 => &self.root_t2,
            BranchKind::PostIdentity => &self.post_identity,
            BranchKind::CotEntry => &self.cot_entry,
        }
    }

    /// Logit row realizing the given target probabilities exactly, with the
    /// residual spread over non-target tokens (logit 0 baseline).
    fn logits_for(&self, pairs: &[(Token, f64)]) -> Vec<f64> {
        let m = pairs.len();
        let total: f64 = pairs.iter().map(|(_, p)| p).sum();
        let residual = (1.0 - total).max(0.0);
        // Guard against a zero residual: put the floor at e^-40 per token.
        let unit = (residual / (VOCAB_SIZE - m) as f64).max(4.25e-18);
        let mut logits = vec![0.0; VOCAB_SIZE];
        for &(t, p) in pairs {
            logits[t.0 as usize] = (p / unit).ln();
        }
        logits
    }

    fn scripted_logits(&self, target: Token) -> Vec<f64> {
        self.logits_for(&[(target, self.scripted_mass)])
    }
}

/// Committed installs. Keys are context hashes; values the structural kind.
#[derive(Debug, Default, Clone)]
pub struct Registry {
    entries: BTreeMap<u64, InstallKind>,
}

impl Registry {
    pub fn new() -> Self {
        Self::default()
    }

    /// True when every install either lands on a fresh key or repeats the
    /// committed kind exactly. Also rejects internally inconsistent lists.
    pub fn compatible(&self, installs: &[Install]) -> bool {
        let mut pending: BTreeMap<u64, InstallKind> = BTreeMap::new();
        for inst in installs {
            let existing = self.entries.get(&inst.key).or_else(|| pending.get(&inst.key));
            if let Some(kind) = existing {
                if *kind != inst.kind {
                    return false;
                }
            } else {
                pending.insert(inst.key, inst.kind);
            }
        }
        true
    }

    pub fn commit(&mut self, installs: &[Install]) {
        for inst in installs {
            self.entries.entry(inst.key).or_insert(inst.kind);
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn into_params(self, profile: &ScriptProfile, context_k: usize) -> PolicyParams {
        let mut params = PolicyParams::new(context_k);
        for (key, kind) in self.entries {
            let logits = match kind {
                InstallKind::Scripted(t) => profile.scripted_logits(t),
                InstallKind::Branch(b) => profile.logits_for(profile.branch_pairs(b)),
            };
            params.set_logits(key, logits);
        }
        params
    }
}

fn window_key(tag: SycType, seq: &[Token], k: usize) -> u64 {
    let start = seq.len().saturating_sub(k);
    context_key(tag, &seq[start..])
}

/// Records scripted transitions for `step` appended after `prefix`.
/// `skip_first` leaves the first token to a branch install.
fn push_scripted(
    out: &mut Vec<Install>,
    tag: SycType,
    prefix: &[Token],
    step: &[Token],
    skip_first: bool,
    k: usize,
) {
    let mut seq: Vec<Token> = prefix.to_vec();
    for (i, &t) in step.iter().enumerate() {
        if !(i == 0 && skip_first) {
            out.push(Install {
                key: window_key(tag, &seq, k),
                kind: InstallKind::Scripted(t),
            });
        }
        seq.push(t);
    }
}

fn push_branch(out: &mut Vec<Install>, tag: SycType, prefix: &[Token], kind: BranchKind, k: usize) {
    out.push(Install {
        key: window_key(tag, prefix, k),
        kind: InstallKind::Branch(kind),
    });
}

fn concat(prefix: &[Token], step: &[Token]) -> Vec<Token> {
    let mut v = prefix.to_vec();
    v.extend_from_slice(step);
    v
}

fn agree_step() -> Vec<Token> {
    vec![AGREE, ANSWER, SEP]
}

fn answer_step(value_tokens: &[Token]) -> Vec<Token> {
    let mut v = vec![ANSWER];
    v.extend_from_slice(value_tokens);
    v.push(SEP);
    v
}

fn recheck_step(value_tokens: &[Token]) -> Vec<Token> {
    let mut v = vec![RECHECK];
    v.extend_from_slice(value_tokens);
    v.push(SEP);
    v
}

/// Post-recheck pattern: from a state whose last step re-stated `value`,
/// install the answer/re-check decision and both continuations. The trailing
/// window is a fixpoint under further re-checks, so one level covers chains
/// of any depth.
fn push_identity_block(
    out: &mut Vec<Install>,
    tag: SycType,
    state: &[Token],
    value_tokens: &[Token],
    k: usize,
) {
    push_branch(out, tag, state, BranchKind::PostIdentity, k);
    push_scripted(out, tag, state, &answer_step(value_tokens), true, k);
    push_scripted(out, tag, state, &recheck_step(value_tokens), true, k);
}

/// Install list for one task's scripted paths.
pub fn task_installs(task: &TaskInstance, k: usize) -> Vec<Install> {
    let tag = task.syc_type;
    let truth_tokens =
        vocab::tokens_for_number_str(&task.truth_answer).expect("truth answers are decimal");
    let mut out = Vec::new();

    match tag {
        SycType::Type1 => {
            // Bare-query competence: the greedy continuation of the query is
            // the correct answer step (used to generate y0).
            let query = task.query_tokens.clone();
            push_scripted(&mut out, tag, &query, &answer_step(&truth_tokens), false, k);

            let s0 = task.initial_state_tokens();
            push_branch(&mut out, tag, &s0, BranchKind::RootT1, k);
            push_scripted(&mut out, tag, &s0, &agree_step(), true, k);
            push_scripted(&mut out, tag, &s0, &answer_step(&truth_tokens), true, k);
            push_scripted(&mut out, tag, &s0, &recheck_step(&truth_tokens), true, k);

            let post = concat(&s0, &recheck_step(&truth_tokens));
            push_identity_block(&mut out, tag, &post, &truth_tokens, k);

            // Deliberation cue step (first token is forced by the caller).
            push_scripted(&mut out, tag, &s0, &[LETS, THINK, SEP], true, k);
        }
        SycType::Type2 => {
            let s0 = task.initial_state_tokens();
            push_branch(&mut out, tag, &s0, BranchKind::RootT2, k);
            push_scripted(&mut out, tag, &s0, &agree_step(), true, k);
            push_scripted(&mut out, tag, &s0, &recheck_step(&truth_tokens), true, k);

            let post = concat(&s0, &recheck_step(&truth_tokens));
            push_identity_block(&mut out, tag, &post, &truth_tokens, k);

            push_scripted(&mut out, tag, &s0, &[LETS, THINK, SEP], true, k);
        }
    }
    out
}

/// Type-global deliberation chains, anchored at the canonical value `g` (the
/// truth of the first accepted task of the type). Windows never reach deeper
/// than the cue itself, so a synthetic `[LETS, THINK, SEP]` prefix suffices.
pub fn cot_global_installs(tag: SycType, g_value: &str, k: usize) -> Vec<Install> {
    let g_tokens = vocab::tokens_for_number_str(g_value).expect("anchor value is decimal");
    let cue: Vec<Token> = vec![LETS, THINK, SEP];
    let mut out = Vec::new();

    push_branch(&mut out, tag, &cue, BranchKind::CotEntry, k);
    push_scripted(&mut out, tag, &cue, &[COMPUTE, SEP], true, k);
    push_scripted(&mut out, tag, &cue, &recheck_step(&g_tokens), true, k);

    let after_compute = concat(&cue, &[COMPUTE, SEP]);
    push_branch(&mut out, tag, &after_compute, BranchKind::CotEntry, k);
    push_scripted(&mut out, tag, &after_compute, &[COMPUTE, SEP], true, k);
    push_scripted(&mut out, tag, &after_compute, &recheck_step(&g_tokens), true, k);

    let post = concat(&cue, &recheck_step(&g_tokens));
    push_identity_block(&mut out, tag, &post, &g_tokens, k);

    out
}

/// Replays the corpus install order and materializes the base policy table.
/// The result is a pure function of (tasks, profile, k).
pub fn seed_base_policy(tasks: &[TaskInstance], profile: &ScriptProfile, k: usize) -> PolicyParams {
    let mut registry = Registry::new();
    let mut seen_t1 = false;
    let mut seen_t2 = false;
    for task in tasks {
        let first_of_type = match task.syc_type {
            SycType::Type1 => !std::mem::replace(&mut seen_t1, true),
            SycType::Type2 => !std::mem::replace(&mut seen_t2, true),
        };
        if first_of_type {
            let globals = cot_global_installs(task.syc_type, &task.truth_answer, k);
            debug_assert!(registry.compatible(&globals));
            registry.commit(&globals);
        }
        let installs = task_installs(task, k);
        debug_assert!(registry.compatible(&installs), "corpus task conflicts with registry");
        registry.commit(&installs);
    }
    registry.into_params(profile, k)
}
