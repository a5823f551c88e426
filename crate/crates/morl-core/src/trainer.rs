//! Training orchestration: spec-set construction, the length curriculum,
//! episode/augmentation sampling, periodic evaluation against exact oracles,
//! and checkpointing.
//!
//! A run is fully determined by its [`RunConfig`]: the world, the spec set,
//! and every random stream derive from seeds in the config, so two runs with
//! identical configs produce bit-identical diagnostics streams.

use alloc::borrow::ToOwned;
use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

#[allow(unused_imports)] // f64 math methods come from this trait in no_std builds
use num_traits::Float;
use rand::seq::SliceRandom;
use rand::Rng;

use crate::agent::{
    sample_simplex, state_features, Agent, AgentConfig, AgentError, BatchGoal,
};
use crate::gridworld::{GridSize, GridWorld, WorldError};
use crate::neural::{Checkpoint, QNetwork};
use crate::oracle::{
    normalized_score, policy_return_scalarized, OracleError, RandomPolicy, ScalarMdp,
};
use crate::rng::{stream, stream2, TAG_BASELINE, TAG_EVAL, TAG_SPECGEN, TAG_TRAIN};
use crate::speclang::{generate, parse, render, tokenize, SpecAst, SpecError, TokenSequence};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TrainError {
    #[error("could not generate {want} distinct specifications within the retry budget (got {got})")]
    GenerationStall { want: usize, got: usize },
    #[error("no training specification fits the base curriculum length {base}")]
    EmptyCurriculum { base: usize },
    #[error("train and test splits share {count} specification strings")]
    OverlappingSplit { count: usize },
    #[error("non-finite loss at environment step {step}")]
    Numeric { step: u64 },
    #[error(transparent)]
    Spec(#[from] SpecError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    World(#[from] WorldError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
}

// ---------------------------------------------------------------------------
// Curriculum

/// Length-based curriculum: the admissible canonical-string length starts at
/// `base_length` and grows linearly to `max_length` over `total_increments`
/// increments, one every `increment_every` environment steps.
#[derive(Debug, Clone, PartialEq)]
pub struct Curriculum {
    pub base_length: usize,
    pub increment_every: u64,
    pub total_increments: u64,
    pub max_length: usize,
}

impl Curriculum {
    pub fn increments_done(&self, step: u64) -> u64 {
        (step / self.increment_every).min(self.total_increments)
    }

    /// Maximum admissible canonical length at `step`; monotone nondecreasing
    /// and equal to `max_length` from increment `total_increments` on.
    pub fn threshold(&self, step: u64) -> usize {
        if self.max_length <= self.base_length {
            return self.base_length;
        }
        let k = self.increments_done(step) as usize;
        let span = self.max_length - self.base_length;
        self.base_length + k * span / self.total_increments as usize
    }
}

// ---------------------------------------------------------------------------
// Spec sets

/// A specification with its cached canonical form, token sequence, and
/// curriculum length (characters of the canonical string, spaces included).
#[derive(Debug, Clone)]
pub struct SpecEntry {
    pub ast: SpecAst,
    pub canonical: String,
    pub tokens: TokenSequence,
    pub length: usize,
}

impl SpecEntry {
    fn new(ast: SpecAst) -> Self {
        let canonical = render(&ast);
        let tokens = tokenize(&ast);
        let length = canonical.chars().count();
        Self { ast, canonical, tokens, length }
    }
}

/// Train/test split of distinct specifications. Train entries are indexed by
/// their line number; `by_length` holds train indices sorted by curriculum
/// length so an active subset is a prefix.
#[derive(Debug, Clone)]
pub struct SpecSet {
    n_objectives: usize,
    train: Vec<SpecEntry>,
    test: Vec<SpecEntry>,
    by_length: Vec<u32>,
}

impl SpecSet {
    /// Generates `count` distinct specifications, shuffles, and splits
    /// train/test by `split`.
    pub fn build(
        n_objectives: usize,
        count: usize,
        split: f64,
        max_atoms: usize,
        seed: u64,
    ) -> Result<Self, TrainError> {
        assert!(count > 0 && split > 0.0 && split < 1.0);
        let mut rng = stream(seed, TAG_SPECGEN, n_objectives as u64);
        let mut seen = BTreeSet::new();
        let mut asts = Vec::with_capacity(count);
        let budget = count.saturating_mul(200);
        let mut attempts = 0;
        while asts.len() < count {
            if attempts >= budget {
                return Err(TrainError::GenerationStall { want: count, got: asts.len() });
            }
            attempts += 1;
            let ast = generate(&mut rng, n_objectives, max_atoms);
            let canonical = render(&ast);
            if seen.insert(canonical) {
                asts.push(ast);
            }
        }
        asts.shuffle(&mut rng);
        let n_train = ((count as f64) * split).round() as usize;
        let test_asts = asts.split_off(n_train);
        Self::from_asts(n_objectives, asts, test_asts)
    }

    /// Assembles a set from pre-parsed specifications (e.g. spec-set files).
    pub fn from_asts(
        n_objectives: usize,
        train: Vec<SpecAst>,
        test: Vec<SpecAst>,
    ) -> Result<Self, TrainError> {
        let train: Vec<SpecEntry> = train.into_iter().map(SpecEntry::new).collect();
        let test: Vec<SpecEntry> = test.into_iter().map(SpecEntry::new).collect();
        let train_strings: BTreeSet<&str> = train.iter().map(|e| e.canonical.as_str()).collect();
        let overlap = test.iter().filter(|e| train_strings.contains(e.canonical.as_str())).count();
        if overlap > 0 {
            return Err(TrainError::OverlappingSplit { count: overlap });
        }
        let mut by_length: Vec<u32> = (0..train.len() as u32).collect();
        by_length.sort_by_key(|&i| (train[i as usize].length, i));
        Ok(Self { n_objectives, train, test, by_length })
    }

    pub fn n_objectives(&self) -> usize {
        self.n_objectives
    }

    pub fn train(&self) -> &[SpecEntry] {
        &self.train
    }

    pub fn test(&self) -> &[SpecEntry] {
        &self.test
    }

    pub fn max_train_length(&self) -> usize {
        self.train.iter().map(|e| e.length).max().unwrap_or(0)
    }

    /// Number of train specs with canonical length within `threshold`.
    pub fn active_count(&self, threshold: usize) -> usize {
        self.by_length.partition_point(|&i| self.train[i as usize].length <= threshold)
    }

    /// Uniform draw from the active subset; `active` must be nonzero.
    fn sample_active<R: Rng>(&self, rng: &mut R, active: usize) -> u32 {
        self.by_length[rng.gen_range(0..active)]
    }

    /// Draws `k` distinct train ids from the active subset when possible;
    /// cycles through the whole subset when it is smaller than `k`.
    fn sample_active_distinct<R: Rng>(&self, rng: &mut R, active: usize, k: usize) -> Vec<u32> {
        let mut ids = Vec::with_capacity(k);
        if active <= k {
            for j in 0..k {
                ids.push(self.by_length[j % active]);
            }
            return ids;
        }
        while ids.len() < k {
            let candidate = self.sample_active(rng, active);
            if !ids.contains(&candidate) {
                ids.push(candidate);
            }
        }
        ids
    }
}

// ---------------------------------------------------------------------------
// Run configuration

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct WorldConfig {
    pub size: GridSize,
    pub objectives: usize,
    pub seed: u64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self { size: GridSize::Small, objectives: 2, seed: 1 }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct SpecGenConfig {
    pub count: usize,
    pub split: f64,
    pub max_atoms: usize,
    pub seed: u64,
}

impl Default for SpecGenConfig {
    fn default() -> Self {
        Self { count: 12_500, split: 0.8, max_atoms: 6, seed: 1 }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct TrainingConfig {
    pub total_steps: u64,
    /// Train every this many environment steps.
    pub train_every: u64,
    pub eval_every: u64,
    pub checkpoint_every: u64,
    pub eval_episodes: usize,
    pub eval_panel_size: usize,
    pub curriculum: bool,
    pub linear: bool,
    /// When set, episodes and augmentation all use this one specification.
    pub fixed_spec: Option<String>,
    pub seed: u64,
    pub log_augmentation: bool,
    pub train_log_every: u64,
    pub oracle_tol: f64,
    pub base_length: usize,
    pub increment_every: u64,
    pub total_increments: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            total_steps: 200_000,
            train_every: 5,
            eval_every: 5_000,
            checkpoint_every: 100_000,
            eval_episodes: 10,
            eval_panel_size: 100,
            curriculum: true,
            linear: false,
            fixed_spec: None,
            seed: 1,
            log_augmentation: true,
            train_log_every: 1_000,
            oracle_tol: 1e-9,
            base_length: 25,
            increment_every: 5_000,
            total_increments: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct RunConfig {
    pub world: WorldConfig,
    pub specs: SpecGenConfig,
    pub training: TrainingConfig,
    pub agent: AgentConfig,
}

impl RunConfig {
    pub fn build_world(&self) -> Result<GridWorld, WorldError> {
        GridWorld::build(self.world.size, self.world.objectives, self.world.seed)
    }

    pub fn build_specset(&self) -> Result<SpecSet, TrainError> {
        SpecSet::build(
            self.world.objectives,
            self.specs.count,
            self.specs.split,
            self.specs.max_atoms,
            self.specs.seed,
        )
    }

    pub fn goal_mode(&self) -> &'static str {
        if self.training.linear {
            "linear"
        } else {
            "spec"
        }
    }
}

// ---------------------------------------------------------------------------
// Run observation

/// Receives the append-only diagnostics stream and checkpoints as a run
/// progresses. `evaluated` may return `true` to stop the run early.
pub trait RunObserver {
    fn diag_row(&mut self, _row: &str) {}
    fn checkpoint(&mut self, _step: u64, _ck: &Checkpoint) {}
    fn evaluated(&mut self, _step: u64, _mean: Option<f64>) -> bool {
        false
    }
}

/// Observer that buffers everything in memory; optionally stops a run once
/// the evaluation mean reaches a threshold.
#[derive(Default)]
pub struct MemoryObserver {
    pub rows: Vec<String>,
    pub checkpoints: Vec<(u64, Checkpoint)>,
    pub evals: Vec<(u64, Option<f64>)>,
    pub stop_at_mean: Option<f64>,
}

impl RunObserver for MemoryObserver {
    fn diag_row(&mut self, row: &str) {
        self.rows.push(row.to_owned());
    }

    fn checkpoint(&mut self, step: u64, ck: &Checkpoint) {
        self.checkpoints.push((step, ck.clone()));
    }

    fn evaluated(&mut self, step: u64, mean: Option<f64>) -> bool {
        self.evals.push((step, mean));
        match (self.stop_at_mean, mean) {
            (Some(th), Some(m)) => m >= th,
            _ => false,
        }
    }
}

// ---------------------------------------------------------------------------
// Evaluation goals and baselines

/// An owned goal used for evaluation panels and tables.
#[derive(Debug, Clone)]
pub enum EvalGoal {
    Spec { ast: SpecAst, tokens: TokenSequence, canonical: String },
    Linear { weights: Vec<f64> },
}

impl EvalGoal {
    pub fn from_spec(ast: SpecAst) -> Self {
        let tokens = tokenize(&ast);
        let canonical = render(&ast);
        EvalGoal::Spec { ast, tokens, canonical }
    }

    pub fn from_weights(weights: Vec<f64>) -> Self {
        EvalGoal::Linear { weights }
    }

    pub fn label(&self) -> String {
        match self {
            EvalGoal::Spec { canonical, .. } => canonical.clone(),
            EvalGoal::Linear { weights } => {
                let parts: Vec<String> = weights.iter().map(|w| w.to_string()).collect();
                format!("w[{}]", parts.join(","))
            }
        }
    }

    fn scalarize(&self, reward: &[f64]) -> Result<f64, SpecError> {
        match self {
            EvalGoal::Spec { ast, .. } => ast.evaluate(reward),
            EvalGoal::Linear { weights } => {
                Ok(weights.iter().zip(reward).map(|(w, r)| w * r).sum())
            }
        }
    }
}

/// Oracle and random-policy reference returns for a goal on a world.
#[derive(Debug, Clone)]
pub struct GoalBaseline {
    pub oracle_return: f64,
    pub random_return: f64,
    pub degenerate: bool,
}

/// Solves the goal exactly and estimates oracle/random returns; streams are
/// derived from (`seed`, goal index) so baselines pair across runs.
pub fn goal_baseline(
    world: &GridWorld,
    goal: &EvalGoal,
    gamma: f64,
    tol: f64,
    episodes: usize,
    seed: u64,
    index: u64,
) -> Result<GoalBaseline, TrainError> {
    let mdp = match goal {
        EvalGoal::Spec { ast, .. } => ScalarMdp::from_spec(world, ast, gamma)?,
        EvalGoal::Linear { weights } => ScalarMdp::from_weights(world, weights, gamma)?,
    };
    let mut table = mdp.solve(tol);
    let mut orng = stream2(seed, TAG_BASELINE, 2 * index, 0);
    let oracle = policy_return_scalarized(
        world,
        &mut table,
        |r| goal.scalarize(r.as_slice()),
        gamma,
        episodes,
        &mut orng,
    )?;
    let mut rrng = stream2(seed, TAG_BASELINE, 2 * index + 1, 0);
    let random = policy_return_scalarized(
        world,
        &mut RandomPolicy,
        |r| goal.scalarize(r.as_slice()),
        gamma,
        episodes,
        &mut rrng,
    )?;
    Ok(GoalBaseline {
        oracle_return: oracle.mean,
        random_return: random.mean,
        degenerate: oracle.mean - random.mean < 1e-6,
    })
}

/// Greedy rollout return of a network on one goal.
pub fn greedy_return(
    world: &GridWorld,
    net: &QNetwork,
    goal: &EvalGoal,
    gamma: f64,
    episodes: usize,
    seed: u64,
    index: u64,
) -> Result<f64, TrainError> {
    let encoding = match goal {
        EvalGoal::Spec { tokens, .. } => net.encode(tokens).map_err(AgentError::from)?,
        EvalGoal::Linear { weights } => crate::agent::pad_goal_slot(weights),
    };
    let mut policy = |w: &GridWorld, s: crate::gridworld::MOState| {
        let feats = state_features(w, s);
        let q = net
            .q_values_with_encoding(&feats, &encoding)
            .expect("evaluation uses matching widths");
        crate::agent::argmax_action(&q)
    };
    let mut rng = stream2(seed, TAG_EVAL, index, 1);
    let ret = policy_return_scalarized(
        world,
        &mut policy,
        |r| goal.scalarize(r.as_slice()),
        gamma,
        episodes,
        &mut rng,
    )?;
    Ok(ret.mean)
}

/// Normalized score of a network on one goal against fresh baselines.
/// `None` means the goal is degenerate on this world.
pub fn evaluate_goal(
    world: &GridWorld,
    net: &QNetwork,
    goal: &EvalGoal,
    gamma: f64,
    tol: f64,
    episodes: usize,
    seed: u64,
    index: u64,
) -> Result<(Option<f64>, GoalBaseline, f64), TrainError> {
    let baseline = goal_baseline(world, goal, gamma, tol, episodes, seed, index)?;
    let agent_return = greedy_return(world, net, goal, gamma, episodes, seed, index)?;
    let score = if baseline.degenerate {
        None
    } else {
        Some(normalized_score(agent_return, baseline.oracle_return, baseline.random_return)?)
    };
    Ok((score, baseline, agent_return))
}

/// The canonical subset goals for a linear agent: every nonempty subset of
/// objectives with uniform weight over its members (2^n - 1 goals).
pub fn subset_goals(n_objectives: usize) -> Vec<EvalGoal> {
    let mut goals = Vec::new();
    for bits in 1u32..(1 << n_objectives) {
        let members = bits.count_ones() as f64;
        let weights: Vec<f64> = (0..n_objectives)
            .map(|k| if bits & (1 << k) != 0 { 1.0 / members } else { 0.0 })
            .collect();
        goals.push(EvalGoal::from_weights(weights));
    }
    goals
}

// ---------------------------------------------------------------------------
// The training loop

/// Result of a completed (or early-stopped) training run.
pub struct RunOutcome {
    pub steps_taken: u64,
    pub stopped_early: bool,
    pub final_checkpoint: Checkpoint,
    pub evals: Vec<(u64, Option<f64>)>,
    pub final_scores: Vec<Option<f64>>,
}

struct EvalPanel {
    goals: Vec<EvalGoal>,
    baselines: Vec<GoalBaseline>,
}

impl EvalPanel {
    fn build(cfg: &RunConfig, world: &GridWorld, specset: &SpecSet, fixed: Option<&SpecEntry>) -> Result<Self, TrainError> {
        let gamma = cfg.agent.gamma;
        let goals: Vec<EvalGoal> = if let Some(entry) = fixed {
            alloc::vec![EvalGoal::from_spec(entry.ast.clone())]
        } else if cfg.training.linear {
            subset_goals(cfg.world.objectives)
        } else {
            specset
                .test()
                .iter()
                .take(cfg.training.eval_panel_size)
                .map(|e| EvalGoal::from_spec(e.ast.clone()))
                .collect()
        };
        let mut baselines = Vec::with_capacity(goals.len());
        for (i, goal) in goals.iter().enumerate() {
            baselines.push(goal_baseline(
                world,
                goal,
                gamma,
                cfg.training.oracle_tol,
                cfg.training.eval_episodes,
                cfg.training.seed,
                i as u64,
            )?);
        }
        Ok(Self { goals, baselines })
    }

    /// Greedy evaluation of the live network on every panel goal.
    fn evaluate(
        &self,
        world: &GridWorld,
        net: &QNetwork,
        cfg: &RunConfig,
        step: u64,
    ) -> Result<(Vec<Option<f64>>, Option<f64>), TrainError> {
        let mut scores = Vec::with_capacity(self.goals.len());
        for (i, (goal, base)) in self.goals.iter().zip(&self.baselines).enumerate() {
            if base.degenerate {
                scores.push(None);
                continue;
            }
            let ret = greedy_return(
                world,
                net,
                goal,
                cfg.agent.gamma,
                cfg.training.eval_episodes,
                crate::rng::mix(cfg.training.seed, step),
                i as u64,
            )?;
            scores.push(Some(normalized_score(ret, base.oracle_return, base.random_return)?));
        }
        let valid: Vec<f64> = scores.iter().flatten().copied().collect();
        let mean = if valid.is_empty() {
            None
        } else {
            Some(valid.iter().sum::<f64>() / valid.len() as f64)
        };
        Ok((scores, mean))
    }
}

fn format_eval_row(step: u64, mean: Option<f64>, scores: &[Option<f64>]) -> String {
    let mut row = format!(
        "eval\t{step}\t{}\t{}",
        mean.map(|m| m.to_string()).unwrap_or_else(|| "na".into()),
        scores.iter().flatten().count()
    );
    for s in scores {
        row.push('\t');
        match s {
            Some(v) => row.push_str(&v.to_string()),
            None => row.push_str("degenerate"),
        }
    }
    row
}

/// How a run begins: fresh parameters, a warm start from checkpoint
/// parameters (step counter restarts), or a resume that continues the step
/// counter and schedules. Resumes restore parameters and optimizer moments
/// exactly; the replay buffer and random streams restart.
pub enum RunStart {
    Fresh,
    WarmStart(Agent),
    Resume { agent: Agent, step: u64 },
}

/// Runs a full training loop per the config. `config_text` is embedded
/// verbatim in every checkpoint.
pub fn run_training(
    cfg: &RunConfig,
    specset: &SpecSet,
    start: RunStart,
    config_text: &str,
    observer: &mut dyn RunObserver,
) -> Result<RunOutcome, TrainError> {
    let world = cfg.build_world()?;
    let tc = &cfg.training;
    let goal_mode = cfg.goal_mode();

    let fixed: Option<SpecEntry> = match &tc.fixed_spec {
        Some(text) => Some(SpecEntry::new(parse(text, cfg.world.objectives)?)),
        None => None,
    };
    const FIXED_ID: u64 = u64::MAX;

    let curriculum = Curriculum {
        base_length: tc.base_length,
        increment_every: tc.increment_every,
        total_increments: tc.total_increments,
        max_length: specset.max_train_length().max(tc.base_length),
    };
    if fixed.is_none() && !tc.linear && specset.active_count(curriculum.threshold(0)) == 0 {
        return Err(TrainError::EmptyCurriculum { base: tc.base_length });
    }

    let (mut agent, start_step) = match start {
        RunStart::Fresh => (Agent::new(world.n_cells(), cfg.agent.clone(), tc.seed), 0),
        RunStart::WarmStart(a) => (a, 0),
        RunStart::Resume { agent, step } => (agent, step),
    };
    let panel = EvalPanel::build(cfg, &world, specset, fixed.as_ref())?;
    let mut rng = stream(tc.seed, TAG_TRAIN, start_step);

    observer.diag_row("format\tmorl-diag\t1");

    let mut step: u64 = start_step;
    let mut last_increment: Option<u64> = None;
    let mut loss_sum = 0.0;
    let mut loss_count = 0u64;
    let mut evals: Vec<(u64, Option<f64>)> = Vec::new();
    let mut final_scores: Vec<Option<f64>>;
    let mut stopped_early = false;
    let mut episode_weights: Vec<f64>;

    // Baseline evaluation before any (further) training; warm starts may
    // already meet an observer's stop threshold here.
    {
        let (scores, mean) = panel.evaluate(&world, agent.net(), cfg, step)?;
        observer.diag_row(&format_eval_row(step, mean, &scores));
        evals.push((step, mean));
        final_scores = scores;
        if observer.evaluated(step, mean) {
            stopped_early = true;
        }
    }

    'outer: while !stopped_early && step < tc.total_steps {
        // Curriculum bookkeeping at episode boundaries and step 0.
        let threshold = if tc.curriculum {
            curriculum.threshold(step)
        } else {
            curriculum.max_length
        };
        let active = if fixed.is_some() || tc.linear {
            0
        } else {
            specset.active_count(threshold)
        };
        let k = curriculum.increments_done(step);
        if tc.curriculum && last_increment != Some(k) {
            last_increment = Some(k);
            observer.diag_row(&format!("curriculum\t{step}\t{k}\t{threshold}\t{active}"));
        }

        // Episode goal.
        let episode_entry: Option<&SpecEntry>;
        let episode_id: u64;
        if let Some(entry) = &fixed {
            episode_entry = Some(entry);
            episode_id = FIXED_ID;
            observer.diag_row(&format!("episode\t{step}\tfixed\t{}", entry.canonical));
            episode_weights = Vec::new();
        } else if tc.linear {
            episode_entry = None;
            episode_id = 0;
            episode_weights = sample_simplex(&mut rng, cfg.world.objectives);
            let parts: Vec<String> = episode_weights.iter().map(|w| w.to_string()).collect();
            observer.diag_row(&format!("episode\t{step}\tlinear\t{}", parts.join(",")));
        } else {
            let id = specset.sample_active(&mut rng, active);
            episode_entry = Some(&specset.train()[id as usize]);
            episode_id = id as u64;
            observer.diag_row(&format!("episode\t{step}\ttrain\t{id}"));
            episode_weights = Vec::new();
        }

        let mut s = world.reset(&mut rng);
        loop {
            let episode_goal = match episode_entry {
                Some(entry) => {
                    BatchGoal::Spec { id: episode_id, ast: &entry.ast, tokens: &entry.tokens }
                }
                None => BatchGoal::Linear { weights: &episode_weights },
            };
            let eps = cfg.agent.epsilon(step, tc.total_steps);
            let feats = state_features(&world, s);
            let action = agent.act(&feats, &episode_goal, eps, &mut rng)?;
            let tr = world.step(s, action, &mut rng)?;
            let terminal = tr.terminal;
            s = tr.next;
            agent.buffer.push(tr);
            step += 1;

            if step % tc.train_every == 0 && agent.buffer.len() >= cfg.agent.batch_transitions {
                let diag = if let Some(entry) = &fixed {
                    let goals: Vec<BatchGoal> = (0..cfg.agent.specs_per_batch)
                        .map(|_| BatchGoal::Spec {
                            id: FIXED_ID,
                            ast: &entry.ast,
                            tokens: &entry.tokens,
                        })
                        .collect();
                    agent.train_step(&world, &goals, &mut rng)?
                } else if tc.linear {
                    let weight_draws: Vec<Vec<f64>> = (0..cfg.agent.specs_per_batch)
                        .map(|_| sample_simplex(&mut rng, cfg.world.objectives))
                        .collect();
                    let goals: Vec<BatchGoal> =
                        weight_draws.iter().map(|w| BatchGoal::Linear { weights: w }).collect();
                    agent.train_step(&world, &goals, &mut rng)?
                } else {
                    // The curriculum may have stepped mid-episode.
                    let threshold_now = if tc.curriculum {
                        curriculum.threshold(step)
                    } else {
                        curriculum.max_length
                    };
                    let active_now = specset.active_count(threshold_now);
                    let ids = specset.sample_active_distinct(
                        &mut rng,
                        active_now,
                        cfg.agent.specs_per_batch,
                    );
                    let goals: Vec<BatchGoal> = ids
                        .iter()
                        .map(|&id| {
                            let e = &specset.train()[id as usize];
                            BatchGoal::Spec { id: id as u64, ast: &e.ast, tokens: &e.tokens }
                        })
                        .collect();
                    let d = agent.train_step(&world, &goals, &mut rng)?;
                    if tc.log_augmentation {
                        let parts: Vec<String> = ids.iter().map(|i| i.to_string()).collect();
                        observer.diag_row(&format!("augment\t{step}\t{}", parts.join(",")));
                    }
                    d
                };
                if !diag.loss.is_finite() {
                    return Err(TrainError::Numeric { step });
                }
                loss_sum += diag.loss;
                loss_count += 1;
            }

            if step % tc.train_log_every == 0 && loss_count > 0 {
                let mean_loss = loss_sum / loss_count as f64;
                let eps_now = cfg.agent.epsilon(step, tc.total_steps);
                observer.diag_row(&format!("train\t{step}\t{mean_loss}\t{eps_now}"));
                loss_sum = 0.0;
                loss_count = 0;
            }

            if step % tc.eval_every == 0 || step == tc.total_steps {
                let (scores, mean) = panel.evaluate(&world, agent.net(), cfg, step)?;
                observer.diag_row(&format_eval_row(step, mean, &scores));
                evals.push((step, mean));
                final_scores = scores;
                if observer.evaluated(step, mean) {
                    stopped_early = true;
                    break 'outer;
                }
            }

            if step % tc.checkpoint_every == 0 {
                let ck = agent.to_checkpoint(step, cfg.world.objectives, goal_mode, config_text);
                observer.diag_row(&format!("checkpoint\t{step}"));
                observer.checkpoint(step, &ck);
            }

            if step >= tc.total_steps {
                break 'outer;
            }
            if terminal {
                break;
            }
        }
    }

    let final_checkpoint = agent.to_checkpoint(step, cfg.world.objectives, goal_mode, config_text);
    Ok(RunOutcome { steps_taken: step, stopped_early, final_checkpoint, evals, final_scores })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn curriculum_thresholds_are_monotone_and_land_on_max() {
        let c = Curriculum {
            base_length: 25,
            increment_every: 5_000,
            total_increments: 20,
            max_length: 85,
        };
        assert_eq!(c.threshold(0), 25);
        assert_eq!(c.threshold(4_999), 25);
        assert_eq!(c.threshold(5_000), 28);
        assert_eq!(c.threshold(100_000), 85);
        assert_eq!(c.threshold(1_000_000), 85);
        let mut prev = 0;
        let mut distinct = BTreeSet::new();
        for step in (0..=120_000).step_by(500) {
            let t = c.threshold(step);
            assert!(t >= prev);
            prev = t;
            distinct.insert(c.increments_done(step));
        }
        assert_eq!(distinct.len(), 21);
    }

    #[test]
    fn short_max_length_clamps_to_base() {
        let c = Curriculum {
            base_length: 25,
            increment_every: 5_000,
            total_increments: 20,
            max_length: 10,
        };
        assert_eq!(c.threshold(0), 25);
        assert_eq!(c.threshold(999_999), 25);
    }

    #[test]
    fn specset_build_is_deterministic_and_disjoint() {
        let a = SpecSet::build(3, 500, 0.8, 6, 42).unwrap();
        let b = SpecSet::build(3, 500, 0.8, 6, 42).unwrap();
        assert_eq!(a.train().len(), 400);
        assert_eq!(a.test().len(), 100);
        for (x, y) in a.train().iter().zip(b.train()) {
            assert_eq!(x.canonical, y.canonical);
        }
        let train: BTreeSet<&str> = a.train().iter().map(|e| e.canonical.as_str()).collect();
        for t in a.test() {
            assert!(!train.contains(t.canonical.as_str()));
        }
        // All distinct within each split.
        let all: BTreeSet<&str> = a
            .train()
            .iter()
            .chain(a.test())
            .map(|e| e.canonical.as_str())
            .collect();
        assert_eq!(all.len(), 500);
    }

    #[test]
    fn active_subsets_are_nested_prefixes() {
        let set = SpecSet::build(2, 300, 0.8, 6, 7).unwrap();
        let mut prev = 0;
        for threshold in [0, 2, 10, 25, 40, 80, 1000] {
            let n = set.active_count(threshold);
            assert!(n >= prev);
            prev = n;
            for i in 0..n {
                assert!(set.train()[set.by_length[i] as usize].length <= threshold);
            }
            for i in n..set.train().len() {
                assert!(set.train()[set.by_length[i] as usize].length > threshold);
            }
        }
        assert_eq!(set.active_count(10_000), set.train().len());
    }

    #[test]
    fn overlapping_splits_are_rejected() {
        let a = parse("o1", 2).unwrap();
        let b = parse("o2", 2).unwrap();
        let err =
            SpecSet::from_asts(2, alloc::vec![a.clone(), b], alloc::vec![a]).unwrap_err();
        assert_eq!(err, TrainError::OverlappingSplit { count: 1 });
    }

    #[test]
    fn subset_goals_enumerate_nonempty_subsets() {
        let goals = subset_goals(3);
        assert_eq!(goals.len(), 7);
        for g in &goals {
            let EvalGoal::Linear { weights } = g else { panic!("expected linear goals") };
            let sum: f64 = weights.iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn generation_stall_is_detected() {
        // Only 24 distinct single-leaf specs exist over one objective:
        // o1, -o1, and 22 hard constraints.
        let err = SpecSet::build(1, 100, 0.5, 1, 3).unwrap_err();
        assert!(matches!(err, TrainError::GenerationStall { .. }));
    }
}
