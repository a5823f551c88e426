//! The specification-conditioned multi-objective DQN.
//!
//! Transitions are stored with their full reward vectors and scalarized only
//! at training time: each sampled transition is paired with every goal in the
//! batch (32 transitions × 8 goals = 256 rows), the scalar reward of a row is
//! the quantitative semantics of its goal applied to the stored vector, and
//! the TD target bootstraps through a frozen target copy of the network:
//!
//! ```text
//! delta = Q(s,a) - (f(r, psi) + gamma * max_a' Qhat(s',a') * (1 - t))
//! ```
//!
//! Goals are either token sequences routed through the GRU encoder or, for
//! the linear-scalarization variant, weight vectors placed directly in the
//! encoder's 128-wide slot (zero padded), with `w · r` as the scalar reward.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

#[allow(unused_imports)] // f64 math methods come from this trait in no_std builds
use num_traits::Float;
use rand::Rng;

use crate::gridworld::{Action, GridWorld, MOState, Transition};
use crate::neural::{
    Adam, Checkpoint, NeuralError, QNetwork, Tape, TargetParams, TokenBatch, ENCODING_DIM,
    N_ACTIONS,
};
use crate::speclang::{SpecAst, SpecError, TokenSequence};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AgentError {
    #[error("replay buffer holds {have} transitions, need {need}")]
    BufferTooSmall { have: usize, need: usize },
    #[error("goal weight vector has {got} entries, expected {want}")]
    WeightLength { got: usize, want: usize },
    #[error(transparent)]
    Neural(#[from] NeuralError),
    #[error(transparent)]
    Spec(#[from] SpecError),
}

/// Hyperparameters of the DQN agent.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct AgentConfig {
    pub gamma: f64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub replay_capacity: usize,
    pub target_sync_every: u64,
    pub batch_transitions: usize,
    pub specs_per_batch: usize,
    pub eps_start: f64,
    pub eps_end: f64,
    /// Fraction of the total training steps over which epsilon anneals.
    pub eps_anneal_frac: f64,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            gamma: 0.95,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            replay_capacity: 100_000,
            target_sync_every: 500,
            batch_transitions: 32,
            specs_per_batch: 8,
            eps_start: 1.0,
            eps_end: 0.05,
            eps_anneal_frac: 0.3,
        }
    }
}

impl AgentConfig {
    /// Linearly annealed exploration rate; monotone nonincreasing in `step`.
    pub fn epsilon(&self, step: u64, total_steps: u64) -> f64 {
        let anneal = (total_steps as f64 * self.eps_anneal_frac).max(1.0);
        let frac = step as f64 / anneal;
        if frac >= 1.0 {
            return self.eps_end;
        }
        self.eps_start - (self.eps_start - self.eps_end) * frac
    }
}

/// FIFO ring of transitions.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    items: Vec<Transition>,
    cursor: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0);
        Self { capacity, items: Vec::new(), cursor: 0 }
    }

    pub fn push(&mut self, tr: Transition) {
        if self.items.len() < self.capacity {
            self.items.push(tr);
        } else {
            self.items[self.cursor] = tr;
        }
        self.cursor = (self.cursor + 1) % self.capacity;
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn get(&self, index: usize) -> &Transition {
        &self.items[index]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.items.iter()
    }
}

/// One goal conditioning a batch row group.
#[derive(Debug, Clone)]
pub enum BatchGoal<'a> {
    Spec { id: u64, ast: &'a SpecAst, tokens: &'a TokenSequence },
    Linear { weights: &'a [f64] },
}

impl BatchGoal<'_> {
    /// Scalar reward of this goal applied to a reward vector.
    pub fn scalarize(&self, reward: &[f64]) -> Result<f64, AgentError> {
        match self {
            BatchGoal::Spec { ast, .. } => Ok(ast.evaluate(reward)?),
            BatchGoal::Linear { weights } => {
                if weights.len() != reward.len() {
                    return Err(AgentError::WeightLength {
                        got: weights.len(),
                        want: reward.len(),
                    });
                }
                Ok(weights.iter().zip(reward).map(|(w, r)| w * r).sum())
            }
        }
    }
}

/// TD target: `f + gamma * max_q_target * (1 - t)`.
pub fn td_target(scalar_reward: f64, gamma: f64, max_target_q: f64, terminal: bool) -> f64 {
    scalar_reward + gamma * max_target_q * if terminal { 0.0 } else { 1.0 }
}

/// One-hot encoding of the grid cell; injective over the grid and
/// time-independent (the step counter is not observed).
pub fn state_features(world: &GridWorld, s: MOState) -> Vec<f64> {
    let mut f = alloc::vec![0.0; world.n_cells()];
    f[world.cell_index(s.x, s.y)] = 1.0;
    f
}

/// Greedy argmax with ties broken in fixed action order.
pub fn argmax_action(q: &[f64; N_ACTIONS]) -> Action {
    let mut best = 0;
    for i in 1..N_ACTIONS {
        if q[i] > q[best] {
            best = i;
        }
    }
    Action::from_index(best)
}

/// A weight vector on the simplex, sampled from Dirichlet(alpha = 1): unit
/// exponentials, normalized.
pub fn sample_simplex<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    let draws: Vec<f64> = (0..n).map(|_| -(1.0 - rng.gen::<f64>()).ln()).collect();
    let sum: f64 = draws.iter().sum();
    draws.iter().map(|d| d / sum).collect()
}

/// Places a weight vector in the encoder's 128-wide slot, zero padded.
pub fn pad_goal_slot(weights: &[f64]) -> Vec<f64> {
    let mut slot = alloc::vec![0.0; ENCODING_DIM];
    slot[..weights.len()].copy_from_slice(weights);
    slot
}

/// Summary of a single optimizer update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainDiagnostics {
    pub loss: f64,
    pub rows: usize,
    pub synced_target: bool,
}

/// The DQN agent: live network, frozen target copy, optimizer, and replay.
pub struct Agent {
    net: QNetwork,
    target: TargetParams,
    adam: Adam,
    pub buffer: ReplayBuffer,
    cfg: AgentConfig,
    train_steps: u64,
    param_version: u64,
    target_enc_cache: BTreeMap<u64, Vec<f64>>,
    act_enc_cache: Option<(u64, u64, Vec<f64>)>,
}

impl Agent {
    pub fn new(state_dim: usize, cfg: AgentConfig, seed: u64) -> Self {
        let net = QNetwork::new(state_dim, seed);
        let target = net.copy_into_target();
        let adam = Adam::new(cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps, net.store());
        let buffer = ReplayBuffer::new(cfg.replay_capacity);
        Self {
            net,
            target,
            adam,
            buffer,
            cfg,
            train_steps: 0,
            param_version: 0,
            target_enc_cache: BTreeMap::new(),
            act_enc_cache: None,
        }
    }

    /// Restores an agent exactly (parameters and optimizer moments), for
    /// resuming an interrupted run.
    pub fn from_checkpoint(ck: &Checkpoint, cfg: AgentConfig) -> Result<Self, AgentError> {
        let mut agent = Self::new(ck.state_dim, cfg, 0);
        ck.restore_params(agent.net.store_mut())?;
        agent.adam.restore_moments(ck.adam_m.clone(), ck.adam_v.clone(), ck.adam_steps)?;
        agent.train_steps = ck.train_steps;
        agent.target = agent.net.copy_into_target();
        Ok(agent)
    }

    /// Starts a new agent from checkpoint parameters with fresh optimizer
    /// moments; both Q and the target copy begin at the checkpoint.
    pub fn warm_start(ck: &Checkpoint, cfg: AgentConfig) -> Result<Self, AgentError> {
        let mut agent = Self::new(ck.state_dim, cfg, 0);
        ck.restore_params(agent.net.store_mut())?;
        agent.target = agent.net.copy_into_target();
        agent.adam.reset();
        Ok(agent)
    }

    pub fn net(&self) -> &QNetwork {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut QNetwork {
        &mut self.net
    }

    pub fn target(&self) -> &TargetParams {
        &self.target
    }

    pub fn cfg(&self) -> &AgentConfig {
        &self.cfg
    }

    pub fn train_steps(&self) -> u64 {
        self.train_steps
    }

    pub fn adam(&self) -> &Adam {
        &self.adam
    }

    pub fn to_checkpoint(
        &self,
        env_steps: u64,
        n_objectives: usize,
        goal_mode: &str,
        config_text: &str,
    ) -> Checkpoint {
        Checkpoint::capture(
            &self.net,
            &self.adam,
            env_steps,
            self.train_steps,
            n_objectives,
            goal_mode,
            config_text,
        )
    }

    /// Goal slot under the live parameters: encoder output for spec goals,
    /// zero-padded weights for linear goals.
    pub fn goal_encoding(&self, goal: &BatchGoal) -> Result<Vec<f64>, AgentError> {
        match goal {
            BatchGoal::Spec { tokens, .. } => Ok(self.net.encode(tokens)?),
            BatchGoal::Linear { weights } => Ok(pad_goal_slot(weights)),
        }
    }

    fn goal_encoding_cached(&mut self, goal: &BatchGoal) -> Result<Vec<f64>, AgentError> {
        match goal {
            BatchGoal::Spec { id, tokens, .. } => {
                if let Some((cid, ver, enc)) = &self.act_enc_cache {
                    if cid == id && *ver == self.param_version {
                        return Ok(enc.clone());
                    }
                }
                let enc = self.net.encode(tokens)?;
                self.act_enc_cache = Some((*id, self.param_version, enc.clone()));
                Ok(enc)
            }
            BatchGoal::Linear { weights } => Ok(pad_goal_slot(weights)),
        }
    }

    /// Greedy action under the live network.
    pub fn greedy_action(&mut self, features: &[f64], goal: &BatchGoal) -> Result<Action, AgentError> {
        let enc = self.goal_encoding_cached(goal)?;
        let q = self.net.q_values_with_encoding(features, &enc)?;
        Ok(argmax_action(&q))
    }

    /// Epsilon-greedy action.
    pub fn act<R: Rng>(
        &mut self,
        features: &[f64],
        goal: &BatchGoal,
        epsilon: f64,
        rng: &mut R,
    ) -> Result<Action, AgentError> {
        if rng.gen::<f64>() < epsilon {
            return Ok(Action::from_index(rng.gen_range(0..N_ACTIONS)));
        }
        self.greedy_action(features, goal)
    }

    fn target_goal_encodings(&mut self, goals: &[BatchGoal]) -> Result<Vec<Vec<f64>>, AgentError> {
        let mut out = Vec::with_capacity(goals.len());
        for goal in goals {
            match goal {
                BatchGoal::Spec { id, tokens, .. } => {
                    if let Some(enc) = self.target_enc_cache.get(id) {
                        out.push(enc.clone());
                        continue;
                    }
                    let enc = self.net.encode_in(&self.target, tokens)?;
                    self.target_enc_cache.insert(*id, enc.clone());
                    out.push(enc);
                }
                BatchGoal::Linear { weights } => out.push(pad_goal_slot(weights)),
            }
        }
        Ok(out)
    }

    /// Builds the augmented batch (every transition paired with every goal),
    /// computes the TD loss, backpropagates, and applies one Adam update.
    pub fn update_on_batch(
        &mut self,
        world: &GridWorld,
        transitions: &[Transition],
        goals: &[BatchGoal],
    ) -> Result<TrainDiagnostics, AgentError> {
        let rows = transitions.len() * goals.len();
        let sdim = self.net.state_dim();
        let gamma = self.cfg.gamma;

        // Target-side quantities involve no gradients.
        let target_encs = self.target_goal_encodings(goals)?;
        let mut target_input = alloc::vec![0.0; rows * (sdim + ENCODING_DIM)];
        let mut state_input = alloc::vec![0.0; rows * sdim];
        let mut scalar_rewards = Vec::with_capacity(rows);
        let mut terminals = Vec::with_capacity(rows);
        let mut actions = Vec::with_capacity(rows);
        let mut row = 0;
        for tr in transitions {
            let s_idx = world.cell_index(tr.state.x, tr.state.y);
            let n_idx = world.cell_index(tr.next.x, tr.next.y);
            for (gi, goal) in goals.iter().enumerate() {
                state_input[row * sdim + s_idx] = 1.0;
                let t_off = row * (sdim + ENCODING_DIM);
                target_input[t_off + n_idx] = 1.0;
                target_input[t_off + sdim..t_off + sdim + ENCODING_DIM]
                    .copy_from_slice(&target_encs[gi]);
                scalar_rewards.push(goal.scalarize(tr.reward.as_slice())?);
                terminals.push(tr.terminal);
                actions.push(tr.action.index());
                row += 1;
            }
        }

        // max_a' Qhat(s', a') per row, through the frozen copy.
        let mut ttape = Tape::new();
        let tin = ttape.constant(rows, sdim + ENCODING_DIM, target_input);
        let tq = self.net.head().forward_traced(&mut ttape, &self.target, tin, false);
        let tqv = ttape.value(tq);
        let targets: Vec<f64> = (0..rows)
            .map(|r| {
                let q = &tqv[r * N_ACTIONS..(r + 1) * N_ACTIONS];
                let maxq = q.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                td_target(scalar_rewards[r], gamma, maxq, terminals[r])
            })
            .collect();

        // Online pass, recorded for gradients (encoder included).
        let mut tape = Tape::new();
        let goal_rows: Vec<usize> = (0..rows).map(|r| r % goals.len()).collect();
        let enc_node = match goals.first() {
            Some(BatchGoal::Spec { .. }) => {
                let mut unique_ids: Vec<u64> = Vec::new();
                let mut slots = Vec::with_capacity(goals.len());
                let mut token_refs: Vec<&TokenSequence> = Vec::new();
                for goal in goals {
                    let BatchGoal::Spec { id, tokens, .. } = goal else {
                        return Err(NeuralError::Shape { msg: "mixed goal kinds in one batch" }.into());
                    };
                    match unique_ids.iter().position(|u| u == id) {
                        Some(pos) => slots.push(pos),
                        None => {
                            unique_ids.push(*id);
                            token_refs.push(tokens);
                            slots.push(unique_ids.len() - 1);
                        }
                    }
                }
                let batch = TokenBatch::new(&token_refs)?;
                let enc =
                    self.net.encoder().encode_traced(&mut tape, self.net.store(), &batch, true);
                let row_map: Vec<usize> = goal_rows.iter().map(|&g| slots[g]).collect();
                tape.gather_rows(enc, row_map)
            }
            Some(BatchGoal::Linear { .. }) => {
                let mut encs = Vec::with_capacity(rows * ENCODING_DIM);
                for &g in &goal_rows {
                    let BatchGoal::Linear { weights } = &goals[g] else {
                        return Err(NeuralError::Shape { msg: "mixed goal kinds in one batch" }.into());
                    };
                    encs.extend_from_slice(&pad_goal_slot(weights));
                }
                tape.constant(rows, ENCODING_DIM, encs)
            }
            None => return Err(NeuralError::Shape { msg: "empty goal list" }.into()),
        };
        let states = tape.constant(rows, sdim, state_input);
        let input = tape.concat_cols(states, enc_node);
        let q_all = self.net.head().forward_traced(&mut tape, self.net.store(), input, true);
        let q_sel = tape.select_per_row(q_all, actions);
        let loss_node = tape.mse_against(q_sel, targets);
        let loss = tape.value(loss_node)[0];

        let store = self.net.store_mut();
        store.zero_grads();
        tape.backward(loss_node, store)?;
        self.adam.step(store)?;
        self.param_version += 1;
        self.train_steps += 1;

        let synced = self.train_steps % self.cfg.target_sync_every == 0;
        if synced {
            self.sync_target();
        }
        Ok(TrainDiagnostics { loss, rows, synced_target: synced })
    }

    /// Samples `batch_transitions` uniformly from replay and updates on the
    /// augmented batch.
    pub fn train_step<R: Rng>(
        &mut self,
        world: &GridWorld,
        goals: &[BatchGoal],
        rng: &mut R,
    ) -> Result<TrainDiagnostics, AgentError> {
        let need = self.cfg.batch_transitions;
        if self.buffer.len() < need {
            return Err(AgentError::BufferTooSmall { have: self.buffer.len(), need });
        }
        let transitions: Vec<Transition> = (0..need)
            .map(|_| self.buffer.get(rng.gen_range(0..self.buffer.len())).clone())
            .collect();
        self.update_on_batch(world, &transitions, goals)
    }

    pub fn sync_target(&mut self) {
        self.target = self.net.copy_into_target();
        self.target_enc_cache.clear();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gridworld::GridSize;
    use crate::neural::Params;
    use alloc::borrow::ToOwned;
    use crate::speclang::{parse, tokenize};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn world() -> GridWorld {
        GridWorld::build(GridSize::Small, 2, 1).unwrap()
    }

    fn fill_buffer(agent: &mut Agent, world: &GridWorld, rng: &mut ChaCha8Rng, steps: usize) {
        let mut s = world.reset(rng);
        for _ in 0..steps {
            let a = Action::from_index(rng.gen_range(0..4));
            let tr = world.step(s, a, rng).unwrap();
            s = if tr.terminal { world.reset(rng) } else { tr.next };
            agent.buffer.push(tr);
        }
    }

    #[test]
    fn td_target_formula() {
        assert_eq!(td_target(0.2, 0.95, 1.0, false), 1.15);
        assert_eq!(td_target(0.2, 0.95, 1.0, true), 0.2);
        // delta = 0.5 - 1.15 = -0.65, squared 0.4225
        let mut tape = Tape::new();
        let q = tape.constant(1, 1, alloc::vec![0.5]);
        let loss = tape.mse_against(q, alloc::vec![td_target(0.2, 0.95, 1.0, false)]);
        assert!((tape.value(loss)[0] - 0.4225).abs() < 1e-15);
    }

    #[test]
    fn epsilon_one_is_uniform() {
        let w = world();
        let mut agent = Agent::new(w.n_cells(), AgentConfig::default(), 5);
        let spec = parse("o1", 2).unwrap();
        let tokens = tokenize(&spec);
        let goal = BatchGoal::Spec { id: 0, ast: &spec, tokens: &tokens };
        let feats = state_features(&w, MOState { x: 2, y: 2, t: 0 });
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let n = 100_000;
        let mut counts = [0u32; 4];
        for _ in 0..n {
            let a = agent.act(&feats, &goal, 1.0, &mut rng).unwrap();
            counts[a.index()] += 1;
        }
        let expected = n as f64 / 4.0;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        // 3 degrees of freedom; 99.9th percentile is ≈ 16.27.
        assert!(chi2 < 16.27, "chi2 = {chi2}");
    }

    #[test]
    fn epsilon_zero_is_greedy_and_deterministic() {
        let w = world();
        let mut agent = Agent::new(w.n_cells(), AgentConfig::default(), 6);
        let spec = parse("o2", 2).unwrap();
        let tokens = tokenize(&spec);
        let goal = BatchGoal::Spec { id: 0, ast: &spec, tokens: &tokens };
        let feats = state_features(&w, MOState { x: 1, y: 3, t: 0 });
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let a = agent.act(&feats, &goal, 0.0, &mut rng).unwrap();
        let b = agent.act(&feats, &goal, 0.0, &mut rng).unwrap();
        assert_eq!(a, b);
        let enc = agent.goal_encoding(&goal).unwrap();
        let q = agent.net().q_values_with_encoding(&feats, &enc).unwrap();
        assert_eq!(a, argmax_action(&q));
    }

    #[test]
    fn hand_built_net_prefers_right() {
        let w = world();
        let mut agent = Agent::new(w.n_cells(), AgentConfig::default(), 7);
        // Zero every parameter, then bias the final layer toward `right`.
        let ids: Vec<_> = agent.net().store().ids().collect();
        for id in ids {
            let name = agent.net().store().name(id).to_owned();
            let t = agent.net_mut().store_mut().tensor_mut(id);
            t.data_mut().iter_mut().for_each(|v| *v = 0.0);
            if name == "head.l3.b" {
                t.data_mut()[Action::Right.index()] = 1.0;
            }
        }
        let spec = parse("o1", 2).unwrap();
        let tokens = tokenize(&spec);
        let goal = BatchGoal::Spec { id: 0, ast: &spec, tokens: &tokens };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for y in 0..w.height() {
            for x in 0..w.width() {
                let feats = state_features(&w, MOState { x, y, t: 0 });
                assert_eq!(agent.act(&feats, &goal, 0.0, &mut rng).unwrap(), Action::Right);
            }
        }
    }

    #[test]
    fn replay_is_fifo() {
        let w = world();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut buffer = ReplayBuffer::new(50);
        let mut s = w.reset(&mut rng);
        for k in 0..60u32 {
            let mut tr = w.step(MOState { t: 0, ..s }, Action::Right, &mut rng).unwrap();
            s = MOState { t: 0, ..tr.next };
            tr.state.t = k; // stamp the insertion order
            buffer.push(tr);
        }
        assert_eq!(buffer.len(), 50);
        let held: Vec<u32> = buffer.iter().map(|t| t.state.t).collect();
        for k in 0..10 {
            assert!(!held.contains(&k), "transition {k} should have been evicted");
        }
        for k in 10..60 {
            assert!(held.contains(&k));
        }
    }

    #[test]
    fn buffer_too_small_is_reported() {
        let w = world();
        let mut agent = Agent::new(w.n_cells(), AgentConfig::default(), 3);
        let spec = parse("o1", 2).unwrap();
        let tokens = tokenize(&spec);
        let goals = [BatchGoal::Spec { id: 0, ast: &spec, tokens: &tokens }];
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let err = agent.train_step(&w, &goals, &mut rng).unwrap_err();
        assert_eq!(err, AgentError::BufferTooSmall { have: 0, need: 32 });
    }

    #[test]
    fn augmented_batch_has_rows_transitions_times_goals() {
        let w = world();
        let cfg = AgentConfig { target_sync_every: 1_000_000, ..AgentConfig::default() };
        let mut agent = Agent::new(w.n_cells(), cfg, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        fill_buffer(&mut agent, &w, &mut rng, 64);
        let specs: Vec<SpecAst> = (0..8)
            .map(|k| parse(if k % 2 == 0 { "o1" } else { "o2 & -o1" }, 2).unwrap())
            .collect();
        let tokens: Vec<TokenSequence> = specs.iter().map(tokenize).collect();
        let goals: Vec<BatchGoal> = specs
            .iter()
            .zip(&tokens)
            .enumerate()
            .map(|(i, (ast, tokens))| BatchGoal::Spec { id: i as u64, ast, tokens })
            .collect();
        let d = agent.train_step(&w, &goals, &mut rng).unwrap();
        assert_eq!(d.rows, 256);
        assert!(d.loss.is_finite());
    }

    #[test]
    fn terminal_rows_use_reward_only_target() {
        // With all-zero parameters Q == 0 and Qhat == 0; a terminal row whose
        // scalar reward is 0 therefore contributes zero loss.
        let w = world();
        let mut agent = Agent::new(w.n_cells(), AgentConfig::default(), 9);
        let ids: Vec<_> = agent.net().store().ids().collect();
        for id in ids {
            agent.net_mut().store_mut().tensor_mut(id).data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        agent.sync_target();
        let spec = parse("o2 >= 1.0", 2).unwrap();
        let tokens = tokenize(&spec);
        let goals = [BatchGoal::Spec { id: 0, ast: &spec, tokens: &tokens }];
        // A terminal transition into a hazard center: f = 0.
        let (hx, hy) = w.hazard_centers()[0];
        let next = MOState { x: hx, y: hy, t: w.horizon() };
        let tr = Transition {
            state: MOState { x: hx, y: hy, t: w.horizon() - 1 },
            action: Action::Up,
            next,
            terminal: true,
            reward: w.reward_vector(next),
        };
        let d = agent.update_on_batch(&w, &[tr], &goals).unwrap();
        assert_eq!(d.loss, 0.0);
    }

    #[test]
    fn target_outputs_fixed_between_syncs() {
        let w = world();
        let cfg = AgentConfig { target_sync_every: 1_000_000, ..AgentConfig::default() };
        let mut agent = Agent::new(w.n_cells(), cfg, 10);
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        fill_buffer(&mut agent, &w, &mut rng, 64);
        let spec = parse("o1 | o2", 2).unwrap();
        let tokens = tokenize(&spec);
        let goals = [BatchGoal::Spec { id: 0, ast: &spec, tokens: &tokens }];
        let feats = state_features(&w, MOState { x: 3, y: 1, t: 0 });
        let enc_before = agent.net().encode_in(agent.target(), &tokens).unwrap();
        let q_before = agent
            .net()
            .q_values_with_encoding_in(agent.target(), &feats, &enc_before)
            .unwrap();
        for _ in 0..5 {
            agent.train_step(&w, &goals, &mut rng).unwrap();
        }
        let enc_after = agent.net().encode_in(agent.target(), &tokens).unwrap();
        let q_after = agent
            .net()
            .q_values_with_encoding_in(agent.target(), &feats, &enc_after)
            .unwrap();
        assert_eq!(q_before, q_after);
        assert_eq!(enc_before, enc_after);
    }

    #[test]
    fn loss_decreases_on_fixed_batch() {
        let w = world();
        let cfg = AgentConfig { target_sync_every: 1_000_000, ..AgentConfig::default() };
        let mut agent = Agent::new(w.n_cells(), cfg, 11);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut transitions = Vec::new();
        let mut s = w.reset(&mut rng);
        for _ in 0..32 {
            let tr = w.step(s, Action::from_index(rng.gen_range(0..4)), &mut rng).unwrap();
            s = if tr.terminal { w.reset(&mut rng) } else { tr.next };
            transitions.push(tr);
        }
        let spec = parse("o1 & o2", 2).unwrap();
        let tokens = tokenize(&spec);
        let goals = [BatchGoal::Spec { id: 0, ast: &spec, tokens: &tokens }];
        let first = agent.update_on_batch(&w, &transitions, &goals).unwrap().loss;
        let mut last = first;
        for _ in 0..99 {
            last = agent.update_on_batch(&w, &transitions, &goals).unwrap().loss;
        }
        assert!(last < first, "loss did not decrease: {first} -> {last}");
    }

    #[test]
    fn warm_start_matches_source_and_resets_moments() {
        let w = world();
        let mut agent = Agent::new(w.n_cells(), AgentConfig::default(), 12);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        fill_buffer(&mut agent, &w, &mut rng, 64);
        let spec = parse("o1", 2).unwrap();
        let tokens = tokenize(&spec);
        let goals = [BatchGoal::Spec { id: 0, ast: &spec, tokens: &tokens }];
        for _ in 0..3 {
            agent.train_step(&w, &goals, &mut rng).unwrap();
        }
        let ck = agent.to_checkpoint(100, 2, "spec", "");
        let mut warm = Agent::warm_start(&ck, AgentConfig::default()).unwrap();
        assert_eq!(warm.adam().steps_taken(), 0);
        let feats = state_features(&w, MOState { x: 4, y: 4, t: 0 });
        let goal = BatchGoal::Spec { id: 0, ast: &spec, tokens: &tokens };
        assert_eq!(
            warm.greedy_action(&feats, &goal).unwrap(),
            agent.greedy_action(&feats, &goal).unwrap()
        );
        // Exact restore keeps the moments instead.
        let resumed = Agent::from_checkpoint(&ck, AgentConfig::default()).unwrap();
        assert_eq!(resumed.adam().steps_taken(), agent.adam().steps_taken());
        assert_eq!(resumed.train_steps(), agent.train_steps());
    }

    #[test]
    fn linear_goals_bypass_encoder_and_scalarize_by_dot() {
        let w3 = GridWorld::build(GridSize::Small, 3, 1).unwrap();
        let cfg = AgentConfig { target_sync_every: 1_000_000, ..AgentConfig::default() };
        let mut agent = Agent::new(w3.n_cells(), cfg, 13);
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        fill_buffer(&mut agent, &w3, &mut rng, 64);

        // One-hot weight on objective 3 equals the "o3" semantics.
        let one_hot = [0.0, 0.0, 1.0];
        let spec = parse("o3", 3).unwrap();
        let r = w3.reward_vector(MOState { x: 2, y: 4, t: 0 });
        let goal = BatchGoal::Linear { weights: &one_hot };
        assert_eq!(goal.scalarize(r.as_slice()).unwrap(), spec.evaluate(r.as_slice()).unwrap());

        // Mean and min differ whenever r[2] != r[3].
        let half = [0.0, 0.5, 0.5];
        let blend = BatchGoal::Linear { weights: &half };
        let conj = parse("o2 & o3", 3).unwrap();
        let mut seen_difference = false;
        for y in 0..w3.height() {
            for x in 0..w3.width() {
                let r = w3.reward_vector(MOState { x, y, t: 0 });
                let lin = blend.scalarize(r.as_slice()).unwrap();
                let log = conj.evaluate(r.as_slice()).unwrap();
                if (r.as_slice()[1] - r.as_slice()[2]).abs() > 1e-12 {
                    assert!((lin - log).abs() > 1e-15);
                    seen_difference = true;
                }
            }
        }
        assert!(seen_difference);

        // Training with linear goals leaves encoder gradients untouched.
        let weights = sample_simplex(&mut rng, 3);
        let goals = [BatchGoal::Linear { weights: &weights }];
        agent.train_step(&w3, &goals, &mut rng).unwrap();
        for id in agent.net().store().ids() {
            let name = agent.net().store().name(id);
            if name.starts_with("encoder.") {
                let g = agent.net().store().tensor(id).grad().unwrap();
                assert!(g.iter().all(|&v| v == 0.0), "encoder grad moved for {name}");
            }
        }
    }

    #[test]
    fn simplex_samples_are_on_the_simplex() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        for _ in 0..1000 {
            let wts = sample_simplex(&mut rng, 4);
            assert!(wts.iter().all(|&v| v >= 0.0));
            assert!((wts.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn epsilon_schedule_is_monotone() {
        let cfg = AgentConfig::default();
        let total = 100_000;
        let mut prev = f64::INFINITY;
        for step in (0..=total).step_by(1000) {
            let e = cfg.epsilon(step, total);
            assert!(e <= prev);
            assert!((cfg.eps_end..=cfg.eps_start).contains(&e));
            prev = e;
        }
        assert_eq!(cfg.epsilon(0, total), 1.0);
        assert_eq!(cfg.epsilon(30_000, total), 0.05);
        assert_eq!(cfg.epsilon(total, total), 0.05);
    }
}
