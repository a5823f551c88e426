//! Exact baselines for scalarized gridworld MDPs.
//!
//! For a fixed specification the world collapses to a scalar-reward MDP over
//! the grid cells (rewards are time-invariant, so the step counter is dropped
//! from the solved state space). Value iteration with the exact four-outcome
//! transition kernel yields the optimal stationary policy; finite-horizon
//! rollouts of that policy provide the oracle returns against which agents
//! are scored.

use alloc::vec::Vec;

#[allow(unused_imports)] // f64 math methods come from this trait in no_std builds
use num_traits::Float;
use rand::{Rng, RngCore};

use crate::gridworld::{Action, GridWorld, MOState};
use crate::speclang::{RewardVector, SpecAst, SpecError};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum OracleError {
    #[error("specification is vacuous on this world: oracle-random gap {gap} < 1e-6")]
    DegenerateSpec { gap: f64 },
    #[error("reward table has {got} entries, world has {want} cells")]
    TableSize { got: usize, want: usize },
    #[error("reward table entry {value} outside [0,1]")]
    TableRange { value: f64 },
    #[error(transparent)]
    Spec(#[from] SpecError),
}

/// A gridworld scalarized by a fixed reward table over cells.
#[derive(Debug, Clone)]
pub struct ScalarMdp<'w> {
    world: &'w GridWorld,
    gamma: f64,
    scalar_reward: Vec<f64>,
    /// next[cell * 4 + dir] = arrived-at cell after executing dir.
    next: Vec<usize>,
}

impl<'w> ScalarMdp<'w> {
    /// Scalarizes the world with an explicit per-cell reward table.
    pub fn from_reward_table(
        world: &'w GridWorld,
        scalar_reward: Vec<f64>,
        gamma: f64,
    ) -> Result<Self, OracleError> {
        if scalar_reward.len() != world.n_cells() {
            return Err(OracleError::TableSize { got: scalar_reward.len(), want: world.n_cells() });
        }
        if let Some(&bad) = scalar_reward.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(OracleError::TableRange { value: bad });
        }
        assert!(gamma > 0.0 && gamma < 1.0, "discount must lie in (0,1)");
        let mut next = alloc::vec![0usize; world.n_cells() * 4];
        for y in 0..world.height() {
            for x in 0..world.width() {
                for dir in Action::ALL {
                    let (nx, ny) = world.move_clamped(x, y, dir);
                    next[world.cell_index(x, y) * 4 + dir.index()] = world.cell_index(nx, ny);
                }
            }
        }
        Ok(Self { world, gamma, scalar_reward, next })
    }

    /// Scalarizes the world with the quantitative semantics of `spec`.
    pub fn from_spec(world: &'w GridWorld, spec: &SpecAst, gamma: f64) -> Result<Self, OracleError> {
        let mut table = Vec::with_capacity(world.n_cells());
        for y in 0..world.height() {
            for x in 0..world.width() {
                let r = world.reward_vector(MOState { x, y, t: 0 });
                table.push(spec.evaluate(r.as_slice())?);
            }
        }
        Self::from_reward_table(world, table, gamma)
    }

    /// Scalarizes the world with a linear weighting `w · r`.
    pub fn from_weights(world: &'w GridWorld, weights: &[f64], gamma: f64) -> Result<Self, OracleError> {
        let mut table = Vec::with_capacity(world.n_cells());
        for y in 0..world.height() {
            for x in 0..world.width() {
                let r = world.reward_vector(MOState { x, y, t: 0 });
                let v: f64 = r.as_slice().iter().zip(weights).map(|(a, b)| a * b).sum();
                table.push(v.clamp(0.0, 1.0));
            }
        }
        Self::from_reward_table(world, table, gamma)
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn scalar_reward(&self) -> &[f64] {
        &self.scalar_reward
    }

    fn q_value(&self, values: &[f64], cell: usize, action: Action) -> f64 {
        let slip = self.world.slip_prob();
        let mut q = 0.0;
        for dir in Action::ALL {
            let p = if dir == action { 1.0 - slip } else { slip / 3.0 };
            let dest = self.next[cell * 4 + dir.index()];
            q += p * (self.scalar_reward[dest] + self.gamma * values[dest]);
        }
        q
    }

    /// Value iteration to a sup-norm update below `tol`, followed by greedy
    /// policy extraction with ties broken in fixed action order
    /// (up < down < left < right).
    pub fn solve(&self, tol: f64) -> ValueTable {
        self.solve_bounded(tol, usize::MAX)
    }

    /// Value iteration stopping at `tol` or after `max_iterations` sweeps,
    /// whichever comes first.
    pub fn solve_bounded(&self, tol: f64, max_iterations: usize) -> ValueTable {
        assert!(tol > 0.0);
        let n = self.world.n_cells();
        let mut values = alloc::vec![0.0; n];
        let mut scratch = alloc::vec![0.0; n];
        let mut iterations = 0;
        let mut residual = f64::INFINITY;
        while iterations < max_iterations && residual >= tol {
            residual = 0.0;
            for cell in 0..n {
                let best = Action::ALL
                    .iter()
                    .map(|&a| self.q_value(&values, cell, a))
                    .fold(f64::NEG_INFINITY, f64::max);
                residual = residual.max((best - values[cell]).abs());
                scratch[cell] = best;
            }
            core::mem::swap(&mut values, &mut scratch);
            iterations += 1;
        }

        // Piecewise-constant scalar rewards produce exact ties between
        // actions; Q-gaps below TIE_EPS count as ties and resolve to the
        // first action in fixed order, so the policy does not depend on
        // accumulated float noise or the convergence tolerance.
        const TIE_EPS: f64 = 1e-6;
        let mut policy = Vec::with_capacity(n);
        for cell in 0..n {
            let qs: Vec<f64> = Action::ALL.iter().map(|&a| self.q_value(&values, cell, a)).collect();
            let best = qs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let chosen = Action::ALL
                .into_iter()
                .zip(&qs)
                .find(|(_, &q)| q >= best - TIE_EPS)
                .map(|(a, _)| a)
                .expect("at least one maximizer");
            policy.push(chosen);
        }

        ValueTable { values, policy, iterations, residual }
    }
}

/// Converged state values and the extracted greedy policy.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueTable {
    pub values: Vec<f64>,
    pub policy: Vec<Action>,
    pub iterations: usize,
    pub residual: f64,
}

impl ValueTable {
    pub fn action_at(&self, world: &GridWorld, x: usize, y: usize) -> Action {
        self.policy[world.cell_index(x, y)]
    }
}

/// Anything that can pick actions during a rollout. The rollout rng is passed
/// in so stochastic policies share the episode stream.
pub trait RolloutPolicy {
    fn action(&mut self, world: &GridWorld, s: MOState, rng: &mut dyn RngCore) -> Action;
}

impl RolloutPolicy for ValueTable {
    fn action(&mut self, world: &GridWorld, s: MOState, _rng: &mut dyn RngCore) -> Action {
        self.action_at(world, s.x, s.y)
    }
}

impl<F: FnMut(&GridWorld, MOState) -> Action> RolloutPolicy for F {
    fn action(&mut self, world: &GridWorld, s: MOState, _rng: &mut dyn RngCore) -> Action {
        self(world, s)
    }
}

/// Uniformly random policy over the four actions.
pub struct RandomPolicy;

impl RolloutPolicy for RandomPolicy {
    fn action(&mut self, _world: &GridWorld, _s: MOState, rng: &mut dyn RngCore) -> Action {
        Action::from_index(rng.gen_range(0..4))
    }
}

/// Sample mean and standard error of a rollout return estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReturnEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub episodes: usize,
}

/// Discounted return of a policy under an arbitrary scalarization of the
/// reward vector, averaged over `episodes` full-horizon rollouts from random
/// start states.
pub fn policy_return_scalarized<P, F, R>(
    world: &GridWorld,
    policy: &mut P,
    scalarize: F,
    gamma: f64,
    episodes: usize,
    rng: &mut R,
) -> Result<ReturnEstimate, SpecError>
where
    P: RolloutPolicy + ?Sized,
    F: Fn(&RewardVector) -> Result<f64, SpecError>,
    R: Rng,
{
    assert!(episodes >= 1);
    let mut returns = Vec::with_capacity(episodes);
    for _ in 0..episodes {
        let mut s = world.reset(rng);
        let mut ret = 0.0;
        let mut discount = 1.0;
        loop {
            let a = policy.action(world, s, rng);
            let tr = world.step(s, a, rng).expect("rollout stays within horizon");
            ret += discount * scalarize(&tr.reward)?;
            discount *= gamma;
            if tr.terminal {
                break;
            }
            s = tr.next;
        }
        returns.push(ret);
    }
    let n = returns.len() as f64;
    let mean = returns.iter().sum::<f64>() / n;
    let stderr = if returns.len() > 1 {
        let var = returns.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / (n - 1.0);
        (var / n).sqrt()
    } else {
        0.0
    };
    Ok(ReturnEstimate { mean, stderr, episodes })
}

/// Discounted return of a policy under specification `spec`.
pub fn policy_return<P, R>(
    world: &GridWorld,
    policy: &mut P,
    spec: &SpecAst,
    gamma: f64,
    episodes: usize,
    rng: &mut R,
) -> Result<ReturnEstimate, SpecError>
where
    P: RolloutPolicy + ?Sized,
    R: Rng,
{
    policy_return_scalarized(world, policy, |r| spec.evaluate(r.as_slice()), gamma, episodes, rng)
}

/// 0 at random-policy level, 1 at oracle level.
pub fn normalized_score(
    agent_return: f64,
    oracle_return: f64,
    random_return: f64,
) -> Result<f64, OracleError> {
    let gap = oracle_return - random_return;
    if gap < 1e-6 {
        return Err(OracleError::DegenerateSpec { gap });
    }
    Ok((agent_return - random_return) / gap)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gridworld::GridSize;
    use crate::speclang::parse;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const GAMMA: f64 = 0.95;

    #[test]
    fn constant_spec_value_is_geometric_series() {
        let world = GridWorld::build(GridSize::Small, 2, 1).unwrap();
        let spec = parse("o1 >= 0.0", 2).unwrap();
        let mdp = ScalarMdp::from_spec(&world, &spec, GAMMA).unwrap();
        assert!(mdp.scalar_reward().iter().all(|&r| r == 1.0));
        let table = mdp.solve(1e-9);
        for &v in &table.values {
            assert!((v - 1.0 / (1.0 - GAMMA)).abs() < 1e-6, "v = {v}");
        }
    }

    #[test]
    fn move_right_policy_points_right() {
        for size in [GridSize::Small, GridSize::Medium] {
            let world = GridWorld::build(size, 3, 1).unwrap();
            let spec = parse("o3", 3).unwrap();
            let table = ScalarMdp::from_spec(&world, &spec, GAMMA).unwrap().solve(1e-9);
            for y in 0..world.height() {
                for x in 0..world.width() - 1 {
                    assert_eq!(table.action_at(&world, x, y), Action::Right, "at ({x},{y})");
                }
            }
        }
    }

    #[test]
    fn halving_tolerance_keeps_policy() {
        let world = GridWorld::build(GridSize::Small, 3, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut checked = 0;
        while checked < 20 {
            let spec = crate::speclang::generate(&mut rng, 3, 5);
            let mdp = ScalarMdp::from_spec(&world, &spec, GAMMA).unwrap();
            // Constant-reward specs tie all actions exactly; argmax on such
            // ties is decided by float noise, not by the tolerance.
            let lo = mdp.scalar_reward().iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = mdp.scalar_reward().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            if hi - lo < 1e-9 {
                continue;
            }
            assert_eq!(mdp.solve(1e-9).policy, mdp.solve(5e-10).policy, "spec {spec:?}");
            checked += 1;
        }
    }

    #[test]
    fn residual_below_tolerance() {
        let world = GridWorld::build(GridSize::Small, 2, 1).unwrap();
        let spec = parse("o1 & o2", 2).unwrap();
        let mdp = ScalarMdp::from_spec(&world, &spec, GAMMA).unwrap();
        let tol = 1e-9;
        let table = mdp.solve(tol);
        assert!(table.residual < tol);
    }

    #[test]
    fn iterates_grow_monotonically_from_zero() {
        let world = GridWorld::build(GridSize::Small, 2, 1).unwrap();
        let spec = parse("o1 | -o2", 2).unwrap();
        let mdp = ScalarMdp::from_spec(&world, &spec, GAMMA).unwrap();
        let mut prev = alloc::vec![0.0; world.n_cells()];
        for k in 1..=40 {
            let table = mdp.solve_bounded(1e-15, k);
            for (a, b) in prev.iter().zip(&table.values) {
                assert!(b + 1e-12 >= *a, "iterate {k} decreased");
            }
            prev = table.values;
        }
    }

    #[test]
    fn scalarization_layers_are_byte_identical() {
        let world = GridWorld::build(GridSize::Small, 2, 7).unwrap();
        let spec = parse("o1 & o2 >= 0.5", 2).unwrap();
        let via_spec = ScalarMdp::from_spec(&world, &spec, GAMMA).unwrap();
        let mut table = Vec::new();
        for y in 0..world.height() {
            for x in 0..world.width() {
                let r = world.reward_vector(MOState { x, y, t: 0 });
                table.push(spec.evaluate(r.as_slice()).unwrap());
            }
        }
        let via_table = ScalarMdp::from_reward_table(&world, table, GAMMA).unwrap();
        let a = via_spec.solve(1e-9);
        let b = via_table.solve(1e-9);
        assert_eq!(a.values, b.values);
        assert_eq!(a.policy, b.policy);
    }

    #[test]
    fn deterministic_chain_return_is_closed_form() {
        // Slip-free 5×5, spec "o3": from the leftmost column the policy is
        // forced right, so the return is sum_t gamma^t * x_t / 4.
        let world = GridWorld::build(GridSize::Small, 3, 1).unwrap().with_slip(0.0);
        let spec = parse("o3", 3).unwrap();
        let mut table = ScalarMdp::from_spec(&world, &spec, GAMMA).unwrap().solve(1e-9);

        let mut expected = 0.0;
        let mut x = 0usize;
        let mut discount = 1.0;
        for _ in 0..world.horizon() {
            x = (x + 1).min(4);
            expected += discount * x as f64 / 4.0;
            discount *= GAMMA;
        }

        let mut s = MOState { x: 0, y: 2, t: 0 };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut actual = 0.0;
        let mut discount = 1.0;
        loop {
            let a = table.action(&world, s, &mut rng);
            let tr = world.step(s, a, &mut rng).unwrap();
            actual += discount * spec.evaluate(tr.reward.as_slice()).unwrap();
            discount *= GAMMA;
            if tr.terminal {
                break;
            }
            s = tr.next;
        }
        assert!((actual - expected).abs() < 1e-12, "{actual} vs {expected}");
    }

    #[test]
    fn policy_return_is_reproducible() {
        let world = GridWorld::build(GridSize::Small, 2, 1).unwrap();
        let spec = parse("o1", 2).unwrap();
        let mut table = ScalarMdp::from_spec(&world, &spec, GAMMA).unwrap().solve(1e-9);
        let mut r1 = ChaCha8Rng::seed_from_u64(3);
        let mut r2 = ChaCha8Rng::seed_from_u64(3);
        let a = policy_return(&world, &mut table, &spec, GAMMA, 1, &mut r1).unwrap();
        let b = policy_return(&world, &mut table, &spec, GAMMA, 1, &mut r2).unwrap();
        assert_eq!(a.mean.to_bits(), b.mean.to_bits());
        assert_eq!(a.stderr, 0.0);
    }

    #[test]
    fn oracle_beats_other_policies() {
        let world = GridWorld::build(GridSize::Small, 2, 1).unwrap();
        let spec = parse("o1 & -o2", 2).unwrap();
        let mut oracle = ScalarMdp::from_spec(&world, &spec, GAMMA).unwrap().solve(1e-9);
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let opt = policy_return(&world, &mut oracle, &spec, GAMMA, 200, &mut rng).unwrap();
        let mut fixed = |_: &GridWorld, _: MOState| Action::Right;
        let other = policy_return(&world, &mut fixed, &spec, GAMMA, 200, &mut rng).unwrap();
        let mut random = RandomPolicy;
        let rand_ret = policy_return(&world, &mut random, &spec, GAMMA, 200, &mut rng).unwrap();
        assert!(opt.mean >= other.mean - 2.0 * (opt.stderr + other.stderr));
        assert!(opt.mean >= rand_ret.mean - 2.0 * (opt.stderr + rand_ret.stderr));
    }

    #[test]
    fn normalized_score_fixed_points() {
        assert_eq!(normalized_score(2.0, 2.0, 1.0).unwrap(), 1.0);
        assert_eq!(normalized_score(1.0, 2.0, 1.0).unwrap(), 0.0);
        assert!(matches!(
            normalized_score(1.0, 1.0, 1.0),
            Err(OracleError::DegenerateSpec { .. })
        ));
    }

    #[test]
    fn vacuous_spec_is_degenerate() {
        let world = GridWorld::build(GridSize::Small, 2, 1).unwrap();
        let spec = parse("o1 >= 0.0", 2).unwrap();
        let mut table = ScalarMdp::from_spec(&world, &spec, GAMMA).unwrap().solve(1e-9);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let oracle = policy_return(&world, &mut table, &spec, GAMMA, 50, &mut rng).unwrap();
        let random = policy_return(&world, &mut RandomPolicy, &spec, GAMMA, 50, &mut rng).unwrap();
        assert!(matches!(
            normalized_score(oracle.mean, oracle.mean, random.mean),
            Err(OracleError::DegenerateSpec { .. })
        ));
    }

    #[test]
    fn linear_weights_scalarize_like_dot_product() {
        let world = GridWorld::build(GridSize::Small, 3, 1).unwrap();
        let w = [0.0, 0.0, 1.0];
        let mdp = ScalarMdp::from_weights(&world, &w, GAMMA).unwrap();
        // One-hot weight on objective 3 matches the "o3" scalarization.
        let spec = parse("o3", 3).unwrap();
        let via_spec = ScalarMdp::from_spec(&world, &spec, GAMMA).unwrap();
        assert_eq!(mdp.scalar_reward(), via_spec.scalar_reward());
    }
}
