//! Cross-checks value iteration against an independently written tabular
//! Q-learning run on small worlds.

use morl_core::gridworld::{Action, GridSize, GridWorld, MOState};
use morl_core::oracle::ScalarMdp;
use morl_core::speclang::generate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const GAMMA: f64 = 0.95;

/// Plain tabular Q-learning with decaying exploration and per-pair
/// Robbins-Monro step sizes, sharing nothing with the value-iteration solver
/// except the environment itself.
fn tabular_q(world: &GridWorld, scalar: &[f64], steps: usize, seed: u64) -> Vec<[f64; 4]> {
    let mut q = vec![[0.0f64; 4]; world.n_cells()];
    let mut visits = vec![[0u32; 4]; world.n_cells()];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = world.reset(&mut rng);
    for k in 0..steps {
        if s.t >= world.horizon() {
            s = world.reset(&mut rng);
        }
        // Exploration decays but keeps broad coverage; Q-learning is
        // off-policy so the behavior policy only needs to visit everything.
        let eps = (1.0 - k as f64 / steps as f64).max(0.3);
        let cell = world.cell_index(s.x, s.y);
        let a = if rng.gen::<f64>() < eps {
            rng.gen_range(0..4)
        } else {
            (0..4).max_by(|&i, &j| q[cell][i].partial_cmp(&q[cell][j]).unwrap()).unwrap()
        };
        let tr = world.step(s, Action::from_index(a), &mut rng).unwrap();
        let next_cell = world.cell_index(tr.next.x, tr.next.y);
        let reward = scalar[next_cell];
        let max_next = q[next_cell].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        visits[cell][a] += 1;
        let alpha = 10.0 / (10.0 + visits[cell][a] as f64);
        q[cell][a] += alpha * (reward + GAMMA * max_next - q[cell][a]);
        s = tr.next;
    }
    q
}

#[test]
fn value_iteration_agrees_with_tabular_q_learning() {
    let world = GridWorld::build(GridSize::Small, 3, 1).unwrap();
    let mut spec_rng = ChaCha8Rng::seed_from_u64(0xfeed);
    let mut agree = 0usize;
    let mut total = 0usize;
    let mut specs_used = 0;
    while specs_used < 20 {
        let spec = generate(&mut spec_rng, 3, 5);
        let mdp = ScalarMdp::from_spec(&world, &spec, GAMMA).unwrap();
        // Skip vacuous scalarizations: every policy is optimal there.
        let lo = mdp.scalar_reward().iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = mdp.scalar_reward().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if hi - lo < 1e-9 {
            continue;
        }
        let table = mdp.solve(1e-9);
        let q = tabular_q(&world, mdp.scalar_reward(), 2_000_000, 7 + specs_used as u64);
        for cell in 0..world.n_cells() {
            // Count a state as agreeing when Q-learning's greedy action is
            // epsilon-optimal under the exact Q-values: plateau ties are
            // broken arbitrarily by both learners, and sampled Q estimates
            // cannot resolve gaps below their own noise floor.
            let ql_action =
                (0..4).max_by(|&i, &j| q[cell][i].partial_cmp(&q[cell][j]).unwrap()).unwrap();
            let exact: Vec<f64> = Action::ALL
                .iter()
                .map(|&a| {
                    let mut v = 0.0;
                    for dir in Action::ALL {
                        let p = if dir == a { 0.9 } else { 0.1 / 3.0 };
                        let (x, y) = (cell % world.width(), cell / world.width());
                        let (nx, ny) = world.move_clamped(x, y, dir);
                        let dest = world.cell_index(nx, ny);
                        v += p * (mdp.scalar_reward()[dest] + GAMMA * table.values[dest]);
                    }
                    v
                })
                .collect();
            let best = exact.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            if exact[ql_action] >= best - 1e-2 {
                agree += 1;
            }
            total += 1;
        }
        specs_used += 1;
    }
    let frac = agree as f64 / total as f64;
    assert!(frac >= 0.95, "greedy agreement only {frac:.3} over {total} states");
}

#[test]
fn oracle_policies_are_sensible_on_known_specs() {
    // "o2 >= 1.0" on the small 2-objective world: its policy must send every
    // state toward the fully safe region and keep it there.
    let world = GridWorld::build(GridSize::Small, 2, 1).unwrap();
    let spec = morl_core::speclang::parse("o2 >= 1.0", 2).unwrap();
    let mdp = ScalarMdp::from_spec(&world, &spec, GAMMA).unwrap();
    let reward = mdp.scalar_reward().to_vec();
    assert!(reward.iter().any(|&v| v == 1.0), "world seed must leave safe cells");
    let table = mdp.solve(1e-9);

    // Safe cells are absorbing under the greedy policy without slip.
    let calm = world.with_slip(0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for y in 0..world.height() {
        for x in 0..world.width() {
            if reward[world.cell_index(x, y)] < 1.0 {
                continue;
            }
            let mut s = MOState { x, y, t: 0 };
            for _ in 0..10 {
                let a = table.policy[world.cell_index(s.x, s.y)];
                let tr = calm.step(s, a, &mut rng).unwrap();
                s = tr.next;
                assert_eq!(
                    reward[world.cell_index(s.x, s.y)],
                    1.0,
                    "left the safe region at ({}, {})",
                    s.x,
                    s.y
                );
            }
        }
    }
}
