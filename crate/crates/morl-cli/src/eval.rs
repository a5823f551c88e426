//! `morl eval`: greedy evaluation of a checkpoint against a spec list,
//! scored against exact oracle and random baselines.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::Context;
use morl_core::agent::Agent;
use morl_core::gridworld::GridWorld;
use morl_core::neural::Checkpoint;
use morl_core::speclang;
use morl_core::trainer::{evaluate_goal, EvalGoal, RunConfig};

use crate::rundir::{load_checkpoint, provenance_header, sha256_file};
use crate::AppError;

/// Rebuilds the run context (config, world, agent) recorded in a checkpoint.
pub fn load_context(path: &Path) -> Result<(Checkpoint, RunConfig, GridWorld, Agent), AppError> {
    let ck = load_checkpoint(path)?;
    let cfg: RunConfig = if ck.config_text.is_empty() {
        RunConfig::default()
    } else {
        toml::from_str(&ck.config_text).context("parsing config embedded in checkpoint")?
    };
    let world = cfg.build_world().map_err(|e| AppError::Data(e.into()))?;
    if world.n_cells() != ck.state_dim {
        return Err(AppError::Data(anyhow::anyhow!(
            "checkpoint state width {} does not match the {}x{} world",
            ck.state_dim,
            world.width(),
            world.height()
        )));
    }
    let agent = Agent::from_checkpoint(&ck, cfg.agent.clone()).map_err(anyhow::Error::from)?;
    Ok((ck, cfg, world, agent))
}

pub fn run(
    checkpoint: &Path,
    specs: &Path,
    episodes: usize,
    seed: u64,
    out: &Path,
) -> Result<(), AppError> {
    if episodes == 0 {
        return Err(AppError::Usage("--episodes must be positive".into()));
    }
    let (ck, cfg, world, agent) = load_context(checkpoint)?;
    if ck.goal_mode != "spec" {
        return Err(AppError::Data(anyhow::anyhow!(
            "eval conditions on specifications; this checkpoint was trained in {} mode",
            ck.goal_mode
        )));
    }
    let text = fs::read_to_string(specs)
        .with_context(|| format!("reading spec list {}", specs.display()))?;
    let asts = speclang::from_lines(&text, cfg.world.objectives)
        .map_err(|e| AppError::Data(anyhow::anyhow!("{e} in {}", specs.display())))?;

    let sha = sha256_file(checkpoint)?;
    let mut table = provenance_header("eval-table", &sha, &ck);
    table.push_str("id\tspec\tagent_return\toracle_return\trandom_return\tscore\n");
    let mut scored = Vec::new();
    for (i, ast) in asts.iter().enumerate() {
        let goal = EvalGoal::from_spec(ast.clone());
        let (score, baseline, agent_return) = evaluate_goal(
            &world,
            agent.net(),
            &goal,
            cfg.agent.gamma,
            cfg.training.oracle_tol,
            episodes,
            seed,
            i as u64,
        )
        .map_err(anyhow::Error::from)?;
        let score_text = match score {
            Some(s) => {
                scored.push(s);
                s.to_string()
            }
            None => "degenerate".to_string(),
        };
        let _ = writeln!(
            table,
            "{i}\t{}\t{agent_return}\t{}\t{}\t{score_text}",
            goal.label(),
            baseline.oracle_return,
            baseline.random_return,
        );
    }
    let mean: Option<f64> = if scored.is_empty() {
        None
    } else {
        Some(scored.iter().sum::<f64>() / scored.len() as f64)
    };
    let _ = writeln!(
        table,
        "# mean_score: {} over {} scored specifications ({} degenerate)",
        mean.map(|m| m.to_string()).unwrap_or_else(|| "na".into()),
        scored.len(),
        asts.len() - scored.len()
    );
    fs::write(out, table).with_context(|| format!("writing {}", out.display()))?;
    if let Some(m) = mean {
        eprintln!("mean normalized score {m:.4} over {} specs", scored.len());
    }
    Ok(())
}
