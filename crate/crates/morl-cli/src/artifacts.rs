//! `morl artifacts`: figure data from a checkpoint — greedy value heatmaps,
//! encoding-space interpolations, and labeled encoding dumps.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::Context;
use morl_core::agent::state_features;
use morl_core::gridworld::GridWorld;
use morl_core::neural::QNetwork;
use morl_core::oracle::ScalarMdp;
use morl_core::speclang::{
    canonical_fingerprint, canonical_probes, parse, render, tokenize, Fingerprint,
};

use crate::eval::load_context;
use crate::rundir::{provenance_header, sha256_file};
use crate::AppError;

/// Greedy state value `max_a Q(s, a)` per cell, under a fixed goal slot.
fn greedy_value_grid(world: &GridWorld, net: &QNetwork, encoding: &[f64]) -> Result<Vec<f64>, AppError> {
    let mut grid = Vec::with_capacity(world.n_cells());
    for y in 0..world.height() {
        for x in 0..world.width() {
            let feats = state_features(world, morl_core::gridworld::MOState { x, y, t: 0 });
            let q = net
                .q_values_with_encoding(&feats, encoding)
                .map_err(anyhow::Error::from)?;
            let v = q.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            if !v.is_finite() {
                return Err(AppError::Numeric(format!("non-finite Q-value at ({x}, {y})")));
            }
            grid.push(v);
        }
    }
    Ok(grid)
}

fn grid_block(world: &GridWorld, grid: &[f64]) -> String {
    let mut out = format!("# grid: {} {}\n", world.width(), world.height());
    for y in 0..world.height() {
        let row: Vec<String> = (0..world.width())
            .map(|x| grid[world.cell_index(x, y)].to_string())
            .collect();
        out.push_str(&row.join("\t"));
        out.push('\n');
    }
    out
}

fn policy_block(world: &GridWorld, policy: &[morl_core::gridworld::Action]) -> String {
    let mut out = format!("# grid: {} {}\n", world.width(), world.height());
    for y in 0..world.height() {
        let row: Vec<&str> = (0..world.width())
            .map(|x| policy[world.cell_index(x, y)].name())
            .collect();
        out.push_str(&row.join("\t"));
        out.push('\n');
    }
    out
}

pub fn value_heatmap(checkpoint: &Path, spec_text: &str, out: &Path) -> Result<(), AppError> {
    let (ck, cfg, world, agent) = load_context(checkpoint)?;
    let sha = sha256_file(checkpoint)?;
    let spec = parse(spec_text, cfg.world.objectives).map_err(|e| AppError::Data(e.into()))?;
    let tokens = tokenize(&spec);
    let encoding = agent.net().encode(&tokens).map_err(anyhow::Error::from)?;
    fs::create_dir_all(out).context("creating artifact directory")?;

    let mut value = provenance_header("value-heatmap", &sha, &ck);
    let _ = writeln!(value, "# spec: {}", render(&spec));
    value.push_str(&grid_block(&world, &greedy_value_grid(&world, agent.net(), &encoding)?));
    fs::write(out.join("value_heatmap.tsv"), value)?;

    // Exact reference alongside, for side-by-side figures.
    let mdp = ScalarMdp::from_spec(&world, &spec, cfg.agent.gamma).map_err(anyhow::Error::from)?;
    let table = mdp.solve(cfg.training.oracle_tol);
    let mut oracle_value = provenance_header("oracle-value", &sha, &ck);
    let _ = writeln!(oracle_value, "# spec: {}", render(&spec));
    oracle_value.push_str(&grid_block(&world, &table.values));
    fs::write(out.join("oracle_value.tsv"), oracle_value)?;
    let mut oracle_policy = provenance_header("oracle-policy", &sha, &ck);
    let _ = writeln!(oracle_policy, "# spec: {}", render(&spec));
    oracle_policy.push_str(&policy_block(&world, &table.policy));
    fs::write(out.join("oracle_policy.tsv"), oracle_policy)?;
    Ok(())
}

pub fn interpolate(
    checkpoint: &Path,
    spec_a: &str,
    spec_b: &str,
    steps: usize,
    out: &Path,
) -> Result<(), AppError> {
    let (ck, cfg, world, agent) = load_context(checkpoint)?;
    let sha = sha256_file(checkpoint)?;
    let a = parse(spec_a, cfg.world.objectives).map_err(|e| AppError::Data(e.into()))?;
    let b = parse(spec_b, cfg.world.objectives).map_err(|e| AppError::Data(e.into()))?;
    let enc_a = agent.net().encode(&tokenize(&a)).map_err(anyhow::Error::from)?;
    let enc_b = agent.net().encode(&tokenize(&b)).map_err(anyhow::Error::from)?;
    fs::create_dir_all(out).context("creating artifact directory")?;

    for i in 0..steps {
        let alpha = i as f64 / (steps - 1) as f64;
        let blended: Vec<f64> =
            enc_a.iter().zip(&enc_b).map(|(x, y)| (1.0 - alpha) * x + alpha * y).collect();
        let mut text = provenance_header("interpolated-heatmap", &sha, &ck);
        let _ = writeln!(text, "# spec-a: {}", render(&a));
        let _ = writeln!(text, "# spec-b: {}", render(&b));
        let _ = writeln!(text, "# alpha: {alpha}");
        text.push_str(&grid_block(&world, &greedy_value_grid(&world, agent.net(), &blended)?));
        fs::write(out.join(format!("interp_{i:02}.tsv")), text)?;
    }
    Ok(())
}

pub fn encodings(checkpoint: &Path, specs: &Path, out: &Path) -> Result<(), AppError> {
    let (ck, cfg, world, agent) = load_context(checkpoint)?;
    let _ = world;
    let sha = sha256_file(checkpoint)?;
    let text = fs::read_to_string(specs)
        .with_context(|| format!("reading spec list {}", specs.display()))?;
    let asts = morl_core::speclang::from_lines(&text, cfg.world.objectives)
        .map_err(|e| AppError::Data(e.into()))?;

    // Bucket label = dense index of the spec's semantic fingerprint, in
    // order of first appearance.
    let probes = canonical_probes(cfg.world.objectives);
    let mut buckets: BTreeMap<Fingerprint, usize> = BTreeMap::new();
    let mut rows = provenance_header("encodings", &sha, &ck);
    rows.push_str("id\tbucket\tspec\tencoding...\n");
    for (i, ast) in asts.iter().enumerate() {
        let fp = canonical_fingerprint(ast, &probes).map_err(anyhow::Error::from)?;
        let next = buckets.len();
        let bucket = *buckets.entry(fp).or_insert(next);
        let enc = agent.net().encode(&tokenize(ast)).map_err(anyhow::Error::from)?;
        if enc.iter().any(|v| !v.is_finite()) {
            return Err(AppError::Numeric(format!("non-finite encoding for spec {i}")));
        }
        let _ = write!(rows, "{i}\t{bucket}\t{}", render(ast));
        for v in enc {
            let _ = write!(rows, "\t{v}");
        }
        rows.push('\n');
    }
    fs::write(out, rows).with_context(|| format!("writing {}", out.display()))?;
    Ok(())
}
