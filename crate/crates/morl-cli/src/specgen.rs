//! `morl specgen` and `morl world`: spec-set files and world exports.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context};
use morl_core::gridworld::{GridSize, GridWorld, MOState};
use morl_core::trainer::SpecSet;

use crate::AppError;

pub fn run(
    objectives: usize,
    count: usize,
    split: f64,
    max_atoms: usize,
    seed: u64,
    out: &Path,
) -> Result<(), AppError> {
    if count == 0 {
        return Err(AppError::Usage("--count must be positive".into()));
    }
    if !(split > 0.0 && split < 1.0) {
        return Err(AppError::Usage("--split must lie strictly between 0 and 1".into()));
    }
    if max_atoms == 0 {
        return Err(AppError::Usage("--max-atoms must be positive".into()));
    }
    let set = SpecSet::build(objectives, count, split, max_atoms, seed)
        .map_err(|e| AppError::Data(e.into()))?;
    fs::create_dir_all(out).context("creating output directory")?;
    write_spec_files(&set, out)?;
    let manifest = format!(
        "objectives = {objectives}\ncount = {count}\nsplit = {split}\nmax_atoms = {max_atoms}\n\
         seed = {seed}\ntrain_count = {}\ntest_count = {}\n",
        set.train().len(),
        set.test().len()
    );
    fs::write(out.join("manifest.toml"), manifest).context("writing manifest")?;
    eprintln!(
        "wrote {} train / {} test specifications to {}",
        set.train().len(),
        set.test().len(),
        out.display()
    );
    Ok(())
}

/// Writes `train.txt` and `test.txt` (one canonical specification per line;
/// the 0-based line number is the specification's identifier).
pub fn write_spec_files(set: &SpecSet, dir: &Path) -> anyhow::Result<()> {
    for (name, entries) in [("train.txt", set.train()), ("test.txt", set.test())] {
        let mut text = String::new();
        for e in entries {
            text.push_str(&e.canonical);
            text.push('\n');
        }
        fs::write(dir.join(name), text).with_context(|| format!("writing {name}"))?;
    }
    Ok(())
}

pub fn parse_size(size: &str) -> anyhow::Result<GridSize> {
    Ok(match size {
        "small" => GridSize::Small,
        "medium" => GridSize::Medium,
        "large" => GridSize::Large,
        other => bail!("unknown size {other:?}; expected small, medium, or large"),
    })
}

/// Structured world export: layout, horizon, and full reward maps as nested
/// arrays, for plotting and oracle cross-checks.
pub fn world_json(world: &GridWorld) -> serde_json::Value {
    let maps: Vec<Vec<Vec<f64>>> = (0..world.n_objectives())
        .map(|k| {
            (0..world.height())
                .map(|y| {
                    (0..world.width())
                        .map(|x| world.reward_map(k)[world.cell_index(x, y)])
                        .collect()
                })
                .collect()
        })
        .collect();
    let road: Vec<Vec<bool>> = (0..world.height())
        .map(|y| (0..world.width()).map(|x| world.is_road(x, y)).collect())
        .collect();
    serde_json::json!({
        "width": world.width(),
        "height": world.height(),
        "objectives": world.n_objectives(),
        "slip_prob": world.slip_prob(),
        "horizon": world.horizon(),
        "hazard_centers": world.hazard_centers(),
        "road": road,
        "reward_maps": maps,
        "sample_reward_vector": world.reward_vector(MOState { x: 0, y: 0, t: 0 }).as_slice(),
    })
}

pub fn export_world(size: &str, objectives: usize, seed: u64, out: &Path) -> Result<(), AppError> {
    let size = parse_size(size).map_err(|e| AppError::Usage(e.to_string()))?;
    let world = GridWorld::build(size, objectives, seed).map_err(|e| AppError::Data(e.into()))?;
    let json = serde_json::to_string_pretty(&world_json(&world)).map_err(anyhow::Error::from)?;
    fs::write(out, json).context("writing world export")?;
    Ok(())
}
