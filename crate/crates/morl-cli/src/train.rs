//! `morl train`: executes a run configuration inside a run directory.

use std::fs;
use std::path::Path;

use anyhow::Context;
use morl_core::agent::Agent;
use morl_core::speclang;
use morl_core::trainer::{run_training, RunConfig, RunStart, SpecSet, TrainError};

use crate::rundir::{
    checkpoint_path, latest_checkpoint, load_checkpoint, prepare, resolve_run_dir,
    save_checkpoint, FileObserver,
};
use crate::specgen::write_spec_files;
use crate::AppError;

pub fn run(
    config: Option<&Path>,
    run_dir: &Path,
    no_curriculum: bool,
    linear: bool,
    resume: bool,
) -> Result<(), AppError> {
    let mut cfg: RunConfig = match config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .with_context(|| format!("reading config {}", path.display()))?;
            toml::from_str(&text).context("parsing run config")?
        }
        None => RunConfig::default(),
    };
    if no_curriculum {
        cfg.training.curriculum = false;
    }
    if linear {
        cfg.training.linear = true;
    }

    let dir = resolve_run_dir(run_dir);
    let _lock = prepare(&dir, resume)?;

    // The effective configuration is the provenance record: written to the
    // run directory and embedded verbatim in every checkpoint.
    let config_text = toml::to_string(&cfg).context("serializing effective config")?;
    let config_path = dir.join("config.toml");
    if resume {
        let previous = fs::read_to_string(&config_path).unwrap_or_default();
        if previous != config_text {
            return Err(AppError::Data(anyhow::anyhow!(
                "resume config differs from the one recorded in {}",
                config_path.display()
            )));
        }
    } else {
        fs::write(&config_path, &config_text).context("writing config copy")?;
    }

    // Spec set: reuse the files recorded in the run directory on resume so
    // spec identifiers stay stable; generate and record them otherwise.
    let specs_dir = dir.join("specs");
    let specset = if specs_dir.join("train.txt").exists() {
        load_specset(&specs_dir, cfg.world.objectives)?
    } else {
        let set = cfg.build_specset().map_err(data)?;
        fs::create_dir_all(&specs_dir).context("creating specs dir")?;
        write_spec_files(&set, &specs_dir)?;
        set
    };

    let world = cfg.build_world().map_err(|e| AppError::Data(e.into()))?;
    let world_path = dir.join("world.json");
    if !world_path.exists() {
        let json = serde_json::to_string_pretty(&crate::specgen::world_json(&world))
            .map_err(anyhow::Error::from)?;
        fs::write(&world_path, json).context("writing world export")?;
    }

    let start = if resume {
        match latest_checkpoint(&dir)? {
            Some((step, path)) => {
                let ck = load_checkpoint(&path)?;
                let agent = Agent::from_checkpoint(&ck, cfg.agent.clone()).map_err(anyhow::Error::from)?;
                eprintln!("resuming from {} at step {step}", path.display());
                RunStart::Resume { agent, step }
            }
            None => {
                return Err(AppError::Data(anyhow::anyhow!(
                    "--resume requested but no checkpoint exists in {}",
                    dir.display()
                )))
            }
        }
    } else {
        RunStart::Fresh
    };

    let mut observer = FileObserver::new(&dir)?;
    observer.progress = true;
    let outcome = run_training(&cfg, &specset, start, &config_text, &mut observer);
    let outcome = match outcome {
        Ok(o) => o,
        Err(TrainError::Numeric { step }) => {
            return Err(AppError::Numeric(format!("non-finite loss at step {step}")))
        }
        Err(e) => return Err(data(e)),
    };
    let final_path = checkpoint_path(&dir, outcome.steps_taken);
    if !final_path.exists() {
        save_checkpoint(&final_path, &outcome.final_checkpoint)?;
    }
    observer.finish()?;
    eprintln!(
        "run complete: {} steps, final checkpoint {}",
        outcome.steps_taken,
        final_path.display()
    );
    Ok(())
}

fn data(e: TrainError) -> AppError {
    AppError::Data(e.into())
}

pub fn load_specset(dir: &Path, n_objectives: usize) -> Result<SpecSet, AppError> {
    let read = |name: &str| -> Result<Vec<morl_core::SpecAst>, AppError> {
        let text = fs::read_to_string(dir.join(name))
            .with_context(|| format!("reading {}/{name}", dir.display()))?;
        speclang::from_lines(&text, n_objectives).map_err(|e| AppError::Data(e.into()))
    };
    let train = read("train.txt")?;
    let test = read("test.txt")?;
    SpecSet::from_asts(n_objectives, train, test).map_err(data)
}
