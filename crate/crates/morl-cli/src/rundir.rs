//! Run-directory layout, locking, checkpoint persistence, and artifact
//! provenance headers.
//!
//! A run directory holds `config.toml` (the effective configuration), the
//! append-only `diagnostics.tsv`, `specs/train.txt` + `specs/test.txt`,
//! `world.json`, and `checkpoints/ckpt_<step>.json`. A `.lock` file keeps a
//! directory owned by at most one writer.

use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use morl_core::neural::Checkpoint;
use morl_core::trainer::RunObserver;
use sha2::{Digest, Sha256};

use crate::RUN_ROOT_ENV;

/// Resolves a run directory against `$MORL_RUN_ROOT` when relative.
pub fn resolve_run_dir(dir: &Path) -> PathBuf {
    if dir.is_relative() {
        if let Ok(root) = std::env::var(RUN_ROOT_ENV) {
            return Path::new(&root).join(dir);
        }
    }
    dir.to_path_buf()
}

/// Exclusive-creation lock file, removed on drop.
pub struct LockGuard {
    path: PathBuf,
}

impl LockGuard {
    pub fn acquire(dir: &Path) -> Result<Self> {
        let path = dir.join(".lock");
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(Self { path })
            }
            Err(e) => Err(anyhow!(
                "run directory {} is locked ({}); remove .lock if the owner is gone",
                dir.display(),
                e
            )),
        }
    }
}

impl Drop for LockGuard {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

/// Prepares a run directory. A directory that already holds run output is
/// refused unless `resume` is set; nothing is ever silently overwritten.
pub fn prepare(dir: &Path, resume: bool) -> Result<LockGuard> {
    fs::create_dir_all(dir)?;
    let has_output = dir.join("diagnostics.tsv").exists();
    if has_output && !resume {
        bail!(
            "run directory {} already contains a run; pass --resume to continue it",
            dir.display()
        );
    }
    if !has_output && resume {
        bail!("nothing to resume in {}", dir.display());
    }
    LockGuard::acquire(dir)
}

pub fn checkpoint_path(dir: &Path, step: u64) -> PathBuf {
    dir.join("checkpoints").join(format!("ckpt_{step:09}.json"))
}

pub fn save_checkpoint(path: &Path, ck: &Checkpoint) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    serde_json::to_writer(BufWriter::new(file), ck)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let data = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(serde_json::from_slice(&data)?)
}

/// Latest checkpoint file in a run directory, by step number.
pub fn latest_checkpoint(dir: &Path) -> Result<Option<(u64, PathBuf)>> {
    let ckdir = dir.join("checkpoints");
    if !ckdir.exists() {
        return Ok(None);
    }
    let mut best: Option<(u64, PathBuf)> = None;
    for entry in fs::read_dir(&ckdir)? {
        let path = entry?.path();
        let Some(name) = path.file_name().and_then(|n| n.to_str()) else { continue };
        let Some(step) = name
            .strip_prefix("ckpt_")
            .and_then(|s| s.strip_suffix(".json"))
            .and_then(|s| s.parse::<u64>().ok())
        else {
            continue;
        };
        if best.as_ref().map_or(true, |(b, _)| step > *b) {
            best = Some((step, path));
        }
    }
    Ok(best)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    Ok(sha256_hex(&fs::read(path)?))
}

/// Provenance header embedded at the top of every emitted artifact.
pub fn provenance_header(kind: &str, checkpoint_sha: &str, ck: &Checkpoint) -> String {
    let mut out = String::new();
    out.push_str(&format!("# morl {kind} v1\n"));
    out.push_str(&format!("# checkpoint-sha256: {checkpoint_sha}\n"));
    out.push_str(&format!("# checkpoint-step: {}\n", ck.env_steps));
    out.push_str(&format!("# goal-mode: {}\n", ck.goal_mode));
    for line in ck.config_text.lines() {
        out.push_str("# config: ");
        out.push_str(line);
        out.push('\n');
    }
    out
}

/// Streams diagnostics rows to `diagnostics.tsv` and checkpoints to
/// `checkpoints/`, flushing rows as they arrive.
pub struct FileObserver {
    dir: PathBuf,
    diag: BufWriter<File>,
    pub last_error: Option<anyhow::Error>,
    pub progress: bool,
}

impl FileObserver {
    pub fn new(dir: &Path) -> Result<Self> {
        let diag_path = dir.join("diagnostics.tsv");
        let file = OpenOptions::new().create(true).append(true).open(&diag_path)?;
        Ok(Self { dir: dir.to_path_buf(), diag: BufWriter::new(file), last_error: None, progress: false })
    }

    pub fn finish(mut self) -> Result<()> {
        self.diag.flush()?;
        if let Some(e) = self.last_error.take() {
            return Err(e);
        }
        Ok(())
    }
}

impl RunObserver for FileObserver {
    fn diag_row(&mut self, row: &str) {
        if writeln!(self.diag, "{row}").is_err() && self.last_error.is_none() {
            self.last_error = Some(anyhow!("failed writing diagnostics row"));
        }
    }

    fn checkpoint(&mut self, step: u64, ck: &Checkpoint) {
        let path = checkpoint_path(&self.dir, step);
        if let Err(e) = save_checkpoint(&path, ck) {
            if self.last_error.is_none() {
                self.last_error = Some(e);
            }
        }
    }

    fn evaluated(&mut self, step: u64, mean: Option<f64>) -> bool {
        let _ = self.diag.flush();
        if self.progress {
            match mean {
                Some(m) => eprintln!("step {step}: eval mean score {m:.4}"),
                None => eprintln!("step {step}: eval (all panel goals degenerate)"),
            }
        }
        false
    }
}
