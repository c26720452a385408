//! Output directories, JSON artifacts and the run metadata sidecar.

use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::config::RunConfig;

pub fn write_json<T: Serialize + ?Sized>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let path = path.as_ref();
    let text = serde_json::to_string_pretty(value)? + "\n";
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn read_json<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn unix_millis() -> u128 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis())
        .unwrap_or(0)
}

/// The per-command output directory.
pub struct Workspace {
    dir: PathBuf,
    command: &'static str,
    started_ms: u128,
    clock: Instant,
}

impl Workspace {
    /// Creates `<output_dir>/<subdir>` and records the effective config in it.
    pub fn open(cfg: &RunConfig, command: &'static str, subdir: &str) -> Result<Self> {
        let dir = cfg.output_dir.join(subdir);
        std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        write_json(dir.join("effective_config.json"), cfg)?;
        Ok(Workspace {
            dir,
            command,
            started_ms: unix_millis(),
            clock: Instant::now(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Writes the sidecar holding everything that varies between identical runs.
    pub fn finish(self, jobs: usize) -> Result<()> {
        let meta = serde_json::json!({
            "command": self.command,
            "argv": std::env::args().collect::<Vec<_>>(),
            "started_unix_ms": self.started_ms,
            "finished_unix_ms": unix_millis(),
            "elapsed_secs": self.clock.elapsed().as_secs_f64(),
            "jobs": jobs,
            "version": crate::LONG_VERSION,
        });
        write_json(self.dir.join("run_metadata.json"), &meta)
    }
}
