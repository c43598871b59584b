//! Run directories.
//!
//! ```text
//! config.txt               full configuration of the run
//! log.jsonl                one JSON object per optimizer step
//! checkpoints/step-N.ulckpt
//! record.json              run record plus the final bitrate
//! metrics.csv              metric,value,std_error,n,seed,checkpoint
//! samples/                 PNGs and manifest.json per sampling command
//! ```
//!
//! A run directory is self-sufficient: the config inside it names the
//! dataset, and every checkpoint carries its model config.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use unilat_core::metrics::BitrateReport;
use unilat_core::nn::ModelBundle;
use unilat_core::train::{Observer, RunRecord, StepRecord, TrainConfig};

use crate::checkpoint;
use crate::config::RunConfig;
use crate::error::{Error, Result};

pub const CONFIG: &str = "config.txt";
pub const LOG: &str = "log.jsonl";
pub const RECORD: &str = "record.json";
pub const METRICS: &str = "metrics.csv";
pub const CHECKPOINTS: &str = "checkpoints";
pub const SAMPLES: &str = "samples";

/// Contents of `record.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunFile {
    pub record: RunRecord,
    pub bitrate: Option<BitrateReport>,
    /// Run directory whose encoder this run was built on (stage two).
    pub parent: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct RunDir {
    root: PathBuf,
}

impl RunDir {
    pub fn open(root: &Path) -> Result<Self> {
        if !root.join(CONFIG).is_file() {
            return Err(Error::Usage(format!("{} is not a run directory (no {CONFIG})", root.display())));
        }
        Ok(Self { root: root.into() })
    }

    /// Create the directory for a new run; with `overwrite`, previous contents are removed.
    pub fn create(root: &Path, overwrite: bool) -> Result<Self> {
        if overwrite && root.exists() {
            std::fs::remove_dir_all(root).map_err(Error::io(root))?;
        }
        let ck = root.join(CHECKPOINTS);
        std::fs::create_dir_all(&ck).map_err(Error::io(&ck))?;
        Ok(Self { root: root.into() })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn is_complete(root: &Path) -> bool {
        root.join(RECORD).is_file()
    }

    pub fn config(&self) -> Result<RunConfig> {
        RunConfig::load(&self.path(CONFIG))
    }

    pub fn checkpoint_path(&self, step: usize) -> PathBuf {
        self.root.join(CHECKPOINTS).join(format!("step-{step:08}.ulckpt"))
    }

    /// Checkpoint with the highest step number.
    pub fn latest_checkpoint(&self) -> Result<PathBuf> {
        let dir = self.path(CHECKPOINTS);
        let mut best: Option<(usize, PathBuf)> = None;
        for e in std::fs::read_dir(&dir).map_err(Error::io(&dir))? {
            let p = e.map_err(Error::io(&dir))?.path();
            let step = p
                .file_name()
                .and_then(|n| n.to_str())
                .and_then(|n| n.strip_prefix("step-")?.strip_suffix(".ulckpt")?.parse::<usize>().ok());
            if let Some(s) = step {
                if best.as_ref().map_or(true, |(b, _)| s > *b) {
                    best = Some((s, p));
                }
            }
        }
        best.map(|(_, p)| p).ok_or_else(|| Error::Usage(format!("no checkpoints in {}", dir.display())))
    }

    pub fn load_latest(&self) -> Result<(ModelBundle, checkpoint::Header)> {
        checkpoint::load(&self.latest_checkpoint()?)
    }

    pub fn run_file(&self) -> Result<RunFile> {
        let p = self.path(RECORD);
        let text = std::fs::read_to_string(&p).map_err(Error::io(&p))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn write_run_file(&self, f: &RunFile) -> Result<()> {
        write_json(&self.path(RECORD), f)
    }
}

pub fn write_json<T: Serialize>(path: &Path, v: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(v)?;
    std::fs::write(path, text + "\n").map_err(Error::io(path))
}

/// Writes the step log and checkpoints of a training run.
pub struct RunObserver<'a> {
    dir: &'a RunDir,
    train: TrainConfig,
    log: BufWriter<File>,
}

impl<'a> RunObserver<'a> {
    pub fn new(dir: &'a RunDir, train: &TrainConfig) -> Result<Self> {
        let p = dir.path(LOG);
        let f = File::create(&p).map_err(Error::io(&p))?;
        Ok(Self { dir, train: train.clone(), log: BufWriter::new(f) })
    }

    pub fn finish(mut self) -> Result<()> {
        self.log.flush().map_err(Error::io(self.dir.path(LOG)))
    }
}

fn external(e: Error) -> unilat_core::Error {
    unilat_core::Error::Unsupported(e.to_string())
}

impl Observer for RunObserver<'_> {
    fn on_step(&mut self, record: &StepRecord) -> unilat_core::Result<()> {
        let line = serde_json::to_string(record).map_err(|e| external(e.into()))?;
        writeln!(self.log, "{line}").map_err(|e| external(Error::io(self.dir.path(LOG))(e)))
    }

    fn on_checkpoint(&mut self, step: usize, bundle: &ModelBundle) -> unilat_core::Result<()> {
        checkpoint::save(&self.dir.checkpoint_path(step), bundle, Some(&self.train)).map_err(external)
    }
}
