//! Run directory layout: `run.meta` (the [`RunRecord`] as JSON),
//! `trials.log` (one [`TrialRecord`] per line), `best.config` (labels of the
//! best trial) and, optionally, `traces/trial-NNN.jsonl`.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use super::{RunRecord, TrialRecord};
use crate::pipeline::PipelineTrace;

pub const META_FILE: &str = "run.meta";
pub const TRIALS_FILE: &str = "trials.log";
pub const BEST_FILE: &str = "best.config";

pub struct RunWriter {
    dir: PathBuf,
    trials: BufWriter<File>,
    dump_traces: bool,
}

impl RunWriter {
    pub fn create(dir: &Path, dump_traces: bool) -> std::io::Result<Self> {
        fs::create_dir_all(dir)?;
        if dump_traces {
            fs::create_dir_all(dir.join("traces"))?;
        }
        let trials = BufWriter::new(File::create(dir.join(TRIALS_FILE))?);
        Ok(RunWriter { dir: dir.to_path_buf(), trials, dump_traces })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Appends one trial, flushing so partial runs remain readable.
    pub fn trial(&mut self, record: &TrialRecord, traces: &[PipelineTrace]) -> std::io::Result<()> {
        serde_json::to_writer(&mut self.trials, record)?;
        self.trials.write_all(b"\n")?;
        self.trials.flush()?;
        if self.dump_traces && !traces.is_empty() {
            let mut f = BufWriter::new(File::create(self.dir.join("traces").join(format!("trial-{:03}.jsonl", record.index)))?);
            for t in traces {
                serde_json::to_writer(&mut f, t)?;
                f.write_all(b"\n")?;
            }
            f.flush()?;
        }
        Ok(())
    }

    pub fn finish(self, run: &RunRecord) -> std::io::Result<()> {
        fs::write(self.dir.join(META_FILE), serde_json::to_vec_pretty(run)?)?;
        if let Some(best) = run.best() {
            fs::write(self.dir.join(BEST_FILE), serde_json::to_vec_pretty(&best.labels)?)?;
        }
        Ok(())
    }
}

pub fn load_run(dir: &Path) -> std::io::Result<RunRecord> {
    let bytes = fs::read(dir.join(META_FILE))?;
    serde_json::from_slice(&bytes).map_err(std::io::Error::other)
}
