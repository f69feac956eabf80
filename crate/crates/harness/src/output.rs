//! Result records and CSV/JSON emission.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;

/// JSON summary of one experiment run. `runtime_s` is the only field that
/// differs between identical runs.
#[derive(Debug, Clone, Serialize)]
pub struct ExperimentResult {
    pub experiment_id: String,
    pub config_hash: String,
    pub seed: u64,
    pub runtime_s: f64,
    pub summary: serde_json::Value,
    /// CSV files written next to the summary.
    pub files: Vec<String>,
}

/// Rows of one CSV file. Every row type carries `seed` and `config_hash`.
pub struct CsvFile {
    pub name: String,
    write: Box<dyn Fn(&Path) -> Result<()> + Send + Sync>,
}

impl CsvFile {
    pub fn new<R: Serialize + Send + Sync + 'static>(name: &str, rows: Vec<R>) -> Self {
        Self {
            name: name.to_owned(),
            write: Box::new(move |path| write_csv(path, &rows)),
        }
    }

    pub fn write_to(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join(&self.name);
        (self.write)(&path)?;
        Ok(path)
    }
}

pub fn write_csv<R: Serialize>(path: &Path, rows: &[R]) -> Result<()> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    serde_json::to_writer_pretty(BufWriter::new(file), value)?;
    Ok(())
}
