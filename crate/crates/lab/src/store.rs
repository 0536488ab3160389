//! Output directory layout, the per-trial cache that makes runs resumable, and
//! the timing sidecar.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::plan::{ExperimentKind, Plan};

pub const SUMMARY: &str = "summary.json";
pub const TRIALS: &str = "trials.csv";
pub const META: &str = "meta.json";

/// What every `summary.json` carries besides the experiment result.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary<T> {
    pub kind: ExperimentKind,
    pub plan_id: String,
    pub seed: u64,
    pub plan: Plan,
    pub result: T,
}

/// Kind-independent view of a summary, for `report`.
#[derive(Debug, Deserialize)]
pub struct SummaryHeader {
    pub kind: ExperimentKind,
    pub plan_id: String,
    pub seed: u64,
}

/// Timestamps and wall times; never compared between runs.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct Meta {
    pub kind: Option<ExperimentKind>,
    pub plan_id: String,
    pub started_unix: f64,
    pub finished_unix: f64,
    pub wall_seconds: f64,
    pub threads: usize,
    pub trials_computed: usize,
    pub trials_resumed: usize,
    pub trial_wall_seconds: Vec<(String, f64)>,
    pub notes: Vec<String>,
}

pub fn unix_now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0)
}

/// Cached result of one trial together with its wall time.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Cached<T> {
    pub wall_seconds: f64,
    pub record: T,
}

#[derive(Clone, Debug)]
pub struct RunDir {
    root: PathBuf,
    cache: PathBuf,
}

impl RunDir {
    /// Creates `root` with its `series/` and cache directories for `plan`.
    pub fn create(root: &Path, plan: &Plan) -> Result<Self> {
        let cache = root.join(".cache").join(plan.id());
        for dir in [root.to_path_buf(), root.join("series"), cache.clone()] {
            fs::create_dir_all(&dir).map_err(LabError::io(&dir))?;
        }
        Ok(Self { root: root.to_path_buf(), cache })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    /// Relative path of a trial's time series.
    pub fn series_name(id: &str) -> String {
        format!("series/{id}.csv")
    }

    pub fn load_cached<T: DeserializeOwned>(&self, id: &str) -> Option<Cached<T>> {
        let text = fs::read_to_string(self.cache.join(format!("{id}.json"))).ok()?;
        serde_json::from_str(&text).ok()
    }

    /// Writes the cache entry atomically so an interrupted run never leaves a torn record.
    pub fn store_cached<T: Serialize>(&self, id: &str, entry: &Cached<T>) -> Result<()> {
        let path = self.cache.join(format!("{id}.json"));
        let tmp = self.cache.join(format!("{id}.json.tmp"));
        let text = serde_json::to_string(entry).map_err(|e| LabError::Format(e.to_string()))?;
        fs::write(&tmp, text).map_err(LabError::io(&tmp))?;
        fs::rename(&tmp, &path).map_err(LabError::io(&path))
    }

    pub fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value).map_err(|e| LabError::Format(e.to_string()))?;
        text.push('\n');
        self.write_text(name, &text)
    }

    pub fn write_text(&self, name: &str, text: &str) -> Result<()> {
        let path = self.path(name);
        fs::write(&path, text).map_err(LabError::io(&path))
    }

    /// Writes a CSV with `header` and one row per item.
    pub fn write_csv<R, I>(&self, name: &str, header: &[&str], rows: I) -> Result<()>
    where
        I: IntoIterator<Item = R>,
        R: IntoIterator,
        R::Item: AsRef<[u8]>,
    {
        let path = self.path(name);
        let err = |e: csv::Error| LabError::Format(format!("{}: {e}", path.display()));
        let mut w = csv::Writer::from_path(&path).map_err(err)?;
        w.write_record(header).map_err(err)?;
        for row in rows {
            w.write_record(row).map_err(err)?;
        }
        w.flush().map_err(LabError::io(&path))
    }
}

pub fn read_summary_header(dir: &Path) -> Result<SummaryHeader> {
    let path = dir.join(SUMMARY);
    let text = fs::read_to_string(&path).map_err(LabError::io(&path))?;
    serde_json::from_str(&text).map_err(|e| LabError::Format(format!("{}: {e}", path.display())))
}

/// Reads a CSV into a header and string rows.
pub fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let err = |e: csv::Error| LabError::Format(format!("{}: {e}", path.display()));
    let mut r = csv::Reader::from_path(path).map_err(err)?;
    let header = r.headers().map_err(err)?.iter().map(String::from).collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        rows.push(rec.map_err(err)?.iter().map(String::from).collect());
    }
    Ok((header, rows))
}

/// Column `name` of a CSV read with [`read_csv`], parsed as `f64`.
pub fn column(header: &[String], rows: &[Vec<String>], name: &str) -> Result<Vec<f64>> {
    let k = header.iter().position(|h| h == name).ok_or_else(|| LabError::Format(format!("no column {name}")))?;
    rows.iter().map(|row| row[k].parse::<f64>().map_err(|e| LabError::Format(format!("column {name}: {e}")))).collect()
}

/// Shortest round-trip decimal of a float, as used in every CSV.
pub fn num(x: f64) -> String {
    x.to_string()
}
