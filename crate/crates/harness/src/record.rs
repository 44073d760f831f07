//! Run records and the output directory they are written to.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::Array2;

use crate::config::ExperimentConfig;
use crate::error::{HarnessError, Result};

/// Version string written into every run header.
pub fn version_string() -> String {
    format!("cogd v{}", env!("CARGO_PKG_VERSION"))
}

/// Writes `bytes` to a sibling temp file, then renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let name = path
        .file_name()
        .ok_or_else(|| HarnessError::Format(format!("{} has no file name", path.display())))?;
    let tmp = path.with_file_name(format!(".{}.tmp", name.to_string_lossy()));
    let mut f = fs::File::create(&tmp).map_err(|e| HarnessError::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| HarnessError::io(&tmp, e))?;
    f.sync_all().map_err(|e| HarnessError::io(&tmp, e))?;
    drop(f);
    fs::rename(&tmp, path).map_err(|e| HarnessError::io(path, e))
}

/// A numeric trace with named columns.
#[derive(Clone, Debug, PartialEq)]
pub struct RunRecord {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl RunRecord {
    pub fn new(name: impl Into<String>, columns: &[&str]) -> Self {
        RunRecord {
            name: name.into(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        assert_eq!(
            row.len(),
            self.columns.len(),
            "row width differs from the header in {}",
            self.name
        );
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let i = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[i]).collect())
    }

    pub fn to_table(&self) -> Table {
        Table {
            name: self.name.clone(),
            columns: self.columns.clone(),
            rows: self
                .rows
                .iter()
                .map(|r| r.iter().map(|v| format_value(*v)).collect())
                .collect(),
        }
    }

    pub fn from_table(t: &Table) -> Result<Self> {
        let mut rows = Vec::with_capacity(t.rows.len());
        for (i, r) in t.rows.iter().enumerate() {
            let row = r
                .iter()
                .map(|v| {
                    v.parse::<f64>().map_err(|_| {
                        HarnessError::Format(format!(
                            "{}: row {} has non-numeric {v:?}",
                            t.name,
                            i + 1
                        ))
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            rows.push(row);
        }
        Ok(RunRecord {
            name: t.name.clone(),
            columns: t.columns.clone(),
            rows,
        })
    }
}

/// Shortest representation that parses back to the same bits.
pub fn format_value(v: f64) -> String {
    format!("{v}")
}

/// A table of strings, written as CSV with a quoted header row.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(name: impl Into<String>, columns: &[&str]) -> Self {
        Table {
            name: name.into(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        assert_eq!(
            row.len(),
            self.columns.len(),
            "row width differs from the header in {}",
            self.name
        );
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> Vec<u8> {
        let mut header = csv::WriterBuilder::new()
            .quote_style(csv::QuoteStyle::Always)
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(Vec::new());
        header.write_record(&self.columns).expect("in-memory write");
        let mut out = header.into_inner().expect("in-memory flush");
        let mut body = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(Vec::new());
        for r in &self.rows {
            body.write_record(r).expect("in-memory write");
        }
        out.extend(body.into_inner().expect("in-memory flush"));
        out
    }

    pub fn from_csv(name: impl Into<String>, data: &[u8]) -> Result<Self> {
        let name = name.into();
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_reader(data);
        let columns: Vec<String> = rdr
            .headers()
            .map_err(|e| HarnessError::Format(format!("{name}: {e}")))?
            .iter()
            .map(str::to_string)
            .collect();
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| HarnessError::Format(format!("{name}: {e}")))?;
            rows.push(rec.iter().map(str::to_string).collect());
        }
        Ok(Table {
            name,
            columns,
            rows,
        })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let data = fs::read(path).map_err(|e| HarnessError::io(path, e))?;
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        Table::from_csv(name, &data)
    }
}

/// Everything an experiment produces, before it touches the disk.
#[derive(Debug, Default)]
pub struct RunOutput {
    pub records: Vec<RunRecord>,
    pub tables: Vec<Table>,
    /// `(file stem, image in [0, 1])`, saved as 8-bit PGM.
    pub images: Vec<(String, Array2<f64>)>,
    /// `(file name, contents)`.
    pub texts: Vec<(String, String)>,
    /// Final metrics, written as `summary.csv`.
    pub summary: Vec<(String, String)>,
}

impl RunOutput {
    pub fn summarize(&mut self, key: impl Into<String>, value: impl ToString) {
        self.summary.push((key.into(), value.to_string()));
    }

    pub fn record(&self, name: &str) -> Option<&RunRecord> {
        self.records.iter().find(|r| r.name == name)
    }
}

/// Removes the lock file when dropped.
struct Lock(PathBuf);

impl Drop for Lock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.0);
    }
}

fn sibling(dir: &Path, suffix: &str) -> PathBuf {
    let name = dir
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "run".into());
    dir.with_file_name(format!(".{name}.{suffix}"))
}

/// Writes `out` into `dir`. Files are assembled in a staging directory
/// that replaces `dir` only once everything is written; a lock file next
/// to `dir` keeps concurrent runs from sharing it.
pub fn write_run(dir: &Path, cfg: &ExperimentConfig, out: &RunOutput) -> Result<()> {
    let parent = match dir.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    fs::create_dir_all(&parent).map_err(|e| HarnessError::io(&parent, e))?;
    let lock_path = sibling(dir, "lock");
    fs::OpenOptions::new()
        .write(true)
        .create_new(true)
        .open(&lock_path)
        .map_err(|e| HarnessError::io(&lock_path, e))?;
    let _lock = Lock(lock_path);

    let staging = sibling(dir, &format!("staging-{}", std::process::id()));
    if staging.exists() {
        fs::remove_dir_all(&staging).map_err(|e| HarnessError::io(&staging, e))?;
    }
    fs::create_dir(&staging).map_err(|e| HarnessError::io(&staging, e))?;

    let result = (|| -> Result<()> {
        let mut header = format!("# {}\n# seed {}\n", version_string(), cfg.seed);
        header.push_str(&cfg.to_text());
        write_atomic(&staging.join("config.txt"), header.as_bytes())?;
        for r in &out.records {
            write_atomic(
                &staging.join(format!("{}.csv", r.name)),
                &r.to_table().to_csv(),
            )?;
        }
        for t in &out.tables {
            write_atomic(&staging.join(format!("{}.csv", t.name)), &t.to_csv())?;
        }
        for (name, img) in &out.images {
            crate::pgm::save_pgm(img, &staging.join(format!("{name}.pgm")), 255)?;
        }
        for (name, text) in &out.texts {
            write_atomic(&staging.join(name), text.as_bytes())?;
        }
        let mut summary = Table::new("summary", &["key", "value"]);
        for (k, v) in &out.summary {
            summary.push(vec![k.clone(), v.clone()]);
        }
        write_atomic(&staging.join("summary.csv"), &summary.to_csv())
    })();
    if let Err(e) = result {
        let _ = fs::remove_dir_all(&staging);
        return Err(e);
    }

    if dir.exists() {
        fs::remove_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    }
    fs::rename(&staging, dir).map_err(|e| HarnessError::io(dir, e))
}
