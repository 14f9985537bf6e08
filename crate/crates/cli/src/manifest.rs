//! Dataset manifests: CSV with header `reference,distorted,score,tag`.
//! Relative paths resolve against the manifest's directory.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::Deserialize;

/// Which direction of the subjective scale means better quality.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, clap::ValueEnum, serde::Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Polarity {
    /// MOS-style ratings.
    #[default]
    HigherIsBetter,
    /// DMOS-style ratings.
    LowerIsBetter,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub reference: PathBuf,
    pub distorted: PathBuf,
    pub score: f64,
    pub tag: String,
}

#[derive(Debug, Clone)]
pub struct DatasetManifest {
    pub name: String,
    pub polarity: Polarity,
    pub records: Vec<Record>,
}

#[derive(Debug, Deserialize)]
struct Row {
    reference: String,
    distorted: String,
    score: f64,
    tag: String,
}

fn resolve(base: &Path, p: &str) -> PathBuf {
    let p = Path::new(p);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

impl DatasetManifest {
    pub fn load(path: &Path, polarity: Polarity) -> anyhow::Result<Self> {
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_path(path)
            .with_context(|| format!("reading manifest {}", path.display()))?;
        let headers = reader.headers()?.clone();
        if headers.iter().collect::<Vec<_>>() != ["reference", "distorted", "score", "tag"] {
            bail!("manifest header must be `reference,distorted,score,tag`, found `{}`", headers.iter().collect::<Vec<_>>().join(","));
        }
        let mut records = Vec::new();
        for (line, row) in reader.deserialize::<Row>().enumerate() {
            let row = row.with_context(|| format!("manifest row {}", line + 2))?;
            if !row.score.is_finite() {
                bail!("manifest row {}: score is not finite", line + 2);
            }
            records.push(Record {
                reference: resolve(base, &row.reference),
                distorted: resolve(base, &row.distorted),
                score: row.score,
                tag: row.tag,
            });
        }
        if records.is_empty() {
            bail!("manifest {} has no records", path.display());
        }
        for r in &records {
            for p in [&r.reference, &r.distorted] {
                if !p.is_file() {
                    return Err(std::io::Error::new(
                        std::io::ErrorKind::NotFound,
                        format!("manifest references missing file {}", p.display()),
                    )
                    .into());
                }
            }
        }
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "dataset".into());
        Ok(Self { name, polarity, records })
    }

    /// Unique reference paths in first-appearance order.
    pub fn references(&self) -> Vec<PathBuf> {
        let mut seen = std::collections::HashSet::new();
        self.records
            .iter()
            .filter(|r| seen.insert(r.reference.clone()))
            .map(|r| r.reference.clone())
            .collect()
    }

    /// Distortion tags in first-appearance order.
    pub fn tags(&self) -> Vec<String> {
        let mut seen = std::collections::HashSet::new();
        self.records
            .iter()
            .filter(|r| seen.insert(r.tag.clone()))
            .map(|r| r.tag.clone())
            .collect()
    }

    /// Subjective score oriented so that higher always means better.
    pub fn oriented_score(&self, record: &Record) -> f64 {
        match self.polarity {
            Polarity::HigherIsBetter => record.score,
            Polarity::LowerIsBetter => -record.score,
        }
    }
}
