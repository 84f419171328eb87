//! Ingestion of the edited-headline ratings dataset.
//!
//! Input files are UTF-8 CSV with a header row and columns
//! `id,original,edit,grades,meanGrade`. The `original` column contains one
//! edit span delimited by angle-bracket markers (e.g. `<dress/>`); the
//! edited headline is constructed by substituting the span with the `edit`
//! word. `grades` is a concatenated digit string, one 0-3 rating per
//! annotator. Parsed splits can be cached as canonical JSON for fast
//! reload.

use std::collections::HashSet;
use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One edited news headline with its crowd funniness ratings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadlineRecord {
    pub id: String,
    pub original: String,
    pub edit_word: String,
    pub edited_text: String,
    /// Individual annotator ratings, each in 0..=3. Empty for unlabeled rows.
    pub grades: Vec<u8>,
    /// Arithmetic mean of `grades` (0.0 when no ratings are present).
    pub mean_grade: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitName {
    Train,
    Validation,
    Test,
}

impl fmt::Display for SplitName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SplitName::Train => write!(f, "train"),
            SplitName::Validation => write!(f, "validation"),
            SplitName::Test => write!(f, "test"),
        }
    }
}

/// An ordered collection of records, kept in file order.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub name: SplitName,
    pub records: Vec<HeadlineRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SplitStats {
    pub count: usize,
    pub mean_rating: f64,
    pub min_rating: f64,
    pub max_rating: f64,
}

/// Replace the single `<…/>` span in `original` with `edit`.
fn substitute_edit(original: &str, edit: &str) -> std::result::Result<String, String> {
    let open = original
        .find('<')
        .ok_or_else(|| "no edit span in original".to_string())?;
    let close_rel = original[open..]
        .find("/>")
        .ok_or_else(|| "unterminated edit span in original".to_string())?;
    let mut edited = String::with_capacity(original.len() + edit.len());
    edited.push_str(&original[..open]);
    edited.push_str(edit);
    edited.push_str(&original[open + close_rel + 2..]);
    if let Some(extra) = edited.find('<') {
        if edited[extra..].contains("/>") {
            return Err("multiple edit spans in original".to_string());
        }
    }
    Ok(edited)
}

fn parse_grades(raw: &str) -> std::result::Result<Vec<u8>, String> {
    raw.trim()
        .chars()
        .map(|c| match c {
            '0'..='3' => Ok(c as u8 - b'0'),
            '4'..='9' => Err(format!("grade digit '{c}' outside 0..=3")),
            _ => Err(format!("non-digit grade character '{c}'")),
        })
        .collect()
}

/// Parse one dataset CSV into a split. Records keep file order; ids must be
/// unique within the file.
pub fn parse_csv(path: impl AsRef<Path>, name: SplitName) -> Result<DatasetSplit> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(BufReader::new(file));

    let headers = reader
        .headers()
        .map_err(|e| Error::parse(0, format!("cannot read header: {e}")))?
        .clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let id_col = col("id").ok_or_else(|| Error::parse(0, "missing column `id`"))?;
    let original_col =
        col("original").ok_or_else(|| Error::parse(0, "missing column `original`"))?;
    let edit_col = col("edit").ok_or_else(|| Error::parse(0, "missing column `edit`"))?;
    let grades_col = col("grades");
    let mean_col = col("meanGrade");

    let mut records = Vec::new();
    let mut seen_ids = HashSet::new();
    for (i, row) in reader.records().enumerate() {
        let row_no = i + 1;
        let row = row.map_err(|e| Error::parse(row_no, format!("bad csv record: {e}")))?;
        let field = |idx: usize| row.get(idx).unwrap_or("");

        let id = field(id_col).to_string();
        if !seen_ids.insert(id.clone()) {
            return Err(Error::parse(row_no, format!("duplicate id `{id}`")));
        }
        let original = field(original_col).to_string();
        let edit_word = field(edit_col).trim().to_string();
        let edited_text =
            substitute_edit(&original, &edit_word).map_err(|msg| Error::parse(row_no, msg))?;

        let grades = match grades_col {
            Some(c) => parse_grades(field(c)).map_err(|msg| Error::parse(row_no, msg))?,
            None => Vec::new(),
        };
        let file_mean = match mean_col {
            Some(c) if !field(c).trim().is_empty() => Some(
                field(c)
                    .trim()
                    .parse::<f64>()
                    .map_err(|e| Error::parse(row_no, format!("bad meanGrade: {e}")))?,
            ),
            _ => None,
        };

        let mean_grade = if grades.is_empty() {
            file_mean.unwrap_or(0.0)
        } else {
            let computed = grades.iter().map(|&g| f64::from(g)).sum::<f64>() / grades.len() as f64;
            if let Some(m) = file_mean {
                if (m - computed).abs() > 1e-6 {
                    return Err(Error::parse(
                        row_no,
                        format!("meanGrade {m} disagrees with mean of grades {computed}"),
                    ));
                }
            }
            computed
        };
        if !(0.0..=3.0).contains(&mean_grade) {
            return Err(Error::parse(
                row_no,
                format!("mean_grade {mean_grade} outside [0, 3]"),
            ));
        }

        records.push(HeadlineRecord {
            id,
            original,
            edit_word,
            edited_text,
            grades,
            mean_grade,
        });
    }

    Ok(DatasetSplit { name, records })
}

/// Count and rating summary of a split.
pub fn split_stats(split: &DatasetSplit) -> Result<SplitStats> {
    if split.records.is_empty() {
        return Err(Error::Domain(format!("split {} is empty", split.name)));
    }
    let count = split.records.len();
    let mut sum = 0.0;
    let mut min = f64::INFINITY;
    let mut max = f64::NEG_INFINITY;
    for r in &split.records {
        sum += r.mean_grade;
        min = min.min(r.mean_grade);
        max = max.max(r.mean_grade);
    }
    Ok(SplitStats {
        count,
        mean_rating: sum / count as f64,
        min_rating: min,
        max_rating: max,
    })
}

impl DatasetSplit {
    /// Write the canonical JSON cache: a compact array of record objects.
    pub fn save_cache(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        serde_json::to_writer(BufWriter::new(file), &self.records)?;
        Ok(())
    }

    /// Reload a split from its JSON cache.
    pub fn load_cache(path: impl AsRef<Path>, name: SplitName) -> Result<DatasetSplit> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let records: Vec<HeadlineRecord> = serde_json::from_reader(BufReader::new(file))?;
        let mut seen = HashSet::new();
        for r in &records {
            if !seen.insert(r.id.as_str()) {
                return Err(Error::Domain(format!("duplicate id `{}` in cache", r.id)));
            }
        }
        Ok(DatasetSplit { name, records })
    }

    /// Load either a CSV file or a `.json` cache, decided by extension.
    pub fn load_auto(path: impl AsRef<Path>, name: SplitName) -> Result<DatasetSplit> {
        let path = path.as_ref();
        match path.extension().and_then(|e| e.to_str()) {
            Some("json") => DatasetSplit::load_cache(path, name),
            _ => parse_csv(path, name),
        }
    }

    /// Deterministic subsample keeping file order. Records are taken
    /// systematically along the rating order so the kept subset preserves
    /// the split's rating distribution. `fraction` in (0, 1]; 1.0 returns
    /// a full copy.
    pub fn subsample(&self, fraction: f64) -> Result<DatasetSplit> {
        if !(fraction > 0.0 && fraction <= 1.0) {
            return Err(Error::Domain(format!(
                "subsample fraction {fraction} outside (0, 1]"
            )));
        }
        if fraction == 1.0 || self.records.is_empty() {
            return Ok(self.clone());
        }
        let n = self.records.len();
        let keep = ((n as f64 * fraction).round() as usize).clamp(1, n);
        let mut by_rating: Vec<usize> = (0..n).collect();
        by_rating.sort_by(|&a, &b| {
            self.records[a]
                .mean_grade
                .total_cmp(&self.records[b].mean_grade)
                .then(a.cmp(&b))
        });
        let mut idx: Vec<usize> = (0..keep)
            .map(|i| by_rating[(i * n + n / 2) / keep])
            .collect();
        idx.sort_unstable();
        idx.dedup();
        Ok(DatasetSplit {
            name: self.name,
            records: idx.into_iter().map(|i| self.records[i].clone()).collect(),
        })
    }
}
