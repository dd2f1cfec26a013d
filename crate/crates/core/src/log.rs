//! Append-only JSON-lines response log.

use std::collections::{HashMap, HashSet};
use std::fs::{File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LogError {
    #[error("line {line}: {source}")]
    Parse {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("line {line}: field `{field}`: {reason}")]
    Invalid {
        line: usize,
        field: &'static str,
        reason: String,
    },
    #[error(
        "record {index} out of order: seq {seq} after {previous} for student `{student_id}` in bank `{bank_id}`"
    )]
    Unordered {
        index: usize,
        student_id: String,
        bank_id: String,
        seq: u64,
        previous: u64,
    },
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResponseRecord {
    pub student_id: String,
    pub bank_id: String,
    pub item_id: String,
    pub seq: u64,
    /// Index into the item's canonical (unshuffled) answer order.
    pub chosen_index: usize,
    pub correct: bool,
    pub grade_after: f64,
    pub timestamp: DateTime<Utc>,
}

impl ResponseRecord {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("record serializes")
    }

    fn check(&self, line: usize) -> Result<(), LogError> {
        let invalid = |field, reason: &str| LogError::Invalid {
            line,
            field,
            reason: reason.to_string(),
        };
        if self.student_id.is_empty() {
            return Err(invalid("student_id", "empty"));
        }
        if self.bank_id.is_empty() {
            return Err(invalid("bank_id", "empty"));
        }
        if self.item_id.is_empty() {
            return Err(invalid("item_id", "empty"));
        }
        if !(0.0..=1.0).contains(&self.grade_after) {
            return Err(invalid("grade_after", "outside [0, 1]"));
        }
        Ok(())
    }
}

/// Parses and validates a JSON-lines log. Blank lines are skipped; line
/// numbers in errors are 1-based.
pub fn parse_log(reader: impl BufRead) -> Result<Vec<ResponseRecord>, LogError> {
    let mut out = Vec::new();
    for (k, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: ResponseRecord =
            serde_json::from_str(&line).map_err(|source| LogError::Parse { line: k + 1, source })?;
        rec.check(k + 1)?;
        out.push(rec);
    }
    Ok(out)
}

pub fn read_log(path: impl AsRef<Path>) -> Result<Vec<ResponseRecord>, LogError> {
    parse_log(BufReader::new(File::open(path)?))
}

pub fn write_log<'a>(
    mut writer: impl Write,
    records: impl IntoIterator<Item = &'a ResponseRecord>,
) -> io::Result<()> {
    for r in records {
        writeln!(writer, "{}", r.to_json_line())?;
    }
    writer.flush()
}

/// Keeps only each student's first answer to each item.
///
/// Input must have strictly increasing `seq` within every (student, bank)
/// pair; students may interleave. Items are keyed per bank.
pub fn first_exposure_filter<'a, I>(records: I) -> Result<Vec<ResponseRecord>, LogError>
where
    I: IntoIterator<Item = &'a ResponseRecord>,
{
    let mut last_seq: HashMap<(&str, &str), u64> = HashMap::new();
    let mut seen: HashSet<(&str, &str, &str)> = HashSet::new();
    let mut out = Vec::new();
    for (index, r) in records.into_iter().enumerate() {
        let key = (r.student_id.as_str(), r.bank_id.as_str());
        if let Some(&previous) = last_seq.get(&key) {
            if r.seq <= previous {
                return Err(LogError::Unordered {
                    index,
                    student_id: r.student_id.clone(),
                    bank_id: r.bank_id.clone(),
                    seq: r.seq,
                    previous,
                });
            }
        }
        last_seq.insert(key, r.seq);
        if seen.insert((key.0, key.1, r.item_id.as_str())) {
            out.push(r.clone());
        }
    }
    Ok(out)
}

/// Durable append-only log file. Every append is flushed and synced before
/// returning.
#[derive(Debug)]
pub struct LogWriter {
    path: PathBuf,
    file: File,
}

impl LogWriter {
    pub fn open(path: impl AsRef<Path>) -> io::Result<Self> {
        let path = path.as_ref().to_path_buf();
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        Ok(Self { path, file })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append(&mut self, record: &ResponseRecord) -> io::Result<()> {
        let mut line = record.to_json_line();
        line.push('\n');
        self.file.write_all(line.as_bytes())?;
        self.file.sync_data()
    }
}

#[cfg(test)]
pub(crate) fn test_record(student: &str, item: &str, seq: u64, correct: bool) -> ResponseRecord {
    ResponseRecord {
        student_id: student.into(),
        bank_id: "b".into(),
        item_id: item.into(),
        seq,
        chosen_index: if correct { 0 } else { 1 },
        correct,
        grade_after: 0.0,
        timestamp: DateTime::parse_from_rfc3339("2011-09-01T10:00:00Z")
            .unwrap()
            .with_timezone(&Utc),
    }
}
