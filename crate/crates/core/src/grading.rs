//! The lecture grading rule and per-student grade state.
//!
//! A correct answer earns one point and a wrong answer costs half a point.
//! Only the last eight answers in a bank count. The normalized grade divides
//! the raw score by the eight-point maximum and clamps to `[0, 1]`, also when
//! fewer than eight answers exist.

use std::collections::BTreeMap;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::bank::{BankError, ItemBank};
use crate::log::ResponseRecord;

/// Number of most recent answers that enter the grade.
pub const GRADE_WINDOW: usize = 8;
pub const CORRECT_POINTS: f64 = 1.0;
pub const WRONG_POINTS: f64 = -0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grade {
    pub raw_score: f64,
    pub grade: f64,
}

impl Default for Grade {
    fn default() -> Self {
        Self {
            raw_score: 0.0,
            grade: 0.0,
        }
    }
}

/// Raw and normalized grade from a chronological list of outcomes.
pub fn lecture_grade<I>(outcomes: I) -> Grade
where
    I: IntoIterator<Item = bool>,
    I::IntoIter: DoubleEndedIterator,
{
    let raw_score: f64 = outcomes
        .into_iter()
        .rev()
        .take(GRADE_WINDOW)
        .map(|correct| if correct { CORRECT_POINTS } else { WRONG_POINTS })
        .sum();
    let grade = (raw_score / GRADE_WINDOW as f64).clamp(0.0, 1.0);
    Grade { raw_score, grade }
}

/// One student's answer history and grade in one bank.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BankProgress {
    pub history: Vec<(String, bool)>,
    pub raw_score: f64,
    pub grade: f64,
    pub last_seq: u64,
}

impl BankProgress {
    pub fn current(&self) -> Grade {
        Grade {
            raw_score: self.raw_score,
            grade: self.grade,
        }
    }

    pub fn answered(&self) -> usize {
        self.history.len()
    }

    pub(crate) fn push(&mut self, item_id: &str, correct: bool, seq: u64) -> Grade {
        self.history.push((item_id.to_string(), correct));
        self.last_seq = seq;
        let g = lecture_grade(self.history.iter().map(|(_, c)| *c));
        self.raw_score = g.raw_score;
        self.grade = g.grade;
        g
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudentState {
    pub student_id: String,
    pub banks: BTreeMap<String, BankProgress>,
}

impl StudentState {
    pub fn new(student_id: impl Into<String>) -> Self {
        Self {
            student_id: student_id.into(),
            banks: BTreeMap::new(),
        }
    }

    pub fn progress(&self, bank_id: &str) -> Option<&BankProgress> {
        self.banks.get(bank_id)
    }

    /// Current grade in a bank; zero when the student has not started it.
    pub fn grade(&self, bank_id: &str) -> Grade {
        self.banks
            .get(bank_id)
            .map(BankProgress::current)
            .unwrap_or_default()
    }
}

/// Grades one answer: appends to the history, bumps the item counters and
/// returns the log record to persist.
pub fn record_response(
    state: &mut StudentState,
    bank: &mut ItemBank,
    item_id: &str,
    chosen_index: usize,
    timestamp: DateTime<Utc>,
) -> Result<ResponseRecord, BankError> {
    let item = bank
        .item_mut(item_id)
        .ok_or_else(|| BankError::UnknownItem(item_id.to_string()))?;
    let correct = item.is_correct(chosen_index)?;
    item.count_answer(correct);

    let progress = state.banks.entry(bank.bank_id.clone()).or_default();
    let seq = progress.last_seq + 1;
    let grade = progress.push(item_id, correct, seq);

    Ok(ResponseRecord {
        student_id: state.student_id.clone(),
        bank_id: bank.bank_id.clone(),
        item_id: item_id.to_string(),
        seq,
        chosen_index,
        correct,
        grade_after: grade.grade,
        timestamp,
    })
}
