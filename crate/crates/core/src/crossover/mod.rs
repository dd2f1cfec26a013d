//! Randomized crossover experiments analyzed with a random-intercept linear
//! mixed model.
//!
//! Scores are modeled as fixed effects for treatment, math background, their
//! interaction and exam, plus a per-student random intercept. Fixed effects
//! use treatment coding against traditional homework, weak background and
//! exam 1.

mod design;
mod elimination;
mod lmm;

use std::collections::HashSet;
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use design::{design_matrix, Design, INTERACTION_COLUMN, INTERCEPT, MATH_COLUMN, TREATMENT_COLUMN};
pub use elimination::{
    backward_eliminate, lrt_term, treatment_ci, wald_interval, wald_p_value, Elimination, EliminationStep,
};
pub use lmm::{fit_lmm, profile_at, LmmFit, ProfilePoint, RandomIntercepts, LAMBDA_MAX};

use crate::stats::StatsError;

pub const N_EXAMS: u8 = 4;

#[derive(Debug, Error)]
pub enum CrossoverError {
    #[error("no exam records")]
    NoRecords,
    #[error("roster is empty")]
    EmptyRoster,
    #[error("unknown term `{0}` (expected treatment, math, interaction or exam)")]
    UnknownTerm(String),
    #[error("record {index}: {reason}")]
    InvalidRecord { index: usize, reason: String },
    #[error("fixed-effect design is rank deficient")]
    RankDeficient,
    #[error("{rows} observations cannot identify {params} fixed effects")]
    TooFewRows { rows: usize, params: usize },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("fixed effects fit the scores exactly; residual variance is zero")]
    ZeroResidual,
    #[error("models are not nested: {0}")]
    NotNested(String),
    #[error("fit has no treatment coefficient")]
    TreatmentAbsent,
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error("exam csv: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Treatment {
    Tutorweb,
    Traditional,
}

impl Treatment {
    pub fn other(self) -> Self {
        match self {
            Treatment::Tutorweb => Treatment::Traditional,
            Treatment::Traditional => Treatment::Tutorweb,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MathBackground {
    Strong,
    Weak,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExamRecord {
    pub student_id: String,
    pub exam: u8,
    pub treatment: Treatment,
    pub math: MathBackground,
    pub score: f64,
}

/// Fixed-effect terms of the exam-score model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Term {
    Treatment,
    Math,
    Interaction,
    Exam,
}

impl Term {
    pub const ALL: [Term; 4] = [Term::Treatment, Term::Math, Term::Interaction, Term::Exam];
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Term::Treatment => "treatment",
            Term::Math => "math",
            Term::Interaction => "interaction",
            Term::Exam => "exam",
        })
    }
}

impl FromStr for Term {
    type Err = CrossoverError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "treatment" => Ok(Term::Treatment),
            "math" => Ok(Term::Math),
            "interaction" => Ok(Term::Interaction),
            "exam" => Ok(Term::Exam),
            other => Err(CrossoverError::UnknownTerm(other.to_string())),
        }
    }
}

pub fn validate_records(records: &[ExamRecord]) -> Result<(), CrossoverError> {
    if records.is_empty() {
        return Err(CrossoverError::NoRecords);
    }
    let mut seen = HashSet::new();
    for (index, r) in records.iter().enumerate() {
        let invalid = |reason: String| CrossoverError::InvalidRecord { index, reason };
        if r.student_id.is_empty() {
            return Err(invalid("empty student id".into()));
        }
        if !(1..=N_EXAMS).contains(&r.exam) {
            return Err(invalid(format!("exam {} outside 1..={N_EXAMS}", r.exam)));
        }
        if !r.score.is_finite() {
            return Err(invalid(format!("score {} is not finite", r.score)));
        }
        if !seen.insert((r.student_id.as_str(), r.exam)) {
            return Err(invalid(format!(
                "second record for student `{}` on exam {}",
                r.student_id, r.exam
            )));
        }
    }
    Ok(())
}

/// Reads `student_id,exam,treatment,math,score` rows.
pub fn read_exams(reader: impl Read) -> Result<Vec<ExamRecord>, CrossoverError> {
    let mut rdr = csv::Reader::from_reader(reader);
    let records = rdr.deserialize().collect::<Result<Vec<ExamRecord>, _>>()?;
    validate_records(&records)?;
    Ok(records)
}

pub fn read_exams_file(path: impl AsRef<Path>) -> Result<Vec<ExamRecord>, CrossoverError> {
    let file = std::fs::File::open(path).map_err(csv::Error::from)?;
    read_exams(file)
}

pub fn write_exams(writer: impl Write, records: &[ExamRecord]) -> Result<(), CrossoverError> {
    let mut w = csv::Writer::from_writer(writer);
    for r in records {
        w.serialize(r)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Group {
    A,
    B,
}

impl Group {
    /// Treatment sequence over the four exams.
    pub fn sequence(self) -> [Treatment; N_EXAMS as usize] {
        use Treatment::{Traditional as C, Tutorweb as T};
        match self {
            Group::A => [T, C, T, C],
            Group::B => [C, T, C, T],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    pub student_id: String,
    pub group: Group,
}

impl Assignment {
    pub fn treatment_for(&self, exam: u8) -> Treatment {
        self.group.sequence()[usize::from(exam - 1)]
    }
}

/// Group assignment for a crossover over four exams, in roster order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossoverSchedule {
    pub assignments: Vec<Assignment>,
}

impl CrossoverSchedule {
    pub fn group_sizes(&self) -> (usize, usize) {
        let a = self.assignments.iter().filter(|x| x.group == Group::A).count();
        (a, self.assignments.len() - a)
    }
}

/// Random split into two groups whose sizes differ by at most one; group A
/// gets the extra student.
pub fn randomize_crossover<R: Rng + ?Sized>(
    student_ids: &[String],
    rng: &mut R,
) -> Result<CrossoverSchedule, CrossoverError> {
    if student_ids.is_empty() {
        return Err(CrossoverError::EmptyRoster);
    }
    let mut order: Vec<usize> = (0..student_ids.len()).collect();
    order.shuffle(rng);
    let n_a = student_ids.len().div_ceil(2);
    let mut group = vec![Group::B; student_ids.len()];
    for &k in &order[..n_a] {
        group[k] = Group::A;
    }
    Ok(CrossoverSchedule {
        assignments: student_ids
            .iter()
            .zip(group)
            .map(|(id, group)| Assignment {
                student_id: id.clone(),
                group,
            })
            .collect(),
    })
}
