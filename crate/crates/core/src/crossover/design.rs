use std::collections::{BTreeSet, HashMap};

use nalgebra::{DMatrix, DVector};

use super::lmm::{fit_lmm, LmmFit, RandomIntercepts};
use super::{validate_records, CrossoverError, ExamRecord, MathBackground, Term, Treatment};

pub const INTERCEPT: &str = "(Intercept)";
pub const TREATMENT_COLUMN: &str = "treatment[tutorweb]";
pub const MATH_COLUMN: &str = "math[strong]";
pub const INTERACTION_COLUMN: &str = "treatment[tutorweb]:math[strong]";

/// Fixed-effect design, student grouping and response for one term set.
#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    pub terms: BTreeSet<Term>,
    pub columns: Vec<String>,
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    pub students: Vec<String>,
    pub groups: RandomIntercepts,
}

impl Design {
    /// Student indicator matrix: one column per student.
    pub fn z(&self) -> DMatrix<f64> {
        self.groups.indicator()
    }

    pub fn fit(&self) -> Result<LmmFit, CrossoverError> {
        let mut fit = fit_lmm(&self.x, &self.groups, &self.y)?;
        fit.terms = self.terms.iter().copied().collect();
        fit.columns = self.columns.clone();
        Ok(fit)
    }
}

/// Treatment-coded design. Exam dummies cover exams 2–4 that appear in the
/// data.
pub fn design_matrix(records: &[ExamRecord], terms: &[Term]) -> Result<Design, CrossoverError> {
    validate_records(records)?;
    let terms: BTreeSet<Term> = terms.iter().copied().collect();

    let mut columns = vec![INTERCEPT.to_string()];
    if terms.contains(&Term::Treatment) {
        columns.push(TREATMENT_COLUMN.into());
    }
    if terms.contains(&Term::Math) {
        columns.push(MATH_COLUMN.into());
    }
    if terms.contains(&Term::Interaction) {
        columns.push(INTERACTION_COLUMN.into());
    }
    let exams: Vec<u8> = if terms.contains(&Term::Exam) {
        let present: BTreeSet<u8> = records.iter().map(|r| r.exam).filter(|&e| e != 1).collect();
        present.into_iter().collect()
    } else {
        vec![]
    };
    columns.extend(exams.iter().map(|e| format!("exam[{e}]")));

    let mut students: Vec<String> = Vec::new();
    let mut student_index: HashMap<&str, usize> = HashMap::new();
    let mut group_of = Vec::with_capacity(records.len());
    for r in records {
        let next = students.len();
        let g = *student_index.entry(r.student_id.as_str()).or_insert_with(|| {
            students.push(r.student_id.clone());
            next
        });
        group_of.push(g);
    }

    let p = columns.len();
    let mut x = DMatrix::zeros(records.len(), p);
    for (row, r) in records.iter().enumerate() {
        let tw = f64::from(u8::from(r.treatment == Treatment::Tutorweb));
        let strong = f64::from(u8::from(r.math == MathBackground::Strong));
        let mut values = vec![1.0];
        if terms.contains(&Term::Treatment) {
            values.push(tw);
        }
        if terms.contains(&Term::Math) {
            values.push(strong);
        }
        if terms.contains(&Term::Interaction) {
            values.push(tw * strong);
        }
        values.extend(exams.iter().map(|&e| f64::from(u8::from(r.exam == e))));
        for (col, v) in values.into_iter().enumerate() {
            x[(row, col)] = v;
        }
    }
    let y = DVector::from_iterator(records.len(), records.iter().map(|r| r.score));
    let n_groups = students.len();
    Ok(Design {
        terms,
        columns,
        x,
        y,
        students,
        groups: RandomIntercepts::new(group_of, n_groups)?,
    })
}
