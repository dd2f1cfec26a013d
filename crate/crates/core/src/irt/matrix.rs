//! Sparse binary student-by-item response matrices.

use std::collections::{BTreeMap, HashMap};

use crate::bank::ItemBank;
use crate::log::{first_exposure_filter, ResponseRecord};

use super::IrtError;

/// First-exposure responses, one row per student.
///
/// Rows hold `(item index, correct)` pairs sorted by item index. Every
/// student and every item has at least one cell.
#[derive(Debug, Clone, PartialEq)]
pub struct ResponseMatrix {
    students: Vec<String>,
    items: Vec<String>,
    rows: Vec<Vec<(usize, bool)>>,
}

impl ResponseMatrix {
    /// Builds a matrix from explicit cells. Students without cells are
    /// dropped; an item without cells is an error.
    pub fn from_cells(
        students: Vec<String>,
        items: Vec<String>,
        cells: impl IntoIterator<Item = (usize, usize, bool)>,
    ) -> Result<Self, IrtError> {
        let mut rows: Vec<BTreeMap<usize, bool>> = vec![BTreeMap::new(); students.len()];
        for (m, i, x) in cells {
            if m >= students.len() || i >= items.len() {
                return Err(IrtError::DimensionMismatch(format!(
                    "cell ({m}, {i}) outside {} x {}",
                    students.len(),
                    items.len()
                )));
            }
            if rows[m].insert(i, x).is_some() {
                return Err(IrtError::DuplicateCell {
                    student: students[m].clone(),
                    item: items[i].clone(),
                });
            }
        }
        let mut counts = vec![0usize; items.len()];
        for row in &rows {
            for &i in row.keys() {
                counts[i] += 1;
            }
        }
        if let Some(i) = counts.iter().position(|&c| c == 0) {
            return Err(IrtError::ItemWithoutResponses(items[i].clone()));
        }
        let (students, rows) = students
            .into_iter()
            .zip(rows)
            .filter(|(_, r)| !r.is_empty())
            .map(|(s, r)| (s, r.into_iter().collect()))
            .unzip();
        Ok(Self {
            students,
            items,
            rows,
        })
    }

    /// Dense input with `None` for unobserved cells; ids are generated.
    pub fn from_dense(data: &[Vec<Option<bool>>]) -> Result<Self, IrtError> {
        let n_items = data.first().map_or(0, Vec::len);
        if data.iter().any(|r| r.len() != n_items) {
            return Err(IrtError::DimensionMismatch("ragged dense matrix".into()));
        }
        let students = (0..data.len()).map(|m| format!("s{m:05}")).collect();
        let items = (0..n_items).map(|i| format!("i{i:04}")).collect();
        let cells = data.iter().enumerate().flat_map(|(m, row)| {
            row.iter()
                .enumerate()
                .filter_map(move |(i, x)| x.map(|x| (m, i, x)))
        });
        Self::from_cells(students, items, cells)
    }

    /// First-exposure matrix for one bank. Items keep bank order and items
    /// nobody answered are left out; students are sorted by id.
    pub fn from_log(records: &[ResponseRecord], bank: &ItemBank) -> Result<Self, IrtError> {
        let in_bank: Vec<&ResponseRecord> =
            records.iter().filter(|r| r.bank_id == bank.bank_id).collect();
        let first = first_exposure_filter(in_bank)?;

        let mut answered = vec![false; bank.len()];
        for r in &first {
            let pos = bank
                .position(&r.item_id)
                .ok_or_else(|| IrtError::UnknownItem(r.item_id.clone()))?;
            answered[pos] = true;
        }
        let items: Vec<String> = bank
            .items
            .iter()
            .zip(&answered)
            .filter(|(_, &a)| a)
            .map(|(i, _)| i.item_id.clone())
            .collect();
        let item_index: HashMap<&str, usize> =
            items.iter().enumerate().map(|(k, id)| (id.as_str(), k)).collect();

        let mut students: Vec<String> = first.iter().map(|r| r.student_id.clone()).collect();
        students.sort();
        students.dedup();
        let student_index: HashMap<&str, usize> =
            students.iter().enumerate().map(|(k, id)| (id.as_str(), k)).collect();

        let cells: Vec<(usize, usize, bool)> = first
            .iter()
            .map(|r| {
                (
                    student_index[r.student_id.as_str()],
                    item_index[r.item_id.as_str()],
                    r.correct,
                )
            })
            .collect();
        if cells.is_empty() {
            return Err(IrtError::EmptyMatrix);
        }
        Self::from_cells(students, items, cells)
    }

    pub fn students(&self) -> &[String] {
        &self.students
    }

    pub fn items(&self) -> &[String] {
        &self.items
    }

    pub fn n_students(&self) -> usize {
        self.students.len()
    }

    pub fn n_items(&self) -> usize {
        self.items.len()
    }

    pub fn n_cells(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn rows(&self) -> &[Vec<(usize, bool)>] {
        &self.rows
    }

    /// `(answered, correct)` per item.
    pub fn item_totals(&self) -> Vec<(usize, usize)> {
        let mut totals = vec![(0, 0); self.items.len()];
        for row in &self.rows {
            for &(i, x) in row {
                totals[i].0 += 1;
                totals[i].1 += usize::from(x);
            }
        }
        totals
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bank::test_item;
    use crate::log::test_record;

    #[test]
    fn dense_round_trip_drops_empty_students() {
        let m = ResponseMatrix::from_dense(&[
            vec![Some(true), None],
            vec![None, None],
            vec![Some(false), Some(true)],
        ])
        .unwrap();
        assert_eq!(m.n_students(), 2);
        assert_eq!(m.n_cells(), 3);
        assert_eq!(m.item_totals(), vec![(2, 1), (1, 1)]);
    }

    #[test]
    fn empty_item_column_is_an_error() {
        let err = ResponseMatrix::from_dense(&[vec![Some(true), None]]).unwrap_err();
        assert!(matches!(err, IrtError::ItemWithoutResponses(ref id) if id == "i0001"));
    }

    #[test]
    fn from_log_applies_first_exposure() {
        let bank = ItemBank {
            bank_id: "b".into(),
            title: "t".into(),
            items: vec![test_item("x", 2, 0, 0), test_item("y", 2, 0, 0), test_item("z", 2, 0, 0)],
        };
        let log = vec![
            test_record("t", "y", 1, true),
            test_record("s", "x", 1, false),
            test_record("s", "x", 2, true),
            test_record("s", "y", 3, true),
        ];
        let m = ResponseMatrix::from_log(&log, &bank).unwrap();
        assert_eq!(m.items(), &["x".to_string(), "y".to_string()]);
        assert_eq!(m.students(), &["s".to_string(), "t".to_string()]);
        assert_eq!(m.rows()[0], vec![(0, false), (1, true)]);
        assert_eq!(m.rows()[1], vec![(1, true)]);

        let stray = vec![test_record("s", "nope", 1, true)];
        assert!(matches!(
            ResponseMatrix::from_log(&stray, &bank),
            Err(IrtError::UnknownItem(_))
        ));
        assert!(matches!(ResponseMatrix::from_log(&[], &bank), Err(IrtError::EmptyMatrix)));
    }
}
