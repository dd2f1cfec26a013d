//! Item banks, answer counters, empirical difficulty and difficulty ranking.
//!
//! Counters (`times_answered`, `times_correct`) are never read from or
//! written to the bank file. They are derived from the response log.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum BankError {
    #[error("item bank has no items")]
    Empty,
    #[error("duplicate item id `{0}`")]
    DuplicateItem(String),
    #[error("item `{item_id}`: {reason}")]
    InvalidItem { item_id: String, reason: String },
    #[error("unknown item `{0}`")]
    UnknownItem(String),
    #[error("answer index {index} out of range for item `{item_id}` ({n_answers} answers)")]
    AnswerOutOfRange {
        item_id: String,
        index: usize,
        n_answers: usize,
    },
    #[error("malformed bank file {path}: {source}")]
    Parse {
        path: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("cannot read bank file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Answer {
    pub text: String,
    pub correct: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Item {
    pub item_id: String,
    pub stem: String,
    pub answers: Vec<Answer>,
    #[serde(default)]
    pub shuffle: bool,
    #[serde(skip)]
    pub times_answered: u64,
    #[serde(skip)]
    pub times_correct: u64,
}

impl Item {
    /// Checks the single-correct-answer and counter invariants.
    pub fn validate(&self) -> Result<(), BankError> {
        let invalid = |reason: &str| BankError::InvalidItem {
            item_id: self.item_id.clone(),
            reason: reason.to_string(),
        };
        if self.item_id.is_empty() {
            return Err(invalid("empty item id"));
        }
        if self.answers.len() < 2 {
            return Err(invalid(&format!(
                "needs at least 2 answers, found {}",
                self.answers.len()
            )));
        }
        let n_correct = self.answers.iter().filter(|a| a.correct).count();
        if n_correct != 1 {
            return Err(invalid(&format!(
                "needs exactly one correct answer, found {n_correct}"
            )));
        }
        if self.times_correct > self.times_answered {
            return Err(invalid("more correct answers than answers"));
        }
        Ok(())
    }

    pub fn correct_index(&self) -> usize {
        self.answers
            .iter()
            .position(|a| a.correct)
            .expect("validated item has a correct answer")
    }

    pub fn is_correct(&self, canonical_index: usize) -> Result<bool, BankError> {
        self.answers
            .get(canonical_index)
            .map(|a| a.correct)
            .ok_or_else(|| BankError::AnswerOutOfRange {
                item_id: self.item_id.clone(),
                index: canonical_index,
                n_answers: self.answers.len(),
            })
    }

    /// Bumps the counters for one answer.
    pub fn count_answer(&mut self, correct: bool) {
        self.times_answered += 1;
        if correct {
            self.times_correct += 1;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemBank {
    pub bank_id: String,
    pub title: String,
    pub items: Vec<Item>,
}

impl ItemBank {
    pub fn validate(&self) -> Result<(), BankError> {
        if self.items.is_empty() {
            return Err(BankError::Empty);
        }
        let mut seen = HashSet::new();
        for item in &self.items {
            item.validate()?;
            if !seen.insert(item.item_id.as_str()) {
                return Err(BankError::DuplicateItem(item.item_id.clone()));
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    /// Reads and validates a bank file. Parse errors carry line and column.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, BankError> {
        let path = path.as_ref();
        let display = path.display().to_string();
        let text = fs::read_to_string(path).map_err(|source| BankError::Io {
            path: display.clone(),
            source,
        })?;
        let bank = Self::from_json(&text).map_err(|source| BankError::Parse {
            path: display,
            source,
        })?;
        bank.validate()?;
        Ok(bank)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("bank serializes")
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn item(&self, item_id: &str) -> Option<&Item> {
        self.items.iter().find(|i| i.item_id == item_id)
    }

    pub fn item_mut(&mut self, item_id: &str) -> Option<&mut Item> {
        self.items.iter_mut().find(|i| i.item_id == item_id)
    }

    pub fn position(&self, item_id: &str) -> Option<usize> {
        self.items.iter().position(|i| i.item_id == item_id)
    }

    pub fn reset_counters(&mut self) {
        for item in &mut self.items {
            item.times_answered = 0;
            item.times_correct = 0;
        }
    }
}

/// `1 - c/n`, or 0.5 for an item nobody has answered yet.
pub fn empirical_difficulty(item: &Item) -> f64 {
    if item.times_answered == 0 {
        0.5
    } else {
        1.0 - item.times_correct as f64 / item.times_answered as f64
    }
}

/// Items sorted from easiest (rank 1) to hardest (rank I).
#[derive(Debug, Clone, PartialEq)]
pub struct Ranking {
    by_rank: Vec<String>,
    rank_of: BTreeMap<String, usize>,
}

impl Ranking {
    /// Item at 1-based rank `r`.
    pub fn item_at(&self, rank: usize) -> Option<&str> {
        rank.checked_sub(1)
            .and_then(|r| self.by_rank.get(r))
            .map(String::as_str)
    }

    /// 1-based rank of `item_id`.
    pub fn rank_of(&self, item_id: &str) -> Option<usize> {
        self.rank_of.get(item_id).copied()
    }

    pub fn len(&self) -> usize {
        self.by_rank.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_rank.is_empty()
    }

    /// Item ids in rank order.
    pub fn items(&self) -> &[String] {
        &self.by_rank
    }
}

/// Ascending empirical difficulty, ties broken by item id.
pub fn rank_by_difficulty(bank: &ItemBank) -> Result<Ranking, BankError> {
    if bank.items.is_empty() {
        return Err(BankError::Empty);
    }
    let mut keyed: Vec<(f64, &str)> = bank
        .items
        .iter()
        .map(|i| (empirical_difficulty(i), i.item_id.as_str()))
        .collect();
    keyed.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(b.1)));
    let by_rank: Vec<String> = keyed.into_iter().map(|(_, id)| id.to_string()).collect();
    let rank_of = by_rank
        .iter()
        .enumerate()
        .map(|(r, id)| (id.clone(), r + 1))
        .collect();
    Ok(Ranking { by_rank, rank_of })
}

/// Presentation order of an item's answers.
///
/// `order[presented] = canonical`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Permutation {
    order: Vec<usize>,
}

impl Permutation {
    pub fn identity(n: usize) -> Self {
        Self {
            order: (0..n).collect(),
        }
    }

    pub fn from_order(order: Vec<usize>) -> Option<Self> {
        let mut seen = vec![false; order.len()];
        for &c in &order {
            if c >= order.len() || std::mem::replace(&mut seen[c], true) {
                return None;
            }
        }
        Some(Self { order })
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn is_identity(&self) -> bool {
        self.order.iter().enumerate().all(|(p, &c)| p == c)
    }

    pub fn to_canonical(&self, presented: usize) -> Option<usize> {
        self.order.get(presented).copied()
    }

    pub fn to_presented(&self, canonical: usize) -> Option<usize> {
        self.order.iter().position(|&c| c == canonical)
    }

    pub fn order(&self) -> &[usize] {
        &self.order
    }

    /// Reorders canonical values into presentation order.
    pub fn apply<T: Clone>(&self, canonical: &[T]) -> Vec<T> {
        self.order.iter().map(|&c| canonical[c].clone()).collect()
    }
}

/// Presented answers plus the map back to canonical indices.
#[derive(Debug, Clone, PartialEq)]
pub struct ShuffledAnswers {
    pub presented: Vec<Answer>,
    pub permutation: Permutation,
}

pub fn shuffle_answers(item: &Item, seed: u64) -> ShuffledAnswers {
    let n = item.answers.len();
    let permutation = if item.shuffle {
        let mut order: Vec<usize> = (0..n).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        order.shuffle(&mut rng);
        Permutation { order }
    } else {
        Permutation::identity(n)
    };
    ShuffledAnswers {
        presented: permutation.apply(&item.answers),
        permutation,
    }
}

#[cfg(test)]
pub(crate) fn test_item(id: &str, n_answers: usize, answered: u64, correct: u64) -> Item {
    Item {
        item_id: id.to_string(),
        stem: format!("question {id}"),
        answers: (0..n_answers)
            .map(|k| Answer {
                text: format!("answer {k}"),
                correct: k == 0,
            })
            .collect(),
        shuffle: true,
        times_answered: answered,
        times_correct: correct,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bank(items: Vec<Item>) -> ItemBank {
        ItemBank {
            bank_id: "b".into(),
            title: "t".into(),
            items,
        }
    }

    #[test]
    fn difficulty_examples() {
        assert_eq!(empirical_difficulty(&test_item("a", 4, 10, 0)), 1.0);
        assert_eq!(empirical_difficulty(&test_item("a", 4, 40, 30)), 0.25);
        assert_eq!(empirical_difficulty(&test_item("a", 4, 0, 0)), 0.5);
    }

    #[test]
    fn ranking_examples() {
        // difficulties 0.2, 0.8, 0.5
        let b = bank(vec![
            test_item("a", 4, 10, 8),
            test_item("b", 4, 10, 2),
            test_item("c", 4, 10, 5),
        ]);
        let r = rank_by_difficulty(&b).unwrap();
        assert_eq!(r.rank_of("a"), Some(1));
        assert_eq!(r.rank_of("c"), Some(2));
        assert_eq!(r.rank_of("b"), Some(3));
        assert_eq!(r.item_at(3), Some("b"));
        assert_eq!(r.item_at(0), None);

        let single = rank_by_difficulty(&bank(vec![test_item("x", 2, 0, 0)])).unwrap();
        assert_eq!(single.rank_of("x"), Some(1));

        let tied = rank_by_difficulty(&bank(vec![
            test_item("b", 2, 4, 2),
            test_item("a", 2, 2, 1),
        ]))
        .unwrap();
        assert_eq!(tied.items(), &["a".to_string(), "b".to_string()]);

        assert!(matches!(rank_by_difficulty(&bank(vec![])), Err(BankError::Empty)));
    }

    #[test]
    fn validation_rejects_bad_items() {
        let mut zero = test_item("z", 2, 0, 0);
        zero.answers.clear();
        let err = bank(vec![test_item("a", 2, 0, 0), zero]).validate().unwrap_err();
        assert!(err.to_string().contains("`z`"), "{err}");

        let mut two_correct = test_item("t", 3, 0, 0);
        two_correct.answers[1].correct = true;
        assert!(two_correct.validate().is_err());

        let mut none_correct = test_item("n", 3, 0, 0);
        none_correct.answers[0].correct = false;
        assert!(none_correct.validate().is_err());

        let dup = bank(vec![test_item("a", 2, 0, 0), test_item("a", 2, 0, 0)]);
        assert!(matches!(dup.validate(), Err(BankError::DuplicateItem(_))));
        assert!(matches!(bank(vec![]).validate(), Err(BankError::Empty)));
    }

    #[test]
    fn counters_are_not_serialized() {
        let b = bank(vec![test_item("a", 2, 7, 3)]);
        let json = serde_json::to_string(&b).unwrap();
        assert!(!json.contains("times_answered"));
        let back = ItemBank::from_json(&json).unwrap();
        assert_eq!(back.items[0].times_answered, 0);
    }

    #[test]
    fn load_reports_position_of_parse_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bank.json");
        fs::write(&path, "{\n  \"bank_id\": \"x\",\n  \"title\": 3\n}").unwrap();
        let err = ItemBank::load(&path).unwrap_err().to_string();
        assert!(err.contains("line 3"), "{err}");
    }

    #[test]
    fn shuffle_examples() {
        let mut item = test_item("a", 4, 0, 0);
        item.shuffle = false;
        assert!(shuffle_answers(&item, 99).permutation.is_identity());

        item.shuffle = true;
        let first = shuffle_answers(&item, 7);
        assert_eq!(first, shuffle_answers(&item, 7));

        for presented in 0..4 {
            let canonical = first.permutation.to_canonical(presented).unwrap();
            assert_eq!(first.presented[presented], item.answers[canonical]);
            assert_eq!(first.permutation.to_presented(canonical), Some(presented));
        }
    }

    #[test]
    fn shuffle_is_roughly_uniform() {
        let item = test_item("a", 3, 0, 0);
        let mut counts = BTreeMap::new();
        for seed in 0..6000 {
            *counts
                .entry(shuffle_answers(&item, seed).permutation.order().to_vec())
                .or_insert(0usize) += 1;
        }
        assert_eq!(counts.len(), 6);
        for (_, c) in counts {
            assert!((c as f64 - 1000.0).abs() < 150.0, "{c}");
        }
    }

    proptest! {
        #[test]
        fn difficulty_is_bounded_and_monotone(n in 1u64..500, frac in 0.0f64..=1.0) {
            let c = ((n as f64) * frac).floor() as u64;
            let item = test_item("a", 2, n, c);
            let d = empirical_difficulty(&item);
            prop_assert!((0.0..=1.0).contains(&d));

            let mut right = item.clone();
            right.count_answer(true);
            prop_assert!(empirical_difficulty(&right) <= d);

            let mut wrong = item.clone();
            wrong.count_answer(false);
            prop_assert!(empirical_difficulty(&wrong) >= d);
        }

        #[test]
        fn ranking_is_a_bijection(counts in proptest::collection::vec((0u64..50, 0u64..50), 1..40)) {
            let items: Vec<Item> = counts
                .iter()
                .enumerate()
                .map(|(k, &(a, b))| test_item(&format!("i{k:02}"), 2, a.max(b), a.min(b)))
                .collect();
            let b = bank(items);
            let r = rank_by_difficulty(&b).unwrap();
            let mut ranks: Vec<usize> = b.items.iter().map(|i| r.rank_of(&i.item_id).unwrap()).collect();
            ranks.sort_unstable();
            prop_assert_eq!(ranks, (1..=b.len()).collect::<Vec<_>>());
            prop_assert_eq!(&r, &rank_by_difficulty(&b).unwrap());
            for w in r.items().windows(2) {
                let d0 = empirical_difficulty(b.item(&w[0]).unwrap());
                let d1 = empirical_difficulty(b.item(&w[1]).unwrap());
                prop_assert!(d0 < d1 || (d0 == d1 && w[0] < w[1]));
            }
        }

        #[test]
        fn shuffle_round_trips(seed in any::<u64>(), n in 2usize..8) {
            let item = test_item("a", n, 0, 0);
            let s = shuffle_answers(&item, seed);
            let mut back = vec![None; n];
            for (p, a) in s.presented.iter().enumerate() {
                back[s.permutation.to_canonical(p).unwrap()] = Some(a.clone());
            }
            let back: Vec<Answer> = back.into_iter().map(Option::unwrap).collect();
            prop_assert_eq!(back, item.answers);
        }
    }
}
