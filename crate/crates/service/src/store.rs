//! In-memory session state rebuilt from, and persisted to, append-only logs.
//!
//! Student state is a fold over the response log. Registrations live in a
//! second JSON-lines file so that names and consent survive restarts.
//! Pending questions are not persisted; after a restart the student simply
//! receives a fresh question.

use std::collections::{BTreeMap, HashMap};
use std::fs::{File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use quiz_core::allocation::{allocation_pmf, draw_item, AllocationError, AllocationPolicy};
use quiz_core::bank::{rank_by_difficulty, shuffle_answers, BankError, ItemBank, Permutation};
use quiz_core::grading::{record_response, Grade, StudentState};
use quiz_core::log::{LogError, LogWriter, ResponseRecord};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("name must not be empty")]
    EmptyName,
    #[error("unknown student `{0}`")]
    UnknownStudent(String),
    #[error("unknown bank `{0}`")]
    UnknownBank(String),
    #[error("bank `{0}` is already loaded")]
    DuplicateBank(String),
    #[error("question token is stale or unknown")]
    StaleToken,
    #[error("answer index {index} out of range for {n_answers} answers")]
    AnswerIndex { index: usize, n_answers: usize },
    #[error("log line {line} does not replay: {reason}")]
    Replay { line: usize, reason: String },
    #[error("registry line {line}: {source}")]
    Registry {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error(transparent)]
    Bank(#[from] BankError),
    #[error(transparent)]
    Allocation(#[from] AllocationError),
    #[error(transparent)]
    Log(#[from] LogError),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: io::Error,
    },
}

fn io_error(context: impl Into<String>) -> impl FnOnce(io::Error) -> ServiceError {
    let context = context.into();
    move |source| ServiceError::Io { context, source }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Registration {
    pub student_id: String,
    pub name: String,
    pub consent: bool,
    pub registered_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BankSummary {
    pub bank_id: String,
    pub title: String,
    pub n_items: usize,
}

/// A question as shown to the student. The correct answer is not included.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionView {
    pub bank_id: String,
    pub item_id: String,
    pub stem: String,
    pub answers: Vec<String>,
    pub question_token: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnswerResult {
    pub correct: bool,
    pub raw_score: f64,
    pub grade: f64,
    pub answered_count: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradeView {
    pub raw_score: f64,
    pub grade: f64,
    pub answered_count: usize,
}

#[derive(Debug, Clone)]
struct Pending {
    token: String,
    item_id: String,
    stem: String,
    answers: Vec<String>,
    permutation: Permutation,
}

#[derive(Debug)]
struct Student {
    registration: Registration,
    state: StudentState,
}

/// Where the store persists. Both paths are optional; without them the store
/// lives in memory only.
#[derive(Debug, Clone, Default)]
pub struct Persistence {
    pub log_path: Option<PathBuf>,
    pub registry_path: Option<PathBuf>,
}

pub struct SessionStore {
    policy: AllocationPolicy,
    banks: BTreeMap<String, ItemBank>,
    students: BTreeMap<String, Student>,
    pending: HashMap<(String, String), Pending>,
    records: Vec<ResponseRecord>,
    log: Option<LogWriter>,
    registry: Option<File>,
    rng: ChaCha8Rng,
    clock: Box<dyn Fn() -> DateTime<Utc> + Send>,
}

impl std::fmt::Debug for SessionStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SessionStore")
            .field("policy", &self.policy)
            .field("banks", &self.banks.keys().collect::<Vec<_>>())
            .field("students", &self.students.len())
            .field("records", &self.records.len())
            .finish()
    }
}

impl SessionStore {
    /// In-memory store seeded from OS entropy.
    pub fn new(policy: AllocationPolicy) -> Self {
        Self::with_rng(policy, ChaCha8Rng::from_os_rng())
    }

    /// In-memory store with reproducible question draws and tokens.
    pub fn seeded(policy: AllocationPolicy, seed: u64) -> Self {
        Self::with_rng(policy, ChaCha8Rng::seed_from_u64(seed))
    }

    fn with_rng(policy: AllocationPolicy, rng: ChaCha8Rng) -> Self {
        Self {
            policy,
            banks: BTreeMap::new(),
            students: BTreeMap::new(),
            pending: HashMap::new(),
            records: Vec::new(),
            log: None,
            registry: None,
            rng,
            clock: Box::new(Utc::now),
        }
    }

    /// Replaces the wall clock used for timestamps.
    pub fn set_clock(&mut self, clock: impl Fn() -> DateTime<Utc> + Send + 'static) {
        self.clock = Box::new(clock);
    }

    pub fn policy(&self) -> &AllocationPolicy {
        &self.policy
    }

    pub fn add_bank(&mut self, bank: ItemBank) -> Result<String, ServiceError> {
        bank.validate()?;
        if self.banks.contains_key(&bank.bank_id) {
            return Err(ServiceError::DuplicateBank(bank.bank_id));
        }
        let id = bank.bank_id.clone();
        self.banks.insert(id.clone(), bank);
        Ok(id)
    }

    pub fn load_bank(&mut self, path: impl AsRef<Path>) -> Result<String, ServiceError> {
        self.add_bank(ItemBank::load(path)?)
    }

    /// Loads every `*.json` file in `dir`, in file-name order.
    pub fn load_bank_dir(&mut self, dir: impl AsRef<Path>) -> Result<Vec<String>, ServiceError> {
        let dir = dir.as_ref();
        let mut paths = std::fs::read_dir(dir)
            .map_err(io_error(format!("reading bank directory {}", dir.display())))?
            .map(|e| e.map(|e| e.path()))
            .collect::<Result<Vec<_>, _>>()
            .map_err(io_error(format!("reading bank directory {}", dir.display())))?;
        paths.retain(|p| p.extension().is_some_and(|e| e == "json"));
        paths.sort();
        paths.iter().map(|p| self.load_bank(p)).collect()
    }

    /// Rebuilds registrations and student state from the persisted files,
    /// then keeps appending to them.
    pub fn open(&mut self, persistence: &Persistence) -> Result<(), ServiceError> {
        if let Some(path) = &persistence.registry_path {
            if path.exists() {
                let file = File::open(path).map_err(io_error(format!("opening {}", path.display())))?;
                for (k, line) in BufReader::new(file).lines().enumerate() {
                    let line = line.map_err(io_error(format!("reading {}", path.display())))?;
                    if line.trim().is_empty() {
                        continue;
                    }
                    let reg: Registration = serde_json::from_str(&line)
                        .map_err(|source| ServiceError::Registry { line: k + 1, source })?;
                    self.insert_student(reg);
                }
            }
            let file = OpenOptions::new()
                .create(true)
                .append(true)
                .open(path)
                .map_err(io_error(format!("opening {}", path.display())))?;
            self.registry = Some(file);
        }
        if let Some(path) = &persistence.log_path {
            if path.exists() {
                let records = quiz_core::log::read_log(path)?;
                self.replay(&records)?;
            }
            self.log = Some(LogWriter::open(path).map_err(io_error(format!("opening {}", path.display())))?);
        }
        Ok(())
    }

    fn insert_student(&mut self, registration: Registration) {
        let id = registration.student_id.clone();
        self.students.insert(
            id.clone(),
            Student {
                registration,
                state: StudentState::new(id),
            },
        );
    }

    /// Applies logged responses in order, checking that each one reproduces
    /// its logged sequence number, correctness and grade. Students absent
    /// from the registry are created on first sight.
    pub fn replay(&mut self, records: &[ResponseRecord]) -> Result<(), ServiceError> {
        for (k, rec) in records.iter().enumerate() {
            let line = k + 1;
            let fail = |reason: String| ServiceError::Replay { line, reason };
            if !self.students.contains_key(&rec.student_id) {
                self.insert_student(Registration {
                    student_id: rec.student_id.clone(),
                    name: rec.student_id.clone(),
                    consent: false,
                    registered_at: rec.timestamp,
                });
            }
            let bank = self
                .banks
                .get_mut(&rec.bank_id)
                .ok_or_else(|| fail(format!("unknown bank `{}`", rec.bank_id)))?;
            let student = self.students.get_mut(&rec.student_id).expect("inserted above");
            let replayed = record_response(&mut student.state, bank, &rec.item_id, rec.chosen_index, rec.timestamp)
                .map_err(|e| fail(e.to_string()))?;
            if replayed != *rec {
                return Err(fail(format!(
                    "logged (seq {}, correct {}, grade {}) but replay gives (seq {}, correct {}, grade {})",
                    rec.seq, rec.correct, rec.grade_after, replayed.seq, replayed.correct, replayed.grade_after
                )));
            }
            self.records.push(replayed);
        }
        Ok(())
    }

    /// Registers a student. Ids are derived from the name; a name seen before
    /// gets a numeric suffix (`alice`, `alice-2`, …).
    pub fn register(&mut self, name: &str, consent: bool) -> Result<Registration, ServiceError> {
        let name = name.trim();
        if name.is_empty() {
            return Err(ServiceError::EmptyName);
        }
        let mut base: String = name
            .chars()
            .map(|c| if c.is_alphanumeric() { c.to_ascii_lowercase() } else { '-' })
            .collect();
        base = base.trim_matches('-').to_string();
        if base.is_empty() {
            base = "student".into();
        }
        let mut id = base.clone();
        let mut k = 2;
        while self.students.contains_key(&id) {
            id = format!("{base}-{k}");
            k += 1;
        }
        let registration = Registration {
            student_id: id,
            name: name.to_string(),
            consent,
            registered_at: (self.clock)(),
        };
        if let Some(file) = &mut self.registry {
            let mut line = serde_json::to_string(&registration).expect("registration serializes");
            line.push('\n');
            file.write_all(line.as_bytes())
                .and_then(|()| file.sync_data())
                .map_err(io_error("appending registration"))?;
        }
        self.insert_student(registration.clone());
        Ok(registration)
    }

    pub fn registration(&self, student_id: &str) -> Option<&Registration> {
        self.students.get(student_id).map(|s| &s.registration)
    }

    pub fn banks(&self) -> Vec<BankSummary> {
        self.banks
            .values()
            .map(|b| BankSummary {
                bank_id: b.bank_id.clone(),
                title: b.title.clone(),
                n_items: b.len(),
            })
            .collect()
    }

    pub fn bank(&self, bank_id: &str) -> Option<&ItemBank> {
        self.banks.get(bank_id)
    }

    fn check(&self, student_id: &str, bank_id: &str) -> Result<(), ServiceError> {
        if !self.students.contains_key(student_id) {
            return Err(ServiceError::UnknownStudent(student_id.to_string()));
        }
        if !self.banks.contains_key(bank_id) {
            return Err(ServiceError::UnknownBank(bank_id.to_string()));
        }
        Ok(())
    }

    /// The rank-indexed allocation probabilities the student's next question
    /// is drawn from.
    pub fn allocation(&self, student_id: &str, bank_id: &str) -> Result<Vec<f64>, ServiceError> {
        self.check(student_id, bank_id)?;
        let grade = self.students[student_id].state.grade(bank_id).grade;
        Ok(allocation_pmf(&self.policy, self.banks[bank_id].len(), grade)?)
    }

    /// Draws the next question, or re-serves the pending one unchanged.
    pub fn next_question(&mut self, student_id: &str, bank_id: &str) -> Result<QuestionView, ServiceError> {
        self.check(student_id, bank_id)?;
        let key = (student_id.to_string(), bank_id.to_string());
        if let Some(p) = self.pending.get(&key) {
            return Ok(view(bank_id, p));
        }
        let pmf = self.allocation(student_id, bank_id)?;
        let bank = &self.banks[bank_id];
        let ranking = rank_by_difficulty(bank)?;
        let item_id = draw_item(&pmf, &ranking, &mut self.rng)?;
        let item = bank.item(item_id).expect("ranked item is in the bank");
        let shuffled = shuffle_answers(item, self.rng.random());
        let pending = Pending {
            token: format!("{:016x}{:016x}", self.rng.random::<u64>(), self.rng.random::<u64>()),
            item_id: item.item_id.clone(),
            stem: item.stem.clone(),
            answers: shuffled.presented.into_iter().map(|a| a.text).collect(),
            permutation: shuffled.permutation,
        };
        let out = view(bank_id, &pending);
        self.pending.insert(key, pending);
        Ok(out)
    }

    /// Grades an answer given as an index into the presented order. The log
    /// line is durable before this returns; if the append fails, the
    /// in-memory state is rolled back and the question stays pending.
    pub fn submit_answer(
        &mut self,
        student_id: &str,
        bank_id: &str,
        token: &str,
        presented_index: usize,
    ) -> Result<AnswerResult, ServiceError> {
        self.check(student_id, bank_id)?;
        let key = (student_id.to_string(), bank_id.to_string());
        let pending = match self.pending.get(&key) {
            Some(p) if p.token == token => p,
            _ => return Err(ServiceError::StaleToken),
        };
        let canonical = pending
            .permutation
            .to_canonical(presented_index)
            .ok_or(ServiceError::AnswerIndex {
                index: presented_index,
                n_answers: pending.permutation.len(),
            })?;
        let item_id = pending.item_id.clone();

        let now = (self.clock)();
        let bank = self.banks.get_mut(bank_id).expect("checked");
        let student = self.students.get_mut(student_id).expect("checked");
        let saved_progress = student.state.banks.get(bank_id).cloned();
        let saved_counts = bank
            .item(&item_id)
            .map(|i| (i.times_answered, i.times_correct))
            .expect("pending item is in the bank");

        let record = record_response(&mut student.state, bank, &item_id, canonical, now)?;
        if let Some(log) = &mut self.log {
            if let Err(source) = log.append(&record) {
                match saved_progress {
                    Some(p) => student.state.banks.insert(bank_id.to_string(), p),
                    None => student.state.banks.remove(bank_id),
                };
                let item = bank.item_mut(&item_id).expect("pending item is in the bank");
                (item.times_answered, item.times_correct) = saved_counts;
                return Err(ServiceError::Io {
                    context: "appending response".into(),
                    source,
                });
            }
        }
        self.pending.remove(&key);
        let progress = student.state.progress(bank_id).expect("just recorded");
        let result = AnswerResult {
            correct: record.correct,
            raw_score: progress.raw_score,
            grade: progress.grade,
            answered_count: progress.answered(),
        };
        self.records.push(record);
        Ok(result)
    }

    pub fn get_grade(&self, student_id: &str, bank_id: &str) -> Result<GradeView, ServiceError> {
        self.check(student_id, bank_id)?;
        let state = &self.students[student_id].state;
        let Grade { raw_score, grade } = state.grade(bank_id);
        Ok(GradeView {
            raw_score,
            grade,
            answered_count: state.progress(bank_id).map_or(0, |p| p.answered()),
        })
    }

    pub fn state(&self, student_id: &str) -> Option<&StudentState> {
        self.students.get(student_id).map(|s| &s.state)
    }

    pub fn student_ids(&self) -> impl Iterator<Item = &str> {
        self.students.keys().map(String::as_str)
    }

    pub fn records(&self) -> &[ResponseRecord] {
        &self.records
    }

    /// Logged responses with `from <= timestamp < to`.
    pub fn export(&self, from: Option<DateTime<Utc>>, to: Option<DateTime<Utc>>) -> Vec<&ResponseRecord> {
        self.records
            .iter()
            .filter(|r| from.is_none_or(|f| r.timestamp >= f) && to.is_none_or(|t| r.timestamp < t))
            .collect()
    }
}

fn view(bank_id: &str, p: &Pending) -> QuestionView {
    QuestionView {
        bank_id: bank_id.to_string(),
        item_id: p.item_id.clone(),
        stem: p.stem.clone(),
        answers: p.answers.clone(),
        question_token: p.token.clone(),
    }
}
