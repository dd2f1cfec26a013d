//! Synthetic students, quiz sessions and crossover exam data with known
//! ground truth.
//!
//! Every random quantity comes from a ChaCha stream derived from the config
//! seed, with one stream per purpose and one per student, so a config always
//! reproduces the same output byte for byte.

use chrono::{DateTime, Duration, TimeZone, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Normal, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::allocation::{allocation_pmf, draw_item, AllocationError, AllocationPolicy};
use crate::bank::{rank_by_difficulty, Answer, BankError, Item, ItemBank};
use crate::crossover::{randomize_crossover, CrossoverError, ExamRecord, MathBackground, Treatment, N_EXAMS};
use crate::grading::{record_response, StudentState};
use crate::irt::{IrtError, IrtModel, ItemParams, ResponseMatrix, Variant};
use crate::log::ResponseRecord;

pub const SIM_BANK_ID: &str = "sim-bank";

const POPULATION_STREAM: u64 = 0;
const BANK_STREAM: u64 = 1;
const CROSSOVER_STREAM: u64 = 2;
const STUDENT_STREAM_BASE: u64 = 1 << 32;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid simulator config: {0}")]
    Config(String),
    #[error(transparent)]
    Bank(#[from] BankError),
    #[error(transparent)]
    Allocation(#[from] AllocationError),
    #[error(transparent)]
    Irt(#[from] IrtError),
    #[error(transparent)]
    Crossover(#[from] CrossoverError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimStudent {
    pub student_id: String,
    pub ability: f64,
    pub learning_rate: f64,
    pub guesser: bool,
}

/// Item parameters that generate responses. Omitted vectors are filled in:
/// difficulties from N(0, 1) (`n_items` of them), discriminations from
/// LogNormal(0, 0.3) for M3/M4 and 1 for M2, guessing at `1 / n_answers`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratingModel {
    #[serde(default = "default_variant")]
    pub variant: Variant,
    #[serde(default)]
    pub n_items: Option<usize>,
    #[serde(default)]
    pub beta: Option<Vec<f64>>,
    #[serde(default)]
    pub alpha: Option<Vec<f64>>,
    #[serde(default)]
    pub guessing: Option<Vec<f64>>,
    #[serde(default = "default_n_answers")]
    pub n_answers: usize,
}

fn default_variant() -> Variant {
    Variant::M1
}

fn default_n_answers() -> usize {
    4
}

impl GeneratingModel {
    pub fn rasch(beta: Vec<f64>) -> Self {
        Self {
            variant: Variant::M1,
            n_items: None,
            beta: Some(beta),
            alpha: None,
            guessing: None,
            n_answers: default_n_answers(),
        }
    }

    pub fn random(variant: Variant, n_items: usize) -> Self {
        Self {
            variant,
            n_items: Some(n_items),
            beta: None,
            alpha: None,
            guessing: None,
            n_answers: default_n_answers(),
        }
    }

    fn resolve(&self, rng: &mut ChaCha8Rng) -> Result<IrtModel, SimError> {
        if self.n_answers < 2 {
            return Err(SimError::Config("items need at least 2 answers".into()));
        }
        let beta = match (&self.beta, self.n_items) {
            (Some(b), Some(n)) if b.len() != n => {
                return Err(SimError::Config(format!("n_items is {n} but {} difficulties given", b.len())))
            }
            (Some(b), _) => b.clone(),
            (None, Some(n)) => (0..n).map(|_| rng.sample(StandardNormal)).collect(),
            (None, None) => return Err(SimError::Config("bank needs n_items or beta".into())),
        };
        let n = beta.len();
        if n == 0 {
            return Err(SimError::Config("bank needs at least one item".into()));
        }
        let alpha = match (&self.alpha, self.variant) {
            (Some(a), _) => a.clone(),
            (None, Variant::M1) => vec![],
            (None, Variant::M2) => vec![1.0],
            (None, _) => {
                let dist = LogNormal::new(0.0, 0.3).expect("valid lognormal");
                (0..n).map(|_| dist.sample(rng)).collect()
            }
        };
        let guessing = match (&self.guessing, self.variant) {
            (Some(c), _) => c.clone(),
            (None, Variant::M4) => vec![1.0 / self.n_answers as f64; n],
            (None, _) => vec![],
        };
        if beta.iter().chain(&alpha).chain(&guessing).any(|v| !v.is_finite())
            || alpha.iter().any(|&a| a <= 0.0)
            || guessing.iter().any(|&c| !(0.0..1.0).contains(&c))
        {
            return Err(SimError::Config("item parameters out of range".into()));
        }
        Ok(IrtModel::with_params(self.variant, sim_item_ids(n), beta, alpha, guessing)?)
    }
}

pub fn sim_item_ids(n: usize) -> Vec<String> {
    (1..=n).map(|k| format!("q{k:03}")).collect()
}

/// Fixed effects that generate exam scores, on the scale of the scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CrossoverEffects {
    pub intercept: f64,
    pub treatment: f64,
    pub math: f64,
    pub interaction: f64,
    /// Shifts for exams 2, 3, … relative to exam 1.
    pub exam: Vec<f64>,
}

impl Default for CrossoverEffects {
    fn default() -> Self {
        Self {
            intercept: 6.0,
            treatment: 0.0,
            math: 1.0,
            interaction: 0.0,
            exam: vec![0.2, -0.3, 0.4],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CrossoverSim {
    pub n_exams: u8,
    pub effects: CrossoverEffects,
    pub sigma_b: f64,
    pub sigma: f64,
    pub strong_fraction: f64,
    /// Probability that any one exam is missed; every student keeps at least
    /// one exam.
    pub missing_rate: f64,
    /// Scores are clamped to this range when set.
    pub score_range: Option<(f64, f64)>,
}

impl Default for CrossoverSim {
    fn default() -> Self {
        Self {
            n_exams: N_EXAMS,
            effects: CrossoverEffects::default(),
            sigma_b: 1.5,
            sigma: 1.2,
            strong_fraction: 0.5,
            missing_rate: 0.0,
            score_range: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub seed: u64,
    pub n_students: usize,
    #[serde(default)]
    pub bank: Option<GeneratingModel>,
    #[serde(default)]
    pub policy: AllocationPolicy,
    #[serde(default)]
    pub questions_per_student: usize,
    #[serde(default)]
    pub learning_rate: f64,
    #[serde(default)]
    pub guesser_fraction: f64,
    #[serde(default)]
    pub crossover: Option<CrossoverSim>,
}

impl SimConfig {
    pub fn new(seed: u64, n_students: usize) -> Self {
        Self {
            seed,
            n_students,
            bank: None,
            policy: AllocationPolicy::default(),
            questions_per_student: 0,
            learning_rate: 0.0,
            guesser_fraction: 0.0,
            crossover: None,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |msg: &str| Err(SimError::Config(msg.to_string()));
        if !(0.0..=1.0).contains(&self.guesser_fraction) {
            return bad("guesser_fraction must be in [0, 1]");
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be finite and >= 0");
        }
        self.policy.validate()?;
        if let Some(c) = &self.crossover {
            if !(1..=N_EXAMS).contains(&c.n_exams) {
                return bad("crossover n_exams must be between 1 and 4");
            }
            if c.effects.exam.len() != usize::from(c.n_exams - 1) {
                return bad("crossover needs one exam effect per exam after the first");
            }
            if !(c.sigma_b >= 0.0 && c.sigma >= 0.0 && c.sigma_b.is_finite() && c.sigma.is_finite()) {
                return bad("crossover standard deviations must be finite and >= 0");
            }
            if !(0.0..=1.0).contains(&c.strong_fraction) || !(0.0..=1.0).contains(&c.missing_rate) {
                return bad("crossover fractions must be in [0, 1]");
            }
            if let Some((lo, hi)) = c.score_range {
                if !(lo < hi) {
                    return bad("score_range must be increasing");
                }
            }
        }
        Ok(())
    }

    fn stream(&self, stream: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        rng
    }
}

pub fn sim_student_id(index: usize) -> String {
    format!("s{:05}", index + 1)
}

/// Abilities are i.i.d. standard normal; each student is a guesser with
/// probability `guesser_fraction`.
pub fn generate_population(config: &SimConfig) -> Result<Vec<SimStudent>, SimError> {
    config.validate()?;
    let mut rng = config.stream(POPULATION_STREAM);
    Ok((0..config.n_students)
        .map(|i| {
            let ability: f64 = rng.sample(StandardNormal);
            let guesser = rng.random_bool(config.guesser_fraction);
            SimStudent {
                student_id: sim_student_id(i),
                ability,
                learning_rate: config.learning_rate,
                guesser,
            }
        })
        .collect())
}

/// Guessers pick uniformly among `n_answers`; everyone else answers
/// correctly with the model probability at their current ability.
pub fn simulate_response<R: Rng + ?Sized>(student: &SimStudent, item: &ItemParams, n_answers: usize, rng: &mut R) -> bool {
    let p = if student.guesser {
        1.0 / n_answers as f64
    } else {
        item.prob(student.ability)
    };
    rng.random::<f64>() < p
}

/// Bank whose items carry the generating model's ids, with the first answer
/// correct.
pub fn build_bank(model: &IrtModel, n_answers: usize) -> ItemBank {
    ItemBank {
        bank_id: SIM_BANK_ID.to_string(),
        title: "Synthetic item bank".to_string(),
        items: model
            .item_ids
            .iter()
            .map(|id| Item {
                item_id: id.clone(),
                stem: format!("Synthetic item {id}"),
                answers: (0..n_answers)
                    .map(|k| Answer {
                        text: format!("option {}", k + 1),
                        correct: k == 0,
                    })
                    .collect(),
                shuffle: true,
                times_answered: 0,
                times_correct: 0,
            })
            .collect(),
    }
}

/// Draws the generating model for `config.bank`.
pub fn generating_model(config: &SimConfig) -> Result<IrtModel, SimError> {
    let spec = config
        .bank
        .as_ref()
        .ok_or_else(|| SimError::Config("no bank block".into()))?;
    spec.resolve(&mut config.stream(BANK_STREAM))
}

pub fn sim_epoch() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2011, 9, 1, 0, 0, 0).unwrap()
}

/// Runs each student's session in turn against `bank`, which keeps the
/// answer counters that drive difficulty ranking. Students go one after
/// another because later students see rankings shaped by earlier ones.
/// Timestamps advance one second per answer from a fixed epoch.
pub fn run_sessions(
    config: &SimConfig,
    model: &IrtModel,
    bank: &mut ItemBank,
) -> Result<Vec<ResponseRecord>, SimError> {
    config.validate()?;
    bank.validate()?;
    let population = generate_population(config)?;
    let params: Vec<ItemParams> = bank
        .items
        .iter()
        .map(|item| {
            let i = model
                .item_ids
                .iter()
                .position(|id| *id == item.item_id)
                .ok_or_else(|| SimError::Config(format!("no parameters for item `{}`", item.item_id)))?;
            Ok(model.item(i)?)
        })
        .collect::<Result<_, SimError>>()?;

    let epoch = sim_epoch();
    let mut log = Vec::with_capacity(config.n_students * config.questions_per_student);
    for (index, mut student) in population.into_iter().enumerate() {
        let mut rng = config.stream(STUDENT_STREAM_BASE + index as u64);
        let mut state = StudentState::new(student.student_id.clone());
        for _ in 0..config.questions_per_student {
            let ranking = rank_by_difficulty(bank)?;
            let pmf = allocation_pmf(&config.policy, ranking.len(), state.grade(&bank.bank_id).grade)?;
            let item_id = draw_item(&pmf, &ranking, &mut rng)?.to_string();
            let pos = bank.position(&item_id).expect("ranked item is in the bank");
            let item = &bank.items[pos];
            let n_answers = item.answers.len();
            let correct_index = item.correct_index();
            let correct = simulate_response(&student, &params[pos], n_answers, &mut rng);
            let chosen = if correct {
                correct_index
            } else {
                let k = rng.random_range(0..n_answers - 1);
                if k >= correct_index {
                    k + 1
                } else {
                    k
                }
            };
            let timestamp = epoch + Duration::seconds(log.len() as i64);
            log.push(record_response(&mut state, bank, &item_id, chosen, timestamp)?);
            student.ability += student.learning_rate;
        }
    }
    Ok(log)
}

/// Exam scores from the random-intercept model over a randomized crossover.
pub fn simulate_crossover(config: &SimConfig) -> Result<Vec<ExamRecord>, SimError> {
    config.validate()?;
    let c = config
        .crossover
        .as_ref()
        .ok_or_else(|| SimError::Config("no crossover block".into()))?;
    let mut rng = config.stream(CROSSOVER_STREAM);
    let ids: Vec<String> = (0..config.n_students).map(sim_student_id).collect();
    let schedule = randomize_crossover(&ids, &mut rng)?;
    let b_dist = Normal::new(0.0, c.sigma_b).expect("validated sd");
    let e_dist = Normal::new(0.0, c.sigma).expect("validated sd");

    let mut out = Vec::new();
    for a in &schedule.assignments {
        let strong = rng.random_bool(c.strong_fraction);
        let b = b_dist.sample(&mut rng);
        let mut kept: Vec<ExamRecord> = Vec::new();
        let mut first = None;
        for exam in 1..=c.n_exams {
            let treatment = a.treatment_for(exam);
            let tw = f64::from(u8::from(treatment == Treatment::Tutorweb));
            let s = f64::from(u8::from(strong));
            let mean = c.effects.intercept
                + c.effects.treatment * tw
                + c.effects.math * s
                + c.effects.interaction * tw * s
                + if exam > 1 { c.effects.exam[usize::from(exam - 2)] } else { 0.0 };
            let mut score = mean + b + e_dist.sample(&mut rng);
            if let Some((lo, hi)) = c.score_range {
                score = score.clamp(lo, hi);
            }
            let missed = rng.random_bool(c.missing_rate);
            let record = ExamRecord {
                student_id: a.student_id.clone(),
                exam,
                treatment,
                math: if strong { MathBackground::Strong } else { MathBackground::Weak },
                score,
            };
            if first.is_none() {
                first = Some(record.clone());
            }
            if !missed {
                kept.push(record);
            }
        }
        if kept.is_empty() {
            kept.extend(first);
        }
        out.extend(kept);
    }
    Ok(out)
}

/// Complete response matrix with every student answering every item once,
/// abilities drawn from N(0, 1) and no guessers.
pub fn simulate_matrix(model: &IrtModel, n_students: usize, seed: u64) -> Result<ResponseMatrix, SimError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let items: Vec<ItemParams> = (0..model.n_items()).map(|i| model.item(i)).collect::<Result<_, _>>()?;
    let mut cells = Vec::with_capacity(n_students * items.len());
    for m in 0..n_students {
        let z: f64 = rng.sample(StandardNormal);
        for (i, item) in items.iter().enumerate() {
            cells.push((m, i, rng.random::<f64>() < item.prob(z)));
        }
    }
    let students = (0..n_students).map(sim_student_id).collect();
    Ok(ResponseMatrix::from_cells(students, model.item_ids.clone(), cells)?)
}

/// Everything one config produces.
#[derive(Debug, Clone, PartialEq)]
pub struct SimOutput {
    pub model: Option<IrtModel>,
    pub bank: Option<ItemBank>,
    pub log: Vec<ResponseRecord>,
    pub exams: Option<Vec<ExamRecord>>,
}

pub fn simulate(config: &SimConfig) -> Result<SimOutput, SimError> {
    config.validate()?;
    let (model, bank, log) = match &config.bank {
        Some(spec) => {
            let model = generating_model(config)?;
            let mut bank = build_bank(&model, spec.n_answers);
            let log = run_sessions(config, &model, &mut bank)?;
            bank.reset_counters();
            (Some(model), Some(bank), log)
        }
        None if config.questions_per_student > 0 => {
            return Err(SimError::Config("questions_per_student needs a bank block".into()))
        }
        None => (None, None, vec![]),
    };
    let exams = match config.crossover {
        Some(_) => Some(simulate_crossover(config)?),
        None => None,
    };
    Ok(SimOutput { model, bank, log, exams })
}
