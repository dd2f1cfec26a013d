//! Subcommands of the `quiz` binary. Each writes its primary output to the
//! given writer so that it can be exercised without a process boundary.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use quiz_core::allocation::{allocation_pmf, AllocationMode, AllocationPolicy};
use quiz_core::bank::{empirical_difficulty, rank_by_difficulty, ItemBank};
use quiz_core::crossover::{
    backward_eliminate, read_exams_file, write_exams, Elimination, LmmFit, Term, TREATMENT_COLUMN,
};
use quiz_core::irt::{
    average_student_report, fit, select_model, FitConfig, IrtModel, ResponseMatrix, Selection, Variant,
};
use quiz_core::log::{read_log, write_log};
use quiz_core::sim::{simulate, SimConfig};
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(name = "quiz", version, about = "Adaptive quiz engine")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the HTTP quiz service.
    Serve {
        #[arg(long)]
        config: PathBuf,
    },
    /// Generate synthetic response logs and exam scores.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also write crossover exam scores (needs a crossover block).
        #[arg(long)]
        exams: Option<PathBuf>,
        /// Write the generated item bank.
        #[arg(long)]
        bank_out: Option<PathBuf>,
        /// Write the generating item parameters.
        #[arg(long)]
        model_out: Option<PathBuf>,
    },
    /// Fit item response models to a response log.
    Calibrate {
        #[arg(long)]
        log: PathBuf,
        #[arg(long)]
        bank: PathBuf,
        #[arg(long, value_enum, default_value_t = VariantArg::Auto)]
        variant: VariantArg,
        #[arg(long)]
        out: PathBuf,
        /// Significance level for stepping up the nested models.
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        #[arg(long, default_value_t = 21)]
        quadrature: usize,
        /// Per-item report CSV; printed when omitted.
        #[arg(long)]
        report: Option<PathBuf>,
        /// Histogram CSV; printed when omitted.
        #[arg(long)]
        histogram: Option<PathBuf>,
    },
    /// Analyze a crossover experiment with backward elimination.
    Analyze {
        #[arg(long)]
        exams: PathBuf,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        #[arg(long, default_value_t = 0.95)]
        level: f64,
        /// JSON report; printed after the text report when omitted.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Print the allocation probabilities by difficulty rank.
    Pmf {
        #[arg(long)]
        items: usize,
        #[arg(long)]
        grade: f64,
        #[arg(long, default_value_t = 0.85)]
        q: f64,
        #[arg(long, default_value_t = 0.5)]
        m: f64,
        #[arg(long)]
        uniform: bool,
        /// Draw a bar chart on stderr.
        #[arg(long)]
        plot: bool,
    },
    /// Rank a bank's items by empirical difficulty.
    Rank {
        #[arg(long)]
        bank: PathBuf,
        /// Count answers from this response log.
        #[arg(long)]
        log: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum VariantArg {
    Auto,
    M1,
    M2,
    M3,
    M4,
}

impl VariantArg {
    fn variant(self) -> Option<Variant> {
        match self {
            VariantArg::Auto => None,
            VariantArg::M1 => Some(Variant::M1),
            VariantArg::M2 => Some(Variant::M2),
            VariantArg::M3 => Some(Variant::M3),
            VariantArg::M4 => Some(Variant::M4),
        }
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn to_json(value: &impl Serialize) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

/// Runs every subcommand except `serve`.
pub fn run(command: Command, out: &mut dyn Write) -> Result<()> {
    match command {
        Command::Serve { .. } => bail!("serve runs inside the quiz binary's async runtime"),
        Command::Simulate {
            config,
            out: log_path,
            exams,
            bank_out,
            model_out,
        } => run_simulate(&config, &log_path, exams.as_deref(), bank_out.as_deref(), model_out.as_deref()),
        Command::Calibrate {
            log,
            bank,
            variant,
            out: model_path,
            alpha,
            quadrature,
            report,
            histogram,
        } => {
            let config = FitConfig {
                quadrature_nodes: quadrature,
                ..FitConfig::default()
            };
            let calibration = calibrate(&log, &bank, variant.variant(), alpha, &config)?;
            if let Some(selection) = &calibration.selection {
                for c in &selection.comparisons {
                    eprintln!(
                        "{} vs {}: stat {:.3}, df {}, p {:.4}{}",
                        c.smaller,
                        c.larger,
                        c.test.stat,
                        c.test.df,
                        c.test.p_value,
                        if c.accepted { ", accepted" } else { "" }
                    );
                }
            }
            let model = calibration.model();
            eprintln!("{}: loglik {:.4}, {} parameters", model.variant, model.loglik, model.n_params);
            write_text(&model_path, &to_json(model)?)?;

            let summary = average_student_report(model);
            match report {
                Some(path) => write_text(&path, &summary.to_csv())?,
                None => out.write_all(summary.to_csv().as_bytes())?,
            }
            match histogram {
                Some(path) => write_text(&path, &summary.histogram_csv())?,
                None => {
                    writeln!(out)?;
                    out.write_all(summary.histogram_csv().as_bytes())?
                }
            }
            if summary.all_easy {
                eprintln!("warning: every item is easier than even odds for an average student");
            }
            Ok(())
        }
        Command::Analyze {
            exams,
            alpha,
            level,
            json,
        } => {
            let records = read_exams_file(&exams).with_context(|| format!("reading {}", exams.display()))?;
            let elimination = backward_eliminate(&records, alpha)?;
            let report = AnalysisReport::new(&elimination, level)?;
            out.write_all(report.to_text().as_bytes())?;
            match json {
                Some(path) => write_text(&path, &to_json(&report)?)?,
                None => {
                    writeln!(out)?;
                    out.write_all(to_json(&report)?.as_bytes())?;
                }
            }
            Ok(())
        }
        Command::Pmf {
            items,
            grade,
            q,
            m,
            uniform,
            plot,
        } => {
            let policy = AllocationPolicy {
                q,
                m,
                mode: if uniform {
                    AllocationMode::Uniform
                } else {
                    AllocationMode::GradeAdaptive
                },
            };
            let pmf = allocation_pmf(&policy, items, grade)?;
            writeln!(out, "rank,probability")?;
            for (k, p) in pmf.iter().enumerate() {
                writeln!(out, "{},{}", k + 1, p)?;
            }
            if plot {
                let top = pmf.iter().copied().fold(0.0, f64::max);
                for (k, p) in pmf.iter().enumerate() {
                    let width = if top > 0.0 { (p / top * 60.0).round() as usize } else { 0 };
                    eprintln!("{:>5} {:<60} {:.4}", k + 1, "#".repeat(width), p);
                }
            }
            Ok(())
        }
        Command::Rank { bank, log } => {
            let mut bank = ItemBank::load(&bank)?;
            if let Some(log) = log {
                let bank_id = bank.bank_id.clone();
                for r in read_log(&log)?.iter().filter(|r| r.bank_id == bank_id) {
                    let item = bank
                        .item_mut(&r.item_id)
                        .with_context(|| format!("log names unknown item `{}`", r.item_id))?;
                    item.count_answer(r.correct);
                }
            }
            let ranking = rank_by_difficulty(&bank)?;
            writeln!(out, "rank,item_id,difficulty,times_answered,times_correct")?;
            for (k, id) in ranking.items().iter().enumerate() {
                let item = bank.item(id).expect("ranked item is in the bank");
                writeln!(
                    out,
                    "{},{},{},{},{}",
                    k + 1,
                    id,
                    empirical_difficulty(item),
                    item.times_answered,
                    item.times_correct
                )?;
            }
            Ok(())
        }
    }
}

fn run_simulate(
    config: &Path,
    log_path: &Path,
    exams: Option<&Path>,
    bank_out: Option<&Path>,
    model_out: Option<&Path>,
) -> Result<()> {
    let text = std::fs::read_to_string(config).with_context(|| format!("reading {}", config.display()))?;
    let config: SimConfig =
        serde_json::from_str(&text).with_context(|| format!("parsing simulator config {}", config.display()))?;
    if exams.is_some() && config.crossover.is_none() {
        bail!("--exams needs a crossover block in the simulator config");
    }
    let output = simulate(&config)?;
    let mut w = create(log_path)?;
    write_log(&mut w, &output.log)?;
    w.flush()?;
    if let (Some(path), Some(records)) = (exams, &output.exams) {
        let mut w = create(path)?;
        write_exams(&mut w, records)?;
        w.flush()?;
    }
    if let Some(path) = bank_out {
        let bank = output.bank.as_ref().context("--bank-out needs a bank block in the simulator config")?;
        write_text(path, &(bank.to_json_pretty() + "\n"))?;
    }
    if let Some(path) = model_out {
        let model = output.model.as_ref().context("--model-out needs a bank block in the simulator config")?;
        write_text(path, &to_json(model)?)?;
    }
    Ok(())
}

/// Result of `quiz calibrate`: either one requested variant or a full
/// nested-model selection.
#[derive(Debug, Clone)]
pub struct Calibration {
    pub matrix: ResponseMatrix,
    pub fitted: Option<IrtModel>,
    pub selection: Option<Selection>,
}

impl Calibration {
    pub fn model(&self) -> &IrtModel {
        match (&self.fitted, &self.selection) {
            (Some(m), _) => m,
            (None, Some(s)) => s.model(),
            (None, None) => unreachable!("calibration holds a model"),
        }
    }
}

pub fn calibrate(
    log: &Path,
    bank: &Path,
    variant: Option<Variant>,
    alpha: f64,
    config: &FitConfig,
) -> Result<Calibration> {
    let records = read_log(log)?;
    let bank = ItemBank::load(bank)?;
    let matrix = ResponseMatrix::from_log(&records, &bank)?;
    let (fitted, selection) = match variant {
        Some(v) => (Some(fit(&matrix, v, config)?), None),
        None => (None, Some(select_model(&matrix, alpha, config)?)),
    };
    Ok(Calibration {
        matrix,
        fitted,
        selection,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct Coefficient {
    pub name: String,
    pub estimate: f64,
    pub std_error: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct TreatmentInterval {
    pub level: f64,
    pub estimate: f64,
    pub std_error: f64,
    pub lower: f64,
    pub upper: f64,
    /// Terms of the model the interval was read from.
    pub model_terms: Vec<Term>,
}

#[derive(Debug, Clone, Serialize)]
pub struct AnalysisReport {
    pub alpha: f64,
    pub n_obs: usize,
    pub n_students: usize,
    pub steps: Vec<quiz_core::crossover::EliminationStep>,
    pub final_terms: Vec<Term>,
    pub coefficients: Vec<Coefficient>,
    pub sigma_b2: f64,
    pub sigma2: f64,
    pub loglik: f64,
    pub treatment: TreatmentInterval,
}

fn coefficients(fit: &LmmFit) -> Vec<Coefficient> {
    fit.columns
        .iter()
        .zip(&fit.coefficients)
        .enumerate()
        .map(|(i, (name, &estimate))| Coefficient {
            name: name.clone(),
            estimate,
            std_error: fit.cov_fixed[i][i].max(0.0).sqrt(),
        })
        .collect()
}

impl AnalysisReport {
    pub fn new(elimination: &Elimination, level: f64) -> Result<Self> {
        let fit = &elimination.final_fit;
        let tf = &elimination.treatment_fit;
        let (lower, upper) = elimination.treatment_interval(level)?;
        let column = TREATMENT_COLUMN;
        Ok(Self {
            alpha: elimination.alpha,
            n_obs: fit.n_obs,
            n_students: fit.n_students,
            steps: elimination.steps.clone(),
            final_terms: fit.terms.clone(),
            coefficients: coefficients(fit),
            sigma_b2: fit.sigma_b2,
            sigma2: fit.sigma2,
            loglik: fit.loglik,
            treatment: TreatmentInterval {
                level,
                estimate: tf.coefficient(column).expect("treatment fit has the column"),
                std_error: tf.std_error(column).expect("treatment fit has the column"),
                lower,
                upper,
                model_terms: tf.terms.clone(),
            },
        })
    }

    pub fn to_text(&self) -> String {
        let mut s = format!(
            "{} scores from {} students, alpha = {}\n\nElimination\n",
            self.n_obs, self.n_students, self.alpha
        );
        for step in &self.steps {
            s += &format!(
                "  {:<12} stat {:>8.4}  df {}  p {:.4}  {}\n",
                step.term.to_string(),
                step.test.stat,
                step.test.df,
                step.test.p_value,
                if step.dropped { "dropped" } else { "kept" }
            );
        }
        let terms: Vec<String> = self.final_terms.iter().map(Term::to_string).collect();
        s += &format!("\nFinal model: {} + (1 | student)\n", terms.join(" + "));
        for c in &self.coefficients {
            s += &format!("  {:<34} {:>10.4}  se {:.4}\n", c.name, c.estimate, c.std_error);
        }
        s += &format!(
            "\nVariance components\n  student   {:.4}\n  residual  {:.4}\nloglik {:.4}\n",
            self.sigma_b2, self.sigma2, self.loglik
        );
        let t = &self.treatment;
        s += &format!(
            "\nTreatment effect (tutor-web minus traditional) {:.4}, se {:.4}\n{}% interval ({:.4}, {:.4})\n",
            t.estimate,
            t.std_error,
            t.level * 100.0,
            t.lower,
            t.upper
        );
        s
    }
}
