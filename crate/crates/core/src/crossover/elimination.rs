use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use super::design::{design_matrix, TREATMENT_COLUMN};
use super::lmm::LmmFit;
use super::{CrossoverError, ExamRecord, Term};
use crate::stats::{likelihood_ratio_test, normal_quantile, LrtResult, StatsError};

/// Likelihood-ratio test of `reduced` against `full`, both ML fits to the
/// same scores and students, with `df` equal to the difference in fixed
/// parameters.
pub fn lrt_term(full: &LmmFit, reduced: &LmmFit) -> Result<LrtResult, CrossoverError> {
    let not_nested = |why: &str| Err(CrossoverError::NotNested(why.to_string()));
    if full.data_key != reduced.data_key || full.n_obs != reduced.n_obs {
        return not_nested("fits use different data");
    }
    if !reduced.terms.iter().all(|t| full.terms.contains(t)) {
        return not_nested("reduced model has a term the full model lacks");
    }
    if !reduced.columns.iter().all(|c| full.columns.contains(c)) || reduced.n_fixed() > full.n_fixed() {
        return not_nested("reduced columns are not a subset of the full columns");
    }
    Ok(likelihood_ratio_test(
        reduced.loglik,
        full.loglik,
        full.n_fixed() - reduced.n_fixed(),
    )?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EliminationStep {
    pub term: Term,
    #[serde(flatten)]
    pub test: LrtResult,
    pub dropped: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Elimination {
    pub alpha: f64,
    pub steps: Vec<EliminationStep>,
    pub final_fit: LmmFit,
    /// Smallest fitted model that still has a treatment coefficient; the
    /// treatment interval is read from here even when treatment is dropped.
    pub treatment_fit: LmmFit,
}

impl Elimination {
    pub fn final_terms(&self) -> &[Term] {
        &self.final_fit.terms
    }

    pub fn treatment_dropped(&self) -> bool {
        !self.final_fit.has_term(Term::Treatment)
    }

    pub fn treatment_interval(&self, level: f64) -> Result<(f64, f64), CrossoverError> {
        treatment_ci(&self.treatment_fit, level)
    }
}

fn fit_terms(records: &[ExamRecord], terms: &[Term]) -> Result<LmmFit, CrossoverError> {
    design_matrix(records, terms)?.fit()
}

/// Starts from the full model, tests the interaction, and if it is dropped
/// (`p >= alpha`) tests treatment. Math and exam are always kept.
pub fn backward_eliminate(records: &[ExamRecord], alpha: f64) -> Result<Elimination, CrossoverError> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(StatsError::Probability(alpha).into());
    }
    let full = fit_terms(records, &Term::ALL)?;
    let main = fit_terms(records, &[Term::Treatment, Term::Math, Term::Exam])?;
    let interaction = lrt_term(&full, &main)?;
    let mut steps = vec![EliminationStep {
        term: Term::Interaction,
        test: interaction,
        dropped: interaction.p_value >= alpha,
    }];
    if !steps[0].dropped {
        return Ok(Elimination {
            alpha,
            steps,
            treatment_fit: full.clone(),
            final_fit: full,
        });
    }
    let reduced = fit_terms(records, &[Term::Math, Term::Exam])?;
    let treatment = lrt_term(&main, &reduced)?;
    let dropped = treatment.p_value >= alpha;
    steps.push(EliminationStep {
        term: Term::Treatment,
        test: treatment,
        dropped,
    });
    Ok(Elimination {
        alpha,
        steps,
        final_fit: if dropped { reduced } else { main.clone() },
        treatment_fit: main,
    })
}

/// Two-sided Wald interval `estimate ± z · se`.
pub fn wald_interval(estimate: f64, se: f64, level: f64) -> Result<(f64, f64), StatsError> {
    if !(level > 0.0 && level < 1.0) {
        return Err(StatsError::Probability(level));
    }
    let z = normal_quantile(0.5 + level / 2.0)?;
    Ok((estimate - z * se, estimate + z * se))
}

/// Two-sided Wald p-value for `estimate / se`.
pub fn wald_p_value(estimate: f64, se: f64) -> f64 {
    if se == 0.0 {
        return if estimate == 0.0 { 1.0 } else { 0.0 };
    }
    2.0 * Normal::standard().sf((estimate / se).abs())
}

/// Wald interval for the tutor-web minus traditional contrast.
pub fn treatment_ci(fit: &LmmFit, level: f64) -> Result<(f64, f64), CrossoverError> {
    let i = fit.index_of(TREATMENT_COLUMN).ok_or(CrossoverError::TreatmentAbsent)?;
    let se = fit.cov_fixed[i][i].max(0.0).sqrt();
    Ok(wald_interval(fit.coefficients[i], se, level)?)
}
