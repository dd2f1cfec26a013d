//! Likelihood-ratio comparison of the nested response models.

use serde::{Deserialize, Serialize};

use super::fit::{fit, fit_from, FitConfig};
use super::matrix::ResponseMatrix;
use super::model::{IrtModel, Variant};
use super::IrtError;
use crate::stats::{likelihood_ratio_test, LrtResult};

pub fn lrt_compare(smaller: &IrtModel, larger: &IrtModel) -> Result<LrtResult, IrtError> {
    if smaller.variant >= larger.variant || smaller.item_ids != larger.item_ids {
        return Err(IrtError::NotNested {
            smaller: smaller.variant,
            larger: larger.variant,
        });
    }
    Ok(likelihood_ratio_test(
        smaller.loglik,
        larger.loglik,
        larger.n_params - smaller.n_params,
    )?)
}

/// Fits M1 through M4, each started from the previous optimum so the
/// log-likelihoods cannot decrease along the chain.
pub fn fit_nested_chain(matrix: &ResponseMatrix, config: &FitConfig) -> Result<Vec<IrtModel>, IrtError> {
    let mut chain: Vec<IrtModel> = Vec::with_capacity(4);
    chain.push(fit(matrix, Variant::M1, config)?);
    for variant in [Variant::M2, Variant::M3, Variant::M4] {
        let start = chain.last().expect("chain is non-empty").recast(variant);
        chain.push(fit_from(matrix, &start, config)?);
    }
    Ok(chain)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub smaller: Variant,
    pub larger: Variant,
    #[serde(flatten)]
    pub test: LrtResult,
    pub accepted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub selected: Variant,
    pub models: Vec<IrtModel>,
    pub comparisons: Vec<Comparison>,
}

impl Selection {
    pub fn model(&self) -> &IrtModel {
        self.get(self.selected).expect("selected model was fitted")
    }

    pub fn get(&self, variant: Variant) -> Option<&IrtModel> {
        self.models.iter().find(|m| m.variant == variant)
    }
}

/// Walks up M1 → M2 → M3 → M4. Each candidate is tested against the
/// currently accepted model and replaces it only when `p < alpha`; a
/// rejected candidate does not stop the walk.
pub fn select_model(matrix: &ResponseMatrix, alpha: f64, config: &FitConfig) -> Result<Selection, IrtError> {
    let models = fit_nested_chain(matrix, config)?;
    let mut current = 0;
    let mut comparisons = Vec::new();
    for k in 1..models.len() {
        let test = lrt_compare(&models[current], &models[k])?;
        let accepted = test.p_value < alpha;
        comparisons.push(Comparison {
            smaller: models[current].variant,
            larger: models[k].variant,
            test,
            accepted,
        });
        if accepted {
            current = k;
        }
    }
    Ok(Selection {
        selected: models[current].variant,
        models,
        comparisons,
    })
}
