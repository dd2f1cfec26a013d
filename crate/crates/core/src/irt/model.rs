//! Logistic item response models and their parameter layout.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::IrtError;

pub const BETA_BOUNDS: (f64, f64) = (-6.0, 6.0);
pub const ALPHA_BOUNDS: (f64, f64) = (0.05, 10.0);
pub const GUESSING_BOUNDS: (f64, f64) = (0.0, 0.5);

/// The four nested response models.
///
/// * `M1`: difficulty only, unit slope.
/// * `M2`: difficulty plus one slope shared by every item.
/// * `M3`: difficulty and slope per item.
/// * `M4`: `M3` plus a lower asymptote per item.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    M1,
    M2,
    M3,
    M4,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::M1, Variant::M2, Variant::M3, Variant::M4];

    pub fn n_params(self, n_items: usize) -> usize {
        match self {
            Variant::M1 => n_items,
            Variant::M2 => n_items + 1,
            Variant::M3 => 2 * n_items,
            Variant::M4 => 3 * n_items,
        }
    }

    pub(crate) fn n_alpha(self, n_items: usize) -> usize {
        match self {
            Variant::M1 => 0,
            Variant::M2 => 1,
            Variant::M3 | Variant::M4 => n_items,
        }
    }

    pub(crate) fn has_guessing(self) -> bool {
        self == Variant::M4
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Variant::M1 => "m1",
            Variant::M2 => "m2",
            Variant::M3 => "m3",
            Variant::M4 => "m4",
        };
        f.write_str(s)
    }
}

impl FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "m1" => Ok(Variant::M1),
            "m2" => Ok(Variant::M2),
            "m3" => Ok(Variant::M3),
            "m4" => Ok(Variant::M4),
            other => Err(format!("unknown model variant `{other}`")),
        }
    }
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
#[inline]
pub(crate) fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Parameters of a single item.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ItemParams {
    pub beta: f64,
    pub alpha: f64,
    pub guessing: f64,
}

impl ItemParams {
    pub fn rasch(beta: f64) -> Self {
        Self {
            beta,
            alpha: 1.0,
            guessing: 0.0,
        }
    }

    pub fn prob(&self, z: f64) -> f64 {
        let l = sigmoid(self.alpha * (z - self.beta));
        self.guessing + (1.0 - self.guessing) * l
    }

    /// `(ln P, ln(1 - P))` at ability `z`.
    #[inline]
    pub(crate) fn log_probs(&self, z: f64) -> (f64, f64) {
        let eta = self.alpha * (z - self.beta);
        let c = self.guessing;
        if c == 0.0 {
            (-softplus(-eta), -softplus(eta))
        } else {
            let ln_p = (c + (1.0 - c) * sigmoid(eta)).ln();
            let ln_q = (1.0 - c).ln() - softplus(eta);
            (ln_p, ln_q)
        }
    }
}

/// Reasons a fitted item deserves a second look.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ItemFlag {
    AllCorrect { item_id: String },
    AllWrong { item_id: String },
    AtBound { item_id: String, parameter: String, value: f64 },
}

impl ItemFlag {
    pub fn item_id(&self) -> &str {
        match self {
            ItemFlag::AllCorrect { item_id }
            | ItemFlag::AllWrong { item_id }
            | ItemFlag::AtBound { item_id, .. } => item_id,
        }
    }
}

/// A parameterized (usually fitted) response model over a list of items.
///
/// `alpha` is empty for `M1`, holds the shared slope for `M2` and one slope
/// per item for `M3`/`M4`. `guessing` is only non-empty for `M4`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IrtModel {
    pub variant: Variant,
    pub item_ids: Vec<String>,
    pub beta: Vec<f64>,
    pub alpha: Vec<f64>,
    pub guessing: Vec<f64>,
    /// NaN until fitted; written as `null` in JSON.
    #[serde(deserialize_with = "nan_if_null")]
    pub loglik: f64,
    pub n_params: usize,
    pub quadrature: usize,
    pub converged: bool,
    pub iterations: usize,
    pub flags: Vec<ItemFlag>,
}

fn nan_if_null<'de, D: serde::Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
    Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
}

impl IrtModel {
    /// A model with explicit parameters and no fit attached.
    pub fn with_params(
        variant: Variant,
        item_ids: Vec<String>,
        beta: Vec<f64>,
        alpha: Vec<f64>,
        guessing: Vec<f64>,
    ) -> Result<Self, IrtError> {
        let n = item_ids.len();
        if beta.len() != n
            || alpha.len() != variant.n_alpha(n)
            || guessing.len() != if variant.has_guessing() { n } else { 0 }
        {
            return Err(IrtError::DimensionMismatch(format!(
                "{variant} over {n} items got {} beta, {} alpha, {} guessing values",
                beta.len(),
                alpha.len(),
                guessing.len()
            )));
        }
        Ok(Self {
            variant,
            item_ids,
            beta,
            alpha,
            guessing,
            loglik: f64::NAN,
            n_params: variant.n_params(n),
            quadrature: 0,
            converged: false,
            iterations: 0,
            flags: Vec::new(),
        })
    }

    /// Convenience `M1` model with generated item ids.
    pub fn rasch(beta: Vec<f64>) -> Self {
        let ids = (0..beta.len()).map(|i| format!("i{i:04}")).collect();
        Self::with_params(Variant::M1, ids, beta, vec![], vec![]).expect("consistent lengths")
    }

    pub fn n_items(&self) -> usize {
        self.item_ids.len()
    }

    pub fn item(&self, i: usize) -> Result<ItemParams, IrtError> {
        if i >= self.n_items() {
            return Err(IrtError::ItemIndex(i));
        }
        let alpha = match self.variant {
            Variant::M1 => 1.0,
            Variant::M2 => self.alpha[0],
            Variant::M3 | Variant::M4 => self.alpha[i],
        };
        let guessing = if self.variant.has_guessing() {
            self.guessing[i]
        } else {
            0.0
        };
        Ok(ItemParams {
            beta: self.beta[i],
            alpha,
            guessing,
        })
    }

    pub(crate) fn items(&self) -> Vec<ItemParams> {
        (0..self.n_items())
            .map(|i| self.item(i).expect("index in range"))
            .collect()
    }

    /// Free parameters in the order beta, alpha, guessing.
    pub fn to_vector(&self) -> Vec<f64> {
        self.beta
            .iter()
            .chain(&self.alpha)
            .chain(&self.guessing)
            .copied()
            .collect()
    }

    pub fn set_vector(&mut self, v: &[f64]) -> Result<(), IrtError> {
        if v.len() != self.n_params {
            return Err(IrtError::DimensionMismatch(format!(
                "expected {} parameters, got {}",
                self.n_params,
                v.len()
            )));
        }
        let (b, rest) = v.split_at(self.beta.len());
        let (a, c) = rest.split_at(self.alpha.len());
        self.beta.copy_from_slice(b);
        self.alpha.copy_from_slice(a);
        self.guessing.copy_from_slice(c);
        Ok(())
    }

    /// Same item parameters re-expressed in a (usually larger) variant.
    /// Moving down the chain averages slopes and drops guessing.
    pub fn recast(&self, variant: Variant) -> Self {
        let n = self.n_items();
        let slopes: Vec<f64> = self.items().iter().map(|p| p.alpha).collect();
        let alpha = match variant {
            Variant::M1 => vec![],
            Variant::M2 => vec![slopes.iter().sum::<f64>() / n.max(1) as f64],
            Variant::M3 | Variant::M4 => slopes,
        };
        let guessing = if variant.has_guessing() {
            self.items().iter().map(|p| p.guessing).collect()
        } else {
            vec![]
        };
        let mut out = Self::with_params(variant, self.item_ids.clone(), self.beta.clone(), alpha, guessing)
            .expect("consistent lengths");
        out.quadrature = self.quadrature;
        out
    }
}

/// Probability that a student of ability `z` answers item `i` correctly.
pub fn prob_correct(model: &IrtModel, i: usize, z: f64) -> Result<f64, IrtError> {
    Ok(model.item(i)?.prob(z))
}
