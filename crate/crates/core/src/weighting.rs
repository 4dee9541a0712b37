//! Participation-aware re-weighting.
//!
//! Every news item `i` gets a silence score
//!
//! ```text
//! ω_i = w_L·#lurkers_i + w_E·#engagers_i + w_C·#contributors_i
//! ```
//!
//! counted over the users that interacted with it (defaults 0.9 / 0.09 / 0.01).
//! The score turns into a multiplicative factor `(1 + ω_i / ‖ω‖)^α`, applied
//! either to all edges of the news row (edge re-weighting) or to the sample's
//! cross-entropy term inside a batch (sample re-weighting, with `‖ω‖` taken
//! over the batch).

use serde::{Deserialize, Serialize};

use crate::corpus::{InteractionMatrix, MatrixKind};
use crate::error::{Error, Result};
use crate::participation::{row_group_counts, Profiles, UserGroup};

/// Probabilities are clamped to `[CLAMP_EPS, 1 - CLAMP_EPS]` before taking logs.
pub const CLAMP_EPS: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct GroupCounts {
    pub lurkers: u64,
    pub engagers: u64,
    pub contributors: u64,
}

impl GroupCounts {
    pub fn add(&mut self, g: UserGroup) {
        match g {
            UserGroup::Lurker => self.lurkers += 1,
            UserGroup::Engager => self.engagers += 1,
            UserGroup::Contributor => self.contributors += 1,
        }
    }

    pub fn get(&self, g: UserGroup) -> u64 {
        match g {
            UserGroup::Lurker => self.lurkers,
            UserGroup::Engager => self.engagers,
            UserGroup::Contributor => self.contributors,
        }
    }

    pub fn total(&self) -> u64 {
        self.lurkers + self.engagers + self.contributors
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupCoefficients {
    pub lurker: f64,
    pub engager: f64,
    pub contributor: f64,
}

impl Default for GroupCoefficients {
    fn default() -> Self {
        GroupCoefficients {
            lurker: 0.9,
            engager: 0.09,
            contributor: 0.01,
        }
    }
}

impl GroupCoefficients {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lurker", self.lurker),
            ("engager", self.engager),
            ("contributor", self.contributor),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!(
                    "coefficient `{name}` must be finite and >= 0, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// How `‖ω‖` is measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormKind {
    #[default]
    L2,
    L1,
    Max,
}

impl NormKind {
    /// Norm of `values`, or 1 when every value is zero.
    ///
    /// Values are accumulated in iteration order.
    pub fn of(self, values: impl IntoIterator<Item = f64>) -> f64 {
        let n = match self {
            NormKind::L2 => values.into_iter().map(|v| v * v).sum::<f64>().sqrt(),
            NormKind::L1 => values.into_iter().map(f64::abs).sum::<f64>(),
            NormKind::Max => values.into_iter().fold(0.0, |m: f64, v| m.max(v.abs())),
        };
        if n > 0.0 {
            n
        } else {
            1.0
        }
    }
}

/// Which news items the edge re-weighting norm is computed over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormScope {
    /// Training news only; the same norm is reused for test news.
    #[default]
    Train,
    /// Every news item in the corpus.
    All,
}

/// The weighting block of a run configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WeightingConfig {
    pub alpha: f64,
    pub coefficients: GroupCoefficients,
    pub norm_kind: NormKind,
    pub norm_scope: NormScope,
}

impl Default for WeightingConfig {
    fn default() -> Self {
        WeightingConfig {
            alpha: 1.0,
            coefficients: GroupCoefficients::default(),
            norm_kind: NormKind::L2,
            norm_scope: NormScope::Train,
        }
    }
}

impl WeightingConfig {
    pub fn validate(&self) -> Result<()> {
        validate_alpha(self.alpha)?;
        self.coefficients.validate()
    }
}

pub(crate) fn validate_alpha(alpha: f64) -> Result<()> {
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(Error::Config(format!("alpha must be finite and >= 0, got {alpha}")));
    }
    Ok(())
}

/// Per-news silence scores together with the norm and exponent that turn them into factors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightVector {
    pub omega: Vec<f64>,
    pub norm: f64,
    pub alpha: f64,
}

impl WeightVector {
    /// Norm taken over every entry of `omega`.
    pub fn new(omega: Vec<f64>, alpha: f64, kind: NormKind) -> Self {
        let norm = kind.of(omega.iter().copied());
        WeightVector { omega, norm, alpha }
    }

    /// Norm taken over the entries at `rows` only (in the given order).
    pub fn with_norm_over(omega: Vec<f64>, alpha: f64, kind: NormKind, rows: &[usize]) -> Self {
        let norm = kind.of(rows.iter().map(|&i| omega[i]));
        WeightVector { omega, norm, alpha }
    }

    pub fn len(&self) -> usize {
        self.omega.len()
    }

    pub fn is_empty(&self) -> bool {
        self.omega.is_empty()
    }

    /// `(1 + ω_i / ‖ω‖)^α`.
    pub fn factor(&self, i: usize) -> f64 {
        reweight_factor(self.omega[i], self.norm, self.alpha)
    }

    pub fn factors(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.factor(i)).collect()
    }
}

#[inline]
pub fn reweight_factor(omega: f64, norm: f64, alpha: f64) -> f64 {
    (1.0 + omega / norm).powf(alpha)
}

pub fn news_weight(counts: &GroupCounts, coeffs: &GroupCoefficients) -> f64 {
    coeffs.lurker * counts.lurkers as f64
        + coeffs.engager * counts.engagers as f64
        + coeffs.contributor * counts.contributors as f64
}

/// `ω` for every row of a binary matrix.
pub fn omega_per_row(
    matrix: &InteractionMatrix,
    profiles: &Profiles,
    coeffs: &GroupCoefficients,
) -> Result<Vec<f64>> {
    let groups = profiles.column_groups(matrix)?;
    Ok((0..matrix.n_news())
        .map(|i| news_weight(&row_group_counts(matrix, &groups, i), coeffs))
        .collect())
}

/// Silence scores of all news with the norm taken over the whole vector.
pub fn weight_vector(
    matrix: &InteractionMatrix,
    profiles: &Profiles,
    coeffs: &GroupCoefficients,
    alpha: f64,
    norm: NormKind,
) -> Result<WeightVector> {
    validate_alpha(alpha)?;
    Ok(WeightVector::new(omega_per_row(matrix, profiles, coeffs)?, alpha, norm))
}

/// Replace every stored entry of row `i` by `(1 + ω_i/‖ω‖)^α`; zeros stay zero.
pub fn edge_reweight(matrix: &InteractionMatrix, wv: &WeightVector) -> Result<InteractionMatrix> {
    if matrix.kind() != MatrixKind::Binary {
        return Err(Error::Contract("edge re-weighting expects a binary matrix".into()));
    }
    if wv.len() != matrix.n_news() {
        return Err(Error::Contract(format!(
            "weight vector has {} entries for {} news rows",
            wv.len(),
            matrix.n_news()
        )));
    }
    Ok(matrix.with_row_values(|i| wv.factor(i)))
}

/// Per-sample loss factors with `‖ω‖` taken over the batch.
pub fn sample_factors(batch_omega: &[f64], alpha: f64, kind: NormKind) -> Vec<f64> {
    let norm = kind.of(batch_omega.iter().copied());
    batch_omega
        .iter()
        .map(|&w| reweight_factor(w, norm, alpha))
        .collect()
}

/// Batch-wise sample factors for the given news ids.
pub fn batch_sample_weights(
    batch_news_ids: &[&str],
    matrix: &InteractionMatrix,
    profiles: &Profiles,
    coeffs: &GroupCoefficients,
    alpha: f64,
    norm: NormKind,
) -> Result<Vec<f64>> {
    if batch_news_ids.is_empty() {
        return Err(Error::Contract("batch must not be empty".into()));
    }
    validate_alpha(alpha)?;
    let groups = profiles.column_groups(matrix)?;
    let omega = batch_news_ids
        .iter()
        .map(|id| {
            let row = matrix
                .row_of(id)
                .ok_or_else(|| Error::Contract(format!("unknown news id `{id}`")))?;
            Ok(news_weight(&row_group_counts(matrix, &groups, row), coeffs))
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(sample_factors(&omega, alpha, norm))
}

#[inline]
pub fn clamp_probability(p: f64) -> f64 {
    p.clamp(CLAMP_EPS, 1.0 - CLAMP_EPS)
}

/// `y·ln(ŷ) + (1 − y)·ln(1 − ŷ)` with `ŷ` clamped; never positive.
///
/// The sign flip lives in [`balanced_loss`].
pub fn ce_loss(y: f64, y_hat: f64) -> f64 {
    let p = clamp_probability(y_hat);
    y * p.ln() + (1.0 - y) * (1.0 - p).ln()
}

/// `−(1/M) Σ factor_i · ce_loss(y_i, ŷ_i)`.
pub fn balanced_loss(y: &[f64], y_hat: &[f64], factors: &[f64]) -> Result<f64> {
    if y.len() != y_hat.len() || y.len() != factors.len() {
        return Err(Error::Contract(format!(
            "balanced loss length mismatch: {} labels, {} predictions, {} factors",
            y.len(),
            y_hat.len(),
            factors.len()
        )));
    }
    if y.is_empty() {
        return Err(Error::Contract("balanced loss needs at least one sample".into()));
    }
    let sum: f64 = y
        .iter()
        .zip(y_hat)
        .zip(factors)
        .map(|((&y, &p), &f)| f * ce_loss(y, p))
        .sum();
    Ok(-sum / y.len() as f64)
}
