//! Two-objective frontier over (complexity, MEDL).

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::Expression;
use crate::mdl::ModelScore;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParetoModel {
    pub expr: Expression,
    pub score: ModelScore,
    /// Which strategy produced the model, e.g. `brute`, `polyfit`,
    /// `snap:integer`, `sep+(brute,polyfit)`.
    pub provenance: String,
}

impl ParetoModel {
    pub fn new(expr: Expression, score: ModelScore, provenance: impl Into<String>) -> Self {
        ParetoModel {
            expr,
            score,
            provenance: provenance.into(),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum InsertError {
    #[error("model score is not finite ({complexity} bits, {medl} bits)")]
    NonFinite { complexity: f64, medl: f64 },
}

/// True iff `a` is no worse than `b` in both coordinates and better in one.
pub fn dominates(a: &ModelScore, b: &ModelScore) -> bool {
    a.complexity_bits <= b.complexity_bits
        && a.medl_bits <= b.medl_bits
        && (a.complexity_bits < b.complexity_bits || a.medl_bits < b.medl_bits)
}

/// Models sorted by complexity ascending, MEDL strictly descending.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ParetoFrontier {
    models: Vec<ParetoModel>,
}

impl ParetoFrontier {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn models(&self) -> &[ParetoModel] {
        &self.models
    }

    pub fn into_models(self) -> Vec<ParetoModel> {
        self.models
    }

    pub fn len(&self) -> usize {
        self.models.len()
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }

    /// Most accurate member (the last one).
    pub fn best(&self) -> Option<&ParetoModel> {
        self.models.last()
    }

    /// Offers a model. Returns whether it was kept. An existing model with the
    /// same score wins unless the newcomer has the smaller canonical key.
    pub fn insert(&mut self, model: ParetoModel) -> Result<bool, InsertError> {
        let s = model.score;
        if !s.is_finite() {
            return Err(InsertError::NonFinite {
                complexity: s.complexity_bits,
                medl: s.medl_bits,
            });
        }
        if let Some(same) = self.models.iter().position(|m| m.score == s) {
            if model.expr.canonical_key() < self.models[same].expr.canonical_key() {
                self.models[same] = model;
                return Ok(true);
            }
            return Ok(false);
        }
        if self.models.iter().any(|m| dominates(&m.score, &s)) {
            return Ok(false);
        }
        self.models.retain(|m| !dominates(&s, &m.score));
        let at = self
            .models
            .partition_point(|m| m.score.complexity_bits < s.complexity_bits);
        self.models.insert(at, model);
        Ok(true)
    }

    /// Inserts every finite model; non-finite ones are skipped.
    pub fn extend(&mut self, models: impl IntoIterator<Item = ParetoModel>) {
        for m in models {
            let _ = self.insert(m);
        }
    }

    pub fn merge(&mut self, other: ParetoFrontier) {
        self.extend(other.models);
    }

    pub fn from_models(models: impl IntoIterator<Item = ParetoModel>) -> Self {
        let mut f = ParetoFrontier::new();
        f.extend(models);
        f
    }

    /// Lowest MEDL among members no more complex than `bits`.
    pub fn medl_at(&self, bits: f64) -> Option<f64> {
        self.models
            .iter()
            .filter(|m| m.score.complexity_bits <= bits)
            .map(|m| m.score.medl_bits)
            .min_by(f64::total_cmp)
    }
}

/// Frontier of every pairwise combination of `fa` and `fb`.
pub fn merge_compose(
    fa: &ParetoFrontier,
    fb: &ParetoFrontier,
    combine: impl Fn(&ParetoModel, &ParetoModel) -> Option<ParetoModel>,
) -> ParetoFrontier {
    let mut out = ParetoFrontier::new();
    for a in fa.models() {
        for b in fb.models() {
            if let Some(m) = combine(a, b) {
                let _ = out.insert(m);
            }
        }
    }
    out
}

/// Total order on scores used for deterministic listings.
pub fn score_order(a: &ModelScore, b: &ModelScore) -> Ordering {
    a.complexity_bits
        .total_cmp(&b.complexity_bits)
        .then(a.medl_bits.total_cmp(&b.medl_bits))
}
