use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::SynthSpec;
use crate::error::{Error, Result};
use crate::search::{BoundKind, GenerationStats, SearchConfig, SearchResult, Strategy};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigRecord {
    pub epsilon: f64,
    pub bound: BoundKind,
    pub strategy: Strategy,
    pub reflections: bool,
}

impl From<&SearchConfig> for ConfigRecord {
    fn from(c: &SearchConfig) -> Self {
        Self {
            epsilon: c.epsilon,
            bound: c.bound_kind,
            strategy: c.strategy,
            reflections: c.allow_reflections,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub ub: f64,
    pub lb: f64,
    pub total_evals: u64,
    pub certificate_valid: bool,
    pub rotation_vec: Vec<f64>,
    pub translation: Vec<f64>,
    pub reflected: bool,
}

/// Serializable summary of one run. `spec` is absent for runs on
/// user-supplied clouds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub spec: Option<SynthSpec>,
    pub config: ConfigRecord,
    pub result: ResultRecord,
    pub generations: Vec<GenerationStats>,
}

impl RunRecord {
    pub fn new(spec: Option<SynthSpec>, config: &SearchConfig, result: &SearchResult) -> Self {
        Self {
            spec,
            config: config.into(),
            result: ResultRecord {
                ub: result.ub,
                lb: result.lb,
                total_evals: result.total_evals,
                certificate_valid: result.certificate_valid,
                rotation_vec: result.minimizer.rot.as_slice().to_vec(),
                translation: result.minimizer.trans.clone(),
                reflected: result.reflected,
            },
            generations: result.generations.clone(),
        }
    }

    /// Pretty-printed JSON. Floats use the shortest representation that
    /// parses back to the same value.
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::InvalidParameter(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::InvalidParameter(e.to_string()))
    }
}

/// Per-generation table as CSV with header `g,evals,live,ub,lb`.
pub fn generations_csv(generations: &[GenerationStats]) -> String {
    let mut out = String::from("g,evals,live,ub,lb\n");
    for g in generations {
        // `{:?}` prints the shortest round-trip form of an f64.
        let _ = writeln!(out, "{},{},{},{:?},{:?}", g.g, g.evals, g.live, g.ub, g.lb);
    }
    out
}

pub const MIN_GENERATIONS_FOR_FIT: usize = 6;

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationTable {
    pub rows: Vec<GenerationStats>,
    pub total_evals: u64,
    /// Geometric mean of `evals(g+1) / evals(g)` over the last third of the
    /// generations; `None` for runs with fewer than
    /// [`MIN_GENERATIONS_FOR_FIT`] generations.
    pub growth_ratio: Option<f64>,
}

pub fn per_generation_stats(generations: &[GenerationStats]) -> GenerationTable {
    let total_evals = generations.iter().map(|g| g.evals).sum();
    let growth_ratio = (generations.len() >= MIN_GENERATIONS_FOR_FIT)
        .then(|| {
            let ratios: Vec<f64> = generations
                .windows(2)
                .map(|w| w[1].evals as f64 / w[0].evals as f64)
                .collect();
            let take = ratios.len().div_ceil(3);
            let tail = &ratios[ratios.len() - take..];
            tail.iter()
                .all(|r| r.is_finite() && *r > 0.0)
                .then(|| (tail.iter().map(|r| r.ln()).sum::<f64>() / take as f64).exp())
        })
        .flatten();
    GenerationTable {
        rows: generations.to_vec(),
        total_evals,
        growth_ratio,
    }
}
