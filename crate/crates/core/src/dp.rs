//! Aggregation of per-model outputs, the Laplace mechanism, noisy argmax
//! release, and per-client budget accounting.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::argmax;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DpError {
    #[error("epsilon must be positive and finite, got {0}")]
    InvalidEpsilon(f64),
    #[error("sensitivity must be positive and finite, got {0}")]
    InvalidSensitivity(f64),
    #[error("score clip bound must be positive and finite, got {0}")]
    InvalidClip(f64),
    #[error("no model outputs to aggregate")]
    Empty,
    #[error("score vector {index} has {got} classes, expected {expected}")]
    Length { index: usize, expected: usize, got: usize },
    #[error("privacy budget exhausted for {client}: spent {spent}, cap {cap}, query needs {requested}")]
    BudgetExhausted {
        client: String,
        spent: f64,
        cap: f64,
        requested: f64,
    },
    #[error("unknown aggregation mode {0:?} (expected vote, score or none)")]
    UnknownMode(String),
}

type Result<T> = std::result::Result<T, DpError>;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AggregationMode {
    /// Per-model argmax votes, counted per class.
    VoteHistogram,
    /// Sum of per-model scores, each clipped to `[0, clip]`.
    ScoreSum { clip: f64 },
    /// Plain vote histogram with no noise. Not differentially private.
    NoNoise,
}

impl fmt::Display for AggregationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AggregationMode::VoteHistogram => f.write_str("vote"),
            AggregationMode::ScoreSum { .. } => f.write_str("score"),
            AggregationMode::NoNoise => f.write_str("none"),
        }
    }
}

impl FromStr for AggregationMode {
    type Err = DpError;

    /// `vote`, `none`, `score` (clip 1) or `score:<clip>`.
    fn from_str(s: &str) -> Result<Self> {
        match s.split_once(':') {
            None if s == "vote" => Ok(AggregationMode::VoteHistogram),
            None if s == "none" => Ok(AggregationMode::NoNoise),
            None if s == "score" => Ok(AggregationMode::ScoreSum { clip: 1.0 }),
            Some(("score", c)) => {
                let clip: f64 = c.parse().map_err(|_| DpError::UnknownMode(s.to_string()))?;
                Ok(AggregationMode::ScoreSum { clip })
            }
            _ => Err(DpError::UnknownMode(s.to_string())),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrivacyParams {
    pub epsilon: f64,
    pub sensitivity: f64,
    pub mode: AggregationMode,
}

impl PrivacyParams {
    /// Vote histogram with sensitivity 1.
    pub fn vote(epsilon: f64) -> Result<Self> {
        Self::new(epsilon, AggregationMode::VoteHistogram)
    }

    /// Sensitivity follows the mode: 1 for votes, the clip bound for
    /// score sums.
    pub fn new(epsilon: f64, mode: AggregationMode) -> Result<Self> {
        let sensitivity = match mode {
            AggregationMode::ScoreSum { clip } => clip,
            _ => 1.0,
        };
        let p = PrivacyParams {
            epsilon,
            sensitivity,
            mode,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn no_noise() -> Self {
        PrivacyParams {
            epsilon: f64::INFINITY,
            sensitivity: 1.0,
            mode: AggregationMode::NoNoise,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let AggregationMode::ScoreSum { clip } = self.mode {
            if !(clip.is_finite() && clip > 0.0) {
                return Err(DpError::InvalidClip(clip));
            }
        }
        if self.mode == AggregationMode::NoNoise {
            return Ok(());
        }
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return Err(DpError::InvalidEpsilon(self.epsilon));
        }
        if !(self.sensitivity.is_finite() && self.sensitivity > 0.0) {
            return Err(DpError::InvalidSensitivity(self.sensitivity));
        }
        Ok(())
    }

    /// Laplace scale `s / ε`, or zero without noise.
    pub fn noise_scale(&self) -> f64 {
        match self.mode {
            AggregationMode::NoNoise => 0.0,
            _ => self.sensitivity / self.epsilon,
        }
    }

    /// Budget charged per answered query.
    pub fn cost(&self) -> f64 {
        match self.mode {
            AggregationMode::NoNoise => f64::INFINITY,
            _ => self.epsilon,
        }
    }
}

/// Draws from `Lap(0, b)` by inverting the CDF.
pub fn sample_laplace<R: Rng + ?Sized>(b: f64, rng: &mut R) -> f64 {
    loop {
        let u: f64 = rng.gen::<f64>() - 0.5;
        let tail = 1.0 - 2.0 * u.abs();
        if tail > 0.0 {
            return -b * u.signum() * tail.ln();
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoisyAggregate {
    pub noised: Vec<f64>,
    pub label: usize,
}

/// Noiseless aggregate per class: vote counts or clipped score sums.
pub fn aggregate_scores(outputs: &[Vec<f64>], mode: AggregationMode) -> Result<Vec<f64>> {
    let first = outputs.first().ok_or(DpError::Empty)?;
    let o = first.len();
    for (index, v) in outputs.iter().enumerate() {
        if v.len() != o || o == 0 {
            return Err(DpError::Length {
                index,
                expected: o,
                got: v.len(),
            });
        }
    }
    let mut agg = vec![0.0; o];
    match mode {
        AggregationMode::VoteHistogram | AggregationMode::NoNoise => {
            for v in outputs {
                agg[argmax(v)] += 1.0;
            }
        }
        AggregationMode::ScoreSum { clip } => {
            for v in outputs {
                for (a, &s) in agg.iter_mut().zip(v) {
                    *a += s.clamp(0.0, clip);
                }
            }
        }
    }
    Ok(agg)
}

/// Adds independent `Lap(s/ε)` noise to each class of `scores` and releases
/// the argmax.
pub fn release<R: Rng + ?Sized>(scores: &[f64], params: &PrivacyParams, rng: &mut R) -> NoisyAggregate {
    let b = params.noise_scale();
    let noised: Vec<f64> = if b > 0.0 {
        scores.iter().map(|&s| s + sample_laplace(b, rng)).collect()
    } else {
        scores.to_vec()
    };
    let label = argmax(&noised);
    NoisyAggregate { noised, label }
}

/// Aggregates `m` decoded score vectors per the mode, then noises and
/// releases the label.
pub fn aggregate<R: Rng + ?Sized>(outputs: &[Vec<f64>], params: &PrivacyParams, rng: &mut R) -> Result<NoisyAggregate> {
    params.validate()?;
    let scores = aggregate_scores(outputs, params.mode)?;
    Ok(release(&scores, params, rng))
}

/// `P(L1 − L2 > t)` for independent `L1, L2 ~ Lap(b)`, which is
/// `(2 + t/b) e^{−t/b} / 4` for `t ≥ 0`. With two classes, a leader ahead
/// by `g` votes loses the noisy argmax with probability `tail(g, b)`.
pub fn laplace_difference_tail(t: f64, b: f64) -> f64 {
    if t < 0.0 {
        return 1.0 - laplace_difference_tail(-t, b);
    }
    let r = t / b;
    (2.0 + r) * (-r).exp() / 4.0
}

/// Cumulative ε per client under linear composition.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BudgetLedger {
    cap: Option<f64>,
    spent: HashMap<String, f64>,
}

/// Slack on the cap so that repeated float additions of ε reach it exactly.
const BUDGET_SLACK: f64 = 1e-9;

impl BudgetLedger {
    pub fn new(cap: f64) -> Self {
        BudgetLedger {
            cap: Some(cap),
            spent: HashMap::new(),
        }
    }

    /// No cap: every query is answered, including noiseless ones.
    pub fn unlimited() -> Self {
        BudgetLedger {
            cap: None,
            spent: HashMap::new(),
        }
    }

    pub fn cap(&self) -> Option<f64> {
        self.cap
    }

    pub fn spent(&self, client: &str) -> f64 {
        self.spent.get(client).copied().unwrap_or(0.0)
    }

    /// Charges one query or refuses it, leaving the ledger unchanged.
    pub fn charge(&mut self, client: &str, params: &PrivacyParams) -> Result<f64> {
        let requested = params.cost();
        let spent = self.spent(client);
        if let Some(cap) = self.cap {
            if spent + requested > cap + BUDGET_SLACK {
                return Err(DpError::BudgetExhausted {
                    client: client.to_string(),
                    spent,
                    cap,
                    requested,
                });
            }
        }
        let total = spent + requested;
        self.spent.insert(client.to_string(), total);
        Ok(total)
    }
}
