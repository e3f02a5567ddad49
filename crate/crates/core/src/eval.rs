//! Accuracy, the random class baseline, and McNemar's paired significance
//! test.
//!
//! Accuracy divides correct predictions by total predictions; invalid-format
//! outputs count in the denominator only. The baseline scores each statement
//! by the chance of guessing its target among same-class objects, 1/|O_C|,
//! either as the exact expectation or as one seeded uniform draw per statement
//! (the draw form pairs with model runs for the statistical test).
//!
//! McNemar's test runs on the discordant counts (b, c) of a paired outcome
//! table: exact two-sided binomial for small b+c, chi-square with continuity
//! correction otherwise.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grounding::{GroundingResult, ParseMode, StatementRef};
use crate::scene::{ObjectId, SceneGraph};
use crate::serializer::GraphVariant;
use crate::statements::ReferentialStatement;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("cannot compute accuracy of an empty run")]
    EmptyRun,
    #[error("statement target {0} is not in the graph")]
    UnknownTarget(ObjectId),
    #[error("paired runs must cover identical statements in identical order: {0}")]
    MismatchedRuns(String),
    #[error("invalid outcome table: {0}")]
    BadTable(String),
}

/// Fraction of correct predictions. Invalid-format results are incorrect by
/// definition and only enlarge the denominator.
pub fn accuracy(results: &[GroundingResult]) -> Result<f64, EvalError> {
    if results.is_empty() {
        return Err(EvalError::EmptyRun);
    }
    let correct = results.iter().filter(|r| r.correct).count();
    Ok(correct as f64 / results.len() as f64)
}

/// Expected accuracy of guessing each statement's target uniformly among the
/// objects of its class: the mean of 1/|O_C| over statements.
pub fn random_baseline_expected(
    graph: &SceneGraph,
    statements: &[ReferentialStatement],
) -> Result<f64, EvalError> {
    if statements.is_empty() {
        return Err(EvalError::EmptyRun);
    }
    let mut sum = 0.0;
    for statement in statements {
        let node = graph
            .node(statement.target_id)
            .ok_or(EvalError::UnknownTarget(statement.target_id))?;
        sum += 1.0 / graph.class_count(&node.class_label) as f64;
    }
    Ok(sum / statements.len() as f64)
}

/// One uniform draw from O_C per statement, seeded, returned as grounding
/// results so the baseline can enter a paired McNemar comparison.
pub fn random_baseline_sampled(
    graph: &SceneGraph,
    statements: &[ReferentialStatement],
    seed: u64,
) -> Result<Vec<GroundingResult>, EvalError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut results = Vec::with_capacity(statements.len());
    for (index, statement) in statements.iter().enumerate() {
        let node = graph
            .node(statement.target_id)
            .ok_or(EvalError::UnknownTarget(statement.target_id))?;
        let members: Vec<ObjectId> = graph
            .nodes()
            .iter()
            .filter(|n| n.class_label == node.class_label)
            .map(|n| n.object_id)
            .collect();
        let pick = members[rng.random_range(0..members.len())];
        results.push(GroundingResult {
            statement: StatementRef {
                index,
                scene_id: statement.scene_id.clone(),
                target_id: statement.target_id,
                text: statement.text.clone(),
            },
            predicted_id: Some(pick),
            raw_output: pick.to_string(),
            valid_format: true,
            parse_mode: ParseMode::Strict,
            correct: pick == statement.target_id,
        });
    }
    Ok(results)
}

/// Paired binary outcomes of two runs over the same statements.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairedOutcomeTable {
    /// Both runs correct.
    pub a: u64,
    /// Run A correct, run B wrong.
    pub b: u64,
    /// Run A wrong, run B correct.
    pub c: u64,
    /// Both runs wrong.
    pub d: u64,
}

impl PairedOutcomeTable {
    pub fn total(&self) -> u64 {
        self.a + self.b + self.c + self.d
    }
}

/// Which form of McNemar's test ran.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum McNemarMethod {
    ExactBinomial,
    ChiSquareCc,
}

/// Significance stars at the p < 0.05 / 0.01 / 0.001 thresholds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Significance {
    NotSignificant,
    Significant,
    HighlySignificant,
    VeryHighlySignificant,
}

impl Significance {
    pub fn from_p(p: f64) -> Self {
        if p < 0.001 {
            Significance::VeryHighlySignificant
        } else if p < 0.01 {
            Significance::HighlySignificant
        } else if p < 0.05 {
            Significance::Significant
        } else {
            Significance::NotSignificant
        }
    }

    pub fn stars(self) -> &'static str {
        match self {
            Significance::NotSignificant => "ns",
            Significance::Significant => "*",
            Significance::HighlySignificant => "**",
            Significance::VeryHighlySignificant => "***",
        }
    }
}

impl fmt::Display for Significance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.stars())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McNemarResult {
    pub method: McNemarMethod,
    /// Chi-square statistic; absent for the exact test.
    pub statistic: Option<f64>,
    pub p_value: f64,
    pub significance: Significance,
}

/// Exact binomial data threshold: below this many discordant pairs the
/// chi-square approximation is unreliable, so the exact test is used.
pub const EXACT_TEST_MAX_DISCORDANT: u64 = 25;

fn binomial_coefficient(n: u64, k: u64) -> f64 {
    // n stays below EXACT_TEST_MAX_DISCORDANT, far from overflow.
    let mut value = 1u128;
    for i in 0..k.min(n - k) {
        value = value * u128::from(n - i) / u128::from(i + 1);
    }
    value as f64
}

/// Two-sided exact binomial p-value for min(b, c) successes in b+c fair coin
/// flips: `2 * P(X <= min(b, c))`, clamped to 1.
fn exact_binomial_p(b: u64, c: u64) -> f64 {
    let n = b + c;
    if n == 0 {
        return 1.0;
    }
    let k = b.min(c);
    let tail: f64 = (0..=k).map(|i| binomial_coefficient(n, i)).sum();
    (2.0 * tail / (n as f64).exp2()).min(1.0)
}

/// Upper-tail probability of a chi-square variable with one degree of freedom.
fn chi_square_df1_sf(x: f64) -> f64 {
    statrs::function::erf::erfc((x / 2.0).sqrt())
}

/// McNemar's test on a paired outcome table.
///
/// With fewer than [`EXACT_TEST_MAX_DISCORDANT`] discordant pairs the exact
/// two-sided binomial test runs; otherwise the chi-square statistic with
/// continuity correction, `(|b-c|-1)^2 / (b+c)` (floored at zero when
/// `|b-c| <= 1`), is referred to one degree of freedom. A table without
/// discordant pairs is degenerate: p = 1, not significant, no statistic.
pub fn mcnemar(table: &PairedOutcomeTable) -> McNemarResult {
    let (b, c) = (table.b, table.c);
    let discordant = b + c;
    if discordant < EXACT_TEST_MAX_DISCORDANT {
        let p_value = exact_binomial_p(b, c);
        McNemarResult {
            method: McNemarMethod::ExactBinomial,
            statistic: None,
            p_value,
            significance: Significance::from_p(p_value),
        }
    } else {
        let diff = b.abs_diff(c) as f64;
        let statistic = if diff <= 1.0 {
            0.0
        } else {
            (diff - 1.0).powi(2) / discordant as f64
        };
        let p_value = chi_square_df1_sf(statistic).min(1.0);
        McNemarResult {
            method: McNemarMethod::ChiSquareCc,
            statistic: Some(statistic),
            p_value,
            significance: Significance::from_p(p_value),
        }
    }
}

/// One evaluated run: per-statement outcomes plus summary and provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub run_id: String,
    /// Identity tag of the model client that produced the run.
    pub model: String,
    pub variant: GraphVariant,
    pub results: Vec<GroundingResult>,
    pub accuracy: f64,
    /// RFC 3339 timestamp. Honors `SOURCE_DATE_EPOCH` for reproducible runs.
    pub timestamp: String,
    /// Snapshot of the configuration the run used.
    pub config: serde_json::Value,
}

impl RunReport {
    pub fn new(
        run_id: impl Into<String>,
        model: impl Into<String>,
        variant: GraphVariant,
        results: Vec<GroundingResult>,
        config: serde_json::Value,
    ) -> Result<Self, EvalError> {
        let accuracy = accuracy(&results)?;
        Ok(Self {
            run_id: run_id.into(),
            model: model.into(),
            variant,
            results,
            accuracy,
            timestamp: timestamp_now(),
            config,
        })
    }

    /// Verifies the summary invariant `accuracy == correct / total`.
    pub fn validate(&self) -> Result<(), EvalError> {
        let recomputed = accuracy(&self.results)?;
        if (recomputed - self.accuracy).abs() > 1e-12 {
            return Err(EvalError::BadTable(format!(
                "report accuracy {} does not match results ({recomputed})",
                self.accuracy
            )));
        }
        Ok(())
    }
}

/// RFC 3339 UTC timestamp; `SOURCE_DATE_EPOCH`, when set, pins it for
/// byte-reproducible reports.
pub fn timestamp_now() -> String {
    let now = std::env::var("SOURCE_DATE_EPOCH")
        .ok()
        .and_then(|s| s.parse::<i64>().ok())
        .and_then(|secs| chrono::DateTime::from_timestamp(secs, 0))
        .unwrap_or_else(chrono::Utc::now);
    now.to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
}

/// Builds the paired outcome table of two runs and tests it. The runs must
/// cover identical statements in identical order.
pub fn compare_runs(
    run_a: &RunReport,
    run_b: &RunReport,
) -> Result<(PairedOutcomeTable, McNemarResult), EvalError> {
    if run_a.results.len() != run_b.results.len() {
        return Err(EvalError::MismatchedRuns(format!(
            "{} vs {} statements",
            run_a.results.len(),
            run_b.results.len()
        )));
    }
    let mut table = PairedOutcomeTable {
        a: 0,
        b: 0,
        c: 0,
        d: 0,
    };
    for (ra, rb) in run_a.results.iter().zip(&run_b.results) {
        if ra.statement != rb.statement {
            return Err(EvalError::MismatchedRuns(format!(
                "statement {} differs between runs",
                ra.statement.index
            )));
        }
        match (ra.correct, rb.correct) {
            (true, true) => table.a += 1,
            (true, false) => table.b += 1,
            (false, true) => table.c += 1,
            (false, false) => table.d += 1,
        }
    }
    let result = mcnemar(&table);
    Ok((table, result))
}
