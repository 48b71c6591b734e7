// SPDX-License-Identifier: MIT OR Apache-2.0

//! Source-alignment × correctness statistics: Fisher's exact test and
//! relative risk on 2×2 tables.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::store::Source;

/// Relative slack when comparing hypergeometric point probabilities.
const POINT_PROB_SLACK: f64 = 1e-12;

/// Rows are source alignment, columns answer correctness:
///
/// ```text
///              correct  error
/// match           a       b
/// mismatch        c       d
/// ```
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ContingencyTable {
    pub a: u64,
    pub b: u64,
    pub c: u64,
    pub d: u64,
}

impl ContingencyTable {
    pub fn new(a: u64, b: u64, c: u64, d: u64) -> Self {
        Self { a, b, c, d }
    }

    /// From `[[a, b], [c, d]]`.
    pub fn from_rows(rows: [[u64; 2]; 2]) -> Self {
        Self::new(rows[0][0], rows[0][1], rows[1][0], rows[1][1])
    }

    pub fn rows(&self) -> [[u64; 2]; 2] {
        [[self.a, self.b], [self.c, self.d]]
    }

    pub fn total(&self) -> u64 {
        self.a + self.b + self.c + self.d
    }

    /// Swaps both rows and both columns.
    pub fn transposed_diagonal(&self) -> Self {
        Self::new(self.d, self.c, self.b, self.a)
    }

    pub fn match_error_rate(&self) -> Option<f64> {
        let n = self.a + self.b;
        (n > 0).then(|| self.b as f64 / n as f64)
    }

    pub fn mismatch_error_rate(&self) -> Option<f64> {
        let n = self.c + self.d;
        (n > 0).then(|| self.d as f64 / n as f64)
    }
}

/// `ln k!` for `k = 0..=n`.
fn ln_factorials(n: u64) -> Vec<f64> {
    let mut out = Vec::with_capacity(n as usize + 1);
    let mut acc = 0.0;
    out.push(0.0);
    for k in 1..=n {
        acc += (k as f64).ln();
        out.push(acc);
    }
    out
}

/// Two-sided Fisher exact p-value: the total hypergeometric probability of
/// all tables with the observed margins that are no more likely than the
/// observed one. A zero margin carries no information and yields 1.
pub fn fisher_exact(table: &ContingencyTable) -> f64 {
    let ContingencyTable { a, b, c, d } = *table;
    let (r1, r2, c1, c2) = (a + b, c + d, a + c, b + d);
    if r1 == 0 || r2 == 0 || c1 == 0 || c2 == 0 {
        return 1.0;
    }
    let n = r1 + r2;
    let lf = ln_factorials(n);
    let ln_choose = |n: u64, k: u64| lf[n as usize] - lf[k as usize] - lf[(n - k) as usize];
    let denom = ln_choose(n, c1);
    let ln_p = |x: u64| ln_choose(r1, x) + ln_choose(r2, c1 - x) - denom;
    let observed = ln_p(a);
    let cutoff = observed + POINT_PROB_SLACK.ln_1p();
    let lo = c1.saturating_sub(r2);
    let hi = r1.min(c1);
    let p: f64 = (lo..=hi).map(ln_p).filter(|&lp| lp <= cutoff).map(f64::exp).sum();
    p.min(1.0)
}

/// Error rate in the mismatch row divided by the error rate in the match row.
pub fn relative_risk(table: &ContingencyTable) -> Result<f64> {
    let mismatch = table
        .mismatch_error_rate()
        .ok_or_else(|| Error::UndefinedRelativeRisk("mismatch row is empty".into()))?;
    let matched = table
        .match_error_rate()
        .ok_or_else(|| Error::UndefinedRelativeRisk("match row is empty".into()))?;
    if matched == 0.0 {
        return Err(Error::UndefinedRelativeRisk("match row has no errors".into()));
    }
    Ok(mismatch / matched)
}

/// One example for the mismatch analysis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MismatchRecord {
    /// Source the task requires.
    pub source_required: Source,
    /// Source the probe attributes the answer to.
    pub predicted: Source,
    pub correct: bool,
}

impl MismatchRecord {
    pub fn aligned(&self) -> bool {
        self.source_required == self.predicted
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionResult {
    /// `parametric-required` or `contextual-required`.
    pub condition: String,
    pub source_required: Source,
    pub table: ContingencyTable,
    pub n: u64,
    pub p_value: Option<f64>,
    pub relative_risk: Option<f64>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MismatchReport {
    pub test: String,
    pub sidedness: String,
    pub conditions: Vec<ConditionResult>,
}

/// Builds one table per required source and reports Fisher p and relative risk.
/// Conditions without records are kept with a warning and no statistics.
pub fn mismatch_analysis(records: &[MismatchRecord]) -> MismatchReport {
    let conditions = [
        ("parametric-required", Source::Parametric),
        ("contextual-required", Source::Contextual),
    ]
    .into_iter()
    .map(|(name, required)| {
        let mut t = ContingencyTable::default();
        for r in records.iter().filter(|r| r.source_required == required) {
            match (r.aligned(), r.correct) {
                (true, true) => t.a += 1,
                (true, false) => t.b += 1,
                (false, true) => t.c += 1,
                (false, false) => t.d += 1,
            }
        }
        let mut warnings = Vec::new();
        let (p_value, rr) = if t.total() == 0 {
            warnings.push(format!("no records for condition {name}; skipped"));
            (None, None)
        } else {
            let rr = match relative_risk(&t) {
                Ok(v) => Some(v),
                Err(e) => {
                    warnings.push(e.to_string());
                    None
                }
            };
            (Some(fisher_exact(&t)), rr)
        };
        ConditionResult {
            condition: name.to_string(),
            source_required: required,
            table: t,
            n: t.total(),
            p_value,
            relative_risk: rr,
            warnings,
        }
    })
    .collect();
    MismatchReport {
        test: "fisher-exact".into(),
        sidedness: "two-sided".into(),
        conditions,
    }
}
