//! Threshold policy deciding how many basic questions to append to a main
//! question, plus the score statistics and partition counts used to pick
//! the thresholds.
//!
//! The rule is a prefix test with strict inequalities:
//!
//! ```text
//! append BQ1 iff score1 > s1
//!   then BQ2 iff score2/score1 > s2
//!     then BQ3 iff score3/score2 > s3
//! ```

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::bq::{BqdRecord, ScoredBasicQuestion};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConcatenationPolicy {
    pub s1: f64,
    pub s2: f64,
    pub s3: f64,
}

impl ConcatenationPolicy {
    /// The operating point reported for the VQA open-ended task.
    pub const REFERENCE: ConcatenationPolicy = ConcatenationPolicy {
        s1: 0.43,
        s2: 0.82,
        s3: 0.53,
    };

    pub fn new(s1: f64, s2: f64, s3: f64) -> Result<Self> {
        for (name, v) in [("s1", s1), ("s2", s2), ("s3", s3)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::invalid(format!("threshold {name} = {v} outside [0, 1]")));
            }
        }
        Ok(ConcatenationPolicy { s1, s2, s3 })
    }
}

impl Default for ConcatenationPolicy {
    fn default() -> Self {
        Self::REFERENCE
    }
}

fn check_scores([a, b, c]: [f64; 3]) -> Result<()> {
    for v in [a, b, c] {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::invalid(format!("score {v} outside [0, 1]")));
        }
    }
    if a < b || b < c {
        return Err(Error::invalid(format!("scores ({a}, {b}, {c}) are not nonincreasing")));
    }
    Ok(())
}

/// `num/den > threshold`, false when the denominator is zero.
#[inline]
fn ratio_exceeds(num: f64, den: f64, threshold: f64) -> bool {
    den != 0.0 && num / den > threshold
}

pub fn decide_appends(scores: [f64; 3], policy: &ConcatenationPolicy) -> Result<usize> {
    check_scores(scores)?;
    let [s1, s2, s3] = scores;
    if s1 <= policy.s1 {
        return Ok(0);
    }
    if !ratio_exceeds(s2, s1, policy.s2) {
        return Ok(1);
    }
    if !ratio_exceeds(s3, s2, policy.s3) {
        return Ok(2);
    }
    Ok(3)
}

pub fn concatenate(
    mq_text: &str,
    bqs: &[ScoredBasicQuestion],
    policy: &ConcatenationPolicy,
    separator: &str,
) -> Result<(String, usize)> {
    if mq_text.trim().is_empty() {
        return Err(Error::invalid("empty main question"));
    }
    if bqs.len() != 3 {
        return Err(Error::invalid(format!("expected 3 basic questions, got {}", bqs.len())));
    }
    let n = decide_appends([bqs[0].score, bqs[1].score, bqs[2].score], policy)?;
    let mut out = mq_text.to_string();
    for bq in &bqs[..n] {
        out.push_str(separator);
        out.push_str(&bq.text);
    }
    Ok((out, n))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Moments {
    pub avg: f64,
    pub std: f64,
    pub count: usize,
    /// Records left out because the ratio's denominator was zero.
    pub excluded: usize,
}

impl Moments {
    fn population(values: &[f64], excluded: usize) -> Self {
        if values.is_empty() {
            return Moments {
                avg: f64::NAN,
                std: f64::NAN,
                count: 0,
                excluded,
            };
        }
        let n = values.len() as f64;
        let avg = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - avg) * (v - avg)).sum::<f64>() / n;
        Moments {
            avg,
            std: var.sqrt(),
            count: values.len(),
            excluded,
        }
    }

    /// `[avg − std, avg, avg + std]`, clipped to [0, 1].
    pub fn candidates(&self) -> [f64; 3] {
        let clip = |v: f64| v.clamp(0.0, 1.0);
        [clip(self.avg - self.std), clip(self.avg), clip(self.avg + self.std)]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScoreStats {
    pub total: usize,
    pub score1: Moments,
    pub ratio21: Moments,
    pub ratio32: Moments,
}

pub fn score_statistics(records: &[BqdRecord]) -> Result<ScoreStats> {
    if records.is_empty() {
        return Err(Error::invalid("no records for score statistics"));
    }
    let mut s1 = Vec::with_capacity(records.len());
    let mut r21 = Vec::with_capacity(records.len());
    let mut r32 = Vec::with_capacity(records.len());
    for r in records {
        let [a, b, c] = r.scores();
        s1.push(a);
        if a != 0.0 {
            r21.push(b / a);
        }
        if b != 0.0 {
            r32.push(c / b);
        }
    }
    let n = records.len();
    Ok(ScoreStats {
        total: n,
        score1: Moments::population(&s1, 0),
        ratio21: Moments::population(&r21, n - r21.len()),
        ratio32: Moments::population(&r32, n - r32.len()),
    })
}

impl ScoreStats {
    /// Three-column avg/std table.
    pub fn render_table(&self) -> String {
        let cols = [
            ("score1", &self.score1),
            ("score2/score1", &self.ratio21),
            ("score3/score2", &self.ratio32),
        ];
        let width = 15;
        let mut out = String::new();
        let _ = write!(out, "{:<5}", "");
        for (name, _) in &cols {
            let _ = write!(out, " | {name:>width$}");
        }
        out.push('\n');
        let _ = writeln!(out, "{}", "-".repeat(5 + cols.len() * (width + 3)));
        for (label, pick) in [("avg", 0usize), ("std", 1), ("n", 2)] {
            let _ = write!(out, "{label:<5}");
            for (_, m) in &cols {
                match pick {
                    0 => {
                        let _ = write!(out, " | {:>width$.2}", m.avg);
                    }
                    1 => {
                        let _ = write!(out, " | {:>width$.2}", m.std);
                    }
                    _ => {
                        let _ = write!(out, " | {:>width$}", m.count);
                    }
                }
            }
            out.push('\n');
        }
        out
    }

    /// Initial threshold guesses `avg ± std` for each statistic.
    pub fn threshold_candidates(&self) -> ThresholdCandidates {
        ThresholdCandidates {
            s1: self.score1.candidates(),
            s2: self.ratio21.candidates(),
            s3: self.ratio32.candidates(),
        }
    }
}

/// Each field is `[avg − std, avg, avg + std]` of the matching statistic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ThresholdCandidates {
    pub s1: [f64; 3],
    pub s2: [f64; 3],
    pub s3: [f64; 3],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct PartitionCounts {
    /// Index = number of appended basic questions.
    pub counts: [usize; 4],
    pub total: usize,
}

pub fn partition_counts(records: &[BqdRecord], policy: &ConcatenationPolicy) -> Result<PartitionCounts> {
    if records.is_empty() {
        return Err(Error::invalid("no records to partition"));
    }
    let mut counts = [0usize; 4];
    for r in records {
        counts[decide_appends(r.scores(), policy)?] += 1;
    }
    Ok(PartitionCounts {
        counts,
        total: records.len(),
    })
}

impl PartitionCounts {
    pub fn fractions(&self) -> [f64; 4] {
        self.counts.map(|c| c as f64 / self.total as f64)
    }

    /// Buckets as columns with counts and percentages.
    pub fn render_table(&self) -> String {
        let fr = self.fractions();
        let mut out = format!("Total: {} questions\n", self.total);
        let _ = write!(out, "{:<5}", "");
        for (n, f) in fr.iter().enumerate() {
            let label = format!("{n} BQ ({:.2}%)", 100.0 * f);
            let _ = write!(out, " | {label:>16}");
        }
        out.push('\n');
        let _ = writeln!(out, "{}", "-".repeat(5 + 4 * 19));
        let _ = write!(out, "{:<5}", "# Q");
        for c in self.counts {
            let _ = write!(out, " | {c:>16}");
        }
        out.push('\n');
        out
    }
}
