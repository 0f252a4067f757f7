//! Basic-question generation: solve the LASSO for a main question, rank
//! the coefficients, and keep the top entries as scored basic questions.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dictionary::{DedupMode, Dictionary};
use crate::embedding::EmbeddingVector;
use crate::error::{Error, Result};
use crate::lasso::{LassoConfig, LassoProblem};
use crate::linalg::norm2;

pub const BQ_PER_RECORD: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredBasicQuestion {
    pub text: String,
    pub score: f64,
    pub column_index: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct GenerationOptions {
    pub k: usize,
    /// Drop dictionary columns whose text equals the main question.
    pub exclude_exact: bool,
    pub text_match: DedupMode,
}

impl Default for GenerationOptions {
    fn default() -> Self {
        GenerationOptions {
            k: BQ_PER_RECORD,
            exclude_exact: false,
            text_match: DedupMode::Normalized,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generation {
    pub basic_questions: Vec<ScoredBasicQuestion>,
    /// Selected coefficients above 1 that were clamped.
    pub clamped: usize,
    pub duality_gap: f64,
    pub sweeps_used: usize,
    pub converged: bool,
    pub lambda: f64,
}

pub fn generate_basic_questions(
    dict: &Dictionary,
    mq: &EmbeddingVector,
    k: usize,
    config: &LassoConfig,
) -> Result<Vec<ScoredBasicQuestion>> {
    let opts = GenerationOptions {
        k,
        ..Default::default()
    };
    generate(dict, mq, None, &opts, config).map(|g| g.basic_questions)
}

/// Full generation with diagnostics. `mq_text` is only consulted when
/// `opts.exclude_exact` is set.
pub fn generate(
    dict: &Dictionary,
    mq: &EmbeddingVector,
    mq_text: Option<&str>,
    opts: &GenerationOptions,
    config: &LassoConfig,
) -> Result<Generation> {
    if opts.k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    if mq.dim() != dict.dim() {
        return Err(Error::shape("main question embedding", dict.dim(), mq.dim()));
    }
    let norm = norm2(mq.values());
    if norm == 0.0 {
        return Err(Error::invalid("main question embedding has zero norm"));
    }
    // dictionary columns are unit norm, so the query is too
    let b: Vec<f64> = mq.values().iter().map(|v| v / norm).collect();

    let mut excluded = vec![false; dict.n_columns()];
    if opts.exclude_exact {
        let text = mq_text.ok_or_else(|| Error::invalid("exclude_exact needs the main question text"))?;
        for j in dict.find_text(text, opts.text_match) {
            excluded[j] = true;
        }
    }
    let available = excluded.iter().filter(|e| !**e).count();
    if available < opts.k {
        return Err(Error::invalid(format!(
            "dictionary has {available} usable columns, need at least k = {}",
            opts.k
        )));
    }

    let problem = LassoProblem::new(dict.matrix(), &b)?.with_excluded(&excluded)?;
    let solution = problem.solve(config)?;
    let (picked, clamped) = rank_top_k(&solution.coefficients, &excluded, opts.k);

    let basic_questions = picked
        .into_iter()
        .map(|(j, score)| ScoredBasicQuestion {
            text: dict.texts()[j].clone(),
            score,
            column_index: j,
        })
        .collect();
    Ok(Generation {
        basic_questions,
        clamped,
        duality_gap: solution.duality_gap,
        sweeps_used: solution.sweeps_used,
        converged: solution.converged,
        lambda: solution.lambda,
    })
}

/// Positive coefficients by descending value (ties to the lower index),
/// padded with zero scores from the lowest unused indices. Returns the
/// picks and how many scores were clamped to 1.
fn rank_top_k(coefficients: &[f64], excluded: &[bool], k: usize) -> (Vec<(usize, f64)>, usize) {
    let mut positive: Vec<usize> = (0..coefficients.len())
        .filter(|&j| !excluded[j] && coefficients[j] > 0.0)
        .collect();
    positive.sort_by(|&a, &b| coefficients[b].total_cmp(&coefficients[a]).then(a.cmp(&b)));
    positive.truncate(k);

    let mut clamped = 0;
    let mut picks: Vec<(usize, f64)> = positive
        .iter()
        .map(|&j| {
            let c = coefficients[j];
            if c > 1.0 {
                clamped += 1;
            }
            (j, c.min(1.0))
        })
        .collect();

    let mut next = 0;
    while picks.len() < k {
        while excluded[next] || positive.contains(&next) {
            next += 1;
        }
        picks.push((next, 0.0));
        next += 1;
    }
    (picks, clamped)
}

/// One line of the basic question dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct BqdRecord {
    pub image_id: String,
    pub mq_text: String,
    pub basic_questions: Vec<ScoredBasicQuestion>,
}

#[derive(Serialize, Deserialize)]
struct WireBq {
    text: String,
    score: f64,
}

#[derive(Serialize, Deserialize)]
struct WireRecord {
    image_id: String,
    mq: String,
    bqs: Vec<WireBq>,
}

pub fn emit_bqd_record(
    image_id: impl Into<String>,
    mq_text: impl Into<String>,
    bqs: Vec<ScoredBasicQuestion>,
) -> Result<BqdRecord> {
    check_bqs(&bqs)?;
    Ok(BqdRecord {
        image_id: image_id.into(),
        mq_text: mq_text.into(),
        basic_questions: bqs,
    })
}

fn check_bqs(bqs: &[ScoredBasicQuestion]) -> Result<()> {
    if bqs.len() != BQ_PER_RECORD {
        return Err(Error::invalid(format!(
            "a BQD record holds exactly {BQ_PER_RECORD} basic questions, got {}",
            bqs.len()
        )));
    }
    for bq in bqs {
        if !(0.0..=1.0).contains(&bq.score) {
            return Err(Error::invalid(format!("score {} outside [0, 1]", bq.score)));
        }
    }
    if bqs.windows(2).any(|w| w[0].score < w[1].score) {
        return Err(Error::invalid("basic question scores are not in nonincreasing order"));
    }
    Ok(())
}

impl BqdRecord {
    pub fn scores(&self) -> [f64; 3] {
        [
            self.basic_questions[0].score,
            self.basic_questions[1].score,
            self.basic_questions[2].score,
        ]
    }

    /// Compact JSON with scores at six decimals, no trailing newline.
    pub fn to_json_line(&self) -> String {
        let s = |v: &str| serde_json::to_string(v).expect("string serialization");
        let mut out = format!(
            "{{\"image_id\":{},\"mq\":{},\"bqs\":[",
            s(&self.image_id),
            s(&self.mq_text)
        );
        for (i, bq) in self.basic_questions.iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            out.push_str(&format!("{{\"text\":{},\"score\":{:.6}}}", s(&bq.text), bq.score));
        }
        out.push_str("]}");
        out
    }

    /// Parses one line; column indices are not part of the wire format and
    /// come back as `usize::MAX`.
    pub fn from_json_line(line: &str) -> Result<Self> {
        let wire: WireRecord = serde_json::from_str(line).map_err(|e| Error::invalid(format!("bad BQD line: {e}")))?;
        let bqs = wire
            .bqs
            .into_iter()
            .map(|b| ScoredBasicQuestion {
                text: b.text,
                score: b.score,
                column_index: usize::MAX,
            })
            .collect();
        emit_bqd_record(wire.image_id, wire.mq, bqs)
    }
}

pub fn write_bqd(records: &[BqdRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&r.to_json_line());
        out.push('\n');
    }
    out
}

/// Parses a BQD file, reporting the 1-based line of the first bad record.
pub fn read_bqd(src: &str) -> Result<Vec<BqdRecord>> {
    src.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            BqdRecord::from_json_line(l).map_err(|e| Error::parse(crate::error::Location::Line(i + 1), e.to_string()))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Query {
    pub id: String,
    pub image_id: String,
    pub mq_text: String,
    pub vector: EmbeddingVector,
}

impl Query {
    /// Ids of the form `<image_id>#<n>` carry the image id before the `#`;
    /// otherwise the whole id is the image id.
    pub fn from_record(record: &crate::embedding::EmbeddingRecord) -> Self {
        let image_id = record.id.split_once('#').map_or(record.id.as_str(), |(img, _)| img);
        Query {
            id: record.id.clone(),
            image_id: image_id.to_string(),
            mq_text: record.text.clone(),
            vector: record.vector.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QueryFailure {
    pub index: usize,
    pub query_id: String,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct BatchDiagnostics {
    pub queries: usize,
    pub succeeded: usize,
    pub clamped_scores: usize,
    pub unconverged: usize,
    pub max_duality_gap: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchOutput {
    pub records: Vec<BqdRecord>,
    pub failures: Vec<QueryFailure>,
    pub diagnostics: BatchDiagnostics,
}

/// Runs every query; failures are collected rather than aborting the
/// batch. Output order follows input order for any thread count.
pub fn generate_batch(
    dict: &Dictionary,
    queries: &[Query],
    config: &LassoConfig,
    opts: &GenerationOptions,
    threads: Option<usize>,
) -> Result<BatchOutput> {
    if queries.is_empty() {
        return Err(Error::invalid("empty query list"));
    }
    if opts.k != BQ_PER_RECORD {
        return Err(Error::invalid(format!("BQD records need k = {BQ_PER_RECORD}")));
    }
    config.validate()?;

    let run = || -> Vec<Result<(BqdRecord, Generation)>> {
        queries
            .par_iter()
            .map(|q| {
                let g = generate(dict, &q.vector, Some(&q.mq_text), opts, config)?;
                let rec = emit_bqd_record(&q.image_id, &q.mq_text, g.basic_questions.clone())?;
                Ok((rec, g))
            })
            .collect()
    };
    let results = match threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::invalid(format!("thread pool: {e}")))?
            .install(run),
        None => run(),
    };

    let mut out = BatchOutput {
        records: Vec::with_capacity(queries.len()),
        failures: Vec::new(),
        diagnostics: BatchDiagnostics {
            queries: queries.len(),
            ..Default::default()
        },
    };
    for (index, (q, res)) in queries.iter().zip(results).enumerate() {
        match res {
            Ok((rec, g)) => {
                let d = &mut out.diagnostics;
                d.succeeded += 1;
                d.clamped_scores += g.clamped;
                d.unconverged += usize::from(!g.converged);
                d.max_duality_gap = d.max_duality_gap.max(g.duality_gap);
                out.records.push(rec);
            }
            Err(e) => out.failures.push(QueryFailure {
                index,
                query_id: q.id.clone(),
                message: e.to_string(),
            }),
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dictionary::QuestionRecord;
    use crate::embedding::EmbeddingRecord;
    use crate::linalg::Matrix;

    fn dict_from(m: &Matrix, texts: &[&str]) -> Dictionary {
        let recs: Vec<QuestionRecord> = (0..m.cols())
            .map(|j| EmbeddingRecord {
                id: format!("c{j}"),
                text: texts[j].to_string(),
                vector: EmbeddingVector::new(m.col(j).to_vec()).unwrap(),
            })
            .collect();
        Dictionary::build(&recs, DedupMode::Exact).unwrap().0
    }

    fn bq(score: f64) -> ScoredBasicQuestion {
        ScoredBasicQuestion {
            text: format!("q{score}"),
            score,
            column_index: 0,
        }
    }

    #[test]
    fn self_match_scores_one_minus_lambda() {
        let d = dict_from(&Matrix::identity(5), &["a", "b", "c", "d", "e"]);
        let mq = EmbeddingVector::new(vec![0.0, 0.0, 3.0, 0.0, 0.0]).unwrap();
        let bqs = generate_basic_questions(&d, &mq, 3, &LassoConfig::default()).unwrap();
        assert_eq!(bqs[0].text, "c");
        assert!((bqs[0].score - 0.976).abs() < 1e-12);
        // only one positive coefficient: zero padding from the lowest indices
        assert_eq!((bqs[1].column_index, bqs[1].score), (0, 0.0));
        assert_eq!((bqs[2].column_index, bqs[2].score), (1, 0.0));
    }

    #[test]
    fn negative_coefficients_never_beat_padding() {
        let (picks, clamped) = rank_top_k(&[-0.5, 0.2, 0.0, 1.5, 0.2], &[false; 5], 4);
        assert_eq!(picks, vec![(3, 1.0), (1, 0.2), (4, 0.2), (0, 0.0)]);
        assert_eq!(clamped, 1);
        let (picks, _) = rank_top_k(&[0.0, 0.3, 0.0], &[true, false, false], 2);
        assert_eq!(picks, vec![(1, 0.3), (2, 0.0)]);
    }

    #[test]
    fn exclusion_and_too_few_columns() {
        let d = dict_from(&Matrix::identity(3), &["a", "b", "c"]);
        let mq = EmbeddingVector::new(vec![1.0, 0.1, 0.0]).unwrap();
        let opts = GenerationOptions {
            k: 2,
            exclude_exact: true,
            ..Default::default()
        };
        let g = generate(&d, &mq, Some(" A "), &opts, &LassoConfig::default()).unwrap();
        assert_ne!(g.basic_questions[0].text, "a");
        assert!(g.basic_questions.iter().all(|b| b.column_index != 0));
        let opts3 = GenerationOptions { k: 3, ..opts };
        assert!(generate(&d, &mq, Some("a"), &opts3, &LassoConfig::default()).is_err());
        assert!(generate_basic_questions(&d, &mq, 0, &LassoConfig::default()).is_err());
        let short = EmbeddingVector::new(vec![1.0]).unwrap();
        assert!(matches!(
            generate_basic_questions(&d, &short, 1, &LassoConfig::default()),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn emit_validates() {
        assert!(emit_bqd_record("i", "m", vec![bq(0.5), bq(0.4), bq(0.0)]).is_ok());
        assert!(emit_bqd_record("i", "m", vec![bq(0.5), bq(0.4)]).is_err());
        assert!(emit_bqd_record("i", "m", vec![bq(0.4), bq(0.5), bq(0.0)]).is_err());
        assert!(emit_bqd_record("i", "m", vec![bq(1.5), bq(0.5), bq(0.0)]).is_err());
    }

    #[test]
    fn json_line_round_trip_is_byte_identical() {
        let rec = emit_bqd_record("img1", "what is \"this\"?", vec![bq(0.975978), bq(0.0), bq(0.0)]).unwrap();
        let line = rec.to_json_line();
        assert_eq!(
            line,
            r#"{"image_id":"img1","mq":"what is \"this\"?","bqs":[{"text":"q0.975978","score":0.975978},{"text":"q0","score":0.000000},{"text":"q0","score":0.000000}]}"#
        );
        let back = BqdRecord::from_json_line(&line).unwrap();
        assert_eq!(back.to_json_line(), line);
        assert!(read_bqd("{}\n").is_err());
    }

    #[test]
    fn batch_preserves_order_and_reports_failures() {
        let d = dict_from(&Matrix::identity(4), &["a", "b", "c", "d"]);
        let mk = |id: &str, v: Vec<f64>| Query {
            id: id.into(),
            image_id: id.into(),
            mq_text: id.into(),
            vector: EmbeddingVector::new(v).unwrap(),
        };
        let qs = vec![
            mk("q0", vec![0.0, 1.0, 0.0, 0.0]),
            mk("q1", vec![0.0; 4]),
            mk("q2", vec![1.0, 0.0, 0.0, 0.5]),
        ];
        let out = generate_batch(&d, &qs, &LassoConfig::default(), &GenerationOptions::default(), Some(2)).unwrap();
        assert_eq!(out.records.len(), 2);
        assert_eq!(out.records[0].image_id, "q0");
        assert_eq!(out.records[1].image_id, "q2");
        assert_eq!(out.failures.len(), 1);
        assert_eq!(out.failures[0].query_id, "q1");
        assert!(generate_batch(&d, &[], &LassoConfig::default(), &GenerationOptions::default(), None).is_err());
    }

    #[test]
    fn query_ids_split_on_hash() {
        let r = EmbeddingRecord {
            id: "img7#2".into(),
            text: "t".into(),
            vector: EmbeddingVector::new(vec![1.0]).unwrap(),
        };
        assert_eq!(Query::from_record(&r).image_id, "img7");
    }
}
