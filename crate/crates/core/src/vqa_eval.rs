//! Consensus accuracy: a prediction scores `min(#matching annotators / 3, 1)`
//! and the report is the mean over questions.

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Location, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct AnswerRecord {
    pub question_id: String,
    pub predicted: String,
    pub annotator_answers: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AnswerMatching {
    /// Lowercase, trim, collapse whitespace.
    #[default]
    Normalized,
    Raw,
}

pub fn normalize_answer(answer: &str) -> String {
    answer.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

pub fn question_score(record: &AnswerRecord, matching: AnswerMatching) -> Result<f64> {
    if record.annotator_answers.is_empty() {
        return Err(Error::invalid(format!(
            "question `{}` has no annotator answers",
            record.question_id
        )));
    }
    let matches = match matching {
        AnswerMatching::Raw => record
            .annotator_answers
            .iter()
            .filter(|a| **a == record.predicted)
            .count(),
        AnswerMatching::Normalized => {
            let p = normalize_answer(&record.predicted);
            record
                .annotator_answers
                .iter()
                .filter(|a| normalize_answer(a) == p)
                .count()
        }
    };
    Ok((matches as f64 / 3.0).min(1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QuestionScore {
    pub question_id: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TypeAccuracy {
    pub n: usize,
    pub mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AccuracyReport {
    pub n: usize,
    pub mean: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub per_type: Option<BTreeMap<String, TypeAccuracy>>,
    pub per_question: Vec<QuestionScore>,
}

pub fn evaluate(records: &[AnswerRecord], matching: AnswerMatching) -> Result<AccuracyReport> {
    if records.is_empty() {
        return Err(Error::invalid("no records to evaluate"));
    }
    let mut seen = HashSet::with_capacity(records.len());
    let mut per_question = Vec::with_capacity(records.len());
    for r in records {
        if !seen.insert(r.question_id.as_str()) {
            return Err(Error::invalid(format!("duplicate question_id `{}`", r.question_id)));
        }
        per_question.push(QuestionScore {
            question_id: r.question_id.clone(),
            score: question_score(r, matching)?,
        });
    }
    let mean = per_question.iter().map(|q| q.score).sum::<f64>() / per_question.len() as f64;
    Ok(AccuracyReport {
        n: per_question.len(),
        mean,
        per_type: None,
        per_question,
    })
}

impl AccuracyReport {
    /// Adds per-type means; questions missing from `types` go under `"unknown"`.
    pub fn with_types(mut self, types: &HashMap<String, String>) -> Self {
        let mut acc: BTreeMap<String, (usize, f64)> = BTreeMap::new();
        for q in &self.per_question {
            let t = types.get(&q.question_id).map_or("unknown", String::as_str);
            let e = acc.entry(t.to_string()).or_default();
            e.0 += 1;
            e.1 += q.score;
        }
        self.per_type = Some(
            acc.into_iter()
                .map(|(t, (n, sum))| {
                    (
                        t,
                        TypeAccuracy {
                            n,
                            mean: sum / n as f64,
                        },
                    )
                })
                .collect(),
        );
        self
    }
}

#[derive(Debug, Deserialize)]
struct Prediction {
    question_id: serde_json::Value,
    answer: String,
}

#[derive(Debug, Deserialize)]
struct Annotation {
    question_id: serde_json::Value,
    answers: Vec<AnswerEntry>,
}

/// VQA annotation files carry either bare strings or `{"answer": ...}` objects.
#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum AnswerEntry {
    Plain(String),
    Object { answer: String },
}

#[derive(Debug, Deserialize)]
struct TypeEntry {
    question_id: serde_json::Value,
    #[serde(alias = "answer_type", alias = "question_type")]
    r#type: String,
}

/// Ids may be numbers or strings on the wire; both compare as text.
fn id_string(v: &serde_json::Value) -> Result<String> {
    match v {
        serde_json::Value::String(s) => Ok(s.clone()),
        serde_json::Value::Number(n) => Ok(n.to_string()),
        other => Err(Error::invalid(format!(
            "question_id must be a string or number, got {other}"
        ))),
    }
}

fn parse_lines<T: for<'de> Deserialize<'de>>(src: &str) -> Result<Vec<T>> {
    src.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::parse(Location::Line(i + 1), e.to_string())))
        .collect()
}

/// Joins prediction and annotation JSON-lines by question id, in
/// prediction order.
pub fn join_records(predictions: &str, annotations: &str) -> Result<Vec<AnswerRecord>> {
    let preds: Vec<Prediction> = parse_lines(predictions)?;
    let anns: Vec<Annotation> = parse_lines(annotations)?;
    let mut by_id = HashMap::with_capacity(anns.len());
    for a in anns {
        let id = id_string(&a.question_id)?;
        let answers = a
            .answers
            .into_iter()
            .map(|e| match e {
                AnswerEntry::Plain(s) | AnswerEntry::Object { answer: s } => s,
            })
            .collect::<Vec<_>>();
        if by_id.insert(id.clone(), answers).is_some() {
            return Err(Error::invalid(format!("duplicate annotation for question_id `{id}`")));
        }
    }
    preds
        .into_iter()
        .map(|p| {
            let id = id_string(&p.question_id)?;
            let answers = by_id
                .get(&id)
                .cloned()
                .ok_or_else(|| Error::invalid(format!("no annotation for question_id `{id}`")))?;
            Ok(AnswerRecord {
                question_id: id,
                predicted: p.answer,
                annotator_answers: answers,
            })
        })
        .collect()
}

pub fn parse_type_map(src: &str) -> Result<HashMap<String, String>> {
    parse_lines::<TypeEntry>(src)?
        .into_iter()
        .map(|t| Ok((id_string(&t.question_id)?, t.r#type)))
        .collect()
}
