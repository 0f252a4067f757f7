//! Sparse basic-question retrieval for visual question answering.
//!
//! Questions are embedded as vectors ([`encoder`], [`embedding`]), stacked
//! into a unit-column [`dictionary`], and each main question is explained
//! as a sparse combination of dictionary columns by solving a LASSO
//! problem ([`lasso`]). The largest coefficients become scored basic
//! questions ([`bq`]), which a threshold policy appends to the main
//! question ([`concat`]). [`attention`] holds the co-attention kernel and
//! [`vqa_eval`] the consensus accuracy metric.

pub mod attention;
pub mod bq;
pub mod concat;
pub mod dictionary;
pub mod embedding;
pub mod encoder;
pub mod error;
pub mod lasso;
pub mod linalg;
pub mod params;
pub mod synth;
pub mod vqa_eval;

pub use attention::{
    alternating_coattention, attention_op, AttentionParameters, AttentionResult, CoAttention, FeatureSet,
};
pub use bq::{
    emit_bqd_record, generate_basic_questions, generate_batch, BatchOutput, BqdRecord, GenerationOptions, Query,
    ScoredBasicQuestion,
};
pub use concat::{
    concatenate, decide_appends, partition_counts, score_statistics, ConcatenationPolicy, PartitionCounts, ScoreStats,
};
pub use dictionary::{build_dictionary, DedupMode, Dictionary, QuestionRecord};
pub use embedding::{load_embeddings, EmbeddingFormat, EmbeddingRecord, EmbeddingVector};
pub use encoder::{encode_question, gru_step, GruParameters, HiddenState, TokenEmbeddingTable};
pub use error::{Error, Result};
pub use lasso::{duality_gap, lambda_max, solve_lasso, LassoConfig, LassoProblem, Penalty, SparseSolution};
pub use linalg::Matrix;
pub use vqa_eval::{evaluate, question_score, AccuracyReport, AnswerMatching, AnswerRecord};
