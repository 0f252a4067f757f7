use std::path::Path;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use serde::Serialize;
use serde_json::json;

use vqabq_core::attention::{coattention_params_from_file, coattention_params_to_file, random_coattention_params};
use vqabq_core::bq::{read_bqd, write_bqd, QueryFailure};
use vqabq_core::concat::ThresholdCandidates;
use vqabq_core::embedding::{load_embeddings, save_embeddings};
use vqabq_core::encoder::{encode_text, TokenEmbeddingTable};
use vqabq_core::params::ParamFile;
use vqabq_core::synth::{self, SyntheticEncoder};
use vqabq_core::vqa_eval::{join_records, parse_type_map};
use vqabq_core::{
    alternating_coattention, concatenate, evaluate, generate_batch, partition_counts, score_statistics, AnswerMatching,
    ConcatenationPolicy, DedupMode, Dictionary, EmbeddingFormat, EmbeddingRecord, FeatureSet, GenerationOptions,
    GruParameters, LassoConfig, Matrix, Query,
};

use crate::manifest::{self, RunManifest};
use crate::{
    BuildDictArgs, CoattendArgs, Command, ConcatArgs, DedupArg, EncodeArgs, EvalArgs, GenBqArgs, PartitionArgs,
    PolicyArgs, SolverArgs, StatsArgs, SynthArgs,
};

pub const EXIT_ERROR: u8 = 1;
/// `gen-bq --keep-going` wrote output but some queries failed.
pub const EXIT_PARTIAL: u8 = 3;

const VERSION: &str = env!("CARGO_PKG_VERSION");

pub fn run(command: Command) -> Result<ExitCode> {
    match command {
        Command::SynthCorpus(a) => synth_corpus(a),
        Command::Encode(a) => encode(a),
        Command::BuildDict(a) => build_dict(a),
        Command::GenBq(a) => gen_bq(a),
        Command::Concat(a) => concat(a),
        Command::Stats(a) => stats(a),
        Command::Partition(a) => partition(a),
        Command::Eval(a) => eval(a),
        Command::Coattend(a) => coattend(a),
    }
}

/// Checks every input exists and every output directory exists before any
/// work starts.
fn check_paths(inputs: &[&Path], outputs: &[&Path]) -> Result<()> {
    for p in inputs {
        if !p.is_file() {
            bail!("input file not found: {}", p.display());
        }
    }
    for p in outputs {
        let parent = p.parent().filter(|d| !d.as_os_str().is_empty());
        if let Some(dir) = parent {
            if !dir.is_dir() {
                bail!("output directory does not exist: {}", dir.display());
            }
        }
    }
    Ok(())
}

fn read_to_string(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn write_string(path: &Path, body: &str) -> Result<()> {
    std::fs::write(path, body).with_context(|| format!("writing {}", path.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut body = serde_json::to_string_pretty(value)?;
    body.push('\n');
    write_string(path, &body)
}

fn load_records(path: &Path) -> Result<Vec<EmbeddingRecord>> {
    load_embeddings(path).with_context(|| format!("loading {}", path.display()))
}

fn format_of(binary: bool) -> EmbeddingFormat {
    if binary {
        EmbeddingFormat::BinaryF32
    } else {
        EmbeddingFormat::Text
    }
}

fn policy_of(a: &PolicyArgs) -> Result<ConcatenationPolicy> {
    Ok(ConcatenationPolicy::new(a.s1, a.s2, a.s3)?)
}

fn lasso_config(a: &SolverArgs) -> Result<LassoConfig> {
    let base = match a.lambda {
        Some(l) => LassoConfig::absolute(l),
        None => LassoConfig::relative(a.lambda_rel),
    };
    let cfg = base
        .with_tolerance(a.tol)
        .with_max_sweeps(a.max_sweeps)
        .with_nonnegative(a.nonneg);
    cfg.validate()?;
    Ok(cfg)
}

fn synth_corpus(a: SynthArgs) -> Result<ExitCode> {
    let mut outputs = vec![a.out_corpus.as_path(), a.out_queries.as_path()];
    outputs.extend(a.out_gru.as_deref());
    outputs.extend(a.out_tokens.as_deref());
    check_paths(&[], &outputs)?;
    if a.n < 64 || a.n > 1280 {
        bail!("--n must lie in [64, 1280], got {}", a.n);
    }
    let enc = SyntheticEncoder::new(a.dim, a.seed)?;
    let corpus = synth::corpus(&enc, a.n)?;
    let queries = synth::queries(&enc)?;
    let format = format_of(a.binary);
    save_embeddings(&a.out_corpus, &corpus, format)?;
    save_embeddings(&a.out_queries, &queries, format)?;
    if let Some(p) = &a.out_gru {
        enc.gru.to_param_file().save(p)?;
    }
    if let Some(p) = &a.out_tokens {
        save_embeddings(p, &enc.table.to_records(), EmbeddingFormat::Text)?;
    }
    manifest::write(
        &a.out_corpus,
        &RunManifest {
            command: "synth-corpus",
            version: VERSION,
            inputs: vec![],
            outputs: manifest::display(&outputs),
            config: json!({ "n": a.n, "dim": a.dim, "seed": a.seed, "binary": a.binary }),
            summary: json!({ "corpus_records": corpus.len(), "query_records": queries.len() }),
        },
    )?;
    println!(
        "wrote {} corpus and {} query embeddings (dim {})",
        corpus.len(),
        queries.len(),
        a.dim
    );
    Ok(ExitCode::SUCCESS)
}

fn encode(a: EncodeArgs) -> Result<ExitCode> {
    check_paths(&[&a.input, &a.gru, &a.tokens], &[&a.out])?;
    let gru = GruParameters::from_param_file(&ParamFile::load(&a.gru)?)
        .with_context(|| format!("GRU parameters in {}", a.gru.display()))?;
    let table = TokenEmbeddingTable::from_records(&load_records(&a.tokens)?)?;
    let src = read_to_string(&a.input)?;
    let mut records = Vec::new();
    for (i, line) in src.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (id, text) = line
            .split_once('\t')
            .with_context(|| format!("{} line {}: expected `id<TAB>text`", a.input.display(), i + 1))?;
        let vector = encode_text(&gru, &table, text)
            .with_context(|| format!("{} line {}", a.input.display(), i + 1))?
            .with_source(id);
        records.push(EmbeddingRecord {
            id: id.to_string(),
            text: text.to_string(),
            vector,
        });
    }
    if records.is_empty() {
        bail!("{} contains no questions", a.input.display());
    }
    save_embeddings(&a.out, &records, format_of(a.binary))?;
    manifest::write(
        &a.out,
        &RunManifest {
            command: "encode",
            version: VERSION,
            inputs: manifest::display(&[&a.input, &a.gru, &a.tokens]),
            outputs: manifest::display(&[&a.out]),
            config: json!({ "binary": a.binary, "hidden_dim": gru.hidden_dim(), "input_dim": gru.input_dim() }),
            summary: json!({ "records": records.len() }),
        },
    )?;
    println!("encoded {} questions (dim {})", records.len(), gru.hidden_dim());
    Ok(ExitCode::SUCCESS)
}

fn build_dict(a: BuildDictArgs) -> Result<ExitCode> {
    check_paths(&[&a.corpus], &[&a.out])?;
    let records = load_records(&a.corpus)?;
    let mode = match a.dedup {
        DedupArg::Normalized => DedupMode::Normalized,
        DedupArg::Exact => DedupMode::Exact,
    };
    let (dict, summary) = Dictionary::build(&records, mode)?;
    dict.save_cache(&a.out)?;
    manifest::write(
        &a.out,
        &RunManifest {
            command: "build-dict",
            version: VERSION,
            inputs: manifest::display(&[&a.corpus]),
            outputs: manifest::display(&[&a.out]),
            config: json!({ "dedup": mode }),
            summary,
        },
    )?;
    println!(
        "columns: {}  duplicates removed: {}  dim: {}",
        summary.columns, summary.duplicates_removed, summary.dim
    );
    Ok(ExitCode::SUCCESS)
}

#[derive(Serialize)]
struct GenBqConfig {
    lasso: LassoConfig,
    options: GenerationOptions,
    threads: Option<usize>,
    keep_going: bool,
}

#[derive(Serialize)]
struct GenBqSummary<'a> {
    #[serde(flatten)]
    diagnostics: &'a vqabq_core::bq::BatchDiagnostics,
    failures: &'a [QueryFailure],
}

fn gen_bq(a: GenBqArgs) -> Result<ExitCode> {
    check_paths(&[&a.dict, &a.queries], &[&a.out])?;
    let cfg = lasso_config(&a.solver)?;
    if a.threads == Some(0) {
        bail!("--threads must be at least 1");
    }
    let dict = Dictionary::load_cache(&a.dict).with_context(|| format!("loading {}", a.dict.display()))?;
    let queries: Vec<Query> = load_records(&a.queries)?.iter().map(Query::from_record).collect();
    let opts = GenerationOptions {
        exclude_exact: a.exclude_exact,
        ..GenerationOptions::default()
    };
    let out = generate_batch(&dict, &queries, &cfg, &opts, a.threads)?;
    for f in &out.failures {
        eprintln!("query {} ({}): {}", f.index, f.query_id, f.message);
    }
    if !out.failures.is_empty() && !a.keep_going {
        bail!(
            "{} of {} queries failed; nothing written (use --keep-going to write the rest)",
            out.failures.len(),
            queries.len()
        );
    }
    write_string(&a.out, &write_bqd(&out.records))?;
    manifest::write(
        &a.out,
        &RunManifest {
            command: "gen-bq",
            version: VERSION,
            inputs: manifest::display(&[&a.dict, &a.queries]),
            outputs: manifest::display(&[&a.out]),
            config: GenBqConfig {
                lasso: cfg,
                options: opts,
                threads: a.threads,
                keep_going: a.keep_going,
            },
            summary: GenBqSummary {
                diagnostics: &out.diagnostics,
                failures: &out.failures,
            },
        },
    )?;
    let d = &out.diagnostics;
    println!(
        "records: {}/{}  clamped scores: {}  unconverged: {}  max duality gap: {:.3e}",
        d.succeeded, d.queries, d.clamped_scores, d.unconverged, d.max_duality_gap
    );
    if out.failures.is_empty() {
        Ok(ExitCode::SUCCESS)
    } else {
        Ok(ExitCode::from(EXIT_PARTIAL))
    }
}

fn load_bqd(path: &Path) -> Result<Vec<vqabq_core::BqdRecord>> {
    let records = read_bqd(&read_to_string(path)?).with_context(|| format!("parsing {}", path.display()))?;
    if records.is_empty() {
        bail!("{} holds no records", path.display());
    }
    Ok(records)
}

fn concat(a: ConcatArgs) -> Result<ExitCode> {
    check_paths(&[&a.bqd], &[&a.out])?;
    let policy = policy_of(&a.policy)?;
    let records = load_bqd(&a.bqd)?;
    let mut body = String::new();
    let mut appended = [0usize; 4];
    for r in &records {
        let (text, n) = concatenate(&r.mq_text, &r.basic_questions, &policy, &a.separator)?;
        appended[n] += 1;
        let line = json!({ "image_id": r.image_id, "mq": r.mq_text, "concatenated": text, "n_appended": n });
        body.push_str(&serde_json::to_string(&line)?);
        body.push('\n');
    }
    write_string(&a.out, &body)?;
    manifest::write(
        &a.out,
        &RunManifest {
            command: "concat",
            version: VERSION,
            inputs: manifest::display(&[&a.bqd]),
            outputs: manifest::display(&[&a.out]),
            config: json!({ "policy": policy, "separator": a.separator }),
            summary: json!({ "records": records.len(), "appended_counts": appended }),
        },
    )?;
    println!("concatenated {} records", records.len());
    Ok(ExitCode::SUCCESS)
}

#[derive(Serialize)]
struct StatsReport {
    #[serde(flatten)]
    stats: vqabq_core::ScoreStats,
    threshold_candidates: ThresholdCandidates,
}

fn stats(a: StatsArgs) -> Result<ExitCode> {
    let mut outputs = vec![a.out.as_path()];
    outputs.extend(a.table.as_deref());
    check_paths(&[&a.bqd], &outputs)?;
    let records = load_bqd(&a.bqd)?;
    let stats = score_statistics(&records)?;
    let report = StatsReport {
        stats,
        threshold_candidates: stats.threshold_candidates(),
    };
    write_json(&a.out, &report)?;
    let table = stats.render_table();
    if let Some(p) = &a.table {
        write_string(p, &table)?;
    }
    manifest::write(
        &a.out,
        &RunManifest {
            command: "stats",
            version: VERSION,
            inputs: manifest::display(&[&a.bqd]),
            outputs: manifest::display(&outputs),
            config: json!({}),
            summary: json!({ "records": records.len() }),
        },
    )?;
    print!("{table}");
    Ok(ExitCode::SUCCESS)
}

fn partition(a: PartitionArgs) -> Result<ExitCode> {
    let mut outputs = vec![a.out.as_path()];
    outputs.extend(a.table.as_deref());
    check_paths(&[&a.bqd], &outputs)?;
    let policy = policy_of(&a.policy)?;
    let records = load_bqd(&a.bqd)?;
    let counts = partition_counts(&records, &policy)?;
    write_json(
        &a.out,
        &json!({ "policy": policy, "counts": counts.counts, "fractions": counts.fractions(), "total": counts.total }),
    )?;
    let table = counts.render_table();
    if let Some(p) = &a.table {
        write_string(p, &table)?;
    }
    manifest::write(
        &a.out,
        &RunManifest {
            command: "partition",
            version: VERSION,
            inputs: manifest::display(&[&a.bqd]),
            outputs: manifest::display(&outputs),
            config: json!({ "policy": policy }),
            summary: json!({ "records": records.len() }),
        },
    )?;
    print!("{table}");
    Ok(ExitCode::SUCCESS)
}

fn eval(a: EvalArgs) -> Result<ExitCode> {
    let mut inputs = vec![a.predictions.as_path(), a.annotations.as_path()];
    inputs.extend(a.per_type.as_deref());
    check_paths(&inputs, &[&a.out])?;
    let records = join_records(&read_to_string(&a.predictions)?, &read_to_string(&a.annotations)?)?;
    let matching = if a.raw {
        AnswerMatching::Raw
    } else {
        AnswerMatching::Normalized
    };
    let mut report = evaluate(&records, matching)?;
    if let Some(p) = &a.per_type {
        report = report.with_types(&parse_type_map(&read_to_string(p)?)?);
    }
    write_json(&a.out, &report)?;
    manifest::write(
        &a.out,
        &RunManifest {
            command: "eval",
            version: VERSION,
            inputs: manifest::display(&inputs),
            outputs: manifest::display(&[&a.out]),
            config: json!({ "matching": if a.raw { "raw" } else { "normalized" } }),
            summary: json!({ "n": report.n, "mean": report.mean }),
        },
    )?;
    println!("accuracy: {:.4} over {} questions", report.mean, report.n);
    Ok(ExitCode::SUCCESS)
}

fn feature_set(path: &Path) -> Result<FeatureSet> {
    let records = load_records(path)?;
    let first = records
        .first()
        .with_context(|| format!("{} holds no features", path.display()))?;
    let cols: Vec<&[f64]> = records.iter().map(|r| r.vector.values()).collect();
    Ok(FeatureSet::new(Matrix::from_columns(first.vector.dim(), &cols)?)?)
}

fn coattend(a: CoattendArgs) -> Result<ExitCode> {
    let mut inputs = vec![a.question.as_path(), a.image.as_path()];
    inputs.extend(a.params.as_deref());
    check_paths(&inputs, &[&a.out])?;
    let q = feature_set(&a.question)?;
    let v = feature_set(&a.image)?;
    let params = match (&a.params, a.seed) {
        (Some(p), _) => coattention_params_from_file(&ParamFile::load(p)?)?,
        (None, Some(seed)) => random_coattention_params(q.dim(), v.dim(), a.k, seed)?,
        (None, None) => bail!("either --params or --seed is required"),
    };
    let co = alternating_coattention(&q, &v, &params)?;
    write_json(
        &a.out,
        &json!({ "s_hat": co.s_hat, "v_hat": co.v_hat, "q_hat": co.q_hat }),
    )?;
    if a.params.is_none() {
        let mut p = a.out.clone().into_os_string();
        p.push(".params.txt");
        coattention_params_to_file(&params).save(&p)?;
    }
    manifest::write(
        &a.out,
        &RunManifest {
            command: "coattend",
            version: VERSION,
            inputs: manifest::display(&inputs),
            outputs: manifest::display(&[&a.out]),
            config: json!({ "seed": a.seed, "k": params[0].hidden_dim() }),
            summary: json!({ "question_len": q.len(), "image_len": v.len() }),
        },
    )?;
    println!("co-attention over {} words and {} regions", q.len(), v.len());
    Ok(ExitCode::SUCCESS)
}
