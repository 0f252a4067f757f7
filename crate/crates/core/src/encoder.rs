//! GRU question encoder.
//!
//! Each step computes
//!
//! ```text
//! r  = σ(U_r h + W_r x)
//! z  = σ(U_z h + W_z x)
//! h̄  = tanh(U (r ⊙ h) + W x)
//! h' = z ⊙ h̄ + (1 − z) ⊙ h
//! ```
//!
//! and a question is the hidden state after its last token, starting from
//! `h = 0`. Parameters come from a [`ParamFile`] or a seeded generator;
//! nothing here trains them.

use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::embedding::{EmbeddingRecord, EmbeddingVector};
use crate::error::{Error, Result};
use crate::linalg::{axpy, Matrix};
use crate::params::ParamFile;

pub const GRU_SECTIONS: [&str; 6] = ["u_r", "u_z", "u", "w_r", "w_z", "w"];

#[derive(Debug, Clone, PartialEq)]
pub struct GruParameters {
    u_r: Matrix,
    u_z: Matrix,
    u: Matrix,
    w_r: Matrix,
    w_z: Matrix,
    w: Matrix,
}

impl GruParameters {
    pub fn new(u_r: Matrix, u_z: Matrix, u: Matrix, w_r: Matrix, w_z: Matrix, w: Matrix) -> Result<Self> {
        let hidden = u_r.rows();
        let input = w_r.cols();
        if hidden == 0 || input == 0 {
            return Err(Error::invalid("hidden and input dimensions must be at least 1"));
        }
        for (name, m) in [("u_r", &u_r), ("u_z", &u_z), ("u", &u)] {
            check_shape(name, m, hidden, hidden)?;
        }
        for (name, m) in [("w_r", &w_r), ("w_z", &w_z), ("w", &w)] {
            check_shape(name, m, hidden, input)?;
        }
        for (name, m) in [
            ("u_r", &u_r),
            ("u_z", &u_z),
            ("u", &u),
            ("w_r", &w_r),
            ("w_z", &w_z),
            ("w", &w),
        ] {
            if !m.is_finite() {
                return Err(Error::invalid(format!("GRU matrix `{name}` has non-finite entries")));
            }
        }
        Ok(GruParameters {
            u_r,
            u_z,
            u,
            w_r,
            w_z,
            w,
        })
    }

    pub fn zeros(hidden_dim: usize, input_dim: usize) -> Result<Self> {
        let h = || Matrix::zeros(hidden_dim, hidden_dim);
        let x = || Matrix::zeros(hidden_dim, input_dim);
        Self::new(h(), h(), h(), x(), x(), x())
    }

    /// Gaussian weights with standard deviation `scale / sqrt(fan_in)`.
    pub fn random(hidden_dim: usize, input_dim: usize, scale: f64, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |rows: usize, cols: usize| -> Result<Matrix> {
            let dist = Normal::new(0.0, scale / (cols as f64).sqrt())
                .map_err(|e| Error::invalid(format!("bad weight scale: {e}")))?;
            let data = (0..rows * cols).map(|_| dist.sample(&mut rng)).collect();
            Matrix::from_col_major(rows, cols, data)
        };
        let (h, x) = (hidden_dim, input_dim);
        Self::new(
            draw(h, h)?,
            draw(h, h)?,
            draw(h, h)?,
            draw(h, x)?,
            draw(h, x)?,
            draw(h, x)?,
        )
    }

    pub fn hidden_dim(&self) -> usize {
        self.u_r.rows()
    }

    pub fn input_dim(&self) -> usize {
        self.w_r.cols()
    }

    pub fn from_param_file(file: &ParamFile) -> Result<Self> {
        Self::new(
            file.get("u_r")?.clone(),
            file.get("u_z")?.clone(),
            file.get("u")?.clone(),
            file.get("w_r")?.clone(),
            file.get("w_z")?.clone(),
            file.get("w")?.clone(),
        )
    }

    pub fn to_param_file(&self) -> ParamFile {
        let mut f = ParamFile::new();
        for (name, m) in GRU_SECTIONS.iter().zip(self.matrices()) {
            f.insert(*name, m.clone());
        }
        f
    }

    fn matrices(&self) -> [&Matrix; 6] {
        [&self.u_r, &self.u_z, &self.u, &self.w_r, &self.w_z, &self.w]
    }
}

fn check_shape(name: &str, m: &Matrix, rows: usize, cols: usize) -> Result<()> {
    if m.rows() != rows {
        return Err(Error::shape(format!("GRU matrix `{name}` rows"), rows, m.rows()));
    }
    if m.cols() != cols {
        return Err(Error::shape(format!("GRU matrix `{name}` cols"), cols, m.cols()));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct HiddenState(Vec<f64>);

impl HiddenState {
    pub fn zeros(dim: usize) -> Self {
        HiddenState(vec![0.0; dim])
    }

    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("hidden state has non-finite entries"));
        }
        Ok(HiddenState(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn into_values(self) -> Vec<f64> {
        self.0
    }
}

/// Gate activations of one step, kept for inspection.
#[derive(Debug, Clone, PartialEq)]
pub struct GruTrace {
    pub reset: Vec<f64>,
    pub update: Vec<f64>,
    pub candidate: Vec<f64>,
    pub hidden: HiddenState,
}

#[inline]
fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

pub fn gru_step(params: &GruParameters, h_prev: &HiddenState, x: &[f64]) -> Result<HiddenState> {
    gru_step_traced(params, h_prev, x).map(|t| t.hidden)
}

pub fn gru_step_traced(params: &GruParameters, h_prev: &HiddenState, x: &[f64]) -> Result<GruTrace> {
    let hidden = params.hidden_dim();
    let h = h_prev.values();
    if h.len() != hidden {
        return Err(Error::shape("GRU hidden state", hidden, h.len()));
    }
    if x.len() != params.input_dim() {
        return Err(Error::shape("GRU input", params.input_dim(), x.len()));
    }

    let gate = |u: &Matrix, w: &Matrix, state: &[f64]| -> Result<Vec<f64>> {
        let mut pre = u.matvec(state)?;
        axpy(1.0, &w.matvec(x)?, &mut pre);
        Ok(pre)
    };

    let reset: Vec<f64> = gate(&params.u_r, &params.w_r, h)?.into_iter().map(sigmoid).collect();
    let update: Vec<f64> = gate(&params.u_z, &params.w_z, h)?.into_iter().map(sigmoid).collect();
    let gated: Vec<f64> = reset.iter().zip(h).map(|(r, h)| r * h).collect();
    let candidate: Vec<f64> = gate(&params.u, &params.w, &gated)?.into_iter().map(f64::tanh).collect();
    let next = update
        .iter()
        .zip(&candidate)
        .zip(h)
        .map(|((z, c), h)| z * c + (1.0 - z) * h)
        .collect();

    Ok(GruTrace {
        reset,
        update,
        candidate,
        hidden: HiddenState(next),
    })
}

/// Lowercases, splits on whitespace, and emits each punctuation character
/// as its own token.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut word = String::new();
    for ch in text.chars().flat_map(char::to_lowercase) {
        if ch.is_whitespace() {
            if !word.is_empty() {
                tokens.push(std::mem::take(&mut word));
            }
        } else if ch.is_ascii_punctuation() || (!ch.is_alphanumeric() && !ch.is_whitespace()) {
            if !word.is_empty() {
                tokens.push(std::mem::take(&mut word));
            }
            tokens.push(ch.to_string());
        } else {
            word.push(ch);
        }
    }
    if !word.is_empty() {
        tokens.push(word);
    }
    tokens
}

/// Word embeddings keyed by token, with a reserved vector for unknown tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenEmbeddingTable {
    dim: usize,
    vectors: HashMap<String, Vec<f64>>,
    unknown: Vec<f64>,
}

impl TokenEmbeddingTable {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("token embedding dim must be at least 1"));
        }
        Ok(TokenEmbeddingTable {
            dim,
            vectors: HashMap::new(),
            unknown: vec![0.0; dim],
        })
    }

    pub fn insert(&mut self, token: impl Into<String>, vector: Vec<f64>) -> Result<()> {
        let token = token.into();
        if vector.len() != self.dim {
            return Err(Error::shape(format!("token `{token}`"), self.dim, vector.len()));
        }
        self.vectors.insert(token, vector);
        Ok(())
    }

    pub fn set_unknown(&mut self, vector: Vec<f64>) -> Result<()> {
        if vector.len() != self.dim {
            return Err(Error::shape("unknown-token vector", self.dim, vector.len()));
        }
        self.unknown = vector;
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn contains(&self, token: &str) -> bool {
        self.vectors.contains_key(token)
    }

    pub fn get(&self, token: &str) -> &[f64] {
        self.vectors.get(token).map_or(&self.unknown, Vec::as_slice)
    }

    /// Builds a table from embedding-file records, using each record's id
    /// as the token.
    pub fn from_records(records: &[EmbeddingRecord]) -> Result<Self> {
        let dim = records
            .first()
            .map(|r| r.vector.dim())
            .ok_or_else(|| Error::invalid("token table file has no records"))?;
        let mut table = Self::new(dim)?;
        for r in records {
            table.insert(r.id.clone(), r.vector.values().to_vec())?;
        }
        Ok(table)
    }

    /// Gaussian vectors for every token of `vocabulary`, in a seeded order.
    pub fn random<'a>(vocabulary: impl IntoIterator<Item = &'a str>, dim: usize, seed: u64) -> Result<Self> {
        let mut vocab: Vec<&str> = vocabulary.into_iter().collect();
        vocab.sort_unstable();
        vocab.dedup();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 1.0).expect("unit normal");
        let mut table = Self::new(dim)?;
        for tok in vocab {
            let v = (0..dim).map(|_| normal.sample(&mut rng)).collect();
            table.insert(tok, v)?;
        }
        Ok(table)
    }

    /// Records sorted by token so the written file is reproducible.
    pub fn to_records(&self) -> Vec<EmbeddingRecord> {
        let mut tokens: Vec<&String> = self.vectors.keys().collect();
        tokens.sort();
        tokens
            .into_iter()
            .map(|t| EmbeddingRecord {
                id: t.clone(),
                text: t.clone(),
                vector: EmbeddingVector::new(self.vectors[t].clone())
                    .expect("finite token vector")
                    .with_source(t.clone()),
            })
            .collect()
    }
}

pub fn encode_question(
    params: &GruParameters,
    table: &TokenEmbeddingTable,
    tokens: &[impl AsRef<str>],
) -> Result<EmbeddingVector> {
    if tokens.is_empty() {
        return Err(Error::invalid("cannot encode an empty token list"));
    }
    if table.dim() != params.input_dim() {
        return Err(Error::shape("token embedding dim", params.input_dim(), table.dim()));
    }
    let mut h = HiddenState::zeros(params.hidden_dim());
    for tok in tokens {
        h = gru_step(params, &h, table.get(tok.as_ref()))?;
    }
    EmbeddingVector::new(h.into_values())
}

pub fn encode_text(params: &GruParameters, table: &TokenEmbeddingTable, text: &str) -> Result<EmbeddingVector> {
    let tokens = tokenize(text);
    if tokens.is_empty() {
        return Err(Error::invalid(format!("question `{text}` has no tokens")));
    }
    encode_question(params, table, &tokens)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn scalar(v: f64) -> Matrix {
        Matrix::from_col_major(1, 1, vec![v]).unwrap()
    }

    #[test]
    fn zero_params_halve_the_state() {
        let p = GruParameters::zeros(3, 2).unwrap();
        let h = HiddenState::new(vec![1.0, -2.0, 0.5]).unwrap();
        let out = gru_step(&p, &h, &[7.0, -3.0]).unwrap();
        assert_eq!(out.values(), &[0.5, -1.0, 0.25]);
    }

    #[test]
    fn zero_state_and_input_stay_zero() {
        let p = GruParameters::random(4, 3, 1.0, 9).unwrap();
        let out = gru_step(&p, &HiddenState::zeros(4), &[0.0; 3]).unwrap();
        assert_eq!(out.values(), &[0.0; 4]);
    }

    #[test]
    fn scalar_hand_evaluation() {
        // r = z = σ(1), h̄ = tanh(U·(r·0) + W·1) = tanh(1), h = z·h̄
        let s = 1.0 / (1.0 + (-1.0f64).exp());
        let expected = s * 1.0f64.tanh();
        assert!((expected - 0.5568).abs() < 5e-5);
        let p = GruParameters::new(
            scalar(1.0),
            scalar(1.0),
            scalar(1.0),
            scalar(1.0),
            scalar(1.0),
            scalar(1.0),
        )
        .unwrap();
        let out = gru_step(&p, &HiddenState::zeros(1), &[1.0]).unwrap();
        assert!((out.values()[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn shape_errors() {
        let p = GruParameters::zeros(3, 2).unwrap();
        assert!(matches!(
            gru_step(&p, &HiddenState::zeros(2), &[0.0; 2]),
            Err(Error::Shape { .. })
        ));
        assert!(matches!(
            gru_step(&p, &HiddenState::zeros(3), &[0.0; 3]),
            Err(Error::Shape { .. })
        ));
        let bad = GruParameters::new(
            Matrix::zeros(3, 3),
            Matrix::zeros(3, 3),
            Matrix::zeros(3, 2),
            Matrix::zeros(3, 2),
            Matrix::zeros(3, 2),
            Matrix::zeros(3, 2),
        );
        assert!(matches!(bad, Err(Error::Shape { .. })));
    }

    #[test]
    fn tokenizer_splits_punctuation() {
        assert_eq!(
            tokenize("What's  on the PLATE?"),
            vec!["what", "'", "s", "on", "the", "plate", "?"]
        );
        assert!(tokenize("   ").is_empty());
    }

    #[test]
    fn encode_single_token_with_zero_params_is_zero() {
        let p = GruParameters::zeros(5, 2).unwrap();
        let mut t = TokenEmbeddingTable::new(2).unwrap();
        t.insert("a", vec![1.0, 2.0]).unwrap();
        let v = encode_question(&p, &t, &["a"]).unwrap();
        assert_eq!(v.values(), &[0.0; 5]);
    }

    #[test]
    fn encode_is_order_sensitive_and_has_hidden_dim() {
        let p = GruParameters::random(6, 3, 1.0, 1).unwrap();
        let t = TokenEmbeddingTable::random(["a", "b"], 3, 2).unwrap();
        let ab = encode_question(&p, &t, &["a", "b"]).unwrap();
        let ba = encode_question(&p, &t, &["b", "a"]).unwrap();
        assert_eq!(ab.dim(), 6);
        assert_ne!(ab, ba);
    }

    #[test]
    fn encode_rejects_empty() {
        let p = GruParameters::zeros(2, 2).unwrap();
        let t = TokenEmbeddingTable::new(2).unwrap();
        assert!(matches!(
            encode_question(&p, &t, &[] as &[&str]),
            Err(Error::InvalidInput(_))
        ));
        assert!(encode_text(&p, &t, "  ").is_err());
    }

    #[test]
    fn unknown_tokens_use_reserved_vector() {
        let mut t = TokenEmbeddingTable::new(2).unwrap();
        assert_eq!(t.get("zebra"), &[0.0, 0.0]);
        t.set_unknown(vec![1.0, 1.0]).unwrap();
        assert_eq!(t.get("zebra"), &[1.0, 1.0]);
    }

    #[test]
    fn param_file_round_trip() {
        let p = GruParameters::random(3, 2, 0.5, 4).unwrap();
        let q = GruParameters::from_param_file(&p.to_param_file()).unwrap();
        assert_eq!(p, q);
    }

    proptest! {
        // Strict bounds hold while preactivations stay below where f64
        // tanh/σ round to ±1 (|v| ≳ 19 for tanh).
        #[test]
        fn gates_strictly_bounded_in_unsaturated_range(
            seed in 0u64..1000,
            scale in 0.1f64..1.0,
            h0 in proptest::collection::vec(-2.0f64..2.0, 5),
            x in proptest::collection::vec(-2.0f64..2.0, 3),
        ) {
            let p = GruParameters::random(5, 3, scale, seed).unwrap();
            let t = gru_step_traced(&p, &HiddenState::new(h0).unwrap(), &x).unwrap();
            for (&r, &z) in t.reset.iter().zip(&t.update) {
                prop_assert!(r > 0.0 && r < 1.0);
                prop_assert!(z > 0.0 && z < 1.0);
            }
            for &c in &t.candidate {
                prop_assert!(c > -1.0 && c < 1.0);
            }
        }

        #[test]
        fn state_is_a_convex_combination(
            seed in 0u64..1000,
            scale in 0.1f64..3.0,
            h0 in proptest::collection::vec(-4.0f64..4.0, 5),
            x in proptest::collection::vec(-3.0f64..3.0, 3),
        ) {
            let p = GruParameters::random(5, 3, scale, seed).unwrap();
            let h = HiddenState::new(h0.clone()).unwrap();
            let t = gru_step_traced(&p, &h, &x).unwrap();
            for (&z, &c) in t.update.iter().zip(&t.candidate) {
                prop_assert!((0.0..=1.0).contains(&z) && (-1.0..=1.0).contains(&c));
            }
            for (hn, hp) in t.hidden.values().iter().zip(&h0) {
                prop_assert!(hn.abs() <= hp.abs().max(1.0));
            }
            let again = gru_step(&p, &h, &x).unwrap();
            prop_assert_eq!(again.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                            t.hidden.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        }

        #[test]
        fn single_token_encoding_is_one_step(seed in 0u64..500) {
            let p = GruParameters::random(4, 3, 1.0, seed).unwrap();
            let t = TokenEmbeddingTable::random(["tok"], 3, seed + 1).unwrap();
            let enc = encode_question(&p, &t, &["tok"]).unwrap();
            let step = gru_step(&p, &HiddenState::zeros(4), t.get("tok")).unwrap();
            prop_assert_eq!(enc.values(), step.values());
        }
    }
}
