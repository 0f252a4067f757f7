//! Seeded synthetic data: random designs for solver checks and a small
//! templated question corpus encoded with a random GRU.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::embedding::{EmbeddingRecord, EmbeddingVector};
use crate::encoder::{encode_text, tokenize, GruParameters, TokenEmbeddingTable};
use crate::error::Result;
use crate::linalg::{norm2, Matrix};

pub fn random_vector(len: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len).map(|_| StandardNormal.sample(&mut rng)).collect()
}

/// Gaussian matrix with every column scaled to unit L2 norm.
pub fn random_unit_design(rows: usize, cols: usize, seed: u64) -> Matrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut m = Matrix::zeros(rows, cols);
    for j in 0..cols {
        let col = m.col_mut(j);
        loop {
            for v in col.iter_mut() {
                *v = StandardNormal.sample(&mut rng);
            }
            let n = norm2(col);
            if n > 1e-8 {
                col.iter_mut().for_each(|v| *v /= n);
                break;
            }
        }
    }
    m
}

const TEMPLATES: [&str; 16] = [
    "what color is the {}?",
    "how many {}s are there?",
    "is there a {} in the picture?",
    "where is the {}?",
    "what is the {} doing?",
    "is the {} on the left?",
    "what is next to the {}?",
    "is this {} old?",
    "what is on top of the {}?",
    "does the {} look clean?",
    "why is the {} here?",
    "who is holding the {}?",
    "what shape is the {}?",
    "is the {} made of wood?",
    "how big is the {}?",
    "what is behind the {}?",
];

const OBJECTS: [&str; 80] = [
    "dog",
    "cat",
    "bus",
    "train",
    "plate",
    "cake",
    "bed",
    "baby",
    "computer",
    "farm",
    "horse",
    "kite",
    "table",
    "chair",
    "car",
    "boat",
    "clock",
    "phone",
    "bird",
    "sheep",
    "cow",
    "pizza",
    "laptop",
    "bench",
    "umbrella",
    "bottle",
    "cup",
    "bowl",
    "banana",
    "apple",
    "sandwich",
    "orange",
    "broccoli",
    "carrot",
    "couch",
    "plant",
    "window",
    "door",
    "tree",
    "sign",
    "truck",
    "bicycle",
    "motorcycle",
    "airplane",
    "giraffe",
    "zebra",
    "elephant",
    "bear",
    "frisbee",
    "skateboard",
    "surfboard",
    "racket",
    "glove",
    "ball",
    "helmet",
    "hat",
    "shirt",
    "tie",
    "bag",
    "suitcase",
    "vase",
    "book",
    "lamp",
    "toilet",
    "sink",
    "oven",
    "fridge",
    "remote",
    "keyboard",
    "mouse",
    "towel",
    "mirror",
    "fence",
    "road",
    "building",
    "bridge",
    "wall",
    "floor",
    "sky",
    "field",
];

/// Up to 1280 distinct templated questions, cycling templates fastest.
pub fn synthetic_questions(n: usize) -> Vec<String> {
    assert!(
        n <= TEMPLATES.len() * OBJECTS.len(),
        "at most {} synthetic questions",
        TEMPLATES.len() * OBJECTS.len()
    );
    (0..n)
        .map(|i| {
            let t = TEMPLATES[i % TEMPLATES.len()];
            let o = OBJECTS[i / TEMPLATES.len()];
            t.replacen("{}", o, 1)
        })
        .collect()
}

fn vocabulary() -> Vec<String> {
    let mut vocab: Vec<String> = synthetic_questions(TEMPLATES.len() * OBJECTS.len())
        .iter()
        .flat_map(|q| tokenize(q))
        .collect();
    vocab.sort();
    vocab.dedup();
    vocab
}

/// A reproducible encoder setup: random GRU weights plus random word
/// vectors for the whole synthetic vocabulary.
#[derive(Debug, Clone)]
pub struct SyntheticEncoder {
    pub gru: GruParameters,
    pub table: TokenEmbeddingTable,
}

impl SyntheticEncoder {
    pub fn new(dim: usize, seed: u64) -> Result<Self> {
        let gru = GruParameters::random(dim, dim, 1.0, seed)?;
        let vocab = vocabulary();
        let table = TokenEmbeddingTable::random(vocab.iter().map(String::as_str), dim, seed.wrapping_add(1))?;
        Ok(SyntheticEncoder { gru, table })
    }

    pub fn encode(&self, id: &str, text: &str) -> Result<EmbeddingRecord> {
        let v: EmbeddingVector = encode_text(&self.gru, &self.table, text)?;
        Ok(EmbeddingRecord {
            id: id.to_string(),
            text: text.to_string(),
            vector: v.with_source(id),
        })
    }
}

/// `n` corpus questions with ids `bq00000`, `bq00001`, ...
pub fn corpus(encoder: &SyntheticEncoder, n: usize) -> Result<Vec<EmbeddingRecord>> {
    synthetic_questions(n)
        .iter()
        .enumerate()
        .map(|(i, q)| encoder.encode(&format!("bq{i:05}"), q))
        .collect()
}

/// Eight queries against a corpus of at least 64 questions: five repeat a
/// corpus question verbatim, three use objects the 64-question corpus never
/// mentions. Ids have the form `<image_id>#<n>`.
pub fn queries(encoder: &SyntheticEncoder) -> Result<Vec<EmbeddingRecord>> {
    let corpus_texts = synthetic_questions(64);
    let texts = [
        corpus_texts[0].clone(),
        corpus_texts[9].clone(),
        corpus_texts[18].clone(),
        corpus_texts[27].clone(),
        corpus_texts[36].clone(),
        "what color is the zebra?".to_string(),
        "is there a giraffe in the picture?".to_string(),
        "how many elephants are there?".to_string(),
    ];
    texts
        .iter()
        .enumerate()
        .map(|(i, q)| encoder.encode(&format!("img{:03}#{}", 100 + i / 2, i % 2), q))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn designs_have_unit_columns_and_are_seeded() {
        let a = random_unit_design(7, 5, 42);
        for c in a.columns() {
            assert!((norm2(c) - 1.0).abs() < 1e-12);
        }
        assert_eq!(a, random_unit_design(7, 5, 42));
        assert_ne!(a, random_unit_design(7, 5, 43));
    }

    #[test]
    fn questions_are_distinct() {
        let qs = synthetic_questions(1280);
        let mut sorted = qs.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), 1280);
        assert_eq!(qs[0], "what color is the dog?");
    }

    #[test]
    fn corpus_is_reproducible() {
        let e = SyntheticEncoder::new(16, 5).unwrap();
        let a = corpus(&e, 64).unwrap();
        let b = corpus(&SyntheticEncoder::new(16, 5).unwrap(), 64).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|r| r.vector.dim() == 16));
        let q = queries(&e).unwrap();
        assert_eq!(q[0].vector.values(), a[0].vector.values());
        assert_eq!(q.len(), 8);
    }
}
