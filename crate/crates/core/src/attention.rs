//! Guided attention pooling and the three-step alternating co-attention.
//!
//! For features `X` (d × T) and guide `g`:
//!
//! ```text
//! H = tanh(W_x X + (W_g g) 1ᵀ)      k × T
//! a = softmax(w_hxᵀ H)              T
//! x̂ = Σ_i a_i x_i                   d
//! ```

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::linalg::{axpy, dot, Matrix};
use crate::params::ParamFile;

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParameters {
    w_x: Matrix,
    w_g: Matrix,
    w_hx: Vec<f64>,
}

impl AttentionParameters {
    pub fn new(w_x: Matrix, w_g: Matrix, w_hx: Vec<f64>) -> Result<Self> {
        let k = w_x.rows();
        if k == 0 {
            return Err(Error::invalid("attention hidden size k must be at least 1"));
        }
        if w_g.rows() != k {
            return Err(Error::shape("W_g rows", k, w_g.rows()));
        }
        if w_hx.len() != k {
            return Err(Error::shape("w_hx length", k, w_hx.len()));
        }
        if !w_x.is_finite() || !w_g.is_finite() || w_hx.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("attention parameters have non-finite entries"));
        }
        Ok(AttentionParameters { w_x, w_g, w_hx })
    }

    pub fn random(k: usize, feature_dim: usize, guide_dim: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut gauss = |n: usize, fan_in: usize| -> Vec<f64> {
            let d = Normal::new(0.0, 1.0 / (fan_in.max(1) as f64).sqrt()).expect("positive std");
            (0..n).map(|_| d.sample(&mut rng)).collect()
        };
        let w_x = Matrix::from_col_major(k, feature_dim, gauss(k * feature_dim, feature_dim))?;
        let w_g = Matrix::from_col_major(k, guide_dim, gauss(k * guide_dim, guide_dim))?;
        let w_hx = gauss(k, k);
        Self::new(w_x, w_g, w_hx)
    }

    pub fn hidden_dim(&self) -> usize {
        self.w_x.rows()
    }

    pub fn feature_dim(&self) -> usize {
        self.w_x.cols()
    }

    pub fn guide_dim(&self) -> usize {
        self.w_g.cols()
    }

    pub fn w_hx(&self) -> &[f64] {
        &self.w_hx
    }

    pub fn with_w_hx(mut self, w_hx: Vec<f64>) -> Result<Self> {
        if w_hx.len() != self.hidden_dim() {
            return Err(Error::shape("w_hx length", self.hidden_dim(), w_hx.len()));
        }
        self.w_hx = w_hx;
        Ok(self)
    }

    /// Reads sections `<prefix>w_x`, `<prefix>w_g`, `<prefix>w_hx`.
    pub fn from_param_file(file: &ParamFile, prefix: &str) -> Result<Self> {
        Self::new(
            file.get(&format!("{prefix}w_x"))?.clone(),
            file.get(&format!("{prefix}w_g"))?.clone(),
            file.get_vector(&format!("{prefix}w_hx"))?,
        )
    }

    pub fn write_to(&self, file: &mut ParamFile, prefix: &str) {
        file.insert(format!("{prefix}w_x"), self.w_x.clone());
        file.insert(format!("{prefix}w_g"), self.w_g.clone());
        let w_hx = Matrix::from_col_major(1, self.w_hx.len(), self.w_hx.clone()).expect("row vector");
        file.insert(format!("{prefix}w_hx"), w_hx);
    }
}

/// Feature vectors as the columns of a d × T matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet(Matrix);

impl FeatureSet {
    pub fn new(columns: Matrix) -> Result<Self> {
        if columns.cols() == 0 || columns.rows() == 0 {
            return Err(Error::invalid("a feature set needs at least one nonempty feature"));
        }
        if !columns.is_finite() {
            return Err(Error::invalid("feature set has non-finite entries"));
        }
        Ok(FeatureSet(columns))
    }

    pub fn dim(&self) -> usize {
        self.0.rows()
    }

    pub fn len(&self) -> usize {
        self.0.cols()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn column(&self, i: usize) -> &[f64] {
        self.0.col(i)
    }

    pub fn column_mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.dim()];
        for c in self.0.columns() {
            axpy(1.0, c, &mut m);
        }
        let t = self.len() as f64;
        m.iter_mut().for_each(|v| *v /= t);
        m
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionResult {
    pub weights: Vec<f64>,
    pub attended: Vec<f64>,
}

/// Max-subtracted softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

pub fn attention_logits(x: &FeatureSet, g: &[f64], params: &AttentionParameters) -> Result<Vec<f64>> {
    if x.dim() != params.feature_dim() {
        return Err(Error::shape("attention feature dim", params.feature_dim(), x.dim()));
    }
    if g.len() != params.guide_dim() {
        return Err(Error::shape("attention guide dim", params.guide_dim(), g.len()));
    }
    let guide = params.w_g.matvec(g)?;
    (0..x.len())
        .map(|i| {
            let mut h = params.w_x.matvec(x.column(i))?;
            for (hj, gj) in h.iter_mut().zip(&guide) {
                *hj = (*hj + gj).tanh();
            }
            Ok(dot(&params.w_hx, &h))
        })
        .collect()
}

pub fn attention_op(x: &FeatureSet, g: &[f64], params: &AttentionParameters) -> Result<AttentionResult> {
    let weights = softmax(&attention_logits(x, g, params)?);
    let mut attended = vec![0.0; x.dim()];
    for (i, &a) in weights.iter().enumerate() {
        axpy(a, x.column(i), &mut attended);
    }
    Ok(AttentionResult { weights, attended })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoAttention {
    /// Question summary from the unguided first step.
    pub s_hat: Vec<f64>,
    pub v_hat: Vec<f64>,
    pub q_hat: Vec<f64>,
}

/// Step 1 attends `q` with a zero guide, step 2 attends `v` guided by the
/// step-1 summary, step 3 attends `q` guided by the attended image.
pub fn alternating_coattention(
    q: &FeatureSet,
    v: &FeatureSet,
    params: &[AttentionParameters; 3],
) -> Result<CoAttention> {
    let at_step = |n: usize| {
        move |e: Error| match e {
            Error::Shape {
                context,
                expected,
                found,
            } => Error::Shape {
                context: format!("co-attention step {n}: {context}"),
                expected,
                found,
            },
            other => Error::invalid(format!("co-attention step {n}: {other}")),
        }
    };

    let zero = vec![0.0; params[0].guide_dim()];
    let s_hat = attention_op(q, &zero, &params[0]).map_err(at_step(1))?.attended;
    let v_hat = attention_op(v, &s_hat, &params[1]).map_err(at_step(2))?.attended;
    let q_hat = attention_op(q, &v_hat, &params[2]).map_err(at_step(3))?.attended;
    Ok(CoAttention { s_hat, v_hat, q_hat })
}

/// Parameters for the three steps given question dim, image dim and k.
pub fn random_coattention_params(
    question_dim: usize,
    image_dim: usize,
    k: usize,
    seed: u64,
) -> Result<[AttentionParameters; 3]> {
    Ok([
        AttentionParameters::random(k, question_dim, question_dim, seed)?,
        AttentionParameters::random(k, image_dim, question_dim, seed.wrapping_add(1))?,
        AttentionParameters::random(k, question_dim, image_dim, seed.wrapping_add(2))?,
    ])
}

pub fn coattention_params_from_file(file: &ParamFile) -> Result<[AttentionParameters; 3]> {
    Ok([
        AttentionParameters::from_param_file(file, "step1.")?,
        AttentionParameters::from_param_file(file, "step2.")?,
        AttentionParameters::from_param_file(file, "step3.")?,
    ])
}

pub fn coattention_params_to_file(params: &[AttentionParameters; 3]) -> ParamFile {
    let mut f = ParamFile::new();
    for (i, p) in params.iter().enumerate() {
        p.write_to(&mut f, &format!("step{}.", i + 1));
    }
    f
}

#[cfg(test)]
#[allow(clippy::needless_range_loop)]
mod tests {
    use super::*;
    use crate::synth::random_vector;

    fn features(d: usize, t: usize, seed: u64) -> FeatureSet {
        FeatureSet::new(Matrix::from_col_major(d, t, random_vector(d * t, seed)).unwrap()).unwrap()
    }

    #[test]
    fn single_feature_gets_all_weight() {
        let x = features(4, 1, 1);
        let p = AttentionParameters::random(3, 4, 2, 2).unwrap();
        let r = attention_op(&x, &[0.3, -1.0], &p).unwrap();
        assert_eq!(r.weights, vec![1.0]);
        assert_eq!(r.attended, x.column(0));
    }

    #[test]
    fn zero_scoring_vector_gives_column_mean() {
        let x = features(4, 5, 3);
        let p = AttentionParameters::random(3, 4, 2, 4)
            .unwrap()
            .with_w_hx(vec![0.0; 3])
            .unwrap();
        let r = attention_op(&x, &[1.0, 2.0], &p).unwrap();
        assert!(r.weights.iter().all(|&w| (w - 0.2).abs() < 1e-15));
        for (a, m) in r.attended.iter().zip(x.column_mean()) {
            assert!((a - m).abs() < 1e-14);
        }
    }

    #[test]
    fn matches_straight_line_evaluation() {
        let (d, t, k, dg) = (4, 3, 5, 2);
        let x = features(d, t, 10);
        let g = [0.7, -0.4];
        let p = AttentionParameters::random(k, d, dg, 11).unwrap();
        // plain index loops, no shared kernels
        let mut logits = [0.0; 3];
        for i in 0..t {
            for r in 0..k {
                let mut pre = 0.0;
                for c in 0..d {
                    pre += p.w_x.get(r, c) * x.matrix().get(c, i);
                }
                for c in 0..dg {
                    pre += p.w_g.get(r, c) * g[c];
                }
                logits[i] += p.w_hx[r] * pre.tanh();
            }
        }
        let z: f64 = logits.iter().map(|l| l.exp()).sum();
        let w: Vec<f64> = logits.iter().map(|l| l.exp() / z).collect();
        let mut want = [0.0; 4];
        for i in 0..t {
            for c in 0..d {
                want[c] += w[i] * x.matrix().get(c, i);
            }
        }
        let r = attention_op(&x, &g, &p).unwrap();
        for (a, b) in r.weights.iter().zip(&w) {
            assert!((a - b).abs() < 1e-14);
        }
        for (a, b) in r.attended.iter().zip(&want) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn shape_errors_name_the_step() {
        let q = features(4, 3, 1);
        let v = features(6, 2, 2);
        let mut params = random_coattention_params(4, 6, 3, 5).unwrap();
        params[1] = AttentionParameters::random(3, 5, 4, 9).unwrap();
        let err = alternating_coattention(&q, &v, &params).unwrap_err();
        assert!(matches!(err, Error::Shape { .. }));
        assert!(err.to_string().contains("step 2"), "{err}");
        assert!(attention_op(&q, &[0.0; 3], &random_coattention_params(4, 6, 3, 5).unwrap()[0]).is_err());
    }

    #[test]
    fn coattention_with_flat_scoring_is_means() {
        let q = features(4, 3, 1);
        let v = features(6, 5, 2);
        let params = random_coattention_params(4, 6, 3, 7)
            .unwrap()
            .map(|p| p.with_w_hx(vec![0.0; 3]).unwrap());
        let out = alternating_coattention(&q, &v, &params).unwrap();
        let close = |a: &[f64], b: &[f64]| a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-14);
        assert!(close(&out.s_hat, &q.column_mean()));
        assert!(close(&out.v_hat, &v.column_mean()));
        assert!(close(&out.q_hat, &q.column_mean()));
    }

    #[test]
    fn single_columns_pass_through() {
        let q = features(4, 1, 1);
        let v = features(6, 1, 2);
        let out = alternating_coattention(&q, &v, &random_coattention_params(4, 6, 3, 8).unwrap()).unwrap();
        assert_eq!(out.s_hat, q.column(0));
        assert_eq!(out.v_hat, v.column(0));
        assert_eq!(out.q_hat, q.column(0));
    }

    #[test]
    fn param_file_round_trip() {
        let p = random_coattention_params(4, 6, 3, 1).unwrap();
        let f = coattention_params_to_file(&p);
        let mut buf = Vec::new();
        f.write(&mut buf).unwrap();
        let back =
            coattention_params_from_file(&ParamFile::parse(std::str::from_utf8(&buf).unwrap()).unwrap()).unwrap();
        assert_eq!(back, p);
    }

    #[test]
    fn softmax_survives_large_logits() {
        let w = softmax(&[1000.0, 1000.0, -1000.0]);
        assert_eq!(w, vec![0.5, 0.5, 0.0]);
    }
}
