//! LASSO by cyclic coordinate descent:
//!
//! ```text
//! minimize  ½‖Ax − b‖² + λ‖x‖₁        (optionally subject to x ≥ 0)
//! ```
//!
//! Each full sweep visits every column in ascending order, then the
//! residual is recomputed from scratch and the duality gap is evaluated at
//! the dual point obtained by rescaling the residual into the feasible set
//! `{θ : ‖Aᵀθ‖_∞ ≤ λ}`. Between full sweeps the solver cycles over the
//! current support only (the active-set phase).

use serde::{Deserialize, Serialize};

use crate::dictionary::Dictionary;
use crate::embedding::EmbeddingVector;
use crate::error::{Error, Result};
use crate::linalg::{axpy, dot, norm1, soft_threshold, Matrix};

pub const DEFAULT_LAMBDA_REL: f64 = 0.024;
pub const DEFAULT_TOLERANCE: f64 = 1e-6;
pub const DEFAULT_MAX_SWEEPS: usize = 1000;

/// Cap on support-only passes between two full sweeps.
const MAX_ACTIVE_PASSES: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Penalty {
    /// λ as given.
    Absolute(f64),
    /// λ as a fraction of λ_max for the query at hand.
    Relative(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LassoConfig {
    pub penalty: Penalty,
    /// Duality-gap threshold for declaring convergence.
    pub tolerance: f64,
    pub max_sweeps: usize,
    pub nonnegative: bool,
}

impl Default for LassoConfig {
    fn default() -> Self {
        LassoConfig {
            penalty: Penalty::Relative(DEFAULT_LAMBDA_REL),
            tolerance: DEFAULT_TOLERANCE,
            max_sweeps: DEFAULT_MAX_SWEEPS,
            nonnegative: false,
        }
    }
}

impl LassoConfig {
    pub fn absolute(lambda: f64) -> Self {
        LassoConfig {
            penalty: Penalty::Absolute(lambda),
            ..Default::default()
        }
    }

    pub fn relative(fraction: f64) -> Self {
        LassoConfig {
            penalty: Penalty::Relative(fraction),
            ..Default::default()
        }
    }

    pub fn with_tolerance(mut self, tolerance: f64) -> Self {
        self.tolerance = tolerance;
        self
    }

    pub fn with_max_sweeps(mut self, max_sweeps: usize) -> Self {
        self.max_sweeps = max_sweeps;
        self
    }

    pub fn with_nonnegative(mut self, nonnegative: bool) -> Self {
        self.nonnegative = nonnegative;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let value = match self.penalty {
            Penalty::Absolute(v) | Penalty::Relative(v) => v,
        };
        if !value.is_finite() || value < 0.0 {
            return Err(Error::invalid(format!(
                "penalty must be finite and nonnegative, got {value}"
            )));
        }
        if value == 0.0 {
            return Err(Error::Unsupported(
                "λ = 0 is an unpenalized least-squares problem, not LASSO".into(),
            ));
        }
        if !(self.tolerance.is_finite() && self.tolerance > 0.0) {
            return Err(Error::invalid(format!(
                "tolerance must be positive, got {}",
                self.tolerance
            )));
        }
        if self.max_sweeps == 0 {
            return Err(Error::invalid("max_sweeps must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SparseSolution {
    pub coefficients: Vec<f64>,
    pub lambda: f64,
    pub duality_gap: f64,
    pub sweeps_used: usize,
    pub objective: f64,
    pub converged: bool,
    /// Objective after each full sweep.
    pub objective_trace: Vec<f64>,
}

impl SparseSolution {
    pub fn nonzeros(&self) -> usize {
        self.coefficients.iter().filter(|&&c| c != 0.0).count()
    }
}

/// A design matrix and target, optionally with some columns held at zero.
#[derive(Debug, Clone, Copy)]
pub struct LassoProblem<'a> {
    design: &'a Matrix,
    target: &'a [f64],
    excluded: Option<&'a [bool]>,
}

impl<'a> LassoProblem<'a> {
    pub fn new(design: &'a Matrix, target: &'a [f64]) -> Result<Self> {
        if target.len() != design.rows() {
            return Err(Error::shape("LASSO target", design.rows(), target.len()));
        }
        if !target.iter().all(|v| v.is_finite()) {
            return Err(Error::invalid("LASSO target has non-finite entries"));
        }
        if !design.is_finite() {
            return Err(Error::invalid("design matrix has non-finite entries"));
        }
        Ok(LassoProblem {
            design,
            target,
            excluded: None,
        })
    }

    /// Columns flagged `true` are pinned to zero and drop out of the dual
    /// constraint.
    pub fn with_excluded(mut self, excluded: &'a [bool]) -> Result<Self> {
        if excluded.len() != self.design.cols() {
            return Err(Error::shape("exclusion mask", self.design.cols(), excluded.len()));
        }
        self.excluded = Some(excluded);
        Ok(self)
    }

    #[inline]
    fn is_active(&self, j: usize) -> bool {
        self.excluded.is_none_or(|m| !m[j])
    }

    fn fold_correlations(&self, r: &[f64], f: impl Fn(f64, f64) -> f64) -> f64 {
        (0..self.design.cols())
            .filter(|&j| self.is_active(j))
            .fold(0.0, |acc, j| f(acc, dot(self.design.col(j), r)))
    }

    /// `‖Aᵀb‖_∞` over the active columns.
    pub fn lambda_max(&self) -> f64 {
        self.fold_correlations(self.target, |m, c| m.max(c.abs()))
    }

    /// The norm the dual constraint bounds: `max_j A_jᵀr` under the sign
    /// constraint, `max_j |A_jᵀr|` otherwise.
    fn dual_norm(&self, r: &[f64], nonnegative: bool) -> f64 {
        if nonnegative {
            self.fold_correlations(r, f64::max)
        } else {
            self.fold_correlations(r, |m, c| m.max(c.abs()))
        }
    }

    pub fn resolve_lambda(&self, penalty: Penalty) -> f64 {
        match penalty {
            Penalty::Absolute(l) => l,
            Penalty::Relative(f) => f * self.lambda_max(),
        }
    }

    pub fn residual(&self, x: &[f64]) -> Result<Vec<f64>> {
        let ax = self.design.matvec(x)?;
        Ok(self.target.iter().zip(&ax).map(|(b, a)| b - a).collect())
    }

    pub fn objective(&self, lambda: f64, x: &[f64]) -> Result<f64> {
        let r = self.residual(x)?;
        Ok(0.5 * dot(&r, &r) + lambda * norm1(x))
    }

    /// Primal minus dual objective at the residual-scaled dual point.
    pub fn duality_gap(&self, lambda: f64, x: &[f64], nonnegative: bool) -> Result<f64> {
        if lambda == 0.0 {
            return Err(Error::Unsupported("duality gap is undefined for λ = 0".into()));
        }
        if !(lambda.is_finite() && lambda > 0.0) {
            return Err(Error::invalid(format!("λ must be positive, got {lambda}")));
        }
        if x.len() != self.design.cols() {
            return Err(Error::shape("coefficient vector", self.design.cols(), x.len()));
        }
        let r = self.residual(x)?;
        Ok(self.gap_from_residual(lambda, x, &r, nonnegative))
    }

    fn gap_from_residual(&self, lambda: f64, x: &[f64], r: &[f64], nonnegative: bool) -> f64 {
        let primal = 0.5 * dot(r, r) + lambda * norm1(x);
        let dual_norm = self.dual_norm(r, nonnegative);
        let scale = if dual_norm > lambda { lambda / dual_norm } else { 1.0 };
        // D(θ) = ½‖b‖² − ½‖b − θ‖² with θ = scale·r
        let bb = dot(self.target, self.target);
        let dist: f64 = self
            .target
            .iter()
            .zip(r)
            .map(|(b, ri)| {
                let d = b - scale * ri;
                d * d
            })
            .sum();
        primal - 0.5 * (bb - dist)
    }

    pub fn solve(&self, config: &LassoConfig) -> Result<SparseSolution> {
        config.validate()?;
        let n = self.design.cols();
        let lambda_max = self.lambda_max();
        let lambda = match config.penalty {
            Penalty::Absolute(l) => l,
            Penalty::Relative(f) => f * lambda_max,
        };

        // Aᵀb = 0 over the active set (b = 0 included): zero is optimal for
        // every positive λ, the relative penalty just has nothing to scale.
        if lambda_max == 0.0 || lambda >= lambda_max {
            let x = vec![0.0; n];
            let objective = 0.5 * dot(self.target, self.target);
            let gap = if lambda > 0.0 {
                self.gap_from_residual(lambda, &x, self.target, config.nonnegative)
                    .max(0.0)
            } else {
                0.0
            };
            return Ok(SparseSolution {
                coefficients: x,
                lambda,
                duality_gap: gap,
                sweeps_used: 0,
                objective,
                converged: gap <= config.tolerance,
                objective_trace: Vec::new(),
            });
        }

        let col_sq: Vec<f64> = (0..n)
            .map(|j| {
                let c = self.design.col(j);
                dot(c, c)
            })
            .collect();
        let mut x = vec![0.0; n];
        let mut r = self.target.to_vec();
        let mut trace = Vec::new();
        let mut gap = f64::INFINITY;
        let mut sweeps = 0;
        let mut support = Vec::new();

        while sweeps < config.max_sweeps {
            for (j, &sq) in col_sq.iter().enumerate() {
                if self.is_active(j) {
                    self.update(j, lambda, sq, config.nonnegative, &mut x, &mut r);
                }
            }
            sweeps += 1;

            r = self.residual(&x)?;
            trace.push(0.5 * dot(&r, &r) + lambda * norm1(&x));
            gap = self.gap_from_residual(lambda, &x, &r, config.nonnegative);
            if gap <= config.tolerance || sweeps == config.max_sweeps {
                break;
            }

            support.clear();
            support.extend((0..n).filter(|&j| x[j] != 0.0));
            for _ in 0..MAX_ACTIVE_PASSES {
                let mut max_step = 0.0f64;
                for &j in &support {
                    let step = self.update(j, lambda, col_sq[j], config.nonnegative, &mut x, &mut r);
                    max_step = max_step.max(step);
                }
                if max_step <= 1e-3 * config.tolerance {
                    break;
                }
            }
        }

        let objective = trace.last().copied().unwrap_or_else(|| 0.5 * dot(&r, &r));
        Ok(SparseSolution {
            coefficients: x,
            lambda,
            duality_gap: gap.max(0.0),
            sweeps_used: sweeps,
            objective,
            converged: gap <= config.tolerance,
            objective_trace: trace,
        })
    }

    /// Exact minimization along coordinate `j`; returns |Δx_j|.
    #[inline]
    fn update(&self, j: usize, lambda: f64, col_sq: f64, nonnegative: bool, x: &mut [f64], r: &mut [f64]) -> f64 {
        if col_sq == 0.0 {
            return 0.0;
        }
        let col = self.design.col(j);
        let old = x[j];
        let rho = dot(col, r) + col_sq * old;
        let new = if nonnegative {
            (rho - lambda).max(0.0) / col_sq
        } else {
            soft_threshold(rho, lambda) / col_sq
        };
        if new != old {
            axpy(old - new, col, r);
            x[j] = new;
        }
        (new - old).abs()
    }
}

pub fn lambda_max(dict: &Dictionary, b: &EmbeddingVector) -> Result<f64> {
    Ok(LassoProblem::new(dict.matrix(), b.values())?.lambda_max())
}

pub fn solve_lasso(dict: &Dictionary, b: &EmbeddingVector, config: &LassoConfig) -> Result<SparseSolution> {
    LassoProblem::new(dict.matrix(), b.values())?.solve(config)
}

pub fn duality_gap(dict: &Dictionary, b: &EmbeddingVector, lambda: f64, x: &[f64], nonnegative: bool) -> Result<f64> {
    LassoProblem::new(dict.matrix(), b.values())?.duality_gap(lambda, x, nonnegative)
}
