//! Group transportation costs on an `m x d` perturbation matrix.
//!
//! Every cost splits as `alpha * g(delta) + (1 - alpha) * |delta|_F^2` where
//! `g` is the structure-inducing non-smooth part:
//!
//! | kind        | `g(delta)`                              | structure      |
//! |-------------|-----------------------------------------|----------------|
//! | `Indicator` | `0` if all rows are equal, else `+inf`  | universal      |
//! | `GroupNorm` | sum of column norms                     | group-sparse   |
//! | `Nuclear`   | sum of singular values                  | low-rank       |
//!
//! The cost only depends on the perturbation `x' - x`, never on `x` itself.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::linalg::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CostKind {
    Indicator,
    GroupNorm,
    Nuclear,
}

impl CostKind {
    pub const ALL: [CostKind; 3] = [CostKind::Indicator, CostKind::GroupNorm, CostKind::Nuclear];

    pub fn tag(self) -> &'static str {
        match self {
            CostKind::Indicator => "indicator",
            CostKind::GroupNorm => "group",
            CostKind::Nuclear => "nuclear",
        }
    }
}

impl fmt::Display for CostKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for CostKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "indicator" => Ok(CostKind::Indicator),
            "group" | "group-norm" => Ok(CostKind::GroupNorm),
            "nuclear" => Ok(CostKind::Nuclear),
            other => Err(Error::Config(format!("unknown cost kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroupCostSpec {
    pub kind: CostKind,
    pub alpha: f64,
    /// Lagrangian weight on the transport cost.
    pub lambda: f64,
}

impl GroupCostSpec {
    pub fn new(kind: CostKind, alpha: f64, lambda: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::Config(format!(
                "alpha must lie in [0, 1], got {alpha}"
            )));
        }
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::Config(format!(
                "lambda must be positive, got {lambda}"
            )));
        }
        Ok(Self {
            kind,
            alpha,
            lambda,
        })
    }

    /// The inner problem is strongly concave only while `lambda (1 - alpha) > 0`.
    pub fn check_strongly_concave(&self) -> Result<()> {
        if self.alpha < 1.0 {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "alpha = {} leaves no quadratic term; the inner maximization needs alpha < 1",
                self.alpha
            )))
        }
    }

    /// Shrinkage amount of the ADMM auxiliary update: `lambda alpha / (rho m)`.
    pub fn prox_threshold(&self, rho: f64, m: usize) -> f64 {
        self.lambda * self.alpha / (rho * m as f64)
    }

    /// `c_m(x, x + delta)`; may be `+inf` for the indicator cost.
    pub fn eval_cost(&self, delta: &Matrix) -> Result<f64> {
        let smooth = (1.0 - self.alpha) * smooth_part(delta);
        if self.alpha == 0.0 {
            // 0 * g drops out, including the indicator's infinity.
            return Ok(smooth);
        }
        let g = self.nonsmooth_part(delta)?;
        if g.is_infinite() {
            return Ok(f64::INFINITY);
        }
        Ok(self.alpha * g + smooth)
    }

    /// The structure-inducing part `g`.
    pub fn nonsmooth_part(&self, delta: &Matrix) -> Result<f64> {
        match self.kind {
            CostKind::Indicator => Ok(if rows_identical(delta) {
                0.0
            } else {
                f64::INFINITY
            }),
            CostKind::GroupNorm => Ok(delta.group_norm_12()),
            CostKind::Nuclear => delta.nuclear_norm(),
        }
    }

    /// Checks `c(delta) == c(pi delta)` for a row permutation `perm`, which is
    /// what permuting the samples of both groups does to the perturbation.
    /// Finite values are compared to `1e-12` relative to absorb summation order.
    pub fn is_permutation_invariant_witness(&self, delta: &Matrix, perm: &[usize]) -> Result<bool> {
        check_permutation(perm, delta.rows())?;
        let a = self.eval_cost(delta)?;
        let b = self.eval_cost(&delta.select_rows(perm))?;
        Ok(match (a.is_finite(), b.is_finite()) {
            (true, true) => (a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1.0),
            (false, false) => a == b,
            _ => false,
        })
    }
}

/// `|delta|_F^2`.
pub fn smooth_part(delta: &Matrix) -> f64 {
    delta.as_slice().iter().map(|v| v * v).sum()
}

/// Exact equality of every row with the first one.
pub fn rows_identical(delta: &Matrix) -> bool {
    let first = delta.row(0);
    (1..delta.rows()).all(|i| delta.row(i) == first)
}

/// Largest distance of any row from the first row: exactly zero iff all rows
/// are equal, and within a factor 2 of the largest pairwise distance.
pub fn max_row_deviation(delta: &Matrix) -> f64 {
    let first = delta.row(0);
    (1..delta.rows())
        .map(|i| {
            delta
                .row(i)
                .iter()
                .zip(first)
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                .sqrt()
        })
        .fold(0.0, f64::max)
}

fn check_permutation(perm: &[usize], n: usize) -> Result<()> {
    let mut seen = vec![false; n];
    if perm.len() != n {
        return Err(Error::Shape(format!(
            "permutation of length {} for {n} rows",
            perm.len()
        )));
    }
    for &p in perm {
        if p >= n || seen[p] {
            return Err(Error::Shape("not a permutation".into()));
        }
        seen[p] = true;
    }
    Ok(())
}
