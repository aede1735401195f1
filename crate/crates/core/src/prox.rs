//! Closed-form minimizers of `xi * g(X) + 1/2 |V - X|_F^2` for the three
//! structure penalties, plus an iterative oracle used to check them.
//!
//! In the ADMM auxiliary update the penalty weight is `lambda alpha / m` and
//! the quadratic weight is `rho`, so the threshold is `xi = lambda alpha / (rho m)`.

use rand::SeedableRng;
use rand_pcg::Pcg64;

use crate::error::{Error, Result};
use crate::groupcost::{rows_identical, CostKind};
use crate::linalg::{norm2, Matrix};

/// Largest `m * d` the oracle accepts.
pub const ORACLE_MAX_ENTRIES: usize = 64;
/// Default iteration budget of the subgradient oracle.
pub const ORACLE_ITERATIONS: usize = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProxParams {
    pub kind: CostKind,
    pub threshold: f64,
}

impl ProxParams {
    pub fn new(kind: CostKind, threshold: f64) -> Result<Self> {
        if threshold.is_nan() || threshold < 0.0 {
            return Err(Error::Config(format!(
                "prox threshold must be >= 0, got {threshold}"
            )));
        }
        Ok(Self { kind, threshold })
    }

    pub fn apply(&self, v: &Matrix) -> Result<Matrix> {
        match self.kind {
            CostKind::Indicator => Ok(prox_equal_rows(v)),
            CostKind::GroupNorm => Ok(prox_group_columns(v, self.threshold)),
            CostKind::Nuclear => prox_singular_values(v, self.threshold),
        }
    }

    /// `xi g(x) + 1/2 |v - x|^2`.
    pub fn objective(&self, v: &Matrix, x: &Matrix) -> Result<f64> {
        prox_objective(self.kind, v, x, self.threshold)
    }
}

/// Projection onto matrices with identical rows: every row becomes the row mean.
pub fn prox_equal_rows(v: &Matrix) -> Matrix {
    let mean = v.row_mean();
    let mut out = Matrix::zeros(v.rows(), v.cols());
    for i in 0..v.rows() {
        out.row_mut(i).copy_from_slice(&mean);
    }
    out
}

/// Block soft-thresholding of each column by `xi`.
pub fn prox_group_columns(v: &Matrix, xi: f64) -> Matrix {
    let norms = v.column_norms();
    let mut out = v.clone();
    for (j, &n) in norms.iter().enumerate() {
        let scale = if n > xi { (n - xi) / n } else { 0.0 };
        for i in 0..v.rows() {
            out[(i, j)] *= scale;
        }
    }
    out
}

/// Soft-thresholding of the singular values by `xi`.
pub fn prox_singular_values(v: &Matrix, xi: f64) -> Result<Matrix> {
    let svd = v.svd()?;
    let shrunk: Vec<f64> = svd
        .singular_values
        .iter()
        .map(|&s| (s - xi).max(0.0))
        .collect();
    Ok(svd.recompose(&shrunk))
}

/// Value of the prox objective at `x`. The indicator penalty is `0` on
/// exactly-equal rows and `+inf` elsewhere, independent of `xi`.
pub fn prox_objective(kind: CostKind, v: &Matrix, x: &Matrix, xi: f64) -> Result<f64> {
    let quad = 0.5 * v.sub(x)?.as_slice().iter().map(|e| e * e).sum::<f64>();
    let g = match kind {
        CostKind::Indicator => {
            return Ok(if rows_identical(x) {
                quad
            } else {
                f64::INFINITY
            });
        }
        CostKind::GroupNorm => x.group_norm_12(),
        CostKind::Nuclear => x.nuclear_norm()?,
    };
    Ok(xi * g + quad)
}

/// Iterative near-minimizer of the prox objective that shares no code path
/// with the closed forms:
///
/// * indicator: least squares over `X = 1 r^T` via the normal equations;
/// * group norm: subgradient descent with steps `1/(k+1)` from `X = V`,
///   keeping the best iterate per column (the objective is column-separable);
/// * nuclear norm: gradient descent with backtracking on the smooth
///   factorized form `xi/2 (|A|^2 + |B|^2) + 1/2 |A B^T - V|^2`.
pub fn prox_oracle(kind: CostKind, v: &Matrix, xi: f64) -> Result<Matrix> {
    prox_oracle_with_budget(kind, v, xi, ORACLE_ITERATIONS)
}

pub fn prox_oracle_with_budget(
    kind: CostKind,
    v: &Matrix,
    xi: f64,
    iterations: usize,
) -> Result<Matrix> {
    let (m, d) = v.shape();
    if m * d > ORACLE_MAX_ENTRIES {
        return Err(Error::OracleInconclusive(format!(
            "{m}x{d} exceeds the oracle's {ORACLE_MAX_ENTRIES}-entry budget"
        )));
    }
    if xi.is_nan() || xi < 0.0 {
        return Err(Error::Config(format!("threshold must be >= 0, got {xi}")));
    }
    match kind {
        CostKind::Indicator => Ok(least_squares_equal_rows(v)),
        CostKind::GroupNorm => Ok(subgradient_group(v, xi, iterations)),
        CostKind::Nuclear => {
            if xi == 0.0 {
                return Ok(v.clone());
            }
            factorized_nuclear(v, xi, iterations)
        }
    }
}

fn least_squares_equal_rows(v: &Matrix) -> Matrix {
    // min_r |V - 1 r^T|^2: normal equations (1^T 1) r = V^T 1.
    let (m, d) = v.shape();
    let gram = m as f64;
    let mut rhs = vec![0.0; d];
    for i in 0..m {
        rhs.iter_mut().zip(v.row(i)).for_each(|(r, x)| *r += x);
    }
    let mut out = Matrix::zeros(m, d);
    for i in 0..m {
        for (o, r) in out.row_mut(i).iter_mut().zip(&rhs) {
            *o = r / gram;
        }
    }
    out
}

fn subgradient_group(v: &Matrix, xi: f64, iterations: usize) -> Matrix {
    let (m, d) = v.shape();
    let mut out = Matrix::zeros(m, d);
    for j in 0..d {
        let target = v.column(j);
        let col_obj = |x: &[f64]| -> f64 {
            xi * norm2(x)
                + 0.5
                    * x.iter()
                        .zip(&target)
                        .map(|(a, b)| (a - b).powi(2))
                        .sum::<f64>()
        };
        let mut x = target.clone();
        let mut best = x.clone();
        let mut best_val = col_obj(&x);
        let mut s = vec![0.0; m];
        for k in 1..=iterations {
            let nx = norm2(&x);
            if nx > 0.0 {
                s.iter_mut().zip(&x).for_each(|(si, xi_)| *si = xi_ / nx);
            } else {
                // minimum-norm subgradient at the kink
                let nv = norm2(&target).max(xi);
                s.iter_mut()
                    .zip(&target)
                    .for_each(|(si, t)| *si = if nv > 0.0 { t / nv } else { 0.0 });
            }
            // x <- x - (1/k) (x - v + xi s)
            let step = 1.0 / k as f64;
            for ((xe, t), se) in x.iter_mut().zip(&target).zip(&s) {
                *xe -= step * (*xe - t + xi * se);
            }
            let val = col_obj(&x);
            if val < best_val {
                best_val = val;
                best.copy_from_slice(&x);
            }
        }
        out.set_column(j, &best);
    }
    out
}

fn factorized_nuclear(v: &Matrix, xi: f64, iterations: usize) -> Result<Matrix> {
    let (m, n) = v.shape();
    let k = m.min(n);
    let mut rng = Pcg64::seed_from_u64(0x05ee_d0f0_ac1e);
    let scale = (v.frobenius_norm() / (m * n) as f64).sqrt().max(1e-3);
    let mut a = Matrix::random_normal(m, k, &mut rng).scale(scale);
    let mut b = Matrix::random_normal(n, k, &mut rng).scale(scale);

    let objective = |a: &Matrix, b: &Matrix| -> Result<f64> {
        let r = a.matmul(&b.transpose())?.sub(v)?;
        let na = a.frobenius_norm();
        let nb = b.frobenius_norm();
        Ok(0.5 * xi * (na * na + nb * nb) + 0.5 * r.frobenius_norm().powi(2))
    };
    let gradient = |a: &Matrix, b: &Matrix| -> Result<(Matrix, Matrix)> {
        let r = a.matmul(&b.transpose())?.sub(v)?;
        let mut ga = r.matmul(b)?;
        ga.axpy(xi, a)?;
        let mut gb = r.transpose().matmul(a)?;
        gb.axpy(xi, b)?;
        Ok((ga, gb))
    };

    let mut step = 1.0 / (v.frobenius_norm() + xi + 1.0);
    let mut f = objective(&a, &b)?;
    let mut bound = f64::INFINITY;
    let mut last_check = f64::NAN;
    for it in 0..iterations {
        if it % GAP_CHECK_EVERY == 0 {
            bound = distance_bound(v, xi, &a, &b, f)?;
            if bound <= NUCLEAR_ORACLE_TOL {
                return a.matmul(&b.transpose());
            }
            if f == last_check {
                break;
            }
            last_check = f;
        }
        let (ga, gb) = gradient(&a, &b)?;
        let gnorm2 = ga.frobenius_norm().powi(2) + gb.frobenius_norm().powi(2);
        if gnorm2 == 0.0 {
            break;
        }
        // local curvature bound; below 1/lipschitz the step is taken even when
        // the Armijo test is lost in roundoff
        let r = a.matmul(&b.transpose())?.sub(v)?;
        let lipschitz = xi
            + 2.0 * (a.frobenius_norm().powi(2) + b.frobenius_norm().powi(2))
            + r.frobenius_norm();
        let floor = 0.5 / lipschitz;
        step *= 2.0;
        loop {
            let mut a2 = a.clone();
            a2.axpy(-step, &ga)?;
            let mut b2 = b.clone();
            b2.axpy(-step, &gb)?;
            let f2 = objective(&a2, &b2)?;
            if f2 <= f - 0.5 * step * gnorm2 || step <= floor {
                a = a2;
                b = b2;
                f = f2;
                break;
            }
            step = (step * 0.5).max(floor);
        }
    }
    bound = bound.min(distance_bound(v, xi, &a, &b, f)?);
    if bound <= NUCLEAR_ORACLE_TOL {
        a.matmul(&b.transpose())
    } else {
        Err(Error::OracleInconclusive(format!(
            "factorized descent certified only |X - X*| <= {bound:e}"
        )))
    }
}

/// The nuclear oracle stops once its certified distance to the prox drops
/// below this. The certificate loses a square root to the primal error, so
/// in double precision it bottoms out near 1e-5 on well-scaled inputs.
pub const NUCLEAR_ORACLE_TOL: f64 = 2e-5;
const GAP_CHECK_EVERY: usize = 200;

/// Certified bound on `|A B^T - X*|_F`. The factorized objective `f` bounds
/// the primal value from above; `Y = V - A B^T` shrunk into the spectral ball
/// of radius `xi` is dual feasible with value `|V|^2/2 - |V - Y|^2/2`. Strong
/// convexity turns the gap into `|X - X*|^2 <= 2 gap`.
fn distance_bound(v: &Matrix, xi: f64, a: &Matrix, b: &Matrix, f: f64) -> Result<f64> {
    let x = a.matmul(&b.transpose())?;
    let mut y = v.sub(&x)?;
    let top = spectral_norm_upper(&y)?;
    if top > xi {
        y = y.scale(xi / top);
    }
    let dual = 0.5 * v.frobenius_norm().powi(2) - 0.5 * v.sub(&y)?.frobenius_norm().powi(2);
    Ok((2.0 * (f - dual).max(0.0)).sqrt())
}

/// An upper bound on the largest singular value, from
/// `sigma_1^(2p) <= tr((M^T M)^p) <= n sigma_1^(2p)` with `p = 2^40`; the
/// bound is at most a factor `n^(2^-41)` above the truth.
pub fn spectral_norm_upper(m: &Matrix) -> Result<f64> {
    let mut g = m.transpose().matmul(m)?;
    let mut log_scale = 0.0;
    let mut pow = 1.0;
    for _ in 0..40 {
        let t: f64 = (0..g.rows()).map(|i| g[(i, i)]).sum();
        if t <= 0.0 {
            return Ok(0.0);
        }
        g = g.scale(1.0 / t);
        log_scale += t.ln() / pow;
        g = g.matmul(&g)?;
        pow *= 2.0;
    }
    let t: f64 = (0..g.rows()).map(|i| g[(i, i)]).sum();
    // tr(G0^p) = exp(pow * log_scale) * tr(G); sigma_1 = lambda_max(G0)^(1/2)
    Ok(((log_scale + t.ln() / pow) * 0.5).exp() * (1.0 + 1e-12))
}
