//! Brute-force checks of the group transport theory on tiny instances.
//!
//! [`grid_ctransform`] maximizes the inner objective
//! `(1/m) sum_i l(x_i + delta_i) - (lambda/m) c_m(delta)` over a grid of
//! perturbations and then zooms in around the best point. The search box is
//! derived from the model: every maximizer satisfies
//! `|delta_i| <= L / (2 lambda (1 - alpha))` where `L` bounds the input
//! gradient, so the box contains all of them.
//!
//! [`coupling_cost_bruteforce`] solves the coupling problem for `m = 2`
//! exactly as a linear program over joint PMFs on `supp(P)^2 x supp(Q)^2`.

use minilp::{ComparisonOp, OptimizationDirection, Problem};
use rand::{Rng, RngExt};

use crate::data;
use crate::error::{Error, Result};
use crate::gdadmm::inner_objective;
use crate::groupcost::{CostKind, GroupCostSpec};
use crate::linalg::Matrix;
use crate::models::{LabeledBatch, SampleLoss};

pub const MAX_GROUP: usize = 4;
pub const MAX_DIM: usize = 3;
pub const GRID_BUDGET: usize = 1_000_000;
/// Relative floor on the reported slack, for rounding in the objective.
pub const ROUNDING_FLOOR: f64 = 1e-12;

/// Search settings for [`grid_ctransform`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TinyInstance {
    /// Half-width of the search box per coordinate; derived from the model
    /// when `None`.
    pub half_range: Option<f64>,
    /// Points per axis of the first, exhaustive level (odd, so 0 is on the
    /// grid); the largest odd count within the budget when `None`.
    pub resolution: Option<usize>,
    /// Refinement stops once the spacing drops below this.
    pub final_spacing: f64,
    /// Maximum number of grid combinations per level.
    pub budget: usize,
}

impl Default for TinyInstance {
    fn default() -> Self {
        Self {
            half_range: None,
            resolution: None,
            final_spacing: 1e-7,
            budget: GRID_BUDGET,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CTransform {
    pub value: f64,
    pub argmax: Matrix,
    /// Largest objective change between the argmax and an axis neighbour on
    /// the final grid, floored at [`ROUNDING_FLOOR`] relative.
    pub slack: f64,
    pub evaluations: usize,
}

/// Exhaustive grid search plus pattern refinement. Labels stay fixed. For the
/// indicator cost with `alpha > 0` only a single shared row is searched.
pub fn grid_ctransform<M: SampleLoss + ?Sized>(
    model: &M,
    group: &LabeledBatch,
    spec: &GroupCostSpec,
    inst: &TinyInstance,
) -> Result<CTransform> {
    spec.check_strongly_concave()?;
    let (m, d) = group.x.shape();
    if m > MAX_GROUP || d > MAX_DIM {
        return Err(Error::Budget(format!(
            "grid oracle takes m <= {MAX_GROUP}, d <= {MAX_DIM}; got {m} x {d}"
        )));
    }
    let shared = spec.kind == CostKind::Indicator && spec.alpha > 0.0;
    let rows = if shared { 1 } else { m };
    let vars = rows * d;
    let res = match inst.resolution {
        Some(r) => r,
        None => largest_odd_resolution(vars, inst.budget),
    };
    if res < 3 || res % 2 == 0 {
        return Err(Error::Config(format!(
            "grid resolution must be odd and >= 3, got {res}"
        )));
    }
    if (res as f64).powi(vars as i32) > inst.budget as f64 {
        return Err(Error::Budget(format!(
            "{res}^{vars} grid points exceed {}",
            inst.budget
        )));
    }
    if 3f64.powi(vars as i32) > inst.budget as f64 {
        return Err(Error::Budget(format!(
            "refinement pattern 3^{vars} exceeds {}",
            inst.budget
        )));
    }
    let half = match inst.half_range {
        Some(h) => h,
        None => 1.05 * model.gradient_bound() / (2.0 * spec.lambda * (1.0 - spec.alpha)),
    };
    if !(half > 0.0 && half.is_finite()) {
        // zero gradient bound: the loss is constant and delta = 0 is optimal
        let argmax = Matrix::zeros(m, d);
        let value = inner_objective(model, group, spec, &argmax)?;
        return Ok(CTransform {
            value,
            argmax,
            slack: 0.0,
            evaluations: 1,
        });
    }

    let mut search = Search {
        model,
        group,
        spec,
        shared,
        rows,
        d,
        evaluations: 0,
    };
    let h0 = 2.0 * half / (res - 1) as f64;
    let axis: Vec<f64> = (0..res).map(|k| -half + k as f64 * h0).collect();
    let center = vec![0.0; vars];
    let (mut best, mut best_val, _) = search.level(&center, &axis)?;
    if best.iter().any(|v| v.abs() >= half - 0.5 * h0) {
        return Err(Error::OracleInconclusive(format!(
            "grid argmax on the boundary of [-{half}, {half}]; enlarge the range"
        )));
    }

    let mut h = 0.5 * h0;
    let mut slack;
    loop {
        let pattern = [-h, 0.0, h];
        let mut moves = 0;
        loop {
            let (p, v, s) = search.level(&best, &pattern)?;
            slack = s;
            if v > best_val && moves < 200 {
                best = p;
                best_val = v;
                moves += 1;
            } else {
                break;
            }
        }
        if h <= inst.final_spacing {
            break;
        }
        h *= 0.5;
    }

    let argmax = search.expand(&best);
    let value = inner_objective(model, group, spec, &argmax)?;
    // objective values are only resolved to a few ulps
    let slack = slack.max(ROUNDING_FLOOR * (1.0 + value.abs()));
    Ok(CTransform {
        value,
        argmax,
        slack,
        evaluations: search.evaluations,
    })
}

fn largest_odd_resolution(vars: usize, budget: usize) -> usize {
    let mut r = ((budget as f64).powf(1.0 / vars as f64).floor() as usize).min(401);
    while r > 3 && (r as f64).powi(vars as i32) > budget as f64 {
        r -= 1;
    }
    if r.is_multiple_of(2) {
        r -= 1;
    }
    r.max(3)
}

struct Search<'a, M: SampleLoss + ?Sized> {
    model: &'a M,
    group: &'a LabeledBatch,
    spec: &'a GroupCostSpec,
    shared: bool,
    rows: usize,
    d: usize,
    evaluations: usize,
}

impl<M: SampleLoss + ?Sized> Search<'_, M> {
    fn expand(&self, p: &[f64]) -> Matrix {
        let m = self.group.len();
        let mut out = Matrix::zeros(m, self.d);
        for i in 0..m {
            let src = if self.shared { 0 } else { i };
            out.row_mut(i)
                .copy_from_slice(&p[src * self.d..(src + 1) * self.d]);
        }
        out
    }

    /// Maximizes over `center + offsets^vars`. Returns the best point, its
    /// value and the largest change between the center and an axis neighbour.
    fn level(&mut self, center: &[f64], offsets: &[f64]) -> Result<(Vec<f64>, f64, f64)> {
        let (m, d) = self.group.x.shape();
        let mf = m as f64;
        let per_row = offsets.len().pow(d as u32);
        // per-row candidate points and their losses
        let mut cand: Vec<Vec<Vec<f64>>> = Vec::with_capacity(self.rows);
        let mut table: Vec<Vec<f64>> = Vec::with_capacity(self.rows);
        for r in 0..self.rows {
            let base = &center[r * d..(r + 1) * d];
            let pts: Vec<Vec<f64>> = (0..per_row)
                .map(|mut k| {
                    base.iter()
                        .map(|b| {
                            let o = offsets[k % offsets.len()];
                            k /= offsets.len();
                            b + o
                        })
                        .collect()
                })
                .collect();
            let targets: Vec<usize> = if self.shared {
                (0..m).collect()
            } else {
                vec![r]
            };
            let mut x = Matrix::zeros(per_row * targets.len(), d);
            let mut y = Vec::with_capacity(x.rows());
            for (k, p) in pts.iter().enumerate() {
                for (t, &i) in targets.iter().enumerate() {
                    let row = x.row_mut(k * targets.len() + t);
                    row.iter_mut()
                        .zip(self.group.x.row(i))
                        .zip(p)
                        .for_each(|((o, a), b)| *o = a + b);
                    y.push(self.group.y[i]);
                }
            }
            let (losses, _) = self.model.sample_losses(&x, &y)?;
            table.push(
                losses
                    .chunks(targets.len())
                    .map(|c| c.iter().sum::<f64>() / mf)
                    .collect(),
            );
            cand.push(pts);
        }

        let total = per_row.pow(self.rows as u32);
        let mut idx = vec![0usize; self.rows];
        let mut delta = Matrix::zeros(m, d);
        let mut best = (f64::NEG_INFINITY, 0usize);
        let mut values = Vec::with_capacity(total);
        for n in 0..total {
            let mut loss = 0.0;
            for r in 0..self.rows {
                loss += table[r][idx[r]];
            }
            for i in 0..m {
                let src = if self.shared { 0 } else { i };
                delta.row_mut(i).copy_from_slice(&cand[src][idx[src]]);
            }
            let c = self.spec.eval_cost(&delta)?;
            let v = loss - self.spec.lambda / mf * c;
            values.push(v);
            if v > best.0 {
                best = (v, n);
            }
            for r in 0..self.rows {
                idx[r] += 1;
                if idx[r] < per_row {
                    break;
                }
                idx[r] = 0;
            }
        }
        self.evaluations += total;

        // the center sits at offset index (len-1)/2 on every axis
        let mid = (offsets.len() - 1) / 2;
        let center_flat = flat_index(&vec![mid; self.rows * d], offsets.len());
        let mut slack: f64 = 0.0;
        if offsets.len() == 3 {
            for a in 0..self.rows * d {
                for o in [0, 2] {
                    let mut digits = vec![mid; self.rows * d];
                    digits[a] = o;
                    let v = values[flat_index(&digits, 3)];
                    if v.is_finite() && values[center_flat].is_finite() {
                        slack = slack.max((v - values[center_flat]).abs());
                    }
                }
            }
        }

        let mut n = best.1;
        let mut point = Vec::with_capacity(self.rows * d);
        for r in 0..self.rows {
            point.extend_from_slice(&cand[r][n % per_row]);
            n /= per_row;
        }
        Ok((point, best.0, slack))
    }
}

/// Combination index of per-variable offset digits (row-major over rows,
/// least significant coordinate first within a row).
fn flat_index(digits: &[usize], base: usize) -> usize {
    let mut n = 0;
    for &dg in digits.iter().rev() {
        n = n * base + dg;
    }
    n
}

/// A random label-preserving map `T` on feature rows: space is split into
/// Voronoi cells around a few random centers and each cell is either
/// translated by a constant vector or sent to a constant point.
#[derive(Debug, Clone, PartialEq)]
pub struct Pushforward {
    centers: Vec<Vec<f64>>,
    values: Vec<Vec<f64>>,
    translate: bool,
}

impl Pushforward {
    pub fn random<R: Rng + ?Sized>(d: usize, cells: usize, scale: f64, rng: &mut R) -> Self {
        let mut draw = |s: f64| -> Vec<Vec<f64>> {
            (0..cells)
                .map(|_| (0..d).map(|_| rng.random_range(-s..=s)).collect())
                .collect()
        };
        let centers = draw(2.0);
        let values = draw(scale);
        let translate = rng.random_bool(0.5);
        Self {
            centers,
            values,
            translate,
        }
    }

    /// Translation of every row by the same vector.
    pub fn shift(v: Vec<f64>) -> Self {
        Self {
            centers: vec![vec![0.0; v.len()]],
            values: vec![v],
            translate: true,
        }
    }

    pub fn identity(d: usize) -> Self {
        Self::shift(vec![0.0; d])
    }

    pub fn apply(&self, x: &Matrix) -> Matrix {
        let mut out = x.clone();
        for i in 0..x.rows() {
            let row = x.row(i);
            let cell = (0..self.centers.len())
                .min_by(|&a, &b| {
                    dist2(row, &self.centers[a]).total_cmp(&dist2(row, &self.centers[b]))
                })
                .unwrap_or(0);
            let o = out.row_mut(i);
            for (j, v) in o.iter_mut().enumerate() {
                *v = if self.translate {
                    row[j] + self.values[cell][j]
                } else {
                    self.values[cell][j]
                };
            }
        }
        out
    }
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct DualityReport {
    /// `grid value - candidate value` per trial.
    pub gaps: Vec<f64>,
    pub min_gap: f64,
    pub passed: bool,
}

/// Tolerance for the weak-duality direction.
pub const DUALITY_TOL: f64 = 1e-9;

/// For `trials` groups of size `m` drawn from `pool`, compares the objective
/// of the transported group `T(x)` against the grid c-transform. Passes iff
/// every candidate stays below the grid value plus [`DUALITY_TOL`].
#[allow(clippy::too_many_arguments)]
pub fn weak_duality_check<M: SampleLoss + ?Sized>(
    model: &M,
    pool: &LabeledBatch,
    spec: &GroupCostSpec,
    inst: &TinyInstance,
    map: &dyn Fn(&Matrix) -> Matrix,
    m: usize,
    trials: usize,
    seed: u64,
) -> Result<DualityReport> {
    let mut rng = data::rng(seed);
    let mut gaps = Vec::with_capacity(trials);
    for _ in 0..trials {
        let idx: Vec<usize> = (0..m).map(|_| rng.random_range(0..pool.len())).collect();
        let group = LabeledBatch::new(
            pool.x.select_rows(&idx),
            idx.iter().map(|&i| pool.y[i]).collect(),
        )?;
        let ct = grid_ctransform(model, &group, spec, inst)?;
        let moved = map(&group.x);
        let lhs = inner_objective(model, &group, spec, &moved.sub(&group.x)?)?;
        gaps.push(ct.value - lhs);
    }
    let min_gap = gaps.iter().cloned().fold(f64::INFINITY, f64::min);
    Ok(DualityReport {
        passed: min_gap >= -DUALITY_TOL,
        gaps,
        min_gap,
    })
}

/// A support point of a discrete distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedPoint {
    pub x: Vec<f64>,
    pub y: usize,
    pub weight: f64,
}

pub const MAX_SUPPORT: usize = 4;

/// `min E[(1/2) c_2]` over couplings of `P x P` with joint laws whose
/// one-dimensional marginals are both `Q`. Pairs with different labels, and
/// pairs of infinite cost, cannot carry mass. Returns `+inf` if no finite
/// coupling exists.
pub fn coupling_cost_bruteforce(
    p: &[WeightedPoint],
    q: &[WeightedPoint],
    spec: &GroupCostSpec,
) -> Result<f64> {
    const M: usize = 2;
    for (name, s) in [("P", p), ("Q", q)] {
        if s.is_empty() || s.len() > MAX_SUPPORT {
            return Err(Error::Budget(format!(
                "support of {name} must have 1..={MAX_SUPPORT} points"
            )));
        }
        let total: f64 = s.iter().map(|w| w.weight).sum();
        if (total - 1.0).abs() > 1e-9 || s.iter().any(|w| w.weight.is_nan() || w.weight < 0.0) {
            return Err(Error::Config(format!(
                "weights of {name} must be non-negative and sum to 1"
            )));
        }
        if s.iter().any(|w| w.x.len() != p[0].x.len()) {
            return Err(Error::Shape("support points of differing dimension".into()));
        }
    }
    let d = p[0].x.len();
    let (np, nq) = (p.len(), q.len());
    let mut lp = Problem::new(OptimizationDirection::Minimize);
    // vars[a1][a2][b1][b2]
    let mut by_a: Vec<Vec<minilp::Variable>> = vec![Vec::new(); np * np];
    let mut by_b1: Vec<Vec<minilp::Variable>> = vec![Vec::new(); nq];
    let mut by_b2: Vec<Vec<minilp::Variable>> = vec![Vec::new(); nq];
    for a1 in 0..np {
        for a2 in 0..np {
            for b1 in 0..nq {
                for b2 in 0..nq {
                    if p[a1].y != q[b1].y || p[a2].y != q[b2].y {
                        continue;
                    }
                    let mut delta = Matrix::zeros(M, d);
                    for j in 0..d {
                        delta[(0, j)] = q[b1].x[j] - p[a1].x[j];
                        delta[(1, j)] = q[b2].x[j] - p[a2].x[j];
                    }
                    let c = spec.eval_cost(&delta)? / M as f64;
                    if !c.is_finite() {
                        continue;
                    }
                    let v = lp.add_var(c, (0.0, f64::INFINITY));
                    by_a[a1 * np + a2].push(v);
                    by_b1[b1].push(v);
                    by_b2[b2].push(v);
                }
            }
        }
    }
    let mut constraints: Vec<(&Vec<minilp::Variable>, f64)> = Vec::new();
    for a1 in 0..np {
        for a2 in 0..np {
            constraints.push((&by_a[a1 * np + a2], p[a1].weight * p[a2].weight));
        }
    }
    for b in 0..nq {
        constraints.push((&by_b1[b], q[b].weight));
        constraints.push((&by_b2[b], q[b].weight));
    }
    for (vars, rhs) in constraints {
        if vars.is_empty() {
            if rhs > 0.0 {
                return Ok(f64::INFINITY);
            }
            continue;
        }
        lp.add_constraint(vars.iter().map(|&v| (v, 1.0)), ComparisonOp::Eq, rhs);
    }
    match lp.solve() {
        Ok(sol) => Ok(sol.objective()),
        Err(minilp::Error::Infeasible) => Ok(f64::INFINITY),
        Err(e) => Err(Error::Numerical(format!("coupling LP: {e}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gdadmm::LinearProbe;
    use crate::models::{Arch, ModelParams};
    use rand::SeedableRng;
    use rand_pcg::Pcg64;

    fn point(x: &[f64], weight: f64) -> WeightedPoint {
        WeightedPoint {
            x: x.to_vec(),
            y: 0,
            weight,
        }
    }

    #[test]
    fn huge_lambda_picks_zero() {
        let mut rng = Pcg64::seed_from_u64(1);
        let p = ModelParams::init(Arch::MlpElu, 2, 3, 2, &mut rng);
        let g = LabeledBatch::new(Matrix::random_normal(2, 2, &mut rng), vec![0, 1]).unwrap();
        let spec = GroupCostSpec::new(CostKind::GroupNorm, 0.5, 1e6).unwrap();
        let inst = TinyInstance {
            half_range: Some(1.0),
            resolution: Some(11),
            final_spacing: 1e-2,
            ..TinyInstance::default()
        };
        let ct = grid_ctransform(&p, &g, &spec, &inst).unwrap();
        assert_eq!(ct.argmax, Matrix::zeros(2, 2));
        assert_eq!(ct.value, p.mean_loss(&g.x, &g.y).unwrap());
    }

    #[test]
    fn linear_closed_form() {
        let probe = LinearProbe { w: vec![0.6, -0.3] };
        let g = LabeledBatch::new(Matrix::zeros(2, 2), vec![0, 0]).unwrap();
        let spec = GroupCostSpec::new(CostKind::Nuclear, 0.0, 1.5).unwrap();
        let ct = grid_ctransform(&probe, &g, &spec, &TinyInstance::default()).unwrap();
        for i in 0..2 {
            assert!((ct.argmax[(i, 0)] - 0.2).abs() < 1e-6);
            assert!((ct.argmax[(i, 1)] + 0.1).abs() < 1e-6);
        }
    }

    #[test]
    fn boundary_argmax_is_an_error() {
        let probe = LinearProbe { w: vec![1.0] };
        let g = LabeledBatch::new(Matrix::zeros(2, 1), vec![0, 0]).unwrap();
        let spec = GroupCostSpec::new(CostKind::GroupNorm, 0.0, 1.0).unwrap();
        let inst = TinyInstance {
            half_range: Some(0.1),
            ..TinyInstance::default()
        };
        assert!(matches!(
            grid_ctransform(&probe, &g, &spec, &inst),
            Err(Error::OracleInconclusive(_))
        ));
    }

    #[test]
    fn identity_map_satisfies_weak_duality() {
        let mut rng = Pcg64::seed_from_u64(5);
        let p = ModelParams::init(Arch::MlpElu, 2, 3, 2, &mut rng);
        let pool = LabeledBatch::new(
            Matrix::random_normal(6, 2, &mut rng),
            vec![0, 1, 0, 1, 0, 1],
        )
        .unwrap();
        let spec = GroupCostSpec::new(CostKind::Indicator, 0.5, 1.0).unwrap();
        let id = Pushforward::identity(2);
        let rep = weak_duality_check(
            &p,
            &pool,
            &spec,
            &TinyInstance::default(),
            &|x| id.apply(x),
            3,
            3,
            0,
        )
        .unwrap();
        assert!(rep.passed, "{rep:?}");
    }

    #[test]
    fn coupling_identity_and_forced() {
        let spec = GroupCostSpec::new(CostKind::GroupNorm, 0.5, 1.0).unwrap();
        let p = vec![point(&[0.0, 1.0], 0.5), point(&[1.0, -1.0], 0.5)];
        assert!(coupling_cost_bruteforce(&p, &p, &spec).unwrap().abs() < 1e-12);

        let spec0 = GroupCostSpec::new(CostKind::GroupNorm, 0.0, 1.0).unwrap();
        let w = coupling_cost_bruteforce(
            &[point(&[1.0, 2.0], 1.0)],
            &[point(&[1.5, 1.0], 1.0)],
            &spec0,
        )
        .unwrap();
        assert!((w - 1.25).abs() < 1e-12);
    }

    #[test]
    fn label_mismatch_is_infinite() {
        let spec = GroupCostSpec::new(CostKind::GroupNorm, 0.5, 1.0).unwrap();
        let q = WeightedPoint {
            x: vec![0.0],
            y: 1,
            weight: 1.0,
        };
        assert_eq!(
            coupling_cost_bruteforce(&[point(&[0.0], 1.0)], &[q], &spec).unwrap(),
            f64::INFINITY
        );
    }
}
