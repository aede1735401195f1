//! Test-time adversaries: structured PGD (universal, group-sparse, low-rank),
//! per-sample PGD and FGSM, all under a per-row L2 budget.
//!
//! Per-sample PGD rescales every gradient row to unit norm. Structured PGD
//! follows its [`StepRule`]; the default, [`StepRule::PerRow`], projects the
//! gradient onto the structure and then rescales each row to unit norm, so a
//! confident model (tiny loss gradients) is attacked as hard as an
//! unconfident one with the same decision boundary.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::linalg::{norm2, Matrix};
use crate::models::{LabeledBatch, SampleLoss};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttackKind {
    Universal,
    GroupSparse { k: usize },
    LowRank { r: usize },
    Pgd,
    Fgsm,
}

impl AttackKind {
    pub fn tag(&self) -> &'static str {
        match self {
            AttackKind::Universal => "universal",
            AttackKind::GroupSparse { .. } => "group-sparse",
            AttackKind::LowRank { .. } => "low-rank",
            AttackKind::Pgd => "pgd",
            AttackKind::Fgsm => "fgsm",
        }
    }

    /// `k` or `r`, if the kind has one.
    pub fn structure_param(&self) -> Option<usize> {
        match *self {
            AttackKind::GroupSparse { k } => Some(k),
            AttackKind::LowRank { r } => Some(r),
            _ => None,
        }
    }

    pub fn with_structure_param(self, p: usize) -> Self {
        match self {
            AttackKind::GroupSparse { .. } => AttackKind::GroupSparse { k: p },
            AttackKind::LowRank { .. } => AttackKind::LowRank { r: p },
            other => other,
        }
    }
}

impl fmt::Display for AttackKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.structure_param() {
            Some(p) => write!(f, "{}({p})", self.tag()),
            None => f.write_str(self.tag()),
        }
    }
}

/// Parses `universal`, `pgd`, `fgsm`, `group-sparse:K` and `low-rank:R`.
impl FromStr for AttackKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (name, arg) = match s.split_once(':') {
            Some((n, a)) => (n, Some(a)),
            None => (s, None),
        };
        let param = || -> Result<usize> {
            arg.ok_or_else(|| {
                Error::Config(format!(
                    "attack `{name}` needs a parameter, e.g. `{name}:2`"
                ))
            })?
            .parse()
            .map_err(|_| Error::Config(format!("bad attack parameter in `{s}`")))
        };
        match name {
            "universal" => Ok(AttackKind::Universal),
            "pgd" => Ok(AttackKind::Pgd),
            "fgsm" => Ok(AttackKind::Fgsm),
            "group-sparse" | "group" => Ok(AttackKind::GroupSparse { k: param()? }),
            "low-rank" | "nuclear" => Ok(AttackKind::LowRank { r: param()? }),
            other => Err(Error::Config(format!("unknown attack kind `{other}`"))),
        }
    }
}

/// How structured PGD turns the input gradient into a step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum StepRule {
    /// Structure projection first, then every row rescaled to unit norm
    /// (zero rows stay zero).
    #[default]
    PerRow,
    /// Whole matrix rescaled to unit root-mean-square row norm.
    GroupRms,
    /// Unnormalized gradient of the batch-mean loss.
    Raw,
}

impl FromStr for StepRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "row" => Ok(StepRule::PerRow),
            "rms" => Ok(StepRule::GroupRms),
            "raw" => Ok(StepRule::Raw),
            other => Err(Error::Config(format!(
                "unknown step rule `{other}` (row, rms or raw)"
            ))),
        }
    }
}

impl StepRule {
    /// Rescales `grad` (rows are per-sample loss gradients) in place.
    pub fn apply(self, grad: &mut Matrix) {
        let m = grad.rows();
        match self {
            StepRule::PerRow => {
                for i in 0..m {
                    let row = grad.row_mut(i);
                    let n = norm2(row);
                    if n > 0.0 {
                        row.iter_mut().for_each(|v| *v /= n);
                    }
                }
            }
            StepRule::GroupRms => {
                let rms = (grad.as_slice().iter().map(|g| g * g).sum::<f64>() / m as f64).sqrt();
                if rms > 0.0 {
                    grad.as_mut_slice().iter_mut().for_each(|v| *v /= rms);
                }
            }
            StepRule::Raw => grad.as_mut_slice().iter_mut().for_each(|v| *v /= m as f64),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttackConfig {
    pub kind: AttackKind,
    pub step_rule: StepRule,
    /// Structured PGD only: start from a seeded random structured matrix
    /// with row norms `step_size` instead of zero. Without it the universal
    /// attack stalls on class-balanced groups, whose row gradients cancel in
    /// the row mean.
    pub random_start: bool,
    pub steps: usize,
    /// Absolute step length.
    pub step_size: f64,
    /// Absolute per-row L2 cap.
    pub max_norm: f64,
    pub seed: u64,
}

impl AttackConfig {
    /// Structured attack with 100 steps of `0.001 * mean_norm` and a cap of
    /// `0.05 * mean_norm`.
    pub fn paper_structured(kind: AttackKind, mean_norm: f64) -> Self {
        Self {
            kind,
            step_rule: StepRule::PerRow,
            random_start: true,
            steps: 100,
            step_size: 0.001 * mean_norm,
            max_norm: 0.05 * mean_norm,
            seed: 0,
        }
    }

    /// PGD baseline: 20 steps of `0.05 * mean_norm` under `max_norm`.
    pub fn paper_pgd(mean_norm: f64, max_norm: f64) -> Self {
        Self {
            kind: AttackKind::Pgd,
            step_rule: StepRule::PerRow,
            random_start: false,
            steps: 20,
            step_size: 0.05 * mean_norm,
            max_norm,
            seed: 0,
        }
    }

    pub fn validate(&self, m: usize, d: usize) -> Result<()> {
        if !(self.max_norm > 0.0 && self.max_norm.is_finite()) {
            return Err(Error::Config(format!(
                "attack max_norm must be positive, got {}",
                self.max_norm
            )));
        }
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(Error::Config(format!(
                "attack step size must be positive, got {}",
                self.step_size
            )));
        }
        if self.steps == 0 {
            return Err(Error::Config("attack needs at least one step".into()));
        }
        match self.kind {
            AttackKind::GroupSparse { k } if k > d => Err(Error::Config(format!(
                "group-sparse attack with k = {k} > d = {d}"
            ))),
            AttackKind::LowRank { r } if r > m.min(d) => Err(Error::Config(format!(
                "low-rank attack with r = {r} > min(m, d) = {}",
                m.min(d)
            ))),
            _ => Ok(()),
        }
    }
}

/// Dispatches on `cfg.kind`.
pub fn attack<M: SampleLoss + ?Sized>(
    model: &M,
    batch: &LabeledBatch,
    cfg: &AttackConfig,
) -> Result<Matrix> {
    match cfg.kind {
        AttackKind::Pgd => pgd_attack(model, batch, cfg),
        AttackKind::Fgsm => fgsm_attack(model, batch, cfg),
        _ => structured_pgd(model, batch, cfg),
    }
}

pub fn structured_pgd<M: SampleLoss + ?Sized>(
    model: &M,
    batch: &LabeledBatch,
    cfg: &AttackConfig,
) -> Result<Matrix> {
    let (m, d) = batch.x.shape();
    cfg.validate(m, d)?;
    let mut delta = Matrix::zeros(m, d);
    if matches!(
        cfg.kind,
        AttackKind::GroupSparse { k: 0 } | AttackKind::LowRank { r: 0 }
    ) {
        return Ok(delta);
    }
    if cfg.random_start {
        delta = Matrix::random_normal(m, d, &mut crate::data::rng(cfg.seed));
        StepRule::PerRow.apply(&mut delta);
        delta = project_structure(&delta.scale(cfg.step_size), cfg.kind)?;
        clip_rows(&mut delta, cfg.step_size);
    }
    for _ in 0..cfg.steps {
        let (_, mut grad) = model.sample_losses(&batch.x.add(&delta)?, &batch.y)?;
        if grad.as_slice().iter().all(|&g| g == 0.0) {
            break;
        }
        if cfg.step_rule == StepRule::PerRow {
            grad = project_structure(&grad, cfg.kind)?;
        }
        cfg.step_rule.apply(&mut grad);
        delta.axpy(cfg.step_size, &grad)?;
        delta = project_structure(&delta, cfg.kind)?;
        clip_rows(&mut delta, cfg.max_norm);
    }
    Ok(delta)
}

/// Structure projection used after every structured-PGD step.
pub fn project_structure(delta: &Matrix, kind: AttackKind) -> Result<Matrix> {
    match kind {
        AttackKind::Universal => Ok(project_universal(delta)),
        AttackKind::GroupSparse { k } => Ok(project_top_k_columns(delta, k)),
        AttackKind::LowRank { r } => project_rank(delta, r),
        AttackKind::Pgd | AttackKind::Fgsm => Ok(delta.clone()),
    }
}

/// Every row replaced by the row mean.
pub fn project_universal(delta: &Matrix) -> Matrix {
    let mean = delta.row_mean();
    let mut out = delta.clone();
    for i in 0..out.rows() {
        out.row_mut(i).copy_from_slice(&mean);
    }
    out
}

/// Keeps the `k` columns with the largest norms (ties to the lower index).
pub fn project_top_k_columns(delta: &Matrix, k: usize) -> Matrix {
    let norms = delta.column_norms();
    let mut order: Vec<usize> = (0..norms.len()).collect();
    order.sort_by(|&a, &b| norms[b].total_cmp(&norms[a]));
    let mut out = delta.clone();
    for &j in &order[k.min(order.len())..] {
        out.set_column(j, &vec![0.0; delta.rows()]);
    }
    out
}

/// Best rank-`r` approximation; ties at `sigma_r` keep SVD order.
pub fn project_rank(delta: &Matrix, r: usize) -> Result<Matrix> {
    let svd = delta.svd()?;
    let sigma: Vec<f64> = svd
        .singular_values
        .iter()
        .enumerate()
        .map(|(i, &s)| if i < r { s } else { 0.0 })
        .collect();
    Ok(svd.recompose(&sigma))
}

/// Scales down every row whose norm exceeds `max_norm`.
pub fn clip_rows(delta: &mut Matrix, max_norm: f64) {
    for i in 0..delta.rows() {
        let row = delta.row_mut(i);
        let n = norm2(row);
        if n > max_norm {
            let s = max_norm / n;
            row.iter_mut().for_each(|v| *v *= s);
        }
    }
}

/// Independent per-row PGD with row-normalized steps.
pub fn pgd_attack<M: SampleLoss + ?Sized>(
    model: &M,
    batch: &LabeledBatch,
    cfg: &AttackConfig,
) -> Result<Matrix> {
    let (m, d) = batch.x.shape();
    cfg.validate(m, d)?;
    let mut delta = Matrix::zeros(m, d);
    for _ in 0..cfg.steps {
        let (_, grad) = model.sample_losses(&batch.x.add(&delta)?, &batch.y)?;
        for i in 0..m {
            let g = grad.row(i);
            let n = norm2(g);
            if n > 0.0 {
                let s = cfg.step_size / n;
                delta
                    .row_mut(i)
                    .iter_mut()
                    .zip(g)
                    .for_each(|(v, gi)| *v += s * gi);
            }
        }
        clip_rows(&mut delta, cfg.max_norm);
    }
    Ok(delta)
}

/// One step: `max_norm * sign(g_i) / |sign(g_i)|` per row.
pub fn fgsm_attack<M: SampleLoss + ?Sized>(
    model: &M,
    batch: &LabeledBatch,
    cfg: &AttackConfig,
) -> Result<Matrix> {
    let (m, d) = batch.x.shape();
    cfg.validate(m, d)?;
    let (_, grad) = model.sample_losses(&batch.x, &batch.y)?;
    let mut delta = Matrix::zeros(m, d);
    for i in 0..m {
        let s: Vec<f64> = grad
            .row(i)
            .iter()
            .map(|&g| {
                if g > 0.0 {
                    1.0
                } else if g < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            })
            .collect();
        let n = norm2(&s);
        if n > 0.0 {
            delta
                .row_mut(i)
                .iter_mut()
                .zip(&s)
                .for_each(|(v, si)| *v = cfg.max_norm * si / n);
        }
    }
    Ok(delta)
}

/// Mean row L2 norm.
pub fn average_norm(delta: &Matrix) -> f64 {
    delta.row_norms().iter().sum::<f64>() / delta.rows() as f64
}
