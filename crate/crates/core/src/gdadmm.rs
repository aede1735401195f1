//! The GSAT minimax solver.
//!
//! The outer loop is stochastic gradient descent on the model weights. For
//! every sampled group it first maximizes
//!
//! ```text
//! J(delta) = (1/m) sum_i l(x_i + delta_i, y_i) - (lambda/m) c_m(delta)
//! ```
//!
//! with a single-ascent-step ADMM on the split `delta = delta'`: the smooth
//! part of the cost stays with `delta`, the non-smooth part `g` moves to
//! `delta'` and is handled by its closed-form prox. With the scaled dual `u`
//! one inner iteration is
//!
//! ```text
//! delta_i <- delta_i + eta1 * ( (1/m) grad l_i - (2 lambda (1-alpha)/m) delta_i
//!                               - rho (delta_i - delta'_i - u_i) )
//! delta'  <- prox_{xi g}(delta - u),      xi = lambda alpha / (rho m)
//! u       <- u - eta_dual (delta - delta')
//! ```
//!
//! which is gradient ascent on the augmented Lagrangian
//! `(1/m) sum l - (lambda(1-alpha)/m)|delta|^2 - (lambda alpha/m) g(delta')
//! - (rho/2)|delta - delta' - u|^2`. Its fixed points are exactly the
//! maximizers of `J`.
//!
//! The perturbation applied to the group is `delta'`, so the structure
//! (shared rows, zero columns, low rank) holds exactly.
//!
//! Results are bit-reproducible for a given seed; everything runs on one
//! thread.

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;

use crate::attacks::{self, AttackConfig};
use crate::data::{self, Dataset};
use crate::error::{Error, Result};
use crate::groupcost::{max_row_deviation, smooth_part, CostKind, GroupCostSpec};
use crate::linalg::Matrix;
use crate::models::{Arch, LabeledBatch, ModelParams, SampleLoss};
use crate::prox::ProxParams;

/// Relative tolerance for the numerical-rank structure statistic.
pub const RANK_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    pub rho: f64,
    /// Outer stepsize.
    pub eta0: f64,
    /// Inner ascent stepsize.
    pub eta1: f64,
    pub eta_dual: f64,
    pub t0: usize,
    pub t1: usize,
    /// Group size, also the minibatch size.
    pub m: usize,
    pub seed: u64,
    /// Run [`stationarity_estimate`] every this many outer iterations
    /// (0 disables it and the trace column holds NaN).
    pub stationarity_every: usize,
    /// Number of fixed groups the stationarity estimate averages over.
    pub stationarity_groups: usize,
}

impl Default for SolverConfig {
    /// `rho = 1`, `T1 = 20`, `eta0 = 1e-4`, `eta1 = 0.1`, unit dual step.
    fn default() -> Self {
        Self {
            rho: 1.0,
            eta0: 1e-4,
            eta1: 0.1,
            eta_dual: 1.0,
            t0: 1000,
            t1: 20,
            m: 16,
            seed: 0,
            stationarity_every: 0,
            stationarity_groups: 4,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("rho", self.rho),
            ("eta0", self.eta0),
            ("eta1", self.eta1),
            ("eta_dual", self.eta_dual),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if self.m == 0 || self.t1 == 0 || self.t0 == 0 {
            return Err(Error::Config("m, T0 and T1 must all be at least 1".into()));
        }
        if self.stationarity_every > 0 && self.stationarity_groups == 0 {
            return Err(Error::Config(
                "stationarity needs at least one probe group".into(),
            ));
        }
        Ok(())
    }
}

impl SolverConfig {
    /// Sets `rho` and `eta1` relative to the per-row curvature
    /// `s = 2 lambda (1 - alpha) / m` of the smooth penalty: `rho = s` and
    /// `eta1 = 1 / (4 s)`. The paper's absolute values (`rho = 1`,
    /// `eta1 = 0.1`) leave the inner iterates nearly frozen once `m` is more
    /// than a handful, because every per-row term carries a `1/m`.
    pub fn scaled_inner(self, spec: &GroupCostSpec) -> Self {
        let s = 2.0 * spec.lambda * (1.0 - spec.alpha) / self.m as f64;
        Self {
            rho: s,
            eta1: 0.25 / s,
            ..self
        }
    }
}

/// `lambda = 0.25 * E|x|_2` over the training set.
pub fn default_lambda(ds: &Dataset) -> f64 {
    0.25 * ds.mean_feature_norm()
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdmmState {
    pub delta: Matrix,
    pub delta_aux: Matrix,
    /// Scaled dual.
    pub dual: Matrix,
    pub iter: usize,
}

impl AdmmState {
    pub fn zeros(m: usize, d: usize) -> Self {
        Self {
            delta: Matrix::zeros(m, d),
            delta_aux: Matrix::zeros(m, d),
            dual: Matrix::zeros(m, d),
            iter: 0,
        }
    }

    /// `|delta - delta'|_F`.
    pub fn primal_residual(&self) -> f64 {
        self.delta
            .sub(&self.delta_aux)
            .map(|r| r.frobenius_norm())
            .unwrap_or(f64::NAN)
    }
}

/// One record per inner iteration, taken after the dual update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InnerRecord {
    /// Augmented Lagrangian at `(delta, delta', u)`.
    pub augmented: f64,
    /// `J(delta')`.
    pub objective: f64,
    pub primal_residual: f64,
}

/// `J(delta)`; `-inf` where the cost is infinite.
pub fn inner_objective<M: SampleLoss + ?Sized>(
    model: &M,
    batch: &LabeledBatch,
    spec: &GroupCostSpec,
    delta: &Matrix,
) -> Result<f64> {
    let m = batch.len() as f64;
    let loss = model.mean_loss(&batch.x.add(delta)?, &batch.y)?;
    let c = spec.eval_cost(delta)?;
    Ok(loss - spec.lambda / m * c)
}

/// Augmented Lagrangian `J_smooth(delta) - g(delta') + <Gamma, delta - delta'>
/// - rho/2 |delta - delta'|^2` with multiplier `Gamma = rho u`.
pub fn augmented_objective<M: SampleLoss + ?Sized>(
    model: &M,
    batch: &LabeledBatch,
    spec: &GroupCostSpec,
    cfg: &SolverConfig,
    state: &AdmmState,
) -> Result<f64> {
    let m = batch.len() as f64;
    let loss = model.mean_loss(&batch.x.add(&state.delta)?, &batch.y)?;
    let smooth = spec.lambda * (1.0 - spec.alpha) / m * smooth_part(&state.delta);
    let g = if spec.alpha > 0.0 {
        spec.lambda * spec.alpha / m * spec.nonsmooth_part(&state.delta_aux)?
    } else {
        0.0
    };
    let r = state.delta.sub(&state.delta_aux)?;
    Ok(loss - smooth - g + cfg.rho * state.dual.dot(&r)? - 0.5 * cfg.rho * smooth_part(&r))
}

/// Runs `cfg.t1` inner ADMM iterations from zero and returns the final state
/// with one [`InnerRecord`] per iteration.
pub fn admm_inner_maximize<M: SampleLoss + ?Sized>(
    model: &M,
    batch: &LabeledBatch,
    spec: &GroupCostSpec,
    cfg: &SolverConfig,
) -> Result<(AdmmState, Vec<InnerRecord>)> {
    let mut trace = Vec::with_capacity(cfg.t1);
    let state = admm_run(model, batch, spec, cfg, cfg.t1, Some(&mut trace))?;
    Ok((state, trace))
}

/// [`admm_inner_maximize`] with an explicit iteration count and no trace.
pub fn admm_solve<M: SampleLoss + ?Sized>(
    model: &M,
    batch: &LabeledBatch,
    spec: &GroupCostSpec,
    cfg: &SolverConfig,
    iterations: usize,
) -> Result<AdmmState> {
    admm_run(model, batch, spec, cfg, iterations, None)
}

fn admm_run<M: SampleLoss + ?Sized>(
    model: &M,
    batch: &LabeledBatch,
    spec: &GroupCostSpec,
    cfg: &SolverConfig,
    iterations: usize,
    mut trace: Option<&mut Vec<InnerRecord>>,
) -> Result<AdmmState> {
    spec.check_strongly_concave()?;
    let (m, d) = batch.x.shape();
    if m != cfg.m {
        return Err(Error::Shape(format!(
            "batch has {m} rows, solver expects groups of {}",
            cfg.m
        )));
    }
    if d != model.input_dim() {
        return Err(Error::Shape(format!(
            "batch has {d} features, model expects {}",
            model.input_dim()
        )));
    }
    let mf = m as f64;
    let shrink = 1.0 - 2.0 * spec.lambda * (1.0 - spec.alpha) * cfg.eta1 / mf;
    let grad_scale = cfg.eta1 / mf;
    let couple = cfg.rho * cfg.eta1;
    let prox = ProxParams::new(spec.kind, spec.prox_threshold(cfg.rho, m))?;
    let mut st = AdmmState::zeros(m, d);

    for t in 1..=iterations {
        let (_, grad) = model.sample_losses(&batch.x.add(&st.delta)?, &batch.y)?;
        {
            let delta = st.delta.as_mut_slice();
            let aux = st.delta_aux.as_slice();
            let dual = st.dual.as_slice();
            for (k, g) in grad.as_slice().iter().enumerate() {
                delta[k] =
                    shrink * delta[k] - couple * (delta[k] - aux[k] - dual[k]) + grad_scale * g;
            }
        }
        if !st.delta.is_finite() {
            return Err(divergence("ascent step", t, "delta"));
        }

        let v = st.delta.sub(&st.dual)?;
        st.delta_aux = if spec.alpha == 0.0 {
            v
        } else {
            prox.apply(&v)?
        };
        if !st.delta_aux.is_finite() {
            return Err(divergence("prox step", t, "delta'"));
        }

        let r = st.delta.sub(&st.delta_aux)?;
        st.dual.axpy(-cfg.eta_dual, &r)?;
        if !st.dual.is_finite() {
            return Err(divergence("dual step", t, "u"));
        }
        st.iter = t;

        if let Some(tr) = trace.as_deref_mut() {
            tr.push(InnerRecord {
                augmented: augmented_objective(model, batch, spec, cfg, &st)?,
                objective: inner_objective(model, batch, spec, &st.delta_aux)?,
                primal_residual: r.frobenius_norm(),
            });
        }
    }
    Ok(st)
}

fn divergence(stage: &'static str, iter: usize, what: &str) -> Error {
    Error::Divergence {
        stage,
        iter,
        what: format!("{what} became non-finite"),
    }
}

/// Linear test loss `l(x) = w . x` (labels ignored). Its inner maximizer at
/// `alpha = 0` is `delta_i = w / (2 lambda)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearProbe {
    pub w: Vec<f64>,
}

impl SampleLoss for LinearProbe {
    fn input_dim(&self) -> usize {
        self.w.len()
    }

    fn gradient_bound(&self) -> f64 {
        crate::linalg::norm2(&self.w)
    }

    fn sample_losses(&self, x: &Matrix, _y: &[usize]) -> Result<(Vec<f64>, Matrix)> {
        if x.cols() != self.w.len() {
            return Err(Error::Shape(format!(
                "probe of dim {} on {} columns",
                self.w.len(),
                x.cols()
            )));
        }
        let losses = (0..x.rows())
            .map(|i| crate::linalg::dot(x.row(i), &self.w))
            .collect();
        let mut g = Matrix::zeros(x.rows(), x.cols());
        for i in 0..x.rows() {
            g.row_mut(i).copy_from_slice(&self.w);
        }
        Ok((losses, g))
    }
}

/// How the model is trained.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Method {
    Erm,
    Gsat(GroupCostSpec),
    /// Per-sample adversarial training against a PGD or FGSM attack.
    Adversarial(AttackConfig),
}

impl Method {
    pub fn tag(&self) -> String {
        match self {
            Method::Erm => "erm".into(),
            Method::Gsat(s) => format!("gsat-{}", s.kind),
            Method::Adversarial(a) => format!("adv-{}", a.kind.tag()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRecord {
    pub iter: usize,
    pub robust_loss: f64,
    pub clean_loss: f64,
    pub primal_residual: f64,
    /// Max row deviation (indicator), nonzero-column count (group norm) or
    /// numerical rank (nuclear) of the applied perturbation.
    pub structure_stat: f64,
    pub stationarity: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainTrace {
    pub records: Vec<TraceRecord>,
}

impl TrainTrace {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(
            "iter,robust_loss,clean_loss,primal_residual,structure_stat,stationarity\n",
        );
        for r in &self.records {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{}",
                r.iter,
                r.robust_loss,
                r.clean_loss,
                r.primal_residual,
                r.structure_stat,
                r.stationarity
            );
        }
        s
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        crate::io::write_atomic(path, self.to_csv().as_bytes())
    }
}

/// Structure statistic of a perturbation matrix for the given cost kind.
pub fn structure_stat(kind: CostKind, delta: &Matrix) -> Result<f64> {
    Ok(match kind {
        CostKind::Indicator => max_row_deviation(delta),
        CostKind::GroupNorm => delta.column_norms().iter().filter(|&&c| c > 0.0).count() as f64,
        CostKind::Nuclear => delta.svd()?.numerical_rank(RANK_TOL) as f64,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelShape {
    pub arch: Arch,
    pub hidden: usize,
}

/// GSAT training; returns the model and one trace record per outer iteration.
pub fn gsat_train(
    data: &Dataset,
    shape: ModelShape,
    spec: &GroupCostSpec,
    cfg: &SolverConfig,
) -> Result<(ModelParams, TrainTrace)> {
    spec.check_strongly_concave()?;
    train(data, shape, Method::Gsat(*spec), cfg)
}

/// Plain minibatch gradient descent; `cfg.t0 = 0` returns the initialization.
pub fn erm_train(data: &Dataset, shape: ModelShape, cfg: &SolverConfig) -> Result<ModelParams> {
    Ok(train(data, shape, Method::Erm, cfg)?.0)
}

/// Per-sample PGD/FGSM adversarial training, the baseline GSAT is compared to.
pub fn adversarial_train(
    data: &Dataset,
    shape: ModelShape,
    attack: &AttackConfig,
    cfg: &SolverConfig,
) -> Result<(ModelParams, TrainTrace)> {
    train(data, shape, Method::Adversarial(*attack), cfg)
}

/// Shared training loop. The seeded generator first initializes the weights,
/// then draws the probe groups for the stationarity column (if enabled), then
/// draws one group per iteration uniformly with replacement.
pub fn train(
    data: &Dataset,
    shape: ModelShape,
    method: Method,
    cfg: &SolverConfig,
) -> Result<(ModelParams, TrainTrace)> {
    SolverConfig {
        t0: cfg.t0.max(1),
        ..*cfg
    }
    .validate()?;
    if let Method::Adversarial(a) = &method {
        a.validate(cfg.m, data.dim())?;
    }
    let mut rng = data::rng(cfg.seed);
    let mut params =
        ModelParams::init(shape.arch, data.dim(), shape.hidden, data.classes, &mut rng);
    let probes: Vec<LabeledBatch> = if cfg.stationarity_every > 0 {
        (0..cfg.stationarity_groups)
            .map(|_| data.sample_group(cfg.m, &mut rng))
            .collect()
    } else {
        Vec::new()
    };
    let mut trace = TrainTrace::default();
    for t in 1..=cfg.t0 {
        let batch = data.sample_group(cfg.m, &mut rng);
        let step = outer_step(&params, &batch, &method, cfg).map_err(|e| at_outer(e, t))?;
        let stationarity = match (&method, cfg.stationarity_every) {
            (Method::Gsat(spec), every) if every > 0 && (t - 1) % every == 0 => {
                stationarity_estimate(&params, &probes, spec, cfg).map_err(|e| at_outer(e, t))?
            }
            _ => f64::NAN,
        };
        params.axpy(-cfg.eta0, &step.grad_w)?;
        if !params.is_finite() {
            return Err(Error::Divergence {
                stage: "outer step",
                iter: t,
                what: "model weights became non-finite".into(),
            });
        }
        trace.records.push(TraceRecord {
            iter: t,
            robust_loss: step.robust_loss,
            clean_loss: step.clean_loss,
            primal_residual: step.primal_residual,
            structure_stat: step.structure_stat,
            stationarity,
        });
    }
    Ok((params, trace))
}

fn at_outer(e: Error, t: usize) -> Error {
    match e {
        Error::Divergence { stage, iter, what } => Error::Divergence {
            stage,
            iter,
            what: format!("{what} (outer iteration {t})"),
        },
        other => other,
    }
}

struct OuterStep {
    grad_w: ModelParams,
    robust_loss: f64,
    clean_loss: f64,
    primal_residual: f64,
    structure_stat: f64,
}

fn outer_step(
    params: &ModelParams,
    batch: &LabeledBatch,
    method: &Method,
    cfg: &SolverConfig,
) -> Result<OuterStep> {
    let clean_loss = params.mean_loss(&batch.x, &batch.y)?;
    let (delta, primal_residual, structure) = match method {
        Method::Erm => (None, 0.0, f64::NAN),
        Method::Gsat(spec) => {
            let st = admm_solve(params, batch, spec, cfg, cfg.t1)?;
            let s = structure_stat(spec.kind, &st.delta_aux)?;
            (Some(st.delta_aux.clone()), st.primal_residual(), s)
        }
        Method::Adversarial(a) => (Some(attacks::attack(params, batch, a)?), 0.0, f64::NAN),
    };
    let lg = match &delta {
        Some(d) => params.loss_and_grads(&batch.perturbed(d)?)?,
        None => params.loss_and_grads(batch)?,
    };
    Ok(OuterStep {
        grad_w: lg.grad_w,
        robust_loss: lg.loss,
        clean_loss,
        primal_residual,
        structure_stat: structure,
    })
}

/// Danskin estimate of `|grad F(w)|`: solves the inner problem on each group
/// with `10 * T1` iterations, averages the weight gradients at the solutions
/// and returns the norm of the average.
pub fn stationarity_estimate(
    params: &ModelParams,
    groups: &[LabeledBatch],
    spec: &GroupCostSpec,
    cfg: &SolverConfig,
) -> Result<f64> {
    if groups.is_empty() {
        return Err(Error::Config(
            "stationarity estimate needs at least one group".into(),
        ));
    }
    let mut acc: Option<ModelParams> = None;
    for g in groups {
        let st = admm_solve(params, g, spec, cfg, cfg.t1 * 10)?;
        let lg = params.loss_and_grads(&g.perturbed(&st.delta_aux)?)?;
        match acc.as_mut() {
            Some(a) => a.axpy(1.0, &lg.grad_w)?,
            None => acc = Some(lg.grad_w),
        }
    }
    let mut a = acc.expect("nonempty");
    a.scale(1.0 / groups.len() as f64);
    Ok(a.norm())
}

/// Draws `count` groups of size `m` with a fresh generator.
pub fn sample_groups<R: Rng + ?Sized>(
    data: &Dataset,
    m: usize,
    count: usize,
    rng: &mut R,
) -> Vec<LabeledBatch> {
    (0..count).map(|_| data.sample_group(m, rng)).collect()
}
