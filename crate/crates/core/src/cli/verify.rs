//! The oracle suite behind `gsot verify`: closed-form proxes against the
//! iterative oracle, analytic gradients against finite differences, the ADMM
//! inner solver against the grid c-transform, weak duality, the coupling LP
//! and a few structural identities.

use std::fmt::Write as _;

use rand::Rng;

use super::config::ExperimentConfig;
use crate::data;
use crate::error::{Error, Result};
use crate::gdadmm::{self, LinearProbe, SolverConfig};
use crate::groupcost::{CostKind, GroupCostSpec};
use crate::linalg::Matrix;
use crate::models::{gradient_check, Arch, LabeledBatch, ModelParams};
use crate::ot_oracle::{self, Pushforward, TinyInstance, WeightedPoint};
use crate::prox::{prox_objective, prox_oracle, ProxParams};

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    /// The measured gap or error.
    pub value: f64,
    pub tol: f64,
}

impl Check {
    fn at_most(name: impl Into<String>, value: f64, tol: f64) -> Self {
        Self {
            name: name.into(),
            passed: value <= tol,
            value,
            tol,
        }
    }
}

pub const PROX_TOL: f64 = 1e-4;
pub const PROX_OBJ_TOL: f64 = 1e-6;
pub const GRAD_TOL: f64 = 1e-4;
pub const CLOSED_FORM_TOL: f64 = 1e-4;
pub const BRACKET_UPPER: f64 = 1e-3;
pub const FD_STEP: f64 = 1e-5;

/// Inner solver settings used wherever the ADMM output is compared with an
/// oracle: 200 iterations with a larger ascent step than the training default.
pub fn oracle_solver(m: usize) -> SolverConfig {
    SolverConfig {
        m,
        t1: 200,
        eta1: 0.5,
        rho: 1.0,
        eta_dual: 1.0,
        ..SolverConfig::default()
    }
}

/// Worst Frobenius distance between closed form and oracle over `instances`
/// random matrices (threshold of the closed form scaled by `scale`), and the
/// worst objective excess.
pub fn prox_gap<R: Rng + ?Sized>(
    kind: CostKind,
    instances: usize,
    scale: f64,
    rng: &mut R,
) -> Result<(f64, f64)> {
    let thresholds = [0.0, 0.1, 1.0, 10.0];
    let (mut dist, mut excess): (f64, f64) = (0.0, f64::NEG_INFINITY);
    for n in 0..instances {
        let (m, d) = (1 + n % 4, 1 + (n / 4) % 3);
        let v = Matrix::random_normal(m, d, rng).scale(3.0);
        let xi = thresholds[n % thresholds.len()];
        let closed = ProxParams::new(kind, xi * scale)?.apply(&v)?;
        let oracle = prox_oracle(kind, &v, xi)?;
        dist = dist.max(closed.sub(&oracle)?.frobenius_norm());
        let oc = prox_objective(kind, &v, &closed, xi)?;
        let oo = prox_objective(kind, &v, &oracle, xi)?;
        if oc.is_finite() || oo.is_finite() {
            excess = excess.max(oc - oo);
        }
    }
    Ok((dist, excess))
}

/// `(admm value, grid value, slack)` on one tiny instance.
pub fn bracket<M: crate::models::SampleLoss + ?Sized>(
    model: &M,
    group: &LabeledBatch,
    spec: &GroupCostSpec,
) -> Result<(f64, f64, f64)> {
    let cfg = oracle_solver(group.len());
    let st = gdadmm::admm_solve(model, group, spec, &cfg, cfg.t1)?;
    let admm = gdadmm::inner_objective(model, group, spec, &st.delta_aux)?;
    let grid = ot_oracle::grid_ctransform(model, group, spec, &TinyInstance::default())?;
    Ok((admm, grid.value, grid.slack))
}

/// Classical squared-Euclidean transport cost between two discrete
/// distributions with two atoms each, by a fine 1-D scan over the free mass.
fn classical_two_point(p: &[WeightedPoint], q: &[WeightedPoint]) -> f64 {
    let c = |a: &WeightedPoint, b: &WeightedPoint| {
        a.x.iter()
            .zip(&b.x)
            .map(|(u, v)| (u - v).powi(2))
            .sum::<f64>()
    };
    let lo = (p[0].weight - q[1].weight).max(0.0);
    let hi = p[0].weight.min(q[0].weight);
    let steps = 100_000;
    (0..=steps)
        .map(|k| {
            let t = lo + (hi - lo) * k as f64 / steps as f64;
            // t on (p0,q0); the rest is fixed by the marginals
            t * c(&p[0], &q[0])
                + (p[0].weight - t) * c(&p[0], &q[1])
                + (q[0].weight - t) * c(&p[1], &q[0])
                + (p[1].weight - q[0].weight + t) * c(&p[1], &q[1])
        })
        .fold(f64::INFINITY, f64::min)
}

/// Runs every check once. `prox_scale` multiplies the closed-form prox
/// threshold (1 in normal use; anything else must make the prox checks fail).
pub fn run_checks(seed: u64, prox_scale: f64) -> Result<Vec<Check>> {
    let mut rng = data::rng(seed);
    let mut out = Vec::new();

    for kind in CostKind::ALL {
        let (dist, excess) = prox_gap(kind, 12, prox_scale, &mut rng)?;
        let mut c = Check::at_most(format!("prox/{kind}"), dist, PROX_TOL);
        c.passed &= excess <= PROX_OBJ_TOL;
        out.push(c);
    }

    for arch in [Arch::LinearSoftmax, Arch::MlpElu] {
        let mut worst: f64 = 0.0;
        for _ in 0..5 {
            let p = ModelParams::init(arch, 3, 4, 3, &mut rng);
            let x = Matrix::random_normal(4, 3, &mut rng);
            let batch = LabeledBatch::new(x, vec![0, 1, 2, 1])?;
            worst = worst.max(gradient_check(&p, &batch, FD_STEP)?.max());
        }
        out.push(Check::at_most(
            format!("gradient/{}", arch.tag()),
            worst,
            GRAD_TOL,
        ));
    }

    {
        let probe = LinearProbe {
            w: vec![0.8, -0.4, 0.3],
        };
        let batch = LabeledBatch::new(Matrix::random_normal(3, 3, &mut rng), vec![0; 3])?;
        let lambda = 0.9;
        let spec = GroupCostSpec::new(CostKind::GroupNorm, 0.0, lambda)?;
        let st = gdadmm::admm_solve(&probe, &batch, &spec, &oracle_solver(3), 200)?;
        let err = (0..3)
            .flat_map(|i| (0..3).map(move |j| (i, j)))
            .map(|(i, j)| (st.delta[(i, j)] - probe.w[j] / (2.0 * lambda)).abs())
            .fold(0.0, f64::max);
        out.push(Check::at_most("admm/closed-form", err, CLOSED_FORM_TOL));
    }

    let model = ModelParams::init(Arch::MlpElu, 2, 3, 2, &mut rng);
    let pool = LabeledBatch::new(
        Matrix::random_normal(8, 2, &mut rng),
        (0..8).map(|i| i % 2).collect(),
    )?;
    for kind in CostKind::ALL {
        let spec = GroupCostSpec::new(kind, 0.5, 0.5)?;
        let group = LabeledBatch::new(pool.x.select_rows(&[0, 1, 2]), pool.y[..3].to_vec())?;
        let (admm, grid, slack) = bracket(&model, &group, &spec)?;
        // signed distance outside [grid - slack, grid + upper]
        let outside = (grid - slack - admm)
            .max(admm - grid - BRACKET_UPPER)
            .max(0.0);
        out.push(Check {
            name: format!("admm/bracket/{kind}"),
            passed: outside == 0.0,
            value: grid - admm,
            tol: slack,
        });
    }

    {
        let spec = GroupCostSpec::new(CostKind::GroupNorm, 0.5, 0.5)?;
        let inst = TinyInstance::default();
        let mut worst = f64::INFINITY;
        for t in 0..10 {
            let map = Pushforward::random(2, 3, 1.0, &mut rng);
            let rep = ot_oracle::weak_duality_check(
                &model,
                &pool,
                &spec,
                &inst,
                &|x| map.apply(x),
                2,
                2,
                seed + t,
            )?;
            worst = worst.min(rep.min_gap);
        }
        out.push(Check {
            name: "duality/weak".into(),
            passed: worst >= -ot_oracle::DUALITY_TOL,
            value: worst,
            tol: -ot_oracle::DUALITY_TOL,
        });

        let group = LabeledBatch::new(pool.x.select_rows(&[2, 3]), pool.y[2..4].to_vec())?;
        let ct = ot_oracle::grid_ctransform(&model, &group, &spec, &inst)?;
        let moved = group.x.add(&ct.argmax)?;
        let lhs = gdadmm::inner_objective(&model, &group, &spec, &moved.sub(&group.x)?)?;
        out.push(Check::at_most(
            "duality/tight",
            (ct.value - lhs).abs(),
            ot_oracle::DUALITY_TOL,
        ));
    }

    {
        let pts = |v: [[f64; 2]; 2], w: f64| {
            vec![
                WeightedPoint {
                    x: v[0].to_vec(),
                    y: 0,
                    weight: w,
                },
                WeightedPoint {
                    x: v[1].to_vec(),
                    y: 0,
                    weight: 1.0 - w,
                },
            ]
        };
        let p = pts([[0.0, 0.0], [1.0, 2.0]], 0.3);
        let q = pts([[0.5, -1.0], [2.0, 1.0]], 0.6);
        let g = GroupCostSpec::new(CostKind::GroupNorm, 0.5, 1.0)?;
        out.push(Check::at_most(
            "coupling/identity",
            ot_oracle::coupling_cost_bruteforce(&p, &p, &g)?.abs(),
            1e-9,
        ));
        let g0 = GroupCostSpec::new(CostKind::GroupNorm, 0.0, 1.0)?;
        let lp = ot_oracle::coupling_cost_bruteforce(&p, &q, &g0)?;
        out.push(Check::at_most(
            "coupling/classical",
            (lp - classical_two_point(&p, &q)).abs(),
            1e-6,
        ));
    }

    {
        let mut ok = true;
        for kind in CostKind::ALL {
            let spec = GroupCostSpec::new(kind, 0.5, 1.0)?;
            let a = Matrix::random_normal(4, 3, &mut rng);
            ok &= spec.is_permutation_invariant_witness(&a, &[2, 0, 3, 1])?;
        }
        out.push(Check {
            name: "cost/permutation".into(),
            passed: ok,
            value: if ok { 0.0 } else { 1.0 },
            tol: 0.0,
        });
    }

    {
        let mut worst: f64 = 0.0;
        for (m, d) in [(5, 3), (3, 5), (4, 4), (1, 6)] {
            let a = Matrix::random_normal(m, d, &mut rng);
            let r = a.svd()?.reconstruct().sub(&a)?.frobenius_norm();
            worst = worst.max(r / a.frobenius_norm().max(1.0));
        }
        out.push(Check::at_most("svd/reconstruction", worst, 1e-8));
    }
    Ok(out)
}

pub fn format_checks(checks: &[Check]) -> String {
    let mut s = format!(
        "{:<28} {:<6} {:>14} {:>12}\n",
        "check", "result", "value", "tolerance"
    );
    for c in checks {
        let _ = writeln!(
            s,
            "{:<28} {:<6} {:>14.3e} {:>12.1e}",
            c.name,
            if c.passed { "pass" } else { "FAIL" },
            c.value,
            c.tol
        );
    }
    s
}

pub fn run_verify(cfg: &ExperimentConfig) -> Result<String> {
    let checks = run_checks(cfg.seed, cfg.prox_threshold_scale)?;
    let table = format_checks(&checks);
    std::fs::create_dir_all(&cfg.out)?;
    crate::io::write_atomic(&cfg.out.join("verify.txt"), table.as_bytes())?;
    let failed = checks.iter().filter(|c| !c.passed).count();
    if failed > 0 {
        return Err(Error::Verification(format!(
            "{failed} of {} checks failed\n{table}",
            checks.len()
        )));
    }
    Ok(table)
}
