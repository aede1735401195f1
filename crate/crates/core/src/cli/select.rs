//! Feature and basis selection from the perturbations a trained model
//! attracts.
//!
//! Features: the group-norm perturbations of many sampled groups are
//! accumulated column by column (sum of column L2 norms) and the columns are
//! ranked by that score. Basis: the low-rank perturbations are stacked and the
//! top right singular vectors of the stack are reported.

use std::fmt::Write as _;

use super::config::{ExperimentConfig, SelectMethod, TrainMethod};
use crate::attacks::{self, AttackKind};
use crate::data::{self, Dataset};
use crate::error::{Error, Result};
use crate::gdadmm;
use crate::groupcost::CostKind;
use crate::io::write_atomic;
use crate::linalg::Matrix;
use crate::models::ModelParams;

/// Groups whose selected subspaces differ by more than this trigger a warning.
pub const MAX_PRINCIPAL_ANGLE_DEG: f64 = 30.0;

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureReport {
    /// `(column, score)` sorted by decreasing score, ties by column index.
    pub ranking: Vec<(usize, f64)>,
    pub selected: Vec<usize>,
    pub warnings: Vec<String>,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BasisReport {
    /// `r x d`, orthonormal rows.
    pub basis: Matrix,
    pub scores: Vec<f64>,
    /// Largest pairwise principal angle between per-group subspaces, degrees.
    pub max_angle_deg: f64,
    pub warnings: Vec<String>,
    pub text: String,
}

/// Perturbation matrices of `repetitions` seeded groups, either from the
/// inner ADMM maximizer or from a structured attack.
pub fn collect_perturbations(
    params: &ModelParams,
    train: &Dataset,
    cfg: &ExperimentConfig,
    attack_kind: AttackKind,
) -> Result<Vec<Matrix>> {
    let spec = cfg.cost_spec(train)?;
    let mut rng = data::rng(cfg.seed ^ 0x5e1ec7);
    let mean_norm = train.mean_feature_norm();
    let mut out = Vec::with_capacity(cfg.select_repetitions);
    for _ in 0..cfg.select_repetitions {
        let group = train.sample_group(cfg.solver.m, &mut rng);
        let delta = match cfg.select_method {
            SelectMethod::Admm => {
                let solver = cfg.solver_for(&spec);
                gdadmm::admm_solve(params, &group, &spec, &solver, solver.t1)?.delta_aux
            }
            SelectMethod::Attack => {
                let base =
                    cfg.attacks
                        .first()
                        .cloned()
                        .unwrap_or_else(|| super::config::AttackSpec {
                            kind: attack_kind,
                            steps: 100,
                            step_norm: attacks::StepRule::PerRow,
                            random_start: true,
                            step: super::config::Length::Relative(0.001),
                            budget: super::config::Length::Relative(0.05),
                            ladder: Vec::new(),
                        });
                attacks::structured_pgd(
                    params,
                    &group,
                    &base.resolve(attack_kind, mean_norm, cfg.seed),
                )?
            }
        };
        out.push(delta);
    }
    Ok(out)
}

fn kind_warning(cfg: &ExperimentConfig, want: CostKind) -> Option<String> {
    (cfg.method != TrainMethod::Gsat || cfg.cost_kind != want)
        .then(|| format!("warning: selection expects a model trained by GSAT with the {want} cost"))
}

pub fn rank_columns(perturbations: &[Matrix], d: usize) -> Vec<(usize, f64)> {
    let mut score = vec![0.0; d];
    for p in perturbations {
        score
            .iter_mut()
            .zip(p.column_norms())
            .for_each(|(s, c)| *s += c);
    }
    let mut ranking: Vec<(usize, f64)> = score.into_iter().enumerate().collect();
    ranking.sort_by(|a, b| b.1.total_cmp(&a.1));
    ranking
}

pub fn select_features(cfg: &ExperimentConfig) -> Result<FeatureReport> {
    let params = super::load_model(cfg)?;
    let (train, _) = cfg.load_data()?;
    let d = train.dim();
    if cfg.select_k == 0 || cfg.select_k > d {
        return Err(Error::Config(format!(
            "select.k must lie in 1..={d}, got {}",
            cfg.select_k
        )));
    }
    let mut spec_cfg = cfg.clone();
    spec_cfg.cost_kind = CostKind::GroupNorm;
    let perts = collect_perturbations(
        &params,
        &train,
        &spec_cfg,
        AttackKind::GroupSparse { k: cfg.select_k },
    )?;
    let ranking = rank_columns(&perts, d);
    let selected: Vec<usize> = ranking.iter().take(cfg.select_k).map(|r| r.0).collect();
    let warnings: Vec<String> = kind_warning(cfg, CostKind::GroupNorm).into_iter().collect();

    let mut csv = String::from("rank,column,score\n");
    for (i, (c, s)) in ranking.iter().enumerate() {
        let _ = writeln!(csv, "{},{c},{s}", i + 1);
    }
    let mut text = String::new();
    for w in &warnings {
        let _ = writeln!(text, "{w}");
    }
    let _ = writeln!(
        text,
        "top {} of {d} features over {} groups:",
        cfg.select_k,
        perts.len()
    );
    for (i, (c, s)) in ranking.iter().take(cfg.select_k).enumerate() {
        let _ = writeln!(text, "{:>3}. f{c}  score {s:.6}", i + 1);
    }
    std::fs::create_dir_all(&cfg.out)?;
    write_atomic(&cfg.out.join("features.csv"), csv.as_bytes())?;
    write_atomic(&cfg.out.join("features.txt"), text.as_bytes())?;
    Ok(FeatureReport {
        ranking,
        selected,
        warnings,
        text,
    })
}

/// Top-`r` right singular vectors of `a` as rows, if `a` has any energy.
fn top_subspace(a: &Matrix, r: usize) -> Result<Option<Matrix>> {
    let svd = a.svd()?;
    if svd.singular_values.first().copied().unwrap_or(0.0) <= 0.0 {
        return Ok(None);
    }
    let d = a.cols();
    let mut v = Matrix::zeros(r, d);
    for i in 0..r {
        v.row_mut(i).copy_from_slice(svd.vt.row(i));
    }
    Ok(Some(v))
}

/// Largest principal angle (degrees) between the row spaces of `a` and `b`,
/// both with orthonormal rows.
pub fn principal_angle_deg(a: &Matrix, b: &Matrix) -> Result<f64> {
    let s = a.matmul(&b.transpose())?.svd()?.singular_values;
    let smallest = s
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
        .clamp(0.0, 1.0);
    Ok(smallest.acos().to_degrees())
}

pub fn select_basis(cfg: &ExperimentConfig) -> Result<BasisReport> {
    let params = super::load_model(cfg)?;
    let (train, _) = cfg.load_data()?;
    let d = train.dim();
    let r = cfg.select_r;
    let mut spec_cfg = cfg.clone();
    spec_cfg.cost_kind = CostKind::Nuclear;
    let perts = collect_perturbations(
        &params,
        &train,
        &spec_cfg,
        AttackKind::LowRank {
            r: r.min(cfg.solver.m).min(d),
        },
    )?;
    let rows = perts.len() * cfg.solver.m;
    if r == 0 || r > rows.min(d) {
        return Err(Error::Config(format!(
            "select.r must lie in 1..={}, got {r}",
            rows.min(d)
        )));
    }
    let mut stacked = Matrix::zeros(rows, d);
    for (g, p) in perts.iter().enumerate() {
        for i in 0..p.rows() {
            stacked
                .row_mut(g * cfg.solver.m + i)
                .copy_from_slice(p.row(i));
        }
    }
    let svd = stacked.svd()?;
    let mut basis = Matrix::zeros(r, d);
    for i in 0..r {
        basis.row_mut(i).copy_from_slice(svd.vt.row(i));
    }
    let scores = svd.singular_values[..r].to_vec();

    let per_group: Vec<Matrix> = perts
        .iter()
        .filter(|p| p.rows() >= r)
        .map(|p| top_subspace(p, r))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();
    let mut max_angle: f64 = 0.0;
    for i in 0..per_group.len() {
        for j in i + 1..per_group.len() {
            max_angle = max_angle.max(principal_angle_deg(&per_group[i], &per_group[j])?);
        }
    }
    let mut warnings: Vec<String> = kind_warning(cfg, CostKind::Nuclear).into_iter().collect();
    if max_angle > MAX_PRINCIPAL_ANGLE_DEG {
        warnings.push(format!(
            "warning: per-group subspaces disagree (largest principal angle {max_angle:.1} deg > {MAX_PRINCIPAL_ANGLE_DEG} deg); \
             the selected basis assumes every group targets the same subspace"
        ));
    }

    let mut csv = String::from("component,score");
    for j in 0..d {
        let _ = write!(csv, ",f{j}");
    }
    csv.push('\n');
    for i in 0..r {
        let _ = write!(csv, "{},{}", i + 1, scores[i]);
        for v in basis.row(i) {
            let _ = write!(csv, ",{v}");
        }
        csv.push('\n');
    }
    let mut text = String::new();
    for w in &warnings {
        let _ = writeln!(text, "{w}");
    }
    let _ = writeln!(
        text,
        "top {r} directions over {} groups (largest per-group angle {max_angle:.1} deg):",
        perts.len()
    );
    for i in 0..r {
        let _ = writeln!(text, "{:>3}. score {:.6}", i + 1, scores[i]);
    }
    std::fs::create_dir_all(&cfg.out)?;
    write_atomic(&cfg.out.join("basis.csv"), csv.as_bytes())?;
    write_atomic(&cfg.out.join("basis.txt"), text.as_bytes())?;
    Ok(BasisReport {
        basis,
        scores,
        max_angle_deg: max_angle,
        warnings,
        text,
    })
}
