//! Experiment driver behind the `gsot` binary.
//!
//! Every subcommand reads an [`ExperimentConfig`], writes its outputs into
//! the configured directory (atomically) and maps errors to exit codes:
//! 0 success, 2 configuration, 3 numerical failure, 4 verification failure.

pub mod config;
pub mod select;
pub mod verify;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::attacks::{self, AttackKind};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::gdadmm::{self, Method};
use crate::io::write_atomic;
use crate::linalg::Matrix;
use crate::models::{LabeledBatch, ModelParams};

pub use config::{ExperimentConfig, Length, TrainMethod};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Train,
    Eval,
    Attack,
    SelectFeatures,
    SelectBasis,
    Verify,
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::Parse { .. } | Error::Io(_) => 2,
        Error::Verification(_) => 4,
        _ => 3,
    }
}

/// Loads the config, applies the overrides and runs `cmd`. Returns the text
/// printed to stdout.
pub fn run(cmd: Command, config: &Path, seed: Option<u64>, out: Option<PathBuf>) -> Result<String> {
    let cfg = ExperimentConfig::load(config)?.with_overrides(seed, out);
    execute(cmd, &cfg)
}

pub fn execute(cmd: Command, cfg: &ExperimentConfig) -> Result<String> {
    match cmd {
        Command::Train => run_train(cfg),
        Command::Eval => run_eval(cfg).map(|recs| format_metrics(&recs)),
        Command::Attack => run_attack(cfg),
        Command::SelectFeatures => select::select_features(cfg).map(|r| r.text),
        Command::SelectBasis => select::select_basis(cfg).map(|r| r.text),
        Command::Verify => verify::run_verify(cfg),
    }
}

/// Trains per `train.method`; writes `model.txt` and `trace.csv`.
pub fn run_train(cfg: &ExperimentConfig) -> Result<String> {
    let (train, test) = cfg.load_data()?;
    let mean_norm = train.mean_feature_norm();
    let spec = cfg.cost_spec(&train)?;
    let method = match cfg.method {
        TrainMethod::Gsat => Method::Gsat(spec),
        TrainMethod::Erm => Method::Erm,
        TrainMethod::Pgd => Method::Adversarial(cfg.train_attack.resolve(
            AttackKind::Pgd,
            mean_norm,
            cfg.seed,
        )),
        TrainMethod::Fgsm => Method::Adversarial(cfg.train_attack.resolve(
            AttackKind::Fgsm,
            mean_norm,
            cfg.seed,
        )),
    };
    let (params, trace) = gdadmm::train(&train, cfg.model, method, &cfg.solver_for(&spec))?;
    std::fs::create_dir_all(&cfg.out)?;
    params.save(&cfg.out.join("model.txt"))?;
    trace.save_csv(&cfg.out.join("trace.csv"))?;
    Ok(format!(
        "trained {} for {} iterations\ntrain accuracy {:.4}\ntest accuracy {:.4}\nwrote {}\n",
        method.tag(),
        trace.len(),
        params.accuracy(&train.batch())?,
        params.accuracy(&test.batch())?,
        cfg.out.display()
    ))
}

pub fn load_model(cfg: &ExperimentConfig) -> Result<ModelParams> {
    let path = cfg.model_file();
    if !path.exists() {
        return Err(Error::Config(format!(
            "model file {} does not exist; run `train` first",
            path.display()
        )));
    }
    ModelParams::load(&path)
}

/// One row of the evaluation table.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRecord {
    pub model: String,
    pub attack: String,
    pub param: Option<usize>,
    pub accuracy: f64,
    pub mean_norm: f64,
}

pub const METRICS_HEADER: &str = "model,attack,param,accuracy,mean_norm";

pub fn metrics_to_csv(recs: &[MetricsRecord]) -> String {
    let mut s = format!("{METRICS_HEADER}\n");
    for r in recs {
        let p = r.param.map(|p| p.to_string()).unwrap_or_default();
        let _ = writeln!(
            s,
            "{},{},{},{},{}",
            r.model, r.attack, p, r.accuracy, r.mean_norm
        );
    }
    s
}

/// Reads a metrics CSV back, as a plotting script would.
pub fn parse_metrics_csv(text: &str) -> Result<Vec<MetricsRecord>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == METRICS_HEADER => {}
        _ => {
            return Err(Error::Parse {
                line: 1,
                msg: format!("expected header `{METRICS_HEADER}`"),
            })
        }
    }
    lines
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| {
            let bad = |what: &str| Error::Parse {
                line: n + 1,
                msg: format!("bad {what}"),
            };
            let f: Vec<&str> = l.split(',').collect();
            if f.len() != 5 {
                return Err(bad("field count"));
            }
            Ok(MetricsRecord {
                model: f[0].to_string(),
                attack: f[1].to_string(),
                param: if f[2].is_empty() {
                    None
                } else {
                    Some(f[2].parse().map_err(|_| bad("param"))?)
                },
                accuracy: f[3].parse().map_err(|_| bad("accuracy"))?,
                mean_norm: f[4].parse().map_err(|_| bad("mean_norm"))?,
            })
        })
        .collect()
}

fn format_metrics(recs: &[MetricsRecord]) -> String {
    let mut s = String::new();
    for r in recs {
        let p = r.param.map(|p| p.to_string()).unwrap_or_else(|| "-".into());
        let _ = writeln!(
            s,
            "{:<14} {:<13} {:>4}  acc {:.4}  |delta| {:.4}",
            r.model, r.attack, p, r.accuracy, r.mean_norm
        );
    }
    s
}

fn model_tag(cfg: &ExperimentConfig) -> String {
    cfg.model_tag.clone().unwrap_or_else(|| match cfg.method {
        TrainMethod::Gsat => format!("gsat-{}", cfg.cost_kind),
        TrainMethod::Erm => "erm".into(),
        TrainMethod::Pgd => "pgd".into(),
        TrainMethod::Fgsm => "fgsm".into(),
    })
}

/// Attacks `ds` in consecutive groups of `group` rows (0 = all rows at once).
pub fn attack_dataset(
    params: &ModelParams,
    ds: &Dataset,
    cfg: &attacks::AttackConfig,
    group: usize,
) -> Result<Matrix> {
    let n = ds.len();
    let group = if group == 0 { n } else { group };
    let mut delta = Matrix::zeros(n, ds.dim());
    let mut start = 0;
    while start < n {
        let idx: Vec<usize> = (start..(start + group).min(n)).collect();
        let batch = ds.subset(&idx);
        let d = attacks::attack(params, &batch, cfg)?;
        for (k, &i) in idx.iter().enumerate() {
            delta.row_mut(i).copy_from_slice(d.row(k));
        }
        start += group;
    }
    Ok(delta)
}

/// Accuracy and mean perturbation norm under one attack.
pub fn attacked_accuracy(
    params: &ModelParams,
    ds: &Dataset,
    cfg: &attacks::AttackConfig,
    group: usize,
) -> Result<(f64, f64)> {
    let delta = attack_dataset(params, ds, cfg, group)?;
    let batch = LabeledBatch {
        x: ds.x.add(&delta)?,
        y: ds.y.clone(),
    };
    Ok((params.accuracy(&batch)?, attacks::average_norm(&delta)))
}

/// Clean accuracy followed by one row per configured attack and ladder
/// entry; writes `metrics.csv`.
pub fn run_eval(cfg: &ExperimentConfig) -> Result<Vec<MetricsRecord>> {
    let params = load_model(cfg)?;
    let (train, test) = cfg.load_data()?;
    let mean_norm = train.mean_feature_norm();
    let tag = model_tag(cfg);
    let mut recs = vec![MetricsRecord {
        model: tag.clone(),
        attack: "clean".into(),
        param: None,
        accuracy: params.accuracy(&test.batch())?,
        mean_norm: 0.0,
    }];
    for spec in &cfg.attacks {
        for kind in spec.kinds() {
            let a = spec.resolve(kind, mean_norm, cfg.seed);
            let (accuracy, norm) = attacked_accuracy(&params, &test, &a, cfg.eval_group)?;
            recs.push(MetricsRecord {
                model: tag.clone(),
                attack: kind.tag().into(),
                param: kind.structure_param(),
                accuracy,
                mean_norm: norm,
            });
        }
    }
    std::fs::create_dir_all(&cfg.out)?;
    write_atomic(
        &cfg.out.join("metrics.csv"),
        metrics_to_csv(&recs).as_bytes(),
    )?;
    Ok(recs)
}

/// Writes the attacked test set of every configured attack as
/// `adversarial_<n>.csv`.
pub fn run_attack(cfg: &ExperimentConfig) -> Result<String> {
    let params = load_model(cfg)?;
    let (train, test) = cfg.load_data()?;
    let mean_norm = train.mean_feature_norm();
    std::fs::create_dir_all(&cfg.out)?;
    let mut report = String::new();
    let mut n = 0;
    for spec in &cfg.attacks {
        for kind in spec.kinds() {
            let a = spec.resolve(kind, mean_norm, cfg.seed);
            let delta = attack_dataset(&params, &test, &a, cfg.eval_group)?;
            let mut adv = test.clone();
            adv.x = test.x.add(&delta)?;
            adv.note = format!("{} attacked by {kind}", test.note);
            let path = cfg.out.join(format!("adversarial_{n}.csv"));
            crate::data::save_csv(&adv, &path)?;
            let _ = writeln!(
                report,
                "{kind}: accuracy {:.4}, mean |delta| {:.4} -> {}",
                params.accuracy(&adv.batch())?,
                attacks::average_norm(&delta),
                path.display()
            );
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::Config("no attack.N entries configured".into()));
    }
    Ok(report)
}
