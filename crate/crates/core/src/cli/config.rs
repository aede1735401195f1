//! Experiment configuration: flat `key = value` lines grouped by dotted
//! prefixes. `#` starts a comment. Unknown and duplicate keys are errors.
//!
//! ```text
//! seed = 3
//! out = runs/demo
//! data.source = blobs          # blobs | planted | csv
//! data.n = 400
//! model.arch = mlp-elu
//! cost.kind = group
//! cost.lambda_rule = mean-norm # lambda = 0.25 E|x|
//! solver.t0 = 500
//! solver.inner = scaled        # rho and eta1 from the cost curvature
//! attack.0.kind = group-sparse
//! attack.0.ladder = 0,1,2,4,8
//! ```

use std::cell::RefCell;
use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::attacks::{AttackConfig, AttackKind, StepRule};
use crate::data::{self, CsvOptions, Dataset, PlantSpec, PlantedTaskSpec, ShiftKind, SplitTarget};
use crate::error::{Error, Result};
use crate::gdadmm::{ModelShape, SolverConfig};
use crate::groupcost::{CostKind, GroupCostSpec};
use crate::models::Arch;

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Blobs {
        n: usize,
        d: usize,
        classes: usize,
        separation: f64,
    },
    Planted(PlantedTaskSpec),
    Csv {
        path: PathBuf,
        one_hot: bool,
    },
}

/// A length given either absolutely or as a multiple of the training-set
/// mean feature norm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Length {
    Absolute(f64),
    Relative(f64),
}

impl Length {
    pub fn resolve(self, mean_norm: f64) -> f64 {
        match self {
            Length::Absolute(v) => v,
            Length::Relative(s) => s * mean_norm,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataConfig {
    pub source: DataSource,
    pub seed: u64,
    /// Test share for blobs and CSV data.
    pub test_fraction: f64,
    pub plant: Option<(ShiftKind, Length, SplitTarget)>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TrainMethod {
    Gsat,
    Erm,
    Pgd,
    Fgsm,
}

impl FromStr for TrainMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gsat" => Ok(TrainMethod::Gsat),
            "erm" => Ok(TrainMethod::Erm),
            "pgd" => Ok(TrainMethod::Pgd),
            "fgsm" => Ok(TrainMethod::Fgsm),
            other => Err(Error::Config(format!("unknown train.method `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackSpec {
    pub kind: AttackKind,
    pub steps: usize,
    pub step_norm: StepRule,
    pub random_start: bool,
    pub step: Length,
    pub budget: Length,
    /// Structure parameters to sweep; empty means just `kind` as given.
    pub ladder: Vec<usize>,
}

impl AttackSpec {
    pub fn resolve(&self, kind: AttackKind, mean_norm: f64, seed: u64) -> AttackConfig {
        AttackConfig {
            kind,
            step_rule: self.step_norm,
            random_start: self.random_start,
            steps: if kind == AttackKind::Fgsm {
                1
            } else {
                self.steps
            },
            step_size: self.step.resolve(mean_norm),
            max_norm: self.budget.resolve(mean_norm),
            seed,
        }
    }

    /// Every attack kind this spec expands to.
    pub fn kinds(&self) -> Vec<AttackKind> {
        if self.ladder.is_empty() {
            vec![self.kind]
        } else {
            self.ladder
                .iter()
                .map(|&p| self.kind.with_structure_param(p))
                .collect()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SelectMethod {
    Admm,
    Attack,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub out: PathBuf,
    pub data: DataConfig,
    pub model: ModelShape,
    pub cost_kind: CostKind,
    pub alpha: f64,
    /// `Relative(s)` means `lambda = s * E|x|`.
    pub lambda: Length,
    pub solver: SolverConfig,
    /// `solver.inner = scaled`: derive `rho` and `eta1` from the cost via
    /// [`SolverConfig::scaled_inner`] once lambda is known.
    pub inner_scaled: bool,
    pub method: TrainMethod,
    pub train_attack: AttackSpec,
    pub attacks: Vec<AttackSpec>,
    pub model_path: Option<PathBuf>,
    pub model_tag: Option<String>,
    /// Rows per attacked group at evaluation; 0 attacks the whole test set at once.
    pub eval_group: usize,
    pub select_k: usize,
    pub select_r: usize,
    pub select_repetitions: usize,
    pub select_method: SelectMethod,
    pub prox_threshold_scale: f64,
}

struct Entries {
    map: BTreeMap<String, (String, usize)>,
    used: RefCell<BTreeSet<String>>,
}

impl Entries {
    fn parse(text: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: n + 1,
                msg: format!("expected `key = value`, got `{line}`"),
            })?;
            let k = k.trim().to_string();
            if k.is_empty() {
                return Err(Error::Parse {
                    line: n + 1,
                    msg: "empty key".into(),
                });
            }
            if map
                .insert(k.clone(), (v.trim().to_string(), n + 1))
                .is_some()
            {
                return Err(Error::Parse {
                    line: n + 1,
                    msg: format!("duplicate key `{k}`"),
                });
            }
        }
        Ok(Self {
            map,
            used: RefCell::new(BTreeSet::new()),
        })
    }

    fn raw(&self, key: &str) -> Option<(&str, usize)> {
        self.used.borrow_mut().insert(key.to_string());
        self.map.get(key).map(|(v, l)| (v.as_str(), *l))
    }

    fn opt<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.raw(key) {
            None => Ok(None),
            Some((v, line)) => v.parse().map(Some).map_err(|_| Error::Parse {
                line,
                msg: format!("bad value `{v}` for `{key}`"),
            }),
        }
    }

    fn get<T: FromStr>(&self, key: &str, default: T) -> Result<T> {
        Ok(self.opt(key)?.unwrap_or(default))
    }

    fn list(&self, key: &str) -> Result<Vec<usize>> {
        match self.raw(key) {
            None => Ok(Vec::new()),
            Some((v, line)) => v
                .split(',')
                .map(|s| {
                    s.trim().parse().map_err(|_| Error::Parse {
                        line,
                        msg: format!("bad list entry `{s}` in `{key}`"),
                    })
                })
                .collect(),
        }
    }

    fn length(&self, rule_key: &str, value_key: &str, default: Length) -> Result<Length> {
        let rule: Option<String> = self.opt(rule_key)?;
        let value: Option<f64> = self.opt(value_key)?;
        let relative = match rule.as_deref() {
            None => matches!(default, Length::Relative(_)),
            Some("relative") => true,
            Some("absolute") => false,
            Some(other) => {
                return Err(Error::Config(format!(
                    "`{rule_key}` must be absolute or relative, got `{other}`"
                )));
            }
        };
        match (value, relative, default) {
            (Some(v), true, _) => Ok(Length::Relative(v)),
            (Some(v), false, _) => Ok(Length::Absolute(v)),
            (None, true, Length::Relative(_)) | (None, false, Length::Absolute(_)) => Ok(default),
            (None, ..) => Err(Error::Config(format!("`{value_key}` is required"))),
        }
    }

    fn finish(&self) -> Result<()> {
        let used = self.used.borrow();
        if let Some((k, (_, line))) = self.map.iter().find(|(k, _)| !used.contains(*k)) {
            return Err(Error::Parse {
                line: *line,
                msg: format!("unknown key `{k}`"),
            });
        }
        Ok(())
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text)?;
        // relative paths are taken from the config file's directory
        let base = path.parent().unwrap_or(Path::new("."));
        if let DataSource::Csv { path: p, .. } = &mut cfg.data.source {
            if p.is_relative() {
                *p = base.join(&*p);
            }
            if !p.exists() {
                return Err(Error::Config(format!(
                    "data file {} does not exist",
                    p.display()
                )));
            }
        }
        if let Some(p) = &mut cfg.model_path {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let e = Entries::parse(text)?;
        let seed: u64 = e.get("seed", 0)?;
        let out: PathBuf = e.get("out", PathBuf::from("out"))?;

        let source = match e.get("data.source", "blobs".to_string())?.as_str() {
            "blobs" => DataSource::Blobs {
                n: e.get("data.n", 400)?,
                d: e.get("data.d", 10)?,
                classes: e.get("data.classes", 2)?,
                separation: e.get("data.separation", 4.0)?,
            },
            "planted" => DataSource::Planted(PlantedTaskSpec {
                n_train: e.get("data.n", 400)?,
                n_test: e.get("data.n_test", 400)?,
                d: e.get("data.d", 10)?,
                classes: e.get("data.classes", 2)?,
                structure: e.get("data.planted.structure", 3)?,
                low_rank: e.get("data.planted.low_rank", false)?,
                strong: e.get("data.planted.strong", 2.0)?,
                weak: e.get("data.planted.weak", 1.0)?,
                seed: 0,
            }),
            "csv" => DataSource::Csv {
                path: e
                    .opt("data.path")?
                    .ok_or_else(|| Error::Config("data.source = csv needs data.path".into()))?,
                one_hot: e.get("data.one_hot", false)?,
            },
            other => return Err(Error::Config(format!("unknown data.source `{other}`"))),
        };
        let data_seed = e.get("data.seed", seed)?;
        let plant = match e.opt::<String>("data.plant.kind")? {
            None => None,
            Some(kind) => {
                let magnitude = e.length(
                    "data.plant.magnitude_rule",
                    "data.plant.magnitude",
                    Length::Relative(0.5),
                )?;
                let shift = match kind.as_str() {
                    "universal" => ShiftKind::Universal { magnitude: 1.0 },
                    "group-sparse" => ShiftKind::GroupSparse {
                        k: e.get("data.plant.k", 3)?,
                        magnitude: 1.0,
                    },
                    "low-rank" => ShiftKind::LowRank {
                        r: e.get("data.plant.r", 1)?,
                        magnitude: 1.0,
                    },
                    other => {
                        return Err(Error::Config(format!("unknown data.plant.kind `{other}`")))
                    }
                };
                Some((
                    shift,
                    magnitude,
                    e.get("data.plant.split", SplitTarget::Test)?,
                ))
            }
        };
        let data = DataConfig {
            source: match source {
                DataSource::Planted(s) => DataSource::Planted(PlantedTaskSpec {
                    seed: data_seed,
                    ..s
                }),
                other => other,
            },
            seed: data_seed,
            test_fraction: e.get("data.test_fraction", 0.5)?,
            plant,
        };

        let model = ModelShape {
            arch: e.get("model.arch", Arch::MlpElu)?,
            hidden: e.get("model.hidden", 16)?,
        };
        let cost_kind: CostKind = e.get("cost.kind", CostKind::GroupNorm)?;
        let alpha: f64 = e.get("cost.alpha", 0.5)?;
        let lambda = match e.get("cost.lambda_rule", "mean-norm".to_string())?.as_str() {
            "mean-norm" => Length::Relative(e.get("cost.lambda_scale", 0.25)?),
            "absolute" => Length::Absolute(e.opt("cost.lambda")?.ok_or_else(|| {
                Error::Config("cost.lambda_rule = absolute needs cost.lambda".into())
            })?),
            other => return Err(Error::Config(format!("unknown cost.lambda_rule `{other}`"))),
        };

        let d = SolverConfig::default();
        let solver = SolverConfig {
            rho: e.get("solver.rho", d.rho)?,
            eta0: e.get("solver.eta0", d.eta0)?,
            eta1: e.get("solver.eta1", d.eta1)?,
            eta_dual: e.get("solver.eta_dual", d.eta_dual)?,
            t0: e.get("solver.t0", d.t0)?,
            t1: e.get("solver.t1", d.t1)?,
            m: e.get("solver.m", d.m)?,
            seed,
            stationarity_every: e.get("solver.stationarity_every", d.stationarity_every)?,
            stationarity_groups: e.get("solver.stationarity_groups", d.stationarity_groups)?,
        };

        let inner_scaled = match e.get("solver.inner", "fixed".to_string())?.as_str() {
            "fixed" => false,
            "scaled" => true,
            other => {
                return Err(Error::Config(format!(
                    "solver.inner must be fixed or scaled, got `{other}`"
                )))
            }
        };
        if inner_scaled && (e.raw("solver.rho").is_some() || e.raw("solver.eta1").is_some()) {
            return Err(Error::Config(
                "solver.inner = scaled sets rho and eta1; remove them".into(),
            ));
        }

        let method = e.get("train.method", TrainMethod::Gsat)?;
        let train_attack = parse_attack(
            &e,
            "train.attack",
            AttackKind::Pgd,
            20,
            Length::Relative(0.05),
        )?;
        let mut attacks = Vec::new();
        for n in 0.. {
            let prefix = format!("attack.{n}");
            if !e.map.keys().any(|k| k.starts_with(&format!("{prefix}."))) {
                break;
            }
            attacks.push(parse_attack(
                &e,
                &prefix,
                AttackKind::Universal,
                100,
                Length::Relative(0.001),
            )?);
        }

        let cfg = Self {
            seed,
            out,
            data,
            model,
            cost_kind,
            alpha,
            lambda,
            solver,
            inner_scaled,
            method,
            train_attack,
            attacks,
            model_path: e.opt("eval.model")?,
            model_tag: e.opt("eval.tag")?,
            eval_group: e.get("eval.group", 0)?,
            select_k: e.get("select.k", 3)?,
            select_r: e.get("select.r", 1)?,
            select_repetitions: e.get("select.repetitions", 50)?,
            select_method: match e.get("select.method", "admm".to_string())?.as_str() {
                "admm" => SelectMethod::Admm,
                "attack" => SelectMethod::Attack,
                other => return Err(Error::Config(format!("unknown select.method `{other}`"))),
            },
            prox_threshold_scale: e.get("verify.prox_threshold_scale", 1.0)?,
        };
        e.finish()?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Re-checks every numeric invariant before any work starts.
    pub fn validate(&self) -> Result<()> {
        self.solver.validate()?;
        if self.method == TrainMethod::Gsat {
            GroupCostSpec::new(self.cost_kind, self.alpha, 1.0)?.check_strongly_concave()?;
        } else if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Config(format!(
                "alpha must lie in [0, 1], got {}",
                self.alpha
            )));
        }
        match self.lambda {
            Length::Absolute(v) | Length::Relative(v) if !(v > 0.0 && v.is_finite()) => {
                return Err(Error::Config(format!("lambda must be positive, got {v}")));
            }
            _ => {}
        }
        if self.model.arch == Arch::MlpElu && self.model.hidden == 0 {
            return Err(Error::Config(
                "model.hidden must be >= 1 for the MLP".into(),
            ));
        }
        if !(self.data.test_fraction > 0.0 && self.data.test_fraction < 1.0) {
            return Err(Error::Config(
                "data.test_fraction must lie in (0, 1)".into(),
            ));
        }
        for a in self.attacks.iter().chain([&self.train_attack]) {
            if a.steps == 0 {
                return Err(Error::Config("attack steps must be >= 1".into()));
            }
            for (what, l) in [("step", a.step), ("budget", a.budget)] {
                let v = match l {
                    Length::Absolute(v) | Length::Relative(v) => v,
                };
                if !(v > 0.0 && v.is_finite()) {
                    return Err(Error::Config(format!(
                        "attack {what} must be positive, got {v}"
                    )));
                }
            }
        }
        if let Some((_, Length::Absolute(v) | Length::Relative(v), _)) = &self.data.plant {
            if v.is_nan() || *v < 0.0 {
                return Err(Error::Config(format!(
                    "plant magnitude must be >= 0, got {v}"
                )));
            }
        }
        if self.prox_threshold_scale < 0.0 {
            return Err(Error::Config(
                "verify.prox_threshold_scale must be >= 0".into(),
            ));
        }
        Ok(())
    }

    pub fn with_overrides(mut self, seed: Option<u64>, out: Option<PathBuf>) -> Self {
        if let Some(s) = seed {
            if self.data.seed == self.seed {
                self.data.seed = s;
                if let DataSource::Planted(p) = &mut self.data.source {
                    p.seed = s;
                }
            }
            self.seed = s;
            self.solver.seed = s;
        }
        if let Some(o) = out {
            self.out = o;
        }
        self
    }

    /// Train and test splits, with the planted shift applied if configured.
    pub fn load_data(&self) -> Result<(Dataset, Dataset)> {
        let (train, test) = match &self.data.source {
            DataSource::Blobs {
                n,
                d,
                classes,
                separation,
            } => {
                let n_total = (*n as f64 / (1.0 - self.data.test_fraction)).round() as usize;
                let all = data::gen_blobs(n_total, *d, *classes, *separation, self.data.seed)?;
                all.train_test_split(1.0 - self.data.test_fraction, self.data.seed)?
            }
            DataSource::Planted(spec) => {
                let t = data::planted_task(spec)?;
                (t.train, t.test)
            }
            DataSource::Csv { path, one_hot } => {
                let all = data::load_csv_with(path, CsvOptions { one_hot: *one_hot })?;
                all.train_test_split(1.0 - self.data.test_fraction, self.data.seed)?
            }
        };
        match &self.data.plant {
            None => Ok((train, test)),
            Some((shift, magnitude, split)) => {
                let g = magnitude.resolve(train.mean_feature_norm());
                let shift = match *shift {
                    ShiftKind::Universal { .. } => ShiftKind::Universal { magnitude: g },
                    ShiftKind::GroupSparse { k, .. } => ShiftKind::GroupSparse { k, magnitude: g },
                    ShiftKind::LowRank { r, .. } => ShiftKind::LowRank { r, magnitude: g },
                };
                // same seed on both splits, so both see the same shift direction
                let spec = PlantSpec {
                    shift,
                    split: *split,
                    seed: self.data.seed ^ 0x5eed,
                };
                Ok((
                    data::plant_shift(&train, &spec)?,
                    data::plant_shift(&test, &spec)?,
                ))
            }
        }
    }

    pub fn cost_spec(&self, train: &Dataset) -> Result<GroupCostSpec> {
        GroupCostSpec::new(
            self.cost_kind,
            self.alpha,
            self.lambda.resolve(train.mean_feature_norm()),
        )
    }

    /// The solver settings for `spec`, scaled if `solver.inner = scaled`.
    pub fn solver_for(&self, spec: &GroupCostSpec) -> SolverConfig {
        if self.inner_scaled {
            self.solver.scaled_inner(spec)
        } else {
            self.solver
        }
    }

    pub fn model_file(&self) -> PathBuf {
        self.model_path
            .clone()
            .unwrap_or_else(|| self.out.join("model.txt"))
    }
}

fn parse_attack(
    e: &Entries,
    prefix: &str,
    default_kind: AttackKind,
    default_steps: usize,
    default_step: Length,
) -> Result<AttackSpec> {
    let key = |s: &str| format!("{prefix}.{s}");
    let name: String = e.get(&key("kind"), default_kind.tag().to_string())?;
    let param = match name.as_str() {
        "group-sparse" => e.opt::<usize>(&key("k"))?,
        "low-rank" => e.opt::<usize>(&key("r"))?,
        _ => None,
    };
    let ladder = e.list(&key("ladder"))?;
    let full = match param.or(ladder.first().copied()) {
        Some(p) => format!("{name}:{p}"),
        None => name.clone(),
    };
    let kind: AttackKind = full.parse()?;
    if !ladder.is_empty() && kind.structure_param().is_none() {
        return Err(Error::Config(format!(
            "{prefix}.ladder only applies to group-sparse and low-rank attacks"
        )));
    }
    Ok(AttackSpec {
        kind,
        steps: e.get(&key("steps"), default_steps)?,
        step_norm: e.get(&key("step_norm"), StepRule::PerRow)?,
        random_start: e.get(&key("random_start"), true)?,
        step: e.length(&key("step_rule"), &key("step"), default_step)?,
        budget: e.length(&key("budget_rule"), &key("budget"), Length::Relative(0.05))?,
        ladder,
    })
}
