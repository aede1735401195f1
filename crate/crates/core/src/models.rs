//! Differentiable classifiers with softmax cross-entropy loss and exact
//! gradients with respect to both the weights and the inputs.
//!
//! Two architectures are supported: a linear softmax model and a one hidden
//! layer network with ELU activations. Both losses are continuously
//! differentiable in the inputs, which the inner ascent relies on.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, RngExt};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Arch {
    LinearSoftmax,
    MlpElu,
}

impl Arch {
    pub fn tag(self) -> &'static str {
        match self {
            Arch::LinearSoftmax => "linear-softmax",
            Arch::MlpElu => "mlp-elu",
        }
    }
}

impl FromStr for Arch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear-softmax" | "linear" => Ok(Arch::LinearSoftmax),
            "mlp-elu" | "mlp" => Ok(Arch::MlpElu),
            other => Err(Error::Config(format!("unknown architecture `{other}`"))),
        }
    }
}

/// Dense layer `z = x W + b` with `W` stored `fan_in x fan_out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl Layer {
    fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self {
            weight: Matrix::zeros(fan_in, fan_out),
            bias: vec![0.0; fan_out],
        }
    }

    fn apply(&self, x: &Matrix) -> Result<Matrix> {
        let mut z = x.matmul(&self.weight)?;
        for i in 0..z.rows() {
            for (v, b) in z.row_mut(i).iter_mut().zip(&self.bias) {
                *v += b;
            }
        }
        Ok(z)
    }
}

/// Weights of `f_w`. Gradients with respect to the weights use the same type.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    arch: Arch,
    input_dim: usize,
    hidden: usize,
    classes: usize,
    layers: Vec<Layer>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledBatch {
    pub x: Matrix,
    pub y: Vec<usize>,
}

impl LabeledBatch {
    pub fn new(x: Matrix, y: Vec<usize>) -> Result<Self> {
        if x.rows() != y.len() {
            return Err(Error::Shape(format!(
                "{} feature rows but {} labels",
                x.rows(),
                y.len()
            )));
        }
        Ok(Self { x, y })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    /// Same labels, features shifted by `delta`.
    pub fn perturbed(&self, delta: &Matrix) -> Result<Self> {
        Ok(Self {
            x: self.x.add(delta)?,
            y: self.y.clone(),
        })
    }
}

/// Mean cross-entropy over a batch with its gradients.
#[derive(Debug, Clone)]
pub struct LossGrads {
    pub loss: f64,
    pub grad_w: ModelParams,
    /// Gradient of the *mean* loss; row `i` equals `(1/m) d loss_i / d x_i`.
    pub grad_x: Matrix,
}

#[inline]
pub fn elu(z: f64) -> f64 {
    if z >= 0.0 {
        z
    } else {
        z.exp_m1()
    }
}

#[inline]
pub fn elu_grad(z: f64) -> f64 {
    if z >= 0.0 {
        1.0
    } else {
        z.exp()
    }
}

/// Per-sample loss values and input gradients; the interface the inner
/// maximizer and the attacks need from a model.
pub trait SampleLoss {
    fn input_dim(&self) -> usize;

    /// Upper bound on `|d l_i / d x_i|_2` over all inputs and labels.
    fn gradient_bound(&self) -> f64;

    /// Returns `(l_i, d l_i / d x_i)` for every row.
    fn sample_losses(&self, x: &Matrix, y: &[usize]) -> Result<(Vec<f64>, Matrix)>;

    fn mean_loss(&self, x: &Matrix, y: &[usize]) -> Result<f64> {
        let (l, _) = self.sample_losses(x, y)?;
        Ok(l.iter().sum::<f64>() / l.len() as f64)
    }
}

struct Backprop {
    losses: Vec<f64>,
    /// Per-sample `d l_i / d x_i`.
    grad_x: Matrix,
    /// Gradient of the summed loss.
    grad_w: Option<ModelParams>,
}

impl ModelParams {
    /// All weights zero. `hidden` is ignored for the linear model.
    pub fn zeros(arch: Arch, input_dim: usize, hidden: usize, classes: usize) -> Self {
        let hidden = match arch {
            Arch::LinearSoftmax => 0,
            Arch::MlpElu => hidden,
        };
        let layers = match arch {
            Arch::LinearSoftmax => vec![Layer::zeros(input_dim, classes)],
            Arch::MlpElu => vec![
                Layer::zeros(input_dim, hidden),
                Layer::zeros(hidden, classes),
            ],
        };
        Self {
            arch,
            input_dim,
            hidden,
            classes,
            layers,
        }
    }

    /// Weights uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`, biases zero.
    pub fn init<R: Rng + ?Sized>(
        arch: Arch,
        input_dim: usize,
        hidden: usize,
        classes: usize,
        rng: &mut R,
    ) -> Self {
        let mut p = Self::zeros(arch, input_dim, hidden, classes);
        for layer in &mut p.layers {
            let bound = 1.0 / (layer.weight.rows() as f64).sqrt();
            for w in layer.weight.as_mut_slice() {
                *w = rng.random_range(-bound..=bound);
            }
        }
        p
    }

    pub fn arch(&self) -> Arch {
        self.arch
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.as_slice().len() + l.bias.len())
            .sum()
    }

    /// Weights in the fixed serialization order: per layer, the weight
    /// matrix row-major (`fan_in x fan_out`) followed by the bias.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            out.extend_from_slice(l.weight.as_slice());
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::Shape(format!(
                "{} values for {} parameters",
                flat.len(),
                self.num_params()
            )));
        }
        let mut pos = 0;
        for l in &mut self.layers {
            let w = l.weight.as_mut_slice();
            w.copy_from_slice(&flat[pos..pos + w.len()]);
            pos += w.len();
            let nb = l.bias.len();
            l.bias.copy_from_slice(&flat[pos..pos + nb]);
            pos += nb;
        }
        Ok(())
    }

    pub fn same_shape(&self, other: &ModelParams) -> bool {
        self.arch == other.arch
            && self.input_dim == other.input_dim
            && self.hidden == other.hidden
            && self.classes == other.classes
    }

    /// `self += s * other`
    pub fn axpy(&mut self, s: f64, other: &ModelParams) -> Result<()> {
        if !self.same_shape(other) {
            return Err(Error::Shape("parameter shapes differ".into()));
        }
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weight.axpy(s, &b.weight)?;
            a.bias
                .iter_mut()
                .zip(&b.bias)
                .for_each(|(x, y)| *x += s * y);
        }
        Ok(())
    }

    pub fn scale(&mut self, s: f64) {
        for l in &mut self.layers {
            l.weight.as_mut_slice().iter_mut().for_each(|w| *w *= s);
            l.bias.iter_mut().for_each(|b| *b *= s);
        }
    }

    pub fn norm(&self) -> f64 {
        self.to_flat().iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.is_finite() && l.bias.iter().all(|b| b.is_finite()))
    }

    /// Upper bound on `|d l / d x|` over all inputs and labels.
    pub fn input_gradient_bound(&self) -> f64 {
        let prod: f64 = self
            .layers
            .iter()
            .map(|l| l.weight.frobenius_norm())
            .product();
        std::f64::consts::SQRT_2 * prod
    }

    fn check_input(&self, x: &Matrix) -> Result<()> {
        if x.cols() != self.input_dim {
            return Err(Error::Shape(format!(
                "input has {} features, model expects {}",
                x.cols(),
                self.input_dim
            )));
        }
        Ok(())
    }

    fn check_labels(&self, x: &Matrix, y: &[usize]) -> Result<()> {
        if x.rows() != y.len() {
            return Err(Error::Shape(format!(
                "{} rows but {} labels",
                x.rows(),
                y.len()
            )));
        }
        if let Some(&bad) = y.iter().find(|&&c| c >= self.classes) {
            return Err(Error::Shape(format!(
                "label {bad} out of range for {} classes",
                self.classes
            )));
        }
        Ok(())
    }

    /// Logits, one row per sample.
    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        self.check_input(x)?;
        match self.arch {
            Arch::LinearSoftmax => self.layers[0].apply(x),
            Arch::MlpElu => {
                let mut h = self.layers[0].apply(x)?;
                h.as_mut_slice().iter_mut().for_each(|z| *z = elu(*z));
                self.layers[1].apply(&h)
            }
        }
    }

    /// Predicted class per row; ties go to the smallest class index.
    pub fn predict(&self, x: &Matrix) -> Result<Vec<usize>> {
        let logits = self.forward(x)?;
        Ok((0..logits.rows()).map(|i| argmax(logits.row(i))).collect())
    }

    pub fn accuracy(&self, batch: &LabeledBatch) -> Result<f64> {
        self.check_labels(&batch.x, &batch.y)?;
        let pred = self.predict(&batch.x)?;
        let hits = pred.iter().zip(&batch.y).filter(|(p, y)| p == y).count();
        Ok(hits as f64 / batch.len() as f64)
    }

    pub fn loss_and_grads(&self, batch: &LabeledBatch) -> Result<LossGrads> {
        let bp = self.backprop(&batch.x, &batch.y, true)?;
        let m = batch.len() as f64;
        let mut grad_w = bp.grad_w.expect("weight gradient requested");
        grad_w.scale(1.0 / m);
        Ok(LossGrads {
            loss: bp.losses.iter().sum::<f64>() / m,
            grad_w,
            grad_x: bp.grad_x.scale(1.0 / m),
        })
    }

    fn backprop(&self, x: &Matrix, y: &[usize], want_w: bool) -> Result<Backprop> {
        self.check_input(x)?;
        self.check_labels(x, y)?;
        let m = x.rows();
        match self.arch {
            Arch::LinearSoftmax => {
                let logits = self.layers[0].apply(x)?;
                let (losses, dlogits) = softmax_xent(&logits, y);
                let grad_x = dlogits.matmul(&self.layers[0].weight.transpose())?;
                let grad_w = want_w.then(|| -> Result<ModelParams> {
                    let mut g = ModelParams::zeros(self.arch, self.input_dim, 0, self.classes);
                    g.layers[0].weight = x.transpose().matmul(&dlogits)?;
                    g.layers[0].bias = column_sums(&dlogits);
                    Ok(g)
                });
                Ok(Backprop {
                    losses,
                    grad_x,
                    grad_w: grad_w.transpose()?,
                })
            }
            Arch::MlpElu => {
                let pre = self.layers[0].apply(x)?;
                let mut act = pre.clone();
                act.as_mut_slice().iter_mut().for_each(|z| *z = elu(*z));
                let logits = self.layers[1].apply(&act)?;
                let (losses, dlogits) = softmax_xent(&logits, y);
                let mut dpre = dlogits.matmul(&self.layers[1].weight.transpose())?;
                for (g, z) in dpre.as_mut_slice().iter_mut().zip(pre.as_slice()) {
                    *g *= elu_grad(*z);
                }
                let grad_x = dpre.matmul(&self.layers[0].weight.transpose())?;
                let grad_w = want_w.then(|| -> Result<ModelParams> {
                    let mut g =
                        ModelParams::zeros(self.arch, self.input_dim, self.hidden, self.classes);
                    g.layers[0].weight = x.transpose().matmul(&dpre)?;
                    g.layers[0].bias = column_sums(&dpre);
                    g.layers[1].weight = act.transpose().matmul(&dlogits)?;
                    g.layers[1].bias = column_sums(&dlogits);
                    Ok(g)
                });
                debug_assert_eq!(grad_x.rows(), m);
                Ok(Backprop {
                    losses,
                    grad_x,
                    grad_w: grad_w.transpose()?,
                })
            }
        }
    }

    /// Plain-text serialization: a header line `arch d H K` followed by the
    /// weights in [`ModelParams::to_flat`] order, one matrix row per line.
    pub fn to_text(&self) -> String {
        let mut s = format!(
            "{} {} {} {}\n",
            self.arch.tag(),
            self.input_dim,
            self.hidden,
            self.classes
        );
        for l in &self.layers {
            for i in 0..l.weight.rows() {
                let row: Vec<String> = l.weight.row(i).iter().map(|v| v.to_string()).collect();
                let _ = writeln!(s, "{}", row.join(" "));
            }
            let b: Vec<String> = l.bias.iter().map(|v| v.to_string()).collect();
            let _ = writeln!(s, "{}", b.join(" "));
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().ok_or(Error::Parse {
            line: 1,
            msg: "empty model file".into(),
        })?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 4 {
            return Err(Error::Parse {
                line: 1,
                msg: format!("expected `arch d H K`, got `{header}`"),
            });
        }
        let arch: Arch = fields[0].parse().map_err(|_| Error::Parse {
            line: 1,
            msg: format!("unknown architecture `{}`", fields[0]),
        })?;
        let dims: Vec<usize> = fields[1..]
            .iter()
            .map(|f| {
                f.parse().map_err(|_| Error::Parse {
                    line: 1,
                    msg: format!("bad dimension `{f}`"),
                })
            })
            .collect::<Result<_>>()?;
        let (d, h, k) = (dims[0], dims[1], dims[2]);
        if d == 0 || k == 0 || (arch == Arch::MlpElu && h == 0) {
            return Err(Error::Parse {
                line: 1,
                msg: "dimensions must be positive".into(),
            });
        }
        let mut params = ModelParams::zeros(arch, d, h, k);
        let mut values = Vec::with_capacity(params.num_params());
        for (n, line) in lines.enumerate() {
            for tok in line.split_whitespace() {
                let v: f64 = tok.parse().map_err(|_| Error::Parse {
                    line: n + 2,
                    msg: format!("bad number `{tok}`"),
                })?;
                if !v.is_finite() {
                    return Err(Error::Parse {
                        line: n + 2,
                        msg: "non-finite weight".into(),
                    });
                }
                values.push(v);
            }
        }
        if values.len() != params.num_params() {
            return Err(Error::Parse {
                line: 0,
                msg: format!(
                    "expected {} weights, found {}",
                    params.num_params(),
                    values.len()
                ),
            });
        }
        params.set_flat(&values)?;
        Ok(params)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io::write_atomic(path, self.to_text().as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}

impl SampleLoss for ModelParams {
    fn input_dim(&self) -> usize {
        self.input_dim
    }

    fn gradient_bound(&self) -> f64 {
        self.input_gradient_bound()
    }

    fn sample_losses(&self, x: &Matrix, y: &[usize]) -> Result<(Vec<f64>, Matrix)> {
        let bp = self.backprop(x, y, false)?;
        Ok((bp.losses, bp.grad_x))
    }
}

/// Largest relative error of the analytic weight and input gradients
/// against central differences of the mean loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    pub max_rel_w: f64,
    pub max_rel_x: f64,
}

impl GradCheck {
    pub fn max(&self) -> f64 {
        self.max_rel_w.max(self.max_rel_x)
    }
}

/// Relative error with denominators floored at `1e-3`.
fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-3)
}

pub fn gradient_check(params: &ModelParams, batch: &LabeledBatch, h: f64) -> Result<GradCheck> {
    let lg = params.loss_and_grads(batch)?;
    let loss_at = |p: &ModelParams, x: &Matrix| p.mean_loss(x, &batch.y);

    let mut max_rel_w: f64 = 0.0;
    let flat = params.to_flat();
    let analytic = lg.grad_w.to_flat();
    let mut probe = params.clone();
    for k in 0..flat.len() {
        let mut f = flat.clone();
        f[k] = flat[k] + h;
        probe.set_flat(&f)?;
        let up = loss_at(&probe, &batch.x)?;
        f[k] = flat[k] - h;
        probe.set_flat(&f)?;
        let down = loss_at(&probe, &batch.x)?;
        max_rel_w = max_rel_w.max(rel_err(analytic[k], (up - down) / (2.0 * h)));
    }

    let mut max_rel_x: f64 = 0.0;
    let mut x = batch.x.clone();
    for k in 0..x.as_slice().len() {
        let v = x.as_slice()[k];
        x.as_mut_slice()[k] = v + h;
        let up = loss_at(params, &x)?;
        x.as_mut_slice()[k] = v - h;
        let down = loss_at(params, &x)?;
        x.as_mut_slice()[k] = v;
        max_rel_x = max_rel_x.max(rel_err(lg.grad_x.as_slice()[k], (up - down) / (2.0 * h)));
    }
    Ok(GradCheck {
        max_rel_w,
        max_rel_x,
    })
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

fn column_sums(a: &Matrix) -> Vec<f64> {
    let mut s = vec![0.0; a.cols()];
    for i in 0..a.rows() {
        s.iter_mut().zip(a.row(i)).for_each(|(t, v)| *t += v);
    }
    s
}

/// Per-row cross-entropy and `softmax - onehot`, using a shifted log-sum-exp.
fn softmax_xent(logits: &Matrix, y: &[usize]) -> (Vec<f64>, Matrix) {
    let mut grad = Matrix::zeros(logits.rows(), logits.cols());
    let mut losses = Vec::with_capacity(logits.rows());
    for (i, &label) in y.iter().enumerate() {
        let z = logits.row(i);
        let zmax = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = z.iter().map(|v| (v - zmax).exp()).sum();
        let lse = zmax + sum.ln();
        losses.push(lse - z[label]);
        let g = grad.row_mut(i);
        for (gk, zk) in g.iter_mut().zip(z) {
            *gk = (zk - lse).exp();
        }
        g[label] -= 1.0;
    }
    (losses, grad)
}
