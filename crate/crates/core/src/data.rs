//! Labeled datasets, synthetic generators with planted group-structured
//! shifts, and CSV ingestion.
//!
//! All randomness comes from [`rng`], a PCG-64 (XSL-RR 128/64) generator
//! seeded through `SeedableRng::seed_from_u64`, so a seed pins every value.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, RngExt, SeedableRng};
use rand_distr::{Distribution, StandardNormal};
use rand_pcg::Pcg64;

use crate::error::{Error, Result};
use crate::linalg::{dot, norm2, Matrix};
use crate::models::LabeledBatch;

/// The crate-wide seeded generator.
pub fn rng(seed: u64) -> Pcg64 {
    Pcg64::seed_from_u64(seed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: Matrix,
    pub y: Vec<usize>,
    pub classes: usize,
    pub split: Split,
    pub note: String,
}

impl Dataset {
    pub fn new(
        x: Matrix,
        y: Vec<usize>,
        classes: usize,
        split: Split,
        note: impl Into<String>,
    ) -> Result<Self> {
        if x.rows() != y.len() {
            return Err(Error::Shape(format!(
                "{} rows but {} labels",
                x.rows(),
                y.len()
            )));
        }
        if y.len() < 2 {
            return Err(Error::Shape("a dataset needs at least two samples".into()));
        }
        if let Some(&bad) = y.iter().find(|&&c| c >= classes) {
            return Err(Error::Shape(format!(
                "label {bad} out of range for {classes} classes"
            )));
        }
        Ok(Self {
            x,
            y,
            classes,
            split,
            note: note.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.x.cols()
    }

    pub fn batch(&self) -> LabeledBatch {
        LabeledBatch {
            x: self.x.clone(),
            y: self.y.clone(),
        }
    }

    pub fn subset(&self, idx: &[usize]) -> LabeledBatch {
        LabeledBatch {
            x: self.x.select_rows(idx),
            y: idx.iter().map(|&i| self.y[i]).collect(),
        }
    }

    /// `m` indices drawn uniformly with replacement.
    pub fn sample_indices<R: Rng + ?Sized>(&self, m: usize, rng: &mut R) -> Vec<usize> {
        (0..m).map(|_| rng.random_range(0..self.len())).collect()
    }

    pub fn sample_group<R: Rng + ?Sized>(&self, m: usize, rng: &mut R) -> LabeledBatch {
        let idx = self.sample_indices(m, rng);
        self.subset(&idx)
    }

    /// Mean over rows of `|x|_2`.
    pub fn mean_feature_norm(&self) -> f64 {
        mean_feature_norm(&self.x)
    }

    /// Disjoint random split; the first part gets `round(n * train_fraction)` rows.
    pub fn train_test_split(&self, train_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
        let n = self.len();
        let n_train = (n as f64 * train_fraction).round() as usize;
        if n_train < 2 || n - n_train < 2 {
            return Err(Error::Config(format!(
                "split of {n} rows at {train_fraction} leaves a side with < 2 rows"
            )));
        }
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut rng(seed));
        let (a, b) = idx.split_at(n_train);
        let make = |ix: &[usize], split| {
            let s = self.subset(ix);
            Dataset::new(s.x, s.y, self.classes, split, self.note.clone())
        };
        Ok((make(a, Split::Train)?, make(b, Split::Test)?))
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.classes];
        self.y.iter().for_each(|&y| c[y] += 1);
        c
    }
}

pub fn mean_feature_norm(x: &Matrix) -> f64 {
    x.row_norms().iter().sum::<f64>() / x.rows() as f64
}

/// Gaussian class blobs with identity covariance. Labels cycle `0..K` so the
/// classes are balanced; class means sit `separation` apart pairwise.
pub fn gen_blobs(
    n: usize,
    d: usize,
    classes: usize,
    separation: f64,
    seed: u64,
) -> Result<Dataset> {
    if classes < 2 {
        return Err(Error::Config("blobs need at least two classes".into()));
    }
    if d == 0 || n < 2 {
        return Err(Error::Config("blobs need d >= 1 and n >= 2".into()));
    }
    let mut r = rng(seed);
    let radius = separation / std::f64::consts::SQRT_2;
    let means: Vec<Vec<f64>> = if d >= classes {
        (0..classes)
            .map(|k| {
                let mut m = vec![0.0; d];
                m[k] = radius;
                m
            })
            .collect()
    } else {
        (0..classes)
            .map(|_| random_unit(d, &mut r).iter().map(|v| v * radius).collect())
            .collect()
    };
    let mut x = Matrix::random_normal(n, d, &mut r);
    let y: Vec<usize> = (0..n).map(|i| i % classes).collect();
    for (i, &c) in y.iter().enumerate() {
        x.row_mut(i)
            .iter_mut()
            .zip(&means[c])
            .for_each(|(v, m)| *v += m);
    }
    Dataset::new(
        x,
        y,
        classes,
        Split::Train,
        format!("blobs n={n} d={d} K={classes} sep={separation} seed={seed}"),
    )
}

pub fn random_unit<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
        let n = norm2(&v);
        if n > 1e-12 {
            return v.iter().map(|x| x / n).collect();
        }
    }
}

/// `d x r` matrix with orthonormal columns from Gram-Schmidt on Gaussian draws.
pub fn random_orthonormal<R: Rng + ?Sized>(d: usize, r: usize, rng: &mut R) -> Matrix {
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(r);
    while cols.len() < r {
        let mut v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
        for _ in 0..2 {
            for c in &cols {
                let p = dot(&v, c);
                v.iter_mut().zip(c).for_each(|(a, b)| *a -= p * b);
            }
        }
        let n = norm2(&v);
        if n > 1e-8 {
            cols.push(v.iter().map(|x| x / n).collect());
        }
    }
    let mut q = Matrix::zeros(d, r);
    for (j, c) in cols.iter().enumerate() {
        q.set_column(j, c);
    }
    q
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ShiftKind {
    /// One shared vector of norm `magnitude` added to every row.
    Universal { magnitude: f64 },
    /// One shared vector supported on `k` random columns.
    GroupSparse { k: usize, magnitude: f64 },
    /// Rows drawn from a random rank-`r` subspace, each with norm `magnitude`.
    LowRank { r: usize, magnitude: f64 },
}

impl ShiftKind {
    fn magnitude(&self) -> f64 {
        match *self {
            ShiftKind::Universal { magnitude }
            | ShiftKind::GroupSparse { magnitude, .. }
            | ShiftKind::LowRank { magnitude, .. } => magnitude,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitTarget {
    Train,
    Test,
    Both,
}

impl SplitTarget {
    fn covers(self, s: Split) -> bool {
        matches!(
            (self, s),
            (SplitTarget::Both, _)
                | (SplitTarget::Train, Split::Train)
                | (SplitTarget::Test, Split::Test)
        )
    }
}

impl FromStr for SplitTarget {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(SplitTarget::Train),
            "test" => Ok(SplitTarget::Test),
            "both" => Ok(SplitTarget::Both),
            other => Err(Error::Config(format!("unknown split `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlantSpec {
    pub shift: ShiftKind,
    pub split: SplitTarget,
    pub seed: u64,
}

/// Adds a structured shift to the features of `ds` if `spec.split` covers
/// its split. Labels are untouched.
pub fn plant_shift(ds: &Dataset, spec: &PlantSpec) -> Result<Dataset> {
    let (n, d) = ds.x.shape();
    let mag = spec.shift.magnitude();
    if !(mag >= 0.0 && mag.is_finite()) {
        return Err(Error::Config(format!(
            "shift magnitude must be >= 0, got {mag}"
        )));
    }
    match spec.shift {
        ShiftKind::GroupSparse { k, .. } if k > d || k == 0 => {
            return Err(Error::Config(format!(
                "group-sparse shift needs 1 <= k <= {d}, got {k}"
            )));
        }
        ShiftKind::LowRank { r, .. } if r > n.min(d) || r == 0 => {
            return Err(Error::Config(format!(
                "low-rank shift needs 1 <= r <= {}, got {r}",
                n.min(d)
            )));
        }
        _ => {}
    }
    let mut out = ds.clone();
    if !spec.split.covers(ds.split) || mag == 0.0 {
        return Ok(out);
    }
    let mut r = rng(spec.seed);
    match spec.shift {
        ShiftKind::Universal { magnitude } => {
            let u: Vec<f64> = random_unit(d, &mut r)
                .iter()
                .map(|v| v * magnitude)
                .collect();
            add_to_rows(&mut out.x, |_| u.clone());
        }
        ShiftKind::GroupSparse { k, magnitude } => {
            let cols = planted_columns(d, k, &mut r);
            let dir = random_unit(k, &mut r);
            let mut u = vec![0.0; d];
            for (c, v) in cols.iter().zip(&dir) {
                u[*c] = v * magnitude;
            }
            add_to_rows(&mut out.x, |_| u.clone());
        }
        ShiftKind::LowRank { r: rank, magnitude } => {
            let q = random_orthonormal(d, rank, &mut r);
            let coeffs: Vec<Vec<f64>> = (0..n).map(|_| random_unit(rank, &mut r)).collect();
            add_to_rows(&mut out.x, |i| {
                (0..d)
                    .map(|a| magnitude * (0..rank).map(|b| q[(a, b)] * coeffs[i][b]).sum::<f64>())
                    .collect()
            });
        }
    }
    out.note = format!("{} + shift {:?}", ds.note, spec.shift);
    Ok(out)
}

/// `k` distinct column indices in increasing order.
pub fn planted_columns<R: Rng + ?Sized>(d: usize, k: usize, rng: &mut R) -> Vec<usize> {
    let mut all: Vec<usize> = (0..d).collect();
    all.shuffle(rng);
    let mut cols = all[..k].to_vec();
    cols.sort_unstable();
    cols
}

fn add_to_rows(x: &mut Matrix, shift: impl Fn(usize) -> Vec<f64>) {
    for i in 0..x.rows() {
        let s = shift(i);
        x.row_mut(i).iter_mut().zip(&s).for_each(|(a, b)| *a += b);
    }
}

/// Synthetic tasks whose label signal is carried by a planted structure.
///
/// Features are standard normal. Class `c` adds `mean_c`, which has a strong
/// component on the planted structure (`k` columns, or an `r`-dimensional
/// subspace) and a weak component spread over everything else. The weak
/// component makes it possible to classify without the planted directions,
/// at some loss of clean accuracy.
#[derive(Debug, Clone)]
pub struct PlantedTask {
    pub train: Dataset,
    pub test: Dataset,
    /// Planted columns (sparse task).
    pub columns: Vec<usize>,
    /// Orthonormal basis of the planted subspace, `d x r`.
    pub basis: Matrix,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlantedTaskSpec {
    pub n_train: usize,
    pub n_test: usize,
    pub d: usize,
    pub classes: usize,
    /// Number of planted columns, or rank of the planted subspace.
    pub structure: usize,
    pub low_rank: bool,
    /// Norm of the planted part of each class mean.
    pub strong: f64,
    /// Norm of the spread-out part of each class mean.
    pub weak: f64,
    pub seed: u64,
}

pub fn planted_task(spec: &PlantedTaskSpec) -> Result<PlantedTask> {
    let PlantedTaskSpec {
        n_train,
        n_test,
        d,
        classes,
        structure,
        low_rank,
        strong,
        weak,
        seed,
    } = *spec;
    if classes < 2 || structure == 0 || structure >= d {
        return Err(Error::Config(format!(
            "planted task needs K >= 2 and 1 <= structure < d (got K={classes}, structure={structure}, d={d})"
        )));
    }
    let mut r = rng(seed);
    let (columns, basis) = if low_rank {
        (Vec::new(), random_orthonormal(d, structure, &mut r))
    } else {
        let cols = planted_columns(d, structure, &mut r);
        let mut q = Matrix::zeros(d, structure);
        for (j, &c) in cols.iter().enumerate() {
            q[(c, j)] = 1.0;
        }
        (cols, q)
    };
    // Class means: a strong part inside span(basis), a weak part orthogonal to it.
    // With two classes the means are antipodal.
    let mut means = Vec::with_capacity(classes);
    for c in 0..classes {
        if classes == 2 && c == 1 {
            let m0: &Vec<f64> = &means[0];
            means.push(m0.iter().map(|v: &f64| -v).collect::<Vec<f64>>());
            continue;
        }
        let inside = random_unit(structure, &mut r);
        let mut strong_part = vec![0.0; d];
        for a in 0..d {
            strong_part[a] = (0..structure)
                .map(|b| basis[(a, b)] * inside[b])
                .sum::<f64>()
                * strong;
        }
        let mut w: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut r)).collect();
        for b in 0..structure {
            let col = basis.column(b);
            let p = dot(&w, &col);
            w.iter_mut().zip(&col).for_each(|(x, y)| *x -= p * y);
        }
        let wn = norm2(&w);
        let mean: Vec<f64> = strong_part
            .iter()
            .zip(&w)
            .map(|(s, x)| s + weak * x / wn)
            .collect();
        means.push(mean);
    }
    let mut make = |n: usize, split: Split| -> Result<Dataset> {
        let mut x = Matrix::random_normal(n, d, &mut r);
        let y: Vec<usize> = (0..n).map(|i| i % classes).collect();
        for (i, &c) in y.iter().enumerate() {
            x.row_mut(i)
                .iter_mut()
                .zip(&means[c])
                .for_each(|(v, m)| *v += m);
        }
        Dataset::new(
            x,
            y,
            classes,
            split,
            format!(
                "planted {} structure={structure} seed={seed}",
                if low_rank { "low-rank" } else { "group-sparse" }
            ),
        )
    };
    let train = make(n_train, Split::Train)?;
    let test = make(n_test, Split::Test)?;
    Ok(PlantedTask {
        train,
        test,
        columns,
        basis,
    })
}

#[derive(Debug, Clone, Copy, Default)]
pub struct CsvOptions {
    /// Expand every feature column into indicators of its distinct values.
    pub one_hot: bool,
}

/// Parses `f0,...,f{d-1},label` with a header row. Lines starting with `#`
/// (an optional metadata sidecar line) and blank lines are skipped.
pub fn parse_csv(text: &str, opts: CsvOptions) -> Result<Dataset> {
    let mut header: Option<Vec<String>> = None;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut labels = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let lineno = n + 1;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        match &header {
            None => {
                if fields.last() != Some(&"label") || fields.len() < 2 {
                    return Err(Error::Parse {
                        line: lineno,
                        msg: "header must end with a `label` column".into(),
                    });
                }
                header = Some(fields.iter().map(|s| s.to_string()).collect());
            }
            Some(h) => {
                if fields.len() != h.len() {
                    return Err(Error::Parse {
                        line: lineno,
                        msg: format!("{} fields, header has {}", fields.len(), h.len()),
                    });
                }
                let (feat, lab) = fields.split_at(fields.len() - 1);
                let row = feat
                    .iter()
                    .map(|f| match f.parse::<f64>() {
                        Ok(v) if v.is_finite() => Ok(v),
                        _ => Err(Error::Parse {
                            line: lineno,
                            msg: format!("bad feature `{f}`"),
                        }),
                    })
                    .collect::<Result<Vec<f64>>>()?;
                let label: usize = lab[0].parse().map_err(|_| Error::Parse {
                    line: lineno,
                    msg: format!("bad label `{}`", lab[0]),
                })?;
                rows.push(row);
                labels.push(label);
            }
        }
    }
    if header.is_none() {
        return Err(Error::Parse {
            line: 0,
            msg: "missing header".into(),
        });
    }
    if rows.len() < 2 {
        return Err(Error::Parse {
            line: 0,
            msg: "need at least two data rows".into(),
        });
    }
    if opts.one_hot {
        rows = one_hot(&rows);
    }
    let classes = labels.iter().max().map_or(0, |m| m + 1).max(2);
    let x = Matrix::from_rows(&rows)?;
    Dataset::new(x, labels, classes, Split::Train, "csv")
}

fn one_hot(rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let d = rows[0].len();
    let levels: Vec<Vec<f64>> = (0..d)
        .map(|j| {
            let mut v: Vec<f64> = rows.iter().map(|r| r[j]).collect();
            v.sort_by(f64::total_cmp);
            v.dedup();
            v
        })
        .collect();
    rows.iter()
        .map(|r| {
            let mut out = Vec::new();
            for (j, lv) in levels.iter().enumerate() {
                out.extend(lv.iter().map(|&l| if r[j] == l { 1.0 } else { 0.0 }));
            }
            out
        })
        .collect()
}

pub fn load_csv(path: &Path) -> Result<Dataset> {
    load_csv_with(path, CsvOptions::default())
}

pub fn load_csv_with(path: &Path, opts: CsvOptions) -> Result<Dataset> {
    parse_csv(&std::fs::read_to_string(path)?, opts)
}

pub fn to_csv(ds: &Dataset) -> String {
    let d = ds.dim();
    let mut s = String::new();
    let header: Vec<String> = (0..d)
        .map(|j| format!("f{j}"))
        .chain(["label".to_string()])
        .collect();
    let _ = writeln!(s, "{}", header.join(","));
    for i in 0..ds.len() {
        for v in ds.x.row(i) {
            let _ = write!(s, "{v},");
        }
        let _ = writeln!(s, "{}", ds.y[i]);
    }
    s
}

pub fn save_csv(ds: &Dataset, path: &Path) -> Result<()> {
    crate::io::write_atomic(path, to_csv(ds).as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blobs_are_deterministic_and_balanced() {
        let a = gen_blobs(50, 3, 2, 4.0, 1).unwrap();
        let b = gen_blobs(50, 3, 2, 4.0, 1).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.class_counts(), vec![25, 25]);
        let tiny = gen_blobs(2, 2, 2, 1.0, 3).unwrap();
        assert_eq!(tiny.y, vec![0, 1]);
        assert!(gen_blobs(10, 2, 1, 1.0, 0).is_err());
    }

    #[test]
    fn mean_norm_examples() {
        let x = Matrix::from_rows(&[[1.0, 0.0], [0.0, 3.0]]).unwrap();
        assert_eq!(mean_feature_norm(&x), 2.0);
        let unit = Matrix::from_rows(&[[0.6, 0.8], [1.0, 0.0], [0.0, -1.0]]).unwrap();
        assert!((mean_feature_norm(&unit) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn zero_magnitude_shift_is_identity() {
        let ds = gen_blobs(20, 4, 2, 3.0, 5).unwrap();
        for shift in [
            ShiftKind::Universal { magnitude: 0.0 },
            ShiftKind::GroupSparse {
                k: 2,
                magnitude: 0.0,
            },
            ShiftKind::LowRank {
                r: 2,
                magnitude: 0.0,
            },
        ] {
            let out = plant_shift(
                &ds,
                &PlantSpec {
                    shift,
                    split: SplitTarget::Both,
                    seed: 1,
                },
            )
            .unwrap();
            assert_eq!(out.x, ds.x);
        }
    }

    #[test]
    fn universal_shift_is_one_vector() {
        let ds = gen_blobs(10, 3, 2, 3.0, 5).unwrap();
        let out = plant_shift(
            &ds,
            &PlantSpec {
                shift: ShiftKind::Universal { magnitude: 2.5 },
                split: SplitTarget::Train,
                seed: 9,
            },
        )
        .unwrap();
        let diff = out.x.sub(&ds.x).unwrap();
        for i in 0..10 {
            for j in 0..3 {
                assert!((diff[(i, j)] - diff[(0, j)]).abs() < 1e-12);
            }
        }
        assert!((norm2(diff.row(0)) - 2.5).abs() < 1e-12);
        assert_eq!(out.y, ds.y);
    }

    #[test]
    fn shift_respects_split_and_bounds() {
        let ds = gen_blobs(10, 3, 2, 3.0, 5).unwrap();
        let spec = PlantSpec {
            shift: ShiftKind::Universal { magnitude: 1.0 },
            split: SplitTarget::Test,
            seed: 1,
        };
        assert_eq!(plant_shift(&ds, &spec).unwrap().x, ds.x);
        let bad = PlantSpec {
            shift: ShiftKind::GroupSparse {
                k: 4,
                magnitude: 1.0,
            },
            split: SplitTarget::Both,
            seed: 1,
        };
        assert!(plant_shift(&ds, &bad).is_err());
        let bad = PlantSpec {
            shift: ShiftKind::LowRank {
                r: 4,
                magnitude: 1.0,
            },
            split: SplitTarget::Both,
            seed: 1,
        };
        assert!(plant_shift(&ds, &bad).is_err());
    }

    #[test]
    fn group_sparse_shift_touches_k_columns() {
        let ds = gen_blobs(10, 6, 2, 3.0, 5).unwrap();
        let spec = PlantSpec {
            shift: ShiftKind::GroupSparse {
                k: 2,
                magnitude: 1.0,
            },
            split: SplitTarget::Both,
            seed: 4,
        };
        let diff = plant_shift(&ds, &spec).unwrap().x.sub(&ds.x).unwrap();
        let nz = diff.column_norms().iter().filter(|&&c| c > 0.0).count();
        assert_eq!(nz, 2);
    }

    #[test]
    fn csv_parsing() {
        let ds = parse_csv("f0,f1,label\n1.5,2,0\n-1,0.25,1\n", CsvOptions::default()).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.x.row(1), &[-1.0, 0.25]);
        assert_eq!(ds.y, vec![0, 1]);

        let err = parse_csv("f0,f1\n1,2\n3,4\n", CsvOptions::default()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
        let err = parse_csv("f0,label\n1,0\n2\n3,1\n", CsvOptions::default()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }));
        let err = parse_csv("f0,label\n1,0\n2,x\n", CsvOptions::default()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }));

        let ds = parse_csv(
            "# meta: anything\nf0,label\n1,0\n2,1\n",
            CsvOptions::default(),
        )
        .unwrap();
        assert_eq!(ds.len(), 2);
    }

    #[test]
    fn one_hot_expands_levels() {
        let ds = parse_csv(
            "f0,f1,label\n0,2,0\n1,2,1\n2,0,0\n",
            CsvOptions { one_hot: true },
        )
        .unwrap();
        assert_eq!(ds.dim(), 5);
        assert_eq!(ds.x.row(0), &[1.0, 0.0, 0.0, 0.0, 1.0]);
        assert_eq!(ds.x.row(2), &[0.0, 0.0, 1.0, 1.0, 0.0]);
    }

    #[test]
    fn split_is_disjoint() {
        let mut ds = gen_blobs(30, 2, 3, 2.0, 1).unwrap();
        // tag each row so membership can be traced
        for i in 0..30 {
            ds.x[(i, 0)] = i as f64;
        }
        let (a, b) = ds.train_test_split(0.7, 3).unwrap();
        assert_eq!(a.len() + b.len(), 30);
        let ta: Vec<f64> = a.x.column(0);
        for v in b.x.column(0) {
            assert!(!ta.contains(&v));
        }
    }
}
