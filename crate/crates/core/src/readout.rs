//! Linear decoding of latent variables from the representation units.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::SequenceBatch;
use crate::error::{Error, Result};
use crate::kernels::avg_pool;
use crate::model::Model;
use crate::tensor::Tensor;

/// Which representation units to read and when.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureSpec {
    /// Layer indices, ascending.
    pub layers: Vec<usize>,
    /// 1-based timestep whose `R_l^t` is read.
    pub t_star: usize,
}

impl FeatureSpec {
    pub fn all_layers(num_layers: usize, t_star: usize) -> Self {
        FeatureSpec {
            layers: (0..num_layers).collect(),
            t_star,
        }
    }

    pub fn validate(&self, num_layers: usize) -> Result<()> {
        if self.t_star == 0 {
            return Err(Error::invalid("feature_spec", "t_star is 1-based and must be at least 1"));
        }
        if self.layers.is_empty() {
            return Err(Error::invalid("feature_spec", "no layers selected"));
        }
        if self.layers.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("feature_spec", "layers must be strictly ascending"));
        }
        if let Some(&l) = self.layers.iter().find(|&&l| l >= num_layers) {
            return Err(Error::invalid("feature_spec", format!("layer {l} out of range for {num_layers} layers")));
        }
        Ok(())
    }

    /// Feature length for `channels` per layer and `h x w` input frames.
    pub fn dim(&self, channels: &[usize], h: usize, w: usize) -> usize {
        let top = *self.layers.last().expect("validated");
        let cells = (h >> top) * (w >> top);
        self.layers.iter().map(|&l| channels[l]).sum::<usize>() * cells
    }
}

/// Pools each selected `R_l` (batch size 1) to the coarsest selected grid and
/// concatenates the flattened `(c, h, w)` blocks in ascending layer order.
pub fn pooled_features(reps: &[Tensor<f32>], layers: &[usize]) -> Result<Vec<f64>> {
    let top = *layers
        .last()
        .ok_or_else(|| Error::invalid("extract_features", "no layers selected"))?;
    let mut out = Vec::new();
    for &l in layers {
        let pooled = avg_pool(&reps[l], 1 << (top - l))?;
        out.extend(pooled.data().iter().map(|&v| v as f64));
    }
    Ok(out)
}

/// Feature matrices for every `t = 1..=t_max` (entry `t - 1`), one row per sequence.
pub fn extract_feature_series(
    model: &Model<f32>,
    data: &SequenceBatch,
    layers: &[usize],
    t_max: usize,
) -> Result<Vec<DMatrix<f64>>> {
    FeatureSpec {
        layers: layers.to_vec(),
        t_star: t_max,
    }
    .validate(model.config().num_layers)?;
    if t_max > data.seq_len() {
        return Err(Error::invalid(
            "extract_features",
            format!("t* = {t_max} exceeds sequence length {}", data.seq_len()),
        ));
    }
    let per_seq: Vec<Vec<Vec<f64>>> = (0..data.len())
        .into_par_iter()
        .map(|i| {
            let frames = data.sequence(i);
            let out = model.run_sequence(&frames[..t_max])?;
            out.representations
                .iter()
                .map(|reps| pooled_features(reps, layers))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    let dim = per_seq[0][0].len();
    Ok((0..t_max)
        .map(|t| DMatrix::from_fn(per_seq.len(), dim, |r, c| per_seq[r][t][c]))
        .collect())
}

pub fn extract_features(model: &Model<f32>, data: &SequenceBatch, spec: &FeatureSpec) -> Result<DMatrix<f64>> {
    let mut series = extract_feature_series(model, data, &spec.layers, spec.t_star)?;
    Ok(series.pop().expect("t_star >= 1"))
}

/// `1e-4, 1e-3, ..., 1e4`.
pub fn lambda_grid() -> Vec<f64> {
    (-4..=4).map(|e| 10f64.powi(e)).collect()
}

/// Affine decoder acting on raw (unstandardized) features.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    /// `features x targets`.
    pub weights: DMatrix<f64>,
    pub intercept: DVector<f64>,
    pub lambda: f64,
}

/// How the ridge penalty is chosen from the grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    /// Fit on the leading rows, score on the trailing `fraction` of rows.
    Holdout { fraction: f64 },
    /// Closed-form leave-one-out residuals from the hat matrix.
    LeaveOneOut,
}

#[derive(Debug, Clone)]
pub struct RidgeFit {
    pub model: LinearModel,
    /// Validation MSE per grid point; `None` where the system was singular.
    pub scores: Vec<(f64, Option<f64>)>,
}

/// Solves `(XᵀX + λI) w = Xᵀy` exactly as written (no centering).
pub fn ridge_weights(x: &DMatrix<f64>, y: &DMatrix<f64>, lambda: f64) -> Result<DMatrix<f64>> {
    if x.nrows() != y.nrows() {
        return Err(Error::shape("ridge", format!("{} rows", x.nrows()), format!("{} rows", y.nrows())));
    }
    let spectral = Spectral::new(x, y);
    spectral
        .weights(x, lambda)
        .ok_or_else(|| Error::invalid("ridge", format!("singular system at lambda = {lambda}")))
}

/// Eigendecomposition of the Gram matrix, shared across grid points. Works in
/// the smaller of the primal (`XᵀX`) and dual (`XXᵀ`) spaces.
struct Spectral {
    dual: bool,
    vectors: DMatrix<f64>,
    values: DVector<f64>,
    /// `VᵀXᵀy` (primal) or `Uᵀy` (dual).
    proj: DMatrix<f64>,
    tol: f64,
}

impl Spectral {
    fn new(x: &DMatrix<f64>, y: &DMatrix<f64>) -> Self {
        let (n, p) = x.shape();
        let dual = p > n;
        let gram = if dual { x * x.transpose() } else { x.transpose() * x };
        let eig = gram.symmetric_eigen();
        let proj = if dual {
            eig.eigenvectors.transpose() * y
        } else {
            eig.eigenvectors.transpose() * (x.transpose() * y)
        };
        let max = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        Spectral {
            dual,
            vectors: eig.eigenvectors,
            values: eig.eigenvalues,
            proj,
            tol: max * n.max(p) as f64 * f64::EPSILON,
        }
    }

    fn shrink(&self, lambda: f64) -> Option<DVector<f64>> {
        let mut s = DVector::zeros(self.values.len());
        for (i, &d) in self.values.iter().enumerate() {
            let den = d.max(0.0) + lambda;
            if den <= self.tol {
                return None;
            }
            s[i] = 1.0 / den;
        }
        Some(s)
    }

    fn weights(&self, x: &DMatrix<f64>, lambda: f64) -> Option<DMatrix<f64>> {
        let s = self.shrink(lambda)?;
        let mut scaled = self.proj.clone();
        for (mut row, &si) in scaled.row_iter_mut().zip(s.iter()) {
            row *= si;
        }
        let coeffs = &self.vectors * scaled;
        Some(if self.dual { x.transpose() * coeffs } else { coeffs })
    }
}

/// Per-column mean and scale; constant columns keep scale 1.
struct Standardizer {
    mean: DVector<f64>,
    scale: DVector<f64>,
}

impl Standardizer {
    fn fit(x: &DMatrix<f64>) -> Self {
        let n = x.nrows() as f64;
        let mean = DVector::from_iterator(x.ncols(), x.column_iter().map(|c| c.sum() / n));
        let scale = DVector::from_iterator(
            x.ncols(),
            x.column_iter().zip(mean.iter()).map(|(c, &m)| {
                let var = c.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n;
                if var > 1e-24 {
                    var.sqrt()
                } else {
                    1.0
                }
            }),
        );
        Standardizer { mean, scale }
    }

    fn apply(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(x.nrows(), x.ncols(), |r, c| (x[(r, c)] - self.mean[c]) / self.scale[c])
    }

    /// Maps standardized-space weights and target means back to raw features.
    fn unfold(&self, w_std: &DMatrix<f64>, y_mean: &DVector<f64>, lambda: f64) -> LinearModel {
        let mut weights = w_std.clone();
        for (mut row, &s) in weights.row_iter_mut().zip(self.scale.iter()) {
            row /= s;
        }
        let intercept = y_mean - weights.transpose() * &self.mean;
        LinearModel {
            weights,
            intercept,
            lambda,
        }
    }
}

fn column_means(y: &DMatrix<f64>) -> DVector<f64> {
    let n = y.nrows() as f64;
    DVector::from_iterator(y.ncols(), y.column_iter().map(|c| c.sum() / n))
}

fn center(y: &DMatrix<f64>, mean: &DVector<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(y.nrows(), y.ncols(), |r, c| y[(r, c)] - mean[c])
}

fn rows(m: &DMatrix<f64>, range: std::ops::Range<usize>) -> DMatrix<f64> {
    m.rows(range.start, range.len()).into_owned()
}

fn mean_sq(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).iter().map(|v| v * v).sum::<f64>() / a.len() as f64
}

/// Fits a ridge model at one penalty on standardized, centered data.
fn fit_at(x: &DMatrix<f64>, y: &DMatrix<f64>, lambda: f64) -> Option<LinearModel> {
    let st = Standardizer::fit(x);
    let ym = column_means(y);
    let xs = st.apply(x);
    let sp = Spectral::new(&xs, &center(y, &ym));
    sp.weights(&xs, lambda).map(|w| st.unfold(&w, &ym, lambda))
}

/// Ridge regression with the penalty chosen from `lambdas` by validation MSE.
/// Ties go to the smallest penalty; singular grid points are skipped.
pub fn ridge_fit(x: &DMatrix<f64>, y: &DMatrix<f64>, lambdas: &[f64], selection: Selection) -> Result<RidgeFit> {
    let n = x.nrows();
    if n != y.nrows() {
        return Err(Error::shape("ridge_fit", format!("{n} target rows"), format!("{} rows", y.nrows())));
    }
    if n < 2 {
        return Err(Error::invalid("ridge_fit", "need at least 2 rows"));
    }
    if lambdas.is_empty() || lambdas.iter().any(|&l| !(l >= 0.0)) {
        return Err(Error::invalid("ridge_fit", "penalties must be a non-empty list of values >= 0"));
    }
    let mut grid = lambdas.to_vec();
    grid.sort_by(f64::total_cmp);

    let (scores, fit_rows) = match selection {
        Selection::Holdout { fraction } => {
            if !(fraction > 0.0 && fraction < 1.0) {
                return Err(Error::invalid("ridge_fit", "holdout fraction must lie in (0, 1)"));
            }
            let nv = ((n as f64 * fraction).round() as usize).clamp(1, n.saturating_sub(2).max(1));
            let nt = n - nv;
            if nt < 2 {
                return Err(Error::invalid("ridge_fit", "too few rows for a holdout split"));
            }
            let (xt, yt) = (rows(x, 0..nt), rows(y, 0..nt));
            let (xv, yv) = (rows(x, nt..n), rows(y, nt..n));
            let st = Standardizer::fit(&xt);
            let ym = column_means(&yt);
            let xs = st.apply(&xt);
            let sp = Spectral::new(&xs, &center(&yt, &ym));
            let scores: Vec<(f64, Option<f64>)> = grid
                .iter()
                .map(|&l| {
                    let score = sp.weights(&xs, l).map(|w| {
                        let m = st.unfold(&w, &ym, l);
                        mean_sq(&ridge_predict(&m, &xv).expect("dims match"), &yv)
                    });
                    (l, score)
                })
                .collect();
            (scores, 0..nt)
        }
        Selection::LeaveOneOut => (loo_scores(x, y, &grid), 0..n),
    };

    let mut best: Option<(f64, f64)> = None;
    for &(l, s) in &scores {
        match (s, best) {
            (Some(v), None) => best = Some((l, v)),
            (Some(v), Some((_, bv))) if v < bv => best = Some((l, v)),
            (None, _) => log::warn!("ridge: singular system at lambda = {l}, skipped"),
            _ => {}
        }
    }
    let (lambda, _) = best.ok_or_else(|| Error::invalid("ridge_fit", "every grid point was singular"))?;
    let model = fit_at(&rows(x, fit_rows.clone()), &rows(y, fit_rows), lambda)
        .ok_or_else(|| Error::invalid("ridge_fit", "selected penalty became singular"))?;
    Ok(RidgeFit { model, scores })
}

/// Hat-matrix leave-one-out MSE per penalty. Standardization uses all rows.
fn loo_scores(x: &DMatrix<f64>, y: &DMatrix<f64>, grid: &[f64]) -> Vec<(f64, Option<f64>)> {
    let n = x.nrows();
    let xs = Standardizer::fit(x).apply(x);
    let ym = column_means(y);
    let yc = center(y, &ym);
    let eig = (&xs * xs.transpose()).symmetric_eigen();
    let u = &eig.eigenvectors;
    let uty = u.transpose() * &yc;
    let max = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let tol = max * n.max(x.ncols()) as f64 * f64::EPSILON;
    grid.iter()
        .map(|&l| {
            // Hat matrix: 1/n (intercept) + U diag(d / (d + λ)) Uᵀ. Null directions
            // of the Gram matrix contribute nothing; at λ = 0 the normal equations
            // are singular whenever the centered rank falls short of the feature count.
            let rank = eig.eigenvalues.iter().filter(|&&d| d > tol).count();
            if l == 0.0 && rank < x.ncols() {
                return (l, None);
            }
            let shrink = DVector::from_iterator(
                n,
                eig.eigenvalues.iter().map(|&d| if d > tol { d / (d + l) } else { 0.0 }),
            );
            let mut scaled = uty.clone();
            for (mut row, &s) in scaled.row_iter_mut().zip(shrink.iter()) {
                row *= s;
            }
            let fitted = u * scaled;
            let mut total = 0.0;
            for i in 0..n {
                let h_ii = 1.0 / n as f64 + (0..n).map(|k| u[(i, k)] * u[(i, k)] * shrink[k]).sum::<f64>();
                let denom = 1.0 - h_ii;
                if denom <= 1e-10 {
                    return (l, None);
                }
                for c in 0..y.ncols() {
                    let r = (yc[(i, c)] - fitted[(i, c)]) / denom;
                    total += r * r;
                }
            }
            (l, Some(total / (n * y.ncols()) as f64))
        })
        .collect()
}

pub fn ridge_predict(model: &LinearModel, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if x.ncols() != model.weights.nrows() {
        return Err(Error::shape(
            "ridge_predict",
            format!("{} features", model.weights.nrows()),
            format!("{} features", x.ncols()),
        ));
    }
    let mut out = x * &model.weights;
    for mut row in out.row_iter_mut() {
        row += model.intercept.transpose();
    }
    Ok(out)
}

/// `1 - SS_res / SS_tot`; `None` when the targets have zero variance.
pub fn r2_score(pred: &[f64], y: &[f64]) -> Option<f64> {
    assert_eq!(pred.len(), y.len(), "prediction and target lengths");
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let ss_tot: f64 = y.iter().map(|v| (v - mean) * (v - mean)).sum();
    if ss_tot == 0.0 {
        return None;
    }
    let ss_res: f64 = pred.iter().zip(y).map(|(p, t)| (p - t) * (p - t)).sum();
    Some(1.0 - ss_res / ss_tot)
}

/// Per-column R².
pub fn r2_columns(pred: &DMatrix<f64>, y: &DMatrix<f64>) -> Vec<Option<f64>> {
    pred.column_iter()
        .zip(y.column_iter())
        .map(|(p, t)| r2_score(p.as_slice(), t.as_slice()))
        .collect()
}

/// One-vs-rest ridge classifier over `±1` targets.
#[derive(Debug, Clone)]
pub struct Classifier {
    pub model: LinearModel,
    pub num_classes: usize,
}

pub fn classify_fit(x: &DMatrix<f64>, labels: &[usize], num_classes: usize, lambdas: &[f64]) -> Result<Classifier> {
    if num_classes < 2 {
        return Err(Error::invalid("classify_fit", "need at least 2 classes"));
    }
    if let Some(&bad) = labels.iter().find(|&&c| c >= num_classes) {
        return Err(Error::invalid("classify_fit", format!("label {bad} out of range")));
    }
    for c in 0..num_classes {
        if !labels.contains(&c) {
            return Err(Error::invalid("classify_fit", format!("class {c} absent from training data")));
        }
    }
    let y = DMatrix::from_fn(labels.len(), num_classes, |r, c| if labels[r] == c { 1.0 } else { -1.0 });
    let selection = if labels.len() <= 400 {
        Selection::LeaveOneOut
    } else {
        Selection::Holdout { fraction: 0.2 }
    };
    let fit = ridge_fit(x, &y, lambdas, selection)?;
    Ok(Classifier {
        model: fit.model,
        num_classes,
    })
}

/// Argmax of class scores; ties go to the lowest class index.
pub fn argmax_rows(scores: &DMatrix<f64>) -> Vec<usize> {
    scores
        .row_iter()
        .map(|row| {
            let mut best = 0;
            for (c, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = c;
                }
            }
            best
        })
        .collect()
}

pub fn classify(clf: &Classifier, x: &DMatrix<f64>) -> Result<Vec<usize>> {
    Ok(argmax_rows(&ridge_predict(&clf.model, x)?))
}

pub fn accuracy(pred: &[usize], labels: &[usize]) -> f64 {
    pred.iter().zip(labels).filter(|(p, l)| p == l).count() as f64 / labels.len() as f64
}

/// One line of the readout CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReadoutRow {
    pub target: String,
    pub condition: String,
    /// `none`, `train_size` or `t`.
    pub sweep: String,
    pub x: f64,
    pub metric: String,
    pub value: f64,
}

pub fn write_readout_csv(rows: &[ReadoutRow], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Looks up `value` for an exact `(target, condition, sweep, x, metric)` key.
pub fn lookup(rows: &[ReadoutRow], target: &str, condition: &str, sweep: &str, x: f64, metric: &str) -> Option<f64> {
    rows.iter()
        .find(|r| r.target == target && r.condition == condition && r.sweep == sweep && r.x == x && r.metric == metric)
        .map(|r| r.value)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReadoutOptions {
    /// Layers for the latent regressions (default: all).
    #[serde(default)]
    pub layers: Option<Vec<usize>>,
    /// Layers for shape classification (default: all but the pixel layer).
    #[serde(default)]
    pub class_layers: Option<Vec<usize>>,
    /// Read-out step for static latents (shape, size, position, intensity).
    #[serde(default = "default_static_t")]
    pub static_t: usize,
    /// Read-out step for velocity.
    #[serde(default = "default_dynamic_t")]
    pub dynamic_t: usize,
    /// Training examples per class in the classification sweep.
    #[serde(default = "default_train_sizes")]
    pub train_sizes: Vec<usize>,
    /// Random subsets averaged per sweep point.
    #[serde(default = "default_repeats")]
    pub repeats: usize,
    #[serde(default = "lambda_grid")]
    pub lambdas: Vec<f64>,
    #[serde(default = "default_holdout")]
    pub holdout: f64,
    /// Also decode velocity and shape at every `t = 1..=T`.
    #[serde(default = "default_true")]
    pub t_sweep: bool,
    #[serde(default)]
    pub seed: u64,
}

fn default_static_t() -> usize {
    2
}
fn default_dynamic_t() -> usize {
    3
}
fn default_train_sizes() -> Vec<usize> {
    vec![1, 2, 3, 5, 10, 20]
}
fn default_repeats() -> usize {
    50
}
fn default_holdout() -> f64 {
    0.2
}
fn default_true() -> bool {
    true
}

impl Default for ReadoutOptions {
    fn default() -> Self {
        ReadoutOptions {
            layers: None,
            class_layers: None,
            static_t: default_static_t(),
            dynamic_t: default_dynamic_t(),
            train_sizes: default_train_sizes(),
            repeats: default_repeats(),
            lambdas: lambda_grid(),
            holdout: default_holdout(),
            t_sweep: true,
            seed: 0,
        }
    }
}

/// Continuous latent targets for each sequence.
fn latent_targets(data: &SequenceBatch, name: &str) -> Result<DMatrix<f64>> {
    let lat = data
        .latents
        .as_ref()
        .ok_or_else(|| Error::invalid("readout", "dataset carries no latent records"))?;
    let cols: Vec<Vec<f64>> = lat
        .iter()
        .map(|r| match name {
            "velocity" => vec![r.velocity.0, r.velocity.1],
            "position" => vec![r.initial_position.0, r.initial_position.1],
            "size" => vec![r.size],
            "intensity" => vec![r.intensity],
            _ => unreachable!("known target"),
        })
        .collect();
    Ok(DMatrix::from_fn(cols.len(), cols[0].len(), |r, c| cols[r][c]))
}

fn shape_labels(data: &SequenceBatch) -> Result<Vec<usize>> {
    Ok(data
        .latents
        .as_ref()
        .ok_or_else(|| Error::invalid("readout", "dataset carries no latent records"))?
        .iter()
        .map(|r| r.shape_id)
        .collect())
}

/// Mean R² over the target's components, or `None` if any is undefined.
fn regress(fx: &DMatrix<f64>, fy: &DMatrix<f64>, tx: &DMatrix<f64>, ty: &DMatrix<f64>, opts: &ReadoutOptions) -> Result<Option<f64>> {
    let fit = ridge_fit(fx, fy, &opts.lambdas, Selection::Holdout { fraction: opts.holdout })?;
    let pred = ridge_predict(&fit.model, tx)?;
    let r2: Option<Vec<f64>> = r2_columns(&pred, ty).into_iter().collect();
    Ok(r2.map(|v| v.iter().sum::<f64>() / v.len() as f64))
}

/// Decoding scores for every `(label, model)` condition on the same
/// fit/test split and the same training subsets.
///
/// Rows: R² for velocity at `dynamic_t` and for position, size and intensity
/// at `static_t`; shape accuracy over the train-size sweep at `static_t`; and,
/// when enabled, velocity R² and shape accuracy at each `t`.
pub fn compare_trained_vs_random(
    conditions: &[(&str, &Model<f32>)],
    fit: &SequenceBatch,
    test: &SequenceBatch,
    opts: &ReadoutOptions,
) -> Result<Vec<ReadoutRow>> {
    let fit_labels = shape_labels(fit)?;
    let test_labels = shape_labels(test)?;
    let num_classes = fit_labels.iter().chain(&test_labels).max().map_or(0, |m| m + 1);
    let t_max = if opts.t_sweep {
        fit.seq_len()
    } else {
        opts.static_t.max(opts.dynamic_t)
    };

    // Shared per-class training subsets so conditions are paired.
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); num_classes];
    for (i, &c) in fit_labels.iter().enumerate() {
        by_class[c].push(i);
    }
    let mut subsets: Vec<(usize, Vec<Vec<usize>>)> = Vec::new();
    for &k in &opts.train_sizes {
        if by_class.iter().any(|c| c.len() < k) {
            return Err(Error::invalid("readout", format!("fewer than {k} fit examples in some class")));
        }
        let reps = (0..opts.repeats)
            .map(|r| {
                let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ ((k as u64) << 32) ^ r as u64);
                let mut idx: Vec<usize> = by_class
                    .iter()
                    .flat_map(|members| {
                        let mut m = members.clone();
                        m.shuffle(&mut rng);
                        m.truncate(k);
                        m
                    })
                    .collect();
                idx.sort_unstable();
                idx
            })
            .collect();
        subsets.push((k, reps));
    }

    let mut rows = Vec::new();
    let mut push = |target: &str, cond: &str, sweep: &str, x: f64, metric: &str, value: f64| {
        rows.push(ReadoutRow {
            target: target.into(),
            condition: cond.into(),
            sweep: sweep.into(),
            x,
            metric: metric.into(),
            value,
        })
    };
    for &(cond, model) in conditions {
        let num_layers = model.config().num_layers;
        let layers = opts.layers.clone().unwrap_or_else(|| (0..num_layers).collect());
        let class_layers = opts
            .class_layers
            .clone()
            .unwrap_or_else(|| (if num_layers > 1 { 1 } else { 0 }..num_layers).collect());
        let fx = extract_feature_series(model, fit, &layers, t_max)?;
        let tx = extract_feature_series(model, test, &layers, t_max)?;
        let (cfx, ctx) = if class_layers == layers {
            (fx.clone(), tx.clone())
        } else {
            (
                extract_feature_series(model, fit, &class_layers, t_max)?,
                extract_feature_series(model, test, &class_layers, t_max)?,
            )
        };
        for (target, t) in [
            ("velocity", opts.dynamic_t),
            ("position", opts.static_t),
            ("size", opts.static_t),
            ("intensity", opts.static_t),
        ] {
            if let Some(r2) = regress(&fx[t - 1], &latent_targets(fit, target)?, &tx[t - 1], &latent_targets(test, target)?, opts)? {
                push(target, cond, "none", t as f64, "r2", r2);
            }
        }
        let st = opts.static_t - 1;
        for (k, reps) in &subsets {
            let mut acc = 0.0;
            for idx in reps {
                let sel = cfx[st].select_rows(idx.iter());
                let labels: Vec<usize> = idx.iter().map(|&i| fit_labels[i]).collect();
                let clf = classify_fit(&sel, &labels, num_classes, &opts.lambdas)?;
                acc += accuracy(&classify(&clf, &ctx[st])?, &test_labels);
            }
            push("shape_id", cond, "train_size", *k as f64, "accuracy", acc / reps.len() as f64);
        }
        if opts.t_sweep {
            for t in 1..=t_max {
                if let Some(r2) = regress(&fx[t - 1], &latent_targets(fit, "velocity")?, &tx[t - 1], &latent_targets(test, "velocity")?, opts)? {
                    push("velocity", cond, "t", t as f64, "r2", r2);
                }
                let clf = classify_fit(&cfx[t - 1], &fit_labels, num_classes, &opts.lambdas)?;
                push("shape_id", cond, "t", t as f64, "accuracy", accuracy(&classify(&clf, &ctx[t - 1])?, &test_labels));
            }
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_matrix(r: usize, c: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(r, c, |_, _| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn exact_interpolation_at_zero_penalty() {
        let x = random_matrix(6, 5, 1);
        let w = random_matrix(5, 1, 2);
        let y = &x * &w + DMatrix::from_element(6, 1, 0.7);
        let m = fit_at(&x, &y, 0.0).unwrap();
        assert!((&m.weights - &w).amax() < 1e-8);
        assert!((m.intercept[0] - 0.7).abs() < 1e-8);
    }

    #[test]
    fn huge_penalty_predicts_mean() {
        let x = random_matrix(30, 4, 3);
        let y = random_matrix(30, 1, 4);
        let m = fit_at(&x, &y, 1e12).unwrap();
        assert!(m.weights.amax() < 1e-9);
        let pred = ridge_predict(&m, &x).unwrap();
        let mean = y.mean();
        assert!(pred.iter().all(|p| (p - mean).abs() < 1e-8));
    }

    #[test]
    fn dual_and_primal_agree() {
        let x = random_matrix(8, 20, 5);
        let y = random_matrix(8, 2, 6);
        let dual = ridge_weights(&x, &y, 0.5).unwrap();
        let gram = x.transpose() * &x + DMatrix::identity(20, 20) * 0.5;
        let direct = gram.lu().solve(&(x.transpose() * &y)).unwrap();
        assert!((dual - direct).amax() < 1e-10);
    }

    #[test]
    fn zero_penalty_singular_is_skipped() {
        // Centered rank is at most n - 1 < p, so lambda = 0 is singular.
        let x = random_matrix(5, 10, 7);
        let y = random_matrix(5, 1, 8);
        let fit = ridge_fit(&x, &y, &[0.0, 1.0], Selection::LeaveOneOut).unwrap();
        assert_eq!(fit.scores[0].1, None);
        assert_eq!(fit.model.lambda, 1.0);
    }

    #[test]
    fn loo_matches_brute_force() {
        let x = random_matrix(12, 3, 9);
        let y = random_matrix(12, 1, 10);
        let lambda = 0.3;
        let fast = loo_scores(&x, &y, &[lambda])[0].1.unwrap();
        // Brute force with the full-sample standardization, as in loo_scores.
        let st = Standardizer::fit(&x);
        let xs = st.apply(&x);
        let mut total = 0.0;
        for i in 0..12 {
            let keep: Vec<usize> = (0..12).filter(|&r| r != i).collect();
            let xk = xs.select_rows(keep.iter());
            let yk = y.select_rows(keep.iter());
            let ym = column_means(&yk);
            let xm = DVector::from_iterator(3, xk.column_iter().map(|c| c.mean()));
            let xc = DMatrix::from_fn(11, 3, |r, c| xk[(r, c)] - xm[c]);
            let w = (xc.transpose() * &xc + DMatrix::identity(3, 3) * lambda)
                .lu()
                .solve(&(xc.transpose() * center(&yk, &ym)))
                .unwrap();
            let pred = ym[0] + ((xs.row(i).transpose() - &xm).transpose() * &w)[(0, 0)];
            total += (y[(i, 0)] - pred).powi(2);
        }
        assert!((fast - total / 12.0).abs() < 1e-10, "{fast} vs {}", total / 12.0);
    }

    #[test]
    fn r2_sentinels() {
        assert_eq!(r2_score(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]), Some(1.0));
        assert_eq!(r2_score(&[2.0, 2.0, 2.0], &[1.0, 2.0, 3.0]), Some(0.0));
        assert_eq!(r2_score(&[1.0, 2.0], &[5.0, 5.0]), None);
    }

    #[test]
    fn separable_two_class() {
        let x = DMatrix::from_row_slice(6, 2, &[0.0, 1.0, 0.1, 1.2, -0.1, 0.9, 3.0, -1.0, 3.2, -0.8, 2.9, -1.1]);
        let labels = [0, 0, 0, 1, 1, 1];
        let clf = classify_fit(&x, &labels, 2, &lambda_grid()).unwrap();
        assert_eq!(classify(&clf, &x).unwrap(), labels);
        assert!(classify_fit(&x, &[0; 6], 2, &lambda_grid()).is_err());
    }

    #[test]
    fn feature_dim_arithmetic() {
        let spec = FeatureSpec::all_layers(4, 2);
        assert_eq!(spec.dim(&[8, 16, 32, 64], 32, 32), 1920);
    }
}
