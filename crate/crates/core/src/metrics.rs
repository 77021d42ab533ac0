//! Frame-quality metrics, the copy-last-frame baseline and evaluation reports.

use std::fmt::Write as _;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::SequenceBatch;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::tensor::Tensor;

fn check_shapes(op: &'static str, a: &Tensor<f32>, b: &Tensor<f32>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(op, a.shape(), b.shape()));
    }
    Ok(())
}

/// Mean squared elementwise difference.
pub fn mse(pred: &Tensor<f32>, actual: &Tensor<f32>) -> Result<f64> {
    check_shapes("mse", pred, actual)?;
    let sum: f64 = pred
        .data()
        .iter()
        .zip(actual.data())
        .map(|(&p, &a)| {
            let d = p as f64 - a as f64;
            d * d
        })
        .sum();
    Ok(sum / pred.len() as f64)
}

/// `10 log10(p_max² / mse)` in dB; `+inf` when the MSE is zero.
pub fn psnr_from_mse(mse: f64, p_max: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (p_max * p_max / mse).log10()
    }
}

pub fn psnr(pred: &Tensor<f32>, actual: &Tensor<f32>, p_max: f64) -> Result<f64> {
    Ok(psnr_from_mse(mse(pred, actual)?, p_max))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SsimParams {
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
    pub dynamic_range: f64,
}

impl Default for SsimParams {
    fn default() -> Self {
        SsimParams {
            window: 11,
            sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
            dynamic_range: 1.0,
        }
    }
}

impl SsimParams {
    /// Normalized 1-D Gaussian taps; the 2-D window is their outer product.
    pub fn taps(&self) -> Vec<f64> {
        let r = (self.window / 2) as f64;
        let raw: Vec<f64> = (0..self.window)
            .map(|i| {
                let d = i as f64 - r;
                (-d * d / (2.0 * self.sigma * self.sigma)).exp()
            })
            .collect();
        let s: f64 = raw.iter().sum();
        raw.into_iter().map(|v| v / s).collect()
    }
}

/// Valid-region separable filtering of an `h x w` plane.
fn filter_valid(img: &[f64], h: usize, w: usize, taps: &[f64]) -> Vec<f64> {
    let k = taps.len();
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = taps.iter().enumerate().map(|(i, t)| t * img[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = taps.iter().enumerate().map(|(i, t)| t * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Mean local SSIM of two single-channel planes over valid window positions.
fn ssim_plane(a: &[f64], b: &[f64], h: usize, w: usize, params: &SsimParams, taps: &[f64]) -> f64 {
    let c1 = (params.k1 * params.dynamic_range).powi(2);
    let c2 = (params.k2 * params.dynamic_range).powi(2);
    let mu_a = filter_valid(a, h, w, taps);
    let mu_b = filter_valid(b, h, w, taps);
    let aa: Vec<f64> = a.iter().map(|v| v * v).collect();
    let bb: Vec<f64> = b.iter().map(|v| v * v).collect();
    let ab: Vec<f64> = a.iter().zip(b).map(|(x, y)| x * y).collect();
    let e_aa = filter_valid(&aa, h, w, taps);
    let e_bb = filter_valid(&bb, h, w, taps);
    let e_ab = filter_valid(&ab, h, w, taps);
    let mut total = 0.0;
    for i in 0..mu_a.len() {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = e_aa[i] - ma * ma;
        let vb = e_bb[i] - mb * mb;
        let cov = e_ab[i] - ma * mb;
        let num = (2.0 * ma * mb + c1) * (2.0 * cov + c2);
        let den = (ma * ma + mb * mb + c1) * (va + vb + c2);
        total += num / den;
    }
    total / mu_a.len() as f64
}

/// Gaussian-window SSIM averaged over valid windows and over the batch.
/// Colour frames are averaged to a single luminance plane first.
pub fn ssim(pred: &Tensor<f32>, actual: &Tensor<f32>, params: &SsimParams) -> Result<f64> {
    check_shapes("ssim", pred, actual)?;
    let s = pred.shape();
    if s.h < params.window || s.w < params.window {
        return Err(Error::invalid(
            "ssim",
            format!("frame {}x{} is smaller than the {} px window", s.h, s.w, params.window),
        ));
    }
    let taps = params.taps();
    let plane = s.h * s.w;
    let lum = |t: &Tensor<f32>, n: usize| -> Vec<f64> {
        let sample = t.sample(n);
        (0..plane)
            .map(|i| (0..s.c).map(|c| sample[c * plane + i] as f64).sum::<f64>() / s.c as f64)
            .collect()
    };
    let mut total = 0.0;
    for n in 0..s.n {
        total += ssim_plane(&lum(pred, n), &lum(actual, n), s.h, s.w, params, &taps);
    }
    Ok(total / s.n as f64)
}

/// Predictions for frames `2..=T`: frame `t - 1` stands in for frame `t`.
pub fn copy_last_frame(frames: &[Tensor<f32>]) -> Result<Vec<Tensor<f32>>> {
    if frames.len() < 2 {
        return Err(Error::invalid("copy_last_frame", "need at least 2 frames"));
    }
    Ok(frames[..frames.len() - 1].to_vec())
}

/// Anything that produces one prediction per input frame, where entry `t` is
/// the guess for frame `t` made from frames before it.
pub trait FramePredictor: Sync {
    fn name(&self) -> String;
    fn predict(&self, frames: &[Tensor<f32>]) -> Result<Vec<Tensor<f32>>>;
}

impl FramePredictor for Model<f32> {
    fn name(&self) -> String {
        self.config().variant.display_name().to_string()
    }

    fn predict(&self, frames: &[Tensor<f32>]) -> Result<Vec<Tensor<f32>>> {
        Ok(self.run_sequence(frames)?.predictions)
    }
}

/// A predictor under a caller-chosen label.
pub struct Named<'a, P: FramePredictor + ?Sized>(pub String, pub &'a P);

impl<P: FramePredictor + ?Sized> FramePredictor for Named<'_, P> {
    fn name(&self) -> String {
        self.0.clone()
    }

    fn predict(&self, frames: &[Tensor<f32>]) -> Result<Vec<Tensor<f32>>> {
        self.1.predict(frames)
    }
}

pub struct CopyLastFrame;

pub const COPY_LAST_FRAME: &str = "Copy Last Frame";

impl FramePredictor for CopyLastFrame {
    fn name(&self) -> String {
        COPY_LAST_FRAME.to_string()
    }

    fn predict(&self, frames: &[Tensor<f32>]) -> Result<Vec<Tensor<f32>>> {
        let mut out = vec![frames[0].clone()];
        out.extend(copy_last_frame(frames)?);
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub name: String,
    pub mse: f64,
    /// From the aggregate MSE.
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub dataset: String,
    pub seq_len: usize,
    /// Inclusive 1-based timestep range the scores average over.
    pub t_range: (usize, usize),
    pub rows: Vec<MetricsRow>,
}

impl MetricsReport {
    pub fn row(&self, name: &str) -> Option<&MetricsRow> {
        self.rows.iter().find(|r| r.name == name)
    }

    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["model", "mse", "psnr_db", "ssim", "dataset", "t_first", "t_last"])?;
        for r in &self.rows {
            w.write_record([
                r.name.clone(),
                r.mse.to_string(),
                r.psnr.to_string(),
                r.ssim.to_string(),
                self.dataset.clone(),
                self.t_range.0.to_string(),
                self.t_range.1.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut s = format!(
            "{} (T = {}, averaged over t = {}..{})\n",
            self.dataset, self.seq_len, self.t_range.0, self.t_range.1
        );
        let width = self.rows.iter().map(|r| r.name.len()).max().unwrap_or(5).max(5);
        let _ = writeln!(s, "{:<width$}  {:>10}  {:>9}  {:>7}", "Model", "MSE", "PSNR (dB)", "SSIM");
        for r in &self.rows {
            let _ = writeln!(s, "{:<width$}  {:>10.3e}  {:>9.2}  {:>7.4}", r.name, r.mse, r.psnr, r.ssim);
        }
        s
    }
}

/// Per-sequence sums of MSE and SSIM over `t = 2..T`.
fn score_sequence(pred: &[Tensor<f32>], frames: &[Tensor<f32>], params: &SsimParams) -> Result<(f64, f64)> {
    if pred.len() != frames.len() {
        return Err(Error::invalid(
            "evaluate",
            format!("{} predictions for {} frames", pred.len(), frames.len()),
        ));
    }
    let (mut m, mut s) = (0.0, 0.0);
    for t in 1..frames.len() {
        m += mse(&pred[t], &frames[t])?;
        s += ssim(&pred[t], &frames[t], params)?;
    }
    Ok((m, s))
}

/// Scores every predictor plus the copy-last-frame baseline, averaging over
/// `t = 2..T` and all sequences. Rows keep the input order, baseline last.
pub fn evaluate(
    predictors: &[&dyn FramePredictor],
    data: &SequenceBatch,
    dataset: &str,
    params: &SsimParams,
) -> Result<MetricsReport> {
    if data.is_empty() {
        return Err(Error::invalid("evaluate", "empty dataset"));
    }
    let t = data.seq_len();
    if t < 2 {
        return Err(Error::invalid("evaluate", "need at least 2 frames per sequence"));
    }
    let baseline = CopyLastFrame;
    let mut all: Vec<&dyn FramePredictor> = predictors.to_vec();
    all.push(&baseline);
    let mut rows = Vec::with_capacity(all.len());
    for p in all {
        let per_seq: Vec<(f64, f64)> = (0..data.len())
            .into_par_iter()
            .map(|i| {
                let frames = data.sequence(i);
                score_sequence(&p.predict(&frames)?, &frames, params)
            })
            .collect::<Result<_>>()?;
        let count = (data.len() * (t - 1)) as f64;
        let mse_avg = per_seq.iter().map(|v| v.0).sum::<f64>() / count;
        let ssim_avg = per_seq.iter().map(|v| v.1).sum::<f64>() / count;
        rows.push(MetricsRow {
            name: p.name(),
            mse: mse_avg,
            psnr: psnr_from_mse(mse_avg, params.dynamic_range),
            ssim: ssim_avg,
        });
    }
    Ok(MetricsReport {
        dataset: dataset.to_string(),
        seq_len: t,
        t_range: (2, t),
        rows,
    })
}

/// Per-sequence mean SSIM over `t = 2..T` for one predictor.
pub fn ssim_per_sequence(p: &dyn FramePredictor, data: &SequenceBatch, params: &SsimParams) -> Result<Vec<f64>> {
    (0..data.len())
        .into_par_iter()
        .map(|i| {
            let frames = data.sequence(i);
            let (_, s) = score_sequence(&p.predict(&frames)?, &frames, params)?;
            Ok(s / (frames.len() - 1) as f64)
        })
        .collect()
}

/// Scores of one variant across hyperparameter settings or seeds.
#[derive(Debug, Clone)]
pub struct VariantRuns {
    pub name: String,
    pub runs: Vec<MetricsRow>,
}

/// Text table with one row per variant: best score with the average over
/// runs in parentheses.
pub fn variant_table(groups: &[VariantRuns]) -> String {
    let width = groups.iter().map(|g| g.name.len()).max().unwrap_or(5).max(5);
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<width$}  {:>21}  {:>15}  {:>15}",
        "Model", "MSE", "PSNR (dB)", "SSIM"
    );
    for g in groups {
        if g.runs.is_empty() {
            continue;
        }
        let n = g.runs.len() as f64;
        let mean = |f: fn(&MetricsRow) -> f64| g.runs.iter().map(f).sum::<f64>() / n;
        let best_mse = g.runs.iter().map(|r| r.mse).fold(f64::INFINITY, f64::min);
        let best_psnr = g.runs.iter().map(|r| r.psnr).fold(f64::NEG_INFINITY, f64::max);
        let best_ssim = g.runs.iter().map(|r| r.ssim).fold(f64::NEG_INFINITY, f64::max);
        let _ = writeln!(
            s,
            "{:<width$}  {:>9.3e} ({:>9.3e})  {:>6.2} ({:>6.2})  {:>6.4} ({:>6.4})",
            g.name,
            best_mse,
            mean(|r| r.mse),
            best_psnr,
            mean(|r| r.psnr),
            best_ssim,
            mean(|r| r.ssim),
        );
    }
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtrapolationCurve {
    pub t_switch: usize,
    /// Steps ahead of the last ground-truth frame, starting at 1.
    pub offsets: Vec<usize>,
    pub model_mse: Vec<f64>,
    /// Copy of the last ground-truth frame used for every offset.
    pub baseline_mse: Vec<f64>,
}

impl ExtrapolationCurve {
    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["offset", "model_mse", "copy_last_mse"])?;
        for i in 0..self.offsets.len() {
            w.write_record([
                self.offsets[i].to_string(),
                self.model_mse[i].to_string(),
                self.baseline_mse[i].to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// MSE at each offset `1..=horizon` past `t_switch`, averaged over sequences.
pub fn extrapolation_curve(
    model: &Model<f32>,
    data: &SequenceBatch,
    t_switch: usize,
    horizon: usize,
) -> Result<ExtrapolationCurve> {
    if data.seq_len() < t_switch + horizon {
        return Err(Error::invalid(
            "extrapolation_curve",
            format!(
                "sequences have {} frames, need t_switch + horizon = {}",
                data.seq_len(),
                t_switch + horizon
            ),
        ));
    }
    let per_seq: Vec<(Vec<f64>, Vec<f64>)> = (0..data.len())
        .into_par_iter()
        .map(|i| {
            let frames = data.sequence(i);
            let preds = model.extrapolate(&frames, t_switch, horizon)?;
            let last = &frames[t_switch - 1];
            let mut m = Vec::with_capacity(horizon);
            let mut b = Vec::with_capacity(horizon);
            for k in 1..=horizon {
                let idx = t_switch + k - 1;
                m.push(mse(&preds[idx], &frames[idx])?);
                b.push(mse(last, &frames[idx])?);
            }
            Ok((m, b))
        })
        .collect::<Result<_>>()?;
    let n = per_seq.len() as f64;
    let avg = |pick: fn(&(Vec<f64>, Vec<f64>)) -> &Vec<f64>| -> Vec<f64> {
        (0..horizon)
            .map(|k| per_seq.iter().map(|s| pick(s)[k]).sum::<f64>() / n)
            .collect()
    };
    Ok(ExtrapolationCurve {
        t_switch,
        offsets: (1..=horizon).collect(),
        model_mse: avg(|s| &s.0),
        baseline_mse: avg(|s| &s.1),
    })
}

/// One-sided exact sign test: probability of at least `wins` successes out of
/// `wins + losses` fair coin flips. Ties are discarded by the caller.
pub fn sign_test_p(wins: usize, losses: usize) -> f64 {
    let n = wins + losses;
    // log C(n, k) accumulated iteratively to avoid overflow.
    let mut log_c = 0.0f64;
    let mut tail = 0.0;
    let half_n = -(n as f64) * std::f64::consts::LN_2;
    for k in 0..=n {
        if k > 0 {
            log_c += ((n - k + 1) as f64).ln() - (k as f64).ln();
        }
        if k >= wins {
            tail += (log_c + half_n).exp();
        }
    }
    tail.min(1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;

    fn t(vals: Vec<f32>, h: usize, w: usize) -> Tensor<f32> {
        Tensor::from_vec(Shape::new(1, 1, h, w), vals).unwrap()
    }

    #[test]
    fn mse_offset() {
        let a = Tensor::full(Shape::new(1, 1, 4, 4), 0.5f32);
        let b = Tensor::full(Shape::new(1, 1, 4, 4), 0.6f32);
        assert!((mse(&a, &b).unwrap() - 0.01).abs() < 1e-6);
        assert_eq!(mse(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn psnr_values() {
        assert!((psnr_from_mse(0.01, 1.0) - 20.0).abs() < 1e-12);
        assert_eq!(psnr_from_mse(0.0, 1.0), f64::INFINITY);
    }

    #[test]
    fn window_normalized() {
        let s: f64 = SsimParams::default().taps().iter().sum();
        assert!((s - 1.0).abs() < 1e-15);
    }

    #[test]
    fn ssim_identity_and_symmetry() {
        let a = t((0..256).map(|i| ((i * 37) % 101) as f32 / 100.0).collect(), 16, 16);
        let b = t((0..256).map(|i| ((i * 53) % 97) as f32 / 96.0).collect(), 16, 16);
        let p = SsimParams::default();
        assert_eq!(ssim(&a, &a, &p).unwrap(), 1.0);
        assert_eq!(ssim(&a, &b, &p).unwrap(), ssim(&b, &a, &p).unwrap());
        assert!(ssim(&a, &b, &p).unwrap() < 1.0);
    }

    #[test]
    fn ssim_rejects_small_frames() {
        let a = Tensor::zeros(Shape::new(1, 1, 8, 8));
        assert!(ssim(&a, &a, &SsimParams::default()).is_err());
    }

    #[test]
    fn copy_last_static_is_zero() {
        let f = vec![Tensor::full(Shape::new(1, 1, 4, 4), 0.3f32); 3];
        let p = copy_last_frame(&f).unwrap();
        assert_eq!(p.len(), 2);
        assert_eq!(mse(&p[0], &f[1]).unwrap(), 0.0);
        assert!(copy_last_frame(&f[..1]).is_err());
    }

    #[test]
    fn sign_test_tail() {
        assert!((sign_test_p(3, 0) - 0.125).abs() < 1e-12);
        assert!((sign_test_p(0, 4) - 1.0).abs() < 1e-12);
        assert!((sign_test_p(2, 2) - 11.0 / 16.0).abs() < 1e-12);
        assert!(sign_test_p(200, 0) < 1e-50);
    }
}
