//! Shared oracles and gradient suites for the integration tests and the
//! acceptance harness. Everything here is written independently of the
//! library's kernels: plain loops over explicit index arithmetic.

#![allow(dead_code)]

use prednet::gradcheck::{check_gradients, GradCheckReport};
use prednet::model::{convlstm_cell, Model};
use prednet::tape::{ParamId, Tape, Var};
use prednet::train::{loss_and_gradients, LossMode, Objective};
use prednet::{PredNetConfig, Shape, Tensor, Variant};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const GRAD_TOL: f64 = 1e-4;
pub const FD_STEP: f64 = 1e-5;

pub fn random_tensor(shape: Shape, lo: f64, hi: f64, seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_, _, _, _| rng.gen_range(lo..hi))
}

pub fn random_f32(shape: Shape, seed: u64) -> Tensor<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_, _, _, _| rng.gen_range(0.0f32..1.0))
}

/// Zero-padded "same" cross-correlation, `kernel` of shape `(out, in, k, k)`.
pub fn conv_oracle(x: &Tensor<f64>, kernel: &Tensor<f64>, bias: &Tensor<f64>) -> Tensor<f64> {
    let s = x.shape();
    let ks = kernel.shape();
    let pad = (ks.h / 2) as isize;
    Tensor::from_fn(Shape::new(s.n, ks.n, s.h, s.w), |n, o, y, xx| {
        let mut acc = bias.data()[o];
        for i in 0..s.c {
            for dy in 0..ks.h {
                for dx in 0..ks.w {
                    let sy = y as isize + dy as isize - pad;
                    let sx = xx as isize + dx as isize - pad;
                    if sy >= 0 && sx >= 0 && (sy as usize) < s.h && (sx as usize) < s.w {
                        acc += kernel.get(o, i, dy, dx) * x.get(n, i, sy as usize, sx as usize);
                    }
                }
            }
        }
        acc
    })
}

pub fn maxpool_oracle(x: &Tensor<f64>) -> Tensor<f64> {
    let s = x.shape();
    Tensor::from_fn(Shape::new(s.n, s.c, s.h / 2, s.w / 2), |n, c, y, xx| {
        let mut m = f64::NEG_INFINITY;
        for dy in 0..2 {
            for dx in 0..2 {
                m = m.max(x.get(n, c, 2 * y + dy, 2 * xx + dx));
            }
        }
        m
    })
}

/// Runs `build` with every input registered as a parameter, contracts the
/// output against fixed random weights, and finite-difference checks all inputs.
pub fn check_op(
    name: &str,
    inputs: &[Tensor<f64>],
    build: impl Fn(&mut Tape<f64>, &[Var]) -> prednet::Result<Var>,
) -> (String, GradCheckReport) {
    let probe_seed = 0xC0FFEE ^ name.len() as u64;
    let loss_of = |vals: &[Tensor<f64>], tape: &mut Tape<f64>| -> prednet::Result<Var> {
        let vars: Vec<Var> = vals
            .iter()
            .enumerate()
            .map(|(i, v)| tape.param(ParamId(i), v.clone()))
            .collect();
        let out = build(tape, &vars)?;
        let shape = tape.shape(out);
        let w = tape.constant(random_tensor(shape, -1.0, 1.0, probe_seed));
        let prod = tape.hadamard(out, w)?;
        tape.sum(prod)
    };
    let mut tape = Tape::new();
    let loss = loss_of(inputs, &mut tape).expect("forward");
    let grads = tape
        .backward(loss)
        .expect("backward")
        .into_dense(inputs.len())
        .expect("dense grads");
    let report = check_gradients(inputs, &grads, FD_STEP, None, |vals| {
        let mut t = Tape::inference();
        let l = loss_of(vals, &mut t)?;
        Ok(t.value(l).data()[0])
    })
    .expect("gradient check");
    (name.to_string(), report)
}

/// Every differentiable primitive on random inputs away from kinks.
pub fn kernel_suite() -> Vec<(String, GradCheckReport)> {
    let s = Shape::new(2, 3, 6, 4);
    let x = || random_tensor(s, -1.0, 1.0, 1);
    let y = || random_tensor(s, -1.0, 1.0, 2);
    let pos = || random_tensor(s, 0.1, 1.4, 3);
    let mut out = Vec::new();
    for (k, seed) in [(1usize, 10u64), (3, 11), (5, 12)] {
        let kernel = random_tensor(Shape::new(4, 3, k, k), -0.5, 0.5, seed);
        let bias = random_tensor(Shape::new(1, 4, 1, 1), -0.5, 0.5, seed + 100);
        out.push(check_op(&format!("conv2d {k}x{k}"), &[x(), kernel, bias], |t, v| t.conv2d(v[0], v[1], v[2])));
    }
    out.push(check_op("maxpool2", &[x()], |t, v| t.maxpool2(v[0])));
    out.push(check_op("upsample_nn2", &[x()], |t, v| t.upsample_nn2(v[0])));
    out.push(check_op("relu", &[x()], |t, v| t.relu(v[0])));
    out.push(check_op("satlu", &[pos()], |t, v| t.satlu(v[0], 1.0)));
    out.push(check_op("sigmoid", &[x()], |t, v| t.sigmoid(v[0])));
    out.push(check_op("tanh", &[x()], |t, v| t.tanh(v[0])));
    out.push(check_op("abs", &[x()], |t, v| t.abs(v[0])));
    out.push(check_op("square", &[x()], |t, v| t.square(v[0])));
    out.push(check_op("concat_channels", &[x(), y()], |t, v| t.concat_channels(v[0], v[1])));
    out.push(check_op("slice_channels", &[x()], |t, v| t.slice_channels(v[0], 1, 2)));
    out.push(check_op("add", &[x(), y()], |t, v| t.add(v[0], v[1])));
    out.push(check_op("subtract", &[x(), y()], |t, v| t.subtract(v[0], v[1])));
    out.push(check_op("hadamard", &[x(), y()], |t, v| t.hadamard(v[0], v[1])));
    out.push(check_op("scale", &[x()], |t, v| t.scale(v[0], -2.5)));
    out.push(check_op("sum", &[x()], |t, v| t.sum(v[0])));
    out.push(check_op("mean", &[x()], |t, v| t.mean(v[0])));
    out
}

/// One ConvLSTM update with and without a top-down input.
pub fn convlstm_suite() -> Vec<(String, GradCheckReport)> {
    let s = |c| Shape::new(2, c, 4, 4);
    let inputs = |with_top: bool| {
        let in_ch = 2 + 3 + if with_top { 2 } else { 0 };
        vec![
            random_tensor(s(2), -1.0, 1.0, 21),
            random_tensor(s(3), -1.0, 1.0, 22),
            random_tensor(s(3), -1.0, 1.0, 23),
            random_tensor(Shape::new(12, in_ch, 3, 3), -0.4, 0.4, 24),
            random_tensor(Shape::new(1, 12, 1, 1), -0.4, 0.4, 25),
            random_tensor(s(2), -1.0, 1.0, 26),
        ]
    };
    let both = |t: &mut Tape<f64>, v: &[Var], top: Option<Var>| -> prednet::Result<Var> {
        let (h, c) = convlstm_cell(t, v[0], v[1], top, v[2], v[3], v[4])?;
        t.concat_channels(h, c)
    };
    vec![
        check_op("convlstm", &inputs(false)[..5], |t, v| both(t, v, None)),
        check_op("convlstm + top-down", &inputs(true), |t, v| both(t, v, Some(v[5]))),
    ]
}

/// 2-layer, T = 3, 8x8 model with randomized weights and biases.
pub fn model_for_gradcheck(variant: Variant, seed: u64) -> Model<f64> {
    let cfg = PredNetConfig::new(&[1, 3], variant).with_lambda_layer(vec![1.0, 0.1]);
    let mut m: Model<f64> = Model::new(cfg, seed).expect("valid config");
    for (i, p) in m.params_mut().iter_mut().enumerate() {
        *p = random_tensor(p.shape(), -0.5, 0.5, seed * 1000 + i as u64);
    }
    m
}

pub fn model_gradcheck(model: &Model<f64>, frames: &[Tensor<f64>], objective: Objective) -> GradCheckReport {
    let (_, grads) = loss_and_gradients(model, frames, objective).expect("loss");
    let cfg = model.config().clone();
    check_gradients(model.params(), &grads, FD_STEP, Some(24), |p| {
        let m = Model::from_params(cfg.clone(), p.to_vec())?;
        let mut tape = Tape::inference();
        let vars = m.bind(&mut tape);
        let loss = prednet::train::objective_on_tape(&m, &mut tape, &vars, frames, objective)?;
        Ok(tape.value(loss).data()[0])
    })
    .expect("gradient check")
}

/// Full-model checks: every variant under the error loss, plus the pixel and
/// extrapolation objectives on the main architecture.
pub fn model_suite() -> Vec<(String, GradCheckReport)> {
    let frames: Vec<Tensor<f64>> = (0..3)
        .map(|t| random_tensor(Shape::new(2, 1, 8, 8), 0.0, 1.0, 40 + t))
        .collect();
    let mut out = Vec::new();
    for (i, v) in Variant::ALL.iter().enumerate() {
        let m = model_for_gradcheck(*v, 7 + i as u64);
        out.push((
            format!("model {} (error loss)", v.tag()),
            model_gradcheck(&m, &frames, Objective::Loss(LossMode::L1ErrorUnits)),
        ));
    }
    let m = model_for_gradcheck(Variant::PredNet, 3);
    out.push((
        "model prednet (pixel L2)".into(),
        model_gradcheck(&m, &frames, Objective::Loss(LossMode::L2Pixel)),
    ));
    out.push((
        "model prednet (extrapolation)".into(),
        model_gradcheck(&m, &frames, Objective::Extrapolation { t_switch: 2, total: 3 }),
    ));
    out
}

/// Mean of squared differences by direct summation.
pub fn mse_oracle(a: &Tensor<f32>, b: &Tensor<f32>) -> f64 {
    let mut acc = 0.0;
    for i in 0..a.len() {
        let d = a.data()[i] as f64 - b.data()[i] as f64;
        acc += d * d;
    }
    acc / a.len() as f64
}

pub fn psnr_oracle(a: &Tensor<f32>, b: &Tensor<f32>) -> f64 {
    -10.0 * mse_oracle(a, b).log10()
}

/// Literal sliding-window SSIM for single-channel, batch-1 frames with an
/// explicitly built, normalized 11x11 Gaussian (σ = 1.5), K1 = 0.01, K2 = 0.03, L = 1.
pub fn ssim_oracle(a: &Tensor<f32>, b: &Tensor<f32>) -> f64 {
    let s = a.shape();
    let (win, sigma) = (11usize, 1.5f64);
    let mut w = vec![0.0; win * win];
    for i in 0..win {
        for j in 0..win {
            let (di, dj) = (i as f64 - 5.0, j as f64 - 5.0);
            w[i * win + j] = (-(di * di + dj * dj) / (2.0 * sigma * sigma)).exp();
        }
    }
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= total);
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let mut sum = 0.0;
    let mut count = 0;
    for y in 0..=s.h - win {
        for x in 0..=s.w - win {
            let (mut ma, mut mb) = (0.0, 0.0);
            for i in 0..win {
                for j in 0..win {
                    ma += w[i * win + j] * a.get(0, 0, y + i, x + j) as f64;
                    mb += w[i * win + j] * b.get(0, 0, y + i, x + j) as f64;
                }
            }
            let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
            for i in 0..win {
                for j in 0..win {
                    let da = a.get(0, 0, y + i, x + j) as f64 - ma;
                    let db = b.get(0, 0, y + i, x + j) as f64 - mb;
                    va += w[i * win + j] * da * da;
                    vb += w[i * win + j] * db * db;
                    cov += w[i * win + j] * da * db;
                }
            }
            sum += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            count += 1;
        }
    }
    sum / count as f64
}

/// Solves `A x = b` by Gaussian elimination with partial pivoting.
pub fn gauss_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        a.swap(col, piv);
        b.swap(col, piv);
        for r in col + 1..n {
            let f = a[r][col] / a[col][col];
            for c in col..n {
                a[r][c] -= f * a[col][c];
            }
            b[r] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|c| a[r][c] * x[c]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    x
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn small_model(variant: Variant, seed: u64) -> Model<f64> {
    let cfg = PredNetConfig::new(&[1, 4, 6], variant);
    Model::new(cfg, seed).expect("valid config")
}

/// With zero biases, the first prediction of every variant is a constant image.
pub fn check_zero_bias_uniform() -> Result<(), String> {
    for v in Variant::ALL {
        let mut m = small_model(v, 5);
        for (name, p) in m.param_names().to_vec().iter().zip(m.params_mut()) {
            if name.ends_with(".bias") {
                p.data_mut().fill(0.0);
            }
        }
        let x = random_tensor(Shape::new(2, 1, 16, 16), 0.0, 1.0, 8);
        let state = prednet::init_state(m.config(), 2, 16, 16).map_err(|e| e.to_string())?;
        let out = m.step(&state, &x).map_err(|e| e.to_string())?;
        for n in 0..2 {
            let px = out.prediction.sample(n);
            let mean = px.iter().sum::<f64>() / px.len() as f64;
            let var = px.iter().map(|p| (p - mean) * (p - mean)).sum::<f64>() / px.len() as f64;
            ensure(var == 0.0, || format!("{}: first prediction variance {var:e}", v.tag()))?;
        }
    }
    Ok(())
}

/// Split error units are non-negative at every layer and step.
pub fn check_errors_nonnegative() -> Result<(), String> {
    for v in Variant::ALL.into_iter().filter(|v| v.splits_errors()) {
        let m = model_for_gradcheck(v, 11);
        let mut state = prednet::init_state(m.config(), 2, 8, 8).map_err(|e| e.to_string())?;
        for t in 0..4 {
            let x = random_tensor(Shape::new(2, 1, 8, 8), 0.0, 1.0, 60 + t);
            let out = m.step(&state, &x).map_err(|e| e.to_string())?;
            for (l, e) in out.errors.iter().enumerate() {
                ensure(e.data().iter().all(|&v| v >= 0.0), || format!("{}: negative E_{l} at t={}", v.tag(), t + 1))?;
            }
            state = out.state;
        }
    }
    Ok(())
}

pub fn check_pool_upsample_identity() -> Result<(), String> {
    for seed in 0..20 {
        let x = random_tensor(Shape::new(2, 3, 4, 6), -5.0, 5.0, seed);
        let (y, _) = prednet::kernels::maxpool2(&prednet::kernels::upsample_nn2(&x)).map_err(|e| e.to_string())?;
        ensure(y == x, || "maxpool2(upsample(x)) != x".into())?;
    }
    Ok(())
}

/// `pos - neg = A - Â` and `pos + neg = |A - Â|`, bitwise.
pub fn check_error_identities() -> Result<(), String> {
    for seed in 0..20 {
        let a = random_tensor(Shape::new(2, 3, 4, 4), -1.0, 1.0, 100 + seed);
        let ahat = random_tensor(Shape::new(2, 3, 4, 4), -1.0, 1.0, 200 + seed);
        let e = prednet::model::error_unit(&a, &ahat).map_err(|e| e.to_string())?;
        let pos = e.channel_slice(0, 3).unwrap();
        let neg = e.channel_slice(3, 3).unwrap();
        for i in 0..a.len() {
            let d = a.data()[i] - ahat.data()[i];
            let (p, n) = (pos.data()[i], neg.data()[i]);
            ensure(p - n == d, || format!("pos - neg = {} vs A - Â = {d}", p - n))?;
            ensure(p + n == d.abs(), || format!("pos + neg = {} vs |A - Â| = {}", p + n, d.abs()))?;
        }
    }
    Ok(())
}

/// At t = 1 the predictions do not depend on the frame, and the targets are
/// exactly a feedforward CNN over the frame: A_{l+1} = maxpool(relu(conv(E_l))).
pub fn check_first_step_feedforward() -> Result<(), String> {
    let m = model_for_gradcheck(Variant::PredNet, 13);
    let (k1, b1) = (m.param_id("layer1.target.kernel").unwrap(), m.param_id("layer1.target.bias").unwrap());
    let state = prednet::init_state(m.config(), 1, 8, 8).map_err(|e| e.to_string())?;
    let x1 = random_tensor(Shape::new(1, 1, 8, 8), 0.0, 1.0, 70);
    let x2 = random_tensor(Shape::new(1, 1, 8, 8), 0.0, 1.0, 71);
    let o1 = m.step(&state, &x1).map_err(|e| e.to_string())?;
    let o2 = m.step(&state, &x2).map_err(|e| e.to_string())?;
    ensure(o1.predictions == o2.predictions, || "first-step predictions depend on the frame".into())?;

    let ahat = &o1.predictions;
    let e0 = Tensor::from_fn(Shape::new(1, 2, 8, 8), |_, c, y, xx| {
        let d = x1.get(0, 0, y, xx) - ahat[0].get(0, 0, y, xx);
        if c == 0 { d.max(0.0) } else { (-d).max(0.0) }
    });
    let z = conv_oracle(&e0, &m.params()[k1.0], &m.params()[b1.0]).map(|v| v.max(0.0));
    let a1 = maxpool_oracle(&z);
    let got = &o1.targets[1];
    let diff = a1.data().iter().zip(got.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    ensure(diff < 1e-12, || format!("A_1 differs from the feedforward oracle by {diff:e}"))
}

pub fn invariant_suite() -> Vec<(&'static str, Result<(), String>)> {
    vec![
        ("zero-bias first prediction is uniform", check_zero_bias_uniform()),
        ("split error units are non-negative", check_errors_nonnegative()),
        ("maxpool after upsample is the identity", check_pool_upsample_identity()),
        ("error-unit algebraic identities", check_error_identities()),
        ("first step is a feedforward CNN", check_first_step_feedforward()),
    ]
}

/// Criterion-3 style oracle comparison over `pairs` random 32x32 frames.
/// Returns the max absolute deviations for (MSE, PSNR, SSIM) and whether
/// SSIM(x, x) was exactly 1 throughout.
pub fn metric_oracle_deviation(pairs: u64) -> (f64, f64, f64, bool) {
    use prednet::metrics::{mse, psnr, ssim, SsimParams};
    let p = SsimParams::default();
    let (mut dm, mut dp, mut ds, mut exact) = (0.0f64, 0.0f64, 0.0f64, true);
    for i in 0..pairs {
        let a = random_f32(Shape::new(1, 1, 32, 32), 1000 + 2 * i);
        let b = random_f32(Shape::new(1, 1, 32, 32), 1001 + 2 * i);
        dm = dm.max((mse(&a, &b).unwrap() - mse_oracle(&a, &b)).abs());
        dp = dp.max((psnr(&a, &b, 1.0).unwrap() - psnr_oracle(&a, &b)).abs());
        ds = ds.max((ssim(&a, &b, &p).unwrap() - ssim_oracle(&a, &b)).abs());
        exact &= ssim(&a, &a, &p).unwrap() == 1.0;
    }
    (dm, dp, ds, exact)
}

fn cli(args: &[&str]) -> Result<(), String> {
    use clap::Parser;
    let cli = prednet::cli::Cli::try_parse_from(std::iter::once("prednet").chain(args.iter().copied()))
        .map_err(|e| e.to_string())?;
    prednet::cli::run(cli).map_err(|e| format!("{args:?}: {e}"))
}

/// Runs generate, train, eval and readout through the command surface in
/// `root` and returns the bytes of every produced artifact that carries results.
pub fn cli_pipeline(root: &std::path::Path) -> Result<std::collections::BTreeMap<String, Vec<u8>>, String> {
    let p = |s: &str| root.join(s).to_string_lossy().into_owned();
    let config = format!(
        r#"{{
  "seed": 5,
  "generate": {{"count": 16, "seq_len": 6, "height": 32, "width": 32, "seed": 1}},
  "model": {{"num_layers": 2, "channels": [1, 4], "lambda_layer": "L0"}},
  "schedule": {{"epochs": 2, "samples_per_epoch": 8, "batch_size": 4}},
  "data": {{
    "train": {{"manifest": "{}"}},
    "val": {{"generate": {{"count": 4, "seq_len": 6, "height": 32, "width": 32, "seed": 9}}}},
    "test": {{"generate": {{"count": 12, "seq_len": 6, "height": 32, "width": 32, "seed": 11}}}}
  }},
  "eval": {{"curve": {{"t_switch": 4, "horizon": 2}}}},
  "readout": {{"train_sizes": [1, 2], "repeats": 2}}
}}"#,
        p("data/manifest.json")
    );
    std::fs::write(root.join("run.json"), config).map_err(|e| e.to_string())?;
    let cfg = p("run.json");
    cli(&["--config", &cfg, "--out", &p("data"), "generate"])?;
    cli(&["--config", &cfg, "--out", &p("train"), "train"])?;
    let ckpt = p("train/checkpoint.pnetw");
    cli(&["--config", &cfg, "--out", &p("eval"), "eval", "--checkpoint", &ckpt, "--curve"])?;
    cli(&["--config", &cfg, "--out", &p("readout"), "readout", "--checkpoint", &ckpt, "--random-baseline"])?;
    let mut out = std::collections::BTreeMap::new();
    for name in [
        "data/latents.csv",
        "data/frames/seq00000/frame000.pgm",
        "train/checkpoint.pnetw",
        "train/history.csv",
        "eval/metrics.csv",
        "eval/curve_00_checkpoint.csv",
        "readout/readout.csv",
    ] {
        let mut bytes = std::fs::read(root.join(name)).map_err(|e| format!("{name}: {e}"))?;
        if name.ends_with(".csv") {
            // Model labels embed the checkpoint path.
            let text = String::from_utf8(bytes).map_err(|e| e.to_string())?;
            bytes = text.replace(root.to_string_lossy().as_ref(), "<root>").into_bytes();
        }
        out.insert(name.to_string(), bytes);
    }
    Ok(out)
}
