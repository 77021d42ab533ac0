//! The `prednet` command surface: generate, train, predict, eval, readout.
//!
//! Every command reads an optional strict-JSON [`RunConfig`], applies the
//! global flag overrides, writes the resolved config to
//! `<out>/config.resolved.json` and keeps all outputs under `<out>`.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::config::{lambda_preset, PredNetConfig};
use crate::data::{
    self, frame_image, generate_moving_shapes, pnm_extension, save_pnm, scramble_time, DataSource, Manifest,
    MovingShapesSpec, SequenceBatch,
};
use crate::error::{Error, Result};
use crate::metrics::{evaluate, extrapolation_curve, FramePredictor, Named, SsimParams};
use crate::model::Model;
use crate::readout::{compare_trained_vs_random, write_readout_csv, ReadoutOptions};
use crate::tensor::{Shape, Tensor};
use crate::train::{finetune_extrapolation, save_history, train, TrainSchedule};

#[derive(Debug, Parser)]
#[command(name = "prednet", version, about = "Predictive-coding next-frame video prediction")]
pub struct Cli {
    /// JSON run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the run seed (and the shuffle / generator seed where relevant).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Sweep {
    TrainSize,
    T,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Materialize a moving-shapes dataset and its manifest.
    Generate,
    /// Train a model and keep the best-validation checkpoint.
    Train {
        /// Start from these weights instead of a fresh initialization.
        #[arg(long)]
        init: Option<PathBuf>,
        /// Run the extrapolation fine-tuning objective from the `finetune` section.
        #[arg(long)]
        finetune: bool,
    },
    /// Write predicted frames and ground-truth/prediction strips.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Frame directory to predict (default: `data.test`).
        #[arg(long)]
        input: Option<PathBuf>,
        /// Continue for this many steps on the model's own predictions.
        #[arg(long)]
        extrapolate: Option<usize>,
        /// Last ground-truth step when extrapolating (default: all frames).
        #[arg(long)]
        t_switch: Option<usize>,
        /// Temporally scramble each sequence before predicting.
        #[arg(long)]
        scramble: bool,
        /// Number of sequences written.
        #[arg(long, default_value_t = 4)]
        sequences: usize,
    },
    /// Score checkpoints against copy-last-frame on `data.test`.
    Eval {
        /// May be repeated; rows keep the given order.
        #[arg(long = "checkpoint")]
        checkpoints: Vec<PathBuf>,
        /// Also write per-offset extrapolation MSE.
        #[arg(long)]
        curve: bool,
    },
    /// Linear decoding of latents from the representation units.
    Readout {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Compare against a randomly initialized network of the same shape.
        #[arg(long)]
        random_baseline: bool,
        /// Sweeps to include (default: both).
        #[arg(long, value_enum)]
        sweep: Vec<Sweep>,
    },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    #[serde(default)]
    pub train: Option<DataSource>,
    #[serde(default)]
    pub val: Option<DataSource>,
    #[serde(default)]
    pub test: Option<DataSource>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FinetuneSpec {
    pub t_switch: usize,
    pub total: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurveSpec {
    pub t_switch: usize,
    pub horizon: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    #[serde(default)]
    pub checkpoints: Vec<PathBuf>,
    #[serde(default)]
    pub ssim: SsimParams,
    #[serde(default)]
    pub curve: Option<CurveSpec>,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            checkpoints: Vec::new(),
            ssim: SsimParams::default(),
            curve: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    #[serde(default)]
    pub generate: Option<MovingShapesSpec>,
    #[serde(default)]
    pub model: Option<PredNetConfig>,
    #[serde(default)]
    pub schedule: Option<TrainSchedule>,
    #[serde(default)]
    pub finetune: Option<FinetuneSpec>,
    #[serde(default)]
    pub data: DataSection,
    #[serde(default)]
    pub eval: EvalSection,
    #[serde(default)]
    pub readout: ReadoutOptions,
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            out: default_out(),
            generate: None,
            model: None,
            schedule: None,
            finetune: None,
            data: DataSection::default(),
            eval: EvalSection::default(),
            readout: ReadoutOptions::default(),
        }
    }
}

impl RunConfig {
    /// Parses strict JSON. `model.lambda_layer` may be a preset name
    /// (`"L0"` or `"Lall"`), expanded using `model.num_layers`.
    pub fn parse(text: &str, origin: &str) -> Result<RunConfig> {
        let mut value: serde_json::Value = data::parse_json(text, origin)?;
        if let Some(model) = value.get_mut("model").and_then(|m| m.as_object_mut()) {
            if let Some(name) = model.get("lambda_layer").and_then(|v| v.as_str()).map(str::to_string) {
                let layers = model
                    .get("num_layers")
                    .and_then(|v| v.as_u64())
                    .ok_or_else(|| Error::config(format!("{origin}: model.num_layers"), "required to expand a lambda preset"))?;
                let weights = lambda_preset(&name, layers as usize).map_err(|e| prefix(e, &format!("{origin}: model")))?;
                model.insert("lambda_layer".into(), serde_json::to_value(weights)?);
            }
        }
        let cfg: RunConfig = data::parse_json(&value.to_string(), origin)?;
        cfg.validate(origin)?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        Self::parse(&fs::read_to_string(path)?, &path.display().to_string())
    }

    /// Semantic checks, run before any compute.
    pub fn validate(&self, origin: &str) -> Result<()> {
        if let Some(m) = &self.model {
            m.validate().map_err(|e| prefix(e, &format!("{origin}: model")))?;
        }
        if let Some(s) = &self.schedule {
            s.validate().map_err(|e| match e {
                Error::Config { path, msg } => Error::Config {
                    path: format!("{origin}: {path}"),
                    msg,
                },
                other => other,
            })?;
        }
        Ok(())
    }

    fn write_resolved(&self, out: &Path) -> Result<()> {
        fs::write(out.join("config.resolved.json"), serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }
}

fn prefix(e: Error, at: &str) -> Error {
    match e {
        Error::Config { path, msg } => Error::Config {
            path: format!("{at}.{path}"),
            msg,
        },
        other => other,
    }
}

fn require<'a, T>(v: &'a Option<T>, path: &str) -> Result<&'a T> {
    v.as_ref()
        .ok_or_else(|| Error::config(path.to_string(), "required by this command"))
}

/// Parses arguments from the process and runs the command.
pub fn main() -> Result<()> {
    run(Cli::parse())
}

pub fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        // Ignore the error raised when a global pool already exists (repeated in-process runs).
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
        if let Some(s) = &mut cfg.schedule {
            s.seed = seed;
        }
        cfg.readout.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.out = out.clone();
    }
    fs::create_dir_all(&cfg.out)?;

    match &cli.command {
        Command::Generate => cmd_generate(&mut cfg, cli.seed),
        Command::Train { init, finetune } => cmd_train(&cfg, init.as_deref(), *finetune),
        Command::Predict {
            checkpoint,
            input,
            extrapolate,
            t_switch,
            scramble,
            sequences,
        } => cmd_predict(&cfg, checkpoint, input.as_deref(), *extrapolate, *t_switch, *scramble, *sequences),
        Command::Eval { checkpoints, curve } => {
            let mut list = cfg.eval.checkpoints.clone();
            list.extend(checkpoints.iter().cloned());
            cfg.eval.checkpoints = list;
            cmd_eval(&cfg, *curve)
        }
        Command::Readout {
            checkpoint,
            random_baseline,
            sweep,
        } => cmd_readout(&mut cfg, checkpoint, *random_baseline, sweep),
    }
}

pub fn cmd_generate(cfg: &mut RunConfig, seed_override: Option<u64>) -> Result<()> {
    let mut spec = cfg
        .generate
        .clone()
        .unwrap_or_else(|| MovingShapesSpec::new(200, 10, 32, 32, cfg.seed));
    if let Some(s) = seed_override {
        spec.seed = s;
    }
    cfg.generate = Some(spec.clone());
    cfg.write_resolved(&cfg.out)?;
    let batch = generate_moving_shapes(&spec)?;
    data::materialize(&batch, &cfg.out.join("frames"))?;
    let manifest = Manifest::Generated {
        spec,
        frames_dir: Some("frames".into()),
    };
    manifest.write(&cfg.out.join("manifest.json"))?;
    let mut w = csv::Writer::from_path(cfg.out.join("latents.csv"))?;
    for (i, r) in batch.latents.iter().flatten().enumerate() {
        w.serialize(LatentRow {
            sequence: i,
            shape_id: r.shape_id,
            size: r.size,
            row0: r.initial_position.0,
            col0: r.initial_position.1,
            d_row: r.velocity.0,
            d_col: r.velocity.1,
            intensity: r.intensity,
        })?;
    }
    w.flush()?;
    log::info!("wrote {} sequences x {} frames to {}", batch.len(), batch.seq_len(), cfg.out.display());
    Ok(())
}

#[derive(Serialize)]
struct LatentRow {
    sequence: usize,
    shape_id: usize,
    size: f64,
    row0: f64,
    col0: f64,
    d_row: f64,
    d_col: f64,
    intensity: f64,
}

fn load_source(src: &Option<DataSource>, path: &str) -> Result<SequenceBatch> {
    require(src, path)?.load(Path::new("."))
}

pub fn cmd_train(cfg: &RunConfig, init: Option<&Path>, finetune: bool) -> Result<()> {
    let schedule = require(&cfg.schedule, "schedule")?.clone();
    let model = match init {
        Some(p) => checkpoint::load(p)?,
        None => Model::new(require(&cfg.model, "model")?.clone(), cfg.seed)?,
    };
    let ft = if finetune {
        Some(*require(&cfg.finetune, "finetune")?)
    } else {
        None
    };
    cfg.write_resolved(&cfg.out)?;
    let train_set = load_source(&cfg.data.train, "data.train")?;
    let val_set = load_source(&cfg.data.val, "data.val")?;
    let outcome = match ft {
        Some(f) => finetune_extrapolation(model, &train_set, &val_set, &schedule, f.t_switch, f.total),
        None => train(model, &train_set, &val_set, &schedule),
    };
    let outcome = match outcome {
        Err(Error::Diverged { epoch, last_good }) => {
            if let Some(m) = &last_good {
                checkpoint::save(m, &cfg.out.join("last_good.pnetw"))?;
            }
            return Err(Error::Diverged { epoch, last_good });
        }
        other => other?,
    };
    checkpoint::save(&outcome.model, &cfg.out.join("checkpoint.pnetw"))?;
    save_history(&outcome.history, &cfg.out.join("history.csv"))?;
    log::info!(
        "best epoch {} (val {:.6}); checkpoint in {}",
        outcome.best_epoch,
        outcome.best_val_loss,
        cfg.out.display()
    );
    Ok(())
}

/// Ground truth over prediction, one column per timestep. Missing ground
/// truth is left black.
pub fn strip_image(truth: &[Tensor<f32>], preds: &[Tensor<f32>], n: usize) -> Result<image::DynamicImage> {
    let s = preds[0].shape();
    let cols = preds.len().max(truth.len());
    let (w, h) = (s.w as u32, s.h as u32);
    let mut canvas = if s.c == 1 {
        image::DynamicImage::new_luma8(w * cols as u32, 2 * h)
    } else {
        image::DynamicImage::new_rgb8(w * cols as u32, 2 * h)
    };
    for (t, f) in truth.iter().enumerate() {
        image::imageops::replace(&mut canvas, &frame_image(f, n)?, (t as u32 * w) as i64, 0);
    }
    for (t, f) in preds.iter().enumerate() {
        image::imageops::replace(&mut canvas, &frame_image(f, n)?, (t as u32 * w) as i64, h as i64);
    }
    Ok(canvas)
}

pub fn cmd_predict(
    cfg: &RunConfig,
    ckpt: &Path,
    input: Option<&Path>,
    extrapolate: Option<usize>,
    t_switch: Option<usize>,
    scramble: bool,
    sequences: usize,
) -> Result<()> {
    let model = checkpoint::load(ckpt)?;
    let mut batch = match input {
        Some(dir) => {
            let seq_len = cfg
                .data
                .test
                .as_ref()
                .and_then(|s| match s {
                    DataSource::Frames(f) => Some(f.seq_len),
                    _ => None,
                })
                .unwrap_or(10);
            let shape = expected_frame(cfg, &model);
            data::load_frame_dir(dir, seq_len, seq_len, model.config().image_channels() == 1, (shape.h, shape.w))?
        }
        None => load_source(&cfg.data.test, "data.test")?,
    };
    if scramble {
        batch = scramble_time(&batch, cfg.seed)?;
    }
    let frame_shape = batch.frame_shape();
    let want = model.config().image_channels();
    if frame_shape.c != want {
        return Err(Error::shape(
            "predict",
            format!("frames with {want} channels (h, w divisible by {})", model.config().spatial_divisor()),
            frame_shape,
        ));
    }
    cfg.write_resolved(&cfg.out)?;
    let t = batch.seq_len();
    let switch = t_switch.unwrap_or(t).min(t);
    let horizon = extrapolate.unwrap_or(0);
    let ext = pnm_extension(frame_shape.c);
    let dir = cfg.out.join("predict");
    for i in 0..sequences.min(batch.len()) {
        let frames = batch.sequence(i);
        let preds = if horizon > 0 || switch < t {
            model.extrapolate(&frames, switch, horizon + t - switch)?
        } else {
            model.run_sequence(&frames)?.predictions
        };
        let seq_dir = dir.join(format!("seq{i:05}"));
        fs::create_dir_all(&seq_dir)?;
        for (ti, p) in preds.iter().enumerate() {
            save_pnm(&frame_image(p, 0)?, &seq_dir.join(format!("pred_t{:03}.{ext}", ti + 1)))?;
        }
        save_pnm(&strip_image(&frames, &preds, 0)?, &seq_dir.join(format!("strip.{ext}")))?;
    }
    log::info!("wrote predictions to {}", dir.display());
    Ok(())
}

fn expected_frame(cfg: &RunConfig, model: &Model<f32>) -> Shape {
    match &cfg.data.test {
        Some(DataSource::Frames(f)) => Shape::new(1, model.config().image_channels(), f.height, f.width),
        Some(DataSource::Generate(g)) => Shape::new(1, 1, g.height, g.width),
        _ => Shape::new(1, model.config().image_channels(), 32, 32),
    }
}

fn stem(p: &Path) -> String {
    p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| p.display().to_string())
}

pub fn cmd_eval(cfg: &RunConfig, curve: bool) -> Result<()> {
    if cfg.eval.checkpoints.is_empty() {
        return Err(Error::config("eval.checkpoints", "no checkpoints given (use --checkpoint)"));
    }
    let curve_spec = if curve {
        Some(*require(&cfg.eval.curve, "eval.curve")?)
    } else {
        None
    };
    cfg.write_resolved(&cfg.out)?;
    let test = load_source(&cfg.data.test, "data.test")?;
    let models = cfg
        .eval
        .checkpoints
        .iter()
        .map(|p| {
            let m = checkpoint::load(p)?;
            Ok((format!("{} [{}]", m.config().variant.display_name(), p.display()), m))
        })
        .collect::<Result<Vec<_>>>()?;
    let named: Vec<Named<Model<f32>>> = models.iter().map(|(n, m)| Named(n.clone(), m)).collect();
    let preds: Vec<&dyn FramePredictor> = named.iter().map(|n| n as &dyn FramePredictor).collect();
    let dataset = match &cfg.data.test {
        Some(DataSource::Manifest(p)) => p.display().to_string(),
        Some(DataSource::Generate(g)) => format!("moving shapes (seed {})", g.seed),
        _ => "frames".to_string(),
    };
    let report = evaluate(&preds, &test, &dataset, &cfg.eval.ssim)?;
    report.write_csv(fs::File::create(cfg.out.join("metrics.csv"))?)?;
    let text = report.to_text();
    fs::write(cfg.out.join("metrics.txt"), &text)?;
    print!("{text}");
    if let Some(c) = curve_spec {
        for (i, ((_, m), path)) in models.iter().zip(&cfg.eval.checkpoints).enumerate() {
            let curve = extrapolation_curve(m, &test, c.t_switch, c.horizon)?;
            curve.write_csv(fs::File::create(cfg.out.join(format!("curve_{i:02}_{}.csv", stem(path))))?)?;
        }
    }
    Ok(())
}

pub fn cmd_readout(cfg: &mut RunConfig, ckpt: &Path, random_baseline: bool, sweeps: &[Sweep]) -> Result<()> {
    let trained = checkpoint::load(ckpt)?;
    if !sweeps.is_empty() {
        if !sweeps.contains(&Sweep::TrainSize) {
            cfg.readout.train_sizes.clear();
        }
        cfg.readout.t_sweep = sweeps.contains(&Sweep::T);
    }
    cfg.write_resolved(&cfg.out)?;
    let fit = load_source(&cfg.data.train, "data.train")?;
    let test = load_source(&cfg.data.test, "data.test")?;
    let random = Model::new(trained.config().clone(), cfg.seed)?;
    let mut conditions: Vec<(&str, &Model<f32>)> = vec![("trained", &trained)];
    if random_baseline {
        conditions.push(("random", &random));
    }
    let rows = compare_trained_vs_random(&conditions, &fit, &test, &cfg.readout)?;
    write_readout_csv(&rows, fs::File::create(cfg.out.join("readout.csv"))?)?;
    log::info!("wrote {} readout rows", rows.len());
    Ok(())
}
