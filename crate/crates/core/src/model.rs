//! The stacked predictive-coding network and its control variants.
//!
//! Each timestep runs two passes. The top-down pass updates the recurrent
//! representations `R_l` from the top layer to the bottom. The bottom-up pass
//! then computes predictions `Â_l`, error units `E_l` and the next layer's
//! target `A_{l+1}`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{Forwarded, PredNetConfig, Variant};
use crate::error::{Error, Result};
use crate::kernels;
use crate::tape::{ParamId, Tape, Var};
use crate::tensor::{Scalar, Shape, Tensor};

/// Gate order inside the stacked ConvLSTM kernel.
pub const GATES: [&str; 4] = ["input", "forget", "cell", "output"];

/// Initial bias of the forget gate.
pub const FORGET_BIAS: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Init {
    /// Glorot-uniform; each of `blocks` output blocks is treated as its own layer.
    Glorot { blocks: usize },
    Bias { forget_gate: bool },
}

#[derive(Debug, Clone)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Shape,
    init: Init,
}

/// Indices of one layer's parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerParams {
    /// `(4 * channels[l], lstm_input_width(l), k_r, k_r)`, gates stacked in [`GATES`] order.
    pub lstm_kernel: ParamId,
    pub lstm_bias: ParamId,
    /// `R_l -> Â_l`.
    pub pred_kernel: ParamId,
    pub pred_bias: ParamId,
    /// Forwarded tensor of layer `l - 1` -> `A_l`; absent at `l = 0`.
    pub target: Option<(ParamId, ParamId)>,
}

/// Parameter layout implied by a configuration, in a fixed order.
pub fn param_specs(config: &PredNetConfig) -> (Vec<ParamSpec>, Vec<LayerParams>) {
    let mut specs = Vec::new();
    let mut layers = Vec::new();
    let push = |specs: &mut Vec<ParamSpec>, name: String, shape: Shape, init: Init| {
        specs.push(ParamSpec { name, shape, init });
        ParamId(specs.len() - 1)
    };
    for l in 0..config.num_layers {
        let c = config.channels[l];
        let kr = config.filter_size_r;
        let lstm_kernel = push(
            &mut specs,
            format!("layer{l}.lstm.kernel"),
            Shape::new(4 * c, config.lstm_input_width(l), kr, kr),
            Init::Glorot { blocks: 4 },
        );
        let lstm_bias = push(
            &mut specs,
            format!("layer{l}.lstm.bias"),
            Shape::new(1, 4 * c, 1, 1),
            Init::Bias { forget_gate: true },
        );
        let ka = config.filter_size_ahat;
        let a = config.target_width(l);
        let pred_kernel = push(
            &mut specs,
            format!("layer{l}.pred.kernel"),
            Shape::new(a, c, ka, ka),
            Init::Glorot { blocks: 1 },
        );
        let pred_bias = push(
            &mut specs,
            format!("layer{l}.pred.bias"),
            Shape::new(1, a, 1, 1),
            Init::Bias { forget_gate: false },
        );
        let target = (l > 0).then(|| {
            let kt = config.filter_size_a;
            let k = push(
                &mut specs,
                format!("layer{l}.target.kernel"),
                Shape::new(a, config.forwarded_width(l - 1), kt, kt),
                Init::Glorot { blocks: 1 },
            );
            let b = push(
                &mut specs,
                format!("layer{l}.target.bias"),
                Shape::new(1, a, 1, 1),
                Init::Bias { forget_gate: false },
            );
            (k, b)
        });
        layers.push(LayerParams {
            lstm_kernel,
            lstm_bias,
            pred_kernel,
            pred_bias,
            target,
        });
    }
    (specs, layers)
}

/// Network weights plus the configuration that wires them.
#[derive(Debug, Clone, PartialEq)]
pub struct Model<T: Scalar = f32> {
    config: PredNetConfig,
    names: Vec<String>,
    params: Vec<Tensor<T>>,
    layers: Vec<LayerParams>,
}

/// Builds the network for `config.variant` with seeded initial weights.
///
/// Kernels are Glorot-uniform, the forget-gate bias is +1 and every other bias is 0.
pub fn build_variant<T: Scalar>(config: &PredNetConfig, seed: u64) -> Result<Model<T>> {
    Model::new(config.clone(), seed)
}

impl<T: Scalar> Model<T> {
    pub fn new(config: PredNetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let (specs, layers) = param_specs(&config);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = specs
            .iter()
            .map(|s| init_param(s, &mut rng))
            .collect();
        Ok(Model {
            names: specs.into_iter().map(|s| s.name).collect(),
            config,
            params,
            layers,
        })
    }

    /// Model with every weight and bias set to zero.
    pub fn zeroed(config: PredNetConfig) -> Result<Self> {
        let mut m = Self::new(config, 0)?;
        for p in &mut m.params {
            p.data_mut().fill(T::zero());
        }
        Ok(m)
    }

    pub fn from_params(config: PredNetConfig, params: Vec<Tensor<T>>) -> Result<Self> {
        config.validate()?;
        let (specs, layers) = param_specs(&config);
        if specs.len() != params.len() {
            return Err(Error::invalid(
                "model",
                format!("expected {} parameter tensors, got {}", specs.len(), params.len()),
            ));
        }
        for (s, p) in specs.iter().zip(&params) {
            if s.shape != p.shape() {
                return Err(Error::shape("model", format!("{} of shape {}", s.name, s.shape), p.shape()));
            }
        }
        Ok(Model {
            names: specs.into_iter().map(|s| s.name).collect(),
            config,
            params,
            layers,
        })
    }

    pub fn config(&self) -> &PredNetConfig {
        &self.config
    }

    pub fn params(&self) -> &[Tensor<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.params
    }

    pub fn param_names(&self) -> &[String] {
        &self.names
    }

    pub fn param_id(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn layer_params(&self, l: usize) -> LayerParams {
        self.layers[l]
    }

    /// Total number of scalar weights.
    pub fn num_weights(&self) -> usize {
        self.params.iter().map(|p| p.len()).sum()
    }

    pub fn cast<U: Scalar>(&self) -> Model<U> {
        Model {
            config: self.config.clone(),
            names: self.names.clone(),
            params: self.params.iter().map(|p| p.cast()).collect(),
            layers: self.layers.clone(),
        }
    }

    /// Registers every parameter on `tape`; the result is indexed by `ParamId`.
    pub fn bind(&self, tape: &mut Tape<T>) -> Vec<Var> {
        self.params
            .iter()
            .enumerate()
            .map(|(i, p)| tape.param(ParamId(i), p.clone()))
            .collect()
    }
}

fn init_param<T: Scalar>(spec: &ParamSpec, rng: &mut ChaCha8Rng) -> Tensor<T> {
    let s = spec.shape;
    match spec.init {
        Init::Glorot { blocks } => {
            let k2 = s.h * s.w;
            let fan_in = s.c * k2;
            let fan_out = (s.n / blocks) * k2;
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            Tensor::from_fn(s, |_, _, _, _| T::from_f64_lossy(rng.gen_range(-limit..limit)))
        }
        Init::Bias { forget_gate } => {
            let mut t = Tensor::zeros(s);
            if forget_gate {
                let c = s.c / 4;
                for v in &mut t.data_mut()[c..2 * c] {
                    *v = T::from_f64_lossy(FORGET_BIAS);
                }
            }
            t
        }
    }
}

/// Recurrent state carried between timesteps.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkState<T: Scalar = f32> {
    /// Representation (hidden) units `R_l`.
    pub r: Vec<Tensor<T>>,
    /// ConvLSTM cell memory per layer.
    pub c: Vec<Tensor<T>>,
    /// Previous step's forwarded tensor per layer: the error units `E_l`
    /// for the full model, the activations for encoder-decoder controls.
    pub e: Vec<Tensor<T>>,
}

/// Zero state at the per-layer resolutions `(h / 2^l, w / 2^l)`.
pub fn init_state<T: Scalar>(config: &PredNetConfig, batch: usize, h: usize, w: usize) -> Result<NetworkState<T>> {
    config.validate()?;
    let d = config.spatial_divisor();
    if h % d != 0 || w % d != 0 || h == 0 || w == 0 {
        return Err(Error::invalid(
            "init_state",
            format!(
                "frame size {h}x{w} must be a positive multiple of {d} (2^(layers - 1)) for {} layers",
                config.num_layers
            ),
        ));
    }
    let mut state = NetworkState {
        r: Vec::new(),
        c: Vec::new(),
        e: Vec::new(),
    };
    for l in 0..config.num_layers {
        let (hl, wl) = (h >> l, w >> l);
        let rs = Shape::new(batch, config.channels[l], hl, wl);
        state.r.push(Tensor::zeros(rs));
        state.c.push(Tensor::zeros(rs));
        state
            .e
            .push(Tensor::zeros(Shape::new(batch, config.forwarded_width(l), hl, wl)));
    }
    Ok(state)
}

impl<T: Scalar> NetworkState<T> {
    pub fn to_tape(&self, tape: &mut Tape<T>) -> TapeState {
        TapeState {
            r: self.r.iter().map(|t| tape.constant(t.clone())).collect(),
            c: self.c.iter().map(|t| tape.constant(t.clone())).collect(),
            e: self.e.iter().map(|t| tape.constant(t.clone())).collect(),
        }
    }

    pub fn abs_sum(&self) -> T {
        self.r
            .iter()
            .chain(&self.c)
            .chain(&self.e)
            .map(|t| t.abs_sum())
            .fold(T::zero(), |a, b| a + b)
    }
}

/// [`NetworkState`] recorded on a tape.
#[derive(Debug, Clone)]
pub struct TapeState {
    pub r: Vec<Var>,
    pub c: Vec<Var>,
    pub e: Vec<Var>,
}

impl TapeState {
    pub fn values<T: Scalar>(&self, tape: &Tape<T>) -> NetworkState<T> {
        NetworkState {
            r: self.r.iter().map(|&v| tape.value(v).clone()).collect(),
            c: self.c.iter().map(|&v| tape.value(v).clone()).collect(),
            e: self.e.iter().map(|&v| tape.value(v).clone()).collect(),
        }
    }
}

/// Unit updates in the order a step performs them.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Representation(usize),
    Prediction(usize),
    Error(usize),
    Target(usize),
}

/// What the bottom layer sees at a timestep.
#[derive(Debug, Clone, Copy)]
pub enum FrameInput {
    Frame(Var),
    /// Use the step's own prediction `Â_0` as the input.
    OwnPrediction,
}

#[derive(Debug, Clone)]
pub struct TapeStep {
    /// `Â_0`.
    pub prediction: Var,
    /// The bottom-layer input actually used.
    pub input: Var,
    pub targets: Vec<Var>,
    pub predictions: Vec<Var>,
    /// Error units per layer, as used by the loss.
    pub errors: Vec<Var>,
    /// Tensor forwarded upward from each layer.
    pub forwarded: Vec<Var>,
    pub state: TapeState,
    pub trace: Vec<Stage>,
}

/// `[ReLU(A - Â); ReLU(Â - A)]`.
pub fn error_unit<T: Scalar>(a: &Tensor<T>, ahat: &Tensor<T>) -> Result<Tensor<T>> {
    let d = kernels::subtract(a, ahat)?;
    let pos = kernels::relu(&d);
    let neg = kernels::relu(&kernels::subtract(ahat, a)?);
    kernels::concat_channels(&pos, &neg)
}

fn error_unit_on_tape<T: Scalar>(tape: &mut Tape<T>, a: Var, ahat: Var, split: bool) -> Result<Var> {
    if tape.shape(a) != tape.shape(ahat) {
        return Err(Error::shape("error_unit", tape.shape(a), tape.shape(ahat)));
    }
    let d = tape.subtract(a, ahat)?;
    if !split {
        return Ok(d);
    }
    let pos = tape.relu(d)?;
    let nd = tape.subtract(ahat, a)?;
    let neg = tape.relu(nd)?;
    tape.concat_channels(pos, neg)
}

/// One ConvLSTM update. Gates are convolutions over `[lateral; hidden; top_down]`.
///
/// `i, f, o = σ(·)`, `g = tanh(·)`, `c' = f ⊙ c + i ⊙ g`, `h' = o ⊙ tanh(c')`.
pub fn convlstm_cell<T: Scalar>(
    tape: &mut Tape<T>,
    lateral: Var,
    hidden: Var,
    top_down: Option<Var>,
    cell: Var,
    kernel: Var,
    bias: Var,
) -> Result<(Var, Var)> {
    let hs = tape.shape(hidden);
    if hs != tape.shape(cell) {
        return Err(Error::shape("convlstm_cell", hs, tape.shape(cell)));
    }
    let mut parts = vec![lateral, hidden];
    parts.extend(top_down);
    let inputs = tape.concat_all(&parts)?;
    let z = tape.conv2d(inputs, kernel, bias)?;
    let c = hs.c;
    if tape.shape(z).c != 4 * c {
        return Err(Error::shape(
            "convlstm_cell",
            format!("kernel with {} output channels", 4 * c),
            format!("{} output channels", tape.shape(z).c),
        ));
    }
    let zi = tape.slice_channels(z, 0, c)?;
    let zf = tape.slice_channels(z, c, c)?;
    let zg = tape.slice_channels(z, 2 * c, c)?;
    let zo = tape.slice_channels(z, 3 * c, c)?;
    let i = tape.sigmoid(zi)?;
    let f = tape.sigmoid(zf)?;
    let g = tape.tanh(zg)?;
    let o = tape.sigmoid(zo)?;
    let keep = tape.hadamard(f, cell)?;
    let write = tape.hadamard(i, g)?;
    let c_new = tape.add(keep, write)?;
    let squashed = tape.tanh(c_new)?;
    let h_new = tape.hadamard(o, squashed)?;
    Ok((h_new, c_new))
}

impl<T: Scalar> Model<T> {
    /// One timestep on `tape`. `params` comes from [`Model::bind`].
    pub fn step_on_tape(
        &self,
        tape: &mut Tape<T>,
        params: &[Var],
        state: &TapeState,
        input: FrameInput,
    ) -> Result<TapeStep> {
        let cfg = &self.config;
        let nl = cfg.num_layers;
        let p_max = T::from_f64_lossy(cfg.p_max);
        let mut trace = Vec::with_capacity(4 * nl);

        if let FrameInput::Frame(x) = input {
            let xs = tape.shape(x);
            let want = tape.shape(state.r[0]);
            if xs != want {
                return Err(Error::shape(
                    "step",
                    format!("frame of shape {want} (batch, channels[0], h, w)"),
                    xs,
                ));
            }
            if tape.is_checked() {
                let bad = tape.value(x).data().iter().any(|&v| !(v >= T::zero() && v <= p_max));
                if bad {
                    return Err(Error::invalid("step", format!("frame values must lie in [0, {p_max}]")));
                }
            }
        }

        // Top-down pass.
        let mut r = vec![None; nl];
        let mut c = vec![None; nl];
        for l in (0..nl).rev() {
            let lp = self.layers[l];
            let top_down = match r.get(l + 1) {
                Some(&Some(above)) => Some(tape.upsample_nn2(above)?),
                _ => None,
            };
            let (h, cell) = convlstm_cell(
                tape,
                state.e[l],
                state.r[l],
                top_down,
                state.c[l],
                params[lp.lstm_kernel.0],
                params[lp.lstm_bias.0],
            )?;
            r[l] = Some(h);
            c[l] = Some(cell);
            trace.push(Stage::Representation(l));
        }
        let r: Vec<Var> = r.into_iter().map(|v| v.expect("every layer updated")).collect();
        let c: Vec<Var> = c.into_iter().map(|v| v.expect("every layer updated")).collect();

        // Bottom-up pass.
        let mut targets = Vec::with_capacity(nl);
        let mut predictions = Vec::with_capacity(nl);
        let mut errors = Vec::with_capacity(nl);
        let mut forwarded = Vec::with_capacity(nl);
        let mut prediction = None;
        let mut frame_used = None;
        let mut a = match input {
            FrameInput::Frame(x) => Some(x),
            FrameInput::OwnPrediction => None,
        };
        for l in 0..nl {
            let lp = self.layers[l];
            let pre = tape.conv2d(r[l], params[lp.pred_kernel.0], params[lp.pred_bias.0])?;
            let mut ahat = tape.relu(pre)?;
            if l == 0 {
                ahat = tape.satlu(ahat, p_max)?;
                prediction = Some(ahat);
            }
            predictions.push(ahat);
            trace.push(Stage::Prediction(l));

            let target = a.unwrap_or(ahat);
            if l == 0 {
                frame_used = Some(target);
            }
            targets.push(target);
            let e = error_unit_on_tape(tape, target, ahat, cfg.variant.splits_errors())?;
            errors.push(e);
            trace.push(Stage::Error(l));

            let fwd = match cfg.forwarded(l) {
                Forwarded::Error => e,
                Forwarded::Activation => target,
                Forwarded::ActivationSplit => {
                    let pos = tape.relu(target)?;
                    let flipped = tape.scale(target, -T::one())?;
                    let neg = tape.relu(flipped)?;
                    tape.concat_channels(pos, neg)?
                }
            };
            forwarded.push(fwd);

            if l + 1 < nl {
                let (k, b) = self.layers[l + 1].target.expect("upper layers have target weights");
                let z = tape.conv2d(fwd, params[k.0], params[b.0])?;
                let z = if cfg.variant == Variant::EncDecPmSplit {
                    z
                } else {
                    tape.relu(z)?
                };
                a = Some(tape.maxpool2(z)?);
                trace.push(Stage::Target(l + 1));
            }
        }

        Ok(TapeStep {
            prediction: prediction.expect("layer 0 exists"),
            input: frame_used.expect("layer 0 exists"),
            targets,
            predictions,
            errors,
            state: TapeState {
                r,
                c,
                e: forwarded.clone(),
            },
            forwarded,
            trace,
        })
    }

    /// Runs `total` steps from the zero state. Ground-truth frames are fed for the
    /// first `t_switch` steps; afterwards each step consumes its own prediction.
    pub fn unroll_on_tape(
        &self,
        tape: &mut Tape<T>,
        params: &[Var],
        frames: &[Tensor<T>],
        t_switch: usize,
        total: usize,
    ) -> Result<Vec<TapeStep>> {
        if total == 0 {
            return Err(Error::invalid("run_sequence", "empty sequence"));
        }
        if t_switch > frames.len() {
            return Err(Error::invalid(
                "extrapolate",
                format!("t_switch = {t_switch} exceeds the {} available frames", frames.len()),
            ));
        }
        if t_switch == 0 {
            return Err(Error::invalid("extrapolate", "at least one ground-truth frame is required"));
        }
        let s0 = frames[0].shape();
        let first = init_state::<T>(&self.config, s0.n, s0.h, s0.w)?;
        let mut state = first.to_tape(tape);
        let mut steps = Vec::with_capacity(total);
        for t in 0..total {
            let input = if t < t_switch {
                if frames[t].shape() != s0 {
                    return Err(Error::shape("run_sequence", s0, frames[t].shape()));
                }
                FrameInput::Frame(tape.constant(frames[t].clone()))
            } else {
                FrameInput::OwnPrediction
            };
            let step = self.step_on_tape(tape, params, &state, input)?;
            state = step.state.clone();
            steps.push(step);
        }
        Ok(steps)
    }

    /// Single inference step from a concrete state.
    pub fn step(&self, state: &NetworkState<T>, frame: &Tensor<T>) -> Result<StepOutput<T>> {
        let mut tape = Tape::inference();
        let params = self.bind(&mut tape);
        let ts = state.to_tape(&mut tape);
        let x = tape.constant(frame.clone());
        let step = self.step_on_tape(&mut tape, &params, &ts, FrameInput::Frame(x))?;
        Ok(StepOutput {
            prediction: tape.value(step.prediction).clone(),
            errors: step.errors.iter().map(|&e| tape.value(e).clone()).collect(),
            targets: step.targets.iter().map(|&e| tape.value(e).clone()).collect(),
            predictions: step.predictions.iter().map(|&e| tape.value(e).clone()).collect(),
            forwarded: step.forwarded.iter().map(|&e| tape.value(e).clone()).collect(),
            state: step.state.values(&tape),
            trace: step.trace,
        })
    }

    /// Teacher-forced pass over a whole sequence (inference mode).
    pub fn run_sequence(&self, frames: &[Tensor<T>]) -> Result<SequenceOutput<T>> {
        self.run_with_switch(frames, frames.len(), frames.len())
    }

    /// Predictions for `t = 1 ..= t_switch + horizon`; after `t_switch` the model's
    /// own prediction is fed back as input.
    pub fn extrapolate(&self, frames: &[Tensor<T>], t_switch: usize, horizon: usize) -> Result<Vec<Tensor<T>>> {
        Ok(self.run_with_switch(frames, t_switch, t_switch + horizon)?.predictions)
    }

    fn run_with_switch(&self, frames: &[Tensor<T>], t_switch: usize, total: usize) -> Result<SequenceOutput<T>> {
        if frames.is_empty() {
            return Err(Error::invalid("run_sequence", "empty sequence"));
        }
        let mut tape = Tape::inference();
        let params = self.bind(&mut tape);
        let steps = self.unroll_on_tape(&mut tape, &params, frames, t_switch, total)?;
        let last = steps.last().expect("non-empty");
        Ok(SequenceOutput {
            predictions: steps.iter().map(|s| tape.value(s.prediction).clone()).collect(),
            mean_errors: steps
                .iter()
                .map(|s| s.errors.iter().map(|&e| tape.value(e).mean_f64()).collect())
                .collect(),
            final_state: last.state.values(&tape),
            representations: steps
                .iter()
                .map(|s| s.state.r.iter().map(|&r| tape.value(r).clone()).collect())
                .collect(),
        })
    }
}

#[derive(Debug, Clone)]
pub struct StepOutput<T: Scalar = f32> {
    pub prediction: Tensor<T>,
    pub errors: Vec<Tensor<T>>,
    pub targets: Vec<Tensor<T>>,
    /// `Â_l` per layer.
    pub predictions: Vec<Tensor<T>>,
    pub forwarded: Vec<Tensor<T>>,
    pub state: NetworkState<T>,
    pub trace: Vec<Stage>,
}

#[derive(Debug, Clone)]
pub struct SequenceOutput<T: Scalar = f32> {
    /// `Â_0^t` for every step.
    pub predictions: Vec<Tensor<T>>,
    /// Mean error-unit activation per `(t, l)`, averaged over the batch.
    pub mean_errors: Vec<Vec<f64>>,
    pub final_state: NetworkState<T>,
    /// `R_l^t` per `(t, l)`.
    pub representations: Vec<Vec<Tensor<T>>>,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame(shape: Shape, seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(shape, |_, _, _, _| rng.gen_range(0.0..1.0))
    }

    #[test]
    fn init_state_shapes_and_zeros() {
        let cfg = PredNetConfig::new(&[1, 8], Variant::PredNet);
        let s = init_state::<f32>(&cfg, 1, 16, 16).unwrap();
        assert_eq!(s.r[0].shape(), Shape::new(1, 1, 16, 16));
        assert_eq!(s.r[1].shape(), Shape::new(1, 8, 8, 8));
        assert_eq!(s.e[0].shape(), Shape::new(1, 2, 16, 16));
        assert_eq!(s.e[1].shape(), Shape::new(1, 16, 8, 8));
        assert_eq!(s.abs_sum(), 0.0);
    }

    #[test]
    fn init_state_five_layers_top_is_4x4() {
        let cfg = PredNetConfig::new(&[1, 32, 64, 128, 256], Variant::PredNet);
        let s = init_state::<f32>(&cfg, 1, 64, 64).unwrap();
        assert_eq!(s.r[4].shape(), Shape::new(1, 256, 4, 4));
    }

    #[test]
    fn init_state_names_divisor() {
        let cfg = PredNetConfig::new(&[1, 4, 4], Variant::PredNet);
        let err = init_state::<f32>(&cfg, 1, 10, 12).unwrap_err().to_string();
        assert!(err.contains("multiple of 4"), "{err}");
    }

    #[test]
    fn parameter_shapes_follow_layout() {
        let cfg = PredNetConfig::new(&[1, 8, 16], Variant::PredNet);
        let m = Model::<f32>::new(cfg, 0).unwrap();
        let shape = |n: &str| m.params()[m.param_id(n).unwrap().0].shape();
        assert_eq!(shape("layer1.pred.kernel"), Shape::new(8, 8, 3, 3));
        assert_eq!(shape("layer1.target.kernel"), Shape::new(8, 2, 3, 3));
        assert_eq!(shape("layer2.target.kernel"), Shape::new(16, 16, 3, 3));
        assert_eq!(shape("layer0.lstm.kernel"), Shape::new(4, 2 + 1 + 8, 3, 3));
        assert!(m.param_id("layer0.target.kernel").is_none());
        let bias = &m.params()[m.param_id("layer1.lstm.bias").unwrap().0];
        assert_eq!(&bias.data()[..8], &[0.0; 8]);
        assert_eq!(&bias.data()[8..16], &[1.0; 8]);
        assert_eq!(&bias.data()[16..], &[0.0; 16]);
    }

    #[test]
    fn error_unit_definition() {
        let a = Tensor::<f64>::scalar(0.2);
        let ahat = Tensor::<f64>::scalar(0.5);
        let e = error_unit(&a, &ahat).unwrap();
        assert_eq!(e.shape(), Shape::new(1, 2, 1, 1));
        assert_eq!(e.data()[0], 0.0);
        assert!((e.data()[1] - 0.3).abs() < 1e-15);
        assert_eq!(error_unit(&a, &a).unwrap().abs_sum(), 0.0);
        assert!(error_unit(&a, &Tensor::zeros(Shape::new(1, 2, 1, 1))).is_err());
    }

    #[test]
    fn zero_lstm_gives_zero_state() {
        let mut tape = Tape::<f64>::new();
        let z = |tape: &mut Tape<f64>, s| tape.constant(Tensor::zeros(s));
        let s = Shape::new(1, 2, 4, 4);
        let (e, h, c) = (z(&mut tape, s), z(&mut tape, s), z(&mut tape, s));
        let k = z(&mut tape, Shape::new(8, 4, 3, 3));
        let b = z(&mut tape, Shape::new(1, 8, 1, 1));
        let (h2, c2) = convlstm_cell(&mut tape, e, h, None, c, k, b).unwrap();
        assert_eq!(tape.value(h2).abs_sum(), 0.0);
        assert_eq!(tape.value(c2).abs_sum(), 0.0);
    }

    #[test]
    fn saturated_gates_keep_cell() {
        let mut tape = Tape::<f64>::new();
        let s = Shape::new(1, 2, 4, 4);
        let cell = frame(s, 3).map(|v| v - 0.5);
        let e = tape.constant(Tensor::zeros(s));
        let h = tape.constant(Tensor::zeros(s));
        let c = tape.constant(cell.clone());
        let k = tape.constant(Tensor::zeros(Shape::new(8, 4, 3, 3)));
        let mut bias = Tensor::zeros(Shape::new(1, 8, 1, 1));
        for (i, v) in bias.data_mut().iter_mut().enumerate() {
            *v = match i / 2 {
                0 => -20.0,
                1 => 20.0,
                _ => 0.0,
            };
        }
        let b = tape.constant(bias);
        let (_, c2) = convlstm_cell(&mut tape, e, h, None, c, k, b).unwrap();
        let diff = kernels::subtract(tape.value(c2), &cell).unwrap().max_abs();
        assert!(diff < 1e-8, "{diff}");
    }

    #[test]
    fn lstm_rejects_hidden_cell_mismatch() {
        let mut tape = Tape::<f64>::new();
        let e = tape.constant(Tensor::zeros(Shape::new(1, 2, 4, 4)));
        let h = tape.constant(Tensor::zeros(Shape::new(1, 2, 4, 4)));
        let c = tape.constant(Tensor::zeros(Shape::new(1, 3, 4, 4)));
        let k = tape.constant(Tensor::zeros(Shape::new(8, 4, 3, 3)));
        let b = tape.constant(Tensor::zeros(Shape::new(1, 8, 1, 1)));
        assert!(convlstm_cell(&mut tape, e, h, None, c, k, b).is_err());
    }

    #[test]
    fn update_order_is_top_down_then_bottom_up() {
        let cfg = PredNetConfig::new(&[1, 4, 4], Variant::PredNet);
        let m = Model::<f64>::new(cfg.clone(), 1).unwrap();
        let s = init_state(&cfg, 1, 8, 8).unwrap();
        let out = m.step(&s, &frame(Shape::new(1, 1, 8, 8), 2)).unwrap();
        use Stage::*;
        assert_eq!(
            out.trace,
            vec![
                Representation(2),
                Representation(1),
                Representation(0),
                Prediction(0),
                Error(0),
                Target(1),
                Prediction(1),
                Error(1),
                Target(2),
                Prediction(2),
                Error(2),
            ]
        );
    }

    #[test]
    fn frame_shape_mismatch_names_expected_dims() {
        let cfg = PredNetConfig::new(&[1, 4], Variant::PredNet);
        let m = Model::<f64>::new(cfg.clone(), 1).unwrap();
        let s = init_state(&cfg, 1, 8, 8).unwrap();
        let err = m.step(&s, &frame(Shape::new(1, 1, 4, 4), 2)).unwrap_err().to_string();
        assert!(err.contains("(1, 1, 8, 8)"), "{err}");
    }

    #[test]
    fn checked_mode_rejects_out_of_range_frames() {
        let cfg = PredNetConfig::new(&[1, 4], Variant::PredNet);
        let m = Model::<f64>::new(cfg.clone(), 1).unwrap();
        let mut tape = Tape::<f64>::inference().with_checks(true);
        let params = m.bind(&mut tape);
        let st = init_state::<f64>(&cfg, 1, 8, 8).unwrap().to_tape(&mut tape);
        let x = tape.constant(Tensor::full(Shape::new(1, 1, 8, 8), 1.5));
        assert!(m.step_on_tape(&mut tape, &params, &st, FrameInput::Frame(x)).is_err());
    }

    #[test]
    fn extrapolation_rejects_short_input() {
        let cfg = PredNetConfig::new(&[1, 4], Variant::PredNet);
        let m = Model::<f64>::new(cfg, 1).unwrap();
        let frames = vec![frame(Shape::new(1, 1, 8, 8), 1); 3];
        assert!(m.extrapolate(&frames, 4, 2).is_err());
        assert!(m.run_sequence(&[]).is_err());
    }
}
