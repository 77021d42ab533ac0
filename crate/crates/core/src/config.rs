//! Architecture and loss configuration.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Forward wiring of the stack: the full model or one of the control models.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "prednet")]
    PredNet,
    /// Errors are the signed difference, no rectified split.
    #[serde(rename = "prednet_no_E_split")]
    PredNetNoESplit,
    /// Encoder-decoder control: activations `A_l` are forwarded instead of errors.
    #[serde(rename = "encdec")]
    EncDec,
    #[serde(rename = "encdec_2x_filters")]
    EncDec2xFilters,
    /// Encoder-decoder that forwards the error at the lowest layer only.
    #[serde(rename = "encdec_pass_E0")]
    EncDecPassE0,
    /// Encoder-decoder whose forwarded activations are split into +/- populations.
    #[serde(rename = "encdec_pm_split")]
    EncDecPmSplit,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::PredNet,
        Variant::PredNetNoESplit,
        Variant::EncDec,
        Variant::EncDec2xFilters,
        Variant::EncDecPassE0,
        Variant::EncDecPmSplit,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            Variant::PredNet => "prednet",
            Variant::PredNetNoESplit => "prednet_no_E_split",
            Variant::EncDec => "encdec",
            Variant::EncDec2xFilters => "encdec_2x_filters",
            Variant::EncDecPassE0 => "encdec_pass_E0",
            Variant::EncDecPmSplit => "encdec_pm_split",
        }
    }

    /// Row label used in evaluation tables.
    pub fn display_name(self) -> &'static str {
        match self {
            Variant::PredNet => "PredNet",
            Variant::PredNetNoESplit => "PredNet (no E split)",
            Variant::EncDec => "CNN-LSTM Enc.-Dec.",
            Variant::EncDec2xFilters => "CNN-LSTM Enc.-Dec. (2x A filts)",
            Variant::EncDecPassE0 => "CNN-LSTM Enc.-Dec. (except pass E0)",
            Variant::EncDecPmSplit => "CNN-LSTM Enc.-Dec. (+/- split)",
        }
    }

    /// Errors are rectified and split into two populations.
    pub fn splits_errors(self) -> bool {
        !matches!(self, Variant::PredNetNoESplit)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.tag() == s)
            .ok_or_else(|| {
                let known: Vec<_> = Variant::ALL.iter().map(|v| v.tag()).collect();
                Error::config("variant", format!("unknown variant `{s}`, expected one of {known:?}"))
            })
    }
}

/// What a layer sends up the stack and back into its own recurrent unit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Forwarded {
    Error,
    Activation,
    ActivationSplit,
}

/// Per-timestep loss weight rule. Timesteps are 1-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "rule")]
pub enum TimeWeighting {
    /// 0 at t = 1, 1 afterwards.
    SkipFirst,
    Uniform,
    Explicit { weights: Vec<f64> },
}

impl Default for TimeWeighting {
    fn default() -> Self {
        TimeWeighting::SkipFirst
    }
}

impl TimeWeighting {
    /// Weights for `t = 1..=seq_len`.
    pub fn weights(&self, seq_len: usize) -> Result<Vec<f64>> {
        match self {
            TimeWeighting::SkipFirst => Ok((0..seq_len).map(|t| if t == 0 { 0.0 } else { 1.0 }).collect()),
            TimeWeighting::Uniform => Ok(vec![1.0; seq_len]),
            TimeWeighting::Explicit { weights } => {
                if weights.len() != seq_len {
                    return Err(Error::config(
                        "lambda_time.weights",
                        format!("has {} entries for a sequence of length {seq_len}", weights.len()),
                    ));
                }
                Ok(weights.clone())
            }
        }
    }
}

/// Layer-weight presets: `L0` puts all weight on the pixel layer, `Lall` adds 0.1 above it.
pub fn lambda_preset(name: &str, num_layers: usize) -> Result<Vec<f64>> {
    let upper = match name {
        "L0" => 0.0,
        "Lall" => 0.1,
        other => {
            return Err(Error::config(
                "lambda_layer",
                format!("unknown preset `{other}`, expected \"L0\" or \"Lall\""),
            ))
        }
    };
    Ok((0..num_layers).map(|l| if l == 0 { 1.0 } else { upper }).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredNetConfig {
    pub num_layers: usize,
    /// Channel width shared by `A_l` and `R_l`; `channels[0]` is the image channel count.
    pub channels: Vec<usize>,
    #[serde(default = "default_filter")]
    pub filter_size_a: usize,
    #[serde(default = "default_filter")]
    pub filter_size_ahat: usize,
    #[serde(default = "default_filter")]
    pub filter_size_r: usize,
    pub lambda_layer: Vec<f64>,
    #[serde(default)]
    pub lambda_time: TimeWeighting,
    #[serde(default = "default_p_max")]
    pub p_max: f64,
    #[serde(default = "default_variant")]
    pub variant: Variant,
}

fn default_filter() -> usize {
    3
}

fn default_p_max() -> f64 {
    1.0
}

fn default_variant() -> Variant {
    Variant::PredNet
}

impl PredNetConfig {
    /// 3x3 filters, `L0` loss, `p_max = 1`.
    pub fn new(channels: &[usize], variant: Variant) -> Self {
        let num_layers = channels.len();
        PredNetConfig {
            num_layers,
            channels: channels.to_vec(),
            filter_size_a: 3,
            filter_size_ahat: 3,
            filter_size_r: 3,
            lambda_layer: lambda_preset("L0", num_layers).expect("known preset"),
            lambda_time: TimeWeighting::SkipFirst,
            p_max: 1.0,
            variant,
        }
    }

    pub fn with_lambda_layer(mut self, lambda: Vec<f64>) -> Self {
        self.lambda_layer = lambda;
        self
    }

    pub fn with_variant(mut self, variant: Variant) -> Self {
        self.variant = variant;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let l = self.num_layers;
        if l == 0 {
            return Err(Error::config("num_layers", "must be at least 1"));
        }
        if self.channels.len() != l {
            return Err(Error::config(
                "channels",
                format!("has {} entries, expected num_layers = {l}", self.channels.len()),
            ));
        }
        if let Some(i) = self.channels.iter().position(|&c| c == 0) {
            return Err(Error::config(format!("channels[{i}]"), "must be at least 1"));
        }
        for (name, k) in [
            ("filter_size_a", self.filter_size_a),
            ("filter_size_ahat", self.filter_size_ahat),
            ("filter_size_r", self.filter_size_r),
        ] {
            if k % 2 == 0 {
                return Err(Error::config(name, format!("must be odd, got {k}")));
            }
        }
        if self.lambda_layer.len() != l {
            return Err(Error::config(
                "lambda_layer",
                format!("has {} entries, expected num_layers = {l}", self.lambda_layer.len()),
            ));
        }
        if let Some(i) = self.lambda_layer.iter().position(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::config(format!("lambda_layer[{i}]"), "must be finite and >= 0"));
        }
        if !self.lambda_layer.iter().any(|&v| v > 0.0) {
            return Err(Error::config("lambda_layer", "at least one entry must be positive"));
        }
        if let TimeWeighting::Explicit { weights } = &self.lambda_time {
            if let Some(i) = weights.iter().position(|v| !(v.is_finite() && *v >= 0.0)) {
                return Err(Error::config(
                    format!("lambda_time.weights[{i}]"),
                    "must be finite and >= 0",
                ));
            }
        }
        if !(self.p_max.is_finite() && self.p_max > 0.0) {
            return Err(Error::config("p_max", "must be positive"));
        }
        Ok(())
    }

    pub fn image_channels(&self) -> usize {
        self.channels[0]
    }

    /// Required divisor of the frame height and width.
    pub fn spatial_divisor(&self) -> usize {
        1 << (self.num_layers - 1)
    }

    /// Channels of the target `A_l` (and of the prediction `Â_l`).
    pub fn target_width(&self, l: usize) -> usize {
        match self.variant {
            Variant::EncDec2xFilters if l > 0 => 2 * self.channels[l],
            _ => self.channels[l],
        }
    }

    /// Channels of the error units `E_l` used by the loss.
    pub fn error_width(&self, l: usize) -> usize {
        if self.variant.splits_errors() {
            2 * self.target_width(l)
        } else {
            self.target_width(l)
        }
    }

    pub fn forwarded(&self, l: usize) -> Forwarded {
        match self.variant {
            Variant::PredNet | Variant::PredNetNoESplit => Forwarded::Error,
            Variant::EncDec | Variant::EncDec2xFilters => Forwarded::Activation,
            Variant::EncDecPassE0 if l == 0 => Forwarded::Error,
            Variant::EncDecPassE0 => Forwarded::Activation,
            Variant::EncDecPmSplit => Forwarded::ActivationSplit,
        }
    }

    /// Channels of the tensor layer `l` forwards upward and feeds back laterally.
    pub fn forwarded_width(&self, l: usize) -> usize {
        match self.forwarded(l) {
            Forwarded::Error => self.error_width(l),
            Forwarded::Activation => self.target_width(l),
            Forwarded::ActivationSplit => 2 * self.target_width(l),
        }
    }

    /// Channels of the ConvLSTM gate input: lateral, own hidden state, top-down.
    pub fn lstm_input_width(&self, l: usize) -> usize {
        let top_down = if l + 1 < self.num_layers {
            self.channels[l + 1]
        } else {
            0
        };
        self.forwarded_width(l) + self.channels[l] + top_down
    }
}
