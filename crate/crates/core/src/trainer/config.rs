//! Training configuration and its flat `key = value` text form.
//!
//! Blank lines and lines starting with `#` are ignored. Unknown keys are
//! rejected. Lists are comma separated. Recognized keys:
//!
//! ```text
//! seed                 u64
//! dataset              gaussian-blobs | two-spirals | csv
//! samples, classes, dim
//! spread               blob std / spiral noise
//! csv_path             path (dataset = csv)
//! validation_fraction  in [0, 1)
//! hidden               hidden layer sizes, e.g. 32,32
//! activation           relu | identity
//! batch_size, epochs
//! lr                   base learning rate
//! lr_drops             epochs at which the rate is multiplied by lr_factor
//! lr_factor
//! format               fp32 | bf16
//! quantizer            none | fixed | qm | bitchop
//! fixed_width          width for quantizer = fixed
//! qm_gamma             "thirds" or epoch:gamma pairs, e.g. 0:0.1,10:0.01
//! qm_finalize_epoch, qm_bit_lr, qm_weights (true | false)
//! chop_alpha, chop_period, chop_cooldown
//! chop_scope           activations | all
//! variant              delta-base | fixed-bias (footprint accounting)
//! trace_path           write a binary tensor trace here
//! ```

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::data::DatasetKind;
use super::model::Activation;
use crate::bitchop::{ChopConfig, ChopScope};
use crate::bitlearn::{GammaSchedule, QmConfig};
use crate::error::{Error, Result};
use crate::floatcore::FloatFormat;
use crate::gecko::Variant;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QuantizerKind {
    /// Tensors stored at full format width.
    None,
    /// Every tensor at `fixed_width`.
    Fixed,
    QuantumMantissa,
    BitChop,
}

impl FromStr for QuantizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(QuantizerKind::None),
            "fixed" => Ok(QuantizerKind::Fixed),
            "qm" | "quantum-mantissa" => Ok(QuantizerKind::QuantumMantissa),
            "bitchop" => Ok(QuantizerKind::BitChop),
            other => Err(Error::config(format!("unknown quantizer `{other}`"))),
        }
    }
}

impl std::fmt::Display for QuantizerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            QuantizerKind::None => "none",
            QuantizerKind::Fixed => "fixed",
            QuantizerKind::QuantumMantissa => "qm",
            QuantizerKind::BitChop => "bitchop",
        })
    }
}

/// Step schedule: `base * factor^k` after the k-th drop epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub base: f64,
    pub drops: Vec<u32>,
    pub factor: f64,
}

impl LrSchedule {
    pub fn at(&self, epoch: u32) -> f64 {
        let k = self.drops.iter().filter(|&&d| d <= epoch).count();
        self.base * self.factor.powi(k as i32)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub kind: DatasetKind,
    pub samples: usize,
    pub classes: usize,
    pub dim: usize,
    pub spread: f64,
    pub csv_path: Option<PathBuf>,
    pub validation_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub seed: u64,
    pub dataset: DatasetConfig,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub batch_size: usize,
    pub epochs: u32,
    pub lr: LrSchedule,
    pub format: FloatFormat,
    pub quantizer: QuantizerKind,
    pub fixed_width: u32,
    pub qm: QmConfig,
    pub chop: ChopConfig,
    pub variant: Variant,
    pub trace_path: Option<PathBuf>,
}

impl Default for TrainConfig {
    /// Four Gaussian blobs, a [2, 32, 32, 4] ReLU network, 30 epochs in FP32.
    fn default() -> Self {
        Self {
            seed: 0,
            dataset: DatasetConfig {
                kind: DatasetKind::GaussianBlobs,
                samples: 1024,
                classes: 4,
                dim: 2,
                spread: 1.0,
                csv_path: None,
                validation_fraction: 0.25,
            },
            hidden: vec![32, 32],
            activation: Activation::Relu,
            batch_size: 32,
            epochs: 30,
            lr: LrSchedule {
                base: 0.05,
                drops: vec![20],
                factor: 0.1,
            },
            format: FloatFormat::Fp32,
            quantizer: QuantizerKind::None,
            fixed_width: 23,
            qm: QmConfig::for_epochs(30),
            chop: ChopConfig::new(FloatFormat::Fp32),
            variant: Variant::DeltaBase,
            trace_path: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr.base > 0.0) || !(self.lr.factor > 0.0) {
            return Err(Error::config("learning rate and drop factor must be > 0"));
        }
        if self.epochs == 0 {
            return Err(Error::config("epochs must be >= 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch size must be >= 1"));
        }
        if self.quantizer == QuantizerKind::Fixed && self.fixed_width > self.format.mantissa_bits() {
            return Err(Error::config(format!(
                "fixed width {} exceeds {} mantissa bits",
                self.fixed_width,
                self.format.mantissa_bits()
            )));
        }
        if self.quantizer == QuantizerKind::QuantumMantissa {
            self.qm.validate(self.epochs)?;
        }
        if self.quantizer == QuantizerKind::BitChop {
            self.chop.validate()?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Applies `key = value` lines on top of the defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut c = TrainConfig::default();
        let mut epochs_set = false;
        let mut qm_finalize = None;
        let mut gamma = None;
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::config(format!("line {}: expected key = value", n + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            let at = |e: Error| Error::config(format!("line {} ({key}): {e}", n + 1));
            match key {
                "seed" => c.seed = num(value).map_err(at)?,
                "dataset" => c.dataset.kind = value.parse().map_err(at)?,
                "samples" => c.dataset.samples = num(value).map_err(at)?,
                "classes" => c.dataset.classes = num(value).map_err(at)?,
                "dim" => c.dataset.dim = num(value).map_err(at)?,
                "spread" => c.dataset.spread = num(value).map_err(at)?,
                "csv_path" => c.dataset.csv_path = Some(PathBuf::from(value)),
                "validation_fraction" => c.dataset.validation_fraction = num(value).map_err(at)?,
                "hidden" => c.hidden = list(value).map_err(at)?,
                "activation" => c.activation = value.parse().map_err(at)?,
                "batch_size" => c.batch_size = num(value).map_err(at)?,
                "epochs" => {
                    c.epochs = num(value).map_err(at)?;
                    epochs_set = true;
                }
                "lr" => c.lr.base = num(value).map_err(at)?,
                "lr_drops" => c.lr.drops = list(value).map_err(at)?,
                "lr_factor" => c.lr.factor = num(value).map_err(at)?,
                "format" => c.format = value.parse().map_err(at)?,
                "quantizer" => c.quantizer = value.parse().map_err(at)?,
                "fixed_width" => c.fixed_width = num(value).map_err(at)?,
                "qm_gamma" => gamma = Some(value.to_string()),
                "qm_finalize_epoch" => qm_finalize = Some(num(value).map_err(at)?),
                "qm_bit_lr" => c.qm.bit_lr = num(value).map_err(at)?,
                "qm_weights" => c.qm.quantize_weights = num(value).map_err(at)?,
                "chop_alpha" => c.chop.alpha = num(value).map_err(at)?,
                "chop_period" => c.chop.period = num(value).map_err(at)?,
                "chop_cooldown" => c.chop.lr_cooldown = num(value).map_err(at)?,
                "chop_scope" => {
                    c.chop.scope = match value {
                        "activations" => ChopScope::Activations,
                        "all" => ChopScope::All,
                        other => return Err(at(Error::config(format!("unknown scope `{other}`")))),
                    }
                }
                "variant" => c.variant = value.parse().map_err(at)?,
                "trace_path" => c.trace_path = Some(PathBuf::from(value)),
                other => return Err(Error::config(format!("line {}: unknown key `{other}`", n + 1))),
            }
        }
        if epochs_set {
            let fresh = QmConfig::for_epochs(c.epochs);
            c.qm.gamma = fresh.gamma;
            c.qm.finalize_epoch = fresh.finalize_epoch;
        }
        if let Some(g) = gamma {
            c.qm.gamma = parse_gamma(&g, c.epochs)?;
        }
        if let Some(f) = qm_finalize {
            c.qm.finalize_epoch = f;
        }
        c.chop.format = c.format;
        c.validate()?;
        Ok(c)
    }

    /// Text form accepted by [`TrainConfig::parse`].
    pub fn to_kv_string(&self) -> String {
        let join = |v: &[u32]| v.iter().map(u32::to_string).collect::<Vec<_>>().join(",");
        let d = &self.dataset;
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("seed", self.seed.to_string());
        kv("dataset", d.kind.to_string());
        kv("samples", d.samples.to_string());
        kv("classes", d.classes.to_string());
        kv("dim", d.dim.to_string());
        kv("spread", d.spread.to_string());
        if let Some(p) = &d.csv_path {
            kv("csv_path", p.display().to_string());
        }
        kv("validation_fraction", d.validation_fraction.to_string());
        kv(
            "hidden",
            self.hidden.iter().map(usize::to_string).collect::<Vec<_>>().join(","),
        );
        kv("activation", self.activation.to_string());
        kv("batch_size", self.batch_size.to_string());
        kv("epochs", self.epochs.to_string());
        kv("lr", self.lr.base.to_string());
        kv("lr_drops", join(&self.lr.drops));
        kv("lr_factor", self.lr.factor.to_string());
        kv("format", self.format.to_string());
        kv("quantizer", self.quantizer.to_string());
        kv("fixed_width", self.fixed_width.to_string());
        kv(
            "qm_gamma",
            self.qm
                .gamma
                .steps()
                .iter()
                .map(|(e, g)| format!("{e}:{g}"))
                .collect::<Vec<_>>()
                .join(","),
        );
        kv("qm_finalize_epoch", self.qm.finalize_epoch.to_string());
        kv("qm_bit_lr", self.qm.bit_lr.to_string());
        kv("qm_weights", self.qm.quantize_weights.to_string());
        kv("chop_alpha", self.chop.alpha.to_string());
        kv("chop_period", self.chop.period.to_string());
        kv("chop_cooldown", self.chop.lr_cooldown.to_string());
        kv(
            "chop_scope",
            match self.chop.scope {
                ChopScope::Activations => "activations",
                ChopScope::All => "all",
            }
            .to_string(),
        );
        kv("variant", self.variant.to_string());
        if let Some(p) = &self.trace_path {
            kv("trace_path", p.display().to_string());
        }
        s
    }
}

fn num<T: FromStr>(v: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    v.parse().map_err(|e| Error::config(format!("`{v}`: {e}")))
}

fn list<T: FromStr>(v: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    if v.is_empty() {
        return Ok(Vec::new());
    }
    v.split(',').map(|x| num(x.trim())).collect()
}

fn parse_gamma(v: &str, epochs: u32) -> Result<GammaSchedule> {
    if v == "thirds" {
        return Ok(GammaSchedule::thirds(epochs));
    }
    let steps = v
        .split(',')
        .map(|pair| {
            let (e, g) = pair
                .split_once(':')
                .ok_or_else(|| Error::config(format!("gamma step `{pair}` is not epoch:gamma")))?;
            Ok((num(e.trim())?, num(g.trim())?))
        })
        .collect::<Result<Vec<_>>>()?;
    GammaSchedule::new(steps)
}
