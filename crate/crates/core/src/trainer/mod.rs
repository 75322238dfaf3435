//! Small MLP trainer that drives the mantissa-width controllers.
//!
//! Every batch stores each layer's weights and input activation in the
//! configured float format with a mantissa width chosen by the active
//! quantizer, records how many bits the packer would need for them, and
//! applies plain SGD to full-precision master weights.

mod config;
pub mod data;
pub mod model;
pub mod trace;

use std::fs::File;
use std::io::Write;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::bitchop::{ChopConfig, ChopScope, ChopState, WidthRecord};
use crate::bitlearn::{
    footprint_lambdas, qm_finalize, qm_gradient, qm_step, BitlengthParam, TensorKind, TrajectoryRecord,
};
use crate::error::{Error, Result};
use crate::floatcore::FloatFormat;
use crate::packer::{predict_size, PackConfig};
use crate::perfmodel::LayerTraffic;
use crate::rng::{self, streams};

pub use config::{LrSchedule, QuantizerKind, TrainConfig};
pub use data::{Dataset, DatasetKind};
pub use model::{Activation, Gradients, Layer, LossKind, Mlp, Precision};
pub use trace::{Trace, TraceRecord, TraceWriter};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: u32,
    pub lr: f64,
    pub mean_loss: f64,
    pub train_accuracy: f64,
    pub validation_accuracy: f64,
    pub mean_activation_width: f64,
    pub mean_weight_width: f64,
}

/// Stored bits of one tensor summed over every batch of the run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorFootprint {
    pub tensor: usize,
    pub layer: usize,
    pub kind: TensorKind,
    pub batches: u64,
    pub values: u64,
    pub raw_bits: u64,
    pub compressed_bits: u64,
    /// Sum of the mantissa width used in each batch.
    pub width_sum: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub config: TrainConfig,
    pub epochs: Vec<EpochMetrics>,
    pub batch_losses: Vec<f64>,
    pub qm_trajectory: Vec<TrajectoryRecord>,
    pub chop_widths: Vec<WidthRecord>,
    /// Widths used for the final evaluation.
    pub final_widths: Vec<u32>,
    pub footprint: Vec<TensorFootprint>,
    pub layer_traffic: Vec<LayerTraffic>,
    pub model: Mlp,
}

impl TrainReport {
    pub fn final_train_accuracy(&self) -> f64 {
        self.epochs.last().map_or(0.0, |e| e.train_accuracy)
    }

    pub fn final_validation_accuracy(&self) -> f64 {
        self.epochs.last().map_or(0.0, |e| e.validation_accuracy)
    }

    /// Final widths weighted by per-batch tensor size.
    pub fn weighted_mean_width(&self) -> f64 {
        let sizes = self.model.tensor_sizes(self.config.batch_size);
        let total: u64 = sizes.iter().sum();
        let weighted: f64 = sizes
            .iter()
            .zip(&self.final_widths)
            .map(|(&s, &w)| s as f64 * w as f64)
            .sum();
        weighted / total as f64
    }

    /// Mean width applied to activations over all training batches.
    pub fn mean_activation_width(&self) -> f64 {
        mean_width(&self.footprint, TensorKind::Activations)
    }

    pub fn raw_bits(&self) -> u64 {
        self.footprint.iter().map(|f| f.raw_bits).sum()
    }

    pub fn compressed_bits(&self) -> u64 {
        self.footprint.iter().map(|f| f.compressed_bits).sum()
    }

    /// CSV with one row per epoch.
    pub fn write_metrics_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for e in &self.epochs {
            w.serialize(e).map_err(|e| Error::Io(e.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }

    /// Footprint breakdown as JSON.
    pub fn footprint_json(&self) -> Result<String> {
        #[derive(Serialize)]
        struct Summary<'a> {
            raw_bits: u64,
            compressed_bits: u64,
            relative_footprint: f64,
            weighted_mean_width: f64,
            final_widths: &'a [u32],
            tensors: &'a [TensorFootprint],
        }
        let raw = self.raw_bits();
        serde_json::to_string_pretty(&Summary {
            raw_bits: raw,
            compressed_bits: self.compressed_bits(),
            relative_footprint: self.compressed_bits() as f64 / raw.max(1) as f64,
            weighted_mean_width: self.weighted_mean_width(),
            final_widths: &self.final_widths,
            tensors: &self.footprint,
        })
        .map_err(|e| Error::Io(e.to_string()))
    }
}

fn mean_width(footprint: &[TensorFootprint], kind: TensorKind) -> f64 {
    let (sum, n) = footprint
        .iter()
        .filter(|f| f.kind == kind)
        .fold((0u64, 0u64), |(s, n), f| (s + f.width_sum, n + f.batches));
    if n == 0 {
        0.0
    } else {
        sum as f64 / n as f64
    }
}

enum Controller {
    None,
    Fixed(u32),
    Qm { params: Vec<BitlengthParam>, index: Vec<Option<usize>> },
    Chop(ChopState),
}

/// Builds the train/validation datasets for `cfg`.
pub fn load_data(cfg: &TrainConfig) -> Result<(Dataset, Dataset)> {
    let d = &cfg.dataset;
    let mut data_rng = rng::stream(cfg.seed, streams::DATA);
    let full = match d.kind {
        DatasetKind::GaussianBlobs => Dataset::gaussian_blobs(d.samples, d.classes, d.dim, d.spread, &mut data_rng)?,
        DatasetKind::TwoSpirals => Dataset::two_spirals(d.samples, d.spread, &mut data_rng)?,
        DatasetKind::Csv => {
            let path = d
                .csv_path
                .as_ref()
                .ok_or_else(|| Error::config("csv dataset needs csv_path"))?;
            Dataset::from_csv(path)?
        }
    };
    full.split(d.validation_fraction, &mut rng::stream(cfg.seed, streams::VALIDATION))
}

/// Trains according to `cfg`, writing a trace when `cfg.trace_path` is set.
pub fn train(cfg: &TrainConfig) -> Result<TrainReport> {
    match &cfg.trace_path {
        Some(path) => {
            let file = File::create(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
            let mut w = TraceWriter::new(file, cfg.format, cfg.variant)?;
            let result = run(cfg, Some(&mut w));
            w.finish()?;
            result
        }
        None => run::<std::io::Sink>(cfg, None),
    }
}

/// Trains and streams every stored tensor into `trace`.
pub fn train_traced<W: Write>(cfg: &TrainConfig, trace: &mut TraceWriter<W>) -> Result<TrainReport> {
    run(cfg, Some(trace))
}

fn run<W: Write>(cfg: &TrainConfig, mut trace: Option<&mut TraceWriter<W>>) -> Result<TrainReport> {
    cfg.validate()?;
    let (train_set, val_set) = load_data(cfg)?;
    if train_set.is_empty() {
        return Err(Error::config("training set is empty"));
    }
    let mut dims = vec![train_set.dim()];
    dims.extend_from_slice(&cfg.hidden);
    dims.push(train_set.classes().max(2));
    let mut model = Mlp::new(
        &dims,
        cfg.activation,
        LossKind::SoftmaxCrossEntropy,
        &mut rng::stream(cfg.seed, streams::INIT),
    )?;

    let fmt = cfg.format;
    let m = fmt.mantissa_bits();
    let tensors = model.tensor_count();
    let mut controller = match cfg.quantizer {
        QuantizerKind::None => Controller::None,
        QuantizerKind::Fixed => {
            if cfg.fixed_width > m {
                return Err(Error::config(format!("fixed width {} exceeds {m}", cfg.fixed_width)));
            }
            Controller::Fixed(cfg.fixed_width)
        }
        QuantizerKind::QuantumMantissa => {
            let sizes = model.tensor_sizes(cfg.batch_size);
            let chosen: Vec<usize> = (0..tensors)
                .filter(|&t| cfg.qm.quantize_weights || Mlp::tensor_kind(t) == TensorKind::Activations)
                .collect();
            let lambdas = footprint_lambdas(&chosen.iter().map(|&t| sizes[t]).collect::<Vec<_>>());
            let mut index = vec![None; tensors];
            let params = chosen
                .iter()
                .zip(lambdas)
                .enumerate()
                .map(|(i, (&t, lambda))| {
                    index[t] = Some(i);
                    BitlengthParam::new(t, Mlp::tensor_kind(t), fmt, lambda)
                })
                .collect();
            Controller::Qm { params, index }
        }
        QuantizerKind::BitChop => Controller::Chop(ChopState::new(ChopConfig { format: fmt, ..cfg.chop })?),
    };

    let mut shuffle_rng = rng::stream(cfg.seed, streams::SHUFFLE);
    let mut quant_rng = rng::stream(cfg.seed, streams::QUANTIZER);
    let mut footprint: Vec<TensorFootprint> = (0..tensors)
        .map(|t| TensorFootprint {
            tensor: t,
            layer: t / 2,
            kind: Mlp::tensor_kind(t),
            batches: 0,
            values: 0,
            raw_bits: 0,
            compressed_bits: 0,
            width_sum: 0,
        })
        .collect();
    let mut macs = vec![0u64; model.layers.len()];
    let mut epochs = Vec::with_capacity(cfg.epochs as usize);
    let mut batch_losses = Vec::new();
    let mut qm_trajectory = Vec::new();
    let mut chop_widths = Vec::new();
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut batch_index = 0u64;
    let mut widths = vec![m; tensors];

    for epoch in 0..cfg.epochs {
        let lr = cfg.lr.at(epoch);
        let gamma = cfg.qm.gamma.gamma_at(epoch);
        if epoch > 0 && lr != cfg.lr.at(epoch - 1) {
            if let Controller::Chop(state) = &mut controller {
                state.begin_lr_change();
            }
        }
        if let Controller::Qm { params, .. } = &mut controller {
            if epoch == cfg.qm.finalize_epoch {
                qm_finalize(params);
            }
        }
        order.shuffle(&mut shuffle_rng);
        let (mut loss_sum, mut batches) = (0.0, 0u32);
        let (mut act_width, mut weight_width, mut counted) = (0u64, 0u64, 0u64);

        for chunk in order.chunks(cfg.batch_size) {
            choose_widths(&controller, &mut quant_rng, fmt, cfg.chop.scope, &mut widths)?;
            let (x, y) = train_set.gather(chunk);
            let mut pass = model.forward(&x, &y, Precision::Stored { format: fmt, widths: &widths })?;
            if !pass.loss.is_finite() {
                return Err(Error::Numeric(format!(
                    "loss diverged to {} at epoch {epoch}, batch {batch_index}",
                    pass.loss
                )));
            }
            let grads = model.backward(&mut pass)?;

            for (t, st) in pass.tensors.iter().enumerate() {
                let signless = model.tensor_signless(t);
                let pack = PackConfig::lossless(fmt)
                    .with_man_width(st.width)
                    .with_signless(signless)
                    .with_variant(cfg.variant);
                let size = predict_size(&st.stored, &pack)?;
                let f = &mut footprint[t];
                f.batches += 1;
                f.values += st.stored.len() as u64;
                f.raw_bits += st.stored.len() as u64 * fmt.width() as u64;
                f.compressed_bits += size.total_bits();
                f.width_sum += st.width as u64;
                match st.kind {
                    TensorKind::Activations => act_width += st.width as u64,
                    TensorKind::Weights => weight_width += st.width as u64,
                }
                if let Some(w) = trace.as_deref_mut() {
                    w.write(&TraceRecord {
                        epoch,
                        batch: batch_index,
                        tensor: t as u32,
                        layer: st.layer as u32,
                        kind: st.kind,
                        width: st.width,
                        signless,
                        values: st.stored.clone(),
                    })?;
                }
            }
            counted += 1;
            for (l, layer) in model.layers.iter().enumerate() {
                macs[l] += 3 * (chunk.len() * layer.inputs * layer.outputs) as u64;
            }

            match &mut controller {
                Controller::Qm { params, .. } => {
                    let bit_grads = params
                        .iter()
                        .map(|p| {
                            let st = &pass.tensors[p.tensor];
                            qm_gradient(p, &st.full, &st.grad, gamma)
                        })
                        .collect::<Result<Vec<_>>>()?;
                    qm_step(params, &bit_grads, cfg.qm.bit_lr)?;
                    qm_trajectory.extend(params.iter().map(|p| TrajectoryRecord {
                        epoch,
                        batch: batch_index,
                        tensor: p.tensor,
                        kind: p.kind,
                        n: p.n,
                        gamma,
                    }));
                }
                Controller::Chop(state) => {
                    let bypass = state.bypass_active();
                    let used = state.width();
                    state.record_batch(pass.loss)?;
                    chop_widths.push(WidthRecord {
                        epoch,
                        batch: batch_index,
                        width: used,
                        bypass,
                        loss: pass.loss,
                    });
                }
                Controller::None | Controller::Fixed(_) => {}
            }
            model.sgd_step(&grads, lr);
            loss_sum += pass.loss;
            batches += 1;
            batch_losses.push(pass.loss);
            batch_index += 1;
        }

        eval_widths(&controller, fmt, &mut widths);
        let layers = model.layers.len() as f64;
        epochs.push(EpochMetrics {
            epoch,
            lr,
            mean_loss: loss_sum / batches.max(1) as f64,
            train_accuracy: accuracy(&model, &train_set, fmt, &widths)?,
            validation_accuracy: accuracy(&model, &val_set, fmt, &widths)?,
            mean_activation_width: act_width as f64 / (counted as f64 * layers).max(1.0),
            mean_weight_width: weight_width as f64 / (counted as f64 * layers).max(1.0),
        });
    }

    eval_widths(&controller, fmt, &mut widths);
    let layer_traffic = model
        .layers
        .iter()
        .enumerate()
        .map(|(l, _)| {
            let (w, a) = (&footprint[2 * l], &footprint[2 * l + 1]);
            LayerTraffic {
                layer: format!("fc{l}"),
                macs: macs[l],
                raw_bits: 2 * (w.raw_bits + a.raw_bits),
                compressed_bits: 2 * (w.compressed_bits + a.compressed_bits),
            }
        })
        .collect();
    Ok(TrainReport {
        config: cfg.clone(),
        epochs,
        batch_losses,
        qm_trajectory,
        chop_widths,
        final_widths: widths,
        footprint,
        layer_traffic,
        model,
    })
}

/// Widths for one training batch. Bitlength draws happen for every
/// parameter, frozen or not, so the random stream stays aligned.
fn choose_widths(
    controller: &Controller,
    rng: &mut rng::StreamRng,
    fmt: FloatFormat,
    scope: ChopScope,
    widths: &mut [u32],
) -> Result<()> {
    let m = fmt.mantissa_bits();
    match controller {
        Controller::None => widths.fill(m),
        Controller::Fixed(k) => widths.fill(*k),
        Controller::Qm { params, index } => {
            let drawn = params.iter().map(|p| p.draw(rng)).collect::<Result<Vec<_>>>()?;
            for (t, w) in widths.iter_mut().enumerate() {
                *w = index[t].map_or(m, |i| drawn[i]);
            }
        }
        Controller::Chop(state) => chop_widths_for(state.width(), m, scope, widths),
    }
    Ok(())
}

/// Widths used for accuracy evaluation: learned bitlengths rounded up. The
/// loss-driven controller only governs training storage, so its networks
/// are evaluated at full width.
fn eval_widths(controller: &Controller, fmt: FloatFormat, widths: &mut [u32]) {
    let m = fmt.mantissa_bits();
    match controller {
        Controller::None => widths.fill(m),
        Controller::Fixed(k) => widths.fill(*k),
        Controller::Qm { params, index } => {
            for (t, w) in widths.iter_mut().enumerate() {
                *w = index[t].map_or(m, |i| params[i].deterministic_width());
            }
        }
        Controller::Chop(_) => widths.fill(m),
    }
}

fn chop_widths_for(n: u32, m: u32, scope: ChopScope, widths: &mut [u32]) {
    for (t, w) in widths.iter_mut().enumerate() {
        *w = match (Mlp::tensor_kind(t), scope) {
            (TensorKind::Weights, ChopScope::Activations) => m,
            _ => n,
        };
    }
}

fn accuracy(model: &Mlp, data: &Dataset, fmt: FloatFormat, widths: &[u32]) -> Result<f64> {
    if data.is_empty() {
        return Ok(0.0);
    }
    let idx: Vec<usize> = (0..data.len()).collect();
    let (x, y) = data.gather(&idx);
    let pass = model.forward(&x, &y, Precision::Stored { format: fmt, widths })?;
    Ok(pass.correct as f64 / data.len() as f64)
}
