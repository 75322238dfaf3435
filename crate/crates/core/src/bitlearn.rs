//! Learned per-tensor mantissa bitlengths.
//!
//! Each quantized tensor owns a real-valued bitlength `n`. The forward pass
//! draws an integer width once per tensor per batch (`floor(n)` or
//! `floor(n) + 1`, with probability `frac(n)` for the latter) and truncates
//! every mantissa to it. Training minimizes
//!
//! ```text
//! L = L_task + gamma * sum_i(lambda_i * n_i)
//! ```
//!
//! where `lambda_i` weights tensors by footprint. The gradient of the
//! expected task loss with respect to `n` is the loss change from granting
//! one more mantissa bit, estimated to first order from the per-value loss
//! gradients the backward pass already has.

use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::floatcore::{decompose, draw_width, quantize_mantissa, recompose, FloatFormat, FloatTriple};

/// Default learning rate for bitlengths, separate from the model's.
pub const DEFAULT_BIT_LR: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TensorKind {
    Weights,
    Activations,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BitlengthParam {
    pub tensor: usize,
    pub kind: TensorKind,
    pub format: FloatFormat,
    /// Learnable bitlength, kept in `[0, m]`.
    pub n: f64,
    pub lambda: f64,
    /// Set by [`qm_finalize`]; the width is then fixed and `n` no longer
    /// receives gradients.
    pub frozen: Option<u32>,
}

impl BitlengthParam {
    /// A bitlength starting at full precision.
    pub fn new(tensor: usize, kind: TensorKind, format: FloatFormat, lambda: f64) -> Self {
        Self {
            tensor,
            kind,
            format,
            n: format.mantissa_bits() as f64,
            lambda,
            frozen: None,
        }
    }

    pub fn max_bits(&self) -> u32 {
        self.format.mantissa_bits()
    }

    /// Integer width for one forward pass. Always consumes one draw.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<u32> {
        let drawn = draw_width(self.n, self.format, rng)?;
        Ok(self.frozen.unwrap_or(drawn))
    }

    /// Width used outside training (evaluation, reporting): the frozen width,
    /// or `ceil(n)`.
    pub fn deterministic_width(&self) -> u32 {
        self.frozen
            .unwrap_or_else(|| (self.n.ceil() as u32).min(self.max_bits()))
    }
}

/// Footprint weights `lambda_i = size_i / sum(size)`.
pub fn footprint_lambdas(sizes: &[u64]) -> Vec<f64> {
    let total: u64 = sizes.iter().sum();
    if total == 0 {
        return vec![0.0; sizes.len()];
    }
    sizes.iter().map(|&s| s as f64 / total as f64).collect()
}

/// `L_task + gamma * sum(lambda_i * n_i)`.
pub fn qm_loss(task_loss: f64, params: &[BitlengthParam], gamma: f64) -> Result<f64> {
    if !(gamma >= 0.0) {
        return Err(Error::contract(format!("gamma must be >= 0, got {gamma}")));
    }
    if gamma == 0.0 {
        return Ok(task_loss);
    }
    let penalty: f64 = params.iter().map(|p| p.lambda * p.n).sum();
    Ok(task_loss + gamma * penalty)
}

/// Value change from keeping one more mantissa bit at width `k`:
/// `value(Q(M, k + 1)) - value(Q(M, k))`. Zero once `k >= m`.
pub fn extra_bit_delta(bits: u32, k: u32, format: FloatFormat) -> Result<f64> {
    let m = format.mantissa_bits();
    if k >= m {
        return Ok(0.0);
    }
    let t = decompose(bits, format);
    if t.is_non_finite() {
        return Err(Error::NonFinite { bits });
    }
    let value = |width: u32| -> Result<f64> {
        let q = recompose(
            FloatTriple {
                mantissa: quantize_mantissa(t.mantissa, width, format)?,
                ..t
            },
            format,
        )?;
        Ok(format.decode_f32(q) as f64)
    };
    Ok(value(k + 1)? - value(k)?)
}

/// `dL/dn` for one tensor.
///
/// `values` are the tensor's full-precision patterns in `param.format` and
/// `grads[j]` is `dL_task/dv_j` from the backward pass. The data term is
/// `sum_j grads[j] * extra_bit_delta(values[j], floor(n))`, summed in index
/// order; the regularizer adds `gamma * lambda`. Frozen parameters get 0.
pub fn qm_gradient(param: &BitlengthParam, values: &[u32], grads: &[f64], gamma: f64) -> Result<f64> {
    if values.len() != grads.len() {
        return Err(Error::contract(format!(
            "{} values but {} gradients",
            values.len(),
            grads.len()
        )));
    }
    if param.frozen.is_some() {
        return Ok(0.0);
    }
    let k = (param.n.floor() as u32).min(param.max_bits());
    let mut data = 0.0;
    if k < param.max_bits() {
        for (&v, &g) in values.iter().zip(grads) {
            data += g * extra_bit_delta(v, k, param.format)?;
        }
    }
    if !data.is_finite() {
        return Err(Error::Numeric(format!("bitlength gradient for tensor {} is {data}", param.tensor)));
    }
    Ok(data + gamma * param.lambda)
}

/// `n <- clip(n - lr * grad, 0, m)` for every unfrozen parameter.
pub fn qm_step(params: &mut [BitlengthParam], grads: &[f64], lr: f64) -> Result<()> {
    if !(lr > 0.0) {
        return Err(Error::contract(format!("bitlength learning rate must be > 0, got {lr}")));
    }
    if params.len() != grads.len() {
        return Err(Error::contract("one gradient per bitlength parameter"));
    }
    for (p, &g) in params.iter_mut().zip(grads) {
        if p.frozen.is_none() {
            p.n = (p.n - lr * g).clamp(0.0, p.max_bits() as f64);
        }
    }
    Ok(())
}

/// Rounds every bitlength up and freezes it.
pub fn qm_finalize(params: &mut [BitlengthParam]) -> Vec<u32> {
    params
        .iter_mut()
        .map(|p| {
            let w = p.deterministic_width();
            p.frozen = Some(w);
            p.n = w as f64;
            w
        })
        .collect()
}

/// Piecewise-constant regularizer strength: `(start_epoch, gamma)` pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GammaSchedule {
    steps: Vec<(u32, f64)>,
}

impl GammaSchedule {
    pub fn new(mut steps: Vec<(u32, f64)>) -> Result<Self> {
        if steps.iter().any(|&(_, g)| !(g >= 0.0)) {
            return Err(Error::config("gamma values must be >= 0"));
        }
        steps.sort_by_key(|s| s.0);
        Ok(Self { steps })
    }

    pub fn constant(gamma: f64) -> Result<Self> {
        Self::new(vec![(0, gamma)])
    }

    /// 0.1, 0.01 and 0.001 from the start, one third and two thirds of the
    /// run.
    pub fn thirds(total_epochs: u32) -> Self {
        Self {
            steps: vec![(0, 0.1), (total_epochs / 3, 0.01), (2 * total_epochs / 3, 0.001)],
        }
    }

    pub fn gamma_at(&self, epoch: u32) -> f64 {
        self.steps
            .iter()
            .rev()
            .find(|s| s.0 <= epoch)
            .map_or(0.0, |s| s.1)
    }

    pub fn steps(&self) -> &[(u32, f64)] {
        &self.steps
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QmConfig {
    pub gamma: GammaSchedule,
    /// Epoch at which bitlengths are rounded up and frozen.
    pub finalize_epoch: u32,
    pub bit_lr: f64,
    /// Regularize weight tensors as well as activations.
    pub quantize_weights: bool,
}

impl QmConfig {
    pub fn for_epochs(total_epochs: u32) -> Self {
        Self {
            gamma: GammaSchedule::thirds(total_epochs),
            finalize_epoch: total_epochs.saturating_sub(total_epochs.div_ceil(9).max(1)),
            bit_lr: DEFAULT_BIT_LR,
            quantize_weights: true,
        }
    }

    pub fn validate(&self, total_epochs: u32) -> Result<()> {
        if self.finalize_epoch >= total_epochs {
            return Err(Error::config(format!(
                "finalize epoch {} must precede the end of a {total_epochs}-epoch run",
                self.finalize_epoch
            )));
        }
        if !(self.bit_lr > 0.0) {
            return Err(Error::config("bitlength learning rate must be > 0"));
        }
        Ok(())
    }
}

/// One row of the bitlength trajectory log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub epoch: u32,
    pub batch: u64,
    pub tensor: usize,
    pub kind: TensorKind,
    pub n: f64,
    pub gamma: f64,
}

/// Writes trajectory rows as CSV with header
/// `epoch,batch,tensor,kind,n,gamma`.
pub fn write_trajectory<W: Write>(out: W, records: &[TrajectoryRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in records {
        w.serialize(r).map_err(|e| Error::Io(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn param(n: f64, lambda: f64) -> BitlengthParam {
        BitlengthParam {
            n,
            ..BitlengthParam::new(0, TensorKind::Activations, FloatFormat::Bf16, lambda)
        }
    }

    #[test]
    fn loss_examples() {
        let ps = [param(2.0, 0.5), param(4.0, 0.5)];
        assert!((qm_loss(1.0, &ps, 0.1).unwrap() - 1.3).abs() < 1e-12);
        assert_eq!(qm_loss(1.0, &ps, 0.0).unwrap(), 1.0);
        assert!(qm_loss(1.0, &ps, -1.0).is_err());
    }

    #[test]
    fn footprint_weighting() {
        let l = footprint_lambdas(&[300, 100]);
        assert!((l[0] - 3.0 * l[1]).abs() < 1e-15);
        assert!((l.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert_eq!(footprint_lambdas(&[0, 0]), vec![0.0, 0.0]);
    }

    #[test]
    fn extra_bit_mantissa_delta() {
        // 1.0b1011011 in BF16: bit 4 of the mantissa (value 0b0001000) is
        // what n = 3 -> 4 adds back.
        let bits = (127u32 << 7) | 0b101_1011;
        let delta = extra_bit_delta(bits, 3, FloatFormat::Bf16).unwrap();
        assert_eq!(delta, 0b000_1000 as f64 / 128.0);
        // Sign and exponent scale it.
        let neg = (1u32 << 15) | (129u32 << 7) | 0b101_1011;
        assert_eq!(extra_bit_delta(neg, 3, FloatFormat::Bf16).unwrap(), -4.0 * delta);
        assert_eq!(extra_bit_delta(bits, 7, FloatFormat::Bf16).unwrap(), 0.0);
    }

    #[test]
    fn representable_values_give_regularizer_only() {
        let p = param(3.4, 0.25);
        let values = [(127u32 << 7) | 0b101_0000, (126u32 << 7) | 0b111_0000];
        let g = qm_gradient(&p, &values, &[1.5, -2.0], 0.1).unwrap();
        assert!((g - 0.025).abs() < 1e-15);
    }

    #[test]
    fn saturated_bitlength_has_no_data_term() {
        let p = param(7.0, 0.5);
        let g = qm_gradient(&p, &[0x3F85], &[10.0], 0.0).unwrap();
        assert_eq!(g, 0.0);
    }

    #[test]
    fn step_and_clip() {
        let mut ps = vec![param(0.05, 0.1), param(1.5, 0.1), param(2.0, 0.1), param(6.9, 0.1)];
        qm_step(&mut ps, &[100.0, -1.0, 0.0, -50.0], 0.1).unwrap();
        assert_eq!(ps[0].n, 0.0);
        assert!((ps[1].n - 1.6).abs() < 1e-12);
        assert_eq!(ps[2].n, 2.0);
        assert_eq!(ps[3].n, 7.0);
        assert!(qm_step(&mut ps, &[0.0; 4], 0.0).is_err());
    }

    #[test]
    fn finalize_rounds_up_and_freezes() {
        let mut ps = vec![param(1.2, 0.5), param(3.0, 0.5)];
        assert_eq!(qm_finalize(&mut ps), vec![2, 3]);
        assert_eq!(ps[0].frozen, Some(2));
        assert_eq!(qm_gradient(&ps[0], &[0x3F85], &[1.0], 0.1).unwrap(), 0.0);
        qm_step(&mut ps, &[5.0, 5.0], 1.0).unwrap();
        assert_eq!(ps[0].n, 2.0);
        let mut r = crate::rng::stream(0, 0);
        assert!((0..50).all(|_| ps[0].draw(&mut r).unwrap() == 2));
    }

    #[test]
    fn gamma_schedule() {
        let s = GammaSchedule::thirds(90);
        assert_eq!(s.gamma_at(0), 0.1);
        assert_eq!(s.gamma_at(29), 0.1);
        assert_eq!(s.gamma_at(30), 0.01);
        assert_eq!(s.gamma_at(60), 0.001);
        assert_eq!(s.gamma_at(89), 0.001);
        assert!(GammaSchedule::constant(-0.1).is_err());
    }

    #[test]
    fn trajectory_csv() {
        let mut out = Vec::new();
        write_trajectory(
            &mut out,
            &[TrajectoryRecord {
                epoch: 0,
                batch: 3,
                tensor: 1,
                kind: TensorKind::Weights,
                n: 6.5,
                gamma: 0.1,
            }],
        )
        .unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "epoch,batch,tensor,kind,n,gamma\n0,3,1,weights,6.5,0.1\n");
    }
}
