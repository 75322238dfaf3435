//! Quick invariant checks runnable from the command line.

use rand::Rng;

use crate::bitchop::{ChopConfig, ChopState, Decision};
use crate::bitlearn::{qm_gradient, BitlengthParam, GammaSchedule, TensorKind};
use crate::error::Result;
use crate::floatcore::{decompose, quantize_mantissa, FloatFormat};
use crate::gecko::{encode_delta, ExponentGroup, Variant};
use crate::packer::{compress, predict_size, Container, PackConfig};
use crate::perfmodel::{layer_names, run_report, synthetic_suite, HardwareConfig, SyntheticSuite};
use crate::rng;
use crate::statsbench::oracle_group_bits;
use crate::trainer::{train, QuantizerKind, TrainConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn from(name: &'static str, result: Result<std::result::Result<String, String>>) -> Self {
        match result {
            Ok(Ok(detail)) => Check { name, passed: true, detail },
            Ok(Err(detail)) => Check { name, passed: false, detail },
            Err(e) => Check { name, passed: false, detail: e.to_string() },
        }
    }
}

type Outcome = Result<std::result::Result<String, String>>;

/// Runs every check. `quick` shrinks sample counts.
pub fn run_all(quick: bool) -> Vec<Check> {
    let n = if quick { 20_000 } else { 200_000 };
    vec![
        Check::from("lossless-round-trip", lossless(n)),
        Check::from("size-formula", size_formula(if quick { 500 } else { 5_000 })),
        Check::from("truncation-idempotence-nesting", truncation()),
        Check::from("qm-gradient-saturation", qm_saturation()),
        Check::from("bitchop-rules", bitchop_rules()),
        Check::from("baseline-equivalence", baseline_equivalence()),
        Check::from("perf-roofline", perf()),
    ]
}

fn lossless(n: usize) -> Outcome {
    let mut r = rng::stream(1, rng::streams::DATA);
    let mut fp32: Vec<u32> = (0..n).map(|_| r.gen::<u32>()).collect();
    for v in &mut fp32 {
        if decompose(*v, FloatFormat::Fp32).is_non_finite() {
            *v &= !(1 << 30);
        }
    }
    let bf16: Vec<u32> = (0..=0xFFFFu32)
        .filter(|&b| !decompose(b, FloatFormat::Bf16).is_non_finite())
        .collect();
    for (fmt, values) in [(FloatFormat::Fp32, &fp32), (FloatFormat::Bf16, &bf16)] {
        for variant in [Variant::DeltaBase, Variant::FixedBias] {
            let cfg = PackConfig::lossless(fmt).with_variant(variant);
            let c = Container::pack(values, &[values.len() as u64], &cfg)?;
            let back = Container::from_bytes(&c.to_bytes())?.unpack()?;
            if &back != values {
                return Ok(Err(format!("{fmt} {variant} round trip differs")));
            }
        }
    }
    Ok(Ok(format!("{} fp32 + {} bf16 patterns", fp32.len(), bf16.len())))
}

fn size_formula(groups: usize) -> Outcome {
    let mut r = rng::stream(2, rng::streams::DATA);
    for i in 0..groups {
        let spread = 1u8 << (i % 8);
        let center: u8 = r.gen_range(spread / 2..=255 - spread / 2);
        let exps: [u8; 64] = std::array::from_fn(|_| center - spread / 2 + r.gen_range(0..=spread.saturating_sub(1)));
        let enc = encode_delta(&ExponentGroup::new(exps)).encoded_bits();
        if enc != oracle_group_bits(&exps) {
            return Ok(Err(format!("group {i}: encoder {enc} vs oracle")));
        }
    }
    let values: Vec<u32> = (0..10_000).map(|_| r.gen::<u32>() & 0x7F7F_FFFF).collect();
    for w in [0, 5, 23] {
        let cfg = PackConfig::lossless(FloatFormat::Fp32).with_man_width(w);
        let block = compress(&values, &cfg)?;
        let size = predict_size(&values, &cfg)?;
        if size.meta_bits != block.meta_bits || size.data_bits() != block.data_bits() {
            return Ok(Err(format!("width {w}: closed form disagrees with emitted streams")));
        }
        if size.data_stream_bits != 8 * block.data.len() as u64 {
            return Ok(Err(format!("width {w}: data stream length mismatch")));
        }
    }
    Ok(Ok(format!("{groups} groups, 3 widths")))
}

fn truncation() -> Outcome {
    let f = FloatFormat::Bf16;
    for mant in 0..=f.mantissa_mask() {
        for n in 0..=7 {
            let q = quantize_mantissa(mant, n, f)?;
            if quantize_mantissa(q, n, f)? != q {
                return Ok(Err(format!("not idempotent at M={mant:#x} n={n}")));
            }
            for k in 0..=n {
                if quantize_mantissa(q, k, f)? != quantize_mantissa(mant, k, f)? {
                    return Ok(Err(format!("nesting fails at M={mant:#x} n={n} k={k}")));
                }
            }
        }
    }
    Ok(Ok("all 128 mantissas x 8 widths".into()))
}

fn qm_saturation() -> Outcome {
    let p = BitlengthParam::new(0, TensorKind::Weights, FloatFormat::Bf16, 0.25);
    let values: Vec<u32> = (0..64).map(|i| 0x3F80 | i).collect();
    let grads = vec![1.0; 64];
    let g = qm_gradient(&p, &values, &grads, 0.1)?;
    if g != 0.1 * 0.25 {
        return Ok(Err(format!("saturated gradient {g}, expected gamma*lambda")));
    }
    Ok(Ok("floor(n) = m gives gamma*lambda".into()))
}

fn bitchop_rules() -> Outcome {
    let mut s = ChopState::new(ChopConfig::new(FloatFormat::Bf16))?;
    if s.decide(0.1)? != Decision::Hold {
        return Ok(Err("first period must hold".into()));
    }
    s.end_period(1.0)?;
    s.end_period(1.0)?;
    // Zero deviation so far: any change moves the width.
    if s.decide(0.9)? != Decision::Shrink || s.decide(1.1)? != Decision::Grow || s.decide(1.0)? != Decision::Hold {
        return Ok(Err("three-way decision wrong".into()));
    }
    s.begin_lr_change();
    if s.width() != 7 {
        return Ok(Err("bypass must emit full width".into()));
    }
    Ok(Ok("hold/shrink/grow/bypass".into()))
}

fn baseline_equivalence() -> Outcome {
    let mut cfg = TrainConfig::default();
    cfg.dataset.samples = 256;
    cfg.epochs = 3;
    cfg.lr.drops = vec![2];
    let plain = train(&cfg)?;
    let mut qm = cfg.clone();
    qm.quantizer = QuantizerKind::QuantumMantissa;
    qm.qm = crate::bitlearn::QmConfig {
        gamma: GammaSchedule::constant(0.0)?,
        ..crate::bitlearn::QmConfig::for_epochs(3)
    };
    let qm = train(&qm)?;
    if qm.batch_losses != plain.batch_losses || qm.model != plain.model {
        return Ok(Err("gamma = 0 run diverged from plain training".into()));
    }
    Ok(Ok(format!("{} batches bitwise equal", plain.batch_losses.len())))
}

fn perf() -> Outcome {
    let hw = HardwareConfig::default();
    let mem = synthetic_suite(SyntheticSuite::MemoryBound, 0.25, &hw);
    let r = run_report(&layer_names(&mem), &mem, &hw)?;
    if (r.speedup - 1.0 / r.traffic_ratio).abs() > 1e-12 * r.speedup {
        return Ok(Err(format!("memory-bound speedup {}", r.speedup)));
    }
    let cmp = synthetic_suite(SyntheticSuite::ComputeBound, 0.25, &hw);
    if run_report(&layer_names(&cmp), &cmp, &hw)?.speedup != 1.0 {
        return Ok(Err("compute-bound speedup is not 1".into()));
    }
    let mix = synthetic_suite(SyntheticSuite::Mixed, 0.5, &hw);
    let r = run_report(&layer_names(&mix), &mix, &hw)?;
    if r.flipped_fraction == 0.0 || r.speedup > 1.0 / r.traffic_ratio {
        return Ok(Err("mixed suite shows no boundness flip".into()));
    }
    Ok(Ok(format!("mixed speedup {:.3}, {:.0}% layers flipped", r.speedup, 100.0 * r.flipped_fraction)))
}

#[cfg(test)]
mod tests {
    #[test]
    fn quick_suite_passes() {
        for c in super::run_all(true) {
            assert!(c.passed, "{}: {}", c.name, c.detail);
        }
    }
}
