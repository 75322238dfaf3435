//! Roofline time and energy estimates from per-layer traffic and MAC counts.
//!
//! Each layer takes `max(macs / peak, bytes / bandwidth)` seconds and
//! `bits * (e_dram + e_buffer) + macs * e_mac + codec` joules. A run is
//! costed twice, once with raw traffic and once with compressed traffic and
//! the same MAC count, and the two are compared.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HardwareConfig {
    pub peak_macs_per_s: f64,
    pub dram_bytes_per_s: f64,
    /// Joules per DRAM bit transferred.
    pub dram_j_per_bit: f64,
    pub mac_j: f64,
    /// Joules per bit moved through on-chip buffers.
    pub buffer_j_per_bit: f64,
    /// Joules per raw bit passing through the compressor or decompressor.
    pub codec_j_per_bit: f64,
}

impl Default for HardwareConfig {
    /// 8192 units x 4 MACs at 500 MHz; 8 channels of LPDDR4-3200 x16
    /// (6.4 GB/s each).
    fn default() -> Self {
        Self {
            peak_macs_per_s: 8192.0 * 4.0 * 500e6,
            dram_bytes_per_s: 8.0 * 6.4e9,
            dram_j_per_bit: 8e-12,
            mac_j: 5e-12,
            buffer_j_per_bit: 0.1e-12,
            codec_j_per_bit: 0.0,
        }
    }
}

impl HardwareConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.peak_macs_per_s > 0.0 && self.dram_bytes_per_s > 0.0) {
            return Err(Error::config("compute and bandwidth rates must be > 0"));
        }
        let energies = [self.dram_j_per_bit, self.mac_j, self.buffer_j_per_bit, self.codec_j_per_bit];
        if energies.iter().any(|e| !(*e >= 0.0)) {
            return Err(Error::config("energy costs must be >= 0"));
        }
        Ok(())
    }

    /// MACs per byte at which compute and memory time are equal.
    pub fn ridge_point(&self) -> f64 {
        self.peak_macs_per_s / self.dram_bytes_per_s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Boundness {
    Compute,
    Memory,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerCost {
    pub macs: u64,
    pub bytes: f64,
    pub t_compute: f64,
    pub t_memory: f64,
    pub t_total: f64,
    pub e_total: f64,
    pub boundness: Boundness,
}

/// Cost of one layer moving `bytes` and performing `macs`. Ties count as
/// compute-bound.
pub fn layer_cost(macs: u64, bytes: f64, hw: &HardwareConfig) -> Result<LayerCost> {
    hw.validate()?;
    if !(bytes >= 0.0) {
        return Err(Error::contract(format!("byte count {bytes} must be >= 0")));
    }
    let t_compute = macs as f64 / hw.peak_macs_per_s;
    let t_memory = bytes / hw.dram_bytes_per_s;
    let bits = bytes * 8.0;
    Ok(LayerCost {
        macs,
        bytes,
        t_compute,
        t_memory,
        t_total: t_compute.max(t_memory),
        e_total: bits * (hw.dram_j_per_bit + hw.buffer_j_per_bit) + macs as f64 * hw.mac_j,
        boundness: if t_memory > t_compute {
            Boundness::Memory
        } else {
            Boundness::Compute
        },
    })
}

/// Traffic of one layer (or one pass of a layer; entries with the same name
/// are summed).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerTraffic {
    pub layer: String,
    pub macs: u64,
    pub raw_bits: u64,
    pub compressed_bits: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerReport {
    pub layer: String,
    pub baseline: LayerCost,
    pub compressed: LayerCost,
    pub flipped_to_compute: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerfReport {
    pub layers: Vec<LayerReport>,
    pub baseline_time: f64,
    pub compressed_time: f64,
    pub speedup: f64,
    pub baseline_energy: f64,
    pub compressed_energy: f64,
    /// Compressed energy over baseline energy.
    pub energy_ratio: f64,
    /// Compressed traffic over raw traffic.
    pub traffic_ratio: f64,
    pub memory_bound_fraction_baseline: f64,
    pub memory_bound_fraction_compressed: f64,
    /// Layers that were memory-bound on raw traffic and compute-bound on
    /// compressed traffic, as a fraction of all layers.
    pub flipped_fraction: f64,
}

/// Costs `traffic` against the raw baseline. Every name in `layers` must
/// have at least one traffic entry; entries for unknown layers are rejected.
/// Layers are summed in the order given by `layers`.
pub fn run_report(layers: &[String], traffic: &[LayerTraffic], hw: &HardwareConfig) -> Result<PerfReport> {
    hw.validate()?;
    if layers.is_empty() {
        return Err(Error::config("no layers to cost"));
    }
    let mut merged: BTreeMap<&str, (u64, u64, u64)> = BTreeMap::new();
    for t in traffic {
        if !layers.contains(&t.layer) {
            return Err(Error::config(format!("traffic for unknown layer `{}`", t.layer)));
        }
        let e = merged.entry(&t.layer).or_default();
        e.0 += t.macs;
        e.1 += t.raw_bits;
        e.2 += t.compressed_bits;
    }
    let missing: Vec<&str> = layers
        .iter()
        .map(String::as_str)
        .filter(|l| !merged.contains_key(l))
        .collect();
    if !missing.is_empty() {
        return Err(Error::config(format!("no traffic recorded for layers: {}", missing.join(", "))));
    }

    let mut out = Vec::with_capacity(layers.len());
    let (mut raw_bits, mut comp_bits) = (0u64, 0u64);
    for name in layers {
        let (macs, raw, comp) = merged[name.as_str()];
        let baseline = layer_cost(macs, raw as f64 / 8.0, hw)?;
        let mut compressed = layer_cost(macs, comp as f64 / 8.0, hw)?;
        compressed.e_total += raw as f64 * hw.codec_j_per_bit;
        raw_bits += raw;
        comp_bits += comp;
        out.push(LayerReport {
            layer: name.clone(),
            flipped_to_compute: baseline.boundness == Boundness::Memory
                && compressed.boundness == Boundness::Compute,
            baseline,
            compressed,
        });
    }
    let n = out.len() as f64;
    let sum = |f: &dyn Fn(&LayerReport) -> f64| out.iter().map(f).sum::<f64>();
    let baseline_time = sum(&|l| l.baseline.t_total);
    let compressed_time = sum(&|l| l.compressed.t_total);
    let baseline_energy = sum(&|l| l.baseline.e_total);
    let compressed_energy = sum(&|l| l.compressed.e_total);
    let frac = |f: &dyn Fn(&LayerReport) -> bool| out.iter().filter(|l| f(l)).count() as f64 / n;
    Ok(PerfReport {
        baseline_time,
        compressed_time,
        speedup: baseline_time / compressed_time,
        baseline_energy,
        compressed_energy,
        energy_ratio: compressed_energy / baseline_energy,
        traffic_ratio: comp_bits as f64 / raw_bits as f64,
        memory_bound_fraction_baseline: frac(&|l| l.baseline.boundness == Boundness::Memory),
        memory_bound_fraction_compressed: frac(&|l| l.compressed.boundness == Boundness::Memory),
        flipped_fraction: frac(&|l| l.flipped_to_compute),
        layers: out,
    })
}

impl PerfReport {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Io(e.to_string()))
    }

    /// One row per layer: `layer,macs,raw_bytes,compressed_bytes,
    /// t_baseline,t_compressed,e_baseline,e_compressed,bound_baseline,
    /// bound_compressed`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let io = |e: csv::Error| Error::Io(e.to_string());
        w.write_record([
            "layer",
            "macs",
            "raw_bytes",
            "compressed_bytes",
            "t_baseline",
            "t_compressed",
            "e_baseline",
            "e_compressed",
            "bound_baseline",
            "bound_compressed",
        ])
        .map_err(io)?;
        let bound = |b: Boundness| match b {
            Boundness::Compute => "compute",
            Boundness::Memory => "memory",
        };
        for l in &self.layers {
            w.write_record([
                l.layer.clone(),
                l.baseline.macs.to_string(),
                l.baseline.bytes.to_string(),
                l.compressed.bytes.to_string(),
                l.baseline.t_total.to_string(),
                l.compressed.t_total.to_string(),
                l.baseline.e_total.to_string(),
                l.compressed.e_total.to_string(),
                bound(l.baseline.boundness).to_string(),
                bound(l.compressed.boundness).to_string(),
            ])
            .map_err(io)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Reads traffic rows with header `layer,macs,raw_bits,compressed_bits`.
pub fn read_traffic_csv<R: Read>(input: R) -> Result<Vec<LayerTraffic>> {
    csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(input)
        .deserialize()
        .map(|r| r.map_err(|e| Error::config(format!("traffic csv: {e}"))))
        .collect()
}

pub fn write_traffic_csv<W: Write>(out: W, traffic: &[LayerTraffic]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for t in traffic {
        w.serialize(t).map_err(|e| Error::Io(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

/// Layer names of `traffic` in first-seen order.
pub fn layer_names(traffic: &[LayerTraffic]) -> Vec<String> {
    let mut names: Vec<String> = Vec::new();
    for t in traffic {
        if !names.contains(&t.layer) {
            names.push(t.layer.clone());
        }
    }
    names
}

/// Synthetic layer sets at fixed arithmetic intensities relative to the
/// ridge point of `hw`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SyntheticSuite {
    /// Every layer far below the ridge, even after compression.
    MemoryBound,
    /// Every layer far above the ridge.
    ComputeBound,
    /// Some layers stay memory-bound, some are compute-bound throughout and
    /// some cross the ridge once their traffic shrinks.
    Mixed,
}

/// Builds `suite` with every layer compressed to `ratio` of its raw traffic.
pub fn synthetic_suite(suite: SyntheticSuite, ratio: f64, hw: &HardwareConfig) -> Vec<LayerTraffic> {
    let ridge = hw.ridge_point();
    // (MACs per raw byte as a multiple of the ridge point)
    let intensities: &[f64] = match suite {
        SyntheticSuite::MemoryBound => &[0.01, 0.02, 0.05, 0.1],
        SyntheticSuite::ComputeBound => &[4.0, 8.0, 20.0, 50.0],
        SyntheticSuite::Mixed => &[0.05, 0.4, 0.6, 0.8, 3.0, 10.0],
    };
    intensities
        .iter()
        .enumerate()
        .map(|(i, &k)| {
            let raw_bytes = (1u64 << 20) * (i as u64 + 1);
            let raw_bits = raw_bytes * 8;
            LayerTraffic {
                layer: format!("layer{i}"),
                macs: (k * ridge * raw_bytes as f64).round() as u64,
                raw_bits,
                compressed_bits: (raw_bits as f64 * ratio).round() as u64,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn layer_cost_examples() {
        let hw = HardwareConfig::default();
        assert_eq!(hw.peak_macs_per_s, 16.384e12);
        assert_eq!(hw.dram_bytes_per_s, 51.2e9);
        let c = layer_cost(1_000_000_000, 0.0, &hw).unwrap();
        // 1e9 / 16.384e12 s
        assert!((c.t_compute - 61.03515625e-6).abs() < 1e-15);
        let hw50 = HardwareConfig { dram_bytes_per_s: 5e10, ..hw };
        let c = layer_cost(0, 1e8, &hw50).unwrap();
        assert_eq!(c.t_memory, 2e-3);
        assert_eq!(c.boundness, Boundness::Memory);
        let half = layer_cost(0, 0.5e8, &hw50).unwrap();
        assert_eq!(half.t_total * 2.0, c.t_total);
        let bad = HardwareConfig { peak_macs_per_s: 0.0, ..hw };
        assert!(layer_cost(1, 1.0, &bad).is_err());
    }

    #[test]
    fn missing_layers_are_listed() {
        let hw = HardwareConfig::default();
        let names = vec!["a".to_string(), "b".to_string(), "c".to_string()];
        let t = vec![LayerTraffic { layer: "b".into(), macs: 1, raw_bits: 8, compressed_bits: 8 }];
        match run_report(&names, &t, &hw) {
            Err(Error::Config(msg)) => assert!(msg.contains("a, c"), "{msg}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn suites_behave() {
        let hw = HardwareConfig::default();
        let mem = synthetic_suite(SyntheticSuite::MemoryBound, 0.25, &hw);
        let r = run_report(&layer_names(&mem), &mem, &hw).unwrap();
        assert!((r.speedup - 4.0).abs() < 1e-12);
        let cmp = synthetic_suite(SyntheticSuite::ComputeBound, 0.25, &hw);
        let r = run_report(&layer_names(&cmp), &cmp, &hw).unwrap();
        assert_eq!(r.speedup, 1.0);
        let mix = synthetic_suite(SyntheticSuite::Mixed, 0.5, &hw);
        let r = run_report(&layer_names(&mix), &mix, &hw).unwrap();
        assert!(r.speedup > 1.0 && r.speedup < 2.0);
        assert!(r.flipped_fraction > 0.0);
        let mut csv = Vec::new();
        write_traffic_csv(&mut csv, &mix).unwrap();
        assert_eq!(read_traffic_csv(csv.as_slice()).unwrap(), mix);
    }

    proptest! {
        #[test]
        fn speedup_bounded_by_traffic_reduction(
            layers in prop::collection::vec((0u64..1u64 << 40, 1u64..1u64 << 36, 0.01f64..=1.0), 1..12)
        ) {
            let hw = HardwareConfig::default();
            let traffic: Vec<LayerTraffic> = layers
                .iter()
                .enumerate()
                .map(|(i, &(macs, raw, r))| LayerTraffic {
                    layer: format!("l{i}"),
                    macs,
                    raw_bits: raw,
                    compressed_bits: ((raw as f64 * r) as u64).max(1),
                })
                .collect();
            let rep = run_report(&layer_names(&traffic), &traffic, &hw).unwrap();
            prop_assert!(rep.speedup >= 1.0 - 1e-12);
            prop_assert!(rep.speedup <= (1.0 / rep.traffic_ratio) * (1.0 + 1e-12));

            let no_mac = HardwareConfig { mac_j: 0.0, ..hw };
            let rep = run_report(&layer_names(&traffic), &traffic, &no_mac).unwrap();
            prop_assert!((rep.energy_ratio - rep.traffic_ratio).abs() <= 1e-12 * rep.traffic_ratio);
        }
    }
}
