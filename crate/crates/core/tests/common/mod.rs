//! Helpers shared by the integration test targets.
#![allow(dead_code)]

use std::path::PathBuf;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use sfp_core::gecko::Variant;
use sfp_core::packer::{RawTensor, CONTAINER_VERSION};
use sfp_core::rng::{self, streams};
use sfp_core::{FloatFormat, PackConfig};

/// One committed reference tensor and the settings it was packed with.
pub struct GoldenCase {
    pub name: &'static str,
    pub format: FloatFormat,
    pub shape: &'static [u64],
    pub man_width: u32,
    pub signless: bool,
    pub variant: Variant,
    /// SHA-256 of the committed raw input and container.
    pub raw_sha256: &'static str,
    pub container_sha256: &'static str,
}

impl GoldenCase {
    pub fn config(&self) -> PackConfig {
        PackConfig::lossless(self.format)
            .with_man_width(self.man_width)
            .with_signless(self.signless)
            .with_variant(self.variant)
    }

    pub fn raw_path(&self) -> PathBuf {
        golden_dir().join(format!("{}.raw", self.name))
    }

    pub fn container_path(&self) -> PathBuf {
        golden_dir().join(format!("{}.sfpc", self.name))
    }

    /// Regenerates the input values. Only used when blessing; the tests
    /// read the committed raw files so a change in the random crates
    /// cannot move the goldens.
    pub fn generate(&self) -> RawTensor {
        let n: u64 = self.shape.iter().product();
        let mut r = rng::stream(0x601d, streams::DATA);
        let unit = Normal::new(0.0f64, 1.0).unwrap();
        let values: Vec<u32> = (0..n)
            .map(|i| match self.name {
                "fp32_lossless_100" => match i % 10 {
                    0 => 0,
                    1 => 0x8000_0000,
                    2 => r.gen::<u32>() & 0x807F_FFFF,
                    _ => {
                        let scale = 2f64.powi(r.gen_range(-6..6));
                        ((unit.sample(&mut r) * scale) as f32).to_bits()
                    }
                },
                "bf16_signless_m3" => {
                    if r.gen_bool(0.4) {
                        0
                    } else {
                        FloatFormat::Bf16.encode_f32(unit.sample(&mut r).abs() as f32)
                    }
                }
                "fp32_fixed_bias_m10" => ((unit.sample(&mut r) * 4.0) as f32).to_bits(),
                other => panic!("no generator for {other}"),
            })
            .collect();
        RawTensor::new(self.format, self.shape.to_vec(), values).unwrap()
    }
}

pub fn golden_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden")
}

pub fn golden_cases() -> Vec<GoldenCase> {
    assert_eq!(CONTAINER_VERSION, 1, "goldens describe container version 1");
    vec![
        GoldenCase {
            name: "fp32_lossless_100",
            format: FloatFormat::Fp32,
            shape: &[100],
            man_width: 23,
            signless: false,
            variant: Variant::DeltaBase,
            raw_sha256: "e64ba3db0215c17577a340f7b02954ca30fcd20db4b02384976b994e143f7d58",
            container_sha256: "4ace98b66eafe8fa55a52152c1593baaf3f050848ceec46c699b73308a6389da",
        },
        GoldenCase {
            name: "bf16_signless_m3",
            format: FloatFormat::Bf16,
            shape: &[2, 64],
            man_width: 3,
            signless: true,
            variant: Variant::DeltaBase,
            raw_sha256: "93fd888191fdeed142726b56b4041fc044c0db584b6e75b4b0734238d7c44498",
            container_sha256: "6dabf2b7df93a19f46057faf56dbcc8ae8523e71cbf87f0901abbaca064852d5",
        },
        GoldenCase {
            name: "fp32_fixed_bias_m10",
            format: FloatFormat::Fp32,
            shape: &[3, 10],
            man_width: 10,
            signless: false,
            variant: Variant::FixedBias,
            raw_sha256: "8b8893a5f06e86d6cd732a87a4ec196dc3f6c40b8058729113f7a9238f7a796a",
            container_sha256: "357a9c5951a6ac4ceeaa8fa43166304df7ec66a830dad7b8c0035bc46bb66f2b",
        },
    ]
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    hex::encode(Sha256::digest(bytes))
}
