//! Dynamic floating-point compression for neural-network training tensors.
//!
//! * [`floatcore`]: FP32/BF16 field access and mantissa truncation.
//! * [`gecko`]: lossless delta / fixed-bias exponent coding.
//! * [`packer`]: bit-exact model of the tandem column packer and the
//!   container file format.
//! * [`bitlearn`]: learned per-tensor mantissa bitlengths.
//! * [`bitchop`]: loss-driven network-wide mantissa width controller.
//! * [`trainer`]: small MLP trainer that drives both controllers.
//! * [`perfmodel`]: roofline time/energy estimates from traffic counts.
//! * [`statsbench`]: synthetic exponent distributions and brute-force
//!   size oracles.
//! * [`selftest`]: quick invariant checks for the command line.

// Negated comparisons are used on purpose so that NaN fails range checks.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bitchop;
pub mod bitio;
pub mod bitlearn;
pub mod error;
pub mod floatcore;
pub mod gecko;
pub mod packer;
pub mod perfmodel;
pub mod rng;
pub mod selftest;
pub mod statsbench;
pub mod trainer;

pub use error::{Error, Result};
pub use floatcore::{FloatFormat, FloatTriple, NonFinitePolicy};
pub use gecko::{RatioAccount, Variant};
pub use packer::{Container, ContainerHeader, PackConfig, PackedBlock};
pub use perfmodel::{HardwareConfig, LayerTraffic, PerfReport};
pub use trainer::{TrainConfig, TrainReport};
