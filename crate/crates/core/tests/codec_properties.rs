use proptest::prelude::*;
use sfp_core::floatcore::{decompose, quantize_bits};
use sfp_core::gecko::{account_exponents, encode_delta, encode_fixed_bias, ExponentGroup};
use sfp_core::packer::{compress, predict_size, row_layouts, RowDescriptor};
use sfp_core::statsbench::{oracle_encode_size, oracle_group_bits};
use sfp_core::{Container, FloatFormat, NonFinitePolicy, PackConfig, Variant};

fn format() -> impl Strategy<Value = FloatFormat> {
    prop_oneof![Just(FloatFormat::Fp32), Just(FloatFormat::Bf16)]
}

fn variant() -> impl Strategy<Value = Variant> {
    prop_oneof![Just(Variant::DeltaBase), Just(Variant::FixedBias)]
}

/// Finite patterns of `fmt`, biased towards clustered exponents.
fn tensor(fmt: FloatFormat, max_len: usize) -> impl Strategy<Value = Vec<u32>> {
    let m = fmt.mantissa_bits();
    let clustered = (100u32..150, any::<u32>(), any::<bool>()).prop_map(move |(e, mant, s)| {
        ((s as u32) << (fmt.width() - 1)) | (e << m) | (mant & fmt.mantissa_mask())
    });
    let anything = any::<u32>().prop_map(move |v| {
        let v = v & fmt.pattern_mask();
        if decompose(v, fmt).is_non_finite() {
            v & !(1 << (fmt.width() - 2))
        } else {
            v
        }
    });
    prop::collection::vec(prop_oneof![3 => clustered, 1 => anything], 0..max_len)
}

fn case() -> impl Strategy<Value = (FloatFormat, Vec<u32>, u32, bool, Variant)> {
    format().prop_flat_map(|fmt| {
        (
            Just(fmt),
            tensor(fmt, 300),
            0..=fmt.mantissa_bits(),
            any::<bool>(),
            variant(),
        )
    })
}

fn config(fmt: FloatFormat, width: u32, signless: bool, variant: Variant) -> PackConfig {
    PackConfig::lossless(fmt)
        .with_man_width(width)
        .with_signless(signless)
        .with_variant(variant)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn lossy_decode_equals_truncation((fmt, values, width, signless, variant) in case()) {
        let values: Vec<u32> = if signless {
            values.iter().map(|v| v & (fmt.pattern_mask() >> 1)).collect()
        } else {
            values
        };
        let cfg = config(fmt, width, signless, variant);
        let c = Container::pack(&values, &[values.len() as u64], &cfg).unwrap();
        let back = Container::from_bytes(&c.to_bytes()).unwrap().unpack().unwrap();
        let expected: Vec<u32> = values
            .iter()
            .map(|&v| quantize_bits(v, width, fmt, NonFinitePolicy::Reject).unwrap())
            .collect();
        prop_assert_eq!(back, expected);
    }

    #[test]
    fn lossless_is_identity((fmt, values, _w, _s, variant) in case()) {
        let cfg = config(fmt, fmt.mantissa_bits(), false, variant);
        let c = Container::pack(&values, &[values.len() as u64], &cfg).unwrap();
        prop_assert_eq!(c.unpack().unwrap(), values);
    }

    /// Every row occupies the same container width in all eight lanes, so
    /// the lanes stay in step and the closed-form size matches.
    #[test]
    fn lanes_advance_in_tandem((fmt, values, width, _s, variant) in case()) {
        let cfg = config(fmt, width, false, variant);
        let block = compress(&values, &cfg).unwrap();
        let rows: u64 = row_layouts(&values, &cfg)
            .unwrap()
            .iter()
            .flat_map(|g| g.iter().map(RowDescriptor::container_bits))
            .map(u64::from)
            .sum();
        prop_assert_eq!(block.lane_bits, rows);
        let size = predict_size(&values, &cfg).unwrap();
        prop_assert_eq!(size.lane_bits, block.lane_bits);
        prop_assert_eq!(size.meta_bits, block.meta_bits);
        prop_assert_eq!(size.data_stream_bits, 8 * block.data.len() as u64);
        prop_assert_eq!(block.data.len() % (8 * fmt.width() as usize / 8), 0);
    }

    #[test]
    fn narrower_mantissa_never_grows((fmt, values, width, signless, variant) in case()) {
        prop_assume!(width > 0);
        let values: Vec<u32> = values.iter().map(|v| v & (fmt.pattern_mask() >> 1)).collect();
        let wide = predict_size(&values, &config(fmt, width, signless, variant)).unwrap();
        let narrow = predict_size(&values, &config(fmt, width - 1, signless, variant)).unwrap();
        prop_assert!(narrow.total_bits() <= wide.total_bits());
        if !values.is_empty() {
            prop_assert!(narrow.total_bits() < wide.total_bits());
        }
    }

    #[test]
    fn gecko_round_trip_and_oracle(g in prop::array::uniform32(any::<u8>()), h in prop::array::uniform32(any::<u8>())) {
        let mut e = [0u8; 64];
        e[..32].copy_from_slice(&g);
        e[32..].copy_from_slice(&h);
        let group = ExponentGroup::new(e);
        let enc = encode_delta(&group);
        prop_assert_eq!(enc.decode().unwrap(), group);
        prop_assert_eq!(enc.encoded_bits(), oracle_group_bits(&e));
        for row in e.chunks_exact(8) {
            let row: [u8; 8] = row.try_into().unwrap();
            prop_assert_eq!(encode_fixed_bias(&row, 127).decode().unwrap(), row);
        }
    }

    #[test]
    fn exponent_account_matches_oracle(exps in prop::collection::vec(any::<u8>(), 1..400), variant in variant()) {
        prop_assert_eq!(account_exponents(&exps, variant, 127), oracle_encode_size(&exps, variant, 127));
    }

    /// Damaged containers are rejected or decode to something, never panic.
    #[test]
    fn damaged_containers_do_not_panic(
        (fmt, values, width, _s, variant) in case(),
        cut in any::<prop::sample::Index>(),
        flip in any::<prop::sample::Index>(),
        bit in 0u8..8,
    ) {
        let cfg = config(fmt, width, false, variant);
        let bytes = Container::pack(&values, &[values.len() as u64], &cfg).unwrap().to_bytes();
        let truncated = &bytes[..cut.index(bytes.len())];
        prop_assert!(Container::from_bytes(truncated).is_err());
        let mut flipped = bytes.clone();
        let i = flip.index(flipped.len());
        flipped[i] ^= 1 << bit;
        if let Ok(c) = Container::from_bytes(&flipped) {
            let _ = c.unpack();
        }
    }
}

#[test]
fn container_bytes_are_deterministic() {
    let values: Vec<u32> = (0..5000u32).map(|i| (i.wrapping_mul(2_654_435_761)) & 0x7F7F_FFFF).collect();
    for variant in [Variant::DeltaBase, Variant::FixedBias] {
        let cfg = config(FloatFormat::Fp32, 9, false, variant);
        let a = Container::pack(&values, &[50, 100], &cfg).unwrap().to_bytes();
        let b = Container::pack(&values, &[50, 100], &cfg).unwrap().to_bytes();
        assert_eq!(a, b);
    }
}
