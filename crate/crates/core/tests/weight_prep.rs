mod common;

use potacc_core::prep::{encode_tensor, scale_correct, Correction};
use potacc_core::qmm::LayerWeights;
use potacc_core::quant::{AffineQuant, IntTensor, QuantParams, TensorKind};
use potacc_core::{
    generate_levels, pack, unpack, Error, PotCode, PotScheme, PrepOptions, SchemeKind,
};
use proptest::prelude::*;
use rand::rngs::SmallRng;
use rand::{Rng, SeedableRng};

fn params(scales: Vec<f64>) -> QuantParams {
    let a = AffineQuant::new(0.02, 3).unwrap();
    QuantParams::new(scales, a, AffineQuant::new(0.5, 0).unwrap()).unwrap()
}

fn int8(shape: Vec<usize>, data: Vec<i32>) -> IntTensor {
    IntTensor::new(shape, data, TensorKind::WeightInt8).unwrap()
}

#[test]
fn table_examples() {
    let apot = PotScheme::of(SchemeKind::Apot);
    let c = scale_correct(
        &int8(vec![1, 3], vec![-127, 38, 0]),
        &params(vec![0.01]),
        &[254],
        apot,
        PrepOptions::default(),
    )
    .unwrap();
    assert_eq!(c.pot_int.data(), &[-10, 3, 0]);
    assert_eq!(c.corrections, vec![Correction { num: 127, den: 10 }]);
    assert_eq!(c.params.weight_scales(), &[0.01 * 127.0 / 10.0]);
    assert_eq!(c.bias, vec![20]);

    let qk = PotScheme::of(SchemeKind::QKeras);
    let c = scale_correct(
        &int8(vec![1, 2], vec![127, -1]),
        &params(vec![0.01]),
        &[0],
        qk,
        PrepOptions::default(),
    )
    .unwrap();
    assert_eq!(c.pot_int.data(), &[128, -1]);
    assert_eq!(c.corrections[0], Correction { num: 127, den: 128 });
    let unit = PrepOptions {
        qkeras_unit_correction: true,
    };
    let c = scale_correct(
        &int8(vec![1, 2], vec![127, -1]),
        &params(vec![0.01]),
        &[0],
        qk,
        unit,
    )
    .unwrap();
    assert_eq!(c.corrections[0], Correction::ONE);
    assert_eq!(c.params.weight_scales(), &[0.01]);
}

#[test]
fn filter_without_top_level_gets_its_own_correction() {
    let apot = PotScheme::of(SchemeKind::Apot);
    // second filter only reaches pot_int 8, which becomes its 127
    let q = int8(vec![2, 2], vec![127, 13, 127, 16]);
    let c = scale_correct(
        &q,
        &params(vec![0.01, 0.02]),
        &[0, 0],
        apot,
        PrepOptions::default(),
    )
    .unwrap();
    assert_eq!(c.pot_int.data(), &[10, 1, 8, 1]);
    assert_eq!(
        c.corrections,
        vec![
            Correction { num: 127, den: 10 },
            Correction { num: 127, den: 8 }
        ]
    );
}

#[test]
fn non_pot_weights_are_rejected() {
    let apot = PotScheme::of(SchemeKind::Apot);
    let q = int8(vec![1, 3], vec![127, 100, 0]);
    let err =
        scale_correct(&q, &params(vec![0.01]), &[0], apot, PrepOptions::default()).unwrap_err();
    assert!(
        matches!(err, Error::NotAPoTWeight { group: 0, .. }),
        "{err}"
    );
}

#[test]
fn pack_examples() {
    let c = |b| PotCode::new(b).unwrap();
    assert_eq!(pack(&[c(0x3), c(0x7)]), vec![0x73]);
    assert!(pack(&[]).is_empty());
    let five = pack(&[c(1), c(2), c(3), c(4), c(0xf)]);
    assert_eq!(five, vec![0x21, 0x43, 0x0f]);
    assert!(unpack(&[0xf0], 1).is_err());
    assert!(unpack(&[0x12], 3).is_err());
}

#[test]
fn dequantization_preserved_for_every_level() {
    for kind in SchemeKind::ALL {
        let scheme = PotScheme::of(kind);
        let levels = generate_levels(scheme).unwrap();
        let data: Vec<i32> = levels.levels().iter().map(|l| l.int8 as i32).collect();
        let s_w = 0.013;
        let c = scale_correct(
            &int8(vec![1, data.len()], data.clone()),
            &params(vec![s_w]),
            &[0],
            scheme,
            PrepOptions::default(),
        )
        .unwrap();
        let top = levels.max_pot_int() as f64;
        let s_pi = c.params.weight_scales()[0];
        for (l, &p) in levels.levels().iter().zip(c.pot_int.data()) {
            assert_eq!(p, l.pot_int, "{kind}");
            let exact = s_w * 127.0 * p as f64 / top;
            assert!(
                (s_pi * p as f64 - exact).abs() <= exact.abs() * 2f64.powi(-20),
                "{kind}"
            );
        }
        // every nibble decodes to a level
        let codes = encode_tensor(c.pot_int.data(), scheme).unwrap();
        assert!(codes
            .iter()
            .all(|code| levels.contains_pot_int(code.pot_int(scheme))));
    }
}

#[test]
fn bias_rescale_keeps_outputs_within_one_code() {
    let mut rng = SmallRng::seed_from_u64(99);
    for kind in SchemeKind::ALL {
        let scheme = PotScheme::of(kind);
        for _ in 0..300 {
            let g = common::random_geometry(&mut rng, 6, 8, 8);
            let (orig, prepped) = common::layer_pair(scheme, g.clone(), &mut rng);
            let LayerWeights::Packed(packed) = &prepped.weights else {
                unreachable!()
            };
            let input = common::random_acts(g.input_shape.clone(), &mut rng);
            let lowered = prepped.lower(&input).unwrap();
            let out = prepped
                .run_lowered(&lowered, potacc_core::Engine::Shift)
                .unwrap();
            // oracle: unrounded weights C * pot_int with the original S_W and q_b
            let pot = packed.pot_int();
            let (f, d) = (g.filters, g.depth());
            let (sa, za) = (
                orig.params.activation().scale,
                orig.params.activation().zero_point,
            );
            let (so, zo) = (orig.params.output().scale, orig.params.output().zero_point);
            for p in 0..lowered.shape()[0] {
                for fi in 0..f {
                    let c = packed.corrections()[fi].value();
                    let sw = orig.params.weight_scale(fi);
                    let mut acc = orig.bias[fi] as f64;
                    for k in 0..d {
                        acc += c
                            * pot.data()[fi * d + k] as f64
                            * (lowered.data()[p * d + k] - za) as f64;
                    }
                    let want = ((sw * sa * acc / so).round() + zo as f64).clamp(-128.0, 127.0);
                    let got = out.data()[p * f + fi] as f64;
                    assert!((got - want).abs() <= 1.0, "{kind}: {got} vs {want}");
                }
            }
        }
    }
}

fn codes_strategy() -> impl Strategy<Value = Vec<PotCode>> {
    prop::collection::vec((0u8..16).prop_map(|b| PotCode::new(b).unwrap()), 0..200)
}

proptest! {
    #[test]
    fn pack_round_trip(codes in codes_strategy()) {
        let bytes = pack(&codes);
        prop_assert_eq!(bytes.len(), codes.len().div_ceil(2));
        if codes.len() % 2 == 1 {
            prop_assert_eq!(bytes.last().unwrap() >> 4, 0);
        }
        prop_assert_eq!(unpack(&bytes, codes.len()).unwrap(), codes);
    }

    #[test]
    fn unpack_then_pack_is_identity(bytes in prop::collection::vec(any::<u8>(), 0..100)) {
        let codes = unpack(&bytes, bytes.len() * 2).unwrap();
        prop_assert_eq!(pack(&codes), bytes);
    }

    #[test]
    fn prep_maps_pot_weights_exactly(seed in any::<u64>(), kind in prop::sample::select(SchemeKind::ALL.to_vec())) {
        let mut rng = SmallRng::seed_from_u64(seed);
        let scheme = PotScheme::of(kind);
        let levels = generate_levels(scheme).unwrap();
        let (f, d) = (rng.random_range(1..6), rng.random_range(1..50));
        let w = common::pot_weights(scheme, f, d, &mut rng);
        let (q, scales) = potacc_core::quantize_weights(&w, &[f, d], potacc_core::Granularity::PerFilter).unwrap();
        let c = scale_correct(&q, &params(scales.clone()), &vec![0; f], scheme, PrepOptions::default()).unwrap();
        for fi in 0..f {
            let alpha = w[fi * d..(fi + 1) * d].iter().fold(0.0f64, |m, v| m.max(v.abs())) / levels.max_pot_int() as f64;
            for k in 0..d {
                let p = c.pot_int.data()[fi * d + k];
                prop_assert!((alpha * p as f64 - w[fi * d + k]).abs() <= 1e-9);
            }
            prop_assert_eq!(c.corrections[fi], Correction { num: 127, den: levels.max_pot_int() });
        }
    }
}
