#![allow(dead_code)]

use potacc_core::qmm::{Geometry, LayerWeights, Padding, QuantLayer};
use potacc_core::quant::{
    quantize_bias, quantize_weights, AffineQuant, Granularity, IntTensor, QuantParams, TensorKind,
};
use potacc_core::{generate_levels, preprocess, PotScheme, PrepOptions, SchemeKind};
use rand::rngs::SmallRng;
use rand::Rng;

/// Float weights that sit exactly on `alpha * level`, with the largest
/// level present in every filter.
pub fn pot_weights(
    scheme: PotScheme,
    filters: usize,
    depth: usize,
    rng: &mut SmallRng,
) -> Vec<f64> {
    let levels = generate_levels(scheme).unwrap();
    let vals: Vec<f64> = levels
        .levels()
        .iter()
        .map(|l| l.pot_float.to_f64())
        .collect();
    let max = vals.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut w = Vec::with_capacity(filters * depth);
    for _ in 0..filters {
        let alpha = rng.random_range(0.05..0.4);
        let pin = rng.random_range(0..depth);
        for d in 0..depth {
            let v = if d == pin {
                if rng.random() {
                    max
                } else {
                    -max
                }
            } else {
                vals[rng.random_range(0..vals.len())]
            };
            w.push(alpha * v);
        }
    }
    w
}

pub fn random_acts(shape: Vec<usize>, rng: &mut SmallRng) -> IntTensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-128..=127)).collect();
    IntTensor::new(shape, data, TensorKind::Activation).unwrap()
}

pub fn random_params(filter_scales: Vec<f64>, rng: &mut SmallRng, depth: usize) -> QuantParams {
    let s_a = rng.random_range(0.005..0.05);
    let z_a = rng.random_range(-20..=20);
    let s_w = filter_scales.iter().cloned().fold(0.0, f64::max);
    // output grid wide enough that most outputs land inside the int8 range
    let s_o = s_w * s_a * (depth as f64).sqrt() * rng.random_range(20.0..80.0);
    QuantParams::new(
        filter_scales,
        AffineQuant::new(s_a, z_a).unwrap(),
        AffineQuant::new(s_o, rng.random_range(-10..=10)).unwrap(),
    )
    .unwrap()
}

/// An int8-stage layer built from PoT float weights, plus its preprocessed
/// counterpart.
pub fn layer_pair(
    scheme: PotScheme,
    geometry: Geometry,
    rng: &mut SmallRng,
) -> (QuantLayer, QuantLayer) {
    let (f, d) = (geometry.filters, geometry.depth());
    let w = pot_weights(scheme, f, d, rng);
    let (q_w, scales) =
        quantize_weights(&w, &geometry.weight_shape(), Granularity::PerFilter).unwrap();
    let params = random_params(scales, rng, d);
    let bias: Vec<f64> = (0..f)
        .map(|_| rng.random_range(-20.0..20.0) * params.output().scale)
        .collect();
    let q_b = quantize_bias(&bias, &params).unwrap();
    let prepared = preprocess(&q_w, &params, &q_b, scheme, PrepOptions::default()).unwrap();
    let int8 = QuantLayer {
        name: "l".into(),
        geometry: geometry.clone(),
        params,
        weights: LayerWeights::Int8(q_w),
        bias: q_b,
    };
    let pot = QuantLayer {
        name: "l".into(),
        geometry,
        params: prepared.params,
        weights: LayerWeights::Packed(prepared.packed),
        bias: prepared.bias,
    };
    (int8, pot)
}

pub fn random_geometry(rng: &mut SmallRng, max_hw: usize, max_c: usize, max_f: usize) -> Geometry {
    loop {
        let g = if rng.random_bool(0.3) {
            Geometry::fully_connected(
                rng.random_range(1..=4),
                rng.random_range(1..=max_c * 9),
                rng.random_range(1..=max_f),
            )
        } else {
            let k = rng.random_range(1..=3);
            let s = rng.random_range(1..=2);
            let pad = if rng.random() {
                Padding::Same
            } else {
                Padding::Valid
            };
            Geometry::conv2d(
                [
                    1,
                    rng.random_range(1..=max_hw),
                    rng.random_range(1..=max_hw),
                    rng.random_range(1..=max_c),
                ],
                rng.random_range(1..=max_f),
                [k, k],
                [s, s],
                pad,
            )
        };
        if g.validate().is_ok() {
            return g;
        }
    }
}

pub const SCHEMES: [SchemeKind; 3] = SchemeKind::ALL;
