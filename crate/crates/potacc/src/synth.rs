//! Synthetic PoT-quantized models with the layer shapes of common networks.
//!
//! Only conv and FC layers are listed; depthwise convolutions, pooling and
//! attention score products are left out. Every weight is a scheme level
//! scaled by a per-filter factor, and every filter contains the largest
//! level, so preprocessing always finds the level that maps to 127.

use potacc_core::levels::generate_levels;
use potacc_core::qmm::{Geometry, Padding};
use potacc_core::quant::{AffineQuant, Granularity};
use potacc_core::{PotScheme, SchemeKind};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::convert::{quantize_model, FloatLayer, FloatModel};
use crate::model::{Graph, Model, Result};

pub const PRESETS: [&str; 6] = [
    "tiny",
    "mobilenetv2",
    "resnet18",
    "inceptionv1",
    "efficientnet-l",
    "deit",
];

/// Shape of one synthetic layer.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum LayerShape {
    Conv {
        name: String,
        hw: usize,
        channels: usize,
        filters: usize,
        kernel: usize,
        stride: usize,
        padding: Padding,
    },
    Fc {
        name: String,
        rows: usize,
        inputs: usize,
        filters: usize,
    },
}

impl LayerShape {
    fn conv(name: impl Into<String>, hw: usize, c: usize, f: usize, k: usize, s: usize) -> Self {
        LayerShape::Conv {
            name: name.into(),
            hw,
            channels: c,
            filters: f,
            kernel: k,
            stride: s,
            padding: Padding::Same,
        }
    }

    fn fc(name: impl Into<String>, rows: usize, inputs: usize, filters: usize) -> Self {
        LayerShape::Fc {
            name: name.into(),
            rows,
            inputs,
            filters,
        }
    }

    pub fn geometry(&self) -> Geometry {
        match *self {
            LayerShape::Conv {
                hw,
                channels,
                filters,
                kernel,
                stride,
                padding,
                ..
            } => Geometry::conv2d(
                [1, hw, hw, channels],
                filters,
                [kernel, kernel],
                [stride, stride],
                padding,
            ),
            LayerShape::Fc {
                rows,
                inputs,
                filters,
                ..
            } => Geometry::fully_connected(rows, inputs, filters),
        }
    }

    pub fn name(&self) -> &str {
        match self {
            LayerShape::Conv { name, .. } | LayerShape::Fc { name, .. } => name,
        }
    }
}

fn resnet18() -> Vec<LayerShape> {
    let mut l = vec![LayerShape::conv("conv1", 224, 3, 64, 7, 2)];
    let (mut h, mut c) = (56usize, 64);
    for (stage, (f, s)) in [(64, 1), (128, 2), (256, 2), (512, 2)]
        .into_iter()
        .enumerate()
    {
        for b in 0..2 {
            let st = if b == 0 { s } else { 1 };
            let ho = h.div_ceil(st);
            l.push(LayerShape::conv(
                format!("layer{}.{b}.conv1", stage + 1),
                h,
                c,
                f,
                3,
                st,
            ));
            l.push(LayerShape::conv(
                format!("layer{}.{b}.conv2", stage + 1),
                ho,
                f,
                f,
                3,
                1,
            ));
            if st != 1 || c != f {
                l.push(LayerShape::conv(
                    format!("layer{}.{b}.downsample", stage + 1),
                    h,
                    c,
                    f,
                    1,
                    st,
                ));
            }
            h = ho;
            c = f;
        }
    }
    l.push(LayerShape::fc("fc", 1, 512, 1000));
    l
}

/// Inverted-residual network: 1x1 expand and project per block.
fn inverted_residual(
    stem: usize,
    blocks: &[(usize, usize, usize, usize)],
    head: usize,
) -> Vec<LayerShape> {
    let mut l = vec![LayerShape::conv("stem", 224, 3, stem, 3, 2)];
    let (mut h, mut c) = (112usize, stem);
    for (i, &(t, out, n, s)) in blocks.iter().enumerate() {
        for j in 0..n {
            let st = if j == 0 { s } else { 1 };
            let hidden = c * t;
            if t != 1 {
                l.push(LayerShape::conv(
                    format!("block{i}.{j}.expand"),
                    h,
                    c,
                    hidden,
                    1,
                    1,
                ));
            }
            h = h.div_ceil(st);
            l.push(LayerShape::conv(
                format!("block{i}.{j}.project"),
                h,
                hidden,
                out,
                1,
                1,
            ));
            c = out;
        }
    }
    l.push(LayerShape::conv("head", h, c, head, 1, 1));
    l.push(LayerShape::fc("classifier", 1, head, 1000));
    l
}

fn mobilenetv2() -> Vec<LayerShape> {
    inverted_residual(
        32,
        &[
            (1, 16, 1, 1),
            (6, 24, 2, 2),
            (6, 32, 3, 2),
            (6, 64, 4, 2),
            (6, 96, 3, 1),
            (6, 160, 3, 2),
            (6, 320, 1, 1),
        ],
        1280,
    )
}

fn efficientnet_lite0() -> Vec<LayerShape> {
    inverted_residual(
        32,
        &[
            (1, 16, 1, 1),
            (6, 24, 2, 2),
            (6, 40, 2, 2),
            (6, 80, 3, 2),
            (6, 112, 3, 1),
            (6, 192, 4, 2),
            (6, 320, 1, 1),
        ],
        1280,
    )
}

fn inceptionv1() -> Vec<LayerShape> {
    let mut l = vec![
        LayerShape::conv("conv1", 224, 3, 64, 7, 2),
        LayerShape::conv("conv2.reduce", 56, 64, 64, 1, 1),
        LayerShape::conv("conv2", 56, 64, 192, 3, 1),
    ];
    // (name, hw, in, 1x1, 3x3 reduce, 3x3, 5x5 reduce, 5x5, pool proj)
    let modules = [
        ("3a", 28, 192, 64, 96, 128, 16, 32, 32),
        ("3b", 28, 256, 128, 128, 192, 32, 96, 64),
        ("4a", 14, 480, 192, 96, 208, 16, 48, 64),
        ("4b", 14, 512, 160, 112, 224, 24, 64, 64),
        ("4c", 14, 512, 128, 128, 256, 24, 64, 64),
        ("4d", 14, 512, 112, 144, 288, 32, 64, 64),
        ("4e", 14, 528, 256, 160, 320, 32, 128, 128),
        ("5a", 7, 832, 256, 160, 320, 32, 128, 128),
        ("5b", 7, 832, 384, 192, 384, 48, 128, 128),
    ];
    for (m, hw, c, b1, r3, b3, r5, b5, pp) in modules {
        l.push(LayerShape::conv(
            format!("inception{m}.1x1"),
            hw,
            c,
            b1,
            1,
            1,
        ));
        l.push(LayerShape::conv(
            format!("inception{m}.3x3_reduce"),
            hw,
            c,
            r3,
            1,
            1,
        ));
        l.push(LayerShape::conv(
            format!("inception{m}.3x3"),
            hw,
            r3,
            b3,
            3,
            1,
        ));
        l.push(LayerShape::conv(
            format!("inception{m}.5x5_reduce"),
            hw,
            c,
            r5,
            1,
            1,
        ));
        l.push(LayerShape::conv(
            format!("inception{m}.5x5"),
            hw,
            r5,
            b5,
            5,
            1,
        ));
        l.push(LayerShape::conv(
            format!("inception{m}.pool_proj"),
            hw,
            c,
            pp,
            1,
            1,
        ));
    }
    l.push(LayerShape::fc("fc", 1, 1024, 1000));
    l
}

/// DeiT-Tiny: 16x16 patch embedding, 12 blocks, 197 tokens of width 192.
fn deit_tiny() -> Vec<LayerShape> {
    let mut l = vec![LayerShape::Conv {
        name: "patch_embed".into(),
        hw: 224,
        channels: 3,
        filters: 192,
        kernel: 16,
        stride: 16,
        padding: Padding::Valid,
    }];
    let tokens = 197;
    for b in 0..12 {
        l.push(LayerShape::fc(
            format!("blocks.{b}.attn.qkv"),
            tokens,
            192,
            576,
        ));
        l.push(LayerShape::fc(
            format!("blocks.{b}.attn.proj"),
            tokens,
            192,
            192,
        ));
        l.push(LayerShape::fc(
            format!("blocks.{b}.mlp.fc1"),
            tokens,
            192,
            768,
        ));
        l.push(LayerShape::fc(
            format!("blocks.{b}.mlp.fc2"),
            tokens,
            768,
            192,
        ));
    }
    l.push(LayerShape::fc("head", 1, 192, 1000));
    l
}

fn tiny() -> Vec<LayerShape> {
    vec![
        LayerShape::conv("conv1", 8, 3, 8, 3, 1),
        LayerShape::conv("conv2", 8, 8, 16, 3, 2),
        LayerShape::fc("fc", 1, 4 * 4 * 16, 10),
    ]
}

/// Layer shapes of a preset, and whether they form an executable chain.
pub fn preset_layers(preset: &str) -> Option<(Vec<LayerShape>, Graph)> {
    let layers = match preset.to_ascii_lowercase().as_str() {
        "tiny" => return Some((tiny(), Graph::Chain)),
        "mobilenetv2" => mobilenetv2(),
        "resnet18" => resnet18(),
        "inceptionv1" => inceptionv1(),
        "efficientnet-l" | "efficientnet-lite0" => efficientnet_lite0(),
        "deit" | "deit-tiny" => deit_tiny(),
        _ => return None,
    };
    Some((layers, Graph::LayerList))
}

/// Real-valued weights drawn from the scheme's levels, one random scale per
/// filter, deterministic in `seed`.
pub fn synth_float_model(
    name: &str,
    layers: &[LayerShape],
    graph: Graph,
    scheme: SchemeKind,
    seed: u64,
) -> FloatModel {
    let levels = generate_levels(PotScheme::of(scheme)).expect("4-bit schemes are valid");
    let values: Vec<f64> = levels
        .levels()
        .iter()
        .map(|l| l.pot_float.to_f64())
        .collect();
    let top = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut act = AffineQuant {
        scale: 0.02,
        zero_point: -10,
    };
    let mut out = Vec::with_capacity(layers.len());
    for shape in layers {
        let g = shape.geometry();
        let depth = g.depth();
        let per_filter = depth;
        if graph == Graph::LayerList {
            act = AffineQuant {
                scale: rng.random_range(0.01..0.1),
                zero_point: rng.random_range(-20..=20),
            };
        }
        let mut weights = Vec::with_capacity(g.filters * per_filter);
        let mut alpha_sum = 0.0;
        for _ in 0..g.filters {
            let alpha: f64 = rng.random_range(0.05..0.4);
            alpha_sum += alpha;
            let start = weights.len();
            weights
                .extend((0..per_filter).map(|_| alpha * values[rng.random_range(0..values.len())]));
            let pin = start + rng.random_range(0..per_filter);
            let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            weights[pin] = sign * alpha * top;
        }
        // keep outputs in range: roughly sqrt(depth) partial sums of +-60 x +-40
        let s_w = alpha_sum / g.filters as f64 * top / 127.0;
        let output = AffineQuant {
            scale: s_w * act.scale * (depth as f64).sqrt() * 60.0,
            zero_point: rng.random_range(-10..=10),
        };
        let bias: Vec<f64> = (0..g.filters)
            .map(|_| rng.random_range(-20.0..20.0) * output.scale)
            .collect();
        let layer = match shape {
            LayerShape::Conv {
                name,
                hw,
                channels,
                filters,
                kernel,
                stride,
                padding,
            } => FloatLayer::Conv2d {
                name: name.clone(),
                input_shape: [1, *hw, *hw, *channels],
                filters: *filters,
                kernel: [*kernel, *kernel],
                stride: [*stride, *stride],
                padding: *padding,
                weights,
                bias,
                activation: act,
                output,
            },
            LayerShape::Fc {
                name,
                rows,
                inputs,
                filters,
            } => FloatLayer::FullyConnected {
                name: name.clone(),
                input_shape: [*rows, *inputs],
                filters: *filters,
                weights,
                bias,
                activation: act,
                output,
            },
        };
        out.push(layer);
        act = output;
    }
    FloatModel {
        name: name.into(),
        scheme,
        graph,
        layers: out,
    }
}

/// Synthetic int8-stage model for a preset.
pub fn synth_model(preset: &str, scheme: SchemeKind, seed: u64) -> Option<Result<Model>> {
    let (layers, graph) = preset_layers(preset)?;
    let float = synth_float_model(preset, &layers, graph, scheme, seed);
    Some(quantize_model(&float, Granularity::PerFilter))
}
