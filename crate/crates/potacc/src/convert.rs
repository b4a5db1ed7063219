//! Model conversion (float -> int8 stage) and weight preprocessing
//! (int8 stage -> pot_int_e stage).

use std::path::Path;

use potacc_core::prep::{preprocess, PrepOptions};
use potacc_core::qmm::{Geometry, LayerKind, LayerWeights, Padding, QuantLayer};
use potacc_core::quant::{quantize_bias, quantize_weights, AffineQuant, Granularity, QuantParams};
use potacc_core::{PotScheme, SchemeKind};
use serde::{Deserialize, Serialize};

use crate::model::{from_json, Graph, Model, ModelError, ModelLayer, Result, Stage};

/// A layer with real-valued weights (OHWI or FK) and bias.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum FloatLayer {
    Conv2d {
        name: String,
        input_shape: [usize; 4],
        filters: usize,
        kernel: [usize; 2],
        stride: [usize; 2],
        padding: Padding,
        weights: Vec<f64>,
        bias: Vec<f64>,
        activation: AffineQuant,
        output: AffineQuant,
    },
    FullyConnected {
        name: String,
        input_shape: [usize; 2],
        filters: usize,
        weights: Vec<f64>,
        bias: Vec<f64>,
        activation: AffineQuant,
        output: AffineQuant,
    },
    Other {
        name: String,
        op: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        cpu_time_ms: Option<f64>,
    },
}

/// A PoT-trained model before conversion.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FloatModel {
    pub name: String,
    pub scheme: SchemeKind,
    pub graph: Graph,
    pub layers: Vec<FloatLayer>,
}

impl FloatModel {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| ModelError::Read {
            path: path.into(),
            source,
        })?;
        from_json(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self).expect("float model serializes");
        crate::model::write_file(path, text.as_bytes())
    }
}

fn at(i: usize) -> impl Fn(potacc_core::Error) -> ModelError {
    move |e| ModelError::Schema {
        path: format!("layers[{i}]"),
        message: e.to_string(),
    }
}

/// Quantize weights (symmetric int8) and biases of every conv/FC layer. FC layers always end up with one scale per filter.
pub fn quantize_model(float: &FloatModel, granularity: Granularity) -> Result<Model> {
    let mut layers = Vec::with_capacity(float.layers.len());
    for (i, layer) in float.layers.iter().enumerate() {
        let (name, geometry, weights, bias, activation, output) = match layer {
            FloatLayer::Other {
                name,
                op,
                cpu_time_ms,
            } => {
                layers.push(ModelLayer::Cpu {
                    name: name.clone(),
                    op: op.clone(),
                    cpu_time_ms: *cpu_time_ms,
                });
                continue;
            }
            FloatLayer::Conv2d {
                name,
                input_shape,
                filters,
                kernel,
                stride,
                padding,
                weights,
                bias,
                activation,
                output,
            } => (
                name,
                Geometry::conv2d(*input_shape, *filters, *kernel, *stride, *padding),
                weights,
                bias,
                activation,
                output,
            ),
            FloatLayer::FullyConnected {
                name,
                input_shape,
                filters,
                weights,
                bias,
                activation,
                output,
            } => (
                name,
                Geometry::fully_connected(input_shape[0], input_shape[1], *filters),
                weights,
                bias,
                activation,
                output,
            ),
        };
        geometry.validate().map_err(at(i))?;
        let (q_w, scales) =
            quantize_weights(weights, &geometry.weight_shape(), granularity).map_err(at(i))?;
        let mut params = QuantParams::new(
            scales,
            AffineQuant::new(activation.scale, activation.zero_point).map_err(at(i))?,
            AffineQuant::new(output.scale, output.zero_point).map_err(at(i))?,
        )
        .map_err(at(i))?;
        if matches!(geometry.kind, LayerKind::FullyConnected) {
            params = potacc_core::quant::expand_per_layer_scale(&params, geometry.filters)
                .map_err(at(i))?;
        }
        if bias.len() != geometry.filters {
            return Err(ModelError::Schema {
                path: format!("layers[{i}].bias"),
                message: format!("{} values for {} filters", bias.len(), geometry.filters),
            });
        }
        let q_b = quantize_bias(bias, &params).map_err(at(i))?;
        layers.push(ModelLayer::Compute(QuantLayer {
            name: name.clone(),
            geometry,
            params,
            weights: LayerWeights::Int8(q_w),
            bias: q_b,
        }));
    }
    let model = Model {
        name: float.name.clone(),
        scheme: float.scheme,
        stage: Stage::Int8,
        graph: float.graph,
        layers,
    };
    model.validate()?;
    Ok(model)
}

/// Convert an int8-stage model to packed 4-bit codes with corrected scales.
pub fn prep_model(model: &Model, scheme: SchemeKind, opts: PrepOptions) -> Result<Model> {
    if model.stage != Stage::Int8 {
        return Err(ModelError::Schema {
            path: "stage".into(),
            message: format!(
                "expected an int8 stage model, found `{}`",
                model.stage.name()
            ),
        });
    }
    let pot = PotScheme::of(scheme);
    let layers = model
        .layers
        .iter()
        .map(|layer| match layer {
            ModelLayer::Cpu { .. } => Ok(layer.clone()),
            ModelLayer::Compute(q) => {
                let LayerWeights::Int8(w) = &q.weights else {
                    unreachable!("validated int8 stage");
                };
                let prepared = preprocess(w, &q.params, &q.bias, pot, opts).map_err(|source| {
                    ModelError::Layer {
                        name: q.name.clone(),
                        source,
                    }
                })?;
                Ok(ModelLayer::Compute(QuantLayer {
                    name: q.name.clone(),
                    geometry: q.geometry.clone(),
                    params: prepared.params,
                    weights: LayerWeights::Packed(prepared.packed),
                    bias: prepared.bias,
                }))
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Model {
        name: model.name.clone(),
        scheme,
        stage: Stage::PotIntE,
        graph: model.graph,
        layers,
    })
}
