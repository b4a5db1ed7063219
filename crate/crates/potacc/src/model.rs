//! Model files: a JSON manifest plus a little-endian binary blob.
//!
//! The manifest lists layers in execution order. Conv and FC layers point
//! at their weight and bias sections in the blob by offset, length and
//! CRC32. Weights are either int8 (`int8` stage) or packed 4-bit codes, two
//! per byte with the even element in the low nibble (`pot_int_e` stage).

use std::fs;
use std::path::{Path, PathBuf};

use potacc_core::prep::Correction;
use potacc_core::qmm::{Geometry, LayerKind, LayerWeights, Padding, QuantLayer};
use potacc_core::quant::{AffineQuant, IntTensor, QuantParams, TensorKind};
use potacc_core::sim::{GemmShape, SimLayer};
use potacc_core::{PackedWeightTensor, PotScheme, SchemeKind};
use serde::{Deserialize, Serialize};

pub const FORMAT: &str = "potacc-model";
pub const VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("cannot write {path}: {source}")]
    Write {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("schema error at `{path}`: {message}")]
    Schema { path: String, message: String },
    #[error("checksum mismatch in {section}: expected {expected:#010x}, found {found:#010x}")]
    ChecksumMismatch {
        section: String,
        expected: u32,
        found: u32,
    },
    #[error("unsupported model version {found} (this build reads version {VERSION})")]
    VersionUnsupported { found: u32 },
    #[error("layer `{name}`: {source}")]
    Layer {
        name: String,
        source: potacc_core::Error,
    },
    #[error(transparent)]
    Core(#[from] potacc_core::Error),
}

pub type Result<T, E = ModelError> = std::result::Result<T, E>;

fn schema(path: impl Into<String>, message: impl Into<String>) -> ModelError {
    ModelError::Schema {
        path: path.into(),
        message: message.into(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    /// After model conversion: symmetric int8 weights.
    Int8,
    /// After weight preprocessing: packed 4-bit codes, corrected scales.
    PotIntE,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Int8 => "int8",
            Stage::PotIntE => "pot_int_e",
        }
    }
}

/// How layers connect.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Graph {
    /// Each layer consumes the previous layer's output; executable.
    Chain,
    /// Shapes only (branching networks); simulated and verified per layer.
    LayerList,
}

#[derive(Clone, Debug, PartialEq)]
#[allow(clippy::large_enum_variant)]
pub enum ModelLayer {
    Compute(QuantLayer),
    Cpu {
        name: String,
        op: String,
        cpu_time_ms: Option<f64>,
    },
}

impl ModelLayer {
    pub fn name(&self) -> &str {
        match self {
            ModelLayer::Compute(l) => &l.name,
            ModelLayer::Cpu { name, .. } => name,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub name: String,
    pub scheme: SchemeKind,
    pub stage: Stage,
    pub graph: Graph,
    pub layers: Vec<ModelLayer>,
}

impl Model {
    pub fn compute_layers(&self) -> impl Iterator<Item = &QuantLayer> {
        self.layers.iter().filter_map(|l| match l {
            ModelLayer::Compute(q) => Some(q),
            ModelLayer::Cpu { .. } => None,
        })
    }

    pub fn sim_layers(&self) -> potacc_core::Result<Vec<SimLayer>> {
        self.layers
            .iter()
            .map(|l| match l {
                ModelLayer::Compute(q) => Ok(SimLayer::Gemm(GemmShape::from_geometry(
                    &q.name,
                    &q.geometry,
                )?)),
                ModelLayer::Cpu {
                    name, cpu_time_ms, ..
                } => Ok(SimLayer::Cpu {
                    name: name.clone(),
                    cpu_time_ms: *cpu_time_ms,
                }),
            })
            .collect()
    }

    /// Checks stage consistency and layer shapes.
    pub fn validate(&self) -> Result<()> {
        for (i, layer) in self.layers.iter().enumerate() {
            let ModelLayer::Compute(q) = layer else {
                continue;
            };
            let at = format!("layers[{i}]");
            q.validate()
                .map_err(|e| schema(at.clone(), e.to_string()))?;
            match (&q.weights, self.stage) {
                (LayerWeights::Int8(_), Stage::Int8) => {}
                (LayerWeights::Packed(p), Stage::PotIntE) => {
                    if p.scheme().kind() != self.scheme {
                        return Err(schema(
                            format!("{at}.weights"),
                            format!(
                                "packed for {}, model scheme is {}",
                                p.scheme().kind(),
                                self.scheme
                            ),
                        ));
                    }
                }
                _ => {
                    return Err(schema(
                        format!("{at}.weights"),
                        format!(
                            "weight encoding does not match model stage `{}`",
                            self.stage.name()
                        ),
                    ))
                }
            }
        }
        Ok(())
    }

    pub fn save(&self, manifest_path: &Path) -> Result<()> {
        self.validate()?;
        let blob_path = blob_path_for(manifest_path);
        let blob_name = blob_path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        let (manifest, blob) = self.to_manifest(&blob_name);
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        write_file(&blob_path, &blob)?;
        write_file(manifest_path, format!("{text}\n").as_bytes())
    }

    pub fn load(manifest_path: &Path) -> Result<Self> {
        let text = read_file(manifest_path)?;
        let manifest = parse_manifest(&text)?;
        let dir = manifest_path.parent().unwrap_or(Path::new("."));
        let blob_path = dir.join(&manifest.blob);
        let blob = fs::read(&blob_path).map_err(|source| ModelError::Read {
            path: blob_path,
            source,
        })?;
        Self::from_manifest(manifest, &blob)
    }

    fn to_manifest(&self, blob_name: &str) -> (Manifest, Vec<u8>) {
        let mut blob = Vec::new();
        let mut section = |bytes: &[u8], encoding: Encoding| {
            let s = Section {
                encoding,
                offset: blob.len() as u64,
                length: bytes.len() as u64,
                crc32: crc32fast::hash(bytes),
            };
            blob.extend_from_slice(bytes);
            s
        };
        let layers = self
            .layers
            .iter()
            .map(|layer| match layer {
                ModelLayer::Cpu {
                    name,
                    op,
                    cpu_time_ms,
                } => LayerEntry::Other {
                    name: name.clone(),
                    op: op.clone(),
                    cpu_time_ms: *cpu_time_ms,
                },
                ModelLayer::Compute(q) => {
                    let (weights, corrections) = match &q.weights {
                        LayerWeights::Int8(t) => {
                            let bytes: Vec<u8> = t.data().iter().map(|&v| v as i8 as u8).collect();
                            (section(&bytes, Encoding::Int8), None)
                        }
                        LayerWeights::Packed(p) => (
                            section(p.bytes(), Encoding::Pot4),
                            Some(p.corrections().to_vec()),
                        ),
                    };
                    let bias_bytes: Vec<u8> = q.bias.iter().flat_map(|b| b.to_le_bytes()).collect();
                    let bias = section(&bias_bytes, Encoding::Int32Le);
                    let quant = QuantEntry {
                        weight_scales: q.params.weight_scales().to_vec(),
                        activation: q.params.activation(),
                        output: q.params.output(),
                    };
                    let common = ComputeEntry {
                        name: q.name.clone(),
                        input_shape: q.geometry.input_shape.clone(),
                        filters: q.geometry.filters,
                        quant,
                        corrections,
                        weights,
                        bias,
                    };
                    match q.geometry.kind {
                        LayerKind::Conv2d {
                            kernel,
                            stride,
                            padding,
                        } => LayerEntry::Conv2d {
                            common,
                            kernel,
                            stride,
                            padding,
                        },
                        LayerKind::FullyConnected => LayerEntry::FullyConnected { common },
                    }
                }
            })
            .collect();
        let manifest = Manifest {
            format: FORMAT.into(),
            version: VERSION,
            name: self.name.clone(),
            scheme: self.scheme,
            stage: self.stage,
            graph: self.graph,
            blob: blob_name.into(),
            layers,
        };
        (manifest, blob)
    }

    fn from_manifest(m: Manifest, blob: &[u8]) -> Result<Self> {
        let scheme = PotScheme::of(m.scheme);
        let mut layers = Vec::with_capacity(m.layers.len());
        for (i, entry) in m.layers.into_iter().enumerate() {
            let at = format!("layers[{i}]");
            let (common, kind) = match entry {
                LayerEntry::Other {
                    name,
                    op,
                    cpu_time_ms,
                } => {
                    layers.push(ModelLayer::Cpu {
                        name,
                        op,
                        cpu_time_ms,
                    });
                    continue;
                }
                LayerEntry::Conv2d {
                    common,
                    kernel,
                    stride,
                    padding,
                } => (
                    common,
                    LayerKind::Conv2d {
                        kernel,
                        stride,
                        padding,
                    },
                ),
                LayerEntry::FullyConnected { common } => (common, LayerKind::FullyConnected),
            };
            let geometry = Geometry {
                kind,
                input_shape: common.input_shape,
                filters: common.filters,
            };
            geometry
                .validate()
                .map_err(|e| schema(at.clone(), e.to_string()))?;
            let wshape = geometry.weight_shape();
            let n: usize = wshape.iter().product();
            let params = QuantParams::new(
                common.quant.weight_scales,
                common.quant.activation,
                common.quant.output,
            )
            .map_err(|e| schema(format!("{at}.quant"), e.to_string()))?;

            let wbytes = read_section(blob, &common.weights, &format!("{at}.weights"))?;
            let weights = match (common.weights.encoding, m.stage) {
                (Encoding::Int8, Stage::Int8) => {
                    expect_len(wbytes, n, &format!("{at}.weights.length"))?;
                    let data: Vec<i32> = wbytes.iter().map(|&b| b as i8 as i32).collect();
                    LayerWeights::Int8(
                        IntTensor::new(wshape, data, TensorKind::WeightInt8)
                            .map_err(|e| schema(format!("{at}.weights"), e.to_string()))?,
                    )
                }
                (Encoding::Pot4, Stage::PotIntE) => {
                    expect_len(wbytes, n.div_ceil(2), &format!("{at}.weights.length"))?;
                    let corrections = common.corrections.ok_or_else(|| {
                        schema(format!("{at}.corrections"), "missing for pot4 weights")
                    })?;
                    if corrections.len() != params.weight_scales().len()
                        || corrections.iter().any(|c| c.num == 0 || c.den == 0)
                    {
                        return Err(schema(
                            format!("{at}.corrections"),
                            "need one non-zero correction per weight scale",
                        ));
                    }
                    LayerWeights::Packed(
                        PackedWeightTensor::new(
                            scheme,
                            wshape,
                            wbytes.to_vec(),
                            params.weight_scales().to_vec(),
                            corrections,
                        )
                        .map_err(|e| schema(format!("{at}.weights"), e.to_string()))?,
                    )
                }
                (enc, stage) => {
                    return Err(schema(
                        format!("{at}.weights.encoding"),
                        format!(
                            "`{}` weights in a `{}` stage model",
                            enc.name(),
                            stage.name()
                        ),
                    ))
                }
            };

            if common.bias.encoding != Encoding::Int32Le {
                return Err(schema(
                    format!("{at}.bias.encoding"),
                    "bias must be int32le",
                ));
            }
            let bbytes = read_section(blob, &common.bias, &format!("{at}.bias"))?;
            expect_len(bbytes, 4 * geometry.filters, &format!("{at}.bias.length"))?;
            let bias = bbytes
                .chunks_exact(4)
                .map(|c| i32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            layers.push(ModelLayer::Compute(QuantLayer {
                name: common.name,
                geometry,
                params,
                weights,
                bias,
            }));
        }
        let model = Model {
            name: m.name,
            scheme: m.scheme,
            stage: m.stage,
            graph: m.graph,
            layers,
        };
        model.validate()?;
        Ok(model)
    }
}

/// `m.json` -> `m.json.blob`, next to the manifest.
pub fn blob_path_for(manifest_path: &Path) -> PathBuf {
    let mut name = manifest_path
        .file_name()
        .map(|n| n.to_os_string())
        .unwrap_or_else(|| "model".into());
    name.push(".blob");
    manifest_path.with_file_name(name)
}

fn expect_len(bytes: &[u8], want: usize, path: &str) -> Result<()> {
    if bytes.len() == want {
        Ok(())
    } else {
        Err(schema(
            path,
            format!("expected {want} bytes, found {}", bytes.len()),
        ))
    }
}

fn read_section<'a>(blob: &'a [u8], s: &Section, name: &str) -> Result<&'a [u8]> {
    let start = (s.offset as usize).min(blob.len());
    let end = (s.offset.saturating_add(s.length) as usize).min(blob.len());
    let bytes = &blob[start..end];
    let found = crc32fast::hash(bytes);
    if found != s.crc32 || bytes.len() as u64 != s.length {
        return Err(ModelError::ChecksumMismatch {
            section: name.into(),
            expected: s.crc32,
            found,
        });
    }
    Ok(bytes)
}

fn read_file(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| ModelError::Read {
        path: path.into(),
        source,
    })
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|source| ModelError::Write {
        path: path.into(),
        source,
    })
}

/// Deserialize JSON, reporting the path of the first offending field.
pub(crate) fn from_json<T: serde::de::DeserializeOwned>(text: &str) -> Result<T> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        schema(path, e.into_inner().to_string())
    })
}

fn parse_manifest(text: &str) -> Result<Manifest> {
    #[derive(Deserialize)]
    struct Header {
        format: String,
        version: u32,
    }
    let header: Header = from_json(text)?;
    if header.format != FORMAT {
        return Err(schema(
            "format",
            format!("expected `{FORMAT}`, found `{}`", header.format),
        ));
    }
    if header.version != VERSION {
        return Err(ModelError::VersionUnsupported {
            found: header.version,
        });
    }
    from_json(text)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum Encoding {
    Int8,
    Pot4,
    Int32Le,
}

impl Encoding {
    fn name(self) -> &'static str {
        match self {
            Encoding::Int8 => "int8",
            Encoding::Pot4 => "pot4",
            Encoding::Int32Le => "int32_le",
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Section {
    encoding: Encoding,
    offset: u64,
    length: u64,
    crc32: u32,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct QuantEntry {
    weight_scales: Vec<f64>,
    activation: AffineQuant,
    output: AffineQuant,
}

#[derive(Serialize, Deserialize)]
struct ComputeEntry {
    name: String,
    input_shape: Vec<usize>,
    filters: usize,
    quant: QuantEntry,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    corrections: Option<Vec<Correction>>,
    weights: Section,
    bias: Section,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum LayerEntry {
    Conv2d {
        #[serde(flatten)]
        common: ComputeEntry,
        kernel: [usize; 2],
        stride: [usize; 2],
        padding: Padding,
    },
    FullyConnected {
        #[serde(flatten)]
        common: ComputeEntry,
    },
    Other {
        name: String,
        op: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        cpu_time_ms: Option<f64>,
    },
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    format: String,
    version: u32,
    name: String,
    scheme: SchemeKind,
    stage: Stage,
    graph: Graph,
    blob: String,
    layers: Vec<LayerEntry>,
}

const TENSOR_MAGIC: &[u8; 4] = b"POTT";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorHeader {
    shape: Vec<usize>,
    scale: f64,
    zero_point: i32,
    dtype: String,
}

/// An int8 activation tensor with its quantization.
#[derive(Clone, Debug, PartialEq)]
pub struct TensorFile {
    pub tensor: IntTensor,
    pub quant: AffineQuant,
}

impl TensorFile {
    /// `POTT`, u32 LE header length, JSON header, raw int8 data.
    pub fn to_bytes(&self) -> Vec<u8> {
        let header = TensorHeader {
            shape: self.tensor.shape().to_vec(),
            scale: self.quant.scale,
            zero_point: self.quant.zero_point,
            dtype: "int8".into(),
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(8 + json.len() + self.tensor.len());
        out.extend_from_slice(TENSOR_MAGIC);
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend(self.tensor.data().iter().map(|&v| v as i8 as u8));
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 8 || &bytes[..4] != TENSOR_MAGIC {
            return Err(schema("magic", "not a POTT tensor file"));
        }
        let len = u32::from_le_bytes([bytes[4], bytes[5], bytes[6], bytes[7]]) as usize;
        let body = bytes
            .get(8..8 + len)
            .ok_or_else(|| schema("header", "truncated header"))?;
        let text = std::str::from_utf8(body).map_err(|e| schema("header", e.to_string()))?;
        let header: TensorHeader = from_json(text)?;
        if header.dtype != "int8" {
            return Err(schema(
                "dtype",
                format!("expected int8, found `{}`", header.dtype),
            ));
        }
        let data = &bytes[8 + len..];
        let n: usize = header.shape.iter().product();
        expect_len(data, n, "data")?;
        let quant = AffineQuant::new(header.scale, header.zero_point)
            .map_err(|e| schema("scale", e.to_string()))?;
        let values: Vec<i8> = data.iter().map(|&b| b as i8).collect();
        let tensor = IntTensor::from_i8(header.shape, &values, TensorKind::Activation)?;
        Ok(TensorFile { tensor, quant })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|source| ModelError::Read {
            path: path.into(),
            source,
        })?;
        Self::from_bytes(&bytes)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_file(path, &self.to_bytes())
    }
}
