//! Analytic performance and energy model of the GEMM-unit accelerator.
//!
//! Dataflow: output-stationary, filters split across GEMM units in blocks of
//! 16, activations broadcast from GACT to every unit, weights tiled to the
//! per-unit LWGT capacity. Each weight pass re-streams the layer's lowered
//! activations, so a smaller LWGT costs extra dispatch and pass overhead.
//! Stages are summed without overlap, except `store` when `overlap_store`.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::qmm::Geometry;

pub const KIB: u64 = 1024;

/// Accelerator parameters. Bandwidths are bytes per accelerator cycle.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct AccelConfig {
    pub gemm_units: u32,
    pub pes_per_unit: u32,
    pub outputs_per_unit: u32,
    pub gact_bytes: u64,
    pub lwgt_bytes_per_unit: u64,
    pub lact_bytes: u64,
    pub weight_bits: u8,
    pub freq_mhz: f64,
    pub dma_channels: u32,
    pub bw_cpu_dma: f64,
    pub bw_dma_acc: f64,
    /// GACT to GEMM-unit activation broadcast.
    pub act_dispatch_bw: f64,
    /// CPU-side activation preparation (quantize, im2col).
    pub cpu_prep_bw: f64,
    /// Fixed cycles per weight pass.
    pub pass_overhead: u64,
    /// Fixed cycles per GACT-sized activation chunk per pass.
    pub chunk_overhead: u64,
    pub weight_copy_opt: bool,
    pub dma_preload: bool,
    pub overlap_store: bool,
}

impl AccelConfig {
    /// PYNQ-Z2 baseline: 4 units, 8-bit weights, no optimizations, 200 MHz.
    pub fn pynq_z2() -> Self {
        AccelConfig {
            gemm_units: 4,
            pes_per_unit: 64,
            outputs_per_unit: 16,
            gact_bytes: 128 * KIB,
            lwgt_bytes_per_unit: 128 * KIB,
            lact_bytes: 16 * KIB,
            weight_bits: 8,
            freq_mhz: 200.0,
            dma_channels: 4,
            bw_cpu_dma: 2.0,
            bw_dma_acc: 8.0,
            act_dispatch_bw: 4.0,
            cpu_prep_bw: 4.0,
            pass_overhead: 64,
            chunk_overhead: 64,
            weight_copy_opt: false,
            dma_preload: false,
            overlap_store: false,
        }
    }

    /// Kria KV260: 8 units at 250 MHz.
    pub fn kria() -> Self {
        AccelConfig {
            gemm_units: 8,
            freq_mhz: 250.0,
            ..Self::pynq_z2()
        }
    }

    /// Same board with the shift design: 4-bit weights, weight copy and preload.
    pub fn with_vsac(mut self) -> Self {
        self.weight_bits = 4;
        self.weight_copy_opt = true;
        self.dma_preload = true;
        self
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name.to_ascii_lowercase().as_str() {
            "pynq-z2" => Some(Self::pynq_z2()),
            "kria" => Some(Self::kria()),
            "pynq-z2-vsac" => Some(Self::pynq_z2().with_vsac()),
            "kria-vsac" => Some(Self::kria().with_vsac()),
            _ => None,
        }
    }

    pub const PRESETS: [&'static str; 4] = ["pynq-z2", "kria", "pynq-z2-vsac", "kria-vsac"];

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::ConfigInvalid(m));
        if ![2, 4, 8, 16].contains(&self.gemm_units) {
            return bad(format!(
                "gemm_units must be 2, 4, 8 or 16, got {}",
                self.gemm_units
            ));
        }
        if self.pes_per_unit != 64 {
            return bad(format!(
                "pes_per_unit must be 64, got {}",
                self.pes_per_unit
            ));
        }
        if self.outputs_per_unit != 16 {
            return bad(format!(
                "outputs_per_unit must be 16, got {}",
                self.outputs_per_unit
            ));
        }
        if self.weight_bits != 4 && self.weight_bits != 8 {
            return bad(format!(
                "weight_bits must be 4 or 8, got {}",
                self.weight_bits
            ));
        }
        if self.dma_channels == 0 {
            return bad("dma_channels must be positive".into());
        }
        for (name, v) in [
            ("gact_bytes", self.gact_bytes),
            ("lwgt_bytes_per_unit", self.lwgt_bytes_per_unit),
            ("lact_bytes", self.lact_bytes),
        ] {
            if v == 0 {
                return bad(format!("{name} must be positive"));
            }
        }
        for (name, v) in [
            ("freq_mhz", self.freq_mhz),
            ("bw_cpu_dma", self.bw_cpu_dma),
            ("bw_dma_acc", self.bw_dma_acc),
            ("act_dispatch_bw", self.act_dispatch_bw),
            ("cpu_prep_bw", self.cpu_prep_bw),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return bad(format!("{name} must be positive and finite, got {v}"));
            }
        }
        Ok(())
    }

    pub fn cycles_to_ms(&self, cycles: u64) -> f64 {
        cycles as f64 / (self.freq_mhz * 1e3)
    }
}

/// A conv or FC layer after lowering to `(pixels x depth) * (depth x filters)`.
#[derive(Clone, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct GemmShape {
    pub name: String,
    pub pixels: u64,
    pub depth: u64,
    pub filters: u64,
    /// Raw input activation bytes before lowering.
    pub input_bytes: u64,
    pub conv: bool,
}

impl GemmShape {
    pub fn from_geometry(name: &str, geom: &Geometry) -> Result<Self> {
        geom.validate().map_err(|e| Error::UnsupportedLayer {
            name: name.into(),
            reason: format!("{e}"),
        })?;
        Ok(GemmShape {
            name: name.into(),
            pixels: geom.pixels() as u64,
            depth: geom.depth() as u64,
            filters: geom.filters as u64,
            input_bytes: geom.input_shape.iter().product::<usize>() as u64,
            conv: geom.is_conv(),
        })
    }

    pub fn macs(&self) -> u64 {
        self.pixels * self.depth * self.filters
    }

    fn check(&self) -> Result<()> {
        if self.pixels == 0 || self.depth == 0 || self.filters == 0 {
            return Err(Error::UnsupportedLayer {
                name: self.name.clone(),
                reason: "empty matrix dimension".into(),
            });
        }
        Ok(())
    }
}

/// Layer as seen by the simulator.
#[derive(Clone, Debug, PartialEq)]
pub enum SimLayer {
    Gemm(GemmShape),
    /// Runs on the CPU; its time is supplied by the model.
    Cpu {
        name: String,
        cpu_time_ms: Option<f64>,
    },
}

/// Per-stage cycle counts.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Stages {
    pub prep_act: u64,
    pub load_act: u64,
    pub load_wgt: u64,
    pub send_act: u64,
    pub send_wgt: u64,
    pub acc: u64,
    pub store: u64,
}

impl Stages {
    pub const NAMES: [&'static str; 7] = [
        "prep_act", "load_act", "load_wgt", "send_act", "send_wgt", "acc", "store",
    ];

    pub fn as_array(&self) -> [u64; 7] {
        [
            self.prep_act,
            self.load_act,
            self.load_wgt,
            self.send_act,
            self.send_wgt,
            self.acc,
            self.store,
        ]
    }

    fn add(&mut self, o: &Stages) {
        self.prep_act += o.prep_act;
        self.load_act += o.load_act;
        self.load_wgt += o.load_wgt;
        self.send_act += o.send_act;
        self.send_wgt += o.send_wgt;
        self.acc += o.acc;
        self.store += o.store;
    }

    /// Sum of stages, leaving out `store` when it overlaps compute.
    pub fn total(&self, overlap_store: bool) -> u64 {
        let all: u64 = self.as_array().iter().sum();
        if overlap_store {
            all - self.store
        } else {
            all
        }
    }
}

/// Bytes moved per path.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Traffic {
    pub load_act: u64,
    pub load_wgt: u64,
    pub send_act: u64,
    pub send_wgt: u64,
    /// Largest weight byte count delivered to one GEMM unit.
    pub send_wgt_max_unit: u64,
    pub store: u64,
}

impl Traffic {
    fn add(&mut self, o: &Traffic) {
        self.load_act += o.load_act;
        self.load_wgt += o.load_wgt;
        self.send_act += o.send_act;
        self.send_wgt += o.send_wgt;
        self.send_wgt_max_unit += o.send_wgt_max_unit;
        self.store += o.store;
    }
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LayerReport {
    pub name: String,
    pub offloaded: bool,
    pub macs: u64,
    pub stages: Stages,
    pub traffic: Traffic,
    pub compute_cycles: u64,
    pub weight_passes: u64,
    pub lwgt_refetch_count: u64,
    pub pe_utilization: f64,
    pub total_cycles: u64,
    pub time_ms: f64,
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SimReport {
    pub layers: Vec<LayerReport>,
    pub stages: Stages,
    pub traffic: Traffic,
    pub macs: u64,
    pub lwgt_refetch_count: u64,
    pub pe_utilization: f64,
    pub total_cycles: u64,
    /// Simulated conv and FC time.
    pub t_accel_ms: f64,
    /// CPU-side layers, passed through from the model.
    pub t_other_ms: f64,
    pub total_ms: f64,
}

impl SimReport {
    pub fn acc_cycles(&self) -> u64 {
        self.stages.acc
    }

    pub fn stage_ms(&self, cfg: &AccelConfig) -> [f64; 7] {
        self.stages.as_array().map(|c| cfg.cycles_to_ms(c))
    }
}

/// Modelling assumptions, for report metadata.
pub const ASSUMPTIONS: [&str; 4] = [
    "output-stationary tiling, 16 outputs per unit, 64-wide dot chunks",
    "activations broadcast to all units and re-streamed once per weight pass",
    "stages do not overlap; store overlaps only with overlap_store",
    "CPU-side times are in accelerator-cycle equivalents",
];

fn div_ceil_f(bytes: u64, bw: f64) -> u64 {
    libm::ceil(bytes as f64 / bw) as u64
}

pub fn simulate_layer(layer: &GemmShape, cfg: &AccelConfig) -> Result<LayerReport> {
    cfg.validate()?;
    layer.check()?;
    let units = cfg.gemm_units as u64;
    let group = cfg.outputs_per_unit as u64;
    let lanes = cfg.pes_per_unit as u64;
    let (p, d, f) = (layer.pixels, layer.depth, layer.filters);

    let per_unit_filters = (f.div_ceil(group).div_ceil(units) * group).min(f);
    let w_bits = d * f * cfg.weight_bits as u64;
    let w_total = w_bits.div_ceil(8);
    let w_unit = (per_unit_filters * d * cfg.weight_bits as u64).div_ceil(8);
    // without weight copy every unit buffers the full broadcast stream, so
    // only 1/units of LWGT holds its own filters
    let capacity = if cfg.weight_copy_opt {
        cfg.lwgt_bytes_per_unit
    } else {
        cfg.lwgt_bytes_per_unit / units
    };
    let passes = w_unit.div_ceil(capacity.max(1)).max(1);

    let act = p * d;
    let compute = (p * per_unit_filters).div_ceil(group) * group * d.div_ceil(lanes);
    let dispatch = passes * div_ceil_f(act, cfg.act_dispatch_bw);
    let chunks = act.div_ceil(cfg.gact_bytes);
    let acc =
        compute + dispatch + passes * cfg.pass_overhead + passes * chunks * cfg.chunk_overhead;

    let prep_bytes = layer.input_bytes + if layer.conv { act } else { 0 };
    let send_act_bytes = if act <= cfg.gact_bytes {
        act
    } else {
        passes * act
    };
    let send_wgt_max_unit = if cfg.weight_copy_opt { w_unit } else { w_total };
    let send_wgt_bytes = if cfg.weight_copy_opt {
        w_total
    } else {
        units * w_total
    };
    let load_wgt_bytes = if cfg.dma_preload { 0 } else { w_total };
    let store_bytes = p * f;

    let stages = Stages {
        prep_act: div_ceil_f(prep_bytes, cfg.cpu_prep_bw),
        load_act: div_ceil_f(act, cfg.bw_cpu_dma),
        load_wgt: div_ceil_f(load_wgt_bytes, cfg.bw_cpu_dma),
        send_act: div_ceil_f(send_act_bytes, cfg.bw_dma_acc),
        send_wgt: div_ceil_f(send_wgt_bytes, cfg.bw_dma_acc),
        acc,
        store: div_ceil_f(store_bytes, cfg.bw_cpu_dma),
    };
    let total_cycles = stages.total(cfg.overlap_store);
    Ok(LayerReport {
        name: layer.name.clone(),
        offloaded: true,
        macs: layer.macs(),
        stages,
        traffic: Traffic {
            load_act: act,
            load_wgt: load_wgt_bytes,
            send_act: send_act_bytes,
            send_wgt: send_wgt_bytes,
            send_wgt_max_unit,
            store: store_bytes,
        },
        compute_cycles: compute,
        weight_passes: passes,
        lwgt_refetch_count: passes - 1,
        pe_utilization: layer.macs() as f64 / (acc as f64 * (units * lanes) as f64),
        total_cycles,
        time_ms: cfg.cycles_to_ms(total_cycles),
    })
}

pub fn simulate_model(layers: &[SimLayer], cfg: &AccelConfig) -> Result<SimReport> {
    cfg.validate()?;
    let mut reports = Vec::with_capacity(layers.len());
    let mut stages = Stages::default();
    let mut traffic = Traffic::default();
    let (mut macs, mut refetch, mut cycles, mut acc_lanes) = (0u64, 0u64, 0u64, 0f64);
    let mut t_other = 0.0;
    for layer in layers {
        match layer {
            SimLayer::Gemm(g) => {
                let r = simulate_layer(g, cfg)?;
                stages.add(&r.stages);
                traffic.add(&r.traffic);
                macs += r.macs;
                refetch += r.lwgt_refetch_count;
                cycles += r.total_cycles;
                acc_lanes += r.stages.acc as f64;
                reports.push(r);
            }
            SimLayer::Cpu { name, cpu_time_ms } => {
                let t = cpu_time_ms.ok_or_else(|| Error::MissingCpuTime(name.clone()))?;
                if !(t.is_finite() && t >= 0.0) {
                    return Err(Error::InvalidParams(format!(
                        "layer `{name}`: cpu_time_ms must be non-negative, got {t}"
                    )));
                }
                t_other += t;
                reports.push(LayerReport {
                    name: name.clone(),
                    offloaded: false,
                    macs: 0,
                    stages: Stages::default(),
                    traffic: Traffic::default(),
                    compute_cycles: 0,
                    weight_passes: 0,
                    lwgt_refetch_count: 0,
                    pe_utilization: 0.0,
                    total_cycles: 0,
                    time_ms: t,
                });
            }
        }
    }
    let lanes = (cfg.gemm_units * cfg.pes_per_unit) as f64;
    let t_accel = cfg.cycles_to_ms(cycles);
    Ok(SimReport {
        layers: reports,
        stages,
        traffic,
        macs,
        lwgt_refetch_count: refetch,
        pe_utilization: if acc_lanes > 0.0 {
            macs as f64 / (acc_lanes * lanes)
        } else {
            0.0
        },
        total_cycles: cycles,
        t_accel_ms: t_accel,
        t_other_ms: t_other,
        total_ms: t_accel + t_other,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum SweepAxis {
    Lwgt,
    Gact,
    GemmUnits,
}

impl core::str::FromStr for SweepAxis {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "lwgt" => Ok(SweepAxis::Lwgt),
            "gact" => Ok(SweepAxis::Gact),
            "gemm_units" | "gemm-units" | "units" => Ok(SweepAxis::GemmUnits),
            _ => Err(Error::InvalidParams(format!(
                "unknown sweep axis `{s}` (expected lwgt, gact or gemm_units)"
            ))),
        }
    }
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::Lwgt => "lwgt",
            SweepAxis::Gact => "gact",
            SweepAxis::GemmUnits => "gemm_units",
        }
    }

    pub fn apply(self, cfg: &AccelConfig, value: u64) -> AccelConfig {
        let mut c = cfg.clone();
        match self {
            SweepAxis::Lwgt => c.lwgt_bytes_per_unit = value,
            SweepAxis::Gact => c.gact_bytes = value,
            SweepAxis::GemmUnits => c.gemm_units = value.min(u32::MAX as u64) as u32,
        }
        c
    }
}

/// One report per swept value, in the given order.
pub fn sweep(
    layers: &[SimLayer],
    cfg: &AccelConfig,
    axis: SweepAxis,
    values: &[u64],
) -> Result<Vec<(u64, SimReport)>> {
    values
        .iter()
        .map(|&v| Ok((v, simulate_model(layers, &axis.apply(cfg, v))?)))
        .collect()
}

/// Energy per image: `(P_inference - P_idle) * time / images`.
pub fn energy(total_time_s: f64, p_inference_w: f64, p_idle_w: f64, images: u64) -> Result<f64> {
    if images == 0 {
        return Err(Error::NoImages);
    }
    let ok = |v: f64| v.is_finite() && v >= 0.0;
    if !ok(p_idle_w) || !ok(p_inference_w) || p_inference_w < p_idle_w {
        return Err(Error::NegativePower {
            inference: p_inference_w,
            idle: p_idle_w,
        });
    }
    if !ok(total_time_s) {
        return Err(Error::InvalidParams(format!(
            "time must be non-negative, got {total_time_s}"
        )));
    }
    Ok((p_inference_w - p_idle_w) * total_time_s / images as f64)
}
