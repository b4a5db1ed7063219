//! Accelerator config files (TOML) and byte-size strings such as `128K`.

use std::path::Path;

use potacc_core::sim::AccelConfig;
use serde::{Deserialize, Deserializer};

use crate::model::{ModelError, Result};

/// Parse `131072`, `128K`, `128KiB`, `1M`, `1MB` (binary multiples).
pub fn parse_size(s: &str) -> std::result::Result<u64, String> {
    let t = s.trim();
    let split = t.find(|c: char| !c.is_ascii_digit()).unwrap_or(t.len());
    let (num, unit) = t.split_at(split);
    let n: u64 = num.parse().map_err(|_| format!("invalid size `{s}`"))?;
    let mult = match unit.trim().to_ascii_uppercase().as_str() {
        "" | "B" => 1,
        "K" | "KB" | "KIB" => 1 << 10,
        "M" | "MB" | "MIB" => 1 << 20,
        "G" | "GB" | "GIB" => 1 << 30,
        _ => return Err(format!("invalid size unit in `{s}` (use K, M or G)")),
    };
    n.checked_mul(mult)
        .ok_or_else(|| format!("size `{s}` overflows"))
}

/// Format a byte count using the largest exact binary unit.
pub fn format_size(bytes: u64) -> String {
    for (unit, mult) in [("G", 1u64 << 30), ("M", 1 << 20), ("K", 1 << 10)] {
        if bytes >= mult && bytes.is_multiple_of(mult) {
            return format!("{}{unit}", bytes / mult);
        }
    }
    bytes.to_string()
}

#[derive(Deserialize)]
#[serde(untagged)]
enum SizeRepr {
    Int(u64),
    Str(String),
}

fn size<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Option<u64>, D::Error> {
    match Option::<SizeRepr>::deserialize(d)? {
        None => Ok(None),
        Some(SizeRepr::Int(n)) => Ok(Some(n)),
        Some(SizeRepr::Str(s)) => parse_size(&s).map(Some).map_err(serde::de::Error::custom),
    }
}

/// Every field optional; unset fields come from `preset`.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AccelFile {
    pub preset: Option<String>,
    pub gemm_units: Option<u32>,
    pub pes_per_unit: Option<u32>,
    pub outputs_per_unit: Option<u32>,
    #[serde(default, deserialize_with = "size")]
    pub gact_bytes: Option<u64>,
    #[serde(default, deserialize_with = "size")]
    pub lwgt_bytes_per_unit: Option<u64>,
    #[serde(default, deserialize_with = "size")]
    pub lact_bytes: Option<u64>,
    pub weight_bits: Option<u8>,
    pub freq_mhz: Option<f64>,
    pub dma_channels: Option<u32>,
    pub bw_cpu_dma: Option<f64>,
    pub bw_dma_acc: Option<f64>,
    pub act_dispatch_bw: Option<f64>,
    pub cpu_prep_bw: Option<f64>,
    pub pass_overhead: Option<u64>,
    pub chunk_overhead: Option<u64>,
    pub weight_copy_opt: Option<bool>,
    pub dma_preload: Option<bool>,
    pub overlap_store: Option<bool>,
}

impl AccelFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| ModelError::Read {
            path: path.into(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let de = toml::Deserializer::parse(text).map_err(|e| ModelError::Schema {
            path: "accel config".into(),
            message: e.to_string(),
        })?;
        serde_path_to_error::deserialize(de).map_err(|e| ModelError::Schema {
            path: e.path().to_string(),
            message: e.into_inner().message().to_string(),
        })
    }

    /// Overlay `other` (higher precedence) onto `self`.
    pub fn overlay(self, other: AccelFile) -> AccelFile {
        macro_rules! pick {
            ($($f:ident),*) => { AccelFile { $($f: other.$f.or(self.$f)),* } };
        }
        pick!(
            preset,
            gemm_units,
            pes_per_unit,
            outputs_per_unit,
            gact_bytes,
            lwgt_bytes_per_unit,
            lact_bytes,
            weight_bits,
            freq_mhz,
            dma_channels,
            bw_cpu_dma,
            bw_dma_acc,
            act_dispatch_bw,
            cpu_prep_bw,
            pass_overhead,
            chunk_overhead,
            weight_copy_opt,
            dma_preload,
            overlap_store
        )
    }

    pub fn resolve(&self) -> Result<AccelConfig> {
        let name = self.preset.as_deref().unwrap_or("pynq-z2");
        let base = AccelConfig::preset(name).ok_or_else(|| ModelError::Schema {
            path: "preset".into(),
            message: format!(
                "unknown preset `{name}` (valid presets: {})",
                AccelConfig::PRESETS.join(", ")
            ),
        })?;
        macro_rules! take {
            ($($f:ident),*) => { AccelConfig { $($f: self.$f.unwrap_or(base.$f)),* } };
        }
        let cfg = take!(
            gemm_units,
            pes_per_unit,
            outputs_per_unit,
            gact_bytes,
            lwgt_bytes_per_unit,
            lact_bytes,
            weight_bits,
            freq_mhz,
            dma_channels,
            bw_cpu_dma,
            bw_dma_acc,
            act_dispatch_bw,
            cpu_prep_bw,
            pass_overhead,
            chunk_overhead,
            weight_copy_opt,
            dma_preload,
            overlap_store
        );
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sizes() {
        assert_eq!(parse_size("128K"), Ok(131072));
        assert_eq!(parse_size("1M"), Ok(1 << 20));
        assert_eq!(parse_size("4096"), Ok(4096));
        assert_eq!(parse_size("2kib"), Ok(2048));
        assert!(parse_size("12Q").is_err());
        assert!(parse_size("K").is_err());
        assert_eq!(format_size(512 * 1024), "512K");
        assert_eq!(format_size(1000), "1000");
    }

    #[test]
    fn toml_overrides_preset() {
        let f = AccelFile::parse("preset = \"kria\"\nlwgt_bytes_per_unit = \"256K\"\n").unwrap();
        let cfg = f.resolve().unwrap();
        assert_eq!(cfg.gemm_units, 8);
        assert_eq!(cfg.lwgt_bytes_per_unit, 256 * 1024);
    }

    #[test]
    fn unknown_key_is_path_addressed() {
        let err = AccelFile::parse("lwgt = 3\n").unwrap_err();
        assert!(err.to_string().contains("lwgt"), "{err}");
    }
}
