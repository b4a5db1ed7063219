//! The `potacc` command suite.
//!
//! Settings resolve as flags, then `POTACC_*` environment variables, then
//! the TOML file given by `--config`. Data goes to stdout, diagnostics to
//! stderr. Exit status is 0 on success, 1 on validation or usage errors and
//! 2 on internal errors.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use potacc_core::levels::generate_levels;
use potacc_core::pe::sweep_all;
use potacc_core::prep::PrepOptions;
use potacc_core::qmm::{run_model, Engine, QuantLayer};
use potacc_core::quant::{Granularity, IntTensor, TensorKind};
use potacc_core::sim::{
    energy, simulate_model, sweep, AccelConfig, SimLayer, SimReport, Stages, SweepAxis, ASSUMPTIONS,
};
use potacc_core::{PotScheme, SchemeKind};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Deserialize;
use serde_json::{json, Value};

use crate::config::{format_size, parse_size, AccelFile};
use crate::convert::{prep_model, quantize_model, FloatModel};
use crate::model::{Graph, Model, ModelError, Stage, TensorFile};
use crate::synth::{preset_layers, synth_model, PRESETS};

pub const REPORT_SCHEMA: &str = "potacc-sim-report";
pub const REPORT_VERSION: u32 = 1;

#[derive(Parser, Debug)]
#[command(
    name = "potacc",
    version,
    about = "Power-of-two quantized inference toolkit"
)]
pub struct Cli {
    /// Emit JSON on stdout.
    #[arg(long, global = true)]
    json: bool,
    /// TOML file with default settings.
    #[arg(long, global = true, env = "POTACC_CONFIG")]
    config: Option<PathBuf>,
    /// Worker threads for parallel commands.
    #[arg(long, global = true, env = "POTACC_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Print the quantization levels of a scheme.
    Levels {
        #[arg(long, env = "POTACC_SCHEME")]
        scheme: Option<String>,
    },
    /// Convert a float model (JSON) to an int8-stage model.
    Quantize {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "per-filter")]
        granularity: GranularityArg,
    },
    /// Preprocess an int8-stage model into packed 4-bit weights.
    Prep {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Defaults to the model's scheme.
        #[arg(long, env = "POTACC_SCHEME")]
        scheme: Option<String>,
        /// QKeras only: keep the scale (C = 1) and treat 127 as 128.
        #[arg(long)]
        qkeras_c1: bool,
    },
    /// Exhaustive shift-PE check over all codes and activations.
    PeCheck {
        /// A scheme name, or `all`.
        #[arg(long, env = "POTACC_SCHEME")]
        scheme: Option<String>,
    },
    /// Execute a chain model on an input tensor.
    Run {
        #[arg(long, value_enum, env = "POTACC_ENGINE")]
        engine: Option<EngineArg>,
        #[arg(long)]
        model: PathBuf,
        /// Input tensor file; a seeded random tensor when omitted.
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long, env = "POTACC_SEED")]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare the shift engine against the multiply engine on every layer.
    Verify {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, env = "POTACC_SEED")]
        seed: Option<u64>,
        /// Check at most this many output pixels per layer (random subset).
        #[arg(long)]
        max_pixels: Option<usize>,
    },
    /// Simulate a model on the accelerator.
    Sim(SimArgs),
    /// Sweep one accelerator parameter.
    Sweep {
        #[command(flatten)]
        sim: SimArgs,
        #[arg(long)]
        axis: Option<String>,
        /// Comma-separated values, sizes accept K/M suffixes.
        #[arg(long)]
        values: Option<String>,
    },
    /// Energy per image from power and time.
    Energy {
        /// Total time in milliseconds.
        #[arg(long, conflicts_with = "report")]
        time_ms: Option<f64>,
        /// Take the total time from a sim report.
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long)]
        p_inference: f64,
        #[arg(long)]
        p_idle: f64,
        #[arg(long, default_value_t = 1)]
        images: u64,
    },
    /// Generate a synthetic model.
    Synth {
        #[arg(long)]
        preset: String,
        #[arg(long, env = "POTACC_SCHEME")]
        scheme: Option<String>,
        #[arg(long, env = "POTACC_SEED")]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "int8")]
        stage: StageArg,
    },
}

#[derive(Args, Debug)]
struct SimArgs {
    #[arg(long, conflicts_with = "synth")]
    model: Option<PathBuf>,
    /// Use a synthetic preset's layer list instead of a model file.
    #[arg(long)]
    synth: Option<String>,
    /// Accelerator TOML file.
    #[arg(long, env = "POTACC_ACCEL")]
    accel: Option<PathBuf>,
    #[arg(long, env = "POTACC_PRESET")]
    preset: Option<String>,
    #[arg(long, env = "POTACC_GEMM_UNITS")]
    gemm_units: Option<u32>,
    #[arg(long, env = "POTACC_LWGT", value_parser = parse_size)]
    lwgt: Option<u64>,
    #[arg(long, env = "POTACC_GACT", value_parser = parse_size)]
    gact: Option<u64>,
    #[arg(long, env = "POTACC_WEIGHT_BITS")]
    weight_bits: Option<u8>,
    #[arg(long, env = "POTACC_FREQ_MHZ")]
    freq_mhz: Option<f64>,
    #[arg(long, env = "POTACC_WEIGHT_COPY_OPT")]
    weight_copy_opt: Option<bool>,
    #[arg(long, env = "POTACC_DMA_PRELOAD")]
    dma_preload: Option<bool>,
    #[arg(long, env = "POTACC_OVERLAP_STORE", num_args = 0..=1, default_missing_value = "true")]
    overlap_store: Option<bool>,
    /// `axis=v1,v2,...`, e.g. `lwgt=128K,256K,512K`.
    #[arg(long)]
    sweep: Option<String>,
    /// Write the JSON report here.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Write per-layer (or per-point) CSV here.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum GranularityArg {
    PerFilter,
    PerLayer,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum EngineArg {
    Mult,
    Shift,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum StageArg {
    Int8,
    #[value(name = "pot_int_e", alias = "pot-int-e")]
    PotIntE,
}

/// Defaults read from `--config`.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    scheme: Option<String>,
    seed: Option<u64>,
    engine: Option<String>,
    threads: Option<usize>,
    accel: Option<toml::Value>,
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Model(ModelError),
    Core(potacc_core::Error),
    /// Validation failed; details already printed.
    Failed(String),
    Internal(String),
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        CliError::Model(e)
    }
}

impl From<potacc_core::Error> for CliError {
    fn from(e: potacc_core::Error) -> Self {
        CliError::Core(e)
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Model(ModelError::Write { .. }) | CliError::Internal(_) => 2,
            _ => 1,
        }
    }

    fn message(&self) -> String {
        match self {
            CliError::Usage(m) | CliError::Failed(m) | CliError::Internal(m) => m.clone(),
            CliError::Model(e) => e.to_string(),
            CliError::Core(e) => e.to_string(),
        }
    }
}

type CliResult<T = ()> = Result<T, CliError>;

/// Parse arguments and run; returns the process exit code.
pub fn main_with<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = std::panic::catch_unwind(|| execute(cli));
    match result {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(e)) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.exit_code())
        }
        Err(_) => ExitCode::from(2),
    }
}

struct Ctx {
    json: bool,
    file: FileConfig,
}

fn execute(cli: Cli) -> CliResult {
    let file = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|source| ModelError::Read {
                path: path.clone(),
                source,
            })?;
            let de = toml::Deserializer::parse(&text)
                .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
            serde_path_to_error::deserialize(de).map_err(|e| {
                let at = e.path().to_string();
                CliError::Usage(format!(
                    "{}: at `{at}`: {}",
                    path.display(),
                    e.into_inner().message()
                ))
            })?
        }
        None => FileConfig::default(),
    };
    if let Some(n) = cli.threads.or(file.threads) {
        if n == 0 {
            return Err(CliError::Usage("thread count must be at least 1".into()));
        }
        // a pool may already exist when called repeatedly in one process
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global();
    }
    let ctx = Ctx {
        json: cli.json,
        file,
    };
    match cli.command {
        Command::Levels { scheme } => cmd_levels(&ctx, scheme),
        Command::Quantize {
            input,
            out,
            granularity,
        } => cmd_quantize(&ctx, &input, &out, granularity),
        Command::Prep {
            input,
            out,
            scheme,
            qkeras_c1,
        } => cmd_prep(&ctx, &input, &out, scheme, qkeras_c1),
        Command::PeCheck { scheme } => cmd_pe_check(&ctx, scheme),
        Command::Run {
            engine,
            model,
            input,
            seed,
            out,
        } => cmd_run(&ctx, engine, &model, input.as_deref(), seed, out.as_deref()),
        Command::Verify {
            model,
            seed,
            max_pixels,
        } => cmd_verify(&ctx, &model, seed, max_pixels),
        Command::Sim(args) => cmd_sim(&ctx, &args, None),
        Command::Sweep { sim, axis, values } => {
            let spec = match (axis, values, &sim.sweep) {
                (Some(a), Some(v), None) => format!("{a}={v}"),
                (None, None, Some(s)) => s.clone(),
                _ => {
                    return Err(CliError::Usage(
                        "sweep needs --axis and --values (or --sweep axis=values)".into(),
                    ))
                }
            };
            cmd_sim(&ctx, &sim, Some(spec))
        }
        Command::Energy {
            time_ms,
            report,
            p_inference,
            p_idle,
            images,
        } => cmd_energy(
            &ctx,
            time_ms,
            report.as_deref(),
            p_inference,
            p_idle,
            images,
        ),
        Command::Synth {
            preset,
            scheme,
            seed,
            out,
            stage,
        } => cmd_synth(&ctx, &preset, scheme, seed, &out, stage),
    }
}

fn out(text: &str) -> CliResult {
    let mut stdout = std::io::stdout().lock();
    match writeln!(stdout, "{text}") {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => {
            Err(CliError::Internal(format!("stdout: {e}")))
        }
        _ => Ok(()),
    }
}

fn out_json(v: &Value) -> CliResult {
    out(&serde_json::to_string_pretty(v).expect("json value serializes"))
}

fn parse_scheme(s: &str) -> CliResult<SchemeKind> {
    s.parse()
        .map_err(|e: potacc_core::Error| CliError::Usage(e.to_string()))
}

fn resolve_scheme(ctx: &Ctx, flag: Option<String>) -> CliResult<Option<SchemeKind>> {
    flag.or_else(|| ctx.file.scheme.clone())
        .map(|s| parse_scheme(&s))
        .transpose()
}

fn require_scheme(ctx: &Ctx, flag: Option<String>) -> CliResult<SchemeKind> {
    resolve_scheme(ctx, flag)?.ok_or_else(|| {
        CliError::Usage("missing --scheme (valid schemes: qkeras, msq, apot)".into())
    })
}

fn cmd_levels(ctx: &Ctx, scheme: Option<String>) -> CliResult {
    let scheme = require_scheme(ctx, scheme)?;
    let set = generate_levels(PotScheme::of(scheme))?;
    if ctx.json {
        let records: Vec<Value> = set
            .levels()
            .iter()
            .map(|l| {
                json!({
                    "pot_float": l.pot_float.to_f64(),
                    "int8": l.int8,
                    "pot_int": l.pot_int,
                    "pot_int_e": l.code.to_string(),
                    "bits": format!("{:04b}", l.code.bits()),
                })
            })
            .collect();
        return out_json(&Value::Array(records));
    }
    let mut text = String::from("pot_float,int8,pot_int,pot_int_e");
    for l in set.levels() {
        text.push_str(&format!(
            "\n{},{},{},{}",
            l.pot_float, l.int8, l.pot_int, l.code
        ));
    }
    out(&text)
}

fn cmd_quantize(ctx: &Ctx, input: &Path, dest: &Path, g: GranularityArg) -> CliResult {
    let float = FloatModel::load(input)?;
    let granularity = match g {
        GranularityArg::PerFilter => Granularity::PerFilter,
        GranularityArg::PerLayer => Granularity::PerLayer,
    };
    let model = quantize_model(&float, granularity)?;
    model.save(dest)?;
    summary(ctx, &model, dest)
}

fn summary(ctx: &Ctx, model: &Model, path: &Path) -> CliResult {
    let weights: usize = model
        .compute_layers()
        .map(|l| l.geometry.weight_shape().iter().product::<usize>())
        .sum();
    if ctx.json {
        out_json(&json!({
            "model": path.display().to_string(),
            "name": model.name,
            "scheme": model.scheme,
            "stage": model.stage,
            "layers": model.layers.len(),
            "weights": weights,
        }))
    } else {
        out(&format!(
            "{}: {} layers, {} weights, scheme {}, stage {}",
            path.display(),
            model.layers.len(),
            weights,
            model.scheme,
            model.stage.name()
        ))
    }
}

fn cmd_prep(ctx: &Ctx, input: &Path, dest: &Path, scheme: Option<String>, c1: bool) -> CliResult {
    let model = Model::load(input)?;
    let scheme = resolve_scheme(ctx, scheme)?.unwrap_or(model.scheme);
    let opts = PrepOptions {
        qkeras_unit_correction: c1,
    };
    let prepared = prep_model(&model, scheme, opts)?;
    prepared.save(dest)?;
    summary(ctx, &prepared, dest)
}

fn cmd_pe_check(ctx: &Ctx, scheme: Option<String>) -> CliResult {
    let name = scheme
        .or_else(|| ctx.file.scheme.clone())
        .unwrap_or_else(|| "all".into());
    let schemes: Vec<SchemeKind> = if name.eq_ignore_ascii_case("all") {
        SchemeKind::ALL.to_vec()
    } else {
        vec![parse_scheme(&name)?]
    };
    let mut all_ok = true;
    let mut records = Vec::new();
    let mut lines = Vec::new();
    for kind in schemes {
        let s = sweep_all(PotScheme::of(kind));
        all_ok &= s.passed();
        records.push(json!({
            "scheme": kind,
            "checks": s.checks,
            "mismatches": s.mismatches,
            "min_product": s.min_product,
            "max_product": s.max_product,
            "required_ipw": s.required_ipw,
            "ipw": s.ipw,
            "pass": s.passed(),
        }));
        lines.push(format!(
            "{:<6} {} checks={} mismatches={} product=[{}, {}] required_ipw={} ipw={}",
            kind.name(),
            if s.passed() { "PASS" } else { "FAIL" },
            s.checks,
            s.mismatches,
            s.min_product,
            s.max_product,
            s.required_ipw,
            s.ipw
        ));
        if let Some((code, a)) = s.first_mismatch {
            eprintln!(
                "{kind}: first mismatch at code {:04b}, activation {a}",
                code.bits()
            );
        }
    }
    if ctx.json {
        out_json(&Value::Array(records))?;
    } else {
        out(&lines.join("\n"))?;
    }
    if all_ok {
        Ok(())
    } else {
        Err(CliError::Failed("shift-PE check failed".into()))
    }
}

fn engine_of(ctx: &Ctx, flag: Option<EngineArg>) -> CliResult<Engine> {
    let e = match flag {
        Some(e) => e,
        None => match ctx.file.engine.as_deref() {
            None => EngineArg::Shift,
            Some(s) => EngineArg::from_str(s, true).map_err(|_| {
                CliError::Usage(format!("unknown engine `{s}` (valid: mult, shift)"))
            })?,
        },
    };
    Ok(match e {
        EngineArg::Mult => Engine::Mult,
        EngineArg::Shift => Engine::Shift,
    })
}

fn random_tensor(shape: Vec<usize>, rng: &mut ChaCha8Rng) -> IntTensor {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-128..=127)).collect();
    IntTensor::new(shape, data, TensorKind::Activation).expect("values in int8 range")
}

fn seed_of(ctx: &Ctx, flag: Option<u64>) -> u64 {
    flag.or(ctx.file.seed).unwrap_or(0)
}

fn cmd_run(
    ctx: &Ctx,
    engine: Option<EngineArg>,
    model_path: &Path,
    input: Option<&Path>,
    seed: Option<u64>,
    dest: Option<&Path>,
) -> CliResult {
    let engine = engine_of(ctx, engine)?;
    let model = Model::load(model_path)?;
    if model.graph != Graph::Chain {
        return Err(CliError::Usage(format!(
            "{} is a layer list; only chain models can be executed (use `verify` for per-layer checks)",
            model_path.display()
        )));
    }
    let layers: Vec<QuantLayer> = model.compute_layers().cloned().collect();
    if let Some(cpu) = model
        .layers
        .iter()
        .find(|l| !matches!(l, crate::model::ModelLayer::Compute(_)))
    {
        return Err(potacc_core::Error::UnsupportedLayer {
            name: cpu.name().into(),
            reason: "only conv2d and fully_connected layers can be executed".into(),
        }
        .into());
    }
    let (x, in_quant) = match input {
        Some(p) => {
            let t = TensorFile::load(p)?;
            (t.tensor, Some(t.quant))
        }
        None => {
            let first = layers
                .first()
                .ok_or_else(|| CliError::Usage("model has no layers; pass --input".into()))?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed_of(ctx, seed));
            (
                random_tensor(first.geometry.input_shape.clone(), &mut rng),
                None,
            )
        }
    };
    if let (Some(q), Some(first)) = (in_quant, layers.first()) {
        if q != first.params.activation() {
            eprintln!(
                "warning: input quantization (scale {}, zero point {}) differs from layer `{}`",
                q.scale, q.zero_point, first.name
            );
        }
    }
    let y = run_model(&layers, &x, engine)?;
    let quant = layers
        .last()
        .map(|l| l.params.output())
        .or(in_quant)
        .unwrap_or(potacc_core::AffineQuant {
            scale: 1.0,
            zero_point: 0,
        });
    let file = TensorFile {
        tensor: y.clone(),
        quant,
    };
    let crc = crc32fast::hash(&file.to_bytes());
    if let Some(p) = dest {
        file.save(p)?;
    }
    if ctx.json {
        out_json(&json!({
            "engine": format!("{engine:?}").to_lowercase(),
            "shape": y.shape(),
            "scale": quant.scale,
            "zero_point": quant.zero_point,
            "crc32": format!("{crc:08x}"),
            "data": y.data(),
        }))
    } else {
        out(&format!(
            "output shape {:?}, scale {}, zero point {}, crc32 {crc:08x}",
            y.shape(),
            quant.scale,
            quant.zero_point
        ))
    }
}

/// First differing element between the engines on one layer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mismatch {
    pub layer: String,
    pub pixel: usize,
    pub filter: usize,
    pub mult: i32,
    pub shift: i32,
}

/// Run one layer through both engines on a seeded random input.
/// Returns the number of outputs compared and the first mismatch.
pub fn verify_layer(
    layer: &QuantLayer,
    seed: u64,
    max_pixels: Option<usize>,
) -> potacc_core::Result<(usize, Option<Mismatch>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = random_tensor(layer.geometry.input_shape.clone(), &mut rng);
    let mut lowered = layer.lower(&x)?;
    let rows = lowered.shape()[0];
    let depth = lowered.shape()[1];
    let mut picked: Vec<usize> = (0..rows).collect();
    if let Some(m) = max_pixels.filter(|&m| m < rows) {
        // partial Fisher-Yates
        for i in 0..m {
            let j = rng.random_range(i..rows);
            picked.swap(i, j);
        }
        picked.truncate(m);
        picked.sort_unstable();
        let data = lowered.data();
        let sub: Vec<i32> = picked
            .iter()
            .flat_map(|&r| data[r * depth..(r + 1) * depth].iter().copied())
            .collect();
        lowered = IntTensor::new(vec![m, depth], sub, TensorKind::Activation)?;
    }
    let a = layer.run_lowered(&lowered, Engine::Mult)?;
    let b = layer.run_lowered(&lowered, Engine::Shift)?;
    let filters = layer.geometry.filters;
    let first = a
        .data()
        .iter()
        .zip(b.data())
        .position(|(x, y)| x != y)
        .map(|i| Mismatch {
            layer: layer.name.clone(),
            pixel: picked[i / filters],
            filter: i % filters,
            mult: a.data()[i],
            shift: b.data()[i],
        });
    Ok((a.len(), first))
}

fn cmd_verify(
    ctx: &Ctx,
    model_path: &Path,
    seed: Option<u64>,
    max_pixels: Option<usize>,
) -> CliResult {
    let model = Model::load(model_path)?;
    if model.stage != Stage::PotIntE {
        let name = model
            .compute_layers()
            .next()
            .map(|l| l.name.clone())
            .unwrap_or_default();
        return Err(potacc_core::Error::StageMismatch(name).into());
    }
    let seed = seed_of(ctx, seed);
    let layers: Vec<&QuantLayer> = model.compute_layers().collect();
    let results: Vec<potacc_core::Result<(usize, Option<Mismatch>)>> = layers
        .par_iter()
        .enumerate()
        .map(|(i, l)| verify_layer(l, seed.wrapping_add(i as u64), max_pixels))
        .collect();
    let mut compared = 0usize;
    let mut rows = Vec::new();
    let mut first: Option<Mismatch> = None;
    for (layer, r) in layers.iter().zip(results) {
        let (n, m) = r?;
        compared += n;
        rows.push(json!({"layer": layer.name, "outputs": n, "match": m.is_none()}));
        if first.is_none() {
            first = m;
        }
    }
    if ctx.json {
        out_json(&json!({
            "model": model_path.display().to_string(),
            "layers": rows,
            "outputs": compared,
            "pass": first.is_none(),
            "first_mismatch": first.as_ref().map(|m| json!({
                "layer": m.layer, "pixel": m.pixel, "filter": m.filter,
                "mult": m.mult, "shift": m.shift,
            })),
        }))?;
    } else {
        out(&format!(
            "verified {} layers, {} outputs: {}",
            layers.len(),
            compared,
            if first.is_none() {
                "all match"
            } else {
                "MISMATCH"
            }
        ))?;
    }
    match first {
        None => Ok(()),
        Some(m) => Err(CliError::Failed(format!(
            "engines differ in layer `{}` at pixel {}, filter {}: mult={} shift={}",
            m.layer, m.pixel, m.filter, m.mult, m.shift
        ))),
    }
}

fn accel_config(ctx: &Ctx, a: &SimArgs) -> CliResult<AccelConfig> {
    let mut f = AccelFile::default();
    if let Some(v) = &ctx.file.accel {
        let text = toml::to_string(v).map_err(|e| CliError::Usage(e.to_string()))?;
        f = AccelFile::parse(&text)?;
    }
    if let Some(p) = &a.accel {
        f = f.overlay(AccelFile::load(p)?);
    }
    let flags = AccelFile {
        preset: a.preset.clone(),
        gemm_units: a.gemm_units,
        gact_bytes: a.gact,
        lwgt_bytes_per_unit: a.lwgt,
        weight_bits: a.weight_bits,
        freq_mhz: a.freq_mhz,
        weight_copy_opt: a.weight_copy_opt,
        dma_preload: a.dma_preload,
        overlap_store: a.overlap_store,
        ..AccelFile::default()
    };
    // a preset named on the command line replaces the file's base values
    if flags.preset.is_some() {
        f = AccelFile::default().overlay(flags);
    } else {
        f = f.overlay(flags);
    }
    Ok(f.resolve()?)
}

fn sim_layers(a: &SimArgs) -> CliResult<(String, Vec<SimLayer>)> {
    match (&a.model, &a.synth) {
        (Some(p), None) => {
            let m = Model::load(p)?;
            Ok((m.name.clone(), m.sim_layers()?))
        }
        (None, Some(preset)) => {
            let (shapes, _) = preset_layers(preset).ok_or_else(|| {
                CliError::Usage(format!(
                    "unknown preset `{preset}` (valid: {})",
                    PRESETS.join(", ")
                ))
            })?;
            let layers = shapes
                .iter()
                .map(|s| {
                    potacc_core::sim::GemmShape::from_geometry(s.name(), &s.geometry())
                        .map(SimLayer::Gemm)
                })
                .collect::<potacc_core::Result<Vec<_>>>()?;
            Ok((preset.clone(), layers))
        }
        _ => Err(CliError::Usage(
            "give exactly one of --model or --synth".into(),
        )),
    }
}

fn parse_sweep(spec: &str) -> CliResult<(SweepAxis, Vec<u64>)> {
    let (axis, values) = spec
        .split_once('=')
        .ok_or_else(|| CliError::Usage(format!("sweep `{spec}` must look like axis=v1,v2")))?;
    let axis: SweepAxis = axis
        .trim()
        .parse()
        .map_err(|e: potacc_core::Error| CliError::Usage(e.to_string()))?;
    let values = values
        .split(',')
        .map(|v| parse_size(v).map_err(CliError::Usage))
        .collect::<CliResult<Vec<u64>>>()?;
    if values.is_empty() {
        return Err(CliError::Usage("sweep needs at least one value".into()));
    }
    Ok((axis, values))
}

fn stage_json(stages: &Stages, cfg: &AccelConfig) -> Value {
    let mut cycles = serde_json::Map::new();
    let mut ms = serde_json::Map::new();
    for (name, c) in Stages::NAMES.iter().zip(stages.as_array()) {
        cycles.insert((*name).into(), json!(c));
        ms.insert((*name).into(), json!(cfg.cycles_to_ms(c)));
    }
    json!({"cycles": cycles, "ms": ms})
}

fn report_json(model: &str, cfg: &AccelConfig, r: &SimReport) -> Value {
    let layers: Vec<Value> = r
        .layers
        .iter()
        .map(|l| {
            let mut v = serde_json::to_value(l).expect("layer report serializes");
            v["stage_ms"] = stage_json(&l.stages, cfg)["ms"].clone();
            v
        })
        .collect();
    json!({
        "schema": REPORT_SCHEMA,
        "version": REPORT_VERSION,
        "model": model,
        "assumptions": ASSUMPTIONS,
        "config": cfg,
        "totals": {
            "stages": stage_json(&r.stages, cfg),
            "traffic": r.traffic,
            "macs": r.macs,
            "acc_cycles": r.acc_cycles(),
            "acc_time_ms": cfg.cycles_to_ms(r.acc_cycles()),
            "lwgt_refetch_count": r.lwgt_refetch_count,
            "pe_utilization": r.pe_utilization,
            "total_cycles": r.total_cycles,
            "t_accel_ms": r.t_accel_ms,
            "t_other_ms": r.t_other_ms,
            "total_ms": r.total_ms,
        },
        "layers": layers,
    })
}

fn layers_csv(r: &SimReport, cfg: &AccelConfig) -> String {
    let mut s = format!(
        "layer,offloaded,macs,{},total_cycles,time_ms,weight_passes,lwgt_refetch_count,pe_utilization\n",
        Stages::NAMES.join(",")
    );
    for l in &r.layers {
        let stages: Vec<String> = l.stages.as_array().iter().map(u64::to_string).collect();
        s.push_str(&format!(
            "{},{},{},{},{},{:.6},{},{},{:.6}\n",
            l.name,
            l.offloaded,
            l.macs,
            stages.join(","),
            l.total_cycles,
            l.time_ms,
            l.weight_passes,
            l.lwgt_refetch_count,
            l.pe_utilization
        ));
    }
    let _ = cfg;
    s
}

fn cmd_sim(ctx: &Ctx, a: &SimArgs, sweep_spec: Option<String>) -> CliResult {
    let mut cfg = accel_config(ctx, a)?;
    let (name, layers) = sim_layers(a)?;
    let write = |path: &Option<PathBuf>, text: &str| -> CliResult {
        if let Some(p) = path {
            crate::model::write_file(p, text.as_bytes())?;
        }
        Ok(())
    };
    let Some(spec) = sweep_spec.or_else(|| a.sweep.clone()) else {
        let r = simulate_model(&layers, &cfg)?;
        let report = report_json(&name, &cfg, &r);
        write(
            &a.report,
            &serde_json::to_string_pretty(&report).expect("serializes"),
        )?;
        write(&a.csv, &layers_csv(&r, &cfg))?;
        if ctx.json {
            return out_json(&report);
        }
        let mut text = format!("model {name}: {} layers\n", r.layers.len());
        for (n, ms) in Stages::NAMES.iter().zip(r.stage_ms(&cfg)) {
            text.push_str(&format!("{n:<9} {ms:>12.3} ms\n"));
        }
        text.push_str(&format!(
            "acc_cycles {}  refetches {}  pe_utilization {:.3}\nT_accel {:.3} ms  T_other {:.3} ms  total {:.3} ms",
            r.acc_cycles(),
            r.lwgt_refetch_count,
            r.pe_utilization,
            r.t_accel_ms,
            r.t_other_ms,
            r.total_ms
        ));
        return out(&text);
    };
    let (axis, values) = parse_sweep(&spec)?;
    // the buffer not being swept stays at 128 KB unless set explicitly
    match axis {
        SweepAxis::Lwgt if a.gact.is_none() => cfg.gact_bytes = 128 * 1024,
        SweepAxis::Gact if a.lwgt.is_none() => cfg.lwgt_bytes_per_unit = 128 * 1024,
        _ => {}
    }
    let points: Vec<(u64, SimReport)> = values
        .par_iter()
        .map(|&v| sweep(&layers, &cfg, axis, &[v]).map(|mut r| r.remove(0)))
        .collect::<potacc_core::Result<_>>()?;
    let mut csv = format!(
        "{},acc_cycles,total_cycles,total_ms,lwgt_refetch_count,pe_utilization\n",
        axis.name()
    );
    let mut rows = Vec::new();
    for (v, r) in &points {
        let label = if axis == SweepAxis::GemmUnits {
            v.to_string()
        } else {
            format_size(*v)
        };
        csv.push_str(&format!(
            "{label},{},{},{:.6},{},{:.6}\n",
            r.acc_cycles(),
            r.total_cycles,
            r.total_ms,
            r.lwgt_refetch_count,
            r.pe_utilization
        ));
        rows.push(json!({
            "value": v,
            "label": label,
            "acc_cycles": r.acc_cycles(),
            "total_cycles": r.total_cycles,
            "total_ms": r.total_ms,
            "lwgt_refetch_count": r.lwgt_refetch_count,
            "pe_utilization": r.pe_utilization,
            "report": report_json(&name, &axis.apply(&cfg, *v), r),
        }));
    }
    let doc = json!({
        "schema": REPORT_SCHEMA,
        "version": REPORT_VERSION,
        "model": name,
        "axis": axis.name(),
        "points": rows,
    });
    write(
        &a.report,
        &serde_json::to_string_pretty(&doc).expect("serializes"),
    )?;
    write(&a.csv, &csv)?;
    if ctx.json {
        let mut slim = doc.clone();
        for p in slim["points"].as_array_mut().expect("array") {
            p.as_object_mut().expect("object").remove("report");
        }
        out_json(&slim)
    } else {
        out(csv.trim_end())
    }
}

fn cmd_energy(
    ctx: &Ctx,
    time_ms: Option<f64>,
    report: Option<&Path>,
    p_inf: f64,
    p_idle: f64,
    images: u64,
) -> CliResult {
    let ms = match (time_ms, report) {
        (Some(t), None) => t,
        (None, Some(p)) => {
            let text = std::fs::read_to_string(p).map_err(|source| ModelError::Read {
                path: p.into(),
                source,
            })?;
            let v: Value = serde_json::from_str(&text)
                .map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?;
            v["totals"]["total_ms"].as_f64().ok_or_else(|| {
                CliError::Usage(format!("{}: no `totals.total_ms` in report", p.display()))
            })?
        }
        _ => return Err(CliError::Usage("give --time-ms or --report".into())),
    };
    let j = energy(ms / 1e3, p_inf, p_idle, images)?;
    if ctx.json {
        out_json(&json!({
            "time_ms": ms,
            "p_inference_w": p_inf,
            "p_idle_w": p_idle,
            "images": images,
            "joules_per_image": j,
        }))
    } else {
        out(&format!("{j} J/image"))
    }
}

fn cmd_synth(
    ctx: &Ctx,
    preset: &str,
    scheme: Option<String>,
    seed: Option<u64>,
    dest: &Path,
    stage: StageArg,
) -> CliResult {
    let scheme = require_scheme(ctx, scheme)?;
    let model = synth_model(preset, scheme, seed_of(ctx, seed)).ok_or_else(|| {
        CliError::Usage(format!(
            "unknown preset `{preset}` (valid: {})",
            PRESETS.join(", ")
        ))
    })??;
    let model = match stage {
        StageArg::Int8 => model,
        StageArg::PotIntE => prep_model(&model, scheme, PrepOptions::default())?,
    };
    model.save(dest)?;
    summary(ctx, &model, dest)
}
