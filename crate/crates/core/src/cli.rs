//! The `moqe` command-line interface.
//!
//! Exit codes: 0 success, 1 usage error, 2 data or format error, 3 failed
//! invariant (selftest or size verification).

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::analysis::{checkpoint_stats, sensitivity_table, stats_table, Harness, Target};
use crate::bench::{throughput_report, Variant};
use crate::bitpack::Bits;
use crate::checkpoint::{self, Checkpoint};
use crate::error::{Error, Result};
use crate::model::{forward_batch, random_checkpoint, synthetic_checkpoint, ModelSpec};
use crate::plan::{apply_plan, LayerSubset, QuantPlan, QuantRule};
use crate::quant::{Granularity, LogScaleMode, Scheme};
use crate::report::{Format, Table};
use crate::selftest;
use crate::sizing::{size_report, size_report_for, verify_against_checkpoint, SizeReport};
use crate::tensor::LayerGroup;

pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_INVARIANT: i32 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "moqe",
    version,
    about = "Weight-only quantization for mixture-of-experts transformers"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a seeded random checkpoint for a model spec.
    Init(InitArgs),
    /// Quantize selected layer groups of a checkpoint.
    Quantize(QuantizeArgs),
    /// Weight distribution statistics and skewness.
    Analyze(AnalyzeArgs),
    /// Output degradation when quantizing one group at a time.
    Sensitivity(SensitivityArgs),
    /// Parameter counts and predicted container sizes.
    SizeReport(SizeReportArgs),
    /// Run the model on token sequences.
    Forward(ForwardArgs),
    /// Time forward passes for several encodings of a checkpoint.
    Bench(BenchArgs),
    /// Run the embedded invariant checks.
    Selftest,
}

#[derive(Debug, Args)]
#[group(required = true, multiple = false)]
pub struct SpecSource {
    /// Model spec file (`key = value` lines).
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// Built-in spec: toy, moe-5.3b or dense-5.3b.
    #[arg(long)]
    pub preset: Option<String>,
}

#[derive(Debug, Args)]
pub struct InitArgs {
    #[command(flatten)]
    pub source: SpecSource,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Give dense FFN output projections a heavy negative tail.
    #[arg(long)]
    pub synthetic: bool,
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct QuantizeArgs {
    /// MQE1 container or raw tensor directory.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    /// Comma-separated groups (expert_ffn, dense_ffn, self_attn, cross_attn,
    /// embedding, router, other).
    #[arg(long)]
    pub groups: String,
    #[arg(long, value_parser = ["2", "3", "4", "8"])]
    pub bits: String,
    #[arg(long, value_parser = ["linear", "log"], default_value = "linear")]
    pub scheme: String,
    #[arg(long, value_parser = ["channel", "tensor"], default_value = "channel")]
    pub granularity: String,
    #[arg(long, value_parser = ["even", "odd", "all"], default_value = "all")]
    pub layer_subset: String,
    #[arg(long, value_parser = ["absmax", "mse"], default_value = "mse")]
    pub log_scale_mode: String,
    /// Precision of tensors that are not quantized.
    #[arg(long, value_parser = ["16", "32"], default_value = "16")]
    pub float_bits: String,
    #[arg(long, value_parser = ["text", "tsv"], default_value = "text")]
    pub format: String,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// One row per tensor instead of per group.
    #[arg(long)]
    pub per_layer: bool,
    #[arg(long, value_parser = ["text", "tsv"], default_value = "text")]
    pub format: String,
}

#[derive(Debug, Args)]
pub struct SensitivityArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Token file: one sequence of whitespace-separated ids per line.
    #[arg(long)]
    pub probe: PathBuf,
    #[arg(long)]
    pub groups: String,
    /// Comma-separated bit widths; 16 or 32 mean no quantization.
    #[arg(long, default_value = "2,3,4,8")]
    pub bits_sweep: String,
    #[arg(long, value_parser = ["linear", "log"], default_value = "linear")]
    pub scheme: String,
    #[arg(long, value_parser = ["channel", "tensor"], default_value = "channel")]
    pub granularity: String,
    #[arg(long, value_parser = ["even", "odd", "all"], default_value = "all")]
    pub layer_subset: String,
    /// Overrides the spec recorded in the checkpoint.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long, value_parser = ["text", "tsv"], default_value = "text")]
    pub format: String,
}

#[derive(Debug, Args)]
pub struct SizeReportArgs {
    #[arg(long, conflicts_with_all = ["preset", "input"])]
    pub spec: Option<PathBuf>,
    #[arg(long, conflicts_with = "input")]
    pub preset: Option<String>,
    /// Take tensor shapes and metadata from an existing checkpoint.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Plan file; without it nothing is quantized.
    #[arg(long)]
    pub plan: Option<PathBuf>,
    /// Check a container against the prediction (defaults to --input).
    #[arg(long, num_args = 0..=1)]
    pub verify: Option<Option<PathBuf>>,
    #[arg(long, value_parser = ["text", "tsv"], default_value = "text")]
    pub format: String,
}

#[derive(Debug, Args)]
pub struct ForwardArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub tokens: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Write argmax ids instead of logits.
    #[arg(long)]
    pub greedy: bool,
    #[arg(long)]
    pub spec: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value = "f32,f16,int8,int4,int3,int2")]
    pub variants: String,
    #[arg(long, env = "MOQE_THREADS", default_value_t = 1)]
    pub threads: usize,
    #[arg(long, default_value_t = 5)]
    pub reps: usize,
    /// Token file; defaults to 8 seeded random sequences of 32 tokens.
    #[arg(long)]
    pub probe: Option<PathBuf>,
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long, value_parser = ["text", "tsv"], default_value = "text")]
    pub format: String,
}

/// Parses whitespace-separated token ids, one sequence per non-empty line.
pub fn parse_token_lines(text: &str) -> Result<Vec<Vec<u32>>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            l.split_whitespace()
                .map(|t| {
                    t.parse()
                        .map_err(|_| Error::Parse(format!("token line {}: bad id {t:?}", i + 1)))
                })
                .collect()
        })
        .collect()
}

/// Reads an MQE1 container, or a raw tensor directory.
pub fn load_input(path: &Path) -> Result<Checkpoint> {
    if path.is_dir() {
        checkpoint::read_raw_dir(path)
    } else {
        checkpoint::load(path)
    }
}

pub fn preset(name: &str) -> Result<ModelSpec> {
    match name {
        "toy" => Ok(ModelSpec::toy()),
        "moe-5.3b" => Ok(ModelSpec::moe_5p3b()),
        "dense-5.3b" => Ok(ModelSpec::dense_5p3b()),
        _ => Err(Error::InvalidArgument(format!("unknown preset {name:?}"))),
    }
}

fn read_spec(path: &Path) -> Result<ModelSpec> {
    ModelSpec::parse(&fs::read_to_string(path)?)
}

fn resolve_spec(spec: &Option<PathBuf>, preset_name: &Option<String>) -> Result<ModelSpec> {
    match (spec, preset_name) {
        (Some(p), _) => read_spec(p),
        (None, Some(n)) => preset(n),
        (None, None) => Err(Error::InvalidArgument("pass --spec or --preset".into())),
    }
}

fn spec_of(ckpt: &Checkpoint, override_path: &Option<PathBuf>) -> Result<ModelSpec> {
    match override_path {
        Some(p) => read_spec(p),
        None => ModelSpec::from_meta(ckpt.meta()).map_err(|e| {
            Error::InvalidSpec(format!(
                "checkpoint carries no usable spec ({e}); pass --spec"
            ))
        }),
    }
}

fn parse_groups(list: &str) -> Result<Vec<LayerGroup>> {
    let items: Vec<&str> = list
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty() && *s != "none")
        .collect();
    if items.is_empty() {
        return Err(Error::InvalidArgument("empty group list".into()));
    }
    items
        .iter()
        .map(|s| {
            s.parse::<LayerGroup>()
                .map_err(|e| Error::InvalidArgument(e.to_string()))
        })
        .collect()
}

fn parse_list<T: std::str::FromStr>(list: &str, what: &str) -> Result<Vec<T>> {
    list.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse()
                .map_err(|_| Error::InvalidArgument(format!("bad {what} {s:?}")))
        })
        .collect()
}

fn arg<T: std::str::FromStr<Err = Error>>(s: &str) -> Result<T> {
    s.parse()
        .map_err(|e: Error| Error::InvalidArgument(e.to_string()))
}

fn tables(out: &mut dyn Write, format: Format, tables: &[Table]) -> Result<()> {
    for (i, t) in tables.iter().enumerate() {
        if i > 0 {
            writeln!(out)?;
        }
        write!(out, "{}", t.render(format))?;
    }
    Ok(())
}

fn print_size_report(out: &mut dyn Write, r: &SizeReport, format: Format) -> Result<()> {
    tables(out, format, &[r.summary_table(), r.group_table()])
}

fn cmd_init(a: &InitArgs, out: &mut dyn Write) -> Result<i32> {
    let spec = resolve_spec(&a.source.spec, &a.source.preset)?;
    let ckpt = if a.synthetic {
        synthetic_checkpoint(&spec, a.seed)?
    } else {
        random_checkpoint(&spec, a.seed)?
    };
    let n = checkpoint::save(&ckpt, &a.output)?;
    writeln!(
        out,
        "wrote {} tensors, {n} bytes to {}",
        ckpt.len(),
        a.output.display()
    )?;
    Ok(0)
}

fn cmd_quantize(a: &QuantizeArgs, out: &mut dyn Write) -> Result<i32> {
    let groups = parse_groups(&a.groups)?;
    let bits = Bits::new(a.bits.parse().unwrap_or(0))?;
    let (scheme, granularity): (Scheme, Granularity) = (arg(&a.scheme)?, arg(&a.granularity)?);
    let (layers, mode): (LayerSubset, LogScaleMode) =
        (arg(&a.layer_subset)?, arg(&a.log_scale_mode)?);
    let mut plan = QuantPlan::new().with_default_bits(a.float_bits.parse().unwrap_or(16))?;
    for g in groups {
        let rule = QuantRule::new(g, bits)
            .layers(layers)
            .scheme(scheme)
            .granularity(granularity)
            .log_mode(mode);
        plan = plan.with_rule(rule)?;
    }
    let ckpt = load_input(&a.input)?;
    let quantized = apply_plan(&ckpt, &plan)?;
    let written = checkpoint::save(&quantized, &a.output)?;
    let shapes: Vec<_> = ckpt
        .entries()
        .iter()
        .map(|e| (e.name.clone(), e.group, e.payload.shape()))
        .collect();
    let report = size_report_for(&shapes, ckpt.meta(), &plan);
    print_size_report(out, &report, arg(&a.format)?)?;
    writeln!(out, "\nwrote {written} bytes to {}", a.output.display())?;
    Ok(0)
}

fn cmd_analyze(a: &AnalyzeArgs, out: &mut dyn Write) -> Result<i32> {
    let ckpt = load_input(&a.input)?;
    let rows = checkpoint_stats(&ckpt, a.per_layer)?;
    tables(out, arg(&a.format)?, &[stats_table(&rows)])?;
    Ok(0)
}

fn cmd_sensitivity(a: &SensitivityArgs, out: &mut dyn Write) -> Result<i32> {
    let groups = parse_groups(&a.groups)?;
    let bits: Vec<u32> = parse_list(&a.bits_sweep, "bit width")?;
    if let Some(&b) = bits.iter().find(|&&b| b < 16 && Bits::new(b).is_err()) {
        return Err(Error::InvalidArgument(format!(
            "bit width {b} not in 2, 3, 4, 8, 16, 32"
        )));
    }
    let (scheme, granularity, layers) =
        (arg(&a.scheme)?, arg(&a.granularity)?, arg(&a.layer_subset)?);
    let ckpt = load_input(&a.input)?;
    let spec = spec_of(&ckpt, &a.spec)?;
    let probe = parse_token_lines(&fs::read_to_string(&a.probe)?)?;
    let harness = Harness::new(&ckpt, &spec, &probe)?;
    let mut reports = Vec::new();
    for &group in &groups {
        for &b in &bits {
            reports.push(harness.run(Target { group, layers }, b, scheme, granularity)?);
        }
    }
    tables(out, arg(&a.format)?, &[sensitivity_table(&reports)])?;
    Ok(0)
}

fn cmd_size_report(a: &SizeReportArgs, out: &mut dyn Write) -> Result<i32> {
    let plan = match &a.plan {
        Some(p) => QuantPlan::parse(&fs::read_to_string(p)?)?,
        None => QuantPlan::new(),
    };
    let report = match &a.input {
        Some(input) => {
            let index =
                checkpoint::read_index(&mut std::io::BufReader::new(fs::File::open(input)?))?;
            let shapes: Vec<_> = index
                .records
                .iter()
                .map(|r| (r.name.clone(), r.group, r.storage.shape.clone()))
                .collect();
            size_report_for(&shapes, &index.meta, &plan)
        }
        None => size_report(&resolve_spec(&a.spec, &a.preset)?, &plan)?,
    };
    let format = arg(&a.format)?;
    print_size_report(out, &report, format)?;
    let Some(target) = &a.verify else {
        return Ok(0);
    };
    let path = target
        .as_ref()
        .or(a.input.as_ref())
        .ok_or_else(|| Error::InvalidArgument("--verify needs a path or --input".into()))?;
    let v = verify_against_checkpoint(&report, path)?;
    writeln!(
        out,
        "\nverify {}: predicted {} bytes, actual {} bytes, relative error {:.6}, {} tensor deltas: {}",
        path.display(),
        v.predicted,
        v.actual,
        v.relative_error(),
        v.deltas.len(),
        if v.passed() { "PASS" } else { "FAIL" }
    )?;
    if !v.deltas.is_empty() {
        tables(out, format, &[v.table()])?;
    }
    Ok(if v.passed() { 0 } else { EXIT_INVARIANT })
}

fn cmd_forward(a: &ForwardArgs, out: &mut dyn Write) -> Result<i32> {
    let ckpt = load_input(&a.input)?;
    let spec = spec_of(&ckpt, &a.spec)?;
    let seqs = parse_token_lines(&fs::read_to_string(&a.tokens)?)?;
    let outputs = forward_batch(&seqs, &ckpt, &spec)?;
    let mut text = String::new();
    for (s, o) in outputs.iter().enumerate() {
        let v = spec.vocab;
        let rows = o.logits.data().chunks_exact(v);
        if a.greedy {
            let ids: Vec<String> = rows
                .map(|r| {
                    let best = r
                        .iter()
                        .enumerate()
                        .fold(0, |b, (i, &x)| if x > r[b] { i } else { b });
                    best.to_string()
                })
                .collect();
            text.push_str(&ids.join(" "));
            text.push('\n');
        } else {
            for (p, r) in rows.enumerate() {
                let vals: Vec<String> = r.iter().map(|x| x.to_string()).collect();
                text.push_str(&format!("{s}\t{p}\t{}\n", vals.join("\t")));
            }
        }
    }
    fs::write(&a.out, text)?;
    writeln!(
        out,
        "wrote {} sequences to {}",
        outputs.len(),
        a.out.display()
    )?;
    Ok(0)
}

fn cmd_bench(a: &BenchArgs, out: &mut dyn Write) -> Result<i32> {
    let variants: Vec<Variant> = parse_list(&a.variants, "variant")?;
    let ckpt = load_input(&a.input)?;
    let spec = spec_of(&ckpt, &a.spec)?;
    let probe = match &a.probe {
        Some(p) => parse_token_lines(&fs::read_to_string(p)?)?,
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            (0..8)
                .map(|_| {
                    (0..32)
                        .map(|_| rng.gen_range(0..spec.vocab as u32))
                        .collect()
                })
                .collect()
        }
    };
    let report = throughput_report(&ckpt, &spec, &variants, &probe, a.reps, a.threads)?;
    writeln!(
        out,
        "# {} tokens, {} repetitions, {} threads, {} FLOPs/token; timings are machine-specific",
        report.tokens, report.repetitions, report.threads, report.flops_per_token
    )?;
    tables(out, arg(&a.format)?, &[report.table()])?;
    Ok(0)
}

fn cmd_selftest(out: &mut dyn Write) -> Result<i32> {
    let mut failed = 0;
    for c in selftest::run() {
        match &c.outcome {
            Ok(()) => writeln!(out, "PASS {}", c.name)?,
            Err(m) => {
                failed += 1;
                writeln!(out, "FAIL {}: {m}", c.name)?;
            }
        }
    }
    Ok(if failed == 0 { 0 } else { EXIT_INVARIANT })
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::InvalidArgument(_) | Error::InvalidPlan(_) | Error::UnsupportedBits(_) => EXIT_USAGE,
        _ => EXIT_DATA,
    }
}

pub fn execute(cli: &Cli, out: &mut dyn Write) -> Result<i32> {
    match &cli.command {
        Command::Init(a) => cmd_init(a, out),
        Command::Quantize(a) => cmd_quantize(a, out),
        Command::Analyze(a) => cmd_analyze(a, out),
        Command::Sensitivity(a) => cmd_sensitivity(a, out),
        Command::SizeReport(a) => cmd_size_report(a, out),
        Command::Forward(a) => cmd_forward(a, out),
        Command::Bench(a) => cmd_bench(a, out),
        Command::Selftest => cmd_selftest(out),
    }
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code. Reports go to `out`, diagnostics to stderr.
pub fn run<I, T>(args: I, out: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { 0 };
        }
    };
    match execute(&cli, out) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
