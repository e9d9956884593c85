//! The `mico` command line: run, bench, plan and convert.
//!
//! Exit codes: 0 success; 2 invalid model, converter or I/O error; 3 arena
//! exhausted; 4 kernel evaluation failed; 5 invalid memory plan.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::arena::{TensorArena, DEFAULT_ALIGN};
use crate::converter::{self, ConverterError};
use crate::interpreter::{
    model_requests, Clock, FakeClock, Interpreter, InterpreterError, MemoryReport, MonotonicClock, ProfileLog,
};
use crate::model::{parse_model, serialize_model, validate_model, DType, Model, ViolationKind, OFFLINE_MEMORY_PLAN};
use crate::planner::{plan_greedy, plan_naive, plan_offline, render_plan, validate_plan, PlannerError};
use crate::registry::Registry;
use crate::tensor::Tensor;
use crate::tensor_file::{read_tensor_file, write_tensor_file};

mod bench;

pub use bench::{BenchResult, OpTiming};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 2;
pub const EXIT_ARENA: i32 = 3;
pub const EXIT_EVAL: i32 = 4;
pub const EXIT_PLAN: i32 = 5;

/// Default arena size when `--arena-bytes` is not given.
pub const DEFAULT_ARENA_BYTES: usize = 64 * 1024;

#[derive(Debug, Parser)]
#[command(name = "mico", version, about = "Run, benchmark, plan and convert mico models")]
pub struct Cli {
    /// Print machine-readable JSON instead of tables.
    #[arg(long, global = true)]
    pub json: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one inference and write the outputs.
    Run {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value_t = DEFAULT_ARENA_BYTES)]
        arena_bytes: usize,
        #[arg(long = "input", num_args = 1..)]
        inputs: Vec<PathBuf>,
        #[arg(long = "output", num_args = 1..)]
        outputs: Vec<PathBuf>,
    },
    /// Time repeated invokes and split off interpreter overhead.
    Bench {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value_t = DEFAULT_ARENA_BYTES)]
        arena_bytes: usize,
        #[arg(long, default_value_t = 100, value_parser = clap::value_parser!(u32).range(1..))]
        runs: u32,
        /// Inputs to feed; zero-filled when omitted.
        #[arg(long = "input", num_args = 1..)]
        inputs: Vec<PathBuf>,
        /// Use a deterministic tick source (one tick per clock read).
        #[arg(long)]
        fake_clock: bool,
    },
    /// Compare naive and greedy memory plans and draw the greedy one.
    Plan {
        #[arg(long)]
        model: PathBuf,
        /// Show the plan stored in the model metadata instead.
        #[arg(long)]
        offline: bool,
    },
    /// Build a model from a graph description.
    Convert {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum)]
        quantize: Option<QuantizeMode>,
        /// Directory of MTEN calibration inputs, read in file-name order.
        #[arg(long)]
        calib: Option<PathBuf>,
        #[arg(long)]
        offline_plan: bool,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum QuantizeMode {
    I8,
}

/// A failure with its exit code.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn new(code: i32, message: impl Into<String>) -> Self {
        CliError { code, message: message.into() }
    }
}

impl From<InterpreterError> for CliError {
    fn from(e: InterpreterError) -> Self {
        let code = match &e {
            InterpreterError::ArenaExhausted { .. } | InterpreterError::Arena(_) => EXIT_ARENA,
            InterpreterError::EvalFailed { .. } => EXIT_EVAL,
            InterpreterError::Plan(_) => EXIT_PLAN,
            InterpreterError::InvalidModel(_)
            | InterpreterError::PhaseError { .. }
            | InterpreterError::UnsupportedOperator { .. }
            | InterpreterError::PrepareFailed { .. }
            | InterpreterError::IndexOutOfRange { .. }
            | InterpreterError::ArenaBusy => EXIT_INVALID,
        };
        CliError::new(code, e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::new(EXIT_INVALID, format!("io: {e}"))
    }
}

type CliResult = Result<(), CliError>;

/// Parses `args` (including the program name) and runs the command,
/// returning the process exit code.
pub fn run_cli<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INVALID } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if code == EXIT_OK { out.write_all(text.as_bytes()) } else { err.write_all(text.as_bytes()) };
            return code;
        }
    };
    match execute(&cli, out) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "error: {}", e.message);
            e.code
        }
    }
}

pub fn execute(cli: &Cli, out: &mut dyn Write) -> CliResult {
    match &cli.command {
        Command::Run { model, arena_bytes, inputs, outputs } => cmd_run(model, *arena_bytes, inputs, outputs, cli.json, out),
        Command::Bench { model, arena_bytes, runs, inputs, fake_clock } => {
            cmd_bench(model, *arena_bytes, *runs as usize, inputs, *fake_clock, cli.json, out)
        }
        Command::Plan { model, offline } => cmd_plan(model, *offline, cli.json, out),
        Command::Convert { graph, out: dest, quantize, calib, offline_plan } => {
            cmd_convert(graph, dest, *quantize, calib.as_deref(), *offline_plan, out)
        }
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>, CliError> {
    std::fs::read(path).map_err(|e| CliError::new(EXIT_INVALID, format!("{}: {e}", path.display())))
}

fn load_model(bytes: &[u8]) -> Result<Model<'_>, CliError> {
    parse_model(bytes).map_err(|e| CliError::new(EXIT_INVALID, format!("model: {e}")))
}

fn new_arena(bytes: usize) -> Result<TensorArena, CliError> {
    TensorArena::new(bytes).map_err(|e| CliError::new(EXIT_ARENA, format!("arena: {e}")))
}

/// Loads input files and checks them against the model's input specs.
fn load_inputs(model: &Model<'_>, paths: &[PathBuf]) -> Result<Vec<Tensor>, CliError> {
    if paths.len() != model.inputs.len() {
        return Err(CliError::new(
            EXIT_INVALID,
            format!("model has {} inputs, {} given", model.inputs.len(), paths.len()),
        ));
    }
    let mut tensors = Vec::with_capacity(paths.len());
    for (i, (path, &t)) in paths.iter().zip(&model.inputs).enumerate() {
        let tensor =
            read_tensor_file(path).map_err(|e| CliError::new(EXIT_INVALID, format!("{}: {e}", path.display())))?;
        let spec = &model.tensors[t];
        if tensor.dtype != spec.dtype || tensor.shape != spec.shape {
            return Err(CliError::new(
                EXIT_INVALID,
                format!(
                    "input {i} ({}) is {:?}{:?}, model expects {:?}{:?}",
                    path.display(),
                    tensor.dtype,
                    tensor.shape,
                    spec.dtype,
                    spec.shape
                ),
            ));
        }
        tensors.push(tensor);
    }
    Ok(tensors)
}

/// Memory report in persistent, nonpersistent, total order.
pub fn format_memory_report(report: &MemoryReport) -> String {
    format!(
        "{:<16}{:<16}{:<16}\n{:<16}{:<16}{:<16}\n",
        "persistent",
        "nonpersistent",
        "total",
        report.persistent_bytes,
        report.nonpersistent_bytes,
        report.total_bytes
    )
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunSummary {
    pub memory: MemoryReport,
    pub outputs: Vec<String>,
}

fn cmd_run(model_path: &Path, arena_bytes: usize, inputs: &[PathBuf], outputs: &[PathBuf], json: bool, out: &mut dyn Write) -> CliResult {
    let bytes = read_file(model_path)?;
    let model = load_model(&bytes)?;
    let registry = Registry::reference();
    let arena = new_arena(arena_bytes)?;
    let mut interp = Interpreter::new(&model, &registry, &arena)?;
    let tensors = load_inputs(&model, inputs)?;
    if outputs.len() != model.outputs.len() {
        return Err(CliError::new(
            EXIT_INVALID,
            format!("model has {} outputs, {} paths given", model.outputs.len(), outputs.len()),
        ));
    }
    interp.allocate_tensors()?;
    for (i, t) in tensors.iter().enumerate() {
        interp.set_input(i, &t.data)?;
    }
    interp.invoke()?;
    for (i, path) in outputs.iter().enumerate() {
        let view = interp.output_view(i)?;
        let spec = view.spec();
        let tensor = Tensor { dtype: spec.dtype, shape: spec.shape.clone(), quant: spec.quant, data: view.bytes().to_vec() };
        drop(view);
        write_tensor_file(path, &tensor).map_err(|e| CliError::new(EXIT_INVALID, format!("{}: {e}", path.display())))?;
    }
    let report = interp.memory_report()?;
    if json {
        let summary = RunSummary { memory: report, outputs: outputs.iter().map(|p| p.display().to_string()).collect() };
        writeln!(out, "{}", serde_json::to_string_pretty(&summary).expect("serializable"))?;
    } else {
        out.write_all(format_memory_report(&report).as_bytes())?;
    }
    Ok(())
}

fn cmd_bench(
    model_path: &Path,
    arena_bytes: usize,
    runs: usize,
    inputs: &[PathBuf],
    fake_clock: bool,
    json: bool,
    out: &mut dyn Write,
) -> CliResult {
    let bytes = read_file(model_path)?;
    let model = load_model(&bytes)?;
    let registry = Registry::reference();
    let arena = new_arena(arena_bytes)?;
    let mut interp = Interpreter::new(&model, &registry, &arena)?;
    let tensors = if inputs.is_empty() {
        model.inputs.iter().map(|&t| Tensor::for_spec(&model.tensors[t])).collect()
    } else {
        load_inputs(&model, inputs)?
    };
    interp.allocate_tensors()?;
    let clock: Box<dyn Clock> = if fake_clock { Box::new(FakeClock::new(1)) } else { Box::new(MonotonicClock::new()) };
    let log = ProfileLog::new();
    interp.attach_profiler(clock, Box::new(log.clone()));
    for _ in 0..runs {
        for (i, t) in tensors.iter().enumerate() {
            interp.set_input(i, &t.data)?;
        }
        interp.invoke()?;
    }
    let unit = if fake_clock { "ticks" } else { "ns" };
    let result = BenchResult::from_events(&log.take(), unit);
    if json {
        writeln!(out, "{}", serde_json::to_string_pretty(&result).expect("serializable"))?;
    } else {
        out.write_all(result.render().as_bytes())?;
        out.write_all(format_memory_report(&interp.memory_report()?).as_bytes())?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanSummary {
    pub buffers: usize,
    pub naive_bytes: usize,
    pub greedy_bytes: usize,
    pub savings_percent: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub offline_bytes: Option<usize>,
}

fn cmd_plan(model_path: &Path, offline: bool, json: bool, out: &mut dyn Write) -> CliResult {
    let bytes = read_file(model_path)?;
    let model = load_model(&bytes)?;
    let report = validate_model(&model);
    if !report.is_valid() {
        // A model whose only defect is its stored plan is a plan error.
        let code = if report.violations.iter().all(|v| v.kind == ViolationKind::Metadata) { EXIT_PLAN } else { EXIT_INVALID };
        return Err(CliError::new(code, InterpreterError::InvalidModel(report).to_string()));
    }
    let set = model_requests(&model, &Registry::reference())?;
    let naive = plan_naive(&set.requests, DEFAULT_ALIGN);
    let greedy = plan_greedy(&set.requests, DEFAULT_ALIGN);
    let shown = if offline {
        let blob = model
            .get_metadata(OFFLINE_MEMORY_PLAN)
            .ok_or_else(|| CliError::new(EXIT_PLAN, format!("model has no {OFFLINE_MEMORY_PLAN} metadata")))?;
        let plan = plan_offline(&set.requests, blob, DEFAULT_ALIGN).map_err(|e| CliError::new(EXIT_PLAN, e.to_string()))?;
        let violations = validate_plan(&set.requests, &plan);
        if !violations.is_empty() {
            return Err(CliError::new(EXIT_PLAN, PlannerError::PlanInvalid(violations).to_string()));
        }
        plan
    } else {
        greedy.clone()
    };
    let savings = if naive.arena_size == 0 {
        0.0
    } else {
        100.0 * (naive.arena_size - greedy.arena_size.min(naive.arena_size)) as f64 / naive.arena_size as f64
    };
    let summary = PlanSummary {
        buffers: set.requests.len(),
        naive_bytes: naive.arena_size,
        greedy_bytes: greedy.arena_size,
        savings_percent: savings,
        offline_bytes: offline.then_some(shown.arena_size),
    };
    if json {
        writeln!(out, "{}", serde_json::to_string_pretty(&summary).expect("serializable"))?;
        return Ok(());
    }
    writeln!(out, "buffers: {}", summary.buffers)?;
    writeln!(out, "naive:   {} bytes", summary.naive_bytes)?;
    writeln!(out, "greedy:  {} bytes", summary.greedy_bytes)?;
    let verdict = if greedy.arena_size <= naive.arena_size { "yes" } else { "no (alignment padding)" };
    writeln!(out, "greedy <= naive: {verdict}")?;
    writeln!(out, "savings: {savings:.1}%")?;
    if let Some(bytes) = summary.offline_bytes {
        writeln!(out, "offline: {bytes} bytes")?;
    }
    writeln!(out)?;
    out.write_all(render_plan(&set.requests, &shown).as_bytes())?;
    Ok(())
}

fn stage(name: &'static str) -> impl Fn(ConverterError) -> CliError {
    move |e| CliError::new(EXIT_INVALID, format!("{name}: {e}"))
}

/// Calibration samples for a single-input model: every `.mten` file in
/// `dir`, in file-name order.
pub fn load_calibration(dir: &Path) -> Result<Vec<Vec<Tensor>>, CliError> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| CliError::new(EXIT_INVALID, format!("quantize: {}: {e}", dir.display())))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "mten"))
        .collect();
    paths.sort();
    paths
        .iter()
        .map(|p| {
            read_tensor_file(p)
                .map(|t| vec![t])
                .map_err(|e| CliError::new(EXIT_INVALID, format!("quantize: {}: {e}", p.display())))
        })
        .collect()
}

fn cmd_convert(
    graph: &Path,
    dest: &Path,
    quantize: Option<QuantizeMode>,
    calib: Option<&Path>,
    offline_plan: bool,
    out: &mut dyn Write,
) -> CliResult {
    if quantize.is_some() && calib.is_none() {
        return Err(CliError::new(EXIT_INVALID, "quantize: calibration required (--calib DIR)"));
    }
    let text = std::fs::read_to_string(graph).map_err(|e| CliError::new(EXIT_INVALID, format!("{}: {e}", graph.display())))?;
    let mut model = converter::build_graph_text(&text).map_err(stage("build"))?;
    if let (Some(QuantizeMode::I8), Some(dir)) = (quantize, calib) {
        if model.inputs.len() != 1 {
            return Err(CliError::new(EXIT_INVALID, "quantize: calibration directories support single-input models only"));
        }
        let samples = load_calibration(dir)?;
        model = converter::quantize_post_training(&model, &samples).map_err(stage("quantize"))?;
    }
    if offline_plan {
        model = converter::attach_offline_plan(&model, DEFAULT_ALIGN).map_err(stage("plan"))?;
    }
    let bytes = serialize_model(&model).map_err(|e| CliError::new(EXIT_INVALID, format!("serialize: {e}")))?;
    std::fs::write(dest, &bytes).map_err(|e| CliError::new(EXIT_INVALID, format!("{}: {e}", dest.display())))?;
    let dtype = model.inputs.first().map(|&t| model.tensors[t].dtype).unwrap_or(DType::F32);
    writeln!(out, "wrote {} ({} bytes, {} ops, {:?} input)", dest.display(), bytes.len(), model.ops.len(), dtype)?;
    Ok(())
}
