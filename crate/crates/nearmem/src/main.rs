use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use nearmem::config::ConfigFile;
use nearmem::report::{write_csv, write_trace};
use nearmem::run::{load_program, load_structure, parse_op, run_one, CurPtr, RunError, RunRequest};
use nearmem::sweep::{run_sweep, SweepFile};
use nearmem_core::isa::{disassemble, encode};
use nearmem_core::offload::{OpError, OpMode};
use nearmem_core::workload::{run_workload, Mode, WorkloadError, WorkloadSpec};

#[derive(Parser)]
#[command(name = "nearmem", version, about = "Near-memory pointer traversal simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Assemble a text program into its binary encoding.
    Assemble { input: PathBuf, output: PathBuf },
    /// Print a binary program as assembler text.
    Disasm { input: PathBuf },
    /// Run one traversal and print its result and latency.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Program as assembler text, or binary if it ends in `.bin`.
        #[arg(long)]
        program: Option<PathBuf>,
        /// Structure to build first (JSON with kind and entries).
        #[arg(long)]
        structure: Option<PathBuf>,
        /// Generate the program for find:K, lower_bound:K or scan:AGG:LO:HI.
        #[arg(long)]
        op: Option<String>,
        /// Address, `root` or `bucket:N`.
        #[arg(long)]
        cur_ptr: Option<String>,
        /// Initial scratch pad as hex.
        #[arg(long)]
        scratch: Option<String>,
        /// Run on the host instead of offloading.
        #[arg(long)]
        host: bool,
        /// Write a JSON-lines event trace.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Run a workload and write its metrics as CSV.
    Bench {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        workload: PathBuf,
        #[arg(long, value_enum)]
        mode: ModeArg,
        /// CSV destination, `-` for stdout.
        #[arg(long)]
        out: PathBuf,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Run every combination of a parameter grid and write one CSV row each.
    Sweep {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Worker threads; all cores by default.
        #[arg(long)]
        threads: Option<usize>,
    },
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum ModeArg {
    Chase,
    ChaseAcc,
    Host,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Mode {
        match m {
            ModeArg::Chase => Mode::Chase,
            ModeArg::ChaseAcc => Mode::ChaseAcc,
            ModeArg::Host => Mode::Host,
        }
    }
}

/// Bad input exits 2, a traversal that faults exits 1.
enum Failure {
    Usage(String),
    Fault(String),
}

fn usage(e: impl std::fmt::Display) -> Failure {
    Failure::Usage(e.to_string())
}

impl From<RunError> for Failure {
    fn from(e: RunError) -> Failure {
        usage(e)
    }
}

fn fault_kind(e: &OpError) -> String {
    match e {
        OpError::Fault(code) => format!("{code:?}"),
        OpError::InvalidAddress(_) => "InvalidAddress".into(),
        OpError::Timeout => "Timeout".into(),
        OpError::ExhaustedRetransmits => "ExhaustedRetransmits".into(),
        OpError::HostIterationCap => "HostIterationCap".into(),
    }
}

fn fault(e: &OpError) -> Failure {
    Failure::Fault(format!("{}: {e}", fault_kind(e)))
}

fn create(path: &Path) -> Result<Box<dyn Write>, Failure> {
    if path == Path::new("-") {
        return Ok(Box::new(io::stdout().lock()));
    }
    let f = File::create(path).map_err(|e| usage(format!("creating {}: {e}", path.display())))?;
    Ok(Box::new(BufWriter::new(f)))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| usage(format!("reading {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| usage(format!("parsing {}: {e}", path.display())))
}

fn rack_config(path: &Path, trace: bool) -> Result<nearmem_core::rack::RackConfig, Failure> {
    let mut config = ConfigFile::load(path).map_err(usage)?.to_rack().map_err(usage)?;
    config.accelerator.trace = trace;
    Ok(config)
}

fn save_trace(path: Option<&Path>, trace: &[nearmem_core::rack::TraceRecord]) -> Result<(), Failure> {
    if let Some(p) = path {
        write_trace(create(p)?, trace).map_err(|e| usage(format!("writing {}: {e}", p.display())))?;
    }
    Ok(())
}

fn dispatch(cmd: Command) -> Result<(), Failure> {
    match cmd {
        Command::Assemble { input, output } => {
            let program = load_program(&input)?;
            std::fs::write(&output, encode(&program)).map_err(|e| usage(format!("writing {}: {e}", output.display())))
        }
        Command::Disasm { input } => {
            let program = load_program(&input)?;
            print!("{}", disassemble(&program));
            Ok(())
        }
        Command::Run { config, program, structure, op, cur_ptr, scratch, host, trace } => {
            let config = rack_config(&config, trace.is_some())?;
            let req = RunRequest {
                structure: structure.as_deref().map(load_structure).transpose()?,
                program: program.as_deref().map(load_program).transpose()?,
                op: op.as_deref().map(parse_op).transpose()?,
                cur_ptr: cur_ptr.as_deref().map(str::parse::<CurPtr>).transpose()?,
                scratch: scratch.map(|h| hex::decode(h.trim_start_matches("0x"))).transpose().map_err(usage)?,
                host,
            };
            let report = run_one(config, req)?;
            save_trace(trace.as_deref(), report.rack.trace())?;
            let r = &report.result;
            let scratch = r.result.as_ref().map_err(fault)?;
            let mode = match r.mode {
                OpMode::Offload => "offload",
                OpMode::Host => "host",
            };
            println!("mode={mode}");
            println!("latency_ns={:.3}", report.latency().as_ns_f64());
            println!("rounds={}", r.rounds);
            println!("hops={}", r.hops);
            println!("retransmits={}", r.retransmits);
            println!("scratch={}", hex::encode(scratch));
            if let Some(a) = &report.answer {
                println!("answer={}", hex::encode(a));
            }
            match report.oracle_match {
                Some(true) => println!("oracle=match"),
                Some(false) => return Err(Failure::Fault("OracleMismatch: result differs from the oracle".into())),
                None => {}
            }
            Ok(())
        }
        Command::Bench { config, workload, mode, out, seed, trace } => {
            let mut config = rack_config(&config, trace.is_some())?;
            if let Some(s) = seed {
                config.seed = s;
            }
            let spec: WorkloadSpec = read_json(&workload)?;
            let output = run_workload(&config, &spec, mode.into()).map_err(|e| match e {
                WorkloadError::Invalid(_) => usage(e),
                e => Failure::Fault(format!("Setup: {e}")),
            })?;
            write_csv(create(&out)?, std::slice::from_ref(&output.metrics)).map_err(usage)?;
            save_trace(trace.as_deref(), &output.trace)?;
            if let Some(e) = output.results.iter().find_map(|(_, r)| r.result.as_ref().err()) {
                return Err(fault(e));
            }
            if output.metrics.oracle_mismatches > 0 {
                return Err(Failure::Fault(format!(
                    "OracleMismatch: {} results differ from the oracle",
                    output.metrics.oracle_mismatches
                )));
            }
            Ok(())
        }
        Command::Sweep { spec, out, threads } => {
            let file: SweepFile = read_json(&spec)?;
            let points = file.points().map_err(usage)?;
            let rows = run_sweep(&points, threads).map_err(|e| Failure::Fault(format!("Setup: {e}")))?;
            write_csv(create(&out)?, &rows).map_err(usage)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Fault(msg)) => {
            eprintln!("fault: {msg}");
            ExitCode::from(1)
        }
    }
}
