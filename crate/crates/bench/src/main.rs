use std::fs::File;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use stalloc::FreeListPolicy;
use stalloc_bench::replay::{class_table_json, compare, run, BackendKind, RunConfig, RunError};
use stalloc_bench::trace::{parse_trace, serialize_trace, TraceError, TraceEvent};
use stalloc_bench::workload::{generate_workload, WorkloadKind, WorkloadSpec};

const EXIT_FAILURE: u8 = 1;
const EXIT_CORRUPTION: u8 = 2;
const EXIT_PARSE: u8 = 3;

#[derive(Parser)]
#[command(name = "stalloc-bench", version, about = "Replay allocation traces against the stalloc heap")]
struct Cli {
    /// Print the size-class table as JSON and exit.
    #[arg(long)]
    dump_classes: bool,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand)]
enum Command {
    /// Replay one trace or workload and report.
    Run(RunArgs),
    /// Replay under several configs and report ratios against the first.
    Compare(CompareArgs),
    /// Print the size-class table as JSON.
    DumpClasses,
    /// Write a generated workload as a text trace.
    Gen {
        #[command(flatten)]
        source: SourceArgs,
        /// Output file; stdout if omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
#[group(required = true, multiple = false, id = "input")]
struct Input {
    /// Text trace: `a <slot> <size>`, `f <slot>`, `r <slot> <size>` per line.
    #[arg(long)]
    trace: Option<PathBuf>,
    #[arg(long, value_enum)]
    workload: Option<WorkloadKind>,
}

#[derive(Args)]
struct SourceArgs {
    #[command(flatten)]
    input: Input,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    objects: Option<usize>,
    #[arg(long)]
    rounds: Option<usize>,
    #[arg(long)]
    min_size: Option<usize>,
    #[arg(long)]
    max_size: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum PolicyArg {
    Single,
    Triple,
}

impl From<PolicyArg> for FreeListPolicy {
    fn from(p: PolicyArg) -> Self {
        match p {
            PolicyArg::Single => FreeListPolicy::Single,
            PolicyArg::Triple => FreeListPolicy::TripleEmulated,
        }
    }
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    source: SourceArgs,
    #[arg(long, value_enum, default_value = "single")]
    policy: PolicyArg,
    #[arg(long, value_enum, default_value = "real")]
    backend: BackendKind,
    /// Write the JSON report here (`-` for stdout).
    #[arg(long)]
    json: Option<PathBuf>,
    /// Run the verified pass with double-free and ownership checks.
    #[arg(long)]
    checked: bool,
    /// Skip the timed pass and latency probes.
    #[arg(long)]
    no_timing: bool,
    /// Corrupt one free-list link after this event index.
    #[arg(long, value_name = "EVENT")]
    inject_fault: Option<usize>,
}

#[derive(Args)]
struct CompareArgs {
    #[command(flatten)]
    source: SourceArgs,
    /// Config as `system` or `<single|triple>:<real|sim>`; repeat for each.
    /// Defaults to single:real, triple:real, system.
    #[arg(long = "config", value_parser = parse_config)]
    configs: Vec<RunConfig>,
    /// Runs per config; the median by throughput is kept.
    #[arg(long, default_value_t = 3)]
    repeat: usize,
    #[arg(long)]
    json: Option<PathBuf>,
}

fn parse_config(s: &str) -> Result<RunConfig, String> {
    if s == "system" {
        return Ok(RunConfig::system());
    }
    let (policy, backend) = s.split_once(':').unwrap_or((s, "real"));
    let policy = PolicyArg::from_str(policy, true)?;
    let backend = BackendKind::from_str(backend, true)?;
    Ok(RunConfig::stalloc(policy.into(), backend))
}

enum Failure {
    Run(RunError),
    Trace(TraceError),
    Other(String),
}

impl Failure {
    fn exit_code(&self) -> u8 {
        match self {
            Failure::Run(RunError::Corruption(_)) => EXIT_CORRUPTION,
            Failure::Trace(TraceError::Parse { .. } | TraceError::Semantics { .. }) => EXIT_PARSE,
            _ => EXIT_FAILURE,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Run(e) => e.fmt(f),
            Failure::Trace(e) => e.fmt(f),
            Failure::Other(m) => f.write_str(m),
        }
    }
}

impl From<RunError> for Failure {
    fn from(e: RunError) -> Self {
        Failure::Run(e)
    }
}

impl From<TraceError> for Failure {
    fn from(e: TraceError) -> Self {
        Failure::Trace(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Other(e.to_string())
    }
}

fn load(source: &SourceArgs) -> Result<(Vec<TraceEvent>, String), Failure> {
    if let Some(path) = &source.input.trace {
        let file = File::open(path).map_err(|e| Failure::Other(format!("{}: {e}", path.display())))?;
        return Ok((parse_trace(BufReader::new(file))?, path.display().to_string()));
    }
    let kind = source.input.workload.expect("clap enforces one input");
    let mut spec = WorkloadSpec::new(kind, source.seed);
    spec = spec.with_counts(source.objects.unwrap_or(spec.objects), source.rounds.unwrap_or(spec.rounds));
    spec = spec.with_sizes(source.min_size.unwrap_or(spec.min_size), source.max_size.unwrap_or(spec.max_size));
    if spec.objects == 0 || spec.min_size == 0 {
        return Err(Failure::Other("--objects and --min-size must be positive".into()));
    }
    Ok((generate_workload(&spec), spec.label()))
}

fn write_output(path: &Path, text: &str) -> Result<(), Failure> {
    if path.as_os_str() == "-" {
        println!("{text}");
        Ok(())
    } else {
        let mut f = File::create(path).map_err(|e| Failure::Other(format!("{}: {e}", path.display())))?;
        writeln!(f, "{text}")?;
        Ok(())
    }
}

fn execute(cli: Cli) -> Result<(), Failure> {
    if cli.dump_classes {
        println!("{}", class_table_json());
        return Ok(());
    }
    match cli.command {
        None => Err(Failure::Other("no command given; see --help".into())),
        Some(Command::DumpClasses) => {
            println!("{}", class_table_json());
            Ok(())
        }
        Some(Command::Gen { source, out }) => {
            let (events, _) = load(&source)?;
            let text = serialize_trace(&events);
            match out {
                Some(path) => std::fs::write(&path, text).map_err(|e| Failure::Other(format!("{}: {e}", path.display()))),
                None => {
                    print!("{text}");
                    Ok(())
                }
            }
        }
        Some(Command::Run(args)) => {
            let (events, label) = load(&args.source)?;
            let mut config = RunConfig::stalloc(args.policy.into(), args.backend)
                .with_checked(args.checked)
                .with_timing(!args.no_timing);
            config.inject_fault_after = args.inject_fault;
            let report = run(&events, &config, &label)?;
            let json = serde_json::to_string_pretty(&report).expect("report serializes");
            if args.json.as_deref() != Some(Path::new("-")) {
                print!("{}", report.to_text());
            }
            if let Some(path) = &args.json {
                write_output(path, &json)?;
            }
            Ok(())
        }
        Some(Command::Compare(args)) => {
            let (events, label) = load(&args.source)?;
            let configs = if args.configs.is_empty() {
                vec![
                    RunConfig::stalloc(FreeListPolicy::Single, BackendKind::Real),
                    RunConfig::stalloc(FreeListPolicy::TripleEmulated, BackendKind::Real),
                    RunConfig::system(),
                ]
            } else {
                args.configs
            };
            let cmp = compare(&events, &configs, &label, args.repeat)?;
            if args.json.as_deref() != Some(Path::new("-")) {
                print!("{}", cmp.to_text());
            }
            if let Some(path) = &args.json {
                write_output(path, &serde_json::to_string_pretty(&cmp).expect("comparison serializes"))?;
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("stalloc-bench: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
