//! `msw`: compile, assemble, run and compare MSL programs on the multi-switch
//! machine.
//!
//! Exit status is 0 on success, 1 when compiling or running fails and 2 on
//! bad usage.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use multiswitch::apps::{db, net};
use multiswitch::isa::{assemble, disassemble};
use multiswitch::lang::{compile, parse, analyze_branching_with, CompileOptions, Mode, Policy, DEFAULT_FUSE_THRESHOLD};
use multiswitch::vm::{Machine, RunMetrics, RunOutcome, DEFAULT_MAX_CYCLES};
use multiswitch::{MachineShape, Program};

#[derive(Parser)]
#[command(name = "msw", version, about = "Multi-switch toolchain")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Compile MSL to an MSW1 binary.
    Compile {
        input: PathBuf,
        /// Output path (defaults to the input with a .msw extension).
        #[arg(short, long)]
        output: Option<PathBuf>,
        #[command(flatten)]
        build: BuildArgs,
        /// Print the allocation report.
        #[arg(short, long)]
        verbose: bool,
    },
    /// Assemble text to an MSW1 binary.
    Asm {
        input: PathBuf,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Print an MSW1 binary as assembly.
    Disasm { input: PathBuf },
    /// Run a program (.msl source, .s/.asm text or MSW1 binary).
    Run {
        input: PathBuf,
        #[command(flatten)]
        build: BuildArgs,
        #[arg(long, default_value_t = DEFAULT_MAX_CYCLES)]
        max_cycles: u64,
        /// Write a `cycle,thread,pc,opcode` trace here.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Write metrics here (JSON for a .json path, key=value otherwise).
        #[arg(long)]
        metrics: Option<PathBuf>,
        /// Print output in parallel-phase order rather than execution order.
        #[arg(long)]
        canonical: bool,
    },
    /// Branching statistics and the allocation of an MSL program.
    Stats {
        input: PathBuf,
        #[command(flatten)]
        build: BuildArgs,
    },
    /// Compile under every lowering mode, run each and tabulate metrics.
    CompareModes {
        input: PathBuf,
        #[arg(long, value_parser = parse_shape, default_value = "default")]
        shape: MachineShape,
        #[arg(long, value_parser = parse_policy, default_value = "page")]
        policy: Policy,
        #[arg(long, default_value_t = DEFAULT_MAX_CYCLES)]
        max_cycles: u64,
        /// Also write the table as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Run a switch network for one epoch per stimulus.
    DemoNet {
        spec: PathBuf,
        /// Comma-separated input nodes; repeat for more epochs. Defaults to all inputs.
        #[arg(long)]
        stimulus: Vec<String>,
        #[arg(long, value_parser = parse_shape, default_value = "default")]
        shape: MachineShape,
    },
    /// Load records through parallel index updates, then search.
    DemoDb {
        /// JSON-lines records.
        records: PathBuf,
        /// Comma-separated indexed fields.
        #[arg(long, required = true)]
        index: String,
        /// Composite key as field=value pairs, comma-separated.
        #[arg(long)]
        key: Option<String>,
        #[arg(long, value_parser = parse_shape, default_value = "default")]
        shape: MachineShape,
    },
}

#[derive(Args, Clone)]
struct BuildArgs {
    #[arg(long, value_parser = parse_mode, default_value = "mswitch")]
    mode: Mode,
    /// Most permissive allocation policy: best-fit, gang or page.
    #[arg(long, value_parser = parse_policy, default_value = "page")]
    policy: Policy,
    /// Shape file, inline `switches=.. sizes=.. procs=..`, or `default`.
    #[arg(long, value_parser = parse_shape, default_value = "default")]
    shape: MachineShape,
    #[arg(long, default_value_t = DEFAULT_FUSE_THRESHOLD)]
    fuse_threshold: usize,
    /// Fail instead of falling back to sequential code when switches run out.
    #[arg(long)]
    no_fallback: bool,
}

impl BuildArgs {
    fn options(&self) -> CompileOptions {
        CompileOptions {
            mode: self.mode,
            policy: self.policy,
            shape: self.shape.clone(),
            fuse_threshold: self.fuse_threshold,
            fallback: !self.no_fallback,
        }
    }
}

fn parse_mode(s: &str) -> Result<Mode, String> {
    s.parse()
}

fn parse_policy(s: &str) -> Result<Policy, String> {
    s.parse()
}

fn parse_shape(s: &str) -> Result<MachineShape, String> {
    let path = Path::new(s);
    let text = if s != "default" && path.is_file() {
        fs::read_to_string(path).map_err(|e| format!("{s}: {e}"))?
    } else {
        s.to_string()
    };
    let joined: String = text.lines().map(|l| l.split('#').next().unwrap_or("")).collect::<Vec<_>>().join(" ");
    joined.parse().map_err(|e: multiswitch::shape::ShapeError| e.to_string())
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn ext(path: &Path) -> String {
    path.extension().map(|e| e.to_string_lossy().to_ascii_lowercase()).unwrap_or_default()
}

fn load_program(path: &Path, build: &BuildArgs) -> Result<Program> {
    match ext(path).as_str() {
        "msl" => {
            let c = compile(&read(path)?, &build.options()).with_context(|| path.display().to_string())?;
            if let Some(fb) = &c.report.fallback {
                eprintln!("note: {fb}");
            }
            Ok(c.program)
        }
        "s" | "asm" => Ok(assemble(&read(path)?).with_context(|| path.display().to_string())?),
        _ => {
            let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
            Ok(Program::from_bytes(&bytes).with_context(|| path.display().to_string())?)
        }
    }
}

fn write_metrics(path: &Path, m: &RunMetrics) -> Result<()> {
    let text = if ext(path) == "json" { m.to_json() } else { m.to_key_values() };
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn max_fan_out(m: &RunMetrics) -> usize {
    m.spawns.iter().filter(|s| !s.bypass).map(|s| s.threads.len()).max().unwrap_or(0)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn dispatch(cmd: Cmd) -> Result<()> {
    match cmd {
        Cmd::Compile { input, output, build, verbose } => {
            let c = compile(&read(&input)?, &build.options()).with_context(|| input.display().to_string())?;
            let out = output.unwrap_or_else(|| input.with_extension("msw"));
            fs::write(&out, c.program.to_bytes()?).with_context(|| format!("writing {}", out.display()))?;
            if verbose {
                print!("{}", c.report);
            } else if let Some(fb) = &c.report.fallback {
                eprintln!("note: {fb}");
            }
            println!("wrote {} ({} instructions)", out.display(), c.program.len());
        }
        Cmd::Asm { input, output } => {
            let p = assemble(&read(&input)?).with_context(|| input.display().to_string())?;
            let out = output.unwrap_or_else(|| input.with_extension("msw"));
            fs::write(&out, p.to_bytes()?).with_context(|| format!("writing {}", out.display()))?;
            println!("wrote {} ({} instructions)", out.display(), p.len());
        }
        Cmd::Disasm { input } => {
            let bytes = fs::read(&input).with_context(|| format!("reading {}", input.display()))?;
            print!("{}", disassemble(&Program::from_bytes(&bytes)?));
        }
        Cmd::Run { input, build, max_cycles, trace, metrics, canonical } => {
            let program = load_program(&input, &build)?;
            let mut m = Machine::load(program, &build.shape)?;
            m.set_trace(trace.is_some());
            let r = m.run_with_limit(max_cycles)?;
            let values = if canonical { r.canonical_output() } else { r.values() };
            for v in values {
                println!("{v}");
            }
            if let Some(path) = trace {
                fs::write(&path, r.machine.trace_text()).with_context(|| format!("writing {}", path.display()))?;
            }
            if let Some(path) = metrics {
                write_metrics(&path, &r.metrics)?;
            }
            if let RunOutcome::Stalled { waiting } = &r.outcome {
                bail!("stalled: switches {waiting:?} still wait for inputs");
            }
        }
        Cmd::Stats { input, build } => {
            let src = read(&input)?;
            let ast = parse(&src).with_context(|| input.display().to_string())?;
            print!("{}", analyze_branching_with(&ast, build.fuse_threshold));
            let c = compile(&src, &build.options()).with_context(|| input.display().to_string())?;
            let r = c.report;
            println!("mode={}", r.mode);
            if let Some(fb) = &r.fallback {
                println!("fallback={fb}");
            }
            if let Some(t) = &r.allocation {
                print!("{t}");
            }
        }
        Cmd::CompareModes { input, shape, policy, max_cycles, json } => {
            let src = read(&input)?;
            let rows = compare_modes(&src, &shape, policy, max_cycles)?;
            print_table(&rows);
            if let Some(path) = json {
                let v: Vec<_> = rows.iter().map(|r| r.to_json()).collect();
                fs::write(&path, serde_json::to_string_pretty(&v)?)?;
            }
            if rows.iter().any(|r| r.output != rows[0].output) {
                bail!("modes disagree on output");
            }
        }
        Cmd::DemoNet { spec, stimulus, shape } => {
            let spec = net::NetSpec::parse(&read(&spec)?)?;
            let compiled = net::compile_net(&spec, &shape)?;
            let epochs: Vec<BTreeSet<String>> = if stimulus.is_empty() {
                vec![spec.inputs.iter().cloned().collect()]
            } else {
                stimulus
                    .iter()
                    .map(|s| s.split(',').map(str::trim).filter(|s| !s.is_empty()).map(String::from).collect())
                    .collect()
            };
            for (i, s) in epochs.iter().enumerate() {
                let e = compiled.run(s)?;
                let oracle = net::evaluate(&spec, s);
                let outs: Vec<&String> = spec.outputs.iter().filter(|o| e.fired.contains(*o)).collect();
                println!("epoch {i}: stimulus {:?}", s.iter().collect::<Vec<_>>());
                println!("  fired {}", e.order.join(" "));
                println!("  outputs fired {outs:?}");
                println!("  cycles {} oracle {}", e.metrics.cycles, if oracle == e.fired { "agrees" } else { "DISAGREES" });
                if oracle != e.fired {
                    bail!("machine and oracle disagree");
                }
            }
        }
        Cmd::DemoDb { records, index, key, shape } => {
            let fields: Vec<String> = index.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect();
            let mut state = db::DbState::new(fields.clone());
            let mut phases = 0;
            for (id, rec) in db::parse_jsonl(&read(&records)?)? {
                let (next, m) = db::db_update(&state, db::Op::Insert, id, &rec, &shape)?;
                phases += usize::from(max_fan_out(&m) == fields.len());
                state = next;
            }
            state.check_invariants().map_err(|e| anyhow!(e))?;
            println!("loaded {} records, {} indexes; {phases} inserts updated every index in one phase", state.records.len(), fields.len());
            if let Some(k) = key {
                let mut key = BTreeMap::new();
                for pair in k.split(',') {
                    let (f, v) = pair.split_once('=').ok_or_else(|| anyhow!("key item `{pair}` is not field=value"))?;
                    key.insert(f.trim().to_string(), v.trim().parse::<i64>().with_context(|| format!("value of {f}"))?);
                }
                let r = db::db_search_composite(&state, &key, &shape)?;
                let ids: Vec<String> = r.ids.iter().map(|i| i.to_string()).collect();
                println!("matches: {}", if ids.is_empty() { "none".into() } else { ids.join(" ") });
                println!("candidates={} comparisons={} cycles={}", r.candidates, r.metrics.comparisons, r.metrics.cycles);
            }
        }
    }
    Ok(())
}

struct Row {
    mode: Mode,
    ran_as: Mode,
    metrics: RunMetrics,
    output: Vec<String>,
}

impl Row {
    fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "mode": self.mode.to_string(),
            "compiled_as": self.ran_as.to_string(),
            "instructions": self.metrics.instructions,
            "comparisons": self.metrics.comparisons,
            "comparison_cycles": self.metrics.comparison_cycles,
            "cycles": self.metrics.cycles,
            "polls": self.metrics.polls,
            "parallel_phases": self.metrics.parallel_phases,
            "max_fan_out": max_fan_out(&self.metrics),
        })
    }
}

fn compare_modes(src: &str, shape: &MachineShape, policy: Policy, max_cycles: u64) -> Result<Vec<Row>> {
    // each mode gets its own machine; they share nothing
    std::thread::scope(|scope| {
        let handles: Vec<_> = Mode::ALL
            .iter()
            .map(|&mode| {
                scope.spawn(move || -> Result<Row> {
                    let opts = CompileOptions::new(mode, shape.clone()).policy(policy);
                    let c = compile(src, &opts).with_context(|| format!("compiling as {mode}"))?;
                    let r = Machine::load(c.program, shape)?.run_with_limit(max_cycles).with_context(|| format!("running as {mode}"))?;
                    let output = r.canonical_output().iter().map(|v| v.to_string()).collect();
                    Ok(Row { mode, ran_as: c.report.mode, metrics: r.metrics, output })
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("mode thread panicked")).collect()
    })
}

fn print_table(rows: &[Row]) {
    let header = ["mode", "comparisons", "comparison_cycles", "cycles", "polls", "parallel_phases", "max_fan_out", "instructions"];
    let cells: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            let m = &r.metrics;
            let name = if r.mode == r.ran_as { r.mode.to_string() } else { format!("{} (as {})", r.mode, r.ran_as) };
            vec![
                name,
                m.comparisons.to_string(),
                m.comparison_cycles.to_string(),
                m.cycles.to_string(),
                m.polls.to_string(),
                m.parallel_phases.to_string(),
                max_fan_out(m).to_string(),
                m.instructions.to_string(),
            ]
        })
        .collect();
    let widths: Vec<usize> =
        (0..header.len()).map(|i| cells.iter().map(|c| c[i].len()).chain([header[i].len()]).max().unwrap_or(0)).collect();
    let line = |row: Vec<&str>| {
        let parts: Vec<String> = row.iter().zip(&widths).map(|(c, w)| format!("{c:>w$}")).collect();
        println!("{}", parts.join("  ").trim_end());
    };
    line(header.to_vec());
    for c in &cells {
        line(c.iter().map(String::as_str).collect());
    }
    let same = rows.iter().all(|r| r.output == rows[0].output);
    println!("outputs {}", if same { "agree" } else { "differ" });
}
