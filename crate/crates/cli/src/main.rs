//! `mvdbg`: run, debug, analyze and benchmark WebAssembly-text programs.

mod opts;
mod web;

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::net::{TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use mvdbg::bench;
use mvdbg::client::tree::{MultiverseTree, TreeJson};
use mvdbg::concolic::{analyze, StopReason};
use mvdbg::script::{self, RunOptions, Script};
use mvdbg::server::DebugServer;
use mvdbg::session::{serve_stream, RemoteSession, Session};
use mvdbg::wasm::{ProgramState, Status};

use opts::{AnalysisArgs, EnvArgs, ProgramArgs};

const EXIT_ASSERTION: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_SOLVER: u8 = 3;

#[derive(Parser)]
#[command(name = "mvdbg", version, about = "Concolic multiverse debugger for WebAssembly-text programs")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Execute a program plainly and print every primitive call
    Run {
        #[command(flatten)]
        program: ProgramArgs,
        #[command(flatten)]
        env: EnvArgs,
        /// Stop after this many instructions
        #[arg(long)]
        max_steps: Option<u64>,
    },
    /// Host a debugging session: scripted, served over TCP/HTTP, or against a remote server
    Debug(DebugArgs),
    /// Explore a program's paths from its start state
    Analyze {
        #[command(flatten)]
        program: ProgramArgs,
        #[command(flatten)]
        analysis: AnalysisArgs,
        /// Write the tree here (format from --format or the extension)
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum)]
        format: Option<Format>,
    },
    /// Time plain execution against trace mode and snapshot-per-primitive mode
    Bench {
        /// Program to time (default: the I/O-heavy fixture)
        #[arg(default_value = "fixture:io_heavy_bench")]
        program: String,
        #[arg(long, default_value_t = 50_000)]
        instructions: u64,
        #[arg(long, default_value_t = 3)]
        repeats: u32,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Also write the CSV here
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Recompute path and option counts from an exported JSON tree
    TreeSummary { tree: PathBuf },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Format {
    Json,
    Dot,
}

#[derive(clap::Args)]
#[command(group = clap::ArgGroup::new("mode").required(true).args(["script", "listen"]))]
struct DebugArgs {
    #[command(flatten)]
    program: ProgramArgs,
    #[command(flatten)]
    env: EnvArgs,
    #[command(flatten)]
    analysis: AnalysisArgs,
    /// Run a session script and check its expectations
    #[arg(long)]
    script: Option<PathBuf>,
    /// Serve instead: tcp:PORT speaks the wire protocol, http:PORT the browser frontend
    #[arg(long, value_name = "tcp:PORT|http:PORT")]
    listen: Option<String>,
    /// Run the script against a server at HOST:PORT instead of in-process
    #[arg(long, requires = "script", value_name = "HOST:PORT")]
    connect: Option<String>,
    /// Instructions (or milliseconds with --connect) a `play` may run before pausing
    #[arg(long)]
    play_budget: Option<u64>,
    /// Copy every server-emitted message to this file, one JSON object per line
    #[arg(long)]
    trace_log: Option<PathBuf>,
    /// Push in-process messages through their JSON encoding
    #[arg(long)]
    json_wire: bool,
    /// Serve a single connection, then exit
    #[arg(long)]
    once: bool,
    /// Directory of frontend assets for http:PORT (default: built-in page)
    #[arg(long)]
    static_dir: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { 0 });
        }
    };
    match dispatch(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_USAGE)
        }
    }
}

fn dispatch(cmd: Cmd) -> Result<u8> {
    match cmd {
        Cmd::Run { program, env, max_steps } => run(&program, &env, max_steps),
        Cmd::Debug(args) => debug(args),
        Cmd::Analyze { program, analysis, out, format } => cmd_analyze(&program, &analysis, out.as_deref(), format),
        Cmd::Bench { program, instructions, repeats, seed, out } => {
            let p = ProgramArgs { program, domains: Vec::new() }.load()?;
            let report = bench::run(&p.module, instructions, repeats, seed)?;
            let csv = report.to_csv();
            print!("{csv}");
            if let Some(path) = out {
                std::fs::write(&path, &csv).with_context(|| format!("writing {}", path.display()))?;
            }
            Ok(0)
        }
        Cmd::TreeSummary { tree } => {
            let text = std::fs::read_to_string(&tree).with_context(|| format!("reading {}", tree.display()))?;
            let json: TreeJson = serde_json::from_str(&text).context("not a tree export")?;
            let (t, _) = MultiverseTree::from_json(&json).map_err(|e| anyhow!("{e}"))?;
            println!("paths={} maxOpts={} nodes={}", t.leaf_count(), t.max_options(), t.len());
            Ok(0)
        }
    }
}

fn run(program: &ProgramArgs, env: &EnvArgs, max_steps: Option<u64>) -> Result<u8> {
    let p = program.load()?;
    let mut k = ProgramState::instantiate(p.module)?;
    let mut env = env.environment();
    let mut out = BufWriter::new(io::stdout().lock());
    let mut printed = 0;
    let mut steps = 0u64;
    let mut failure = None;
    while k.is_running() && max_steps.is_none_or(|m| steps < m) {
        if let Err(e) = k.step(&mut env) {
            failure = Some(e);
            break;
        }
        steps += 1;
        for effect in &env.effects[printed..] {
            writeln!(out, "{effect}")?;
        }
        printed = env.effects.len();
    }
    match (failure, k.status()) {
        (Some(e), _) => {
            writeln!(out, "environment failure after {steps} instructions: {e}")?;
            out.flush()?;
            return Ok(EXIT_ASSERTION);
        }
        (None, Status::Trapped(why)) => writeln!(out, "trapped ({why}) after {steps} instructions")?,
        (None, Status::Running) => writeln!(out, "stopped after {steps} instructions (--max-steps)")?,
        (None, _) => writeln!(out, "terminated after {steps} instructions")?,
    }
    out.flush()?;
    Ok(0)
}

fn cmd_analyze(program: &ProgramArgs, args: &AnalysisArgs, out: Option<&Path>, format: Option<Format>) -> Result<u8> {
    let p = program.load()?;
    let bounds = args.bounds(p.default_bounds);
    let mut solver = args.solver().make();
    let (analysis, summary) = analyze(&p.module, &bounds, solver.as_mut())?;
    println!("{summary}");
    if let Some(path) = out {
        let format = format.unwrap_or(if path.extension().is_some_and(|e| e == "dot") { Format::Dot } else { Format::Json });
        let text = match format {
            Format::Json => serde_json::to_string_pretty(&analysis.tree.to_json(analysis.tree.root()))?,
            Format::Dot => analysis.tree.to_dot(analysis.tree.root()),
        };
        std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    }
    match analysis.stop {
        StopReason::Exhausted => Ok(0),
        StopReason::IterationLimit => {
            eprintln!("note: stopped after {} iterations; raise --max-iter for the full tree", analysis.runs.len());
            Ok(0)
        }
        StopReason::SolverUnknown(why) => {
            eprintln!("solver failure: {why}");
            eprintln!("hint: check --solver-cmd (e.g. \"z3 -in\" on PATH), raise --solver-timeout-ms, or narrow inputs with --domain");
            Ok(EXIT_SOLVER)
        }
    }
}

fn debug(args: DebugArgs) -> Result<u8> {
    let p = args.program.load()?;
    if let Some(spec) = &args.listen {
        let (kind, port) = spec.split_once(':').ok_or_else(|| anyhow!("--listen expects tcp:PORT or http:PORT"))?;
        let port: u16 = port.parse().with_context(|| format!("bad port in `{spec}`"))?;
        let listener = TcpListener::bind(("127.0.0.1", port))?;
        let addr = listener.local_addr()?;
        return match kind {
            "tcp" => {
                println!("listening on tcp://{addr}");
                io::stdout().flush()?;
                for stream in listener.incoming() {
                    let stream = stream?;
                    // every connection starts from a fresh program state
                    let mut server = DebugServer::new(p.module.clone(), args.env.environment())?;
                    if let Some(path) = &args.trace_log {
                        server.set_trace_log(Box::new(open_log(path)?));
                    }
                    if let Err(e) = serve_stream(&mut server, stream) {
                        log::warn!("connection ended: {e}");
                    }
                    if args.once {
                        break;
                    }
                }
                Ok(0)
            }
            "http" => {
                let mut session = Session::new(p.module.clone(), args.env.environment())?;
                configure(&mut session.client, &args, &p);
                session.json_wire = args.json_wire;
                if let Some(path) = &args.trace_log {
                    session.server.set_trace_log(Box::new(open_log(path)?));
                }
                println!("listening on http://{addr}");
                io::stdout().flush()?;
                web::serve(listener, session, args.static_dir.clone(), args.once)?;
                Ok(0)
            }
            other => bail!("--listen: unknown scheme `{other}` (tcp, http)"),
        };
    }
    let path = args.script.as_ref().expect("clap requires --script or --listen");
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let script = Script::parse(&text, &p.module).map_err(|e| anyhow!("{}: {e}", path.display()))?;
    let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let report = match &args.connect {
        Some(addr) => {
            let stream = TcpStream::connect(addr).with_context(|| format!("connecting to {addr}"))?;
            let mut remote = RemoteSession::connect(p.module.clone(), stream)?;
            configure(&mut remote.client, &args, &p);
            let opts = RunOptions { play_budget: args.play_budget.unwrap_or(1_000), base_dir };
            script::run(&mut remote, &script, &opts)
        }
        None => {
            let mut session = Session::new(p.module.clone(), args.env.environment())?;
            configure(&mut session.client, &args, &p);
            session.json_wire = args.json_wire;
            if let Some(path) = &args.trace_log {
                session.server.set_trace_log(Box::new(open_log(path)?));
            }
            let opts = RunOptions { play_budget: args.play_budget.unwrap_or(RunOptions::default().play_budget), base_dir };
            script::run(&mut session, &script, &opts)
        }
    };
    for line in &report.log {
        println!("{line}");
    }
    match &report.failure {
        None => {
            println!("ok: {} commands", script.commands.len());
            Ok(0)
        }
        Some(f) => {
            eprintln!("FAILED {f}");
            Ok(f.exit_code() as u8)
        }
    }
}

fn configure(client: &mut mvdbg::client::DebugClient, args: &DebugArgs, p: &opts::Program) {
    client.solver = args.analysis.solver();
    client.bounds = args.analysis.bounds(p.default_bounds);
}

fn open_log(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}
