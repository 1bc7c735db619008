//! Line-oriented debugging scripts for headless sessions.
//!
//! ```text
//! # comments and blank lines are ignored
//! break+ main:4
//! play
//! suggest 32 4 5000
//! expect-path-count 2
//! slide 7
//! expect-current-classify InputPrim
//! export out/tree.json
//! ```

use std::fmt;
use std::path::{Path, PathBuf};

use crate::client::tree::NodeId;
use crate::client::{FrontendRequest, SuggestBounds};
use crate::concolic::StopReason;
use crate::session::{Driver, Settled};
use crate::wasm::{InstrId, Module};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExportFormat {
    Json,
    Dot,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Command {
    Step(u32),
    Play,
    Pause,
    BreakAdd(InstrId),
    BreakRem(InstrId),
    Mock(i32),
    Suggest(SuggestBounds),
    Slide(NodeId),
    Reset,
    Export(PathBuf, ExportFormat),
    ExpectNodeCount(usize),
    ExpectPathCount(usize),
    ExpectCurrentClassify(String),
}

const KINDS: &[&str] = &["NonPrim", "InputPrim", "OutputPrim", "Terminated"];

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
#[error("script line {line}: {msg}")]
pub struct ScriptParseError {
    pub line: usize,
    pub msg: String,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Script {
    /// Commands with their 1-based line numbers.
    pub commands: Vec<(usize, Command)>,
}

impl Script {
    /// Breakpoint locations are resolved against `module`.
    pub fn parse(text: &str, module: &Module) -> Result<Script, ScriptParseError> {
        let mut commands = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let err = |msg: String| ScriptParseError { line, msg };
            let mut words = content.split_whitespace();
            let verb = words.next().unwrap_or_default();
            let args: Vec<&str> = words.collect();
            let arity = |lo: usize, hi: usize| {
                if args.len() < lo || args.len() > hi {
                    Err(err(format!("`{verb}` takes {lo}..={hi} arguments, got {}", args.len())))
                } else {
                    Ok(())
                }
            };
            fn num<T: std::str::FromStr>(s: &str, line: usize) -> Result<T, ScriptParseError> {
                s.parse().map_err(|_| ScriptParseError { line, msg: format!("bad number `{s}`") })
            }
            let site = |s: &str| {
                module.parse_instr_id(s).ok_or_else(|| err(format!("unknown instruction site `{s}`")))
            };
            let cmd = match verb {
                "step" => {
                    arity(0, 1)?;
                    let n = args.first().map(|s| num(s, line)).transpose()?.unwrap_or(1);
                    Command::Step(n)
                }
                "play" => {
                    arity(0, 0)?;
                    Command::Play
                }
                "pause" => {
                    arity(0, 0)?;
                    Command::Pause
                }
                "reset" => {
                    arity(0, 0)?;
                    Command::Reset
                }
                "break+" => {
                    arity(1, 1)?;
                    Command::BreakAdd(site(args[0])?)
                }
                "break-" => {
                    arity(1, 1)?;
                    Command::BreakRem(site(args[0])?)
                }
                "mock" => {
                    arity(1, 1)?;
                    Command::Mock(num(args[0], line)?)
                }
                "suggest" => {
                    arity(0, 3)?;
                    Command::Suggest(SuggestBounds {
                        max_iter: args.first().map(|s| num(s, line)).transpose()?,
                        max_syms: args.get(1).map(|s| num(s, line)).transpose()?,
                        max_instr: args.get(2).map(|s| num(s, line)).transpose()?,
                    })
                }
                "slide" => {
                    arity(1, 1)?;
                    Command::Slide(num(args[0], line)?)
                }
                "export" => {
                    arity(1, 2)?;
                    let path = PathBuf::from(args[0]);
                    let format = match args.get(1).copied() {
                        Some("json") => ExportFormat::Json,
                        Some("dot") => ExportFormat::Dot,
                        Some(other) => return Err(err(format!("unknown export format `{other}`"))),
                        None if path.extension().is_some_and(|e| e == "dot") => ExportFormat::Dot,
                        None => ExportFormat::Json,
                    };
                    Command::Export(path, format)
                }
                "expect-node-count" => {
                    arity(1, 1)?;
                    Command::ExpectNodeCount(num(args[0], line)?)
                }
                "expect-path-count" => {
                    arity(1, 1)?;
                    Command::ExpectPathCount(num(args[0], line)?)
                }
                "expect-current-classify" => {
                    arity(1, 1)?;
                    if !KINDS.contains(&args[0]) {
                        return Err(err(format!("unknown classification `{}`, expected one of {KINDS:?}", args[0])));
                    }
                    Command::ExpectCurrentClassify(args[0].to_string())
                }
                other => return Err(err(format!("unknown command `{other}`"))),
            };
            commands.push((line, cmd));
        }
        Ok(Script { commands })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Failure {
    /// An `expect-*` mismatch or an impossible request.
    Assertion { line: usize, message: String },
    Solver { line: usize, message: String },
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Assertion { .. } => 1,
            Failure::Solver { .. } => 3,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Assertion { line, message } => write!(f, "line {line}: {message}"),
            Failure::Solver { line, message } => write!(f, "line {line}: solver: {message}"),
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct ScriptReport {
    /// Progress and diagnostics, one entry per event.
    pub log: Vec<String>,
    pub failure: Option<Failure>,
}

impl ScriptReport {
    pub fn exit_code(&self) -> i32 {
        self.failure.as_ref().map_or(0, Failure::exit_code)
    }
}

#[derive(Clone, Debug)]
pub struct RunOptions {
    /// Passed to [`Driver::settle`] for `play`.
    pub play_budget: u64,
    /// Relative export paths are resolved against this directory.
    pub base_dir: PathBuf,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions { play_budget: 1_000_000, base_dir: PathBuf::from(".") }
    }
}

fn export(driver: &dyn Driver, path: &Path, format: ExportFormat) -> std::io::Result<()> {
    let client = driver.client();
    let text = match format {
        ExportFormat::Json => {
            serde_json::to_string_pretty(&client.tree.to_json(client.current())).map_err(std::io::Error::other)?
        }
        ExportFormat::Dot => client.tree.to_dot(client.current()),
    };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, text)
}

/// Executes `script` against `driver`, stopping at the first failure.
pub fn run(driver: &mut dyn Driver, script: &Script, opts: &RunOptions) -> ScriptReport {
    let mut report = ScriptReport::default();
    for (line, cmd) in &script.commands {
        let line = *line;
        let assertion = |message: String| Failure::Assertion { line, message };
        let mut budget = u64::MAX;
        match cmd {
            Command::Step(n) => {
                for _ in 0..*n {
                    driver.submit(FrontendRequest::Step);
                }
            }
            Command::Play => {
                driver.submit(FrontendRequest::Play);
                budget = opts.play_budget;
            }
            Command::Pause => driver.submit(FrontendRequest::Pause),
            Command::Reset => driver.submit(FrontendRequest::Reset),
            Command::BreakAdd(id) => driver.submit(FrontendRequest::BreakAdd { func: id.func, instr: id.instr }),
            Command::BreakRem(id) => driver.submit(FrontendRequest::BreakRem { func: id.func, instr: id.instr }),
            Command::Mock(value) => driver.submit(FrontendRequest::Mock { value: *value }),
            Command::Suggest(bounds) => {
                driver.client_mut().take_last_suggest();
                driver.submit(FrontendRequest::Suggest { bounds: *bounds });
            }
            Command::Slide(id) => {
                if driver.client().tree.node(*id).is_err() {
                    report.failure = Some(assertion(format!("slide: unknown node {id}")));
                    break;
                }
                driver.submit(FrontendRequest::Slide { node_id: *id });
            }
            Command::ExpectCurrentClassify(_) => driver.submit(FrontendRequest::Inspect),
            Command::Export(..) | Command::ExpectNodeCount(_) | Command::ExpectPathCount(_) => {}
        }
        match driver.settle(budget) {
            Ok(Settled::PausedByBudget) => report.log.push(format!("line {line}: paused after the step budget")),
            Ok(Settled::Idle) => {}
            Err(e) => {
                report.failure = Some(assertion(format!("session: {e}")));
                break;
            }
        }
        for d in driver.take_diagnostics() {
            report.log.push(format!("line {line}: {d}"));
        }
        let client = driver.client();
        let failure = match cmd {
            Command::ExpectNodeCount(n) if client.tree.len() != *n => {
                Some(assertion(format!("expect-node-count: expected {n}, got {}", client.tree.len())))
            }
            Command::ExpectPathCount(n) if client.tree.leaf_count() != *n => {
                Some(assertion(format!("expect-path-count: expected {n}, got {}", client.tree.leaf_count())))
            }
            Command::ExpectCurrentClassify(kind) => match client.last_classification() {
                Some(c) if c.kind() == kind => None,
                Some(c) => Some(assertion(format!("expect-current-classify: expected {kind}, got {}", c.kind()))),
                None => Some(assertion("expect-current-classify: no state was inspected".into())),
            },
            Command::Suggest(_) => match driver.client_mut().take_last_suggest() {
                Some(r) => match r.stop {
                    StopReason::SolverUnknown(why) => Some(Failure::Solver { line, message: why }),
                    stop => {
                        report.log.push(format!(
                            "line {line}: suggest paths={} maxOpts={} iterations={} stop={stop:?}",
                            r.paths, r.max_options, r.iterations
                        ));
                        None
                    }
                },
                None => Some(Failure::Solver { line, message: "no analysis result".into() }),
            },
            Command::Export(path, format) => {
                let full = opts.base_dir.join(path);
                match export(driver, &full, *format) {
                    Ok(()) => None,
                    Err(e) => Some(assertion(format!("export {}: {e}", full.display()))),
                }
            }
            _ => None,
        };
        if failure.is_some() {
            report.failure = failure;
            break;
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::session::Session;
    use crate::wasm::{parse_module, Environment};
    use std::sync::Arc;

    const APP: &str = r#"(module
      (import "env" "chip_analog_read" (func $read (param i32) (result i32)))
      (import "env" "chip_digital_write" (func $write (param i32 i32)))
      (func (export "main")
        (if (i32.lt_s (call $read (i32.const 12)) (i32.const 5))
          (then (call $write (i32.const 13) (i32.const 1))))))"#;

    fn module() -> Arc<Module> {
        Arc::new(parse_module(APP).unwrap())
    }

    fn run_text(text: &str) -> ScriptReport {
        let m = module();
        let script = Script::parse(text, &m).unwrap();
        let mut s = Session::new(m, Environment::constant(0)).unwrap();
        run(&mut s, &script, &RunOptions::default())
    }

    #[test]
    fn parses_every_command() {
        let m = module();
        let s = Script::parse(
            "step\nstep 3\nplay\npause\nbreak+ main:1\nbreak- main:1\nmock -4\nsuggest\nsuggest 1 2 3\n\
             slide 9\nreset\nexport a.dot\nexport b json\nexpect-node-count 3\nexpect-path-count 2\n\
             expect-current-classify Terminated # trailing comment\n",
            &m,
        )
        .unwrap();
        assert_eq!(s.commands.len(), 16);
        assert_eq!(s.commands[1], (2, Command::Step(3)));
        assert_eq!(s.commands[4].1, Command::BreakAdd(InstrId { func: 2, instr: 1 }));
        assert_eq!(
            s.commands[8].1,
            Command::Suggest(SuggestBounds { max_iter: Some(1), max_syms: Some(2), max_instr: Some(3) })
        );
        assert_eq!(s.commands[11].1, Command::Export("a.dot".into(), ExportFormat::Dot));
        assert_eq!(s.commands[12].1, Command::Export("b".into(), ExportFormat::Json));
    }

    #[test]
    fn parse_errors_carry_the_line() {
        let m = module();
        assert_eq!(Script::parse("step\njump", &m).unwrap_err().line, 2);
        assert!(Script::parse("mock x", &m).is_err());
        assert!(Script::parse("break+ nowhere:1", &m).is_err());
        assert!(Script::parse("expect-current-classify Maybe", &m).is_err());
        assert!(Script::parse("step 1 2", &m).is_err());
    }

    #[test]
    fn breakpoint_play_suggest() {
        let r = run_text("break+ main:1\nplay\nsuggest\nexpect-path-count 2\n");
        assert_eq!(r.failure, None, "{:?}", r.log);
        assert_eq!(r.exit_code(), 0);
    }

    #[test]
    fn step_mock_classify() {
        let r = run_text("step\nmock 224\nexpect-current-classify NonPrim\n");
        assert_eq!(r.failure, None, "{:?}", r.log);
    }

    #[test]
    fn mismatch_reports_diff() {
        let r = run_text("step\nexpect-node-count 5\n");
        let f = r.failure.unwrap();
        assert_eq!(f.exit_code(), 1);
        assert_eq!(f.to_string(), "line 2: expect-node-count: expected 5, got 2");
    }

    #[test]
    fn unknown_slide_target_fails() {
        let r = run_text("slide 999\n");
        assert!(r.failure.unwrap().to_string().contains("unknown node 999"));
    }

    #[test]
    fn missing_solver_exits_three() {
        let m = module();
        let script = Script::parse("step\nsuggest\n", &m).unwrap();
        let mut s = Session::new(m, Environment::constant(0)).unwrap();
        s.client.solver = crate::concolic::SolverConfig::External {
            cmd: "no-such-solver-binary".into(),
            timeout: std::time::Duration::from_secs(1),
        };
        assert_eq!(run(&mut s, &script, &RunOptions::default()).exit_code(), 3);
    }
}
