//! Python bindings: analysis, plain runs, session scripts and the benchmark.
//!
//! A `program` argument is either `fixture:NAME` or WebAssembly-text source.

use std::collections::HashMap;
use std::sync::Arc;
use std::time::Duration;

use mvdbg::concolic::{analyze as explore, Bounds, SolverConfig, StopReason};
use mvdbg::fixtures;
use mvdbg::script::{self, RunOptions, Script};
use mvdbg::session::Session;
use mvdbg::wasm::{parse_module, EnvMode, Environment, Module, ProgramState, Status};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn load(program: &str, domains: &HashMap<String, (i32, i32)>) -> Result<(Arc<Module>, Bounds), String> {
    let (text, bounds) = match program.strip_prefix("fixture:") {
        Some(name) => {
            let f = fixtures::get(name).ok_or_else(|| format!("no fixture `{name}`"))?;
            (f.source, f.bounds())
        }
        None => (program, Bounds::default()),
    };
    let mut module = parse_module(text).map_err(|e| e.to_string())?;
    for (prim, &(lo, hi)) in domains {
        if lo > hi || !module.prims.override_codomain(prim, lo, hi) {
            return Err(format!("bad domain for `{prim}`: [{lo}, {hi}]"));
        }
    }
    Ok((Arc::new(module), bounds))
}

fn environment(env: &str) -> Result<Environment, String> {
    Ok(Environment::new(env.parse::<EnvMode>()?))
}

#[derive(Debug, PartialEq)]
pub struct AnalysisResult {
    pub paths: usize,
    pub max_options: usize,
    pub time_ms: u128,
    pub complete: bool,
    pub tree_json: String,
}

#[derive(Default)]
pub struct AnalysisOptions {
    pub domains: HashMap<String, (i32, i32)>,
    pub max_loops: Option<u32>,
    pub max_iter: Option<u32>,
    pub solver_cmd: Option<String>,
}

pub fn analyze_program(program: &str, opts: &AnalysisOptions) -> Result<AnalysisResult, String> {
    let (module, mut bounds) = load(program, &opts.domains)?;
    bounds.max_loops = opts.max_loops.or(bounds.max_loops);
    bounds.max_iterations = opts.max_iter.unwrap_or(bounds.max_iterations);
    let config = match &opts.solver_cmd {
        Some(cmd) => SolverConfig::External { cmd: cmd.clone(), timeout: Duration::from_secs(10) },
        None => SolverConfig::Builtin,
    };
    let (analysis, summary) = explore(&module, &bounds, config.make().as_mut()).map_err(|e| e.to_string())?;
    if let StopReason::SolverUnknown(why) = &analysis.stop {
        return Err(format!("solver failure: {why}"));
    }
    let tree_json = serde_json::to_string(&analysis.tree.to_json(analysis.tree.root())).map_err(|e| e.to_string())?;
    Ok(AnalysisResult {
        paths: summary.paths,
        max_options: summary.max_options,
        time_ms: summary.time.as_millis(),
        complete: analysis.stop == StopReason::Exhausted,
        tree_json,
    })
}

/// Effects in order, then how execution ended.
pub fn run_program(program: &str, env: &str, max_steps: Option<u64>) -> Result<(Vec<String>, String), String> {
    let (module, _) = load(program, &HashMap::new())?;
    let mut k = ProgramState::instantiate(module).map_err(|e| e.to_string())?;
    let mut env = environment(env)?;
    let mut steps = 0;
    while k.is_running() && max_steps.is_none_or(|m| steps < m) {
        k.step(&mut env).map_err(|e| e.to_string())?;
        steps += 1;
    }
    let status = match k.status() {
        Status::Running => "running".to_string(),
        Status::Finished => "finished".to_string(),
        Status::Trapped(why) => format!("trapped: {why}"),
    };
    Ok((env.effects.iter().map(ToString::to_string).collect(), status))
}

pub fn run_session_script(program: &str, text: &str, env: &str) -> Result<(Vec<String>, Option<String>), String> {
    let (module, bounds) = load(program, &HashMap::new())?;
    let script = Script::parse(text, &module).map_err(|e| e.to_string())?;
    let mut session = Session::new(module, environment(env)?).map_err(|e| e.to_string())?;
    session.client.bounds = bounds;
    let report = script::run(&mut session, &script, &RunOptions::default());
    Ok((report.log, report.failure.map(|f| f.to_string())))
}

/// Names of the bundled example programs.
#[pyfunction(name = "fixtures")]
fn fixtures_list() -> Vec<&'static str> {
    fixtures::ALL.iter().map(|f| f.name).collect()
}

/// Explores every input-dependent path; returns a dict with `paths`,
/// `max_options`, `time_ms`, `complete` and `tree` (JSON text).
#[pyfunction]
#[pyo3(signature = (program, domains=None, max_loops=None, max_iter=None, solver_cmd=None))]
fn analyze(
    py: Python<'_>,
    program: &str,
    domains: Option<HashMap<String, (i32, i32)>>,
    max_loops: Option<u32>,
    max_iter: Option<u32>,
    solver_cmd: Option<String>,
) -> PyResult<Py<PyAny>> {
    let opts = AnalysisOptions { domains: domains.unwrap_or_default(), max_loops, max_iter, solver_cmd };
    let r = py.detach(|| analyze_program(program, &opts)).map_err(PyRuntimeError::new_err)?;
    let d = pyo3::types::PyDict::new(py);
    d.set_item("paths", r.paths)?;
    d.set_item("max_options", r.max_options)?;
    d.set_item("time_ms", r.time_ms)?;
    d.set_item("complete", r.complete)?;
    d.set_item("tree", r.tree_json)?;
    Ok(d.into_any().unbind())
}

/// Plain execution; returns `(effects, status)`.
#[pyfunction]
#[pyo3(signature = (program, env="seeded:0", max_steps=None))]
fn run(py: Python<'_>, program: &str, env: &str, max_steps: Option<u64>) -> PyResult<(Vec<String>, String)> {
    py.detach(|| run_program(program, env, max_steps)).map_err(PyValueError::new_err)
}

/// Runs a session script in-process; returns `(log, failure or None)`.
#[pyfunction]
#[pyo3(signature = (program, script, env="seeded:0"))]
fn run_script(py: Python<'_>, program: &str, script: &str, env: &str) -> PyResult<(Vec<String>, Option<String>)> {
    py.detach(|| run_session_script(program, script, env)).map_err(PyValueError::new_err)
}

/// Times plain, trace and snapshot modes; returns the CSV text.
#[pyfunction(name = "bench")]
#[pyo3(signature = (program="fixture:io_heavy_bench", instructions=50_000, repeats=3, seed=0))]
fn time_modes(py: Python<'_>, program: &str, instructions: u64, repeats: u32, seed: u64) -> PyResult<String> {
    py.detach(|| {
        let (module, _) = load(program, &HashMap::new())?;
        mvdbg::bench::run(&module, instructions, repeats, seed).map(|r| r.to_csv()).map_err(|e| e.to_string())
    })
    .map_err(PyRuntimeError::new_err)
}

#[pymodule]
fn mvdbg_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(fixtures_list, m)?)?;
    m.add_function(wrap_pyfunction!(analyze, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(run_script, m)?)?;
    m.add_function(wrap_pyfunction!(time_modes, m)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn analysis_counts_paths() {
        let r = analyze_program("fixture:app_b", &AnalysisOptions::default()).unwrap();
        assert_eq!((r.paths, r.max_options, r.complete), (2, 2, true));
        let opts = AnalysisOptions {
            domains: HashMap::from([("chip_analog_read".to_string(), (0, 7))]),
            ..AnalysisOptions::default()
        };
        assert_eq!(analyze_program("fixture:loop_if", &opts).unwrap().paths, 8);
        assert!(analyze_program("fixture:loop_if", &AnalysisOptions {
            domains: HashMap::from([("nope".to_string(), (0, 1))]),
            ..AnalysisOptions::default()
        })
        .is_err());
    }

    #[test]
    fn plain_run_reports_effects() {
        let (effects, status) = run_program("fixture:knock", "constant:0", Some(40)).unwrap();
        assert_eq!(status, "running");
        assert!(effects[0].ends_with("chip_digital_write(13, 0)"));
        let src = "(module (func (export \"main\") (drop (i32.div_s (i32.const 1) (i32.const 0)))))";
        assert!(run_program(src, "seeded:1", None).unwrap().1.starts_with("trapped"));
        assert!(run_program(src, "whatever", None).is_err());
    }

    #[test]
    fn scripts_report_failures() {
        let (_, failure) = run_session_script("fixture:app_b", "break+ main:1\nplay\nsuggest\nexpect-path-count 2\n", "seeded:0").unwrap();
        assert_eq!(failure, None);
        let (_, failure) = run_session_script("fixture:app_b", "slide 999\n", "seeded:0").unwrap();
        assert!(failure.unwrap().contains("unknown node 999"));
    }
}
