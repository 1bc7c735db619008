//! Concolic exploration of input-dependent paths.

pub mod builder;
pub mod engine;
pub mod expr;
pub mod smtlib;
pub mod solver;

pub use builder::{concolic, equivalent, Analysis, AnalysisError, RunSummary, StopReason, TreeBuilder};
pub use engine::{expand, run_checked, run_iteration, Bound, Bounds, Choice, ConcolicError, ConcolicState, IterEnd, Iteration, SymEnv};
pub use expr::{Literal, PathCondition, SymExpr};
pub use smtlib::SmtSolver;
pub use solver::{BuiltinSolver, Query, SolveResult, Solver};

use std::fmt;
use std::sync::Arc;
use std::time::{Duration, Instant};

use crate::wasm::{Module, ProgramState};

/// Which backend answers path queries.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub enum SolverConfig {
    #[default]
    Builtin,
    /// External SMT-LIB2 process, e.g. `z3 -in`.
    External { cmd: String, timeout: Duration },
}

impl SolverConfig {
    pub fn make(&self) -> Box<dyn Solver> {
        match self {
            SolverConfig::Builtin => Box::new(BuiltinSolver::default()),
            SolverConfig::External { cmd, timeout } => match SmtSolver::new(cmd, *timeout) {
                Some(s) => Box::new(s),
                None => Box::new(BuiltinSolver::default()),
            },
        }
    }
}

/// Headline numbers of one analysis.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Summary {
    pub paths: usize,
    pub max_options: usize,
    pub time: Duration,
}

impl fmt::Display for Summary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "paths={} maxOpts={} timeMs={}", self.paths, self.max_options, self.time.as_millis())
    }
}

/// Explores `module` from its start state.
pub fn analyze(module: &Arc<Module>, bounds: &Bounds, solver: &mut dyn Solver) -> Result<(Analysis, Summary), AnalysisError> {
    let started = Instant::now();
    let k = ProgramState::instantiate(module.clone())?;
    let cs = expand(&k)?;
    let analysis = concolic(&cs, bounds, solver)?;
    let summary = Summary { paths: analysis.paths(), max_options: analysis.max_options(), time: started.elapsed() };
    Ok((analysis, summary))
}
