//! Options shared by several subcommands and how they map onto the library.

use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use anyhow::{anyhow, bail, Context, Result};
use clap::Args;
use mvdbg::concolic::{Bounds, SolverConfig};
use mvdbg::fixtures;
use mvdbg::wasm::{parse_module, EnvMode, Environment, Module};

/// A `.wat` file, or `fixture:NAME` for a bundled example.
#[derive(Args, Clone, Debug)]
pub struct ProgramArgs {
    /// Program to load: a .wat file or fixture:NAME
    pub program: String,

    /// Narrow an input primitive's codomain, e.g. chip_analog_read=0:7 (repeatable)
    #[arg(long = "domain", value_name = "PRIM=LO:HI")]
    pub domains: Vec<String>,
}

pub struct Program {
    pub module: Arc<Module>,
    /// Bounds the bundled fixture is meant to be analyzed with.
    pub default_bounds: Bounds,
}

impl ProgramArgs {
    pub fn load(&self) -> Result<Program> {
        let (text, default_bounds) = match self.program.strip_prefix("fixture:") {
            Some(name) => {
                let f = fixtures::get(name).ok_or_else(|| {
                    let names: Vec<&str> = fixtures::ALL.iter().map(|f| f.name).collect();
                    anyhow!("no fixture `{name}` (have: {})", names.join(", "))
                })?;
                (f.source.to_string(), f.bounds())
            }
            None => {
                let path = PathBuf::from(&self.program);
                let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
                (text, Bounds::default())
            }
        };
        let mut module = parse_module(&text).with_context(|| format!("parsing {}", self.program))?;
        for spec in &self.domains {
            let (prim, range) = spec.split_once('=').ok_or_else(|| anyhow!("--domain expects PRIM=LO:HI, got `{spec}`"))?;
            let (lo, hi) = range.split_once(':').ok_or_else(|| anyhow!("--domain expects PRIM=LO:HI, got `{spec}`"))?;
            let (lo, hi): (i32, i32) = (lo.parse()?, hi.parse()?);
            if lo > hi {
                bail!("--domain {spec}: empty range");
            }
            if !module.prims.override_codomain(prim, lo, hi) {
                bail!("--domain {spec}: `{prim}` is not an input primitive of this program");
            }
        }
        Ok(Program { module: Arc::new(module), default_bounds })
    }
}

#[derive(Args, Clone, Debug)]
pub struct EnvArgs {
    /// Where unmocked input values come from: seeded:N, constant:V or scripted:prim=v,v;prim=v
    #[arg(long, default_value = "seeded:0", value_parser = parse_env)]
    pub env: EnvMode,
}

fn parse_env(s: &str) -> Result<EnvMode, String> {
    s.parse()
}

impl EnvArgs {
    pub fn environment(&self) -> Environment {
        Environment::new(self.env.clone())
    }
}

#[derive(Args, Clone, Debug, Default)]
pub struct AnalysisArgs {
    /// External SMT-LIB2 solver command, e.g. "z3 -in" (default: built-in solver)
    #[arg(long)]
    pub solver_cmd: Option<String>,
    /// Per-query timeout for the external solver
    #[arg(long, default_value_t = 10_000)]
    pub solver_timeout_ms: u64,
    /// Concolic iterations per analysis
    #[arg(long)]
    pub max_iter: Option<u32>,
    /// Input reads per iteration
    #[arg(long)]
    pub max_syms: Option<u32>,
    /// Instructions per iteration
    #[arg(long)]
    pub max_instr: Option<u64>,
    /// Calls of a function named `loop` per iteration
    #[arg(long)]
    pub max_loops: Option<u32>,
}

impl AnalysisArgs {
    pub fn bounds(&self, base: Bounds) -> Bounds {
        Bounds {
            max_iterations: self.max_iter.unwrap_or(base.max_iterations),
            max_syms: self.max_syms.unwrap_or(base.max_syms),
            max_instr: self.max_instr.unwrap_or(base.max_instr),
            max_loops: self.max_loops.or(base.max_loops),
        }
    }

    pub fn solver(&self) -> SolverConfig {
        match &self.solver_cmd {
            Some(cmd) => SolverConfig::External { cmd: cmd.clone(), timeout: Duration::from_millis(self.solver_timeout_ms) },
            None => SolverConfig::Builtin,
        }
    }
}
