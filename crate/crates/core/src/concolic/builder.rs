//! Merging iterations into a multiverse tree and the solve/run loop.

use std::collections::HashMap;

use super::engine::{run_iteration, Bounds, Choice, ConcolicState, IterEnd};
use super::expr::{EvalError, Literal, PathCondition};
use super::solver::{Query, SolveResult, Solver};
use crate::client::tree::{MultiverseTree, NodeId, PrimMeta, TreeError};
use crate::wasm::{ExecError, Module};

/// Whether two path models agree on the inputs `x_0..=x_d`: each condition
/// must still hold after taking the other model's values for those inputs.
pub fn equivalent(pi: &PathCondition, eps: &[i32], pi2: &PathCondition, eps2: &[i32], d: usize) -> Result<bool, EvalError> {
    let cross = |base: &[i32], from: &[i32]| {
        let mut v = base.to_vec();
        for i in 0..=d {
            if let (Some(slot), Some(x)) = (v.get_mut(i), from.get(i)) {
                *slot = *x;
            }
        }
        v
    };
    if d >= eps.len() || d >= eps2.len() {
        return Err(EvalError::Unbound(d as u32));
    }
    Ok(pi.eval(&cross(eps, eps2))? && pi2.eval(&cross(eps2, eps))?)
}

#[derive(Debug, thiserror::Error)]
pub enum BuildError {
    #[error(transparent)]
    Tree(#[from] TreeError),
    #[error("path condition: {0}")]
    Eval(#[from] EvalError),
    #[error("trace has {trace} reads but the model has {eps} values")]
    Misaligned { trace: usize, eps: usize },
}

/// A tree under construction together with the path models seen at each choice node.
pub struct TreeBuilder<'m> {
    pub tree: MultiverseTree,
    module: &'m Module,
    models: Vec<(PathCondition, Vec<i32>)>,
    at: HashMap<NodeId, Vec<usize>>,
}

impl<'m> TreeBuilder<'m> {
    pub fn new(module: &'m Module) -> Self {
        TreeBuilder { tree: MultiverseTree::new(), module, models: Vec::new(), at: HashMap::new() }
    }

    /// Inserts one explored path; returns the node it ends at.
    pub fn extend(&mut self, pi: &PathCondition, eps: &[i32], trace: &[Choice]) -> Result<NodeId, BuildError> {
        if trace.len() != eps.len() {
            return Err(BuildError::Misaligned { trace: trace.len(), eps: eps.len() });
        }
        let idx = self.models.len();
        self.models.push((pi.clone(), eps.to_vec()));
        let mut node = self.tree.root();
        for (d, c) in trace.iter().enumerate() {
            if c.det > 0 {
                node = self.tree.traverse_steps(node, c.det)?;
            }
            let mut value = eps[d];
            for &m in self.at.get(&node).map(Vec::as_slice).unwrap_or(&[]) {
                let (pi2, eps2) = &self.models[m];
                if d < eps2.len() && equivalent(pi, eps, pi2, eps2, d)? {
                    value = eps2[d];
                    break;
                }
            }
            self.at.entry(node).or_default().push(idx);
            let meta = PrimMeta { prim: c.prim, name: self.module.func_name(c.prim), args: c.args.clone() };
            node = self.tree.traverse_mock(node, value, Some(meta))?;
        }
        Ok(node)
    }

    /// Drops the path models.
    pub fn finish(self) -> MultiverseTree {
        self.tree
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum StopReason {
    /// Every path within the bounds was explored.
    Exhausted,
    IterationLimit,
    SolverUnknown(String),
}

/// One explored iteration, without its symbolic parts.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RunSummary {
    pub values: Vec<i32>,
    pub decisions: Vec<bool>,
    pub end: IterEnd,
    pub path_condition: String,
}

#[derive(Clone, Debug)]
pub struct Analysis {
    pub tree: MultiverseTree,
    pub runs: Vec<RunSummary>,
    pub stop: StopReason,
    pub solver_calls: u32,
}

impl Analysis {
    pub fn paths(&self) -> usize {
        self.tree.leaf_count()
    }

    pub fn max_options(&self) -> usize {
        self.tree.max_options()
    }
}

#[derive(Debug, thiserror::Error)]
pub enum AnalysisError {
    #[error(transparent)]
    Exec(#[from] ExecError),
    #[error(transparent)]
    Start(#[from] super::engine::ConcolicError),
    #[error(transparent)]
    Build(#[from] BuildError),
}

/// Repeatedly solves for inputs that avoid every explored path and runs them.
pub fn concolic(cs: &ConcolicState, bounds: &Bounds, solver: &mut dyn Solver) -> Result<Analysis, AnalysisError> {
    let mut builder = TreeBuilder::new(cs.k.module());
    let mut hull: Vec<(i32, i32)> = Vec::new();
    let mut clauses: Vec<Vec<Literal>> = Vec::new();
    let mut runs = Vec::new();
    let mut solver_calls = 0;
    let widen = |hull: &mut Vec<(i32, i32)>, d: usize, (lo, hi): (i32, i32)| {
        if d < hull.len() {
            hull[d] = (hull[d].0.min(lo), hull[d].1.max(hi));
        } else {
            hull.push((lo, hi));
        }
    };
    let stop = loop {
        if runs.len() as u32 >= bounds.max_iterations {
            break StopReason::IterationLimit;
        }
        solver_calls += 1;
        let values = match solver.solve(&Query { domains: hull.clone(), clauses: clauses.clone() }) {
            SolveResult::Sat(m) => m,
            SolveResult::Unsat => break StopReason::Exhausted,
            SolveResult::Unknown(why) => {
                log::warn!("solver gave up: {why}; tree is partial");
                break StopReason::SolverUnknown(why);
            }
        };
        let it = run_iteration(cs, &values, bounds)?;
        for (d, dom) in it.eps.domains.iter().enumerate() {
            widen(&mut hull, d, *dom);
        }
        match it.end {
            IterEnd::Infeasible { var, lo, hi } => {
                widen(&mut hull, var as usize, (lo, hi));
                let mut clause = it.pi.negation();
                clause.push(Literal::Range { var, lo, hi, inside: true });
                clauses.push(clause);
            }
            _ => {
                builder.extend(&it.pi, &it.eps.values, &it.trace)?;
                clauses.push(it.pi.negation());
            }
        }
        runs.push(RunSummary {
            values: it.eps.values.clone(),
            decisions: it.decisions,
            path_condition: it.pi.to_string(),
            end: it.end,
        });
    };
    Ok(Analysis { tree: builder.finish(), runs, stop, solver_calls })
}
