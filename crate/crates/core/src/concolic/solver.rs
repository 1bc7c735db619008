//! Constraint queries and the built-in finite-domain solver.

use super::expr::{EvalError, Literal};

/// `∧ domains ∧ ∧_k (∨ clause_k)` over variables `x_0 .. x_{n-1}`.
#[derive(Clone, Debug, Default)]
pub struct Query {
    /// Inclusive range per variable; its length fixes the variable count.
    pub domains: Vec<(i32, i32)>,
    /// Each clause is a disjunction.
    pub clauses: Vec<Vec<Literal>>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum SolveResult {
    Sat(Vec<i32>),
    Unsat,
    Unknown(String),
}

pub trait Solver {
    fn solve(&mut self, q: &Query) -> SolveResult;
}

/// Checks a model against a query; used to validate external answers.
pub fn check_model(q: &Query, model: &[i32]) -> Result<bool, EvalError> {
    if model.len() != q.domains.len() {
        return Ok(false);
    }
    for (x, (lo, hi)) in model.iter().zip(&q.domains) {
        if x < lo || x > hi {
            return Ok(false);
        }
    }
    for clause in &q.clauses {
        let mut any = false;
        for lit in clause {
            if lit.eval(model)? {
                any = true;
                break;
            }
        }
        if !any {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Depth-first search over variables in index order.
///
/// At each level, literals whose largest variable is the current one become
/// decidable. Values of `x_i` that give the same truth vector over those
/// literals are interchangeable unless some still-open clause has an
/// undecided literal that mentions `x_i`; in that case every value is tried.
/// Domains wider than `wide_domain` are sampled at their bounds and around
/// the constants of the query.
pub struct BuiltinSolver {
    /// Literal evaluations before giving up with `Unknown`.
    pub budget: u64,
    pub wide_domain: u64,
}

impl Default for BuiltinSolver {
    fn default() -> Self {
        BuiltinSolver { budget: 200_000_000, wide_domain: 1 << 16 }
    }
}

struct LitInfo {
    clause: usize,
    max_var: Option<u32>,
    vars: Vec<u32>,
}

struct Search<'a> {
    q: &'a Query,
    lits: Vec<(&'a Literal, LitInfo)>,
    /// Literal indices grouped by their largest variable.
    by_level: Vec<Vec<usize>>,
    /// Per variable: whether any literal mentions it.
    mentioned: Vec<bool>,
    /// Extra candidate values for wide domains.
    constants: Vec<i32>,
    /// `satisfied_at[c]`: level at which clause c became true, if it has.
    satisfied_at: Vec<Option<usize>>,
    model: Vec<i32>,
    spent: u64,
    budget: u64,
    wide_domain: u64,
}

enum Outcome {
    Found,
    Exhausted,
    OutOfBudget,
}

impl Solver for BuiltinSolver {
    fn solve(&mut self, q: &Query) -> SolveResult {
        let n = q.domains.len();
        if q.domains.iter().any(|(lo, hi)| lo > hi) {
            return SolveResult::Unsat;
        }
        let mut lits = Vec::new();
        let mut by_level = vec![Vec::new(); n];
        let mut mentioned = vec![false; n];
        let mut constants = Vec::new();
        let mut satisfied_at = vec![None; q.clauses.len()];
        for (c, clause) in q.clauses.iter().enumerate() {
            if clause.is_empty() {
                return SolveResult::Unsat;
            }
            for lit in clause {
                let max_var = lit.max_var();
                match max_var {
                    Some(m) if m as usize >= n => {
                        return SolveResult::Unknown(format!("literal mentions x{m} beyond {n} variables"));
                    }
                    Some(m) => {
                        by_level[m as usize].push(lits.len());
                        for v in lit.vars() {
                            mentioned[v as usize] = true;
                        }
                    }
                    None => {
                        // ground literal: decided up front
                        match lit.eval(&[]) {
                            Ok(true) => satisfied_at[c] = Some(0),
                            Ok(false) => {}
                            Err(e) => return SolveResult::Unknown(e.to_string()),
                        }
                        continue;
                    }
                }
                match lit {
                    Literal::Branch { expr, .. } => expr.constants(&mut constants),
                    Literal::Range { lo, hi, .. } => constants.extend([*lo, *hi]),
                }
                lits.push((lit, LitInfo { clause: c, max_var, vars: lit.vars() }));
            }
        }
        // a ground-only clause that is false can never be satisfied
        for (c, clause) in q.clauses.iter().enumerate() {
            if satisfied_at[c].is_none() && clause.iter().all(|l| l.max_var().is_none()) {
                return SolveResult::Unsat;
            }
        }
        constants.sort_unstable();
        constants.dedup();
        let mut s = Search {
            q,
            lits,
            by_level,
            mentioned,
            constants,
            satisfied_at,
            model: vec![0; n],
            spent: 0,
            budget: self.budget,
            wide_domain: self.wide_domain,
        };
        match s.level(0) {
            Outcome::Found => SolveResult::Sat(s.model),
            Outcome::Exhausted => SolveResult::Unsat,
            Outcome::OutOfBudget => SolveResult::Unknown("built-in solver budget exhausted".into()),
        }
    }
}

impl Search<'_> {
    fn candidates(&self, i: usize) -> Vec<i32> {
        let (lo, hi) = self.q.domains[i];
        let size = (hi as i64 - lo as i64 + 1) as u64;
        if size <= self.wide_domain {
            return (lo..=hi).collect();
        }
        let mut out = vec![lo, hi];
        for &c in &self.constants {
            for d in -1i64..=1 {
                let v = c as i64 + d;
                if v >= lo as i64 && v <= hi as i64 {
                    out.push(v as i32);
                }
            }
        }
        out.sort_unstable();
        out.dedup();
        out
    }

    fn level(&mut self, i: usize) -> Outcome {
        if i == self.model.len() {
            return Outcome::Found;
        }
        if !self.mentioned[i] {
            self.model[i] = self.q.domains[i].0;
            return self.level(i + 1);
        }
        let here: Vec<usize> = self.by_level[i].clone();
        // clauses still open and completely decided once x_i is fixed
        let closing: Vec<usize> = {
            let mut cs: Vec<usize> = here.iter().map(|&l| self.lits[l].1.clause).collect();
            cs.sort_unstable();
            cs.dedup();
            cs.retain(|&c| self.satisfied_at[c].is_none());
            cs.retain(|&c| {
                self.lits
                    .iter()
                    .filter(|(_, info)| info.clause == c)
                    .all(|(_, info)| info.max_var.is_some_and(|m| m as usize <= i))
            });
            cs
        };
        // can values of x_i be grouped by their truth vector over `here`?
        let groupable = !self.lits.iter().any(|(_, info)| {
            info.max_var.is_some_and(|m| m as usize > i)
                && self.satisfied_at[info.clause].is_none()
                && info.vars.binary_search(&(i as u32)).is_ok()
        });
        let mut seen_vectors: std::collections::HashSet<Vec<bool>> = std::collections::HashSet::new();
        for v in self.candidates(i) {
            self.model[i] = v;
            let mut truth = Vec::with_capacity(here.len());
            for &l in &here {
                self.spent += 1;
                let val = self.lits[l].0.eval(&self.model[..=i]).unwrap_or(false);
                truth.push(val);
            }
            if self.spent > self.budget {
                return Outcome::OutOfBudget;
            }
            // newly satisfied clauses
            let mut newly = Vec::new();
            for (k, &l) in here.iter().enumerate() {
                let c = self.lits[l].1.clause;
                if truth[k] && self.satisfied_at[c].is_none() && !newly.contains(&c) {
                    newly.push(c);
                }
            }
            // a clause whose every literal is now decided must hold
            if closing.iter().any(|c| !newly.contains(c)) {
                continue;
            }
            if groupable && !seen_vectors.insert(truth) {
                continue;
            }
            for &c in &newly {
                self.satisfied_at[c] = Some(i);
            }
            let r = self.level(i + 1);
            for &c in &newly {
                self.satisfied_at[c] = None;
            }
            match r {
                Outcome::Exhausted => {}
                other => return other,
            }
        }
        Outcome::Exhausted
    }
}
