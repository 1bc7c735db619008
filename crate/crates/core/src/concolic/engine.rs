//! Concolic states and single-iteration execution.

use std::collections::BTreeMap;

use super::expr::{Literal, PathCondition, SymExpr, UnOp};
use crate::wasm::exec::branch_arity;
use crate::wasm::{BinOp, Classification, ExecError, Module, Op, ProgramState, Status};

/// Limits for one analysis.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Bounds {
    /// Instructions per iteration.
    pub max_instr: u64,
    /// Input reads (symbolic variables) per iteration.
    pub max_syms: u32,
    pub max_iterations: u32,
    /// Calls to a function named `loop` per iteration, if set.
    pub max_loops: Option<u32>,
}

impl Default for Bounds {
    fn default() -> Self {
        Bounds { max_instr: 10_000, max_syms: 16, max_iterations: 64, max_loops: None }
    }
}

/// ε: concrete values for the symbolic variables, with their domains.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SymEnv {
    pub values: Vec<i32>,
    pub domains: Vec<(i32, i32)>,
}

impl SymEnv {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// One input read along an iteration.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Choice {
    /// Non-input steps since the previous read (or the start).
    pub det: u64,
    pub prim: u32,
    pub args: Vec<i32>,
    pub value: i32,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Bound {
    Instructions,
    Syms,
    Loops,
}

/// How an iteration ended.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum IterEnd {
    Finished,
    Trapped(String),
    Bound(Bound),
    /// ε assigned variable `var` a value outside the codomain its read has on this path.
    Infeasible { var: u32, lo: i32, hi: i32 },
}

#[derive(Clone, Debug)]
pub struct Iteration {
    pub pi: PathCondition,
    pub eps: SymEnv,
    pub trace: Vec<Choice>,
    /// Outcome of every `if`/`br_if`, symbolic or not, in execution order.
    pub decisions: Vec<bool>,
    pub end: IterEnd,
}

#[derive(Debug, thiserror::Error)]
pub enum ConcolicError {
    #[error("cannot analyze a trapped state")]
    Trapped,
    #[error(transparent)]
    Exec(#[from] ExecError),
}

/// A program state with a symbolic mirror for every concrete slot.
#[derive(Clone, Debug)]
pub struct ConcolicState {
    pub k: ProgramState,
    pub sym_stack: Vec<SymExpr>,
    /// One vector per frame, aligned with `k.frames()`.
    pub sym_locals: Vec<Vec<SymExpr>>,
    pub sym_globals: Vec<SymExpr>,
    /// Symbolic 4-byte cells keyed by address; absent cells are concrete.
    pub sym_mem: BTreeMap<u32, SymExpr>,
    pub eps: SymEnv,
    pub pi: PathCondition,
    pub trace: Vec<Choice>,
    pub decisions: Vec<bool>,
    det: u64,
    steps: u64,
    loops: u32,
}

/// Mirrors each concrete slot as a constant.
pub fn expand(k: &ProgramState) -> Result<ConcolicState, ConcolicError> {
    if matches!(k.status(), Status::Trapped(_)) {
        return Err(ConcolicError::Trapped);
    }
    let consts = |vs: &[i32]| vs.iter().map(|v| SymExpr::constant(*v)).collect::<Vec<_>>();
    Ok(ConcolicState {
        sym_stack: consts(k.stack()),
        sym_locals: k.frames().iter().map(|f| consts(&f.locals)).collect(),
        sym_globals: consts(k.globals()),
        sym_mem: BTreeMap::new(),
        eps: SymEnv::default(),
        pi: PathCondition::new(),
        trace: Vec::new(),
        decisions: Vec::new(),
        det: 0,
        steps: 0,
        loops: 0,
        k: k.clone(),
    })
}

enum Stepped {
    Continue,
    Stop(IterEnd),
}

impl ConcolicState {
    fn module(&self) -> &Module {
        self.k.module()
    }

    /// Checks that every mirror evaluates to its concrete slot under ε.
    pub fn congruent(&self) -> bool {
        let env = &self.eps.values;
        let same = |e: &SymExpr, v: i32| e.eval(env).is_ok_and(|x| x == v);
        self.sym_stack.len() == self.k.stack().len()
            && self.sym_stack.iter().zip(self.k.stack()).all(|(e, v)| same(e, *v))
            && self.sym_globals.iter().zip(self.k.globals()).all(|(e, v)| same(e, *v))
            && self.sym_locals.len() == self.k.frames().len()
            && self
                .sym_locals
                .iter()
                .zip(self.k.frames())
                .all(|(ls, f)| ls.len() == f.locals.len() && ls.iter().zip(&f.locals).all(|(e, v)| same(e, *v)))
            && self.sym_mem.iter().all(|(a, e)| {
                let a = *a as usize;
                let m = self.k.memory();
                a + 4 <= m.len() && same(e, i32::from_le_bytes(m[a..a + 4].try_into().unwrap()))
            })
    }

    fn pop(&mut self) -> SymExpr {
        self.sym_stack.pop().expect("symbolic stack mirrors the concrete stack")
    }

    fn top_concrete(&self, from_top: usize) -> i32 {
        let s = self.k.stack();
        s[s.len() - 1 - from_top]
    }

    fn branch_on(&mut self, cond: SymExpr, value: i32) {
        self.decisions.push(value != 0);
        if !cond.is_ground() {
            self.pi.push(Literal::Branch { expr: cond, taken: value != 0 });
        }
    }

    /// Drops the mirrors of the returning frame, keeping its results.
    fn mirror_return(&mut self) {
        let frame = self.k.frames().last().expect("running state has a frame");
        let results = self.module().function(frame.func).map_or(0, |f| f.results) as usize;
        let base = frame.base as usize;
        let top = self.sym_stack.len() - results;
        self.sym_stack.drain(base..top);
        self.sym_locals.pop();
    }

    /// One concolic step.
    fn cstep(&mut self, bounds: &Bounds) -> Result<Stepped, ExecError> {
        if self.steps >= bounds.max_instr {
            return Ok(Stepped::Stop(IterEnd::Bound(Bound::Instructions)));
        }
        match self.k.classify() {
            Classification::Terminated => return Ok(Stepped::Stop(self.end_of_run())),
            Classification::OutputPrim(_, args) => {
                let n = self.sym_stack.len() - args.len();
                self.sym_stack.truncate(n);
                self.k.skip_output()?;
                self.det += 1;
                self.steps += 1;
                return Ok(self.after());
            }
            Classification::InputPrim(j, args) => return self.read(j, args, bounds),
            Classification::NonPrim => {}
        }
        let (op, br_target) = {
            let frame = self.k.frames().last().expect("running state has a frame");
            let code = &self.module().function(frame.func).expect("frame of a defined function").code;
            let Some(op) = code.get(frame.pc as usize).cloned() else {
                self.mirror_return();
                return self.commit();
            };
            // (height, arity) of the branch target; `None` returns from the function
            let br_target = match op {
                Op::Br(d) | Op::BrIf(d) if (d as usize) < frame.labels.len() => {
                    let l = frame.labels[frame.labels.len() - 1 - d as usize];
                    Some((l.height as usize, branch_arity(code, &l) as usize))
                }
                _ => None,
            };
            (op, br_target)
        };
        match &op {
            Op::Const(v) => self.sym_stack.push(SymExpr::constant(*v)),
            Op::Binary(op) => {
                let (av, bv) = (self.top_concrete(1), self.top_concrete(0));
                let b = self.pop();
                let a = self.pop();
                if matches!(op, BinOp::DivS | BinOp::RemS) && !b.is_ground() {
                    self.pi.push(Literal::Branch { expr: b.clone(), taken: bv != 0 });
                }
                self.k.step_det()?;
                if !self.k.is_running() {
                    self.sym_stack.push(a);
                    self.sym_stack.push(b);
                    return Ok(Stepped::Stop(self.end_of_run()));
                }
                let r = self.top_concrete(0);
                self.sym_stack.push(SymExpr::binop(*op, &a, av, &b, bv, r));
                return self.counted();
            }
            Op::Compare(op) => {
                let (av, bv) = (self.top_concrete(1), self.top_concrete(0));
                let b = self.pop();
                let a = self.pop();
                self.sym_stack.push(SymExpr::relop(*op, &a, av, &b, bv, op.eval(av, bv) as i32));
            }
            Op::Eqz => {
                let av = self.top_concrete(0);
                let a = self.pop();
                self.sym_stack.push(SymExpr::unop(UnOp::Eqz, &a, av, (av == 0) as i32));
            }
            Op::LocalGet(i) => {
                let e = self.sym_locals.last().unwrap()[*i as usize].clone();
                self.sym_stack.push(e);
            }
            Op::LocalSet(i) => {
                let e = self.pop();
                self.sym_locals.last_mut().unwrap()[*i as usize] = e;
            }
            Op::LocalTee(i) => {
                let e = self.sym_stack.last().unwrap().clone();
                self.sym_locals.last_mut().unwrap()[*i as usize] = e;
            }
            Op::GlobalGet(i) => self.sym_stack.push(self.sym_globals[*i as usize].clone()),
            Op::GlobalSet(i) => {
                let e = self.pop();
                self.sym_globals[*i as usize] = e;
            }
            Op::Load { offset } => {
                let base = self.top_concrete(0);
                let addr = (base as u32 as u64 + *offset as u64).min(u32::MAX as u64) as u32;
                let a = self.pop();
                self.k.step_det()?;
                if !self.k.is_running() {
                    self.sym_stack.push(a);
                    return Ok(Stepped::Stop(self.end_of_run()));
                }
                let v = self.top_concrete(0);
                let e = self.sym_mem.get(&addr).cloned().unwrap_or_else(|| SymExpr::constant(v));
                self.sym_stack.push(e);
                return self.counted();
            }
            Op::Store { offset } => {
                let base = self.top_concrete(1);
                let addr = (base as u32 as u64 + *offset as u64).min(u32::MAX as u64) as u32;
                let v = self.pop();
                let b = self.pop();
                self.k.step_det()?;
                if !self.k.is_running() {
                    self.sym_stack.push(b);
                    self.sym_stack.push(v);
                    return Ok(Stepped::Stop(self.end_of_run()));
                }
                // any cell overlapping the written bytes loses its mirror
                let lo = addr.saturating_sub(3);
                let stale: Vec<u32> = self.sym_mem.range(lo..=addr.saturating_add(3)).map(|(k, _)| *k).collect();
                for k in stale {
                    self.sym_mem.remove(&k);
                }
                if !v.is_ground() {
                    self.sym_mem.insert(addr, v);
                }
                return self.counted();
            }
            Op::Block { .. } | Op::Loop { .. } | Op::Nop => {}
            Op::If { .. } => {
                let c = self.top_concrete(0);
                let e = self.pop();
                self.branch_on(e, c);
            }
            Op::Br(_) | Op::BrIf(_) => {
                let taken = match op {
                    Op::BrIf(_) => {
                        let c = self.top_concrete(0);
                        let e = self.pop();
                        self.branch_on(e, c);
                        c != 0
                    }
                    _ => true,
                };
                if taken {
                    match br_target {
                        Some((height, arity)) => {
                            let top = self.sym_stack.len() - arity;
                            self.sym_stack.drain(height..top);
                        }
                        None => self.mirror_return(),
                    }
                }
            }
            Op::Call(j) => {
                let j = *j;
                let callee = self.module().function(j).expect("call target is a defined function");
                let (params, size) = (callee.params as usize, callee.frame_size());
                let is_loop = callee.name.as_deref().map(|n| n.trim_start_matches('$')) == Some("loop");
                if is_loop {
                    if bounds.max_loops.is_some_and(|m| self.loops >= m) {
                        return Ok(Stepped::Stop(IterEnd::Bound(Bound::Loops)));
                    }
                    self.loops += 1;
                }
                self.k.step_det()?;
                if !self.k.is_running() {
                    return Ok(Stepped::Stop(self.end_of_run()));
                }
                let base = self.sym_stack.len() - params;
                let mut locals = self.sym_stack.split_off(base);
                locals.resize(size, SymExpr::constant(0));
                self.sym_locals.push(locals);
                return self.counted();
            }
            Op::Drop => {
                self.pop();
            }
            Op::Return => self.mirror_return(),
        }
        self.commit()
    }

    /// Executes the concrete step for an op whose mirror update is complete.
    fn commit(&mut self) -> Result<Stepped, ExecError> {
        self.k.step_det()?;
        self.counted()
    }

    fn counted(&mut self) -> Result<Stepped, ExecError> {
        self.det += 1;
        self.steps += 1;
        Ok(self.after())
    }

    fn after(&self) -> Stepped {
        if self.k.is_running() {
            Stepped::Continue
        } else {
            Stepped::Stop(self.end_of_run())
        }
    }

    fn end_of_run(&self) -> IterEnd {
        match self.k.status() {
            Status::Trapped(r) => IterEnd::Trapped(r.clone()),
            _ => IterEnd::Finished,
        }
    }

    fn read(&mut self, j: u32, args: Vec<i32>, bounds: &Bounds) -> Result<Stepped, ExecError> {
        let d = self.trace.len() as u32;
        if d >= bounds.max_syms {
            return Ok(Stepped::Stop(IterEnd::Bound(Bound::Syms)));
        }
        let Some((lo, hi)) = self.k.pending_range() else {
            let n = self.sym_stack.len() - args.len();
            self.sym_stack.truncate(n);
            self.k.trap("empty-codomain");
            self.steps += 1;
            return Ok(Stepped::Stop(self.end_of_run()));
        };
        let v = match self.eps.values.get(d as usize) {
            Some(&v) => {
                if v < lo || v > hi {
                    return Ok(Stepped::Stop(IterEnd::Infeasible { var: d, lo, hi }));
                }
                self.eps.domains[d as usize] = (lo, hi);
                v
            }
            None => {
                self.eps.values.push(lo);
                self.eps.domains.push((lo, hi));
                lo
            }
        };
        self.pi.push(Literal::Range { var: d, lo, hi, inside: true });
        let n = self.sym_stack.len() - args.len();
        self.sym_stack.truncate(n);
        self.k.step_mocked(v)?;
        self.sym_stack.push(SymExpr::sym(d));
        self.trace.push(Choice { det: self.det, prim: j, args, value: v });
        self.det = 0;
        self.steps += 1;
        Ok(self.after())
    }
}

/// Runs one iteration from `cs0` with the given input values.
///
/// `values` seeds ε; reads past its end get fresh variables at their
/// domain minimum.
pub fn run_iteration(cs0: &ConcolicState, values: &[i32], bounds: &Bounds) -> Result<Iteration, ExecError> {
    let mut cs = cs0.clone();
    cs.eps = SymEnv { values: values.to_vec(), domains: vec![(i32::MIN, i32::MAX); values.len()] };
    let end = loop {
        if let Stepped::Stop(end) = cs.cstep(bounds)? {
            break end;
        }
    };
    // values the run never read are not part of its model
    let used = cs.trace.len();
    cs.eps.values.truncate(used);
    cs.eps.domains.truncate(used);
    Ok(Iteration { pi: cs.pi, eps: cs.eps, trace: cs.trace, decisions: cs.decisions, end })
}

/// Steps `cs` until it finishes or hits a bound, checking mirror congruence after each step.
pub fn run_checked(cs: &mut ConcolicState, bounds: &Bounds) -> Result<(IterEnd, bool), ExecError> {
    loop {
        let stepped = cs.cstep(bounds)?;
        if !cs.congruent() {
            return Ok((cs.end_of_run(), false));
        }
        if let Stepped::Stop(end) = stepped {
            return Ok((end, true));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::wasm::parse_module;
    use std::sync::Arc;

    fn state(src: &str) -> ProgramState {
        ProgramState::instantiate(Arc::new(parse_module(src).unwrap())).unwrap()
    }

    const APP_B: &str = r#"(module
      (import "env" "chip_analog_read" (func $read (param i32) (result i32)))
      (import "env" "chip_digital_write" (func $write (param i32 i32)))
      (func (export "main") (local $x i32)
        (local.set $x (call $read (i32.const 0)))
        (if (i32.lt_s (local.get $x) (i32.const 5))
          (then (call $write (i32.const 13) (i32.const 1)))
          (else (call $write (i32.const 13) (i32.const 0))))))"#;

    #[test]
    fn expand_mirrors_constants() {
        let k = state("(module (global (mut i32) (i32.const 7)) (func (export \"main\")))");
        let cs = expand(&k).unwrap();
        assert_eq!(cs.sym_globals, vec![SymExpr::constant(7)]);
        assert!(cs.sym_stack.is_empty());
        assert!(cs.pi.is_empty() && cs.eps.is_empty());
    }

    #[test]
    fn fresh_read_takes_minimum_and_branch_recorded() {
        let cs = expand(&state(APP_B)).unwrap();
        let it = run_iteration(&cs, &[], &Bounds::default()).unwrap();
        assert_eq!(it.end, IterEnd::Finished);
        assert_eq!(it.eps.values, vec![0]);
        assert_eq!(it.eps.domains, vec![(0, 4095)]);
        assert_eq!(it.trace.len(), 1);
        assert_eq!(it.pi.to_string(), "x0 in [0, 4095] && (lt_s x0 5) != 0");
        let it = run_iteration(&cs, &[5], &Bounds::default()).unwrap();
        assert_eq!(it.pi.to_string(), "x0 in [0, 4095] && (lt_s x0 5) == 0");
        assert!(it.pi.eval(&it.eps.values).unwrap());
    }

    #[test]
    fn straight_line_has_empty_condition() {
        let cs = expand(&state("(module (func (export \"main\") (drop (i32.add (i32.const 2) (i32.const 3)))))")).unwrap();
        let it = run_iteration(&cs, &[], &Bounds::default()).unwrap();
        assert!(it.pi.is_empty() && it.trace.is_empty());
        assert_eq!(it.end, IterEnd::Finished);
    }

    #[test]
    fn out_of_codomain_value_is_infeasible() {
        let cs = expand(&state(APP_B)).unwrap();
        let it = run_iteration(&cs, &[5000], &Bounds::default()).unwrap();
        assert_eq!(it.end, IterEnd::Infeasible { var: 0, lo: 0, hi: 4095 });
    }

    #[test]
    fn symbolic_divisor_adds_guard() {
        let src = r#"(module
          (import "env" "chip_analog_read" (func $read (param i32) (result i32)))
          (func (export "main") (drop (i32.div_s (i32.const 100) (call $read (i32.const 0))))))"#;
        let cs = expand(&state(src)).unwrap();
        let it = run_iteration(&cs, &[], &Bounds::default()).unwrap();
        assert_eq!(it.end, IterEnd::Trapped("div-by-zero".into()));
        assert_eq!(it.pi.conjuncts.last().unwrap().to_string(), "x0 == 0");
        let it = run_iteration(&cs, &[4], &Bounds::default()).unwrap();
        assert_eq!(it.end, IterEnd::Finished);
    }

    #[test]
    fn bounds_stop_iterations() {
        let src = r#"(module
          (import "env" "chip_digital_read" (func $read (param i32) (result i32)))
          (func $loop (drop (call $read (i32.const 2))))
          (func (export "main") (loop $l (call $loop) (br $l))))"#;
        let cs = expand(&state(src)).unwrap();
        let b = Bounds { max_syms: 3, ..Bounds::default() };
        let it = run_iteration(&cs, &[], &b).unwrap();
        assert_eq!(it.end, IterEnd::Bound(Bound::Syms));
        assert_eq!(it.trace.len(), 3);
        let b = Bounds { max_loops: Some(2), ..Bounds::default() };
        let it = run_iteration(&cs, &[], &b).unwrap();
        assert_eq!(it.end, IterEnd::Bound(Bound::Loops));
        assert_eq!(it.trace.len(), 2);
        let b = Bounds { max_instr: 10, ..Bounds::default() };
        assert_eq!(run_iteration(&cs, &[], &b).unwrap().end, IterEnd::Bound(Bound::Instructions));
    }

    #[test]
    fn memory_mirrors_follow_stores() {
        let src = r#"(module
          (import "env" "chip_analog_read" (func $read (param i32) (result i32)))
          (memory 1)
          (func (export "main")
            (i32.store (i32.const 8) (call $read (i32.const 0)))
            (if (i32.gt_s (i32.load (i32.const 8)) (i32.const 10)) (then nop))
            (i32.store (i32.const 10) (i32.const 1))
            (if (i32.load (i32.const 8)) (then nop))))"#;
        let mut cs = expand(&state(src)).unwrap();
        let (end, ok) = run_checked(&mut cs, &Bounds::default()).unwrap();
        assert!(ok);
        assert_eq!(end, IterEnd::Finished);
        // only the first comparison is symbolic; the overlapping store concretized the cell
        assert_eq!(cs.pi.branches().count(), 1);
    }
}
