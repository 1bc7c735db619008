//! Small-step interpreter over flattened function bodies.

use std::fmt;
use std::sync::Arc;

use super::module::{BinOp, InstrId, Module, Op};
use super::prims::{EnvError, Environment, PrimKind};

/// Deepest call stack before the VM traps.
pub const MAX_CALL_DEPTH: usize = 1024;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Status {
    Running,
    Trapped(String),
    Finished,
}

/// An open `block`, `loop` or `if` in a frame.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Label {
    /// Position of the opener in the function body.
    pub opener: u32,
    /// Absolute value-stack height when the construct was entered.
    pub height: u32,
    /// True while executing the else-arm of an `if`.
    pub alt: bool,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Frame {
    pub func: u32,
    /// Next instruction; `code.len()` is the implicit return.
    pub pc: u32,
    pub labels: Vec<Label>,
    pub locals: Vec<i32>,
    /// Value-stack height below this frame's operands.
    pub base: u32,
}

/// What the next step of a state will do.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Classification {
    NonPrim,
    InputPrim(u32, Vec<i32>),
    OutputPrim(u32, Vec<i32>),
    Terminated,
}

impl Classification {
    /// Short name as used by session scripts.
    pub fn kind(&self) -> &'static str {
        match self {
            Classification::NonPrim => "NonPrim",
            Classification::InputPrim(..) => "InputPrim",
            Classification::OutputPrim(..) => "OutputPrim",
            Classification::Terminated => "Terminated",
        }
    }
}

/// A primitive invocation performed by a step.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PrimEvent {
    pub prim: u32,
    pub args: Vec<i32>,
    /// Returned value; `None` for output primitives.
    pub value: Option<i32>,
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum ExecError {
    #[error("module has no entry function")]
    MissingEntry,
    #[error("program is not running")]
    NotRunning,
    #[error("next instruction is a primitive call")]
    PrimitiveNext,
    #[error("next instruction is not an input primitive")]
    MockOnNonPrim,
    #[error("mock value {value} outside codomain [{lo}, {hi}]")]
    MockOutOfCodomain { value: i32, lo: i32, hi: i32 },
    #[error(transparent)]
    Env(#[from] EnvError),
}

/// Concrete VM state: call stack, globals, value stack and linear memory.
#[derive(Clone)]
pub struct ProgramState {
    module: Arc<Module>,
    pub(crate) frames: Vec<Frame>,
    pub(crate) globals: Vec<i32>,
    pub(crate) stack: Vec<i32>,
    pub(crate) memory: Vec<u8>,
    pub(crate) status: Status,
    pub(crate) icount: u64,
}

impl PartialEq for ProgramState {
    fn eq(&self, other: &Self) -> bool {
        self.module.hash == other.module.hash
            && self.frames == other.frames
            && self.globals == other.globals
            && self.stack == other.stack
            && self.status == other.status
            && self.icount == other.icount
            && self.memory == other.memory
    }
}

impl Eq for ProgramState {}

impl fmt::Debug for ProgramState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ProgramState")
            .field("status", &self.status)
            .field("icount", &self.icount)
            .field("frames", &self.frames)
            .field("globals", &self.globals)
            .field("stack", &self.stack)
            .field("memory_len", &self.memory.len())
            .finish()
    }
}

fn eval_binop(op: BinOp, a: i32, b: i32) -> Result<i32, &'static str> {
    Ok(match op {
        BinOp::Add => a.wrapping_add(b),
        BinOp::Sub => a.wrapping_sub(b),
        BinOp::Mul => a.wrapping_mul(b),
        BinOp::DivS => {
            if b == 0 {
                return Err("div-by-zero");
            }
            if a == i32::MIN && b == -1 {
                return Err("integer-overflow");
            }
            a / b
        }
        BinOp::RemS => {
            if b == 0 {
                return Err("div-by-zero");
            }
            a.wrapping_rem(b)
        }
        BinOp::And => a & b,
        BinOp::Or => a | b,
        BinOp::Xor => a ^ b,
    })
}

/// Concrete semantics of a binary operator; `Err` carries the trap reason.
pub fn binop(op: BinOp, a: i32, b: i32) -> Result<i32, &'static str> {
    eval_binop(op, a, b)
}

/// Position where the innermost label's current arm ends.
fn label_stop(code: &[Op], l: &Label) -> u32 {
    match code[l.opener as usize] {
        Op::Block { end, .. } | Op::Loop { end, .. } => end,
        Op::If { else_at, end, .. } => {
            if l.alt {
                end
            } else {
                else_at
            }
        }
        _ => unreachable!("label opener is not structured"),
    }
}

/// Pops every label whose arm ends at `pc`.
fn settle(frame: &mut Frame, code: &[Op]) {
    while let Some(l) = frame.labels.last() {
        if frame.pc != label_stop(code, l) {
            break;
        }
        if let (Op::If { end, .. }, false) = (&code[l.opener as usize], l.alt) {
            frame.pc = *end;
        }
        frame.labels.pop();
    }
}

/// Arity carried by a branch to `label`.
pub(crate) fn branch_arity(code: &[Op], label: &Label) -> u32 {
    match code[label.opener as usize] {
        Op::Loop { .. } => 0,
        Op::Block { arity, .. } | Op::If { arity, .. } => arity,
        _ => unreachable!("label opener is not structured"),
    }
}

/// Executes `br depth`: unwinds labels and the stack, returns the new pc.
fn branch(frame: &mut Frame, stack: &mut Vec<i32>, code: &[Op], depth: u32) -> u32 {
    let idx = frame.labels.len() - 1 - depth as usize;
    let l = frame.labels[idx];
    let arity = branch_arity(code, &l) as usize;
    let top = stack.len() - arity;
    stack.drain(l.height as usize..top);
    match code[l.opener as usize] {
        Op::Loop { .. } => {
            frame.labels.truncate(idx + 1);
            l.opener + 1
        }
        Op::Block { end, .. } | Op::If { end, .. } => {
            frame.labels.truncate(idx);
            end
        }
        _ => unreachable!(),
    }
}

impl ProgramState {
    /// Loads `module` and positions the VM at the entry function's first instruction.
    pub fn instantiate(module: Arc<Module>) -> Result<Self, ExecError> {
        let entry = module.entry.ok_or(ExecError::MissingEntry)?;
        let func = module.function(entry).ok_or(ExecError::MissingEntry)?;
        let frame = Frame { func: entry, pc: 0, labels: Vec::new(), locals: vec![0; func.frame_size()], base: 0 };
        Ok(ProgramState {
            globals: module.globals.iter().map(|g| g.init).collect(),
            memory: vec![0; module.memory_bytes()],
            frames: vec![frame],
            stack: Vec::new(),
            status: Status::Running,
            icount: 0,
            module,
        })
    }

    pub fn module(&self) -> &Arc<Module> {
        &self.module
    }

    pub fn status(&self) -> &Status {
        &self.status
    }

    pub fn is_running(&self) -> bool {
        self.status == Status::Running
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    pub fn globals(&self) -> &[i32] {
        &self.globals
    }

    pub fn stack(&self) -> &[i32] {
        &self.stack
    }

    pub fn memory(&self) -> &[u8] {
        &self.memory
    }

    /// Instructions executed since instantiation.
    pub fn icount(&self) -> u64 {
        self.icount
    }

    /// Identity of the next instruction.
    pub fn instr_id(&self) -> Result<InstrId, ExecError> {
        if !self.is_running() {
            return Err(ExecError::NotRunning);
        }
        let f = self.frames.last().ok_or(ExecError::NotRunning)?;
        Ok(InstrId::new(f.func, f.pc))
    }

    /// The next op, or `None` at a function end or when not running.
    pub fn next_op(&self) -> Option<&Op> {
        if !self.is_running() {
            return None;
        }
        let f = self.frames.last()?;
        self.module.function(f.func)?.code.get(f.pc as usize)
    }

    /// Primitive index and kind of the next instruction, without collecting args.
    pub fn next_prim(&self) -> Option<(u32, PrimKind)> {
        match self.next_op() {
            Some(Op::Call(j)) if self.module.is_import(*j) => self.module.prims.get(*j).map(|e| (*j, e.kind)),
            _ => None,
        }
    }

    pub fn classify(&self) -> Classification {
        if !self.is_running() {
            return Classification::Terminated;
        }
        match self.next_prim() {
            Some((j, kind)) => {
                let arity = self.module.prims.get(j).map_or(0, |e| e.arity) as usize;
                let args = self.stack[self.stack.len() - arity..].to_vec();
                match kind {
                    PrimKind::In => Classification::InputPrim(j, args),
                    PrimKind::Out => Classification::OutputPrim(j, args),
                }
            }
            None => Classification::NonPrim,
        }
    }

    pub(crate) fn trap(&mut self, reason: &str) {
        self.status = Status::Trapped(reason.to_string());
    }

    /// Executes one non-primitive instruction.
    pub fn step_det(&mut self) -> Result<(), ExecError> {
        if !self.is_running() {
            return Err(ExecError::NotRunning);
        }
        if self.next_prim().is_some() {
            return Err(ExecError::PrimitiveNext);
        }
        self.exec_det();
        Ok(())
    }

    /// Executes one instruction, drawing input values from `env`.
    pub fn step(&mut self, env: &mut Environment) -> Result<Option<PrimEvent>, ExecError> {
        if !self.is_running() {
            return Err(ExecError::NotRunning);
        }
        if self.next_prim().is_some() {
            self.step_prim(env).map(Some)
        } else {
            self.exec_det();
            Ok(None)
        }
    }

    fn exec_det(&mut self) {
        let ProgramState { module, frames, globals, stack, memory, status, icount } = self;
        let module: &Module = module;
        *icount += 1;
        let depth = frames.len();
        let frame = frames.last_mut().expect("running state has a frame");
        let func = module.function(frame.func).expect("frame of a defined function");
        let code = &func.code;
        let pc = frame.pc as usize;
        if pc == code.len() {
            do_return(module, frames, stack, status);
            return;
        }
        let mut next = frame.pc + 1;
        match &code[pc] {
            Op::Const(v) => stack.push(*v),
            Op::Binary(op) => {
                let b = stack.pop().unwrap();
                let a = stack.pop().unwrap();
                match eval_binop(*op, a, b) {
                    Ok(v) => stack.push(v),
                    Err(reason) => {
                        // leave operands in place so the trapped state shows them
                        stack.push(a);
                        stack.push(b);
                        *status = Status::Trapped(reason.to_string());
                        return;
                    }
                }
            }
            Op::Compare(op) => {
                let b = stack.pop().unwrap();
                let a = stack.pop().unwrap();
                stack.push(op.eval(a, b) as i32);
            }
            Op::Eqz => {
                let a = stack.pop().unwrap();
                stack.push((a == 0) as i32);
            }
            Op::LocalGet(i) => stack.push(frame.locals[*i as usize]),
            Op::LocalSet(i) => frame.locals[*i as usize] = stack.pop().unwrap(),
            Op::LocalTee(i) => frame.locals[*i as usize] = *stack.last().unwrap(),
            Op::GlobalGet(i) => stack.push(globals[*i as usize]),
            Op::GlobalSet(i) => globals[*i as usize] = stack.pop().unwrap(),
            Op::Load { offset } => {
                let addr = stack.pop().unwrap() as u32 as u64 + *offset as u64;
                if addr + 4 > memory.len() as u64 {
                    stack.push(addr as i32);
                    *status = Status::Trapped("out-of-bounds".to_string());
                    return;
                }
                let a = addr as usize;
                stack.push(i32::from_le_bytes(memory[a..a + 4].try_into().unwrap()));
            }
            Op::Store { offset } => {
                let v = stack.pop().unwrap();
                let base = stack.pop().unwrap();
                let addr = base as u32 as u64 + *offset as u64;
                if addr + 4 > memory.len() as u64 {
                    stack.push(base);
                    stack.push(v);
                    *status = Status::Trapped("out-of-bounds".to_string());
                    return;
                }
                let a = addr as usize;
                memory[a..a + 4].copy_from_slice(&v.to_le_bytes());
            }
            Op::Block { .. } | Op::Loop { .. } => {
                frame.labels.push(Label { opener: pc as u32, height: stack.len() as u32, alt: false })
            }
            Op::If { else_at, .. } => {
                let c = stack.pop().unwrap();
                let alt = c == 0;
                frame.labels.push(Label { opener: pc as u32, height: stack.len() as u32, alt });
                if alt {
                    next = *else_at;
                }
            }
            Op::Br(d) | Op::BrIf(d) => {
                let taken = matches!(code[pc], Op::Br(_)) || stack.pop().unwrap() != 0;
                if taken && *d as usize == frame.labels.len() {
                    // the function body is the outermost label
                    do_return(module, frames, stack, status);
                    return;
                }
                if taken {
                    next = branch(frame, stack, code, *d);
                }
            }
            Op::Call(j) => {
                if depth >= MAX_CALL_DEPTH {
                    *status = Status::Trapped("call-stack-exhausted".to_string());
                    return;
                }
                frame.pc = next;
                settle(frame, code);
                let callee = module.function(*j).expect("call target is a defined function");
                let base = stack.len() - callee.params as usize;
                let mut locals = stack.split_off(base);
                locals.resize(callee.frame_size(), 0);
                frames.push(Frame { func: *j, pc: 0, labels: Vec::new(), locals, base: base as u32 });
                return;
            }
            Op::Drop => {
                stack.pop();
            }
            Op::Return => {
                do_return(module, frames, stack, status);
                return;
            }
            Op::Nop => {}
        }
        frame.pc = next;
        settle(frame, code);
    }

    /// Executes the pending primitive call with a value from `env`.
    pub fn step_prim(&mut self, env: &mut Environment) -> Result<PrimEvent, ExecError> {
        let (j, args, kind) = match self.classify() {
            Classification::InputPrim(j, args) => (j, args, PrimKind::In),
            Classification::OutputPrim(j, args) => (j, args, PrimKind::Out),
            Classification::NonPrim => return Err(ExecError::MockOnNonPrim),
            Classification::Terminated => return Err(ExecError::NotRunning),
        };
        let entry = self.module.prims.get(j).expect("classified primitive exists");
        let value = match kind {
            PrimKind::In => match entry.range(&args) {
                Some(range) => Some(env.read(&entry.name, &args, range, self.icount)?),
                None => {
                    self.trap("empty-codomain");
                    return Ok(PrimEvent { prim: j, args, value: None });
                }
            },
            PrimKind::Out => {
                env.write(&entry.name, &args, self.icount);
                None
            }
        };
        self.finish_prim(args.len(), value);
        Ok(PrimEvent { prim: j, args, value })
    }

    /// Completes the pending input primitive with `v` instead of consulting an environment.
    pub fn step_mocked(&mut self, v: i32) -> Result<PrimEvent, ExecError> {
        let (j, args) = match self.classify() {
            Classification::InputPrim(j, args) => (j, args),
            Classification::Terminated => return Err(ExecError::NotRunning),
            _ => return Err(ExecError::MockOnNonPrim),
        };
        let entry = self.module.prims.get(j).expect("classified primitive exists");
        let (lo, hi) = entry.range(&args).unwrap_or((0, -1));
        if v < lo || v > hi {
            return Err(ExecError::MockOutOfCodomain { value: v, lo, hi });
        }
        self.finish_prim(args.len(), Some(v));
        Ok(PrimEvent { prim: j, args, value: Some(v) })
    }

    /// Completes a pending output primitive without performing its effect.
    pub(crate) fn skip_output(&mut self) -> Result<PrimEvent, ExecError> {
        match self.classify() {
            Classification::OutputPrim(j, args) => {
                self.finish_prim(args.len(), None);
                Ok(PrimEvent { prim: j, args, value: None })
            }
            Classification::Terminated => Err(ExecError::NotRunning),
            _ => Err(ExecError::MockOnNonPrim),
        }
    }

    /// Codomain of the pending input primitive, if any.
    pub fn pending_range(&self) -> Option<(i32, i32)> {
        match self.classify() {
            Classification::InputPrim(j, args) => self.module.prims.get(j)?.range(&args),
            _ => None,
        }
    }

    fn finish_prim(&mut self, arity: usize, value: Option<i32>) {
        self.icount += 1;
        let n = self.stack.len();
        self.stack.truncate(n - arity);
        if let Some(v) = value {
            self.stack.push(v);
        }
        let frame = self.frames.last_mut().unwrap();
        frame.pc += 1;
        let code = &self.module.function(frame.func).unwrap().code;
        settle(frame, code);
    }

    /// Assembles a state from raw parts; used by snapshot restore after validation.
    pub(crate) fn from_parts(
        module: Arc<Module>,
        frames: Vec<Frame>,
        globals: Vec<i32>,
        stack: Vec<i32>,
        memory: Vec<u8>,
        status: Status,
        icount: u64,
    ) -> Self {
        ProgramState { module, frames, globals, stack, memory, status, icount }
    }
}

fn do_return(module: &Module, frames: &mut Vec<Frame>, stack: &mut Vec<i32>, status: &mut Status) {
    let frame = frames.pop().unwrap();
    let results = module.function(frame.func).unwrap().results as usize;
    let top = stack.len() - results;
    stack.drain(frame.base as usize..top);
    if frames.is_empty() {
        *status = Status::Finished;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::wasm::parse::parse_module;

    fn load(text: &str) -> ProgramState {
        ProgramState::instantiate(Arc::new(parse_module(text).unwrap())).unwrap()
    }

    fn run(k: &mut ProgramState, env: &mut Environment) {
        let mut guard = 0;
        while k.is_running() {
            k.step(env).unwrap();
            guard += 1;
            assert!(guard < 100_000, "runaway program");
        }
    }

    const READ: &str = r#"(import "env" "chip_analog_read" (func $read (param i32) (result i32)))"#;
    const WRITE: &str = r#"(import "env" "chip_digital_write" (func $write (param i32 i32)))"#;

    #[test]
    fn empty_main_runs_then_finishes() {
        let mut k = load("(module (func $main))");
        assert!(k.is_running());
        assert!(k.stack().is_empty());
        assert_eq!(k.instr_id().unwrap(), InstrId::new(0, 0));
        k.step_det().unwrap();
        assert_eq!(k.status(), &Status::Finished);
        assert_eq!(k.classify(), Classification::Terminated);
    }

    #[test]
    fn global_initializer_copied() {
        let k = load("(module (global (mut i32) (i32.const 7)) (func $main))");
        assert_eq!(k.globals(), &[7]);
    }

    #[test]
    fn missing_entry() {
        let m = parse_module("(module (func $helper))").unwrap();
        assert_eq!(ProgramState::instantiate(Arc::new(m)).unwrap_err(), ExecError::MissingEntry);
    }

    #[test]
    fn if_takes_then_on_nonzero() {
        // 0: const 4, 1: if, 2: const 1 (A), 3: drop, 4: const 2 (B), 5: drop
        let mut k = load("(func $main i32.const 4 if i32.const 1 drop else i32.const 2 drop end)");
        k.step_det().unwrap();
        assert_eq!(k.stack(), &[4]);
        k.step_det().unwrap();
        assert!(k.stack().is_empty());
        assert_eq!(k.instr_id().unwrap().instr, 2);
        k.step_det().unwrap();
        k.step_det().unwrap();
        // then-arm exit skips the else body
        assert_eq!(k.instr_id().unwrap().instr, 6);
    }

    #[test]
    fn else_arm_on_zero() {
        let mut k = load("(func $main i32.const 0 if i32.const 1 drop else i32.const 2 drop end)");
        k.step_det().unwrap();
        k.step_det().unwrap();
        assert_eq!(k.instr_id().unwrap().instr, 4);
    }

    #[test]
    fn instr_ids_by_hand() {
        let mut k = load(
            "(func $main (local i32)
               block        ;; 0
                 i32.const 1 ;; 1
                 if          ;; 2
                   nop       ;; 3
                   nop       ;; 4
                 else
                   nop       ;; 5
                 end
               end)",
        );
        let mut seen = Vec::new();
        while k.is_running() {
            seen.push(k.instr_id().unwrap().instr);
            k.step_det().unwrap();
        }
        assert_eq!(seen, vec![0, 1, 2, 3, 4, 6]);
    }

    #[test]
    fn traps() {
        let mut k = load("(func $main i32.const 1 i32.const 0 i32.div_s drop)");
        k.step_det().unwrap();
        k.step_det().unwrap();
        k.step_det().unwrap();
        assert_eq!(k.status(), &Status::Trapped("div-by-zero".into()));

        let mut k = load("(func $main i32.const -2147483648 i32.const -1 i32.div_s drop)");
        for _ in 0..3 {
            k.step_det().unwrap();
        }
        assert_eq!(k.status(), &Status::Trapped("integer-overflow".into()));

        let mut k = load("(module (memory 1) (func $main i32.const 65533 i32.load drop))");
        k.step_det().unwrap();
        k.step_det().unwrap();
        assert_eq!(k.status(), &Status::Trapped("out-of-bounds".into()));

        let mut k = load("(func $main call $main)");
        run(&mut k, &mut Environment::default());
        assert_eq!(k.status(), &Status::Trapped("call-stack-exhausted".into()));
    }

    #[test]
    fn wrapping_arithmetic() {
        let mut k = load("(func $main (result i32) i32.const 2147483647 i32.const 1 i32.add)");
        run(&mut k, &mut Environment::default());
        assert_eq!(k.stack(), &[i32::MIN]);
        let mut k = load("(func $main (result i32) i32.const -7 i32.const 2 i32.rem_s)");
        run(&mut k, &mut Environment::default());
        assert_eq!(k.stack(), &[-1]);
    }

    #[test]
    fn loops_and_branches() {
        // sum 1..=10
        let mut k = load(
            "(func $main (result i32) (local $i i32) (local $s i32)
               (block $done
                 (loop $top
                   (local.set $i (i32.add (local.get $i) (i32.const 1)))
                   (local.set $s (i32.add (local.get $s) (local.get $i)))
                   (br_if $done (i32.ge_s (local.get $i) (i32.const 10)))
                   (br $top)))
               (local.get $s))",
        );
        run(&mut k, &mut Environment::default());
        assert_eq!(k.stack(), &[55]);
    }

    #[test]
    fn block_results_survive_branch() {
        let mut k = load(
            "(func $main (result i32)
               (block (result i32) (i32.const 9) (i32.const 3) (br_if 0) (drop) (i32.const 5)))",
        );
        run(&mut k, &mut Environment::default());
        assert_eq!(k.stack(), &[9]);
    }

    #[test]
    fn calls_and_returns() {
        let mut k = load(
            "(module
               (func $sq (param $x i32) (result i32) (return (i32.mul (local.get $x) (local.get $x))))
               (func $main (result i32) (i32.add (call $sq (i32.const 3)) (call $sq (i32.const 4)))))",
        );
        run(&mut k, &mut Environment::default());
        assert_eq!(k.stack(), &[25]);
    }

    #[test]
    fn classify_prims_without_popping() {
        let mut k = load(&format!("(module {READ} {WRITE} (func $main (drop (call $read (i32.const 12))) (call $write (i32.const 13) (i32.const 1))))"));
        assert_eq!(k.classify(), Classification::NonPrim);
        k.step_det().unwrap();
        assert_eq!(k.classify(), Classification::InputPrim(0, vec![12]));
        assert_eq!(k.stack(), &[12]);
        assert_eq!(k.step_det(), Err(ExecError::PrimitiveNext));
        let ev = k.step_mocked(224).unwrap();
        assert_eq!(ev.value, Some(224));
        assert_eq!(k.stack(), &[224]);
        k.step_det().unwrap();
        k.step_det().unwrap();
        k.step_det().unwrap();
        assert_eq!(k.classify(), Classification::OutputPrim(1, vec![13, 1]));
        let mut env = Environment::default();
        k.step_prim(&mut env).unwrap();
        assert_eq!(env.pins.get(&13), Some(&1));
        assert!(k.stack().is_empty());
    }

    #[test]
    fn mock_errors() {
        let mut k = load(&format!("(module {READ} (func $main (drop (call $read (i32.const 12)))))"));
        assert_eq!(k.step_mocked(0), Err(ExecError::MockOnNonPrim));
        k.step_det().unwrap();
        assert_eq!(k.step_mocked(4096), Err(ExecError::MockOutOfCodomain { value: 4096, lo: 0, hi: 4095 }));
        assert_eq!(k.step_mocked(-1), Err(ExecError::MockOutOfCodomain { value: -1, lo: 0, hi: 4095 }));
    }

    #[test]
    fn random_zero_traps() {
        let mut k = load(
            r#"(module (import "env" "random" (func $r (param i32) (result i32)))
                 (func $main (drop (call $r (i32.const 0)))))"#,
        );
        k.step_det().unwrap();
        assert!(matches!(k.step_mocked(0), Err(ExecError::MockOutOfCodomain { .. })));
        k.step_prim(&mut Environment::default()).unwrap();
        assert_eq!(k.status(), &Status::Trapped("empty-codomain".into()));
    }

    #[test]
    fn seeded_reads_stay_in_codomain() {
        let text = format!(
            "(module {READ} (func $main (local $i i32)
               (loop $l (drop (call $read (i32.const 0)))
                 (local.set $i (i32.add (local.get $i) (i32.const 1)))
                 (br_if $l (i32.lt_s (local.get $i) (i32.const 1000))))))"
        );
        let mut k = load(&text);
        let mut env = Environment::seeded(9);
        run(&mut k, &mut env);
        assert_eq!(env.reads(), 1000);
        for e in &env.effects {
            match e.kind {
                crate::wasm::prims::EffectKind::Read(v) => assert!((0..=4095).contains(&v)),
                _ => panic!("unexpected write"),
            }
        }
    }

    #[test]
    fn mock_matches_constant_environment() {
        let mut a = load(&format!("(module {READ} (func $main (drop (call $read (i32.const 3)))))"));
        a.step_det().unwrap();
        let mut b = a.clone();
        a.step_prim(&mut Environment::constant(17)).unwrap();
        b.step_mocked(17).unwrap();
        assert_eq!(a, b);
    }
}
