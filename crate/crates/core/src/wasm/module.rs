use std::fmt;

use serde::{Deserialize, Serialize};

use super::prims::PrimitiveTable;

/// Size of one linear-memory page.
pub const PAGE_SIZE: usize = 64 * 1024;
/// Largest memory the VM accepts, in pages.
pub const MAX_PAGES: u32 = 4;

/// Identity of an executable instruction site: the function index (in the
/// combined import+function index space) and the pre-order position of the
/// instruction inside that function's body.
///
/// Structured openers (`block`, `loop`, `if`) get an index; `else` and `end`
/// do not. Index `len(body)` names the implicit return at the function end.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct InstrId {
    pub func: u32,
    pub instr: u32,
}

impl InstrId {
    pub fn new(func: u32, instr: u32) -> Self {
        InstrId { func, instr }
    }
}

impl fmt::Display for InstrId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.func, self.instr)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    DivS,
    RemS,
    And,
    Or,
    Xor,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RelOp {
    Eq,
    Ne,
    LtS,
    LeS,
    GtS,
    GeS,
}

impl BinOp {
    pub fn mnemonic(self) -> &'static str {
        match self {
            BinOp::Add => "i32.add",
            BinOp::Sub => "i32.sub",
            BinOp::Mul => "i32.mul",
            BinOp::DivS => "i32.div_s",
            BinOp::RemS => "i32.rem_s",
            BinOp::And => "i32.and",
            BinOp::Or => "i32.or",
            BinOp::Xor => "i32.xor",
        }
    }
}

impl RelOp {
    pub fn mnemonic(self) -> &'static str {
        match self {
            RelOp::Eq => "i32.eq",
            RelOp::Ne => "i32.ne",
            RelOp::LtS => "i32.lt_s",
            RelOp::LeS => "i32.le_s",
            RelOp::GtS => "i32.gt_s",
            RelOp::GeS => "i32.ge_s",
        }
    }

    pub fn eval(self, a: i32, b: i32) -> bool {
        match self {
            RelOp::Eq => a == b,
            RelOp::Ne => a != b,
            RelOp::LtS => a < b,
            RelOp::LeS => a <= b,
            RelOp::GtS => a > b,
            RelOp::GeS => a >= b,
        }
    }
}

/// One instruction of a flattened function body.
///
/// Bodies are stored in pre-order: a structured opener is immediately
/// followed by its body, and the `end`/`else` markers are folded into the
/// opener as absolute positions.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Op {
    Const(i32),
    Binary(BinOp),
    Compare(RelOp),
    Eqz,
    LocalGet(u32),
    LocalSet(u32),
    LocalTee(u32),
    GlobalGet(u32),
    GlobalSet(u32),
    Load { offset: u32 },
    Store { offset: u32 },
    /// `end` is the position right after the block body.
    Block { end: u32, arity: u32 },
    Loop { end: u32, arity: u32 },
    /// Then-body is `pos+1..else_at`, else-body is `else_at..end`.
    If { else_at: u32, end: u32, arity: u32 },
    Br(u32),
    BrIf(u32),
    Call(u32),
    Drop,
    Return,
    Nop,
}

impl Op {
    pub fn mnemonic(&self) -> &'static str {
        match self {
            Op::Const(_) => "i32.const",
            Op::Binary(op) => op.mnemonic(),
            Op::Compare(op) => op.mnemonic(),
            Op::Eqz => "i32.eqz",
            Op::LocalGet(_) => "local.get",
            Op::LocalSet(_) => "local.set",
            Op::LocalTee(_) => "local.tee",
            Op::GlobalGet(_) => "global.get",
            Op::GlobalSet(_) => "global.set",
            Op::Load { .. } => "i32.load",
            Op::Store { .. } => "i32.store",
            Op::Block { .. } => "block",
            Op::Loop { .. } => "loop",
            Op::If { .. } => "if",
            Op::Br(_) => "br",
            Op::BrIf(_) => "br_if",
            Op::Call(_) => "call",
            Op::Drop => "drop",
            Op::Return => "return",
            Op::Nop => "nop",
        }
    }
}

/// Source position (1-based line and column).
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Pos {
    pub line: u32,
    pub col: u32,
}

impl fmt::Display for Pos {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.line, self.col)
    }
}

#[derive(Clone, Debug)]
pub struct Function {
    pub name: Option<String>,
    pub params: u32,
    pub results: u32,
    /// Declared locals, excluding parameters.
    pub locals: u32,
    pub code: Vec<Op>,
    /// Source position of every op in `code`.
    pub positions: Vec<Pos>,
    /// Operand-stack height (above the frame base) before each op, plus one
    /// entry for the function end. `None` marks dead code.
    pub heights: Vec<Option<u32>>,
}

impl Function {
    pub fn frame_size(&self) -> usize {
        (self.params + self.locals) as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Global {
    pub mutable: bool,
    pub init: i32,
}

/// An imported primitive as declared by the module.
#[derive(Clone, Debug)]
pub struct Import {
    pub module: String,
    pub name: String,
    pub params: u32,
    pub results: u32,
}

/// A validated module.
///
/// Function indices follow the WebAssembly convention: imports first, then
/// defined functions.
#[derive(Clone, Debug)]
pub struct Module {
    pub imports: Vec<Import>,
    pub functions: Vec<Function>,
    pub globals: Vec<Global>,
    pub memory_pages: u32,
    /// Entry function (exported as `main`, the `start` function, or `$main`).
    pub entry: Option<u32>,
    pub prims: PrimitiveTable,
    pub hash: [u8; 32],
}

impl Module {
    pub fn num_imports(&self) -> u32 {
        self.imports.len() as u32
    }

    pub fn is_import(&self, func: u32) -> bool {
        func < self.num_imports()
    }

    /// The defined function for a combined index, or `None` for imports.
    pub fn function(&self, func: u32) -> Option<&Function> {
        func.checked_sub(self.num_imports())
            .and_then(|i| self.functions.get(i as usize))
    }

    pub fn func_name(&self, func: u32) -> String {
        if let Some(imp) = self.imports.get(func as usize) {
            return imp.name.clone();
        }
        match self.function(func).and_then(|f| f.name.clone()) {
            Some(n) => n,
            None => format!("func{func}"),
        }
    }

    /// Resolves a function by `$name` (with or without the sigil) or index;
    /// `main` also names the entry function.
    pub fn resolve_func(&self, name: &str) -> Option<u32> {
        let bare = name.strip_prefix('$').unwrap_or(name);
        if let Ok(idx) = bare.parse::<u32>() {
            return (idx < self.num_imports() + self.functions.len() as u32).then_some(idx);
        }
        if let Some(i) = self.imports.iter().position(|imp| imp.name == bare) {
            return Some(i as u32);
        }
        self.functions
            .iter()
            .position(|f| f.name.as_deref() == Some(bare))
            .map(|i| i as u32 + self.num_imports())
            .or_else(|| self.entry.filter(|_| bare == "main"))
    }

    /// Parses `func:instr` where `func` is a name or index.
    pub fn parse_instr_id(&self, text: &str) -> Option<InstrId> {
        let (f, i) = text.rsplit_once(':')?;
        let func = self.resolve_func(f)?;
        let instr = i.trim().parse().ok()?;
        let body = self.function(func)?;
        (instr as usize <= body.code.len()).then_some(InstrId { func, instr })
    }

    pub fn memory_bytes(&self) -> usize {
        self.memory_pages as usize * PAGE_SIZE
    }

    /// Human readable rendering of an instruction site.
    pub fn describe(&self, id: InstrId) -> String {
        match self.function(id.func) {
            Some(f) => match f.code.get(id.instr as usize) {
                Some(op) => format!("{}:{} {}", self.func_name(id.func), id.instr, op.mnemonic()),
                None => format!("{}:{} <end>", self.func_name(id.func), id.instr),
            },
            None => format!("{id}"),
        }
    }
}
