//! Symbolic expressions, literals and path conditions.

use std::fmt;
use std::rc::Rc;

use crate::wasm::{BinOp, RelOp};

/// Expressions deeper than this are replaced by their concrete value.
pub const MAX_DEPTH: u32 = 512;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum UnOp {
    Eqz,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ExprKind {
    Const(i32),
    /// The d-th input read of an iteration.
    Sym(u32),
    Unop(UnOp, SymExpr),
    Binop(BinOp, SymExpr, SymExpr),
    /// 0/1-valued comparison.
    Relop(RelOp, SymExpr, SymExpr),
}

#[derive(Debug, PartialEq, Eq)]
struct Node {
    kind: ExprKind,
    depth: u32,
    /// Largest variable index mentioned, if any.
    max_var: Option<u32>,
}

/// Shared, immutable symbolic expression.
#[derive(Clone, PartialEq, Eq)]
pub struct SymExpr(Rc<Node>);

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EvalError {
    #[error("variable x{0} has no value")]
    Unbound(u32),
}

impl SymExpr {
    fn make(kind: ExprKind) -> Self {
        let (depth, max_var) = match &kind {
            ExprKind::Const(_) => (1, None),
            ExprKind::Sym(d) => (1, Some(*d)),
            ExprKind::Unop(_, a) => (a.depth() + 1, a.max_var()),
            ExprKind::Binop(_, a, b) | ExprKind::Relop(_, a, b) => {
                (a.depth().max(b.depth()) + 1, a.max_var().max(b.max_var()))
            }
        };
        SymExpr(Rc::new(Node { kind, depth, max_var }))
    }

    pub fn constant(v: i32) -> Self {
        SymExpr::make(ExprKind::Const(v))
    }

    pub fn sym(d: u32) -> Self {
        SymExpr::make(ExprKind::Sym(d))
    }

    /// `op(a)`; `concrete` is the value the expression has in the current run.
    pub fn unop(op: UnOp, a: &SymExpr, a_val: i32, concrete: i32) -> Self {
        SymExpr::make(ExprKind::Unop(op, a.collapse(a_val))).cap(concrete)
    }

    /// `op(a, b)` with ground operands collapsed to constants first.
    pub fn binop(op: BinOp, a: &SymExpr, a_val: i32, b: &SymExpr, b_val: i32, concrete: i32) -> Self {
        let a = a.collapse(a_val);
        let b = b.collapse(b_val);
        SymExpr::make(ExprKind::Binop(op, a, b)).cap(concrete)
    }

    pub fn relop(op: RelOp, a: &SymExpr, a_val: i32, b: &SymExpr, b_val: i32, concrete: i32) -> Self {
        let a = a.collapse(a_val);
        let b = b.collapse(b_val);
        SymExpr::make(ExprKind::Relop(op, a, b)).cap(concrete)
    }

    fn collapse(&self, value: i32) -> SymExpr {
        if self.is_ground() && !matches!(self.kind(), ExprKind::Const(_)) {
            SymExpr::constant(value)
        } else {
            self.clone()
        }
    }

    fn cap(self, concrete: i32) -> SymExpr {
        if self.depth() > MAX_DEPTH {
            SymExpr::constant(concrete)
        } else {
            self
        }
    }

    pub fn kind(&self) -> &ExprKind {
        &self.0.kind
    }

    pub fn depth(&self) -> u32 {
        self.0.depth
    }

    pub fn max_var(&self) -> Option<u32> {
        self.0.max_var
    }

    /// True if no input variable occurs.
    pub fn is_ground(&self) -> bool {
        self.0.max_var.is_none()
    }

    pub fn as_const(&self) -> Option<i32> {
        match self.kind() {
            ExprKind::Const(v) => Some(*v),
            _ => None,
        }
    }

    /// Evaluates under `env` (index d holds x_d). Division follows SMT-LIB
    /// `bvsdiv`/`bvsrem`, so it is total.
    pub fn eval(&self, env: &[i32]) -> Result<i32, EvalError> {
        Ok(match self.kind() {
            ExprKind::Const(v) => *v,
            ExprKind::Sym(d) => *env.get(*d as usize).ok_or(EvalError::Unbound(*d))?,
            ExprKind::Unop(UnOp::Eqz, a) => (a.eval(env)? == 0) as i32,
            ExprKind::Binop(op, a, b) => total_binop(*op, a.eval(env)?, b.eval(env)?),
            ExprKind::Relop(op, a, b) => op.eval(a.eval(env)?, b.eval(env)?) as i32,
        })
    }

    /// Variables mentioned, ascending.
    pub fn vars(&self) -> Vec<u32> {
        let mut out = Vec::new();
        self.collect_vars(&mut out);
        out.sort_unstable();
        out.dedup();
        out
    }

    fn collect_vars(&self, out: &mut Vec<u32>) {
        if self.is_ground() {
            return;
        }
        match self.kind() {
            ExprKind::Const(_) => {}
            ExprKind::Sym(d) => out.push(*d),
            ExprKind::Unop(_, a) => a.collect_vars(out),
            ExprKind::Binop(_, a, b) | ExprKind::Relop(_, a, b) => {
                a.collect_vars(out);
                b.collect_vars(out);
            }
        }
    }

    /// Constants occurring in the expression.
    pub fn constants(&self, out: &mut Vec<i32>) {
        match self.kind() {
            ExprKind::Const(v) => out.push(*v),
            ExprKind::Sym(_) => {}
            ExprKind::Unop(_, a) => a.constants(out),
            ExprKind::Binop(_, a, b) | ExprKind::Relop(_, a, b) => {
                a.constants(out);
                b.constants(out);
            }
        }
    }
}

/// Total version of the wasm binary operators (SMT-LIB division semantics).
pub fn total_binop(op: BinOp, a: i32, b: i32) -> i32 {
    match op {
        BinOp::DivS if b == 0 => {
            if a < 0 {
                1
            } else {
                -1
            }
        }
        BinOp::RemS if b == 0 => a,
        BinOp::DivS => a.wrapping_div(b),
        BinOp::RemS => a.wrapping_rem(b),
        _ => crate::wasm::exec::binop(op, a, b).expect("non-trapping operator"),
    }
}

impl fmt::Debug for SymExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

impl fmt::Display for SymExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind() {
            ExprKind::Const(v) => write!(f, "{v}"),
            ExprKind::Sym(d) => write!(f, "x{d}"),
            ExprKind::Unop(UnOp::Eqz, a) => write!(f, "(eqz {a})"),
            ExprKind::Binop(op, a, b) => write!(f, "({} {a} {b})", op.mnemonic().trim_start_matches("i32.")),
            ExprKind::Relop(op, a, b) => write!(f, "({} {a} {b})", op.mnemonic().trim_start_matches("i32.")),
        }
    }
}

/// Atomic constraint with a polarity.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Literal {
    /// `expr != 0` when `taken`, `expr == 0` otherwise.
    Branch { expr: SymExpr, taken: bool },
    /// `lo <= x_var <= hi` when `inside`, its negation otherwise.
    Range { var: u32, lo: i32, hi: i32, inside: bool },
}

impl Literal {
    pub fn negate(&self) -> Literal {
        match self {
            Literal::Branch { expr, taken } => Literal::Branch { expr: expr.clone(), taken: !taken },
            Literal::Range { var, lo, hi, inside } => Literal::Range { var: *var, lo: *lo, hi: *hi, inside: !inside },
        }
    }

    pub fn eval(&self, env: &[i32]) -> Result<bool, EvalError> {
        match self {
            Literal::Branch { expr, taken } => Ok((expr.eval(env)? != 0) == *taken),
            Literal::Range { var, lo, hi, inside } => {
                let x = *env.get(*var as usize).ok_or(EvalError::Unbound(*var))?;
                Ok((*lo <= x && x <= *hi) == *inside)
            }
        }
    }

    pub fn max_var(&self) -> Option<u32> {
        match self {
            Literal::Branch { expr, .. } => expr.max_var(),
            Literal::Range { var, .. } => Some(*var),
        }
    }

    pub fn vars(&self) -> Vec<u32> {
        match self {
            Literal::Branch { expr, .. } => expr.vars(),
            Literal::Range { var, .. } => vec![*var],
        }
    }
}

impl fmt::Display for Literal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Literal::Branch { expr, taken: true } => write!(f, "{expr} != 0"),
            Literal::Branch { expr, taken: false } => write!(f, "{expr} == 0"),
            Literal::Range { var, lo, hi, inside: true } => write!(f, "x{var} in [{lo}, {hi}]"),
            Literal::Range { var, lo, hi, inside: false } => write!(f, "x{var} not in [{lo}, {hi}]"),
        }
    }
}

/// Conjunction of literals in execution order.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct PathCondition {
    pub conjuncts: Vec<Literal>,
}

impl PathCondition {
    pub fn new() -> Self {
        PathCondition::default()
    }

    pub fn push(&mut self, lit: Literal) {
        self.conjuncts.push(lit);
    }

    pub fn len(&self) -> usize {
        self.conjuncts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.conjuncts.is_empty()
    }

    pub fn eval(&self, env: &[i32]) -> Result<bool, EvalError> {
        for c in &self.conjuncts {
            if !c.eval(env)? {
                return Ok(false);
            }
        }
        Ok(true)
    }

    /// Branch literals only (the decisions a run took on symbolic data).
    pub fn branches(&self) -> impl Iterator<Item = &Literal> {
        self.conjuncts.iter().filter(|c| matches!(c, Literal::Branch { .. }))
    }

    /// `¬π` as a disjunction.
    pub fn negation(&self) -> Vec<Literal> {
        self.conjuncts.iter().map(Literal::negate).collect()
    }
}

impl fmt::Display for PathCondition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.conjuncts.is_empty() {
            return write!(f, "true");
        }
        for (i, c) in self.conjuncts.iter().enumerate() {
            if i > 0 {
                write!(f, " && ")?;
            }
            write!(f, "{c}")?;
        }
        Ok(())
    }
}
