//! Parser and validator for the WebAssembly text-format subset.
//!
//! Both the flat (`i32.const 1 i32.const 2 i32.add`) and the folded
//! (`(i32.add (i32.const 1) (i32.const 2))`) instruction syntaxes are
//! accepted. The result is a [`Module`] whose function bodies are flattened
//! in pre-order, so an instruction's position in `code` is its [`InstrId`]
//! index.
//!
//! [`InstrId`]: super::module::InstrId

use std::collections::HashMap;

use sha2::{Digest, Sha256};

use super::module::{BinOp, Function, Global, Import, Module, Op, Pos, RelOp, MAX_PAGES};
use super::prims::{builtin, PrimKind, PrimitiveTable};

#[derive(Debug, Clone, thiserror::Error, PartialEq, Eq)]
pub enum ParseError {
    #[error("{pos}: syntax error: {msg}")]
    Syntax { pos: Pos, msg: String },
    #[error("{pos}: unknown instruction `{name}`")]
    UnknownInstruction { pos: Pos, name: String },
    #[error("{pos}: type mismatch: {msg}")]
    Type { pos: Pos, msg: String },
    #[error("{pos}: unresolved {what} `{name}`")]
    Unresolved { pos: Pos, what: &'static str, name: String },
}

impl ParseError {
    pub fn pos(&self) -> Pos {
        match self {
            ParseError::Syntax { pos, .. }
            | ParseError::UnknownInstruction { pos, .. }
            | ParseError::Type { pos, .. }
            | ParseError::Unresolved { pos, .. } => *pos,
        }
    }
}

type Result<T> = std::result::Result<T, ParseError>;

fn syntax<T>(pos: Pos, msg: impl Into<String>) -> Result<T> {
    Err(ParseError::Syntax { pos, msg: msg.into() })
}

fn type_err<T>(pos: Pos, msg: impl Into<String>) -> Result<T> {
    Err(ParseError::Type { pos, msg: msg.into() })
}

// ---------------------------------------------------------------------------
// S-expressions

#[derive(Debug, Clone)]
enum Sexp {
    Atom(String, Pos),
    Str(String, Pos),
    List(Vec<Sexp>, Pos),
}

impl Sexp {
    fn pos(&self) -> Pos {
        match self {
            Sexp::Atom(_, p) | Sexp::Str(_, p) | Sexp::List(_, p) => *p,
        }
    }

    fn atom(&self) -> Option<&str> {
        match self {
            Sexp::Atom(a, _) => Some(a),
            _ => None,
        }
    }

    /// Head keyword of a list, e.g. `func` for `(func ...)`.
    fn head(&self) -> Option<&str> {
        match self {
            Sexp::List(items, _) => items.first().and_then(Sexp::atom),
            _ => None,
        }
    }

    fn items(&self) -> &[Sexp] {
        match self {
            Sexp::List(items, _) => items,
            _ => &[],
        }
    }
}

struct Lexer<'a> {
    chars: std::iter::Peekable<std::str::Chars<'a>>,
    line: u32,
    col: u32,
}

impl<'a> Lexer<'a> {
    fn new(text: &'a str) -> Self {
        Lexer { chars: text.chars().peekable(), line: 1, col: 1 }
    }

    fn pos(&self) -> Pos {
        Pos { line: self.line, col: self.col }
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.chars.next()?;
        if c == '\n' {
            self.line += 1;
            self.col = 1;
        } else {
            self.col += 1;
        }
        Some(c)
    }

    fn skip_trivia(&mut self) -> Result<()> {
        loop {
            match self.chars.peek() {
                Some(c) if c.is_whitespace() => {
                    self.bump();
                }
                Some(';') => {
                    let start = self.pos();
                    self.bump();
                    if self.chars.peek() != Some(&';') {
                        return syntax(start, "stray `;`");
                    }
                    while let Some(c) = self.bump() {
                        if c == '\n' {
                            break;
                        }
                    }
                }
                Some('(') => {
                    // block comment `(; ... ;)`, possibly nested
                    let mut look = self.chars.clone();
                    look.next();
                    if look.peek() != Some(&';') {
                        return Ok(());
                    }
                    let start = self.pos();
                    self.bump();
                    self.bump();
                    let mut depth = 1;
                    let mut prev = ' ';
                    while depth > 0 {
                        let c = match self.bump() {
                            Some(c) => c,
                            None => return syntax(start, "unterminated block comment"),
                        };
                        if prev == ';' && c == ')' {
                            depth -= 1;
                            prev = ' ';
                        } else if prev == '(' && c == ';' {
                            depth += 1;
                            prev = ' ';
                        } else {
                            prev = c;
                        }
                    }
                }
                _ => return Ok(()),
            }
        }
    }

    fn parse_all(mut self) -> Result<Vec<Sexp>> {
        let mut stack: Vec<(Vec<Sexp>, Pos)> = vec![(Vec::new(), self.pos())];
        loop {
            self.skip_trivia()?;
            let pos = self.pos();
            match self.chars.peek().copied() {
                None => break,
                Some('(') => {
                    self.bump();
                    stack.push((Vec::new(), pos));
                }
                Some(')') => {
                    self.bump();
                    if stack.len() == 1 {
                        return syntax(pos, "unbalanced `)`");
                    }
                    let (items, start) = stack.pop().unwrap();
                    stack.last_mut().unwrap().0.push(Sexp::List(items, start));
                }
                Some('"') => {
                    self.bump();
                    let mut s = String::new();
                    loop {
                        match self.bump() {
                            Some('"') => break,
                            Some('\\') => match self.bump() {
                                Some('n') => s.push('\n'),
                                Some('t') => s.push('\t'),
                                Some(c) => s.push(c),
                                None => return syntax(pos, "unterminated string"),
                            },
                            Some(c) => s.push(c),
                            None => return syntax(pos, "unterminated string"),
                        }
                    }
                    stack.last_mut().unwrap().0.push(Sexp::Str(s, pos));
                }
                Some(_) => {
                    let mut a = String::new();
                    while let Some(&c) = self.chars.peek() {
                        if c.is_whitespace() || c == '(' || c == ')' || c == '"' || c == ';' {
                            break;
                        }
                        a.push(c);
                        self.bump();
                    }
                    stack.last_mut().unwrap().0.push(Sexp::Atom(a, pos));
                }
            }
        }
        if stack.len() != 1 {
            let (_, start) = stack.pop().unwrap();
            return syntax(start, "unclosed `(`");
        }
        Ok(stack.pop().unwrap().0)
    }
}

fn parse_int(text: &str, pos: Pos) -> Result<i64> {
    let t = text.replace('_', "");
    let (neg, digits) = match t.strip_prefix('-') {
        Some(d) => (true, d.to_string()),
        None => (false, t.strip_prefix('+').unwrap_or(&t).to_string()),
    };
    let mag = if let Some(hex) = digits.strip_prefix("0x") {
        i64::from_str_radix(hex, 16)
    } else {
        digits.parse::<i64>()
    };
    match mag {
        Ok(m) => Ok(if neg { -m } else { m }),
        Err(_) => syntax(pos, format!("invalid integer `{text}`")),
    }
}

fn parse_i32(text: &str, pos: Pos) -> Result<i32> {
    let v = parse_int(text, pos)?;
    if v < i32::MIN as i64 || v > u32::MAX as i64 {
        return syntax(pos, format!("constant `{text}` out of i32 range"));
    }
    Ok(v as u32 as i32)
}

fn parse_u32(text: &str, pos: Pos) -> Result<u32> {
    let v = parse_int(text, pos)?;
    u32::try_from(v).or_else(|_| syntax(pos, format!("expected unsigned index, got `{text}`")))
}

fn is_id(s: &str) -> bool {
    s.starts_with('$') && s.len() > 1
}

// ---------------------------------------------------------------------------
// Instruction trees (pre-flattening)

#[derive(Debug, Clone)]
enum Node {
    Plain(Op, Pos),
    Block { arity: u32, body: Vec<Node>, pos: Pos },
    Loop { arity: u32, body: Vec<Node>, pos: Pos },
    If { arity: u32, then: Vec<Node>, els: Vec<Node>, has_else: bool, pos: Pos },
}

/// Name tables visible while parsing a function body.
struct Scope<'a> {
    funcs: &'a HashMap<String, u32>,
    globals: &'a HashMap<String, u32>,
    locals: HashMap<String, u32>,
    labels: Vec<Option<String>>,
}

impl Scope<'_> {
    fn index(&self, table: &HashMap<String, u32>, what: &'static str, s: &Sexp) -> Result<u32> {
        let pos = s.pos();
        match s.atom() {
            Some(a) if is_id(a) => table
                .get(&a[1..])
                .copied()
                .ok_or_else(|| ParseError::Unresolved { pos, what, name: a.to_string() }),
            Some(a) => parse_u32(a, pos),
            None => syntax(pos, format!("expected {what} reference")),
        }
    }

    fn label(&self, s: &Sexp) -> Result<u32> {
        let pos = s.pos();
        match s.atom() {
            Some(a) if is_id(a) => self
                .labels
                .iter()
                .rev()
                .position(|l| l.as_deref() == Some(&a[1..]))
                .map(|d| d as u32)
                .ok_or_else(|| ParseError::Unresolved { pos, what: "label", name: a.to_string() }),
            Some(a) => parse_u32(a, pos),
            None => syntax(pos, "expected label"),
        }
    }
}

fn simple_op(name: &str) -> Option<Op> {
    Some(match name {
        "i32.add" => Op::Binary(BinOp::Add),
        "i32.sub" => Op::Binary(BinOp::Sub),
        "i32.mul" => Op::Binary(BinOp::Mul),
        "i32.div_s" => Op::Binary(BinOp::DivS),
        "i32.rem_s" => Op::Binary(BinOp::RemS),
        "i32.and" => Op::Binary(BinOp::And),
        "i32.or" => Op::Binary(BinOp::Or),
        "i32.xor" => Op::Binary(BinOp::Xor),
        "i32.eq" => Op::Compare(RelOp::Eq),
        "i32.ne" => Op::Compare(RelOp::Ne),
        "i32.lt_s" => Op::Compare(RelOp::LtS),
        "i32.le_s" => Op::Compare(RelOp::LeS),
        "i32.gt_s" => Op::Compare(RelOp::GtS),
        "i32.ge_s" => Op::Compare(RelOp::GeS),
        "i32.eqz" => Op::Eqz,
        "drop" => Op::Drop,
        "return" => Op::Return,
        "nop" => Op::Nop,
        _ => return None,
    })
}

/// Number of immediates an instruction takes (excluding memarg keywords).
fn immediate_count(name: &str) -> Option<usize> {
    match name {
        "i32.const" | "local.get" | "local.set" | "local.tee" | "global.get" | "global.set" | "br" | "br_if"
        | "call" => Some(1),
        _ if simple_op(name).is_some() => Some(0),
        "i32.load" | "i32.store" => Some(0),
        _ => None,
    }
}

impl Scope<'_> {
    /// Builds a plain (non-structured) instruction from its mnemonic and immediates.
    fn plain(&self, name: &str, imms: &[Sexp], pos: Pos) -> Result<Op> {
        if let Some(op) = simple_op(name) {
            return Ok(op);
        }
        let first = || imms.first().ok_or_else(|| ParseError::Syntax { pos, msg: format!("`{name}` needs an immediate") });
        Ok(match name {
            "i32.const" => {
                let s = first()?;
                Op::Const(parse_i32(s.atom().unwrap_or(""), s.pos())?)
            }
            "local.get" => Op::LocalGet(self.index(&self.locals, "local", first()?)?),
            "local.set" => Op::LocalSet(self.index(&self.locals, "local", first()?)?),
            "local.tee" => Op::LocalTee(self.index(&self.locals, "local", first()?)?),
            "global.get" => Op::GlobalGet(self.index(self.globals, "global", first()?)?),
            "global.set" => Op::GlobalSet(self.index(self.globals, "global", first()?)?),
            "br" => Op::Br(self.label(first()?)?),
            "br_if" => Op::BrIf(self.label(first()?)?),
            "call" => Op::Call(self.index(self.funcs, "function", first()?)?),
            "i32.load" | "i32.store" => {
                let mut offset = 0;
                for imm in imms {
                    let a = imm.atom().unwrap_or("");
                    if let Some(v) = a.strip_prefix("offset=") {
                        offset = parse_u32(v, imm.pos())?;
                    } else if let Some(v) = a.strip_prefix("align=") {
                        let align = parse_u32(v, imm.pos())?;
                        if !matches!(align, 1 | 2 | 4) {
                            return type_err(imm.pos(), format!("alignment {align} exceeds natural alignment"));
                        }
                    } else {
                        return syntax(imm.pos(), format!("unexpected memory argument `{a}`"));
                    }
                }
                if name == "i32.load" {
                    Op::Load { offset }
                } else {
                    Op::Store { offset }
                }
            }
            _ => return Err(ParseError::UnknownInstruction { pos, name: name.to_string() }),
        })
    }

    /// Parses an optional `$label` and `(result i32)` at `items[*i..]`.
    fn block_header(&self, items: &[Sexp], i: &mut usize) -> Result<(Option<String>, u32)> {
        let mut label = None;
        if let Some(a) = items.get(*i).and_then(Sexp::atom) {
            if is_id(a) {
                label = Some(a[1..].to_string());
                *i += 1;
            }
        }
        let mut arity = 0;
        while let Some(s) = items.get(*i) {
            match s.head() {
                Some("result") => {
                    arity += result_count(s)?;
                    *i += 1;
                }
                Some("param") => return type_err(s.pos(), "block parameters are not supported"),
                _ => break,
            }
        }
        if arity > 1 {
            return type_err(items[*i - 1].pos(), "multi-value blocks are not supported");
        }
        Ok((label, arity))
    }

    /// Parses a flat instruction sequence until one of the `stops` keywords
    /// (left unconsumed) or the end of `items`.
    fn seq(&mut self, items: &[Sexp], i: &mut usize, stops: &[&str]) -> Result<Vec<Node>> {
        let mut out = Vec::new();
        while let Some(item) = items.get(*i) {
            match item {
                Sexp::List(..) => {
                    *i += 1;
                    self.folded(item, &mut out)?;
                }
                Sexp::Str(_, pos) => return syntax(*pos, "unexpected string in function body"),
                Sexp::Atom(name, pos) => {
                    let pos = *pos;
                    if stops.contains(&name.as_str()) {
                        return Ok(out);
                    }
                    *i += 1;
                    match name.as_str() {
                        "block" | "loop" => {
                            let (label, arity) = self.block_header(items, i)?;
                            self.labels.push(label);
                            let body = self.seq(items, i, &["end"])?;
                            self.labels.pop();
                            self.expect_end(items, i, pos)?;
                            out.push(if name == "block" {
                                Node::Block { arity, body, pos }
                            } else {
                                Node::Loop { arity, body, pos }
                            });
                        }
                        "if" => {
                            let (label, arity) = self.block_header(items, i)?;
                            self.labels.push(label);
                            let then = self.seq(items, i, &["else", "end"])?;
                            let mut els = Vec::new();
                            let mut has_else = false;
                            if items.get(*i).and_then(Sexp::atom) == Some("else") {
                                *i += 1;
                                skip_label(items, i);
                                has_else = true;
                                els = self.seq(items, i, &["end"])?;
                            }
                            self.labels.pop();
                            self.expect_end(items, i, pos)?;
                            out.push(Node::If { arity, then, els, has_else, pos });
                        }
                        "else" | "end" => return syntax(pos, format!("unexpected `{name}`")),
                        _ => {
                            let n = immediate_count(name)
                                .ok_or_else(|| ParseError::UnknownInstruction { pos, name: name.clone() })?;
                            let mut imms: Vec<Sexp> = items[*i..].iter().take(n).cloned().collect();
                            *i += imms.len();
                            if matches!(name.as_str(), "i32.load" | "i32.store") {
                                while let Some(a) = items.get(*i).and_then(Sexp::atom) {
                                    if a.starts_with("offset=") || a.starts_with("align=") {
                                        imms.push(items[*i].clone());
                                        *i += 1;
                                    } else {
                                        break;
                                    }
                                }
                            }
                            if imms.iter().any(|s| matches!(s, Sexp::List(..))) {
                                return syntax(pos, format!("`{name}` immediate must be an atom"));
                            }
                            out.push(Node::Plain(self.plain(name, &imms, pos)?, pos));
                        }
                    }
                }
            }
        }
        Ok(out)
    }

    fn expect_end(&self, items: &[Sexp], i: &mut usize, open: Pos) -> Result<()> {
        if items.get(*i).and_then(Sexp::atom) == Some("end") {
            *i += 1;
            skip_label(items, i);
            Ok(())
        } else {
            syntax(open, "missing `end`")
        }
    }

    /// Parses one folded instruction, appending its flat equivalent.
    fn folded(&mut self, expr: &Sexp, out: &mut Vec<Node>) -> Result<()> {
        let items = expr.items();
        let pos = expr.pos();
        let name = match items.first().and_then(Sexp::atom) {
            Some(n) => n,
            None => return syntax(pos, "expected instruction"),
        };
        let mut i = 1;
        match name {
            "block" | "loop" => {
                let (label, arity) = self.block_header(items, &mut i)?;
                self.labels.push(label);
                let body = self.seq(items, &mut i, &[])?;
                self.labels.pop();
                out.push(if name == "block" { Node::Block { arity, body, pos } } else { Node::Loop { arity, body, pos } });
            }
            "if" => {
                let (label, arity) = self.block_header(items, &mut i)?;
                // condition operands come before (then ...)
                while let Some(s) = items.get(i) {
                    if matches!(s.head(), Some("then") | Some("else")) {
                        break;
                    }
                    if !matches!(s, Sexp::List(..)) {
                        return syntax(s.pos(), "expected folded condition or `(then ...)`");
                    }
                    self.folded(s, out)?;
                    i += 1;
                }
                self.labels.push(label);
                let then = match items.get(i) {
                    Some(t) if t.head() == Some("then") => {
                        let mut j = 1;
                        i += 1;
                        self.seq(t.items(), &mut j, &[])?
                    }
                    _ => return syntax(pos, "folded `if` needs `(then ...)`"),
                };
                let mut els = Vec::new();
                let mut has_else = false;
                if let Some(e) = items.get(i) {
                    if e.head() != Some("else") {
                        return syntax(e.pos(), "expected `(else ...)`");
                    }
                    let mut j = 1;
                    els = self.seq(e.items(), &mut j, &[])?;
                    has_else = true;
                    i += 1;
                }
                self.labels.pop();
                if let Some(extra) = items.get(i) {
                    return syntax(extra.pos(), "trailing tokens after `if`");
                }
                out.push(Node::If { arity, then, els, has_else, pos });
            }
            _ => {
                let n = immediate_count(name)
                    .ok_or_else(|| ParseError::UnknownInstruction { pos, name: name.to_string() })?;
                let mut imms = Vec::new();
                while imms.len() < n {
                    match items.get(i) {
                        Some(s @ Sexp::Atom(..)) => {
                            imms.push(s.clone());
                            i += 1;
                        }
                        _ => return syntax(pos, format!("`{name}` needs an immediate")),
                    }
                }
                while let Some(s @ Sexp::Atom(a, _)) = items.get(i) {
                    if a.starts_with("offset=") || a.starts_with("align=") {
                        imms.push(s.clone());
                        i += 1;
                    } else {
                        return syntax(s.pos(), format!("unexpected token `{a}`"));
                    }
                }
                for operand in &items[i..] {
                    if !matches!(operand, Sexp::List(..)) {
                        return syntax(operand.pos(), "operands of folded instructions must be folded");
                    }
                    self.folded(operand, out)?;
                }
                out.push(Node::Plain(self.plain(name, &imms, pos)?, pos));
            }
        }
        Ok(())
    }
}

fn skip_label(items: &[Sexp], i: &mut usize) {
    if items.get(*i).and_then(Sexp::atom).is_some_and(is_id) {
        *i += 1;
    }
}

fn result_count(s: &Sexp) -> Result<u32> {
    let mut n = 0;
    for t in &s.items()[1..] {
        match t.atom() {
            Some("i32") => n += 1,
            _ => return type_err(t.pos(), "only i32 values are supported"),
        }
    }
    Ok(n)
}

// ---------------------------------------------------------------------------
// Validation

struct Ctrl {
    /// Stack height at block entry.
    height: usize,
    /// Values produced at the block end.
    results: u32,
    /// Values a branch to this label carries (0 for loops).
    label_arity: u32,
    unreachable: bool,
    /// Entered from dead code.
    dead: bool,
}

struct Validator<'a> {
    func_sigs: &'a [(u32, u32)],
    globals: &'a [Global],
    has_memory: bool,
    nlocals: u32,
    height: usize,
    ctrls: Vec<Ctrl>,
    heights: Vec<Option<u32>>,
}

impl Validator<'_> {
    fn pop(&mut self, n: u32, pos: Pos) -> Result<()> {
        for _ in 0..n {
            let ctrl = self.ctrls.last().unwrap();
            if self.height == ctrl.height {
                if ctrl.unreachable {
                    continue;
                }
                return type_err(pos, "stack underflow");
            }
            self.height -= 1;
        }
        Ok(())
    }

    fn push(&mut self, n: u32) {
        self.height += n as usize;
    }

    fn set_unreachable(&mut self) {
        let ctrl = self.ctrls.last_mut().unwrap();
        self.height = ctrl.height;
        ctrl.unreachable = true;
    }

    fn check_end(&mut self, pos: Pos) -> Result<()> {
        let ctrl = self.ctrls.last().unwrap();
        let expect = ctrl.height + ctrl.results as usize;
        if self.height == expect || (ctrl.unreachable && self.height <= expect) {
            self.height = expect;
            Ok(())
        } else if self.height < expect {
            type_err(pos, "stack underflow at block end")
        } else {
            type_err(pos, format!("{} value(s) left on the stack at block end", self.height - ctrl.height))
        }
    }

    fn block(&mut self, body: &[Node], results: u32, label_arity: u32, pos: Pos) -> Result<()> {
        let dead = self.ctrls.last().is_some_and(|c| c.unreachable || c.dead);
        self.ctrls.push(Ctrl { height: self.height, results, label_arity, unreachable: false, dead });
        self.seq(body)?;
        self.check_end(pos)?;
        let ctrl = self.ctrls.pop().unwrap();
        self.height = ctrl.height;
        Ok(())
    }

    fn label_arity(&self, depth: u32, pos: Pos) -> Result<u32> {
        let n = self.ctrls.len();
        if depth as usize >= n {
            return Err(ParseError::Unresolved { pos, what: "label", name: depth.to_string() });
        }
        Ok(self.ctrls[n - 1 - depth as usize].label_arity)
    }

    fn seq(&mut self, nodes: &[Node]) -> Result<()> {
        for node in nodes {
            let ctrl = self.ctrls.last().unwrap();
            self.heights.push((!ctrl.unreachable && !ctrl.dead).then_some(self.height as u32));
            match node {
                Node::Block { arity, body, pos } => {
                    self.block(body, *arity, *arity, *pos)?;
                    self.push(*arity);
                }
                Node::Loop { arity, body, pos } => {
                    self.block(body, *arity, 0, *pos)?;
                    self.push(*arity);
                }
                Node::If { arity, then, els, has_else, pos } => {
                    self.pop(1, *pos)?;
                    if *arity > 0 && !has_else {
                        return type_err(*pos, "`if` with a result needs an `else`");
                    }
                    self.block(then, *arity, *arity, *pos)?;
                    self.block(els, *arity, *arity, *pos)?;
                    self.push(*arity);
                }
                Node::Plain(op, pos) => self.op(op, *pos)?,
            }
        }
        Ok(())
    }

    fn op(&mut self, op: &Op, pos: Pos) -> Result<()> {
        match op {
            Op::Const(_) => self.push(1),
            Op::Binary(_) | Op::Compare(_) => {
                self.pop(2, pos)?;
                self.push(1);
            }
            Op::Eqz => {
                self.pop(1, pos)?;
                self.push(1);
            }
            Op::LocalGet(i) | Op::LocalSet(i) | Op::LocalTee(i) => {
                if *i >= self.nlocals {
                    return Err(ParseError::Unresolved { pos, what: "local", name: i.to_string() });
                }
                match op {
                    Op::LocalGet(_) => self.push(1),
                    Op::LocalSet(_) => self.pop(1, pos)?,
                    _ => {
                        self.pop(1, pos)?;
                        self.push(1);
                    }
                }
            }
            Op::GlobalGet(i) | Op::GlobalSet(i) => {
                let g = self
                    .globals
                    .get(*i as usize)
                    .ok_or_else(|| ParseError::Unresolved { pos, what: "global", name: i.to_string() })?;
                if let Op::GlobalSet(_) = op {
                    if !g.mutable {
                        return type_err(pos, format!("global {i} is immutable"));
                    }
                    self.pop(1, pos)?;
                } else {
                    self.push(1);
                }
            }
            Op::Load { .. } | Op::Store { .. } => {
                if !self.has_memory {
                    return type_err(pos, "memory access without a memory");
                }
                if let Op::Load { .. } = op {
                    self.pop(1, pos)?;
                    self.push(1);
                } else {
                    self.pop(2, pos)?;
                }
            }
            Op::Br(d) => {
                let n = self.label_arity(*d, pos)?;
                self.pop(n, pos)?;
                self.set_unreachable();
            }
            Op::BrIf(d) => {
                self.pop(1, pos)?;
                let n = self.label_arity(*d, pos)?;
                self.pop(n, pos)?;
                self.push(n);
            }
            Op::Call(f) => {
                let &(params, results) = self
                    .func_sigs
                    .get(*f as usize)
                    .ok_or_else(|| ParseError::Unresolved { pos, what: "function", name: f.to_string() })?;
                self.pop(params, pos)?;
                self.push(results);
            }
            Op::Drop => self.pop(1, pos)?,
            Op::Return => {
                let n = self.ctrls[0].results;
                self.pop(n, pos)?;
                self.set_unreachable();
            }
            Op::Nop => {}
            Op::Block { .. } | Op::Loop { .. } | Op::If { .. } => unreachable!("structured ops are nodes"),
        }
        Ok(())
    }
}

fn flatten(nodes: &[Node], code: &mut Vec<Op>, positions: &mut Vec<Pos>) {
    for node in nodes {
        match node {
            Node::Plain(op, pos) => {
                code.push(op.clone());
                positions.push(*pos);
            }
            Node::Block { arity, body, pos } | Node::Loop { arity, body, pos } => {
                let at = code.len();
                code.push(Op::Nop);
                positions.push(*pos);
                flatten(body, code, positions);
                let end = code.len() as u32;
                code[at] = if matches!(node, Node::Block { .. }) {
                    Op::Block { end, arity: *arity }
                } else {
                    Op::Loop { end, arity: *arity }
                };
            }
            Node::If { arity, then, els, pos, .. } => {
                let at = code.len();
                code.push(Op::Nop);
                positions.push(*pos);
                flatten(then, code, positions);
                let else_at = code.len() as u32;
                flatten(els, code, positions);
                code[at] = Op::If { else_at, end: code.len() as u32, arity: *arity };
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Module assembly

struct FuncDecl<'a> {
    name: Option<String>,
    params: u32,
    results: u32,
    local_names: HashMap<String, u32>,
    nlocals: u32,
    body: &'a [Sexp],
    pos: Pos,
}

/// Parses a `(func ...)` header; `items` excludes the `func` keyword.
fn func_header<'a>(items: &'a [Sexp], pos: Pos, exports: &mut Vec<(String, String)>) -> Result<FuncDecl<'a>> {
    let mut i = 0;
    let mut name = None;
    if let Some(a) = items.first().and_then(Sexp::atom) {
        if is_id(a) {
            name = Some(a[1..].to_string());
            i = 1;
        }
    }
    let mut decl = FuncDecl { name, params: 0, results: 0, local_names: HashMap::new(), nlocals: 0, body: &[], pos };
    let mut locals = 0;
    while let Some(s) = items.get(i) {
        match s.head() {
            Some("export") => {
                let Some(Sexp::Str(n, _)) = s.items().get(1) else {
                    return syntax(s.pos(), "export needs a name");
                };
                if let Some(f) = &decl.name {
                    exports.push((n.clone(), f.clone()));
                } else {
                    exports.push((n.clone(), String::new()));
                }
            }
            Some(kw @ ("param" | "local")) => {
                let rest = &s.items()[1..];
                let count = if let Some(id) = rest.first().and_then(Sexp::atom).filter(|a| is_id(a)) {
                    if rest.len() != 2 || rest[1].atom() != Some("i32") {
                        return type_err(s.pos(), "only i32 values are supported");
                    }
                    decl.local_names.insert(id[1..].to_string(), decl.params + locals);
                    1
                } else {
                    if rest.iter().any(|t| t.atom() != Some("i32")) {
                        return type_err(s.pos(), "only i32 values are supported");
                    }
                    rest.len() as u32
                };
                if kw == "param" {
                    if locals > 0 {
                        return syntax(s.pos(), "params must precede locals");
                    }
                    decl.params += count;
                } else {
                    locals += count;
                }
            }
            Some("result") => decl.results += result_count(s)?,
            Some("type") => return syntax(s.pos(), "type uses are not supported"),
            _ => break,
        }
        i += 1;
    }
    if decl.results > 1 {
        return type_err(pos, "multi-value results are not supported");
    }
    decl.nlocals = locals;
    decl.body = &items[i..];
    Ok(decl)
}

/// Parses and validates a module in the text-format subset.
pub fn parse_module(text: &str) -> Result<Module> {
    let top = Lexer::new(text).parse_all()?;
    let fields: Vec<Sexp> = match top.as_slice() {
        [m] if m.head() == Some("module") => {
            let mut items = &m.items()[1..];
            if items.first().and_then(Sexp::atom).is_some_and(is_id) {
                items = &items[1..];
            }
            items.to_vec()
        }
        _ => top,
    };

    let mut imports = Vec::new();
    let mut import_names: Vec<Option<String>> = Vec::new();
    let mut decls = Vec::new();
    let mut globals = Vec::new();
    let mut global_names = HashMap::new();
    let mut memory_pages = 0;
    let mut exports: Vec<(String, String)> = Vec::new();
    let mut start: Option<(Sexp, Pos)> = None;
    let mut prim_entries = Vec::new();

    for field in &fields {
        let pos = field.pos();
        let items = field.items();
        match field.head() {
            Some("import") => {
                let (Some(Sexp::Str(module, _)), Some(Sexp::Str(name, npos)), Some(desc)) =
                    (items.get(1), items.get(2), items.get(3))
                else {
                    return syntax(pos, "malformed import");
                };
                if desc.head() != Some("func") {
                    return syntax(desc.pos(), "only function imports are supported");
                }
                if !decls.is_empty() {
                    return syntax(pos, "imports must precede function definitions");
                }
                let mut ignored = Vec::new();
                let decl = func_header(&desc.items()[1..], desc.pos(), &mut ignored)?;
                if !decl.body.is_empty() || decl.nlocals > 0 {
                    return syntax(desc.pos(), "imported functions have no body");
                }
                let entry = match (module.as_str(), builtin(name)) {
                    ("env", Some(e)) => e,
                    _ => {
                        return Err(ParseError::Unresolved { pos: *npos, what: "primitive", name: format!("{module}.{name}") })
                    }
                };
                let want_results = if entry.kind == PrimKind::In { 1 } else { 0 };
                if decl.params != entry.arity || decl.results != want_results {
                    return type_err(
                        desc.pos(),
                        format!("primitive {name} has signature ({} params, {} results)", entry.arity, want_results),
                    );
                }
                import_names.push(decl.name.clone());
                imports.push(Import { module: module.clone(), name: name.clone(), params: decl.params, results: decl.results });
                prim_entries.push(entry);
            }
            Some("func") => decls.push(func_header(&items[1..], pos, &mut exports)?),
            Some("global") => {
                let mut i = 1;
                if let Some(a) = items.get(1).and_then(Sexp::atom) {
                    if is_id(a) {
                        global_names.insert(a[1..].to_string(), globals.len() as u32);
                        i = 2;
                    }
                }
                let mutable = match items.get(i) {
                    Some(t) if t.head() == Some("mut") => {
                        if t.items().get(1).and_then(Sexp::atom) != Some("i32") {
                            return type_err(t.pos(), "only i32 globals are supported");
                        }
                        true
                    }
                    Some(t) if t.atom() == Some("i32") => false,
                    _ => return type_err(pos, "only i32 globals are supported"),
                };
                let init = match items.get(i + 1) {
                    Some(e) if e.head() == Some("i32.const") && e.items().len() == 2 => {
                        let v = &e.items()[1];
                        parse_i32(v.atom().unwrap_or(""), v.pos())?
                    }
                    _ => return syntax(pos, "global initializer must be `(i32.const N)`"),
                };
                globals.push(Global { mutable, init });
            }
            Some("memory") => {
                let mut rest: Vec<&Sexp> = items[1..].iter().collect();
                if rest.first().and_then(|s| s.atom()).is_some_and(is_id) {
                    rest.remove(0);
                }
                rest.retain(|s| s.head() != Some("export"));
                let min = match rest.first().and_then(|s| s.atom()) {
                    Some(a) => parse_u32(a, rest[0].pos())?,
                    None => return syntax(pos, "memory needs a page count"),
                };
                if min > MAX_PAGES {
                    return type_err(pos, format!("memory of {min} pages exceeds the {MAX_PAGES}-page limit"));
                }
                memory_pages = min;
            }
            Some("export") => {
                let (Some(Sexp::Str(name, _)), Some(desc)) = (items.get(1), items.get(2)) else {
                    return syntax(pos, "malformed export");
                };
                if desc.head() == Some("func") {
                    let target = desc.items().get(1).and_then(Sexp::atom).unwrap_or("").to_string();
                    exports.push((name.clone(), target));
                }
            }
            Some("start") => match items.get(1) {
                Some(s) => start = Some((s.clone(), s.pos())),
                None => return syntax(pos, "start needs a function"),
            },
            Some("type") | Some("data") | Some("table") | Some("elem") => {
                return syntax(pos, format!("`{}` fields are not supported", field.head().unwrap()))
            }
            _ => return syntax(pos, "expected a module field"),
        }
    }

    let nimports = imports.len() as u32;
    let mut func_names = HashMap::new();
    for (i, name) in import_names.iter().enumerate() {
        if let Some(n) = name {
            func_names.insert(n.clone(), i as u32);
        }
    }
    for (i, d) in decls.iter().enumerate() {
        if let Some(n) = &d.name {
            func_names.insert(n.clone(), nimports + i as u32);
        }
    }
    let mut func_sigs: Vec<(u32, u32)> = imports.iter().map(|i| (i.params, i.results)).collect();
    func_sigs.extend(decls.iter().map(|d| (d.params, d.results)));

    let mut functions = Vec::new();
    for decl in &decls {
        let mut scope =
            Scope { funcs: &func_names, globals: &global_names, locals: decl.local_names.clone(), labels: Vec::new() };
        let mut i = 0;
        let body = scope.seq(decl.body, &mut i, &[])?;
        let mut v = Validator {
            func_sigs: &func_sigs,
            globals: &globals,
            has_memory: memory_pages > 0,
            nlocals: decl.params + decl.nlocals,
            height: 0,
            ctrls: Vec::new(),
            heights: Vec::new(),
        };
        v.block(&body, decl.results, decl.results, decl.pos)?;
        let mut heights = v.heights;
        heights.push(Some(decl.results));
        let mut code = Vec::new();
        let mut positions = Vec::new();
        flatten(&body, &mut code, &mut positions);
        functions.push(Function {
            name: decl.name.clone(),
            params: decl.params,
            results: decl.results,
            locals: decl.nlocals,
            code,
            positions,
            heights,
        });
    }

    let lookup = |target: &str, pos: Pos| -> Result<u32> {
        if let Some(n) = target.strip_prefix('$') {
            func_names
                .get(n)
                .copied()
                .ok_or_else(|| ParseError::Unresolved { pos, what: "function", name: target.to_string() })
        } else {
            let idx = parse_u32(target, pos)?;
            if (idx as usize) < func_sigs.len() {
                Ok(idx)
            } else {
                Err(ParseError::Unresolved { pos, what: "function", name: target.to_string() })
            }
        }
    };

    let mut entry = None;
    for (name, target) in &exports {
        if name == "main" {
            entry = Some(if target.is_empty() {
                // inline export on an anonymous func: find it by position
                let idx = decls.iter().position(|d| d.name.is_none()).unwrap_or(0);
                nimports + idx as u32
            } else if target.starts_with('$') || target.parse::<u32>().is_ok() {
                lookup(target, Pos::default())?
            } else {
                lookup(&format!("${target}"), Pos::default())?
            });
        }
    }
    if entry.is_none() {
        if let Some((s, pos)) = &start {
            entry = Some(lookup(s.atom().unwrap_or(""), *pos)?);
        }
    }
    if entry.is_none() {
        entry = func_names.get("main").copied().filter(|&f| f >= nimports);
    }
    if let Some(e) = entry {
        if e < nimports {
            return type_err(Pos::default(), "entry function cannot be a primitive");
        }
        if func_sigs[e as usize].0 != 0 {
            return type_err(decls[(e - nimports) as usize].pos, "entry function must take no parameters");
        }
    }

    let hash: [u8; 32] = Sha256::digest(text.as_bytes()).into();
    Ok(Module {
        imports,
        functions,
        globals,
        memory_pages,
        entry,
        prims: PrimitiveTable::new(prim_entries),
        hash,
    })
}
