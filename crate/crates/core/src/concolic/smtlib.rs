//! External solver speaking SMT-LIB2 (QF_BV) over stdin/stdout.

use std::fmt::Write as _;
use std::io::{Read, Write};
use std::process::{Command, Stdio};
use std::sync::mpsc;
use std::thread;
use std::time::Duration;

use super::expr::{ExprKind, Literal, SymExpr, UnOp};
use super::solver::{check_model, Query, SolveResult, Solver};
use crate::wasm::{BinOp, RelOp};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(10);

pub struct SmtSolver {
    program: String,
    args: Vec<String>,
    pub timeout: Duration,
}

impl SmtSolver {
    /// `cmd` is split on whitespace, e.g. `"z3 -in"`.
    pub fn new(cmd: &str, timeout: Duration) -> Option<Self> {
        let mut parts = cmd.split_whitespace().map(str::to_string);
        let program = parts.next()?;
        Some(SmtSolver { program, args: parts.collect(), timeout })
    }

    fn run(&self, script: &str) -> Result<String, String> {
        let mut child = Command::new(&self.program)
            .args(&self.args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()
            .map_err(|e| format!("cannot start solver `{}`: {e}", self.program))?;
        let mut stdin = child.stdin.take().expect("piped stdin");
        let mut stdout = child.stdout.take().expect("piped stdout");
        let script = script.to_string();
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            let res = stdin.write_all(script.as_bytes()).and_then(|_| {
                drop(stdin);
                let mut out = String::new();
                stdout.read_to_string(&mut out).map(|_| out)
            });
            let _ = tx.send(res);
        });
        match rx.recv_timeout(self.timeout) {
            Ok(Ok(out)) => {
                let _ = child.wait();
                Ok(out)
            }
            Ok(Err(e)) => {
                let _ = child.kill();
                let _ = child.wait();
                Err(format!("solver io: {e}"))
            }
            Err(_) => {
                let _ = child.kill();
                let _ = child.wait();
                Err(format!("solver timed out after {} ms", self.timeout.as_millis()))
            }
        }
    }
}

impl Solver for SmtSolver {
    fn solve(&mut self, q: &Query) -> SolveResult {
        let script = emit(q);
        let out = match self.run(&script) {
            Ok(out) => out,
            Err(e) => return SolveResult::Unknown(e),
        };
        let mut lines = out.lines().map(str::trim).filter(|l| !l.is_empty());
        match lines.next() {
            Some("unsat") => SolveResult::Unsat,
            Some("sat") => {
                let rest: Vec<&str> = lines.collect();
                match parse_model(&rest.join(" "), q.domains.len()) {
                    Some(m) => match check_model(q, &m) {
                        Ok(true) => SolveResult::Sat(m),
                        _ => SolveResult::Unknown("solver model does not satisfy the query".into()),
                    },
                    None => SolveResult::Unknown(format!("unparsable model: {}", rest.join(" "))),
                }
            }
            Some(other) => SolveResult::Unknown(format!("solver said `{other}`")),
            None => SolveResult::Unknown("solver produced no output".into()),
        }
    }
}

fn bv(v: i32) -> String {
    format!("#x{:08x}", v as u32)
}

fn expr(e: &SymExpr, out: &mut String) {
    match e.kind() {
        ExprKind::Const(v) => out.push_str(&bv(*v)),
        ExprKind::Sym(d) => {
            let _ = write!(out, "x{d}");
        }
        ExprKind::Unop(UnOp::Eqz, a) => {
            out.push_str("(ite (= ");
            expr(a, out);
            let _ = write!(out, " {}) {} {})", bv(0), bv(1), bv(0));
        }
        ExprKind::Binop(op, a, b) => {
            let name = match op {
                BinOp::Add => "bvadd",
                BinOp::Sub => "bvsub",
                BinOp::Mul => "bvmul",
                BinOp::DivS => "bvsdiv",
                BinOp::RemS => "bvsrem",
                BinOp::And => "bvand",
                BinOp::Or => "bvor",
                BinOp::Xor => "bvxor",
            };
            let _ = write!(out, "({name} ");
            expr(a, out);
            out.push(' ');
            expr(b, out);
            out.push(')');
        }
        ExprKind::Relop(op, a, b) => {
            out.push_str("(ite ");
            boolean(*op, a, b, out);
            let _ = write!(out, " {} {})", bv(1), bv(0));
        }
    }
}

fn boolean(op: RelOp, a: &SymExpr, b: &SymExpr, out: &mut String) {
    let (name, swap) = match op {
        RelOp::Eq => ("=", false),
        RelOp::Ne => ("distinct", false),
        RelOp::LtS => ("bvslt", false),
        RelOp::LeS => ("bvsle", false),
        RelOp::GtS => ("bvslt", true),
        RelOp::GeS => ("bvsle", true),
    };
    let (l, r) = if swap { (b, a) } else { (a, b) };
    let _ = write!(out, "({name} ");
    expr(l, out);
    out.push(' ');
    expr(r, out);
    out.push(')');
}

fn literal(lit: &Literal, out: &mut String) {
    match lit {
        Literal::Branch { expr: e, taken } => {
            // comparisons are emitted directly instead of via ite
            if let ExprKind::Relop(op, a, b) = e.kind() {
                if !taken {
                    out.push_str("(not ");
                }
                boolean(*op, a, b, out);
                if !taken {
                    out.push(')');
                }
                return;
            }
            out.push_str(if *taken { "(distinct " } else { "(= " });
            expr(e, out);
            let _ = write!(out, " {})", bv(0));
        }
        Literal::Range { var, lo, hi, inside } => {
            let range = format!("(and (bvsle {} x{var}) (bvsle x{var} {}))", bv(*lo), bv(*hi));
            if *inside {
                out.push_str(&range);
            } else {
                let _ = write!(out, "(not {range})");
            }
        }
    }
}

/// Renders the query as a complete SMT-LIB2 script.
pub fn emit(q: &Query) -> String {
    let mut out = String::from("(set-logic QF_BV)\n");
    for d in 0..q.domains.len() {
        let _ = writeln!(out, "(declare-fun x{d} () (_ BitVec 32))");
    }
    for (d, (lo, hi)) in q.domains.iter().enumerate() {
        let _ = writeln!(out, "(assert (bvsle {} x{d}))", bv(*lo));
        let _ = writeln!(out, "(assert (bvsle x{d} {}))", bv(*hi));
    }
    for clause in &q.clauses {
        out.push_str("(assert ");
        match clause.len() {
            0 => out.push_str("false"),
            1 => literal(&clause[0], &mut out),
            _ => {
                out.push_str("(or");
                for lit in clause {
                    out.push(' ');
                    literal(lit, &mut out);
                }
                out.push(')');
            }
        }
        out.push_str(")\n");
    }
    out.push_str("(check-sat)\n");
    if !q.domains.is_empty() {
        out.push_str("(get-value (");
        for d in 0..q.domains.len() {
            if d > 0 {
                out.push(' ');
            }
            let _ = write!(out, "x{d}");
        }
        out.push_str("))\n");
    }
    out.push_str("(exit)\n");
    out
}

/// Parses a `get-value` answer such as `((x0 #x00000005) (x1 (_ bv7 32)))`.
pub fn parse_model(text: &str, n: usize) -> Option<Vec<i32>> {
    let mut model = vec![None; n];
    let spaced = text.replace('(', " ( ").replace(')', " ) ");
    let toks: Vec<&str> = spaced.split_whitespace().collect();
    let mut i = 0;
    while i < toks.len() {
        let t = toks[i];
        if let Some(idx) = t.strip_prefix('x').and_then(|s| s.parse::<usize>().ok()) {
            let value = match toks.get(i + 1..) {
                Some([v, ..]) if v.starts_with("#x") => {
                    i += 2;
                    u32::from_str_radix(&v[2..], 16).ok()?
                }
                Some([v, ..]) if v.starts_with("#b") => {
                    i += 2;
                    u32::from_str_radix(&v[2..], 2).ok()?
                }
                Some(["(", "_", v, _, ")", ..]) if v.starts_with("bv") => {
                    i += 6;
                    v[2..].parse::<u64>().ok()? as u32
                }
                _ => return None,
            };
            *model.get_mut(idx)? = Some(value as i32);
        } else {
            i += 1;
        }
    }
    model.into_iter().collect()
}
