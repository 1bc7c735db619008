//! Shared generators and independent oracles for the integration tests.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::sync::Arc;

use mvdbg::client::tree::{EdgeLabel, MultiverseTree, NodeId};
use mvdbg::client::{FrontendRequest, SuggestBounds};
use mvdbg::session::{Driver, Session};
use mvdbg::wasm::{parse_module, Classification, Environment, Module, Op, ProgramState};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub use rand::SeedableRng;
pub type TestRng = ChaCha8Rng;

#[derive(Clone, Copy, Debug)]
pub struct GenConfig {
    /// Upper bound on input reads along any execution of `main`'s body.
    pub max_reads: usize,
    pub allow_div: bool,
    /// Wrap the body in an endless loop.
    pub forever: bool,
}

struct Gen<'r> {
    rng: &'r mut TestRng,
    cfg: GenConfig,
    labels: u32,
    out: String,
}

const LOCALS: usize = 3;
const READS: &[&str] = &["$analog", "$digital", "$random"];

impl Gen<'_> {
    fn expr(&mut self, depth: u32) -> String {
        let pick = if depth == 0 { self.rng.gen_range(0..4) } else { self.rng.gen_range(0..11) };
        match pick {
            0 => format!("(i32.const {})", self.rng.gen_range(-3..9)),
            // locals hold earlier reads
            1 | 3 if depth == 0 => format!("(local.get $l{})", self.rng.gen_range(0..LOCALS)),
            1 | 10 => format!("(local.get $l{})", self.rng.gen_range(0..LOCALS)),
            2 => format!("(global.get $g{})", self.rng.gen_range(0..2)),
            3 | 4 => {
                let op = ["i32.add", "i32.sub", "i32.mul", "i32.and", "i32.or", "i32.xor"].choose(self.rng).unwrap();
                format!("({op} {} {})", self.expr(depth - 1), self.expr(depth - 1))
            }
            5 => {
                let op = ["i32.lt_s", "i32.le_s", "i32.gt_s", "i32.ge_s", "i32.eq", "i32.ne"].choose(self.rng).unwrap();
                format!("({op} {} {})", self.expr(depth - 1), self.expr(depth - 1))
            }
            6 => format!("(i32.eqz {})", self.expr(depth - 1)),
            7 => format!("(i32.load (i32.const {}))", 4 * self.rng.gen_range(0..4)),
            8 => format!("(call $f {})", self.expr(depth - 1)),
            _ if self.cfg.allow_div => {
                let op = ["i32.div_s", "i32.rem_s"].choose(self.rng).unwrap();
                format!("({op} {} {})", self.expr(depth - 1), self.expr(depth - 1))
            }
            _ => format!("(i32.const {})", self.rng.gen_range(0..5)),
        }
    }

    fn read(&mut self) -> String {
        match *READS.choose(self.rng).unwrap() {
            "$random" => format!("(call $random (i32.const {}))", self.rng.gen_range(1..5)),
            name => format!("(call {name} (i32.const {}))", self.rng.gen_range(0..3)),
        }
    }

    /// Appends statements; returns the most reads any path through them performs.
    fn block(&mut self, budget: usize, depth: u32, indent: usize) -> usize {
        let n = self.rng.gen_range(1..5);
        let mut used = 0;
        for _ in 0..n {
            used += self.stmt(budget - used, depth, indent);
        }
        used
    }

    fn line(&mut self, indent: usize, text: &str) {
        let _ = writeln!(self.out, "{:indent$}{text}", "", indent = indent * 2);
    }

    fn stmt(&mut self, budget: usize, depth: u32, indent: usize) -> usize {
        let choice = self.rng.gen_range(0..12);
        match choice {
            0 | 1 | 10 if budget > 0 => {
                let r = self.read();
                let l = self.rng.gen_range(0..LOCALS);
                self.line(indent, &format!("(local.set $l{l} {r})"));
                1
            }
            2 | 11 if budget > 0 => {
                let r = self.read();
                let c = self.rng.gen_range(0..4);
                self.line(indent, &format!("(if (i32.lt_s {r} (i32.const {c}))"));
                self.line(indent + 1, "(then");
                let a = self.block(budget - 1, depth.saturating_sub(1), indent + 2);
                self.line(indent + 1, ")");
                self.line(indent + 1, "(else");
                let b = self.block(budget - 1, depth.saturating_sub(1), indent + 2);
                self.line(indent + 1, "))");
                1 + a.max(b)
            }
            3 | 4 if depth > 0 => {
                let c = self.expr(2);
                self.line(indent, &format!("(if {c}"));
                self.line(indent + 1, "(then");
                let a = self.block(budget, depth - 1, indent + 2);
                self.line(indent + 1, ")");
                self.line(indent + 1, "(else");
                let b = self.block(budget, depth - 1, indent + 2);
                self.line(indent + 1, "))");
                a.max(b)
            }
            5 if depth > 0 => {
                self.labels += 1;
                let label = self.labels;
                let c = self.expr(2);
                self.line(indent, &format!("(block $b{label}"));
                self.line(indent + 1, &format!("(br_if $b{label} {c})"));
                let used = self.block(budget, depth - 1, indent + 1);
                self.line(indent, ")");
                used
            }
            6 if depth > 0 => {
                self.labels += 1;
                let label = self.labels;
                let times = self.rng.gen_range(1..4usize);
                let slot = 12 + 4 * label;
                self.line(indent, &format!("(i32.store (i32.const {slot}) (i32.const 0))"));
                self.line(indent, &format!("(block $x{label} (loop $c{label}"));
                self.line(
                    indent + 1,
                    &format!("(br_if $x{label} (i32.ge_s (i32.load (i32.const {slot})) (i32.const {times})))"),
                );
                self.line(
                    indent + 1,
                    &format!("(i32.store (i32.const {slot}) (i32.add (i32.load (i32.const {slot})) (i32.const 1)))"),
                );
                let used = self.block(budget / times, depth - 1, indent + 1);
                self.line(indent + 1, &format!("(br $c{label})))"));
                used * times
            }
            7 => {
                let e = self.expr(2);
                let g = self.rng.gen_range(0..2);
                self.line(indent, &format!("(global.set $g{g} {e})"));
                0
            }
            8 => {
                let e = self.expr(2);
                if self.rng.gen_bool(0.5) {
                    self.line(indent, &format!("(call $write (i32.const 13) {e})"));
                } else {
                    self.line(indent, &format!("(call $print {e})"));
                }
                0
            }
            9 => {
                let e = self.expr(2);
                let slot = 4 * self.rng.gen_range(0..4);
                self.line(indent, &format!("(i32.store (i32.const {slot}) {e})"));
                0
            }
            _ => {
                let e = self.expr(3);
                let l = self.rng.gen_range(0..LOCALS);
                self.line(indent, &format!("(local.set $l{l} {e})"));
                0
            }
        }
    }
}

/// A random valid program in the supported subset.
pub fn program(rng: &mut TestRng, cfg: GenConfig) -> String {
    let mut g = Gen { rng, cfg, labels: 0, out: String::new() };
    let threshold = g.rng.gen_range(0..4);
    g.out.push_str(
        "(module\n\
         (import \"env\" \"chip_analog_read\" (func $analog (param i32) (result i32)))\n\
         (import \"env\" \"chip_digital_read\" (func $digital (param i32) (result i32)))\n\
         (import \"env\" \"random\" (func $random (param i32) (result i32)))\n\
         (import \"env\" \"chip_digital_write\" (func $write (param i32 i32)))\n\
         (import \"env\" \"print_int\" (func $print (param i32)))\n\
         (memory 1)\n\
         (global $g0 (mut i32) (i32.const 0))\n\
         (global $g1 (mut i32) (i32.const 1))\n",
    );
    let _ = writeln!(
        g.out,
        "(func $f (param $p i32) (result i32)\n\
         (call $print (local.get $p))\n\
         (if (result i32) (i32.gt_s (local.get $p) (i32.const {threshold}))\n\
         (then (i32.sub (local.get $p) (i32.const 1)))\n\
         (else (i32.add (local.get $p) (i32.const 3)))))"
    );
    g.out.push_str("(func (export \"main\") (local $l0 i32) (local $l1 i32) (local $l2 i32)\n");
    if cfg.forever {
        g.out.push_str("(loop $forever\n");
    }
    let budget = cfg.max_reads;
    g.block(budget, 2, 1);
    if cfg.forever {
        g.out.push_str("(br $forever))\n");
    }
    g.out.push_str("))\n");
    g.out
}

/// Parses `src`, narrowing every analog read to `[0, analog_hi]`.
pub fn module(src: &str, analog_hi: i32) -> Arc<Module> {
    let mut m = parse_module(src).unwrap_or_else(|e| panic!("{e}\n{src}"));
    m.prims.override_codomain("chip_analog_read", 0, analog_hi);
    Arc::new(m)
}

/// Re-executes a tree path on a fresh state with plain semantics: step edges
/// may only cover deterministic instructions and outputs, mock edges answer
/// an input primitive.
pub fn replay(module: &Arc<Module>, labels: &[EdgeLabel]) -> Result<ProgramState, String> {
    let mut k = ProgramState::instantiate(module.clone()).map_err(|e| e.to_string())?;
    let mut env = Environment::constant(0);
    for label in labels {
        match *label {
            EdgeLabel::Step(n) => {
                for i in 0..n {
                    if let Classification::InputPrim(..) = k.classify() {
                        return Err(format!("step edge covers an input primitive at unit {i} of {n}"));
                    }
                    k.step(&mut env).map_err(|e| e.to_string())?;
                }
            }
            EdgeLabel::Mock(v) => {
                k.step_mocked(v).map_err(|e| format!("mock {v}: {e}"))?;
            }
        }
    }
    Ok(k)
}

/// One complete plain execution.
#[derive(Clone, Debug)]
pub struct PlainPath {
    pub inputs: Vec<i32>,
    /// Outcome of every `if` / `br_if`.
    pub decisions: Vec<bool>,
    pub end: ProgramState,
}

fn decision(k: &ProgramState) -> Option<bool> {
    match k.next_op()? {
        Op::If { .. } | Op::BrIf(_) => k.stack().last().map(|v| *v != 0),
        _ => None,
    }
}

/// Runs `module` plainly, answering input reads from `inputs` in order
/// (clamped into each read's codomain) and then with each read's lowest
/// value. The returned path records the values actually used.
pub fn plain_run(module: &Arc<Module>, inputs: &[i32], max_steps: u64) -> Option<PlainPath> {
    let mut k = ProgramState::instantiate(module.clone()).unwrap();
    let mut env = Environment::constant(0);
    let (mut decisions, mut used) = (Vec::new(), Vec::new());
    for _ in 0..max_steps {
        if !k.is_running() {
            return Some(PlainPath { inputs: used, decisions, end: k });
        }
        if let Some(d) = decision(&k) {
            decisions.push(d);
        }
        if let Classification::InputPrim(..) = k.classify() {
            let (lo, hi) = k.pending_range().expect("input has a codomain");
            let v = inputs.get(used.len()).map_or(lo, |v| (*v).clamp(lo, hi));
            k.step_mocked(v).ok()?;
            used.push(v);
        } else {
            k.step(&mut env).unwrap();
        }
    }
    None
}

/// Every execution of a terminating program, enumerating each input over its
/// codomain.
pub fn brute_force(module: &Arc<Module>, max_steps: u64) -> Vec<PlainPath> {
    fn go(module: &Arc<Module>, prefix: &mut Vec<i32>, max_steps: u64, out: &mut Vec<PlainPath>) {
        let mut k = ProgramState::instantiate(module.clone()).unwrap();
        let mut env = Environment::constant(0);
        let mut decisions = Vec::new();
        let mut used = 0;
        for _ in 0..max_steps {
            if !k.is_running() {
                out.push(PlainPath { inputs: prefix.clone(), decisions, end: k });
                return;
            }
            if let Some(d) = decision(&k) {
                decisions.push(d);
            }
            if let Classification::InputPrim(..) = k.classify() {
                if used == prefix.len() {
                    let (lo, hi) = k.pending_range().expect("input has a codomain");
                    for v in lo..=hi {
                        prefix.push(v);
                        go(module, prefix, max_steps, out);
                        prefix.pop();
                    }
                    return;
                }
                k.step_mocked(prefix[used]).unwrap();
                used += 1;
            } else {
                k.step(&mut env).unwrap();
            }
        }
        panic!("program did not terminate within {max_steps} steps");
    }
    let mut out = Vec::new();
    go(module, &mut Vec::new(), max_steps, &mut out);
    out
}

/// Random frontend actions for exploring a session.
#[derive(Clone, Copy, Debug)]
pub struct ActionMix {
    pub suggest: bool,
    pub breakpoints: bool,
}

pub fn random_action(rng: &mut TestRng, driver: &dyn Driver, mix: ActionMix) -> FrontendRequest {
    let client = driver.client();
    let module = client.module();
    loop {
        let req = match rng.gen_range(0..20) {
            0..=6 => FrontendRequest::Step,
            7..=9 => {
                // mostly valid values, sometimes outside any codomain
                let v = if rng.gen_bool(0.9) { rng.gen_range(0..4) } else { rng.gen_range(-5..5000) };
                FrontendRequest::Mock { value: v }
            }
            10 | 11 => FrontendRequest::Play,
            12 => FrontendRequest::Pause,
            13 | 14 => FrontendRequest::Slide { node_id: rng.gen_range(0..client.tree.len() as NodeId) },
            15 => FrontendRequest::Reset,
            16 | 17 if mix.breakpoints => {
                let func = module.num_imports() + rng.gen_range(0..module.functions.len() as u32);
                let len = module.function(func).unwrap().code.len() as u32;
                let instr = rng.gen_range(0..len.max(1));
                if rng.gen_bool(0.7) {
                    FrontendRequest::BreakAdd { func, instr }
                } else {
                    FrontendRequest::BreakRem { func, instr }
                }
            }
            18 | 19 if mix.suggest => FrontendRequest::Suggest {
                bounds: SuggestBounds { max_iter: Some(6), max_syms: Some(3), max_instr: Some(400) },
            },
            _ => continue,
        };
        return req;
    }
}

/// Submits and settles one request.
pub fn apply(driver: &mut dyn Driver, req: FrontendRequest) {
    driver.submit(req);
    driver.settle(300).expect("in-process sessions do not fail");
}

pub fn path_labels(tree: &MultiverseTree, to: NodeId) -> Vec<EdgeLabel> {
    tree.path_to(tree.root(), to).expect("current node is in the tree")
}

/// Checks the server state against a plain replay of the client's position.
pub fn check_sound(s: &Session) -> Result<(), String> {
    if s.client.is_waiting() || s.client.pending_slide().is_some() {
        return Err("session did not settle".into());
    }
    let labels = path_labels(&s.client.tree, s.client.current());
    let k = replay(s.client.module(), &labels)?;
    if k.snapshot() != s.server.state().snapshot() {
        return Err(format!("server state differs from replay of {labels:?}"));
    }
    Ok(())
}

pub fn seeded_session(module: Arc<Module>, seed: u64) -> Session {
    Session::new(module, Environment::seeded(seed)).expect("instantiates")
}

/// Unit-step trie built directly from the message stream.
#[derive(Default)]
pub struct UnitTree {
    children: Vec<BTreeMap<UnitLabel, usize>>,
    pub current: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum UnitLabel {
    Step,
    Mock(i32),
}

impl UnitTree {
    pub fn new() -> Self {
        UnitTree { children: vec![BTreeMap::new()], current: 0 }
    }

    pub fn follow(&mut self, label: UnitLabel) {
        let next = self.children.len();
        let at = self.current;
        let to = *self.children[at].entry(label).or_insert(next);
        if to == next {
            self.children.push(BTreeMap::new());
        }
        self.current = to;
    }

    pub fn len(&self) -> usize {
        self.children.len()
    }

    /// Canonical text of the subtree at `n`, marking the current node.
    pub fn canon(&self, n: usize) -> String {
        let mut s = String::from(if n == self.current { "*(" } else { "(" });
        for (l, c) in &self.children[n] {
            match l {
                UnitLabel::Step => s.push('s'),
                UnitLabel::Mock(v) => {
                    let _ = write!(s, "m{v}");
                }
            }
            s.push_str(&self.canon(*c));
        }
        s.push(')');
        s
    }
}

/// Canonical text of a compressed tree with step chains expanded to units.
pub fn canon_compressed(tree: &MultiverseTree, current: NodeId) -> String {
    fn node(tree: &MultiverseTree, n: NodeId, current: NodeId, out: &mut String) {
        out.push_str(if n == current { "*(" } else { "(" });
        let mut edges: Vec<_> = tree.node(n).unwrap().edges.clone();
        edges.sort_by_key(|e| match e.label {
            EdgeLabel::Step(_) => (0, 0),
            EdgeLabel::Mock(v) => (1, v),
        });
        for e in edges {
            match e.label {
                EdgeLabel::Step(k) => {
                    for _ in 1..k {
                        out.push_str("s(");
                    }
                    out.push('s');
                    node(tree, e.to, current, out);
                    for _ in 1..k {
                        out.push(')');
                    }
                }
                EdgeLabel::Mock(v) => {
                    let _ = write!(out, "m{v}");
                    node(tree, e.to, current, out);
                }
            }
        }
        out.push(')');
    }
    let mut out = String::new();
    node(tree, tree.root(), current, &mut out);
    out
}
