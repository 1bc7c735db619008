//! Primitive (host function) table and the environment that answers input
//! primitives during plain execution.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum PrimKind {
    In,
    Out,
}

/// How the set of producible values of an input primitive is determined.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Codomain {
    /// Inclusive range.
    Fixed(i32, i32),
    /// `[0, args[0] - 1]`, resolved per invocation.
    BelowFirstArg,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PrimEntry {
    pub name: String,
    pub kind: PrimKind,
    pub arity: u32,
    /// `None` for output primitives.
    pub codomain: Option<Codomain>,
}

impl PrimEntry {
    /// Inclusive value range for a call with `args`, or `None` if the call
    /// can produce nothing (e.g. `random(0)`) or the primitive is an output.
    pub fn range(&self, args: &[i32]) -> Option<(i32, i32)> {
        match self.codomain? {
            Codomain::Fixed(lo, hi) => Some((lo, hi)),
            Codomain::BelowFirstArg => {
                let max = *args.first()?;
                (max >= 1).then(|| (0, max - 1))
            }
        }
    }
}

/// Signature of a built-in primitive: (name, kind, arity, codomain).
const BUILTINS: &[(&str, PrimKind, u32, Option<Codomain>)] = &[
    ("chip_analog_read", PrimKind::In, 1, Some(Codomain::Fixed(0, 4095))),
    ("chip_digital_read", PrimKind::In, 1, Some(Codomain::Fixed(0, 1))),
    ("random", PrimKind::In, 1, Some(Codomain::BelowFirstArg)),
    ("chip_digital_write", PrimKind::Out, 2, None),
    ("chip_analog_write", PrimKind::Out, 2, None),
    ("chip_delay", PrimKind::Out, 1, None),
    ("print_int", PrimKind::Out, 1, None),
];

/// Looks up a built-in primitive by name.
pub fn builtin(name: &str) -> Option<PrimEntry> {
    BUILTINS.iter().find(|b| b.0 == name).map(|&(name, kind, arity, codomain)| PrimEntry {
        name: name.to_string(),
        kind,
        arity,
        codomain,
    })
}

/// Maps import indices to primitive entries.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct PrimitiveTable {
    entries: Vec<PrimEntry>,
}

impl PrimitiveTable {
    pub fn new(entries: Vec<PrimEntry>) -> Self {
        PrimitiveTable { entries }
    }

    pub fn get(&self, j: u32) -> Option<&PrimEntry> {
        self.entries.get(j as usize)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, &PrimEntry)> {
        self.entries.iter().enumerate().map(|(i, e)| (i as u32, e))
    }

    pub fn index_of(&self, name: &str) -> Option<u32> {
        self.entries.iter().position(|e| e.name == name).map(|i| i as u32)
    }

    /// Replaces the codomain of every input primitive called `name`.
    /// Returns false if no such input primitive is imported or the range is empty.
    pub fn override_codomain(&mut self, name: &str, lo: i32, hi: i32) -> bool {
        if lo > hi {
            return false;
        }
        let mut hit = false;
        for e in self.entries.iter_mut().filter(|e| e.name == name && e.kind == PrimKind::In) {
            e.codomain = Some(Codomain::Fixed(lo, hi));
            hit = true;
        }
        hit
    }
}

#[derive(Clone, Debug, thiserror::Error, PartialEq, Eq)]
pub enum EnvError {
    #[error("environment produced {value} for {prim}, outside [{lo}, {hi}]")]
    OutOfCodomain { prim: String, value: i32, lo: i32, hi: i32 },
    #[error("scripted environment has no more values for {0}")]
    ScriptExhausted(String),
}

/// Where input values come from during plain (unmocked) execution.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum EnvMode {
    /// Uniform over the codomain; a pure function of (seed, invocation ordinal).
    Seeded(u64),
    /// Per-primitive value queues, consumed in order.
    Scripted(BTreeMap<String, Vec<i32>>),
    /// Always the same value.
    Constant(i32),
}

impl Default for EnvMode {
    fn default() -> Self {
        EnvMode::Seeded(0)
    }
}

/// `seeded:N`, `constant:V` or `scripted:prim=v,v;prim=v`.
impl std::str::FromStr for EnvMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let (kind, rest) = s.split_once(':').ok_or_else(|| format!("expected KIND:VALUE, got `{s}`"))?;
        let int = |t: &str| t.trim().parse::<i32>().map_err(|_| format!("bad number `{t}`"));
        match kind {
            "seeded" => rest.trim().parse().map(EnvMode::Seeded).map_err(|_| format!("bad seed `{rest}`")),
            "constant" => int(rest).map(EnvMode::Constant),
            "scripted" => {
                let mut queues = BTreeMap::new();
                for part in rest.split(';').filter(|p| !p.trim().is_empty()) {
                    let (prim, values) =
                        part.split_once('=').ok_or_else(|| format!("expected prim=v,v in `{part}`"))?;
                    let values = values.split(',').filter(|v| !v.trim().is_empty()).map(int).collect::<Result<_, _>>()?;
                    queues.insert(prim.trim().to_string(), values);
                }
                Ok(EnvMode::Scripted(queues))
            }
            other => Err(format!("unknown environment `{other}` (seeded, constant, scripted)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum EffectKind {
    Read(i32),
    Write,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Effect {
    /// Instruction count of the program state when the primitive ran.
    pub step: u64,
    pub prim: String,
    pub args: Vec<i32>,
    pub kind: EffectKind,
}

impl std::fmt::Display for Effect {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let args: Vec<String> = self.args.iter().map(|a| a.to_string()).collect();
        match self.kind {
            EffectKind::Read(v) => write!(f, "#{} {}({}) -> {}", self.step, self.prim, args.join(", "), v),
            EffectKind::Write => write!(f, "#{} {}({})", self.step, self.prim, args.join(", ")),
        }
    }
}

/// The outside world as seen by a running program.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Environment {
    mode: EnvMode,
    ordinal: u64,
    cursors: BTreeMap<String, usize>,
    pub pins: BTreeMap<i32, i32>,
    pub effects: Vec<Effect>,
}

impl Default for Environment {
    fn default() -> Self {
        Environment::new(EnvMode::default())
    }
}

impl Environment {
    pub fn new(mode: EnvMode) -> Self {
        Environment { mode, ordinal: 0, cursors: BTreeMap::new(), pins: BTreeMap::new(), effects: Vec::new() }
    }

    pub fn seeded(seed: u64) -> Self {
        Environment::new(EnvMode::Seeded(seed))
    }

    pub fn constant(v: i32) -> Self {
        Environment::new(EnvMode::Constant(v))
    }

    pub fn scripted(values: BTreeMap<String, Vec<i32>>) -> Self {
        Environment::new(EnvMode::Scripted(values))
    }

    pub fn mode(&self) -> &EnvMode {
        &self.mode
    }

    /// Number of input values produced so far.
    pub fn reads(&self) -> u64 {
        self.ordinal
    }

    /// Back to the initial seed / script position with an empty log.
    pub fn reset(&mut self) {
        *self = Environment::new(self.mode.clone());
    }

    /// Produces the value of an input primitive call.
    pub fn read(&mut self, prim: &str, args: &[i32], range: (i32, i32), step: u64) -> Result<i32, EnvError> {
        let (lo, hi) = range;
        let value = match &self.mode {
            EnvMode::Seeded(seed) => {
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                rng.set_stream(self.ordinal);
                rng.gen_range(lo..=hi)
            }
            EnvMode::Constant(v) => *v,
            EnvMode::Scripted(queues) => {
                let cursor = self.cursors.entry(prim.to_string()).or_insert(0);
                let v = queues
                    .get(prim)
                    .and_then(|q| q.get(*cursor))
                    .copied()
                    .ok_or_else(|| EnvError::ScriptExhausted(prim.to_string()))?;
                *cursor += 1;
                v
            }
        };
        if value < lo || value > hi {
            return Err(EnvError::OutOfCodomain { prim: prim.to_string(), value, lo, hi });
        }
        self.ordinal += 1;
        self.effects.push(Effect { step, prim: prim.to_string(), args: args.to_vec(), kind: EffectKind::Read(value) });
        Ok(value)
    }

    /// Performs an output primitive call.
    pub fn write(&mut self, prim: &str, args: &[i32], step: u64) {
        if matches!(prim, "chip_digital_write" | "chip_analog_write") && args.len() == 2 {
            self.pins.insert(args[0], args[1]);
        }
        self.effects.push(Effect { step, prim: prim.to_string(), args: args.to_vec(), kind: EffectKind::Write });
    }
}
