//! WebAssembly-subset front end and virtual machine.

pub mod exec;
pub mod module;
pub mod parse;
pub mod prims;
pub mod snapshot;

pub use exec::{Classification, ExecError, Frame, Label, PrimEvent, ProgramState, Status};
pub use module::{BinOp, Function, Global, Import, InstrId, Module, Op, Pos, RelOp};
pub use parse::{parse_module, ParseError};
pub use prims::{Codomain, Effect, EffectKind, EnvError, EnvMode, Environment, PrimEntry, PrimKind, PrimitiveTable};
pub use snapshot::SnapshotError;
