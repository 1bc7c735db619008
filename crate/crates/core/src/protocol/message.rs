use std::fmt;

use base64::Engine;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::wasm::InstrId;

/// Messages the client sends to the server.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "camelCase")]
pub enum ServerBound {
    Step,
    Pause,
    Play,
    BreakAdd { func: u32, instr: u32 },
    BreakRem { func: u32, instr: u32 },
    Mock { value: i32 },
    Inspect,
    Reset,
}

impl ServerBound {
    pub fn break_add(id: InstrId) -> Self {
        ServerBound::BreakAdd { func: id.func, instr: id.instr }
    }

    pub fn break_rem(id: InstrId) -> Self {
        ServerBound::BreakRem { func: id.func, instr: id.instr }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ServerBound::Step => "step",
            ServerBound::Pause => "pause",
            ServerBound::Play => "play",
            ServerBound::BreakAdd { .. } => "breakAdd",
            ServerBound::BreakRem { .. } => "breakRem",
            ServerBound::Mock { .. } => "mock",
            ServerBound::Inspect => "inspect",
            ServerBound::Reset => "reset",
        }
    }
}

/// Opaque snapshot bytes, carried as base64 on the wire.
#[derive(Clone, PartialEq, Eq)]
pub struct Blob(pub Vec<u8>);

impl fmt::Debug for Blob {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Blob({} bytes)", self.0.len())
    }
}

impl Serialize for Blob {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&base64::engine::general_purpose::STANDARD.encode(&self.0))
    }
}

impl<'de> Deserialize<'de> for Blob {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        base64::engine::general_purpose::STANDARD
            .decode(text.as_bytes())
            .map(Blob)
            .map_err(serde::de::Error::custom)
    }
}

/// Messages the server sends to the client.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "camelCase")]
pub enum ClientBound {
    /// `count` deterministic steps were taken.
    Executed { count: u64 },
    /// `count - 1` deterministic steps, then input primitive `prim(args)` returned `value`.
    Prim { count: u64, prim: u32, args: Vec<i32>, value: i32 },
    Snapshot { data: Blob },
    /// A request was rejected (bad mock, incompatible message, ...).
    Error { message: String },
}

impl ClientBound {
    pub fn name(&self) -> &'static str {
        match self {
            ClientBound::Executed { .. } => "executed",
            ClientBound::Prim { .. } => "prim",
            ClientBound::Snapshot { .. } => "snapshot",
            ClientBound::Error { .. } => "error",
        }
    }
}
