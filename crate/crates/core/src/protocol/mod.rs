//! Client/server message vocabulary, wire encoding and transports.

pub mod codec;
mod message;
pub mod tcp;

pub use codec::{decode, encode, encode_line, DecodeError};
pub use message::{Blob, ClientBound, ServerBound};

/// Default TCP port of the debug server.
pub const DEFAULT_PORT: u16 = 9333;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum ExecState {
    Running,
    Paused,
}

/// Whether the server may process `msg` in state `es`.
///
/// A running server only accepts `pause` and breakpoint edits; a paused one
/// accepts everything except `pause`.
pub fn compatible(es: ExecState, msg: &ServerBound) -> bool {
    match es {
        ExecState::Running => {
            matches!(msg, ServerBound::Pause | ServerBound::BreakAdd { .. } | ServerBound::BreakRem { .. })
        }
        ExecState::Paused => !matches!(msg, ServerBound::Pause),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compat_table() {
        use ServerBound::*;
        let all = [Step, Pause, Play, BreakAdd { func: 0, instr: 0 }, BreakRem { func: 0, instr: 0 }, Mock { value: 5 }, Inspect, Reset];
        let running: Vec<&str> = all.iter().filter(|m| compatible(ExecState::Running, m)).map(|m| m.name()).collect();
        let paused: Vec<&str> = all.iter().filter(|m| compatible(ExecState::Paused, m)).map(|m| m.name()).collect();
        assert_eq!(running, ["pause", "breakAdd", "breakRem"]);
        assert_eq!(paused, ["step", "play", "breakAdd", "breakRem", "mock", "inspect", "reset"]);
    }
}
