//! Trace-based remote multiverse debugger with concolic path suggestions
//! for a WebAssembly subset.

pub mod wasm;
pub mod protocol;
pub mod server;
pub mod client;
pub mod concolic;
pub mod session;
pub mod fixtures;
pub mod script;
pub mod bench;
