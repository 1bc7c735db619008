//! Example programs shipped with the crate, ported from common microcontroller
//! sketches, plus the bounds each is usually analysed with.

use std::sync::Arc;

use crate::concolic::Bounds;
use crate::wasm::{parse_module, Module, ParseError};

#[derive(Clone, Copy, Debug)]
pub struct Fixture {
    pub name: &'static str,
    pub source: &'static str,
    /// Loop iterations explored by default.
    pub loops: Option<u32>,
}

impl Fixture {
    pub fn module(&self) -> Result<Arc<Module>, ParseError> {
        parse_module(self.source).map(Arc::new)
    }

    pub fn bounds(&self) -> Bounds {
        Bounds { max_loops: self.loops, max_iterations: 256, ..Bounds::default() }
    }
}

macro_rules! fixture {
    ($name:literal, $loops:expr) => {
        Fixture { name: $name, source: include_str!(concat!("../fixtures/", $name, ".wat")), loops: $loops }
    };
}

pub const ALL: &[Fixture] = &[
    fixture!("app_b", None),
    fixture!("loop_if", None),
    fixture!("temperature", Some(1)),
    fixture!("knock", Some(1)),
    fixture!("switch_map", Some(1)),
    fixture!("keyboard", Some(1)),
    fixture!("love_o_meter", Some(1)),
    fixture!("while_no_calibrate", Some(1)),
    fixture!("crystal_ball", Some(2)),
    fixture!("knock_lock", Some(2)),
    fixture!("zoetrope", Some(2)),
    fixture!("gesture_robot", Some(1)),
    fixture!("io_heavy_bench", None),
];

pub fn get(name: &str) -> Option<&'static Fixture> {
    ALL.iter().find(|f| f.name == name)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::wasm::PrimKind;

    #[test]
    fn every_fixture_parses_with_an_input() {
        for f in ALL {
            let m = f.module().unwrap_or_else(|e| panic!("{}: {e}", f.name));
            assert!(m.prims.iter().any(|(_, p)| p.kind == PrimKind::In), "{}", f.name);
        }
    }

    #[test]
    fn lookup() {
        assert_eq!(get("knock").unwrap().loops, Some(1));
        assert!(get("nope").is_none());
    }
}
