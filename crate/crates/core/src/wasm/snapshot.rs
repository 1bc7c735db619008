//! Bit-exact serialization of [`ProgramState`].
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "MVS1" | module sha256 (32 bytes)
//! u32 nglobals | i32 * nglobals
//! u32 nframes  | frame * nframes
//! u32 nstack   | i32 * nstack
//! u32 memlen   | u8 * memlen
//! u64 icount
//! u32 status (0 running, 1 finished, 2 trapped) [u32 len | utf8 reason]
//! ```
//!
//! A frame is `func | u32 pathlen | u32 * pathlen | u32 nlabels |
//! (opener, height, flags) * nlabels | u32 nlocals | i32 * nlocals | base`.
//! The cursor path lists the openers of every enclosing construct followed
//! by the next instruction.

use std::sync::Arc;

use super::exec::{Frame, Label, ProgramState, Status};
use super::module::{Module, Op};

pub const MAGIC: &[u8; 4] = b"MVS1";

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SnapshotError {
    #[error("snapshot was taken from a different module")]
    ModuleMismatch,
    #[error("malformed snapshot: {0}")]
    Malformed(String),
}

fn bad<T>(msg: impl Into<String>) -> Result<T, SnapshotError> {
    Err(SnapshotError::Malformed(msg.into()))
}

struct Writer(Vec<u8>);

impl Writer {
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn i32s(&mut self, vs: &[i32]) {
        self.u32(vs.len() as u32);
        for v in vs {
            self.0.extend_from_slice(&v.to_le_bytes());
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    at: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8], SnapshotError> {
        if self.buf.len() - self.at < n {
            return bad("truncated");
        }
        let s = &self.buf[self.at..self.at + n];
        self.at += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, SnapshotError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, SnapshotError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    /// Reads a length prefix, rejecting counts that cannot fit in the rest of the blob.
    fn len(&mut self, elem: usize) -> Result<usize, SnapshotError> {
        let n = self.u32()? as usize;
        if n.saturating_mul(elem) > self.buf.len() - self.at {
            return bad("length exceeds blob");
        }
        Ok(n)
    }

    fn i32s(&mut self) -> Result<Vec<i32>, SnapshotError> {
        let n = self.len(4)?;
        (0..n).map(|_| self.u32().map(|v| v as i32)).collect()
    }
}

impl ProgramState {
    /// Serializes the state into a self-describing blob.
    pub fn snapshot(&self) -> Vec<u8> {
        let mut w = Writer(Vec::with_capacity(64 + self.memory.len()));
        w.0.extend_from_slice(MAGIC);
        w.0.extend_from_slice(&self.module().hash);
        w.i32s(&self.globals);
        w.u32(self.frames.len() as u32);
        for f in &self.frames {
            w.u32(f.func);
            w.u32(f.labels.len() as u32 + 1);
            for l in &f.labels {
                w.u32(l.opener);
            }
            w.u32(f.pc);
            w.u32(f.labels.len() as u32);
            for l in &f.labels {
                w.u32(l.opener);
                w.u32(l.height);
                w.u32(l.alt as u32);
            }
            w.i32s(&f.locals);
            w.u32(f.base);
        }
        w.i32s(&self.stack);
        w.u32(self.memory.len() as u32);
        w.0.extend_from_slice(&self.memory);
        w.0.extend_from_slice(&self.icount.to_le_bytes());
        match &self.status {
            Status::Running => w.u32(0),
            Status::Finished => w.u32(1),
            Status::Trapped(reason) => {
                w.u32(2);
                w.u32(reason.len() as u32);
                w.0.extend_from_slice(reason.as_bytes());
            }
        }
        w.0
    }

    /// Rebuilds a state from [`ProgramState::snapshot`] output, checking it
    /// against `module`.
    pub fn restore(blob: &[u8], module: Arc<Module>) -> Result<ProgramState, SnapshotError> {
        let mut r = Reader { buf: blob, at: 0 };
        if r.take(4).ok() != Some(&MAGIC[..]) {
            return bad("bad magic");
        }
        if r.take(32)? != module.hash {
            return Err(SnapshotError::ModuleMismatch);
        }
        let globals = r.i32s()?;
        if globals.len() != module.globals.len() {
            return bad("global count");
        }
        for (v, g) in globals.iter().zip(&module.globals) {
            if !g.mutable && *v != g.init {
                return bad("immutable global changed");
            }
        }
        let nframes = r.len(8)?;
        let mut frames = Vec::with_capacity(nframes);
        for _ in 0..nframes {
            let func = r.u32()?;
            let body = match module.function(func) {
                Some(f) => f,
                None => return bad(format!("frame function {func}")),
            };
            let plen = r.len(4)?;
            if plen == 0 {
                return bad("empty cursor path");
            }
            let path: Vec<u32> = (0..plen).map(|_| r.u32()).collect::<Result<_, _>>()?;
            let pc = path[plen - 1];
            let nlabels = r.len(12)?;
            let mut labels = Vec::with_capacity(nlabels);
            for _ in 0..nlabels {
                let opener = r.u32()?;
                let height = r.u32()?;
                let alt = match r.u32()? {
                    0 => false,
                    1 => true,
                    _ => return bad("label flags"),
                };
                labels.push(Label { opener, height, alt });
            }
            let locals = r.i32s()?;
            let base = r.u32()?;
            if locals.len() != body.frame_size() {
                return bad("local count");
            }
            if path[..plen - 1] != labels.iter().map(|l| l.opener).collect::<Vec<_>>()[..] {
                return bad("cursor path disagrees with control stack");
            }
            check_cursor(&body.code, pc, &labels)?;
            frames.push(Frame { func, pc, labels, locals, base });
        }
        let stack = r.i32s()?;
        let memlen = r.len(1)?;
        if memlen != module.memory_bytes() {
            return bad("memory size");
        }
        let memory = r.take(memlen)?.to_vec();
        let icount = r.u64()?;
        let status = match r.u32()? {
            0 => Status::Running,
            1 => Status::Finished,
            2 => {
                let n = r.len(1)?;
                match String::from_utf8(r.take(n)?.to_vec()) {
                    Ok(s) => Status::Trapped(s),
                    Err(_) => return bad("trap reason"),
                }
            }
            _ => return bad("status"),
        };
        if r.at != blob.len() {
            return bad("trailing bytes");
        }
        check_heights(&module, &frames, stack.len())?;
        match (&status, frames.is_empty()) {
            (Status::Running, true) => return bad("running without frames"),
            (Status::Finished, false) => return bad("finished with frames"),
            _ => {}
        }
        Ok(ProgramState::from_parts(module, frames, globals, stack, memory, status, icount))
    }
}

/// The cursor must sit inside the innermost open arm.
fn check_cursor(code: &[Op], pc: u32, labels: &[Label]) -> Result<(), SnapshotError> {
    if pc as usize > code.len() {
        return bad("cursor past function end");
    }
    let mut lo = 0u32;
    let mut hi = code.len() as u32;
    for l in labels {
        let (start, stop) = match code.get(l.opener as usize) {
            Some(Op::Block { end, .. }) | Some(Op::Loop { end, .. }) if !l.alt => (l.opener + 1, *end),
            Some(Op::If { else_at, .. }) if !l.alt => (l.opener + 1, *else_at),
            Some(Op::If { else_at, end, .. }) => (*else_at, *end),
            _ => return bad("label opener"),
        };
        if l.opener < lo || stop > hi {
            return bad("labels not nested");
        }
        lo = start;
        hi = stop;
    }
    if pc < lo || pc >= hi && !(labels.is_empty() && pc == hi) {
        return bad("cursor outside its block");
    }
    Ok(())
}

/// Stack heights must agree with the validated height of every cursor.
fn check_heights(module: &Module, frames: &[Frame], stack_len: usize) -> Result<(), SnapshotError> {
    let mut expect_base = 0u32;
    for (i, f) in frames.iter().enumerate() {
        let body = module.function(f.func).expect("checked by caller");
        if f.base != expect_base {
            return bad("frame base");
        }
        for l in &f.labels {
            let at_opener = body.heights[l.opener as usize].ok_or_else(|| SnapshotError::Malformed("dead label".into()))?;
            let popped = matches!(body.code[l.opener as usize], Op::If { .. }) as u32;
            if at_opener < popped || l.height != f.base + at_opener - popped {
                return bad("label height");
            }
        }
        let h = match body.heights[f.pc as usize] {
            Some(h) => f.base + h,
            None => return bad("cursor in dead code"),
        };
        match frames.get(i + 1) {
            Some(callee) => {
                let results = module.function(callee.func).map_or(0, |c| c.results);
                if h < results {
                    return bad("caller height");
                }
                expect_base = h - results;
            }
            None => {
                if h as usize != stack_len {
                    return bad("value stack height");
                }
            }
        }
    }
    if frames.is_empty() && stack_len > 1 {
        return bad("value stack height");
    }
    Ok(())
}
