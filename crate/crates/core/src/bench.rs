//! Forward-execution cost of the debugger: plain interpretation against the
//! trace-emitting server and a server that snapshots after every primitive.

use std::fmt::Write as _;
use std::sync::Arc;
use std::time::{Duration, Instant};

use crate::protocol::{ClientBound, ServerBound};
use crate::server::DebugServer;
use crate::wasm::{Environment, ExecError, Module, ProgramState};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Plain,
    Trace,
    Snapshot,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::Plain, Mode::Trace, Mode::Snapshot];

    pub fn name(self) -> &'static str {
        match self {
            Mode::Plain => "plain",
            Mode::Trace => "trace",
            Mode::Snapshot => "snapshot",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchRow {
    pub mode: Mode,
    /// Instructions actually executed (fewer than asked if the program ended).
    pub instructions: u64,
    /// Fastest of the repeats.
    pub best: Duration,
    /// Messages a client would receive.
    pub messages: u64,
    pub snapshots: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchReport {
    pub requested: u64,
    pub repeats: u32,
    pub rows: Vec<BenchRow>,
}

pub const CSV_HEADER: &str = "mode,instructions,repeats,best_seconds,ratio_to_plain,messages,snapshots";

impl BenchReport {
    pub fn row(&self, mode: Mode) -> Option<&BenchRow> {
        self.rows.iter().find(|r| r.mode == mode)
    }

    /// Time of `mode` divided by the plain time.
    pub fn ratio(&self, mode: Mode) -> Option<f64> {
        let plain = self.row(Mode::Plain)?.best.as_secs_f64();
        let t = self.row(mode)?.best.as_secs_f64();
        (plain > 0.0).then(|| t / plain)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let ratio = self.ratio(r.mode).map(|x| format!("{x:.4}")).unwrap_or_default();
            let _ = writeln!(
                out,
                "{},{},{},{:.6},{},{},{}",
                r.mode.name(),
                r.instructions,
                self.repeats,
                r.best.as_secs_f64(),
                ratio,
                r.messages,
                r.snapshots
            );
        }
        out
    }
}

fn plain(module: &Arc<Module>, n: u64, seed: u64) -> Result<BenchRow, ExecError> {
    let mut k = ProgramState::instantiate(module.clone())?;
    let mut env = Environment::seeded(seed);
    let start = Instant::now();
    let mut done = 0;
    while done < n && k.is_running() {
        k.step(&mut env)?;
        done += 1;
    }
    Ok(BenchRow { mode: Mode::Plain, instructions: done, best: start.elapsed(), messages: 0, snapshots: 0 })
}

fn served(module: &Arc<Module>, n: u64, seed: u64, snapshots: bool) -> Result<BenchRow, ExecError> {
    let mut server = DebugServer::new(module.clone(), Environment::seeded(seed))?;
    server.set_snapshot_baseline(snapshots);
    server.handle(ServerBound::Play);
    let mut trace: Vec<ClientBound> = Vec::with_capacity(1024);
    let start = Instant::now();
    while server.total_steps() < n && server.state().is_running() {
        server.run_step();
        if !server.outbox.is_empty() {
            trace.extend(server.outbox.drain(..));
        }
    }
    let best = start.elapsed();
    Ok(BenchRow {
        mode: if snapshots { Mode::Snapshot } else { Mode::Trace },
        instructions: server.total_steps(),
        best,
        messages: trace.len() as u64,
        snapshots: server.snapshots_taken(),
    })
}

/// Runs `instructions` steps of `module` in every mode, keeping the fastest of
/// `repeats` runs. Each round runs the modes back to back so that clock drift
/// hits them alike.
pub fn run(module: &Arc<Module>, instructions: u64, repeats: u32, seed: u64) -> Result<BenchReport, ExecError> {
    let repeats = repeats.max(1);
    let mut best: Vec<Option<BenchRow>> = vec![None; Mode::ALL.len()];
    for _ in 0..repeats {
        for (slot, mode) in best.iter_mut().zip(Mode::ALL) {
            let row = match mode {
                Mode::Plain => plain(module, instructions, seed)?,
                Mode::Trace => served(module, instructions, seed, false)?,
                Mode::Snapshot => served(module, instructions, seed, true)?,
            };
            if slot.as_ref().is_none_or(|b| row.best < b.best) {
                *slot = Some(row);
            }
        }
    }
    Ok(BenchReport { requested: instructions, repeats, rows: best.into_iter().flatten().collect() })
}
