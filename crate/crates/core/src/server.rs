//! The remote debug stub.

use std::collections::{BTreeSet, VecDeque};
use std::io::Write;
use std::sync::Arc;

use crate::protocol::{compatible, encode, Blob, ClientBound, ExecState, ServerBound};
use crate::wasm::{Classification, Environment, ExecError, InstrId, Module, ProgramState};

/// Server configuration ⟨es, inbox, outbox, bps, c_instr, K⟩ plus the environment.
pub struct DebugServer {
    module: Arc<Module>,
    es: ExecState,
    bps: BTreeSet<InstrId>,
    cinstr: u64,
    k: ProgramState,
    env: Environment,
    pub inbox: VecDeque<ServerBound>,
    pub outbox: VecDeque<ClientBound>,
    snapshot_baseline: bool,
    snapshots_taken: u64,
    /// Total instructions executed across resets; used by counter conservation checks.
    total_steps: u64,
    trace_log: Option<Box<dyn Write + Send>>,
}

impl DebugServer {
    /// A paused server positioned at the start state.
    pub fn new(module: Arc<Module>, env: Environment) -> Result<Self, ExecError> {
        let k = ProgramState::instantiate(module.clone())?;
        Ok(DebugServer {
            module,
            es: ExecState::Paused,
            bps: BTreeSet::new(),
            cinstr: 0,
            k,
            env,
            inbox: VecDeque::new(),
            outbox: VecDeque::new(),
            snapshot_baseline: false,
            snapshots_taken: 0,
            total_steps: 0,
            trace_log: None,
        })
    }

    pub fn module(&self) -> &Arc<Module> {
        &self.module
    }

    pub fn state(&self) -> &ProgramState {
        &self.k
    }

    pub fn env(&self) -> &Environment {
        &self.env
    }

    pub fn exec_state(&self) -> ExecState {
        self.es
    }

    pub fn breakpoints(&self) -> &BTreeSet<InstrId> {
        &self.bps
    }

    pub fn cinstr(&self) -> u64 {
        self.cinstr
    }

    pub fn total_steps(&self) -> u64 {
        self.total_steps
    }

    /// Serialize and encode a full checkpoint after every primitive call, as a
    /// snapshot-based debugger would (timing baseline only).
    pub fn set_snapshot_baseline(&mut self, on: bool) {
        self.snapshot_baseline = on;
    }

    pub fn snapshots_taken(&self) -> u64 {
        self.snapshots_taken
    }

    /// Copy every emitted message to `w`, one JSON object per line.
    pub fn set_trace_log(&mut self, w: Box<dyn Write + Send>) {
        self.trace_log = Some(w);
    }

    fn emit(&mut self, msg: ClientBound) {
        if let Some(w) = self.trace_log.as_mut() {
            // the log is best effort; a full disk must not stop the debugger
            let _ = w.write_all(&encode(&msg));
        }
        self.outbox.push_back(msg);
    }

    fn error(&mut self, message: impl Into<String>) {
        self.emit(ClientBound::Error { message: message.into() });
    }

    fn after_prim(&mut self) {
        if self.snapshot_baseline {
            // the checkpoint is encoded for the wire but not queued
            let line = encode(&ClientBound::Snapshot { data: Blob(self.k.snapshot()) });
            std::hint::black_box(&line);
            self.snapshots_taken += 1;
        }
    }

    fn pause_with_count(&mut self) {
        let c = self.cinstr;
        self.emit(ClientBound::Executed { count: c });
        self.cinstr = 0;
        self.es = ExecState::Paused;
    }

    /// One step of the running server (breakpoint, deterministic step or primitive).
    pub fn run_step(&mut self) {
        debug_assert_eq!(self.es, ExecState::Running);
        if !self.k.is_running() {
            self.pause_with_count();
            return;
        }
        if !self.bps.is_empty() {
            if let Ok(id) = self.k.instr_id() {
                if self.bps.contains(&id) {
                    self.pause_with_count();
                    return;
                }
            }
        }
        match self.k.step(&mut self.env) {
            Ok(None) => {
                self.cinstr += 1;
                self.total_steps += 1;
            }
            Ok(Some(ev)) => {
                self.total_steps += 1;
                match ev.value {
                    Some(v) => {
                        let count = self.cinstr + 1;
                        self.cinstr = 0;
                        self.emit(ClientBound::Prim { count, prim: ev.prim, args: ev.args, value: v });
                    }
                    _ => self.cinstr += 1,
                }
                self.after_prim();
            }
            Err(e) => {
                self.error(format!("environment failure: {e}"));
                self.pause_with_count();
            }
        }
    }

    /// Processes one client message. Returns false if `msg` is incompatible
    /// with the current execution state (it is then reported, not applied).
    pub fn handle(&mut self, msg: ServerBound) -> bool {
        if !compatible(self.es, &msg) {
            self.error(format!("`{}` is not accepted while {:?}", msg.name(), self.es));
            return false;
        }
        match msg {
            ServerBound::Pause => self.pause_with_count(),
            ServerBound::Play => self.es = ExecState::Running,
            ServerBound::BreakAdd { func, instr } => {
                self.bps.insert(InstrId { func, instr });
            }
            ServerBound::BreakRem { func, instr } => {
                self.bps.remove(&InstrId { func, instr });
            }
            ServerBound::Step => self.step_paused(),
            ServerBound::Mock { value } => match self.k.step_mocked(value) {
                Ok(ev) => {
                    self.total_steps += 1;
                    self.emit(ClientBound::Prim { count: 1, prim: ev.prim, args: ev.args, value });
                    self.after_prim();
                }
                Err(e) => self.error(format!("mock rejected: {e}")),
            },
            ServerBound::Inspect => {
                let data = Blob(self.k.snapshot());
                self.emit(ClientBound::Snapshot { data });
            }
            ServerBound::Reset => {
                self.k = ProgramState::instantiate(self.module.clone()).expect("module instantiated before");
                self.env.reset();
                self.cinstr = 0;
            }
        }
        true
    }

    fn step_paused(&mut self) {
        match self.k.classify() {
            Classification::Terminated => self.error("program has terminated"),
            Classification::NonPrim => {
                self.k.step_det().expect("non-primitive step");
                self.total_steps += 1;
                self.emit(ClientBound::Executed { count: 1 });
            }
            Classification::OutputPrim(..) | Classification::InputPrim(..) => match self.k.step_prim(&mut self.env) {
                Ok(ev) => {
                    self.total_steps += 1;
                    match ev.value {
                        Some(value) => self.emit(ClientBound::Prim { count: 1, prim: ev.prim, args: ev.args, value }),
                        None => self.emit(ClientBound::Executed { count: 1 }),
                    }
                    self.after_prim();
                }
                Err(e) => self.error(format!("environment failure: {e}")),
            },
        }
    }

    /// Runs up to `budget` steps while running with nothing queued for the
    /// client. Returns the number of steps taken.
    pub fn run_burst(&mut self, budget: u64) -> u64 {
        let mut n = 0;
        while n < budget && self.es == ExecState::Running && self.outbox.is_empty() {
            self.run_step();
            n += 1;
        }
        n
    }

    /// Handles the next queued message if compatible, else takes a running step.
    /// Returns false when there is nothing to do.
    pub fn poll(&mut self) -> bool {
        let es = self.es;
        // a paused server reports incompatible messages instead of waiting
        if let Some(msg) = self.inbox.pop_front_if(|msg| compatible(es, msg) || es == ExecState::Paused) {
            self.handle(msg);
            return true;
        }
        if self.es == ExecState::Running {
            self.run_step();
            return true;
        }
        false
    }
}
