//! Scheduling between client and server, in process or over TCP.

use std::collections::VecDeque;
use std::net::TcpStream;
use std::sync::Arc;
use std::time::{Duration, Instant};

use crate::client::{DebugClient, FrontendEvent, FrontendRequest};
use crate::protocol::tcp::{LineChannel, TransportError};
use crate::protocol::{compatible, decode, encode, ClientBound, ExecState, ServerBound};
use crate::server::DebugServer;
use crate::wasm::{parse_module, Environment, InstrId, Module};

/// Which rule a scheduler tick applied.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Tick {
    /// The client consumed one server message.
    ServerToClient,
    /// A frontend request was turned into client messages.
    Frontend,
    /// The server consumed one client message.
    ClientToServer,
    ServerStep,
    Idle,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Settled {
    Idle,
    /// The step budget ran out and a pause was issued.
    PausedByBudget,
}

#[derive(Debug, thiserror::Error)]
pub enum SessionError {
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error("no reply from the server within {0:?}")]
    Timeout(Duration),
    #[error("upload rejected: {0}")]
    Upload(String),
}

/// Something that owns a client and can move the session forward.
pub trait Driver {
    fn client(&self) -> &DebugClient;
    fn client_mut(&mut self) -> &mut DebugClient;
    fn submit(&mut self, req: FrontendRequest);
    /// Runs until nothing is left to do. After `step_budget` server steps
    /// without pausing, a pause is requested.
    fn settle(&mut self, step_budget: u64) -> Result<Settled, SessionError>;
    fn take_diagnostics(&mut self) -> Vec<String>;
}

/// Client and server in one process, driven by a single loop.
pub struct Session {
    pub server: DebugServer,
    pub client: DebugClient,
    pub requests: VecDeque<FrontendRequest>,
    /// Round-trip every message through its JSON encoding.
    pub json_wire: bool,
    /// Collect frontend events after each tick.
    pub events_enabled: bool,
    events: Vec<FrontendEvent>,
    diagnostics: Vec<String>,
    last_state: Option<ExecState>,
    last_highlight: Option<InstrId>,
    env_template: Environment,
}

fn wire<T: serde::Serialize + serde::de::DeserializeOwned>(msg: T) -> T {
    decode(&encode(&msg)).expect("encoded messages decode")
}

/// Index of the next frontend request that may enter the client. Requests
/// wait until every earlier one has been answered, so replies are never
/// attributed to the wrong node; a running program admits only pause and
/// breakpoint edits, and a pause may overtake waiting requests.
fn admissible(requests: &VecDeque<FrontendRequest>, client: &DebugClient, es: ExecState) -> Option<usize> {
    if requests.is_empty() || !client.outbox.is_empty() || client.is_waiting() {
        return None;
    }
    if es == ExecState::Paused {
        return Some(0);
    }
    match requests.front()? {
        FrontendRequest::Pause
        | FrontendRequest::BreakAdd { .. }
        | FrontendRequest::BreakRem { .. }
        | FrontendRequest::Resync => Some(0),
        _ => requests.iter().position(|r| *r == FrontendRequest::Pause),
    }
}

impl Session {
    pub fn new(module: Arc<Module>, env: Environment) -> Result<Self, crate::wasm::ExecError> {
        Ok(Session {
            server: DebugServer::new(module.clone(), env.clone())?,
            client: DebugClient::new(module),
            requests: VecDeque::new(),
            json_wire: false,
            events_enabled: false,
            events: Vec::new(),
            diagnostics: Vec::new(),
            last_state: None,
            last_highlight: None,
            env_template: env,
        })
    }

    pub fn diagnostics(&self) -> &[String] {
        &self.diagnostics
    }

    fn diagnose(&mut self, message: String) {
        log::warn!("{message}");
        if self.events_enabled {
            self.events.push(FrontendEvent::Diagnostics { message: message.clone() });
        }
        self.diagnostics.push(message);
    }

    /// Applies at most one scheduling rule.
    pub fn tick(&mut self) -> Tick {
        let t = self.tick_inner();
        if self.events_enabled {
            self.collect_events();
        }
        t
    }

    fn tick_inner(&mut self) -> Tick {
        if let Some(msg) = self.server.outbox.pop_front() {
            let msg = if self.json_wire { wire(msg) } else { msg };
            if let Err(e) = self.client.on_message(msg) {
                self.diagnose(format!("client: {e}"));
            }
            for d in self.client.take_diagnostics() {
                self.diagnose(d);
            }
            return Tick::ServerToClient;
        }
        if let Some(head) = self.client.outbox.front() {
            let es = self.server.exec_state();
            // a paused server answers incompatible messages with an error;
            // a running one only lets a queued pause overtake the head
            let pick = if compatible(es, head) || es == ExecState::Paused {
                Some(0)
            } else {
                self.client.outbox.iter().position(|m| *m == ServerBound::Pause)
            };
            if let Some(i) = pick {
                let msg = self.client.outbox.remove(i).unwrap();
                let msg = if self.json_wire { wire(msg) } else { msg };
                self.server.handle(msg);
                return Tick::ClientToServer;
            }
        }
        if let Some(i) = admissible(&self.requests, &self.client, self.server.exec_state()) {
            let req = self.requests.remove(i).unwrap();
            self.frontend(req);
            return Tick::Frontend;
        }
        if self.server.exec_state() == ExecState::Running {
            self.server.run_step();
            return Tick::ServerStep;
        }
        Tick::Idle
    }

    fn frontend(&mut self, req: FrontendRequest) {
        match req {
            FrontendRequest::Upload { wat } => {
                if let Err(e) = self.upload(&wat) {
                    self.diagnose(e.to_string());
                }
            }
            FrontendRequest::Resync => {
                let full = self.client.full_delta();
                self.events.push(full);
            }
            other => {
                if let Err(e) = self.client.request(other) {
                    self.diagnose(format!("client: {e}"));
                }
            }
        }
    }

    /// Replaces the program, starting over with an empty tree.
    pub fn upload(&mut self, wat: &str) -> Result<(), SessionError> {
        let module = Arc::new(parse_module(wat).map_err(|e| SessionError::Upload(e.to_string()))?);
        let server = DebugServer::new(module.clone(), self.env_template.clone())
            .map_err(|e| SessionError::Upload(e.to_string()))?;
        let mut client = DebugClient::new(module);
        client.solver = self.client.solver.clone();
        client.bounds = self.client.bounds;
        self.server = server;
        self.client = client;
        self.last_highlight = None;
        if self.events_enabled {
            self.events.push(self.client.full_delta());
        }
        Ok(())
    }

    fn collect_events(&mut self) {
        if let Some(d) = self.client.take_delta() {
            self.events.push(d);
        }
        let state = self.server.exec_state();
        if self.last_state != Some(state) {
            self.last_state = Some(state);
            self.events.push(FrontendEvent::SessionState { state });
        }
        if state == ExecState::Paused {
            let id = self.server.state().instr_id().ok();
            if id != self.last_highlight {
                self.last_highlight = id;
                if let Some(id) = id {
                    self.events.push(FrontendEvent::SourceHighlight { func: id.func, instr: id.instr });
                }
            }
        }
    }

    pub fn take_events(&mut self) -> Vec<FrontendEvent> {
        std::mem::take(&mut self.events)
    }
}

impl Driver for Session {
    fn client(&self) -> &DebugClient {
        &self.client
    }

    fn client_mut(&mut self) -> &mut DebugClient {
        &mut self.client
    }

    fn submit(&mut self, req: FrontendRequest) {
        self.requests.push_back(req);
    }

    fn settle(&mut self, step_budget: u64) -> Result<Settled, SessionError> {
        let mut steps = 0u64;
        let mut outcome = Settled::Idle;
        loop {
            match self.tick() {
                Tick::Idle => return Ok(outcome),
                Tick::ServerStep => {
                    steps += 1;
                    if steps == step_budget && self.server.exec_state() == ExecState::Running {
                        self.requests.push_back(FrontendRequest::Pause);
                        outcome = Settled::PausedByBudget;
                    }
                }
                _ => {}
            }
        }
    }

    fn take_diagnostics(&mut self) -> Vec<String> {
        std::mem::take(&mut self.diagnostics)
    }
}

/// Serves one connection: feeds incoming messages to the server and
/// forwards everything it emits, until the peer disconnects.
const SERVE_BURST: u64 = 256;

pub fn serve_stream(server: &mut DebugServer, stream: TcpStream) -> Result<(), TransportError> {
    let mut ch: LineChannel<ClientBound, ServerBound> = LineChannel::new(stream)?;
    loop {
        loop {
            match ch.try_recv() {
                Ok(Some(msg)) => server.inbox.push_back(msg),
                Ok(None) => break,
                Err(TransportError::Closed) => return Ok(()),
                Err(TransportError::Decode(e)) => {
                    ch.send(&ClientBound::Error { message: format!("bad message: {e}") })?;
                }
                Err(e) => return Err(e),
            }
        }
        let mut busy = server.poll();
        if busy && server.inbox.is_empty() {
            // checking the socket costs more than an instruction
            busy |= server.run_burst(SERVE_BURST) > 0;
        }
        while let Some(msg) = server.outbox.pop_front() {
            ch.send(&msg)?;
        }
        if !busy {
            match ch.recv_timeout(Duration::from_millis(50)) {
                Ok(Some(msg)) => server.inbox.push_back(msg),
                Ok(None) => {}
                Err(TransportError::Closed) => return Ok(()),
                Err(TransportError::Decode(e)) => {
                    ch.send(&ClientBound::Error { message: format!("bad message: {e}") })?;
                }
                Err(e) => return Err(e),
            }
        }
    }
}

/// A client talking to a server in another process.
pub struct RemoteSession {
    pub client: DebugClient,
    ch: LineChannel<ServerBound, ClientBound>,
    requests: VecDeque<FrontendRequest>,
    diagnostics: Vec<String>,
    /// Sent messages that the server answers once it is paused.
    expected: u64,
    /// How long to wait for replies before giving up.
    pub reply_timeout: Duration,
}

impl RemoteSession {
    pub fn connect(module: Arc<Module>, stream: TcpStream) -> Result<Self, SessionError> {
        Ok(RemoteSession {
            client: DebugClient::new(module),
            ch: LineChannel::new(stream).map_err(TransportError::from)?,
            requests: VecDeque::new(),
            diagnostics: Vec::new(),
            expected: 0,
            reply_timeout: Duration::from_secs(10),
        })
    }

    fn absorb(&mut self, msg: ClientBound) {
        // messages of a running server answer nothing that was sent
        if self.client.server_state() == ExecState::Paused && self.expected > 0 {
            self.expected -= 1;
        }
        if let Err(e) = self.client.on_message(msg) {
            self.diagnostics.push(format!("client: {e}"));
        }
        self.diagnostics.extend(self.client.take_diagnostics());
    }
}

impl Driver for RemoteSession {
    fn client(&self) -> &DebugClient {
        &self.client
    }

    fn client_mut(&mut self) -> &mut DebugClient {
        &mut self.client
    }

    fn submit(&mut self, req: FrontendRequest) {
        self.requests.push_back(req);
    }

    /// `step_budget` is read as milliseconds of running before a pause is sent.
    fn settle(&mut self, step_budget: u64) -> Result<Settled, SessionError> {
        let started = Instant::now();
        let mut outcome = Settled::Idle;
        let mut last_reply = Instant::now();
        loop {
            if self.expected == 0 {
                if let Some(i) = admissible(&self.requests, &self.client, self.client.server_state()) {
                    let req = self.requests.remove(i).unwrap();
                    if let Err(e) = self.client.request(req) {
                        self.diagnostics.push(format!("client: {e}"));
                    }
                    while let Some(msg) = self.client.outbox.pop_front() {
                        if matches!(msg, ServerBound::Step | ServerBound::Mock { .. } | ServerBound::Inspect) {
                            self.expected += 1;
                        }
                        self.ch.send(&msg)?;
                    }
                    last_reply = Instant::now();
                    continue;
                }
            }
            let running = self.client.server_state() == ExecState::Running;
            let waiting = self.expected > 0 || self.client.is_waiting() || running;
            if !waiting && self.requests.is_empty() {
                // drain stragglers such as errors for rejected messages
                match self.ch.recv_timeout(Duration::from_millis(20))? {
                    Some(msg) => self.absorb(msg),
                    None => return Ok(outcome),
                }
                continue;
            }
            let got = self.ch.recv_timeout(Duration::from_millis(20))?;
            let silent = got.is_none();
            if let Some(msg) = got {
                last_reply = Instant::now();
                self.absorb(msg);
            }
            if running {
                // a running server may never fall silent, so the clock is checked every time
                if outcome == Settled::Idle && started.elapsed() >= Duration::from_millis(step_budget) {
                    self.requests.push_back(FrontendRequest::Pause);
                    outcome = Settled::PausedByBudget;
                }
            } else if silent && last_reply.elapsed() >= self.reply_timeout {
                return Err(SessionError::Timeout(self.reply_timeout));
            }
        }
    }

    fn take_diagnostics(&mut self) -> Vec<String> {
        std::mem::take(&mut self.diagnostics)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::client::SuggestBounds;
    use crate::wasm::parse_module;
    use std::net::TcpListener;

    const TEMP: &str = r#"(module
        (import "env" "chip_analog_read" (func $read (param i32) (result i32)))
        (import "env" "print_int" (func $print (param i32)))
        (func (export "main")
          (call $print (i32.add (i32.const 1) (call $read (i32.const 12))))))"#;

    fn session() -> Session {
        Session::new(Arc::new(parse_module(TEMP).unwrap()), Environment::constant(7)).unwrap()
    }

    #[test]
    fn server_messages_have_priority() {
        let mut s = session();
        s.client.request(FrontendRequest::Step).unwrap();
        s.client.request(FrontendRequest::Step).unwrap();
        assert_eq!(s.tick(), Tick::ClientToServer);
        // executed(1) waits in the server outbox; it goes before the second step
        assert_eq!(s.tick(), Tick::ServerToClient);
        assert_eq!(s.tick(), Tick::ClientToServer);
        assert_eq!(s.tick(), Tick::ServerToClient);
        assert_eq!(s.tick(), Tick::Idle);
        assert_eq!(s.client.tree.node(0).unwrap().edges.len(), 1);
    }

    #[test]
    fn play_runs_to_termination() {
        let mut s = session();
        s.submit(FrontendRequest::Play);
        assert_eq!(s.settle(1_000).unwrap(), Settled::Idle);
        assert_eq!(s.server.exec_state(), ExecState::Paused);
        assert_eq!(s.client.tree.leaf_count(), 1);
        // 3 steps, the read, then add, print, end of main
        assert_eq!(s.client.tree.len(), 4);
    }

    #[test]
    fn running_server_waits_for_pause_before_step() {
        let src = "(module (func (export \"main\") (loop $l (br $l))))";
        let mut s = Session::new(Arc::new(parse_module(src).unwrap()), Environment::constant(0)).unwrap();
        s.submit(FrontendRequest::Play);
        s.submit(FrontendRequest::Step);
        assert_eq!(s.settle(50).unwrap(), Settled::PausedByBudget);
        // step waited behind the running server and was applied after the pause
        assert!(s.diagnostics().is_empty(), "{:?}", s.diagnostics());
    }

    #[test]
    fn incompatible_while_paused_is_reported() {
        let mut s = session();
        s.client.outbox.push_back(ServerBound::Pause);
        s.settle(10).unwrap();
        assert_eq!(s.diagnostics().len(), 1);
    }

    #[test]
    fn events_follow_the_tree() {
        let mut s = session();
        s.events_enabled = true;
        s.submit(FrontendRequest::Suggest { bounds: SuggestBounds::default() });
        s.settle(100).unwrap();
        let ev = s.take_events();
        assert!(ev.iter().any(|e| matches!(e, FrontendEvent::SessionState { state: ExecState::Paused })));
        let added: usize = ev
            .iter()
            .map(|e| match e {
                FrontendEvent::TreeDelta { nodes, .. } => nodes.len(),
                _ => 0,
            })
            .sum();
        assert!(added >= s.client.tree.len());
        s.submit(FrontendRequest::Upload { wat: "(module (func (export \"main\")))".into() });
        s.settle(10).unwrap();
        assert_eq!(s.client.tree.len(), 1);
        s.submit(FrontendRequest::Upload { wat: "(module".into() });
        s.settle(10).unwrap();
        assert!(s.diagnostics().iter().any(|d| d.contains("upload rejected")));
    }

    #[test]
    fn remote_session_matches_in_process() {
        let module = Arc::new(parse_module(TEMP).unwrap());
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let m2 = module.clone();
        let handle = std::thread::spawn(move || {
            let (stream, _) = listener.accept().unwrap();
            let mut server = DebugServer::new(m2, Environment::constant(7)).unwrap();
            serve_stream(&mut server, stream).unwrap();
        });
        let mut remote = RemoteSession::connect(module.clone(), TcpStream::connect(addr).unwrap()).unwrap();
        let mut local = session();
        for d in [&mut remote as &mut dyn Driver, &mut local as &mut dyn Driver] {
            d.submit(FrontendRequest::Step);
            d.settle(1000).unwrap();
            d.submit(FrontendRequest::Play);
            d.settle(1000).unwrap();
            d.submit(FrontendRequest::Slide { node_id: 1 });
            d.settle(1000).unwrap();
        }
        assert_eq!(remote.client.tree, local.client.tree);
        assert_eq!(remote.client.current(), local.client.current());
        drop(remote);
        handle.join().unwrap();
    }
}
