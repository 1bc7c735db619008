//! Debugger client: owns the multiverse tree and turns user requests into
//! server messages.

pub mod tree;

use std::collections::VecDeque;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::concolic::{concolic, expand, Analysis, Bounds, SolverConfig, StopReason};
use crate::protocol::{ClientBound, ExecState, ServerBound};
use crate::wasm::{Classification, InstrId, Module, ProgramState};
use tree::{EdgeLabel, MultiverseTree, NodeId, NodeJson, PrimMeta, TreeError};

/// Analysis limits as sent by a frontend; missing fields take the defaults.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SuggestBounds {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_iter: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_syms: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_instr: Option<u64>,
}

impl SuggestBounds {
    pub fn apply(&self, base: Bounds) -> Bounds {
        Bounds {
            max_iterations: self.max_iter.unwrap_or(base.max_iterations).max(1),
            max_syms: self.max_syms.unwrap_or(base.max_syms).max(1),
            max_instr: self.max_instr.unwrap_or(base.max_instr).max(1),
            max_loops: base.max_loops,
        }
    }
}

/// Browser or script to session.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "camelCase")]
pub enum FrontendRequest {
    Step,
    Pause,
    Play,
    Mock { value: i32 },
    #[serde(rename_all = "camelCase")]
    Slide { node_id: NodeId },
    Suggest {
        #[serde(default, flatten)]
        bounds: SuggestBounds,
    },
    Reset,
    Inspect,
    BreakAdd { func: u32, instr: u32 },
    BreakRem { func: u32, instr: u32 },
    /// Replace the program; handled by the session.
    Upload { wat: String },
    /// Ask for the whole tree again.
    Resync,
}

/// Session to browser.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "camelCase")]
pub enum FrontendEvent {
    TreeDelta { nodes: Vec<NodeJson>, current: NodeId },
    SessionState { state: ExecState },
    SourceHighlight { func: u32, instr: u32 },
    Diagnostics { message: String },
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ClientError {
    #[error(transparent)]
    Tree(#[from] TreeError),
    #[error("replay diverged: expected {expected:?}, got {got}")]
    ReplayDiverged { expected: EdgeLabel, got: String },
    #[error("snapshot: {0}")]
    Snapshot(String),
    #[error("analysis failed: {0}")]
    Analysis(String),
}

/// What the client is waiting for in the server's replies.
#[derive(Clone, Debug, PartialEq, Eq)]
enum Awaiting {
    Suggest(Bounds),
    Inspect,
}

/// Result of the last suggestion, for reporting.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SuggestReport {
    pub paths: usize,
    pub max_options: usize,
    pub iterations: usize,
    pub stop: StopReason,
    pub grafted_at: NodeId,
}

pub struct DebugClient {
    module: Arc<Module>,
    pub tree: MultiverseTree,
    current: NodeId,
    /// Messages for the server, oldest first.
    pub outbox: VecDeque<ServerBound>,
    /// Labels still to be echoed back by a slide.
    replay: VecDeque<EdgeLabel>,
    replay_acc: u64,
    pending_slide: Option<NodeId>,
    awaiting: VecDeque<Awaiting>,
    /// Server execution state as implied by the message stream.
    server_state: ExecState,
    last_snapshot: Option<ProgramState>,
    pub solver: SolverConfig,
    pub bounds: Bounds,
    last_suggest: Option<SuggestReport>,
    diagnostics: VecDeque<String>,
}

impl DebugClient {
    pub fn new(module: Arc<Module>) -> Self {
        DebugClient {
            module,
            tree: MultiverseTree::new(),
            current: 0,
            outbox: VecDeque::new(),
            replay: VecDeque::new(),
            replay_acc: 0,
            pending_slide: None,
            awaiting: VecDeque::new(),
            server_state: ExecState::Paused,
            last_snapshot: None,
            solver: SolverConfig::Builtin,
            bounds: Bounds::default(),
            last_suggest: None,
            diagnostics: VecDeque::new(),
        }
    }

    pub fn module(&self) -> &Arc<Module> {
        &self.module
    }

    pub fn current(&self) -> NodeId {
        self.current
    }

    pub fn server_state(&self) -> ExecState {
        self.server_state
    }

    /// Slide target whose replay has not finished yet.
    pub fn pending_slide(&self) -> Option<NodeId> {
        self.pending_slide
    }

    /// True while requests sent earlier still expect replies.
    pub fn is_waiting(&self) -> bool {
        !self.awaiting.is_empty() || !self.replay.is_empty()
    }

    pub fn last_snapshot(&self) -> Option<&ProgramState> {
        self.last_snapshot.as_ref()
    }

    pub fn last_suggest(&self) -> Option<&SuggestReport> {
        self.last_suggest.as_ref()
    }

    pub fn take_last_suggest(&mut self) -> Option<SuggestReport> {
        self.last_suggest.take()
    }

    pub fn take_diagnostics(&mut self) -> Vec<String> {
        self.diagnostics.drain(..).collect()
    }

    fn send(&mut self, msg: ServerBound) {
        match msg {
            ServerBound::Play => self.server_state = ExecState::Running,
            ServerBound::Reset => self.current = self.tree.root(),
            _ => {}
        }
        self.outbox.push_back(msg);
    }

    /// Translates a user request into server messages. `Upload` and
    /// `Resync` are session concerns and ignored here.
    pub fn request(&mut self, req: FrontendRequest) -> Result<(), ClientError> {
        match req {
            FrontendRequest::Step => self.send(ServerBound::Step),
            FrontendRequest::Pause => self.send(ServerBound::Pause),
            FrontendRequest::Play => self.send(ServerBound::Play),
            FrontendRequest::Mock { value } => self.send(ServerBound::Mock { value }),
            FrontendRequest::BreakAdd { func, instr } => self.send(ServerBound::break_add(InstrId { func, instr })),
            FrontendRequest::BreakRem { func, instr } => self.send(ServerBound::break_rem(InstrId { func, instr })),
            FrontendRequest::Reset => self.send(ServerBound::Reset),
            FrontendRequest::Inspect => {
                self.awaiting.push_back(Awaiting::Inspect);
                self.send(ServerBound::Inspect);
            }
            FrontendRequest::Suggest { bounds } => {
                self.awaiting.push_back(Awaiting::Suggest(bounds.apply(self.bounds)));
                self.send(ServerBound::Inspect);
            }
            FrontendRequest::Slide { node_id } => self.slide(node_id)?,
            FrontendRequest::Upload { .. } | FrontendRequest::Resync => {}
        }
        Ok(())
    }

    /// Queues the messages that move the server to `target`, restarting
    /// the program when `target` is not below the current node.
    pub fn slide(&mut self, target: NodeId) -> Result<(), ClientError> {
        self.tree.node(target)?;
        let path = match self.tree.path_to(self.current, target) {
            Ok(p) => p,
            Err(_) => {
                self.send(ServerBound::Reset);
                self.tree.path_to(self.tree.root(), target)?
            }
        };
        for label in &path {
            match *label {
                EdgeLabel::Step(n) => {
                    for _ in 0..n {
                        self.send(ServerBound::Step);
                    }
                }
                EdgeLabel::Mock(value) => self.send(ServerBound::Mock { value }),
            }
        }
        if !path.is_empty() {
            self.pending_slide = Some(target);
        }
        self.replay.extend(path);
        Ok(())
    }

    /// Applies one server message to the tree.
    pub fn on_message(&mut self, msg: ClientBound) -> Result<(), ClientError> {
        match msg {
            ClientBound::Executed { count } => {
                if self.server_state == ExecState::Running {
                    self.server_state = ExecState::Paused;
                }
                self.on_executed(count)
            }
            ClientBound::Prim { count, prim, args, value } => self.on_prim(count, prim, args, value),
            ClientBound::Snapshot { data } => self.on_snapshot(&data.0),
            ClientBound::Error { message } => {
                // a failed step or mock will never be echoed; stop expecting it
                if !self.replay.is_empty() {
                    self.replay.clear();
                    self.replay_acc = 0;
                    self.pending_slide = None;
                }
                self.diagnostics.push_back(format!("server: {message}"));
                Ok(())
            }
        }
    }

    fn on_executed(&mut self, count: u64) -> Result<(), ClientError> {
        if count == 0 {
            return Ok(());
        }
        if let Some(&EdgeLabel::Step(n)) = self.replay.front() {
            self.replay_acc += count;
            if self.replay_acc > n {
                return Err(self.diverged(EdgeLabel::Step(n), format!("executed({count})")));
            }
            if self.replay_acc == n {
                self.replay.pop_front();
                self.replay_acc = 0;
                self.current = self.tree.traverse_steps(self.current, n)?;
                self.slide_progress();
            }
            return Ok(());
        }
        if let Some(&expected) = self.replay.front() {
            return Err(self.diverged(expected, format!("executed({count})")));
        }
        self.current = self.tree.traverse_steps(self.current, count)?;
        Ok(())
    }

    fn on_prim(&mut self, count: u64, prim: u32, args: Vec<i32>, value: i32) -> Result<(), ClientError> {
        if let Some(&expected) = self.replay.front() {
            if expected != EdgeLabel::Mock(value) || count != 1 || self.replay_acc != 0 {
                return Err(self.diverged(expected, format!("prim({count}, {value})")));
            }
            self.replay.pop_front();
        }
        if count > 1 {
            self.current = self.tree.traverse_steps(self.current, count - 1)?;
        }
        let meta = PrimMeta { prim, name: self.module.func_name(prim), args };
        self.current = self.tree.traverse_mock(self.current, value, Some(meta))?;
        self.slide_progress();
        Ok(())
    }

    fn slide_progress(&mut self) {
        if self.replay.is_empty() {
            self.pending_slide = None;
        }
    }

    fn diverged(&mut self, expected: EdgeLabel, got: String) -> ClientError {
        self.replay.clear();
        self.replay_acc = 0;
        self.pending_slide = None;
        ClientError::ReplayDiverged { expected, got }
    }

    fn on_snapshot(&mut self, blob: &[u8]) -> Result<(), ClientError> {
        let k = ProgramState::restore(blob, self.module.clone()).map_err(|e| ClientError::Snapshot(e.to_string()))?;
        self.last_snapshot = Some(k.clone());
        match self.awaiting.pop_front() {
            Some(Awaiting::Suggest(bounds)) => self.suggest_from(&k, &bounds).map(|_| ()),
            _ => Ok(()),
        }
    }

    /// Runs the analysis from `k` and grafts its tree below the current node.
    pub fn suggest_from(&mut self, k: &ProgramState, bounds: &Bounds) -> Result<SuggestReport, ClientError> {
        let at = self.current;
        let report = if k.is_running() {
            let cs = expand(k).map_err(|e| ClientError::Analysis(e.to_string()))?;
            let mut solver = self.solver.make();
            let analysis = concolic(&cs, bounds, solver.as_mut()).map_err(|e| ClientError::Analysis(e.to_string()))?;
            if let StopReason::SolverUnknown(why) = &analysis.stop {
                self.diagnostics.push_back(format!("suggestion incomplete: {why}"));
            }
            self.graft(&analysis, at)?;
            SuggestReport {
                paths: analysis.paths(),
                max_options: analysis.max_options(),
                iterations: analysis.runs.len(),
                stop: analysis.stop,
                grafted_at: at,
            }
        } else {
            // nothing left to explore
            SuggestReport { paths: 1, max_options: 0, iterations: 0, stop: StopReason::Exhausted, grafted_at: at }
        };
        self.last_suggest = Some(report.clone());
        Ok(report)
    }

    /// Copies the analysis tree's edges onto the client tree below `at`.
    pub fn graft(&mut self, analysis: &Analysis, at: NodeId) -> Result<(), ClientError> {
        let src = &analysis.tree;
        let mut stack = vec![(src.root(), at)];
        while let Some((s, d)) = stack.pop() {
            let node = src.node(s)?;
            for e in &node.edges {
                let to = match e.label {
                    EdgeLabel::Step(n) => self.tree.traverse_steps(d, n)?,
                    EdgeLabel::Mock(v) => self.tree.traverse_mock(d, v, node.meta.clone())?,
                };
                stack.push((e.to, to));
            }
        }
        Ok(())
    }

    /// Classification of the last inspected state.
    pub fn last_classification(&self) -> Option<Classification> {
        self.last_snapshot.as_ref().map(ProgramState::classify)
    }

    /// Tree changes since the previous call, if any.
    pub fn take_delta(&mut self) -> Option<FrontendEvent> {
        let dirty = self.tree.take_dirty();
        if dirty.is_empty() {
            return None;
        }
        Some(FrontendEvent::TreeDelta {
            nodes: dirty.into_iter().map(|id| self.tree.node_json(id)).collect(),
            current: self.current,
        })
    }

    /// Every node, for a frontend that lost track.
    pub fn full_delta(&self) -> FrontendEvent {
        FrontendEvent::TreeDelta {
            nodes: self.tree.nodes().map(|n| self.tree.node_json(n.id)).collect(),
            current: self.current,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::Blob;
    use crate::wasm::parse_module;

    fn client() -> DebugClient {
        let m = parse_module(
            r#"(module (import "env" "chip_analog_read" (func $read (param i32) (result i32)))
                 (func (export "main") (drop (call $read (i32.const 12)))))"#,
        )
        .unwrap();
        DebugClient::new(Arc::new(m))
    }

    fn prim(count: u64, value: i32) -> ClientBound {
        ClientBound::Prim { count, prim: 0, args: vec![12], value }
    }

    #[test]
    fn executed_zero_is_noop() {
        let mut c = client();
        c.on_message(ClientBound::Executed { count: 0 }).unwrap();
        assert_eq!(c.tree.len(), 1);
        assert_eq!(c.current(), 0);
    }

    #[test]
    fn prim_makes_step_then_mock() {
        let mut c = client();
        c.on_message(prim(3, 5)).unwrap();
        let root = c.tree.node(0).unwrap();
        assert_eq!(root.edges[0].label, EdgeLabel::Step(2));
        let mid = c.tree.node(root.edges[0].to).unwrap();
        assert_eq!(mid.edges[0].label, EdgeLabel::Mock(5));
        assert_eq!(mid.meta.as_ref().unwrap().call_text(), "chip_analog_read(12)");
        assert_eq!(c.current(), mid.edges[0].to);
    }

    #[test]
    fn slide_paths() {
        let mut c = client();
        c.on_message(prim(3, 5)).unwrap();
        let leaf5 = c.current();
        // slide to current: nothing to send
        c.slide(leaf5).unwrap();
        assert!(c.outbox.is_empty());
        // sibling: restart and replay from the root
        c.on_message(ClientBound::Executed { count: 0 }).unwrap();
        c.slide(1).unwrap();
        let sent: Vec<_> = c.outbox.drain(..).collect();
        assert_eq!(sent, vec![ServerBound::Reset, ServerBound::Step, ServerBound::Step]);
        assert_eq!(c.current(), 0);
        assert_eq!(c.pending_slide(), Some(1));
        let before = c.tree.clone();
        c.on_message(ClientBound::Executed { count: 1 }).unwrap();
        assert_eq!(c.current(), 0);
        c.on_message(ClientBound::Executed { count: 1 }).unwrap();
        assert_eq!(c.current(), 1);
        assert_eq!(c.pending_slide(), None);
        assert_eq!(c.tree, before, "slide must not change the tree");
        assert!(matches!(c.slide(99), Err(ClientError::Tree(TreeError::UnknownNode(99)))));
    }

    #[test]
    fn replay_divergence_reported() {
        let mut c = client();
        c.on_message(prim(1, 5)).unwrap();
        c.slide(0).unwrap();
        c.slide(c.tree.node(0).unwrap().edges[0].to).unwrap();
        c.outbox.clear();
        assert!(matches!(c.on_message(prim(1, 6)), Err(ClientError::ReplayDiverged { .. })));
    }

    #[test]
    fn suggest_grafts_two_branches() {
        let m = parse_module(
            r#"(module (import "env" "chip_analog_read" (func $read (param i32) (result i32)))
                 (import "env" "chip_digital_write" (func $w (param i32 i32)))
                 (func (export "main")
                   (if (i32.lt_s (call $read (i32.const 0)) (i32.const 5))
                     (then (call $w (i32.const 13) (i32.const 1))))))"#,
        )
        .unwrap();
        let module = Arc::new(m);
        let mut c = DebugClient::new(module.clone());
        c.request(FrontendRequest::Suggest { bounds: SuggestBounds::default() }).unwrap();
        assert_eq!(c.outbox.pop_front(), Some(ServerBound::Inspect));
        let k = ProgramState::instantiate(module).unwrap();
        c.on_message(ClientBound::Snapshot { data: Blob(k.snapshot()) }).unwrap();
        let r = c.last_suggest().unwrap();
        assert_eq!(r.paths, 2);
        assert_eq!(c.tree.leaf_count(), 2);
        assert_eq!(c.current(), 0);
        let delta = c.take_delta().unwrap();
        let text = serde_json::to_string(&delta).unwrap();
        assert!(text.starts_with("{\"type\":\"treeDelta\",\"nodes\":["), "{text}");
        assert!(c.take_delta().is_none());
    }

    #[test]
    fn frontend_request_wire_names() {
        let r: FrontendRequest = serde_json::from_str(r#"{"type":"slide","nodeId":4}"#).unwrap();
        assert_eq!(r, FrontendRequest::Slide { node_id: 4 });
        let r: FrontendRequest = serde_json::from_str(r#"{"type":"suggest","maxIter":3}"#).unwrap();
        assert_eq!(r, FrontendRequest::Suggest { bounds: SuggestBounds { max_iter: Some(3), ..Default::default() } });
        let r: FrontendRequest = serde_json::from_str(r#"{"type":"suggest"}"#).unwrap();
        assert_eq!(r, FrontendRequest::Suggest { bounds: SuggestBounds::default() });
        let e = FrontendEvent::SessionState { state: ExecState::Paused };
        assert_eq!(serde_json::to_string(&e).unwrap(), r#"{"type":"sessionState","state":"Paused"}"#);
    }
}
