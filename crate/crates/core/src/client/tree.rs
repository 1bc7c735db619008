//! Multiverse tree with counter-compressed step edges.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

pub type NodeId = u64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum EdgeLabel {
    /// `n >= 1` deterministic steps.
    Step(u64),
    /// Input primitive returned this value.
    Mock(i32),
}

/// Display data for a choice node: which primitive the mock edges answer.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrimMeta {
    pub prim: u32,
    pub name: String,
    pub args: Vec<i32>,
}

impl PrimMeta {
    /// `name(a, b)` as shown on mock edges.
    pub fn call_text(&self) -> String {
        let args: Vec<String> = self.args.iter().map(|a| a.to_string()).collect();
        format!("{}({})", self.name, args.join(","))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Edge {
    pub label: EdgeLabel,
    pub to: NodeId,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TreeNode {
    pub id: NodeId,
    pub parent: Option<NodeId>,
    pub edges: Vec<Edge>,
    pub meta: Option<PrimMeta>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TreeError {
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("node {0} is not a descendant of node {1}")]
    NotDescendant(NodeId, NodeId),
    #[error("desync at node {0}: {1}")]
    Desync(NodeId, String),
    #[error("malformed tree: {0}")]
    Malformed(String),
}

/// Rooted tree of explored executions. Node ids are arena indices, so they
/// increase monotonically and are never reused.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MultiverseTree {
    nodes: Vec<TreeNode>,
    /// Nodes created or whose edge list changed since the last `take_dirty`.
    dirty: BTreeSet<NodeId>,
}

impl Default for MultiverseTree {
    fn default() -> Self {
        Self::new()
    }
}

impl MultiverseTree {
    pub fn new() -> Self {
        let root = TreeNode { id: 0, parent: None, edges: Vec::new(), meta: None };
        MultiverseTree { nodes: vec![root], dirty: BTreeSet::from([0]) }
    }

    pub fn root(&self) -> NodeId {
        0
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn node(&self, id: NodeId) -> Result<&TreeNode, TreeError> {
        self.nodes.get(id as usize).ok_or(TreeError::UnknownNode(id))
    }

    pub fn contains(&self, id: NodeId) -> bool {
        (id as usize) < self.nodes.len()
    }

    pub fn nodes(&self) -> impl Iterator<Item = &TreeNode> {
        self.nodes.iter()
    }

    pub fn edge_count(&self) -> usize {
        self.nodes.iter().map(|n| n.edges.len()).sum()
    }

    /// Leaves = explored paths.
    pub fn leaf_count(&self) -> usize {
        self.nodes.iter().filter(|n| n.edges.is_empty()).count()
    }

    /// Largest number of mock edges leaving one node.
    pub fn max_options(&self) -> usize {
        self.nodes
            .iter()
            .map(|n| n.edges.iter().filter(|e| matches!(e.label, EdgeLabel::Mock(_))).count())
            .max()
            .unwrap_or(0)
    }

    fn add_node(&mut self, parent: NodeId) -> NodeId {
        let id = self.nodes.len() as NodeId;
        self.nodes.push(TreeNode { id, parent: Some(parent), edges: Vec::new(), meta: None });
        self.dirty.insert(id);
        id
    }

    fn add_edge(&mut self, from: NodeId, label: EdgeLabel) -> NodeId {
        let to = self.add_node(from);
        self.nodes[from as usize].edges.push(Edge { label, to });
        self.dirty.insert(from);
        to
    }

    /// Follows or creates `n` deterministic steps from `from`, splitting a
    /// compressed edge when the walk stops inside it.
    pub fn traverse_steps(&mut self, from: NodeId, mut n: u64) -> Result<NodeId, TreeError> {
        let mut at = from;
        self.node(at)?;
        while n > 0 {
            let node = &self.nodes[at as usize];
            match node.edges.first().copied() {
                None => return Ok(self.add_edge(at, EdgeLabel::Step(n))),
                Some(Edge { label: EdgeLabel::Step(m), to }) => {
                    if m <= n {
                        at = to;
                        n -= m;
                    } else {
                        // Step(m) -> Step(n) + Step(m - n)
                        let mid = self.add_node(at);
                        self.nodes[at as usize].edges[0] = Edge { label: EdgeLabel::Step(n), to: mid };
                        self.nodes[mid as usize].edges.push(Edge { label: EdgeLabel::Step(m - n), to });
                        self.nodes[to as usize].parent = Some(mid);
                        self.dirty.insert(at);
                        self.dirty.insert(to);
                        return Ok(mid);
                    }
                }
                Some(Edge { label: EdgeLabel::Mock(_), .. }) => {
                    return Err(TreeError::Desync(at, "step at a choice node".into()));
                }
            }
        }
        Ok(at)
    }

    /// Follows or creates the mock edge `v` at `from`.
    pub fn traverse_mock(&mut self, from: NodeId, v: i32, meta: Option<PrimMeta>) -> Result<NodeId, TreeError> {
        let node = self.node(from)?;
        if node.edges.iter().any(|e| matches!(e.label, EdgeLabel::Step(_))) {
            return Err(TreeError::Desync(from, format!("mock {v} where execution is deterministic")));
        }
        if let Some(m) = meta {
            if node.meta.is_none() {
                self.nodes[from as usize].meta = Some(m);
                self.dirty.insert(from);
            }
        }
        match self.nodes[from as usize].edges.iter().find(|e| e.label == EdgeLabel::Mock(v)) {
            Some(e) => Ok(e.to),
            None => Ok(self.add_edge(from, EdgeLabel::Mock(v))),
        }
    }

    pub fn traverse(&mut self, from: NodeId, label: EdgeLabel) -> Result<NodeId, TreeError> {
        match label {
            EdgeLabel::Step(n) => self.traverse_steps(from, n),
            EdgeLabel::Mock(v) => self.traverse_mock(from, v, None),
        }
    }

    /// Edge labels from `from` down to `target`.
    pub fn path_to(&self, from: NodeId, target: NodeId) -> Result<Vec<EdgeLabel>, TreeError> {
        self.node(from)?;
        let mut at = self.node(target)?;
        let mut labels = Vec::new();
        while at.id != from {
            let parent = match at.parent {
                Some(p) => &self.nodes[p as usize],
                None => return Err(TreeError::NotDescendant(target, from)),
            };
            let edge = parent.edges.iter().find(|e| e.to == at.id).expect("parent links match edges");
            labels.push(edge.label);
            at = parent;
        }
        labels.reverse();
        Ok(labels)
    }

    pub fn is_descendant(&self, target: NodeId, of: NodeId) -> bool {
        self.path_to(of, target).is_ok()
    }

    /// The choice node's metadata for the mock edge entering `id`, if any.
    pub fn incoming_meta(&self, id: NodeId) -> Option<&PrimMeta> {
        let p = self.nodes.get(id as usize)?.parent?;
        self.nodes[p as usize].meta.as_ref()
    }

    /// Ids touched since the last call.
    pub fn take_dirty(&mut self) -> Vec<NodeId> {
        std::mem::take(&mut self.dirty).into_iter().collect()
    }

    /// Tree with every step edge expanded into unit steps, as (parent index, label) per node in DFS order.
    pub fn expanded(&self) -> ExpandedTree {
        let mut out = ExpandedTree { children: vec![Vec::new()] };
        self.expand_into(0, 0, &mut out);
        out.canonicalize();
        out
    }

    fn expand_into(&self, id: NodeId, at: usize, out: &mut ExpandedTree) {
        for e in &self.nodes[id as usize].edges {
            let mut cur = at;
            let label = match e.label {
                EdgeLabel::Step(n) => {
                    for _ in 1..n {
                        cur = out.push(cur, UnitLabel::Step);
                    }
                    UnitLabel::Step
                }
                EdgeLabel::Mock(v) => UnitLabel::Mock(v),
            };
            let child = out.push(cur, label);
            self.expand_into(e.to, child, out);
        }
    }

    // ---------------------------------------------------------------------------
    // Export

    pub fn to_json(&self, current: NodeId) -> TreeJson {
        TreeJson { root: 0, current, nodes: self.nodes.iter().map(|n| self.node_json(n.id)).collect() }
    }

    pub fn node_json(&self, id: NodeId) -> NodeJson {
        let n = &self.nodes[id as usize];
        NodeJson {
            id,
            edges: n
                .edges
                .iter()
                .map(|e| EdgeJson {
                    label: e.label,
                    to: e.to,
                    prim: match e.label {
                        EdgeLabel::Mock(_) => n.meta.as_ref().map(|m| m.name.clone()),
                        EdgeLabel::Step(_) => None,
                    },
                    args: match e.label {
                        EdgeLabel::Mock(_) => n.meta.as_ref().map(|m| m.args.clone()),
                        EdgeLabel::Step(_) => None,
                    },
                    prim_index: match e.label {
                        EdgeLabel::Mock(_) => n.meta.as_ref().map(|m| m.prim),
                        EdgeLabel::Step(_) => None,
                    },
                })
                .collect(),
        }
    }

    /// Rebuilds a tree from its JSON form; returns the tree and the current node.
    pub fn from_json(j: &TreeJson) -> Result<(MultiverseTree, NodeId), TreeError> {
        let n = j.nodes.len();
        if n == 0 || j.root != 0 {
            return Err(TreeError::Malformed("root must be node 0".into()));
        }
        let mut nodes: Vec<TreeNode> =
            (0..n as u64).map(|id| TreeNode { id, parent: None, edges: Vec::new(), meta: None }).collect();
        for (i, nj) in j.nodes.iter().enumerate() {
            if nj.id != i as u64 {
                return Err(TreeError::Malformed(format!("node {} listed at position {i}", nj.id)));
            }
            let steps = nj.edges.iter().filter(|e| matches!(e.label, EdgeLabel::Step(_))).count();
            if steps > 1 || (steps == 1 && nj.edges.len() > 1) {
                return Err(TreeError::Malformed(format!("node {i} mixes step and mock edges")));
            }
            let mut values = BTreeSet::new();
            for e in &nj.edges {
                if e.to as usize >= n || e.to == 0 {
                    return Err(TreeError::Malformed(format!("edge to unknown node {}", e.to)));
                }
                match e.label {
                    EdgeLabel::Step(0) => return Err(TreeError::Malformed("empty step edge".into())),
                    EdgeLabel::Mock(v) if !values.insert(v) => {
                        return Err(TreeError::Malformed(format!("duplicate mock {v} at node {i}")))
                    }
                    _ => {}
                }
                if nodes[e.to as usize].parent.is_some() {
                    return Err(TreeError::Malformed(format!("node {} has two parents", e.to)));
                }
                nodes[e.to as usize].parent = Some(i as u64);
                nodes[i].edges.push(Edge { label: e.label, to: e.to });
                if let (EdgeLabel::Mock(_), Some(name)) = (e.label, &e.prim) {
                    nodes[i].meta = Some(PrimMeta {
                        prim: e.prim_index.unwrap_or(0),
                        name: name.clone(),
                        args: e.args.clone().unwrap_or_default(),
                    });
                }
            }
        }
        if let Some(orphan) = nodes.iter().skip(1).find(|n| n.parent.is_none()) {
            return Err(TreeError::Malformed(format!("node {} is unreachable", orphan.id)));
        }
        if j.current as usize >= n {
            return Err(TreeError::UnknownNode(j.current));
        }
        let tree = MultiverseTree { nodes, dirty: BTreeSet::new() };
        // parent links alone could still form a cycle detached from the root
        let mut seen = 0;
        let mut stack = vec![0u64];
        while let Some(id) = stack.pop() {
            seen += 1;
            stack.extend(tree.nodes[id as usize].edges.iter().map(|e| e.to));
            if seen > n {
                break;
            }
        }
        if seen != n {
            return Err(TreeError::Malformed("cycle".into()));
        }
        Ok((tree, j.current))
    }

    pub fn to_dot(&self, current: NodeId) -> String {
        let mut s = String::from("digraph multiverse {\n  rankdir=LR;\n  node [shape=circle, label=\"\"];\n");
        for n in &self.nodes {
            let style = if n.id == current { ", style=filled, fillcolor=\"#f4a261\"" } else { "" };
            let _ = writeln!(s, "  n{} [xlabel=\"{}\"{}];", n.id, n.id, style);
        }
        for n in &self.nodes {
            for e in &n.edges {
                let label = match e.label {
                    EdgeLabel::Step(1) => "step".to_string(),
                    EdgeLabel::Step(k) => format!("step x{k}"),
                    EdgeLabel::Mock(v) => match &n.meta {
                        Some(m) => format!("{}={v}", m.call_text()),
                        None => format!("mock {v}"),
                    },
                };
                let _ = writeln!(s, "  n{} -> n{} [label=\"{}\"];", n.id, e.to, label);
            }
        }
        s.push_str("}\n");
        s
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EdgeJson {
    pub label: EdgeLabel,
    pub to: NodeId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prim: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub args: Option<Vec<i32>>,
    #[serde(default, rename = "primIndex", skip_serializing_if = "Option::is_none")]
    pub prim_index: Option<u32>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeJson {
    pub id: NodeId,
    pub edges: Vec<EdgeJson>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeJson {
    pub root: NodeId,
    pub current: NodeId,
    pub nodes: Vec<NodeJson>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum UnitLabel {
    Step,
    Mock(i32),
}

/// A tree with one edge per instruction, children sorted by label.
/// Used as the reference shape for compressed trees.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ExpandedTree {
    pub children: Vec<Vec<(UnitLabel, usize)>>,
}

impl ExpandedTree {
    pub fn new() -> Self {
        ExpandedTree { children: vec![Vec::new()] }
    }

    pub fn push(&mut self, parent: usize, label: UnitLabel) -> usize {
        let id = self.children.len();
        self.children.push(Vec::new());
        self.children[parent].push((label, id));
        id
    }

    /// Follows or creates `label` from `at`.
    pub fn walk(&mut self, at: usize, label: UnitLabel) -> usize {
        match self.children[at].iter().find(|(l, _)| *l == label) {
            Some(&(_, to)) => to,
            None => self.push(at, label),
        }
    }

    pub fn len(&self) -> usize {
        self.children.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Renumbers nodes in sorted DFS order so equal shapes compare equal.
    pub fn canonicalize(&mut self) {
        let mut out = ExpandedTree::new();
        let mut stack = vec![(0usize, 0usize)];
        while let Some((old, new)) = stack.pop() {
            let mut kids = self.children[old].clone();
            kids.sort();
            let mut pending = Vec::new();
            for (label, child) in kids {
                let id = out.push(new, label);
                pending.push((child, id));
            }
            stack.extend(pending.into_iter().rev());
        }
        *self = out;
    }
}

impl Default for ExpandedTree {
    fn default() -> Self {
        Self::new()
    }
}
