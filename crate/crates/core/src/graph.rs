//! Weighted contact network built from a subject's CDR.
//!
//! Contact is symmetric for infection purposes, so edges are keyed by the
//! unordered subscriber pair. Each edge still keeps directional tallies
//! relative to its `source` endpoint.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt::{self, Write as _};
use core::str::FromStr;

use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};

use crate::cdr::{CdrRecord, Subscriber};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum GraphError {
    #[error("row {row}: A party {a_party} is not the focal subscriber {focal}")]
    ForeignRecord {
        row: usize,
        a_party: String,
        focal: String,
    },
    #[error("unknown export format {0:?} (expected dot or json)")]
    UnknownFormat(String),
    #[error("graph document: {0}")]
    Document(String),
}

/// Investigation status of a node. Variant order is merge precedence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeStatus {
    Unknown,
    Cleared,
    Suspect,
    Patient,
}

impl NodeStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            NodeStatus::Unknown => "unknown",
            NodeStatus::Cleared => "cleared",
            NodeStatus::Suspect => "suspect",
            NodeStatus::Patient => "patient",
        }
    }

    fn fill(self) -> &'static str {
        match self {
            NodeStatus::Unknown => "#c7c7c7",
            NodeStatus::Cleared => "#2ca02c",
            NodeStatus::Suspect => "#ff7f0e",
            NodeStatus::Patient => "#d62728",
        }
    }
}

impl fmt::Display for NodeStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeInfo {
    pub subscriber: Subscriber,
    pub status: NodeStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EdgeStats {
    /// Endpoint the tallies are counted from.
    pub source: Subscriber,
    pub target: Subscriber,
    /// Calls and SMS from `source` to `target`.
    pub out_count: u32,
    /// Calls and SMS from `target` to `source`.
    pub in_count: u32,
    /// How many of the tallied events were SMS (not evidence of a meeting).
    #[serde(default)]
    pub sms_count: u32,
    pub first_contact: Option<NaiveDateTime>,
    pub last_contact: Option<NaiveDateTime>,
    /// Set when the contact came from an exposure-notification match.
    #[serde(default)]
    pub proximity: bool,
    /// Set when the endpoints are two SIMs of the same person.
    #[serde(default)]
    pub identity: bool,
}

impl EdgeStats {
    fn empty(source: Subscriber, target: Subscriber) -> Self {
        EdgeStats {
            source,
            target,
            out_count: 0,
            in_count: 0,
            sms_count: 0,
            first_contact: None,
            last_contact: None,
            proximity: false,
            identity: false,
        }
    }

    pub fn total(&self) -> u32 {
        self.out_count + self.in_count
    }

    /// Tallies as (from `focal`, to `focal`).
    pub fn tally_from(&self, focal: &Subscriber) -> Option<(u32, u32)> {
        if *focal == self.source {
            Some((self.out_count, self.in_count))
        } else if *focal == self.target {
            Some((self.in_count, self.out_count))
        } else {
            None
        }
    }

    pub fn other(&self, end: &Subscriber) -> Option<&Subscriber> {
        if *end == self.source {
            Some(&self.target)
        } else if *end == self.target {
            Some(&self.source)
        } else {
            None
        }
    }

    fn touch(&mut self, at: NaiveDateTime) {
        self.first_contact = Some(self.first_contact.map_or(at, |t| t.min(at)));
        self.last_contact = Some(self.last_contact.map_or(at, |t| t.max(at)));
    }

    fn kinds(&self) -> Vec<&'static str> {
        let mut kinds = Vec::new();
        if self.total() > 0 {
            kinds.push("call");
        }
        if self.proximity {
            kinds.push("proximity");
        }
        if self.identity {
            kinds.push("identity");
        }
        kinds
    }

    /// Folds `other` (same endpoint pair) into `self`.
    ///
    /// Orientation is kept when both sides agree; on disagreement it falls
    /// back to lower-subscriber-first, which keeps merging commutative and
    /// associative.
    fn absorb(&mut self, other: &EdgeStats) {
        let (other_out, other_in) = other
            .tally_from(&self.source)
            .expect("absorb called on edges with different endpoints");
        self.out_count += other_out;
        self.in_count += other_in;
        self.sms_count += other.sms_count;
        if let Some(t) = other.first_contact {
            self.touch(t);
        }
        if let Some(t) = other.last_contact {
            self.touch(t);
        }
        self.proximity |= other.proximity;
        self.identity |= other.identity;
        if other.source != self.source && self.source > self.target {
            core::mem::swap(&mut self.source, &mut self.target);
            core::mem::swap(&mut self.out_count, &mut self.in_count);
        }
    }
}

fn pair_key(a: &Subscriber, b: &Subscriber) -> (Subscriber, Subscriber) {
    if a <= b {
        (a.clone(), b.clone())
    } else {
        (b.clone(), a.clone())
    }
}

/// Contact network: subscribers, their statuses, and per-pair tallies.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(into = "GraphDoc", try_from = "GraphDoc")]
pub struct ContactGraph {
    nodes: BTreeMap<Subscriber, NodeInfo>,
    edges: BTreeMap<(Subscriber, Subscriber), EdgeStats>,
}

#[derive(Serialize, Deserialize)]
struct GraphDoc {
    nodes: Vec<NodeInfo>,
    edges: Vec<EdgeStats>,
}

impl From<ContactGraph> for GraphDoc {
    fn from(g: ContactGraph) -> Self {
        GraphDoc {
            nodes: g.nodes.into_values().collect(),
            edges: g.edges.into_values().collect(),
        }
    }
}

impl TryFrom<GraphDoc> for ContactGraph {
    type Error = GraphError;
    fn try_from(doc: GraphDoc) -> Result<Self, Self::Error> {
        let mut g = ContactGraph::new();
        for node in doc.nodes {
            g.nodes.insert(node.subscriber.clone(), node);
        }
        for edge in doc.edges {
            for end in [&edge.source, &edge.target] {
                if !g.nodes.contains_key(end) {
                    return Err(GraphError::Document(format!("edge endpoint {end} has no node")));
                }
            }
            if edge.source == edge.target {
                return Err(GraphError::Document(format!("self edge on {}", edge.source)));
            }
            g.edges.insert(pair_key(&edge.source, &edge.target), edge);
        }
        Ok(g)
    }
}

impl ContactGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_node(subscriber: Subscriber, status: NodeStatus) -> Self {
        let mut g = Self::new();
        g.ensure_node(&subscriber, status);
        g
    }

    pub fn node(&self, subscriber: &Subscriber) -> Option<&NodeInfo> {
        self.nodes.get(subscriber)
    }

    pub fn status(&self, subscriber: &Subscriber) -> Option<NodeStatus> {
        self.nodes.get(subscriber).map(|n| n.status)
    }

    pub fn contains(&self, subscriber: &Subscriber) -> bool {
        self.nodes.contains_key(subscriber)
    }

    /// Nodes in subscriber order.
    pub fn nodes(&self) -> impl Iterator<Item = &NodeInfo> {
        self.nodes.values()
    }

    /// Edges in endpoint-pair order.
    pub fn edges(&self) -> impl Iterator<Item = &EdgeStats> {
        self.edges.values()
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn edge(&self, a: &Subscriber, b: &Subscriber) -> Option<&EdgeStats> {
        self.edges.get(&pair_key(a, b))
    }

    /// (out, in) tallies seen from `focal` toward `other`.
    pub fn tally(&self, focal: &Subscriber, other: &Subscriber) -> Option<(u32, u32)> {
        self.edge(focal, other)?.tally_from(focal)
    }

    pub fn neighbors<'a>(&'a self, of: &'a Subscriber) -> impl Iterator<Item = &'a Subscriber> + 'a {
        self.edges.values().filter_map(move |e| e.other(of))
    }

    pub fn is_neighbor(&self, a: &Subscriber, b: &Subscriber) -> bool {
        a != b && self.edges.contains_key(&pair_key(a, b))
    }

    /// Sum of call and SMS tallies over all edges.
    pub fn call_events(&self) -> u64 {
        self.edges.values().map(|e| u64::from(e.total())).sum()
    }

    pub fn with_status(&self, status: NodeStatus) -> impl Iterator<Item = &Subscriber> {
        self.nodes
            .values()
            .filter(move |n| n.status == status)
            .map(|n| &n.subscriber)
    }

    /// Equality ignoring display labels.
    pub fn structurally_eq(&self, other: &ContactGraph) -> bool {
        self.edges == other.edges
            && self.nodes.len() == other.nodes.len()
            && self
                .nodes
                .iter()
                .zip(other.nodes.iter())
                .all(|((ka, a), (kb, b))| ka == kb && a.status == b.status)
    }

    /// Display alias for `subscriber`, falling back to the number itself.
    pub fn display_name<'a>(&'a self, subscriber: &'a Subscriber) -> &'a str {
        self.nodes
            .get(subscriber)
            .and_then(|n| n.label.as_deref())
            .unwrap_or(subscriber.as_str())
    }

    /// Looks a node up by alias or by number.
    pub fn resolve(&self, name: &str) -> Option<&Subscriber> {
        let name = name.trim();
        self.nodes
            .values()
            .find(|n| n.label.as_deref() == Some(name) || n.subscriber.as_str() == name)
            .map(|n| &n.subscriber)
    }

    pub(crate) fn ensure_node(&mut self, subscriber: &Subscriber, status: NodeStatus) -> &mut NodeInfo {
        let next = self.next_alias();
        let node = self
            .nodes
            .entry(subscriber.clone())
            .or_insert_with(|| NodeInfo {
                subscriber: subscriber.clone(),
                status,
                label: Some(next),
            });
        if status > node.status {
            node.status = status;
        }
        node
    }

    /// Sets a status unconditionally. Callers enforce the transition rules.
    pub(crate) fn set_status(&mut self, subscriber: &Subscriber, status: NodeStatus) {
        if let Some(node) = self.nodes.get_mut(subscriber) {
            node.status = status;
        }
    }

    fn edge_mut(&mut self, source: &Subscriber, target: &Subscriber) -> &mut EdgeStats {
        self.edges
            .entry(pair_key(source, target))
            .or_insert_with(|| EdgeStats::empty(source.clone(), target.clone()))
    }

    /// Records a proximity contact between two existing nodes.
    pub(crate) fn add_proximity(
        &mut self,
        source: &Subscriber,
        target: &Subscriber,
        start: NaiveDateTime,
        end: NaiveDateTime,
    ) {
        let edge = self.edge_mut(source, target);
        edge.proximity = true;
        edge.touch(start);
        edge.touch(end);
    }

    /// Links two numbers known to belong to one person.
    pub(crate) fn add_identity_link(&mut self, a: &Subscriber, b: &Subscriber) {
        self.edge_mut(a, b).identity = true;
    }

    fn next_alias(&self) -> String {
        let next = self
            .nodes
            .values()
            .filter_map(|n| n.label.as_deref().and_then(alias_index))
            .max()
            .map_or(0, |i| i + 1);
        alias(next)
    }
}

/// Bijective base-26 alias: 0 → A, 25 → Z, 26 → AA.
pub fn alias(mut index: usize) -> String {
    let mut out = Vec::new();
    loop {
        out.push(b'A' + (index % 26) as u8);
        if index < 26 {
            break;
        }
        index = index / 26 - 1;
    }
    out.reverse();
    String::from_utf8(out).expect("ASCII letters")
}

fn alias_index(label: &str) -> Option<usize> {
    if label.is_empty() || !label.bytes().all(|b| b.is_ascii_uppercase()) {
        return None;
    }
    let mut acc = 0usize;
    for b in label.bytes() {
        acc = acc.checked_mul(26)?.checked_add(usize::from(b - b'A') + 1)?;
    }
    Some(acc - 1)
}

/// Builds the contact network of one subject from that subject's CDR.
///
/// The focal node is marked `Patient`; every counterpart starts `Unknown`.
/// Aliases are handed out in record order, focal first.
pub fn build_graph(focal: &Subscriber, records: &[CdrRecord]) -> Result<ContactGraph, GraphError> {
    let mut graph = ContactGraph::with_node(focal.clone(), NodeStatus::Patient);
    for (i, record) in records.iter().enumerate() {
        if record.a_party != *focal {
            return Err(GraphError::ForeignRecord {
                row: i + 1,
                a_party: record.a_party.to_string(),
                focal: focal.to_string(),
            });
        }
        graph.ensure_node(&record.b_party, NodeStatus::Unknown);
        let edge = graph.edge_mut(focal, &record.b_party);
        let (out, inc) = if *focal == edge.source {
            (&mut edge.out_count, &mut edge.in_count)
        } else {
            (&mut edge.in_count, &mut edge.out_count)
        };
        if record.call_type.is_outgoing() {
            *out += 1;
        } else {
            *inc += 1;
        }
        if record.call_type.is_sms() {
            edge.sms_count += 1;
        }
        edge.touch(record.timestamp);
    }
    Ok(graph)
}

/// Union of two networks.
///
/// Statuses combine by precedence (Patient > Suspect > Cleared > Unknown),
/// tallies add, contact ranges widen. Nodes new to `left` get fresh aliases
/// continuing its sequence.
pub fn merge_graphs(left: &ContactGraph, right: &ContactGraph) -> ContactGraph {
    let mut out = left.clone();

    let mut incoming: Vec<&NodeInfo> = right.nodes.values().collect();
    incoming.sort_by_key(|n| (n.label.as_deref().and_then(alias_index), n.subscriber.clone()));
    for node in incoming {
        match out.nodes.get_mut(&node.subscriber) {
            Some(existing) => existing.status = existing.status.max(node.status),
            None => {
                let label = out.next_alias();
                out.nodes.insert(
                    node.subscriber.clone(),
                    NodeInfo {
                        subscriber: node.subscriber.clone(),
                        status: node.status,
                        label: Some(label),
                    },
                );
            }
        }
    }

    for (key, edge) in &right.edges {
        match out.edges.get_mut(key) {
            Some(existing) => existing.absorb(edge),
            None => {
                out.edges.insert(key.clone(), edge.clone());
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExportFormat {
    Dot,
    #[serde(rename = "json")]
    GraphJson,
}

impl FromStr for ExportFormat {
    type Err = GraphError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "dot" | "graphviz" => Ok(ExportFormat::Dot),
            "json" | "graphjson" => Ok(ExportFormat::GraphJson),
            other => Err(GraphError::UnknownFormat(other.into())),
        }
    }
}

/// Renders the network deterministically (nodes and edges in subscriber order).
pub fn export_graph(graph: &ContactGraph, format: ExportFormat) -> String {
    match format {
        ExportFormat::Dot => to_dot(graph),
        ExportFormat::GraphJson => to_graph_json(graph),
    }
}

fn dot_escape(text: &str) -> String {
    text.replace('\\', "\\\\").replace('"', "\\\"")
}

fn to_dot(graph: &ContactGraph) -> String {
    let mut out = String::new();
    out.push_str("graph contacts {\n");
    out.push_str("  node [shape=circle, style=filled, fontname=\"Helvetica\"];\n");
    for node in graph.nodes() {
        let label = match &node.label {
            Some(alias) => format!("{}\\n{}", dot_escape(alias), node.subscriber),
            None => node.subscriber.to_string(),
        };
        let _ = writeln!(
            out,
            "  \"{}\" [label=\"{}\", class=\"{}\", fillcolor=\"{}\"];",
            node.subscriber,
            label,
            node.status,
            node.status.fill()
        );
    }
    for edge in graph.edges() {
        let style = if edge.identity {
            ", style=dotted"
        } else if edge.proximity && edge.total() == 0 {
            ", style=dashed"
        } else {
            ""
        };
        let _ = writeln!(
            out,
            "  \"{}\" -- \"{}\" [label=\"{}/{}\"{}];",
            edge.source, edge.target, edge.out_count, edge.in_count, style
        );
    }
    out.push_str("}\n");
    out
}

#[derive(Serialize, Deserialize)]
pub struct GraphJsonNode {
    pub id: String,
    pub status: NodeStatus,
    pub label: Option<String>,
}

#[derive(Serialize, Deserialize)]
pub struct GraphJsonEdge {
    pub a: String,
    pub b: String,
    #[serde(rename = "out")]
    pub out_count: u32,
    #[serde(rename = "in")]
    pub in_count: u32,
    pub sms: u32,
    pub kinds: Vec<String>,
    pub first: Option<NaiveDateTime>,
    pub last: Option<NaiveDateTime>,
}

/// The console's graph document.
#[derive(Serialize, Deserialize)]
pub struct GraphJson {
    pub nodes: Vec<GraphJsonNode>,
    pub edges: Vec<GraphJsonEdge>,
}

impl From<&ContactGraph> for GraphJson {
    fn from(graph: &ContactGraph) -> Self {
        GraphJson {
            nodes: graph
                .nodes()
                .map(|n| GraphJsonNode {
                    id: n.subscriber.to_string(),
                    status: n.status,
                    label: n.label.clone(),
                })
                .collect(),
            edges: graph
                .edges()
                .map(|e| GraphJsonEdge {
                    a: e.source.to_string(),
                    b: e.target.to_string(),
                    out_count: e.out_count,
                    in_count: e.in_count,
                    sms: e.sms_count,
                    kinds: e.kinds().into_iter().map(String::from).collect(),
                    first: e.first_contact,
                    last: e.last_contact,
                })
                .collect(),
        }
    }
}

fn to_graph_json(graph: &ContactGraph) -> String {
    let mut text = serde_json::to_string_pretty(&GraphJson::from(graph)).expect("graph json");
    text.push('\n');
    text
}
