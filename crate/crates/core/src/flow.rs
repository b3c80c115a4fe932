//! Capacitated routing network with a persisted flow.
//!
//! Flows are found with breadth-first augmenting paths. A flow kept from a
//! previous tick can be repaired after capacity changes: excess on edges
//! whose capacity dropped is cancelled back toward the source and forward
//! toward the sink, then the flow is augmented again to maximality.

use std::collections::VecDeque;

use crate::Wh;

pub type NodeId = usize;
pub type EdgeId = usize;

/// Capacity standing in for "unbounded".
pub const INFINITE: Wh = i64::MAX / 4;

#[derive(Debug, Clone)]
struct Arc {
    to: NodeId,
    cap: Wh,
    flow: Wh,
}

/// Directed graph with a synthetic super-source and super-sink.
///
/// Edge `e` is stored as arc `2e` with its residual twin at `2e + 1`.
#[derive(Debug, Clone)]
pub struct FlowGraph {
    labels: Vec<String>,
    adj: Vec<Vec<usize>>,
    arcs: Vec<Arc>,
    costs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EdgeView {
    pub id: EdgeId,
    pub from: NodeId,
    pub to: NodeId,
    pub capacity: Wh,
    pub flow: Wh,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct FlowOutcome {
    pub value: Wh,
    /// Augmenting paths used.
    pub augmentations: usize,
    /// Cancellation paths used while removing excess.
    pub cancellations: usize,
}

impl Default for FlowGraph {
    fn default() -> Self {
        Self::new()
    }
}

impl FlowGraph {
    pub const SOURCE: NodeId = 0;
    pub const SINK: NodeId = 1;

    pub fn new() -> Self {
        FlowGraph {
            labels: vec!["S".into(), "T".into()],
            adj: vec![Vec::new(), Vec::new()],
            arcs: Vec::new(),
            costs: Vec::new(),
        }
    }

    pub fn add_node(&mut self, label: impl Into<String>) -> NodeId {
        self.labels.push(label.into());
        self.adj.push(Vec::new());
        self.labels.len() - 1
    }

    pub fn add_edge(&mut self, from: NodeId, to: NodeId, capacity: Wh) -> EdgeId {
        self.add_edge_with_cost(from, to, capacity, 0.0)
    }

    pub fn add_edge_with_cost(&mut self, from: NodeId, to: NodeId, capacity: Wh, cost: f64) -> EdgeId {
        assert!(from < self.labels.len() && to < self.labels.len(), "unknown node");
        assert!(to != Self::SOURCE && from != Self::SINK, "edges may not enter S or leave T");
        assert!(capacity >= 0, "negative capacity");
        let id = self.costs.len();
        self.arcs.push(Arc { to, cap: capacity, flow: 0 });
        self.arcs.push(Arc { to: from, cap: 0, flow: 0 });
        self.adj[from].push(2 * id);
        self.adj[to].push(2 * id + 1);
        self.costs.push(cost);
        id
    }

    pub fn node_count(&self) -> usize {
        self.labels.len()
    }

    pub fn edge_count(&self) -> usize {
        self.costs.len()
    }

    pub fn label(&self, node: NodeId) -> &str {
        &self.labels[node]
    }

    pub fn edge(&self, e: EdgeId) -> EdgeView {
        EdgeView {
            id: e,
            from: self.arcs[2 * e + 1].to,
            to: self.arcs[2 * e].to,
            capacity: self.arcs[2 * e].cap,
            flow: self.arcs[2 * e].flow,
        }
    }

    pub fn edges(&self) -> impl Iterator<Item = EdgeView> + '_ {
        (0..self.edge_count()).map(|e| self.edge(e))
    }

    pub fn capacity(&self, e: EdgeId) -> Wh {
        self.arcs[2 * e].cap
    }

    pub fn flow(&self, e: EdgeId) -> Wh {
        self.arcs[2 * e].flow
    }

    pub fn cost(&self, e: EdgeId) -> f64 {
        self.costs[e]
    }

    /// Changes a capacity without touching the flow; the flow may become
    /// infeasible until [`update_incremental`] repairs it.
    pub fn set_capacity(&mut self, e: EdgeId, capacity: Wh) {
        assert!(capacity >= 0, "negative capacity");
        self.arcs[2 * e].cap = capacity;
    }

    pub fn source_edges(&self) -> Vec<EdgeId> {
        self.adj[Self::SOURCE].iter().filter(|&&a| a % 2 == 0).map(|a| a / 2).collect()
    }

    pub fn sink_edges(&self) -> Vec<EdgeId> {
        self.adj[Self::SINK].iter().filter(|&&a| a % 2 == 1).map(|a| a / 2).collect()
    }

    /// Net flow leaving the source.
    pub fn value(&self) -> Wh {
        self.source_edges().into_iter().map(|e| self.flow(e)).sum()
    }

    pub fn reset_flow(&mut self) {
        for a in &mut self.arcs {
            a.flow = 0;
        }
    }

    fn set_edge_flow(&mut self, e: EdgeId, flow: Wh) {
        self.arcs[2 * e].flow = flow;
        self.arcs[2 * e + 1].flow = -flow;
    }

    fn residual(&self, arc: usize) -> Wh {
        self.arcs[arc].cap - self.arcs[arc].flow
    }

    /// Inflow minus outflow at a node.
    pub fn imbalance(&self, node: NodeId) -> Wh {
        self.adj[node]
            .iter()
            .map(|&a| {
                let f = self.arcs[a & !1].flow;
                if a % 2 == 1 {
                    f
                } else {
                    -f
                }
            })
            .sum()
    }

    /// True when every edge respects `0 <= flow <= capacity` and every node
    /// other than S and T has inflow equal to outflow.
    pub fn is_feasible_flow(&self) -> bool {
        self.edges().all(|e| 0 <= e.flow && e.flow <= e.capacity)
            && (2..self.node_count()).all(|n| self.imbalance(n) == 0)
    }

    /// Nodes reachable from S in the residual graph.
    pub fn residual_reachable(&self) -> Vec<bool> {
        let mut seen = vec![false; self.node_count()];
        seen[Self::SOURCE] = true;
        let mut queue = VecDeque::from([Self::SOURCE]);
        while let Some(x) = queue.pop_front() {
            for &a in &self.adj[x] {
                let y = self.arcs[a].to;
                if !seen[y] && self.residual(a) > 0 {
                    seen[y] = true;
                    queue.push_back(y);
                }
            }
        }
        seen
    }

    /// Positive-capacity edges crossing from the residual-reachable side.
    /// After a maximum flow these form a minimum cut, all saturated.
    pub fn min_cut(&self) -> Vec<EdgeId> {
        let side = self.residual_reachable();
        self.edges()
            .filter(|e| side[e.from] && !side[e.to] && e.capacity > 0)
            .map(|e| e.id)
            .collect()
    }

    /// One shortest augmenting path; returns the arcs used.
    fn augmenting_path(&self) -> Option<Vec<usize>> {
        let mut parent: Vec<Option<usize>> = vec![None; self.node_count()];
        let mut seen = vec![false; self.node_count()];
        seen[Self::SOURCE] = true;
        let mut queue = VecDeque::from([Self::SOURCE]);
        while let Some(x) = queue.pop_front() {
            for &a in &self.adj[x] {
                let y = self.arcs[a].to;
                if !seen[y] && self.residual(a) > 0 {
                    seen[y] = true;
                    parent[y] = Some(a);
                    if y == Self::SINK {
                        return Some(self.trace(&parent, Self::SINK));
                    }
                    queue.push_back(y);
                }
            }
        }
        None
    }

    fn trace(&self, parent: &[Option<usize>], end: NodeId) -> Vec<usize> {
        let mut path = Vec::new();
        let mut node = end;
        while let Some(a) = parent[node] {
            path.push(a);
            node = self.arcs[a ^ 1].to;
        }
        path.reverse();
        path
    }

    fn push(&mut self, arc: usize, amount: Wh) {
        self.arcs[arc].flow += amount;
        self.arcs[arc ^ 1].flow -= amount;
    }

    /// Augments along shortest paths until none remains.
    /// Returns `(units added, paths used)`.
    fn augment_to_max(&mut self) -> (Wh, usize) {
        let mut added = 0;
        let mut paths = 0;
        while let Some(path) = self.augmenting_path() {
            let amount = path.iter().map(|&a| self.residual(a)).min().unwrap_or(0);
            if amount <= 0 {
                break;
            }
            for &a in &path {
                self.push(a, amount);
            }
            added += amount;
            paths += 1;
        }
        (added, paths)
    }

    /// Breadth-first search along flow-carrying edges, either backward
    /// (against edge direction) or forward. Returns the edges of the path
    /// from `start` to the first node accepted by `is_target`, ordered from
    /// `start` outward.
    fn flow_path(&self, start: NodeId, backward: bool, is_target: impl Fn(NodeId) -> bool) -> Option<(NodeId, Vec<EdgeId>)> {
        let mut parent: Vec<Option<(NodeId, EdgeId)>> = vec![None; self.node_count()];
        let mut seen = vec![false; self.node_count()];
        seen[start] = true;
        let mut queue = VecDeque::from([start]);
        while let Some(x) = queue.pop_front() {
            for &a in &self.adj[x] {
                let reverse_arc = a % 2 == 1;
                if reverse_arc != backward {
                    continue;
                }
                let e = a / 2;
                if self.arcs[2 * e].flow <= 0 {
                    continue;
                }
                let y = self.arcs[a].to;
                if seen[y] {
                    continue;
                }
                seen[y] = true;
                parent[y] = Some((x, e));
                if is_target(y) {
                    let mut edges = Vec::new();
                    let mut node = y;
                    while let Some((prev, e)) = parent[node] {
                        edges.push(e);
                        node = prev;
                    }
                    edges.reverse();
                    return Some((y, edges));
                }
                queue.push_back(y);
            }
        }
        None
    }

    fn reduce_along(&mut self, edges: &[EdgeId], amount: Wh) {
        for &e in edges {
            let f = self.flow(e) - amount;
            self.set_edge_flow(e, f);
        }
    }

    /// Removes `excess` units from edge `e` and restores conservation.
    /// Returns the number of cancellation paths used.
    fn cancel_excess(&mut self, e: EdgeId, excess: Wh) -> usize {
        let EdgeView { from: u, to: v, flow, .. } = self.edge(e);
        self.set_edge_flow(e, flow - excess);
        let mut paths = 0;

        // u now receives more than it sends, v sends more than it receives.
        let mut surplus = if u == Self::SOURCE { 0 } else { excess };
        let mut deficit = if v == Self::SINK { 0 } else { excess };

        while surplus > 0 {
            let open_deficit = deficit > 0;
            let (hit, edges) = self
                .flow_path(u, true, |n| n == Self::SOURCE || (open_deficit && n == v))
                .expect("surplus always traces back to the source or the deficit node");
            let mut amount = edges.iter().map(|&x| self.flow(x)).min().unwrap_or(0).min(surplus);
            if hit == v {
                amount = amount.min(deficit);
                deficit -= amount;
            }
            self.reduce_along(&edges, amount);
            surplus -= amount;
            paths += 1;
        }
        while deficit > 0 {
            let (_, edges) = self
                .flow_path(v, false, |n| n == Self::SINK)
                .expect("deficit always traces forward to the sink");
            let amount = edges.iter().map(|&x| self.flow(x)).min().unwrap_or(0).min(deficit);
            self.reduce_along(&edges, amount);
            deficit -= amount;
            paths += 1;
        }
        paths
    }
}

/// Maximum flow from scratch.
pub fn max_flow(graph: &mut FlowGraph) -> FlowOutcome {
    graph.reset_flow();
    let (_, augmentations) = graph.augment_to_max();
    FlowOutcome {
        value: graph.value(),
        augmentations,
        cancellations: 0,
    }
}

/// Applies capacity changes to a graph holding a previous feasible flow and
/// repairs the flow to a maximum one.
pub fn update_incremental(graph: &mut FlowGraph, changes: &[(EdgeId, Wh)]) -> FlowOutcome {
    for &(e, cap) in changes {
        graph.set_capacity(e, cap);
    }
    let mut cancellations = 0;
    for e in 0..graph.edge_count() {
        let excess = graph.flow(e) - graph.capacity(e);
        if excess > 0 {
            cancellations += graph.cancel_excess(e, excess);
        }
    }
    let (_, augmentations) = graph.augment_to_max();
    FlowOutcome {
        value: graph.value(),
        augmentations,
        cancellations,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BottleneckMode {
    InfiniteProduction,
    InfiniteConsumption,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BottleneckReport {
    pub mode: BottleneckMode,
    pub saturated_cut: Vec<EdgeId>,
    pub deliverable: Wh,
}

fn relaxed(graph: &FlowGraph, mode: BottleneckMode) -> BottleneckReport {
    let mut g = graph.clone();
    let edges = match mode {
        BottleneckMode::InfiniteProduction => g.source_edges(),
        BottleneckMode::InfiniteConsumption => g.sink_edges(),
    };
    for e in edges {
        g.set_capacity(e, INFINITE);
    }
    let out = max_flow(&mut g);
    BottleneckReport {
        mode,
        saturated_cut: g.min_cut(),
        deliverable: out.value,
    }
}

/// Max flow with unbounded production, then with unbounded consumption.
/// The first locates network or demand-side limits, the second network or
/// supply-side limits.
pub fn bottleneck_analysis(graph: &FlowGraph) -> (BottleneckReport, BottleneckReport) {
    (
        relaxed(graph, BottleneckMode::InfiniteProduction),
        relaxed(graph, BottleneckMode::InfiniteConsumption),
    )
}

/// Whether every demand edge into T can be saturated simultaneously.
pub fn check_feasibility(graph: &FlowGraph) -> bool {
    let mut g = graph.clone();
    max_flow(&mut g);
    g.sink_edges().into_iter().all(|e| g.flow(e) == g.capacity(e))
}
