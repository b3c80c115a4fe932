//! Flow graph built from a scenario's T&D network.

use std::collections::BTreeMap;

use crate::flow::{EdgeId, FlowGraph, NodeId};
use crate::model::ScenarioConfig;
use crate::Wh;

/// Scenario network plus the super-source edges feeding producers and the
/// super-sink edges draining substations.
#[derive(Debug, Clone)]
pub struct GridNetwork {
    pub graph: FlowGraph,
    /// Source edge per producer, in scenario order.
    pub supply_edges: Vec<EdgeId>,
    /// Sink edge per microgrid, in scenario order.
    pub demand_edges: Vec<EdgeId>,
    /// Graph edge per scenario line, in scenario order.
    pub line_edges: Vec<EdgeId>,
    pub line_ids: Vec<String>,
    nodes: BTreeMap<String, NodeId>,
}

impl GridNetwork {
    /// Expects a validated scenario. Producers are attached in ascending
    /// marginal cost so cheaper supply is offered first.
    pub fn build(cfg: &ScenarioConfig) -> Self {
        let mut graph = FlowGraph::new();
        let mut nodes = BTreeMap::new();
        for n in &cfg.nodes {
            let id = graph.add_node(n.id.clone());
            nodes.insert(n.id.clone(), id);
        }

        let mut line_edges = Vec::with_capacity(cfg.edges.len());
        for e in &cfg.edges {
            line_edges.push(graph.add_edge_with_cost(nodes[&e.from], nodes[&e.to], e.capacity.max(0), e.cost));
        }

        let mut order: Vec<usize> = (0..cfg.producers.len()).collect();
        order.sort_by(|&a, &b| {
            cfg.producers[a]
                .marginal_cost
                .total_cmp(&cfg.producers[b].marginal_cost)
                .then(a.cmp(&b))
        });
        let mut supply_edges = vec![0; cfg.producers.len()];
        for i in order {
            let p = &cfg.producers[i];
            supply_edges[i] = graph.add_edge(FlowGraph::SOURCE, nodes[&p.node], p.capacity.max(0));
        }

        let demand_edges = cfg
            .microgrids
            .iter()
            .map(|m| graph.add_edge(nodes[&m.substation], FlowGraph::SINK, 0))
            .collect();

        GridNetwork {
            graph,
            supply_edges,
            demand_edges,
            line_edges,
            line_ids: cfg.edges.iter().map(|e| e.id.clone()).collect(),
            nodes,
        }
    }

    pub fn node(&self, id: &str) -> Option<NodeId> {
        self.nodes.get(id).copied()
    }

    /// Capacity changes that set producer offers and microgrid demands.
    pub fn changes(&self, supply: &[Wh], demand: &[Wh]) -> Vec<(EdgeId, Wh)> {
        self.supply_edges
            .iter()
            .zip(supply)
            .chain(self.demand_edges.iter().zip(demand))
            .map(|(&e, &c)| (e, c.max(0)))
            .filter(|&(e, c)| self.graph.capacity(e) != c)
            .collect()
    }

    /// Flow reaching each microgrid's substation sink.
    pub fn delivered(&self) -> Vec<Wh> {
        self.demand_edges.iter().map(|&e| self.graph.flow(e)).collect()
    }

    pub fn produced(&self) -> Vec<Wh> {
        self.supply_edges.iter().map(|&e| self.graph.flow(e)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::reference_scenario;
    use crate::flow::max_flow;

    #[test]
    fn reference_network_routes_booked_demand() {
        let cfg = reference_scenario();
        let mut net = GridNetwork::build(&cfg);
        assert_eq!(net.supply_edges.len(), 2);
        assert_eq!(net.demand_edges.len(), 1);
        let changes = net.changes(&[30, 30], &[45]);
        assert_eq!(changes, vec![(net.demand_edges[0], 45)]);
        for (e, c) in changes {
            net.graph.set_capacity(e, c);
        }
        assert_eq!(max_flow(&mut net.graph).value, 45);
        // cheapest producer is offered first
        assert_eq!(net.produced(), vec![30, 15]);
    }
}
