//! The five-house reference microgrid and scenario variants built around it.

use crate::model::{
    Device, House, Microgrid, NetworkEdge, Node, NodeKind, Producer, ProducerKind, ScenarioConfig,
};
use crate::Wh;

/// Devices per house as `(weight, priority)` and the declared forecast.
pub const REFERENCE_HOUSES: [(&str, &[(Wh, u32)], Wh); 5] = [
    ("H1", &[(1, 0), (1, 1), (3, 0), (5, 2), (20, 4)], 4),
    ("H2", &[(1, 0), (1, 0), (2, 1), (3, 0), (4, 3), (5, 3)], 6),
    ("H3", &[(1, 0), (1, 0), (10, 0)], 12),
    ("H4", &[(1, 0), (1, 1), (3, 0), (3, 2), (4, 1), (8, 4)], 8),
    ("H5", &[(1, 0), (3, 0)], 6),
];

/// Tabulated utilities for the houses that are not done.
pub const REFERENCE_UTILITIES: [(&str, &[i64]); 3] = [
    ("H1", &[81, 80, 83, 75, 20]),
    ("H2", &[16, 16, 15, 18, 7, 5]),
    ("H4", &[33, 32, 35, 29, 32, 8]),
];

/// Tabulated `(cutoff, r, l)` rows for the houses that are not done.
pub const REFERENCE_SCORES: [(&str, &[(u32, i64, f64)]); 3] = [
    ("H1", &[(0, 330, 194.0), (1, 410, 240.0), (2, 620, 257.0), (4, 720, -322.0)]),
    ("H2", &[(0, 77, 27.0), (1, 107, 37.0), (3, 125, -36.0)]),
    ("H4", &[(0, 138, 47.0), (1, 298, 56.5), (2, 341, 32.5), (4, 357, -131.0)]),
];

/// Fixed α used for the tabulated `l` values.
pub const REFERENCE_ALPHA: i64 = 34;

pub const REFERENCE_MIN_REQUIRED: [Wh; 5] = [5, 7, 12, 9, 4];

/// Final consumption per house once strategies are selected.
pub const REFERENCE_FINAL: [Wh; 5] = [10, 7, 12, 12, 4];

pub fn reference_houses() -> Vec<House> {
    REFERENCE_HOUSES
        .iter()
        .map(|(id, devices, forecast)| House {
            id: (*id).to_string(),
            microgrid: "M1".into(),
            forecast: Some(*forecast),
            devices: devices
                .iter()
                .enumerate()
                .map(|(i, &(w, p))| Device::load(format!("d{}", i + 1), w, p))
                .collect(),
        })
        .collect()
}

/// The reference microgrid behind one substation, fed by a base and a peak
/// producer through a junction. Total supply `base + peak`; the feeder line
/// into the substation carries `line` Wh per tick.
pub fn reference_scenario_with(base: Wh, peak: Wh, line: Wh) -> ScenarioConfig {
    let houses = reference_houses();
    let node = |id: &str, kind| Node { id: id.into(), kind };
    let edge = |id: &str, from: &str, to: &str, capacity| NetworkEdge {
        id: id.into(),
        from: from.into(),
        to: to.into(),
        capacity,
        cost: 0.0,
    };
    ScenarioConfig {
        horizon: 288,
        nodes: vec![
            node("G1", NodeKind::Producer),
            node("G2", NodeKind::Producer),
            node("J1", NodeKind::Junction),
            node("SUB1", NodeKind::Substation),
        ],
        edges: vec![
            edge("e1", "G1", "J1", base),
            edge("e2", "G2", "J1", peak),
            edge("e3", "J1", "SUB1", line),
        ],
        producers: vec![
            Producer {
                id: "base".into(),
                node: "G1".into(),
                capacity: base,
                marginal_cost: 1.0,
                kind: ProducerKind::Base,
                profile: Vec::new(),
            },
            Producer {
                id: "peak".into(),
                node: "G2".into(),
                capacity: peak,
                marginal_cost: 3.0,
                kind: ProducerKind::Peak,
                profile: Vec::new(),
            },
        ],
        microgrids: vec![Microgrid {
            id: "M1".into(),
            substation: "SUB1".into(),
            houses: houses.iter().map(|h| h.id.clone()).collect(),
        }],
        houses,
        ..ScenarioConfig::empty()
    }
}

/// Ample supply and network: 60 Wh of production, 60 Wh feeder.
pub fn reference_scenario() -> ScenarioConfig {
    reference_scenario_with(30, 30, 60)
}

/// Production capped at 40 Wh, below the 45 Wh the houses book.
pub fn reference_scenario_capped() -> ScenarioConfig {
    reference_scenario_with(25, 15, 60)
}
