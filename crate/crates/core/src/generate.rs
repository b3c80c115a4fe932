//! Seeded random scenarios: a meshed junction core fed by producers, with
//! substations hanging off it in short chains.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::model::{
    min_required, Device, DeviceKind, House, Microgrid, NetworkEdge, Node, NodeKind, Producer,
    ProducerKind, ScenarioConfig,
};
use crate::Wh;

#[derive(Debug, Clone, PartialEq)]
pub struct TopologyParams {
    /// Junctions in the meshed core.
    pub junctions: usize,
    pub houses_per_microgrid: usize,
    /// Longest chain of substations below one junction.
    pub chain_length: usize,
    /// Inclusive range of devices per house.
    pub devices_per_house: (usize, usize),
    /// Inclusive range of device weights.
    pub device_weight: (Wh, Wh),
    pub max_priority: u32,
    /// Probability a house owns a battery or an EV.
    pub storage_share: f64,
    /// Probability a house owns a renewable source.
    pub renewable_share: f64,
    /// Total producer capacity relative to total demand.
    pub supply_ratio: f64,
    /// Line capacity relative to downstream demand.
    pub line_margin: f64,
}

impl Default for TopologyParams {
    fn default() -> Self {
        TopologyParams {
            junctions: 4,
            houses_per_microgrid: 10,
            chain_length: 3,
            devices_per_house: (3, 8),
            device_weight: (1, 20),
            max_priority: 4,
            storage_share: 0.2,
            renewable_share: 0.2,
            supply_ratio: 0.8,
            line_margin: 1.2,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum GenerateError {
    #[error("need at least one house")]
    NoHouses,
    #[error("need at least one producer")]
    NoProducers,
    #[error("invalid topology parameter: {0}")]
    Params(&'static str),
}

fn check(params: &TopologyParams) -> Result<(), GenerateError> {
    let (dmin, dmax) = params.devices_per_house;
    let (wmin, wmax) = params.device_weight;
    if params.junctions == 0 {
        return Err(GenerateError::Params("junctions must be at least 1"));
    }
    if params.houses_per_microgrid == 0 || params.chain_length == 0 {
        return Err(GenerateError::Params("houses_per_microgrid and chain_length must be at least 1"));
    }
    if dmin == 0 || dmin > dmax {
        return Err(GenerateError::Params("devices_per_house must be a non-empty range starting at 1 or more"));
    }
    if wmin < 1 || wmin > wmax {
        return Err(GenerateError::Params("device_weight must be a non-empty positive range"));
    }
    for share in [params.storage_share, params.renewable_share] {
        if !(0.0..=1.0).contains(&share) {
            return Err(GenerateError::Params("shares must lie in [0, 1]"));
        }
    }
    if !(params.supply_ratio.is_finite() && params.supply_ratio >= 0.0)
        || !(params.line_margin.is_finite() && params.line_margin >= 0.0)
    {
        return Err(GenerateError::Params("ratios must be finite and >= 0"));
    }
    Ok(())
}

fn random_house(rng: &mut ChaCha8Rng, id: String, microgrid: String, p: &TopologyParams) -> House {
    let n = rng.gen_range(p.devices_per_house.0..=p.devices_per_house.1);
    let mut devices = Vec::with_capacity(n);
    let weight = |rng: &mut ChaCha8Rng| rng.gen_range(p.device_weight.0..=p.device_weight.1);
    // one device always running
    let w = weight(rng);
    devices.push(Device::load("d1", w, 0));
    let mut extra = Vec::new();
    if n > 1 && rng.gen_bool(p.storage_share) {
        extra.push(0);
    }
    if n > extra.len() + 1 && rng.gen_bool(p.renewable_share) {
        extra.push(1);
    }
    for i in 2..=n - extra.len() {
        let w = weight(rng);
        let prio = rng.gen_range(0..=p.max_priority);
        devices.push(Device::load(format!("d{i}"), w, prio));
    }
    for kind in extra {
        let id = format!("d{}", devices.len() + 1);
        if kind == 0 {
            let ev = rng.gen_bool(0.5);
            let cap = rng.gen_range(p.device_weight.1..=3 * p.device_weight.1);
            let soc = rng.gen_range(0..=cap);
            let rate = weight(rng);
            let prio = rng.gen_range(1..=p.max_priority.max(1));
            let kind = if ev { DeviceKind::Ev } else { DeviceKind::Battery };
            devices.push(Device::storage(id, kind, rate, prio, cap, soc));
        } else {
            let out = weight(rng) / 2;
            devices.push(Device::renewable(id, out));
        }
    }
    let mut house = House { id, microgrid, forecast: None, devices };
    let slack = rng.gen_range(0..=p.device_weight.1);
    house.forecast = Some(min_required(&house) + slack);
    house
}

fn scaled(v: Wh, factor: f64) -> Wh {
    (v as f64 * factor).ceil() as Wh
}

/// Builds a random valid scenario. The same seed and parameters always
/// give the same scenario.
pub fn random_scenario(
    seed: u64,
    n_houses: usize,
    n_producers: usize,
    params: &TopologyParams,
) -> Result<ScenarioConfig, GenerateError> {
    if n_houses == 0 {
        return Err(GenerateError::NoHouses);
    }
    if n_producers == 0 {
        return Err(GenerateError::NoProducers);
    }
    check(params)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cfg = ScenarioConfig::empty();
    cfg.seed = seed;

    let n_micro = n_houses.div_ceil(params.houses_per_microgrid);
    let mut demand = vec![0; n_micro];
    for h in 0..n_houses {
        let m = h / params.houses_per_microgrid;
        let house = random_house(&mut rng, format!("H{}", h + 1), format!("M{}", m + 1), params);
        demand[m] += house.total_demand();
        cfg.houses.push(house);
    }
    for m in 0..n_micro {
        let lo = m * params.houses_per_microgrid;
        let hi = (lo + params.houses_per_microgrid).min(n_houses);
        cfg.microgrids.push(Microgrid {
            id: format!("M{}", m + 1),
            substation: format!("S{}", m + 1),
            houses: cfg.houses[lo..hi].iter().map(|h| h.id.clone()).collect(),
        });
    }

    // Meshed core: a bidirectional ring plus random chords.
    let k = params.junctions;
    let total_demand: Wh = demand.iter().sum();
    let core_cap = scaled(total_demand.max(1), params.line_margin);
    let junction = |i: usize| format!("J{}", i + 1);
    for i in 0..k {
        cfg.nodes.push(Node { id: junction(i), kind: NodeKind::Junction });
    }
    let mut edges: Vec<(String, String, Wh)> = Vec::new();
    if k > 1 {
        for i in 0..k {
            let j = (i + 1) % k;
            if k == 2 && i == 1 {
                break;
            }
            edges.push((junction(i), junction(j), core_cap));
            edges.push((junction(j), junction(i), core_cap));
        }
        for i in 0..k {
            for j in i + 2..k {
                if (i, j) != (0, k - 1) && rng.gen_bool(0.3) {
                    edges.push((junction(i), junction(j), core_cap));
                    edges.push((junction(j), junction(i), core_cap));
                }
            }
        }
    }

    // Producers: one base unit, the rest peak or renewable.
    let supply = scaled(total_demand, params.supply_ratio);
    let mut weights: Vec<Wh> = (0..n_producers).map(|_| rng.gen_range(1..=4)).collect();
    weights[0] += 4;
    let wsum: Wh = weights.iter().sum();
    for (i, w) in weights.iter().enumerate() {
        let node = format!("G{}", i + 1);
        cfg.nodes.push(Node { id: node.clone(), kind: NodeKind::Producer });
        let (kind, cost) = match i {
            0 => (ProducerKind::Base, 1.0),
            _ if rng.gen_bool(0.5) => (ProducerKind::Peak, 3.0 + rng.gen_range(0..4) as f64 * 0.5),
            _ => (ProducerKind::Renewable, 0.5),
        };
        let capacity = supply * w / wsum;
        let profile = if kind == ProducerKind::Renewable {
            // daylight bell over 288 ticks, coarse hourly steps
            (0..24).map(|h: u32| if (6..18).contains(&h) { 100 - 8 * h.abs_diff(12) } else { 0 }).collect()
        } else {
            Vec::new()
        };
        edges.push((node.clone(), junction(rng.gen_range(0..k)), capacity));
        cfg.producers.push(Producer {
            id: format!("P{}", i + 1),
            node,
            capacity,
            marginal_cost: cost,
            kind,
            profile,
        });
    }

    // Substation chains below random junctions.
    let mut order: Vec<usize> = (0..n_micro).collect();
    order.shuffle(&mut rng);
    for chain in order.chunks(params.chain_length) {
        let mut parent = junction(rng.gen_range(0..k));
        for (pos, &m) in chain.iter().enumerate() {
            let downstream: Wh = chain[pos..].iter().map(|&d| demand[d]).sum();
            let sub = format!("S{}", m + 1);
            cfg.nodes.push(Node { id: sub.clone(), kind: NodeKind::Substation });
            edges.push((parent, sub.clone(), scaled(downstream, params.line_margin)));
            parent = sub;
        }
    }
    cfg.nodes.sort_by(|a, b| a.id.cmp(&b.id));

    cfg.edges = edges
        .into_iter()
        .enumerate()
        .map(|(i, (from, to, capacity))| NetworkEdge {
            id: format!("e{}", i + 1),
            from,
            to,
            capacity,
            cost: 1.0,
        })
        .collect();
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::validate_scenario;

    #[test]
    fn rejects_zero_counts() {
        let p = TopologyParams::default();
        assert_eq!(random_scenario(1, 0, 1, &p), Err(GenerateError::NoHouses));
        assert_eq!(random_scenario(1, 1, 0, &p), Err(GenerateError::NoProducers));
    }

    #[test]
    fn deterministic_and_seed_sensitive() {
        let p = TopologyParams::default();
        let a = random_scenario(7, 5, 2, &p).unwrap();
        assert_eq!(a, random_scenario(7, 5, 2, &p).unwrap());
        assert_ne!(a, random_scenario(8, 5, 2, &p).unwrap());
    }

    #[test]
    fn hundred_seeds_are_valid() {
        let p = TopologyParams::default();
        for seed in 0..100 {
            let n = 1 + (seed as usize * 7) % 40;
            let cfg = random_scenario(seed, n, 1 + seed as usize % 5, &p).unwrap();
            assert_eq!(validate_scenario(&cfg), vec![], "seed {seed}");
            assert_eq!(cfg.houses.len(), n);
        }
    }

    #[test]
    fn single_junction_and_tiny_params() {
        let p = TopologyParams {
            junctions: 1,
            houses_per_microgrid: 1,
            chain_length: 1,
            devices_per_house: (1, 1),
            ..TopologyParams::default()
        };
        let cfg = random_scenario(3, 3, 1, &p).unwrap();
        assert!(validate_scenario(&cfg).is_empty());
        assert_eq!(cfg.microgrids.len(), 3);
    }

    #[test]
    fn large_scenario_is_valid() {
        let cfg = random_scenario(1, 1000, 10, &TopologyParams::default()).unwrap();
        assert_eq!(cfg.houses.len(), 1000);
        assert!(validate_scenario(&cfg).is_empty());
    }
}
