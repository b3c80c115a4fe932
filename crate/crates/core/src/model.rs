//! Grid domain: devices, houses, microgrids, producers and the T&D network.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize};

use crate::Wh;

/// Current scenario file schema version.
pub const SCENARIO_VERSION: u32 = 1;

/// Largest accepted device priority; keeps `2^p` divisors exact.
pub const MAX_PRIORITY: u32 = 32;
/// Largest accepted energy quantity per tick.
pub const MAX_WH: Wh = 1_000_000_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeviceKind {
    Load,
    Battery,
    Renewable,
    Ev,
}

impl DeviceKind {
    /// Batteries and EVs hold a state of charge.
    pub fn is_storage(self) -> bool {
        matches!(self, DeviceKind::Battery | DeviceKind::Ev)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Device {
    pub id: String,
    pub kind: DeviceKind,
    /// Energy drawn per tick (for renewables: energy produced per tick).
    #[serde(deserialize_with = "de_wh")]
    pub weight: Wh,
    #[serde(rename = "priority")]
    pub base_priority: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub current_priority: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none", deserialize_with = "de_opt_wh")]
    pub battery_capacity: Option<Wh>,
    #[serde(default, skip_serializing_if = "Option::is_none", deserialize_with = "de_opt_wh")]
    pub state_of_charge: Option<Wh>,
}

impl Device {
    pub fn load(id: impl Into<String>, weight: Wh, priority: u32) -> Self {
        Device {
            id: id.into(),
            kind: DeviceKind::Load,
            weight,
            base_priority: priority,
            current_priority: None,
            battery_capacity: None,
            state_of_charge: None,
        }
    }

    pub fn storage(
        id: impl Into<String>,
        kind: DeviceKind,
        weight: Wh,
        priority: u32,
        capacity: Wh,
        charge: Wh,
    ) -> Self {
        Device {
            id: id.into(),
            kind,
            weight,
            base_priority: priority,
            current_priority: None,
            battery_capacity: Some(capacity),
            state_of_charge: Some(charge),
        }
    }

    pub fn renewable(id: impl Into<String>, output: Wh) -> Self {
        Device {
            id: id.into(),
            kind: DeviceKind::Renewable,
            weight: output,
            base_priority: 0,
            current_priority: None,
            battery_capacity: None,
            state_of_charge: None,
        }
    }

    /// Priority in effect this tick.
    pub fn priority(&self) -> u32 {
        self.current_priority.unwrap_or(self.base_priority)
    }

    pub fn charge(&self) -> Wh {
        self.state_of_charge.unwrap_or(0)
    }

    /// Energy this device asks from the house when served as a load.
    /// Storage only asks for what it can still absorb; renewables ask nothing.
    pub fn demand(&self) -> Wh {
        match self.kind {
            DeviceKind::Load => self.weight,
            DeviceKind::Renewable => 0,
            DeviceKind::Battery | DeviceKind::Ev => {
                let room = self.battery_capacity.unwrap_or(0) - self.charge();
                self.weight.min(room).max(0)
            }
        }
    }

    /// Energy a charged storage device can hand back this tick.
    pub fn dischargeable(&self) -> Wh {
        if self.kind.is_storage() {
            self.weight.min(self.charge()).max(0)
        } else {
            0
        }
    }

    /// Devices with priority 0 are already running and must be fed.
    pub fn is_mandatory(&self) -> bool {
        self.priority() == 0 && self.kind != DeviceKind::Renewable
    }

    pub fn is_consumer(&self) -> bool {
        self.kind != DeviceKind::Renewable
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct House {
    pub id: String,
    pub microgrid: String,
    /// Declared forecast for the next tick; `min_required` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none", deserialize_with = "de_opt_wh")]
    pub forecast: Option<Wh>,
    pub devices: Vec<Device>,
}

impl House {
    pub fn forecast(&self) -> Wh {
        self.forecast.unwrap_or_else(|| min_required(self))
    }

    /// Load of the devices already running (priority 0).
    pub fn mandatory_load(&self) -> Wh {
        self.devices
            .iter()
            .filter(|d| d.is_mandatory())
            .map(Device::demand)
            .sum()
    }

    /// Total demand with every consumer served.
    pub fn total_demand(&self) -> Wh {
        self.devices.iter().map(Device::demand).sum()
    }

    /// Energy produced in the house by renewables this tick.
    pub fn local_generation(&self) -> Wh {
        self.devices
            .iter()
            .filter(|d| d.kind == DeviceKind::Renewable)
            .map(|d| d.weight.max(0))
            .sum()
    }
}

/// Minimal energy a house needs: devices at priority 0 or 1.
pub fn min_required(house: &House) -> Wh {
    house
        .devices
        .iter()
        .filter(|d| d.priority() <= 1)
        .map(|d| d.weight)
        .sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Microgrid {
    pub id: String,
    pub substation: String,
    pub houses: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProducerKind {
    Base,
    Peak,
    Renewable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Producer {
    pub id: String,
    pub node: String,
    #[serde(deserialize_with = "de_wh")]
    pub capacity: Wh,
    pub marginal_cost: f64,
    pub kind: ProducerKind,
    /// Optional cyclic per-tick availability, in percent of `capacity`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub profile: Vec<u32>,
}

impl Producer {
    /// Nominal capacity at `tick` after applying the profile.
    pub fn capacity_at(&self, tick: usize) -> Wh {
        if self.profile.is_empty() {
            self.capacity
        } else {
            let pct = self.profile[tick % self.profile.len()] as Wh;
            self.capacity * pct / 100
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeKind {
    Producer,
    Junction,
    Substation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Node {
    pub id: String,
    pub kind: NodeKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkEdge {
    pub id: String,
    pub from: String,
    pub to: String,
    #[serde(deserialize_with = "de_wh")]
    pub capacity: Wh,
    /// Routing cost; stored, not used by max-flow routing.
    #[serde(default)]
    pub cost: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlphaMode {
    Fixed(f64),
    MicrogridMean,
}

impl Default for AlphaMode {
    fn default() -> Self {
        AlphaMode::MicrogridMean
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default = "default_version")]
    pub version: u32,
    /// Seconds per tick.
    #[serde(default = "default_tick_length")]
    pub tick_length: u32,
    #[serde(default = "default_horizon")]
    pub horizon: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_feedback_rounds")]
    pub feedback_rounds: u32,
    #[serde(default)]
    pub alpha_mode: AlphaMode,
    #[serde(default = "default_granularity", deserialize_with = "de_wh")]
    pub granularity: Wh,
    /// Forecast smoothing factor.
    #[serde(default = "default_beta")]
    pub beta: f64,
    /// Flat cost of the control technology, charged once per run.
    #[serde(default)]
    pub technology_cost: f64,
    pub nodes: Vec<Node>,
    pub edges: Vec<NetworkEdge>,
    pub producers: Vec<Producer>,
    pub microgrids: Vec<Microgrid>,
    pub houses: Vec<House>,
}

fn default_version() -> u32 {
    SCENARIO_VERSION
}
fn default_tick_length() -> u32 {
    300
}
fn default_horizon() -> usize {
    288
}
fn default_feedback_rounds() -> u32 {
    3
}
fn default_granularity() -> Wh {
    1
}
fn default_beta() -> f64 {
    0.5
}

impl ScenarioConfig {
    /// Empty scenario carrying all defaults.
    pub fn empty() -> Self {
        ScenarioConfig {
            version: SCENARIO_VERSION,
            tick_length: default_tick_length(),
            horizon: default_horizon(),
            seed: 0,
            feedback_rounds: default_feedback_rounds(),
            alpha_mode: AlphaMode::default(),
            granularity: default_granularity(),
            beta: default_beta(),
            technology_cost: 0.0,
            nodes: Vec::new(),
            edges: Vec::new(),
            producers: Vec::new(),
            microgrids: Vec::new(),
            houses: Vec::new(),
        }
    }

    pub fn house(&self, id: &str) -> Option<&House> {
        self.houses.iter().find(|h| h.id == id)
    }

    pub fn device_count(&self) -> usize {
        self.houses.iter().map(|h| h.devices.len()).sum()
    }
}

/// One broken invariant, naming the offending entity.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub subject: String,
    pub message: String,
}

impl Violation {
    fn new(subject: impl Into<String>, message: impl Into<String>) -> Self {
        Violation {
            subject: subject.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.subject, self.message)
    }
}

fn check_unique<'a>(
    kind: &str,
    ids: impl Iterator<Item = &'a str>,
    out: &mut Vec<Violation>,
) {
    let mut seen = BTreeSet::new();
    for id in ids {
        if !seen.insert(id) {
            out.push(Violation::new(format!("{kind} {id}"), "duplicate id"));
        }
    }
}

/// Checks every structural and sign invariant of a scenario.
/// Returns the violations found; an empty list means the scenario is valid.
pub fn validate_scenario(cfg: &ScenarioConfig) -> Vec<Violation> {
    let mut out = Vec::new();

    if cfg.horizon < 1 {
        out.push(Violation::new("scenario", "horizon must be at least 1"));
    }
    if cfg.feedback_rounds < 1 {
        out.push(Violation::new("scenario", "feedback_rounds must be at least 1"));
    }
    if cfg.granularity < 1 {
        out.push(Violation::new("scenario", "granularity must be at least 1"));
    }
    if cfg.tick_length < 1 {
        out.push(Violation::new("scenario", "tick_length must be at least 1"));
    }
    if !(0.0..=1.0).contains(&cfg.beta) {
        out.push(Violation::new("scenario", "beta must lie in [0, 1]"));
    }
    if let AlphaMode::Fixed(a) = cfg.alpha_mode {
        if !(a.is_finite() && a >= 0.0) {
            out.push(Violation::new("scenario", "fixed alpha must be finite and >= 0"));
        }
    }
    if !(cfg.technology_cost.is_finite() && cfg.technology_cost >= 0.0) {
        out.push(Violation::new("scenario", "technology_cost must be finite and >= 0"));
    }

    check_unique("node", cfg.nodes.iter().map(|n| n.id.as_str()), &mut out);
    check_unique("edge", cfg.edges.iter().map(|e| e.id.as_str()), &mut out);
    check_unique("producer", cfg.producers.iter().map(|p| p.id.as_str()), &mut out);
    check_unique("microgrid", cfg.microgrids.iter().map(|m| m.id.as_str()), &mut out);
    check_unique("house", cfg.houses.iter().map(|h| h.id.as_str()), &mut out);

    let nodes: BTreeMap<&str, NodeKind> =
        cfg.nodes.iter().map(|n| (n.id.as_str(), n.kind)).collect();

    for e in &cfg.edges {
        let subject = format!("edge {}", e.id);
        for end in [&e.from, &e.to] {
            if !nodes.contains_key(end.as_str()) {
                out.push(Violation::new(&subject, format!("references missing node '{end}'")));
            }
        }
        if e.from == e.to {
            out.push(Violation::new(&subject, "self loop"));
        }
        if e.capacity < 0 {
            out.push(Violation::new(&subject, format!("negative capacity {}", e.capacity)));
        }
    }

    for p in &cfg.producers {
        let subject = format!("producer {}", p.id);
        match nodes.get(p.node.as_str()) {
            None => out.push(Violation::new(&subject, format!("references missing node '{}'", p.node))),
            Some(NodeKind::Producer) => {}
            Some(_) => out.push(Violation::new(&subject, format!("node '{}' is not a producer node", p.node))),
        }
        if p.capacity < 0 {
            out.push(Violation::new(&subject, format!("negative capacity {}", p.capacity)));
        }
        if !(p.marginal_cost.is_finite() && p.marginal_cost >= 0.0) {
            out.push(Violation::new(&subject, "marginal_cost must be finite and >= 0"));
        }
    }

    let houses: BTreeMap<&str, &House> = cfg.houses.iter().map(|h| (h.id.as_str(), h)).collect();
    let mut owner: BTreeMap<&str, &str> = BTreeMap::new();
    let mut substations = BTreeSet::new();
    for m in &cfg.microgrids {
        let subject = format!("microgrid {}", m.id);
        match nodes.get(m.substation.as_str()) {
            None => out.push(Violation::new(&subject, format!("references missing node '{}'", m.substation))),
            Some(NodeKind::Substation) => {}
            Some(_) => out.push(Violation::new(&subject, format!("node '{}' is not a substation", m.substation))),
        }
        if !substations.insert(m.substation.as_str()) {
            out.push(Violation::new(&subject, format!("substation '{}' shared with another microgrid", m.substation)));
        }
        for h in &m.houses {
            match houses.get(h.as_str()) {
                None => out.push(Violation::new(&subject, format!("references missing house '{h}'"))),
                Some(house) => {
                    if house.microgrid != m.id {
                        out.push(Violation::new(&subject, format!("house '{h}' declares microgrid '{}'", house.microgrid)));
                    }
                    if let Some(prev) = owner.insert(h.as_str(), m.id.as_str()) {
                        out.push(Violation::new(format!("house {h}"), format!("listed by microgrids '{prev}' and '{}'", m.id)));
                    }
                }
            }
        }
    }

    for h in &cfg.houses {
        let subject = format!("house {}", h.id);
        if !owner.contains_key(h.id.as_str()) {
            out.push(Violation::new(&subject, "not listed by any microgrid"));
        }
        if let Some(f) = h.forecast {
            if f < 0 {
                out.push(Violation::new(&subject, format!("negative forecast {f}")));
            }
        }
        check_unique(&format!("house {} device", h.id), h.devices.iter().map(|d| d.id.as_str()), &mut out);
        for d in &h.devices {
            let subject = format!("device {}/{}", h.id, d.id);
            if d.weight < 0 {
                out.push(Violation::new(&subject, format!("negative weight {}", d.weight)));
            }
            if d.weight > MAX_WH {
                out.push(Violation::new(&subject, format!("weight {} above {MAX_WH}", d.weight)));
            }
            if d.base_priority.max(d.current_priority.unwrap_or(0)) > MAX_PRIORITY {
                out.push(Violation::new(&subject, format!("priority above {MAX_PRIORITY}")));
            }
            if d.kind.is_storage() {
                match (d.battery_capacity, d.state_of_charge) {
                    (Some(cap), soc) => {
                        let soc = soc.unwrap_or(0);
                        if cap < 0 {
                            out.push(Violation::new(&subject, format!("negative battery capacity {cap}")));
                        }
                        if soc < 0 || soc > cap {
                            out.push(Violation::new(&subject, format!("state of charge {soc} outside [0, {cap}]")));
                        }
                    }
                    (None, _) => out.push(Violation::new(&subject, "storage device without battery_capacity")),
                }
            }
        }
    }

    // Every substation in use must be fed by at least one producer.
    let mut adjacency: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for e in &cfg.edges {
        adjacency.entry(e.from.as_str()).or_default().push(e.to.as_str());
    }
    let mut reached = BTreeSet::new();
    let mut queue: VecDeque<&str> = cfg
        .producers
        .iter()
        .map(|p| p.node.as_str())
        .filter(|n| nodes.contains_key(n))
        .collect();
    reached.extend(queue.iter().copied());
    while let Some(n) = queue.pop_front() {
        for &next in adjacency.get(n).map(Vec::as_slice).unwrap_or(&[]) {
            if reached.insert(next) {
                queue.push_back(next);
            }
        }
    }
    for m in &cfg.microgrids {
        if nodes.contains_key(m.substation.as_str()) && !reached.contains(m.substation.as_str()) {
            out.push(Violation::new(
                format!("microgrid {}", m.id),
                format!("substation '{}' is not reachable from any producer", m.substation),
            ));
        }
    }

    out
}

/// Energy quantities may be written as decimals; they are rounded half-up.
pub(crate) fn round_half_up(v: f64) -> Wh {
    (v + 0.5).floor() as Wh
}

#[derive(Deserialize)]
#[serde(untagged)]
enum WhRepr {
    Int(i64),
    Float(f64),
}

impl WhRepr {
    fn into_wh(self) -> Wh {
        match self {
            WhRepr::Int(v) => v,
            WhRepr::Float(v) => round_half_up(v),
        }
    }
}

fn de_wh<'de, D: Deserializer<'de>>(d: D) -> Result<Wh, D::Error> {
    WhRepr::deserialize(d).map(WhRepr::into_wh)
}

fn de_opt_wh<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Wh>, D::Error> {
    Option::<WhRepr>::deserialize(d).map(|o| o.map(WhRepr::into_wh))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::reference_scenario;

    fn house(devices: &[(Wh, u32)]) -> House {
        House {
            id: "h".into(),
            microgrid: "m".into(),
            forecast: None,
            devices: devices
                .iter()
                .enumerate()
                .map(|(i, &(w, p))| Device::load(format!("d{}", i + 1), w, p))
                .collect(),
        }
    }

    #[test]
    fn min_required_matches_reference_houses() {
        assert_eq!(min_required(&house(&[(1, 0), (1, 1), (3, 0), (5, 2), (20, 4)])), 5);
        assert_eq!(min_required(&house(&[(1, 0), (1, 1), (3, 0), (3, 2), (4, 1), (8, 4)])), 9);
        assert_eq!(min_required(&house(&[])), 0);
    }

    #[test]
    fn reference_scenario_is_valid() {
        assert_eq!(validate_scenario(&reference_scenario()), vec![]);
    }

    #[test]
    fn dangling_edge_is_reported() {
        let mut cfg = reference_scenario();
        cfg.edges[0].to = "nowhere".into();
        let v = validate_scenario(&cfg);
        // the substation also becomes unreachable
        assert!(v.iter().any(|v| v.subject == format!("edge {}", cfg.edges[0].id)
            && v.message.contains("nowhere")));
        let edge_violations: Vec<_> = v.iter().filter(|v| v.subject.starts_with("edge")).collect();
        assert_eq!(edge_violations.len(), 1);
    }

    #[test]
    fn negative_weight_is_reported() {
        let mut cfg = reference_scenario();
        cfg.houses[0].devices[2].weight = -1;
        let v = validate_scenario(&cfg);
        assert_eq!(v.len(), 1, "{v:?}");
        assert_eq!(v[0].subject, "device H1/d3");
    }

    #[test]
    fn validation_is_idempotent() {
        let mut cfg = reference_scenario();
        cfg.houses[1].devices[0].weight = -4;
        cfg.producers[0].capacity = -2;
        let before = cfg.clone();
        assert_eq!(validate_scenario(&cfg), validate_scenario(&cfg));
        assert_eq!(cfg, before);
    }

    #[test]
    fn storage_bounds() {
        let mut cfg = reference_scenario();
        cfg.houses[0]
            .devices
            .push(Device::storage("bat", DeviceKind::Battery, 5, 2, 10, 11));
        let v = validate_scenario(&cfg);
        assert_eq!(v.len(), 1);
        assert!(v[0].message.contains("state of charge"));
    }

    #[test]
    fn storage_demand_is_bounded_by_room() {
        let d = Device::storage("b", DeviceKind::Battery, 5, 2, 10, 8);
        assert_eq!(d.demand(), 2);
        assert_eq!(d.dischargeable(), 5);
        let r = Device::renewable("pv", 7);
        assert_eq!(r.demand(), 0);
        assert!(!r.is_mandatory());
    }

    #[test]
    fn decimal_energy_rounds_half_up() {
        let d: Device = serde_json::from_str(
            r#"{"id":"x","kind":"load","weight":2.5,"priority":1}"#,
        )
        .unwrap();
        assert_eq!(d.weight, 3);
        let d: Device = serde_json::from_str(
            r#"{"id":"x","kind":"load","weight":2.49,"priority":1}"#,
        )
        .unwrap();
        assert_eq!(d.weight, 2);
    }
}
