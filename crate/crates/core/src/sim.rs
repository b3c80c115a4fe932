//! Tick orchestration.
//!
//! One tick runs, in order:
//!
//! 1. a first allocation per house: knapsack over deferrable devices within
//!    the forecast left after the mandatory load;
//! 2. strategy selection and the auction with feedback between microgrids
//!    and producers;
//! 3. incremental routing of the granted energy over the network;
//! 4. final distribution per house by knapsack, then a second knapsack per
//!    microgrid over the devices still unserved, fed by pooled leftovers.
//!
//! Priorities, storage charge and forecasts are then updated for the next tick.

use std::marker::PhantomData;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::auction::{
    collect_bids, consensus_loop, largest_remainder, regulation_metrics, Bid, RegulationMetrics,
};
use crate::dsm::{
    compute_alpha, compute_utilities, GridCondition, HouseUtilities, StrategyContext, StrategyFamily,
};
use crate::flow::{bottleneck_analysis, update_incremental, EdgeId};
use crate::knapsack::{solve, solve_normalized, Item, KnapsackInstance, KnapsackSolution};
use crate::model::{validate_scenario, AlphaMode, House, ProducerKind, ScenarioConfig, Violation};
use crate::network::GridNetwork;
use crate::scalar::Scalar;
use crate::Wh;

/// Device count above which the global optimum is not computed.
pub const ORACLE_DEVICE_CAP: usize = 20;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("scenario has {} violation(s): {}", .0.len(), .0.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))]
    Invalid(Vec<Violation>),
    #[error("global optimum limited to {cap} devices with utility, scenario has {devices}")]
    TooLarge { devices: usize, cap: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimOptions {
    pub feedback_rounds: u32,
    pub alpha_mode: AlphaMode,
    pub granularity: Wh,
    pub beta: f64,
    pub families: Vec<StrategyFamily>,
    pub seed: u64,
}

impl SimOptions {
    pub fn from_config(cfg: &ScenarioConfig) -> Self {
        SimOptions {
            feedback_rounds: cfg.feedback_rounds,
            alpha_mode: cfg.alpha_mode,
            granularity: cfg.granularity,
            beta: cfg.beta,
            families: StrategyFamily::ALL.to_vec(),
            seed: cfg.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StrategyChoice<S> {
    pub family: StrategyFamily,
    pub cutoff: u32,
    pub r: S,
    pub l: S,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HouseTick<S> {
    pub house: usize,
    pub forecast: Wh,
    /// Demand found by the first allocation.
    pub tentative: Wh,
    pub bid: Wh,
    /// Share of the microgrid grant.
    pub grant: Wh,
    /// Grid energy consumed, including energy received from the pool.
    pub allocation: Wh,
    /// Local generation and storage discharge consumed.
    pub local_used: Wh,
    /// Served device indices, ascending.
    pub served: Vec<usize>,
    pub served_weight: Wh,
    pub unserved_mandatory: Wh,
    pub strategy: Option<StrategyChoice<S>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MicrogridTick<S> {
    pub alpha: S,
    pub bid: Wh,
    pub grant: Wh,
    pub spilled: Wh,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EdgeFlow {
    pub edge: EdgeId,
    pub capacity: Wh,
    pub flow: Wh,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TickResult<S> {
    pub tick: usize,
    /// Energy routed from producers (Σ grants).
    pub supply: Wh,
    /// Energy booked after the last feedback round.
    pub demand: Wh,
    pub gap: Wh,
    pub gap_history: Vec<Wh>,
    /// Max flow with every first-round bid as demand.
    pub deliverable: Wh,
    pub unserved_mandatory: Wh,
    /// Routed energy no device could use.
    pub spilled: Wh,
    /// Local generation left unused.
    pub curtailed: Wh,
    /// Consumption with every device served.
    pub gross: Wh,
    /// Grid energy consumed.
    pub net: Wh,
    pub achieved_utility: S,
    pub metrics: RegulationMetrics,
    pub producers: Vec<Wh>,
    pub microgrids: Vec<MicrogridTick<S>>,
    pub houses: Vec<HouseTick<S>>,
    /// Flow on each scenario line, in scenario order.
    pub edges: Vec<EdgeFlow>,
}

/// Forecast smoothing: `round(β·realized + (1 − β)·forecast)`, halves up.
pub fn update_prognostics(forecast: Wh, realized: Wh, beta: f64) -> Wh {
    crate::model::round_half_up(beta * realized as f64 + (1.0 - beta) * forecast as f64)
}

/// Served devices return to their base priority; unserved deferrable devices
/// move one step closer to priority 1. Served storage takes its charge.
pub fn update_priorities(house: &mut House, served: &[usize]) {
    for (i, d) in house.devices.iter_mut().enumerate() {
        if !d.is_consumer() {
            continue;
        }
        let is_served = served.binary_search(&i).is_ok() || d.demand() == 0;
        if is_served {
            if d.kind.is_storage() {
                let charge = d.charge() + d.demand();
                d.state_of_charge = Some(charge);
            }
            d.current_priority = Some(d.base_priority);
        } else if d.base_priority >= 1 {
            d.current_priority = Some(d.priority().saturating_sub(1).max(1));
        }
    }
}

/// First allocation for one house: mandatory devices plus the best
/// deferrable set fitting in `forecast − mandatory`. Returns the chosen
/// device indices and their total demand.
pub fn sequence_a<S: Scalar>(
    house: &House,
    utilities: &HouseUtilities<S>,
    granularity: Wh,
) -> (Vec<usize>, Wh) {
    let mandatory: Vec<usize> = (0..house.devices.len())
        .filter(|&i| house.devices[i].is_mandatory())
        .collect();
    let mandatory_load: Wh = mandatory.iter().map(|&i| house.devices[i].demand()).sum();
    if utilities.done {
        return (mandatory, mandatory_load);
    }
    let capacity = (house.forecast() - mandatory_load).max(0);
    let items = (0..house.devices.len())
        .filter(|&i| {
            let d = &house.devices[i];
            d.is_consumer() && !d.is_mandatory() && d.demand() > 0
        })
        .map(|i| Item::new(i, house.devices[i].demand(), utilities.values[i].clone()))
        .collect();
    let sol = solve_normalized(&KnapsackInstance { items, capacity }, granularity);
    let mut chosen = mandatory;
    chosen.extend(sol.chosen);
    chosen.sort_unstable();
    (chosen, mandatory_load + sol.total_weight)
}

/// Per-house outcome of the first distribution pass.
struct FirstPass {
    served: Vec<usize>,
    grid_used: Wh,
    local_used: Wh,
    generation: Wh,
    pooled: Wh,
    no_storage: bool,
}

fn distribute_house<S: Scalar>(
    house: &House,
    utilities: &HouseUtilities<S>,
    share: Wh,
    discharge: Wh,
    granularity: Wh,
) -> FirstPass {
    let generation = house.local_generation();
    let local = generation + discharge;
    let no_storage = discharge > 0;
    let capacity = share + local;

    let eligible = |i: usize| {
        let d = &house.devices[i];
        d.is_consumer() && d.demand() > 0 && !(no_storage && d.kind.is_storage())
    };
    let mandatory: Vec<Item<S>> = (0..house.devices.len())
        .filter(|&i| eligible(i) && house.devices[i].is_mandatory())
        .map(|i| Item::new(i, house.devices[i].demand(), S::from_wh(house.devices[i].demand())))
        .collect();
    let first = solve(&KnapsackInstance { items: mandatory, capacity });
    let rest = capacity - first.total_weight;
    let deferrable: Vec<Item<S>> = (0..house.devices.len())
        .filter(|&i| eligible(i) && !house.devices[i].is_mandatory())
        .map(|i| Item::new(i, house.devices[i].demand(), utilities.values[i].clone()))
        .collect();
    let second = solve_normalized(&KnapsackInstance { items: deferrable, capacity: rest }, granularity);

    let served_weight = first.total_weight + second.total_weight;
    let local_used = local.min(served_weight);
    let grid_used = served_weight - local_used;
    let mut served = first.chosen;
    served.extend(second.chosen);
    served.sort_unstable();
    FirstPass {
        served,
        grid_used,
        local_used,
        generation,
        pooled: share - grid_used,
        no_storage,
    }
}

/// Final distribution of one house.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HouseDistribution {
    /// Served device indices, ascending.
    pub served: Vec<usize>,
    /// Grid energy consumed out of the house's own share.
    pub grid_used: Wh,
    /// Grid energy received from the microgrid pool.
    pub received: Wh,
    /// Local generation and storage discharge consumed.
    pub local_used: Wh,
    /// Local generation available.
    pub generation: Wh,
}

impl HouseDistribution {
    /// Grid energy consumed in total.
    pub fn allocation(&self) -> Wh {
        self.grid_used + self.received
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MicrogridDistribution {
    pub houses: Vec<HouseDistribution>,
    /// Pooled grid energy no device could use.
    pub spilled: Wh,
}

/// Final distribution inside one microgrid. Each house first fills its grid
/// `share` plus local energy (`discharge` Wh from storage) by knapsack,
/// mandatory devices first; leftover grid energy is pooled and offered to
/// the still-unserved devices of every house, again mandatory first.
pub fn sequence_d<S: Scalar>(
    houses: &[&House],
    utilities: &[&HouseUtilities<S>],
    shares: &[Wh],
    discharge: &[Wh],
    granularity: Wh,
) -> MicrogridDistribution {
    let mut pool = 0;
    let mut dists: Vec<FirstPass> = Vec::with_capacity(houses.len());
    for k in 0..houses.len() {
        let d = distribute_house(houses[k], utilities[k], shares[k], discharge[k], granularity);
        pool += d.pooled;
        dists.push(d);
    }

    let mut candidates: Vec<(usize, usize)> = Vec::new();
    for (k, d) in dists.iter().enumerate() {
        for (i, dev) in houses[k].devices.iter().enumerate() {
            if dev.is_consumer()
                && dev.demand() > 0
                && !(d.no_storage && dev.kind.is_storage())
                && d.served.binary_search(&i).is_err()
            {
                candidates.push((k, i));
            }
        }
    }
    let mut received = vec![0; dists.len()];
    for mandatory_pass in [true, false] {
        if pool <= 0 {
            break;
        }
        let items: Vec<Item<S>> = candidates
            .iter()
            .enumerate()
            .filter(|(_, &(k, i))| houses[k].devices[i].is_mandatory() == mandatory_pass)
            .map(|(c, &(k, i))| {
                let dev = &houses[k].devices[i];
                let value = if mandatory_pass {
                    S::from_wh(dev.demand())
                } else {
                    utilities[k].values[i].clone()
                };
                Item::new(c, dev.demand(), value)
            })
            .collect();
        let sol = solve_normalized(&KnapsackInstance { items, capacity: pool }, granularity);
        for c in sol.chosen {
            let (k, i) = candidates[c];
            let served = &mut dists[k].served;
            let pos = served.binary_search(&i).unwrap_err();
            served.insert(pos, i);
            received[k] += houses[k].devices[i].demand();
        }
        pool -= sol.total_weight;
    }

    MicrogridDistribution {
        houses: dists
            .into_iter()
            .zip(received)
            .map(|(d, received)| HouseDistribution {
                served: d.served,
                grid_used: d.grid_used,
                received,
                local_used: d.local_used,
                generation: d.generation,
            })
            .collect(),
        spilled: pool,
    }
}

/// Merit-order pricing of consumption plus a flat technology cost.
#[derive(Debug, Clone, PartialEq)]
pub struct CostModel {
    /// `(capacity, marginal cost)` ascending by cost.
    pub merit_order: Vec<(Wh, f64)>,
    pub technology_cost: f64,
}

impl CostModel {
    pub fn from_config(cfg: &ScenarioConfig) -> Self {
        let mut merit_order: Vec<(Wh, f64)> = cfg
            .producers
            .iter()
            .map(|p| (p.capacity, p.marginal_cost))
            .collect();
        merit_order.sort_by(|a, b| a.1.total_cmp(&b.1));
        CostModel {
            merit_order,
            technology_cost: cfg.technology_cost,
        }
    }

    /// Cost of one tick's energy, cheapest producers first; energy beyond
    /// total capacity is priced at the most expensive producer.
    pub fn energy_cost(&self, energy: Wh) -> f64 {
        let mut left = energy.max(0);
        let mut cost = 0.0;
        for &(cap, price) in &self.merit_order {
            let take = left.min(cap.max(0));
            cost += take as f64 * price;
            left -= take;
        }
        if left > 0 {
            cost += left as f64 * self.merit_order.last().map_or(0.0, |m| m.1);
        }
        cost
    }

    pub fn series_cost(&self, series: &[Wh]) -> f64 {
        series.iter().map(|&e| self.energy_cost(e)).sum()
    }
}

/// Cost of unmanaged consumption minus cost of managed consumption, minus
/// the technology cost.
pub fn profit_metric(gross: &[Wh], net: &[Wh], costs: &CostModel) -> f64 {
    costs.series_cost(gross) - costs.series_cost(net) - costs.technology_cost
}

/// Exact best total utility over every device of the given houses within
/// `capacity` Wh, ignoring house and network boundaries. Devices without
/// utility cannot change the optimum and do not count toward the size cap.
pub fn global_optimum_oracle<S: Scalar>(
    houses: &[House],
    capacity: Wh,
) -> Result<KnapsackSolution<S>, SimError> {
    let mut items = Vec::new();
    let mut id = 0;
    for h in houses {
        let u = compute_utilities::<S>(h);
        for (i, d) in h.devices.iter().enumerate() {
            if d.is_consumer() && d.demand() > 0 && u.values[i] > S::zero() {
                items.push(Item::new(id, d.demand(), u.values[i].clone()));
            }
            id += 1;
        }
    }
    if items.len() > ORACLE_DEVICE_CAP {
        return Err(SimError::TooLarge { devices: items.len(), cap: ORACLE_DEVICE_CAP });
    }
    Ok(solve(&KnapsackInstance { items, capacity }))
}

/// Single-writer simulation state.
#[derive(Debug, Clone)]
pub struct Simulator<S> {
    cfg: ScenarioConfig,
    options: SimOptions,
    houses: Vec<House>,
    members: Vec<Vec<usize>>,
    network: GridNetwork,
    conditions: Vec<GridCondition>,
    production: Vec<Wh>,
    tick: usize,
    _scalar: PhantomData<S>,
}

impl<S: Scalar> Simulator<S> {
    pub fn new(cfg: ScenarioConfig) -> Result<Self, SimError> {
        let options = SimOptions::from_config(&cfg);
        Self::with_options(cfg, options)
    }

    pub fn with_options(cfg: ScenarioConfig, options: SimOptions) -> Result<Self, SimError> {
        let violations = validate_scenario(&cfg);
        if !violations.is_empty() {
            return Err(SimError::Invalid(violations));
        }
        let members = cfg
            .microgrids
            .iter()
            .map(|m| {
                m.houses
                    .iter()
                    .map(|id| cfg.houses.iter().position(|h| &h.id == id).expect("validated"))
                    .collect()
            })
            .collect();
        let mut houses = cfg.houses.clone();
        for h in &mut houses {
            h.forecast = Some(h.forecast());
        }
        let network = GridNetwork::build(&cfg);
        Ok(Simulator {
            conditions: vec![GridCondition::Balanced; cfg.microgrids.len()],
            options,
            houses,
            members,
            network,
            production: Vec::new(),
            tick: 0,
            cfg,
            _scalar: PhantomData,
        })
    }

    pub fn config(&self) -> &ScenarioConfig {
        &self.cfg
    }

    pub fn options(&self) -> &SimOptions {
        &self.options
    }

    pub fn houses(&self) -> &[House] {
        &self.houses
    }

    pub fn network(&self) -> &GridNetwork {
        &self.network
    }

    /// Energy routed per tick so far; the only state that grows with time.
    pub fn production_history(&self) -> &[Wh] {
        &self.production
    }

    pub fn current_tick(&self) -> usize {
        self.tick
    }

    /// Producer offers at `tick`: profile applied, and renewable output
    /// scaled by a seeded factor in [80 %, 100 %].
    pub fn supply_at(&self, tick: usize) -> Vec<Wh> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.options.seed ^ (tick as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        self.cfg
            .producers
            .iter()
            .map(|p| {
                let base = p.capacity_at(tick).max(0);
                if p.kind == ProducerKind::Renewable {
                    base * rng.gen_range(80..=100) / 100
                } else {
                    base
                }
            })
            .collect()
    }

    /// Energy that could reach the substations this tick with unbounded
    /// consumption, plus local generation and storage discharge.
    pub fn oracle_capacity(&self) -> Wh {
        let mut net = self.network.clone();
        let supply = self.supply_at(self.tick);
        for (&e, &c) in net.supply_edges.iter().zip(&supply) {
            net.graph.set_capacity(e, c);
        }
        let (_, consumption) = bottleneck_analysis(&net.graph);
        let local: Wh = self
            .houses
            .iter()
            .map(|h| h.local_generation() + h.devices.iter().map(|d| d.dischargeable()).sum::<Wh>())
            .sum();
        consumption.deliverable + local
    }

    /// Global optimum for the current state.
    pub fn global_optimum(&self) -> Result<KnapsackSolution<S>, SimError> {
        global_optimum_oracle(&self.houses, self.oracle_capacity())
    }

    pub fn run(&mut self, ticks: usize) -> Vec<TickResult<S>> {
        (0..ticks).map(|_| self.tick()).collect()
    }

    pub fn tick(&mut self) -> TickResult<S> {
        let t = self.tick;
        let granularity = self.options.granularity;
        let utilities: Vec<HouseUtilities<S>> = self.houses.iter().map(compute_utilities).collect();

        // Sequence A
        let tentative: Vec<Wh> = self
            .houses
            .iter()
            .zip(&utilities)
            .map(|(h, u)| sequence_a(h, u, granularity).1)
            .collect();

        // Sequence B
        let supply = self.supply_at(t);
        let supply_changes: Vec<(EdgeId, Wh)> = self
            .network
            .supply_edges
            .iter()
            .zip(&supply)
            .map(|(&e, &c)| (e, c))
            .collect();
        update_incremental(&mut self.network.graph, &supply_changes);

        let contexts: Vec<StrategyContext<S>> = self
            .members
            .iter()
            .enumerate()
            .map(|(m, idx)| {
                let hs: Vec<&House> = idx.iter().map(|&i| &self.houses[i]).collect();
                let us: Vec<&HouseUtilities<S>> = idx.iter().map(|&i| &utilities[i]).collect();
                StrategyContext {
                    alpha: compute_alpha(self.options.alpha_mode, &hs, &us),
                    condition: self.conditions[m],
                    families: self.options.families.clone(),
                }
            })
            .collect();
        let bids = collect_bids(&self.members, &self.houses, &utilities, &contexts);
        let first_round = crate::auction::run_auction_round(&bids, &self.network);
        let first_bids: Vec<Wh> = bids.iter().map(|b| b.quantity).collect();
        let first_total: Wh = first_bids.iter().sum();
        let consensus = consensus_loop(bids, &self.network, self.options.feedback_rounds);

        // Sequence C
        let demand_changes: Vec<(EdgeId, Wh)> = self
            .network
            .demand_edges
            .iter()
            .zip(&consensus.grants)
            .map(|(&e, &c)| (e, c))
            .collect();
        update_incremental(&mut self.network.graph, &demand_changes);
        let grants = self.network.delivered();
        debug_assert_eq!(grants, consensus.grants);

        // Sequence D
        let mut houses_out: Vec<Option<HouseTick<S>>> = vec![None; self.houses.len()];
        let mut microgrids_out = Vec::with_capacity(self.members.len());
        let mut spilled_total = 0;
        let mut curtailed_total = 0;
        let mut achieved = S::zero();

        for (m, bid) in consensus.bids.iter().enumerate() {
            let (mg, spilled, curtailed) =
                self.distribute_microgrid(bid, grants[m], &utilities, &tentative, &contexts[m], &mut houses_out);
            spilled_total += spilled;
            curtailed_total += curtailed;
            microgrids_out.push(mg);
        }

        let houses_out: Vec<HouseTick<S>> = houses_out.into_iter().map(|h| h.expect("every house belongs to a microgrid")).collect();
        for ht in &houses_out {
            for &i in &ht.served {
                achieved = achieved + utilities[ht.house].values[i].clone();
            }
        }

        let gross: Wh = self.houses.iter().map(House::total_demand).sum();
        let routed: Wh = grants.iter().sum();
        let net: Wh = houses_out.iter().map(|h| h.allocation).sum();
        let unserved_mandatory = houses_out.iter().map(|h| h.unserved_mandatory).sum();

        // Priorities, storage and forecasts for the next tick.
        for ht in &houses_out {
            let house = &mut self.houses[ht.house];
            update_priorities(house, &ht.served);
            let forecast = house.forecast();
            house.forecast = Some(update_prognostics(forecast, ht.served_weight, self.options.beta));
        }

        // Conditions for the next tick, judged on the unadjusted bids.
        let spare = first_round.deliverable > first_total;
        for (m, mg) in microgrids_out.iter().enumerate() {
            self.conditions[m] = if first_round.grants[m] < first_bids[m] {
                GridCondition::Deficit
            } else if mg.spilled > 0 || spare {
                GridCondition::Surplus
            } else {
                GridCondition::Balanced
            };
        }

        self.production.push(routed);
        let metrics = regulation_metrics(&self.production);
        self.tick += 1;

        TickResult {
            tick: t,
            supply: routed,
            demand: consensus.state.demand,
            gap: consensus.state.gap,
            gap_history: consensus.state.history,
            deliverable: first_round.deliverable,
            unserved_mandatory,
            spilled: spilled_total,
            curtailed: curtailed_total,
            gross,
            net,
            achieved_utility: achieved,
            metrics,
            producers: self.network.produced(),
            microgrids: microgrids_out,
            houses: houses_out,
            edges: self
                .network
                .line_edges
                .iter()
                .map(|&e| EdgeFlow {
                    edge: e,
                    capacity: self.network.graph.capacity(e),
                    flow: self.network.graph.flow(e),
                })
                .collect(),
        }
    }

    /// Final distribution inside one microgrid. Returns the microgrid
    /// summary, spilled grid energy and curtailed local generation.
    #[allow(clippy::too_many_arguments)]
    fn distribute_microgrid(
        &mut self,
        bid: &Bid<S>,
        grant: Wh,
        utilities: &[HouseUtilities<S>],
        tentative: &[Wh],
        ctx: &StrategyContext<S>,
        out: &mut [Option<HouseTick<S>>],
    ) -> (MicrogridTick<S>, Wh, Wh) {
        let granularity = self.options.granularity;
        let demands: Vec<Wh> = bid.bundle.iter().map(|hb| hb.demand()).collect();
        let shares = largest_remainder(grant, &demands);

        let members: Vec<&House> = bid.bundle.iter().map(|hb| &self.houses[hb.house]).collect();
        let utils: Vec<&HouseUtilities<S>> = bid.bundle.iter().map(|hb| &utilities[hb.house]).collect();
        let discharge: Vec<Wh> = bid
            .bundle
            .iter()
            .map(|hb| hb.selected.as_ref().map_or(0, |s| s.supplied))
            .collect();
        let dist = sequence_d(&members, &utils, &shares, &discharge, granularity);
        let spilled = dist.spilled;

        let mut curtailed = 0;
        for (k, (hb, d)) in bid.bundle.iter().zip(dist.houses).enumerate() {
            let house = &mut self.houses[hb.house];
            let battery_used = (d.local_used - d.generation).max(0);
            curtailed += (d.generation - d.local_used).max(0);
            if battery_used > 0 {
                let mut left = battery_used;
                for dev in house.devices.iter_mut().filter(|dev| dev.kind.is_storage()) {
                    let take = dev.dischargeable().min(left);
                    dev.state_of_charge = Some(dev.charge() - take);
                    left -= take;
                }
            }
            let served_weight = d.served.iter().map(|&i| house.devices[i].demand()).sum::<Wh>();
            let mandatory: Wh = house.mandatory_load();
            let mandatory_served: Wh = d
                .served
                .iter()
                .filter(|&&i| house.devices[i].is_mandatory())
                .map(|&i| house.devices[i].demand())
                .sum();
            out[hb.house] = Some(HouseTick {
                house: hb.house,
                forecast: house.forecast(),
                tentative: tentative[hb.house],
                bid: hb.demand(),
                grant: shares[k],
                allocation: d.allocation(),
                local_used: d.local_used,
                served: d.served,
                served_weight,
                unserved_mandatory: mandatory - mandatory_served,
                strategy: hb.selected.as_ref().map(|s| StrategyChoice {
                    family: s.family,
                    cutoff: s.priority_cutoff,
                    r: s.reported_r(),
                    l: s.reported_l(),
                }),
            });
        }

        (
            MicrogridTick {
                alpha: ctx.alpha.clone(),
                bid: bid.quantity,
                grant,
                spilled,
            },
            spilled,
            curtailed,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{reference_houses, reference_scenario};
    use crate::model::Device;
    use crate::Rational;

    #[test]
    fn prognostics() {
        assert_eq!(update_prognostics(4, 10, 0.5), 7);
        assert_eq!(update_prognostics(9, 9, 0.5), 9);
        assert_eq!(update_prognostics(4, 10, 1.0), 10);
        assert_eq!(update_prognostics(4, 5, 0.5), 5);
    }

    #[test]
    fn priority_decrement_and_reset() {
        let mut h = House {
            id: "h".into(),
            microgrid: "m".into(),
            forecast: None,
            devices: vec![Device::load("a", 2, 3), Device::load("b", 2, 2)],
        };
        update_priorities(&mut h, &[]);
        update_priorities(&mut h, &[]);
        assert_eq!(h.devices[0].priority(), 1);
        update_priorities(&mut h, &[]);
        assert_eq!(h.devices[0].priority(), 1);
        update_priorities(&mut h, &[0, 1]);
        assert_eq!(h.devices[0].priority(), 3);
        assert_eq!(h.devices[1].priority(), 2);
    }

    #[test]
    fn first_allocation_cases() {
        let houses = reference_houses();
        let u = compute_utilities::<Rational>(&houses[0]);
        assert_eq!(sequence_a(&houses[0], &u, 1), (vec![0, 2], 4));
        let u = compute_utilities::<Rational>(&houses[2]);
        assert_eq!(sequence_a(&houses[2], &u, 1), (vec![0, 1, 2], 12));
        let mut big = houses[3].clone();
        big.forecast = Some(1000);
        let u = compute_utilities::<Rational>(&big);
        assert_eq!(sequence_a(&big, &u, 1), ((0..6).collect(), 20));
    }

    #[test]
    fn profit_arithmetic() {
        let costs = CostModel { merit_order: vec![(100, 2.0)], technology_cost: 5.0 };
        assert_eq!(profit_metric(&[10], &[0], &costs), 15.0);
        let free = CostModel { technology_cost: 0.0, ..costs };
        assert_eq!(profit_metric(&[7, 8], &[7, 8], &free), 0.0);
    }

    #[test]
    fn merit_order_overflow_uses_last_price() {
        let costs = CostModel { merit_order: vec![(5, 1.0), (5, 3.0)], technology_cost: 0.0 };
        assert_eq!(costs.energy_cost(12), 5.0 + 15.0 + 6.0);
    }

    #[test]
    fn reference_tick_matches_selected_strategies() {
        let mut sim = Simulator::<Rational>::new(reference_scenario()).unwrap();
        let r = sim.tick();
        let grants: Vec<Wh> = r.houses.iter().map(|h| h.grant).collect();
        assert_eq!(grants, vec![10, 7, 12, 12, 4]);
        assert_eq!(r.gap, 0);
        assert_eq!(r.supply, 45);
        assert_eq!(r.spilled, 0);
        assert_eq!(r.unserved_mandatory, 0);
    }

    #[test]
    fn oracle_size_cap() {
        let mut houses = reference_houses();
        houses[0].devices.extend((0..10).map(|i| Device::load(format!("x{i}"), 1, 1)));
        assert!(matches!(
            global_optimum_oracle::<Rational>(&houses, 10),
            Err(SimError::TooLarge { .. })
        ));
    }

    #[test]
    fn oracle_edge_capacities() {
        let houses = &reference_houses()[..3];
        let zero = global_optimum_oracle::<Rational>(houses, 0).unwrap();
        assert_eq!(zero.total_value, Rational::from_int(0));
        let all = global_optimum_oracle::<Rational>(houses, 1000).unwrap();
        // H3 is done and contributes no utility
        let total: i64 = crate::fixtures::REFERENCE_UTILITIES[..2].iter().flat_map(|(_, u)| u.iter()).sum();
        assert_eq!(all.total_value, Rational::from_int(total));
    }

    fn house(id: &str, devices: Vec<Device>) -> House {
        House { id: id.into(), microgrid: "M1".into(), forecast: None, devices }
    }

    #[test]
    fn leftover_served_in_second_pass() {
        let a = house("A", vec![Device::load("a1", 2, 0)]);
        let b = house("B", vec![Device::load("b1", 2, 0), Device::load("b2", 3, 2)]);
        let ua = compute_utilities::<Rational>(&a);
        let ub = compute_utilities::<Rational>(&b);
        let d = sequence_d(&[&a, &b], &[&ua, &ub], &[5, 2], &[0, 0], 1);
        assert_eq!(d.houses[1].served, vec![0, 1]);
        assert_eq!(d.houses[1].received, 3);
        assert_eq!(d.houses[0].allocation() + d.houses[1].allocation(), 7);
        assert_eq!(d.spilled, 0);
    }

    #[test]
    fn small_leftover_is_spilled() {
        let a = house("A", vec![Device::load("a1", 2, 0)]);
        let b = house("B", vec![Device::load("b1", 2, 0), Device::load("b2", 3, 2)]);
        let ua = compute_utilities::<Rational>(&a);
        let ub = compute_utilities::<Rational>(&b);
        let d = sequence_d(&[&a, &b], &[&ua, &ub], &[4, 2], &[0, 0], 1);
        assert_eq!(d.houses[1].served, vec![0]);
        assert_eq!(d.spilled, 2);
    }

    #[test]
    fn exact_grants_need_no_second_pass() {
        let houses = reference_houses();
        let refs: Vec<&House> = houses.iter().collect();
        let us: Vec<HouseUtilities<Rational>> = houses.iter().map(compute_utilities).collect();
        let urefs: Vec<&HouseUtilities<Rational>> = us.iter().collect();
        let d = sequence_d(&refs, &urefs, &[4, 7, 12, 5, 4], &[0; 5], 1);
        assert!(d.houses.iter().all(|h| h.received == 0));
        assert_eq!(d.spilled, 0);
    }

    #[test]
    fn mandatory_pooled_before_deferrable() {
        let a = house("A", vec![Device::load("a1", 1, 0)]);
        let b = house("B", vec![Device::load("b1", 3, 0), Device::load("b2", 3, 1)]);
        let ua = compute_utilities::<Rational>(&a);
        let ub = compute_utilities::<Rational>(&b);
        let d = sequence_d(&[&a, &b], &[&ua, &ub], &[4, 0], &[0, 0], 1);
        assert_eq!(d.houses[1].served, vec![0]);
    }

    #[test]
    fn unpowered_grid_leaves_mandatory_unserved() {
        let mut sim = Simulator::<Rational>::new(crate::fixtures::reference_scenario_with(0, 0, 60)).unwrap();
        let r = sim.tick();
        assert_eq!(r.supply, 0);
        assert_eq!(r.unserved_mandatory, reference_houses().iter().map(House::mandatory_load).sum::<Wh>());
        assert!(r.houses.iter().all(|h| h.served.is_empty()));
    }

    #[test]
    fn day_run_conserves_energy() {
        let mut sim = Simulator::<Rational>::new(crate::fixtures::reference_scenario_capped()).unwrap();
        for r in sim.run(48) {
            let alloc: Wh = r.houses.iter().map(|h| h.allocation).sum();
            assert_eq!(r.supply, alloc + r.spilled, "tick {}", r.tick);
            assert_eq!(r.producers.iter().sum::<Wh>(), r.supply);
            assert!(r.supply <= 40);
            for h in &r.houses {
                assert!(h.served_weight <= h.allocation + h.local_used);
            }
        }
        assert!(sim.network().graph.is_feasible_flow());
    }

    #[test]
    fn achieved_utility_within_optimum() {
        let mut sim = Simulator::<Rational>::new(reference_scenario()).unwrap();
        for _ in 0..5 {
            let opt = sim.global_optimum().unwrap();
            let r = sim.tick();
            assert!(r.achieved_utility <= opt.total_value);
        }
    }

    #[test]
    fn done_houses_are_stationary() {
        let mut cfg = reference_scenario();
        cfg.houses.retain(|h| h.id == "H3" || h.id == "H5");
        cfg.microgrids[0].houses = vec!["H3".into(), "H5".into()];
        // start from converged forecasts
        cfg.houses[1].forecast = Some(4);
        let mut sim = Simulator::<Rational>::new(cfg).unwrap();
        let a = sim.tick();
        let b = sim.tick();
        assert_eq!(a.houses, b.houses);
        assert_eq!(a.supply, 16);
    }

    #[test]
    fn invalid_scenario_rejected() {
        let mut cfg = reference_scenario();
        cfg.houses[0].devices[0].weight = -1;
        match Simulator::<f64>::new(cfg) {
            Err(SimError::Invalid(v)) => assert_eq!(v[0].subject, "device H1/d1"),
            other => panic!("{:?}", other.map(|_| ())),
        }
    }
}
