//! Energy booking: microgrids bid for energy, producers grant what the
//! network can deliver, and microgrids shrink their bids over a bounded
//! number of feedback rounds until supply and demand agree.

use crate::dsm::{generate_strategies, select_strategy, HouseUtilities, Strategy, StrategyContext};
use crate::flow::update_incremental;
use crate::model::House;
use crate::network::GridNetwork;
use crate::scalar::Scalar;
use crate::Wh;

/// One house's part of a microgrid bid.
#[derive(Debug, Clone, PartialEq)]
pub struct HouseBid<S> {
    /// Index into the simulator's house list.
    pub house: usize,
    pub mandatory: Wh,
    pub candidates: Vec<Strategy<S>>,
    /// `None` means mandatory-only consumption.
    pub selected: Option<Strategy<S>>,
    /// Set when a feedback share fell below the mandatory load.
    pub short_mandatory: bool,
}

impl<S: Scalar> HouseBid<S> {
    pub fn new(house: usize, mandatory: Wh, candidates: Vec<Strategy<S>>) -> Self {
        let selected = select_strategy(&candidates).cloned();
        HouseBid {
            house,
            mandatory,
            candidates,
            selected,
            short_mandatory: false,
        }
    }

    pub fn demand(&self) -> Wh {
        self.selected.as_ref().map_or(self.mandatory, Strategy::demand)
    }

    pub fn score(&self) -> S {
        self.selected.as_ref().map_or_else(S::zero, Strategy::score)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bid<S> {
    /// Index into the scenario's microgrid list.
    pub microgrid: usize,
    pub quantity: Wh,
    /// Σ (r + l) of the selected strategies.
    pub score: S,
    pub bundle: Vec<HouseBid<S>>,
}

impl<S: Scalar> Bid<S> {
    pub fn from_bundle(microgrid: usize, bundle: Vec<HouseBid<S>>) -> Self {
        let quantity = bundle.iter().map(HouseBid::demand).sum();
        let score = bundle.iter().fold(S::zero(), |acc, h| acc + h.score());
        Bid {
            microgrid,
            quantity,
            score,
            bundle,
        }
    }
}

/// One bid per microgrid: every house generates its strategies and keeps
/// the best one. `members[m]` lists the house indices of microgrid `m`.
pub fn collect_bids<S: Scalar>(
    members: &[Vec<usize>],
    houses: &[House],
    utilities: &[HouseUtilities<S>],
    contexts: &[StrategyContext<S>],
) -> Vec<Bid<S>> {
    members
        .iter()
        .enumerate()
        .map(|(m, idx)| {
            let bundle = idx
                .iter()
                .map(|&h| {
                    let strategies = generate_strategies(&houses[h], &utilities[h], &contexts[m]);
                    HouseBid::new(h, houses[h].mandatory_load(), strategies)
                })
                .collect();
            Bid::from_bundle(m, bundle)
        })
        .collect()
}

/// Splits `total` in proportion to `weights`, rounding down and handing the
/// leftover units to the largest remainders (earlier index on ties).
pub fn largest_remainder(total: Wh, weights: &[Wh]) -> Vec<Wh> {
    let sum: i128 = weights.iter().map(|&w| w.max(0) as i128).sum();
    if sum == 0 || total <= 0 {
        return vec![0; weights.len()];
    }
    let t = total as i128;
    let mut shares: Vec<Wh> = Vec::with_capacity(weights.len());
    let mut rems: Vec<(i128, usize)> = Vec::with_capacity(weights.len());
    for (i, &w) in weights.iter().enumerate() {
        let p = t * w.max(0) as i128;
        shares.push((p / sum) as Wh);
        rems.push((p % sum, i));
    }
    let mut left = total - shares.iter().sum::<Wh>();
    rems.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    for &(_, i) in &rems {
        if left == 0 {
            break;
        }
        shares[i] += 1;
        left -= 1;
    }
    shares
}

/// Rationing targets: `deliverable` split in proportion to positive bid
/// scores, never above a bid, with capped bids' excess redistributed.
/// Falls back to bid quantities as weights when no score is positive.
/// Rationing weight of a score: positive part in millionths. Integer weights
/// keep the water-filling exact without summing scores of unrelated
/// denominators.
fn score_units<S: Scalar>(score: &S) -> i128 {
    if *score > S::zero() {
        (score.to_f64() * 1e6).round() as i128
    } else {
        0
    }
}

fn rationing_targets<S: Scalar>(bids: &[Bid<S>], deliverable: Wh) -> Vec<Wh> {
    let n = bids.len();
    let scores: Vec<i128> = bids.iter().map(|b| score_units(&b.score)).collect();
    let weights: Vec<i128> = if scores.iter().any(|&s| s > 0) {
        scores
    } else {
        bids.iter().map(|b| b.quantity as i128).collect()
    };

    let mut target = vec![0; n];
    let mut active: Vec<usize> = (0..n).filter(|&i| bids[i].quantity > 0).collect();
    let mut remaining = deliverable;
    loop {
        let total_w: i128 = active.iter().map(|&i| weights[i]).sum();
        if active.is_empty() || remaining <= 0 || total_w <= 0 {
            break;
        }
        let rem = remaining as i128;
        let capped: Vec<usize> = active
            .iter()
            .copied()
            .filter(|&i| rem * weights[i] >= bids[i].quantity as i128 * total_w)
            .collect();
        if capped.is_empty() {
            // Floors, then leftover units by largest remainder.
            let mut fracs = Vec::with_capacity(active.len());
            let mut handed = 0;
            for &i in &active {
                let num = rem * weights[i];
                let fl = ((num / total_w) as Wh).clamp(0, bids[i].quantity);
                target[i] = fl;
                handed += fl;
                fracs.push((num % total_w, i));
            }
            fracs.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
            let mut left = remaining - handed;
            for (_, i) in fracs {
                if left <= 0 {
                    break;
                }
                if target[i] < bids[i].quantity {
                    target[i] += 1;
                    left -= 1;
                }
            }
            break;
        }
        for i in capped {
            target[i] = bids[i].quantity;
            remaining -= bids[i].quantity;
            active.retain(|&j| j != i);
        }
    }
    target
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AuctionRound {
    /// Energy granted per microgrid, in bid order.
    pub grants: Vec<Wh>,
    /// Max flow with every bid as demand.
    pub deliverable: Wh,
}

/// Grants as much of each bid as producers and the network allow.
///
/// The network's current supply capacities are the producer offers. When
/// the bids cannot all be met, the deliverable energy is rationed in
/// proportion to bid score; microgrids with higher score are served first
/// when the network prevents the proportional split, and any energy still
/// deliverable afterwards is handed out in the same order.
pub fn run_auction_round<S: Scalar>(bids: &[Bid<S>], network: &GridNetwork) -> AuctionRound {
    let mut g = network.clone();
    let quantities: Vec<Wh> = bids.iter().map(|b| b.quantity).collect();
    let mut demand = vec![0; network.demand_edges.len()];
    for b in bids {
        demand[b.microgrid] = b.quantity;
    }
    let changes: Vec<_> = g
        .demand_edges
        .iter()
        .zip(&demand)
        .map(|(&e, &c)| (e, c))
        .collect();
    let deliverable = update_incremental(&mut g.graph, &changes).value;
    let total: Wh = quantities.iter().sum();

    let grants = if deliverable >= total {
        quantities
    } else {
        let targets = rationing_targets(bids, deliverable);
        let zero: Vec<_> = g.demand_edges.iter().map(|&e| (e, 0)).collect();
        update_incremental(&mut g.graph, &zero);

        let mut order: Vec<usize> = (0..bids.len()).collect();
        order.sort_by(|&a, &b| {
            bids[b]
                .score
                .partial_cmp(&bids[a].score)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.cmp(&b))
        });
        for caps in [&targets, &quantities] {
            for &i in &order {
                let e = g.demand_edges[bids[i].microgrid];
                update_incremental(&mut g.graph, &[(e, caps[i])]);
            }
        }
        bids.iter().map(|b| g.graph.flow(g.demand_edges[b.microgrid])).collect()
    };
    AuctionRound { grants, deliverable }
}

/// Shrinks a bid to fit its grant: each house gets a share of the grant
/// proportional to its demand and re-selects the best strategy that fits.
/// Houses whose share cannot cover their mandatory load fall back to it and
/// are flagged. Demand never grows.
pub fn feedback_adjust<S: Scalar>(bid: &Bid<S>, grant: Wh) -> Bid<S> {
    if grant >= bid.quantity {
        return bid.clone();
    }
    let demands: Vec<Wh> = bid.bundle.iter().map(HouseBid::demand).collect();
    let shares = largest_remainder(grant, &demands);
    let bundle = bid
        .bundle
        .iter()
        .zip(shares)
        .map(|(hb, share)| {
            let current = hb.demand();
            let limit = share.min(current);
            let fitting: Vec<Strategy<S>> = hb
                .candidates
                .iter()
                .filter(|s| s.demand() <= limit)
                .cloned()
                .collect();
            let mut next = hb.clone();
            match select_strategy(&fitting) {
                Some(s) => next.selected = Some(s.clone()),
                None if hb.mandatory <= current => {
                    next.selected = None;
                    next.short_mandatory = share < hb.mandatory;
                }
                None => next.short_mandatory = true,
            }
            next
        })
        .collect();
    Bid::from_bundle(bid.microgrid, bundle)
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ConsensusState {
    pub round: u32,
    /// Energy granted in the last round.
    pub supply: Wh,
    /// Energy booked in the last round.
    pub demand: Wh,
    pub gap: Wh,
    /// Gap after each round.
    pub history: Vec<Wh>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConsensusOutcome<S> {
    pub bids: Vec<Bid<S>>,
    pub grants: Vec<Wh>,
    pub state: ConsensusState,
}

/// Auction rounds with feedback, at most `feedback_rounds` of them, stopping
/// as soon as every bid is met.
pub fn consensus_loop<S: Scalar>(
    mut bids: Vec<Bid<S>>,
    network: &GridNetwork,
    feedback_rounds: u32,
) -> ConsensusOutcome<S> {
    let mut state = ConsensusState::default();
    let mut grants = Vec::new();
    for round in 1..=feedback_rounds.max(1) {
        let outcome = run_auction_round(&bids, network);
        grants = outcome.grants;
        state.round = round;
        state.demand = bids.iter().map(|b| b.quantity).sum();
        state.supply = grants.iter().sum();
        state.gap = (state.demand - state.supply).abs();
        state.history.push(state.gap);
        if state.gap == 0 || round == feedback_rounds {
            break;
        }
        bids = bids
            .iter()
            .zip(&grants)
            .map(|(b, &g)| feedback_adjust(b, g))
            .collect();
    }
    ConsensusOutcome { bids, grants, state }
}

/// Smoothness of a production curve.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RegulationMetrics {
    pub peak_to_average: f64,
    pub variance: f64,
    /// Largest absolute change between consecutive ticks.
    pub max_difference: f64,
}

pub fn regulation_metrics(series: &[Wh]) -> RegulationMetrics {
    if series.is_empty() {
        return RegulationMetrics::default();
    }
    let n = series.len() as f64;
    let mean = series.iter().map(|&v| v as f64).sum::<f64>() / n;
    let peak = series.iter().copied().max().unwrap_or(0) as f64;
    let variance = series.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
    let max_difference = series
        .windows(2)
        .map(|w| (w[1] - w[0]).abs())
        .max()
        .unwrap_or(0) as f64;
    RegulationMetrics {
        peak_to_average: if mean > 0.0 { peak / mean } else { 1.0 },
        variance,
        max_difference,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsm::{compute_alpha, compute_utilities};
    use crate::fixtures::{reference_houses, reference_scenario, reference_scenario_capped};
    use crate::model::AlphaMode;
    use crate::Rational;

    fn reference_bids(alpha: Option<Rational>) -> (Vec<House>, Vec<Bid<Rational>>) {
        let houses = reference_houses();
        let utils: Vec<_> = houses.iter().map(compute_utilities::<Rational>).collect();
        let members = vec![(0..houses.len()).collect::<Vec<_>>()];
        let alpha = alpha.unwrap_or_else(|| {
            let hs: Vec<&House> = houses.iter().collect();
            let us: Vec<_> = utils.iter().collect();
            compute_alpha(AlphaMode::MicrogridMean, &hs, &us)
        });
        let bids = collect_bids(&members, &houses, &utils, &[StrategyContext::basic_only(alpha)]);
        (houses, bids)
    }

    fn with_supply(cfg: &crate::model::ScenarioConfig) -> GridNetwork {
        GridNetwork::build(cfg)
    }

    #[test]
    fn reference_bid_quantity() {
        let (_, bids) = reference_bids(None);
        assert_eq!(bids.len(), 1);
        let per_house: Vec<Wh> = bids[0].bundle.iter().map(HouseBid::demand).collect();
        assert_eq!(per_house, vec![10, 7, 12, 12, 4]);
        assert_eq!(bids[0].quantity, 45);
    }

    #[test]
    fn all_done_bid_is_mandatory_only() {
        let houses = reference_houses();
        let utils: Vec<_> = houses.iter().map(compute_utilities::<f64>).collect();
        let bids = collect_bids(&[vec![2, 4]], &houses, &utils, &[StrategyContext::new(0.0)]);
        assert_eq!(bids[0].quantity, 16);
        assert_eq!(bids[0].score, 0.0);
    }

    #[test]
    fn singleton_bid_mirrors_strategy() {
        let houses = vec![House {
            id: "h".into(),
            microgrid: "m".into(),
            forecast: None,
            devices: vec![crate::model::Device::load("a", 3, 2)],
        }];
        let utils: Vec<_> = houses.iter().map(compute_utilities::<Rational>).collect();
        let bids = collect_bids(&[vec![0]], &houses, &utils, &[StrategyContext::basic_only(Rational::from_int(0))]);
        let s = bids[0].bundle[0].selected.clone().unwrap();
        assert_eq!(bids[0].quantity, s.demand());
        assert_eq!(bids[0].score, s.score());
    }

    #[test]
    fn largest_remainder_conserves() {
        assert_eq!(largest_remainder(40, &[10, 7, 12, 12, 4]), vec![9, 6, 11, 11, 3]);
        assert_eq!(largest_remainder(5, &[0, 0]), vec![0, 0]);
        assert_eq!(largest_remainder(3, &[1, 1]), vec![2, 1]);
    }

    #[test]
    fn ample_supply_grants_everything() {
        let (_, bids) = reference_bids(None);
        let net = with_supply(&reference_scenario());
        let round = run_auction_round(&bids, &net);
        assert_eq!(round.grants, vec![45]);
    }

    #[test]
    fn zero_supply_grants_nothing() {
        let (_, bids) = reference_bids(None);
        let cfg = crate::fixtures::reference_scenario_with(0, 0, 60);
        let round = run_auction_round(&bids, &with_supply(&cfg));
        assert_eq!(round.grants, vec![0]);
    }

    #[test]
    fn feedback_fixed_point() {
        let (_, bids) = reference_bids(None);
        assert_eq!(feedback_adjust(&bids[0], 45), bids[0]);
    }

    #[test]
    fn feedback_under_forty() {
        let (_, bids) = reference_bids(None);
        let next = feedback_adjust(&bids[0], 40);
        let h1 = next.bundle[0].selected.as_ref().unwrap();
        assert_eq!(h1.demand(), 5);
        assert_eq!(h1.r, Rational::from_int(410));
        assert_eq!(h1.priority_cutoff, 1);
        let per_house: Vec<Wh> = next.bundle.iter().map(HouseBid::demand).collect();
        assert_eq!(per_house, vec![5, 5, 12, 9, 4]);
        assert!(next.bundle[2].short_mandatory);
        assert!(next.bundle[4].short_mandatory);
    }

    #[test]
    fn feedback_zero_grant_keeps_mandatory() {
        let (houses, bids) = reference_bids(None);
        let next = feedback_adjust(&bids[0], 0);
        let mandatory: Wh = houses.iter().map(House::mandatory_load).sum();
        assert_eq!(next.quantity, mandatory);
        assert!(next.bundle.iter().all(|h| h.selected.is_none()));
    }

    #[test]
    fn consensus_feasible_stops_first_round() {
        let (_, bids) = reference_bids(None);
        let out = consensus_loop(bids, &with_supply(&reference_scenario()), 3);
        assert_eq!(out.state.round, 1);
        assert_eq!(out.state.history, vec![0]);
    }

    #[test]
    fn consensus_capped_supply() {
        let (_, bids) = reference_bids(None);
        let out = consensus_loop(bids, &with_supply(&reference_scenario_capped()), 3);
        assert!(out.grants.iter().sum::<Wh>() <= 40);
        assert!(out.state.history.windows(2).all(|w| w[1] <= w[0]));
        assert_eq!(out.state.history, vec![5, 0]);
        let per_house: Vec<Wh> = out.bids[0].bundle.iter().map(HouseBid::demand).collect();
        assert_eq!(per_house, vec![5, 5, 12, 9, 4]);
    }

    #[test]
    fn consensus_zero_supply() {
        let (houses, bids) = reference_bids(None);
        let cfg = crate::fixtures::reference_scenario_with(0, 0, 60);
        let out = consensus_loop(bids, &with_supply(&cfg), 3);
        let mandatory: Wh = houses.iter().map(House::mandatory_load).sum();
        assert_eq!(out.state.history, vec![45, mandatory, mandatory]);
    }

    #[test]
    fn equal_bids_split_by_score() {
        // two microgrids behind one 10 Wh feeder, each booking 10
        let mut cfg = crate::fixtures::reference_scenario_with(100, 0, 100);
        cfg.nodes.push(crate::model::Node { id: "SUB2".into(), kind: crate::model::NodeKind::Substation });
        cfg.edges[2].capacity = 10;
        cfg.edges.push(crate::model::NetworkEdge {
            id: "e4".into(),
            from: "J1".into(),
            to: "SUB2".into(),
            capacity: 10,
            cost: 0.0,
        });
        cfg.edges[0].capacity = 10;
        cfg.microgrids.push(crate::model::Microgrid { id: "M2".into(), substation: "SUB2".into(), houses: vec![] });
        let net = GridNetwork::build(&cfg);
        let mk = |m, score: f64| Bid { microgrid: m, quantity: 10, score, bundle: vec![] };

        let round = run_auction_round(&[mk(0, 1.0), mk(1, 1.0)], &net);
        assert_eq!(round.deliverable, 10);
        assert_eq!(round.grants, vec![5, 5]);

        let round = run_auction_round(&[mk(0, 1.0), mk(1, 3.0)], &net);
        assert_eq!(round.grants, vec![3, 7]);
    }

    #[test]
    fn regulation_on_simple_series() {
        let m = regulation_metrics(&[4, 4, 4]);
        assert_eq!((m.peak_to_average, m.variance, m.max_difference), (1.0, 0.0, 0.0));
        let m = regulation_metrics(&[1, 3]);
        assert_eq!(m.peak_to_average, 1.5);
        assert_eq!(m.max_difference, 2.0);
        assert_eq!(m.variance, 1.0);
    }
}
