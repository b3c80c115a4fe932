//! Demand-side management: device utilities, candidate strategies per house,
//! producer/consumer scoring and selection.
//!
//! A device's utility is `u = w_max·p_max − w·p + w` where `w_max` and
//! `p_max` are the largest weight and priority in its house. A strategy is a
//! set of devices, normally every consumer at or below a priority cutoff. It
//! is scored by
//!
//! * `r = Σ u·w / d(p)` over included devices, with divisor `d(p) = max(p, 1)`
//!   (running devices have priority 0 and count once), and
//! * `l = r − α·W` with `W` the strategy's total weight and α the average
//!   utility per Wh in the microgrid.
//!
//! The house keeps the strategy maximizing `r + l`.

use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::model::{AlphaMode, Device, DeviceKind, House};
use crate::scalar::Scalar;
use crate::Wh;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyFamily {
    Basic,
    PeakShaving,
    Conservation,
    LoadShifting,
    OverProduction,
    OverConsumption,
}

impl StrategyFamily {
    pub const ALL: [StrategyFamily; 6] = [
        StrategyFamily::Basic,
        StrategyFamily::PeakShaving,
        StrategyFamily::Conservation,
        StrategyFamily::LoadShifting,
        StrategyFamily::OverProduction,
        StrategyFamily::OverConsumption,
    ];

    pub fn name(self) -> &'static str {
        match self {
            StrategyFamily::Basic => "basic",
            StrategyFamily::PeakShaving => "peak_shaving",
            StrategyFamily::Conservation => "conservation",
            StrategyFamily::LoadShifting => "load_shifting",
            StrategyFamily::OverProduction => "over_production",
            StrategyFamily::OverConsumption => "over_consumption",
        }
    }
}

impl fmt::Display for StrategyFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Supply situation seen by a microgrid on the previous tick. Gates the
/// storage families: over-production needs a surplus, over-consumption a
/// deficit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GridCondition {
    #[default]
    Balanced,
    Surplus,
    Deficit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HouseUtilities<S> {
    /// One entry per device, in house order.
    pub values: Vec<S>,
    /// Every device is already running (`p_max = 0`): nothing to decide.
    pub done: bool,
}

pub fn compute_utilities<S: Scalar>(house: &House) -> HouseUtilities<S> {
    if house.devices.is_empty() {
        return HouseUtilities { values: Vec::new(), done: true };
    }
    let w_max = house.devices.iter().map(|d| d.weight).max().unwrap_or(0);
    let p_max = house.devices.iter().map(Device::priority).max().unwrap_or(0) as Wh;
    if p_max == 0 {
        return HouseUtilities {
            values: vec![S::zero(); house.devices.len()],
            done: true,
        };
    }
    let values = house
        .devices
        .iter()
        .map(|d| {
            let p = d.priority() as Wh;
            S::from_int(w_max * p_max - d.weight * p + d.weight)
        })
        .collect();
    HouseUtilities { values, done: false }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Strategy<S> {
    pub house_id: String,
    pub family: StrategyFamily,
    pub priority_cutoff: u32,
    /// Indices into the house's device list, ascending.
    pub included: Vec<usize>,
    /// Σ demand of the included devices.
    pub total_weight: Wh,
    /// Energy storage hands back to the house under this strategy.
    pub supplied: Wh,
    pub r: S,
    pub l: S,
}

impl<S: Scalar> Strategy<S> {
    /// Energy the house asks from the grid under this strategy.
    pub fn demand(&self) -> Wh {
        (self.total_weight - self.supplied).max(0)
    }

    pub fn score(&self) -> S {
        self.r.clone() + self.l.clone()
    }

    pub fn reported_r(&self) -> S {
        report_r(&self.r)
    }

    pub fn reported_l(&self) -> S {
        report_l(&self.l)
    }
}

/// `r` as tabulated: rounded down to an integer.
pub fn report_r<S: Scalar>(r: &S) -> S {
    r.floor()
}

/// `l` as tabulated: to the nearest half.
pub fn report_l<S: Scalar>(l: &S) -> S {
    l.round_half()
}

fn unit_divisor<S: Scalar>(p: u32) -> S {
    S::from_int(p.max(1) as i64)
}

/// Producer-side score of a device set under the basic divisor.
pub fn eval_r<S: Scalar>(house: &House, utilities: &[S], included: &[usize]) -> S {
    included.iter().fold(S::zero(), |acc, &i| {
        let d = &house.devices[i];
        acc + utilities[i].clone() * S::from_wh(d.demand()) / unit_divisor(d.priority())
    })
}

/// Consumer-side score: `r` corrected by α per Wh consumed.
pub fn eval_l<S: Scalar>(r_raw: &S, total_weight: Wh, alpha: &S) -> S {
    r_raw.clone() - alpha.clone() * S::from_wh(total_weight)
}

/// Inputs for strategy generation shared by the houses of one microgrid.
#[derive(Debug, Clone)]
pub struct StrategyContext<S> {
    pub alpha: S,
    pub condition: GridCondition,
    pub families: Vec<StrategyFamily>,
}

impl<S: Scalar> StrategyContext<S> {
    pub fn new(alpha: S) -> Self {
        StrategyContext {
            alpha,
            condition: GridCondition::Balanced,
            families: StrategyFamily::ALL.to_vec(),
        }
    }

    pub fn basic_only(alpha: S) -> Self {
        StrategyContext {
            families: vec![StrategyFamily::Basic],
            ..Self::new(alpha)
        }
    }

    pub fn with_condition(mut self, condition: GridCondition) -> Self {
        self.condition = condition;
        self
    }
}

/// Per-device view after a family's transformation.
struct Transformed<S> {
    priority: Vec<u32>,
    utility: Vec<S>,
    divisor: Vec<S>,
}

fn transform<S: Scalar>(
    family: StrategyFamily,
    house: &House,
    utilities: &HouseUtilities<S>,
) -> Transformed<S> {
    let devices = &house.devices;
    let mut priority: Vec<u32> = devices.iter().map(Device::priority).collect();
    let mut utility = utilities.values.clone();

    match family {
        StrategyFamily::Conservation => {
            for (i, d) in devices.iter().enumerate() {
                if d.kind == DeviceKind::Load {
                    utility[i] = S::one() / unit_divisor::<S>(d.priority());
                }
            }
        }
        StrategyFamily::LoadShifting => {
            let total = house.total_demand();
            if total > 0 {
                let factor = S::from_wh(house.forecast()) / S::from_wh(total);
                for u in &mut utility {
                    *u = u.clone() * factor.clone();
                }
            }
        }
        StrategyFamily::OverProduction => {
            for (i, d) in devices.iter().enumerate() {
                if d.kind.is_storage() && priority[i] > 0 {
                    priority[i] = (priority[i] - 1).max(1);
                }
            }
        }
        _ => {}
    }

    let divisor = priority
        .iter()
        .map(|&p| match family {
            StrategyFamily::PeakShaving => S::pow2(p),
            _ => unit_divisor(p),
        })
        .collect();
    Transformed { priority, utility, divisor }
}

fn family_applies(family: StrategyFamily, house: &House, condition: GridCondition) -> bool {
    let storage = || house.devices.iter().filter(|d| d.kind.is_storage());
    match family {
        StrategyFamily::OverProduction => {
            condition == GridCondition::Surplus && storage().any(|d| d.demand() > 0)
        }
        StrategyFamily::OverConsumption => condition == GridCondition::Deficit,
        _ => true,
    }
}

/// Candidate strategies of one house: for each enabled family, one strategy
/// per distinct priority level present among the house's consumers.
/// Done houses have no candidates.
pub fn generate_strategies<S: Scalar>(
    house: &House,
    utilities: &HouseUtilities<S>,
    ctx: &StrategyContext<S>,
) -> Vec<Strategy<S>> {
    if utilities.done {
        return Vec::new();
    }
    let mut out = Vec::new();
    for &family in &ctx.families {
        if !family_applies(family, house, ctx.condition) {
            continue;
        }
        let t = transform(family, house, utilities);
        let consumers: Vec<usize> = (0..house.devices.len())
            .filter(|&i| house.devices[i].is_consumer())
            .collect();
        let mut levels: Vec<u32> = consumers.iter().map(|&i| t.priority[i]).collect();
        levels.sort_unstable();
        levels.dedup();

        for cutoff in levels {
            let mut included: Vec<usize> = consumers
                .iter()
                .copied()
                .filter(|&i| t.priority[i] <= cutoff)
                .collect();
            let mut supplied = 0;

            if family == StrategyFamily::OverConsumption {
                supplied = house.devices.iter().map(Device::dischargeable).sum();
                included.retain(|&i| !house.devices[i].kind.is_storage());
                let drop = included
                    .iter()
                    .copied()
                    .filter(|&i| {
                        let d = &house.devices[i];
                        d.kind == DeviceKind::Load && d.priority() >= 1
                    })
                    .min_by(|&a, &b| {
                        t.utility[a]
                            .partial_cmp(&t.utility[b])
                            .unwrap_or(Ordering::Equal)
                            .then(a.cmp(&b))
                    });
                if let Some(i) = drop {
                    included.retain(|&j| j != i);
                } else if supplied == 0 {
                    continue;
                }
            }

            let total_weight: Wh = included.iter().map(|&i| house.devices[i].demand()).sum();
            let r = included.iter().fold(S::zero(), |acc, &i| {
                acc + t.utility[i].clone() * S::from_wh(house.devices[i].demand()) / t.divisor[i].clone()
            });
            let l = eval_l(&r, total_weight, &ctx.alpha);
            out.push(Strategy {
                house_id: house.id.clone(),
                family,
                priority_cutoff: cutoff,
                included,
                total_weight,
                supplied,
                r,
                l,
            });
        }
    }
    out
}

/// Strategy with the largest `r + l`; ties go to the smaller total weight,
/// then the lower cutoff, then the earlier family.
pub fn select_strategy<S: Scalar>(strategies: &[Strategy<S>]) -> Option<&Strategy<S>> {
    strategies.iter().reduce(|best, s| {
        let by_score = s.score().partial_cmp(&best.score()).unwrap_or(Ordering::Equal);
        let better = by_score
            .then(best.total_weight.cmp(&s.total_weight))
            .then(best.priority_cutoff.cmp(&s.priority_cutoff))
            .then(best.family.cmp(&s.family));
        if better == Ordering::Greater {
            s
        } else {
            best
        }
    })
}

/// Average utility per Wh over the houses of a microgrid that still have
/// choices to make; done houses are left out.
pub fn compute_alpha<S: Scalar>(
    mode: AlphaMode,
    houses: &[&House],
    utilities: &[&HouseUtilities<S>],
) -> S {
    match mode {
        AlphaMode::Fixed(v) => S::from_decimal(v),
        AlphaMode::MicrogridMean => {
            let mut score = S::zero();
            let mut weight: Wh = 0;
            for (h, u) in houses.iter().zip(utilities) {
                if u.done {
                    continue;
                }
                let all: Vec<usize> = (0..h.devices.len()).filter(|&i| h.devices[i].is_consumer()).collect();
                score = score + eval_r(h, &u.values, &all);
                weight += h.total_demand();
            }
            if weight == 0 {
                S::zero()
            } else {
                score / S::from_wh(weight)
            }
        }
    }
}
