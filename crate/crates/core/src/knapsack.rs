//! 0-1 knapsack by dynamic programming over capacity.
//!
//! Ties between optimal selections are broken toward the smaller total
//! weight, then toward the lexicographically smallest set of item ids, so a
//! given instance always yields the same selection.

use crate::scalar::Scalar;
use crate::Wh;

#[derive(Debug, Clone, PartialEq)]
pub struct Item<S> {
    pub id: usize,
    pub weight: Wh,
    pub value: S,
}

impl<S> Item<S> {
    pub fn new(id: usize, weight: Wh, value: S) -> Self {
        Item { id, weight, value }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KnapsackInstance<S> {
    pub items: Vec<Item<S>>,
    pub capacity: Wh,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KnapsackSolution<S> {
    /// Chosen item ids, ascending.
    pub chosen: Vec<usize>,
    pub total_weight: Wh,
    pub total_value: S,
}

impl<S: Scalar> KnapsackSolution<S> {
    pub fn empty() -> Self {
        KnapsackSolution {
            chosen: Vec::new(),
            total_weight: 0,
            total_value: S::zero(),
        }
    }
}

/// Maps a normalized instance back to original weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Scale {
    pub granularity: Wh,
    pub capacity: Wh,
    weights: Vec<(usize, Wh)>,
}

impl Scale {
    /// Re-expresses a solution of the normalized instance in original Wh.
    pub fn restore<S: Scalar>(&self, sol: &KnapsackSolution<S>) -> KnapsackSolution<S> {
        let total_weight = sol
            .chosen
            .iter()
            .map(|id| {
                self.weights
                    .iter()
                    .find(|(i, _)| i == id)
                    .map(|&(_, w)| w)
                    .expect("chosen id comes from the instance")
            })
            .sum();
        KnapsackSolution {
            chosen: sol.chosen.clone(),
            total_weight,
            total_value: sol.total_value.clone(),
        }
    }
}

fn div_ceil(a: Wh, b: Wh) -> Wh {
    (a + b - 1) / b
}

/// Buckets weights into units of `granularity`: weights round up and the
/// capacity rounds down, so any selection feasible after normalization is
/// feasible in original units.
pub fn normalize<S: Scalar>(
    instance: &KnapsackInstance<S>,
    granularity: Wh,
) -> (KnapsackInstance<S>, Scale) {
    assert!(granularity >= 1, "granularity must be >= 1");
    let scale = Scale {
        granularity,
        capacity: instance.capacity,
        weights: instance.items.iter().map(|it| (it.id, it.weight)).collect(),
    };
    let items = instance
        .items
        .iter()
        .map(|it| Item::new(it.id, div_ceil(it.weight.max(0), granularity), it.value.clone()))
        .collect();
    let capacity = instance.capacity.max(0) / granularity;
    (KnapsackInstance { items, capacity }, scale)
}

/// Normalizes, solves and reports the selection in original units.
pub fn solve_normalized<S: Scalar>(
    instance: &KnapsackInstance<S>,
    granularity: Wh,
) -> KnapsackSolution<S> {
    if granularity <= 1 {
        return solve(instance);
    }
    let (norm, scale) = normalize(instance, granularity);
    scale.restore(&solve(&norm))
}

/// Exact optimum of the 0-1 knapsack.
pub fn solve<S: Scalar>(instance: &KnapsackInstance<S>) -> KnapsackSolution<S> {
    let capacity = instance.capacity.max(0);

    // Free items with positive value are always taken; worthless free
    // items and items that can never fit are dropped.
    let mut free: Vec<&Item<S>> = Vec::new();
    let mut items: Vec<&Item<S>> = Vec::new();
    for it in &instance.items {
        if it.weight <= 0 {
            if it.value > S::zero() {
                free.push(it);
            }
        } else if it.weight <= capacity && it.value > S::zero() {
            items.push(it);
        }
    }
    items.sort_by_key(|it| it.id);

    let mut solution = if items.iter().map(|it| it.weight).sum::<Wh>() <= capacity {
        KnapsackSolution {
            chosen: items.iter().map(|it| it.id).collect(),
            total_weight: items.iter().map(|it| it.weight).sum(),
            total_value: items.iter().fold(S::zero(), |acc, it| acc + it.value.clone()),
        }
    } else {
        solve_dp(&items, capacity as usize)
    };

    for it in free {
        solution.chosen.push(it.id);
        solution.total_value = solution.total_value + it.value.clone();
    }
    solution.chosen.sort_unstable();
    solution
}

/// Suffix table `best[i][c]`: best value from items `i..` with weight exactly
/// `c`. Walking it forward and taking an item whenever it stays on an optimal
/// path yields the lexicographically smallest optimal id set.
fn solve_dp<S: Scalar>(items: &[&Item<S>], capacity: usize) -> KnapsackSolution<S> {
    let n = items.len();
    let width = capacity + 1;
    let mut best: Vec<Option<S>> = vec![None; (n + 1) * width];
    best[n * width] = Some(S::zero());

    for i in (0..n).rev() {
        let w = items[i].weight as usize;
        let (head, tail) = best.split_at_mut((i + 1) * width);
        let row = &mut head[i * width..];
        let next = &tail[..width];
        for c in 0..width {
            let skip = next[c].clone();
            let take = if c >= w {
                next[c - w].clone().map(|v| v + items[i].value.clone())
            } else {
                None
            };
            row[c] = match (skip, take) {
                (Some(s), Some(t)) => Some(if t > s { t } else { s }),
                (s, t) => s.or(t),
            };
        }
    }

    // Optimal value at the smallest weight reaching it.
    let mut target = 0usize;
    for c in 1..width {
        if let Some(v) = &best[c] {
            if best[target].as_ref().map_or(true, |b| v > b) {
                target = c;
            }
        }
    }
    let total_value = best[target].clone().unwrap_or_else(S::zero);

    let mut chosen = Vec::new();
    let mut c = target;
    for i in 0..n {
        let w = items[i].weight as usize;
        let here = best[i * width + c].clone();
        if c >= w {
            let via = best[(i + 1) * width + c - w]
                .clone()
                .map(|v| v + items[i].value.clone());
            if via.is_some() && via == here {
                chosen.push(items[i].id);
                c -= w;
            }
        }
    }
    debug_assert_eq!(c, 0);

    KnapsackSolution {
        total_weight: items
            .iter()
            .filter(|it| chosen.contains(&it.id))
            .map(|it| it.weight)
            .sum(),
        chosen,
        total_value,
    }
}
