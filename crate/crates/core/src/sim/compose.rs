//! Which units a fault reaches, and the recovery time predicted from
//! per-class costs.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use super::scenario::{Effect, Scenario};
use crate::clock::Millis;
use crate::model::{DataFlowGraph, UnitId};

/// Data flows along which misbehaviour spreads, with the effect each
/// carries. Inside a cycle only flows from a smaller to a larger id
/// propagate, so the result is acyclic.
pub fn propagation_edges(scenario: &Scenario) -> BTreeMap<(UnitId, UnitId), Effect> {
    propagation_edges_of(&scenario.dfg, scenario.propagation.detector, &scenario.propagation.edges)
}

pub(crate) fn propagation_edges_of(
    dfg: &DataFlowGraph,
    default: Effect,
    overrides: &[super::scenario::EdgeOverride],
) -> BTreeMap<(UnitId, UnitId), Effect> {
    let scc_of: BTreeMap<UnitId, usize> =
        dfg.sccs().iter().enumerate().flat_map(|(i, c)| c.iter().map(move |&u| (u, i))).collect();
    let mut out = BTreeMap::new();
    for &(a, b) in &dfg.flows {
        if scc_of.get(&a) == scc_of.get(&b) && a >= b {
            continue;
        }
        let effect = overrides.iter().rev().find(|o| o.from == a && o.to == b).map_or(default, |o| o.effect);
        if effect != Effect::None {
            out.insert((a, b), effect);
        }
    }
    out
}

/// Hop counts from `from` over `edges` (`from` itself at 0).
pub fn hops_from(edges: &BTreeMap<(UnitId, UnitId), Effect>, from: UnitId) -> BTreeMap<UnitId, u64> {
    let mut dist = BTreeMap::from([(from, 0u64)]);
    let mut queue = VecDeque::from([from]);
    while let Some(u) = queue.pop_front() {
        let d = dist[&u];
        for &(_, v) in edges.range((u, UnitId(0))..=(u, UnitId(u32::MAX))).map(|(k, _)| k) {
            if let std::collections::btree_map::Entry::Vacant(e) = dist.entry(v) {
                e.insert(d + 1);
                queue.push_back(v);
            }
        }
    }
    dist
}

/// Injected units plus everything reachable from them along propagating flows.
pub fn involved(scenario: &Scenario) -> BTreeSet<UnitId> {
    let edges = propagation_edges(scenario);
    scenario.injected().into_iter().flat_map(|f| hops_from(&edges, f).into_keys()).collect()
}

/// Predicted total recovery time: a unit finishes one class cost after the
/// last involved upstream unit it depends on, failed units costing the
/// calibrated handling time and affected units the clearing time.
pub fn compose_expected(scenario: &Scenario) -> Millis {
    let edges = propagation_edges(scenario);
    let injected = scenario.injected();
    let inv = involved(scenario);
    let order = DataFlowGraph::from_edges(
        inv.iter().copied(),
        edges.keys().filter(|(a, b)| inv.contains(a) && inv.contains(b)).copied().collect(),
    )
    .topological_order()
    .expect("propagation edges are acyclic");
    let mut finish: BTreeMap<UnitId, Millis> = BTreeMap::new();
    for u in order {
        let cost = if injected.contains(&u) {
            scenario.calibration.failed_handling_ms
        } else {
            scenario.calibration.affected_clearing_ms
        };
        let start = edges
            .keys()
            .filter(|&&(a, b)| b == u && inv.contains(&a))
            .map(|(a, _)| finish[a])
            .max()
            .unwrap_or(Millis::ZERO);
        finish.insert(u, start + cost);
    }
    finish.into_values().max().unwrap_or(Millis::ZERO)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dfg(n: u32, flows: &[(u32, u32)]) -> DataFlowGraph {
        DataFlowGraph::from_edges((1..=n).map(UnitId), flows.iter().map(|&(a, b)| (UnitId(a), UnitId(b))).collect())
    }

    #[test]
    fn cycles_propagate_one_way() {
        let g = dfg(3, &[(1, 2), (2, 1), (2, 3)]);
        let e = propagation_edges_of(&g, Effect::Inherit, &[]);
        let keys: Vec<(u32, u32)> = e.keys().map(|(a, b)| (a.0, b.0)).collect();
        assert_eq!(keys, vec![(1, 2), (2, 3)]);
    }

    #[test]
    fn overrides_can_cut_edges() {
        let g = dfg(3, &[(1, 2), (2, 3)]);
        let cut = [super::super::scenario::EdgeOverride { from: UnitId(2), to: UnitId(3), effect: Effect::None }];
        let e = propagation_edges_of(&g, Effect::Inherit, &cut);
        assert_eq!(hops_from(&e, UnitId(1)), BTreeMap::from([(UnitId(1), 0), (UnitId(2), 1)]));
    }
}
