use std::collections::{BTreeMap, BTreeSet, VecDeque};

use thiserror::Error;

use super::{ComponentModel, UnitId};

/// A unit `(component, id, up, down)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnitNode {
    pub component: String,
    pub id: UnitId,
    pub up: BTreeSet<UnitId>,
    pub down: BTreeSet<UnitId>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DfgError {
    #[error("components `{first}` and `{second}` share unit id {id}")]
    DuplicateId { id: UnitId, first: String, second: String },
    #[error("component `{0}` has no unit id")]
    MissingId(String),
    #[error("id assignment names unknown component `{0}`")]
    UnknownComponent(String),
    #[error("connection names unknown component `{0}`")]
    UnknownEndpoint(String),
    #[error("unknown unit id {0}")]
    UnknownUnit(UnitId),
}

/// Units and the data flow `(producer, consumer)` among them.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct DataFlowGraph {
    pub nodes: Vec<UnitNode>,
    pub flows: BTreeSet<(UnitId, UnitId)>,
}

/// Relabels the component model with unit ids.
pub fn derive_dfg(model: &ComponentModel, ids: &BTreeMap<String, UnitId>) -> Result<DataFlowGraph, DfgError> {
    let mut owner: BTreeMap<UnitId, &str> = BTreeMap::new();
    for (name, &id) in ids {
        if model.component(name).is_none() {
            return Err(DfgError::UnknownComponent(name.clone()));
        }
        if let Some(first) = owner.insert(id, name) {
            return Err(DfgError::DuplicateId { id, first: first.to_string(), second: name.clone() });
        }
    }
    let mut nodes = Vec::with_capacity(model.components.len());
    for c in &model.components {
        let id = *ids.get(&c.name).ok_or_else(|| DfgError::MissingId(c.name.clone()))?;
        nodes.push((c.name.clone(), id));
    }
    let mut flows = BTreeSet::new();
    for (from, to) in &model.connections {
        let a = *ids.get(from).ok_or_else(|| DfgError::UnknownEndpoint(from.clone()))?;
        let b = *ids.get(to).ok_or_else(|| DfgError::UnknownEndpoint(to.clone()))?;
        flows.insert((a, b));
    }
    Ok(DataFlowGraph::from_parts(nodes, flows))
}

impl DataFlowGraph {
    /// Builds a graph from `(component, id)` pairs and id-level flows.
    /// Flow endpoints must be among the given ids.
    pub fn from_parts(nodes: Vec<(String, UnitId)>, flows: BTreeSet<(UnitId, UnitId)>) -> Self {
        let mut nodes: Vec<UnitNode> = nodes
            .into_iter()
            .map(|(component, id)| UnitNode { component, id, up: BTreeSet::new(), down: BTreeSet::new() })
            .collect();
        nodes.sort_by_key(|n| n.id);
        for &(j, i) in &flows {
            if let Ok(k) = nodes.binary_search_by_key(&j, |n| n.id) {
                nodes[k].down.insert(i);
            }
            if let Ok(k) = nodes.binary_search_by_key(&i, |n| n.id) {
                nodes[k].up.insert(j);
            }
        }
        DataFlowGraph { nodes, flows }
    }

    /// Graph whose units are named after their ids.
    pub fn from_edges<I>(ids: I, flows: BTreeSet<(UnitId, UnitId)>) -> Self
    where
        I: IntoIterator<Item = UnitId>,
    {
        let nodes = ids.into_iter().map(|id| (format!("unit{id}"), id)).collect();
        Self::from_parts(nodes, flows)
    }

    pub fn node(&self, id: UnitId) -> Result<&UnitNode, DfgError> {
        self.nodes.binary_search_by_key(&id, |n| n.id).map(|k| &self.nodes[k]).map_err(|_| DfgError::UnknownUnit(id))
    }

    pub fn ids(&self) -> impl Iterator<Item = UnitId> + '_ {
        self.nodes.iter().map(|n| n.id)
    }

    pub fn id_of(&self, component: &str) -> Option<UnitId> {
        self.nodes.iter().find(|n| n.component == component).map(|n| n.id)
    }

    pub fn upstream(&self, id: UnitId) -> Result<&BTreeSet<UnitId>, DfgError> {
        self.node(id).map(|n| &n.up)
    }

    pub fn downstream(&self, id: UnitId) -> Result<&BTreeSet<UnitId>, DfgError> {
        self.node(id).map(|n| &n.down)
    }

    /// Units that reach `id` through one or more flows.
    pub fn ancestors(&self, id: UnitId) -> BTreeSet<UnitId> {
        self.closure(id, |n| &n.up)
    }

    /// Units reachable from `id` through one or more flows.
    pub fn descendants(&self, id: UnitId) -> BTreeSet<UnitId> {
        self.closure(id, |n| &n.down)
    }

    fn closure(&self, id: UnitId, next: impl Fn(&UnitNode) -> &BTreeSet<UnitId>) -> BTreeSet<UnitId> {
        let mut seen = BTreeSet::new();
        let mut queue = VecDeque::from([id]);
        while let Some(u) = queue.pop_front() {
            let Ok(n) = self.node(u) else { continue };
            for &v in next(n) {
                if seen.insert(v) {
                    queue.push_back(v);
                }
            }
        }
        seen
    }

    /// Strongly connected components (Tarjan), each sorted ascending.
    pub fn sccs(&self) -> Vec<BTreeSet<UnitId>> {
        struct Tarjan<'a> {
            g: &'a DataFlowGraph,
            index: BTreeMap<UnitId, usize>,
            low: BTreeMap<UnitId, usize>,
            stack: Vec<UnitId>,
            on_stack: BTreeSet<UnitId>,
            out: Vec<BTreeSet<UnitId>>,
        }
        impl Tarjan<'_> {
            fn visit(&mut self, v: UnitId) {
                let i = self.index.len();
                self.index.insert(v, i);
                self.low.insert(v, i);
                self.stack.push(v);
                self.on_stack.insert(v);
                let down = self.g.node(v).map(|n| n.down.clone()).unwrap_or_default();
                for w in down {
                    if !self.index.contains_key(&w) {
                        self.visit(w);
                        let lw = self.low[&w];
                        let lv = self.low.get_mut(&v).unwrap();
                        *lv = (*lv).min(lw);
                    } else if self.on_stack.contains(&w) {
                        let iw = self.index[&w];
                        let lv = self.low.get_mut(&v).unwrap();
                        *lv = (*lv).min(iw);
                    }
                }
                if self.low[&v] == self.index[&v] {
                    let mut comp = BTreeSet::new();
                    while let Some(w) = self.stack.pop() {
                        self.on_stack.remove(&w);
                        comp.insert(w);
                        if w == v {
                            break;
                        }
                    }
                    self.out.push(comp);
                }
            }
        }
        let mut t = Tarjan {
            g: self,
            index: BTreeMap::new(),
            low: BTreeMap::new(),
            stack: Vec::new(),
            on_stack: BTreeSet::new(),
            out: Vec::new(),
        };
        for id in self.ids() {
            if !t.index.contains_key(&id) {
                t.visit(id);
            }
        }
        let mut out = t.out;
        out.sort();
        out
    }

    /// Members of the cyclic component containing `id`, excluding `id` itself.
    /// Empty when `id` lies on no cycle of length ≥ 2.
    pub fn cycle_peers(&self, id: UnitId) -> BTreeSet<UnitId> {
        self.sccs()
            .into_iter()
            .find(|c| c.contains(&id))
            .map(|mut c| {
                c.remove(&id);
                c
            })
            .unwrap_or_default()
    }

    /// One closed walk per cyclic strongly connected component or self-loop.
    /// Each cycle starts at the component's smallest id; consecutive ids and
    /// the last-to-first pair are flows.
    pub fn detect_cycles(&self) -> Vec<Vec<UnitId>> {
        let mut cycles = Vec::new();
        for comp in self.sccs() {
            let start = *comp.first().expect("components are non-empty");
            if comp.len() == 1 {
                if self.flows.contains(&(start, start)) {
                    cycles.push(vec![start]);
                }
                continue;
            }
            // Shortest path inside the component from a successor of `start` back to it.
            let mut prev: BTreeMap<UnitId, UnitId> = BTreeMap::new();
            let mut queue = VecDeque::from([start]);
            'bfs: while let Some(u) = queue.pop_front() {
                for &v in &self.node(u).expect("scc member exists").down {
                    if !comp.contains(&v) {
                        continue;
                    }
                    if v == start {
                        prev.insert(start, u);
                        break 'bfs;
                    }
                    if let std::collections::btree_map::Entry::Vacant(e) = prev.entry(v) {
                        e.insert(u);
                        queue.push_back(v);
                    }
                }
            }
            let mut walk = Vec::new();
            let mut cur = prev[&start];
            while cur != start {
                walk.push(cur);
                cur = prev[&cur];
            }
            walk.push(start);
            walk.reverse();
            cycles.push(walk);
        }
        cycles
    }

    /// Longest flow path length (in edges) ending at each unit; `None` if cyclic.
    pub fn depths(&self) -> Option<BTreeMap<UnitId, usize>> {
        let order = self.topological_order()?;
        let mut depth: BTreeMap<UnitId, usize> = BTreeMap::new();
        for id in order {
            let d = self.node(id).ok()?.up.iter().map(|u| depth[u] + 1).max().unwrap_or(0);
            depth.insert(id, d);
        }
        Some(depth)
    }

    /// Kahn order with ascending-id tie-break; `None` if cyclic.
    pub fn topological_order(&self) -> Option<Vec<UnitId>> {
        let mut indeg: BTreeMap<UnitId, usize> = self.nodes.iter().map(|n| (n.id, n.up.len())).collect();
        let mut ready: BTreeSet<UnitId> = indeg.iter().filter(|(_, &d)| d == 0).map(|(&id, _)| id).collect();
        let mut order = Vec::with_capacity(self.nodes.len());
        while let Some(u) = ready.pop_first() {
            order.push(u);
            for &v in &self.node(u).ok()?.down {
                let d = indeg.get_mut(&v)?;
                *d -= 1;
                if *d == 0 {
                    ready.insert(v);
                }
            }
        }
        (order.len() == self.nodes.len()).then_some(order)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ComponentSpec;

    fn u(i: u32) -> UnitId {
        UnitId(i)
    }

    fn graph(n: u32, edges: &[(u32, u32)]) -> DataFlowGraph {
        DataFlowGraph::from_edges((1..=n).map(u), edges.iter().map(|&(a, b)| (u(a), u(b))).collect())
    }

    #[test]
    fn single_component_has_empty_neighbourhood() {
        let model = ComponentModel { components: vec![ComponentSpec::atomic("solo")], connections: vec![] };
        let ids = BTreeMap::from([("solo".to_string(), u(0))]);
        let g = derive_dfg(&model, &ids).unwrap();
        assert_eq!(g.nodes.len(), 1);
        assert!(g.upstream(u(0)).unwrap().is_empty());
        assert!(g.downstream(u(0)).unwrap().is_empty());
    }

    #[test]
    fn duplicate_ids_name_both_components() {
        let model = ComponentModel {
            components: vec![ComponentSpec::atomic("a"), ComponentSpec::atomic("b")],
            connections: vec![],
        };
        let ids = BTreeMap::from([("a".to_string(), u(3)), ("b".to_string(), u(3))]);
        let err = derive_dfg(&model, &ids).unwrap_err();
        assert_eq!(err, DfgError::DuplicateId { id: u(3), first: "a".into(), second: "b".into() });
    }

    #[test]
    fn unknown_unit_is_an_error() {
        let g = graph(2, &[(1, 2)]);
        assert_eq!(g.upstream(u(9)), Err(DfgError::UnknownUnit(u(9))));
    }

    #[test]
    fn two_cycle_is_reported_once() {
        let g = graph(2, &[(1, 2), (2, 1)]);
        assert_eq!(g.detect_cycles(), vec![vec![u(1), u(2)]]);
        assert_eq!(g.cycle_peers(u(1)), BTreeSet::from([u(2)]));
        assert!(g.topological_order().is_none());
    }

    #[test]
    fn self_loop_is_a_cycle() {
        let g = graph(1, &[(1, 1)]);
        assert_eq!(g.detect_cycles(), vec![vec![u(1)]]);
        assert!(g.cycle_peers(u(1)).is_empty());
    }

    #[test]
    fn cycle_walk_follows_flows() {
        let g = graph(5, &[(1, 2), (2, 3), (3, 4), (4, 1), (3, 5), (5, 3)]);
        let cycles = g.detect_cycles();
        assert_eq!(cycles.len(), 1);
        let c = &cycles[0];
        for k in 0..c.len() {
            assert!(g.flows.contains(&(c[k], c[(k + 1) % c.len()])));
        }
    }

    #[test]
    fn depths_follow_longest_path() {
        let g = graph(4, &[(1, 2), (2, 3), (1, 3), (3, 4)]);
        let d = g.depths().unwrap();
        assert_eq!(d[&u(1)], 0);
        assert_eq!(d[&u(3)], 2);
        assert_eq!(d[&u(4)], 3);
    }
}
