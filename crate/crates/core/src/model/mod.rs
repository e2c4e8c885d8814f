//! Component, port and isolation formalisms, plus the unit data-flow graph.
//!
//! A [`ComponentModel`] lists the components of the control system and the
//! directed connections (data producer → consumer) among them. An
//! [`IsolationSpec`] attaches partition properties to every component.
//! [`validate_model`] reports every violated invariant as data; it never fails.

mod dfg;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

pub use dfg::{derive_dfg, DataFlowGraph, DfgError, UnitNode};

/// Identifier of a unit in the data-flow graph.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct UnitId(pub u32);

impl fmt::Display for UnitId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PortKind {
    Provided,
    Required,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PortMode {
    Synchronous,
    #[default]
    Asynchronous,
}

/// A named port: a set of methods, its direction and communication mode.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Port {
    pub name: String,
    pub methods: BTreeSet<String>,
    pub kind: PortKind,
    #[serde(default)]
    pub mode: PortMode,
}

/// Port reference used by internal wiring: `(owning component, port name)`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PortRef {
    pub component: String,
    pub port: String,
}

impl fmt::Display for PortRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.component, self.port)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComponentSpec {
    pub name: String,
    #[serde(default)]
    pub provided: Vec<Port>,
    #[serde(default)]
    pub required: Vec<Port>,
    #[serde(default)]
    pub subcomponents: Vec<ComponentSpec>,
    #[serde(default)]
    pub wiring: Vec<(PortRef, PortRef)>,
}

impl ComponentSpec {
    pub fn atomic(name: impl Into<String>) -> Self {
        ComponentSpec { name: name.into(), ..Default::default() }
    }

    pub fn is_atomic(&self) -> bool {
        self.subcomponents.is_empty()
    }

    /// Own ports plus the ports of the direct subcomponents.
    pub fn total_ports(&self) -> BTreeSet<PortRef> {
        let own = self
            .provided
            .iter()
            .chain(&self.required)
            .map(|p| PortRef { component: self.name.clone(), port: p.name.clone() });
        let internal = self.subcomponents.iter().flat_map(|sc| {
            sc.provided.iter().chain(&sc.required).map(|p| PortRef { component: sc.name.clone(), port: p.name.clone() })
        });
        own.chain(internal).collect()
    }

    fn provided_methods(&self) -> BTreeSet<&str> {
        self.provided.iter().flat_map(|p| p.methods.iter().map(String::as_str)).collect()
    }

    fn required_methods(&self) -> BTreeSet<&str> {
        self.required.iter().flat_map(|p| p.methods.iter().map(String::as_str)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ComponentModel {
    pub components: Vec<ComponentSpec>,
    /// Directed data flow `(producer, consumer)` by component name.
    pub connections: Vec<(String, String)>,
}

impl ComponentModel {
    pub fn component(&self, name: &str) -> Option<&ComponentSpec> {
        self.components.iter().find(|c| c.name == name)
    }
}

/// Partition properties of one component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IsolationRecord {
    pub resources: Vec<f64>,
    /// 0 = stronger isolation (virtual machine), 1 = container.
    pub isolation_level: u8,
    /// 0 = reset the partition, 1 = switch to a backup.
    pub mitigation_policy: u8,
    #[serde(default = "default_budget")]
    pub mitigation_budget: u32,
    /// Components in the same group draw shareable dimensions from one pool.
    #[serde(default)]
    pub shared_group: Option<String>,
}

fn default_budget() -> u32 {
    1
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct IsolationSpec {
    /// Names of the `d` resource dimensions, e.g. `cores`, `memory_mb`.
    pub dims: Vec<String>,
    /// Dimensions that members of a shared group draw from a single pool.
    pub shareable: BTreeSet<String>,
    pub records: BTreeMap<String, IsolationRecord>,
}

impl IsolationSpec {
    pub fn with_dims<I, S>(dims: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        IsolationSpec { dims: dims.into_iter().map(Into::into).collect(), ..Default::default() }
    }

    /// Componentwise resource demand. Shareable dimensions of a shared group
    /// count once at the group's maximum.
    pub fn total_demand(&self) -> Vec<f64> {
        let d = self.dims.len();
        let mut total = vec![0.0; d];
        let mut pools: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
        for rec in self.records.values() {
            for (i, dim) in self.dims.iter().enumerate() {
                let v = rec.resources.get(i).copied().unwrap_or(0.0);
                match &rec.shared_group {
                    Some(g) if self.shareable.contains(dim) => {
                        let pool = pools.entry(g.as_str()).or_insert_with(|| vec![0.0; d]);
                        pool[i] = pool[i].max(v);
                    }
                    _ => total[i] += v,
                }
            }
        }
        for pool in pools.values() {
            for (t, p) in total.iter_mut().zip(pool) {
                *t += p;
            }
        }
        total
    }
}

/// One violated invariant, naming the offending component or field.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    DuplicateComponent(String),
    EmptyPort { component: String, port: String },
    PortKindMismatch { component: String, port: String },
    ReflexiveWiring { component: String, port: PortRef },
    UnknownWiringEndpoint { component: String, port: PortRef },
    UnknownConnectionEndpoint { from: String, to: String, missing: String },
    IncompatiblePorts { from: String, to: String },
    MissingIsolation(String),
    UnknownIsolationComponent(String),
    ResourceDimension { component: String, expected: usize, found: usize },
    InvalidResource { component: String, dim: String, value: f64 },
    IsolationLevel { component: String, value: u8 },
    MitigationPolicy { component: String, value: u8 },
    HostDimension { expected: usize, found: usize },
    ResourceOvercommit { dim: String, demand: f64, available: f64 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use Violation::*;
        match self {
            DuplicateComponent(c) => write!(f, "component `{c}`: duplicate name"),
            EmptyPort { component, port } => {
                write!(f, "component `{component}`: port `{port}` has no methods")
            }
            PortKindMismatch { component, port } => {
                write!(f, "component `{component}`: port `{port}` listed under the wrong kind")
            }
            ReflexiveWiring { component, port } => {
                write!(f, "component `{component}`: port `{port}` wired to itself")
            }
            UnknownWiringEndpoint { component, port } => {
                write!(f, "component `{component}`: wiring endpoint `{port}` is not a total port")
            }
            UnknownConnectionEndpoint { from, to, missing } => {
                write!(f, "connection `{from}` -> `{to}`: unknown component `{missing}`")
            }
            IncompatiblePorts { from, to } => {
                write!(f, "connection `{from}` -> `{to}`: provided and required methods do not intersect")
            }
            MissingIsolation(c) => write!(f, "component `{c}`: no isolation record"),
            UnknownIsolationComponent(c) => {
                write!(f, "isolation record `{c}`: no such component")
            }
            ResourceDimension { component, expected, found } => {
                write!(f, "component `{component}`: resources has {found} dimensions, expected {expected}")
            }
            InvalidResource { component, dim, value } => {
                write!(f, "component `{component}`: resource `{dim}` = {value} is not a non-negative number")
            }
            IsolationLevel { component, value } => {
                write!(f, "component `{component}`: isolation_level {value} not in {{0,1}}")
            }
            MitigationPolicy { component, value } => {
                write!(f, "component `{component}`: mitigation_policy {value} not in {{0,1}}")
            }
            HostDimension { expected, found } => {
                write!(f, "host: {found} resource dimensions, expected {expected}")
            }
            ResourceOvercommit { dim, demand, available } => {
                write!(f, "resource sum `{dim}`: components request {demand}, host provides {available}")
            }
        }
    }
}

/// Checks every component, isolation and host-resource invariant.
///
/// Port compatibility of a connection is only checked when the producer
/// declares provided ports and the consumer declares required ports.
pub fn validate_model(model: &ComponentModel, spec: &IsolationSpec, host: &[f64]) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut seen = BTreeSet::new();
    for c in &model.components {
        if !seen.insert(c.name.as_str()) {
            out.push(Violation::DuplicateComponent(c.name.clone()));
        }
        validate_component(c, &mut out);
    }

    for (from, to) in &model.connections {
        for end in [from, to] {
            if model.component(end).is_none() {
                out.push(Violation::UnknownConnectionEndpoint {
                    from: from.clone(),
                    to: to.clone(),
                    missing: end.clone(),
                });
            }
        }
        if let (Some(p), Some(r)) = (model.component(from), model.component(to)) {
            let provided = p.provided_methods();
            let required = r.required_methods();
            if !provided.is_empty() && !required.is_empty() && provided.is_disjoint(&required) {
                out.push(Violation::IncompatiblePorts { from: from.clone(), to: to.clone() });
            }
        }
    }

    let d = spec.dims.len();
    for c in &model.components {
        let Some(rec) = spec.records.get(&c.name) else {
            out.push(Violation::MissingIsolation(c.name.clone()));
            continue;
        };
        if rec.resources.len() != d {
            out.push(Violation::ResourceDimension {
                component: c.name.clone(),
                expected: d,
                found: rec.resources.len(),
            });
        }
        for (dim, &v) in spec.dims.iter().zip(&rec.resources) {
            if !v.is_finite() || v < 0.0 {
                out.push(Violation::InvalidResource { component: c.name.clone(), dim: dim.clone(), value: v });
            }
        }
        if rec.isolation_level > 1 {
            out.push(Violation::IsolationLevel { component: c.name.clone(), value: rec.isolation_level });
        }
        if rec.mitigation_policy > 1 {
            out.push(Violation::MitigationPolicy { component: c.name.clone(), value: rec.mitigation_policy });
        }
    }
    for name in spec.records.keys() {
        if model.component(name).is_none() {
            out.push(Violation::UnknownIsolationComponent(name.clone()));
        }
    }

    if host.len() != d {
        out.push(Violation::HostDimension { expected: d, found: host.len() });
    } else {
        for ((dim, demand), &available) in spec.dims.iter().zip(spec.total_demand()).zip(host) {
            if demand > available {
                out.push(Violation::ResourceOvercommit { dim: dim.clone(), demand, available });
            }
        }
    }
    out
}

fn validate_component(c: &ComponentSpec, out: &mut Vec<Violation>) {
    for (ports, kind) in [(&c.provided, PortKind::Provided), (&c.required, PortKind::Required)] {
        for p in ports {
            if p.methods.is_empty() {
                out.push(Violation::EmptyPort { component: c.name.clone(), port: p.name.clone() });
            }
            if p.kind != kind {
                out.push(Violation::PortKindMismatch { component: c.name.clone(), port: p.name.clone() });
            }
        }
    }
    let total = c.total_ports();
    for (a, b) in &c.wiring {
        if a == b {
            out.push(Violation::ReflexiveWiring { component: c.name.clone(), port: a.clone() });
        }
        for end in [a, b] {
            if !total.contains(end) {
                out.push(Violation::UnknownWiringEndpoint { component: c.name.clone(), port: end.clone() });
            }
        }
    }
    for sc in &c.subcomponents {
        validate_component(sc, out);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(cores: f64, mem: f64) -> IsolationRecord {
        IsolationRecord {
            resources: vec![cores, mem],
            isolation_level: 0,
            mitigation_policy: 0,
            mitigation_budget: 1,
            shared_group: None,
        }
    }

    #[test]
    fn empty_model_is_valid_for_any_host() {
        let spec = IsolationSpec::with_dims(["cores", "memory_mb"]);
        assert!(validate_model(&ComponentModel::default(), &spec, &[0.0, 0.0]).is_empty());
    }

    #[test]
    fn overcommitted_cores_name_the_resource_sum() {
        let model = ComponentModel {
            components: vec![ComponentSpec::atomic("a"), ComponentSpec::atomic("b")],
            connections: vec![],
        };
        let mut spec = IsolationSpec::with_dims(["cores", "memory_mb"]);
        spec.records.insert("a".into(), record(8.0, 1024.0));
        spec.records.insert("b".into(), record(8.0, 1024.0));
        let v = validate_model(&model, &spec, &[12.0, 32768.0]);
        assert_eq!(v.len(), 1);
        assert!(
            matches!(&v[0], Violation::ResourceOvercommit { dim, demand, .. } if dim == "cores" && *demand == 16.0)
        );
        assert!(v[0].to_string().contains("resource sum `cores`"));
    }

    #[test]
    fn shared_pool_counts_once() {
        let mut spec = IsolationSpec::with_dims(["cores", "memory_mb"]);
        spec.shareable.insert("cores".into());
        for n in ["a", "b", "c"] {
            let mut r = record(4.0, 2048.0);
            r.shared_group = Some("pool".into());
            spec.records.insert(n.into(), r);
        }
        assert_eq!(spec.total_demand(), vec![4.0, 6144.0]);
    }

    #[test]
    fn reflexive_and_dangling_wiring_are_reported() {
        let port = Port {
            name: "out".into(),
            methods: ["pose".to_string()].into(),
            kind: PortKind::Provided,
            mode: PortMode::Asynchronous,
        };
        let here = PortRef { component: "loc".into(), port: "out".into() };
        let nowhere = PortRef { component: "loc".into(), port: "missing".into() };
        let c = ComponentSpec {
            name: "loc".into(),
            provided: vec![port],
            wiring: vec![(here.clone(), here.clone()), (here, nowhere)],
            ..Default::default()
        };
        let mut v = Vec::new();
        validate_component(&c, &mut v);
        assert_eq!(v.len(), 2);
        assert!(matches!(v[0], Violation::ReflexiveWiring { .. }));
        assert!(matches!(v[1], Violation::UnknownWiringEndpoint { .. }));
    }

    #[test]
    fn disjoint_port_methods_are_incompatible() {
        let mut a = ComponentSpec::atomic("a");
        a.provided.push(Port {
            name: "p".into(),
            methods: ["x".to_string()].into(),
            kind: PortKind::Provided,
            mode: PortMode::Asynchronous,
        });
        let mut b = ComponentSpec::atomic("b");
        b.required.push(Port {
            name: "r".into(),
            methods: ["y".to_string()].into(),
            kind: PortKind::Required,
            mode: PortMode::Synchronous,
        });
        let model = ComponentModel { components: vec![a, b], connections: vec![("a".into(), "b".into())] };
        let mut spec = IsolationSpec::with_dims(["cores"]);
        spec.records.insert("a".into(), IsolationRecord { resources: vec![1.0], ..record(0.0, 0.0) });
        spec.records.insert("b".into(), IsolationRecord { resources: vec![1.0], ..record(0.0, 0.0) });
        let v = validate_model(&model, &spec, &[4.0]);
        assert_eq!(v, vec![Violation::IncompatiblePorts { from: "a".into(), to: "b".into() }]);
    }

    #[test]
    fn unknown_connection_endpoint_and_bad_policy() {
        let model = ComponentModel {
            components: vec![ComponentSpec::atomic("a")],
            connections: vec![("a".into(), "ghost".into())],
        };
        let mut spec = IsolationSpec::with_dims(["cores", "memory_mb"]);
        let mut r = record(1.0, 1.0);
        r.mitigation_policy = 2;
        spec.records.insert("a".into(), r);
        let v = validate_model(&model, &spec, &[4.0, 4.0]);
        assert!(v
            .iter()
            .any(|x| matches!(x, Violation::UnknownConnectionEndpoint { missing, .. } if missing == "ghost")));
        assert!(v.iter().any(|x| matches!(x, Violation::MitigationPolicy { value: 2, .. })));
    }
}
