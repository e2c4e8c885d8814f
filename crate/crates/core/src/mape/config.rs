use std::fmt::Write as _;

use quick_xml::escape::escape;
use quick_xml::events::{BytesStart, Event};
use quick_xml::{Reader, XmlVersion};
use thiserror::Error;

/// The main partition of a component (always id 0).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MainNode {
    pub name: String,
    pub partition_kind: String,
    pub address: String,
}

/// A backup partition.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubNode {
    pub id: u32,
    pub name: String,
    pub launch_file_path: String,
    pub address: String,
    pub partition_kind: String,
}

/// Adaptation settings of one component: its main node and ordered backups.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AdaptationConfig {
    pub node: MainNode,
    pub sub_nodes: Vec<SubNode>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ConfigError {
    #[error("xml: {0}")]
    Xml(String),
    #[error("<{element}>: unknown attribute `{attr}`")]
    UnknownAttribute { element: String, attr: String },
    #[error("<{element}>: missing attribute `{attr}`")]
    MissingAttribute { element: String, attr: &'static str },
    #[error("unexpected element <{0}>")]
    UnexpectedElement(String),
    #[error("unexpected text `{0}`")]
    UnexpectedText(String),
    #[error("main node id must be 0, found `{0}`")]
    MainId(String),
    #[error("sub-node `{name}`: id `{found}`, expected {expected}")]
    SubNodeId { name: String, found: String, expected: u32 },
    #[error("no <node> element")]
    MissingNode,
}

impl AdaptationConfig {
    /// A component with no backups.
    pub fn single(name: impl Into<String>, partition_kind: impl Into<String>, address: impl Into<String>) -> Self {
        AdaptationConfig {
            node: MainNode { name: name.into(), partition_kind: partition_kind.into(), address: address.into() },
            sub_nodes: Vec::new(),
        }
    }

    /// Name of the node with `id` (0 = main).
    pub fn name_of(&self, id: u32) -> Option<&str> {
        if id == 0 {
            Some(&self.node.name)
        } else {
            self.sub_nodes.iter().find(|s| s.id == id).map(|s| s.name.as_str())
        }
    }

    pub fn sub_node(&self, id: u32) -> Option<&SubNode> {
        self.sub_nodes.iter().find(|s| s.id == id)
    }

    pub fn parse(xml: &str) -> Result<Self, ConfigError> {
        let mut reader = Reader::from_str(xml);
        let mut node: Option<MainNode> = None;
        let mut sub_nodes = Vec::new();
        let mut inside = false;
        loop {
            let ev = reader.read_event().map_err(|e| ConfigError::Xml(e.to_string()))?;
            let (e, opens) = match ev {
                Event::Start(e) => (e, true),
                Event::Empty(e) => (e, false),
                Event::End(e) => {
                    match e.name().into_inner() {
                        "node" if inside => inside = false,
                        "sub-node" if inside => {}
                        other => return Err(ConfigError::UnexpectedElement(other.to_string())),
                    }
                    continue;
                }
                Event::Text(t) => {
                    let s = t.into_inner().into_owned();
                    if !s.trim().is_empty() {
                        return Err(ConfigError::UnexpectedText(s.trim().to_string()));
                    }
                    continue;
                }
                Event::Eof => break,
                _ => continue,
            };
            match e.name().into_inner() {
                "node" if node.is_none() => {
                    let a = attrs(&e, "node", &["id", "name", "kind", "address"])?;
                    if a[0] != "0" {
                        return Err(ConfigError::MainId(a[0].clone()));
                    }
                    node = Some(MainNode { name: a[1].clone(), partition_kind: a[2].clone(), address: a[3].clone() });
                    inside = opens;
                }
                "sub-node" if inside => {
                    let a = attrs(&e, "sub-node", &["id", "name", "launch_file_path", "address", "kind"])?;
                    let expected = sub_nodes.len() as u32 + 1;
                    if a[0].parse::<u32>().ok() != Some(expected) {
                        return Err(ConfigError::SubNodeId { name: a[1].clone(), found: a[0].clone(), expected });
                    }
                    sub_nodes.push(SubNode {
                        id: expected,
                        name: a[1].clone(),
                        launch_file_path: a[2].clone(),
                        address: a[3].clone(),
                        partition_kind: a[4].clone(),
                    });
                }
                other => return Err(ConfigError::UnexpectedElement(other.to_string())),
            }
        }
        let node = node.ok_or(ConfigError::MissingNode)?;
        Ok(AdaptationConfig { node, sub_nodes })
    }

    pub fn to_xml(&self) -> String {
        let mut out = String::from("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n");
        let n = &self.node;
        let _ = write!(
            out,
            "<node id=\"0\" name=\"{}\" kind=\"{}\" address=\"{}\"",
            escape(n.name.as_str()),
            escape(n.partition_kind.as_str()),
            escape(n.address.as_str())
        );
        if self.sub_nodes.is_empty() {
            out.push_str("/>\n");
            return out;
        }
        out.push_str(">\n");
        for s in &self.sub_nodes {
            let _ = writeln!(
                out,
                "  <sub-node id=\"{}\" name=\"{}\" launch_file_path=\"{}\" address=\"{}\" kind=\"{}\"/>",
                s.id,
                escape(s.name.as_str()),
                escape(s.launch_file_path.as_str()),
                escape(s.address.as_str()),
                escape(s.partition_kind.as_str())
            );
        }
        out.push_str("</node>\n");
        out
    }
}

/// Values of exactly the `allowed` attributes, in that order.
fn attrs(e: &BytesStart<'_>, element: &str, allowed: &[&'static str]) -> Result<Vec<String>, ConfigError> {
    let mut values: Vec<Option<String>> = vec![None; allowed.len()];
    for a in e.attributes() {
        let a = a.map_err(|err| ConfigError::Xml(err.to_string()))?;
        let key = a.key.into_inner().to_string();
        let Some(i) = allowed.iter().position(|k| *k == key) else {
            return Err(ConfigError::UnknownAttribute { element: element.into(), attr: key });
        };
        let v = a.normalized_value(XmlVersion::Implicit1_0).map_err(|err| ConfigError::Xml(err.to_string()))?;
        values[i] = Some(v.into_owned());
    }
    values
        .into_iter()
        .zip(allowed)
        .map(|(v, k)| v.ok_or(ConfigError::MissingAttribute { element: element.into(), attr: k }))
        .collect()
}
