//! Versioned three-level topic hierarchy.

use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Annotation, NodeId};

const SEED_TAXONOMY: &str = include_str!("../data/taxonomy.v1.toml");

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Level {
    Category,
    Topic,
    Subtopic,
}

impl Level {
    pub fn depth(self) -> usize {
        match self {
            Self::Category => 1,
            Self::Topic => 2,
            Self::Subtopic => 3,
        }
    }

    pub fn child(self) -> Option<Self> {
        match self {
            Self::Category => Some(Self::Topic),
            Self::Topic => Some(Self::Subtopic),
            Self::Subtopic => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaxonomyNode {
    pub id: NodeId,
    pub name: String,
    pub level: Level,
    #[serde(default, rename = "parent", alias = "parent_id", skip_serializing_if = "Option::is_none")]
    pub parent_id: Option<NodeId>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TaxonomyError {
    #[error("duplicate node id `{0}`")]
    DuplicateId(NodeId),
    #[error("duplicate sibling name `{name}` under `{parent}`")]
    DuplicateSiblingName { parent: String, name: String },
    #[error("node `{node}` references missing parent `{parent}`")]
    MissingParent { node: NodeId, parent: NodeId },
    #[error("node `{0}` level does not match its parent chain")]
    LevelMismatch(NodeId),
    #[error("unknown node: {0}")]
    UnknownNode(String),
    #[error("node path must have 1 to 3 segments, got {0}")]
    BadPathLength(usize),
    #[error("taxonomy version {got} does not follow {current}")]
    NonMonotonicVersion { current: u32, got: u32 },
    #[error("node `{0}` removed without a tombstone")]
    MissingTombstone(NodeId),
    #[error("taxonomy parse error: {0}")]
    Parse(String),
}

#[derive(Serialize, Deserialize)]
struct RawTaxonomy {
    version: u32,
    #[serde(default)]
    tombstones: Vec<NodeId>,
    #[serde(default, rename = "node")]
    nodes: Vec<TaxonomyNode>,
}

/// Immutable snapshot of one taxonomy version.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "RawTaxonomy", into = "RawTaxonomy")]
pub struct Taxonomy {
    version: u32,
    nodes: Vec<TaxonomyNode>,
    tombstones: Vec<NodeId>,
    index: HashMap<NodeId, usize>,
}

impl PartialEq for Taxonomy {
    fn eq(&self, other: &Self) -> bool {
        self.version == other.version
            && self.nodes == other.nodes
            && self.tombstones == other.tombstones
    }
}

impl Eq for Taxonomy {}

impl TryFrom<RawTaxonomy> for Taxonomy {
    type Error = TaxonomyError;

    fn try_from(raw: RawTaxonomy) -> Result<Self, Self::Error> {
        Taxonomy::new(raw.version, raw.nodes, raw.tombstones)
    }
}

impl From<Taxonomy> for RawTaxonomy {
    fn from(t: Taxonomy) -> Self {
        RawTaxonomy {
            version: t.version,
            tombstones: t.tombstones,
            nodes: t.nodes,
        }
    }
}

impl Taxonomy {
    pub fn new(
        version: u32,
        nodes: Vec<TaxonomyNode>,
        tombstones: Vec<NodeId>,
    ) -> Result<Self, TaxonomyError> {
        let mut index = HashMap::with_capacity(nodes.len());
        for (i, n) in nodes.iter().enumerate() {
            if index.insert(n.id.clone(), i).is_some() {
                return Err(TaxonomyError::DuplicateId(n.id.clone()));
            }
        }
        let mut sibling_names = BTreeSet::new();
        for n in &nodes {
            match (&n.parent_id, n.level) {
                (None, Level::Category) => {}
                (None, _) | (Some(_), Level::Category) => {
                    return Err(TaxonomyError::LevelMismatch(n.id.clone()))
                }
                (Some(p), level) => {
                    let parent = index
                        .get(p)
                        .map(|&i| &nodes[i])
                        .ok_or_else(|| TaxonomyError::MissingParent {
                            node: n.id.clone(),
                            parent: p.clone(),
                        })?;
                    if parent.level.child() != Some(level) {
                        return Err(TaxonomyError::LevelMismatch(n.id.clone()));
                    }
                }
            }
            let parent_key = n.parent_id.as_ref().map(|p| p.0.clone()).unwrap_or_default();
            if !sibling_names.insert((parent_key.clone(), n.name.to_lowercase())) {
                return Err(TaxonomyError::DuplicateSiblingName {
                    parent: parent_key,
                    name: n.name.clone(),
                });
            }
        }
        Ok(Self {
            version,
            nodes,
            tombstones,
            index,
        })
    }

    /// The bundled seed hierarchy (version 1).
    pub fn seed() -> Self {
        Self::from_toml(SEED_TAXONOMY).expect("bundled seed taxonomy is valid")
    }

    pub fn from_toml(text: &str) -> Result<Self, TaxonomyError> {
        toml::from_str(text).map_err(|e| TaxonomyError::Parse(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("taxonomy serializes")
    }

    pub fn load(path: &Path) -> Result<Self, TaxonomyError> {
        let text = std::fs::read_to_string(path).map_err(|e| TaxonomyError::Parse(e.to_string()))?;
        Self::from_toml(&text)
    }

    /// File name used for a version on disk, e.g. `taxonomy.v3.toml`.
    pub fn file_name(version: u32) -> String {
        format!("taxonomy.v{version}.toml")
    }

    pub fn version(&self) -> u32 {
        self.version
    }

    pub fn nodes(&self) -> &[TaxonomyNode] {
        &self.nodes
    }

    pub fn tombstones(&self) -> &[NodeId] {
        &self.tombstones
    }

    pub fn node(&self, id: &NodeId) -> Option<&TaxonomyNode> {
        self.index.get(id).map(|&i| &self.nodes[i])
    }

    pub fn contains(&self, id: &NodeId) -> bool {
        self.index.contains_key(id)
    }

    pub fn categories(&self) -> impl Iterator<Item = &TaxonomyNode> {
        self.nodes.iter().filter(|n| n.level == Level::Category)
    }

    pub fn children<'a>(&'a self, id: &NodeId) -> impl Iterator<Item = &'a TaxonomyNode> + 'a {
        let id = id.clone();
        self.nodes
            .iter()
            .filter(move |n| n.parent_id.as_ref() == Some(&id))
    }

    /// Children of `parent` (or the categories when `None`) that lead to at
    /// least one subtopic, i.e. can terminate a full classification path.
    pub fn classifiable_children(&self, parent: Option<&NodeId>) -> Vec<&TaxonomyNode> {
        let candidates: Vec<&TaxonomyNode> = match parent {
            None => self.categories().collect(),
            Some(p) => self.children(p).collect(),
        };
        candidates
            .into_iter()
            .filter(|n| self.reaches_subtopic(&n.id))
            .collect()
    }

    fn reaches_subtopic(&self, id: &NodeId) -> bool {
        match self.node(id).map(|n| n.level) {
            Some(Level::Subtopic) => true,
            Some(_) => self.children(id).any(|c| self.reaches_subtopic(&c.id)),
            None => false,
        }
    }

    /// Ancestors from the category down to the node itself.
    pub fn path_to(&self, id: &NodeId) -> Option<Vec<&TaxonomyNode>> {
        let mut chain = Vec::with_capacity(3);
        let mut cur = self.node(id)?;
        loop {
            chain.push(cur);
            match &cur.parent_id {
                Some(p) => cur = self.node(p)?,
                None => break,
            }
        }
        chain.reverse();
        Some(chain)
    }

    /// Deepest node matching a chain of names, compared case-insensitively.
    pub fn resolve_path(&self, names: &[&str]) -> Result<&TaxonomyNode, TaxonomyError> {
        if names.is_empty() || names.len() > 3 {
            return Err(TaxonomyError::BadPathLength(names.len()));
        }
        let mut parent: Option<&NodeId> = None;
        let mut found: Option<&TaxonomyNode> = None;
        for (depth, name) in names.iter().enumerate() {
            let want = name.trim().to_lowercase();
            let hit = self.nodes.iter().find(|n| {
                n.parent_id.as_ref() == parent && n.name.to_lowercase() == want
            });
            match hit {
                Some(n) => {
                    found = Some(n);
                    parent = Some(&n.id);
                }
                None => {
                    return Err(TaxonomyError::UnknownNode(names[..=depth].join(" > ")));
                }
            }
        }
        Ok(found.expect("non-empty path"))
    }

    /// Whether `id` equals `ancestor` or lies beneath it.
    pub fn is_within(&self, id: &NodeId, ancestor: &NodeId) -> bool {
        self.path_to(id)
            .map(|p| p.iter().any(|n| &n.id == ancestor))
            .unwrap_or(false)
    }

    /// Checks that `next` can follow `self`: higher version, and every node
    /// of `self` either survives or is tombstoned.
    pub fn check_successor(&self, next: &Taxonomy) -> Result<(), TaxonomyError> {
        if next.version <= self.version {
            return Err(TaxonomyError::NonMonotonicVersion {
                current: self.version,
                got: next.version,
            });
        }
        for n in &self.nodes {
            if !next.contains(&n.id) && !next.tombstones.contains(&n.id) {
                return Err(TaxonomyError::MissingTombstone(n.id.clone()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    UnknownNode { field: String, id: NodeId },
    WrongLevel { field: String, id: NodeId },
    BrokenChain { child: NodeId, expected_parent: NodeId },
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("annotation uses taxonomy v{annotation} but v{taxonomy} was supplied")]
pub struct TaxonomyVersionMismatch {
    pub annotation: u32,
    pub taxonomy: u32,
}

/// Checks the annotation's node chain against the taxonomy it names.
/// Scale and article-type labels are closed enums and always in range.
pub fn validate_annotation(
    a: &Annotation,
    t: &Taxonomy,
) -> Result<Vec<Violation>, TaxonomyVersionMismatch> {
    if a.taxonomy_version != t.version() {
        return Err(TaxonomyVersionMismatch {
            annotation: a.taxonomy_version,
            taxonomy: t.version(),
        });
    }
    let mut out = Vec::new();
    let fields = [
        ("category_id", &a.category_id, Level::Category),
        ("topic_id", &a.topic_id, Level::Topic),
        ("subtopic_id", &a.subtopic_id, Level::Subtopic),
    ];
    for (field, id, level) in fields {
        match t.node(id) {
            None => out.push(Violation::UnknownNode {
                field: field.into(),
                id: id.clone(),
            }),
            Some(n) if n.level != level => out.push(Violation::WrongLevel {
                field: field.into(),
                id: id.clone(),
            }),
            Some(_) => {}
        }
    }
    if !out.is_empty() {
        return Ok(out);
    }
    for (child, parent) in [(&a.topic_id, &a.category_id), (&a.subtopic_id, &a.topic_id)] {
        let actual = t.node(child).and_then(|n| n.parent_id.as_ref());
        if actual != Some(parent) {
            out.push(Violation::BrokenChain {
                child: child.clone(),
                expected_parent: parent.clone(),
            });
        }
    }
    Ok(out)
}
