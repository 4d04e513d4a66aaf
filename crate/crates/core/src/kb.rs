//! Knowledge-base entities, JSON ingestion and the directed attribute graph.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Read;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum KbError {
    #[error("malformed knowledge base: {0}")]
    Malformed(#[from] serde_json::Error),
    #[error("i/o error reading knowledge base: {0}")]
    Io(#[from] std::io::Error),
    #[error("duplicate entity name {name:?} at position {position}")]
    DuplicateEntity { name: String, position: usize },
    #[error("entity {name:?} at position {position}: image feature {image} has dimension {found}, expected {expected}")]
    FeatureDim {
        name: String,
        position: usize,
        image: usize,
        found: usize,
        expected: usize,
    },
    #[error("entity at position {position} ({name:?}): {reason}")]
    Invalid { name: String, position: usize, reason: String },
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct AttributeValuePair {
    #[serde(rename = "type")]
    pub attribute_type: String,
    pub value: String,
}

impl AttributeValuePair {
    pub fn new(attribute_type: impl Into<String>, value: impl Into<String>) -> Self {
        Self { attribute_type: attribute_type.into(), value: value.into() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Entity {
    pub name: String,
    #[serde(default)]
    pub attributes: Vec<AttributeValuePair>,
    #[serde(default)]
    pub image_features: Vec<Vec<f64>>,
}

impl Entity {
    pub fn new(name: impl Into<String>, attributes: Vec<AttributeValuePair>) -> Self {
        Self { name: name.into(), attributes, image_features: Vec::new() }
    }

    pub fn with_images(mut self, image_features: Vec<Vec<f64>>) -> Self {
        self.image_features = image_features;
        self
    }
}

/// Entities keyed by name. `feature_dim` is 0 when no entity carries images.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct KnowledgeBase {
    entities: BTreeMap<String, Entity>,
    feature_dim: usize,
}

impl KnowledgeBase {
    /// Validates and indexes entities. Names are trimmed; the first image vector fixes the
    /// feature dimension for the whole base.
    pub fn from_entities(entities: Vec<Entity>) -> Result<Self, KbError> {
        let mut map = BTreeMap::new();
        let mut feature_dim = None;
        for (position, mut entity) in entities.into_iter().enumerate() {
            entity.name = entity.name.trim().to_string();
            if entity.name.is_empty() {
                return Err(KbError::Invalid { name: entity.name, position, reason: "empty name".into() });
            }
            for pair in &mut entity.attributes {
                pair.attribute_type = pair.attribute_type.trim().to_string();
                pair.value = pair.value.trim().to_string();
                if pair.attribute_type.is_empty() || pair.value.is_empty() {
                    return Err(KbError::Invalid {
                        name: entity.name.clone(),
                        position,
                        reason: "attribute type and value must be non-empty".into(),
                    });
                }
            }
            for (image, feature) in entity.image_features.iter().enumerate() {
                let expected = *feature_dim.get_or_insert(feature.len());
                if feature.len() != expected || expected == 0 {
                    return Err(KbError::FeatureDim {
                        name: entity.name.clone(),
                        position,
                        image,
                        found: feature.len(),
                        expected,
                    });
                }
            }
            if map.contains_key(&entity.name) {
                return Err(KbError::DuplicateEntity { name: entity.name, position });
            }
            map.insert(entity.name.clone(), entity);
        }
        Ok(Self { entities: map, feature_dim: feature_dim.unwrap_or(0) })
    }

    pub fn len(&self) -> usize {
        self.entities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entities.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn get(&self, name: &str) -> Option<&Entity> {
        self.entities.get(name.trim())
    }

    /// Entities in name order.
    pub fn entities(&self) -> impl Iterator<Item = &Entity> {
        self.entities.values()
    }

    pub fn mean_attributes(&self) -> f64 {
        if self.entities.is_empty() {
            return 0.0;
        }
        self.entities.values().map(|e| e.attributes.len()).sum::<usize>() as f64 / self.entities.len() as f64
    }

    pub fn to_json(&self) -> String {
        let entities: Vec<&Entity> = self.entities.values().collect();
        serde_json::to_string_pretty(&entities).expect("entities serialize")
    }
}

/// Reads a knowledge base from its JSON document: an array of
/// `{"name", "attributes": [{"type", "value"}], "image_features": [[..]]}`.
pub fn parse_kb<R: Read>(source: R) -> Result<KnowledgeBase, KbError> {
    let entities: Vec<Entity> = serde_json::from_reader(source)?;
    KnowledgeBase::from_entities(entities)
}

/// A directed `(head, label, tail)` edge.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Triplet {
    pub head: String,
    pub label: String,
    pub tail: String,
}

/// Entity names and attribute values as nodes, attribute types as edge labels.
/// A value spelled exactly like an entity name is that entity's node.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct KnowledgeGraph {
    nodes: BTreeSet<String>,
    edges: BTreeSet<Triplet>,
    out: BTreeMap<String, Vec<(String, String)>>,
}

impl KnowledgeGraph {
    pub fn from_triplets(triplets: impl IntoIterator<Item = Triplet>) -> Self {
        let mut g = Self::default();
        for t in triplets {
            g.insert(t);
        }
        g
    }

    fn insert(&mut self, t: Triplet) {
        let t = Triplet {
            head: t.head.trim().to_string(),
            label: t.label.trim().to_string(),
            tail: t.tail.trim().to_string(),
        };
        if self.edges.contains(&t) {
            return;
        }
        self.nodes.insert(t.head.clone());
        self.nodes.insert(t.tail.clone());
        let adj = self.out.entry(t.head.clone()).or_default();
        let pos = adj.binary_search(&(t.label.clone(), t.tail.clone())).unwrap_or_else(|p| p);
        adj.insert(pos, (t.label.clone(), t.tail.clone()));
        self.edges.insert(t);
    }

    pub fn nodes(&self) -> &BTreeSet<String> {
        &self.nodes
    }

    pub fn edges(&self) -> &BTreeSet<Triplet> {
        &self.edges
    }

    pub fn contains_node(&self, node: &str) -> bool {
        self.nodes.contains(node)
    }

    /// Outgoing `(label, tail)` pairs of a node, sorted.
    pub fn out_edges(&self, node: &str) -> &[(String, String)] {
        self.out.get(node).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn out_degree(&self, node: &str) -> usize {
        self.out_edges(node).len()
    }
}

/// One edge per distinct `(entity, attribute type, value)`.
pub fn build_graph(kb: &KnowledgeBase) -> KnowledgeGraph {
    KnowledgeGraph::from_triplets(kb.entities().flat_map(|e| {
        e.attributes.iter().map(move |p| Triplet {
            head: e.name.clone(),
            label: p.attribute_type.clone(),
            tail: p.value.clone(),
        })
    }))
}
