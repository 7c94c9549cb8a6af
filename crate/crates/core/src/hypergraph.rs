//! Generalized hypergraph shared by the concept and instance layers.
//!
//! A [`Hypergraph`] keeps an entity table, an edge table, and an incidence
//! index mapping every entity to the edges it participates in. The incidence
//! index is always the exact inverse of edge membership.
//!
//! Ids are sequence-derived at insertion and zero-padded, so lexicographic
//! order equals insertion order. The id prefix encodes the layer, which lets
//! provenance lists be classified without the graph at hand.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::EmbeddingVector;
use crate::text::collapse_whitespace;

const ID_WIDTH: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layer {
    Concept,
    Instance,
}

impl Layer {
    fn entity_prefix(self) -> &'static str {
        match self {
            Layer::Concept => "CE",
            Layer::Instance => "IE",
        }
    }

    fn edge_prefix(self) -> &'static str {
        match self {
            Layer::Concept => "CH",
            Layer::Instance => "IH",
        }
    }

    /// Classifies a retrieved id by its prefix.
    pub fn of_id(id: &str) -> Option<Layer> {
        if id.starts_with("CE") || id.starts_with("CH") {
            Some(Layer::Concept)
        } else if id.starts_with("IE") || id.starts_with("IH") {
            Some(Layer::Instance)
        } else {
            None
        }
    }
}

impl fmt::Display for Layer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Layer::Concept => f.write_str("concept"),
            Layer::Instance => f.write_str("instance"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EntityId(pub String);

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EdgeId(pub String);

impl EntityId {
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl EdgeId {
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for EntityId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl fmt::Display for EdgeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EntityKind {
    Concept,
    FieldValue,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OrderClass {
    /// Pairwise relation, exactly two members.
    Low,
    /// N-ary relation, three or more members.
    High,
    /// Serialized case record, one or more members.
    Case,
}

impl OrderClass {
    fn accepts(self, n: usize) -> bool {
        match self {
            OrderClass::Low => n == 2,
            OrderClass::High => n >= 3,
            OrderClass::Case => n >= 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Entity {
    pub id: EntityId,
    pub name: String,
    pub kind: EntityKind,
    pub description: String,
    pub source_refs: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding: Option<EmbeddingVector>,
}

impl Entity {
    /// Text used for embedding and lexical scoring: name followed by description.
    pub fn retrieval_text(&self) -> String {
        if self.description.is_empty() {
            self.name.clone()
        } else {
            format!("{} {}", self.name, self.description)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperedge {
    pub id: EdgeId,
    pub members: Vec<EntityId>,
    pub order_class: OrderClass,
    pub statement: String,
    pub source_ref: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding: Option<EmbeddingVector>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ConceptSubgraph {
    pub entities: Vec<Entity>,
    pub edges: Vec<Hyperedge>,
}

impl ConceptSubgraph {
    pub fn is_empty(&self) -> bool {
        self.entities.is_empty() && self.edges.is_empty()
    }

    /// Merges `other` into `self`, skipping entities and edges already present.
    pub fn absorb(&mut self, other: ConceptSubgraph) {
        for e in other.entities {
            if !self.entities.iter().any(|x| x.id == e.id) {
                self.entities.push(e);
            }
        }
        for e in other.edges {
            if !self.edges.iter().any(|x| x.id == e.id) {
                self.edges.push(e);
            }
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum GraphError {
    #[error("entity name is empty after normalization")]
    EmptyName,
    #[error("field-value entity name {0:?} is not of the form KEY=value")]
    MalformedFieldValue(String),
    #[error("hyperedge statement is empty")]
    EmptyStatement,
    #[error("unknown entity id {0}")]
    UnknownEntity(EntityId),
    #[error("unknown edge id {0}")]
    UnknownEdge(EdgeId),
    #[error("{class:?} edge cannot have {count} members")]
    MemberCount { class: OrderClass, count: usize },
    #[error("edge lists member {0} more than once")]
    DuplicateMember(EntityId),
    #[error("edge {edge} references unknown entity {entity}")]
    DanglingMember { edge: EdgeId, entity: EntityId },
    #[error("duplicate id {0}")]
    DuplicateId(String),
    #[error("id {id} does not belong to the {layer} layer")]
    ForeignId { id: String, layer: Layer },
    #[error("max_edges must be at least 1")]
    ZeroMaxEdges,
    #[error("incidence index disagrees with edge membership: {0}")]
    Incidence(String),
}

/// Dedup key normalization: case-fold, trim, collapse internal whitespace.
pub fn normalize_name(name: &str) -> String {
    collapse_whitespace(&name.to_lowercase())
}

#[derive(Debug, Clone)]
pub struct Hypergraph {
    layer: Layer,
    entities: BTreeMap<EntityId, Entity>,
    edges: BTreeMap<EdgeId, Hyperedge>,
    incidence: BTreeMap<EntityId, BTreeSet<EdgeId>>,
    by_name: HashMap<(String, EntityKind), EntityId>,
    next_entity: u64,
    next_edge: u64,
}

impl PartialEq for Hypergraph {
    fn eq(&self, other: &Self) -> bool {
        self.layer == other.layer && self.entities == other.entities && self.edges == other.edges
    }
}

impl Hypergraph {
    pub fn new(layer: Layer) -> Self {
        Hypergraph {
            layer,
            entities: BTreeMap::new(),
            edges: BTreeMap::new(),
            incidence: BTreeMap::new(),
            by_name: HashMap::new(),
            next_entity: 1,
            next_edge: 1,
        }
    }

    /// Rebuilds a graph from stored parts, recomputing the incidence index.
    ///
    /// Fails on dangling members, duplicate ids, ids from the other layer, or
    /// any entity/edge that violates its invariants.
    pub fn from_parts(
        layer: Layer,
        entities: Vec<Entity>,
        edges: Vec<Hyperedge>,
    ) -> Result<Self, GraphError> {
        let mut g = Hypergraph::new(layer);
        for e in entities {
            g.check_prefix(e.id.as_str(), layer.entity_prefix())?;
            validate_entity_name(&e.name, e.kind)?;
            let key = (normalize_name(&e.name), e.kind);
            if g.by_name.contains_key(&key) || g.entities.contains_key(&e.id) {
                return Err(GraphError::DuplicateId(e.id.0.clone()));
            }
            g.next_entity = g.next_entity.max(id_seq(e.id.as_str()) + 1);
            g.by_name.insert(key, e.id.clone());
            g.incidence.insert(e.id.clone(), BTreeSet::new());
            g.entities.insert(e.id.clone(), e);
        }
        for e in edges {
            g.check_prefix(e.id.as_str(), layer.edge_prefix())?;
            if g.edges.contains_key(&e.id) {
                return Err(GraphError::DuplicateId(e.id.0.clone()));
            }
            for m in &e.members {
                if !g.entities.contains_key(m) {
                    return Err(GraphError::DanglingMember {
                        edge: e.id.clone(),
                        entity: m.clone(),
                    });
                }
            }
            validate_edge_shape(&e.members, e.order_class, &e.statement)?;
            for m in &e.members {
                g.incidence.get_mut(m).expect("checked above").insert(e.id.clone());
            }
            g.next_edge = g.next_edge.max(id_seq(e.id.as_str()) + 1);
            g.edges.insert(e.id.clone(), e);
        }
        g.check_invariants()?;
        Ok(g)
    }

    fn check_prefix(&self, id: &str, prefix: &str) -> Result<(), GraphError> {
        if id.starts_with(prefix) {
            Ok(())
        } else {
            Err(GraphError::ForeignId {
                id: id.to_string(),
                layer: self.layer,
            })
        }
    }

    pub fn layer(&self) -> Layer {
        self.layer
    }

    pub fn entity_count(&self) -> usize {
        self.entities.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entities.is_empty() && self.edges.is_empty()
    }

    /// Entities in ascending id order.
    pub fn entities(&self) -> impl Iterator<Item = &Entity> {
        self.entities.values()
    }

    /// Edges in ascending id order.
    pub fn edges(&self) -> impl Iterator<Item = &Hyperedge> {
        self.edges.values()
    }

    pub fn entity(&self, id: &EntityId) -> Option<&Entity> {
        self.entities.get(id)
    }

    pub fn edge(&self, id: &EdgeId) -> Option<&Hyperedge> {
        self.edges.get(id)
    }

    pub fn incident_edges(&self, id: &EntityId) -> Option<&BTreeSet<EdgeId>> {
        self.incidence.get(id)
    }

    pub fn find_entity(&self, name: &str, kind: EntityKind) -> Option<&EntityId> {
        self.by_name.get(&(normalize_name(name), kind))
    }

    /// Adds an entity, or merges into the existing one with the same
    /// normalized name and kind.
    pub fn add_entity(
        &mut self,
        name: &str,
        kind: EntityKind,
        description: &str,
        source_ref: &str,
    ) -> Result<EntityId, GraphError> {
        validate_entity_name(name, kind)?;
        let key = (normalize_name(name), kind);
        let description = collapse_whitespace(description);
        if let Some(id) = self.by_name.get(&key) {
            let entity = self.entities.get_mut(id).expect("name index is consistent");
            merge_description(&mut entity.description, &description);
            entity.source_refs.push(source_ref.to_string());
            return Ok(id.clone());
        }
        let id = EntityId(format!(
            "{}{:0width$}",
            self.layer.entity_prefix(),
            self.next_entity,
            width = ID_WIDTH
        ));
        self.next_entity += 1;
        self.entities.insert(
            id.clone(),
            Entity {
                id: id.clone(),
                name: collapse_whitespace(name),
                kind,
                description,
                source_refs: vec![source_ref.to_string()],
                embedding: None,
            },
        );
        self.incidence.insert(id.clone(), BTreeSet::new());
        self.by_name.insert(key, id.clone());
        Ok(id)
    }

    pub fn add_hyperedge(
        &mut self,
        members: Vec<EntityId>,
        order_class: OrderClass,
        statement: &str,
        source_ref: &str,
    ) -> Result<EdgeId, GraphError> {
        for m in &members {
            if !self.entities.contains_key(m) {
                return Err(GraphError::UnknownEntity(m.clone()));
            }
        }
        let statement = statement.trim();
        validate_edge_shape(&members, order_class, statement)?;
        let id = EdgeId(format!(
            "{}{:0width$}",
            self.layer.edge_prefix(),
            self.next_edge,
            width = ID_WIDTH
        ));
        self.next_edge += 1;
        for m in &members {
            self.incidence
                .get_mut(m)
                .expect("every entity has an incidence slot")
                .insert(id.clone());
        }
        self.edges.insert(
            id.clone(),
            Hyperedge {
                id: id.clone(),
                members,
                order_class,
                statement: statement.to_string(),
                source_ref: source_ref.to_string(),
                embedding: None,
            },
        );
        Ok(id)
    }

    pub fn set_entity_embedding(&mut self, id: &EntityId, v: EmbeddingVector) -> Result<(), GraphError> {
        let e = self
            .entities
            .get_mut(id)
            .ok_or_else(|| GraphError::UnknownEntity(id.clone()))?;
        e.embedding = Some(v);
        Ok(())
    }

    pub fn set_edge_embedding(&mut self, id: &EdgeId, v: EmbeddingVector) -> Result<(), GraphError> {
        let e = self
            .edges
            .get_mut(id)
            .ok_or_else(|| GraphError::UnknownEdge(id.clone()))?;
        e.embedding = Some(v);
        Ok(())
    }

    /// Member entities of an edge, in stored member order.
    pub fn neighbors_of_edge(&self, id: &EdgeId) -> Result<Vec<&Entity>, GraphError> {
        let edge = self.edges.get(id).ok_or_else(|| GraphError::UnknownEdge(id.clone()))?;
        Ok(edge
            .members
            .iter()
            .map(|m| self.entities.get(m).expect("no dangling members"))
            .collect())
    }

    /// One traversal step from `id`: up to `max_edges` incident edges in
    /// ascending id order plus all their members. The seed always comes first.
    pub fn expand_entity(&self, id: &EntityId, max_edges: usize) -> Result<ConceptSubgraph, GraphError> {
        if max_edges == 0 {
            return Err(GraphError::ZeroMaxEdges);
        }
        let seed = self
            .entities
            .get(id)
            .ok_or_else(|| GraphError::UnknownEntity(id.clone()))?;
        let mut sub = ConceptSubgraph {
            entities: vec![seed.clone()],
            edges: Vec::new(),
        };
        let mut seen: BTreeSet<&EntityId> = BTreeSet::from([id]);
        for edge_id in self.incidence[id].iter().take(max_edges) {
            let edge = &self.edges[edge_id];
            for m in &edge.members {
                if seen.insert(m) {
                    sub.entities.push(self.entities[m].clone());
                }
            }
            sub.edges.push(edge.clone());
        }
        Ok(sub)
    }

    /// Verifies that the incidence index is exactly the inverse of edge
    /// membership and that nothing dangles.
    pub fn check_invariants(&self) -> Result<(), GraphError> {
        let mut rebuilt: BTreeMap<&EntityId, BTreeSet<&EdgeId>> =
            self.entities.keys().map(|k| (k, BTreeSet::new())).collect();
        for edge in self.edges.values() {
            for m in &edge.members {
                match rebuilt.get_mut(m) {
                    Some(set) => {
                        set.insert(&edge.id);
                    }
                    None => {
                        return Err(GraphError::DanglingMember {
                            edge: edge.id.clone(),
                            entity: m.clone(),
                        })
                    }
                }
            }
        }
        if self.incidence.len() != rebuilt.len() {
            return Err(GraphError::Incidence(format!(
                "{} incidence slots for {} entities",
                self.incidence.len(),
                rebuilt.len()
            )));
        }
        for (entity, edges) in &self.incidence {
            let expected = rebuilt
                .get(entity)
                .ok_or_else(|| GraphError::Incidence(format!("slot for unknown entity {entity}")))?;
            if edges.len() != expected.len() || edges.iter().zip(expected).any(|(a, b)| a != *b) {
                return Err(GraphError::Incidence(format!("entity {entity}")));
            }
        }
        Ok(())
    }
}

fn id_seq(id: &str) -> u64 {
    id.get(2..).and_then(|s| s.parse().ok()).unwrap_or(0)
}

fn validate_entity_name(name: &str, kind: EntityKind) -> Result<(), GraphError> {
    if normalize_name(name).is_empty() {
        return Err(GraphError::EmptyName);
    }
    if kind == EntityKind::FieldValue {
        match name.split_once('=') {
            Some((k, _)) if !k.trim().is_empty() => {}
            _ => return Err(GraphError::MalformedFieldValue(name.to_string())),
        }
    }
    Ok(())
}

fn validate_edge_shape(members: &[EntityId], class: OrderClass, statement: &str) -> Result<(), GraphError> {
    if !class.accepts(members.len()) {
        return Err(GraphError::MemberCount {
            class,
            count: members.len(),
        });
    }
    let mut seen = BTreeSet::new();
    for m in members {
        if !seen.insert(m) {
            return Err(GraphError::DuplicateMember(m.clone()));
        }
    }
    if statement.trim().is_empty() {
        return Err(GraphError::EmptyStatement);
    }
    Ok(())
}

/// Descriptions accumulate as `; `-separated distinct parts.
fn merge_description(existing: &mut String, addition: &str) {
    if addition.is_empty() || existing.split("; ").any(|part| part == addition) {
        return;
    }
    if !existing.is_empty() {
        existing.push_str("; ");
    }
    existing.push_str(addition);
}

#[cfg(test)]
mod tests {
    use super::*;

    fn concept_graph_with(names: &[&str]) -> (Hypergraph, Vec<EntityId>) {
        let mut g = Hypergraph::new(Layer::Concept);
        let ids = names
            .iter()
            .map(|n| g.add_entity(n, EntityKind::Concept, "", "chunk-0").unwrap())
            .collect();
        (g, ids)
    }

    #[test]
    fn dedup_by_name() {
        let mut g = Hypergraph::new(Layer::Concept);
        let a = g.add_entity("Fraction", EntityKind::Concept, "A part of a whole", "c1").unwrap();
        let b = g.add_entity("Fraction", EntityKind::Concept, "A part of a whole", "c2").unwrap();
        assert_eq!(a, b);
        assert_eq!(g.entity_count(), 1);
        let e = g.entity(&a).unwrap();
        assert_eq!(e.source_refs, vec!["c1", "c2"]);
        assert_eq!(e.description, "A part of a whole");
    }

    #[test]
    fn dedup_case_folds() {
        let mut g = Hypergraph::new(Layer::Concept);
        let a = g.add_entity("fraction", EntityKind::Concept, "x", "c1").unwrap();
        let b = g.add_entity("  Fraction ", EntityKind::Concept, "y", "c1").unwrap();
        assert_eq!(a, b);
        assert_eq!(g.entity(&a).unwrap().description, "x; y");
        // different kind is a different node
        let c = g.add_entity("fraction=1", EntityKind::FieldValue, "", "c1").unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn empty_name_rejected() {
        let mut g = Hypergraph::new(Layer::Concept);
        assert_eq!(
            g.add_entity(" \t ", EntityKind::Concept, "", "c"),
            Err(GraphError::EmptyName)
        );
        assert!(matches!(
            g.add_entity("no equals", EntityKind::FieldValue, "", "c"),
            Err(GraphError::MalformedFieldValue(_))
        ));
    }

    #[test]
    fn hundred_distinct_names() {
        let names: Vec<String> = (0..100).map(|i| format!("concept {i}")).collect();
        let refs: Vec<&str> = names.iter().map(String::as_str).collect();
        let (g, ids) = concept_graph_with(&refs);
        let distinct: BTreeSet<_> = ids.iter().collect();
        assert_eq!(distinct.len(), 100);
        assert!(ids.iter().all(|id| g.incident_edges(id).unwrap().is_empty()));
    }

    #[test]
    fn low_edge_member_rules() {
        let (mut g, ids) = concept_graph_with(&["A", "B", "C"]);
        let e = g
            .add_hyperedge(ids[..2].to_vec(), OrderClass::Low, "A relates to B", "c")
            .unwrap();
        assert!(g.incident_edges(&ids[0]).unwrap().contains(&e));
        assert!(g.incident_edges(&ids[1]).unwrap().contains(&e));
        assert_eq!(
            g.add_hyperedge(ids.clone(), OrderClass::Low, "s", "c"),
            Err(GraphError::MemberCount { class: OrderClass::Low, count: 3 })
        );
        assert_eq!(
            g.add_hyperedge(ids[..2].to_vec(), OrderClass::High, "s", "c"),
            Err(GraphError::MemberCount { class: OrderClass::High, count: 2 })
        );
        assert!(g.add_hyperedge(vec![], OrderClass::Case, "s", "c").is_err());
        assert!(g.add_hyperedge(ids[..1].to_vec(), OrderClass::Case, "s", "c").is_ok());
        assert_eq!(
            g.add_hyperedge(vec![ids[0].clone(), ids[0].clone()], OrderClass::Low, "s", "c"),
            Err(GraphError::DuplicateMember(ids[0].clone()))
        );
        assert_eq!(
            g.add_hyperedge(ids[..2].to_vec(), OrderClass::Low, "  ", "c"),
            Err(GraphError::EmptyStatement)
        );
        let ghost = EntityId("CE99999999".into());
        assert_eq!(
            g.add_hyperedge(vec![ids[0].clone(), ghost.clone()], OrderClass::Low, "s", "c"),
            Err(GraphError::UnknownEntity(ghost))
        );
    }

    #[test]
    fn ten_edges_over_four_entities() {
        let (mut g, ids) = concept_graph_with(&["A", "B", "C", "D"]);
        let mut edges = Vec::new();
        for i in 0..10 {
            let members: Vec<EntityId> = if i % 2 == 0 {
                vec![ids[i % 4].clone(), ids[(i + 1) % 4].clone()]
            } else {
                vec![ids[i % 4].clone(), ids[(i + 1) % 4].clone(), ids[(i + 2) % 4].clone()]
            };
            let class = if members.len() == 2 { OrderClass::Low } else { OrderClass::High };
            let id = g.add_hyperedge(members.clone(), class, &format!("edge {i}"), "c").unwrap();
            edges.push((id, members));
        }
        // oracle: rebuild incidence from the edge list
        let mut oracle: BTreeMap<EntityId, BTreeSet<EdgeId>> = BTreeMap::new();
        for id in &ids {
            oracle.insert(id.clone(), BTreeSet::new());
        }
        for (e, members) in &edges {
            for m in members {
                oracle.get_mut(m).unwrap().insert(e.clone());
            }
        }
        for id in &ids {
            assert_eq!(g.incident_edges(id).unwrap(), &oracle[id]);
        }
        g.check_invariants().unwrap();
    }

    #[test]
    fn neighbors_preserve_order() {
        let (mut g, ids) = concept_graph_with(&["A", "B", "C", "D", "E"]);
        let order = vec![ids[3].clone(), ids[0].clone(), ids[4].clone(), ids[1].clone(), ids[2].clone()];
        let e = g.add_hyperedge(order.clone(), OrderClass::Case, "case", "case-1").unwrap();
        let got: Vec<EntityId> = g.neighbors_of_edge(&e).unwrap().iter().map(|x| x.id.clone()).collect();
        assert_eq!(got, order);
        assert!(matches!(
            g.neighbors_of_edge(&EdgeId("CH00000099".into())),
            Err(GraphError::UnknownEdge(_))
        ));
    }

    #[test]
    fn expand_isolated_and_limited() {
        let (mut g, ids) = concept_graph_with(&["hub", "a", "b", "c", "lonely"]);
        let sub = g.expand_entity(&ids[4], 3).unwrap();
        assert_eq!(sub.entities.len(), 1);
        assert!(sub.edges.is_empty());

        let e1 = g.add_hyperedge(vec![ids[0].clone(), ids[1].clone()], OrderClass::Low, "s1", "c").unwrap();
        let e2 = g.add_hyperedge(vec![ids[2].clone(), ids[0].clone()], OrderClass::Low, "s2", "c").unwrap();
        let _e3 = g.add_hyperedge(vec![ids[0].clone(), ids[3].clone()], OrderClass::Low, "s3", "c").unwrap();
        let sub = g.expand_entity(&ids[0], 2).unwrap();
        let edge_ids: Vec<_> = sub.edges.iter().map(|e| e.id.clone()).collect();
        assert_eq!(edge_ids, vec![e1, e2]);
        let names: Vec<_> = sub.entities.iter().map(|e| e.name.as_str()).collect();
        assert_eq!(names, vec!["hub", "a", "b"]);

        assert_eq!(g.expand_entity(&ids[0], 0), Err(GraphError::ZeroMaxEdges));
        assert!(matches!(
            g.expand_entity(&EntityId("CE77777777".into()), 1),
            Err(GraphError::UnknownEntity(_))
        ));
    }

    #[test]
    fn expand_star_hub() {
        let mut g = Hypergraph::new(Layer::Concept);
        let hub = g.add_entity("hub", EntityKind::Concept, "", "c").unwrap();
        let mut oracle: BTreeSet<EntityId> = BTreeSet::from([hub.clone()]);
        for i in 0..10 {
            let a = g.add_entity(&format!("leaf {i}"), EntityKind::Concept, "", "c").unwrap();
            let b = g.add_entity(&format!("twig {i}"), EntityKind::Concept, "", "c").unwrap();
            g.add_hyperedge(vec![hub.clone(), a.clone(), b.clone()], OrderClass::High, "star", "c")
                .unwrap();
            oracle.insert(a);
            oracle.insert(b);
        }
        let sub = g.expand_entity(&hub, 10).unwrap();
        assert_eq!(sub.edges.len(), 10);
        let got: BTreeSet<EntityId> = sub.entities.iter().map(|e| e.id.clone()).collect();
        assert_eq!(got, oracle);
        assert_eq!(sub.entities.len(), oracle.len());
    }

    #[test]
    fn from_parts_rejects_dangling() {
        let (mut g, ids) = concept_graph_with(&["A", "B"]);
        g.add_hyperedge(ids.clone(), OrderClass::Low, "s", "c").unwrap();
        let entities: Vec<Entity> = g.entities().cloned().collect();
        let edges: Vec<Hyperedge> = g.edges().cloned().collect();
        let rebuilt = Hypergraph::from_parts(Layer::Concept, entities.clone(), edges.clone()).unwrap();
        assert_eq!(rebuilt, g);

        let err = Hypergraph::from_parts(Layer::Concept, entities[..1].to_vec(), edges.clone()).unwrap_err();
        assert!(matches!(err, GraphError::DanglingMember { ref edge, .. } if edge.as_str() == "CH00000001"));
        let err = Hypergraph::from_parts(Layer::Instance, entities, edges).unwrap_err();
        assert!(matches!(err, GraphError::ForeignId { .. }));
    }

    #[test]
    fn ids_sort_by_insertion() {
        let names: Vec<String> = (0..20).map(|i| format!("n{i}")).collect();
        let refs: Vec<&str> = names.iter().map(String::as_str).collect();
        let (_, ids) = concept_graph_with(&refs);
        let mut sorted = ids.clone();
        sorted.sort();
        assert_eq!(sorted, ids);
        assert_eq!(Layer::of_id(ids[0].as_str()), Some(Layer::Concept));
        assert_eq!(Layer::of_id("IH00000001"), Some(Layer::Instance));
        assert_eq!(Layer::of_id("chunk:x#0"), None);
    }
}
