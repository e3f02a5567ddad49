//! Scene-graph data model: object nodes, spatial edges, and structural
//! validation.
//!
//! A [`SceneGraph`] holds the objects of one scene together with the spatial
//! relations between them. Nodes carry the attributes needed for grounding
//! (class label, colors, axis-aligned bounding box as center + full extents);
//! edges point unidirectionally from a target object to one anchor, or to two
//! anchors for the ternary `between` relation. Graphs are immutable after
//! construction and safe to share across evaluation workers.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Scene-local object identifier. Uniqueness is only required within a scene.
pub type ObjectId = u32;

/// Validation failures raised while building nodes, edges, or whole graphs.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum GraphError {
    #[error("duplicate object id {0}")]
    DuplicateId(ObjectId),
    #[error("edge `{edge}` references missing object {missing}")]
    DanglingEdge { edge: String, missing: ObjectId },
    #[error("edge on object {target_id} lists the target among its anchors")]
    SelfEdge { target_id: ObjectId },
    #[error("relation `{relation}` takes {expected} anchor(s), got {got}")]
    BadArity {
        relation: String,
        expected: usize,
        got: usize,
    },
    #[error("object {object_id}: size component {axis} must be positive, got {value}")]
    NonPositiveSize {
        object_id: ObjectId,
        axis: usize,
        value: f64,
    },
    #[error("object {object_id}: center and size must be finite")]
    NonFiniteCoordinate { object_id: ObjectId },
    #[error("object {object_id}: class label must be non-empty")]
    EmptyClassLabel { object_id: ObjectId },
    #[error("duplicate edge `{0}`")]
    DuplicateEdge(String),
    #[error("unknown relation token `{0}`")]
    UnknownToken(String),
}

/// The closed relation vocabulary.
///
/// Relations fall into three categories: binary (e.g. `above`), ordered
/// (e.g. `closest`), and ternary (`between` is the only one).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RelationToken {
    Above,
    Below,
    On,
    Under,
    Near,
    In,
    Closest,
    Farthest,
    Between,
}

/// Arity/ranking category of a relation token.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RelationCategory {
    Binary,
    Ordered,
    Ternary,
}

impl RelationToken {
    pub const ALL: [RelationToken; 9] = [
        RelationToken::Above,
        RelationToken::Below,
        RelationToken::On,
        RelationToken::Under,
        RelationToken::Near,
        RelationToken::In,
        RelationToken::Closest,
        RelationToken::Farthest,
        RelationToken::Between,
    ];

    pub fn category(self) -> RelationCategory {
        match self {
            RelationToken::Closest | RelationToken::Farthest => RelationCategory::Ordered,
            RelationToken::Between => RelationCategory::Ternary,
            _ => RelationCategory::Binary,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            RelationToken::Above => "above",
            RelationToken::Below => "below",
            RelationToken::On => "on",
            RelationToken::Under => "under",
            RelationToken::Near => "near",
            RelationToken::In => "in",
            RelationToken::Closest => "closest",
            RelationToken::Farthest => "farthest",
            RelationToken::Between => "between",
        }
    }

    pub fn parse(s: &str) -> Result<Self, GraphError> {
        Self::ALL
            .iter()
            .copied()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| GraphError::UnknownToken(s.to_string()))
    }

    /// Number of anchors an edge with this relation must carry.
    pub fn arity(self) -> usize {
        match self.category() {
            RelationCategory::Ternary => 2,
            _ => 1,
        }
    }
}

impl fmt::Display for RelationToken {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Whether a relation is drawn from the closed token set or is free text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Vocabulary {
    Closed,
    Open,
}

/// How an edge came to be in the graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Geometric,
    VlmGenerated,
    Imported,
}

/// A relation label: a closed-vocabulary token or an open-vocabulary phrase.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Relation {
    Closed(RelationToken),
    Open(String),
}

impl Relation {
    pub fn vocabulary(&self) -> Vocabulary {
        match self {
            Relation::Closed(_) => Vocabulary::Closed,
            Relation::Open(_) => Vocabulary::Open,
        }
    }

    /// The surface string used in serialized edge lines.
    pub fn label(&self) -> &str {
        match self {
            Relation::Closed(t) => t.as_str(),
            Relation::Open(s) => s.as_str(),
        }
    }

    pub fn token(&self) -> Option<RelationToken> {
        match self {
            Relation::Closed(t) => Some(*t),
            Relation::Open(_) => None,
        }
    }
}

/// One object of a scene: id, class label, color labels, and an axis-aligned
/// bounding box given as world-frame center plus full extents (meters, z-up).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "NodeRecord")]
pub struct ObjectNode {
    pub object_id: ObjectId,
    pub class_label: String,
    /// Ordered color labels; the first entry is the canonical color used in
    /// referential statements. May be empty.
    pub color_labels: Vec<String>,
    pub center: [f64; 3],
    pub size: [f64; 3],
}

#[derive(Debug, Clone, Deserialize)]
struct NodeRecord {
    object_id: ObjectId,
    class_label: String,
    #[serde(default)]
    color_labels: Vec<String>,
    center: [f64; 3],
    size: [f64; 3],
}

impl TryFrom<NodeRecord> for ObjectNode {
    type Error = GraphError;

    fn try_from(r: NodeRecord) -> Result<Self, Self::Error> {
        ObjectNode::new(r.object_id, r.class_label, r.color_labels, r.center, r.size)
    }
}

impl ObjectNode {
    /// Builds a node, validating the box invariants. Class and color labels
    /// are normalized to lowercase.
    pub fn new(
        object_id: ObjectId,
        class_label: impl Into<String>,
        color_labels: Vec<String>,
        center: [f64; 3],
        size: [f64; 3],
    ) -> Result<Self, GraphError> {
        let class_label = class_label.into().trim().to_lowercase();
        if class_label.is_empty() {
            return Err(GraphError::EmptyClassLabel { object_id });
        }
        if center.iter().chain(size.iter()).any(|v| !v.is_finite()) {
            return Err(GraphError::NonFiniteCoordinate { object_id });
        }
        for (axis, &value) in size.iter().enumerate() {
            if value <= 0.0 {
                return Err(GraphError::NonPositiveSize {
                    object_id,
                    axis,
                    value,
                });
            }
        }
        let color_labels = color_labels
            .into_iter()
            .map(|c| c.trim().to_lowercase())
            .filter(|c| !c.is_empty())
            .collect();
        Ok(Self {
            object_id,
            class_label,
            color_labels,
            center,
            size,
        })
    }

    pub fn min_corner(&self) -> [f64; 3] {
        [
            self.center[0] - self.size[0] / 2.0,
            self.center[1] - self.size[1] / 2.0,
            self.center[2] - self.size[2] / 2.0,
        ]
    }

    pub fn max_corner(&self) -> [f64; 3] {
        [
            self.center[0] + self.size[0] / 2.0,
            self.center[1] + self.size[1] / 2.0,
            self.center[2] + self.size[2] / 2.0,
        ]
    }

    pub fn volume(&self) -> f64 {
        self.size[0] * self.size[1] * self.size[2]
    }

    /// Area of the box footprint in the horizontal (xy) plane.
    pub fn footprint_area(&self) -> f64 {
        self.size[0] * self.size[1]
    }

    /// Diagonal of the horizontal footprint.
    pub fn horizontal_diagonal(&self) -> f64 {
        (self.size[0] * self.size[0] + self.size[1] * self.size[1]).sqrt()
    }

    /// First color label, if any. This is the color referential statements use.
    pub fn canonical_color(&self) -> Option<&str> {
        self.color_labels.first().map(String::as_str)
    }
}

/// One spatial relation from a target object to one or two anchor objects.
///
/// Closed-vocabulary edges carry a [`RelationToken`]; open-vocabulary edges
/// carry a free-text phrase. `between` is the only relation with two anchors,
/// which are kept sorted ascending by id.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "EdgeRecord", into = "EdgeRecord")]
pub struct SpatialEdge {
    target_id: ObjectId,
    relation: Relation,
    anchor_ids: Vec<ObjectId>,
    provenance: Provenance,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct EdgeRecord {
    target_id: ObjectId,
    relation: String,
    anchor_ids: Vec<ObjectId>,
    vocabulary: Vocabulary,
    provenance: Provenance,
}

impl TryFrom<EdgeRecord> for SpatialEdge {
    type Error = GraphError;

    fn try_from(r: EdgeRecord) -> Result<Self, Self::Error> {
        let relation = match r.vocabulary {
            Vocabulary::Closed => Relation::Closed(RelationToken::parse(&r.relation)?),
            Vocabulary::Open => Relation::Open(r.relation),
        };
        SpatialEdge::new(r.target_id, relation, r.anchor_ids, r.provenance)
    }
}

impl From<SpatialEdge> for EdgeRecord {
    fn from(e: SpatialEdge) -> Self {
        EdgeRecord {
            target_id: e.target_id,
            vocabulary: e.relation.vocabulary(),
            relation: e.relation.label().to_string(),
            anchor_ids: e.anchor_ids,
            provenance: e.provenance,
        }
    }
}

impl SpatialEdge {
    /// Builds an edge, validating arity and the no-self-reference rule.
    /// Ternary anchors are canonicalized ascending by id.
    pub fn new(
        target_id: ObjectId,
        relation: Relation,
        mut anchor_ids: Vec<ObjectId>,
        provenance: Provenance,
    ) -> Result<Self, GraphError> {
        let expected = match &relation {
            Relation::Closed(t) => t.arity(),
            // Open-vocabulary edges always relate exactly two objects.
            Relation::Open(_) => 1,
        };
        if anchor_ids.len() != expected {
            return Err(GraphError::BadArity {
                relation: relation.label().to_string(),
                expected,
                got: anchor_ids.len(),
            });
        }
        if let Relation::Open(text) = &relation {
            if text.trim().is_empty() {
                return Err(GraphError::UnknownToken(String::new()));
            }
        }
        if anchor_ids.contains(&target_id) {
            return Err(GraphError::SelfEdge { target_id });
        }
        if anchor_ids.len() == 2 {
            anchor_ids.sort_unstable();
            if anchor_ids[0] == anchor_ids[1] {
                return Err(GraphError::SelfEdge {
                    target_id: anchor_ids[0],
                });
            }
        }
        Ok(Self {
            target_id,
            relation,
            anchor_ids,
            provenance,
        })
    }

    /// Convenience constructor for a closed binary or ordered edge.
    pub fn closed(
        target_id: ObjectId,
        token: RelationToken,
        anchor_id: ObjectId,
        provenance: Provenance,
    ) -> Result<Self, GraphError> {
        Self::new(
            target_id,
            Relation::Closed(token),
            vec![anchor_id],
            provenance,
        )
    }

    /// Convenience constructor for the ternary `between` edge.
    pub fn between(
        target_id: ObjectId,
        anchor_a: ObjectId,
        anchor_b: ObjectId,
        provenance: Provenance,
    ) -> Result<Self, GraphError> {
        Self::new(
            target_id,
            Relation::Closed(RelationToken::Between),
            vec![anchor_a, anchor_b],
            provenance,
        )
    }

    /// Convenience constructor for an open-vocabulary edge.
    pub fn open(
        target_id: ObjectId,
        text: impl Into<String>,
        anchor_id: ObjectId,
        provenance: Provenance,
    ) -> Result<Self, GraphError> {
        Self::new(
            target_id,
            Relation::Open(text.into()),
            vec![anchor_id],
            provenance,
        )
    }

    pub fn target_id(&self) -> ObjectId {
        self.target_id
    }

    pub fn relation(&self) -> &Relation {
        &self.relation
    }

    pub fn anchor_ids(&self) -> &[ObjectId] {
        &self.anchor_ids
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn vocabulary(&self) -> Vocabulary {
        self.relation.vocabulary()
    }

    /// Canonical ordering key: (target, relation label, anchors).
    pub fn sort_key(&self) -> (ObjectId, String, Vec<ObjectId>) {
        (
            self.target_id,
            self.relation.label().to_string(),
            self.anchor_ids.clone(),
        )
    }

    /// The (target, relation, anchors) identity used for duplicate detection.
    fn triple(&self) -> (ObjectId, &Relation, &[ObjectId]) {
        (self.target_id, &self.relation, &self.anchor_ids)
    }
}

impl fmt::Display for SpatialEdge {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.anchor_ids.len() == 2 {
            write!(
                f,
                "{}|{}|{} and {}",
                self.target_id,
                self.relation.label(),
                self.anchor_ids[0],
                self.anchor_ids[1]
            )
        } else {
            write!(
                f,
                "{}|{}|{}",
                self.target_id,
                self.relation.label(),
                self.anchor_ids[0]
            )
        }
    }
}

/// All objects of one class within a scene.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassGroup {
    pub class_label: String,
    pub member_ids: BTreeSet<ObjectId>,
}

/// A validated scene graph. Immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneGraph {
    scene_id: String,
    nodes: Vec<ObjectNode>,
    edges: Vec<SpatialEdge>,
    index: BTreeMap<ObjectId, usize>,
}

impl SceneGraph {
    /// Validates and assembles a scene graph. Nodes are stored sorted by id;
    /// edge order is preserved as given. Rejects duplicate ids, dangling edge
    /// endpoints, and duplicate closed-vocabulary (target, relation, anchors)
    /// triples before any partial construction.
    pub fn build(
        scene_id: impl Into<String>,
        mut nodes: Vec<ObjectNode>,
        edges: Vec<SpatialEdge>,
    ) -> Result<Self, GraphError> {
        nodes.sort_by_key(|n| n.object_id);
        let mut index = BTreeMap::new();
        for (i, node) in nodes.iter().enumerate() {
            if index.insert(node.object_id, i).is_some() {
                return Err(GraphError::DuplicateId(node.object_id));
            }
        }
        let mut seen_closed: BTreeSet<(ObjectId, RelationToken, Vec<ObjectId>)> = BTreeSet::new();
        for edge in &edges {
            for id in std::iter::once(edge.target_id).chain(edge.anchor_ids.iter().copied()) {
                if !index.contains_key(&id) {
                    return Err(GraphError::DanglingEdge {
                        edge: edge.to_string(),
                        missing: id,
                    });
                }
            }
            if let Relation::Closed(token) = edge.relation {
                if !seen_closed.insert((edge.target_id, token, edge.anchor_ids.clone())) {
                    return Err(GraphError::DuplicateEdge(edge.to_string()));
                }
            }
        }
        Ok(Self {
            scene_id: scene_id.into(),
            nodes,
            edges,
            index,
        })
    }

    pub fn scene_id(&self) -> &str {
        &self.scene_id
    }

    /// Nodes sorted ascending by object id.
    pub fn nodes(&self) -> &[ObjectNode] {
        &self.nodes
    }

    pub fn edges(&self) -> &[SpatialEdge] {
        &self.edges
    }

    pub fn node(&self, id: ObjectId) -> Option<&ObjectNode> {
        self.index.get(&id).map(|&i| &self.nodes[i])
    }

    pub fn contains(&self, id: ObjectId) -> bool {
        self.index.contains_key(&id)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Returns a copy of this graph with the edge set replaced. Revalidates.
    pub fn with_edges(&self, edges: Vec<SpatialEdge>) -> Result<Self, GraphError> {
        Self::build(self.scene_id.clone(), self.nodes.clone(), edges)
    }

    /// Partitions the node set by class label, ordered by label.
    pub fn class_groups(&self) -> Vec<ClassGroup> {
        let mut groups: BTreeMap<&str, BTreeSet<ObjectId>> = BTreeMap::new();
        for node in &self.nodes {
            groups
                .entry(node.class_label.as_str())
                .or_default()
                .insert(node.object_id);
        }
        groups
            .into_iter()
            .map(|(class_label, member_ids)| ClassGroup {
                class_label: class_label.to_string(),
                member_ids,
            })
            .collect()
    }

    /// Number of objects sharing `class_label`.
    pub fn class_count(&self, class_label: &str) -> usize {
        self.nodes
            .iter()
            .filter(|n| n.class_label == class_label)
            .count()
    }

    /// Checks whether an identical edge (by triple) is present.
    pub fn has_edge(&self, edge: &SpatialEdge) -> bool {
        self.edges.iter().any(|e| e.triple() == edge.triple())
    }
}
