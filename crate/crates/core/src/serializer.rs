//! Textual serialization of scene graphs for language-model prompts.
//!
//! Node lines are pipe-delimited with fixed two-decimal coordinates so prompts
//! stay compact and byte-deterministic. Edge lines follow the
//! `obj1_id|relation|obj2_id` layout, with the ternary form
//! `obj1_id|relation|obj2_id and obj3_id`. The inverse parsers are used by the
//! offline oracle client and by round-trip tests; they recover coordinates at
//! the serialized two-decimal precision.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scene::{
    GraphError, ObjectId, ObjectNode, Provenance, Relation, RelationToken, SceneGraph, SpatialEdge,
};

/// Serialization flavor fed to the model.
///
/// * `G` — object names and ids only.
/// * `GPos` — adds colors, centers, and sizes.
/// * `GEdges` — `GPos` plus the closed-vocabulary edges.
/// * `GGenEdges` — `GPos` plus edges after open-vocabulary substitution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GraphVariant {
    G,
    GPos,
    GEdges,
    GGenEdges,
}

impl GraphVariant {
    pub const ALL: [GraphVariant; 4] = [
        GraphVariant::G,
        GraphVariant::GPos,
        GraphVariant::GEdges,
        GraphVariant::GGenEdges,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            GraphVariant::G => "g",
            GraphVariant::GPos => "g_pos",
            GraphVariant::GEdges => "g_edges",
            GraphVariant::GGenEdges => "g_genedges",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.iter().copied().find(|v| v.as_str() == s)
    }

    /// Whether node lines carry color/position/size attributes.
    pub fn with_attributes(self) -> bool {
        !matches!(self, GraphVariant::G)
    }

    /// Whether the serialized text contains an `EDGES:` section.
    pub fn with_edges(self) -> bool {
        matches!(self, GraphVariant::GEdges | GraphVariant::GGenEdges)
    }
}

impl fmt::Display for GraphVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SerializeError {
    #[error("variant {0} requires edges but the graph has none")]
    MissingEdges(GraphVariant),
}

/// Parse failures when reading serialized text back. Carries a line number
/// (1-based) where applicable.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum TextParseError {
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("missing OBJECTS: section")]
    MissingObjects,
    #[error(transparent)]
    Graph(#[from] GraphError),
}

const OBJECTS_HEADER: &str = "OBJECTS:";
const EDGES_HEADER: &str = "EDGES:";

/// Renders one node line for a variant.
pub fn serialize_node(node: &ObjectNode, variant: GraphVariant) -> String {
    if !variant.with_attributes() {
        return format!("{}|{}", node.object_id, node.class_label);
    }
    let colors = if node.color_labels.is_empty() {
        "-".to_string()
    } else {
        node.color_labels.join(",")
    };
    format!(
        "{}|{}|colors={}|center=({:.2},{:.2},{:.2})|size=({:.2},{:.2},{:.2})",
        node.object_id,
        node.class_label,
        colors,
        node.center[0],
        node.center[1],
        node.center[2],
        node.size[0],
        node.size[1],
        node.size[2],
    )
}

/// Renders one edge line: `target|relation|anchor`, or
/// `target|relation|anchor1 and anchor2` for ternary edges.
pub fn serialize_edge(edge: &SpatialEdge) -> String {
    edge.to_string()
}

/// Serializes a whole graph for a variant. Node lines are sorted by id; edge
/// lines (for edge-bearing variants) follow the canonical
/// (target, relation, anchors) order. The output is newline-terminated and
/// byte-deterministic.
pub fn serialize_graph(graph: &SceneGraph, variant: GraphVariant) -> Result<String, SerializeError> {
    if variant.with_edges() && graph.edges().is_empty() {
        return Err(SerializeError::MissingEdges(variant));
    }
    let mut out = String::new();
    out.push_str(OBJECTS_HEADER);
    out.push('\n');
    for node in graph.nodes() {
        out.push_str(&serialize_node(node, variant));
        out.push('\n');
    }
    if variant.with_edges() {
        out.push_str(EDGES_HEADER);
        out.push('\n');
        let mut edges: Vec<&SpatialEdge> = graph.edges().iter().collect();
        edges.sort_by_key(|e| e.sort_key());
        for edge in edges {
            out.push_str(&serialize_edge(edge));
            out.push('\n');
        }
    }
    Ok(out)
}

/// Parses a node line back into an [`ObjectNode`]. Lines of variant `G` yield
/// nodes with empty colors and unit-less zero boxes replaced by a 1 m cube at
/// the origin, since `G` carries no geometry.
pub fn parse_node_line(line: &str, line_no: usize) -> Result<ObjectNode, TextParseError> {
    let malformed = |message: &str| TextParseError::Malformed {
        line: line_no,
        message: message.to_string(),
    };
    let fields: Vec<&str> = line.split('|').collect();
    if fields.len() != 2 && fields.len() != 5 {
        return Err(malformed("expected 2 or 5 pipe-delimited fields"));
    }
    let id: ObjectId = fields[0]
        .parse()
        .map_err(|_| malformed("object id is not a non-negative integer"))?;
    let label = fields[1].to_string();
    if fields.len() == 2 {
        return ObjectNode::new(id, label, vec![], [0.0; 3], [1.0; 3]).map_err(Into::into);
    }
    let colors_field = fields[2]
        .strip_prefix("colors=")
        .ok_or_else(|| malformed("missing colors= field"))?;
    let colors = if colors_field == "-" {
        vec![]
    } else {
        colors_field.split(',').map(str::to_string).collect()
    };
    let center = parse_triple(fields[3], "center", line_no)?;
    let size = parse_triple(fields[4], "size", line_no)?;
    ObjectNode::new(id, label, colors, center, size).map_err(Into::into)
}

fn parse_triple(field: &str, name: &str, line_no: usize) -> Result<[f64; 3], TextParseError> {
    let malformed = |message: String| TextParseError::Malformed {
        line: line_no,
        message,
    };
    let inner = field
        .strip_prefix(&format!("{name}=("))
        .and_then(|s| s.strip_suffix(')'))
        .ok_or_else(|| malformed(format!("missing {name}=(..) field")))?;
    let parts: Vec<&str> = inner.split(',').collect();
    if parts.len() != 3 {
        return Err(malformed(format!("{name} needs 3 components")));
    }
    let mut out = [0.0; 3];
    for (i, p) in parts.iter().enumerate() {
        out[i] = p
            .parse()
            .map_err(|_| malformed(format!("{name} component {i} is not a number")))?;
    }
    Ok(out)
}

/// Parses an edge line. Closed tokens are recognized by name and arity; any
/// other relation string becomes an open-vocabulary edge.
pub fn parse_edge_line(line: &str, line_no: usize) -> Result<SpatialEdge, TextParseError> {
    let malformed = |message: &str| TextParseError::Malformed {
        line: line_no,
        message: message.to_string(),
    };
    let (target_field, rest) = line
        .split_once('|')
        .ok_or_else(|| malformed("expected target|relation|anchor"))?;
    let (relation_field, anchor_field) = rest
        .rsplit_once('|')
        .ok_or_else(|| malformed("expected target|relation|anchor"))?;
    let target: ObjectId = target_field
        .parse()
        .map_err(|_| malformed("target id is not a non-negative integer"))?;

    let anchors: Vec<ObjectId> = if let Some((a, b)) = anchor_field.split_once(" and ") {
        match (a.trim().parse(), b.trim().parse()) {
            (Ok(a), Ok(b)) => vec![a, b],
            _ => return Err(malformed("ternary anchors are not integers")),
        }
    } else {
        vec![anchor_field
            .trim()
            .parse()
            .map_err(|_| malformed("anchor id is not a non-negative integer"))?]
    };

    let relation = match RelationToken::parse(relation_field) {
        Ok(token) if token.arity() == anchors.len() => Relation::Closed(token),
        _ => Relation::Open(relation_field.to_string()),
    };
    SpatialEdge::new(target, relation, anchors, Provenance::Imported).map_err(Into::into)
}

/// Parses a serialized graph back into a [`SceneGraph`]. Coordinates come back
/// at the two-decimal precision of the text.
pub fn parse_graph(text: &str, scene_id: &str) -> Result<SceneGraph, TextParseError> {
    let mut nodes = Vec::new();
    let mut edges = Vec::new();
    let mut section = None;
    let mut saw_objects = false;
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = line.trim_end();
        if line.is_empty() {
            continue;
        }
        if line == OBJECTS_HEADER {
            section = Some(OBJECTS_HEADER);
            saw_objects = true;
            continue;
        }
        if line == EDGES_HEADER {
            section = Some(EDGES_HEADER);
            continue;
        }
        match section {
            Some(OBJECTS_HEADER) => nodes.push(parse_node_line(line, line_no)?),
            Some(EDGES_HEADER) => edges.push(parse_edge_line(line, line_no)?),
            _ => {
                return Err(TextParseError::Malformed {
                    line: line_no,
                    message: "content before OBJECTS: header".to_string(),
                })
            }
        }
    }
    if !saw_objects {
        return Err(TextParseError::MissingObjects);
    }
    SceneGraph::build(scene_id, nodes, edges).map_err(Into::into)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chair() -> ObjectNode {
        ObjectNode::new(
            12,
            "chair",
            vec!["brown".into()],
            [1.2, 0.5, 0.45],
            [0.5, 0.5, 0.9],
        )
        .unwrap()
    }

    #[test]
    fn node_line_variant_g() {
        assert_eq!(serialize_node(&chair(), GraphVariant::G), "12|chair");
    }

    #[test]
    fn node_line_variant_g_pos() {
        assert_eq!(
            serialize_node(&chair(), GraphVariant::GPos),
            "12|chair|colors=brown|center=(1.20,0.50,0.45)|size=(0.50,0.50,0.90)"
        );
    }

    #[test]
    fn node_line_empty_colors() {
        let n = ObjectNode::new(3, "wall", vec![], [0.0; 3], [1.0; 3]).unwrap();
        assert_eq!(
            serialize_node(&n, GraphVariant::GEdges),
            "3|wall|colors=-|center=(0.00,0.00,0.00)|size=(1.00,1.00,1.00)"
        );
    }

    #[test]
    fn binary_edge_line() {
        let e = SpatialEdge::closed(12, RelationToken::On, 7, Provenance::Geometric).unwrap();
        assert_eq!(serialize_edge(&e), "12|on|7");
    }

    #[test]
    fn ternary_edge_line_has_ascending_anchors() {
        let e = SpatialEdge::between(3, 9, 5, Provenance::Geometric).unwrap();
        assert_eq!(serialize_edge(&e), "3|between|5 and 9");
    }

    #[test]
    fn open_edge_line_passes_text_through() {
        let e = SpatialEdge::open(
            4,
            "both are positioned around the same table, facing each other",
            6,
            Provenance::VlmGenerated,
        )
        .unwrap();
        assert_eq!(
            serialize_edge(&e),
            "4|both are positioned around the same table, facing each other|6"
        );
    }

    #[test]
    fn variant_g_has_no_edges_section() {
        let g = two_node_fixture();
        let text = serialize_graph(&g, GraphVariant::G).unwrap();
        assert!(!text.contains(EDGES_HEADER));
        assert!(text.ends_with('\n'));
    }

    #[test]
    fn edge_variant_on_edgeless_graph_fails() {
        let g = SceneGraph::build("s", vec![chair()], vec![]).unwrap();
        assert_eq!(
            serialize_graph(&g, GraphVariant::GEdges).unwrap_err(),
            SerializeError::MissingEdges(GraphVariant::GEdges)
        );
    }

    #[test]
    fn serialization_is_deterministic() {
        let g = two_node_fixture();
        assert_eq!(
            serialize_graph(&g, GraphVariant::GEdges).unwrap(),
            serialize_graph(&g, GraphVariant::GEdges).unwrap()
        );
    }

    fn two_node_fixture() -> SceneGraph {
        let cabinet = ObjectNode::new(
            5,
            "cabinet",
            vec!["white".into()],
            [1.0, 2.0, 1.5],
            [0.6, 0.4, 0.8],
        )
        .unwrap();
        let nightstand = ObjectNode::new(
            2,
            "nightstand",
            vec![],
            [1.0, 2.0, 0.3],
            [0.5, 0.4, 0.6],
        )
        .unwrap();
        let edge = SpatialEdge::closed(5, RelationToken::Above, 2, Provenance::Geometric).unwrap();
        SceneGraph::build("fixture", vec![cabinet, nightstand], vec![edge]).unwrap()
    }

    #[test]
    fn golden_two_node_graph() {
        let text = serialize_graph(&two_node_fixture(), GraphVariant::GEdges).unwrap();
        let golden = include_str!("../tests/golden/two_node_g_edges.txt");
        assert_eq!(text, golden);
    }

    #[test]
    fn node_lines_of_g_prefix_g_pos() {
        let g = two_node_fixture();
        for node in g.nodes() {
            let short = serialize_node(node, GraphVariant::G);
            let long = serialize_node(node, GraphVariant::GPos);
            assert!(long.starts_with(&format!("{short}|")));
        }
    }

    #[test]
    fn node_round_trip_at_two_decimals() {
        let n = ObjectNode::new(
            9,
            "sofa",
            vec!["red".into(), "dark red".into()],
            [1.234, -2.345, 0.456],
            [1.111, 2.222, 0.333],
        )
        .unwrap();
        let line = serialize_node(&n, GraphVariant::GPos);
        let back = parse_node_line(&line, 1).unwrap();
        assert_eq!(back.object_id, 9);
        assert_eq!(back.class_label, "sofa");
        assert_eq!(back.color_labels, vec!["red", "dark red"]);
        for i in 0..3 {
            assert!((back.center[i] - n.center[i]).abs() <= 0.005 + 1e-12);
            assert!((back.size[i] - n.size[i]).abs() <= 0.005 + 1e-12);
        }
    }

    #[test]
    fn edge_round_trip() {
        for line in ["12|on|7", "3|between|5 and 9", "4|leaning against|6"] {
            let e = parse_edge_line(line, 1).unwrap();
            assert_eq!(serialize_edge(&e), line);
        }
        let between = parse_edge_line("3|between|5 and 9", 1).unwrap();
        assert_eq!(between.relation().token(), Some(RelationToken::Between));
        let open = parse_edge_line("4|leaning against|6", 1).unwrap();
        assert!(open.relation().token().is_none());
    }

    #[test]
    fn graph_round_trip() {
        let g = two_node_fixture();
        let text = serialize_graph(&g, GraphVariant::GEdges).unwrap();
        let back = parse_graph(&text, g.scene_id()).unwrap();
        assert_eq!(back.len(), g.len());
        assert_eq!(back.edges().len(), 1);
        assert_eq!(back.edges()[0].to_string(), "5|above|2");
    }

    #[test]
    fn parse_reports_line_numbers() {
        let err = parse_graph("OBJECTS:\n12|chair\nbogus line\n", "s").unwrap_err();
        match err {
            TextParseError::Malformed { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected error {other:?}"),
        }
    }
}
