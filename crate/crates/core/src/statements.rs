//! Templated referential-statement generation with ambiguity rejection.
//!
//! Statements follow one template per relation category:
//!
//! ```text
//! the [color] [size] <label> that is <relation-phrase> the <anchor>
//! the [color] [size] <label> that is between the <anchor1> and the <anchor2>
//! ```
//!
//! A statement is emitted only when it identifies its target uniquely among
//! all objects of the scene, taking every synonym reading of the relation
//! phrase into account. Disambiguators are added color-first, then size, and
//! only until the statement becomes unique. Anchors are described by class
//! label, plus their color when the anchor class alone is ambiguous.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scene::{
    ObjectId, ObjectNode, Relation, RelationToken, SceneGraph, SpatialEdge,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StatementError {
    #[error("statement's source edge `{0}` is not among the supplied relations")]
    UnknownEdge(String),
    #[error("statement target {0} is not in the graph")]
    UnknownTarget(ObjectId),
    #[error("statement text must be non-empty")]
    EmptyText,
    #[error("statement target {target} does not match edge target {edge_target}")]
    TargetMismatch {
        target: ObjectId,
        edge_target: ObjectId,
    },
    #[error("statement does not follow the template: `{0}`")]
    Malformed(String),
}

/// Relative-size word assigned by comparing box volume against the in-scene
/// median volume of the object's class. Objects at the median get no word.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SizeWord {
    Small,
    Large,
}

impl SizeWord {
    pub fn as_str(self) -> &'static str {
        match self {
            SizeWord::Small => "small",
            SizeWord::Large => "large",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "small" => Some(SizeWord::Small),
            "large" => Some(SizeWord::Large),
            _ => None,
        }
    }
}

/// Attribute kinds that may be appended to a target description.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Disambiguator {
    Color,
    Size,
}

/// Surface synonyms per relation token; the canonical phrase comes first.
#[derive(Debug, Clone, PartialEq)]
pub struct SynonymTable {
    entries: BTreeMap<RelationToken, Vec<String>>,
}

impl Default for SynonymTable {
    fn default() -> Self {
        let entries = [
            (RelationToken::Above, vec!["above", "over"]),
            (RelationToken::Below, vec!["below", "under", "beneath"]),
            (RelationToken::On, vec!["on", "on top of"]),
            (RelationToken::Under, vec!["under", "underneath"]),
            (RelationToken::Near, vec!["near", "next to", "close to"]),
            (RelationToken::In, vec!["in", "inside"]),
            (RelationToken::Closest, vec!["closest to"]),
            (RelationToken::Farthest, vec!["farthest from", "furthest from"]),
            (RelationToken::Between, vec!["between"]),
        ]
        .into_iter()
        .map(|(t, v)| (t, v.into_iter().map(str::to_string).collect()))
        .collect();
        Self { entries }
    }
}

impl SynonymTable {
    /// Builds a table from explicit entries; every token must map to at least
    /// one phrase and the first phrase is taken as canonical.
    pub fn new(entries: BTreeMap<RelationToken, Vec<String>>) -> Result<Self, String> {
        for (token, phrases) in &entries {
            if phrases.is_empty() {
                return Err(format!("synonym list for `{token}` is empty"));
            }
        }
        Ok(Self { entries })
    }

    pub fn surfaces(&self, token: RelationToken) -> &[String] {
        self.entries
            .get(&token)
            .map(Vec::as_slice)
            .unwrap_or_default()
    }

    pub fn canonical(&self, token: RelationToken) -> &str {
        self.surfaces(token)
            .first()
            .map(String::as_str)
            .unwrap_or_else(|| token.as_str())
    }

    /// Every token whose synonym list contains `surface`. Shared surfaces
    /// (e.g. `under` naming both `below` and `under`) return several tokens.
    pub fn tokens_for_surface(&self, surface: &str) -> Vec<RelationToken> {
        self.entries
            .iter()
            .filter(|(_, phrases)| phrases.iter().any(|p| p == surface))
            .map(|(t, _)| *t)
            .collect()
    }

    /// All known surfaces, longest first; used by the statement parser.
    pub fn all_surfaces(&self) -> Vec<&str> {
        let mut out: Vec<&str> = self
            .entries
            .values()
            .flatten()
            .map(String::as_str)
            .collect();
        out.sort_by_key(|s| std::cmp::Reverse(s.len()));
        out.dedup();
        out
    }
}

/// A templated referential statement together with its generation context.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferentialStatement {
    pub text: String,
    pub scene_id: String,
    pub target_id: ObjectId,
    pub source_edge: SpatialEdge,
    /// The surface phrase actually used for the relation (one of the synonyms).
    pub surface: String,
    pub disambiguators: BTreeSet<Disambiguator>,
}

impl ReferentialStatement {
    pub fn new(
        text: impl Into<String>,
        scene_id: impl Into<String>,
        target_id: ObjectId,
        source_edge: SpatialEdge,
        surface: impl Into<String>,
        disambiguators: BTreeSet<Disambiguator>,
    ) -> Result<Self, StatementError> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(StatementError::EmptyText);
        }
        if target_id != source_edge.target_id() {
            return Err(StatementError::TargetMismatch {
                target: target_id,
                edge_target: source_edge.target_id(),
            });
        }
        Ok(Self {
            text,
            scene_id: scene_id.into(),
            target_id,
            source_edge,
            surface: surface.into(),
            disambiguators,
        })
    }
}

/// What a statement asserts about its target: class plus optional attribute
/// words, a relation surface phrase, and one or two anchor descriptions.
#[derive(Debug, Clone, PartialEq)]
pub struct Description {
    pub class_label: String,
    pub color: Option<String>,
    pub size: Option<SizeWord>,
    pub surface: String,
    pub anchors: Vec<AnchorDescription>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnchorDescription {
    pub class_label: String,
    pub color: Option<String>,
}

impl AnchorDescription {
    fn render(&self) -> String {
        match &self.color {
            Some(c) => format!("{c} {}", self.class_label),
            None => self.class_label.clone(),
        }
    }
}

/// The size word for a node, relative to the in-scene median volume of its
/// class. Returns `None` when the node sits exactly at the median (including
/// the single-instance case), since neither `small` nor `large` applies.
pub fn size_word(node: &ObjectNode, graph: &SceneGraph) -> Option<SizeWord> {
    let mut volumes: Vec<f64> = graph
        .nodes()
        .iter()
        .filter(|n| n.class_label == node.class_label)
        .map(ObjectNode::volume)
        .collect();
    volumes.sort_by(|a, b| a.partial_cmp(b).expect("finite volumes"));
    let mid = volumes.len() / 2;
    let median = if volumes.len() % 2 == 1 {
        volumes[mid]
    } else {
        (volumes[mid - 1] + volumes[mid]) / 2.0
    };
    let v = node.volume();
    if v < median {
        Some(SizeWord::Small)
    } else if v > median {
        Some(SizeWord::Large)
    } else {
        None
    }
}

fn anchor_matches(id: ObjectId, desc: &AnchorDescription, graph: &SceneGraph) -> bool {
    let Some(node) = graph.node(id) else {
        return false;
    };
    if node.class_label != desc.class_label {
        return false;
    }
    match &desc.color {
        Some(c) => node.canonical_color() == Some(c.as_str()),
        None => true,
    }
}

fn edge_matches(
    edge: &SpatialEdge,
    tokens: &[RelationToken],
    desc: &Description,
    graph: &SceneGraph,
) -> bool {
    match edge.relation() {
        Relation::Closed(token) => {
            if !tokens.contains(token) {
                return false;
            }
            let anchors = edge.anchor_ids();
            match (anchors.len(), desc.anchors.len()) {
                (1, 1) => anchor_matches(anchors[0], &desc.anchors[0], graph),
                (2, 2) => {
                    (anchor_matches(anchors[0], &desc.anchors[0], graph)
                        && anchor_matches(anchors[1], &desc.anchors[1], graph))
                        || (anchor_matches(anchors[0], &desc.anchors[1], graph)
                            && anchor_matches(anchors[1], &desc.anchors[0], graph))
                }
                _ => false,
            }
        }
        Relation::Open(text) => {
            desc.anchors.len() == 1
                && text == &desc.surface
                && anchor_matches(edge.anchor_ids()[0], &desc.anchors[0], graph)
        }
    }
}

/// All objects a description could refer to: nodes matching the class and
/// attribute words that have a relation edge matching any token reading of the
/// surface phrase, with anchors matching the anchor descriptions.
pub fn matching_targets(
    graph: &SceneGraph,
    relations: &[SpatialEdge],
    desc: &Description,
    synonyms: &SynonymTable,
) -> BTreeSet<ObjectId> {
    let tokens = synonyms.tokens_for_surface(&desc.surface);
    let mut out = BTreeSet::new();
    for node in graph.nodes() {
        if node.class_label != desc.class_label {
            continue;
        }
        if let Some(color) = &desc.color {
            if node.canonical_color() != Some(color.as_str()) {
                continue;
            }
        }
        if let Some(size) = desc.size {
            if size_word(node, graph) != Some(size) {
                continue;
            }
        }
        let satisfied = relations.iter().any(|e| {
            e.target_id() == node.object_id && edge_matches(e, &tokens, desc, graph)
        });
        if satisfied {
            out.insert(node.object_id);
        }
    }
    out
}

fn anchor_description(anchor: &ObjectNode, graph: &SceneGraph) -> AnchorDescription {
    // Add the anchor's color only when its class alone is ambiguous in-scene.
    let color = if graph.class_count(&anchor.class_label) > 1 {
        anchor.canonical_color().map(str::to_string)
    } else {
        None
    };
    AnchorDescription {
        class_label: anchor.class_label.clone(),
        color,
    }
}

fn render_text(desc: &Description) -> String {
    let mut subject = String::from("the ");
    if let Some(color) = &desc.color {
        subject.push_str(color);
        subject.push(' ');
    }
    if let Some(size) = desc.size {
        subject.push_str(size.as_str());
        subject.push(' ');
    }
    subject.push_str(&desc.class_label);
    if desc.anchors.len() == 2 {
        format!(
            "{subject} that is between the {} and the {}",
            desc.anchors[0].render(),
            desc.anchors[1].render()
        )
    } else {
        format!(
            "{subject} that is {} the {}",
            desc.surface,
            desc.anchors[0].render()
        )
    }
}

/// Disambiguator sets to try, from weakest to strongest: none, then color,
/// then color plus size, skipping attributes the target does not have.
fn disambiguator_ladder(target: &ObjectNode, graph: &SceneGraph) -> Vec<BTreeSet<Disambiguator>> {
    let mut ladder = vec![BTreeSet::new()];
    if target.canonical_color().is_some() {
        ladder.push(BTreeSet::from([Disambiguator::Color]));
    }
    if size_word(target, graph).is_some() {
        let mut next = ladder.last().expect("non-empty").clone();
        next.insert(Disambiguator::Size);
        ladder.push(next);
    }
    ladder
}

fn description_for(
    target: &ObjectNode,
    edge: &SpatialEdge,
    surface: &str,
    disambiguators: &BTreeSet<Disambiguator>,
    graph: &SceneGraph,
) -> Description {
    let anchors = edge
        .anchor_ids()
        .iter()
        .map(|&id| anchor_description(graph.node(id).expect("validated edge"), graph))
        .collect();
    Description {
        class_label: target.class_label.clone(),
        color: disambiguators
            .contains(&Disambiguator::Color)
            .then(|| target.canonical_color().expect("ladder checked").to_string()),
        size: disambiguators
            .contains(&Disambiguator::Size)
            .then(|| size_word(target, graph).expect("ladder checked")),
        surface: surface.to_string(),
        anchors,
    }
}

/// Generates every unambiguous statement: one per (closed edge, synonym
/// surface) that uniquely identifies its target. Open-vocabulary edges do not
/// instantiate the template and are skipped. Generation is deterministic; the
/// seed only affects the later synonym-sampling stage and is accepted here so
/// both stages share a call signature.
pub fn generate_statements(
    graph: &SceneGraph,
    synonyms: &SynonymTable,
    _seed: u64,
) -> Vec<ReferentialStatement> {
    let relations = graph.edges();
    let mut edges: Vec<&SpatialEdge> = relations.iter().collect();
    edges.sort_by_key(|e| e.sort_key());

    let mut out = Vec::new();
    for edge in edges {
        let Some(token) = edge.relation().token() else {
            continue;
        };
        let target = graph.node(edge.target_id()).expect("validated edge");
        let ladder = disambiguator_ladder(target, graph);
        for surface in synonyms.surfaces(token) {
            for disambiguators in &ladder {
                let desc = description_for(target, edge, surface, disambiguators, graph);
                let candidates = matching_targets(graph, relations, &desc, synonyms);
                debug_assert!(candidates.contains(&target.object_id));
                if candidates.len() == 1 {
                    out.push(
                        ReferentialStatement::new(
                            render_text(&desc),
                            graph.scene_id(),
                            target.object_id,
                            (*edge).clone(),
                            surface.clone(),
                            disambiguators.clone(),
                        )
                        .expect("template text is non-empty"),
                    );
                    // First unique description wins: minimal disambiguators.
                    break;
                }
            }
        }
    }
    out
}

/// Whether more than one object satisfies the statement's description.
///
/// The check is surface-level: a phrase shared by several relation tokens
/// (e.g. `under`) matches edges of all of them. Errors when the statement's
/// source edge is not among `relations`.
pub fn is_ambiguous(
    statement: &ReferentialStatement,
    graph: &SceneGraph,
    relations: &[SpatialEdge],
    synonyms: &SynonymTable,
) -> Result<bool, StatementError> {
    if !relations.contains(&statement.source_edge) {
        return Err(StatementError::UnknownEdge(statement.source_edge.to_string()));
    }
    let target = graph
        .node(statement.target_id)
        .ok_or(StatementError::UnknownTarget(statement.target_id))?;
    let desc = description_for(
        target,
        &statement.source_edge,
        &statement.surface,
        &statement.disambiguators,
        graph,
    );
    Ok(matching_targets(graph, relations, &desc, synonyms).len() > 1)
}

/// Keeps exactly one statement per distinct source edge, chosen uniformly by a
/// seeded generator. Statements over distinct edges are all retained. Output
/// is ordered by edge sort key; the same seed always selects the same subset.
pub fn sample_synonym_statements(
    statements: &[ReferentialStatement],
    seed: u64,
) -> Vec<ReferentialStatement> {
    let mut groups: BTreeMap<(ObjectId, String, Vec<ObjectId>), Vec<&ReferentialStatement>> =
        BTreeMap::new();
    for statement in statements {
        groups
            .entry(statement.source_edge.sort_key())
            .or_default()
            .push(statement);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    groups
        .into_values()
        .map(|group| {
            let pick = rng.random_range(0..group.len());
            group[pick].clone()
        })
        .collect()
}

/// Parses a templated statement back into its description. Used by the
/// offline oracle grounder and the random-baseline client.
pub fn parse_statement_text(
    text: &str,
    graph: &SceneGraph,
    synonyms: &SynonymTable,
) -> Result<Description, StatementError> {
    let text = text.trim().trim_end_matches('.').to_lowercase();
    let rest = text.strip_prefix("the ").ok_or_else(parse_err(&text))?;
    let (subject, relation_part) = rest.split_once(" that is ").ok_or_else(parse_err(&text))?;

    let classes: BTreeSet<&str> = graph
        .nodes()
        .iter()
        .map(|n| n.class_label.as_str())
        .collect();
    let mut colors: Vec<&str> = graph
        .nodes()
        .iter()
        .filter_map(ObjectNode::canonical_color)
        .collect();
    colors.sort_by_key(|c| std::cmp::Reverse(c.len()));
    colors.dedup();

    let (color, size, class_label) =
        parse_subject(subject, &classes, &colors).ok_or_else(parse_err(&text))?;

    let (surface, anchors) = if let Some(between_part) = relation_part.strip_prefix("between the ")
    {
        let (first, second) = between_part
            .split_once(" and the ")
            .ok_or_else(parse_err(&text))?;
        let a1 = parse_anchor(first, &classes, &colors).ok_or_else(parse_err(&text))?;
        let a2 = parse_anchor(second, &classes, &colors).ok_or_else(parse_err(&text))?;
        ("between".to_string(), vec![a1, a2])
    } else {
        let mut found = None;
        for candidate in synonyms.all_surfaces() {
            if let Some(anchor_part) =
                relation_part.strip_prefix(&format!("{candidate} the "))
            {
                found = Some((candidate.to_string(), anchor_part));
                break;
            }
        }
        // Open-vocabulary phrases are not in the synonym table; fall back to
        // the first " the " split.
        let (surface, anchor_part) = match found {
            Some(pair) => pair,
            None => {
                let (s, a) = relation_part
                    .split_once(" the ")
                    .ok_or_else(parse_err(&text))?;
                (s.to_string(), a)
            }
        };
        let anchor = parse_anchor(anchor_part, &classes, &colors).ok_or_else(parse_err(&text))?;
        (surface, vec![anchor])
    };

    Ok(Description {
        class_label,
        color,
        size,
        surface,
        anchors,
    })
}

fn parse_err(text: &str) -> impl Fn() -> StatementError + '_ {
    move || StatementError::Malformed(text.to_string())
}

/// Splits `[color] [size] label`, preferring the most specific parse whose
/// remaining label names a class present in the scene.
fn parse_subject(
    subject: &str,
    classes: &BTreeSet<&str>,
    colors: &[&str],
) -> Option<(Option<String>, Option<SizeWord>, String)> {
    let color_prefix = colors
        .iter()
        .find(|c| subject.strip_prefix(**c).is_some_and(|r| r.starts_with(' ')));

    let mut candidates: Vec<(Option<String>, Option<SizeWord>, &str)> = Vec::new();
    if let Some(&color) = color_prefix {
        let after_color = subject[color.len()..].trim_start();
        if let Some((word, rest)) = after_color.split_once(' ') {
            if let Some(size) = SizeWord::parse(word) {
                candidates.push((Some(color.to_string()), Some(size), rest));
            }
        }
        candidates.push((Some(color.to_string()), None, after_color));
    }
    if let Some((word, rest)) = subject.split_once(' ') {
        if let Some(size) = SizeWord::parse(word) {
            candidates.push((None, Some(size), rest));
        }
    }
    candidates.push((None, None, subject));

    candidates
        .into_iter()
        .find(|(_, _, label)| classes.contains(label))
        .map(|(color, size, label)| (color, size, label.to_string()))
}

fn parse_anchor(
    part: &str,
    classes: &BTreeSet<&str>,
    colors: &[&str],
) -> Option<AnchorDescription> {
    if let Some(&color) = colors
        .iter()
        .find(|c| part.strip_prefix(**c).is_some_and(|r| r.starts_with(' ')))
    {
        let label = part[color.len()..].trim_start();
        if classes.contains(label) {
            return Some(AnchorDescription {
                class_label: label.to_string(),
                color: Some(color.to_string()),
            });
        }
    }
    if classes.contains(part) {
        return Some(AnchorDescription {
            class_label: part.to_string(),
            color: None,
        });
    }
    None
}
