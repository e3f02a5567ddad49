//! Closed-vocabulary spatial relation inference from axis-aligned bounding
//! boxes.
//!
//! Relations are derived purely from box geometry in a z-up world frame:
//!
//! * `above` / `below`: vertical separation with overlapping horizontal
//!   footprints.
//! * `on` / `under`: `above` plus contact within `contact_epsilon`.
//! * `near`: horizontal centroid proximity, suppressed whenever a stacking or
//!   containment relation already holds in either direction so that `near`
//!   stays symmetric.
//! * `in`: full containment inside the anchor box expanded by
//!   `contact_epsilon`.
//! * `closest` / `farthest`: ordered by centroid distance (excluded by
//!   default, matching the statement corpus which drops them as noise).
//! * `between`: target centroid projects strictly inside the horizontal
//!   segment joining the two anchors, within a corridor scaled by the mean
//!   anchor footprint diagonal.
//!
//! All functions are pure; [`compute_relations`] post-sorts its output so the
//! result is independent of evaluation order.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::scene::{ObjectId, ObjectNode, Provenance, RelationToken, SceneGraph, SpatialEdge};

/// Thresholds controlling the geometric predicates. All artifact defaults,
/// exposed through the toolkit config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RelationConfig {
    /// Vertical gap (meters) still counted as contact for `on`/`under`.
    pub contact_epsilon: f64,
    /// Scale on the sum of half footprint diagonals for `near`.
    pub near_factor: f64,
    /// Minimum footprint intersection, as a fraction of the smaller footprint,
    /// required for `above`/`below`.
    pub overlap_fraction: f64,
    /// Corridor half-width for `between`, as a factor of the mean anchor
    /// footprint diagonal.
    pub between_corridor_factor: f64,
    /// Tokens never emitted. `closest` and `farthest` are excluded by default:
    /// they hold for every object pair and flood the edge set.
    pub excluded_relations: BTreeSet<RelationToken>,
}

impl Default for RelationConfig {
    fn default() -> Self {
        Self {
            contact_epsilon: 0.05,
            near_factor: 1.0,
            overlap_fraction: 0.25,
            between_corridor_factor: 0.5,
            excluded_relations: BTreeSet::from([RelationToken::Closest, RelationToken::Farthest]),
        }
    }
}

impl RelationConfig {
    /// Checks the threshold invariants.
    pub fn validate(&self) -> Result<(), String> {
        if !(self.contact_epsilon >= 0.0) {
            return Err(format!(
                "contact_epsilon must be >= 0, got {}",
                self.contact_epsilon
            ));
        }
        if !(self.near_factor > 0.0) {
            return Err(format!("near_factor must be > 0, got {}", self.near_factor));
        }
        if !(self.overlap_fraction > 0.0 && self.overlap_fraction <= 1.0) {
            return Err(format!(
                "overlap_fraction must be in (0, 1], got {}",
                self.overlap_fraction
            ));
        }
        if !(self.between_corridor_factor > 0.0) {
            return Err(format!(
                "between_corridor_factor must be > 0, got {}",
                self.between_corridor_factor
            ));
        }
        Ok(())
    }

    fn excluded(&self, token: RelationToken) -> bool {
        self.excluded_relations.contains(&token)
    }
}

fn horizontal_distance(a: &ObjectNode, b: &ObjectNode) -> f64 {
    let dx = a.center[0] - b.center[0];
    let dy = a.center[1] - b.center[1];
    (dx * dx + dy * dy).sqrt()
}

fn centroid_distance(a: &ObjectNode, b: &ObjectNode) -> f64 {
    let dx = a.center[0] - b.center[0];
    let dy = a.center[1] - b.center[1];
    let dz = a.center[2] - b.center[2];
    (dx * dx + dy * dy + dz * dz).sqrt()
}

/// Intersection area of the two horizontal footprints.
fn footprint_overlap(a: &ObjectNode, b: &ObjectNode) -> f64 {
    let (amin, amax) = (a.min_corner(), a.max_corner());
    let (bmin, bmax) = (b.min_corner(), b.max_corner());
    let ox = (amax[0].min(bmax[0]) - amin[0].max(bmin[0])).max(0.0);
    let oy = (amax[1].min(bmax[1]) - amin[1].max(bmin[1])).max(0.0);
    ox * oy
}

fn is_above(a: &ObjectNode, b: &ObjectNode, cfg: &RelationConfig) -> bool {
    let a_bottom = a.min_corner()[2];
    let b_top = b.max_corner()[2];
    a_bottom >= b_top - cfg.contact_epsilon
        && footprint_overlap(a, b)
            >= cfg.overlap_fraction * a.footprint_area().min(b.footprint_area())
}

fn is_on(a: &ObjectNode, b: &ObjectNode, cfg: &RelationConfig) -> bool {
    is_above(a, b, cfg) && (a.min_corner()[2] - b.max_corner()[2]) <= cfg.contact_epsilon
}

fn is_in(a: &ObjectNode, b: &ObjectNode, cfg: &RelationConfig) -> bool {
    let (amin, amax) = (a.min_corner(), a.max_corner());
    let (bmin, bmax) = (b.min_corner(), b.max_corner());
    (0..3).all(|i| {
        amin[i] >= bmin[i] - cfg.contact_epsilon && amax[i] <= bmax[i] + cfg.contact_epsilon
    })
}

fn is_near(a: &ObjectNode, b: &ObjectNode, cfg: &RelationConfig) -> bool {
    // Suppress near whenever a vertical-stack or containment relation holds in
    // either direction; this keeps near symmetric.
    if is_above(a, b, cfg) || is_above(b, a, cfg) || is_in(a, b, cfg) || is_in(b, a, cfg) {
        return false;
    }
    let reach = cfg.near_factor * (a.horizontal_diagonal() + b.horizontal_diagonal()) / 2.0;
    horizontal_distance(a, b) <= reach
}

/// Binary relations of `a` relative to `b`, after exclusion filtering.
pub fn binary_relations(
    a: &ObjectNode,
    b: &ObjectNode,
    cfg: &RelationConfig,
) -> BTreeSet<RelationToken> {
    debug_assert_ne!(a.object_id, b.object_id);
    let mut out = BTreeSet::new();
    if is_above(a, b, cfg) {
        out.insert(RelationToken::Above);
    }
    if is_above(b, a, cfg) {
        out.insert(RelationToken::Below);
    }
    if is_on(a, b, cfg) {
        out.insert(RelationToken::On);
    }
    if is_on(b, a, cfg) {
        out.insert(RelationToken::Under);
    }
    if is_near(a, b, cfg) {
        out.insert(RelationToken::Near);
    }
    if is_in(a, b, cfg) {
        out.insert(RelationToken::In);
    }
    out.retain(|t| !cfg.excluded(*t));
    out
}

/// Emits `closest`/`farthest` edges for `target` over the anchor candidates,
/// by centroid distance with ties broken toward the lower anchor id. Tokens in
/// the exclusion set are suppressed, so this is empty under the default config.
pub fn ordered_relations(
    target: &ObjectNode,
    others: &[ObjectNode],
    cfg: &RelationConfig,
) -> Vec<SpatialEdge> {
    let mut best: Option<(f64, ObjectId)> = None;
    let mut worst: Option<(f64, ObjectId)> = None;
    for other in others {
        if other.object_id == target.object_id {
            continue;
        }
        let d = centroid_distance(target, other);
        let key = (d, other.object_id);
        if best.is_none_or(|cur| key < cur) {
            best = Some(key);
        }
        if worst.is_none_or(|(cd, cid)| d > cd || (d == cd && other.object_id < cid)) {
            worst = Some(key);
        }
    }
    let mut edges = Vec::new();
    if let Some((_, id)) = best {
        if !cfg.excluded(RelationToken::Closest) {
            edges.push(
                SpatialEdge::closed(target.object_id, RelationToken::Closest, id, Provenance::Geometric)
                    .expect("distinct ids"),
            );
        }
    }
    if let Some((_, id)) = worst {
        if !cfg.excluded(RelationToken::Farthest) {
            edges.push(
                SpatialEdge::closed(target.object_id, RelationToken::Farthest, id, Provenance::Geometric)
                    .expect("distinct ids"),
            );
        }
    }
    edges
}

/// Emits a `between` edge when the target centroid projects strictly inside
/// the horizontal segment joining the anchor centroids and lies within the
/// corridor around it. Anchors in the returned edge are sorted ascending.
pub fn ternary_between(
    target: &ObjectNode,
    anchor_a: &ObjectNode,
    anchor_b: &ObjectNode,
    cfg: &RelationConfig,
) -> Option<SpatialEdge> {
    if cfg.excluded(RelationToken::Between) {
        return None;
    }
    if target.object_id == anchor_a.object_id
        || target.object_id == anchor_b.object_id
        || anchor_a.object_id == anchor_b.object_id
    {
        return None;
    }
    let sx = anchor_b.center[0] - anchor_a.center[0];
    let sy = anchor_b.center[1] - anchor_a.center[1];
    let seg_len2 = sx * sx + sy * sy;
    if seg_len2 <= 0.0 {
        return None;
    }
    let px = target.center[0] - anchor_a.center[0];
    let py = target.center[1] - anchor_a.center[1];
    let t = (px * sx + py * sy) / seg_len2;
    if t <= 0.0 || t >= 1.0 {
        return None;
    }
    let ex = px - t * sx;
    let ey = py - t * sy;
    let perp = (ex * ex + ey * ey).sqrt();
    let corridor = cfg.between_corridor_factor
        * (anchor_a.horizontal_diagonal() + anchor_b.horizontal_diagonal())
        / 2.0;
    if perp > corridor {
        return None;
    }
    Some(
        SpatialEdge::between(
            target.object_id,
            anchor_a.object_id,
            anchor_b.object_id,
            Provenance::Geometric,
        )
        .expect("distinct ids"),
    )
}

/// Derives the full closed-vocabulary edge set of a graph: binary relations
/// over all ordered pairs, ordered relations per node, and `between` over all
/// (target, anchor pair) triples. Output is sorted by
/// (target, relation, anchors) and carries geometric provenance.
pub fn compute_relations(graph: &SceneGraph, cfg: &RelationConfig) -> Vec<SpatialEdge> {
    let nodes = graph.nodes();
    let mut edges = Vec::new();
    for a in nodes {
        for b in nodes {
            if a.object_id == b.object_id {
                continue;
            }
            for token in binary_relations(a, b, cfg) {
                edges.push(
                    SpatialEdge::closed(a.object_id, token, b.object_id, Provenance::Geometric)
                        .expect("distinct ids"),
                );
            }
        }
        edges.extend(ordered_relations(a, nodes, cfg));
    }
    for target in nodes {
        for (i, anchor_a) in nodes.iter().enumerate() {
            if anchor_a.object_id == target.object_id {
                continue;
            }
            for anchor_b in &nodes[i + 1..] {
                if anchor_b.object_id == target.object_id {
                    continue;
                }
                if let Some(edge) = ternary_between(target, anchor_a, anchor_b, cfg) {
                    edges.push(edge);
                }
            }
        }
    }
    edges.sort_by_key(SpatialEdge::sort_key);
    edges
}
