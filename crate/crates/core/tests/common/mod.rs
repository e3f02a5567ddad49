//! Shared test utilities: seeded random scene synthesis and an independent
//! brute-force evaluator of the geometric relation predicates.
//!
//! The oracle here is written from the predicate definitions over min/max
//! corner intervals, on purpose not sharing code with the library's
//! implementation, so the two can be compared edge-for-edge on random scenes.

#![allow(dead_code)]

use std::collections::BTreeSet;

use rand::prelude::IndexedRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use relscene::relations::RelationConfig;
use relscene::scene::{ObjectNode, SceneGraph};

pub const LABELS: [&str; 12] = [
    "chair",
    "table",
    "lamp",
    "bed",
    "sofa",
    "shelf",
    "plant",
    "mug",
    "monitor",
    "desk",
    "nightstand",
    "coffee table",
];

pub const COLORS: [&str; 7] = ["red", "blue", "green", "brown", "white", "black", "gray"];

/// A random indoor-ish scene: n axis-aligned boxes in a 10 x 10 x 3 m room.
pub fn random_scene(rng: &mut ChaCha8Rng, scene_id: &str, n_nodes: usize) -> SceneGraph {
    let mut nodes = Vec::with_capacity(n_nodes);
    for id in 0..n_nodes {
        let label = *LABELS.choose(rng).unwrap();
        let n_colors = [0usize, 0, 1, 1, 1, 2][rng.random_range(0..6)];
        let mut colors: Vec<String> = Vec::new();
        while colors.len() < n_colors {
            let c = COLORS.choose(rng).unwrap().to_string();
            if !colors.contains(&c) {
                colors.push(c);
            }
        }
        let size = [
            rng.random_range(0.1..2.0),
            rng.random_range(0.1..2.0),
            rng.random_range(0.1..2.0),
        ];
        let center = [
            rng.random_range(-5.0..5.0),
            rng.random_range(-5.0..5.0),
            rng.random_range(0.0..3.0),
        ];
        nodes.push(ObjectNode::new(id as u32, label, colors, center, size).unwrap());
    }
    SceneGraph::build(scene_id, nodes, vec![]).unwrap()
}

/// Boxes as raw min/max corner intervals, the oracle's working form.
#[derive(Debug, Clone, Copy)]
pub struct OracleBox {
    pub id: u32,
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl OracleBox {
    pub fn from_node(node: &ObjectNode) -> Self {
        Self {
            id: node.object_id,
            min: node.min_corner(),
            max: node.max_corner(),
        }
    }

    fn center(&self) -> [f64; 3] {
        [
            (self.min[0] + self.max[0]) / 2.0,
            (self.min[1] + self.max[1]) / 2.0,
            (self.min[2] + self.max[2]) / 2.0,
        ]
    }

    fn xy_area(&self) -> f64 {
        (self.max[0] - self.min[0]) * (self.max[1] - self.min[1])
    }

    fn xy_diag(&self) -> f64 {
        let dx = self.max[0] - self.min[0];
        let dy = self.max[1] - self.min[1];
        (dx * dx + dy * dy).sqrt()
    }
}

fn interval_overlap(lo1: f64, hi1: f64, lo2: f64, hi2: f64) -> f64 {
    (hi1.min(hi2) - lo1.max(lo2)).max(0.0)
}

pub fn oracle_above(a: &OracleBox, b: &OracleBox, cfg: &RelationConfig) -> bool {
    if a.min[2] < b.max[2] - cfg.contact_epsilon {
        return false;
    }
    let overlap = interval_overlap(a.min[0], a.max[0], b.min[0], b.max[0])
        * interval_overlap(a.min[1], a.max[1], b.min[1], b.max[1]);
    overlap >= cfg.overlap_fraction * a.xy_area().min(b.xy_area())
}

pub fn oracle_on(a: &OracleBox, b: &OracleBox, cfg: &RelationConfig) -> bool {
    oracle_above(a, b, cfg) && a.min[2] - b.max[2] <= cfg.contact_epsilon
}

pub fn oracle_in(a: &OracleBox, b: &OracleBox, cfg: &RelationConfig) -> bool {
    for axis in 0..3 {
        if a.min[axis] < b.min[axis] - cfg.contact_epsilon {
            return false;
        }
        if a.max[axis] > b.max[axis] + cfg.contact_epsilon {
            return false;
        }
    }
    true
}

pub fn oracle_near(a: &OracleBox, b: &OracleBox, cfg: &RelationConfig) -> bool {
    if oracle_above(a, b, cfg)
        || oracle_above(b, a, cfg)
        || oracle_in(a, b, cfg)
        || oracle_in(b, a, cfg)
    {
        return false;
    }
    let ca = a.center();
    let cb = b.center();
    let dist = ((ca[0] - cb[0]).powi(2) + (ca[1] - cb[1]).powi(2)).sqrt();
    dist <= cfg.near_factor * (a.xy_diag() / 2.0 + b.xy_diag() / 2.0)
}

pub fn oracle_between(
    target: &OracleBox,
    a1: &OracleBox,
    a2: &OracleBox,
    cfg: &RelationConfig,
) -> bool {
    let p = target.center();
    let s1 = a1.center();
    let s2 = a2.center();
    let (dx, dy) = (s2[0] - s1[0], s2[1] - s1[1]);
    if dx == 0.0 && dy == 0.0 {
        return false;
    }
    // Strict interiority: positive projection onto the segment from both ends.
    let from_s1 = (p[0] - s1[0]) * dx + (p[1] - s1[1]) * dy;
    let from_s2 = (p[0] - s2[0]) * (-dx) + (p[1] - s2[1]) * (-dy);
    if from_s1 <= 0.0 || from_s2 <= 0.0 {
        return false;
    }
    // Perpendicular distance via the 2D cross product.
    let cross = (p[0] - s1[0]) * dy - (p[1] - s1[1]) * dx;
    let perp = cross.abs() / (dx * dx + dy * dy).sqrt();
    perp <= cfg.between_corridor_factor * (a1.xy_diag() + a2.xy_diag()) / 2.0
}

/// Naive enumeration of every edge the configuration admits, rendered in the
/// `target|relation|anchor` line format for order-free comparison.
pub fn oracle_edge_lines(graph: &SceneGraph, cfg: &RelationConfig) -> BTreeSet<String> {
    let excluded: BTreeSet<&str> = cfg
        .excluded_relations
        .iter()
        .map(|t| t.as_str())
        .collect();
    let boxes: Vec<OracleBox> = graph.nodes().iter().map(OracleBox::from_node).collect();
    let mut lines = BTreeSet::new();
    let mut push = |line: String| {
        let relation = line.split('|').nth(1).unwrap().to_string();
        if !excluded.contains(relation.as_str()) {
            lines.insert(line);
        }
    };

    for a in &boxes {
        for b in &boxes {
            if a.id == b.id {
                continue;
            }
            if oracle_above(a, b, cfg) {
                push(format!("{}|above|{}", a.id, b.id));
                push(format!("{}|below|{}", b.id, a.id));
            }
            if oracle_on(a, b, cfg) {
                push(format!("{}|on|{}", a.id, b.id));
                push(format!("{}|under|{}", b.id, a.id));
            }
            if oracle_in(a, b, cfg) {
                push(format!("{}|in|{}", a.id, b.id));
            }
            if a.id < b.id && oracle_near(a, b, cfg) {
                push(format!("{}|near|{}", a.id, b.id));
                push(format!("{}|near|{}", b.id, a.id));
            }
        }
    }

    for target in &boxes {
        if boxes.len() < 2 {
            break;
        }
        let mut closest = None;
        let mut farthest = None;
        for other in &boxes {
            if other.id == target.id {
                continue;
            }
            let tc = target.center();
            let oc = other.center();
            let d = ((tc[0] - oc[0]).powi(2) + (tc[1] - oc[1]).powi(2) + (tc[2] - oc[2]).powi(2))
                .sqrt();
            closest = match closest {
                None => Some((d, other.id)),
                Some((bd, bid)) if d < bd || (d == bd && other.id < bid) => Some((d, other.id)),
                keep => keep,
            };
            farthest = match farthest {
                None => Some((d, other.id)),
                Some((bd, bid)) if d > bd || (d == bd && other.id < bid) => Some((d, other.id)),
                keep => keep,
            };
        }
        if let Some((_, id)) = closest {
            push(format!("{}|closest|{}", target.id, id));
        }
        if let Some((_, id)) = farthest {
            push(format!("{}|farthest|{}", target.id, id));
        }
    }

    for target in &boxes {
        for a1 in &boxes {
            for a2 in &boxes {
                if a1.id >= a2.id || a1.id == target.id || a2.id == target.id {
                    continue;
                }
                if oracle_between(target, a1, a2, cfg) {
                    push(format!("{}|between|{} and {}", target.id, a1.id, a2.id));
                }
            }
        }
    }

    lines
}
