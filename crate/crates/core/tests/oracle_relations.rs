//! Relation extraction checked against the independent brute-force oracle.

mod common;

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{oracle_above, oracle_between, oracle_edge_lines, oracle_near, oracle_on, OracleBox};
use relscene::relations::{binary_relations, compute_relations, ternary_between, RelationConfig};
use relscene::scene::{ObjectNode, RelationToken};

fn random_node(rng: &mut ChaCha8Rng, id: u32) -> ObjectNode {
    ObjectNode::new(
        id,
        "obj",
        vec![],
        [
            rng.random_range(-3.0..3.0),
            rng.random_range(-3.0..3.0),
            rng.random_range(0.0..3.0),
        ],
        [
            rng.random_range(0.1..2.0),
            rng.random_range(0.1..2.0),
            rng.random_range(0.1..2.0),
        ],
    )
    .unwrap()
}

#[test]
fn binary_predicates_match_oracle_on_random_pairs() {
    let cfg = RelationConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0001);
    for _ in 0..5_000 {
        let a = random_node(&mut rng, 0);
        let b = random_node(&mut rng, 1);
        let got = binary_relations(&a, &b, &cfg);
        let (oa, ob) = (OracleBox::from_node(&a), OracleBox::from_node(&b));
        let mut expected = BTreeSet::new();
        if oracle_above(&oa, &ob, &cfg) {
            expected.insert(RelationToken::Above);
        }
        if oracle_above(&ob, &oa, &cfg) {
            expected.insert(RelationToken::Below);
        }
        if oracle_on(&oa, &ob, &cfg) {
            expected.insert(RelationToken::On);
        }
        if oracle_on(&ob, &oa, &cfg) {
            expected.insert(RelationToken::Under);
        }
        if oracle_near(&oa, &ob, &cfg) {
            expected.insert(RelationToken::Near);
        }
        if common::oracle_in(&oa, &ob, &cfg) {
            expected.insert(RelationToken::In);
        }
        assert_eq!(got, expected, "disagreement for {a:?} vs {b:?}");
    }
}

#[test]
fn ternary_between_matches_oracle_on_random_triples() {
    let cfg = RelationConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0002);
    let mut emitted = 0usize;
    for _ in 0..5_000 {
        let target = random_node(&mut rng, 0);
        let a1 = random_node(&mut rng, 1);
        let a2 = random_node(&mut rng, 2);
        let got = ternary_between(&target, &a1, &a2, &cfg).is_some();
        let expected = oracle_between(
            &OracleBox::from_node(&target),
            &OracleBox::from_node(&a1),
            &OracleBox::from_node(&a2),
            &cfg,
        );
        assert_eq!(got, expected, "disagreement for {target:?} between {a1:?} and {a2:?}");
        emitted += usize::from(got);
    }
    assert!(emitted > 0, "sampling never produced a between edge");
}

#[test]
fn full_extraction_matches_oracle_on_random_scenes() {
    let cfg = RelationConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0003);
    for scene_idx in 0..40 {
        let n = rng.random_range(2..25);
        let graph = common::random_scene(&mut rng, &format!("scene_{scene_idx}"), n);
        let got: BTreeSet<String> = compute_relations(&graph, &cfg)
            .iter()
            .map(|e| e.to_string())
            .collect();
        let expected = oracle_edge_lines(&graph, &cfg);
        assert_eq!(got, expected, "scene {scene_idx} with {n} nodes disagrees");
    }
}

#[test]
fn extraction_matches_oracle_with_ordered_relations_enabled() {
    let cfg = RelationConfig {
        excluded_relations: BTreeSet::new(),
        ..RelationConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0004);
    for scene_idx in 0..15 {
        let n = rng.random_range(2..15);
        let graph = common::random_scene(&mut rng, &format!("scene_{scene_idx}"), n);
        let got: BTreeSet<String> = compute_relations(&graph, &cfg)
            .iter()
            .map(|e| e.to_string())
            .collect();
        let expected = oracle_edge_lines(&graph, &cfg);
        assert_eq!(got, expected, "scene {scene_idx} with {n} nodes disagrees");
    }
}
