//! Scene graphs with spatial-relation edges for language grounding.
//!
//! The crate builds 3D scene graphs from object bounding-box metadata, infers
//! closed-vocabulary spatial edges from the geometry, generates unambiguous
//! templated referential statements, serializes graphs into compact text for
//! chat-model prompts, grounds statements to object ids through pluggable
//! model clients, derives open-vocabulary edges from annotated images via a
//! vision-model client, and evaluates grounding accuracy with a random class
//! baseline and McNemar's paired significance test.
//!
//! Modules follow the pipeline order:
//!
//! * [`scene`] — the graph data model and its structural invariants.
//! * [`relations`] — geometric edge inference from bounding boxes.
//! * [`statements`] — statement generation, ambiguity checks, synonym
//!   sampling.
//! * [`serializer`] — graph-to-text variants (`g`, `g_pos`, `g_edges`,
//!   `g_genedges`) and their inverse parsers.
//! * [`grounding`] — prompt assembly, model clients, output parsing, and the
//!   offline oracle grounder.
//! * [`vision`] — image selection, mask outlining, open-edge generation, and
//!   edge substitution.
//! * [`eval`] — accuracy, random baseline, McNemar's test, run reports.
//! * [`io`] — the on-disk scene/statement/report formats.

pub mod eval;
pub mod grounding;
pub mod io;
pub mod relations;
pub mod scene;
pub mod serializer;
pub mod statements;
pub mod vision;

pub use eval::{
    accuracy, compare_runs, mcnemar, McNemarResult, PairedOutcomeTable, RunReport, Significance,
};
pub use grounding::{
    build_prompt, ground, oracle_ground, parse_model_output, GroundingResult, ModelClient,
    PromptConfig,
};
pub use relations::{compute_relations, RelationConfig};
pub use scene::{
    ObjectId, ObjectNode, Provenance, Relation, RelationCategory, RelationToken, SceneGraph,
    SpatialEdge, Vocabulary,
};
pub use serializer::{serialize_edge, serialize_graph, serialize_node, GraphVariant};
pub use statements::{
    generate_statements, is_ambiguous, sample_synonym_statements, ReferentialStatement,
    SynonymTable,
};
pub use vision::{
    generate_open_edge, outline_objects, select_image, substitute_edges, GeneratedEdge,
    Observation, OutlineStyle,
};
