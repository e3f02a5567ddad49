//! Object grounding through a chat-model client: prompt construction, output
//! parsing, and a deterministic oracle grounder for offline testing.
//!
//! Every request is stateless — the system and user message are rebuilt from
//! scratch for each statement and no prior-turn content is ever included, so
//! two identical calls produce byte-identical prompts.

pub mod client;

use std::collections::BTreeSet;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use client::{
    ClientError, HttpChatClient, ModelClient, OracleClient, RandomBaselineClient, ReplayClient,
};

use crate::scene::{ObjectId, SceneGraph, SpatialEdge};
use crate::serializer::{serialize_graph, GraphVariant, SerializeError};
use crate::statements::{
    matching_targets, parse_statement_text, ReferentialStatement, SynonymTable,
};

/// Default system message: task, input/output contract, edge vocabulary
/// definitions, and one worked example.
pub const DEFAULT_SYSTEM_TEMPLATE: &str = "\
You are an assistant that grounds referential statements to objects in a 3D scene.\n\
You receive a serialized scene graph and one statement describing a target object.\n\
The scene graph lists objects as lines `id|label` or \
`id|label|colors=...|center=(x,y,z)|size=(sx,sy,sz)` (meters, z axis up), and may list \
spatial edges as lines `target_id|relation|anchor_id`, or \
`target_id|between|anchor1_id and anchor2_id` for the ternary relation.\n\
Edge vocabulary: above (higher than the anchor with overlapping footprint); \
below (inverse of above); on (resting in contact on top of the anchor); \
under (inverse of on); near (close to the anchor); in (contained inside the anchor); \
closest/farthest (nearest/furthest object from the target); \
between (located between the two anchors).\n\
Reply with the ID of the single referenced object and nothing else.\n\
Example: given objects `1|lamp` and `2|bed` and the edge `1|above|2`, the statement \
\"the lamp that is above the bed\" refers to object 1, so the correct reply is: 1";

/// Prompt assembly options.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptConfig {
    /// System message content (task description, edge definitions, example).
    pub system_template: String,
    /// Fold the system content into the user message, for models that accept
    /// a single input message.
    pub merge_system_into_user: bool,
    pub max_output_tokens: u32,
}

impl Default for PromptConfig {
    fn default() -> Self {
        Self {
            system_template: DEFAULT_SYSTEM_TEMPLATE.to_string(),
            merge_system_into_user: false,
            max_output_tokens: 16,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
}

/// An image sent with a message, as base64-encoded raster bytes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageAttachment {
    pub media_type: String,
    pub base64_data: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
    pub image: Option<ImageAttachment>,
}

impl Message {
    pub fn system(content: impl Into<String>) -> Self {
        Self {
            role: Role::System,
            content: content.into(),
            image: None,
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: Role::User,
            content: content.into(),
            image: None,
        }
    }

    pub fn user_with_image(content: impl Into<String>, image: ImageAttachment) -> Self {
        Self {
            role: Role::User,
            content: content.into(),
            image: Some(image),
        }
    }
}

/// One stateless request: an ordered list of messages with no chat memory.
pub type MessageSequence = Vec<Message>;

/// Renders a message sequence to a canonical byte string, for statelessness
/// checks and replay matching.
pub fn render_messages(messages: &MessageSequence) -> String {
    let mut out = String::new();
    for m in messages {
        let role = match m.role {
            Role::System => "system",
            Role::User => "user",
        };
        out.push_str(role);
        out.push_str(":\n");
        out.push_str(&m.content);
        if let Some(img) = &m.image {
            out.push_str("\n[image ");
            out.push_str(&img.media_type);
            out.push(' ');
            out.push_str(&img.base64_data);
            out.push(']');
        }
        out.push('\n');
    }
    out
}

const GRAPH_MARKER: &str = "SCENE GRAPH:\n";
const STATEMENT_MARKER: &str = "\nSTATEMENT: ";
const ANSWER_INSTRUCTION: &str = "Respond with only the ID of the referenced object.";

/// Builds the two-message prompt (system, user), or a single merged user
/// message when the config demands it. The serialized graph and the statement
/// are embedded in the user content.
pub fn build_prompt(
    serialized_graph: &str,
    statement_text: &str,
    cfg: &PromptConfig,
) -> MessageSequence {
    let user = format!(
        "{GRAPH_MARKER}{serialized_graph}{STATEMENT_MARKER}{statement_text}\n\n{ANSWER_INSTRUCTION}"
    );
    if cfg.merge_system_into_user {
        vec![Message::user(format!("{}\n\n{user}", cfg.system_template))]
    } else {
        vec![Message::system(cfg.system_template.clone()), Message::user(user)]
    }
}

/// Recovers the serialized graph text and the statement from a prompt built by
/// [`build_prompt`]. Used by the offline clients.
pub fn extract_prompt_parts(messages: &MessageSequence) -> Option<(String, String)> {
    let user = messages.iter().rev().find(|m| m.role == Role::User)?;
    let (_, after) = user.content.split_once(GRAPH_MARKER)?;
    let (graph_text, rest) = after.split_once(STATEMENT_MARKER)?;
    let statement = rest.lines().next()?.trim();
    Some((graph_text.to_string(), statement.to_string()))
}

/// How the model output was interpreted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParseMode {
    /// The trimmed output was a bare object id.
    Strict,
    /// The output contained exactly one standalone integer token.
    Lenient,
    /// No usable id; counted as incorrect.
    Invalid,
}

/// Result of [`parse_model_output`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParsedOutput {
    pub predicted_id: Option<ObjectId>,
    pub valid_format: bool,
    pub mode: ParseMode,
}

fn invalid() -> ParsedOutput {
    ParsedOutput {
        predicted_id: None,
        valid_format: false,
        mode: ParseMode::Invalid,
    }
}

/// Standalone integer tokens in `raw`: maximal digit runs not embedded in a
/// word and not part of a decimal number.
fn integer_tokens(raw: &str) -> Vec<&str> {
    let bytes = raw.as_bytes();
    let glued = |b: u8| b.is_ascii_alphanumeric() || b == b'_' || b == b'-';
    let mut tokens = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        if !bytes[i].is_ascii_digit() {
            i += 1;
            continue;
        }
        let start = i;
        while i < bytes.len() && bytes[i].is_ascii_digit() {
            i += 1;
        }
        let before_ok = start == 0
            || (!glued(bytes[start - 1])
                && !(bytes[start - 1] == b'.' && start >= 2 && bytes[start - 2].is_ascii_digit()));
        let after_ok = i >= bytes.len()
            || (!glued(bytes[i])
                && !(bytes[i] == b'.' && i + 1 < bytes.len() && bytes[i + 1].is_ascii_digit()));
        if before_ok && after_ok {
            tokens.push(&raw[start..i]);
        }
    }
    tokens
}

/// Parses a model reply into a predicted object id.
///
/// Strict path: the trimmed reply is a single integer naming an existing
/// object. Lenient fallback: the reply contains exactly one standalone integer
/// token. Anything else — several integers, none, or an integer not present in
/// the graph — is an invalid format and never counted as correct.
pub fn parse_model_output(raw: &str, graph: &SceneGraph) -> ParsedOutput {
    let trimmed = raw.trim();
    let (candidate, mode) = if !trimmed.is_empty() && trimmed.bytes().all(|b| b.is_ascii_digit()) {
        (trimmed, ParseMode::Strict)
    } else {
        match integer_tokens(raw).as_slice() {
            [single] => (*single, ParseMode::Lenient),
            _ => return invalid(),
        }
    };
    match candidate.parse::<ObjectId>() {
        Ok(id) if graph.contains(id) => ParsedOutput {
            predicted_id: Some(id),
            valid_format: true,
            mode,
        },
        _ => invalid(),
    }
}

/// Identity of the statement a result belongs to; runs compared with
/// McNemar's test must agree on these, pairwise and in order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatementRef {
    pub index: usize,
    pub scene_id: String,
    pub target_id: ObjectId,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundingResult {
    pub statement: StatementRef,
    pub predicted_id: Option<ObjectId>,
    pub raw_output: String,
    pub valid_format: bool,
    pub parse_mode: ParseMode,
    pub correct: bool,
}

/// Backoff schedule for transport errors. Model-content errors are never
/// retried, since a retry there would bias measured accuracy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_retries: u32,
    /// Initial backoff; doubles per attempt.
    pub backoff_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_retries: 2,
            backoff_ms: 100,
        }
    }
}

fn send_with_retries(
    client: &dyn ModelClient,
    messages: &MessageSequence,
    policy: &RetryPolicy,
) -> Result<String, ClientError> {
    let mut attempt = 0;
    loop {
        match client.send(messages) {
            Ok(reply) => return Ok(reply),
            Err(err) if err.retryable() && attempt < policy.max_retries => {
                std::thread::sleep(Duration::from_millis(policy.backoff_ms << attempt));
                attempt += 1;
            }
            Err(err) => return Err(err),
        }
    }
}

fn ground_serialized(
    statement: &ReferentialStatement,
    index: usize,
    serialized_graph: &str,
    client: &dyn ModelClient,
    cfg: &PromptConfig,
    policy: &RetryPolicy,
    graph: &SceneGraph,
) -> GroundingResult {
    let messages = build_prompt(serialized_graph, &statement.text, cfg);
    let statement_ref = StatementRef {
        index,
        scene_id: statement.scene_id.clone(),
        target_id: statement.target_id,
        text: statement.text.clone(),
    };
    match send_with_retries(client, &messages, policy) {
        Ok(raw) => {
            let parsed = parse_model_output(&raw, graph);
            GroundingResult {
                statement: statement_ref,
                predicted_id: parsed.predicted_id,
                raw_output: raw,
                valid_format: parsed.valid_format,
                parse_mode: parsed.mode,
                correct: parsed.predicted_id == Some(statement.target_id),
            }
        }
        Err(err) => GroundingResult {
            statement: statement_ref,
            predicted_id: None,
            raw_output: format!("<client error: {err}>"),
            valid_format: false,
            parse_mode: ParseMode::Invalid,
            correct: false,
        },
    }
}

/// Grounds one statement: serializes the graph, builds the prompt, sends one
/// stateless request, and scores the parsed reply against the ground truth.
pub fn ground(
    statement: &ReferentialStatement,
    graph: &SceneGraph,
    variant: GraphVariant,
    client: &dyn ModelClient,
    cfg: &PromptConfig,
) -> Result<GroundingResult, SerializeError> {
    let serialized = serialize_graph(graph, variant)?;
    Ok(ground_serialized(
        statement,
        0,
        &serialized,
        client,
        cfg,
        &RetryPolicy::default(),
        graph,
    ))
}

/// Grounds a batch of statements over one graph, serializing it once.
/// Requests run on up to `parallelism` worker threads; results come back in
/// statement order regardless of scheduling.
pub fn run_batch(
    statements: &[ReferentialStatement],
    graph: &SceneGraph,
    variant: GraphVariant,
    client: &dyn ModelClient,
    cfg: &PromptConfig,
    policy: &RetryPolicy,
    parallelism: usize,
) -> Result<Vec<GroundingResult>, SerializeError> {
    let serialized = serialize_graph(graph, variant)?;
    let workers = parallelism.clamp(1, statements.len().max(1));
    if workers == 1 {
        return Ok(statements
            .iter()
            .enumerate()
            .map(|(i, s)| ground_serialized(s, i, &serialized, client, cfg, policy, graph))
            .collect());
    }

    let next = std::sync::atomic::AtomicUsize::new(0);
    let slots: Vec<std::sync::Mutex<Option<GroundingResult>>> =
        statements.iter().map(|_| std::sync::Mutex::new(None)).collect();
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                if i >= statements.len() {
                    break;
                }
                let result = ground_serialized(
                    &statements[i],
                    i,
                    &serialized,
                    client,
                    cfg,
                    policy,
                    graph,
                );
                *slots[i].lock().expect("result slot") = Some(result);
            });
        }
    });
    Ok(slots
        .into_iter()
        .map(|slot| slot.into_inner().expect("result slot").expect("worker filled slot"))
        .collect())
}

/// Failures of the deterministic oracle grounder.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum OracleError {
    #[error("statement is not resolvable: {0}")]
    Unresolvable(String),
    #[error("statement matches several objects: {0:?}")]
    Ambiguous(Vec<ObjectId>),
}

/// Resolves a templated statement to the unique object satisfying it, given
/// the relation edges. This inverts the statement generator and serves as the
/// deterministic ground truth in offline tests.
pub fn resolve_statement_text(
    text: &str,
    graph: &SceneGraph,
    relations: &[SpatialEdge],
    synonyms: &SynonymTable,
) -> Result<ObjectId, OracleError> {
    let desc = parse_statement_text(text, graph, synonyms)
        .map_err(|e| OracleError::Unresolvable(e.to_string()))?;
    let candidates: BTreeSet<ObjectId> = matching_targets(graph, relations, &desc, synonyms);
    match candidates.len() {
        0 => Err(OracleError::Unresolvable(format!(
            "no object satisfies `{text}`"
        ))),
        1 => Ok(candidates.into_iter().next().expect("one candidate")),
        _ => Err(OracleError::Ambiguous(candidates.into_iter().collect())),
    }
}

/// Oracle grounding of a generated statement: re-parses the statement text and
/// resolves the unique satisfier. For statements produced by the generator
/// this always returns the ground-truth target; `Ambiguous` signals a
/// generator bug.
pub fn oracle_ground(
    statement: &ReferentialStatement,
    graph: &SceneGraph,
    relations: &[SpatialEdge],
    synonyms: &SynonymTable,
) -> Result<ObjectId, OracleError> {
    resolve_statement_text(&statement.text, graph, relations, synonyms)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::relations::{compute_relations, RelationConfig};
    use crate::scene::ObjectNode;
    use crate::statements::generate_statements;

    fn fixture() -> SceneGraph {
        let nodes = vec![
            ObjectNode::new(2, "nightstand", vec![], [1.0, 2.0, 0.3], [0.5, 0.4, 0.6]).unwrap(),
            ObjectNode::new(
                5,
                "cabinet",
                vec!["white".into()],
                [1.0, 2.0, 1.5],
                [0.6, 0.4, 0.8],
            )
            .unwrap(),
        ];
        let g = SceneGraph::build("fixture", nodes, vec![]).unwrap();
        let edges = compute_relations(&g, &RelationConfig::default());
        g.with_edges(edges).unwrap()
    }

    #[test]
    fn prompt_has_system_and_user_messages() {
        let msgs = build_prompt("OBJECTS:\n1|lamp\n", "the lamp", &PromptConfig::default());
        assert_eq!(msgs.len(), 2);
        assert_eq!(msgs[0].role, Role::System);
        assert_eq!(msgs[1].role, Role::User);
        assert!(msgs[1].content.contains("STATEMENT: the lamp"));
    }

    #[test]
    fn merged_prompt_is_single_user_message() {
        let cfg = PromptConfig {
            merge_system_into_user: true,
            ..PromptConfig::default()
        };
        let msgs = build_prompt("OBJECTS:\n1|lamp\n", "the lamp", &cfg);
        assert_eq!(msgs.len(), 1);
        assert_eq!(msgs[0].role, Role::User);
        let sys_pos = msgs[0].content.find(&cfg.system_template).unwrap();
        let stmt_pos = msgs[0].content.find("STATEMENT:").unwrap();
        assert!(sys_pos < stmt_pos);
    }

    #[test]
    fn identical_inputs_build_identical_prompts() {
        let cfg = PromptConfig::default();
        let a = build_prompt("OBJECTS:\n1|lamp\n", "the lamp", &cfg);
        let b = build_prompt("OBJECTS:\n1|lamp\n", "the lamp", &cfg);
        assert_eq!(render_messages(&a), render_messages(&b));
    }

    #[test]
    fn prompt_parts_round_trip() {
        let graph_text = "OBJECTS:\n1|lamp\n2|bed\nEDGES:\n1|above|2\n";
        let msgs = build_prompt(graph_text, "the lamp that is above the bed", &PromptConfig::default());
        let (g, s) = extract_prompt_parts(&msgs).unwrap();
        assert_eq!(g, graph_text);
        assert_eq!(s, "the lamp that is above the bed");
    }

    #[test]
    fn strict_parse() {
        let g = fixture();
        let p = parse_model_output("5", &g);
        assert_eq!(p.predicted_id, Some(5));
        assert!(p.valid_format);
        assert_eq!(p.mode, ParseMode::Strict);
        let p = parse_model_output("  5\n", &g);
        assert_eq!(p.mode, ParseMode::Strict);
    }

    #[test]
    fn lenient_parse_on_single_token() {
        let g = fixture();
        let p = parse_model_output("The answer is 5.", &g);
        assert_eq!(p.predicted_id, Some(5));
        assert!(p.valid_format);
        assert_eq!(p.mode, ParseMode::Lenient);
    }

    #[test]
    fn ambiguous_output_rejected() {
        let g = fixture();
        let p = parse_model_output("5 or 2", &g);
        assert_eq!(p.predicted_id, None);
        assert!(!p.valid_format);
    }

    #[test]
    fn unknown_id_rejected() {
        let g = fixture();
        let p = parse_model_output("99", &g);
        assert_eq!(p.predicted_id, None);
        assert!(!p.valid_format);
    }

    #[test]
    fn embedded_digits_are_not_tokens() {
        let g = fixture();
        // `gpt5` must not read as id 5; the standalone 2 wins.
        let p = parse_model_output("gpt5 picks 2", &g);
        assert_eq!(p.predicted_id, Some(2));
        assert_eq!(p.mode, ParseMode::Lenient);
        // Decimal numbers are not ids.
        let p = parse_model_output("confidence 0.95", &g);
        assert_eq!(p.predicted_id, None);
    }

    #[test]
    fn oracle_resolves_generated_statements() {
        let g = fixture();
        let synonyms = SynonymTable::default();
        let statements = generate_statements(&g, &synonyms, 0);
        assert!(!statements.is_empty());
        for stmt in &statements {
            let id = oracle_ground(&stmt, &g, g.edges(), &synonyms).unwrap();
            assert_eq!(id, stmt.target_id);
        }
    }

    #[test]
    fn oracle_flags_ambiguous_statements() {
        let nodes = vec![
            ObjectNode::new(1, "chair", vec![], [0.0, 0.0, 0.5], [0.5, 0.5, 1.0]).unwrap(),
            ObjectNode::new(2, "chair", vec![], [2.0, 0.0, 0.5], [0.5, 0.5, 1.0]).unwrap(),
            ObjectNode::new(4, "table", vec![], [1.0, 0.0, 0.4], [1.2, 0.8, 0.8]).unwrap(),
        ];
        let g = SceneGraph::build("s", nodes, vec![]).unwrap();
        let edges = compute_relations(&g, &RelationConfig::default());
        let g = g.with_edges(edges).unwrap();
        let err = resolve_statement_text(
            "the chair that is near the table",
            &g,
            g.edges(),
            &SynonymTable::default(),
        )
        .unwrap_err();
        assert!(matches!(err, OracleError::Ambiguous(ids) if ids == vec![1, 2]));
    }

    #[test]
    fn oracle_rejects_non_template_text() {
        let g = fixture();
        let err = resolve_statement_text("hand me that thing", &g, g.edges(), &SynonymTable::default())
            .unwrap_err();
        assert!(matches!(err, OracleError::Unresolvable(_)));
    }
}
