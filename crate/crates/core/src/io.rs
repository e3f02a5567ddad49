//! Canonical on-disk formats: JSON scene files, line-delimited JSON for
//! statements, generated edges, and run reports.
//!
//! Scene files bundle the node array with optional edges and an optional
//! observation manifest (image paths plus per-object masks as PNG paths or
//! run-length records). Every format pins its name and version in a header;
//! unknown fields are ignored with a warning rather than rejected. Writes go
//! through a temp-file-and-rename so readers never see partial files; report
//! files are append-only per run id and serialized through an advisory lock.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eval::RunReport;
use crate::scene::{GraphError, ObjectId, ObjectNode, SceneGraph, SpatialEdge};
use crate::statements::ReferentialStatement;
use crate::vision::{GeneratedEdge, ImageSource, Mask, Observation, RleMask, VisionError};

pub const SCENE_FORMAT: &str = "scene";
pub const STATEMENTS_FORMAT: &str = "statements";
pub const GENERATED_EDGES_FORMAT: &str = "generated_edges";
pub const REPORTS_FORMAT: &str = "reports";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {detail}")]
    Parse {
        path: PathBuf,
        /// 1-based line for line-delimited formats, 0 for whole-file JSON.
        line: usize,
        detail: String,
    },
    #[error("{path}: {source}")]
    Validation {
        path: PathBuf,
        #[source]
        source: GraphError,
    },
    #[error("{path}: {source}")]
    Observation {
        path: PathBuf,
        #[source]
        source: VisionError,
    },
    #[error("report file already contains run id `{0}`; reports are append-only")]
    DuplicateRunId(String),
    #[error("could not acquire lock `{0}` within the timeout")]
    LockTimeout(PathBuf),
}

impl IoError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        IoError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    fn parse(path: &Path, line: usize, detail: impl Into<String>) -> Self {
        IoError::Parse {
            path: path.to_path_buf(),
            line,
            detail: detail.into(),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct FileHeader {
    format: String,
    version: u32,
}

#[derive(Debug, Serialize, Deserialize)]
struct MaskEntry {
    object_id: ObjectId,
    #[serde(skip_serializing_if = "Option::is_none")]
    mask_path: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    rle: Option<RleMask>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ObservationManifest {
    image_id: String,
    image_path: String,
    masks: Vec<MaskEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct SceneFile {
    format: String,
    version: u32,
    scene_id: String,
    objects: Vec<ObjectNode>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    edges: Vec<SpatialEdge>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    observations: Option<Vec<ObservationManifest>>,
}

/// A loaded scene: the validated graph, observations when the file carries a
/// manifest, and warnings for ignored unknown fields.
#[derive(Debug)]
pub struct LoadedScene {
    pub graph: SceneGraph,
    pub observations: Option<Vec<Observation>>,
    pub warnings: Vec<String>,
}

/// Loads and validates a scene file. Observation images stay on disk and are
/// loaded on demand; masks and their pixel counts resolve eagerly.
pub fn load_scene(path: impl AsRef<Path>) -> Result<LoadedScene, IoError> {
    let path = path.as_ref();
    let content = fs::read_to_string(path).map_err(|e| IoError::io(path, e))?;

    let mut warnings = Vec::new();
    let mut deserializer = serde_json::Deserializer::from_str(&content);
    let scene_file: SceneFile = serde_ignored::deserialize(&mut deserializer, |ignored| {
        warnings.push(format!("ignoring unknown field `{ignored}`"));
    })
    .map_err(|e| IoError::parse(path, e.line(), e.to_string()))?;

    if scene_file.format != SCENE_FORMAT {
        return Err(IoError::parse(
            path,
            0,
            format!("expected format `{SCENE_FORMAT}`, found `{}`", scene_file.format),
        ));
    }
    if scene_file.version != FORMAT_VERSION {
        return Err(IoError::parse(
            path,
            0,
            format!("unsupported {} version {}", scene_file.format, scene_file.version),
        ));
    }

    let graph = SceneGraph::build(scene_file.scene_id, scene_file.objects, scene_file.edges)
        .map_err(|source| IoError::Validation {
            path: path.to_path_buf(),
            source,
        })?;

    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let observations = match scene_file.observations {
        None => None,
        Some(manifests) => {
            let mut out = Vec::with_capacity(manifests.len());
            for manifest in manifests {
                out.push(resolve_observation(manifest, base).map_err(|source| {
                    IoError::Observation {
                        path: path.to_path_buf(),
                        source,
                    }
                })?);
            }
            Some(out)
        }
    };

    Ok(LoadedScene {
        graph,
        observations,
        warnings,
    })
}

fn resolve_observation(manifest: ObservationManifest, base: &Path) -> Result<Observation, VisionError> {
    let mut masks = BTreeMap::new();
    for entry in manifest.masks {
        let mask = match (entry.mask_path, entry.rle) {
            (Some(rel), _) => {
                let gray = image::open(base.join(rel))?.to_luma8();
                Mask::from_gray(&gray)
            }
            (None, Some(rle)) => Mask::from_rle(&rle)?,
            (None, None) => {
                return Err(VisionError::BadRle(format!(
                    "mask entry for object {} has neither mask_path nor rle",
                    entry.object_id
                )))
            }
        };
        masks.insert(entry.object_id, mask);
    }
    Observation::new(
        manifest.image_id,
        ImageSource::Path(base.join(manifest.image_path)),
        masks,
    )
}

/// Writes a scene file (nodes and edges; no observation manifest).
pub fn save_scene(graph: &SceneGraph, path: impl AsRef<Path>) -> Result<(), IoError> {
    let path = path.as_ref();
    let file = SceneFile {
        format: SCENE_FORMAT.to_string(),
        version: FORMAT_VERSION,
        scene_id: graph.scene_id().to_string(),
        objects: graph.nodes().to_vec(),
        edges: graph.edges().to_vec(),
        observations: None,
    };
    let mut body = serde_json::to_string_pretty(&file).expect("scene serializes");
    body.push('\n');
    atomic_write(path, body.as_bytes())
}

fn write_ndjson<T: Serialize>(path: &Path, format: &str, records: &[T]) -> Result<(), IoError> {
    let mut body = serde_json::to_string(&FileHeader {
        format: format.to_string(),
        version: FORMAT_VERSION,
    })
    .expect("header serializes");
    body.push('\n');
    for record in records {
        body.push_str(&serde_json::to_string(record).expect("record serializes"));
        body.push('\n');
    }
    atomic_write(path, body.as_bytes())
}

fn read_ndjson<T: for<'de> Deserialize<'de>>(path: &Path, format: &str) -> Result<Vec<T>, IoError> {
    let content = match fs::read_to_string(path) {
        Ok(content) => content,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(IoError::io(path, e));
        }
        Err(e) => return Err(IoError::io(path, e)),
    };
    parse_ndjson(&content, path, format)
}

fn parse_ndjson<T: for<'de> Deserialize<'de>>(
    content: &str,
    path: &Path,
    format: &str,
) -> Result<Vec<T>, IoError> {
    let mut records = Vec::new();
    for (i, line) in content.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        if i == 0 {
            if let Ok(header) = serde_json::from_str::<FileHeader>(line) {
                if header.format != format {
                    return Err(IoError::parse(
                        path,
                        line_no,
                        format!("expected format `{format}`, found `{}`", header.format),
                    ));
                }
                if header.version != FORMAT_VERSION {
                    return Err(IoError::parse(
                        path,
                        line_no,
                        format!("unsupported {format} version {}", header.version),
                    ));
                }
                continue;
            }
        }
        records.push(
            serde_json::from_str(line).map_err(|e| IoError::parse(path, line_no, e.to_string()))?,
        );
    }
    Ok(records)
}

/// Saves statements as header-plus-records line-delimited JSON.
pub fn save_statements(
    statements: &[ReferentialStatement],
    path: impl AsRef<Path>,
) -> Result<(), IoError> {
    write_ndjson(path.as_ref(), STATEMENTS_FORMAT, statements)
}

/// Loads statements, revalidating each record's target/edge consistency.
pub fn load_statements(path: impl AsRef<Path>) -> Result<Vec<ReferentialStatement>, IoError> {
    let path = path.as_ref();
    let statements: Vec<ReferentialStatement> = read_ndjson(path, STATEMENTS_FORMAT)?;
    for (i, statement) in statements.iter().enumerate() {
        if statement.target_id != statement.source_edge.target_id() {
            return Err(IoError::parse(
                path,
                i + 2,
                format!(
                    "statement target {} does not match edge target {}",
                    statement.target_id,
                    statement.source_edge.target_id()
                ),
            ));
        }
        if statement.text.trim().is_empty() {
            return Err(IoError::parse(path, i + 2, "statement text is empty"));
        }
    }
    Ok(statements)
}

pub fn save_generated_edges(
    edges: &[GeneratedEdge],
    path: impl AsRef<Path>,
) -> Result<(), IoError> {
    write_ndjson(path.as_ref(), GENERATED_EDGES_FORMAT, edges)
}

pub fn load_generated_edges(path: impl AsRef<Path>) -> Result<Vec<GeneratedEdge>, IoError> {
    read_ndjson(path.as_ref(), GENERATED_EDGES_FORMAT)
}

/// RAII advisory lock: a sibling `.lock` file created exclusively.
struct FileLock {
    path: PathBuf,
}

impl FileLock {
    fn acquire(target: &Path, timeout: Duration) -> Result<Self, IoError> {
        let path = target.with_extension("lock");
        let start = Instant::now();
        loop {
            match fs::OpenOptions::new().write(true).create_new(true).open(&path) {
                Ok(_) => return Ok(Self { path }),
                Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                    if start.elapsed() > timeout {
                        return Err(IoError::LockTimeout(path));
                    }
                    std::thread::sleep(Duration::from_millis(10));
                }
                Err(e) => return Err(IoError::io(&path, e)),
            }
        }
    }
}

impl Drop for FileLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

/// Appends a run report to a report file, creating it (with header) when
/// absent. A run id can be written only once; appends from concurrent
/// processes serialize through the advisory lock.
pub fn append_report(report: &RunReport, path: impl AsRef<Path>) -> Result<(), IoError> {
    let path = path.as_ref();
    let _lock = FileLock::acquire(path, Duration::from_secs(10))?;

    let existing = match fs::read_to_string(path) {
        Ok(content) => parse_ndjson::<RunReport>(&content, path, REPORTS_FORMAT)?,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Vec::new(),
        Err(e) => return Err(IoError::io(path, e)),
    };
    if existing.iter().any(|r| r.run_id == report.run_id) {
        return Err(IoError::DuplicateRunId(report.run_id.clone()));
    }

    let mut file = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| IoError::io(path, e))?;
    let mut line = String::new();
    if existing.is_empty() && file.metadata().map(|m| m.len()).unwrap_or(0) == 0 {
        line.push_str(
            &serde_json::to_string(&FileHeader {
                format: REPORTS_FORMAT.to_string(),
                version: FORMAT_VERSION,
            })
            .expect("header serializes"),
        );
        line.push('\n');
    }
    line.push_str(&serde_json::to_string(report).expect("report serializes"));
    line.push('\n');
    file.write_all(line.as_bytes())
        .map_err(|e| IoError::io(path, e))
}

pub fn load_reports(path: impl AsRef<Path>) -> Result<Vec<RunReport>, IoError> {
    read_ndjson(path.as_ref(), REPORTS_FORMAT)
}

/// Loads one report by run id.
pub fn load_report(path: impl AsRef<Path>, run_id: &str) -> Result<RunReport, IoError> {
    let path = path.as_ref();
    load_reports(path)?
        .into_iter()
        .find(|r| r.run_id == run_id)
        .ok_or_else(|| IoError::parse(path, 0, format!("no report with run id `{run_id}`")))
}

/// Write-temp-then-rename in the destination directory, so a crash never
/// leaves a half-written file behind.
fn atomic_write(path: &Path, bytes: &[u8]) -> Result<(), IoError> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    let dir = dir.unwrap_or_else(|| Path::new("."));
    fs::create_dir_all(dir).map_err(|e| IoError::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| IoError::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| IoError::io(path, e))?;
    tmp.persist(path)
        .map_err(|e| IoError::io(path, e.error))?;
    Ok(())
}
