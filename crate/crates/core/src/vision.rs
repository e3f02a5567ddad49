//! Open-vocabulary edge generation from annotated images.
//!
//! Robot-captured observations pair an RGB image with per-object segmentation
//! masks. For an object pair, the best observation is the one maximizing the
//! combined mask pixel count. The pair is pre-marked by stroking each mask
//! boundary in a distinct color, the annotated image goes to a vision-model
//! client, and the returned phrase becomes an open-vocabulary edge that
//! replaces the corresponding closed binary edge in the graph. Closed edges
//! without a generated counterpart stay untouched.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Cursor;
use std::path::PathBuf;

use base64::Engine;
use image::{GrayImage, RgbImage};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grounding::{ClientError, ImageAttachment, Message, ModelClient};
use crate::scene::{GraphError, ObjectId, Provenance, RelationCategory, SceneGraph, SpatialEdge};

#[derive(Debug, Error)]
pub enum VisionError {
    #[error("object {0} has no usable mask in this observation")]
    MissingMask(ObjectId),
    #[error("mask for object {object_id} is {mask_w}x{mask_h}, image is {image_w}x{image_h}")]
    DimensionMismatch {
        object_id: ObjectId,
        mask_w: u32,
        mask_h: u32,
        image_w: u32,
        image_h: u32,
    },
    #[error("generated edge ({target}, {anchor}) has no matching closed binary edge")]
    UnknownPair { target: ObjectId, anchor: ObjectId },
    #[error("model returned an empty relation phrase")]
    EmptyGeneration,
    #[error("run-length encoding is inconsistent: {0}")]
    BadRle(String),
    #[error(transparent)]
    Client(#[from] ClientError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("image error: {0}")]
    Image(#[from] image::ImageError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Binary segmentation mask, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    width: u32,
    height: u32,
    bits: Vec<bool>,
    count: usize,
}

/// Uncompressed run-length encoding of a mask: alternating background and
/// foreground run lengths over row-major pixel order, starting with
/// background.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RleMask {
    pub width: u32,
    pub height: u32,
    pub counts: Vec<u32>,
}

impl Mask {
    pub fn from_bits(width: u32, height: u32, bits: Vec<bool>) -> Result<Self, VisionError> {
        if bits.len() != (width as usize) * (height as usize) {
            return Err(VisionError::BadRle(format!(
                "{} bits for a {width}x{height} mask",
                bits.len()
            )));
        }
        let count = bits.iter().filter(|&&b| b).count();
        Ok(Self {
            width,
            height,
            bits,
            count,
        })
    }

    /// Any non-zero pixel of the bitmap counts as foreground.
    pub fn from_gray(image: &GrayImage) -> Self {
        let bits: Vec<bool> = image.pixels().map(|p| p.0[0] != 0).collect();
        let count = bits.iter().filter(|&&b| b).count();
        Self {
            width: image.width(),
            height: image.height(),
            bits,
            count,
        }
    }

    pub fn from_rle(rle: &RleMask) -> Result<Self, VisionError> {
        let expected = (rle.width as usize) * (rle.height as usize);
        let total: usize = rle.counts.iter().map(|&c| c as usize).sum();
        if total != expected {
            return Err(VisionError::BadRle(format!(
                "runs cover {total} pixels, mask has {expected}"
            )));
        }
        let mut bits = Vec::with_capacity(expected);
        let mut value = false;
        for &run in &rle.counts {
            bits.extend(std::iter::repeat_n(value, run as usize));
            value = !value;
        }
        Self::from_bits(rle.width, rle.height, bits)
    }

    pub fn to_rle(&self) -> RleMask {
        let mut counts = Vec::new();
        let mut value = false;
        let mut run: u32 = 0;
        for &bit in &self.bits {
            if bit == value {
                run += 1;
            } else {
                counts.push(run);
                value = bit;
                run = 1;
            }
        }
        counts.push(run);
        RleMask {
            width: self.width,
            height: self.height,
            counts,
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn pixel_count(&self) -> usize {
        self.count
    }

    pub fn get(&self, x: u32, y: u32) -> bool {
        x < self.width && y < self.height && self.bits[(y * self.width + x) as usize]
    }

    /// One 4-connected erosion step; pixels on the image border erode.
    fn erode(&self) -> Mask {
        let mut bits = vec![false; self.bits.len()];
        for y in 0..self.height {
            for x in 0..self.width {
                if !self.get(x, y) {
                    continue;
                }
                let interior = x > 0
                    && y > 0
                    && x + 1 < self.width
                    && y + 1 < self.height
                    && self.get(x - 1, y)
                    && self.get(x + 1, y)
                    && self.get(x, y - 1)
                    && self.get(x, y + 1);
                bits[(y * self.width + x) as usize] = interior;
            }
        }
        Mask::from_bits(self.width, self.height, bits).expect("same dimensions")
    }

    /// The band of mask pixels within `width` erosion steps of the boundary.
    fn boundary_band(&self, width: u32) -> Vec<(u32, u32)> {
        let mut core = self.clone();
        for _ in 0..width {
            core = core.erode();
        }
        let mut band = Vec::new();
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(x, y) && !core.get(x, y) {
                    band.push((x, y));
                }
            }
        }
        band
    }
}

/// Raster source for an observation; file-backed images load on demand.
#[derive(Debug, Clone)]
pub enum ImageSource {
    Memory(RgbImage),
    Path(PathBuf),
}

impl ImageSource {
    pub fn dimensions(&self) -> Result<(u32, u32), VisionError> {
        match self {
            ImageSource::Memory(img) => Ok(img.dimensions()),
            // Header-only read; pixel data stays on disk until needed.
            ImageSource::Path(path) => Ok(image::image_dimensions(path)?),
        }
    }

    pub fn load(&self) -> Result<RgbImage, VisionError> {
        match self {
            ImageSource::Memory(img) => Ok(img.clone()),
            ImageSource::Path(path) => Ok(image::open(path)?.to_rgb8()),
        }
    }
}

/// One captured image with the segmentation masks of the objects visible in
/// it. Mask dimensions always equal the image dimensions.
#[derive(Debug, Clone)]
pub struct Observation {
    pub image_id: String,
    pub image: ImageSource,
    masks: BTreeMap<ObjectId, Mask>,
}

impl Observation {
    pub fn new(
        image_id: impl Into<String>,
        image: ImageSource,
        masks: BTreeMap<ObjectId, Mask>,
    ) -> Result<Self, VisionError> {
        let (image_w, image_h) = image.dimensions()?;
        for (&object_id, mask) in &masks {
            if mask.width() != image_w || mask.height() != image_h {
                return Err(VisionError::DimensionMismatch {
                    object_id,
                    mask_w: mask.width(),
                    mask_h: mask.height(),
                    image_w,
                    image_h,
                });
            }
        }
        Ok(Self {
            image_id: image_id.into(),
            image,
            masks,
        })
    }

    pub fn masks(&self) -> &BTreeMap<ObjectId, Mask> {
        &self.masks
    }

    /// A mask with zero pixels counts as the object not appearing at all.
    pub fn mask(&self, id: ObjectId) -> Option<&Mask> {
        self.masks.get(&id).filter(|m| m.pixel_count() > 0)
    }

    pub fn contains_pair(&self, a: ObjectId, b: ObjectId) -> bool {
        self.mask(a).is_some() && self.mask(b).is_some()
    }

    pub fn combined_pixels(&self, a: ObjectId, b: ObjectId) -> Option<usize> {
        Some(self.mask(a)?.pixel_count() + self.mask(b)?.pixel_count())
    }
}

/// Colors and stroke width for pre-marking an object pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutlineStyle {
    /// (color name, RGB) per object; the name is spoken in the prompt.
    pub colors: [(String, [u8; 3]); 2],
    pub stroke_width: u32,
}

impl Default for OutlineStyle {
    fn default() -> Self {
        Self {
            colors: [
                ("red".to_string(), [255, 0, 0]),
                ("green".to_string(), [0, 255, 0]),
            ],
            stroke_width: 3,
        }
    }
}

impl OutlineStyle {
    pub fn validate(&self) -> Result<(), String> {
        if self.colors[0].1 == self.colors[1].1 {
            return Err("the two outline colors must differ".to_string());
        }
        if self.stroke_width == 0 {
            return Err("stroke width must be at least 1".to_string());
        }
        Ok(())
    }
}

/// Picks the observation where the pair is most visible: both masks present
/// and the combined pixel count maximal. Ties go to the lexicographically
/// smallest image id; `None` when no observation shows both objects.
pub fn select_image<'a>(
    obj1: ObjectId,
    obj2: ObjectId,
    observations: &'a [Observation],
) -> Option<&'a Observation> {
    observations
        .iter()
        .filter_map(|obs| obs.combined_pixels(obj1, obj2).map(|px| (obs, px)))
        .max_by(|(obs_a, px_a), (obs_b, px_b)| {
            px_a.cmp(px_b)
                .then_with(|| obs_b.image_id.cmp(&obs_a.image_id))
        })
        .map(|(obs, _)| obs)
}

/// Returns a copy of the observation image with the boundary of each object's
/// mask stroked in its color. Pixels outside the stroke bands are bit-exact
/// copies of the input.
pub fn outline_objects(
    obs: &Observation,
    ids: (ObjectId, ObjectId),
    style: &OutlineStyle,
) -> Result<RgbImage, VisionError> {
    let mut image = obs.image.load()?;
    for (slot, id) in [ids.0, ids.1].into_iter().enumerate() {
        let mask = obs.mask(id).ok_or(VisionError::MissingMask(id))?;
        let rgb = image::Rgb(style.colors[slot].1);
        for (x, y) in mask.boundary_band(style.stroke_width) {
            image.put_pixel(x, y, rgb);
        }
    }
    Ok(image)
}

/// An open-vocabulary relation phrase produced for one object pair, with the
/// image it was generated from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratedEdge {
    pub target_id: ObjectId,
    pub anchor_id: ObjectId,
    pub text: String,
    pub source_image_id: String,
    pub char_limit_ok: bool,
}

impl GeneratedEdge {
    /// Builds an edge from raw model text: strips newlines and pipes (they
    /// would break the serialized edge-line format), then applies the
    /// character cap. Text longer than the cap is truncated and flagged.
    pub fn from_model_text(
        target_id: ObjectId,
        anchor_id: ObjectId,
        raw: &str,
        source_image_id: impl Into<String>,
        char_cap: usize,
    ) -> Result<Self, VisionError> {
        let cleaned = raw
            .replace(['\n', '\r'], " ")
            .replace('|', "/")
            .trim()
            .trim_end_matches('.')
            .to_string();
        if cleaned.is_empty() {
            return Err(VisionError::EmptyGeneration);
        }
        let char_limit_ok = cleaned.chars().count() <= char_cap;
        let text = if char_limit_ok {
            cleaned
        } else {
            cleaned.chars().take(char_cap).collect::<String>().trim_end().to_string()
        };
        Ok(Self {
            target_id,
            anchor_id,
            text,
            source_image_id: source_image_id.into(),
            char_limit_ok,
        })
    }
}

impl fmt::Display for GeneratedEdge {
    /// Line-record layout: `target|text|anchor|image_id`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}|{}|{}|{}",
            self.target_id, self.text, self.anchor_id, self.source_image_id
        )
    }
}

const VLM_SYSTEM_PROMPT: &str = "\
You describe spatial relations between two objects marked in an indoor photo.\n\
Each object of interest is outlined in a distinct color. Reply with one short \
phrase stating where the first object is relative to the second, such that the \
phrase could complete the sentence \"the first object is ... the second object\". \
You may mention other visible objects as reference points. Do not mention the \
outline colors. Keep the phrase short and structured; no full sentences.";

fn encode_png(image: &RgbImage) -> Result<String, VisionError> {
    let mut bytes = Vec::new();
    image.write_to(&mut Cursor::new(&mut bytes), image::ImageFormat::Png)?;
    Ok(base64::engine::general_purpose::STANDARD.encode(bytes))
}

/// Outlines the pair on the observation image, sends one stateless image+text
/// request naming both objects and their outline colors, and wraps the reply
/// into a [`GeneratedEdge`] describing `obj1` relative to `obj2`.
pub fn generate_open_edge(
    obs: &Observation,
    obj1: (ObjectId, &str),
    obj2: (ObjectId, &str),
    style: &OutlineStyle,
    client: &dyn ModelClient,
    char_cap: usize,
) -> Result<GeneratedEdge, VisionError> {
    let annotated = outline_objects(obs, (obj1.0, obj2.0), style)?;
    let user_text = format!(
        "The image shows {} (id {}) outlined in {} and {} (id {}) outlined in {}. \
         State the spatial relation of the {} relative to the {}. \
         Use at most {char_cap} characters.",
        obj1.1, obj1.0, style.colors[0].0, obj2.1, obj2.0, style.colors[1].0, obj1.1, obj2.1,
    );
    let messages = vec![
        Message::system(VLM_SYSTEM_PROMPT),
        Message::user_with_image(
            user_text,
            ImageAttachment {
                media_type: "image/png".to_string(),
                base64_data: encode_png(&annotated)?,
            },
        ),
    ];
    let raw = client.send(&messages)?;
    GeneratedEdge::from_model_text(obj1.0, obj2.0, &raw, obs.image_id.clone(), char_cap)
}

/// Replaces closed binary edges with their generated open-vocabulary
/// counterparts, one for one. Edges without a generated counterpart are kept
/// verbatim, so an empty `generated` list returns the graph unchanged. Every
/// generated edge must correspond to at least one closed binary edge of the
/// graph; ternary and ordered edges are never substituted.
pub fn substitute_edges(
    graph: &SceneGraph,
    generated: &[GeneratedEdge],
) -> Result<SceneGraph, VisionError> {
    let mut by_pair: BTreeMap<(ObjectId, ObjectId), &GeneratedEdge> = BTreeMap::new();
    for gen_edge in generated {
        // First generation for a pair wins.
        by_pair
            .entry((gen_edge.target_id, gen_edge.anchor_id))
            .or_insert(gen_edge);
    }

    let mut matched: BTreeMap<(ObjectId, ObjectId), bool> =
        by_pair.keys().map(|&pair| (pair, false)).collect();
    let mut edges = Vec::with_capacity(graph.edges().len());
    for edge in graph.edges() {
        let substitutable = edge
            .relation()
            .token()
            .is_some_and(|t| t.category() == RelationCategory::Binary);
        let replacement = if substitutable {
            by_pair.get(&(edge.target_id(), edge.anchor_ids()[0]))
        } else {
            None
        };
        match replacement {
            Some(gen_edge) => {
                matched.insert((gen_edge.target_id, gen_edge.anchor_id), true);
                edges.push(SpatialEdge::open(
                    gen_edge.target_id,
                    gen_edge.text.clone(),
                    gen_edge.anchor_id,
                    Provenance::VlmGenerated,
                )?);
            }
            None => edges.push(edge.clone()),
        }
    }
    if let Some((&(target, anchor), _)) = matched.iter().find(|(_, &hit)| !hit) {
        return Err(VisionError::UnknownPair { target, anchor });
    }
    Ok(graph.with_edges(edges)?)
}

/// A generated edge flagged for human review.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LintWarning {
    pub index: usize,
    pub reason: String,
}

/// Flags generated edges showing the known failure modes: outline color names
/// leaking into the text, or view-dependent phrasing referencing the camera.
/// Flagged edges are not removed; filtering is a human decision.
pub fn lint_generated_edges(edges: &[GeneratedEdge], style: &OutlineStyle) -> Vec<LintWarning> {
    let mut warnings = Vec::new();
    for (index, edge) in edges.iter().enumerate() {
        let text = edge.text.to_lowercase();
        for (name, _) in &style.colors {
            if text.contains(&name.to_lowercase()) {
                warnings.push(LintWarning {
                    index,
                    reason: format!("mentions outline color `{name}`"),
                });
            }
        }
        if text.contains("camera") {
            warnings.push(LintWarning {
                index,
                reason: "view-dependent phrasing (mentions the camera)".to_string(),
            });
        }
    }
    warnings
}
