//! Documents, labels, BIO tags and entity spans.
//!
//! A document is serialized into a single token sequence by taking segments in
//! reading order and tokens in order within each segment. Every token inherits
//! its segment's box.

use std::collections::HashSet;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{PixelRect, RasterImage};

/// Label name used for segments that belong to no entity type.
pub const OTHER: &str = "OTHER";

/// Side length of the normalized coordinate grid.
pub const GRID: u32 = 1000;

/// Box on the page-relative 0..=1000 grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x1: u32,
    pub y1: u32,
    pub x2: u32,
    pub y2: u32,
}

impl BoundingBox {
    pub fn new(x1: u32, y1: u32, x2: u32, y2: u32) -> Result<Self> {
        if x1 > x2 || y1 > y2 || x2 > GRID || y2 > GRID {
            return Err(Error::validation(format!(
                "box ({x1},{y1},{x2},{y2}) is not ordered within the 0..={GRID} grid"
            )));
        }
        Ok(Self { x1, y1, x2, y2 })
    }

    pub fn width(&self) -> u32 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> u32 {
        self.y2 - self.y1
    }
}

/// Maps a pixel rectangle to the 0..=1000 grid with `floor(coord * 1000 / page_dim)`.
pub fn normalize_box(rect: PixelRect, page_w: u32, page_h: u32) -> Result<BoundingBox> {
    if page_w == 0 || page_h == 0 {
        return Err(Error::validation(format!("page size {page_w}x{page_h} is empty")));
    }
    if rect.left > rect.right || rect.top > rect.bottom || rect.right > page_w || rect.bottom > page_h {
        return Err(Error::validation(format!(
            "pixel box ({},{},{},{}) lies outside the {page_w}x{page_h} page",
            rect.left, rect.top, rect.right, rect.bottom
        )));
    }
    let scale = |c: u32, dim: u32| ((c as u64 * GRID as u64) / dim as u64) as u32;
    BoundingBox::new(
        scale(rect.left, page_w),
        scale(rect.top, page_h),
        scale(rect.right, page_w),
        scale(rect.bottom, page_h),
    )
}

/// Inverse of [`normalize_box`]: `left = floor(x1 * W / 1000)` etc., clamped to the page.
pub fn roi_pixel_rect(bbox: &BoundingBox, page_w: u32, page_h: u32) -> PixelRect {
    let scale = |c: u32, dim: u32| ((c as u64 * dim as u64) / GRID as u64) as u32;
    PixelRect::new(
        scale(bbox.x1, page_w),
        scale(bbox.y1, page_h),
        scale(bbox.x2, page_w),
        scale(bbox.y2, page_h),
    )
    .clamp_to(page_w, page_h)
}

/// Ordered entity-type names. `OTHER` is implicit and never listed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct LabelSet {
    names: Vec<String>,
}

impl LabelSet {
    pub fn new<S: Into<String>>(names: impl IntoIterator<Item = S>) -> Result<Self> {
        let names: Vec<String> = names.into_iter().map(Into::into).collect();
        let mut seen = HashSet::new();
        for n in &names {
            if n == OTHER {
                return Err(Error::validation("OTHER is implicit and must not be listed"));
            }
            if n.is_empty() || !seen.insert(n.as_str()) {
                return Err(Error::validation(format!("label {n:?} is empty or duplicated")));
            }
        }
        Ok(Self { names })
    }

    /// QUESTION, ANSWER, HEADER.
    pub fn funsd() -> Self {
        Self::new(["QUESTION", "ANSWER", "HEADER"]).expect("static label set")
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index_of(name).is_some()
    }

    /// Labels including `OTHER`, in the order used by color schemes and reports.
    pub fn with_other(&self) -> Vec<String> {
        let mut all = self.names.clone();
        all.push(OTHER.to_string());
        all
    }
}

impl TryFrom<Vec<String>> for LabelSet {
    type Error = Error;

    fn try_from(v: Vec<String>) -> Result<Self> {
        LabelSet::new(v)
    }
}

impl From<LabelSet> for Vec<String> {
    fn from(l: LabelSet) -> Self {
        l.names
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Tag {
    O,
    B(String),
    I(String),
}

impl Tag {
    pub fn label(&self) -> Option<&str> {
        match self {
            Tag::O => None,
            Tag::B(t) | Tag::I(t) => Some(t),
        }
    }

    /// Whether `self` may directly follow `prev` (`None` = start of sequence).
    pub fn may_follow(&self, prev: Option<&Tag>) -> bool {
        match self {
            Tag::O | Tag::B(_) => true,
            Tag::I(t) => matches!(prev, Some(Tag::B(u)) | Some(Tag::I(u)) if u == t),
        }
    }
}

impl fmt::Display for Tag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tag::O => f.write_str("O"),
            Tag::B(t) => write!(f, "B-{t}"),
            Tag::I(t) => write!(f, "I-{t}"),
        }
    }
}

impl std::str::FromStr for Tag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "O" => Ok(Tag::O),
            _ => match s.split_once('-') {
                Some(("B", t)) if !t.is_empty() => Ok(Tag::B(t.to_string())),
                Some(("I", t)) if !t.is_empty() => Ok(Tag::I(t.to_string())),
                _ => Err(Error::parse("tag", format!("not a BIO tag: {s:?}"))),
            },
        }
    }
}

impl Serialize for Tag {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Tag {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Indexed tag alphabet: `O` first, then `B-t`, `I-t` for each label in order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TagSet {
    tags: Vec<Tag>,
}

impl TagSet {
    pub fn new(labels: &LabelSet) -> Self {
        let mut tags = vec![Tag::O];
        for n in labels.names() {
            tags.push(Tag::B(n.clone()));
            tags.push(Tag::I(n.clone()));
        }
        Self { tags }
    }

    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }

    pub fn tags(&self) -> &[Tag] {
        &self.tags
    }

    pub fn tag(&self, index: usize) -> &Tag {
        &self.tags[index]
    }

    pub fn index_of(&self, tag: &Tag) -> Option<usize> {
        self.tags.iter().position(|t| t == tag)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TagSequence {
    pub tags: Vec<Tag>,
}

impl TagSequence {
    pub fn new(tags: Vec<Tag>) -> Self {
        Self { tags }
    }

    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }

    /// Strict BIO check: no `I-t` after start, `O`, or a different type.
    pub fn is_valid_bio(&self) -> bool {
        let mut prev: Option<&Tag> = None;
        for t in &self.tags {
            if !t.may_follow(prev) {
                return false;
            }
            prev = Some(t);
        }
        true
    }
}

/// Half-open token span `[start, end)` with an entity type.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Entity {
    #[serde(rename = "type")]
    pub label: String,
    pub start: usize,
    pub end: usize,
}

impl Entity {
    pub fn new(label: impl Into<String>, start: usize, end: usize) -> Self {
        Self {
            label: label.into(),
            start,
            end,
        }
    }
}

pub fn tags_from_entities(entities: &[Entity], n_tokens: usize) -> Result<TagSequence> {
    let mut owner: Vec<Option<usize>> = vec![None; n_tokens];
    let mut tags = vec![Tag::O; n_tokens];
    for (k, e) in entities.iter().enumerate() {
        if e.start >= e.end || e.end > n_tokens {
            return Err(Error::validation(format!(
                "entity {:?} [{}, {}) is empty or exceeds {} tokens",
                e.label, e.start, e.end, n_tokens
            )));
        }
        for i in e.start..e.end {
            if let Some(j) = owner[i] {
                let other = &entities[j];
                return Err(Error::validation(format!(
                    "entities overlap: {} [{}, {}) and {} [{}, {})",
                    other.label, other.start, other.end, e.label, e.start, e.end
                )));
            }
            owner[i] = Some(k);
            tags[i] = if i == e.start {
                Tag::B(e.label.clone())
            } else {
                Tag::I(e.label.clone())
            };
        }
    }
    Ok(TagSequence { tags })
}

/// Tolerant BIO reader: an `I-t` that cannot continue the open entity starts a new one.
pub fn entities_from_tags(tags: &TagSequence) -> Vec<Entity> {
    let mut out = Vec::new();
    let mut open: Option<Entity> = None;
    for (i, tag) in tags.tags.iter().enumerate() {
        match tag {
            Tag::O => out.extend(open.take()),
            Tag::B(t) => {
                out.extend(open.take());
                open = Some(Entity::new(t.clone(), i, i + 1));
            }
            Tag::I(t) => match open.as_mut() {
                Some(e) if &e.label == t => e.end = i + 1,
                _ => {
                    out.extend(open.take());
                    open = Some(Entity::new(t.clone(), i, i + 1));
                }
            },
        }
    }
    out.extend(open);
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TextSegment {
    pub id: u32,
    pub tokens: Vec<String>,
    /// Box on the normalized grid, used for layout features.
    pub bbox: BoundingBox,
    /// Box in source pixels, used for painting and cropping.
    pub pixel_box: PixelRect,
    pub label: String,
}

impl TextSegment {
    pub fn new(
        id: u32,
        tokens: Vec<String>,
        pixel_box: PixelRect,
        label: impl Into<String>,
        page_w: u32,
        page_h: u32,
    ) -> Result<Self> {
        if tokens.is_empty() {
            return Err(Error::validation(format!("segment {id} has no tokens")));
        }
        let bbox = normalize_box(pixel_box, page_w, page_h)
            .map_err(|e| Error::validation(format!("segment {id}: {e}")))?;
        Ok(Self {
            id,
            tokens,
            bbox,
            pixel_box,
            label: label.into(),
        })
    }

    pub fn is_other(&self) -> bool {
        self.label == OTHER
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Document {
    pub doc_id: String,
    pub segments: Vec<TextSegment>,
    pub image: RasterImage,
    pub page_width_px: u32,
    pub page_height_px: u32,
}

impl Document {
    pub fn new(doc_id: impl Into<String>, segments: Vec<TextSegment>, image: RasterImage) -> Result<Self> {
        let doc = Self {
            doc_id: doc_id.into(),
            page_width_px: image.width(),
            page_height_px: image.height(),
            segments,
            image,
        };
        doc.validate()?;
        Ok(doc)
    }

    pub fn validate(&self) -> Result<()> {
        if self.image.width() != self.page_width_px || self.image.height() != self.page_height_px {
            return Err(Error::validation(format!(
                "document {}: image is {}x{} but page is {}x{}",
                self.doc_id,
                self.image.width(),
                self.image.height(),
                self.page_width_px,
                self.page_height_px
            )));
        }
        for s in &self.segments {
            if s.tokens.is_empty() {
                return Err(Error::validation(format!(
                    "document {}: segment {} has no tokens",
                    self.doc_id, s.id
                )));
            }
            let r = s.pixel_box;
            if r.left > r.right || r.top > r.bottom || r.right > self.page_width_px || r.bottom > self.page_height_px {
                return Err(Error::validation(format!(
                    "document {}: segment {} box lies outside the page",
                    self.doc_id, s.id
                )));
            }
        }
        Ok(())
    }

    /// Checks that every segment label is in `labels` or is `OTHER`.
    pub fn validate_labels(&self, labels: &LabelSet) -> Result<()> {
        for s in &self.segments {
            if !s.is_other() && !labels.contains(&s.label) {
                return Err(Error::validation(format!(
                    "document {}: segment {} has unknown label {:?}",
                    self.doc_id, s.id, s.label
                )));
            }
        }
        Ok(())
    }

    pub fn n_tokens(&self) -> usize {
        self.segments.iter().map(|s| s.tokens.len()).sum()
    }

    /// `(segment index, token)` pairs in serialization order.
    pub fn tokens(&self) -> impl Iterator<Item = (usize, &str)> {
        self.segments
            .iter()
            .enumerate()
            .flat_map(|(i, s)| s.tokens.iter().map(move |t| (i, t.as_str())))
    }

    /// One entity per non-OTHER segment, spanning its tokens.
    pub fn gold_entities(&self) -> Vec<Entity> {
        let mut out = Vec::new();
        let mut offset = 0;
        for s in &self.segments {
            let n = s.tokens.len();
            if !s.is_other() {
                out.push(Entity::new(s.label.clone(), offset, offset + n));
            }
            offset += n;
        }
        out
    }

    pub fn gold_tags(&self) -> TagSequence {
        tags_from_entities(&self.gold_entities(), self.n_tokens())
            .expect("segment spans never overlap")
    }

    pub fn to_json(&self) -> DocumentJson {
        DocumentJson {
            doc_id: self.doc_id.clone(),
            page_width_px: self.page_width_px,
            page_height_px: self.page_height_px,
            segments: self
                .segments
                .iter()
                .map(|s| SegmentJson {
                    id: s.id,
                    label: s.label.clone(),
                    bbox: [s.pixel_box.left, s.pixel_box.top, s.pixel_box.right, s.pixel_box.bottom],
                    tokens: s.tokens.clone(),
                })
                .collect(),
        }
    }

    pub fn from_json(json: &DocumentJson, image: RasterImage) -> Result<Self> {
        if image.width() != json.page_width_px || image.height() != json.page_height_px {
            return Err(Error::validation(format!(
                "document {}: image is {}x{} but JSON declares {}x{}",
                json.doc_id,
                image.width(),
                image.height(),
                json.page_width_px,
                json.page_height_px
            )));
        }
        let segments = json
            .segments
            .iter()
            .map(|s| {
                let [l, t, r, b] = s.bbox;
                TextSegment::new(
                    s.id,
                    s.tokens.clone(),
                    PixelRect::new(l, t, r, b),
                    s.label.clone(),
                    json.page_width_px,
                    json.page_height_px,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        Document::new(json.doc_id.clone(), segments, image)
    }

    /// Writes `<doc_id>.json` and `<doc_id>.ppm` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        let json_path = dir.join(format!("{}.json", self.doc_id));
        let bytes = serde_json::to_vec_pretty(&self.to_json())?;
        std::fs::write(&json_path, bytes).map_err(|e| Error::io(&json_path, e))?;
        let ppm_path = dir.join(format!("{}.ppm", self.doc_id));
        std::fs::write(&ppm_path, self.image.to_ppm()).map_err(|e| Error::io(&ppm_path, e))?;
        Ok(())
    }

    /// Reads a document JSON file and its sibling `<doc_id>.ppm`.
    pub fn load(json_path: &Path) -> Result<Self> {
        let bytes = std::fs::read(json_path).map_err(|e| Error::io(json_path, e))?;
        let json: DocumentJson = serde_json::from_slice(&bytes).map_err(|e| {
            Error::parse(json_path.display().to_string(), e.to_string())
        })?;
        let dir = json_path.parent().unwrap_or_else(|| Path::new("."));
        let ppm_path = dir.join(format!("{}.ppm", json.doc_id));
        let ppm = std::fs::read(&ppm_path).map_err(|e| Error::io(&ppm_path, e))?;
        Document::from_json(&json, RasterImage::from_ppm(&ppm)?)
    }
}

/// On-disk document layout; boxes are in pixel space.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocumentJson {
    pub doc_id: String,
    pub page_width_px: u32,
    pub page_height_px: u32,
    pub segments: Vec<SegmentJson>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentJson {
    pub id: u32,
    pub label: String,
    #[serde(rename = "box")]
    pub bbox: [u32; 4],
    pub tokens: Vec<String>,
}
