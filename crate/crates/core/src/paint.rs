//! Prompt painting: copies a page image and paints every segment box with the
//! color assigned to its entity type.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::document::{Document, LabelSet, OTHER};
use crate::error::{Error, Result};
use crate::image::{RasterImage, Rgb};

/// Stroke width used by [`PaintMode::Outline`].
pub const OUTLINE_WIDTH_PX: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum PaintMode {
    #[serde(alias = "fill")]
    Fill,
    #[serde(alias = "outline")]
    Outline,
    #[serde(alias = "none")]
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PaintStyle {
    pub rgb: Rgb,
    pub mode: PaintMode,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColorScheme {
    pub name: String,
    pub mapping: BTreeMap<String, PaintStyle>,
}

const fn hex(v: u32) -> Rgb {
    [(v >> 16) as u8, (v >> 8) as u8, v as u8]
}

/// Colors for QUESTION, ANSWER, HEADER, OTHER in each built-in row.
const BUILTIN_ROWS: [(&str, [u32; 4], PaintMode); 8] = [
    ("standard", [0xFF0000, 0x0000FF, 0x00FF00, 0xFFA500], PaintMode::Fill),
    ("swap-1", [0x0000FF, 0xFF0000, 0x00FF00, 0xFFA500], PaintMode::Fill),
    ("swap-2", [0xFFA500, 0x00FF00, 0xFF0000, 0x0000FF], PaintMode::Fill),
    ("grayscale", [0xCCCCCC, 0x999999, 0x333333, 0x000000], PaintMode::Fill),
    ("red-shades", [0xFF0000, 0xFF6699, 0xFF3366, 0xFF0099], PaintMode::Fill),
    ("blue-shades", [0x0000FF, 0x0033CC, 0x0099FF, 0x0066CC], PaintMode::Fill),
    ("outline", [0xFF0000, 0x0000FF, 0xFFA500, 0x00FF00], PaintMode::Outline),
    ("white", [0xFFFFFF, 0xFFFFFF, 0xFFFFFF, 0xFFFFFF], PaintMode::Fill),
];

const BUILTIN_LABELS: [&str; 4] = ["QUESTION", "ANSWER", "HEADER", OTHER];

/// Built-in color scheme `row` (1..=8) over QUESTION/ANSWER/HEADER/OTHER.
pub fn builtin_scheme(row: usize) -> Result<ColorScheme> {
    let (name, colors, mode) = row
        .checked_sub(1)
        .and_then(|i| BUILTIN_ROWS.get(i))
        .ok_or_else(|| Error::Config(format!("unknown color scheme row {row}; expected 1..=8")))?;
    let mapping = BUILTIN_LABELS
        .iter()
        .zip(colors)
        .map(|(l, c)| (l.to_string(), PaintStyle { rgb: hex(*c), mode: *mode }))
        .collect();
    Ok(ColorScheme {
        name: format!("{row}-{name}"),
        mapping,
    })
}

impl ColorScheme {
    /// Every label maps to mode NONE; painting becomes the identity.
    pub fn noop(labels: &LabelSet) -> Self {
        let mapping = labels
            .with_other()
            .into_iter()
            .map(|l| (l, PaintStyle { rgb: [0, 0, 0], mode: PaintMode::None }))
            .collect();
        Self {
            name: "none".into(),
            mapping,
        }
    }

    pub fn style(&self, label: &str) -> Result<PaintStyle> {
        self.mapping
            .get(label)
            .copied()
            .ok_or_else(|| Error::validation(format!("color scheme {:?} has no entry for label {label:?}", self.name)))
    }

    pub fn covers(&self, labels: &LabelSet) -> Result<()> {
        for l in labels.with_other() {
            self.style(&l)?;
        }
        Ok(())
    }

    /// Parses `{label: {rgb: [r, g, b], mode}}`.
    pub fn from_json(name: impl Into<String>, bytes: &[u8]) -> Result<Self> {
        let mapping: BTreeMap<String, PaintStyle> =
            serde_json::from_slice(bytes).map_err(|e| Error::parse("color scheme", e.to_string()))?;
        Ok(Self {
            name: name.into(),
            mapping,
        })
    }

    /// Resolves a `--scheme` argument: a row number `1..=8` or a JSON file path.
    pub fn resolve(arg: &str) -> Result<Self> {
        if let Ok(row) = arg.parse::<usize>() {
            return builtin_scheme(row);
        }
        let path = Path::new(arg);
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| arg.to_string());
        Self::from_json(name, &bytes)
    }

    pub fn to_json_mapping(&self) -> Result<Vec<u8>> {
        Ok(serde_json::to_vec_pretty(&self.mapping)?)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PaintedDocument {
    pub source_doc_id: String,
    pub image: RasterImage,
    pub scheme_name: String,
}

/// Paints segments in document order onto a copy of the page; later segments win on overlap.
pub fn paint_document(doc: &Document, scheme: &ColorScheme) -> Result<PaintedDocument> {
    let mut image = doc.image.clone();
    for seg in &doc.segments {
        let style = scheme.style(&seg.label)?;
        match style.mode {
            PaintMode::Fill => image.fill_rect(seg.pixel_box, style.rgb),
            PaintMode::Outline => image.outline_rect(seg.pixel_box, style.rgb),
            PaintMode::None => {}
        }
    }
    Ok(PaintedDocument {
        source_doc_id: doc.doc_id.clone(),
        image,
        scheme_name: scheme.name.clone(),
    })
}
