//! FUNSD annotation ingestion.

use serde_json::Value;

use crate::document::{Document, TextSegment, OTHER};
use crate::error::{Error, Result};
use crate::image::{PixelRect, RasterImage};

fn field<'a>(v: &'a Value, key: &str, path: &str) -> Result<&'a Value> {
    v.get(key)
        .ok_or_else(|| Error::parse(format!("{path}.{key}"), "missing field"))
}

fn as_u32(v: &Value, path: &str) -> Result<u32> {
    v.as_f64()
        .filter(|x| *x >= 0.0 && x.fract() == 0.0 && *x <= u32::MAX as f64)
        .map(|x| x as u32)
        .ok_or_else(|| Error::parse(path, format!("expected a non-negative integer, found {v}")))
}

fn parse_box(v: &Value, path: &str) -> Result<PixelRect> {
    let arr = v
        .as_array()
        .filter(|a| a.len() == 4)
        .ok_or_else(|| Error::parse(path, "expected [x1, y1, x2, y2]"))?;
    let c = arr
        .iter()
        .enumerate()
        .map(|(i, x)| as_u32(x, &format!("{path}[{i}]")))
        .collect::<Result<Vec<_>>>()?;
    Ok(PixelRect::new(c[0], c[1], c[2], c[3]))
}

fn map_label(raw: &str, path: &str) -> Result<String> {
    match raw.to_ascii_uppercase().as_str() {
        l @ ("QUESTION" | "ANSWER" | "HEADER") => Ok(l.to_string()),
        "OTHER" => Ok(OTHER.to_string()),
        other => Err(Error::parse(path, format!("unknown FUNSD label {other:?}"))),
    }
}

/// Builds a document from a FUNSD annotation file and its page image (as PPM).
///
/// Word boxes and `linking` are ignored; entries without any non-empty word are skipped.
pub fn load_funsd(doc_id: &str, annotation_json: &[u8], image_ppm: &[u8]) -> Result<Document> {
    let root: Value =
        serde_json::from_slice(annotation_json).map_err(|e| Error::parse("$", e.to_string()))?;
    let image = RasterImage::from_ppm(image_ppm)?;
    let form = field(&root, "form", "$")?
        .as_array()
        .ok_or_else(|| Error::parse("$.form", "expected an array"))?;

    let mut segments = Vec::with_capacity(form.len());
    for (i, entry) in form.iter().enumerate() {
        let path = format!("$.form[{i}]");
        let id = as_u32(field(entry, "id", &path)?, &format!("{path}.id"))?;
        let label_v = field(entry, "label", &path)?;
        let label = map_label(
            label_v
                .as_str()
                .ok_or_else(|| Error::parse(format!("{path}.label"), "expected a string"))?,
            &format!("{path}.label"),
        )?;
        let rect = parse_box(field(entry, "box", &path)?, &format!("{path}.box"))?;
        let words = field(entry, "words", &path)?
            .as_array()
            .ok_or_else(|| Error::parse(format!("{path}.words"), "expected an array"))?;
        let mut tokens = Vec::with_capacity(words.len());
        for (j, w) in words.iter().enumerate() {
            let wpath = format!("{path}.words[{j}]");
            let text = field(w, "text", &wpath)?
                .as_str()
                .ok_or_else(|| Error::parse(format!("{wpath}.text"), "expected a string"))?
                .trim();
            if !text.is_empty() {
                tokens.push(text.to_string());
            }
        }
        if tokens.is_empty() {
            continue;
        }
        segments.push(TextSegment::new(id, tokens, rect, label, image.width(), image.height())?);
    }
    Document::new(doc_id, segments, image)
}
