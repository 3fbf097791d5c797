use crate::document::{Document, TagSet};
use crate::error::{Error, Result};
use crate::image::RasterImage;

use super::roi::roi_crop_rect;
use super::vocab::{Vocab, PAD_ID};

/// Bucket of a grid coordinate in `0..=1000`.
pub fn layout_bucket(c: u32, buckets: usize) -> usize {
    ((c as usize * buckets) / 1001).min(buckets - 1)
}

/// Model inputs for one document. Documents longer than `max_len` tokens are truncated.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedDoc {
    pub doc_id: String,
    pub token_ids: Vec<usize>,
    /// Bucketed `(x1, y1, x2, y2, w, h)` per token.
    pub layout: Vec<[usize; 6]>,
    pub seg_of_token: Vec<usize>,
    pub gold: Vec<usize>,
    /// Token count before truncation.
    pub full_len: usize,
    pub n_segments: usize,
    pub patch: (usize, usize),
    /// `n_segments * h * w * 3` values in `[0, 1]`.
    pub crops: Vec<f32>,
}

impl PreparedDoc {
    /// Crops are sampled from `image`, which may be the original page or a painted copy.
    pub fn new(
        doc: &Document,
        image: &RasterImage,
        vocab: &Vocab,
        tagset: &TagSet,
        patch: (usize, usize),
        buckets: usize,
        max_len: usize,
    ) -> Result<Self> {
        if image.width() != doc.page_width_px || image.height() != doc.page_height_px {
            return Err(Error::Shape(format!(
                "image {}x{} does not match page {}x{} of {}",
                image.width(),
                image.height(),
                doc.page_width_px,
                doc.page_height_px,
                doc.doc_id
            )));
        }
        let gold_tags = doc.gold_tags();
        let full_len = doc.n_tokens();
        let mut out = Self {
            doc_id: doc.doc_id.clone(),
            token_ids: Vec::new(),
            layout: Vec::new(),
            seg_of_token: Vec::new(),
            gold: Vec::new(),
            full_len,
            n_segments: 0,
            patch,
            crops: Vec::new(),
        };
        for (i, (seg, tok)) in doc.tokens().enumerate().take(max_len) {
            let b = &doc.segments[seg].bbox;
            let feats = [b.x1, b.y1, b.x2, b.y2, b.width(), b.height()];
            out.token_ids.push(vocab.id(tok));
            out.layout.push(feats.map(|c| layout_bucket(c, buckets)));
            out.seg_of_token.push(seg);
            let tag = &gold_tags.tags[i];
            out.gold.push(tagset.index_of(tag).ok_or_else(|| {
                Error::validation(format!("document {}: tag {tag} not in the label set", doc.doc_id))
            })?);
        }
        out.n_segments = out.seg_of_token.last().map_or(0, |s| s + 1);
        for seg in &doc.segments[..out.n_segments] {
            out.crops.extend(roi_crop_rect(image, seg.pixel_box, patch));
        }
        Ok(out)
    }

    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }

    /// Same tokens with crops taken from another rendering of the page.
    pub fn with_image(&self, doc: &Document, image: &RasterImage) -> Self {
        let mut out = self.clone();
        out.crops.clear();
        for seg in &doc.segments[..self.n_segments] {
            out.crops.extend(roi_crop_rect(image, seg.pixel_box, self.patch));
        }
        out
    }
}

/// Padded batch `[B, L]`; row `b` holds `lengths[b]` real tokens followed by padding.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenBatch {
    pub batch: usize,
    pub max_len: usize,
    pub token_ids: Vec<usize>,
    pub layout: Vec<[usize; 6]>,
    pub mask: Vec<bool>,
    pub seg_of_token: Vec<usize>,
    pub gold: Vec<usize>,
    /// Per-document segment crops.
    pub crops: Vec<Vec<f32>>,
    pub n_segments: Vec<usize>,
    pub patch: (usize, usize),
    pub doc_ids: Vec<String>,
}

impl TokenBatch {
    pub fn from_prepared(docs: &[&PreparedDoc]) -> Result<Self> {
        let Some(first) = docs.first() else {
            return Err(Error::validation("empty batch"));
        };
        let patch = first.patch;
        let max_len = docs.iter().map(|d| d.len()).max().unwrap_or(0);
        let n = docs.len() * max_len;
        let mut out = Self {
            batch: docs.len(),
            max_len,
            token_ids: vec![PAD_ID; n],
            layout: vec![[0; 6]; n],
            mask: vec![false; n],
            seg_of_token: vec![0; n],
            gold: vec![0; n],
            crops: Vec::with_capacity(docs.len()),
            n_segments: Vec::with_capacity(docs.len()),
            patch,
            doc_ids: Vec::with_capacity(docs.len()),
        };
        for (b, d) in docs.iter().enumerate() {
            if d.patch != patch {
                return Err(Error::Shape(format!("patch {:?} in {} vs {:?}", d.patch, d.doc_id, patch)));
            }
            let o = b * max_len;
            out.token_ids[o..o + d.len()].copy_from_slice(&d.token_ids);
            out.layout[o..o + d.len()].copy_from_slice(&d.layout);
            out.seg_of_token[o..o + d.len()].copy_from_slice(&d.seg_of_token);
            out.gold[o..o + d.len()].copy_from_slice(&d.gold);
            out.mask[o..o + d.len()].iter_mut().for_each(|m| *m = true);
            out.crops.push(d.crops.clone());
            out.n_segments.push(d.n_segments);
            out.doc_ids.push(d.doc_id.clone());
        }
        Ok(out)
    }

    /// Real-token count per row; errors when a row's mask is not a prefix.
    pub fn lengths(&self) -> Result<Vec<usize>> {
        (0..self.batch)
            .map(|b| {
                let row = &self.mask[b * self.max_len..(b + 1) * self.max_len];
                let n = row.iter().take_while(|&&m| m).count();
                if row[n..].iter().any(|&m| m) {
                    Err(Error::Shape(format!("mask row {b} is not a prefix")))
                } else {
                    Ok(n)
                }
            })
            .collect()
    }

    /// Per-row gold tag indices of real tokens.
    pub fn gold_rows(&self) -> Vec<Vec<usize>> {
        (0..self.batch)
            .map(|b| {
                (0..self.max_len)
                    .filter(|&i| self.mask[b * self.max_len + i])
                    .map(|i| self.gold[b * self.max_len + i])
                    .collect()
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn buckets_cover_grid() {
        assert_eq!(layout_bucket(0, 32), 0);
        assert_eq!(layout_bucket(1000, 32), 31);
        assert_eq!(layout_bucket(500, 32), 15);
        for c in 0..=1000 {
            assert!(layout_bucket(c, 7) < 7);
        }
    }
}
