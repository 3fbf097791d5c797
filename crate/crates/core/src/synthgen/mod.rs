//! Deterministic synthetic form corpus.
//!
//! Each page is a grid of cells; segments occupy distinct cells. A segment's
//! entity type is rendered as a cell style (background shade, optional border)
//! and, with probability `1 - ambiguity`, also shows up in its words. With
//! `ambiguity = 1` the words carry no type information at all and only the
//! pixels do.

mod funsd;

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::document::{Document, LabelSet, TextSegment, OTHER};
use crate::error::{Error, Result};
use crate::image::{PixelRect, RasterImage, Rgb};

pub use funsd::load_funsd;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderStyle {
    pub background: Rgb,
    pub border: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenSpec {
    pub seed: u64,
    pub n_train: usize,
    pub n_test: usize,
    pub labels: LabelSet,
    /// Page size in pixels, `(width, height)`.
    pub page_px: (u32, u32),
    /// Layout grid, `(rows, cols)`.
    pub grid: (u32, u32),
    pub segments_per_doc: usize,
    /// Inclusive range of tokens per segment.
    pub tokens_per_segment: (usize, usize),
    /// Closed vocabulary per label, including `OTHER`.
    pub vocab: BTreeMap<String, Vec<String>>,
    /// Words shared by every label.
    pub ambiguous_vocab: Vec<String>,
    /// Fraction of segments whose words come from `ambiguous_vocab`.
    pub ambiguity: f64,
    pub style_map: BTreeMap<String, RenderStyle>,
}

impl Default for GenSpec {
    fn default() -> Self {
        let labels = LabelSet::funsd();
        let mut words = WordFactory::new(0x5eed_0f_f0c5);
        let vocab = labels
            .with_other()
            .into_iter()
            .map(|l| (l, words.take(24)))
            .collect();
        let ambiguous_vocab = words.take(24);
        let style_map = [
            ("QUESTION", [232, 232, 232], false),
            ("ANSWER", [255, 255, 255], true),
            ("HEADER", [196, 196, 196], true),
            (OTHER, [255, 255, 255], false),
        ]
        .into_iter()
        .map(|(l, bg, border)| (l.to_string(), RenderStyle { background: bg, border }))
        .collect();
        Self {
            seed: 0,
            n_train: 250,
            n_test: 50,
            labels,
            page_px: (256, 256),
            grid: (8, 3),
            segments_per_doc: 12,
            tokens_per_segment: (1, 3),
            vocab,
            ambiguous_vocab,
            ambiguity: 0.5,
            style_map,
        }
    }
}

/// Pronounceable pseudo-words, globally unique per factory.
struct WordFactory {
    rng: ChaCha8Rng,
    seen: HashSet<String>,
}

impl WordFactory {
    const ONSETS: [&'static str; 14] = ["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z"];
    const VOWELS: [&'static str; 5] = ["a", "e", "i", "o", "u"];

    fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            seen: HashSet::new(),
        }
    }

    fn take(&mut self, n: usize) -> Vec<String> {
        let mut out = Vec::with_capacity(n);
        while out.len() < n {
            let syllables = self.rng.gen_range(1..=3);
            let mut w = String::new();
            for _ in 0..syllables {
                w.push_str(Self::ONSETS[self.rng.gen_range(0..Self::ONSETS.len())]);
                w.push_str(Self::VOWELS[self.rng.gen_range(0..Self::VOWELS.len())]);
            }
            if self.seen.insert(w.clone()) {
                out.push(w);
            }
        }
        out
    }
}

const MARGIN_PX: u32 = 2;
const SEGMENT_HEIGHT_PX: u32 = 12;
const GLYPH_W: u32 = 2;
const GLYPH_GAP: u32 = 1;
const SPACE_W: u32 = 3;
const INK: Rgb = [32, 32, 32];
const BORDER: Rgb = [96, 96, 96];
const PAPER: Rgb = [255, 255, 255];

impl GenSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.ambiguity) {
            return Err(Error::Config(format!("ambiguity {} outside [0, 1]", self.ambiguity)));
        }
        let cells = self.grid.0 as usize * self.grid.1 as usize;
        if self.segments_per_doc > cells {
            return Err(Error::Config(format!(
                "{} segments per document do not fit a {}x{} grid",
                self.segments_per_doc, self.grid.0, self.grid.1
            )));
        }
        let (lo, hi) = self.tokens_per_segment;
        if lo == 0 || lo > hi {
            return Err(Error::Config(format!("bad tokens_per_segment range ({lo}, {hi})")));
        }
        if self.ambiguous_vocab.is_empty() {
            return Err(Error::Config("ambiguous vocabulary is empty".into()));
        }
        for l in self.labels.with_other() {
            match self.vocab.get(&l) {
                Some(v) if !v.is_empty() => {}
                _ => return Err(Error::Config(format!("vocabulary for {l} is missing or empty"))),
            }
            if !self.style_map.contains_key(&l) {
                return Err(Error::Config(format!("style_map has no entry for {l}")));
            }
        }
        let (w, h) = self.page_px;
        let cell_h = h / self.grid.0.max(1);
        let cell_w = w / self.grid.1.max(1);
        if cell_h < SEGMENT_HEIGHT_PX + 2 * MARGIN_PX || cell_w < 4 * MARGIN_PX + GLYPH_W {
            return Err(Error::Config(format!("cells of {cell_w}x{cell_h} px are too small")));
        }
        Ok(())
    }

    /// SHA-256 over the canonical JSON form.
    pub fn digest(&self) -> String {
        crate::digest_json(self)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusSplit {
    pub train: Vec<Document>,
    pub test: Vec<Document>,
}

pub fn generate_corpus(spec: &GenSpec) -> Result<CorpusSplit> {
    spec.validate()?;
    let train = (0..spec.n_train)
        .map(|i| generate_document(spec, i, format!("train-{i:04}")))
        .collect::<Result<Vec<_>>>()?;
    let test = (0..spec.n_test)
        .map(|i| generate_document(spec, spec.n_train + i, format!("test-{i:04}")))
        .collect::<Result<Vec<_>>>()?;
    Ok(CorpusSplit { train, test })
}

/// Generates the document at global position `index`; independent of every other index.
pub fn generate_document(spec: &GenSpec, index: usize, doc_id: String) -> Result<Document> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ index as u64);
    let (page_w, page_h) = spec.page_px;
    let (rows, cols) = spec.grid;
    let cell_w = page_w / cols;
    let cell_h = page_h / rows;
    let types = spec.labels.with_other();

    let mut cells = sample(&mut rng, (rows * cols) as usize, spec.segments_per_doc).into_vec();
    // reading order: top-to-bottom, then left-to-right
    cells.sort_unstable();

    let mut image = RasterImage::filled(page_w, page_h, PAPER);
    let mut segments = Vec::with_capacity(cells.len());
    for (k, cell) in cells.into_iter().enumerate() {
        let label = &types[rng.gen_range(0..types.len())];
        let n_tok = rng.gen_range(spec.tokens_per_segment.0..=spec.tokens_per_segment.1);
        let vocab = if rng.gen::<f64>() < spec.ambiguity {
            &spec.ambiguous_vocab
        } else {
            &spec.vocab[label]
        };
        let tokens: Vec<String> = (0..n_tok).map(|_| vocab[rng.gen_range(0..vocab.len())].clone()).collect();

        let row = cell as u32 / cols;
        let col = cell as u32 % cols;
        let jitter_x = rng.gen_range(0..=MARGIN_PX);
        let jitter_y = rng.gen_range(0..=(cell_h - SEGMENT_HEIGHT_PX - 2 * MARGIN_PX).min(4));
        let left = col * cell_w + MARGIN_PX + jitter_x;
        let top = row * cell_h + MARGIN_PX + jitter_y;
        let text_w = text_width(&tokens);
        let max_right = (col + 1) * cell_w - MARGIN_PX;
        let right = (left + text_w + 2 * MARGIN_PX + 2).min(max_right);
        let rect = PixelRect::new(left, top, right, top + SEGMENT_HEIGHT_PX);

        render_segment(&mut image, rect, &tokens, spec.style_map[label]);
        segments.push(TextSegment::new(k as u32, tokens, rect, label.clone(), page_w, page_h)?);
    }
    Document::new(doc_id, segments, image)
}

fn text_width(tokens: &[String]) -> u32 {
    let chars: u32 = tokens.iter().map(|t| t.chars().count() as u32).sum();
    chars * (GLYPH_W + GLYPH_GAP) + SPACE_W * tokens.len().saturating_sub(1) as u32
}

/// Styled box with one dark pseudo-glyph per character.
fn render_segment(image: &mut RasterImage, rect: PixelRect, tokens: &[String], style: RenderStyle) {
    image.fill_rect(rect, style.background);
    if style.border {
        image.outline_rect(rect, BORDER);
    }
    let glyph_top = rect.top + 3;
    let glyph_bottom = rect.bottom.saturating_sub(3);
    let mut x = rect.left + MARGIN_PX + 1;
    let limit = rect.right.saturating_sub(MARGIN_PX);
    for (i, tok) in tokens.iter().enumerate() {
        if i > 0 {
            x += SPACE_W;
        }
        for _ in tok.chars() {
            if x + GLYPH_W > limit {
                return;
            }
            image.fill_rect(PixelRect::new(x, glyph_top, x + GLYPH_W, glyph_bottom), INK);
            x += GLYPH_W + GLYPH_GAP;
        }
    }
}

/// Draws `ceil(p * N)` documents uniformly without replacement, keeping input order.
pub fn subsample(train: &[Document], p: f64, seed: u64) -> Result<Vec<Document>> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::Config(format!("subsample fraction {p} must be in (0, 1]")));
    }
    let n = train.len();
    let k = ((p * n as f64).ceil() as usize).min(n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = sample(&mut rng, n, k).into_vec();
    idx.sort_unstable();
    Ok(idx.into_iter().map(|i| train[i].clone()).collect())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub labels: LabelSet,
    pub train: Vec<String>,
    pub test: Vec<String>,
    pub spec_digest: Option<String>,
}

impl CorpusSplit {
    /// Writes every document plus `manifest.json` into `dir`.
    pub fn save(&self, dir: &Path, labels: &LabelSet, spec_digest: Option<String>) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for d in self.train.iter().chain(&self.test) {
            d.save(dir)?;
        }
        let manifest = Manifest {
            labels: labels.clone(),
            train: self.train.iter().map(|d| d.doc_id.clone()).collect(),
            test: self.test.iter().map(|d| d.doc_id.clone()).collect(),
            spec_digest,
        };
        let path = dir.join("manifest.json");
        std::fs::write(&path, serde_json::to_vec_pretty(&manifest)?).map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<(Self, LabelSet)> {
        let path = dir.join("manifest.json");
        let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: Manifest =
            serde_json::from_slice(&bytes).map_err(|e| Error::parse(path.display().to_string(), e.to_string()))?;
        let load = |ids: &[String]| -> Result<Vec<Document>> {
            ids.iter()
                .map(|id| {
                    let d = Document::load(&dir.join(format!("{id}.json")))?;
                    d.validate_labels(&manifest.labels)?;
                    Ok(d)
                })
                .collect()
        };
        let split = CorpusSplit {
            train: load(&manifest.train)?,
            test: load(&manifest.test)?,
        };
        Ok((split, manifest.labels))
    }
}
