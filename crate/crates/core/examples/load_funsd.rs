//! Reads a FUNSD-style annotation and page image into a document.
//!
//! cargo run --example load_funsd -- [annotation.json page.ppm]
//!
//! Without arguments a small inline form is used.

use vancl::image::RasterImage;
use vancl::synthgen::load_funsd;

const INLINE: &str = r#"{"form": [
  {"id": 0, "label": "header",   "box": [10, 5, 90, 15],  "words": [{"text": "ORDER"}, {"text": "FORM"}]},
  {"id": 1, "label": "question", "box": [10, 30, 40, 40], "words": [{"text": "Name:"}]},
  {"id": 2, "label": "answer",   "box": [45, 30, 90, 40], "words": [{"text": "J."}, {"text": "Doe"}]},
  {"id": 3, "label": "other",    "box": [10, 80, 30, 90], "words": [{"text": "p.1"}]}
]}"#;

fn main() -> vancl::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let (annotation, image, id) = if args.len() >= 3 {
        let read = |p: &str| std::fs::read(p).map_err(|e| vancl::Error::io(std::path::Path::new(p), e));
        (read(&args[1])?, read(&args[2])?, args[1].clone())
    } else {
        (INLINE.as_bytes().to_vec(), RasterImage::filled(100, 100, [255; 3]).to_ppm(), "inline".to_string())
    };
    let doc = load_funsd(&id, &annotation, &image)?;
    println!("{}: {} segments, {} tokens", doc.doc_id, doc.segments.len(), doc.n_tokens());
    for s in &doc.segments {
        println!("  {:<8} {:?} {}", s.label, s.bbox, s.tokens.join(" "));
    }
    let tags: Vec<String> = doc.gold_tags().tags.iter().map(|t| t.to_string()).collect();
    println!("gold tags: {}", tags.join(" "));
    Ok(())
}
