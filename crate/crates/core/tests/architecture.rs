//! Inference code must never reach the painter.

use std::path::Path;

fn source(rel: &str) -> String {
    std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("src").join(rel)).unwrap()
}

#[test]
fn evaluation_and_decoding_do_not_import_paint() {
    for file in ["eval.rs", "decode.rs", "backbone/model.rs", "backbone/forward.rs", "backbone/batch.rs"] {
        let text = source(file);
        for line in text.lines().filter(|l| l.trim_start().starts_with("use ")) {
            assert!(!line.contains("paint"), "{file}: {line}");
        }
        assert!(!text.contains("ColorScheme"), "{file} mentions ColorScheme");
        assert!(!text.contains("paint_document"), "{file} calls paint_document");
    }
}
