//! Paints one synthetic page with each built-in color scheme and writes the PPMs.
//!
//! cargo run --example paint_page -- [out_dir]

use std::path::PathBuf;

use vancl::paint::{builtin_scheme, paint_document, ColorScheme};
use vancl::synthgen::{generate_document, GenSpec};

fn main() -> vancl::Result<()> {
    let out = std::env::args()
        .nth(1)
        .map_or_else(|| std::env::temp_dir().join("vancl-paint"), PathBuf::from);
    std::fs::create_dir_all(&out).map_err(|e| vancl::Error::io(&out, e))?;

    let spec = GenSpec::default();
    let doc = generate_document(&spec, 0, "page".into())?;
    std::fs::write(out.join("original.ppm"), doc.image.to_ppm()).map_err(|e| vancl::Error::io(&out, e))?;

    for row in 1..=8 {
        let scheme = builtin_scheme(row)?;
        let painted = paint_document(&doc, &scheme)?;
        let path = out.join(format!("{}.ppm", scheme.name));
        std::fs::write(&path, painted.image.to_ppm()).map_err(|e| vancl::Error::io(&path, e))?;
        println!("{}", path.display());
    }

    // A noop scheme leaves the page untouched.
    let noop = ColorScheme::noop(&spec.labels);
    assert_eq!(paint_document(&doc, &noop)?.image, doc.image);
    Ok(())
}
