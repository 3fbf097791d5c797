//! 8-bit RGB rasters and the binary PPM (P6) container used on disk.

use crate::error::{Error, Result};

pub type Rgb = [u8; 3];

/// Half-open pixel rectangle `[left, right) x [top, bottom)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub struct PixelRect {
    pub left: u32,
    pub top: u32,
    pub right: u32,
    pub bottom: u32,
}

impl PixelRect {
    pub fn new(left: u32, top: u32, right: u32, bottom: u32) -> Self {
        Self {
            left,
            top,
            right,
            bottom,
        }
    }

    pub fn width(&self) -> u32 {
        self.right.saturating_sub(self.left)
    }

    pub fn height(&self) -> u32 {
        self.bottom.saturating_sub(self.top)
    }

    pub fn is_empty(&self) -> bool {
        self.width() == 0 || self.height() == 0
    }

    pub fn contains(&self, x: u32, y: u32) -> bool {
        x >= self.left && x < self.right && y >= self.top && y < self.bottom
    }

    pub fn clamp_to(&self, width: u32, height: u32) -> Self {
        let left = self.left.min(width);
        let top = self.top.min(height);
        Self {
            left,
            top,
            right: self.right.min(width).max(left),
            bottom: self.bottom.min(height).max(top),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RasterImage {
    width: u32,
    height: u32,
    pixels: Vec<Rgb>,
}

impl RasterImage {
    pub fn filled(width: u32, height: u32, color: Rgb) -> Self {
        Self {
            width,
            height,
            pixels: vec![color; width as usize * height as usize],
        }
    }

    pub fn from_pixels(width: u32, height: u32, pixels: Vec<Rgb>) -> Result<Self> {
        if pixels.len() != width as usize * height as usize {
            return Err(Error::validation(format!(
                "raster {}x{} needs {} pixels, got {}",
                width,
                height,
                width as usize * height as usize,
                pixels.len()
            )));
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn pixels(&self) -> &[Rgb] {
        &self.pixels
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> Rgb {
        self.pixels[y as usize * self.width as usize + x as usize]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, color: Rgb) {
        let w = self.width as usize;
        self.pixels[y as usize * w + x as usize] = color;
    }

    pub fn fill_rect(&mut self, rect: PixelRect, color: Rgb) {
        let r = rect.clamp_to(self.width, self.height);
        for y in r.top..r.bottom {
            let row = y as usize * self.width as usize;
            self.pixels[row + r.left as usize..row + r.right as usize].fill(color);
        }
    }

    /// Draws the 1-pixel inner border ring of `rect`.
    pub fn outline_rect(&mut self, rect: PixelRect, color: Rgb) {
        let r = rect.clamp_to(self.width, self.height);
        if r.is_empty() {
            return;
        }
        for x in r.left..r.right {
            self.set(x, r.top, color);
            self.set(x, r.bottom - 1, color);
        }
        for y in r.top..r.bottom {
            self.set(r.left, y, color);
            self.set(r.right - 1, y, color);
        }
    }

    pub fn to_ppm(&self) -> Vec<u8> {
        let header = format!("P6\n{} {}\n255\n", self.width, self.height);
        let mut out = Vec::with_capacity(header.len() + self.pixels.len() * 3);
        out.extend_from_slice(header.as_bytes());
        for p in &self.pixels {
            out.extend_from_slice(p);
        }
        out
    }

    pub fn from_ppm(bytes: &[u8]) -> Result<Self> {
        let mut cursor = 0usize;
        let mut fields = Vec::with_capacity(4);
        while fields.len() < 4 {
            // skip whitespace and comments
            while cursor < bytes.len() {
                match bytes[cursor] {
                    b'#' => {
                        while cursor < bytes.len() && bytes[cursor] != b'\n' {
                            cursor += 1;
                        }
                    }
                    c if c.is_ascii_whitespace() => cursor += 1,
                    _ => break,
                }
            }
            let start = cursor;
            while cursor < bytes.len() && !bytes[cursor].is_ascii_whitespace() {
                cursor += 1;
            }
            if start == cursor {
                return Err(Error::parse(
                    format!("ppm byte {start}"),
                    "truncated header",
                ));
            }
            fields.push(String::from_utf8_lossy(&bytes[start..cursor]).into_owned());
        }
        if fields[0] != "P6" {
            return Err(Error::parse("ppm magic", format!("expected P6, found {:?}", fields[0])));
        }
        let parse_num = |i: usize, what: &str| -> Result<u32> {
            fields[i]
                .parse::<u32>()
                .map_err(|_| Error::parse(format!("ppm {what}"), format!("not an integer: {:?}", fields[i])))
        };
        let width = parse_num(1, "width")?;
        let height = parse_num(2, "height")?;
        let maxval = parse_num(3, "maxval")?;
        if maxval != 255 {
            return Err(Error::parse("ppm maxval", format!("only 255 supported, got {maxval}")));
        }
        // exactly one whitespace byte separates the header from the raster
        cursor += 1;
        let need = width as usize * height as usize * 3;
        let data = bytes.get(cursor..).unwrap_or(&[]);
        if data.len() < need {
            return Err(Error::parse(
                "ppm raster",
                format!("expected {need} bytes, found {}", data.len()),
            ));
        }
        let pixels = data[..need]
            .chunks_exact(3)
            .map(|c| [c[0], c[1], c[2]])
            .collect();
        Ok(Self {
            width,
            height,
            pixels,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ppm_header_and_size() {
        let img = RasterImage::filled(3, 2, [1, 2, 3]);
        let bytes = img.to_ppm();
        assert!(bytes.starts_with(b"P6\n3 2\n255\n"));
        assert_eq!(bytes.len(), 11 + 18);
        assert_eq!(RasterImage::from_ppm(&bytes).unwrap(), img);
    }

    #[test]
    fn ppm_with_comment() {
        let mut bytes = b"P6\n# made by hand\n1 1\n255\n".to_vec();
        bytes.extend_from_slice(&[9, 8, 7]);
        let img = RasterImage::from_ppm(&bytes).unwrap();
        assert_eq!(img.get(0, 0), [9, 8, 7]);
    }

    #[test]
    fn ppm_rejects_truncated_raster() {
        let bytes = b"P6\n2 2\n255\n\x00\x00\x00".to_vec();
        assert!(matches!(RasterImage::from_ppm(&bytes), Err(Error::Parse { .. })));
    }

    #[test]
    fn outline_only_touches_ring() {
        let mut img = RasterImage::filled(5, 5, [0, 0, 0]);
        img.outline_rect(PixelRect::new(1, 1, 4, 4), [255, 255, 255]);
        assert_eq!(img.get(2, 2), [0, 0, 0]);
        assert_eq!(img.get(1, 2), [255, 255, 255]);
        assert_eq!(img.get(3, 3), [255, 255, 255]);
        assert_eq!(img.get(4, 4), [0, 0, 0]);
    }
}
