//! Lossless 8-bit image files: PNG and binary PPM (P6).
//!
//! Images are `[H, W, 3]` tensors with values in `[0, 1]`. Saving quantizes
//! each channel to the nearest of 256 levels, so a round trip moves every
//! value by at most half a level.

use std::io::{BufWriter, Cursor, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Supported on-disk formats, chosen by file extension.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ImageFormat {
    Png,
    Ppm,
}

impl ImageFormat {
    pub fn from_path(path: &Path) -> Result<Self> {
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(|e| e.to_ascii_lowercase());
        match ext.as_deref() {
            Some("png") => Ok(ImageFormat::Png),
            Some("ppm") => Ok(ImageFormat::Ppm),
            _ => Err(Error::validation(format!(
                "{}: unsupported image extension (expected .png or .ppm)",
                path.display()
            ))),
        }
    }
}

/// Quantizes a value in `[0, 1]` to an 8-bit level. Out-of-range values are clamped.
pub fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn dequantize(b: u8) -> f32 {
    b as f32 / 255.0
}

fn rgb_dims(image: &Tensor) -> Result<(usize, usize)> {
    let s = image.shape();
    let dims = match s {
        [h, w, 3] => (*h, *w),
        [1, h, w, 3] => (*h, *w),
        _ => {
            return Err(Error::validation(format!(
                "expected an [H, W, 3] image, got shape {s:?}"
            )))
        }
    };
    Ok(dims)
}

/// Interleaved RGB bytes of an image.
pub fn to_rgb8(image: &Tensor) -> Result<(usize, usize, Vec<u8>)> {
    let (h, w) = rgb_dims(image)?;
    Ok((h, w, image.data().iter().map(|&v| quantize(v)).collect()))
}

pub fn from_rgb8(height: usize, width: usize, bytes: &[u8]) -> Result<Tensor> {
    Tensor::new(
        vec![height, width, 3],
        bytes.iter().map(|&b| dequantize(b)).collect(),
    )
}

pub fn save_image(path: impl AsRef<Path>, image: &Tensor) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode(ImageFormat::from_path(path)?, image)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_image(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let format = ImageFormat::from_path(path)?;
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(format, &bytes).map_err(|(offset, message)| Error::Parse {
        path: path.to_path_buf(),
        offset,
        message,
    })
}

/// Encodes an image to the bytes of the given format.
pub fn encode(format: ImageFormat, image: &Tensor) -> Result<Vec<u8>> {
    let (h, w, rgb) = to_rgb8(image)?;
    match format {
        ImageFormat::Ppm => {
            let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
            out.extend_from_slice(&rgb);
            Ok(out)
        }
        ImageFormat::Png => {
            let mut out = Vec::new();
            {
                let mut encoder = png::Encoder::new(BufWriter::new(&mut out), w as u32, h as u32);
                encoder.set_color(png::ColorType::Rgb);
                encoder.set_depth(png::BitDepth::Eight);
                let mut writer = encoder
                    .write_header()
                    .map_err(|e| Error::validation(format!("png encode: {e}")))?;
                writer
                    .write_image_data(&rgb)
                    .map_err(|e| Error::validation(format!("png encode: {e}")))?;
                writer
                    .finish()
                    .map_err(|e| Error::validation(format!("png encode: {e}")))?;
            }
            Ok(out)
        }
    }
}

/// Decodes image bytes. Errors carry the byte offset where parsing failed.
pub fn decode(format: ImageFormat, bytes: &[u8]) -> std::result::Result<Tensor, (u64, String)> {
    match format {
        ImageFormat::Ppm => decode_ppm(bytes),
        ImageFormat::Png => decode_png(bytes),
    }
}

fn decode_png(bytes: &[u8]) -> std::result::Result<Tensor, (u64, String)> {
    let mut cursor = Cursor::new(bytes);
    let result = (|| {
        let mut decoder = png::Decoder::new(&mut cursor);
        decoder.set_transformations(png::Transformations::normalize_to_color8());
        let mut reader = decoder.read_info()?;
        let size = reader.output_buffer_size().unwrap_or(0);
        let mut buf = vec![0u8; size];
        let info = reader.next_frame(&mut buf)?;
        Ok::<_, png::DecodingError>((info, buf))
    })();
    let (info, buf) = result.map_err(|e| (cursor.position(), e.to_string()))?;
    let (h, w) = (info.height as usize, info.width as usize);
    let per_pixel = info.color_type.samples();
    let mut rgb = Vec::with_capacity(h * w * 3);
    for row in buf.chunks(info.line_size).take(h) {
        for px in row[..w * per_pixel].chunks(per_pixel) {
            match info.color_type {
                png::ColorType::Grayscale | png::ColorType::GrayscaleAlpha => {
                    rgb.extend_from_slice(&[px[0]; 3]);
                }
                _ => rgb.extend_from_slice(&px[..3]),
            }
        }
    }
    from_rgb8(h, w, &rgb).map_err(|e| (bytes.len() as u64, e.to_string()))
}

struct PpmHeader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl PpmHeader<'_> {
    fn skip_whitespace(&mut self) {
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b'#' => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                b if b.is_ascii_whitespace() => self.pos += 1,
                _ => break,
            }
        }
    }

    fn number(&mut self, what: &str) -> std::result::Result<usize, (u64, String)> {
        self.skip_whitespace();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err((start as u64, format!("expected {what}")));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or((start as u64, format!("{what} out of range")))
    }
}

fn decode_ppm(bytes: &[u8]) -> std::result::Result<Tensor, (u64, String)> {
    if bytes.len() < 2 || &bytes[..2] != b"P6" {
        return Err((0, "missing P6 magic".into()));
    }
    let mut header = PpmHeader { bytes, pos: 2 };
    let width = header.number("width")?;
    let height = header.number("height")?;
    let maxval_at = header.pos as u64;
    let maxval = header.number("maxval")?;
    if maxval != 255 {
        return Err((maxval_at, format!("unsupported maxval {maxval} (only 255)")));
    }
    if width == 0 || height == 0 {
        return Err((maxval_at, "zero image extent".into()));
    }
    match bytes.get(header.pos) {
        Some(b) if b.is_ascii_whitespace() => header.pos += 1,
        _ => return Err((header.pos as u64, "expected whitespace after maxval".into())),
    }
    let need = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(3))
        .ok_or((0, "image extent overflows".to_string()))?;
    let pixels = &bytes[header.pos..];
    if pixels.len() < need {
        return Err((
            bytes.len() as u64,
            format!("truncated pixel data: expected {need} bytes, found {}", pixels.len()),
        ));
    }
    from_rgb8(height, width, &pixels[..need]).map_err(|e| (header.pos as u64, e.to_string()))
}

/// Lists the image files of a directory in lexicographic order.
pub fn list_images(dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_file() && ImageFormat::from_path(&path).is_ok() {
            paths.push(path);
        }
    }
    paths.sort();
    Ok(paths)
}

/// Loads every image in a directory (see [`list_images`]) as one `[N, H, W, 3]` batch.
pub fn load_image_dir(dir: impl AsRef<Path>) -> Result<(Vec<PathBuf>, Tensor)> {
    let paths = list_images(&dir)?;
    if paths.is_empty() {
        return Err(Error::validation(format!(
            "{}: no .png or .ppm images found",
            dir.as_ref().display()
        )));
    }
    let images = paths.iter().map(load_image).collect::<Result<Vec<_>>>()?;
    Ok((paths, Tensor::stack(&images)?))
}

/// Tiles rows of equally sized images into one image, separated by `gap` white pixels.
///
/// Each inner slice is one row of the grid; shorter rows leave white cells.
pub fn compose_grid(rows: &[Vec<Tensor>], gap: usize) -> Result<Tensor> {
    let first = rows
        .iter()
        .flat_map(|r| r.first())
        .next()
        .ok_or_else(|| Error::validation("grid needs at least one image"))?;
    let (h, w) = rgb_dims(first)?;
    let cols = rows.iter().map(|r| r.len()).max().unwrap_or(0);
    let out_h = rows.len() * h + (rows.len() + 1) * gap;
    let out_w = cols * w + (cols + 1) * gap;
    let mut out = Tensor::ones(&[out_h, out_w, 3]);
    let data = out.data_mut();
    for (r, row) in rows.iter().enumerate() {
        for (c, image) in row.iter().enumerate() {
            if rgb_dims(image)? != (h, w) {
                return Err(Error::Shape {
                    op: "compose_grid",
                    lhs: first.shape().to_vec(),
                    rhs: image.shape().to_vec(),
                });
            }
            let top = gap + r * (h + gap);
            let left = gap + c * (w + gap);
            for y in 0..h {
                let dst = ((top + y) * out_w + left) * 3;
                let src = y * w * 3;
                data[dst..dst + w * 3].copy_from_slice(&image.data()[src..src + w * 3]);
            }
        }
    }
    Ok(out)
}

/// Splits an `[N, H, W, 3]` batch into individual images.
pub fn unbatch(images: &Tensor) -> Vec<Tensor> {
    (0..images.batch()).map(|i| images.batch_item(i)).collect()
}

/// Writes a batch of images as `prefix_00000.ext` files and returns their paths.
pub fn save_batch(dir: &Path, prefix: &str, format: ImageFormat, images: &Tensor) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let ext = match format {
        ImageFormat::Png => "png",
        ImageFormat::Ppm => "ppm",
    };
    let mut paths = Vec::with_capacity(images.batch());
    for (i, image) in unbatch(images).iter().enumerate() {
        let path = dir.join(format!("{prefix}_{i:05}.{ext}"));
        let bytes = encode(format, image)?;
        let mut file = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        file.write_all(&bytes).map_err(|e| Error::io(&path, e))?;
        paths.push(path);
    }
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;

    fn random_image(seed: u64, h: usize, w: usize) -> Tensor {
        let mut rng = SeededRng::new(seed);
        Tensor::from_fn(&[h, w, 3], |_| rng.uniform(0.0, 1.0))
    }

    #[test]
    fn round_trip_within_half_level() {
        let dir = tempfile::tempdir().unwrap();
        let image = random_image(3, 7, 5);
        for name in ["a.png", "a.ppm"] {
            let path = dir.path().join(name);
            save_image(&path, &image).unwrap();
            let back = load_image(&path).unwrap();
            assert_eq!(back.shape(), &[7, 5, 3]);
            let worst = image
                .data()
                .iter()
                .zip(back.data())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0f32, f32::max);
            assert!(worst <= 0.5 / 255.0 + 1e-7, "{name}: {worst}");
        }
    }

    #[test]
    fn png_and_ppm_agree() {
        let image = random_image(4, 6, 9);
        let a = decode(ImageFormat::Png, &encode(ImageFormat::Png, &image).unwrap()).unwrap();
        let b = decode(ImageFormat::Ppm, &encode(ImageFormat::Ppm, &image).unwrap()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn missing_file_is_io_error() {
        let err = load_image("/nonexistent/dir/x.png").unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
        assert!(err.to_string().contains("/nonexistent/dir/x.png"));
    }

    #[test]
    fn corrupt_files_report_offsets() {
        let bytes = encode(ImageFormat::Ppm, &random_image(1, 4, 4)).unwrap();
        let (offset, _) = decode(ImageFormat::Ppm, &bytes[..bytes.len() - 5]).unwrap_err();
        assert_eq!(offset as usize, bytes.len() - 5);
        let (offset, _) = decode(ImageFormat::Ppm, b"P6\n4 x\n255\n").unwrap_err();
        assert_eq!(offset, 5);
        assert_eq!(decode(ImageFormat::Ppm, b"P5").unwrap_err().0, 0);

        let png = encode(ImageFormat::Png, &random_image(1, 4, 4)).unwrap();
        assert!(decode(ImageFormat::Png, &png[..png.len() / 2]).is_err());
        let mut garbage = png.clone();
        garbage[1] = b'X';
        assert!(decode(ImageFormat::Png, &garbage).is_err());
    }

    #[test]
    fn ppm_header_comments() {
        let t = decode(ImageFormat::Ppm, b"P6 # c\n1 1\n255\n\x00\xff\x80").unwrap();
        assert_eq!(t.data(), &[0.0, 1.0, 128.0 / 255.0]);
    }

    #[test]
    fn grid_layout() {
        let a = Tensor::zeros(&[2, 2, 3]);
        let grid = compose_grid(&[vec![a.clone(), a.clone()], vec![a]], 1).unwrap();
        assert_eq!(grid.shape(), &[7, 7, 3]);
        let px = |y: usize, x: usize| grid.data()[(y * 7 + x) * 3];
        assert_eq!(px(0, 0), 1.0);
        assert_eq!(px(1, 1), 0.0);
        assert_eq!(px(4, 2), 0.0);
        assert_eq!(px(4, 3), 1.0);
        assert_eq!(px(4, 4), 1.0);
    }
}
