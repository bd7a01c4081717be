//! PNG and binary PPM (P6) ingest/export. Pixels are 8-bit sRGB on disk and
//! `v / 255` in memory; export rounds `v * 255`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::ImageBuffer;
use crate::error::{Error, Result};

pub fn load_image(path: &Path) -> Result<ImageBuffer> {
    match extension(path).as_deref() {
        Some("png") => read_png(path),
        Some("ppm") => read_ppm(path),
        _ => Err(Error::Format(format!(
            "{}: unsupported image extension (expected .png or .ppm)",
            path.display()
        ))),
    }
}

pub fn save_image(img: &ImageBuffer, path: &Path) -> Result<()> {
    match extension(path).as_deref() {
        Some("png") => write_png(img, path),
        Some("ppm") => write_ppm(img, path),
        _ => Err(Error::invalid(format!(
            "{}: unsupported image extension (expected .png or .ppm)",
            path.display()
        ))),
    }
}

fn extension(path: &Path) -> Option<String> {
    path.extension().map(|e| e.to_string_lossy().to_ascii_lowercase())
}

pub fn read_png(path: &Path) -> Result<ImageBuffer> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut decoder = png::Decoder::new(BufReader::new(file));
    decoder.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
    let mut reader = decoder
        .read_info()
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::Format(format!("{}: image too large", path.display())))?;
    let mut buf = vec![0; size];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let (w, h) = (info.width as usize, info.height as usize);
    let bytes = &buf[..info.buffer_size()];
    let rgb: Vec<u8> = match info.color_type {
        png::ColorType::Rgb => bytes.to_vec(),
        png::ColorType::Rgba => bytes.chunks_exact(4).flat_map(|p| [p[0], p[1], p[2]]).collect(),
        png::ColorType::Grayscale => bytes.iter().flat_map(|&g| [g, g, g]).collect(),
        png::ColorType::GrayscaleAlpha => bytes.chunks_exact(2).flat_map(|p| [p[0], p[0], p[0]]).collect(),
        png::ColorType::Indexed => {
            return Err(Error::Format(format!("{}: unexpanded palette image", path.display())))
        }
    };
    ImageBuffer::from_rgb8(h, w, &rgb)
}

pub fn write_png(img: &ImageBuffer, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut encoder = png::Encoder::new(BufWriter::new(file), img.width() as u32, img.height() as u32);
    encoder.set_color(png::ColorType::Rgb);
    encoder.set_depth(png::BitDepth::Eight);
    let to_format = |e: png::EncodingError| Error::Format(format!("{}: {e}", path.display()));
    let mut writer = encoder.write_header().map_err(to_format)?;
    writer.write_image_data(&img.to_rgb8()).map_err(to_format)?;
    writer.finish().map_err(to_format)
}

pub fn write_ppm(img: &ImageBuffer, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write!(w, "P6\n{} {}\n255\n", img.width(), img.height()).map_err(|e| Error::io(path, e))?;
    w.write_all(&img.to_rgb8()).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_ppm(path: &Path) -> Result<ImageBuffer> {
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    parse_ppm(&bytes).map_err(|msg| Error::Format(format!("{}: {msg}", path.display())))
}

fn parse_ppm(bytes: &[u8]) -> std::result::Result<ImageBuffer, String> {
    let mut pos = 0;
    let mut fields = Vec::with_capacity(4);
    while fields.len() < 4 {
        // whitespace and '#' comments between header fields
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err("truncated header".into());
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    if fields[0] != "P6" {
        return Err(format!("unsupported magic {:?}", fields[0]));
    }
    let parse = |s: &str| s.parse::<usize>().map_err(|_| format!("bad header field {s:?}"));
    let (w, h, maxval) = (parse(&fields[1])?, parse(&fields[2])?, parse(&fields[3])?);
    if maxval != 255 {
        return Err(format!("maxval {maxval} unsupported (only 255)"));
    }
    pos += 1; // single whitespace byte after maxval
    let need = w * h * 3;
    if bytes.len() < pos + need {
        return Err("truncated pixel data".into());
    }
    ImageBuffer::from_rgb8(h, w, &bytes[pos..pos + need]).map_err(|e| e.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> ImageBuffer {
        ImageBuffer::from_fn(5, 7, |y, x, c| ((y * 31 + x * 17 + c * 11) % 256) as f64 / 255.0)
    }

    #[test]
    fn ppm_and_png_round_trip_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let img = sample();
        for name in ["a.ppm", "a.png"] {
            let p = dir.path().join(name);
            save_image(&img, &p).unwrap();
            assert_eq!(load_image(&p).unwrap(), img);
        }
    }

    #[test]
    fn ppm_header_with_comment() {
        let mut bytes = b"P6\n# made by hand\n2 1\n255\n".to_vec();
        bytes.extend_from_slice(&[255, 0, 0, 0, 0, 255]);
        let img = parse_ppm(&bytes).unwrap();
        assert_eq!(img.pixel(0, 0), [1.0, 0.0, 0.0]);
        assert_eq!(img.pixel(0, 1), [0.0, 0.0, 1.0]);
    }

    #[test]
    fn ppm_rejects_garbage() {
        assert!(parse_ppm(b"P3\n1 1\n255\n").is_err());
        assert!(parse_ppm(b"P6\n2 2\n255\n\x00").is_err());
        assert!(parse_ppm(b"P6\n1 1\n65535\n\x00\x00\x00").is_err());
    }

    #[test]
    fn unknown_extension_is_format_error() {
        assert!(matches!(load_image(Path::new("x.bmp")), Err(Error::Format(_))));
    }
}
