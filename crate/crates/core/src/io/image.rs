use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Interleaved 8-bit RGB pixels, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

/// `[3, H, W]` tensor in [-1, 1] to 8-bit RGB, rounding to nearest.
pub fn image_to_bytes(img: &Tensor) -> Result<RgbImage> {
    let (h, w) = match img.shape() {
        &[3, h, w] => (h, w),
        s => return Err(Error::invalid("image_to_bytes", format!("expected [3, H, W], got {s:?}"))),
    };
    let d = img.data();
    let mut pixels = Vec::with_capacity(3 * h * w);
    for i in 0..h * w {
        for c in 0..3 {
            let v = d[c * h * w + i];
            pixels.push(((v + 1.0) * 0.5 * 255.0).round().clamp(0.0, 255.0) as u8);
        }
    }
    Ok(RgbImage { width: w, height: h, pixels })
}

pub fn bytes_to_image(img: &RgbImage) -> Tensor {
    let (h, w) = (img.height, img.width);
    let mut data = vec![0.0; 3 * h * w];
    for i in 0..h * w {
        for c in 0..3 {
            data[c * h * w + i] = f64::from(img.pixels[3 * i + c]) / 255.0 * 2.0 - 1.0;
        }
    }
    Tensor::new(vec![3, h, w], data).expect("consistent image shape")
}

/// The value an image takes after an 8-bit write and read.
pub fn quantize(img: &Tensor) -> Result<Tensor> {
    Ok(bytes_to_image(&image_to_bytes(img)?))
}

fn has_ext(path: &Path, ext: &str) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case(ext))
}

/// Reads a PPM or PNG chosen by extension.
pub fn read_image(path: impl AsRef<Path>) -> Result<RgbImage> {
    let path = path.as_ref();
    if has_ext(path, "png") {
        read_png(path)
    } else {
        read_ppm(path)
    }
}

/// Writes a PPM or PNG chosen by extension (PPM unless `.png`).
pub fn write_image(path: impl AsRef<Path>, img: &RgbImage) -> Result<()> {
    let path = path.as_ref();
    if has_ext(path, "png") {
        write_png(path, img)
    } else {
        write_ppm(path, img)
    }
}

pub fn write_ppm(path: impl AsRef<Path>, img: &RgbImage) -> Result<()> {
    let path = path.as_ref();
    let mut out = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.pixels);
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Binary PPM (P6) with maxval 255; header comments are allowed.
pub fn read_ppm(path: impl AsRef<Path>) -> Result<RgbImage> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |reason: &str| Error::format(path, format!("PPM: {reason}"));
    let mut pos = 0;
    let mut fields = Vec::new();
    while fields.len() < 4 {
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
            return Err(bad("truncated header"));
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("non-ASCII header"))?);
    }
    if fields[0] != "P6" {
        return Err(bad("only binary P6 is supported"));
    }
    let num = |s: &str| s.parse::<usize>().map_err(|_| bad("bad header number"));
    let (width, height, maxval) = (num(fields[1])?, num(fields[2])?, num(fields[3])?);
    if maxval != 255 {
        return Err(bad("only maxval 255 is supported"));
    }
    if width == 0 || height == 0 {
        return Err(bad("empty image"));
    }
    pos += 1;
    let n = 3 * width * height;
    let pixels = bytes
        .get(pos..pos + n)
        .ok_or_else(|| bad("truncated pixel data"))?
        .to_vec();
    Ok(RgbImage { width, height, pixels })
}

pub fn write_png(path: impl AsRef<Path>, img: &RgbImage) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), img.width as u32, img.height as u32);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    let png_err = |e: png::EncodingError| Error::format(path, format!("PNG: {e}"));
    let mut writer = enc.write_header().map_err(png_err)?;
    writer.write_image_data(&img.pixels).map_err(png_err)?;
    writer.finish().map_err(png_err)
}

/// 8-bit RGB or RGBA PNG (alpha is dropped), non-interlaced.
pub fn read_png(path: impl AsRef<Path>) -> Result<RgbImage> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let png_err = |e: png::DecodingError| Error::format(path, format!("PNG: {e}"));
    let mut reader = png::Decoder::new(BufReader::new(file)).read_info().map_err(png_err)?;
    let info = reader.info();
    if info.interlaced {
        return Err(Error::format(path, "PNG: interlaced images are not supported"));
    }
    if info.bit_depth != png::BitDepth::Eight {
        return Err(Error::format(path, "PNG: only 8-bit images are supported"));
    }
    let channels = match info.color_type {
        png::ColorType::Rgb => 3,
        png::ColorType::Rgba => 4,
        other => return Err(Error::format(path, format!("PNG: unsupported color type {other:?}"))),
    };
    let (width, height) = (info.width as usize, info.height as usize);
    let mut buf = vec![0; reader.output_buffer_size().ok_or_else(|| Error::format(path, "PNG: image too large"))?];
    let frame = reader.next_frame(&mut buf).map_err(png_err)?;
    let data = &buf[..frame.buffer_size()];
    let pixels = if channels == 3 {
        data.to_vec()
    } else {
        data.chunks_exact(4).flat_map(|p| [p[0], p[1], p[2]]).collect()
    };
    Ok(RgbImage { width, height, pixels })
}
