//! PNG reading and writing for the raster types used across the crate.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use png::{BitDepth, ColorType, Decoder, Encoder, Transformations};
use thiserror::Error;

use crate::geom::Raster;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: png decode: {source}")]
    Decode {
        path: String,
        #[source]
        source: png::DecodingError,
    },
    #[error("{path}: png encode: {source}")]
    Encode {
        path: String,
        #[source]
        source: png::EncodingError,
    },
    #[error("{path}: unsupported png layout {color:?}/{depth:?}")]
    Unsupported {
        path: String,
        color: ColorType,
        depth: BitDepth,
    },
    #[error("{0}")]
    Shape(String),
}

fn open(path: &Path) -> Result<File, ImageError> {
    File::open(path).map_err(|source| ImageError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn create(path: &Path) -> Result<BufWriter<File>, ImageError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|source| ImageError::Io {
            path: path.display().to_string(),
            source,
        })
}

/// Width and height from the PNG header, without decoding pixels.
pub fn png_dimensions(path: &Path) -> Result<(u32, u32), ImageError> {
    let decoder = Decoder::new(BufReader::new(open(path)?));
    let reader = decoder.read_info().map_err(|source| ImageError::Decode {
        path: path.display().to_string(),
        source,
    })?;
    let info = reader.info();
    Ok((info.width, info.height))
}

struct Decoded {
    width: usize,
    height: usize,
    color: ColorType,
    depth: BitDepth,
    bytes: Vec<u8>,
}

fn decode(path: &Path, transformations: Transformations) -> Result<Decoded, ImageError> {
    let mut decoder = Decoder::new(BufReader::new(open(path)?));
    decoder.set_transformations(transformations);
    let err = |source| ImageError::Decode {
        path: path.display().to_string(),
        source,
    };
    let mut reader = decoder.read_info().map_err(err)?;
    let mut bytes = vec![0; reader.output_buffer_size().unwrap_or(0)];
    let frame = reader.next_frame(&mut bytes).map_err(err)?;
    bytes.truncate(frame.buffer_size());
    Ok(Decoded {
        width: frame.width as usize,
        height: frame.height as usize,
        color: frame.color_type,
        depth: frame.bit_depth,
        bytes,
    })
}

/// Reads an 8-bit PNG as an RGB raster with samples in `[0, 1]`.
/// Gray and alpha layouts are expanded / dropped.
pub fn read_rgb(path: &Path) -> Result<Raster, ImageError> {
    let d = decode(path, Transformations::EXPAND | Transformations::STRIP_16)?;
    let channels_in = match d.color {
        ColorType::Grayscale => 1,
        ColorType::GrayscaleAlpha => 2,
        ColorType::Rgb => 3,
        ColorType::Rgba => 4,
        other => {
            return Err(ImageError::Unsupported {
                path: path.display().to_string(),
                color: other,
                depth: d.depth,
            })
        }
    };
    let mut data = Vec::with_capacity(d.width * d.height * 3);
    for px in d.bytes.chunks_exact(channels_in) {
        let rgb = if channels_in < 3 {
            [px[0]; 3]
        } else {
            [px[0], px[1], px[2]]
        };
        data.extend(rgb.iter().map(|&b| b as f64 / 255.0));
    }
    Raster::new(d.width, d.height, 3, data).map_err(|e| ImageError::Shape(e.to_string()))
}

/// Reads a 16-bit single-channel depth PNG (millimetres) as metres.
pub fn read_depth_mm(path: &Path) -> Result<Raster, ImageError> {
    let d = decode(path, Transformations::IDENTITY)?;
    if d.color != ColorType::Grayscale || d.depth != BitDepth::Sixteen {
        return Err(ImageError::Unsupported {
            path: path.display().to_string(),
            color: d.color,
            depth: d.depth,
        });
    }
    let data = d
        .bytes
        .chunks_exact(2)
        .map(|b| u16::from_be_bytes([b[0], b[1]]) as f64 / 1000.0)
        .collect();
    Raster::new(d.width, d.height, 1, data).map_err(|e| ImageError::Shape(e.to_string()))
}

fn write(
    path: &Path,
    width: usize,
    height: usize,
    color: ColorType,
    depth: BitDepth,
    bytes: &[u8],
) -> Result<(), ImageError> {
    let w = create(path)?;
    let mut enc = Encoder::new(w, width as u32, height as u32);
    enc.set_color(color);
    enc.set_depth(depth);
    let err = |source| ImageError::Encode {
        path: path.display().to_string(),
        source,
    };
    let mut writer = enc.write_header().map_err(err)?;
    writer.write_image_data(bytes).map_err(err)?;
    writer.finish().map_err(err)
}

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0 + 0.5).floor() as u8
}

/// Writes a 1- or 3-channel raster with samples in `[0, 1]` as 8-bit PNG.
pub fn write_rgb(path: &Path, raster: &Raster) -> Result<(), ImageError> {
    let (color, bytes): (ColorType, Vec<u8>) = match raster.channels() {
        1 => (ColorType::Grayscale, raster.data().iter().map(|&v| to_u8(v)).collect()),
        3 => (ColorType::Rgb, raster.data().iter().map(|&v| to_u8(v)).collect()),
        c => return Err(ImageError::Shape(format!("cannot write {c}-channel raster"))),
    };
    write(path, raster.width(), raster.height(), color, BitDepth::Eight, &bytes)
}

/// Writes values in `[0, 1]` as an 8-bit grayscale PNG.
pub fn write_gray(path: &Path, width: usize, height: usize, values: &[f64]) -> Result<(), ImageError> {
    if values.len() != width * height {
        return Err(ImageError::Shape(format!(
            "{} values for a {width}x{height} image",
            values.len()
        )));
    }
    let bytes: Vec<u8> = values.iter().map(|&v| to_u8(v)).collect();
    write(path, width, height, ColorType::Grayscale, BitDepth::Eight, &bytes)
}

/// Writes depth in metres as a 16-bit millimetre PNG.
pub fn write_depth_mm(path: &Path, raster: &Raster) -> Result<(), ImageError> {
    if raster.channels() != 1 {
        return Err(ImageError::Shape("depth raster must have one channel".into()));
    }
    let bytes: Vec<u8> = raster
        .data()
        .iter()
        .flat_map(|&m| ((m * 1000.0).round().clamp(0.0, u16::MAX as f64) as u16).to_be_bytes())
        .collect();
    write(
        path,
        raster.width(),
        raster.height(),
        ColorType::Grayscale,
        BitDepth::Sixteen,
        &bytes,
    )
}

/// Writes a boolean mask as a 1-bit PNG.
pub fn write_mask(path: &Path, width: usize, height: usize, mask: &[bool]) -> Result<(), ImageError> {
    if mask.len() != width * height {
        return Err(ImageError::Shape("mask size mismatch".into()));
    }
    let stride = width.div_ceil(8);
    let mut bytes = vec![0u8; stride * height];
    for y in 0..height {
        for x in 0..width {
            if mask[y * width + x] {
                bytes[y * stride + x / 8] |= 0x80 >> (x % 8);
            }
        }
    }
    write(path, width, height, ColorType::Grayscale, BitDepth::One, &bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rgb_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.png");
        let data: Vec<f64> = (0..4 * 3 * 3).map(|i| (i * 7 % 256) as f64 / 255.0).collect();
        let r = Raster::new(4, 3, 3, data).unwrap();
        write_rgb(&p, &r).unwrap();
        assert_eq!(png_dimensions(&p).unwrap(), (4, 3));
        assert_eq!(read_rgb(&p).unwrap(), r);
    }

    #[test]
    fn depth_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.png");
        let r = Raster::new(3, 2, 1, vec![0.0, 0.5, 1.25, 2.0, 3.001, 65.535]).unwrap();
        write_depth_mm(&p, &r).unwrap();
        assert_eq!(read_depth_mm(&p).unwrap(), r);
    }

    #[test]
    fn mask_writes_and_reads_back_as_gray() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.png");
        let mask: Vec<bool> = (0..30).map(|i| i % 3 == 0).collect();
        write_mask(&p, 10, 3, &mask).unwrap();
        let back = read_rgb(&p).unwrap();
        for (i, &m) in mask.iter().enumerate() {
            assert_eq!(back.data()[i * 3] > 0.5, m);
        }
    }
}
