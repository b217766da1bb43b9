//! 8-bit RGB images, single-channel label maps, and their PNG encoding.
//!
//! All rasters are row-major with the origin at the top-left; positions are
//! `(row, col)`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Cursor, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub type Rgb = [u8; 3];

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ImageBuffer {
    width: u32,
    height: u32,
    pixels: Vec<Rgb>,
}

impl ImageBuffer {
    pub fn new(width: u32, height: u32, pixels: Vec<Rgb>) -> Result<Self> {
        if pixels.len() != width as usize * height as usize {
            return Err(Error::InvalidBuffer(format!(
                "{width}x{height} image needs {} pixels, got {}",
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

    pub fn filled(width: u32, height: u32, value: Rgb) -> Self {
        Self {
            width,
            height,
            pixels: vec![value; width as usize * height as usize],
        }
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> Rgb) -> Self {
        let mut pixels = Vec::with_capacity(width as usize * height as usize);
        for row in 0..height {
            for col in 0..width {
                pixels.push(f(row, col));
            }
        }
        Self {
            width,
            height,
            pixels,
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn dims(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn pixels(&self) -> &[Rgb] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [Rgb] {
        &mut self.pixels
    }

    pub fn get(&self, row: u32, col: u32) -> Rgb {
        self.pixels[row as usize * self.width as usize + col as usize]
    }

    pub fn set(&mut self, row: u32, col: u32, value: Rgb) {
        self.pixels[row as usize * self.width as usize + col as usize] = value;
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct LabelMap {
    width: u32,
    height: u32,
    labels: Vec<u8>,
}

impl LabelMap {
    pub fn new(width: u32, height: u32, labels: Vec<u8>) -> Result<Self> {
        if labels.len() != width as usize * height as usize {
            return Err(Error::InvalidBuffer(format!(
                "{width}x{height} label map needs {} labels, got {}",
                width as usize * height as usize,
                labels.len()
            )));
        }
        Ok(Self {
            width,
            height,
            labels,
        })
    }

    pub fn filled(width: u32, height: u32, class_id: u8) -> Self {
        Self {
            width,
            height,
            labels: vec![class_id; width as usize * height as usize],
        }
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> u8) -> Self {
        let mut labels = Vec::with_capacity(width as usize * height as usize);
        for row in 0..height {
            for col in 0..width {
                labels.push(f(row, col));
            }
        }
        Self {
            width,
            height,
            labels,
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn dims(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn get(&self, row: u32, col: u32) -> u8 {
        self.labels[row as usize * self.width as usize + col as usize]
    }
}

/// Fails with `DimensionMismatch` unless both rasters have the same shape.
pub fn ensure_same_dims(expected: (u32, u32), found: (u32, u32)) -> Result<()> {
    if expected != found {
        return Err(Error::DimensionMismatch { expected, found });
    }
    Ok(())
}

/// Positions labelled `class_id`, in row-major order.
pub fn class_positions(map: &LabelMap, class_id: u8) -> Vec<(u32, u32)> {
    let width = map.width as usize;
    map.labels
        .iter()
        .enumerate()
        .filter(|(_, &label)| label == class_id)
        .map(|(idx, _)| ((idx / width) as u32, (idx % width) as u32))
        .collect()
}

/// Flat pixel indices labelled `class_id`, in row-major order.
pub(crate) fn class_indices(map: &LabelMap, class_id: u8) -> Vec<usize> {
    map.labels
        .iter()
        .enumerate()
        .filter_map(|(idx, &label)| (label == class_id).then_some(idx))
        .collect()
}

pub fn load_image(path: impl AsRef<Path>) -> Result<ImageBuffer> {
    let path = path.as_ref();
    let (width, height, data) = decode_file(path, png::ColorType::Rgb)?;
    let pixels = data.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
    Ok(ImageBuffer {
        width,
        height,
        pixels,
    })
}

pub fn save_image(buffer: &ImageBuffer, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let data: Vec<u8> = buffer.pixels.iter().flatten().copied().collect();
    encode_file(
        path,
        buffer.width,
        buffer.height,
        png::ColorType::Rgb,
        &data,
    )
}

pub fn load_labels(path: impl AsRef<Path>) -> Result<LabelMap> {
    let path = path.as_ref();
    let (width, height, labels) = decode_file(path, png::ColorType::Grayscale)?;
    Ok(LabelMap {
        width,
        height,
        labels,
    })
}

pub fn save_labels(map: &LabelMap, path: impl AsRef<Path>) -> Result<()> {
    encode_file(
        path.as_ref(),
        map.width,
        map.height,
        png::ColorType::Grayscale,
        &map.labels,
    )
}

/// Encodes an image as PNG bytes. Output is deterministic for a given buffer.
pub fn encode_image_png(buffer: &ImageBuffer) -> Result<Vec<u8>> {
    let data: Vec<u8> = buffer.pixels.iter().flatten().copied().collect();
    let mut out = Vec::new();
    encode(
        &mut out,
        buffer.width,
        buffer.height,
        png::ColorType::Rgb,
        &data,
    )
    .map_err(|e| Error::InvalidBuffer(e.to_string()))?;
    Ok(out)
}

fn encode_file(
    path: &Path,
    width: u32,
    height: u32,
    color: png::ColorType,
    data: &[u8],
) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut writer = BufWriter::new(file);
    encode(&mut writer, width, height, color, data).map_err(|e| match e {
        png::EncodingError::IoError(source) => Error::io(path, source),
        other => Error::io(path, std::io::Error::other(other.to_string())),
    })?;
    writer.flush().map_err(|e| Error::io(path, e))
}

fn encode<W: Write>(
    w: W,
    width: u32,
    height: u32,
    color: png::ColorType,
    data: &[u8],
) -> Result<(), png::EncodingError> {
    let mut encoder = png::Encoder::new(w, width, height);
    encoder.set_color(color);
    encoder.set_depth(png::BitDepth::Eight);
    let mut writer = encoder.write_header()?;
    writer.write_image_data(data)?;
    writer.finish()
}

fn decode_file(path: &Path, want: png::ColorType) -> Result<(u32, u32, Vec<u8>)> {
    let bytes = match std::fs::read(path) {
        Ok(bytes) => bytes,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(Error::MissingFile {
                path: path.to_path_buf(),
            })
        }
        Err(e) => return Err(Error::io(path, e)),
    };
    decode(&bytes, want).map_err(|reason| Error::MalformedRaster {
        path: path.to_path_buf(),
        reason,
    })
}

fn decode(bytes: &[u8], want: png::ColorType) -> std::result::Result<(u32, u32, Vec<u8>), String> {
    let mut decoder = png::Decoder::new(BufReader::new(Cursor::new(bytes)));
    decoder.set_transformations(png::Transformations::IDENTITY);
    let mut reader = decoder.read_info().map_err(|e| e.to_string())?;
    let (color, depth) = reader.output_color_type();
    if depth != png::BitDepth::Eight {
        return Err(format!("expected 8-bit channels, found {depth:?}"));
    }
    if color != want {
        return Err(format!("expected {want:?} color type, found {color:?}"));
    }
    if reader.info().trns.is_some() {
        return Err("transparency (tRNS) is not supported".into());
    }
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| "image too large".to_string())?;
    let mut buf = vec![0; size];
    let info = reader.next_frame(&mut buf).map_err(|e| e.to_string())?;
    let channels = if want == png::ColorType::Rgb { 3 } else { 1 };
    let row_bytes = info.width as usize * channels;
    let mut data = Vec::with_capacity(row_bytes * info.height as usize);
    for row in buf.chunks(info.line_size).take(info.height as usize) {
        data.extend_from_slice(&row[..row_bytes]);
    }
    Ok((info.width, info.height, data))
}
