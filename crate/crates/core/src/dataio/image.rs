use std::borrow::Cow;
use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use png::{BitDepth, ColorType, Transformations};

use crate::error::{Error, Result};
use crate::mask::SegmentationMask;
use crate::tensor::Tensor;

/// Palette written for label masks: index 0 black, index 1 red.
pub const VOC_PALETTE: [[u8; 3]; 2] = [[0, 0, 0], [255, 0, 0]];
/// The standard VOC colour for class 1, also accepted on decode.
pub const VOC_MAROON: [u8; 3] = [128, 0, 0];

/// An 8-bit single-channel image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl GrayImage {
    /// `[1, 3, H, W]` tensor with the gray level replicated into every
    /// channel and scaled to `[0, 1]`.
    pub fn to_tensor(&self) -> Tensor {
        let plane: Vec<f64> = self.pixels.iter().map(|&p| p as f64 / 255.0).collect();
        let data = [plane.as_slice(), &plane, &plane].concat();
        Tensor::new(vec![1, 3, self.height, self.width], data).expect("three planes of H*W values")
    }
}

fn png_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::format("png image", format!("{}: {e}", path.display()))
}

struct Decoded {
    width: usize,
    height: usize,
    color: ColorType,
    depth: BitDepth,
    bytes: Vec<u8>,
    palette: Option<Vec<u8>>,
}

fn decode(path: &Path) -> Result<Decoded> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut decoder = png::Decoder::new(file);
    decoder.set_transformations(Transformations::IDENTITY);
    let mut reader = decoder.read_info().map_err(|e| png_err(path, e))?;
    let mut bytes = vec![0; reader.output_buffer_size()];
    let frame = reader.next_frame(&mut bytes).map_err(|e| png_err(path, e))?;
    bytes.truncate(frame.buffer_size());
    let palette = reader.info().palette.as_ref().map(|p: &Cow<[u8]>| p.to_vec());
    Ok(Decoded {
        width: frame.width as usize,
        height: frame.height as usize,
        color: frame.color_type,
        depth: frame.bit_depth,
        bytes,
        palette,
    })
}

/// Loads an 8-bit grayscale or RGB PNG as a `[1, 3, H, W]` tensor in
/// `[0, 1]`. Grayscale is replicated into all three channels.
pub fn load_image_3ch(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let d = decode(path)?;
    if d.depth != BitDepth::Eight {
        return Err(png_err(path, format!("unsupported bit depth {:?}; expected 8-bit", d.depth)));
    }
    let (w, h) = (d.width, d.height);
    match d.color {
        ColorType::Grayscale => Ok(GrayImage { width: w, height: h, pixels: d.bytes }.to_tensor()),
        ColorType::Rgb => {
            let mut data = vec![0.0; 3 * w * h];
            for (i, px) in d.bytes.chunks_exact(3).enumerate() {
                for c in 0..3 {
                    data[c * w * h + i] = px[c] as f64 / 255.0;
                }
            }
            Tensor::new(vec![1, 3, h, w], data)
        }
        other => Err(png_err(path, format!("unsupported colour type {other:?}; expected grayscale or RGB"))),
    }
}

pub fn save_gray_png(image: &GrayImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), image.width as u32, image.height as u32);
    enc.set_color(ColorType::Grayscale);
    enc.set_depth(BitDepth::Eight);
    let mut writer = enc.write_header().map_err(|e| png_err(path, e))?;
    writer.write_image_data(&image.pixels).map_err(|e| png_err(path, e))?;
    writer.finish().map_err(|e| png_err(path, e))
}

/// Writes an 8-bit paletted PNG whose pixel indices are the mask labels.
pub fn encode_voc_mask(mask: &SegmentationMask, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), mask.width() as u32, mask.height() as u32);
    enc.set_color(ColorType::Indexed);
    enc.set_depth(BitDepth::Eight);
    enc.set_palette(VOC_PALETTE.concat());
    let mut writer = enc.write_header().map_err(|e| png_err(path, e))?;
    writer.write_image_data(mask.labels()).map_err(|e| png_err(path, e))?;
    writer.finish().map_err(|e| png_err(path, e))
}

/// Reads a paletted PNG mask. Indices must be 0 or 1; palette entry 1 may be
/// red or VOC maroon.
pub fn decode_voc_mask(path: impl AsRef<Path>) -> Result<SegmentationMask> {
    let path = path.as_ref();
    let d = decode(path)?;
    if d.color != ColorType::Indexed {
        return Err(png_err(path, format!("mask must be a paletted image, found {:?}", d.color)));
    }
    let bits = match d.depth {
        BitDepth::One => 1,
        BitDepth::Two => 2,
        BitDepth::Four => 4,
        BitDepth::Eight => 8,
        BitDepth::Sixteen => return Err(png_err(path, "16-bit palette indices")),
    };
    if let Some(palette) = &d.palette {
        if palette.len() >= 6 {
            let one = [palette[3], palette[4], palette[5]];
            if one != VOC_PALETTE[1] && one != VOC_MAROON {
                return Err(png_err(path, format!("palette entry 1 is {one:?}, expected red or maroon")));
            }
        }
    }
    let (w, h) = (d.width, d.height);
    let row_bytes = (w * bits).div_ceil(8);
    let mut labels = Vec::with_capacity(w * h);
    for row in d.bytes.chunks_exact(row_bytes).take(h) {
        for x in 0..w {
            let bit = x * bits;
            let byte = row[bit / 8];
            let shift = 8 - bits - (bit % 8);
            let index = (byte >> shift) & ((1u16 << bits) - 1) as u8;
            if index > 1 {
                return Err(png_err(path, format!("palette index {index} at column {x}; masks use indices 0 and 1 only")));
            }
            labels.push(index);
        }
    }
    SegmentationMask::new(w, h, labels)
}
