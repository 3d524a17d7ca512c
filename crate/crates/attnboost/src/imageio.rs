//! PNG encodings for images, instance maps and tri-label debug maps.
//!
//! * images: 8-bit RGB, channel values `v / 255` in the tensor `[3, H, W]`
//! * instance maps: 16-bit grayscale, 0 background and `k` instance `k`
//! * tri-label maps: 8-bit grayscale, 0 background, 128 uncertain, 255 foreground

use std::io::Cursor;

use attnboost_core::grid::InstanceLabelMap;
use attnboost_core::segmentation::{TriLabel, TriLabelMap};
use attnboost_core::{Grid, Tensor};
use png::{BitDepth, ColorType, Transformations};

use crate::error::FormatError;

fn encode(width: usize, height: usize, color: ColorType, depth: BitDepth, data: &[u8]) -> Result<Vec<u8>, FormatError> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, width as u32, height as u32);
        enc.set_color(color);
        enc.set_depth(depth);
        let mut w = enc.write_header()?;
        w.write_image_data(data)?;
        w.finish()?;
    }
    Ok(out)
}

struct Decoded {
    width: usize,
    height: usize,
    color: ColorType,
    depth: BitDepth,
    data: Vec<u8>,
}

fn decode(bytes: &[u8]) -> Result<Decoded, FormatError> {
    let mut dec = png::Decoder::new(Cursor::new(bytes));
    dec.set_transformations(Transformations::IDENTITY);
    let mut reader = dec.read_info()?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| FormatError::Invalid("png too large".into()))?;
    let mut data = vec![0; size];
    let info = reader.next_frame(&mut data)?;
    data.truncate(info.buffer_size());
    Ok(Decoded {
        width: info.width as usize,
        height: info.height as usize,
        color: info.color_type,
        depth: info.bit_depth,
        data,
    })
}

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Quantizes a `[3, H, W]` tensor with values in [0, 1] to RGB8.
pub fn encode_rgb(image: &Tensor) -> Result<Vec<u8>, FormatError> {
    let (c, h, w) = image.chw()?;
    if c != 3 {
        return Err(FormatError::Invalid(format!("expected 3 channels, got {c}")));
    }
    let plane = h * w;
    let d = image.data();
    let mut rgb = Vec::with_capacity(3 * plane);
    for p in 0..plane {
        for ch in 0..3 {
            rgb.push(quantize(d[ch * plane + p]));
        }
    }
    encode(w, h, ColorType::Rgb, BitDepth::Eight, &rgb)
}

/// Decodes RGB8 (or RGBA8, alpha dropped) into a `[3, H, W]` tensor.
pub fn decode_rgb(bytes: &[u8]) -> Result<Tensor, FormatError> {
    let img = decode(bytes)?;
    let stride = match (img.color, img.depth) {
        (ColorType::Rgb, BitDepth::Eight) => 3,
        (ColorType::Rgba, BitDepth::Eight) => 4,
        (c, d) => return Err(FormatError::Invalid(format!("expected 8-bit RGB image, got {c:?} {d:?}"))),
    };
    let plane = img.width * img.height;
    let mut data = vec![0.0; 3 * plane];
    for (p, px) in img.data.chunks_exact(stride).enumerate() {
        for ch in 0..3 {
            data[ch * plane + p] = f64::from(px[ch]) / 255.0;
        }
    }
    Ok(Tensor::from_vec(&[3, img.height, img.width], data)?)
}

/// Round-trips `image` through the RGB8 encoding.
pub fn quantize_rgb(image: &Tensor) -> Tensor {
    let data = image.data().iter().map(|&v| f64::from(quantize(v)) / 255.0).collect();
    Tensor::from_vec(image.shape(), data).expect("same shape")
}

pub fn encode_instances(map: &InstanceLabelMap) -> Result<Vec<u8>, FormatError> {
    let mut raw = Vec::with_capacity(2 * map.len());
    for &id in map.as_slice() {
        let v = u16::try_from(id)
            .map_err(|_| FormatError::Invalid(format!("instance id {id} exceeds 65535")))?;
        raw.extend_from_slice(&v.to_be_bytes());
    }
    encode(map.width(), map.height(), ColorType::Grayscale, BitDepth::Sixteen, &raw)
}

pub fn decode_instances(bytes: &[u8]) -> Result<InstanceLabelMap, FormatError> {
    let img = decode(bytes)?;
    if img.color != ColorType::Grayscale || img.depth != BitDepth::Sixteen {
        return Err(FormatError::Invalid(format!(
            "expected 16-bit grayscale instance map, got {:?} {:?}",
            img.color, img.depth
        )));
    }
    let ids = img
        .data
        .chunks_exact(2)
        .map(|c| u32::from(u16::from_be_bytes([c[0], c[1]])))
        .collect();
    Ok(Grid::from_vec(img.width, img.height, ids)?)
}

pub fn encode_trilabels(map: &TriLabelMap) -> Result<Vec<u8>, FormatError> {
    let raw: Vec<u8> = map
        .as_slice()
        .iter()
        .map(|l| match l {
            TriLabel::Background => 0,
            TriLabel::Uncertain => 128,
            TriLabel::Foreground => 255,
        })
        .collect();
    encode(map.width(), map.height(), ColorType::Grayscale, BitDepth::Eight, &raw)
}

pub fn decode_trilabels(bytes: &[u8]) -> Result<TriLabelMap, FormatError> {
    let img = decode(bytes)?;
    if img.color != ColorType::Grayscale || img.depth != BitDepth::Eight {
        return Err(FormatError::Invalid("expected 8-bit grayscale tri-label map".into()));
    }
    let labels = img
        .data
        .iter()
        .map(|&v| match v {
            0 => Ok(TriLabel::Background),
            128 => Ok(TriLabel::Uncertain),
            255 => Ok(TriLabel::Foreground),
            v => Err(FormatError::Invalid(format!("tri-label value {v} is not 0, 128 or 255"))),
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Grid::from_vec(img.width, img.height, labels)?)
}
