//! PNG serialization: binary masks as 8-bit 0/255, label maps as 16-bit
//! grayscale, images as 8-bit RGB.

use std::io::Cursor;
use std::path::Path;

use image::{ImageBuffer, ImageFormat, Luma, RgbImage};

use crate::error::{invalid, Result};
use crate::grid::{BinaryMask, LabelMap};

fn encode<P, C>(img: &ImageBuffer<P, C>) -> Result<Vec<u8>>
where
    P: image::PixelWithColorType,
    [P::Subpixel]: image::EncodableLayout,
    C: std::ops::Deref<Target = [P::Subpixel]>,
{
    let mut buf = Cursor::new(Vec::new());
    img.write_to(&mut buf, ImageFormat::Png)?;
    Ok(buf.into_inner())
}

pub fn encode_mask_png(mask: &BinaryMask) -> Result<Vec<u8>> {
    let img: ImageBuffer<Luma<u8>, Vec<u8>> = ImageBuffer::from_raw(
        mask.width() as u32,
        mask.height() as u32,
        mask.data().iter().map(|&v| if v { 255 } else { 0 }).collect(),
    )
    .ok_or_else(|| invalid("mask buffer size"))?;
    encode(&img)
}

pub fn decode_mask_png(bytes: &[u8]) -> Result<BinaryMask> {
    let img = image::load_from_memory_with_format(bytes, ImageFormat::Png)?.into_luma8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    BinaryMask::from_vec(w, h, img.into_raw().into_iter().map(|v| v >= 128).collect())
}

pub fn encode_labels_png(labels: &LabelMap) -> Result<Vec<u8>> {
    if labels.max_label() > u16::MAX as u32 {
        return Err(invalid("label ids above 65535 do not fit a 16-bit PNG"));
    }
    let img: ImageBuffer<Luma<u16>, Vec<u16>> = ImageBuffer::from_raw(
        labels.width() as u32,
        labels.height() as u32,
        labels.data().iter().map(|&v| v as u16).collect(),
    )
    .ok_or_else(|| invalid("label buffer size"))?;
    encode(&img)
}

pub fn decode_labels_png(bytes: &[u8]) -> Result<LabelMap> {
    let img = image::load_from_memory_with_format(bytes, ImageFormat::Png)?.into_luma16();
    let (w, h) = (img.width() as usize, img.height() as usize);
    LabelMap::from_vec(w, h, img.into_raw().into_iter().map(u32::from).collect())
}

pub fn encode_rgb_png(image: &RgbImage) -> Result<Vec<u8>> {
    encode(image)
}

pub fn decode_rgb_png(bytes: &[u8]) -> Result<RgbImage> {
    Ok(image::load_from_memory_with_format(bytes, ImageFormat::Png)?.into_rgb8())
}

pub fn write_labels(labels: &LabelMap, path: impl AsRef<Path>) -> Result<()> {
    Ok(std::fs::write(path, encode_labels_png(labels)?)?)
}

pub fn read_labels(path: impl AsRef<Path>) -> Result<LabelMap> {
    decode_labels_png(&std::fs::read(path)?)
}

pub fn write_mask(mask: &BinaryMask, path: impl AsRef<Path>) -> Result<()> {
    Ok(std::fs::write(path, encode_mask_png(mask)?)?)
}

pub fn read_mask(path: impl AsRef<Path>) -> Result<BinaryMask> {
    decode_mask_png(&std::fs::read(path)?)
}

pub fn write_rgb(image: &RgbImage, path: impl AsRef<Path>) -> Result<()> {
    Ok(std::fs::write(path, encode_rgb_png(image)?)?)
}

pub fn read_rgb(path: impl AsRef<Path>) -> Result<RgbImage> {
    decode_rgb_png(&std::fs::read(path)?)
}
