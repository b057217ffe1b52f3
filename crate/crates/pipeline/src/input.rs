use image::RgbImage;
use nuclick_core::signals::GuidingSignal;
use nuclick_core::BinaryMask;
use nuclick_net::Tensor;

use crate::error::Result;

/// Five-channel network input [1, 5, H, W]: RGB scaled to [0, 1], then the
/// inclusion and exclusion maps. With `use_exclusion` off the last channel
/// stays zero.
pub fn network_input(patch: &RgbImage, signal: &GuidingSignal, use_exclusion: bool) -> Result<Tensor<f32>> {
    let (w, h) = (patch.width() as usize, patch.height() as usize);
    signal.inclusion.ensure_same_size(&BinaryMask::new(w, h))?;
    signal.exclusion.ensure_same_size(&signal.inclusion)?;
    let plane = w * h;
    let mut data = vec![0.0f32; 5 * plane];
    for (i, p) in patch.pixels().enumerate() {
        for c in 0..3 {
            data[c * plane + i] = f32::from(p.0[c]) / 255.0;
        }
    }
    for (i, &v) in signal.inclusion.data().iter().enumerate() {
        data[3 * plane + i] = f32::from(u8::from(v));
    }
    if use_exclusion {
        for (i, &v) in signal.exclusion.data().iter().enumerate() {
            data[4 * plane + i] = f32::from(u8::from(v));
        }
    }
    Ok(Tensor::from_vec([1, 5, h, w], data)?)
}

pub(crate) fn mask_tensor(mask: &BinaryMask) -> Tensor<f32> {
    let data = mask.data().iter().map(|&v| f32::from(u8::from(v))).collect();
    Tensor::from_vec([1, 1, mask.height(), mask.width()], data).expect("mask fills its shape")
}
