//! From per-patch prediction maps to a full-image instance map.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::grid::{BinaryMask, Grid, LabelMap, Point, PredictionMap};
use crate::morph;
use crate::signals::PatchSpec;

pub const THRESHOLD: f32 = 0.5;
/// Components below this many pixels are discarded in patch space.
pub const MIN_OBJECT_AREA: usize = 50;

/// One segmented object in the coordinates of the patch it was predicted in.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectResult {
    pub patch: PatchSpec,
    pub mask: BinaryMask,
    pub object_id: u32,
}

impl ObjectResult {
    /// The mask mapped back onto the image grid (nearest neighbour when the
    /// patch was resampled).
    pub fn to_image(&self, image_size: (usize, usize)) -> BinaryMask {
        let mut out = BinaryMask::new(image_size.0, image_size.1);
        self.paint(&mut out, true);
        out
    }

    fn paint<T: Copy>(&self, target: &mut Grid<T>, value: T) {
        let (w, h) = target.size();
        let (ex0, ey0, ex1, ey1) = self.patch.image_extent();
        let xs = (ex0.floor().max(0.0) as usize)..(ex1.ceil().min(w as f64).max(0.0) as usize);
        let ys = (ey0.floor().max(0.0) as usize)..(ey1.ceil().min(h as f64).max(0.0) as usize);
        for y in ys {
            for x in xs.clone() {
                if let Some(q) = self.patch.image_pixel_to_patch(Point::new(x as i32, y as i32)) {
                    if self.mask.get(q.x as usize, q.y as usize) {
                        target.set(x, y, value);
                    }
                }
            }
        }
    }
}

/// Strict `p > threshold`.
pub fn binarize(p: &PredictionMap, threshold: f32) -> BinaryMask {
    p.map(|&v| v > threshold)
}

/// Removes components smaller than [`MIN_OBJECT_AREA`], then keeps only the
/// components touched by the inclusion guide.
pub fn clean(mask: &BinaryMask, inclusion: &BinaryMask) -> Result<BinaryMask> {
    mask.ensure_same_size(inclusion)?;
    let labels = morph::remove_small(&morph::connected_components(mask), MIN_OBJECT_AREA);
    morph::reconstruct(inclusion, &labels.foreground())
}

/// Paints every result, in order, with its object id; later results win on
/// overlap.
pub fn assemble(results: &[ObjectResult], image_size: (usize, usize)) -> LabelMap {
    let mut out = LabelMap::new(image_size.0, image_size.1);
    for r in results {
        r.paint(&mut out, r.object_id);
    }
    out
}

/// Row-major run-length encoding of one object: alternating run start
/// indices and run lengths.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RleObject {
    pub object_id: u32,
    pub rle: Vec<u64>,
}

pub fn rle_encode(mask: &BinaryMask) -> Vec<u64> {
    let mut out = Vec::new();
    let data = mask.data();
    let mut i = 0;
    while i < data.len() {
        if data[i] {
            let start = i;
            while i < data.len() && data[i] {
                i += 1;
            }
            out.push(start as u64);
            out.push((i - start) as u64);
        } else {
            i += 1;
        }
    }
    out
}

pub fn rle_decode(rle: &[u64], width: usize, height: usize) -> BinaryMask {
    let mut m = BinaryMask::new(width, height);
    for run in rle.chunks_exact(2) {
        let (start, len) = (run[0] as usize, run[1] as usize);
        for v in m.data_mut().iter_mut().skip(start).take(len) {
            *v = true;
        }
    }
    m
}

/// RLE per present label, ascending by id.
pub fn label_map_rle(labels: &LabelMap) -> Vec<RleObject> {
    labels
        .labels()
        .into_iter()
        .map(|id| RleObject {
            object_id: id,
            rle: rle_encode(&labels.instance(id)),
        })
        .collect()
}
