//! Guiding signals (inclusion/exclusion maps) and the patch windows they
//! live in.
//!
//! Nuclei and cells are guided by clicks, glands by squiggles. At training
//! time the signals are synthesized from ground truth with fresh randomness
//! on every draw; at inference they come from user input.

use image::RgbImage;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::grid::{BinaryMask, Grid, LabelMap, Point};
use crate::morph;

/// Minimum distance to the object boundary for a training click.
pub const CLICK_MARGIN: f64 = 2.0;
/// Number of extra threshold draws before a gland guide falls back to τ = 0.
pub const TAU_RETRIES: usize = 8;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GuidingSignal {
    pub inclusion: BinaryMask,
    pub exclusion: BinaryMask,
}

impl GuidingSignal {
    pub fn empty(width: usize, height: usize) -> Self {
        Self {
            inclusion: BinaryMask::new(width, height),
            exclusion: BinaryMask::new(width, height),
        }
    }
}

/// Freehand strokes in image coordinates; sub-pixel positions allowed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Squiggle {
    pub polylines: Vec<Vec<[f64; 2]>>,
}

impl Squiggle {
    pub fn single(points: Vec<[f64; 2]>) -> Self {
        Self {
            polylines: vec![points],
        }
    }

    /// One single-point polyline per foreground pixel of `mask`.
    pub fn from_mask(mask: &BinaryMask) -> Self {
        Self {
            polylines: mask.points().into_iter().map(|p| vec![[p.x as f64, p.y as f64]]).collect(),
        }
    }

    fn points(&self) -> impl Iterator<Item = [f64; 2]> + '_ {
        self.polylines.iter().flatten().copied()
    }

    pub fn is_empty(&self) -> bool {
        self.points().next().is_none()
    }

    fn validate(&self, image_size: (usize, usize)) -> Result<()> {
        if self.polylines.is_empty() || self.polylines.iter().any(Vec::is_empty) {
            return Err(invalid("squiggle polylines must each contain at least one point"));
        }
        for [x, y] in self.points() {
            if !x.is_finite() || !y.is_finite() || x < 0.0 || y < 0.0 || x > (image_size.0 - 1) as f64 || y > (image_size.1 - 1) as f64 {
                return Err(invalid(format!("squiggle point ({x}, {y}) outside image")));
            }
        }
        Ok(())
    }
}

/// One user annotation record, as exchanged over the wire:
/// `{"kind":"click","points":[[x,y]]}` or
/// `{"kind":"squiggle","points":[[x,y],...]}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum GuideInput {
    Click { points: Vec<[f64; 2]> },
    Squiggle { points: Vec<[f64; 2]> },
}

impl GuideInput {
    pub fn click(p: Point) -> Self {
        GuideInput::Click {
            points: vec![[p.x as f64, p.y as f64]],
        }
    }

    pub fn points(&self) -> &[[f64; 2]] {
        match self {
            GuideInput::Click { points } | GuideInput::Squiggle { points } => points,
        }
    }

    pub fn validate(&self, image_size: (usize, usize)) -> Result<()> {
        let points = self.points();
        match self {
            GuideInput::Click { .. } if points.len() != 1 => return Err(invalid("a click carries exactly one point")),
            GuideInput::Squiggle { .. } if points.is_empty() => return Err(invalid("empty squiggle")),
            _ => {}
        }
        Squiggle::single(points.to_vec()).validate(image_size)
    }

    /// The single pixel this guide contributes to other objects' exclusion
    /// maps: the click itself, or the middle vertex of a squiggle.
    pub fn anchor(&self) -> Point {
        let pts = self.points();
        let [x, y] = pts[pts.len() / 2];
        Point::new(x.round() as i32, y.round() as i32)
    }
}

/// A patch window: `size` output pixels starting at image position `origin`,
/// each output pixel covering `scale` image pixels per axis.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatchSpec {
    pub origin: (i32, i32),
    pub size: (usize, usize),
    pub scale: (f64, f64),
}

impl PatchSpec {
    pub fn new(origin: (i32, i32), size: (usize, usize)) -> Self {
        Self {
            origin,
            size,
            scale: (1.0, 1.0),
        }
    }

    pub fn is_unit_scale(&self) -> bool {
        self.scale == (1.0, 1.0)
    }

    /// Continuous image coordinate of a patch pixel centre.
    pub fn patch_to_image(&self, px: f64, py: f64) -> (f64, f64) {
        (
            self.origin.0 as f64 + (px + 0.5) * self.scale.0 - 0.5,
            self.origin.1 as f64 + (py + 0.5) * self.scale.1 - 0.5,
        )
    }

    /// Continuous patch coordinate of an image position.
    pub fn image_to_patch(&self, x: f64, y: f64) -> (f64, f64) {
        (
            (x - self.origin.0 as f64 + 0.5) / self.scale.0 - 0.5,
            (y - self.origin.1 as f64 + 0.5) / self.scale.1 - 0.5,
        )
    }

    /// Patch pixel containing an image pixel, if inside the window.
    pub fn image_pixel_to_patch(&self, p: Point) -> Option<Point> {
        let px = ((p.x - self.origin.0) as f64 + 0.5) / self.scale.0;
        let py = ((p.y - self.origin.1) as f64 + 0.5) / self.scale.1;
        let q = Point::new(px.floor() as i32, py.floor() as i32);
        (q.x >= 0 && q.y >= 0 && (q.x as usize) < self.size.0 && (q.y as usize) < self.size.1).then_some(q)
    }

    /// Image pixel at the centre of a patch pixel (may lie outside the image
    /// for padded windows).
    pub fn patch_pixel_to_image(&self, p: Point) -> Point {
        let (x, y) = self.patch_to_image(p.x as f64, p.y as f64);
        Point::new(x.round() as i32, y.round() as i32)
    }

    /// Image-space extent covered by the window: `[x0, x1) × [y0, y1)`.
    pub fn image_extent(&self) -> (f64, f64, f64, f64) {
        (
            self.origin.0 as f64,
            self.origin.1 as f64,
            self.origin.0 as f64 + self.size.0 as f64 * self.scale.0,
            self.origin.1 as f64 + self.size.1 as f64 * self.scale.1,
        )
    }

    /// Crops (and resamples, bilinear) the image into the window, mirroring
    /// at the image border.
    pub fn extract_rgb(&self, image: &RgbImage) -> RgbImage {
        let (w, h) = (image.width() as usize, image.height() as usize);
        let mut out = RgbImage::new(self.size.0 as u32, self.size.1 as u32);
        if self.is_unit_scale() {
            for py in 0..self.size.1 {
                let sy = mirror(self.origin.1 as i64 + py as i64, h);
                for px in 0..self.size.0 {
                    let sx = mirror(self.origin.0 as i64 + px as i64, w);
                    out.put_pixel(px as u32, py as u32, *image.get_pixel(sx as u32, sy as u32));
                }
            }
            return out;
        }
        for py in 0..self.size.1 {
            for px in 0..self.size.0 {
                let (x, y) = self.patch_to_image(px as f64, py as f64);
                let (x0, y0) = (x.floor(), y.floor());
                let (fx, fy) = (x - x0, y - y0);
                let mut acc = [0.0f64; 3];
                for (dy, wy) in [(0i64, 1.0 - fy), (1, fy)] {
                    for (dx, wx) in [(0i64, 1.0 - fx), (1, fx)] {
                        let wgt = wx * wy;
                        if wgt == 0.0 {
                            continue;
                        }
                        let sx = mirror(x0 as i64 + dx, w);
                        let sy = mirror(y0 as i64 + dy, h);
                        let pix = image.get_pixel(sx as u32, sy as u32).0;
                        for c in 0..3 {
                            acc[c] += wgt * pix[c] as f64;
                        }
                    }
                }
                let rgb = acc.map(|v| v.round().clamp(0.0, 255.0) as u8);
                out.put_pixel(px as u32, py as u32, image::Rgb(rgb));
            }
        }
        out
    }

    /// Crops a mask into the window with zero padding; when downscaling each
    /// output pixel is the max over its source footprint so thin lines
    /// survive.
    pub fn extract_mask(&self, mask: &BinaryMask) -> BinaryMask {
        Grid::from_fn(self.size.0, self.size.1, |px, py| {
            let (x0, x1) = footprint(self.origin.0, px, self.scale.0);
            let (y0, y1) = footprint(self.origin.1, py, self.scale.1);
            (y0..y1).any(|y| (x0..x1).any(|x| mask.at(Point::new(x, y)) == Some(true)))
        })
    }

    /// Crops a label map into the window (unit scale only), zero padded.
    pub fn extract_labels(&self, labels: &LabelMap) -> LabelMap {
        Grid::from_fn(self.size.0, self.size.1, |px, py| {
            let p = self.patch_pixel_to_image(Point::new(px as i32, py as i32));
            labels.at(p).unwrap_or(0)
        })
    }
}

fn footprint(origin: i32, p: usize, scale: f64) -> (i32, i32) {
    let lo = origin as f64 + p as f64 * scale;
    let hi = origin as f64 + (p + 1) as f64 * scale;
    let a = lo.floor() as i32;
    let b = (hi.ceil() as i32).max(a + 1);
    (a, b)
}

/// Reflect an index into `0..n` (edge pixel not repeated).
fn mirror(i: i64, n: usize) -> i64 {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as i64 - 1);
    let m = i.rem_euclid(period);
    if m < n as i64 {
        m
    } else {
        period - m
    }
}

fn place(mask: &mut BinaryMask, p: Point) -> bool {
    if mask.contains(p) {
        mask.set(p.x as usize, p.y as usize, true);
        true
    } else {
        false
    }
}

/// Test-time click guide: inclusion at the target click, exclusion at every
/// other click inside the window.
pub fn click_signal(clicks: &[Point], target: usize, window: &PatchSpec) -> Result<GuidingSignal> {
    let tp = clicks.get(target).ok_or_else(|| Error::NotFound(format!("click index {target}")))?;
    let (w, h) = window.size;
    let mut sig = GuidingSignal::empty(w, h);
    let tq = window
        .image_pixel_to_patch(*tp)
        .ok_or_else(|| invalid("target click outside patch window"))?;
    place(&mut sig.inclusion, tq);
    for (i, &c) in clicks.iter().enumerate() {
        if i == target {
            continue;
        }
        if let Some(q) = window.image_pixel_to_patch(c) {
            if q != tq {
                place(&mut sig.exclusion, q);
            }
        }
    }
    Ok(sig)
}

/// Training guide for nuclei/cells: a random interior click on the target
/// (at least [`CLICK_MARGIN`] from its boundary when possible) and the
/// centroids of all other instances as exclusion.
pub fn train_signal_nucleus<R: Rng + ?Sized>(gt: &LabelMap, target: u32, rng: &mut R) -> Result<GuidingSignal> {
    let target_mask = gt.instance(target);
    if !target_mask.any() {
        return Err(Error::NotFound(format!("instance {target} not present")));
    }
    let click = morph::sample_interior_point(&target_mask, CLICK_MARGIN, rng)?;
    let mut sig = GuidingSignal::empty(gt.width(), gt.height());
    place(&mut sig.inclusion, click);
    add_centroid_exclusion(gt, target, &mut sig.exclusion)?;
    Ok(sig)
}

fn add_centroid_exclusion(gt: &LabelMap, target: u32, exclusion: &mut BinaryMask) -> Result<()> {
    for id in gt.labels() {
        if id != target {
            place(exclusion, morph::centroid(gt, id)?);
        }
    }
    Ok(())
}

/// Mean and standard deviation of the distance map over foreground pixels.
pub fn distance_stats(mask: &BinaryMask) -> Result<(f64, f64)> {
    let d = morph::edt(mask)?;
    let vals: Vec<f64> = d.data().iter().zip(mask.data()).filter(|(_, &m)| m).map(|(&v, _)| v).collect();
    if vals.is_empty() {
        return Err(invalid("mask has no foreground pixels"));
    }
    let n = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / n;
    let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    Ok((mean, var.sqrt()))
}

/// Skeleton of `{D > tau}`, restricted to its largest component.
pub fn gland_inclusion_at(mask: &BinaryMask, tau: f64) -> Result<BinaryMask> {
    let d = morph::edt(mask)?;
    let shrunk = d.map(|&v| v > tau);
    let labels = morph::connected_components(&shrunk);
    let areas = labels.areas();
    let Some(largest) = (1..areas.len()).max_by(|&a, &b| areas[a].cmp(&areas[b]).then(b.cmp(&a))) else {
        return Ok(shrunk);
    };
    Ok(morph::skeletonize(&labels.instance(largest as u32)))
}

/// Randomized gland inclusion guide; returns the map and the threshold used.
pub fn gland_inclusion<R: Rng + ?Sized>(mask: &BinaryMask, rng: &mut R) -> Result<(BinaryMask, f64)> {
    let (mean, std) = distance_stats(mask)?;
    let d = morph::edt(mask)?;
    let dmax = d.data().iter().copied().fold(0.0, f64::max);
    let hi = mean + std;
    let mut tau = 0.0;
    for _ in 0..=TAU_RETRIES {
        let t = rng.random_range(0.0..=hi);
        if t < dmax {
            tau = t;
            break;
        }
    }
    Ok((gland_inclusion_at(mask, tau)?, tau))
}

/// Training guide for glands: skeleton of a randomly thresholded distance
/// map of the target, and one centroid pixel per other gland as exclusion.
pub fn train_signal_gland<R: Rng + ?Sized>(gt: &LabelMap, target: u32, rng: &mut R) -> Result<GuidingSignal> {
    let target_mask = gt.instance(target);
    if !target_mask.any() {
        return Err(Error::NotFound(format!("instance {target} not present")));
    }
    let (inclusion, _) = gland_inclusion(&target_mask, rng)?;
    let mut exclusion = BinaryMask::new(gt.width(), gt.height());
    add_centroid_exclusion(gt, target, &mut exclusion)?;
    Ok(GuidingSignal { inclusion, exclusion })
}

/// Draws each polyline as 8-connected one-pixel segments in patch space.
pub fn rasterize_squiggle(squiggle: &Squiggle, window: &PatchSpec) -> Result<BinaryMask> {
    if squiggle.is_empty() {
        return Err(invalid("empty squiggle"));
    }
    let (w, h) = window.size;
    let mut out = BinaryMask::new(w, h);
    let mut any_inside = false;
    for line in &squiggle.polylines {
        let pts: Vec<Point> = line
            .iter()
            .map(|&[x, y]| {
                let (px, py) = window.image_to_patch(x, y);
                Point::new(px.round() as i32, py.round() as i32)
            })
            .collect();
        if pts.len() == 1 {
            any_inside |= place(&mut out, pts[0]);
        }
        for seg in pts.windows(2) {
            for p in line_pixels(seg[0], seg[1]) {
                any_inside |= place(&mut out, p);
            }
        }
    }
    if !any_inside {
        return Err(invalid("squiggle lies entirely outside the patch window"));
    }
    Ok(out)
}

/// Bresenham line, inclusive of both ends.
pub fn line_pixels(a: Point, b: Point) -> Vec<Point> {
    let (dx, dy) = ((b.x - a.x).abs(), -(b.y - a.y).abs());
    let (sx, sy) = ((b.x - a.x).signum(), (b.y - a.y).signum());
    let mut err = dx + dy;
    let mut p = a;
    let mut out = Vec::with_capacity(dx.max(-dy) as usize + 1);
    loop {
        out.push(p);
        if p == b {
            return out;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            p.x += sx;
        }
        if e2 <= dx {
            err += dx;
            p.y += sy;
        }
    }
}

fn click_axis(len: usize, c: i32, size: usize) -> i32 {
    if len >= size {
        (c - (size / 2) as i32).clamp(0, (len - size) as i32)
    } else {
        -(((size - len) / 2) as i32)
    }
}

/// Square window of side `size` centred on the click, clamped to the image;
/// images smaller than the window are centred and mirror padded.
pub fn patch_for_click(image_size: (usize, usize), click: Point, size: usize) -> PatchSpec {
    PatchSpec::new(
        (click_axis(image_size.0, click.x, size), click_axis(image_size.1, click.y, size)),
        (size, size),
    )
}

/// Window around the squiggle's bounding box: axes shorter than `target` are
/// relaxed to `target`, longer axes are downscaled to it.
pub fn patch_for_squiggle(image_size: (usize, usize), squiggle: &Squiggle, target: usize) -> Result<PatchSpec> {
    squiggle.validate(image_size)?;
    let (mut x0, mut y0, mut x1, mut y1) = (i32::MAX, i32::MAX, i32::MIN, i32::MIN);
    for [x, y] in squiggle.points() {
        x0 = x0.min(x.round() as i32);
        x1 = x1.max(x.round() as i32);
        y0 = y0.min(y.round() as i32);
        y1 = y1.max(y.round() as i32);
    }
    let axis = |lo: i32, hi: i32, len: usize| -> (i32, f64) {
        let extent = (hi - lo + 1) as usize;
        if extent > target {
            return (lo, extent as f64 / target as f64);
        }
        if len < target {
            return (-(((target - len) / 2) as i32), 1.0);
        }
        let start = lo - ((target - extent) / 2) as i32;
        (start.clamp(0, (len - target) as i32), 1.0)
    };
    let (ox, sx) = axis(x0, x1, image_size.0);
    let (oy, sy) = axis(y0, y1, image_size.1);
    Ok(PatchSpec {
        origin: (ox, oy),
        size: (target, target),
        scale: (sx, sy),
    })
}

/// Random integer offset of Euclidean norm at most `radius`, uniform over the
/// lattice points of that disk, clamped to the image.
pub fn jitter_click<R: Rng + ?Sized>(click: Point, radius: f64, image_size: (usize, usize), rng: &mut R) -> Point {
    let r = radius.max(0.0).floor() as i32;
    let r2 = radius * radius;
    let offsets: Vec<(i32, i32)> = (-r..=r)
        .flat_map(|dy| (-r..=r).map(move |dx| (dx, dy)))
        .filter(|&(dx, dy)| ((dx * dx + dy * dy) as f64) <= r2)
        .collect();
    let (dx, dy) = offsets[rng.random_range(0..offsets.len())];
    Point::new(
        (click.x + dx).clamp(0, image_size.0 as i32 - 1),
        (click.y + dy).clamp(0, image_size.1 as i32 - 1),
    )
}
