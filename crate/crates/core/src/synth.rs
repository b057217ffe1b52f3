//! Seeded synthetic microscopy images with exact instance ground truth.
//!
//! Three object families stand in for real datasets: nuclei (dark shaded
//! ellipses on a pink textured background), cells (a nucleus inside a
//! lighter cytoplasm, feather-blended onto a canvas of red blood cells) and
//! glands (large blobs with an epithelial rim around a pale lumen). Labels are
//! rasterized from the generating geometry, never from pixel colours.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::grid::{BinaryMask, Grid, LabelMap, Point};
use crate::io;
use crate::morph::{self, N8};

const PLACEMENT_ATTEMPTS: usize = 60;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObjectKind {
    Nucleus,
    Cell,
    Gland,
}

impl std::str::FromStr for ObjectKind {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nucleus" | "nuclei" => Ok(ObjectKind::Nucleus),
            "cell" | "cells" => Ok(ObjectKind::Cell),
            "gland" | "glands" => Ok(ObjectKind::Gland),
            _ => Err(invalid(format!("unknown object kind {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub width: usize,
    pub height: usize,
    pub kind: ObjectKind,
    /// Inclusive range of objects per image.
    pub count: (usize, usize),
    /// Object radius range in pixels (semi-axes for nuclei).
    pub size: (f64, f64),
    /// Probability that a new object is placed touching an existing one.
    pub touching_prob: f64,
    /// Standard deviation of per-pixel texture noise, intensity in [0, 1].
    pub noise: f64,
    pub seed: u64,
    /// Glands: carve a lumen inside every gland.
    pub lumen: bool,
    /// Glands: probability that the lumen belongs to the gland label
    /// instead of being a hole.
    pub lumen_fill_prob: f64,
    /// Cells: alpha feathering width in pixels (0 = hard paste).
    pub feather: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self::nuclei(96, 96, 0)
    }
}

impl SynthConfig {
    pub fn nuclei(width: usize, height: usize, seed: u64) -> Self {
        Self {
            width,
            height,
            kind: ObjectKind::Nucleus,
            count: (6, 10),
            size: (5.0, 9.0),
            touching_prob: 0.3,
            noise: 0.03,
            seed,
            lumen: false,
            lumen_fill_prob: 0.0,
            feather: 0.0,
        }
    }

    pub fn cells(width: usize, height: usize, seed: u64) -> Self {
        Self {
            kind: ObjectKind::Cell,
            count: (3, 6),
            size: (10.0, 16.0),
            feather: 3.0,
            ..Self::nuclei(width, height, seed)
        }
    }

    pub fn glands(width: usize, height: usize, seed: u64) -> Self {
        Self {
            kind: ObjectKind::Gland,
            count: (1, 2),
            size: (12.0, 20.0),
            touching_prob: 0.0,
            lumen: true,
            ..Self::nuclei(width, height, seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(invalid("canvas must be nonempty"));
        }
        if self.count.0 > self.count.1 || self.count.1 == 0 {
            return Err(invalid("object count range is empty"));
        }
        if !(self.size.0 > 0.0 && self.size.0 <= self.size.1) {
            return Err(invalid("object size range is empty"));
        }
        for (name, p) in [("touching_prob", self.touching_prob), ("lumen_fill_prob", self.lumen_fill_prob)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(invalid(format!("{name} must be in [0, 1]")));
            }
        }
        if self.noise < 0.0 || self.feather < 0.0 {
            return Err(invalid("noise and feather must be nonnegative"));
        }
        Ok(())
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }
}

/// Generates one image for the configured kind.
pub fn generate(config: &SynthConfig) -> Result<(RgbImage, LabelMap)> {
    match config.kind {
        ObjectKind::Nucleus => gen_nuclei(config),
        ObjectKind::Cell => gen_cells(config),
        ObjectKind::Gland => gen_glands(config),
    }
}

/// Closed shape around a centre; `radius(θ)` in pixels, optionally elliptic.
#[derive(Clone, Debug)]
struct Shape {
    cx: f64,
    cy: f64,
    /// Semi-axes and rotation of the base ellipse.
    a: f64,
    b: f64,
    rot: f64,
    /// Radial harmonics (order, amplitude, phase).
    harmonics: Vec<(f64, f64, f64)>,
    /// Clamp on the deformed radius, relative to the base ellipse radius.
    clamp: Option<(f64, f64)>,
}

impl Shape {
    fn moved(&self, cx: f64, cy: f64) -> Self {
        Self { cx, cy, ..self.clone() }
    }

    fn radius_at(&self, theta: f64) -> f64 {
        let t = theta - self.rot;
        let base = self.a * self.b / ((self.b * t.cos()).powi(2) + (self.a * t.sin()).powi(2)).sqrt();
        let h: f64 = self.harmonics.iter().map(|&(k, amp, ph)| amp * (k * theta + ph).cos()).sum();
        let r = base * (1.0 + h);
        match self.clamp {
            Some((lo, hi)) => r.clamp(lo, hi),
            None => r,
        }
    }

    /// Normalized radial coordinate of a point (0 at centre, 1 on the edge).
    fn rho(&self, x: f64, y: f64) -> f64 {
        let (dx, dy) = (x - self.cx, y - self.cy);
        let d = (dx * dx + dy * dy).sqrt();
        if d == 0.0 {
            return 0.0;
        }
        d / self.radius_at(dy.atan2(dx))
    }

    fn extent(&self) -> f64 {
        let base = self.a.max(self.b);
        let amp: f64 = self.harmonics.iter().map(|h| h.1.abs()).sum();
        match self.clamp {
            Some((_, hi)) => hi,
            None => base * (1.0 + amp),
        }
    }

    fn pixels(&self, w: usize, h: usize) -> Option<Vec<Point>> {
        let e = self.extent().ceil() as i32 + 1;
        let (cx, cy) = (self.cx.round() as i32, self.cy.round() as i32);
        let mut out = Vec::new();
        for y in cy - e..=cy + e {
            for x in cx - e..=cx + e {
                if self.rho(x as f64, y as f64) <= 1.0 {
                    // keep a one-pixel margin from the canvas edge
                    if x < 1 || y < 1 || x >= w as i32 - 1 || y >= h as i32 - 1 {
                        return None;
                    }
                    out.push(Point::new(x, y));
                }
            }
        }
        (!out.is_empty()).then_some(out)
    }
}

/// Places shapes without overlap; touching placements slide a copy of the
/// shape outward from an existing object until it no longer overlaps but is
/// still 8-adjacent.
struct Placer {
    labels: LabelMap,
    shapes: Vec<Shape>,
}

impl Placer {
    fn new(w: usize, h: usize) -> Self {
        Self {
            labels: LabelMap::new(w, h),
            shapes: Vec::new(),
        }
    }

    fn overlaps(&self, px: &[Point]) -> bool {
        px.iter().any(|&p| self.labels.at(p).unwrap_or(1) != 0)
    }

    fn adjacent_to(&self, px: &[Point], id: Option<u32>) -> bool {
        px.iter().any(|&p| {
            N8.iter().any(|&(dx, dy)| match self.labels.at(Point::new(p.x + dx, p.y + dy)) {
                Some(0) | None => false,
                Some(l) => id.is_none_or(|id| l == id),
            })
        })
    }

    fn try_place(&mut self, shape: &Shape, touching: bool, rng: &mut ChaCha8Rng) -> bool {
        let (w, h) = self.labels.size();
        let candidate = if touching && !self.shapes.is_empty() {
            let j = rng.random_range(0..self.shapes.len());
            let theta = rng.random_range(0.0..2.0 * PI);
            let anchor = &self.shapes[j];
            let mut t = 0.0;
            let mut found = None;
            while t < 4.0 * (anchor.extent() + shape.extent()) {
                let s = shape.moved(anchor.cx + t * theta.cos(), anchor.cy + t * theta.sin());
                match s.pixels(w, h) {
                    None => break,
                    Some(px) if !self.overlaps(&px) => {
                        if self.adjacent_to(&px, Some(j as u32 + 1)) {
                            found = Some((s, px));
                        }
                        break;
                    }
                    _ => {}
                }
                t += 0.5;
            }
            found
        } else {
            let e = shape.extent() + 1.0;
            if 2.0 * e >= w as f64 || 2.0 * e >= h as f64 {
                return false;
            }
            let s = shape.moved(rng.random_range(e..w as f64 - e), rng.random_range(e..h as f64 - e));
            s.pixels(w, h)
                .filter(|px| !self.overlaps(px) && !self.adjacent_to(px, None))
                .map(|px| (s, px))
        };
        let Some((s, px)) = candidate else {
            return false;
        };
        let id = self.shapes.len() as u32 + 1;
        for p in px {
            self.labels.set(p.x as usize, p.y as usize, id);
        }
        self.shapes.push(s);
        true
    }
}

fn place_all(config: &SynthConfig, rng: &mut ChaCha8Rng, mut make: impl FnMut(&mut ChaCha8Rng) -> Shape) -> Placer {
    let mut placer = Placer::new(config.width, config.height);
    let n = rng.random_range(config.count.0..=config.count.1);
    for _ in 0..n {
        for _ in 0..PLACEMENT_ATTEMPTS {
            let shape = make(rng);
            let touching = rng.random_bool(config.touching_prob);
            if placer.try_place(&shape, touching, rng) {
                break;
            }
        }
    }
    placer
}

/// Float RGB canvas in [0, 1].
struct Canvas {
    w: usize,
    h: usize,
    px: Vec<[f64; 3]>,
}

impl Canvas {
    fn new(w: usize, h: usize, color: [f64; 3]) -> Self {
        Self {
            w,
            h,
            px: vec![color; w * h],
        }
    }

    fn blend(&mut self, x: usize, y: usize, color: [f64; 3], alpha: f64) {
        let p = &mut self.px[y * self.w + x];
        for c in 0..3 {
            p[c] = alpha * color[c] + (1.0 - alpha) * p[c];
        }
    }

    /// Low-frequency gratings plus per-pixel Gaussian noise.
    fn texture(&mut self, rng: &mut ChaCha8Rng, amplitude: f64, noise: f64) {
        let waves: Vec<(f64, f64, f64, f64)> = (0..3)
            .map(|_| {
                let th = rng.random_range(0.0..PI);
                let f = rng.random_range(0.03..0.12);
                (th.cos() * f, th.sin() * f, rng.random_range(0.0..2.0 * PI), rng.random_range(0.3..1.0))
            })
            .collect();
        let normal = Normal::new(0.0, noise.max(1e-12)).expect("valid std");
        for y in 0..self.h {
            for x in 0..self.w {
                let mut t = 0.0;
                for &(fx, fy, ph, a) in &waves {
                    t += a * (2.0 * PI * (fx * x as f64 + fy * y as f64) + ph).sin();
                }
                let n = if noise > 0.0 { normal.sample(rng) } else { 0.0 };
                let p = &mut self.px[y * self.w + x];
                for v in p.iter_mut() {
                    *v += amplitude * t / 3.0 + n;
                }
            }
        }
    }

    fn into_image(self) -> RgbImage {
        let mut img = RgbImage::new(self.w as u32, self.h as u32);
        for (i, p) in self.px.iter().enumerate() {
            let rgb = p.map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8);
            img.put_pixel((i % self.w) as u32, (i / self.w) as u32, Rgb(rgb));
        }
        img
    }
}

fn jitter(rng: &mut ChaCha8Rng, base: [f64; 3], amount: f64) -> [f64; 3] {
    let shift = rng.random_range(-amount..=amount);
    base.map(|c| (c + shift + rng.random_range(-amount..=amount) * 0.3).clamp(0.0, 1.0))
}

fn rgb(r: u8, g: u8, b: u8) -> [f64; 3] {
    [r as f64 / 255.0, g as f64 / 255.0, b as f64 / 255.0]
}

fn random_ellipse(rng: &mut ChaCha8Rng, size: (f64, f64)) -> Shape {
    let a = rng.random_range(size.0..=size.1);
    let b = rng.random_range(size.0..=size.1).min(a * 1.0).max(a * 0.6).max(size.0);
    Shape {
        cx: 0.0,
        cy: 0.0,
        a,
        b,
        rot: rng.random_range(0.0..PI),
        harmonics: vec![(3.0, rng.random_range(0.0..0.06), rng.random_range(0.0..2.0 * PI))],
        clamp: None,
    }
}

/// Dark, radially shaded ellipses with chromatin speckle on pink stroma.
pub fn gen_nuclei(config: &SynthConfig) -> Result<(RgbImage, LabelMap)> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let placer = place_all(config, &mut rng, |r| random_ellipse(r, config.size));

    let bg = jitter(&mut rng, rgb(232, 196, 214), 0.03);
    let mut canvas = Canvas::new(config.width, config.height, bg);
    canvas.texture(&mut rng, 0.05, config.noise);
    let speckle = Normal::new(0.0, 0.04).expect("valid std");
    for (k, shape) in placer.shapes.iter().enumerate() {
        let id = k as u32 + 1;
        let color = jitter(&mut rng, rgb(88, 48, 132), 0.06);
        for (i, &l) in placer.labels.data().iter().enumerate() {
            if l != id {
                continue;
            }
            let p = placer.labels.point_of(i);
            let rho = shape.rho(p.x as f64, p.y as f64).min(1.0);
            // lighter towards the rim so touching nuclei stay separable
            let shade = 0.8 + 0.45 * rho * rho;
            let s = speckle.sample(&mut rng);
            let c = color.map(|v| (v * shade + s).clamp(0.0, 1.0));
            canvas.blend(p.x as usize, p.y as usize, c, 0.95);
        }
    }
    Ok((canvas.into_image(), placer.labels))
}

/// Two-compartment cells pasted with per-object affine/deformation
/// augmentation and alpha feathering onto a canvas of red blood cells.
pub fn gen_cells(config: &SynthConfig) -> Result<(RgbImage, LabelMap)> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let placer = place_all(config, &mut rng, |r| {
        let radius = r.random_range(config.size.0..=config.size.1);
        let (sx, sy) = (r.random_range(0.85..1.15), r.random_range(0.85..1.15));
        Shape {
            cx: 0.0,
            cy: 0.0,
            a: radius * sx,
            b: radius * sy,
            rot: r.random_range(0.0..PI),
            harmonics: vec![
                (2.0, r.random_range(0.0..0.05), r.random_range(0.0..2.0 * PI)),
                (5.0, r.random_range(0.0..0.03), r.random_range(0.0..2.0 * PI)),
            ],
            clamp: None,
        }
    });

    let bg = jitter(&mut rng, rgb(236, 214, 214), 0.02);
    let mut canvas = Canvas::new(config.width, config.height, bg);
    canvas.texture(&mut rng, 0.03, config.noise);
    // red blood cells in the background layer
    let n_rbc = (config.width * config.height) / 500;
    for _ in 0..n_rbc {
        let r = rng.random_range(5.0..8.0);
        let (cx, cy) = (rng.random_range(0.0..config.width as f64), rng.random_range(0.0..config.height as f64));
        let color = jitter(&mut rng, rgb(224, 150, 156), 0.03);
        for y in (cy - r).floor().max(0.0) as usize..((cy + r).ceil() as usize).min(config.height) {
            for x in (cx - r).floor().max(0.0) as usize..((cx + r).ceil() as usize).min(config.width) {
                let d = ((x as f64 - cx).powi(2) + (y as f64 - cy).powi(2)).sqrt() / r;
                if d <= 1.0 {
                    let pale = if d < 0.4 { 0.6 } else { 0.9 };
                    canvas.blend(x, y, color, pale);
                }
            }
        }
    }

    for (k, shape) in placer.shapes.iter().enumerate() {
        let id = k as u32 + 1;
        let footprint = placer.labels.instance(id);
        let depth = morph::edt(&footprint)?;
        let cyto = jitter(&mut rng, rgb(196, 160, 212), 0.04);
        let nuc_color = jitter(&mut rng, rgb(84, 40, 124), 0.05);
        let nr = shape.a.min(shape.b) * rng.random_range(0.35..0.6);
        let off = shape.a.min(shape.b) - nr;
        let (ox, oy) = (rng.random_range(-0.5..0.5) * off, rng.random_range(-0.5..0.5) * off);
        let nucleus = Shape {
            cx: shape.cx + ox,
            cy: shape.cy + oy,
            a: nr * rng.random_range(0.9..1.3),
            b: nr,
            rot: rng.random_range(0.0..PI),
            harmonics: vec![(3.0, rng.random_range(0.0..0.1), rng.random_range(0.0..2.0 * PI))],
            clamp: None,
        };
        for (i, &inside) in footprint.data().iter().enumerate() {
            if !inside {
                continue;
            }
            let p = footprint.point_of(i);
            let color = if nucleus.rho(p.x as f64, p.y as f64) <= 1.0 { nuc_color } else { cyto };
            let alpha = if config.feather > 0.0 {
                (depth.data()[i] / config.feather).min(1.0)
            } else {
                1.0
            };
            canvas.blend(p.x as usize, p.y as usize, color, alpha);
        }
    }
    Ok((canvas.into_image(), placer.labels))
}

/// Blobby glands with a dark epithelial rim, nuclei dotted along it, and a
/// pale lumen that is either a hole in the label or part of it.
pub fn gen_glands(config: &SynthConfig) -> Result<(RgbImage, LabelMap)> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let (lo, hi) = config.size;
    let placer = place_all(config, &mut rng, |r| {
        let radius = r.random_range(lo..=hi);
        Shape {
            cx: 0.0,
            cy: 0.0,
            a: radius,
            b: radius * r.random_range(0.75..1.0),
            rot: r.random_range(0.0..PI),
            harmonics: vec![
                (2.0, r.random_range(0.0..0.08), r.random_range(0.0..2.0 * PI)),
                (3.0, r.random_range(0.0..0.08), r.random_range(0.0..2.0 * PI)),
            ],
            clamp: Some((lo, hi)),
        }
    });

    let stroma = jitter(&mut rng, rgb(238, 176, 204), 0.03);
    let mut canvas = Canvas::new(config.width, config.height, stroma);
    canvas.texture(&mut rng, 0.06, config.noise);
    let mut labels = placer.labels.clone();

    for (k, shape) in placer.shapes.iter().enumerate() {
        let id = k as u32 + 1;
        let rim = jitter(&mut rng, rgb(176, 100, 172), 0.04);
        let lumen_color = jitter(&mut rng, rgb(246, 238, 244), 0.01);
        let nuc_color = rgb(80, 34, 116);
        let ratio = rng.random_range(0.35..0.55);
        let fill = rng.random_bool(config.lumen_fill_prob);
        let phase = rng.random_range(0.0..2.0 * PI);
        let n_dots = (2.0 * PI * shape.extent() / 5.0).round().max(6.0);
        for (i, &l) in placer.labels.data().iter().enumerate() {
            if l != id {
                continue;
            }
            let p = placer.labels.point_of(i);
            let (x, y) = (p.x as f64, p.y as f64);
            let rho = shape.rho(x, y);
            let in_lumen = config.lumen && rho <= ratio;
            let color = if in_lumen {
                lumen_color
            } else {
                // nuclei sit in the middle of the rim, spaced around it
                let angle = (y - shape.cy).atan2(x - shape.cx) + phase;
                let mid = (ratio + 1.0) / 2.0;
                let dot = ((angle * n_dots / (2.0 * PI)).fract() - 0.5).abs() < 0.18 && (rho - mid).abs() < 0.12;
                if dot { nuc_color } else { rim }
            };
            canvas.blend(p.x as usize, p.y as usize, color, 0.95);
            if in_lumen && !fill {
                labels.set(p.x as usize, p.y as usize, 0);
            }
        }
    }
    Ok((canvas.into_image(), labels))
}

/// Settings for training-time augmentation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    pub flips: bool,
    /// Maximum additive brightness shift (intensity units).
    pub brightness: f64,
    /// Maximum relative contrast change around the image mean.
    pub contrast: f64,
    /// Standard deviation of additive Gaussian noise.
    pub noise: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            flips: true,
            brightness: 0.08,
            contrast: 0.15,
            noise: 0.02,
        }
    }
}

impl AugmentConfig {
    pub fn none() -> Self {
        Self {
            flips: false,
            brightness: 0.0,
            contrast: 0.0,
            noise: 0.0,
        }
    }
}

/// Joint random flips of image and labels, then photometric changes to the
/// image only.
pub fn augment<T: Copy, R: Rng + ?Sized>(
    image: &RgbImage,
    labels: &Grid<T>,
    rng: &mut R,
    config: &AugmentConfig,
) -> (RgbImage, Grid<T>) {
    let mut img = image.clone();
    let mut lab = labels.clone();
    if config.flips {
        if rng.random_bool(0.5) {
            img = image::imageops::flip_horizontal(&img);
            lab = lab.flip_horizontal();
        }
        if rng.random_bool(0.5) {
            img = image::imageops::flip_vertical(&img);
            lab = lab.flip_vertical();
        }
    }
    if config.brightness == 0.0 && config.contrast == 0.0 && config.noise == 0.0 {
        return (img, lab);
    }
    let shift = if config.brightness > 0.0 {
        rng.random_range(-config.brightness..=config.brightness)
    } else {
        0.0
    };
    let gain = if config.contrast > 0.0 {
        rng.random_range(1.0 - config.contrast..=1.0 + config.contrast)
    } else {
        1.0
    };
    let n = img.pixels().len().max(1) as f64;
    let mean = img.pixels().flat_map(|p| p.0).map(|v| v as f64 / 255.0).sum::<f64>() / (3.0 * n);
    let normal = (config.noise > 0.0).then(|| Normal::new(0.0, config.noise).expect("valid std"));
    for p in img.pixels_mut() {
        for v in p.0.iter_mut() {
            let mut f = *v as f64 / 255.0;
            f = (f - mean) * gain + mean + shift;
            if let Some(nd) = &normal {
                f += nd.sample(rng);
            }
            *v = (f.clamp(0.0, 1.0) * 255.0).round() as u8;
        }
    }
    (img, lab)
}

/// On-disk dataset: `images/NNNN.png`, `labels/NNNN.png` (16-bit) and a
/// `manifest.json` echoing the config and per-image seeds.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub config: SynthConfig,
    pub seeds: Vec<u64>,
}

pub fn image_path(dir: &Path, i: usize) -> PathBuf {
    dir.join("images").join(format!("{i:04}.png"))
}

pub fn label_path(dir: &Path, i: usize) -> PathBuf {
    dir.join("labels").join(format!("{i:04}.png"))
}

/// Writes `n` images generated from per-image seeds drawn from the config
/// seed.
pub fn write_dataset(config: &SynthConfig, n: usize, dir: &Path) -> Result<Manifest> {
    config.validate()?;
    std::fs::create_dir_all(dir.join("images"))?;
    std::fs::create_dir_all(dir.join("labels"))?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let seeds: Vec<u64> = (0..n).map(|_| rng.random()).collect();
    for (i, &s) in seeds.iter().enumerate() {
        let (img, labels) = generate(&config.with_seed(s))?;
        io::write_rgb(&img, image_path(dir, i))?;
        io::write_labels(&labels, label_path(dir, i))?;
    }
    let manifest = Manifest {
        config: config.clone(),
        seeds,
    };
    std::fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    Ok(serde_json::from_slice(&std::fs::read(dir.join("manifest.json"))?)?)
}

/// Loads every image/label pair listed by the manifest.
pub fn read_dataset(dir: &Path) -> Result<Vec<(RgbImage, LabelMap)>> {
    let manifest = read_manifest(dir)?;
    (0..manifest.seeds.len())
        .map(|i| Ok((io::read_rgb(image_path(dir, i))?, io::read_labels(label_path(dir, i))?)))
        .collect()
}

/// Background enclosed by the mask, i.e. the lumen of a hollow gland.
pub fn holes_of(mask: &BinaryMask) -> BinaryMask {
    // background pixels not reachable from the border
    let outside = morph::reconstruct(
        &Grid::from_fn(mask.width(), mask.height(), |x, y| {
            x == 0 || y == 0 || x == mask.width() - 1 || y == mask.height() - 1
        }),
        &mask.map(|&v| !v),
    )
    .expect("same size");
    Grid::from_fn(mask.width(), mask.height(), |x, y| !mask.get(x, y) && !outside.get(x, y))
}
