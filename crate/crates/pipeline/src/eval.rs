//! Scoring a model on labelled data with guides synthesized from the
//! ground truth.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use image::RgbImage;
use nuclick_core::metrics::{MetricAccumulator, MetricReport};
use nuclick_core::morph::{self, N8};
use nuclick_core::signals::{self, GuideInput, CLICK_MARGIN};
use nuclick_core::synth::{self, ObjectKind};
use nuclick_core::{BinaryMask, LabelMap, Point};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{config_err, PipelineError, Result};
use crate::segment::Segmenter;

/// How evaluation guides are placed.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum GuideMode {
    /// A random interior point, as during training.
    GtInterior,
    /// The snapped centroid of each instance.
    GtCentroid,
    /// The centroid moved uniformly within this radius.
    Jitter(f64),
}

impl FromStr for GuideMode {
    type Err = PipelineError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gt-interior" => Ok(GuideMode::GtInterior),
            "gt-centroid" => Ok(GuideMode::GtCentroid),
            _ => {
                let radius = s
                    .strip_prefix("jitter(")
                    .and_then(|r| r.strip_suffix(')'))
                    .or_else(|| s.strip_prefix("jitter:"))
                    .or_else(|| s.strip_prefix("jitter="))
                    .ok_or_else(|| config_err(format!("unknown guide mode {s:?}")))?;
                let sigma: f64 = radius.parse().map_err(|_| config_err(format!("bad jitter radius {radius:?}")))?;
                if !(sigma >= 0.0 && sigma.is_finite()) {
                    return Err(config_err("jitter radius must be non-negative"));
                }
                Ok(GuideMode::Jitter(sigma))
            }
        }
    }
}

impl fmt::Display for GuideMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GuideMode::GtInterior => f.write_str("gt-interior"),
            GuideMode::GtCentroid => f.write_str("gt-centroid"),
            GuideMode::Jitter(s) => write!(f, "jitter({s})"),
        }
    }
}

/// Walks a connected thin mask depth-first, returning a vertex sequence in
/// which consecutive points are 8-adjacent; drawing it as a polyline
/// reproduces the mask exactly.
pub fn skeleton_path(mask: &BinaryMask) -> Vec<[f64; 2]> {
    let Some(start) = mask.points().into_iter().next() else {
        return Vec::new();
    };
    let mut seen = BinaryMask::new(mask.width(), mask.height());
    let mut path = vec![start];
    let mut stack = vec![start];
    seen.set(start.x as usize, start.y as usize, true);
    while let Some(&p) = stack.last() {
        let next = N8
            .iter()
            .map(|&(dx, dy)| Point::new(p.x + dx, p.y + dy))
            .find(|&q| mask.at(q) == Some(true) && seen.at(q) == Some(false));
        match next {
            Some(q) => {
                seen.set(q.x as usize, q.y as usize, true);
                stack.push(q);
                path.push(q);
            }
            None => {
                stack.pop();
                if let Some(&back) = stack.last() {
                    path.push(back);
                }
            }
        }
    }
    path.iter().map(|p| [p.x as f64, p.y as f64]).collect()
}

/// The squiggle an annotator would draw along a gland: its skeleton.
pub fn gland_squiggle(mask: &BinaryMask) -> Result<GuideInput> {
    let skeleton = signals::gland_inclusion_at(mask, 0.0)?;
    Ok(GuideInput::Squiggle {
        points: skeleton_path(&skeleton),
    })
}

/// One guide per ground-truth instance, in label order.
pub fn guides_for(labels: &LabelMap, kind: ObjectKind, mode: GuideMode, rng: &mut ChaCha8Rng) -> Result<Vec<GuideInput>> {
    let size = labels.size();
    labels
        .labels()
        .into_iter()
        .map(|id| {
            if kind == ObjectKind::Gland {
                return gland_squiggle(&labels.instance(id));
            }
            let p = match mode {
                GuideMode::GtInterior => morph::sample_interior_point(&labels.instance(id), CLICK_MARGIN, rng)?,
                GuideMode::GtCentroid => morph::centroid(labels, id)?,
                GuideMode::Jitter(sigma) => signals::jitter_click(morph::centroid(labels, id)?, sigma, size, rng),
            };
            Ok(GuideInput::click(p))
        })
        .collect()
}

/// Segments every ground-truth instance of every image and scores the
/// assembled label maps.
pub fn evaluate(seg: &Segmenter, data: &[(RgbImage, LabelMap)], mode: GuideMode, seed: u64) -> Result<MetricReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut acc = MetricAccumulator::new();
    for (image, gt) in data {
        let guides = guides_for(gt, seg.kind(), mode, &mut rng)?;
        let pred = seg.segment_image(image, &guides)?;
        acc.add(gt, &pred)?;
    }
    Ok(acc.report())
}

pub fn evaluate_dir(checkpoint: &Path, data_dir: &Path, mode: GuideMode, seed: u64) -> Result<MetricReport> {
    let seg = Segmenter::load(checkpoint)?;
    let data = synth::read_dataset(data_dir)?;
    if data.is_empty() {
        return Err(config_err(format!("no labelled images in {}", data_dir.display())));
    }
    evaluate(&seg, &data, mode, seed)
}
