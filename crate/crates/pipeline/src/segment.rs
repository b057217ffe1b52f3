//! Inference: user guides in, cleaned per-object masks out.

use std::path::Path;

use image::RgbImage;
use nuclick_core::postproc::{self, ObjectResult, THRESHOLD};
use nuclick_core::signals::{self, GuideInput, GuidingSignal, PatchSpec, Squiggle};
use nuclick_core::synth::ObjectKind;
use nuclick_core::{Grid, LabelMap};
use nuclick_net::{checkpoint, Network, Tensor};

use crate::error::Result;
use crate::input::network_input;

/// Patches predicted per forward call.
const INFERENCE_BATCH: usize = 8;

/// A loaded model. Immutable, so one instance can serve concurrent callers.
#[derive(Clone, Debug)]
pub struct Segmenter {
    net: Network<f32>,
}

impl Segmenter {
    pub fn new(net: Network<f32>) -> Self {
        Self { net }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(Self::new(checkpoint::load(path)?))
    }

    pub fn net(&self) -> &Network<f32> {
        &self.net
    }

    pub fn kind(&self) -> ObjectKind {
        self.net.config().kind
    }

    /// Clicks get a square window of the model's patch size; squiggles get
    /// the bounding-box rule with the same target size.
    pub fn window(&self, image_size: (usize, usize), guide: &GuideInput) -> Result<PatchSpec> {
        guide.validate(image_size)?;
        let size = self.net.config().patch_size;
        Ok(match guide {
            GuideInput::Click { .. } => signals::patch_for_click(image_size, guide.anchor(), size),
            GuideInput::Squiggle { points } => signals::patch_for_squiggle(image_size, &Squiggle::single(points.clone()), size)?,
        })
    }

    /// Inclusion from the target guide, exclusion from the anchor pixel of
    /// every other guide that falls inside the window.
    pub fn signal(&self, guides: &[GuideInput], target: usize, window: &PatchSpec) -> Result<GuidingSignal> {
        let guide = guides
            .get(target)
            .ok_or_else(|| nuclick_core::Error::NotFound(format!("guide {target}")))?;
        let (w, h) = window.size;
        let inclusion = match guide {
            GuideInput::Click { .. } => {
                let q = window
                    .image_pixel_to_patch(guide.anchor())
                    .ok_or_else(|| nuclick_core::Error::InvalidInput("click outside its window".into()))?;
                nuclick_core::BinaryMask::from_points(w, h, &[q])
            }
            GuideInput::Squiggle { points } => signals::rasterize_squiggle(&Squiggle::single(points.clone()), window)?,
        };
        let mut exclusion = nuclick_core::BinaryMask::new(w, h);
        for (i, g) in guides.iter().enumerate() {
            if i == target {
                continue;
            }
            if let Some(q) = window.image_pixel_to_patch(g.anchor()) {
                if !inclusion.get(q.x as usize, q.y as usize) {
                    exclusion.set(q.x as usize, q.y as usize, true);
                }
            }
        }
        Ok(GuidingSignal { inclusion, exclusion })
    }

    /// Segments `guides[t]` for every `t` in `targets`, each with all other
    /// guides as exclusion. Object ids are `t + 1`.
    pub fn segment_targets(&self, image: &RgbImage, guides: &[GuideInput], targets: &[usize]) -> Result<Vec<ObjectResult>> {
        let size = (image.width() as usize, image.height() as usize);
        let mut prepared = Vec::with_capacity(targets.len());
        for &t in targets {
            let guide = guides
                .get(t)
                .ok_or_else(|| nuclick_core::Error::NotFound(format!("guide {t}")))?;
            let window = self.window(size, guide)?;
            let signal = self.signal(guides, t, &window)?;
            let input = network_input(&window.extract_rgb(image), &signal, self.net.config().use_exclusion)?;
            prepared.push((t, window, signal, input));
        }
        let mut out = Vec::with_capacity(prepared.len());
        for chunk in prepared.chunks(INFERENCE_BATCH) {
            let batch = Tensor::stack(&chunk.iter().map(|c| c.3.clone()).collect::<Vec<_>>())?;
            let probs = self.net.predict(&batch)?;
            for (k, (t, window, signal, _)) in chunk.iter().enumerate() {
                let (w, h) = window.size;
                let p = Grid::from_vec(w, h, probs.item(k).to_vec())?;
                let mask = postproc::clean(&postproc::binarize(&p, THRESHOLD), &signal.inclusion)?;
                out.push(ObjectResult {
                    patch: *window,
                    mask,
                    object_id: *t as u32 + 1,
                });
            }
        }
        Ok(out)
    }

    /// One label per guide, in guide order; later guides win overlaps.
    pub fn segment_image(&self, image: &RgbImage, guides: &[GuideInput]) -> Result<LabelMap> {
        let targets: Vec<usize> = (0..guides.len()).collect();
        let results = self.segment_targets(image, guides, &targets)?;
        Ok(postproc::assemble(&results, (image.width() as usize, image.height() as usize)))
    }
}
