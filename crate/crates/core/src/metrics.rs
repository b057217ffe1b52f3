//! Instance segmentation metrics: AJI, Dice, DQ/SQ/PQ, boundary Hausdorff
//! and the object-level F1 / Dice used for glands.
//!
//! Conventions for degenerate inputs: two empty maps score perfectly
//! (AJI = Dice = DQ = SQ = PQ = 1, Hausdorff 0). When objects exist but no
//! pair matches, the Hausdorff mean is the image diagonal.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::grid::{BinaryMask, LabelMap};
use crate::morph;

/// IoU above which a prediction counts as a true positive.
pub const MATCH_IOU: f64 = 0.5;

/// Pairwise overlap statistics between two label maps.
#[derive(Debug, Clone)]
pub struct Overlap {
    pub gt_area: BTreeMap<u32, u64>,
    pub pred_area: BTreeMap<u32, u64>,
    pub intersection: BTreeMap<(u32, u32), u64>,
}

impl Overlap {
    pub fn new(gt: &LabelMap, pred: &LabelMap) -> Result<Self> {
        gt.ensure_same_size(pred)?;
        let mut gt_area = BTreeMap::new();
        let mut pred_area = BTreeMap::new();
        let mut intersection = BTreeMap::new();
        for (&g, &p) in gt.data().iter().zip(pred.data()) {
            if g != 0 {
                *gt_area.entry(g).or_insert(0) += 1;
            }
            if p != 0 {
                *pred_area.entry(p).or_insert(0) += 1;
            }
            if g != 0 && p != 0 {
                *intersection.entry((g, p)).or_insert(0) += 1;
            }
        }
        Ok(Self {
            gt_area,
            pred_area,
            intersection,
        })
    }

    pub fn iou(&self, g: u32, p: u32) -> f64 {
        let i = self.intersection.get(&(g, p)).copied().unwrap_or(0);
        let u = self.gt_area[&g] + self.pred_area[&p] - i;
        if u == 0 {
            0.0
        } else {
            i as f64 / u as f64
        }
    }

    /// Pairs with IoU > 0.5. Such pairs are unique per object; this is
    /// checked, not assumed.
    pub fn matches(&self) -> Vec<(u32, u32, f64)> {
        let mut out = Vec::new();
        let mut seen_g = BTreeSet::new();
        let mut seen_p = BTreeSet::new();
        for &(g, p) in self.intersection.keys() {
            let iou = self.iou(g, p);
            if iou > MATCH_IOU {
                assert!(seen_g.insert(g) && seen_p.insert(p), "IoU > 0.5 matching must be one-to-one");
                out.push((g, p, iou));
            }
        }
        out
    }
}

/// Aggregated Jaccard Index.
///
/// GT instances are visited in ascending label order; each takes the unused
/// prediction with the highest IoU (lowest label on ties). Unused
/// predictions are added to the union at the end.
pub fn aji(gt: &LabelMap, pred: &LabelMap) -> Result<f64> {
    let ov = Overlap::new(gt, pred)?;
    let (c, u) = aji_sums(&ov);
    Ok(if u == 0 { 1.0 } else { c as f64 / u as f64 })
}

fn aji_sums(ov: &Overlap) -> (u64, u64) {
    let mut by_gt: BTreeMap<u32, Vec<u32>> = BTreeMap::new();
    for &(g, p) in ov.intersection.keys() {
        by_gt.entry(g).or_default().push(p);
    }
    let mut used = BTreeSet::new();
    let (mut inter, mut union) = (0u64, 0u64);
    for (&g, &ga) in &ov.gt_area {
        let mut cands = by_gt.remove(&g).unwrap_or_default();
        cands.sort_by(|&a, &b| ov.iou(g, b).total_cmp(&ov.iou(g, a)).then(a.cmp(&b)));
        match cands.into_iter().find(|p| !used.contains(p)) {
            Some(p) => {
                let i = ov.intersection[&(g, p)];
                inter += i;
                union += ga + ov.pred_area[&p] - i;
                used.insert(p);
            }
            None => union += ga,
        }
    }
    for (p, &pa) in &ov.pred_area {
        if !used.contains(p) {
            union += pa;
        }
    }
    (inter, union)
}

/// Dice coefficient of two binary masks; 1 when both are empty.
pub fn dice(gt: &BinaryMask, pred: &BinaryMask) -> Result<f64> {
    gt.ensure_same_size(pred)?;
    let (a, b) = (gt.count(), pred.count());
    if a + b == 0 {
        return Ok(1.0);
    }
    let inter = gt.and(pred).count();
    Ok(2.0 * inter as f64 / (a + b) as f64)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Panoptic {
    pub dq: f64,
    pub sq: f64,
    pub pq: f64,
}

/// Detection, segmentation and panoptic quality with IoU > 0.5 matching.
pub fn panoptic(gt: &LabelMap, pred: &LabelMap) -> Result<Panoptic> {
    let ov = Overlap::new(gt, pred)?;
    let m = ov.matches();
    let iou_sum: f64 = m.iter().map(|t| t.2).sum();
    Ok(panoptic_from_counts(m.len(), ov.gt_area.len(), ov.pred_area.len(), iou_sum))
}

fn panoptic_from_counts(tp: usize, n_gt: usize, n_pred: usize, iou_sum: f64) -> Panoptic {
    if n_gt == 0 && n_pred == 0 {
        return Panoptic {
            dq: 1.0,
            sq: 1.0,
            pq: 1.0,
        };
    }
    let (fn_, fp) = (n_gt - tp, n_pred - tp);
    let dq = 2.0 * tp as f64 / (2 * tp + fp + fn_) as f64;
    let sq = if tp == 0 { 0.0 } else { iou_sum / tp as f64 };
    Panoptic { dq, sq, pq: dq * sq }
}

/// Symmetric Hausdorff distance between the boundary pixel sets.
pub fn hausdorff(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    a.ensure_same_size(b)?;
    if !a.any() || !b.any() {
        return Err(invalid("hausdorff distance needs two nonempty masks"));
    }
    let pa = morph::boundary(a).points();
    let pb = morph::boundary(b).points();
    let directed = |from: &[crate::Point], to: &[crate::Point]| {
        from.iter()
            .map(|&p| to.iter().map(|&q| p.dist2(q)).min().unwrap_or(0))
            .max()
            .unwrap_or(0)
    };
    Ok((directed(&pa, &pb).max(directed(&pb, &pa)) as f64).sqrt())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ObjectLevel {
    pub f1: f64,
    pub dice: f64,
    pub hausdorff: f64,
}

/// Object-level F1, area-weighted Dice and area-weighted Hausdorff over
/// IoU > 0.5 matched pairs (weights are GT areas).
pub fn object_level(gt: &LabelMap, pred: &LabelMap) -> Result<ObjectLevel> {
    let acc = ObjectAccum::from_maps(gt, pred)?;
    Ok(acc.finish(diagonal(gt)))
}

fn diagonal(m: &LabelMap) -> f64 {
    ((m.width() * m.width() + m.height() * m.height()) as f64).sqrt()
}

#[derive(Debug, Clone, Copy, Default)]
struct ObjectAccum {
    tp: usize,
    n_gt: usize,
    n_pred: usize,
    weight: f64,
    dice: f64,
    hausdorff: f64,
}

impl ObjectAccum {
    fn from_maps(gt: &LabelMap, pred: &LabelMap) -> Result<Self> {
        let ov = Overlap::new(gt, pred)?;
        let mut acc = ObjectAccum {
            n_gt: ov.gt_area.len(),
            n_pred: ov.pred_area.len(),
            ..Default::default()
        };
        for (g, p, _) in ov.matches() {
            let (gm, pm) = (gt.instance(g), pred.instance(p));
            let w = ov.gt_area[&g] as f64;
            acc.tp += 1;
            acc.weight += w;
            acc.dice += w * dice(&gm, &pm)?;
            acc.hausdorff += w * hausdorff(&gm, &pm)?;
        }
        Ok(acc)
    }

    fn add(&mut self, o: &ObjectAccum) {
        self.tp += o.tp;
        self.n_gt += o.n_gt;
        self.n_pred += o.n_pred;
        self.weight += o.weight;
        self.dice += o.dice;
        self.hausdorff += o.hausdorff;
    }

    fn finish(&self, no_match_distance: f64) -> ObjectLevel {
        if self.n_gt == 0 && self.n_pred == 0 {
            return ObjectLevel {
                f1: 1.0,
                dice: 1.0,
                hausdorff: 0.0,
            };
        }
        let f1 = 2.0 * self.tp as f64 / (self.n_gt + self.n_pred) as f64;
        if self.tp == 0 {
            return ObjectLevel {
                f1,
                dice: 0.0,
                hausdorff: no_match_distance,
            };
        }
        ObjectLevel {
            f1,
            dice: self.dice / self.weight,
            hausdorff: self.hausdorff / self.weight,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub aji: f64,
    pub dice: f64,
    pub dq: f64,
    pub sq: f64,
    pub pq: f64,
    pub hausdorff_mean: f64,
    pub obj_f1: f64,
    pub obj_dice: f64,
    pub matched: usize,
    pub missed: usize,
    pub spurious: usize,
    pub images: usize,
}

impl MetricReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

impl fmt::Display for MetricReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let rows: [(&str, String); 12] = [
            ("images", self.images.to_string()),
            ("aji", format!("{:.4}", self.aji)),
            ("dice", format!("{:.4}", self.dice)),
            ("dq", format!("{:.4}", self.dq)),
            ("sq", format!("{:.4}", self.sq)),
            ("pq", format!("{:.4}", self.pq)),
            ("hausdorff_mean", format!("{:.3}", self.hausdorff_mean)),
            ("obj_f1", format!("{:.4}", self.obj_f1)),
            ("obj_dice", format!("{:.4}", self.obj_dice)),
            ("matched", self.matched.to_string()),
            ("missed", self.missed.to_string()),
            ("spurious", self.spurious.to_string()),
        ];
        for (k, v) in rows {
            writeln!(f, "{k:<16}{v:>12}")?;
        }
        Ok(())
    }
}

/// Accumulates metrics over many image pairs. AJI and Dice are averaged per
/// image; panoptic and object-level scores pool their counts across images.
#[derive(Debug, Clone, Default)]
pub struct MetricAccumulator {
    images: usize,
    aji_sum: f64,
    dice_sum: f64,
    iou_sum: f64,
    objects: ObjectAccum,
    diag: f64,
}

impl MetricAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, gt: &LabelMap, pred: &LabelMap) -> Result<()> {
        let ov = Overlap::new(gt, pred)?;
        let (c, u) = aji_sums(&ov);
        self.aji_sum += if u == 0 { 1.0 } else { c as f64 / u as f64 };
        self.dice_sum += dice(&gt.foreground(), &pred.foreground())?;
        self.iou_sum += ov.matches().iter().map(|t| t.2).sum::<f64>();
        self.objects.add(&ObjectAccum::from_maps(gt, pred)?);
        self.diag = self.diag.max(diagonal(gt));
        self.images += 1;
        Ok(())
    }

    pub fn report(&self) -> MetricReport {
        let o = &self.objects;
        let pan = panoptic_from_counts(o.tp, o.n_gt, o.n_pred, self.iou_sum);
        let obj = o.finish(self.diag);
        let n = self.images.max(1) as f64;
        MetricReport {
            aji: if self.images == 0 { 1.0 } else { self.aji_sum / n },
            dice: if self.images == 0 { 1.0 } else { self.dice_sum / n },
            dq: pan.dq,
            sq: pan.sq,
            pq: pan.pq,
            hausdorff_mean: obj.hausdorff,
            obj_f1: obj.f1,
            obj_dice: obj.dice,
            matched: o.tp,
            missed: o.n_gt - o.tp,
            spurious: o.n_pred - o.tp,
            images: self.images,
        }
    }
}

/// All metrics for a single image pair.
pub fn evaluate(gt: &LabelMap, pred: &LabelMap) -> Result<MetricReport> {
    let mut acc = MetricAccumulator::new();
    acc.add(gt, pred)?;
    Ok(acc.report())
}
