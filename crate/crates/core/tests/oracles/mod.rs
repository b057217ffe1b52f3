//! Slow, obviously-correct reference implementations used to check the
//! library. Shared with the acceptance suite through `#[path]`.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use nuclick_core::{BinaryMask, Grid, LabelMap, Point};
use rand::Rng;

const N8: [(i32, i32); 8] = [(1, 0), (1, -1), (0, -1), (-1, -1), (-1, 0), (-1, 1), (0, 1), (1, 1)];

pub fn random_mask<R: Rng>(rng: &mut R, w: usize, h: usize, density: f64) -> BinaryMask {
    Grid::from_fn(w, h, |_, _| rng.random_bool(density))
}

/// Union of a few random filled discs, optionally with a hole punched into
/// each: blobs and annuli.
pub fn random_blobs<R: Rng>(rng: &mut R, w: usize, h: usize, annuli: bool) -> BinaryMask {
    let mut m = BinaryMask::new(w, h);
    let n = rng.random_range(1..=3);
    for _ in 0..n {
        let r = rng.random_range(3.0..9.0f64);
        let cx = rng.random_range(0.0..w as f64);
        let cy = rng.random_range(0.0..h as f64);
        let hole = if annuli { rng.random_range(0.3..0.6) * r } else { -1.0 };
        for y in 0..h {
            for x in 0..w {
                let d = ((x as f64 - cx).powi(2) + (y as f64 - cy).powi(2)).sqrt();
                if d <= r && d > hole {
                    m.set(x, y, true);
                }
            }
        }
    }
    m
}

/// Distance to the nearest background pixel by scanning every pixel, where
/// the ring just outside the raster is background too.
pub fn edt_brute(mask: &BinaryMask) -> Vec<f64> {
    let (w, h) = (mask.width() as i64, mask.height() as i64);
    let mut out = vec![0.0; mask.len()];
    for y in 0..h {
        for x in 0..w {
            if !mask.get(x as usize, y as usize) {
                continue;
            }
            let mut best = [x + 1, w - x, y + 1, h - y].into_iter().min().unwrap().pow(2);
            for by in 0..h {
                for bx in 0..w {
                    if !mask.get(bx as usize, by as usize) {
                        best = best.min((bx - x).pow(2) + (by - y).pow(2));
                    }
                }
            }
            out[(y * w + x) as usize] = (best as f64).sqrt();
        }
    }
    out
}

pub fn dilate_within(m: &BinaryMask, limit: &BinaryMask) -> BinaryMask {
    Grid::from_fn(m.width(), m.height(), |x, y| {
        limit.get(x, y)
            && (m.get(x, y)
                || N8.iter().any(|&(dx, dy)| {
                    let (nx, ny) = (x as i32 + dx, y as i32 + dy);
                    nx >= 0 && ny >= 0 && m.at(Point::new(nx, ny)) == Some(true)
                }))
    })
}

/// Iterate geodesic dilation until nothing changes.
pub fn reconstruct_fixpoint(marker: &BinaryMask, mask: &BinaryMask) -> BinaryMask {
    let mut cur = marker.and(mask);
    loop {
        let next = dilate_within(&cur, mask);
        if next == cur {
            return cur;
        }
        cur = next;
    }
}

/// Recursive-free flood fill labeling, 8-connected, raster-order labels.
pub fn flood_labels(mask: &BinaryMask) -> LabelMap {
    let mut out = LabelMap::new(mask.width(), mask.height());
    let mut next = 0;
    for y in 0..mask.height() {
        for x in 0..mask.width() {
            if !mask.get(x, y) || out.get(x, y) != 0 {
                continue;
            }
            next += 1;
            let mut stack = vec![(x as i32, y as i32)];
            out.set(x, y, next);
            while let Some((cx, cy)) = stack.pop() {
                for (dx, dy) in N8 {
                    let p = Point::new(cx + dx, cy + dy);
                    if mask.at(p) == Some(true) && out.at(p) == Some(0) {
                        out.set(p.x as usize, p.y as usize, next);
                        stack.push((p.x, p.y));
                    }
                }
            }
        }
    }
    out
}

/// Components (8-connected) and holes (4-connected background regions not
/// connected to the outside) by flood filling a padded copy.
pub fn topology(mask: &BinaryMask) -> (usize, usize) {
    let comps = flood_labels(mask).max_label() as usize;
    let (w, h) = (mask.width() + 2, mask.height() + 2);
    let bg = Grid::from_fn(w, h, |x, y| {
        x == 0 || y == 0 || x == w - 1 || y == h - 1 || !mask.get(x - 1, y - 1)
    });
    let mut seen = Grid::filled(w, h, false);
    let mut regions = 0;
    for y in 0..h {
        for x in 0..w {
            if !bg.get(x, y) || seen.get(x, y) {
                continue;
            }
            regions += 1;
            seen.set(x, y, true);
            let mut stack = vec![Point::new(x as i32, y as i32)];
            while let Some(p) = stack.pop() {
                for (dx, dy) in [(1, 0), (-1, 0), (0, 1), (0, -1)] {
                    let q = Point::new(p.x + dx, p.y + dy);
                    if bg.at(q) == Some(true) && seen.at(q) == Some(false) {
                        seen.set(q.x as usize, q.y as usize, true);
                        stack.push(q);
                    }
                }
            }
        }
    }
    (comps, regions - 1)
}

/// One pixel wide: no fully foreground 2×2 block.
pub fn is_thin(mask: &BinaryMask) -> bool {
    for y in 0..mask.height().saturating_sub(1) {
        for x in 0..mask.width().saturating_sub(1) {
            if mask.get(x, y) && mask.get(x + 1, y) && mask.get(x, y + 1) && mask.get(x + 1, y + 1) {
                return false;
            }
        }
    }
    true
}

/// Random 16×16-style instance map: a few rectangles painted in order,
/// labels compacted.
pub fn random_labels<R: Rng>(rng: &mut R, w: usize, h: usize, max_objects: usize) -> LabelMap {
    let mut m = LabelMap::new(w, h);
    let n = rng.random_range(0..=max_objects);
    for k in 1..=n {
        let (rw, rh) = (rng.random_range(1..=w / 2), rng.random_range(1..=h / 2));
        let (x0, y0) = (rng.random_range(0..=w - rw), rng.random_range(0..=h - rh));
        for y in y0..y0 + rh {
            for x in x0..x0 + rw {
                m.set(x, y, k as u32);
            }
        }
    }
    m.compact()
}

/// A prediction loosely derived from `gt`: objects shifted/grown/dropped,
/// plus some spurious rectangles.
pub fn perturbed_labels<R: Rng>(rng: &mut R, gt: &LabelMap) -> LabelMap {
    let (w, h) = gt.size();
    let mut m = LabelMap::new(w, h);
    let mut next = 1;
    for id in gt.labels() {
        if rng.random_bool(0.15) {
            continue;
        }
        let (dx, dy) = (rng.random_range(-2..=2), rng.random_range(-2..=2));
        for p in gt.instance(id).points() {
            let q = Point::new(p.x + dx, p.y + dy);
            if m.contains(q) {
                m.set(q.x as usize, q.y as usize, next);
            }
        }
        next += 1;
    }
    let noise = random_labels(rng, w, h, 2);
    for (i, &l) in noise.data().iter().enumerate() {
        if l != 0 {
            m.data_mut()[i] = next + l;
        }
    }
    m.compact()
}

fn ids(m: &LabelMap) -> BTreeSet<u32> {
    m.data().iter().copied().filter(|&l| l != 0).collect()
}

fn count(m: &LabelMap, id: u32) -> u64 {
    m.data().iter().filter(|&&l| l == id).count() as u64
}

fn inter(a: &LabelMap, ia: u32, b: &LabelMap, ib: u32) -> u64 {
    a.data().iter().zip(b.data()).filter(|(&x, &y)| x == ia && y == ib).count() as u64
}

fn iou(a: &LabelMap, ia: u32, b: &LabelMap, ib: u32) -> f64 {
    let i = inter(a, ia, b, ib);
    let u = count(a, ia) + count(b, ib) - i;
    if u == 0 {
        0.0
    } else {
        i as f64 / u as f64
    }
}

/// AJI straight from its definition, one pixel scan per (gt, pred) pair.
pub fn aji_brute(gt: &LabelMap, pred: &LabelMap) -> f64 {
    let mut used = BTreeSet::new();
    let (mut c, mut u) = (0u64, 0u64);
    for g in ids(gt) {
        let mut best: Option<(f64, u32)> = None;
        for p in ids(pred) {
            if used.contains(&p) || inter(gt, g, pred, p) == 0 {
                continue;
            }
            let v = iou(gt, g, pred, p);
            if best.is_none_or(|(bv, _)| v > bv) {
                best = Some((v, p));
            }
        }
        match best {
            Some((_, p)) => {
                let i = inter(gt, g, pred, p);
                c += i;
                u += count(gt, g) + count(pred, p) - i;
                used.insert(p);
            }
            None => u += count(gt, g),
        }
    }
    for p in ids(pred) {
        if !used.contains(&p) {
            u += count(pred, p);
        }
    }
    if u == 0 {
        1.0
    } else {
        c as f64 / u as f64
    }
}

/// Maximum-cardinality matching over pairs with IoU > 0.5, by exhaustive
/// search; returns the matched pairs with their IoU.
pub fn exhaustive_matches(gt: &LabelMap, pred: &LabelMap) -> Vec<(u32, u32, f64)> {
    let gs: Vec<u32> = ids(gt).into_iter().collect();
    let ps: Vec<u32> = ids(pred).into_iter().collect();
    let mut edges: BTreeMap<u32, Vec<(u32, f64)>> = BTreeMap::new();
    for &g in &gs {
        for &p in &ps {
            let v = iou(gt, g, pred, p);
            if v > 0.5 {
                edges.entry(g).or_default().push((p, v));
            }
        }
    }
    fn search(
        gs: &[u32],
        edges: &BTreeMap<u32, Vec<(u32, f64)>>,
        used: &mut BTreeSet<u32>,
        cur: &mut Vec<(u32, u32, f64)>,
        best: &mut Vec<(u32, u32, f64)>,
    ) {
        if cur.len() > best.len() {
            *best = cur.clone();
        }
        let Some((&g, rest)) = gs.split_first() else {
            return;
        };
        for &(p, v) in edges.get(&g).map(|e| e.as_slice()).unwrap_or(&[]) {
            if used.insert(p) {
                cur.push((g, p, v));
                search(rest, edges, used, cur, best);
                cur.pop();
                used.remove(&p);
            }
        }
        search(rest, edges, used, cur, best);
    }
    let mut best = Vec::new();
    search(&gs, &edges, &mut BTreeSet::new(), &mut Vec::new(), &mut best);
    best
}

pub fn panoptic_brute(gt: &LabelMap, pred: &LabelMap) -> (f64, f64, f64) {
    let (ng, np) = (ids(gt).len(), ids(pred).len());
    if ng == 0 && np == 0 {
        return (1.0, 1.0, 1.0);
    }
    let m = exhaustive_matches(gt, pred);
    let tp = m.len();
    let (fp, fn_) = (np - tp, ng - tp);
    let dq = 2.0 * tp as f64 / (2 * tp + fp + fn_) as f64;
    let sq = if tp == 0 { 0.0 } else { m.iter().map(|t| t.2).sum::<f64>() / tp as f64 };
    (dq, sq, dq * sq)
}

/// Boundary: foreground pixels with a background (or off-raster) 8-neighbour.
pub fn boundary_points(m: &BinaryMask) -> Vec<(i64, i64)> {
    let mut out = Vec::new();
    for y in 0..m.height() as i32 {
        for x in 0..m.width() as i32 {
            if m.at(Point::new(x, y)) != Some(true) {
                continue;
            }
            if N8.iter().any(|&(dx, dy)| m.at(Point::new(x + dx, y + dy)) != Some(true)) {
                out.push((x as i64, y as i64));
            }
        }
    }
    out
}

pub fn hausdorff_brute(a: &BinaryMask, b: &BinaryMask) -> f64 {
    let (pa, pb) = (boundary_points(a), boundary_points(b));
    let directed = |s: &[(i64, i64)], t: &[(i64, i64)]| {
        let mut worst = 0.0f64;
        for &(x, y) in s {
            let mut best = f64::INFINITY;
            for &(u, v) in t {
                best = best.min((((x - u).pow(2) + (y - v).pow(2)) as f64).sqrt());
            }
            worst = worst.max(best);
        }
        worst
    };
    directed(&pa, &pb).max(directed(&pb, &pa))
}

fn dice_masks(a: &BinaryMask, b: &BinaryMask) -> f64 {
    let i = a.and(b).count();
    let s = a.count() + b.count();
    if s == 0 {
        1.0
    } else {
        2.0 * i as f64 / s as f64
    }
}

/// (obj_f1, obj_dice, hausdorff_mean) with GT-area weights over matched pairs.
pub fn object_level_brute(gt: &LabelMap, pred: &LabelMap) -> (f64, f64, f64) {
    let (ng, np) = (ids(gt).len(), ids(pred).len());
    if ng == 0 && np == 0 {
        return (1.0, 1.0, 0.0);
    }
    let m = exhaustive_matches(gt, pred);
    let f1 = 2.0 * m.len() as f64 / (ng + np) as f64;
    if m.is_empty() {
        let (w, h) = gt.size();
        return (f1, 0.0, ((w * w + h * h) as f64).sqrt());
    }
    let (mut wsum, mut d, mut hd) = (0.0, 0.0, 0.0);
    for &(g, p, _) in &m {
        let (gm, pm) = (gt.instance(g), pred.instance(p));
        let w = gm.count() as f64;
        wsum += w;
        d += w * dice_masks(&gm, &pm);
        hd += w * hausdorff_brute(&gm, &pm);
    }
    (f1, d / wsum, hd / wsum)
}

/// Chi-square statistic against a uniform distribution over `k` cells and
/// its p-value by Wilson–Hilferty approximation.
pub fn chi_square_uniform(counts: &[u64]) -> (f64, f64) {
    let n: u64 = counts.iter().sum();
    let k = counts.len() as f64;
    let e = n as f64 / k;
    let stat: f64 = counts.iter().map(|&c| (c as f64 - e).powi(2) / e).sum();
    let df = k - 1.0;
    let z = ((stat / df).powf(1.0 / 3.0) - (1.0 - 2.0 / (9.0 * df))) / (2.0 / (9.0 * df)).sqrt();
    (stat, 0.5 * erfc(z / std::f64::consts::SQRT_2))
}

fn erfc(x: f64) -> f64 {
    // Numerical Recipes erfcc, fractional error < 1.2e-7
    let z = x.abs();
    let t = 1.0 / (1.0 + 0.5 * z);
    let r = t * (-z * z - 1.26551223
        + t * (1.00002368
            + t * (0.37409196
                + t * (0.09678418
                    + t * (-0.18628806
                        + t * (0.27886807 + t * (-1.13520398 + t * (1.48851587 + t * (-0.82215223 + t * 0.17087277)))))))))
        .exp();
    if x >= 0.0 {
        r
    } else {
        2.0 - r
    }
}
