//! Pixel-exact binary morphology.
//!
//! Connectivity is 8 for foreground and 4 for background everywhere, which
//! makes component and hole counts well defined. Pixels outside the raster
//! are treated as background.

use std::collections::VecDeque;
use std::sync::OnceLock;

use rand::Rng;

use crate::error::{invalid, Error, Result};
use crate::grid::{BinaryMask, DistanceMap, Grid, LabelMap, Point};

/// 8-neighbourhood offsets.
pub const N8: [(i32, i32); 8] = [
    (1, 0),
    (1, -1),
    (0, -1),
    (-1, -1),
    (-1, 0),
    (-1, 1),
    (0, 1),
    (1, 1),
];

const N4: [(i32, i32); 4] = [(1, 0), (0, -1), (-1, 0), (0, 1)];

const INF: f64 = 1e20;

/// Exact Euclidean distance transform: every foreground pixel gets the
/// distance to its nearest background pixel, background pixels get 0.
///
/// The raster is embedded in an infinite background, so objects touching the
/// border are at distance 1 from it and the map is finite everywhere.
pub fn edt(mask: &BinaryMask) -> Result<DistanceMap> {
    Ok(squared_edt(mask)?.map(|&d| d.sqrt()))
}

/// Squared distances as exact integers held in `f64`.
pub fn squared_edt(mask: &BinaryMask) -> Result<DistanceMap> {
    mask.ensure_nonempty()?;
    let (w, h) = mask.size();
    // One ring of background padding around the raster.
    let (pw, ph) = (w + 2, h + 2);
    let mut grid = vec![0.0f64; pw * ph];
    for y in 0..h {
        for x in 0..w {
            if mask.get(x, y) {
                grid[(y + 1) * pw + x + 1] = INF;
            }
        }
    }

    let mut f = vec![0.0; pw.max(ph)];
    let mut d = vec![0.0; pw.max(ph)];
    let mut v = vec![0usize; pw.max(ph)];
    let mut z = vec![0.0; pw.max(ph) + 1];

    for x in 1..=w {
        for y in 0..ph {
            f[y] = grid[y * pw + x];
        }
        dt_1d(&f[..ph], &mut d[..ph], &mut v, &mut z);
        for y in 0..ph {
            grid[y * pw + x] = d[y];
        }
    }
    for y in 1..=h {
        let row = &mut grid[y * pw..(y + 1) * pw];
        f[..pw].copy_from_slice(row);
        dt_1d(&f[..pw], &mut d[..pw], &mut v, &mut z);
        row.copy_from_slice(&d[..pw]);
    }

    Ok(Grid::from_fn(w, h, |x, y| grid[(y + 1) * pw + x + 1]))
}

/// Lower envelope of parabolas (Felzenszwalb & Huttenlocher).
fn dt_1d(f: &[f64], d: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let n = f.len();
    let mut k = 0usize;
    v[0] = 0;
    z[0] = -INF;
    z[1] = INF;
    for q in 1..n {
        let fq = f[q] + (q * q) as f64;
        let mut s;
        loop {
            let p = v[k];
            s = (fq - (f[p] + (p * p) as f64)) / (2.0 * q as f64 - 2.0 * p as f64);
            if s <= z[k] && k > 0 {
                k -= 1;
            } else {
                break;
            }
        }
        if s <= z[k] {
            // k == 0 and the new parabola dominates everywhere
            v[0] = q;
            z[0] = -INF;
            z[1] = INF;
            continue;
        }
        k += 1;
        v[k] = q;
        z[k] = s;
        z[k + 1] = INF;
    }
    k = 0;
    for (q, out) in d.iter_mut().enumerate().take(n) {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let p = v[k];
        let dq = q as f64 - p as f64;
        *out = dq * dq + f[p];
    }
}

/// 8-connected component labeling; labels follow the raster order of each
/// component's first pixel.
pub fn connected_components(mask: &BinaryMask) -> LabelMap {
    let (w, h) = mask.size();
    let mut labels = LabelMap::new(w, h);
    let mut queue = VecDeque::new();
    let mut next = 0u32;
    for start in 0..mask.len() {
        if !mask.data()[start] || labels.data()[start] != 0 {
            continue;
        }
        next += 1;
        labels.data_mut()[start] = next;
        queue.push_back(start);
        while let Some(i) = queue.pop_front() {
            let p = mask.point_of(i);
            for (dx, dy) in N8 {
                let q = Point::new(p.x + dx, p.y + dy);
                if mask.at(q) == Some(true) {
                    let j = mask.index(q.x as usize, q.y as usize);
                    if labels.data()[j] == 0 {
                        labels.data_mut()[j] = next;
                        queue.push_back(j);
                    }
                }
            }
        }
    }
    labels
}

pub fn count_components(mask: &BinaryMask) -> usize {
    connected_components(mask).max_label() as usize
}

/// Number of 4-connected background regions fully enclosed by foreground.
pub fn count_holes(mask: &BinaryMask) -> usize {
    let (w, h) = mask.size();
    let (pw, ph) = (w + 2, h + 2);
    let mut bg = vec![false; pw * ph];
    for y in 0..ph {
        for x in 0..pw {
            bg[y * pw + x] = x == 0 || y == 0 || x == pw - 1 || y == ph - 1 || !mask.get(x - 1, y - 1);
        }
    }
    let mut seen = vec![false; pw * ph];
    let mut regions = 0;
    let mut queue = VecDeque::new();
    for start in 0..bg.len() {
        if !bg[start] || seen[start] {
            continue;
        }
        regions += 1;
        seen[start] = true;
        queue.push_back(start);
        while let Some(i) = queue.pop_front() {
            let (x, y) = ((i % pw) as i32, (i / pw) as i32);
            for (dx, dy) in N4 {
                let (nx, ny) = (x + dx, y + dy);
                if nx < 0 || ny < 0 || nx >= pw as i32 || ny >= ph as i32 {
                    continue;
                }
                let j = ny as usize * pw + nx as usize;
                if bg[j] && !seen[j] {
                    seen[j] = true;
                    queue.push_back(j);
                }
            }
        }
    }
    // The padded ring always forms the outer region.
    regions - 1
}

/// Morphological reconstruction by geodesic dilation: the union of the
/// 8-connected components of `mask` that intersect `marker`. Marker pixels
/// outside `mask` are ignored.
pub fn reconstruct(marker: &BinaryMask, mask: &BinaryMask) -> Result<BinaryMask> {
    mask.ensure_same_size(marker)?;
    let mut out = BinaryMask::new(mask.width(), mask.height());
    let mut queue: VecDeque<usize> = VecDeque::new();
    for i in 0..mask.len() {
        if marker.data()[i] && mask.data()[i] {
            out.data_mut()[i] = true;
            queue.push_back(i);
        }
    }
    while let Some(i) = queue.pop_front() {
        let p = mask.point_of(i);
        for (dx, dy) in N8 {
            let q = Point::new(p.x + dx, p.y + dy);
            if mask.at(q) == Some(true) {
                let j = mask.index(q.x as usize, q.y as usize);
                if !out.data()[j] {
                    out.data_mut()[j] = true;
                    queue.push_back(j);
                }
            }
        }
    }
    Ok(out)
}

/// Drops components smaller than `min_area` pixels and compacts the
/// remaining labels to 1..=K in their original order.
pub fn remove_small(labels: &LabelMap, min_area: usize) -> LabelMap {
    let areas = labels.areas();
    labels
        .map(|&l| if l != 0 && areas[l as usize] < min_area { 0 } else { l })
        .compact()
}

/// Rounded mean position of an instance, snapped to the member pixel with the
/// largest distance-to-background when the mean falls outside the object.
pub fn centroid(labels: &LabelMap, id: u32) -> Result<Point> {
    if id == 0 {
        return Err(Error::NotFound("label 0 is background".into()));
    }
    let (mut sx, mut sy, mut n) = (0.0f64, 0.0f64, 0usize);
    for (i, &l) in labels.data().iter().enumerate() {
        if l == id {
            let p = labels.point_of(i);
            sx += p.x as f64;
            sy += p.y as f64;
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::NotFound(format!("instance {id} not present")));
    }
    let mean = Point::new((sx / n as f64).round() as i32, (sy / n as f64).round() as i32);
    if labels.at(mean) == Some(id) {
        return Ok(mean);
    }
    Ok(deepest_point(&labels.instance(id))?.expect("instance is nonempty"))
}

/// The foreground pixel with maximal distance to background (first in raster
/// order on ties), or `None` for an all-zero mask.
pub fn deepest_point(mask: &BinaryMask) -> Result<Option<Point>> {
    let dist = squared_edt(mask)?;
    let mut best: Option<(f64, usize)> = None;
    for (i, &d) in dist.data().iter().enumerate() {
        if mask.data()[i] && best.is_none_or(|(bd, _)| d > bd) {
            best = Some((d, i));
        }
    }
    Ok(best.map(|(_, i)| mask.point_of(i)))
}

/// Uniformly random foreground pixel whose distance to background is at
/// least `margin`; falls back to the deepest pixel when none qualifies.
pub fn sample_interior_point<R: Rng + ?Sized>(mask: &BinaryMask, margin: f64, rng: &mut R) -> Result<Point> {
    if margin < 0.0 {
        return Err(invalid("negative margin"));
    }
    let dist = edt(mask)?;
    let eligible: Vec<usize> = (0..mask.len())
        .filter(|&i| mask.data()[i] && dist.data()[i] >= margin)
        .collect();
    if eligible.is_empty() {
        return deepest_point(mask)?.ok_or_else(|| invalid("mask has no foreground pixels"));
    }
    let pick = eligible[rng.random_range(0..eligible.len())];
    Ok(mask.point_of(pick))
}

/// Foreground pixels with at least one 8-neighbour in the background
/// (outside the raster counts as background).
pub fn boundary(mask: &BinaryMask) -> BinaryMask {
    Grid::from_fn(mask.width(), mask.height(), |x, y| {
        if !mask.get(x, y) {
            return false;
        }
        N8.iter().any(|&(dx, dy)| mask.at(Point::new(x as i32 + dx, y as i32 + dy)) != Some(true))
    })
}

/// Topology-preserving thinning to a 1-pixel-wide 8-connected skeleton.
///
/// Border pixels are peeled in four directional sub-passes; a pixel is
/// removed only if it is simple (its removal changes neither the number of
/// foreground 8-components nor background 4-components) and is not an
/// end point. Candidates are chosen per sub-pass from its starting state,
/// which keeps the thinning symmetric, and deleted sequentially with the
/// simple test re-checked, so topology is preserved exactly.
pub fn skeletonize(mask: &BinaryMask) -> BinaryMask {
    let mut out = mask.clone();
    if out.is_empty() {
        return out;
    }
    let lut = simple_lut();
    let (w, h) = out.size();
    let mut candidates = Vec::new();
    loop {
        let mut changed = false;
        for &(dx, dy) in &[(0, -1), (0, 1), (1, 0), (-1, 0)] {
            candidates.clear();
            for y in 0..h {
                for x in 0..w {
                    if !out.get(x, y) {
                        continue;
                    }
                    if out.at(Point::new(x as i32 + dx, y as i32 + dy)) == Some(true) {
                        continue;
                    }
                    let code = neighbourhood(&out, x, y);
                    if code.count_ones() >= 2 && lut[code as usize] {
                        candidates.push((x, y));
                    }
                }
            }
            // candidates come from the state before the sub-pass; the
            // simple test is repeated at deletion time
            for &(x, y) in &candidates {
                if lut[neighbourhood(&out, x, y) as usize] {
                    out.set(x, y, false);
                    changed = true;
                }
            }
        }
        if !changed {
            return out;
        }
    }
}

fn neighbourhood(mask: &BinaryMask, x: usize, y: usize) -> u8 {
    let mut code = 0u8;
    for (bit, &(dx, dy)) in N8.iter().enumerate() {
        if mask.at(Point::new(x as i32 + dx, y as i32 + dy)) == Some(true) {
            code |= 1 << bit;
        }
    }
    code
}

fn simple_lut() -> &'static [bool; 256] {
    static LUT: OnceLock<[bool; 256]> = OnceLock::new();
    LUT.get_or_init(|| {
        let mut lut = [false; 256];
        for (code, slot) in lut.iter_mut().enumerate() {
            *slot = is_simple(code as u8);
        }
        lut
    })
}

/// Simple-point test on an 8-neighbourhood bit code (bit k set means
/// neighbour `N8[k]` is foreground).
fn is_simple(code: u8) -> bool {
    let fg = |k: usize| code & (1 << k) != 0;
    let adjacent8 = |a: usize, b: usize| {
        let (ax, ay) = N8[a];
        let (bx, by) = N8[b];
        (ax - bx).abs() <= 1 && (ay - by).abs() <= 1
    };
    let adjacent4 = |a: usize, b: usize| {
        let (ax, ay) = N8[a];
        let (bx, by) = N8[b];
        (ax - bx).abs() + (ay - by).abs() == 1
    };

    let components = |want_fg: bool, adj: &dyn Fn(usize, usize) -> bool, seed_ok: &dyn Fn(usize) -> bool| {
        let mut seen = [false; 8];
        let mut count = 0;
        for s in 0..8 {
            if fg(s) != want_fg || seen[s] {
                continue;
            }
            let mut stack = vec![s];
            seen[s] = true;
            let mut touches = seed_ok(s);
            while let Some(a) = stack.pop() {
                for b in 0..8 {
                    if !seen[b] && fg(b) == want_fg && adj(a, b) {
                        seen[b] = true;
                        touches |= seed_ok(b);
                        stack.push(b);
                    }
                }
            }
            if touches {
                count += 1;
            }
        }
        count
    };

    let fg_components = components(true, &adjacent8, &|_| true);
    // Background components only count if 4-adjacent to the centre pixel,
    // i.e. contain an even-indexed (axis-aligned) neighbour.
    let bg_components = components(false, &adjacent4, &|k| k % 2 == 0);
    fg_components == 1 && bg_components == 1
}

/// 3x3 square dilation.
pub fn dilate(mask: &BinaryMask) -> BinaryMask {
    Grid::from_fn(mask.width(), mask.height(), |x, y| {
        mask.get(x, y) || N8.iter().any(|&(dx, dy)| mask.at(Point::new(x as i32 + dx, y as i32 + dy)) == Some(true))
    })
}
