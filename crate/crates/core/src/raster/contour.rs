//! Region/boundary/contour conversions.

use crate::error::{Error, Result};
use crate::raster::{BinaryMask, Polygon};

const ON_EDGE_EPS: f64 = 1e-9;

/// Inner boundary: mask pixels with at least one background 4-neighbour.
/// The frame counts as background.
pub fn mask_to_boundary(mask: &BinaryMask) -> BinaryMask {
    BinaryMask::from_fn(mask.width(), mask.height(), |x, y| {
        if !mask.get(x, y) {
            return false;
        }
        let (x, y) = (x as isize, y as isize);
        !(mask.get_padded(x - 1, y)
            && mask.get_padded(x + 1, y)
            && mask.get_padded(x, y - 1)
            && mask.get_padded(x, y + 1))
    })
}

/// Connected-component labelling. Returns per-pixel labels (0 = background,
/// components numbered from 1 in raster order of their first pixel) and the
/// component count.
pub fn connected_components(mask: &BinaryMask, eight_connected: bool) -> (Vec<u32>, usize) {
    let (w, h) = (mask.width(), mask.height());
    let mut labels = vec![0u32; w * h];
    let mut next = 0u32;
    let mut stack = Vec::new();
    let neighbours: &[(isize, isize)] = if eight_connected {
        &[(1, 0), (-1, 0), (0, 1), (0, -1), (1, 1), (1, -1), (-1, 1), (-1, -1)]
    } else {
        &[(1, 0), (-1, 0), (0, 1), (0, -1)]
    };
    for start in 0..w * h {
        if !mask.bits()[start] || labels[start] != 0 {
            continue;
        }
        next += 1;
        labels[start] = next;
        stack.push(start);
        while let Some(i) = stack.pop() {
            let (x, y) = ((i % w) as isize, (i / w) as isize);
            for &(dx, dy) in neighbours {
                if mask.get_padded(x + dx, y + dy) {
                    let j = (y + dy) as usize * w + (x + dx) as usize;
                    if labels[j] == 0 {
                        labels[j] = next;
                        stack.push(j);
                    }
                }
            }
        }
    }
    (labels, next as usize)
}

pub fn count_components(mask: &BinaryMask) -> usize {
    connected_components(mask, true).1
}

/// The largest 8-connected component (first in raster order on ties).
pub fn largest_component(mask: &BinaryMask) -> Option<BinaryMask> {
    let (labels, n) = connected_components(mask, true);
    if n == 0 {
        return None;
    }
    let mut sizes = vec![0usize; n + 1];
    for &l in &labels {
        sizes[l as usize] += 1;
    }
    let best = (1..=n).max_by(|&a, &b| sizes[a].cmp(&sizes[b]).then(b.cmp(&a)))?;
    let bits = labels.iter().map(|&l| l as usize == best).collect();
    BinaryMask::from_bits(mask.width(), mask.height(), bits).ok()
}

/// A traced border: vertices through pixel centres plus whether it bounds a hole.
#[derive(Clone, Debug, PartialEq)]
pub struct Contour {
    pub polygon: Polygon,
    pub is_hole: bool,
}

/// Clockwise neighbour directions (y grows downward), starting east.
const DIRS: [(isize, isize); 8] = [(1, 0), (1, 1), (0, 1), (-1, 1), (-1, 0), (-1, -1), (0, -1), (1, -1)];

fn dir_index(dx: isize, dy: isize) -> usize {
    DIRS.iter().position(|&d| d == (dx, dy)).expect("neighbour offset")
}

/// Border following over 8-connected foreground. Emits one outer contour per
/// component and one contour per hole; outer contours have positive
/// [`Polygon::signed_area`], holes negative.
pub fn trace_contours(mask: &BinaryMask) -> Vec<Contour> {
    let (w, h) = (mask.width(), mask.height());
    let pw = w + 2;
    let ph = h + 2;
    let mut img = vec![0i32; pw * ph];
    for y in 0..h {
        for x in 0..w {
            if mask.get(x, y) {
                img[(y + 1) * pw + x + 1] = 1;
            }
        }
    }
    let at = |x: isize, y: isize| y as usize * pw + x as usize;

    let mut contours = Vec::new();
    let mut nbd: i32 = 1;
    for i in 1..ph as isize - 1 {
        for j in 1..pw as isize - 1 {
            let here = img[at(j, i)];
            let (is_hole, start) = if here == 1 && img[at(j - 1, i)] == 0 {
                (false, (j - 1, i))
            } else if here >= 1 && img[at(j + 1, i)] == 0 {
                (true, (j + 1, i))
            } else {
                continue;
            };
            nbd += 1;

            // Clockwise search from `start` for the first foreground neighbour.
            let d0 = dir_index(start.0 - j, start.1 - i);
            let first = (0..8)
                .map(|k| DIRS[(d0 + k) % 8])
                .map(|(dx, dy)| (j + dx, i + dy))
                .find(|&(x, y)| img[at(x, y)] != 0);
            let Some(p1) = first else {
                img[at(j, i)] = -nbd;
                contours.push(trace_to_contour(vec![(j - 1, i - 1)], is_hole));
                continue;
            };

            let mut points = Vec::new();
            let mut prev = p1;
            let mut cur = (j, i);
            loop {
                // Counter-clockwise search around `cur`, starting just after `prev`.
                let dp = dir_index(prev.0 - cur.0, prev.1 - cur.1);
                let mut east_examined_zero = false;
                let mut next = prev;
                for k in 1..=8 {
                    let d = (dp + 8 - k) % 8;
                    let (x, y) = (cur.0 + DIRS[d].0, cur.1 + DIRS[d].1);
                    if img[at(x, y)] != 0 {
                        next = (x, y);
                        break;
                    }
                    if d == 0 {
                        east_examined_zero = true;
                    }
                }
                let c = at(cur.0, cur.1);
                if east_examined_zero {
                    img[c] = -nbd;
                } else if img[c] == 1 {
                    img[c] = nbd;
                }
                points.push((cur.0 - 1, cur.1 - 1));
                if next == (j, i) && cur == p1 {
                    break;
                }
                prev = cur;
                cur = next;
            }
            contours.push(trace_to_contour(points, is_hole));
        }
    }
    contours
}

fn trace_to_contour(points: Vec<(isize, isize)>, is_hole: bool) -> Contour {
    let mut distinct: Vec<(isize, isize)> = points.clone();
    distinct.sort_unstable();
    distinct.dedup();
    let verts: Vec<[f64; 2]> = if distinct.len() < 3 {
        // One- and two-pixel components have no area; outline their pixel
        // diamonds so the contour still rasterizes back onto them.
        let mut pts = Vec::new();
        for &(x, y) in &distinct {
            let (x, y) = (x as f64, y as f64);
            pts.extend([[x - 0.5, y], [x, y - 0.5], [x + 0.5, y], [x, y + 0.5]]);
        }
        convex_hull(pts)
    } else {
        points.iter().map(|&(x, y)| [x as f64, y as f64]).collect()
    };
    let mut polygon = Polygon::closed(verts).expect("traced contour has >= 3 vertices");
    let area = polygon.signed_area();
    if (is_hole && area > 0.0) || (!is_hole && area < 0.0) {
        polygon = polygon.reversed();
    }
    Contour { polygon, is_hole }
}

/// Monotone-chain hull, counter-clockwise in y-up terms (positive shoelace area).
fn convex_hull(mut pts: Vec<[f64; 2]>) -> Vec<[f64; 2]> {
    pts.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    pts.dedup();
    let cross = |o: [f64; 2], a: [f64; 2], b: [f64; 2]| (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0]);
    let mut lower: Vec<[f64; 2]> = Vec::new();
    for &p in &pts {
        while lower.len() >= 2 && cross(lower[lower.len() - 2], lower[lower.len() - 1], p) <= 0.0 {
            lower.pop();
        }
        lower.push(p);
    }
    let mut upper: Vec<[f64; 2]> = Vec::new();
    for &p in pts.iter().rev() {
        while upper.len() >= 2 && cross(upper[upper.len() - 2], upper[upper.len() - 1], p) <= 0.0 {
            upper.pop();
        }
        upper.push(p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    lower
}

/// One closed polygon per border: every 8-connected component yields its
/// outer contour, every hole a separately oriented (negative-area) contour.
pub fn mask_to_contours(mask: &BinaryMask) -> Vec<Polygon> {
    trace_contours(mask).into_iter().map(|c| c.polygon).collect()
}

/// Rasterizes a closed polygon: a pixel is set when its centre lies inside
/// by the even-odd rule or exactly on an edge.
pub fn polygon_to_mask(poly: &Polygon, width: usize, height: usize) -> Result<BinaryMask> {
    if !poly.is_closed() {
        return Err(Error::DegeneratePolygon("polygon is not closed".into()));
    }
    if poly.len() < 3 {
        return Err(Error::DegeneratePolygon("fewer than 3 vertices".into()));
    }
    let mut mask = even_odd_interior(poly, width, height);
    mark_edges(poly, &mut mask, true);
    Ok(mask)
}

/// Rebuilds a region from traced contours: outer contours are filled
/// (edges included), hole contours clear their strict interior.
pub fn contours_to_mask(contours: &[Polygon], width: usize, height: usize) -> Result<BinaryMask> {
    let mut mask = BinaryMask::new(width, height);
    for p in contours.iter().filter(|p| p.signed_area() >= 0.0) {
        mask = mask.or(&polygon_to_mask(p, width, height)?);
    }
    for p in contours.iter().filter(|p| p.signed_area() < 0.0) {
        let mut interior = even_odd_interior(p, width, height);
        mark_edges(p, &mut interior, false);
        mask = mask.and(&interior.complement());
    }
    Ok(mask)
}

fn even_odd_interior(poly: &Polygon, width: usize, height: usize) -> BinaryMask {
    let mut mask = BinaryMask::new(width, height);
    let mut xs: Vec<f64> = Vec::new();
    for y in 0..height {
        let yc = y as f64;
        xs.clear();
        for (a, b) in poly.edges() {
            if (a[1] <= yc) != (b[1] <= yc) {
                let t = (yc - a[1]) / (b[1] - a[1]);
                xs.push(a[0] + t * (b[0] - a[0]));
            }
        }
        xs.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
        for pair in xs.chunks_exact(2) {
            let lo = pair[0].ceil().max(0.0);
            let hi = pair[1];
            let mut x = lo;
            while x < hi && (x as usize) < width {
                // strictly inside: centre not equal to a crossing
                if x > pair[0] {
                    mask.set(x as usize, y, true);
                }
                x += 1.0;
            }
        }
    }
    mask
}

fn mark_edges(poly: &Polygon, mask: &mut BinaryMask, value: bool) {
    let (w, h) = (mask.width() as f64, mask.height() as f64);
    for (a, b) in poly.edges() {
        let (x0, x1) = (a[0].min(b[0]).ceil().max(0.0), a[0].max(b[0]).floor().min(w - 1.0));
        let (y0, y1) = (a[1].min(b[1]).ceil().max(0.0), a[1].max(b[1]).floor().min(h - 1.0));
        let len = ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt();
        let mut y = y0;
        while y <= y1 {
            let mut x = x0;
            while x <= x1 {
                let cross = (b[0] - a[0]) * (y - a[1]) - (b[1] - a[1]) * (x - a[0]);
                if cross.abs() <= ON_EDGE_EPS * len.max(1.0) {
                    mask.set(x as usize, y as usize, value);
                }
                x += 1.0;
            }
            y += 1.0;
        }
    }
}
