//! Exact Euclidean distance transform (separable lower-envelope method).

use crate::error::{Error, Result};
use crate::raster::{BinaryMask, ScalarField};

/// Euclidean distance from every pixel to the nearest `true` pixel.
pub fn distance_transform(mask: &BinaryMask) -> Result<ScalarField> {
    let sq = squared_distance_transform(mask)?;
    let (w, h) = (mask.width(), mask.height());
    let values = sq.into_iter().map(f64::sqrt).collect();
    ScalarField::new(w, h, 1, values)
}

/// Squared Euclidean distances, row-major.
pub fn squared_distance_transform(mask: &BinaryMask) -> Result<Vec<f64>> {
    if !mask.any() {
        return Err(Error::NoForeground);
    }
    let (w, h) = (mask.width(), mask.height());
    let mut grid: Vec<f64> = mask
        .bits()
        .iter()
        .map(|&b| if b { 0.0 } else { f64::INFINITY })
        .collect();

    let n = w.max(h);
    let mut f = vec![0.0; n];
    let mut d = vec![0.0; n];
    let mut v = vec![0usize; n];
    let mut z = vec![0.0; n + 1];

    for x in 0..w {
        for y in 0..h {
            f[y] = grid[y * w + x];
        }
        lower_envelope(&f[..h], &mut d[..h], &mut v, &mut z);
        for y in 0..h {
            grid[y * w + x] = d[y];
        }
    }
    for y in 0..h {
        f[..w].copy_from_slice(&grid[y * w..(y + 1) * w]);
        lower_envelope(&f[..w], &mut d[..w], &mut v, &mut z);
        grid[y * w..(y + 1) * w].copy_from_slice(&d[..w]);
    }
    Ok(grid)
}

#[inline]
fn intersection(f: &[f64], q: usize, p: usize) -> f64 {
    let (qf, pf) = (q as f64, p as f64);
    ((f[q] + qf * qf) - (f[p] + pf * pf)) / (2.0 * (qf - pf))
}

/// 1-D squared distance transform of sampled function `f`, written to `d`.
fn lower_envelope(f: &[f64], d: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let n = f.len();
    // Parabolas rooted at infinite samples never win; skip them entirely.
    let mut k: isize = -1;
    for q in 0..n {
        if !f[q].is_finite() {
            continue;
        }
        if k < 0 {
            k = 0;
            v[0] = q;
            z[0] = f64::NEG_INFINITY;
            z[1] = f64::INFINITY;
            continue;
        }
        let mut s = intersection(f, q, v[k as usize]);
        while s <= z[k as usize] {
            k -= 1;
            s = intersection(f, q, v[k as usize]);
        }
        k += 1;
        v[k as usize] = q;
        z[k as usize] = s;
        z[k as usize + 1] = f64::INFINITY;
    }
    if k < 0 {
        d.iter_mut().for_each(|x| *x = f64::INFINITY);
        return;
    }
    let mut j = 0usize;
    for (q, out) in d.iter_mut().enumerate().take(n) {
        let qf = q as f64;
        while z[j + 1] < qf {
            j += 1;
        }
        let p = v[j];
        let diff = qf - p as f64;
        *out = diff * diff + f[p];
    }
}
