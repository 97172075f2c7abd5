//! Classical denoising baselines.

use rayon::prelude::*;

use crate::dataprep::Image;
use crate::error::{Error, Result};

/// Median over a `window x window` neighbourhood with edge replication.
pub fn median_filter(img: &Image, window: usize) -> Result<Image> {
    if window == 0 || window % 2 == 0 {
        return Err(Error::Input(format!("median window must be odd, got {window}")));
    }
    let r = (window / 2) as isize;
    let (h, w) = img.dims();
    let mid = window * window / 2;
    let data: Vec<f64> = (0..h)
        .into_par_iter()
        .flat_map_iter(|y| {
            let mut buf = Vec::with_capacity(window * window);
            (0..w)
                .map(|x| {
                    buf.clear();
                    for dy in -r..=r {
                        for dx in -r..=r {
                            buf.push(img.get_clamped(y as isize + dy, x as isize + dx));
                        }
                    }
                    *buf.select_nth_unstable_by(mid, f64::total_cmp).1
                })
                .collect::<Vec<_>>()
        })
        .collect();
    Image::new(h, w, data)
}

/// Replicate-padded copy with `pad` pixels on every side.
fn pad_replicate(img: &Image, pad: usize) -> (Vec<f64>, usize) {
    let pw = img.width() + 2 * pad;
    let ph = img.height() + 2 * pad;
    let p = pad as isize;
    let mut out = Vec::with_capacity(ph * pw);
    for y in 0..ph as isize {
        for x in 0..pw as isize {
            out.push(img.get_clamped(y - p, x - p));
        }
    }
    (out, pw)
}

/// Non-local means. Weights are `exp(-d / h^2)` with `d` the mean squared
/// difference between the patches around `p` and `q`; the center pixel gets
/// the largest weight among its neighbours.
pub fn nlm_filter(img: &Image, patch_radius: usize, search_radius: usize, h: f64) -> Result<Image> {
    if patch_radius == 0 || search_radius == 0 {
        return Err(Error::Input("NLM radii must be >= 1".into()));
    }
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::Input(format!("NLM strength must be > 0, got {h}")));
    }
    let pad = patch_radius + search_radius;
    let (padded, pw) = pad_replicate(img, pad);
    let (ih, iw) = img.dims();
    let (pr, sr) = (patch_radius as isize, search_radius as isize);
    let patch_len = ((2 * patch_radius + 1) * (2 * patch_radius + 1)) as f64;
    let inv_h2 = 1.0 / (h * h);
    let at = |y: isize, x: isize| padded[y as usize * pw + x as usize];

    let data: Vec<f64> = (0..ih)
        .into_par_iter()
        .flat_map_iter(|y| {
            (0..iw)
                .map(|x| {
                    let (py, px) = ((y + pad) as isize, (x + pad) as isize);
                    let center = at(py, px);
                    // Weighted offsets from the center, so flat regions are
                    // reproduced exactly.
                    let (mut wsum, mut acc, mut wmax) = (0.0, 0.0, 0.0f64);
                    for qy in py - sr..=py + sr {
                        for qx in px - sr..=px + sr {
                            if qy == py && qx == px {
                                continue;
                            }
                            let mut d = 0.0;
                            for oy in -pr..=pr {
                                for ox in -pr..=pr {
                                    let diff = at(py + oy, px + ox) - at(qy + oy, qx + ox);
                                    d += diff * diff;
                                }
                            }
                            let wq = (-(d / patch_len) * inv_h2).exp();
                            wsum += wq;
                            acc += wq * (at(qy, qx) - center);
                            wmax = wmax.max(wq);
                        }
                    }
                    wsum += wmax;
                    if wsum > 0.0 {
                        center + acc / wsum
                    } else {
                        center
                    }
                })
                .collect::<Vec<_>>()
        })
        .collect();
    Image::new(ih, iw, data)
}
