//! Intensity-based affine registration by mean-squared-error minimization.
//!
//! Coarse-to-fine over a factor-2 pyramid. At each level the six affine
//! parameters are expressed about the image center and scaled so that a unit
//! change moves pixels by roughly one pixel; gradient descent then runs on
//! central-difference gradients with a backtracking step. The objective is
//! the mean squared difference over pixels whose warped position falls
//! inside the moving image.

use crate::dataprep::warp::AffineTransform;
use crate::dataprep::Image;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegistrationConfig {
    pub levels: usize,
    pub max_iterations: usize,
    /// Stop when the parameter step (in scaled units) falls below this.
    pub step_tolerance: f64,
}

impl Default for RegistrationConfig {
    fn default() -> Self {
        RegistrationConfig {
            levels: 3,
            max_iterations: 200,
            step_tolerance: 1e-5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Registration {
    /// Maps fixed-image coordinates to moving-image coordinates, so
    /// `warp_affine(moving, transform)` aligns `moving` onto `fixed`.
    pub transform: AffineTransform,
    pub mse: f64,
}

/// Smallest pyramid level side; coarser levels are skipped.
const MIN_LEVEL_SIDE: usize = 8;
/// Central-difference step in scaled parameter units.
const FD_STEP: f64 = 1e-3;
/// Fraction of pixels that must overlap for a candidate to be scored.
const MIN_OVERLAP: f64 = 0.25;

/// Affine parameters about the image center: with `u = x - cx`, `v = y - cy`,
/// the input point is `(cx + a*u + b*v + tx, cy + c*u + d*v + ty)`.
#[derive(Debug, Clone, Copy)]
struct Centered {
    a: f64,
    b: f64,
    tx: f64,
    c: f64,
    d: f64,
    ty: f64,
}

impl Centered {
    const IDENTITY: Centered = Centered {
        a: 1.0,
        b: 0.0,
        tx: 0.0,
        c: 0.0,
        d: 1.0,
        ty: 0.0,
    };

    fn to_scaled(self, r: f64) -> [f64; 6] {
        [
            (self.a - 1.0) * r,
            self.b * r,
            self.tx,
            self.c * r,
            (self.d - 1.0) * r,
            self.ty,
        ]
    }

    fn from_scaled(q: &[f64; 6], r: f64) -> Self {
        Centered {
            a: 1.0 + q[0] / r,
            b: q[1] / r,
            tx: q[2],
            c: q[3] / r,
            d: 1.0 + q[4] / r,
            ty: q[5],
        }
    }

    fn to_affine(self, cx: f64, cy: f64) -> AffineTransform {
        AffineTransform {
            a: self.a,
            b: self.b,
            tx: cx + self.tx - self.a * cx - self.b * cy,
            c: self.c,
            d: self.d,
            ty: cy + self.ty - self.c * cx - self.d * cy,
        }
    }
}

fn center(img: &Image) -> (f64, f64) {
    ((img.width() as f64 - 1.0) / 2.0, (img.height() as f64 - 1.0) / 2.0)
}

/// 2x2 box-average downsampling (a trailing odd row/column is dropped).
pub fn downsample2(img: &Image) -> Image {
    let (h, w) = (img.height() / 2, img.width() / 2);
    Image::from_fn(h.max(1), w.max(1), |y, x| {
        let (y0, x0) = (2 * y, 2 * x);
        let (y1, x1) = ((y0 + 1).min(img.height() - 1), (x0 + 1).min(img.width() - 1));
        0.25 * (img.get(y0, x0) + img.get(y0, x1) + img.get(y1, x0) + img.get(y1, x1))
    })
}

/// Mean squared difference between `fixed` and `moving` warped through `t`,
/// over pixels whose warped position lies inside `moving`.
fn overlap_mse(moving: &Image, fixed: &Image, t: &AffineTransform) -> f64 {
    let (h, w) = (moving.height(), moving.width());
    let (xmax, ymax) = (w as f64 - 1.0, h as f64 - 1.0);
    let mut sum = 0.0;
    let mut count = 0usize;
    for y in 0..fixed.height() {
        let yf = y as f64;
        let row = fixed.row(y);
        let (mut sx, mut sy) = t.apply(0.0, yf);
        for &fv in row {
            if sx >= 0.0 && sy >= 0.0 && sx <= xmax && sy <= ymax {
                let (x0, y0) = (sx.floor(), sy.floor());
                let (fx, fy) = (sx - x0, sy - y0);
                let (xi, yi) = (x0 as usize, y0 as usize);
                let (xj, yj) = ((xi + 1).min(w - 1), (yi + 1).min(h - 1));
                let top = moving.get(yi, xi) * (1.0 - fx) + moving.get(yi, xj) * fx;
                let bot = moving.get(yj, xi) * (1.0 - fx) + moving.get(yj, xj) * fx;
                let d = top * (1.0 - fy) + bot * fy - fv;
                sum += d * d;
                count += 1;
            }
            sx += t.a;
            sy += t.c;
        }
    }
    if (count as f64) < MIN_OVERLAP * fixed.len() as f64 {
        f64::INFINITY
    } else {
        sum / count as f64
    }
}

struct Level<'a> {
    moving: &'a Image,
    fixed: &'a Image,
    cx: f64,
    cy: f64,
    r: f64,
}

impl Level<'_> {
    fn cost(&self, q: &[f64; 6]) -> f64 {
        let t = Centered::from_scaled(q, self.r).to_affine(self.cx, self.cy);
        if !t.is_invertible() {
            return f64::INFINITY;
        }
        overlap_mse(self.moving, self.fixed, &t)
    }

    fn gradient(&self, q: &[f64; 6]) -> [f64; 6] {
        let mut g = [0.0; 6];
        let mut p = *q;
        for i in 0..6 {
            p[i] = q[i] + FD_STEP;
            let plus = self.cost(&p);
            p[i] = q[i] - FD_STEP;
            let minus = self.cost(&p);
            p[i] = q[i];
            g[i] = if plus.is_finite() && minus.is_finite() {
                (plus - minus) / (2.0 * FD_STEP)
            } else {
                0.0
            };
        }
        g
    }

    /// Gradient descent with backtracking; returns the final parameters.
    fn optimize(&self, start: [f64; 6], config: &RegistrationConfig) -> [f64; 6] {
        let mut q = start;
        let mut cost = self.cost(&q);
        let mut step = 1.0;
        for _ in 0..config.max_iterations {
            let g = self.gradient(&q);
            let gnorm2: f64 = g.iter().map(|v| v * v).sum();
            if gnorm2 == 0.0 || !cost.is_finite() {
                break;
            }
            // Normalized direction so `step` is the parameter displacement.
            let gnorm = gnorm2.sqrt();
            let mut accepted = None;
            let mut trial_step = step;
            while trial_step >= config.step_tolerance * 1e-3 {
                let mut cand = q;
                for i in 0..6 {
                    cand[i] -= trial_step * g[i] / gnorm;
                }
                let c = self.cost(&cand);
                if c < cost - 1e-4 * trial_step * gnorm {
                    accepted = Some((cand, c));
                    break;
                }
                trial_step *= 0.5;
            }
            match accepted {
                Some((cand, c)) => {
                    q = cand;
                    cost = c;
                    if trial_step < config.step_tolerance {
                        break;
                    }
                    step = (trial_step * 2.0).min(4.0);
                }
                None => break,
            }
        }
        q
    }
}

/// Finds the affine transform aligning `moving` onto `fixed`.
pub fn register_affine(moving: &Image, fixed: &Image) -> Result<Registration> {
    register_affine_with(moving, fixed, &RegistrationConfig::default())
}

pub fn register_affine_with(
    moving: &Image,
    fixed: &Image,
    config: &RegistrationConfig,
) -> Result<Registration> {
    moving.same_dims(fixed)?;
    for (name, img) in [("moving", moving), ("fixed", fixed)] {
        let (lo, hi) = img.min_max();
        if hi - lo <= f64::EPSILON * hi.abs().max(1.0) {
            return Err(Error::Degenerate(format!(
                "{name} image is constant; registration gradient vanishes"
            )));
        }
    }
    if config.levels == 0 {
        return Err(Error::Config("registration needs at least one level".into()));
    }

    let mut pyramid = vec![(moving.clone(), fixed.clone())];
    while pyramid.len() < config.levels {
        let (m, f) = pyramid.last().expect("non-empty pyramid");
        if m.height() / 2 < MIN_LEVEL_SIDE || m.width() / 2 < MIN_LEVEL_SIDE {
            break;
        }
        let next = (downsample2(m), downsample2(f));
        pyramid.push(next);
    }

    let mut params = Centered::IDENTITY;
    for (i, (m, f)) in pyramid.iter().enumerate().rev() {
        let (cx, cy) = center(f);
        let level = Level {
            moving: m,
            fixed: f,
            cx,
            cy,
            r: (f.height().max(f.width()) as f64 / 2.0).max(1.0),
        };
        let q = level.optimize(params.to_scaled(level.r), config);
        params = Centered::from_scaled(&q, level.r);
        if i > 0 {
            // Translations double going one level finer; the linear part is
            // scale-free.
            params.tx *= 2.0;
            params.ty *= 2.0;
        }
    }

    let (cx, cy) = center(fixed);
    let transform = params.to_affine(cx, cy);
    Ok(Registration {
        transform,
        mse: overlap_mse(moving, fixed, &transform),
    })
}
