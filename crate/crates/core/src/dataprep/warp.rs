use crate::dataprep::Image;
use crate::error::{Error, Result};

/// Minimum `|det|` of the linear part for a transform to count as invertible.
pub const MIN_DET: f64 = 1e-6;

/// 2x3 affine map from output pixel coordinates `(x, y)` to input
/// coordinates: `x_in = a*x + b*y + tx`, `y_in = c*x + d*y + ty`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineTransform {
    pub a: f64,
    pub b: f64,
    pub tx: f64,
    pub c: f64,
    pub d: f64,
    pub ty: f64,
}

impl AffineTransform {
    pub const IDENTITY: AffineTransform = AffineTransform {
        a: 1.0,
        b: 0.0,
        tx: 0.0,
        c: 0.0,
        d: 1.0,
        ty: 0.0,
    };

    pub fn translation(tx: f64, ty: f64) -> Self {
        AffineTransform {
            tx,
            ty,
            ..Self::IDENTITY
        }
    }

    /// Rotation by `angle` radians about `(cx, cy)`.
    pub fn rotation_about(angle: f64, cx: f64, cy: f64) -> Self {
        let (s, c) = angle.sin_cos();
        AffineTransform {
            a: c,
            b: -s,
            tx: cx - c * cx + s * cy,
            c: s,
            d: c,
            ty: cy - s * cx - c * cy,
        }
    }

    pub fn as_array(&self) -> [f64; 6] {
        [self.a, self.b, self.tx, self.c, self.d, self.ty]
    }

    pub fn det(&self) -> f64 {
        self.a * self.d - self.b * self.c
    }

    pub fn is_invertible(&self) -> bool {
        self.det().abs() > MIN_DET
    }

    pub fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        (
            self.a * x + self.b * y + self.tx,
            self.c * x + self.d * y + self.ty,
        )
    }

    pub fn inverse(&self) -> Result<Self> {
        let det = self.det();
        if det.abs() <= MIN_DET {
            return Err(Error::Degenerate(format!("singular affine transform (det {det})")));
        }
        let (a, b, c, d) = (self.d / det, -self.b / det, -self.c / det, self.a / det);
        Ok(AffineTransform {
            a,
            b,
            tx: -(a * self.tx + b * self.ty),
            c,
            d,
            ty: -(c * self.tx + d * self.ty),
        })
    }

    /// `self` applied after `inner`: `p -> self(inner(p))`.
    pub fn compose(&self, inner: &AffineTransform) -> Self {
        AffineTransform {
            a: self.a * inner.a + self.b * inner.c,
            b: self.a * inner.b + self.b * inner.d,
            tx: self.a * inner.tx + self.b * inner.ty + self.tx,
            c: self.c * inner.a + self.d * inner.c,
            d: self.c * inner.b + self.d * inner.d,
            ty: self.c * inner.tx + self.d * inner.ty + self.ty,
        }
    }

    /// Frobenius distance between the linear parts.
    pub fn linear_distance(&self, other: &AffineTransform) -> f64 {
        ((self.a - other.a).powi(2)
            + (self.b - other.b).powi(2)
            + (self.c - other.c).powi(2)
            + (self.d - other.d).powi(2))
        .sqrt()
    }
}

/// Bilinear sample at `(x, y)`; neighbours outside the image read as 0.
pub fn sample_bilinear(img: &Image, x: f64, y: f64) -> f64 {
    let (x0, y0) = (x.floor(), y.floor());
    let (fx, fy) = (x - x0, y - y0);
    let (xi, yi) = (x0 as isize, y0 as isize);
    let (h, w) = (img.height() as isize, img.width() as isize);
    let px = |yy: isize, xx: isize| {
        if yy < 0 || xx < 0 || yy >= h || xx >= w {
            0.0
        } else {
            img.get(yy as usize, xx as usize)
        }
    };
    let top = if fx == 0.0 {
        px(yi, xi)
    } else {
        px(yi, xi) * (1.0 - fx) + px(yi, xi + 1) * fx
    };
    if fy == 0.0 {
        return top;
    }
    let bottom = if fx == 0.0 {
        px(yi + 1, xi)
    } else {
        px(yi + 1, xi) * (1.0 - fx) + px(yi + 1, xi + 1) * fx
    };
    top * (1.0 - fy) + bottom * fy
}

/// Resamples `img` through `t` (output coordinates to input coordinates)
/// with bilinear interpolation. Output dims equal input dims.
pub fn warp_affine(img: &Image, t: &AffineTransform) -> Result<Image> {
    if !t.is_invertible() {
        return Err(Error::Degenerate(format!(
            "singular affine transform (det {})",
            t.det()
        )));
    }
    Ok(Image::from_fn(img.height(), img.width(), |y, x| {
        let (sx, sy) = t.apply(x as f64, y as f64);
        sample_bilinear(img, sx, sy)
    }))
}

/// [`warp_affine`] plus a mask of the output pixels whose source position
/// lies inside the input image.
pub fn warp_affine_covered(img: &Image, t: &AffineTransform) -> Result<(Image, Vec<bool>)> {
    let warped = warp_affine(img, t)?;
    let (h, w) = img.dims();
    let (ymax, xmax) = ((h - 1) as f64 + 1e-9, (w - 1) as f64 + 1e-9);
    let covered = (0..h * w)
        .map(|i| {
            let (sx, sy) = t.apply((i % w) as f64, (i / w) as f64);
            sx >= -1e-9 && sy >= -1e-9 && sx <= xmax && sy <= ymax
        })
        .collect();
    Ok((warped, covered))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn smooth(h: usize, w: usize) -> Image {
        Image::from_fn(h, w, |y, x| {
            let (yf, xf) = (y as f64, x as f64);
            0.5 + 0.2 * (xf * 0.21).sin() * (yf * 0.17).cos() + 0.1 * ((xf + yf) * 0.05).sin()
        })
    }

    #[test]
    fn coverage_follows_the_shift() {
        let img = smooth(6, 8);
        let (_, covered) = warp_affine_covered(&img, &AffineTransform::translation(1.5, 0.0)).unwrap();
        for (i, c) in covered.iter().enumerate() {
            assert_eq!(*c, i % 8 < 6, "pixel {i}");
        }
        let (same, all) = warp_affine_covered(&img, &AffineTransform::IDENTITY).unwrap();
        assert_eq!(same, img);
        assert!(all.iter().all(|&c| c));
    }

    #[test]
    fn identity_is_exact() {
        let img = smooth(20, 17);
        let out = warp_affine(&img, &AffineTransform::IDENTITY).unwrap();
        for (a, b) in img.data().iter().zip(out.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn integer_translation_shifts_interior() {
        let img = smooth(16, 20);
        let out = warp_affine(&img, &AffineTransform::translation(3.0, 0.0)).unwrap();
        for y in 0..16 {
            for x in 0..17 {
                assert_eq!(out.get(y, x), img.get(y, x + 3));
            }
            for x in 17..20 {
                assert_eq!(out.get(y, x), 0.0);
            }
        }
    }

    #[test]
    fn warp_then_inverse_recovers_interior() {
        let img = Image::from_fn(48, 48, |y, x| {
            0.5 + 0.2 * (x as f64 * 0.08).sin() * (y as f64 * 0.07).cos()
        });
        let t = AffineTransform::rotation_about(0.05, 23.5, 23.5)
            .compose(&AffineTransform::translation(0.7, -1.3));
        let there = warp_affine(&img, &t).unwrap();
        let back = warp_affine(&there, &t.inverse().unwrap()).unwrap();
        for y in 8..40 {
            for x in 8..40 {
                assert!((back.get(y, x) - img.get(y, x)).abs() < 1e-3, "({y},{x})");
            }
        }
    }

    #[test]
    fn singular_is_rejected() {
        let t = AffineTransform {
            d: 0.0,
            ..AffineTransform::IDENTITY
        };
        assert!(matches!(
            warp_affine(&Image::filled(3, 3, 0.5), &t),
            Err(Error::Degenerate(_))
        ));
        assert!(t.inverse().is_err());
    }

    #[test]
    fn inverse_composes_to_identity() {
        let t = AffineTransform {
            a: 1.1,
            b: 0.2,
            tx: 3.0,
            c: -0.1,
            d: 0.9,
            ty: -2.0,
        };
        let id = t.compose(&t.inverse().unwrap());
        for (u, v) in id.as_array().iter().zip(AffineTransform::IDENTITY.as_array()) {
            assert!((u - v).abs() < 1e-12);
        }
    }

    proptest::proptest! {
        #[test]
        fn linear_in_intensity(alpha in -2.0f64..2.0, beta in -2.0f64..2.0, tx in -3.0f64..3.0, ty in -3.0f64..3.0) {
            let f = smooth(10, 12);
            let g = Image::from_fn(10, 12, |y, x| ((y * 7 + x * 3) % 5) as f64 * 0.2);
            let t = AffineTransform::translation(tx, ty);
            let mix = Image::from_fn(10, 12, |y, x| alpha * f.get(y, x) + beta * g.get(y, x));
            let lhs = warp_affine(&mix, &t).unwrap();
            let (wf, wg) = (warp_affine(&f, &t).unwrap(), warp_affine(&g, &t).unwrap());
            for i in 0..lhs.len() {
                let rhs = alpha * wf.data()[i] + beta * wg.data()[i];
                proptest::prop_assert!((lhs.data()[i] - rhs).abs() < 1e-12);
            }
        }
    }
}
