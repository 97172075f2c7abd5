//! Synthetic multiplicative speckle and layered phantoms.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};

use crate::dataprep::Image;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpeckleConfig {
    /// Gamma shape; the multiplier has mean 1 and variance `1 / looks`.
    pub looks: f64,
    pub seed: u64,
}

impl SpeckleConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.looks > 0.0 && self.looks.is_finite()) {
            return Err(Error::Config(format!("looks must be > 0, got {}", self.looks)));
        }
        Ok(())
    }
}

/// `clean * s` per pixel with `s ~ Gamma(looks, 1/looks)`, before clamping.
pub fn speckle_unclamped(clean: &Image, config: &SpeckleConfig) -> Result<Image> {
    config.validate()?;
    let gamma = Gamma::new(config.looks, 1.0 / config.looks)
        .map_err(|e| Error::Config(format!("speckle distribution: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    Ok(clean.map(|v| v * gamma.sample(&mut rng)))
}

/// Multiplicative unit-mean gamma speckle, clamped to `[0, 1]`.
pub fn add_speckle(clean: &Image, config: &SpeckleConfig) -> Result<Image> {
    Ok(speckle_unclamped(clean, config)?.clamped())
}

/// A retina-like test image: a smooth background gradient, a stack of wavy
/// horizontal layers of different brightness, and a few soft ellipses.
/// Intensities stay within `[0.05, 0.9]`.
pub fn layered_phantom(height: usize, width: usize, seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (h, w) = (height as f64, width as f64);
    let base = rng.gen_range(0.08..0.18);
    let tilt = rng.gen_range(-0.05..0.05);

    let n_layers = rng.gen_range(3..6);
    let top = rng.gen_range(0.15..0.35) * h;
    let mut layers = Vec::with_capacity(n_layers);
    let mut edge = top;
    for _ in 0..n_layers {
        let thickness = rng.gen_range(0.05..0.14) * h;
        layers.push((
            edge,
            thickness,
            rng.gen_range(0.25..0.8),
            rng.gen_range(0.0..0.08) * h,
            rng.gen_range(0.5..2.0),
            rng.gen_range(0.0..std::f64::consts::TAU),
        ));
        edge += thickness;
    }

    let n_ellipses = rng.gen_range(1..4);
    let ellipses: Vec<_> = (0..n_ellipses)
        .map(|_| {
            (
                rng.gen_range(0.1..0.9) * h,
                rng.gen_range(0.1..0.9) * w,
                rng.gen_range(0.04..0.15) * h,
                rng.gen_range(0.06..0.2) * w,
                rng.gen_range(-0.3..0.3),
            )
        })
        .collect();

    // Soft step of width ~1.5 px so edges are smooth but sharp.
    let step = |d: f64| 0.5 * (1.0 + (d / 1.5).tanh());
    Image::from_fn(height, width, |y, x| {
        let (yf, xf) = (y as f64, x as f64);
        let mut v = base + tilt * (yf / h) + 0.03 * (xf / w);
        for &(edge, thick, level, amp, freq, phase) in &layers {
            let shift = amp * (std::f64::consts::TAU * freq * xf / w + phase).sin();
            let inside = step(yf - edge - shift) * step(edge + shift + thick - yf);
            v += (level - v) * inside;
        }
        for &(cy, cx, ry, rx, delta) in &ellipses {
            let r = (((yf - cy) / ry).powi(2) + ((xf - cx) / rx).powi(2)).sqrt();
            v += delta * step((1.0 - r) * ry.min(rx));
        }
        v.clamp(0.05, 0.9)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn huge_looks_is_nearly_clean() {
        let clean = layered_phantom(32, 32, 1);
        let noisy = add_speckle(&clean, &SpeckleConfig { looks: 1e6, seed: 3 }).unwrap();
        for (a, b) in clean.data().iter().zip(noisy.data()) {
            assert!((a - b).abs() < 0.01);
        }
    }

    #[test]
    fn unit_mean_and_variance() {
        let c = 0.5;
        let clean = Image::filled(1000, 1000, c);
        let s = speckle_unclamped(&clean, &SpeckleConfig { looks: 4.0, seed: 11 }).unwrap();
        let mean = s.mean();
        assert!((mean - c).abs() <= 0.002, "{mean}");
        let var = s.variance();
        let expected = c * c / 4.0;
        assert!((var - expected).abs() <= 0.05 * expected, "{var} vs {expected}");
    }

    #[test]
    fn seeded_and_bounded() {
        let clean = layered_phantom(24, 40, 5);
        let cfg = SpeckleConfig { looks: 4.0, seed: 7 };
        let a = add_speckle(&clean, &cfg).unwrap();
        assert_eq!(a, add_speckle(&clean, &cfg).unwrap());
        let (lo, hi) = a.min_max();
        assert!(lo >= 0.0 && hi <= 1.0);
        assert!(add_speckle(&clean, &SpeckleConfig { looks: 0.0, seed: 1 }).is_err());
    }

    #[test]
    fn phantom_range_and_structure() {
        let p = layered_phantom(128, 128, 9);
        let (lo, hi) = p.min_max();
        assert!(lo >= 0.05 && hi <= 0.9);
        assert!(p.variance() > 1e-3);
        assert_eq!(p, layered_phantom(128, 128, 9));
        assert_ne!(p, layered_phantom(128, 128, 10));
    }
}
