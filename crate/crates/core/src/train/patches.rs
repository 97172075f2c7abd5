use rand::Rng;

use crate::dataprep::Image;
use crate::error::{Error, Result};
use crate::train::TrainConfig;

/// Noisy/clean training patch with its noise target `noisy - clean`.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchPair {
    noisy: Image,
    clean: Image,
    noise: Image,
}

impl PatchPair {
    pub fn new(noisy: Image, clean: Image) -> Result<Self> {
        let noise = noisy.sub(&clean)?;
        Ok(PatchPair { noisy, clean, noise })
    }

    pub fn noisy(&self) -> &Image {
        &self.noisy
    }

    pub fn clean(&self) -> &Image {
        &self.clean
    }

    pub fn noise(&self) -> &Image {
        &self.noise
    }

    pub fn dims(&self) -> (usize, usize) {
        self.noisy.dims()
    }

    pub fn flip_horizontal(&self) -> PatchPair {
        PatchPair::new(self.noisy.flip_horizontal(), self.clean.flip_horizontal())
            .expect("flipping preserves dims")
    }
}

/// Patch origins along one axis: every `stride` from 0, plus one flush with
/// the far edge when the grid leaves it uncovered.
pub fn patch_origins(len: usize, patch: usize, stride: usize) -> Vec<usize> {
    if patch > len || stride == 0 {
        return Vec::new();
    }
    let mut out: Vec<usize> = (0..=len - patch).step_by(stride).collect();
    if out.last() != Some(&(len - patch)) {
        out.push(len - patch);
    }
    out
}

/// Cuts aligned patches from a noisy/clean pair on the stride grid, keeping
/// those whose clean patch has variance at least `variance_floor`.
pub fn extract_patches(noisy: &Image, clean: &Image, config: &TrainConfig) -> Result<Vec<PatchPair>> {
    noisy.same_dims(clean)?;
    let (h, w) = noisy.dims();
    let p = config.patch_size;
    if p > h || p > w {
        return Err(Error::Input(format!("patch size {p} exceeds {h}x{w} image")));
    }
    if config.patch_stride == 0 {
        return Err(Error::Config("patch_stride must be >= 1".into()));
    }
    let mut out = Vec::new();
    for &y in &patch_origins(h, p, config.patch_stride) {
        for &x in &patch_origins(w, p, config.patch_stride) {
            let c = clean.crop(y, x, p, p)?;
            if c.variance() >= config.variance_floor {
                out.push(PatchPair::new(noisy.crop(y, x, p, p)?, c)?);
            }
        }
    }
    Ok(out)
}

/// Horizontal flip with probability 1/2 (when enabled); the draw is taken
/// either way so the random stream does not depend on the flag.
pub fn augment<R: Rng + ?Sized>(pair: &PatchPair, config: &TrainConfig, rng: &mut R) -> PatchPair {
    let flip = rng.gen_bool(0.5);
    if flip && config.augment_hflip {
        pair.flip_horizontal()
    } else {
        pair.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn textured(h: usize, w: usize) -> Image {
        Image::from_fn(h, w, |y, x| ((y * 31 + x * 17) % 13) as f64 / 13.0)
    }

    #[test]
    fn grid_counts() {
        let img = textured(512, 512);
        let cfg = TrainConfig {
            patch_stride: 128,
            variance_floor: 0.0,
            ..Default::default()
        };
        assert_eq!(extract_patches(&img, &img, &cfg).unwrap().len(), 16);
        let one = textured(128, 128);
        assert_eq!(extract_patches(&one, &one, &TrainConfig::default()).unwrap().len(), 1);
        let flat = Image::filled(256, 256, 0.3);
        assert!(extract_patches(&flat, &flat, &TrainConfig::default()).unwrap().is_empty());
        assert!(extract_patches(&textured(100, 200), &textured(100, 200), &cfg).is_err());
    }

    #[test]
    fn origins_cover_far_edge() {
        assert_eq!(patch_origins(300, 128, 64), vec![0, 64, 128, 172]);
        assert_eq!(patch_origins(256, 128, 64), vec![0, 64, 128]);
        assert_eq!(patch_origins(128, 128, 64), vec![0]);
    }

    #[test]
    fn flip_keeps_noise_consistent() {
        let n = textured(8, 8);
        let c = n.map(|v| v * 0.5);
        let pair = PatchPair::new(n, c).unwrap();
        let f = pair.flip_horizontal();
        assert_eq!(f.flip_horizontal(), pair);
        for i in 0..64 {
            let (nv, cv, ev) = (f.noisy().data()[i], f.clean().data()[i], f.noise().data()[i]);
            assert!((ev + cv - nv).abs() < 1e-12);
        }
    }

    #[test]
    fn flip_frequency_is_half() {
        let pair = PatchPair::new(textured(4, 4), Image::filled(4, 4, 0.0)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let cfg = TrainConfig::default();
        let flips = (0..10_000)
            .filter(|_| augment(&pair, &cfg, &mut rng) != pair)
            .count();
        let freq = flips as f64 / 1e4;
        assert!((freq - 0.5).abs() <= 0.02, "{freq}");
    }

    proptest::proptest! {
        #[test]
        fn count_matches_closed_form(h in 8usize..80, w in 8usize..80, p in 3usize..8, s in 1usize..10) {
            let img = textured(h, w);
            let cfg = TrainConfig { patch_size: p, patch_stride: s, variance_floor: 0.0, ..Default::default() };
            let axis = |len: usize| (len - p) / s + 1 + usize::from((len - p) % s != 0);
            proptest::prop_assert_eq!(extract_patches(&img, &img, &cfg).unwrap().len(), axis(h) * axis(w));
        }
    }
}
