use crate::dataprep::Image;
use crate::error::{Error, Result};

/// Binary region of interest; metrics only count pixels where `keep` is set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RoiMask {
    height: usize,
    width: usize,
    keep: Vec<bool>,
}

impl RoiMask {
    pub fn new(height: usize, width: usize, keep: Vec<bool>) -> Result<Self> {
        if keep.len() != height * width {
            return Err(Error::shape(&[keep.len()], &[height, width], "ROI mask length"));
        }
        if !keep.iter().any(|&k| k) {
            return Err(Error::Input("ROI mask selects no pixels".into()));
        }
        Ok(RoiMask {
            height,
            width,
            keep,
        })
    }

    /// Rectangle `[y, y+h) x [x, x+w)` inside a `height x width` image.
    pub fn rect(height: usize, width: usize, y: usize, x: usize, h: usize, w: usize) -> Result<Self> {
        RoiMask::new(
            height,
            width,
            (0..height * width)
                .map(|i| {
                    let (r, c) = (i / width, i % width);
                    r >= y && r < y + h && c >= x && c < x + w
                })
                .collect(),
        )
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn contains(&self, y: usize, x: usize) -> bool {
        self.keep[y * self.width + x]
    }

    fn check(&self, img: &Image) -> Result<()> {
        if self.dims() != img.dims() {
            return Err(Error::shape(
                &[self.height, self.width],
                &[img.height(), img.width()],
                "ROI mask vs image",
            ));
        }
        Ok(())
    }
}

/// PSNR result: zero mean squared error has no finite dB value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Psnr {
    Db(f64),
    Identical,
}

impl Psnr {
    pub fn db(self) -> Option<f64> {
        match self {
            Psnr::Db(v) => Some(v),
            Psnr::Identical => None,
        }
    }
}

impl std::fmt::Display for Psnr {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Psnr::Db(v) => write!(f, "{v:.4}"),
            Psnr::Identical => f.write_str("identical"),
        }
    }
}

pub fn mse(test: &Image, reference: &Image, roi: Option<&RoiMask>) -> Result<f64> {
    test.same_dims(reference)?;
    let (mut sum, mut count) = (0.0, 0usize);
    match roi {
        None => {
            for (a, b) in test.data().iter().zip(reference.data()) {
                sum += (a - b) * (a - b);
            }
            count = test.len();
        }
        Some(mask) => {
            mask.check(test)?;
            for ((a, b), &k) in test.data().iter().zip(reference.data()).zip(&mask.keep) {
                if k {
                    sum += (a - b) * (a - b);
                    count += 1;
                }
            }
        }
    }
    Ok(sum / count as f64)
}

/// `10 log10(peak^2 / MSE)`.
pub fn psnr(test: &Image, reference: &Image, peak: f64) -> Result<Psnr> {
    psnr_roi(test, reference, peak, None)
}

pub fn psnr_roi(test: &Image, reference: &Image, peak: f64, roi: Option<&RoiMask>) -> Result<Psnr> {
    if !(peak > 0.0 && peak.is_finite()) {
        return Err(Error::Input(format!("PSNR peak must be > 0, got {peak}")));
    }
    let e = mse(test, reference, roi)?;
    Ok(if e == 0.0 {
        Psnr::Identical
    } else {
        Psnr::Db(10.0 * (peak * peak / e).log10())
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SsimConfig {
    pub k1: f64,
    pub k2: f64,
    pub dynamic_range: f64,
    /// Odd side length of the Gaussian window.
    pub window: usize,
    pub sigma: f64,
}

impl Default for SsimConfig {
    fn default() -> Self {
        SsimConfig {
            k1: 0.01,
            k2: 0.03,
            dynamic_range: 1.0,
            window: 11,
            sigma: 1.5,
        }
    }
}

impl SsimConfig {
    pub fn c1(&self) -> f64 {
        (self.k1 * self.dynamic_range).powi(2)
    }

    pub fn c2(&self) -> f64 {
        (self.k2 * self.dynamic_range).powi(2)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.c1() > 0.0 && self.c2() > 0.0) {
            return Err(Error::Config("SSIM constants C1, C2 must be > 0".into()));
        }
        if self.window % 2 == 0 || !(self.sigma > 0.0) {
            return Err(Error::Config(format!(
                "SSIM window must be odd with sigma > 0 (got {}, {})",
                self.window, self.sigma
            )));
        }
        Ok(())
    }

    /// Normalized 1-D Gaussian taps; the 2-D window is their outer product.
    pub fn taps(&self) -> Vec<f64> {
        let r = (self.window / 2) as f64;
        let mut t: Vec<f64> = (0..self.window)
            .map(|i| {
                let d = i as f64 - r;
                (-d * d / (2.0 * self.sigma * self.sigma)).exp()
            })
            .collect();
        let s: f64 = t.iter().sum();
        t.iter_mut().for_each(|v| *v /= s);
        t
    }
}

/// Separable valid-mode filtering: output is `(h - k + 1) x (w - k + 1)`.
fn filter_valid(data: &[f64], h: usize, w: usize, taps: &[f64]) -> Vec<f64> {
    let k = taps.len();
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        let src = &data[y * w..(y + 1) * w];
        for x in 0..ow {
            rows[y * ow + x] = taps.iter().zip(&src[x..x + k]).map(|(t, v)| t * v).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = taps
                .iter()
                .enumerate()
                .map(|(i, t)| t * rows[(y + i) * ow + x])
                .sum();
        }
    }
    out
}

/// Per-position SSIM over valid window positions, `(h-k+1) x (w-k+1)`.
pub fn ssim_map(a: &Image, b: &Image, config: &SsimConfig) -> Result<Image> {
    config.validate()?;
    a.same_dims(b)?;
    let (h, w) = a.dims();
    let k = config.window;
    if h < k || w < k {
        return Err(Error::Input(format!(
            "SSIM needs images of at least {k}x{k}, got {h}x{w}"
        )));
    }
    let taps = config.taps();
    let (da, db) = (a.data(), b.data());
    let prod = |f: &dyn Fn(f64, f64) -> f64| -> Vec<f64> {
        da.iter().zip(db).map(|(&x, &y)| f(x, y)).collect()
    };
    let mu_a = filter_valid(da, h, w, &taps);
    let mu_b = filter_valid(db, h, w, &taps);
    let e_aa = filter_valid(&prod(&|x, _| x * x), h, w, &taps);
    let e_bb = filter_valid(&prod(&|_, y| y * y), h, w, &taps);
    let e_ab = filter_valid(&prod(&|x, y| x * y), h, w, &taps);
    let (c1, c2) = (config.c1(), config.c2());
    let map: Vec<f64> = (0..mu_a.len())
        .map(|i| {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = e_aa[i] - ma * ma;
            let vb = e_bb[i] - mb * mb;
            let cov = e_ab[i] - ma * mb;
            ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                / ((ma * ma + mb * mb + c1) * (va + vb + c2))
        })
        .collect();
    Image::new(h - k + 1, w - k + 1, map)
}

/// Mean SSIM over fully interior window positions.
pub fn ssim(a: &Image, b: &Image, config: &SsimConfig) -> Result<f64> {
    Ok(ssim_map(a, b, config)?.mean())
}

/// Mean SSIM over window positions whose center lies in the ROI.
pub fn ssim_roi(a: &Image, b: &Image, config: &SsimConfig, roi: Option<&RoiMask>) -> Result<f64> {
    let map = ssim_map(a, b, config)?;
    let Some(mask) = roi else {
        return Ok(map.mean());
    };
    mask.check(a)?;
    let r = config.window / 2;
    let (mut sum, mut count) = (0.0, 0usize);
    for y in 0..map.height() {
        for x in 0..map.width() {
            if mask.contains(y + r, x + r) {
                sum += map.get(y, x);
                count += 1;
            }
        }
    }
    if count == 0 {
        return Err(Error::Input("ROI holds no interior SSIM window positions".into()));
    }
    Ok(sum / count as f64)
}
