use crate::error::{Error, Result};
use crate::tensor::{Dims, Real, Tensor};

/// Single-channel image with intensities nominally in `[0, 1]`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Input(format!("empty image {height}x{width}")));
        }
        if data.len() != height * width {
            return Err(Error::shape(
                &[data.len()],
                &[height, width],
                "image data length vs extents",
            ));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                location: format!("image pixel ({}, {})", i / width, i % width),
            });
        }
        Ok(Image {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Self {
        Image::new(height, width, vec![value; height * width]).expect("valid filled image")
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(f(y, x));
            }
        }
        Image {
            height,
            width,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, y: usize, x: usize, v: f64) {
        self.data[y * self.width + x] = v;
    }

    /// Pixel with coordinates clamped into the image (edge replication).
    pub fn get_clamped(&self, y: isize, x: isize) -> f64 {
        let y = y.clamp(0, self.height as isize - 1) as usize;
        let x = x.clamp(0, self.width as isize - 1) as usize;
        self.get(y, x)
    }

    pub fn row(&self, y: usize) -> &[f64] {
        &self.data[y * self.width..(y + 1) * self.width]
    }

    pub fn same_dims(&self, other: &Image) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::shape(
                &[self.height, self.width],
                &[other.height, other.width],
                "image dimensions",
            ));
        }
        Ok(())
    }

    pub fn clamped(&self) -> Image {
        self.map(|v| v.clamp(0.0, 1.0))
    }

    pub fn map(&self, mut f: impl FnMut(f64) -> f64) -> Image {
        Image {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.len() as f64
    }

    /// Population variance.
    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.data.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / self.len() as f64
    }

    pub fn flip_horizontal(&self) -> Image {
        Image::from_fn(self.height, self.width, |y, x| self.get(y, self.width - 1 - x))
    }

    /// Sub-image with top-left corner `(y, x)`.
    pub fn crop(&self, y: usize, x: usize, height: usize, width: usize) -> Result<Image> {
        if height == 0 || width == 0 || y + height > self.height || x + width > self.width {
            return Err(Error::Input(format!(
                "crop {height}x{width} at ({y}, {x}) exceeds {}x{} image",
                self.height, self.width
            )));
        }
        Ok(Image::from_fn(height, width, |yy, xx| self.get(y + yy, x + xx)))
    }

    /// Elementwise `self - other`.
    pub fn sub(&self, other: &Image) -> Result<Image> {
        self.same_dims(other)?;
        Ok(Image {
            height: self.height,
            width: self.width,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect(),
        })
    }

    pub fn to_tensor<T: Real>(&self) -> Tensor<T> {
        Tensor::new(
            Dims::new(1, 1, self.height, self.width),
            self.data.iter().map(|&v| T::from_f64_lossy(v)).collect(),
        )
        .expect("image extents are non-zero")
    }

    /// Image from batch item `b` of a single-channel tensor.
    pub fn from_tensor<T: Real>(t: &Tensor<T>, b: usize) -> Result<Image> {
        let d = t.dims();
        if d.c != 1 || b >= d.n {
            return Err(Error::Input(format!(
                "cannot take image {b} from tensor {:?}",
                d.as_array()
            )));
        }
        Image::new(d.h, d.w, t.plane(b, 0).iter().map(|v| v.to_f64_lossy()).collect())
    }

    /// Mean of equally sized images.
    pub fn average(images: &[&Image]) -> Result<Image> {
        let first = images
            .first()
            .ok_or_else(|| Error::Input("cannot average zero images".into()))?;
        let mut acc = vec![0.0; first.len()];
        for img in images {
            first.same_dims(img)?;
            for (a, v) in acc.iter_mut().zip(&img.data) {
                *a += v;
            }
        }
        let n = images.len() as f64;
        acc.iter_mut().for_each(|a| *a /= n);
        Image::new(first.height, first.width, acc)
    }
}

/// Stack of same-sized B-scans.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    slices: Vec<Image>,
}

impl Volume {
    pub fn new(slices: Vec<Image>) -> Result<Self> {
        let first = slices
            .first()
            .ok_or_else(|| Error::Input("volume has no B-scans".into()))?;
        for s in &slices {
            first.same_dims(s)?;
        }
        Ok(Volume { slices })
    }

    pub fn slices(&self) -> &[Image] {
        &self.slices
    }

    pub fn len(&self) -> usize {
        self.slices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slices.is_empty()
    }

    pub fn scan_dims(&self) -> (usize, usize) {
        self.slices[0].dims()
    }

    /// Crops every slice to the same window.
    pub fn crop(&self, window: &CropWindow) -> Result<Volume> {
        Volume::new(
            self.slices
                .iter()
                .map(|s| window.apply(s))
                .collect::<Result<_>>()?,
        )
    }
}

/// Rectangular region of interest `(y, x, height, width)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CropWindow {
    pub y: usize,
    pub x: usize,
    pub height: usize,
    pub width: usize,
}

impl CropWindow {
    pub fn apply(&self, img: &Image) -> Result<Image> {
        img.crop(self.y, self.x, self.height, self.width)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_nan_and_bad_lengths() {
        assert!(Image::new(2, 2, vec![0.0; 3]).is_err());
        assert!(matches!(
            Image::new(1, 2, vec![0.0, f64::NAN]),
            Err(Error::NonFinite { .. })
        ));
        assert!(Image::new(0, 2, vec![]).is_err());
    }

    #[test]
    fn flip_is_involution() {
        let img = Image::from_fn(3, 4, |y, x| (y * 4 + x) as f64 / 12.0);
        assert_eq!(img.flip_horizontal().get(0, 0), img.get(0, 3));
        assert_eq!(img.flip_horizontal().flip_horizontal(), img);
    }

    #[test]
    fn tensor_round_trip() {
        let img = Image::from_fn(3, 5, |y, x| (y + x) as f64 * 0.1);
        let t: Tensor = img.to_tensor();
        assert_eq!(t.dims(), Dims::new(1, 1, 3, 5));
        assert_eq!(Image::from_tensor(&t, 0).unwrap(), img);
    }

    #[test]
    fn volume_requires_uniform_dims() {
        assert!(Volume::new(vec![]).is_err());
        assert!(Volume::new(vec![Image::filled(2, 2, 0.0), Image::filled(2, 3, 0.0)]).is_err());
    }
}
