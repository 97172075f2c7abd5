//! Stride-1, same-padded 2-D convolution.
//!
//! The production path expands row bands of the padded input into a patch
//! matrix and multiplies it with the flattened filter bank; the band size
//! bounds scratch memory on large B-scans. [`conv2d_direct`] is the plain
//! sliding-window loop the GEMM path is tested against.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::{gemm, Dims, MatLayout, Real, Tensor};

/// Target number of patch-matrix elements per band.
const BAND_ELEMS: usize = 1 << 16;

#[derive(Debug, Clone, PartialEq)]
pub struct ConvParams<T: Real = f64> {
    /// Filter bank, dims `(out_ch, in_ch, s, s)`.
    pub weight: Tensor<T>,
    pub bias: Vec<T>,
}

#[derive(Debug, Clone)]
pub struct ConvGrads<T: Real = f64> {
    pub input: Tensor<T>,
    pub weight: Tensor<T>,
    pub bias: Vec<T>,
}

impl<T: Real> ConvParams<T> {
    pub fn new(weight: Tensor<T>, bias: Vec<T>) -> Result<Self> {
        let d = weight.dims();
        if d.h != d.w || d.h % 2 == 0 {
            return Err(Error::Input(format!(
                "convolution kernel must be square and odd, got {}x{}",
                d.h, d.w
            )));
        }
        if bias.len() != d.n {
            return Err(Error::shape(&[bias.len()], &[d.n], "conv bias vs output channels"));
        }
        if !weight.is_finite() || bias.iter().any(|b| !b.is_finite()) {
            return Err(Error::NonFinite {
                location: "convolution parameters".into(),
            });
        }
        Ok(ConvParams { weight, bias })
    }

    pub fn zeros(out_ch: usize, in_ch: usize, size: usize) -> Self {
        ConvParams {
            weight: Tensor::zeros(Dims::new(out_ch, in_ch, size, size)),
            bias: vec![T::zero(); out_ch],
        }
    }

    /// Zero-mean Gaussian weights with variance `2 / (in_ch * s^2)`, zero bias.
    pub fn he_normal<R: Rng + ?Sized>(out_ch: usize, in_ch: usize, size: usize, rng: &mut R) -> Self {
        let std = (2.0 / (in_ch * size * size) as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("positive std");
        let dims = Dims::new(out_ch, in_ch, size, size);
        let weight = Tensor::from_fn(dims, |_, _, _, _| T::from_f64_lossy(normal.sample(rng)));
        ConvParams {
            weight,
            bias: vec![T::zero(); out_ch],
        }
    }

    /// Channel-preserving centered delta kernel (output equals input).
    pub fn identity(channels: usize, size: usize) -> Self {
        let mut p = Self::zeros(channels, channels, size);
        let c = size / 2;
        for ch in 0..channels {
            p.weight.set(ch, ch, c, c, T::one());
        }
        p
    }

    pub fn out_channels(&self) -> usize {
        self.weight.dims().n
    }

    pub fn in_channels(&self) -> usize {
        self.weight.dims().c
    }

    pub fn kernel_size(&self) -> usize {
        self.weight.dims().h
    }

    pub fn cast<U: Real>(&self) -> ConvParams<U> {
        ConvParams {
            weight: self.weight.cast(),
            bias: self.bias.iter().map(|&b| U::from_f64_lossy(b.to_f64_lossy())).collect(),
        }
    }

    fn check_input(&self, input: &Tensor<T>) -> Result<()> {
        if input.dims().c != self.in_channels() {
            return Err(Error::shape(
                &input.dims().as_array(),
                &self.weight.dims().as_array(),
                "conv input channels vs filter in_ch",
            ));
        }
        Ok(())
    }
}

/// Geometry of one image plane and the band split used for the patch matrix.
#[derive(Clone, Copy)]
struct Geometry {
    in_ch: usize,
    h: usize,
    w: usize,
    size: usize,
    pad: usize,
    band_rows: usize,
}

impl Geometry {
    fn new(in_ch: usize, h: usize, w: usize, size: usize) -> Self {
        let k = in_ch * size * size;
        let band_rows = (BAND_ELEMS / (k * w)).clamp(1, h);
        Geometry {
            in_ch,
            h,
            w,
            size,
            pad: size / 2,
            band_rows,
        }
    }

    fn patch_rows(&self) -> usize {
        self.in_ch * self.size * self.size
    }

    fn bands(&self) -> impl Iterator<Item = (usize, usize)> {
        let (h, step) = (self.h, self.band_rows);
        (0..h).step_by(step).map(move |y0| (y0, (y0 + step).min(h)))
    }

    /// Fills `cols` (`patch_rows x (y1-y0)*w`, row-major) for output rows `y0..y1`.
    fn im2col<T: Real>(&self, item: &[T], y0: usize, y1: usize, cols: &mut [T]) {
        let (w, h, s, pad) = (self.w, self.h, self.size, self.pad);
        let p = (y1 - y0) * w;
        for c in 0..self.in_ch {
            let plane = &item[c * h * w..(c + 1) * h * w];
            for dy in 0..s {
                for dx in 0..s {
                    let r = (c * s + dy) * s + dx;
                    let row = &mut cols[r * p..(r + 1) * p];
                    let (x_lo, x_hi) = valid_x(w, dx, pad);
                    for y in y0..y1 {
                        let dst = &mut row[(y - y0) * w..(y - y0 + 1) * w];
                        let sy = y as isize + dy as isize - pad as isize;
                        if sy < 0 || sy >= h as isize || x_lo >= x_hi {
                            dst.fill(T::zero());
                            continue;
                        }
                        let src = &plane[sy as usize * w..(sy as usize + 1) * w];
                        dst[..x_lo].fill(T::zero());
                        dst[x_hi..].fill(T::zero());
                        let shift = x_lo + dx - pad;
                        dst[x_lo..x_hi].copy_from_slice(&src[shift..shift + (x_hi - x_lo)]);
                    }
                }
            }
        }
    }

    /// Scatter-adds `cols` back into the input-shaped buffer `item`.
    fn col2im<T: Real>(&self, cols: &[T], y0: usize, y1: usize, item: &mut [T]) {
        let (w, h, s, pad) = (self.w, self.h, self.size, self.pad);
        let p = (y1 - y0) * w;
        for c in 0..self.in_ch {
            let plane = &mut item[c * h * w..(c + 1) * h * w];
            for dy in 0..s {
                for dx in 0..s {
                    let r = (c * s + dy) * s + dx;
                    let row = &cols[r * p..(r + 1) * p];
                    let (x_lo, x_hi) = valid_x(w, dx, pad);
                    if x_lo >= x_hi {
                        continue;
                    }
                    for y in y0..y1 {
                        let sy = y as isize + dy as isize - pad as isize;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        let src = &row[(y - y0) * w + x_lo..(y - y0) * w + x_hi];
                        let shift = sy as usize * w + x_lo + dx - pad;
                        for (d, &v) in plane[shift..shift + src.len()].iter_mut().zip(src) {
                            *d = *d + v;
                        }
                    }
                }
            }
        }
    }
}

/// Output columns `x_lo..x_hi` whose tap `dx` lands inside the source row.
fn valid_x(w: usize, dx: usize, pad: usize) -> (usize, usize) {
    let lo = pad.saturating_sub(dx);
    let hi = (w + pad).saturating_sub(dx).min(w);
    (lo, hi.max(lo))
}

pub fn conv2d<T: Real>(input: &Tensor<T>, params: &ConvParams<T>) -> Result<Tensor<T>> {
    params.check_input(input)?;
    let d = input.dims();
    let k_out = params.out_channels();
    let geo = Geometry::new(d.c, d.h, d.w, params.kernel_size());
    let hw = d.plane();
    let kk = geo.patch_rows();
    let out_dims = d.with_channels(k_out);
    let mut out = Tensor::zeros(out_dims);
    let wmat = params.weight.data();

    out.data_mut()
        .par_chunks_mut(k_out * hw)
        .enumerate()
        .for_each(|(b, out_item)| {
            let item = input.item(b);
            let mut cols = vec![T::zero(); kk * geo.band_rows * d.w];
            for (y0, y1) in geo.bands() {
                let p = (y1 - y0) * d.w;
                let cols = &mut cols[..kk * p];
                geo.im2col(item, y0, y1, cols);
                gemm(
                    T::one(),
                    wmat,
                    MatLayout::row_major(k_out, kk),
                    cols,
                    MatLayout::row_major(kk, p),
                    T::zero(),
                    &mut out_item[y0 * d.w..],
                    MatLayout {
                        rows: k_out,
                        cols: p,
                        rs: hw,
                        cs: 1,
                    },
                );
            }
            for (o, plane) in out_item.chunks_mut(hw).enumerate() {
                let bias = params.bias[o];
                plane.iter_mut().for_each(|v| *v = *v + bias);
            }
        });
    Ok(out)
}

/// Gradients of a scalar loss with respect to input, weights and bias, given
/// the upstream gradient `grad_out` of the convolution output.
pub fn conv2d_backward<T: Real>(
    input: &Tensor<T>,
    params: &ConvParams<T>,
    grad_out: &Tensor<T>,
) -> Result<ConvGrads<T>> {
    params.check_input(input)?;
    let d = input.dims();
    let k_out = params.out_channels();
    let expected = d.with_channels(k_out);
    if grad_out.dims() != expected {
        return Err(Error::shape(
            &grad_out.dims().as_array(),
            &expected.as_array(),
            "conv upstream gradient vs output",
        ));
    }
    let geo = Geometry::new(d.c, d.h, d.w, params.kernel_size());
    let hw = d.plane();
    let kk = geo.patch_rows();
    let wmat = params.weight.data();

    let mut grad_input = Tensor::zeros(d);
    let per_item: Vec<Vec<T>> = grad_input
        .data_mut()
        .par_chunks_mut(d.c * hw)
        .enumerate()
        .map(|(b, gin_item)| {
            let item = input.item(b);
            let gout = grad_out.item(b);
            let mut gw = vec![T::zero(); k_out * kk];
            let mut cols = vec![T::zero(); kk * geo.band_rows * d.w];
            let mut dcols = vec![T::zero(); kk * geo.band_rows * d.w];
            for (y0, y1) in geo.bands() {
                let p = (y1 - y0) * d.w;
                let cols = &mut cols[..kk * p];
                let dcols = &mut dcols[..kk * p];
                let gout_band = &gout[y0 * d.w..];
                let band = MatLayout {
                    rows: k_out,
                    cols: p,
                    rs: hw,
                    cs: 1,
                };
                geo.im2col(item, y0, y1, cols);
                // dW += dY_band * cols^T
                gemm(
                    T::one(),
                    gout_band,
                    band,
                    cols,
                    MatLayout::row_major(kk, p).transposed(),
                    T::one(),
                    &mut gw,
                    MatLayout::row_major(k_out, kk),
                );
                // dcols = W^T * dY_band
                gemm(
                    T::one(),
                    wmat,
                    MatLayout::row_major(k_out, kk).transposed(),
                    gout_band,
                    band,
                    T::zero(),
                    dcols,
                    MatLayout::row_major(kk, p),
                );
                geo.col2im(dcols, y0, y1, gin_item);
            }
            gw
        })
        .collect();

    let mut grad_weight = Tensor::zeros(params.weight.dims());
    for gw in &per_item {
        for (acc, &g) in grad_weight.data_mut().iter_mut().zip(gw) {
            *acc = *acc + g;
        }
    }
    let mut grad_bias = vec![T::zero(); k_out];
    for b in 0..d.n {
        for (o, gb) in grad_bias.iter_mut().enumerate() {
            *gb = *gb + grad_out.plane(b, o).iter().copied().sum::<T>();
        }
    }
    Ok(ConvGrads {
        input: grad_input,
        weight: grad_weight,
        bias: grad_bias,
    })
}

/// Direct sliding-window convolution over the zero-padded input.
pub fn conv2d_direct<T: Real>(input: &Tensor<T>, params: &ConvParams<T>) -> Result<Tensor<T>> {
    params.check_input(input)?;
    let d = input.dims();
    let s = params.kernel_size();
    let pad = s / 2;
    let padded = input.pad_zero(pad);
    let w = &params.weight;
    Ok(Tensor::from_fn(
        d.with_channels(params.out_channels()),
        |b, o, y, x| {
            let mut acc = params.bias[o];
            for c in 0..d.c {
                for dy in 0..s {
                    for dx in 0..s {
                        acc = acc + w.at(o, c, dy, dx) * padded.at(b, c, y + dy, x + dx);
                    }
                }
            }
            acc
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random(dims: Dims, rng: &mut ChaCha8Rng) -> Tensor {
        Tensor::from_fn(dims, |_, _, _, _| rng.gen_range(-1.0..1.0))
    }

    fn random_params(k: usize, c: usize, rng: &mut ChaCha8Rng) -> ConvParams {
        let weight = random(Dims::new(k, c, 3, 3), rng);
        let bias = (0..k).map(|_| rng.gen_range(-1.0..1.0)).collect();
        ConvParams::new(weight, bias).unwrap()
    }

    #[test]
    fn delta_kernel_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = random(Dims::new(2, 3, 5, 4), &mut rng);
        let y = conv2d(&x, &ConvParams::identity(3, 3)).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn all_ones_kernel_sums_window() {
        let x: Tensor = Tensor::new(
            Dims::new(1, 1, 3, 3),
            (1..=9).map(f64::from).collect(),
        )
        .unwrap();
        let p = ConvParams::new(Tensor::filled(Dims::new(1, 1, 3, 3), 1.0), vec![0.0]).unwrap();
        let y = conv2d(&x, &p).unwrap();
        assert_eq!(y.at(0, 0, 1, 1), 45.0);
        assert_eq!(y.at(0, 0, 0, 0), 12.0);
        assert_eq!(y, conv2d_direct(&x, &p).unwrap());
    }

    #[test]
    fn zero_kernel_gives_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random(Dims::new(1, 2, 4, 6), &mut rng);
        let mut p = ConvParams::zeros(3, 2, 3);
        p.bias = vec![0.25, -1.0, 2.0];
        let y = conv2d(&x, &p).unwrap();
        for o in 0..3 {
            assert!(y.plane(0, o).iter().all(|&v| v == p.bias[o]));
        }
    }

    #[test]
    fn gemm_path_matches_direct_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for &(n, c, k, h, w) in &[
            (1, 1, 1, 1, 1),
            (2, 3, 4, 5, 7),
            (1, 2, 3, 1, 9),
            (3, 4, 2, 8, 1),
            (1, 5, 6, 13, 11),
        ] {
            let x = random(Dims::new(n, c, h, w), &mut rng);
            let p = random_params(k, c, &mut rng);
            let fast = conv2d(&x, &p).unwrap();
            let slow = conv2d_direct(&x, &p).unwrap();
            assert_eq!(fast.dims(), Dims::new(n, k, h, w));
            for (a, b) in fast.data().iter().zip(slow.data()) {
                assert!((a - b).abs() < 1e-10, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn banded_path_matches_direct_on_tall_input() {
        // Wide channel count forces several bands per plane.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random(Dims::new(1, 64, 40, 33), &mut rng);
        let p = random_params(2, 64, &mut rng);
        let geo = Geometry::new(64, 40, 33, 3);
        assert!(geo.band_rows < 40);
        let fast = conv2d(&x, &p).unwrap();
        let slow = conv2d_direct(&x, &p).unwrap();
        for (a, b) in fast.data().iter().zip(slow.data()) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn linear_in_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut p = random_params(3, 2, &mut rng);
        p.bias = vec![0.0; 3];
        let d = Dims::new(2, 2, 6, 5);
        let (x, y) = (random(d, &mut rng), random(d, &mut rng));
        let (alpha, beta) = (0.7, -1.3);
        let mix = Tensor::from_fn(d, |b, c, i, j| alpha * x.at(b, c, i, j) + beta * y.at(b, c, i, j));
        let lhs = conv2d(&mix, &p).unwrap();
        let (cx, cy) = (conv2d(&x, &p).unwrap(), conv2d(&y, &p).unwrap());
        for i in 0..lhs.len() {
            let rhs = alpha * cx.data()[i] + beta * cy.data()[i];
            assert!((lhs.data()[i] - rhs).abs() < 1e-10);
        }
    }

    #[test]
    fn channel_mismatch_is_shape_error() {
        let x: Tensor = Tensor::zeros(Dims::new(1, 2, 3, 3));
        let p: ConvParams = ConvParams::zeros(1, 3, 3);
        assert!(matches!(conv2d(&x, &p), Err(Error::Shape { .. })));
        assert!(matches!(
            conv2d_backward(&x, &p, &Tensor::zeros(Dims::new(1, 1, 3, 3))),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn rejects_even_kernel_and_nan() {
        assert!(ConvParams::<f64>::new(Tensor::zeros(Dims::new(1, 1, 2, 2)), vec![0.0]).is_err());
        let w = Tensor::filled(Dims::new(1, 1, 3, 3), f64::NAN);
        assert!(matches!(
            ConvParams::new(w, vec![0.0]),
            Err(Error::NonFinite { .. })
        ));
    }

    #[test]
    fn f32_path_agrees_with_f64() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random(Dims::new(1, 8, 12, 10), &mut rng);
        let p = random_params(4, 8, &mut rng);
        let y64 = conv2d(&x, &p).unwrap();
        let y32 = conv2d(&x.cast::<f32>(), &p.cast::<f32>()).unwrap();
        for (a, &b) in y64.data().iter().zip(y32.data()) {
            assert!((a - b as f64).abs() <= 1e-4 * a.abs().max(1.0));
        }
    }

    proptest::proptest! {
        #[test]
        fn spatial_size_preserved(h in 1usize..12, w in 1usize..12) {
            let x: Tensor = Tensor::filled(Dims::new(1, 2, h, w), 0.5);
            let p = ConvParams::zeros(3, 2, 3);
            let y = conv2d(&x, &p).unwrap();
            proptest::prop_assert_eq!(y.dims(), Dims::new(1, 3, h, w));
        }
    }
}
