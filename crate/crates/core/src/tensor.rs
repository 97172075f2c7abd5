//! Dense NCHW tensors and the few primitives the layers are built from.
//!
//! Layout is fixed row-major NCHW: element `(b, ch, y, x)` lives at
//! `((b * c + ch) * h + y) * w + x`. Storage is generic over [`Real`] so the
//! same layer code runs in 64-bit (reference, gradient checks) and 32-bit
//! (training and inference fast path).

use std::fmt::Debug;
use std::fs;
use std::iter::Sum;
use std::path::Path;

use num_traits::{Float, FromPrimitive, ToPrimitive};

use crate::error::{Error, Result};

/// Floating-point element type for tensors.
pub trait Real:
    Float + FromPrimitive + ToPrimitive + Sum + Debug + Default + Send + Sync + 'static
{
    /// `C = alpha * A * B + beta * C` on strided row/column layouts.
    ///
    /// # Safety
    /// All pointers must be valid for the extents and strides given.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );

    fn from_f64_lossy(v: f64) -> Self {
        Self::from_f64(v).expect("f64 converts to every Real")
    }

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().expect("Real converts to f64")
    }
}

impl Real for f32 {
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f32,
        a: *const f32,
        rsa: isize,
        csa: isize,
        b: *const f32,
        rsb: isize,
        csb: isize,
        beta: f32,
        c: *mut f32,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }
}

impl Real for f64 {
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f64,
        a: *const f64,
        rsa: isize,
        csa: isize,
        b: *const f64,
        rsb: isize,
        csb: isize,
        beta: f64,
        c: *mut f64,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }
}

/// Strided matrix view used by [`gemm`]: `rows x cols` with row stride `rs`
/// and column stride `cs`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct MatLayout {
    pub rows: usize,
    pub cols: usize,
    pub rs: usize,
    pub cs: usize,
}

impl MatLayout {
    pub fn row_major(rows: usize, cols: usize) -> Self {
        MatLayout {
            rows,
            cols,
            rs: cols,
            cs: 1,
        }
    }

    pub fn transposed(self) -> Self {
        MatLayout {
            rows: self.cols,
            cols: self.rows,
            rs: self.cs,
            cs: self.rs,
        }
    }

    fn max_offset(&self) -> usize {
        if self.rows == 0 || self.cols == 0 {
            0
        } else {
            (self.rows - 1) * self.rs + (self.cols - 1) * self.cs + 1
        }
    }
}

/// Bounds-checked wrapper around [`Real::gemm_raw`]: `c = alpha*a*b + beta*c`.
pub(crate) fn gemm<T: Real>(
    alpha: T,
    a: &[T],
    la: MatLayout,
    b: &[T],
    lb: MatLayout,
    beta: T,
    c: &mut [T],
    lc: MatLayout,
) {
    assert_eq!(la.cols, lb.rows, "gemm inner extent");
    assert_eq!(la.rows, lc.rows, "gemm row extent");
    assert_eq!(lb.cols, lc.cols, "gemm column extent");
    assert!(a.len() >= la.max_offset());
    assert!(b.len() >= lb.max_offset());
    assert!(c.len() >= lc.max_offset());
    // Column strides of C must not alias distinct elements.
    assert!(lc.rows <= 1 || lc.cols <= 1 || lc.rs != lc.cs);
    unsafe {
        T::gemm_raw(
            la.rows,
            la.cols,
            lb.cols,
            alpha,
            a.as_ptr(),
            la.rs as isize,
            la.cs as isize,
            b.as_ptr(),
            lb.rs as isize,
            lb.cs as isize,
            beta,
            c.as_mut_ptr(),
            lc.rs as isize,
            lc.cs as isize,
        );
    }
}

/// Tensor extents `(n, c, h, w)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Dims {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Dims {
    pub const fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Dims { n, c, h, w }
    }

    pub fn len(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn plane(&self) -> usize {
        self.h * self.w
    }

    pub fn as_array(&self) -> [usize; 4] {
        [self.n, self.c, self.h, self.w]
    }

    pub fn offset(&self, b: usize, ch: usize, y: usize, x: usize) -> usize {
        ((b * self.c + ch) * self.h + y) * self.w + x
    }

    pub fn with_channels(self, c: usize) -> Self {
        Dims { c, ..self }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T: Real = f64> {
    dims: Dims,
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn new(dims: Dims, data: Vec<T>) -> Result<Self> {
        if dims.as_array().contains(&0) {
            return Err(Error::Input(format!("tensor extents must be >= 1, got {dims:?}")));
        }
        if data.len() != dims.len() {
            return Err(Error::shape(
                &[data.len()],
                &[dims.len()],
                "tensor data length vs extents",
            ));
        }
        Ok(Tensor { dims, data })
    }

    pub fn zeros(dims: Dims) -> Self {
        Self::filled(dims, T::zero())
    }

    pub fn filled(dims: Dims, value: T) -> Self {
        assert!(!dims.as_array().contains(&0), "tensor extents must be >= 1");
        Tensor {
            dims,
            data: vec![value; dims.len()],
        }
    }

    pub fn zeros_like(other: &Self) -> Self {
        Self::zeros(other.dims)
    }

    pub fn from_fn(dims: Dims, mut f: impl FnMut(usize, usize, usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(dims.len());
        for b in 0..dims.n {
            for ch in 0..dims.c {
                for y in 0..dims.h {
                    for x in 0..dims.w {
                        data.push(f(b, ch, y, x));
                    }
                }
            }
        }
        Tensor { dims, data }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn at(&self, b: usize, ch: usize, y: usize, x: usize) -> T {
        self.data[self.dims.offset(b, ch, y, x)]
    }

    pub fn set(&mut self, b: usize, ch: usize, y: usize, x: usize, v: T) {
        let o = self.dims.offset(b, ch, y, x);
        self.data[o] = v;
    }

    /// The contiguous `h * w` plane for batch item `b`, channel `ch`.
    pub fn plane(&self, b: usize, ch: usize) -> &[T] {
        let p = self.dims.plane();
        let start = (b * self.dims.c + ch) * p;
        &self.data[start..start + p]
    }

    /// All channels of batch item `b`.
    pub fn item(&self, b: usize) -> &[T] {
        let s = self.dims.c * self.dims.plane();
        &self.data[b * s..(b + 1) * s]
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            dims: self.dims,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            dims: self.dims,
            data: self
                .data
                .iter()
                .map(|&v| U::from_f64_lossy(v.to_f64_lossy()))
                .collect(),
        }
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn sum_of_squares(&self) -> T {
        self.data.iter().map(|&v| v * v).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Elementwise `self + other`.
    pub fn add(&self, other: &Self) -> Result<Self> {
        let mut out = self.clone();
        out.add_assign(other)?;
        Ok(out)
    }

    /// In-place elementwise `self += other`.
    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        if self.dims != other.dims {
            return Err(Error::shape(
                &self.dims.as_array(),
                &other.dims.as_array(),
                "elementwise add",
            ));
        }
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + b;
        }
        Ok(())
    }

    /// Zero-pads each plane by `p` pixels on every side.
    pub fn pad_zero(&self, p: usize) -> Self {
        if p == 0 {
            return self.clone();
        }
        let d = self.dims;
        let out_dims = Dims::new(d.n, d.c, d.h + 2 * p, d.w + 2 * p);
        let mut out = Self::zeros(out_dims);
        for b in 0..d.n {
            for ch in 0..d.c {
                let src = self.plane(b, ch);
                for y in 0..d.h {
                    let dst = out_dims.offset(b, ch, y + p, p);
                    out.data[dst..dst + d.w].copy_from_slice(&src[y * d.w..(y + 1) * d.w]);
                }
            }
        }
        out
    }

    /// Removes a border of `p` pixels from every side of each plane.
    pub fn crop(&self, p: usize) -> Result<Self> {
        let d = self.dims;
        if 2 * p >= d.h || 2 * p >= d.w {
            return Err(Error::Input(format!("cannot crop {p} pixels from {d:?}")));
        }
        let out_dims = Dims::new(d.n, d.c, d.h - 2 * p, d.w - 2 * p);
        let data = (0..d.n)
            .flat_map(|b| (0..d.c).map(move |ch| (b, ch)))
            .flat_map(|(b, ch)| {
                (0..out_dims.h).flat_map(move |y| {
                    let start = d.offset(b, ch, y + p, p);
                    start..start + out_dims.w
                })
            })
            .map(|i| self.data[i])
            .collect();
        Ok(Tensor {
            dims: out_dims,
            data,
        })
    }

    /// Per-channel mean and population variance over `(n, h, w)`.
    pub fn channel_stats(&self) -> (Vec<T>, Vec<T>) {
        let d = self.dims;
        let count = T::from_usize(d.n * d.plane()).expect("count fits in float");
        let mut mean = vec![T::zero(); d.c];
        let mut var = vec![T::zero(); d.c];
        for ch in 0..d.c {
            // Shifting by the first sample makes a constant channel come out
            // with exactly zero variance.
            let shift = self.plane(0, ch)[0];
            let s: T = (0..d.n)
                .map(|b| self.plane(b, ch).iter().map(|&v| v - shift).sum::<T>())
                .sum();
            let m = s / count;
            let ss: T = (0..d.n)
                .map(|b| {
                    self.plane(b, ch)
                        .iter()
                        .map(|&v| {
                            let dv = (v - shift) - m;
                            dv * dv
                        })
                        .sum::<T>()
                })
                .sum();
            mean[ch] = shift + m;
            var[ch] = ss / count;
        }
        (mean, var)
    }
}

const TNS_MAGIC: &[u8; 4] = b"TNS1";

impl Tensor<f64> {
    /// Serializes to the raw `TNS1` debug format: magic, four u64 LE extents,
    /// then f64 LE data.
    pub fn to_tns_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(4 + 32 + 8 * self.len());
        out.extend_from_slice(TNS_MAGIC);
        for e in self.dims.as_array() {
            out.extend_from_slice(&(e as u64).to_le_bytes());
        }
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_tns_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        if bytes.len() < 4 {
            return Err(Error::Truncated { path: path.into() });
        }
        if &bytes[..4] != TNS_MAGIC {
            return Err(Error::BadMagic { path: path.into() });
        }
        if bytes.len() < 36 {
            return Err(Error::Truncated { path: path.into() });
        }
        let mut ext = [0usize; 4];
        for (i, e) in ext.iter_mut().enumerate() {
            let raw = u64::from_le_bytes(bytes[4 + 8 * i..12 + 8 * i].try_into().unwrap());
            *e = usize::try_from(raw).map_err(|_| Error::DimensionOverflow {
                path: path.into(),
                reason: format!("extent {raw} does not fit in memory"),
            })?;
            if *e == 0 {
                return Err(Error::MalformedHeader {
                    path: path.into(),
                    reason: "zero extent".into(),
                });
            }
        }
        let count = ext
            .iter()
            .try_fold(1usize, |acc, &e| acc.checked_mul(e))
            .and_then(|c| c.checked_mul(8))
            .ok_or_else(|| Error::DimensionOverflow {
                path: path.into(),
                reason: format!("extents {ext:?} overflow"),
            })?;
        let payload = &bytes[36..];
        if payload.len() < count {
            return Err(Error::Truncated { path: path.into() });
        }
        if payload.len() > count {
            return Err(Error::MalformedHeader {
                path: path.into(),
                reason: format!("{} trailing bytes", payload.len() - count),
            });
        }
        let data = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Tensor {
            dims: Dims::new(ext[0], ext[1], ext[2], ext[3]),
            data,
        })
    }

    pub fn write_tns(&self, path: &Path) -> Result<()> {
        crate::util::write_atomic(path, &self.to_tns_bytes())
    }

    pub fn read_tns(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_tns_bytes(&bytes, path)
    }
}
