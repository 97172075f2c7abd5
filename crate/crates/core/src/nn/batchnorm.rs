use crate::error::{Error, Result};
use crate::nn::Mode;
use crate::tensor::{Real, Tensor};

pub const DEFAULT_EPS: f64 = 1e-5;
pub const DEFAULT_MOMENTUM: f64 = 0.9;

/// Per-channel batch-normalization parameters and running statistics.
///
/// Running statistics blend as `running = momentum * running + (1 - momentum) * batch`.
#[derive(Debug, Clone, PartialEq)]
pub struct BnParams<T: Real = f64> {
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
    pub eps: T,
    pub momentum: T,
}

#[derive(Debug, Clone)]
pub struct BnGrads<T: Real = f64> {
    pub input: Tensor<T>,
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
}

/// What the backward pass needs from a forward evaluation.
#[derive(Debug, Clone)]
pub struct BnCache<T: Real = f64> {
    /// Normalized input `(x - mean) / sqrt(var + eps)`.
    pub xhat: Tensor<T>,
    pub inv_std: Vec<T>,
    pub mode: Mode,
}

impl<T: Real> BnParams<T> {
    /// Unit scale, zero shift, running statistics `(0, 1)`.
    pub fn new(channels: usize) -> Self {
        BnParams {
            gamma: vec![T::one(); channels],
            beta: vec![T::zero(); channels],
            running_mean: vec![T::zero(); channels],
            running_var: vec![T::one(); channels],
            eps: T::from_f64_lossy(DEFAULT_EPS),
            momentum: T::from_f64_lossy(DEFAULT_MOMENTUM),
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.channels();
        for (name, len) in [
            ("beta", self.beta.len()),
            ("running_mean", self.running_mean.len()),
            ("running_var", self.running_var.len()),
        ] {
            if len != c {
                return Err(Error::Input(format!("batch norm {name} has {len} channels, gamma {c}")));
            }
        }
        if self.running_var.iter().any(|&v| v < T::zero()) {
            return Err(Error::Input("negative running variance".into()));
        }
        if self.eps < T::zero() || self.momentum < T::zero() || self.momentum > T::one() {
            return Err(Error::Input("batch norm eps must be >= 0, momentum in [0,1]".into()));
        }
        Ok(())
    }

    pub fn cast<U: Real>(&self) -> BnParams<U> {
        let c = |v: &[T]| v.iter().map(|&x| U::from_f64_lossy(x.to_f64_lossy())).collect();
        BnParams {
            gamma: c(&self.gamma),
            beta: c(&self.beta),
            running_mean: c(&self.running_mean),
            running_var: c(&self.running_var),
            eps: U::from_f64_lossy(self.eps.to_f64_lossy()),
            momentum: U::from_f64_lossy(self.momentum.to_f64_lossy()),
        }
    }

    fn check_input(&self, input: &Tensor<T>) -> Result<()> {
        if input.dims().c != self.channels() {
            return Err(Error::shape(
                &input.dims().as_array(),
                &[self.channels()],
                "batch norm input channels vs parameter channels",
            ));
        }
        Ok(())
    }
}

/// Batch normalization. `Train` normalizes with batch statistics and updates
/// the running statistics; `Infer` uses the running statistics and leaves
/// `params` untouched.
pub fn batchnorm2d<T: Real>(
    input: &Tensor<T>,
    params: &mut BnParams<T>,
    mode: Mode,
) -> Result<(Tensor<T>, BnCache<T>)> {
    batchnorm2d_owned(input.clone(), params, mode)
}

/// As [`batchnorm2d`], reusing the input buffer for the cached normalized values.
pub fn batchnorm2d_owned<T: Real>(
    input: Tensor<T>,
    params: &mut BnParams<T>,
    mode: Mode,
) -> Result<(Tensor<T>, BnCache<T>)> {
    params.check_input(&input)?;
    let (mean, inv_std) = match mode {
        Mode::Train => {
            let (mean, var) = batch_stats(&input)?;
            let keep = params.momentum;
            let blend = T::one() - keep;
            for ch in 0..params.channels() {
                params.running_mean[ch] = keep * params.running_mean[ch] + blend * mean[ch];
                params.running_var[ch] = keep * params.running_var[ch] + blend * var[ch];
            }
            let inv_std = var.iter().map(|&v| (v + params.eps).sqrt().recip()).collect();
            (mean, inv_std)
        }
        Mode::Infer => (params.running_mean.clone(), running_inv_std(params)),
    };
    let mut xhat = input;
    let mut out = Tensor::zeros(xhat.dims());
    normalize_into(&mut xhat, &mut out, &mean, &inv_std, params);
    Ok((
        out,
        BnCache {
            xhat,
            inv_std,
            mode,
        },
    ))
}

/// Inference-mode normalization applied in place, with no cache.
pub fn batchnorm2d_infer_inplace<T: Real>(x: &mut Tensor<T>, params: &BnParams<T>) -> Result<()> {
    params.check_input(x)?;
    let d = x.dims();
    let inv_std = running_inv_std(params);
    let hw = d.plane();
    for (i, plane) in x.data_mut().chunks_mut(hw).enumerate() {
        let ch = i % d.c;
        let scale = params.gamma[ch] * inv_std[ch];
        let shift = params.beta[ch] - params.running_mean[ch] * scale;
        plane.iter_mut().for_each(|v| *v = *v * scale + shift);
    }
    Ok(())
}

pub fn batchnorm2d_backward<T: Real>(
    cache: &BnCache<T>,
    params: &BnParams<T>,
    grad_out: &Tensor<T>,
) -> Result<BnGrads<T>> {
    let d = cache.xhat.dims();
    if grad_out.dims() != d {
        return Err(Error::shape(
            &grad_out.dims().as_array(),
            &d.as_array(),
            "batch norm upstream gradient vs output",
        ));
    }
    let count = T::from_usize(d.n * d.plane()).expect("count fits in float");
    let mut grad_gamma = vec![T::zero(); d.c];
    let mut grad_beta = vec![T::zero(); d.c];
    for b in 0..d.n {
        for ch in 0..d.c {
            let (g, xh) = (grad_out.plane(b, ch), cache.xhat.plane(b, ch));
            grad_beta[ch] = grad_beta[ch] + g.iter().copied().sum::<T>();
            grad_gamma[ch] = grad_gamma[ch] + g.iter().zip(xh).map(|(&g, &x)| g * x).sum::<T>();
        }
    }
    let mut grad_input = Tensor::zeros(d);
    let hw = d.plane();
    for (i, gin) in grad_input.data_mut().chunks_mut(hw).enumerate() {
        let (b, ch) = (i / d.c, i % d.c);
        let (g, xh) = (grad_out.plane(b, ch), cache.xhat.plane(b, ch));
        let scale = params.gamma[ch] * cache.inv_std[ch];
        match cache.mode {
            Mode::Train => {
                let k = scale / count;
                for ((dst, &g), &x) in gin.iter_mut().zip(g).zip(xh) {
                    *dst = k * (count * g - grad_beta[ch] - x * grad_gamma[ch]);
                }
            }
            Mode::Infer => {
                for (dst, &g) in gin.iter_mut().zip(g) {
                    *dst = scale * g;
                }
            }
        }
    }
    Ok(BnGrads {
        input: grad_input,
        gamma: grad_gamma,
        beta: grad_beta,
    })
}

fn batch_stats<T: Real>(input: &Tensor<T>) -> Result<(Vec<T>, Vec<T>)> {
    let d = input.dims();
    if d.n * d.plane() < 2 {
        return Err(Error::Degenerate(format!(
            "batch statistics need at least 2 values per channel, got {}",
            d.n * d.plane()
        )));
    }
    Ok(input.channel_stats())
}

fn running_inv_std<T: Real>(params: &BnParams<T>) -> Vec<T> {
    params
        .running_var
        .iter()
        .map(|&v| (v + params.eps).sqrt().recip())
        .collect()
}

/// Turns `x` into `xhat` in place and writes `gamma * xhat + beta` into `out`.
fn normalize_into<T: Real>(
    x: &mut Tensor<T>,
    out: &mut Tensor<T>,
    mean: &[T],
    inv_std: &[T],
    params: &BnParams<T>,
) {
    let d = x.dims();
    let hw = d.plane();
    for (i, (xp, op)) in x
        .data_mut()
        .chunks_mut(hw)
        .zip(out.data_mut().chunks_mut(hw))
        .enumerate()
    {
        let ch = i % d.c;
        let (m, s, g, be) = (mean[ch], inv_std[ch], params.gamma[ch], params.beta[ch]);
        for (xv, ov) in xp.iter_mut().zip(op.iter_mut()) {
            let xh = (*xv - m) * s;
            *xv = xh;
            *ov = g * xh + be;
        }
    }
}
