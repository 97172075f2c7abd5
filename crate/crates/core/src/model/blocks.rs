//! Network blocks with cached forward passes and analytic backward passes.
//!
//! Trainable parameters of a block are exposed as a flat, ordered list of
//! slices; backward passes return gradients in the same order.

use rand::Rng;

use crate::error::Result;
use crate::nn::{
    batchnorm2d_backward, batchnorm2d_infer_inplace, batchnorm2d_owned, conv2d, conv2d_backward,
    relu_backward_inplace, relu_inplace, BnCache, BnParams, ConvParams, Mode,
};
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct CbnBlock<T: Real = f64> {
    pub conv: ConvParams<T>,
    pub bn: BnParams<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BranchBlock<T: Real = f64> {
    pub cbn: CbnBlock<T>,
    pub conv_a: ConvParams<T>,
    pub conv_b: ConvParams<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResBlock<T: Real = f64> {
    pub conv1: ConvParams<T>,
    pub bn1: BnParams<T>,
    pub conv2: ConvParams<T>,
    pub bn2: BnParams<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Block<T: Real = f64> {
    Cbn(CbnBlock<T>),
    Branch(BranchBlock<T>),
    Res(ResBlock<T>),
    Output(ConvParams<T>),
}

#[derive(Debug)]
struct CbnCache<T: Real> {
    bn: BnCache<T>,
    out: Tensor<T>,
}

#[derive(Debug)]
enum Cache<T: Real> {
    Cbn,
    Branch { cbn: CbnCache<T>, a: Tensor<T> },
    Res { bn1: BnCache<T>, h1: Tensor<T>, bn2: BnCache<T> },
    Output,
}

/// Output of a cached forward pass, consumed by the matching backward pass.
#[derive(Debug)]
pub struct BlockState<T: Real> {
    pub output: Tensor<T>,
    bn: Option<BnCache<T>>,
    cache: Cache<T>,
}

pub type ParamGrads<T> = Vec<Vec<T>>;

impl<T: Real> CbnBlock<T> {
    pub fn new<R: Rng + ?Sized>(in_ch: usize, out_ch: usize, size: usize, rng: &mut R) -> Self {
        CbnBlock {
            conv: ConvParams::he_normal(out_ch, in_ch, size, rng),
            bn: BnParams::new(out_ch),
        }
    }

    fn forward_cached(&mut self, x: &Tensor<T>, mode: Mode) -> Result<CbnCache<T>> {
        let z = conv2d(x, &self.conv)?;
        let (mut out, bn) = batchnorm2d_owned(z, &mut self.bn, mode)?;
        relu_inplace(&mut out);
        Ok(CbnCache { bn, out })
    }

    fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut z = conv2d(x, &self.conv)?;
        batchnorm2d_infer_inplace(&mut z, &self.bn)?;
        relu_inplace(&mut z);
        Ok(z)
    }

    fn backward_cached(
        &self,
        x: &Tensor<T>,
        bn: &BnCache<T>,
        out: &Tensor<T>,
        mut grad: Tensor<T>,
    ) -> Result<(Tensor<T>, ParamGrads<T>)> {
        relu_backward_inplace(out, &mut grad)?;
        let gbn = batchnorm2d_backward(bn, &self.bn, &grad)?;
        drop(grad);
        let gc = conv2d_backward(x, &self.conv, &gbn.input)?;
        Ok((
            gc.input,
            vec![gc.weight.into_data(), gc.bias, gbn.gamma, gbn.beta],
        ))
    }

    fn params(&self) -> Vec<(&'static str, &[T])> {
        vec![
            ("conv.weight", self.conv.weight.data()),
            ("conv.bias", &self.conv.bias),
            ("bn.gamma", &self.bn.gamma),
            ("bn.beta", &self.bn.beta),
        ]
    }

    fn params_mut(&mut self) -> Vec<&mut [T]> {
        vec![
            self.conv.weight.data_mut(),
            &mut self.conv.bias,
            &mut self.bn.gamma,
            &mut self.bn.beta,
        ]
    }
}

impl<T: Real> BranchBlock<T> {
    pub fn new<R: Rng + ?Sized>(width: usize, size: usize, rng: &mut R) -> Self {
        BranchBlock {
            cbn: CbnBlock::new(width, width, size, rng),
            conv_a: ConvParams::he_normal(width, width, size, rng),
            conv_b: ConvParams::he_normal(width, width, size, rng),
        }
    }

    fn forward_state(&mut self, x: &Tensor<T>, mode: Mode) -> Result<BlockState<T>> {
        let cbn = self.cbn.forward_cached(x, mode)?;
        let a = conv2d(x, &self.conv_a)?;
        let mut output = conv2d(&a, &self.conv_b)?;
        output.add_assign(&cbn.out)?;
        Ok(BlockState {
            output,
            bn: None,
            cache: Cache::Branch { cbn, a },
        })
    }
}

impl<T: Real> ResBlock<T> {
    pub fn new<R: Rng + ?Sized>(width: usize, size: usize, rng: &mut R) -> Self {
        ResBlock {
            conv1: ConvParams::he_normal(width, width, size, rng),
            bn1: BnParams::new(width),
            conv2: ConvParams::he_normal(width, width, size, rng),
            bn2: BnParams::new(width),
        }
    }

    fn forward_state(&mut self, x: &Tensor<T>, mode: Mode) -> Result<BlockState<T>> {
        let c1 = conv2d(x, &self.conv1)?;
        let (mut h1, bn1) = batchnorm2d_owned(c1, &mut self.bn1, mode)?;
        relu_inplace(&mut h1);
        let c2 = conv2d(&h1, &self.conv2)?;
        let (mut output, bn2) = batchnorm2d_owned(c2, &mut self.bn2, mode)?;
        output.add_assign(x)?;
        relu_inplace(&mut output);
        Ok(BlockState {
            output,
            bn: None,
            cache: Cache::Res { bn1, h1, bn2 },
        })
    }
}

impl<T: Real> Block<T> {
    /// Forward pass keeping what [`Block::backward`] needs.
    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<BlockState<T>> {
        match self {
            Block::Cbn(b) => {
                let c = b.forward_cached(x, mode)?;
                Ok(BlockState {
                    output: c.out,
                    bn: Some(c.bn),
                    cache: Cache::Cbn,
                })
            }
            Block::Branch(b) => b.forward_state(x, mode),
            Block::Res(b) => b.forward_state(x, mode),
            Block::Output(conv) => Ok(BlockState {
                output: conv2d(x, conv)?,
                bn: None,
                cache: Cache::Output,
            }),
        }
    }

    /// Inference-mode forward pass without caches.
    pub fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        match self {
            Block::Cbn(b) => b.infer(x),
            Block::Branch(b) => {
                let mut out = conv2d(&conv2d(x, &b.conv_a)?, &b.conv_b)?;
                out.add_assign(&b.cbn.infer(x)?)?;
                Ok(out)
            }
            Block::Res(b) => {
                let mut h = conv2d(x, &b.conv1)?;
                batchnorm2d_infer_inplace(&mut h, &b.bn1)?;
                relu_inplace(&mut h);
                let mut out = conv2d(&h, &b.conv2)?;
                drop(h);
                batchnorm2d_infer_inplace(&mut out, &b.bn2)?;
                out.add_assign(x)?;
                relu_inplace(&mut out);
                Ok(out)
            }
            Block::Output(conv) => conv2d(x, conv),
        }
    }

    /// Gradient with respect to the block input and to every parameter
    /// listed by [`Block::params`], given the upstream gradient.
    pub fn backward(
        &self,
        x: &Tensor<T>,
        state: &BlockState<T>,
        grad: Tensor<T>,
    ) -> Result<(Tensor<T>, ParamGrads<T>)> {
        match (self, &state.cache) {
            (Block::Cbn(b), Cache::Cbn) => {
                let bn = state.bn.as_ref().expect("cbn state carries bn cache");
                b.backward_cached(x, bn, &state.output, grad)
            }
            (Block::Branch(b), Cache::Branch { cbn, a }) => {
                let gb = conv2d_backward(a, &b.conv_b, &grad)?;
                let ga = conv2d_backward(x, &b.conv_a, &gb.input)?;
                let (mut gin, mut grads) = b.cbn.backward_cached(x, &cbn.bn, &cbn.out, grad)?;
                gin.add_assign(&ga.input)?;
                grads.extend([
                    ga.weight.into_data(),
                    ga.bias,
                    gb.weight.into_data(),
                    gb.bias,
                ]);
                Ok((gin, grads))
            }
            (Block::Res(b), Cache::Res { bn1, h1, bn2 }) => {
                let mut gsum = grad;
                relu_backward_inplace(&state.output, &mut gsum)?;
                let g2 = batchnorm2d_backward(bn2, &b.bn2, &gsum)?;
                let gc2 = conv2d_backward(h1, &b.conv2, &g2.input)?;
                let mut gh1 = gc2.input;
                relu_backward_inplace(h1, &mut gh1)?;
                let g1 = batchnorm2d_backward(bn1, &b.bn1, &gh1)?;
                drop(gh1);
                let gc1 = conv2d_backward(x, &b.conv1, &g1.input)?;
                let mut gin = gc1.input;
                gin.add_assign(&gsum)?;
                Ok((
                    gin,
                    vec![
                        gc1.weight.into_data(),
                        gc1.bias,
                        g1.gamma,
                        g1.beta,
                        gc2.weight.into_data(),
                        gc2.bias,
                        g2.gamma,
                        g2.beta,
                    ],
                ))
            }
            (Block::Output(conv), Cache::Output) => {
                let g = conv2d_backward(x, conv, &grad)?;
                Ok((g.input, vec![g.weight.into_data(), g.bias]))
            }
            _ => unreachable!("block state from a different block kind"),
        }
    }

    pub fn params(&self) -> Vec<(&'static str, &[T])> {
        match self {
            Block::Cbn(b) => b.params(),
            Block::Branch(b) => {
                let mut v: Vec<(&'static str, &[T])> = b
                    .cbn
                    .params()
                    .into_iter()
                    .map(|(n, p)| (cbn_prefixed(n), p))
                    .collect();
                v.extend([
                    ("conv_a.weight", b.conv_a.weight.data()),
                    ("conv_a.bias", &b.conv_a.bias[..]),
                    ("conv_b.weight", b.conv_b.weight.data()),
                    ("conv_b.bias", &b.conv_b.bias[..]),
                ]);
                v
            }
            Block::Res(b) => vec![
                ("conv1.weight", b.conv1.weight.data()),
                ("conv1.bias", &b.conv1.bias),
                ("bn1.gamma", &b.bn1.gamma),
                ("bn1.beta", &b.bn1.beta),
                ("conv2.weight", b.conv2.weight.data()),
                ("conv2.bias", &b.conv2.bias),
                ("bn2.gamma", &b.bn2.gamma),
                ("bn2.beta", &b.bn2.beta),
            ],
            Block::Output(c) => vec![("conv.weight", c.weight.data()), ("conv.bias", &c.bias)],
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut [T]> {
        match self {
            Block::Cbn(b) => b.params_mut(),
            Block::Branch(b) => {
                let mut v = b.cbn.params_mut();
                v.extend([
                    b.conv_a.weight.data_mut(),
                    &mut b.conv_a.bias[..],
                    b.conv_b.weight.data_mut(),
                    &mut b.conv_b.bias[..],
                ]);
                v
            }
            Block::Res(b) => vec![
                b.conv1.weight.data_mut(),
                &mut b.conv1.bias,
                &mut b.bn1.gamma,
                &mut b.bn1.beta,
                b.conv2.weight.data_mut(),
                &mut b.conv2.bias,
                &mut b.bn2.gamma,
                &mut b.bn2.beta,
            ],
            Block::Output(c) => vec![c.weight.data_mut(), &mut c.bias],
        }
    }

    /// Every parameter and statistic in serialization order: each
    /// convolution as weights then bias, each batch norm as gamma, beta,
    /// running mean, running variance.
    pub fn tensors(&self) -> Vec<&[T]> {
        fn conv<T: Real>(c: &ConvParams<T>) -> [&[T]; 2] {
            [c.weight.data(), &c.bias]
        }
        fn bn<T: Real>(b: &BnParams<T>) -> [&[T]; 4] {
            [&b.gamma, &b.beta, &b.running_mean, &b.running_var]
        }
        match self {
            Block::Cbn(b) => [&conv(&b.conv)[..], &bn(&b.bn)[..]].concat(),
            Block::Branch(b) => [
                &conv(&b.cbn.conv)[..],
                &bn(&b.cbn.bn)[..],
                &conv(&b.conv_a)[..],
                &conv(&b.conv_b)[..],
            ]
            .concat(),
            Block::Res(b) => [
                &conv(&b.conv1)[..],
                &bn(&b.bn1)[..],
                &conv(&b.conv2)[..],
                &bn(&b.bn2)[..],
            ]
            .concat(),
            Block::Output(c) => conv(c).to_vec(),
        }
    }

    /// Mutable counterpart of [`Block::tensors`], same order.
    pub fn tensors_mut(&mut self) -> Vec<&mut [T]> {
        fn conv<T: Real>(c: &mut ConvParams<T>) -> [&mut [T]; 2] {
            [c.weight.data_mut(), &mut c.bias]
        }
        fn bn<T: Real>(b: &mut BnParams<T>) -> [&mut [T]; 4] {
            [
                &mut b.gamma,
                &mut b.beta,
                &mut b.running_mean,
                &mut b.running_var,
            ]
        }
        let mut out = Vec::new();
        match self {
            Block::Cbn(b) => {
                out.extend(conv(&mut b.conv));
                out.extend(bn(&mut b.bn));
            }
            Block::Branch(b) => {
                out.extend(conv(&mut b.cbn.conv));
                out.extend(bn(&mut b.cbn.bn));
                out.extend(conv(&mut b.conv_a));
                out.extend(conv(&mut b.conv_b));
            }
            Block::Res(b) => {
                out.extend(conv(&mut b.conv1));
                out.extend(bn(&mut b.bn1));
                out.extend(conv(&mut b.conv2));
                out.extend(bn(&mut b.bn2));
            }
            Block::Output(c) => out.extend(conv(c)),
        }
        out
    }

    pub fn batch_norms_mut(&mut self) -> Vec<&mut BnParams<T>> {
        match self {
            Block::Cbn(b) => vec![&mut b.bn],
            Block::Branch(b) => vec![&mut b.cbn.bn],
            Block::Res(b) => vec![&mut b.bn1, &mut b.bn2],
            Block::Output(_) => vec![],
        }
    }

    pub fn batch_norms(&self) -> Vec<&BnParams<T>> {
        match self {
            Block::Cbn(b) => vec![&b.bn],
            Block::Branch(b) => vec![&b.cbn.bn],
            Block::Res(b) => vec![&b.bn1, &b.bn2],
            Block::Output(_) => vec![],
        }
    }

    pub fn cast<U: Real>(&self) -> Block<U> {
        let cbn = |b: &CbnBlock<T>| CbnBlock {
            conv: b.conv.cast(),
            bn: b.bn.cast(),
        };
        match self {
            Block::Cbn(b) => Block::Cbn(cbn(b)),
            Block::Branch(b) => Block::Branch(BranchBlock {
                cbn: cbn(&b.cbn),
                conv_a: b.conv_a.cast(),
                conv_b: b.conv_b.cast(),
            }),
            Block::Res(b) => Block::Res(ResBlock {
                conv1: b.conv1.cast(),
                bn1: b.bn1.cast(),
                conv2: b.conv2.cast(),
                bn2: b.bn2.cast(),
            }),
            Block::Output(c) => Block::Output(c.cast()),
        }
    }
}

fn cbn_prefixed(name: &'static str) -> &'static str {
    match name {
        "conv.weight" => "cbn.conv.weight",
        "conv.bias" => "cbn.conv.bias",
        "bn.gamma" => "cbn.bn.gamma",
        "bn.beta" => "cbn.bn.beta",
        other => other,
    }
}

/// `relu(batchnorm(conv(x)))`.
pub fn cbn_forward<T: Real>(x: &Tensor<T>, block: &mut CbnBlock<T>, mode: Mode) -> Result<Tensor<T>> {
    Ok(block.forward_cached(x, mode)?.out)
}

/// `cbn(x) + conv_b(conv_a(x))`; the plain path has no normalization or activation.
pub fn branch_forward<T: Real>(
    x: &Tensor<T>,
    block: &mut BranchBlock<T>,
    mode: Mode,
) -> Result<Tensor<T>> {
    Ok(block.forward_state(x, mode)?.output)
}

/// `relu(x + F(x))` with `F = conv -> bn -> relu -> conv -> bn`.
pub fn res_forward<T: Real>(x: &Tensor<T>, block: &mut ResBlock<T>, mode: Mode) -> Result<Tensor<T>> {
    Ok(block.forward_state(x, mode)?.output)
}
