use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataprep::Image;
use crate::error::{Error, Result};
use crate::model::blocks::{Block, BlockState, BranchBlock, CbnBlock, ResBlock};
use crate::model::spec::{BlockKind, NetworkSpec};
use crate::nn::{BnParams, ConvParams, Mode};
use crate::tensor::{Dims, Real, Tensor};

/// Smallest spatial extent accepted by the network.
pub const MIN_SIDE: usize = 3;

/// The noise-predicting network: a [`NetworkSpec`] and its block parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Network<T: Real = f64> {
    spec: NetworkSpec,
    blocks: Vec<Block<T>>,
}

/// Cached block outputs from a forward pass, needed by [`Network::backward`].
#[derive(Debug)]
pub struct ForwardTrace<T: Real> {
    states: Vec<BlockState<T>>,
}

impl<T: Real> ForwardTrace<T> {
    /// The network output (predicted noise).
    pub fn output(&self) -> &Tensor<T> {
        &self.states.last().expect("non-empty network").output
    }
}

#[derive(Debug)]
pub struct Gradients<T: Real> {
    pub input: Tensor<T>,
    /// One vector per trainable parameter, in [`Network::params`] order.
    pub params: Vec<Vec<T>>,
}

impl<T: Real> Network<T> {
    /// He-initialized trunk with a zero output head; deterministic in `seed`.
    pub fn init(spec: NetworkSpec, seed: u64) -> Result<Self> {
        spec.audit()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (w, s, c) = (spec.width(), spec.kernel(), spec.in_channels());
        let mut in_ch = c;
        let blocks = spec
            .blocks()
            .iter()
            .map(|kind| {
                let block = match kind {
                    BlockKind::Cbn => Block::Cbn(CbnBlock::new(in_ch, w, s, &mut rng)),
                    BlockKind::Branch => Block::Branch(BranchBlock::new(w, s, &mut rng)),
                    BlockKind::Res => Block::Res(ResBlock::new(w, s, &mut rng)),
                    // The head starts at zero so an untrained model predicts
                    // no noise and denoising starts from the identity.
                    BlockKind::OutputConv => Block::Output(ConvParams::zeros(c, w, s)),
                };
                in_ch = w;
                block
            })
            .collect();
        Ok(Network { spec, blocks })
    }

    /// Network with every convolution weight and bias set to zero and
    /// default batch-norm parameters; it predicts zero noise everywhere.
    pub fn zeroed(spec: NetworkSpec) -> Result<Self> {
        let mut net = Self::init(spec, 0)?;
        for block in &mut net.blocks {
            for p in block.params_mut() {
                p.fill(T::zero());
            }
            for bn in block.batch_norms_mut() {
                *bn = BnParams::new(bn.channels());
            }
        }
        Ok(net)
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn blocks(&self) -> &[Block<T>] {
        &self.blocks
    }

    pub fn blocks_mut(&mut self) -> &mut [Block<T>] {
        &mut self.blocks
    }

    pub fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        let d = x.dims();
        if d.c != self.spec.in_channels() {
            return Err(Error::Input(format!(
                "expected {} image channel(s), got {}",
                self.spec.in_channels(),
                d.c
            )));
        }
        if d.h < MIN_SIDE || d.w < MIN_SIDE {
            return Err(Error::Input(format!(
                "input {}x{} is below the {MIN_SIDE}x{MIN_SIDE} minimum",
                d.h, d.w
            )));
        }
        Ok(())
    }

    /// Forward pass keeping the intermediate state for [`Network::backward`].
    pub fn forward_trace(&mut self, x: &Tensor<T>, mode: Mode) -> Result<ForwardTrace<T>> {
        self.check_input(x)?;
        let mut states: Vec<BlockState<T>> = Vec::with_capacity(self.blocks.len());
        for block in &mut self.blocks {
            let input = states.last().map_or(x, |s| &s.output);
            let state = block.forward(input, mode)?;
            states.push(state);
        }
        Ok(ForwardTrace { states })
    }

    /// Predicted noise. `Train` uses batch statistics and updates running
    /// statistics; `Infer` is equivalent to [`Network::predict`].
    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        match mode {
            Mode::Infer => self.predict(x),
            Mode::Train => {
                let mut trace = self.forward_trace(x, mode)?;
                Ok(trace.states.pop().expect("non-empty network").output)
            }
        }
    }

    /// Inference-mode noise prediction; read-only and deterministic.
    pub fn predict(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(x)?;
        let mut cur: Option<Tensor<T>> = None;
        for block in &self.blocks {
            let next = block.infer(cur.as_ref().unwrap_or(x))?;
            cur = Some(next);
        }
        Ok(cur.expect("non-empty network"))
    }

    /// Backpropagates `grad_out` (gradient of the loss with respect to the
    /// network output) through a trace, consuming it.
    pub fn backward(
        &self,
        x: &Tensor<T>,
        mut trace: ForwardTrace<T>,
        grad_out: Tensor<T>,
    ) -> Result<Gradients<T>> {
        let mut grad = grad_out;
        let mut per_block = Vec::with_capacity(self.blocks.len());
        for block in self.blocks.iter().rev() {
            let state = trace.states.pop().expect("trace matches network");
            let input = trace.states.last().map_or(x, |s| &s.output);
            let (g_in, g_params) = block.backward(input, &state, grad)?;
            drop(state);
            grad = g_in;
            per_block.push(g_params);
        }
        per_block.reverse();
        Ok(Gradients {
            input: grad,
            params: per_block.into_iter().flatten().collect(),
        })
    }

    /// Dotted names of the trainable parameters, e.g. `blocks[3].conv1.weight`.
    pub fn param_names(&self) -> Vec<String> {
        self.blocks
            .iter()
            .enumerate()
            .flat_map(|(i, b)| {
                b.params()
                    .into_iter()
                    .map(move |(name, _)| format!("blocks[{i}].{name}"))
            })
            .collect()
    }

    pub fn params(&self) -> Vec<&[T]> {
        self.blocks
            .iter()
            .flat_map(|b| b.params().into_iter().map(|(_, p)| p))
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut [T]> {
        self.blocks.iter_mut().flat_map(|b| b.params_mut()).collect()
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    pub fn cast<U: Real>(&self) -> Network<U> {
        Network {
            spec: self.spec.clone(),
            blocks: self.blocks.iter().map(|b| b.cast()).collect(),
        }
    }
}

/// Predicted noise for a batch of single-channel images `(n, 1, h, w)`.
pub fn network_forward<T: Real>(
    noisy: &Tensor<T>,
    network: &mut Network<T>,
    mode: Mode,
) -> Result<Tensor<T>> {
    network.forward(noisy, mode)
}

/// `clamp(noisy - predicted_noise, 0, 1)`, computed in precision `T`.
pub fn denoise<T: Real>(noisy: &Image, network: &Network<T>) -> Result<Image> {
    let x: Tensor<T> = noisy.to_tensor();
    let noise = network.predict(&x)?;
    subtract_noise(noisy, &noise)
}

/// `clamp(noisy - noise, 0, 1)`.
pub fn subtract_noise<T: Real>(noisy: &Image, noise: &Tensor<T>) -> Result<Image> {
    let d = Dims::new(1, 1, noisy.height(), noisy.width());
    if noise.dims() != d {
        return Err(Error::shape(
            &noise.dims().as_array(),
            &d.as_array(),
            "predicted noise vs image",
        ));
    }
    let data = noisy
        .data()
        .iter()
        .zip(noise.data())
        .map(|(&v, &n)| (v - n.to_f64_lossy()).clamp(0.0, 1.0))
        .collect();
    Image::new(noisy.height(), noisy.width(), data)
}
