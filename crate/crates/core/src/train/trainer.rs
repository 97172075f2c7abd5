use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::{Checkpoint, EpochLoss, Network, NetworkSpec, TrainingMeta};
use crate::nn::Mode;
use crate::tensor::{Dims, Real, Tensor};
use crate::train::loss::noise_loss;
use crate::train::optim::{optimizer_step, AdamConfig, OptimizerState};
use crate::train::patches::{augment, PatchPair};
use crate::train::TrainConfig;
use crate::util::write_atomic;

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the best monitored loss.
    pub checkpoint: Checkpoint,
    pub history: Vec<EpochLoss>,
    pub best_epoch: u64,
    pub stopped_early: bool,
}

/// Splits `n` items into (train, validation) index lists: a seeded
/// permutation whose first `floor(n * fraction)` entries validate.
pub fn split_indices(n: usize, fraction: f64, rng: &mut ChaCha8Rng) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    let n_val = ((n as f64) * fraction).floor() as usize;
    let train = idx.split_off(n_val);
    (train, idx)
}

fn stack<T: Real>(pairs: &[PatchPair]) -> Result<(Tensor<T>, Tensor<T>)> {
    let (h, w) = pairs[0].dims();
    let mut x = Vec::with_capacity(pairs.len() * h * w);
    let mut y = Vec::with_capacity(pairs.len() * h * w);
    for p in pairs {
        if p.dims() != (h, w) {
            return Err(Error::shape(&[h, w], &[p.dims().0, p.dims().1], "patch dims in batch"));
        }
        x.extend(p.noisy().data().iter().map(|&v| T::from_f64_lossy(v)));
        y.extend(p.noise().data().iter().map(|&v| T::from_f64_lossy(v)));
    }
    let d = Dims::new(pairs.len(), 1, h, w);
    Ok((Tensor::new(d, x)?, Tensor::new(d, y)?))
}

/// Pixel-weighted mean noise-residual loss of `network` (inference mode) over `pairs`.
pub fn evaluate_loss<T: Real>(network: &Network<T>, pairs: &[PatchPair], batch: usize) -> Result<f64> {
    let (mut sum, mut count) = (0.0, 0usize);
    for chunk in pairs.chunks(batch.max(1)) {
        let (x, target) = stack::<T>(chunk)?;
        let pred = network.predict(&x)?;
        let (loss, _) = noise_loss(&pred, &target)?;
        let n = x.data().len();
        sum += loss * n as f64;
        count += n;
    }
    Ok(sum / count as f64)
}

/// Trains a freshly initialized network (seeded by `config.seed`).
pub fn train_loop<T: Real>(
    dataset: &[PatchPair],
    spec: NetworkSpec,
    config: &TrainConfig,
    progress: &mut dyn FnMut(&EpochLoss),
) -> Result<TrainOutcome> {
    let network = Network::<f64>::init(spec, config.seed)?.cast::<T>();
    train_network(network, dataset, config, progress)
}

/// Mini-batch training of `network` on `dataset`.
///
/// A seeded permutation holds out `floor(n * validation_fraction)` patches.
/// Each epoch reshuffles the rest, optionally flips patches, and takes one
/// optimizer step per batch. Training stops after `early_stop_patience`
/// epochs without improvement of the validation loss (the training loss when
/// the split leaves no validation patches) and returns the best epoch.
pub fn train_network<T: Real>(
    mut network: Network<T>,
    dataset: &[PatchPair],
    config: &TrainConfig,
    progress: &mut dyn FnMut(&EpochLoss),
) -> Result<TrainOutcome> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::Input("training set is empty".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let (mut train_idx, val_idx) = split_indices(dataset.len(), config.validation_fraction, &mut rng);
    if train_idx.is_empty() {
        return Err(Error::Input("no training patches left after the validation split".into()));
    }
    let val: Vec<PatchPair> = val_idx.iter().map(|&i| dataset[i].clone()).collect();

    let names = network.param_names();
    let mut state = OptimizerState::new(network.params().iter().map(|p| p.len()));
    let adam = AdamConfig::from(config);
    let mut history = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, u64, Network<f64>)> = None;
    let mut since_best = 0;
    let mut stopped_early = false;

    for epoch in 1..=config.epochs {
        train_idx.shuffle(&mut rng);
        let (mut sum, mut count) = (0.0, 0usize);
        for (b, chunk) in train_idx.chunks(config.batch_size).enumerate() {
            let batch: Vec<PatchPair> = chunk
                .iter()
                .map(|&i| augment(&dataset[i], config, &mut rng))
                .collect();
            let (x, target) = stack::<T>(&batch)?;
            let trace = network.forward_trace(&x, Mode::Train)?;
            let (loss, grad) = noise_loss(trace.output(), &target)?;
            if !loss.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    batch: b,
                    loss,
                });
            }
            let grads = network.backward(&x, trace, grad)?;
            optimizer_step(&mut network.params_mut(), &grads.params, &names, &mut state, &adam)?;
            sum += loss * x.data().len() as f64;
            count += x.data().len();
        }
        let train_loss = sum / count as f64;
        let val_loss = if val.is_empty() {
            f64::NAN
        } else {
            evaluate_loss(&network, &val, config.batch_size)?
        };
        if !val_loss.is_nan() && !val_loss.is_finite() {
            return Err(Error::Divergence {
                epoch,
                batch: 0,
                loss: val_loss,
            });
        }
        let record = EpochLoss {
            epoch: epoch as u64,
            train_loss,
            val_loss,
        };
        progress(&record);
        history.push(record);

        let monitored = if val.is_empty() { train_loss } else { val_loss };
        if best.as_ref().map_or(true, |(b, _, _)| monitored < *b) {
            best = Some((monitored, epoch as u64, network.cast()));
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= config.early_stop_patience {
                stopped_early = true;
                break;
            }
        }
    }

    let (_, best_epoch, best_net) = best.expect("at least one epoch ran");
    Ok(TrainOutcome {
        checkpoint: Checkpoint::new(
            best_net,
            TrainingMeta {
                epoch: best_epoch,
                seed: config.seed,
                history: history.clone(),
            },
        ),
        history,
        best_epoch,
        stopped_early,
    })
}

/// `epoch,train_loss,val_loss` rows; a missing validation loss is left empty.
pub fn loss_csv(history: &[EpochLoss]) -> String {
    let mut out = String::from("epoch,train_loss,val_loss\n");
    for e in history {
        let val = if e.val_loss.is_nan() {
            String::new()
        } else {
            format!("{:.9e}", e.val_loss)
        };
        writeln!(out, "{},{:.9e},{val}", e.epoch, e.train_loss).unwrap();
    }
    out
}

pub fn write_loss_csv(history: &[EpochLoss], path: &Path) -> Result<()> {
    write_atomic(path, loss_csv(history).as_bytes())
}
