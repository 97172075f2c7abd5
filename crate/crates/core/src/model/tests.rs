use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::dataprep::Image;
use crate::error::Error;
use crate::nn::{grad_check, Mode};
use crate::tensor::{Dims, Tensor};

fn random_tensor(d: Dims, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::new(d, (0..d.len()).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn flat_params(block: &Block) -> Vec<f64> {
    block.params().iter().flat_map(|(_, p)| p.iter().copied()).collect()
}

fn set_params(block: &mut Block, flat: &[f64]) {
    let mut i = 0;
    for p in block.params_mut() {
        p.copy_from_slice(&flat[i..i + p.len()]);
        i += p.len();
    }
}

/// Checks input and parameter gradients of one block in training mode.
fn check_block(mut block: Block, in_dims: Dims, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Non-trivial scales and shifts so the check sees more than the defaults.
    for p in block.params_mut() {
        for v in p.iter_mut() {
            *v = rng.gen_range(-0.8..0.8);
        }
    }
    let x = random_tensor(in_dims, &mut rng);
    let n_in = in_dims.len();
    let mut point = x.data().to_vec();
    point.extend(flat_params(&block));

    let split = |p: &[f64]| {
        let mut b = block.clone();
        set_params(&mut b, &p[n_in..]);
        (Tensor::new(in_dims, p[..n_in].to_vec()).unwrap(), b)
    };
    let report = grad_check(
        &point,
        1e-4,
        |p| {
            let (x, mut b) = split(p);
            Ok(b.forward(&x, Mode::Train)?.output)
        },
        |p, up| {
            let (x, mut b) = split(p);
            let state = b.forward(&x, Mode::Train)?;
            let (gin, gparams) = b.backward(&x, &state, up.clone())?;
            let mut g = gin.into_data();
            g.extend(gparams.into_iter().flatten());
            Ok(g)
        },
    )
    .unwrap();
    assert!(report.passed(), "{report:?}");
}

#[test]
fn cbn_block_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    check_block(Block::Cbn(CbnBlock::new(2, 3, 3, &mut rng)), Dims::new(2, 2, 5, 4), 11);
}

#[test]
fn branch_block_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    check_block(Block::Branch(BranchBlock::new(2, 3, &mut rng)), Dims::new(2, 2, 4, 5), 12);
}

#[test]
fn res_block_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    check_block(Block::Res(ResBlock::new(2, 3, &mut rng)), Dims::new(2, 2, 5, 5), 13);
}

#[test]
fn output_block_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let conv = crate::nn::ConvParams::he_normal(1, 3, 3, &mut rng);
    check_block(Block::Output(conv), Dims::new(1, 3, 4, 4), 14);
}

#[test]
fn whole_network_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut net = Network::<f64>::init(NetworkSpec::with_width(2), 9).unwrap();
    for p in net.params_mut() {
        for v in p.iter_mut() {
            *v = rng.gen_range(-0.8..0.8);
        }
    }
    let d = Dims::new(2, 1, 6, 5);
    let x = random_tensor(d, &mut rng);
    let point: Vec<f64> = net.params().iter().flat_map(|p| p.iter().copied()).collect();
    let with = |p: &[f64]| {
        let mut n = net.clone();
        let mut i = 0;
        for s in n.params_mut() {
            s.copy_from_slice(&p[i..i + s.len()]);
            i += s.len();
        }
        n
    };
    let report = grad_check(
        &point,
        1e-4,
        |p| with(p).forward(&x, Mode::Train),
        |p, up| {
            let mut n = with(p);
            let trace = n.forward_trace(&x, Mode::Train)?;
            Ok(n.backward(&x, trace, up.clone())?.params.into_iter().flatten().collect())
        },
    )
    .unwrap();
    assert!(report.passed(), "{report:?}");
    assert_eq!(report.checked, net.param_count());
}

#[test]
fn output_matches_input_size() {
    let net = Network::<f64>::init(NetworkSpec::with_width(4), 0).unwrap();
    for (h, w) in [(3, 3), (7, 9), (16, 5)] {
        let x = Tensor::filled(Dims::new(2, 1, h, w), 0.5);
        assert_eq!(net.predict(&x).unwrap().dims(), x.dims());
    }
    assert!(net.predict(&Tensor::zeros(Dims::new(1, 1, 2, 8))).is_err());
    assert!(net.predict(&Tensor::zeros(Dims::new(1, 2, 8, 8))).is_err());
}

#[test]
fn init_and_prediction_are_deterministic() {
    let spec = NetworkSpec::with_width(4);
    let a = Network::<f64>::init(spec.clone(), 7).unwrap();
    assert_eq!(a, Network::init(spec.clone(), 7).unwrap());
    assert_ne!(a, Network::init(spec, 8).unwrap());
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let x = random_tensor(Dims::new(1, 1, 9, 9), &mut rng);
    assert_eq!(a.predict(&x).unwrap(), a.predict(&x).unwrap());
}

#[test]
fn fresh_network_denoises_to_identity() {
    let net = Network::<f64>::init(NetworkSpec::with_width(4), 3).unwrap();
    let img = Image::new(4, 5, (0..20).map(|i| i as f64 / 19.0).collect()).unwrap();
    assert_eq!(denoise(&img, &net).unwrap(), img);
}

#[test]
fn subtract_noise_clamps() {
    let img = Image::new(1, 3, vec![0.2, 0.5, 0.9]).unwrap();
    let noise = Tensor::new(Dims::new(1, 1, 1, 3), vec![0.5, 0.25, -0.5]).unwrap();
    let out = subtract_noise(&img, &noise).unwrap();
    assert_eq!(out.data(), &[0.0, 0.25, 1.0]);
}

#[test]
fn infer_mode_leaves_running_stats_alone() {
    let mut net = Network::<f64>::init(NetworkSpec::with_width(3), 1).unwrap();
    let before = net.clone();
    let x = Tensor::filled(Dims::new(1, 1, 5, 5), 0.3);
    net.forward(&x, Mode::Infer).unwrap();
    assert_eq!(net, before);
    net.forward(&x, Mode::Train).unwrap();
    assert_ne!(net, before);
}

fn sample_checkpoint() -> Checkpoint {
    let mut net = Network::<f64>::init(NetworkSpec::with_width(3), 4).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for p in net.params_mut() {
        for v in p.iter_mut() {
            *v = rng.gen_range(-1.0..1.0);
        }
    }
    net.forward(&Tensor::filled(Dims::new(1, 1, 4, 4), 0.25), Mode::Train).unwrap();
    Checkpoint::new(
        net,
        TrainingMeta {
            epoch: 2,
            seed: 9,
            history: vec![
                EpochLoss { epoch: 1, train_loss: 0.5, val_loss: 0.6 },
                EpochLoss { epoch: 2, train_loss: 0.25, val_loss: f64::NAN },
            ],
        },
    )
}

#[test]
fn checkpoint_round_trip_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    let ck = sample_checkpoint();
    ck.save(&path).unwrap();
    let back = Checkpoint::load(&path).unwrap();
    assert_eq!(back.network, ck.network);
    assert_eq!(back.meta.epoch, 2);
    assert_eq!(back.meta.history[0], ck.meta.history[0]);
    assert!(back.meta.history[1].val_loss.is_nan());

    back.save(&dir.path().join("again.ckpt")).unwrap();
    assert_eq!(
        std::fs::read(&path).unwrap(),
        std::fs::read(dir.path().join("again.ckpt")).unwrap()
    );
}

#[test]
fn checkpoint_corruption_is_reported() {
    let bytes = sample_checkpoint().to_bytes();
    let p = Path::new("c.ckpt");

    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(matches!(Checkpoint::from_bytes(&bad, p), Err(Error::BadMagic { .. })));

    let mut bad = bytes.clone();
    bad[4..8].copy_from_slice(&(VERSION + 1).to_le_bytes());
    assert!(matches!(
        Checkpoint::from_bytes(&bad, p),
        Err(Error::VersionMismatch { found, .. }) if found == VERSION + 1
    ));

    for cut in [3, 20, bytes.len() / 2, bytes.len() - 1] {
        assert!(
            matches!(Checkpoint::from_bytes(&bytes[..cut], p), Err(Error::Truncated { .. })),
            "cut at {cut}"
        );
    }

    let mut bad = bytes.clone();
    let mid = bytes.len() - 100;
    bad[mid] ^= 0x10;
    assert!(matches!(Checkpoint::from_bytes(&bad, p), Err(Error::Checksum { .. })));
}

#[test]
fn f32_forward_agrees_with_f64() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut net = Network::<f64>::init(NetworkSpec::with_width(8), 2).unwrap();
    if let Some(Block::Output(conv)) = net.blocks_mut().last_mut() {
        *conv = crate::nn::ConvParams::he_normal(1, 8, 3, &mut rng);
    }
    let x = random_tensor(Dims::new(2, 1, 16, 12), &mut rng).map(|v| 0.5 + 0.5 * v);
    let want = net.predict(&x).unwrap();
    let got = net.cast::<f32>().predict(&x.cast()).unwrap();
    let scale = want.data().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    assert!(scale > 0.1);
    for (a, b) in got.data().iter().zip(want.data()) {
        assert!((*a as f64 - b).abs() <= 1e-4 * scale, "{a} vs {b}");
    }
}
