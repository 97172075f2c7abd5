use std::fs;
use std::path::{Path, PathBuf};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cli::args::{
    DenoiseArgs, EvalArgs, Format, MethodName, PrepareArgs, Precision, SynthArgs, TrainArgs,
};
use crate::dataprep::{
    add_speckle, build_ground_truth, layered_phantom, list_images, read_image, read_volumes,
    write_image, Image,
};
use crate::error::{Error, Result};
use crate::eval::{
    evaluate_report, median_filter, nlm_filter, sweep_best, EvalOptions, EvalPair, Method, RoiMask,
};
use crate::model::{denoise, Checkpoint, Network, NetworkSpec};
use crate::train::{extract_patches, train_loop, write_loss_csv, TrainOutcome};

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn file_name(path: &Path) -> Result<String> {
    path.file_name()
        .and_then(|n| n.to_str())
        .map(str::to_string)
        .ok_or_else(|| Error::Input(format!("{} has no usable file name", path.display())))
}

fn stem(path: &Path) -> Result<String> {
    path.file_stem()
        .and_then(|n| n.to_str())
        .map(str::to_string)
        .ok_or_else(|| Error::Input(format!("{} has no usable file name", path.display())))
}

fn write_pair(out: &Path, name: &str, format: Format, noisy: &Image, clean: &Image) -> Result<()> {
    let file = format!("{name}.{}", format.ext());
    write_image(noisy, &out.join("noisy").join(&file))?;
    write_image(clean, &out.join("clean").join(&file))
}

/// Pairs from `<dir>/noisy/*` and the same-named files in `<dir>/clean/`.
pub fn read_pairs(dir: &Path) -> Result<Vec<EvalPair>> {
    let noisy_dir = dir.join("noisy");
    let files = list_images(&noisy_dir)?;
    if files.is_empty() {
        return Err(Error::Input(format!("{} holds no images", noisy_dir.display())));
    }
    files
        .iter()
        .map(|f| {
            let name = file_name(f)?;
            let noisy = read_image(f)?;
            let clean = read_image(&dir.join("clean").join(&name))?;
            noisy.same_dims(&clean)?;
            Ok(EvalPair {
                id: stem(f)?,
                noisy,
                clean,
            })
        })
        .collect()
}

pub fn prepare(args: &PrepareArgs) -> Result<()> {
    let config = args.config();
    let volumes = read_volumes(&args.volumes)?;
    eprintln!(
        "prepare: {} volumes, target {}, building {} pairs",
        volumes.len(),
        args.target,
        volumes.get(args.target).map_or(0, |v| v.len())
    );
    let pairs = build_ground_truth(&volumes, args.target, &config)?;
    create_dir(&args.out.join("noisy"))?;
    create_dir(&args.out.join("clean"))?;
    let digits = pairs.len().to_string().len().max(3);
    for p in &pairs {
        write_pair(&args.out, &format!("{:0digits$}", p.scan), args.format, &p.noisy, &p.clean)?;
    }
    Ok(())
}

pub fn synth(args: &SynthArgs) -> Result<()> {
    let mut seeds = ChaCha8Rng::seed_from_u64(args.seed);
    let cleans: Vec<(String, Image)> = match (&args.input, args.phantoms) {
        (Some(dir), _) => list_images(dir)?
            .iter()
            .map(|f| Ok((stem(f)?, read_image(f)?.clamped())))
            .collect::<Result<_>>()?,
        (None, Some(n)) => {
            if args.height < 1 || args.width < 1 {
                return Err(Error::Config("phantom size must be non-zero".into()));
            }
            let digits = n.to_string().len().max(3);
            (0..n)
                .map(|i| {
                    let seed = seeds.next_u64();
                    (format!("{i:0digits$}"), layered_phantom(args.height, args.width, seed))
                })
                .collect()
        }
        (None, None) => return Err(Error::Config("give --input or --phantoms".into())),
    };
    if cleans.is_empty() {
        return Err(Error::Input("no clean images to speckle".into()));
    }
    create_dir(&args.out.join("noisy"))?;
    create_dir(&args.out.join("clean"))?;
    for (name, clean) in &cleans {
        let noisy = add_speckle(clean, &args.speckle(seeds.next_u64()))?;
        write_pair(&args.out, name, args.format, &noisy, clean)?;
    }
    eprintln!("synth: wrote {} pairs to {}", cleans.len(), args.out.display());
    Ok(())
}

pub fn train(args: &TrainArgs) -> Result<()> {
    let config = args.config();
    config.validate()?;
    let pairs = read_pairs(&args.pairs)?;
    let mut patches = Vec::new();
    for p in &pairs {
        patches.extend(extract_patches(&p.noisy, &p.clean, &config)?);
    }
    eprintln!("train: {} patches from {} pairs", patches.len(), pairs.len());
    let mut progress = |e: &crate::model::EpochLoss| {
        if e.val_loss.is_nan() {
            eprintln!("epoch {:>4}  train {:.6e}", e.epoch, e.train_loss);
        } else {
            eprintln!(
                "epoch {:>4}  train {:.6e}  val {:.6e}",
                e.epoch, e.train_loss, e.val_loss
            );
        }
    };
    let spec = NetworkSpec::default();
    let outcome: TrainOutcome = match args.precision {
        Precision::F32 => train_loop::<f32>(&patches, spec, &config, &mut progress)?,
        Precision::F64 => train_loop::<f64>(&patches, spec, &config, &mut progress)?,
    };
    outcome.checkpoint.save(&args.out)?;
    let csv = args
        .loss_csv
        .clone()
        .unwrap_or_else(|| args.out.with_extension("loss.csv"));
    write_loss_csv(&outcome.history, &csv)?;
    eprintln!(
        "train: best epoch {} of {}{}; wrote {}",
        outcome.best_epoch,
        outcome.history.len(),
        if outcome.stopped_early { " (stopped early)" } else { "" },
        args.out.display()
    );
    Ok(())
}

fn expand_inputs(inputs: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for p in inputs {
        if p.is_dir() {
            out.extend(list_images(p)?);
        } else {
            out.push(p.clone());
        }
    }
    Ok(out)
}

/// A network in the requested precision.
enum Loaded {
    F32(Network<f32>),
    F64(Network<f64>),
}

impl Loaded {
    fn load(path: &Path, precision: Precision) -> Result<Self> {
        let net = Checkpoint::load(path)?.network;
        net.spec().audit()?;
        Ok(match precision {
            Precision::F32 => Loaded::F32(net.cast()),
            Precision::F64 => Loaded::F64(net),
        })
    }

    fn denoise(&self, img: &Image) -> Result<Image> {
        match self {
            Loaded::F32(n) => denoise(img, n),
            Loaded::F64(n) => denoise(img, n),
        }
    }
}

pub fn denoise_cmd(args: &DenoiseArgs) -> Result<()> {
    let net = Loaded::load(&args.checkpoint, args.precision)?;
    let files = expand_inputs(&args.inputs)?;
    if files.is_empty() {
        return Err(Error::Input("no input images".into()));
    }
    create_dir(&args.out)?;
    for f in &files {
        let out = net.denoise(&read_image(f)?)?;
        write_image(&out, &args.out.join(file_name(f)?))?;
    }
    eprintln!("denoise: wrote {} images to {}", files.len(), args.out.display());
    Ok(())
}

pub fn eval(args: &EvalArgs) -> Result<()> {
    let pairs = read_pairs(&args.pairs)?;
    let roi = match args.roi {
        Some(w) => {
            let (h, wd) = pairs[0].noisy.dims();
            Some(RoiMask::rect(h, wd, w.y, w.x, w.height, w.width)?)
        }
        None => None,
    };
    let options = EvalOptions {
        ssim: args.ssim.config(),
        peak: args.peak,
        roi,
    };
    options.ssim.validate()?;

    let net = match (args.methods.contains(&MethodName::Model), &args.checkpoint) {
        (true, Some(path)) => Some(Loaded::load(path, args.precision)?),
        (true, None) => return Err(Error::Config("method `model` needs --checkpoint".into())),
        (false, _) => None,
    };

    let mut methods = Vec::new();
    for m in &args.methods {
        match m {
            MethodName::Noisy => methods.push(Method::new("noisy", |img: &Image| Ok(img.clone()))),
            MethodName::Median => {
                let (w, _) = sweep_best(&pairs, &args.median_windows, args.peak, median_filter)?;
                methods.push(Method::new(format!("median(w={w})"), move |img: &Image| {
                    median_filter(img, w)
                }));
            }
            MethodName::Nlm => {
                let grid: Vec<(usize, usize, f64)> = args
                    .nlm_patch
                    .iter()
                    .flat_map(|&p| {
                        args.nlm_search
                            .iter()
                            .flat_map(move |&s| args.nlm_h.iter().map(move |&h| (p, s, h)))
                    })
                    .collect();
                let ((p, s, h), _) = sweep_best(&pairs, &grid, args.peak, |img, (p, s, h)| {
                    nlm_filter(img, p, s, h)
                })?;
                methods.push(Method::new(format!("nlm(p={p},s={s},h={h})"), move |img: &Image| {
                    nlm_filter(img, p, s, h)
                }));
            }
            MethodName::Model => {
                let net = net.as_ref().expect("loaded above");
                methods.push(Method::new("model", move |img: &Image| net.denoise(img)));
            }
        }
    }
    let report = evaluate_report(&pairs, &methods, &options)?;
    report.write(&args.out)?;
    eprint!("{}", report.to_table());
    Ok(())
}
