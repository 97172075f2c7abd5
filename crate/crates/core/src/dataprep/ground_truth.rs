//! Clean references by registering and averaging repeated scans.
//!
//! For each B-scan of the target volume, the nearest-index scans of every
//! other volume are aligned to it, ranked by SSIM against it, and the best
//! `selected` of them are averaged together with the target itself.

use rayon::prelude::*;

use crate::dataprep::register::register_affine;
use crate::dataprep::warp::{warp_affine_covered, AffineTransform};
use crate::dataprep::{CropWindow, Image, Volume};
use crate::error::{Error, Result};
use crate::eval::metrics::{ssim, SsimConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthConfig {
    /// Number of repeated volumes (M).
    pub volumes: usize,
    /// Nearby B-scans taken from each non-target volume (N).
    pub nearby: usize,
    /// Candidates averaged with the target (L).
    pub selected: usize,
    /// Optional region every scan is cropped to before registration.
    pub crop: Option<CropWindow>,
    pub ssim: SsimConfig,
}

impl Default for GroundTruthConfig {
    fn default() -> Self {
        GroundTruthConfig {
            volumes: 20,
            nearby: 7,
            selected: 10,
            crop: None,
            ssim: SsimConfig::default(),
        }
    }
}

impl GroundTruthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.volumes < 2 {
            return Err(Error::Config(format!("need M >= 2 volumes, got {}", self.volumes)));
        }
        if self.nearby == 0 {
            return Err(Error::Config("need N >= 1 nearby B-scans".into()));
        }
        let pool = self.nearby * (self.volumes - 1);
        if self.selected > pool {
            return Err(Error::Config(format!(
                "L = {} exceeds the N(M-1) = {pool} candidates",
                self.selected
            )));
        }
        self.ssim.validate()
    }

    /// Checks the config against the supplied stack.
    pub fn check_stack(&self, volumes: &[Volume], target: usize) -> Result<()> {
        self.validate()?;
        if volumes.len() != self.volumes {
            return Err(Error::Config(format!(
                "configured for M = {} volumes but {} were supplied",
                self.volumes,
                volumes.len()
            )));
        }
        if target >= volumes.len() {
            return Err(Error::Config(format!(
                "target volume {target} out of range 0..{}",
                volumes.len()
            )));
        }
        let (len, dims) = (volumes[0].len(), volumes[0].scan_dims());
        for (i, v) in volumes.iter().enumerate() {
            if v.len() != len || v.scan_dims() != dims {
                return Err(Error::Config(format!(
                    "volume {i} is {} scans of {:?}, volume 0 is {len} scans of {dims:?}",
                    v.len(),
                    v.scan_dims()
                )));
            }
        }
        if self.nearby > len {
            return Err(Error::Config(format!(
                "N = {} nearby scans but volumes hold only {len}",
                self.nearby
            )));
        }
        Ok(())
    }
}

/// `n` consecutive indices centered on `center`, shifted to stay in `0..len`.
pub fn nearby_scans(center: usize, n: usize, len: usize) -> std::ops::Range<usize> {
    let start = center.saturating_sub(n / 2).min(len.saturating_sub(n));
    start..(start + n).min(len)
}

/// A registered candidate scan and its SSIM against the target.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub volume: usize,
    pub scan: usize,
    pub transform: AffineTransform,
    pub ssim: f64,
}

#[derive(Debug, Clone)]
pub struct GroundTruthPair {
    pub scan: usize,
    pub noisy: Image,
    pub clean: Image,
    /// The averaged candidates, best first.
    pub selected: Vec<Candidate>,
}

/// Indices of the `l` highest scores; ties go to the lower volume, then the
/// lower scan index.
pub fn select_top(candidates: &[Candidate], l: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.sort_by(|&i, &j| {
        let (a, b) = (&candidates[i], &candidates[j]);
        b.ssim
            .total_cmp(&a.ssim)
            .then(a.volume.cmp(&b.volume))
            .then(a.scan.cmp(&b.scan))
    });
    order.truncate(l);
    order
}

/// Ground truth for every scan of volume `target`, in scan order.
pub fn build_ground_truth(
    volumes: &[Volume],
    target: usize,
    config: &GroundTruthConfig,
) -> Result<Vec<GroundTruthPair>> {
    let scans: Vec<usize> = (0..volumes.first().map_or(0, Volume::len)).collect();
    build_ground_truth_for(volumes, target, &scans, config)
}

/// Ground truth for the listed scans of volume `target`.
pub fn build_ground_truth_for(
    volumes: &[Volume],
    target: usize,
    scans: &[usize],
    config: &GroundTruthConfig,
) -> Result<Vec<GroundTruthPair>> {
    config.check_stack(volumes, target)?;
    let cropped: Vec<Volume>;
    let volumes = match &config.crop {
        Some(window) => {
            cropped = volumes.iter().map(|v| v.crop(window)).collect::<Result<_>>()?;
            &cropped
        }
        None => volumes,
    };
    let len = volumes[target].len();
    scans
        .iter()
        .map(|&scan| {
            if scan >= len {
                return Err(Error::Input(format!("scan {scan} out of range 0..{len}")));
            }
            ground_truth_scan(volumes, target, scan, config)
        })
        .collect()
}

fn ground_truth_scan(
    volumes: &[Volume],
    target: usize,
    scan: usize,
    config: &GroundTruthConfig,
) -> Result<GroundTruthPair> {
    let fixed = &volumes[target].slices()[scan];
    let sources: Vec<(usize, usize)> = (0..volumes.len())
        .filter(|&v| v != target)
        .flat_map(|v| nearby_scans(scan, config.nearby, volumes[v].len()).map(move |s| (v, s)))
        .collect();

    let registered: Vec<(Candidate, Image, Vec<bool>)> = sources
        .par_iter()
        .map(|&(v, s)| {
            let moving = &volumes[v].slices()[s];
            // A blank scan cannot be aligned; keep it unmoved and let the
            // SSIM ranking decide whether it is used.
            let transform = match register_affine(moving, fixed) {
                Ok(r) => r.transform,
                Err(Error::Degenerate(_)) => AffineTransform::IDENTITY,
                Err(e) => return Err(e),
            };
            let (warped, covered) = warp_affine_covered(moving, &transform)?;
            let score = ssim(&warped, fixed, &config.ssim)?;
            Ok((
                Candidate {
                    volume: v,
                    scan: s,
                    transform,
                    ssim: score,
                },
                warped,
                covered,
            ))
        })
        .collect::<Result<_>>()?;

    let candidates: Vec<Candidate> = registered.iter().map(|(c, ..)| c.clone()).collect();
    let top = select_top(&candidates, config.selected);

    // Per-pixel mean of the target and the selected images that cover the
    // pixel after warping, accumulated as offsets from the target so
    // identical inputs reproduce it exactly.
    let mut offset = vec![0.0; fixed.len()];
    let mut count = vec![1.0; fixed.len()];
    for &i in &top {
        let (_, warped, covered) = &registered[i];
        for (p, f) in fixed.data().iter().enumerate() {
            if covered[p] {
                offset[p] += warped.data()[p] - f;
                count[p] += 1.0;
            }
        }
    }
    let clean = Image::new(
        fixed.height(),
        fixed.width(),
        fixed
            .data()
            .iter()
            .zip(offset.iter().zip(&count))
            .map(|(f, (o, n))| f + o / n)
            .collect(),
    )?;
    Ok(GroundTruthPair {
        scan,
        noisy: fixed.clone(),
        clean,
        selected: top.iter().map(|&i| candidates[i].clone()).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cand(volume: usize, scan: usize, ssim: f64) -> Candidate {
        Candidate {
            volume,
            scan,
            transform: AffineTransform::IDENTITY,
            ssim,
        }
    }

    #[test]
    fn top_k_selection() {
        let c = vec![cand(1, 0, 0.9), cand(1, 1, 0.5), cand(2, 0, 0.8), cand(2, 1, 0.7)];
        let mut top = select_top(&c, 2);
        top.sort();
        assert_eq!(top, vec![0, 2]);
    }

    #[test]
    fn ties_prefer_lower_volume_then_scan() {
        let c = vec![cand(3, 0, 0.5), cand(1, 4, 0.5), cand(1, 2, 0.5), cand(2, 0, 0.5)];
        assert_eq!(select_top(&c, 3), vec![2, 1, 3]);
    }

    #[test]
    fn nearby_window_is_clipped() {
        assert_eq!(nearby_scans(0, 7, 20), 0..7);
        assert_eq!(nearby_scans(10, 7, 20), 7..14);
        assert_eq!(nearby_scans(19, 7, 20), 13..20);
        assert_eq!(nearby_scans(1, 4, 4), 0..4);
    }

    #[test]
    fn config_validation() {
        assert!(GroundTruthConfig::default().validate().is_ok());
        let bad = GroundTruthConfig {
            volumes: 2,
            nearby: 3,
            selected: 4,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        assert!(GroundTruthConfig { volumes: 1, ..Default::default() }.validate().is_err());
        assert!(GroundTruthConfig { nearby: 0, ..Default::default() }.validate().is_err());

        let vols = vec![Volume::new(vec![Image::filled(12, 12, 0.2)]).unwrap(); 3];
        let cfg = GroundTruthConfig {
            volumes: 3,
            nearby: 1,
            selected: 2,
            ..Default::default()
        };
        assert!(cfg.check_stack(&vols, 0).is_ok());
        assert!(cfg.check_stack(&vols[..2], 0).is_err());
        assert!(GroundTruthConfig { nearby: 2, ..cfg }.check_stack(&vols, 0).is_err());
    }

    #[test]
    fn identical_noise_free_stack_is_fixed_point() {
        let scan = |i: usize| {
            Image::from_fn(24, 24, move |y, x| {
                0.3 + 0.2 * ((x as f64 + i as f64) * 0.3).sin() * ((y as f64) * 0.25).cos()
            })
        };
        let vol = Volume::new((0..3).map(scan).collect()).unwrap();
        let vols = vec![vol; 3];
        let cfg = GroundTruthConfig {
            volumes: 3,
            nearby: 1,
            selected: 2,
            ..Default::default()
        };
        let pairs = build_ground_truth(&vols, 1, &cfg).unwrap();
        assert_eq!(pairs.len(), 3);
        for p in &pairs {
            assert_eq!(p.clean, p.noisy);
            assert_eq!(p.selected.len(), 2);
        }
    }
}
