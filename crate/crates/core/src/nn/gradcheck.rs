//! Central finite-difference gradient checking (64-bit only).

use crate::error::Result;
use crate::tensor::Tensor;

pub const STEP: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// Largest `|analytic - numeric| / max(|analytic|, |numeric|, 1)`.
    pub max_rel_err: f64,
    /// Index into the checked vector where `max_rel_err` occurred.
    pub worst_index: usize,
    pub checked: usize,
    pub tolerance: f64,
    /// Set when a gradient entry was NaN or infinite.
    pub non_finite: Option<String>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.non_finite.is_none() && self.max_rel_err <= self.tolerance
    }
}

/// Checks the analytic gradient of a scalar function against central
/// differences with step [`STEP`]. `f(point, want_grad)` returns the value
/// and, when asked, the analytic gradient (same length as `point`).
pub fn grad_check_scalar<F>(point: &[f64], tolerance: f64, mut f: F) -> Result<GradCheckReport>
where
    F: FnMut(&[f64], bool) -> Result<(f64, Vec<f64>)>,
{
    let (_, analytic) = f(point, true)?;
    assert_eq!(analytic.len(), point.len(), "gradient length");
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst_index: 0,
        checked: point.len(),
        tolerance,
        non_finite: None,
    };
    let mut probe = point.to_vec();
    for i in 0..point.len() {
        probe[i] = point[i] + STEP;
        let (plus, _) = f(&probe, false)?;
        probe[i] = point[i] - STEP;
        let (minus, _) = f(&probe, false)?;
        probe[i] = point[i];
        let numeric = (plus - minus) / (2.0 * STEP);
        let a = analytic[i];
        if !a.is_finite() || !numeric.is_finite() {
            report.non_finite = Some(format!(
                "entry {i}: analytic {a}, numeric {numeric}"
            ));
            return Ok(report);
        }
        let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1.0);
        if err > report.max_rel_err {
            report.max_rel_err = err;
            report.worst_index = i;
        }
    }
    Ok(report)
}

/// Gradient check of an operation under the loss `sum(output^2)`.
///
/// `forward` maps the flattened inputs/parameters to the output tensor;
/// `backward` maps the same point and the upstream gradient `2 * output` to
/// the analytic gradient of every entry of the point.
pub fn grad_check<Fw, Bw>(
    point: &[f64],
    tolerance: f64,
    mut forward: Fw,
    mut backward: Bw,
) -> Result<GradCheckReport>
where
    Fw: FnMut(&[f64]) -> Result<Tensor>,
    Bw: FnMut(&[f64], &Tensor) -> Result<Vec<f64>>,
{
    grad_check_scalar(point, tolerance, |x, want_grad| {
        let out = forward(x)?;
        let loss = out.sum_of_squares();
        if !want_grad {
            return Ok((loss, Vec::new()));
        }
        let upstream = out.map(|v| 2.0 * v);
        Ok((loss, backward(x, &upstream)?))
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{
        batchnorm2d, batchnorm2d_backward, conv2d, conv2d_backward, relu, relu_backward, BnParams,
        ConvParams, Mode,
    };
    use crate::tensor::Dims;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_vec(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    #[test]
    fn linear_op_is_exact() {
        let d = Dims::new(1, 1, 3, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = random_vec(d.len(), &mut rng);
        let r = grad_check(
            &x,
            1e-9,
            |p| Ok(Tensor::new(d, p.iter().map(|v| 2.0 * v).collect())?),
            |_, g| Ok(g.data().iter().map(|v| 2.0 * v).collect()),
        )
        .unwrap();
        assert!(r.passed(), "{r:?}");
        assert!(r.max_rel_err < 1e-9);
    }

    #[test]
    fn wrong_gradient_fails() {
        let d = Dims::new(1, 1, 2, 2);
        let r = grad_check(
            &[0.5, -0.2, 0.3, 0.9],
            1e-4,
            |p| Ok(Tensor::new(d, p.to_vec())?),
            |_, g| Ok(g.data().iter().map(|v| 3.0 * v).collect()),
        )
        .unwrap();
        assert!(!r.passed());
    }

    #[test]
    fn non_finite_is_reported() {
        let r = grad_check_scalar(&[1.0, 2.0], 1e-4, |_, _| Ok((0.0, vec![0.0, f64::NAN])))
            .unwrap();
        assert!(!r.passed());
        assert!(r.non_finite.unwrap().contains("entry 1"));
    }

    /// Point layout: input, then weights, then bias.
    #[test]
    fn conv2d_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let xd = Dims::new(1, 2, 5, 5);
        let wd = Dims::new(3, 2, 3, 3);
        let point = random_vec(xd.len() + wd.len() + 3, &mut rng);
        let split = |p: &[f64]| {
            let x = Tensor::new(xd, p[..xd.len()].to_vec()).unwrap();
            let w = Tensor::new(wd, p[xd.len()..xd.len() + wd.len()].to_vec()).unwrap();
            let b = p[xd.len() + wd.len()..].to_vec();
            (x, ConvParams::new(w, b).unwrap())
        };
        let r = grad_check(
            &point,
            1e-4,
            |p| {
                let (x, c) = split(p);
                conv2d(&x, &c)
            },
            |p, g| {
                let (x, c) = split(p);
                let gr = conv2d_backward(&x, &c, g)?;
                let mut v = gr.input.into_data();
                v.extend(gr.weight.into_data());
                v.extend(gr.bias);
                Ok(v)
            },
        )
        .unwrap();
        assert!(r.passed(), "{r:?}");
    }

    #[test]
    fn batchnorm_train_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let xd = Dims::new(2, 3, 4, 4);
        let point = random_vec(xd.len() + 6, &mut rng);
        let split = |p: &[f64]| {
            let x = Tensor::new(xd, p[..xd.len()].to_vec()).unwrap();
            let mut bn = BnParams::new(3);
            bn.gamma = p[xd.len()..xd.len() + 3].to_vec();
            bn.beta = p[xd.len() + 3..].to_vec();
            (x, bn)
        };
        // A fixed random weighting makes the input gradient non-trivial:
        // sum(bn(x)^2) alone is invariant to x.
        let weights: Vec<f64> = random_vec(xd.len(), &mut rng);
        let r = grad_check(
            &point,
            1e-4,
            |p| {
                let (x, mut bn) = split(p);
                let (y, _) = batchnorm2d(&x, &mut bn, Mode::Train)?;
                Ok(Tensor::new(xd, y.data().iter().zip(&weights).map(|(a, b)| a * b).collect())?)
            },
            |p, g| {
                let (x, mut bn) = split(p);
                let (_, cache) = batchnorm2d(&x, &mut bn, Mode::Train)?;
                let gy = Tensor::new(xd, g.data().iter().zip(&weights).map(|(a, b)| a * b).collect())?;
                let gr = batchnorm2d_backward(&cache, &bn, &gy)?;
                let mut v = gr.input.into_data();
                v.extend(gr.gamma);
                v.extend(gr.beta);
                Ok(v)
            },
        )
        .unwrap();
        assert!(r.passed(), "{r:?}");

        // And the unweighted loss from the checker's definition.
        let r = grad_check(
            &point,
            1e-4,
            |p| {
                let (x, mut bn) = split(p);
                Ok(batchnorm2d(&x, &mut bn, Mode::Train)?.0)
            },
            |p, g| {
                let (x, mut bn) = split(p);
                let (_, cache) = batchnorm2d(&x, &mut bn, Mode::Train)?;
                let gr = batchnorm2d_backward(&cache, &bn, g)?;
                let mut v = gr.input.into_data();
                v.extend(gr.gamma);
                v.extend(gr.beta);
                Ok(v)
            },
        )
        .unwrap();
        assert!(r.passed(), "{r:?}");
    }

    #[test]
    fn batchnorm_infer_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let xd = Dims::new(1, 2, 3, 3);
        let point = random_vec(xd.len(), &mut rng);
        let mut bn = BnParams::new(2);
        bn.running_mean = vec![0.3, -0.1];
        bn.running_var = vec![0.5, 2.0];
        bn.gamma = vec![1.5, -0.7];
        let r = grad_check(
            &point,
            1e-4,
            |p| Ok(batchnorm2d(&Tensor::new(xd, p.to_vec())?, &mut bn.clone(), Mode::Infer)?.0),
            |p, g| {
                let (_, cache) = batchnorm2d(&Tensor::new(xd, p.to_vec())?, &mut bn.clone(), Mode::Infer)?;
                Ok(batchnorm2d_backward(&cache, &bn, g)?.input.into_data())
            },
        )
        .unwrap();
        assert!(r.passed(), "{r:?}");
    }

    #[test]
    fn relu_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let xd = Dims::new(2, 2, 4, 4);
        // Keep entries away from the kink so central differences are valid.
        let point: Vec<f64> = (0..xd.len())
            .map(|_| {
                let v: f64 = rng.gen_range(0.05..1.0);
                if rng.gen_bool(0.5) { v } else { -v }
            })
            .collect();
        let r = grad_check(
            &point,
            1e-4,
            |p| Ok(relu(&Tensor::new(xd, p.to_vec())?)),
            |p, g| {
                let y = relu(&Tensor::new(xd, p.to_vec())?);
                Ok(relu_backward(&y, g)?.into_data())
            },
        )
        .unwrap();
        assert!(r.passed(), "{r:?}");
    }
}
