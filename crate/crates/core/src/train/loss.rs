use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Mean squared difference between the predicted noise and the true noise
/// `noisy - clean`, averaged over every pixel of every batch item. Returns
/// the loss and its gradient `2 (pred - noise) / count`.
pub fn loss_eq1<T: Real>(
    predicted: &Tensor<T>,
    noisy: &Tensor<T>,
    clean: &Tensor<T>,
) -> Result<(f64, Tensor<T>)> {
    if noisy.dims() != clean.dims() {
        return Err(Error::shape(
            &noisy.dims().as_array(),
            &clean.dims().as_array(),
            "noisy vs clean",
        ));
    }
    let noise = Tensor::new(
        noisy.dims(),
        noisy.data().iter().zip(clean.data()).map(|(&n, &c)| n - c).collect(),
    )?;
    noise_loss(predicted, &noise)
}

/// [`loss_eq1`] with the noise target already formed.
pub fn noise_loss<T: Real>(predicted: &Tensor<T>, noise: &Tensor<T>) -> Result<(f64, Tensor<T>)> {
    if predicted.dims() != noise.dims() {
        return Err(Error::shape(
            &predicted.dims().as_array(),
            &noise.dims().as_array(),
            "predicted vs target noise",
        ));
    }
    let count = predicted.data().len() as f64;
    let scale = T::from_f64_lossy(2.0 / count);
    let mut sum = 0.0;
    let grad = predicted
        .data()
        .iter()
        .zip(noise.data())
        .map(|(&p, &n)| {
            let d = p - n;
            let df = d.to_f64_lossy();
            sum += df * df;
            d * scale
        })
        .collect();
    Ok((sum / count, Tensor::new(predicted.dims(), grad)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::grad_check_scalar;
    use crate::tensor::Dims;

    #[test]
    fn perfect_prediction_is_zero() {
        let d = Dims::new(1, 1, 3, 3);
        let noisy = Tensor::new(d, (0..9).map(|i| 0.1 * i as f64).collect()).unwrap();
        let clean = Tensor::new(d, (0..9).map(|i| 0.05 * i as f64).collect()).unwrap();
        let pred = Tensor::new(d, (0..9).map(|i| 0.1 * i as f64 - 0.05 * i as f64).collect()).unwrap();
        let (l, g) = loss_eq1(&pred, &noisy, &clean).unwrap();
        assert_eq!(l, 0.0);
        assert!(g.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn constant_noise_closed_form() {
        let d = Dims::new(1, 1, 128, 128);
        let clean = Tensor::filled(d, 0.4);
        let noisy = Tensor::filled(d, 0.5);
        let (l, _) = loss_eq1(&Tensor::zeros(d), &noisy, &clean).unwrap();
        assert!((l - 0.01).abs() < 1e-12, "{l}");
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let d = Dims::new(1, 1, 4, 4);
        let noisy = Tensor::from_fn(d, |_, _, y, x| ((y * 7 + x) % 5) as f64 * 0.2);
        let clean = Tensor::from_fn(d, |_, _, y, x| ((y * 3 + x) % 4) as f64 * 0.25);
        let start: Vec<f64> = (0..16).map(|i| (i as f64 * 0.37).sin()).collect();
        let report = grad_check_scalar(&start, 1e-6, |p, want_grad| {
            let pred = Tensor::new(d, p.to_vec())?;
            let (l, g) = loss_eq1(&pred, &noisy, &clean)?;
            Ok((l, if want_grad { g.into_data() } else { Vec::new() }))
        })
        .unwrap();
        assert!(report.passed(), "{report:?}");
    }

    #[test]
    fn dims_must_match() {
        let a = Tensor::<f64>::zeros(Dims::new(1, 1, 2, 2));
        let b = Tensor::<f64>::zeros(Dims::new(1, 1, 2, 3));
        assert!(loss_eq1(&a, &a, &b).is_err());
        assert!(loss_eq1(&b, &a, &a).is_err());
    }
}
