//! Adaptive-moment (Adam) optimizer with bias correction.

use crate::error::{Error, Result};
use crate::tensor::Real;
use crate::train::TrainConfig;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl From<&TrainConfig> for AdamConfig {
    fn from(c: &TrainConfig) -> Self {
        AdamConfig {
            learning_rate: c.learning_rate,
            beta1: c.beta1,
            beta2: c.beta2,
            eps: c.adam_eps,
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig::from(&TrainConfig::default())
    }
}

/// First and second moment estimates per parameter, kept in 64-bit.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct OptimizerState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub t: u64,
}

impl OptimizerState {
    pub fn new(shapes: impl IntoIterator<Item = usize>) -> Self {
        let (m, v) = shapes.into_iter().map(|n| (vec![0.0; n], vec![0.0; n])).unzip();
        OptimizerState { m, v, t: 0 }
    }
}

/// One Adam update. `names` labels each parameter for error messages; a
/// non-finite gradient aborts before any parameter is touched.
pub fn optimizer_step<T: Real>(
    params: &mut [&mut [T]],
    grads: &[Vec<T>],
    names: &[String],
    state: &mut OptimizerState,
    config: &AdamConfig,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::shape(
            &[params.len(), grads.len()],
            &[state.m.len()],
            "optimizer parameter lists",
        ));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.len() != g.len() || p.len() != state.m[i].len() {
            return Err(Error::shape(&[p.len(), g.len()], &[state.m[i].len()], "optimizer parameter"));
        }
        if let Some(j) = g.iter().position(|v| !v.is_finite()) {
            let name = names.get(i).map_or_else(|| format!("param[{i}]"), Clone::clone);
            return Err(Error::NonFinite {
                location: format!("gradient of {name}[{j}]"),
            });
        }
    }

    state.t += 1;
    let t = state.t as i32;
    let (b1, b2) = (config.beta1, config.beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    for ((p, g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        for (((pv, gv), mv), vv) in p.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
            let gf = gv.to_f64_lossy();
            *mv = b1 * *mv + (1.0 - b1) * gf;
            *vv = b2 * *vv + (1.0 - b2) * gf * gf;
            let update = config.learning_rate * (*mv / c1) / ((*vv / c2).sqrt() + config.eps);
            if update != 0.0 {
                *pv = T::from_f64_lossy(pv.to_f64_lossy() - update);
            }
        }
    }
    Ok(())
}
