use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub patch_size: usize,
    pub patch_stride: usize,
    /// Patches whose clean intensity variance is below this are skipped.
    pub variance_floor: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub augment_hflip: bool,
    pub validation_fraction: f64,
    pub early_stop_patience: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            patch_size: 128,
            patch_stride: 64,
            variance_floor: 1e-4,
            epochs: 100,
            batch_size: 16,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            augment_hflip: true,
            validation_fraction: 0.1,
            early_stop_patience: 10,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.patch_size < crate::model::MIN_SIDE {
            return fail(format!("patch_size {} below 3", self.patch_size));
        }
        if self.patch_stride == 0 {
            return fail("patch_stride must be >= 1".into());
        }
        if !(self.variance_floor >= 0.0) {
            return fail(format!("variance_floor must be >= 0, got {}", self.variance_floor));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return fail("epochs and batch_size must be >= 1".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return fail(format!("learning_rate must be > 0, got {}", self.learning_rate));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return fail(format!("{name} must be in [0, 1), got {b}"));
            }
        }
        if !(self.adam_eps > 0.0) {
            return fail(format!("adam_eps must be > 0, got {}", self.adam_eps));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return fail(format!(
                "validation_fraction must be in (0, 1), got {}",
                self.validation_fraction
            ));
        }
        Ok(())
    }
}
