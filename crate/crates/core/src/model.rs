use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sleep rate and nearest-neighbour jump law of the walkers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// Sleep rate λ, positive and finite.
    pub lambda: f64,
    /// Probability that a jump goes to `x + 1`.
    pub p_right: f64,
}

impl ModelParams {
    pub fn new(lambda: f64, p_right: f64) -> Result<Self> {
        let params = ModelParams { lambda, p_right };
        params.validate()?;
        Ok(params)
    }

    pub fn symmetric(lambda: f64) -> Result<Self> {
        Self::new(lambda, 0.5)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda.is_finite() && self.lambda > 0.0) {
            return Err(Error::InvalidParams(format!(
                "lambda must be positive and finite, got {}",
                self.lambda
            )));
        }
        if !(0.0..=1.0).contains(&self.p_right) {
            return Err(Error::InvalidParams(format!(
                "p_right must lie in [0, 1], got {}",
                self.p_right
            )));
        }
        Ok(())
    }

    /// Probability λ/(1+λ) that a fresh instruction is a sleep instruction.
    pub fn sleep_probability(&self) -> f64 {
        self.lambda / (1.0 + self.lambda)
    }
}
