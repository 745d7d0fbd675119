use crate::error::{invalid, Result};
use crate::predictor::NoisePredictor;
use crate::schedule::NoiseSchedule;
use crate::tensor::{ImageTensor, Shape};

/// Checks that `mean` is usable against `target`: either the same shape, or
/// a `C x 1 x 1` per-channel constant that broadcasts over every pixel.
fn check_broadcast(mean: &ImageTensor, target: Shape) -> Result<()> {
    let m = mean.shape();
    if m == target || (m.channels == target.channels && m.height == 1 && m.width == 1) {
        Ok(())
    } else {
        Err(invalid(format!("prior mean {m} does not broadcast to {target}")))
    }
}

#[inline]
fn broadcast_value(mean: &ImageTensor, target: Shape, k: usize) -> f64 {
    if mean.len() == target.len() {
        mean.data()[k]
    } else {
        mean.data()[k / target.pixels()]
    }
}

/// Isotropic Gaussian data prior `N(mean, sigma^2 I)`.
///
/// For this prior the posterior mean of the noise is available in closed
/// form: with `v = abar sigma^2 + 1 - abar`,
/// `E[x0 | x_t] = (sqrt(abar) sigma^2 x_t + (1 - abar) mean) / v` and
/// `eps* = sqrt(1 - abar) (x_t - sqrt(abar) mean) / v`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPrior {
    mean: ImageTensor,
    sigma: f64,
}

impl GaussianPrior {
    pub fn new(mean: ImageTensor, sigma: f64) -> Result<Self> {
        if !(sigma.is_finite() && sigma >= 0.0) {
            return Err(invalid(format!("prior sigma must be finite and >= 0, got {sigma}")));
        }
        Ok(Self { mean, sigma })
    }

    /// Prior whose mean is `value` in every channel of every pixel.
    pub fn constant(channels: usize, value: f64, sigma: f64) -> Result<Self> {
        Self::new(ImageTensor::filled(Shape::new(channels, 1, 1), value)?, sigma)
    }

    pub fn mean(&self) -> &ImageTensor {
        &self.mean
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    /// Exact `E[x0 | x_t]`.
    pub fn posterior_mean_x0(&self, x_t: &ImageTensor, t: usize, sched: &NoiseSchedule) -> Result<ImageTensor> {
        sched.check_step(t)?;
        let shape = x_t.shape();
        check_broadcast(&self.mean, shape)?;
        let ab = sched.alpha_bar(t);
        let s2 = self.sigma * self.sigma;
        let v = ab * s2 + sched.one_minus_alpha_bar(t);
        let data = x_t
            .data()
            .iter()
            .enumerate()
            .map(|(k, &x)| {
                let mu = broadcast_value(&self.mean, shape, k);
                (ab.sqrt() * s2 * x + sched.one_minus_alpha_bar(t) * mu) / v
            })
            .collect();
        Ok(ImageTensor::from_raw(shape, data))
    }
}

impl NoisePredictor for GaussianPrior {
    fn predict(&self, x_t: &ImageTensor, t: usize, sched: &NoiseSchedule) -> Result<ImageTensor> {
        sched.check_step(t)?;
        let shape = x_t.shape();
        check_broadcast(&self.mean, shape)?;
        let ab = sched.alpha_bar(t);
        let oma = sched.one_minus_alpha_bar(t);
        let scale = oma.sqrt() / (ab * self.sigma * self.sigma + oma);
        let data = x_t
            .data()
            .iter()
            .enumerate()
            .map(|(k, &x)| scale * (x - ab.sqrt() * broadcast_value(&self.mean, shape, k)))
            .collect();
        Ok(ImageTensor::from_raw(shape, data))
    }
}

/// Mixture of isotropic Gaussians sharing one `sigma`.
#[derive(Debug, Clone, PartialEq)]
pub struct MixturePrior {
    weights: Vec<f64>,
    means: Vec<ImageTensor>,
    sigma: f64,
}

impl MixturePrior {
    pub fn new(weights: Vec<f64>, means: Vec<ImageTensor>, sigma: f64) -> Result<Self> {
        if weights.is_empty() || weights.len() != means.len() {
            return Err(invalid("mixture needs one weight per component and at least one component"));
        }
        if weights.iter().any(|&w| !(w > 0.0 && w.is_finite())) {
            return Err(invalid("mixture weights must be positive"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(invalid(format!("mixture weights sum to {total}, not 1")));
        }
        if !(sigma.is_finite() && sigma >= 0.0) {
            return Err(invalid(format!("prior sigma must be finite and >= 0, got {sigma}")));
        }
        let first = means[0].shape();
        if means.iter().any(|m| m.shape() != first) {
            return Err(invalid("mixture means must share one shape"));
        }
        Ok(Self { weights, means, sigma })
    }

    pub fn components(&self) -> usize {
        self.weights.len()
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn means(&self) -> &[ImageTensor] {
        &self.means
    }

    /// Posterior component probabilities given `x_t`, computed in log space.
    pub fn responsibilities(&self, x_t: &ImageTensor, t: usize, sched: &NoiseSchedule) -> Result<Vec<f64>> {
        sched.check_step(t)?;
        let shape = x_t.shape();
        let ab = sched.alpha_bar(t);
        let v = ab * self.sigma * self.sigma + sched.one_minus_alpha_bar(t);
        let mut logits = Vec::with_capacity(self.components());
        for (w, mean) in self.weights.iter().zip(&self.means) {
            check_broadcast(mean, shape)?;
            let dist2: f64 = x_t
                .data()
                .iter()
                .enumerate()
                .map(|(k, &x)| {
                    let d = x - ab.sqrt() * broadcast_value(mean, shape, k);
                    d * d
                })
                .sum();
            logits.push(w.ln() - dist2 / (2.0 * v));
        }
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        Ok(exps.into_iter().map(|e| e / z).collect())
    }
}

impl NoisePredictor for MixturePrior {
    fn predict(&self, x_t: &ImageTensor, t: usize, sched: &NoiseSchedule) -> Result<ImageTensor> {
        let resp = self.responsibilities(x_t, t, sched)?;
        let shape = x_t.shape();
        let ab = sched.alpha_bar(t);
        let oma = sched.one_minus_alpha_bar(t);
        let scale = oma.sqrt() / (ab * self.sigma * self.sigma + oma);
        let data = x_t
            .data()
            .iter()
            .enumerate()
            .map(|(k, &x)| {
                let mu: f64 = resp
                    .iter()
                    .zip(&self.means)
                    .map(|(r, m)| r * broadcast_value(m, shape, k))
                    .sum();
                scale * (x - ab.sqrt() * mu)
            })
            .collect();
        Ok(ImageTensor::from_raw(shape, data))
    }
}
