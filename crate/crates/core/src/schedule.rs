//! Variance schedules and the closed-form Gaussian diffusion algebra.
//!
//! All per-step arrays are indexed by the 1-based step `t`; `alpha_bar(0)`
//! is defined as 1 so the first reverse step is noise free.

use crate::error::{invalid, Result};
use crate::tensor::ImageTensor;

/// Precomputed coefficients for a `T`-step diffusion.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    // Slot 0 of every per-step vector is a placeholder so that index == t.
    beta: Vec<f64>,
    alpha: Vec<f64>,
    alpha_bar: Vec<f64>,
    one_minus_alpha_bar: Vec<f64>,
    posterior_var: Vec<f64>,
    coef_x0: Vec<f64>,
    coef_xt: Vec<f64>,
    /// Step index in the schedule this one was respaced from (identity otherwise).
    source_steps: Vec<usize>,
}

impl NoiseSchedule {
    /// `beta` linearly interpolated from `beta_start` to `beta_end`, both inclusive.
    pub fn linear(steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if steps == 0 {
            return Err(invalid("schedule needs at least one step"));
        }
        if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
            return Err(invalid(format!(
                "need 0 < beta_start <= beta_end < 1, got ({beta_start}, {beta_end})"
            )));
        }
        let betas: Vec<f64> = if steps == 1 {
            vec![beta_start]
        } else {
            let span = (steps - 1) as f64;
            (0..steps)
                .map(|i| beta_start + (beta_end - beta_start) * i as f64 / span)
                .collect()
        };
        Self::from_betas(&betas)
    }

    /// Builds a schedule from `beta_1..beta_T`.
    pub fn from_betas(betas: &[f64]) -> Result<Self> {
        let steps = betas.len();
        Self::with_source_steps(betas, (0..=steps).collect())
    }

    fn with_source_steps(betas: &[f64], source_steps: Vec<usize>) -> Result<Self> {
        if betas.is_empty() {
            return Err(invalid("schedule needs at least one step"));
        }
        if let Some(b) = betas.iter().find(|&&b| !(b > 0.0 && b < 1.0)) {
            return Err(invalid(format!("beta {b} outside (0, 1)")));
        }
        let n = betas.len() + 1;
        let mut beta = vec![0.0; n];
        let mut alpha = vec![1.0; n];
        let mut alpha_bar = vec![1.0; n];
        let mut one_minus_alpha_bar = vec![0.0; n];
        beta[1..].copy_from_slice(betas);
        for t in 1..n {
            alpha[t] = 1.0 - beta[t];
            alpha_bar[t] = alpha_bar[t - 1] * alpha[t];
            // For t = 1 this is exactly beta_1, which keeps coef_x0[1] == 1.
            one_minus_alpha_bar[t] = if t == 1 { beta[1] } else { 1.0 - alpha_bar[t] };
        }
        let mut posterior_var = vec![0.0; n];
        let mut coef_x0 = vec![0.0; n];
        let mut coef_xt = vec![0.0; n];
        for t in 1..n {
            let prev = one_minus_alpha_bar[t - 1];
            let denom = one_minus_alpha_bar[t];
            posterior_var[t] = prev / denom * beta[t];
            coef_x0[t] = alpha_bar[t - 1].sqrt() * beta[t] / denom;
            coef_xt[t] = alpha[t].sqrt() * prev / denom;
        }
        Ok(Self {
            beta,
            alpha,
            alpha_bar,
            one_minus_alpha_bar,
            posterior_var,
            coef_x0,
            coef_xt,
            source_steps,
        })
    }

    /// Keeps `steps` evenly spaced timesteps of this schedule, recomputing the
    /// betas so the kept steps have the same cumulative `alpha_bar`.
    pub fn respaced(&self, steps: usize) -> Result<Self> {
        let total = self.steps();
        if steps == 0 || steps > total {
            return Err(invalid(format!(
                "respacing to {steps} steps needs 1 <= steps <= {total}"
            )));
        }
        let kept: Vec<usize> = if steps == 1 {
            vec![total]
        } else {
            (0..steps)
                .map(|i| 1 + ((i * (total - 1)) as f64 / (steps - 1) as f64).round() as usize)
                .collect()
        };
        let mut last = 1.0;
        let betas: Vec<f64> = kept
            .iter()
            .map(|&t| {
                let b = 1.0 - self.alpha_bar[t] / last;
                last = self.alpha_bar[t];
                b
            })
            .collect();
        let mut source = vec![0];
        source.extend(kept.iter().map(|&t| self.source_steps[t]));
        Self::with_source_steps(&betas, source)
    }

    /// Number of steps `T`.
    pub fn steps(&self) -> usize {
        self.beta.len() - 1
    }

    pub fn check_step(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps() {
            return Err(invalid(format!("step {t} outside 1..={}", self.steps())));
        }
        Ok(())
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.beta[t]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alpha[t]
    }

    /// Cumulative product; `alpha_bar(0) == 1`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[t]
    }

    pub fn one_minus_alpha_bar(&self, t: usize) -> f64 {
        self.one_minus_alpha_bar[t]
    }

    /// Posterior variance `beta_tilde_t`.
    pub fn posterior_var(&self, t: usize) -> f64 {
        self.posterior_var[t]
    }

    pub fn posterior_coef_x0(&self, t: usize) -> f64 {
        self.coef_x0[t]
    }

    pub fn posterior_coef_xt(&self, t: usize) -> f64 {
        self.coef_xt[t]
    }

    /// Timestep of the original (un-respaced) schedule that step `t` stands for.
    pub fn source_step(&self, t: usize) -> usize {
        self.source_steps[t]
    }

    /// `sqrt(abar_t) x0 + sqrt(1 - abar_t) eps`.
    pub fn q_sample(&self, x0: &ImageTensor, t: usize, eps: &ImageTensor) -> Result<ImageTensor> {
        self.check_step(t)?;
        let a = self.alpha_bar[t].sqrt();
        let b = self.one_minus_alpha_bar[t].sqrt();
        x0.zip_map(eps, |x, e| a * x + b * e)
    }

    /// Clean-image estimate from a noise prediction.
    pub fn predict_x0(&self, x_t: &ImageTensor, eps_hat: &ImageTensor, t: usize) -> Result<ImageTensor> {
        self.check_step(t)?;
        let a = self.alpha_bar[t].sqrt();
        let b = self.one_minus_alpha_bar[t].sqrt();
        x_t.zip_map(eps_hat, |x, e| x / a - b * e / a)
    }

    /// Mean and variance of `q(x_{t-1} | x_t, x0_hat)`.
    pub fn posterior_mean_var(
        &self,
        x_t: &ImageTensor,
        x0_hat: &ImageTensor,
        t: usize,
    ) -> Result<(ImageTensor, f64)> {
        self.check_step(t)?;
        let (c0, ct) = (self.coef_x0[t], self.coef_xt[t]);
        let mean = x0_hat.zip_map(x_t, |x0, xt| c0 * x0 + ct * xt)?;
        Ok((mean, self.posterior_var[t]))
    }
}

/// Declarative schedule parameters as they appear in the engine config.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduleSpec {
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    /// Sample on this many evenly spaced steps instead of all `steps`.
    pub respacing: Option<usize>,
}

impl Default for ScheduleSpec {
    fn default() -> Self {
        Self {
            steps: 1000,
            beta_start: 1e-4,
            beta_end: 0.02,
            respacing: None,
        }
    }
}

impl ScheduleSpec {
    pub fn build(&self) -> Result<NoiseSchedule> {
        let base = NoiseSchedule::linear(self.steps, self.beta_start, self.beta_end)?;
        match self.respacing {
            Some(n) if n != self.steps => base.respaced(n),
            _ => Ok(base),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RandomSource;
    use crate::tensor::Shape;

    fn default_schedule() -> NoiseSchedule {
        ScheduleSpec::default().build().unwrap()
    }

    #[test]
    fn single_step_schedule() {
        let s = NoiseSchedule::linear(1, 0.1, 0.1).unwrap();
        assert_eq!(s.alpha_bar(0), 1.0);
        assert!((s.alpha_bar(1) - 0.9).abs() < 1e-15);
        assert_eq!(s.posterior_var(1), 0.0);
        assert_eq!(s.posterior_coef_xt(1), 0.0);
        assert_eq!(s.posterior_coef_x0(1), 1.0);
    }

    #[test]
    fn two_step_schedule_by_hand() {
        let s = NoiseSchedule::linear(2, 0.1, 0.2).unwrap();
        assert!((s.beta(2) - 0.2).abs() < 1e-15);
        assert!((s.alpha_bar(2) - 0.72).abs() < 1e-15);
        // beta_tilde_2 = (1 - 0.9) / (1 - 0.72) * 0.2
        let var = 0.1 / 0.28 * 0.2;
        assert!((s.posterior_var(2) - var).abs() < 1e-15);
        let c0 = 0.9f64.sqrt() * 0.2 / 0.28;
        let ct = 0.8f64.sqrt() * 0.1 / 0.28;
        assert!((s.posterior_coef_x0(2) - c0).abs() < 1e-15);
        assert!((s.posterior_coef_xt(2) - ct).abs() < 1e-15);
    }

    #[test]
    fn default_schedule_end_point() {
        let s = default_schedule();
        assert_eq!(s.steps(), 1000);
        let mut prod = 1.0;
        for i in 0..1000 {
            prod *= 1.0 - (1e-4 + (0.02 - 1e-4) * i as f64 / 999.0);
        }
        assert!((s.alpha_bar(1000) - prod).abs() < 1e-18);
        assert!(s.alpha_bar(1000) < 1e-4);
    }

    #[test]
    fn invalid_ranges() {
        assert!(NoiseSchedule::linear(0, 0.1, 0.2).is_err());
        assert!(NoiseSchedule::linear(10, 0.0, 0.2).is_err());
        assert!(NoiseSchedule::linear(10, 0.3, 0.2).is_err());
        assert!(NoiseSchedule::linear(10, 0.1, 1.0).is_err());
    }

    #[test]
    fn invariants_hold() {
        for s in [default_schedule(), default_schedule().respaced(100).unwrap()] {
            for t in 1..=s.steps() {
                assert_eq!(s.alpha_bar(t), s.alpha_bar(t - 1) * s.alpha(t));
                assert!(s.alpha_bar(t) < s.alpha_bar(t - 1));
                if t >= 2 {
                    assert!(s.posterior_var(t) > 0.0 && s.posterior_var(t) < s.beta(t));
                }
                let prev = 1.0 - s.alpha_bar(t - 1);
                let sum = (s.alpha_bar(t - 1).sqrt() * s.beta(t) + s.alpha(t).sqrt() * prev)
                    / (1.0 - s.alpha_bar(t));
                let got = s.posterior_coef_x0(t) + s.posterior_coef_xt(t);
                assert!((got - sum).abs() < 1e-10, "t={t}: {got} vs {sum}");
            }
        }
    }

    #[test]
    fn respacing_preserves_kept_alpha_bar() {
        let base = default_schedule();
        let r = base.respaced(100).unwrap();
        assert_eq!(r.steps(), 100);
        assert_eq!(r.source_step(1), 1);
        assert_eq!(r.source_step(100), 1000);
        for t in 1..=100 {
            let src = r.source_step(t);
            let rel = (r.alpha_bar(t) - base.alpha_bar(src)).abs() / base.alpha_bar(src);
            assert!(rel < 1e-12);
        }
        assert!(base.respaced(0).is_err());
        assert!(base.respaced(1001).is_err());
        assert_eq!(base.respaced(1000).unwrap().alpha_bar(1000), base.alpha_bar(1000));
    }

    #[test]
    fn q_sample_special_cases() {
        let s = default_schedule();
        let shape = Shape::new(1, 2, 2);
        let x0 = ImageTensor::new(1, 2, 2, vec![0.1, 0.5, 0.7, 1.0]).unwrap();
        let zero = ImageTensor::zeros(shape).unwrap();
        let e = RandomSource::new(3).gaussian(shape);
        let t = 400;
        let a = s.alpha_bar(t).sqrt();
        let b = (1.0 - s.alpha_bar(t)).sqrt();
        assert_eq!(s.q_sample(&x0, t, &zero).unwrap(), x0.map(|v| a * v));
        let only_noise = s.q_sample(&zero, t, &e).unwrap();
        assert!(only_noise.max_abs_diff(&e.map(|v| b * v)).unwrap() < 1e-15);
        assert!(s.q_sample(&x0, 0, &e).is_err());
        assert!(s.q_sample(&x0, 1001, &e).is_err());
    }

    #[test]
    fn q_sample_matches_iterated_one_step_kernel() {
        // Monte Carlo over 1e5 single-pixel chains.
        let s = NoiseSchedule::linear(50, 1e-3, 0.05).unwrap();
        let t = 30;
        let x0 = 0.8;
        let mut rng = RandomSource::new(11);
        let n = 100_000;
        let mut sum = 0.0;
        let mut sq = 0.0;
        for _ in 0..n {
            let mut x = x0;
            for k in 1..=t {
                x = (1.0 - s.beta(k)).sqrt() * x + s.beta(k).sqrt() * rng.normal();
            }
            sum += x;
            sq += x * x;
        }
        let mean = sum / n as f64;
        let var = sq / n as f64 - mean * mean;
        let want_mean = s.alpha_bar(t).sqrt() * x0;
        let want_var = 1.0 - s.alpha_bar(t);
        assert!((mean - want_mean).abs() < 4.0 * (want_var / n as f64).sqrt());
        assert!((var / want_var - 1.0).abs() < 0.02);
    }

    #[test]
    fn predict_x0_inverts_q_sample() {
        let s = default_schedule();
        let shape = Shape::new(3, 4, 4);
        let mut rng = RandomSource::new(5);
        for t in [1, 2, 17, 500, 999, 1000] {
            let x0 = rng.gaussian(shape).map(|v| 0.5 + 0.2 * v);
            let e = rng.gaussian(shape);
            let xt = s.q_sample(&x0, t, &e).unwrap();
            let back = s.predict_x0(&xt, &e, t).unwrap();
            assert!(back.max_abs_diff(&x0).unwrap() < 1e-12, "t={t}");
        }
        let xt = rng.gaussian(shape);
        let zero = ImageTensor::zeros(shape).unwrap();
        let a = s.alpha_bar(10).sqrt();
        assert_eq!(s.predict_x0(&xt, &zero, 10).unwrap(), xt.map(|v| v / a));
    }

    #[test]
    fn predict_x0_elementwise_at_final_step() {
        let s = default_schedule();
        let shape = Shape::new(1, 3, 3);
        let mut rng = RandomSource::new(8);
        let xt = rng.gaussian(shape);
        let eh = rng.gaussian(shape);
        let got = s.predict_x0(&xt, &eh, 1000).unwrap();
        let ab: f64 = (0..1000)
            .map(|i| 1.0 - (1e-4 + (0.02 - 1e-4) * i as f64 / 999.0))
            .product();
        for k in 0..9 {
            let want = (xt.data()[k] - (1.0 - ab).sqrt() * eh.data()[k]) / ab.sqrt();
            assert!((got.data()[k] - want).abs() < 1e-9 * want.abs().max(1.0));
        }
    }

    #[test]
    fn posterior_at_first_step_returns_x0_hat() {
        let s = default_schedule();
        let mut rng = RandomSource::new(1);
        let shape = Shape::new(1, 2, 3);
        let xt = rng.gaussian(shape);
        let x0 = rng.gaussian(shape);
        let (mean, var) = s.posterior_mean_var(&xt, &x0, 1).unwrap();
        assert_eq!(var, 0.0);
        assert_eq!(mean, x0);
        assert!(s.posterior_mean_var(&xt, &x0, 0).is_err());
    }

    #[test]
    fn posterior_of_constant_images() {
        let s = NoiseSchedule::linear(2, 0.1, 0.2).unwrap();
        let shape = Shape::new(1, 1, 2);
        let c = ImageTensor::filled(shape, 0.3).unwrap();
        let (mean, var) = s.posterior_mean_var(&c, &c, 2).unwrap();
        let want = 0.3 * (0.9f64.sqrt() * 0.2 + 0.8f64.sqrt() * 0.1) / 0.28;
        assert!(mean.data().iter().all(|&m| (m - want).abs() < 1e-15));
        assert!((var - 0.1 / 0.28 * 0.2).abs() < 1e-15);
    }
}
