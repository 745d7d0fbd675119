//! Built-in oracle suites behind `enhance selftest`.
//!
//! Each check is independent and reports one line. The fast profile keeps
//! sample counts small; the full profile adds the linear-Gaussian posterior
//! check and larger Monte Carlo runs.

use std::fmt;
use std::time::Instant;

use enhance_core::gradcheck::{central_difference, relative_error, relative_error_masked};
use enhance_core::guidance::{
    degradation_gradient, degradation_loss, degrade, exposure_loss_and_grad, guidance_gradient, guidance_loss,
    mse_loss_and_grad, smoothness_loss_and_grad,
};
use enhance_core::sampler::{build_patch_grid, enhance, enhance_any_size, enhance_from, sample_unconditional, EnhanceConfig};
use enhance_core::{
    DegradationParams, GaussianPrior, GuidanceConfig, ImageTensor, MixturePrior, NoisePredictor, NoiseSchedule,
    RandomSource, ScheduleSpec, Shape,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Profile {
    Fast,
    Full,
}

impl std::str::FromStr for Profile {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "fast" => Ok(Profile::Fast),
            "full" => Ok(Profile::Full),
            _ => Err(format!("unknown profile {s:?}; expected fast or full")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelftestReport {
    pub checks: Vec<CheckOutcome>,
}

impl SelftestReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &CheckOutcome> {
        self.checks.iter().filter(|c| !c.passed)
    }

    pub fn exit_code(&self) -> u8 {
        if self.passed() {
            0
        } else {
            1
        }
    }
}

impl fmt::Display for SelftestReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            let tag = if c.passed { "PASS" } else { "FAIL" };
            writeln!(f, "{tag} {} ({:.2}s): {}", c.name, c.seconds, c.detail)?;
        }
        let failed = self.failures().count();
        write!(f, "selftest: {} passed, {failed} failed", self.checks.len() - failed)
    }
}

type Check = fn(Profile) -> Result<String, String>;

pub fn cmd_selftest(profile: Profile) -> SelftestReport {
    let mut suites: Vec<(&'static str, Check)> = vec![
        ("schedule.inverse", check_schedule_inverse),
        ("schedule.identities", check_schedule_identities),
        ("gradient.mse", check_mse_gradient),
        ("gradient.exposure", check_exposure_gradient),
        ("gradient.smoothness", check_smoothness_gradient),
        ("gradient.guidance", check_guidance_gradient),
        ("gradient.degradation", check_degradation_gradient),
        ("predictor.quadrature", check_predictor_quadrature),
        ("sampling.gaussian_moments", check_gaussian_moments),
        ("sampling.zero_guidance", check_zero_guidance),
        ("patch.grid_counts", check_grid_counts),
        ("patch.single_patch", check_single_patch),
    ];
    if profile == Profile::Full {
        suites.push(("sampling.linear_gaussian_posterior", check_linear_gaussian_posterior));
    }
    let checks = suites
        .into_iter()
        .map(|(name, check)| {
            let start = Instant::now();
            let result = check(profile);
            let seconds = start.elapsed().as_secs_f64();
            log::debug!("{name} finished in {seconds:.3}s");
            let (passed, detail) = match result {
                Ok(d) => (true, d),
                Err(d) => (false, d),
            };
            CheckOutcome {
                name,
                passed,
                detail,
                seconds,
            }
        })
        .collect();
    SelftestReport { checks }
}

fn err(e: enhance_core::Error) -> String {
    e.to_string()
}

fn full_schedule() -> Result<NoiseSchedule, String> {
    ScheduleSpec::default().build().map_err(err)
}

fn desk_schedule(steps: usize) -> Result<NoiseSchedule, String> {
    ScheduleSpec {
        respacing: Some(steps),
        ..ScheduleSpec::default()
    }
    .build()
    .map_err(err)
}

fn random_image(shape: Shape, lo: f64, hi: f64, rng: &mut RandomSource) -> ImageTensor {
    let data = (0..shape.len()).map(|_| rng.uniform(lo, hi)).collect();
    ImageTensor::new(shape.channels, shape.height, shape.width, data).expect("finite")
}

fn with_data(shape: Shape, data: &[f64]) -> ImageTensor {
    ImageTensor::new(shape.channels, shape.height, shape.width, data.to_vec()).expect("finite")
}

fn check_schedule_inverse(p: Profile) -> Result<String, String> {
    let sched = full_schedule()?;
    let mut rng = RandomSource::new(1);
    let n = if p == Profile::Full { 1000 } else { 200 };
    let mut worst = 0.0f64;
    for _ in 0..n {
        let shape = Shape::new(3, 4, 4);
        let x0 = random_image(shape, -1.0, 1.0, &mut rng);
        let eps = rng.gaussian(shape);
        let t = 1 + (rng.uniform(0.0, 1.0) * sched.steps() as f64) as usize % sched.steps();
        let xt = sched.q_sample(&x0, t, &eps).map_err(err)?;
        let back = sched.predict_x0(&xt, &eps, t).map_err(err)?;
        let scale = x0.data().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        worst = worst.max(back.max_abs_diff(&x0).map_err(err)? / scale);
    }
    if worst < 1e-12 {
        Ok(format!("{n} triples, worst relative error {worst:.2e}"))
    } else {
        Err(format!("worst relative error {worst:.2e} >= 1e-12"))
    }
}

fn check_schedule_identities(_: Profile) -> Result<String, String> {
    for sched in [full_schedule()?, desk_schedule(100)?] {
        if sched.posterior_var(1) != 0.0 {
            return Err(format!("posterior variance at t=1 is {}", sched.posterior_var(1)));
        }
        for t in 2..=sched.steps() {
            if sched.alpha_bar(t) != sched.alpha_bar(t - 1) * (1.0 - sched.beta(t)) {
                return Err(format!("alpha-bar recurrence broken at t={t}"));
            }
        }
        if sched.alpha_bar(1) != 1.0 - sched.beta(1) {
            return Err("alpha-bar at t=1 differs from 1 - beta_1".into());
        }
    }
    Ok("posterior variance at t=1 is 0; alpha-bar recurrence exact".into())
}

fn instances(p: Profile) -> usize {
    if p == Profile::Full {
        50
    } else {
        10
    }
}

fn gradient_verdict(worst: f64, n: usize) -> Result<String, String> {
    if worst < 1e-5 {
        Ok(format!("{n} instances, worst relative error {worst:.2e}"))
    } else {
        Err(format!("worst relative error {worst:.2e} >= 1e-5"))
    }
}

fn check_mse_gradient(p: Profile) -> Result<String, String> {
    let mut rng = RandomSource::new(2);
    let mut worst = 0.0f64;
    for _ in 0..instances(p) {
        let shape = Shape::new(3, 5, 4);
        let a = random_image(shape, 0.0, 1.0, &mut rng);
        let b = random_image(shape, 0.0, 1.0, &mut rng);
        let (_, g) = mse_loss_and_grad(&a, &b).map_err(err)?;
        let num = central_difference(|d| mse_loss_and_grad(&with_data(shape, d), &b).expect("shape").0, a.data(), 1e-5);
        worst = worst.max(relative_error(g.data(), &num));
    }
    gradient_verdict(worst, instances(p))
}

/// Pixels whose block mean lies within `margin` of the target.
fn exposure_kink_mask(x: &ImageTensor, cfg: &GuidanceConfig, margin: f64) -> Vec<bool> {
    let s = x.shape();
    let lum = x.channel_mean();
    let r = cfg.region;
    let mut keep = vec![true; s.pixels()];
    for bi in 0..s.height.div_ceil(r) {
        for bj in 0..s.width.div_ceil(r) {
            let rows = bi * r..((bi + 1) * r).min(s.height);
            let cols = bj * r..((bj + 1) * r).min(s.width);
            let n = (rows.len() * cols.len()) as f64;
            let mean = rows.clone().flat_map(|i| cols.clone().map(move |j| (i, j))).map(|(i, j)| lum[i * s.width + j]).sum::<f64>() / n;
            if (mean - cfg.exposure_target).abs() < margin {
                for i in rows {
                    for j in cols.clone() {
                        keep[i * s.width + j] = false;
                    }
                }
            }
        }
    }
    (0..s.channels).flat_map(|_| keep.iter().copied()).collect()
}

fn check_exposure_gradient(p: Profile) -> Result<String, String> {
    let mut rng = RandomSource::new(3);
    let cfg = GuidanceConfig {
        region: 4,
        ..GuidanceConfig::default()
    };
    let mut worst = 0.0f64;
    for _ in 0..instances(p) {
        let shape = Shape::new(3, 9, 10);
        let x = random_image(shape, 0.0, 1.0, &mut rng);
        let (_, g) = exposure_loss_and_grad(&x, &cfg);
        let num = central_difference(|d| exposure_loss_and_grad(&with_data(shape, d), &cfg).0, x.data(), 1e-5);
        worst = worst.max(relative_error_masked(g.data(), &num, &exposure_kink_mask(&x, &cfg, 1e-3)));
    }
    gradient_verdict(worst, instances(p))
}

fn check_smoothness_gradient(p: Profile) -> Result<String, String> {
    let mut rng = RandomSource::new(4);
    let mut worst = 0.0f64;
    for _ in 0..instances(p) {
        let shape = Shape::new(3, 6, 5);
        let m = random_image(shape, -0.5, 0.5, &mut rng);
        let (_, g) = smoothness_loss_and_grad(&m);
        let num = central_difference(|d| smoothness_loss_and_grad(&with_data(shape, d)).0, m.data(), 1e-5);
        worst = worst.max(relative_error(g.data(), &num));
    }
    gradient_verdict(worst, instances(p))
}

fn check_guidance_gradient(p: Profile) -> Result<String, String> {
    let sched = full_schedule()?;
    let mut rng = RandomSource::new(5);
    let cfg = GuidanceConfig {
        scale: 3.0,
        lambda_exposure: 0.5,
        lambda_smooth: 0.1,
        region: 4,
        ..GuidanceConfig::default()
    };
    let mut worst = 0.0f64;
    for k in 0..instances(p) {
        let shape = Shape::new(3, 8, 8);
        let t = 50 + 17 * k;
        let xt = random_image(shape, -1.0, 1.0, &mut rng);
        let eps = rng.gaussian(shape);
        let y = random_image(shape, 0.0, 0.5, &mut rng);
        let params = DegradationParams::new(rng.uniform(0.5, 1.5), random_image(shape, -0.1, 0.1, &mut rng)).map_err(err)?;
        let g = guidance_gradient(&xt, &eps, t, &y, &params, &cfg, &sched).map_err(err)?;
        let num: Vec<f64> = central_difference(
            |d| guidance_loss(&with_data(shape, d), &eps, t, &y, &params, &cfg, &sched).expect("shape"),
            xt.data(),
            1e-5,
        )
        .into_iter()
        .map(|v| -v)
        .collect();
        let x0 = sched.predict_x0(&xt, &eps, t).map_err(err)?;
        worst = worst.max(relative_error_masked(g.data(), &num, &exposure_kink_mask(&x0, &cfg, 1e-3)));
    }
    gradient_verdict(worst, instances(p))
}

fn check_degradation_gradient(p: Profile) -> Result<String, String> {
    let mut rng = RandomSource::new(6);
    let cfg = GuidanceConfig {
        lambda_smooth: 0.3,
        ..GuidanceConfig::default()
    };
    let mut worst = 0.0f64;
    for _ in 0..instances(p) {
        let shape = Shape::new(1, 6, 6);
        let x0 = random_image(shape, 0.0, 1.0, &mut rng);
        let y = random_image(shape, 0.0, 1.0, &mut rng);
        let mask = random_image(shape, -0.2, 0.2, &mut rng);
        let gain = rng.uniform(0.3, 2.0);
        let params = DegradationParams::new(gain, mask.clone()).map_err(err)?;
        let (dg, dm) = degradation_gradient(&params, &x0, &y, &cfg).map_err(err)?;
        let mut point = vec![gain];
        point.extend_from_slice(mask.data());
        let num = central_difference(
            |d| {
                let p = DegradationParams::new(d[0], with_data(shape, &d[1..])).expect("finite");
                degradation_loss(&p, &x0, &y, &cfg).expect("shape")
            },
            &point,
            1e-5,
        );
        let mut analytic = vec![dg];
        analytic.extend_from_slice(dm.data());
        worst = worst.max(relative_error(&analytic, &num));
    }
    gradient_verdict(worst, instances(p))
}

/// `E[eps | x_t]` for a 1-D Gaussian mixture prior by composite Simpson.
fn quadrature_eps(weights: &[f64], means: &[f64], sigma: f64, xt: f64, abar: f64) -> f64 {
    let precision = 1.0 / (sigma * sigma) + abar / (1.0 - abar);
    let half = 12.0 / precision.sqrt();
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for m in means {
        let c = (m / (sigma * sigma) + abar.sqrt() * xt / (1.0 - abar)) / precision;
        lo = lo.min(c - half);
        hi = hi.max(c + half);
    }
    let log_density = |x0: f64| {
        let prior = weights
            .iter()
            .zip(means)
            .map(|(w, m)| w * (-0.5 * ((x0 - m) / sigma).powi(2)).exp())
            .sum::<f64>();
        prior.ln() - 0.5 * (xt - abar.sqrt() * x0).powi(2) / (1.0 - abar)
    };
    let n = 20_000;
    let h = (hi - lo) / n as f64;
    let peak = (0..=n).map(|k| log_density(lo + k as f64 * h)).fold(f64::NEG_INFINITY, f64::max);
    let (mut z, mut m1) = (0.0, 0.0);
    for k in 0..=n {
        let x0 = lo + k as f64 * h;
        let w = if k == 0 || k == n {
            1.0
        } else if k % 2 == 1 {
            4.0
        } else {
            2.0
        };
        let d = w * (log_density(x0) - peak).exp();
        z += d;
        m1 += d * x0;
    }
    (xt - abar.sqrt() * (m1 / z)) / (1.0 - abar).sqrt()
}

fn pixel(v: f64) -> ImageTensor {
    ImageTensor::new(1, 1, 1, vec![v]).expect("finite")
}

fn check_predictor_quadrature(_: Profile) -> Result<String, String> {
    let sched = full_schedule()?;
    let gauss = GaussianPrior::new(pixel(0.3), 0.5).map_err(err)?;
    let mix = MixturePrior::new(vec![0.3, 0.7], vec![pixel(-0.4), pixel(0.6)], 0.2).map_err(err)?;
    let mut worst = 0.0f64;
    for t in [1, sched.steps() / 2, sched.steps()] {
        let abar = sched.alpha_bar(t);
        for xt in [-1.5, 0.2, 1.3] {
            let g = gauss.predict(&pixel(xt), t, &sched).map_err(err)?.data()[0];
            worst = worst.max((g - quadrature_eps(&[1.0], &[0.3], 0.5, xt, abar)).abs());
            let m = mix.predict(&pixel(xt), t, &sched).map_err(err)?.data()[0];
            worst = worst.max((m - quadrature_eps(&[0.3, 0.7], &[-0.4, 0.6], 0.2, xt, abar)).abs());
        }
    }
    if worst < 1e-8 {
        Ok(format!("worst absolute error {worst:.2e}"))
    } else {
        Err(format!("worst absolute error {worst:.2e} >= 1e-8"))
    }
}

fn check_gaussian_moments(p: Profile) -> Result<String, String> {
    let sched = desk_schedule(100)?;
    let (mu, sigma) = (0.5, 2.0);
    let prior = GaussianPrior::constant(1, mu, sigma).map_err(err)?;
    let n = if p == Profile::Full { 2000 } else { 500 };
    let mut xs = Vec::with_capacity(n);
    for seed in 0..n as u64 {
        let x = sample_unconditional(&prior, &sched, Shape::new(1, 1, 1), &mut RandomSource::new(seed)).map_err(err)?;
        xs.push(x.data()[0]);
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let ratio = var / (sigma * sigma);
    let mean_tol = 4.0 * sigma / (n as f64).sqrt();
    let (lo, hi) = if p == Profile::Full { (0.9, 1.1) } else { (0.8, 1.2) };
    let detail = format!("{n} runs: mean {mean:.4} (tolerance {mean_tol:.4}), variance ratio {ratio:.4}");
    if (mean - mu).abs() <= mean_tol && (lo..=hi).contains(&ratio) {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn check_zero_guidance(_: Profile) -> Result<String, String> {
    let sched = desk_schedule(50)?;
    let prior = GaussianPrior::constant(3, 0.5, 0.25).map_err(err)?;
    let y = ImageTensor::filled(Shape::new(3, 8, 8), 0.2).map_err(err)?;
    let cfg = EnhanceConfig {
        guidance: GuidanceConfig::unguided(),
        ..EnhanceConfig::default()
    };
    for seed in 0..5 {
        let a = sample_unconditional(&prior, &sched, y.shape(), &mut RandomSource::new(seed)).map_err(err)?;
        let b = enhance(&y, &prior, &sched, &cfg, &mut RandomSource::new(seed)).map_err(err)?;
        if a != b.enhanced {
            return Err(format!("seed {seed}: unguided enhancement differs from unconditional sampling"));
        }
    }
    Ok("5 seeds bit-identical".into())
}

fn check_grid_counts(_: Profile) -> Result<String, String> {
    for (h, w, p, r) in [(384, 384, 256, 128), (300, 300, 256, 128), (37, 53, 16, 5)] {
        let grid = build_patch_grid(h, w, p, r).map_err(err)?;
        let mut raster = vec![0u32; h * w];
        for rect in &grid.rects {
            for i in rect.top..rect.top + rect.size {
                for j in rect.left..rect.left + rect.size {
                    raster[i * w + j] += 1;
                }
            }
        }
        if raster != grid.counts || raster.contains(&0) {
            return Err(format!("{h}x{w} p={p} r={r}: counts differ from rasterization or leave gaps"));
        }
    }
    Ok("counts match rasterization on 3 grids".into())
}

fn check_single_patch(_: Profile) -> Result<String, String> {
    let sched = desk_schedule(20)?;
    let prior = GaussianPrior::constant(3, 0.5, 0.25).map_err(err)?;
    let y = ImageTensor::from_fn(Shape::new(3, 32, 32), |c, i, j| 0.1 + 0.01 * ((c + i + 2 * j) % 7) as f64).map_err(err)?;
    let cfg = EnhanceConfig {
        guidance: GuidanceConfig::desk(),
        patch_size: 32,
        patch_stride: 16,
        ..EnhanceConfig::default()
    };
    let a = enhance(&y, &prior, &sched, &cfg, &mut RandomSource::new(9)).map_err(err)?;
    let b = enhance_any_size(&y, &prior, &sched, &cfg, &mut RandomSource::new(9)).map_err(err)?;
    if a.enhanced == b.enhanced && a.fitted == b.fitted {
        Ok("single-patch grid bit-identical to whole-image sampling".into())
    } else {
        Err("single-patch grid differs from whole-image sampling".into())
    }
}

fn check_linear_gaussian_posterior(_: Profile) -> Result<String, String> {
    let sched = desk_schedule(100)?;
    let shape = Shape::new(1, 8, 8);
    let (mu, sigma) = (0.5, 0.2);
    let prior = GaussianPrior::constant(1, mu, sigma).map_err(err)?;
    let truth = DegradationParams::new(0.5, ImageTensor::filled(shape, 0.1).map_err(err)?).map_err(err)?;
    let x_true = rng_image(shape, mu, sigma);
    let y = degrade(&x_true, &truth).map_err(err)?;
    let cfg = EnhanceConfig {
        guidance: GuidanceConfig {
            scale: 1e4,
            lambda_exposure: 0.0,
            lambda_smooth: 0.0,
            ..GuidanceConfig::default()
        },
        update_degradation: false,
        ..EnhanceConfig::default()
    };
    let n = 200;
    let mut sum = vec![0.0; shape.len()];
    let mut sq = vec![0.0; shape.len()];
    for seed in 0..n {
        let out = enhance_from(&y, &prior, &sched, &cfg, &mut RandomSource::new(seed), truth.clone()).map_err(err)?;
        for (k, v) in out.enhanced.data().iter().enumerate() {
            sum[k] += v;
            sq[k] += v * v;
        }
    }
    // Noise-free observation: the posterior is a point mass at (y - M) / f.
    let mut worst = 0.0f64;
    for k in 0..shape.len() {
        let m = sum[k] / n as f64;
        let var = (sq[k] - n as f64 * m * m) / (n - 1) as f64;
        let target = (y.data()[k] - 0.1) / 0.5;
        worst = worst.max((m - target).abs() / (var / n as f64).sqrt());
    }
    let detail = format!("{n} runs, worst deviation {worst:.2} standard errors");
    if worst < 3.0 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn rng_image(shape: Shape, mu: f64, sigma: f64) -> ImageTensor {
    RandomSource::new(12345).gaussian(shape).map(|v| mu + sigma * v)
}
