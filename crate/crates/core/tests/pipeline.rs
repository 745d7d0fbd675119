use enhance_core::io::{read_image, write_image};
use enhance_core::sampler::{enhance, enhance_any_size};
use enhance_core::{
    ConvDenoiser, ConvLayer, EnhanceConfig, GaussianPrior, GuidanceConfig, ImageTensor, NoisePredictor, NoiseSchedule,
    RandomSource, Result, Shape,
};

struct Constant(f64);

impl NoisePredictor for Constant {
    fn predict(&self, x_t: &ImageTensor, _: usize, _: &NoiseSchedule) -> Result<ImageTensor> {
        ImageTensor::filled(x_t.shape(), self.0)
    }
}

fn schedule() -> NoiseSchedule {
    NoiseSchedule::linear(1000, 1e-4, 0.02).unwrap().respaced(25).unwrap()
}

fn config(p: usize, r: usize) -> EnhanceConfig {
    EnhanceConfig {
        guidance: GuidanceConfig {
            scale: 10.0,
            ..GuidanceConfig::default()
        },
        patch_size: p,
        patch_stride: r,
        trace: true,
        ..EnhanceConfig::default()
    }
}

fn observation(shape: Shape) -> ImageTensor {
    ImageTensor::from_fn(shape, |c, i, j| 0.08 + 0.02 * c as f64 + 0.15 * ((i * 7 + j * 3) % 13) as f64 / 13.0).unwrap()
}

#[test]
fn constant_noise_is_unaffected_by_patching() {
    // Averages of a dyadic constant are exact, so the patched run must
    // reproduce the whole-image run bit for bit.
    let y = observation(Shape::new(1, 64, 48));
    let sched = schedule();
    let cfg = config(32, 16);
    let pred = Constant(0.125);
    let whole = enhance(&y, &pred, &sched, &cfg, &mut RandomSource::new(5)).unwrap();
    let patched = enhance_any_size(&y, &pred, &sched, &cfg, &mut RandomSource::new(5)).unwrap();
    assert_eq!(patched.patches, 6);
    assert_eq!(whole.enhanced, patched.enhanced);
    assert_eq!(whole.fitted, patched.fitted);
    assert_eq!(whole.trace, patched.trace);
}

#[test]
fn odd_sizes_come_back_at_input_size() {
    let sched = schedule();
    let prior = GaussianPrior::constant(3, 0.5, 0.25).unwrap();
    for (h, w) in [(37, 50), (70, 33), (5, 9)] {
        let y = observation(Shape::new(3, h, w));
        let out = enhance_any_size(&y, &prior, &sched, &config(32, 16), &mut RandomSource::new(1)).unwrap();
        assert_eq!(out.enhanced.shape(), y.shape());
        assert_eq!(out.fitted.mask.shape(), y.shape());
        assert!(out.enhanced.is_finite());
        assert_eq!(out.trace.unwrap().len(), sched.steps());
    }
}

#[test]
fn denoiser_backend_is_worker_invariant() {
    let layers = vec![ConvLayer::new(2, 4), ConvLayer::new(4, 1)];
    let n: usize = layers.iter().map(ConvLayer::param_count).sum();
    let mut rng = RandomSource::new(3);
    let params = (0..n).map(|_| 0.1 * rng.normal()).collect();
    let net = ConvDenoiser::new(layers, params).unwrap();
    let y = observation(Shape::new(1, 48, 48));
    let sched = schedule();
    let runs: Vec<ImageTensor> = [1, 3]
        .into_iter()
        .map(|workers| {
            let cfg = EnhanceConfig {
                workers,
                ..config(32, 16)
            };
            enhance_any_size(&y, &net, &sched, &cfg, &mut RandomSource::new(11)).unwrap().enhanced
        })
        .collect();
    assert_eq!(runs[0], runs[1]);
}

#[test]
fn enhanced_image_survives_both_formats() {
    let dir = tempfile::tempdir().unwrap();
    let prior = GaussianPrior::constant(3, 0.5, 0.25).unwrap();
    let y = observation(Shape::new(3, 16, 16));
    let out = enhance_any_size(&y, &prior, &schedule(), &config(32, 16), &mut RandomSource::new(2)).unwrap();
    let rtf = dir.path().join("out.rtf");
    write_image(&rtf, &out.enhanced).unwrap();
    assert_eq!(read_image(&rtf).unwrap(), out.enhanced.map(|v| v as f32 as f64));

    let png = dir.path().join("out.png");
    write_image(&png, &out.enhanced).unwrap();
    let back = read_image(&png).unwrap();
    let clamped = out.enhanced.clamp(0.0, 1.0);
    assert!(back.max_abs_diff(&clamped).unwrap() <= 0.5 / 255.0 + 1e-12);
}
