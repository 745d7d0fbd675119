use enhance_core::io::{decode_rtf, encode_rtf, read_rtf, write_rtf};
use enhance_core::{ConvDenoiser, ConvLayer, Error, FormatError, ImageTensor, NoisePredictor, NoiseSchedule, RandomSource, Shape};

/// Values representable in `f32`, so the file round trip is exact.
fn noisy(shape: Shape, seed: u64) -> ImageTensor {
    RandomSource::new(seed).gaussian(shape).map(|v| v as f32 as f64)
}

#[test]
fn rtf_file_round_trip_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let img = noisy(Shape::new(3, 7, 5), 1);
    let path = dir.path().join("x.rtf");
    write_rtf(&path, &img).unwrap();
    assert_eq!(read_rtf(&path).unwrap(), img);
    assert_eq!(std::fs::read(&path).unwrap(), encode_rtf(&img));
}

#[test]
fn rtf_rejects_damage() {
    let bytes = encode_rtf(&noisy(Shape::new(1, 4, 4), 2));
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(matches!(decode_rtf(&bad), Err(Error::Format(FormatError::BadMagic { .. }))));
    assert!(matches!(
        decode_rtf(&bytes[..bytes.len() - 1]),
        Err(Error::Format(FormatError::Truncated { .. }))
    ));
    let mut long = bytes;
    long.push(0);
    assert!(matches!(decode_rtf(&long), Err(Error::Format(FormatError::TrailingBytes(1)))));
}

#[test]
fn denoiser_weights_round_trip_through_a_file() {
    let dir = tempfile::tempdir().unwrap();
    let layers = vec![ConvLayer::new(4, 8), ConvLayer::new(8, 3)];
    let n: usize = layers.iter().map(ConvLayer::param_count).sum();
    let mut rng = RandomSource::new(9);
    let net = ConvDenoiser::new(layers, (0..n).map(|_| rng.normal() as f32 as f64).collect()).unwrap();
    let path = dir.path().join("w.dnw");
    net.save(&path).unwrap();
    let back = ConvDenoiser::load(&path).unwrap();
    assert_eq!(back, net);

    let sched = NoiseSchedule::linear(1000, 1e-4, 0.02).unwrap();
    let x = noisy(Shape::new(3, 6, 6), 4);
    assert_eq!(net.predict(&x, 500, &sched).unwrap(), back.predict(&x, 500, &sched).unwrap());
}
