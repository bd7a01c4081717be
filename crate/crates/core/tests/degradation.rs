use qaware::degradation::{apply_op, OpInstance, OpParams};
use qaware::eval::base_texture;
use qaware::RngStream;

fn mse_ladder(img: &qaware::ImageBuffer, ladder: &[OpParams]) -> Vec<f64> {
    ladder
        .iter()
        .map(|p| apply_op(&OpInstance::new(p.clone()), img).unwrap().mse(img).unwrap())
        .collect()
}

fn assert_increasing(name: &str, seed: u64, v: &[f64]) {
    for w in v.windows(2) {
        assert!(w[1] > w[0], "{name} not monotone on image {seed}: {v:?}");
    }
}

#[test]
fn severity_is_monotone_in_mse() {
    for seed in 0..10 {
        let img = base_texture(&RngStream::new(seed).derive("severity"), 48, 48);
        let noise: Vec<OpParams> = [0.01, 0.03, 0.06, 0.1, 0.2]
            .iter()
            .map(|&sigma| OpParams::AddNoise { sigma, seed: 5 })
            .collect();
        let blur: Vec<OpParams> = [0.5, 1.0, 1.5, 2.5, 4.0].iter().map(|&sigma| OpParams::Fuzzify { sigma }).collect();
        let jpeg: Vec<OpParams> = [90u8, 70, 50, 30, 10].iter().map(|&quality| OpParams::JpegCompress { quality }).collect();
        assert_increasing("noise", seed, &mse_ladder(&img, &noise));
        assert_increasing("blur", seed, &mse_ladder(&img, &blur));
        assert_increasing("jpeg", seed, &mse_ladder(&img, &jpeg));
    }
}
