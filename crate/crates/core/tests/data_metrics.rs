//! Dataset generators, quality metrics and FLOP accounting.

use unilat_core::data::{blob_mode, generate, split, DatasetSpec, Family, ImageDataset, InMemoryDataset};
use unilat_core::metrics::{
    flop_count, frechet_distance, mean_psnr, model_cost, psnr, rfid, BitrateReport, Estimate, FeatureExtractor, FlopMode, RandomFeatures,
    IMAGE_PEAK, PSNR_CAP,
};
use unilat_core::nn::flops::{AttentionMap, LinearMap, NetworkSpec};
use unilat_core::nn::{ImageShape, ModelConfig};
use unilat_core::rng;
use unilat_core::Tensor;

#[test]
fn blob_modes_are_uniform() {
    let n = 10_000;
    let ds = generate(&DatasetSpec::blobs(16, n, 3)).unwrap();
    let mut counts = [0usize; 8];
    for k in 0..n {
        counts[ds.label(k).unwrap()] += 1;
    }
    let p = 1.0 / 8.0;
    let se = (p * (1.0 - p) / n as f64).sqrt();
    for c in counts {
        assert!((c as f64 / n as f64 - p).abs() < 3.0 * se, "{counts:?}");
    }
}

#[test]
fn blob_detector_agrees_with_generator() {
    let ds = generate(&DatasetSpec::blobs(16, 500, 4)).unwrap();
    let shape = ds.image_shape();
    for k in 0..500 {
        assert_eq!(blob_mode(&ds.image(k).unwrap(), shape, 8), ds.label(k));
    }
}

#[test]
fn samples_are_finite_in_range_and_reproducible() {
    for spec in [DatasetSpec::blobs(16, 64, 1), DatasetSpec::sprites(16, 64, 1), DatasetSpec::checkerboards(16, 64, 1)] {
        let a = generate(&spec).unwrap();
        let b = generate(&spec).unwrap();
        for k in 0..64 {
            let img = a.image(k).unwrap();
            assert!(img.iter().all(|v| v.is_finite() && (-1.0..=1.0).contains(v)));
            assert_eq!(img, b.image(k).unwrap());
        }
    }
    let mut rgb = DatasetSpec::sprites(8, 4, 2);
    rgb.channels = 3;
    assert_eq!(generate(&rgb).unwrap().batch(&[0, 1]).unwrap().shape(), &[2, 8, 8, 3]);
}

#[test]
fn empty_and_unsupported_datasets() {
    let empty = generate(&DatasetSpec::blobs(16, 0, 1)).unwrap();
    assert!(empty.is_empty());
    assert!(empty.image(0).is_err());
    let folder = DatasetSpec { family: Family::Folder { path: "x".into() }, ..DatasetSpec::blobs(16, 1, 1) };
    assert!(generate(&folder).is_err());
}

#[test]
fn splits_are_disjoint_and_stable() {
    let (a, b) = split(1000, 0.2, 9).unwrap();
    assert_eq!(a.len() + b.len(), 1000);
    assert_eq!(b.len(), 200);
    assert!(a.iter().all(|i| !b.contains(i)));
    assert_eq!(split(1000, 0.2, 9).unwrap(), (a, b));
}

#[test]
fn in_memory_dataset_round_trip() {
    let src = generate(&DatasetSpec::sprites(8, 10, 5)).unwrap();
    let mem = InMemoryDataset::from_dataset(&src, &[3, 7]).unwrap();
    assert_eq!(mem.len(), 2);
    assert_eq!(mem.image(1).unwrap(), src.image(7).unwrap());
}

#[test]
fn psnr_examples() {
    let a = Tensor::full(&[1, 2, 2, 1], 0.5);
    let b = Tensor::full(&[1, 2, 2, 1], 0.75);
    assert!((psnr(&a, &b, 1.0).unwrap() - 12.041199826559248).abs() < 1e-9);
    assert_eq!(psnr(&a, &b, 1.0).unwrap(), psnr(&b, &a, 1.0).unwrap());
    assert_eq!(psnr(&a, &a, 1.0).unwrap(), PSNR_CAP);
    assert!(psnr(&a, &Tensor::zeros(&[1, 4]), 1.0).is_err());
    let m = mean_psnr(&a, &b, IMAGE_PEAK).unwrap();
    assert!((m.mean - (12.041199826559248 + 20.0 * 2f64.log10())).abs() < 1e-9);
}

fn gaussian_rows(n: usize, d: usize, shift: f64, seed: u64) -> Tensor {
    let v = rng::normals(&mut rng::rng_for(seed, "rows"), n * d).into_iter().map(|x| x + shift).collect();
    Tensor::new(&[n, d], v).unwrap()
}

#[test]
fn frechet_examples() {
    let a = gaussian_rows(500, 3, 0.0, 1);
    assert!(frechet_distance(&a, &a).unwrap() < 1e-8);
    let b = gaussian_rows(500, 3, 0.5, 2);
    let (ab, ba) = (frechet_distance(&a, &b).unwrap(), frechet_distance(&b, &a).unwrap());
    assert!((ab - ba).abs() < 1e-9);

    let n = 100_000;
    let x = gaussian_rows(n, 1, 0.0, 3);
    let y = gaussian_rows(n, 1, 1.0, 4);
    // the estimate is dominated by the sample-mean error, SE ≈ 2·sqrt(2/n)
    let se = 2.0 * (2.0 / n as f64).sqrt();
    assert!((frechet_distance(&x, &y).unwrap() - 1.0).abs() < 3.0 * se);

    assert!(frechet_distance(&gaussian_rows(1, 3, 0.0, 5), &a).is_err());
    assert!(frechet_distance(&a, &gaussian_rows(10, 2, 0.0, 6)).is_err());
}

#[test]
fn frechet_is_zero_for_moment_matched_sets() {
    // two different point sets with identical mean and covariance
    let a = Tensor::new(&[4, 2], vec![1.0, 0.0, -1.0, 0.0, 0.0, 1.0, 0.0, -1.0]).unwrap();
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let b = Tensor::new(&[4, 2], vec![s, s, -s, -s, -s, s, s, -s]).unwrap();
    assert!(frechet_distance(&a, &b).unwrap() < 1e-8);
}

#[test]
fn rfid_contracts() {
    let ds = generate(&DatasetSpec::sprites(8, 64, 1)).unwrap();
    let x = ds.batch(&(0..64).collect::<Vec<_>>()).unwrap();
    let f = RandomFeatures::new(ImageShape { height: 8, width: 8, channels: 1 }, 8, 1);
    assert_eq!(f.features(&x).unwrap().shape(), &[64, 8]);
    let same = rfid(&f, &x, &x, 8, 1).unwrap();
    assert!(same.value < 1e-8);
    let noisy = x.map(|v| (v + 0.5).min(1.0));
    assert!(rfid(&f, &x, &noisy, 8, 1).unwrap().value > same.value);
    assert!(rfid(&f, &x.select(&[0]), &x.select(&[0]), 8, 1).is_err());
}

#[test]
fn bitrate_report_identities() {
    let r = BitrateReport::from_estimate(Estimate { mean: 10.0, std_error: 0.5, n: 100 }, 64, 256, false);
    assert!((r.bits_per_pixel - r.bits_per_dim * 64.0 / 256.0).abs() < 1e-12);
    assert!((r.bits_per_dim - 10.0 / (64.0 * std::f64::consts::LN_2)).abs() < 1e-12);
}

#[test]
fn hand_counted_flops() {
    assert_eq!(flop_count(&NetworkSpec::default(), FlopMode::Inference), 0);
    let single = NetworkSpec { linears: vec![LinearMap { tokens: 4, din: 8, dout: 16 }], ..Default::default() };
    assert_eq!(flop_count(&single, FlopMode::Inference), 1024);
    // two dense layers 8 -> 16 -> 8 over 4 tokens plus one attention over 4 tokens of width 8
    let two = NetworkSpec {
        linears: vec![LinearMap { tokens: 4, din: 8, dout: 16 }, LinearMap { tokens: 4, din: 16, dout: 8 }],
        attention: vec![AttentionMap { tokens: 4, dim: 8 }],
        extra_params: 0,
    };
    assert_eq!(flop_count(&two, FlopMode::Inference), 1024 + 1024 + 2 * 4 * 4 * 8 + 2 * 4 * 4 * 8);
    assert_eq!(two.param_count(), 8 * 16 + 16 + 16 * 8 + 8);
    assert_eq!(flop_count(&two, FlopMode::Training), 3 * flop_count(&two, FlopMode::Inference));
}

#[test]
fn training_flops_are_three_times_inference() {
    let cost = model_cost(&ModelConfig::default()).unwrap();
    for c in [cost.encoder, cost.prior, cost.decoder, cost.base.unwrap()] {
        assert!(c.inference_flops > 0);
        assert_eq!(c.training_flops, 3 * c.inference_flops);
    }
}
