//! Config text, checkpoint container and image IO.

use std::path::Path;

use proptest::prelude::*;
use unilat::checkpoint;
use unilat::config::RunConfig;
use unilat::images;
use unilat::Error;
use unilat_core::data::{generate, DatasetSpec, Family, ImageDataset};
use unilat_core::nn::{LatentModel, ModelBundle, ModelConfig};
use unilat_core::rng;
use unilat_core::sampler::{decode, sample_latent, SamplerConfig};
use unilat_core::Tensor;

fn origin() -> &'static Path {
    Path::new("test.txt")
}

#[test]
fn config_round_trips() {
    let mut cfg = RunConfig::default();
    cfg.train.weighting.bias = f64::INFINITY;
    cfg.train.base_lambda_max = Some(5.0);
    cfg.train.optim.learning_rate = 1.0 / 3.0;
    cfg.data.family = Family::Checkerboards { min_freq: 2, max_freq: 5 };
    let text = cfg.to_text().unwrap();
    let back = RunConfig::from_text(&text, origin()).unwrap();
    assert_eq!(back, cfg);
    assert_eq!(back.to_text().unwrap(), text);
}

#[test]
fn missing_keys_take_defaults_and_sections_are_accepted() {
    let cfg = RunConfig::from_text("train.steps = 7\n[model.latent]\nlambda_z0 = 10.0\n", origin()).unwrap();
    let mut want = RunConfig::default();
    want.train.steps = 7;
    want.model.latent.lambda_z0 = 10.0;
    assert_eq!(cfg, want);
}

#[test]
fn switching_a_tagged_variant_replaces_its_fields() {
    let cfg = RunConfig::from_text("data.family.kind = \"sprites\"\ndata.family.glyphs = 2\n", origin()).unwrap();
    assert_eq!(cfg.data.family, Family::Sprites { glyphs: 2 });
    let err = RunConfig::from_text("data.family.kind = \"checkerboards\"\n", origin()).unwrap_err();
    assert!(matches!(err, Error::Parse { line: 1, .. }), "{err}");
}

fn parse_error_line(text: &str) -> usize {
    match RunConfig::from_text(text, origin()) {
        Err(Error::Parse { line, .. }) => line,
        other => panic!("expected a parse error, got {other:?}"),
    }
}

#[test]
fn errors_carry_line_numbers() {
    assert_eq!(parse_error_line("train.steps = 3\n\ntrain.stepz = 4\n"), 3);
    assert_eq!(parse_error_line("# c\ntrain.steps = 3\nmodel.latent.c = \"x\"\n"), 3);
    assert_eq!(parse_error_line("train.steps = 3\ntrain.steps 4\n"), 2);
    let e = RunConfig::from_text("[train]\nseed = -1\n", origin()).unwrap_err();
    assert!(e.to_string().starts_with("test.txt:2:"), "{e}");
}

#[test]
fn missing_file_names_the_path() {
    let e = RunConfig::load(Path::new("/nonexistent/run.txt")).unwrap_err();
    assert!(e.to_string().contains("/nonexistent/run.txt"));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn numeric_fields_round_trip(lr in 1e-9f64..1.0, bias in -20f64..20.0, steps in 0usize..1_000_000, seed in 0..=i64::MAX as u64) {
        let mut cfg = RunConfig::default();
        cfg.train.optim.learning_rate = lr;
        cfg.train.weighting.bias = bias;
        cfg.train.steps = steps;
        cfg.train.seed = seed;
        let back = RunConfig::from_text(&cfg.to_text().unwrap(), origin()).unwrap();
        prop_assert_eq!(back, cfg);
    }
}

#[test]
fn seeds_beyond_i64_are_reported() {
    let mut cfg = RunConfig::default();
    cfg.train.seed = u64::MAX;
    assert!(cfg.to_text().unwrap_err().to_string().contains("not representable"));
}

fn trained_looking_bundle() -> ModelBundle {
    let mut b = ModelBundle::new(ModelConfig::default(), 5).unwrap();
    let mut r = rng::rng_for(9, "jitter");
    for id in b.params.ids().collect::<Vec<_>>() {
        for v in b.params.get_mut(id).data_mut() {
            *v += 0.05 * rng::normal(&mut r);
        }
    }
    let mut ema = b.params.clone();
    for id in ema.ids().collect::<Vec<_>>() {
        for v in ema.get_mut(id).data_mut() {
            *v *= 0.999;
        }
    }
    b.ema = Some(ema);
    b.steps_trained = 12;
    b
}

#[test]
fn checkpoint_reload_is_bit_identical() {
    let b = trained_looking_bundle();
    let bytes = checkpoint::to_bytes(&b, Some(&Default::default())).unwrap();
    let (c, header) = checkpoint::from_bytes(&bytes, origin()).unwrap();
    assert_eq!(header.steps_trained, 12);
    assert_eq!(header.summary.lambda_z0, 5.0);
    assert_eq!(c.params.flatten(), b.params.flatten());
    assert_eq!(c.ema.as_ref().unwrap().flatten(), b.ema.as_ref().unwrap().flatten());
    assert_eq!(c.config(), b.config());

    let cfg = SamplerConfig { steps: 4, seed: 2, ..Default::default() };
    let za = sample_latent(&b, LatentModel::Prior, 3, &cfg).unwrap();
    let zb = sample_latent(&c, LatentModel::Prior, 3, &cfg).unwrap();
    assert_eq!(za, zb);
    assert_eq!(decode(&b, &za, &cfg).unwrap(), decode(&c, &zb, &cfg).unwrap());
    let x = generate(&DatasetSpec::blobs(16, 4, 1)).unwrap().batch(&[0, 1, 2, 3]).unwrap();
    assert_eq!(b.encode(&x).unwrap(), c.encode(&x).unwrap());
}

#[test]
fn corrupt_checkpoints_are_rejected() {
    let b = trained_looking_bundle();
    let bytes = checkpoint::to_bytes(&b, None).unwrap();
    assert!(checkpoint::from_bytes(&bytes[..bytes.len() - 8], origin()).is_err());
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(checkpoint::from_bytes(&bad, origin()).is_err());
    assert!(checkpoint::from_bytes(&bytes[..10], origin()).is_err());
    // a checkpoint of another architecture cannot fill this one
    let mut other = ModelConfig::default();
    other.prior.widths = vec![8];
    let small = ModelBundle::new(other, 1).unwrap();
    let small_bytes = checkpoint::to_bytes(&small, None).unwrap();
    let (back, _) = checkpoint::from_bytes(&small_bytes, origin()).unwrap();
    assert_eq!(back.config().prior.widths, vec![8]);
}

#[test]
fn checkpoint_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("a.ulckpt");
    let b = trained_looking_bundle();
    checkpoint::save(&p, &b, None).unwrap();
    let raw = std::fs::read(&p).unwrap();
    assert_eq!(&raw[..8], checkpoint::MAGIC);
    let (c, _) = checkpoint::load(&p).unwrap();
    assert_eq!(c.params.flatten(), b.params.flatten());
}

#[test]
fn export_then_ingest_reproduces_pixels() {
    let dir = tempfile::tempdir().unwrap();
    for channels in [1, 3] {
        let mut spec = DatasetSpec::sprites(16, 6, 3);
        spec.channels = channels;
        let data = generate(&spec).unwrap();
        let sub = dir.path().join(format!("c{channels}"));
        let files = images::export_dataset(&data, &sub, "img-").unwrap();
        assert_eq!(files.len(), 6);
        let ing = images::ingest_folder(&sub, 16, channels).unwrap();
        assert_eq!(ing.dataset.len(), 6);
        assert!(ing.skipped.is_empty());
        for k in 0..6 {
            let (a, b) = (data.image(k).unwrap(), ing.dataset.image(k).unwrap());
            // 8-bit quantization over a range of width 2
            assert!(a.iter().zip(&b).all(|(x, y)| (x - y).abs() <= 1.0 / 255.0 + 1e-12));
        }
    }
}

#[test]
fn ingest_crops_resizes_and_skips() {
    let dir = tempfile::tempdir().unwrap();
    let big = generate(&DatasetSpec::blobs(64, 1, 2)).unwrap();
    images::write_png(&dir.path().join("a.png"), &big.image(0).unwrap(), big.image_shape()).unwrap();
    std::fs::write(dir.path().join("b.png"), b"not an image").unwrap();
    std::fs::write(dir.path().join("notes.txt"), b"ignored").unwrap();
    let ing = images::ingest_folder(dir.path(), 32, 1).unwrap();
    assert_eq!(ing.dataset.len(), 1);
    assert_eq!(ing.dataset.image_shape().dims(), [32, 32, 1]);
    assert!(ing.dataset.image(0).unwrap().iter().all(|v| (-1.0..=1.0).contains(v)));
    assert_eq!(ing.skipped.len(), 1);
    assert!(ing.skipped[0].path.ends_with("b.png"));

    let empty = tempfile::tempdir().unwrap();
    assert!(images::ingest_folder(empty.path(), 32, 1).unwrap().dataset.is_empty());
}

#[test]
fn rejects_unsupported_channel_counts() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("x.png");
    let shape = unilat_core::nn::ImageShape { height: 2, width: 2, channels: 2 };
    assert!(images::write_png(&p, &[0.0; 8], shape).is_err());
    assert!(images::ingest_folder(dir.path(), 2, 2).is_err());
    let t = Tensor::zeros(&[1]);
    assert!(images::write_png(&p, t.data(), shape).is_err());
}
