use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use vfi_core::checkpoint::*;
use vfi_core::codec::{Codec, CodecConfig, CodecTrainConfig, CodecTrainer};
use vfi_core::data::{generate_synthetic, FrameTriplet, MotionTier, SyntheticConfig};
use vfi_core::denoiser::{Denoiser, DenoiserConfig, DenoiserTrainConfig, DenoiserTrainer};
use vfi_core::diffusion::ScheduleSpec;
use vfi_core::event_motion::{HintBackend, I2eConfig, LearnedI2e};
use vfi_tensor::ParamStore;

fn codec_config() -> CodecConfig {
    CodecConfig {
        image_channels: 1,
        factor: 4,
        pyramid_levels: 2,
        codebook_size: 16,
        embed_dim: 4,
        base_width: 8,
        bins: 2,
        use_hints: true,
    }
}

fn denoiser_config() -> DenoiserConfig {
    DenoiserConfig {
        latent_channels: 4,
        base_width: 8,
        depth: 2,
        attention_heads: 2,
        time_embed_dim: 8,
        bins: 2,
        use_hints: true,
    }
}

fn data() -> Vec<FrameTriplet<f32>> {
    let cfg = SyntheticConfig { height: 16, width: 16, channels: 1, hard_speed: (4.0, 7.0), ..SyntheticConfig::default() };
    generate_synthetic(&cfg, Some(MotionTier::Medium), 0, 3, 5).unwrap()
}

fn same_bits<S: vfi_tensor::Scalar>(a: &ParamStore<S>, b: &ParamStore<S>) -> bool {
    a.len() == b.len()
        && a.iter().zip(b.iter()).all(|((na, ta), (nb, tb))| {
            na == nb && ta.shape() == tb.shape() && ta.data().iter().zip(tb.data()).all(|(x, y)| x.as_f64().to_bits() == y.as_f64().to_bits())
        })
}

#[test]
fn model_checkpoints_round_trip_bit_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let info = CheckpointInfo { config_hash: Some("abc".into()), step: 17 };

    let codec = Codec::<f64>::new(codec_config(), &mut rng).unwrap();
    let p = dir.path().join("codec.bin");
    save_codec(&p, &codec, &info).unwrap();
    let (back, got) = load_codec::<f64>(&p).unwrap();
    assert_eq!(got, info);
    assert_eq!(back.config(), codec.config());
    assert!(same_bits(codec.store(), back.store()));
    let p2 = dir.path().join("codec2.bin");
    save_codec(&p2, &back, &info).unwrap();
    assert_eq!(std::fs::read(&p).unwrap(), std::fs::read(&p2).unwrap());

    let mut den = Denoiser::<f64>::new(denoiser_config(), ScheduleSpec { steps: 30, ..ScheduleSpec::default() }, &mut rng).unwrap();
    den.latent_scale = 0.731;
    let p = dir.path().join("den.bin");
    save_denoiser(&p, &den, &info).unwrap();
    let (back, _) = load_denoiser::<f64>(&p).unwrap();
    assert!(same_bits(den.store(), back.store()));
    assert_eq!(back.latent_scale, 0.731);
    assert_eq!(back.schedule(), den.schedule());

    let net = LearnedI2e::<f32>::new(I2eConfig { bins: 2, width: 4, ..I2eConfig::default() }, &mut rng).unwrap();
    let p = dir.path().join("i2e.bin");
    save_i2e(&p, &net, &CheckpointInfo::default()).unwrap();
    let (back, _) = load_i2e::<f32>(&p).unwrap();
    assert!(same_bits(net.store(), back.store()));

    assert!(load_codec::<f64>(&dir.path().join("den.bin")).is_err());
    assert!(load_codec::<f32>(&dir.path().join("codec.bin")).is_err());
    assert!(check_config_hash(&info, "abc").is_ok());
    assert!(check_config_hash(&info, "abd").is_err());
}

#[test]
fn codec_trainer_resumes_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let data = data();
    let backend = HintBackend::simulator(0.1, 2);
    let config = CodecTrainConfig { steps: 6, batch_size: 2, adv_warmup: 0.0, ..CodecTrainConfig::default() };
    let codec = Codec::<f32>::new(codec_config(), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let mut a = CodecTrainer::new(codec, config, 9).unwrap();
    for _ in 0..3 {
        a.train_step(&data, &backend).unwrap();
    }
    let p = dir.path().join("trainer.bin");
    save_codec_trainer(&p, &a, None).unwrap();
    let mut b = load_codec_trainer::<f32>(&p).unwrap();
    assert_eq!(b.step, 3);
    for _ in 0..3 {
        let la = a.train_step(&data, &backend).unwrap().loss;
        let lb = b.train_step(&data, &backend).unwrap().loss;
        assert_eq!(la.to_bits(), lb.to_bits());
    }
    assert!(same_bits(a.codec.store(), b.codec.store()));
    assert!(same_bits(a.disc.store(), b.disc.store()));
}

#[test]
fn denoiser_trainer_resumes_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let data = data();
    let backend = HintBackend::simulator(0.1, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let codec = Codec::<f32>::new(codec_config(), &mut rng).unwrap();
    let den = Denoiser::new(denoiser_config(), ScheduleSpec { steps: 50, ..ScheduleSpec::default() }, &mut rng).unwrap();
    let config = DenoiserTrainConfig { steps: 6, batch_size: 2, ..DenoiserTrainConfig::default() };
    let mut a = DenoiserTrainer::new(den, config, 4).unwrap();
    for _ in 0..2 {
        a.train_step(&codec, &data, &backend).unwrap();
    }
    let p = dir.path().join("trainer.bin");
    save_denoiser_trainer(&p, &a, Some("h".into())).unwrap();
    let mut b = load_denoiser_trainer::<f32>(&p).unwrap();
    for _ in 0..2 {
        let la = a.train_step(&codec, &data, &backend).unwrap().loss;
        let lb = b.train_step(&codec, &data, &backend).unwrap().loss;
        assert_eq!(la.to_bits(), lb.to_bits());
    }
    assert!(same_bits(a.denoiser.store(), b.denoiser.store()));
    // A plain model checkpoint loads from the trainer file too.
    let (plain, info) = load_denoiser::<f32>(&p).unwrap();
    assert_eq!(info.config_hash.as_deref(), Some("h"));
    assert_eq!(plain.config(), b.denoiser.config());
}
