use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::signal::{instance_standardize, resize_to_length};

fn random_sample(channels: usize, len: usize, seed: u64) -> TimeSeriesSample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..channels * len)
        .map(|_| rng.gen_range(-50.0..50.0))
        .collect();
    TimeSeriesSample::new(data, channels, 100.0, 0, "s").unwrap()
}

fn mini() -> (MantisModel, ParamStore<f64>) {
    let mut store = ParamStore::new();
    let model = MantisModel::new(MantisConfig::mini(), &mut store, 17).unwrap();
    (model, store)
}

#[test]
fn positional_encoding_closed_form() {
    let p = sinusoidal_pe(33, 256).unwrap();
    let row0 = &p.data()[..256];
    assert!(row0.iter().step_by(2).all(|&v| v == 0.0));
    assert!(row0.iter().skip(1).step_by(2).all(|&v| v == 1.0));
    assert_eq!(p.data()[256], 1f64.sin());
    assert!(sinusoidal_pe(4, 7).is_err());
}

#[test]
fn tokenizer_shapes_full_config() {
    let mut store = ParamStore::<f32>::new();
    let model = MantisModel::new(MantisConfig::default(), &mut store, 0).unwrap();
    assert_eq!(model.projection.in_dim, 256 + 256 + 64);
    let raw: Vec<f64> = (0..512).map(|i| (i as f64 * 0.05).sin() * 30.0).collect();
    let norm = instance_standardize(&raw, 1).unwrap();
    let seq = model.tokenize_channel(&store, &norm, &raw).unwrap();
    assert_eq!(seq.tokens.shape(), &[32, 256]);
    assert_eq!(seq.with_cls.shape(), &[33, 256]);
    assert!(model
        .tokenize_channel(&store, &norm[..500], &raw[..500])
        .is_err());
}

#[test]
fn tokens_change_only_near_the_modified_patch() {
    let (model, store) = mini();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let raw: Vec<f64> = (0..512).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let j = 12;
    let mut raw2 = raw.clone();
    for v in &mut raw2[16 * j..16 * (j + 1)] {
        *v += rng.gen_range(-3.0..3.0);
    }
    // Standardized inputs are fed directly, so only patch j differs in both.
    let a = model.tokenize_channel(&store, &raw, &raw).unwrap();
    let b = model.tokenize_channel(&store, &raw2, &raw2).unwrap();

    // Receptive-field oracle: kernel 16 with padding (7, 8) reads inputs
    // o-7..=o+8; the difference series also changes at sample 16(j+1).
    let (left, right) = (7usize, 8usize);
    let mut affected = std::collections::BTreeSet::new();
    for o in 0..512usize {
        let lo = o.saturating_sub(left);
        let hi = (o + right).min(511);
        if lo <= 16 * (j + 1) && hi >= 16 * j {
            affected.insert(o / 16);
        }
    }
    assert_eq!(
        affected.iter().copied().collect::<Vec<_>>(),
        vec![j - 1, j, j + 1]
    );
    let d = model.config.token_dim;
    for row in 0..32 {
        let same =
            a.tokens.data()[row * d..(row + 1) * d] == b.tokens.data()[row * d..(row + 1) * d];
        assert_eq!(same, !affected.contains(&row), "row {row}");
    }
}

#[test]
fn zeroed_residual_branches_return_class_token_plus_position() {
    let (model, mut store) = mini();
    for block in &model.blocks {
        let out = block.attn.out.as_ref().unwrap();
        for id in [
            out.weight,
            out.bias.unwrap(),
            block.mlp.fc2.weight,
            block.mlp.fc2.bias.unwrap(),
        ] {
            store
                .get_mut(id)
                .data_mut()
                .iter_mut()
                .for_each(|v| *v = 0.0);
        }
    }
    let sample = random_sample(1, 300, 1);
    let z = model.embed(&store, &sample).unwrap();
    let cls = store.get(model.cls_token).data();
    let pe = sinusoidal_pe(33, 32).unwrap();
    for i in 0..32 {
        assert_eq!(z[i], cls[i] + pe.data()[i]);
    }
}

#[test]
fn encode_shape_and_eval_determinism() {
    let (model, store) = mini();
    let sample = random_sample(2, 777, 2);
    let a = model.embed(&store, &sample).unwrap();
    let b = model.embed(&store, &sample).unwrap();
    assert_eq!(a.len(), 64);
    assert_eq!(a, b);

    let mut full_store = ParamStore::<f32>::new();
    let full = MantisModel::new(MantisConfig::default(), &mut full_store, 3).unwrap();
    assert_eq!(full.embed(&full_store, &sample).unwrap().len(), 512);
}

#[test]
fn channel_permutation_and_duplication() {
    let (model, store) = mini();
    let s = random_sample(3, 256, 5);
    let z = model.embed(&store, &s).unwrap();
    let d = 32;
    let swapped = TimeSeriesSample::new(
        [s.channel(2), s.channel(0), s.channel(1)].concat(),
        3,
        100.0,
        0,
        "s",
    )
    .unwrap();
    let zs = model.embed(&store, &swapped).unwrap();
    assert_eq!(zs[..d], z[2 * d..]);
    assert_eq!(zs[d..2 * d], z[..d]);
    assert_eq!(zs[2 * d..], z[d..2 * d]);

    let dup =
        TimeSeriesSample::new([s.channel(1), s.channel(1)].concat(), 2, 100.0, 0, "s").unwrap();
    let zd = model.embed(&store, &dup).unwrap();
    assert_eq!(zd[..d], zd[d..]);
    assert_eq!(zd[..d], z[d..2 * d]);
}

#[test]
fn scale_response_only_through_scalar_branch() {
    let (model, mut store) = mini();
    let s = random_sample(2, 512, 6);
    let scaled = TimeSeriesSample {
        data: s.data.iter().map(|v| v * 3.5).collect(),
        ..s.clone()
    };
    let differs = model.embed(&store, &s).unwrap() != model.embed(&store, &scaled).unwrap();
    assert!(
        differs,
        "scalar statistics should make the raw scale visible"
    );

    store
        .get_mut(model.scalar_encoder.weight)
        .data_mut()
        .iter_mut()
        .for_each(|v| *v = 0.0);
    let a = model.embed(&store, &s).unwrap();
    let b = model.embed(&store, &scaled).unwrap();
    // Standardization divides by sqrt(var + 1e-8), so the match is exact up to
    // the guard term's relative effect.
    for (x, y) in a.iter().zip(&b) {
        assert!((x - y).abs() < 1e-9, "{x} vs {y}");
    }
}

#[test]
fn modifying_one_channel_changes_only_its_block() {
    let (model, store) = mini();
    let s = random_sample(3, 400, 8);
    let mut t = s.clone();
    let len = s.len();
    for v in &mut t.data[len..2 * len] {
        *v = -*v + 1.0;
    }
    let (a, b) = (
        model.embed(&store, &s).unwrap(),
        model.embed(&store, &t).unwrap(),
    );
    assert_eq!(a[..32], b[..32]);
    assert_ne!(a[32..64], b[32..64]);
    assert_eq!(a[64..], b[64..]);
}

#[test]
fn augmentation_contract() {
    let s = random_sample(2, 300, 9);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    assert_eq!(augment(&s, &AugmentConfig::identity(), &mut rng), s);
    let a = augment(&s, &AugmentConfig::default(), &mut rng);
    let b = augment(&s, &AugmentConfig::default(), &mut rng);
    assert_eq!(a.data.len(), s.data.len());
    assert_eq!(a.n_channels, 2);
    assert_ne!(a.data, b.data);
}

#[test]
fn input_prepares_raw_stats_before_standardizing() {
    let cfg = MantisConfig::mini();
    let s = random_sample(1, 100, 10);
    let input = MantisInput::from_samples(&[&s], &cfg).unwrap();
    let raw = resize_to_length(s.channel(0), 512).unwrap();
    let mean0 = raw[..16].iter().sum::<f64>() / 16.0;
    assert!((input.stats[0] - mean0).abs() < 1e-12);
    let m: f64 = input.normalized.iter().sum::<f64>() / 512.0;
    assert!(m.abs() < 1e-9);
    assert_eq!(input.differenced[0], 0.0);
}

mod props {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(12))]
        #[test]
        fn encode_length_is_independent_of_series_length(len in 2usize..1500, channels in 1usize..4) {
            let (model, store) = mini();
            let s = random_sample(channels, len, len as u64);
            prop_assert_eq!(model.embed(&store, &s).unwrap().len(), 32 * channels);
        }
    }
}
