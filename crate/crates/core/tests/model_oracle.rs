mod common;

use nalgebra::{DMatrix, RowDVector};
use pricure::model::{
    argmax, forward_fixed, forward_float, from_model_str, generate_fixture, load_model, make_blobs, nearest_mean_readout,
    save_model, to_model_string, ModelError, ModelMeta, ModelParameters, NetworkSpec, SyntheticDataset,
};
use pricure::ring::FixedPointCodec;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

fn nalgebra_forward(params: &ModelParameters, x: &[f64]) -> Vec<f64> {
    let mut h = RowDVector::from_row_slice(x);
    let last = params.layers.len() - 1;
    for (j, layer) in params.layers.iter().enumerate() {
        let w = DMatrix::from_row_slice(layer.inputs, layer.outputs, &layer.weights);
        let b = RowDVector::from_row_slice(&layer.bias);
        h = &h * &w + b;
        if j < last {
            h.apply(|v| *v = v.max(0.0));
        }
    }
    h.iter().copied().collect()
}

/// Integer replay of the fixed-point schedule: `z = h·W + f·b`, floor
/// division by `f`, ReLU between layers.
fn integer_forward(params: &ModelParameters, x: &[f64]) -> Vec<i128> {
    let to_int = |v: f64| (v * 100.0).round() as i128;
    let mut h: Vec<i128> = x.iter().map(|&v| to_int(v)).collect();
    let last = params.layers.len() - 1;
    for (j, l) in params.layers.iter().enumerate() {
        h = (0..l.outputs)
            .map(|c| {
                let z: i128 = (0..l.inputs).map(|i| h[i] * to_int(l.weight(i, c))).sum::<i128>() + 100 * to_int(l.bias[c]);
                let t = z.div_euclid(100);
                if j < last {
                    t.max(0)
                } else {
                    t
                }
            })
            .collect();
    }
    h
}

fn grid_input(n: usize, rng: &mut impl Rng) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(0..=100) as f64 / 100.0).collect()
}

#[test]
fn float_forward_matches_linear_algebra_oracle() {
    let mut rng = ChaCha20Rng::seed_from_u64(1);
    for spec in [NetworkSpec::new(20, vec![15, 9], 4), NetworkSpec::mimic(), NetworkSpec::new(3, vec![], 2)] {
        let params = generate_fixture(&spec, 2);
        for _ in 0..100 {
            let x: Vec<f64> = (0..spec.input_dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let got = forward_float(&params, &x).unwrap();
            for (a, b) in got.iter().zip(nalgebra_forward(&params, &x)) {
                assert!((a - b).abs() <= 1e-9, "{a} vs {b}");
            }
        }
    }
}

#[test]
fn fixed_forward_matches_integer_replay() {
    let codec = FixedPointCodec::default();
    let mut rng = ChaCha20Rng::seed_from_u64(3);
    for (k, spec) in [NetworkSpec::mnist(), NetworkSpec::new(30, vec![40, 20, 10], 5), NetworkSpec::idc().with_hidden(16)]
        .into_iter()
        .enumerate()
    {
        let params = generate_fixture(&spec, k as u64);
        for _ in 0..10 {
            let x = grid_input(spec.input_dim, &mut rng);
            let got = forward_fixed(&params, &x, codec).unwrap();
            let want = integer_forward(&params, &x);
            let got: Vec<i128> = got.data().iter().map(|&v| codec.modulus().lift(v) as i128).collect();
            assert_eq!(got, want);
        }
    }
}

#[test]
fn fixed_forward_tracks_float_within_truncation_error() {
    let codec = FixedPointCodec::default();
    let spec = NetworkSpec::new(10, vec![], 3);
    let params = generate_fixture(&spec, 5);
    let mut rng = ChaCha20Rng::seed_from_u64(6);
    for _ in 0..200 {
        let x = grid_input(10, &mut rng);
        let fixed = codec.decode_tensor(&forward_fixed(&params, &x, codec).unwrap());
        for (a, b) in fixed.iter().zip(forward_float(&params, &x).unwrap()) {
            assert!(b - a >= -1e-9 && b - a < 0.01 + 1e-9, "{a} vs {b}");
        }
    }
}

#[test]
fn fixed_forward_rejects_out_of_range_and_wrong_width() {
    let codec = FixedPointCodec::default();
    let spec = NetworkSpec::new(2, vec![], 1);
    let mut params = ModelParameters::zeros(&spec);
    params.layers[0].weights = vec![1.0e6, 1.0e6];
    assert!(forward_fixed(&params, &[1.0e6, 1.0e6], codec).is_err());
    assert!(matches!(forward_fixed(&params, &[1.0], codec), Err(ModelError::Dimension { expected: 2, got: 1 })));
}

#[test]
fn presets_have_published_shapes() {
    let shapes = |s: NetworkSpec| s.dims();
    assert_eq!(shapes(NetworkSpec::preset("mnist").unwrap()), vec![784, 128, 64, 10]);
    assert_eq!(shapes(NetworkSpec::preset("fmnist").unwrap()), vec![784, 128, 64, 10]);
    assert_eq!(shapes(NetworkSpec::preset("idc").unwrap()), vec![7500, 500, 2]);
    assert_eq!(shapes(NetworkSpec::preset("mimic").unwrap()), vec![30, 500, 4]);
    assert!(matches!(NetworkSpec::preset("cifar"), Err(ModelError::UnknownPreset(_))));
    assert_eq!(NetworkSpec::mimic().to_string(), "30-500-4");
    assert!(NetworkSpec::new(0, vec![], 2).validate().is_err());
}

#[test]
fn model_files_round_trip_and_fixtures_are_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let spec = NetworkSpec::mimic();
    let params = generate_fixture(&spec, 11);
    assert_eq!(params, generate_fixture(&spec, 11));
    assert_ne!(params, generate_fixture(&spec, 12));
    let meta = ModelMeta {
        owner: Some(3),
        note: "fixture".into(),
    };
    let path = dir.path().join("m.json");
    save_model(&path, &params, &meta).unwrap();
    let (back, back_meta) = load_model(&path).unwrap();
    assert_eq!(back, params);
    assert_eq!(back_meta, meta);
    assert_eq!(back.layers[0].weights.len(), 30 * 500);
    assert_eq!(back.layers[1].bias.len(), 4);
}

#[test]
fn malformed_files_fail_with_locations() {
    let params = generate_fixture(&NetworkSpec::new(2, vec![3], 2), 1);
    let text = to_model_string(&params, &ModelMeta::default()).unwrap();
    let cut = &text[..text.len() / 2];
    assert!(matches!(from_model_str(cut), Err(ModelError::Parse { line: 1, column, .. }) if column > 0));

    let wrong = text.replace("pricure-model/1", "pricure-model/2");
    assert!(matches!(from_model_str(&wrong), Err(ModelError::Version(v)) if v == "pricure-model/2"));

    let first = params.layers[0].bias[0];
    let needle = format!("\"bias\":[\"{}", pricure::model::format_decimal(first));
    assert!(text.contains(&needle));
    let loose = text.replacen(&needle, "\"bias\":[\"0.5", 1);
    let err = from_model_str(&loose).unwrap_err();
    assert!(matches!(&err, ModelError::Decimal { location, .. } if location == "layers[0].bias[0]"), "{err}");

    let mut short = params.clone();
    short.layers[1].bias.pop();
    assert!(to_model_string(&short, &ModelMeta::default()).is_err());
}

#[test]
fn externally_written_file_loads() {
    let text = r#"{
  "format": "pricure-model/1",
  "spec": {"input_dim": 3, "hidden_dims": [2], "output_dim": 2,
           "hidden_activation": "relu", "output_activation": "linear"},
  "meta": {"owner": 7, "note": "sgd batch=32 lr=0.001", "optimizer": "sgd", "batch_size": 32},
  "layers": [
    {"weights": [["0.10", "-0.20"], ["1.00", "0.00"], ["-0.05", "0.33"]], "bias": ["0.01", "-1.50"]},
    {"weights": [["2.00", "-2.00"], ["0.50", "0.25"]], "bias": ["0.00", "0.10"]}
  ]
}"#;
    let (params, meta) = from_model_str(text).unwrap();
    assert_eq!(meta.owner, Some(7));
    assert_eq!(params.layers[0].weight(2, 1), 0.33);
    assert_eq!(params.layers[0].bias[1], -1.5);
    let y = forward_float(&params, &[1.0, 1.0, 1.0]).unwrap();
    let codec = FixedPointCodec::default();
    let fixed = codec.decode_tensor(&forward_fixed(&params, &[1.0, 1.0, 1.0], codec).unwrap());
    assert!((y[0] - 2.12).abs() < 1e-12 && (fixed[0] - 2.12).abs() < 1e-12, "{y:?} {fixed:?}");
}

fn accuracy(models: &[ModelParameters], data: &SyntheticDataset) -> f64 {
    let hits = data
        .samples
        .iter()
        .filter(|s| {
            let mut votes = vec![0.0; data.classes];
            for p in models {
                votes[argmax(&forward_float(p, &s.features).unwrap())] += 1.0;
            }
            argmax(&votes) == s.label
        })
        .count();
    hits as f64 / data.samples.len() as f64
}

#[test]
fn nearest_mean_readouts_separate_blobs() {
    let spec = NetworkSpec::new(16, vec![20, 20], 10);
    let (_, models) = common::blob_setup(&spec, 10, 50, 1);
    let test = make_blobs(100, 10, 16, 2).unwrap();
    let single = accuracy(&models[..1], &test);
    let ensemble = accuracy(&models, &test);
    assert!(single >= 0.99, "{single}");
    assert!(ensemble >= 0.99, "{ensemble}");
    assert!(nearest_mean_readout(&NetworkSpec::new(16, vec![19], 10), &test.means).is_err());
}

#[test]
fn shuffled_labels_give_chance_accuracy() {
    let spec = NetworkSpec::new(16, vec![20], 10);
    let mut train = make_blobs(50, 10, 16, 3).unwrap();
    let mut labels: Vec<usize> = train.samples.iter().map(|s| s.label).collect();
    labels.shuffle(&mut ChaCha20Rng::seed_from_u64(4));
    for (s, l) in train.samples.iter_mut().zip(labels) {
        s.label = l;
    }
    let models = common::blob_owners(&spec, &train, 1);
    let acc = accuracy(&models, &make_blobs(200, 10, 16, 5).unwrap());
    assert!((acc - 0.1).abs() < 0.08, "{acc}");
}

#[test]
fn datasets_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let data = make_blobs(5, 3, 4, 9).unwrap();
    let path = dir.path().join("d.json");
    data.save(&path).unwrap();
    assert_eq!(SyntheticDataset::load(&path).unwrap(), data);
    assert_eq!(make_blobs(5, 3, 4, 9).unwrap(), data);
    assert_eq!(make_blobs(2, 5, 3, 9).unwrap().means.len(), 5);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn hidden_permutations_leave_outputs_unchanged(seed: u64, x in proptest::collection::vec(-1.0f64..1.0, 6)) {
        let spec = NetworkSpec::new(6, vec![7], 3);
        let params = generate_fixture(&spec, seed);
        let mut perm: Vec<usize> = (0..7).collect();
        perm.shuffle(&mut ChaCha20Rng::seed_from_u64(seed));
        let mut permuted = params.clone();
        for (new, &old) in perm.iter().enumerate() {
            for i in 0..6 {
                permuted.layers[0].set_weight(i, new, params.layers[0].weight(i, old));
            }
            permuted.layers[0].bias[new] = params.layers[0].bias[old];
            for c in 0..3 {
                permuted.layers[1].set_weight(new, c, params.layers[1].weight(old, c));
            }
        }
        let a = forward_float(&params, &x).unwrap();
        let b = forward_float(&permuted, &x).unwrap();
        for (u, v) in a.iter().zip(&b) {
            prop_assert!((u - v).abs() < 1e-12);
        }
        let codec = FixedPointCodec::default();
        let xq: Vec<f64> = x.iter().map(|v| pricure::model::quantize(*v)).collect();
        prop_assert_eq!(forward_fixed(&params, &xq, codec).unwrap(), forward_fixed(&permuted, &xq, codec).unwrap());
    }
}
