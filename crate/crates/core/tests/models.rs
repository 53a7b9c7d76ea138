use candle_core::{DType, Tensor, D};
use rosebreed_core::dataset::PixelTensor;
use rosebreed_core::models::{
    build_classifier, stub_classifier, BackboneFamily, BackboneSpec, Classifier, Precision,
    WEIGHTS_DIR_ENV,
};
use rosebreed_core::{Error, ErrorCategory};

fn pattern_image(size: (usize, usize), phase: f32) -> PixelTensor {
    let (h, w) = size;
    let mut data = Vec::with_capacity(h * w * 3);
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                let v = ((x as f32 * 0.13 + y as f32 * 0.07 + c as f32 + phase).sin() + 1.0) / 2.0;
                data.push(v);
            }
        }
    }
    PixelTensor { height: h, width: w, data }
}

fn random_spec(family: BackboneFamily) -> BackboneSpec {
    BackboneSpec::new(family).random_init(7)
}

#[test]
fn vgg16_five_classes_takes_224_and_emits_five_probabilities() {
    let clf = build_classifier(&random_spec(BackboneFamily::Vgg16), 5).unwrap();
    assert_eq!(clf.input_size(), (224, 224));
    let probs = clf.predict(&[pattern_image((224, 224), 0.0)]).unwrap();
    assert_eq!(probs.len(), 1);
    assert_eq!(probs[0].len(), 5);
    assert!((probs[0].iter().sum::<f64>() - 1.0).abs() < 1e-5);

    let s = clf.describe();
    let reference = 138_000_000.0;
    assert!(
        ((s.total_parameters as f64 - reference) / reference).abs() <= 0.05,
        "{}",
        s.total_parameters
    );
    assert_eq!(s.layer_count, 16);
}

#[test]
fn every_family_honours_the_forward_contract() {
    for family in BackboneFamily::TRANSFER {
        let clf = build_classifier(&random_spec(family), 5).unwrap();
        let size = clf.input_size();
        assert_eq!(size, family.default_input_size());
        let a = pattern_image(size, 0.0);
        let b = pattern_image(size, 1.3);
        let batch = vec![a.clone(), b, a.clone(), a];
        let probs = clf.predict(&batch).unwrap();
        assert_eq!((probs.len(), probs[0].len()), (4, 5), "{family}");
        for row in &probs {
            assert!(row.iter().all(|&p| p >= 0.0));
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-5, "{family}: {row:?}");
        }
        assert_eq!(probs[0], probs[2], "{family}: duplicate rows differ");
        assert_eq!(probs[0], probs[3], "{family}: duplicate rows differ");
        let again = clf.predict(&batch).unwrap();
        assert_eq!(probs, again, "{family}: inference is not deterministic");
    }
}

#[test]
fn parameter_counts_match_reference_architectures() {
    // Extractor sizes of the standard ImageNet architectures without their
    // classification tops; VGG16 keeps its two 4096-wide dense layers.
    let expected = [
        (BackboneFamily::InceptionV3, 21_802_784usize, 2048usize),
        (BackboneFamily::Xception, 20_861_480, 2048),
        (BackboneFamily::ResNet50, 23_587_712, 2048),
        (BackboneFamily::Vgg16, 134_260_544, 4096),
    ];
    for (family, extractor, feature_dim) in expected {
        let clf = build_classifier(&random_spec(family), 5).unwrap();
        let s = clf.describe();
        let head = feature_dim * 5 + 5;
        assert_eq!(clf.feature_dim(), feature_dim, "{family}");
        assert_eq!(s.head_parameters, head, "{family}");
        assert_eq!(s.total_parameters, extractor + head, "{family}");
        assert_eq!(s.trainable_parameters, head, "{family}");
    }
}

#[test]
fn resnet50_conv_count_is_in_reference_range() {
    let s = build_classifier(&random_spec(BackboneFamily::ResNet50), 5)
        .unwrap()
        .describe();
    assert!((48..=50).contains(&s.conv_layers), "{}", s.conv_layers);
}

#[test]
fn frozen_and_unfrozen_share_totals() {
    for family in [BackboneFamily::ResNet50, BackboneFamily::Micro] {
        let frozen = build_classifier(&random_spec(family), 5).unwrap().describe();
        let open = BackboneSpec {
            freeze_extractor: false,
            ..random_spec(family)
        };
        let open = build_classifier(&open, 5).unwrap().describe();
        assert_eq!(frozen.total_parameters, open.total_parameters);
        assert!(frozen.trainable_parameters < open.trainable_parameters);
        assert_eq!(frozen.trainable_parameters, frozen.head_parameters);
    }
}

#[test]
fn construction_errors() {
    assert!("alexnet".parse::<BackboneFamily>().is_err());
    assert_eq!(
        "Inception-V3".parse::<BackboneFamily>().unwrap(),
        BackboneFamily::InceptionV3
    );

    let small = random_spec(BackboneFamily::InceptionV3).with_input_size((64, 64));
    let err = build_classifier(&small, 5).unwrap_err();
    assert_eq!(err.category(), ErrorCategory::Usage, "{err}");

    assert!(build_classifier(&random_spec(BackboneFamily::Micro), 1).is_err());

    let too_deep = BackboneSpec {
        fine_tune_top: 99,
        ..random_spec(BackboneFamily::Micro)
    };
    assert!(build_classifier(&too_deep, 2).is_err());
}

#[test]
fn missing_pretrained_weights_fail_construction() {
    let empty = tempfile::tempdir().unwrap();
    std::env::set_var(WEIGHTS_DIR_ENV, empty.path());
    let err = build_classifier(&BackboneSpec::new(BackboneFamily::ResNet50), 5).unwrap_err();
    assert!(matches!(err, Error::WeightsUnavailable { .. }), "{err}");
}

#[test]
fn saved_weights_reload_identically() {
    let clf = stub_classifier(3, 16, 11).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let spec = BackboneSpec {
        precision: Precision::F64,
        ..BackboneSpec::new(BackboneFamily::Micro).with_input_size((16, 16))
    };
    let path = dir.path().join("micro.safetensors");
    clf.save_safetensors(&path).unwrap();
    let loaded = Classifier::from_safetensors(&spec, 3, &path).unwrap();
    assert_eq!(loaded.extractor_checksum().unwrap(), clf.extractor_checksum().unwrap());
    assert_eq!(loaded.head_checksum().unwrap(), clf.head_checksum().unwrap());
    let img = pattern_image((16, 16), 0.4);
    assert_eq!(loaded.predict(&[img.clone()]).unwrap(), clf.predict(&[img]).unwrap());
}

#[test]
fn shape_mismatch_is_rejected() {
    let clf = stub_classifier(2, 16, 3).unwrap();
    assert!(clf.predict(&[pattern_image((15, 16), 0.0)]).is_err());
    assert!(clf.predict(&[]).is_err());
    let wrong = Tensor::zeros((1, 3, 8, 8), DType::F64, clf.device()).unwrap();
    assert!(clf.forward(&wrong).is_err());
}

fn mean_cross_entropy(clf: &Classifier, batch: &Tensor, labels: &Tensor) -> Tensor {
    let logits = clf.logits(batch).unwrap();
    let logp = candle_nn::ops::log_softmax(&logits, D::Minus1).unwrap();
    logp.gather(&labels.unsqueeze(1).unwrap(), 1)
        .unwrap()
        .neg()
        .unwrap()
        .mean_all()
        .unwrap()
}

#[test]
fn head_gradient_matches_finite_differences() {
    let clf = stub_classifier(2, 8, 5).unwrap();
    let images = [
        pattern_image((8, 8), 0.0),
        pattern_image((8, 8), 2.0),
        pattern_image((8, 8), 4.0),
    ];
    let batch = clf.batch_tensor(&images).unwrap();
    let labels = Tensor::new(&[0u32, 1, 1], clf.device()).unwrap();
    let vars = clf.trainable_vars();
    assert_eq!(vars.len(), 2);
    let grads = mean_cross_entropy(&clf, &batch, &labels).backward().unwrap();
    let eps = 1e-6;
    for var in &vars {
        let analytic = grads
            .get(var.as_tensor())
            .unwrap()
            .flatten_all()
            .unwrap()
            .to_vec1::<f64>()
            .unwrap();
        let base = var.as_tensor().copy().unwrap();
        let flat = base.flatten_all().unwrap().to_vec1::<f64>().unwrap();
        for (i, &a) in analytic.iter().enumerate() {
            let bump = |delta: f64| {
                let mut v = flat.clone();
                v[i] += delta;
                var.set(&Tensor::from_vec(v, base.dims(), clf.device()).unwrap())
                    .unwrap();
                let l = mean_cross_entropy(&clf, &batch, &labels)
                    .to_scalar::<f64>()
                    .unwrap();
                var.set(&base).unwrap();
                l
            };
            let numeric = (bump(eps) - bump(-eps)) / (2.0 * eps);
            let diff = (a - numeric).abs();
            assert!(
                diff / a.abs().max(numeric.abs()) < 1e-3 || diff < 1e-9,
                "element {i}: analytic {a} numeric {numeric}"
            );
        }
    }
}
