use std::fs;

use loanscore::artifact::{self, ArtifactError, ArtifactKind, SavedModel, FORMAT_VERSION};
use loanscore_core::baselines::{train_cart, tree_input, CartConfig};
use loanscore_core::features::{fit_schema, FeatureSchema, SchemaConfig};
use loanscore_core::pipeline::pd_samples;
use loanscore_core::synth::{gen_synthetic, SynthConfig};
use loanscore_core::widedeep::{init_params, train, ModelParams, TrainConfig};

fn small_model() -> (FeatureSchema, ModelParams, Vec<loanscore_core::domain::LoanRecord>) {
    let loans = gen_synthetic(&SynthConfig { n_loans: 500, seed: 9, ..SynthConfig::default() }).unwrap();
    let schema = fit_schema(&loans, &SchemaConfig::default()).unwrap();
    let config = TrainConfig { steps: 20, hidden_layers: vec![8, 4], ..TrainConfig::classification() };
    let mut params = init_params(&schema, &config);
    train(&mut params, &pd_samples(&schema, &loans).unwrap(), &config).unwrap();
    (schema, params, loans)
}

#[test]
fn model_round_trip_is_exact() {
    let (schema, params, loans) = small_model();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.model");
    artifact::save_model(&path, &params, &schema).unwrap();
    let loaded = artifact::load_model(&path).unwrap();
    assert_eq!(loaded.schema, schema);
    assert_eq!(loaded.params, params);
    for loan in &loans {
        let x = schema.encode(loan);
        assert_eq!(params.predict(&x).unwrap().to_bits(), loaded.params.predict(&x).unwrap().to_bits());
    }
}

#[test]
fn header_carries_kind_version_and_checksum() {
    let (schema, params, _) = small_model();
    let text = artifact::encode(ArtifactKind::WideDeep, &SavedModel { schema, params }).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some(format!("loanscore wide-deep v{FORMAT_VERSION}").as_str()));
    let sum = lines.next().unwrap();
    assert!(sum.starts_with("sha256 ") && sum.len() == 7 + 64);
}

#[test]
fn truncated_file_fails_the_checksum() {
    let (schema, params, _) = small_model();
    let text = artifact::encode(ArtifactKind::WideDeep, &SavedModel { schema, params }).unwrap();
    let cut = &text[..text.len() - 10];
    assert!(matches!(
        artifact::decode::<SavedModel>(ArtifactKind::WideDeep, cut),
        Err(ArtifactError::ChecksumMismatch { .. })
    ));
}

#[test]
fn other_format_version_is_refused() {
    let (schema, params, _) = small_model();
    let text = artifact::encode(ArtifactKind::WideDeep, &SavedModel { schema, params }).unwrap();
    let bumped = text.replacen(&format!("v{FORMAT_VERSION}"), &format!("v{}", FORMAT_VERSION + 1), 1);
    match artifact::decode::<SavedModel>(ArtifactKind::WideDeep, &bumped) {
        Err(ArtifactError::VersionMismatch { found, expected }) => {
            assert_eq!((found, expected), (FORMAT_VERSION + 1, FORMAT_VERSION))
        }
        other => panic!("expected a version mismatch, got {other:?}"),
    }
}

#[test]
fn wrong_kind_and_garbage_are_refused() {
    let (schema, params, _) = small_model();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.model");
    artifact::save_model(&path, &params, &schema).unwrap();
    assert!(matches!(artifact::load_tree(&path), Err(ArtifactError::KindMismatch { .. })));
    fs::write(&path, "hello\nworld\n").unwrap();
    assert!(matches!(artifact::load_model(&path), Err(ArtifactError::Malformed(_))));
    assert!(matches!(artifact::load_model(&dir.path().join("absent")), Err(ArtifactError::Io { .. })));
}

#[test]
fn tree_round_trip_is_exact() {
    let (schema, _, loans) = small_model();
    let labeled: Vec<_> = loans.iter().filter(|l| l.irr.is_some()).collect();
    let xs: Vec<_> = labeled.iter().map(|l| tree_input(&schema, l)).collect();
    let ys: Vec<f64> = labeled.iter().map(|l| l.irr.unwrap()).collect();
    let tree = train_cart(&xs, &ys, &CartConfig::default()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.model");
    artifact::save_tree(&path, &tree, &schema).unwrap();
    let loaded = artifact::load_tree(&path).unwrap();
    assert_eq!(loaded.tree, tree);
    for x in &xs {
        assert_eq!(tree.predict(x).to_bits(), loaded.tree.predict(x).to_bits());
    }
}
