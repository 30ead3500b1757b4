mod common;

use common::multihead;
use herston::nn::{load_checkpoint, save_checkpoint, ModelState, NetworkSpec};
use herston::tensor::Tensor;

#[test]
fn mixture_stays_inside_head_range() {
    assert_eq!(multihead::worst_convexity_violation(200, 1), 0.0);
}

#[test]
fn softmax_columns_sum_to_one() {
    assert!(multihead::worst_softmax_column_error(500, 2) <= 1e-6);
}

#[test]
fn saturated_logits_select_one_head() {
    assert!(multihead::worst_saturation_error(3) <= 1e-6);
}

#[test]
fn single_head_model_is_its_head() {
    let model = ModelState::build(NetworkSpec::desk(8, 2, 3, 1), 4).unwrap();
    let batch = Tensor::new(vec![2, 1, 8, 8, 8], (0..1024).map(|i| (i % 7) as f32 * 0.1).collect()).unwrap();
    let out = model.forward(&batch).unwrap();
    assert_eq!(out.per_head.shape(), &[1, 2, 3]);
    assert_eq!(out.per_head.data(), out.combined.data());
}

#[test]
fn checkpoint_round_trip_preserves_predictions() {
    let dir = tempfile::tempdir().unwrap();
    let model = ModelState::build(NetworkSpec::desk(8, 2, 4, 4), 6).unwrap();
    let path = dir.path().join("m.ckpt");
    let mut meta = toml::Table::new();
    meta.insert("note".into(), toml::Value::String("x".into()));
    save_checkpoint(&path, &model, Some(&meta)).unwrap();
    let (back, meta_back) = load_checkpoint(&path).unwrap();
    assert_eq!(back, model);
    assert_eq!(meta_back, Some(meta));
    let batch = Tensor::new(vec![1, 1, 8, 8, 8], (0..512).map(|i| (i as f32).sin()).collect()).unwrap();
    assert_eq!(model.forward(&batch).unwrap().combined, back.forward(&batch).unwrap().combined);
}

#[test]
fn truncated_checkpoint_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let model = ModelState::build(NetworkSpec::desk(8, 2, 4, 4), 6).unwrap();
    let path = dir.path().join("m.ckpt");
    save_checkpoint(&path, &model, None).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    std::fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
    assert!(load_checkpoint(&path).is_err());
}
