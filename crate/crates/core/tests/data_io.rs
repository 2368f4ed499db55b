//! Dataset loaders and checkpoint round trips through the filesystem.

mod common;

use std::path::{Path, PathBuf};

use ptn_core::data::checkpoint::encode_checkpoint;
use ptn_core::data::mnist::{encode_idx_images, encode_idx_labels};
use ptn_core::{
    load_checkpoint, load_csv01, load_mnist_binarized, log_prob, read_checkpoint, save_checkpoint,
    CheckpointMeta, Delimiter, MpsModel, PositivityMode, PtnError, Rng,
};

fn repo_data(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../data")
        .join(rel)
}

#[test]
fn csv_two_by_two() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("a.csv");
    std::fs::write(&p, "0,1\n1,0\n").unwrap();
    let d = load_csv01(&p, Delimiter::Auto).unwrap();
    assert_eq!(d.len(), 2);
    assert_eq!(d.dims(), &[2, 2]);
    assert_eq!(d.rows(), &[vec![0, 1], vec![1, 0]]);
}

#[test]
fn ragged_csv_names_line_two() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("r.csv");
    std::fs::write(&p, "0,1,1\n1,0\n").unwrap();
    match load_csv01(&p, Delimiter::Auto).unwrap_err() {
        PtnError::Parse { line, .. } => assert_eq!(line, 2),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn idx_images_binarize() {
    let dir = tempfile::tempdir().unwrap();
    let images = vec![vec![0u8; 4], vec![0, 128, 255, 127]];
    let ip = dir.path().join("img");
    let lp = dir.path().join("lbl");
    std::fs::write(&ip, encode_idx_images(2, 2, &images)).unwrap();
    std::fs::write(&lp, encode_idx_labels(&[3, 4])).unwrap();
    let d = load_mnist_binarized(&ip, Some(&lp), 128).unwrap();
    assert_eq!(d.rows(), &[vec![0, 0, 0, 0], vec![0, 1, 1, 0]]);
    let none = load_mnist_binarized(&ip, None, 256).unwrap();
    assert!(none.rows().iter().flatten().all(|&v| v == 0));
    // Label count mismatch is a data error.
    std::fs::write(&lp, encode_idx_labels(&[3])).unwrap();
    assert!(load_mnist_binarized(&ip, Some(&lp), 128)
        .unwrap_err()
        .is_data());
}

#[test]
fn bundled_mnist_subset_parses() {
    let train = repo_data("mnist5k/train-images-idx3-ubyte");
    let labels = repo_data("mnist5k/train-labels-idx1-ubyte");
    let d = load_mnist_binarized(&train, Some(&labels), 128).unwrap();
    assert_eq!(d.len(), 4000);
    assert_eq!(d.num_vars(), 784);
    assert!(d.rows().iter().flatten().all(|&v| v <= 1));
    let t = load_mnist_binarized(repo_data("mnist5k/t10k-images-idx3-ubyte"), None, 128).unwrap();
    assert_eq!(t.len(), 1000);
}

/// The full MNIST training file is not bundled; point `PTN_MNIST_DIR` at a
/// directory holding `train-images-idx3-ubyte` to check it.
#[test]
fn full_mnist_training_file_has_60000_rows_when_available() {
    let Some(dir) = std::env::var_os("PTN_MNIST_DIR") else {
        return;
    };
    let d =
        load_mnist_binarized(Path::new(&dir).join("train-images-idx3-ubyte"), None, 128).unwrap();
    assert_eq!(d.len(), 60_000);
}

#[test]
fn checkpoint_round_trip_preserves_log_p_at_784_cores() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = Rng::new(17);
    let m = MpsModel::random(&[2; 784], 8, PositivityMode::SigmaExp, 0.35, &mut rng).unwrap();
    let rows = common::random_rows(&[2; 784], 5, 4);
    let before: Vec<f64> = rows.iter().map(|y| log_prob(&m, y).unwrap()).collect();
    let path = dir.path().join("model.ptn");
    let meta = CheckpointMeta {
        seed: Some(17),
        training: serde_json::json!({"epochs": 0}),
    };
    save_checkpoint(&m, &path, &meta).unwrap();
    let back = load_checkpoint(&path).unwrap();
    let after: Vec<f64> = rows.iter().map(|y| log_prob(&back, y).unwrap()).collect();
    assert!(before
        .iter()
        .zip(&after)
        .all(|(a, b)| a.to_bits() == b.to_bits()));
    assert_eq!(
        std::fs::read(&path).unwrap(),
        encode_checkpoint(&m, &meta).unwrap()
    );
}

#[test]
fn corrupted_checkpoint_files_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let m = common::random_model(PositivityMode::Born, 3, 2, 2, 1);
    let path = dir.path().join("m.ptn");
    save_checkpoint(&m, &path, &CheckpointMeta::default()).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    std::fs::write(&path, &bytes[..bytes.len() - 1]).unwrap();
    assert!(matches!(
        read_checkpoint(&path),
        Err(PtnError::Checkpoint(_))
    ));
    std::fs::write(&path, b"ptn-checkpoint v9\n{}\n").unwrap();
    assert!(read_checkpoint(&path)
        .unwrap_err()
        .to_string()
        .contains("version"));
    assert!(read_checkpoint(dir.path().join("missing.ptn"))
        .unwrap_err()
        .is_data());
}

/// nltcs is not redistributed here; `PTN_NLTCS_DIR` (or `data/nltcs/`) may
/// hold `nltcs.train.data`.
#[test]
fn nltcs_has_sixteen_binary_columns_when_available() {
    let dir = std::env::var_os("PTN_NLTCS_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| repo_data("nltcs"));
    let path = dir.join("nltcs.train.data");
    if !path.exists() {
        return;
    }
    let d = load_csv01(&path, Delimiter::Auto).unwrap();
    assert_eq!(d.num_vars(), 16);
    assert!(d.rows().iter().flatten().all(|&v| v <= 1));
}
