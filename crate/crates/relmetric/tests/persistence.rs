//! Checkpoint round-trip guarantees: bit-exact state restoration, training
//! continuation equivalence, and load-time validation.

mod common;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use relmetric::checkpoint::{load_checkpoint, save_checkpoint};
use relmetric::model::ModelBundle;
use relmetric::train::{TrainConfig, TrainState};

fn small_config() -> TrainConfig {
    TrainConfig {
        epochs: 2,
        channels: 3,
        layers: 2,
        char_emb_size: 4,
        char_repr_size: 5,
        pos_emb_size: 4,
        dep_emb_size: 3,
        word_emb_size: 8,
        context_size: 8,
        seed: 5,
        ..Default::default()
    }
}

fn trained_state() -> (TrainState, Vec<relmetric::corpus::SentenceExample>) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let corpus = common::synthetic_corpus(&mut rng, 6);
    let mut init_rng = ChaCha8Rng::seed_from_u64(41);
    let bundle = ModelBundle::init(small_config(), &corpus, None, &mut init_rng).unwrap();
    let mut state = TrainState::new(bundle);
    state.run_epoch(&corpus).unwrap();
    (state, corpus)
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let (state, _) = trained_state();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    save_checkpoint(&path, &state).unwrap();
    let restored = load_checkpoint(&path).unwrap();
    assert_eq!(restored.bundle, state.bundle);
    assert_eq!(restored.optimizer, state.optimizer);
    assert_eq!(restored.rng, state.rng);
    assert_eq!(restored.epoch, state.epoch);
}

#[test]
fn training_continues_identically_after_round_trip() {
    let (mut state, corpus) = trained_state();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    save_checkpoint(&path, &state).unwrap();
    let mut restored = load_checkpoint(&path).unwrap();

    let direct = state.run_epoch(&corpus).unwrap();
    let resumed = restored.run_epoch(&corpus).unwrap();
    assert_eq!(direct, resumed);
    assert_eq!(state.bundle.params, restored.bundle.params);
}

#[test]
fn truncated_checkpoint_is_rejected() {
    let (state, _) = trained_state();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    save_checkpoint(&path, &state).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    let cut = dir.path().join("cut.ckpt");
    std::fs::write(&cut, &bytes[..bytes.len() - 9]).unwrap();
    let err = load_checkpoint(&cut).unwrap_err();
    assert!(err.to_string().contains("truncated"), "{}", err);
    // Garbage magic is also rejected.
    let junk = dir.path().join("junk.ckpt");
    std::fs::write(&junk, b"definitely not a checkpoint").unwrap();
    assert!(load_checkpoint(&junk).is_err());
}

#[test]
fn mismatched_channel_config_names_the_field() {
    let (state, _) = trained_state();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    save_checkpoint(&path, &state).unwrap();
    // Rewrite the channel count inside the JSON header without changing
    // its length: the derived shape table no longer matches the stored one.
    let mut bytes = std::fs::read(&path).unwrap();
    let needle = b"\"channels\":3";
    let pos = bytes
        .windows(needle.len())
        .position(|w| w == needle)
        .expect("channel count in header");
    bytes[pos + needle.len() - 1] = b'4';
    let bad = dir.path().join("bad.ckpt");
    std::fs::write(&bad, bytes).unwrap();
    let err = load_checkpoint(&bad).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("shape-table mismatch"), "{}", msg);
    assert!(msg.contains("metric") || msg.contains("conv"), "{}", msg);
}
