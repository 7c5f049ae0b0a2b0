//! GAN training contracts: frozen semantic discriminator, resume, determinism.

mod common;

use ipgan::training::{pretrain_semantic_discriminator, train_ipgan, Checkpoint, GanRunOptions};

fn metrics_of(c: &Checkpoint) -> Vec<(usize, usize, Vec<(String, u64)>)> {
    c.history
        .iter()
        .map(|m| (m.epoch, m.step, m.values.iter().map(|(k, v)| (k.clone(), v.to_bits())).collect()))
        .collect()
}

#[test]
fn resume_matches_an_uninterrupted_run() {
    let [source, target, ..] = common::tiny_corpus(11);
    let semantic = pretrain_semantic_discriminator(&source, &common::tiny_reid_arch(), &common::tiny_classifier_train(2)).unwrap();
    let setup = common::tiny_gan_setup(4, true);
    let before = semantic.to_bytes().unwrap();

    let straight = train_ipgan(&source, &target, &semantic, &setup, GanRunOptions::default()).unwrap();
    assert!(straight.is_complete());
    assert_eq!(semantic.to_bytes().unwrap(), before, "semantic discriminator changed");

    let dir = tempfile::tempdir().unwrap();
    let partial = train_ipgan(
        &source,
        &target,
        &semantic,
        &setup,
        GanRunOptions { checkpoint_dir: Some(dir.path().into()), stop_after: Some(2), ..Default::default() },
    )
    .unwrap();
    assert_eq!(partial.epoch, 2);
    assert!(!partial.is_complete());
    let reloaded = Checkpoint::load(&dir.path().join("checkpoint.safetensors")).unwrap();
    assert_eq!(reloaded.epoch, 2);
    let resumed = train_ipgan(
        &source,
        &target,
        &semantic,
        &setup,
        GanRunOptions { resume: Some(reloaded), ..Default::default() },
    )
    .unwrap();
    assert_eq!(metrics_of(&resumed), metrics_of(&straight));
    assert!(resumed.generator.same_values(&straight.generator).unwrap());
    assert!(resumed.discriminator.same_values(&straight.discriminator).unwrap());
}

#[test]
fn runs_are_reproducible_and_semantic_term_is_optional() {
    let [source, target, ..] = common::tiny_corpus(2);
    let semantic = pretrain_semantic_discriminator(&source, &common::tiny_reid_arch(), &common::tiny_classifier_train(2)).unwrap();
    let with = common::tiny_gan_setup(2, true);
    let a = train_ipgan(&source, &target, &semantic, &with, GanRunOptions::default()).unwrap();
    let b = train_ipgan(&source, &target, &semantic, &with, GanRunOptions::default()).unwrap();
    assert_eq!(metrics_of(&a), metrics_of(&b));
    assert!(a.history.iter().any(|m| m.values.contains_key("g_sem")));

    let without = common::tiny_gan_setup(2, false);
    let c = train_ipgan(&source, &target, &semantic, &without, GanRunOptions::default()).unwrap();
    assert!(c.history.iter().all(|m| !m.values.contains_key("g_sem")));
    assert_eq!(c.generator.metadata["with_semantic"], serde_json::json!(false));
}

#[test]
fn resume_with_a_different_setup_is_rejected() {
    let [source, target, ..] = common::tiny_corpus(4);
    let semantic = pretrain_semantic_discriminator(&source, &common::tiny_reid_arch(), &common::tiny_classifier_train(2)).unwrap();
    let setup = common::tiny_gan_setup(2, true);
    let partial =
        train_ipgan(&source, &target, &semantic, &setup, GanRunOptions { stop_after: Some(1), ..Default::default() }).unwrap();
    let other = common::tiny_gan_setup(4, true);
    let err = train_ipgan(&source, &target, &semantic, &other, GanRunOptions { resume: Some(partial), ..Default::default() });
    assert!(err.is_err());
}

#[test]
fn semantic_vocabulary_must_match_source() {
    let [source, target, ..] = common::tiny_corpus(5);
    // a classifier over the target identities is not a valid identity constraint
    let wrong = ipgan::training::train_camera_classifier(&target, &common::tiny_reid_arch(), &common::tiny_classifier_train(2)).unwrap();
    let err = train_ipgan(&source, &target, &wrong, &common::tiny_gan_setup(2, true), GanRunOptions::default()).unwrap_err();
    assert!(matches!(err, ipgan::Error::Vocabulary(_)), "{err}");
}
