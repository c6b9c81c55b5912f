use std::collections::HashSet;

use qeaes_core::container::{decrypt_message, encrypt_message_at, CipherContainer};
use qeaes_core::entropy_source::{open_source, SourceDescriptor, SourceHandle};
use qeaes_core::health::{guard_stream, EventLog, HealthPolicy};
use qeaes_core::lifecycle::{EpochStatus, Keystore, RekeyPolicy};
use qeaes_core::qe_schedule::{derive_qep, KeySource, Mode};
use qeaes_core::Error;
use rand_chacha::ChaCha20Rng;
use rand_core::{RngCore, SeedableRng};

fn sim(seed: u64, bias: f64) -> SourceHandle {
    open_source(&SourceDescriptor::simulated(seed, bias)).unwrap()
}

fn key_source(seed: u64) -> KeySource {
    let guarded = guard_stream(sim(seed, 0.5), HealthPolicy::default(), Some(sim(seed + 1, 0.5)), EventLog::in_memory()).unwrap();
    KeySource::new(guarded).with_classical(sim(seed + 2, 0.5))
}

fn contains(hay: &[u8], needle: &[u8]) -> bool {
    hay.windows(needle.len()).any(|w| w == needle)
}

#[test]
fn erased_master_bytes_absent_from_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("store.qeks");
    let mut ks_src = key_source(100);
    let first = ks_src.derive(Mode::Qep, "host").unwrap();
    let master = *first.master.as_bytes();
    let whitening_head: Vec<u8> = first.whitening_block[..32].to_vec();
    let mut store = Keystore::create(&path, first, 1).unwrap();
    let policy = RekeyPolicy::new(1, 0).unwrap();
    let old = encrypt_message_at(b"secret", &mut store, &policy, &mut ks_src, 1).unwrap();
    encrypt_message_at(b"rolls", &mut store, &policy, &mut ks_src, 2).unwrap();
    assert!(store.active_id().unwrap() >= 2);

    assert!(contains(&std::fs::read(&path).unwrap(), &master));
    store
        .secure_erase(1, |buf| ks_src.conditioned_bytes(buf))
        .unwrap();
    let raw = std::fs::read(&path).unwrap();
    assert!(!contains(&raw, &master));
    assert!(!contains(&raw, &whitening_head));
    assert!(matches!(decrypt_message(&old.to_bytes(), &store), Err(Error::KeyErased(1))));
    drop(store);

    let reopened = Keystore::open(&path).unwrap();
    assert_eq!(reopened.epochs()[0].status, EpochStatus::Erased);
    assert!(matches!(reopened.lookup_epoch(1), Err(Error::KeyErased(1))));
}

#[test]
fn epoch_ids_strictly_increase() {
    let mut src = key_source(200);
    let mut store = Keystore::in_memory(src.derive(Mode::Qeh, "h").unwrap(), 0);
    let mut last = store.active_id().unwrap();
    for t in 1..20 {
        let id = store.rekey(t, |m, c| src.derive(m, c)).unwrap();
        assert!(id > last);
        last = id;
    }
    let ids: Vec<u64> = store.epochs().iter().map(|e| e.epoch_id).collect();
    assert!(ids.windows(2).all(|w| w[0] < w[1]));
    assert_eq!(store.epochs().iter().filter(|e| e.status == EpochStatus::Active).count(), 1);
}

#[test]
fn nonces_never_repeat_within_an_epoch() {
    let mut src = key_source(300);
    let mut store = Keystore::in_memory(src.derive(Mode::Qep, "n").unwrap(), 0);
    let policy = RekeyPolicy::new(0, u64::MAX).unwrap();
    let mut nonces = HashSet::new();
    for _ in 0..100_000 {
        let c = encrypt_message_at(b"", &mut store, &policy, &mut src, 0).unwrap();
        assert_eq!(c.epoch_id, 1);
        assert!(nonces.insert(c.nonce));
    }
}

#[test]
fn roundtrip_across_rollovers_both_modes() {
    let mut rng = ChaCha20Rng::seed_from_u64(400);
    for mode in [Mode::Qep, Mode::Qeh] {
        let mut src = key_source(400 + mode as u64 * 10);
        let mut store = Keystore::in_memory(src.derive(mode, "rt").unwrap(), 0);
        let policy = RekeyPolicy::new(64, 0).unwrap();
        let mut sealed = Vec::new();
        for _ in 0..60 {
            let len = (rng.next_u32() % 5000) as usize;
            let mut m = vec![0u8; len];
            rng.fill_bytes(&mut m);
            let c = encrypt_message_at(&m, &mut store, &policy, &mut src, 0).unwrap();
            assert_eq!(c.mode, mode as u8);
            sealed.push((m, c.to_bytes()));
        }
        assert!(store.epochs().len() > 3);
        for (m, c) in &sealed {
            assert_eq!(&decrypt_message(c, &store).unwrap(), m);
        }
    }
}

#[test]
fn failed_rekey_keeps_encrypting_under_old_epoch() {
    let mut good = key_source(500);
    let mut store = Keystore::in_memory(good.derive(Mode::Qep, "f").unwrap(), 0);
    let dead = guard_stream(sim(1, 1.0), HealthPolicy::default(), None, EventLog::in_memory()).unwrap();
    let mut broken = KeySource::new(dead);
    let policy = RekeyPolicy::new(1, 0).unwrap();
    encrypt_message_at(b"first", &mut store, &policy, &mut good, 0).unwrap();
    let err = encrypt_message_at(b"second", &mut store, &policy, &mut broken, 0).unwrap_err();
    assert!(matches!(err, Error::DerivationFailure(_)));
    assert_eq!(store.active_id().unwrap(), 1);
    // with a healthy source the pending rollover happens on the next message
    let c = encrypt_message_at(b"third", &mut store, &policy, &mut good, 0).unwrap();
    assert_eq!(c.epoch_id, 2);
}

#[test]
fn container_references_unknown_epoch() {
    let mut src = key_source(600);
    let mut store = Keystore::in_memory(derive_qep(src.quantum.as_mut(), "u").unwrap(), 0);
    let policy = RekeyPolicy::new(0, 10).unwrap();
    let mut c = encrypt_message_at(b"x", &mut store, &policy, &mut src, 0).unwrap();
    c.epoch_id = 99;
    assert!(matches!(decrypt_message(&c.to_bytes(), &store), Err(Error::NotFound(99))));
    let parsed = CipherContainer::parse(&c.to_bytes()).unwrap();
    assert_eq!(parsed.epoch_id, 99);
}
