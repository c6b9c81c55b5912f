use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn qeaes(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qeaes"))
        .current_dir(dir)
        .env_remove("QEAES_KEYSTORE")
        .args(args)
        .output()
        .expect("spawn qeaes")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn keygen(dir: &Path, mode: &str) {
    let o = qeaes(dir, &["keygen", "--keystore", "k.qeks", "--mode", mode, "--source", "sim:7", "--classical", "sim:70", "--context", "host1"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
}

#[test]
fn keygen_encrypt_decrypt_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let data: Vec<u8> = (0..70_000u32).map(|i| (i * 31 % 251) as u8).collect();
    fs::write(d.join("pt.bin"), &data).unwrap();
    keygen(d, "p");

    let o = qeaes(d, &["encrypt", "--keystore", "k.qeks", "--in", "pt.bin", "--out", "ct.qea", "--source", "sim:8"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let o = qeaes(d, &["decrypt", "--keystore", "k.qeks", "--in", "ct.qea", "--out", "back.bin"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(fs::read(d.join("back.bin")).unwrap(), data);
}

#[test]
fn keystore_from_environment_and_mode_switch() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("pt.bin"), b"hybrid payload").unwrap();
    keygen(d, "p");
    let o = Command::new(env!("CARGO_BIN_EXE_qeaes"))
        .current_dir(d)
        .env("QEAES_KEYSTORE", "k.qeks")
        .args(["encrypt", "--in", "pt.bin", "--out", "ct.qea", "--mode", "h", "--source", "sim:9", "--classical", "sim:90"])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("epoch 2"));
    let o = qeaes(d, &["decrypt", "--keystore", "k.qeks", "--in", "ct.qea", "--out", "back.bin"]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(fs::read(d.join("back.bin")).unwrap(), b"hybrid payload");
}

#[test]
fn tampered_container_exits_2_with_tag_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("pt.bin"), vec![0x55; 4096]).unwrap();
    keygen(d, "h");
    let o = qeaes(d, &["encrypt", "--keystore", "k.qeks", "--in", "pt.bin", "--out", "ct.qea", "--source", "sim:8", "--classical", "sim:80"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let mut ct = fs::read(d.join("ct.qea")).unwrap();
    ct[200] ^= 0x04;
    fs::write(d.join("ct.qea"), ct).unwrap();
    let o = qeaes(d, &["decrypt", "--keystore", "k.qeks", "--in", "ct.qea", "--out", "back.bin"]);
    assert_eq!(o.status.code(), Some(2));
    let err: serde_json::Value = serde_json::from_str(stderr(&o).trim()).unwrap();
    assert_eq!(err["error"], "TagMismatch");
    assert!(!d.join("back.bin").exists());
}

#[test]
fn rekey_and_erase_then_decrypt_reports_key_erased() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("pt.bin"), b"old epoch").unwrap();
    keygen(d, "p");
    assert_eq!(qeaes(d, &["encrypt", "--keystore", "k.qeks", "--in", "pt.bin", "--out", "ct.qea", "--source", "sim:1"]).status.code(), Some(0));
    let o = qeaes(d, &["rekey", "--keystore", "k.qeks", "--source", "sim:2"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let o = qeaes(d, &["erase", "--keystore", "k.qeks", "--epoch", "2"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("EpochActive"));
    let o = qeaes(d, &["erase", "--keystore", "k.qeks", "--epoch", "1"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let o = qeaes(d, &["decrypt", "--keystore", "k.qeks", "--in", "ct.qea", "--out", "back.bin"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("KeyErased"));
}

#[test]
fn ent_on_zeros_reports_zero_entropy() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("zeros.bin"), vec![0u8; 65_536]).unwrap();
    let o = qeaes(d, &["entropy-test", "--input", "zeros.bin", "--suite", "ent"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("Entropy = 0.000000 bits per byte"));
    let o = qeaes(d, &["entropy-test", "--input", "zeros.bin", "--suite", "ent", "--report", "json"]);
    let r: serde_json::Value = serde_json::from_str(stdout(&o).trim()).unwrap();
    assert_eq!(r["entropy_bits_per_byte"], 0.0);
    assert!(r["serial_correlation"].is_null());
}

#[test]
fn nist_json_report_has_p_value_arrays() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let mut data = vec![0u8; 4 * 125_000];
    let mut x: u64 = 0x9e3779b97f4a7c15;
    for b in data.iter_mut() {
        x ^= x << 13;
        x ^= x >> 7;
        x ^= x << 17;
        *b = (x >> 32) as u8;
    }
    fs::write(d.join("r.bin"), data).unwrap();
    let o = qeaes(d, &["entropy-test", "--input", "r.bin", "--suite", "nist", "--samples", "4", "--report", "json"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let r: serde_json::Value = serde_json::from_str(stdout(&o).trim()).unwrap();
    assert_eq!(r["samples"], 4);
    for name in ["Frequency", "BlockFrequency", "Runs", "CumulativeSumsForward", "CumulativeSumsBackward"] {
        assert_eq!(r["tests"][name]["p_values"].as_array().unwrap().len(), 4, "{name}");
    }
}

#[test]
fn monitor_switches_to_backup_and_writes_log() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let o = qeaes(d, &["monitor", "--source", "sim:1:1.0", "--backup", "sim:2", "--batches", "3", "--log", "events.tsv", "--report", "json"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let r: serde_json::Value = serde_json::from_str(stdout(&o).trim()).unwrap();
    assert_eq!(r["reseeds"], 1);
    assert_eq!(r["on_backup"], true);
    let log = fs::read_to_string(d.join("events.tsv")).unwrap();
    assert!(log.lines().all(|l| l.split('\t').count() == 8));
    assert_eq!(log.lines().filter(|l| l.contains("\treseed\t")).count(), 1);

    let o = qeaes(d, &["monitor", "--source", "sim:1:1.0", "--batches", "2", "--policy", "action=halt"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("HealthFailure"));
}

#[test]
fn usage_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    for args in [
        &["encrypt", "--bogus"][..],
        &["keygen", "--keystore", "k.qeks", "--source", "sim:notanumber"],
        &["monitor", "--policy", "alpha=0.5"],
        &["frobnicate"],
    ] {
        let o = qeaes(d, args);
        assert_eq!(o.status.code(), Some(1), "{args:?}: {}", stderr(&o));
    }
    assert!(!d.join("k.qeks").exists());
    assert_eq!(qeaes(d, &["--help"]).status.code(), Some(0));
}

#[test]
fn bench_reports_both_throughputs() {
    let dir = tempfile::tempdir().unwrap();
    let o = qeaes(dir.path(), &["bench", "--mib", "4", "--source", "sim:3", "--report", "json"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let r: serde_json::Value = serde_json::from_str(stdout(&o).trim()).unwrap();
    for key in ["encrypt_mib_s", "decrypt_mib_s", "extractor_input_mbit_s"] {
        assert!(r[key].as_f64().unwrap() > 0.0, "{key}");
    }
    // same code path either way; the band only absorbs scheduler noise
    let ratio = r["whitening_ratio"].as_f64().unwrap();
    assert!((0.7..1.4).contains(&ratio), "ratio {ratio}");
}

#[test]
fn no_key_bytes_on_stdout() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    keygen(d, "p");
    let ks = fs::read(d.join("k.qeks")).unwrap();
    let o = qeaes(d, &["rekey", "--keystore", "k.qeks", "--source", "sim:5"]);
    let out = [o.stdout, o.stderr].concat();
    // first record's master key sits after magic, version and the fixed header fields
    let ctx_len = 5;
    let master = &ks[5 + 8 + 1 + 1 + 8 + 2 + ctx_len..][..32];
    let hex: String = master.iter().map(|b| format!("{b:02x}")).collect();
    assert!(!String::from_utf8_lossy(&out).contains(&hex));
    assert!(!out.windows(32).any(|w| w == master));
}
