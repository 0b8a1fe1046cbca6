mod common;

use std::fs;

use billiard_spectrum::persistence::{
    load_spectrum, save_spectrum, sha256_hex, PersistenceError, RunManifest, MANIFEST_FILE, ORBITS_FILE, SPECTRUM_FILE,
};
use billiard_spectrum::spectrum::{build_spectrum, LengthSpectrum};

fn saved() -> (tempfile::TempDir, LengthSpectrum) {
    let spec = build_spectrum(&common::s3(), 22.0).unwrap();
    let dir = tempfile::tempdir().unwrap();
    save_spectrum(&spec, dir.path(), 0.5).unwrap();
    (dir, spec)
}

#[test]
fn round_trip_is_exact() {
    let (dir, spec) = saved();
    let back = load_spectrum(dir.path()).unwrap();
    assert_eq!(back, spec);
    let manifest = RunManifest::from_toml(&fs::read_to_string(dir.path().join(MANIFEST_FILE)).unwrap()).unwrap();
    assert_eq!(manifest.command, "spectrum");
    assert_eq!(manifest.primitive_count, Some(spec.primitive_count_total()));
    let text = fs::read(dir.path().join(SPECTRUM_FILE)).unwrap();
    assert_eq!(manifest.files[SPECTRUM_FILE], sha256_hex(&text));
}

#[test]
fn saving_twice_gives_identical_files() {
    let (a, _) = saved();
    let (b, _) = saved();
    for name in [SPECTRUM_FILE, ORBITS_FILE] {
        assert_eq!(
            fs::read(a.path().join(name)).unwrap(),
            fs::read(b.path().join(name)).unwrap()
        );
    }
}

#[test]
fn edited_file_fails_the_digest() {
    let (dir, spec) = saved();
    let path = dir.path().join(SPECTRUM_FILE);
    let text = fs::read_to_string(&path).unwrap();
    // Change a weight in the last digit: still parses, digest differs.
    let w = spec.entries[0].weight.to_string();
    let mut edited = w.clone();
    let last = edited.pop().unwrap();
    edited.push(if last == '1' { '2' } else { '1' });
    fs::write(&path, text.replacen(&w, &edited, 1)).unwrap();
    assert!(matches!(
        load_spectrum(dir.path()),
        Err(PersistenceError::HashMismatch { file, .. }) if file == SPECTRUM_FILE
    ));
}

#[test]
fn truncated_file_reports_the_line() {
    let (dir, _) = saved();
    let path = dir.path().join(SPECTRUM_FILE);
    let text = fs::read_to_string(&path).unwrap();
    let lines = text.lines().count();
    fs::write(&path, &text[..text.len() - 5]).unwrap();
    match load_spectrum(dir.path()) {
        Err(PersistenceError::Parse { file, line, .. }) => {
            assert_eq!(file, SPECTRUM_FILE);
            assert_eq!(line, lines as u64);
        }
        other => panic!("expected a parse error, got {other:?}"),
    }
}

#[test]
fn missing_directory_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(
        load_spectrum(&dir.path().join("absent")),
        Err(PersistenceError::Io { .. })
    ));
}
