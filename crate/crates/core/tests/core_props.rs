use std::fs;
use std::path::Path;

use proptest::prelude::*;
use unaah::domain::{group_split, load_manifest, load_manifest_with_split, DatasetManifest, ManifestEntry, Mask, Split};
use unaah::Error;

fn write_mask(dir: &Path, name: &str) {
    Mask::from_fn(4, 4, |x, _| x < 2).save_png(&dir.join(name)).unwrap();
}

fn entry_line(i: usize, group: &str) -> String {
    format!(r#"{{"image":"img{i}.png","mask1":"a{i}.png","mask2":"b{i}.png","group":"{group}"}}"#)
}

fn dataset(dir: &Path, groups: &[&str]) -> std::path::PathBuf {
    let mut lines = Vec::new();
    for (i, g) in groups.iter().enumerate() {
        for prefix in ["img", "a", "b"] {
            write_mask(dir, &format!("{prefix}{i}.png"));
        }
        lines.push(entry_line(i, g));
    }
    let path = dir.join("manifest.jsonl");
    fs::write(&path, lines.join("\n") + "\n").unwrap();
    path
}

#[test]
fn empty_manifest_is_valid() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("manifest.jsonl");
    fs::write(&path, "").unwrap();
    assert_eq!(load_manifest(&path).unwrap().len(), 0);
}

#[test]
fn split_file_assigns_entries() {
    let dir = tempfile::tempdir().unwrap();
    let path = dataset(dir.path(), &["g1", "g1", "g2"]);
    let split = dir.path().join("split.json");
    fs::write(&split, r#"{"g1": "train", "g2": "test"}"#).unwrap();
    let m = load_manifest_with_split(&path, Some(&split)).unwrap();
    assert_eq!(m.entries_in(Split::Train).len(), 2);
    assert_eq!(m.entries_in(Split::Test).len(), 1);
    assert_eq!(m.load_pairs(Some(Split::Train)).unwrap().len(), 2);
}

#[test]
fn missing_mask_names_the_path_and_line() {
    let dir = tempfile::tempdir().unwrap();
    let path = dataset(dir.path(), &["g1", "g2"]);
    fs::remove_file(dir.path().join("b1.png")).unwrap();
    let err = load_manifest(&path).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("b1.png"), "{msg}");
    assert!(matches!(err, Error::Manifest { line: 2, .. }), "{err:?}");
    assert_eq!(err.exit_code(), 3);
}

#[test]
fn duplicate_paths_and_malformed_lines_are_reported_with_line_numbers() {
    let dir = tempfile::tempdir().unwrap();
    let path = dataset(dir.path(), &["g1"]);
    let mut text = fs::read_to_string(&path).unwrap();
    text.push_str(&entry_line(0, "g9"));
    fs::write(&path, &text).unwrap();
    assert!(matches!(load_manifest(&path), Err(Error::Manifest { line: 2, .. })));
    fs::write(&path, entry_line(0, "g1") + "\n{not json\n").unwrap();
    assert!(matches!(load_manifest(&path), Err(Error::Manifest { line: 2, .. })));
}

#[test]
fn conflicting_split_assignment_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dataset(dir.path(), &["g1", "g2"]);
    let split = dir.path().join("split.json");
    fs::write(&split, "{\n  \"g1\": \"train\",\n  \"g1\": \"test\"\n}\n").unwrap();
    let err = load_manifest_with_split(&path, Some(&split)).unwrap_err();
    assert!(matches!(err, Error::Manifest { line: 3, .. }), "{err:?}");
}

fn manifest_of(groups: &[String]) -> DatasetManifest {
    DatasetManifest {
        root: ".".into(),
        entries: groups
            .iter()
            .enumerate()
            .map(|(i, g)| ManifestEntry {
                image: format!("i{i}.png").into(),
                mask1: format!("a{i}.png").into(),
                mask2: format!("b{i}.png").into(),
                group: g.clone(),
                base: None,
                split: None,
            })
            .collect(),
        split: None,
    }
}

fn fractions() -> impl Strategy<Value = (f64, f64, f64)> {
    prop_oneof![
        Just((0.8, 0.0, 0.2)),
        Just((0.7, 0.15, 0.15)),
        Just((1.0, 0.0, 0.0)),
        Just((0.5, 0.25, 0.25)),
        Just((0.6, 0.2, 0.2)),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn no_group_straddles_splits(
        groups in prop::collection::vec(0u8..12, 3..40),
        fr in fractions(),
        seed in any::<u64>(),
    ) {
        let names: Vec<String> = groups.iter().map(|g| format!("p{g}")).collect();
        let m = manifest_of(&names);
        match group_split(&m, fr, seed) {
            Ok(s) => {
                let map = s.split.as_ref().unwrap();
                prop_assert_eq!(map.len(), m.groups().len());
                let total: usize = [Split::Train, Split::Val, Split::Test].iter().map(|&k| s.entries_in(k).len()).sum();
                prop_assert_eq!(total, m.len());
                for e in &s.entries {
                    prop_assert_eq!(s.split_of(&e.group), map.get(&e.group).copied());
                }
                prop_assert_eq!(group_split(&m, fr, seed).unwrap(), s);
            }
            Err(e) => {
                let nonzero = [fr.0, fr.1, fr.2].iter().filter(|f| **f > 0.0).count();
                prop_assert!(m.groups().len() < nonzero, "unexpected error {}", e);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn mask_png_roundtrip(w in 1usize..40, h in 1usize..40, bits in prop::collection::vec(0u8..=1, 1600)) {
        let m = Mask::new(w, h, bits[..w * h].to_vec()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.png");
        m.save_png(&p).unwrap();
        prop_assert_eq!(Mask::load_png(&p).unwrap(), m);
    }
}
