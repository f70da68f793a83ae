//! JSON-lines dataset manifests and group-aware splitting.
//!
//! Each manifest line is an object with keys `image`, `mask1`, `mask2` and
//! `group`, plus optional `base` (hidden ground truth of synthetic data) and
//! `split`. Relative paths resolve against the manifest's directory. A
//! separate split file maps `group -> "train" | "val" | "test"`.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::mask::Mask;
use super::raster::{AnnotationPair, Image, ImageSample};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub image: PathBuf,
    pub mask1: PathBuf,
    pub mask2: PathBuf,
    pub group: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<Split>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct DatasetManifest {
    /// Directory that relative entry paths resolve against.
    pub root: PathBuf,
    pub entries: Vec<ManifestEntry>,
    pub split: Option<BTreeMap<String, Split>>,
}

fn manifest_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Manifest {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

/// Loads a manifest, validating entries, file existence and embedded splits.
pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    load_manifest_with_split(path, None)
}

/// Like [`load_manifest`], additionally applying a group→split JSON object.
pub fn load_manifest_with_split(path: &Path, split_file: Option<&Path>) -> Result<DatasetManifest> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut entries = Vec::new();
    let mut seen_paths: HashMap<PathBuf, usize> = HashMap::new();
    let mut split: BTreeMap<String, (Split, String)> = BTreeMap::new();

    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let entry: ManifestEntry =
            serde_json::from_str(raw).map_err(|e| manifest_err(path, line, format!("malformed entry: {e}")))?;
        if entry.group.is_empty() {
            return Err(manifest_err(path, line, "empty group id"));
        }
        let mut files = vec![&entry.image, &entry.mask1, &entry.mask2];
        files.extend(entry.base.as_ref());
        for f in files {
            let full = root.join(f);
            if let Some(prev) = seen_paths.insert(full.clone(), line) {
                return Err(manifest_err(
                    path,
                    line,
                    format!("duplicate path {} (first used on line {prev})", f.display()),
                ));
            }
            if !full.is_file() {
                return Err(manifest_err(path, line, format!("missing file {}", full.display())));
            }
        }
        if let Some(s) = entry.split {
            record_split(&mut split, &entry.group, s, path, line)?;
        }
        entries.push(entry);
    }

    if let Some(sf) = split_file {
        let stext = fs::read_to_string(sf).map_err(|e| Error::io(sf, e))?;
        let pairs: SplitPairs = serde_json::from_str(&stext).map_err(|e| Error::Json {
            context: format!("split file {}", sf.display()),
            source: e,
        })?;
        for (group, s) in pairs.0 {
            let line = line_of_key(&stext, &group);
            record_split(&mut split, &group, s, sf, line)?;
        }
    }

    let split = (!split.is_empty()).then(|| split.into_iter().map(|(g, (s, _))| (g, s)).collect());
    Ok(DatasetManifest { root, entries, split })
}

fn record_split(
    split: &mut BTreeMap<String, (Split, String)>,
    group: &str,
    s: Split,
    path: &Path,
    line: usize,
) -> Result<()> {
    let here = format!("{}:{line}", path.display());
    match split.get(group) {
        Some((prev, at)) if *prev != s => Err(manifest_err(
            path,
            line,
            format!("group {group} assigned to {s} but already in {prev} ({at})"),
        )),
        Some(_) => Ok(()),
        None => {
            split.insert(group.to_string(), (s, here));
            Ok(())
        }
    }
}

/// 1-based line of the last occurrence of `"key"` in `text` (0 if absent).
fn line_of_key(text: &str, key: &str) -> usize {
    let needle = format!("\"{key}\"");
    text.lines()
        .enumerate()
        .filter(|(_, l)| l.contains(&needle))
        .map(|(i, _)| i + 1)
        .last()
        .unwrap_or(0)
}

/// JSON object decoded as ordered pairs so duplicate keys stay visible.
struct SplitPairs(Vec<(String, Split)>);

impl<'de> Deserialize<'de> for SplitPairs {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        struct V;
        impl<'de> serde::de::Visitor<'de> for V {
            type Value = SplitPairs;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("an object mapping group ids to train/val/test")
            }
            fn visit_map<A: serde::de::MapAccess<'de>>(self, mut map: A) -> std::result::Result<SplitPairs, A::Error> {
                let mut out = Vec::new();
                while let Some((k, v)) = map.next_entry::<String, Split>()? {
                    out.push((k, v));
                }
                Ok(SplitPairs(out))
            }
        }
        d.deserialize_map(V)
    }
}

impl DatasetManifest {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Distinct group ids in sorted order.
    pub fn groups(&self) -> Vec<String> {
        self.entries
            .iter()
            .map(|e| e.group.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    pub fn split_of(&self, group: &str) -> Option<Split> {
        self.split.as_ref().and_then(|m| m.get(group).copied())
    }

    /// Entries assigned to `split`, in file order.
    pub fn entries_in(&self, split: Split) -> Vec<&ManifestEntry> {
        self.entries
            .iter()
            .filter(|e| self.split_of(&e.group) == Some(split))
            .collect()
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        self.root.join(p)
    }

    pub fn load_pair(&self, entry: &ManifestEntry) -> Result<AnnotationPair> {
        let image = Image::load_png(&self.resolve(&entry.image))?;
        let m1 = Mask::load_png(&self.resolve(&entry.mask1))?;
        let m2 = Mask::load_png(&self.resolve(&entry.mask2))?;
        AnnotationPair::new(ImageSample::new(image, entry.group.clone(), (0, 0))?, m1, m2)
    }

    /// Loads every pair of a split, or all entries when `split` is `None`.
    pub fn load_pairs(&self, split: Option<Split>) -> Result<Vec<AnnotationPair>> {
        match split {
            Some(s) => self.entries_in(s).into_iter().map(|e| self.load_pair(e)).collect(),
            None => self.entries.iter().map(|e| self.load_pair(e)).collect(),
        }
    }

    /// Writes `manifest.jsonl` lines as stored, including embedded splits.
    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        for e in &self.entries {
            let line = serde_json::to_string(e).expect("manifest entries serialize");
            writeln!(f, "{line}").map_err(|err| Error::io(path, err))?;
        }
        Ok(())
    }

    pub fn write_split(&self, path: &Path) -> Result<()> {
        let map = self.split.clone().unwrap_or_default();
        let text = serde_json::to_string_pretty(&map).expect("split map serializes");
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}

/// Assigns whole groups to train/val/test.
///
/// Groups are sorted, shuffled with `seed`, and cut into consecutive runs whose
/// sizes follow `fractions` by largest remainder, with at least one group for
/// every nonzero fraction.
pub fn group_split(manifest: &DatasetManifest, fractions: (f64, f64, f64), seed: u64) -> Result<DatasetManifest> {
    let fr = [fractions.0, fractions.1, fractions.2];
    if fr.iter().any(|f| !(0.0..=1.0).contains(f)) || (fr.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "split fractions {fr:?} must be in [0,1] and sum to 1"
        )));
    }
    let mut groups = manifest.groups();
    let nonzero = fr.iter().filter(|&&f| f > 0.0).count();
    if groups.len() < nonzero {
        return Err(Error::Data(format!(
            "{} group(s) cannot cover {nonzero} nonzero split fractions",
            groups.len()
        )));
    }
    let counts = allocate_counts(groups.len(), &fr);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    groups.shuffle(&mut rng);

    let kinds = [Split::Train, Split::Val, Split::Test];
    let mut assignment = BTreeMap::new();
    let mut it = groups.into_iter();
    for (kind, n) in kinds.iter().zip(counts) {
        for g in it.by_ref().take(n) {
            assignment.insert(g, *kind);
        }
    }
    let mut out = manifest.clone();
    for e in &mut out.entries {
        e.split = None;
    }
    out.split = Some(assignment);
    Ok(out)
}

fn allocate_counts(total: usize, fr: &[f64; 3]) -> [usize; 3] {
    let exact: Vec<f64> = fr.iter().map(|f| f * total as f64).collect();
    let mut counts: [usize; 3] = [0; 3];
    for i in 0..3 {
        counts[i] = exact[i].floor() as usize;
        if fr[i] > 0.0 && counts[i] == 0 {
            counts[i] = 1;
        }
    }
    // hand out (or take back) the difference by largest remainder
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
    });
    while counts.iter().sum::<usize>() < total {
        let i = *order.iter().find(|&&i| fr[i] > 0.0).expect("some nonzero fraction");
        counts[i] += 1;
        order.rotate_left(1);
    }
    while counts.iter().sum::<usize>() > total {
        let i = (0..3)
            .filter(|&i| counts[i] > 1 || (counts[i] == 1 && fr[i] == 0.0))
            .max_by(|&a, &b| (counts[a] as f64 - exact[a]).partial_cmp(&(counts[b] as f64 - exact[b])).unwrap())
            .expect("reducible count");
        counts[i] -= 1;
    }
    counts
}
