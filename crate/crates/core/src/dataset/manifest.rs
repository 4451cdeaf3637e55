//! Song manifests with deterministic train/val/test splits.
//!
//! A corpus root holds one directory per song with `vocal.wav`, an optional
//! `backing.wav` and an optional ground-truth pitch dump `f0.rvxf`, plus a
//! `labels.csv` with the header `song,singer,test`. A `test` value of `1`
//! pins the song to the test split; all other songs are divided between
//! train and val.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::DatasetError;

pub const LABELS_FILE: &str = "labels.csv";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
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

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub song_id: String,
    pub vocal_path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub backing_path: Option<PathBuf>,
    /// Ground-truth pitch on the frame grid, when the corpus provides it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f0_path: Option<PathBuf>,
    pub singer_id: String,
    pub split: Split,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetManifest {
    entries: Vec<ManifestEntry>,
    singer_index: BTreeMap<String, usize>,
}

impl DatasetManifest {
    /// Sorts entries by song id and indexes singers in sorted id order.
    pub fn new(mut entries: Vec<ManifestEntry>) -> Result<Self, DatasetError> {
        entries.sort_by(|a, b| a.song_id.cmp(&b.song_id));
        let mut problems = Vec::new();
        for w in entries.windows(2) {
            if w[0].song_id == w[1].song_id {
                problems.push(format!("song '{}' listed more than once", w[0].song_id));
            }
        }
        for e in &entries {
            if e.singer_id.trim().is_empty() {
                problems.push(format!("song '{}' has no singer label", e.song_id));
            }
        }
        if !problems.is_empty() {
            return Err(DatasetError::Rejected(problems));
        }
        let mut singers: Vec<&str> = entries.iter().map(|e| e.singer_id.as_str()).collect();
        singers.sort_unstable();
        singers.dedup();
        let singer_index = singers.into_iter().enumerate().map(|(i, s)| (s.to_string(), i)).collect();
        Ok(Self { entries, singer_index })
    }

    pub fn entries(&self) -> &[ManifestEntry] {
        &self.entries
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    pub fn count(&self, split: Split) -> usize {
        self.split(split).count()
    }

    pub fn singer_index(&self) -> &BTreeMap<String, usize> {
        &self.singer_index
    }

    pub fn n_singers(&self) -> usize {
        self.singer_index.len()
    }

    pub fn singer_of(&self, entry: &ManifestEntry) -> usize {
        self.singer_index[&entry.singer_id]
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&serde_json::to_string(e).expect("manifest entries serialize"));
            out.push('\n');
        }
        out
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<(), DatasetError> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(self.to_jsonl().as_bytes())?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self, DatasetError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let entry = serde_json::from_str(line).map_err(|e| DatasetError::BadManifestLine {
                path: path.to_path_buf(),
                line: i + 1,
                reason: e.to_string(),
            })?;
            entries.push(entry);
        }
        Self::new(entries)
    }
}

struct Label {
    song: String,
    singer: String,
    test: bool,
}

fn read_labels(root: &Path) -> Result<Vec<Label>, DatasetError> {
    let path = root.join(LABELS_FILE);
    let text = std::fs::read_to_string(&path)
        .map_err(|e| DatasetError::Rejected(vec![format!("cannot read {}: {e}", path.display())]))?;
    let mut labels = Vec::new();
    let mut problems = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').map(str::trim).collect();
        if cols.len() < 2 || cols[0].is_empty() {
            problems.push(format!("{}:{}: expected 'song,singer[,test]'", LABELS_FILE, i + 1));
            continue;
        }
        labels.push(Label {
            song: cols[0].to_string(),
            singer: cols[1].to_string(),
            test: cols.get(2).is_some_and(|v| *v == "1"),
        });
    }
    if problems.is_empty() {
        Ok(labels)
    } else {
        Err(DatasetError::Rejected(problems))
    }
}

/// Scans `corpus_root` and assigns splits. Songs marked as test stay in
/// test; of the rest, `round(val_fraction * n)` go to val, chosen by a
/// seeded shuffle.
pub fn build_manifest(corpus_root: impl AsRef<Path>, val_fraction: f64, seed: u64) -> Result<DatasetManifest, DatasetError> {
    if !(0.0..=1.0).contains(&val_fraction) {
        return Err(DatasetError::BadFraction(val_fraction));
    }
    let root = corpus_root.as_ref();
    let labels = read_labels(root)?;
    let mut by_song: BTreeMap<&str, &Label> = BTreeMap::new();
    let mut problems = Vec::new();
    for l in &labels {
        if by_song.insert(&l.song, l).is_some() {
            problems.push(format!("song '{}' labelled more than once", l.song));
        }
    }

    let mut dirs: Vec<String> = std::fs::read_dir(root)?
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_dir() && !e.file_name().to_string_lossy().starts_with('.'))
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .collect();
    dirs.sort();
    for d in &dirs {
        match by_song.get(d.as_str()) {
            None => problems.push(format!("song '{d}' has no singer label")),
            Some(l) if l.singer.is_empty() => problems.push(format!("song '{d}' has an empty singer label")),
            _ => {}
        }
    }

    let mut entries = Vec::new();
    for (song, label) in &by_song {
        let dir = root.join(song);
        let vocal = dir.join("vocal.wav");
        if !vocal.is_file() {
            problems.push(format!("song '{song}': missing {}", vocal.display()));
            continue;
        }
        let backing = dir.join("backing.wav");
        let f0 = dir.join("f0.rvxf");
        entries.push(ManifestEntry {
            song_id: song.to_string(),
            vocal_path: vocal,
            backing_path: backing.is_file().then_some(backing),
            f0_path: f0.is_file().then_some(f0),
            singer_id: label.singer.clone(),
            split: if label.test { Split::Test } else { Split::Train },
        });
    }
    if !problems.is_empty() {
        return Err(DatasetError::Rejected(problems));
    }

    let mut pool: Vec<usize> = (0..entries.len()).filter(|&i| entries[i].split != Split::Test).collect();
    let n_val = (val_fraction * pool.len() as f64).round() as usize;
    pool.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    for &i in &pool[..n_val] {
        entries[i].split = Split::Val;
    }
    DatasetManifest::new(entries)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corpus(n: usize, test_every: usize) -> tempfile::TempDir {
        let dir = tempfile::tempdir().unwrap();
        let mut labels = String::from("song,singer,test\n");
        for i in 0..n {
            let song = format!("song{i:02}");
            std::fs::create_dir(dir.path().join(&song)).unwrap();
            std::fs::write(dir.path().join(&song).join("vocal.wav"), b"").unwrap();
            let test = test_every > 0 && i % test_every == 0;
            labels.push_str(&format!("{song},singer{},{}\n", i % 3, test as u8));
        }
        std::fs::write(dir.path().join(LABELS_FILE), labels).unwrap();
        dir
    }

    #[test]
    fn twenty_songs_ten_percent() {
        let dir = corpus(20, 0);
        let m = build_manifest(dir.path(), 0.1, 7).unwrap();
        assert_eq!(m.count(Split::Train), 18);
        assert_eq!(m.count(Split::Val), 2);
        assert_eq!(m.n_singers(), 3);
    }

    #[test]
    fn zero_fraction_keeps_everything_in_train() {
        let dir = corpus(10, 0);
        let m = build_manifest(dir.path(), 0.0, 1).unwrap();
        assert_eq!(m.count(Split::Train), 10);
    }

    #[test]
    fn deterministic_and_round_trips() {
        let dir = corpus(15, 4);
        let a = build_manifest(dir.path(), 0.25, 3).unwrap();
        let b = build_manifest(dir.path(), 0.25, 3).unwrap();
        assert_eq!(a.to_jsonl(), b.to_jsonl());
        assert_eq!(a.count(Split::Test), 4);
        let p = dir.path().join("m.jsonl");
        a.write(&p).unwrap();
        assert_eq!(DatasetManifest::read(&p).unwrap(), a);
    }

    #[test]
    fn missing_vocal_and_unlabelled_song_are_listed() {
        let dir = corpus(4, 0);
        std::fs::remove_file(dir.path().join("song01/vocal.wav")).unwrap();
        std::fs::create_dir(dir.path().join("stray")).unwrap();
        match build_manifest(dir.path(), 0.0, 0) {
            Err(DatasetError::Rejected(p)) => {
                assert_eq!(p.len(), 2, "{p:?}");
                assert!(p.iter().any(|s| s.contains("song01")));
                assert!(p.iter().any(|s| s.contains("stray")));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn singer_index_is_a_bijection() {
        let dir = corpus(9, 0);
        let m = build_manifest(dir.path(), 0.3, 0).unwrap();
        let mut idx: Vec<usize> = m.singer_index().values().copied().collect();
        idx.sort();
        assert_eq!(idx, (0..m.n_singers()).collect::<Vec<_>>());
    }
}
