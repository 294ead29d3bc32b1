//! Dataset layout on disk and the line-oriented manifest describing it.
//!
//! Tree: `<root>/{t1,t2,mask}/<index>.{ppm,pgm}` plus `<root>/manifest.txt`
//! with one line per pair: `split=<s> index=<i> t1=<p> t2=<p> mask=<p>`.
//! Index ranges are disjoint across splits; paths are relative to the root.

use super::{generate_pair, pnm, SamplePair, SceneSpec};
use crate::error::{Error, Result};
use std::fmt;
use std::path::{Path, PathBuf};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn parse(s: &str) -> Result<Split> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::value("split", format!("unknown split {other}"))),
        }
    }
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

#[derive(Clone, Copy, Debug)]
pub struct SplitCounts {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl SplitCounts {
    pub fn validate(&self) -> Result<()> {
        if self.train == 0 || self.val == 0 || self.test == 0 {
            return Err(Error::value("split_counts", "every split needs at least one pair"));
        }
        Ok(())
    }

    pub fn total(&self) -> usize {
        self.train + self.val + self.test
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub split: Split,
    pub index: u64,
    pub t1: String,
    pub t2: String,
    pub mask: String,
}

#[derive(Clone, Debug, Default)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
}

pub const MANIFEST_FILE: &str = "manifest.txt";

impl DatasetManifest {
    /// Assign disjoint index ranges: train, then val, then test.
    pub fn plan(counts: &SplitCounts) -> Result<DatasetManifest> {
        counts.validate()?;
        let mut entries = Vec::with_capacity(counts.total());
        let mut index = 0u64;
        for (split, n) in [
            (Split::Train, counts.train),
            (Split::Val, counts.val),
            (Split::Test, counts.test),
        ] {
            for _ in 0..n {
                entries.push(ManifestEntry {
                    split,
                    index,
                    t1: format!("t1/{index}.ppm"),
                    t2: format!("t2/{index}.ppm"),
                    mask: format!("mask/{index}.pgm"),
                });
                index += 1;
            }
        }
        Ok(DatasetManifest { entries })
    }

    pub fn to_string_lines(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&format!(
                "split={} index={} t1={} t2={} mask={}\n",
                e.split, e.index, e.t1, e.t2, e.mask
            ));
        }
        out
    }

    pub fn write(&self, root: &Path) -> Result<PathBuf> {
        let path = root.join(MANIFEST_FILE);
        std::fs::write(&path, self.to_string_lines())?;
        Ok(path)
    }

    pub fn read(path: &Path) -> Result<DatasetManifest> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::format(path.display().to_string(), e.to_string(), None))?;
        let mut entries = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let mut split = None;
            let mut index = None;
            let mut t1 = None;
            let mut t2 = None;
            let mut mask = None;
            for field in line.split_whitespace() {
                let (key, value) = field.split_once('=').ok_or_else(|| {
                    Error::format(
                        path.display().to_string(),
                        format!("line {}: field {field:?} is not key=value", lineno + 1),
                        None,
                    )
                })?;
                match key {
                    "split" => split = Some(Split::parse(value)?),
                    "index" => {
                        index = Some(value.parse::<u64>().map_err(|_| {
                            Error::format(
                                path.display().to_string(),
                                format!("line {}: bad index {value:?}", lineno + 1),
                                None,
                            )
                        })?)
                    }
                    "t1" => t1 = Some(value.to_string()),
                    "t2" => t2 = Some(value.to_string()),
                    "mask" => mask = Some(value.to_string()),
                    other => {
                        return Err(Error::format(
                            path.display().to_string(),
                            format!("line {}: unknown key {other:?}", lineno + 1),
                            None,
                        ))
                    }
                }
            }
            match (split, index, t1, t2, mask) {
                (Some(split), Some(index), Some(t1), Some(t2), Some(mask)) => {
                    entries.push(ManifestEntry {
                        split,
                        index,
                        t1,
                        t2,
                        mask,
                    })
                }
                _ => {
                    return Err(Error::format(
                        path.display().to_string(),
                        format!("line {}: missing fields", lineno + 1),
                        None,
                    ))
                }
            }
        }
        Ok(DatasetManifest { entries })
    }

    pub fn split_entries(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }
}

/// Generate every pair of the dataset onto disk plus the manifest file.
pub fn generate_dataset(
    spec: &SceneSpec,
    counts: &SplitCounts,
    root: &Path,
) -> Result<DatasetManifest> {
    spec.validate()?;
    let manifest = DatasetManifest::plan(counts)?;
    for sub in ["t1", "t2", "mask"] {
        std::fs::create_dir_all(root.join(sub))?;
    }
    for entry in &manifest.entries {
        let sample = generate_pair(spec, entry.index)?;
        pnm::write_image(&root.join(&entry.t1), &sample.t1)?;
        pnm::write_image(&root.join(&entry.t2), &sample.t2)?;
        pnm::write_image(&root.join(&entry.mask), &sample.mask)?;
    }
    manifest.write(root)?;
    Ok(manifest)
}

/// Load one manifest entry's images from disk.
pub fn load_entry(root: &Path, entry: &ManifestEntry) -> Result<SamplePair> {
    let t1 = pnm::read_image(&root.join(&entry.t1))?;
    let t2 = pnm::read_image(&root.join(&entry.t2))?;
    let mask_img = pnm::read_image(&root.join(&entry.mask))?;
    // mask PGMs hold 0 or 255; re-binarize to be safe against quantization
    let mask = mask_img.map(|v| if v >= 0.5 { 1.0 } else { 0.0 });
    Ok(SamplePair { t1, t2, mask })
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    #[test]
    fn plan_produces_disjoint_index_ranges() {
        let counts = SplitCounts {
            train: 8,
            val: 2,
            test: 2,
        };
        let m = DatasetManifest::plan(&counts).unwrap();
        assert_eq!(m.entries.len(), 12);
        let train: Vec<u64> = m.split_entries(Split::Train).map(|e| e.index).collect();
        let val: Vec<u64> = m.split_entries(Split::Val).map(|e| e.index).collect();
        let test: Vec<u64> = m.split_entries(Split::Test).map(|e| e.index).collect();
        assert_eq!(train, (0..8).collect::<Vec<_>>());
        assert_eq!(val, vec![8, 9]);
        assert_eq!(test, vec![10, 11]);
    }

    #[test]
    fn manifest_round_trips_through_text() {
        let counts = SplitCounts {
            train: 3,
            val: 1,
            test: 1,
        };
        let dir = tempdir().unwrap();
        let m = DatasetManifest::plan(&counts).unwrap();
        let path = m.write(dir.path()).unwrap();
        let back = DatasetManifest::read(&path).unwrap();
        assert_eq!(back.entries, m.entries);
    }

    #[test]
    fn generation_is_byte_reproducible() {
        let spec = SceneSpec {
            seed: 7,
            size: 16,
            ..Default::default()
        };
        let counts = SplitCounts {
            train: 2,
            val: 1,
            test: 1,
        };
        let da = tempdir().unwrap();
        let db = tempdir().unwrap();
        generate_dataset(&spec, &counts, da.path()).unwrap();
        generate_dataset(&spec, &counts, db.path()).unwrap();
        let m = DatasetManifest::read(&da.path().join(MANIFEST_FILE)).unwrap();
        for e in &m.entries {
            for rel in [&e.t1, &e.t2, &e.mask] {
                let a = std::fs::read(da.path().join(rel)).unwrap();
                let b = std::fs::read(db.path().join(rel)).unwrap();
                assert_eq!(a, b, "{rel}");
            }
        }
        assert_eq!(
            std::fs::read(da.path().join(MANIFEST_FILE)).unwrap(),
            std::fs::read(db.path().join(MANIFEST_FILE)).unwrap()
        );
    }

    #[test]
    fn load_entry_round_trips_masks_exactly() {
        let spec = SceneSpec {
            seed: 3,
            size: 16,
            ..Default::default()
        };
        let counts = SplitCounts {
            train: 1,
            val: 1,
            test: 1,
        };
        let dir = tempdir().unwrap();
        let m = generate_dataset(&spec, &counts, dir.path()).unwrap();
        for e in &m.entries {
            let direct = super::super::generate_pair(&spec, e.index).unwrap();
            let loaded = load_entry(dir.path(), e).unwrap();
            assert_eq!(loaded.mask.data(), direct.mask.data());
            for (a, b) in loaded.t1.data().iter().zip(direct.t1.data()) {
                assert!((a - b).abs() <= 1.0 / 510.0 + 1e-6);
            }
        }
    }

    #[test]
    fn malformed_manifests_are_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("m.txt");
        std::fs::write(&path, "split=train index=0 t1=a t2=b\n").unwrap();
        assert!(DatasetManifest::read(&path).is_err()); // missing mask
        std::fs::write(&path, "split=nope index=0 t1=a t2=b mask=c\n").unwrap();
        assert!(DatasetManifest::read(&path).is_err());
        std::fs::write(&path, "bogus line\n").unwrap();
        assert!(DatasetManifest::read(&path).is_err());
    }
}
