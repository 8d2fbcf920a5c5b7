//! Dataset generation and the on-disk layout:
//! `<root>/<split>/<id>.ppm` + `<id>.txt` (one-line caption) plus a
//! `manifest.json` pairing files with their scene metadata.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::ppm::{read_ppm, write_ppm};
use super::scene::{gen_scene, SceneSpec};
use super::ImageBuffer;
use crate::error::{Error, Result};
use crate::prng::Prng;

pub const SPLITS: [&str; 3] = ["train", "val", "test"];

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    /// Paths relative to the dataset root.
    pub image: String,
    pub caption_file: String,
    pub caption: String,
    pub scene: SceneSpec,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub hr_size: usize,
    pub train: Vec<ManifestEntry>,
    pub val: Vec<ManifestEntry>,
    pub test: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn split(&self, name: &str) -> Result<&[ManifestEntry]> {
        match name {
            "train" => Ok(&self.train),
            "val" => Ok(&self.val),
            "test" => Ok(&self.test),
            other => Err(Error::Input(format!("unknown split '{other}'"))),
        }
    }

    pub fn total(&self) -> usize {
        self.train.len() + self.val.len() + self.test.len()
    }
}

/// Renders `count` scenes at `hr_size` and writes them under `root`, split by
/// the given percentages (train/val/test, summing to 100). Fully determined
/// by `(seed, count, hr_size, splits)`.
pub fn generate_dataset(
    root: &Path,
    count: usize,
    seed: u64,
    splits: (u32, u32, u32),
    hr_size: usize,
) -> Result<Manifest> {
    if count == 0 {
        return Err(Error::Input("dataset count must be positive".into()));
    }
    if splits.0 + splits.1 + splits.2 != 100 {
        return Err(Error::Input(format!(
            "split percentages {}/{}/{} do not sum to 100",
            splits.0, splits.1, splits.2
        )));
    }
    let n_train = count * splits.0 as usize / 100;
    let n_val = count * splits.1 as usize / 100;
    let mut manifest = Manifest {
        seed,
        hr_size,
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
    };
    let mut prng = Prng::seed_from(seed);
    for split in SPLITS {
        fs::create_dir_all(root.join(split))?;
    }
    for i in 0..count {
        let split = if i < n_train {
            "train"
        } else if i < n_train + n_val {
            "val"
        } else {
            "test"
        };
        let (img, spec) = gen_scene(&mut prng, hr_size);
        let id = format!("{i:06}");
        let image_rel = format!("{split}/{id}.ppm");
        let caption_rel = format!("{split}/{id}.txt");
        write_ppm(&root.join(&image_rel), &img)?;
        fs::write(root.join(&caption_rel), format!("{}\n", spec.caption))?;
        let entry = ManifestEntry {
            id,
            image: image_rel,
            caption_file: caption_rel,
            caption: spec.caption.clone(),
            scene: spec,
        };
        match split {
            "train" => manifest.train.push(entry),
            "val" => manifest.val.push(entry),
            _ => manifest.test.push(entry),
        }
    }
    let json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::Validation(format!("manifest serialization failed: {e}")))?;
    fs::write(root.join("manifest.json"), json)?;
    Ok(manifest)
}

pub fn load_manifest(root: &Path) -> Result<Manifest> {
    let path = root.join("manifest.json");
    let text = fs::read_to_string(&path)?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        offset: e.column(),
        msg: format!("manifest {}: {e}", path.display()),
    })
}

/// Loads one pair, checking that the stored caption matches the manifest.
pub fn load_pair(root: &Path, entry: &ManifestEntry) -> Result<(ImageBuffer, String)> {
    let img = read_ppm(&root.join(&entry.image))?;
    let caption = fs::read_to_string(root.join(&entry.caption_file))?
        .trim()
        .to_string();
    Ok((img, caption))
}

/// Recursively collects (relative path, bytes) for byte-identity comparisons.
pub fn tree_digest(root: &Path) -> Result<Vec<(String, Vec<u8>)>> {
    fn walk(base: &Path, dir: &Path, out: &mut Vec<(String, Vec<u8>)>) -> Result<()> {
        let mut entries: Vec<PathBuf> = fs::read_dir(dir)?
            .map(|e| e.map(|e| e.path()))
            .collect::<std::io::Result<_>>()?;
        entries.sort();
        for path in entries {
            if path.is_dir() {
                walk(base, &path, out)?;
            } else {
                let rel = path
                    .strip_prefix(base)
                    .expect("walk stays under base")
                    .to_string_lossy()
                    .into_owned();
                out.push((rel, fs::read(&path)?));
            }
        }
        Ok(())
    }
    let mut out = Vec::new();
    walk(root, root, &mut out)?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tmp(name: &str) -> PathBuf {
        let dir = std::env::temp_dir().join("textsr-dataset-tests").join(name);
        let _ = fs::remove_dir_all(&dir);
        fs::create_dir_all(&dir).unwrap();
        dir
    }

    #[test]
    fn counts_and_disjoint_splits() {
        let root = tmp("counts");
        let m = generate_dataset(&root, 50, 7, (80, 10, 10), 32).unwrap();
        assert_eq!(m.train.len(), 40);
        assert_eq!(m.val.len(), 5);
        assert_eq!(m.test.len(), 5);
        assert_eq!(m.total(), 50);
        let mut ids: Vec<&str> = m
            .train
            .iter()
            .chain(&m.val)
            .chain(&m.test)
            .map(|e| e.id.as_str())
            .collect();
        ids.sort();
        ids.dedup();
        assert_eq!(ids.len(), 50, "ids must be disjoint across splits");
    }

    #[test]
    fn same_seed_byte_identical_trees() {
        let a = tmp("det-a");
        let b = tmp("det-b");
        generate_dataset(&a, 12, 99, (50, 25, 25), 24).unwrap();
        generate_dataset(&b, 12, 99, (50, 25, 25), 24).unwrap();
        assert_eq!(tree_digest(&a).unwrap(), tree_digest(&b).unwrap());
    }

    #[test]
    fn pairs_load_and_captions_match() {
        let root = tmp("load");
        let m = generate_dataset(&root, 6, 3, (50, 25, 25), 24).unwrap();
        let loaded = load_manifest(&root).unwrap();
        assert_eq!(loaded.total(), 6);
        for entry in &m.train {
            let (img, caption) = load_pair(&root, entry).unwrap();
            assert_eq!(img.width, 24);
            assert_eq!(caption, entry.caption);
        }
    }

    #[test]
    fn zero_count_rejected() {
        let root = tmp("zero");
        assert!(matches!(
            generate_dataset(&root, 0, 1, (80, 10, 10), 16),
            Err(Error::Input(_))
        ));
    }
}
