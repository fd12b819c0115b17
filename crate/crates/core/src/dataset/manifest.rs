//! Dataset manifests.
//!
//! A manifest is a TOML file:
//!
//! ```toml
//! root = "images"        # optional, relative to the manifest's directory
//! resolution = "20x20"   # optional working resolution
//! histeq = true          # optional histogram equalization toggle
//!
//! [[sets]]
//! class = "apple"
//! set = "apple1"
//! images = ["apple1/000.png", "apple1/001.png"]   # relative to root
//! ```
//!
//! Alternatively a directory laid out as `root/<class>/<set>/<images>` is
//! discovered directly, with images taken in lexicographic file-name order.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{ImageSetCollection, LabeledSet, SetKey};
use crate::preprocess::{is_upsampling, load_image, PreprocessConfig, Resolution};
use crate::{ClassId, Error, Result};

/// File extensions picked up by directory discovery (case-insensitive).
pub const IMAGE_EXTENSIONS: &[&str] = &["pgm", "png"];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub class_id: ClassId,
    pub set_id: String,
    pub images: Vec<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub entries: Vec<ManifestEntry>,
    pub resolution: Option<Resolution>,
    pub histeq: Option<bool>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    root: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    resolution: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    histeq: Option<bool>,
    #[serde(default)]
    sets: Vec<SetFile>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SetFile {
    class: String,
    set: String,
    images: Vec<PathBuf>,
}

/// Loads a manifest file, or discovers one when `path` is a directory.
pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    if path.is_dir() {
        DatasetManifest::discover(path)
    } else {
        let text = std::fs::read_to_string(path).map_err(|e| Error::load(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        DatasetManifest::from_toml(&text, base).map_err(|e| match e {
            Error::Load { .. } => e,
            other => Error::load(path, other),
        })
    }
}

impl DatasetManifest {
    /// Parses manifest text; relative paths resolve against `base`.
    pub fn from_toml(text: &str, base: &Path) -> Result<Self> {
        let file: ManifestFile = toml::from_str(text).map_err(|e| Error::invalid(format!("manifest: {e}")))?;
        let root = match file.root {
            Some(r) => base.join(r),
            None => base.to_path_buf(),
        };
        let resolution = file.resolution.as_deref().map(str::parse).transpose()?;
        let entries = file
            .sets
            .into_iter()
            .map(|s| ManifestEntry {
                images: s.images.iter().map(|p| root.join(p)).collect(),
                class_id: s.class,
                set_id: s.set,
            })
            .collect();
        Self::validated(root, entries, resolution, file.histeq)
    }

    /// Builds a manifest from `root/<class>/<set>/<image files>`.
    pub fn discover(root: &Path) -> Result<Self> {
        let mut entries = Vec::new();
        for class_dir in sorted_subdirs(root)? {
            let class_id = file_name(&class_dir);
            for set_dir in sorted_subdirs(&class_dir)? {
                let mut images: Vec<PathBuf> = std::fs::read_dir(&set_dir)
                    .map_err(|e| Error::load(&set_dir, e))?
                    .filter_map(|e| e.ok().map(|e| e.path()))
                    .filter(|p| p.is_file() && has_image_extension(p) && !is_hidden(p))
                    .collect();
                images.sort();
                entries.push(ManifestEntry { class_id: class_id.clone(), set_id: file_name(&set_dir), images });
            }
        }
        Self::validated(root.to_path_buf(), entries, None, None)
    }

    fn validated(
        root: PathBuf,
        mut entries: Vec<ManifestEntry>,
        resolution: Option<Resolution>,
        histeq: Option<bool>,
    ) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::load(&root, "manifest lists no image sets"));
        }
        let mut seen = HashSet::new();
        for e in &entries {
            if !seen.insert((e.class_id.as_str(), e.set_id.as_str())) {
                return Err(Error::load(&root, format!("duplicate set `{}`/`{}`", e.class_id, e.set_id)));
            }
            if e.images.is_empty() {
                return Err(Error::load(&root, format!("set `{}`/`{}` has no images", e.class_id, e.set_id)));
            }
            if let Some(missing) = e.images.iter().find(|p| !p.is_file()) {
                return Err(Error::load(missing, "image file does not exist"));
            }
        }
        entries.sort_by(|a, b| (&a.class_id, &a.set_id).cmp(&(&b.class_id, &b.set_id)));
        Ok(Self { root, entries, resolution, histeq })
    }

    pub fn keys(&self) -> Vec<SetKey> {
        self.entries
            .iter()
            .map(|e| SetKey { class_id: e.class_id.clone(), set_id: e.set_id.clone() })
            .collect()
    }

    pub fn image_count(&self) -> usize {
        self.entries.iter().map(|e| e.images.len()).sum()
    }

    /// Serializes back to manifest text, with paths relative to `root` when possible.
    pub fn to_toml(&self) -> String {
        let file = ManifestFile {
            root: Some(self.root.clone()),
            resolution: self.resolution.map(|r| r.to_string()),
            histeq: self.histeq,
            sets: self
                .entries
                .iter()
                .map(|e| SetFile {
                    class: e.class_id.clone(),
                    set: e.set_id.clone(),
                    images: e
                        .images
                        .iter()
                        .map(|p| p.strip_prefix(&self.root).map(Path::to_path_buf).unwrap_or_else(|_| p.clone()))
                        .collect(),
                })
                .collect(),
        };
        toml::to_string(&file).expect("manifest serializes")
    }

    /// Loads and preprocesses every image.
    pub fn load_sets(&self, config: &PreprocessConfig) -> Result<ImageSetCollection> {
        let sets = self
            .entries
            .par_iter()
            .map(|e| {
                let vectors = e
                    .images
                    .iter()
                    .map(|p| {
                        let img = load_image(p)?;
                        if is_upsampling(&img, config.resolution) {
                            log::warn!(
                                "{} is {}x{}, smaller than {}; enlarging",
                                p.display(),
                                img.height(),
                                img.width(),
                                config.resolution
                            );
                        }
                        config.apply(&img).map_err(|err| Error::load(p, err))
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(LabeledSet { class_id: e.class_id.clone(), set_id: e.set_id.clone(), vectors })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ImageSetCollection::new(config.resolution, sets))
    }
}

fn sorted_subdirs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::load(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir() && !is_hidden(p))
        .collect();
    dirs.sort();
    Ok(dirs)
}

fn file_name(p: &Path) -> String {
    p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
}

fn is_hidden(p: &Path) -> bool {
    file_name(p).starts_with('.')
}

fn has_image_extension(p: &Path) -> bool {
    p.extension()
        .map(|e| e.to_string_lossy().to_ascii_lowercase())
        .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.as_str()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::preprocess::{encode_pgm, ImageRaster};

    fn write_tree(root: &Path, classes: usize, sets: usize, images: usize) {
        for c in 0..classes {
            for s in 0..sets {
                let dir = root.join(format!("class{c}")).join(format!("set{s}"));
                std::fs::create_dir_all(&dir).unwrap();
                for i in 0..images {
                    let px = (0..16).map(|k| ((k * 11 + c * 50 + s * 7 + i) % 256) as f64).collect();
                    let img = ImageRaster::new(4, 4, 1, px).unwrap();
                    std::fs::write(dir.join(format!("{i:03}.pgm")), encode_pgm(&img).unwrap()).unwrap();
                }
            }
        }
    }

    fn explicit_text(classes: usize, sets: usize, images: usize) -> String {
        let mut text = String::from("resolution = \"2x2\"\nhisteq = true\n");
        // Listed out of order on purpose; loading sorts entries.
        for c in (0..classes).rev() {
            for s in 0..sets {
                let imgs: Vec<String> = (0..images).map(|i| format!("\"class{c}/set{s}/{i:03}.pgm\"")).collect();
                text += &format!("[[sets]]\nclass = \"class{c}\"\nset = \"set{s}\"\nimages = [{}]\n", imgs.join(", "));
            }
        }
        text
    }

    #[test]
    fn explicit_manifest_counts_and_order() {
        let dir = tempfile::tempdir().unwrap();
        write_tree(dir.path(), 2, 2, 3);
        let path = dir.path().join("m.toml");
        std::fs::write(&path, explicit_text(2, 2, 3)).unwrap();
        let m = load_manifest(&path).unwrap();
        assert_eq!(m.entries.len(), 4);
        assert_eq!(m.image_count(), 12);
        assert_eq!(m.entries[0].class_id, "class0");
        assert_eq!(m.resolution, Some(Resolution::new(2, 2).unwrap()));
        assert_eq!(m.histeq, Some(true));
    }

    #[test]
    fn discovery_matches_explicit_manifest() {
        let dir = tempfile::tempdir().unwrap();
        write_tree(dir.path(), 2, 2, 3);
        let discovered = load_manifest(dir.path()).unwrap();
        let explicit = DatasetManifest::from_toml(&explicit_text(2, 2, 3), dir.path()).unwrap();
        assert_eq!(discovered.entries, explicit.entries);
        assert_eq!(discovered.root, explicit.root);
    }

    #[test]
    fn missing_file_names_the_path() {
        let dir = tempfile::tempdir().unwrap();
        write_tree(dir.path(), 1, 1, 1);
        let text = "[[sets]]\nclass = \"a\"\nset = \"s\"\nimages = [\"class0/set0/000.pgm\", \"nope.pgm\"]\n";
        let path = dir.path().join("m.toml");
        std::fs::write(&path, text).unwrap();
        let err = load_manifest(&path).unwrap_err();
        assert!(err.to_string().contains("nope.pgm"), "{err}");
    }

    #[test]
    fn duplicates_and_empty_sets_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        write_tree(dir.path(), 1, 1, 1);
        let dup = "[[sets]]\nclass = \"a\"\nset = \"s\"\nimages = [\"class0/set0/000.pgm\"]\n\
                   [[sets]]\nclass = \"a\"\nset = \"s\"\nimages = [\"class0/set0/000.pgm\"]\n";
        assert!(DatasetManifest::from_toml(dup, dir.path()).unwrap_err().to_string().contains("duplicate"));
        let empty = "[[sets]]\nclass = \"a\"\nset = \"s\"\nimages = []\n";
        assert!(DatasetManifest::from_toml(empty, dir.path()).unwrap_err().to_string().contains("no images"));
        assert!(DatasetManifest::from_toml("", dir.path()).is_err());
    }

    #[test]
    fn toml_roundtrip_and_loading() {
        let dir = tempfile::tempdir().unwrap();
        write_tree(dir.path(), 2, 1, 2);
        let m = load_manifest(dir.path()).unwrap();
        let again = DatasetManifest::from_toml(&m.to_toml(), Path::new("/")).unwrap();
        assert_eq!(again.entries, m.entries);

        let cfg = PreprocessConfig { resolution: Resolution::new(2, 2).unwrap(), histeq: false };
        let sets = m.load_sets(&cfg).unwrap();
        assert_eq!(sets.sets.len(), 2);
        assert!(sets.sets.iter().all(|s| s.vectors.len() == 2 && s.vectors[0].len() == 4));
    }
}
