use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub scene_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cubemap_dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub erp_path: Option<PathBuf>,
    pub cond_id: usize,
}

/// Index of a generated dataset; paths are relative to the manifest file.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub generator_version: String,
    pub seed: u64,
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    /// Checks id uniqueness and that every referenced path exists under `base`.
    pub fn validate(&self, base: &Path) -> Result<()> {
        let mut ids = HashSet::new();
        for e in &self.entries {
            if !ids.insert(e.scene_id.as_str()) {
                return Err(Error::Config(format!("duplicate scene id {:?}", e.scene_id)));
            }
            let path = match (&e.cubemap_dir, &e.erp_path) {
                (Some(p), None) | (None, Some(p)) => base.join(p),
                _ => {
                    return Err(Error::Config(format!(
                        "scene {:?} needs exactly one of cubemap_dir or erp_path",
                        e.scene_id
                    )))
                }
            };
            if !path.exists() {
                return Err(Error::io(
                    path,
                    std::io::Error::new(std::io::ErrorKind::NotFound, "referenced by manifest"),
                ));
            }
        }
        Ok(())
    }
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let manifest: DatasetManifest = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        message: e.to_string(),
    })?;
    manifest.validate(path.parent().unwrap_or(Path::new(".")))?;
    Ok(manifest)
}

pub fn write_manifest(manifest: &DatasetManifest, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut text = serde_json::to_string_pretty(manifest).expect("manifest serializes");
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(id: &str, dir: &str) -> ManifestEntry {
        ManifestEntry {
            scene_id: id.into(),
            cubemap_dir: Some(dir.into()),
            erp_path: None,
            cond_id: 0,
        }
    }

    #[test]
    fn round_trip_and_validation() {
        let tmp = tempfile::tempdir().unwrap();
        fs::create_dir(tmp.path().join("s0")).unwrap();
        let m = DatasetManifest {
            generator_version: "1".into(),
            seed: 3,
            entries: vec![entry("s0", "s0")],
        };
        let path = tmp.path().join("manifest.json");
        write_manifest(&m, &path).unwrap();
        assert_eq!(read_manifest(&path).unwrap(), m);
    }

    #[test]
    fn duplicate_ids_and_missing_paths() {
        let tmp = tempfile::tempdir().unwrap();
        fs::create_dir(tmp.path().join("s0")).unwrap();
        let dup = DatasetManifest {
            generator_version: "1".into(),
            seed: 3,
            entries: vec![entry("s0", "s0"), entry("s0", "s0")],
        };
        assert!(dup.validate(tmp.path()).is_err());
        let missing = DatasetManifest {
            generator_version: "1".into(),
            seed: 3,
            entries: vec![entry("s1", "s1")],
        };
        assert!(missing.validate(tmp.path()).unwrap_err().is_io());
    }

    #[test]
    fn parse_error_has_line() {
        let tmp = tempfile::tempdir().unwrap();
        let path = tmp.path().join("m.json");
        fs::write(&path, "{\n  \"seed\": 1,\n  oops\n}").unwrap();
        match read_manifest(&path).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }
}
