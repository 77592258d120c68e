//! Dataset manifests in JSON Lines form.
//!
//! Each line is one record with exactly the fields `id`, `image`, `mask`,
//! `factory` and `split`. Relative paths are resolved against the directory
//! that holds the manifest.

use std::collections::HashSet;
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Production site label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Factory {
    F1,
    F2,
}

impl fmt::Display for Factory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Factory::F1 => "F1",
            Factory::F2 => "F2",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleRecord {
    pub id: String,
    pub image: PathBuf,
    pub mask: Option<PathBuf>,
    pub factory: Factory,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetManifest {
    pub name: String,
    pub records: Vec<SampleRecord>,
}

impl DatasetManifest {
    /// Builds a manifest and checks the structural invariants (non-empty,
    /// unique ids, masks on every train/val record). File existence is only
    /// checked by [`DatasetManifest::load`].
    pub fn new(name: impl Into<String>, records: Vec<SampleRecord>) -> Result<Self> {
        let manifest = Self {
            name: name.into(),
            records,
        };
        manifest.validate()?;
        Ok(manifest)
    }

    fn validate(&self) -> Result<()> {
        if self.records.is_empty() {
            return Err(Error::Manifest(format!("manifest {:?} is empty", self.name)));
        }
        let mut seen = HashSet::new();
        for r in &self.records {
            if !seen.insert(r.id.as_str()) {
                return Err(Error::Manifest(format!("duplicate id {:?}", r.id)));
            }
            if r.mask.is_none() && matches!(r.split, Split::Train | Split::Val) {
                return Err(Error::Manifest(format!(
                    "record {:?} is in the {:?} split but has no mask",
                    r.id, r.split
                )));
            }
        }
        Ok(())
    }

    /// Reads a JSON Lines manifest. The manifest name is the file stem.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if !path.exists() {
            return Err(Error::FileNotFound(path.to_path_buf()));
        }
        let base = path.parent().unwrap_or(Path::new("."));
        let reader = BufReader::new(std::fs::File::open(path)?);
        let mut records = Vec::new();
        for (lineno, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let mut rec: SampleRecord = serde_json::from_str(&line).map_err(|e| {
                Error::Manifest(format!("{}:{}: {e}", path.display(), lineno + 1))
            })?;
            rec.image = base.join(&rec.image);
            rec.mask = rec.mask.map(|m| base.join(m));
            records.push(rec);
        }
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        let manifest = Self { name, records };
        manifest.validate()?;
        for r in &manifest.records {
            for p in std::iter::once(&r.image).chain(r.mask.as_ref()) {
                if !p.exists() {
                    return Err(Error::FileNotFound(p.clone()));
                }
            }
        }
        Ok(manifest)
    }

    /// Writes the manifest as JSON Lines. Paths are written as stored, so
    /// callers that want a relocatable manifest store paths relative to the
    /// manifest's directory.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path.as_ref())?);
        out.write_all(self.to_jsonl()?.as_bytes())?;
        out.flush()?;
        Ok(())
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let mut s = String::new();
        for r in &self.records {
            s.push_str(&serde_json::to_string(r)?);
            s.push('\n');
        }
        Ok(s)
    }

    pub fn get(&self, id: &str) -> Option<&SampleRecord> {
        self.records.iter().find(|r| r.id == id)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(id: &str, mask: Option<&str>, split: Split) -> SampleRecord {
        SampleRecord {
            id: id.into(),
            image: format!("{id}.png").into(),
            mask: mask.map(PathBuf::from),
            factory: Factory::F1,
            split,
        }
    }

    #[test]
    fn record_json_shape() {
        let r = rec("a", None, Split::Test);
        let v: serde_json::Value = serde_json::to_value(&r).unwrap();
        let keys: Vec<_> = v.as_object().unwrap().keys().cloned().collect();
        assert_eq!(keys.len(), 5);
        for k in ["id", "image", "mask", "factory", "split"] {
            assert!(v.get(k).is_some(), "missing {k}");
        }
        assert!(v["mask"].is_null());
        assert_eq!(v["factory"], "F1");
        assert_eq!(v["split"], "test");
    }

    #[test]
    fn invariants() {
        assert!(DatasetManifest::new("x", vec![]).is_err());
        assert!(DatasetManifest::new(
            "x",
            vec![rec("a", Some("m"), Split::Test), rec("a", Some("m"), Split::Test)]
        )
        .is_err());
        assert!(DatasetManifest::new("x", vec![rec("a", None, Split::Train)]).is_err());
        assert!(DatasetManifest::new("x", vec![rec("a", None, Split::Test)]).is_ok());
    }

    #[test]
    fn load_resolves_relative_paths_and_checks_files() {
        let dir = tempfile::tempdir().unwrap();
        let m = DatasetManifest::new("set", vec![rec("a", Some("a_mask.png"), Split::Val)]).unwrap();
        let mpath = dir.path().join("set.jsonl");
        m.save(&mpath).unwrap();
        assert!(matches!(
            DatasetManifest::load(&mpath),
            Err(Error::FileNotFound(_))
        ));
        std::fs::write(dir.path().join("a.png"), b"").unwrap();
        std::fs::write(dir.path().join("a_mask.png"), b"").unwrap();
        let loaded = DatasetManifest::load(&mpath).unwrap();
        assert_eq!(loaded.name, "set");
        assert_eq!(loaded.records[0].image, dir.path().join("a.png"));
        assert_eq!(loaded.records[0].mask, Some(dir.path().join("a_mask.png")));
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mpath = dir.path().join("bad.jsonl");
        std::fs::write(
            &mpath,
            r#"{"id":"a","image":"a.png","mask":null,"factory":"F1","split":"test","extra":1}"#,
        )
        .unwrap();
        assert!(matches!(DatasetManifest::load(&mpath), Err(Error::Manifest(_))));
    }
}
