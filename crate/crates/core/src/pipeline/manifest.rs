//! JSON-lines manifests: a header line followed by one record per line.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::assets::AssetRegistry;
use crate::error::{Error, Result};
use crate::pose::GraspRecord;

pub const MANIFEST_SCHEMA: &str = "handbooster-manifest";
pub const MANIFEST_VERSION: u32 = 1;
pub const UNITS: &str = "mm";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestHeader {
    pub schema: String,
    pub version: u32,
    pub units: String,
    pub joint_count: usize,
    /// Asset registry directory, relative to the manifest file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub assets: Option<PathBuf>,
}

impl ManifestHeader {
    pub fn new(joint_count: usize, assets: Option<PathBuf>) -> Self {
        ManifestHeader {
            schema: MANIFEST_SCHEMA.into(),
            version: MANIFEST_VERSION,
            units: UNITS.into(),
            joint_count,
            assets,
        }
    }

    fn check(&self, origin: &str) -> Result<()> {
        if self.schema != MANIFEST_SCHEMA || self.version != MANIFEST_VERSION {
            return Err(Error::invalid(format!(
                "{origin}: unrecognized schema `{}` version {}",
                self.schema, self.version
            )));
        }
        if self.units != UNITS {
            return Err(Error::invalid(format!("{origin}: units must be `{UNITS}`, got `{}`", self.units)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Manifest {
    pub header: ManifestHeader,
    pub records: Vec<GraspRecord>,
}

impl Manifest {
    pub fn new(header: ManifestHeader, records: Vec<GraspRecord>) -> Result<Self> {
        let m = Manifest { header, records };
        m.check("manifest")?;
        Ok(m)
    }

    fn check(&self, origin: &str) -> Result<()> {
        self.header.check(origin)?;
        let mut seen = BTreeSet::new();
        for r in &self.records {
            if r.hand.joint_rots.len() != self.header.joint_count {
                return Err(Error::invalid(format!(
                    "{origin}: record {} has {} joints, header says {}",
                    r.id(),
                    r.hand.joint_rots.len(),
                    self.header.joint_count
                )));
            }
            if !seen.insert((r.sequence_id.as_str(), r.frame_index)) {
                return Err(Error::invalid(format!("{origin}: duplicate frame {}", r.id())));
            }
        }
        Ok(())
    }

    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let (header, records) = parse_jsonl(text, origin)?;
        let m = Manifest { header, records };
        m.check(origin)?;
        Ok(m)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn to_jsonl(&self) -> String {
        to_jsonl(&self.header, &self.records)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_jsonl().as_bytes())
    }

    /// Asset directory named in the header, resolved against the manifest
    /// location.
    pub fn assets_dir(&self, manifest_path: &Path) -> Option<PathBuf> {
        let dir = manifest_path.parent().unwrap_or(Path::new(""));
        self.header.assets.as_ref().map(|a| dir.join(a))
    }

    pub fn check_assets(&self, assets: &AssetRegistry) -> Result<()> {
        match self.records.iter().find(|r| !assets.contains(&r.object_id)) {
            Some(r) => Err(Error::Lookup(format!(
                "record {} shows object `{}`, which is not in the asset registry",
                r.id(),
                r.object_id
            ))),
            None => Ok(()),
        }
    }
}

/// Header line, then one JSON document per line.
pub fn to_jsonl<H: Serialize, T: Serialize>(header: &H, items: &[T]) -> String {
    let mut out = serde_json::to_string(header).expect("header serializes");
    out.push('\n');
    for it in items {
        out.push_str(&serde_json::to_string(it).expect("record serializes"));
        out.push('\n');
    }
    out
}

pub fn parse_jsonl<H: DeserializeOwned, T: DeserializeOwned>(text: &str, origin: &str) -> Result<(H, Vec<T>)> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, first) = lines
        .next()
        .ok_or_else(|| Error::invalid(format!("{origin}: empty manifest")))?;
    let header = serde_json::from_str(first).map_err(|e| Error::json(format!("{origin}: header"), e))?;
    let items = lines
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::json(format!("{origin}: line {}", i + 1), e)))
        .collect::<Result<_>>()?;
    Ok((header, items))
}

pub fn read_jsonl<H: DeserializeOwned, T: DeserializeOwned>(path: &Path) -> Result<(H, Vec<T>)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_jsonl(&text, &path.display().to_string())
}

/// Writes through a sibling temporary file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".partial");
    let tmp = PathBuf::from(tmp);
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("value serializes");
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pose::{HandPose, ObjectPose, Source};
    use nalgebra::Vector3;

    fn rec(seq: &str, frame: u64) -> GraspRecord {
        GraspRecord {
            sequence_id: seq.into(),
            frame_index: frame,
            object_id: "box".into(),
            source: Source::Real,
            hand: HandPose::neutral(15),
            hand_translation: Vector3::new(1.0, 2.0, 3.0),
            object: ObjectPose::identity(),
            grasping: None,
        }
    }

    #[test]
    fn round_trip_is_byte_stable() {
        let m = Manifest::new(ManifestHeader::new(15, Some("assets".into())), vec![rec("a", 0), rec("a", 1)]).unwrap();
        let text = m.to_jsonl();
        let back = Manifest::parse(&text, "t").unwrap();
        assert_eq!(back, m);
        assert_eq!(back.to_jsonl(), text);
    }

    #[test]
    fn rejects_bad_headers_and_duplicates() {
        let m = Manifest::new(ManifestHeader::new(15, None), vec![rec("a", 0)]).unwrap();
        let text = m.to_jsonl().replace("\"version\":1", "\"version\":9");
        assert!(Manifest::parse(&text, "t").is_err());
        assert!(Manifest::new(ManifestHeader::new(15, None), vec![rec("a", 0), rec("a", 0)]).is_err());
        assert!(Manifest::new(ManifestHeader::new(3, None), vec![rec("a", 0)]).is_err());
        let reg = AssetRegistry::default();
        assert!(matches!(m.check_assets(&reg), Err(Error::Lookup(_))));
    }
}
