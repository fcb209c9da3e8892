//! Object asset registry: a directory of `{object_id}.obj` meshes with
//! optional `{object_id}.png` UV textures.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::image::RgbImage;
use crate::mesh::MeshGeometry;

#[derive(Clone, Debug)]
pub struct ObjectAsset {
    pub mesh: MeshGeometry,
    pub texture: Option<RgbImage>,
}

#[derive(Clone, Debug, Default)]
pub struct AssetRegistry {
    root: Option<PathBuf>,
    objects: BTreeMap<String, ObjectAsset>,
}

impl AssetRegistry {
    /// Loads every `*.obj` in `dir` (non-recursive).
    pub fn load(dir: &Path) -> Result<Self> {
        let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
        let mut objects = BTreeMap::new();
        for entry in entries {
            let path = entry.map_err(|e| Error::io(dir, e))?.path();
            if path.extension().and_then(|e| e.to_str()) != Some("obj") {
                continue;
            }
            let Some(id) = path.file_stem().and_then(|s| s.to_str()) else {
                continue;
            };
            let mesh = MeshGeometry::read_obj(&path)?;
            let tex_path = path.with_extension("png");
            let texture = if tex_path.is_file() {
                Some(RgbImage::read_png(&tex_path)?)
            } else {
                None
            };
            objects.insert(id.to_string(), ObjectAsset { mesh, texture });
        }
        Ok(AssetRegistry {
            root: Some(dir.to_path_buf()),
            objects,
        })
    }

    pub fn from_meshes(meshes: impl IntoIterator<Item = (String, MeshGeometry)>) -> Self {
        AssetRegistry {
            root: None,
            objects: meshes
                .into_iter()
                .map(|(id, mesh)| (id, ObjectAsset { mesh, texture: None }))
                .collect(),
        }
    }

    pub fn root(&self) -> Option<&Path> {
        self.root.as_deref()
    }

    pub fn contains(&self, object_id: &str) -> bool {
        self.objects.contains_key(object_id)
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.objects.keys().map(String::as_str)
    }

    pub fn get(&self, object_id: &str) -> Result<&ObjectAsset> {
        self.objects
            .get(object_id)
            .ok_or_else(|| Error::Lookup(format!("object `{object_id}` is not in the asset registry")))
    }

    pub fn mesh(&self, object_id: &str) -> Result<&MeshGeometry> {
        self.get(object_id).map(|a| &a.mesh)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::shapes;
    use nalgebra::Point3;

    #[test]
    fn loads_directory_and_reports_missing_ids() {
        let dir = tempfile::tempdir().unwrap();
        let cube = shapes::cube(Point3::origin(), 10.0);
        std::fs::write(dir.path().join("box.obj"), cube.to_obj()).unwrap();
        std::fs::write(dir.path().join("notes.txt"), "ignored").unwrap();
        let reg = AssetRegistry::load(dir.path()).unwrap();
        assert_eq!(reg.ids().collect::<Vec<_>>(), ["box"]);
        assert_eq!(reg.mesh("box").unwrap().faces.len(), 12);
        assert!(matches!(reg.mesh("mug"), Err(Error::Lookup(_))));
    }
}
