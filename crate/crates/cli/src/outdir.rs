use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use sha2::{Digest, Sha256};

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Output directory that only appears under its final name once every file
/// has been written. Until then files go to a hidden sibling, which is
/// removed if the run fails.
pub struct OutDir {
    target: PathBuf,
    staging: PathBuf,
    files: BTreeMap<String, String>,
    committed: bool,
}

impl OutDir {
    pub fn create(target: &Path) -> Result<Self> {
        if target.exists() {
            bail!("output directory {} already exists", target.display());
        }
        let name = target
            .file_name()
            .with_context(|| format!("output path {} has no final component", target.display()))?
            .to_string_lossy()
            .into_owned();
        let parent = match target.parent() {
            Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
            _ => PathBuf::from("."),
        };
        std::fs::create_dir_all(&parent).with_context(|| format!("creating {}", parent.display()))?;
        let staging = parent.join(format!(".{name}.partial-{}", std::process::id()));
        if staging.exists() {
            std::fs::remove_dir_all(&staging).with_context(|| format!("clearing {}", staging.display()))?;
        }
        std::fs::create_dir(&staging).with_context(|| format!("creating {}", staging.display()))?;
        Ok(Self {
            target: target.to_path_buf(),
            staging,
            files: BTreeMap::new(),
            committed: false,
        })
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let path = self.staging.join(name);
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        }
        std::fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
        self.files.insert(name.to_string(), sha256_hex(bytes));
        Ok(())
    }

    /// Writes `manifest.json` (the given fields plus a digest of every
    /// file) and moves the directory into place.
    pub fn commit(mut self, mut manifest: serde_json::Map<String, serde_json::Value>) -> Result<PathBuf> {
        manifest.insert("files".into(), serde_json::to_value(&self.files)?);
        let text = serde_json::to_string_pretty(&manifest)?;
        std::fs::write(self.staging.join("manifest.json"), text)
            .with_context(|| format!("writing manifest in {}", self.staging.display()))?;
        std::fs::rename(&self.staging, &self.target)
            .with_context(|| format!("moving results to {}", self.target.display()))?;
        self.committed = true;
        Ok(self.target.clone())
    }
}

impl Drop for OutDir {
    fn drop(&mut self) {
        if !self.committed {
            let _ = std::fs::remove_dir_all(&self.staging);
        }
    }
}
