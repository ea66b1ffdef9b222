//! Atomic output files with provenance sidecars.

use std::io::Write;
use std::path::{Path, PathBuf};

use tempfile::NamedTempFile;

pub const VERSION_HASH: &str = env!("PROZO_GIT_HASH");

/// Writes `contents` to `path` through a temporary file in the same
/// directory, so the file is either complete or absent.
pub fn write_atomic(path: &Path, contents: &str) -> std::io::Result<()> {
    let dir = path
        .parent()
        .filter(|d| !d.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    let mut tmp = NamedTempFile::new_in(dir)?;
    tmp.write_all(contents.as_bytes())?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

/// Output directory plus the metadata written next to every file.
pub struct OutputDir {
    root: PathBuf,
    resolved_config: String,
}

impl OutputDir {
    pub fn create(root: &Path, resolved_config: String) -> std::io::Result<Self> {
        std::fs::create_dir_all(root)?;
        Ok(Self {
            root: root.to_path_buf(),
            resolved_config,
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    /// Writes `name` and `name.meta`. `context` lines (e.g. the seed) go at
    /// the top of the sidecar.
    pub fn write(
        &self,
        name: &str,
        contents: &str,
        context: &[(&str, String)],
    ) -> std::io::Result<PathBuf> {
        let path = self.path(name);
        let mut meta = format!("version = \"{VERSION_HASH}\"\nfile = \"{name}\"\n");
        for (k, v) in context {
            meta.push_str(&format!("{k} = {v}\n"));
        }
        meta.push('\n');
        meta.push_str(&self.resolved_config);
        write_atomic(&path, contents)?;
        write_atomic(&self.path(&format!("{name}.meta")), &meta)?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn atomic_write_replaces_and_leaves_no_temporaries() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.csv");
        write_atomic(&p, "one\n").unwrap();
        write_atomic(&p, "two\n").unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap(), "two\n");
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
    }

    #[test]
    fn sidecar_carries_version_and_config() {
        let dir = tempfile::tempdir().unwrap();
        let out = OutputDir::create(dir.path(), "[run]\nrounds = 3\n".into()).unwrap();
        out.write("t.csv", "x\n", &[("seed", "4".into())]).unwrap();
        let meta = std::fs::read_to_string(dir.path().join("t.csv.meta")).unwrap();
        assert!(meta.starts_with("version = "));
        assert!(meta.contains("seed = 4\n"));
        assert!(meta.ends_with("rounds = 3\n"));
    }
}
