//! Output directory handling: files are staged under a `.partial` name and
//! only renamed into place once the whole command has succeeded.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use serde_json::{json, Value};

pub const MANIFEST: &str = "manifest.json";

pub struct Campaign {
    dir: PathBuf,
    created_dir: bool,
    staged: Vec<(PathBuf, PathBuf)>,
    committed: bool,
}

impl Campaign {
    pub fn open(dir: &Path) -> Result<Self> {
        let created_dir = !dir.exists();
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(Self { dir: dir.to_path_buf(), created_dir, staged: Vec::new(), committed: false })
    }

    /// Where to write output `name` until the command commits.
    pub fn stage(&mut self, name: &str) -> PathBuf {
        let tmp = self.dir.join(format!(".{name}.partial"));
        let _ = fs::remove_file(&tmp);
        self.staged.push((tmp.clone(), self.dir.join(name)));
        tmp
    }

    pub fn write(&mut self, name: &str, bytes: impl AsRef<[u8]>) -> Result<()> {
        let p = self.stage(name);
        fs::write(&p, bytes).with_context(|| format!("writing {}", p.display()))
    }

    pub fn write_json(&mut self, name: &str, v: &impl Serialize) -> Result<()> {
        self.write(name, serde_json::to_string_pretty(v)? + "\n")
    }

    /// Moves staged outputs into place and appends one entry, echoing the
    /// flags, to the directory's manifest.
    pub fn commit(mut self, command: &str, flags: &impl Serialize) -> Result<()> {
        let manifest_path = self.dir.join(MANIFEST);
        let mut entries: Vec<Value> = match fs::read_to_string(&manifest_path) {
            Ok(s) => serde_json::from_str(&s).with_context(|| format!("parsing {}", manifest_path.display()))?,
            Err(_) => Vec::new(),
        };
        let outputs: Vec<String> =
            self.staged.iter().map(|(_, f)| f.file_name().unwrap().to_string_lossy().into_owned()).collect();
        entries.push(json!({
            "command": command,
            "version": env!("CARGO_PKG_VERSION"),
            "flags": flags,
            "outputs": outputs,
        }));
        let manifest_tmp = self.stage(MANIFEST);
        fs::write(&manifest_tmp, serde_json::to_string_pretty(&entries)? + "\n")?;
        for (tmp, fin) in &self.staged {
            fs::rename(tmp, fin).with_context(|| format!("moving {} into place", fin.display()))?;
        }
        self.committed = true;
        Ok(())
    }
}

impl Drop for Campaign {
    fn drop(&mut self) {
        if self.committed {
            return;
        }
        for (tmp, _) in &self.staged {
            let _ = fs::remove_file(tmp);
        }
        if self.created_dir {
            // Only succeeds when nothing else was put there.
            let _ = fs::remove_dir(&self.dir);
        }
    }
}
