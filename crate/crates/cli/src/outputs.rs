use std::fs;
use std::path::{Path, PathBuf};

/// Files written by a command; removed again unless the command commits.
pub struct Outputs {
    written: Vec<PathBuf>,
    created_dir: Option<PathBuf>,
    committed: bool,
}

impl Outputs {
    pub fn new(dir: &Path) -> std::io::Result<Self> {
        let created_dir = if dir.exists() {
            None
        } else {
            fs::create_dir_all(dir)?;
            Some(dir.to_path_buf())
        };
        Ok(Self { written: Vec::new(), created_dir, committed: false })
    }

    /// Registers `dir/name` for cleanup and returns its path.
    pub fn path(&mut self, dir: &Path, name: &str) -> PathBuf {
        let p = dir.join(name);
        self.written.push(p.clone());
        p
    }

    pub fn commit(mut self) {
        self.committed = true;
    }
}

impl Drop for Outputs {
    fn drop(&mut self) {
        if self.committed {
            return;
        }
        for p in &self.written {
            let _ = fs::remove_file(p);
        }
        if let Some(d) = &self.created_dir {
            let _ = fs::remove_dir(d);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uncommitted_outputs_are_removed() {
        let tmp = tempfile::tempdir().unwrap();
        let dir = tmp.path().join("out");
        {
            let mut o = Outputs::new(&dir).unwrap();
            fs::write(o.path(&dir, "a.txt"), "x").unwrap();
        }
        assert!(!dir.exists());
    }

    #[test]
    fn committed_outputs_stay() {
        let tmp = tempfile::tempdir().unwrap();
        let mut o = Outputs::new(tmp.path()).unwrap();
        let p = o.path(tmp.path(), "a.txt");
        fs::write(&p, "x").unwrap();
        o.commit();
        assert!(p.exists());
    }

    #[test]
    fn existing_directory_is_kept() {
        let tmp = tempfile::tempdir().unwrap();
        {
            let mut o = Outputs::new(tmp.path()).unwrap();
            fs::write(o.path(tmp.path(), "a.txt"), "x").unwrap();
        }
        assert!(tmp.path().exists());
        assert!(!tmp.path().join("a.txt").exists());
    }
}
