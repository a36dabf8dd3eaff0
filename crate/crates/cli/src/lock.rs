//! One CLI invocation owns the workspace: a lock file with the holder's pid,
//! removed on drop. A pre-existing lock rejects the invocation.

use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

pub const LOCK_NAME: &str = ".paratox.lock";

pub struct WorkspaceLock {
    path: PathBuf,
}

impl WorkspaceLock {
    pub fn acquire(workspace: &Path) -> Result<WorkspaceLock, String> {
        std::fs::create_dir_all(workspace)
            .map_err(|e| format!("cannot create workspace {}: {e}", workspace.display()))?;
        let path = workspace.join(LOCK_NAME);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(WorkspaceLock { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(format!(
                "workspace {} is locked by another invocation ({}); remove {} if stale",
                workspace.display(),
                std::fs::read_to_string(&path).unwrap_or_default().trim(),
                path.display()
            )),
            Err(e) => Err(format!("cannot create lock {}: {e}", path.display())),
        }
    }
}

impl Drop for WorkspaceLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}
