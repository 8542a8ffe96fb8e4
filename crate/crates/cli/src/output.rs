//! All-or-nothing output files: everything is written to temporaries next
//! to the targets and renamed into place only when the command succeeds.

use std::path::{Path, PathBuf};

use bgmoe::Result;

#[derive(Default)]
pub struct Outputs {
    pending: Vec<(PathBuf, PathBuf)>,
}

impl Outputs {
    pub fn add(&mut self, target: &Path, bytes: &[u8]) -> Result<()> {
        let name = target
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "output".into());
        let tmp = target.with_file_name(format!(".{name}.{}.partial", std::process::id()));
        std::fs::write(&tmp, bytes)?;
        self.pending.push((tmp, target.to_path_buf()));
        Ok(())
    }

    /// Renames every temporary into place. If one rename fails, targets
    /// already renamed are removed again along with the leftover temporaries.
    pub fn commit(mut self) -> Result<()> {
        let pending = std::mem::take(&mut self.pending);
        for (k, (tmp, target)) in pending.iter().enumerate() {
            if let Err(e) = std::fs::rename(tmp, target) {
                for (_, done) in &pending[..k] {
                    let _ = std::fs::remove_file(done);
                }
                for (rest, _) in &pending[k..] {
                    let _ = std::fs::remove_file(rest);
                }
                return Err(e.into());
            }
        }
        Ok(())
    }
}

impl Drop for Outputs {
    fn drop(&mut self) {
        for (tmp, _) in &self.pending {
            let _ = std::fs::remove_file(tmp);
        }
    }
}
