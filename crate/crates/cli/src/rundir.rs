//! Append-only output locations.

use std::fs;
use std::path::Path;

use anyhow::Context;

use crate::usage;

fn is_empty_dir(dir: &Path) -> anyhow::Result<bool> {
    Ok(fs::read_dir(dir)
        .with_context(|| format!("listing {}", dir.display()))?
        .next()
        .is_none())
}

/// Creates `dir`, or clears it when `force` is set and `marker` inside it
/// shows that one of our commands wrote it.
pub fn prepare_dir(dir: &Path, marker: &str, force: bool) -> anyhow::Result<()> {
    if dir.exists() && !is_empty_dir(dir)? {
        if !force {
            return Err(usage(format!(
                "{} already exists; pass --force to overwrite it",
                dir.display()
            )));
        }
        if !dir.join(marker).exists() {
            return Err(usage(format!(
                "{} is not empty and has no {marker}; refusing to delete it",
                dir.display()
            )));
        }
        fs::remove_dir_all(dir).with_context(|| format!("removing {}", dir.display()))?;
    }
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

/// Refuses to replace an existing file unless `force` is set.
pub fn check_new_file(path: &Path, force: bool) -> anyhow::Result<()> {
    if path.exists() && !force {
        return Err(usage(format!(
            "{} already exists; pass --force to overwrite it",
            path.display()
        )));
    }
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn existing_dirs_need_force_and_a_marker() {
        let tmp = tempfile::tempdir().unwrap();
        let d = tmp.path().join("run");
        prepare_dir(&d, "config.toml", false).unwrap();
        fs::write(d.join("config.toml"), "x").unwrap();
        assert!(prepare_dir(&d, "config.toml", false).is_err());
        prepare_dir(&d, "config.toml", true).unwrap();
        assert!(!d.join("config.toml").exists());

        fs::write(d.join("precious.txt"), "x").unwrap();
        assert!(prepare_dir(&d, "config.toml", true).is_err());
        assert!(d.join("precious.txt").exists());
    }
}
