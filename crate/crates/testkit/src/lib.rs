//! Independent verification oracles for the attnmem toolkit.
//!
//! Everything here recomputes results the library already produces, but by a
//! deliberately different route: straight-line f64 arithmetic, naive loops,
//! full DP tables, and central finite differences. The test suites compare
//! library outputs against these references; nothing in this crate is used
//! by the library itself.

pub mod gradcheck;
pub mod reference;

use std::path::Path;

/// Order-independent digest of a directory tree: FNV-1a over the sorted
/// relative paths and file contents. Two trees with identical files hash
/// identically; any byte difference changes the digest.
pub fn dir_digest(root: &Path) -> std::io::Result<u64> {
    fn walk(root: &Path, dir: &Path, files: &mut Vec<(String, Vec<u8>)>) -> std::io::Result<()> {
        let mut entries: Vec<_> = std::fs::read_dir(dir)?.collect::<std::io::Result<_>>()?;
        entries.sort_by_key(|e| e.file_name());
        for e in entries {
            let path = e.path();
            if path.is_dir() {
                walk(root, &path, files)?;
            } else {
                let rel = path
                    .strip_prefix(root)
                    .expect("walk stays under root")
                    .to_string_lossy()
                    .into_owned();
                files.push((rel, std::fs::read(&path)?));
            }
        }
        Ok(())
    }
    let mut files = Vec::new();
    walk(root, root, &mut files)?;
    files.sort_by(|a, b| a.0.cmp(&b.0));
    let mut chunks: Vec<&[u8]> = Vec::with_capacity(files.len() * 2);
    for (name, bytes) in &files {
        chunks.push(name.as_bytes());
        chunks.push(bytes);
    }
    Ok(attnmem::util::fnv1a64(&chunks))
}
