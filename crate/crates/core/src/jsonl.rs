//! Append-only JSON-lines files shared by the response and embedding caches.

use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::marker::PhantomData;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

/// A JSON-lines file opened for appending. All appends go through one lock,
/// so concurrent writers never interleave partial lines.
#[derive(Debug)]
pub struct JsonlLog<T> {
    path: PathBuf,
    file: Mutex<File>,
    _record: PhantomData<fn(T)>,
}

impl<T: Serialize + DeserializeOwned> JsonlLog<T> {
    /// Opens (creating if needed) the file and returns the records already in it.
    ///
    /// A truncated final line, as left by an interrupted writer, is cut off
    /// the file; any other undecodable line is an error.
    pub fn open(path: impl AsRef<Path>) -> Result<(Self, Vec<T>)> {
        let path = path.as_ref().to_path_buf();
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let mut records = Vec::new();
        let mut keep_len = None;
        let mut needs_newline = false;
        if path.exists() {
            let content = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            let lines: Vec<&str> = content.split_inclusive('\n').collect();
            let mut offset = 0usize;
            for (i, line) in lines.iter().enumerate() {
                let body = line.trim_end_matches(['\n', '\r']);
                let is_last = i + 1 == lines.len();
                if !body.trim().is_empty() {
                    match serde_json::from_str(body) {
                        Ok(record) => records.push(record),
                        Err(_) if is_last && !line.ends_with('\n') => {
                            tracing::warn!(path = %path.display(), "dropping truncated final line");
                            keep_len = Some(offset as u64);
                            break;
                        }
                        Err(e) => {
                            return Err(Error::Parse {
                                line: i as u64 + 1,
                                message: format!("{}: {e}", path.display()),
                            })
                        }
                    }
                }
                if is_last && !line.ends_with('\n') {
                    needs_newline = true;
                }
                offset += line.len();
            }
        }
        let mut file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        if let Some(len) = keep_len {
            file.set_len(len).map_err(|e| Error::io(&path, e))?;
        }
        if needs_newline {
            file.write_all(b"\n").map_err(|e| Error::io(&path, e))?;
        }
        Ok((
            JsonlLog {
                path,
                file: Mutex::new(file),
                _record: PhantomData,
            },
            records,
        ))
    }

    pub fn append(&self, record: &T) -> Result<()> {
        let mut line = serde_json::to_vec(record)?;
        line.push(b'\n');
        let mut file = self.file.lock().unwrap_or_else(|p| p.into_inner());
        file.write_all(&line)
            .and_then(|_| file.flush())
            .map_err(|e| Error::io(&self.path, e))
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}
