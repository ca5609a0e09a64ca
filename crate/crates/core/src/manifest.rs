//! Line-oriented `key = value` manifests shared by the dataset and checkpoint
//! formats. Values are JSON so nested configs survive unchanged.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Debug, Default)]
pub struct Manifest {
    entries: Vec<(String, serde_json::Value)>,
}

impl Manifest {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set<T: Serialize>(&mut self, key: &str, value: &T) {
        let value = serde_json::to_value(value).expect("manifest values are plain data");
        self.entries.push((key.to_string(), value));
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for (key, value) in &self.entries {
            writeln!(out, "{key} = {value}").unwrap();
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.render()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<ParsedManifest> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        ParsedManifest::parse(path, &text)
    }
}

#[derive(Debug)]
pub struct ParsedManifest {
    path: PathBuf,
    entries: BTreeMap<String, (usize, serde_json::Value)>,
}

impl ParsedManifest {
    pub fn parse(path: &Path, text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (idx, line) in text.lines().enumerate() {
            let line_no = idx + 1;
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let (key, value) = trimmed.split_once('=').ok_or_else(|| Error::Parse {
                path: path.to_path_buf(),
                offset: format!("line {line_no}"),
                msg: "expected `key = value`".into(),
            })?;
            let value: serde_json::Value =
                serde_json::from_str(value.trim()).map_err(|e| Error::Parse {
                    path: path.to_path_buf(),
                    offset: format!("line {line_no}, column {}", e.column()),
                    msg: e.to_string(),
                })?;
            entries.insert(key.trim().to_string(), (line_no, value));
        }
        Ok(Self {
            path: path.to_path_buf(),
            entries,
        })
    }

    pub fn get<T: DeserializeOwned>(&self, key: &str) -> Result<T> {
        let (line_no, value) = self.entries.get(key).ok_or_else(|| Error::Parse {
            path: self.path.clone(),
            offset: "end of file".into(),
            msg: format!("missing key `{key}`"),
        })?;
        serde_json::from_value(value.clone()).map_err(|e| Error::Parse {
            path: self.path.clone(),
            offset: format!("line {line_no}"),
            msg: format!("bad value for `{key}`: {e}"),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Fails with a version error unless the `version` key equals `expected`.
    pub fn check_version(&self, expected: u32) -> Result<()> {
        let found: u32 = self.get("version")?;
        if found != expected {
            return Err(Error::Version {
                path: self.path.clone(),
                found,
                expected,
            });
        }
        Ok(())
    }
}

/// Appends `values` to `out` as little-endian f32.
pub fn push_f32(out: &mut Vec<u8>, values: impl IntoIterator<Item = f32>) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

/// Cursor over a little-endian f32 blob that reports truncation with the
/// byte offset at which the read failed.
pub struct F32Reader<'a> {
    path: &'a Path,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> F32Reader<'a> {
    pub fn new(path: &'a Path, bytes: &'a [u8]) -> Self {
        Self {
            path,
            bytes,
            pos: 0,
        }
    }

    pub fn take(&mut self, n: usize) -> Result<Vec<f32>> {
        let need = n * 4;
        if self.pos + need > self.bytes.len() {
            return Err(Error::Parse {
                path: self.path.to_path_buf(),
                offset: format!("byte {}", self.bytes.len()),
                msg: format!(
                    "truncated blob: needed {need} bytes at offset {}, {} available",
                    self.pos,
                    self.bytes.len() - self.pos
                ),
            });
        }
        let out = self.bytes[self.pos..self.pos + need]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        self.pos += need;
        Ok(out)
    }

    pub fn finish(self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(Error::Parse {
                path: self.path.to_path_buf(),
                offset: format!("byte {}", self.pos),
                msg: format!("{} trailing bytes", self.bytes.len() - self.pos),
            });
        }
        Ok(())
    }
}
